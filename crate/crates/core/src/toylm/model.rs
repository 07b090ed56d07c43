//! Forward pass and exact reverse-mode backward pass for the tiny
//! transformer (pre-LN blocks, learned positions, GELU feed-forward).
//!
//! Sequences are processed unpadded, one instance at a time: positions past
//! the sentence simply do not participate, which is what makes scoring
//! invariant to padding. Cross-entropy losses are means over the requested
//! positions. All loops run in a fixed order, so gradients are bit-stable.

pub use super::params::ModelGrads;

use super::params::{Mat, ModelParams};
use super::{ModelCore, ModelKind};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_prime(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// In-place stable softmax of a full row.
pub(crate) fn softmax_inplace(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// y[t] = x[t] W + b for row-major W (in x out).
fn linear_fwd(x: &Mat, w: &Mat, b: &[f64]) -> Mat {
    debug_assert_eq!(x.cols, w.rows);
    let mut y = Mat::zeros(x.rows, w.cols);
    for t in 0..x.rows {
        let xr = x.row(t);
        let yr = y.row_mut(t);
        yr.copy_from_slice(b);
        for (i, &xi) in xr.iter().enumerate() {
            let wr = w.row(i);
            for (o, &wio) in wr.iter().enumerate() {
                yr[o] += xi * wio;
            }
        }
    }
    y
}

/// Accumulates dW += x^T dy, db += sum_t dy[t], and returns dx = dy W^T.
fn linear_bwd(x: &Mat, w: &Mat, dy: &Mat, dw: &mut Mat, db: &mut [f64]) -> Mat {
    let mut dx = Mat::zeros(x.rows, x.cols);
    for t in 0..x.rows {
        let xr = x.row(t);
        let dyr = dy.row(t);
        for (o, &g) in dyr.iter().enumerate() {
            db[o] += g;
        }
        let dxr = dx.row_mut(t);
        for i in 0..x.cols {
            let wr = w.row(i);
            let dwr = dw.row_mut(i);
            let xi = xr[i];
            let mut acc = 0.0;
            for (o, &g) in dyr.iter().enumerate() {
                dwr[o] += xi * g;
                acc += g * wr[o];
            }
            dxr[i] = acc;
        }
    }
    dx
}

struct LnFwd {
    xhat: Mat,
    inv_std: Vec<f64>,
    out: Mat,
}

fn layer_norm_fwd(x: &Mat, g: &[f64], b: &[f64]) -> LnFwd {
    let d = x.cols;
    let mut xhat = Mat::zeros(x.rows, d);
    let mut out = Mat::zeros(x.rows, d);
    let mut inv_std = vec![0.0; x.rows];
    for t in 0..x.rows {
        let xr = x.row(t);
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std[t] = inv;
        let xh = xhat.row_mut(t);
        let o = out.row_mut(t);
        for i in 0..d {
            xh[i] = (xr[i] - mean) * inv;
            o[i] = g[i] * xh[i] + b[i];
        }
    }
    LnFwd { xhat, inv_std, out }
}

fn layer_norm_bwd(
    dout: &Mat,
    cache: &LnFwd,
    g: &[f64],
    dg: &mut [f64],
    db: &mut [f64],
) -> Mat {
    let d = dout.cols as f64;
    let mut dx = Mat::zeros(dout.rows, dout.cols);
    for t in 0..dout.rows {
        let doutr = dout.row(t);
        let xh = cache.xhat.row(t);
        let inv = cache.inv_std[t];
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for i in 0..dout.cols {
            dg[i] += doutr[i] * xh[i];
            db[i] += doutr[i];
            let dxh = doutr[i] * g[i];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[i];
        }
        let dxr = dx.row_mut(t);
        for i in 0..dout.cols {
            let dxh = doutr[i] * g[i];
            dxr[i] = inv * (dxh - sum_dxhat / d - xh[i] * sum_dxhat_xhat / d);
        }
    }
    dx
}

struct LayerFwd {
    ln1: LnFwd,
    q: Mat,
    k: Mat,
    v: Mat,
    att: Vec<Mat>, // per head, rows = queries
    ctx: Mat,
    ln2: LnFwd,
    f1: Mat,
    u: Mat,
}

/// Full forward cache for one unpadded sequence.
pub struct Forward {
    pub ids: Vec<u32>,
    layers: Vec<LayerFwd>,
    lnf: LnFwd,
}

impl Forward {
    pub fn seq_len(&self) -> usize {
        self.ids.len()
    }

    /// Final hidden state (after the last layer norm) at one position.
    pub fn hidden(&self, pos: usize) -> &[f64] {
        self.lnf.out.row(pos)
    }
}

impl ModelCore {
    pub fn forward(&self, ids: &[u32]) -> Forward {
        let arch = self.arch;
        let t_len = ids.len();
        assert!(t_len > 0 && t_len <= arch.max_len, "sequence length {t_len}");
        let d = arch.d_model;
        let heads = arch.n_heads;
        let hd = arch.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let causal = self.kind == ModelKind::Decoder;

        let mut x = Mat::zeros(t_len, d);
        for (t, &id) in ids.iter().enumerate() {
            let tok = self.params.tok.row(id as usize);
            let pos = self.params.pos.row(t);
            let xr = x.row_mut(t);
            for i in 0..d {
                xr[i] = tok[i] + pos[i];
            }
        }
        let mut layers = Vec::with_capacity(arch.n_layers);
        for l in &self.params.layers {
            let ln1 = layer_norm_fwd(&x, &l.ln1_g, &l.ln1_b);
            let q = linear_fwd(&ln1.out, &l.wq, &l.bq);
            let k = linear_fwd(&ln1.out, &l.wk, &l.bk);
            let v = linear_fwd(&ln1.out, &l.wv, &l.bv);

            let mut att = Vec::with_capacity(heads);
            let mut ctx = Mat::zeros(t_len, d);
            for h in 0..heads {
                let off = h * hd;
                let mut a = Mat::zeros(t_len, t_len);
                for i in 0..t_len {
                    let limit = if causal { i + 1 } else { t_len };
                    let qi = &q.row(i)[off..off + hd];
                    let ar = a.row_mut(i);
                    for (j, av) in ar.iter_mut().enumerate().take(limit) {
                        let kj = &k.row(j)[off..off + hd];
                        *av = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    }
                    softmax_inplace(&mut ar[..limit]);
                    for av in ar.iter_mut().skip(limit) {
                        *av = 0.0;
                    }
                }
                for i in 0..t_len {
                    let limit = if causal { i + 1 } else { t_len };
                    let ar = a.row(i);
                    let cr = ctx.row_mut(i);
                    for j in 0..limit {
                        let vj = &v.row(j)[off..off + hd];
                        let w = ar[j];
                        for (c, &vv) in cr[off..off + hd].iter_mut().zip(vj) {
                            *c += w * vv;
                        }
                    }
                }
                att.push(a);
            }

            let o = linear_fwd(&ctx, &l.wo, &l.bo);
            let mut x_mid = x.clone();
            for t in 0..t_len {
                let xr = x_mid.row_mut(t);
                let or = o.row(t);
                for i in 0..d {
                    xr[i] += or[i];
                }
            }

            let ln2 = layer_norm_fwd(&x_mid, &l.ln2_g, &l.ln2_b);
            let f1 = linear_fwd(&ln2.out, &l.w1, &l.b1);
            let mut u = Mat::zeros(t_len, arch.d_ff);
            for t in 0..t_len {
                let fr = f1.row(t);
                let ur = u.row_mut(t);
                for i in 0..arch.d_ff {
                    ur[i] = gelu(fr[i]);
                }
            }
            let f2 = linear_fwd(&u, &l.w2, &l.b2);
            let mut x_out = x_mid.clone();
            for t in 0..t_len {
                let xr = x_out.row_mut(t);
                let fr = f2.row(t);
                for i in 0..d {
                    xr[i] += fr[i];
                }
            }

            layers.push(LayerFwd {
                ln1,
                q,
                k,
                v,
                att,
                ctx,
                ln2,
                f1,
                u,
            });
            x = x_out;
        }

        let lnf = layer_norm_fwd(&x, &self.params.lnf_g, &self.params.lnf_b);
        Forward {
            ids: ids.to_vec(),
            layers,
            lnf,
        }
    }

    /// Vocabulary logits at one position.
    pub fn logits_at(&self, fwd: &Forward, pos: usize) -> Vec<f64> {
        let y = fwd.lnf.out.row(pos);
        let mut logits = self.params.out_b.clone();
        for (i, &yi) in y.iter().enumerate() {
            let wr = self.params.out_w.row(i);
            for (o, &w) in wr.iter().enumerate() {
                logits[o] += yi * w;
            }
        }
        logits
    }

    /// Softmax distribution over the vocabulary at one position.
    pub fn probs_at(&self, fwd: &Forward, pos: usize) -> Vec<f64> {
        let mut logits = self.logits_at(fwd, pos);
        softmax_inplace(&mut logits);
        logits
    }

    /// Mean cross-entropy toward `targets` at `positions`.
    pub fn loss(&self, ids: &[u32], positions: &[usize], targets: &[u32]) -> f64 {
        assert_eq!(positions.len(), targets.len());
        assert!(!positions.is_empty());
        let fwd = self.forward(ids);
        let mut total = 0.0;
        for (&pos, &target) in positions.iter().zip(targets) {
            let probs = self.probs_at(&fwd, pos);
            total -= probs[target as usize].max(f64::MIN_POSITIVE).ln();
        }
        total / positions.len() as f64
    }

    /// Mean cross-entropy and its exact gradient with respect to every
    /// parameter group.
    pub fn loss_and_grad(
        &self,
        ids: &[u32],
        positions: &[usize],
        targets: &[u32],
    ) -> (f64, ModelGrads) {
        assert_eq!(positions.len(), targets.len());
        assert!(!positions.is_empty());
        let fwd = self.forward(ids);
        let n = positions.len() as f64;
        let mut loss = 0.0;
        let mut dlogit_rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(positions.len());
        for (&pos, &target) in positions.iter().zip(targets) {
            let probs = self.probs_at(&fwd, pos);
            loss -= probs[target as usize].max(f64::MIN_POSITIVE).ln();
            let mut dl = probs;
            dl[target as usize] -= 1.0;
            for v in dl.iter_mut() {
                *v /= n;
            }
            dlogit_rows.push((pos, dl));
        }
        let grads = self.backward(&fwd, &dlogit_rows);
        (loss / n, grads)
    }

    /// Backward pass from per-position logit gradients.
    pub fn backward(&self, fwd: &Forward, dlogit_rows: &[(usize, Vec<f64>)]) -> ModelGrads {
        let t_len = fwd.seq_len();
        let d = self.arch.d_model;
        let p: &ModelParams = &self.params;
        let mut g = p.zeros_like();

        // Output projection.
        let mut dy = Mat::zeros(t_len, d);
        for (pos, dlog) in dlogit_rows {
            let yrow = fwd.lnf.out.row(*pos);
            for (o, &gl) in dlog.iter().enumerate() {
                g.out_b[o] += gl;
            }
            let dyr = dy.row_mut(*pos);
            for i in 0..d {
                let wr = p.out_w.row(i);
                let dwr = g.out_w.row_mut(i);
                let yi = yrow[i];
                let mut acc = 0.0;
                for (o, &gl) in dlog.iter().enumerate() {
                    dwr[o] += yi * gl;
                    acc += gl * wr[o];
                }
                dyr[i] += acc;
            }
        }

        self.backward_core(fwd, dy, &mut g);
        g
    }

    /// Backward pass from gradients of the final hidden states (the output
    /// of the last layer norm), bypassing the vocabulary projection. Used by
    /// the article head.
    pub fn backward_from_hidden(
        &self,
        fwd: &Forward,
        d_hidden_rows: &[(usize, Vec<f64>)],
    ) -> ModelGrads {
        let t_len = fwd.seq_len();
        let d = self.arch.d_model;
        let mut g = self.params.zeros_like();
        let mut dy = Mat::zeros(t_len, d);
        for (pos, dh) in d_hidden_rows {
            let dyr = dy.row_mut(*pos);
            for i in 0..d {
                dyr[i] += dh[i];
            }
        }
        self.backward_core(fwd, dy, &mut g);
        g
    }

    /// Shared backward from dL/d(final hidden states).
    fn backward_core(&self, fwd: &Forward, dy: Mat, g: &mut ModelGrads) {
        let arch = self.arch;
        let t_len = fwd.seq_len();
        let d = arch.d_model;
        let heads = arch.n_heads;
        let hd = arch.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let causal = self.kind == ModelKind::Decoder;
        let p: &ModelParams = &self.params;

        // Final layer norm.
        let mut dx = layer_norm_bwd(&dy, &fwd.lnf, &p.lnf_g, &mut g.lnf_g, &mut g.lnf_b);

        // Layers in reverse.
        for li in (0..arch.n_layers).rev() {
            let lf = &fwd.layers[li];
            let lp = &p.layers[li];
            let lg = &mut g.layers[li];

            // x_out = x_mid + f2(u), u = gelu(f1), f1 = W1 ln2(x_mid) + b1.
            let df2 = &dx; // gradient wrt f2 equals gradient wrt x_out
            let du = linear_bwd(&lf.u, &lp.w2, df2, &mut lg.w2, &mut lg.b2);
            let mut df1 = Mat::zeros(t_len, arch.d_ff);
            for t in 0..t_len {
                let dur = du.row(t);
                let fr = lf.f1.row(t);
                let dfr = df1.row_mut(t);
                for i in 0..arch.d_ff {
                    dfr[i] = dur[i] * gelu_prime(fr[i]);
                }
            }
            let dln2out = linear_bwd(&lf.ln2.out, &lp.w1, &df1, &mut lg.w1, &mut lg.b1);
            let dx_mid_ln = layer_norm_bwd(&dln2out, &lf.ln2, &lp.ln2_g, &mut lg.ln2_g, &mut lg.ln2_b);
            let mut dx_mid = dx; // residual path
            for t in 0..t_len {
                let a = dx_mid.row_mut(t);
                let b = dx_mid_ln.row(t);
                for i in 0..d {
                    a[i] += b[i];
                }
            }

            // x_mid = x_in + Wo ctx + bo.
            let dctx = linear_bwd(&lf.ctx, &lp.wo, &dx_mid, &mut lg.wo, &mut lg.bo);

            let mut dq = Mat::zeros(t_len, d);
            let mut dk = Mat::zeros(t_len, d);
            let mut dv = Mat::zeros(t_len, d);
            for h in 0..heads {
                let off = h * hd;
                let a = &lf.att[h];
                for i in 0..t_len {
                    let limit = if causal { i + 1 } else { t_len };
                    let dctx_i = &dctx.row(i)[off..off + hd];
                    let ar = a.row(i);
                    // datt and dv.
                    let mut datt = vec![0.0; limit];
                    for (j, dj) in datt.iter_mut().enumerate() {
                        let vj = &lf.v.row(j)[off..off + hd];
                        *dj = dctx_i.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
                    }
                    for j in 0..limit {
                        let dvr = &mut dv.row_mut(j)[off..off + hd];
                        let w = ar[j];
                        for (dvv, &dc) in dvr.iter_mut().zip(dctx_i) {
                            *dvv += w * dc;
                        }
                    }
                    // Softmax backward.
                    let dot: f64 = datt.iter().zip(ar).map(|(da, &av)| da * av).sum();
                    for (j, da) in datt.iter().enumerate() {
                        let ds = ar[j] * (da - dot) * scale;
                        let kj = &lf.k.row(j)[off..off + hd];
                        let qi = &lf.q.row(i)[off..off + hd];
                        let dqr = &mut dq.row_mut(i)[off..off + hd];
                        for (x, &kv) in dqr.iter_mut().zip(kj) {
                            *x += ds * kv;
                        }
                        let dkr = &mut dk.row_mut(j)[off..off + hd];
                        for (x, &qv) in dkr.iter_mut().zip(qi) {
                            *x += ds * qv;
                        }
                    }
                }
            }

            let mut dln1out = linear_bwd(&lf.ln1.out, &lp.wq, &dq, &mut lg.wq, &mut lg.bq);
            let dk_in = linear_bwd(&lf.ln1.out, &lp.wk, &dk, &mut lg.wk, &mut lg.bk);
            let dv_in = linear_bwd(&lf.ln1.out, &lp.wv, &dv, &mut lg.wv, &mut lg.bv);
            for t in 0..t_len {
                let a = dln1out.row_mut(t);
                let b = dk_in.row(t);
                let c = dv_in.row(t);
                for i in 0..d {
                    a[i] += b[i] + c[i];
                }
            }
            let dx_in_ln = layer_norm_bwd(&dln1out, &lf.ln1, &lp.ln1_g, &mut lg.ln1_g, &mut lg.ln1_b);
            // Residual: gradient flows to x_in both directly and through ln1.
            dx = dx_mid;
            for t in 0..t_len {
                let a = dx.row_mut(t);
                let b = dx_in_ln.row(t);
                for i in 0..d {
                    a[i] += b[i];
                }
            }
        }

        // Embeddings.
        for (t, &id) in fwd.ids.iter().enumerate() {
            let dr = dx.row(t);
            let tokr = g.tok.row_mut(id as usize);
            for i in 0..d {
                tokr[i] += dr[i];
            }
            let posr = g.pos.row_mut(t);
            for i in 0..d {
                posr[i] += dr[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::toylm::{Arch, ModelCore, ModelKind, Vocabulary};

    fn test_core(kind: ModelKind, seed: u64) -> ModelCore {
        let vocab = Vocabulary::build(
            ["der", "die", "das", "den", "dem", "des", "Hund", "steht", "heute", "."]
                .into_iter(),
        );
        let arch = Arch {
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ff: 24,
            max_len: 12,
        };
        let mut rng = Rng::from_seed(seed);
        let params = ModelParams::init(arch, vocab.len(), &mut rng);
        ModelCore {
            arch,
            vocab,
            params,
            kind,
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let core = test_core(ModelKind::Encoder, 3);
        let ids = core.vocab.encode(
            &["der", "Hund", "steht", "heute", "."]
                .map(str::to_string),
        );
        let fwd = core.forward(&ids);
        for pos in 0..ids.len() {
            let probs = core.probs_at(&fwd, pos);
            let sum: f64 = probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "pos {pos} sums to {sum}");
            assert!(probs.iter().all(|p| p.is_finite() && *p >= 0.0));
        }
    }

    /// Central finite differences against the analytic gradient for every
    /// parameter group, both attention patterns.
    #[test]
    fn gradients_match_finite_differences() {
        for kind in [ModelKind::Encoder, ModelKind::Decoder] {
            let mut core = test_core(kind, 7);
            let ids = core.vocab.encode(
                &["der", "Hund", "steht", "heute", "der", "."]
                    .map(str::to_string),
            );
            let positions = [0usize, 4];
            let targets = [core.vocab.id_of("die").unwrap(), core.vocab.id_of("dem").unwrap()];
            let (_, grads) = core.loss_and_grad(&ids, &positions, &targets);

            let names: Vec<String> = core
                .params
                .entries()
                .into_iter()
                .map(|(n, _, _)| n)
                .collect();
            let mut rng = Rng::from_seed(99);
            let step = 1e-5;
            for name in names {
                for _ in 0..3 {
                    let len = core.params.param(&name).unwrap().len();
                    let idx = rng.below(len);
                    let analytic = grads.param(&name).unwrap()[idx];
                    let orig = core.params.param(&name).unwrap()[idx];
                    core.params.param_mut(&name).unwrap()[idx] = orig + step;
                    let lp = core.loss(&ids, &positions, &targets);
                    core.params.param_mut(&name).unwrap()[idx] = orig - step;
                    let lm = core.loss(&ids, &positions, &targets);
                    core.params.param_mut(&name).unwrap()[idx] = orig;
                    let fd = (lp - lm) / (2.0 * step);
                    let denom = analytic.abs().max(fd.abs());
                    if denom > 1e-7 {
                        let rel = (analytic - fd).abs() / denom;
                        assert!(
                            rel <= 1e-4,
                            "{kind:?} {name}[{idx}]: analytic {analytic:e} vs fd {fd:e} (rel {rel:e})"
                        );
                    } else {
                        assert!(
                            (analytic - fd).abs() <= 1e-9,
                            "{kind:?} {name}[{idx}]: near-zero mismatch {analytic:e} vs {fd:e}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_is_bit_stable() {
        let core = test_core(ModelKind::Encoder, 11);
        let ids = core.vocab.encode(&["die", "Hund", "steht", "."].map(str::to_string));
        let positions = [0usize];
        let targets = [core.vocab.id_of("das").unwrap()];
        let (l1, g1) = core.loss_and_grad(&ids, &positions, &targets);
        let (l2, g2) = core.loss_and_grad(&ids, &positions, &targets);
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1.checksum(), g2.checksum());
    }

    #[test]
    fn causal_attention_ignores_the_future() {
        let core = test_core(ModelKind::Decoder, 5);
        let a = core.vocab.encode(&["der", "Hund", "steht", "heute"].map(str::to_string));
        let mut b = a.clone();
        *b.last_mut().unwrap() = core.vocab.id_of(".").unwrap();
        let fa = core.forward(&a);
        let fb = core.forward(&b);
        // Logits at position 1 must agree (only tokens 0..=1 visible).
        let la = core.logits_at(&fa, 1);
        let lb = core.logits_at(&fb, 1);
        assert_eq!(la, lb);
        // Encoder differs: full context.
        let enc = test_core(ModelKind::Encoder, 5);
        let ea = enc.logits_at(&enc.forward(&a), 1);
        let eb = enc.logits_at(&enc.forward(&b), 1);
        assert_ne!(ea, eb);
    }
}
