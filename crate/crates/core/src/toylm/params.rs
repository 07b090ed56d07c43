//! Named parameter storage for the tiny transformer.
//!
//! All tensors are flat `Vec<f64>` (row-major for matrices). Parameter
//! groups are addressed by stable names like "layers.1.ffn.w1", which is
//! what checkpoints, Adam state and parameter slices key on. Gradients
//! reuse the same structure via [`zeros_like`](ModelParams::zeros_like).

use crate::hash::Fnv1a;
use crate::rng::Rng;

use super::Arch;

/// Row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Mat {
        Mat {
            rows,
            cols,
            data: (0..rows * cols).map(|_| std * rng.gaussian()).collect(),
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    pub wq: Mat,
    pub bq: Vec<f64>,
    pub wk: Mat,
    pub bk: Vec<f64>,
    pub wv: Mat,
    pub bv: Vec<f64>,
    pub wo: Mat,
    pub bo: Vec<f64>,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tok: Mat,
    pub pos: Mat,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Vec<f64>,
    pub lnf_b: Vec<f64>,
    pub out_w: Mat,
    pub out_b: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type ModelGrads = ModelParams;

impl ModelParams {
    pub fn init(arch: Arch, vocab_size: usize, rng: &mut Rng) -> ModelParams {
        arch.validate();
        let d = arch.d_model;
        let std = 0.02;
        let layer = |rng: &mut Rng| LayerParams {
            ln1_g: vec![1.0; d],
            ln1_b: vec![0.0; d],
            wq: Mat::gaussian(d, d, std, rng),
            bq: vec![0.0; d],
            wk: Mat::gaussian(d, d, std, rng),
            bk: vec![0.0; d],
            wv: Mat::gaussian(d, d, std, rng),
            bv: vec![0.0; d],
            wo: Mat::gaussian(d, d, std, rng),
            bo: vec![0.0; d],
            ln2_g: vec![1.0; d],
            ln2_b: vec![0.0; d],
            w1: Mat::gaussian(d, arch.d_ff, std, rng),
            b1: vec![0.0; arch.d_ff],
            w2: Mat::gaussian(arch.d_ff, d, std, rng),
            b2: vec![0.0; d],
        };
        ModelParams {
            tok: Mat::gaussian(vocab_size, d, std, rng),
            pos: Mat::gaussian(arch.max_len, d, std, rng),
            layers: (0..arch.n_layers).map(|_| layer(rng)).collect(),
            lnf_g: vec![1.0; d],
            lnf_b: vec![0.0; d],
            out_w: Mat::gaussian(d, vocab_size, std, rng),
            out_b: vec![0.0; vocab_size],
        }
    }

    /// All-zero parameters with the layout implied by (arch, vocab size).
    pub fn zeros(arch: Arch, vocab_size: usize) -> ModelParams {
        arch.validate();
        let d = arch.d_model;
        let layer = || LayerParams {
            ln1_g: vec![0.0; d],
            ln1_b: vec![0.0; d],
            wq: Mat::zeros(d, d),
            bq: vec![0.0; d],
            wk: Mat::zeros(d, d),
            bk: vec![0.0; d],
            wv: Mat::zeros(d, d),
            bv: vec![0.0; d],
            wo: Mat::zeros(d, d),
            bo: vec![0.0; d],
            ln2_g: vec![0.0; d],
            ln2_b: vec![0.0; d],
            w1: Mat::zeros(d, arch.d_ff),
            b1: vec![0.0; arch.d_ff],
            w2: Mat::zeros(arch.d_ff, d),
            b2: vec![0.0; d],
        };
        ModelParams {
            tok: Mat::zeros(vocab_size, d),
            pos: Mat::zeros(arch.max_len, d),
            layers: (0..arch.n_layers).map(|_| layer()).collect(),
            lnf_g: vec![0.0; d],
            lnf_b: vec![0.0; d],
            out_w: Mat::zeros(d, vocab_size),
            out_b: vec![0.0; vocab_size],
        }
    }

    pub fn zeros_like(&self) -> ModelParams {
        let zl = |l: &LayerParams| LayerParams {
            ln1_g: vec![0.0; l.ln1_g.len()],
            ln1_b: vec![0.0; l.ln1_b.len()],
            wq: Mat::zeros(l.wq.rows, l.wq.cols),
            bq: vec![0.0; l.bq.len()],
            wk: Mat::zeros(l.wk.rows, l.wk.cols),
            bk: vec![0.0; l.bk.len()],
            wv: Mat::zeros(l.wv.rows, l.wv.cols),
            bv: vec![0.0; l.bv.len()],
            wo: Mat::zeros(l.wo.rows, l.wo.cols),
            bo: vec![0.0; l.bo.len()],
            ln2_g: vec![0.0; l.ln2_g.len()],
            ln2_b: vec![0.0; l.ln2_b.len()],
            w1: Mat::zeros(l.w1.rows, l.w1.cols),
            b1: vec![0.0; l.b1.len()],
            w2: Mat::zeros(l.w2.rows, l.w2.cols),
            b2: vec![0.0; l.b2.len()],
        };
        ModelParams {
            tok: Mat::zeros(self.tok.rows, self.tok.cols),
            pos: Mat::zeros(self.pos.rows, self.pos.cols),
            layers: self.layers.iter().map(zl).collect(),
            lnf_g: vec![0.0; self.lnf_g.len()],
            lnf_b: vec![0.0; self.lnf_b.len()],
            out_w: Mat::zeros(self.out_w.rows, self.out_w.cols),
            out_b: vec![0.0; self.out_b.len()],
        }
    }

    /// (name, flat data, (rows, cols)) for every parameter group, in a fixed
    /// order. Vectors report shape (1, len).
    pub fn entries(&self) -> Vec<(String, &[f64], (usize, usize))> {
        let mut v: Vec<(String, &[f64], (usize, usize))> = Vec::new();
        let m = |m: &'_ Mat| (m.rows, m.cols);
        v.push(("tok_emb".into(), &self.tok.data, m(&self.tok)));
        v.push(("pos_emb".into(), &self.pos.data, m(&self.pos)));
        for (i, l) in self.layers.iter().enumerate() {
            v.push((format!("layers.{i}.ln1.g"), &l.ln1_g, (1, l.ln1_g.len())));
            v.push((format!("layers.{i}.ln1.b"), &l.ln1_b, (1, l.ln1_b.len())));
            v.push((format!("layers.{i}.attn.wq"), &l.wq.data, m(&l.wq)));
            v.push((format!("layers.{i}.attn.bq"), &l.bq, (1, l.bq.len())));
            v.push((format!("layers.{i}.attn.wk"), &l.wk.data, m(&l.wk)));
            v.push((format!("layers.{i}.attn.bk"), &l.bk, (1, l.bk.len())));
            v.push((format!("layers.{i}.attn.wv"), &l.wv.data, m(&l.wv)));
            v.push((format!("layers.{i}.attn.bv"), &l.bv, (1, l.bv.len())));
            v.push((format!("layers.{i}.attn.wo"), &l.wo.data, m(&l.wo)));
            v.push((format!("layers.{i}.attn.bo"), &l.bo, (1, l.bo.len())));
            v.push((format!("layers.{i}.ln2.g"), &l.ln2_g, (1, l.ln2_g.len())));
            v.push((format!("layers.{i}.ln2.b"), &l.ln2_b, (1, l.ln2_b.len())));
            v.push((format!("layers.{i}.ffn.w1"), &l.w1.data, m(&l.w1)));
            v.push((format!("layers.{i}.ffn.b1"), &l.b1, (1, l.b1.len())));
            v.push((format!("layers.{i}.ffn.w2"), &l.w2.data, m(&l.w2)));
            v.push((format!("layers.{i}.ffn.b2"), &l.b2, (1, l.b2.len())));
        }
        v.push(("final_ln.g".into(), &self.lnf_g, (1, self.lnf_g.len())));
        v.push(("final_ln.b".into(), &self.lnf_b, (1, self.lnf_b.len())));
        v.push(("out.w".into(), &self.out_w.data, m(&self.out_w)));
        v.push(("out.b".into(), &self.out_b, (1, self.out_b.len())));
        v
    }

    /// Mutable variant of [`entries`](Self::entries), same order.
    pub fn entries_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut v: Vec<(String, &mut Vec<f64>)> = Vec::new();
        v.push(("tok_emb".into(), &mut self.tok.data));
        v.push(("pos_emb".into(), &mut self.pos.data));
        for (i, l) in self.layers.iter_mut().enumerate() {
            v.push((format!("layers.{i}.ln1.g"), &mut l.ln1_g));
            v.push((format!("layers.{i}.ln1.b"), &mut l.ln1_b));
            v.push((format!("layers.{i}.attn.wq"), &mut l.wq.data));
            v.push((format!("layers.{i}.attn.bq"), &mut l.bq));
            v.push((format!("layers.{i}.attn.wk"), &mut l.wk.data));
            v.push((format!("layers.{i}.attn.bk"), &mut l.bk));
            v.push((format!("layers.{i}.attn.wv"), &mut l.wv.data));
            v.push((format!("layers.{i}.attn.bv"), &mut l.bv));
            v.push((format!("layers.{i}.attn.wo"), &mut l.wo.data));
            v.push((format!("layers.{i}.attn.bo"), &mut l.bo));
            v.push((format!("layers.{i}.ln2.g"), &mut l.ln2_g));
            v.push((format!("layers.{i}.ln2.b"), &mut l.ln2_b));
            v.push((format!("layers.{i}.ffn.w1"), &mut l.w1.data));
            v.push((format!("layers.{i}.ffn.b1"), &mut l.b1));
            v.push((format!("layers.{i}.ffn.w2"), &mut l.w2.data));
            v.push((format!("layers.{i}.ffn.b2"), &mut l.b2));
        }
        v.push(("final_ln.g".into(), &mut self.lnf_g));
        v.push(("final_ln.b".into(), &mut self.lnf_b));
        v.push(("out.w".into(), &mut self.out_w.data));
        v.push(("out.b".into(), &mut self.out_b));
        v
    }

    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.entries()
            .into_iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, d, _)| d)
    }

    pub fn param_shape(&self, name: &str) -> Option<(usize, usize)> {
        self.entries()
            .into_iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, _, s)| s)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        self.entries_mut()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d)
    }

    /// Total number of scalar parameters.
    pub fn n_params(&self) -> usize {
        self.entries().iter().map(|(_, d, _)| d.len()).sum()
    }

    /// FNV-1a over the little-endian bytes of every group in entry order.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv1a::new();
        for (name, data, _) in self.entries() {
            h.update(name.as_bytes());
            for x in data {
                h.update(&x.to_le_bytes());
            }
        }
        h.finish()
    }

    /// Elementwise `self += a * other` (shapes must match).
    pub fn axpy(&mut self, a: f64, other: &ModelParams) {
        let theirs = other.entries();
        for ((name, dst), (oname, src, _)) in self.entries_mut().into_iter().zip(theirs) {
            debug_assert_eq!(name, oname);
            debug_assert_eq!(dst.len(), src.len());
            for (d, s) in dst.iter_mut().zip(src) {
                *d += a * s;
            }
        }
    }
}
