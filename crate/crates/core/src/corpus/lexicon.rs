//! Built-in closed-vocabulary German lexicon: per-gender nouns, per-case
//! sentence frames and the determiner/pronoun blocklist.
//!
//! Frames replace parser annotation with ground truth: each frame fixes its
//! case unambiguously (a dative-governing preposition, an accusative verb,
//! subject position, ...), every noun has exactly one gender, and no frame
//! contains a definite-article surface form outside the article slot.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::hash::hash_bytes;
use crate::paradigm::{Case, Gender};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Noun {
    pub gender: Gender,
    pub base: String,
    /// Genitive singular surface (equals `base` for feminine nouns).
    pub genitive: String,
}

/// One template position of a frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum FrameTok {
    Lit(String),
    /// The definite-article slot; capitalized when sentence-initial.
    Art,
    /// The noun slot (genitive frames pick the noun's genitive surface).
    Noun,
    /// A filler drawn from the pool with this index.
    Fill(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Frame {
    /// `None` marks a grammar-neutral frame without article or noun slots.
    pub case: Option<Case>,
    pub toks: Vec<FrameTok>,
}

impl Frame {
    pub fn fill_slots(&self) -> Vec<usize> {
        self.toks
            .iter()
            .filter_map(|t| match t {
                FrameTok::Fill(p) => Some(*p),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lexicon {
    pub nouns: Vec<Noun>,
    pub frames: Vec<Frame>,
    pub neutral_frames: Vec<Frame>,
    pub pools: Vec<Vec<String>>,
    /// Lowercased tokens banned from the grammar-neutral dataset: definite
    /// and indefinite articles with inflections, common determiners, and
    /// third-person pronouns.
    pub blocklist: BTreeSet<String>,
}

impl Lexicon {
    pub fn nouns_of(&self, gender: Gender) -> Vec<&Noun> {
        self.nouns.iter().filter(|n| n.gender == gender).collect()
    }

    pub fn frames_of(&self, case: Case) -> Vec<&Frame> {
        self.frames
            .iter()
            .filter(|f| f.case == Some(case))
            .collect()
    }

    /// Stable content hash recorded in dataset manifests.
    pub fn content_hash(&self) -> u64 {
        let json = serde_json::to_string(self).expect("lexicon serializes");
        hash_bytes(json.as_bytes())
    }

    pub fn builtin() -> Lexicon {
        builtin_lexicon()
    }
}

fn noun(gender: Gender, base: &str, genitive: &str) -> Noun {
    Noun {
        gender,
        base: base.to_string(),
        genitive: genitive.to_string(),
    }
}

/// Shorthand frame constructor: "@" = article slot, "#" = noun slot,
/// "{0}".."{9}" = filler pools, anything else a literal token.
fn frame(case: Option<Case>, spec: &str) -> Frame {
    let toks = spec
        .split_whitespace()
        .map(|w| match w {
            "@" => FrameTok::Art,
            "#" => FrameTok::Noun,
            _ if w.starts_with('{') && w.ends_with('}') => {
                let idx: usize = w[1..w.len() - 1].parse().expect("pool index");
                FrameTok::Fill(idx)
            }
            _ => FrameTok::Lit(w.to_string()),
        })
        .collect();
    Frame { case, toks }
}

fn builtin_lexicon() -> Lexicon {
    use Case::*;
    use Gender::*;

    let nouns = vec![
        noun(Masc, "Hund", "Hundes"),
        noun(Masc, "Tisch", "Tisches"),
        noun(Masc, "Baum", "Baumes"),
        noun(Masc, "Stuhl", "Stuhls"),
        noun(Masc, "Schrank", "Schrankes"),
        noun(Masc, "Spiegel", "Spiegels"),
        noun(Masc, "Teppich", "Teppichs"),
        noun(Masc, "Koffer", "Koffers"),
        noun(Masc, "Becher", "Bechers"),
        noun(Masc, "Pinsel", "Pinsels"),
        noun(Masc, "Eimer", "Eimers"),
        noun(Masc, "Krug", "Kruges"),
        noun(Neut, "Haus", "Hauses"),
        noun(Neut, "Buch", "Buches"),
        noun(Neut, "Fenster", "Fensters"),
        noun(Neut, "Bild", "Bildes"),
        noun(Neut, "Regal", "Regals"),
        noun(Neut, "Kissen", "Kissens"),
        noun(Neut, "Messer", "Messers"),
        noun(Neut, "Paket", "Paketes"),
        noun(Neut, "Heft", "Heftes"),
        noun(Neut, "Brett", "Brettes"),
        noun(Neut, "Glas", "Glases"),
        noun(Neut, "Sofa", "Sofas"),
        noun(Fem, "Lampe", "Lampe"),
        noun(Fem, "Katze", "Katze"),
        noun(Fem, "Blume", "Blume"),
        noun(Fem, "Tasche", "Tasche"),
        noun(Fem, "Kiste", "Kiste"),
        noun(Fem, "Flasche", "Flasche"),
        noun(Fem, "Mappe", "Mappe"),
        noun(Fem, "Decke", "Decke"),
        noun(Fem, "Leiter", "Leiter"),
        noun(Fem, "Tasse", "Tasse"),
        noun(Fem, "Schachtel", "Schachtel"),
        noun(Fem, "Vase", "Vase"),
    ];

    let pools = vec![
        // 0: time
        vec![
            "heute", "morgens", "abends", "mittags", "nachmittags", "vormittags", "nachts",
            "werktags",
        ],
        // 1: degree
        vec![
            "wirklich",
            "ziemlich",
            "besonders",
            "ausgesprochen",
            "erstaunlich",
            "ungewöhnlich",
            "erkennbar",
            "spürbar",
        ],
        // 2: manner
        vec![
            "ruhig",
            "geduldig",
            "sorgfältig",
            "aufmerksam",
            "gelassen",
            "gründlich",
            "ordentlich",
            "behutsam",
        ],
        // 3: comment
        vec![
            "offenbar",
            "anscheinend",
            "vermutlich",
            "sicherlich",
            "tatsächlich",
            "angeblich",
            "offensichtlich",
            "bekanntlich",
        ],
    ]
    .into_iter()
    .map(|p: Vec<&str>| p.into_iter().map(str::to_string).collect())
    .collect();

    // Subject position fixes the nominative, transitive verbs and "ohne"
    // the accusative, dative verbs and prepositions the dative, genitive
    // prepositions (with the genitive noun surface) the genitive.
    let frames = vec![
        frame(Some(Nom), "@ # steht {0} {1} stabil und sicher an gewohnter Stelle ."),
        frame(Some(Nom), "@ # bleibt {3} {0} noch recht lange dort stehen ."),
        frame(Some(Nom), "Offenbar glänzt @ # {0} {1} hell und fällt sofort auf ."),
        frame(Some(Nom), "Vermutlich wackelt @ # {0} {1} stark und wird bald repariert ."),
        frame(Some(Acc), "Wir beobachten @ # {0} {1} genau und sehr geduldig ."),
        frame(Some(Acc), "Man sucht @ # {3} schon seit Stunden hinter alten Kisten ."),
        frame(Some(Acc), "Ohne @ # geht es {0} leider überhaupt nicht weiter ."),
        frame(Some(Acc), "Wir brauchen @ # {0} {1} dringend im hinteren Nebenzimmer ."),
        frame(Some(Dat), "Mit @ # arbeiten wir {0} {1} gern und meistens lange ."),
        frame(Some(Dat), "Wir helfen @ # {0} {1} geduldig und bleiben dabei ruhig ."),
        frame(Some(Dat), "Von @ # berichten wir {3} erst nach reiflicher Überlegung ."),
        frame(Some(Dat), "Bei @ # bleiben wir {0} {1} lange und warten geduldig ."),
        frame(Some(Gen), "Wegen @ # bleiben wir {0} ausnahmsweise lieber noch zuhause ."),
        frame(Some(Gen), "Trotz @ # beginnen wir {0} {1} pünktlich und gut gelaunt ."),
        frame(Some(Gen), "Statt @ # nehmen wir {0} lieber etwas ganz anderes mit ."),
        frame(Some(Gen), "Anstelle @ # wählen wir {3} {1} gern etwas Neues aus ."),
    ];

    let neutral_frames = vec![
        frame(None, "Heute arbeiten wir {1} lange und {2} an neuen Aufgaben ."),
        frame(None, "Man wartet {0} {1} geduldig auf bessere Nachrichten aus fernen Regionen ."),
        frame(None, "Ich lese {0} {1} gern in alten Büchern über ferne Länder ."),
        frame(None, "Wir singen {0} {1} laut und üben danach noch ziemlich lange ."),
        frame(None, "Morgens laufen wir {1} schnell und {2} durch taufrische Wiesen ."),
        frame(None, "Man kocht hier {0} {1} sorgfältig und würzt eher sparsam ."),
        frame(None, "Wir rechnen {0} {1} sorgfältig nach und notieren Ergebnisse ordentlich ."),
        frame(None, "Abends packen wir {2} zusammen und planen {1} entspannt kommende Ausflüge ."),
    ];

    let blocklist: BTreeSet<String> = [
        // Definite articles.
        "der", "die", "das", "den", "dem", "des",
        // Indefinite articles and negation, with inflections.
        "ein", "eine", "einen", "einem", "einer", "eines", "kein", "keine", "keinen", "keinem",
        "keiner", "keines",
        // Demonstratives and other determiners.
        "dieser", "diese", "dieses", "diesen", "diesem", "jener", "jene", "jenes", "jenen",
        "jenem", "welcher", "welche", "welches", "welchen", "welchem", "solche", "solcher",
        "solches", "solchen", "solchem", "jeder", "jede", "jedes", "jeden", "jedem", "alle",
        "allen", "aller", "viele", "vielen", "vieler", "manche", "mancher", "manchen", "manches",
        // Possessive determiners.
        "mein", "meine", "meinen", "meinem", "meiner", "meines", "dein", "deine", "deinen",
        "deinem", "deiner", "deines", "sein", "seine", "seinen", "seinem", "seiner", "seines",
        "ihr", "ihre", "ihren", "ihrem", "ihrer", "ihres", "unser", "unsere", "unseren",
        "unserem", "unserer", "unseres", "euer", "eure", "euren", "eurem", "eurer", "eures",
        // Third-person pronouns.
        "er", "sie", "es", "ihn", "ihm", "ihnen", "sich",
    ]
    .into_iter()
    .map(str::to_string)
    .collect();

    Lexicon {
        nouns,
        frames,
        neutral_frames,
        pools,
        blocklist,
    }
}
