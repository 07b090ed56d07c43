//! Closed word-level vocabulary with mask/pad/unk specials.

use std::collections::HashMap;

use crate::corpus::{MASK_TOKEN, PAD_TOKEN, UNK_TOKEN};
use crate::paradigm::Article;

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds the vocabulary from an iterator of corpus tokens in a fixed
    /// order: specials first, then tokens by first appearance. Panics if
    /// any article surface is missing from the corpus.
    pub fn build<'a>(corpus_tokens: impl Iterator<Item = &'a str>) -> Vocabulary {
        let mut tokens = Vec::new();
        let mut index = HashMap::new();
        let push = |tok: &str, tokens: &mut Vec<String>, index: &mut HashMap<String, u32>| {
            if !index.contains_key(tok) {
                index.insert(tok.to_string(), tokens.len() as u32);
                tokens.push(tok.to_string());
            }
        };
        for special in [PAD_TOKEN, MASK_TOKEN, UNK_TOKEN] {
            push(special, &mut tokens, &mut index);
        }
        for tok in corpus_tokens {
            push(tok, &mut tokens, &mut index);
        }
        let vocab = Vocabulary { tokens, index };
        for art in Article::ALL {
            assert!(
                vocab.id_of(art.as_str()).is_some(),
                "article {art} missing from corpus vocabulary"
            );
        }
        vocab
    }

    /// Rebuilds a vocabulary from an explicit token table (checkpoint
    /// loading). The specials must occupy their fixed slots.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocabulary, String> {
        if tokens.len() < 3
            || tokens[0] != PAD_TOKEN
            || tokens[1] != MASK_TOKEN
            || tokens[2] != UNK_TOKEN
        {
            return Err("vocabulary table does not start with the special tokens".to_string());
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(format!("duplicate vocabulary token {t:?}"));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad(&self) -> u32 {
        0
    }

    pub fn mask(&self) -> u32 {
        1
    }

    pub fn unk(&self) -> u32 {
        2
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens
            .iter()
            .map(|t| self.id_of(t).unwrap_or(self.unk()))
            .collect()
    }

    /// Ids of all casing variants of an article present in the vocabulary
    /// ("der" and "Der" are treated as the same article).
    pub fn article_variant_ids(&self, article: Article) -> Vec<u32> {
        [article.as_str(), article.capitalized()]
            .into_iter()
            .filter_map(|s| self.id_of(s))
            .collect()
    }
}
