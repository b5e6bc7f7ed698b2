//! Word-level vocabulary and prompt encoding.
//!
//! Tokenization is lowercase whitespace splitting with UNK for anything
//! outside the vocabulary. Reserved tokens occupy the fixed ids 0..=4.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const SEP: u32 = 3;
pub const EOS: u32 = 4;
pub const RESERVED: u32 = 5;

const RESERVED_TOKENS: [&str; 5] = ["<pad>", "<unk>", "<bos>", "<sep>", "<eos>"];

/// Argument stance. Inputs accept a few aliases; the canonical words
/// "support" / "counter" are what gets tokenized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stance {
    #[serde(alias = "supporting", alias = "pro")]
    Support,
    #[serde(alias = "countering", alias = "counter-argument", alias = "con")]
    Counter,
}

impl Stance {
    pub fn word(self) -> &'static str {
        match self {
            Stance::Support => "support",
            Stance::Counter => "counter",
        }
    }

    pub fn parse(s: &str) -> Result<Stance> {
        match s.to_lowercase().as_str() {
            "support" | "supporting" | "pro" => Ok(Stance::Support),
            "counter" | "countering" | "counter-argument" | "con" => Ok(Stance::Counter),
            other => Err(Error::Data(format!("unknown stance '{other}'"))),
        }
    }
}

/// Lowercases and splits on whitespace.
pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect()
}

fn vocab_repr_tokens(v: &Vocabulary) -> Vec<String> {
    v.id_to_token[RESERVED as usize..].to_vec()
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            tokens: vocab_repr_tokens(&v),
        }
    }
}

impl TryFrom<VocabRepr> for Vocabulary {
    type Error = Error;
    fn try_from(repr: VocabRepr) -> Result<Vocabulary> {
        Vocabulary::from_tokens(repr.tokens)
    }
}

/// A bijection between non-reserved word tokens and dense ids in
/// `[RESERVED, vocab_size)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from a corpus of texts. Tokens are sorted so the
    /// result does not depend on text order; the stance words are always
    /// included.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vocabulary {
        let mut set: BTreeSet<String> = BTreeSet::new();
        set.insert("support".to_string());
        set.insert("counter".to_string());
        for text in texts {
            for w in words(text) {
                set.insert(w);
            }
        }
        Vocabulary::from_tokens(set.into_iter().collect()).expect("sorted unique tokens")
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Vocabulary> {
        let mut id_to_token: Vec<String> =
            RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut token_to_id = HashMap::new();
        for token in tokens {
            if token_to_id.contains_key(&token) {
                return Err(Error::Data(format!("duplicate vocabulary token '{token}'")));
            }
            token_to_id.insert(token.clone(), id_to_token.len() as u32);
            id_to_token.push(token);
        }
        Ok(Vocabulary {
            id_to_token,
            token_to_id,
        })
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    /// Id for a (lowercased) word; UNK when out of vocabulary.
    pub fn id(&self, word: &str) -> u32 {
        self.token_to_id.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    /// Encodes free text as word ids (no specials added).
    pub fn encode_words(&self, text: &str) -> Vec<u32> {
        words(text).iter().map(|w| self.id(w)).collect()
    }

    /// Encodes an argument: word ids followed by EOS.
    pub fn encode_argument(&self, text: &str) -> Vec<u32> {
        let mut ids = self.encode_words(text);
        ids.push(EOS);
        ids
    }

    /// Renders ids back to words, skipping reserved tokens.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| id >= RESERVED)
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Token ids for `BOS topic SEP stance SEP`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedPrompt {
    pub ids: Vec<u32>,
    pub stance: Stance,
}

impl EncodedPrompt {
    pub fn new(vocab: &Vocabulary, topic: &str, stance: Stance) -> EncodedPrompt {
        let mut ids = vec![BOS];
        ids.extend(vocab.encode_words(topic));
        ids.push(SEP);
        ids.push(vocab.id(stance.word()));
        ids.push(SEP);
        EncodedPrompt { ids, stance }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false // always carries BOS and two SEPs
    }
}
