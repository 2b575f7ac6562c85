use sha2::{Digest, Sha256};
use std::collections::HashMap;

pub const EOS_TOKEN: &str = "<eos>";

const TOKENS: [&str; 18] = [
    "a", "of", "not", "red", "blue", "green", "yellow", "square", "triangle", "circle", "left", "right", "above",
    "below", "this", "is", "photo", EOS_TOKEN,
];

/// Closed token inventory with contiguous indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::standard()
    }
}

impl Vocabulary {
    /// Scene words, "a", "of", "not", the zero-shot prompt words and EOS.
    pub fn standard() -> Self {
        Self::from_tokens(TOKENS.iter().map(|t| t.to_string()).collect()).expect("standard tokens are unique")
    }

    /// `None` if a token repeats or EOS is missing.
    pub fn from_tokens(tokens: Vec<String>) -> Option<Self> {
        let index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        (index.len() == tokens.len() && index.contains_key(EOS_TOKEN)).then_some(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn eos(&self) -> usize {
        self.index[EOS_TOKEN]
    }

    /// Hex SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.tokens.join("\n").as_bytes());
        crate::io::hex(&digest)
    }
}
