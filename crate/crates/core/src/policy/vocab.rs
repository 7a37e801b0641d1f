use serde::{Deserialize, Serialize};

/// Token id. Id 0 is always the end-of-completion token.
pub type TokenId = u32;

pub const END: TokenId = 0;

const AGENT_WORDS: [&str; 23] = [
    "<think>",
    "</think>",
    "<action>",
    "</action>",
    "up",
    "down",
    "left",
    "right",
    " ",
    "\n",
    "go",
    "move",
    "to",
    "the",
    "goal",
    "hole",
    "wall",
    "apple",
    "safe",
    "avoid",
    "i",
    "next",
    ".",
];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("duplicate token {0:?}")]
    Duplicate(String),
    #[error("empty token strings are reserved for END")]
    EmptyToken,
    #[error("text cannot be segmented into vocabulary tokens at byte {0}")]
    Unencodable(usize),
    #[error("token id {0} outside a vocabulary of {1}")]
    OutOfRange(TokenId, usize),
}

/// Ordered token strings. `END` decodes to the empty string.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary of `END` followed by `words`.
    pub fn new<S: Into<String>>(words: impl IntoIterator<Item = S>) -> Result<Self, VocabError> {
        let mut all = vec![String::new()];
        for w in words {
            let w = w.into();
            if w.is_empty() {
                return Err(VocabError::EmptyToken);
            }
            if all.contains(&w) {
                return Err(VocabError::Duplicate(w));
            }
            all.push(w);
        }
        Ok(Vocabulary { words: all })
    }

    /// The 24-token agent vocabulary: END, the four tags, the four
    /// directions and fifteen filler tokens.
    pub fn agent() -> Self {
        Vocabulary::new(AGENT_WORDS).expect("agent vocabulary is valid")
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.words[id as usize]
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.words
            .iter()
            .position(|w| w == word)
            .map(|i| i as TokenId)
    }

    pub fn check(&self, id: TokenId) -> Result<(), VocabError> {
        if (id as usize) < self.words.len() {
            Ok(())
        } else {
            Err(VocabError::OutOfRange(id, self.words.len()))
        }
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter().map(|&i| self.token(i)).collect()
    }

    /// Fewest-token segmentation of `text`.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, VocabError> {
        let bytes = text.as_bytes();
        let n = bytes.len();
        // best[i] = (token count, last token) for the prefix of length i
        let mut best: Vec<Option<(usize, TokenId)>> = vec![None; n + 1];
        best[0] = Some((0, END));
        for i in 0..n {
            let Some((count, _)) = best[i] else { continue };
            for (id, w) in self.words.iter().enumerate().skip(1) {
                let w = w.as_bytes();
                if bytes[i..].starts_with(w) {
                    let j = i + w.len();
                    if best[j].is_none_or(|(c, _)| c > count + 1) {
                        best[j] = Some((count + 1, id as TokenId));
                    }
                }
            }
        }
        if best[n].is_none() {
            let stuck = (0..=n).rev().find(|&i| best[i].is_some()).unwrap_or(0);
            return Err(VocabError::Unencodable(stuck));
        }
        let mut out = Vec::new();
        let mut i = n;
        while i > 0 {
            let (_, id) = best[i].expect("reachable prefix");
            out.push(id);
            i -= self.words[id as usize].len();
        }
        out.reverse();
        Ok(out)
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = VocabError;

    fn try_from(mut words: Vec<String>) -> Result<Self, Self::Error> {
        if words.first().is_some_and(String::is_empty) {
            words.remove(0);
        }
        Vocabulary::new(words)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}
