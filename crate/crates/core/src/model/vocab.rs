use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub const UNKNOWN: usize = 0;
pub const EMPTY: usize = 1;

const UNKNOWN_TOKEN: &str = "<unk>";
const EMPTY_TOKEN: &str = "<empty>";

/// Token → row index map with reserved rows for unknown and empty values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(UNKNOWN_TOKEN);
        v.insert(EMPTY_TOKEN);
        v
    }
}

impl Vocabulary {
    /// Builds a vocabulary; tokens keep their first-seen order.
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Vocabulary::default();
        for t in tokens {
            v.insert(t);
        }
        v
    }

    fn insert(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            self.index.insert(token.to_string(), self.tokens.len());
            self.tokens.push(token.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Row of `token`; unknown tokens map to [`UNKNOWN`].
    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNKNOWN)
    }

    /// Row of an optional field; a missing value maps to [`EMPTY`].
    pub fn lookup_optional(&self, token: Option<&str>) -> usize {
        token.map_or(EMPTY, |t| self.lookup(t))
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    /// `token<TAB>index` lines.
    pub fn to_tsv(&self) -> String {
        self.tokens.iter().enumerate().map(|(i, t)| format!("{t}\t{i}\n")).collect()
    }

    pub fn from_tsv(text: &str, file: &str) -> Result<Self> {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for (n, line) in text.lines().enumerate() {
            let bad = |msg: &str| Error::Load {
                file: file.to_string(),
                line: n as u64 + 1,
                msg: msg.to_string(),
            };
            let (token, index) = line.rsplit_once('\t').ok_or_else(|| bad("expected token<TAB>index"))?;
            let index: usize = index.parse().map_err(|_| bad("malformed index"))?;
            if index != v.tokens.len() || v.index.contains_key(token) {
                return Err(bad("indices must be dense, ascending and unique"));
            }
            v.insert(token);
        }
        if v.token(UNKNOWN) != Some(UNKNOWN_TOKEN) || v.token(EMPTY) != Some(EMPTY_TOKEN) {
            return Err(Error::Load {
                file: file.to_string(),
                line: 1,
                msg: "missing reserved <unk>/<empty> rows".into(),
            });
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Vocabulary::from_tsv(&fs::read_to_string(path)?, &path.display().to_string())
    }
}
