use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::TaskSpec;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Lower-cases and splits on whitespace; every other non-alphanumeric
/// character becomes a token of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() || c == '_' {
            cur.push(c);
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Frequency-ranked word vocabulary with four fixed special tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..4] != SPECIALS {
            return Err(Error::Data("vocabulary must start with [PAD] [UNK] [CLS] [SEP]".into()));
        }
        let v = Self::from(tokens);
        if v.index.len() != v.tokens.len() {
            return Err(Error::Data("vocabulary contains duplicate tokens".into()));
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn ids(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }
}

/// Keeps the most frequent tokens (ties broken lexicographically) so that
/// the vocabulary, specials included, has at most `max_size` entries.
pub fn build_vocab<S: AsRef<str>>(corpora: &[S], max_size: usize) -> Result<Vocab> {
    if max_size < SPECIALS.len() {
        return Err(Error::Config(format!(
            "max_size {max_size} cannot hold the 4 special tokens"
        )));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in corpora {
        for tok in tokenize(text.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    for s in SPECIALS {
        counts.remove(&s.to_lowercase());
    }
    if counts.is_empty() {
        return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = SPECIALS
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(t, _)| t))
        .take(max_size)
        .collect();
    Vocab::from_tokens(tokens)
}

/// Encoded example: `[CLS] a [SEP]` or `[CLS] a [SEP] b [SEP]`, right
/// padded to `max_len`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoded {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
}

impl Encoded {
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Tokenises and frames one example. Overlong inputs lose body tokens
/// from the end of the longer segment first; the special tokens are kept.
pub fn encode(spec: &TaskSpec, text_a: &str, text_b: Option<&str>, vocab: &Vocab, max_len: usize) -> Encoded {
    assert!(max_len >= 3, "max_len must leave room for [CLS] and [SEP]");
    let mut a = vocab.ids(text_a);
    let mut b = match (spec.formulation.is_pairwise(), text_b) {
        (true, Some(t)) => Some(vocab.ids(t)),
        (true, None) => Some(Vec::new()),
        (false, _) => None,
    };
    let specials = if b.is_some() { 3 } else { 2 };
    let budget = max_len.saturating_sub(specials);
    loop {
        let total = a.len() + b.as_ref().map_or(0, Vec::len);
        if total <= budget {
            break;
        }
        match &mut b {
            Some(bb) if bb.len() > a.len() => {
                bb.pop();
            }
            _ if !a.is_empty() => {
                a.pop();
            }
            Some(bb) => {
                bb.pop();
            }
            None => break,
        }
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend(a);
    ids.push(SEP);
    if let Some(bb) = b {
        ids.extend(bb);
        ids.push(SEP);
    }
    ids.truncate(max_len);
    let real = ids.len();
    ids.resize(max_len, PAD);
    let mask = (0..max_len).map(|i| i < real).collect();
    Encoded { ids, mask }
}
