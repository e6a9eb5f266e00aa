use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const SOS_ID: usize = 2;
pub const EOS_ID: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<sos>", "<eos>"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    /// Builds from non-reserved tokens already in id order.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens.iter().map(|t| t.as_ref().to_string()));
        let mut ids = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::invalid("vocab", format!("bad token {t:?}")));
            }
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::invalid("vocab", format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens: all, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn entries(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    /// Token strings for `ids`, skipping `<pad>`, `<sos>` and `<eos>`.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| !matches!(i, PAD_ID | SOS_ID | EOS_ID))
            .map(|&i| self.token(i).unwrap_or("<unk>").to_string())
            .collect()
    }
}

/// Frequency-descending, then lexicographic, after the reserved ids.
pub fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>]) -> Result<Vocab> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for seq in corpus {
        for t in seq {
            let t = t.as_ref();
            if RESERVED.contains(&t) {
                continue;
            }
            *counts.entry(t).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::invalid("build_vocab", "empty corpus"));
    }
    let mut ordered: Vec<(&str, usize)> = counts.into_iter().collect();
    ordered.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let tokens: Vec<&str> = ordered.into_iter().map(|(t, _)| t).collect();
    Vocab::from_tokens(&tokens)
}

/// `[<sos>, ids.., <eos>, <pad>..]` of length `max_len`, keeping the prefix of
/// over-long inputs. Returns the sequence and whether truncation happened.
pub fn encode_sequence<S: AsRef<str>>(vocab: &Vocab, tokens: &[S], max_len: usize) -> Result<(Vec<usize>, bool)> {
    if max_len < 2 {
        return Err(Error::invalid("encode_sequence", format!("max_len {max_len} < 2")));
    }
    let keep = tokens.len().min(max_len - 2);
    let mut out = Vec::with_capacity(max_len);
    out.push(SOS_ID);
    out.extend(tokens[..keep].iter().map(|t| vocab.id(t.as_ref())));
    out.push(EOS_ID);
    out.resize(max_len, PAD_ID);
    Ok((out, keep < tokens.len()))
}

/// Content ids of an encoded sequence: everything between `<sos>` and `<eos>`.
pub fn content_ids(encoded: &[usize]) -> &[usize] {
    let start = usize::from(encoded.first() == Some(&SOS_ID));
    let end = encoded[start..]
        .iter()
        .position(|&i| i == EOS_ID || i == PAD_ID)
        .map_or(encoded.len(), |p| p + start);
    &encoded[start..end]
}
