use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
/// Turn separator; closes every context and every response.
pub const SEP: usize = 2;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const SEP_TOKEN: &str = "<sep>";

const SPECIALS: [&str; 3] = [PAD_TOKEN, UNK_TOKEN, SEP_TOKEN];
const HEADER: &str = "vocab-v1";

/// Whitespace word vocabulary with reserved `PAD`, `UNK` and `SEP` ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocab {
    /// Counts whitespace tokens over all lines and keeps those seen at least
    /// `min_freq` times. Ids are assigned by descending frequency, ties broken
    /// lexicographically, after the three specials.
    pub fn build<S: AsRef<str>>(lines: &[S], min_freq: usize) -> Result<Vocab> {
        if lines.is_empty() {
            return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
        }
        if min_freq == 0 {
            return Err(Error::Config("min_freq must be at least 1".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for line in lines {
            for tok in line.as_ref().split_whitespace() {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_freq && !SPECIALS.contains(&t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Vocab::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()))
    }

    /// Specials followed by `tokens` in order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Vocab> {
        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens);
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (i, t) in id_to_token.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Data(format!("invalid vocabulary token {t:?}")));
            }
            if token_to_id.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocab {
            token_to_id,
            id_to_token,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|t| self.id(t).unwrap_or(UNK)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        Ok(self.decode_tokens(ids)?.join(" "))
    }

    pub fn decode_tokens(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&i| {
                self.token(i)
                    .map(str::to_string)
                    .ok_or_else(|| Error::Data(format!("token id {i} outside vocabulary of {}", self.len())))
            })
            .collect()
    }

    /// `vocab-v1 <|V|>` header then one `id<TAB>token` line per entry.
    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER} {}\n", self.len());
        for (i, t) in self.id_to_token.iter().enumerate() {
            out.push_str(&format!("{i}\t{t}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Vocab> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("empty vocabulary file".into()))?;
        let size: usize = match header.split_once(' ') {
            Some((HEADER, n)) => n
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("bad vocabulary size in header {header:?}")))?,
            _ => {
                return Err(Error::Data(format!(
                    "expected `{HEADER} <size>` header, got {header:?}"
                )))
            }
        };
        let mut tokens = Vec::with_capacity(size);
        for (n, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let (id, tok) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("vocabulary line {}: missing tab", n + 2)))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::Data(format!("vocabulary line {}: bad id {id:?}", n + 2)))?;
            if id != tokens.len() {
                return Err(Error::Data(format!("vocabulary line {}: id {id} out of order", n + 2)));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() != size || tokens.len() < SPECIALS.len() || tokens[..3] != SPECIALS {
            return Err(Error::Data(
                "vocabulary size or special tokens do not match header".into(),
            ));
        }
        Vocab::from_tokens(tokens.into_iter().skip(SPECIALS.len()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::from_text(&text)
    }

    /// Cheap fingerprint used to check that checkpoints share a vocabulary.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.id_to_token {
            for b in t.bytes().chain(std::iter::once(b'\n')) {
                h ^= b as u64;
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frequency_cutoff_maps_rare_tokens_to_unk() {
        let v = Vocab::build(&["a b", "a c"], 2).unwrap();
        assert_eq!(v.len(), 4);
        assert!(v.id("a").is_some());
        assert_eq!(v.encode("b c a"), vec![UNK, UNK, v.id("a").unwrap()]);
    }

    #[test]
    fn single_token_corpus() {
        let v = Vocab::build(&["a"], 1).unwrap();
        assert_eq!(v.len(), 1 + SPECIALS.len());
    }

    #[test]
    fn rejects_zero_min_freq_and_empty_corpus() {
        assert!(matches!(Vocab::build(&["a"], 0), Err(Error::Config(_))));
        let empty: [&str; 0] = [];
        assert!(matches!(Vocab::build(&empty, 1), Err(Error::Config(_))));
    }

    #[test]
    fn specials_are_distinct_and_fixed() {
        let v = Vocab::build(&["x y"], 1).unwrap();
        assert_eq!(v.id(PAD_TOKEN), Some(PAD));
        assert_eq!(v.id(UNK_TOKEN), Some(UNK));
        assert_eq!(v.id(SEP_TOKEN), Some(SEP));
    }

    #[test]
    fn decode_out_of_range_fails() {
        let v = Vocab::build(&["x y"], 1).unwrap();
        assert!(v.decode(&[v.len()]).is_err());
    }

    #[test]
    fn text_format_round_trip_and_header() {
        let v = Vocab::build(&["the cat sat", "the dog"], 1).unwrap();
        let text = v.to_text();
        assert!(text.starts_with("vocab-v1 7\n"));
        assert_eq!(Vocab::from_text(&text).unwrap(), v);
        assert!(Vocab::from_text("vocab-v2 3\n").is_err());
    }

    proptest! {
        #[test]
        fn decode_encode_is_identity_on_known_text(words in proptest::collection::vec("[a-z]{1,6}", 1..20)) {
            let text = words.join(" ");
            let v = Vocab::build(&[text.as_str()], 1).unwrap();
            prop_assert_eq!(v.decode(&v.encode(&text)).unwrap(), text);
        }
    }
}
