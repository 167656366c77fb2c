//! Corpora, token sequences and the conversation-to-LM sequence layout.
//!
//! A context/response pair becomes `context SEP response SEP`; only the
//! response tokens and the closing `SEP` are prediction targets. Style
//! sentences use an empty context: `SEP sentence SEP`.

mod batches;
mod synth;
mod vocab;

use std::fs;
use std::path::Path;

pub use batches::{negative_sample_batches, LabeledBatches, NegativeRatio};
pub use synth::{generate_synthetic, generate_test_pool, SyntheticCorpus, SyntheticStyleSpec, TestPool};
pub use vocab::{Vocab, PAD, PAD_TOKEN, SEP, SEP_TOKEN, UNK, UNK_TOKEN};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvPair {
    context: Vec<usize>,
    response: Vec<usize>,
}

impl ConvPair {
    pub fn new(context: Vec<usize>, response: Vec<usize>) -> Result<Self> {
        check_plain("context", &context)?;
        check_plain("response", &response)?;
        Ok(ConvPair { context, response })
    }

    pub fn context(&self) -> &[usize] {
        &self.context
    }

    pub fn response(&self) -> &[usize] {
        &self.response
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StyleSentence {
    tokens: Vec<usize>,
}

impl StyleSentence {
    pub fn new(tokens: Vec<usize>) -> Result<Self> {
        check_plain("style sentence", &tokens)?;
        Ok(StyleSentence { tokens })
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }
}

fn check_plain(what: &str, ids: &[usize]) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::Data(format!("{what} is empty")));
    }
    if ids.iter().any(|&t| t == PAD || t == SEP) {
        return Err(Error::Data(format!("{what} contains PAD or SEP")));
    }
    Ok(())
}

/// A token sequence with a per-position target mask.
///
/// `loss_mask[i]` marks `ids[i]` as a prediction target (predicted from
/// `ids[..i]`). Targets are exactly positions `context_len..ids.len()`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LMSequence {
    pub ids: Vec<usize>,
    pub loss_mask: Vec<bool>,
    pub context_len: usize,
}

impl LMSequence {
    fn with_prefix(ids: Vec<usize>, context_len: usize) -> Self {
        let loss_mask = (0..ids.len()).map(|i| i >= context_len).collect();
        LMSequence {
            ids,
            loss_mask,
            context_len,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_targets(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }

    /// The response part including the closing `SEP`.
    pub fn targets(&self) -> &[usize] {
        &self.ids[self.context_len..]
    }
}

/// `context + [SEP] + response + [SEP]`, targets on the response and final `SEP`.
pub fn make_lm_sequence(pair: &ConvPair) -> LMSequence {
    let mut ids = Vec::with_capacity(pair.context.len() + pair.response.len() + 2);
    ids.extend_from_slice(&pair.context);
    ids.push(SEP);
    let context_len = ids.len();
    ids.extend_from_slice(&pair.response);
    ids.push(SEP);
    LMSequence::with_prefix(ids, context_len)
}

/// `[SEP] + tokens + [SEP]`; every token after the leading separator is a target.
pub fn make_style_sequence(tokens: &[usize]) -> LMSequence {
    let mut ids = Vec::with_capacity(tokens.len() + 2);
    ids.push(SEP);
    ids.extend_from_slice(tokens);
    ids.push(SEP);
    LMSequence::with_prefix(ids, 1)
}

/// Scores token sequences with a style probability in (0, 1).
pub trait StyleScorer {
    fn style_scores(&self, seqs: &[&[usize]]) -> Result<Vec<f64>>;
}

/// Keeps exactly the pairs whose response scores strictly above `threshold`.
pub fn filter_by_intensity<S: StyleScorer + ?Sized>(
    pairs: &[ConvPair],
    scorer: &S,
    threshold: f64,
) -> Result<Vec<ConvPair>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("intensity threshold {threshold} outside [0, 1]")));
    }
    let responses: Vec<&[usize]> = pairs.iter().map(|p| p.response()).collect();
    let scores = scorer.style_scores(&responses)?;
    Ok(pairs
        .iter()
        .zip(scores)
        .filter(|(_, s)| *s > threshold)
        .map(|(p, _)| p.clone())
        .collect())
}

/// Raw `context<TAB>response` lines; blank lines are skipped.
pub fn read_conv_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conv_lines(&text).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_conv_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (c, r) = line
            .split_once('\t')
            .ok_or_else(|| Error::Data(format!("line {}: expected context<TAB>response", n + 1)))?;
        if c.trim().is_empty() || r.trim().is_empty() {
            return Err(Error::Data(format!("line {}: empty context or response", n + 1)));
        }
        out.push((c.trim().to_string(), r.trim().to_string()));
    }
    Ok(out)
}

pub fn read_style_file(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

pub fn write_conv_file(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (c, r) in pairs {
        text.push_str(c);
        text.push('\t');
        text.push_str(r);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_style_file(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn encode_pairs(raw: &[(String, String)], vocab: &Vocab) -> Result<Vec<ConvPair>> {
    raw.iter()
        .map(|(c, r)| ConvPair::new(vocab.encode(c), vocab.encode(r)))
        .collect()
}

pub fn encode_sentences(raw: &[String], vocab: &Vocab) -> Result<Vec<StyleSentence>> {
    raw.iter().map(|s| StyleSentence::new(vocab.encode(s))).collect()
}
