//! Style-consistency, relevance and diversity metrics over tokenized text.
//!
//! Text is compared as lowercased whitespace tokens.

mod report;
mod syntax;


use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::corpus::StyleScorer;
use crate::error::{Error, Result};

pub use report::{evaluate, evaluate_sweep, outputs_to_tsv, ContextOutput, EvalInputs, MetricReport, TestSet};
pub use syntax::{classify_sentence_type, SentenceType};

/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn kl2(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).log2())
        .sum()
}

/// Jensen-Shannon divergence in bits, in `[0, 1]`.
pub fn jensen_shannon(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let j = 0.5 * kl2(p, &m) + 0.5 * kl2(q, &m);
    Ok(j.clamp(0.0, 1.0))
}

/// Pooled 1- to 4-gram counts at or above a cutoff, in lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NgramLexicon {
    entries: Vec<(Vec<String>, u64)>,
    cutoff: u64,
    index: HashMap<Vec<String>, usize>,
}

pub const MAX_ORDER: usize = 4;
pub const DEFAULT_CUTOFF: u64 = 10;

fn for_each_ngram(tokens: &[String], max_order: usize, mut f: impl FnMut(&[String])) {
    for n in 1..=max_order {
        for w in tokens.windows(n) {
            f(w);
        }
    }
}

impl NgramLexicon {
    fn from_entries(entries: Vec<(Vec<String>, u64)>, cutoff: u64) -> Self {
        let index = entries.iter().enumerate().map(|(i, (g, _))| (g.clone(), i)).collect();
        NgramLexicon { entries, cutoff, index }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn cutoff(&self) -> u64 {
        self.cutoff
    }

    pub fn entries(&self) -> &[(Vec<String>, u64)] {
        &self.entries
    }

    pub fn position(&self, ngram: &[String]) -> Option<usize> {
        self.index.get(ngram).copied()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("lexicon-v1 {} {}\n", self.cutoff, self.entries.len());
        for (g, c) in &self.entries {
            s.push_str(&format!("{}\t{c}\n", g.join(" ")));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        let parts: Vec<&str> = header.split(' ').collect();
        let (cutoff, n) = match parts.as_slice() {
            ["lexicon-v1", c, n] => (
                c.parse()
                    .map_err(|_| Error::Data(format!("bad lexicon cutoff {c:?}")))?,
                n.parse::<usize>()
                    .map_err(|_| Error::Data(format!("bad lexicon size {n:?}")))?,
            ),
            _ => return Err(Error::Data(format!("not a lexicon-v1 file (header {header:?})"))),
        };
        let mut entries = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            let (g, c) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("lexicon line {}: expected ngram<TAB>count", i + 2)))?;
            let c: u64 = c
                .parse()
                .map_err(|_| Error::Data(format!("lexicon line {}: bad count {c:?}", i + 2)))?;
            entries.push((g.split(' ').map(str::to_string).collect::<Vec<_>>(), c));
        }
        if entries.len() != n {
            return Err(Error::Data(format!(
                "lexicon header says {n} entries, found {}",
                entries.len()
            )));
        }
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Data(
                "lexicon entries are not in strictly increasing order".into(),
            ));
        }
        Ok(NgramLexicon::from_entries(entries, cutoff))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        NgramLexicon::from_text(&text)
    }
}

/// Counts every 1- to 4-gram over both corpora and keeps those seen at
/// least `cutoff` times.
pub fn build_ngram_lexicon(conv: &[Vec<String>], style: &[Vec<String>], cutoff: u64) -> Result<NgramLexicon> {
    if conv.is_empty() && style.is_empty() {
        return Err(Error::Data("lexicon needs a non-empty corpus".into()));
    }
    let mut counts: BTreeMap<Vec<String>, u64> = BTreeMap::new();
    for s in conv.iter().chain(style) {
        for_each_ngram(s, MAX_ORDER, |g| {
            if let Some(c) = counts.get_mut(g) {
                *c += 1;
            } else {
                counts.insert(g.to_vec(), 1);
            }
        });
    }
    let entries = counts.into_iter().filter(|&(_, c)| c >= cutoff).collect();
    Ok(NgramLexicon::from_entries(entries, cutoff))
}

/// Normalized lexicon frequencies of `texts`; `None` when no lexicon n-gram occurs.
pub fn style_distribution(texts: &[Vec<String>], lexicon: &NgramLexicon) -> Option<Vec<f64>> {
    let mut counts = vec![0u64; lexicon.len()];
    for t in texts {
        for_each_ngram(t, MAX_ORDER, |g| {
            if let Some(i) = lexicon.position(g) {
                counts[i] += 1;
            }
        });
    }
    let total: u64 = counts.iter().sum();
    (total > 0).then(|| counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Lexical JSD. `degenerate` marks a side without any lexicon n-gram; the
/// value is then 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LexicalJsd {
    pub value: f64,
    pub degenerate: bool,
}

pub fn lexical_jsd(responses: &[Vec<String>], style: &[Vec<String>], lexicon: &NgramLexicon) -> Result<LexicalJsd> {
    match (
        style_distribution(responses, lexicon),
        style_distribution(style, lexicon),
    ) {
        (Some(p), Some(q)) => Ok(LexicalJsd {
            value: jensen_shannon(&p, &q)?,
            degenerate: false,
        }),
        _ => Ok(LexicalJsd {
            value: 1.0,
            degenerate: true,
        }),
    }
}

/// Distribution over the five sentence types.
pub fn sentence_type_distribution(texts: &[Vec<String>]) -> [f64; 5] {
    let mut d = [0.0; 5];
    if texts.is_empty() {
        return d;
    }
    for t in texts {
        d[classify_sentence_type(t) as usize] += 1.0;
    }
    let n = texts.len() as f64;
    d.map(|x| x / n)
}

pub fn syntactic_jsd(responses: &[Vec<String>], style: &[Vec<String>]) -> Result<f64> {
    if responses.is_empty() || style.is_empty() {
        return Err(Error::Data("syntactic JSD needs text on both sides".into()));
    }
    jensen_shannon(
        &sentence_type_distribution(responses),
        &sentence_type_distribution(style),
    )
}

/// Distinct n-grams over all responses divided by the number of n-grams.
pub fn distinct_n(responses: &[Vec<String>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Config("distinct-n needs n >= 1".into()));
    }
    let mut seen: HashSet<&[String]> = HashSet::new();
    let mut total = 0usize;
    for r in responses {
        for w in r.windows(n) {
            seen.insert(w);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Data(format!("no {n}-grams in the responses")));
    }
    Ok(seen.len() as f64 / total as f64)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for w in tokens.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

/// Corpus BLEU up to order `n` on a 0-100 scale: clipped multi-reference
/// precisions, uniform geometric mean, brevity penalty against the closest
/// reference length (shorter on ties). No smoothing.
pub fn bleu_n(responses: &[Vec<String>], references: &[Vec<Vec<String>>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Config("BLEU needs n >= 1".into()));
    }
    if responses.len() != references.len() {
        return Err(Error::Shape(format!(
            "{} responses for {} reference sets",
            responses.len(),
            references.len()
        )));
    }
    if let Some(i) = references.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!("response {i} has no reference")));
    }
    let mut matched = vec![0usize; n];
    let mut possible = vec![0usize; n];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (cand, refs) in responses.iter().zip(references) {
        c_len += cand.len();
        r_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .expect("non-empty references");
        for order in 1..=n {
            let counts = ngram_counts(cand, order);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, order) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            matched[order - 1] += counts
                .iter()
                .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
            possible[order - 1] += cand.len().saturating_sub(order - 1);
        }
    }
    if c_len == 0 || matched.iter().zip(&possible).any(|(&m, &p)| m == 0 || p == 0) {
        return Ok(0.0);
    }
    let log_p: f64 = matched
        .iter()
        .zip(&possible)
        .map(|(&m, &p)| (m as f64 / p as f64).ln())
        .sum::<f64>()
        / n as f64;
    let bp = if c_len < r_len {
        (1.0 - r_len as f64 / c_len as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * bp * log_p.exp())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F1 of one candidate against one reference.
pub fn rouge_l_pair(candidate: &[String], reference: &[String]) -> f64 {
    let l = lcs_len(candidate, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / candidate.len() as f64;
    let r = l as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Mean over responses of the best LCS F1 against any reference.
pub fn rouge_l(responses: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<f64> {
    if responses.len() != references.len() {
        return Err(Error::Shape(format!(
            "{} responses for {} reference sets",
            responses.len(),
            references.len()
        )));
    }
    if responses.is_empty() {
        return Err(Error::Data("Rouge-L needs at least one response".into()));
    }
    let total: f64 = responses
        .iter()
        .zip(references)
        .map(|(c, refs)| refs.iter().map(|r| rouge_l_pair(c, r)).fold(0.0, f64::max))
        .sum();
    Ok(total / responses.len() as f64)
}

/// Mean style score of token-id responses.
pub fn intensity<S: StyleScorer + ?Sized>(responses: &[Vec<usize>], disc: &S) -> Result<f64> {
    if responses.is_empty() {
        return Err(Error::Data("intensity needs at least one response".into()));
    }
    let refs: Vec<&[usize]> = responses.iter().map(Vec::as_slice).collect();
    let s = disc.style_scores(&refs)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}
