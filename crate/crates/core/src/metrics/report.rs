use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::*;
use crate::autodiff::Scalar;
use crate::corpus::Vocab;
use crate::decoding::{generate_candidates, rank_candidates, Candidate, DecodeConfig};
use crate::model::Parameters;

/// Test contexts, each with one or more reference responses (token ids).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestSet {
    pub contexts: Vec<Vec<usize>>,
    pub references: Vec<Vec<Vec<usize>>>,
}

impl TestSet {
    pub fn new(contexts: Vec<Vec<usize>>, references: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        if contexts.is_empty() || contexts.len() != references.len() {
            return Err(Error::Data(format!(
                "test set needs matching non-empty contexts ({}) and reference sets ({})",
                contexts.len(),
                references.len()
            )));
        }
        if contexts.iter().any(Vec::is_empty) || references.iter().any(|r| r.is_empty() || r.iter().any(Vec::is_empty))
        {
            return Err(Error::Data("test set has an empty context or reference".into()));
        }
        Ok(TestSet { contexts, references })
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }
}

/// One evaluated model on one test set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub intensity: f64,
    pub lexical_jsd: f64,
    pub syntactic_jsd: f64,
    pub dist1: f64,
    pub dist2: f64,
    pub bleu1: f64,
    pub bleu2: f64,
    pub rouge_l: f64,
}

const REPORT_MAGIC: &str = "report-v1";

impl MetricReport {
    pub const KEYS: [&'static str; 8] = [
        "intensity",
        "lexical_jsd",
        "syntactic_jsd",
        "dist1",
        "dist2",
        "bleu1",
        "bleu2",
        "rouge_l",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.intensity,
            self.lexical_jsd,
            self.syntactic_jsd,
            self.dist1,
            self.dist2,
            self.bleu1,
            self.bleu2,
            self.rouge_l,
        ]
    }

    fn from_values(v: [f64; 8]) -> Self {
        MetricReport {
            intensity: v[0],
            lexical_jsd: v[1],
            syntactic_jsd: v[2],
            dist1: v[3],
            dist2: v[4],
            bleu1: v[5],
            bleu2: v[6],
            rouge_l: v[7],
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{REPORT_MAGIC}\n");
        for (k, v) in Self::KEYS.iter().zip(self.values()) {
            writeln!(s, "{k}: {v}").expect("writing to a string");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_MAGIC) {
            return Err(Error::Data(format!("not a {REPORT_MAGIC} file")));
        }
        let mut vals = [f64::NAN; 8];
        for (i, line) in lines.enumerate() {
            let (k, v) = line
                .split_once(": ")
                .ok_or_else(|| Error::Data(format!("report line {}: expected key: value", i + 2)))?;
            let slot = Self::KEYS
                .iter()
                .position(|&x| x == k)
                .ok_or_else(|| Error::Data(format!("report line {}: unknown key {k:?}", i + 2)))?;
            vals[slot] = v
                .parse()
                .map_err(|_| Error::Data(format!("report line {}: bad value {v:?}", i + 2)))?;
        }
        if let Some(i) = vals.iter().position(|v| v.is_nan()) {
            return Err(Error::Data(format!("report lacks {}", Self::KEYS[i])));
        }
        Ok(MetricReport::from_values(vals))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MetricReport::from_text(&text)
    }
}

/// The selected response for one test context.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextOutput {
    pub context: String,
    pub response: String,
    pub relevance: f64,
    pub intensity: f64,
    pub score: f64,
}

impl ContextOutput {
    pub const TSV_HEADER: &'static str = "context\tresponse\trelevance\tintensity\tscore";

    pub fn tsv_line(&self) -> String {
        format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            self.context, self.response, self.relevance, self.intensity, self.score
        )
    }
}

pub fn outputs_to_tsv(outputs: &[ContextOutput]) -> String {
    let mut s = format!("{}\n", ContextOutput::TSV_HEADER);
    for o in outputs {
        s.push_str(&o.tsv_line());
        s.push('\n');
    }
    s
}

fn text_tokens(ids: &[usize], vocab: &Vocab) -> Result<Vec<String>> {
    Ok(vocab
        .decode_tokens(ids)?
        .into_iter()
        .map(|t| t.to_lowercase())
        .collect())
}

/// Decoding seed of test context `i`.
fn context_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add((i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Everything the metric suite needs besides the responses.
pub struct EvalInputs<'a, S: StyleScorer + ?Sized> {
    pub disc: &'a S,
    pub test: &'a TestSet,
    pub style: &'a [Vec<String>],
    pub lexicon: &'a NgramLexicon,
    pub vocab: &'a Vocab,
}

impl MetricReport {
    /// Scores already chosen responses (one per test context).
    pub fn compute<S: StyleScorer + ?Sized>(responses: &[Vec<usize>], inputs: &EvalInputs<'_, S>) -> Result<Self> {
        let test = inputs.test;
        if responses.len() != test.len() {
            return Err(Error::Shape(format!(
                "{} responses for {} contexts",
                responses.len(),
                test.len()
            )));
        }
        let texts: Vec<Vec<String>> = responses
            .iter()
            .map(|r| text_tokens(r, inputs.vocab))
            .collect::<Result<_>>()?;
        let refs: Vec<Vec<Vec<String>>> = test
            .references
            .iter()
            .map(|rs| rs.iter().map(|r| text_tokens(r, inputs.vocab)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        Ok(MetricReport {
            intensity: intensity(responses, inputs.disc)?,
            lexical_jsd: lexical_jsd(&texts, inputs.style, inputs.lexicon)?.value,
            syntactic_jsd: syntactic_jsd(&texts, inputs.style)?,
            dist1: distinct_n(&texts, 1)?,
            dist2: distinct_n(&texts, 2)?,
            bleu1: bleu_n(&texts, &refs, 1)?,
            bleu2: bleu_n(&texts, &refs, 2)?,
            rouge_l: rouge_l(&texts, &refs)?,
        })
    }
}

fn outputs_for(test: &TestSet, chosen: &[Candidate], vocab: &Vocab) -> Result<Vec<ContextOutput>> {
    test.contexts
        .iter()
        .zip(chosen)
        .map(|(ctx, c)| {
            Ok(ContextOutput {
                context: vocab.decode(ctx)?,
                response: vocab.decode(&c.tokens)?,
                relevance: c.relevance,
                intensity: c.intensity,
                score: c.score,
            })
        })
        .collect()
}

/// Sample-and-rank on every context for each pool size in `ns`. Pools are
/// prefixes of one pool of `max(ns)` candidates per context.
pub fn evaluate_sweep<T: Scalar, S: StyleScorer + ?Sized>(
    gen: &Parameters<T>,
    inputs: &EvalInputs<'_, S>,
    dcfg: &DecodeConfig,
    ns: &[usize],
) -> Result<Vec<(usize, MetricReport, Vec<ContextOutput>)>> {
    let n_max = ns
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::Config("no pool sizes given".into()))?;
    if ns.contains(&0) {
        return Err(Error::Config("pool sizes must be positive".into()));
    }
    let mut chosen: Vec<Vec<Candidate>> = vec![Vec::with_capacity(inputs.test.len()); ns.len()];
    for (i, ctx) in inputs.test.contexts.iter().enumerate() {
        let cfg = DecodeConfig {
            num_candidates: n_max,
            seed: context_seed(dcfg.seed, i),
            ..*dcfg
        };
        let pool = generate_candidates(gen, ctx, &cfg)?;
        for (slot, &n) in ns.iter().enumerate() {
            let ranked = rank_candidates(&pool[..n], gen, inputs.disc, ctx, dcfg.beta)?;
            chosen[slot].push(ranked.into_iter().next().expect("non-empty pool"));
        }
    }
    ns.iter()
        .zip(chosen)
        .map(|(&n, picks)| {
            let responses: Vec<Vec<usize>> = picks.iter().map(|c| c.tokens.clone()).collect();
            let report = MetricReport::compute(&responses, inputs)?;
            Ok((n, report, outputs_for(inputs.test, &picks, inputs.vocab)?))
        })
        .collect()
}

/// Responds to every test context with `dcfg` and scores the responses.
pub fn evaluate<T: Scalar, S: StyleScorer + ?Sized>(
    gen: &Parameters<T>,
    inputs: &EvalInputs<'_, S>,
    dcfg: &DecodeConfig,
) -> Result<(MetricReport, Vec<ContextOutput>)> {
    let (_, report, outputs) = evaluate_sweep(gen, inputs, dcfg, &[dcfg.num_candidates])?
        .pop()
        .expect("one pool size");
    Ok((report, outputs))
}
