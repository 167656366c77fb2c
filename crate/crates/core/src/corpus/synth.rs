//! Seeded generator for small conversation and style corpora.
//!
//! Sentences come from a toy clause grammar over topic-grouped pseudo-nouns.
//! Conversation text leans on simple and compound sentences; style text leans
//! on complex ones and carries marker words from the style lexicon. Responses
//! share a topic (and often a noun) with their context.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const PRONOUNS: &[&str] = &["i", "you", "he", "she", "we", "they", "it"];
const DETERMINERS: &[&str] = &["the", "a", "this", "my", "your", "our", "every"];
const PREPOSITIONS: &[&str] = &["in", "on", "with", "about", "from", "near", "under", "at", "by", "over"];
const COORDINATORS: &[&str] = &["and", "but", "or", "so", "yet"];
const SUBORDINATORS: &[&str] = &[
    "because", "although", "when", "while", "if", "since", "unless", "whereas",
];
const RELATIVIZERS: &[&str] = &["which", "that", "who"];
const ADJECTIVES: &[&str] = &[
    "big", "small", "old", "new", "good", "bad", "blue", "green", "long", "short", "happy", "sad", "quick", "slow",
    "bright", "dark", "warm", "cold", "strange", "quiet",
];
const VERBS: &[&str] = &[
    "saw", "liked", "found", "made", "ran", "took", "gave", "knew", "thought", "said", "got", "wanted", "used",
    "tried", "left", "felt", "kept", "built", "bought", "read", "wrote", "heard", "met", "lost", "held", "brought",
    "told", "asked", "moved", "played", "loved", "hated", "needs", "likes", "wants", "sees", "makes", "knows", "is",
    "was", "has", "had", "fixed", "cleaned", "watched", "opened", "carried", "painted", "visited", "followed",
];
const DEFAULT_MARKERS: &[&str] = &[
    "quantum",
    "theorem",
    "lemma",
    "empirical",
    "hypothesis",
    "entropy",
    "manifold",
    "eigenvalue",
    "asymptotic",
    "stochastic",
    "lattice",
    "tensor",
    "boson",
    "spectral",
    "canonical",
    "invariant",
    "topological",
    "axiom",
    "corollary",
    "conjecture",
    "derivation",
    "differential",
    "formalism",
    "isotropic",
    "lagrangian",
    "perturbative",
    "scalar",
    "symmetry",
    "thermodynamic",
    "variational",
    "wavefunction",
    "algebraic",
    "homology",
    "ergodic",
    "gaussian",
    "bayesian",
    "fermion",
    "hamiltonian",
    "operator",
    "photon",
];

const CONSONANTS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// Sentence-type mixture: simple, compound, complex, complex-compound.
const CONV_SYNTAX: [f64; 4] = [0.55, 0.25, 0.15, 0.05];
const STYLE_SYNTAX: [f64; 4] = [0.15, 0.15, 0.45, 0.25];

#[derive(Clone, Debug)]
pub struct SyntheticStyleSpec {
    /// Marker tokens and their relative sampling weights.
    pub style_lexicon: Vec<(String, f64)>,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a style sentence receives inserted markers.
    pub insertion_rate: f64,
    /// Base rate of markers in conversation responses (and in every style sentence).
    pub conv_marker_rate: f64,
    pub num_topics: usize,
    pub nouns_per_topic: usize,
}

impl Default for SyntheticStyleSpec {
    fn default() -> Self {
        SyntheticStyleSpec {
            style_lexicon: DEFAULT_MARKERS
                .iter()
                .enumerate()
                .map(|(i, m)| (m.to_string(), 1.0 / ((i + 1) as f64).sqrt()))
                .collect(),
            min_len: 4,
            max_len: 24,
            insertion_rate: 0.8,
            conv_marker_rate: 0.02,
            num_topics: 110,
            nouns_per_topic: 16,
        }
    }
}

impl SyntheticStyleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.insertion_rate) || !(0.0..=1.0).contains(&self.conv_marker_rate) {
            return Err(Error::Config("marker rates must lie in [0, 1]".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(
                "sentence length range must be positive and ordered".into(),
            ));
        }
        if self.style_lexicon.is_empty() || self.style_lexicon.iter().any(|(_, w)| !(*w > 0.0)) {
            return Err(Error::Config("style lexicon needs positive weights".into()));
        }
        if self.num_topics == 0 || self.nouns_per_topic == 0 {
            return Err(Error::Config("topic counts must be positive".into()));
        }
        Ok(())
    }

    pub fn is_marker(&self, token: &str) -> bool {
        self.style_lexicon.iter().any(|(m, _)| m == token)
    }

    /// Marker probability for a style sentence; equals the conversation base rate at insertion 0.
    fn style_marker_rate(&self) -> f64 {
        self.conv_marker_rate + (1.0 - self.conv_marker_rate) * self.insertion_rate
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticCorpus {
    pub conv: Vec<(String, String)>,
    pub style: Vec<String>,
}

/// Held-out contexts, each with several candidate reference responses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestPool {
    pub contexts: Vec<String>,
    pub responses: Vec<Vec<String>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Tag {
    Noun,
    Other,
}

struct Grammar<'a> {
    spec: &'a SyntheticStyleSpec,
    nouns: Vec<String>,
    markers: WeightedIndex<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Register {
    Conv,
    Style,
}

impl<'a> Grammar<'a> {
    fn new(spec: &'a SyntheticStyleSpec) -> Result<Self> {
        spec.validate()?;
        let total = spec.num_topics * spec.nouns_per_topic;
        let syllables: Vec<String> = CONSONANTS
            .iter()
            .flat_map(|c| VOWELS.iter().map(move |v| format!("{c}{v}")))
            .collect();
        let reserved = |w: &str| {
            PRONOUNS.contains(&w)
                || DETERMINERS.contains(&w)
                || PREPOSITIONS.contains(&w)
                || COORDINATORS.contains(&w)
                || SUBORDINATORS.contains(&w)
                || RELATIVIZERS.contains(&w)
                || ADJECTIVES.contains(&w)
                || VERBS.contains(&w)
                || spec.is_marker(w)
        };
        let s = syllables.len();
        let mut nouns = Vec::with_capacity(total);
        let mut i = 0usize;
        while nouns.len() < total {
            // two or three syllables; interleaved so neighbouring ids differ early
            let w = if i < s * s {
                format!("{}{}", syllables[i % s], syllables[i / s])
            } else {
                let j = i - s * s;
                format!(
                    "{}{}{}",
                    syllables[j % s],
                    syllables[(j / s) % s],
                    syllables[j / (s * s) % s]
                )
            };
            if !reserved(&w) {
                nouns.push(w);
            }
            i += 1;
        }
        let markers = WeightedIndex::new(spec.style_lexicon.iter().map(|(_, w)| *w))
            .map_err(|e| Error::Config(format!("style lexicon weights: {e}")))?;
        Ok(Grammar { spec, nouns, markers })
    }

    fn noun(&self, topic: usize, rng: &mut ChaCha8Rng) -> String {
        let t = if rng.random_bool(0.85) {
            topic
        } else {
            rng.random_range(0..self.spec.num_topics)
        };
        let k = rng.random_range(0..self.spec.nouns_per_topic);
        self.nouns[t * self.spec.nouns_per_topic + k].clone()
    }

    fn pick<'s>(list: &[&'s str], rng: &mut ChaCha8Rng) -> &'s str {
        list[rng.random_range(0..list.len())]
    }

    fn noun_phrase(&self, topic: usize, forced: Option<&str>, out: &mut Vec<(String, Tag)>, rng: &mut ChaCha8Rng) {
        out.push((Self::pick(DETERMINERS, rng).into(), Tag::Other));
        if rng.random_bool(0.25) {
            out.push((Self::pick(ADJECTIVES, rng).into(), Tag::Other));
        }
        let n = forced.map_or_else(|| self.noun(topic, rng), str::to_string);
        out.push((n, Tag::Noun));
    }

    fn clause(&self, topic: usize, echo: Option<&str>, out: &mut Vec<(String, Tag)>, rng: &mut ChaCha8Rng) {
        if rng.random_bool(0.55) {
            out.push((Self::pick(PRONOUNS, rng).into(), Tag::Other));
        } else {
            self.noun_phrase(topic, None, out, rng);
        }
        out.push((Self::pick(VERBS, rng).into(), Tag::Other));
        if rng.random_bool(0.85) {
            self.noun_phrase(topic, echo, out, rng);
        }
        if rng.random_bool(0.35) {
            out.push((Self::pick(PREPOSITIONS, rng).into(), Tag::Other));
            self.noun_phrase(topic, None, out, rng);
        }
    }

    fn relative_clause(&self, topic: usize, out: &mut Vec<(String, Tag)>, rng: &mut ChaCha8Rng) {
        out.push((Self::pick(RELATIVIZERS, rng).into(), Tag::Other));
        out.push((Self::pick(VERBS, rng).into(), Tag::Other));
        self.noun_phrase(topic, None, out, rng);
    }

    fn sentence(
        &self,
        register: Register,
        topic: usize,
        echo: Option<&str>,
        question: bool,
        rng: &mut ChaCha8Rng,
    ) -> Vec<(String, Tag)> {
        let mix = match register {
            Register::Conv => CONV_SYNTAX,
            Register::Style => STYLE_SYNTAX,
        };
        let kind = WeightedIndex::new(mix).expect("static weights").sample(rng);
        self.sentence_of_kind(kind, topic, echo, question, rng)
    }

    /// Kinds 0..4: simple, compound, complex, complex-compound.
    fn sentence_of_kind(
        &self,
        kind: usize,
        topic: usize,
        echo: Option<&str>,
        question: bool,
        rng: &mut ChaCha8Rng,
    ) -> Vec<(String, Tag)> {
        let mut out = Vec::with_capacity(24);
        let coord = |out: &mut Vec<(String, Tag)>, rng: &mut ChaCha8Rng| {
            if rng.random_bool(0.3) {
                out.push((",".into(), Tag::Other));
            }
            out.push((Self::pick(COORDINATORS, rng).into(), Tag::Other));
        };
        match kind {
            0 => self.clause(topic, echo, &mut out, rng),
            1 => {
                self.clause(topic, echo, &mut out, rng);
                coord(&mut out, rng);
                self.clause(topic, None, &mut out, rng);
            }
            2 => match rng.random_range(0..3) {
                0 => {
                    out.push((Self::pick(SUBORDINATORS, rng).into(), Tag::Other));
                    self.clause(topic, None, &mut out, rng);
                    out.push((",".into(), Tag::Other));
                    self.clause(topic, echo, &mut out, rng);
                }
                1 => {
                    self.clause(topic, echo, &mut out, rng);
                    out.push((Self::pick(SUBORDINATORS, rng).into(), Tag::Other));
                    self.clause(topic, None, &mut out, rng);
                }
                _ => {
                    out.push((Self::pick(PRONOUNS, rng).into(), Tag::Other));
                    out.push((Self::pick(VERBS, rng).into(), Tag::Other));
                    self.noun_phrase(topic, echo, &mut out, rng);
                    self.relative_clause(topic, &mut out, rng);
                }
            },
            _ => {
                out.push((Self::pick(SUBORDINATORS, rng).into(), Tag::Other));
                self.clause(topic, None, &mut out, rng);
                out.push((",".into(), Tag::Other));
                self.clause(topic, echo, &mut out, rng);
                coord(&mut out, rng);
                self.clause(topic, None, &mut out, rng);
            }
        }
        out.push((if question { "?" } else { "." }.into(), Tag::Other));
        out
    }

    fn insert_markers(&self, sent: &mut Vec<(String, Tag)>, rng: &mut ChaCha8Rng) {
        let count = if rng.random_bool(0.3) { 2 } else { 1 };
        for _ in 0..count {
            let nouns: Vec<usize> = (0..sent.len()).filter(|&i| sent[i].1 == Tag::Noun).collect();
            let at = if nouns.is_empty() {
                0
            } else {
                nouns[rng.random_range(0..nouns.len())]
            };
            let m = self.spec.style_lexicon[self.markers.sample(rng)].0.clone();
            sent.insert(at, (m, Tag::Other));
        }
    }

    /// Draws until the sentence length falls in range.
    fn bounded(&self, mut make: impl FnMut(&mut ChaCha8Rng) -> Vec<(String, Tag)>, rng: &mut ChaCha8Rng) -> String {
        let mut last = Vec::new();
        for _ in 0..64 {
            last = make(rng);
            if (self.spec.min_len..=self.spec.max_len).contains(&last.len()) {
                break;
            }
        }
        last.truncate(self.spec.max_len);
        last.into_iter().map(|(w, _)| w).collect::<Vec<_>>().join(" ")
    }

    fn context(&self, topic: usize, rng: &mut ChaCha8Rng) -> (String, Vec<String>) {
        let question = rng.random_bool(0.3);
        let mut nouns = Vec::new();
        let text = self.bounded(
            |r| {
                let s = self.sentence(Register::Conv, topic, None, question, r);
                nouns = s.iter().filter(|t| t.1 == Tag::Noun).map(|t| t.0.clone()).collect();
                s
            },
            rng,
        );
        (text, nouns)
    }

    fn response(&self, topic: usize, context_nouns: &[String], stylized: bool, rng: &mut ChaCha8Rng) -> String {
        let topic = if rng.random_bool(0.9) {
            topic
        } else {
            rng.random_range(0..self.spec.num_topics)
        };
        let echo = if !context_nouns.is_empty() && rng.random_bool(0.5) {
            Some(context_nouns[rng.random_range(0..context_nouns.len())].clone())
        } else {
            None
        };
        let (register, rate) = if stylized {
            (Register::Style, 1.0)
        } else {
            (Register::Conv, self.spec.conv_marker_rate)
        };
        self.bounded(
            |r| {
                let mut s = self.sentence(register, topic, echo.as_deref(), false, r);
                if r.random_bool(rate) {
                    self.insert_markers(&mut s, r);
                }
                s
            },
            rng,
        )
    }

    fn style_sentence(&self, rng: &mut ChaCha8Rng) -> String {
        let topic = rng.random_range(0..self.spec.num_topics);
        let rate = self.spec.style_marker_rate();
        self.bounded(
            |r| {
                let mut s = self.sentence(Register::Style, topic, None, false, r);
                if r.random_bool(rate) {
                    self.insert_markers(&mut s, r);
                }
                s
            },
            rng,
        )
    }
}

/// Generates `n_conv` context/response pairs and `n_style` style sentences.
/// The output is a pure function of `(spec, n_conv, n_style, seed)`.
pub fn generate_synthetic(
    spec: &SyntheticStyleSpec,
    n_conv: usize,
    n_style: usize,
    seed: u64,
) -> Result<SyntheticCorpus> {
    if n_conv == 0 || n_style == 0 {
        return Err(Error::Config("corpus sizes must be positive".into()));
    }
    let grammar = Grammar::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut conv = Vec::with_capacity(n_conv);
    for _ in 0..n_conv {
        let topic = rng.random_range(0..spec.num_topics);
        let (ctx, nouns) = grammar.context(topic, &mut rng);
        let resp = grammar.response(topic, &nouns, false, &mut rng);
        conv.push((ctx, resp));
    }
    let style = (0..n_style).map(|_| grammar.style_sentence(&mut rng)).collect();
    Ok(SyntheticCorpus { conv, style })
}

/// Contexts with `per_context` responses each; a response is written in the
/// style register with probability `stylized_rate`.
pub fn generate_test_pool(
    spec: &SyntheticStyleSpec,
    n_contexts: usize,
    per_context: usize,
    stylized_rate: f64,
    seed: u64,
) -> Result<TestPool> {
    if n_contexts == 0 || per_context == 0 {
        return Err(Error::Config("test pool sizes must be positive".into()));
    }
    if !(0.0..=1.0).contains(&stylized_rate) {
        return Err(Error::Config("stylized rate must lie in [0, 1]".into()));
    }
    let grammar = Grammar::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut contexts = Vec::with_capacity(n_contexts);
    let mut responses = Vec::with_capacity(n_contexts);
    for _ in 0..n_contexts {
        let topic = rng.random_range(0..spec.num_topics);
        let (ctx, nouns) = grammar.context(topic, &mut rng);
        let rs = (0..per_context)
            .map(|_| {
                let stylized = rng.random_bool(stylized_rate);
                grammar.response(topic, &nouns, stylized, &mut rng)
            })
            .collect();
        contexts.push(ctx);
        responses.push(rs);
    }
    Ok(TestPool { contexts, responses })
}
