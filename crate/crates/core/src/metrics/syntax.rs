//! Rule-based sentence typing by clause counting.
//!
//! A clause is a run of tokens containing a finite verb. Subordinators open a
//! dependent clause, as do relativizers anywhere but the first position. A
//! coordinator after a verb closes the current clause and opens an
//! independent one; a comma closes a dependent clause. Runs without a verb
//! are not clauses.

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SentenceType {
    Simple = 0,
    Compound = 1,
    Complex = 2,
    ComplexCompound = 3,
    Others = 4,
}

impl SentenceType {
    pub const ALL: [SentenceType; 5] = [
        SentenceType::Simple,
        SentenceType::Compound,
        SentenceType::Complex,
        SentenceType::ComplexCompound,
        SentenceType::Others,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SentenceType::Simple => "simple",
            SentenceType::Compound => "compound",
            SentenceType::Complex => "complex",
            SentenceType::ComplexCompound => "complex-compound",
            SentenceType::Others => "others",
        }
    }
}

impl fmt::Display for SentenceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const COORDINATORS: &[&str] = &["and", "but", "or", "so", "yet", "nor"];

pub const SUBORDINATORS: &[&str] = &[
    "because", "although", "though", "when", "whenever", "while", "if", "since", "unless", "whereas", "after",
    "before", "until", "once", "whether", "wherever",
];

pub const RELATIVIZERS: &[&str] = &["which", "that", "who", "whom", "whose"];

/// Finite verb forms recognized besides any word ending in "ed".
pub const FINITE_VERBS: &[&str] = &[
    "am",
    "is",
    "are",
    "was",
    "were",
    "be",
    "do",
    "does",
    "did",
    "has",
    "have",
    "had",
    "can",
    "could",
    "will",
    "would",
    "shall",
    "should",
    "may",
    "might",
    "must",
    "saw",
    "see",
    "sees",
    "found",
    "find",
    "finds",
    "made",
    "make",
    "makes",
    "ran",
    "run",
    "runs",
    "took",
    "take",
    "takes",
    "gave",
    "give",
    "gives",
    "knew",
    "know",
    "knows",
    "thought",
    "think",
    "thinks",
    "said",
    "say",
    "says",
    "got",
    "get",
    "gets",
    "left",
    "felt",
    "feel",
    "feels",
    "kept",
    "keep",
    "keeps",
    "built",
    "bought",
    "read",
    "reads",
    "wrote",
    "write",
    "writes",
    "heard",
    "met",
    "lost",
    "held",
    "brought",
    "told",
    "went",
    "go",
    "goes",
    "came",
    "come",
    "comes",
    "slept",
    "sleeps",
    "like",
    "likes",
    "want",
    "wants",
    "need",
    "needs",
    "love",
    "loves",
    "hate",
    "hates",
    "seem",
    "seems",
    "look",
    "looks",
    "became",
    "become",
    "becomes",
    "began",
    "begin",
    "begins",
    "stood",
    "sat",
    "ate",
    "drank",
    "spoke",
    "understood",
];

fn is_verb(w: &str) -> bool {
    FINITE_VERBS.contains(&w) || (w.len() >= 4 && w.ends_with("ed"))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Independent,
    Dependent,
}

/// Assigns one of the five sentence types to lowercased tokens.
pub fn classify_sentence_type(tokens: &[String]) -> SentenceType {
    let (mut indep, mut dep) = (0usize, 0usize);
    let mut kind = Kind::Independent;
    let mut has_verb = false;
    let close = |kind: Kind, has_verb: bool, indep: &mut usize, dep: &mut usize| {
        if has_verb {
            match kind {
                Kind::Independent => *indep += 1,
                Kind::Dependent => *dep += 1,
            }
        }
    };
    for (i, t) in tokens.iter().enumerate() {
        let w = t.as_str();
        let opens_dependent = SUBORDINATORS.contains(&w) || (i > 0 && RELATIVIZERS.contains(&w));
        if opens_dependent {
            close(kind, has_verb, &mut indep, &mut dep);
            kind = Kind::Dependent;
            has_verb = false;
        } else if COORDINATORS.contains(&w) {
            if has_verb {
                close(kind, has_verb, &mut indep, &mut dep);
                has_verb = false;
                kind = Kind::Independent;
            }
        } else if w == "," {
            if kind == Kind::Dependent && has_verb {
                close(kind, has_verb, &mut indep, &mut dep);
                has_verb = false;
                kind = Kind::Independent;
            }
        } else if is_verb(w) {
            has_verb = true;
        }
    }
    close(kind, has_verb, &mut indep, &mut dep);
    match (indep, dep) {
        (1, 0) => SentenceType::Simple,
        (i, 0) if i >= 2 => SentenceType::Compound,
        (1, _) => SentenceType::Complex,
        (i, d) if i >= 2 && d >= 1 => SentenceType::ComplexCompound,
        _ => SentenceType::Others,
    }
}
