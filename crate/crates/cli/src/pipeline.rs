//! Experiment stages. Every stage reads and writes files in one run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use stylegen::corpus::{
    encode_pairs, encode_sentences, generate_synthetic, generate_test_pool, make_lm_sequence, make_style_sequence,
    read_conv_file, read_style_file, write_conv_file, write_style_file, ConvPair, LMSequence, StyleSentence, Vocab,
};
use stylegen::metrics::{
    build_ngram_lexicon, evaluate_sweep, outputs_to_tsv, tokenize, ContextOutput, EvalInputs, MetricReport,
    NgramLexicon, TestSet,
};
use stylegen::model::{load_checkpoint_with_vocab, save_checkpoint, CheckpointMeta, Parameters};
use stylegen::objectives::LossWeights;
use stylegen::training::{
    evaluate_perplexity, finetune_style_lm, finetune_styledgpt, pretrain_base_lm, train_discriminator, DiscData, Phase,
    TrainReport,
};
use stylegen::{Error, Result};

use crate::config::{stage, stage_seed, ExperimentConfig};

/// Environment variable naming the directory that holds run directories.
pub const RUNS_ENV: &str = "STYLEGEN_RUNS";
const DEFAULT_RUNS: &str = "runs";

pub const VOCAB_FILE: &str = "vocab.txt";
pub const LEXICON_FILE: &str = "lexicon.txt";
pub const BASE_CKPT: &str = "base.ckpt";
pub const STYLE_CKPT: &str = "style_lm.ckpt";
pub const DISC_CKPT: &str = "disc.ckpt";
pub const MODEL_CKPT: &str = "styledgpt.ckpt";

pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_ENV).map_or_else(|| PathBuf::from(DEFAULT_RUNS), PathBuf::from)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn progress(msg: impl AsRef<str>) {
    eprintln!("[stylegen] {}", msg.as_ref());
}

/// A run directory and the configuration driving it.
#[derive(Clone, Debug)]
pub struct Run {
    dir: PathBuf,
    cfg: ExperimentConfig,
}

impl Run {
    /// Opens (creating if needed) `dir`, or `<runs root>/<hash>-s<seed>`, and
    /// records the configuration in `config.txt`.
    pub fn open(cfg: ExperimentConfig, dir: Option<PathBuf>) -> Result<Run> {
        let dir = dir.unwrap_or_else(|| runs_root().join(cfg.run_name()));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write(&dir.join("config.txt"), &cfg.to_text())?;
        Ok(Run { dir, cfg })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn data(&self, configured: &str, default: &str) -> PathBuf {
        if configured.is_empty() {
            self.dir.join("data").join(default)
        } else {
            PathBuf::from(configured)
        }
    }

    pub fn conv_train_path(&self) -> PathBuf {
        self.data(&self.cfg.conv_train, "conv_train.tsv")
    }

    pub fn conv_valid_path(&self) -> PathBuf {
        self.data(&self.cfg.conv_valid, "conv_valid.tsv")
    }

    pub fn style_train_path(&self) -> PathBuf {
        self.data(&self.cfg.style_train, "style_train.txt")
    }

    pub fn style_valid_path(&self) -> PathBuf {
        self.data(&self.cfg.style_valid, "style_valid.txt")
    }

    pub fn test_path(&self) -> PathBuf {
        self.data(&self.cfg.test_set, "test.tsv")
    }

    pub fn model_path(&self) -> PathBuf {
        if self.cfg.model.is_empty() {
            self.file(MODEL_CKPT)
        } else {
            PathBuf::from(&self.cfg.model)
        }
    }

    fn log_path(&self, name: &str) -> PathBuf {
        self.dir.join("logs").join(format!("{name}.tsv"))
    }
}

/// Raw test contexts with their candidate references.
pub type RawTestSet = Vec<(String, Vec<String>)>;

pub fn write_test_file(path: &Path, test: &RawTestSet) -> Result<()> {
    let mut s = String::new();
    for (c, refs) in test {
        s.push_str(c);
        for r in refs {
            s.push('\t');
            s.push_str(r);
        }
        s.push('\n');
    }
    write(path, &s)
}

pub fn read_test_file(path: &Path) -> Result<RawTestSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t').map(str::trim);
        let ctx = fields.next().unwrap_or("");
        let refs: Vec<String> = fields.filter(|f| !f.is_empty()).map(str::to_string).collect();
        if ctx.is_empty() || refs.is_empty() {
            return Err(Error::Data(format!(
                "{} line {}: expected context<TAB>reference[<TAB>reference...]",
                path.display(),
                i + 1
            )));
        }
        out.push((ctx.to_string(), refs));
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{} has no test contexts", path.display())));
    }
    Ok(out)
}

/// Writes synthetic train/valid/test corpora to the configured data paths.
pub fn synth_data(run: &Run) -> Result<()> {
    let c = run.config();
    let spec = c.synth_spec();
    let corpus = generate_synthetic(
        &spec,
        c.synth_conv + c.synth_conv_valid,
        c.synth_style + c.synth_style_valid,
        stage_seed(c.seed, stage::SYNTH),
    )?;
    let (conv_train, conv_valid) = corpus.conv.split_at(c.synth_conv);
    let (style_train, style_valid) = corpus.style.split_at(c.synth_style);
    let pool = generate_test_pool(
        &spec,
        c.synth_test_contexts,
        c.synth_refs,
        c.synth_test_style_rate,
        stage_seed(c.seed, stage::TEST_POOL),
    )?;
    let test: RawTestSet = pool.contexts.into_iter().zip(pool.responses).collect();
    for p in [run.conv_train_path(), run.style_train_path(), run.test_path()] {
        if let Some(d) = p.parent() {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
    }
    write_conv_file(&run.conv_train_path(), conv_train)?;
    write_conv_file(&run.conv_valid_path(), conv_valid)?;
    write_style_file(&run.style_train_path(), style_train)?;
    write_style_file(&run.style_valid_path(), style_valid)?;
    write_test_file(&run.test_path(), &test)?;
    progress(format!(
        "synthetic data: {} + {} pairs, {} + {} style sentences, {} test contexts",
        conv_train.len(),
        conv_valid.len(),
        style_train.len(),
        style_valid.len(),
        test.len()
    ));
    Ok(())
}

fn read_train_pairs(run: &Run) -> Result<Vec<(String, String)>> {
    let mut pairs = read_conv_file(&run.conv_train_path())?;
    if run.config().max_train_pairs > 0 {
        pairs.truncate(run.config().max_train_pairs);
    }
    Ok(pairs)
}

fn token_lists(pairs: &[(String, String)]) -> Vec<Vec<String>> {
    pairs.iter().flat_map(|(c, r)| [tokenize(c), tokenize(r)]).collect()
}

/// Builds the vocabulary and the n-gram lexicon from the training corpora.
pub fn build_vocab(run: &Run) -> Result<(Vocab, NgramLexicon)> {
    let pairs = read_train_pairs(run)?;
    let style = read_style_file(&run.style_train_path())?;
    let mut lines: Vec<&str> = Vec::with_capacity(2 * pairs.len() + style.len());
    for (c, r) in &pairs {
        lines.push(c);
        lines.push(r);
    }
    lines.extend(style.iter().map(String::as_str));
    let vocab = Vocab::build(&lines, run.config().min_freq)?;
    vocab.save(&run.file(VOCAB_FILE))?;
    let style_tokens: Vec<Vec<String>> = style.iter().map(|s| tokenize(s)).collect();
    let lexicon = build_ngram_lexicon(&token_lists(&pairs), &style_tokens, run.config().lexicon_cutoff)?;
    lexicon.save(&run.file(LEXICON_FILE))?;
    progress(format!(
        "vocabulary: {} tokens; lexicon: {} n-grams",
        vocab.len(),
        lexicon.len()
    ));
    Ok((vocab, lexicon))
}

pub fn load_vocab(run: &Run) -> Result<Vocab> {
    Vocab::load(&run.file(VOCAB_FILE))
}

/// Encoded corpora, restricted to sequences that fit the model window.
pub struct Corpora {
    pub conv_train: Vec<ConvPair>,
    pub conv_valid: Vec<ConvPair>,
    pub style_train: Vec<StyleSentence>,
    pub style_valid: Vec<StyleSentence>,
}

impl Corpora {
    pub fn load(run: &Run, vocab: &Vocab) -> Result<Self> {
        let max = run.config().max_seq_len;
        let fit_pairs = |pairs: Vec<ConvPair>, what: &str| {
            let n = pairs.len();
            let kept: Vec<ConvPair> = pairs
                .into_iter()
                .filter(|p| p.context().len() + p.response().len() + 2 <= max)
                .collect();
            if kept.len() < n {
                progress(format!(
                    "{what}: dropped {} pairs longer than {max} tokens",
                    n - kept.len()
                ));
            }
            kept
        };
        let fit_style = |s: Vec<StyleSentence>, what: &str| {
            let n = s.len();
            let kept: Vec<StyleSentence> = s.into_iter().filter(|s| s.tokens().len() + 2 <= max).collect();
            if kept.len() < n {
                progress(format!(
                    "{what}: dropped {} sentences longer than {max} tokens",
                    n - kept.len()
                ));
            }
            kept
        };
        let corpora = Corpora {
            conv_train: fit_pairs(encode_pairs(&read_train_pairs(run)?, vocab)?, "conv_train"),
            conv_valid: fit_pairs(
                encode_pairs(&read_conv_file(&run.conv_valid_path())?, vocab)?,
                "conv_valid",
            ),
            style_train: fit_style(
                encode_sentences(&read_style_file(&run.style_train_path())?, vocab)?,
                "style_train",
            ),
            style_valid: fit_style(
                encode_sentences(&read_style_file(&run.style_valid_path())?, vocab)?,
                "style_valid",
            ),
        };
        if corpora.conv_train.is_empty() || corpora.conv_valid.is_empty() {
            return Err(Error::Data("conversation corpora are empty".into()));
        }
        if corpora.style_train.is_empty() || corpora.style_valid.is_empty() {
            return Err(Error::Data("style corpora are empty".into()));
        }
        Ok(corpora)
    }
}

fn lm_sequences(pairs: &[ConvPair]) -> Vec<LMSequence> {
    pairs.iter().map(make_lm_sequence).collect()
}

fn style_sequences(sentences: &[StyleSentence]) -> Vec<LMSequence> {
    sentences.iter().map(|s| make_style_sequence(s.tokens())).collect()
}

fn meta(run: &Run, vocab: &Vocab, phase: &str, report: &TrainReport) -> CheckpointMeta {
    let mut m = CheckpointMeta::new();
    m.insert("phase".into(), phase.into());
    m.insert("vocab".into(), format!("{:016x}", vocab.fingerprint()));
    m.insert("seed".into(), run.config().seed.to_string());
    m.insert("steps".into(), report.steps_run.to_string());
    m.insert("best_step".into(), report.best_step.to_string());
    m.insert("best_val".into(), format!("{}", report.best_val));
    m
}

/// Loads a checkpoint, checking it was trained with `vocab`.
pub fn load_model(path: &Path, vocab: &Vocab) -> Result<Parameters<f32>> {
    let (p, m) = load_checkpoint_with_vocab(path, vocab.len())?;
    let want = format!("{:016x}", vocab.fingerprint());
    match m.get("vocab") {
        Some(v) if *v != want => Err(Error::CheckpointShape(format!(
            "{} was trained with vocabulary {v}, this run uses {want}",
            path.display()
        ))),
        _ => Ok(p),
    }
}

fn summarize(name: &str, r: &TrainReport) {
    progress(format!(
        "{name}: {} steps, best validation {:.4} at step {}{}",
        r.steps_run,
        r.best_val,
        r.best_step,
        if r.stopped_early { " (stopped early)" } else { "" }
    ));
}

/// Trains the conversation LM from scratch and saves `base.ckpt`.
pub fn pretrain(run: &Run) -> Result<TrainReport> {
    let vocab = load_vocab(run)?;
    let data = Corpora::load(run, &vocab)?;
    let c = run.config();
    let init = Parameters::<f32>::init(c.model_config(vocab.len()), stage_seed(c.seed, stage::INIT))?;
    let mut cfg = c.train_config(Phase::Pretrain);
    cfg.log_path = Some(run.log_path("pretrain"));
    fs::create_dir_all(run.file("logs")).map_err(|e| Error::io(run.file("logs"), e))?;
    let (params, report) = pretrain_base_lm(
        &lm_sequences(&data.conv_train),
        &lm_sequences(&data.conv_valid),
        &init,
        &cfg,
    )?;
    save_checkpoint(&params, &meta(run, &vocab, "pretrain", &report), &run.file(BASE_CKPT))?;
    summarize("pretrain", &report);
    Ok(report)
}

/// Fine-tunes the base LM on style text and saves `style_lm.ckpt`.
pub fn style_lm(run: &Run) -> Result<TrainReport> {
    let vocab = load_vocab(run)?;
    let data = Corpora::load(run, &vocab)?;
    let base = load_model(&run.file(BASE_CKPT), &vocab)?;
    let mut cfg = run.config().train_config(Phase::StyleLm);
    cfg.log_path = Some(run.log_path("style_lm"));
    fs::create_dir_all(run.file("logs")).map_err(|e| Error::io(run.file("logs"), e))?;
    let (params, report) = finetune_style_lm(
        &style_sequences(&data.style_train),
        &style_sequences(&data.style_valid),
        &base,
        &cfg,
    )?;
    save_checkpoint(&params, &meta(run, &vocab, "style_lm", &report), &run.file(STYLE_CKPT))?;
    summarize("style LM", &report);
    Ok(report)
}

/// Trains the style discriminator from the base LM and saves `disc.ckpt`.
pub fn discriminator(run: &Run) -> Result<TrainReport> {
    let vocab = load_vocab(run)?;
    let data = Corpora::load(run, &vocab)?;
    let base = load_model(&run.file(BASE_CKPT), &vocab)?;
    let mut cfg = run.config().train_config(Phase::Discriminator);
    cfg.log_path = Some(run.log_path("discriminator"));
    fs::create_dir_all(run.file("logs")).map_err(|e| Error::io(run.file("logs"), e))?;
    let train = DiscData {
        style: &data.style_train,
        conv: &data.conv_train,
    };
    let val = DiscData {
        style: &data.style_valid,
        conv: &data.conv_valid,
    };
    let (params, report) = train_discriminator(train, val, &base, &cfg)?;
    let mut m = meta(run, &vocab, "discriminator", &report);
    if let Some(a) = report.val_accuracy {
        m.insert("val_accuracy".into(), format!("{a}"));
    }
    save_checkpoint(&params, &m, &run.file(DISC_CKPT))?;
    summarize("discriminator", &report);
    if let Some(a) = report.val_accuracy {
        progress(format!("discriminator validation accuracy {a:.4}"));
    }
    Ok(report)
}

/// Fine-tunes the base LM with `weights` against the frozen style LM and
/// discriminator, saving the result as `out`.
pub fn finetune_with(run: &Run, weights: LossWeights, out: &Path, log_name: &str) -> Result<TrainReport> {
    let vocab = load_vocab(run)?;
    let data = Corpora::load(run, &vocab)?;
    let base = load_model(&run.file(BASE_CKPT), &vocab)?;
    let style = load_model(&run.file(STYLE_CKPT), &vocab)?;
    let disc = load_model(&run.file(DISC_CKPT), &vocab)?;
    let c = run.config();
    let mut cfg = c.train_config(Phase::StyledGpt);
    cfg.weights = weights;
    cfg.log_path = Some(run.log_path(log_name));
    fs::create_dir_all(run.file("logs")).map_err(|e| Error::io(run.file("logs"), e))?;
    let mut val = &data.conv_valid[..];
    if c.finetune_valid_pairs > 0 && val.len() > c.finetune_valid_pairs {
        val = &val[..c.finetune_valid_pairs];
    }
    let (params, report) = finetune_styledgpt(
        &lm_sequences(&data.conv_train),
        &lm_sequences(val),
        &base,
        &style,
        &disc,
        &cfg,
    )?;
    let mut m = meta(run, &vocab, "styledgpt", &report);
    m.insert("lambda_w".into(), format!("{}", weights.lambda_w));
    m.insert("lambda_s".into(), format!("{}", weights.lambda_s));
    m.insert("lambda_nll".into(), format!("{}", weights.lambda_nll));
    save_checkpoint(&params, &m, out)?;
    summarize(log_name, &report);
    Ok(report)
}

/// Fine-tunes with the configured weights into the configured model path.
pub fn finetune(run: &Run) -> Result<TrainReport> {
    finetune_with(run, run.config().loss_weights(), &run.model_path(), "finetune")
}

/// Everything needed to score generated responses.
pub struct EvalContext {
    pub vocab: Vocab,
    pub disc: Parameters<f32>,
    pub test: TestSet,
    pub style: Vec<Vec<String>>,
    pub lexicon: NgramLexicon,
    pub valid: Vec<LMSequence>,
}

impl EvalContext {
    /// Loads the test set and keeps references the discriminator scores above
    /// `test_threshold`; contexts left without references are dropped.
    pub fn load(run: &Run) -> Result<Self> {
        let vocab = load_vocab(run)?;
        let disc = load_model(&run.file(DISC_CKPT), &vocab)?;
        let c = run.config();
        let raw = read_test_file(&run.test_path())?;
        let max_ctx = c.max_seq_len.saturating_sub(2);
        let mut contexts = Vec::new();
        let mut references = Vec::new();
        for (ctx, refs) in &raw {
            let ctx_ids = vocab.encode(ctx);
            if ctx_ids.is_empty() || ctx_ids.len() > max_ctx {
                continue;
            }
            let pairs: Vec<ConvPair> = refs
                .iter()
                .map(|r| ConvPair::new(ctx_ids.clone(), vocab.encode(r)))
                .collect::<Result<_>>()?;
            let kept = stylegen::corpus::filter_by_intensity(&pairs, &disc, c.test_threshold)?;
            if !kept.is_empty() {
                contexts.push(ctx_ids);
                references.push(kept.iter().map(|p| p.response().to_vec()).collect());
            }
        }
        if contexts.is_empty() {
            return Err(Error::Data(format!(
                "no test reference scores above intensity {}",
                c.test_threshold
            )));
        }
        progress(format!(
            "test set: {} of {} contexts keep a stylized reference",
            contexts.len(),
            raw.len()
        ));
        let test = TestSet::new(contexts, references)?;
        let style = read_style_file(&run.style_train_path())?
            .iter()
            .map(|s| tokenize(s))
            .collect();
        let lexicon = NgramLexicon::load(&run.file(LEXICON_FILE))?;
        let data = Corpora::load(run, &vocab)?;
        Ok(EvalContext {
            vocab,
            disc,
            test,
            style,
            lexicon,
            valid: lm_sequences(&data.conv_valid),
        })
    }

    pub fn inputs(&self) -> EvalInputs<'_, Parameters<f32>> {
        EvalInputs {
            disc: &self.disc,
            test: &self.test,
            style: &self.style,
            lexicon: &self.lexicon,
            vocab: &self.vocab,
        }
    }
}

/// Metrics of one generator plus its held-out conversation perplexity.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub perplexity: f64,
    pub outputs: Vec<ContextOutput>,
}

fn evaluate_model(
    run: &Run,
    ev: &EvalContext,
    gen: &Parameters<f32>,
    ns: &[usize],
) -> Result<Vec<(usize, Evaluation)>> {
    let perplexity = evaluate_perplexity(gen, &ev.valid)?;
    let sweep = evaluate_sweep(gen, &ev.inputs(), &run.config().decode_config(), ns)?;
    Ok(sweep
        .into_iter()
        .map(|(n, report, outputs)| {
            (
                n,
                Evaluation {
                    report,
                    perplexity,
                    outputs,
                },
            )
        })
        .collect())
}

fn save_evaluation(run: &Run, name: &str, e: &Evaluation) -> Result<()> {
    fs::create_dir_all(run.file("reports")).map_err(|er| Error::io(run.file("reports"), er))?;
    e.report.save(&run.file(&format!("reports/{name}.report")))?;
    write(&run.file(&format!("outputs/{name}.tsv")), &outputs_to_tsv(&e.outputs))
}

/// Responds to every test context with the configured model.
pub fn generate(run: &Run) -> Result<Vec<ContextOutput>> {
    let ev = EvalContext::load(run)?;
    let gen = load_model(&run.model_path(), &ev.vocab)?;
    let n = run.config().num_candidates;
    let mut sweep = evaluate_sweep(&gen, &ev.inputs(), &run.config().decode_config(), &[n])?;
    let (_, _, outputs) = sweep.pop().expect("one pool size");
    write(&run.file("outputs/generate.tsv"), &outputs_to_tsv(&outputs))?;
    Ok(outputs)
}

/// Scores the configured model and writes `reports/evaluate.report`.
pub fn evaluate(run: &Run) -> Result<Evaluation> {
    let ev = EvalContext::load(run)?;
    let gen = load_model(&run.model_path(), &ev.vocab)?;
    let (_, e) = evaluate_model(run, &ev, &gen, &[run.config().num_candidates])?
        .pop()
        .expect("one pool size");
    save_evaluation(run, "evaluate", &e)?;
    Ok(e)
}

/// An ablation variant and its weights relative to the configured ones.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Variant {
    pub name: &'static str,
    pub weights: LossWeights,
}

/// Full objective, each term removed in turn, and the NLL-only baseline.
pub fn ablation_variants(full: LossWeights) -> [Variant; 5] {
    [
        Variant {
            name: "full",
            weights: full,
        },
        Variant {
            name: "no_lw",
            weights: LossWeights { lambda_w: 0.0, ..full },
        },
        Variant {
            name: "no_ls",
            weights: LossWeights { lambda_s: 0.0, ..full },
        },
        Variant {
            name: "no_nll",
            weights: LossWeights {
                lambda_nll: 0.0,
                ..full
            },
        },
        Variant {
            name: "nll_only",
            weights: LossWeights {
                lambda_w: 0.0,
                lambda_s: 0.0,
                ..full
            },
        },
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub train: TrainReport,
    pub eval: Evaluation,
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant\tlambda_w\tlambda_s\tlambda_nll\tperplexity");
    for k in MetricReport::KEYS {
        s.push('\t');
        s.push_str(k);
    }
    s.push('\n');
    for r in rows {
        let w = r.variant.weights;
        write!(
            s,
            "{}\t{}\t{}\t{}\t{:.4}",
            r.variant.name, w.lambda_w, w.lambda_s, w.lambda_nll, r.eval.perplexity
        )
        .expect("writing to a string");
        for v in r.eval.report.values() {
            write!(s, "\t{v:.4}").expect("writing to a string");
        }
        s.push('\n');
    }
    s
}

/// Fine-tunes and evaluates every ablation variant; writes `ablation.tsv`.
pub fn ablate(run: &Run) -> Result<Vec<AblationRow>> {
    let ev = EvalContext::load(run)?;
    let mut rows = Vec::new();
    for variant in ablation_variants(run.config().loss_weights()) {
        let ckpt = run.file(&format!("ablation/{}.ckpt", variant.name));
        fs::create_dir_all(run.file("ablation")).map_err(|e| Error::io(run.file("ablation"), e))?;
        let train = finetune_with(run, variant.weights, &ckpt, &format!("ablation_{}", variant.name))?;
        let gen = load_model(&ckpt, &ev.vocab)?;
        let (_, eval) = evaluate_model(run, &ev, &gen, &[run.config().num_candidates])?
            .pop()
            .expect("one pool size");
        save_evaluation(run, &format!("ablation_{}", variant.name), &eval)?;
        progress(format!(
            "{}: intensity {:.4}, perplexity {:.3}",
            variant.name, eval.report.intensity, eval.perplexity
        ));
        rows.push(AblationRow { variant, train, eval });
    }
    write(&run.file("ablation.tsv"), &ablation_table(&rows))?;
    Ok(rows)
}

pub fn sweep_table(rows: &[(usize, MetricReport)]) -> String {
    let mut s = String::from("n");
    for k in MetricReport::KEYS {
        s.push('\t');
        s.push_str(k);
    }
    s.push('\n');
    for (n, r) in rows {
        s.push_str(&n.to_string());
        for v in r.values() {
            write!(s, "\t{v:.4}").expect("writing to a string");
        }
        s.push('\n');
    }
    s
}

/// Evaluates the configured model at every pool size in `sweep_ns`; writes `sweep_n.tsv`.
pub fn sweep_n(run: &Run) -> Result<Vec<(usize, MetricReport)>> {
    let ev = EvalContext::load(run)?;
    let gen = load_model(&run.model_path(), &ev.vocab)?;
    let rows: Vec<(usize, MetricReport)> = evaluate_model(run, &ev, &gen, &run.config().sweep_ns)?
        .into_iter()
        .map(|(n, e)| (n, e.report))
        .collect();
    write(&run.file("sweep_n.tsv"), &sweep_table(&rows))?;
    Ok(rows)
}
