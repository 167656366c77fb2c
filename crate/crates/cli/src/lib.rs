//! Command-line driver: configuration, pipeline stages and experiment harnesses.

pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use stylegen::Error;

use config::{keys_help, ExperimentConfig};
use pipeline::Run;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;

/// Exit status for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

#[derive(Parser, Debug)]
#[command(name = "stylegen", version, about = "Stylized response generation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Configuration file of key = value lines.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Global seed (same as seed=N).
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory (default: $STYLEGEN_RUNS/<config hash>-s<seed>).
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// key=value overrides, applied after the file.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the vocabulary and n-gram lexicon from the training corpora.
    #[command(after_help = keys_help())]
    BuildVocab(Common),
    /// Write synthetic conversation, style and test corpora.
    #[command(after_help = keys_help())]
    SynthData(Common),
    /// Train the conversation language model.
    #[command(after_help = keys_help())]
    Pretrain(Common),
    /// Fine-tune the base model into the style language model.
    #[command(after_help = keys_help())]
    StyleLm(Common),
    /// Train the style discriminator.
    #[command(after_help = keys_help())]
    Discriminator(Common),
    /// Fine-tune the generator with the weighted style objective.
    #[command(after_help = keys_help())]
    Finetune(Common),
    /// Respond to every test context and print context/response TSV.
    #[command(after_help = keys_help())]
    Generate(Common),
    /// Score the generator on the test set.
    #[command(after_help = keys_help())]
    Evaluate(Common),
    /// Fine-tune and score the full objective and each term removed.
    #[command(after_help = keys_help())]
    Ablate(Common),
    /// Score the generator for each candidate pool size in sweep_ns.
    #[command(after_help = keys_help())]
    SweepN(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::BuildVocab(c)
            | Command::SynthData(c)
            | Command::Pretrain(c)
            | Command::StyleLm(c)
            | Command::Discriminator(c)
            | Command::Finetune(c)
            | Command::Generate(c)
            | Command::Evaluate(c)
            | Command::Ablate(c)
            | Command::SweepN(c) => c,
        }
    }
}

fn open_run(common: &Common) -> stylegen::Result<Run> {
    let mut overrides = common.overrides.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("seed={s}"));
    }
    let cfg = ExperimentConfig::load(common.config.as_deref(), &overrides)?;
    Run::open(cfg, common.run_dir.clone())
}

fn execute(command: &Command) -> stylegen::Result<String> {
    let run = open_run(command.common())?;
    let dir = format!("run directory: {}\n", run.dir().display());
    Ok(match command {
        Command::SynthData(_) => {
            pipeline::synth_data(&run)?;
            dir
        }
        Command::BuildVocab(_) => {
            pipeline::build_vocab(&run)?;
            dir
        }
        Command::Pretrain(_) => {
            pipeline::pretrain(&run)?;
            dir
        }
        Command::StyleLm(_) => {
            pipeline::style_lm(&run)?;
            dir
        }
        Command::Discriminator(_) => {
            pipeline::discriminator(&run)?;
            dir
        }
        Command::Finetune(_) => {
            pipeline::finetune(&run)?;
            dir
        }
        Command::Generate(_) => stylegen::metrics::outputs_to_tsv(&pipeline::generate(&run)?),
        Command::Evaluate(_) => {
            let e = pipeline::evaluate(&run)?;
            format!("{}perplexity: {}\n", e.report.to_text(), e.perplexity)
        }
        Command::Ablate(_) => pipeline::ablation_table(&pipeline::ablate(&run)?),
        Command::SweepN(_) => pipeline::sweep_table(&pipeline::sweep_n(&run)?),
    })
}

/// Runs one command line and returns its exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(out) => {
            print!("{out}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("stylegen: {e}");
            exit_code(&e)
        }
    }
}
