//! Command-line front end. `main` only forwards to [`run`].

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use softthink::decode::{replay, replay_prefix, AnswerMode, Mode, Trace};
use softthink::model::{init_toy_model, load_weights, save_weights, Positional, ToySpec};
use softthink::ModelWeights;

use crate::error::{data, HarnessError, Result};
use crate::pipeline::{self, ProbeKind};
use crate::spec::{Experiment, ExperimentSpec, Overrides};

/// Default output root when neither `--out` nor the spec sets one.
pub const OUT_ENV: &str = "SOFTTHINK_OUT";
pub const DEFAULT_OUT: &str = "out";

#[derive(Debug, Parser)]
#[command(name = "softthink", version, about = "Soft-token decoding experiments on small transformers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode every prompt in every mode and replication of a spec.
    Decode(RunArgs),
    /// Run one probe (or `all`) over the decoded traces of a spec.
    Probe {
        /// js, lens, similarity, scan, linearity or all
        kind: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Build figure tables from probe outputs in a run directory.
    Figures { run_dir: PathBuf },
    /// Re-execute a trace and check it reproduces.
    Replay {
        trace: PathBuf,
        /// Experiment spec (.toml) or weights file (.safetensors)
        model: PathBuf,
        /// Replay only this many steps
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Write a randomly initialized toy model and its card.
    InitToy(InitToyArgs),
    /// Decode, probe and build figures in one go.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment spec (TOML)
    pub spec: PathBuf,
    /// Output root; overrides the spec and $SOFTTHINK_OUT
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: available cores)
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub overrides: OverrideArgs,
}

#[derive(Debug, Args)]
pub struct OverrideArgs {
    #[arg(long, value_parser = serde_value::<Mode>)]
    pub mode: Option<Mode>,
    /// Comma-separated decoding modes
    #[arg(long, value_delimiter = ',', value_parser = serde_value::<Mode>)]
    pub modes: Option<Vec<Mode>>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = serde_value::<AnswerMode>)]
    pub answer_mode: Option<AnswerMode>,
    #[arg(long)]
    pub replications: Option<usize>,
}

impl From<&OverrideArgs> for Overrides {
    fn from(a: &OverrideArgs) -> Self {
        Overrides {
            mode: a.mode,
            modes: a.modes.clone(),
            temperature: a.temperature,
            top_k: a.top_k,
            top_p: a.top_p,
            gamma: a.gamma,
            tau: a.tau,
            max_len: a.max_len,
            seed: a.seed,
            answer_mode: a.answer_mode,
            replications: a.replications,
        }
    }
}

#[derive(Debug, Args)]
pub struct InitToyArgs {
    /// Output weights path; the card goes next to it
    pub path: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub context: Option<usize>,
    #[arg(long, value_parser = serde_value::<Positional>)]
    pub positional: Option<Positional>,
    #[arg(long)]
    pub untied: bool,
}

/// Parses a snake_case name the way the spec file spells it.
fn serde_value<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

fn experiment(args: &RunArgs) -> Result<(Experiment, PathBuf)> {
    let mut spec = ExperimentSpec::from_path(&args.spec)?;
    spec.apply(&Overrides::from(&args.overrides));
    let out = output_root(args.out.clone(), spec.output.clone(), std::env::var_os(OUT_ENV));
    Ok((Experiment::resolve(spec)?, out))
}

/// `--out`, then the spec's `output`, then `$SOFTTHINK_OUT`, then `out`.
pub fn output_root(flag: Option<PathBuf>, spec: Option<PathBuf>, env: Option<OsString>) -> PathBuf {
    flag.or(spec).or_else(|| env.map(PathBuf::from)).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn model_for_replay(source: &Path) -> Result<ModelWeights> {
    if source.extension().is_some_and(|e| e == "toml") {
        Experiment::resolve(ExperimentSpec::from_path(source)?)?.load_model()
    } else {
        Ok(load_weights(source)?)
    }
}

/// First step index at which two traces differ, if any.
pub fn first_divergence(a: &Trace, b: &Trace, steps: usize) -> Option<usize> {
    (0..steps).find(|&i| a.steps.get(i) != b.steps.get(i))
}

fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Decode(args) => {
            let (exp, root) = experiment(&args)?;
            let weights = exp.load_model()?;
            let pool = pipeline::worker_pool(args.workers)?;
            let dir = pipeline::decode_all(&exp, &weights, &root, &pool)?;
            writeln!(out, "{}", dir.display())?;
        }
        Command::Probe { kind, run } => {
            let kinds = match kind.as_str() {
                "all" => ProbeKind::ALL.to_vec(),
                name => vec![ProbeKind::parse(name).ok_or_else(|| {
                    HarnessError::Usage(format!(
                        "unknown probe `{name}`; expected js, lens, similarity, scan, linearity or all"
                    ))
                })?],
            };
            let (exp, root) = experiment(&run)?;
            let weights = exp.load_model()?;
            let pool = pipeline::worker_pool(run.workers)?;
            for kind in kinds {
                let dir = pipeline::run_probe(kind, &exp, &weights, &root, &pool)?;
                writeln!(out, "{}", dir.join(format!("{}.jsonl", kind.name())).display())?;
            }
        }
        Command::Figures { run_dir } => {
            let dir = pipeline::figures(&run_dir)?;
            writeln!(out, "{}", dir.display())?;
        }
        Command::Replay { trace, model, steps } => {
            let original = pipeline::read_trace(&trace)?;
            let weights = model_for_replay(&model)?;
            let (again, n) = match steps {
                Some(n) if n > original.steps.len() => {
                    return Err(data(format!("trace has only {} steps", original.steps.len())))
                }
                Some(n) => (replay_prefix(&original, &weights, n)?, n),
                None => (replay(&original, &weights)?, original.steps.len()),
            };
            if let Some(i) = first_divergence(&original, &again, n) {
                return Err(HarnessError::Numeric(format!("replay diverges at step {i}")));
            }
            if steps.is_none() && original != again {
                return Err(HarnessError::Numeric("replay ends differently".into()));
            }
            writeln!(out, "reproduced {n} steps")?;
        }
        Command::InitToy(a) => {
            let mut toy = ToySpec::default();
            toy.dim = a.dim.unwrap_or(toy.dim);
            toy.layers = a.layers.unwrap_or(toy.layers);
            toy.heads = a.heads.unwrap_or(toy.heads);
            toy.context = a.context.unwrap_or(toy.context);
            toy.positional = a.positional.unwrap_or(toy.positional);
            toy.tied_head = !a.untied;
            let weights: ModelWeights = init_toy_model(&toy, a.seed)?;
            if let Some(parent) = a.path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            save_weights(&weights, &a.path)?;
            writeln!(out, "{}", a.path.display())?;
        }
        Command::Run(args) => {
            let (exp, root) = experiment(&args)?;
            let pool = pipeline::worker_pool(args.workers)?;
            let dir = pipeline::run_all(&exp, &root, &pool)?;
            writeln!(out, "{}", dir.display())?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 { out.write_all(rendered.as_bytes()) } else { err.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.status() as i32
        }
    }
}
