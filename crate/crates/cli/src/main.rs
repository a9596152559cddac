//! `switchbench`: synthesise data, train SLDS/RNN classifiers, run the
//! truncated-sequence evaluation and dump probability traces.
//!
//! Every command writes its fully resolved flags to `<out>/run_config.json`
//! before doing any work; `switchbench replay --config <file>` re-runs it.
//!
//! Exit status: 0 success, 1 runtime failure, 2 usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use switchbench::dataset::{self, load_manifest, load_split, synthesize, Split, SynthSpec};
use switchbench::eval::{self, emit_report, evaluate, parse_grid, SequenceTrace, TruncationPolicy};
use switchbench::model::SldsTrainConfig;
use switchbench::{ClassificationRule, EmConfig, EvalReport, Model, TrainConfig};

const RUN_CONFIG: &str = "run_config.json";

#[derive(Parser)]
#[command(name = "switchbench", version, about = "Truncated-sequence benchmark for SLDS and BiLSTM track classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset, its manifest and ground-truth params
    Synth(SynthArgs),
    /// Train a classifier on the training split of a manifest
    Train(TrainArgs),
    /// Evaluate one or more models over a truncation grid
    Eval(EvalArgs),
    /// Per-timestep class probabilities for one track
    Trace(TraceArgs),
    /// Re-run a command from its run_config.json
    Replay(ReplayArgs),
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Training tracks per class
    #[arg(long, default_value_t = 10)]
    per_class: usize,
    /// Test tracks per class
    #[arg(long, default_value_t = 8)]
    test_per_class: usize,
    /// Override the minimum track length of every class
    #[arg(long)]
    len_min: Option<usize>,
    /// Override the maximum track length of every class
    #[arg(long)]
    len_max: Option<usize>,
    /// Drop process and measurement noise
    #[arg(long)]
    noiseless: bool,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ModelKind {
    Slds,
    Rnn,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
struct TrainArgs {
    #[arg(long, value_enum)]
    model: ModelKind,
    /// Dataset manifest
    #[arg(long)]
    data: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Sequence-level rule stored with the model (default: final_step for slds, mean_posterior for rnn)
    #[arg(long, value_parser = parse_rule)]
    rule: Option<ClassificationRule>,
    /// SLDS: probability of staying in the same switching state
    #[arg(long, default_value_t = 0.97)]
    stay_prob: f64,
    /// SLDS: maximum EM iterations per class
    #[arg(long, default_value_t = 100)]
    em_iters: usize,
    /// SLDS: relative EM convergence tolerance
    #[arg(long, default_value_t = 1e-4)]
    em_tol: f64,
    /// SLDS: also learn the transition and emission matrices
    #[arg(long)]
    learn_matrices: bool,
    /// RNN: hidden units per LSTM cell
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    /// RNN: stacked bidirectional layers
    #[arg(long, default_value_t = 3)]
    layers: usize,
    /// RNN: ADAM learning rate
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 110)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    /// RNN: global gradient-norm clip (0 disables)
    #[arg(long, default_value_t = 5.0)]
    grad_clip: f64,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
struct EvalArgs {
    /// Trained model file; repeat to compare several models
    #[arg(long = "model-file", required = true)]
    model_files: Vec<PathBuf>,
    /// Dataset manifest (the test split is evaluated)
    #[arg(long)]
    data: PathBuf,
    /// `start:step:end` or `start:step:complete`
    #[arg(long, default_value = "10:10:complete", value_parser = check_grid)]
    grid: String,
    #[arg(long)]
    out: PathBuf,
    /// Handling of tracks shorter than the grid length
    #[arg(long, default_value = "clamp", value_parser = parse_policy)]
    policy: TruncationPolicy,
    /// Skip writing per-sequence traces
    #[arg(long)]
    no_traces: bool,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
struct TraceArgs {
    #[arg(long)]
    model_file: PathBuf,
    /// Track CSV
    #[arg(long)]
    sequence: PathBuf,
    /// Class name to use when the file carries no label
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    config: PathBuf,
    /// Write to this directory instead of the recorded one
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
enum RunConfig {
    Synth(SynthArgs),
    Train(TrainArgs),
    Eval(EvalArgs),
    Trace(TraceArgs),
}

impl RunConfig {
    fn out_mut(&mut self) -> &mut PathBuf {
        match self {
            RunConfig::Synth(a) => &mut a.out,
            RunConfig::Train(a) => &mut a.out,
            RunConfig::Eval(a) => &mut a.out,
            RunConfig::Trace(a) => &mut a.out,
        }
    }
}

fn parse_rule(s: &str) -> Result<ClassificationRule, String> {
    s.parse().map_err(|e: switchbench::Error| e.to_string())
}

fn parse_policy(s: &str) -> Result<TruncationPolicy, String> {
    s.parse().map_err(|e: switchbench::Error| e.to_string())
}

fn check_grid(s: &str) -> Result<String, String> {
    parse_grid(s, 0).map(|_| s.to_string()).map_err(|e| e.to_string())
}

fn write_run_config(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let text = serde_json::to_string_pretty(cfg)? + "\n";
    fs::write(out.join(RUN_CONFIG), text).with_context(|| format!("writing {}", out.join(RUN_CONFIG).display()))?;
    Ok(())
}

fn run(cfg: RunConfig) -> anyhow::Result<()> {
    let out = match &cfg {
        RunConfig::Synth(a) => a.out.clone(),
        RunConfig::Train(a) => a.out.clone(),
        RunConfig::Eval(a) => a.out.clone(),
        RunConfig::Trace(a) => a.out.clone(),
    };
    write_run_config(&cfg, &out)?;
    match cfg {
        RunConfig::Synth(a) => cmd_synth(&a),
        RunConfig::Train(a) => cmd_train(&a),
        RunConfig::Eval(a) => cmd_eval(&a),
        RunConfig::Trace(a) => cmd_trace(&a),
    }
}

fn cmd_synth(a: &SynthArgs) -> anyhow::Result<()> {
    let mut spec = SynthSpec::default_benchmark(a.seed)?;
    spec.train_per_class = a.per_class;
    spec.test_per_class = a.test_per_class;
    for c in &mut spec.classes {
        if let Some(lo) = a.len_min {
            c.len_min = lo;
        }
        if let Some(hi) = a.len_max {
            c.len_max = hi;
        }
    }
    if a.noiseless {
        spec = spec.noiseless()?;
    }
    let data = synthesize(&spec)?;
    data.write_to(&a.out)?;
    println!(
        "wrote {} train and {} test tracks to {}",
        data.train.len(),
        data.test.len(),
        a.out.display()
    );
    Ok(())
}

fn load_data(manifest: &Path, split: Split) -> anyhow::Result<(Vec<String>, Vec<dataset::TrackSequence>)> {
    let m = load_manifest(manifest).with_context(|| format!("loading manifest {}", manifest.display()))?;
    let seqs = load_split(&m, split)?;
    Ok((m.class_names, seqs))
}

fn cmd_train(a: &TrainArgs) -> anyhow::Result<()> {
    let (class_names, train) = load_data(&a.data, Split::Train)?;
    let mut log = String::new();
    let mut model = match a.model {
        ModelKind::Slds => {
            let cfg = SldsTrainConfig {
                stay_prob: a.stay_prob,
                em: EmConfig {
                    max_iters: a.em_iters,
                    tol: a.em_tol,
                    learn_matrices: a.learn_matrices,
                },
                ..Default::default()
            };
            let (m, hist) = Model::train_slds(&train, &class_names, &cfg)?;
            log.push_str("class,iteration,log_likelihood\n");
            for (k, h) in hist.iter().enumerate() {
                for (i, ll) in h.iter().enumerate() {
                    log.push_str(&format!("{},{i},{ll}\n", class_names[k]));
                }
            }
            m
        }
        ModelKind::Rnn => {
            let cfg = TrainConfig {
                epochs: a.epochs,
                batch_size: a.batch_size,
                seed: a.seed,
                learning_rate: a.lr,
                grad_clip: a.grad_clip,
                hidden: a.hidden,
                num_layers: a.layers,
            };
            let (m, hist) = Model::train_rnn(&train, &class_names, &cfg)?;
            log.push_str("epoch,loss\n");
            for (e, l) in hist.iter().enumerate() {
                log.push_str(&format!("{},{l}\n", e + 1));
            }
            m
        }
    };
    if let Some(rule) = a.rule {
        model.set_rule(rule);
    }
    let path = a.out.join("model.params");
    model.save(&path)?;
    fs::write(a.out.join("training_log.csv"), log)?;
    println!("saved {} model to {}", model.kind(), path.display());
    Ok(())
}

fn load_model(path: &Path) -> anyhow::Result<Model> {
    Model::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn cmd_eval(a: &EvalArgs) -> anyhow::Result<()> {
    let (class_names, test) = load_data(&a.data, Split::Test)?;
    let max_len = test.iter().map(|s| s.len()).max().unwrap_or(0);
    let grid = parse_grid(&a.grid, max_len)?;
    let mut reports = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for path in &a.model_files {
        let mut model = load_model(path)?;
        if model.class_names() != class_names.as_slice() {
            bail!("{}: model classes {:?} differ from dataset classes {:?}", path.display(), model.class_names(), class_names);
        }
        let base = model.as_classifier().name().to_string();
        let mut name = base.clone();
        let mut n = 2;
        while names.contains(&name) {
            name = format!("{base}_{n}");
            n += 1;
        }
        model.set_name(name.clone());
        names.push(name);
        reports.push(evaluate(model.as_classifier(), &test, &grid, a.policy, !a.no_traces)?);
    }
    let report = EvalReport::new(class_names, grid, a.policy, reports)?;
    emit_report(&report, &a.out)?;
    print!("{}", report.accuracy_table());
    Ok(())
}

fn cmd_trace(a: &TraceArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model_file)?;
    let seq = dataset::load_sequence_with(&a.sequence, model.class_names(), a.label.as_deref())
        .with_context(|| format!("loading track {}", a.sequence.display()))?;
    let out = model.classify(&seq)?;
    let tr = SequenceTrace {
        seq_id: seq.id().to_string(),
        label: seq.label(),
        predicted: out.class,
        frames: seq.samples().iter().map(|s| s.frame).collect(),
        probs: out.trace.row_iter().map(|r| r.iter().copied().collect()).collect(),
    };
    let csv = eval::trace_csv(model.as_classifier().name(), model.class_names(), &tr);
    let path = a.out.join(format!("{}.csv", seq.id()));
    fs::write(&path, csv)?;
    println!("predicted {} for {}; trace in {}", model.class_names()[out.class], seq.id(), path.display());
    Ok(())
}

fn replay(a: &ReplayArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut cfg: RunConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.config.display()))?;
    if let Some(out) = &a.out {
        *cfg.out_mut() = out.clone();
    }
    run(cfg)
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(raw) = std::env::var("SWITCHBENCH_THREADS") {
        let n: usize = raw
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("SWITCHBENCH_THREADS must be a positive integer, got {raw:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| match cli.command {
        Command::Synth(a) => run(RunConfig::Synth(a)),
        Command::Train(a) => run(RunConfig::Train(a)),
        Command::Eval(a) => run(RunConfig::Eval(a)),
        Command::Trace(a) => run(RunConfig::Trace(a)),
        Command::Replay(a) => replay(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
