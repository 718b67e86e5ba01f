//! `rnnlab` command line: one subcommand per experiment driver.
//!
//! Configuration layers, later wins: built-in defaults or `--preset`, the
//! JSON file given by `--config`, then individual flags.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array3;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{chunk, synthesize, ChunkedData, PianoRollDataset, SyntheticConfig, NOTES};
use crate::error::{Error, Result};
use crate::grad::grad_check;
use crate::harness::config::SearchSpace;
use crate::harness::demo::{demo_surface, DemoConfig};
use crate::harness::presets::{preset, Corpus};
use crate::harness::search::random_search;
use crate::harness::sweep::{sweep, SweepAxis, DEFAULT_SWEEP_SEEDS};
use crate::harness::train::train;
use crate::harness::{HyperConfig, ModelVariant};
use crate::model::{evaluate, RnnParams, SequenceBatch, Shapes};
use crate::optim::Method;
use crate::perturb::{sample_plan_seeded, Norm, RegPenaltySpec};
use crate::rng;

pub const DEFAULT_CHUNK_LEN: usize = 100;
pub const DEFAULT_OUT_DIR: &str = "rnnlab-out";
/// `gradcheck` exits nonzero at or above this relative error.
pub const GRADCHECK_THRESHOLD: f64 = 1e-5;

/// On-disk run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliConfigFile {
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub chunk_len: Option<usize>,
    pub model: HyperConfig,
}

impl CliConfigFile {
    /// Parses and validates; unknown keys anywhere in the document are an error.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut unknown = BTreeSet::new();
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: CliConfigFile = serde_ignored::deserialize(de, |path| {
            unknown.insert(path.to_string());
        })
        .map_err(|e| Error::Schema(e.to_string()))?;
        if !unknown.is_empty() {
            let keys: Vec<_> = unknown.into_iter().collect();
            return Err(Error::Schema(format!("unknown keys: {}", keys.join(", "))));
        }
        if cfg.chunk_len == Some(0) {
            return Err(Error::Schema("chunk_len must be >= 1".into()));
        }
        cfg.model.validate().map_err(|e| Error::Schema(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "rnnlab", version, about = "Train and probe plain RNNs on piano-roll data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one network and write its trace, parameters and summary.
    Train(TrainArgs),
    /// Random hyperparameter search for one model variant.
    Search(SearchArgs),
    /// Mean test cross-entropy across values of one regularization knob.
    Sweep(SweepArgs),
    /// Loss surface of a single sigmoid unit over a (w, b) grid.
    DemoSurface(DemoArgs),
    /// Compare BPTT gradients against finite differences on a random net.
    Gradcheck(GradcheckArgs),
    /// Clean-weight cross-entropy of saved parameters.
    Eval(EvalArgs),
    /// Write a synthetic piano-roll dataset.
    SynthData(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from a published best configuration: jsb, nottingham, piano-midi, musedata.
    #[arg(long)]
    pub preset: Option<String>,
    /// Model variant for --preset (plain, nbr, n, ns, mn, mns, do, dos, ff).
    #[arg(long, default_value = "plain")]
    pub variant: String,
    /// Dataset JSON; overrides the config file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, env = "RNNLAB_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub chunk_len: Option<usize>,
    #[command(flatten)]
    pub hyper: HyperFlags,
}

/// Point overrides applied on top of the configuration file.
#[derive(Debug, Clone, Default, Args)]
pub struct HyperFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// momentum, nag or rmsprop.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub step_rate: Option<f64>,
    #[arg(long)]
    pub sigma_hh: Option<f64>,
    #[arg(long)]
    pub sigma_ih: Option<f64>,
    #[arg(long)]
    pub sparsify: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Penalty strength; adds an L2 penalty when none is configured.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// l1 or l2.
    #[arg(long)]
    pub norm: Option<String>,
    /// Noise standard deviation of the configured perturbation.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub drop_p: Option<f64>,
}

impl HyperFlags {
    pub fn apply(&self, cfg: &mut HyperConfig) -> Result<()> {
        macro_rules! set {
            ($flag:ident => $($field:ident).+) => {
                if let Some(v) = self.$flag {
                    cfg.$($field).+ = v;
                }
            };
        }
        set!(seed => seed);
        set!(batch_size => batch_size);
        set!(max_epochs => max_epochs);
        set!(patience => patience);
        set!(momentum => optimizer.momentum);
        set!(step_rate => optimizer.step_rate);
        set!(sigma_hh => init.sigma_hh);
        set!(sigma_ih => init.sigma_ih);
        set!(sparsify => init.sparsify_k);
        set!(rho => init.rho_target);
        set!(sigma => perturbation.sigma);
        set!(drop_p => perturbation.drop_p);
        if let Some(h) = self.hidden {
            cfg.hidden_units = h;
            if self.sparsify.is_none() {
                cfg.init.sparsify_k = cfg.init.sparsify_k.min(h.max(1));
            }
        }
        if let Some(m) = &self.method {
            cfg.optimizer.method = m.parse::<Method>()?;
        }
        let norm = self.norm.as_deref().map(str::parse::<Norm>).transpose()?;
        match (&mut cfg.penalty, self.lambda, norm) {
            (Some(p), lambda, norm) => {
                p.lambda = lambda.unwrap_or(p.lambda);
                p.norm = norm.unwrap_or(p.norm);
            }
            (None, Some(lambda), norm) => {
                cfg.penalty = Some(RegPenaltySpec { norm: norm.unwrap_or(Norm::L2), lambda });
            }
            (None, None, Some(_)) => {
                return Err(Error::contract("--norm needs --lambda or a configured penalty"));
            }
            (None, None, None) => {}
        }
        cfg.validate()
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// lambda, sigma or drop_p.
    #[arg(long)]
    pub axis: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_SWEEP_SEEDS)]
    pub seeds: usize,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.7)]
    pub target: f64,
    #[arg(long, default_value_t = 100)]
    pub resolution: usize,
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    pub w_min: f64,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    pub w_max: f64,
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    pub b_min: f64,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    pub b_max: f64,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value = "l2")]
    pub norm: String,
    /// Output CSV; defaults to surface.csv in the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "RNNLAB_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 5)]
    pub hidden: usize,
    #[arg(long, default_value_t = 7)]
    pub steps: usize,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, default_value_t = NOTES)]
    pub notes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standard deviation of the random weights.
    #[arg(long, default_value_t = 0.3)]
    pub scale: f64,
    /// Perturbation family held fixed during the check (variant names as in --variant).
    #[arg(long, default_value = "plain")]
    pub variant: String,
    /// Noise sigma or drop probability of the perturbation.
    #[arg(long, default_value_t = 0.1)]
    pub strength: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Parameters written by `train`.
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// train, valid or test.
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub sequences: usize,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 1)]
    pub motif_gap: usize,
    #[arg(long, default_value_t = 0.02)]
    pub noise_rate: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// A resolved training setup.
struct Resolved {
    model: HyperConfig,
    data: ChunkedData,
    out_dir: PathBuf,
}

fn resolve(run: &RunArgs) -> Result<Resolved> {
    let file = run.config.as_ref().map(CliConfigFile::load).transpose()?;
    let variant: ModelVariant = run.variant.parse()?;
    let mut model = match (&file, &run.preset) {
        (Some(f), _) => f.model.clone(),
        (None, Some(corpus)) => preset(corpus.parse::<Corpus>()?, variant, 0),
        (None, None) => HyperConfig::desk(100, 0),
    };
    if file.is_some() && run.preset.is_some() {
        log::warn!("--preset ignored: --config takes precedence");
    }
    run.hyper.apply(&mut model)?;

    let dataset_path = run
        .data
        .clone()
        .or_else(|| file.as_ref().and_then(|f| f.dataset.clone()))
        .ok_or_else(|| Error::data("no dataset: pass --data or set `dataset` in the config"))?;
    let out_dir = run
        .out_dir
        .clone()
        .or_else(|| file.as_ref().and_then(|f| f.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let chunk_len = run
        .chunk_len
        .or_else(|| file.as_ref().and_then(|f| f.chunk_len))
        .unwrap_or(DEFAULT_CHUNK_LEN);

    let dataset = PianoRollDataset::load(&dataset_path)?;
    create_dir(&out_dir)?;
    write_json(&out_dir.join("manifest.json"), &dataset.manifest())?;
    Ok(Resolved {
        model,
        data: chunk(&dataset, chunk_len)?,
        out_dir,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    config: &'a HyperConfig,
    best_epoch: usize,
    best_valid_ce: f64,
    test_ce: Option<f64>,
    epochs: usize,
    updates: usize,
    diverged: bool,
    divergence: Option<&'a str>,
}

fn fmt_ce(ce: Option<f64>) -> String {
    ce.map_or_else(|| "n/a".into(), |c| format!("{c:.4}"))
}

fn cmd_train(args: &TrainArgs) -> Result<String> {
    let r = resolve(&args.run)?;
    let out = train(&r.model, &r.data)?;
    let trace = &out.trace;
    trace.write_csv(r.out_dir.join("trace.csv"))?;
    write_json(&r.out_dir.join("params.json"), &out.params)?;
    write_json(
        &r.out_dir.join("summary.json"),
        &TrainSummary {
            config: &r.model,
            best_epoch: trace.best_epoch,
            best_valid_ce: trace.best().valid_ce,
            test_ce: trace.test_ce,
            epochs: trace.records.len() - 1,
            updates: trace.updates,
            diverged: trace.diverged,
            divergence: trace.divergence.as_deref(),
        },
    )?;
    if trace.diverged {
        return Err(Error::Diverged(format!(
            "{} (partial trace in {})",
            trace.divergence.as_deref().unwrap_or("non-finite loss"),
            r.out_dir.display()
        )));
    }
    Ok(format!(
        "test CE {} (best valid {:.4} at epoch {} of {})",
        fmt_ce(trace.test_ce),
        trace.best().valid_ce,
        trace.best_epoch,
        trace.records.len() - 1
    ))
}

fn cmd_search(args: &SearchArgs) -> Result<String> {
    let r = resolve(&args.run)?;
    let variant: ModelVariant = args.run.variant.parse()?;
    let report = random_search(&SearchSpace::default(), variant, &r.model, args.trials, &r.data, args.jobs)?;
    write_json(&r.out_dir.join("search.json"), &report)?;
    match &report.best {
        Some(best) => Ok(format!(
            "best test CE {} (valid {:.4}, trial {}); mean test CE {} over {} trials, {} diverged",
            fmt_ce(best.test_ce),
            best.best_valid_ce,
            best.trial,
            fmt_ce(report.mean_test_ce),
            report.n_trials,
            report.diverged_trials
        )),
        None => Err(Error::Diverged(format!(
            "all {} trials diverged; report in {}",
            report.n_trials,
            r.out_dir.display()
        ))),
    }
}

fn cmd_sweep(args: &SweepArgs) -> Result<String> {
    let r = resolve(&args.run)?;
    let axis: SweepAxis = args.axis.parse()?;
    let table = sweep(axis, &args.values, &r.model, args.seeds, &r.data, args.jobs)?;
    let path = r.out_dir.join(format!("sweep_{axis}.csv"));
    table.write_csv(&path)?;
    write_json(&r.out_dir.join(format!("sweep_{axis}.json")), &table)?;
    let trend = table.trend.map_or_else(|| "n/a".into(), |t| format!("{t:+.3}"));
    Ok(format!("wrote {} rows to {} (Kendall tau {trend})", table.rows.len(), path.display()))
}

fn cmd_demo(args: &DemoArgs) -> Result<String> {
    let penalty = args
        .lambda
        .map(|lambda| Ok::<_, Error>(RegPenaltySpec { norm: args.norm.parse()?, lambda }))
        .transpose()?;
    let cfg = DemoConfig {
        steps: args.steps,
        target: args.target,
        w_range: (args.w_min, args.w_max),
        b_range: (args.b_min, args.b_max),
        resolution: args.resolution,
        penalty,
    };
    let surface = demo_surface(&cfg)?;
    let path = match &args.out {
        Some(p) => p.clone(),
        None => {
            let dir = args.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
            create_dir(&dir)?;
            dir.join("surface.csv")
        }
    };
    surface.write_csv(&path)?;
    Ok(format!(
        "wrote {} rows to {} (max |dL/dW| for W > 1: {:.4e})",
        surface.points(),
        path.display(),
        surface.max_grad_w_above(1.0)
    ))
}

/// Random network and binary batch for `gradcheck`.
pub fn gradcheck_problem(args: &GradcheckArgs) -> Result<(RnnParams, SequenceBatch)> {
    if args.hidden == 0 || args.steps == 0 || args.batch == 0 || args.notes == 0 {
        return Err(Error::contract("hidden, steps, batch and notes must all be >= 1"));
    }
    let normal = Normal::new(0.0, args.scale)
        .map_err(|_| Error::contract(format!("scale must be finite and >= 0, got {}", args.scale)))?;
    let mut r = rng::seeded(args.seed);
    let mut params = RnnParams::zeros(Shapes::autoregressive(args.notes, args.hidden));
    for s in params.as_slices_mut() {
        s.iter_mut().for_each(|v| *v = normal.sample(&mut r));
    }
    let frames = Array3::from_shape_simple_fn((args.batch, args.steps, args.notes), || {
        f64::from(u8::from(r.random::<f64>() < 0.3))
    });
    Ok((params, SequenceBatch::full(frames)?))
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<String> {
    let (params, batch) = gradcheck_problem(args)?;
    let variant: ModelVariant = args.variant.parse()?;
    let spec = variant.perturbation(args.strength);
    let plan = sample_plan_seeded(&spec, params.shapes(), args.steps, args.seed)?;
    let err = grad_check(&params, &batch, Some(&plan))?;
    let line = format!("max relative error {err:.3e}");
    if err < GRADCHECK_THRESHOLD {
        Ok(line)
    } else {
        Err(Error::Contract(format!("{line} exceeds {GRADCHECK_THRESHOLD:e}")))
    }
}

fn cmd_eval(args: &EvalArgs) -> Result<String> {
    let text = fs::read_to_string(&args.params).map_err(|e| Error::io(&args.params, e))?;
    let params: RnnParams = serde_json::from_str(&text)?;
    params.validate()?;
    let dataset = PianoRollDataset::load(&args.data)?;
    let seqs = match args.split.as_str() {
        "train" => &dataset.train,
        "valid" => &dataset.valid,
        "test" => &dataset.test,
        other => return Err(Error::contract(format!("unknown split `{other}`"))),
    };
    if seqs.is_empty() {
        return Err(Error::data(format!("{} split is empty", args.split)));
    }
    let batch = crate::data::batch_from_sequences(&seqs.iter().collect::<Vec<_>>())?;
    let ce = evaluate(&params, &batch)?;
    Ok(format!("{} CE {ce:.4} over {} sequences", args.split, seqs.len()))
}

fn cmd_synth(args: &SynthArgs) -> Result<String> {
    let cfg = SyntheticConfig {
        noise_rate: args.noise_rate,
        ..SyntheticConfig::new(args.seed, args.sequences, args.steps, args.motif_gap)
    };
    let d = synthesize(&cfg)?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    d.save(&args.out)?;
    Ok(format!(
        "wrote {} sequences ({} train / {} valid / {} test) to {}",
        d.train.len() + d.valid.len() + d.test.len(),
        d.train.len(),
        d.valid.len(),
        d.test.len(),
        args.out.display()
    ))
}

/// Runs one command and returns its one-line summary.
pub fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Search(a) => cmd_search(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::DemoSurface(a) => cmd_demo(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Eval(a) => cmd_eval(a),
        Command::SynthData(a) => cmd_synth(a),
    }
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Diverged(_) => 3,
        Error::Schema(_) => 4,
        Error::Data(_) | Error::Io { .. } | Error::Json(_) | Error::Csv(_) => 5,
        Error::Contract(_) => 6,
    }
}

/// Parses `std::env::args`, runs, prints and returns the exit status.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(line) => {
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
