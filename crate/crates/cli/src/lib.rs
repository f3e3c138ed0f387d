//! Argument parsing and subcommand dispatch for the `condreg` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use condreg::bench::{self, ReportInputs};
use condreg::condnet::{build_variant, load_checkpoint, Conditioning, ModelConfig};
use condreg::datagen::{make_dataset, Dataset, Split, SynthSpec};
use condreg::grid::{load_tensor, save_tensor, Tensor};
use condreg::trainer::{train, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] condreg::Error),

    #[error(transparent)]
    Service(#[from] condreg_service::ServiceError),

    #[error("{0}")]
    Usage(String),
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "condreg", version, about = "Lambda-conditioned deformable image registration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic registration dataset.
    Synth(SynthArgs),
    /// Train a model on a dataset's training split.
    Train(TrainArgs),
    /// Register one fixed/moving pair at one lambda and write the field.
    Register(RegisterArgs),
    /// Evaluate a model over a lambda grid on one dataset split.
    Sweep(SweepArgs),
    /// Summarize sweeps into CSV, tables and plots.
    Report(ReportArgs),
    /// Run the HTTP inference service.
    Serve(ServeArgs),
}

/// A comma-separated list given as one flag value.
#[derive(Clone, Debug, PartialEq)]
pub struct List<T>(pub Vec<T>);

fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<List<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|t| t.trim().parse::<T>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<std::result::Result<_, _>>()
        .map(List)
}

/// Accepts raw lambdas in `[0, 10]` only.
fn parse_lambda(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{s:?} is not a number: {e}"))?;
    if !(0.0..=10.0).contains(&v) {
        return Err(format!("lambda {v} outside [0, 10]"));
    }
    Ok(v)
}

fn parse_lambdas(s: &str) -> std::result::Result<List<f64>, String> {
    s.split(',').map(|t| parse_lambda(t.trim())).collect::<std::result::Result<_, _>>().map(List)
}

fn parse_split_fractions(s: &str) -> std::result::Result<(f64, f64, f64), String> {
    match parse_list::<f64>(s)?.0.as_slice() {
        [a, b, c] => Ok((*a, *b, *c)),
        _ => Err("expected three comma-separated fractions".into()),
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Grid shape, e.g. `64,64` or `32,32,32`.
    #[arg(long, value_parser = parse_list::<usize>, default_value = "64,64")]
    pub shape: List<usize>,
    #[arg(long, env = "CONDREG_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = parse_split_fractions, default_value = "0.8,0.1,0.1")]
    pub split: (f64, f64, f64),
    #[arg(long)]
    pub blobs: Option<usize>,
    #[arg(long)]
    pub max_disp: Option<f64>,
    #[arg(long)]
    pub smoothness: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for logs and checkpoints.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "cir_dm")]
    pub variant: Conditioning,
    /// Regularization weight of the fixed variant.
    #[arg(long, value_parser = parse_lambda)]
    pub fixed_lambda: Option<f64>,
    /// JSON model config (missing keys take defaults).
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// JSON training config (missing keys take defaults).
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Overrides the configured seed; `CONDREG_SEED` does the same.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Fixed image tensor directory.
    #[arg(long)]
    pub fixed: PathBuf,
    /// Moving image tensor directory.
    #[arg(long)]
    pub moving: PathBuf,
    #[arg(long, value_parser = parse_lambda)]
    pub lambda: f64,
    /// Checkpoint file.
    #[arg(long)]
    pub model: PathBuf,
    /// Output field tensor directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long, value_parser = parse_lambdas, default_value = "0.1,0.5,1,2,4,8,10")]
    pub lambdas: List<f64>,
    /// Sweep JSON output; a CSV with the same stem is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Name recorded in the result (defaults to the checkpoint stem).
    #[arg(long)]
    pub model_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Sweep JSON of the conditional model.
    #[arg(long)]
    pub sweep: PathBuf,
    /// Sweep JSON of a fixed-lambda baseline (repeatable).
    #[arg(long)]
    pub baseline: Vec<PathBuf>,
    /// Training directory of the conditional model (reads `train_summary.json`).
    #[arg(long)]
    pub train_dir: Option<PathBuf>,
    /// Training directory of a baseline (repeatable).
    #[arg(long)]
    pub baseline_train_dir: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

/// Written next to the checkpoints by `train`.
#[derive(Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub variant: Conditioning,
    pub iterations: usize,
    pub wall_s: f64,
    pub initial_dice: f64,
    pub best_dice: Option<f64>,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| condreg::Error::Io { path: path.into(), source: e })?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_vec_pretty(value).map_err(condreg::Error::from)?;
    fs::write(path, text).map_err(|e| condreg::Error::Io { path: path.into(), source: e })?;
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Register(a) => register(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report(a),
        Command::Serve(a) => Ok(condreg_service::run(&a.model, &a.data, a.port)?),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::with_shape(&a.shape.0);
    if let Some(b) = a.blobs {
        spec.n_blobs = b;
    }
    if let Some(d) = a.max_disp {
        spec.max_disp = d;
    }
    if let Some(s) = a.smoothness {
        spec.smoothness = s;
    }
    let m = make_dataset(a.n, &spec, a.seed, a.split, &a.out)?;
    log::info!(
        "wrote {} pairs ({} train / {} val / {} test) to {}",
        m.pairs.len(),
        m.ids(Split::Train).len(),
        m.ids(Split::Val).len(),
        m.ids(Split::Test).len(),
        a.out.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let ds = Dataset::open(&a.data)?;
    let mut mc: ModelConfig = match &a.model_config {
        Some(p) => read_json(p)?,
        None => ModelConfig::default(),
    };
    mc.conditioning = a.variant;
    mc.dims = ds.manifest().spec.shape.len();
    if a.variant == Conditioning::Fixed {
        mc.fixed_lambda = Some(a.fixed_lambda.or(mc.fixed_lambda).ok_or_else(|| {
            CliError::Usage("--variant fixed needs --fixed-lambda".into())
        })?);
    }
    let mut tc: TrainConfig = match &a.train_config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if tc.progressive_fractions.len() != mc.levels {
        tc.progressive_fractions = vec![1.0 / mc.levels as f64; mc.levels];
    }
    if let Some(i) = a.iterations {
        tc.iterations = i;
        tc.checkpoint_every = tc.checkpoint_every.min(i);
    }
    if let Some(lr) = a.lr {
        tc.lr = lr;
    }
    tc.seed = bench::seed_from_env(a.seed.unwrap_or(tc.seed));
    let train_pairs = ds.load_split(Split::Train)?;
    let val_pairs = ds.load_split(Split::Val)?;
    let mut model = build_variant(mc.clone())?;
    log::info!(
        "training {} for {} iterations on {} pairs ({} parameters)",
        mc.conditioning,
        tc.iterations,
        train_pairs.len(),
        model.parameter_report().total
    );
    let rep = train(&mut model, &tc, &train_pairs, &val_pairs, Some(&a.out))?;
    let summary = TrainSummary {
        variant: mc.conditioning,
        iterations: tc.iterations,
        wall_s: rep.wall_s,
        initial_dice: rep.initial_dice,
        best_dice: rep.best.first().map(|b| b.dice),
        model_config: mc,
        train_config: tc,
    };
    write_json(&a.out.join("train_summary.json"), &summary)?;
    log::info!("done in {:.1}s; checkpoints in {}", rep.wall_s, a.out.display());
    Ok(())
}

fn register(a: RegisterArgs) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    let fixed = load_tensor(&a.fixed)?.into_image()?;
    let moving = load_tensor(&a.moving)?.into_image()?;
    let field = model.register_raw(&fixed, &moving, a.lambda)?;
    save_tensor(&a.out, &Tensor::Field(field))?;
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    let cases = Dataset::open(&a.data)?.load_split(a.split)?;
    let id = a.model_id.unwrap_or_else(|| stem(&a.model));
    let result = bench::sweep(&model, &id, &cases, &a.lambdas.0)?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| condreg::Error::Io { path: dir.into(), source: e })?;
    }
    bench::write_sweep(&a.out, &result)?;
    bench::write_csv(a.out.with_extension("csv"), &result.rows)?;
    for l in &result.lambdas {
        log::info!(
            "lambda {l}: mean dice {:.4}, mean std(|J|) {:.4}",
            result.mean_at(*l, |r| r.dsc_mean),
            result.mean_at(*l, |r| r.std_jac)
        );
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let cond = bench::read_sweep(&a.sweep)?;
    let baselines = a.baseline.iter().map(bench::read_sweep).collect::<condreg::Result<Vec<_>>>()?;
    let wall = |dir: &PathBuf| read_json::<TrainSummary>(&dir.join("train_summary.json")).map(|s| s.wall_s);
    let inputs = ReportInputs {
        conditional: &cond,
        baselines: &baselines,
        t_train_s: a.train_dir.as_ref().map(wall).transpose()?,
        t_train_baselines_s: a.baseline_train_dir.iter().map(wall).collect::<Result<_>>()?,
    };
    let rep = bench::report(&inputs, &a.out)?;
    for f in &rep.files {
        log::info!("wrote {}", f.display());
    }
    Ok(())
}
