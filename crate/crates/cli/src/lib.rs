//! Command-line front end: `train`, `classify`, `evaluate` and `simulate`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use runfatigue_core::error::{Error, ErrorKind, Result};
use runfatigue_core::model::{digest_input, ModelFile, Provenance};
use runfatigue_core::pipeline::{
    self, evaluate, load_run, parse_truth, simulate, write_entropy_trace, write_selection_report,
    Evaluation, MetricKind, ProfileFile, RunFiles, TrainOptions, REPORT_LAGS,
};
use runfatigue_core::select::SelectionMode;
use runfatigue_core::synth::SimulationPlan;
use runfatigue_core::ClassificationResult;

#[derive(Debug, Parser)]
#[command(name = "runfatigue", version, about = "Estimate run progress and fatigue from knee/ankle accelerometers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit trends, select features and estimate filters from two or more runs.
    Train(TrainArgs),
    /// Estimate the subinterval index of every segment of a new run.
    Classify(ClassifyArgs),
    /// RMS index error for lags 0-4 over labelled runs, plus selection reports.
    Evaluate(EvaluateArgs),
    /// Write synthetic runs described by a simulation plan.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML file with `mass` (kg) and `subinterval_distance` (m).
    #[arg(long)]
    pub profile: PathBuf,
    /// `knee.csv,ankle.csv[,markers.csv]`; repeat for every training run.
    #[arg(long = "run", required = true)]
    pub runs: Vec<RunFiles>,
    #[arg(long, default_value_t = 44)]
    pub segments: usize,
    #[arg(long, default_value_t = MetricKind::Euclidean)]
    pub metric: MetricKind,
    #[arg(long = "select", default_value_t = SelectionMode::Procedure1)]
    pub mode: SelectionMode,
    /// Recorded in the model provenance when the inputs are synthetic.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write `selection.csv` and `entropy_trace.csv` here.
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub run: RunFiles,
    #[arg(long, default_value_t = 4)]
    pub lag: usize,
    /// `step,k_true` file; enables the RMS summary.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// With `--truth`, also report the RMS error for lags 0-4.
    #[arg(long)]
    pub sweep: bool,
    /// Result CSV; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Check the model's recorded input digests against files in this directory.
    #[arg(long)]
    pub verify_inputs: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Labelled runs; pair each with a `--truth` in the same order.
    #[arg(long = "run", required = true)]
    pub runs: Vec<RunFiles>,
    #[arg(long = "truth", required = true)]
    pub truths: Vec<PathBuf>,
    /// Directory receiving `rms.csv`, `selection.csv` and `entropy_trace.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation plan (TOML); the built-in reference plan when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Overrides the plan seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// 0 success, 2 validation, 3 I/O, 4 numerical or degenerate input.
pub fn exit_code(err: &Error) -> i32 {
    match err.kind() {
        ErrorKind::Validation => 2,
        ErrorKind::Io => 3,
        ErrorKind::Numerical => 4,
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn cmd_train(args: &TrainArgs) -> Result<ModelFile> {
    if args.runs.len() < 2 {
        return Err(Error::Arity(format!(
            "training needs at least two runs, got {}",
            args.runs.len()
        )));
    }
    let profile = ProfileFile::load(&args.profile)?.with_segments(args.segments)?;
    let mut inputs = vec![digest_input("profile", &args.profile)?];
    let mut runs = Vec::with_capacity(args.runs.len());
    for (i, files) in args.runs.iter().enumerate() {
        runs.push(load_run(files, &profile)?);
        inputs.extend(files.digests(i + 1)?);
    }
    let options = TrainOptions {
        metric: args.metric,
        mode: args.mode,
    };
    let model = pipeline::train(&runs, &profile, options)?;
    let rel = &model.relevance;
    if rel.uniform_fallback {
        warn!("training runs are identical; feature weights are uniform");
    }
    info!(
        "selected {} of {} features ({})",
        rel.selected_count,
        rel.d.len(),
        rel.mode
    );
    if let Some(dir) = &args.report_dir {
        create_dir(dir)?;
        write_file(&dir.join("selection.csv"), |b| write_selection_report(rel, b))?;
        write_file(&dir.join("entropy_trace.csv"), |b| write_entropy_trace(rel, b))?;
    }
    let file = ModelFile::new(model, Provenance::now(args.seed, inputs));
    file.save(&args.out)?;
    Ok(file)
}

pub fn cmd_classify(args: &ClassifyArgs) -> Result<ClassificationResult> {
    let file = ModelFile::load(&args.model)?;
    if let Some(dir) = &args.verify_inputs {
        file.verify_inputs(dir)?;
    }
    let model = &file.model;
    let run = load_run(&args.run, &model.profile)?;
    let truth = args.truth.as_deref().map(parse_truth).transpose()?;
    let result = pipeline::classify(model, &run, args.lag, truth.as_deref())?;
    match &args.out {
        Some(path) => write_file(path, |b| result.write_csv(b))?,
        None => {
            let stdout = std::io::stdout();
            result
                .write_csv(stdout.lock())
                .map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    if let (Some(truth), Some(rms)) = (&truth, result.rms_error_pct) {
        eprintln!("rms index error at lag {}: {rms:.2}% of N", args.lag);
        if args.sweep {
            let name = args
                .run
                .knee
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let lags: Vec<usize> = REPORT_LAGS.iter().copied().filter(|&l| l < model.segments).collect();
            let eval = evaluate(model, &[(name, run, truth.clone())], &lags)?;
            let mut buf = Vec::new();
            eval.write_csv(&mut buf).map_err(|e| Error::io("<stderr>", e))?;
            std::io::stderr()
                .write_all(&buf)
                .map_err(|e| Error::io("<stderr>", e))?;
        }
    }
    Ok(result)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<Evaluation> {
    if args.runs.len() != args.truths.len() {
        return Err(Error::Shape {
            expected: args.runs.len(),
            got: args.truths.len(),
        });
    }
    let file = ModelFile::load(&args.model)?;
    let model = &file.model;
    let labelled = args
        .runs
        .iter()
        .zip(&args.truths)
        .enumerate()
        .map(|(i, (files, truth))| {
            Ok((format!("run{}", i + 1), load_run(files, &model.profile)?, parse_truth(truth)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let lags: Vec<usize> = REPORT_LAGS.iter().copied().filter(|&l| l < model.segments).collect();
    let eval = evaluate(model, &labelled, &lags)?;
    create_dir(&args.out)?;
    write_file(&args.out.join("rms.csv"), |b| eval.write_csv(b))?;
    write_file(&args.out.join("selection.csv"), |b| {
        write_selection_report(&model.relevance, b)
    })?;
    write_file(&args.out.join("entropy_trace.csv"), |b| {
        write_entropy_trace(&model.relevance, b)
    })?;
    let mut table = Vec::new();
    eval.write_csv(&mut table).map_err(|e| Error::io("<stdout>", e))?;
    std::io::stdout()
        .write_all(&table)
        .map_err(|e| Error::io("<stdout>", e))?;
    Ok(eval)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Vec<PathBuf>> {
    let mut plan = match &args.spec {
        Some(path) => SimulationPlan::load(path)?,
        None => SimulationPlan::reference(),
    };
    if let Some(seed) = args.seed {
        plan.seed = seed;
    }
    let dirs = simulate(&plan, &args.out)?;
    info!("wrote {} runners under {}", dirs.len(), args.out.display());
    Ok(dirs)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a).map(drop),
        Command::Classify(a) => cmd_classify(a).map(drop),
        Command::Evaluate(a) => cmd_evaluate(a).map(drop),
        Command::Simulate(a) => cmd_simulate(a).map(drop),
    }
}
