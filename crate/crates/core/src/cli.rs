//! Command-line driver. Every subcommand is deterministic given its
//! arguments and seed, and every file it writes is replaced atomically.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::Error;
use crate::geometry::{physical_to_normalized, Axis, SalParams};
use crate::gradcheck::{run_gradcheck, GradCheckConfig};
use crate::io::{read_container, read_json, to_json, write_container, write_json, write_report};
use crate::learn::{Model, ModelKind, TrainConfig};
use crate::protocol::{
    adapt_intersession, evaluate_majority, extract_features, random_heldout, run_ablation,
    run_intersession, run_perturbation_experiment, split_adaptation, train_full, train_intrasession,
    ConditionResult, ExperimentConfig, ExperimentReport, FeatureSet, PipelineConfig, VoteWindow,
};
use crate::rng::{key, stream};
use crate::sal::{FreezeMask, SalLayer};
use crate::synth::{generate_session, PerturbationRanges, SynthSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "salnet", version, about = "Spatial adaptation for regular biosignal sensor arrays")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one synthetic session as a BSAC1 container.
    Synth(SynthArgs),
    /// Train a classifier on one session.
    Train(TrainArgs),
    /// Adapt the spatial layer of a trained classifier to a new session.
    Adapt(AdaptArgs),
    /// Evaluate a classifier, optionally behind a learned spatial layer.
    Eval(EvalArgs),
    /// Simulated perturbation recovery on held-out repetitions.
    Perturb(PerturbArgs),
    /// Ablation over trainable affine groups between two sessions.
    Ablate(PairArgs),
    /// Intersession comparison: zero-shot, fine-tuning, SAL, SAL + LBN, BN.
    Intersession(PairArgs),
    /// Finite-difference check of every analytic gradient.
    Gradcheck(GradcheckArgs),
}

/// Options shared by every command that trains or adapts.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Base seed of every random stream.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Base learning rate.
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Minibatch size.
    #[arg(long, default_value_t = 1024)]
    pub batch: usize,
    /// Training epochs; adaptation runs ten times as many.
    #[arg(long, default_value_t = 2)]
    pub epochs: usize,
    /// Input dropout probability.
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    /// Classifier architecture.
    #[arg(long, value_enum, default_value_t = ModelKind::LogReg)]
    pub model: ModelKind,
    /// Wrap sampling around the circumferential axis.
    #[arg(long)]
    pub wrap: bool,
    /// Majority-vote window in milliseconds; whole repetitions when omitted.
    #[arg(long)]
    pub window_ms: Option<f64>,
    /// Keep every n-th activity image.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Skip band-pass and band-stop filtering.
    #[arg(long)]
    pub no_filter: bool,
    /// Where to write the JSON report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl CommonArgs {
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let train = TrainConfig {
            base_lr: self.lr,
            batch_size: self.batch,
            epochs: self.epochs,
            dropout_p: self.dropout,
            model: self.model,
            seed: self.seed,
            ..TrainConfig::default()
        };
        train.validate()?;
        if self.stride == 0 {
            return Err(Error::InvalidParameter("--stride must be positive".into()));
        }
        let window = match self.window_ms {
            None => VoteWindow::FullSegment,
            Some(ms) if ms > 0.0 && ms.is_finite() => VoteWindow::Millis(ms),
            Some(ms) => return Err(Error::InvalidParameter(format!("--window-ms must be positive, got {ms}"))),
        };
        Ok(ExperimentConfig {
            pipeline: PipelineConfig {
                filter: !self.no_filter,
                t_rms: None,
                frame_stride: self.stride,
            },
            train,
            window,
            wrap: self.wrap,
        })
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output container.
    #[arg(long)]
    pub out: PathBuf,
    /// Session index; sessions differ in noise and baseline.
    #[arg(long, default_value_t = 0)]
    pub session: usize,
    /// Array shift along the width axis in millimetres.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub shift_x_mm: f64,
    /// Array shift along the height axis in millimetres.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub shift_y_mm: f64,
    /// Array rotation in degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub rotation_deg: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training session container.
    #[arg(long)]
    pub train: PathBuf,
    /// Train on every repetition instead of holding one out per gesture.
    #[arg(long)]
    pub full: bool,
    /// Where to write the classifier checkpoint.
    #[arg(long)]
    pub out_model: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    /// Classifier checkpoint produced by `train`.
    #[arg(long = "model-in", alias = "checkpoint")]
    pub model_in: PathBuf,
    /// Session providing one repetition per gesture for adaptation.
    #[arg(long)]
    pub adapt: PathBuf,
    /// Test session; the remaining repetitions of --adapt when omitted.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Comma list of groups to keep fixed, from tx,ty,phi,sx,sy,shx,shy,bias.
    #[arg(long, default_value = "")]
    pub freeze: String,
    /// Where to write the adapted layer.
    #[arg(long)]
    pub out_sal: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long = "model-in", alias = "checkpoint")]
    pub model_in: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Adapted layer produced by `adapt`; identity when omitted.
    #[arg(long)]
    pub sal: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub adapt: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, value_enum, default_value_t = ModelKind::LogReg)]
    pub model: ModelKind,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Exit code for a failure of the given kind.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_) => EXIT_USAGE,
        Error::NonFinite(_) | Error::Numerical(_) | Error::DegenerateGrid(_) | Error::FilterDesign(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn load_features(path: &Path, cfg: &ExperimentConfig) -> Result<FeatureSet, Error> {
    extract_features(&read_container(path)?, &cfg.pipeline)
}

fn emit(report: &ExperimentReport, path: Option<&Path>) -> Result<(), Error> {
    for c in &report.conditions {
        println!("{:<34} raw {:.4}  majority {:.4}", c.name, c.raw_accuracy, c.mv_accuracy);
    }
    for (k, v) in &report.summary {
        println!("{k:<34} {v:.6}");
    }
    if let Some(p) = path {
        write_report(p, report)?;
    }
    Ok(())
}

fn echo<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn cmd_synth(a: &SynthArgs) -> Result<(), Error> {
    let spec = SynthSpec::default_for(a.seed);
    let shift = SalParams {
        tx: physical_to_normalized(a.shift_x_mm, Axis::X, &spec.grid)?,
        ty: physical_to_normalized(a.shift_y_mm, Axis::Y, &spec.grid)?,
        phi: a.rotation_deg.to_radians(),
        ..SalParams::identity()
    };
    let ds = generate_session(&spec, a.session, &shift)?;
    write_container(&a.out, &ds)?;
    println!(
        "wrote {} segments ({} gestures) to {}",
        ds.segments.len(),
        ds.n_gestures(),
        a.out.display()
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<(), Error> {
    let cfg = a.common.config()?;
    let data = load_features(&a.train, &cfg)?;
    let mut report = ExperimentReport::new(
        "train",
        cfg.train.seed,
        serde_json::json!({ "experiment": echo(&cfg), "train": a.train, "full": a.full }),
    );
    let model = if a.full {
        train_full(&data, &cfg)?
    } else {
        let heldout = random_heldout(&data, &mut stream(cfg.train.seed, &[key("train"), key("heldout")]));
        let r = train_intrasession(&data, &cfg, &heldout)?;
        report.conditions.push(ConditionResult {
            name: "intrasession".into(),
            raw_accuracy: r.raw_accuracy,
            mv_accuracy: r.mv_accuracy,
            learned: None,
            frozen: None,
        });
        r.model
    };
    report.summary.insert("training_frames".into(), data.n_frames() as f64);
    if let Some(p) = &a.out_model {
        write_json(p, &model)?;
    }
    emit(&report, a.common.report.as_deref())
}

fn cmd_adapt(a: &AdaptArgs) -> Result<(), Error> {
    let cfg = a.common.config()?;
    let freeze: FreezeMask = a.freeze.parse()?;
    let model: Model = read_json(&a.model_in)?;
    let adapt = load_features(&a.adapt, &cfg)?;
    let (adapt_reps, held, chosen) = split_adaptation(&adapt, cfg.train.seed)?;
    let test = match &a.test {
        Some(p) => load_features(p, &cfg)?.reps,
        None => held,
    };
    let base = SalLayer::new(adapt.grid)
        .with_sampler(cfg.sampler(&adapt.grid))
        .with_freeze(freeze);
    let adapted = adapt_intersession(&model, &base, &adapt_reps, &cfg.train)?;
    let mut report = ExperimentReport::new(
        "adapt",
        cfg.train.seed,
        serde_json::json!({
            "experiment": echo(&cfg),
            "model": a.model_in,
            "adapt": a.adapt,
            "test": a.test,
            "freeze": freeze.names(),
            "adaptation_repetitions": chosen,
        }),
    );
    let (raw, mv) = evaluate_majority(&model, &base, &test, cfg.window, adapt.frame_rate)?;
    report.conditions.push(ConditionResult {
        name: "Zero-shot".into(),
        raw_accuracy: raw,
        mv_accuracy: mv,
        learned: None,
        frozen: None,
    });
    let (raw, mv) = evaluate_majority(&model, &adapted, &test, cfg.window, adapt.frame_rate)?;
    report.conditions.push(ConditionResult {
        name: "Adapted".into(),
        raw_accuracy: raw,
        mv_accuracy: mv,
        learned: Some(adapted.params),
        frozen: Some(freeze.names().into_iter().map(String::from).collect()),
    });
    if let Some(p) = &a.out_sal {
        write_json(p, &adapted)?;
    }
    emit(&report, a.common.report.as_deref())
}

fn cmd_eval(a: &EvalArgs) -> Result<(), Error> {
    let cfg = a.common.config()?;
    let model: Model = read_json(&a.model_in)?;
    let test = load_features(&a.test, &cfg)?;
    let sal = match &a.sal {
        Some(p) => read_json::<SalLayer>(p)?,
        None => SalLayer::new(test.grid).with_sampler(cfg.sampler(&test.grid)),
    };
    if sal.grid != test.grid {
        return Err(Error::InvalidParameter("spatial layer and test session use different grids".into()));
    }
    let (raw, mv) = evaluate_majority(&model, &sal, &test.reps, cfg.window, test.frame_rate)?;
    let mut report = ExperimentReport::new(
        "eval",
        cfg.train.seed,
        serde_json::json!({ "experiment": echo(&cfg), "model": a.model_in, "test": a.test, "sal": a.sal }),
    );
    report.conditions.push(ConditionResult {
        name: "Evaluation".into(),
        raw_accuracy: raw,
        mv_accuracy: mv,
        learned: (!sal.is_identity()).then_some(sal.params),
        frozen: None,
    });
    emit(&report, a.common.report.as_deref())
}

fn cmd_perturb(a: &PerturbArgs) -> Result<(), Error> {
    let cfg = a.common.config()?;
    if a.trials == 0 {
        return Err(Error::InvalidParameter("--trials must be positive".into()));
    }
    let data = load_features(&a.train, &cfg)?;
    let report = run_perturbation_experiment(&data, &cfg, &PerturbationRanges::default(), a.trials)?;
    emit(&report, a.common.report.as_deref())
}

fn cmd_pair(a: &PairArgs, ablation: bool) -> Result<(), Error> {
    let cfg = a.common.config()?;
    let train = load_features(&a.train, &cfg)?;
    let adapt = load_features(&a.adapt, &cfg)?;
    let report = if ablation {
        run_ablation(&train, &adapt, &cfg)?
    } else {
        run_intersession(&train, &adapt, &cfg)?
    };
    emit(&report, a.common.report.as_deref())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<(), Error> {
    if a.instances == 0 {
        return Err(Error::InvalidParameter("--instances must be positive".into()));
    }
    let cfg = GradCheckConfig {
        instances: a.instances,
        seed: a.seed,
        model: a.model,
        ..GradCheckConfig::default()
    };
    let g = run_gradcheck(crate::geometry::GridSpec::csl(), 8, &cfg)?;
    let mut report = ExperimentReport::new(
        "gradcheck",
        a.seed,
        serde_json::json!({ "gradcheck": echo(&cfg), "tolerance": a.tolerance, "grid": echo(&g.grid) }),
    );
    for (k, v) in &g.max_relative_error {
        report.summary.insert(format!("max_relative_error.{k}"), *v);
    }
    report.summary.insert("redrawn".into(), g.redrawn as f64);
    emit(&report, a.report.as_deref())?;
    if g.worst() >= a.tolerance {
        return Err(Error::Numerical(format!(
            "largest relative error {:.3e} exceeds tolerance {:.1e}",
            g.worst(),
            a.tolerance
        )));
    }
    Ok(())
}

/// Dispatches an already parsed command line.
pub fn execute(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Adapt(a) => cmd_adapt(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Perturb(a) => cmd_perturb(a),
        Command::Ablate(a) => cmd_pair(a, true),
        Command::Intersession(a) => cmd_pair(a, false),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

/// Parses `argv` (program name first), runs it and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            exit_code(&e)
        }
    }
}

/// Pretty JSON of a report, as written by `--report`.
pub fn render_report(report: &ExperimentReport) -> Result<String, Error> {
    to_json(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn parser_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run(["salnet", "train", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["salnet", "train"]), EXIT_USAGE);
        assert_eq!(run(["salnet", "perturb", "--train", "x.bsac", "--dropout", "1.5"]), EXIT_USAGE);
        assert_eq!(run(["salnet", "adapt", "--model-in", "m", "--adapt", "a", "--freeze", "tz"]), EXIT_USAGE);
    }

    #[test]
    fn missing_file_is_data_error() {
        assert_eq!(run(["salnet", "train", "--train", "/nonexistent/x.bsac"]), EXIT_DATA);
    }
}
