//! Experimental protocols: intrasession training with the adaptation layer
//! held at identity, freeze-and-adapt across sessions, simulated perturbation
//! recovery, ablations over the trainable affine coefficients, and majority
//! voting evaluation.

pub mod dataset;
pub mod features;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use dataset::{Segment, SessionDataset, REST_LABEL};
pub use features::{extract_features, FeatureSet, PipelineConfig, Repetition};

use crate::error::{Error, Result};
use crate::geometry::{compose_affine, target_grid, AffineMatrix, Axis, GridSpec, SalParams, N_AFFINE};
use crate::learn::{argmax, cross_entropy_item, AdamState, Classifier, InputDropout, Model, TrainConfig};
use crate::resampler::{bilinear_sample, sal_grid, Frame, SamplerConfig};
use crate::rng::{key, stream, Rng};
use crate::sal::{FreezeMask, SalLayer};
use crate::synth::{sample_perturbation, PerturbationRanges};

/// Time span over which frame predictions are pooled by majority vote.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteWindow {
    /// One vote per repetition.
    FullSegment,
    /// Consecutive non-overlapping windows of this many milliseconds.
    Millis(f64),
}

impl VoteWindow {
    fn frames(&self, frame_rate: f64) -> Option<usize> {
        match *self {
            VoteWindow::FullSegment => None,
            VoteWindow::Millis(ms) => Some(((ms / 1000.0 * frame_rate).round() as usize).max(1)),
        }
    }
}

/// Everything needed to reproduce an experiment besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub window: VoteWindow,
    /// Wrap sampling around the circumferential axis.
    pub wrap: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            pipeline: PipelineConfig::default(),
            train: TrainConfig::default(),
            window: VoteWindow::FullSegment,
            wrap: false,
        }
    }
}

impl ExperimentConfig {
    pub fn sampler(&self, grid: &GridSpec) -> SamplerConfig {
        SamplerConfig::circumferential(grid, self.wrap)
    }
}

/// Accuracy of one experimental condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub name: String,
    pub raw_accuracy: f64,
    pub mv_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learned: Option<SalParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen: Option<Vec<String>>,
}

/// One simulated-perturbation trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub perturbation: SalParams,
    pub learned: SalParams,
    pub raw_accuracy_before: f64,
    pub mv_accuracy_before: f64,
    pub raw_accuracy_after: f64,
    pub mv_accuracy_after: f64,
    pub displacement_before_mm: f64,
    pub displacement_after_mm: f64,
}

/// Result document of any experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub conditions: Vec<ConditionResult>,
    #[serde(default)]
    pub trials: Vec<TrialResult>,
    #[serde(default)]
    pub summary: BTreeMap<String, f64>,
    /// Echo of the fully resolved configuration.
    pub config: serde_json::Value,
}

impl ExperimentReport {
    pub fn new(experiment: &str, seed: u64, config: serde_json::Value) -> Self {
        ExperimentReport {
            experiment: experiment.to_string(),
            seed,
            conditions: Vec::new(),
            trials: Vec::new(),
            summary: BTreeMap::new(),
            config,
        }
    }

    pub fn condition(&self, name: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        for c in &self.conditions {
            if !in_unit(c.raw_accuracy) || !in_unit(c.mv_accuracy) {
                return Err(Error::InvalidParameter(format!("accuracy out of [0, 1] in {}", c.name)));
            }
        }
        for t in &self.trials {
            if t.displacement_before_mm < 0.0 || t.displacement_after_mm < 0.0 {
                return Err(Error::InvalidParameter(format!("negative displacement in trial {}", t.trial)));
            }
        }
        Ok(())
    }
}

/// Condition names of the ablation study.
pub const ABLATION_CONDITIONS: [&str; 4] = [
    "LBN (no affine)",
    "No translation",
    "Translation only",
    "Circumferential translation only",
];

fn frame_of(grid: &GridSpec, values: Vec<f64>) -> Frame {
    Frame {
        height: grid.height,
        width: grid.width,
        values,
    }
}

fn flatten(reps: &[Repetition]) -> Vec<(&[f64], usize)> {
    reps.iter()
        .flat_map(|r| r.frames.iter().map(move |f| (f.as_slice(), r.label)))
        .collect()
}

/// Shuffled minibatches with the warm-up schedule; `step` receives the batch
/// indices and the learning rate for that iteration.
fn run_minibatches<F>(n_items: usize, epochs: usize, cfg: &TrainConfig, rng: &mut Rng, mut step: F) -> Result<()>
where
    F: FnMut(&[usize], f64, &mut Rng) -> Result<()>,
{
    let batch = cfg.batch_size.max(1);
    let iters_per_epoch = n_items.div_ceil(batch);
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut iter = 0;
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            step(chunk, cfg.lr_at(iter, iters_per_epoch), rng)?;
            iter += 1;
        }
    }
    Ok(())
}

fn check_loss(loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("loss became {loss}")))
    }
}

/// Trains `model` on every frame of `reps` with the classifier-side
/// hyperparameters of `cfg`. The adaptation layer is not involved.
pub fn train_classifier(model: &mut Model, reps: &[Repetition], cfg: &TrainConfig, epochs: usize, rng: &mut Rng) -> Result<()> {
    cfg.validate()?;
    let items = flatten(reps);
    if items.is_empty() {
        return Err(Error::Empty("no training frames".into()));
    }
    let dropout = InputDropout::new(cfg.dropout_p)?;
    let mut adam = AdamState::new(model.params().len());
    let g = model.n_classes();
    run_minibatches(items.len(), epochs, cfg, rng, |batch, lr, rng| {
        let mut grad = vec![0.0; model.params().len()];
        let mut logits = vec![0.0; g];
        let mut d_logits = vec![0.0; g];
        let mut loss = 0.0;
        for &i in batch {
            let (x, label) = items[i];
            let mut x = x.to_vec();
            dropout.apply(&mut x, rng);
            model.forward(&x, &mut logits);
            loss += cross_entropy_item(&logits, label, &mut d_logits)?;
            model.backward(&x, &d_logits, Some(&mut grad), None);
        }
        check_loss(loss)?;
        adam.step(model.params_mut(), &grad, lr)
    })
}

/// A classifier trained on one session plus its identity adaptation layer.
#[derive(Debug, Clone, PartialEq)]
pub struct IntrasessionResult {
    pub model: Model,
    pub sal: SalLayer,
    pub raw_accuracy: f64,
    pub mv_accuracy: f64,
    /// Held-out repetition index per gesture.
    pub heldout: Vec<usize>,
}

/// Picks one repetition index per gesture uniformly at random.
pub fn random_heldout(data: &FeatureSet, rng: &mut Rng) -> Vec<usize> {
    (0..data.n_classes)
        .map(|label| {
            let n = data.reps.iter().filter(|r| r.label == label).count().max(1);
            rng.gen_range(0..n)
        })
        .collect()
}

fn check_repetitions(data: &FeatureSet, needed: usize) -> Result<()> {
    for label in 0..data.n_classes {
        let n = data.reps.iter().filter(|r| r.label == label).count();
        if n < needed {
            return Err(Error::InsufficientData(format!(
                "gesture {label} has {n} repetitions, need at least {needed}"
            )));
        }
    }
    if data.n_classes == 0 {
        return Err(Error::InsufficientData("dataset has no gestures".into()));
    }
    Ok(())
}

/// Trains on every repetition except `heldout[label]` and evaluates on the
/// held-out ones. The adaptation layer stays at identity throughout.
pub fn train_intrasession(data: &FeatureSet, cfg: &ExperimentConfig, heldout: &[usize]) -> Result<IntrasessionResult> {
    check_repetitions(data, 2)?;
    let (test, train) = data.split(heldout);
    let mut rng = stream(cfg.train.seed, &[key("train")]);
    let mut model = Model::new(cfg.train.model, data.grid.len(), data.n_classes, &mut rng);
    train_classifier(&mut model, &train, &cfg.train, cfg.train.epochs, &mut rng)?;
    let sal = SalLayer::new(data.grid).with_sampler(cfg.sampler(&data.grid));
    let (raw, mv) = evaluate_majority(&model, &sal, &test, cfg.window, data.frame_rate)?;
    Ok(IntrasessionResult {
        model,
        sal,
        raw_accuracy: raw,
        mv_accuracy: mv,
        heldout: heldout.to_vec(),
    })
}

/// Trains on every repetition of a session.
pub fn train_full(data: &FeatureSet, cfg: &ExperimentConfig) -> Result<Model> {
    check_repetitions(data, 1)?;
    let mut rng = stream(cfg.train.seed, &[key("train")]);
    let mut model = Model::new(cfg.train.model, data.grid.len(), data.n_classes, &mut rng);
    train_classifier(&mut model, &data.reps, &cfg.train, cfg.train.epochs, &mut rng)?;
    Ok(model)
}

/// Optimizes only the unfrozen scalars of `sal` against the frozen
/// classifier on `adapt_data`, for `epochs * adapt_epoch_factor` epochs.
pub fn adapt_intersession(model: &Model, sal: &SalLayer, adapt_data: &[Repetition], cfg: &TrainConfig) -> Result<SalLayer> {
    let mut rng = stream(cfg.seed, &[key("adapt")]);
    adapt_with_rng(model, sal, adapt_data, cfg, &mut rng)
}

fn adapt_with_rng(model: &Model, sal: &SalLayer, adapt_data: &[Repetition], cfg: &TrainConfig, rng: &mut Rng) -> Result<SalLayer> {
    cfg.validate()?;
    let items = flatten(adapt_data);
    if items.is_empty() {
        return Err(Error::Empty("adaptation set has no frames".into()));
    }
    let mut layer = sal.clone();
    let trainable = layer.trainable_mask();
    if !trainable.iter().any(|&t| t) {
        return Ok(layer);
    }
    let grid = layer.grid;
    let dropout = InputDropout::new(cfg.dropout_p)?;
    let mut adam = AdamState::new(layer.n_params());
    let g = model.n_classes();
    let epochs = cfg.epochs * cfg.adapt_epoch_factor;

    run_minibatches(items.len(), epochs, cfg, rng, |batch, lr, rng| {
        let mut grad = vec![0.0; layer.n_params()];
        let mut loss = 0.0;
        {
            let prepared = layer.prepare()?;
            let mut logits = vec![0.0; g];
            let mut d_logits = vec![0.0; g];
            let mut d_coords = vec![(0.0, 0.0); grid.len()];
            let mut up = Frame::zeros(grid.height, grid.width);
            for &i in batch {
                let (x, label) = items[i];
                let mut x = x.to_vec();
                dropout.apply(&mut x, rng);
                let input = frame_of(&grid, x);
                let v = prepared.forward(&input)?;
                model.forward(&v.values, &mut logits);
                loss += cross_entropy_item(&logits, label, &mut d_logits)?;
                model.backward(&v.values, &d_logits, None, Some(&mut up.values));
                let sg = prepared.backward_coords(&input, &up)?;
                for (acc, d) in d_coords.iter_mut().zip(&sg.d_coords) {
                    acc.0 += d.0;
                    acc.1 += d.1;
                }
                for (acc, d) in grad[N_AFFINE..].iter_mut().zip(&sg.d_input) {
                    *acc -= d;
                }
            }
            grad[..N_AFFINE].copy_from_slice(&prepared.chain(&d_coords)?);
        }
        check_loss(loss)?;
        let mut params = layer.param_vector();
        adam.step_masked(&mut params, &grad, lr, Some(&trainable))?;
        layer.set_param_vector(&params)
    })?;
    Ok(layer)
}

/// Whole-classifier fine-tuning on the adaptation set, adaptation layer fixed.
pub fn fine_tune(model: &Model, adapt_data: &[Repetition], cfg: &TrainConfig) -> Result<Model> {
    let mut tuned = model.clone();
    let mut rng = stream(cfg.seed, &[key("fine-tune")]);
    train_classifier(&mut tuned, adapt_data, cfg, cfg.epochs * cfg.adapt_epoch_factor, &mut rng)?;
    Ok(tuned)
}

/// Mode of `predictions`; ties go to the smallest class index.
pub fn majority_vote(predictions: &[usize]) -> Option<usize> {
    let max = *predictions.iter().max()?;
    let mut counts = vec![0usize; max + 1];
    for &p in predictions {
        counts[p] += 1;
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    counts.iter().position(|&c| c == best)
}

/// Per-frame predictions through the adaptation layer and classifier.
pub fn predict_frames(model: &Model, sal: &SalLayer, frames: &[Vec<f64>]) -> Result<Vec<usize>> {
    let grid = sal.grid;
    let identity = sal.is_identity();
    let prepared = sal.prepare()?;
    let mut logits = vec![0.0; model.n_classes()];
    frames
        .iter()
        .map(|f| {
            if f.len() != model.n_inputs() {
                return Err(Error::Dimension {
                    expected: model.n_inputs(),
                    got: f.len(),
                });
            }
            if identity {
                model.forward(f, &mut logits);
            } else {
                let v = prepared.forward(&frame_of(&grid, f.clone()))?;
                model.forward(&v.values, &mut logits);
            }
            Ok(argmax(&logits))
        })
        .collect()
}

/// Frame-level accuracy and majority-voted accuracy over `window`.
pub fn evaluate_majority(
    model: &Model,
    sal: &SalLayer,
    data: &[Repetition],
    window: VoteWindow,
    frame_rate: f64,
) -> Result<(f64, f64)> {
    let mut frames_total = 0usize;
    let mut frames_correct = 0usize;
    let mut windows_total = 0usize;
    let mut windows_correct = 0usize;
    for rep in data {
        let preds = predict_frames(model, sal, &rep.frames)?;
        frames_total += preds.len();
        frames_correct += preds.iter().filter(|&&p| p == rep.label).count();
        let chunk = window.frames(frame_rate).unwrap_or(preds.len()).max(1);
        for w in preds.chunks(chunk) {
            windows_total += 1;
            if majority_vote(w) == Some(rep.label) {
                windows_correct += 1;
            }
        }
    }
    if frames_total == 0 {
        return Err(Error::Empty("no evaluation frames".into()));
    }
    Ok((
        frames_correct as f64 / frames_total as f64,
        windows_correct as f64 / windows_total as f64,
    ))
}

/// Mean electrode displacement in millimetres produced by an affine map.
pub fn displacement_affine(g: &GridSpec, a: &AffineMatrix) -> f64 {
    let (mx, my) = (g.mm_per_unit(Axis::X), g.mm_per_unit(Axis::Y));
    let coords = target_grid(g).coords;
    let total: f64 = coords
        .iter()
        .map(|&(x, y)| {
            let (xs, ys) = a.apply(x, y);
            (((xs - x) * mx).powi(2) + ((ys - y) * my).powi(2)).sqrt()
        })
        .sum();
    total / coords.len() as f64
}

/// Mean distance between corresponding electrodes of the identity grid and
/// the grid transformed by `p`, in millimetres.
pub fn displacement(g: &GridSpec, p: &SalParams) -> Result<f64> {
    Ok(displacement_affine(g, &compose_affine(p)?))
}

/// Resamples every frame with the transform of `p`.
pub fn perturb_repetitions(reps: &[Repetition], grid: &GridSpec, p: &SalParams, sampler: &SamplerConfig) -> Result<Vec<Repetition>> {
    let probe = Frame::zeros(grid.height, grid.width);
    let sg = sal_grid(&probe, p)?;
    reps.iter()
        .map(|r| {
            let frames = r
                .frames
                .iter()
                .map(|f| Ok(bilinear_sample(&frame_of(grid, f.clone()), &sg, sampler)?.values))
                .collect::<Result<Vec<_>>>()?;
            Ok(Repetition { frames, ..r.clone() })
        })
        .collect()
}

fn config_echo<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).unwrap_or(serde_json::Value::Null)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Serialize)]
struct PerturbationEcho<'a> {
    experiment: &'a ExperimentConfig,
    ranges: &'a PerturbationRanges,
    n_trials: usize,
    heldout: &'a [usize],
}

/// Trains on all but one randomly held-out repetition per gesture, then for
/// each trial corrupts the held-out activity images with a random spatial
/// perturbation, adapts the affine coefficients only (no baseline term) on
/// them and reports accuracy and electrode displacement before and after.
pub fn run_perturbation_experiment(
    data: &FeatureSet,
    cfg: &ExperimentConfig,
    ranges: &PerturbationRanges,
    n_trials: usize,
) -> Result<ExperimentReport> {
    let seed = cfg.train.seed;
    let heldout = random_heldout(data, &mut stream(seed, &[key("perturb"), key("heldout")]));
    let intra = train_intrasession(data, cfg, &heldout)?;
    let (test, _) = data.split(&heldout);
    let grid = data.grid;
    let sampler = cfg.sampler(&grid);

    let mut report = ExperimentReport::new(
        "perturbation",
        seed,
        config_echo(&PerturbationEcho {
            experiment: cfg,
            ranges,
            n_trials,
            heldout: &heldout,
        }),
    );
    report.conditions.push(ConditionResult {
        name: "intrasession".into(),
        raw_accuracy: intra.raw_accuracy,
        mv_accuracy: intra.mv_accuracy,
        learned: None,
        frozen: None,
    });

    let freeze = FreezeMask::trainable_only(&crate::geometry::PARAM_NAMES)?;
    for trial in 0..n_trials {
        let mut rng = stream(seed, &[key("perturb"), trial as u64]);
        let p = sample_perturbation(ranges, &grid, &mut rng)?;
        let corrupted = perturb_repetitions(&test, &grid, &p, &sampler)?;
        let zero = SalLayer::new(grid).with_sampler(sampler);
        let (raw_before, mv_before) = evaluate_majority(&intra.model, &zero, &corrupted, cfg.window, data.frame_rate)?;

        let init = zero.clone().with_freeze(freeze);
        let adapted = adapt_with_rng(&intra.model, &init, &corrupted, &cfg.train, &mut rng)?;
        let (raw_after, mv_after) = evaluate_majority(&intra.model, &adapted, &corrupted, cfg.window, data.frame_rate)?;

        let a_true = compose_affine(&p)?;
        let a_learned = compose_affine(&adapted.params)?;
        report.trials.push(TrialResult {
            trial,
            perturbation: p,
            learned: adapted.params,
            raw_accuracy_before: raw_before,
            mv_accuracy_before: mv_before,
            raw_accuracy_after: raw_after,
            mv_accuracy_after: mv_after,
            displacement_before_mm: displacement_affine(&grid, &a_true),
            displacement_after_mm: displacement_affine(&grid, &a_true.then_after(&a_learned)),
        });
    }

    let t = &report.trials;
    if !t.is_empty() {
        let recovered = t
            .iter()
            .filter(|r| r.mv_accuracy_after >= 0.8 * intra.mv_accuracy)
            .count();
        let before = median(t.iter().map(|r| r.displacement_before_mm).collect());
        let after = median(t.iter().map(|r| r.displacement_after_mm).collect());
        let s = &mut report.summary;
        s.insert("intrasession_mv_accuracy".into(), intra.mv_accuracy);
        s.insert("trials_recovered_80pct".into(), recovered as f64);
        s.insert("median_displacement_before_mm".into(), before);
        s.insert("median_displacement_after_mm".into(), after);
        s.insert("median_displacement_reduction".into(), 1.0 - after / before);
        s.insert(
            "median_mv_accuracy_before".into(),
            median(t.iter().map(|r| r.mv_accuracy_before).collect()),
        );
        s.insert(
            "median_mv_accuracy_after".into(),
            median(t.iter().map(|r| r.mv_accuracy_after).collect()),
        );
    }
    Ok(report)
}

/// Splits the adaptation session into one random repetition per gesture
/// (for adaptation) and the rest (for testing).
pub fn split_adaptation(data: &FeatureSet, seed: u64) -> Result<(Vec<Repetition>, Vec<Repetition>, Vec<usize>)> {
    check_repetitions(data, 2)?;
    let chosen = random_heldout(data, &mut stream(seed, &[key("adapt-split")]));
    let (adapt, test) = data.split(&chosen);
    Ok((adapt, test, chosen))
}

fn ablation_masks(axis: Axis) -> Result<[FreezeMask; 4]> {
    let circ = match axis {
        Axis::X => "tx",
        Axis::Y => "ty",
    };
    Ok([
        FreezeMask::trainable_only(&["bias"])?,
        FreezeMask::frozen(&["tx", "ty"])?,
        FreezeMask::trainable_only(&["tx", "ty", "bias"])?,
        FreezeMask::trainable_only(&[circ, "bias"])?,
    ])
}

fn adapt_condition(
    name: &str,
    model: &Model,
    sal: &SalLayer,
    adapt: &[Repetition],
    test: &[Repetition],
    cfg: &ExperimentConfig,
    frame_rate: f64,
) -> Result<(ConditionResult, SalLayer)> {
    let adapted = adapt_intersession(model, sal, adapt, &cfg.train)?;
    let (raw, mv) = evaluate_majority(model, &adapted, test, cfg.window, frame_rate)?;
    let frozen = sal.freeze.names().into_iter().map(String::from).collect();
    Ok((
        ConditionResult {
            name: name.to_string(),
            raw_accuracy: raw,
            mv_accuracy: mv,
            learned: Some(adapted.params),
            frozen: Some(frozen),
        },
        adapted,
    ))
}

/// Trains on `train`, then adapts to `adapt` under the four ablation freeze
/// masks (baseline always trainable), plus the zero-shot reference.
pub fn run_ablation(train: &FeatureSet, adapt: &FeatureSet, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if train.grid != adapt.grid {
        return Err(Error::InvalidParameter("sessions use different grids".into()));
    }
    let seed = cfg.train.seed;
    let model = train_full(train, cfg)?;
    let (adapt_reps, test, chosen) = split_adaptation(adapt, seed)?;
    let grid = train.grid;
    let base = SalLayer::new(grid).with_sampler(cfg.sampler(&grid));

    let mut report = ExperimentReport::new(
        "ablation",
        seed,
        serde_json::json!({ "experiment": config_echo(cfg), "adaptation_repetitions": chosen }),
    );
    let (raw, mv) = evaluate_majority(&model, &base, &test, cfg.window, adapt.frame_rate)?;
    report.conditions.push(ConditionResult {
        name: "Zero-shot".into(),
        raw_accuracy: raw,
        mv_accuracy: mv,
        learned: None,
        frozen: None,
    });
    for (name, mask) in ABLATION_CONDITIONS.iter().zip(ablation_masks(grid.circumferential_axis)?) {
        let sal = base.clone().with_freeze(mask);
        let (cond, _) = adapt_condition(name, &model, &sal, &adapt_reps, &test, cfg, adapt.frame_rate)?;
        report.conditions.push(cond);
    }
    Ok(report)
}

fn subtract_baseline(reps: &[Repetition], baseline: &[f64]) -> Vec<Repetition> {
    reps.iter()
        .map(|r| Repetition {
            frames: r
                .frames
                .iter()
                .map(|f| f.iter().zip(baseline).map(|(u, n)| u - n).collect())
                .collect(),
            ..r.clone()
        })
        .collect()
}

/// Train on one session, adapt on one repetition per gesture of another and
/// test on the remainder, comparing zero-shot, fine-tuning, SAL and SAL+LBN.
/// When both sessions carry rest segments, BN and SAL+BN are added.
pub fn run_intersession(train: &FeatureSet, adapt: &FeatureSet, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if train.grid != adapt.grid {
        return Err(Error::InvalidParameter("sessions use different grids".into()));
    }
    let seed = cfg.train.seed;
    let grid = train.grid;
    let model = train_full(train, cfg)?;
    let (adapt_reps, test, chosen) = split_adaptation(adapt, seed)?;
    let base = SalLayer::new(grid).with_sampler(cfg.sampler(&grid));
    let rate = adapt.frame_rate;

    let mut report = ExperimentReport::new(
        "intersession",
        seed,
        serde_json::json!({ "experiment": config_echo(cfg), "adaptation_repetitions": chosen }),
    );
    let plain = |name: &str, (raw, mv): (f64, f64)| ConditionResult {
        name: name.into(),
        raw_accuracy: raw,
        mv_accuracy: mv,
        learned: None,
        frozen: None,
    };
    report
        .conditions
        .push(plain("Zero-shot", evaluate_majority(&model, &base, &test, cfg.window, rate)?));

    let tuned = fine_tune(&model, &adapt_reps, &cfg.train)?;
    report
        .conditions
        .push(plain("Fine-tuning", evaluate_majority(&tuned, &base, &test, cfg.window, rate)?));

    let sal_only = base.clone().with_freeze(FreezeMask::frozen(&["bias"])?);
    report
        .conditions
        .push(adapt_condition("SAL", &model, &sal_only, &adapt_reps, &test, cfg, rate)?.0);
    report
        .conditions
        .push(adapt_condition("SAL + LBN", &model, &base, &adapt_reps, &test, cfg, rate)?.0);

    if !train.rest.is_empty() && !adapt.rest.is_empty() {
        let n_train = crate::sal::estimate_baseline(&train.rest_frames())?;
        let n_adapt = crate::sal::estimate_baseline(&adapt.rest_frames())?;
        let bn_train = FeatureSet {
            reps: subtract_baseline(&train.reps, &n_train),
            ..train.clone()
        };
        let bn_model = train_full(&bn_train, cfg)?;
        let bn_adapt = subtract_baseline(&adapt_reps, &n_adapt);
        let bn_test = subtract_baseline(&test, &n_adapt);
        report
            .conditions
            .push(plain("BN", evaluate_majority(&bn_model, &base, &bn_test, cfg.window, rate)?));
        report
            .conditions
            .push(adapt_condition("SAL + BN", &bn_model, &sal_only, &bn_adapt, &bn_test, cfg, rate)?.0);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::LogRegModel;

    #[test]
    fn majority_rules() {
        assert_eq!(majority_vote(&[1, 1, 2]), Some(1));
        assert_eq!(majority_vote(&[0, 1, 0, 1]), Some(0));
        assert_eq!(majority_vote(&[3, 2, 2, 3]), Some(2));
        assert_eq!(majority_vote(&[]), None);
    }

    #[test]
    fn displacement_cases() {
        let g = GridSpec::csl();
        assert_eq!(displacement(&g, &SalParams::identity()).unwrap(), 0.0);
        let p = SalParams { tx: g.step(Axis::X), ..SalParams::identity() };
        assert!((displacement(&g, &p).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn vote_window_frames() {
        assert_eq!(VoteWindow::Millis(150.0).frames(250.0), Some(38));
        assert_eq!(VoteWindow::Millis(1.0).frames(250.0), Some(1));
        assert_eq!(VoteWindow::FullSegment.frames(250.0), None);
    }

    fn tiny_features() -> FeatureSet {
        let grid = GridSpec::new(2, 2, 10.0, Axis::X).unwrap();
        let reps = (0..2)
            .flat_map(|label| {
                (0..3).map(move |rep_index| {
                    let mut v = vec![0.1; 4];
                    v[label] = 2.0;
                    Repetition { label, rep_index, frames: vec![v; 5] }
                })
            })
            .collect();
        FeatureSet { grid, frame_rate: 100.0, n_classes: 2, reps, rest: vec![] }
    }

    #[test]
    fn evaluation_counts_windows() {
        let data = tiny_features();
        let mut m = LogRegModel::zeros(4, 2);
        // class 1 wins only when input 1 is large
        m.params[4 + 1] = 1.0;
        m.params[0] = 0.5;
        let model = Model::LogReg(m);
        let sal = SalLayer::new(data.grid);
        let (raw, mv) = evaluate_majority(&model, &sal, &data.reps, VoteWindow::FullSegment, 100.0).unwrap();
        assert_eq!((raw, mv), (1.0, 1.0));
        assert!(evaluate_majority(&model, &sal, &[], VoteWindow::FullSegment, 100.0).is_err());
    }

    #[test]
    fn insufficient_repetitions() {
        let mut data = tiny_features();
        data.reps.retain(|r| r.rep_index == 0);
        let err = train_intrasession(&data, &ExperimentConfig::default(), &[0, 0]).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn empty_adaptation_set() {
        let model = Model::LogReg(LogRegModel::zeros(4, 2));
        let sal = SalLayer::new(GridSpec::new(2, 2, 10.0, Axis::X).unwrap());
        assert!(matches!(
            adapt_intersession(&model, &sal, &[], &TrainConfig::default()),
            Err(Error::Empty(_))
        ));
    }
}
