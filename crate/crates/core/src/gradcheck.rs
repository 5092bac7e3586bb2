//! Central finite-difference checks of the full analytic gradient chain:
//! bilinear sampler to the seven affine coefficients, the baseline term and
//! the classifier parameters.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalized_to_index, GridSpec, N_AFFINE, PARAM_NAMES};
use crate::learn::{cross_entropy_item, Classifier, Model, ModelKind};
use crate::resampler::{sal_grid, Frame, SamplerConfig};
use crate::rng::{key, stream, Rng};
use crate::sal::SalLayer;
use crate::synth::{sample_perturbation, PerturbationRanges};

/// Options of a gradient-check run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub instances: usize,
    pub seed: u64,
    pub model: ModelKind,
    /// Finite-difference step for the baseline and classifier parameters.
    pub step: f64,
    /// Step for the affine coefficients. Coordinates move by at most about
    /// 35 pixels per unit step, so 1e-5 stays inside `kink_margin`.
    pub affine_step: f64,
    /// Gradients smaller than this are compared in absolute terms.
    pub floor: f64,
    /// Instances whose sampling positions lie closer than this (in pixels)
    /// to an integer are redrawn, since the hat kernel has a kink there.
    pub kink_margin: f64,
    /// Classifier coordinates checked per instance; all of them when the
    /// model is smaller.
    pub classifier_samples: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            instances: 100,
            seed: 0,
            model: ModelKind::LogReg,
            step: 1e-4,
            affine_step: 1e-5,
            floor: 1e-6,
            kink_margin: 1e-3,
            classifier_samples: 2000,
        }
    }
}

/// Largest relative error seen per parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub config: GradCheckConfig,
    pub grid: GridSpec,
    pub instances: usize,
    /// Draws rejected for sitting on a kernel kink.
    pub redrawn: usize,
    pub max_relative_error: BTreeMap<String, f64>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.max_relative_error.values().copied().fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn loss_of(layer: &SalLayer, model: &Model, a: &Frame, label: usize) -> Result<f64> {
    let v = layer.prepare()?.forward(a)?;
    let mut logits = vec![0.0; model.n_classes()];
    model.forward(&v.values, &mut logits);
    let mut scratch = vec![0.0; logits.len()];
    cross_entropy_item(&logits, label, &mut scratch)
}

fn near_kink(layer: &SalLayer, margin: f64) -> Result<bool> {
    let g = layer.grid;
    let s = sal_grid(&Frame::zeros(g.height, g.width), &layer.params)?;
    let close = |pos: f64| (pos - pos.round()).abs() < margin;
    Ok(s.coords
        .iter()
        .any(|&(x, y)| close(normalized_to_index(x, g.width)) || close(normalized_to_index(y, g.height))))
}

/// True when a finite-difference step could flip a hidden ReLU unit.
fn near_relu_kink(inst: &Instance, step: f64) -> Result<bool> {
    let Model::Mlp(m) = &inst.model else {
        return Ok(false);
    };
    let v = inst.layer.prepare()?.forward(&inst.input)?;
    let reach = 10.0 * step * (1.0 + v.values.iter().fold(0.0f64, |a, x| a.max(x.abs())));
    Ok(m.pre_activations(&v.values).iter().any(|z| z.abs() < reach))
}

struct Instance {
    layer: SalLayer,
    model: Model,
    input: Frame,
    label: usize,
}

fn draw_instance(grid: GridSpec, n_classes: usize, kind: ModelKind, rng: &mut Rng) -> Result<Instance> {
    let params = sample_perturbation(&PerturbationRanges::default(), &grid, rng)?;
    let wrap = rng.gen_bool(0.5);
    let noise = Normal::new(0.0, 0.3).expect("valid normal");
    let bias: Vec<f64> = (0..grid.len()).map(|_| noise.sample(rng)).collect();
    let mut layer = SalLayer::new(grid)
        .with_sampler(SamplerConfig::circumferential(&grid, wrap))
        .with_baseline(bias)?;
    layer.params = params;

    let mut model = Model::new(kind, grid.len(), n_classes, rng);
    let w = Normal::new(0.0, 0.2).expect("valid normal");
    for p in model.params_mut() {
        *p = w.sample(rng);
    }
    let values = Uniform::new(0.5, 3.0).sample_iter(&mut *rng).take(grid.len()).collect();
    Ok(Instance {
        layer,
        model,
        input: Frame::for_grid(&grid, values)?,
        label: rng.gen_range(0..n_classes),
    })
}

/// Analytic gradients of one instance, grouped: affine, bias, classifier.
fn analytic(inst: &Instance) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let prepared = inst.layer.prepare()?;
    let v = prepared.forward(&inst.input)?;
    let mut logits = vec![0.0; inst.model.n_classes()];
    inst.model.forward(&v.values, &mut logits);
    let mut d_logits = vec![0.0; logits.len()];
    cross_entropy_item(&logits, inst.label, &mut d_logits)?;
    let mut d_params = vec![0.0; inst.model.params().len()];
    let mut up = Frame::zeros(v.height, v.width);
    inst.model
        .backward(&v.values, &d_logits, Some(&mut d_params), Some(&mut up.values));
    let g = prepared.backward(&inst.input, &up)?;
    Ok((g.affine.to_vec(), g.bias, d_params))
}

/// Runs the check on `config.instances` random instances on `grid`.
pub fn run_gradcheck(grid: GridSpec, n_classes: usize, config: &GradCheckConfig) -> Result<GradCheckReport> {
    grid.validate()?;
    if n_classes < 2 || config.instances == 0 || !(config.step > 0.0 && config.affine_step > 0.0) {
        return Err(Error::InvalidParameter(
            "gradcheck needs at least two classes, one instance and a positive step".into(),
        ));
    }
    let mut worst: BTreeMap<String, f64> = PARAM_NAMES
        .iter()
        .chain(["bias", "classifier"].iter())
        .map(|n| (n.to_string(), 0.0))
        .collect();
    let mut redrawn = 0;
    let mut update = |name: &str, a: f64, n: f64| {
        let e = relative_error(a, n, config.floor);
        let slot = worst.get_mut(name).expect("known group");
        // NaN must surface as a failure rather than vanish in max()
        *slot = if e.is_nan() { f64::INFINITY } else { slot.max(e) };
    };

    for i in 0..config.instances {
        let mut rng = stream(config.seed, &[key("gradcheck"), i as u64]);
        let inst = loop {
            let inst = draw_instance(grid, n_classes, config.model, &mut rng)?;
            if !near_kink(&inst.layer, config.kink_margin)? && !near_relu_kink(&inst, config.step)? {
                break inst;
            }
            redrawn += 1;
        };
        let (g_affine, g_bias, g_model) = analytic(&inst)?;

        let base = inst.layer.param_vector();
        let mut layer = inst.layer.clone();
        let fd = |k: usize, h: f64, layer: &mut SalLayer| -> Result<f64> {
            let mut p = base.clone();
            p[k] = base[k] + h;
            layer.set_param_vector(&p)?;
            let up = loss_of(layer, &inst.model, &inst.input, inst.label)?;
            p[k] = base[k] - h;
            layer.set_param_vector(&p)?;
            let down = loss_of(layer, &inst.model, &inst.input, inst.label)?;
            Ok((up - down) / (2.0 * h))
        };
        for k in 0..N_AFFINE {
            let n = fd(k, config.affine_step, &mut layer)?;
            update(PARAM_NAMES[k], g_affine[k], n);
        }
        for (c, &a) in g_bias.iter().enumerate() {
            let n = fd(N_AFFINE + c, config.step, &mut layer)?;
            update("bias", a, n);
        }

        let v = inst.layer.prepare()?.forward(&inst.input)?;
        let mut model = inst.model.clone();
        let mut logits = vec![0.0; model.n_classes()];
        let mut scratch = vec![0.0; logits.len()];
        let h = config.step;
        let mut coords: Vec<usize> = (0..g_model.len()).collect();
        if coords.len() > config.classifier_samples {
            coords = rand::seq::index::sample(&mut rng, g_model.len(), config.classifier_samples).into_vec();
        }
        for k in coords {
            let a = g_model[k];
            let orig = model.params()[k];
            model.params_mut()[k] = orig + h;
            model.forward(&v.values, &mut logits);
            let up = cross_entropy_item(&logits, inst.label, &mut scratch)?;
            model.params_mut()[k] = orig - h;
            model.forward(&v.values, &mut logits);
            let down = cross_entropy_item(&logits, inst.label, &mut scratch)?;
            model.params_mut()[k] = orig;
            update("classifier", a, (up - down) / (2.0 * h));
        }
    }
    Ok(GradCheckReport {
        config: *config,
        grid,
        instances: config.instances,
        redrawn,
        max_relative_error: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_passes() {
        let cfg = GradCheckConfig { instances: 3, ..Default::default() };
        let r = run_gradcheck(GridSpec::csl(), 4, &cfg).unwrap();
        assert_eq!(r.max_relative_error.len(), N_AFFINE + 2);
        assert!(r.worst() < 1e-4, "{:?}", r.max_relative_error);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-6), 0.0);
        assert!((relative_error(2.0, 1.0, 1e-6) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9, 1e-6) - 1e-3).abs() < 1e-15);
    }
}
