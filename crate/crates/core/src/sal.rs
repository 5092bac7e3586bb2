//! Spatial adaptation layer with learnable baseline normalization.
//!
//! The forward pass subtracts the per-channel baseline `B` from the activity
//! image and then resamples the result under the layer's affine transform.
//! Subtracting first keeps `B` in the channel frame of the recording being
//! adapted.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, SalParams, N_AFFINE, PARAM_NAMES};
use crate::resampler::{
    chain_to_params, sal_grid, Frame, SampleGradients, SamplerConfig, SamplingPlan,
};

/// RMS activity image arranged on the electrode grid.
pub type ActivityImage = Frame;

/// Which trainable scalars are held fixed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeMask {
    pub affine: [bool; N_AFFINE],
    pub bias: bool,
}

impl FreezeMask {
    pub const NONE: FreezeMask = FreezeMask {
        affine: [false; N_AFFINE],
        bias: false,
    };

    pub const ALL: FreezeMask = FreezeMask {
        affine: [true; N_AFFINE],
        bias: true,
    };

    /// Everything trainable except the listed names.
    pub fn frozen(names: &[&str]) -> Result<Self> {
        let mut m = FreezeMask::NONE;
        for name in names {
            m.set(name, true)?;
        }
        Ok(m)
    }

    /// Everything frozen except the listed names.
    pub fn trainable_only(names: &[&str]) -> Result<Self> {
        let mut m = FreezeMask::ALL;
        for name in names {
            m.set(name, false)?;
        }
        Ok(m)
    }

    fn set(&mut self, name: &str, frozen: bool) -> Result<()> {
        if name == "bias" {
            self.bias = frozen;
            return Ok(());
        }
        match PARAM_NAMES.iter().position(|p| *p == name) {
            Some(k) => {
                self.affine[k] = frozen;
                Ok(())
            }
            None => Err(Error::InvalidParameter(format!(
                "unknown parameter {name:?} (expected one of tx, ty, phi, sx, sy, shx, shy, bias)"
            ))),
        }
    }

    pub fn affine_all_frozen(&self) -> bool {
        self.affine.iter().all(|&f| f)
    }

    /// Names of the frozen scalars, in canonical order.
    pub fn names(&self) -> Vec<&'static str> {
        let mut out: Vec<&'static str> = PARAM_NAMES
            .iter()
            .zip(self.affine)
            .filter(|(_, f)| *f)
            .map(|(n, _)| *n)
            .collect();
        if self.bias {
            out.push("bias");
        }
        out
    }
}

impl FromStr for FreezeMask {
    type Err = Error;

    /// Parses a comma list such as `tx,ty,bias`. An empty string freezes nothing.
    fn from_str(s: &str) -> Result<Self> {
        let names: Vec<&str> = s
            .split(',')
            .map(str::trim)
            .filter(|n| !n.is_empty())
            .collect();
        FreezeMask::frozen(&names)
    }
}

/// Input-side adaptation stage: affine resampling plus a per-channel baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalLayer {
    pub grid: GridSpec,
    pub params: SalParams,
    pub bias: Vec<f64>,
    pub freeze: FreezeMask,
    pub sampler: SamplerConfig,
}

/// Gradients returned by [`sal_backward`]. Frozen entries are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SalGradients {
    pub affine: [f64; N_AFFINE],
    pub bias: Vec<f64>,
    pub input: Vec<f64>,
}

impl SalLayer {
    /// Identity transform and zero baseline.
    pub fn new(grid: GridSpec) -> Self {
        SalLayer {
            grid,
            params: SalParams::identity(),
            bias: vec![0.0; grid.len()],
            freeze: FreezeMask::NONE,
            sampler: SamplerConfig::default(),
        }
    }

    pub fn with_sampler(mut self, sampler: SamplerConfig) -> Self {
        self.sampler = sampler;
        self
    }

    pub fn with_freeze(mut self, freeze: FreezeMask) -> Self {
        self.freeze = freeze;
        self
    }

    /// Starts the baseline from a rest-activity estimate instead of zeros.
    pub fn with_baseline(mut self, baseline: Vec<f64>) -> Result<Self> {
        if baseline.len() != self.grid.len() {
            return Err(Error::Dimension {
                expected: self.grid.len(),
                got: baseline.len(),
            });
        }
        self.bias = baseline;
        Ok(self)
    }

    pub fn is_identity(&self) -> bool {
        self.params == SalParams::identity() && self.bias.iter().all(|&b| b == 0.0)
    }

    /// Number of scalars in the flat parameter vector (7 affine + H*W bias).
    pub fn n_params(&self) -> usize {
        N_AFFINE + self.bias.len()
    }

    pub fn param_vector(&self) -> Vec<f64> {
        let mut v = self.params.to_array().to_vec();
        v.extend_from_slice(&self.bias);
        v
    }

    pub fn set_param_vector(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_params() {
            return Err(Error::Dimension {
                expected: self.n_params(),
                got: v.len(),
            });
        }
        let mut a = [0.0; N_AFFINE];
        a.copy_from_slice(&v[..N_AFFINE]);
        let params = SalParams::from_array(a);
        params.validate()?;
        self.params = params;
        self.bias.copy_from_slice(&v[N_AFFINE..]);
        Ok(())
    }

    /// Trainable flag per entry of [`SalLayer::param_vector`].
    pub fn trainable_mask(&self) -> Vec<bool> {
        let mut m: Vec<bool> = self.freeze.affine.iter().map(|f| !f).collect();
        m.extend(std::iter::repeat_n(!self.freeze.bias, self.bias.len()));
        m
    }

    /// Caches the sampling taps for repeated evaluation at fixed parameters.
    pub fn prepare(&self) -> Result<PreparedSal<'_>> {
        let probe = Frame::zeros(self.grid.height, self.grid.width);
        let grid = sal_grid(&probe, &self.params)?;
        Ok(PreparedSal {
            layer: self,
            plan: SamplingPlan::new(self.grid.height, self.grid.width, &grid, &self.sampler)?,
        })
    }

    fn check(&self, a: &Frame) -> Result<()> {
        if a.height != self.grid.height || a.width != self.grid.width {
            return Err(Error::Dimension {
                expected: self.grid.len(),
                got: a.len(),
            });
        }
        Ok(())
    }

    fn subtract_baseline(&self, a: &Frame) -> Frame {
        Frame {
            height: a.height,
            width: a.width,
            values: a.values.iter().zip(&self.bias).map(|(u, b)| u - b).collect(),
        }
    }
}

/// A layer together with its sampling taps at the current parameters.
pub struct PreparedSal<'a> {
    layer: &'a SalLayer,
    plan: SamplingPlan,
}

impl PreparedSal<'_> {
    pub fn forward(&self, a: &ActivityImage) -> Result<ActivityImage> {
        self.layer.check(a)?;
        self.plan.sample(&self.layer.subtract_baseline(a))
    }

    /// Input and sampling-coordinate gradients without contracting the
    /// latter onto the affine coefficients. Summing the coordinate gradients
    /// over a batch and calling [`PreparedSal::chain`] once gives the same
    /// result as per-item [`PreparedSal::backward`].
    pub fn backward_coords(&self, a: &ActivityImage, upstream: &Frame) -> Result<SampleGradients> {
        self.layer.check(a)?;
        self.plan.backward(&self.layer.subtract_baseline(a), upstream)
    }

    /// Affine coefficient gradients for summed coordinate gradients; frozen
    /// coefficients are zero.
    pub fn chain(&self, d_coords: &[(f64, f64)]) -> Result<[f64; N_AFFINE]> {
        let layer = self.layer;
        if layer.freeze.affine_all_frozen() {
            return Ok([0.0; N_AFFINE]);
        }
        let mut affine = chain_to_params(layer.grid.height, layer.grid.width, &layer.params, d_coords)?;
        for (v, frozen) in affine.iter_mut().zip(layer.freeze.affine) {
            if frozen {
                *v = 0.0;
            }
        }
        Ok(affine)
    }

    pub fn backward(&self, a: &ActivityImage, upstream: &Frame) -> Result<SalGradients> {
        let g = self.backward_coords(a, upstream)?;
        let affine = self.chain(&g.d_coords)?;
        let bias = if self.layer.freeze.bias {
            vec![0.0; g.d_input.len()]
        } else {
            g.d_input.iter().map(|d| -d).collect()
        };
        Ok(SalGradients {
            affine,
            bias,
            input: g.d_input,
        })
    }
}

/// Baseline subtraction followed by affine resampling.
pub fn sal_forward(layer: &SalLayer, a: &ActivityImage) -> Result<ActivityImage> {
    layer.prepare()?.forward(a)
}

/// Gradients of the loss with respect to the affine coefficients, the
/// baseline and the layer input. Entries belonging to frozen groups are zero;
/// the input gradient is always reported.
pub fn sal_backward(layer: &SalLayer, a: &ActivityImage, upstream: &Frame) -> Result<SalGradients> {
    layer.prepare()?.backward(a, upstream)
}

/// Per-channel mean of rest activity images.
pub fn estimate_baseline(rest: &[ActivityImage]) -> Result<Vec<f64>> {
    let first = rest
        .first()
        .ok_or_else(|| Error::Empty("baseline estimation needs at least one rest frame".into()))?;
    let mut sum = vec![0.0; first.len()];
    for f in rest {
        if f.len() != sum.len() {
            return Err(Error::Dimension {
                expected: sum.len(),
                got: f.len(),
            });
        }
        for (s, v) in sum.iter_mut().zip(&f.values) {
            *s += v;
        }
    }
    let n = rest.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// Classical baseline normalization: subtract a fixed rest estimate.
pub fn baseline_normalize(a: &ActivityImage, baseline: &[f64]) -> Result<ActivityImage> {
    if baseline.len() != a.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: baseline.len(),
        });
    }
    Ok(Frame {
        height: a.height,
        width: a.width,
        values: a.values.iter().zip(baseline).map(|(u, n)| u - n).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Axis;

    fn grid(h: usize, w: usize) -> GridSpec {
        GridSpec::new(h, w, 10.0, Axis::X).unwrap()
    }

    fn ramp(g: &GridSpec) -> Frame {
        Frame::for_grid(g, (0..g.len()).map(|i| (i as f64 * 0.37).sin() + 1.5).collect()).unwrap()
    }

    #[test]
    fn identity_layer_is_noop() {
        let g = grid(7, 24);
        let a = ramp(&g);
        let out = sal_forward(&SalLayer::new(g), &a).unwrap();
        for (x, y) in out.values.iter().zip(&a.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn bias_equal_to_input_zeros_output() {
        let g = grid(7, 24);
        let a = ramp(&g);
        let layer = SalLayer::new(g).with_baseline(a.values.clone()).unwrap();
        let out = sal_forward(&layer, &a).unwrap();
        assert!(out.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn one_step_translation_moves_hot_pixel() {
        let g = grid(5, 10);
        let mut a = Frame::zeros(5, 10);
        a.values[2 * 10 + 4] = 1.0;
        let mut layer = SalLayer::new(g);
        layer.params.tx = g.step(Axis::X);
        let out = sal_forward(&layer, &a).unwrap();
        // output column c reads input column c + 1
        let mut expected = Frame::zeros(5, 10);
        expected.values[2 * 10 + 3] = 1.0;
        for (x, y) in out.values.iter().zip(&expected.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let g = grid(4, 6);
        let mut layer = SalLayer::new(g);
        layer.params.phi = 0.1;
        let a = ramp(&g);
        let gr = sal_backward(&layer, &a, &Frame::zeros(4, 6)).unwrap();
        assert_eq!(gr.affine, [0.0; N_AFFINE]);
        assert!(gr.bias.iter().all(|&v| v == 0.0));
        assert!(gr.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frozen_affine_reports_bias_only() {
        let g = grid(4, 6);
        let mut layer = SalLayer::new(g).with_freeze(FreezeMask::trainable_only(&["bias"]).unwrap());
        layer.params.tx = 0.05;
        let a = ramp(&g);
        let up = Frame::for_grid(&g, vec![1.0; g.len()]).unwrap();
        let gr = sal_backward(&layer, &a, &up).unwrap();
        assert_eq!(gr.affine, [0.0; N_AFFINE]);
        assert!(gr.bias.iter().any(|&v| v != 0.0));
        assert_eq!(
            layer.trainable_mask().iter().filter(|&&t| t).count(),
            g.len()
        );
    }

    #[test]
    fn bias_grad_is_negated_input_grad() {
        let g = grid(4, 6);
        let mut layer = SalLayer::new(g);
        layer.params.tx = 0.13;
        let a = ramp(&g);
        let up = ramp(&g);
        let gr = sal_backward(&layer, &a, &up).unwrap();
        for (b, i) in gr.bias.iter().zip(&gr.input) {
            assert_eq!(*b, -*i);
        }
    }

    #[test]
    fn baseline_estimate() {
        let g = grid(2, 2);
        let f = ramp(&g);
        assert_eq!(estimate_baseline(std::slice::from_ref(&f)).unwrap(), f.values);

        let a = Frame::new(1, 1, vec![0.0]).unwrap();
        let b = Frame::new(1, 1, vec![2.0]).unwrap();
        assert_eq!(estimate_baseline(&[a, b]).unwrap(), vec![1.0]);

        assert!(matches!(estimate_baseline(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn freeze_mask_parsing() {
        let m: FreezeMask = "tx, phi,bias".parse().unwrap();
        assert!(m.affine[0] && m.affine[2] && m.bias && !m.affine[1]);
        assert_eq!(m.names(), vec!["tx", "phi", "bias"]);
        assert_eq!("".parse::<FreezeMask>().unwrap(), FreezeMask::NONE);
        assert!("tz".parse::<FreezeMask>().is_err());
    }

    #[test]
    fn param_vector_round_trip() {
        let g = grid(3, 4);
        let mut layer = SalLayer::new(g);
        let mut v = layer.param_vector();
        v[0] = 0.2;
        v[N_AFFINE + 3] = 1.5;
        layer.set_param_vector(&v).unwrap();
        assert_eq!(layer.params.tx, 0.2);
        assert_eq!(layer.bias[3], 1.5);
        assert_eq!(layer.param_vector(), v);
    }
}
