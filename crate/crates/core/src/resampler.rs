//! Bilinear sampling of a frame on an arbitrary sampling grid, with the
//! adjoint with respect to both the image and the sampling coordinates.
//!
//! Normalized coordinates are mapped to fractional pixel indices before the
//! hat kernel `max(0, 1 - |d|)` is applied along each axis. Only the two
//! neighbouring taps per axis can carry weight, so each output pixel reads at
//! most four input pixels. Taps that fall outside the image contribute zero
//! unless wrapping is enabled for the circumferential axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    apply_affine, compose_affine, normalized_to_index, param_jacobians, target_grid, Axis, GridSpec,
    SalParams, SamplingGrid, N_AFFINE,
};

/// One H x W slice of the array signal, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Dimension {
                expected: height * width,
                got: values.len(),
            });
        }
        Ok(Frame { height, width, values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Frame {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn for_grid(g: &GridSpec, values: Vec<f64>) -> Result<Self> {
        Self::new(g.height, g.width, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    fn check_same_shape(&self, other: &Frame) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::Dimension {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(())
    }
}

/// Sampler options. The bilinear kernel itself has no parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Wrap tap indices around this axis instead of treating them as zero.
    pub wrap: Option<Axis>,
}

impl SamplerConfig {
    /// Wrapping along the grid's circumferential axis when `enabled`.
    pub fn circumferential(g: &GridSpec, enabled: bool) -> Self {
        SamplerConfig {
            wrap: enabled.then_some(g.circumferential_axis),
        }
    }
}

/// Gradients of a scalar loss through [`bilinear_sample`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGradients {
    pub d_input: Vec<f64>,
    /// Derivatives with respect to the normalized sampling coordinates.
    pub d_coords: Vec<(f64, f64)>,
}

#[derive(Clone, Copy)]
struct Tap {
    index: Option<usize>,
    weight: f64,
    /// Derivative of the kernel with respect to the sampling position, in
    /// pixel units. At an exact integer position the `m >= x` branch gives +1.
    slope: f64,
}

fn taps(pos: f64, n: usize, wrap: bool) -> [Tap; 2] {
    let base = pos.floor();
    let frac = pos - base;
    let resolve = |m: f64| -> Option<usize> {
        if wrap {
            Some((m as i64).rem_euclid(n as i64) as usize)
        } else if m >= 0.0 && m < n as f64 {
            Some(m as usize)
        } else {
            None
        }
    };
    let lower = Tap {
        index: resolve(base),
        weight: 1.0 - frac,
        slope: if frac == 0.0 { 1.0 } else { -1.0 },
    };
    let upper = if frac == 0.0 {
        Tap { index: None, weight: 0.0, slope: 0.0 }
    } else {
        Tap {
            index: resolve(base + 1.0),
            weight: frac,
            slope: 1.0,
        }
    };
    [lower, upper]
}

struct Prepared {
    x_taps: [Tap; 2],
    y_taps: [Tap; 2],
}

/// Interpolation taps of a sampling grid for frames of one shape. Building
/// the plan once lets many frames be sampled at the same coordinates.
pub struct SamplingPlan {
    height: usize,
    width: usize,
    taps: Vec<Prepared>,
    scale: (f64, f64),
}

impl SamplingPlan {
    pub fn new(height: usize, width: usize, s: &SamplingGrid, cfg: &SamplerConfig) -> Result<Self> {
        if s.coords.len() != height * width {
            return Err(Error::Dimension {
                expected: height * width,
                got: s.coords.len(),
            });
        }
        let taps = s
            .coords
            .iter()
            .map(|&(x, y)| {
                if !x.is_finite() || !y.is_finite() {
                    return Err(Error::NonFinite(format!("sampling coordinate ({x}, {y})")));
                }
                Ok(Prepared {
                    x_taps: taps(normalized_to_index(x, width), width, cfg.wrap == Some(Axis::X)),
                    y_taps: taps(normalized_to_index(y, height), height, cfg.wrap == Some(Axis::Y)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SamplingPlan {
            height,
            width,
            taps,
            scale: ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
        })
    }

    fn check(&self, u: &Frame) -> Result<()> {
        if u.height != self.height || u.width != self.width {
            return Err(Error::Dimension {
                expected: self.height * self.width,
                got: u.len(),
            });
        }
        Ok(())
    }

    pub fn sample(&self, u: &Frame) -> Result<Frame> {
        self.check(u)?;
        let values = self
            .taps
            .iter()
            .map(|p| {
                let mut v = 0.0;
                for ty in &p.y_taps {
                    let Some(row) = ty.index else { continue };
                    for tx in &p.x_taps {
                        let Some(col) = tx.index else { continue };
                        v += u.at(row, col) * tx.weight * ty.weight;
                    }
                }
                v
            })
            .collect();
        Ok(Frame {
            height: u.height,
            width: u.width,
            values,
        })
    }

    pub fn backward(&self, u: &Frame, upstream: &Frame) -> Result<SampleGradients> {
        self.check(u)?;
        u.check_same_shape(upstream)?;
        let (sx, sy) = self.scale;
        let mut d_input = vec![0.0; u.len()];
        let mut d_coords = Vec::with_capacity(u.len());
        for (p, &g) in self.taps.iter().zip(&upstream.values) {
            let mut dx = 0.0;
            let mut dy = 0.0;
            for ty in &p.y_taps {
                let Some(row) = ty.index else { continue };
                for tx in &p.x_taps {
                    let Some(col) = tx.index else { continue };
                    let val = u.at(row, col);
                    d_input[row * u.width + col] += g * tx.weight * ty.weight;
                    dx += val * tx.slope * ty.weight;
                    dy += val * tx.weight * ty.slope;
                }
            }
            d_coords.push((g * dx * sx, g * dy * sy));
        }
        Ok(SampleGradients { d_input, d_coords })
    }
}

/// Resamples `u` at the coordinates in `s`; output pixel `i` reads `s.coords[i]`.
pub fn bilinear_sample(u: &Frame, s: &SamplingGrid, cfg: &SamplerConfig) -> Result<Frame> {
    SamplingPlan::new(u.height, u.width, s, cfg)?.sample(u)
}

/// Adjoint of [`bilinear_sample`] for an upstream gradient on the output.
pub fn bilinear_backward(
    u: &Frame,
    s: &SamplingGrid,
    upstream: &Frame,
    cfg: &SamplerConfig,
) -> Result<SampleGradients> {
    SamplingPlan::new(u.height, u.width, s, cfg)?.backward(u, upstream)
}

/// Sampling grid produced by `p` on the identity lattice of `u`.
pub fn sal_grid(u: &Frame, p: &SalParams) -> Result<SamplingGrid> {
    let a = compose_affine(p)?;
    Ok(apply_affine(&a, &target_grid_for(u)))
}

fn target_grid_for(u: &Frame) -> SamplingGrid {
    target_grid(&GridSpec {
        height: u.height,
        width: u.width,
        ied_mm: 1.0,
        circumferential_axis: Axis::X,
    })
}

/// Contracts coordinate gradients with the affine Jacobians on the target lattice.
pub fn chain_to_params(
    height: usize,
    width: usize,
    p: &SalParams,
    d_coords: &[(f64, f64)],
) -> Result<[f64; N_AFFINE]> {
    let jac = param_jacobians(p)?;
    let target = target_grid(&GridSpec {
        height,
        width,
        ied_mm: 1.0,
        circumferential_axis: Axis::X,
    });
    let mut out = [0.0; N_AFFINE];
    for (&(xt, yt), &(gx, gy)) in target.coords.iter().zip(d_coords) {
        if gx == 0.0 && gy == 0.0 {
            continue;
        }
        for (k, j) in jac.iter().enumerate() {
            let (dxs, dys) = j.apply(xt, yt);
            out[k] += gx * dxs + gy * dys;
        }
    }
    Ok(out)
}

/// Gradient of the loss with respect to the seven affine coefficients, given
/// the upstream gradient on the resampled frame.
pub fn sal_param_grad(
    u: &Frame,
    p: &SalParams,
    upstream: &Frame,
    cfg: &SamplerConfig,
) -> Result<[f64; N_AFFINE]> {
    let grid = sal_grid(u, p)?;
    let grads = bilinear_backward(u, &grid, upstream, cfg)?;
    chain_to_params(u.height, u.width, p, &grads.d_coords)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct double sum over every input pixel, as in the kernel definition.
    fn quadruple_sum(u: &Frame, s: &SamplingGrid) -> Vec<f64> {
        s.coords
            .iter()
            .map(|&(x, y)| {
                let xs = normalized_to_index(x, u.width);
                let ys = normalized_to_index(y, u.height);
                let mut v = 0.0;
                for n in 0..u.height {
                    for m in 0..u.width {
                        v += u.at(n, m)
                            * (1.0 - (xs - m as f64).abs()).max(0.0)
                            * (1.0 - (ys - n as f64).abs()).max(0.0);
                    }
                }
                v
            })
            .collect()
    }

    /// Literal case split for the x coordinate derivative, in pixel units.
    fn literal_dx(u: &Frame, x: f64, y: f64) -> f64 {
        let xs = normalized_to_index(x, u.width);
        let ys = normalized_to_index(y, u.height);
        let mut d = 0.0;
        for n in 0..u.height {
            for m in 0..u.width {
                let mf = m as f64;
                let case = if (mf - xs).abs() >= 1.0 {
                    0.0
                } else if mf >= xs {
                    1.0
                } else {
                    -1.0
                };
                d += u.at(n, m) * (1.0 - (ys - n as f64).abs()).max(0.0) * case;
            }
        }
        d
    }

    fn frame(h: usize, w: usize, seed: u64) -> Frame {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let values = (0..h * w)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Frame::new(h, w, values).unwrap()
    }

    #[test]
    fn identity_grid_reproduces_input() {
        let u = frame(7, 24, 3);
        let g = target_grid_for(&u);
        let v = bilinear_sample(&u, &g, &SamplerConfig::default()).unwrap();
        for (a, b) in v.values.iter().zip(&u.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn center_of_two_by_two() {
        let u = Frame::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = SamplingGrid { coords: vec![(0.0, 0.0); 4] };
        let v = bilinear_sample(&u, &s, &SamplerConfig::default()).unwrap();
        assert!((v.values[0] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn outside_is_zero() {
        let u = Frame::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        // x index W + 2 = 4 lies well outside
        let x = -1.0 + 2.0 * 4.0;
        let s = SamplingGrid { coords: vec![(x, 0.0); 4] };
        let v = bilinear_sample(&u, &s, &SamplerConfig::default()).unwrap();
        assert!(v.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matches_quadruple_sum() {
        let u = frame(5, 9, 11);
        let coords: Vec<(f64, f64)> = (0..u.len())
            .map(|i| {
                let a = i as f64 * 0.37;
                (1.3 * a.sin(), 1.2 * (a * 1.7).cos())
            })
            .collect();
        let s = SamplingGrid { coords };
        let v = bilinear_sample(&u, &s, &SamplerConfig::default()).unwrap();
        for (a, b) in v.values.iter().zip(quadruple_sum(&u, &s)) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let u = frame(3, 3, 1);
        let s = SamplingGrid { coords: vec![(0.0, 0.0); 4] };
        assert!(matches!(
            bilinear_sample(&u, &s, &SamplerConfig::default()),
            Err(Error::Dimension { .. })
        ));
        let up = frame(3, 4, 1);
        let s = target_grid_for(&u);
        assert!(bilinear_backward(&u, &s, &up, &SamplerConfig::default()).is_err());
    }

    #[test]
    fn identity_backward_ones() {
        let u = frame(4, 6, 5);
        let s = target_grid_for(&u);
        let ones = Frame::new(4, 6, vec![1.0; 24]).unwrap();
        let g = bilinear_backward(&u, &s, &ones, &SamplerConfig::default()).unwrap();
        assert!(g.d_input.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn integer_coordinate_tie_break() {
        // 3x5 lattice coordinates are exactly representable
        let u = frame(3, 5, 8);
        let s = target_grid_for(&u);
        let mut up = Frame::zeros(3, 5);
        up.values[7] = 1.0;
        let g = bilinear_backward(&u, &s, &up, &SamplerConfig::default()).unwrap();
        let (x, y) = s.coords[7];
        assert_eq!(normalized_to_index(x, 5), 2.0);
        let expected = literal_dx(&u, x, y) * (u.width as f64 - 1.0) / 2.0;
        assert!((g.d_coords[7].0 - expected).abs() < 1e-14);
        // the m >= x branch selects the pixel itself
        assert!((g.d_coords[7].0 - u.values[7] * 2.0).abs() < 1e-14);
    }

    #[test]
    fn backward_matches_literal_case_split() {
        let u = frame(5, 7, 21);
        let coords: Vec<(f64, f64)> = (0..u.len())
            .map(|i| {
                let a = i as f64 * 0.61 + 0.1;
                (1.1 * a.cos(), 0.9 * (a * 1.3).sin())
            })
            .collect();
        let s = SamplingGrid { coords };
        let mut up = Frame::zeros(5, 7);
        for i in 0..up.len() {
            up.values[i] = 1.0;
        }
        let g = bilinear_backward(&u, &s, &up, &SamplerConfig::default()).unwrap();
        for (i, &(x, y)) in s.coords.iter().enumerate() {
            let expected = literal_dx(&u, x, y) * (u.width as f64 - 1.0) / 2.0;
            assert!((g.d_coords[i].0 - expected).abs() < 1e-12, "pixel {i}");
        }
    }

    #[test]
    fn wrap_reads_across_seam() {
        let u = Frame::new(2, 4, vec![1.0, 0.0, 0.0, 5.0, 1.0, 0.0, 0.0, 5.0]).unwrap();
        // half a step beyond the last column
        let step = 2.0 / 3.0;
        let s = SamplingGrid { coords: vec![(1.0 + step / 2.0, -1.0); 8] };
        let plain = bilinear_sample(&u, &s, &SamplerConfig::default()).unwrap();
        assert!((plain.values[0] - 2.5).abs() < 1e-12);
        let wrapped = bilinear_sample(&u, &s, &SamplerConfig { wrap: Some(Axis::X) }).unwrap();
        assert!((wrapped.values[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_zero_param_grad() {
        let u = frame(6, 8, 2);
        let p = SalParams { tx: 0.03, phi: 0.1, ..SalParams::identity() };
        let g = sal_param_grad(&u, &p, &Frame::zeros(6, 8), &SamplerConfig::default()).unwrap();
        assert_eq!(g, [0.0; N_AFFINE]);
    }
}
