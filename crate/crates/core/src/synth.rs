//! Synthetic array recordings and random spatial perturbations.
//!
//! Each gesture is a sum of Gaussian activity blobs on the electrode grid.
//! Channel `c` of a repetition of gesture `k` carries
//! `a_k(c) * carrier_c(t) + baseline_c * noise_c(t)`, where the carrier is
//! unit-RMS white noise band-limited to 20-380 Hz and the noise is white.
//! Session-to-session electrode shift is emulated by moving the blob centers
//! through the shift's affine map, so the ground truth is exact.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dsp::{design_bandpass, BiquadCascade};
use crate::error::{Error, Result};
use crate::geometry::{compose_affine, physical_to_normalized, target_grid, Axis, GridSpec, SalParams};
use crate::protocol::dataset::{Segment, SessionDataset, REST_LABEL};
use crate::rng::{key, stream, Rng};

/// Generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub grid: GridSpec,
    pub fs: f64,
    pub n_gestures: usize,
    pub reps_per_gesture: usize,
    pub rest_segments: usize,
    pub segment_seconds: f64,
    /// Blob centers per gesture, normalized coordinates.
    pub blob_centers: Vec<Vec<(f64, f64)>>,
    /// Gaussian standard deviation of each blob, millimetres.
    pub blob_width_mm: f64,
    /// Peak gesture RMS relative to the mean baseline RMS.
    pub snr: f64,
    /// Baseline noise RMS per channel.
    pub baseline_level: Vec<f64>,
    /// Per-session relative baseline variation, uniform in `[-j, j]`.
    pub baseline_jitter: f64,
    /// Per-repetition relative amplitude variation, uniform in `[-j, j]`.
    pub amplitude_jitter: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Desk-scale 7x24 array at 1 kHz with eight two-blob gestures whose
    /// layout is drawn from `seed`.
    pub fn default_for(seed: u64) -> Self {
        let grid = GridSpec::csl();
        let n_gestures = 8;
        let mut rng = stream(seed, &[key("layout")]);
        let blob_centers = random_layout(&mut rng, n_gestures, 3, 0.37, 0.5);
        SynthSpec {
            grid,
            fs: 1000.0,
            n_gestures,
            reps_per_gesture: 10,
            rest_segments: 2,
            segment_seconds: 1.0,
            blob_centers,
            blob_width_mm: 9.0,
            snr: 4.0,
            baseline_level: vec![1.0; grid.len()],
            baseline_jitter: 0.3,
            amplitude_jitter: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.blob_centers.len() != self.n_gestures {
            return Err(Error::InvalidParameter(format!(
                "{} blob layouts for {} gestures",
                self.blob_centers.len(),
                self.n_gestures
            )));
        }
        for &(x, y) in self.blob_centers.iter().flatten() {
            if !(-1.0..=1.0).contains(&x) || !(-1.0..=1.0).contains(&y) {
                return Err(Error::InvalidParameter(format!("blob center ({x}, {y}) outside [-1, 1]^2")));
            }
        }
        if !(self.snr > 0.0) {
            return Err(Error::InvalidParameter("snr must be positive".into()));
        }
        if self.baseline_level.len() != self.grid.len() {
            return Err(Error::Dimension {
                expected: self.grid.len(),
                got: self.baseline_level.len(),
            });
        }
        if !(self.blob_width_mm > 0.0 && self.segment_seconds > 0.0) {
            return Err(Error::InvalidParameter("blob width and segment length must be positive".into()));
        }
        if self.n_gestures == 0 || self.n_gestures >= REST_LABEL as usize {
            return Err(Error::InvalidParameter(format!("unsupported gesture count {}", self.n_gestures)));
        }
        Ok(())
    }

    pub fn samples_per_segment(&self) -> usize {
        (self.segment_seconds * self.fs).round() as usize
    }
}

/// Primary blob centers evenly spaced along the width axis over
/// `[-x_extent, x_extent]` in shuffled gesture order, with random height;
/// secondary blobs anywhere in `[-x_extent, x_extent] x [-y_extent, y_extent]`.
fn random_layout(rng: &mut Rng, n_gestures: usize, blobs: usize, x_extent: f64, y_extent: f64) -> Vec<Vec<(f64, f64)>> {
    let ux = Uniform::new_inclusive(-x_extent, x_extent);
    let uy = Uniform::new_inclusive(-y_extent, y_extent);
    let mut slots: Vec<usize> = (0..n_gestures).collect();
    slots.shuffle(rng);
    let spacing = if n_gestures > 1 { 2.0 * x_extent / (n_gestures - 1) as f64 } else { 0.0 };
    slots
        .into_iter()
        .map(|slot| {
            let x = if n_gestures > 1 { -x_extent + spacing * slot as f64 } else { 0.0 };
            let mut centers = vec![(x, uy.sample(rng))];
            for _ in 1..blobs {
                centers.push((ux.sample(rng), uy.sample(rng)));
            }
            centers
        })
        .collect()
}

/// Sampling intervals for simulated spatial perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRanges {
    pub tx_mm: (f64, f64),
    pub ty_mm: (f64, f64),
    /// Radians.
    pub phi: (f64, f64),
    pub sx: (f64, f64),
    pub sy: (f64, f64),
    pub shx: (f64, f64),
    pub shy: (f64, f64),
}

impl Default for PerturbationRanges {
    /// Translations within 2 cm, rotations within 15 degrees, scales in
    /// `[0.8, 1.2]` and shears in `[-0.2, 0.2]`.
    fn default() -> Self {
        let phi = 15f64.to_radians();
        PerturbationRanges {
            tx_mm: (-20.0, 20.0),
            ty_mm: (-20.0, 20.0),
            phi: (-phi, phi),
            sx: (0.8, 1.2),
            sy: (0.8, 1.2),
            shx: (-0.2, 0.2),
            shy: (-0.2, 0.2),
        }
    }
}

impl PerturbationRanges {
    /// All intervals collapsed onto the identity transform.
    pub fn identity() -> Self {
        PerturbationRanges {
            tx_mm: (0.0, 0.0),
            ty_mm: (0.0, 0.0),
            phi: (0.0, 0.0),
            sx: (1.0, 1.0),
            sy: (1.0, 1.0),
            shx: (0.0, 0.0),
            shy: (0.0, 0.0),
        }
    }

    fn intervals(&self) -> [(f64, f64); 7] {
        [self.tx_mm, self.ty_mm, self.phi, self.sx, self.sy, self.shx, self.shy]
    }

    pub fn validate(&self) -> Result<()> {
        for (lo, hi) in self.intervals() {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::InvalidParameter(format!("interval [{lo}, {hi}] is not ordered")));
            }
        }
        if self.sx.0 <= 0.0 || self.sy.0 <= 0.0 {
            return Err(Error::InvalidParameter("scale ranges must be positive".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Draws each coefficient uniformly from its interval; millimetre
/// translations are converted to normalized units for `grid`.
pub fn sample_perturbation(r: &PerturbationRanges, grid: &GridSpec, rng: &mut Rng) -> Result<SalParams> {
    r.validate()?;
    let tx_mm = uniform(rng, r.tx_mm);
    let ty_mm = uniform(rng, r.ty_mm);
    Ok(SalParams {
        tx: physical_to_normalized(tx_mm, Axis::X, grid)?,
        ty: physical_to_normalized(ty_mm, Axis::Y, grid)?,
        phi: uniform(rng, r.phi),
        sx: uniform(rng, r.sx),
        sy: uniform(rng, r.sy),
        shx: uniform(rng, r.shx),
        shy: uniform(rng, r.shy),
    })
}

/// Unit-RMS band-limited noise source for one channel.
struct Carrier {
    filter: BiquadCascade,
    gain: f64,
}

impl Carrier {
    fn new(fs: f64) -> Result<Self> {
        let filter = design_bandpass(fs, 20.0, 380.0)?;
        // RMS gain for white input is the root energy of the impulse response
        let mut f = filter.clone();
        let mut energy = f.process(1.0).powi(2);
        for _ in 1..(fs as usize * 4).max(4096) {
            energy += f.process(0.0).powi(2);
        }
        Ok(Carrier {
            filter,
            gain: 1.0 / energy.sqrt(),
        })
    }
}

/// Per-channel activity amplitude of a gesture whose blobs sit at `centers`.
pub fn gesture_amplitude(spec: &SynthSpec, centers: &[(f64, f64)]) -> Vec<f64> {
    let g = &spec.grid;
    let mean_base = spec.baseline_level.iter().sum::<f64>() / spec.baseline_level.len() as f64;
    let (mx, my) = (g.mm_per_unit(Axis::X), g.mm_per_unit(Axis::Y));
    let two_var = 2.0 * spec.blob_width_mm.powi(2);
    target_grid(g)
        .coords
        .iter()
        .map(|&(x, y)| {
            let shape: f64 = centers
                .iter()
                .enumerate()
                .map(|(j, &(cx, cy))| {
                    // secondary blobs are weaker
                    let w = if j == 0 { 1.0 } else { 0.6 };
                    let d2 = ((x - cx) * mx).powi(2) + ((y - cy) * my).powi(2);
                    w * (-d2 / two_var).exp()
                })
                .sum();
            spec.snr * mean_base * shape
        })
        .collect()
}

fn render_segment(
    spec: &SynthSpec,
    carrier: &Carrier,
    amplitude: &[f64],
    baseline: &[f64],
    rng: &mut Rng,
) -> Vec<f32> {
    let channels = spec.grid.len();
    let n = spec.samples_per_segment();
    let mut out = vec![0f32; n * channels];
    let mut filters: Vec<BiquadCascade> = vec![carrier.filter.clone(); channels];
    // settle the carrier filters before recording
    let warmup = (spec.fs * 0.1) as usize;
    for f in filters.iter_mut() {
        for _ in 0..warmup {
            f.process(rng.sample(StandardNormal));
        }
    }
    for t in 0..n {
        for c in 0..channels {
            let white: f64 = rng.sample(StandardNormal);
            let carrier_v = filters[c].process(white) * carrier.gain;
            let noise: f64 = rng.sample(StandardNormal);
            out[t * channels + c] = (amplitude[c] * carrier_v + baseline[c] * noise) as f32;
        }
    }
    out
}

/// Generates session `session` of `spec` with its blob layout moved by `shift`.
pub fn generate_session(spec: &SynthSpec, session: usize, shift: &SalParams) -> Result<SessionDataset> {
    spec.validate()?;
    let a = compose_affine(shift)?;
    let carrier = Carrier::new(spec.fs)?;
    let mut rng = stream(spec.seed, &[key("session"), session as u64]);

    let jitter = spec.baseline_jitter;
    let baseline: Vec<f64> = spec
        .baseline_level
        .iter()
        .map(|&b| b * (1.0 + uniform(&mut rng, (-jitter, jitter))))
        .collect();

    let amplitudes: Vec<Vec<f64>> = spec
        .blob_centers
        .iter()
        .map(|centers| {
            let moved: Vec<(f64, f64)> = centers.iter().map(|&(x, y)| a.apply(x, y)).collect();
            gesture_amplitude(spec, &moved)
        })
        .collect();

    let mut segments = Vec::with_capacity(spec.n_gestures * spec.reps_per_gesture + spec.rest_segments);
    for _ in 0..spec.rest_segments {
        let zero = vec![0.0; spec.grid.len()];
        segments.push(Segment {
            label: REST_LABEL,
            samples: render_segment(spec, &carrier, &zero, &baseline, &mut rng),
        });
    }
    for rep in 0..spec.reps_per_gesture {
        for (label, amp) in amplitudes.iter().enumerate() {
            let scale = 1.0 + uniform(&mut rng, (-spec.amplitude_jitter, spec.amplitude_jitter));
            let amp: Vec<f64> = amp.iter().map(|v| v * scale).collect();
            let mut seg_rng = stream(spec.seed, &[key("segment"), session as u64, label as u64, rep as u64]);
            segments.push(Segment {
                label: label as u16,
                samples: render_segment(spec, &carrier, &amp, &baseline, &mut seg_rng),
            });
        }
    }
    Ok(SessionDataset {
        grid: spec.grid,
        fs: spec.fs,
        segments,
    })
}

/// One session per entry of `shifts`.
pub fn generate_sessions(spec: &SynthSpec, shifts: &[SalParams]) -> Result<Vec<SessionDataset>> {
    shifts
        .iter()
        .enumerate()
        .map(|(k, s)| generate_session(spec, k, s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_ranges_give_identity() {
        let mut rng = stream(1, &[]);
        let p = sample_perturbation(&PerturbationRanges::identity(), &GridSpec::csl(), &mut rng).unwrap();
        assert_eq!(p, SalParams::identity());
    }

    #[test]
    fn draws_stay_in_range() {
        let g = GridSpec::csl();
        let r = PerturbationRanges::default();
        let mut rng = stream(2, &[]);
        let max_tx = physical_to_normalized(20.0, Axis::X, &g).unwrap();
        let mut sum = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let p = sample_perturbation(&r, &g, &mut rng).unwrap();
            assert!(p.tx.abs() <= max_tx && p.phi.abs() <= r.phi.1);
            assert!((0.8..=1.2).contains(&p.sx) && (-0.2..=0.2).contains(&p.shy));
            sum += p.tx;
        }
        // uniform on [-a, a] has sigma a / sqrt(3)
        let sigma_mean = max_tx / 3f64.sqrt() / (n as f64).sqrt();
        assert!((sum / n as f64).abs() < 3.0 * sigma_mean);
        assert!((max_tx - 2.0 * 20.0 / 230.0).abs() < 1e-15);
    }

    #[test]
    fn inverted_ranges_rejected() {
        let r = PerturbationRanges { sx: (1.2, 0.8), ..PerturbationRanges::default() };
        assert!(sample_perturbation(&r, &GridSpec::csl(), &mut stream(0, &[])).is_err());
    }

    #[test]
    fn deterministic_generation() {
        let mut spec = SynthSpec::default_for(5);
        spec.reps_per_gesture = 1;
        spec.segment_seconds = 0.2;
        let a = generate_session(&spec, 0, &SalParams::identity()).unwrap();
        let b = generate_session(&spec, 0, &SalParams::identity()).unwrap();
        assert_eq!(a, b);
        let c = generate_session(&spec, 1, &SalParams::identity()).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.n_gestures(), 8);
        assert_eq!(a.rest_segments().count(), 2);
    }

    #[test]
    fn layout_inside_unit_square() {
        let spec = SynthSpec::default_for(9);
        spec.validate().unwrap();
        assert_eq!(spec.blob_centers.len(), 8);
    }
}
