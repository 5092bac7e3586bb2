//! Butterworth band-pass / band-stop design, biquad filtering and RMS
//! activity images.
//!
//! Filters are designed from an analog Butterworth low-pass prototype, mapped
//! to a band-pass or band-stop response, and discretized with the bilinear
//! transform after prewarping both band edges. Each prototype pole yields one
//! second-order section, so a prototype of order 2 produces a digital filter
//! of order 4 realized as two biquads.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::resampler::Frame;

/// Default analog prototype order. The band transform doubles it.
pub const DEFAULT_PROTOTYPE_ORDER: usize = 2;

/// Moving-average half-length used for activity images, in seconds.
pub const RMS_DELAY_SECONDS: f64 = 0.075;

/// A single-channel signal.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSignal {
    pub samples: Vec<f64>,
    pub fs: f64,
}

/// Multi-channel array recording, time-major: sample `t` of channel `c`
/// lives at `samples[t * channels + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArraySignal {
    pub height: usize,
    pub width: usize,
    pub fs: f64,
    pub samples: Vec<f64>,
}

impl ArraySignal {
    pub fn channels(&self) -> usize {
        self.height * self.width
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len() / self.channels().max(1)
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.samples.iter().skip(c).step_by(self.channels()).copied().collect()
    }
}

/// Second-order section `(b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    pub const IDENTITY: Biquad = Biquad {
        b0: 1.0,
        b1: 0.0,
        b2: 0.0,
        a1: 0.0,
        a2: 0.0,
    };

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b0 + z_inv * self.b1 + z2 * self.b2) / (1.0 + z_inv * self.a1 + z2 * self.a2)
    }

    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        [(-self.a1 + disc) / 2.0, (-self.a1 - disc) / 2.0]
    }
}

/// Cascade of biquads with transposed direct-form II state per section.
#[derive(Debug, Clone, PartialEq)]
pub struct BiquadCascade {
    pub sections: Vec<Biquad>,
    state: Vec<[f64; 2]>,
}

impl BiquadCascade {
    pub fn new(sections: Vec<Biquad>) -> Self {
        let state = vec![[0.0; 2]; sections.len()];
        BiquadCascade { sections, state }
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|s| *s = [0.0; 2]);
    }

    /// Processes one sample, advancing the internal state.
    pub fn process(&mut self, x: f64) -> f64 {
        let mut v = x;
        for (s, st) in self.sections.iter().zip(self.state.iter_mut()) {
            let y = s.b0 * v + st[0];
            st[0] = s.b1 * v - s.a1 * y + st[1];
            st[1] = s.b2 * v - s.a2 * y;
            v = y;
        }
        v
    }

    /// Complex response at `f_hz` for sampling rate `fs`.
    pub fn response(&self, f_hz: f64, fs: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * f_hz / fs);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude(&self, f_hz: f64, fs: f64) -> f64 {
        self.response(f_hz, fs).norm()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0 - 1e-9)
    }
}

fn check_band(fs: f64, lo: f64, hi: f64) -> Result<()> {
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::FilterDesign(format!("sampling rate must be positive, got {fs}")));
    }
    if !(lo > 0.0 && lo < hi && hi < fs / 2.0) {
        return Err(Error::FilterDesign(format!(
            "band edges must satisfy 0 < lo < hi < fs/2, got lo={lo}, hi={hi}, fs={fs}"
        )));
    }
    Ok(())
}

/// Left-half-plane poles of the normalized analog Butterworth low-pass, one
/// per conjugate pair (plus the real pole for odd orders).
fn prototype_poles(order: usize) -> Vec<Complex64> {
    (0..order)
        .map(|k| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect()
}

fn prewarp(f: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * f / fs).tan()
}

fn bilinear(s: Complex64, fs: f64) -> Complex64 {
    let k = 2.0 * fs;
    (k + s) / (k - s)
}

/// Denominator coefficients for the conjugate pair `{z, conj(z)}`.
fn pair_denominator(z: Complex64) -> (f64, f64) {
    (-2.0 * z.re, z.norm_sqr())
}

/// Collects one pole from every conjugate pair, sorted for a stable section order.
fn upper_half(poles: Vec<Complex64>) -> Vec<Complex64> {
    let mut out: Vec<Complex64> = poles.into_iter().filter(|p| p.im > 1e-12).collect();
    out.sort_by(|a, b| a.im.total_cmp(&b.im));
    out
}

fn validate_order(order: usize) -> Result<()> {
    if order == 0 || !order.is_multiple_of(2) {
        return Err(Error::FilterDesign(format!(
            "prototype order must be a positive even number, got {order}"
        )));
    }
    Ok(())
}

/// Butterworth band-pass. `prototype_order` 2 yields the usual fourth-order
/// digital filter.
pub fn design_bandpass_order(fs: f64, lo: f64, hi: f64, prototype_order: usize) -> Result<BiquadCascade> {
    check_band(fs, lo, hi)?;
    validate_order(prototype_order)?;
    let w1 = prewarp(lo, fs);
    let w2 = prewarp(hi, fs);
    let bw = w2 - w1;
    let w0_sq = w1 * w2;

    let mut analog = Vec::with_capacity(2 * prototype_order);
    for p in prototype_poles(prototype_order) {
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0_sq).sqrt();
        analog.push((pb + disc) / 2.0);
        analog.push((pb - disc) / 2.0);
    }
    let sections: Vec<Biquad> = upper_half(analog.into_iter().map(|s| bilinear(s, fs)).collect())
        .into_iter()
        .map(|z| {
            let (a1, a2) = pair_denominator(z);
            // one zero at z = 1 and one at z = -1 per section
            Biquad { b0: 1.0, b1: 0.0, b2: -1.0, a1, a2 }
        })
        .collect();

    // unity gain at the digital image of the analog center frequency
    let f0 = fs / PI * (w0_sq.sqrt() / (2.0 * fs)).atan();
    normalize_gain(sections, f0, fs)
}

/// Butterworth band-stop; see [`design_bandpass_order`] for the order convention.
pub fn design_bandstop_order(fs: f64, lo: f64, hi: f64, prototype_order: usize) -> Result<BiquadCascade> {
    check_band(fs, lo, hi)?;
    validate_order(prototype_order)?;
    let w1 = prewarp(lo, fs);
    let w2 = prewarp(hi, fs);
    let bw = w2 - w1;
    let w0_sq = w1 * w2;

    let mut analog = Vec::with_capacity(2 * prototype_order);
    for p in prototype_poles(prototype_order) {
        let q = bw / p;
        let disc = (q * q - 4.0 * w0_sq).sqrt();
        analog.push((q + disc) / 2.0);
        analog.push((q - disc) / 2.0);
    }
    let notch = bilinear(Complex64::new(0.0, w0_sq.sqrt()), fs);
    let sections: Vec<Biquad> = upper_half(analog.into_iter().map(|s| bilinear(s, fs)).collect())
        .into_iter()
        .map(|z| {
            let (a1, a2) = pair_denominator(z);
            Biquad { b0: 1.0, b1: -2.0 * notch.re, b2: 1.0, a1, a2 }
        })
        .collect();
    normalize_gain(sections, 0.0, fs)
}

fn normalize_gain(mut sections: Vec<Biquad>, f_ref: f64, fs: f64) -> Result<BiquadCascade> {
    let gain = BiquadCascade::new(sections.clone()).magnitude(f_ref, fs);
    if !(gain.is_finite() && gain > 0.0) {
        return Err(Error::FilterDesign(format!("degenerate reference gain {gain}")));
    }
    // spread the correction evenly across sections
    let per = gain.powf(-1.0 / sections.len() as f64);
    for s in &mut sections {
        s.b0 *= per;
        s.b1 *= per;
        s.b2 *= per;
    }
    let cascade = BiquadCascade::new(sections);
    if !cascade.is_stable() {
        return Err(Error::FilterDesign("designed filter is unstable".into()));
    }
    Ok(cascade)
}

/// Fourth-order Butterworth band-pass between `lo` and `hi` Hz.
pub fn design_bandpass(fs: f64, lo: f64, hi: f64) -> Result<BiquadCascade> {
    design_bandpass_order(fs, lo, hi, DEFAULT_PROTOTYPE_ORDER)
}

/// Fourth-order Butterworth band-stop between `lo` and `hi` Hz.
pub fn design_bandstop(fs: f64, lo: f64, hi: f64) -> Result<BiquadCascade> {
    design_bandstop_order(fs, lo, hi, DEFAULT_PROTOTYPE_ORDER)
}

/// Causal filtering from zero initial state.
pub fn filter_apply(f: &BiquadCascade, x: &ChannelSignal) -> ChannelSignal {
    let mut f = f.clone();
    f.reset();
    ChannelSignal {
        samples: x.samples.iter().map(|&v| f.process(v)).collect(),
        fs: x.fs,
    }
}

/// Filters every channel of an array recording independently.
pub fn filter_array(f: &BiquadCascade, x: &ArraySignal) -> ArraySignal {
    let channels = x.channels();
    let mut filters = vec![f.clone(); channels];
    filters.iter_mut().for_each(BiquadCascade::reset);
    let mut out = x.samples.clone();
    for frame in out.chunks_mut(channels) {
        for (v, filt) in frame.iter_mut().zip(filters.iter_mut()) {
            *v = filt.process(*v);
        }
    }
    ArraySignal { samples: out, ..x.clone() }
}

/// Half-window length for a sampling rate: `round(0.075 * fs)`.
pub fn default_t_rms(fs: f64) -> usize {
    (RMS_DELAY_SECONDS * fs).round() as usize
}

/// Instantaneous RMS per channel: square, moving average over `2 * t_rms + 1`
/// samples, square root.
///
/// The moving average is causal: image `k` covers samples `k ..= k + 2 t_rms`,
/// so it describes the signal at sample `k + t_rms`. The output has
/// `n - 2 t_rms` images.
pub fn activity_stream(x: &ArraySignal, t_rms: usize) -> Result<Vec<Frame>> {
    if t_rms < 1 {
        return Err(Error::InvalidParameter("t_rms must be at least 1".into()));
    }
    let channels = x.channels();
    if channels == 0 || !x.samples.len().is_multiple_of(channels) {
        return Err(Error::Dimension {
            expected: channels,
            got: x.samples.len(),
        });
    }
    let window = 2 * t_rms + 1;
    let n = x.n_samples();
    if n < window {
        return Err(Error::SignalTooShort { needed: window, got: n });
    }

    let mut sums = vec![0.0; channels];
    for t in 0..window {
        for (s, v) in sums.iter_mut().zip(&x.samples[t * channels..(t + 1) * channels]) {
            *s += v * v;
        }
    }
    let inv = 1.0 / window as f64;
    let mut out = Vec::with_capacity(n - window + 1);
    for k in 0..=(n - window) {
        if k > 0 {
            let old = &x.samples[(k - 1) * channels..k * channels];
            let new = &x.samples[(k + window - 1) * channels..(k + window) * channels];
            for c in 0..channels {
                sums[c] += new[c] * new[c] - old[c] * old[c];
            }
        }
        let values = sums.iter().map(|s| (s * inv).max(0.0).sqrt()).collect();
        out.push(Frame {
            height: x.height,
            width: x.width,
            values,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db(x: f64) -> f64 {
        20.0 * x.log10()
    }

    #[test]
    fn bandpass_response() {
        let fs = 1000.0;
        let f = design_bandpass(fs, 20.0, 380.0).unwrap();
        assert_eq!(f.sections.len(), 2);
        assert!(f.is_stable());
        let center = (20.0f64 * 380.0).sqrt();
        assert!((f.magnitude(center, fs) - 1.0).abs() < 0.01);
        assert!((db(f.magnitude(20.0, fs)) + 3.0103).abs() < 0.5);
        assert!((db(f.magnitude(380.0, fs)) + 3.0103).abs() < 0.5);
        assert!(db(f.magnitude(0.0, fs)) < -60.0);
    }

    #[test]
    fn bandstop_response() {
        let fs = 1000.0;
        let f = design_bandstop(fs, 45.0, 55.0).unwrap();
        assert!(f.is_stable());
        assert!(db(f.magnitude(50.0, fs)) < -20.0);
        assert!((f.magnitude(10.0, fs) - 1.0).abs() < 0.02);
        assert!((f.magnitude(200.0, fs) - 1.0).abs() < 0.02);
        assert!((f.magnitude(0.0, fs) - 1.0).abs() < 0.01);
    }

    #[test]
    fn higher_prototype_orders() {
        let f = design_bandpass_order(2048.0, 20.0, 380.0, 4).unwrap();
        assert_eq!(f.sections.len(), 4);
        assert!(f.is_stable());
        assert!((db(f.magnitude(20.0, 2048.0)) + 3.0103).abs() < 0.5);
    }

    #[test]
    fn invalid_edges() {
        assert!(design_bandpass(1000.0, 380.0, 20.0).is_err());
        assert!(design_bandpass(1000.0, 20.0, 500.0).is_err());
        assert!(design_bandstop(1000.0, 0.0, 55.0).is_err());
        assert!(design_bandpass_order(1000.0, 20.0, 380.0, 3).is_err());
    }

    #[test]
    fn zero_and_impulse() {
        let f = design_bandpass(1000.0, 20.0, 380.0).unwrap();
        let zero = ChannelSignal { samples: vec![0.0; 64], fs: 1000.0 };
        assert!(filter_apply(&f, &zero).samples.iter().all(|&v| v == 0.0));

        let id = BiquadCascade::new(vec![Biquad::IDENTITY]);
        let mut imp = vec![0.0; 16];
        imp[0] = 1.0;
        let x = ChannelSignal { samples: imp.clone(), fs: 1000.0 };
        assert_eq!(filter_apply(&id, &x).samples, imp);
    }

    #[test]
    fn activity_of_constant_and_sine() {
        let fs = 1000.0;
        let t_rms = default_t_rms(fs);
        assert_eq!(t_rms, 75);
        assert_eq!(2 * t_rms + 1, 151);

        let x = ArraySignal { height: 1, width: 2, fs, samples: [3.0, -2.0].repeat(400) };
        let a = activity_stream(&x, t_rms).unwrap();
        assert_eq!(a.len(), 400 - 150);
        for f in &a {
            assert!((f.values[0] - 3.0).abs() < 1e-9);
            assert!((f.values[1] - 2.0).abs() < 1e-9);
        }

        // 50 Hz sine, window spans 7.55 periods
        let samples: Vec<f64> = (0..2000).map(|t| (2.0 * PI * 50.0 * t as f64 / fs).sin()).collect();
        let x = ArraySignal { height: 1, width: 1, fs, samples };
        let a = activity_stream(&x, t_rms).unwrap();
        for f in &a {
            assert!((f.values[0] - 0.5f64.sqrt()).abs() / 0.5f64.sqrt() < 0.02);
        }
    }

    #[test]
    fn activity_too_short() {
        let x = ArraySignal { height: 1, width: 1, fs: 1000.0, samples: vec![1.0; 10] };
        assert!(matches!(activity_stream(&x, 5), Err(Error::SignalTooShort { needed: 11, got: 10 })));
        assert!(activity_stream(&x, 0).is_err());
    }
}
