//! Spatial adaptation layer (SAL) and learnable baseline normalization (LBN)
//! for regular biosignal sensor arrays.
//!
//! The crate is organized bottom-up:
//!
//! * [`geometry`] builds the seven-parameter affine transform and its Jacobians.
//! * [`resampler`] performs bilinear sampling with analytic gradients.
//! * [`sal`] combines both with a learnable per-channel baseline.
//! * [`dsp`] holds Butterworth filters and RMS activity images.
//! * [`learn`] provides classifiers, loss, dropout, Adam and the warm-up schedule.
//! * [`protocol`] runs training, adaptation, perturbation and ablation experiments.
//! * [`synth`] generates desk-scale synthetic sessions and perturbations.
//! * [`io`] reads and writes BSAC1 containers, checkpoints and reports.
//! * [`cli`] is the command-line driver behind the `salnet` binary.

pub mod cli;
pub mod dsp;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod resampler;
pub mod io;
pub mod learn;
pub mod protocol;
pub mod rng;
pub mod sal;
pub mod synth;

pub use error::{Error, Result};
