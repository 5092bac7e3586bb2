use serde::{Deserialize, Serialize};

use crate::dsp::ArraySignal;
use crate::error::{Error, Result};
use crate::geometry::GridSpec;

/// Label reserved for rest (idle) recordings.
pub const REST_LABEL: u16 = u16::MAX;

/// One labeled multi-channel recording, time-major `f32` samples
/// (`time x H x W`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub label: u16,
    pub samples: Vec<f32>,
}

impl Segment {
    pub fn is_rest(&self) -> bool {
        self.label == REST_LABEL
    }

    pub fn n_samples(&self, grid: &GridSpec) -> usize {
        self.samples.len() / grid.len()
    }

    pub fn to_signal(&self, grid: &GridSpec, fs: f64) -> ArraySignal {
        ArraySignal {
            height: grid.height,
            width: grid.width,
            fs,
            samples: self.samples.iter().map(|&v| v as f64).collect(),
        }
    }
}

/// A recording session: gesture repetitions (and optional rest segments) on
/// a common grid and sampling rate. The `r`-th segment carrying label `g` is
/// repetition `r` of gesture `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDataset {
    pub grid: GridSpec,
    pub fs: f64,
    pub segments: Vec<Segment>,
}

impl SessionDataset {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(Error::InvalidParameter(format!("sampling rate must be positive, got {}", self.fs)));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if s.samples.len() % self.grid.len() != 0 {
                return Err(Error::InvalidParameter(format!(
                    "segment {i} has {} values, not a multiple of {} channels",
                    s.samples.len(),
                    self.grid.len()
                )));
            }
        }
        Ok(())
    }

    /// Number of gesture classes (largest non-rest label + 1).
    pub fn n_gestures(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| !s.is_rest())
            .map(|s| s.label as usize + 1)
            .max()
            .unwrap_or(0)
    }

    /// Gesture segments grouped by label, in recording order.
    pub fn repetitions(&self) -> Vec<Vec<&Segment>> {
        let mut out = vec![Vec::new(); self.n_gestures()];
        for s in self.segments.iter().filter(|s| !s.is_rest()) {
            out[s.label as usize].push(s);
        }
        out
    }

    /// Fewest repetitions recorded for any gesture.
    pub fn min_repetitions(&self) -> usize {
        self.repetitions().iter().map(Vec::len).min().unwrap_or(0)
    }

    pub fn rest_segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.is_rest())
    }
}
