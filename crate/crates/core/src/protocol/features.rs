use serde::{Deserialize, Serialize};

use super::dataset::SessionDataset;
use crate::dsp::{activity_stream, default_t_rms, design_bandpass, design_bandstop, filter_array};
use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::resampler::Frame;

/// How raw segments become classifier inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Band-pass 20-380 Hz and band-stop 45-55 Hz before RMS extraction.
    pub filter: bool,
    /// Moving-average half-length in samples; `None` uses 75 ms.
    pub t_rms: Option<usize>,
    /// Keep every n-th activity image.
    pub frame_stride: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            filter: true,
            t_rms: None,
            frame_stride: 1,
        }
    }
}

/// Activity images of one gesture repetition, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Repetition {
    pub label: usize,
    pub rep_index: usize,
    pub frames: Vec<Vec<f64>>,
}

/// Activity images of a whole session.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub grid: GridSpec,
    /// Activity images per second after striding.
    pub frame_rate: f64,
    pub n_classes: usize,
    pub reps: Vec<Repetition>,
    pub rest: Vec<Vec<f64>>,
}

impl FeatureSet {
    pub fn n_frames(&self) -> usize {
        self.reps.iter().map(|r| r.frames.len()).sum()
    }

    /// Repetitions whose `rep_index` is (or is not) listed for their label.
    pub fn split(&self, selected: &[usize]) -> (Vec<Repetition>, Vec<Repetition>) {
        self.reps
            .iter()
            .cloned()
            .partition(|r| selected.get(r.label) == Some(&r.rep_index))
    }

    pub fn rest_frames(&self) -> Vec<Frame> {
        self.rest
            .iter()
            .map(|v| Frame {
                height: self.grid.height,
                width: self.grid.width,
                values: v.clone(),
            })
            .collect()
    }
}

/// Filters (optionally), extracts RMS activity images and strides every segment.
pub fn extract_features(ds: &SessionDataset, cfg: &PipelineConfig) -> Result<FeatureSet> {
    ds.validate()?;
    if cfg.frame_stride == 0 {
        return Err(Error::InvalidParameter("frame_stride must be positive".into()));
    }
    let t_rms = cfg.t_rms.unwrap_or_else(|| default_t_rms(ds.fs));
    let filters = if cfg.filter {
        Some((design_bandpass(ds.fs, 20.0, 380.0)?, design_bandstop(ds.fs, 45.0, 55.0)?))
    } else {
        None
    };

    let activity = |seg: &super::dataset::Segment| -> Result<Vec<Vec<f64>>> {
        let mut signal = seg.to_signal(&ds.grid, ds.fs);
        if let Some((bp, bs)) = &filters {
            signal = filter_array(bs, &filter_array(bp, &signal));
        }
        Ok(activity_stream(&signal, t_rms)?
            .into_iter()
            .step_by(cfg.frame_stride)
            .map(|f| f.values)
            .collect())
    };

    let mut reps = Vec::new();
    for (label, segs) in ds.repetitions().into_iter().enumerate() {
        for (rep_index, seg) in segs.into_iter().enumerate() {
            reps.push(Repetition {
                label,
                rep_index,
                frames: activity(seg)?,
            });
        }
    }
    let mut rest = Vec::new();
    for seg in ds.rest_segments() {
        rest.extend(activity(seg)?);
    }
    Ok(FeatureSet {
        grid: ds.grid,
        frame_rate: ds.fs / cfg.frame_stride as f64,
        n_classes: ds.n_gestures(),
        reps,
        rest,
    })
}
