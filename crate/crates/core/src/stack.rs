//! In-memory stack, biosignal and stimulus schedule types.

use ndarray::{s, Array3, Array4, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel index of the structural dye (time-invariant, used for registration).
pub const STRUCTURAL: usize = 0;
/// Channel index of the functional (calcium-sensitive) dye.
pub const FUNCTIONAL: usize = 1;

pub const DEFAULT_FRAME_PERIOD_S: f64 = 0.125;

/// One image, rows × cols.
pub type Frame = ndarray::Array2<f32>;

/// Borrowed frames × rows × cols block of a single channel.
pub type ChannelView<'a> = ArrayView3<'a, f32>;

/// A recording laid out as channel × time × row × col.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    data: Array4<f32>,
    frame_period_s: f64,
}

impl ImageStack {
    /// Wraps `data`, rejecting non-finite intensities and a non-positive frame period.
    pub fn new(data: Array4<f32>, frame_period_s: f64) -> Result<Self> {
        if !(frame_period_s.is_finite() && frame_period_s > 0.0) {
            return Err(Error::arg(format!(
                "frame period must be positive, got {frame_period_s}"
            )));
        }
        if data.is_empty() {
            return Err(Error::arg("stack must have at least one sample"));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::DataIntegrity { index });
        }
        // Everything downstream assumes a contiguous standard-layout buffer.
        let data = data.as_standard_layout().into_owned();
        Ok(Self {
            data,
            frame_period_s,
        })
    }

    /// Builds a stack from a flat buffer in channel/time/row/col order.
    pub fn from_vec(
        shape: (usize, usize, usize, usize),
        values: Vec<f32>,
        frame_period_s: f64,
    ) -> Result<Self> {
        let expected = shape.0 * shape.1 * shape.2 * shape.3;
        if values.len() != expected {
            return Err(Error::arg(format!(
                "buffer holds {} values, shape {:?} needs {expected}",
                values.len(),
                shape
            )));
        }
        let data = Array4::from_shape_vec(shape, values).map_err(|e| Error::arg(e.to_string()))?;
        Self::new(data, frame_period_s)
    }

    /// Stacks per-channel blocks (each frames × rows × cols) into one recording.
    pub fn from_channels(channels: Vec<Array3<f32>>, frame_period_s: f64) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::arg("at least one channel required"))?;
        let dim = first.dim();
        if channels.iter().any(|c| c.dim() != dim) {
            return Err(Error::arg("channel blocks differ in shape"));
        }
        let views: Vec<_> = channels.iter().map(|c| c.view()).collect();
        let data = ndarray::stack(Axis(0), &views).map_err(|e| Error::arg(e.to_string()))?;
        Self::new(data, frame_period_s)
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn frames(&self) -> usize {
        self.data.dim().1
    }

    pub fn rows(&self) -> usize {
        self.data.dim().2
    }

    pub fn cols(&self) -> usize {
        self.data.dim().3
    }

    /// (channels, frames, rows, cols)
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        self.data.dim()
    }

    pub fn frame_period_s(&self) -> f64 {
        self.frame_period_s
    }

    pub fn data(&self) -> &Array4<f32> {
        &self.data
    }

    /// Flat row-major buffer.
    pub fn as_slice(&self) -> &[f32] {
        self.data
            .as_slice()
            .expect("stack data is kept in standard layout")
    }

    pub fn into_data(self) -> Array4<f32> {
        self.data
    }

    pub fn channel(&self, channel: usize) -> Result<ChannelView<'_>> {
        check(channel, self.channels(), "channel")?;
        Ok(self.data.index_axis(Axis(0), channel))
    }

    /// The rows × cols image of `channel` at time index `t`.
    pub fn frame_at(&self, channel: usize, t: usize) -> Result<ArrayView2<'_, f32>> {
        check(channel, self.channels(), "channel")?;
        check(t, self.frames(), "frame")?;
        Ok(self.data.slice(s![channel, t, .., ..]))
    }

    /// Returns a copy with one channel's block replaced.
    pub fn with_channel(&self, channel: usize, block: Array3<f32>) -> Result<Self> {
        check(channel, self.channels(), "channel")?;
        let (_, t, r, c) = self.shape();
        if block.dim() != (t, r, c) {
            return Err(Error::arg(format!(
                "replacement block has shape {:?}, expected {:?}",
                block.dim(),
                (t, r, c)
            )));
        }
        let mut data = self.data.clone();
        data.index_axis_mut(Axis(0), channel).assign(&block);
        Self::new(data, self.frame_period_s)
    }
}

fn check(index: usize, limit: usize, what: &'static str) -> Result<()> {
    if index < limit {
        Ok(())
    } else {
        Err(Error::Bounds { what, index, limit })
    }
}

/// A physiological recording sampled at a fixed rate (heart rate, blood pressure, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BioSignal {
    pub sample_rate_hz: f64,
    pub samples: Vec<f64>,
    pub label: String,
}

impl BioSignal {
    pub fn new(sample_rate_hz: f64, samples: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::arg(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if samples.is_empty() {
            return Err(Error::arg("biosignal has no samples"));
        }
        Ok(Self {
            sample_rate_hz,
            samples,
            label: label.into(),
        })
    }

    pub fn sample_period_s(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }
}

/// Forepaw stimulation protocol: trains of short shocks starting at each trial onset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StimSchedule {
    pub trial_starts_s: Vec<f64>,
    pub shocks_per_trial: usize,
    pub shock_duration_ms: f64,
    /// Onset-to-onset spacing of shocks within a trial.
    pub inter_shock_gap_ms: f64,
    pub current_ma: f64,
}

impl Default for StimSchedule {
    fn default() -> Self {
        Self {
            trial_starts_s: Vec::new(),
            shocks_per_trial: 12,
            shock_duration_ms: 1.0,
            inter_shock_gap_ms: 167.0,
            current_ma: 1.5,
        }
    }
}

impl StimSchedule {
    pub fn with_trials(trial_starts_s: Vec<f64>) -> Result<Self> {
        let sched = Self {
            trial_starts_s,
            ..Self::default()
        };
        sched.validate()?;
        Ok(sched)
    }

    /// `count` trials, the first at `first_s`, spaced `spacing_s` apart.
    pub fn evenly_spaced(count: usize, first_s: f64, spacing_s: f64) -> Result<Self> {
        Self::with_trials((0..count).map(|i| first_s + i as f64 * spacing_s).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.trial_starts_s.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("trial start times must be finite".into()));
        }
        if self.trial_starts_s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "trial start times must be strictly increasing".into(),
            ));
        }
        if !(self.inter_shock_gap_ms.is_finite() && self.inter_shock_gap_ms >= 0.0) {
            return Err(Error::Config("inter-shock gap must be non-negative".into()));
        }
        Ok(())
    }

    /// Onset time of every shock, trial by trial.
    pub fn shock_times(&self) -> Vec<f64> {
        let gap_s = self.inter_shock_gap_ms / 1000.0;
        self.trial_starts_s
            .iter()
            .flat_map(|&start| (0..self.shocks_per_trial).map(move |k| start + k as f64 * gap_s))
            .collect()
    }
}
