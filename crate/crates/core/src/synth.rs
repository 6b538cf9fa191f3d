//! Deterministic synthetic two-photon recordings with known ground truth.
//!
//! The scene is a flat background plus Gaussian cells. The structural channel
//! shows every cell at constant brightness; the functional channel adds a
//! calcium transient to the active cells after each shock, decaying
//! exponentially with a 1 s time constant. Each frame is rendered analytically
//! under a sinusoidal rigid motion and a multiplicative gain, then Gaussian
//! pixel noise is added.
//!
//! Noise for frame `t`, channel `c` comes from its own ChaCha stream, so any
//! frame can be generated independently and the output does not depend on
//! the worker count.

use ndarray::{Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::registration::RigidTransform;
use crate::stack::{ImageStack, StimSchedule, DEFAULT_FRAME_PERIOD_S};

/// Decay time constant of the calcium transient, seconds.
pub const TRANSIENT_DECAY_S: f64 = 1.0;

const PLACEMENT_STREAM: u64 = 0;
const CHANNELS: usize = 2;
/// Blobs are evaluated out to this many standard deviations.
const BLOB_SUPPORT_SIGMAS: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub rows: usize,
    pub cols: usize,
    pub frames: usize,
    pub frame_period_s: f64,
    pub n_cells: usize,
    /// Gaussian blob radius; the blob standard deviation is half of it.
    pub cell_radius_px: f64,
    /// Fixed `(row, col)` cell centres; random placement when absent.
    pub cell_centers: Option<Vec<(f64, f64)>>,
    pub baseline: f64,
    /// Peak above baseline of a cell in the structural channel.
    pub structural_brightness: f64,
    /// Resting peak above baseline of a cell in the functional channel.
    pub functional_brightness: f64,
    pub noise_sd: f64,
    pub drift_amplitude_px: f64,
    pub drift_period_frames: usize,
    pub theta_amplitude_rad: f64,
    pub active_cells: Vec<usize>,
    /// Transient height added per shock.
    pub transient_gain: f64,
    pub stim: StimSchedule,
    /// Amplitude of the per-frame multiplicative gain `1 + wobble * sin(.)`.
    pub global_gain_wobble: f64,
    pub gain_period_frames: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rows: 128,
            cols: 128,
            frames: 200,
            frame_period_s: DEFAULT_FRAME_PERIOD_S,
            n_cells: 10,
            cell_radius_px: 6.0,
            cell_centers: None,
            baseline: 100.0,
            structural_brightness: 100.0,
            functional_brightness: 50.0,
            noise_sd: 2.0,
            drift_amplitude_px: 0.0,
            drift_period_frames: 50,
            theta_amplitude_rad: 0.0,
            active_cells: Vec::new(),
            transient_gain: 20.0,
            stim: StimSchedule::default(),
            global_gain_wobble: 0.0,
            gain_period_frames: 37,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if self.rows == 0 || self.cols == 0 || self.frames == 0 {
            return err("rows, cols and frames must be at least 1");
        }
        if self.drift_period_frames == 0 || self.gain_period_frames == 0 {
            return err("periods must be at least 1 frame");
        }
        if !(self.frame_period_s > 0.0) || !(self.cell_radius_px > 0.0) {
            return err("frame period and cell radius must be positive");
        }
        let amplitudes = [
            self.baseline,
            self.structural_brightness,
            self.functional_brightness,
            self.noise_sd,
            self.drift_amplitude_px,
            self.theta_amplitude_rad,
            self.transient_gain,
            self.global_gain_wobble,
        ];
        if amplitudes.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return err("amplitudes must be finite and non-negative");
        }
        if self.global_gain_wobble >= 1.0 {
            return err("gain wobble must be below 1");
        }
        if self.theta_amplitude_rad >= std::f64::consts::PI {
            return err("rotation amplitude must be below pi");
        }
        if let Some(&bad) = self.active_cells.iter().find(|&&i| i >= self.n_cells) {
            return Err(Error::Config(format!(
                "active cell {bad} out of range for {} cells",
                self.n_cells
            )));
        }
        if let Some(centers) = &self.cell_centers {
            if centers.len() != self.n_cells {
                return Err(Error::Config(format!(
                    "{} cell centres given for {} cells",
                    centers.len(),
                    self.n_cells
                )));
            }
            let (max_r, max_c) = ((self.rows - 1) as f64, (self.cols - 1) as f64);
            if let Some(c) = centers
                .iter()
                .find(|(r, c)| !(*r >= 0.0 && *r <= max_r && *c >= 0.0 && *c <= max_c))
            {
                return Err(Error::Config(format!(
                    "cell centre {c:?} lies outside the image"
                )));
            }
        }
        self.stim.validate()
    }

    fn sigma(&self) -> f64 {
        self.cell_radius_px / 2.0
    }

    /// Content motion of frame `t`.
    pub fn motion(&self, t: usize) -> RigidTransform {
        let phase = 2.0 * std::f64::consts::PI * t as f64 / self.drift_period_frames as f64;
        RigidTransform::new(
            self.drift_amplitude_px * phase.sin(),
            self.drift_amplitude_px * phase.cos(),
            self.theta_amplitude_rad * (phase + 0.5).sin(),
        )
    }

    pub fn gain(&self, t: usize) -> f64 {
        let phase = 2.0 * std::f64::consts::PI * t as f64 / self.gain_period_frames as f64;
        1.0 + self.global_gain_wobble * phase.sin()
    }

    /// Summed transient trace (in units of `transient_gain`) at frame `t`.
    pub fn transient(&self, shocks: &[f64], t: usize) -> f64 {
        let now = t as f64 * self.frame_period_s;
        shocks
            .iter()
            .filter(|&&s| s <= now)
            .map(|&s| (-(now - s) / TRANSIENT_DECAY_S).exp())
            .sum()
    }

    fn place_cells(&self) -> Result<Vec<(f64, f64)>> {
        if let Some(c) = &self.cell_centers {
            return Ok(c.clone());
        }
        let margin = self.cell_radius_px + self.drift_amplitude_px;
        let (span_r, span_c) = (
            self.rows as f64 - 1.0 - 2.0 * margin,
            self.cols as f64 - 1.0 - 2.0 * margin,
        );
        if self.n_cells > 0 && (span_r < 0.0 || span_c < 0.0) {
            return Err(Error::Config(format!(
                "a {}x{} image cannot hold cells of radius {} with {} px of drift",
                self.rows, self.cols, self.cell_radius_px, self.drift_amplitude_px
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(PLACEMENT_STREAM);
        let min_sep = 2.0 * self.cell_radius_px;
        let mut centers: Vec<(f64, f64)> = Vec::with_capacity(self.n_cells);
        while centers.len() < self.n_cells {
            let mut candidate = (0.0, 0.0);
            // fall back to overlapping cells when the image is crowded
            for _ in 0..1000 {
                candidate = (
                    margin + rng.random::<f64>() * span_r,
                    margin + rng.random::<f64>() * span_c,
                );
                if centers
                    .iter()
                    .all(|(r, c)| (r - candidate.0).hypot(c - candidate.1) >= min_sep)
                {
                    break;
                }
            }
            centers.push(candidate);
        }
        Ok(centers)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    /// Content motion applied to each frame, relative to the static scene.
    pub true_transforms: Vec<RigidTransform>,
    pub cell_centers: Vec<(f64, f64)>,
    pub cell_active_flags: Vec<bool>,
    pub per_frame_gain: Vec<f64>,
    /// Transient trace of the active cells, in units of `transient_gain`.
    pub transient_trace: Vec<f64>,
}

impl SynthTruth {
    /// The transform registration should report for each frame when frame
    /// `reference_time` is the reference.
    pub fn alignment_targets(&self, reference_time: usize) -> Vec<RigidTransform> {
        let reference = self.true_transforms[reference_time];
        self.true_transforms
            .iter()
            .map(|m| reference.compose(&m.inverse()))
            .collect()
    }

    pub fn active_centers(&self) -> Vec<(f64, f64)> {
        self.cell_centers
            .iter()
            .zip(&self.cell_active_flags)
            .filter_map(|(&c, &a)| a.then_some(c))
            .collect()
    }
}

/// Renders a two-channel stack (structural, functional) and its ground truth.
pub fn generate(cfg: &SynthConfig) -> Result<(ImageStack, SynthTruth)> {
    cfg.validate()?;
    let centers = cfg.place_cells()?;
    let mut active = vec![false; cfg.n_cells];
    for &i in &cfg.active_cells {
        active[i] = true;
    }
    let shocks = cfg.stim.shock_times();
    let motions: Vec<_> = (0..cfg.frames).map(|t| cfg.motion(t)).collect();
    let gains: Vec<_> = (0..cfg.frames).map(|t| cfg.gain(t)).collect();
    let trace: Vec<_> = (0..cfg.frames).map(|t| cfg.transient(&shocks, t)).collect();

    let (rows, cols) = (cfg.rows, cfg.cols);
    let sigma = cfg.sigma();
    let two_sigma_sq = 2.0 * sigma * sigma;
    let reach = BLOB_SUPPORT_SIGMAS * sigma;
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::Config(e.to_string()))?;

    let rendered = exec::map_indices(cfg.frames, |t| {
        let inv = motions[t].inverse();
        let functional_peaks: Vec<f64> = active
            .iter()
            .map(|&a| {
                cfg.functional_brightness
                    + if a {
                        cfg.transient_gain * trace[t]
                    } else {
                        0.0
                    }
            })
            .collect();
        let mut structural = vec![0.0f32; rows * cols];
        let mut functional = vec![0.0f32; rows * cols];
        let mut rngs: Vec<ChaCha8Rng> = (0..CHANNELS)
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(1 + (t * CHANNELS + c) as u64);
                rng
            })
            .collect();
        for r in 0..rows {
            for c in 0..cols {
                let (sr, sc) = inv.map_point(r as f64, c as f64, rows, cols);
                let mut s_val = cfg.baseline;
                let mut f_val = cfg.baseline;
                for (i, &(cr, cc)) in centers.iter().enumerate() {
                    let (dr, dc) = (sr - cr, sc - cc);
                    if dr.abs() > reach || dc.abs() > reach {
                        continue;
                    }
                    let shape = (-(dr * dr + dc * dc) / two_sigma_sq).exp();
                    s_val += cfg.structural_brightness * shape;
                    f_val += functional_peaks[i] * shape;
                }
                let idx = r * cols + c;
                let ns = noise.sample(&mut rngs[0]);
                let nf = noise.sample(&mut rngs[1]);
                structural[idx] = (s_val * gains[t] + ns).max(0.0) as f32;
                functional[idx] = (f_val * gains[t] + nf).max(0.0) as f32;
            }
        }
        (structural, functional)
    });

    let mut structural = Array3::<f32>::zeros((cfg.frames, rows, cols));
    let mut functional = Array3::<f32>::zeros((cfg.frames, rows, cols));
    for (t, (s, f)) in rendered.into_iter().enumerate() {
        let view =
            |v: Vec<f32>| ndarray::Array2::from_shape_vec((rows, cols), v).expect("frame shape");
        structural.index_axis_mut(Axis(0), t).assign(&view(s));
        functional.index_axis_mut(Axis(0), t).assign(&view(f));
    }
    let stack = ImageStack::from_channels(vec![structural, functional], cfg.frame_period_s)?;
    let truth = SynthTruth {
        true_transforms: motions,
        cell_centers: centers,
        cell_active_flags: active,
        per_frame_gain: gains,
        transient_trace: trace,
    };
    Ok((stack, truth))
}
