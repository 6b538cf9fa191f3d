//! Brain-movement time series and their variance comparison between conditions.

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::registration::AlignmentResult;
use crate::stack::ChannelView;
use crate::variance_tests::{levene, Center, GroupedSamples, LeveneReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MovementKind {
    /// Summed absolute intensity change between consecutive frames (length T-1).
    Framediff,
    /// Registration shift magnitude per frame (length T).
    Shiftmag,
}

impl std::str::FromStr for MovementKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "framediff" => Ok(Self::Framediff),
            "shiftmag" => Ok(Self::Shiftmag),
            other => Err(Error::arg(format!("unknown movement kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementSeries {
    pub values: Vec<f64>,
    pub kind: MovementKind,
    pub frame_period_s: f64,
}

impl MovementSeries {
    /// `(time_s, value)` pairs; element `t` is stamped at `t * frame_period_s`.
    pub fn timed(&self) -> Vec<(f64, f64)> {
        self.values
            .iter()
            .enumerate()
            .map(|(t, &v)| (t as f64 * self.frame_period_s, v))
            .collect()
    }
}

pub fn framediff_series(ch: ChannelView, frame_period_s: f64) -> Result<MovementSeries> {
    let frames = ch.len_of(Axis(0));
    if frames < 2 {
        return Err(Error::InsufficientFrames {
            needed: 2,
            got: frames,
        });
    }
    let values = exec::map_indices(frames - 1, |t| {
        let a = ch.index_axis(Axis(0), t);
        let b = ch.index_axis(Axis(0), t + 1);
        a.iter()
            .zip(b.iter())
            .map(|(&x, &y)| (y as f64 - x as f64).abs())
            .sum()
    });
    Ok(MovementSeries {
        values,
        kind: MovementKind::Framediff,
        frame_period_s,
    })
}

pub fn shiftmag_series(res: &AlignmentResult, frame_period_s: f64) -> MovementSeries {
    MovementSeries {
        values: res.transforms.iter().map(|t| t.dx.hypot(t.dy)).collect(),
        kind: MovementKind::Shiftmag,
        frame_period_s,
    }
}

/// Levene's test with the whole resting series and the whole stimulated series as the two groups.
pub fn movement_levene(
    rest: &MovementSeries,
    stim: &MovementSeries,
    center: Center,
) -> Result<LeveneReport> {
    if rest.kind != stim.kind {
        return Err(Error::arg(format!(
            "cannot compare {:?} with {:?} series",
            rest.kind, stim.kind
        )));
    }
    levene(
        &GroupedSamples::new(vec![rest.values.clone(), stim.values.clone()])?,
        center,
    )
}

/// Samples falling in `[start, start + window_s)` after each trial start.
///
/// Sample `i` is taken to occur at `i * sample_period_s`.
pub fn trial_locked_samples(
    values: &[f64],
    sample_period_s: f64,
    trial_starts_s: &[f64],
    window_s: f64,
) -> Result<Vec<f64>> {
    if !(sample_period_s > 0.0) || !(window_s > 0.0) {
        return Err(Error::arg("sample period and window must be positive"));
    }
    let mut out = Vec::new();
    for &start in trial_starts_s {
        let first = (start / sample_period_s).ceil().max(0.0) as usize;
        let end = ((start + window_s) / sample_period_s).ceil().max(0.0) as usize;
        let end = end.min(values.len());
        if first < end {
            out.extend_from_slice(&values[first..end]);
        }
    }
    Ok(out)
}

/// Levene's test on trial-locked windows: the stimulated samples following each
/// trial onset against the resting samples at the same times.
pub fn windowed_levene(
    rest: &[f64],
    rest_period_s: f64,
    stim: &[f64],
    stim_period_s: f64,
    trial_starts_s: &[f64],
    window_s: f64,
    center: Center,
) -> Result<LeveneReport> {
    let a = trial_locked_samples(rest, rest_period_s, trial_starts_s, window_s)?;
    let b = trial_locked_samples(stim, stim_period_s, trial_starts_s, window_s)?;
    levene(&GroupedSamples::new(vec![a, b])?, center)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::RigidTransform;
    use ndarray::{arr3, Array2, Array3};

    #[test]
    fn framediff_examples() {
        let flat = Array3::from_elem((4, 3, 3), 2.5f32);
        let s = framediff_series(flat.view(), 0.125).unwrap();
        assert_eq!(s.values, vec![0.0; 3]);
        let ch = arr3(&[[[0.0f32, 0.0]], [[1.0, 3.0]]]);
        assert_eq!(
            framediff_series(ch.view(), 0.125).unwrap().values,
            vec![4.0]
        );
        assert!(framediff_series(flat.slice(ndarray::s![..1, .., ..]), 0.1).is_err());
    }

    #[test]
    fn framediff_ignores_global_offset() {
        let ch = Array3::from_shape_fn((5, 4, 4), |(t, r, c)| ((t * 7 + r * 3 + c) % 5) as f32);
        let shifted = ch.mapv(|v| v + 10.0);
        assert_eq!(
            framediff_series(ch.view(), 1.0).unwrap().values,
            framediff_series(shifted.view(), 1.0).unwrap().values
        );
    }

    fn result_with(transforms: Vec<RigidTransform>) -> AlignmentResult {
        let n = transforms.len();
        AlignmentResult {
            transforms,
            residual_sse: vec![0.0; n],
            valid_masks: vec![Array2::from_elem((1, 1), true); n],
            failed: vec![false; n],
            reference_time: 0,
        }
    }

    #[test]
    fn shiftmag_examples() {
        let r = result_with(vec![RigidTransform::IDENTITY; 3]);
        assert_eq!(shiftmag_series(&r, 0.125).values, vec![0.0; 3]);
        let r = result_with(vec![RigidTransform::new(3.0, 4.0, 0.3)]);
        assert_eq!(shiftmag_series(&r, 0.125).values, vec![5.0]);
        let r2 = result_with(vec![RigidTransform::new(3.0, 4.0, -0.9)]);
        assert_eq!(shiftmag_series(&r2, 0.125).values, vec![5.0]);
    }

    #[test]
    fn kind_mismatch_rejected() {
        let a = MovementSeries {
            values: vec![1.0, 2.0],
            kind: MovementKind::Framediff,
            frame_period_s: 0.1,
        };
        let b = MovementSeries {
            kind: MovementKind::Shiftmag,
            ..a.clone()
        };
        assert!(movement_levene(&a, &b, Center::Mean).is_err());
        let r = movement_levene(&a, &a, Center::Mean).unwrap();
        assert_eq!((r.w, r.p_value), (0.0, 1.0));
    }

    #[test]
    fn trial_windows() {
        let values: Vec<f64> = (0..20).map(f64::from).collect();
        // period 0.5 s: trial at 1.0 s with 1.5 s window covers samples 2,3,4
        let got = trial_locked_samples(&values, 0.5, &[1.0, 8.0], 1.5).unwrap();
        assert_eq!(got, vec![2.0, 3.0, 4.0, 16.0, 17.0, 18.0]);
        // windows running off the end are truncated
        let got = trial_locked_samples(&values, 0.5, &[9.5], 5.0).unwrap();
        assert_eq!(got, vec![19.0]);
        assert!(trial_locked_samples(&values, 0.0, &[1.0], 1.0).is_err());
    }

    #[test]
    fn timed_pairs() {
        let s = MovementSeries {
            values: vec![1.0, 2.0],
            kind: MovementKind::Shiftmag,
            frame_period_s: 0.125,
        };
        assert_eq!(s.timed(), vec![(0.0, 1.0), (0.125, 2.0)]);
    }
}
