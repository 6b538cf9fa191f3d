//! Mean equalization, per-pixel temporal statistics and derived maps.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::stack::ChannelView;

/// Per-pixel temporal mean and sample variance of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelStats {
    pub mean_map: Array2<f64>,
    pub var_map: Array2<f64>,
    pub frames_used: usize,
    /// Pixels included in totals and scatter; `None` means all of them.
    pub valid: Option<Array2<bool>>,
}

impl PixelStats {
    fn included(&self) -> impl Iterator<Item = bool> + '_ {
        let n = self.mean_map.len();
        let mut mask = self.valid.as_ref().map(|m| m.iter().copied());
        (0..n).map(move |_| mask.as_mut().is_none_or(|m| m.next().unwrap_or(false)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualizationReport {
    /// Common target mean: the average of all frame means.
    pub standard: f64,
    pub frame_means_before: Vec<f64>,
    pub frame_means_after: Vec<f64>,
    pub total_var_before: f64,
    pub total_var_after: f64,
    pub reduction_pct: f64,
}

/// Arithmetic mean of each frame.
pub fn frame_means(ch: ChannelView) -> Vec<f64> {
    ch.axis_iter(Axis(0))
        .map(|frame| {
            let n = frame.len() as f64;
            frame.iter().map(|&v| v as f64).sum::<f64>() / n
        })
        .collect()
}

fn masked_frame_means(ch: ChannelView, valid: &Array2<bool>) -> Vec<f64> {
    let n = valid.iter().filter(|&&v| v).count() as f64;
    ch.axis_iter(Axis(0))
        .map(|frame| {
            frame
                .iter()
                .zip(valid)
                .filter_map(|(&v, &keep)| keep.then_some(v as f64))
                .sum::<f64>()
                / n
        })
        .collect()
}

/// Rescales every frame so that all frames share the mean of the frame means.
pub fn mean_equalize(ch: ChannelView) -> Result<(Array3<f32>, EqualizationReport)> {
    equalize(ch, None)
}

/// Like [`mean_equalize`], with frame means and total variances taken over the
/// pixels set in `valid` only. Every pixel is still rescaled.
pub fn mean_equalize_masked(
    ch: ChannelView,
    valid: &Array2<bool>,
) -> Result<(Array3<f32>, EqualizationReport)> {
    let (_, rows, cols) = ch.dim();
    if valid.dim() != (rows, cols) {
        return Err(Error::arg(format!(
            "mask is {:?}, frames are {:?}",
            valid.dim(),
            (rows, cols)
        )));
    }
    if !valid.iter().any(|&v| v) {
        return Err(Error::arg("mask selects no pixels"));
    }
    equalize(ch, Some(valid))
}

fn equalize(
    ch: ChannelView,
    valid: Option<&Array2<bool>>,
) -> Result<(Array3<f32>, EqualizationReport)> {
    let means = |c: ChannelView| match valid {
        Some(m) => masked_frame_means(c, m),
        None => frame_means(c),
    };
    let total = |c: ChannelView| -> Result<f64> {
        let ps = match valid {
            Some(m) => pixel_stats_masked(c, m)?,
            None => pixel_stats(c)?,
        };
        Ok(total_variance(&ps))
    };
    let before = means(ch);
    if before.is_empty() {
        return Err(Error::InsufficientFrames { needed: 1, got: 0 });
    }
    if let Some((frame, &mean)) = before.iter().enumerate().find(|(_, &m)| !(m > 0.0)) {
        return Err(Error::DegenerateFrame { frame, mean });
    }
    let standard = before.iter().sum::<f64>() / before.len() as f64;

    let mut out = ch.to_owned();
    for (mut frame, &mean) in out.axis_iter_mut(Axis(0)).zip(&before) {
        let gain = standard / mean;
        frame.mapv_inplace(|v| (v as f64 * gain) as f32);
    }
    let after = means(out.view());

    let (total_var_before, total_var_after) = if ch.len_of(Axis(0)) >= 2 {
        (total(ch)?, total(out.view())?)
    } else {
        (0.0, 0.0)
    };
    let reduction_pct = if total_var_before > 0.0 {
        variance_reduction_pct(total_var_before, total_var_after)?
    } else {
        0.0
    };
    Ok((
        out,
        EqualizationReport {
            standard,
            frame_means_before: before,
            frame_means_after: after,
            total_var_before,
            total_var_after,
            reduction_pct,
        },
    ))
}

/// Per-pixel sample mean and variance (denominator `T - 1`).
pub fn pixel_stats(ch: ChannelView) -> Result<PixelStats> {
    let (frames, rows, cols) = ch.dim();
    if frames < 2 {
        return Err(Error::InsufficientFrames {
            needed: 2,
            got: frames,
        });
    }
    let per_row = exec::map_indices(rows, |r| {
        let series = ch.index_axis(Axis(1), r);
        let mut mean = vec![0.0f64; cols];
        for frame_row in series.axis_iter(Axis(0)) {
            for (m, &v) in mean.iter_mut().zip(frame_row) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= frames as f64);
        let mut var = vec![0.0f64; cols];
        for frame_row in series.axis_iter(Axis(0)) {
            for ((s, &m), &v) in var.iter_mut().zip(&mean).zip(frame_row) {
                let d = v as f64 - m;
                *s += d * d;
            }
        }
        var.iter_mut().for_each(|s| *s /= (frames - 1) as f64);
        (mean, var)
    });
    let mut means = Vec::with_capacity(rows * cols);
    let mut vars = Vec::with_capacity(rows * cols);
    for (m, v) in per_row {
        means.extend(m);
        vars.extend(v);
    }
    Ok(PixelStats {
        mean_map: Array2::from_shape_vec((rows, cols), means).expect("row-major"),
        var_map: Array2::from_shape_vec((rows, cols), vars).expect("row-major"),
        frames_used: frames,
        valid: None,
    })
}

/// Like [`pixel_stats`], restricted to the pixels set in `valid`.
pub fn pixel_stats_masked(ch: ChannelView, valid: &Array2<bool>) -> Result<PixelStats> {
    let (_, rows, cols) = ch.dim();
    if valid.dim() != (rows, cols) {
        return Err(Error::arg(format!(
            "mask is {:?}, frames are {:?}",
            valid.dim(),
            (rows, cols)
        )));
    }
    let mut stats = pixel_stats(ch)?;
    stats.valid = Some(valid.clone());
    Ok(stats)
}

/// Sum of the per-pixel variances over the included pixels.
pub fn total_variance(ps: &PixelStats) -> f64 {
    ps.var_map
        .iter()
        .zip(ps.included())
        .filter_map(|(&v, keep)| keep.then_some(v))
        .sum()
}

/// Percentage drop from `before` to `after`.
pub fn variance_reduction_pct(before: f64, after: f64) -> Result<f64> {
    if !(before > 0.0) {
        return Err(Error::arg(format!(
            "baseline variance must be positive, got {before}"
        )));
    }
    Ok(100.0 * (before - after) / before)
}

/// `(ln(mean + eps), ln(var + eps))` for every included pixel in row-major order.
pub fn mean_variance_scatter(ps: &PixelStats, epsilon: f64) -> Result<Vec<(f64, f64)>> {
    if !(epsilon > 0.0) {
        return Err(Error::arg("epsilon must be positive"));
    }
    Ok(ps
        .mean_map
        .iter()
        .zip(ps.var_map.iter())
        .zip(ps.included())
        .filter(|(_, keep)| *keep)
        .map(|((&m, &v), _)| ((m + epsilon).ln(), (v + epsilon).ln()))
        .collect())
}

/// Elementwise `a - b`, by convention stimulated minus resting.
pub fn difference_map(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::arg(format!(
            "difference of {:?} and {:?} maps",
            a.dim(),
            b.dim()
        )));
    }
    Ok(&a - &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, arr3};

    #[test]
    fn frame_mean_examples() {
        let ch = arr3(&[[[1.0f32, 3.0]], [[2.0, 6.0]]]);
        assert_eq!(frame_means(ch.view()), vec![2.0, 4.0]);
        let flat = Array3::from_elem((3, 2, 2), 7.0f32);
        assert_eq!(frame_means(flat.view()), vec![7.0; 3]);
        assert_eq!(frame_means(flat.slice(ndarray::s![..1, .., ..])).len(), 1);
    }

    #[test]
    fn equalize_example() {
        let ch = arr3(&[[[1.0f32, 3.0]], [[2.0, 6.0]]]);
        let (out, rep) = mean_equalize(ch.view()).unwrap();
        assert_eq!(rep.standard, 3.0);
        assert_eq!(out, arr3(&[[[1.5f32, 4.5]], [[1.5, 4.5]]]));
        assert_eq!(rep.frame_means_after, vec![3.0, 3.0]);
        assert_eq!(rep.total_var_after, 0.0);
        assert!(rep.total_var_before > 0.0);
        assert_eq!(rep.reduction_pct, 100.0);
    }

    #[test]
    fn equalize_fixed_point() {
        let ch = arr3(&[[[1.0f32, 3.0]], [[3.0, 1.0]], [[2.0, 2.0]]]);
        let (out, rep) = mean_equalize(ch.view()).unwrap();
        assert_eq!(out, ch);
        assert_eq!(rep.reduction_pct, 0.0);
    }

    #[test]
    fn equalize_rejects_dark_frame() {
        let ch = arr3(&[[[1.0f32, 3.0]], [[0.0, 0.0]]]);
        assert!(matches!(
            mean_equalize(ch.view()),
            Err(Error::DegenerateFrame { frame: 1, .. })
        ));
    }

    #[test]
    fn masked_equalize_ignores_zeroed_border() {
        // column 0 is a zero-filled border in frame 1 only
        let ch = arr3(&[[[4.0f32, 2.0, 6.0]], [[0.0, 4.0, 12.0]]]);
        let valid = arr2(&[[false, true, true]]);
        let (out, rep) = mean_equalize_masked(ch.view(), &valid).unwrap();
        assert_eq!(rep.frame_means_before, vec![4.0, 8.0]);
        assert_eq!(rep.standard, 6.0);
        assert_eq!(out, arr3(&[[[6.0f32, 3.0, 9.0]], [[0.0, 3.0, 9.0]]]));
        assert_eq!(rep.total_var_after, 0.0);

        assert!(mean_equalize_masked(ch.view(), &arr2(&[[false, false, false]])).is_err());
        assert!(mean_equalize_masked(ch.view(), &arr2(&[[true, true]])).is_err());
    }

    #[test]
    fn stats_examples() {
        let ch = arr3(&[[[1.0f32, 4.0]], [[3.0, 4.0]]]);
        let ps = pixel_stats(ch.view()).unwrap();
        assert_eq!(ps.mean_map, arr2(&[[2.0, 4.0]]));
        assert_eq!(ps.var_map, arr2(&[[2.0, 0.0]]));
        assert_eq!(ps.frames_used, 2);
        assert!(matches!(
            pixel_stats(ch.slice(ndarray::s![..1, .., ..])),
            Err(Error::InsufficientFrames { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn total_variance_examples() {
        let mk = |v: Array2<f64>| PixelStats {
            mean_map: Array2::zeros(v.dim()),
            var_map: v,
            frames_used: 2,
            valid: None,
        };
        assert_eq!(total_variance(&mk(arr2(&[[0.0, 0.0]]))), 0.0);
        assert_eq!(total_variance(&mk(arr2(&[[2.0, 2.0]]))), 4.0);
        let mut masked = mk(arr2(&[[2.0, 5.0]]));
        masked.valid = Some(arr2(&[[false, true]]));
        assert_eq!(total_variance(&masked), 5.0);
    }

    #[test]
    fn reduction_examples() {
        assert_eq!(variance_reduction_pct(8.0, 7.0).unwrap(), 12.5);
        assert_eq!(variance_reduction_pct(3.0, 3.0).unwrap(), 0.0);
        assert!((variance_reduction_pct(100.0, 98.7).unwrap() - 1.3).abs() < 1e-12);
        assert!(variance_reduction_pct(0.0, 1.0).is_err());
    }

    #[test]
    fn scatter_examples() {
        let e = std::f64::consts::E;
        let ps = PixelStats {
            mean_map: arr2(&[[1.0, e]]),
            var_map: arr2(&[[1.0, e * e]]),
            frames_used: 2,
            valid: None,
        };
        let pts = mean_variance_scatter(&ps, 1e-12).unwrap();
        assert_eq!(pts.len(), 2);
        assert!(pts[0].0.abs() < 1e-9 && pts[0].1.abs() < 1e-9);
        assert!((pts[1].0 - 1.0).abs() < 1e-9 && (pts[1].1 - 2.0).abs() < 1e-9);
        assert!(mean_variance_scatter(&ps, 0.0).is_err());
    }

    #[test]
    fn difference_examples() {
        let a = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(
            difference_map(a.view(), a.view()).unwrap(),
            Array2::<f64>::zeros((2, 2))
        );
        assert_eq!(
            difference_map(arr2(&[[3.0]]).view(), arr2(&[[1.0]]).view()).unwrap(),
            arr2(&[[2.0]])
        );
        assert!(difference_map(a.view(), arr2(&[[1.0]]).view()).is_err());
    }
}
