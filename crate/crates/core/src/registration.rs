//! Rigid (shift + rotation) registration of frames against a reference frame.
//!
//! Transforms act on content: [`apply_rigid`] moves the image content by
//! `(dx, dy)` and then rotates it by `theta` about the image centre
//! `((rows-1)/2, (cols-1)/2)`. Each output pixel is the bilinear interpolation
//! of the source at the inverse-mapped position; positions whose interpolation
//! neighbourhood leaves the source grid are masked out.
//!
//! Estimation minimises the mean squared error over the valid region in two
//! stages: an exhaustive integer-shift grid, then a Nelder–Mead refinement of
//! `(dx, dy, theta)` from the best grid point.

use ndarray::{Array2, Array4, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::optimize::NelderMead;
use crate::stack::{Frame, ImageStack, STRUCTURAL};

/// Objective value for transforms leaving too little overlap.
pub const INVALID_RESIDUAL: f64 = f64::INFINITY;
/// Minimum fraction of valid pixels for a transform to be scored.
pub const MIN_VALID_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidTransform {
    /// Column shift in pixels.
    pub dx: f64,
    /// Row shift in pixels.
    pub dy: f64,
    /// Rotation about the image centre, radians.
    pub theta: f64,
}

impl RigidTransform {
    pub const IDENTITY: Self = Self {
        dx: 0.0,
        dy: 0.0,
        theta: 0.0,
    };

    pub const fn new(dx: f64, dy: f64, theta: f64) -> Self {
        Self { dx, dy, theta }
    }

    pub fn is_valid(&self) -> bool {
        self.dx.is_finite()
            && self.dy.is_finite()
            && self.theta.is_finite()
            && self.theta.abs() < std::f64::consts::PI
    }

    /// The transform undoing `self`: rotation by `-theta` with the shift
    /// rotated and negated.
    pub fn inverse(&self) -> Self {
        let (s, c) = self.theta.sin_cos();
        Self {
            dx: -(c * self.dx - s * self.dy),
            dy: -(s * self.dx + c * self.dy),
            theta: -self.theta,
        }
    }

    /// `self` applied after `inner`.
    pub fn compose(&self, inner: &Self) -> Self {
        let (s, c) = inner.theta.sin_cos();
        // inner's rotation acts after our shift is added, so pull our shift back through it
        Self {
            dx: inner.dx + c * self.dx + s * self.dy,
            dy: inner.dy - s * self.dx + c * self.dy,
            theta: self.theta + inner.theta,
        }
    }

    /// Where content at `(row, col)` lands in a `rows × cols` image.
    pub fn map_point(&self, row: f64, col: f64, rows: usize, cols: usize) -> (f64, f64) {
        let (cr, cc) = center(rows, cols);
        let (s, c) = self.theta.sin_cos();
        let u = col + self.dx - cc;
        let v = row + self.dy - cr;
        (s * u + c * v + cr, c * u - s * v + cc)
    }

    /// Source position sampled for output pixel `(row, col)`.
    pub fn source_point(&self, row: f64, col: f64, rows: usize, cols: usize) -> (f64, f64) {
        let (cr, cc) = center(rows, cols);
        let (s, c) = self.theta.sin_cos();
        let u = col - cc;
        let v = row - cr;
        (-s * u + c * v + cr - self.dy, c * u + s * v + cc - self.dx)
    }
}

fn center(rows: usize, cols: usize) -> (f64, f64) {
    ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    pub reference_channel: usize,
    /// Reference frame index; `None` picks the middle frame.
    pub reference_time: Option<usize>,
    pub max_shift_px: f64,
    pub max_theta_rad: f64,
    pub tol_px: f64,
    pub tol_rad: f64,
    pub max_iters: usize,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            reference_channel: STRUCTURAL,
            reference_time: None,
            max_shift_px: 10.0,
            max_theta_rad: 0.1,
            tol_px: 1e-3,
            tol_rad: 1e-4,
            max_iters: 200,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.max_shift_px) || !positive(self.max_theta_rad) {
            return Err(Error::Config("search bounds must be positive".into()));
        }
        if self.max_theta_rad >= std::f64::consts::PI {
            return Err(Error::Config("rotation bound must be below pi".into()));
        }
        if !positive(self.tol_px) || !positive(self.tol_rad) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        Ok(())
    }

    pub fn reference_time_for(&self, frames: usize) -> usize {
        self.reference_time.unwrap_or(frames / 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub transforms: Vec<RigidTransform>,
    pub residual_sse: Vec<f64>,
    /// Per frame, true where the warped sample came from inside the source.
    pub valid_masks: Vec<Array2<bool>>,
    /// Frames whose estimation failed; they are left unaligned with an identity transform.
    pub failed: Vec<bool>,
    pub reference_time: usize,
}

impl AlignmentResult {
    pub fn failures(&self) -> Vec<usize> {
        self.failed
            .iter()
            .enumerate()
            .filter_map(|(t, &f)| f.then_some(t))
            .collect()
    }

    /// Pixels valid in every frame.
    pub fn common_valid_mask(&self) -> Option<Array2<bool>> {
        let mut masks = self.valid_masks.iter();
        let mut acc = masks.next()?.clone();
        for m in masks {
            acc.zip_mut_with(m, |a, &b| *a = *a && b);
        }
        Some(acc)
    }
}

/// Bilinear sampler over a contiguous row-major image.
#[derive(Clone, Copy)]
struct Grid<'a> {
    data: &'a [f32],
    rows: usize,
    cols: usize,
}

impl<'a> Grid<'a> {
    fn new(data: &'a [f32], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { data, rows, cols }
    }

    #[inline]
    fn sample(&self, sr: f64, sc: f64) -> Option<f64> {
        let max_r = (self.rows - 1) as f64;
        let max_c = (self.cols - 1) as f64;
        if !(sr >= 0.0 && sr <= max_r && sc >= 0.0 && sc <= max_c) {
            return None;
        }
        let (r0, fr) = split(sr, self.rows);
        let (c0, fc) = split(sc, self.cols);
        let r1 = (r0 + 1).min(self.rows - 1);
        let c1 = (c0 + 1).min(self.cols - 1);
        let at = |r: usize, c: usize| self.data[r * self.cols + c] as f64;
        let top = at(r0, c0) + fc * (at(r0, c1) - at(r0, c0));
        let bottom = at(r1, c0) + fc * (at(r1, c1) - at(r1, c0));
        Some(top + fr * (bottom - top))
    }

    /// Calls `visit(index, sample)` for every output pixel under `t`.
    #[inline]
    fn warp_each(&self, t: &RigidTransform, mut visit: impl FnMut(usize, Option<f64>)) {
        let (cr, cc) = center(self.rows, self.cols);
        let (s, c) = t.theta.sin_cos();
        for row in 0..self.rows {
            let v = row as f64 - cr;
            // source = R(-theta)(q - centre) + centre - shift
            let base_r = c * v + cr - t.dy;
            let base_c = s * v + cc - t.dx;
            for col in 0..self.cols {
                let u = col as f64 - cc;
                let sr = base_r - s * u;
                let sc = base_c + c * u;
                visit(row * self.cols + col, self.sample(sr, sc));
            }
        }
    }
}

#[inline]
fn split(pos: f64, len: usize) -> (usize, f64) {
    if len == 1 {
        return (0, 0.0);
    }
    let i = (pos.floor() as usize).min(len - 2);
    (i, pos - i as f64)
}

fn contiguous(frame: ArrayView2<'_, f32>) -> std::borrow::Cow<'_, [f32]> {
    match frame.to_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(frame.iter().copied().collect()),
    }
}

/// Warps `frame` by `t`. Masked output pixels are set to zero.
pub fn apply_rigid(frame: ArrayView2<f32>, t: &RigidTransform) -> Result<(Frame, Array2<bool>)> {
    if !t.is_valid() {
        return Err(Error::arg(format!("invalid transform {t:?}")));
    }
    let (rows, cols) = frame.dim();
    let data = contiguous(frame);
    let grid = Grid::new(&data, rows, cols);
    let mut out = vec![0.0f32; rows * cols];
    let mut mask = vec![false; rows * cols];
    grid.warp_each(t, |i, v| {
        if let Some(v) = v {
            out[i] = v as f32;
            mask[i] = true;
        }
    });
    Ok((
        Array2::from_shape_vec((rows, cols), out).expect("shape matches"),
        Array2::from_shape_vec((rows, cols), mask).expect("shape matches"),
    ))
}

/// Validity mask [`apply_rigid`] produces for a `rows × cols` frame under `t`.
pub fn valid_mask(rows: usize, cols: usize, t: &RigidTransform) -> Result<Array2<bool>> {
    if !t.is_valid() {
        return Err(Error::arg(format!("invalid transform {t:?}")));
    }
    let zeros = vec![0.0f32; rows * cols];
    let mut mask = vec![false; rows * cols];
    Grid::new(&zeros, rows, cols).warp_each(t, |i, v| mask[i] = v.is_some());
    Ok(Array2::from_shape_vec((rows, cols), mask).expect("shape matches"))
}

/// Applies precomputed per-frame transforms to every channel of `stack`.
pub fn warp_stack(
    stack: &ImageStack,
    transforms: &[RigidTransform],
) -> Result<(ImageStack, Vec<Array2<bool>>)> {
    let (channels, frames, rows, cols) = stack.shape();
    if transforms.len() != frames {
        return Err(Error::arg(format!(
            "{} transforms for {frames} frames",
            transforms.len()
        )));
    }
    let warped = exec::map_indices(frames, |t| -> Result<(Vec<Frame>, Array2<bool>)> {
        let mut out = Vec::with_capacity(channels);
        for ch in 0..channels {
            out.push(apply_rigid(stack.frame_at(ch, t)?, &transforms[t])?.0);
        }
        Ok((out, valid_mask(rows, cols, &transforms[t])?))
    });
    let mut data = Array4::<f32>::zeros((channels, frames, rows, cols));
    let mut masks = Vec::with_capacity(frames);
    for (t, item) in warped.into_iter().enumerate() {
        let (frames_t, mask) = item?;
        for (ch, w) in frames_t.iter().enumerate() {
            data.index_axis_mut(Axis(0), ch)
                .index_axis_mut(Axis(0), t)
                .assign(w);
        }
        masks.push(mask);
    }
    Ok((ImageStack::new(data, stack.frame_period_s())?, masks))
}

/// Scores alignment of a moving frame against a fixed reference.
struct Objective<'a> {
    moving: Grid<'a>,
    reference: &'a [f32],
    min_valid: usize,
}

impl<'a> Objective<'a> {
    fn new(moving: &'a [f32], reference: &'a [f32], rows: usize, cols: usize) -> Self {
        Self {
            moving: Grid::new(moving, rows, cols),
            reference,
            min_valid: (MIN_VALID_FRACTION * (rows * cols) as f64).ceil() as usize,
        }
    }

    fn finish(&self, sum: f64, count: usize) -> f64 {
        if count == 0 || count < self.min_valid {
            INVALID_RESIDUAL
        } else {
            sum / count as f64
        }
    }

    fn eval(&self, t: &RigidTransform) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        self.moving.warp_each(t, |i, v| {
            if let Some(v) = v {
                let d = v - self.reference[i] as f64;
                sum += d * d;
                count += 1;
            }
        });
        self.finish(sum, count)
    }

    /// Same as `eval` for a pure integer shift, without interpolation.
    fn eval_shift(&self, dx: i64, dy: i64) -> f64 {
        let rows = self.moving.rows as i64;
        let cols = self.moving.cols as i64;
        let r_lo = dy.max(0);
        let r_hi = (rows + dy).min(rows);
        let c_lo = dx.max(0);
        let c_hi = (cols + dx).min(cols);
        if r_lo >= r_hi || c_lo >= c_hi {
            return INVALID_RESIDUAL;
        }
        let count = ((r_hi - r_lo) * (c_hi - c_lo)) as usize;
        if count < self.min_valid {
            return INVALID_RESIDUAL;
        }
        let mut sum = 0.0;
        for r in r_lo..r_hi {
            let out_row = &self.reference[(r * cols) as usize..][(c_lo as usize)..(c_hi as usize)];
            let src_start = ((r - dy) * cols + (c_lo - dx)) as usize;
            let src_row = &self.moving.data[src_start..src_start + out_row.len()];
            for (a, b) in src_row.iter().zip(out_row) {
                let d = *a as f64 - *b as f64;
                sum += d * d;
            }
        }
        self.finish(sum, count)
    }
}

fn check_same_dims(a: ArrayView2<f32>, b: ArrayView2<f32>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::arg(format!(
            "frame is {:?} but reference is {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Mean squared difference between the warped frame and the reference over
/// the valid region; `+inf` when fewer than a quarter of the pixels are valid.
pub fn sse_objective(
    frame: ArrayView2<f32>,
    reference: ArrayView2<f32>,
    t: &RigidTransform,
) -> Result<f64> {
    check_same_dims(frame, reference)?;
    if !t.is_valid() {
        return Err(Error::arg(format!("invalid transform {t:?}")));
    }
    let (rows, cols) = frame.dim();
    let moving = contiguous(frame);
    let fixed = contiguous(reference);
    Ok(Objective::new(&moving, &fixed, rows, cols).eval(t))
}

/// Finds the rigid transform that best maps `frame` onto `reference`.
///
/// Returns the transform and its objective value, which never exceeds the
/// best integer-grid score.
pub fn estimate_transform(
    frame: ArrayView2<f32>,
    reference: ArrayView2<f32>,
    cfg: &AlignmentConfig,
) -> Result<(RigidTransform, f64)> {
    check_same_dims(frame, reference)?;
    cfg.validate()?;
    let (rows, cols) = frame.dim();
    let moving = contiguous(frame);
    let fixed = contiguous(reference);
    let objective = Objective::new(&moving, &fixed, rows, cols);

    let reach = cfg.max_shift_px.floor() as i64;
    let mut best = (RigidTransform::IDENTITY, INVALID_RESIDUAL);
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let score = objective.eval_shift(dx, dy);
            if score < best.1 {
                best = (RigidTransform::new(dx as f64, dy as f64, 0.0), score);
            }
        }
    }
    if !best.1.is_finite() {
        return Err(Error::AlignmentFailure(
            "no candidate shift leaves enough overlap with the reference".into(),
        ));
    }

    let bounded = |p: &[f64; 3]| {
        if p[0].abs() > cfg.max_shift_px
            || p[1].abs() > cfg.max_shift_px
            || p[2].abs() > cfg.max_theta_rad
        {
            INVALID_RESIDUAL
        } else {
            objective.eval(&RigidTransform::new(p[0], p[1], p[2]))
        }
    };
    let theta_step = (cfg.max_theta_rad / 4.0).min(0.02);
    let tol = [cfg.tol_px, cfg.tol_px, cfg.tol_rad];
    let start = [best.0.dx, best.0.dy, best.0.theta];

    let first =
        NelderMead::new([0.5, 0.5, theta_step], tol, cfg.max_iters).minimize(start, bounded);
    // One restart with a fresh simplex guards against premature collapse.
    let budget = cfg.max_iters.saturating_sub(first.iterations);
    let refined = if budget > 0 {
        let second =
            NelderMead::new([0.25, 0.25, theta_step / 2.0], tol, budget).minimize(first.x, bounded);
        if second.value <= first.value {
            second
        } else {
            first
        }
    } else {
        first
    };

    if refined.value <= best.1 {
        let [dx, dy, theta] = refined.x;
        Ok((RigidTransform::new(dx, dy, theta), refined.value))
    } else {
        Ok(best)
    }
}

/// Registers every frame to the reference frame and warps all channels.
///
/// The transform is estimated on the reference channel and applied unchanged
/// to every channel at the same time index. A frame whose estimation fails is
/// copied through unaligned and flagged in the result.
pub fn align_stack(
    stack: &ImageStack,
    cfg: &AlignmentConfig,
) -> Result<(ImageStack, AlignmentResult)> {
    cfg.validate()?;
    let (channels, frames, rows, cols) = stack.shape();
    let ref_t = cfg.reference_time_for(frames);
    let reference = stack
        .frame_at(cfg.reference_channel, ref_t)
        .map_err(|e| Error::Config(format!("reference frame: {e}")))?;

    struct FrameOutcome {
        transform: RigidTransform,
        residual: f64,
        failed: bool,
        mask: Array2<bool>,
        warped: Vec<Frame>,
    }

    let outcomes = exec::map_indices(frames, |t| -> Result<FrameOutcome> {
        let moving = stack.frame_at(cfg.reference_channel, t)?;
        let (transform, residual, failed) = if t == ref_t {
            (RigidTransform::IDENTITY, 0.0, false)
        } else {
            match estimate_transform(moving, reference, cfg) {
                Ok((tr, res)) => (tr, res, false),
                Err(Error::AlignmentFailure(_)) => (
                    RigidTransform::IDENTITY,
                    sse_objective(moving, reference, &RigidTransform::IDENTITY)?,
                    true,
                ),
                Err(e) => return Err(e),
            }
        };
        let mut warped = Vec::with_capacity(channels);
        let mut mask = Array2::from_elem((rows, cols), true);
        for ch in 0..channels {
            let frame = stack.frame_at(ch, t)?;
            if failed {
                warped.push(frame.to_owned());
            } else {
                let (w, m) = apply_rigid(frame, &transform)?;
                warped.push(w);
                mask = m;
            }
        }
        Ok(FrameOutcome {
            transform,
            residual,
            failed,
            mask,
            warped,
        })
    });

    let mut data = Array4::<f32>::zeros((channels, frames, rows, cols));
    let mut result = AlignmentResult {
        transforms: Vec::with_capacity(frames),
        residual_sse: Vec::with_capacity(frames),
        valid_masks: Vec::with_capacity(frames),
        failed: Vec::with_capacity(frames),
        reference_time: ref_t,
    };
    for (t, outcome) in outcomes.into_iter().enumerate() {
        let outcome = outcome?;
        for (ch, w) in outcome.warped.iter().enumerate() {
            data.index_axis_mut(Axis(0), ch)
                .index_axis_mut(Axis(0), t)
                .assign(w);
        }
        result.transforms.push(outcome.transform);
        result.residual_sse.push(outcome.residual);
        result.valid_masks.push(outcome.mask);
        result.failed.push(outcome.failed);
    }
    let aligned = ImageStack::new(data, stack.frame_period_s())?;
    Ok((aligned, result))
}
