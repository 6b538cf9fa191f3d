use std::path::Path;

use anyhow::anyhow;
use ndarray::Array2;
use serde::Serialize;

use twophoton::intensity::{self, PixelStats};
use twophoton::movement::{self, MovementKind};
use twophoton::registration::{self, AlignmentConfig, RigidTransform};
use twophoton::stack::ChannelView;
use twophoton::{io, synth, variance_tests, ImageStack};

use crate::failure::{prepare_out, require_inputs, Outcome, StageExt};
use crate::{
    AlignArgs, DiffmapArgs, EqualizeArgs, LeveneArgs, MaskArgs, MovementArgs, ScatterArgs,
    StatsArgs, SynthArgs,
};

fn load(path: &Path) -> Outcome<ImageStack> {
    require_inputs([path])?;
    io::load_stack(path).stage("load")
}

fn channel(stack: &ImageStack, ch: usize) -> Outcome<ChannelView<'_>> {
    stack.channel(ch).stage("load")
}

fn parse_ref_time(s: &str) -> anyhow::Result<Option<usize>> {
    if s == "mid" {
        Ok(None)
    } else {
        s.parse()
            .map(Some)
            .map_err(|_| anyhow!("--ref-time must be \"mid\" or a frame index, got {s:?}"))
    }
}

pub fn align(args: AlignArgs) -> Outcome {
    let stack = load(&args.stack)?;
    prepare_out(&args.out)?;
    let cfg = AlignmentConfig {
        reference_channel: args.ref_channel,
        reference_time: parse_ref_time(&args.ref_time).stage("align")?,
        max_shift_px: args.max_shift,
        max_theta_rad: args.max_theta,
        tol_px: args.tol_px,
        tol_rad: args.tol_rad,
        max_iters: args.max_iters,
    };
    let (aligned, result) = registration::align_stack(&stack, &cfg).stage("align")?;
    io::save_stack(&aligned, args.out.join("aligned.json")).stage("write")?;
    io::export_alignment_csv(&result, args.out.join("transforms.csv")).stage("write")?;
    for t in result.failures() {
        eprintln!("warning: frame {t} could not be aligned and was left as is");
    }
    Ok(())
}

pub fn equalize(args: EqualizeArgs) -> Outcome {
    let stack = load(&args.stack)?;
    prepare_out(&args.out)?;
    let (equalized, report) =
        intensity::mean_equalize(channel(&stack, args.channel)?).stage("equalize")?;
    let out = stack
        .with_channel(args.channel, equalized)
        .stage("equalize")?;
    io::save_stack(&out, args.out.join("equalized.json")).stage("write")?;
    io::write_json(&report, args.out.join("equalization.json")).stage("write")
}

/// Valid-in-every-frame mask reconstructed from an alignment CSV.
pub fn mask_from_transforms(
    transforms: &[RigidTransform],
    rows: usize,
    cols: usize,
) -> anyhow::Result<Array2<bool>> {
    let mut acc = Array2::from_elem((rows, cols), true);
    for t in transforms {
        let m = registration::valid_mask(rows, cols, t)?;
        acc.zip_mut_with(&m, |a, &b| *a = *a && b);
    }
    Ok(acc)
}

fn stats_for(
    stack_path: &Path,
    stack: &ImageStack,
    ch: usize,
    mask: &MaskArgs,
) -> Outcome<PixelStats> {
    let view = channel(stack, ch)?;
    if !mask.valid_only {
        return intensity::pixel_stats(view).stage("stats");
    }
    let path = mask.transforms.clone().unwrap_or_else(|| {
        stack_path
            .parent()
            .unwrap_or(Path::new("."))
            .join("transforms.csv")
    });
    require_inputs([path.as_path()])?;
    let transforms = io::load_alignment_csv(&path).stage("load")?;
    if transforms.len() != stack.frames() {
        return Err(anyhow!(
            "{} transforms for {} frames",
            transforms.len(),
            stack.frames()
        ))
        .stage("stats");
    }
    let valid = mask_from_transforms(&transforms, stack.rows(), stack.cols()).stage("stats")?;
    intensity::pixel_stats_masked(view, &valid).stage("stats")
}

#[derive(Serialize)]
struct StatsSummary {
    frames_used: usize,
    pixels_used: usize,
    total_variance: f64,
}

pub fn stats(args: StatsArgs) -> Outcome {
    let stack = load(&args.stack)?;
    prepare_out(&args.out)?;
    let ps = stats_for(&args.stack, &stack, args.channel, &args.mask)?;
    io::export_pgm(ps.mean_map.view(), args.out.join("mean.pgm")).stage("write")?;
    io::export_pgm(ps.var_map.view(), args.out.join("var.pgm")).stage("write")?;
    let summary = StatsSummary {
        frames_used: ps.frames_used,
        pixels_used: ps
            .valid
            .as_ref()
            .map_or(ps.mean_map.len(), |m| m.iter().filter(|&&v| v).count()),
        total_variance: intensity::total_variance(&ps),
    };
    io::write_json(&summary, args.out.join("stats.json")).stage("write")
}

pub fn scatter(args: ScatterArgs) -> Outcome {
    let stack = load(&args.stack)?;
    prepare_out(&args.out)?;
    let ps = stats_for(&args.stack, &stack, args.channel, &args.mask)?;
    let pairs = intensity::mean_variance_scatter(&ps, args.epsilon).stage("scatter")?;
    io::export_csv_pairs(&pairs, args.out.join("scatter.csv")).stage("write")
}

#[derive(Serialize)]
struct DiffSummary {
    min: f64,
    max: f64,
}

pub fn diffmap(args: DiffmapArgs) -> Outcome {
    require_inputs([args.stack_a.as_path(), args.stack_b.as_path()])?;
    let a = load(&args.stack_a)?;
    let b = load(&args.stack_b)?;
    prepare_out(&args.out)?;
    let mean_a = intensity::pixel_stats(channel(&a, args.channel)?).stage("diffmap")?;
    let mean_b = intensity::pixel_stats(channel(&b, args.channel)?).stage("diffmap")?;
    let diff = intensity::difference_map(mean_a.mean_map.view(), mean_b.mean_map.view())
        .stage("diffmap")?;
    io::export_pgm(diff.view(), args.out.join("diffmap.pgm")).stage("write")?;
    let summary = DiffSummary {
        min: diff.iter().copied().fold(f64::INFINITY, f64::min),
        max: diff.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    io::write_json(&summary, args.out.join("diffmap.json")).stage("write")
}

pub fn movement(args: MovementArgs) -> Outcome {
    let stack = load(&args.stack)?;
    if let Some(p) = &args.aligned {
        require_inputs([p.as_path()])?;
    }
    if let Some(p) = &args.schedule {
        require_inputs([p.as_path()])?;
    }
    prepare_out(&args.out)?;
    let transforms = args
        .aligned
        .as_deref()
        .map(io::load_alignment_csv)
        .transpose()
        .stage("load")?;

    let series = match args.kind {
        MovementKind::Framediff => match &transforms {
            Some(tr) => {
                let (warped, _) = registration::warp_stack(&stack, tr).stage("movement")?;
                movement::framediff_series(channel(&warped, args.channel)?, stack.frame_period_s())
            }
            None => {
                movement::framediff_series(channel(&stack, args.channel)?, stack.frame_period_s())
            }
        }
        .stage("movement")?,
        MovementKind::Shiftmag => {
            let Some(tr) = &transforms else {
                return Err(anyhow!("shiftmag needs --aligned")).stage("movement");
            };
            movement::MovementSeries {
                values: tr.iter().map(|t| t.dx.hypot(t.dy)).collect(),
                kind: MovementKind::Shiftmag,
                frame_period_s: stack.frame_period_s(),
            }
        }
    };
    io::export_csv_pairs_labeled(
        &series.timed(),
        ("t_s", "value"),
        args.out.join("movement.csv"),
    )
    .stage("write")?;
    if let Some(p) = &args.schedule {
        let sched = io::load_schedule(p).stage("load")?;
        let shocks: Vec<(f64, f64)> = sched.shock_times().into_iter().map(|t| (t, 1.0)).collect();
        io::export_csv_pairs_labeled(&shocks, ("t_s", "shock"), args.out.join("shocks.csv"))
            .stage("write")?;
    }
    Ok(())
}

/// Values from the last column, plus the sample period inferred from the first
/// column when the file has more than one.
fn load_timed(path: &Path) -> anyhow::Result<(Vec<f64>, Option<f64>)> {
    let values = io::load_series(path)?;
    let text = std::fs::read_to_string(path)?;
    let header = text.lines().next().unwrap_or_default();
    if header.split(',').count() < 2 {
        return Ok((values, None));
    }
    let times: Vec<f64> = text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .next()
                .unwrap_or_default()
                .trim()
                .parse::<f64>()
        })
        .collect::<Result<_, _>>()?;
    let mut gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    if gaps.is_empty() {
        return Ok((values, None));
    }
    gaps.sort_by(f64::total_cmp);
    Ok((values, Some(gaps[gaps.len() / 2])))
}

pub fn levene(args: LeveneArgs) -> Outcome {
    require_inputs([args.group_a.as_path(), args.group_b.as_path()])?;
    if let Some(p) = &args.schedule {
        require_inputs([p.as_path()])?;
    }
    prepare_out(&args.out)?;
    let (a, period_a) = load_timed(&args.group_a).stage("load")?;
    let (b, period_b) = load_timed(&args.group_b).stage("load")?;
    let report = match args.window {
        None => variance_tests::levene_two(&a, &b, args.center).stage("levene")?,
        Some(window) => {
            let sched = io::load_schedule(args.schedule.as_deref().expect("clap requires it"))
                .stage("load")?;
            let (Some(pa), Some(pb)) = (period_a, period_b) else {
                return Err(anyhow!("--window needs time-stamped group files")).stage("levene");
            };
            movement::windowed_levene(&a, pa, &b, pb, &sched.trial_starts_s, window, args.center)
                .stage("levene")?
        }
    };
    io::write_json(&report, args.out.join("levene.json")).stage("write")
}

pub fn synth(args: SynthArgs) -> Outcome {
    require_inputs([args.config.as_path()])?;
    let cfg: synth::SynthConfig = io::read_json(&args.config).stage("synth")?;
    prepare_out(&args.out)?;
    let (stack, truth) = synth::generate(&cfg).stage("synth")?;
    io::save_stack(&stack, args.out.join("stack.json")).stage("write")?;
    io::write_json(&truth, args.out.join("truth.json")).stage("write")?;
    if !cfg.stim.trial_starts_s.is_empty() {
        io::save_schedule(&cfg.stim, args.out.join("schedule.csv")).stage("write")?;
    }
    Ok(())
}
