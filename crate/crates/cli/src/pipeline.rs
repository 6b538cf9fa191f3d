//! End-to-end resting-versus-stimulated analysis.
//!
//! Each state is aligned, its functional channel is mean-equalized, and the
//! per-pixel statistics before and after each step are summarised. Movement
//! series and heart rate are compared between states with Levene's test, and
//! the equalized mean images give the stimulated-minus-resting difference map.
//! `report.json` holds no timestamps or absolute paths, so identical inputs
//! give identical bytes.

use std::path::{Path, PathBuf};

use anyhow::anyhow;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use twophoton::intensity::{self, PixelStats};
use twophoton::movement::{self, MovementKind, MovementSeries};
use twophoton::registration::{self, AlignmentConfig};
use twophoton::stack::{ChannelView, FUNCTIONAL};
use twophoton::{io, variance_tests, Center, ImageStack, LeveneReport, StimSchedule};

use crate::failure::{prepare_out, require_inputs, Outcome, StageExt};

fn default_functional() -> usize {
    FUNCTIONAL
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub resting_stack: PathBuf,
    pub stimulated_stack: PathBuf,
    #[serde(default)]
    pub resting_heart_rate: Option<PathBuf>,
    #[serde(default)]
    pub stimulated_heart_rate: Option<PathBuf>,
    /// Trial-start CSV (`trial_start_s`).
    #[serde(default)]
    pub schedule: Option<PathBuf>,
    #[serde(default)]
    pub alignment: AlignmentConfig,
    /// Restrict statistics to pixels valid in every aligned frame.
    #[serde(default)]
    pub valid_only: bool,
    #[serde(default)]
    pub center: Center,
    /// Trial-locked Levene grouping: seconds after each trial start.
    #[serde(default)]
    pub window_s: Option<f64>,
    #[serde(default = "default_functional")]
    pub functional_channel: usize,
}

impl PipelineConfig {
    fn resolve(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.resting_stack);
        fix(&mut self.stimulated_stack);
        for p in [
            &mut self.resting_heart_rate,
            &mut self.stimulated_heart_rate,
            &mut self.schedule,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        self
    }

    fn inputs(&self) -> Vec<&Path> {
        let mut v = vec![
            self.resting_stack.as_path(),
            self.stimulated_stack.as_path(),
        ];
        v.extend(
            [
                &self.resting_heart_rate,
                &self.stimulated_heart_rate,
                &self.schedule,
            ]
            .into_iter()
            .flatten()
            .map(PathBuf::as_path),
        );
        v
    }
}

#[derive(Debug, Serialize)]
struct PerState<T> {
    resting: T,
    stimulated: T,
}

#[derive(Debug, Serialize)]
struct AlignmentSummary {
    total_var_before: f64,
    total_var_after: f64,
    reduction_pct: f64,
    pixels_used: usize,
    failed_frames: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct EqualizationSummary {
    standard: f64,
    total_var_before: f64,
    total_var_after: f64,
    reduction_pct: f64,
}

#[derive(Debug, Serialize)]
struct LeveneSection {
    series: &'static str,
    grouping: &'static str,
    #[serde(flatten)]
    report: LeveneReport,
}

#[derive(Debug, Serialize)]
struct DiffSection {
    min: f64,
    max: f64,
    path: String,
}

#[derive(Debug, Serialize)]
struct Report {
    alignment: PerState<AlignmentSummary>,
    equalization: PerState<EqualizationSummary>,
    movement_levene: LeveneSection,
    heart_rate_levene: Option<LeveneSection>,
    difference_map: DiffSection,
    artifacts: Vec<String>,
}

struct StateOutcome {
    alignment: AlignmentSummary,
    equalization: EqualizationSummary,
    mean_map: Array2<f64>,
    valid: Array2<bool>,
    movement: MovementSeries,
}

/// Records relative artifact names as files are written.
struct Artifacts<'a> {
    dir: &'a Path,
    names: Vec<String>,
}

impl<'a> Artifacts<'a> {
    fn path(&mut self, name: &str) -> PathBuf {
        self.names.push(name.to_string());
        self.dir.join(name)
    }
}

fn stats(view: ChannelView, valid: Option<&Array2<bool>>) -> twophoton::Result<PixelStats> {
    match valid {
        Some(m) => intensity::pixel_stats_masked(view, m),
        None => intensity::pixel_stats(view),
    }
}

fn reduction(before: f64, after: f64) -> f64 {
    intensity::variance_reduction_pct(before, after).unwrap_or(0.0)
}

fn analyze_state(
    name: &str,
    stack: &ImageStack,
    cfg: &PipelineConfig,
    out: &mut Artifacts,
) -> Outcome<StateOutcome> {
    let func = cfg.functional_channel;
    let (aligned, result) = registration::align_stack(stack, &cfg.alignment).stage("align")?;
    io::export_alignment_csv(&result, out.path(&format!("{name}_transforms.csv")))
        .stage("write")?;
    let common = result
        .common_valid_mask()
        .ok_or_else(|| anyhow!("empty stack"))
        .stage("align")?;
    let mask = cfg.valid_only.then_some(&common);

    let raw = stack.channel(func).stage("stats")?;
    let moved = aligned.channel(func).stage("stats")?;
    let before = stats(raw, mask).stage("stats")?;
    let after = stats(moved, mask).stage("stats")?;
    let (var_before, var_after) = (
        intensity::total_variance(&before),
        intensity::total_variance(&after),
    );
    io::export_csv_pairs(
        &intensity::mean_variance_scatter(&before, 1e-12).stage("stats")?,
        out.path(&format!("{name}_scatter_before.csv")),
    )
    .stage("write")?;
    io::export_csv_pairs(
        &intensity::mean_variance_scatter(&after, 1e-12).stage("stats")?,
        out.path(&format!("{name}_scatter_after.csv")),
    )
    .stage("write")?;
    let alignment = AlignmentSummary {
        total_var_before: var_before,
        total_var_after: var_after,
        reduction_pct: reduction(var_before, var_after),
        pixels_used: mask.map_or(common.len(), |m| m.iter().filter(|&&v| v).count()),
        failed_frames: result.failures(),
    };

    let (equalized, report) = match mask {
        Some(m) => intensity::mean_equalize_masked(moved, m),
        None => intensity::mean_equalize(moved),
    }
    .stage("equalize")?;
    let eq_stats = stats(equalized.view(), mask).stage("equalize")?;
    io::write_json(&report, out.path(&format!("{name}_equalization.json"))).stage("write")?;
    io::export_pgm(
        eq_stats.mean_map.view(),
        out.path(&format!("{name}_mean.pgm")),
    )
    .stage("write")?;
    let equalization = EqualizationSummary {
        standard: report.standard,
        total_var_before: report.total_var_before,
        total_var_after: report.total_var_after,
        reduction_pct: report.reduction_pct,
    };

    let structural = stack
        .channel(cfg.alignment.reference_channel)
        .stage("movement")?;
    let framediff =
        movement::framediff_series(structural, stack.frame_period_s()).stage("movement")?;
    let shiftmag = movement::shiftmag_series(&result, stack.frame_period_s());
    io::export_csv_pairs_labeled(
        &framediff.timed(),
        ("t_s", "value"),
        out.path(&format!("{name}_movement.csv")),
    )
    .stage("write")?;
    io::export_csv_pairs_labeled(
        &shiftmag.timed(),
        ("t_s", "value"),
        out.path(&format!("{name}_shiftmag.csv")),
    )
    .stage("write")?;

    Ok(StateOutcome {
        alignment,
        equalization,
        mean_map: eq_stats.mean_map,
        valid: common,
        movement: framediff,
    })
}

fn compare(
    rest: (&[f64], f64),
    stim: (&[f64], f64),
    schedule: Option<&StimSchedule>,
    cfg: &PipelineConfig,
) -> twophoton::Result<(LeveneReport, &'static str)> {
    match (cfg.window_s, schedule) {
        (Some(window), Some(sched)) => movement::windowed_levene(
            rest.0,
            rest.1,
            stim.0,
            stim.1,
            &sched.trial_starts_s,
            window,
            cfg.center,
        )
        .map(|r| (r, "trial_window")),
        _ => variance_tests::levene_two(rest.0, stim.0, cfg.center).map(|r| (r, "whole_series")),
    }
}

pub fn run(config_path: &Path, out_dir: &Path) -> Outcome {
    require_inputs([config_path])?;
    let cfg: PipelineConfig = io::read_json(config_path).stage("config")?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let cfg = cfg.resolve(base);
    require_inputs(cfg.inputs())?;
    let inputs = cfg.inputs();
    for (i, a) in inputs.iter().enumerate() {
        if inputs[i + 1..].contains(a) {
            return Err(anyhow!("input {} is listed twice", a.display())).stage("config");
        }
    }
    if cfg.window_s.is_some() && cfg.schedule.is_none() {
        return Err(anyhow!("window_s needs a schedule")).stage("config");
    }
    cfg.alignment.validate().stage("config")?;
    prepare_out(out_dir)?;

    let rest_stack = io::load_stack(&cfg.resting_stack).stage("load")?;
    let stim_stack = io::load_stack(&cfg.stimulated_stack).stage("load")?;
    let schedule = cfg
        .schedule
        .as_deref()
        .map(io::load_schedule)
        .transpose()
        .stage("load")?;
    let heart = match (&cfg.resting_heart_rate, &cfg.stimulated_heart_rate) {
        (Some(a), Some(b)) => Some((
            io::load_biosignal(a).stage("load")?,
            io::load_biosignal(b).stage("load")?,
        )),
        (None, None) => None,
        _ => return Err(anyhow!("heart-rate files must be given for both states")).stage("config"),
    };

    let mut artifacts = Artifacts {
        dir: out_dir,
        names: Vec::new(),
    };
    let rest = analyze_state("resting", &rest_stack, &cfg, &mut artifacts)?;
    let stim = analyze_state("stimulated", &stim_stack, &cfg, &mut artifacts)?;

    let (movement_report, grouping) = compare(
        (&rest.movement.values, rest.movement.frame_period_s),
        (&stim.movement.values, stim.movement.frame_period_s),
        schedule.as_ref(),
        &cfg,
    )
    .stage("levene")?;
    let movement_levene = LeveneSection {
        series: match rest.movement.kind {
            MovementKind::Framediff => "framediff",
            MovementKind::Shiftmag => "shiftmag",
        },
        grouping,
        report: movement_report,
    };

    let heart_rate_levene = match heart {
        Some((a, b)) => {
            let (report, grouping) = compare(
                (&a.samples, a.sample_period_s()),
                (&b.samples, b.sample_period_s()),
                schedule.as_ref(),
                &cfg,
            )
            .stage("levene")?;
            Some(LeveneSection {
                series: "heart_rate",
                grouping,
                report,
            })
        }
        _ => None,
    };

    let mut diff =
        intensity::difference_map(stim.mean_map.view(), rest.mean_map.view()).stage("diffmap")?;
    if cfg.valid_only {
        ndarray::Zip::from(&mut diff)
            .and(&rest.valid)
            .and(&stim.valid)
            .for_each(|d, &a, &b| {
                if !(a && b) {
                    *d = 0.0;
                }
            });
    }
    let diff_name = "diffmap.pgm";
    io::export_pgm(diff.view(), artifacts.path(diff_name)).stage("write")?;
    if let Some(sched) = &schedule {
        let shocks: Vec<(f64, f64)> = sched.shock_times().into_iter().map(|t| (t, 1.0)).collect();
        io::export_csv_pairs_labeled(&shocks, ("t_s", "shock"), artifacts.path("shocks.csv"))
            .stage("write")?;
    }

    let difference_map = DiffSection {
        min: diff.iter().copied().fold(f64::INFINITY, f64::min),
        max: diff.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        path: diff_name.to_string(),
    };
    let mut names = artifacts.names;
    names.push("report.json".to_string());
    let report = Report {
        alignment: PerState {
            resting: rest.alignment,
            stimulated: stim.alignment,
        },
        equalization: PerState {
            resting: rest.equalization,
            stimulated: stim.equalization,
        },
        movement_levene,
        heart_rate_levene,
        difference_map,
        artifacts: names,
    };
    io::write_json(&report, out_dir.join("report.json")).stage("write")
}
