//! File formats: raw stacks with JSON sidecars, biosignal and schedule CSVs,
//! 16-bit PGM maps and plain CSV exports.
//!
//! A stack lives in two files next to each other: `<name>.json` holds a
//! [`StackHeader`] and `<name>.bin` holds little-endian `f32` samples in
//! channel, time, row, col order with no padding.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registration::{AlignmentResult, RigidTransform};
use crate::stack::{BioSignal, ImageStack, StimSchedule};

pub const DTYPE_F32LE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackHeader {
    pub channels: usize,
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub frame_period_s: f64,
}

impl StackHeader {
    pub fn for_stack(stack: &ImageStack) -> Self {
        let (channels, frames, rows, cols) = stack.shape();
        Self {
            channels,
            frames,
            rows,
            cols,
            dtype: DTYPE_F32LE.to_string(),
            frame_period_s: stack.frame_period_s(),
        }
    }

    /// `None` when the product overflows.
    fn value_count(&self) -> Option<u64> {
        [self.channels, self.frames, self.rows, self.cols]
            .iter()
            .try_fold(1u64, |acc, &n| acc.checked_mul(n as u64))
    }
}

/// Path of the binary payload belonging to a header file.
pub fn payload_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("bin")
}

pub fn load_stack(header_path: impl AsRef<Path>) -> Result<ImageStack> {
    let header_path = header_path.as_ref();
    let text = fs::read_to_string(header_path).map_err(|source| Error::Read {
        path: header_path.to_path_buf(),
        source,
    })?;
    let header: StackHeader = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: header_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let format_err = |message: String| Error::Format {
        path: header_path.to_path_buf(),
        message,
    };
    if header.dtype != DTYPE_F32LE {
        return Err(format_err(format!(
            "unsupported dtype {:?}, expected {DTYPE_F32LE:?}",
            header.dtype
        )));
    }
    if [header.channels, header.frames, header.rows, header.cols].contains(&0) {
        return Err(format_err("all dimensions must be at least 1".into()));
    }
    if !(header.frame_period_s.is_finite() && header.frame_period_s > 0.0) {
        return Err(format_err("frame_period_s must be positive".into()));
    }

    let bin_path = payload_path(header_path);
    let bytes = fs::read(&bin_path).map_err(|source| Error::Read {
        path: bin_path.clone(),
        source,
    })?;
    let expected = header
        .value_count()
        .and_then(|n| n.checked_mul(4))
        .unwrap_or(u64::MAX);
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: bin_path,
            expected,
            found: bytes.len() as u64,
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::DataIntegrity { index });
    }
    ImageStack::from_vec(
        (header.channels, header.frames, header.rows, header.cols),
        values,
        header.frame_period_s,
    )
}

pub fn save_stack(stack: &ImageStack, header_path: impl AsRef<Path>) -> Result<()> {
    let header_path = header_path.as_ref();
    if header_path.as_os_str().is_empty() {
        return Err(write_err(
            header_path,
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty path"),
        ));
    }
    let header = StackHeader::for_stack(stack);
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(header_path, json + "\n").map_err(|e| write_err(header_path, e))?;

    let bin_path = payload_path(header_path);
    let mut bytes = Vec::with_capacity(stack.as_slice().len() * 4);
    for v in stack.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin_path, bytes).map_err(|e| write_err(&bin_path, e))
}

fn write_err(path: &Path, source: std::io::Error) -> Error {
    Error::Write {
        path: path.to_path_buf(),
        source,
    }
}

fn read_csv(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file))
}

fn csv_parse_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn parse_cell(path: &Path, line: usize, cell: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        message: format!("line {line}: {cell:?} is not a number"),
    })?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {line}: non-finite value"),
        })
    }
}

/// Reads a `time_s,value` CSV. The sample rate is the reciprocal of the median
/// spacing between consecutive timestamps.
pub fn load_biosignal(csv_path: impl AsRef<Path>) -> Result<BioSignal> {
    let path = csv_path.as_ref();
    let mut reader = read_csv(path)?;
    let header = reader
        .headers()
        .map_err(|e| csv_parse_err(path, e))?
        .clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols != ["time_s", "value"] {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("expected header time_s,value, found {}", cols.join(",")),
        });
    }

    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_parse_err(path, e))?;
        let line = i + 2;
        if record.len() != 2 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("line {line}: expected 2 fields, found {}", record.len()),
            });
        }
        times.push(parse_cell(path, line, &record[0])?);
        values.push(parse_cell(path, line, &record[1])?);
    }
    if times.len() < 2 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "at least two samples are needed to infer the sample rate".into(),
        });
    }
    if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("timestamps not increasing at line {}", i + 3),
        });
    }
    let mut spacing: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    spacing.sort_by(f64::total_cmp);
    let median = crate::variance_tests::median_sorted(&spacing);
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    BioSignal::new(1.0 / median, values, label)
}

/// Reads a single-column `trial_start_s` CSV into a schedule with the default shock train.
pub fn load_schedule(csv_path: impl AsRef<Path>) -> Result<StimSchedule> {
    let path = csv_path.as_ref();
    let mut reader = read_csv(path)?;
    let header = reader
        .headers()
        .map_err(|e| csv_parse_err(path, e))?
        .clone();
    if header.len() != 1 || header[0].trim() != "trial_start_s" {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "expected a single trial_start_s column".into(),
        });
    }
    let mut starts = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_parse_err(path, e))?;
        starts.push(parse_cell(path, i + 2, &record[0])?);
    }
    let sched = StimSchedule {
        trial_starts_s: starts,
        ..StimSchedule::default()
    };
    sched.validate().map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(sched)
}

pub fn save_schedule(sched: &StimSchedule, path: impl AsRef<Path>) -> Result<()> {
    let lines = std::iter::once("trial_start_s".to_string())
        .chain(sched.trial_starts_s.iter().map(|t| t.to_string()));
    write_lines(path.as_ref(), lines)
}

/// Reads the last column of a headed CSV as a series of numbers.
///
/// Accepts the outputs of [`export_csv_series`], [`export_csv_pairs`] and
/// biosignal files alike.
pub fn load_series(csv_path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = csv_path.as_ref();
    let mut reader = read_csv(path)?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_parse_err(path, e))?;
        let cell = record.iter().next_back().ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            message: format!("line {}: empty row", i + 2),
        })?;
        out.push(parse_cell(path, i + 2, cell)?);
    }
    Ok(out)
}

/// Writes a 16-bit binary PGM with values min-max scaled onto 0..=65535.
///
/// A constant matrix maps to all zeros.
pub fn export_pgm(m: ArrayView2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("cannot export non-finite values to PGM"));
    }
    let (rows, cols) = m.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::arg("cannot export an empty matrix to PGM"));
    }
    let (lo, hi) = m
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;

    let mut out = Vec::with_capacity(32 + rows * cols * 2);
    out.extend_from_slice(format!("P5\n{cols} {rows}\n65535\n").as_bytes());
    for &v in m.iter() {
        let level = if range > 0.0 {
            ((v - lo) / range * 65535.0).round() as u16
        } else {
            0
        };
        out.extend_from_slice(&level.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| write_err(path, e))
}

pub fn export_csv_series(series: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let lines = std::iter::once("value".to_string()).chain(series.iter().map(|v| v.to_string()));
    write_lines(path.as_ref(), lines)
}

pub fn export_csv_pairs(pairs: &[(f64, f64)], path: impl AsRef<Path>) -> Result<()> {
    export_csv_pairs_labeled(pairs, ("x", "y"), path)
}

pub fn export_csv_pairs_labeled(
    pairs: &[(f64, f64)],
    header: (&str, &str),
    path: impl AsRef<Path>,
) -> Result<()> {
    let lines = std::iter::once(format!("{},{}", header.0, header.1))
        .chain(pairs.iter().map(|(x, y)| format!("{x},{y}")));
    write_lines(path.as_ref(), lines)
}

/// Writes per-frame transforms as `t,dx,dy,theta,residual,failed`.
pub fn export_alignment_csv(result: &AlignmentResult, path: impl AsRef<Path>) -> Result<()> {
    let lines = std::iter::once("t,dx,dy,theta,residual,failed".to_string()).chain(
        result
            .transforms
            .iter()
            .zip(&result.residual_sse)
            .zip(&result.failed)
            .enumerate()
            .map(|(t, ((tr, res), failed))| {
                format!(
                    "{t},{},{},{},{res},{}",
                    tr.dx,
                    tr.dy,
                    tr.theta,
                    u8::from(*failed)
                )
            }),
    );
    write_lines(path.as_ref(), lines)
}

/// Reads the transforms back from an alignment CSV, in time order.
pub fn load_alignment_csv(path: impl AsRef<Path>) -> Result<Vec<RigidTransform>> {
    let path = path.as_ref();
    let mut reader = read_csv(path)?;
    let header = reader
        .headers()
        .map_err(|e| csv_parse_err(path, e))?
        .clone();
    if header.len() < 4 || &header[1] != "dx" || &header[2] != "dy" || &header[3] != "theta" {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "expected t,dx,dy,theta,... header".into(),
        });
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_parse_err(path, e))?;
        let line = i + 2;
        if record.len() < 4 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("line {line}: too few fields"),
            });
        }
        out.push(RigidTransform::new(
            parse_cell(path, line, &record[1])?,
            parse_cell(path, line, &record[2])?,
            parse_cell(path, line, &record[3])?,
        ));
    }
    Ok(out)
}

/// Serializes `value` as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::arg(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| write_err(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| write_err(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| write_err(path, e))
}
