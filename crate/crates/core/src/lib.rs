//! Analysis toolkit for two-photon calcium imaging stacks.
//!
//! The crate covers the whole desk-scale workflow: loading and saving raw
//! stacks, rigid motion correction against a reference frame, per-frame mean
//! equalization, per-pixel temporal statistics, brain-movement time series and
//! Levene's test for comparing the variance of two experimental conditions.
//! A deterministic synthetic generator with ground truth backs the test suite.
//!
//! Data-parallel loops (per-frame registration, frame synthesis, per-row pixel
//! statistics) run on rayon when the default `parallel` feature is enabled and
//! fall back to plain iterators otherwise. Results are identical either way.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod intensity;
pub mod io;
pub mod movement;
pub mod optimize;
pub mod registration;
pub mod special;
pub mod stack;
pub mod synth;
pub mod variance_tests;

pub use error::{Error, Result};
pub use intensity::{EqualizationReport, PixelStats};
pub use movement::{MovementKind, MovementSeries};
pub use registration::{AlignmentConfig, AlignmentResult, RigidTransform};
pub use stack::{BioSignal, ChannelView, Frame, ImageStack, StimSchedule};
pub use synth::{SynthConfig, SynthTruth};
pub use variance_tests::{Center, GroupedSamples, LeveneReport};
