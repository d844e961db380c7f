//! Fingerprint positioning with a learned estimate of its own error.
//!
//! Two forests are trained on RSS fingerprints: a positioning model that
//! predicts latitude/longitude, and an accuracy model that predicts the
//! haversine error the positioning model will make on a given message (the
//! dynamic accuracy estimate, DAE). On top of those the crate provides the
//! three analyses:
//!
//! * [`pipeline::repartition_sweep`]: how the training pool should be shared
//!   between the two models,
//! * [`pipeline::selection_curve`]: keeping only the estimates with the
//!   lowest DAE,
//! * [`spatial::cluster_report`]: per-area error, density and selection
//!   statistics after k-means clustering of the ground truth.
//!
//! [`experiment::run`] composes everything into one seeded, reproducible
//! run that writes plot-ready artifacts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod experiment;
pub mod geo;
pub mod learn;
pub mod pipeline;
pub mod seed;
pub mod spatial;
pub mod stats;
pub mod synth;

pub use data::{Dataset, DatasetSplit, Fingerprint, Schema};
pub use error::{Error, Result};
pub use experiment::{DataSource, Outcome, Prepared, RunConfig, Summary, SynthScenario};
pub use geo::{haversine, LatLon, PlanarPoint};
pub use learn::{ForestModel, ForestParams, Matrix};
pub use pipeline::{EstimateRecord, SelectionCurve, SweepRow};
pub use spatial::{ClusterAssignment, ClusterReport};
pub use synth::ScenarioConfig;
