//! Calibration of low-cost air-quality sensor networks with geographically
//! weighted regression.
//!
//! The crate covers the whole path from minute-level raw records to validated
//! calibration models:
//!
//! * [`ingest`] loads raw delimited records, drops flagged values, renames
//!   devices and converts reference concentrations to µg·m⁻³.
//! * [`preprocess`] aggregates minutes to quarter-hours and hours and builds
//!   the hourly [`Panel`].
//! * [`kernel`] holds the spatial and spatio-temporal weight functions.
//! * [`gwr`] fits local weighted least squares models (GWR and the
//!   per-sensor standardized variant SGWR) and corrects measurements.
//! * [`baseline`] fits the collocated and non-collocated linear competitors.
//! * [`eval`] splits the period, scores models, runs leave-one-station-out
//!   cross-validation and searches the kernel bandwidth.
//! * [`grid`] evaluates coefficient fields on a raster and exports layers.
//! * [`synth`] generates synthetic sensor networks with known truth.

pub mod baseline;
pub mod error;
pub mod eval;
pub mod fmt;
pub mod geo;
pub mod grid;
pub mod gwr;
pub mod ingest;
pub mod kernel;
mod linalg;
pub mod preprocess;
pub mod synth;

pub use baseline::{fit_collocated, fit_noncollocated, PairingPlan, Provenance};
pub use error::{Error, Result};
pub use eval::{DaySet, EvalReport, SplitSpec};
pub use geo::{distance, BoundingBox, Position, Projection};
pub use grid::{GridSpec, LayerFormat, Surface};
pub use gwr::{
    correct, destandardize, fit_gwr, fit_wls, standardize, Calibrator, CovariateSet, DesignSlice, LocalModel,
    ModelFamily, ModelKind, Standardizer, Target, WlsOptions, WlsSolution,
};
pub use ingest::{Channel, RawRecord, RenameMap};
pub use kernel::{KernelKind, KernelSpec};
pub use preprocess::{Panel, Role, SiteRecord, TimedSample, Typology};
pub use synth::{generate, SynthSpec, SynthTruth};
