//! Drift-corrected coherent background subtraction for wideband
//! frequency-sweep measurements.
//!
//! Slow instrument drift between a foreground and a background sweep is
//! modelled as `(a + b f) e^{-jεf}` and fitted at the direct-path peak of the
//! background impulse response with Newton-CG and analytic derivatives. The
//! corrected foreground is then subtracted coherently.

pub mod cli;
pub mod error;
pub mod io;
pub mod model;
pub mod optimizer;
pub mod pipeline;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
pub use model::DriftParams;
pub use optimizer::{fit, FitConfig, FitResult};
pub use pipeline::{
    batch_process, subtract_conventional, subtract_corrected, CorrectionOptions, MeasurementPair,
    PlausibilityBounds, SubtractionMode, SubtractionReport,
};
pub use spectral::{FrequencyGrid, ImpulseResponse, Sweep, SweepMeta};
