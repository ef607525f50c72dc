//! Simulation of a membrane-mirror phase lock on a path-entangled photon pair.
//!
//! The crate is layered bottom-up:
//!
//! - [`membrane`]: finite-difference Poisson solver for the electrostatically
//!   driven membrane and its influence functions.
//! - [`mirror`]: constrained voltage synthesis for two parallel flat planes,
//!   plane placement search and the 8-bit displacement command.
//! - [`optics`]: analytic beam-splitter output state and coincidence rates.
//! - [`plant`]: thermal phase drift plus Poissonian coincidence counting.
//! - [`stabilizer`]: the threshold/probe/correct feedback loop.
//! - [`analysis`]: trace statistics, fringe fits and normalized spectra.
//! - [`config`]: declarative TOML scenario configs.
//! - [`scenario`]: experiment runners, artifacts and manifests.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod membrane;
pub mod mirror;
pub mod numfmt;
pub mod optics;
pub mod plant;
pub mod scenario;
pub mod stabilizer;
pub mod trace;

pub use error::{Error, Result};
