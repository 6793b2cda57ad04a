//! Self-supervised representation learning with automatic shortcut removal.
//!
//! The central object is a *lens*: a lightweight image-to-image network
//! trained adversarially against a self-supervised pretext task. The lens
//! learns to erase the low-level cues ("shortcuts") that make pretext tasks
//! trivially solvable, forcing the feature extractor trained behind it to
//! rely on higher-level structure. The crate provides:
//!
//! - data loading, preprocessing, and synthetic shortcut injection
//!   ([`dataio`]),
//! - pretext task batch construction and losses ([`pretext`]),
//! - network definitions and the checkpoint container ([`models`]),
//! - the adversarial training loop ([`training`]),
//! - representation evaluation: linear probes, shape bias ([`eval`]),
//! - lens-behavior analysis: difference maps, reconstruction statistics
//!   ([`analysis`]),
//! - the command-line front end ([`cli`]),
//!
//! all built on a small deterministic autodiff engine ([`nn`]).

pub mod analysis;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod models;
pub mod nn;
pub mod pretext;
pub mod training;
pub mod util;

pub use error::{Error, Result};
