//! Privacy-preserving activity recognition over inertial sensor streams.
//!
//! Raw sensor windows are mapped by an anonymizing autoencoder into a short
//! latent stream, which is then compressed with adaptive differential PCM
//! before it leaves the device. The crate also carries a Laplace-noise
//! baseline and the evaluation harness that scores activity recognition
//! (utility) against user re-identification (privacy risk).
//!
//! Module map:
//!
//! - [`dataio`]: CSV loading, synthetic recordings, windowing, splits.
//! - [`features`]: per-channel statistical and spectral features.
//! - [`dpnoise`]: Laplace mechanism.
//! - [`codec`]: DPCM / ADPCM and the binary frame format.
//! - [`neural`]: small dense-network engine with reverse-mode gradients.
//! - [`anonymizer`]: the anonymizing autoencoder.
//! - [`estimators`]: logistic regression and MLP classifiers, macro F1.
//! - [`harness`]: cross-validation, pipeline variants, criteria, reports.
//! - [`config`]: the run configuration file shared by the CLI.

pub mod anonymizer;
pub mod codec;
pub mod config;
pub mod dataio;
pub mod dpnoise;
pub mod error;
pub mod estimators;
pub mod features;
pub mod harness;
pub mod neural;
pub mod seed;

pub use error::{Error, Result};
