//! Unsupervised action grouping from a single video.
//!
//! One nonnegative sparse dictionary is learned per individual per short time
//! interval; cross-representation energies then decide who performs the same
//! action, who changed action, and how a long sequence clusters in space-time.
//!
//! Pipeline: frames and per-person masks are sliced into intervals
//! ([`ingest`]); absolute-temporal-gradient patches are extracted inside
//! dilated masks ([`features`]); per-person dictionaries are learned
//! ([`sparse_model`]); leave-one-out coding yields a person-by-person
//! similarity matrix and connected-component groups ([`grouping`]);
//! cross-interval representation errors flag action changes ([`temporal`]);
//! and (person, interval) entities of long videos are clustered jointly with
//! self-tuning spectral clustering ([`spatiotemporal`]). The [`synth`] module
//! plants union-of-subspace scenes and provides the exact coding oracle used
//! to certify the solver.

pub mod error;
pub mod features;
pub mod grouping;
pub mod ingest;
pub mod pipeline;
pub mod plot;
pub mod sparse_model;
pub mod spatiotemporal;
pub mod spectral;
pub mod synth;
pub mod temporal;
pub mod tensor;

pub use error::{Error, Result};
