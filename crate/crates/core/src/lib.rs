//! Signal processing and feature extraction for electricity-network
//! condition monitoring, plus the synthetic signal generators used to
//! produce ground truth.

pub mod error;
pub mod events;
pub mod signal;
pub mod simgen;
pub mod hif_features;
pub mod load_features;
pub mod pq;
pub mod wavelet;

pub use error::{Error, Result};
