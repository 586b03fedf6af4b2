//! Multichannel speech enhancement frontend: mask-weighted WPE
//! dereverberation followed by MVDR / wMPDR beamforming, built on a
//! numerically stabilized complex linear-algebra kernel.
//!
//! The processing chain for one speaker is
//! masks → flooring → power estimate → WPE → covariances → filter → apply,
//! see [`pipeline::enhance_speaker`].

pub mod beamform;
pub mod config;
pub mod cxla;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod cli;
pub mod pipeline;
pub mod scene;
pub mod stft;
pub mod wav;
pub mod wpe;

pub use error::{Error, Result};
