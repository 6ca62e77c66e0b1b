//! Multi-user semantic image communication simulator: location-informed
//! patch masking, a small masked-autoencoder codec, linear channel codecs,
//! MIMO fading with L-MMSE detection and variance-based semantic sharing.

pub mod channel;
pub mod cli;
pub mod codec;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod mss;
pub mod numeric;
pub mod pipeline;
pub mod scene;
pub mod training;

pub use error::{Error, Result};
