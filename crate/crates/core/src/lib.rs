//! Shape-sensitivity augmentation toolkit.
//!
//! Edge maps from one image are blended over a patch-shuffled copy of another
//! and labelled with the edge-map source's class. Around that augmentation the
//! crate provides a synthetic shape/texture dataset, a tiny convolutional
//! classifier trained from scratch, and the measurements used to tell shape
//! reliance from texture reliance (cue-conflict shape bias, shape factor,
//! mask readout, distortion robustness).

pub mod augment;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod sampling;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use imaging::Image;
