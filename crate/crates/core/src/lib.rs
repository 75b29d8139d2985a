//! HSS-Net: a hierarchical spatio-temporal segmentation network for
//! left-ventricle segmentation in echocardiography clips, plus the
//! method-of-disks ejection fraction pipeline built on its masks.
//!
//! Low-resolution stages mix frames through selective state-space scans
//! over four spatio-temporal orderings; high-resolution stages stay
//! per-frame with separable convolutions.

pub mod tensor;

pub use tensor::{Tensor, TensorError};
pub mod nn;
pub mod scan;
pub mod ssm;
pub mod blocks;
pub mod model;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod ef;

pub use error::Error;
pub mod synth;
pub mod checkpoint;
pub mod train;
