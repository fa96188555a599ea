//! Certifiable reconstruction of a deformable 3D shape and its pose from 2D
//! landmarks under weak perspective, using a sums-of-squares relaxation.

pub mod error;
pub mod model;
pub mod poly;
pub mod preprocess;
pub mod relax;
pub mod sdp;
pub mod certify;
pub mod robust;
pub mod bench;

pub use error::{Error, Result};
