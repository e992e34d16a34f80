pub mod audio;
pub mod error;
pub mod eval;
pub mod healpix;
pub mod higrid;
pub mod nnl;
pub mod pipeline;
pub mod scene;
pub mod srpd;
pub mod sph;
pub mod sphere;

pub use error::{Error, Result};
