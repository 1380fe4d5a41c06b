pub mod error;
pub mod gauss2d;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod masking;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod spectrum;
pub mod surrogate;
pub mod testimage;
pub mod watermark;

pub use error::{Error, Result};
pub use grid::{ImageGrid, LatentGrid, Planes};
