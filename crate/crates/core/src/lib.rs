//! Anchor-based dynamic Gaussian splatting on the CPU.

pub mod autodiff;
pub mod bench;
pub mod deform;
pub mod heads;
pub mod io;
pub mod loss;
pub mod raster;
pub mod scene;
pub mod synthetic;
pub mod trainer;
