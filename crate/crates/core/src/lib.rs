pub mod ablation;
pub mod analysis;
pub mod autodiff;
pub mod error;
pub mod grid;
pub mod io;
pub mod net;
pub mod projector;
pub mod recon;
pub mod simulator;
pub mod spectral;
pub mod study;

pub use error::{Error, Result};
pub use grid::ImageGrid;
