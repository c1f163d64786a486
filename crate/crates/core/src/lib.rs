//! Signal-dependent noise estimation and re-synthesis for lossy image
//! coding. The encoder fits a three-parameter noise model to homogeneous
//! patches; the decoder regenerates high-pass noise at the predicted level.

pub mod blur;
pub mod cli;
pub mod colorspace;
pub mod estimate;
pub mod io;
pub mod model_fit;
pub mod noise_metric;
pub mod patch_selection;
pub mod plane;
pub mod regen;
pub mod rng;
pub mod sidecar;

pub use colorspace::{ColorSpace, OpsinConstants, PlanarImage};
pub use model_fit::NoiseModel;
pub use plane::Plane;
