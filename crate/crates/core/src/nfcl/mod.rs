//! The NFCL model family.
//!
//! * [`Variant::Vanilla`]: a dense map from every normalized input point to every output point.
//! * [`Variant::Complex`]: each input point re-evaluated by its own scalar network first.
//! * [`Variant::Decomposed`]: moving-average components, one complex branch each, summed.

mod decomp;
mod linear;
mod mapping;
mod model;
mod norm;

pub use decomp::{decompose, decompose_series, DecompSpec, Padding};
pub use linear::{forward_v, OutputLayer};
pub use mapping::{MappingStack, PointwiseLayer, DEFAULT_LEAKY_SLOPE};
pub use model::{forward_c, forward_d, parameter_count, Branch, NfclConfig, NfclModel, Variant};
pub use norm::{instance_denormalize, instance_normalize, NormParams, NormStats, ALPHA_FLOOR, NORM_STD_FLOOR};

