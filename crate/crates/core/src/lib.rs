//! Fully connected cross-correlated linear forecasters.
//!
//! Every input point of every series is connected to every output point of
//! every series. The crate provides the three NFCL variants (vanilla,
//! per-point complex, decomposed), the NLinear/DLinear baselines, a data
//! pipeline, an AdamW training loop with early stopping, evaluation metrics
//! and exact contribution maps.
//!
//! ```
//! use nfcl_core::prelude::*;
//! use ndarray::Array3;
//!
//! let dims = ModelDims::new(2, 8, 3).unwrap();
//! let model = NfclModel::init(NfclConfig::new(Variant::Complex, dims).with_hidden(&[4]), 7).unwrap();
//! let x = Array3::from_shape_fn((5, 2, 8), |(b, k, j)| (b + k * j) as f64);
//! let y = model.forward(x.view()).unwrap();
//! assert_eq!(y.dim(), (5, 2, 3));
//! ```

pub mod baselines;
pub mod checkpoint;
pub mod datapipe;
pub mod error;
pub mod forecaster;
pub mod interpret;
pub mod metrics;
pub mod nfcl;
pub mod optim;
pub mod rng;
pub mod synthetic;
pub mod verify;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::baselines::{DLinearModel, NLinearModel};
    pub use crate::checkpoint::{load_checkpoint, save_checkpoint, AnyModel, ModelKind, ModelSpec};
    pub use crate::datapipe::{
        fit_scale, load_csv, make_windows, prepare, split_chronological, ScaleState, SplitSpec,
        TimeSeriesDataset, WindowBatch,
    };
    pub use crate::error::{Error, Result};
    pub use crate::forecaster::{Forecaster, GradientSet, ModelDims};
    pub use crate::interpret::{contribution, full_map, ContributionMap, FullWeightMap};
    pub use crate::metrics::MetricsReport;
    pub use crate::nfcl::{DecompSpec, NfclConfig, NfclModel, Padding, Variant};
    pub use crate::optim::{train, TrainConfig, TrainReport};
}

// Compile the guide's code listings as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/normalization.md")]
    mod normalization {}
    #[doc = include_str!("../../../book/src/vanilla.md")]
    mod vanilla {}
    #[doc = include_str!("../../../book/src/complex.md")]
    mod complex {}
    #[doc = include_str!("../../../book/src/decomposition.md")]
    mod decomposition {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/interpretation.md")]
    mod interpretation {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
