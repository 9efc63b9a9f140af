//! Synthetic windows generated by a known linear teacher.
//!
//! The teacher is an NFCL-V model with random weights, so a trained NFCL-V can
//! represent the target map exactly and the only irreducible error is the
//! injected Gaussian noise.

use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::datapipe::WindowBatch;
use crate::error::Result;
use crate::forecaster::{Forecaster, ModelDims};
use crate::nfcl::{NfclConfig, NfclModel, Variant};
use crate::rng::{stream_rng, Stream};

/// `samples` independent AR(1) lookback windows with random level and scale.
pub fn random_windows(dims: ModelDims, samples: usize, rng: &mut impl Rng) -> Array3<f64> {
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let mut x = Array3::zeros((samples, dims.series, dims.lookback));
    for b in 0..samples {
        for k in 0..dims.series {
            let level = unit.sample(rng);
            let scale = rng.random_range(0.5..1.5);
            let mut state = unit.sample(rng);
            for j in 0..dims.lookback {
                state = 0.8 * state + 0.6 * unit.sample(rng);
                x[[b, k, j]] = level + scale * state;
            }
        }
    }
    x
}

/// Random linear teacher: weights `U(-1/sqrt(K·L), 1/sqrt(K·L))`, biases `U(-0.5, 0.5)`.
pub fn linear_teacher(dims: ModelDims, seed: u64) -> Result<NfclModel> {
    let mut teacher = NfclModel::init(NfclConfig::new(Variant::Vanilla, dims), seed)?;
    let mut rng = stream_rng(seed, Stream::Synthetic);
    let bound = 1.0 / (dims.inputs() as f64).sqrt();
    let head = &mut teacher.branches_mut()[0].head;
    head.weight.mapv_inplace(|_| rng.random_range(-bound..=bound));
    head.bias.mapv_inplace(|_| rng.random_range(-0.5..=0.5));
    Ok(teacher)
}

/// Windows `x` with targets `teacher(x) + N(0, noise_std²)`.
pub fn teacher_dataset(
    teacher: &NfclModel,
    samples: usize,
    noise_std: f64,
    seed: u64,
) -> Result<WindowBatch> {
    let mut rng = stream_rng(seed, Stream::Synthetic);
    // skip past the draws used for the teacher's own weights
    rng.set_word_pos(1 << 40);
    let x = random_windows(teacher.dims(), samples, &mut rng);
    let mut y = teacher.forward(x.view())?;
    if noise_std > 0.0 {
        let noise = Normal::new(0.0, noise_std).map_err(|e| crate::Error::InvalidConfig(e.to_string()))?;
        y.mapv_inplace(|v| v + noise.sample(&mut rng));
    }
    Ok(WindowBatch {
        x,
        y,
        indices: (0..samples).collect(),
    })
}
