use rand::Rng;
use rand_distr::StandardNormal;

use super::LabeledDataset;
use crate::channel::{Axis, Domain, StreamKey};
use crate::error::{ensure_at_least, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum SynthKind {
    /// Per-sample centres `xi ~ N(0, spread^2 I)` for quadratic losses
    /// `0.5 (w - xi)^T A (w - xi)`. Labels are all zero.
    QuadraticCenters { dim: usize, spread: f64 },
    /// Isotropic unit-variance Gaussian classes. Class means are random unit
    /// directions scaled by `separation`; labels cycle `i mod classes`.
    GaussianBlobs {
        classes: usize,
        features: usize,
        separation: f64,
    },
}

pub fn synth_dataset(kind: &SynthKind, n: usize, seed: u64) -> Result<LabeledDataset> {
    let key = StreamKey::new(seed).domain(Domain::Synth);
    match *kind {
        SynthKind::QuadraticCenters { dim, spread } => {
            if dim == 0 {
                return Err(Error::invalid("dimension must be positive"));
            }
            ensure_at_least("spread", spread, 0.0)?;
            let mut rng = key.rng();
            let features = (0..n * dim)
                .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            LabeledDataset::new(features, dim, vec![0; n], 1)
        }
        SynthKind::GaussianBlobs {
            classes,
            features: p,
            separation,
        } => {
            if classes == 0 || p == 0 {
                return Err(Error::invalid("classes and features must be positive"));
            }
            ensure_at_least("separation", separation, 0.0)?;
            let mut mean_rng = key.child(Axis::Client, 0).rng();
            let means: Vec<Vec<f64>> = (0..classes)
                .map(|_| {
                    let v: Vec<f64> = (0..p).map(|_| mean_rng.sample(StandardNormal)).collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                    v.into_iter().map(|x| separation * x / norm).collect()
                })
                .collect();
            let mut rng = key.child(Axis::Client, 1).rng();
            let mut features = Vec::with_capacity(n * p);
            let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
            for &l in &labels {
                features.extend(means[l].iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)));
            }
            LabeledDataset::new(features, p, labels, classes)
        }
    }
}
