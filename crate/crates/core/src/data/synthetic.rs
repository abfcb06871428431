use rand_distr::{Distribution, StandardNormal};

use crate::error::{arg_err, Result};
use crate::rng::{self, stream};
use crate::tensor::Tensor;

use super::LabeledDataset;

/// Isotropic Gaussian clusters, one per class.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub means: Vec<Vec<f64>>,
    pub spread: f64,
}

impl SyntheticTask {
    /// Class means drawn uniformly on the unit sphere in `dim` dimensions.
    pub fn new(classes: usize, dim: usize, spread: f64, seed: u64) -> Result<Self> {
        if classes < 2 {
            return arg_err("need at least two classes");
        }
        if dim == 0 {
            return arg_err("dimension must be positive");
        }
        let mut rng = rng::rng_for(seed, stream::MEANS);
        let means = (0..classes)
            .map(|_| loop {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    break v.into_iter().map(|x| x / norm).collect();
                }
            })
            .collect();
        Self::with_means(means, spread)
    }

    pub fn with_means(means: Vec<Vec<f64>>, spread: f64) -> Result<Self> {
        if !(spread > 0.0 && spread.is_finite()) {
            return arg_err(format!("cluster spread must be positive, got {spread}"));
        }
        if means.len() < 2 || means.iter().any(|m| m.len() != means[0].len() || m.is_empty()) {
            return arg_err("need at least two equal-length class means");
        }
        Ok(Self { means, spread })
    }

    pub fn classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// `per_class` points per class, class-major order, ids `0..n`.
    pub fn sample(&self, per_class: usize, seed: u64) -> Result<LabeledDataset> {
        if per_class == 0 {
            return arg_err("need at least one example per class");
        }
        let mut rng = rng::rng_for(seed, stream::SAMPLES);
        let d = self.dim();
        let mut values = Vec::with_capacity(self.classes() * per_class * d);
        let mut labels = Vec::with_capacity(self.classes() * per_class);
        for (c, mean) in self.means.iter().enumerate() {
            for _ in 0..per_class {
                for mu in mean {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    values.push(mu + self.spread * z);
                }
                labels.push(c);
            }
        }
        let x = Tensor::matrix(labels.len(), d, values)?;
        LabeledDataset::new(x, labels, self.classes())
    }

    /// Label of the nearest class mean.
    pub fn nearest_mean(&self, x: &[f64]) -> usize {
        let dist = |m: &Vec<f64>| m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let mut best = 0;
        for c in 1..self.classes() {
            if dist(&self.means[c]) < dist(&self.means[best]) {
                best = c;
            }
        }
        best
    }
}

/// `classes × per_class` points from Gaussian clusters of standard deviation
/// `spread` around seeded unit-sphere means.
pub fn gen_synthetic(classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Result<LabeledDataset> {
    SyntheticTask::new(classes, dim, spread, seed)?.sample(per_class, seed)
}
