//! Plain SGD and AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::nn::{Gradient, MlpModel};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    #[serde(rename = "adamw")]
    AdamW {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default = "default_weight_decay")]
        weight_decay: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_weight_decay() -> f64 {
    0.01
}

impl OptimizerConfig {
    /// AdamW with the usual defaults: β = (0.9, 0.999), ε = 1e-8, weight decay 0.01.
    pub fn adamw(lr: f64) -> Self {
        OptimizerConfig::AdamW {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: default_weight_decay(),
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            OptimizerConfig::Sgd { lr } | OptimizerConfig::AdamW { lr, .. } => *lr,
        }
    }

    pub fn with_lr(&self, new_lr: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            OptimizerConfig::Sgd { lr } | OptimizerConfig::AdamW { lr, .. } => *lr = new_lr,
        }
        out
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adamw(1e-3)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    config: OptimizerConfig,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update `θ ← θ − η g` (SGD), or for AdamW
    /// `θ ← θ − ηλθ` followed by the bias-corrected adaptive step.
    pub fn step(&mut self, model: &mut MlpModel, gradient: &Gradient) -> Result<()> {
        let mut params = model.parameters_mut();
        if params.len() != gradient.0.len()
            || params.iter().zip(&gradient.0).any(|(p, g)| !p.same_shape(g))
        {
            return dim_err("gradient does not match model parameters");
        }
        self.step += 1;
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(&gradient.0) {
                    for (w, gv) in p.values_mut().iter_mut().zip(g.values()) {
                        *w -= lr * gv;
                    }
                }
            }
            OptimizerConfig::AdamW {
                lr,
                beta1,
                beta2,
                eps,
                weight_decay,
            } => {
                if self.first_moment.is_empty() {
                    self.first_moment = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
                    self.second_moment = self.first_moment.clone();
                }
                let t = self.step as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(&gradient.0)
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    let iter = p
                        .values_mut()
                        .iter_mut()
                        .zip(g.values())
                        .zip(m.values_mut())
                        .zip(v.values_mut());
                    for (((w, &gv), mv), vv) in iter {
                        *w -= lr * weight_decay * *w;
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        let mhat = *mv / bc1;
                        let vhat = *vv / bc2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpConfig;

    fn scalar_model(w: f64) -> MlpModel {
        MlpModel::from_weights(
            MlpConfig::new(vec![1, 1]),
            vec![Tensor::matrix(1, 1, vec![w]).unwrap()],
            vec![Tensor::vector(vec![0.0])],
        )
        .unwrap()
    }

    fn grad(w: f64, b: f64) -> Gradient {
        Gradient(vec![Tensor::matrix(1, 1, vec![w]).unwrap(), Tensor::vector(vec![b])])
    }

    #[test]
    fn sgd_step() {
        let mut m = scalar_model(1.0);
        let mut opt = Optimizer::new(OptimizerConfig::Sgd { lr: 0.1 });
        opt.step(&mut m, &grad(2.0, 0.0)).unwrap();
        assert!((m.parameters()[0].values()[0] - 0.8).abs() < 1e-15);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut m = scalar_model(0.37);
        let before = m.clone();
        let mut opt = Optimizer::new(OptimizerConfig::AdamW {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        });
        for _ in 0..3 {
            opt.step(&mut m, &grad(0.0, 0.0)).unwrap();
        }
        assert_eq!(m, before);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut m = scalar_model(1.0);
        let mut opt = Optimizer::new(OptimizerConfig::Sgd { lr: 0.1 });
        let bad = Gradient(vec![Tensor::vector(vec![1.0, 2.0])]);
        assert!(opt.step(&mut m, &bad).is_err());
    }
}
