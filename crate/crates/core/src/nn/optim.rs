use super::{kernels, Gradients, Network};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimAlgo {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub algo: OptimAlgo,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { algo: OptimAlgo::Adam, lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self { algo: OptimAlgo::Sgd, lr, ..Self::default() }
    }

    pub fn adam(lr: f64) -> Self {
        Self { algo: OptimAlgo::Adam, lr, ..Self::default() }
    }
}

/// Optimizer bound to a single network. Adam moments are owned here, so two
/// networks never share state unless they share an `Optimizer`.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self { config, first: Vec::new(), second: Vec::new(), steps: 0 }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update in place. Non-finite gradients abort before any
    /// parameter is touched.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        if !grads.matches(net) {
            return Err(Error::shape("gradients matching network parameters", "mismatched gradient layout"));
        }
        if !grads.is_finite() {
            let bad = grads.iter().position(|g| !g.is_finite()).unwrap_or(0);
            return Err(Error::Numeric(format!(
                "non-finite gradient at flat parameter index {bad} (optimizer step {})",
                self.steps + 1
            )));
        }
        let lr = self.config.lr;
        match self.config.algo {
            OptimAlgo::Sgd => {
                for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
                    for (p, d) in layer.weights.values_mut().iter_mut().zip(g.weights.values()) {
                        *p -= lr * d;
                    }
                    for (p, d) in layer.biases.values_mut().iter_mut().zip(g.biases.values()) {
                        *p -= lr * d;
                    }
                }
            }
            OptimAlgo::Adam => {
                let n = net.num_params();
                if self.first.len() != n {
                    self.first = vec![0.0; n];
                    self.second = vec![0.0; n];
                }
                self.steps += 1;
                let OptimizerConfig { beta1, beta2, eps, .. } = self.config;
                let bc1 = 1.0 - beta1.powi(self.steps as i32);
                let bc2 = 1.0 - beta2.powi(self.steps as i32);
                let step = kernels::AdamStep { lr, beta1, beta2, eps, bc1, bc2 };
                let mut k = 0;
                for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
                    for (p, d) in [(layer.weights.values_mut(), g.weights.values()), (layer.biases.values_mut(), g.biases.values())] {
                        let n = p.len();
                        kernels::adam_update(&step, p, d, &mut self.first[k..k + n], &mut self.second[k..k + n]);
                        k += n;
                    }
                }
                return self.check_finite(net);
            }
        }
        self.steps += 1;
        self.check_finite(net)
    }

    fn check_finite(&self, net: &Network) -> Result<()> {
        if net.is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("parameters became non-finite after optimizer step {}", self.steps)))
        }
    }
}
