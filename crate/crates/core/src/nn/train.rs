use serde::{Deserialize, Serialize};

use super::layer::Mode;
use super::network::{softmax_cross_entropy, Gradients, Network};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant,
    /// Cosine annealing from the base rate down to `min_lr` over all epochs.
    Cosine { min_lr: f32 },
    /// Multiply the rate by `gamma` every `step` epochs.
    Step { step: usize, gamma: f32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    /// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
    Sgd { momentum: f32 },
    /// Adam with decoupled weight decay.
    AdamW { beta1: f32, beta2: f32, eps: f32 },
}

impl Optimizer {
    pub fn adamw() -> Self {
        Optimizer::AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub scheduler: Schedule,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            weight_decay: 1e-4,
            batch_size: 64,
            epochs: 30,
            seed: 0,
            scheduler: Schedule::Cosine { min_lr: 1e-6 },
            optimizer: Optimizer::Sgd { momentum: 0.9 },
        }
    }
}

impl TrainConfig {
    /// AdamW at 1e-3 with a step decay of 0.7 every 20 epochs, batch 24, 50 epochs.
    pub fn point_cloud_defaults() -> Self {
        TrainConfig {
            lr: 0.001,
            weight_decay: 1e-4,
            batch_size: 24,
            epochs: 50,
            seed: 0,
            scheduler: Schedule::Step { step: 20, gamma: 0.7 },
            optimizer: Optimizer::adamw(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epoch count must be >= 1".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be >= 0".into()));
        }
        match self.optimizer {
            Optimizer::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => {
                return Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")));
            }
            Optimizer::AdamW { beta1, beta2, eps }
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) =>
            {
                return Err(Error::Config("AdamW needs betas in [0, 1) and eps > 0".into()));
            }
            _ => {}
        }
        if let Schedule::Step { step: 0, .. } = self.scheduler {
            return Err(Error::Config("step schedule needs step >= 1".into()));
        }
        Ok(())
    }

    /// Learning rate for a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f32 {
        match self.scheduler {
            Schedule::Constant => self.lr,
            Schedule::Cosine { min_lr } => {
                let t = epoch as f64 / self.epochs as f64;
                let lr = min_lr as f64
                    + 0.5 * (self.lr - min_lr) as f64 * (1.0 + (std::f64::consts::PI * t).cos());
                lr as f32
            }
            Schedule::Step { step, gamma } => self.lr * gamma.powi((epoch / step) as i32),
        }
    }
}

/// A network together with its optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub net: Network,
    first: Gradients,
    second: Gradients,
    steps: u64,
}

impl Trainer {
    pub fn new(net: Network) -> Self {
        let first = Gradients::zeros_like(&net);
        let second = first.clone();
        Trainer { net, first, second, steps: 0 }
    }

    /// One optimizer step on a batch: training-mode forward, softmax
    /// cross-entropy, backward, running-statistics update and parameter update.
    ///
    /// A non-finite loss aborts the step and leaves the network untouched.
    pub fn step(
        &mut self,
        batch: &Tensor,
        labels: &[usize],
        cfg: &TrainConfig,
        lr: f32,
    ) -> Result<f64> {
        let trace = self.net.forward(batch, Mode::Train)?;
        let (loss, grad_logits) = softmax_cross_entropy(&trace.logits, labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss {loss}")));
        }
        let grads = self.net.backward_params(&trace, &grad_logits);
        self.net.update_running_stats(&trace);
        self.apply(&grads, cfg, lr);
        Ok(loss)
    }

    fn apply(&mut self, grads: &Gradients, cfg: &TrainConfig, lr: f32) {
        self.steps += 1;
        let wd = cfg.weight_decay;
        let opt = cfg.optimizer;
        let t = self.steps as i32;
        for (((layer, g), m1), m2) in self
            .net
            .layers_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.first.layers)
            .zip(&mut self.second.layers)
        {
            for (((p, gp), a), b) in layer.params_mut().into_iter().zip(g).zip(m1).zip(m2) {
                match opt {
                    Optimizer::Sgd { momentum } => {
                        for ((w, &d), v) in p.iter_mut().zip(gp).zip(a.iter_mut()) {
                            *v = momentum * *v + d + wd * *w;
                            *w -= lr * *v;
                        }
                    }
                    Optimizer::AdamW { beta1, beta2, eps } => {
                        let c1 = 1.0 - beta1.powi(t);
                        let c2 = 1.0 - beta2.powi(t);
                        for (((w, &d), m), v) in p.iter_mut().zip(gp).zip(a.iter_mut()).zip(b.iter_mut()) {
                            *m = beta1 * *m + (1.0 - beta1) * d;
                            *v = beta2 * *v + (1.0 - beta2) * d * d;
                            *w -= lr * wd * *w;
                            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::build_pointnet_lite;

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let net = build_pointnet_lite(64, 3, 1).unwrap();
        let mut t = Trainer::new(net.clone());
        let x = Tensor::from_fn(&[2, 64, 3], |i| ((i % 7) as f32 - 3.0) / 3.0);
        let cfg = TrainConfig::default();
        t.step(&x, &[0, 2], &cfg, 0.0).unwrap();
        t.step(&x, &[1, 2], &cfg, 0.0).unwrap();
        assert_eq!(t.net, net);
    }

    #[test]
    fn non_finite_loss_aborts_step() {
        let mut net = build_pointnet_lite(64, 3, 1).unwrap();
        let last = net.layers().len() - 1;
        if let crate::nn::Layer::Linear(l) = &mut net.layers_mut()[last] {
            l.bias[0] = f32::NAN;
        }
        let before = net.clone();
        let mut t = Trainer::new(net);
        let x = Tensor::full(&[1, 64, 3], 1.0);
        let err = t.step(&x, &[0], &TrainConfig::default(), 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(t.net.layers()[0], before.layers()[0]);
        assert_eq!(t.net.layers()[last - 2], before.layers()[last - 2]);
    }

    #[test]
    fn step_schedule_and_adamw_first_step() {
        let cfg = TrainConfig::point_cloud_defaults();
        assert_eq!(cfg.lr_at(19), 0.001);
        assert!((cfg.lr_at(20) - 0.0007).abs() < 1e-9);
        assert!((cfg.lr_at(45) - 0.001 * 0.49).abs() < 1e-9);

        // The first AdamW step moves every parameter with a nonzero gradient
        // by lr·(1 + tiny) against the gradient sign, plus the decay term.
        let net = build_pointnet_lite(64, 3, 2).unwrap();
        let mut t = Trainer::new(net.clone());
        let x = Tensor::from_fn(&[2, 64, 3], |i| ((i % 5) as f32 - 2.0) / 2.0);
        let cfg = TrainConfig { weight_decay: 0.0, ..cfg };
        t.step(&x, &[0, 1], &cfg, 0.01).unwrap();
        let before = net.layers().last().unwrap().params()[1].to_vec();
        let after = t.net.layers().last().unwrap().params()[1].to_vec();
        for (b, a) in before.iter().zip(&after) {
            let d = (a - b).abs();
            assert!(d == 0.0 || (d - 0.01).abs() < 1e-4, "{d}");
        }
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.lr = 0.0;
        assert!(c.validate().is_err());
        c = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(c.validate().is_err());
        c = TrainConfig { epochs: 0, ..Default::default() };
        assert!(c.validate().is_err());
        c = TrainConfig { optimizer: Optimizer::Sgd { momentum: 1.0 }, ..Default::default() };
        assert!(c.validate().is_err());
        c = TrainConfig { scheduler: Schedule::Step { step: 0, gamma: 0.5 }, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let c = TrainConfig { lr: 0.1, epochs: 10, ..Default::default() };
        assert!((c.lr_at(0) - 0.1).abs() < 1e-7);
        assert!(c.lr_at(5) < 0.06 && c.lr_at(5) > 0.04);
        assert!(c.lr_at(9) < c.lr_at(8));
    }
}
