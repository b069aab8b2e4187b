//! Optimisers, the learning-rate schedule, and the minibatch training loop.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{augment_train, Dataset};
use crate::error::{Error, Result};
use crate::network::{Gradients, Model};
use crate::numerics::{Rng, StreamDomain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adamw,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" | "sgd_momentum" => Ok(OptimizerKind::SgdMomentum),
            "adamw" => Ok(OptimizerKind::Adamw),
            _ => Err(Error::Config(format!("unknown optimizer {s:?} (expected sgd_momentum|adamw)"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::SgdMomentum => "sgd_momentum",
            OptimizerKind::Adamw => "adamw",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Cosine,
    Constant,
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cosine" => Ok(Schedule::Cosine),
            "constant" => Ok(Schedule::Constant),
            _ => Err(Error::Config(format!("unknown schedule {s:?} (expected cosine|constant)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr0: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub seed: u64,
    /// Flip + pad-and-crop on training batches.
    pub augment: bool,
}

impl TrainConfig {
    /// From-scratch recipe: SGD momentum 0.9, lr 0.1, wd 1e-3, batch 128, cosine.
    pub fn scratch(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            optimizer: OptimizerKind::SgdMomentum,
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 1e-3,
            epochs,
            batch_size: 128,
            schedule: Schedule::Cosine,
            seed,
            augment: false,
        }
    }

    /// Fine-tune recipe: AdamW, lr 1e-5, wd 1e-3, 5 epochs, batch 128, cosine.
    pub fn finetune(seed: u64) -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adamw,
            lr0: 1e-5,
            momentum: 0.9,
            weight_decay: 1e-3,
            epochs: 5,
            batch_size: 128,
            schedule: Schedule::Cosine,
            seed,
            augment: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f32 {
        match self.schedule {
            Schedule::Cosine => cosine_lr(self.lr0, epoch, self.epochs),
            Schedule::Constant => self.lr0,
        }
    }
}

/// `lr0 * (1 + cos(pi * epoch / total)) / 2`
pub fn cosine_lr(lr0: f32, epoch: usize, total_epochs: usize) -> f32 {
    if total_epochs == 0 {
        return lr0;
    }
    let t = epoch.min(total_epochs) as f64 / total_epochs as f64;
    (lr0 as f64 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())) as f32
}

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::dim(format!("{what}: {a} vs {b} elements")));
    }
    Ok(())
}

/// `v <- momentum * v + (g + wd * p); p <- p - lr * v`
pub fn sgd_momentum_step(
    params: &mut [f32],
    grads: &[f32],
    velocity: &mut [f32],
    lr: f32,
    momentum: f32,
    weight_decay: f32,
) -> Result<()> {
    check_len("sgd grads", params.len(), grads.len())?;
    check_len("sgd velocity", params.len(), velocity.len())?;
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + (g + weight_decay * *p);
        *p -= lr * *v;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl AdamParams {
    pub fn new(lr: f32, weight_decay: f32) -> Self {
        AdamParams {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// One AdamW step at 1-based step count `t`, decoupled weight decay first.
pub fn adamw_step(
    params: &mut [f32],
    grads: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    t: u64,
    hp: &AdamParams,
) -> Result<()> {
    if t == 0 {
        return Err(Error::input("adamw step count starts at 1"));
    }
    check_len("adamw grads", params.len(), grads.len())?;
    check_len("adamw first moment", params.len(), m.len())?;
    check_len("adamw second moment", params.len(), v.len())?;
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *p -= hp.lr * hp.weight_decay * *p;
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}

/// Optimiser state for every parameter tensor of a model (weights and biases,
/// in layer order).
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    momentum: f32,
    weight_decay: f32,
    step: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, model: &Model) -> Self {
        let sizes: Vec<usize> = model
            .params()
            .iter()
            .flatten()
            .flat_map(|p| [p.weight.len(), p.bias.len()])
            .collect();
        let zeros = || sizes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        Optimizer {
            kind: cfg.optimizer,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            step: 0,
            first: zeros(),
            second: match cfg.optimizer {
                OptimizerKind::Adamw => zeros(),
                OptimizerKind::SgdMomentum => Vec::new(),
            },
        }
    }

    /// Applies one update; weight decay acts on the raw parameters.
    pub fn step(&mut self, model: &mut Model, grads: &Gradients, lr: f32) -> Result<()> {
        self.step += 1;
        let grads: Vec<&[f32]> = grads
            .iter()
            .flatten()
            .flat_map(|g| [g.weight.data(), g.bias.data()])
            .collect();
        let params: Vec<&mut [f32]> = model
            .params_mut()
            .flat_map(|p| [p.weight.data_mut(), p.bias.data_mut()])
            .collect();
        check_len("parameter tensors", params.len(), grads.len())?;
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            match self.kind {
                OptimizerKind::SgdMomentum => {
                    sgd_momentum_step(p, g, &mut self.first[i], lr, self.momentum, self.weight_decay)?
                }
                OptimizerKind::Adamw => adamw_step(
                    p,
                    g,
                    &mut self.first[i],
                    &mut self.second[i],
                    self.step,
                    &AdamParams::new(lr, self.weight_decay),
                )?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f32,
    pub mean_loss: f32,
    /// Measured on the (augmented) batches before each update.
    pub train_top1: f32,
}

/// Minibatch training. Batches are a fresh seeded permutation per epoch; the
/// learning rate changes once per epoch.
pub fn train(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if data.sample_shape()[..] != model.input_shape()[..] {
        return Err(Error::dim(format!(
            "dataset samples {:?} do not fit model input {:?}",
            data.sample_shape(),
            model.input_shape()
        )));
    }
    let mut opt = Optimizer::new(cfg, model);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut shuffle = Rng::stream(cfg.seed, StreamDomain::Shuffle, epoch as u64);
        let mut aug = Rng::stream(cfg.seed, StreamDomain::Augment, epoch as u64);
        shuffle.shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = data.batch(chunk)?;
            let x = augment_train(&x, &mut aug, cfg.augment)?;
            let (loss, grads, pred) = model.backward_with_predictions(&x, &y)?;
            if !loss.is_finite() {
                return Err(Error::input(format!("training diverged at epoch {epoch} (loss {loss})")));
            }
            loss_sum += loss as f64 * chunk.len() as f64;
            correct += pred.iter().zip(&y).filter(|(p, l)| p == l).count();
            opt.step(model, &grads, lr)?;
        }
        let stats = EpochStats {
            epoch,
            lr,
            mean_loss: (loss_sum / data.len() as f64) as f32,
            train_top1: 100.0 * correct as f32 / data.len() as f32,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_blobs, Split, SynthSpec};
    use crate::network::ArchSpec;
    use crate::saf::SafKind;

    #[test]
    fn plain_sgd_step() {
        let mut p = [1.0f32, -2.0];
        let mut v = [0.0; 2];
        sgd_momentum_step(&mut p, &[0.5, 0.25], &mut v, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p, [1.0 - 0.1 * 0.5, -2.0 - 0.1 * 0.25]);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = [0.3f32, 4.0];
        let mut v = [0.0; 2];
        sgd_momentum_step(&mut p, &[0.0, 0.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p, [0.3, 4.0]);
    }

    #[test]
    fn momentum_two_steps() {
        let (mut p, mut v) = ([1.0f32], [0.0f32]);
        for _ in 0..2 {
            sgd_momentum_step(&mut p, &[1.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        }
        assert!((p[0] - 0.71).abs() < 1e-6, "{}", p[0]);
    }

    #[test]
    fn step_shape_mismatch() {
        let mut v = [0.0; 1];
        assert!(sgd_momentum_step(&mut [1.0, 2.0], &[1.0], &mut v, 0.1, 0.0, 0.0).is_err());
        let (mut m, mut s) = ([0.0; 2], [0.0; 1]);
        assert!(adamw_step(&mut [1.0, 2.0], &[0.0, 0.0], &mut m, &mut s, 1, &AdamParams::new(0.1, 0.0)).is_err());
    }

    #[test]
    fn adamw_zero_gradient_no_decay() {
        let (mut p, mut m, mut v) = ([0.7f32], [0.0f32], [0.0f32]);
        adamw_step(&mut p, &[0.0], &mut m, &mut v, 1, &AdamParams::new(1e-3, 0.0)).unwrap();
        assert_eq!(p, [0.7]);
        assert!(adamw_step(&mut p, &[0.0], &mut m, &mut v, 0, &AdamParams::new(1e-3, 0.0)).is_err());
    }

    #[test]
    fn adamw_single_step_by_hand() {
        let (mut p, mut m, mut v) = ([1.0f32], [0.0f32], [0.0f32]);
        adamw_step(&mut p, &[1.0], &mut m, &mut v, 1, &AdamParams::new(1e-3, 0.0)).unwrap();
        // m_hat = 1, v_hat = 1: delta = lr / (1 + eps)
        let expected = 1.0f64 - 1e-3 / (1.0 + 1e-8);
        assert!((p[0] as f64 - expected).abs() < 1e-7, "{}", p[0]);
    }

    #[test]
    fn adamw_pure_decoupled_decay() {
        let (mut p, mut m, mut v) = ([2.0f32], [0.0f32], [0.0f32]);
        adamw_step(&mut p, &[0.0], &mut m, &mut v, 1, &AdamParams::new(0.01, 0.1)).unwrap();
        assert_eq!(p[0], 2.0 * (1.0 - 0.01 * 0.1));
    }

    #[test]
    fn adam_three_step_trace() {
        // hand-computed bias-corrected Adam, f64
        let grads = [0.5f64, -1.0, 2.0];
        let (b1, b2, lr, eps) = (0.9f64, 0.999f64, 0.01f64, 1e-8f64);
        let (mut pe, mut me, mut ve) = (0.3f64, 0.0f64, 0.0f64);
        let (mut p, mut m, mut v) = ([0.3f32], [0.0f32], [0.0f32]);
        for (t, &g) in grads.iter().enumerate() {
            let t1 = t as i32 + 1;
            me = b1 * me + (1.0 - b1) * g;
            ve = b2 * ve + (1.0 - b2) * g * g;
            pe -= lr * (me / (1.0 - b1.powi(t1))) / ((ve / (1.0 - b2.powi(t1))).sqrt() + eps);
            adamw_step(&mut p, &[g as f32], &mut m, &mut v, t1 as u64, &AdamParams::new(lr as f32, 0.0)).unwrap();
        }
        assert!((p[0] as f64 - pe).abs() < 1e-6, "{} vs {pe}", p[0]);
    }

    #[test]
    fn cosine_schedule() {
        assert_eq!(cosine_lr(0.1, 0, 200), 0.1);
        assert!(cosine_lr(0.1, 200, 200).abs() < 1e-9);
        assert!((cosine_lr(0.1, 100, 200) - 0.05).abs() < 1e-8);
        let lrs: Vec<f32> = (0..=37).map(|e| cosine_lr(0.3, e, 37)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::scratch(3, 0);
        assert!(cfg.validate().is_ok());
        cfg.momentum = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::finetune(0);
        cfg.lr0 = 0.0;
        assert!(cfg.validate().is_err());
        assert_eq!(TrainConfig::finetune(0).epochs, 5);
    }

    #[test]
    fn blobs_train_to_separation_for_every_saf() {
        let spec = SynthSpec { classes: 2, n_per_class: 200, dim: 10, separation: 6.0, seed: 31 };
        let data = synth_blobs(&spec, Split::Train).unwrap();
        for kind in SafKind::PAPER_SET {
            let mut model = Model::init(ArchSpec::mlp(&[1, 1, 10], &[16], 2, kind), 1).unwrap();
            let mut cfg = TrainConfig::scratch(50, 2);
            cfg.batch_size = 32;
            let hist = train(&mut model, &data, &cfg, |_| {}).unwrap();
            let correct = model
                .predict(&data.images)
                .unwrap()
                .iter()
                .zip(&data.labels)
                .filter(|(p, l)| p == l)
                .count();
            let acc = 100.0 * correct as f32 / data.len() as f32;
            assert!(acc >= 99.0, "{kind}: {acc}% (history {:?})", hist.last());
        }
    }
}
