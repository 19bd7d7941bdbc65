//! Class-weighted risk, minibatch SGD with momentum and L2 decay, and the
//! data-dependent learning-rate rule.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::grad::{bce_with_logit, Tape, Tensor};
use crate::nets::{Mode, Model};
use crate::rng::{self, StreamRng};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassWeights {
    pub w_pos: f64,
    pub w_neg: f64,
}

impl ClassWeights {
    pub const UNIT: ClassWeights = ClassWeights {
        w_pos: 1.0,
        w_neg: 1.0,
    };

    pub fn new(w_pos: f64, w_neg: f64) -> Result<Self> {
        for w in [w_pos, w_neg] {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::contract(format!(
                    "class weights must be positive and finite, got ({w_pos}, {w_neg})"
                )));
            }
        }
        Ok(ClassWeights { w_pos, w_neg })
    }

    pub fn scaled(self, c: f64) -> Result<Self> {
        Self::new(self.w_pos * c, self.w_neg * c)
    }

    pub fn for_label(self, label: u8) -> f64 {
        if label == 1 {
            self.w_pos
        } else {
            self.w_neg
        }
    }

    /// Per-example weights for a label vector.
    pub fn expand(self, labels: &[u8]) -> Result<Vec<f64>> {
        check_labels(labels)?;
        Ok(labels.iter().map(|&l| self.for_label(l)).collect())
    }

    /// `"a:b"` with `a = w_pos`, `b = w_neg`.
    pub fn label(self) -> String {
        format!("{}:{}", self.w_pos, self.w_neg)
    }
}

fn check_labels(labels: &[u8]) -> Result<()> {
    match labels.iter().find(|&&l| l > 1) {
        Some(l) => Err(Error::contract(format!("label {l} outside {{0, 1}}"))),
        None => Ok(()),
    }
}

/// Inverse-proportion weights for a class ratio `r_pos:r_neg`, normalized so
/// the smaller weight is 1.
pub fn weights_from_ratio(r_pos: i64, r_neg: i64) -> Result<ClassWeights> {
    if r_pos <= 0 || r_neg <= 0 {
        return Err(Error::contract(format!(
            "ratio components must be positive, got {r_pos}:{r_neg}"
        )));
    }
    let top = r_pos.max(r_neg) as f64;
    ClassWeights::new(top / r_pos as f64, top / r_neg as f64)
}

/// Mean over the batch of `w_y · BCE(sigmoid(z), y)`.
pub fn weighted_bce(logits: &[f64], labels: &[u8], weights: ClassWeights) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::Dimension {
            op: "weighted_bce",
            lhs: vec![logits.len()],
            rhs: vec![labels.len()],
        });
    }
    if logits.is_empty() {
        return Err(Error::contract("weighted_bce on an empty batch"));
    }
    check_labels(labels)?;
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| weights.for_label(y) * bce_with_logit(z, f64::from(y)))
        .sum();
    Ok(total / logits.len() as f64)
}

/// Largest singular value of `x` viewed as `[rows, rest]`, by power
/// iteration on `XᵀX` applied as `Xᵀ(Xv)`.
pub fn sigma_max(x: &Tensor) -> Result<f64> {
    const MAX_ITERS: usize = 100_000;
    // Relative change of the Rayleigh quotient; well inside 1e-8 on sigma.
    const EIG_TOL: f64 = 1e-13;
    if x.numel() == 0 || x.rank() == 0 {
        return Err(Error::contract("sigma_max of an empty matrix"));
    }
    let rows = x.shape()[0];
    let cols = x.numel() / rows;
    let a = x.data();
    if a.iter().all(|&v| v == 0.0) {
        return Err(Error::contract("sigma_max of an all-zero matrix"));
    }
    let mut start = rng::stream(0, "power-iteration");
    let mut v: Vec<f64> = (0..cols).map(|_| start.random_range(0.5..1.5)).collect();
    normalize(&mut v);
    let mut xv = vec![0.0; rows];
    let mut w = vec![0.0; cols];
    let mut eig = 0.0;
    for _ in 0..MAX_ITERS {
        for (r, out) in xv.iter_mut().enumerate() {
            *out = dot(&a[r * cols..(r + 1) * cols], &v);
        }
        w.fill(0.0);
        for (r, &s) in xv.iter().enumerate() {
            w.iter_mut()
                .zip(&a[r * cols..(r + 1) * cols])
                .for_each(|(wi, &ai)| *wi += s * ai);
        }
        let next = dot(&v, &w);
        let norm = normalize(&mut w);
        if norm == 0.0 {
            return Err(Error::contract("power iteration collapsed to zero"));
        }
        std::mem::swap(&mut v, &mut w);
        let converged = (next - eig).abs() <= EIG_TOL * next.abs();
        eig = next;
        if converged {
            break;
        }
    }
    Ok(eig.sqrt())
}

/// `0.01 / sigma_max(x)`.
pub fn lr_from_data(x: &Tensor) -> Result<f64> {
    Ok(0.01 / sigma_max(x)?)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub l2_lambda: f64,
    pub dropout_rate: f64,
    pub step_budget: usize,
    /// Step counts (updates completed) at which to evaluate.
    pub checkpoint_schedule: Vec<usize>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::config("l2_lambda must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate must lie in [0, 1)"));
        }
        if self.checkpoint_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("checkpoint_schedule must be strictly increasing"));
        }
        Ok(())
    }
}

/// Momentum buffers, one per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub velocity: Vec<Vec<f64>>,
    pub steps: usize,
}

impl OptState {
    pub fn new(model: &Model) -> Self {
        OptState {
            velocity: model.params().iter().map(|p| vec![0.0; p.numel()]).collect(),
            steps: 0,
        }
    }
}

/// `v ← μv + (g + λθ)`, `θ ← θ − ηv`, reading `g` from each parameter's
/// gradient slot and clearing it afterwards.
pub fn sgd_step(model: &mut Model, state: &mut OptState, config: &TrainConfig) -> Result<()> {
    if state.velocity.len() != model.params().len() {
        return Err(Error::contract("optimizer state does not match the model"));
    }
    if let Some(i) = model.params().iter().position(|p| p.grad().is_none()) {
        return Err(Error::contract(format!("parameter {i} has no gradient")));
    }
    let (mu, lambda, eta) = (config.momentum, config.l2_lambda, config.learning_rate);
    for (p, v) in model.params_mut().iter_mut().zip(&mut state.velocity) {
        let g = p.grad().expect("checked above").to_vec();
        let theta = p.data_mut();
        for ((vi, gi), ti) in v.iter_mut().zip(&g).zip(theta.iter_mut()) {
            *vi = mu * *vi + (gi + lambda * *ti);
            *ti -= eta * *vi;
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite {
                op: "sgd_step",
                phase: "update",
            });
        }
        p.zero_grad();
    }
    state.steps += 1;
    Ok(())
}

/// Loss weighting for one training step.
#[derive(Clone, Copy, Debug)]
pub enum Weighting<'a> {
    /// Plain mean BCE.
    None,
    Class(ClassWeights),
    /// One weight per example in the batch.
    PerExample(&'a [f64]),
}

/// Forward, backward and one SGD update on a minibatch. Returns the batch
/// loss before the update.
pub fn train_step(
    model: &mut Model,
    state: &mut OptState,
    config: &TrainConfig,
    features: &Tensor,
    labels: &[u8],
    weighting: Weighting<'_>,
    mask_seed: u64,
) -> Result<f64> {
    check_labels(labels)?;
    let targets: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
    let mut tape = Tape::new();
    let input = tape.constant(features.clone());
    let rec = model.record(&mut tape, input, Mode::Train, mask_seed)?;
    let loss = match weighting {
        Weighting::None => tape.bce(rec.logits, &targets)?,
        Weighting::Class(w) => tape.weighted_bce(rec.logits, &targets, &w.expand(labels)?)?,
        Weighting::PerExample(w) => tape.weighted_bce(rec.logits, &targets, w)?,
    };
    tape.backward(loss)?;
    for (p, id) in model.params_mut().iter_mut().zip(&rec.params) {
        let g = tape
            .grad(*id)
            .ok_or_else(|| Error::contract("parameter received no gradient"))?;
        p.accumulate_grad(g)?;
    }
    let value = tape.value(loss).item()?;
    sgd_step(model, state, config)?;
    Ok(value)
}

/// Minibatch index stream: a fresh shuffle each pass over the data, the last
/// batch of a pass possibly short.
pub struct Batches {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    rng: StreamRng,
}

impl Batches {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if n == 0 || batch_size == 0 {
            return Err(Error::contract("batches need a non-empty dataset and batch size"));
        }
        let mut rng = rng::stream(seed, "batch-shuffle");
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Ok(Batches {
            order,
            cursor: 0,
            batch_size,
            rng,
        })
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_weights() {
        assert_eq!(weights_from_ratio(10, 1).unwrap(), ClassWeights::new(1.0, 10.0).unwrap());
        assert_eq!(weights_from_ratio(1, 1).unwrap(), ClassWeights::UNIT);
        assert_eq!(weights_from_ratio(1, 16).unwrap(), ClassWeights::new(16.0, 1.0).unwrap());
        assert!(weights_from_ratio(0, 1).is_err());
        assert!(weights_from_ratio(3, -1).is_err());
    }

    #[test]
    fn class_weights_reject_nonpositive() {
        assert!(ClassWeights::new(0.0, 1.0).is_err());
        assert!(ClassWeights::new(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn diagonal_lr() {
        let x = Tensor::new(vec![2, 2], vec![3.0, 0.0, 0.0, 4.0]).unwrap();
        assert!((lr_from_data(&x).unwrap() - 0.0025).abs() < 1e-15);
        assert!(lr_from_data(&Tensor::zeros(vec![3, 2])).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig {
            learning_rate: 0.1,
            batch_size: 8,
            momentum: 0.0,
            l2_lambda: 0.0,
            dropout_rate: 0.0,
            step_budget: 10,
            checkpoint_schedule: vec![1, 10],
            seed: 0,
        };
        assert!(c.validate().is_ok());
        c.checkpoint_schedule = vec![10, 10];
        assert!(c.validate().is_err());
        c.checkpoint_schedule.clear();
        c.momentum = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn batches_cover_each_pass() {
        let mut b = Batches::new(10, 4, 1).unwrap();
        let mut seen: Vec<usize> = (0..3).flat_map(|_| b.next_batch()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(b.next_batch().len(), 4);
    }
}
