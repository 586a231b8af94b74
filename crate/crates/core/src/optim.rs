//! Parameter update rules: SGD, heavy-ball momentum, RMSprop and Adam.
//!
//! The slice-level step functions are elementwise and allocation free;
//! [`OptimizerState`] owns the per-parameter buffers and the step counter.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum,
    RmsProp,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::SgdMomentum => "sgd_momentum",
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "sgd_momentum" | "momentum" => Ok(OptimizerKind::SgdMomentum),
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

/// Hyperparameters of one optimizer instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig<T> {
    pub kind: OptimizerKind,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    /// Heavy-ball coefficient for [`OptimizerKind::SgdMomentum`].
    pub momentum: T,
    /// Squared-gradient decay for [`OptimizerKind::RmsProp`].
    pub alpha: T,
}

impl<T: Scalar> OptimizerConfig<T> {
    pub fn new(kind: OptimizerKind, lr: T) -> Self {
        OptimizerConfig {
            kind,
            lr,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            momentum: T::of(0.9),
            alpha: T::of(0.99),
        }
    }

    pub fn sgd(lr: T) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: T) -> Self {
        Self::new(OptimizerKind::Adam, lr)
    }

    /// `lr` may be zero (a frozen control run) but never negative or NaN.
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr < T::zero() {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

/// `theta -= lr * g`.
pub fn sgd_step<T: Scalar>(params: &mut [T], grads: &[T], lr: T) {
    debug_assert_eq!(params.len(), grads.len());
    for (p, &g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}

/// Heavy-ball momentum: `v = m * v + g; theta -= lr * v`.
pub fn sgd_momentum_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    velocity: &mut [T],
    lr: T,
    momentum: T,
) {
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

/// `s = alpha * s + (1 - alpha) * g^2; theta -= lr * g / sqrt(s + eps)`.
pub fn rmsprop_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    sq_avg: &mut [T],
    lr: T,
    alpha: T,
    eps: T,
) {
    for ((p, &g), s) in params.iter_mut().zip(grads).zip(sq_avg.iter_mut()) {
        *s = alpha * *s + (T::one() - alpha) * g * g;
        *p -= lr * g / (*s + eps).sqrt();
    }
}

/// One Adam step, `step` being the 1-based index of this update.
///
/// The buffers hold the bias-corrected moments `V_C` and `S_C`. Writing the
/// exponential averages in their corrected form,
/// `V_C <- V_C + (1 - b1) / (1 - b1^step) * (g - V_C)`, is algebraically the
/// same recurrence as averaging raw moments and dividing by `1 - b1^step`,
/// but at `step == 1` the factor is exactly one, so `V_C = g` and
/// `S_C = g^2` hold bit for bit. The update is
/// `theta -= lr * V_C / sqrt(S_C + eps)` with `eps` inside the root.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    first: &mut [T],
    second: &mut [T],
    step: u64,
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
) {
    let step = i32::try_from(step).expect("step count fits in i32");
    let rho1 = (T::one() - beta1) / (T::one() - beta1.powi(step));
    let rho2 = (T::one() - beta2) / (T::one() - beta2.powi(step));
    for (((p, &g), v), s) in params
        .iter_mut()
        .zip(grads)
        .zip(first.iter_mut())
        .zip(second.iter_mut())
    {
        *v += rho1 * (g - *v);
        *s += rho2 * (g * g - *s);
        *p -= lr * *v / (*s + eps).sqrt();
    }
}

/// Per-parameter buffers plus the step counter of one optimizer.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    config: OptimizerConfig<T>,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: OptimizerConfig<T>) -> Result<Self> {
        config.validate()?;
        Ok(OptimizerState {
            config,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig<T> {
        &self.config
    }

    /// Number of completed updates.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Momentum velocity, or Adam's bias-corrected first moment `V_C`.
    pub fn first_moment(&self, param: usize) -> Option<&[T]> {
        self.first.get(param).map(Vec::as_slice)
    }

    /// RMSprop's running square, or Adam's bias-corrected second moment `S_C`.
    pub fn second_moment(&self, param: usize) -> Option<&[T]> {
        self.second.get(param).map(Vec::as_slice)
    }

    /// Adam's raw (uncorrected) moments `(V, S)` recovered from the corrected
    /// buffers.
    pub fn adam_raw_moments(&self, param: usize) -> Option<(Vec<T>, Vec<T>)> {
        if self.config.kind != OptimizerKind::Adam || self.step == 0 {
            return None;
        }
        let t = self.step as i32;
        let c1 = T::one() - self.config.beta1.powi(t);
        let c2 = T::one() - self.config.beta2.powi(t);
        let v = self.first.get(param)?.iter().map(|&x| x * c1).collect();
        let s = self.second.get(param)?.iter().map(|&x| x * c2).collect();
        Some((v, s))
    }

    /// Apply one update to every parameter using its stored gradient.
    pub fn update(&mut self, params: &mut [Tensor<T>]) -> Result<()> {
        for (i, p) in params.iter().enumerate() {
            let Some(g) = p.grad() else {
                return Err(Error::Usage(format!("parameter {i} has no gradient")));
            };
            if g.len() != p.numel() {
                return Err(Error::Dimension(format!(
                    "parameter {i} gradient length mismatch"
                )));
            }
        }
        let needs_first = matches!(
            self.config.kind,
            OptimizerKind::SgdMomentum | OptimizerKind::Adam
        );
        let needs_second = matches!(
            self.config.kind,
            OptimizerKind::RmsProp | OptimizerKind::Adam
        );
        if self.step == 0 {
            let zeros = |on: bool| -> Vec<Vec<T>> {
                if on {
                    params.iter().map(|p| vec![T::zero(); p.numel()]).collect()
                } else {
                    Vec::new()
                }
            };
            self.first = zeros(needs_first);
            self.second = zeros(needs_second);
        } else {
            let layout_ok = |buf: &Vec<Vec<T>>, on: bool| {
                !on || (buf.len() == params.len()
                    && buf
                        .iter()
                        .zip(params.iter())
                        .all(|(b, p)| b.len() == p.numel()))
            };
            if !layout_ok(&self.first, needs_first) || !layout_ok(&self.second, needs_second) {
                return Err(Error::Dimension(
                    "parameters changed shape between optimizer steps".into(),
                ));
            }
        }
        self.step += 1;
        let c = self.config;
        for (i, p) in params.iter_mut().enumerate() {
            let (values, grad) = p.values_and_grad_mut();
            let grad = grad.expect("checked above");
            match c.kind {
                OptimizerKind::Sgd => sgd_step(values, grad, c.lr),
                OptimizerKind::SgdMomentum => {
                    sgd_momentum_step(values, grad, &mut self.first[i], c.lr, c.momentum)
                }
                OptimizerKind::RmsProp => {
                    rmsprop_step(values, grad, &mut self.second[i], c.lr, c.alpha, c.eps)
                }
                OptimizerKind::Adam => adam_step(
                    values,
                    grad,
                    &mut self.first[i],
                    &mut self.second[i],
                    self.step,
                    c.lr,
                    c.beta1,
                    c.beta2,
                    c.eps,
                ),
            }
        }
        Ok(())
    }
}
