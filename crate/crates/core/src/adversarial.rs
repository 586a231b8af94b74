//! Adversarial directions from input gradients, and folded angles between
//! direction vectors.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::{Mode, Network};
use crate::scalar::Scalar;
use crate::tensor::{Reduction, Tape};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Method {
    /// ℓ2-normalized input gradient.
    #[default]
    Grad,
    /// Elementwise sign of the input gradient.
    Sign,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Grad => "grad",
            Method::Sign => "sign",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "grad" => Ok(Method::Grad),
            "sign" => Ok(Method::Sign),
            other => Err(Error::Config(format!(
                "unknown adversarial method '{other}' (grad|sign)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Direction<T> {
    pub values: Vec<T>,
    pub method: Method,
    /// The raw gradient was exactly zero.
    pub degenerate: bool,
    pub model: usize,
    pub sample: usize,
}

/// Gradient of the NLL at the true labels with respect to each of `batch`
/// flattened samples. Losses are summed so each row is that sample's own
/// gradient. The network must be in evaluation mode.
pub fn input_gradients<T: Scalar>(
    net: &Network<T>,
    samples: &[T],
    labels: &[usize],
) -> Result<Vec<Vec<T>>> {
    if net.mode() != Mode::Eval {
        return Err(Error::Usage(
            "input gradients need a network in evaluation mode".into(),
        ));
    }
    let mut tape = Tape::new();
    let f = net.record(&mut tape, samples, labels.len(), false, true)?;
    let loss = tape.log_softmax_nll(f.logits, labels, Reduction::Sum)?;
    tape.backward(loss)?;
    let dim = net.spec().input_len();
    let grad = tape
        .grad(f.input)
        .map(<[T]>::to_vec)
        .unwrap_or_else(|| vec![T::zero(); samples.len()]);
    Ok(grad.chunks_exact(dim).map(<[T]>::to_vec).collect())
}

pub fn input_gradient<T: Scalar>(net: &Network<T>, x: &[T], y: usize) -> Result<Vec<T>> {
    Ok(input_gradients(net, x, &[y])?.pop().unwrap())
}

/// Direction from a raw gradient.
pub fn direction_from_gradient<T: Scalar>(gradient: Vec<T>, method: Method) -> Direction<T> {
    let len = norm(&gradient);
    let degenerate = len == T::zero();
    let values = match method {
        Method::Grad if !degenerate => gradient.into_iter().map(|g| g / len).collect(),
        Method::Grad => gradient,
        Method::Sign => gradient.into_iter().map(sign).collect(),
    };
    Direction {
        values,
        method,
        degenerate,
        model: 0,
        sample: 0,
    }
}

fn sign<T: Scalar>(g: T) -> T {
    if g > T::zero() {
        T::one()
    } else if g < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

pub fn adversarial_direction<T: Scalar>(
    net: &Network<T>,
    x: &[T],
    y: usize,
    method: Method,
) -> Result<Direction<T>> {
    Ok(direction_from_gradient(input_gradient(net, x, y)?, method))
}

/// Directions for a batch of samples; `sample` ids are the batch positions.
pub fn adversarial_directions<T: Scalar>(
    net: &Network<T>,
    samples: &[T],
    labels: &[usize],
    method: Method,
    model: usize,
) -> Result<Vec<Direction<T>>> {
    Ok(input_gradients(net, samples, labels)?
        .into_iter()
        .enumerate()
        .map(|(i, g)| Direction {
            model,
            sample: i,
            ..direction_from_gradient(g, method)
        })
        .collect())
}

pub fn dot<T: Scalar>(u: &[T], v: &[T]) -> T {
    u.iter().zip(v).map(|(&a, &b)| a * b).sum()
}

pub fn norm<T: Scalar>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

/// Cosine similarity clamped to `[-1, 1]`; identical vectors give exactly 1.
pub fn cosine<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(Error::Domain(format!(
            "vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (uu, vv) = (dot(u, u), dot(v, v));
    if uu == T::zero() || vv == T::zero() {
        return Err(Error::Domain("angle with a zero vector".into()));
    }
    let c = dot(u, v) / (uu * vv).sqrt();
    Ok(c.max(-T::one()).min(T::one()))
}

/// Angle in degrees, in `[0, 180]`.
pub fn angle_between<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    Ok(cosine(u, v)?.acos().to_degrees())
}

/// `min(a, 180 - a)` for `a` in `[0, 180]`.
pub fn fold_angle<T: Scalar>(a: T) -> Result<T> {
    if !(a >= T::zero() && a <= T::of(180.0)) {
        return Err(Error::Domain(format!("angle {a} outside [0, 180]")));
    }
    Ok(fold_angle_unchecked(a))
}

pub(crate) fn fold_angle_unchecked<T: Scalar>(a: T) -> T {
    let ninety = T::of(90.0);
    if a <= ninety {
        a
    } else {
        T::of(180.0) - a
    }
}

pub fn folded_angle_between<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    Ok(fold_angle_unchecked(angle_between(u, v)?))
}
