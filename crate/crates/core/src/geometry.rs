//! Angles between independent uniformly random unit vectors: the null model
//! against which every measured alignment is judged.
//!
//! The analytic side follows the `E(|b_1|^p) = 1/n` argument: the "expected"
//! angle is `arccos((1/n)^(1/p))`, the variance of the cosine is `1/n`, and
//! Markov's inequality bounds `P(cos^2 >= t/n) <= 1/t`. The Monte-Carlo side
//! samples ℓ2-uniform pairs and reports folded-angle statistics.

use std::num::NonZeroUsize;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::adversarial::{fold_angle_unchecked, norm};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::mix_seed;

/// `arccos((1/n)^(1/p))` in degrees: the positive-correlation branch of the
/// expected angle in dimension `n` under the ℓp norm. The negative branch is
/// `180 -` this value.
pub fn expected_angle<T: Scalar>(n: usize, p: T) -> Result<T> {
    if n < 1 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    if p.is_nan() || p < T::one() {
        return Err(Error::Domain(format!(
            "norm order must be at least 1, got {p}"
        )));
    }
    let n = T::from_usize(n).unwrap();
    Ok((T::one() / n).powf(T::one() / p).acos().to_degrees())
}

/// Variance of one coordinate of a uniform unit vector, `1/n`; equal to the
/// variance of the cosine between two independent ones.
pub fn cos_variance<T: Scalar>(n: usize) -> Result<T> {
    if n < 1 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    Ok(T::one() / T::from_usize(n).unwrap())
}

/// Markov bound on small angles: `P(angle <= arccos(sqrt(t/n))) <= 1/t`.
/// Returns `(angle in degrees, 1/t)`.
pub fn markov_angle_bound<T: Scalar>(t: usize, n: usize) -> Result<(T, T)> {
    if t < 1 || t > n {
        return Err(Error::Domain(format!("need 1 <= t <= n, got t={t}, n={n}")));
    }
    let (tt, nn) = (T::from_usize(t).unwrap(), T::from_usize(n).unwrap());
    Ok(((tt / nn).sqrt().acos().to_degrees(), T::one() / tt))
}

/// Uniform point on the ℓ2 unit sphere: normalized standard-normal draws.
pub fn sample_unit_vector<T: Scalar, R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<T> {
    assert!(n >= 1, "dimension must be at least 1");
    loop {
        let v: Vec<T> = (0..n).map(|_| T::of(StandardNormal.sample(rng))).collect();
        let len = norm(&v);
        if len > T::zero() {
            return v.into_iter().map(|x| x / len).collect();
        }
    }
}

/// Mean, population standard deviation and minimum of a set of folded angles.
///
/// Partial statistics from independent workers combine exactly with
/// [`AngleStat::merge`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngleStat {
    pub count: u64,
    pub mean: f64,
    m2: f64,
    pub min: f64,
}

impl Default for AngleStat {
    fn default() -> Self {
        AngleStat {
            count: 0,
            mean: 0.0,
            m2: 0.0,
            min: f64::INFINITY,
        }
    }
}

impl AngleStat {
    pub fn push(&mut self, angle: f64) {
        self.count += 1;
        let delta = angle - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (angle - self.mean);
        self.min = self.min.min(angle);
    }

    /// Pairwise combination of two partial summaries.
    pub fn merge(&mut self, other: &AngleStat) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta = other.mean - self.mean;
        self.mean += delta * nb / n;
        self.m2 += other.m2 + delta * delta * na * nb / n;
        self.count += other.count;
        self.min = self.min.min(other.min);
    }

    pub fn std(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        (self.m2 / self.count as f64).max(0.0).sqrt()
    }
}

impl FromIterator<f64> for AngleStat {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = AngleStat::default();
        for a in iter {
            s.push(a);
        }
        s
    }
}

const CHUNK_PAIRS: usize = 2048;

/// Folded angles of `pairs` independent ℓ2-uniform vector pairs in dimension
/// `n`. Work is cut into fixed-size chunks, each with its own seeded stream,
/// so the output does not depend on how many threads ran it.
pub fn sample_folded_angles(n: usize, pairs: usize, seed: u64) -> Result<Vec<f64>> {
    if n < 1 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    let chunks = pairs.div_ceil(CHUNK_PAIRS);
    let workers = std::thread::available_parallelism()
        .map_or(1, NonZeroUsize::get)
        .min(chunks.max(1));
    let run_chunk = |c: usize| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, c as u64));
        let len = CHUNK_PAIRS.min(pairs - c * CHUNK_PAIRS);
        let (mut a, mut b) = (vec![0.0f64; n], vec![0.0f64; n]);
        (0..len)
            .map(|_| {
                a.iter_mut()
                    .for_each(|x| *x = StandardNormal.sample(&mut rng));
                b.iter_mut()
                    .for_each(|x| *x = StandardNormal.sample(&mut rng));
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for (x, y) in a.iter().zip(&b) {
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                let cos = (dot / (na * nb).sqrt()).clamp(-1.0, 1.0);
                fold_angle_unchecked(cos.acos().to_degrees())
            })
            .collect()
    };
    let mut per_chunk: Vec<Vec<f64>> = vec![Vec::new(); chunks];
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let run_chunk = &run_chunk;
                s.spawn(move || {
                    (w..chunks)
                        .step_by(workers)
                        .map(|c| (c, run_chunk(c)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (c, v) in h.join().expect("sampling worker panicked") {
                per_chunk[c] = v;
            }
        }
    });
    Ok(per_chunk.concat())
}

/// Folded-angle statistics over `pairs` independent random pairs.
pub fn empirical_angle_stats(n: usize, pairs: usize, seed: u64) -> Result<AngleStat> {
    if pairs < 1 {
        return Err(Error::Domain("need at least one pair".into()));
    }
    Ok(sample_folded_angles(n, pairs, seed)?.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_edge_cases() {
        assert_eq!(expected_angle::<f64>(1, 2.0).unwrap(), 0.0);
        assert!((expected_angle::<f64>(2, 2.0).unwrap() - 45.0).abs() < 1e-12);
        assert!(expected_angle::<f64>(0, 2.0).is_err());
        assert!(expected_angle::<f64>(4, 0.5).is_err());
        assert_eq!(cos_variance::<f64>(1).unwrap(), 1.0);
        assert_eq!(cos_variance::<f64>(100).unwrap(), 0.01);
        assert!((cos_variance::<f64>(3072).unwrap() - 3.255e-4).abs() < 1e-7);
        let (angle, bound) = markov_angle_bound::<f64>(3072, 3072).unwrap();
        assert_eq!((angle, bound), (0.0, 1.0 / 3072.0));
        assert!(markov_angle_bound::<f64>(3073, 3072).is_err());
        assert!(markov_angle_bound::<f64>(0, 3072).is_err());
    }

    #[test]
    fn single_precision_agrees() {
        let a = expected_angle::<f32>(3072, 2.0).unwrap() as f64;
        let b = expected_angle::<f64>(3072, 2.0).unwrap();
        assert!((a - b).abs() < 1e-3);
    }

    #[test]
    fn monotone_in_dimension_and_order() {
        let mut prev = 0.0;
        for n in 1..500 {
            let a = expected_angle::<f64>(n, 2.0).unwrap();
            assert!(a >= prev);
            prev = a;
        }
        for n in [2, 16, 3072] {
            let mut prev = 90.0;
            for p in [1.0, 1.5, 2.0, 3.0, 8.0] {
                let a = expected_angle::<f64>(n, p).unwrap();
                assert!(a < prev);
                prev = a;
            }
        }
    }

    #[test]
    fn unit_vectors_have_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [1, 2, 17, 3072] {
            let v: Vec<f64> = sample_unit_vector(n, &mut rng);
            let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((len - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn merge_equals_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 91) as f64).collect();
        let whole: AngleStat = xs.iter().copied().collect();
        let mut left: AngleStat = xs[..313].iter().copied().collect();
        let right: AngleStat = xs[313..].iter().copied().collect();
        left.merge(&right);
        assert_eq!(left.count, whole.count);
        assert!((left.mean - whole.mean).abs() < 1e-10);
        assert!((left.std() - whole.std()).abs() < 1e-10);
        assert_eq!(left.min, whole.min);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let a = sample_folded_angles(64, 5000, 9).unwrap();
        let b = sample_folded_angles(64, 5000, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_folded_angles(64, 5000, 10).unwrap());
        assert!(a.iter().all(|&x| (0.0..=90.0).contains(&x)));
    }
}
