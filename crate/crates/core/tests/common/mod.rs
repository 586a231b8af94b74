#![allow(dead_code)]

use early_transfer::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let v = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// |a - b| / max(|a|, |b|), with an absolute fallback below `floor`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < floor {
        (a - b).abs() / floor
    } else {
        (a - b).abs() / scale
    }
}

/// Central finite differences of a scalar graph with respect to every
/// element of every input. Returns (analytic, numeric) per input.
pub fn finite_difference_check<F>(
    inputs: &[Tensor<f64>],
    h: f64,
    build: F,
) -> Vec<(Vec<f64>, Vec<f64>)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).unwrap().to_vec())
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.param(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).item().unwrap()
    };
    let mut out = Vec::new();
    for (i, a) in analytic.into_iter().enumerate() {
        let mut numeric = Vec::with_capacity(a.len());
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].values_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].values_mut()[j] -= h;
            numeric.push((eval(&plus) - eval(&minus)) / (2.0 * h));
        }
        out.push((a, numeric));
    }
    out
}

pub fn max_rel_err(pairs: &[(Vec<f64>, Vec<f64>)], floor: f64) -> f64 {
    pairs
        .iter()
        .flat_map(|(a, n)| a.iter().zip(n).map(|(&x, &y)| rel_err(x, y, floor)))
        .fold(0.0, f64::max)
}

pub mod fc;

/// Write a CIFAR-10 binary tree: five training batches and a test batch,
/// each holding `per_file` records with labels cycling through 0..10 and
/// pixel bytes derived from `(file, record, position)`.
pub fn write_cifar_fixture(dir: &std::path::Path, per_file: usize) {
    let names = [
        "data_batch_1.bin",
        "data_batch_2.bin",
        "data_batch_3.bin",
        "data_batch_4.bin",
        "data_batch_5.bin",
        "test_batch.bin",
    ];
    for (f, name) in names.iter().enumerate() {
        let mut bytes = Vec::with_capacity(per_file * 3073);
        for r in 0..per_file {
            bytes.push(((r + f) % 10) as u8);
            bytes.extend((0..3072).map(|p| fixture_pixel(f, r, p)));
        }
        std::fs::write(dir.join(name), bytes).unwrap();
    }
}

pub fn fixture_pixel(file: usize, record: usize, pos: usize) -> u8 {
    ((file * 131 + record * 31 + pos * 7) % 256) as u8
}
