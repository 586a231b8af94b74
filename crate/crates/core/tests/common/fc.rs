//! Dense forward pass for fully-connected ReLU networks, written directly
//! from the layer formulas (no tape). Central differences of its loss give
//! an independent check of tape gradients, including on full-size nets: a
//! one-entry perturbation only moves one pre-activation, so each difference
//! needs only the layers above it.

use std::collections::HashMap;

use early_transfer::models::Network;
use early_transfer::Scalar;

pub struct FcNet {
    /// `(weight [out, in], bias [out], in, out)` per layer.
    pub layers: Vec<(Vec<f64>, Vec<f64>, usize, usize)>,
}

pub struct Activations {
    /// Pre-activations per layer; the last entry is the logits.
    pub z: Vec<Vec<f64>>,
    /// Layer inputs: `a[0]` is the sample, `a[l]` feeds layer `l`.
    pub a: Vec<Vec<f64>>,
}

/// Gradients of the single-sample NLL: per layer `(dW, db)`, then the input.
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
    pub input: Vec<f64>,
}

impl FcNet {
    pub fn from_network(net: &Network<f64>) -> Self {
        let p = net.params();
        let layers = p
            .chunks_exact(2)
            .map(|wb| {
                let s = wb[0].shape();
                (wb[0].values().to_vec(), wb[1].values().to_vec(), s[1], s[0])
            })
            .collect();
        FcNet { layers }
    }

    pub fn activations(&self, x: &[f64]) -> Activations {
        let mut a = vec![x.to_vec()];
        let mut z = Vec::new();
        for (l, (w, b, input, output)) in self.layers.iter().enumerate() {
            let prev = &a[l];
            let zl: Vec<f64> = (0..*output)
                .map(|j| b[j] + (0..*input).map(|i| w[j * input + i] * prev[i]).sum::<f64>())
                .collect();
            if l + 1 < self.layers.len() {
                a.push(zl.iter().map(|&v| v.max(0.0)).collect());
            }
            z.push(zl);
        }
        Activations { z, a }
    }

    /// Finish the forward pass from `rows` pre-activation rows of layer `l`
    /// and return each row's NLL at `label`.
    pub fn finish(&self, l: usize, mut z: Vec<f64>, rows: usize, label: usize) -> Vec<f64> {
        for next in l + 1..self.layers.len() {
            let (w, b, input, output) = &self.layers[next];
            let a: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
            let mut out = vec![0.0; rows * output];
            for r in 0..rows {
                out[r * output..(r + 1) * output].copy_from_slice(b);
            }
            f64::gemm(
                rows,
                *input,
                *output,
                1.0,
                &a,
                (*input as isize, 1),
                w,
                (1, *input as isize),
                1.0,
                &mut out,
                (*output as isize, 1),
            );
            z = out;
        }
        let classes = self.layers.last().unwrap().3;
        z.chunks_exact(classes)
            .map(|row| {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln() - row[label]
            })
            .collect()
    }

    /// Smallest |pre-activation| over hidden units.
    pub fn kink_distance(&self, act: &Activations) -> f64 {
        act.z[..act.z.len() - 1]
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    /// Central differences of the NLL at `(x, label)` for every weight, bias
    /// and input entry. Evaluations of identical perturbed rows are shared.
    pub fn central_differences(&self, x: &[f64], label: usize, h: f64) -> Gradients {
        let act = self.activations(x);
        let last = self.layers.len() - 1;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, (_, _, input, output)) in self.layers.iter().enumerate() {
            let zl = &act.z[l];
            let prev = &act.a[l];
            let max_shift = h * prev.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let mut dw = vec![0.0; input * output];
            let mut db = vec![0.0; *output];
            for j in 0..*output {
                // a unit that stays below zero under every perturbation
                // leaves the loss unchanged
                if l < last && zl[j] < -2.0 * max_shift {
                    continue;
                }
                let mut distinct: Vec<f64> = Vec::new();
                let mut slot: HashMap<u64, usize> = HashMap::new();
                let index: Vec<usize> = prev
                    .iter()
                    .chain(std::iter::once(&1.0))
                    .map(|&v| {
                        *slot.entry(v.to_bits()).or_insert_with(|| {
                            distinct.push(v);
                            distinct.len() - 1
                        })
                    })
                    .collect();
                let rows = 2 * distinct.len();
                let mut z = Vec::with_capacity(rows * output);
                for &v in &distinct {
                    for sign in [1.0, -1.0] {
                        let start = z.len();
                        z.extend_from_slice(zl);
                        z[start + j] += sign * h * v;
                    }
                }
                let losses = self.finish(l, z, rows, label);
                let fd = |k: usize| (losses[2 * k] - losses[2 * k + 1]) / (2.0 * h);
                for i in 0..*input {
                    dw[j * input + i] = fd(index[i]);
                }
                db[j] = fd(index[*input]);
            }
            layers.push((dw, db));
        }
        let (w1, _, input, output) = &self.layers[0];
        let mut z = Vec::with_capacity(2 * input * output);
        for i in 0..*input {
            for sign in [1.0, -1.0] {
                z.extend((0..*output).map(|j| act.z[0][j] + sign * h * w1[j * input + i]));
            }
        }
        let losses = self.finish(0, z, 2 * input, label);
        let input_grad = (0..*input)
            .map(|i| (losses[2 * i] - losses[2 * i + 1]) / (2.0 * h))
            .collect();
        Gradients {
            layers,
            input: input_grad,
        }
    }
}
