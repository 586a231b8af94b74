use super::kernels::{Conv2dGeometry, PoolGeometry};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

/// Normalization statistics source for [`Tape::batchnorm2d`].
#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a, T> {
    /// Normalize with the statistics of the current batch.
    Train { eps: T },
    /// Normalize with stored running statistics.
    Eval {
        running_mean: &'a [T],
        running_var: &'a [T],
        eps: T,
    },
}

/// Per-channel statistics of one training-mode batchnorm call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased (n - 1) variance, the estimator used for running statistics.
    pub var_unbiased: Vec<T>,
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
        rows: usize,
        inp: usize,
        out: usize,
    },
    Relu {
        a: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: Conv2dGeometry,
        batch: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
        batch: usize,
        plane: usize,
    },
    Reshape {
        a: Var,
    },
    Sum {
        a: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Nll {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
        classes: usize,
        scale: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records forward operations so [`Tape::backward`] can replay them in reverse.
///
/// A tape is single-threaded; independent tapes share nothing and can run on
/// separate threads.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that records values only; nothing on it is differentiable.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a leaf. Leaves that require grad receive one on `backward`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Move a recorded tensor (with its gradient) out of the tape.
    pub fn take(&mut self, v: Var) -> Tensor<T> {
        let slot = &mut self.nodes[v.0].value;
        let shape = slot.shape.clone();
        std::mem::replace(
            slot,
            Tensor {
                shape,
                values: Vec::new(),
                grad: None,
            },
        )
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.grad_enabled;
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn vals(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.values()
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension(format!("matmul of {sa:?} by {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.vals(a),
            (k as isize, 1),
            self.vals(b),
            (n as isize, 1),
            T::zero(),
            &mut out,
            (n as isize, 1),
        );
        let value = Tensor::new([m, n], out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul { a, b, m, k, n }, rg))
    }

    /// Fully-connected layer `x W^T + b` with `x: [rows, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] || sb != [sw[0]] {
            return Err(Error::Dimension(format!(
                "linear of {sx:?} with weight {sw:?} and bias {sb:?}"
            )));
        }
        let (rows, inp, out) = (sx[0], sx[1], sw[0]);
        let bias = self.vals(b);
        let mut y = Vec::with_capacity(rows * out);
        for _ in 0..rows {
            y.extend_from_slice(bias);
        }
        T::gemm(
            rows,
            inp,
            out,
            T::one(),
            self.vals(x),
            (inp as isize, 1),
            self.vals(w),
            (1, inp as isize),
            T::one(),
            &mut y,
            (out as isize, 1),
        );
        let value = Tensor::new([rows, out], y)?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(
            value,
            Op::Linear {
                x,
                w,
                b,
                rows,
                inp,
                out,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let src = &self.nodes[a.0].value;
        let values = src
            .values()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let value = Tensor {
            shape: src.shape.clone(),
            values,
            grad: None,
        };
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Relu { a }, rg)
    }

    /// Cross-correlation of `x: [N, C, H, W]` with `w: [O, C, K, K]` plus per-channel bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 4 || sw.len() != 4 || sw[1] != sx[1] || sw[2] != sw[3] || sb != [sw[0]] {
            return Err(Error::Dimension(format!(
                "conv2d of {sx:?} with kernel {sw:?} and bias {sb:?}"
            )));
        }
        let geom = Conv2dGeometry::new(sx[1], sw[0], sx[2], sx[3], sw[2], stride, padding)?;
        let batch = sx[0];
        let out = geom.forward(batch, self.vals(x), self.vals(w), self.vals(b));
        let value = Tensor::new(
            [batch, geom.out_channels, geom.out_height, geom.out_width],
            out,
        )?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                batch,
            },
            rg,
        ))
    }

    /// Max pooling over `[N, C, H, W]` without padding.
    pub fn maxpool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 4 {
            return Err(Error::Dimension(format!(
                "maxpool2d expects [N, C, H, W], got {sx:?}"
            )));
        }
        let geom = PoolGeometry::new(sx[1], sx[2], sx[3], kernel, stride)?;
        let batch = sx[0];
        let (out, argmax) = geom.forward(batch, self.vals(x));
        let value = Tensor::new([batch, geom.channels, geom.out_height, geom.out_width], out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::MaxPool { x, argmax }, rg))
    }

    /// Per-channel batch normalization of `[N, C, H, W]`. Training mode also
    /// returns the batch statistics so the caller can fold them into running
    /// estimates.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 || self.shape(gamma) != [sx[1]] || self.shape(beta) != [sx[1]] {
            return Err(Error::Dimension(format!(
                "batchnorm2d of {sx:?} with gamma {:?} and beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let (batch, channels, plane) = (sx[0], sx[1], sx[2] * sx[3]);
        let count = batch * plane;
        let xs = self.vals(x);
        let (mean, var, stats, train) = match mode {
            BatchNormMode::Train { .. } => {
                if batch < 2 {
                    return Err(Error::Config(
                        "batchnorm in training mode needs a batch of at least 2".into(),
                    ));
                }
                let n = T::from_usize(count).unwrap();
                let mut mean = vec![T::zero(); channels];
                let mut var = vec![T::zero(); channels];
                for c in 0..channels {
                    let mut s = T::zero();
                    for b in 0..batch {
                        let off = (b * channels + c) * plane;
                        s += xs[off..off + plane].iter().copied().sum::<T>();
                    }
                    mean[c] = s / n;
                    let mut q = T::zero();
                    for b in 0..batch {
                        let off = (b * channels + c) * plane;
                        q += xs[off..off + plane]
                            .iter()
                            .map(|&v| (v - mean[c]) * (v - mean[c]))
                            .sum::<T>();
                    }
                    var[c] = q / n;
                }
                let unbiased = var.iter().map(|&v| v * n / (n - T::one())).collect();
                let stats = BatchStats {
                    mean: mean.clone(),
                    var_unbiased: unbiased,
                };
                (mean, var, Some(stats), true)
            }
            BatchNormMode::Eval {
                running_mean,
                running_var,
                ..
            } => {
                if running_mean.len() != channels || running_var.len() != channels {
                    return Err(Error::Dimension(
                        "running statistics do not match channel count".into(),
                    ));
                }
                (running_mean.to_vec(), running_var.to_vec(), None, false)
            }
        };
        let eps = match mode {
            BatchNormMode::Train { eps } | BatchNormMode::Eval { eps, .. } => eps,
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, bt) = (self.vals(gamma), self.vals(beta));
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        for b in 0..batch {
            for c in 0..channels {
                let off = (b * channels + c) * plane;
                for i in off..off + plane {
                    xhat[i] = (xs[i] - mean[c]) * inv_std[c];
                    out[i] = g[c] * xhat[i] + bt[c];
                }
            }
        }
        let value = Tensor::new(sx, out)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
            batch,
            plane,
        };
        Ok((self.push(value, op, rg), stats))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.nodes[a.0].value.clone();
        let value = Tensor {
            grad: None,
            ..value
        }
        .reshaped(shape)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Reshape { a }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.vals(a).iter().copied().sum::<T>();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum { a }, rg)
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "mul of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let values = self
            .vals(a)
            .iter()
            .zip(self.vals(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), values)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    /// Negative log-likelihood of `labels` under `log_softmax(logits)`,
    /// stabilized by subtracting each row's maximum.
    pub fn log_softmax_nll(
        &mut self,
        logits: Var,
        labels: &[usize],
        reduction: Reduction,
    ) -> Result<Var> {
        let sl = self.shape(logits);
        if sl.len() != 2 || sl[0] != labels.len() {
            return Err(Error::Dimension(format!(
                "logits {sl:?} for {} labels",
                labels.len()
            )));
        }
        let (rows, classes) = (sl[0], sl[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let z = self.vals(logits);
        let mut probs = vec![T::zero(); z.len()];
        let mut total = T::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = &z[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let denom: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + denom.ln();
            total += lse - row[label];
            for (p, &v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
                *p = (v - max).exp() / denom;
            }
        }
        let scale = match reduction {
            Reduction::Mean => T::one() / T::from_usize(rows).unwrap(),
            Reduction::Sum => T::one(),
        };
        let rg = self.any_grad(&[logits]);
        let op = Op::Nll {
            logits,
            probs,
            labels: labels.to_vec(),
            classes,
            scale,
        };
        Ok(self.push(Tensor::scalar(total * scale), op, rg))
    }

    /// Reverse-mode sweep from a scalar `loss`. Every recorded tensor that
    /// requires grad and that the loss depends on ends up with a gradient;
    /// gradients from any earlier sweep are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0];
        if !root.requires_grad {
            return Err(Error::Usage(
                "backward called on a tensor that does not require grad".into(),
            ));
        }
        if root.value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        for node in &mut self.nodes {
            node.value.grad = None;
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            self.nodes[i].value.grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        macro_rules! slot {
            ($v:expr) => {{
                let v: Var = $v;
                let len = nodes[v.0].value.numel();
                grads[v.0]
                    .get_or_insert_with(|| vec![T::zero(); len])
                    .as_mut_slice()
            }};
        }
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                if wants(a) {
                    let bv = nodes[b.0].value.values();
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        g,
                        (n as isize, 1),
                        bv,
                        (1, n as isize),
                        T::one(),
                        slot!(a),
                        (k as isize, 1),
                    );
                }
                if wants(b) {
                    let av = nodes[a.0].value.values();
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        av,
                        (1, k as isize),
                        g,
                        (n as isize, 1),
                        T::one(),
                        slot!(b),
                        (n as isize, 1),
                    );
                }
            }
            &Op::Linear {
                x,
                w,
                b,
                rows,
                inp,
                out,
            } => {
                if wants(x) {
                    let wv = nodes[w.0].value.values();
                    T::gemm(
                        rows,
                        out,
                        inp,
                        T::one(),
                        g,
                        (out as isize, 1),
                        wv,
                        (inp as isize, 1),
                        T::one(),
                        slot!(x),
                        (inp as isize, 1),
                    );
                }
                if wants(w) {
                    let xv = nodes[x.0].value.values();
                    T::gemm(
                        out,
                        rows,
                        inp,
                        T::one(),
                        g,
                        (1, out as isize),
                        xv,
                        (inp as isize, 1),
                        T::one(),
                        slot!(w),
                        (inp as isize, 1),
                    );
                }
                if wants(b) {
                    let gb = slot!(b);
                    for row in g.chunks_exact(out) {
                        for (acc, &v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                }
            }
            &Op::Relu { a } => {
                let av = nodes[a.0].value.values();
                for ((acc, &v), &up) in slot!(a).iter_mut().zip(av).zip(g) {
                    if v > T::zero() {
                        *acc += up;
                    }
                }
            }
            &Op::Conv2d {
                x,
                w,
                b,
                geom,
                batch,
            } => {
                let (xv, wv) = (nodes[x.0].value.values(), nodes[w.0].value.values());
                let mut gx = wants(x).then(|| {
                    grads[x.0]
                        .take()
                        .unwrap_or_else(|| vec![T::zero(); xv.len()])
                });
                let mut gw = wants(w).then(|| {
                    grads[w.0]
                        .take()
                        .unwrap_or_else(|| vec![T::zero(); wv.len()])
                });
                let mut gb = wants(b).then(|| {
                    grads[b.0]
                        .take()
                        .unwrap_or_else(|| vec![T::zero(); geom.out_channels])
                });
                geom.backward(
                    batch,
                    xv,
                    wv,
                    g,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if gx.is_some() {
                    grads[x.0] = gx;
                }
                if gw.is_some() {
                    grads[w.0] = gw;
                }
                if gb.is_some() {
                    grads[b.0] = gb;
                }
            }
            Op::MaxPool { x, argmax } => {
                let gx = slot!(*x);
                for (&src, &up) in argmax.iter().zip(g) {
                    gx[src] += up;
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
                batch,
                plane,
            } => {
                let channels = inv_std.len();
                let (batch, plane) = (*batch, *plane);
                let gv = nodes[gamma.0].value.values();
                let mut sum_dy = vec![T::zero(); channels];
                let mut sum_dy_xhat = vec![T::zero(); channels];
                for b in 0..batch {
                    for c in 0..channels {
                        let off = (b * channels + c) * plane;
                        for i in off..off + plane {
                            sum_dy[c] += g[i];
                            sum_dy_xhat[c] += g[i] * xhat[i];
                        }
                    }
                }
                if wants(*gamma) {
                    for (acc, &v) in slot!(*gamma).iter_mut().zip(&sum_dy_xhat) {
                        *acc += v;
                    }
                }
                if wants(*beta) {
                    for (acc, &v) in slot!(*beta).iter_mut().zip(&sum_dy) {
                        *acc += v;
                    }
                }
                if wants(*x) {
                    let m = T::from_usize(batch * plane).unwrap();
                    let gx = slot!(*x);
                    for b in 0..batch {
                        for c in 0..channels {
                            let off = (b * channels + c) * plane;
                            let k = gv[c] * inv_std[c];
                            for i in off..off + plane {
                                gx[i] += if *train {
                                    k * (g[i] - sum_dy[c] / m - xhat[i] * sum_dy_xhat[c] / m)
                                } else {
                                    k * g[i]
                                };
                            }
                        }
                    }
                }
            }
            &Op::Reshape { a } => {
                for (acc, &up) in slot!(a).iter_mut().zip(g) {
                    *acc += up;
                }
            }
            &Op::Sum { a } => {
                for acc in slot!(a).iter_mut() {
                    *acc += g[0];
                }
            }
            &Op::Mul { a, b } => {
                let (av, bv) = (nodes[a.0].value.values(), nodes[b.0].value.values());
                if wants(a) {
                    for ((acc, &y), &up) in slot!(a).iter_mut().zip(bv).zip(g) {
                        *acc += y * up;
                    }
                }
                if wants(b) {
                    for ((acc, &x), &up) in slot!(b).iter_mut().zip(av).zip(g) {
                        *acc += x * up;
                    }
                }
            }
            Op::Nll {
                logits,
                probs,
                labels,
                classes,
                scale,
            } => {
                let k = g[0] * *scale;
                let gl = slot!(*logits);
                for (r, &label) in labels.iter().enumerate() {
                    for c in 0..*classes {
                        let idx = r * classes + c;
                        let target = if c == label { T::one() } else { T::zero() };
                        gl[idx] += (probs[idx] - target) * k;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut tape = Tape::new();
        let i = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.constant(t(&[2, 2], &[2.0, 3.0, 4.0, 5.0]));
        let p = tape.matmul(i, b).unwrap();
        assert_eq!(tape.value(p).values(), &[2.0, 3.0, 4.0, 5.0]);
        let r = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let c = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        let d = tape.matmul(r, c).unwrap();
        assert_eq!(tape.value(d).values(), &[11.0]);
        assert!(matches!(tape.matmul(r, r), Err(Error::Dimension(_))));
    }

    #[test]
    fn relu_forward_and_negative_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).values(), &[0.0, 0.0, 2.0]);

        let mut tape = Tape::new();
        let x = tape.param(t(&[3], &[-1.0, -2.0, -0.5]));
        let y = tape.relu(x);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.value(y).values(), &[0.0; 3]);
        assert_eq!(tape.grad(x).unwrap(), &[0.0; 3]);
    }

    #[test]
    fn sum_and_square_gradients() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[4], &[1.0, -2.0, 3.0, 0.5]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 4]);

        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let sq = tape.mul(x, x).unwrap();
        tape.backward(sq).unwrap();
        assert_eq!(tape.value(sq).item(), Some(9.0));
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_rejects_detached_and_non_scalar() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(1.0));
        assert!(matches!(tape.backward(c), Err(Error::Usage(_))));
        let p = tape.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(p), Err(Error::Usage(_))));
        let mut tape = Tape::<f64>::inference();
        let p = tape.param(Tensor::scalar(1.0));
        let s = tape.sum(p);
        assert!(matches!(tape.backward(s), Err(Error::Usage(_))));
    }

    #[test]
    fn nll_uniform_and_overflow_safe() {
        let mut tape = Tape::new();
        let z = tape.param(t(&[1, 2], &[0.0, 0.0]));
        let l = tape.log_softmax_nll(z, &[0], Reduction::Mean).unwrap();
        assert!((tape.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);

        let z = tape.param(t(&[1, 2], &[1000.0, 0.0]));
        let l = tape.log_softmax_nll(z, &[0], Reduction::Mean).unwrap();
        let loss = tape.value(l).item().unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-300);
        tape.backward(l).unwrap();
        assert!(tape.grad(z).unwrap().iter().all(|g| g.is_finite()));

        let z = tape.param(t(&[1, 2], &[0.0, 0.0]));
        assert!(matches!(
            tape.log_softmax_nll(z, &[2], Reduction::Mean),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn conv_unit_kernel_doubles() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full([1, 1, 3, 3], 1.0).unwrap());
        let w = tape.constant(t(&[1, 1, 1, 1], &[2.0]));
        let b = tape.constant(t(&[1], &[0.0]));
        let y = tape.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 3, 3]);
        assert!(tape.value(y).values().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv_cifar_geometry() {
        let mut tape = Tape::<f64>::inference();
        let x = tape.constant(Tensor::zeros([1, 3, 32, 32]).unwrap());
        let w = tape.constant(Tensor::zeros([4, 3, 5, 5]).unwrap());
        let b = tape.constant(Tensor::zeros([4]).unwrap());
        let y = tape.conv2d(x, w, b, 2, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 4, 15, 15]);
        let w = tape.constant(Tensor::zeros([4, 3, 40, 40]).unwrap());
        assert!(matches!(tape.conv2d(x, w, b, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn maxpool_max_and_tie_routing() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.maxpool2d(x, 2, 2).unwrap();
        assert_eq!(tape.value(y).values(), &[4.0]);

        let x = tape.param(Tensor::full([1, 1, 4, 4], 7.0).unwrap());
        let y = tape.maxpool2d(x, 2, 2).unwrap();
        assert!(tape.value(y).values().iter().all(|&v| v == 7.0));
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        let mut expected = [0.0; 16];
        for i in [0, 2, 8, 10] {
            expected[i] = 1.0;
        }
        assert_eq!(tape.grad(x).unwrap(), &expected[..]);
        let odd = tape.param(Tensor::zeros([1, 1, 5, 5]).unwrap());
        assert!(matches!(tape.maxpool2d(odd, 2, 2), Err(Error::Config(_))));
    }

    #[test]
    fn batchnorm_normalizes_and_gamma_zero_gives_beta() {
        let vals: Vec<f64> = (0..24)
            .map(|i| ((i * 7919) % 23) as f64 * 0.3 - 2.0)
            .collect();
        let mut tape = Tape::new();
        let x = tape.param(t(&[3, 2, 2, 2], &vals));
        let g = tape.param(Tensor::full([2], 1.0).unwrap());
        let b = tape.param(Tensor::zeros([2]).unwrap());
        let (y, stats) = tape
            .batchnorm2d(x, g, b, BatchNormMode::Train { eps: 1e-12 })
            .unwrap();
        assert!(stats.is_some());
        let out = tape.value(y).values();
        for c in 0..2 {
            let xs: Vec<f64> = (0..3)
                .flat_map(|n| out[(n * 2 + c) * 4..(n * 2 + c) * 4 + 4].to_vec())
                .collect();
            let mean = xs.iter().sum::<f64>() / 12.0;
            let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 12.0;
            assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6);
        }

        let g0 = tape.param(Tensor::zeros([2]).unwrap());
        let b0 = tape.param(t(&[2], &[0.25, -1.5]));
        let (y, _) = tape
            .batchnorm2d(x, g0, b0, BatchNormMode::Train { eps: 1e-5 })
            .unwrap();
        let out = tape.value(y).values();
        for n in 0..3 {
            for c in 0..2 {
                let want = [0.25, -1.5][c];
                assert!(out[(n * 2 + c) * 4..(n * 2 + c) * 4 + 4]
                    .iter()
                    .all(|&v| v == want));
            }
        }

        let single = tape.param(Tensor::zeros([1, 2, 2, 2]).unwrap());
        assert!(matches!(
            tape.batchnorm2d(single, g, b, BatchNormMode::Train { eps: 1e-5 }),
            Err(Error::Config(_))
        ));
        let (rm, rv) = ([0.0, 0.0], [1.0, 1.0]);
        let eval = BatchNormMode::Eval {
            running_mean: &rm,
            running_var: &rv,
            eps: 0.0,
        };
        let (y, stats) = tape.batchnorm2d(single, g, b, eval).unwrap();
        assert!(stats.is_none());
        assert!(tape.value(y).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_reaches_inputs() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 3], &[1.0, 2.0, 3.0]), true);
        let w = tape.constant(t(&[2, 3], &[1.0, 0.0, -1.0, 0.5, 0.5, 0.5]));
        let b = tape.constant(t(&[2], &[0.0, 0.0]));
        let z = tape.linear(x, w, b).unwrap();
        let l = tape.log_softmax_nll(z, &[1], Reduction::Mean).unwrap();
        tape.backward(l).unwrap();
        assert!(tape.grad(x).is_some());
        assert!(tape.grad(w).is_none());
    }
}
