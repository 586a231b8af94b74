//! Declarative network specs, the four reference architectures, seeded
//! initialization, forward passes and accuracy.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{BatchNormMode, BatchStats, Reduction, Tape, Tensor, Var};

/// Fixed running-statistics momentum: `running = 0.9 * running + 0.1 * batch`.
pub const BATCHNORM_MOMENTUM: f64 = 0.1;
pub const BATCHNORM_EPS: f64 = 1e-5;
/// Binary tasks throughout: two logits per sample.
pub const NUM_CLASSES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layer {
    Linear {
        input: usize,
        output: usize,
    },
    Relu,
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        channels: usize,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Flatten,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Layer::Linear { input, output } => write!(f, "linear({input},{output})"),
            Layer::Relu => f.write_str("relu"),
            Layer::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                write!(
                    f,
                    "conv({in_channels},{out_channels},{kernel},{stride},{padding})"
                )
            }
            Layer::BatchNorm { channels } => write!(f, "batchnorm({channels})"),
            Layer::MaxPool { kernel, stride } => write!(f, "maxpool({kernel},{stride})"),
            Layer::Flatten => f.write_str("flatten"),
        }
    }
}

impl FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("cannot parse layer '{s}'"));
        let (name, args) = match s.split_once('(') {
            Some((name, rest)) => {
                let inner = rest.strip_suffix(')').ok_or_else(bad)?;
                let args = inner
                    .split(',')
                    .map(|a| a.trim().parse::<usize>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>>>()?;
                (name, args)
            }
            None => (s, Vec::new()),
        };
        match (name, args.as_slice()) {
            ("linear", &[input, output]) => Ok(Layer::Linear { input, output }),
            ("relu", []) => Ok(Layer::Relu),
            ("conv", &[in_channels, out_channels, kernel, stride, padding]) => Ok(Layer::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            }),
            ("batchnorm", &[channels]) => Ok(Layer::BatchNorm { channels }),
            ("maxpool", &[kernel, stride]) => Ok(Layer::MaxPool { kernel, stride }),
            ("flatten", []) => Ok(Layer::Flatten),
            _ => Err(bad()),
        }
    }
}

/// Ordered layer list over a per-sample input shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub name: String,
    /// Per-sample input shape: `[features]` or `[channels, height, width]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
}

pub const CIFAR_DIM: usize = 3 * 32 * 32;
pub const FC_SHALLOW_WIDTHS: [usize; 3] = [CIFAR_DIM, 100, NUM_CLASSES];
pub const FC_DEEP_WIDTHS: [usize; 6] = [CIFAR_DIM, 512, 256, 128, 64, NUM_CLASSES];

impl NetworkSpec {
    /// Fully-connected stack over `widths[0]` features with ReLU between layers.
    pub fn fully_connected(name: impl Into<String>, widths: &[usize]) -> Self {
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            if i > 0 {
                layers.push(Layer::Relu);
            }
            layers.push(Layer::Linear {
                input: pair[0],
                output: pair[1],
            });
        }
        NetworkSpec {
            name: name.into(),
            input_shape: vec![widths.first().copied().unwrap_or(0)],
            layers,
        }
    }

    pub fn fc_shallow() -> Self {
        Self::fully_connected("fc_shallow", &FC_SHALLOW_WIDTHS)
    }

    pub fn fc_deep() -> Self {
        Self::fully_connected("fc_deep", &FC_DEEP_WIDTHS)
    }

    /// Four stride-2 5x5 convolutions, then a 256 -> 2 head.
    pub fn conv_a() -> Self {
        let conv = |i, o| Layer::Conv {
            in_channels: i,
            out_channels: o,
            kernel: 5,
            stride: 2,
            padding: 1,
        };
        NetworkSpec {
            name: "conv_a".into(),
            input_shape: vec![3, 32, 32],
            layers: vec![
                conv(3, 128),
                Layer::Relu,
                conv(128, 128),
                Layer::Relu,
                conv(128, 256),
                Layer::Relu,
                conv(256, 256),
                Layer::Relu,
                Layer::Flatten,
                Layer::Linear {
                    input: 256,
                    output: NUM_CLASSES,
                },
            ],
        }
    }

    /// The deep conv/batchnorm/maxpool stack with base width 128.
    pub fn conv_b() -> Self {
        Self::conv_b_with_width(128)
    }

    /// Deep conv architecture with channel widths `w, w, 2w, 2w, 4w, 4w, 8w`
    /// (128 reproduces the reference sizes). Narrower bases keep the layout
    /// at a fraction of the cost.
    pub fn conv_b_with_width(base: usize) -> Self {
        fn block(layers: &mut Vec<Layer>, i: usize, o: usize, padding: usize) {
            layers.push(Layer::Conv {
                in_channels: i,
                out_channels: o,
                kernel: 3,
                stride: 1,
                padding,
            });
            layers.push(Layer::BatchNorm { channels: o });
            layers.push(Layer::Relu);
        }
        let pool = Layer::MaxPool {
            kernel: 2,
            stride: 2,
        };
        let (w1, w2, w4, w8) = (base, 2 * base, 4 * base, 8 * base);
        let mut layers = Vec::new();
        block(&mut layers, 3, w1, 1);
        block(&mut layers, w1, w1, 1);
        layers.push(pool);
        block(&mut layers, w1, w2, 1);
        block(&mut layers, w2, w2, 1);
        layers.push(pool);
        block(&mut layers, w2, w4, 1);
        block(&mut layers, w4, w4, 1);
        layers.push(pool);
        block(&mut layers, w4, w8, 0);
        layers.push(pool);
        layers.push(Layer::Flatten);
        layers.push(Layer::Linear {
            input: w8,
            output: NUM_CLASSES,
        });
        let name = if base == 128 {
            "conv_b".to_string()
        } else {
            format!("conv_b:{base}")
        };
        NetworkSpec {
            name,
            input_shape: vec![3, 32, 32],
            layers,
        }
    }

    /// Resolve an architecture id: a preset name, `fc:<w0>-<w1>-...-2`, or
    /// `conv_b:<base width>`.
    pub fn from_id(id: &str) -> Result<Self> {
        let id = id.trim();
        match id {
            "fc_shallow" => return Ok(Self::fc_shallow()),
            "fc_deep" => return Ok(Self::fc_deep()),
            "conv_a" => return Ok(Self::conv_a()),
            "conv_b" => return Ok(Self::conv_b()),
            _ => {}
        }
        if let Some(widths) = id.strip_prefix("fc:") {
            let widths = widths
                .split('-')
                .map(|w| {
                    w.parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad width list in '{id}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            if widths.len() < 2 {
                return Err(Error::Config(format!("'{id}' needs at least two widths")));
            }
            let spec = Self::fully_connected(id, &widths);
            spec.validate()?;
            return Ok(spec);
        }
        if let Some(base) = id.strip_prefix("conv_b:") {
            let base = base
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad base width in '{id}'")))?;
            if base == 0 {
                return Err(Error::Config("conv_b base width must be positive".into()));
            }
            return Ok(Self::conv_b_with_width(base));
        }
        Err(Error::Config(format!(
            "unknown architecture '{id}' (expected fc_shallow, fc_deep, conv_a, conv_b, fc:<widths>, conv_b:<width>)"
        )))
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Per-sample output shape of every layer; fails on the first layer whose
    /// input does not chain, or when the head is not two logits.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Config(format!(
                "invalid input shape {:?}",
                self.input_shape
            )));
        }
        let mut shape = self.input_shape.clone();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let fail =
                |why: &str| Error::Config(format!("layer {i} ({layer}) on input {shape:?}: {why}"));
            shape = match *layer {
                Layer::Linear { input, output } => {
                    if shape != [input] || output == 0 {
                        return Err(fail("expects a flat input of matching width"));
                    }
                    vec![output]
                }
                Layer::Relu => shape,
                Layer::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    if shape.len() != 3 || shape[0] != in_channels {
                        return Err(fail(
                            "expects [channels, height, width] with matching channels",
                        ));
                    }
                    let g = crate::tensor::Conv2dGeometry::new(
                        in_channels,
                        out_channels,
                        shape[1],
                        shape[2],
                        kernel,
                        stride,
                        padding,
                    )
                    .map_err(|e| fail(&e.to_string()))?;
                    vec![out_channels, g.out_height, g.out_width]
                }
                Layer::BatchNorm { channels } => {
                    if shape.len() != 3 || shape[0] != channels {
                        return Err(fail(
                            "expects [channels, height, width] with matching channels",
                        ));
                    }
                    shape
                }
                Layer::MaxPool { kernel, stride } => {
                    if shape.len() != 3 {
                        return Err(fail("expects [channels, height, width]"));
                    }
                    let g = crate::tensor::PoolGeometry::new(
                        shape[0], shape[1], shape[2], kernel, stride,
                    )
                    .map_err(|e| fail(&e.to_string()))?;
                    vec![shape[0], g.out_height, g.out_width]
                }
                Layer::Flatten => vec![shape.iter().product()],
            };
            shapes.push(shape.clone());
        }
        if shape != [NUM_CLASSES] {
            return Err(Error::Config(format!(
                "network must end in {NUM_CLASSES} logits, ends in {shape:?}"
            )));
        }
        Ok(shapes)
    }

    /// `(input, output)` of the leading fully-connected layer, if the
    /// network starts with one.
    pub fn first_linear(&self) -> Option<(usize, usize)> {
        match self.layers.first() {
            Some(&Layer::Linear { input, output }) => Some((input, output)),
            _ => None,
        }
    }

    /// Key-value text form (`key=value` per line), parsed back by
    /// [`NetworkSpec::from_kv`].
    pub fn to_kv(&self) -> String {
        let shape: Vec<String> = self.input_shape.iter().map(usize::to_string).collect();
        let layers: Vec<String> = self.layers.iter().map(Layer::to_string).collect();
        format!(
            "name={}\ninput_shape={}\nlayers={}\n",
            self.name,
            shape.join("x"),
            layers.join(";")
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let (mut name, mut shape, mut layers) = (None, None, None);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got '{line}'")))?;
            match k.trim() {
                "name" => name = Some(v.trim().to_string()),
                "input_shape" => {
                    shape = Some(
                        v.split('x')
                            .map(|d| {
                                d.trim()
                                    .parse::<usize>()
                                    .map_err(|_| Error::Config(format!("bad input_shape '{v}'")))
                            })
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                "layers" => {
                    layers = Some(
                        v.split(';')
                            .map(str::parse)
                            .collect::<Result<Vec<Layer>>>()?,
                    )
                }
                other => return Err(Error::Config(format!("unknown spec key '{other}'"))),
            }
        }
        let missing = |k: &str| Error::Config(format!("spec is missing '{k}'"));
        Ok(NetworkSpec {
            name: name.ok_or_else(|| missing("name"))?,
            input_shape: shape.ok_or_else(|| missing("input_shape"))?,
            layers: layers.ok_or_else(|| missing("layers"))?,
        })
    }
}

/// The four named reference architectures.
pub fn preset_specs() -> Vec<NetworkSpec> {
    vec![
        NetworkSpec::fc_shallow(),
        NetworkSpec::fc_deep(),
        NetworkSpec::conv_a(),
        NetworkSpec::conv_b(),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
struct RunningStats<T> {
    mean: Vec<T>,
    var: Vec<T>,
}

/// Instantiated parameters of a [`NetworkSpec`].
#[derive(Clone, Debug)]
pub struct Network<T> {
    spec: NetworkSpec,
    params: Vec<Tensor<T>>,
    running: Vec<RunningStats<T>>,
    mode: Mode,
    seed: u64,
}

/// Result of recording a forward pass on a tape.
pub struct Forward<T> {
    pub input: Var,
    pub logits: Var,
    pub params: Vec<Var>,
    pub batch_stats: Vec<BatchStats<T>>,
}

impl<T: Scalar> Network<T> {
    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero,
    /// batchnorm scale one and shift zero. Deterministic in `seed`.
    pub fn build(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut running = Vec::new();
        let uniform =
            |shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng| -> Result<Tensor<T>> {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let n = shape.iter().product();
                Tensor::new(
                    shape,
                    (0..n)
                        .map(|_| T::of(rng.gen_range(-bound..=bound)))
                        .collect(),
                )
            };
        for layer in &spec.layers {
            match *layer {
                Layer::Linear { input, output } => {
                    params.push(uniform(vec![output, input], input, &mut rng)?);
                    params.push(Tensor::zeros([output])?);
                }
                Layer::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    let fan_in = in_channels * kernel * kernel;
                    params.push(uniform(
                        vec![out_channels, in_channels, kernel, kernel],
                        fan_in,
                        &mut rng,
                    )?);
                    params.push(Tensor::zeros([out_channels])?);
                }
                Layer::BatchNorm { channels } => {
                    params.push(Tensor::full([channels], T::one())?);
                    params.push(Tensor::zeros([channels])?);
                    running.push(RunningStats {
                        mean: vec![T::zero(); channels],
                        var: vec![T::one(); channels],
                    });
                }
                Layer::Relu | Layer::MaxPool { .. } | Layer::Flatten => {}
            }
        }
        Ok(Network {
            spec,
            params,
            running,
            mode: Mode::Train,
            seed,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// The first layer's weight matrix `[k, n]` when the network opens with
    /// a fully-connected layer.
    pub fn first_layer_weight(&self) -> Option<&Tensor<T>> {
        self.spec.first_linear().map(|_| &self.params[0])
    }

    pub fn first_layer_weight_mut(&mut self) -> Option<&mut Tensor<T>> {
        self.spec.first_linear().map(|_| &mut self.params[0])
    }

    /// Record a forward pass over `batch` flattened samples. Parameters
    /// become leaves that require grad when `track_params` is set; the input
    /// requires grad when `track_input` is set.
    pub fn record(
        &self,
        tape: &mut Tape<T>,
        samples: &[T],
        batch: usize,
        track_params: bool,
        track_input: bool,
    ) -> Result<Forward<T>> {
        let dim = self.spec.input_len();
        if batch == 0 || samples.len() != batch * dim {
            return Err(Error::Dimension(format!(
                "expected {batch} samples of {dim} values, got {} values",
                samples.len()
            )));
        }
        let mut shape = vec![batch];
        shape.extend_from_slice(&self.spec.input_shape);
        let input = tape.leaf(Tensor::new(shape, samples.to_vec())?, track_input);
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.clone(), track_params))
            .collect();
        let mut x = input;
        let mut next_param = 0;
        let mut next_bn = 0;
        let mut batch_stats = Vec::new();
        let eps = T::of(BATCHNORM_EPS);
        for layer in &self.spec.layers {
            x = match *layer {
                Layer::Linear { .. } => {
                    let y = tape.linear(x, params[next_param], params[next_param + 1])?;
                    next_param += 2;
                    y
                }
                Layer::Relu => tape.relu(x),
                Layer::Conv {
                    stride, padding, ..
                } => {
                    let y = tape.conv2d(
                        x,
                        params[next_param],
                        params[next_param + 1],
                        stride,
                        padding,
                    )?;
                    next_param += 2;
                    y
                }
                Layer::BatchNorm { .. } => {
                    let stats = &self.running[next_bn];
                    let mode = match self.mode {
                        Mode::Train => BatchNormMode::Train { eps },
                        Mode::Eval => BatchNormMode::Eval {
                            running_mean: &stats.mean,
                            running_var: &stats.var,
                            eps,
                        },
                    };
                    let (y, s) =
                        tape.batchnorm2d(x, params[next_param], params[next_param + 1], mode)?;
                    batch_stats.extend(s);
                    next_param += 2;
                    next_bn += 1;
                    y
                }
                Layer::MaxPool { kernel, stride } => tape.maxpool2d(x, kernel, stride)?,
                Layer::Flatten => {
                    let n: usize = tape.value(x).shape()[1..].iter().product();
                    tape.reshape(x, [batch, n])?
                }
            };
        }
        Ok(Forward {
            input,
            logits: x,
            params,
            batch_stats,
        })
    }

    /// Logits `[batch, 2]` for flattened samples, without recording gradients.
    pub fn forward(&self, samples: &[T], batch: usize) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let f = self.record(&mut tape, samples, batch, false, false)?;
        Ok(tape.take(f.logits))
    }

    /// Mean NLL on one batch; stores parameter gradients in the parameter
    /// tensors and, in training mode, folds the batch statistics into the
    /// batchnorm running estimates.
    pub fn compute_gradients(&mut self, samples: &[T], labels: &[usize]) -> Result<T> {
        let mut tape = Tape::new();
        let f = self.record(&mut tape, samples, labels.len(), true, false)?;
        let loss = tape.log_softmax_nll(f.logits, labels, Reduction::Mean)?;
        let loss_value = tape.value(loss).values()[0];
        tape.backward(loss)?;
        for (p, &v) in self.params.iter_mut().zip(&f.params) {
            let g = tape
                .grad(v)
                .map(<[T]>::to_vec)
                .unwrap_or_else(|| vec![T::zero(); p.numel()]);
            p.set_grad(g)?;
        }
        if self.mode == Mode::Train {
            let m = T::of(BATCHNORM_MOMENTUM);
            for (run, batch) in self.running.iter_mut().zip(&f.batch_stats) {
                for (r, &b) in run.mean.iter_mut().zip(&batch.mean) {
                    *r = (T::one() - m) * *r + m * b;
                }
                for (r, &b) in run.var.iter_mut().zip(&batch.var_unbiased) {
                    *r = (T::one() - m) * *r + m * b;
                }
            }
        }
        Ok(loss_value)
    }

    /// Predicted class per sample; a tie between the two logits is class 0.
    pub fn predict(&self, samples: &[T], batch: usize) -> Result<Vec<usize>> {
        let logits = self.forward(samples, batch)?;
        Ok(logits
            .values()
            .chunks_exact(NUM_CLASSES)
            .map(argmax_first)
            .collect())
    }

    /// Fraction of correctly classified samples, evaluated in chunks.
    pub fn accuracy(&self, data: &Dataset<T>) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Input("accuracy of an empty dataset".into()));
        }
        const CHUNK: usize = 250;
        let mut predictions = Vec::with_capacity(data.len());
        for start in (0..data.len()).step_by(CHUNK) {
            let end = (start + CHUNK).min(data.len());
            predictions.extend(self.predict(data.samples_range(start, end), end - start)?);
        }
        accuracy_of(&predictions, data.labels())
    }
}

fn argmax_first<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of predictions equal to their label.
pub fn accuracy_of(predictions: &[usize], labels: &[u8]) -> Result<f64> {
    if labels.is_empty() || predictions.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(&p, &l)| p == l as usize)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for spec in preset_specs() {
            spec.validate()
                .unwrap_or_else(|e| panic!("{}: {e}", spec.name));
        }
        assert_eq!(NetworkSpec::fc_deep().first_linear(), Some((3072, 512)));
    }

    #[test]
    fn conv_a_layout() {
        let spec = NetworkSpec::conv_a();
        let count = |f: fn(&Layer) -> bool| spec.layers.iter().filter(|l| f(l)).count();
        assert_eq!(count(|l| matches!(l, Layer::Conv { .. })), 4);
        assert_eq!(count(|l| matches!(l, Layer::Relu)), 4);
        assert_eq!(count(|l| matches!(l, Layer::Flatten)), 1);
        assert_eq!(count(|l| matches!(l, Layer::Linear { .. })), 1);
        assert_eq!(
            spec.layers.last(),
            Some(&Layer::Linear {
                input: 256,
                output: 2
            })
        );
        let shapes = spec.validate().unwrap();
        assert_eq!(shapes[0], vec![128, 15, 15]);
    }

    #[test]
    fn conv_b_layout() {
        let spec = NetworkSpec::conv_b();
        assert_eq!(
            spec.layers.last(),
            Some(&Layer::Linear {
                input: 1024,
                output: 2
            })
        );
        assert_eq!(
            spec.layers
                .iter()
                .filter(|l| matches!(l, Layer::BatchNorm { .. }))
                .count(),
            7
        );
        assert_eq!(
            spec.layers
                .iter()
                .filter(|l| matches!(l, Layer::MaxPool { .. }))
                .count(),
            4
        );
        let shapes = spec.validate().unwrap();
        assert_eq!(shapes[shapes.len() - 3], vec![1024, 1, 1]);
        let small = NetworkSpec::from_id("conv_b:8").unwrap();
        assert_eq!(
            small.layers.last(),
            Some(&Layer::Linear {
                input: 64,
                output: 2
            })
        );
        small.validate().unwrap();
    }

    #[test]
    fn chain_errors_are_config_errors() {
        let mut spec = NetworkSpec::fully_connected("x", &[8, 4, 2]);
        spec.layers[2] = Layer::Linear {
            input: 5,
            output: 2,
        };
        assert!(matches!(
            Network::<f64>::build(spec, 0),
            Err(Error::Config(_))
        ));
        let three = NetworkSpec::fully_connected("x", &[8, 3]);
        assert!(matches!(three.validate(), Err(Error::Config(_))));
        let mut conv = NetworkSpec::conv_a();
        conv.input_shape = vec![3, 8, 8];
        assert!(conv.validate().is_err());
        assert!(NetworkSpec::from_id("resnet18").is_err());
        assert!(NetworkSpec::from_id("fc:3072").is_err());
    }

    #[test]
    fn kv_round_trip_of_presets() {
        for spec in preset_specs()
            .into_iter()
            .chain([NetworkSpec::from_id("fc:10-7-2").unwrap()])
        {
            assert_eq!(NetworkSpec::from_kv(&spec.to_kv()).unwrap(), spec);
        }
        assert!(NetworkSpec::from_kv("name=x\n").is_err());
        assert!("conv(1,2)".parse::<Layer>().is_err());
    }

    #[test]
    fn build_is_deterministic_and_seed_sensitive() {
        let spec = NetworkSpec::fully_connected("t", &[300, 20, 2]);
        let a = Network::<f64>::build(spec.clone(), 3).unwrap();
        let b = Network::<f64>::build(spec.clone(), 3).unwrap();
        let c = Network::<f64>::build(spec, 4).unwrap();
        assert_eq!(a.params(), b.params());
        let (wa, wc) = (
            a.first_layer_weight().unwrap(),
            c.first_layer_weight().unwrap(),
        );
        let differ = wa
            .values()
            .iter()
            .zip(wc.values())
            .filter(|(x, y)| x != y)
            .count();
        assert!(differ as f64 >= 0.99 * wa.numel() as f64);
        let bound = 1.0 / 300f64.sqrt();
        assert!(wa.values().iter().all(|v| v.abs() <= bound));
        assert!(a.params()[1].values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_head_gives_uniform_logits() {
        let spec = NetworkSpec::fully_connected("t", &[6, 4, 2]);
        let mut net = Network::<f64>::build(spec, 1).unwrap();
        net.params_mut()[2].values_mut().fill(0.0);
        let logits = net.forward(&[0.3; 12], 2).unwrap();
        assert!(logits.values().iter().all(|&v| v == 0.0));
        assert_eq!(net.predict(&[0.3; 12], 2).unwrap(), vec![0, 0]);
    }

    #[test]
    fn accuracy_counts_and_complements() {
        assert_eq!(accuracy_of(&[0, 0, 0], &[0, 0, 0]).unwrap(), 1.0);
        let labels = [0u8, 1, 1, 0, 1];
        let preds = [0usize, 0, 1, 1, 1];
        let inverted: Vec<usize> = preds.iter().map(|p| 1 - p).collect();
        let a = accuracy_of(&preds, &labels).unwrap();
        assert!((accuracy_of(&inverted, &labels).unwrap() - (1.0 - a)).abs() < 1e-15);
        assert!(accuracy_of(&[], &[]).is_err());
    }
}
