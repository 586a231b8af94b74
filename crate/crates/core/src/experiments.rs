//! Experiment drivers: paired step-scale training, epoch-scale runs,
//! first-layer update correlations and weight/adversarial alignment.
//!
//! Every random choice flows from [`RunSeeds`]; identical configurations
//! produce bit-identical records.

use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adversarial::{adversarial_directions, Direction, Method};
use crate::data::{
    load_cifar10_binary, shuffled_batches, synthetic_noise_task, BatchPlan, BatchStream, Dataset,
    Split,
};
use crate::error::{Error, Result};
use crate::geometry::AngleStat;
use crate::models::{Mode, Network, NetworkSpec};
use crate::optim::{OptimizerConfig, OptimizerKind, OptimizerState};
use crate::report::Manifest;
use crate::scalar::Scalar;
use crate::seed::RunSeeds;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_ANGLE_SAMPLES: usize = 100;
pub const DEFAULT_MAX_PER_CLASS: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Budget {
    Steps(usize),
    Epochs(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Cifar {
        dir: PathBuf,
        classes: [u8; 2],
        max_per_class: Option<usize>,
    },
    Synthetic {
        train: usize,
        test: usize,
        dim: usize,
        seed: u64,
    },
}

impl DataSource {
    pub fn load<T: Scalar>(&self) -> Result<(Dataset<T>, Dataset<T>)> {
        match self {
            DataSource::Cifar {
                dir,
                classes,
                max_per_class,
            } => load_cifar10_binary(dir, classes[0], classes[1], *max_per_class),
            DataSource::Synthetic {
                train,
                test,
                dim,
                seed,
            } => synthetic_noise_task(*train, *test, *dim, *seed),
        }
    }

    /// Dataset keys for a run manifest.
    pub fn describe(&self, m: &mut Manifest) {
        match self {
            DataSource::Cifar {
                dir,
                classes,
                max_per_class,
            } => {
                m.set("dataset", "cifar");
                m.set("data_dir", dir.display());
                m.set("classes", format!("{},{}", classes[0], classes[1]));
                m.set(
                    "max_train_per_class",
                    max_per_class.map_or("all".to_string(), |c| c.to_string()),
                );
            }
            DataSource::Synthetic {
                train,
                test,
                dim,
                seed,
            } => {
                m.set("dataset", "synthetic");
                m.set("synthetic_train", train);
                m.set("synthetic_test", test);
                m.set("synthetic_dim", dim);
                m.set("synthetic_seed", seed);
            }
        }
        m.set("preprocessing", "pixel/255, no normalization");
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub arch1: String,
    pub arch2: String,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub seeds: RunSeeds,
    pub budget: Budget,
    pub source: DataSource,
    pub method: Method,
    pub angle_samples: usize,
    /// Permit equal model or shuffle seeds (twin control).
    pub allow_shared_seeds: bool,
}

impl ExperimentConfig {
    /// fc_deep pair, Adam at 1e-2, batch 128, 30 steps.
    pub fn new(source: DataSource, seeds: RunSeeds) -> Self {
        ExperimentConfig {
            arch1: "fc_deep".into(),
            arch2: "fc_deep".into(),
            optimizer: OptimizerKind::Adam,
            lr: 1e-2,
            batch_size: 128,
            seeds,
            budget: Budget::Steps(30),
            source,
            method: Method::Grad,
            angle_samples: DEFAULT_ANGLE_SAMPLES,
            allow_shared_seeds: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        NetworkSpec::from_id(&self.arch1)?;
        NetworkSpec::from_id(&self.arch2)?;
        if !self.allow_shared_seeds {
            if self.seeds.model1 == self.seeds.model2 {
                return Err(Error::Config("model seeds must differ".into()));
            }
            if self.seeds.shuffle1 == self.seeds.shuffle2 {
                return Err(Error::Config("shuffle seeds must differ".into()));
            }
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.angle_samples == 0 {
            return Err(Error::Config(
                "angle sample count must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("tool_version", TOOL_VERSION);
        for (tag, id) in [("arch1", &self.arch1), ("arch2", &self.arch2)] {
            m.set(tag, id);
            if let Ok(spec) = NetworkSpec::from_id(id) {
                spec_into_manifest(&mut m, tag, &spec);
            }
        }
        let opt = OptimizerConfig::new(self.optimizer, self.lr);
        m.set("optimizer", self.optimizer);
        m.set("lr", self.lr);
        m.set("beta1", opt.beta1);
        m.set("beta2", opt.beta2);
        m.set("eps", opt.eps);
        m.set("momentum", opt.momentum);
        m.set("rmsprop_alpha", opt.alpha);
        m.set("batch_size", self.batch_size);
        match self.budget {
            Budget::Steps(s) => m.set("steps", s),
            Budget::Epochs(e) => m.set("epochs", e),
        }
        seeds_into_manifest(&mut m, &self.seeds);
        self.source.describe(&mut m);
        m.set("method", self.method);
        m.set("angle_samples", self.angle_samples);
        m.set("init", "uniform(+-1/sqrt(fan_in)), zero bias");
        m.set("batchnorm_momentum", crate::models::BATCHNORM_MOMENTUM);
        m.set("batchnorm_eps", crate::models::BATCHNORM_EPS);
        m
    }
}

fn spec_into_manifest(m: &mut Manifest, tag: &str, spec: &NetworkSpec) {
    for line in spec.to_kv().lines() {
        if let Some((k, v)) = line.split_once('=') {
            m.set(format!("{tag}.{k}"), v);
        }
    }
}

fn seeds_into_manifest(m: &mut Manifest, s: &RunSeeds) {
    m.set("seed_model1", s.model1);
    m.set("seed_model2", s.model2);
    m.set("seed_shuffle1", s.shuffle1);
    m.set("seed_shuffle2", s.shuffle2);
    m.set("seed_eval", s.eval);
}

/// One measurement point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TickRecord {
    pub tick: usize,
    /// Mean folded angle over non-degenerate pool samples; `None` when every
    /// sample was degenerate.
    pub angle_mean: Option<f64>,
    pub angle_std: Option<f64>,
    pub degenerate: usize,
    pub acc1: f64,
    pub acc2: f64,
}

/// A non-finite loss, parameter or direction, with the tick it appeared at.
#[derive(Clone, Debug, PartialEq)]
pub struct Divergence {
    pub tick: usize,
    pub model: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSeries {
    pub records: Vec<TickRecord>,
    pub divergence: Option<Divergence>,
    pub manifest: Manifest,
}

/// The first `count` test indices after a seeded shuffle.
pub fn eval_pool(test_len: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count > test_len {
        return Err(Error::Config(format!(
            "{count} angle samples requested from a test split of {test_len}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..test_len).collect();
    idx.shuffle(&mut rng);
    idx.truncate(count);
    Ok(idx)
}

struct Learner<T> {
    net: Network<T>,
    opt: OptimizerState<T>,
    stream: BatchStream,
}

impl<T: Scalar> Learner<T> {
    /// `Ok(Some(reason))` on divergence.
    fn advance(&mut self, train: &Dataset<T>, steps: usize) -> Result<Option<String>> {
        self.net.set_mode(Mode::Train);
        for _ in 0..steps {
            let batch = self.stream.next().expect("batch streams are endless");
            let (xs, ys) = train.gather(&batch);
            let loss = self.net.compute_gradients(&xs, &ys)?;
            if !loss.is_finite() {
                return Ok(Some(format!("non-finite loss {loss}")));
            }
            self.opt.update(self.net.params_mut())?;
            if !self.net.params().iter().all(|p| p.is_finite()) {
                return Ok(Some("non-finite parameters after update".into()));
            }
        }
        Ok(None)
    }
}

struct Observation<T> {
    directions: Vec<Direction<T>>,
    accuracy: f64,
}

fn observe<T: Scalar>(
    net: &mut Network<T>,
    pool_x: &[T],
    pool_y: &[usize],
    test: &Dataset<T>,
    method: Method,
    model: usize,
) -> Result<Observation<T>> {
    net.set_mode(Mode::Eval);
    let directions = adversarial_directions(net, pool_x, pool_y, method, model)?;
    let accuracy = net.accuracy(test)?;
    Ok(Observation {
        directions,
        accuracy,
    })
}

/// Per-sample folded angles between paired directions; samples where either
/// side is degenerate are counted and skipped.
pub fn paired_angle_stat<T: Scalar>(
    d1: &[Direction<T>],
    d2: &[Direction<T>],
) -> Result<(AngleStat, usize)> {
    let mut stat = AngleStat::default();
    let mut degenerate = 0;
    for (a, b) in d1.iter().zip(d2) {
        if a.degenerate || b.degenerate {
            degenerate += 1;
            continue;
        }
        stat.push(crate::adversarial::folded_angle_between(&a.values, &b.values)?.as_f64());
    }
    Ok((stat, degenerate))
}

/// Paired step-scale training: tick 0 before any update, then one tick per
/// optimizer step of each model on its own batch stream.
pub fn run_paired_training<T: Scalar>(
    cfg: &ExperimentConfig,
    train: &Dataset<T>,
    test: &Dataset<T>,
) -> Result<RunSeries> {
    if !matches!(cfg.budget, Budget::Steps(_)) {
        return Err(Error::Config("paired training needs a step budget".into()));
    }
    run_observed(cfg, train, test, |_| {})
}

/// Epoch-scale run: one tick per full pass over the training split.
pub fn run_long_term<T: Scalar>(
    cfg: &ExperimentConfig,
    train: &Dataset<T>,
    test: &Dataset<T>,
) -> Result<RunSeries> {
    if !matches!(cfg.budget, Budget::Epochs(_)) {
        return Err(Error::Config("long-term runs need an epoch budget".into()));
    }
    run_observed(cfg, train, test, |_| {})
}

/// Shared driver for both budgets; `observer` sees each record as soon as it
/// is measured.
pub fn run_observed<T: Scalar>(
    cfg: &ExperimentConfig,
    train: &Dataset<T>,
    test: &Dataset<T>,
    mut observer: impl FnMut(&TickRecord),
) -> Result<RunSeries> {
    cfg.validate()?;
    let started = SystemTime::now();
    let clock = Instant::now();
    if train.split() != Split::Train || test.split() != Split::Test {
        return Err(Error::Config(
            "angle pool must come from the test split, training from the train split".into(),
        ));
    }
    let specs = [
        NetworkSpec::from_id(&cfg.arch1)?,
        NetworkSpec::from_id(&cfg.arch2)?,
    ];
    for spec in &specs {
        if spec.input_len() != train.dim() || spec.input_len() != test.dim() {
            return Err(Error::Config(format!(
                "{} expects inputs of {} values, data has {}",
                spec.name,
                spec.input_len(),
                train.dim()
            )));
        }
    }
    let pool = eval_pool(test.len(), cfg.angle_samples, cfg.seeds.eval)?;
    let (pool_x, pool_y) = test.gather(&pool);
    let plan = |seed| shuffled_batches(train.len(), cfg.batch_size, seed);
    let (plan1, plan2): (BatchPlan, BatchPlan) =
        (plan(cfg.seeds.shuffle1)?, plan(cfg.seeds.shuffle2)?);
    let learner = |spec: NetworkSpec, seed, plan: &BatchPlan| -> Result<Learner<T>> {
        Ok(Learner {
            net: Network::build(spec, seed)?,
            opt: OptimizerState::new(OptimizerConfig::new(cfg.optimizer, T::of(cfg.lr)))?,
            stream: plan.stream(),
        })
    };
    let [spec1, spec2] = specs;
    let mut l1 = learner(spec1, cfg.seeds.model1, &plan1)?;
    let mut l2 = learner(spec2, cfg.seeds.model2, &plan2)?;
    let (ticks, steps_per_tick) = match cfg.budget {
        Budget::Steps(s) => (s, 1),
        Budget::Epochs(e) => (e, plan1.batches_per_epoch()),
    };

    let mut records = Vec::with_capacity(ticks + 1);
    let mut divergence = None;
    for tick in 0..=ticks {
        if tick > 0 {
            let (r1, r2) = std::thread::scope(|s| {
                let h = s.spawn(|| l2.advance(train, steps_per_tick));
                let r1 = l1.advance(train, steps_per_tick);
                (r1, h.join().expect("training thread panicked"))
            });
            if let Some((model, reason)) = [(1, r1?), (2, r2?)]
                .into_iter()
                .find_map(|(m, r)| r.map(|r| (m, r)))
            {
                divergence = Some(Divergence {
                    tick,
                    model,
                    reason,
                });
                break;
            }
        }
        let (o1, o2) = std::thread::scope(|s| {
            let h = s.spawn(|| observe(&mut l2.net, &pool_x, &pool_y, test, cfg.method, 2));
            let o1 = observe(&mut l1.net, &pool_x, &pool_y, test, cfg.method, 1);
            (o1, h.join().expect("evaluation thread panicked"))
        });
        let (o1, o2) = (o1?, o2?);
        let bad = |o: &Observation<T>| {
            o.directions
                .iter()
                .any(|d| d.values.iter().any(|v| !v.is_finite()))
        };
        if let Some(model) = [(1, &o1), (2, &o2)]
            .into_iter()
            .find(|(_, o)| bad(o))
            .map(|(m, _)| m)
        {
            divergence = Some(Divergence {
                tick,
                model,
                reason: "non-finite input gradient".into(),
            });
            break;
        }
        let (stat, degenerate) = paired_angle_stat(&o1.directions, &o2.directions)?;
        let record = TickRecord {
            tick,
            angle_mean: (stat.count > 0).then_some(stat.mean),
            angle_std: (stat.count > 0).then(|| stat.std()),
            degenerate,
            acc1: o1.accuracy,
            acc2: o2.accuracy,
        };
        observer(&record);
        records.push(record);
    }

    let mut manifest = cfg.manifest();
    manifest.set(
        "eval_pool",
        pool.iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(" "),
    );
    manifest.set("train_samples", train.len());
    manifest.set("test_samples", test.len());
    manifest.set("start_unix_s", unix_seconds(started));
    manifest.set("end_unix_s", unix_seconds(SystemTime::now()));
    manifest.set(
        "wall_time_s",
        format!("{:.3}", clock.elapsed().as_secs_f64()),
    );
    match &divergence {
        None => manifest.set("status", "completed"),
        Some(d) => {
            manifest.set("status", "diverged");
            manifest.set("diverged_tick", d.tick);
            manifest.set("diverged_model", d.model);
            manifest.set("diverged_reason", &d.reason);
        }
    }
    Ok(RunSeries {
        records,
        divergence,
        manifest,
    })
}

fn unix_seconds(t: SystemTime) -> String {
    t.duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
        .to_string()
}

/// Setup shared by the single-step first-layer experiments.
#[derive(Clone, Debug, PartialEq)]
pub struct SingleStepConfig {
    pub arch1: String,
    pub arch2: String,
    pub batch_size: usize,
    pub seeds: RunSeeds,
    /// Feed both models the same batch instead of disjoint ones.
    pub shared_batch: bool,
}

impl SingleStepConfig {
    pub fn new(arch1: &str, arch2: &str, seeds: RunSeeds) -> Self {
        SingleStepConfig {
            arch1: arch1.into(),
            arch2: arch2.into(),
            batch_size: 30,
            seeds,
            shared_batch: false,
        }
    }

    fn manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("tool_version", TOOL_VERSION);
        for (tag, id) in [("arch1", &self.arch1), ("arch2", &self.arch2)] {
            m.set(tag, id);
            if let Ok(spec) = NetworkSpec::from_id(id) {
                spec_into_manifest(&mut m, tag, &spec);
            }
        }
        m.set("batch_size", self.batch_size);
        m.set("shared_batch", self.shared_batch);
        seeds_into_manifest(&mut m, &self.seeds);
        m
    }

    fn networks<T: Scalar>(&self) -> Result<[Network<T>; 2]> {
        let mut nets = Vec::with_capacity(2);
        for (id, seed) in [
            (&self.arch1, self.seeds.model1),
            (&self.arch2, self.seeds.model2),
        ] {
            let spec = NetworkSpec::from_id(id)?;
            if spec.first_linear().is_none() {
                return Err(Error::Config(format!(
                    "{id} does not start with a fully-connected layer"
                )));
            }
            nets.push(Network::build(spec, seed)?);
        }
        Ok(nets.try_into().unwrap_or_else(|_| unreachable!()))
    }

    /// Model 1 takes the head of its shuffle; model 2 the head of its own
    /// shuffle with model 1's indices removed.
    fn batches(&self, len: usize) -> Result<[Vec<usize>; 2]> {
        let b1 = shuffled_batches(len, self.batch_size, self.seeds.shuffle1)?.epoch_permutation(0)
            [..self.batch_size]
            .to_vec();
        if self.shared_batch {
            return Ok([b1.clone(), b1]);
        }
        if 2 * self.batch_size > len {
            return Err(Error::Config(format!(
                "two disjoint batches of {} need {} samples",
                self.batch_size,
                2 * self.batch_size
            )));
        }
        let b2: Vec<usize> = shuffled_batches(len, self.batch_size, self.seeds.shuffle2)?
            .epoch_permutation(0)
            .into_iter()
            .filter(|i| !b1.contains(i))
            .take(self.batch_size)
            .collect();
        Ok([b1, b2])
    }

    /// First-layer weight gradient `[k, n]` of each model on its batch.
    fn first_layer_gradients<T: Scalar>(
        &self,
        nets: &mut [Network<T>; 2],
        train: &Dataset<T>,
    ) -> Result<[Vec<T>; 2]> {
        let batches = self.batches(train.len())?;
        let mut out = Vec::with_capacity(2);
        for (net, batch) in nets.iter_mut().zip(&batches) {
            if net.spec().input_len() != train.dim() {
                return Err(Error::Config(format!(
                    "{} does not match data dimension {}",
                    net.spec().name,
                    train.dim()
                )));
            }
            net.set_mode(Mode::Train);
            let (xs, ys) = train.gather(batch);
            net.compute_gradients(&xs, &ys)?;
            out.push(
                net.params()[0]
                    .grad()
                    .expect("gradients were just computed")
                    .to_vec(),
            );
        }
        Ok(out.try_into().unwrap_or_else(|_| unreachable!()))
    }
}

/// Unit rows of a `[rows, n]` matrix; zero rows are dropped and counted.
fn unit_rows<T: Scalar>(m: &[T], n: usize) -> (Vec<T>, usize) {
    let mut out = Vec::with_capacity(m.len());
    let mut zero = 0;
    for row in m.chunks_exact(n) {
        let len = crate::adversarial::norm(row);
        if len == T::zero() {
            zero += 1;
        } else {
            out.extend(row.iter().map(|&x| x / len));
        }
    }
    (out, zero)
}

/// Folded angles between unit rows of `a` and of `b` (`[*, n]`), through one
/// Gram product. With `within`, `a` and `b` are the same set and only
/// distinct pairs count.
fn gram_angles<T: Scalar>(a: &[T], b: &[T], n: usize, within: bool) -> AngleStat {
    let (ka, kb) = (a.len() / n, b.len() / n);
    let mut stat = AngleStat::default();
    if ka == 0 || kb == 0 {
        return stat;
    }
    let mut g = vec![T::zero(); ka * kb];
    T::gemm(
        ka,
        n,
        kb,
        T::one(),
        a,
        (n as isize, 1),
        b,
        (1, n as isize),
        T::zero(),
        &mut g,
        (kb as isize, 1),
    );
    for i in 0..ka {
        let start = if within { i + 1 } else { 0 };
        for j in start..kb {
            let c = g[i * kb + j].as_f64().clamp(-1.0, 1.0);
            stat.push(crate::adversarial::fold_angle_unchecked(
                c.acos().to_degrees(),
            ));
        }
    }
    stat
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationReport {
    pub within_1: AngleStat,
    pub within_2: AngleStat,
    pub between: AngleStat,
    /// Rows of each gradient that were exactly zero and left out.
    pub zero_rows: [usize; 2],
    pub manifest: Manifest,
}

/// Angles between rows of the first-layer weight gradients after one
/// backward pass per model: within each model and across the two.
pub fn run_update_correlation<T: Scalar>(
    cfg: &SingleStepConfig,
    train: &Dataset<T>,
) -> Result<CorrelationReport> {
    let mut nets = cfg.networks::<T>()?;
    let n = train.dim();
    let [g1, g2] = cfg.first_layer_gradients(&mut nets, train)?;
    let (u1, z1) = unit_rows(&g1, n);
    let (u2, z2) = unit_rows(&g2, n);
    let report = CorrelationReport {
        within_1: gram_angles(&u1, &u1, n, true),
        within_2: gram_angles(&u2, &u2, n, true),
        between: gram_angles(&u1, &u2, n, false),
        zero_rows: [z1, z2],
        manifest: cfg.manifest(),
    };
    if report.within_1.count == 0 || report.within_2.count == 0 || report.between.count == 0 {
        return Err(Error::Degenerate(
            "fewer than two non-zero update rows".into(),
        ));
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentConfig {
    pub step: SingleStepConfig,
    /// Learning rate as a multiple of `|theta_1| / |grad theta_1|`.
    pub lr_multiplier: f64,
    /// Absolute learning rate; overrides the multiplier.
    pub lr: Option<f64>,
    pub method: Method,
    pub angle_samples: usize,
}

impl AlignmentConfig {
    pub fn new(step: SingleStepConfig) -> Self {
        AlignmentConfig {
            step,
            lr_multiplier: 1e3,
            lr: None,
            method: Method::Grad,
            angle_samples: DEFAULT_ANGLE_SAMPLES,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentReport {
    pub align_1: AngleStat,
    pub align_2: AngleStat,
    /// Learning rate applied to each model.
    pub lr: [f64; 2],
    pub zero_rows: [usize; 2],
    pub degenerate: [usize; 2],
    pub manifest: Manifest,
}

/// One SGD step on each model's first-layer weights, then the folded angles
/// between every post-step weight row and the model's adversarial directions
/// on the evaluation pool.
pub fn run_weight_adversarial_alignment<T: Scalar>(
    cfg: &AlignmentConfig,
    train: &Dataset<T>,
    test: &Dataset<T>,
) -> Result<AlignmentReport> {
    if let Some(lr) = cfg.lr {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be finite and >= 0, got {lr}"
            )));
        }
    }
    if !(cfg.lr_multiplier.is_finite() && cfg.lr_multiplier >= 0.0) {
        return Err(Error::Config(
            "lr multiplier must be finite and >= 0".into(),
        ));
    }
    let mut nets = cfg.step.networks::<T>()?;
    let n = train.dim();
    let grads = cfg.step.first_layer_gradients(&mut nets, train)?;
    let pool = eval_pool(test.len(), cfg.angle_samples, cfg.step.seeds.eval)?;
    let (pool_x, pool_y) = test.gather(&pool);
    let mut out = Vec::with_capacity(2);
    for (model, (net, grad)) in nets.iter_mut().zip(grads).enumerate() {
        let grad_norm = crate::adversarial::norm(&grad);
        if grad_norm == T::zero() {
            return Err(Error::Degenerate(format!(
                "model {} has a zero first-layer update",
                model + 1
            )));
        }
        let weights = net.first_layer_weight_mut().expect("checked by networks()");
        let lr = match cfg.lr {
            Some(lr) => T::of(lr),
            None => {
                T::of(cfg.lr_multiplier) * crate::adversarial::norm(weights.values()) / grad_norm
            }
        };
        for (w, &g) in weights.values_mut().iter_mut().zip(&grad) {
            *w -= lr * g;
        }
        net.set_mode(Mode::Eval);
        let dirs = adversarial_directions(net, &pool_x, &pool_y, cfg.method, model + 1)?;
        let degenerate = dirs.iter().filter(|d| d.degenerate).count();
        let mut dir_rows = Vec::with_capacity((dirs.len() - degenerate) * n);
        for d in dirs.iter().filter(|d| !d.degenerate) {
            dir_rows.extend_from_slice(&d.values);
        }
        let (dir_units, _) = unit_rows(&dir_rows, n);
        let (rows, zero) = unit_rows(net.first_layer_weight().expect("checked").values(), n);
        let stat = gram_angles(&rows, &dir_units, n, false);
        if stat.count == 0 {
            return Err(Error::Degenerate(format!(
                "model {} has no usable weight/direction pairs",
                model + 1
            )));
        }
        out.push((stat, lr.as_f64(), zero, degenerate));
    }
    let mut manifest = cfg.step.manifest();
    manifest.set("method", cfg.method);
    manifest.set("angle_samples", cfg.angle_samples);
    manifest.set("lr_multiplier", cfg.lr_multiplier);
    manifest.set(
        "lr_override",
        cfg.lr.map_or("none".to_string(), |l| l.to_string()),
    );
    manifest.set("lr_model1", out[0].1);
    manifest.set("lr_model2", out[1].1);
    manifest.set("updated_layers", "first");
    Ok(AlignmentReport {
        align_1: out[0].0,
        align_2: out[1].0,
        lr: [out[0].1, out[1].1],
        zero_rows: [out[0].2, out[1].2],
        degenerate: [out[0].3, out[1].3],
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_source() -> DataSource {
        DataSource::Synthetic {
            train: 64,
            test: 40,
            dim: 12,
            seed: 4,
        }
    }

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(tiny_source(), RunSeeds::from_base(3));
        cfg.arch1 = "fc:12-8-2".into();
        cfg.arch2 = "fc:12-6-2".into();
        cfg.batch_size = 16;
        cfg.budget = Budget::Steps(3);
        cfg.angle_samples = 20;
        cfg
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny_config();
        cfg.validate().unwrap();
        cfg.seeds = RunSeeds::twins(1);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.allow_shared_seeds = true;
        cfg.validate().unwrap();
        cfg.lr = -1.0;
        assert!(cfg.validate().is_err());
        cfg.lr = 0.0;
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        cfg.batch_size = 1;
        cfg.arch1 = "resnet18".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn pool_is_a_seeded_prefix() {
        let p = eval_pool(50, 10, 7).unwrap();
        assert_eq!(p, eval_pool(50, 10, 7).unwrap());
        assert_eq!(p[..5], eval_pool(50, 5, 7).unwrap()[..]);
        assert!(eval_pool(5, 10, 7).is_err());
    }

    #[test]
    fn tick_zero_only_budget() {
        let mut cfg = tiny_config();
        cfg.budget = Budget::Steps(0);
        let (train, test) = cfg.source.load::<f64>().unwrap();
        let s = run_paired_training(&cfg, &train, &test).unwrap();
        assert_eq!(s.records.len(), 1);
        assert_eq!(s.records[0].tick, 0);
        cfg.budget = Budget::Epochs(0);
        assert!(run_paired_training(&cfg, &train, &test).is_err());
        let s = run_long_term(&cfg, &train, &test).unwrap();
        assert_eq!(s.records.len(), 1);
    }

    #[test]
    fn series_is_reproducible_and_ordered() {
        let cfg = tiny_config();
        let (train, test) = cfg.source.load::<f64>().unwrap();
        let a = run_paired_training(&cfg, &train, &test).unwrap();
        let b = run_paired_training(&cfg, &train, &test).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.records.len(), 4);
        for (i, r) in a.records.iter().enumerate() {
            assert_eq!(r.tick, i);
            let m = r.angle_mean.unwrap();
            assert!((0.0..=90.0).contains(&m));
            assert!((0.0..=1.0).contains(&r.acc1) && (0.0..=1.0).contains(&r.acc2));
        }
        assert_eq!(a.manifest.get("status").as_deref(), Some("completed"));
    }

    #[test]
    fn twins_stay_at_zero() {
        let mut cfg = tiny_config();
        cfg.arch2 = cfg.arch1.clone();
        cfg.seeds = RunSeeds::twins(8);
        cfg.allow_shared_seeds = true;
        let (train, test) = cfg.source.load::<f64>().unwrap();
        for r in run_paired_training(&cfg, &train, &test).unwrap().records {
            assert_eq!(r.angle_mean, Some(0.0));
            assert_eq!(r.acc1, r.acc2);
        }
    }

    #[test]
    fn divergence_is_recorded() {
        let mut cfg = tiny_config();
        cfg.optimizer = OptimizerKind::Sgd;
        cfg.lr = 1e300;
        let (train, test) = cfg.source.load::<f64>().unwrap();
        let s = run_paired_training(&cfg, &train, &test).unwrap();
        let d = s.divergence.expect("run should diverge");
        assert_eq!(d.tick, s.records.len());
        assert_eq!(s.manifest.get("status").as_deref(), Some("diverged"));
    }

    #[test]
    fn gram_angles_match_direct() {
        let a = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let (u, zero) = unit_rows(&a, 2);
        assert_eq!(zero, 0);
        let within = gram_angles(&u, &u, 2, true);
        assert_eq!(within.count, 3);
        let expect = (90.0 + 45.0 + 45.0) / 3.0;
        assert!((within.mean - expect).abs() < 1e-9);
        let (_, zero) = unit_rows(&[0.0, 0.0, 1.0, 2.0], 2);
        assert_eq!(zero, 1);
    }

    #[test]
    fn single_step_needs_leading_linear() {
        let (train, _) = DataSource::Synthetic {
            train: 80,
            test: 20,
            dim: 3072,
            seed: 1,
        }
        .load::<f64>()
        .unwrap();
        let cfg = SingleStepConfig::new("conv_a", "fc_shallow", RunSeeds::from_base(1));
        assert!(matches!(
            run_update_correlation(&cfg, &train),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn batches_are_disjoint_unless_shared() {
        let mut cfg = SingleStepConfig::new("fc_shallow", "fc_shallow", RunSeeds::from_base(2));
        let [a, b] = cfg.batches(100).unwrap();
        assert_eq!((a.len(), b.len()), (30, 30));
        assert!(a.iter().all(|i| !b.contains(i)));
        cfg.shared_batch = true;
        let [a, b] = cfg.batches(100).unwrap();
        assert_eq!(a, b);
    }
}
