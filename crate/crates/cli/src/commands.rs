use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use early_transfer::experiments::{
    run_observed, run_update_correlation, run_weight_adversarial_alignment, AlignmentConfig,
    Budget, DataSource, ExperimentConfig, SingleStepConfig,
};
use early_transfer::geometry::empirical_angle_stats;
use early_transfer::report::{
    alignment_table, correlation_table, expected_angle_table, markov_table, monte_carlo_table,
    series_row, write_svg, Manifest, SERIES_HEADER,
};
use early_transfer::seed::{mix_seed, RunSeeds};
use early_transfer::{Error, Scalar};

use crate::args::{
    AlignArgs, CorrelateArgs, GeometryArgs, LongtermArgs, OutputArgs, PairArgs, Precision,
    StepArgs, TrainArgs,
};
use crate::Failure;

const DEFAULT_DIMS: [usize; 6] = [2, 16, 128, 784, 3072, 196_608];
const DEFAULT_MARKOV: [usize; 6] = [1, 2, 10, 100, 350, 1000];

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_failure(path, e))
}

/// Adds the command-level keys and writes the manifest next to the output.
fn finish_manifest(
    mut m: Manifest,
    command: &str,
    started: u64,
    out: &OutputArgs,
) -> Result<(), Failure> {
    m.set("command", command);
    if m.get("start_unix_s").is_none() {
        m.set("start_unix_s", started);
        m.set("end_unix_s", unix_now());
    }
    m.set("output_csv", out.out.display());
    let path = out.manifest_path();
    m.set("output_manifest", path.display());
    write_text(&path, &m.to_text())
}

/// Series CSV that is flushed row by row so a failed run keeps its prefix.
struct SeriesWriter {
    file: BufWriter<File>,
}

impl SeriesWriter {
    fn create(path: &Path) -> Result<Self, Failure> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        }
        let mut file = BufWriter::new(File::create(path).map_err(|e| io_failure(path, e))?);
        writeln!(file, "{SERIES_HEADER}")
            .and_then(|_| file.flush())
            .map_err(|e| io_failure(path, e))?;
        Ok(SeriesWriter { file })
    }

    fn row(&mut self, line: &str) -> std::io::Result<()> {
        writeln!(self.file, "{line}")?;
        self.file.flush()
    }
}

pub fn pair(a: PairArgs) -> Result<(), Failure> {
    series("pair", Budget::Steps(a.steps), a.train)
}

pub fn longterm(a: LongtermArgs) -> Result<(), Failure> {
    series("longterm", Budget::Epochs(a.epochs), a.train)
}

fn series(command: &str, budget: Budget, t: TrainArgs) -> Result<(), Failure> {
    let source = t.data.source().map_err(Failure::Usage)?;
    let seeds = if t.twins {
        RunSeeds::twins(t.seed_base)
    } else {
        RunSeeds::from_base(t.seed_base)
    };
    let mut cfg = ExperimentConfig::new(source, seeds);
    cfg.arch1 = t.arch1.clone();
    cfg.arch2 = t.arch2.clone();
    cfg.optimizer = t.optimizer;
    cfg.lr = t.lr;
    cfg.batch_size = t.batch_size;
    cfg.budget = budget;
    cfg.method = t.method;
    cfg.angle_samples = t.angle_samples;
    cfg.allow_shared_seeds = t.twins;
    cfg.validate()?;
    match t.precision {
        Precision::F32 => run_series::<f32>(command, &cfg, &t),
        Precision::F64 => run_series::<f64>(command, &cfg, &t),
    }
}

fn run_series<T: Scalar>(
    command: &str,
    cfg: &ExperimentConfig,
    t: &TrainArgs,
) -> Result<(), Failure> {
    let started = unix_now();
    let mut failed = |e: Error| -> Failure {
        let mut m = cfg.manifest();
        m.set("precision", t.precision.name());
        m.set("seed_base", t.seed_base);
        m.set("status", "failed");
        m.set("error", &e);
        match finish_manifest(m, command, started, &t.output) {
            Ok(()) => e.into(),
            Err(write) => write,
        }
    };
    let (train, test) = cfg.source.load::<T>().map_err(&mut failed)?;
    let mut csv = SeriesWriter::create(&t.output.out)?;
    let mut write_error = None;
    let run = run_observed(cfg, &train, &test, |r| {
        if write_error.is_none() {
            if let Err(e) = csv.row(&series_row(r)) {
                write_error = Some(e);
            }
        }
        let angle = r
            .angle_mean
            .map_or("NaN".to_string(), |a| format!("{a:.3}"));
        eprintln!(
            "tick {:>4}  angle {angle}  acc {:.4} / {:.4}",
            r.tick, r.acc1, r.acc2
        );
    });
    let series = run.map_err(&mut failed)?;
    if let Some(e) = write_error {
        return Err(io_failure(&t.output.out, e));
    }
    let mut m = series.manifest;
    m.set("precision", t.precision.name());
    m.set("seed_base", t.seed_base);
    if let Some(svg) = &t.svg {
        let title = format!(
            "{command}: {} vs {}, {} lr {}",
            cfg.arch1, cfg.arch2, cfg.optimizer, cfg.lr
        );
        write_svg(svg, &series.records, &title)?;
        m.set("output_svg", svg.display());
    }
    finish_manifest(m, command, started, &t.output)?;
    match series.divergence {
        None => Ok(()),
        Some(d) => Err(Failure::Runtime(format!(
            "model {} diverged at tick {}: {}",
            d.model, d.tick, d.reason
        ))),
    }
}

fn step_config(s: &StepArgs) -> SingleStepConfig {
    let mut cfg = SingleStepConfig::new(&s.arch1, &s.arch2, RunSeeds::from_base(s.seed_base));
    cfg.batch_size = s.batch_size;
    cfg.shared_batch = s.shared_batch;
    cfg
}

fn step_manifest(m: &mut Manifest, s: &StepArgs, source: &DataSource) {
    m.set("precision", s.precision.name());
    m.set("seed_base", s.seed_base);
    source.describe(m);
}

pub fn correlate(a: CorrelateArgs) -> Result<(), Failure> {
    let s = &a.step;
    let source = s.data.source().map_err(Failure::Usage)?;
    let cfg = step_config(s);
    let started = unix_now();
    let report = match s.precision {
        Precision::F32 => run_update_correlation(&cfg, &source.load::<f32>()?.0),
        Precision::F64 => run_update_correlation(&cfg, &source.load::<f64>()?.0),
    }?;
    write_text(&s.output.out, &correlation_table(&report).to_csv())?;
    println!(
        "mean angles: within model 1 {:.3}, within model 2 {:.3}, between models {:.3}",
        report.within_1.mean, report.within_2.mean, report.between.mean
    );
    let mut m = report.manifest;
    step_manifest(&mut m, s, &source);
    finish_manifest(m, "correlate", started, &s.output)
}

pub fn align(a: AlignArgs) -> Result<(), Failure> {
    let s = &a.step;
    let source = s.data.source().map_err(Failure::Usage)?;
    let mut cfg = AlignmentConfig::new(step_config(s));
    cfg.lr_multiplier = a.lr_multiplier;
    cfg.lr = a.lr;
    cfg.method = a.method;
    cfg.angle_samples = a.angle_samples;
    let started = unix_now();
    let report = match s.precision {
        Precision::F32 => source
            .load::<f32>()
            .and_then(|(tr, te)| run_weight_adversarial_alignment(&cfg, &tr, &te)),
        Precision::F64 => source
            .load::<f64>()
            .and_then(|(tr, te)| run_weight_adversarial_alignment(&cfg, &tr, &te)),
    }?;
    write_text(&s.output.out, &alignment_table(&report).to_csv())?;
    println!(
        "mean angles: model 1 {:.3}, model 2 {:.3}",
        report.align_1.mean, report.align_2.mean
    );
    let mut m = report.manifest;
    step_manifest(&mut m, s, &source);
    finish_manifest(m, "align", started, &s.output)
}

pub fn geometry(a: GeometryArgs) -> Result<(), Failure> {
    let started = unix_now();
    let defaults = a.dims.is_empty() && a.markov.is_empty() && a.monte_carlo.is_none();
    let dims = if defaults {
        DEFAULT_DIMS.to_vec()
    } else {
        a.dims.clone()
    };
    let markov = if defaults {
        DEFAULT_MARKOV.to_vec()
    } else {
        a.markov.clone()
    };
    let mut sections = Vec::new();
    if !dims.is_empty() {
        sections.push(expected_angle_table(&dims)?.to_csv());
    }
    if !markov.is_empty() {
        sections.push(markov_table(&markov, a.dim)?.to_csv());
    }
    let mc_seed = mix_seed(a.seed_base, 1);
    if let Some(pairs) = a.monte_carlo {
        let stat = empirical_angle_stats(a.dim, pairs, mc_seed)?;
        sections.push(monte_carlo_table(a.dim, &stat).to_csv());
    }
    let text = sections.join("\n");
    write_text(&a.output.out, &text)?;
    print!("{text}");
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    let mut m = Manifest::new();
    m.set("tool_version", early_transfer::experiments::TOOL_VERSION);
    m.set("dims", join(&dims));
    m.set("markov", join(&markov));
    m.set("dim", a.dim);
    if let Some(pairs) = a.monte_carlo {
        m.set("monte_carlo_pairs", pairs);
        m.set("seed_base", a.seed_base);
        m.set("seed_monte_carlo", mc_seed);
    }
    finish_manifest(m, "geometry", started, &a.output)
}
