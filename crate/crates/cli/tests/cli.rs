use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_early-transfer");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("EARLY_TRANSFER_DATA_DIR")
        .output()
        .unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn read(p: &str) -> String {
    std::fs::read_to_string(p).unwrap()
}

const SMALL: [&str; 10] = [
    "--dataset",
    "synthetic",
    "--synthetic-train",
    "400",
    "--synthetic-test",
    "200",
    "--arch1",
    "fc_shallow",
    "--arch2",
    "fc_shallow",
];

fn small(cmd: &str, extra: &[&str]) -> Output {
    let mut args = vec![cmd];
    args.extend(SMALL);
    args.extend(extra);
    run(&args)
}

fn column(csv: &str, col: usize) -> Vec<f64> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn missing_out_is_usage_error() {
    for cmd in ["pair", "correlate", "align", "geometry", "longterm"] {
        assert_eq!(run(&[cmd]).status.code(), Some(2), "{cmd}");
    }
}

#[test]
fn unknown_arch_and_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "x.csv");
    assert_eq!(
        small("correlate", &["--arch1", "resnet", "--out", &out])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        small("align", &["--arch2", "fc:", "--out", &out])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        small("pair", &["--optimizer", "lbfgs", "--out", &out])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        small("pair", &["--classes", "cat,cat", "--out", &out])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["pair", "--out", &out]).status.code(),
        Some(2),
        "cifar without a data dir"
    );
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_cifar_files_are_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "x.csv");
    let o = run(&[
        "pair",
        "--data-dir",
        dir.path().to_str().unwrap(),
        "--out",
        &out,
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(Path::new(&path(dir.path(), "x.manifest")).exists());
}

#[test]
fn commands_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str]); 5] = [
        ("pair", &["--steps", "2", "--batch-size", "32"]),
        ("longterm", &["--epochs", "1", "--batch-size", "100"]),
        ("correlate", &[]),
        ("align", &[]),
        (
            "geometry",
            &[
                "--dims",
                "2,3072",
                "--markov",
                "1,10",
                "--monte-carlo",
                "5000",
            ],
        ),
    ];
    for (cmd, extra) in cases {
        let outputs: Vec<(String, String)> = (0..2)
            .map(|i| {
                let out = path(dir.path(), &format!("{cmd}{i}.csv"));
                let svg = path(dir.path(), &format!("{cmd}{i}.svg"));
                let mut args: Vec<&str> = extra.to_vec();
                args.extend(["--out", &out]);
                let status = if cmd == "geometry" {
                    let mut full = vec![cmd];
                    full.extend(args);
                    run(&full).status
                } else {
                    if matches!(cmd, "pair" | "longterm") {
                        args.extend(["--svg", &svg]);
                    }
                    small(cmd, &args).status
                };
                assert!(status.success(), "{cmd}");
                let svg_text = if Path::new(&svg).exists() {
                    read(&svg)
                } else {
                    String::new()
                };
                (read(&out), svg_text)
            })
            .collect();
        assert_eq!(outputs[0], outputs[1], "{cmd} output differs between runs");
    }
}

#[test]
fn pair_writes_series_manifest_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let (out, svg) = (path(dir.path(), "p.csv"), path(dir.path(), "p.svg"));
    let o = small(
        "pair",
        &[
            "--steps",
            "3",
            "--seed-base",
            "9",
            "--out",
            &out,
            "--svg",
            &svg,
        ],
    );
    assert!(o.status.success());
    let csv = read(&out);
    assert!(csv
        .starts_with("tick,angle_mean_deg,angle_std_deg,degenerate_count,acc_model1,acc_model2\n"));
    assert_eq!(csv.lines().count(), 5);
    let manifest = read(&path(dir.path(), "p.manifest"));
    for key in [
        "command=pair",
        "seed_base=9",
        "status=completed",
        "precision=f64",
        "lr=0.01",
        "steps=3",
    ] {
        assert!(manifest.lines().any(|l| l == key), "{key} missing");
    }
    assert!(read(&svg).starts_with("<svg"));
}

#[test]
fn zero_lr_keeps_null_angles() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "null.csv");
    assert!(small("pair", &["--lr", "0", "--steps", "3", "--out", &out])
        .status
        .success());
    let angles = column(&read(&out), 1);
    assert_eq!(angles.len(), 4);
    assert!(
        angles.iter().all(|a| (85.0..=90.0).contains(a)),
        "{angles:?}"
    );
}

#[test]
fn zero_epochs_records_tick_zero_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "lt.csv");
    assert!(small("longterm", &["--epochs", "0", "--out", &out])
        .status
        .success());
    assert_eq!(column(&read(&out), 0), vec![0.0]);
}

#[test]
fn divergence_exits_1_and_keeps_partial_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "d.csv");
    let o = small(
        "pair",
        &[
            "--optimizer",
            "sgd",
            "--lr",
            "1e300",
            "--steps",
            "5",
            "--out",
            &out,
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(column(&read(&out), 0), vec![0.0]);
    let manifest = read(&path(dir.path(), "d.manifest"));
    assert!(manifest.contains("status=diverged"));
}

#[test]
fn correlate_and_align_headers_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "c.csv");
    assert!(small("correlate", &["--out", &out]).status.success());
    let csv = read(&out);
    assert_eq!(
        csv.lines().next(),
        Some("angles_of_model_1,angles_of_model_2,angles_between_models")
    );
    assert!(read(&path(dir.path(), "c.manifest"))
        .lines()
        .any(|l| l == "batch_size=30"));

    let out = path(dir.path(), "a.csv");
    assert!(small("align", &["--out", &out]).status.success());
    assert_eq!(
        read(&out).lines().next(),
        Some("adversarial_angles_of_model_1,adversarial_angles_of_model_2")
    );
    assert!(read(&path(dir.path(), "a.manifest"))
        .lines()
        .any(|l| l == "batch_size=30"));
}

#[test]
fn geometry_tables_and_monte_carlo() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "g.csv");
    assert!(
        run(&["geometry", "--dims", "2,16,128,3072,196608", "--out", &out])
            .status
            .success()
    );
    let got = column(&read(&out), 1);
    for (g, want) in got.iter().zip([45.0, 75.52, 84.92, 88.96, 89.87]) {
        assert!((g - want).abs() <= 0.01, "{g} vs {want}");
    }

    assert!(run(&[
        "geometry",
        "--markov",
        "2,10,100,350,1000",
        "--dim",
        "3072",
        "--out",
        &out
    ])
    .status
    .success());
    let csv = read(&out);
    assert_eq!(
        csv.lines().next(),
        Some("t,angle_deg,probability_upper_bound")
    );
    for (g, want) in column(&csv, 1)
        .iter()
        .zip([88.53, 86.72, 79.60, 70.27, 55.21])
    {
        assert!((g - want).abs() <= 0.01, "{g} vs {want}");
    }

    assert!(run(&[
        "geometry",
        "--monte-carlo",
        "20000",
        "--dim",
        "3072",
        "--out",
        &out
    ])
    .status
    .success());
    let csv = read(&out);
    assert_eq!(
        csv.lines().next(),
        Some("dimension,pairs,mean_deg,std_deg,min_deg")
    );
    assert!(column(&csv, 4)[0] >= 84.5);
}

/// Two-class CIFAR-10 binary fixture: labels cycle 0..9, pixels vary by position.
fn write_fixture(dir: &Path, per_file: usize) {
    let files = [
        "data_batch_1.bin",
        "data_batch_2.bin",
        "data_batch_3.bin",
        "data_batch_4.bin",
        "data_batch_5.bin",
        "test_batch.bin",
    ];
    for (f, name) in files.iter().enumerate() {
        let mut bytes = Vec::with_capacity(per_file * 3073);
        for r in 0..per_file {
            bytes.push(((r + f) % 10) as u8);
            bytes.extend((0..3072).map(|p| ((f * 131 + r * 31 + p * 7) % 256) as u8));
        }
        std::fs::write(dir.join(name), bytes).unwrap();
    }
}

#[test]
fn cifar_fixture_runs_end_to_end() {
    let data = tempfile::tempdir().unwrap();
    write_fixture(data.path(), 60);
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "cifar.csv");
    let o = Command::new(BIN)
        .args([
            "pair",
            "--arch1",
            "fc_shallow",
            "--arch2",
            "fc_shallow",
            "--steps",
            "1",
            "--batch-size",
            "8",
        ])
        .args(["--angle-samples", "10", "--classes", "cat,5", "--out", &out])
        .env("EARLY_TRANSFER_DATA_DIR", data.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(&out).lines().count(), 3);
    let manifest = read(&path(dir.path(), "cifar.manifest"));
    assert!(manifest.lines().any(|l| l == "classes=3,5"));
    assert!(manifest.lines().any(|l| l == "train_samples=60"));
}
