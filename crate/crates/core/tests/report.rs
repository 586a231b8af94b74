use early_transfer::experiments::TickRecord;
use early_transfer::report::{parse_series_csv, render_svg, series_csv, write_svg, Manifest};

const GOLDEN: &str = include_str!("fixtures/three_panel.svg");

fn small_series() -> Vec<TickRecord> {
    [
        (89.1, 0.5, 0.49),
        (41.25, 0.505, 0.5),
        (30.0, 0.52, 0.515),
        (35.5, 0.6, 0.58),
    ]
    .iter()
    .enumerate()
    .map(|(tick, &(a, acc1, acc2))| TickRecord {
        tick,
        angle_mean: Some(a),
        angle_std: Some(0.25),
        degenerate: tick % 2,
        acc1,
        acc2,
    })
    .collect()
}

#[test]
fn svg_matches_golden_file() {
    assert_eq!(render_svg(&small_series(), "fc_deep pair"), GOLDEN);
}

#[test]
fn svg_file_is_byte_identical_across_writes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.svg"), dir.path().join("b.svg"));
    write_svg(&a, &small_series(), "t").unwrap();
    write_svg(&b, &small_series(), "t").unwrap();
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn csv_and_manifest_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/run.manifest");
    let mut m = Manifest::new();
    m.set("command", "pair");
    m.set("seed_model1", 123u64);
    m.write(&path).unwrap();
    assert_eq!(
        Manifest::parse(&std::fs::read_to_string(&path).unwrap()).unwrap(),
        m
    );
    let csv = series_csv(&small_series());
    let back = parse_series_csv(&csv).unwrap();
    assert_eq!(back, small_series());
}
