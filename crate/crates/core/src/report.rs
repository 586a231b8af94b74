//! Run artifacts: series CSV, key=value manifests, generic result tables and
//! a three-panel SVG chart. Every writer is deterministic in its input.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiments::{AlignmentReport, CorrelationReport, TickRecord};
use crate::geometry::{expected_angle, markov_angle_bound, AngleStat};

pub const SERIES_HEADER: &str =
    "tick,angle_mean_deg,angle_std_deg,degenerate_count,acc_model1,acc_model2";

/// Ordered `key=value` pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace. Keys may not contain `=` or line breaks; line breaks
    /// in values are escaped as `\n`.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        assert!(
            !key.contains(['=', '\n', '\r']) && !key.is_empty(),
            "invalid manifest key {key:?}"
        );
        let value = value
            .to_string()
            .replace('\\', "\\\\")
            .replace('\n', "\\n")
            .replace('\r', "\\r");
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| unescape(v))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn extend(&mut self, other: &Manifest) {
        for (k, v) in &other.entries {
            match self.entries.iter_mut().find(|(key, _)| key == k) {
                Some(slot) => slot.1 = v.clone(),
                None => self.entries.push((k.clone(), v.clone())),
            }
        }
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::new();
        let mut offset = 0u64;
        for line in text.split_inclusive('\n') {
            let body = line.trim_end_matches(['\n', '\r']);
            if !body.trim().is_empty() && !body.starts_with('#') {
                let (k, v) = body.split_once('=').ok_or_else(|| Error::Format {
                    offset,
                    message: format!("manifest line without '=': {body:?}"),
                })?;
                m.entries.push((k.to_string(), v.to_string()));
            }
            offset += line.len() as u64;
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_text())
    }
}

fn unescape(v: &str) -> String {
    let mut out = String::with_capacity(v.len());
    let mut chars = v.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('r') => out.push('\r'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Fixed six-decimal rendering; NaN for a missing value.
pub fn fmt_value(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "NaN".to_string(),
    }
}

pub fn series_row(r: &TickRecord) -> String {
    format!(
        "{},{},{},{},{},{}",
        r.tick,
        fmt_value(r.angle_mean),
        fmt_value(r.angle_std),
        r.degenerate,
        fmt_value(Some(r.acc1)),
        fmt_value(Some(r.acc2))
    )
}

pub fn series_csv(records: &[TickRecord]) -> String {
    let mut s = String::from(SERIES_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&series_row(r));
        s.push('\n');
    }
    s
}

pub fn parse_series_csv(text: &str) -> Result<Vec<TickRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(SERIES_HEADER) {
        return Err(Error::Format {
            offset: 0,
            message: "unexpected series header".into(),
        });
    }
    let mut offset = SERIES_HEADER.len() as u64 + 1;
    let mut out = Vec::new();
    for line in lines {
        let bad = |what: &str| Error::Format {
            offset,
            message: format!("bad {what} in row {line:?}"),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad("field count"));
        }
        let opt = |s: &str| -> Result<Option<f64>> {
            let v: f64 = s.parse().map_err(|_| bad("number"))?;
            Ok((!v.is_nan()).then_some(v))
        };
        out.push(TickRecord {
            tick: f[0].parse().map_err(|_| bad("tick"))?,
            angle_mean: opt(f[1])?,
            angle_std: opt(f[2])?,
            degenerate: f[3].parse().map_err(|_| bad("degenerate count"))?,
            acc1: f[4].parse().map_err(|_| bad("accuracy"))?,
            acc2: f[5].parse().map_err(|_| bad("accuracy"))?,
        });
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}

/// A named-column table rendered as CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(
            row.len(),
            self.header.len(),
            "row width differs from header"
        );
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// Expected angle per dimension (ℓ2).
pub fn expected_angle_table(dims: &[usize]) -> Result<Table> {
    let mut t = Table::new(&["dimension", "expected_angle_deg"]);
    for &n in dims {
        t.push(vec![
            n.to_string(),
            fmt_value(Some(expected_angle::<f64>(n, 2.0)?)),
        ]);
    }
    Ok(t)
}

/// Markov angle and probability bound per `t` in dimension `n`.
pub fn markov_table(ts: &[usize], n: usize) -> Result<Table> {
    let mut table = Table::new(&["t", "angle_deg", "probability_upper_bound"]);
    for &t in ts {
        let (angle, bound) = markov_angle_bound::<f64>(t, n)?;
        table.push(vec![
            t.to_string(),
            fmt_value(Some(angle)),
            bound.to_string(),
        ]);
    }
    Ok(table)
}

pub fn monte_carlo_table(n: usize, stat: &AngleStat) -> Table {
    let mut t = Table::new(&["dimension", "pairs", "mean_deg", "std_deg", "min_deg"]);
    t.push(vec![
        n.to_string(),
        stat.count.to_string(),
        fmt_value(Some(stat.mean)),
        fmt_value(Some(stat.std())),
        fmt_value(Some(stat.min)),
    ]);
    t
}

pub fn correlation_table(r: &CorrelationReport) -> Table {
    let mut t = Table::new(&[
        "angles_of_model_1",
        "angles_of_model_2",
        "angles_between_models",
    ]);
    t.push(
        [r.within_1.mean, r.within_2.mean, r.between.mean]
            .iter()
            .map(|&v| fmt_value(Some(v)))
            .collect(),
    );
    t
}

pub fn alignment_table(r: &AlignmentReport) -> Table {
    let mut t = Table::new(&[
        "adversarial_angles_of_model_1",
        "adversarial_angles_of_model_2",
    ]);
    t.push(
        [r.align_1.mean, r.align_2.mean]
            .iter()
            .map(|&v| fmt_value(Some(v)))
            .collect(),
    );
    t
}

const WIDTH: f64 = 640.0;
const PANEL_HEIGHT: f64 = 180.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const PANEL_GAP: f64 = 50.0;

struct Panel {
    title: &'static str,
    y_max: f64,
    y_ticks: [f64; 4],
    values: Vec<Option<f64>>,
}

/// Three stacked panels over the tick axis: folded angle (0-90°) and the
/// test accuracy of each model (0-1).
pub fn render_svg(records: &[TickRecord], title: &str) -> String {
    let panels = [
        Panel {
            title: "angle between adversarial directions (deg)",
            y_max: 90.0,
            y_ticks: [0.0, 30.0, 60.0, 90.0],
            values: records.iter().map(|r| r.angle_mean).collect(),
        },
        Panel {
            title: "test accuracy, model 1",
            y_max: 1.0,
            y_ticks: [0.0, 0.5, 0.75, 1.0],
            values: records.iter().map(|r| Some(r.acc1)).collect(),
        },
        Panel {
            title: "test accuracy, model 2",
            y_max: 1.0,
            y_ticks: [0.0, 0.5, 0.75, 1.0],
            values: records.iter().map(|r| Some(r.acc2)).collect(),
        },
    ];
    let height = MARGIN_TOP + 3.0 * (PANEL_HEIGHT + PANEL_GAP);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let max_tick = records.iter().map(|r| r.tick).max().unwrap_or(0).max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        xml_escape(title)
    );
    for (p, panel) in panels.iter().enumerate() {
        let top = MARGIN_TOP + p as f64 * (PANEL_HEIGHT + PANEL_GAP) + 15.0;
        let bottom = top + PANEL_HEIGHT;
        let x_of = |tick: f64| MARGIN_LEFT + plot_w * tick / max_tick;
        let y_of = |v: f64| bottom - PANEL_HEIGHT * v / panel.y_max;
        let _ = writeln!(s, r#"<g class="panel" id="panel{}">"#, p + 1);
        let _ = writeln!(
            s,
            r#"<text x="{MARGIN_LEFT}" y="{:.2}">{}</text>"#,
            top - 5.0,
            panel.title
        );
        let _ = writeln!(
            s,
            r#"<line x1="{MARGIN_LEFT}" y1="{bottom:.2}" x2="{:.2}" y2="{bottom:.2}" stroke="black"/>"#,
            MARGIN_LEFT + plot_w
        );
        let _ = writeln!(
            s,
            r#"<line x1="{MARGIN_LEFT}" y1="{top:.2}" x2="{MARGIN_LEFT}" y2="{bottom:.2}" stroke="black"/>"#
        );
        for &t in &panel.y_ticks {
            let y = y_of(t);
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{MARGIN_LEFT}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{t}</text>"#,
                MARGIN_LEFT - 4.0,
                MARGIN_LEFT - 6.0,
                y + 4.0
            );
        }
        for t in [0.0, max_tick / 2.0, max_tick] {
            let x = x_of(t);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{bottom:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                bottom + 4.0,
                bottom + 16.0,
                fmt_tick(t)
            );
        }
        let points: Vec<(f64, f64)> = records
            .iter()
            .zip(&panel.values)
            .filter_map(|(r, v)| v.map(|v| (x_of(r.tick as f64), y_of(v.clamp(0.0, panel.y_max)))))
            .collect();
        if points.len() > 1 {
            let path: Vec<String> = points
                .iter()
                .map(|(x, y)| format!("{x:.2},{y:.2}"))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
        }
        for (x, y) in &points {
            let _ = writeln!(
                s,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="steelblue"/>"#
            );
        }
        let _ = writeln!(s, "</g>");
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">tick</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        height - 8.0
    );
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(t: f64) -> String {
    if t.fract() == 0.0 {
        format!("{t:.0}")
    } else {
        format!("{t:.1}")
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn write_svg(path: &Path, records: &[TickRecord], title: &str) -> Result<()> {
    write_file(path, &render_svg(records, title))
}
