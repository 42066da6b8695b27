//! Deterministic SVG renderings of scan, separation and tail CSVs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::output::DIGEST_PREFIX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    /// Normalized divergence scan against `ε` (log-x).
    Scan,
    /// Tube disc envelopes in the plane.
    Separation,
    /// Empirical lower tail with Wilson intervals.
    Tail,
}

impl PlotKind {
    fn columns(self) -> &'static [&'static str] {
        match self {
            PlotKind::Scan => &["epsilon", "normalized_sharp", "normalized_bound"],
            PlotKind::Separation => &["n", "j", "s", "x", "y", "radius"],
            PlotKind::Tail => &["threshold", "fraction", "wilson_low", "wilson_high"],
        }
    }
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const PAD: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Columns required by `kind`, row-major.
fn read_table(text: &str, kind: PlotKind) -> CliResult<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| CliError::schema(format!("csv header: {e}")))?.clone();
    let idx = kind
        .columns()
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == *c)
                .ok_or_else(|| CliError::schema(format!("{kind:?} plot needs column `{c}`")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::schema(format!("csv: {e}")))?;
        let row = idx
            .iter()
            .map(|&i| {
                rec.get(i)
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| CliError::schema(format!("non-numeric value in column {}", headers.get(i).unwrap_or("?"))))
            })
            .collect::<CliResult<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::schema("csv has no data rows"));
    }
    Ok(rows)
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    w: f64,
    h: f64,
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        Self {
            x: widen(x),
            y: widen(y),
            w: W - 2.0 * PAD,
            h: H - 2.0 * PAD,
        }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x.0) / (self.x.1 - self.x.0) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y.0) / (self.y.1 - self.y.0) * self.h
    }
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn header(svg: &mut String, digest: Option<&str>, title: &str) {
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    if let Some(d) = digest {
        let _ = writeln!(svg, "<!-- config_sha256={d} -->");
    }
    let _ = writeln!(svg, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"30\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{title}</text>",
        W / 2.0
    );
}

fn axes(svg: &mut String, f: &Frame, xlabel: &str, ylabel: &str, xticks: &[(f64, String)], yticks: &[(f64, String)]) {
    let _ = writeln!(
        svg,
        "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"black\"/>",
        f.w, f.h
    );
    for (v, label) in xticks {
        let x = f.px(*v);
        let _ = writeln!(
            svg,
            "<text x=\"{x:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{label}</text>",
            H - PAD + 16.0
        );
    }
    for (v, label) in yticks {
        let y = f.py(*v);
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{y:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{label}</text>",
            PAD - 6.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{xlabel}</text>",
        W / 2.0,
        H - 18.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{ylabel}</text>",
        H / 2.0,
        H / 2.0
    );
}

fn linear_ticks((lo, hi): (f64, f64)) -> Vec<(f64, String)> {
    (0..=4)
        .map(|k| {
            let v = lo + (hi - lo) * k as f64 / 4.0;
            (v, format!("{v:.3e}"))
        })
        .collect()
}

fn polyline(svg: &mut String, pts: &[(f64, f64)], color: &str) {
    let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(svg, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>", path.join(" "));
}

fn scan_svg(rows: &[Vec<f64>], digest: Option<&str>) -> CliResult<String> {
    if rows.iter().any(|r| !(r[0] > 0.0)) {
        return Err(CliError::schema("scan plot needs positive epsilon"));
    }
    let lx: Vec<f64> = rows.iter().map(|r| r[0].log10()).collect();
    let y = range(rows.iter().flat_map(|r| [r[1], r[2]]));
    let f = Frame::new(range(lx.iter().copied()), (0.0f64.min(y.0), y.1 * 1.05));
    let mut svg = String::new();
    header(&mut svg, digest, "value / (log 1/ε)² against ε");
    let xt: Vec<(f64, String)> = (f.x.0.floor() as i32..=f.x.1.ceil() as i32)
        .map(|k| k as f64)
        .filter(|&k| k >= f.x.0 - 1e-9 && k <= f.x.1 + 1e-9)
        .map(|k| (k, format!("1e{k}")))
        .collect();
    axes(&mut svg, &f, "ε (log scale)", "normalized value", &xt, &linear_ticks(f.y));
    for (col, color, label) in [(1, PALETTE[0], "normalized_sharp"), (2, PALETTE[1], "normalized_bound")] {
        let pts: Vec<(f64, f64)> = rows.iter().zip(&lx).map(|(r, &x)| (f.px(x), f.py(r[col]))).collect();
        let _ = writeln!(svg, "<g class=\"series\" data-column=\"{label}\">");
        polyline(&mut svg, &pts, color);
        for (x, y) in &pts {
            let _ = writeln!(svg, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"{color}\"/>");
        }
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn separation_svg(rows: &[Vec<f64>], digest: Option<&str>) -> CliResult<String> {
    // Group rows by tube, keeping first-appearance order.
    let mut tubes: Vec<((usize, usize), Vec<&Vec<f64>>)> = Vec::new();
    for r in rows {
        let id = (r[0] as usize, r[1] as usize);
        match tubes.iter_mut().find(|(k, _)| *k == id) {
            Some((_, v)) => v.push(r),
            None => tubes.push((id, vec![r])),
        }
    }
    let x = range(rows.iter().flat_map(|r| [r[3] - r[5], r[3] + r[5]]));
    let y = range(rows.iter().flat_map(|r| [r[4] - r[5], r[4] + r[5]]));
    // Equal aspect ratio around the data.
    let half = 0.5 * (x.1 - x.0).max((y.1 - y.0) * W / H).max(1e-12) * 1.02;
    let cx = 0.5 * (x.0 + x.1);
    let cy = 0.5 * (y.0 + y.1);
    let hy = half * (H - 2.0 * PAD) / (W - 2.0 * PAD);
    let f = Frame::new((cx - half, cx + half), (cy - hy, cy + hy));
    let mut svg = String::new();
    header(&mut svg, digest, "tube disc envelopes");
    axes(&mut svg, &f, "x₁", "x₂", &linear_ticks(f.x), &linear_ticks(f.y));
    let scale = f.w / (f.x.1 - f.x.0);
    for ((n, j), pts) in &tubes {
        let color = PALETTE[j % PALETTE.len()];
        let _ = writeln!(svg, "<g class=\"tube\" data-n=\"{n}\" data-j=\"{j}\">");
        for r in pts {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.3}\" fill=\"{color}\" fill-opacity=\"0.05\" stroke=\"{color}\" stroke-opacity=\"0.3\" stroke-width=\"0.5\"/>",
                f.px(r[3]),
                f.py(r[4]),
                r[5] * scale
            );
        }
        let centers: Vec<(f64, f64)> = pts.iter().map(|r| (f.px(r[3]), f.py(r[4]))).collect();
        polyline(&mut svg, &centers, color);
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn tail_svg(rows: &[Vec<f64>], digest: Option<&str>) -> CliResult<String> {
    let f = Frame::new(range(rows.iter().map(|r| r[0])), (0.0, 1.0));
    let mut svg = String::new();
    header(&mut svg, digest, "P(log Z ≤ −x)");
    axes(&mut svg, &f, "threshold x", "fraction", &linear_ticks(f.x), &linear_ticks(f.y));
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (f.px(r[0]), f.py(r[1]))).collect();
    polyline(&mut svg, &pts, PALETTE[0]);
    for (r, (x, y)) in rows.iter().zip(&pts) {
        let _ = writeln!(
            svg,
            "<line class=\"wilson\" x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"{}\"/>",
            f.py(r[2]),
            f.py(r[3]),
            PALETTE[1]
        );
        let _ = writeln!(svg, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"{}\"/>", PALETTE[0]);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Renders the CSV text as an SVG document.
pub fn render(text: &str, kind: PlotKind) -> CliResult<String> {
    let digest = text.lines().next().and_then(|l| l.strip_prefix(DIGEST_PREFIX));
    let rows = read_table(text, kind)?;
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::schema("csv contains non-finite values"));
    }
    match kind {
        PlotKind::Scan => scan_svg(&rows, digest),
        PlotKind::Separation => separation_svg(&rows, digest),
        PlotKind::Tail => tail_svg(&rows, digest),
    }
}
