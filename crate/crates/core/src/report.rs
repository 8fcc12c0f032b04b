//! SVG charts for the metrics log: the recall/epsilon frontier and the
//! epsilon heatmap.
//!
//! Both files carry their data in `data-*` attributes, formatted exactly as
//! in the metrics CSV, so tests can read coordinates back from the markup.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::experiment::MetricsRow;
use crate::{Error, Result};

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 220.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Rows sharing a stage and clipping norm.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierSeries {
    pub stage: String,
    pub clip: f64,
    pub rows: Vec<MetricsRow>,
    /// `(sigma, mean epsilon, mean recall)` per sigma, sorted by epsilon.
    pub vertices: Vec<(f64, f64, f64)>,
}

fn plottable(r: &MetricsRow) -> bool {
    !r.is_error() && r.epsilon.is_finite() && r.recall.is_finite()
}

/// Groups rows into series in order of first appearance. Error rows and
/// rows with unbounded epsilon are left out.
pub fn frontier_series(rows: &[MetricsRow]) -> Result<Vec<FrontierSeries>> {
    let mut series: Vec<FrontierSeries> = Vec::new();
    for r in rows.iter().filter(|r| plottable(r)) {
        match series
            .iter_mut()
            .find(|s| s.stage == r.stage && s.clip == r.clip)
        {
            Some(s) => s.rows.push(r.clone()),
            None => series.push(FrontierSeries {
                stage: r.stage.clone(),
                clip: r.clip,
                rows: vec![r.clone()],
                vertices: Vec::new(),
            }),
        }
    }
    let mut distinct: Vec<String> = series
        .iter()
        .flat_map(|s| s.rows.iter().map(|r| fmt6(r.epsilon)))
        .collect();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Data(format!(
            "a frontier needs at least 2 distinct finite epsilon values, found {}",
            distinct.len()
        )));
    }
    for s in &mut series {
        let mut by_sigma: Vec<(f64, f64, f64, usize)> = Vec::new();
        for r in &s.rows {
            match by_sigma.iter_mut().find(|v| v.0 == r.sigma) {
                Some(v) => {
                    v.1 += r.epsilon;
                    v.2 += r.recall;
                    v.3 += 1;
                }
                None => by_sigma.push((r.sigma, r.epsilon, r.recall, 1)),
            }
        }
        s.vertices = by_sigma
            .into_iter()
            .map(|(sigma, e, rc, n)| (sigma, e / n as f64, rc / n as f64))
            .collect();
        s.vertices.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
    }
    Ok(series)
}

struct Axis {
    log: bool,
    lo: f64,
    hi: f64,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>) -> Self {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        let log = min > 0.0;
        let (a, b) = if log { (min.log10(), max.log10()) } else { (min, max) };
        let pad = if b > a { 0.05 * (b - a) } else { 0.5 };
        Axis {
            log,
            lo: a - pad,
            hi: b + pad,
        }
    }

    fn unit(&self, v: f64) -> f64 {
        let t = if self.log { v.log10() } else { v };
        (t - self.lo) / (self.hi - self.lo)
    }

    fn tick_value(&self, i: usize, n: usize) -> f64 {
        let t = self.lo + (self.hi - self.lo) * i as f64 / (n - 1) as f64;
        if self.log {
            10f64.powf(t)
        } else {
            t
        }
    }
}

fn px(axis: &Axis, eps: f64) -> f64 {
    LEFT + axis.unit(eps) * (WIDTH - LEFT - RIGHT)
}

fn py(recall: f64) -> f64 {
    HEIGHT - BOTTOM - recall * (HEIGHT - TOP - BOTTOM)
}

/// Recall against epsilon, one colored series per (stage, clip). Markers
/// are individual rows; the polyline joins per-sigma means.
pub fn frontier_svg(rows: &[MetricsRow]) -> Result<String> {
    let series = frontier_series(rows)?;
    let axis = Axis::new(series.iter().flat_map(|s| s.rows.iter().map(|r| r.epsilon)));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" font-size="15" text-anchor="middle">Recall against privacy budget</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0
    );

    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, py(0.0), py(1.0));
    let _ = writeln!(
        s,
        r#"<g class="axes" stroke="black" fill="none"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"#
    );
    for i in 0..5 {
        let v = axis.tick_value(i, 5);
        let x = px(&axis, v);
        let _ = writeln!(
            s,
            r#"<g class="xtick"><line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text></g>"#,
            y0 + 5.0,
            y0 + 18.0,
            format_tick(v)
        );
        let r = i as f64 / 4.0;
        let y = py(r);
        let _ = writeln!(
            s,
            r#"<g class="ytick"><line x1="{:.2}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{r:.2}</text></g>"#,
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0
        );
    }
    let scale = if axis.log { " (log scale)" } else { "" };
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epsilon{scale}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(18 {:.2}) rotate(-90)" text-anchor="middle">recall</text>"#,
        (y0 + y1) / 2.0
    );

    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let name = format!("{} C={}", ser.stage, fmt6(ser.clip));
        let _ = writeln!(
            s,
            r#"<g class="series" data-stage="{}" data-clip="{}" data-name="{}">"#,
            escape(&ser.stage),
            fmt6(ser.clip),
            escape(&name)
        );
        let data_points: Vec<String> = ser
            .vertices
            .iter()
            .map(|&(_, e, r)| format!("{},{}", fmt6(e), fmt6(r)))
            .collect();
        let points: Vec<String> = ser
            .vertices
            .iter()
            .map(|&(_, e, r)| format!("{:.2},{:.2}", px(&axis, e), py(r)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}" data-points="{}"/>"#,
            points.join(" "),
            data_points.join(" ")
        );
        for &(sigma, e, r) in &ser.vertices {
            let _ = writeln!(
                s,
                r#"<text class="sigma-label" x="{:.2}" y="{:.2}" fill="{color}" font-size="10">σ={sigma}</text>"#,
                px(&axis, e) + 5.0,
                py(r) - 5.0
            );
        }
        for r in &ser.rows {
            let _ = writeln!(
                s,
                r#"<circle class="marker" cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}" data-epsilon="{}" data-recall="{}" data-sigma="{}" data-seed="{}" data-mu="{}"><title>σ={} seed={} ε={} recall={}</title></circle>"#,
                px(&axis, r.epsilon),
                py(r.recall),
                fmt6(r.epsilon),
                fmt6(r.recall),
                fmt6(r.sigma),
                r.seed,
                fmt6(r.mu),
                r.sigma,
                r.seed,
                fmt6(r.epsilon),
                fmt6(r.recall)
            );
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text></g>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&name)
        );
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn format_tick(v: f64) -> String {
    if v >= 100.0 {
        format!("{v:.0}")
    } else if v >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

pub fn emit_frontier(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &frontier_svg(rows)?)
}

/// Mean epsilon per (sigma, clip) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonGrid {
    /// Ascending.
    pub sigmas: Vec<f64>,
    /// Ascending.
    pub clips: Vec<f64>,
    /// `cells[i][j]` belongs to `sigmas[i]`, `clips[j]`.
    pub cells: Vec<Vec<f64>>,
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

pub fn epsilon_grid(rows: &[MetricsRow]) -> Result<EpsilonGrid> {
    let ok: Vec<&MetricsRow> = rows.iter().filter(|r| !r.is_error()).collect();
    if ok.is_empty() {
        return Err(Error::Data("no successful rows to draw a heatmap from".into()));
    }
    let sigmas = sorted_unique(ok.iter().map(|r| r.sigma).collect());
    let clips = sorted_unique(ok.iter().map(|r| r.clip).collect());
    let mut sums: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for r in &ok {
        let i = sigmas.iter().position(|&s| s == r.sigma).unwrap_or_default();
        let j = clips.iter().position(|&c| c == r.clip).unwrap_or_default();
        let e = sums.entry((i, j)).or_insert((0.0, 0));
        e.0 += r.epsilon;
        e.1 += 1;
    }
    let mut cells = vec![vec![0.0; clips.len()]; sigmas.len()];
    for (i, row) in cells.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let (sum, n) = sums.get(&(i, j)).ok_or_else(|| {
                Error::Data(format!(
                    "ragged grid: no rows for sigma {} and clip {}",
                    sigmas[i], clips[j]
                ))
            })?;
            *cell = sum / *n as f64;
        }
    }
    Ok(EpsilonGrid {
        sigmas,
        clips,
        cells,
    })
}

fn heat_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        lerp(255.0, 189.0),
        lerp(247.0, 0.0),
        lerp(188.0, 38.0)
    )
}

/// Note printed under the heatmap.
pub const HEATMAP_NOTE: &str =
    "epsilon depends on sigma, the sampling rate and the step count only, so every clipping norm in a row shares one value";

pub fn epsilon_heatmap_svg(rows: &[MetricsRow]) -> Result<String> {
    let grid = epsilon_grid(rows)?;
    let finite: Vec<f64> = grid
        .cells
        .iter()
        .flatten()
        .copied()
        .filter(|e| e.is_finite())
        .collect();
    let min = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shade = |e: f64| -> f64 {
        if !e.is_finite() {
            1.0
        } else if max <= min {
            0.5
        } else if min > 0.0 {
            (e.ln() - min.ln()) / (max.ln() - min.ln())
        } else {
            (e - min) / (max - min)
        }
    };

    let (cw, ch) = (110.0, 50.0);
    let (left, top) = (90.0, 60.0);
    let width = left + cw * grid.clips.len() as f64 + 40.0;
    let height = top + ch * grid.sigmas.len() as f64 + 90.0;
    let width = width.max(560.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="24" font-size="15">Privacy budget by noise multiplier and clipping norm</text>"#
    );
    for (j, c) in grid.clips.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text class="clip-label" x="{:.2}" y="{:.2}" text-anchor="middle">C={c}</text>"#,
            left + cw * (j as f64 + 0.5),
            top - 8.0
        );
    }
    for (i, sigma) in grid.sigmas.iter().enumerate() {
        let y = top + ch * i as f64;
        let _ = writeln!(
            s,
            r#"<text class="sigma-label" x="{:.2}" y="{:.2}" text-anchor="end">σ={sigma}</text>"#,
            left - 8.0,
            y + ch / 2.0 + 4.0
        );
        for (j, clip) in grid.clips.iter().enumerate() {
            let e = grid.cells[i][j];
            let t = shade(e);
            let x = left + cw * j as f64;
            let text_color = if t > 0.6 { "white" } else { "black" };
            let label = if e.is_finite() { format!("{e:.2}") } else { "inf".into() };
            let _ = writeln!(
                s,
                r#"<g class="cell" data-sigma="{}" data-clip="{}" data-epsilon="{}"><rect x="{x:.2}" y="{y:.2}" width="{cw}" height="{ch}" fill="{}" stroke="white"/><text x="{:.2}" y="{:.2}" text-anchor="middle" fill="{text_color}">{label}</text></g>"#,
                fmt6(*sigma),
                fmt6(*clip),
                fmt6(e),
                heat_color(t),
                x + cw / 2.0,
                y + ch / 2.0 + 4.0
            );
        }
    }
    let note_y = top + ch * grid.sigmas.len() as f64 + 30.0;
    let _ = writeln!(
        s,
        r#"<text class="note" x="10" y="{note_y:.2}" font-size="11">{HEATMAP_NOTE}</text>"#
    );
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_epsilon_heatmap(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &epsilon_heatmap_svg(rows)?)
}
