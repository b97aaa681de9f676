//! Learning-curve export: a self-contained SVG with success rate and
//! time-to-collision versus finetune step, one series per strategy with
//! mean ± range over seeds, plus a plain-text summary table of final values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::metrics::{read_metrics, MetricsRow};
use super::HarnessError;

/// Fixed, order-independent palette: the i-th strategy (sorted by name)
/// always gets the same color.
const PALETTE: [&str; 6] = ["#1f6fb2", "#d1495b", "#3a9234", "#8c5bb2", "#c87a1e", "#4b4b4b"];

const PANEL_W: f64 = 640.0;
const PANEL_H: f64 = 240.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_V: f64 = 36.0;

/// Per-step aggregate of one metric over seeds.
struct Band {
    steps: Vec<usize>,
    mean: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

fn aggregate(rows: &[&MetricsRow], metric: impl Fn(&MetricsRow) -> f64) -> Band {
    let mut by_step: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by_step.entry(r.step).or_default().push(metric(r));
    }
    let mut band = Band { steps: Vec::new(), mean: Vec::new(), lo: Vec::new(), hi: Vec::new() };
    for (step, vs) in by_step {
        band.steps.push(step);
        band.mean.push(vs.iter().sum::<f64>() / vs.len() as f64);
        band.lo.push(vs.iter().cloned().fold(f64::INFINITY, f64::min));
        band.hi.push(vs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    band
}

struct Scale {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    top: f64,
}

impl Scale {
    fn x(&self, v: f64) -> f64 {
        if self.x1 == self.x0 {
            return MARGIN_L + PANEL_W / 2.0;
        }
        MARGIN_L + (v - self.x0) / (self.x1 - self.x0) * PANEL_W
    }

    fn y(&self, v: f64) -> f64 {
        if self.y1 == self.y0 {
            return self.top + PANEL_H / 2.0;
        }
        self.top + PANEL_H - (v - self.y0) / (self.y1 - self.y0) * PANEL_H
    }
}

fn panel(
    svg: &mut String,
    title: &str,
    top: f64,
    series: &BTreeMap<String, Band>,
) {
    let x0 = 0.0;
    let x1 = series
        .values()
        .flat_map(|b| b.steps.last().copied())
        .max()
        .unwrap_or(0) as f64;
    let mut y0 = f64::INFINITY;
    let mut y1 = f64::NEG_INFINITY;
    for b in series.values() {
        for v in b.lo.iter().chain(b.hi.iter()) {
            y0 = y0.min(*v);
            y1 = y1.max(*v);
        }
    }
    if y0 > y1 {
        y0 = 0.0;
        y1 = 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let s = Scale { x0, x1: x1.max(1.0), y0, y1, top };

    let _ = writeln!(
        svg,
        "<rect x=\"{MARGIN_L}\" y=\"{top}\" width=\"{PANEL_W}\" height=\"{PANEL_H}\" \
         fill=\"none\" stroke=\"#999\"/>"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"14\">{}</text>",
        MARGIN_L,
        top - 10.0,
        title
    );
    // axis extremes
    for (v, label_y) in [(y0, top + PANEL_H), (y1, top + 12.0)] {
        let _ = writeln!(
            svg,
            "<text x=\"4\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\">{:.3}</text>",
            label_y, v
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\">step {}</text>",
        MARGIN_L + PANEL_W - 60.0,
        top + PANEL_H + 16.0,
        x1 as usize
    );

    for (i, (name, band)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if band.steps.is_empty() {
            continue;
        }
        // range band: upper envelope forward, lower envelope back
        let mut poly = String::new();
        for (st, v) in band.steps.iter().zip(&band.hi) {
            let _ = write!(poly, "{:.2},{:.2} ", s.x(*st as f64), s.y(*v));
        }
        for (st, v) in band.steps.iter().rev().zip(band.lo.iter().rev()) {
            let _ = write!(poly, "{:.2},{:.2} ", s.x(*st as f64), s.y(*v));
        }
        let _ = writeln!(
            svg,
            "<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.15\" stroke=\"none\"/>",
            poly.trim_end(),
            color
        );
        let mut line = String::new();
        for (st, v) in band.steps.iter().zip(&band.mean) {
            let _ = write!(line, "{:.2},{:.2} ", s.x(*st as f64), s.y(*v));
        }
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" \
             data-strategy=\"{}\" data-final=\"{}\"/>",
            line.trim_end(),
            color,
            name,
            band.mean.last().expect("non-empty band")
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"12\" \
             fill=\"{}\">{}</text>",
            MARGIN_L + PANEL_W + 8.0,
            top + 16.0 + 16.0 * i as f64,
            color,
            name
        );
    }
}

/// Render the figure and the summary table from one or more metrics CSVs.
/// Output is deterministic: identical inputs give byte-identical files.
pub fn export_curves(
    csv_paths: &[std::path::PathBuf],
    fig_path: &Path,
    table_path: &Path,
) -> Result<(), HarnessError> {
    let mut rows: Vec<MetricsRow> = Vec::new();
    for p in csv_paths {
        rows.extend(read_metrics(p)?);
    }
    if rows.is_empty() {
        return Err(HarnessError::EmptyMetrics);
    }

    let mut by_strategy: BTreeMap<String, Vec<&MetricsRow>> = BTreeMap::new();
    for r in &rows {
        by_strategy.entry(r.strategy.clone()).or_default().push(r);
    }
    let sr_series: BTreeMap<String, Band> = by_strategy
        .iter()
        .map(|(k, v)| (k.clone(), aggregate(v, |r| r.sr)))
        .collect();
    let ttc_series: BTreeMap<String, Band> = by_strategy
        .iter()
        .map(|(k, v)| (k.clone(), aggregate(v, |r| r.ttc)))
        .collect();

    let width = MARGIN_L + PANEL_W + MARGIN_R;
    let height = 2.0 * (PANEL_H + 2.0 * MARGIN_V);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>");
    panel(&mut svg, "success rate vs finetune step", MARGIN_V, &sr_series);
    panel(
        &mut svg,
        "mean time-to-collision vs finetune step",
        PANEL_H + 3.0 * MARGIN_V,
        &ttc_series,
    );
    let _ = writeln!(svg, "</svg>");
    std::fs::write(fig_path, svg)?;

    let mut table = String::new();
    let _ = writeln!(table, "{:<14} {:>14} {:>14}", "strategy", "TTC (final)", "SR (final)");
    for name in by_strategy.keys() {
        let sr = &sr_series[name];
        let ttc = &ttc_series[name];
        let fmt = |b: &Band| {
            let m = *b.mean.last().expect("non-empty");
            let lo = *b.lo.last().expect("non-empty");
            let hi = *b.hi.last().expect("non-empty");
            format!("{:.3}±{:.3}", m, ((m - lo).abs()).max((hi - m).abs()))
        };
        let _ = writeln!(table, "{:<14} {:>14} {:>14}", name, fmt(ttc), fmt(sr));
    }
    std::fs::write(table_path, table)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::MetricsWriter;

    fn write_csv(name: &str, strategy: &str, seed: u64, srs: &[f64]) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("adawm-curves-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        let mut w = MetricsWriter::create(&path).unwrap();
        for (step, sr) in srs.iter().enumerate() {
            w.write_row(&MetricsRow {
                step,
                strategy: strategy.into(),
                seed,
                e_dyn: 0.1,
                e_pi: 0.05,
                decision: "model".into(),
                ttc: 2.0 + *sr,
                sr: *sr,
                wall_ms: 0,
            })
            .unwrap();
        }
        path
    }

    fn out_paths(tag: &str) -> (std::path::PathBuf, std::path::PathBuf) {
        let dir = std::env::temp_dir().join("adawm-curves-test");
        (dir.join(format!("{tag}.svg")), dir.join(format!("{tag}.txt")))
    }

    #[test]
    fn single_seed_single_strategy_gives_one_polyline_per_metric() {
        let csv = write_csv("single.csv", "adawm", 0, &[0.0, 0.5, 1.0]);
        let (fig, tab) = out_paths("single");
        export_curves(&[csv], &fig, &tab).unwrap();
        let svg = std::fs::read_to_string(&fig).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("data-strategy=\"adawm\""));
    }

    #[test]
    fn output_is_deterministic() {
        let csv = write_csv("det.csv", "adawm", 0, &[0.25, 0.75]);
        let (fig_a, tab_a) = out_paths("det-a");
        let (fig_b, tab_b) = out_paths("det-b");
        export_curves(&[csv.clone()], &fig_a, &tab_a).unwrap();
        export_curves(&[csv], &fig_b, &tab_b).unwrap();
        assert_eq!(std::fs::read(&fig_a).unwrap(), std::fs::read(&fig_b).unwrap());
        assert_eq!(std::fs::read(&tab_a).unwrap(), std::fs::read(&tab_b).unwrap());
    }

    #[test]
    fn plotted_endpoints_match_the_final_csv_rows() {
        let a = write_csv("end-a.csv", "adawm", 0, &[0.2, 0.4]);
        let b = write_csv("end-b.csv", "adawm", 1, &[0.4, 0.8]);
        let (fig, tab) = out_paths("end");
        export_curves(&[a, b], &fig, &tab).unwrap();
        let svg = std::fs::read_to_string(&fig).unwrap();
        // the SR panel's polyline carries the final mean as an attribute
        let marker = "data-strategy=\"adawm\" data-final=\"";
        let start = svg.find(marker).unwrap() + marker.len();
        let end = start + svg[start..].find('"').unwrap();
        let final_sr: f64 = svg[start..end].parse().unwrap();
        assert!((final_sr - 0.6).abs() < 1e-12, "endpoint {final_sr} != mean of 0.4 and 0.8");
        let table = std::fs::read_to_string(&tab).unwrap();
        assert!(table.contains("0.600±0.200"), "table was: {table}");
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let dir = std::env::temp_dir().join("adawm-curves-test");
        std::fs::create_dir_all(&dir).unwrap();
        let empty = dir.join("empty.csv");
        std::fs::write(&empty, format!("{}\n", super::super::METRICS_HEADER)).unwrap();
        let (fig, tab) = out_paths("empty");
        assert!(matches!(
            export_curves(&[empty], &fig, &tab),
            Err(HarnessError::EmptyMetrics)
        ));
        assert!(matches!(
            export_curves(&[], &fig, &tab),
            Err(HarnessError::EmptyMetrics)
        ));
    }
}
