//! Self-contained SVG charts drawn from the metrics rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use fairstep_core::metrics::band;

use crate::formats::write_atomic;
use crate::harness::MetricsRow;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 200.0, 40.0, 50.0); // left, right, top, bottom
const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

pub struct Series {
    pub label: String,
    /// `(x, mean, lower, upper)`.
    pub points: Vec<(f64, f64, f64, f64)>,
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for v in it.filter(|v| v.is_finite()) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        Self {
            x: span(&mut xs.clone()),
            y: span(&mut ys.clone()),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN.0 + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - MARGIN.0 - MARGIN.1)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN.3 - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - MARGIN.2 - MARGIN.3)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        (WIDTH - MARGIN.1 + MARGIN.0) / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str, xtick: &dyn Fn(f64) -> String) {
    let (x0, x1) = (MARGIN.0, WIDTH - MARGIN.1);
    let (y0, y1) = (HEIGHT - MARGIN.3, MARGIN.2);
    let _ = writeln!(out, "<path d=\"M{x0},{y1} L{x0},{y0} L{x1},{y0}\" stroke=\"black\" fill=\"none\"/>");
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let xv = f.x.0 + t * (f.x.1 - f.x.0);
        let yv = f.y.0 + t * (f.y.1 - f.y.0);
        let (px, py) = (f.px(xv), f.py(yv));
        let _ = writeln!(
            out,
            "<line x1=\"{px:.1}\" y1=\"{y0}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"black\"/><text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            y0 + 5.0,
            y0 + 18.0,
            escape(&xtick(xv))
        );
        let _ = writeln!(
            out,
            "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{x0}\" y2=\"{py:.1}\" stroke=\"black\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.3}</text>",
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0,
            yv
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        "<text transform=\"translate(18,{:.1}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn legend(out: &mut String, labels: &[String]) {
    for (i, l) in labels.iter().enumerate() {
        let y = MARGIN.2 + 10.0 + 18.0 * i as f64;
        let x = WIDTH - MARGIN.1 + 15.0;
        let _ = writeln!(
            out,
            "<rect x=\"{x}\" y=\"{:.1}\" width=\"12\" height=\"12\" fill=\"{}\"/><text x=\"{}\" y=\"{y:.1}\" dy=\"4\">{}</text>",
            y - 6.0,
            PALETTE[i % PALETTE.len()],
            x + 18.0,
            escape(l)
        );
    }
}

/// Line chart with shaded bands, x on a log2 axis of episodes.
pub fn line_chart(title: &str, ylabel: &str, series: &[Series]) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.points.iter().flat_map(|p| [p.1, p.2, p.3]));
    let f = Frame::new(xs.clone(), ys.clone());
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, "episode k", ylabel, &|x| format!("2^{x:.1}"));
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<_> = s.points.iter().filter(|p| p.1.is_finite()).collect();
        if pts.is_empty() {
            continue;
        }
        if pts.iter().all(|p| p.2.is_finite() && p.3.is_finite()) && pts.len() > 1 {
            let mut d = String::new();
            for (j, p) in pts.iter().enumerate() {
                let _ = write!(d, "{}{:.2},{:.2} ", if j == 0 { "M" } else { "L" }, f.px(p.0), f.py(p.3));
            }
            for p in pts.iter().rev() {
                let _ = write!(d, "L{:.2},{:.2} ", f.px(p.0), f.py(p.2));
            }
            let _ = writeln!(out, "<path d=\"{d}Z\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>");
        }
        let mut d = String::new();
        for (j, p) in pts.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if j == 0 { "M" } else { "L" }, f.px(p.0), f.py(p.1));
        }
        let _ = writeln!(out, "<path d=\"{d}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>");
    }
    legend(&mut out, &series.iter().map(|s| s.label.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Scatter of `(violation, return)` points, one per labelled method.
pub fn pareto_chart(title: &str, points: &[(String, f64, f64)]) -> String {
    let f = Frame::new(points.iter().map(|p| p.1), points.iter().map(|p| p.2));
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, "step-average violation", "episodic return", &|x| format!("{x:.3}"));
    for (i, (_, x, y)) in points.iter().enumerate() {
        if x.is_finite() && y.is_finite() {
            let _ = writeln!(
                out,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"5\" fill=\"{}\"/>",
                f.px(*x),
                f.py(*y),
                PALETTE[i % PALETTE.len()]
            );
        }
    }
    legend(&mut out, &points.iter().map(|p| p.0.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

type Key = (String, u64);

fn method_key(r: &MetricsRow) -> Key {
    (r.method.clone(), r.lambda.to_bits())
}

fn label(key: &Key) -> String {
    let lambda = f64::from_bits(key.1);
    if key.0.starts_with("penalty") {
        format!("{} (lambda={lambda})", key.0)
    } else {
        key.0.clone()
    }
}

/// Per-method series of `metric` across checkpoints, in first-seen order.
pub fn collect_series(rows: &[MetricsRow], metric: fn(&MetricsRow) -> f64) -> Vec<Series> {
    let mut order: Vec<Key> = Vec::new();
    let mut values: BTreeMap<Key, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        let key = method_key(r);
        if !order.contains(&key) {
            order.push(key.clone());
        }
        values.entry(key).or_default().entry(r.episode_k).or_default().push(metric(r));
    }
    order
        .iter()
        .map(|key| {
            let points = values[key]
                .iter()
                .map(|(k, v)| {
                    let x = (*k as f64).log2();
                    match band(v) {
                        Ok(b) => (x, b.mean, b.lower, b.upper),
                        Err(_) => {
                            let m = v.iter().sum::<f64>() / v.len() as f64;
                            (x, m, f64::NAN, f64::NAN)
                        }
                    }
                })
                .collect();
            Series {
                label: label(key),
                points,
            }
        })
        .collect()
}

/// Training-dynamics charts plus Pareto scatters at the last checkpoint.
pub fn render(rows: &[MetricsRow]) -> Vec<(&'static str, String)> {
    let metrics: [(&str, &str, &str, fn(&MetricsRow) -> f64); 5] = [
        ("regret.svg", "Reward regret", "regret", |r| r.regret),
        ("return.svg", "Episodic return", "return", |r| r.episodic_return),
        ("dp_violation.svg", "Demographic-parity violation", "violation", |r| r.dp_violation),
        ("eqopt_violation.svg", "Equal-opportunity violation", "violation", |r| r.eqopt_violation),
        ("cumulative_regret.svg", "Cumulative regret", "regret", |r| r.cumulative_regret),
    ];
    let mut out: Vec<(&'static str, String)> = metrics
        .iter()
        .map(|(file, title, y, f)| (*file, line_chart(title, y, &collect_series(rows, *f))))
        .collect();
    let last = rows.iter().map(|r| r.episode_k).max().unwrap_or(0);
    let final_rows: Vec<MetricsRow> = rows.iter().filter(|r| r.episode_k == last).cloned().collect();
    let ret = collect_series(&final_rows, |r| r.episodic_return);
    for (file, title, f) in [
        ("pareto_dp.svg", "Return vs demographic-parity violation", (|r| r.dp_violation) as fn(&MetricsRow) -> f64),
        ("pareto_eqopt.svg", "Return vs equal-opportunity violation", |r| r.eqopt_violation),
    ] {
        let viol = collect_series(&final_rows, f);
        let points: Vec<(String, f64, f64)> = ret
            .iter()
            .zip(&viol)
            .map(|(r, v)| (r.label.clone(), v.points[0].1, r.points[0].1))
            .collect();
        out.push((file, pareto_chart(title, &points)));
    }
    out
}

pub fn write_plots(rows: &[MetricsRow], dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    for (name, svg) in render(rows) {
        let path = dir.join(name);
        write_atomic(&path, svg.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
