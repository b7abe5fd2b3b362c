//! Learning-curve SVGs and a cross-run summary table from training logs.

use std::fmt::Write as _;

/// Loss columns of the training log, in log order.
pub const SERIES: [&str; 6] = ["seg1", "seg2", "adv1", "adv2", "d1", "d2"];

/// Rows averaged for the `final_*` summary entries.
pub const TAIL_ROWS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub step: u64,
    pub values: [Option<f64>; 6],
}

/// Parses a training log, reporting and skipping malformed rows.
pub fn parse_log(text: &str, origin: &str, warn: &mut dyn FnMut(String)) -> Vec<Row> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => {
            warn(format!("{origin}: unreadable header ({e}); no rows used"));
            return Vec::new();
        }
    };
    let column = |name: &str| header.iter().position(|h| h.trim() == name);
    let Some(step_col) = column("step") else {
        warn(format!("{origin}: header lacks a step column; no rows used"));
        return Vec::new();
    };
    let cols = SERIES.map(column);
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = match record {
            Ok(r) if r.len() == header.len() => r,
            Ok(r) => {
                warn(format!("{origin}:{line}: expected {} fields, found {}; row skipped", header.len(), r.len()));
                continue;
            }
            Err(e) => {
                warn(format!("{origin}:{line}: {e}; row skipped"));
                continue;
            }
        };
        let Ok(step) = record[step_col].trim().parse::<u64>() else {
            warn(format!("{origin}:{line}: bad step {:?}; row skipped", &record[step_col]));
            continue;
        };
        let mut values = [None; 6];
        let mut ok = true;
        for (slot, col) in values.iter_mut().zip(cols) {
            let Some(field) = col.map(|c| record[c].trim()) else { continue };
            if field.is_empty() {
                continue;
            }
            match field.parse::<f64>() {
                Ok(v) => *slot = Some(v),
                Err(_) => ok = false,
            }
        }
        if ok {
            rows.push(Row { step, values });
        } else {
            warn(format!("{origin}:{line}: non-numeric loss value; row skipped"));
        }
    }
    rows
}

/// Mean of each series over the last [`TAIL_ROWS`] rows that carry it.
pub fn tail_means(rows: &[Row]) -> [Option<f64>; 6] {
    std::array::from_fn(|k| {
        let vals: Vec<f64> = rows.iter().rev().filter_map(|r| r.values[k]).take(TAIL_ROWS).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const WIDTH: f64 = 720.0;
const PANEL: f64 = 180.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const GAP: f64 = 40.0;
const MAX_POINTS: usize = 800;
const COLORS: [&str; 2] = ["#1f77b4", "#d62728"];

/// Stacked segmentation, adversarial and discriminator loss panels.
/// `timestamp` (Unix seconds) is embedded as a comment when given.
pub fn render_svg(title: &str, rows: &[Row], timestamp: Option<u64>) -> String {
    let panels: Vec<(&str, [usize; 2])> = [("segmentation", [0, 1]), ("adversarial", [2, 3]), ("discriminator", [4, 5])]
        .into_iter()
        .filter(|(_, ks)| ks.iter().any(|&k| rows.iter().any(|r| r.values[k].is_some())))
        .collect();
    let height = TOP + panels.len().max(1) as f64 * (PANEL + GAP);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    if let Some(t) = timestamp {
        writeln!(svg, "<!-- generated at unix time {t} -->").expect("write to string");
    }
    writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>").expect("write to string");
    writeln!(svg, "<text x=\"{LEFT}\" y=\"22\" font-size=\"14\">{}</text>", escape(title)).expect("write to string");
    if panels.is_empty() {
        writeln!(svg, "<text x=\"{LEFT}\" y=\"{}\">no data</text>", TOP + 20.0).expect("write to string");
    }
    let (x0, x1) = match (rows.first(), rows.last()) {
        (Some(a), Some(b)) => (a.step as f64, (b.step as f64).max(a.step as f64 + 1.0)),
        _ => (0.0, 1.0),
    };
    let plot_w = WIDTH - LEFT - RIGHT;
    for (p, (name, ks)) in panels.iter().enumerate() {
        let top = TOP + p as f64 * (PANEL + GAP);
        let vals = ks.iter().flat_map(|&k| rows.iter().filter_map(move |r| r.values[k]));
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
        writeln!(
            svg,
            "<rect x=\"{LEFT}\" y=\"{top}\" width=\"{plot_w}\" height=\"{PANEL}\" fill=\"none\" stroke=\"#888\"/>"
        )
        .expect("write to string");
        writeln!(svg, "<text x=\"{LEFT}\" y=\"{}\">{name} loss</text>", top - 6.0).expect("write to string");
        for (v, y) in [(hi, top + 10.0), (lo, top + PANEL)] {
            writeln!(svg, "<text x=\"{}\" y=\"{y}\" text-anchor=\"end\">{v:.4}</text>", LEFT - 6.0).expect("write to string");
        }
        for (v, anchor, x) in [(x0, "start", LEFT), (x1, "end", LEFT + plot_w)] {
            writeln!(svg, "<text x=\"{x}\" y=\"{}\" text-anchor=\"{anchor}\">step {v}</text>", top + PANEL + 14.0)
                .expect("write to string");
        }
        for (level, &k) in ks.iter().enumerate() {
            let pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.values[k].map(|v| (r.step as f64, v))).collect();
            if pts.is_empty() {
                continue;
            }
            let stride = pts.len().div_ceil(MAX_POINTS);
            let coords: Vec<String> = pts
                .iter()
                .step_by(stride)
                .map(|&(s, v)| {
                    let x = LEFT + (s - x0) / (x1 - x0) * plot_w;
                    let y = top + PANEL - (v - lo) / (hi - lo) * PANEL;
                    format!("{x:.1},{y:.1}")
                })
                .collect();
            writeln!(
                svg,
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1\" points=\"{}\"/>",
                COLORS[level],
                coords.join(" ")
            )
            .expect("write to string");
            writeln!(
                svg,
                "<text x=\"{}\" y=\"{}\" fill=\"{}\" text-anchor=\"end\">{}</text>",
                LEFT + plot_w - 6.0,
                top + 14.0 + 14.0 * level as f64,
                COLORS[level],
                SERIES[k]
            )
            .expect("write to string");
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// One run in the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub label: String,
    pub rows: usize,
    pub miou: Option<f64>,
    pub tail: [Option<f64>; 6],
}

/// `metric,<run>...` table: mIoU, logged row count and tail-mean losses,
/// one column per run.
pub fn summary_csv(runs: &[RunSummary]) -> String {
    let fmt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    let mut out = String::from("metric");
    for r in runs {
        write!(out, ",{}", r.label).expect("write to string");
    }
    out.push_str("\nmiou");
    for r in runs {
        write!(out, ",{}", fmt(r.miou)).expect("write to string");
    }
    out.push_str("\nrows");
    for r in runs {
        write!(out, ",{}", r.rows).expect("write to string");
    }
    for (k, name) in SERIES.iter().enumerate() {
        write!(out, "\nfinal_{name}").expect("write to string");
        for r in runs {
            write!(out, ",{}", fmt(r.tail[k])).expect("write to string");
        }
    }
    out.push('\n');
    out
}

/// Makes labels unique by suffixing repeats with `#2`, `#3`, ...
pub fn unique_labels(labels: Vec<String>) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    labels
        .into_iter()
        .map(|l| {
            let n = seen.iter().filter(|s| **s == l).count();
            seen.push(l.clone());
            if n == 0 {
                l
            } else {
                format!("{l}#{}", n + 1)
            }
        })
        .collect()
}
