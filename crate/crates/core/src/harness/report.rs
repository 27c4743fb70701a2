//! Plain-text tables, CSV and SVG curves for study results.

use super::studies::{Aggregate, AuxTable, LgTable, QualityTable, SweepResult};
use crate::grounding::xml_escape;

/// Column-aligned table; the first row is the header.
pub fn text_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s:<w$}", w = widths[c]))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1)));
            out.push('\n');
        }
    }
    out
}

pub fn csv(rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    for r in rows {
        let cells: Vec<String> = r
            .iter()
            .map(|c| {
                if c.contains([',', '"', '\n']) {
                    format!("\"{}\"", c.replace('"', "\"\""))
                } else {
                    c.clone()
                }
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn opt_pct(x: Option<f64>) -> String {
    x.map(pct).unwrap_or_else(|| "-".into())
}

fn aggregate_cells(a: &Aggregate) -> Vec<String> {
    vec![
        pct(a.accuracy),
        pct(a.accuracy_std),
        opt_pct(a.binary_accuracy),
        opt_pct(a.open_accuracy),
        format!("{:.2}", a.mean_objects),
    ]
}

const AGG_HEADER: [&str; 5] = ["accuracy", "std", "binary", "open", "objects"];

pub fn quality_rows(t: &QualityTable) -> Vec<Vec<String>> {
    let mut rows = vec![std::iter::once("mode").chain(AGG_HEADER).map(String::from).collect()];
    for r in &t.rows {
        let mut row = vec![r.name.clone()];
        row.extend(aggregate_cells(r));
        rows.push(row);
    }
    rows
}

pub fn sweep_rows(s: &SweepResult) -> Vec<Vec<String>> {
    let mut rows = vec![["k", "accuracy", "std", "objects"].map(String::from).to_vec()];
    for p in &s.points {
        rows.push(vec![
            p.k.to_string(),
            pct(p.mean),
            pct(p.std),
            format!("{:.2}", p.mean_objects),
        ]);
    }
    rows
}

pub fn aux_rows(t: &AuxTable) -> Vec<Vec<String>> {
    let mut rows = vec![["seed", "without", "with", "delta", "auc", "same_order"].map(String::from).to_vec()];
    for p in &t.pairs {
        rows.push(vec![
            p.seed.to_string(),
            pct(p.without),
            pct(p.with),
            pct(p.delta),
            p.auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into()),
            p.same_order.to_string(),
        ]);
    }
    rows.push(vec![
        "mean".into(),
        pct(t.without.accuracy),
        pct(t.with.accuracy),
        pct(t.mean_delta),
        t.mean_auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into()),
        t.pairs.iter().all(|p| p.same_order).to_string(),
    ]);
    rows
}

pub fn lg_rows(t: &LgTable) -> Vec<Vec<String>> {
    let mut rows = vec![std::iter::once("arm")
        .chain(["source"])
        .chain(AGG_HEADER)
        .chain(["necessary_recall", "answer_recall"])
        .map(String::from)
        .collect::<Vec<_>>()];
    for a in &t.arms {
        let mut row = vec![a.arm.clone(), a.source.clone()];
        row.extend(aggregate_cells(&a.result));
        row.push(format!("{:.4}", a.recall.necessary_recall));
        row.push(format!("{:.4}", a.recall.answer_recall));
        rows.push(row);
    }
    rows
}

/// Mean curve with a ±std band over a logarithmic-free linear k axis.
pub fn sweep_svg(s: &SweepResult) -> String {
    let (w, h, m) = (480.0, 320.0, 50.0);
    let kmax = s.points.iter().map(|p| p.k).max().unwrap_or(1) as f64;
    let kmin = s.points.iter().map(|p| p.k).min().unwrap_or(0) as f64;
    let lo = s.points.iter().map(|p| p.mean - p.std).fold(f64::INFINITY, f64::min).max(0.0);
    let hi = s.points.iter().map(|p| p.mean + p.std).fold(f64::NEG_INFINITY, f64::max).min(1.0);
    let (lo, hi) = if hi - lo < 1e-9 { (lo - 0.05, hi + 0.05) } else { (lo, hi) };
    let x = |k: f64| m + (w - 2.0 * m) * if kmax > kmin { (k - kmin) / (kmax - kmin) } else { 0.5 };
    let y = |a: f64| h - m - (h - 2.0 * m) * (a - lo) / (hi - lo);
    let mut band: Vec<String> = s.points.iter().map(|p| format!("{:.2},{:.2}", x(p.k as f64), y(p.mean + p.std))).collect();
    band.extend(s.points.iter().rev().map(|p| format!("{:.2},{:.2}", x(p.k as f64), y(p.mean - p.std))));
    let line: Vec<String> = s.points.iter().map(|p| format!("{:.2},{:.2}", x(p.k as f64), y(p.mean))).collect();
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <polygon points=\"{}\" fill=\"#9ecae1\" fill-opacity=\"0.5\"/>\n\
         <polyline points=\"{}\" fill=\"none\" stroke=\"#08519c\" stroke-width=\"2\"/>\n",
        band.join(" "),
        line.join(" ")
    );
    for p in &s.points {
        out.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#08519c\"/>\n<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            x(p.k as f64),
            y(p.mean),
            x(p.k as f64),
            h - m + 16.0,
            p.k
        ));
    }
    for (v, label) in [(lo, pct(lo)), (hi, pct(hi))] {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            m - 6.0,
            y(v) + 4.0,
            xml_escape(&label)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">objects per question (k)</text>\n\
         <text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">accuracy (%)</text>\n</svg>\n",
        w / 2.0,
        h - 10.0,
        h / 2.0,
        h / 2.0
    ));
    out
}
