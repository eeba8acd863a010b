//! Report serialization: CSV (round-trippable, with metadata comment
//! lines) and a log-scale SVG line plot, one series per error column.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{EvalReport, EvalRow};
use crate::tasks::FunctionClass;

const CSV_BASE_HEADER: &str = "context_len,model_mse,ls_mse,knn_mse,mean_mse";
const CSV_GD_HEADER: &str = ",gd_mlp_mse,gd_cnn_mse,gd_vit_mse";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x}"))
}

pub fn report_to_csv(report: &EvalReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("# experiment={}\n", report.experiment));
    s.push_str(&format!("# class={}\n", report.class.name()));
    s.push_str(&format!("# n_tasks={}\n", report.n_tasks));
    s.push_str(&format!("# seed={}\n", report.seed));
    s.push_str(&format!("# config_digest={}\n", report.config_digest));
    s.push_str(&format!("# d={}\n", report.d));
    let gd = report.has_gd_columns();
    s.push_str(CSV_BASE_HEADER);
    if gd {
        s.push_str(CSV_GD_HEADER);
    }
    s.push('\n');
    for r in &report.rows {
        s.push_str(&format!(
            "{},{},{},{},{}",
            r.context_len,
            fmt_opt(r.model_mse),
            r.ls_mse,
            r.knn_mse,
            r.mean_mse
        ));
        if gd {
            s.push_str(&format!(
                ",{},{},{}",
                fmt_opt(r.gd_mlp_mse),
                fmt_opt(r.gd_cnn_mse),
                fmt_opt(r.gd_vit_mse)
            ));
        }
        s.push('\n');
    }
    s
}

pub fn write_csv(report: &EvalReport, path: &Path) -> Result<()> {
    fs::write(path, report_to_csv(report))?;
    Ok(())
}

pub fn report_from_csv(text: &str) -> Result<EvalReport> {
    let mut experiment = "none".to_string();
    let mut class = FunctionClass::Linear;
    let mut n_tasks = 0usize;
    let mut seed = 0u64;
    let mut config_digest = 0u64;
    let mut d = 0usize;
    let mut header_seen = false;
    let mut gd = false;
    let mut rows = Vec::new();

    let parse_opt = |field: &str, what: &str| -> Result<Option<f64>> {
        if field.is_empty() {
            Ok(None)
        } else {
            field
                .parse::<f64>()
                .map(Some)
                .map_err(|_| Error::Format(format!("bad {what} value '{field}'")))
        }
    };

    for raw in text.lines() {
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            if let Some((k, v)) = meta.trim().split_once('=') {
                match k.trim() {
                    "experiment" => experiment = v.trim().to_string(),
                    "class" => {
                        class = FunctionClass::parse(v.trim()).ok_or_else(|| {
                            Error::Format(format!("unknown function class '{}'", v.trim()))
                        })?
                    }
                    "n_tasks" => n_tasks = v.trim().parse().unwrap_or(0),
                    "seed" => seed = v.trim().parse().unwrap_or(0),
                    "config_digest" => config_digest = v.trim().parse().unwrap_or(0),
                    "d" => d = v.trim().parse().unwrap_or(0),
                    _ => {}
                }
            }
            continue;
        }
        if !header_seen {
            if !line.starts_with(CSV_BASE_HEADER) {
                return Err(Error::Format(format!(
                    "unexpected CSV header '{line}' (want '{CSV_BASE_HEADER}[{CSV_GD_HEADER}]')"
                )));
            }
            gd = line.contains("gd_mlp_mse");
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let expected = if gd { 8 } else { 5 };
        if fields.len() != expected {
            return Err(Error::Format(format!(
                "row '{line}' has {} fields, expected {expected}",
                fields.len()
            )));
        }
        let context_len: usize = fields[0]
            .parse()
            .map_err(|_| Error::Format(format!("bad context_len '{}'", fields[0])))?;
        let req = |field: &str, what: &str| -> Result<f64> {
            field
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("bad {what} value '{field}'")))
        };
        rows.push(EvalRow {
            context_len,
            model_mse: parse_opt(fields[1], "model_mse")?,
            ls_mse: req(fields[2], "ls_mse")?,
            knn_mse: req(fields[3], "knn_mse")?,
            mean_mse: req(fields[4], "mean_mse")?,
            gd_mlp_mse: if gd { parse_opt(fields[5], "gd_mlp_mse")? } else { None },
            gd_cnn_mse: if gd { parse_opt(fields[6], "gd_cnn_mse")? } else { None },
            gd_vit_mse: if gd { parse_opt(fields[7], "gd_vit_mse")? } else { None },
        });
    }
    if !header_seen {
        return Err(Error::Format("CSV has no header row".into()));
    }
    Ok(EvalReport { experiment, class, n_tasks, seed, config_digest, d, rows })
}

pub fn read_csv(path: &Path) -> Result<EvalReport> {
    report_from_csv(&fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// SVG
// ---------------------------------------------------------------------------

const PLOT_W: f64 = 800.0;
const PLOT_H: f64 = 500.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 160.0;
const MARGIN_T: f64 = 50.0;
const MARGIN_B: f64 = 60.0;
/// Floor for the log scale so exact-zero errors stay plottable.
const LOG_FLOOR: f64 = 1e-12;

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    points: Vec<(usize, f64)>,
}

/// Render squared error vs. context length on a log y scale, one polyline
/// per available column.
pub fn render_svg(report: &EvalReport, path: &Path) -> Result<()> {
    fs::write(path, render_svg_string(report))?;
    Ok(())
}

pub fn render_svg_string(report: &EvalReport) -> String {
    let mut series: Vec<Series> = Vec::new();
    let collect = |f: &dyn Fn(&EvalRow) -> Option<f64>| -> Vec<(usize, f64)> {
        report
            .rows
            .iter()
            .filter_map(|r| f(r).map(|v| (r.context_len, v.max(LOG_FLOOR))))
            .collect()
    };
    let model = collect(&|r: &EvalRow| r.model_mse);
    if !model.is_empty() {
        series.push(Series { label: "model", color: "#1f77b4", points: model });
    }
    series.push(Series { label: "least_squares", color: "#d62728", points: collect(&|r| Some(r.ls_mse)) });
    series.push(Series { label: "3nn", color: "#2ca02c", points: collect(&|r| Some(r.knn_mse)) });
    series.push(Series { label: "mean", color: "#7f7f7f", points: collect(&|r| Some(r.mean_mse)) });
    for (label, color, f) in [
        ("gd_mlp", "#9467bd", &(|r: &EvalRow| r.gd_mlp_mse) as &dyn Fn(&EvalRow) -> Option<f64>),
        ("gd_cnn", "#8c564b", &|r: &EvalRow| r.gd_cnn_mse),
        ("gd_vit", "#e377c2", &|r: &EvalRow| r.gd_vit_mse),
    ] {
        let pts = collect(f);
        if !pts.is_empty() {
            series.push(Series { label, color, points: pts });
        }
    }

    let x_max = report.rows.last().map_or(1, |r| r.context_len).max(2);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in &series {
        for &(_, v) in &s.points {
            lo = lo.min(v.log10());
            hi = hi.max(v.log10());
        }
    }
    let lo = lo.floor();
    let hi = (hi.ceil()).max(lo + 1.0);

    let x_px = |m: usize| MARGIN_L + (m as f64 - 1.0) / (x_max as f64 - 1.0) * (PLOT_W - MARGIN_L - MARGIN_R);
    let y_px = |v: f64| {
        let t = (v.log10() - lo) / (hi - lo);
        PLOT_H - MARGIN_B - t * (PLOT_H - MARGIN_T - MARGIN_B)
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" viewBox=\"0 0 {PLOT_W} {PLOT_H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"28\" font-family=\"sans-serif\" font-size=\"16\">{} / {} targets, {} tasks, squared error vs. context length</text>\n",
        MARGIN_L, report.experiment, report.class.name(), report.n_tasks
    ));

    // y grid: one line per decade
    let mut dec = lo;
    while dec <= hi + 1e-9 {
        let y = y_px(10f64.powf(dec));
        svg.push_str(&format!(
            "<line x1=\"{MARGIN_L}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#dddddd\"/>\n",
            PLOT_W - MARGIN_R
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">1e{}</text>\n",
            MARGIN_L - 6.0,
            y + 4.0,
            dec as i64
        ));
        dec += 1.0;
    }
    // x ticks at integer context lengths (thinned)
    let stride = (x_max / 10).max(1);
    let mut m = 1;
    while m <= x_max {
        let x = x_px(m);
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#bbbbbb\"/>\n",
            PLOT_H - MARGIN_B,
            PLOT_H - MARGIN_B + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{m}</text>\n",
            PLOT_H - MARGIN_B + 18.0
        ));
        m += stride;
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">in-context examples</text>\n",
        (MARGIN_L + PLOT_W - MARGIN_R) / 2.0,
        PLOT_H - 14.0
    ));

    // axes
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        PLOT_H - MARGIN_B
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        PLOT_H - MARGIN_B,
        PLOT_W - MARGIN_R,
        PLOT_H - MARGIN_B
    ));

    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(m, v)| format!("{:.1},{:.1}", x_px(m), y_px(v)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            s.color,
            pts.join(" ")
        ));
        // legend row
        let ly = MARGIN_T + 16.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            PLOT_W - MARGIN_R + 10.0,
            PLOT_W - MARGIN_R + 34.0,
            s.color
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            PLOT_W - MARGIN_R + 40.0,
            ly + 4.0,
            s.label
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
