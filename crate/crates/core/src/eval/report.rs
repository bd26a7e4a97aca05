//! CSV tables, JSON summaries and static SVG charts.

use std::fmt::Write;

use serde_json::json;

use super::metrics::MIN_FRAME_NORM;
use super::study::{AblationReport, EvalReport};

fn params_label(mu: &[f64]) -> String {
    mu.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

/// One row per (factor, parameter value, time index):
/// `factor,params,t_index,time,nrmse,count`.
pub fn nrmse_table(reports: &[EvalReport]) -> String {
    let mut out = String::from("factor,params,t_index,time,nrmse,count\n");
    for rep in reports {
        let mut groups: Vec<(&[f64], Vec<usize>)> = Vec::new();
        for (r, mu) in rep.params.iter().enumerate() {
            match groups.iter_mut().find(|(m, _)| *m == mu.as_slice()) {
                Some((_, v)) => v.push(r),
                None => groups.push((mu, vec![r])),
            }
        }
        for (mu, members) in groups {
            for (j, t) in rep.times.iter().enumerate() {
                let vals: Vec<f64> = members
                    .iter()
                    .filter_map(|&r| rep.nrmse.cells[r][j])
                    .collect();
                let m = if vals.is_empty() {
                    f64::NAN
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                };
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    rep.factor,
                    params_label(mu),
                    j + 1,
                    t,
                    m,
                    vals.len()
                );
            }
        }
    }
    out
}

/// Per-trajectory errors for box plots: `factor,params,trajectory,nrmse`.
pub fn box_table(reports: &[EvalReport]) -> String {
    let mut out = String::from("factor,params,trajectory,nrmse\n");
    for rep in reports {
        for (r, (e, mu)) in rep.nrmse.per_trajectory.iter().zip(&rep.params).enumerate() {
            let _ = writeln!(out, "{},{},{},{}", rep.factor, params_label(mu), r, e);
        }
    }
    out
}

pub fn summary(reports: &[EvalReport]) -> serde_json::Value {
    let rows: Vec<_> = reports
        .iter()
        .map(|r| {
            json!({
                "factor": r.factor,
                "dt": r.dts.first().copied(),
                "nrmse": r.nrmse.overall,
                "nrmse_at_training_times": r.at_training_times,
                "trajectories": r.params.len(),
                "excluded_frames": r.nrmse.excluded,
                "per_param": r.per_param_mean().into_iter()
                    .map(|(mu, m)| json!({"params": mu, "nrmse": m}))
                    .collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({ "min_frame_norm": MIN_FRAME_NORM, "reports": rows })
}

/// `axis,value,factor,t_index,time,nrmse` for every variant.
pub fn ablation_table(rep: &AblationReport) -> String {
    let mut out = String::from("axis,value,factor,t_index,time,nrmse\n");
    for v in &rep.variants {
        for r in &v.reports {
            for (j, (t, e)) in r.times.iter().zip(&r.nrmse.per_time).enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    rep.axis.name(),
                    v.value,
                    r.factor,
                    j + 1,
                    t,
                    e
                );
            }
        }
    }
    out
}

pub fn ablation_summary(rep: &AblationReport) -> serde_json::Value {
    json!({
        "axis": rep.axis.name(),
        "variants": rep.variants.iter().map(|v| json!({
            "value": v.value,
            "epochs": v.epochs,
            "best_epoch": v.best_epoch,
            "degradation": v.degradation(),
            "nrmse": v.reports.iter().map(|r| json!({"factor": r.factor, "nrmse": r.nrmse.overall}))
                .collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    })
}

/// A named polyline.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{:.3}", v)
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

/// Static line chart with linear axes and a legend.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 420.0);
    let (l, r, t, b) = (70.0, 150.0, 40.0, 50.0);
    let pts = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, 0.0f64, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y1) = (0.0, 1.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let (pw, ph) = (w - l - r, h - t - b);
    let sx = |x: f64| l + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| t + ph - (y - y0) / (y1 - y0) * ph;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        l + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{l}" y="{t}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(fx),
            t + ph + 16.0,
            tick_label(fx)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            l - 6.0,
            sy(fy) + 4.0,
            tick_label(fy)
        );
        let _ = writeln!(
            out,
            r##"<line x1="{l}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            l + pw,
            sy(fy),
            sy(fy)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        l + pw / 2.0,
        h - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        t + ph / 2.0,
        t + ph / 2.0,
        escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let ly = t + 14.0 + 18.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" x2="{:.1}" y1="{ly:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            w - r + 10.0,
            w - r + 30.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            w - r + 36.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// nRMSE against time, one curve per report.
pub fn nrmse_chart(title: &str, reports: &[EvalReport]) -> String {
    let series: Vec<Series> = reports
        .iter()
        .map(|r| Series {
            label: format!("dt/{}", r.factor),
            points: r.times.iter().copied().zip(r.nrmse.per_time.iter().copied()).collect(),
        })
        .collect();
    line_chart(title, "t", "nRMSE", &series)
}

/// nRMSE against time, one curve per (variant, factor).
pub fn ablation_chart(rep: &AblationReport) -> String {
    let series: Vec<Series> = rep
        .variants
        .iter()
        .flat_map(|v| {
            v.reports.iter().map(move |r| Series {
                label: format!("{}={} dt/{}", rep.axis.name(), v.value, r.factor),
                points: r.times.iter().copied().zip(r.nrmse.per_time.iter().copied()).collect(),
            })
        })
        .collect();
    line_chart(&format!("{} ablation", rep.axis.name()), "t", "nRMSE", &series)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_wellformed_svg() {
        let s = line_chart(
            "a <b>",
            "t",
            "e",
            &[Series {
                label: "x".into(),
                points: vec![(0.0, 1.0), (1.0, 0.5), (2.0, f64::NAN)],
            }],
        );
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("a &lt;b&gt;"));
        assert_eq!(s.matches("<polyline").count(), 1);
    }

    #[test]
    fn tick_labels() {
        assert_eq!(tick_label(0.5), "0.5");
        assert_eq!(tick_label(2.0), "2");
        assert_eq!(tick_label(0.001), "1.0e-3");
    }
}
