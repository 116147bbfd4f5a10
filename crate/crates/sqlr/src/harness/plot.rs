//! Hand-rolled SVG emission for the report plots. Pure functions of the
//! bundle and raw series; nothing here feeds back into any computation.

use std::path::Path;

use super::{moving_average, HarnessError, ReportBundle, SecondRow};

const W: f64 = 800.0;
const H: f64 = 400.0;
const ML: f64 = 60.0;
const MR: f64 = 20.0;
const MT: f64 = 36.0;
const MB: f64 = 46.0;

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn of(series: &[&[(f64, f64)]]) -> Frame {
        let mut f = Frame {
            x_min: f64::MAX,
            x_max: f64::MIN,
            y_min: f64::MAX,
            y_max: f64::MIN,
        };
        for s in series {
            for &(x, y) in *s {
                f.x_min = f.x_min.min(x);
                f.x_max = f.x_max.max(x);
                f.y_min = f.y_min.min(y);
                f.y_max = f.y_max.max(y);
            }
        }
        if f.x_min > f.x_max {
            return Frame {
                x_min: 0.0,
                x_max: 1.0,
                y_min: 0.0,
                y_max: 1.0,
            };
        }
        if f.x_min == f.x_max {
            f.x_max = f.x_min + 1.0;
        }
        f.y_min = f.y_min.min(0.0);
        if f.y_min == f.y_max {
            f.y_max = f.y_min + 1.0;
        }
        f
    }

    fn px(&self, x: f64) -> f64 {
        ML + (x - self.x_min) / (self.x_max - self.x_min) * (W - ML - MR)
    }

    fn py(&self, y: f64) -> f64 {
        H - MB - (y - self.y_min) / (self.y_max - self.y_min) * (H - MT - MB)
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn fnum(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1000.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.4}")
    }
}

fn chart_scaffold(out: &mut String, title: &str, x_label: &str, y_label: &str, frame: &Frame) {
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    out.push_str(&format!(
        "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        W / 2.0,
        esc(title)
    ));
    let (x0, x1) = (ML, W - MR);
    let (y0, y1) = (H - MB, MT);
    out.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        (x0 + x1) / 2.0,
        H - 10.0,
        esc(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        esc(y_label)
    ));
    for i in 0..=4 {
        let xv = frame.x_min + (frame.x_max - frame.x_min) * i as f64 / 4.0;
        let yv = frame.y_min + (frame.y_max - frame.y_min) * i as f64 / 4.0;
        let xp = frame.px(xv);
        let yp = frame.py(yv);
        out.push_str(&format!(
            "<line x1=\"{xp}\" y1=\"{y0}\" x2=\"{xp}\" y2=\"{}\" stroke=\"black\"/>\n\
             <text x=\"{xp}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            y0 + 5.0,
            y0 + 18.0,
            fnum(xv)
        ));
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{yp}\" x2=\"{x0}\" y2=\"{yp}\" stroke=\"black\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            x0 - 5.0,
            x0 - 8.0,
            yp + 4.0,
            fnum(yv)
        ));
    }
}

fn polyline(out: &mut String, frame: &Frame, points: &[(f64, f64)], color: &str) {
    if points.is_empty() {
        return;
    }
    let coords: Vec<String> = points
        .iter()
        .map(|&(x, y)| format!("{:.1},{:.1}", frame.px(x), frame.py(y)))
        .collect();
    out.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        coords.join(" ")
    ));
}

fn legend(out: &mut String, entries: &[(&str, &str)]) {
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = MT + 14.0 * i as f64 + 4.0;
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{}\" y=\"{}\">{}</text>\n",
            W - MR - 150.0,
            W - MR - 126.0,
            W - MR - 120.0,
            y + 4.0,
            esc(label)
        ));
    }
}

/// One plotted series: legend label, stroke color, points.
pub type LineSeries<'a> = (&'a str, &'a str, Vec<(f64, f64)>);

pub fn line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[LineSeries],
) -> Result<(), HarnessError> {
    let views: Vec<&[(f64, f64)]> = series.iter().map(|(_, _, s)| s.as_slice()).collect();
    let frame = Frame::of(&views);
    let mut svg = String::new();
    chart_scaffold(&mut svg, title, x_label, y_label, &frame);
    for (_, color, points) in series {
        polyline(&mut svg, &frame, points, color);
    }
    if series.len() > 1 {
        let entries: Vec<(&str, &str)> = series.iter().map(|(l, c, _)| (*l, *c)).collect();
        legend(&mut svg, &entries);
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

/// Step plot of an empirical CDF.
fn cdf_points(points: &[super::CdfPoint], x_scale: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(points.len() * 2 + 1);
    let mut prev_cum = 0.0;
    for p in points {
        out.push((p.value * x_scale, prev_cum));
        out.push((p.value * x_scale, p.cum));
        prev_cum = p.cum;
    }
    out
}

fn heat_color(v: f64) -> String {
    // White through orange to dark red.
    let v = v.clamp(0.0, 1.0);
    let r = 255.0 - 75.0 * v;
    let g = 245.0 * (1.0 - v);
    let b = 235.0 * (1.0 - v).powi(2);
    format!("rgb({},{},{})", r as u8, g as u8, b as u8)
}

pub fn heatmap_chart(path: &Path, title: &str, bundle: &ReportBundle) -> Result<(), HarnessError> {
    let cells = &bundle.heatmap;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        W / 2.0,
        esc(title)
    ));
    if cells.is_empty() {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">no cell reached 30 responses</text>\n",
            W / 2.0,
            H / 2.0
        ));
        svg.push_str("</svg>\n");
        std::fs::write(path, svg)?;
        return Ok(());
    }
    let ks: Vec<u32> = {
        let mut v: Vec<u32> = cells.iter().map(|c| c.k).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let loads: Vec<u64> = {
        let mut v: Vec<u64> = cells.iter().map(|c| c.load_bin).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let cw = (W - ML - MR - 80.0) / ks.len() as f64;
    let ch = (H - MT - MB) / loads.len() as f64;
    for cell in cells {
        let xi = ks.iter().position(|&k| k == cell.k).unwrap();
        let yi = loads.iter().position(|&l| l == cell.load_bin).unwrap();
        let x = ML + xi as f64 * cw;
        let y = H - MB - (yi + 1) as f64 * ch;
        svg.push_str(&format!(
            "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cw:.1}\" height=\"{ch:.1}\" \
             fill=\"{}\" stroke=\"#ccc\"/>\n",
            heat_color(cell.frequency)
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"10\">{:.2}</text>\n",
            x + cw / 2.0,
            y + ch / 2.0 + 4.0,
            cell.frequency
        ));
    }
    for (xi, k) in ks.iter().enumerate() {
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{k}</text>\n",
            ML + (xi as f64 + 0.5) * cw,
            H - MB + 16.0
        ));
    }
    for (yi, load) in loads.iter().enumerate() {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{load}</text>\n",
            ML - 6.0,
            H - MB - (yi as f64 + 0.5) * ch + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">fleet size K</text>\n\
         <text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">offered load (req/min bin)</text>\n",
        ML + (W - ML - MR - 80.0) / 2.0,
        H - 10.0,
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\">cell = exceedance frequency</text>\n",
        W - MR - 170.0,
        MT + 10.0
    ));
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

/// Writes the full plot set for a run directory.
pub fn emit_plots(
    bundle: &ReportBundle,
    seconds: &[SecondRow],
    out: &Path,
) -> Result<(), HarnessError> {
    let rates: Vec<(f64, f64)> = bundle
        .blocking_bins
        .iter()
        .map(|b| (b.start_s as f64 / 60.0, b.rate))
        .collect();
    let raw: Vec<f64> = bundle.blocking_bins.iter().map(|b| b.rate).collect();
    let smooth: Vec<(f64, f64)> = moving_average(&raw, 30)
        .into_iter()
        .enumerate()
        .map(|(i, v)| (bundle.blocking_bins[i].start_s as f64 / 60.0, v))
        .collect();
    line_chart(
        &out.join("blocking.svg"),
        &format!("{}: blocking per 2-minute bin", bundle.scheme),
        "time (min)",
        "blocking rate",
        &[
            ("per bin", "#1f77b4", rates),
            ("30-bin trailing mean", "#d62728", smooth),
        ],
    )?;

    line_chart(
        &out.join("blocking_cdf.svg"),
        &format!("{}: CDF of per-bin blocking rates", bundle.scheme),
        "blocking rate",
        "fraction of bins",
        &[("", "#1f77b4", cdf_points(&bundle.blocking_cdf, 1.0))],
    )?;

    line_chart(
        &out.join("service_cdf.svg"),
        &format!("{}: CDF of per-iteration service time", bundle.scheme),
        "service time (µs per iteration)",
        "fraction of completions",
        &[("", "#1f77b4", cdf_points(&bundle.service_cdf, 1e6))],
    )?;

    let stride = (seconds.len() / 2000).max(1);
    let k_points: Vec<(f64, f64)> = seconds
        .iter()
        .step_by(stride)
        .map(|s| (s.t as f64 / 60.0, s.k as f64))
        .collect();
    line_chart(
        &out.join("vms.svg"),
        &format!("{}: provisioned VMs", bundle.scheme),
        "time (min)",
        "VM count",
        &[("", "#2ca02c", k_points)],
    )?;

    heatmap_chart(
        &out.join("heatmap.svg"),
        &format!("{}: soft-blocking frequency", bundle.scheme),
        bundle,
    )?;
    Ok(())
}
