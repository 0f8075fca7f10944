use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{ProjectError, ProjectionPoint};
use crate::corpus::Label;

pub const ANOMALY_COLOR: &str = "#d62728";
pub const NORMAL_COLOR: &str = "#1f77b4";
pub const UNLABELED_COLOR: &str = "#7f7f7f";

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScatterFormat {
    Csv,
    Svg,
}

impl FromStr for ScatterFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ScatterFormat::Csv),
            "svg" => Ok(ScatterFormat::Svg),
            other => Err(format!("unknown scatter format {other:?} (expected csv or svg)")),
        }
    }
}

fn color(label: Label) -> &'static str {
    match label {
        Label::Anomaly => ANOMALY_COLOR,
        Label::Normal => NORMAL_COLOR,
        Label::Unlabeled => UNLABELED_COLOR,
    }
}

pub fn scatter_csv(points: &[ProjectionPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "x", "y", "label"]).unwrap();
    for p in points {
        w.write_record([p.doc_id.as_str(), &p.x.to_string(), &p.y.to_string(), p.label.as_str()])
            .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

pub fn kl_trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("iteration,kl\n");
    for (i, v) in trace.iter().enumerate() {
        writeln!(out, "{i},{v}").unwrap();
    }
    out
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Scatter plot with axes, extent ticks and a legend. Normal points are
/// drawn first so anomalies stay visible on top.
pub fn scatter_svg(points: &[ProjectionPoint], title: &str) -> String {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let (sx, sy) = ((WIDTH - 2.0 * MARGIN) / span(x0, x1), (HEIGHT - 2.0 * MARGIN) / span(y0, y1));
    let px = |x: f64| MARGIN + (x - x0) * sx;
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) * sy;

    let mut out = String::new();
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    )
    .unwrap();
    writeln!(out, "<title>{}</title>", escape_xml(title)).unwrap();
    writeln!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>").unwrap();
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    writeln!(
        out,
        "<g stroke=\"black\" stroke-width=\"1\"><line x1=\"{left}\" y1=\"{bottom}\" x2=\"{right}\" y2=\"{bottom}\"/><line x1=\"{left}\" y1=\"{bottom}\" x2=\"{left}\" y2=\"{top}\"/></g>"
    )
    .unwrap();
    writeln!(
        out,
        "<g font-family=\"sans-serif\" font-size=\"11\"><text x=\"{left}\" y=\"{}\">{x0:.2}</text><text x=\"{right}\" y=\"{}\" text-anchor=\"end\">{x1:.2}</text><text x=\"{}\" y=\"{bottom}\" text-anchor=\"end\">{y0:.2}</text><text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y1:.2}</text><text x=\"{}\" y=\"{}\" text-anchor=\"middle\">t-SNE 1</text><text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">t-SNE 2</text></g>",
        bottom + 15.0,
        bottom + 15.0,
        left - 5.0,
        left - 5.0,
        top + 10.0,
        WIDTH / 2.0,
        HEIGHT - 10.0,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
    )
    .unwrap();

    for pass in [Label::Unlabeled, Label::Normal, Label::Anomaly] {
        writeln!(out, "<g class=\"{}\" fill=\"{}\" fill-opacity=\"0.8\">", pass.as_str(), color(pass)).unwrap();
        for p in points.iter().filter(|p| p.label == pass) {
            writeln!(
                out,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\"><title>{}</title></circle>",
                px(p.x),
                py(p.y),
                escape_xml(&p.doc_id)
            )
            .unwrap();
        }
        out.push_str("</g>\n");
    }

    out.push_str("<g class=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n");
    for (i, label) in [Label::Normal, Label::Anomaly].into_iter().enumerate() {
        let y = MARGIN / 2.0 + 16.0 * i as f64;
        writeln!(
            out,
            "<circle cx=\"{}\" cy=\"{y}\" r=\"5\" fill=\"{}\"/><text x=\"{}\" y=\"{}\">{}</text>",
            right - 80.0,
            color(label),
            right - 70.0,
            y + 4.0,
            label.as_str()
        )
        .unwrap();
    }
    out.push_str("</g>\n</svg>\n");
    out
}

pub fn emit_scatter(points: &[ProjectionPoint], path: &Path, format: ScatterFormat) -> Result<(), ProjectError> {
    if points.is_empty() {
        return Err(ProjectError::EmptyPoints);
    }
    let text = match format {
        ScatterFormat::Csv => scatter_csv(points),
        ScatterFormat::Svg => scatter_svg(points, "Request embeddings (t-SNE)"),
    };
    std::fs::write(path, text).map_err(|source| ProjectError::Io {
        path: path.display().to_string(),
        source,
    })
}
