//! Minimal standalone SVG 1.1 line charts.
//!
//! Output depends only on the input values: coordinates are printed with a
//! fixed number of decimals and series keep their given order.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::OutputError;
use crate::tables::write_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Current against voltage.
    IvLoop,
    /// Occupation probabilities against time, one series per state.
    ProbabilityTraces,
    /// Occupied state against time, drawn as a step function.
    StateTimeline,
    /// `|I|` on a logarithmic axis against voltage.
    LogIv,
}

impl PlotKind {
    fn axis_labels(self) -> (&'static str, &'static str) {
        match self {
            PlotKind::IvLoop => ("Voltage (V)", "Current (A)"),
            PlotKind::ProbabilityTraces => ("Time (s)", "Probability (dimensionless)"),
            PlotKind::StateTimeline => ("Time (s)", "State (index)"),
            PlotKind::LogIv => ("Voltage (V)", "|Current| (A)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            points,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub kind: PlotKind,
    pub title: String,
    pub series: Vec<Series>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvgDocument {
    pub text: String,
    /// Points that could not be drawn, one message per affected series.
    pub warnings: Vec<String>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 450.0;
const LEFT: f64 = 90.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
/// Decades shown on a log axis; lower values sit on the axis floor.
const LOG_DECADES: f64 = 10.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn from_values(values: impl Iterator<Item = f64>) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo == hi {
            let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.5 };
            lo -= pad;
            hi += pad;
        }
        Axis { lo, hi }
    }

    fn frac(&self, v: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo)
    }
}

fn nice_step(range: f64) -> f64 {
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let m = raw / mag;
    let f = if m < 1.5 {
        1.0
    } else if m < 3.5 {
        2.0
    } else if m < 7.5 {
        5.0
    } else {
        10.0
    };
    f * mag
}

fn linear_ticks(axis: Axis) -> Vec<(f64, String)> {
    let step = nice_step(axis.hi - axis.lo);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let sci = !(1e-3..1e5).contains(&step);
    let first = (axis.lo / step).ceil() as i64;
    let last = (axis.hi / step).floor() as i64;
    (first..=last)
        .map(|k| {
            let v = k as f64 * step;
            let label = if k == 0 {
                "0".to_string()
            } else if sci {
                format!("{v:.1e}")
            } else {
                format!("{v:.decimals$}")
            };
            (v, label)
        })
        .collect()
}

fn integer_ticks(axis: Axis) -> Vec<(f64, String)> {
    let first = axis.lo.ceil() as i64;
    let last = axis.hi.floor() as i64;
    let stride = ((last - first) / 8).max(1) as usize;
    (first..=last)
        .step_by(stride)
        .map(|k| (k as f64, k.to_string()))
        .collect()
}

fn decade_ticks(axis: Axis) -> Vec<(f64, String)> {
    integer_ticks(axis)
        .into_iter()
        .map(|(v, k)| (v, format!("1e{k}")))
        .collect()
}

/// Renders `spec` to an SVG document. Fails on an empty plot; drops points
/// that cannot be placed (non-finite values, or zero current on a log axis)
/// and records a warning for each affected series.
pub fn render_svg(spec: &PlotSpec) -> Result<SvgDocument, OutputError> {
    if spec.series.is_empty() || spec.series.iter().any(|s| s.points.is_empty()) {
        return Err(OutputError::Plot(format!(
            "plot \"{}\" has an empty series",
            spec.title
        )));
    }
    let log = spec.kind == PlotKind::LogIv;
    let mut warnings = Vec::new();
    let mut prepared: Vec<Vec<(f64, f64)>> = Vec::with_capacity(spec.series.len());
    for s in &spec.series {
        let mut kept = Vec::with_capacity(s.points.len());
        let (mut zeros, mut bad) = (0usize, 0usize);
        for &(x, y) in &s.points {
            if !(x.is_finite() && y.is_finite()) {
                bad += 1;
            } else if log && y == 0.0 {
                zeros += 1;
            } else {
                kept.push((x, if log { y.abs().log10() } else { y }));
            }
        }
        if zeros > 0 {
            warnings.push(format!(
                "series \"{}\": dropped {zeros} zero-current point(s) from log axis",
                s.label
            ));
        }
        if bad > 0 {
            warnings.push(format!(
                "series \"{}\": dropped {bad} non-finite point(s)",
                s.label
            ));
        }
        prepared.push(kept);
    }
    if prepared.iter().all(Vec::is_empty) {
        return Err(OutputError::Plot(format!(
            "plot \"{}\" has no drawable points",
            spec.title
        )));
    }

    let all = || prepared.iter().flatten();
    let xa = Axis::from_values(all().map(|p| p.0));
    let mut ya = Axis::from_values(all().map(|p| p.1));
    match spec.kind {
        PlotKind::LogIv => {
            let hi = ya.hi.ceil().max(ya.lo.floor() + 1.0);
            ya = Axis {
                lo: ya.lo.floor().max(hi - LOG_DECADES),
                hi,
            }
        }
        PlotKind::StateTimeline => {
            ya = Axis {
                lo: ya.lo.floor() - 0.5,
                hi: ya.hi.ceil() + 0.5,
            }
        }
        PlotKind::ProbabilityTraces => {
            ya = Axis {
                lo: ya.lo.min(0.0),
                hi: ya.hi.max(1.0),
            }
        }
        PlotKind::IvLoop => {}
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + xa.frac(x) * pw;
    let py = |y: f64| TOP + (1.0 - ya.frac(y.max(ya.lo))) * ph;

    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"no\"?>\n");
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(s, "<title>{}</title>", escape(&spec.title));
    let _ = writeln!(
        s,
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>",
        LEFT + pw / 2.0,
        escape(&spec.title)
    );

    s.push_str("<g stroke=\"black\" stroke-width=\"1\">\n");
    let _ = writeln!(
        s,
        "<line x1=\"{LEFT:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\"/>",
        TOP + ph,
        LEFT + pw,
        TOP + ph
    );
    let _ = writeln!(
        s,
        "<line x1=\"{LEFT:.2}\" y1=\"{TOP:.2}\" x2=\"{LEFT:.2}\" y2=\"{:.2}\"/>",
        TOP + ph
    );
    s.push_str("</g>\n");

    let yticks = match spec.kind {
        PlotKind::LogIv => decade_ticks(ya),
        PlotKind::StateTimeline => integer_ticks(ya),
        _ => linear_ticks(ya),
    };
    s.push_str("<g font-family=\"sans-serif\" font-size=\"11\">\n");
    for (v, label) in linear_ticks(xa) {
        let x = px(v);
        let _ = writeln!(
            s,
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
            TOP + ph,
            TOP + ph + 5.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            TOP + ph + 18.0,
            escape(&label)
        );
    }
    for (v, label) in yticks {
        let y = py(v);
        let _ = writeln!(
            s,
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{LEFT:.2}\" y2=\"{y:.2}\" stroke=\"black\"/>",
            LEFT - 5.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            LEFT - 8.0,
            y + 4.0,
            escape(&label)
        );
    }
    s.push_str("</g>\n");

    let (xlabel, ylabel) = spec.kind.axis_labels();
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>",
        LEFT + pw / 2.0,
        HEIGHT - 15.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        "<text x=\"20\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 20 {:.2})\">{}</text>",
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(ylabel)
    );

    for (i, (series, pts)) in spec.series.iter().zip(&prepared).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut coords = String::new();
        let mut prev: Option<(f64, f64)> = None;
        for &(x, y) in pts {
            if spec.kind == PlotKind::StateTimeline {
                if let Some((_, py0)) = prev {
                    if py0 != y {
                        let _ = write!(coords, "{:.2},{:.2} ", px(x), py(py0));
                    }
                }
            }
            let _ = write!(coords, "{:.2},{:.2} ", px(x), py(y));
            prev = Some((x, y));
        }
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\"{}\"/>",
            coords.trim_end()
        );
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            "<line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            lx + 20.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            lx + 26.0,
            ly + 4.0,
            escape(&series.label)
        );
    }
    s.push_str("</svg>\n");
    Ok(SvgDocument { text: s, warnings })
}

/// Renders `spec` and writes it to `path`. Returns the render warnings.
pub fn emit_svg_plot(spec: &PlotSpec, path: &Path) -> Result<Vec<String>, OutputError> {
    let doc = render_svg(spec)?;
    write_text(path, &doc.text)?;
    Ok(doc.warnings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: PlotKind, series: Vec<Series>) -> PlotSpec {
        PlotSpec {
            kind,
            title: "test & <plot>".into(),
            series,
        }
    }

    #[test]
    fn two_point_series_gives_one_polyline() {
        let doc = render_svg(&spec(
            PlotKind::IvLoop,
            vec![Series::new("a", vec![(0.0, 0.0), (1.0, 1e-3)])],
        ))
        .unwrap();
        assert_eq!(doc.text.matches("<polyline").count(), 1);
        assert!(doc.text.starts_with("<?xml"));
        assert!(doc.text.contains("Voltage (V)") && doc.text.contains("Current (A)"));
        assert!(doc.text.contains("test &amp; &lt;plot&gt;"));
        assert!(doc.warnings.is_empty());
    }

    #[test]
    fn four_state_probability_plot_has_four_polylines() {
        let series = (1..=4)
            .map(|i| Series::new(format!("P_{i}"), vec![(0.0, 0.25), (1.0, 0.1 * i as f64)]))
            .collect();
        let doc = render_svg(&spec(PlotKind::ProbabilityTraces, series)).unwrap();
        assert_eq!(doc.text.matches("<polyline").count(), 4);
    }

    #[test]
    fn log_plot_drops_zero_current_with_warning() {
        let pts = vec![(-1.0, -1e-3), (0.0, 0.0), (1.0, 1e-7)];
        let doc = render_svg(&spec(PlotKind::LogIv, vec![Series::new("I", pts)])).unwrap();
        assert_eq!(doc.warnings.len(), 1);
        assert!(doc.warnings[0].contains("zero-current"));
        assert!(doc.text.contains(">1e-7<") && doc.text.contains(">1e-3<"));
        let only_zero = render_svg(&spec(
            PlotKind::LogIv,
            vec![Series::new("I", vec![(0.0, 0.0)])],
        ));
        assert!(only_zero.is_err());
    }

    #[test]
    fn empty_series_is_an_error() {
        assert!(render_svg(&spec(PlotKind::IvLoop, vec![])).is_err());
        assert!(render_svg(&spec(PlotKind::IvLoop, vec![Series::new("a", vec![])])).is_err());
    }

    #[test]
    fn timeline_draws_steps() {
        let pts = vec![(0.0, 2.0), (1.0, 2.0), (2.0, 1.0)];
        let doc = render_svg(&spec(PlotKind::StateTimeline, vec![Series::new("x", pts)])).unwrap();
        let line = doc
            .text
            .lines()
            .find(|l| l.starts_with("<polyline"))
            .unwrap();
        let n_points = line.split("points=\"").nth(1).unwrap().split(' ').count();
        assert_eq!(n_points, 4);
    }

    #[test]
    fn output_is_deterministic_and_written() {
        let s = spec(
            PlotKind::IvLoop,
            vec![Series::new("a", vec![(0.0, 1.0), (2.0, -3.0)])],
        );
        assert_eq!(render_svg(&s).unwrap(), render_svg(&s).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plots/iv.svg");
        emit_svg_plot(&s, &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(path).unwrap(),
            render_svg(&s).unwrap().text
        );
    }
}
