//! Minimal SVG output: line traces and bar histograms.

use std::fmt::Write as _;
use std::path::Path;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
/// Points per line series before min/max decimation.
const MAX_POINTS: usize = 4000;

pub enum Series<'a> {
    /// `ys[k]` at `xs[k]`.
    Line {
        xs: &'a [f64],
        ys: &'a [f64],
        color: &'a str,
    },
    /// Level `ys[k]` on `[xs[k], xs[k + 1])`.
    Step {
        xs: &'a [f64],
        ys: &'a [f64],
        color: &'a str,
    },
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let pad = |a: f64, b: f64| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn header(title: &str, xlabel: &str, ylabel: &str, f: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{l},{t} L{l},{b} L{r},{b}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(ylabel)
    );
    for (v, x, y, anchor) in [
        (f.x0, l, b + 16.0, "start"),
        (f.x1, r, b + 16.0, "end"),
        (f.y0, l - 4.0, b, "end"),
        (f.y1, l - 4.0, t + 4.0, "end"),
    ] {
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{}</text>"#,
            tick(v)
        );
    }
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Keep the first, minimum and maximum point of each bucket.
fn decimate(xs: &[f64], ys: &[f64]) -> Vec<(f64, f64)> {
    let n = xs.len().min(ys.len());
    if n <= MAX_POINTS {
        return xs.iter().zip(ys).map(|(&x, &y)| (x, y)).collect();
    }
    let buckets = MAX_POINTS / 2;
    let mut out = Vec::with_capacity(2 * buckets);
    for b in 0..buckets {
        let (lo, hi) = (b * n / buckets, ((b + 1) * n / buckets).max(b * n / buckets + 1));
        let range = lo..hi.min(n);
        let imin = range
            .clone()
            .min_by(|&i, &j| ys[i].total_cmp(&ys[j]))
            .expect("non-empty");
        let imax = range.max_by(|&i, &j| ys[i].total_cmp(&ys[j])).expect("non-empty");
        let (a, c) = if imin <= imax { (imin, imax) } else { (imax, imin) };
        out.push((xs[a], ys[a]));
        if c != a {
            out.push((xs[c], ys[c]));
        }
    }
    out
}

fn path_data(points: impl IntoIterator<Item = (f64, f64)>, f: &Frame) -> String {
    let mut d = String::new();
    for (k, (x, y)) in points.into_iter().enumerate() {
        let _ = write!(
            d,
            "{}{:.2},{:.2}",
            if k == 0 { "M" } else { " L" },
            f.px(x),
            f.py(y)
        );
    }
    d
}

pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let finite = |v: &[f64]| v.iter().copied().filter(|x| x.is_finite()).collect::<Vec<_>>();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for s in series {
        let (Series::Line { xs: x, ys: y, .. } | Series::Step { xs: x, ys: y, .. }) = s;
        xs.extend(finite(x));
        ys.extend(finite(y));
    }
    let lo = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let f = if xs.is_empty() || ys.is_empty() {
        Frame::new(0.0, 1.0, 0.0, 1.0)
    } else {
        Frame::new(lo(&xs), hi(&xs), lo(&ys), hi(&ys))
    };
    let mut s = header(title, xlabel, ylabel, &f);
    for series in series {
        let (d, color) = match series {
            Series::Line { xs, ys, color } => (path_data(decimate(xs, ys), &f), color),
            Series::Step { xs, ys, color } => {
                let pts = ys
                    .iter()
                    .zip(xs.windows(2))
                    .flat_map(|(&y, w)| [(w[0], y), (w[1], y)]);
                (path_data(pts, &f), color)
            }
        };
        let _ = writeln!(
            s,
            r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1"/>"#
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Bars for `counts` on `edges`, optionally with a line overlay evaluated at
/// bin centres.
pub fn bar_plot(title: &str, xlabel: &str, edges: &[f64], counts: &[f64], overlay: Option<&[f64]>) -> String {
    let top = counts
        .iter()
        .chain(overlay.unwrap_or(&[]))
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let (x0, x1) = (
        edges.first().copied().unwrap_or(0.0),
        edges.last().copied().unwrap_or(1.0),
    );
    let f = Frame::new(x0, x1, 0.0, if top > 0.0 { top } else { 1.0 });
    let mut s = header(title, xlabel, "count", &f);
    for (w, &c) in edges.windows(2).zip(counts) {
        let (l, r) = (f.px(w[0]), f.px(w[1]));
        let (t, b) = (f.py(c), f.py(0.0));
        let _ = writeln!(
            s,
            r##"<rect x="{l:.2}" y="{t:.2}" width="{:.2}" height="{:.2}" fill="#7a9cc6" stroke="white" stroke-width="0.5"/>"##,
            (r - l).max(0.0),
            (b - t).max(0.0)
        );
    }
    if let Some(o) = overlay {
        let pts = edges.windows(2).zip(o).map(|(w, &y)| ((w[0] + w[1]) / 2.0, y));
        let _ = writeln!(
            s,
            r#"<path d="{}" fill="none" stroke="crimson" stroke-width="1.5"/>"#,
            path_data(pts, &f)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn write(path: &Path, svg: &str) -> std::io::Result<()> {
    std::fs::write(path, svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimation_keeps_extremes() {
        let xs: Vec<f64> = (0..100_000).map(f64::from).collect();
        let mut ys = vec![0.0; 100_000];
        ys[54_321] = 9.0;
        let d = decimate(&xs, &ys);
        assert!(d.len() <= MAX_POINTS);
        assert!(d.contains(&(54_321.0, 9.0)));
    }

    #[test]
    fn plots_are_well_formed() {
        let xs = [0.0, 1.0, 2.0];
        let svg = line_plot(
            "a < b",
            "t",
            "y",
            &[
                Series::Line {
                    xs: &xs,
                    ys: &[0.0, 1.0, 0.5],
                    color: "grey",
                },
                Series::Step {
                    xs: &xs,
                    ys: &[0.0, 1.0],
                    color: "red",
                },
            ],
        );
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<path").count(), 3);
        let bars = bar_plot("h", "x", &[0.0, 1.0, 2.0], &[3.0, 1.0], Some(&[2.5, 1.5]));
        assert_eq!(bars.matches("<rect").count(), 3);
    }

    #[test]
    fn degenerate_ranges_do_not_divide_by_zero() {
        let svg = line_plot(
            "c",
            "t",
            "y",
            &[Series::Line {
                xs: &[1.0],
                ys: &[2.0],
                color: "k",
            }],
        );
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}
