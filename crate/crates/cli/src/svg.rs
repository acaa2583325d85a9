//! Static phase-portrait rendering.

use std::fmt::Write;

use rnnctl::simulate::Trajectory;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlotError {
    #[error("NotPlanar: trajectory has dimension {n}, expected 2")]
    NotPlanar { n: usize },
}

/// Dashed guide lines drawn under the trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Overlay {
    /// Boundary `normal · x = offset` of a half-plane.
    Line { normal: [f64; 2], offset: f64 },
    /// The line through the origin and `through`.
    Ray { through: [f64; 2] },
}

const SIZE: f64 = 600.0;
const PAD: f64 = 30.0;

struct View {
    x0: f64,
    y0: f64,
    span: f64,
}

impl View {
    fn fit(points: &[[f64; 2]]) -> View {
        // the origin is always in view: every steering target is 0
        let (mut xmin, mut xmax, mut ymin, mut ymax) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for p in points.iter().filter(|p| p[0].is_finite() && p[1].is_finite()) {
            xmin = xmin.min(p[0]);
            xmax = xmax.max(p[0]);
            ymin = ymin.min(p[1]);
            ymax = ymax.max(p[1]);
        }
        let mut span = (xmax - xmin).max(ymax - ymin) * 1.1;
        if span <= 0.0 {
            span = 2.0;
        }
        let (cx, cy) = (0.5 * (xmin + xmax), 0.5 * (ymin + ymax));
        View { x0: cx - 0.5 * span, y0: cy - 0.5 * span, span }
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let scale = (SIZE - 2.0 * PAD) / self.span;
        (PAD + (x - self.x0) * scale, SIZE - PAD - (y - self.y0) * scale)
    }

    /// Segment of `a x + b y = c` inside the view, if any.
    fn clip(&self, a: f64, b: f64, c: f64) -> Option<([f64; 2], [f64; 2])> {
        let (x1, y1) = (self.x0 + self.span, self.y0 + self.span);
        let mut hits: Vec<[f64; 2]> = Vec::new();
        if b != 0.0 {
            for x in [self.x0, x1] {
                let y = (c - a * x) / b;
                if (self.y0..=y1).contains(&y) {
                    hits.push([x, y]);
                }
            }
        }
        if a != 0.0 {
            for y in [self.y0, y1] {
                let x = (c - b * y) / a;
                if (self.x0..=x1).contains(&x) {
                    hits.push([x, y]);
                }
            }
        }
        let first = *hits.first()?;
        let far = hits.iter().copied().max_by(|p, q| dist2(first, *p).total_cmp(&dist2(first, *q)))?;
        (dist2(first, far) > 0.0).then_some((first, far))
    }
}

fn dist2(p: [f64; 2], q: [f64; 2]) -> f64 {
    (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)
}

fn num(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

fn line(out: &mut String, (ax, ay): (f64, f64), (bx, by): (f64, f64), attrs: &str) {
    let _ = writeln!(out, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" {attrs}/>"#, num(ax), num(ay), num(bx), num(by));
}

/// Renders a planar trajectory with overlays. The output depends only on
/// the inputs.
pub fn emit_phase_svg(traj: &Trajectory, overlays: &[Overlay]) -> Result<String, PlotError> {
    if !traj.is_empty() && traj.dim() != 2 {
        return Err(PlotError::NotPlanar { n: traj.dim() });
    }
    let points: Vec<[f64; 2]> = traj.states.iter().map(|x| [x[0], x[1]]).collect();
    let view = View::fit(&points);

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {s} {s}" width="{s}" height="{s}">"#,
        s = SIZE
    );
    out.push_str("<rect width=\"600\" height=\"600\" fill=\"white\"/>\n");

    let axis = r##"class="axis" stroke="#999999" stroke-width="1""##;
    for (a, b) in [(0.0, 1.0), (1.0, 0.0)] {
        if let Some((p, q)) = view.clip(a, b, 0.0) {
            line(&mut out, view.px(p[0], p[1]), view.px(q[0], q[1]), axis);
        }
    }

    for overlay in overlays {
        let (a, b, c, class) = match *overlay {
            Overlay::Line { normal, offset } => (normal[0], normal[1], offset, "halfplane"),
            Overlay::Ray { through } => (through[1], -through[0], 0.0, "ray"),
        };
        let attrs = format!(r##"class="{class}" stroke="#3366cc" stroke-width="1.5" stroke-dasharray="6 4""##);
        if let Some((p, q)) = view.clip(a, b, c) {
            line(&mut out, view.px(p[0], p[1]), view.px(q[0], q[1]), &attrs);
        }
    }

    if !points.is_empty() {
        let coords: Vec<String> = points
            .iter()
            .filter(|p| p[0].is_finite() && p[1].is_finite())
            .map(|p| {
                let (x, y) = view.px(p[0], p[1]);
                format!("{},{}", num(x), num(y))
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="trajectory" fill="none" stroke="black" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let (sx, sy) = view.px(points[0][0], points[0][1]);
        let _ = writeln!(out, r#"<circle class="start" cx="{}" cy="{}" r="3" fill="black"/>"#, num(sx), num(sy));
    }
    out.push_str("</svg>\n");
    Ok(out)
}
