//! Heatmaps with zero-level contours: binary PGM rasters and SVG vector
//! figures, no plotting library.

use crate::config::RenderSection;
use crate::CliError;
use ras_core::grid::{GridSpec, ValueGrid};
use std::fmt::Write as _;

/// Values of a field on a two-dimensional slice of the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub axes: [usize; 2],
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major, `values[j * xs.len() + i]` at `(xs[i], ys[j])`.
    pub values: Vec<f64>,
}

pub type Segment = [[f64; 2]; 2];

/// Full states of the slice nodes, in slice order.
pub fn slice_states(spec: &GridSpec, section: &RenderSection) -> Result<Vec<Vec<f64>>, CliError> {
    let n = spec.ndim();
    let [a, b] = section.axes;
    if n < 2 || a == b || a >= n || b >= n {
        return Err(CliError::Slice(format!(
            "axes {:?} invalid for a {n}-dimensional grid",
            section.axes
        )));
    }
    if section.fixed.len() != n - 2 {
        return Err(CliError::Slice(format!(
            "expected {} fixed values, got {}",
            n - 2,
            section.fixed.len()
        )));
    }
    let coords = |k: usize| -> Vec<f64> {
        (0..spec.axes()[k].count)
            .map(|i| spec.axes()[k].coordinate(i))
            .collect()
    };
    let (xs, ys) = (coords(a), coords(b));
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            let mut fixed = section.fixed.iter();
            let state = (0..n)
                .map(|k| match k {
                    k if k == a => x,
                    k if k == b => y,
                    _ => *fixed.next().expect("length checked"),
                })
                .collect();
            out.push(state);
        }
    }
    Ok(out)
}

impl Slice {
    pub fn of_grid(grid: &ValueGrid, section: &RenderSection) -> Result<Self, CliError> {
        Self::of_fn(grid.spec(), section, |x| grid.interpolate(x))
    }

    pub fn of_fn(
        spec: &GridSpec,
        section: &RenderSection,
        f: impl Fn(&[f64]) -> f64,
    ) -> Result<Self, CliError> {
        let states = slice_states(spec, section)?;
        let [a, b] = section.axes;
        let coords = |k: usize| -> Vec<f64> {
            (0..spec.axes()[k].count)
                .map(|i| spec.axes()[k].coordinate(i))
                .collect()
        };
        Ok(Self {
            axes: section.axes,
            xs: coords(a),
            ys: coords(b),
            values: states.iter().map(|x| f(x)).collect(),
        })
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.xs.len() + i]
    }

    fn scale(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Node cell diagonal in data units.
    pub fn cell_diagonal(&self) -> f64 {
        let dx = self.xs[1] - self.xs[0];
        let dy = self.ys[1] - self.ys[0];
        dx.hypot(dy)
    }
}

/// Marching-squares boundary of `{value > 0}` with linear edge interpolation.
/// Saddles are resolved by the cell-center average.
pub fn zero_contour(s: &Slice) -> Vec<Segment> {
    let mut segs = Vec::new();
    let (nx, ny) = (s.xs.len(), s.ys.len());
    for j in 0..ny.saturating_sub(1) {
        for i in 0..nx.saturating_sub(1) {
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let v: Vec<f64> = corners.iter().map(|&(a, b)| s.at(a, b)).collect();
            let pos: Vec<bool> = v.iter().map(|&x| x > 0.0).collect();
            if pos.iter().all(|&p| p) || pos.iter().all(|&p| !p) {
                continue;
            }
            let point = |e: usize| -> [f64; 2] {
                let (k0, k1) = (e, (e + 1) % 4);
                let (va, vb) = (v[k0], v[k1]);
                let t = if va == vb {
                    0.5
                } else {
                    (va / (va - vb)).clamp(0.0, 1.0)
                };
                let (pa, pb) = (corners[k0], corners[k1]);
                [
                    s.xs[pa.0] + t * (s.xs[pb.0] - s.xs[pa.0]),
                    s.ys[pa.1] + t * (s.ys[pb.1] - s.ys[pa.1]),
                ]
            };
            let center_pos = v.iter().sum::<f64>() / 4.0 > 0.0;
            let crossing: Vec<usize> = (0..4).filter(|&e| pos[e] != pos[(e + 1) % 4]).collect();
            if crossing.len() == 2 {
                segs.push([point(crossing[0]), point(crossing[1])]);
            } else {
                // Saddle: cut off each corner whose class differs from the center's.
                for k in 0..4 {
                    if pos[k] != center_pos {
                        segs.push([point((k + 3) % 4), point(k)]);
                    }
                }
            }
        }
    }
    segs
}

fn point_segment_distance(p: [f64; 2], s: &Segment) -> f64 {
    let [a, b] = *s;
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    };
    (p[0] - a[0] - t * d[0]).hypot(p[1] - a[1] - t * d[1])
}

/// Distance from `p` to the nearest contour segment, infinite when there is none.
pub fn distance_to_contour(p: [f64; 2], contour: &[Segment]) -> f64 {
    contour
        .iter()
        .map(|s| point_segment_distance(p, s))
        .fold(f64::INFINITY, f64::min)
}

/// Gray level: 128 at zero, brighter for positive values.
fn gray(v: f64, scale: f64) -> u8 {
    if scale == 0.0 {
        return 128;
    }
    (128.0 + (127.0 * v / scale).round()).clamp(1.0, 255.0) as u8
}

/// Binary PGM, highest `y` on the top row.
pub fn to_pgm(s: &Slice, pixels_per_cell: usize) -> Vec<u8> {
    let (nx, ny) = (s.xs.len(), s.ys.len());
    let p = pixels_per_cell.max(1);
    let scale = s.scale();
    let mut out = format!("P5\n{} {}\n255\n", nx * p, ny * p).into_bytes();
    for j in (0..ny).rev() {
        let row: Vec<u8> = (0..nx)
            .flat_map(|i| std::iter::repeat_n(gray(s.at(i, j), scale), p))
            .collect();
        for _ in 0..p {
            out.extend_from_slice(&row);
        }
    }
    out
}

/// Diverging blue-white-red color, quantized to 16 levels per side.
fn color(v: f64, scale: f64) -> (u8, u8, u8) {
    let t = if scale == 0.0 {
        0.0
    } else {
        ((v / scale) * 16.0).round() / 16.0
    };
    let c = |x: f64| (255.0 * x).round() as u8;
    if t < 0.0 {
        (c(1.0 + t), c(1.0 + t), 255)
    } else {
        (255, c(1.0 - t), c(1.0 - t))
    }
}

/// A polyline drawn over the heatmap, with an optional marked point.
#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub label: String,
    pub points: Vec<[f64; 2]>,
    pub marker: Option<[f64; 2]>,
}

/// Target and obstacle outlines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outlines {
    pub target: Vec<Segment>,
    pub obstacle: Vec<Segment>,
}

pub fn to_svg(
    s: &Slice,
    title: &str,
    pixels_per_cell: usize,
    outlines: &Outlines,
    overlays: &[Overlay],
) -> String {
    let (nx, ny) = (s.xs.len(), s.ys.len());
    let p = pixels_per_cell.max(1) as f64;
    let (w, h) = (nx as f64 * p, ny as f64 * p);
    let dx = s.xs[1] - s.xs[0];
    let dy = s.ys[1] - s.ys[0];
    let px = |x: f64| ((x - s.xs[0]) / dx + 0.5) * p;
    let py = |y: f64| h - ((y - s.ys[0]) / dy + 0.5) * p;
    let scale = s.scale();
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" shape-rendering="crispEdges">"#
    );
    let _ = writeln!(out, "<title>{title}</title>");
    out.push_str("<g id=\"heatmap\">\n");
    for j in 0..ny {
        let y = (ny - 1 - j) as f64 * p;
        let mut i = 0;
        while i < nx {
            let c = color(s.at(i, j), scale);
            let start = i;
            while i < nx && color(s.at(i, j), scale) == c {
                i += 1;
            }
            let _ = writeln!(
                out,
                r##"<rect x="{}" y="{y}" width="{}" height="{p}" fill="#{:02x}{:02x}{:02x}"/>"##,
                start as f64 * p,
                (i - start) as f64 * p,
                c.0,
                c.1,
                c.2
            );
        }
    }
    out.push_str("</g>\n");
    let path = |segs: &[Segment]| -> String {
        let mut d = String::new();
        for [a, b] in segs {
            let _ = write!(
                d,
                "M{:.2} {:.2}L{:.2} {:.2}",
                px(a[0]),
                py(a[1]),
                px(b[0]),
                py(b[1])
            );
        }
        d
    };
    let layers = [
        (
            "target",
            &outlines.target,
            "#1a9850",
            " stroke-dasharray=\"4 3\"",
        ),
        (
            "obstacle",
            &outlines.obstacle,
            "#542788",
            " stroke-dasharray=\"2 2\"",
        ),
    ];
    for (id, segs, stroke, extra) in layers {
        if !segs.is_empty() {
            let _ = writeln!(
                out,
                r#"<path id="{id}" d="{}" fill="none" stroke="{stroke}" stroke-width="1.5"{extra}/>"#,
                path(segs)
            );
        }
    }
    let contour = zero_contour(s);
    if !contour.is_empty() {
        let _ = writeln!(
            out,
            r#"<path id="zero-level" d="{}" fill="none" stroke="black" stroke-width="2"/>"#,
            path(&contour)
        );
    }
    for o in overlays {
        let pts: Vec<String> = o
            .points
            .iter()
            .map(|q| format!("{:.2},{:.2}", px(q[0]), py(q[1])))
            .collect();
        let _ = writeln!(
            out,
            r##"<polyline class="trajectory" data-label="{}" points="{}" fill="none" stroke="#f46d43" stroke-width="1.5"/>"##,
            o.label,
            pts.join(" ")
        );
        if let Some(m) = o.marker {
            let _ = writeln!(
                out,
                r#"<circle class="switch" cx="{:.2}" cy="{:.2}" r="4" fill="none" stroke="black" stroke-width="1.5"/>"#,
                px(m[0]),
                py(m[1])
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
