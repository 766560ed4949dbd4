//! Minimal static SVG plots: trajectory panels and feasibility region outlines.

use std::fmt::Write as _;

use crate::design::BoxConstraintSet;
use crate::sim::{CellLabel, FeasibilityMap, Trajectory};

const WIDTH: f64 = 640.0;
const PANEL_HEIGHT: f64 = 220.0;
const MARGIN: f64 = 40.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Maps data coordinates into one panel.
struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Frame {
    fn new(top: f64, w: f64, h: f64, xr: (f64, f64), yr: (f64, f64)) -> Self {
        let pad = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
        Self { x0: MARGIN, y0: top, w, h, xr: pad(xr), yr: pad(yr) }
    }

    fn px(&self, x: f64) -> f64 {
        self.x0 + (x - self.xr.0) / (self.xr.1 - self.xr.0) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.yr.0) / (self.yr.1 - self.yr.0) * self.h
    }

    fn axes(&self, out: &mut String, title: &str) {
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
            self.x0, self.y0, self.w, self.h
        );
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="12">{title}</text>"#, self.x0, self.y0 - 6.0);
        let _ = writeln!(
            out,
            r#"<text x="2" y="{:.2}" font-size="10">{:.3}</text><text x="2" y="{:.2}" font-size="10">{:.3}</text>"#,
            self.y0 + 10.0,
            self.yr.1,
            self.y0 + self.h,
            self.yr.0
        );
    }

    fn hline(&self, out: &mut String, y: f64) {
        if y.is_finite() && y >= self.yr.0 && y <= self.yr.1 {
            let _ = writeln!(
                out,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
                self.x0,
                self.py(y),
                self.x0 + self.w,
                self.py(y)
            );
        }
    }

    fn polyline(&self, out: &mut String, pts: impl Iterator<Item = (f64, f64)>, color: &str) {
        let coords: Vec<String> = pts.map(|(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y))).collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Widens `r` to include the finite bounds so the constraint bands are visible.
fn with_bounds(r: (f64, f64), lo: &[f64], hi: &[f64]) -> (f64, f64) {
    let b = range(lo.iter().chain(hi).copied());
    let (lo, hi) = (r.0.min(b.0), r.1.max(b.1));
    if lo > hi {
        return (-1.0, 1.0);
    }
    let pad = 0.05 * (hi - lo).max(1e-9);
    (lo - pad, hi + pad)
}

/// State panel over input panel, with dashed lines at finite box bounds.
pub fn trajectory_svg(traj: &Trajectory, bounds: &BoxConstraintSet) -> String {
    let steps = traj.states.len().saturating_sub(1).max(1) as f64;
    let w = WIDTH - 2.0 * MARGIN;
    let height = 2.0 * PANEL_HEIGHT + 3.0 * MARGIN;
    let mut out = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" font-family="sans-serif">"#);
    out.push('\n');

    let xs = Frame::new(MARGIN, w, PANEL_HEIGHT, (0.0, steps), with_bounds(range(traj.states.iter().flatten().copied()), &bounds.x_lo, &bounds.x_hi));
    xs.axes(&mut out, "states x_i(k)");
    for (i, color) in (0..bounds.n()).zip(COLORS.iter().cycle()) {
        xs.polyline(&mut out, traj.states.iter().enumerate().map(|(k, x)| (k as f64, x[i])), color);
    }
    for v in bounds.x_lo.iter().chain(&bounds.x_hi) {
        xs.hline(&mut out, *v);
    }

    let us = Frame::new(
        2.0 * MARGIN + PANEL_HEIGHT,
        w,
        PANEL_HEIGHT,
        (0.0, steps),
        with_bounds(range(traj.inputs.iter().flatten().copied()), &bounds.u_lo, &bounds.u_hi),
    );
    us.axes(&mut out, "inputs u_j(k)");
    for (j, color) in (0..bounds.m()).zip(COLORS.iter().cycle()) {
        us.polyline(&mut out, traj.inputs.iter().enumerate().map(|(k, u)| (k as f64, u[j])), color);
    }
    for v in bounds.u_lo.iter().chain(&bounds.u_hi) {
        us.hline(&mut out, *v);
    }
    out.push_str("</svg>\n");
    out
}

/// Outlines of the two feasible regions of a planar scan: solid for the
/// proposed horizon, dashed for the baseline. Each outline is the set of cell
/// edges separating a feasible cell from an infeasible one (or the window).
pub fn feasibility_svg(map: &FeasibilityMap) -> String {
    assert_eq!(map.grid.resolution.len(), 2, "region outlines need a planar grid");
    let (nx, ny) = (map.grid.resolution[0], map.grid.resolution[1]);
    let side = WIDTH - 2.0 * MARGIN;
    let frame = Frame::new(MARGIN, side, side, (map.grid.lo[0], map.grid.hi[0]), (map.grid.lo[1], map.grid.hi[1]));
    let mut out = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{WIDTH}" font-family="sans-serif">"#);
    out.push('\n');
    frame.axes(&mut out, "x_1 (horizontal) vs x_2 (vertical)");

    let (dx, dy) = ((map.grid.hi[0] - map.grid.lo[0]) / nx as f64, (map.grid.hi[1] - map.grid.lo[1]) / ny as f64);
    let label = |i: usize, j: usize| map.labels[i * ny + j];
    for (proposed, style) in
        [(true, r##"stroke="#1f77b4" stroke-width="1.6""##), (false, r##"stroke="#d62728" stroke-width="1.6" stroke-dasharray="5 3""##)]
    {
        let feasible = |l: CellLabel| if proposed { l.proposed_feasible() } else { l.baseline_feasible() };
        let inside = |i: isize, j: isize| i >= 0 && j >= 0 && (i as usize) < nx && (j as usize) < ny && feasible(label(i as usize, j as usize));
        let mut path = String::new();
        for i in 0..nx as isize {
            for j in 0..ny as isize {
                if !inside(i, j) {
                    continue;
                }
                let (x_lo, y_lo) = (map.grid.lo[0] + i as f64 * dx, map.grid.lo[1] + j as f64 * dy);
                let (x_hi, y_hi) = (x_lo + dx, y_lo + dy);
                let mut edge = |a: (f64, f64), b: (f64, f64)| {
                    let _ = write!(path, "M{:.2} {:.2}L{:.2} {:.2}", frame.px(a.0), frame.py(a.1), frame.px(b.0), frame.py(b.1));
                };
                if !inside(i - 1, j) {
                    edge((x_lo, y_lo), (x_lo, y_hi));
                }
                if !inside(i + 1, j) {
                    edge((x_hi, y_lo), (x_hi, y_hi));
                }
                if !inside(i, j - 1) {
                    edge((x_lo, y_lo), (x_hi, y_lo));
                }
                if !inside(i, j + 1) {
                    edge((x_lo, y_hi), (x_hi, y_hi));
                }
            }
        }
        let _ = writeln!(out, r#"<path fill="none" {style} d="{path}"/>"#);
    }
    let _ = writeln!(
        out,
        r##"<text x="{:.2}" y="{:.2}" font-size="12">solid: proposed ({}) cells, dashed: baseline ({}) cells</text>"##,
        MARGIN,
        WIDTH - 12.0,
        map.counts.proposed(),
        map.counts.baseline()
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{GridSpec, LabelCounts};

    #[test]
    fn single_feasible_cell_has_four_edges_per_outline() {
        let mut labels = vec![CellLabel::Infeasible; 9];
        labels[4] = CellLabel::FeasibleBoth;
        let map = FeasibilityMap {
            grid: GridSpec::square(1.5, 3),
            labels,
            counts: LabelCounts { both: 1, proposed_only: 0, baseline_only: 0, infeasible: 8 },
        };
        let svg = feasibility_svg(&map);
        assert_eq!(svg.matches('M').count(), 8);
        assert!(svg.contains("stroke-dasharray=\"5 3\""));
    }
}
