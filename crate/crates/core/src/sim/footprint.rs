//! Vehicle footprint and its clearance to obstacles in path coordinates.

use crate::tube::Obstacle;
use crate::vehicle::VehicleParams;

pub type Point = [f64; 2];

/// Corners of the vehicle rectangle `[−b, a] × [−wd/2, wd/2]` in `(s, e_y)`.
pub fn vehicle_corners(s_d: f64, e_y: f64, e_phi: f64, params: &VehicleParams) -> [Point; 4] {
    let (sin, cos) = e_phi.sin_cos();
    let half = 0.5 * params.width;
    let corner = |l: f64, w: f64| [s_d + l * cos - w * sin, e_y + l * sin + w * cos];
    [corner(-params.b, -half), corner(params.a, -half), corner(params.a, half), corner(-params.b, half)]
}

pub fn obstacle_corners(o: &Obstacle) -> [Point; 4] {
    [[o.s_start, o.e_y_right], [o.s_end, o.e_y_right], [o.s_end, o.e_y_left], [o.s_start, o.e_y_left]]
}

fn project(poly: &[Point; 4], axis: Point) -> (f64, f64) {
    poly.iter().map(|p| p[0] * axis[0] + p[1] * axis[1]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 { ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
    d[0].hypot(d[1])
}

/// Signed distance between two convex quadrilaterals: the gap when apart,
/// minus the smallest push-out distance along a separating axis when they intersect.
pub fn signed_distance(a: &[Point; 4], b: &[Point; 4]) -> f64 {
    let mut min_overlap = f64::INFINITY;
    let mut separated = false;
    for poly in [a, b] {
        for k in 0..4 {
            let p = poly[k];
            let q = poly[(k + 1) % 4];
            let len = (q[0] - p[0]).hypot(q[1] - p[1]);
            let axis = [-(q[1] - p[1]) / len, (q[0] - p[0]) / len];
            let (a_lo, a_hi) = project(a, axis);
            let (b_lo, b_hi) = project(b, axis);
            let overlap = (a_hi - b_lo).min(b_hi - a_lo);
            if overlap < 0.0 {
                separated = true;
            }
            min_overlap = min_overlap.min(overlap);
        }
    }
    if !separated {
        return -min_overlap;
    }
    let mut d = f64::INFINITY;
    for (from, to) in [(a, b), (b, a)] {
        for p in from.iter() {
            for k in 0..4 {
                d = d.min(point_segment_distance(*p, to[k], to[(k + 1) % 4]));
            }
        }
    }
    d
}

/// Clearance of the vehicle to the closest obstacle; `+∞` with none.
pub fn clearance(s_d: f64, e_y: f64, e_phi: f64, params: &VehicleParams, obstacles: &[Obstacle]) -> f64 {
    let car = vehicle_corners(s_d, e_y, e_phi, params);
    obstacles.iter().map(|o| signed_distance(&car, &obstacle_corners(o))).fold(f64::INFINITY, f64::min)
}
