//! Arc-length parameterised reference path built from straight and
//! constant-curvature segments, plus the piecewise-constant road edges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::GlobalState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    /// Arc length (m).
    pub length: f64,
    /// Signed curvature (1/m), positive turning left.
    pub curvature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Knot {
    s: f64,
    x: f64,
    y: f64,
    heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    segments: Vec<Segment>,
    knots: Vec<Knot>,
    length: f64,
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

impl ReferencePath {
    /// Builds a path anchored at `(x, y, heading)` for `s_d = 0`.
    pub fn new(start: (f64, f64, f64), segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Config("path needs at least one segment".into()));
        }
        let mut knots = Vec::with_capacity(segments.len());
        let mut k = Knot { s: 0.0, x: start.0, y: start.1, heading: start.2 };
        for seg in &segments {
            if !(seg.length > 0.0 && seg.length.is_finite()) || !seg.curvature.is_finite() {
                return Err(Error::Config(format!("invalid path segment {seg:?}")));
            }
            knots.push(k);
            let (x, y, heading) = advance(&k, seg.curvature, seg.length);
            k = Knot { s: k.s + seg.length, x, y, heading };
        }
        Ok(Self { segments, knots, length: k.s })
    }

    pub fn straight(length: f64) -> Self {
        Self::new((0.0, 0.0, 0.0), vec![Segment { length, curvature: 0.0 }]).expect("valid straight path")
    }

    /// Left-turning arc of the given radius starting at the origin heading +x.
    pub fn arc(radius: f64, length: f64) -> Self {
        Self::new((0.0, 0.0, 0.0), vec![Segment { length, curvature: 1.0 / radius }]).expect("valid arc path")
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    fn segment_index(&self, s: f64) -> usize {
        match self.knots.iter().rposition(|k| k.s <= s) {
            Some(i) => i,
            None => 0,
        }
    }

    /// Curvature at `s`, clamped to the first/last segment outside the path.
    pub fn curvature_at(&self, s: f64) -> f64 {
        self.segments[self.segment_index(s)].curvature
    }

    /// Point and tangent heading at `s` (extrapolated beyond the ends).
    pub fn pose_at(&self, s: f64) -> (f64, f64, f64) {
        let i = self.segment_index(s);
        let k = &self.knots[i];
        advance(k, self.segments[i].curvature, s - k.s)
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        self.pose_at(s).2
    }

    /// Global pose for path errors `(e_y, e_φ)` at arc length `s_d`.
    /// Velocities in the returned state are zero.
    pub fn path_to_global(&self, e_y: f64, e_phi: f64, s_d: f64) -> GlobalState {
        let (x, y, heading) = self.pose_at(s_d);
        let (sin_h, cos_h) = heading.sin_cos();
        GlobalState {
            x: x - e_y * sin_h,
            y: y + e_y * cos_h,
            phi: heading + e_phi,
            ..Default::default()
        }
    }

    /// Closest-point projection of a global pose: `(e_y, e_φ, s_d)`.
    pub fn global_to_path_errors(&self, pose: &GlobalState) -> Result<(f64, f64, f64)> {
        let mut best: Option<(f64, f64)> = None; // (distance², s)
        for (i, seg) in self.segments.iter().enumerate() {
            let k = &self.knots[i];
            let first = i == 0;
            let last = i + 1 == self.segments.len();
            let local = project_on_segment(k, seg.curvature, pose.x, pose.y);
            let lo = if first { f64::NEG_INFINITY } else { 0.0 };
            let hi = if last { f64::INFINITY } else { seg.length };
            let s_local = local.clamp(lo, hi);
            let (px, py, _) = advance(k, seg.curvature, s_local);
            let d2 = (pose.x - px).powi(2) + (pose.y - py).powi(2);
            if best.map_or(true, |(b, _)| d2 < b) {
                best = Some((d2, k.s + s_local));
            }
        }
        let (_, s) = best.expect("path has segments");
        let (px, py, heading) = self.pose_at(s);
        let (sin_h, cos_h) = heading.sin_cos();
        let e_y = -(pose.x - px) * sin_h + (pose.y - py) * cos_h;
        let kappa = self.curvature_at(s);
        if kappa * e_y >= 1.0 - 1e-9 {
            return Err(Error::AmbiguousProjection { distance: e_y.abs(), radius: 1.0 / kappa.abs() });
        }
        Ok((e_y, wrap_angle(pose.phi - heading), s))
    }
}

fn advance(k: &Knot, kappa: f64, ds: f64) -> (f64, f64, f64) {
    let heading = k.heading + kappa * ds;
    if kappa.abs() < 1e-12 {
        let (s, c) = k.heading.sin_cos();
        return (k.x + ds * c, k.y + ds * s, heading);
    }
    let r = 1.0 / kappa;
    (
        k.x + r * (heading.sin() - k.heading.sin()),
        k.y - r * (heading.cos() - k.heading.cos()),
        heading,
    )
}

/// Unclamped local arc length of the closest point on the segment's carrier.
fn project_on_segment(k: &Knot, kappa: f64, x: f64, y: f64) -> f64 {
    let (sin_h, cos_h) = k.heading.sin_cos();
    if kappa.abs() < 1e-12 {
        return (x - k.x) * cos_h + (y - k.y) * sin_h;
    }
    let r = 1.0 / kappa;
    let (cx, cy) = (k.x - r * sin_h, k.y + r * cos_h);
    let start = (k.y - cy).atan2(k.x - cx);
    let here = (y - cy).atan2(x - cx);
    wrap_angle(here - start) / kappa
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadSection {
    /// Section applies from this arc length onwards (m).
    pub from: f64,
    /// Right edge lateral offset (m), negative for right of the path.
    pub right: f64,
    /// Left edge lateral offset (m).
    pub left: f64,
}

/// Piecewise-constant lateral road limits along the path.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadBounds {
    sections: Vec<RoadSection>,
}

impl RoadBounds {
    pub fn new(mut sections: Vec<RoadSection>) -> Result<Self> {
        if sections.is_empty() {
            return Err(Error::Config("road needs at least one section".into()));
        }
        sections.sort_by(|a, b| a.from.total_cmp(&b.from));
        for s in &sections {
            if !(s.right < s.left) {
                return Err(Error::Config(format!("road section at s = {} has right >= left", s.from)));
            }
        }
        Ok(Self { sections })
    }

    pub fn uniform(right: f64, left: f64) -> Self {
        Self::new(vec![RoadSection { from: 0.0, right, left }]).expect("valid road bounds")
    }

    pub fn sections(&self) -> &[RoadSection] {
        &self.sections
    }

    /// `(right, left)` at arc length `s`.
    pub fn at(&self, s: f64) -> (f64, f64) {
        let i = self.sections.iter().rposition(|r| r.from <= s).unwrap_or(0);
        (self.sections[i].right, self.sections[i].left)
    }
}
