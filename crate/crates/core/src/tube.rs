//! Admissible corridor around obstacles, its sampling along the predicted
//! path distance, robust tightening and effective-width convexification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::box_support_lp;
use crate::lqr::{closed_loop, GainSchedule};
use crate::ltv::{Mat5, StepModel, TimeGrid, Vec5};
use crate::path::RoadBounds;
use crate::vehicle::VehicleParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub s_start: f64,
    pub s_end: f64,
    /// Right edge of the obstacle (m, left positive).
    pub e_y_right: f64,
    /// Left edge; a left pass goes around this side.
    pub e_y_left: f64,
    #[serde(skip)]
    pub stretched: bool,
}

impl Obstacle {
    pub fn new(s_start: f64, s_end: f64, e_y_right: f64, e_y_left: f64) -> Result<Self> {
        if !(s_start < s_end) || !(e_y_right < e_y_left) {
            return Err(Error::Config(format!(
                "obstacle [{s_start}, {s_end}] x [{e_y_right}, {e_y_left}] has an empty extent"
            )));
        }
        Ok(Self { s_start, s_end, e_y_right, e_y_left, stretched: false })
    }
}

/// Per-state half-widths of the additive one-step disturbance box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DisturbanceSet {
    pub half_widths: [f64; 5],
}

impl Default for DisturbanceSet {
    fn default() -> Self {
        Self { half_widths: [0.2, 0.14, 0.0175, 0.025, 0.025] }
    }
}

impl DisturbanceSet {
    pub fn zero() -> Self {
        Self { half_widths: [0.0; 5] }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { half_widths: self.half_widths.map(|w| w * k) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.half_widths.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("disturbance half-widths must be nonnegative, got {:?}", self.half_widths)))
        }
    }

    /// `max_{w ∈ W} c·w`.
    pub fn support(&self, c: &[f64; 5]) -> f64 {
        c.iter().zip(&self.half_widths).map(|(c, w)| c.abs() * w).sum()
    }
}

/// Grows each obstacle along the path by one local sample spacing on both
/// sides so the discretised prediction cannot step over it.
pub fn stretch_obstacles(obstacles: &[Obstacle], s_vehicle: f64, x_dot_p: f64, grid: &TimeGrid) -> Vec<Obstacle> {
    let short_end = s_vehicle + x_dot_p * grid.n_short as f64 * grid.t_short;
    obstacles
        .iter()
        .map(|o| {
            let dt = if o.s_end > short_end { grid.t_long } else { grid.t_short };
            let grow = x_dot_p * dt;
            Obstacle { s_start: o.s_start - grow, s_end: o.s_end + grow, stretched: true, ..*o }
        })
        .collect()
}

/// Merges obstacles whose path-distance spans overlap into their union.
pub fn merge_obstacles(obstacles: &[Obstacle]) -> Vec<Obstacle> {
    let mut sorted = obstacles.to_vec();
    sorted.sort_by(|a, b| a.s_start.total_cmp(&b.s_start));
    let mut merged: Vec<Obstacle> = Vec::with_capacity(sorted.len());
    for o in sorted {
        match merged.last_mut() {
            Some(last) if o.s_start <= last.s_end => {
                last.s_end = last.s_end.max(o.s_end);
                last.e_y_right = last.e_y_right.min(o.e_y_right);
                last.e_y_left = last.e_y_left.max(o.e_y_left);
                last.stretched |= o.stretched;
            }
            _ => merged.push(o),
        }
    }
    merged
}

/// Lateral corridor as a function of path distance for a left pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Corridor {
    road: RoadBounds,
    blocked: Vec<Obstacle>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorridorSample {
    pub right: f64,
    pub left: f64,
    pub obstructed: bool,
}

impl Corridor {
    pub fn obstacles(&self) -> &[Obstacle] {
        &self.blocked
    }

    /// Interval valid over the whole window `[s_lo, s_hi]`.
    pub fn over(&self, s_lo: f64, s_hi: f64) -> CorridorSample {
        let mut right = f64::NEG_INFINITY;
        let mut left = f64::INFINITY;
        let secs = self.road.sections();
        for (k, sec) in secs.iter().enumerate() {
            let end = secs.get(k + 1).map_or(f64::INFINITY, |n| n.from);
            let start = if k == 0 { f64::NEG_INFINITY } else { sec.from };
            if start <= s_hi && end > s_lo {
                right = right.max(sec.right);
                left = left.min(sec.left);
            }
        }
        let mut obstructed = false;
        for o in &self.blocked {
            if o.s_start <= s_hi && o.s_end >= s_lo {
                right = right.max(o.e_y_left);
                obstructed = true;
            }
        }
        CorridorSample { right, left, obstructed }
    }

    pub fn at(&self, s: f64) -> CorridorSample {
        self.over(s, s)
    }
}

pub fn build_active_constraints(obstacles: &[Obstacle], road: &RoadBounds) -> Corridor {
    Corridor { road: road.clone(), blocked: merge_obstacles(obstacles) }
}

/// Raw corridor interval per predicted path distance. The vehicle occupies
/// `[s − rear, s + front]` around each sample.
pub fn discretize_tube(corridor: &Corridor, s_pred: &[f64], rear: f64, front: f64) -> Vec<CorridorSample> {
    s_pred.iter().map(|&s| corridor.over(s - rear, s + front)).collect()
}

/// `Φ^i = A_d^i + B_d^i K^i` with the schedule's gain for each step.
pub fn error_transition(models: &[StepModel], gains: &GainSchedule) -> Result<Vec<Mat5>> {
    if gains.short.len() != gains.n_control + 1 {
        return Err(Error::Dimension(format!(
            "gain schedule has {} short gains for a control horizon of {}",
            gains.short.len(),
            gains.n_control
        )));
    }
    Ok(models.iter().enumerate().map(|(i, m)| closed_loop(m, &gains.gain5(i))).collect())
}

/// Lower/upper rows of the collision constraint: `−e_y ≤ …` and `e_y ≤ …`.
pub const COLLISION_ROWS: [[f64; 5]; 2] = [[0.0, 0.0, 0.0, -1.0, 0.0], [0.0, 0.0, 0.0, 1.0, 0.0]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TighteningHorizon {
    /// Margins computed up to `N_c` and held constant afterwards.
    #[default]
    FrozenTail,
    /// Margins computed for every prediction step.
    FullHorizon,
}

impl TighteningHorizon {
    fn steps(self, n_control: usize, n_pred: usize) -> usize {
        match self {
            TighteningHorizon::FrozenTail => n_control,
            TighteningHorizon::FullHorizon => n_pred,
        }
    }
}

/// Margins `[h_lower, h_upper]` per step `i = 0..=N_p`.
pub type Margins = Vec<[f64; 2]>;

fn row_times(row: &[f64; 5], m: &Mat5) -> [f64; 5] {
    let mut out = [0.0; 5];
    for (j, o) in out.iter_mut().enumerate() {
        *o = (0..5).map(|k| row[k] * m[(k, j)]).sum();
    }
    out
}

fn hold_tail(mut margins: Margins, computed: usize, n_pred: usize) -> Margins {
    let last = margins[computed];
    margins.resize(n_pred + 1, last);
    margins
}

/// Propagation maps `Φ^{i−1} ⋯ Φ^{m+1}` of every disturbance `w^m`, `m < i`,
/// for each step `i = 1..=n`.
fn propagation_maps(phis: &[Mat5], n: usize) -> Vec<Vec<Mat5>> {
    let mut maps: Vec<Mat5> = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for i in 1..=n {
        for m in maps.iter_mut() {
            *m = phis[i - 1] * *m;
        }
        maps.push(Mat5::identity());
        out.push(maps.clone());
    }
    out
}

/// Worst-case error along each collision row from the closed-form support
/// of the box, accumulated through the closed-loop transitions.
pub fn tightening_margins(phis: &[Mat5], w: &DisturbanceSet, n_control: usize, mode: TighteningHorizon) -> Margins {
    let n_pred = phis.len();
    let n = mode.steps(n_control, n_pred).min(n_pred);
    let mut margins = vec![[0.0; 2]; n + 1];
    for (i, maps) in propagation_maps(phis, n).iter().enumerate() {
        for (r, row) in COLLISION_ROWS.iter().enumerate() {
            margins[i + 1][r] = maps.iter().map(|m| w.support(&row_times(row, m))).sum();
        }
    }
    hold_tail(margins, n, n_pred)
}

/// Same margins, each support evaluated by an explicit LP. Increments
/// `lp_count` once per program solved.
pub fn tightening_margins_lp(
    phis: &[Mat5],
    w: &DisturbanceSet,
    n_control: usize,
    mode: TighteningHorizon,
    lp_count: &mut usize,
) -> Result<Margins> {
    let n_pred = phis.len();
    let n = mode.steps(n_control, n_pred).min(n_pred);
    let mut margins = vec![[0.0; 2]; n + 1];
    let maps = propagation_maps(phis, n);
    for (r, row) in COLLISION_ROWS.iter().enumerate() {
        // support of S^0 = {0}
        margins[0][r] = box_support_lp(&[], &[])?;
        *lp_count += 1;
        for i in 1..=n {
            // support of Φ^{i−1} S^{i−1}, one program over the stacked disturbances
            let earlier = &maps[i - 1][..i - 1];
            let stacked: Vec<f64> = earlier.iter().flat_map(|m| row_times(row, m)).collect();
            let bounds: Vec<f64> = earlier.iter().flat_map(|_| w.half_widths).collect();
            let propagated = box_support_lp(&stacked, &bounds)?;
            *lp_count += 1;
            let fresh = box_support_lp(row, &w.half_widths)?;
            *lp_count += 1;
            margins[i][r] = propagated + fresh;
        }
    }
    Ok(hold_tail(margins, n, n_pred))
}

/// `(wd / 2)|cos e_φ| + a|sin e_φ|`.
pub fn f_width(e_phi: f64, params: &VehicleParams) -> f64 {
    0.5 * params.width * e_phi.cos().abs() + params.a * e_phi.sin().abs()
}

/// Per-step admissible lateral-error intervals after tightening.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TubeBounds {
    pub raw: Vec<(f64, f64)>,
    pub margins: Margins,
    pub tightened: Vec<(f64, f64)>,
    pub width: Vec<f64>,
    /// Final `(e_y,min, e_y,max)` used by the optimiser.
    pub bounds: Vec<(f64, f64)>,
    pub infeasible: Vec<bool>,
    pub obstructed: Vec<bool>,
}

fn clip_interval(lo: f64, hi: f64) -> ((f64, f64), bool) {
    if lo <= hi {
        ((lo, hi), false)
    } else {
        let mid = 0.5 * (lo + hi);
        ((mid, mid), true)
    }
}

pub fn tighten_bounds(raw: &[CorridorSample], margins: &Margins) -> Result<(Vec<(f64, f64)>, Vec<bool>)> {
    if raw.len() != margins.len() {
        return Err(Error::Dimension(format!("{} corridor samples for {} margins", raw.len(), margins.len())));
    }
    Ok(raw
        .iter()
        .zip(margins)
        .map(|(c, h)| clip_interval(c.right + h[0].max(0.0), c.left - h[1].max(0.0)))
        .unzip())
}

pub fn convexify_width(
    raw: &[CorridorSample],
    margins: Margins,
    tightened: Vec<(f64, f64)>,
    tightened_empty: Vec<bool>,
    e_phi_prev: &[f64],
    params: &VehicleParams,
    vehicle_width: Option<f64>,
) -> Result<TubeBounds> {
    if e_phi_prev.len() != tightened.len() {
        return Err(Error::Dimension(format!("{} heading samples for {} steps", e_phi_prev.len(), tightened.len())));
    }
    let width: Vec<f64> = e_phi_prev.iter().map(|&e| f_width(e, params)).collect();
    let vehicle_width = vehicle_width.unwrap_or(params.width);
    let mut bounds = Vec::with_capacity(width.len());
    let mut infeasible = Vec::with_capacity(width.len());
    for (i, (&(lo, hi), &f)) in tightened.iter().zip(&width).enumerate() {
        let (iv, empty) = clip_interval(lo + f, hi - f);
        let too_narrow = raw[i].left - raw[i].right < vehicle_width;
        bounds.push(iv);
        infeasible.push(empty || tightened_empty[i] || too_narrow);
    }
    Ok(TubeBounds {
        raw: raw.iter().map(|c| (c.right, c.left)).collect(),
        margins,
        tightened,
        width,
        bounds,
        infeasible,
        obstructed: raw.iter().map(|c| c.obstructed).collect(),
    })
}

/// Corridor sampling, tightening and width correction in one pass.
#[allow(clippy::too_many_arguments)]
pub fn build_tube(
    corridor: &Corridor,
    s_pred: &[f64],
    e_phi_prev: &[f64],
    phis: &[Mat5],
    w: &DisturbanceSet,
    n_control: usize,
    params: &VehicleParams,
) -> Result<TubeBounds> {
    let raw = discretize_tube(corridor, s_pred, params.b, params.a);
    let margins = tightening_margins(phis, w, n_control, TighteningHorizon::FrozenTail);
    let (tightened, empty) = tighten_bounds(&raw, &margins)?;
    convexify_width(&raw, margins, tightened, empty, e_phi_prev, params, None)
}

/// Shifts a nominal state sequence by one step, holding the last entry.
pub fn shifted_component(states: &[Vec5], component: usize, len: usize) -> Vec<f64> {
    (0..len).map(|i| states[(i + 1).min(states.len() - 1)][component]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::RoadSection;
    use approx::assert_relative_eq;
    use nalgebra::Matrix5;

    fn obstacle(a: f64, b: f64) -> Obstacle {
        Obstacle::new(a, b, -0.9, 0.9).unwrap()
    }

    #[test]
    fn stretch_by_region() {
        let g = TimeGrid::default();
        let near = stretch_obstacles(&[obstacle(5.0, 10.0)], 0.0, 18.0, &g)[0];
        assert_relative_eq!(near.s_start, 4.46, max_relative = 1e-14);
        assert_relative_eq!(near.s_end, 10.54, max_relative = 1e-14);
        let far = stretch_obstacles(&[obstacle(40.0, 50.0)], 0.0, 18.0, &g)[0];
        assert_relative_eq!(far.s_start, 36.4, max_relative = 1e-14);
        assert_relative_eq!(far.s_end, 53.6, max_relative = 1e-14);
        assert!(far.stretched);
    }

    #[test]
    fn merge_overlapping() {
        let m = merge_obstacles(&[obstacle(10.0, 20.0), Obstacle::new(18.0, 25.0, -0.5, 1.2).unwrap(), obstacle(40.0, 41.0)]);
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].s_start, m[0].s_end, m[0].e_y_right, m[0].e_y_left), (10.0, 25.0, -0.9, 1.2));
    }

    #[test]
    fn corridor_shapes() {
        let road = RoadBounds::uniform(-1.8, 5.4);
        let empty = build_active_constraints(&[], &road);
        assert_eq!(empty.at(30.0), CorridorSample { right: -1.8, left: 5.4, obstructed: false });
        let c = build_active_constraints(&[obstacle(40.0, 50.0)], &road);
        assert_eq!(c.at(45.0), CorridorSample { right: 0.9, left: 5.4, obstructed: true });
        assert_eq!(c.at(39.0).right, -1.8);
        assert_eq!(c.over(37.0, 40.5).right, 0.9);

        let road2 = RoadBounds::new(vec![
            RoadSection { from: 0.0, right: -1.8, left: 5.4 },
            RoadSection { from: 60.0, right: -1.0, left: 4.0 },
        ])
        .unwrap();
        let c2 = build_active_constraints(&[], &road2);
        let s = c2.over(58.0, 61.0);
        assert_eq!((s.right, s.left), (-1.0, 4.0));
    }

    #[test]
    fn sampling_never_skips_an_obstacle() {
        let g = TimeGrid::default();
        let v = 18.0;
        let offsets = g.offsets();
        for phase in 0..40 {
            let s0 = phase as f64 * 0.137;
            let s_pred: Vec<f64> = offsets.iter().map(|t| s0 + v * t).collect();
            for start in [5.0, 12.3, 14.2, 20.0, 29.9, 33.3] {
                let o = Obstacle::new(start, start + 0.1, -0.9, 0.9).unwrap();
                if o.s_end > s_pred[g.n_pred()] || o.s_start < s0 {
                    continue;
                }
                let st = stretch_obstacles(&[o], s0, v, &g)[0];
                assert!(s_pred.iter().any(|&s| s >= st.s_start && s <= st.s_end), "phase {phase} start {start}");
            }
        }
    }

    #[test]
    fn zero_gain_transition_is_open_loop() {
        let g = TimeGrid::default();
        let p = VehicleParams::default();
        let models = crate::ltv::build_prediction_models(
            &Default::default(),
            None,
            &crate::path::ReferencePath::straight(200.0),
            &p,
            &g,
            18.0,
        )
        .unwrap();
        let phis = error_transition(&models, &GainSchedule::zero(&g)).unwrap();
        for (phi, m) in phis.iter().zip(&models) {
            assert_eq!(*phi, m.a_d);
        }
    }

    #[test]
    fn first_margin_is_lateral_half_width() {
        let phis = vec![Matrix5::identity() * 0.9; 33];
        let h = tightening_margins(&phis, &DisturbanceSet::default(), 10, TighteningHorizon::FrozenTail);
        assert_eq!(h.len(), 34);
        assert_eq!(h[0], [0.0, 0.0]);
        assert_relative_eq!(h[1][0], 0.025, max_relative = 1e-15);
        assert_relative_eq!(h[2][1], 0.025 * 1.9, max_relative = 1e-14);
        assert_eq!(h[33], h[10]);
        let zero = tightening_margins(&phis, &DisturbanceSet::zero(), 10, TighteningHorizon::FullHorizon);
        assert!(zero.iter().all(|m| *m == [0.0, 0.0]));
    }

    #[test]
    fn lp_path_counts_programs() {
        let mut phis = vec![Matrix5::identity() * 0.95; 33];
        phis[3][(3, 2)] = 0.54;
        let w = DisturbanceSet::default();
        let mut count = 0;
        let lp = tightening_margins_lp(&phis, &w, 10, TighteningHorizon::FrozenTail, &mut count).unwrap();
        assert_eq!(count, 42);
        let closed = tightening_margins(&phis, &w, 10, TighteningHorizon::FrozenTail);
        for (a, b) in lp.iter().zip(&closed) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
        let mut full = 0;
        tightening_margins_lp(&phis, &w, 10, TighteningHorizon::FullHorizon, &mut full).unwrap();
        assert_eq!(full, 134);
    }

    #[test]
    fn width_anchors() {
        let p = VehicleParams::default();
        assert_relative_eq!(f_width(0.0, &p), 0.8475, max_relative = 1e-15);
        assert_relative_eq!(f_width(std::f64::consts::FRAC_PI_2, &p), 1.04, max_relative = 1e-15);
        assert_relative_eq!(f_width(0.2, &p), 0.8475 * 0.2f64.cos() + 1.04 * 0.2f64.sin(), max_relative = 1e-15);
    }

    #[test]
    fn nested_intervals_and_empty_flag() {
        let p = VehicleParams::default();
        let raw = vec![
            CorridorSample { right: -1.8, left: 5.4, obstructed: false },
            CorridorSample { right: 0.9, left: 2.0, obstructed: true },
        ];
        let margins = vec![[0.1, 0.1], [0.3, 0.3]];
        let (t, e) = tighten_bounds(&raw, &margins).unwrap();
        let tube = convexify_width(&raw, margins, t, e, &[0.0, 0.0], &p, None).unwrap();
        let (lo, hi) = tube.bounds[0];
        assert!(lo >= tube.tightened[0].0 && hi <= tube.tightened[0].1);
        assert!(tube.tightened[0].0 >= tube.raw[0].0 && tube.tightened[0].1 <= tube.raw[0].1);
        assert!(!tube.infeasible[0]);
        assert!(tube.infeasible[1]);
        assert_eq!(tube.bounds[1].0, tube.bounds[1].1);
    }
}
