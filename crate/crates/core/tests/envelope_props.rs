use approx::assert_relative_eq;
use proptest::prelude::*;
use rmpc_core::envelope::{assemble_stab_constraints_with, YawBound};
use rmpc_core::ltv::Vec5;
use rmpc_core::{assemble_stab_constraints, tire_saturation_angle, yaw_rate_bound, StabConstraints, VehicleParams};

/// Every pairwise intersection of the four lines in the `(ẏ_p, φ̇)` plane.
fn line_intersections(stab: &StabConstraints) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for i in 0..4 {
        for j in i + 1..4 {
            let (a1, b1, c1) = (stab.e[(i, 0)], stab.e[(i, 1)], stab.g[i]);
            let (a2, b2, c2) = (stab.e[(j, 0)], stab.e[(j, 1)], stab.g[j]);
            let det = a1 * b2 - a2 * b1;
            if det.abs() > 1e-12 {
                out.push(((c1 * b2 - c2 * b1) / det, (a1 * c2 - a2 * c1) / det));
            }
        }
    }
    out
}

fn point(v: f64, r: f64) -> Vec5 {
    Vec5::new(v, r, 0.0, 0.0, 0.0)
}

proptest! {
    #[test]
    fn envelope_is_a_bounded_polygon_around_the_origin(
        mu in 0.2..1.1f64,
        speed in 5.0..40.0f64,
        axle in any::<bool>(),
    ) {
        let params = VehicleParams::default().with_mu(mu);
        let form = if axle { YawBound::AxleLimited } else { YawBound::NeutralSteer };
        let stab = assemble_stab_constraints_with(&params, speed, form);
        prop_assert!(stab.g.iter().all(|g| *g > 0.0));
        prop_assert!(stab.margins(&Vec5::zeros()).iter().all(|m| *m > 0.0));
        for col in 2..5 {
            prop_assert!(stab.e.column(col).iter().all(|v| *v == 0.0));
        }
        let vertices: Vec<_> = line_intersections(&stab)
            .into_iter()
            .filter(|&(v, r)| stab.margins(&point(v, r)).iter().all(|m| *m >= -1e-9))
            .collect();
        prop_assert_eq!(vertices.len(), 4);
        for &(v, r) in &vertices {
            prop_assert!(v.is_finite() && r.is_finite());
            let active = stab.margins(&point(v, r)).iter().filter(|m| m.abs() < 1e-9).count();
            prop_assert!(active >= 2);
        }
    }

    #[test]
    fn envelope_ignores_path_errors(e_phi in -1.0..1.0f64, e_y in -5.0..5.0f64, s in 0.0..500.0f64) {
        let stab = assemble_stab_constraints(&VehicleParams::default(), 18.0);
        let shifted = Vec5::new(0.3, 0.1, e_phi, e_y, s);
        prop_assert_eq!(stab.margins(&shifted), stab.margins(&point(0.3, 0.1)));
    }
}

#[test]
fn yaw_bound_scales_with_speed_and_friction() {
    for mu in [0.35, 0.55] {
        for speed in [12.0, 18.0, 27.0] {
            let params = VehicleParams::default().with_mu(mu);
            let stab = assemble_stab_constraints(&params, speed);
            assert_relative_eq!(stab.g[2], mu * 9.81 / speed, max_relative = 1e-14);
            assert_relative_eq!(stab.g[2] * speed / mu, yaw_rate_bound(0.55, 18.0) * 18.0 / 0.55, max_relative = 1e-12);
            let sat = tire_saturation_angle(params.c_rear, mu, params.fz_rear);
            assert_relative_eq!(stab.g[0], speed * sat, max_relative = 1e-14);
        }
    }
}

#[test]
fn lateral_velocity_rows_are_active_on_their_boundary() {
    let params = VehicleParams::default();
    let stab = assemble_stab_constraints(&params, 18.0);
    let lever = params.cp_distance() + params.b;
    let r = 0.12;
    let v = stab.g[0] + lever * r;
    assert!(stab.margins(&point(v, r))[0].abs() < 1e-12);
    assert!(stab.contains(&point(v, r)));
    assert!(!stab.contains(&point(v + 1e-6, r)));
    assert_eq!(stab.labels(), ["latvel_upper", "latvel_lower", "yaw_upper", "yaw_lower"]);
}
