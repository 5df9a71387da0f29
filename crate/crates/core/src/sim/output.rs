//! Run artifacts: `run.csv`, `metrics.txt`, `envelope.csv` and a plot script.

use std::fmt::Write as _;
use std::path::Path;

use crate::envelope::{assemble_stab_constraints, StabConstraints};
use crate::error::{Error, Result};
use crate::sim::metrics::Metrics;
use crate::sim::run::{LogRow, RunLog};
use crate::sim::scenario::ScenarioConfig;

pub const CSV_COLUMNS: [&str; 22] = [
    "t", "x", "y", "phi", "ydot_p", "phidot", "e_phi", "e_y", "s_d", "delta", "u_star", "c0", "eps_coll",
    "eps_stab_1", "eps_stab_2", "eps_stab_3", "eps_stab_4", "ey_min_0", "ey_max_0", "h_nc", "ay", "solve_ms",
];

fn row_values(r: &LogRow) -> [f64; 22] {
    [
        r.t, r.x, r.y, r.phi, r.ydot_p, r.phidot, r.e_phi, r.e_y, r.s_d, r.delta, r.u_star, r.c0, r.eps_coll,
        r.eps_stab[0], r.eps_stab[1], r.eps_stab[2], r.eps_stab[3], r.ey_min_0, r.ey_max_0, r.h_nc, r.ay, r.solve_ms,
    ]
}

fn row_from_values(v: &[f64]) -> LogRow {
    LogRow {
        t: v[0],
        x: v[1],
        y: v[2],
        phi: v[3],
        ydot_p: v[4],
        phidot: v[5],
        e_phi: v[6],
        e_y: v[7],
        s_d: v[8],
        delta: v[9],
        u_star: v[10],
        c0: v[11],
        eps_coll: v[12],
        eps_stab: [v[13], v[14], v[15], v[16]],
        ey_min_0: v[17],
        ey_max_0: v[18],
        h_nc: v[19],
        ay: v[20],
        solve_ms: v[21],
    }
}

pub fn run_csv_string(rows: &[LogRow]) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let values = row_values(r);
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

pub fn parse_run_csv(text: &str) -> Result<Vec<LogRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Config("empty run csv".into()))?;
    if header.trim() != CSV_COLUMNS.join(",") {
        return Err(Error::Config(format!("unexpected run csv header: {header}")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let values: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("run csv line {}: {e}", n + 2)))?;
        if values.len() != CSV_COLUMNS.len() {
            return Err(Error::Config(format!(
                "run csv line {}: expected {} fields, found {}",
                n + 2,
                CSV_COLUMNS.len(),
                values.len()
            )));
        }
        rows.push(row_from_values(&values));
    }
    Ok(rows)
}

pub fn write_run_csv(rows: &[LogRow], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &run_csv_string(rows))
}

pub fn read_run_csv(path: impl AsRef<Path>) -> Result<Vec<LogRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_run_csv(&text)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Vertices of the envelope polygon in the `(ẏ_p, φ̇)` plane, counter-clockwise.
pub fn envelope_polygon(env: &StabConstraints) -> Vec<[f64; 2]> {
    let mut vertices = Vec::new();
    for i in 0..4 {
        for j in i + 1..4 {
            let (a1, b1, g1) = (env.e[(i, 0)], env.e[(i, 1)], env.g[i]);
            let (a2, b2, g2) = (env.e[(j, 0)], env.e[(j, 1)], env.g[j]);
            let det = a1 * b2 - a2 * b1;
            if det.abs() < 1e-12 {
                continue;
            }
            let v = [(g1 * b2 - g2 * b1) / det, (a1 * g2 - a2 * g1) / det];
            let inside = (0..4).all(|k| env.e[(k, 0)] * v[0] + env.e[(k, 1)] * v[1] <= env.g[k] + 1e-9);
            if inside {
                vertices.push(v);
            }
        }
    }
    let cx = vertices.iter().map(|v| v[0]).sum::<f64>() / vertices.len().max(1) as f64;
    let cy = vertices.iter().map(|v| v[1]).sum::<f64>() / vertices.len().max(1) as f64;
    vertices.sort_by(|p, q| (p[1] - cy).atan2(p[0] - cx).total_cmp(&(q[1] - cy).atan2(q[0] - cx)));
    vertices
}

pub fn envelope_csv_string(env: &StabConstraints) -> String {
    let mut out = String::from("ydot_p,phidot\n");
    for v in envelope_polygon(env) {
        writeln!(out, "{},{}", v[0], v[1]).expect("writing to a String");
    }
    out
}

pub const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Panels for one run directory: path, lateral error, steering, lateral acceleration, phase plane."""
import csv
import math
import sys
from pathlib import Path

import matplotlib.pyplot as plt


def load(path):
    with open(path) as f:
        rows = list(csv.DictReader(f))
    return {k: [float(r[k]) for r in rows] for k in rows[0]} if rows else {}


def main():
    run_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
    run = load(run_dir / "run.csv")
    env = load(run_dir / "envelope.csv")

    fig, ax = plt.subplots(3, 2, figsize=(12, 11))
    ax = ax.ravel()
    ax[0].plot(run["x"], run["y"])
    ax[0].set_title("global position")
    ax[0].set_xlabel("x (m)")
    ax[0].set_ylabel("y (m)")
    ax[0].axis("equal")

    ax[1].plot(run["s_d"], run["e_y"], label="e_y")
    ax[1].plot(run["s_d"], run["ey_min_0"], "k:", lw=0.8, label="tube")
    ax[1].plot(run["s_d"], run["ey_max_0"], "k:", lw=0.8)
    ax[1].set_xlabel("s_d (m)")
    ax[1].set_ylabel("e_y (m)")
    ax[1].legend()

    ax[2].plot(run["t"], [math.degrees(d) for d in run["delta"]])
    ax[2].set_xlabel("t (s)")
    ax[2].set_ylabel("steering (deg)")

    ax[3].plot(run["t"], run["ay"])
    ax[3].set_xlabel("t (s)")
    ax[3].set_ylabel("a_y (m/s^2)")

    if env:
        xs = env["ydot_p"] + env["ydot_p"][:1]
        ys = env["phidot"] + env["phidot"][:1]
        ax[4].plot(xs, ys, "r-", label="envelope")
    ax[4].plot(run["ydot_p"], run["phidot"], ".", ms=2, label="closed loop")
    ax[4].set_xlabel("ydot_p (m/s)")
    ax[4].set_ylabel("phidot (rad/s)")
    ax[4].legend()

    ax[5].plot(run["t"], run["h_nc"])
    ax[5].set_xlabel("t (s)")
    ax[5].set_ylabel("tightening at N_c (m)")

    fig.tight_layout()
    fig.savefig(run_dir / "panels.png", dpi=120)


if __name__ == "__main__":
    main()
"#;

/// Writes every run artifact into `out_dir`, creating it when missing.
pub fn emit_outputs(log: &RunLog, metrics: &Metrics, cfg: &ScenarioConfig, out_dir: impl AsRef<Path>) -> Result<()> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    write_run_csv(&log.rows, dir.join("run.csv"))?;
    write_file(&dir.join("metrics.txt"), &metrics.to_string())?;
    let env = assemble_stab_constraints(&cfg.vehicle, cfg.speed);
    write_file(&dir.join("envelope.csv"), &envelope_csv_string(&env))?;
    write_file(&dir.join("plot_run.py"), PLOT_SCRIPT)?;
    write_file(&dir.join("scenario.toml"), &cfg.to_toml_string()?)?;
    Ok(())
}

/// Parses `key = value` lines as written by [`Metrics`]'s `Display`.
pub fn parse_metrics(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::{lat_vel_rows, yaw_rate_bound};
    use crate::vehicle::VehicleParams;

    fn sample_rows() -> Vec<LogRow> {
        (0..5)
            .map(|k| LogRow {
                t: k as f64 * 0.03,
                e_y: 0.1 * k as f64 - 1.0 / 3.0,
                eps_stab: [0.0, 1e-17, f64::NAN, 2.5],
                ay: f64::INFINITY,
                phi: -0.0,
                ..Default::default()
            })
            .collect()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = sample_rows();
        let text = run_csv_string(&rows);
        assert_eq!(text.lines().count(), rows.len() + 1);
        let back = parse_run_csv(&text).unwrap();
        for (a, b) in rows.iter().zip(&back) {
            for (x, y) in row_values(a).iter().zip(row_values(b).iter()) {
                assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
            }
        }
    }

    #[test]
    fn header_is_fixed() {
        let text = run_csv_string(&[]);
        assert_eq!(
            text.trim(),
            "t,x,y,phi,ydot_p,phidot,e_phi,e_y,s_d,delta,u_star,c0,eps_coll,eps_stab_1,eps_stab_2,eps_stab_3,eps_stab_4,ey_min_0,ey_max_0,h_nc,ay,solve_ms"
        );
        assert!(parse_run_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn polygon_matches_envelope_lines() {
        let p = VehicleParams::default();
        let env = assemble_stab_constraints(&p, 18.0);
        let poly = envelope_polygon(&env);
        assert_eq!(poly.len(), 4);
        let (upper, _, m) = lat_vel_rows(&p, 18.0);
        let r = yaw_rate_bound(p.mu, 18.0);
        for v in &poly {
            assert!((v[1].abs() - r).abs() < 1e-12);
            let lat = upper[0] * v[0] + upper[1] * v[1];
            assert!((lat.abs() - m).abs() < 1e-9);
        }
    }

    #[test]
    fn unwritable_directory_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let blocker = tmp.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        assert!(write_run_csv(&[], blocker.join("run.csv")).is_err());
    }
}
