use std::fmt::Write as _;

use serde::Serialize;

use super::{simulate_closed_loop, VerifyError};
use crate::cesaro::{CesaroValueTable, ZERO_MEAN_TOL};
use crate::cli::fmt_num;
use crate::model::{orbit_distance, SystemModel};
use crate::ocp::{build_solver, SolverChoice, TerminalIngredients};
use crate::report::{CheckReport, Status};
use crate::rotation::{Envelope, RotatedProblem};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerformanceRow {
    pub horizon: usize,
    pub v_n: f64,
    /// `V_N(x0) - V_Π`.
    pub v_n_shifted: f64,
    /// `J^ces_K` of the closed loop.
    pub j_cl: f64,
    pub j_cl_converged: bool,
    pub v_uc: f64,
    /// `V_N(x0) - V_Π - V^uc`.
    pub gap: f64,
}

pub fn performance_csv(rows: &[PerformanceRow]) -> String {
    let mut out = String::from("N,V_N,V_N_minus_V_Pi,J_cl_approx,V_uc_approx,gap\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.horizon,
            fmt_num(r.v_n),
            fmt_num(r.v_n_shifted),
            fmt_num(r.j_cl),
            fmt_num(r.v_uc),
            fmt_num(r.gap)
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct PerformanceOptions {
    pub k_long: usize,
    pub tol: f64,
    /// `γ_V` for the upper bound on `V^uc`; the bound is skipped when absent.
    pub gamma_v: Option<Envelope>,
}

impl Default for PerformanceOptions {
    fn default() -> Self {
        Self {
            k_long: 10_000,
            tol: 5e-3,
            gamma_v: None,
        }
    }
}

/// Closed-loop Cesàro cost against `V_N(x0) - V_Π`, the bounds on `V^uc`,
/// and monotonicity of the gap in `N`. A failed tail test makes the report
/// inconclusive unless some check fails outright.
pub fn check_performance(
    model: &SystemModel,
    terminal: &TerminalIngredients,
    rot: &RotatedProblem,
    choice: &SolverChoice,
    horizons: &[usize],
    x0: &[f64],
    vuc: &CesaroValueTable,
    opts: &PerformanceOptions,
) -> Result<(CheckReport, Vec<PerformanceRow>), VerifyError> {
    if rot.ell_orbit_avg().abs() >= ZERO_MEAN_TOL {
        return Err(VerifyError::NonZeroOrbitCost(rot.ell_orbit_avg()));
    }
    let tol = opts.tol;
    let mut report = CheckReport::new("performance");
    report.set_meta("tolerance", tol);
    report.set_meta("k_long", opts.k_long);
    report.set_meta("x0", x0.to_vec());
    let orbit = rot.orbit();
    let v_pi = rot.v_orbit_avg();
    let lam_pi = rot.lambda_orbit_avg();
    let v_uc = vuc.value_at(x0);
    let lower = -rot.storage().eval(x0) + lam_pi;
    report.set_margin("v_uc", v_uc);
    report.set_margin("v_uc_lower_bound", lower);
    if v_uc < lower - tol {
        report.fail("uc-lower-bound", None, x0, v_uc - lower, lower - v_uc - tol);
    }
    let near = orbit_distance(orbit, x0, None)?;
    let mut horizons = horizons.to_vec();
    horizons.sort_unstable();
    horizons.dedup();
    let mut rows = Vec::with_capacity(horizons.len());
    let mut inconclusive = false;
    for &n in &horizons {
        let solver = build_solver(model, terminal, n, choice)?;
        let run = simulate_closed_loop(solver.as_ref(), rot, x0, opts.k_long)?;
        let ces = run.cesaro.as_ref().ok_or(VerifyError::InvalidInput("k_long must be positive".into()))?;
        let v_n = run.values[0];
        let row = PerformanceRow {
            horizon: n,
            v_n,
            v_n_shifted: v_n - v_pi,
            j_cl: ces.cesaro_cost,
            j_cl_converged: ces.converged,
            v_uc,
            gap: v_n - v_pi - v_uc,
        };
        if !ces.converged {
            inconclusive = true;
            report.note(format!("N={n}: tail gap {} above tolerance", ces.tail_gap));
        }
        let excess = row.j_cl - row.v_n_shifted;
        report.max_margin("max_closed_loop_excess", excess);
        if excess > tol {
            report.fail("closed-loop-bound", Some(n), x0, excess, excess - tol);
        }
        let mut orbit_values = Vec::with_capacity(orbit.period());
        for i in 0..orbit.period() {
            orbit_values.push(solver.solve(orbit.state(i))?.value);
        }
        let avg = orbit_values.iter().sum::<f64>() / orbit.period() as f64;
        let dev = (avg - v_pi).abs();
        report.max_margin("max_orbit_average_deviation", dev);
        if dev > tol {
            report.fail("orbit-average-identity", Some(n), &[], avg - v_pi, dev - tol);
        }
        let i_x = near.nearest_index;
        let xi = orbit.state(i_x);
        let anchored = orbit_values[i_x] + rot.storage().eval(xi) - lam_pi - v_pi;
        report.max_margin("max_anchor_deviation", anchored.abs());
        if anchored.abs() > tol {
            report.fail("orbit-anchor-identity", Some(n), xi, anchored, anchored.abs() - tol);
        }
        if let Some(g) = &opts.gamma_v {
            let upper = g.eval(near.distance) + orbit_values[i_x] - v_pi;
            if v_uc > upper + tol {
                report.fail("uc-upper-bound", Some(n), x0, v_uc - upper, v_uc - upper - tol);
            }
        }
        rows.push(row);
    }
    if opts.gamma_v.is_none() {
        report.note("no gamma_V envelope supplied; upper bound on V_uc not checked");
    }
    for w in rows.windows(2) {
        let inc = w[1].gap - w[0].gap;
        report.max_margin("max_gap_increase", inc);
        if inc > tol {
            report.fail("gap-monotone", Some(w[1].horizon), x0, inc, inc - tol);
        }
    }
    report.set_meta("rows", serde_json::to_value(&rows).unwrap_or_default());
    let mut report = report.finish();
    if inconclusive && report.status == Status::Pass {
        report.status = Status::Inconclusive;
    }
    Ok((report, rows))
}
