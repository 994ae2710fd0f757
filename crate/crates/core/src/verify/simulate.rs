use std::collections::HashMap;
use std::fmt::Write as _;

use super::VerifyError;
use crate::cesaro::{cesaro_cost, CesaroEvaluation};
use crate::cli::fmt_num;
use crate::model::{orbit_distance, Trajectory};
use crate::ocp::OcpSolver;
use crate::rotation::RotatedProblem;

/// Closed loop under the receding-horizon feedback with per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRun {
    pub horizon: usize,
    pub steps: usize,
    pub trajectory: Trajectory,
    /// `‖(x_k, u_k)‖_Π` for `k < K`.
    pub orbit_dist: Vec<f64>,
    /// `‖x_k‖_{Π_X}` for `k ≤ K`.
    pub state_dist: Vec<f64>,
    /// `V_N(x_k)` for `k ≤ K`.
    pub values: Vec<f64>,
    /// `Ṽ_N(x_k)` for `k ≤ K`.
    pub rotated_values: Vec<f64>,
    /// `ℓ̃(x_k, u_k)` for `k < K`.
    pub rotated_stage_costs: Vec<f64>,
    /// Cesàro evaluation over all `K` steps (absent for `K = 0`).
    pub cesaro: Option<CesaroEvaluation>,
}

impl ClosedLoopRun {
    /// Columns `k, x*, u*, stage_cost, orbit_dist, V_N, V_tilde_N`; the last
    /// row (k = K) leaves input, stage-cost and distance fields empty.
    pub fn to_csv(&self) -> String {
        let n = self.trajectory.states[0].len();
        let m = self.trajectory.inputs.first().map_or(0, Vec::len);
        let mut out = String::from("k");
        for d in 0..n {
            let _ = write!(out, ",x{d}");
        }
        for d in 0..m {
            let _ = write!(out, ",u{d}");
        }
        out.push_str(",stage_cost,orbit_dist,V_N,V_tilde_N\n");
        for k in 0..=self.steps {
            let _ = write!(out, "{k}");
            for v in &self.trajectory.states[k] {
                let _ = write!(out, ",{}", fmt_num(*v));
            }
            if k < self.steps {
                for v in &self.trajectory.inputs[k] {
                    let _ = write!(out, ",{}", fmt_num(*v));
                }
                let _ = write!(
                    out,
                    ",{},{}",
                    fmt_num(self.trajectory.stage_costs[k]),
                    fmt_num(self.orbit_dist[k])
                );
            } else {
                for _ in 0..m + 2 {
                    out.push(',');
                }
            }
            let _ = writeln!(out, ",{},{}", fmt_num(self.values[k]), fmt_num(self.rotated_values[k]));
        }
        out
    }

    /// Longest run of consecutive steps with `‖(x_k,u_k)‖_Π > eps`.
    pub fn longest_excursion(&self, eps: f64) -> usize {
        let mut best = 0;
        let mut cur = 0;
        for &d in &self.orbit_dist {
            if d > eps {
                cur += 1;
                best = best.max(cur);
            } else {
                cur = 0;
            }
        }
        best
    }
}

fn key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// `K` steps of `x⁺ = f(x, μ_N(x))` from `x0`.
pub fn simulate_closed_loop(
    solver: &dyn OcpSolver,
    rot: &RotatedProblem,
    x0: &[f64],
    steps: usize,
) -> Result<ClosedLoopRun, VerifyError> {
    simulate_with_policy(solver, rot, x0, steps, &|_, _, u| u.to_vec())
}

/// Like [`simulate_closed_loop`], but applies `policy(k, x_k, μ_N(x_k))`.
/// Values and rotated values are still those of the optimal problem.
pub fn simulate_with_policy(
    solver: &dyn OcpSolver,
    rot: &RotatedProblem,
    x0: &[f64],
    steps: usize,
    policy: &dyn Fn(usize, &[f64], &[f64]) -> Vec<f64>,
) -> Result<ClosedLoopRun, VerifyError> {
    let model = solver.model();
    let orbit = rot.orbit();
    let horizon = solver.horizon();
    // The solvers are deterministic, so repeated states reuse their solution.
    let mut cache: HashMap<Vec<u64>, (f64, Vec<f64>)> = HashMap::new();
    let mut solve = |k: usize, x: &[f64]| -> Result<(f64, Vec<f64>), VerifyError> {
        if let Some(hit) = cache.get(&key(x)) {
            return Ok(hit.clone());
        }
        let sol = solver.solve(x).map_err(|source| VerifyError::Infeasible {
            step: k,
            state: x.to_vec(),
            source,
        })?;
        let entry = (sol.value, sol.inputs[0].clone());
        cache.insert(key(x), entry.clone());
        Ok(entry)
    };
    let mut states = vec![x0.to_vec()];
    let mut inputs = Vec::with_capacity(steps);
    let mut stage_costs = Vec::with_capacity(steps);
    let mut values = Vec::with_capacity(steps + 1);
    let mut orbit_dist = Vec::with_capacity(steps);
    let mut rotated_stage_costs = Vec::with_capacity(steps);
    for k in 0..=steps {
        let x = states[k].clone();
        let (v, u_opt) = solve(k, &x)?;
        values.push(v);
        if k == steps {
            break;
        }
        let u = policy(k, &x, &u_opt);
        stage_costs.push(model.stage_cost(&x, &u));
        rotated_stage_costs.push(rot.stage_cost(&x, &u));
        orbit_dist.push(orbit_distance(orbit, &x, Some(&u))?.distance);
        states.push(model.step(&x, &u));
        inputs.push(u);
    }
    let state_dist = states
        .iter()
        .map(|x| orbit_distance(orbit, x, None).map(|d| d.distance))
        .collect::<Result<Vec<_>, _>>()?;
    let rotated_values = values
        .iter()
        .zip(&states)
        .map(|(&v, x)| rot.rotated_from_original(v, x, horizon))
        .collect();
    let first_infeasible = states
        .iter()
        .position(|x| !model.state_box().contains(x, crate::model::BOX_TOL));
    let cesaro = if steps > 0 {
        Some(cesaro_cost(&stage_costs, steps)?)
    } else {
        None
    };
    Ok(ClosedLoopRun {
        horizon,
        steps,
        trajectory: Trajectory {
            states,
            inputs,
            stage_costs,
            first_infeasible,
        },
        orbit_dist,
        state_dist,
        values,
        rotated_values,
        rotated_stage_costs,
        cesaro,
    })
}
