use rayon::prelude::*;
use serde::Serialize;

use super::{simulate_closed_loop, ClosedLoopRun, VerifyError};
use crate::model::{orbit_distance, PeriodicOrbit, Trajectory};
use crate::ocp::OcpSolver;
use crate::report::CheckReport;
use crate::rotation::{Envelope, RotatedProblem, StorageFunction};

#[derive(Debug, Clone)]
pub struct StabilityOptions {
    pub steps: usize,
    /// Number of final steps whose largest orbit distance must fall below
    /// `conv_tol`.
    pub window: usize,
    pub conv_tol: f64,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self {
            steps: 60,
            window: 10,
            conv_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsDeltaRow {
    pub eps: f64,
    /// Largest admissible `δ` on the samples; `None` when no sample leaves
    /// the `ε`-neighbourhood.
    pub delta: Option<f64>,
}

/// Empirical `ε ↦ δ` table and convergence of every sampled closed loop.
pub fn check_stability_eps_delta(
    solver: &dyn OcpSolver,
    rot: &RotatedProblem,
    eps_list: &[f64],
    samples: &[Vec<f64>],
    opts: &StabilityOptions,
) -> Result<(CheckReport, Vec<EpsDeltaRow>), VerifyError> {
    let runs: Vec<(f64, f64, f64)> = samples
        .par_iter()
        .map(|x0| {
            let run = simulate_closed_loop(solver, rot, x0, opts.steps)?;
            let sup = run.orbit_dist.iter().copied().fold(0.0, f64::max);
            let start = run.steps.saturating_sub(opts.window);
            let tail = run.orbit_dist[start..].iter().copied().fold(0.0, f64::max);
            Ok((run.state_dist[0], sup, tail))
        })
        .collect::<Result<_, VerifyError>>()?;
    let mut report = CheckReport::new("stability-eps-delta");
    report.set_meta("samples", samples.len());
    report.set_meta("steps", opts.steps);
    report.set_meta("window", opts.window);
    report.set_meta("conv_tol", opts.conv_tol);
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let delta = runs
            .iter()
            .filter(|r| r.1 >= eps)
            .map(|r| r.0)
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))));
        if let Some(d) = delta {
            report.set_margin(format!("delta_at_eps_{eps}"), d);
            if d <= 0.0 {
                report.fail("no-delta", None, &[eps], d, eps);
            }
        }
        rows.push(EpsDeltaRow { eps, delta });
    }
    for (k, (x0, r)) in samples.iter().zip(&runs).enumerate() {
        report.max_margin("max_final_window_distance", r.2);
        if r.2 > opts.conv_tol {
            report.fail("convergence", Some(k), x0, r.2, r.2 - opts.conv_tol);
        }
    }
    report.set_meta("delta_table", serde_json::to_value(&rows).unwrap_or_default());
    Ok((report.finish(), rows))
}

/// `Q_ε = #{k < K : ‖(x_k, u_k)‖_Π ≤ ε}`.
pub fn turnpike_count(traj: &Trajectory, orbit: &PeriodicOrbit, eps: f64) -> usize {
    traj.inputs
        .iter()
        .zip(&traj.states)
        .filter(|(u, x)| orbit_distance(orbit, x, Some(u)).map_or(false, |d| d.distance <= eps))
        .count()
}

/// `2 max_x |λ(x)| + |λ_Π|` over the given state samples.
pub fn storage_constant(storage: &StorageFunction, states: &[Vec<f64>]) -> f64 {
    let m = states.iter().map(|x| storage.eval(x).abs()).fold(0.0, f64::max);
    2.0 * m + storage.orbit_average().abs()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnpikeRow {
    pub eps: f64,
    pub q: usize,
    pub steps: usize,
    pub bound: f64,
    pub holds: bool,
}

/// `Q_ε` against `K - √(2(δ + C)K) / ᾱ(ε)` with `δ` the Cesàro surplus of
/// the run over `(K+1)/2 · ℓ_Π` (at least `f64::EPSILON`).
pub fn turnpike_row(run: &ClosedLoopRun, rot: &RotatedProblem, eps: f64, c_emp: f64, alpha: &Envelope) -> TurnpikeRow {
    let k = run.steps;
    let jces = run.cesaro.as_ref().map_or(0.0, |c| c.cesaro_cost);
    let delta = (jces - (k as f64 + 1.0) / 2.0 * rot.ell_orbit_avg()).max(f64::EPSILON);
    let q = run.orbit_dist.iter().filter(|&&d| d <= eps).count();
    let a = alpha.eval(eps);
    let bound = if a > 0.0 {
        k as f64 - (2.0 * (delta + c_emp) * k as f64).sqrt() / a
    } else {
        f64::NEG_INFINITY
    };
    TurnpikeRow {
        eps,
        q,
        steps: k,
        bound,
        holds: q as f64 >= bound,
    }
}

pub fn check_turnpike(rows: &[TurnpikeRow]) -> CheckReport {
    let mut report = CheckReport::new("turnpike");
    report.set_meta("certificate", "empirical: C from storage bounds, envelope fitted");
    for (i, r) in rows.iter().enumerate() {
        report.min_margin("min_q_minus_bound", r.q as f64 - r.bound);
        if !r.holds {
            report.fail("bound", Some(i), &[r.eps], r.q as f64 - r.bound, r.bound - r.q as f64);
        }
    }
    report.set_meta("rows", serde_json::to_value(rows).unwrap_or_default());
    report.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::model::registry::example1;
    use crate::model::rollout;
    use crate::ocp::DpSolver;

    fn setup() -> (DpSolver, RotatedProblem) {
        let fx = example1();
        let s = DpSolver::new(&fx.model, &fx.terminal, 5, &GridSpec::uniform(&fx.model, 401, 401)).unwrap();
        let rot = RotatedProblem::build(&fx.model, &fx.orbit, &fx.storage, &fx.terminal).unwrap();
        (s, rot)
    }

    #[test]
    fn count_on_orbit_is_full() {
        let fx = example1();
        let u: Vec<Vec<f64>> = [1.0, -1.0, -1.0, 1.0].repeat(5).into_iter().map(|v| vec![v]).collect();
        let tr = rollout(&fx.model, &[0.0], &u).unwrap();
        assert_eq!(turnpike_count(&tr, &fx.orbit, 1e-9), 20);
    }

    #[test]
    fn held_state_is_never_near_orbit() {
        let fx = example1();
        let tr = rollout(&fx.model, &[0.5], &vec![vec![0.0]; 10]).unwrap();
        assert_eq!(turnpike_count(&tr, &fx.orbit, 0.05), 0);
    }

    #[test]
    fn eps_delta_sweep() {
        let (s, rot) = setup();
        let samples: Vec<Vec<f64>> = (0..=20).map(|i| vec![-1.0 + 0.1 * i as f64]).collect();
        let (r, rows) = check_stability_eps_delta(&s, &rot, &[0.5], &samples, &StabilityOptions::default()).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(rows[0].delta.map_or(true, |d| d > 0.0));
    }

    #[test]
    fn turnpike_on_fig_run() {
        let (s, rot) = setup();
        let fx = example1();
        let run = simulate_closed_loop(&s, &rot, &[0.3], 100).unwrap();
        assert!(turnpike_count(&run.trajectory, &fx.orbit, 0.05) >= 98);
        let c = storage_constant(rot.storage(), &[vec![-1.0], vec![0.0], vec![1.0]]);
        assert_eq!(c, 2.5);
        let row = turnpike_row(&run, &rot, 0.05, c, &Envelope::Quadratic(2.0));
        assert!(row.holds);
    }
}
