use super::ClosedLoopRun;
use crate::report::CheckReport;
use crate::rotation::{Envelope, RotatedProblem, EPS0};

#[derive(Debug, Clone)]
pub struct LyapunovOptions {
    /// Per-step tolerance is `rel_tol · (1 + |Ṽ_N(x_k)|)`.
    pub rel_tol: f64,
    /// Lower envelope `ᾱ` with `ℓ̃(x,u) ≥ ᾱ(‖(x,u)‖_Π)`.
    pub lower: Option<Envelope>,
    /// Upper envelope `α₂` with `Ṽ_N(x) ≤ α₂(‖x‖_{Π_X})`; fitted as `c·r`
    /// when absent.
    pub upper: Option<Envelope>,
    /// Extra per-step allowance on the bounds and decrease conditions, `2ε`
    /// for an ε-inflated terminal cost.
    pub slack: f64,
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            lower: None,
            upper: None,
            slack: 0.0,
        }
    }
}

/// Lower bound chain, rotated decrease, original decrease, upper envelope and
/// the telescoped sum along a closed-loop run.
pub fn check_lyapunov(run: &ClosedLoopRun, rot: &RotatedProblem, opts: &LyapunovOptions) -> CheckReport {
    let mut report = CheckReport::new("lyapunov");
    report.set_meta("rel_tol", opts.rel_tol);
    report.set_meta("slack", opts.slack);
    report.set_meta("steps", run.steps);
    report.set_meta("horizon", run.horizon);
    let ell_pi = rot.ell_orbit_avg();
    let vt = &run.rotated_values;
    let tol = |v: f64| opts.rel_tol * (1.0 + v.abs());
    let mut tele_tol = 0.0;
    for k in 0..run.steps {
        let x = &run.trajectory.states[k];
        let lt = run.rotated_stage_costs[k];
        let t = tol(vt[k]);
        tele_tol += t + opts.slack;
        if vt[k] < lt - t - opts.slack {
            report.fail("lower-bound", Some(k), x, vt[k] - lt, lt - vt[k] - t - opts.slack);
        }
        if let Some(env) = &opts.lower {
            let a = env.eval(run.orbit_dist[k]);
            if lt < a - t {
                report.fail("lower-envelope", Some(k), x, lt - a, a - lt - t);
            }
        }
        let dv = vt[k + 1] - vt[k];
        let res = dv + lt;
        report.max_margin("max_rotated_decrease_residual", res);
        report.max_margin("max_increase", dv);
        if res > t + opts.slack {
            report.fail("rotated-decrease", Some(k), x, res, res - t - opts.slack);
        }
        let res_o = run.values[k + 1] - run.values[k] + run.trajectory.stage_costs[k] - ell_pi;
        report.max_margin("max_decrease_residual", res_o);
        if res_o > t + opts.slack {
            report.fail("decrease", Some(k), x, res_o, res_o - t - opts.slack);
        }
    }
    let mut c_up: f64 = 0.0;
    for (k, (&v, &d)) in vt.iter().zip(&run.state_dist).enumerate() {
        let x = &run.trajectory.states[k];
        let t = tol(v) + opts.slack;
        match &opts.upper {
            Some(env) => {
                let a = env.eval(d);
                if v > a + t {
                    report.fail("upper-envelope", Some(k), x, v - a, v - a - t);
                }
            }
            None if d >= EPS0 => c_up = c_up.max(v / d),
            None => {
                if d == 0.0 && v.abs() > t {
                    report.fail("upper-envelope", Some(k), x, v, v.abs() - t);
                }
            }
        }
    }
    if opts.upper.is_none() {
        report.set_margin("upper_envelope_c", c_up);
        report.set_meta("upper_envelope", "empirical certificate c*r");
    }
    let sum: f64 = run.rotated_stage_costs.iter().sum();
    let tele = sum - vt[0];
    report.set_margin("telescoping_residual", tele);
    if tele > tele_tol {
        report.fail("telescoping", None, &run.trajectory.states[0], tele, tele - tele_tol);
    }
    report.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::model::registry::example1;
    use crate::ocp::DpSolver;
    use crate::report::Status;
    use crate::verify::{simulate_closed_loop, simulate_with_policy};

    fn setup() -> (DpSolver, RotatedProblem) {
        let fx = example1();
        let s = DpSolver::new(&fx.model, &fx.terminal, 5, &GridSpec::uniform(&fx.model, 401, 401)).unwrap();
        let rot = RotatedProblem::build(&fx.model, &fx.orbit, &fx.storage, &fx.terminal).unwrap();
        (s, rot)
    }

    #[test]
    fn closed_loop_from_point_three_is_lyapunov() {
        let (s, rot) = setup();
        let run = simulate_closed_loop(&s, &rot, &[0.3], 100).unwrap();
        let r = check_lyapunov(&run, &rot, &LyapunovOptions::default());
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn suboptimal_input_breaks_the_decrease() {
        let (s, rot) = setup();
        let run = simulate_with_policy(&s, &rot, &[0.3], 5, &|k, _, u| if k == 0 { vec![0.0] } else { u.to_vec() })
            .unwrap();
        let r = check_lyapunov(&run, &rot, &LyapunovOptions::default());
        assert_eq!(r.status, Status::Fail);
        let w = r.witnesses.iter().find(|w| w.label == "rotated-decrease").unwrap();
        assert_eq!(w.index, Some(0));
    }
}
