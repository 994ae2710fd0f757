use proptest::prelude::*;

use empc::cesaro::{cesaro_weighted, separation_rhs};
use empc::grid::GridSpec;
use empc::model::registry::{example1, lq_steady_state, LqParams};
use empc::model::{orbit_distance, rollout};
use empc::ocp::{feasible_set_probe, SolverChoice};
use empc::rotation::{rotated_value, RotatedProblem};

fn ell(x: f64, u: f64) -> f64 {
    2.0 * (2.0 * x.abs() - x * x - u * u) + 1.0
}

fn feasible_inputs(x0: f64, raw: &[f64]) -> Vec<Vec<f64>> {
    let mut x = x0;
    raw.iter()
        .map(|&r| {
            let lo = (-1.0f64).max(-1.0 - x);
            let hi = 1.0f64.min(1.0 - x);
            let u = lo + (hi - lo) * r;
            x = (x + u).clamp(-1.0, 1.0);
            vec![u]
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn orbit_distance_is_lipschitz(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, d in -1.0f64..1.0) {
        let fx = example1();
        let p = orbit_distance(&fx.orbit, &[a], Some(&[b])).unwrap().distance;
        let q = orbit_distance(&fx.orbit, &[c], Some(&[d])).unwrap().distance;
        let gap = ((a - c).powi(2) + (b - d).powi(2)).sqrt();
        prop_assert!(p >= 0.0);
        prop_assert!((p - q).abs() <= gap + 1e-12);
    }

    #[test]
    fn rollout_matches_closed_form_costs(x0 in -1.0f64..1.0, raw in proptest::collection::vec(0.0f64..1.0, 1..30)) {
        let fx = example1();
        let us = feasible_inputs(x0, &raw);
        let tr = rollout(&fx.model, &[x0], &us).unwrap();
        prop_assert!(tr.is_feasible());
        for k in 0..us.len() {
            prop_assert!((tr.stage_costs[k] - ell(tr.states[k][0], us[k][0])).abs() <= 1e-12);
        }
    }

    #[test]
    fn rotated_cesaro_cost_never_decreases(x0 in -1.0f64..1.0, raw in proptest::collection::vec(0.0f64..1.0, 2..40)) {
        let fx = example1();
        let rot = RotatedProblem::build(&fx.model, &fx.orbit, &fx.storage, &fx.terminal).unwrap();
        let us = feasible_inputs(x0, &raw);
        let tr = rollout(&fx.model, &[x0], &us).unwrap();
        let rc: Vec<f64> = (0..us.len()).map(|k| rot.stage_cost(&tr.states[k], &us[k])).collect();
        for n in 1..rc.len() {
            prop_assert!(cesaro_weighted(&rc, n + 1) >= cesaro_weighted(&rc, n) - 1e-12);
        }
    }

    #[test]
    fn multi_step_separation(seq in proptest::collection::vec(-1.0f64..1.0, 4..120), q in 1usize..=3) {
        let n = seq.len();
        let lhs = cesaro_weighted(&seq, n);
        prop_assert!((separation_rhs(&seq, n, q) - lhs).abs() <= 1e-12);
        // composing one-step separations reproduces the q-step form
        let mut rhs = 0.0;
        let mut scale = 1.0;
        for j in 0..q {
            let m = n - j;
            rhs += scale * seq[j];
            scale *= (m - 1) as f64 / m as f64;
        }
        rhs += scale * cesaro_weighted(&seq[q..], n - q);
        prop_assert!((rhs - lhs).abs() <= 1e-12);
    }
}

#[test]
fn rotated_value_identity_on_example1() {
    let fx = example1();
    let rot = RotatedProblem::build(&fx.model, &fx.orbit, &fx.storage, &fx.terminal).unwrap();
    let choice = SolverChoice::dp(&fx.model, 201, 201);
    for x in [-1.0, -0.3, 0.0, 0.3, 0.75] {
        let v = rotated_value(&rot, 3, &[x], &choice, 1e-9).unwrap();
        assert!(v.deviation() <= 1e-9, "x = {x}: {v:?}");
    }
}

#[test]
fn feasible_sets_are_nested() {
    let fx = lq_steady_state(&LqParams::default()).unwrap();
    let probe = feasible_set_probe(&fx.model, &fx.terminal, &[1, 2, 4], &GridSpec::uniform(&fx.model, 101, 101)).unwrap();
    assert!(probe.nested);
    assert!(probe.count(0) <= probe.count(1) && probe.count(1) <= probe.count(2));
    assert!(probe.count(0) < probe.nodes.len());
}
