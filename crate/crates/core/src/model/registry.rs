//! Built-in benchmark fixtures.
//!
//! * `example1`: scalar integrator `x⁺ = x + u` on `[-1, 1]²` with the
//!   indefinite cost `ℓ(x, u) = 2(2|x| - x² - u²) + 1`. Its optimal orbit
//!   `(-1,1) → (0,1) → (1,-1) → (0,-1)` visits the state 0 twice, so it is
//!   not minimal. Storage `λ(x) = -x²`, terminal set `{-1, 0, 1}` with
//!   terminal cost `(1/2, -1/2, 1/2)`.
//! * `example1-bad-terminal`: same, but `V_f(-1) = 1`, which keeps the
//!   terminal decrease inequality and breaks the on-orbit equality.
//! * `lq-steady-state`: scalar `x⁺ = a x + b u`, `ℓ = q x² + r u²` with the
//!   origin as optimal steady state and a deadbeat terminal box.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{BoxSet, ModelError, PeriodicOrbit, SystemModel};
use crate::ocp::{TerminalIngredients, TerminalPoint, TerminalRegion};
use crate::rotation::StorageFunction;

pub const FIXTURE_NAMES: [&str; 3] = ["example1", "example1-bad-terminal", "lq-steady-state"];

/// Everything a scenario needs about one plant.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub model: SystemModel,
    pub orbit: PeriodicOrbit,
    pub terminal: TerminalIngredients,
    pub storage: StorageFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqParams {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub r: f64,
    /// Half-width of the terminal box around the origin.
    pub terminal_radius: f64,
}

impl Default for LqParams {
    fn default() -> Self {
        Self {
            a: 2.0,
            b: 1.0,
            q: 1.0,
            r: 1.0,
            terminal_radius: 0.1,
        }
    }
}

/// Looks up a fixture by name. `params` is only read by `lq-steady-state`.
pub fn builtin(name: &str, params: Option<&serde_json::Value>) -> Result<Fixture, ModelError> {
    match name {
        "example1" => Ok(example1()),
        "example1-bad-terminal" => Ok(example1_bad_terminal()),
        "lq-steady-state" => {
            let p = match params {
                Some(v) if !v.is_null() => serde_json::from_value::<LqParams>(v.clone())
                    .map_err(|e| ModelError::InvalidParams(e.to_string()))?,
                _ => LqParams::default(),
            };
            lq_steady_state(&p)
        }
        other => Err(ModelError::UnknownFixture(other.to_string())),
    }
}

fn example1_model() -> SystemModel {
    let unit = BoxSet::cube(1, -1.0, 1.0).expect("unit box");
    SystemModel::new(
        "example1",
        unit.clone(),
        unit,
        Arc::new(|x: &[f64], u: &[f64], out: &mut [f64]| out[0] = x[0] + u[0]),
        Arc::new(|x: &[f64], u: &[f64]| {
            2.0 * (2.0 * x[0].abs() - x[0] * x[0] - u[0] * u[0]) + 1.0
        }),
    )
    .with_exact_landing(Arc::new(|x: &[f64], t: &[f64], u: &mut [f64]| {
        u[0] = t[0] - x[0];
        true
    }))
}

fn example1_terminal(v_minus_one: f64) -> TerminalIngredients {
    TerminalIngredients::finite(vec![
        TerminalPoint::new(vec![-1.0], v_minus_one, Some(vec![1.0])),
        TerminalPoint::new(vec![0.0], -0.5, Some(vec![1.0])),
        TerminalPoint::new(vec![1.0], 0.5, Some(vec![-1.0])),
    ])
    .expect("static terminal set")
}

fn example1_with_terminal(terminal: TerminalIngredients) -> Fixture {
    let model = example1_model();
    let orbit = PeriodicOrbit::new(
        &model,
        vec![vec![-1.0], vec![0.0], vec![1.0], vec![0.0]],
        vec![vec![1.0], vec![1.0], vec![-1.0], vec![-1.0]],
    )
    .expect("static orbit");
    let storage = StorageFunction::new(Arc::new(|x: &[f64]| -x[0] * x[0]), &orbit);
    Fixture {
        model,
        orbit,
        terminal,
        storage,
    }
}

pub fn example1() -> Fixture {
    example1_with_terminal(example1_terminal(0.5))
}

pub fn example1_bad_terminal() -> Fixture {
    example1_with_terminal(example1_terminal(1.0))
}

pub fn lq_steady_state(p: &LqParams) -> Result<Fixture, ModelError> {
    if p.b == 0.0 {
        return Err(ModelError::InvalidParams("b must be nonzero".into()));
    }
    if !(p.q > 0.0 && p.r > 0.0) {
        return Err(ModelError::InvalidParams("q and r must be positive".into()));
    }
    let gain = p.a / p.b;
    if !(p.terminal_radius > 0.0 && p.terminal_radius <= 1.0) || gain.abs() * p.terminal_radius > 1.0 {
        return Err(ModelError::InvalidParams(format!(
            "terminal_radius {} must lie in (0, 1] with |a/b|·radius <= 1",
            p.terminal_radius
        )));
    }
    let unit = BoxSet::cube(1, -1.0, 1.0)?;
    let (a, b, q, r) = (p.a, p.b, p.q, p.r);
    let model = SystemModel::new(
        "lq-steady-state",
        unit.clone(),
        unit,
        Arc::new(move |x: &[f64], u: &[f64], out: &mut [f64]| out[0] = a * x[0] + b * u[0]),
        Arc::new(move |x: &[f64], u: &[f64]| q * x[0] * x[0] + r * u[0] * u[0]),
    )
    .with_exact_landing(Arc::new(move |x: &[f64], t: &[f64], u: &mut [f64]| {
        u[0] = (t[0] - a * x[0]) / b;
        true
    }));
    let orbit = PeriodicOrbit::new(&model, vec![vec![0.0]], vec![vec![0.0]])?;
    let storage = StorageFunction::new(Arc::new(|_: &[f64]| 0.0), &orbit);
    // Deadbeat law u = -(a/b) x with V_f = (q + r (a/b)²) x² satisfies the
    // terminal decrease with equality.
    let weight = q + r * gain * gain;
    let terminal = TerminalIngredients::Region(TerminalRegion {
        region: BoxSet::cube(1, -p.terminal_radius, p.terminal_radius)?,
        cost: Arc::new(move |x: &[f64]| weight * x[0] * x[0]),
        law: Some(Arc::new(move |x: &[f64]| vec![-gain * x[0]])),
    });
    Ok(Fixture {
        model,
        orbit,
        terminal,
        storage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example1_values() {
        let fx = builtin("example1", None).unwrap();
        assert_eq!(fx.terminal.cost_at(&[0.0], 1e-9), Some(-0.5));
        assert_eq!(fx.storage.eval(&[0.0]), 0.0);
        assert_eq!(fx.orbit.average_cost(), 0.0);
        assert_eq!(fx.orbit.period(), 4);
    }

    #[test]
    fn bad_terminal_value() {
        let fx = builtin("example1-bad-terminal", None).unwrap();
        assert_eq!(fx.terminal.cost_at(&[-1.0], 1e-9), Some(1.0));
        assert_eq!(fx.terminal.cost_at(&[1.0], 1e-9), Some(0.5));
    }

    #[test]
    fn lq_is_a_zero_cost_steady_state() {
        let fx = builtin("lq-steady-state", None).unwrap();
        assert_eq!(fx.orbit.period(), 1);
        assert_eq!(fx.orbit.average_cost(), 0.0);
    }

    #[test]
    fn lq_params_are_parsed_and_validated() {
        let v = serde_json::json!({"terminal_radius": 0.2});
        let fx = builtin("lq-steady-state", Some(&v)).unwrap();
        assert!(fx.terminal.cost_at(&[0.2], 1e-9).is_some());
        let bad = serde_json::json!({"terminal_radius": 0.8});
        assert!(matches!(
            builtin("lq-steady-state", Some(&bad)),
            Err(ModelError::InvalidParams(_))
        ));
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(builtin("nope", None), Err(ModelError::UnknownFixture(_))));
    }
}
