use crate::report::CheckReport;

use super::{check_dim, euclidean, ModelError, SystemModel};

/// Default tolerance for orbit consistency and minimality.
pub const TAU_ORBIT: f64 = 1e-9;

/// A `p`-periodic state/input sequence closed under the dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicOrbit {
    states: Vec<Vec<f64>>,
    inputs: Vec<Vec<f64>>,
    average_cost: f64,
}

impl PeriodicOrbit {
    /// Builds the orbit and evaluates its average stage cost under `model`.
    /// Consistency with the dynamics is checked separately by [`verify_orbit`].
    pub fn new(
        model: &SystemModel,
        states: Vec<Vec<f64>>,
        inputs: Vec<Vec<f64>>,
    ) -> Result<Self, ModelError> {
        if states.is_empty() {
            return Err(ModelError::InvalidParams("orbit needs at least one point".into()));
        }
        check_dim("orbit inputs", states.len(), inputs.len())?;
        for x in &states {
            model.check_state(x)?;
        }
        for u in &inputs {
            model.check_input(u)?;
        }
        let p = states.len() as f64;
        let average_cost = states
            .iter()
            .zip(&inputs)
            .map(|(x, u)| model.stage_cost(x, u))
            .sum::<f64>()
            / p;
        Ok(Self {
            states,
            inputs,
            average_cost,
        })
    }

    pub fn period(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i % self.period()]
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i % self.period()]
    }

    /// `(1/p) Σ ℓ(Π(i))`.
    pub fn average_cost(&self) -> f64 {
        self.average_cost
    }

    /// Orbit with every stage cost re-evaluated under `model` (e.g. after a
    /// cost shift).
    pub fn reevaluated(&self, model: &SystemModel) -> Result<Self, ModelError> {
        Self::new(model, self.states.clone(), self.inputs.clone())
    }

    /// `(1/p) Σ g(Π_X(i))` for a scalar map on states.
    pub fn state_average(&self, g: impl Fn(&[f64]) -> f64) -> f64 {
        self.states.iter().map(|x| g(x)).sum::<f64>() / self.period() as f64
    }

    /// Minimal iff no state repeats within one period (up to `tol`).
    pub fn is_minimal(&self, tol: f64) -> bool {
        self.repeated_state(tol).is_none()
    }

    /// First pair `(i, j)`, `i < j`, with `Π_X(i) ≈ Π_X(j)`.
    pub fn repeated_state(&self, tol: f64) -> Option<(usize, usize)> {
        for j in 0..self.period() {
            for i in 0..j {
                if euclidean(&self.states[i], &self.states[j]) <= tol {
                    return Some((i, j));
                }
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitDistance {
    pub distance: f64,
    /// Smallest minimizing orbit index (`i_x`).
    pub nearest_index: usize,
}

/// Euclidean distance of `(x, u)` to the orbit, or of `x` to the orbit states
/// when `u` is `None`.
pub fn orbit_distance(
    orbit: &PeriodicOrbit,
    x: &[f64],
    u: Option<&[f64]>,
) -> Result<OrbitDistance, ModelError> {
    check_dim("state", orbit.states[0].len(), x.len())?;
    if let Some(u) = u {
        check_dim("input", orbit.inputs[0].len(), u.len())?;
    }
    let mut best = OrbitDistance {
        distance: f64::INFINITY,
        nearest_index: 0,
    };
    for i in 0..orbit.period() {
        let mut sq: f64 = x
            .iter()
            .zip(&orbit.states[i])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if let Some(u) = u {
            sq += u
                .iter()
                .zip(&orbit.inputs[i])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        let d = sq.sqrt();
        if d < best.distance {
            best = OrbitDistance {
                distance: d,
                nearest_index: i,
            };
        }
    }
    Ok(best)
}

/// Checks dynamics consistency, constraint membership and the stored average
/// cost; records minimality in the report metadata.
pub fn verify_orbit(model: &SystemModel, orbit: &PeriodicOrbit, tol: f64) -> CheckReport {
    let mut report = CheckReport::new("periodic-orbit");
    report.set_meta("tolerance", tol);
    report.set_meta("period", orbit.period());
    let p = orbit.period();
    let mut sum = 0.0;
    for i in 0..p {
        let (x, u) = (orbit.state(i), orbit.input(i));
        let mut point = x.to_vec();
        point.extend_from_slice(u);
        let next = model.step(x, u);
        let res = euclidean(&next, orbit.state(i + 1));
        report.max_margin("max_dynamics_residual", res);
        if res > tol {
            report.fail("dynamics", Some(i), &point, res, res - tol);
        }
        let dx = model.state_box().distance(x);
        let du = model.input_box().distance(u);
        if dx > tol || du > tol {
            report.fail("constraints", Some(i), &point, dx.max(du), dx.max(du) - tol);
        }
        sum += model.stage_cost(x, u);
    }
    let avg = sum / p as f64;
    let avg_err = (avg - orbit.average_cost()).abs();
    if avg_err > 1e-12 {
        report.fail("average-cost", None, &[], avg_err, avg_err - 1e-12);
    }
    report.set_margin("average_cost", orbit.average_cost());
    let repeated = orbit.repeated_state(TAU_ORBIT.max(tol));
    report.set_meta("minimal", repeated.is_none());
    if let Some((i, j)) = repeated {
        report.note(format!("state repeats at orbit indices {i} and {j}"));
    }
    report.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::registry::{example1, lq_steady_state, LqParams};
    use crate::report::Status;

    #[test]
    fn point_on_orbit_has_zero_distance() {
        let fx = example1();
        let d = orbit_distance(&fx.orbit, &[-1.0], Some(&[1.0])).unwrap();
        assert_eq!(d.distance, 0.0);
        assert_eq!(d.nearest_index, 0);
    }

    #[test]
    fn state_input_distance() {
        let fx = example1();
        let d = orbit_distance(&fx.orbit, &[0.3], Some(&[1.0])).unwrap();
        assert!((d.distance - 0.3).abs() < 1e-15);
        assert_eq!(fx.orbit.state(d.nearest_index), &[0.0]);
        assert_eq!(fx.orbit.input(d.nearest_index), &[1.0]);
    }

    #[test]
    fn state_only_distance_breaks_ties_low() {
        let fx = example1();
        let d = orbit_distance(&fx.orbit, &[0.3], None).unwrap();
        assert!((d.distance - 0.3).abs() < 1e-15);
        assert_eq!(d.nearest_index, 1);
    }

    #[test]
    fn example1_orbit_is_valid_but_not_minimal() {
        let fx = example1();
        let r = verify_orbit(&fx.model, &fx.orbit, 1e-12);
        assert!(r.passed());
        assert_eq!(r.metadata["minimal"], false);
    }

    #[test]
    fn steady_state_orbit_is_minimal() {
        let fx = lq_steady_state(&LqParams::default()).unwrap();
        let r = verify_orbit(&fx.model, &fx.orbit, 1e-12);
        assert!(r.passed());
        assert_eq!(r.metadata["minimal"], true);
    }

    #[test]
    fn perturbed_input_fails_at_index_zero() {
        let fx = example1();
        let mut inputs = fx.orbit.inputs().to_vec();
        inputs[0][0] -= 0.1;
        let bad = PeriodicOrbit::new(&fx.model, fx.orbit.states().to_vec(), inputs).unwrap();
        let r = verify_orbit(&fx.model, &bad, 1e-12);
        assert_eq!(r.status, Status::Fail);
        let w = &r.witnesses[0];
        assert_eq!(w.label, "dynamics");
        assert_eq!(w.index, Some(0));
        assert!((w.residual - 0.1).abs() < 1e-12);
    }
}
