//! Plant model, constraint boxes, trajectories and periodic orbits.

mod orbit;
pub mod poly;
pub mod registry;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use orbit::{orbit_distance, verify_orbit, OrbitDistance, PeriodicOrbit, TAU_ORBIT};

/// `(x, u, out)`: writes `f(x, u)` into `out`.
pub type DynamicsFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(x, u) -> ℓ(x, u)`.
pub type StageCostFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
/// `(x, target, out)`: writes the input `u` with `f(x, u) = target` into `out`.
/// Returns `false` when no such input exists.
pub type LandingFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) -> bool + Send + Sync>;
/// Scalar map on states, e.g. a storage function or a terminal cost.
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// State feedback `x -> u`.
pub type FeedbackFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Absolute slack used for box membership of computed states.
pub const BOX_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("empty box in dimension {dim}: lo = {lo} > hi = {hi}")]
    EmptyBox { dim: usize, lo: f64, hi: f64 },
    #[error("unknown fixture `{0}` (expected one of: example1, example1-bad-terminal, lq-steady-state)")]
    UnknownFixture(String),
    #[error("invalid fixture parameters: {0}")]
    InvalidParams(String),
}

pub(crate) fn check_dim(what: &str, expected: usize, got: usize) -> Result<(), ModelError> {
    if expected == got {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch {
            what: what.to_string(),
            expected,
            got,
        })
    }
}

/// Axis-aligned box `[lo_i, hi_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxSet {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, ModelError> {
        check_dim("box upper bounds", lo.len(), hi.len())?;
        for (dim, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !(l <= h) {
                return Err(ModelError::EmptyBox { dim, lo: l, hi: h });
            }
        }
        Ok(Self { lo, hi })
    }

    /// `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self, ModelError> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&v, (&l, &h))| v >= l - tol && v <= h + tol)
    }

    /// First violated bound, as `(dimension, value, lo, hi)`.
    pub fn violation(&self, x: &[f64], tol: f64) -> Option<(usize, f64, f64, f64)> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .enumerate()
            .find(|(_, (&v, (&l, &h)))| !(v >= l - tol && v <= h + tol))
            .map(|(i, (&v, (&l, &h)))| (i, v, l, h))
    }

    pub fn clamp_in_place(&self, x: &mut [f64]) {
        for (v, (&l, &h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(l, h);
        }
    }

    /// Euclidean distance from `x` to the box.
    pub fn distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&l, &h))| {
                let d = if v < l {
                    l - v
                } else if v > h {
                    v - h
                } else {
                    0.0
                };
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Discrete-time plant `x⁺ = f(x, u)` with stage cost and box constraints.
#[derive(Clone)]
pub struct SystemModel {
    name: String,
    state_box: BoxSet,
    input_box: BoxSet,
    dynamics: DynamicsFn,
    stage_cost: StageCostFn,
    exact_landing: Option<LandingFn>,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("state_box", &self.state_box)
            .field("input_box", &self.input_box)
            .field("exact_landing", &self.exact_landing.is_some())
            .finish()
    }
}

impl SystemModel {
    pub fn new(
        name: impl Into<String>,
        state_box: BoxSet,
        input_box: BoxSet,
        dynamics: DynamicsFn,
        stage_cost: StageCostFn,
    ) -> Self {
        Self {
            name: name.into(),
            state_box,
            input_box,
            dynamics,
            stage_cost,
            exact_landing: None,
        }
    }

    pub fn with_exact_landing(mut self, landing: LandingFn) -> Self {
        self.exact_landing = Some(landing);
        self
    }

    /// Same plant and constraints with a different stage cost.
    pub fn with_stage_cost(&self, name: impl Into<String>, stage_cost: StageCostFn) -> Self {
        Self {
            name: name.into(),
            stage_cost,
            ..self.clone()
        }
    }

    /// Stage cost shifted to `ℓ(x, u) - offset`.
    pub fn shifted(&self, offset: f64) -> Self {
        if offset == 0.0 {
            return self.clone();
        }
        let base = Arc::clone(&self.stage_cost);
        self.with_stage_cost(
            format!("{} (shifted by {offset})", self.name),
            Arc::new(move |x, u| base(x, u) - offset),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_box.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.input_box.dim()
    }

    pub fn state_box(&self) -> &BoxSet {
        &self.state_box
    }

    pub fn input_box(&self) -> &BoxSet {
        &self.input_box
    }

    pub fn has_exact_landing(&self) -> bool {
        self.exact_landing.is_some()
    }

    pub fn step_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.dynamics)(x, u, out)
    }

    pub fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim()];
        self.step_into(x, u, &mut out);
        out
    }

    pub fn stage_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        (self.stage_cost)(x, u)
    }

    /// Input steering `x` exactly onto `target`, if the model knows how and
    /// the input is admissible.
    pub fn landing_input(&self, x: &[f64], target: &[f64]) -> Option<Vec<f64>> {
        let landing = self.exact_landing.as_ref()?;
        let mut u = vec![0.0; self.input_dim()];
        if !landing(x, target, &mut u) || !self.input_box.contains(&u, BOX_TOL) {
            return None;
        }
        self.input_box.clamp_in_place(&mut u);
        Some(u)
    }

    pub fn check_state(&self, x: &[f64]) -> Result<(), ModelError> {
        check_dim("state", self.state_dim(), x.len())
    }

    pub fn check_input(&self, u: &[f64]) -> Result<(), ModelError> {
        check_dim("input", self.input_dim(), u.len())
    }
}

/// State/input/stage-cost sequence generated by an input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub stage_costs: Vec<f64>,
    /// First index `k` at which `states[k]` is outside the state box.
    pub first_infeasible: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn is_feasible(&self) -> bool {
        self.first_infeasible.is_none()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory always holds x0")
    }
}

/// Simulates `x(k+1) = f(x(k), u(k))` from `x0`.
pub fn rollout(model: &SystemModel, x0: &[f64], inputs: &[Vec<f64>]) -> Result<Trajectory, ModelError> {
    model.check_state(x0)?;
    for u in inputs {
        model.check_input(u)?;
    }
    let mut states = Vec::with_capacity(inputs.len() + 1);
    let mut stage_costs = Vec::with_capacity(inputs.len());
    states.push(x0.to_vec());
    for u in inputs {
        let x = states.last().unwrap();
        stage_costs.push(model.stage_cost(x, u));
        let next = model.step(x, u);
        states.push(next);
    }
    let first_infeasible = states
        .iter()
        .position(|x| !model.state_box().contains(x, BOX_TOL));
    Ok(Trajectory {
        states,
        inputs: inputs.to_vec(),
        stage_costs,
        first_infeasible,
    })
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::registry::example1;
    use super::*;

    #[test]
    fn rollout_along_example1_orbit() {
        let fx = example1();
        let u: Vec<Vec<f64>> = [1.0, -1.0, -1.0, 1.0].iter().map(|&v| vec![v]).collect();
        let traj = rollout(&fx.model, &[0.0], &u).unwrap();
        let xs: Vec<f64> = traj.states.iter().map(|x| x[0]).collect();
        assert_eq!(xs, vec![0.0, 1.0, 0.0, -1.0, 0.0]);
        assert_eq!(traj.stage_costs, vec![-1.0, 1.0, -1.0, 1.0]);
        assert!(traj.is_feasible());
    }

    #[test]
    fn empty_horizon() {
        let fx = example1();
        let traj = rollout(&fx.model, &[0.4], &[]).unwrap();
        assert_eq!(traj.states, vec![vec![0.4]]);
        assert!(traj.inputs.is_empty() && traj.stage_costs.is_empty());
    }

    #[test]
    fn single_step_from_point_three() {
        let fx = example1();
        let traj = rollout(&fx.model, &[0.3], &[vec![-1.0]]).unwrap();
        assert!((traj.states[1][0] + 0.7).abs() < 1e-15);
        assert!((traj.stage_costs[0] - 0.02).abs() < 1e-12);
    }

    #[test]
    fn flags_leaving_the_box() {
        let fx = example1();
        let traj = rollout(&fx.model, &[0.5], &[vec![0.25], vec![0.5], vec![-1.0]]).unwrap();
        assert_eq!(traj.first_infeasible, Some(2));
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let fx = example1();
        assert!(matches!(
            rollout(&fx.model, &[0.0, 1.0], &[]),
            Err(ModelError::DimensionMismatch { .. })
        ));
        assert!(rollout(&fx.model, &[0.0], &[vec![0.0, 0.0]]).is_err());
    }

    #[test]
    fn empty_box_is_rejected() {
        assert!(matches!(
            BoxSet::new(vec![1.0], vec![0.0]),
            Err(ModelError::EmptyBox { dim: 0, .. })
        ));
    }

    #[test]
    fn box_distance_and_violation() {
        let b = BoxSet::cube(2, -1.0, 1.0).unwrap();
        assert_eq!(b.distance(&[0.5, 0.0]), 0.0);
        assert!((b.distance(&[2.0, -2.0]) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(b.violation(&[0.0, 1.5], 0.0), Some((1, 1.5, -1.0, 1.0)));
    }
}
