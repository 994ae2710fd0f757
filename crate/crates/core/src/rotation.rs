//! Storage functions, rotated stage and terminal costs, and the checks
//! built on them (dissipativity, terminal decrease, terminal cost on the
//! orbit, rotated value identity).

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{GridError, Lattice};
use crate::model::{orbit_distance, PeriodicOrbit, ScalarFn, SystemModel, TAU_ORBIT};
use crate::ocp::{build_solver, OcpError, OcpSolver, SolverChoice, TerminalIngredients, TAU_F};
use crate::report::{CheckReport, Status};

/// Absolute tolerance for equalities that hold exactly up to rounding.
pub const TAU_EQ: f64 = 1e-9;
/// Default exclusion radius around the orbit when fitting envelopes.
pub const EPS0: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RotationError {
    #[error("terminal law missing")]
    MissingTerminalLaw,
    #[error("empty sample set")]
    EmptySamples,
    #[error("orbit state {0} is outside the terminal set")]
    OrbitOutsideTerminal(usize),
    #[error("rotated value mismatch: direct {direct}, identity {identity}, tolerance {tol}")]
    Mismatch { direct: f64, identity: f64, tol: f64 },
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Storage function `λ` with its orbit average `λ_Π`.
#[derive(Clone)]
pub struct StorageFunction {
    lambda: ScalarFn,
    orbit_avg: f64,
    gamma: Option<ScalarFn>,
}

impl fmt::Debug for StorageFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StorageFunction")
            .field("orbit_avg", &self.orbit_avg)
            .field("gamma", &self.gamma.is_some())
            .finish()
    }
}

impl StorageFunction {
    pub fn new(lambda: ScalarFn, orbit: &PeriodicOrbit) -> Self {
        let orbit_avg = orbit.state_average(|x| lambda(x));
        Self {
            lambda,
            orbit_avg,
            gamma: None,
        }
    }

    /// `λ ≡ 0`.
    pub fn zero(orbit: &PeriodicOrbit) -> Self {
        Self::new(Arc::new(|_| 0.0), orbit)
    }

    /// Attaches a bound `|λ(x) - λ(y)| ≤ γ(‖x - y‖)`.
    pub fn with_gamma(mut self, gamma: ScalarFn) -> Self {
        self.gamma = Some(gamma);
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.lambda)(x)
    }

    pub fn orbit_average(&self) -> f64 {
        self.orbit_avg
    }

    pub fn gamma(&self) -> Option<&ScalarFn> {
        self.gamma.as_ref()
    }

    pub fn function(&self) -> ScalarFn {
        Arc::clone(&self.lambda)
    }
}

/// Scalar comparison function of the orbit distance.
#[derive(Clone)]
pub enum Envelope {
    Linear(f64),
    Quadratic(f64),
    Custom(ScalarFn),
}

impl fmt::Debug for Envelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear(c) => write!(f, "Linear({c})"),
            Self::Quadratic(c) => write!(f, "Quadratic({c})"),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Envelope {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            Self::Linear(c) => c * r,
            Self::Quadratic(c) => c * r * r,
            Self::Custom(g) => g(&[r]),
        }
    }
}

/// Rotated stage cost `ℓ̃ = ℓ - ℓ_Π + λ(x) - λ(f(x,u))` and rotated terminal
/// cost `Ṽ_f = V_f + λ - V_Π - λ_Π`.
#[derive(Clone, Debug)]
pub struct RotatedProblem {
    model: SystemModel,
    orbit: PeriodicOrbit,
    storage: StorageFunction,
    terminal: TerminalIngredients,
    v_orbit_avg: f64,
}

impl RotatedProblem {
    pub fn build(
        model: &SystemModel,
        orbit: &PeriodicOrbit,
        storage: &StorageFunction,
        terminal: &TerminalIngredients,
    ) -> Result<Self, RotationError> {
        let mut sum = 0.0;
        for i in 0..orbit.period() {
            sum += terminal
                .cost_at(orbit.state(i), TAU_F)
                .ok_or(RotationError::OrbitOutsideTerminal(i))?;
        }
        Ok(Self {
            model: model.clone(),
            orbit: orbit.clone(),
            storage: storage.clone(),
            terminal: terminal.clone(),
            v_orbit_avg: sum / orbit.period() as f64,
        })
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn orbit(&self) -> &PeriodicOrbit {
        &self.orbit
    }

    pub fn storage(&self) -> &StorageFunction {
        &self.storage
    }

    pub fn terminal(&self) -> &TerminalIngredients {
        &self.terminal
    }

    /// `ℓ_Π`.
    pub fn ell_orbit_avg(&self) -> f64 {
        self.orbit.average_cost()
    }

    /// `λ_Π`.
    pub fn lambda_orbit_avg(&self) -> f64 {
        self.storage.orbit_average()
    }

    /// `V_Π`.
    pub fn v_orbit_avg(&self) -> f64 {
        self.v_orbit_avg
    }

    pub fn stage_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        let y = self.model.step(x, u);
        self.model.stage_cost(x, u) - self.ell_orbit_avg() + self.storage.eval(x) - self.storage.eval(&y)
    }

    pub fn terminal_cost(&self, x: &[f64]) -> Option<f64> {
        self.terminal
            .cost_at(x, TAU_F)
            .map(|v| self.rotate_terminal_value(x, v))
    }

    fn rotate_terminal_value(&self, x: &[f64], v: f64) -> f64 {
        v + self.storage.eval(x) - self.v_orbit_avg - self.lambda_orbit_avg()
    }

    /// Plant with `ℓ̃` as stage cost.
    pub fn rotated_model(&self) -> SystemModel {
        let base = self.model.clone();
        let lambda = self.storage.function();
        let ell = self.ell_orbit_avg();
        let name = format!("{} (rotated)", self.model.name());
        self.model.with_stage_cost(
            name,
            Arc::new(move |x, u| {
                let y = base.step(x, u);
                base.stage_cost(x, u) - ell + lambda(x) - lambda(&y)
            }),
        )
    }

    /// Terminal ingredients with `Ṽ_f` as cost.
    pub fn rotated_terminal(&self) -> TerminalIngredients {
        let lambda = self.storage.function();
        let shift = self.v_orbit_avg + self.lambda_orbit_avg();
        self.terminal.map_costs(move |x, v| v + lambda(x) - shift)
    }

    /// `Ṽ_N(x) = V_N(x) - N ℓ_Π + λ(x) - λ_Π - V_Π`.
    pub fn rotated_from_original(&self, v_n: f64, x: &[f64], horizon: usize) -> f64 {
        v_n - horizon as f64 * self.ell_orbit_avg() + self.storage.eval(x) - self.lambda_orbit_avg() - self.v_orbit_avg
    }

    /// Inverse of [`Self::rotated_from_original`].
    pub fn original_from_rotated(&self, v_tilde: f64, x: &[f64], horizon: usize) -> f64 {
        v_tilde + horizon as f64 * self.ell_orbit_avg() - self.storage.eval(x) + self.lambda_orbit_avg() + self.v_orbit_avg
    }
}

/// All pairs of a state lattice and an input lattice.
pub fn product_samples(
    model: &SystemModel,
    state_nodes: usize,
    input_nodes: usize,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>, GridError> {
    let xs = Lattice::new(model.state_box(), &vec![state_nodes; model.state_dim()])?.points();
    let us = Lattice::new(model.input_box(), &vec![input_nodes; model.input_dim()])?.points();
    Ok(xs
        .iter()
        .flat_map(|x| us.iter().map(move |u| (x.clone(), u.clone())))
        .collect())
}

#[derive(Debug, Clone)]
pub struct DissipativityOptions {
    pub tol: f64,
    pub eps0: f64,
    /// Radius of the orbit neighbourhood excluded when reporting the
    /// smallest rotated cost.
    pub neighborhood: f64,
    pub envelope: Option<Envelope>,
}

impl Default for DissipativityOptions {
    fn default() -> Self {
        Self {
            tol: TAU_EQ,
            eps0: EPS0,
            neighborhood: 0.05,
            envelope: None,
        }
    }
}

fn joined(x: &[f64], u: &[f64]) -> Vec<f64> {
    let mut p = x.to_vec();
    p.extend_from_slice(u);
    p
}

/// `ℓ̃ ≥ 0` on the samples, `ℓ̃ = 0` on the orbit and either `ℓ̃ ≥ α(r)` for
/// a supplied envelope or a fitted `ℓ̃ ≥ c r²` with `c > 0`.
pub fn check_strict_dissipativity(
    rot: &RotatedProblem,
    samples: &[(Vec<f64>, Vec<f64>)],
    opts: &DissipativityOptions,
) -> Result<CheckReport, RotationError> {
    if samples.is_empty() {
        return Err(RotationError::EmptySamples);
    }
    let mut report = CheckReport::new("strict-dissipativity");
    report.set_meta("tolerance", opts.tol);
    report.set_meta("samples", samples.len());
    report.set_meta("eps0", opts.eps0);
    let orbit = rot.orbit();
    for i in 0..orbit.period() {
        let (x, u) = (orbit.state(i), orbit.input(i));
        let v = rot.stage_cost(x, u);
        report.max_margin("max_abs_on_orbit", v.abs());
        if v.abs() > opts.tol {
            report.fail("orbit-zero", Some(i), &joined(x, u), v, v.abs() - opts.tol);
        }
    }
    let evals: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|(x, u)| {
            let r = orbit_distance(orbit, x, Some(u)).map(|d| d.distance).unwrap_or(f64::NAN);
            (rot.stage_cost(x, u), r)
        })
        .collect();
    let mut c_fit = f64::INFINITY;
    let mut min_off = f64::INFINITY;
    for (k, ((x, u), &(v, r))) in samples.iter().zip(&evals).enumerate() {
        report.min_margin("min_rotated_cost", v);
        if v < -opts.tol {
            report.fail("nonnegativity", Some(k), &joined(x, u), v, -v - opts.tol);
        }
        if r > opts.neighborhood {
            min_off = min_off.min(v);
        }
        if let Some(env) = &opts.envelope {
            let a = env.eval(r);
            if v < a - opts.tol {
                report.fail("envelope", Some(k), &joined(x, u), v - a, a - v - opts.tol);
            }
        } else if r >= opts.eps0 {
            c_fit = c_fit.min(v / (r * r));
        }
    }
    if min_off.is_finite() {
        report.set_margin("min_off_neighborhood", min_off);
    }
    if opts.envelope.is_none() {
        if c_fit.is_finite() {
            report.set_margin("envelope_c", c_fit);
            report.set_meta("envelope", "empirical certificate c*r^2");
            if c_fit <= 0.0 {
                report.fail("strictness", None, &[], c_fit, c_fit.abs().max(f64::MIN_POSITIVE));
            }
        } else {
            report.note("no samples outside the exclusion radius; envelope not fitted");
        }
    }
    Ok(report.finish())
}

/// Shared terminal-decrease sweep. `slack` is subtracted from the allowed
/// residual (`V_f(x) - V_f(f) - ℓ + shift ≥ -slack - tol`).
pub(crate) fn terminal_decrease(
    name: &str,
    model: &SystemModel,
    terminal: &TerminalIngredients,
    rot: Option<&RotatedProblem>,
    ell_shift: f64,
    slack: f64,
    tol: f64,
    resolution: usize,
) -> Result<CheckReport, RotationError> {
    if !terminal.has_law() {
        return Err(RotationError::MissingTerminalLaw);
    }
    let tau = TAU_F;
    let mut report = CheckReport::new(name);
    report.set_meta("tolerance", tol);
    report.set_meta("slack", slack);
    for (k, x) in terminal.samples(resolution).iter().enumerate() {
        let Some(u) = terminal.law_at(x, tau) else {
            return Err(RotationError::MissingTerminalLaw);
        };
        let vx = terminal.cost_at(x, tau).expect("sample lies in terminal set");
        let point = joined(x, &u);
        if !model.input_box().contains(&u, crate::model::BOX_TOL) {
            report.fail("law-admissible", Some(k), &point, model.input_box().distance(&u), model.input_box().distance(&u));
            continue;
        }
        let y = model.step(x, &u);
        let Some(vy) = terminal.cost_at(&y, tau) else {
            let d = terminal.distance(&y);
            report.fail("invariance", Some(k), &point, d, d);
            continue;
        };
        let ell = model.stage_cost(x, &u);
        let res = vx - vy - ell + ell_shift;
        report.min_margin("min_residual", res);
        if res < -slack - tol {
            report.fail("decrease", Some(k), &point, res + slack, -res - slack - tol);
        }
        if let Some(rot) = rot {
            let rt = rot.terminal_cost(x).expect("in terminal set") - rot.stage_cost(x, &u) - rot.terminal_cost(&y).expect("in terminal set");
            let gap = (rt - res).abs();
            report.max_margin("max_form_disagreement", gap);
            if gap > 1e-12 * (1.0 + res.abs()) * 10.0 {
                report.fail("rotated-form-disagrees", Some(k), &point, rt - res, gap);
            }
            if (rt < -slack - tol) != (res < -slack - tol) {
                report.fail("rotated-verdict-disagrees", Some(k), &point, rt, gap.max(f64::MIN_POSITIVE));
            }
        }
    }
    Ok(report.finish())
}

/// Invariance of the terminal set under `u_f` and the decrease
/// `V_f(x) ≥ V_f(f(x,u_f)) + ℓ(x,u_f) - ℓ_Π`, checked together with its
/// rotated form `Ṽ_f(x) ≥ ℓ̃(x,u_f) + Ṽ_f(f(x,u_f))`.
pub fn check_terminal_conditions(
    model: &SystemModel,
    terminal: &TerminalIngredients,
    rot: &RotatedProblem,
    resolution: usize,
) -> Result<CheckReport, RotationError> {
    terminal_decrease(
        "terminal-conditions",
        model,
        terminal,
        Some(rot),
        rot.ell_orbit_avg(),
        0.0,
        TAU_EQ,
        resolution,
    )
}

/// `V_f(Π_X(i)) = ℓ(Π(i)) - ℓ_Π + V_f(Π_X(i+1))` at every orbit point and
/// `Ṽ_f = 0` on orbit states. Witness residuals are
/// `ℓ - ℓ_Π + V_f(next) - V_f(x)`.
pub fn check_terminal_cost_on_orbit(
    terminal: &TerminalIngredients,
    rot: &RotatedProblem,
    orbit: &PeriodicOrbit,
    tol: f64,
) -> CheckReport {
    let mut report = CheckReport::new("terminal-cost-on-orbit");
    report.set_meta("tolerance", tol);
    for i in 0..orbit.period() {
        let (x, u, y) = (orbit.state(i), orbit.input(i), orbit.state(i + 1));
        let point = joined(x, u);
        let (Some(vx), Some(vy)) = (terminal.cost_at(x, TAU_F), terminal.cost_at(y, TAU_F)) else {
            report.fail("orbit-outside-terminal-set", Some(i), &point, f64::INFINITY, f64::INFINITY);
            continue;
        };
        let res = rot.model().stage_cost(x, u) - rot.ell_orbit_avg() + vy - vx;
        report.max_margin("max_abs_residual", res.abs());
        if res.abs() > tol {
            report.fail("orbit-equality", Some(i), &point, res, res.abs() - tol);
        }
        let vt = rot.terminal_cost(x).unwrap_or(f64::INFINITY);
        report.max_margin("max_abs_rotated_terminal", vt.abs());
        if vt.abs() > tol {
            report.fail("rotated-terminal-zero", Some(i), x, vt, vt.abs() - tol);
        }
    }
    report.finish()
}

/// Rotated value computed directly and through the identity with `V_N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedValue {
    pub direct: f64,
    pub identity: f64,
    pub original: f64,
}

impl RotatedValue {
    pub fn deviation(&self) -> f64 {
        (self.direct - self.identity).abs()
    }
}

/// `Ṽ_N(x)` from prebuilt original and rotated solvers; errors when the two
/// routes differ by more than `tol`.
pub fn rotated_value_with(
    original: &dyn OcpSolver,
    rotated: &dyn OcpSolver,
    rot: &RotatedProblem,
    x: &[f64],
    tol: f64,
) -> Result<RotatedValue, RotationError> {
    let v = original.solve(x)?.value;
    let direct = rotated.solve(x)?.value;
    let identity = rot.rotated_from_original(v, x, original.horizon());
    if (direct - identity).abs() > tol {
        return Err(RotationError::Mismatch { direct, identity, tol });
    }
    Ok(RotatedValue {
        direct,
        identity,
        original: v,
    })
}

pub fn rotated_value(
    rot: &RotatedProblem,
    horizon: usize,
    x: &[f64],
    choice: &SolverChoice,
    tol: f64,
) -> Result<RotatedValue, RotationError> {
    let original = build_solver(rot.model(), rot.terminal(), horizon, choice)?;
    let rotated = build_solver(&rot.rotated_model(), &rot.rotated_terminal(), horizon, choice)?;
    rotated_value_with(original.as_ref(), rotated.as_ref(), rot, x, tol)
}

/// On minimal orbits, passing the terminal conditions must imply the
/// terminal-cost equality on the orbit. Not applicable to non-minimal orbits;
/// vacuous pass when the premise fails.
pub fn check_minimal_orbit_relaxation(
    model: &SystemModel,
    terminal: &TerminalIngredients,
    rot: &RotatedProblem,
    orbit: &PeriodicOrbit,
    resolution: usize,
) -> Result<CheckReport, RotationError> {
    let name = "minimal-orbit-relaxation";
    if let Some((i, j)) = orbit.repeated_state(TAU_ORBIT) {
        return Ok(CheckReport::not_applicable(
            name,
            format!("orbit is not minimal: state repeats at indices {i} and {j}"),
        ));
    }
    let premise = check_terminal_conditions(model, terminal, rot, resolution)?;
    let mut report = CheckReport::new(name);
    report.set_meta("premise", serde_json::to_value(premise.status).unwrap_or_default());
    if premise.status != Status::Pass {
        report.note("premise fails; implication holds vacuously");
        return Ok(report.finish());
    }
    let conclusion = check_terminal_cost_on_orbit(terminal, rot, orbit, TAU_EQ);
    report.set_meta("conclusion", serde_json::to_value(conclusion.status).unwrap_or_default());
    if conclusion.status != Status::Pass {
        for w in &conclusion.witnesses {
            report.fail("implication", w.index, &w.point, w.residual, w.excess);
        }
    }
    Ok(report.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::model::registry::{example1, example1_bad_terminal, lq_steady_state, LqParams};
    use crate::ocp::{TerminalPoint, TerminalRegion};
    use crate::model::BoxSet;

    fn ex1_rot() -> RotatedProblem {
        let fx = example1();
        RotatedProblem::build(&fx.model, &fx.orbit, &fx.storage, &fx.terminal).unwrap()
    }

    #[test]
    fn orbit_averages() {
        let rot = ex1_rot();
        assert_eq!(rot.lambda_orbit_avg(), -0.5);
        assert_eq!(rot.v_orbit_avg(), 0.0);
        for x in [-1.0, 0.0, 1.0] {
            assert_eq!(rot.terminal_cost(&[x]), Some(0.0));
        }
        assert_eq!(rot.stage_cost(&[0.0], &[0.0]), 1.0);
    }

    #[test]
    fn rotated_cost_closed_form() {
        let rot = ex1_rot();
        for &(x, u) in &[(0.3f64, -1.0f64), (-0.6, 0.4), (1.0, -0.2)] {
            let closed = 4.0 * x.abs() - x * x - (u - x) * (u - x) + 1.0;
            assert!((rot.stage_cost(&[x], &[u]) - closed).abs() < 1e-14);
        }
    }

    #[test]
    fn rotated_costs_sum_to_zero_over_the_orbit() {
        let rot = ex1_rot();
        let s: f64 = (0..4).map(|i| rot.stage_cost(rot.orbit().state(i), rot.orbit().input(i))).sum();
        assert!(s.abs() <= 1e-12);
    }

    #[test]
    fn example1_is_strictly_dissipative() {
        let rot = ex1_rot();
        let samples = product_samples(rot.model(), 201, 201).unwrap();
        let r = check_strict_dissipativity(&rot, &samples, &DissipativityOptions::default()).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.margins["min_off_neighborhood"] > 0.0);
        assert!(r.margins["envelope_c"] > 0.0);
    }

    #[test]
    fn zero_storage_fails_at_origin_input_one() {
        let fx = example1();
        let rot = RotatedProblem::build(&fx.model, &fx.orbit, &StorageFunction::zero(&fx.orbit), &fx.terminal).unwrap();
        let samples = product_samples(&fx.model, 21, 21).unwrap();
        let r = check_strict_dissipativity(&rot, &samples, &DissipativityOptions::default()).unwrap();
        assert_eq!(r.status, Status::Fail);
        let w = r.find_witness("nonnegativity", &[0.0, 1.0], 1e-12).unwrap();
        assert_eq!(w.residual, -1.0);
    }

    #[test]
    fn supplied_envelope_is_checked() {
        let rot = ex1_rot();
        let samples = product_samples(rot.model(), 41, 41).unwrap();
        let opts = DissipativityOptions {
            envelope: Some(Envelope::Quadratic(100.0)),
            ..Default::default()
        };
        let r = check_strict_dissipativity(&rot, &samples, &opts).unwrap();
        assert!(r.witnesses.iter().any(|w| w.label == "envelope"));
        assert!(check_strict_dissipativity(&rot, &[], &opts).is_err());
    }

    #[test]
    fn terminal_conditions_for_both_variants() {
        for fx in [example1(), example1_bad_terminal()] {
            let rot = RotatedProblem::build(&fx.model, &fx.orbit, &fx.storage, &fx.terminal).unwrap();
            let r = check_terminal_conditions(&fx.model, &fx.terminal, &rot, 11).unwrap();
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn missing_law_is_an_error() {
        let fx = example1();
        let t = TerminalIngredients::finite(
            fx.terminal.points().unwrap().iter().map(|p| TerminalPoint::new(p.state.clone(), p.cost, None)).collect(),
        )
        .unwrap();
        let rot = RotatedProblem::build(&fx.model, &fx.orbit, &fx.storage, &t).unwrap();
        assert_eq!(
            check_terminal_conditions(&fx.model, &t, &rot, 11).unwrap_err(),
            RotationError::MissingTerminalLaw
        );
    }

    #[test]
    fn orbit_equality_fails_only_for_bad_terminal() {
        let fx = example1();
        let rot = RotatedProblem::build(&fx.model, &fx.orbit, &fx.storage, &fx.terminal).unwrap();
        assert!(check_terminal_cost_on_orbit(&fx.terminal, &rot, &fx.orbit, TAU_EQ).passed());

        let bad = example1_bad_terminal();
        let rot = RotatedProblem::build(&bad.model, &bad.orbit, &bad.storage, &bad.terminal).unwrap();
        assert_eq!(rot.v_orbit_avg(), 0.125);
        let r = check_terminal_cost_on_orbit(&bad.terminal, &rot, &bad.orbit, TAU_EQ);
        assert_eq!(r.status, Status::Fail);
        let w = r.find_witness("orbit-equality", &[0.0, -1.0], 0.0).unwrap();
        assert!((w.residual - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn steady_state_orbit_equality_is_trivial() {
        let fx = lq_steady_state(&LqParams::default()).unwrap();
        let rot = RotatedProblem::build(&fx.model, &fx.orbit, &fx.storage, &fx.terminal).unwrap();
        assert!(check_terminal_cost_on_orbit(&fx.terminal, &rot, &fx.orbit, TAU_EQ).passed());
        let r = check_minimal_orbit_relaxation(&fx.model, &fx.terminal, &rot, &fx.orbit, 21).unwrap();
        assert_eq!(r.status, Status::Pass);
        assert_eq!(r.metadata["conclusion"], "pass");
    }

    #[test]
    fn relaxation_not_applicable_to_example1() {
        let fx = example1();
        let rot = RotatedProblem::build(&fx.model, &fx.orbit, &fx.storage, &fx.terminal).unwrap();
        let r = check_minimal_orbit_relaxation(&fx.model, &fx.terminal, &rot, &fx.orbit, 11).unwrap();
        assert_eq!(r.status, Status::NotApplicable);
    }

    /// Minimal two-periodic orbit `0.5 ↔ -0.5` of `x⁺ = -x + u` with
    /// `ℓ = u² + x` and `λ = -x/2`.
    fn two_periodic() -> (SystemModel, PeriodicOrbit, StorageFunction) {
        let unit = BoxSet::cube(1, -1.0, 1.0).unwrap();
        let model = SystemModel::new(
            "flip",
            unit.clone(),
            unit,
            Arc::new(|x: &[f64], u: &[f64], out: &mut [f64]| out[0] = -x[0] + u[0]),
            Arc::new(|x: &[f64], u: &[f64]| u[0] * u[0] + x[0]),
        )
        .with_exact_landing(Arc::new(|x: &[f64], t: &[f64], u: &mut [f64]| {
            u[0] = t[0] + x[0];
            true
        }));
        let orbit = PeriodicOrbit::new(&model, vec![vec![0.5], vec![-0.5]], vec![vec![0.0], vec![0.0]]).unwrap();
        let storage = StorageFunction::new(Arc::new(|x: &[f64]| -x[0] / 2.0), &orbit);
        (model, orbit, storage)
    }

    #[test]
    fn minimal_two_periodic_relaxation_holds() {
        let (model, orbit, storage) = two_periodic();
        assert!(orbit.is_minimal(TAU_ORBIT));
        let terminal = TerminalIngredients::finite(vec![
            TerminalPoint::new(vec![0.5], 0.5, Some(vec![0.0])),
            TerminalPoint::new(vec![-0.5], 0.0, Some(vec![0.0])),
        ])
        .unwrap();
        let rot = RotatedProblem::build(&model, &orbit, &storage, &terminal).unwrap();
        let r = check_minimal_orbit_relaxation(&model, &terminal, &rot, &orbit, 11).unwrap();
        assert_eq!(r.status, Status::Pass);
        assert_eq!(r.metadata["conclusion"], "pass");
    }

    #[test]
    fn rotated_terminal_cost_is_positive_definite_for_lq() {
        let fx = lq_steady_state(&LqParams::default()).unwrap();
        let rot = RotatedProblem::build(&fx.model, &fx.orbit, &fx.storage, &fx.terminal).unwrap();
        for x in fx.terminal.samples(21) {
            let v = rot.terminal_cost(&x).unwrap();
            assert!(v >= 5.0 * x[0] * x[0] - 1e-15);
        }
        assert!(matches!(rot.terminal(), TerminalIngredients::Region(TerminalRegion { .. })));
    }

    #[test]
    fn identity_route_on_orbit_and_off_orbit() {
        let rot = ex1_rot();
        let fx = example1();
        let choice = SolverChoice::Dp {
            grid: GridSpec::uniform(&fx.model, 401, 401),
        };
        for x in [-1.0, 0.0, 1.0] {
            let v = rotated_value(&rot, 4, &[x], &choice, 1e-6).unwrap();
            assert!(v.identity.abs() < 1e-9, "{x}: {v:?}");
        }
        let v = rotated_value(&rot, 5, &[0.3], &choice, 5e-3).unwrap();
        assert!(v.identity > 0.0);
    }
}
