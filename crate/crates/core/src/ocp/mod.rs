//! Finite-horizon economic OCP with terminal set and terminal cost:
//! a grid dynamic-programming solver and an exhaustive enumeration oracle.

mod dp;
mod oracle;
mod terminal;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, GridSpec};
use crate::model::{ModelError, SystemModel, Trajectory, BOX_TOL};

pub use dp::{feasible_set_probe, DpSolver, FeasibleSetProbe};
pub use oracle::{OracleSolver, ORACLE_BUDGET};
pub use terminal::{TerminalIngredients, TerminalPoint, TerminalRegion, TAU_F};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OcpError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("state {state:?} is infeasible for horizon {horizon}: no admissible input sequence reaches the terminal set")]
    Infeasible { state: Vec<f64>, horizon: usize },
    #[error("state {state:?} violates bound {dim}: {value} not in [{lo}, {hi}]")]
    OutOfBox {
        state: Vec<f64>,
        dim: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("horizon must be at least 1, got {0}")]
    InvalidHorizon(usize),
    #[error("grid degeneracy: {0}")]
    GridDegenerate(String),
    #[error("enumeration needs {needed:.3e} sequences, budget is {budget:.3e}")]
    BudgetExceeded { needed: f64, budget: f64 },
    #[error("invalid terminal ingredients: {0}")]
    InvalidTerminal(String),
    #[error("terminal law missing")]
    MissingTerminalLaw,
}

/// Optimal (or grid-optimal) solution of the finite-horizon problem.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    /// `V_N(x) = Σ ℓ + V_f(x(N))` recomputed along `trajectory`.
    pub value: f64,
    pub inputs: Vec<Vec<f64>>,
    pub trajectory: Trajectory,
    pub feasible: bool,
    /// Distance of the predicted terminal state to the terminal set.
    pub terminal_residual: f64,
}

impl OcpSolution {
    pub fn first_input(&self) -> &[f64] {
        &self.inputs[0]
    }
}

/// Common interface of the OCP solvers.
pub trait OcpSolver: Send + Sync {
    fn horizon(&self) -> usize;
    fn model(&self) -> &SystemModel;
    fn terminal(&self) -> &TerminalIngredients;
    fn solve(&self, x: &[f64]) -> Result<OcpSolution, OcpError>;

    /// `μ_N(x)`, the first element of the optimal input sequence.
    fn feedback(&self, x: &[f64]) -> Result<Vec<f64>, OcpError> {
        Ok(self.solve(x)?.inputs.swap_remove(0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SolverChoice {
    Dp { grid: GridSpec },
    Oracle { density: usize },
}

impl SolverChoice {
    pub fn dp(model: &SystemModel, state_nodes: usize, input_nodes: usize) -> Self {
        Self::Dp {
            grid: GridSpec::uniform(model, state_nodes, input_nodes),
        }
    }
}

pub fn build_solver(
    model: &SystemModel,
    terminal: &TerminalIngredients,
    horizon: usize,
    choice: &SolverChoice,
) -> Result<Box<dyn OcpSolver>, OcpError> {
    Ok(match choice {
        SolverChoice::Dp { grid } => Box::new(DpSolver::new(model, terminal, horizon, grid)?),
        SolverChoice::Oracle { density } => Box::new(OracleSolver::new(model, terminal, horizon, *density)?),
    })
}

pub fn solve_ocp_dp(
    model: &SystemModel,
    terminal: &TerminalIngredients,
    horizon: usize,
    x: &[f64],
    grid: &GridSpec,
) -> Result<OcpSolution, OcpError> {
    DpSolver::new(model, terminal, horizon, grid)?.solve(x)
}

pub fn solve_ocp_oracle(
    model: &SystemModel,
    terminal: &TerminalIngredients,
    horizon: usize,
    x: &[f64],
    density: usize,
) -> Result<OcpSolution, OcpError> {
    OracleSolver::new(model, terminal, horizon, density)?.solve(x)
}

pub fn feedback(
    model: &SystemModel,
    terminal: &TerminalIngredients,
    horizon: usize,
    x: &[f64],
    choice: &SolverChoice,
) -> Result<Vec<f64>, OcpError> {
    build_solver(model, terminal, horizon, choice)?.feedback(x)
}

pub(crate) fn check_common(
    model: &SystemModel,
    terminal: &TerminalIngredients,
    horizon: usize,
) -> Result<(), OcpError> {
    if horizon == 0 {
        return Err(OcpError::InvalidHorizon(horizon));
    }
    model.check_state(&vec![0.0; terminal.dim()])?;
    if let Some(pts) = terminal.points() {
        for p in pts {
            if let Some(u) = &p.law {
                model.check_input(u)?;
            }
        }
    }
    Ok(())
}

pub(crate) fn check_initial_state(model: &SystemModel, x: &[f64]) -> Result<(), OcpError> {
    model.check_state(x)?;
    if let Some((dim, value, lo, hi)) = model.state_box().violation(x, BOX_TOL) {
        return Err(OcpError::OutOfBox {
            state: x.to_vec(),
            dim,
            value,
            lo,
            hi,
        });
    }
    Ok(())
}

/// Two costs closer than this are treated as a tie.
pub(crate) fn tie_tol(v: f64) -> f64 {
    1e-10 + 1e-12 * v.abs()
}

pub(crate) fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

/// Index of the minimizer with lexicographically smallest input among all
/// candidates within the tie tolerance of the minimum.
pub(crate) fn select_min(cands: &[(Vec<f64>, f64)]) -> Option<usize> {
    let best = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    let tol = tie_tol(best);
    let mut pick: Option<usize> = None;
    for (i, (u, v)) in cands.iter().enumerate() {
        if *v <= best + tol && pick.map_or(true, |p| lex_cmp(u, &cands[p].0) == Ordering::Less) {
            pick = Some(i);
        }
    }
    pick
}

pub(crate) fn finish_solution(
    model: &SystemModel,
    terminal: &TerminalIngredients,
    horizon: usize,
    x: &[f64],
    inputs: Vec<Vec<f64>>,
    tau: f64,
) -> Result<OcpSolution, OcpError> {
    let trajectory = crate::model::rollout(model, x, &inputs)?;
    let infeasible = || OcpError::Infeasible {
        state: x.to_vec(),
        horizon,
    };
    if !trajectory.is_feasible() {
        return Err(infeasible());
    }
    let end = trajectory.final_state();
    let vf = terminal.cost_at(end, tau).ok_or_else(infeasible)?;
    let value = crate::cesaro::neumaier_sum(trajectory.stage_costs.iter().copied()) + vf;
    let terminal_residual = terminal.distance(end);
    Ok(OcpSolution {
        value,
        inputs,
        trajectory,
        feasible: true,
        terminal_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::registry::example1;

    #[test]
    fn tie_break_prefers_smallest_input() {
        let c = vec![(vec![1.0], -0.5), (vec![-1.0], -0.5 + 1e-13), (vec![0.0], 0.5)];
        assert_eq!(select_min(&c), Some(1));
        let none = vec![(vec![1.0], f64::INFINITY)];
        assert_eq!(select_min(&none), None);
    }

    #[test]
    fn choice_round_trips_through_json() {
        let fx = example1();
        let c = SolverChoice::dp(&fx.model, 11, 11);
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"kind\":\"dp\""));
        assert_eq!(serde_json::from_str::<SolverChoice>(&s).unwrap(), c);
    }

    #[test]
    fn zero_horizon_is_rejected() {
        let fx = example1();
        let grid = GridSpec::uniform(&fx.model, 11, 11);
        assert!(matches!(
            DpSolver::new(&fx.model, &fx.terminal, 0, &grid),
            Err(OcpError::InvalidHorizon(0))
        ));
    }
}
