use std::cmp::Ordering;

use super::{
    check_common, check_initial_state, finish_solution, lex_cmp, tie_tol, OcpError, OcpSolution, OcpSolver,
    TerminalIngredients, TAU_F,
};
use crate::grid::Lattice;
use crate::model::{SystemModel, BOX_TOL};

/// Largest number of input sequences the oracle will enumerate.
pub const ORACLE_BUDGET: f64 = 1e8;

/// Exhaustive enumeration over an input lattice with exact dynamics. With
/// exact landing and a finite terminal set, landing inputs onto each
/// terminal point are added at every stage.
#[derive(Debug, Clone)]
pub struct OracleSolver {
    model: SystemModel,
    terminal: TerminalIngredients,
    horizon: usize,
    grid_inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

struct Search<'a> {
    solver: &'a OracleSolver,
    seq: Vec<Vec<f64>>,
    best: Option<(f64, Vec<Vec<f64>>)>,
}

impl OracleSolver {
    pub fn new(
        model: &SystemModel,
        terminal: &TerminalIngredients,
        horizon: usize,
        density: usize,
    ) -> Result<Self, OcpError> {
        check_common(model, terminal, horizon)?;
        let lattice = Lattice::new(model.input_box(), &vec![density; model.input_dim()])?;
        let targets: Vec<Vec<f64>> = match (terminal.points(), model.has_exact_landing()) {
            (Some(p), true) => p.iter().map(|p| p.state.clone()).collect(),
            _ => Vec::new(),
        };
        let per_stage = (lattice.len() + targets.len()) as f64;
        let needed = per_stage.powi(horizon as i32);
        if needed > ORACLE_BUDGET {
            return Err(OcpError::BudgetExceeded {
                needed,
                budget: ORACLE_BUDGET,
            });
        }
        Ok(Self {
            model: model.clone(),
            terminal: terminal.clone(),
            horizon,
            grid_inputs: lattice.points(),
            targets,
        })
    }

    fn candidates(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut c = self.grid_inputs.clone();
        c.extend(self.targets.iter().filter_map(|t| self.model.landing_input(x, t)));
        c.sort_by(|a, b| lex_cmp(a, b));
        c.dedup_by(|a, b| lex_cmp(a, b) == Ordering::Equal);
        c
    }
}

impl Search<'_> {
    fn visit(&mut self, x: &[f64], acc: f64) {
        let s = self.solver;
        let last = self.seq.len() + 1 == s.horizon;
        for u in s.candidates(x) {
            let y = s.model.step(x, &u);
            if !s.model.state_box().contains(&y, BOX_TOL) {
                continue;
            }
            let cost = acc + s.model.stage_cost(x, &u);
            self.seq.push(u);
            if last {
                if let Some(vf) = s.terminal.cost_at(&y, TAU_F) {
                    let total = cost + vf;
                    let better = match &self.best {
                        None => true,
                        Some((b, _)) => total < b - tie_tol(*b),
                    };
                    if better {
                        self.best = Some((total, self.seq.clone()));
                    }
                }
            } else {
                self.visit(&y, cost);
            }
            self.seq.pop();
        }
    }
}

impl OcpSolver for OracleSolver {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn model(&self) -> &SystemModel {
        &self.model
    }

    fn terminal(&self) -> &TerminalIngredients {
        &self.terminal
    }

    fn solve(&self, x: &[f64]) -> Result<OcpSolution, OcpError> {
        check_initial_state(&self.model, x)?;
        let mut search = Search {
            solver: self,
            seq: Vec::with_capacity(self.horizon),
            best: None,
        };
        search.visit(x, 0.0);
        let Some((_, inputs)) = search.best else {
            return Err(OcpError::Infeasible {
                state: x.to_vec(),
                horizon: self.horizon,
            });
        };
        finish_solution(&self.model, &self.terminal, self.horizon, x, inputs, TAU_F)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::registry::example1;
    use crate::ocp::TerminalPoint;

    #[test]
    fn one_step_from_origin_breaks_tie_low() {
        let fx = example1();
        let sol = OracleSolver::new(&fx.model, &fx.terminal, 1, 3).unwrap().solve(&[0.0]).unwrap();
        assert_eq!(sol.value, -0.5);
        assert_eq!(sol.inputs, vec![vec![-1.0]]);
    }

    #[test]
    fn two_steps_from_origin() {
        let fx = example1();
        let sol = OracleSolver::new(&fx.model, &fx.terminal, 2, 21).unwrap().solve(&[0.0]).unwrap();
        assert!(sol.value <= -0.5 + 1e-12);
    }

    #[test]
    fn landing_reaches_terminal_from_off_grid_state() {
        let fx = example1();
        let sol = OracleSolver::new(&fx.model, &fx.terminal, 1, 3).unwrap().solve(&[0.95]).unwrap();
        // landing at 1 costs ℓ(0.95, 0.05) + 1/2, at 0 costs ℓ(0.95, -0.95) - 1/2
        let a: f64 = 2.0 * (2.0 * 0.95 - 0.95 * 0.95 - 0.05 * 0.05) + 1.0 + 0.5;
        let b = 2.0 * (2.0 * 0.95 - 0.95 * 0.95 - 0.95 * 0.95) + 1.0 - 0.5;
        assert!((sol.value - a.min(b)).abs() < 1e-12);
    }

    #[test]
    fn unreachable_terminal_set_is_infeasible() {
        let fx = example1();
        let far = TerminalIngredients::finite(vec![TerminalPoint::new(vec![1.0], 0.0, None)]).unwrap();
        let s = OracleSolver::new(&fx.model, &far, 1, 5).unwrap();
        assert!(matches!(s.solve(&[-1.0]), Err(OcpError::Infeasible { .. })));
    }

    #[test]
    fn budget_guard() {
        let fx = example1();
        assert!(matches!(
            OracleSolver::new(&fx.model, &fx.terminal, 9, 101),
            Err(OcpError::BudgetExceeded { .. })
        ));
    }
}
