use super::{
    check_common, check_initial_state, finish_solution, select_min, OcpError, OcpSolution, OcpSolver,
    TerminalIngredients, TAU_F,
};
use crate::grid::{GridSpec, Lattice, TransitionTable};
use crate::model::{SystemModel, BOX_TOL};

/// Backward dynamic programming on a state lattice with forward greedy
/// extraction of the input sequence.
#[derive(Debug, Clone)]
pub struct DpSolver {
    model: SystemModel,
    terminal: TerminalIngredients,
    horizon: usize,
    table: TransitionTable,
    /// `values[k]`: value table with `k` steps to go.
    values: Vec<Vec<f64>>,
    rounds: usize,
    tau_f: f64,
}

impl DpSolver {
    pub fn new(
        model: &SystemModel,
        terminal: &TerminalIngredients,
        horizon: usize,
        grid: &GridSpec,
    ) -> Result<Self, OcpError> {
        check_common(model, terminal, horizon)?;
        let table = TransitionTable::build(model, grid)?;
        let lattice = table.state_lattice();
        let tau_f = match terminal {
            TerminalIngredients::Finite(_) if !model.has_exact_landing() => lattice.half_cell(),
            _ => TAU_F,
        };
        let mut vf = vec![f64::INFINITY; lattice.len()];
        match terminal {
            TerminalIngredients::Finite(points) => {
                for (i, p) in points.iter().enumerate() {
                    if !model.state_box().contains(&p.state, BOX_TOL) {
                        return Err(OcpError::InvalidTerminal(format!(
                            "terminal point {:?} lies outside the state box",
                            p.state
                        )));
                    }
                    let node = lattice.nearest(&p.state);
                    if vf[node].is_finite() {
                        return Err(OcpError::GridDegenerate(format!(
                            "terminal point {i} snaps onto the same node as another terminal point"
                        )));
                    }
                    vf[node] = p.cost;
                }
            }
            TerminalIngredients::Region(_) => {
                let mut x = vec![0.0; lattice.dim()];
                for (i, v) in vf.iter_mut().enumerate() {
                    lattice.point_into(i, &mut x);
                    if let Some(c) = terminal.cost_at(&x, TAU_F) {
                        *v = c;
                    }
                }
            }
        }
        let mut values = Vec::with_capacity(horizon + 1);
        values.push(vf);
        for k in 1..=horizon {
            let mut out = vec![0.0; lattice.len()];
            table.backup(table.costs(), &values[k - 1], 1.0, &mut out);
            values.push(out);
        }
        Ok(Self {
            model: model.clone(),
            terminal: terminal.clone(),
            horizon,
            table,
            values,
            rounds: grid.refinement_rounds,
            tau_f,
        })
    }

    pub fn state_lattice(&self) -> &Lattice {
        self.table.state_lattice()
    }

    /// Node values with `steps_to_go` stages remaining.
    pub fn value_table(&self, steps_to_go: usize) -> &[f64] {
        &self.values[steps_to_go]
    }

    /// Interpolated table value `V_N(x)` (grid approximation, no extraction).
    pub fn table_value(&self, x: &[f64]) -> f64 {
        self.state_lattice().interpolate(&self.values[self.horizon], x)
    }

    pub fn terminal_tolerance(&self) -> f64 {
        self.tau_f
    }

    fn objective(&self, x: &[f64], u: &[f64], to_go: usize) -> f64 {
        let y = self.model.step(x, u);
        if !self.model.state_box().contains(&y, BOX_TOL) {
            return f64::INFINITY;
        }
        let tail = if to_go == 1 {
            self.terminal.cost_at(&y, self.tau_f).unwrap_or(f64::INFINITY)
        } else {
            self.state_lattice().interpolate(&self.values[to_go - 1], &y)
        };
        if tail.is_finite() {
            self.model.stage_cost(x, u) + tail
        } else {
            f64::INFINITY
        }
    }

    fn push_landings(&self, x: &[f64], targets: &[Vec<f64>], to_go: usize, cands: &mut Vec<(Vec<f64>, f64)>) {
        for t in targets {
            if let Some(u) = self.model.landing_input(x, t) {
                let v = self.objective(x, &u, to_go);
                cands.push((u, v));
            }
        }
    }

    fn corner_targets(&self, x: &[f64], u: &[f64]) -> Vec<Vec<f64>> {
        let lattice = self.state_lattice();
        let y = self.model.step(x, u);
        lattice.cell_corners(&y).into_iter().map(|i| lattice.point(i)).collect()
    }

    /// Grid minimizer refined locally, with exact landings onto terminal
    /// points and onto the lattice nodes around the incumbent successor.
    fn best_input(&self, x: &[f64], to_go: usize) -> Option<Vec<f64>> {
        let il = self.table.input_lattice();
        let mut cands: Vec<(Vec<f64>, f64)> = Vec::with_capacity(il.len() + 64);
        for j in 0..il.len() {
            let u = il.point(j);
            let v = self.objective(x, &u, to_go);
            cands.push((u, v));
        }
        let terminal_targets: Vec<Vec<f64>> = self
            .terminal
            .points()
            .map(|p| p.iter().map(|p| p.state.clone()).collect())
            .unwrap_or_default();
        self.push_landings(x, &terminal_targets, to_go, &mut cands);
        let mut inc = select_min(&cands)?;
        let m = il.dim();
        let ibox = self.model.input_box();
        for round in 1..=self.rounds {
            let centre = cands[inc].0.clone();
            let h: Vec<f64> = (0..m).map(|d| il.spacing(d) / 10f64.powi(round as i32)).collect();
            let per = 21usize;
            let total = per.pow(m as u32);
            for k in 0..total {
                let mut u = centre.clone();
                let mut r = k;
                for d in (0..m).rev() {
                    let off = (r % per) as f64 - 10.0;
                    r /= per;
                    u[d] += off * h[d];
                }
                ibox.clamp_in_place(&mut u);
                let v = self.objective(x, &u, to_go);
                cands.push((u, v));
            }
            inc = select_min(&cands)?;
            if to_go > 1 {
                let targets = self.corner_targets(x, &cands[inc].0.clone());
                self.push_landings(x, &targets, to_go, &mut cands);
                inc = select_min(&cands)?;
            }
        }
        if self.rounds == 0 && to_go > 1 {
            let targets = self.corner_targets(x, &cands[inc].0.clone());
            self.push_landings(x, &targets, to_go, &mut cands);
            inc = select_min(&cands)?;
        }
        Some(cands.swap_remove(inc).0)
    }
}

impl OcpSolver for DpSolver {
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
        let infeasible = || OcpError::Infeasible {
            state: x.to_vec(),
            horizon: self.horizon,
        };
        let mut inputs = Vec::with_capacity(self.horizon);
        let mut state = x.to_vec();
        for t in 0..self.horizon {
            let u = self.best_input(&state, self.horizon - t).ok_or_else(infeasible)?;
            state = self.model.step(&state, &u);
            inputs.push(u);
        }
        finish_solution(&self.model, &self.terminal, self.horizon, x, inputs, self.tau_f)
    }
}

/// Grid nodes with finite DP value for each horizon, and whether the
/// feasible sets are nested in the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleSetProbe {
    pub nodes: Vec<Vec<f64>>,
    pub horizons: Vec<usize>,
    pub masks: Vec<Vec<bool>>,
    pub nested: bool,
}

impl FeasibleSetProbe {
    pub fn count(&self, i: usize) -> usize {
        self.masks[i].iter().filter(|&&b| b).count()
    }
}

pub fn feasible_set_probe(
    model: &SystemModel,
    terminal: &TerminalIngredients,
    horizons: &[usize],
    grid: &GridSpec,
) -> Result<FeasibleSetProbe, OcpError> {
    let mut horizons = horizons.to_vec();
    horizons.sort_unstable();
    horizons.dedup();
    let max = *horizons.last().ok_or(OcpError::InvalidHorizon(0))?;
    let dp = DpSolver::new(model, terminal, max, grid)?;
    let masks: Vec<Vec<bool>> = horizons
        .iter()
        .map(|&n| dp.values[n].iter().map(|v| v.is_finite()).collect())
        .collect();
    let nested = masks
        .windows(2)
        .all(|w| w[0].iter().zip(&w[1]).all(|(&a, &b)| !a || b));
    Ok(FeasibleSetProbe {
        nodes: dp.state_lattice().points(),
        horizons,
        masks,
        nested,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::registry::{example1, lq_steady_state, LqParams};
    use crate::model::rollout;

    fn solver(n: usize, nodes: usize) -> DpSolver {
        let fx = example1();
        DpSolver::new(&fx.model, &fx.terminal, n, &GridSpec::uniform(&fx.model, nodes, nodes)).unwrap()
    }

    #[test]
    fn orbit_candidate_bounds_value_at_minus_one() {
        let fx = example1();
        let u: Vec<Vec<f64>> = [1.0, -1.0, 1.0, -1.0, 1.0].iter().map(|&v| vec![v]).collect();
        let tr = rollout(&fx.model, &[-1.0], &u).unwrap();
        let cand: f64 = tr.stage_costs.iter().sum::<f64>() + fx.terminal.cost_at(tr.final_state(), TAU_F).unwrap();
        assert!((cand - 0.5).abs() < 1e-12);
        let sol = solver(5, 401).solve(&[-1.0]).unwrap();
        assert!(sol.feasible);
        assert!(sol.value <= 0.5 + 1e-6);
    }

    #[test]
    fn one_step_from_origin() {
        let sol = solver(1, 401).solve(&[0.0]).unwrap();
        assert!((sol.value + 0.5).abs() < 1e-9);
        assert_eq!(sol.inputs, vec![vec![-1.0]]);
    }

    #[test]
    fn unreachable_target_is_skipped() {
        let sol = solver(1, 401).solve(&[0.95]).unwrap();
        let end = sol.trajectory.final_state()[0];
        assert!((end - 1.0).abs() < 1e-9 || end.abs() < 1e-9);
        assert!(sol.terminal_residual < 1e-9);
    }

    #[test]
    fn value_matches_rollout_cost() {
        let fx = example1();
        let sol = solver(3, 201).solve(&[0.37]).unwrap();
        let tr = rollout(&fx.model, &[0.37], &sol.inputs).unwrap();
        let j: f64 = tr.stage_costs.iter().sum::<f64>() + fx.terminal.cost_at(tr.final_state(), TAU_F).unwrap();
        assert!((j - sol.value).abs() < 1e-9);
    }

    #[test]
    fn feedback_on_orbit_follows_orbit() {
        let s = solver(5, 401);
        assert_eq!(s.feedback(&[-1.0]).unwrap(), vec![1.0]);
        assert_eq!(s.feedback(&[1.0]).unwrap(), vec![-1.0]);
        assert_eq!(s.feedback(&[0.0]).unwrap(), vec![-1.0]);
    }

    #[test]
    fn out_of_box_state_is_rejected() {
        assert!(matches!(solver(1, 21).solve(&[1.5]), Err(OcpError::OutOfBox { dim: 0, .. })));
    }

    #[test]
    fn colliding_terminal_points_are_degenerate() {
        let fx = example1();
        let grid = GridSpec::uniform(&fx.model, 2, 5);
        assert!(matches!(
            DpSolver::new(&fx.model, &fx.terminal, 1, &grid),
            Err(OcpError::GridDegenerate(_))
        ));
    }

    #[test]
    fn feasible_sets_are_nested() {
        let fx = example1();
        let grid = GridSpec::uniform(&fx.model, 101, 101);
        let probe = feasible_set_probe(&fx.model, &fx.terminal, &[1, 2, 5], &grid).unwrap();
        assert!(probe.nested);
        assert_eq!(probe.count(2), 101);
        assert_eq!(probe.count(0), 101);
    }

    #[test]
    fn lq_one_step_feasible_set_is_strict() {
        let fx = lq_steady_state(&LqParams::default()).unwrap();
        let grid = GridSpec::uniform(&fx.model, 101, 101);
        let probe = feasible_set_probe(&fx.model, &fx.terminal, &[1], &grid).unwrap();
        assert!(probe.count(0) < 101);
        assert!(probe.count(0) > 0);
        let s = DpSolver::new(&fx.model, &fx.terminal, 1, &grid).unwrap();
        assert!(matches!(s.solve(&[0.9]), Err(OcpError::Infeasible { .. })));
    }
}
