//! Cesàro costs, Cesàro value iteration without terminal conditions and
//! terminal-cost synthesis from the optimal orbit.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::grid::{GridError, GridSpec, Lattice, TransitionTable};
use crate::model::{euclidean, PeriodicOrbit, SystemModel, Trajectory, TAU_ORBIT};
use crate::ocp::{OcpError, TerminalIngredients, TerminalPoint};
use crate::report::CheckReport;
use crate::rotation::{terminal_decrease, RotationError, StorageFunction, TAU_EQ};

/// Default Cauchy tail tolerance `|J^ces_K - J^ces_{K/2}|`.
pub const TAIL_TOL: f64 = 1e-3;
/// Largest `|ℓ_Π|` accepted as "pre-shifted to zero".
pub const ZERO_MEAN_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CesaroError {
    #[error("horizon {k} exceeds trajectory length {len}")]
    HorizonTooLong { k: usize, len: usize },
    #[error("Cesàro horizon must be at least 1")]
    ZeroHorizon,
    #[error("orbit average cost is {0}, expected 0 (shift the stage cost first)")]
    NonZeroOrbitCost(f64),
    #[error("terminal-cost recursion does not close over one period (residual {0})")]
    Closure(f64),
    #[error("orbit state {state:?} repeats at indices {first} and {second} with values {v_first} and {v_second}")]
    InconsistentRepeatedState {
        state: Vec<f64>,
        first: usize,
        second: usize,
        v_first: f64,
        v_second: f64,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Ocp(#[from] OcpError),
}

/// Compensated (Neumaier) summation.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `Σ_{k<K} (1 - k/K) ℓ_k`.
pub fn cesaro_weighted(stage_costs: &[f64], k: usize) -> f64 {
    let kk = k as f64;
    neumaier_sum(stage_costs[..k].iter().enumerate().map(|(i, &l)| (1.0 - i as f64 / kk) * l))
}

/// `(1/K) Σ_{n<K} J¹_{n+1}` with `J¹_{n+1} = Σ_{k≤n} ℓ_k`.
pub fn cesaro_partial_sums(stage_costs: &[f64], k: usize) -> f64 {
    let mut partial = 0.0;
    let mut comp = 0.0;
    let mut sums = Vec::with_capacity(k);
    for &l in &stage_costs[..k] {
        let y = l - comp;
        let t = partial + y;
        comp = (t - partial) - y;
        partial = t;
        sums.push(partial);
    }
    neumaier_sum(sums) / k as f64
}

/// Right-hand side of the `q`-step separation
/// `J^ces_N = Σ_{k<q} (1 - k/N) ℓ_k + ((N-q)/N) J^ces_{N-q}(ℓ_{q..})`.
pub fn separation_rhs(stage_costs: &[f64], n: usize, q: usize) -> f64 {
    let nn = n as f64;
    let head = neumaier_sum(stage_costs[..q].iter().enumerate().map(|(i, &l)| (1.0 - i as f64 / nn) * l));
    if q == n {
        return head;
    }
    head + (n - q) as f64 / nn * cesaro_weighted(&stage_costs[q..], n - q)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CesaroEvaluation {
    pub horizon: usize,
    /// `J¹_K = Σ_{k<K} ℓ_k`.
    pub ordinary_cost: f64,
    /// Weighted form.
    pub cesaro_cost: f64,
    /// Average-of-partial-sums form.
    pub cesaro_cost_partial_sums: f64,
    /// `|J^ces_K - J^ces_{⌊K/2⌋}|`.
    pub tail_gap: f64,
    pub converged: bool,
}

impl CesaroEvaluation {
    pub fn form_disagreement(&self) -> f64 {
        (self.cesaro_cost - self.cesaro_cost_partial_sums).abs()
    }
}

pub fn cesaro_cost(stage_costs: &[f64], k: usize) -> Result<CesaroEvaluation, CesaroError> {
    cesaro_cost_with_tol(stage_costs, k, TAIL_TOL)
}

pub fn cesaro_cost_with_tol(stage_costs: &[f64], k: usize, tail_tol: f64) -> Result<CesaroEvaluation, CesaroError> {
    if k == 0 {
        return Err(CesaroError::ZeroHorizon);
    }
    if k > stage_costs.len() {
        return Err(CesaroError::HorizonTooLong {
            k,
            len: stage_costs.len(),
        });
    }
    let cesaro = cesaro_weighted(stage_costs, k);
    let half = (k / 2).max(1);
    let tail_gap = (cesaro - cesaro_weighted(stage_costs, half)).abs();
    Ok(CesaroEvaluation {
        horizon: k,
        ordinary_cost: neumaier_sum(stage_costs[..k].iter().copied()),
        cesaro_cost: cesaro,
        cesaro_cost_partial_sums: cesaro_partial_sums(stage_costs, k),
        tail_gap,
        converged: tail_gap < tail_tol,
    })
}

pub fn cesaro_cost_of(traj: &Trajectory, k: usize) -> Result<CesaroEvaluation, CesaroError> {
    cesaro_cost(&traj.stage_costs, k)
}

#[derive(Debug, Clone)]
pub struct CesaroViOptions {
    pub eps_vi: f64,
    pub n_max: usize,
    /// Also iterate the rotated recursion and record its monotonicity.
    pub storage: Option<StorageFunction>,
    /// Iterations whose tables are kept in [`CesaroValueTable::snapshots`].
    pub keep: Vec<usize>,
}

impl Default for CesaroViOptions {
    fn default() -> Self {
        Self {
            eps_vi: 1e-4,
            n_max: 20_000,
            storage: None,
            keep: Vec::new(),
        }
    }
}

/// Result of `V_N(x) = min_u ℓ(x,u) + ((N-1)/N) V_{N-1}(f(x,u))` on a grid.
#[derive(Debug, Clone)]
pub struct CesaroValueTable {
    lattice: Lattice,
    pub values: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm change per iteration, starting at `N = 2`.
    pub deltas: Vec<f64>,
    pub converged: bool,
    /// Nodes at which the rotated table decreased, summed over iterations.
    pub rotated_violations: Option<usize>,
    pub snapshots: BTreeMap<usize, Vec<f64>>,
}

impl CesaroValueTable {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        self.lattice.points()
    }

    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.lattice.interpolate(&self.values, x)
    }

    pub fn snapshot_at(&self, n: usize, x: &[f64]) -> Option<f64> {
        self.snapshots.get(&n).map(|v| self.lattice.interpolate(v, x))
    }

    pub fn last_delta(&self) -> f64 {
        self.deltas.last().copied().unwrap_or(f64::INFINITY)
    }

    /// `x_1,...,x_n,value` rows.
    pub fn to_csv(&self) -> String {
        let n = self.lattice.dim();
        let mut out = String::new();
        for d in 0..n {
            let _ = write!(out, "x{d},");
        }
        out.push_str("value\n");
        let mut x = vec![0.0; n];
        for (i, v) in self.values.iter().enumerate() {
            self.lattice.point_into(i, &mut x);
            for c in &x {
                let _ = write!(out, "{},", crate::cli::fmt_num(*c));
            }
            let _ = writeln!(out, "{}", crate::cli::fmt_num(*v));
        }
        out
    }
}

fn check_zero_mean(orbit: &PeriodicOrbit) -> Result<(), CesaroError> {
    if orbit.average_cost().abs() >= ZERO_MEAN_TOL {
        return Err(CesaroError::NonZeroOrbitCost(orbit.average_cost()));
    }
    Ok(())
}

pub fn cesaro_value_iteration(
    model: &SystemModel,
    orbit: &PeriodicOrbit,
    grid: &GridSpec,
    opts: &CesaroViOptions,
) -> Result<CesaroValueTable, CesaroError> {
    check_zero_mean(orbit)?;
    let table = TransitionTable::build(model, grid)?;
    let len = table.state_lattice().len();
    let rot_costs = opts.storage.as_ref().map(|s| {
        let m = model.clone();
        let s = s.clone();
        table.recost(move |x, u| m.stage_cost(x, u) + s.eval(x) - s.eval(&m.step(x, u)))
    });
    let zeros = vec![0.0; len];
    let mut v = vec![0.0; len];
    table.backup(table.costs(), &zeros, 0.0, &mut v);
    let mut rv = rot_costs.as_ref().map(|c| {
        let mut out = vec![0.0; len];
        table.backup(c, &zeros, 0.0, &mut out);
        out
    });
    let mut snapshots = BTreeMap::new();
    if opts.keep.contains(&1) {
        snapshots.insert(1, v.clone());
    }
    let mut next = vec![0.0; len];
    let mut rnext = vec![0.0; len];
    let mut deltas = Vec::new();
    let mut violations = 0usize;
    let mut n = 1;
    let mut converged = false;
    while n < opts.n_max {
        n += 1;
        let scale = (n - 1) as f64 / n as f64;
        table.backup(table.costs(), &v, scale, &mut next);
        let delta = sup_diff(&next, &v);
        std::mem::swap(&mut v, &mut next);
        if let (Some(c), Some(r)) = (&rot_costs, rv.as_mut()) {
            table.backup(c, r, scale, &mut rnext);
            violations += rnext
                .iter()
                .zip(r.iter())
                .filter(|(a, b)| a.is_finite() && b.is_finite() && **a < **b - 1e-12 * (1.0 + b.abs()))
                .count();
            std::mem::swap(r, &mut rnext);
        }
        if opts.keep.contains(&n) {
            snapshots.insert(n, v.clone());
        }
        deltas.push(delta);
        if delta < opts.eps_vi {
            converged = true;
            break;
        }
    }
    Ok(CesaroValueTable {
        lattice: table.state_lattice().clone(),
        values: v,
        iterations: n,
        deltas,
        converged,
        rotated_violations: rot_costs.map(|_| violations),
        snapshots,
    })
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x.is_finite() && y.is_finite() {
                (x - y).abs()
            } else if x == y {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

/// Approximation error of a truncated value-iteration table used as terminal
/// cost: the larger of the last sup-norm change and half the largest
/// violation of `V(Π_X(i+1)) = V(Π_X(i)) - ℓ(Π(i))`.
pub fn epsilon_estimate(table: &CesaroValueTable, model: &SystemModel, orbit: &PeriodicOrbit) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..orbit.period() {
        let r = table.value_at(orbit.state(i + 1)) - table.value_at(orbit.state(i))
            + model.stage_cost(orbit.state(i), orbit.input(i));
        worst = worst.max(r.abs());
    }
    table.last_delta().max(0.5 * worst)
}

/// Terminal ingredients on the orbit states with `V_f(Π_X(0)) = 0` and
/// `V_f(Π_X(i+1)) = V_f(Π_X(i)) - ℓ(Π(i))`; the law is the orbit input at
/// the first visit of each state.
pub fn synthesize_terminal_cost(model: &SystemModel, orbit: &PeriodicOrbit) -> Result<TerminalIngredients, CesaroError> {
    check_zero_mean(orbit)?;
    let p = orbit.period();
    let mut values = Vec::with_capacity(p + 1);
    values.push(0.0);
    for i in 0..p {
        values.push(values[i] - model.stage_cost(orbit.state(i), orbit.input(i)));
    }
    let closure = values[p];
    if closure.abs() > 1e-12 {
        return Err(CesaroError::Closure(closure));
    }
    let mut points: Vec<(usize, TerminalPoint)> = Vec::new();
    for i in 0..p {
        let x = orbit.state(i);
        if let Some((j, q)) = points.iter().find(|(_, q)| euclidean(&q.state, x) <= TAU_ORBIT) {
            if (q.cost - values[i]).abs() > 1e-12 {
                return Err(CesaroError::InconsistentRepeatedState {
                    state: x.to_vec(),
                    first: *j,
                    second: i,
                    v_first: q.cost,
                    v_second: values[i],
                });
            }
            continue;
        }
        points.push((i, TerminalPoint::new(x.to_vec(), values[i], Some(orbit.input(i).to_vec()))));
    }
    Ok(TerminalIngredients::finite(points.into_iter().map(|(_, q)| q).collect())?)
}

/// `V_f(x) ≥ V_f(f(x,u_f(x))) + ℓ(x,u_f(x)) - 2ε` on terminal samples, for a
/// zero-mean stage cost. Witness residuals are measured against the
/// slackened bound.
pub fn check_eps_inflated_terminal(
    terminal: &TerminalIngredients,
    model: &SystemModel,
    eps: f64,
) -> Result<CheckReport, RotationError> {
    terminal_decrease("eps-inflated-terminal", model, terminal, None, 0.0, 2.0 * eps.max(0.0), TAU_EQ, 21)
}
