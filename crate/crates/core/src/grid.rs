//! Tensor-product lattices over constraint boxes, multilinear interpolation
//! and precomputed one-step transition tables shared by the grid solvers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BoxSet, SystemModel, BOX_TOL};

/// Fractional index distance (in cells) below which a point snaps onto a node.
pub const SNAP: f64 = 1e-9;

/// Upper bound on `state nodes × input nodes` for a transition table.
pub const MAX_TRANSITIONS: usize = 40_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid resolution must be at least 2 per dimension, got {0:?}")]
    Resolution(Vec<usize>),
    #[error("grid has {got} resolution entries for a {expected}-dimensional box")]
    Dimension { expected: usize, got: usize },
    #[error("transition table would hold {0} entries (limit {MAX_TRANSITIONS})")]
    TooLarge(usize),
}

/// Node counts for the state and input lattices plus the number of local
/// input refinement rounds used when extracting minimizers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub state_resolution: Vec<usize>,
    pub input_resolution: Vec<usize>,
    #[serde(default = "default_rounds")]
    pub refinement_rounds: usize,
}

fn default_rounds() -> usize {
    3
}

impl GridSpec {
    pub fn new(state_resolution: Vec<usize>, input_resolution: Vec<usize>, refinement_rounds: usize) -> Self {
        Self {
            state_resolution,
            input_resolution,
            refinement_rounds,
        }
    }

    /// Same node count in every state (resp. input) dimension of `model`.
    pub fn uniform(model: &SystemModel, state_nodes: usize, input_nodes: usize) -> Self {
        Self::new(
            vec![state_nodes; model.state_dim()],
            vec![input_nodes; model.input_dim()],
            default_rounds(),
        )
    }

    pub fn with_refinement(mut self, rounds: usize) -> Self {
        self.refinement_rounds = rounds;
        self
    }

    pub fn validate(&self, model: &SystemModel) -> Result<(), GridError> {
        for (res, dim) in [
            (&self.state_resolution, model.state_dim()),
            (&self.input_resolution, model.input_dim()),
        ] {
            if res.len() != dim {
                return Err(GridError::Dimension {
                    expected: dim,
                    got: res.len(),
                });
            }
            if res.iter().any(|&c| c < 2) {
                return Err(GridError::Resolution(res.clone()));
            }
        }
        Ok(())
    }
}

/// Interpolation stencil: node indices with nonnegative weights summing to 1.
#[derive(Debug, Clone, Default)]
pub struct Stencil {
    pub nodes: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Stencil {
    pub fn apply(&self, values: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (&i, &w) in self.nodes.iter().zip(&self.weights) {
            let v = values[i];
            if !v.is_finite() {
                return f64::INFINITY;
            }
            acc += w * v;
        }
        acc
    }
}

/// Regular tensor-product lattice on a box. Node order is lexicographic in
/// the coordinates (first axis slowest).
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    lo: Vec<f64>,
    hi: Vec<f64>,
    counts: Vec<usize>,
    strides: Vec<usize>,
}

impl Lattice {
    pub fn new(domain: &BoxSet, counts: &[usize]) -> Result<Self, GridError> {
        if counts.len() != domain.dim() {
            return Err(GridError::Dimension {
                expected: domain.dim(),
                got: counts.len(),
            });
        }
        if counts.iter().any(|&c| c < 2) {
            return Err(GridError::Resolution(counts.to_vec()));
        }
        let mut strides = vec![1; counts.len()];
        for d in (0..counts.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * counts[d + 1];
        }
        Ok(Self {
            lo: domain.lo().to_vec(),
            hi: domain.hi().to_vec(),
            counts: counts.to_vec(),
            strides,
        })
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self, d: usize) -> f64 {
        (self.hi[d] - self.lo[d]) / (self.counts[d] - 1) as f64
    }

    /// Largest cell diagonal half-length.
    pub fn half_cell(&self) -> f64 {
        0.5 * (0..self.dim()).map(|d| self.spacing(d).powi(2)).sum::<f64>().sqrt()
    }

    pub fn axis_value(&self, d: usize, i: usize) -> f64 {
        // Weighted form is correctly rounded when the bounds are integers.
        let n = (self.counts[d] - 1) as f64;
        let i = i as f64;
        (self.lo[d] * (n - i) + self.hi[d] * i) / n
    }

    pub fn point_into(&self, idx: usize, out: &mut [f64]) {
        for d in 0..self.dim() {
            let i = (idx / self.strides[d]) % self.counts[d];
            out[d] = self.axis_value(d, i);
        }
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        self.point_into(idx, &mut p);
        p
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    fn axis_position(&self, d: usize, v: f64) -> Option<f64> {
        if v < self.lo[d] - BOX_TOL || v > self.hi[d] + BOX_TOL || v.is_nan() {
            return None;
        }
        let width = self.hi[d] - self.lo[d];
        if width <= 0.0 {
            return Some(0.0);
        }
        let t = (v - self.lo[d]) / width * (self.counts[d] - 1) as f64;
        Some(t.clamp(0.0, (self.counts[d] - 1) as f64))
    }

    /// Fills `st` with the multilinear stencil at `x`; `false` if `x` is
    /// outside the lattice box.
    pub fn stencil(&self, x: &[f64], st: &mut Stencil) -> bool {
        st.nodes.clear();
        st.weights.clear();
        st.nodes.push(0);
        st.weights.push(1.0);
        for d in 0..self.dim() {
            let Some(t) = self.axis_position(d, x[d]) else {
                return false;
            };
            let last = self.counts[d] - 1;
            let mut i0 = t.floor() as usize;
            let mut frac = t - i0 as f64;
            if i0 >= last {
                i0 = last;
                frac = 0.0;
            }
            let stride = self.strides[d];
            if frac <= SNAP {
                for n in st.nodes.iter_mut() {
                    *n += i0 * stride;
                }
            } else if frac >= 1.0 - SNAP {
                for n in st.nodes.iter_mut() {
                    *n += (i0 + 1) * stride;
                }
            } else {
                let len = st.nodes.len();
                for k in 0..len {
                    let (n, w) = (st.nodes[k], st.weights[k]);
                    st.nodes[k] = n + i0 * stride;
                    st.weights[k] = w * (1.0 - frac);
                    st.nodes.push(n + (i0 + 1) * stride);
                    st.weights.push(w * frac);
                }
            }
        }
        true
    }

    /// Multilinear interpolation; `+∞` outside the box or when any corner
    /// with positive weight is infinite.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let mut st = Stencil::default();
        if !self.stencil(x, &mut st) {
            return f64::INFINITY;
        }
        st.apply(values)
    }

    /// Index of the node closest to `x` (coordinates clamped into the box).
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        for d in 0..self.dim() {
            let width = self.hi[d] - self.lo[d];
            let t = if width > 0.0 {
                ((x[d] - self.lo[d]) / width * (self.counts[d] - 1) as f64).clamp(0.0, (self.counts[d] - 1) as f64)
            } else {
                0.0
            };
            idx += (t.round() as usize) * self.strides[d];
        }
        idx
    }

    /// Corner nodes of the cell containing `x` (deduplicated, ascending).
    pub fn cell_corners(&self, x: &[f64]) -> Vec<usize> {
        let mut nodes = vec![0usize];
        for d in 0..self.dim() {
            let width = self.hi[d] - self.lo[d];
            let last = self.counts[d] - 1;
            let t = if width > 0.0 {
                ((x[d] - self.lo[d]) / width * last as f64).clamp(0.0, last as f64)
            } else {
                0.0
            };
            let i0 = (t.floor() as usize).min(last);
            let i1 = (i0 + 1).min(last);
            let stride = self.strides[d];
            let len = nodes.len();
            for k in 0..len {
                let base = nodes[k];
                nodes[k] = base + i0 * stride;
                if i1 != i0 {
                    nodes.push(base + i1 * stride);
                }
            }
        }
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }
}

/// All admissible one-step transitions from every state node through every
/// input node, with stage costs and successor stencils.
#[derive(Debug, Clone)]
pub struct TransitionTable {
    state: Lattice,
    input: Lattice,
    offsets: Vec<usize>,
    inputs: Vec<u32>,
    costs: Vec<f64>,
    st_offsets: Vec<usize>,
    st_nodes: Vec<u32>,
    st_weights: Vec<f64>,
}

struct NodeTransitions {
    inputs: Vec<u32>,
    costs: Vec<f64>,
    st_lens: Vec<usize>,
    st_nodes: Vec<u32>,
    st_weights: Vec<f64>,
}

impl TransitionTable {
    pub fn build(model: &SystemModel, grid: &GridSpec) -> Result<Self, GridError> {
        grid.validate(model)?;
        let state = Lattice::new(model.state_box(), &grid.state_resolution)?;
        let input = Lattice::new(model.input_box(), &grid.input_resolution)?;
        let total = state.len().saturating_mul(input.len());
        if total > MAX_TRANSITIONS {
            return Err(GridError::TooLarge(total));
        }
        let per_node: Vec<NodeTransitions> = (0..state.len())
            .into_par_iter()
            .map(|i| {
                let x = state.point(i);
                let mut u = vec![0.0; input.dim()];
                let mut y = vec![0.0; state.dim()];
                let mut st = Stencil::default();
                let mut nt = NodeTransitions {
                    inputs: Vec::new(),
                    costs: Vec::new(),
                    st_lens: Vec::new(),
                    st_nodes: Vec::new(),
                    st_weights: Vec::new(),
                };
                for j in 0..input.len() {
                    input.point_into(j, &mut u);
                    model.step_into(&x, &u, &mut y);
                    if !state.stencil(&y, &mut st) {
                        continue;
                    }
                    nt.inputs.push(j as u32);
                    nt.costs.push(model.stage_cost(&x, &u));
                    nt.st_lens.push(st.nodes.len());
                    nt.st_nodes.extend(st.nodes.iter().map(|&n| n as u32));
                    nt.st_weights.extend_from_slice(&st.weights);
                }
                nt
            })
            .collect();

        let mut table = Self {
            state,
            input,
            offsets: Vec::with_capacity(per_node.len() + 1),
            inputs: Vec::new(),
            costs: Vec::new(),
            st_offsets: vec![0],
            st_nodes: Vec::new(),
            st_weights: Vec::new(),
        };
        table.offsets.push(0);
        for nt in per_node {
            table.inputs.extend(nt.inputs);
            table.costs.extend(nt.costs);
            for len in nt.st_lens {
                let last = *table.st_offsets.last().unwrap();
                table.st_offsets.push(last + len);
            }
            table.st_nodes.extend(nt.st_nodes);
            table.st_weights.extend(nt.st_weights);
            table.offsets.push(table.inputs.len());
        }
        Ok(table)
    }

    pub fn state_lattice(&self) -> &Lattice {
        &self.state
    }

    pub fn input_lattice(&self) -> &Lattice {
        &self.input
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn num_transitions(&self) -> usize {
        self.inputs.len()
    }

    /// Stage costs of every stored transition under another cost function.
    pub fn recost(&self, cost: impl Fn(&[f64], &[f64]) -> f64 + Sync) -> Vec<f64> {
        (0..self.state.len())
            .into_par_iter()
            .flat_map_iter(|i| {
                let x = self.state.point(i);
                let mut u = vec![0.0; self.input.dim()];
                (self.offsets[i]..self.offsets[i + 1])
                    .map(|e| {
                        self.input.point_into(self.inputs[e] as usize, &mut u);
                        cost(&x, &u)
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    fn successor_value(&self, e: usize, next: &[f64]) -> f64 {
        let mut acc = 0.0;
        for s in self.st_offsets[e]..self.st_offsets[e + 1] {
            let v = next[self.st_nodes[s] as usize];
            if !v.is_finite() {
                return f64::INFINITY;
            }
            acc += self.st_weights[s] * v;
        }
        acc
    }

    /// `out[i] = min_e costs[e] + scale · next(f(x_i, u_e))`.
    pub fn backup(&self, costs: &[f64], next: &[f64], scale: f64, out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let mut best = f64::INFINITY;
            for e in self.offsets[i]..self.offsets[i + 1] {
                let v = self.successor_value(e, next);
                if v.is_finite() {
                    let total = costs[e] + scale * v;
                    if total < best {
                        best = total;
                    }
                }
            }
            *o = best;
        });
    }
}

/// Lattice points over a box with `counts` nodes per dimension.
pub fn box_samples(domain: &BoxSet, counts: &[usize]) -> Result<Vec<Vec<f64>>, GridError> {
    Ok(Lattice::new(domain, counts)?.points())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::registry::example1;
    use proptest::prelude::*;

    fn unit_lattice(n: usize) -> Lattice {
        Lattice::new(&BoxSet::cube(1, -1.0, 1.0).unwrap(), &[n]).unwrap()
    }

    #[test]
    fn endpoints_are_exact() {
        let l = unit_lattice(401);
        assert_eq!(l.axis_value(0, 0), -1.0);
        assert_eq!(l.axis_value(0, 200), 0.0);
        assert_eq!(l.axis_value(0, 400), 1.0);
    }

    #[test]
    fn near_node_snaps() {
        let l = unit_lattice(401);
        let mut st = Stencil::default();
        assert!(l.stencil(&[0.3], &mut st));
        assert_eq!(st.nodes, vec![260]);
    }

    #[test]
    fn interpolation_is_linear_between_nodes() {
        let l = unit_lattice(3);
        let vals = [1.0, 3.0, 7.0];
        assert!((l.interpolate(&vals, &[-0.5]) - 2.0).abs() < 1e-15);
        assert!((l.interpolate(&vals, &[0.75]) - 6.0).abs() < 1e-15);
        assert_eq!(l.interpolate(&vals, &[1.5]), f64::INFINITY);
        let partial = [1.0, f64::INFINITY, 7.0];
        assert_eq!(l.interpolate(&partial, &[0.5]), f64::INFINITY);
        assert_eq!(l.interpolate(&partial, &[1.0]), 7.0);
    }

    #[test]
    fn two_dimensional_bilinear() {
        let b = BoxSet::cube(2, 0.0, 1.0).unwrap();
        let l = Lattice::new(&b, &[2, 3]).unwrap();
        let vals: Vec<f64> = l.points().iter().map(|p| 2.0 * p[0] - p[1] + 0.5).collect();
        let v = l.interpolate(&vals, &[0.3, 0.8]);
        assert!((v - (0.6 - 0.8 + 0.5)).abs() < 1e-14);
        assert_eq!(l.cell_corners(&[0.3, 0.8]).len(), 4);
    }

    #[test]
    fn transitions_of_example1_stay_in_box() {
        let fx = example1();
        let grid = GridSpec::uniform(&fx.model, 21, 21);
        let t = TransitionTable::build(&fx.model, &grid).unwrap();
        // from x = -1 only u >= 0 keeps the state inside: 11 inputs
        assert_eq!(t.offsets[1] - t.offsets[0], 11);
        // from x = 0 all inputs are admissible
        assert_eq!(t.offsets[11] - t.offsets[10], 21);
    }

    #[test]
    fn rejects_bad_resolution() {
        let fx = example1();
        let grid = GridSpec::new(vec![1], vec![5], 0);
        assert!(matches!(grid.validate(&fx.model), Err(GridError::Resolution(_))));
        let grid = GridSpec::new(vec![5, 5], vec![5], 0);
        assert!(matches!(grid.validate(&fx.model), Err(GridError::Dimension { .. })));
    }

    proptest! {
        #[test]
        fn stencil_weights_form_a_partition_of_unity(x in -1.0f64..1.0, y in -1.0f64..1.0) {
            let b = BoxSet::cube(2, -1.0, 1.0).unwrap();
            let l = Lattice::new(&b, &[7, 4]).unwrap();
            let mut st = Stencil::default();
            prop_assert!(l.stencil(&[x, y], &mut st));
            let s: f64 = st.weights.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(st.weights.iter().all(|&w| w >= 0.0));
        }
    }
}
