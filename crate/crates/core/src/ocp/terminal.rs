use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::OcpError;
use crate::grid::Lattice;
use crate::model::{euclidean, BoxSet, FeedbackFn, PeriodicOrbit, ScalarFn, BOX_TOL};

/// Terminal membership tolerance for exactly representable terminal sets.
pub const TAU_F: f64 = 1e-9;

/// One element of a finite terminal set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalPoint {
    pub state: Vec<f64>,
    pub cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law: Option<Vec<f64>>,
}

impl TerminalPoint {
    pub fn new(state: Vec<f64>, cost: f64, law: Option<Vec<f64>>) -> Self {
        Self { state, cost, law }
    }
}

/// Box-shaped terminal region with cost and optional local control law.
#[derive(Clone)]
pub struct TerminalRegion {
    pub region: BoxSet,
    pub cost: ScalarFn,
    pub law: Option<FeedbackFn>,
}

impl fmt::Debug for TerminalRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalRegion")
            .field("region", &self.region)
            .field("law", &self.law.is_some())
            .finish()
    }
}

/// Terminal set, terminal cost `V_f` and terminal law `u_f`.
#[derive(Clone, Debug)]
pub enum TerminalIngredients {
    Finite(Vec<TerminalPoint>),
    Region(TerminalRegion),
}

impl TerminalIngredients {
    /// Validates a finite point set: nonempty, one dimension, finite costs,
    /// pairwise distinct states.
    pub fn finite(points: Vec<TerminalPoint>) -> Result<Self, OcpError> {
        let Some(first) = points.first() else {
            return Err(OcpError::InvalidTerminal("terminal set is empty".into()));
        };
        let n = first.state.len();
        let m = first.law.as_ref().map(Vec::len);
        for (i, p) in points.iter().enumerate() {
            if p.state.len() != n {
                return Err(OcpError::InvalidTerminal(format!("terminal point {i} has dimension {}", p.state.len())));
            }
            if !p.cost.is_finite() || p.state.iter().any(|v| !v.is_finite()) {
                return Err(OcpError::InvalidTerminal(format!("terminal point {i} is not finite")));
            }
            if p.law.as_ref().map(Vec::len) != m {
                return Err(OcpError::InvalidTerminal(
                    "terminal law must be given for all points or none".into(),
                ));
            }
            for (j, q) in points[..i].iter().enumerate() {
                if euclidean(&p.state, &q.state) <= TAU_F {
                    return Err(OcpError::InvalidTerminal(format!("terminal points {j} and {i} coincide")));
                }
            }
        }
        Ok(Self::Finite(points))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Finite(p) => p[0].state.len(),
            Self::Region(r) => r.region.dim(),
        }
    }

    pub fn points(&self) -> Option<&[TerminalPoint]> {
        match self {
            Self::Finite(p) => Some(p),
            Self::Region(_) => None,
        }
    }

    fn nearest_point<'a>(points: &'a [TerminalPoint], x: &[f64], tol: f64) -> Option<&'a TerminalPoint> {
        let mut best: Option<(&TerminalPoint, f64)> = None;
        for p in points {
            let d = euclidean(&p.state, x);
            if d <= tol && best.map_or(true, |(_, bd)| d < bd) {
                best = Some((p, d));
            }
        }
        best.map(|(p, _)| p)
    }

    /// `V_f(x)` if `x` lies in the terminal set up to `tol`.
    pub fn cost_at(&self, x: &[f64], tol: f64) -> Option<f64> {
        if x.len() != self.dim() {
            return None;
        }
        match self {
            Self::Finite(p) => Self::nearest_point(p, x, tol).map(|p| p.cost),
            Self::Region(r) => r.region.contains(x, tol.max(BOX_TOL)).then(|| (r.cost)(x)),
        }
    }

    /// `u_f(x)`; `None` without a law or outside the terminal set.
    pub fn law_at(&self, x: &[f64], tol: f64) -> Option<Vec<f64>> {
        if x.len() != self.dim() {
            return None;
        }
        match self {
            Self::Finite(p) => Self::nearest_point(p, x, tol).and_then(|p| p.law.clone()),
            Self::Region(r) => {
                if r.region.contains(x, tol.max(BOX_TOL)) {
                    r.law.as_ref().map(|l| l(x))
                } else {
                    None
                }
            }
        }
    }

    pub fn has_law(&self) -> bool {
        match self {
            Self::Finite(p) => p.iter().all(|p| p.law.is_some()),
            Self::Region(r) => r.law.is_some(),
        }
    }

    /// Euclidean distance from `x` to the terminal set.
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            Self::Finite(p) => p.iter().map(|p| euclidean(&p.state, x)).fold(f64::INFINITY, f64::min),
            Self::Region(r) => r.region.distance(x),
        }
    }

    /// Sample states of the terminal set: all points of a finite set, or a
    /// lattice with `resolution` nodes per dimension over a region.
    pub fn samples(&self, resolution: usize) -> Vec<Vec<f64>> {
        match self {
            Self::Finite(p) => p.iter().map(|p| p.state.clone()).collect(),
            Self::Region(r) => Lattice::new(&r.region, &vec![resolution.max(2); r.region.dim()])
                .map(|l| l.points())
                .unwrap_or_default(),
        }
    }

    /// First orbit index whose state is outside the terminal set.
    pub fn orbit_outside(&self, orbit: &PeriodicOrbit, tol: f64) -> Option<usize> {
        (0..orbit.period()).find(|&i| self.cost_at(orbit.state(i), tol).is_none())
    }

    pub fn contains_orbit(&self, orbit: &PeriodicOrbit, tol: f64) -> bool {
        self.orbit_outside(orbit, tol).is_none()
    }

    /// Same set and law with cost `g(x, V_f(x))`.
    pub fn map_costs(&self, g: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        match self {
            Self::Finite(p) => Self::Finite(
                p.iter()
                    .map(|p| TerminalPoint {
                        cost: g(&p.state, p.cost),
                        ..p.clone()
                    })
                    .collect(),
            ),
            Self::Region(r) => {
                let base = Arc::clone(&r.cost);
                Self::Region(TerminalRegion {
                    region: r.region.clone(),
                    cost: Arc::new(move |x| g(x, base(x))),
                    law: r.law.clone(),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::registry::{example1, lq_steady_state, LqParams};

    #[test]
    fn finite_lookup() {
        let t = example1().terminal;
        assert_eq!(t.cost_at(&[1.0], TAU_F), Some(0.5));
        assert_eq!(t.cost_at(&[0.5], TAU_F), None);
        assert_eq!(t.law_at(&[0.0], TAU_F), Some(vec![1.0]));
        assert!(t.has_law());
        assert!((t.distance(&[0.3]) - 0.3).abs() < 1e-15);
        assert_eq!(t.samples(10).len(), 3);
    }

    #[test]
    fn region_lookup() {
        let t = lq_steady_state(&LqParams::default()).unwrap().terminal;
        assert_eq!(t.cost_at(&[0.1], TAU_F), Some(0.05));
        assert_eq!(t.cost_at(&[0.2], TAU_F), None);
        assert_eq!(t.law_at(&[0.05], TAU_F), Some(vec![-0.1]));
        assert_eq!(t.samples(5).len(), 5);
    }

    #[test]
    fn rejects_bad_point_sets() {
        assert!(TerminalIngredients::finite(vec![]).is_err());
        let dup = vec![
            TerminalPoint::new(vec![0.0], 0.0, None),
            TerminalPoint::new(vec![0.0], 1.0, None),
        ];
        assert!(TerminalIngredients::finite(dup).is_err());
        let mixed = vec![
            TerminalPoint::new(vec![0.0], 0.0, Some(vec![0.0])),
            TerminalPoint::new(vec![1.0], 1.0, None),
        ];
        assert!(TerminalIngredients::finite(mixed).is_err());
    }

    #[test]
    fn orbit_membership_and_cost_map() {
        let fx = example1();
        assert!(fx.terminal.contains_orbit(&fx.orbit, TAU_F));
        let shifted = fx.terminal.map_costs(|_, v| v + 1.0);
        assert_eq!(shifted.cost_at(&[0.0], TAU_F), Some(0.5));
    }
}
