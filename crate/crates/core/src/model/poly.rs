//! Inline model building blocks for scenario files: affine dynamics and
//! polynomial costs with `|x_i|` factors.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_dim, BoxSet, DynamicsFn, LandingFn, ModelError, ScalarFn, StageCostFn, SystemModel};

/// `coef · Π x_i^{x[i]} · Π u_j^{u[j]} · Π |x_i|^{abs_x[i]}`; missing
/// exponents are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coef: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub u: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub abs_x: Vec<u32>,
}

impl Monomial {
    fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        let mut v = self.coef;
        for (i, &p) in self.x.iter().enumerate() {
            v *= x[i].powi(p as i32);
        }
        for (i, &p) in self.abs_x.iter().enumerate() {
            v *= x[i].abs().powi(p as i32);
        }
        for (j, &p) in self.u.iter().enumerate() {
            v *= u[j].powi(p as i32);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial(pub Vec<Monomial>);

impl Polynomial {
    pub fn check_dims(&self, n: usize, m: usize) -> Result<(), ModelError> {
        for t in &self.0 {
            if t.x.len() > n || t.abs_x.len() > n {
                return Err(ModelError::DimensionMismatch {
                    what: "polynomial state exponents".into(),
                    expected: n,
                    got: t.x.len().max(t.abs_x.len()),
                });
            }
            if t.u.len() > m {
                return Err(ModelError::DimensionMismatch {
                    what: "polynomial input exponents".into(),
                    expected: m,
                    got: t.u.len(),
                });
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        self.0.iter().map(|t| t.eval(x, u)).sum()
    }

    pub fn stage_cost_fn(&self) -> StageCostFn {
        let p = self.clone();
        Arc::new(move |x, u| p.eval(x, u))
    }

    /// As a state-only map; input exponents are ignored.
    pub fn state_fn(&self) -> ScalarFn {
        let p = self.clone();
        Arc::new(move |x| p.eval(x, &[]))
    }
}

/// `f(x, u) = A x + B u + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineDynamics {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub c: Vec<f64>,
}

impl AffineDynamics {
    pub fn validate(&self, n: usize, m: usize) -> Result<(), ModelError> {
        check_dim("rows of A", n, self.a.len())?;
        check_dim("rows of B", n, self.b.len())?;
        for row in &self.a {
            check_dim("columns of A", n, row.len())?;
        }
        for row in &self.b {
            check_dim("columns of B", m, row.len())?;
        }
        if !self.c.is_empty() {
            check_dim("offset c", n, self.c.len())?;
        }
        Ok(())
    }

    fn offset(&self, i: usize) -> f64 {
        self.c.get(i).copied().unwrap_or(0.0)
    }

    pub fn dynamics_fn(&self) -> DynamicsFn {
        let d = self.clone();
        Arc::new(move |x, u, out| {
            for (i, o) in out.iter_mut().enumerate() {
                let ax: f64 = d.a[i].iter().zip(x).map(|(a, v)| a * v).sum();
                let bu: f64 = d.b[i].iter().zip(u).map(|(b, v)| b * v).sum();
                *o = ax + bu + d.offset(i);
            }
        })
    }

    /// Exact landing `u = B⁻¹(target - A x - c)`, available when `B` is
    /// square and invertible.
    pub fn landing_fn(&self) -> Option<LandingFn> {
        let n = self.a.len();
        let m = self.b.first().map_or(0, Vec::len);
        if n != m || n == 0 {
            return None;
        }
        let b = DMatrix::from_fn(n, n, |i, j| self.b[i][j]);
        let inv = b.try_inverse()?;
        let d = self.clone();
        Some(Arc::new(move |x, target, u| {
            let rhs = DVector::from_fn(n, |i, _| {
                let ax: f64 = d.a[i].iter().zip(x).map(|(a, v)| a * v).sum();
                target[i] - ax - d.offset(i)
            });
            let sol = &inv * rhs;
            u.copy_from_slice(sol.as_slice());
            sol.iter().all(|v| v.is_finite())
        }))
    }

    pub fn into_model(
        &self,
        name: &str,
        state_box: BoxSet,
        input_box: BoxSet,
        stage_cost: &Polynomial,
    ) -> Result<SystemModel, ModelError> {
        let (n, m) = (state_box.dim(), input_box.dim());
        self.validate(n, m)?;
        stage_cost.check_dims(n, m)?;
        let model = SystemModel::new(name, state_box, input_box, self.dynamics_fn(), stage_cost.stage_cost_fn());
        Ok(match self.landing_fn() {
            Some(l) => model.with_exact_landing(l),
            None => model,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example1_cost() -> Polynomial {
        serde_json::from_value(serde_json::json!([
            {"coef": 4.0, "abs_x": [1]},
            {"coef": -2.0, "x": [2]},
            {"coef": -2.0, "u": [2]},
            {"coef": 1.0}
        ]))
        .unwrap()
    }

    #[test]
    fn polynomial_matches_closed_form() {
        let p = example1_cost();
        for &(x, u) in &[(0.3, -1.0), (-0.7, 0.2), (0.0, 1.0)] {
            let expect = 2.0 * (2.0 * f64::abs(x) - x * x - u * u) + 1.0;
            assert!((p.eval(&[x], &[u]) - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn affine_landing_inverts_dynamics() {
        let d = AffineDynamics {
            a: vec![vec![1.0, 0.5], vec![0.0, 1.0]],
            b: vec![vec![1.0, 0.0], vec![1.0, 2.0]],
            c: vec![0.1, -0.2],
        };
        let f = d.dynamics_fn();
        let land = d.landing_fn().unwrap();
        let (x, t) = ([0.3, -0.4], [0.25, 0.5]);
        let mut u = [0.0; 2];
        assert!(land(&x, &t, &mut u));
        let mut y = [0.0; 2];
        f(&x, &u, &mut y);
        assert!((y[0] - t[0]).abs() < 1e-14 && (y[1] - t[1]).abs() < 1e-14);
    }

    #[test]
    fn singular_input_matrix_has_no_landing() {
        let d = AffineDynamics {
            a: vec![vec![1.0]],
            b: vec![vec![0.0]],
            c: vec![],
        };
        assert!(d.landing_fn().is_none());
    }

    #[test]
    fn dimension_errors() {
        let d = AffineDynamics {
            a: vec![vec![1.0]],
            b: vec![vec![1.0, 1.0]],
            c: vec![],
        };
        assert!(d.validate(1, 1).is_err());
        let p: Polynomial = serde_json::from_value(serde_json::json!([{"coef": 1.0, "u": [1, 1]}])).unwrap();
        assert!(p.check_dims(1, 1).is_err());
    }
}
