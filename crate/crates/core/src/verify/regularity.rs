use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::model::{euclidean, orbit_distance, PeriodicOrbit};
use crate::ocp::OcpSolver;
use crate::report::CheckReport;

/// Every sample within `η` of the orbit states, and every orbit state, is
/// feasible for the solver's horizon.
pub fn check_feasibility_near_orbit(
    solver: &dyn OcpSolver,
    orbit: &PeriodicOrbit,
    eta: f64,
    samples: &[Vec<f64>],
) -> CheckReport {
    let mut report = CheckReport::new("feasibility-near-orbit");
    report.set_meta("eta", eta);
    report.set_meta("horizon", solver.horizon());
    let mut points: Vec<Vec<f64>> = orbit.states().to_vec();
    points.extend(
        samples
            .iter()
            .filter(|x| orbit_distance(orbit, x, None).map_or(false, |d| d.distance <= eta))
            .cloned(),
    );
    let feasible: Vec<bool> = points.par_iter().map(|x| solver.solve(x).is_ok()).collect();
    report.set_meta("tested", points.len());
    for (k, (x, ok)) in points.iter().zip(&feasible).enumerate() {
        if !ok {
            let d = orbit_distance(orbit, x, None).map_or(f64::NAN, |d| d.distance);
            report.fail("infeasible", Some(k), x, d, d.max(f64::MIN_POSITIVE));
        }
    }
    report.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityRow {
    pub radius: f64,
    pub samples: usize,
    /// `max |V_N(x) - V_N(Π_X(i_x))|` over the samples at this radius.
    pub max_deviation: f64,
}

fn directions(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    if n == 1 {
        return [vec![1.0], vec![-1.0]].into_iter().take(count.max(1)).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = euclidean(&v, &vec![0.0; n]);
        if norm > 1e-3 && norm <= 1.0 {
            out.push(v.iter().map(|c| c / norm).collect());
        }
    }
    out
}

/// Deviation of `V_N` from its value at the nearest orbit state on spheres
/// of the given radii around each orbit state, with a fitted `γ_V(r) = c_V r`.
pub fn check_vn_regularity(
    solver: &dyn OcpSolver,
    orbit: &PeriodicOrbit,
    radii: &[f64],
    samples_per_radius: usize,
) -> (CheckReport, Vec<RegularityRow>) {
    let model = solver.model();
    let mut report = CheckReport::new("vn-regularity");
    report.set_meta("horizon", solver.horizon());
    report.set_meta("certificate", "empirical gamma_V(r) = c_V*r");
    let dirs = directions(model.state_dim(), samples_per_radius, 0);
    let orbit_values: Vec<Option<f64>> = (0..orbit.period())
        .map(|i| solver.solve(orbit.state(i)).ok().map(|s| s.value))
        .collect();
    let mut rows = Vec::with_capacity(radii.len());
    let mut c_v: f64 = 0.0;
    for &r in radii {
        let mut pts = Vec::new();
        for i in 0..orbit.period() {
            for d in &dirs {
                let x: Vec<f64> = orbit.state(i).iter().zip(d).map(|(c, v)| c + r * v).collect();
                if model.state_box().contains(&x, 0.0) {
                    pts.push(x);
                }
            }
        }
        let devs: Vec<Result<(f64, f64), ()>> = pts
            .par_iter()
            .map(|x| {
                let near = orbit_distance(orbit, x, None).map_err(|_| ())?;
                let vx = solver.solve(x).map_err(|_| ())?.value;
                let vo = orbit_values[near.nearest_index].ok_or(())?;
                Ok(((vx - vo).abs(), near.distance))
            })
            .collect();
        let mut max_dev: f64 = 0.0;
        for (x, d) in pts.iter().zip(&devs) {
            match d {
                Ok((dev, dist)) => {
                    max_dev = max_dev.max(*dev);
                    if *dist > 0.0 {
                        c_v = c_v.max(dev / dist);
                    }
                }
                Err(()) => report.fail("infeasible", None, x, r, r),
            }
        }
        rows.push(RegularityRow {
            radius: r,
            samples: pts.len(),
            max_deviation: max_dev,
        });
    }
    let monotone = rows.windows(2).all(|w| w[1].max_deviation >= w[0].max_deviation - 1e-9);
    report.set_margin("c_v", c_v);
    report.set_meta("monotone", monotone);
    report.set_meta("rows", serde_json::to_value(&rows).unwrap_or_default());
    (report.finish(), rows)
}
