use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{TerminalCostFile, TerminalSpec};
use super::{fmt_num, CliError, Context};
use crate::cesaro::{
    cesaro_value_iteration, check_eps_inflated_terminal, epsilon_estimate, synthesize_terminal_cost, CesaroError,
    CesaroValueTable, CesaroViOptions,
};
use crate::grid::Lattice;
use crate::model::{euclidean, verify_orbit, PeriodicOrbit, SystemModel, TAU_ORBIT};
use crate::ocp::{build_solver, OcpError, TerminalIngredients, TerminalPoint};
use crate::report::CheckReport;
use crate::rotation::{
    check_minimal_orbit_relaxation, check_strict_dissipativity, check_terminal_conditions,
    check_terminal_cost_on_orbit, product_samples, DissipativityOptions, Envelope, RotatedProblem, RotationError,
    StorageFunction,
};
use crate::verify::{
    check_feasibility_near_orbit, check_lyapunov, check_stability_eps_delta, check_performance, check_turnpike, check_vn_regularity,
    performance_csv, simulate_closed_loop, storage_constant, turnpike_row, LyapunovOptions, PerformanceOptions,
    StabilityOptions, VerifyError,
};

/// Problem data for one command after the optional stage-cost shift.
struct Setup {
    model: SystemModel,
    orbit: PeriodicOrbit,
    storage: StorageFunction,
}

struct Terminal {
    ingredients: TerminalIngredients,
    /// Approximation error of a truncated value-iteration terminal cost.
    eps: f64,
}

fn ocp_err(e: OcpError) -> CliError {
    match e {
        OcpError::Infeasible { .. } | OcpError::OutOfBox { .. } => CliError::Infeasible(e.to_string()),
        OcpError::BudgetExceeded { .. }
        | OcpError::GridDegenerate(_)
        | OcpError::InvalidTerminal(_)
        | OcpError::InvalidHorizon(_)
        | OcpError::Model(_)
        | OcpError::Grid(_)
        | OcpError::MissingTerminalLaw => CliError::Config(e.to_string()),
    }
}

fn verify_err(e: VerifyError) -> CliError {
    match e {
        VerifyError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
        VerifyError::Ocp(o) => ocp_err(o),
        other => CliError::Config(other.to_string()),
    }
}

fn rotation_err(e: RotationError) -> CliError {
    match e {
        RotationError::OrbitOutsideTerminal(_) => CliError::Check(e.to_string()),
        RotationError::Ocp(o) => ocp_err(o),
        other => CliError::Config(other.to_string()),
    }
}

fn cesaro_err(e: CesaroError) -> CliError {
    match e {
        CesaroError::Ocp(o) => ocp_err(o),
        other => CliError::Config(other.to_string()),
    }
}

fn setup(ctx: &mut Context, shift: bool) -> Result<Setup, CliError> {
    let res = &ctx.res;
    if !shift {
        return Ok(Setup {
            model: res.model.clone(),
            orbit: res.orbit.clone(),
            storage: res.storage.clone(),
        });
    }
    let ell_pi = res.orbit.average_cost();
    let model = res.model.shifted(ell_pi);
    let orbit = res.orbit.reevaluated(&model).map_err(|e| CliError::Config(e.to_string()))?;
    let storage = StorageFunction::new(res.storage.function(), &orbit);
    ctx.shift = ell_pi;
    Ok(Setup { model, orbit, storage })
}

fn zero_mean(s: &Setup) -> Result<(SystemModel, PeriodicOrbit), CliError> {
    let model = s.model.shifted(s.orbit.average_cost());
    let orbit = s.orbit.reevaluated(&model).map_err(|e| CliError::Config(e.to_string()))?;
    Ok((model, orbit))
}

/// Distinct orbit states with `value(x)` as cost and the first-visit input
/// as law.
fn orbit_points(orbit: &PeriodicOrbit, value: impl Fn(&[f64]) -> f64) -> Vec<TerminalPoint> {
    let mut points: Vec<TerminalPoint> = Vec::new();
    for i in 0..orbit.period() {
        let x = orbit.state(i);
        if points.iter().any(|q| euclidean(&q.state, x) <= TAU_ORBIT) {
            continue;
        }
        points.push(TerminalPoint::new(x.to_vec(), value(x), Some(orbit.input(i).to_vec())));
    }
    points
}

fn value_iteration(ctx: &Context, s: &Setup) -> Result<CesaroValueTable, CliError> {
    let (model, orbit) = zero_mean(s)?;
    let opts = CesaroViOptions {
        eps_vi: ctx.res.run.eps_vi,
        n_max: ctx.res.run.n_max,
        ..CesaroViOptions::default()
    };
    cesaro_value_iteration(&model, &orbit, &ctx.res.grid(), &opts).map_err(cesaro_err)
}

fn synthesis_failure(e: &CesaroError) -> Option<CheckReport> {
    let mut report = CheckReport::new("terminal-synthesis");
    match e {
        CesaroError::InconsistentRepeatedState {
            state,
            first,
            second,
            v_first,
            v_second,
        } => {
            report.set_meta("first_visit", *first);
            report.set_meta("second_visit", *second);
            report.fail("inconsistent-repeated-state", Some(*second), state, v_second - v_first, (v_second - v_first).abs());
        }
        CesaroError::Closure(c) => report.fail("closure", None, &[], *c, c.abs()),
        _ => return None,
    }
    Some(report.finish())
}

/// Terminal ingredients for the scenario, plus the data needed to write
/// `terminal_cost.json` and `cesaro_table.csv` when they were computed.
fn terminal(ctx: &mut Context, s: &Setup) -> Result<(Terminal, Option<CesaroValueTable>), CliError> {
    let cfg = |e: OcpError| CliError::Config(e.to_string());
    match ctx.res.terminal_spec.clone() {
        TerminalSpec::FromRegistry => {
            let ingredients = ctx
                .res
                .registry_terminal
                .clone()
                .ok_or_else(|| CliError::Config("no registry terminal ingredients".into()))?;
            Ok((Terminal { ingredients, eps: 0.0 }, None))
        }
        TerminalSpec::Explicit { points, file, epsilon } => {
            let (points, eps) = match (points, file) {
                (Some(p), None) => (p, epsilon.unwrap_or(0.0)),
                (None, Some(f)) => {
                    let doc = ctx.res.read_terminal_file(&f)?;
                    (doc.points, epsilon.unwrap_or(doc.epsilon))
                }
                _ => {
                    return Err(CliError::Config(
                        "explicit terminal needs exactly one of `points` or `file`".into(),
                    ))
                }
            };
            if !(eps >= 0.0 && eps.is_finite()) {
                return Err(CliError::Config(format!("terminal epsilon must be nonnegative, got {eps}")));
            }
            if let Some(p) = points.iter().find(|p| p.state.len() != s.model.state_dim()) {
                return Err(CliError::Config(format!("terminal point {:?} has the wrong dimension", p.state)));
            }
            let ingredients = TerminalIngredients::finite(points).map_err(cfg)?;
            Ok((Terminal { ingredients, eps }, None))
        }
        TerminalSpec::SynthesizeFromOrbit => {
            let (model, orbit) = zero_mean(s)?;
            match synthesize_terminal_cost(&model, &orbit) {
                Ok(ingredients) => Ok((Terminal { ingredients, eps: 0.0 }, None)),
                Err(e) => {
                    let msg = e.to_string();
                    match synthesis_failure(&e) {
                        Some(report) => {
                            ctx.push(report);
                            Err(CliError::Check(msg))
                        }
                        None => Err(cesaro_err(e)),
                    }
                }
            }
        }
        TerminalSpec::CesaroValueIteration => {
            let table = value_iteration(ctx, s)?;
            let (model, orbit) = zero_mean(s)?;
            let eps = epsilon_estimate(&table, &model, &orbit);
            let points = orbit_points(&orbit, |x| table.value_at(x));
            let ingredients = TerminalIngredients::finite(points).map_err(cfg)?;
            ctx.tables.insert(
                "value_iteration".into(),
                serde_json::json!({
                    "iterations": table.iterations,
                    "converged": table.converged,
                    "last_delta": table.last_delta(),
                    "epsilon": eps,
                }),
            );
            Ok((Terminal { ingredients, eps }, Some(table)))
        }
    }
}

fn rotated(s: &Setup, term: &Terminal) -> Result<RotatedProblem, CliError> {
    RotatedProblem::build(&s.model, &s.orbit, &s.storage, &term.ingredients).map_err(rotation_err)
}

/// Terminal decrease (or its ε-inflated form) and the orbit equality.
fn assumption_reports(ctx: &Context, s: &Setup, rot: &RotatedProblem, term: &Terminal) -> Result<Vec<CheckReport>, CliError> {
    let resolution = ctx.res.run.terminal_samples;
    let mut out = Vec::new();
    if term.eps > 0.0 {
        let (model, _) = zero_mean(s)?;
        out.push(check_eps_inflated_terminal(&term.ingredients, &model, term.eps).map_err(rotation_err)?);
    } else {
        match check_terminal_conditions(&s.model, &term.ingredients, rot, resolution) {
            Ok(r) => out.push(r),
            Err(RotationError::MissingTerminalLaw) => {
                let mut r = CheckReport::new("terminal-conditions");
                r.fail("missing-terminal-law", None, &[], f64::INFINITY, f64::INFINITY);
                out.push(r.finish());
            }
            Err(e) => return Err(rotation_err(e)),
        }
    }
    let base = ctx.res.run.equality_tol;
    let tol = if term.eps > 0.0 { base.max(2.0 * term.eps) } else { base };
    out.push(check_terminal_cost_on_orbit(&term.ingredients, rot, &s.orbit, tol));
    Ok(out)
}

fn jitter(points: &mut [Vec<f64>], lattice: &Lattice, rng: &mut ChaCha8Rng, lo: &[f64], hi: &[f64]) {
    for p in points.iter_mut() {
        for (d, v) in p.iter_mut().enumerate() {
            *v = (*v + rng.gen_range(-0.25..0.25) * lattice.spacing(d)).clamp(lo[d], hi[d]);
        }
    }
}

fn dissipativity(ctx: &mut Context, s: &Setup, rot: &RotatedProblem) -> Result<Option<f64>, CliError> {
    let n = ctx.res.run.dissipativity_grid;
    let mut samples = product_samples(&s.model, n, n).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(seed) = ctx.seed {
        let xl = Lattice::new(s.model.state_box(), &vec![n; s.model.state_dim()]).map_err(|e| CliError::Config(e.to_string()))?;
        let ul = Lattice::new(s.model.input_box(), &vec![n; s.model.input_dim()]).map_err(|e| CliError::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut xs, mut us): (Vec<_>, Vec<_>) = samples.into_iter().unzip();
        jitter(&mut xs, &xl, &mut rng, s.model.state_box().lo(), s.model.state_box().hi());
        jitter(&mut us, &ul, &mut rng, s.model.input_box().lo(), s.model.input_box().hi());
        samples = xs.into_iter().zip(us).collect();
    }
    let opts = DissipativityOptions {
        tol: ctx.res.run.equality_tol,
        ..DissipativityOptions::default()
    };
    let report = check_strict_dissipativity(rot, &samples, &opts).map_err(rotation_err)?;
    let c = report.margins.get("envelope_c").copied().filter(|c| *c > 0.0);
    ctx.push(report);
    Ok(c)
}

fn state_samples(ctx: &Context, model: &SystemModel, n: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let lattice = Lattice::new(model.state_box(), &vec![n; model.state_dim()]).map_err(|e| CliError::Config(e.to_string()))?;
    let mut points = lattice.points();
    if let Some(seed) = ctx.seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        jitter(&mut points, &lattice, &mut rng, model.state_box().lo(), model.state_box().hi());
    }
    Ok(points)
}

pub(crate) fn simulate(ctx: &mut Context) -> Result<(), CliError> {
    let x0 = ctx.res.x0()?.to_vec();
    let s = setup(ctx, false)?;
    if !ctx.push(verify_orbit(&s.model, &s.orbit, TAU_ORBIT)) {
        return Ok(());
    }
    let (term, _) = terminal(ctx, &s)?;
    let rot = rotated(&s, &term)?;
    let checks = assumption_reports(ctx, &s, &rot, &term)?;
    let mut ok = true;
    for r in checks {
        ok &= ctx.push(r);
    }
    if !ok {
        return Ok(());
    }
    let c = dissipativity(ctx, &s, &rot)?;
    let run_params = ctx.res.run.clone();
    let solver = build_solver(&s.model, &term.ingredients, run_params.horizon, &ctx.res.solver).map_err(ocp_err)?;
    let run = simulate_closed_loop(solver.as_ref(), &rot, &x0, run_params.steps).map_err(verify_err)?;
    ctx.write("run.csv", &run.to_csv())?;
    let opts = LyapunovOptions {
        rel_tol: run_params.lyapunov_rel_tol,
        lower: c.map(Envelope::Quadratic),
        upper: None,
        slack: 2.0 * term.eps,
    };
    ctx.push(check_lyapunov(&run, &rot, &opts));
    Ok(())
}

pub(crate) fn verify(ctx: &mut Context) -> Result<(), CliError> {
    let s = setup(ctx, false)?;
    if !ctx.push(verify_orbit(&s.model, &s.orbit, TAU_ORBIT)) {
        return Ok(());
    }
    let (term, _) = terminal(ctx, &s)?;
    let rot = rotated(&s, &term)?;
    dissipativity(ctx, &s, &rot)?;
    for r in assumption_reports(ctx, &s, &rot, &term)? {
        ctx.push(r);
    }
    let run = ctx.res.run.clone();
    let solver = build_solver(&s.model, &term.ingredients, run.horizon, &ctx.res.solver).map_err(ocp_err)?;
    let (reg, _) = check_vn_regularity(solver.as_ref(), &s.orbit, &run.radii, run.samples_per_radius);
    ctx.push(reg);
    let samples = state_samples(ctx, &s.model, run.feasibility_samples)?;
    let mut feas = check_feasibility_near_orbit(solver.as_ref(), &s.orbit, run.eta, &samples);
    feas.set_meta("n_eta", run.n_eta);
    if run.n_eta != run.horizon {
        let short = build_solver(&s.model, &term.ingredients, run.n_eta, &ctx.res.solver).map_err(ocp_err)?;
        let r = check_feasibility_near_orbit(short.as_ref(), &s.orbit, run.eta, &samples);
        for w in &r.witnesses {
            feas.fail("infeasible-at-n-eta", w.index, &w.point, w.residual, w.excess);
        }
        feas = feas.finish();
    }
    ctx.push(feas);
    let starts: Vec<Vec<f64>> = state_samples(ctx, &s.model, run.stability_samples)?
        .into_iter()
        .filter(|x| solver.solve(x).is_ok())
        .collect();
    let sopts = StabilityOptions {
        steps: run.stability_steps,
        ..StabilityOptions::default()
    };
    match check_stability_eps_delta(solver.as_ref(), &rot, &run.eps_list, &starts, &sopts) {
        Ok((r, _)) => {
            ctx.push(r);
        }
        Err(VerifyError::Infeasible { step, state, .. }) => {
            let mut r = CheckReport::new("stability-eps-delta");
            r.fail("infeasible", Some(step), &state, f64::INFINITY, f64::INFINITY);
            ctx.push(r.finish());
        }
        Err(e) => return Err(verify_err(e)),
    }
    let relax = if term.eps > 0.0 {
        CheckReport::not_applicable("minimal-orbit-relaxation", "terminal cost is an approximate value-iteration table")
    } else {
        match check_minimal_orbit_relaxation(&s.model, &term.ingredients, &rot, &s.orbit, run.terminal_samples) {
            Ok(r) => r,
            Err(RotationError::MissingTerminalLaw) => {
                CheckReport::not_applicable("minimal-orbit-relaxation", "terminal law missing")
            }
            Err(e) => return Err(rotation_err(e)),
        }
    };
    ctx.push(relax);
    Ok(())
}

fn turnpike_csv(rows: &[crate::verify::TurnpikeRow]) -> String {
    let mut out = String::from("eps,Q_eps,bound,K,holds\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", fmt_num(r.eps), r.q, fmt_num(r.bound), r.steps, r.holds);
    }
    out
}

pub(crate) fn performance(ctx: &mut Context) -> Result<(), CliError> {
    let x0 = ctx.res.x0()?.to_vec();
    let s = setup(ctx, true)?;
    if !ctx.push(verify_orbit(&s.model, &s.orbit, TAU_ORBIT)) {
        return Ok(());
    }
    let (term, _) = terminal(ctx, &s)?;
    let rot = rotated(&s, &term)?;
    let c = dissipativity(ctx, &s, &rot)?;
    let table = value_iteration(ctx, &s)?;
    let run = ctx.res.run.clone();
    let opts = PerformanceOptions {
        k_long: run.k_long,
        tol: run.performance_tol,
        gamma_v: None,
    };
    let (report, rows) = check_performance(
        &s.model,
        &term.ingredients,
        &rot,
        &ctx.res.solver,
        &run.horizons,
        &x0,
        &table,
        &opts,
    )
    .map_err(verify_err)?;
    ctx.push(report);
    ctx.write("performance.csv", &performance_csv(&rows))?;

    let solver = build_solver(&s.model, &term.ingredients, run.horizon, &ctx.res.solver).map_err(ocp_err)?;
    let cl = simulate_closed_loop(solver.as_ref(), &rot, &x0, run.steps).map_err(verify_err)?;
    let nodes = Lattice::new(s.model.state_box(), &vec![101; s.model.state_dim()])
        .map_err(|e| CliError::Config(e.to_string()))?
        .points();
    let c_emp = storage_constant(&s.storage, &nodes);
    let alpha = Envelope::Quadratic(c.unwrap_or(0.0));
    let rows: Vec<_> = run.turnpike_eps.iter().map(|&e| turnpike_row(&cl, &rot, e, c_emp, &alpha)).collect();
    let mut tp = check_turnpike(&rows);
    tp.set_meta("c_emp", c_emp);
    tp.set_meta("horizon", run.horizon);
    ctx.push(tp);
    ctx.write("turnpike.csv", &turnpike_csv(&rows))?;
    Ok(())
}

pub(crate) fn terminal_cost(ctx: &mut Context) -> Result<(), CliError> {
    let mode = match ctx.res.terminal_spec {
        TerminalSpec::SynthesizeFromOrbit => "synthesize-from-orbit",
        TerminalSpec::CesaroValueIteration => "cesaro-value-iteration",
        _ => {
            return Err(CliError::Config(
                "terminal-cost needs terminal mode synthesize-from-orbit or cesaro-value-iteration".into(),
            ))
        }
    };
    let s = setup(ctx, true)?;
    if !ctx.push(verify_orbit(&s.model, &s.orbit, TAU_ORBIT)) {
        return Ok(());
    }
    let (term, table) = terminal(ctx, &s)?;
    let anchor = match &table {
        None => "V_f(orbit state 0) = 0".to_string(),
        Some(_) => "Cesaro value-iteration table, not re-anchored".to_string(),
    };
    let points = term.ingredients.points().map(<[_]>::to_vec).unwrap_or_default();
    let doc = TerminalCostFile {
        mode: mode.into(),
        anchor,
        epsilon: term.eps,
        stage_cost_shift: ctx.shift,
        points,
    };
    let json = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Io(e.to_string()))? + "\n";
    ctx.write("terminal_cost.json", &json)?;
    if let Some(t) = &table {
        ctx.write("cesaro_table.csv", &t.to_csv())?;
    }
    let rot = rotated(&s, &term)?;
    for r in assumption_reports(ctx, &s, &rot, &term)? {
        ctx.push(r);
    }
    Ok(())
}
