//! Scenario documents and their resolution into models, orbits, storage
//! functions and terminal ingredients.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CliError;
use crate::grid::GridSpec;
use crate::model::poly::{AffineDynamics, Polynomial};
use crate::model::registry::{builtin, Fixture};
use crate::model::{BoxSet, PeriodicOrbit, SystemModel};
use crate::ocp::{SolverChoice, TerminalIngredients, TerminalPoint};
use crate::rotation::StorageFunction;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub system: SystemSpec,
    #[serde(default)]
    pub orbit: OrbitSpec,
    #[serde(default)]
    pub storage: StorageSpec,
    #[serde(default)]
    pub terminal: TerminalSpec,
    #[serde(default)]
    pub solver: Option<SolverChoice>,
    #[serde(default)]
    pub run: RunParams,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub registry: Option<String>,
    pub params: Option<Value>,
    pub inline: Option<InlineSystem>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSystem {
    #[serde(default = "inline_name")]
    pub name: String,
    pub state_box: BoxSpec,
    pub input_box: BoxSpec,
    pub dynamics: AffineDynamics,
    pub stage_cost: Polynomial,
}

fn inline_name() -> String {
    "inline".into()
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(untagged)]
pub enum OrbitSpec {
    #[default]
    #[serde(skip)]
    Default,
    Named(String),
    Explicit {
        states: Vec<Vec<f64>>,
        inputs: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(untagged)]
pub enum StorageSpec {
    #[default]
    #[serde(skip)]
    Default,
    Named(String),
    Polynomial(Polynomial),
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TerminalSpec {
    #[default]
    FromRegistry,
    Explicit {
        #[serde(default)]
        points: Option<Vec<TerminalPoint>>,
        #[serde(default)]
        file: Option<PathBuf>,
        #[serde(default)]
        epsilon: Option<f64>,
    },
    SynthesizeFromOrbit,
    CesaroValueIteration,
}

/// File written by `terminal-cost` and accepted by `terminal.mode = explicit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalCostFile {
    pub mode: String,
    pub anchor: String,
    pub epsilon: f64,
    pub stage_cost_shift: f64,
    pub points: Vec<TerminalPoint>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunParams {
    pub horizon: usize,
    pub x0: Option<Vec<f64>>,
    pub steps: usize,
    pub k_long: usize,
    pub horizons: Vec<usize>,
    pub eps_list: Vec<f64>,
    pub radii: Vec<f64>,
    pub samples_per_radius: usize,
    pub turnpike_eps: Vec<f64>,
    pub eta: f64,
    pub n_eta: usize,
    pub eps_vi: f64,
    pub n_max: usize,
    pub dissipativity_grid: usize,
    pub feasibility_samples: usize,
    pub stability_samples: usize,
    pub stability_steps: usize,
    pub terminal_samples: usize,
    pub performance_tol: f64,
    pub lyapunov_rel_tol: f64,
    pub equality_tol: f64,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            horizon: 5,
            x0: None,
            steps: 100,
            k_long: 10_000,
            horizons: vec![3, 4, 5, 6],
            eps_list: vec![0.5, 0.25],
            radii: vec![1e-3, 1e-2, 1e-1],
            samples_per_radius: 2,
            turnpike_eps: vec![0.05, 0.1, 0.25],
            eta: 1.0,
            n_eta: 1,
            eps_vi: 1e-4,
            n_max: 20_000,
            dissipativity_grid: 201,
            feasibility_samples: 41,
            stability_samples: 21,
            stability_steps: 60,
            terminal_samples: 21,
            performance_tol: 5e-3,
            lyapunov_rel_tol: 1e-6,
            equality_tol: 1e-9,
        }
    }
}

impl RunParams {
    fn validate(&self) -> Result<(), CliError> {
        let positive = [
            ("eta", self.eta),
            ("eps_vi", self.eps_vi),
            ("performance_tol", self.performance_tol),
            ("lyapunov_rel_tol", self.lyapunov_rel_tol),
            ("equality_tol", self.equality_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!("run.{name} must be positive, got {v}")));
            }
        }
        for (name, list) in [("eps_list", &self.eps_list), ("turnpike_eps", &self.turnpike_eps)] {
            if list.iter().any(|&e| !(e > 0.0)) {
                return Err(CliError::Config(format!("run.{name} entries must be positive")));
            }
        }
        if self.radii.iter().any(|&r| !(r > 0.0)) || self.radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::Config("run.radii must be positive and increasing".into()));
        }
        let counts = [
            ("horizon", self.horizon),
            ("n_eta", self.n_eta),
            ("k_long", self.k_long),
            ("n_max", self.n_max),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(CliError::Config(format!("run.{name} must be at least 1")));
            }
        }
        if self.horizons.contains(&0) {
            return Err(CliError::Config("run.horizons entries must be at least 1".into()));
        }
        for (name, v) in [
            ("dissipativity_grid", self.dissipativity_grid),
            ("feasibility_samples", self.feasibility_samples),
            ("stability_samples", self.stability_samples),
            ("terminal_samples", self.terminal_samples),
        ] {
            if v < 2 {
                return Err(CliError::Config(format!("run.{name} must be at least 2")));
            }
        }
        Ok(())
    }
}

/// Scenario with every reference resolved.
#[derive(Clone)]
pub struct Resolved {
    pub model: SystemModel,
    pub orbit: PeriodicOrbit,
    pub storage: StorageFunction,
    pub registry_terminal: Option<TerminalIngredients>,
    pub terminal_spec: TerminalSpec,
    pub solver: SolverChoice,
    pub run: RunParams,
    pub base_dir: PathBuf,
}

pub fn parse(text: &str) -> Result<Scenario, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid scenario: {e}")))
}

fn to_box(spec: &BoxSpec, what: &str) -> Result<BoxSet, CliError> {
    BoxSet::new(spec.lo.clone(), spec.hi.clone()).map_err(|e| CliError::Config(format!("{what}: {e}")))
}

pub fn resolve(scenario: Scenario, base_dir: &Path) -> Result<Resolved, CliError> {
    scenario.run.validate()?;
    let cfg = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
    let sys = &scenario.system;
    let fixture: Option<Fixture> = match (&sys.registry, &sys.inline) {
        (Some(name), None) => Some(builtin(name, sys.params.as_ref()).map_err(|e| cfg(&e))?),
        (None, Some(_)) => None,
        _ => {
            return Err(CliError::Config(
                "system needs exactly one of `registry` or `inline`".into(),
            ))
        }
    };
    let model = match (&fixture, &sys.inline) {
        (Some(fx), _) => fx.model.clone(),
        (None, Some(inl)) => inl
            .dynamics
            .into_model(
                &inl.name,
                to_box(&inl.state_box, "state_box")?,
                to_box(&inl.input_box, "input_box")?,
                &inl.stage_cost,
            )
            .map_err(|e| cfg(&e))?,
        (None, None) => unreachable!(),
    };
    let orbit = match (&scenario.orbit, &fixture) {
        (OrbitSpec::Explicit { states, inputs }, _) => {
            PeriodicOrbit::new(&model, states.clone(), inputs.clone()).map_err(|e| cfg(&e))?
        }
        (OrbitSpec::Default, Some(fx)) => fx.orbit.clone(),
        (OrbitSpec::Named(s), Some(fx)) if s == "from-registry" => fx.orbit.clone(),
        (OrbitSpec::Named(s), _) if s != "from-registry" => {
            return Err(CliError::Config(format!("unknown orbit reference `{s}`")))
        }
        _ => return Err(CliError::Config("an inline system needs an explicit orbit".into())),
    };
    let storage = match (&scenario.storage, &fixture) {
        (StorageSpec::Polynomial(p), _) => {
            p.check_dims(model.state_dim(), 0).map_err(|e| cfg(&e))?;
            StorageFunction::new(p.state_fn(), &orbit)
        }
        (StorageSpec::Default, Some(fx)) => StorageFunction::new(fx.storage.function(), &orbit),
        (StorageSpec::Named(s), Some(fx)) if s == "from-registry" => StorageFunction::new(fx.storage.function(), &orbit),
        (StorageSpec::Named(s), _) if s == "zero" => StorageFunction::zero(&orbit),
        (StorageSpec::Named(s), _) if s != "from-registry" => {
            return Err(CliError::Config(format!("unknown storage reference `{s}`")))
        }
        _ => return Err(CliError::Config("an inline system needs an explicit storage function".into())),
    };
    let solver = scenario.solver.clone().unwrap_or_else(|| SolverChoice::dp(&model, 401, 401));
    if let SolverChoice::Dp { grid } = &solver {
        grid.validate(&model).map_err(|e| cfg(&e))?;
    }
    if let Some(x0) = &scenario.run.x0 {
        check_x0(&model, x0)?;
    }
    if matches!(scenario.terminal, TerminalSpec::FromRegistry) && fixture.is_none() {
        return Err(CliError::Config("terminal mode from-registry needs a registry system".into()));
    }
    Ok(Resolved {
        registry_terminal: fixture.map(|f| f.terminal),
        model,
        orbit,
        storage,
        terminal_spec: scenario.terminal,
        solver,
        run: scenario.run,
        base_dir: base_dir.to_path_buf(),
    })
}

pub fn check_x0(model: &SystemModel, x0: &[f64]) -> Result<(), CliError> {
    if x0.len() != model.state_dim() {
        return Err(CliError::Config(format!(
            "run.x0 has dimension {}, expected {}",
            x0.len(),
            model.state_dim()
        )));
    }
    if let Some((d, v, lo, hi)) = model.state_box().violation(x0, 0.0) {
        return Err(CliError::Config(format!(
            "run.x0 violates the state bound of dimension {d}: {v} not in [{lo}, {hi}]"
        )));
    }
    Ok(())
}

impl Resolved {
    pub fn x0(&self) -> Result<&[f64], CliError> {
        self.run
            .x0
            .as_deref()
            .ok_or_else(|| CliError::Config("run.x0 is required for this command".into()))
    }

    /// Grid used for value iteration and sampling: the DP grid if the solver
    /// is grid-based, else 401 nodes per dimension.
    pub fn grid(&self) -> GridSpec {
        match &self.solver {
            SolverChoice::Dp { grid } => grid.clone(),
            SolverChoice::Oracle { .. } => GridSpec::uniform(&self.model, 401, 401),
        }
    }

    pub fn read_terminal_file(&self, file: &Path) -> Result<TerminalCostFile, CliError> {
        let path = if file.is_absolute() {
            file.to_path_buf()
        } else {
            self.base_dir.join(file)
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Config(format!("cannot read terminal file {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid terminal file {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_scenario_resolves() {
        let s = parse(r#"{"system": {"registry": "example1"}, "run": {"x0": [0.3]}}"#).unwrap();
        let r = resolve(s, Path::new(".")).unwrap();
        assert_eq!(r.orbit.period(), 4);
        assert_eq!(r.run.horizon, 5);
    }

    #[test]
    fn x0_outside_box_names_the_bound() {
        let s = parse(r#"{"system": {"registry": "example1"}, "run": {"x0": [1.5]}}"#).unwrap();
        match resolve(s, Path::new(".")) {
            Err(CliError::Config(msg)) => assert!(msg.contains("1.5 not in [-1, 1]"), "{msg}"),
            Err(e) => panic!("{e}"),
            Ok(_) => panic!("accepted x0 outside the box"),
        }
    }

    #[test]
    fn inline_system_needs_orbit_and_storage() {
        let text = r#"{
            "system": {"inline": {
                "state_box": {"lo": [-1], "hi": [1]}, "input_box": {"lo": [-1], "hi": [1]},
                "dynamics": {"a": [[1]], "b": [[1]]},
                "stage_cost": [{"coef": 4, "abs_x": [1]}, {"coef": -2, "x": [2]}, {"coef": -2, "u": [2]}, {"coef": 1}]
            }},
            "terminal": {"mode": "synthesize-from-orbit"}
        }"#;
        assert!(matches!(resolve(parse(text).unwrap(), Path::new(".")), Err(CliError::Config(_))));
        let mut v: Value = serde_json::from_str(text).unwrap();
        v["orbit"] = serde_json::json!({"states": [[-1], [0], [1], [0]], "inputs": [[1], [1], [-1], [-1]]});
        v["storage"] = serde_json::json!([{"coef": -1, "x": [2]}]);
        let r = resolve(parse(&v.to_string()).unwrap(), Path::new(".")).unwrap();
        assert_eq!(r.orbit.average_cost(), 0.0);
        assert_eq!(r.storage.orbit_average(), -0.5);
    }

    #[test]
    fn bad_tolerance_and_unknown_fields() {
        let s = parse(r#"{"system": {"registry": "example1"}, "run": {"eta": 0}}"#).unwrap();
        assert!(resolve(s, Path::new(".")).is_err());
        assert!(parse(r#"{"system": {"registry": "example1"}, "bogus": 1}"#).is_err());
    }
}
