//! JSON problem documents.
//!
//! ```json
//! {
//!   "name": "min_time_origin",
//!   "dynamics": {"model": "double_integrator"},
//!   "state_dim": 2, "control_dim": 1,
//!   "control_set": {"box": {"lo": [-1], "hi": [1]}},
//!   "x0": [1, 0],
//!   "target": {"kind": "origin"},
//!   "time_mode": "free"
//! }
//! ```

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

use super::models::{dynamics_registry, target_registry, terminal_cost_registry};
use super::{ControlSet, MaximizerOptions, OcpProblem, TimeMode};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRef {
    pub model: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedRef {
    pub kind: String,
    #[serde(default)]
    pub params: Value,
}

/// Optional solver settings carried with a problem.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub residual: Option<f64>,
    pub step: Option<f64>,
    pub max_iter: Option<usize>,
    pub eps0: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialGuess {
    /// Normal-chart costate `λ(t₀)`.
    pub costate: Option<Vec<f64>>,
    pub t1: Option<f64>,
    pub multipliers: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDocument {
    pub name: String,
    pub dynamics: ModelRef,
    pub state_dim: usize,
    pub control_dim: usize,
    pub control_set: ControlSet,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub t0: f64,
    #[serde(default)]
    pub target: Option<NamedRef>,
    #[serde(default)]
    pub terminal_cost: Option<NamedRef>,
    pub time_mode: TimeMode,
    #[serde(default)]
    pub maximizer: Option<MaximizerOptions>,
    #[serde(default)]
    pub tolerances: Option<Tolerances>,
    #[serde(default)]
    pub initial_guess: Option<InitialGuess>,
}

fn with_dim(params: &Value, n: usize) -> Result<Value> {
    let mut map = match params {
        Value::Null => Map::new(),
        Value::Object(m) => m.clone(),
        _ => return Err(Error::InvalidInput("model params must be an object".into())),
    };
    map.entry("state_dim").or_insert_with(|| Value::from(n));
    Ok(Value::Object(map))
}

impl ProblemDocument {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidInput(format!("problem document: {e}")))
    }

    /// Builds and validates the problem, checking declared dimensions
    /// against the model.
    pub fn to_problem(&self) -> Result<OcpProblem> {
        let n = self.state_dim;
        let dynamics = dynamics_registry().build(&self.dynamics.model, &with_dim(&self.dynamics.params, n)?)?;
        if dynamics.state_dim() != n || dynamics.control_dim() != self.control_dim {
            return Err(Error::InvalidInput(format!(
                "model '{}' has n = {}, m = {} but the document declares n = {n}, m = {}",
                self.dynamics.model,
                dynamics.state_dim(),
                dynamics.control_dim(),
                self.control_dim
            )));
        }
        let mut p = OcpProblem::new(self.name.clone(), dynamics, self.control_set.clone(), self.x0.clone());
        p.t0 = self.t0;
        p.time_mode = self.time_mode;
        if let Some(t) = &self.target {
            if !t.kind.eq_ignore_ascii_case("free") {
                p.target = Some(target_registry().build(&t.kind, &with_dim(&t.params, n)?)?);
            }
        }
        if let Some(k) = &self.terminal_cost {
            p.terminal_cost = Some(terminal_cost_registry().build(&k.kind, &with_dim(&k.params, n)?)?);
        }
        if let Some(m) = &self.maximizer {
            p.maximizer = m.clone();
        }
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn document_round_trip() {
        let doc = ProblemDocument::from_json_str(
            r#"{"name": "mt", "dynamics": {"model": "double_integrator"},
                "state_dim": 2, "control_dim": 1,
                "control_set": {"box": {"lo": [-1], "hi": [1]}},
                "x0": [1, 0], "target": {"kind": "origin"}, "time_mode": "free"}"#,
        )
        .unwrap();
        let p = doc.to_problem().unwrap();
        assert_eq!(p.k(), 2);
        assert_eq!(p.time_mode, TimeMode::Free);
        let again = ProblemDocument::from_json_str(&serde_json::to_string(&doc).unwrap()).unwrap();
        assert_eq!(again.x0, doc.x0);
    }

    #[test]
    fn fixed_time_and_terminal_cost() {
        let doc = ProblemDocument::from_json_str(
            r#"{"name": "lq", "dynamics": {"model": "scalar_lq"},
                "state_dim": 1, "control_dim": 1,
                "control_set": {"box": {"lo": [-1], "hi": [1]}},
                "x0": [1], "terminal_cost": {"kind": "quadratic", "params": {"weights": [2]}},
                "time_mode": {"fixed": 1.0}}"#,
        )
        .unwrap();
        let p = doc.to_problem().unwrap();
        assert_eq!(p.k(), 0);
        assert_eq!(p.time_mode, TimeMode::Fixed(1.0));
        assert_eq!(p.terminal_value(&[0.5]), 0.25);
    }

    #[test]
    fn dimension_mismatch_is_invalid() {
        let doc = ProblemDocument::from_json_str(
            r#"{"name": "bad", "dynamics": {"model": "double_integrator"},
                "state_dim": 3, "control_dim": 1,
                "control_set": {"box": {"lo": [-1], "hi": [1]}},
                "x0": [1, 0, 0], "time_mode": "free"}"#,
        )
        .unwrap();
        assert!(matches!(doc.to_problem(), Err(Error::InvalidInput(_))));
        assert!(ProblemDocument::from_json_str("{").is_err());
    }
}
