//! Problem configuration: JSON with explicit dimensions, matrices as flat
//! row-major arrays. Parsing is strict so that parse -> serialize -> parse is
//! the identity.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use signaling_core::{
    ControlledModel, Error, GaussMarkovModel, QuadraticObjective, Result as CoreResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Comm,
    Control,
    Robust,
    Noisy,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Comm => "comm",
            Mode::Control => "control",
            Mode::Robust => "robust",
            Mode::Noisy => "noisy",
        }
    }
}

/// Row-major dense matrix payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixData {
    pub fn to_matrix(&self) -> CoreResult<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Dimension(format!(
                "matrix declares {}x{} but carries {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }

    pub fn scaled_identity(dim: usize, value: f64) -> Self {
        Self::from_matrix(&(DMatrix::identity(dim, dim) * value))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub m: usize,
    pub kappa: usize,
    pub a: MatrixData,
    pub sigma_w: MatrixData,
    pub sigma_1: MatrixData,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<MatrixData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<MatrixData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_v: Option<MatrixData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerObjective {
    pub q: MatrixData,
    pub r: MatrixData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypedObjective {
    pub label: String,
    pub q: MatrixData,
    pub r: MatrixData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub sender: PlayerObjective,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receiver: Option<PlayerObjective>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receiver_types: Option<Vec<TypedObjective>>,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iterations() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: default_tol(), max_iterations: default_max_iterations() }
    }
}

fn default_trajectories() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self { trajectories: default_trajectories(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub mode: Mode,
    pub model: ModelConfig,
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sim: SimSection,
}

impl ProblemConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Mode-specific field presence; dimensional checks happen when the core
    /// types are built.
    pub fn validate(&self) -> anyhow::Result<()> {
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(anyhow::anyhow!("mode {} requires {}", self.mode.name(), what))
            }
        };
        let forbid = |absent: bool, what: &str| {
            if absent {
                Ok(())
            } else {
                Err(anyhow::anyhow!("mode {} does not use {}", self.mode.name(), what))
            }
        };
        match self.mode {
            Mode::Comm => {
                need(self.objective.receiver.is_some(), "objective.receiver")?;
                forbid(self.objective.receiver_types.is_none(), "objective.receiver_types")?;
                forbid(self.model.b.is_none(), "model.b")?;
                forbid(self.model.c.is_none() && self.model.sigma_v.is_none(), "measurements")?;
            }
            Mode::Control => {
                need(self.objective.receiver.is_some(), "objective.receiver")?;
                need(self.model.b.is_some(), "model.b")?;
                forbid(self.objective.receiver_types.is_none(), "objective.receiver_types")?;
                forbid(self.model.c.is_none() && self.model.sigma_v.is_none(), "measurements")?;
            }
            Mode::Robust => {
                need(
                    self.objective.receiver_types.as_ref().map_or(false, |t| !t.is_empty()),
                    "a non-empty objective.receiver_types list",
                )?;
                forbid(self.objective.receiver.is_none(), "objective.receiver")?;
                forbid(self.model.b.is_none(), "model.b")?;
                forbid(self.model.c.is_none() && self.model.sigma_v.is_none(), "measurements")?;
            }
            Mode::Noisy => {
                need(self.objective.receiver.is_some(), "objective.receiver")?;
                need(self.model.c.is_some(), "model.c")?;
                need(self.model.sigma_v.is_some(), "model.sigma_v")?;
                forbid(self.objective.receiver_types.is_none(), "objective.receiver_types")?;
                forbid(self.model.b.is_none(), "model.b")?;
            }
        }
        if self.sim.trajectories == 0 {
            anyhow::bail!("sim.trajectories must be at least 1");
        }
        Ok(())
    }

    pub fn gauss_markov(&self) -> CoreResult<GaussMarkovModel> {
        let m = &self.model;
        let a = m.a.to_matrix()?;
        let sw = m.sigma_w.to_matrix()?;
        let s1 = m.sigma_1.to_matrix()?;
        if a.nrows() != m.m || a.ncols() != m.m {
            return Err(Error::Dimension("model.a must be m x m".into()));
        }
        GaussMarkovModel::new(a, sw, s1, m.kappa)
    }

    pub fn controlled(&self) -> CoreResult<ControlledModel> {
        let b = self
            .model
            .b
            .as_ref()
            .ok_or_else(|| Error::InvalidModel("model.b required".into()))?
            .to_matrix()?;
        ControlledModel::new(self.gauss_markov()?, b)
    }

    pub fn sender_objective(&self) -> CoreResult<QuadraticObjective> {
        build_objective(&self.objective.sender.q, &self.objective.sender.r, self.mode)
    }

    pub fn receiver_objective(&self) -> CoreResult<QuadraticObjective> {
        let r = self
            .objective
            .receiver
            .as_ref()
            .ok_or_else(|| Error::InvalidModel("objective.receiver required".into()))?;
        build_objective(&r.q, &r.r, self.mode)
    }

    pub fn receiver_type_objectives(&self) -> CoreResult<Vec<(String, QuadraticObjective)>> {
        let list = self
            .objective
            .receiver_types
            .as_ref()
            .ok_or_else(|| Error::InvalidModel("objective.receiver_types required".into()))?;
        list.iter()
            .map(|t| Ok((t.label.clone(), build_objective(&t.q, &t.r, self.mode)?)))
            .collect()
    }
}

fn build_objective(q: &MatrixData, r: &MatrixData, mode: Mode) -> CoreResult<QuadraticObjective> {
    let q = q.to_matrix()?;
    let r = r.to_matrix()?;
    match mode {
        Mode::Control => QuadraticObjective::control(q, r),
        _ => QuadraticObjective::communication(q, r),
    }
}

/// Set one scalar knob identified by a dotted JSON path. Numeric leaves are
/// assigned directly; matrix-valued leaves (present or optional) become
/// `value * I` at the model dimension. `meas.` is accepted as an alias for
/// `model.` so sensor sweeps read naturally.
pub fn set_scalar_path(cfg: &ProblemConfig, path: &str, value: f64) -> anyhow::Result<ProblemConfig> {
    let path = path.strip_prefix("meas.").map(|p| format!("model.{p}")).unwrap_or_else(|| path.to_string());
    let mut root = serde_json::to_value(cfg)?;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.is_empty() {
        anyhow::bail!("empty sweep path");
    }
    let mut node = &mut root;
    for part in &parts[..parts.len() - 1] {
        node = node
            .get_mut(*part)
            .ok_or_else(|| anyhow::anyhow!("sweep path segment '{part}' not found"))?;
    }
    let leaf = parts[parts.len() - 1];
    let slot = node.as_object_mut().ok_or_else(|| anyhow::anyhow!("sweep path does not end in an object field"))?;
    let matrix = serde_json::to_value(MatrixData::scaled_identity(cfg.model.m, value))?;
    match slot.get(leaf) {
        Some(serde_json::Value::Number(_)) => {
            slot.insert(
                leaf.to_string(),
                serde_json::Value::Number(
                    serde_json::Number::from_f64(value)
                        .ok_or_else(|| anyhow::anyhow!("sweep value must be finite"))?,
                ),
            );
        }
        Some(serde_json::Value::Object(_)) | None => {
            // Matrix-valued (or optional matrix) knob.
            if leaf == "seed" || leaf == "trajectories" || leaf == "kappa" || leaf == "m" {
                anyhow::bail!("sweep path '{path}' is not a scalar knob");
            }
            slot.insert(leaf.to_string(), matrix);
        }
        Some(other) => anyhow::bail!("sweep path points at unsupported value {other}"),
    }
    let cfg: ProblemConfig = serde_json::from_value(root)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parse `start:step:end` into an inclusive, ascending grid.
pub fn parse_grid(spec: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        anyhow::bail!("grid must be start:step:end");
    }
    let start: f64 = parts[0].parse()?;
    let step: f64 = parts[1].parse()?;
    let end: f64 = parts[2].parse()?;
    if !(step > 0.0) || end < start {
        anyhow::bail!("grid requires step > 0 and end >= start");
    }
    let mut out = Vec::new();
    let mut i = 0u64;
    loop {
        let v = start + step * i as f64;
        if v > end + step * 0.5 {
            break;
        }
        out.push(v.min(end));
        i += 1;
    }
    Ok(out)
}
