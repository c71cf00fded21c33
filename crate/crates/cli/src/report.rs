//! Report assembly and serialization. Machine output (`report.json`) carries
//! floats at 17 significant digits; the human summary printed to stdout uses 6.

use std::io::{self, Write};

use serde::Serialize;
use signaling_core::sim::SimReport;
use signaling_core::SignalingRule;
use signaling_core::PosteriorPlan;

use crate::config::{MatrixData, ProblemConfig};

#[derive(Debug, Clone, Serialize)]
pub struct RuleSection {
    pub maps: Vec<MatrixData>,
    pub noise_vars: Vec<Vec<f64>>,
}

impl RuleSection {
    pub fn from_rule(rule: &SignalingRule) -> Self {
        Self {
            maps: rule.maps.iter().map(MatrixData::from_matrix).collect(),
            noise_vars: rule.noise_vars.iter().map(|v| v.iter().copied().collect()).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TypeRow {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustSection {
    pub theta: f64,
    pub winner: String,
    pub per_type: Vec<TypeRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionSection {
    /// Auxiliary rule acting on the stacked measurement history.
    pub lifted_rule: RuleSection,
    /// Combination maps G_i turning auxiliary signals into state estimates.
    pub combine: Vec<MatrixData>,
    /// Posterior covariances of the state implied by the lifted optimum.
    pub state_posterior: Vec<MatrixData>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSection {
    /// sum_k Tr{H*_k V_k} (lifted value in noisy mode).
    pub objective: f64,
    /// Rule-independent constant of the reduced objective.
    pub constant: f64,
    pub total: f64,
    pub newton_steps: usize,
    pub gap: f64,
    pub plan: Vec<MatrixData>,
    pub rule: RuleSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub robust: Option<RobustSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub projection: Option<ProjectionSection>,
}

pub fn plan_section(plan: &PosteriorPlan) -> Vec<MatrixData> {
    plan.stages.iter().map(MatrixData::from_matrix).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CostRow {
    pub empirical: f64,
    pub std_err: f64,
    pub predicted: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PosteriorRow {
    pub empirical: MatrixData,
    pub predicted: MatrixData,
    pub max_z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimSectionOut {
    pub trajectories: usize,
    pub seed: u64,
    pub sender: CostRow,
    pub receiver: CostRow,
    pub pathwise_residual: f64,
    pub posterior: Vec<PosteriorRow>,
}

impl SimSectionOut {
    pub fn from_report(rep: &SimReport) -> Self {
        let cost = |c: &signaling_core::sim::CostStat| CostRow {
            empirical: c.empirical,
            std_err: c.std_err,
            predicted: c.predicted,
            z: c.z,
        };
        Self {
            trajectories: rep.trajectories,
            seed: rep.seed,
            sender: cost(&rep.sender),
            receiver: cost(&rep.receiver),
            pathwise_residual: rep.pathwise_residual,
            posterior: rep
                .posterior
                .iter()
                .map(|p| PosteriorRow {
                    empirical: MatrixData::from_matrix(&p.empirical),
                    predicted: MatrixData::from_matrix(&p.predicted),
                    max_z: p.max_z,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub version: String,
    pub command: String,
    /// Full resolved configuration, post flag overrides (audit trail).
    pub config: ProblemConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimSectionOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checks: Option<Vec<CheckRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepRow>>,
}

impl Report {
    pub fn new(command: &str, config: ProblemConfig) -> Self {
        Self {
            version: signaling_core::VERSION.to_string(),
            command: command.to_string(),
            config,
            solve: None,
            simulation: None,
            checks: None,
            sweep: None,
        }
    }
}

/// serde_json formatter that emits every float at 17 significant digits so
/// machine reports are lossless and byte-stable.
struct MachineFormatter;

impl serde_json::ser::Formatter for MachineFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        write!(writer, "{:.16e}", value)
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        write!(writer, "{:.16e}", value as f64)
    }
}

pub fn to_machine_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, MachineFormatter);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(out)?)
}

pub fn write_trace_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("param,value,objective,iterations,converged\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{},{}\n",
            r.param, r.value, r.objective, r.iterations, r.converged
        ));
    }
    out
}

/// 6-significant-digit scalar for the human summary.
pub fn human(x: f64) -> String {
    format!("{:.5e}", x)
}
