//! Worst-case signaling against a finite set of receiver types.
//!
//! The sender's robust value is theta = min_omega theta_omega, where each
//! theta_omega minimizes the type-omega cost over the chain set intersected
//! with the half-spaces saying omega stays the worst case:
//! Tr{(V_omega - V_omega0) S} >= 0 for every other type omega0. The winning
//! subproblem's plan is the robust plan.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{ChainModel, PosteriorPlan};
use crate::posterior::{self, SignalingRule};
use crate::sdp::{self, ChainSdpProblem};

/// Relative slack added to the type-dominance cuts so that subproblems whose
/// feasible set touches the cut boundary (e.g. only at S = 0) stay solvable by
/// the barrier. The slack is far below every reported tolerance.
const CUT_RELAX: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct TypeCosts {
    pub label: String,
    /// Per-stage cost matrices V_{omega,1:kappa}.
    pub costs: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct RobustProblem {
    pub chain: ChainModel,
    pub types: Vec<TypeCosts>,
    /// Rule-independent constant shared across types.
    pub v_o: f64,
}

impl RobustProblem {
    pub fn new(chain: ChainModel, types: Vec<TypeCosts>, v_o: f64) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::InvalidModel("the type set must be non-empty".into()));
        }
        for t in &types {
            if t.costs.len() != chain.horizon() {
                return Err(Error::Dimension(format!(
                    "type {} needs one cost matrix per stage",
                    t.label
                )));
            }
            for (k, v) in t.costs.iter().enumerate() {
                if v.nrows() != chain.dims[k] || v.ncols() != chain.dims[k] {
                    return Err(Error::Dimension(format!(
                        "type {} stage {k} cost dimension mismatch",
                        t.label
                    )));
                }
            }
        }
        Ok(Self { chain, types, v_o })
    }
}

/// Per-type subproblem outcome; `theta` is None when the subproblem had no
/// interior (its error is recorded).
#[derive(Debug, Clone)]
pub struct TypeOutcome {
    pub label: String,
    pub theta: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RobustSolution {
    /// min_omega theta_omega including the constant v_o.
    pub theta: f64,
    /// Index of the winning type (lowest index on ties).
    pub winner: usize,
    pub per_type: Vec<TypeOutcome>,
    pub plan: PosteriorPlan,
    pub rule: SignalingRule,
}

fn cut_scale(cut: &[DMatrix<f64>], chain: &ChainModel) -> f64 {
    cut.iter()
        .zip(&chain.sigmas)
        .map(|(g, s)| g.norm() * s.norm())
        .fold(0.0, f64::max)
}

pub fn solve_robust(problem: &RobustProblem, tol: f64) -> Result<RobustSolution> {
    let n = problem.types.len();
    let mut per_type = Vec::with_capacity(n);
    let mut best: Option<(usize, f64, PosteriorPlan)> = None;

    for omega in 0..n {
        let mut extras = Vec::new();
        let mut offsets = Vec::new();
        for other in 0..n {
            if other == omega {
                continue;
            }
            let cut: Vec<DMatrix<f64>> = problem.types[omega]
                .costs
                .iter()
                .zip(&problem.types[other].costs)
                .map(|(a, b)| a - b)
                .collect();
            let scale = cut_scale(&cut, &problem.chain);
            if scale <= f64::EPSILON {
                // Identical types: the dominance cut is vacuous.
                continue;
            }
            offsets.push(CUT_RELAX * scale);
            extras.push(cut);
        }
        let sub = ChainSdpProblem::with_offset_extras(
            problem.chain.clone(),
            problem.types[omega].costs.clone(),
            extras,
            offsets,
        )?;
        match sdp::solve(&sub, tol) {
            Ok(sol) => {
                let theta = sol.objective + problem.v_o;
                per_type.push(TypeOutcome {
                    label: problem.types[omega].label.clone(),
                    theta: Some(theta),
                    error: None,
                });
                let better = match &best {
                    None => true,
                    Some((_, t, _)) => theta < *t - 0.0,
                };
                if better {
                    best = Some((omega, theta, sol.plan));
                }
            }
            Err(e) => per_type.push(TypeOutcome {
                label: problem.types[omega].label.clone(),
                theta: None,
                error: Some(e.to_string()),
            }),
        }
    }

    let (winner, theta, plan) = best.ok_or_else(|| {
        let detail = per_type
            .iter()
            .filter_map(|t| t.error.as_ref().map(|e| format!("{}: {e}", t.label)))
            .collect::<Vec<_>>()
            .join("; ");
        Error::Infeasible(format!("every per-type subproblem failed ({detail})"))
    })?;
    let rule = posterior::synthesize(&plan, &problem.chain)?;
    Ok(RobustSolution { theta, winner, per_type, plan, rule })
}

/// The receiver-type distribution attaining the inner maximum at a given
/// plan: uniform over the types of maximal cost.
pub fn worst_case_distribution(plan: &PosteriorPlan, problem: &RobustProblem) -> Vec<f64> {
    let vals: Vec<f64> = problem
        .types
        .iter()
        .map(|t| {
            t.costs
                .iter()
                .zip(&plan.stages)
                .map(|(v, h)| (v * h).trace())
                .sum::<f64>()
        })
        .collect();
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Ties are decided at solver accuracy, not machine precision: the plan
    // itself typically comes out of the barrier method.
    let tol = 1e-6 * (1.0 + max.abs());
    let support: Vec<bool> = vals.iter().map(|&v| v >= max - tol).collect();
    let count = support.iter().filter(|&&b| b).count() as f64;
    support.iter().map(|&b| if b { 1.0 / count } else { 0.0 }).collect()
}
