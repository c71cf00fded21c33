//! Communication-setting pipeline: reduce misaligned quadratic objectives to
//! per-stage cost matrices over posterior covariances, solve (closed form for
//! one stage, interior point otherwise), and synthesize signaling rules.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ChainModel, GaussMarkovModel, ObjectiveKind, PosteriorPlan, QuadraticObjective};
use crate::posterior::{self, ReducedSpace, SignalingRule};
use crate::sdp::{self, ChainSdpProblem};

/// Strict-negativity threshold for the disclosed eigenspace of W, relative to
/// its spectral norm. Zero eigenvalues (ties) are excluded: their contribution
/// to the value is zero and excluding them discloses the least.
const NEG_EIG_TOL: f64 = 1e-9;

/// Eigenvalue rounding band around {0, 1} applied after the SDP solve.
const ROUND_TOL: f64 = 1e-4;
const ROUND_OBJ_TOL: f64 = 1e-6;

/// Sender cost as a function of the posterior plan:
/// cost = sum_k Tr{H_k V_k} + constant.
#[derive(Debug, Clone)]
pub struct ReducedObjective {
    /// Per-stage cost matrices; identical across stages in the pure
    /// communication setting, stage-varying after the control reduction.
    pub costs: Vec<DMatrix<f64>>,
    /// Rule-independent constant c.
    pub constant: f64,
    /// The sender-side image of the receiver's reaction map.
    pub m_s: DMatrix<f64>,
}

/// F = (R_R' R_R)^{-1} R_R' Q_R; the receiver plays u_k = F E{x_k | s_{1:k}}.
pub fn receiver_best_response(obj_r: &QuadraticObjective) -> Result<DMatrix<f64>> {
    if obj_r.kind != ObjectiveKind::Communication {
        return Err(Error::UnsupportedPolicy(
            "best response in closed form requires a communication objective".into(),
        ));
    }
    let gram = obj_r.r.transpose() * &obj_r.r;
    let chol = Cholesky::new(gram).ok_or(Error::IllPosedReceiver)?;
    Ok(chol.solve(&(obj_r.r.transpose() * &obj_r.q)))
}

/// Substitute the receiver's best response into the sender's cost and collect
/// the quadratic form in the posterior estimate.
pub fn reduce(
    obj_s: &QuadraticObjective,
    obj_r: &QuadraticObjective,
    sigmas: &[DMatrix<f64>],
) -> Result<ReducedObjective> {
    if obj_s.kind != ObjectiveKind::Communication {
        return Err(Error::UnsupportedPolicy(
            "reduction requires communication objectives".into(),
        ));
    }
    let f = receiver_best_response(obj_r)?;
    let m_s = &obj_s.r * &f;
    if m_s.ncols() != obj_s.q.ncols() {
        return Err(Error::Dimension("sender and receiver state dimensions differ".into()));
    }
    let v = linalg::symmetrize(
        &(m_s.transpose() * &m_s - m_s.transpose() * &obj_s.q - obj_s.q.transpose() * &m_s),
    );
    let qq = obj_s.q.transpose() * &obj_s.q;
    let constant = sigmas.iter().map(|s| (&qq * s).trace()).sum();
    Ok(ReducedObjective { costs: vec![v; sigmas.len()], constant, m_s })
}

#[derive(Debug, Clone)]
pub struct SingleStageSolution {
    pub h: DMatrix<f64>,
    /// Tr{H* V}; add the reduced objective's constant for the absolute cost.
    pub value: f64,
    pub rule: SignalingRule,
}

/// Closed form for one stage: W is the Lambda^{1/2}-congruence of V restricted
/// to the range of Sigma_1; the optimal normalized plan is the projector onto
/// the strictly negative eigenspace of W and the value is the sum of the
/// negative eigenvalues.
pub fn solve_single_stage(v: &DMatrix<f64>, sigma_1: &DMatrix<f64>) -> Result<SingleStageSolution> {
    let m = sigma_1.nrows();
    if v.nrows() != m || v.ncols() != m {
        return Err(Error::Dimension("cost and covariance dimensions differ".into()));
    }
    if !linalg::is_psd(sigma_1) {
        return Err(Error::InvalidModel("Sigma_1 is not positive semi-definite".into()));
    }
    let rs = ReducedSpace::new(&linalg::symmetrize(sigma_1));
    let n = rs.rank;
    let ub = rs.range();
    let mut w = ub.transpose() * linalg::symmetrize(v) * &ub;
    for i in 0..n {
        for j in 0..n {
            w[(i, j)] *= (rs.scales[i] * rs.scales[j]).sqrt();
        }
    }
    let w = linalg::symmetrize(&w);
    let eig = linalg::sym_eig(&w);
    let thr = NEG_EIG_TOL * linalg::spectral_norm(&w);
    let mut t = DMatrix::zeros(n, n);
    let mut value = 0.0;
    for i in 0..n {
        if eig.values[i] < -thr {
            let u = eig.vectors.column(i);
            t += u * u.transpose();
            value += eig.values[i];
        }
    }
    let h = rs.unwhiten(&t);
    let chain = single_stage_chain(sigma_1);
    let rule = posterior::synthesize(&PosteriorPlan { stages: vec![h.clone()] }, &chain)?;
    Ok(SingleStageSolution { h, value, rule })
}

fn single_stage_chain(sigma_1: &DMatrix<f64>) -> ChainModel {
    ChainModel::from_parts(Vec::new(), vec![linalg::symmetrize(sigma_1)])
        .expect("single-stage chain is always well-formed")
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub plan: PosteriorPlan,
    pub rule: SignalingRule,
    /// sum_k Tr{H*_k V_k}.
    pub objective: f64,
    /// Rule-independent constant c of the reduced objective.
    pub constant: f64,
    /// objective + constant.
    pub total: f64,
    pub newton_steps: usize,
    pub gap: f64,
}

/// Solve an already-reduced objective over the chain.
pub fn solve_reduced(
    reduced: &ReducedObjective,
    chain: &ChainModel,
    tol: f64,
) -> Result<SolveReport> {
    let problem = ChainSdpProblem::new(chain.clone(), reduced.costs.clone())?;
    let sol = sdp::solve(&problem, tol)?;
    let (plan, objective) = round_idempotent(sol.plan, sol.objective, reduced, chain);
    let rule = posterior::synthesize(&plan, chain)?;
    Ok(SolveReport {
        plan,
        rule,
        objective,
        constant: reduced.constant,
        total: objective + reduced.constant,
        newton_steps: sol.newton_steps,
        gap: sol.gap,
    })
}

/// Round normalized eigenvalues to {0, 1} when within the band, keeping the
/// rounded plan only if feasibility survives and the objective moves by less
/// than the guard tolerance.
fn round_idempotent(
    plan: PosteriorPlan,
    objective: f64,
    reduced: &ReducedObjective,
    chain: &ChainModel,
) -> (PosteriorPlan, f64) {
    let rounded = (|| -> Result<PosteriorPlan> {
        let mut ts = posterior::normalize(&plan, chain)?;
        let mut sequential = PosteriorPlan { stages: Vec::with_capacity(chain.horizon()) };
        for k in 0..chain.horizon() {
            // Re-derive the slab from the already-rounded prefix so the
            // whitened coordinates stay consistent stage to stage.
            let slab = chain.slab(&sequential, k);
            let rs = ReducedSpace::new(&slab);
            if ts[k].nrows() != rs.rank {
                return Err(Error::Dimension("slab rank changed under rounding".into()));
            }
            let eig = linalg::sym_eig(&ts[k]);
            let n = rs.rank;
            let mut t = DMatrix::zeros(n, n);
            for i in 0..n {
                let lam = eig.values[i];
                let lam = if lam.abs() <= ROUND_TOL {
                    0.0
                } else if (lam - 1.0).abs() <= ROUND_TOL {
                    1.0
                } else {
                    lam.clamp(0.0, 1.0)
                };
                if lam != 0.0 {
                    let u = eig.vectors.column(i);
                    t += u * u.transpose() * lam;
                }
            }
            ts[k] = t;
            let h = linalg::symmetrize(&(chain.lower_bound(&sequential, k) + rs.unwhiten(&ts[k])));
            sequential.stages.push(h);
        }
        Ok(sequential)
    })();
    match rounded {
        Ok(p) => {
            let obj: f64 = p
                .stages
                .iter()
                .zip(&reduced.costs)
                .map(|(h, v)| (h * v).trace())
                .sum();
            let feasible = crate::model::validate_plan(&p, chain)
                .map(|v| v.is_empty())
                .unwrap_or(false);
            if feasible && (obj - objective).abs() <= ROUND_OBJ_TOL * (1.0 + objective.abs()) {
                (p, obj)
            } else {
                (plan, objective)
            }
        }
        Err(_) => (plan, objective),
    }
}

/// Full communication pipeline: reduce, solve the chain SDP, round, synthesize.
pub fn solve_multi_stage(
    obj_s: &QuadraticObjective,
    obj_r: &QuadraticObjective,
    model: &GaussMarkovModel,
    tol: f64,
) -> Result<SolveReport> {
    let chain = model.chain();
    let reduced = reduce(obj_s, obj_r, &chain.sigmas)?;
    solve_reduced(&reduced, &chain, tol)
}
