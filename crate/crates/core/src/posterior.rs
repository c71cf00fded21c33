//! Covariance-of-posterior geometry: normalization of the chain constraint
//! onto the [0, I] slab, synthesis of linear-plus-noise signaling rules from a
//! feasible plan, and the inverse map from a rule back to posterior
//! covariances via Gaussian filtering.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, RANK_TOL};
use crate::model::{validate_plan, ChainModel, PosteriorPlan};

/// Whitened coordinates of one stage slab Sigma_k - A H_{k-1} A':
/// orthonormal basis, positive eigenvalues, and rank.
#[derive(Debug, Clone)]
pub struct ReducedSpace {
    /// Full orthonormal basis; the leading `rank` columns span the slab range.
    pub basis: DMatrix<f64>,
    /// Positive eigenvalues of the slab (length `rank`).
    pub scales: DVector<f64>,
    pub rank: usize,
}

impl ReducedSpace {
    pub fn new(slab: &DMatrix<f64>) -> Self {
        let eig = linalg::sym_eig(slab);
        let tol = RANK_TOL * eig.values.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let rank = eig.values.iter().filter(|&&v| v > tol && v > 0.0).count();
        ReducedSpace {
            basis: eig.vectors,
            scales: DVector::from_iterator(rank, eig.values.iter().take(rank).copied()),
            rank,
        }
    }

    /// Leading `rank` columns of the basis (d x n).
    pub fn range(&self) -> DMatrix<f64> {
        self.basis.columns(0, self.rank).into_owned()
    }

    /// T = Lambda^{-1/2} [U' M U]_11 Lambda^{-1/2} for a symmetric M.
    pub fn whiten(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let ub = self.range();
        let n11 = ub.transpose() * m * &ub;
        let mut t = n11;
        for i in 0..self.rank {
            for j in 0..self.rank {
                t[(i, j)] /= (self.scales[i] * self.scales[j]).sqrt();
            }
        }
        linalg::symmetrize(&t)
    }

    /// Inverse congruence: M = U_blk Lambda^{1/2} T Lambda^{1/2} U_blk'.
    pub fn unwhiten(&self, t: &DMatrix<f64>) -> DMatrix<f64> {
        let mut s = t.clone();
        for i in 0..self.rank {
            for j in 0..self.rank {
                s[(i, j)] *= (self.scales[i] * self.scales[j]).sqrt();
            }
        }
        let ub = self.range();
        linalg::symmetrize(&(&ub * s * ub.transpose()))
    }
}

/// Per-stage linear map plus independent diagonal Gaussian noise.
/// The emitted signal is s_k = L_k' x_k + n_k with n_k ~ N(0, diag(noise_vars)).
#[derive(Debug, Clone)]
pub struct SignalingRule {
    pub maps: Vec<DMatrix<f64>>,
    pub noise_vars: Vec<DVector<f64>>,
}

impl SignalingRule {
    pub fn zero(chain: &ChainModel) -> Self {
        SignalingRule {
            maps: chain.dims.iter().map(|&d| DMatrix::zeros(d, d)).collect(),
            noise_vars: chain.dims.iter().map(|&d| DVector::zeros(d)).collect(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.maps.len()
    }
}

fn check_feasible(plan: &PosteriorPlan, chain: &ChainModel) -> Result<()> {
    let violations = validate_plan(plan, chain)?;
    if violations.is_empty() {
        Ok(())
    } else {
        let detail = violations
            .iter()
            .map(|v| format!("stage {} {:?} margin {:.3e}", v.stage + 1, v.side, v.margin))
            .collect::<Vec<_>>()
            .join(", ");
        Err(Error::InfeasiblePlan(detail))
    }
}

/// Map a feasible plan onto the normalized slab: T_k with I >= T_k >= 0.
pub fn normalize(plan: &PosteriorPlan, chain: &ChainModel) -> Result<Vec<DMatrix<f64>>> {
    check_feasible(plan, chain)?;
    let mut out = Vec::with_capacity(chain.horizon());
    for k in 0..chain.horizon() {
        let slab = chain.slab(plan, k);
        let rs = ReducedSpace::new(&slab);
        let delta = linalg::symmetrize(&(&plan.stages[k] - chain.lower_bound(plan, k)));
        out.push(rs.whiten(&delta));
    }
    Ok(out)
}

/// Inverse of [`normalize`]: rebuild the plan from normalized stages.
/// Eigenvalues of each `t` are expected in [0, 1]; the recursion keeps the
/// result feasible.
pub fn denormalize(ts: &[DMatrix<f64>], chain: &ChainModel) -> Result<PosteriorPlan> {
    if ts.len() != chain.horizon() {
        return Err(Error::Dimension("normalized sequence length mismatch".into()));
    }
    let mut plan = PosteriorPlan { stages: Vec::with_capacity(ts.len()) };
    for k in 0..ts.len() {
        let slab = chain.slab(&plan, k);
        let rs = ReducedSpace::new(&slab);
        if ts[k].nrows() != rs.rank {
            return Err(Error::Dimension(format!(
                "normalized stage {k} has dimension {} but the slab has rank {}",
                ts[k].nrows(),
                rs.rank
            )));
        }
        let h = linalg::symmetrize(&(chain.lower_bound(&plan, k) + rs.unwhiten(&ts[k])));
        plan.stages.push(h);
    }
    Ok(plan)
}

/// Synthesize a memoryless linear-plus-noise rule attaining the plan.
///
/// Per stage the whitened plan T_k = U_bar Lambda_bar U_bar' is split into a
/// deterministic gain and independent noise with lambda_o = lambda_bar and
/// sigma_o^2 = lambda_bar (1 - lambda_bar), which is noiseless exactly at the
/// idempotent extremes.
pub fn synthesize(plan: &PosteriorPlan, chain: &ChainModel) -> Result<SignalingRule> {
    check_feasible(plan, chain)?;
    let ts = normalize(plan, chain)?;
    let mut maps = Vec::with_capacity(ts.len());
    let mut noise_vars = Vec::with_capacity(ts.len());
    for k in 0..ts.len() {
        let d = chain.dims[k];
        let slab = chain.slab(plan, k);
        let rs = ReducedSpace::new(&slab);
        let n = rs.rank;
        let eig = linalg::sym_eig(&ts[k]);
        // SDP solutions sit numerically on the boundary; tolerate 1e-8 overshoot.
        let lam_bar: Vec<f64> = eig.values.iter().map(|&v| v.clamp(0.0, 1.0)).collect();

        // L = U_blk Lambda^{-1/2} U_bar Lambda_o, padded to d columns.
        let ub = rs.range();
        let mut inner = eig.vectors.clone();
        for i in 0..n {
            for j in 0..n {
                inner[(i, j)] *= lam_bar[j] / rs.scales[i].sqrt();
            }
        }
        let mut l = DMatrix::zeros(d, d);
        l.view_mut((0, 0), (d, n)).copy_from(&(&ub * &inner));
        maps.push(l);

        let mut nv = DVector::zeros(d);
        for j in 0..n {
            nv[j] = lam_bar[j] * (1.0 - lam_bar[j]);
        }
        noise_vars.push(nv);
    }
    Ok(SignalingRule { maps, noise_vars })
}

/// Posterior-estimate covariances H_{1:kappa} attained by a rule, via the
/// Gaussian conditioning recursion on the estimation-error covariance.
pub fn posterior_covariance(rule: &SignalingRule, chain: &ChainModel) -> Result<PosteriorPlan> {
    let (plan, _) = filter_pass(rule, chain)?;
    Ok(plan)
}

/// Deterministic filter gains for running the receiver's estimator on signal
/// realizations: x_hat_k = A x_hat_{k-1} + K_k (s_k - L_k' A x_hat_{k-1}).
#[derive(Debug, Clone)]
pub struct FilterGains {
    pub gains: Vec<DMatrix<f64>>,
}

pub fn filter_gains(rule: &SignalingRule, chain: &ChainModel) -> Result<FilterGains> {
    let (_, gains) = filter_pass(rule, chain)?;
    Ok(FilterGains { gains })
}

fn filter_pass(
    rule: &SignalingRule,
    chain: &ChainModel,
) -> Result<(PosteriorPlan, Vec<DMatrix<f64>>)> {
    if rule.horizon() != chain.horizon() {
        return Err(Error::Dimension("rule horizon does not match the model".into()));
    }
    let mut stages = Vec::with_capacity(chain.horizon());
    let mut gains = Vec::with_capacity(chain.horizon());
    let mut pred = chain.sigmas[0].clone();
    for k in 0..chain.horizon() {
        let d = chain.dims[k];
        let l = &rule.maps[k];
        if l.nrows() != d || l.ncols() != d || rule.noise_vars[k].len() != d {
            return Err(Error::Dimension(format!("rule stage {k} dimension mismatch")));
        }
        let innov = linalg::symmetrize(
            &(l.transpose() * &pred * l + DMatrix::from_diagonal(&rule.noise_vars[k])),
        );
        let gain = &pred * l * linalg::pinv_psd(&innov);
        let post = linalg::symmetrize(&(&pred - &gain * l.transpose() * &pred));
        stages.push(linalg::symmetrize(&(&chain.sigmas[k] - &post)));
        gains.push(gain);
        if k + 1 < chain.horizon() {
            let a = &chain.trans[k];
            pred = linalg::symmetrize(&(a * &post * a.transpose() + &chain.noise[k + 1]));
        }
    }
    Ok((PosteriorPlan { stages }, gains))
}

/// Sample a feasible plan by drawing each normalized stage from the slab:
/// T_k = Q diag(u) Q' with u uniform in [0, 1] and Q random orthogonal.
pub fn random_feasible_plan<R: Rng>(chain: &ChainModel, rng: &mut R) -> PosteriorPlan {
    let mut plan = PosteriorPlan { stages: Vec::with_capacity(chain.horizon()) };
    for k in 0..chain.horizon() {
        let slab = chain.slab(&plan, k);
        let rs = ReducedSpace::new(&slab);
        let n = rs.rank;
        let t = if n == 0 {
            DMatrix::zeros(0, 0)
        } else {
            let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let q = g.qr().q();
            let u = DVector::from_fn(n, |_, _| rng.gen::<f64>());
            linalg::symmetrize(&(&q * DMatrix::from_diagonal(&u) * q.transpose()))
        };
        let h = linalg::symmetrize(&(chain.lower_bound(&plan, k) + rs.unwhiten(&t)));
        plan.stages.push(h);
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussMarkovModel;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eye(m: usize) -> DMatrix<f64> {
        DMatrix::identity(m, m)
    }

    fn single_stage(sigma: DMatrix<f64>) -> ChainModel {
        let m = sigma.nrows();
        GaussMarkovModel::new(DMatrix::zeros(m, m), DMatrix::zeros(m, m), sigma, 1)
            .unwrap()
            .chain()
    }

    #[test]
    fn normalize_identity_congruence() {
        // Sigma_1 = I: T_1 = H_1.
        let chain = single_stage(eye(2));
        let h = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
        let t = normalize(&PosteriorPlan { stages: vec![h.clone()] }, &chain).unwrap();
        assert!((&t[0] - &h).norm() < 1e-12);
    }

    #[test]
    fn normalize_rank_deficient_reduces() {
        let chain = single_stage(DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 0.0])));
        let h = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.4, 0.0]));
        let t = normalize(&PosteriorPlan { stages: vec![h] }, &chain).unwrap();
        assert_eq!(t[0].nrows(), 1);
        assert!((t[0][(0, 0)] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn normalize_scales_per_axis() {
        let chain = single_stage(DMatrix::from_diagonal(&DVector::from_row_slice(&[4.0, 1.0])));
        let h = DMatrix::from_diagonal(&DVector::from_row_slice(&[2.0, 0.5]));
        let t = normalize(&PosteriorPlan { stages: vec![h] }, &chain).unwrap();
        assert!((&t[0] - eye(2) * 0.5).norm() < 1e-12);
    }

    #[test]
    fn normalize_rejects_infeasible() {
        let chain = single_stage(eye(2));
        let h = eye(2) * 1.5;
        let err = normalize(&PosteriorPlan { stages: vec![h] }, &chain).unwrap_err();
        assert!(matches!(err, Error::InfeasiblePlan(_)));
    }

    #[test]
    fn synthesize_full_disclosure_is_noiseless() {
        let chain = single_stage(eye(3));
        let plan = PosteriorPlan { stages: vec![eye(3)] };
        let rule = synthesize(&plan, &chain).unwrap();
        assert!(rule.noise_vars[0].amax() < 1e-12);
        let back = posterior_covariance(&rule, &chain).unwrap();
        assert!((&back.stages[0] - eye(3)).norm() < 1e-10);
    }

    #[test]
    fn synthesize_no_disclosure_is_zero() {
        let chain = single_stage(eye(2));
        let plan = PosteriorPlan { stages: vec![DMatrix::zeros(2, 2)] };
        let rule = synthesize(&plan, &chain).unwrap();
        assert!(rule.maps[0].norm() < 1e-12);
        assert!(rule.noise_vars[0].amax() < 1e-12);
    }

    #[test]
    fn synthesize_half_disclosure_round_trips() {
        let chain = single_stage(eye(2));
        let plan = PosteriorPlan { stages: vec![eye(2) * 0.5] };
        let rule = synthesize(&plan, &chain).unwrap();
        // lambda_o = 1/2, sigma_o^2 = 1/4 on both axes
        for j in 0..2 {
            assert!((rule.noise_vars[0][j] - 0.25).abs() < 1e-12);
        }
        let back = posterior_covariance(&rule, &chain).unwrap();
        assert!((&back.stages[0] - eye(2) * 0.5).norm() < 1e-10);
    }

    #[test]
    fn posterior_covariance_identity_and_zero() {
        let chain = single_stage(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]));
        let full = SignalingRule {
            maps: vec![eye(2)],
            noise_vars: vec![DVector::zeros(2)],
        };
        let h = posterior_covariance(&full, &chain).unwrap();
        assert!((&h.stages[0] - &chain.sigmas[0]).norm() < 1e-10);
        let zero = SignalingRule::zero(&chain);
        let h0 = posterior_covariance(&zero, &chain).unwrap();
        assert!(h0.stages[0].norm() < 1e-12);
    }

    #[test]
    fn round_trip_random_plans_multi_stage() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.7]);
        let model = GaussMarkovModel::new(a, eye(2), eye(2), 3).unwrap();
        let chain = model.chain();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let plan = random_feasible_plan(&chain, &mut rng);
            let rule = synthesize(&plan, &chain).unwrap();
            let back = posterior_covariance(&rule, &chain).unwrap();
            for k in 0..3 {
                let tol = 1e-8 * (1.0 + chain.sigmas[k].norm());
                assert!(
                    (&back.stages[k] - &plan.stages[k]).norm() < tol,
                    "stage {k} round-trip error {:.3e}",
                    (&back.stages[k] - &plan.stages[k]).norm()
                );
            }
        }
    }

    #[test]
    fn normalize_is_bijective_on_feasible_plans() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.3, 0.0, 0.8]);
        let model = GaussMarkovModel::new(a, eye(2), eye(2) * 2.0, 4).unwrap();
        let chain = model.chain();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let plan = random_feasible_plan(&chain, &mut rng);
        let ts = normalize(&plan, &chain).unwrap();
        let back = denormalize(&ts, &chain).unwrap();
        for k in 0..4 {
            assert!((&back.stages[k] - &plan.stages[k]).norm() < 1e-10);
        }
    }

    #[test]
    fn normalized_eigenvalues_in_unit_interval() {
        let a = DMatrix::from_row_slice(3, 3, &[0.9, 0.1, 0.0, 0.0, 0.5, 0.2, 0.1, 0.0, 0.3]);
        let model = GaussMarkovModel::new(a, eye(3) * 0.5, eye(3), 3).unwrap();
        let chain = model.chain();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let plan = random_feasible_plan(&chain, &mut rng);
            for t in normalize(&plan, &chain).unwrap() {
                let eig = linalg::sym_eig(&t);
                for &v in eig.values.iter() {
                    assert!(v >= -1e-8 && v <= 1.0 + 1e-8, "eigenvalue {v} outside [0,1]");
                }
            }
        }
    }

    #[test]
    fn singular_slab_off_diagonal_blocks_vanish() {
        // Sigma_1 singular: U'(H)U must be block diagonal w.r.t. the slab range.
        let sigma = DMatrix::from_diagonal(&DVector::from_row_slice(&[2.0, 1.0, 0.0]));
        let chain = single_stage(sigma);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let plan = random_feasible_plan(&chain, &mut rng);
            let rs = ReducedSpace::new(&chain.slab(&plan, 0));
            let full = rs.basis.transpose() * &plan.stages[0] * &rs.basis;
            let off = full.view((0, rs.rank), (rs.rank, 3 - rs.rank)).norm();
            assert!(off < 1e-8, "off-diagonal block norm {off}");
        }
    }

    #[test]
    fn plan_domination_orders_traces() {
        // If H >= H' then Tr{H B} >= Tr{H' B} for PSD B; spot-check the
        // normalized coordinates preserve that ordering.
        let chain = single_stage(eye(2) * 2.0);
        let big = PosteriorPlan { stages: vec![eye(2) * 1.5] };
        let small = PosteriorPlan { stages: vec![eye(2) * 0.5] };
        let tb = normalize(&big, &chain).unwrap();
        let ts = normalize(&small, &chain).unwrap();
        assert!(tb[0].trace() > ts[0].trace());
        assert!(big.stages[0].trace() > small.stages[0].trace());
    }
}
