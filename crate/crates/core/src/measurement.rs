//! Noisy or partial sender measurements y_k = C x_k + v_k.
//!
//! Because x_k -> y_{1:k} -> s_{1:k} is a Markov chain of jointly Gaussian
//! vectors, the sender's problem lifts to a perfect-measurement chain SDP over
//! Y_k = cov{E{y_{1:k}|s_{1:k}}} with costs W_k = D_k' V_k D_k, where D_k maps
//! the measurement-history estimate back to the state estimate. The lifted
//! rule is synthesized on the growing-dimension chain and then projected back
//! to an m-dimensional rule emitting E{x_i | s~_{1:i}}.
//!
//! The stacked history is newest-first: y_{1:k} = [y_k; ...; y_1].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ChainModel, GaussMarkovModel, PosteriorPlan};
use crate::posterior::{self, SignalingRule};
use crate::sdp::{self, ChainSdpProblem};

#[derive(Debug, Clone)]
pub struct MeasurementModel {
    pub c: DMatrix<f64>,
    pub sigma_v: DMatrix<f64>,
}

impl MeasurementModel {
    pub fn new(c: DMatrix<f64>, sigma_v: DMatrix<f64>) -> Result<Self> {
        if c.nrows() != c.ncols() {
            return Err(Error::InvalidModel(
                "the observation matrix C must be square (one sensor per state)".into(),
            ));
        }
        if sigma_v.nrows() != c.nrows() || sigma_v.ncols() != c.nrows() {
            return Err(Error::Dimension("Sigma_v must match the sensor dimension".into()));
        }
        let sym = linalg::symmetrize(&sigma_v);
        if (&sigma_v - &sym).norm() > 1e-12 * (1.0 + sigma_v.norm()) || !linalg::is_psd(&sym) {
            return Err(Error::InvalidModel(
                "Sigma_v must be symmetric positive semi-definite".into(),
            ));
        }
        Ok(Self { c, sigma_v: sym })
    }
}

/// Exact second moments of the state/measurement process, the basis for every
/// lifted quantity.
#[derive(Debug, Clone)]
struct SecondMoments {
    m: usize,
    c: DMatrix<f64>,
    sigma_v: DMatrix<f64>,
    sigmas: Vec<DMatrix<f64>>,
    a_pows: Vec<DMatrix<f64>>,
}

impl SecondMoments {
    fn new(model: &GaussMarkovModel, meas: &MeasurementModel) -> Self {
        let mut a_pows = vec![DMatrix::identity(model.dim, model.dim)];
        for _ in 1..model.horizon {
            a_pows.push(&model.a * a_pows.last().unwrap());
        }
        SecondMoments {
            m: model.dim,
            c: meas.c.clone(),
            sigma_v: meas.sigma_v.clone(),
            sigmas: model.stage_covariances(),
            a_pows,
        }
    }

    /// E{x_i x_j'} for 0-based stage indices.
    fn xx(&self, i: usize, j: usize) -> DMatrix<f64> {
        if i >= j {
            &self.a_pows[i - j] * &self.sigmas[j]
        } else {
            self.xx(j, i).transpose()
        }
    }

    /// E{y_i y_j'}.
    fn y_pair(&self, i: usize, j: usize) -> DMatrix<f64> {
        let mut out = &self.c * self.xx(i, j) * self.c.transpose();
        if i == j {
            out += &self.sigma_v;
        }
        out
    }

    /// E{y_{1:i+1} y_{1:j+1}'} with newest-first stacking.
    fn yy(&self, i: usize, j: usize) -> DMatrix<f64> {
        let m = self.m;
        let mut out = DMatrix::zeros(m * (i + 1), m * (j + 1));
        for r in 0..=i {
            for c in 0..=j {
                out.view_mut((r * m, c * m), (m, m))
                    .copy_from(&self.y_pair(i - r, j - c));
            }
        }
        out
    }

    /// E{x_k y_{1:j+1}'}.
    fn xy(&self, k: usize, j: usize) -> DMatrix<f64> {
        let m = self.m;
        let mut out = DMatrix::zeros(m, m * (j + 1));
        for c in 0..=j {
            out.view_mut((0, c * m), (m, m))
                .copy_from(&(self.xx(k, j - c) * self.c.transpose()));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct LiftedProblem {
    /// Growing-dimension chain over the measurement histories.
    pub chain: ChainModel,
    /// D_k = E{x_k y_{1:k}'} E{y_{1:k} y_{1:k}'}^dagger (m x mk).
    pub d: Vec<DMatrix<f64>>,
    /// Lifted stage costs W_k = D_k' V_k D_k.
    pub costs: Vec<DMatrix<f64>>,
    pub meas: MeasurementModel,
    moments: SecondMoments,
}

/// Lift a perfect-measurement objective to the measurement history.
pub fn lift(
    model: &GaussMarkovModel,
    meas: &MeasurementModel,
    costs: &[DMatrix<f64>],
) -> Result<LiftedProblem> {
    let m = model.dim;
    if meas.c.nrows() != m {
        return Err(Error::Dimension("sensor dimension must match the state".into()));
    }
    if costs.len() != model.horizon {
        return Err(Error::Dimension("one cost matrix per stage required".into()));
    }
    for v in costs {
        if v.nrows() != m || v.ncols() != m {
            return Err(Error::Dimension("cost matrices must be m x m".into()));
        }
    }
    let mom = SecondMoments::new(model, meas);
    let kappa = model.horizon;

    let mut covs = Vec::with_capacity(kappa);
    let mut d = Vec::with_capacity(kappa);
    let mut w = Vec::with_capacity(kappa);
    for k in 0..kappa {
        let p = linalg::symmetrize(&mom.yy(k, k));
        let dk = mom.xy(k, k) * linalg::pinv_psd(&p);
        w.push(linalg::symmetrize(&(dk.transpose() * &costs[k] * &dk)));
        d.push(dk);
        covs.push(p);
    }

    // Chain transitions: newest-block predictor on top of an identity shift.
    let mut trans = Vec::with_capacity(kappa.saturating_sub(1));
    let mut noise = vec![covs[0].clone()];
    for k in 1..kappa {
        let prev = m * k;
        let pred = {
            // E{y_{k+1} y_{1:k}'} E{y_{1:k} y_{1:k}'}^dagger
            let cross = {
                let mut out = DMatrix::zeros(m, prev);
                for c in 0..k {
                    out.view_mut((0, c * m), (m, m)).copy_from(&mom.y_pair(k, k - 1 - c));
                }
                out
            };
            cross * linalg::pinv_psd(&covs[k - 1])
        };
        let mut a = DMatrix::zeros(m * (k + 1), prev);
        a.view_mut((0, 0), (m, prev)).copy_from(&pred);
        a.view_mut((m, 0), (prev, prev)).copy_from(&DMatrix::identity(prev, prev));
        let innov = linalg::symmetrize(&(&covs[k] - &a * &covs[k - 1] * a.transpose()));
        trans.push(a);
        noise.push(innov);
    }
    let chain = ChainModel::from_parts(trans, noise)?;
    Ok(LiftedProblem { chain, d, costs: w, meas: meas.clone(), moments: mom })
}

#[derive(Debug, Clone)]
pub struct LiftedSolution {
    /// Optimal lifted plan Y*_{1:kappa}.
    pub plan: PosteriorPlan,
    /// Auxiliary rule on the stacked measurement history.
    pub rule: SignalingRule,
    pub objective: f64,
    pub newton_steps: usize,
    pub gap: f64,
}

pub fn solve_lifted(lifted: &LiftedProblem, tol: f64) -> Result<LiftedSolution> {
    let problem = ChainSdpProblem::new(lifted.chain.clone(), lifted.costs.clone())?;
    let sol = sdp::solve(&problem, tol)?;
    let rule = posterior::synthesize(&sol.plan, &lifted.chain)?;
    Ok(LiftedSolution {
        plan: sol.plan,
        rule,
        objective: sol.objective,
        newton_steps: sol.newton_steps,
        gap: sol.gap,
    })
}

/// An m-dimensional rule in the original signal space: run the auxiliary rule
/// on the measurement history, then emit eta_i = G_i [s~_i; ...; s~_1] =
/// E{x_i | s~_{1:i}}.
#[derive(Debug, Clone)]
pub struct ProjectedRule {
    pub lifted: SignalingRule,
    /// G_i combining the newest-first stacked auxiliary signals (m x sum m j).
    pub combine: Vec<DMatrix<f64>>,
}

/// Covariance of the newest-first stacked auxiliary signal [s~_{i+1..1}] and
/// its cross-moment with x_k, from the lifted rule's maps and noise.
fn aux_signal_moments(
    rule: &SignalingRule,
    mom: &SecondMoments,
    upto: usize,
) -> (Vec<usize>, DMatrix<f64>) {
    // offsets of s~_j within the stack (j = upto..1, newest first)
    let dims: Vec<usize> = (0..=upto).map(|j| rule.maps[j].ncols()).collect();
    let total: usize = dims.iter().sum();
    let mut cov = DMatrix::zeros(total, total);
    let mut off_i = 0;
    for ii in (0..=upto).rev() {
        let li = &rule.maps[ii];
        let mut off_j = 0;
        for jj in (0..=upto).rev() {
            let lj = &rule.maps[jj];
            let mut blk = li.transpose() * mom.yy(ii, jj) * lj;
            if ii == jj {
                blk += DMatrix::from_diagonal(&rule.noise_vars[ii]);
            }
            cov.view_mut((off_i, off_j), (blk.nrows(), blk.ncols())).copy_from(&blk);
            off_j += lj.ncols();
        }
        off_i += li.ncols();
    }
    (dims, cov)
}

fn x_aux_cross(rule: &SignalingRule, mom: &SecondMoments, k: usize, upto: usize) -> DMatrix<f64> {
    let m = mom.m;
    let total: usize = (0..=upto).map(|j| rule.maps[j].ncols()).sum();
    let mut out = DMatrix::zeros(m, total);
    let mut off = 0;
    for jj in (0..=upto).rev() {
        let lj = &rule.maps[jj];
        let blk = mom.xy(k, jj) * lj;
        out.view_mut((0, off), (m, lj.ncols())).copy_from(&blk);
        off += lj.ncols();
    }
    out
}

pub fn project_rule(rule: &SignalingRule, lifted: &LiftedProblem) -> Result<ProjectedRule> {
    if rule.horizon() != lifted.chain.horizon() {
        return Err(Error::Dimension("rule horizon does not match the lifted chain".into()));
    }
    let mom = &lifted.moments;
    let mut combine = Vec::with_capacity(rule.horizon());
    for i in 0..rule.horizon() {
        let (_, cov) = aux_signal_moments(rule, mom, i);
        let cross = x_aux_cross(rule, mom, i, i);
        combine.push(cross * linalg::pinv_psd(&linalg::symmetrize(&cov)));
    }
    Ok(ProjectedRule { lifted: rule.clone(), combine })
}

/// Posterior covariances H_k = cov{E{x_k | eta_1, ..., eta_k}} attained by a
/// projected rule, computed from the exact joint Gaussian moments.
pub fn projected_posterior(proj: &ProjectedRule, lifted: &LiftedProblem) -> Vec<DMatrix<f64>> {
    let mom = &lifted.moments;
    let kappa = proj.lifted.horizon();
    let m = mom.m;
    let mut out = Vec::with_capacity(kappa);
    for k in 0..kappa {
        // Stack w = [eta_1; ...; eta_k]; eta_i = G_i (newest-first s~_{1:i}).
        let (dims, aux_cov) = aux_signal_moments(&proj.lifted, mom, k);
        let total: usize = dims.iter().sum();
        // Selector from the full stack (newest-first over 1..=k+1 stages) to
        // the newest-first stack over 1..=i+1: drop the leading blocks.
        let mut gamma = DMatrix::zeros(m * (k + 1), total);
        for i in 0..=k {
            let skip: usize = ((i + 1)..=k).map(|j| dims[j]).sum();
            let width: usize = total - skip;
            let g = &proj.combine[i];
            gamma.view_mut((i * m, skip), (m, width)).copy_from(g);
        }
        let w_cov = &gamma * &aux_cov * gamma.transpose();
        let x_cross = x_aux_cross(&proj.lifted, mom, k, k) * gamma.transpose();
        let h = &x_cross * linalg::pinv_psd(&linalg::symmetrize(&w_cov)) * x_cross.transpose();
        out.push(linalg::symmetrize(&h));
    }
    out
}

/// State-space posterior implied by a lifted plan: H_k = D_k Y_k D_k'.
pub fn state_posterior(plan: &PosteriorPlan, lifted: &LiftedProblem) -> Vec<DMatrix<f64>> {
    plan.stages
        .iter()
        .zip(&lifted.d)
        .map(|(y, d)| linalg::symmetrize(&(d * y * d.transpose())))
        .collect()
}

/// Sample the stacked-history trajectory of signals for one realization of
/// the measurement sequence; used by the simulator.
pub fn aux_signal(
    rule: &SignalingRule,
    history_newest_first: &DVector<f64>,
    stage: usize,
    noise: &DVector<f64>,
) -> DVector<f64> {
    rule.maps[stage].transpose() * history_newest_first + noise
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eye(m: usize) -> DMatrix<f64> {
        DMatrix::identity(m, m)
    }

    fn scalar_model(a: f64, sw: f64, s1: f64, kappa: usize) -> GaussMarkovModel {
        GaussMarkovModel::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, sw),
            DMatrix::from_element(1, 1, s1),
            kappa,
        )
        .unwrap()
    }

    #[test]
    fn rejects_rectangular_sensor() {
        assert!(MeasurementModel::new(DMatrix::zeros(2, 3), eye(2)).is_err());
    }

    #[test]
    fn perfect_measurement_selects_newest_block() {
        let a = DMatrix::from_row_slice(2, 2, &[0.8, 0.1, 0.0, 0.9]);
        let model = GaussMarkovModel::new(a, eye(2), eye(2), 3).unwrap();
        let meas = MeasurementModel::new(eye(2), DMatrix::zeros(2, 2)).unwrap();
        let v = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 0.0]);
        let lifted = lift(&model, &meas, &vec![v.clone(); 3]).unwrap();
        for k in 0..3 {
            let mut sel = DMatrix::zeros(2, 2 * (k + 1));
            sel.view_mut((0, 0), (2, 2)).copy_from(&eye(2));
            assert!((&lifted.d[k] - &sel).norm() < 1e-8, "stage {k}");
            let lead = lifted.costs[k].view((0, 0), (2, 2)).into_owned();
            assert!((lead - &v).norm() < 1e-8);
            assert!(lifted.costs[k].view((2, 0), (2 * (k + 1) - 2, 2 * (k + 1))).norm() < 1e-8 || k == 0);
        }
    }

    #[test]
    fn uninformative_sensor_kills_the_cost() {
        let model = scalar_model(1.0, 1.0, 1.0, 2);
        let meas = MeasurementModel::new(DMatrix::zeros(1, 1), eye(1)).unwrap();
        let lifted = lift(&model, &meas, &vec![-eye(1); 2]).unwrap();
        for k in 0..2 {
            assert!(lifted.d[k].norm() < 1e-12);
            assert!(lifted.costs[k].norm() < 1e-12);
        }
        let sol = solve_lifted(&lifted, 1e-8).unwrap();
        assert!(sol.objective.abs() < 1e-9);
    }

    #[test]
    fn scalar_noisy_moments() {
        let model = scalar_model(1.0, 1.0, 1.0, 1);
        let meas = MeasurementModel::new(eye(1), eye(1)).unwrap();
        let lifted = lift(&model, &meas, &[-eye(1)]).unwrap();
        assert!((lifted.d[0][(0, 0)] - 0.5).abs() < 1e-12);
        assert!((lifted.costs[0][(0, 0)] + 0.25).abs() < 1e-12);
        let sol = solve_lifted(&lifted, 1e-8).unwrap();
        // Y* = cov{y} = 2, value = -1/2.
        assert!((sol.plan.stages[0][(0, 0)] - 2.0).abs() < 1e-4);
        assert!((sol.objective + 0.5).abs() < 1e-6);
    }

    #[test]
    fn perfect_measurement_value_matches_direct_solve() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.7]);
        let model = GaussMarkovModel::new(a, eye(2), eye(2), 2).unwrap();
        let v = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, -1.0, -0.2]);
        let meas = MeasurementModel::new(eye(2), DMatrix::zeros(2, 2)).unwrap();
        let lifted = lift(&model, &meas, &vec![v.clone(); 2]).unwrap();
        let sol = solve_lifted(&lifted, 1e-8).unwrap();
        let direct = sdp::solve(
            &ChainSdpProblem::new(model.chain(), vec![v.clone(), v]).unwrap(),
            1e-8,
        )
        .unwrap();
        assert!(
            (sol.objective - direct.objective).abs() < 1e-6,
            "{} vs {}",
            sol.objective,
            direct.objective
        );
    }

    #[test]
    fn markov_chain_lemma_on_random_triples() {
        // x -> y -> s with y = F x + n1, s = G y + n2: the two-hop estimator
        // factorization must hold exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let (nx, ny, ns) = (3, 2, 2);
            let gx = DMatrix::from_fn(nx, nx, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let sx = &gx * gx.transpose() + eye(nx) * 0.2;
            let f = DMatrix::from_fn(ny, nx, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let g = DMatrix::from_fn(ns, ny, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let n1 = eye(ny) * (0.1 + rng.gen::<f64>());
            let n2 = eye(ns) * (0.1 + rng.gen::<f64>());
            let syy = &f * &sx * f.transpose() + n1;
            let sss = &g * &syy * g.transpose() + n2;
            let sxy = &sx * f.transpose();
            let sxs = &sxy * g.transpose();
            let sys = &syy * g.transpose();
            let direct = &sxs * linalg::pinv_psd(&sss);
            let two_hop = &sxy * linalg::pinv_psd(&syy) * &sys * linalg::pinv_psd(&sss);
            assert!((direct - two_hop).norm() < 1e-8);
        }
    }

    #[test]
    fn projected_rule_closed_forms() {
        // Scalar noisy instance: full lifted disclosure projects to y/2.
        let model = scalar_model(1.0, 1.0, 1.0, 1);
        let meas = MeasurementModel::new(eye(1), eye(1)).unwrap();
        let lifted = lift(&model, &meas, &[-eye(1)]).unwrap();
        let sol = solve_lifted(&lifted, 1e-8).unwrap();
        let proj = project_rule(&sol.rule, &lifted).unwrap();
        // eta_1(s~_1) with s~_1 = l * y: G_1 * l = 1/2.
        let l = sol.rule.maps[0][(0, 0)];
        assert!((proj.combine[0][(0, 0)] * l - 0.5).abs() < 1e-6);
    }

    #[test]
    fn projected_zero_rule_is_zero() {
        let model = scalar_model(1.0, 1.0, 1.0, 2);
        let meas = MeasurementModel::new(eye(1), eye(1)).unwrap();
        let lifted = lift(&model, &meas, &vec![-eye(1); 2]).unwrap();
        let proj = project_rule(&SignalingRule::zero(&lifted.chain), &lifted).unwrap();
        for g in &proj.combine {
            assert!(g.norm() < 1e-12);
        }
    }

    #[test]
    fn posterior_equivalence_under_projection() {
        // H_k from the projected rule equals D_k Y_k D_k' for random plans.
        let model = scalar_model(0.9, 0.5, 1.0, 3);
        let meas = MeasurementModel::new(eye(1), eye(1) * 0.5).unwrap();
        let lifted = lift(&model, &meas, &vec![-eye(1); 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..5 {
            let plan = posterior::random_feasible_plan(&lifted.chain, &mut rng);
            let rule = posterior::synthesize(&plan, &lifted.chain).unwrap();
            let proj = project_rule(&rule, &lifted).unwrap();
            let via_d = state_posterior(&plan, &lifted);
            let via_proj = projected_posterior(&proj, &lifted);
            for k in 0..3 {
                assert!(
                    (&via_d[k] - &via_proj[k]).norm() < 1e-8,
                    "stage {k}: {} vs {}",
                    via_d[k][(0, 0)],
                    via_proj[k][(0, 0)]
                );
            }
        }
    }

    #[test]
    fn noisier_sensor_never_helps() {
        let model = scalar_model(1.0, 1.0, 1.0, 2);
        let mut last = f64::NEG_INFINITY;
        for sv in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let meas = MeasurementModel::new(eye(1), eye(1) * sv).unwrap();
            let lifted = lift(&model, &meas, &vec![-eye(1); 2]).unwrap();
            let sol = solve_lifted(&lifted, 1e-8).unwrap();
            assert!(
                sol.objective >= last - 1e-7,
                "value decreased from {last} to {} at sigma_v = {sv}",
                sol.objective
            );
            last = sol.objective;
        }
    }

    #[test]
    fn lifted_plan_round_trips_through_rule() {
        let model = scalar_model(0.8, 1.0, 1.0, 3);
        let meas = MeasurementModel::new(eye(1), eye(1)).unwrap();
        let lifted = lift(&model, &meas, &vec![-eye(1); 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let plan = posterior::random_feasible_plan(&lifted.chain, &mut rng);
        let rule = posterior::synthesize(&plan, &lifted.chain).unwrap();
        let back = posterior::posterior_covariance(&rule, &lifted.chain).unwrap();
        for k in 0..3 {
            let tol = 1e-8 * (1.0 + lifted.chain.sigmas[k].norm());
            assert!((&back.stages[k] - &plan.stages[k]).norm() < tol);
        }
    }

    #[test]
    fn aux_signal_is_affine_in_history() {
        let model = scalar_model(1.0, 1.0, 1.0, 2);
        let meas = MeasurementModel::new(eye(1), eye(1)).unwrap();
        let lifted = lift(&model, &meas, &vec![-eye(1); 2]).unwrap();
        let rule = posterior::synthesize(
            &PosteriorPlan { stages: lifted.chain.sigmas.clone() },
            &lifted.chain,
        )
        .unwrap();
        let hist = DVector::from_row_slice(&[1.5, -0.5]);
        let noise = DVector::zeros(2);
        let s = aux_signal(&rule, &hist, 1, &noise);
        let expect = rule.maps[1].transpose() * &hist;
        assert!((s - expect).norm() < 1e-14);
    }
}
