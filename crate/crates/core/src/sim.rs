//! Monte-Carlo verification of analytic predictions.
//!
//! Trajectories are sampled with counter-based per-trajectory RNG streams
//! (seed fixed, stream = trajectory index), so the report is bit-identical
//! across runs regardless of how work would be scheduled; accumulation is a
//! fixed-order sequential sum for the same reason.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::comm;
use crate::control::{self, PlayerReduction};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ControlledModel, GaussMarkovModel, ObjectiveKind, QuadraticObjective};
use crate::posterior::{self, SignalingRule};

#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    pub trajectories: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(trajectories: usize, seed: u64) -> Result<Self> {
        if trajectories == 0 {
            return Err(Error::InvalidModel("at least one trajectory required".into()));
        }
        Ok(Self { trajectories, seed })
    }
}

/// One scalar comparison: empirical mean vs analytic prediction.
#[derive(Debug, Clone, Copy)]
pub struct CostStat {
    pub empirical: f64,
    pub std_err: f64,
    pub predicted: f64,
    /// (empirical - predicted) / std_err; 0 when the SE vanishes exactly.
    pub z: f64,
}

fn cost_stat(samples_sum: f64, samples_sumsq: f64, n: usize, predicted: f64) -> CostStat {
    let nf = n as f64;
    let mean = samples_sum / nf;
    let var = (samples_sumsq / nf - mean * mean).max(0.0);
    let se = (var / nf).sqrt();
    let z = if se > 0.0 { (mean - predicted) / se } else { 0.0 };
    CostStat { empirical: mean, std_err: se, predicted, z }
}

/// Per-stage empirical covariance of the receiver's filtered mean.
#[derive(Debug, Clone)]
pub struct PosteriorStat {
    pub empirical: DMatrix<f64>,
    pub std_err: DMatrix<f64>,
    pub predicted: DMatrix<f64>,
    /// Largest |z| over matrix entries (entries with zero SE and zero error
    /// contribute 0).
    pub max_z: f64,
}

/// Accumulates second moments of zero-mean vectors entry by entry.
#[derive(Debug, Clone)]
pub struct PosteriorAccumulator {
    n: usize,
    sum: DMatrix<f64>,
    sumsq: DMatrix<f64>,
}

impl PosteriorAccumulator {
    pub fn new(dim: usize) -> Self {
        Self { n: 0, sum: DMatrix::zeros(dim, dim), sumsq: DMatrix::zeros(dim, dim) }
    }

    pub fn add(&mut self, x: &DVector<f64>) {
        self.n += 1;
        for i in 0..x.len() {
            for j in 0..x.len() {
                let p = x[i] * x[j];
                self.sum[(i, j)] += p;
                self.sumsq[(i, j)] += p * p;
            }
        }
    }

    pub fn finish(&self, predicted: DMatrix<f64>) -> PosteriorStat {
        let nf = self.n as f64;
        let empirical = &self.sum / nf;
        let mut std_err = DMatrix::zeros(self.sum.nrows(), self.sum.ncols());
        let mut max_z: f64 = 0.0;
        for i in 0..self.sum.nrows() {
            for j in 0..self.sum.ncols() {
                let mean = empirical[(i, j)];
                let var = (self.sumsq[(i, j)] / nf - mean * mean).max(0.0) / nf;
                let se = var.sqrt();
                std_err[(i, j)] = se;
                let err = mean - predicted[(i, j)];
                if se > 0.0 {
                    max_z = max_z.max((err / se).abs());
                } else if err.abs() > 0.0 {
                    max_z = f64::INFINITY;
                }
            }
        }
        PosteriorStat { empirical, std_err, predicted, max_z }
    }
}

/// Sample covariance (about the known zero mean) with entrywise standard
/// errors, for externally collected filtered means of one stage.
pub fn empirical_posterior(samples: &[DVector<f64>]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if samples.len() < 2 {
        return Err(Error::InvalidModel("need at least two samples".into()));
    }
    let mut acc = PosteriorAccumulator::new(samples[0].len());
    for s in samples {
        acc.add(s);
    }
    let d = samples[0].len();
    let stat = acc.finish(DMatrix::zeros(d, d));
    Ok((stat.empirical, stat.std_err))
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub trajectories: usize,
    pub seed: u64,
    pub sender: CostStat,
    pub receiver: CostStat,
    pub posterior: Vec<PosteriorStat>,
    /// Largest per-trajectory violation of the completed-square cost identity
    /// (control mode only; 0 in communication mode).
    pub pathwise_residual: f64,
}

fn traj_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn draw(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

fn diag_std(vars: &DVector<f64>) -> DVector<f64> {
    vars.map(|v| v.max(0.0).sqrt())
}

/// Open-loop communication game: sender discloses, receiver filters and plays
/// the static best response each stage.
pub fn simulate_comm(
    model: &GaussMarkovModel,
    rule: &SignalingRule,
    obj_s: &QuadraticObjective,
    obj_r: &QuadraticObjective,
    cfg: &SimConfig,
) -> Result<SimReport> {
    if obj_s.kind != ObjectiveKind::Communication || obj_r.kind != ObjectiveKind::Communication {
        return Err(Error::UnsupportedPolicy(
            "communication simulation needs communication objectives".into(),
        ));
    }
    let chain = model.chain();
    let gains = posterior::filter_gains(rule, &chain)?;
    let f = comm::receiver_best_response(obj_r)?;
    let kappa = model.horizon;
    let m = model.dim;

    // Analytic predictions from the attained posterior covariances.
    let plan = posterior::posterior_covariance(rule, &chain)?;
    let red_s = comm::reduce(obj_s, obj_r, &chain.sigmas)?;
    let red_r = comm::reduce(obj_r, obj_r, &chain.sigmas)?;
    let pred_s: f64 = red_s.constant
        + plan.stages.iter().zip(&red_s.costs).map(|(h, v)| (h * v).trace()).sum::<f64>();
    let pred_r: f64 = red_r.constant
        + plan.stages.iter().zip(&red_r.costs).map(|(h, v)| (h * v).trace()).sum::<f64>();

    let f1 = linalg::sampling_factor(&model.sigma_1);
    let fw = linalg::sampling_factor(&model.sigma_w);
    let stds: Vec<DVector<f64>> = rule.noise_vars.iter().map(diag_std).collect();

    let mut sum_s = 0.0;
    let mut sumsq_s = 0.0;
    let mut sum_r = 0.0;
    let mut sumsq_r = 0.0;
    let mut acc: Vec<PosteriorAccumulator> =
        (0..kappa).map(|_| PosteriorAccumulator::new(m)).collect();

    for t in 0..cfg.trajectories {
        let mut rng = traj_rng(cfg.seed, t);
        let mut x = &f1 * draw(&mut rng, m);
        let mut xhat_pred = DVector::zeros(m);
        let mut cost_s = 0.0;
        let mut cost_r = 0.0;
        for k in 0..kappa {
            let noise = stds[k].component_mul(&draw(&mut rng, m));
            let s = rule.maps[k].transpose() * &x + noise;
            let innov = &s - rule.maps[k].transpose() * &xhat_pred;
            let xhat = &xhat_pred + &gains.gains[k] * innov;
            acc[k].add(&xhat);
            let u = &f * &xhat;
            let es = &obj_s.q * &x - &obj_s.r * &u;
            let er = &obj_r.q * &x - &obj_r.r * &u;
            cost_s += es.norm_squared();
            cost_r += er.norm_squared();
            if k + 1 < kappa {
                let w = &fw * draw(&mut rng, m);
                x = &model.a * x + w;
                xhat_pred = &model.a * xhat;
            }
        }
        sum_s += cost_s;
        sumsq_s += cost_s * cost_s;
        sum_r += cost_r;
        sumsq_r += cost_r * cost_r;
    }

    let posterior = acc
        .into_iter()
        .zip(plan.stages)
        .map(|(a, h)| a.finish(h))
        .collect();
    Ok(SimReport {
        trajectories: cfg.trajectories,
        seed: cfg.seed,
        sender: cost_stat(sum_s, sumsq_s, cfg.trajectories, pred_s),
        receiver: cost_stat(sum_r, sumsq_r, cfg.trajectories, pred_r),
        posterior,
        pathwise_residual: 0.0,
    })
}

fn estimation_penalty(
    reduction: &PlayerReduction,
    ctrl: &ControlledModel,
    plan_stages: &[DMatrix<f64>],
) -> f64 {
    // With u_k = -K_k(xhat_k + xi_k) the completed square leaves
    // sum_k E||K_k(x^o_k - xhat_k)||^2_{Delta_k}; the gain and weight stacks
    // are block diagonal, so only matched-stage error covariances survive.
    let sigmas = ctrl.base.stage_covariances();
    let mut total = 0.0;
    for k in 0..ctrl.base.horizon {
        let err = &sigmas[k] - &plan_stages[k];
        let w = reduction.gains[k].transpose() * &reduction.deltas[k] * &reduction.gains[k];
        total += (w * err).trace();
    }
    total
}

/// Closed-loop control game: the receiver strips the measurable control
/// correction from each signal, filters the control-free process, and applies
/// the transformed certainty-equivalent gains.
pub fn simulate_control(
    ctrl: &ControlledModel,
    rule: &SignalingRule,
    obj_s: &QuadraticObjective,
    obj_r: &QuadraticObjective,
    cfg: &SimConfig,
) -> Result<SimReport> {
    let reduction = control::control_to_comm(obj_s, obj_r, ctrl)?;
    let policy = control::recover_control_inputs(rule, ctrl, &reduction.receiver)?;
    let chain = ctrl.base.chain();
    let plan = posterior::posterior_covariance(rule, &chain)?;
    let kappa = ctrl.base.horizon;
    let m = ctrl.base.dim;

    let pred_s: f64 = reduction.v_o
        + plan.stages.iter().zip(&reduction.costs).map(|(h, v)| (h * v).trace()).sum::<f64>();
    let pred_r =
        estimation_penalty(&reduction.receiver, ctrl, &plan.stages) + reduction.receiver.delta0;

    let f1 = linalg::sampling_factor(&ctrl.base.sigma_1);
    let fw = linalg::sampling_factor(&ctrl.base.sigma_w);
    let stds: Vec<DVector<f64>> = rule.noise_vars.iter().map(diag_std).collect();

    let mut sum_s = 0.0;
    let mut sumsq_s = 0.0;
    let mut sum_r = 0.0;
    let mut sumsq_r = 0.0;
    let mut acc: Vec<PosteriorAccumulator> =
        (0..kappa).map(|_| PosteriorAccumulator::new(m)).collect();
    let mut pathwise_residual: f64 = 0.0;

    for t in 0..cfg.trajectories {
        let mut rng = traj_rng(cfg.seed, t);
        let x1 = &f1 * draw(&mut rng, m);
        let mut x = x1.clone();
        let mut state = policy.start();
        let mut cost_s = 0.0;
        let mut cost_r = 0.0;
        // Completed-square right-hand sides, accumulated pathwise.
        let mut square_s = (x1.transpose() * (&reduction.sender.riccati[0] - &obj_s.q) * &x1)
            [(0, 0)];
        let mut square_r = (x1.transpose()
            * (&reduction.receiver.riccati[0] - &obj_r.q)
            * &x1)[(0, 0)];
        for k in 0..kappa {
            // The sender signals the actual state; the policy removes its own
            // control contribution internally.
            let noise = stds[k].component_mul(&draw(&mut rng, m));
            let s = rule.maps[k].transpose() * &x + noise;
            let u = policy.step(&mut state, &s);
            let drive = &ctrl.base.a * &x + &ctrl.b * &u;
            let w = &fw * draw(&mut rng, m);

            acc[k].add(&state.xhat);
            for (red, sq) in [
                (&reduction.sender, &mut square_s),
                (&reduction.receiver, &mut square_r),
            ] {
                let e = &red.gains[k] * &x + &u;
                *sq += (e.transpose() * &red.deltas[k] * &e)[(0, 0)];
                *sq += 2.0 * (w.transpose() * &red.riccati[k + 1] * &drive)[(0, 0)]
                    + (w.transpose() * &red.riccati[k + 1] * &w)[(0, 0)];
            }

            x = &drive + &w;
            cost_s += (x.transpose() * &obj_s.q * &x)[(0, 0)] + (u.transpose() * &obj_s.r * &u)[(0, 0)];
            cost_r += (x.transpose() * &obj_r.q * &x)[(0, 0)] + (u.transpose() * &obj_r.r * &u)[(0, 0)];
        }
        pathwise_residual = pathwise_residual
            .max((cost_s - square_s).abs())
            .max((cost_r - square_r).abs());
        sum_s += cost_s;
        sumsq_s += cost_s * cost_s;
        sum_r += cost_r;
        sumsq_r += cost_r * cost_r;
    }

    let posterior = acc
        .into_iter()
        .zip(plan.stages)
        .map(|(a, h)| a.finish(h))
        .collect();
    Ok(SimReport {
        trajectories: cfg.trajectories,
        seed: cfg.seed,
        sender: cost_stat(sum_s, sumsq_s, cfg.trajectories, pred_s),
        receiver: cost_stat(sum_r, sumsq_r, cfg.trajectories, pred_r),
        posterior,
        pathwise_residual,
    })
}
