//! LQG control game reduced to communication form.
//!
//! Completing the square with the backward Riccati recursion turns each
//! player's closed-loop cost into sum_k E||K_k x_k + u_k||^2_{Delta_k} plus a
//! rule-independent constant. A change of variables to the control-free
//! process x^o and stacked transformed inputs makes the sender's problem a
//! chain SDP over the posterior covariances of x^o with stage costs V_k, so
//! the communication machinery applies unchanged. The receiver's equilibrium
//! inputs are recovered by inverting the input transformation online.

use nalgebra::{DMatrix, DVector};

use crate::comm::{self, ReducedObjective, SolveReport};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ControlledModel, ObjectiveKind, QuadraticObjective};
use crate::posterior::{self, FilterGains, SignalingRule};

/// One player's Riccati data. Stage indices are 1-based in the math; vectors
/// here are 0-based with `gains[k]` = K_{k+1}.
#[derive(Debug, Clone)]
pub struct PlayerReduction {
    /// Feedback gains K_{1:kappa} (r x m).
    pub gains: Vec<DMatrix<f64>>,
    /// Curvatures Delta_{1:kappa} = B' Qt_{k+1} B + R (r x r, PD).
    pub deltas: Vec<DMatrix<f64>>,
    /// Riccati matrices Qt_{1:kappa+1}; the last entry equals Q.
    pub riccati: Vec<DMatrix<f64>>,
    /// Rule-independent cost floor delta_0.
    pub delta0: f64,
}

/// Backward Riccati sweep for one player's cost
/// sum_k x_{k+1}' Q x_{k+1} + u_k' R u_k.
pub fn riccati_reduce(
    obj: &QuadraticObjective,
    ctrl: &ControlledModel,
) -> Result<PlayerReduction> {
    if obj.kind != ObjectiveKind::Control {
        return Err(Error::UnsupportedPolicy("riccati reduction needs a control objective".into()));
    }
    let m = ctrl.base.dim;
    let r = ctrl.input_dim();
    if obj.q.nrows() != m || obj.r.nrows() != r {
        return Err(Error::Dimension("objective dimensions do not match the model".into()));
    }
    let kappa = ctrl.base.horizon;
    let a = &ctrl.base.a;
    let b = &ctrl.b;

    let mut riccati = vec![DMatrix::zeros(0, 0); kappa + 1];
    let mut gains = vec![DMatrix::zeros(0, 0); kappa];
    let mut deltas = vec![DMatrix::zeros(0, 0); kappa];
    riccati[kappa] = obj.q.clone();
    for k in (0..kappa).rev() {
        let qt_next = &riccati[k + 1];
        let delta = linalg::symmetrize(&(b.transpose() * qt_next * b + &obj.r));
        let chol = nalgebra::Cholesky::new(delta.clone())
            .ok_or_else(|| Error::Numeric(format!("Delta at stage {} is singular", k + 1)))?;
        let gain = chol.solve(&(b.transpose() * qt_next * a));
        let closed = qt_next - qt_next * b * &gain;
        riccati[k] = linalg::symmetrize(&(&obj.q + a.transpose() * closed * a));
        gains[k] = gain;
        deltas[k] = delta;
    }

    // The initial state carries no own stage cost, so only the propagated part
    // of Qt_1 contributes to the floor.
    let mut delta0 = ((&riccati[0] - &obj.q) * &ctrl.base.sigma_1).trace();
    for k in 0..kappa {
        delta0 += (&riccati[k + 1] * &ctrl.base.sigma_w).trace();
    }
    Ok(PlayerReduction { gains, deltas, riccati, delta0 })
}

/// Both players' reductions plus the stacked objects that produce the
/// communication-form stage costs.
#[derive(Debug, Clone)]
pub struct ControlReduction {
    pub sender: PlayerReduction,
    pub receiver: PlayerReduction,
    /// Block unit upper triangular input transformations (stage kappa first).
    pub phi_s: DMatrix<f64>,
    pub phi_r: DMatrix<f64>,
    /// M_S = Phi_S Phi_R^{-1} K_R.
    pub m_s: DMatrix<f64>,
    /// Xi = M_S' Delta_S M_S - M_S' Delta_S K_S - K_S' Delta_S M_S.
    pub xi: DMatrix<f64>,
    /// Stage costs V_{1:kappa} pairing with the control-free posterior plan.
    pub costs: Vec<DMatrix<f64>>,
    /// Rule-independent constant in the sender's reduced cost.
    pub v_o: f64,
}

/// Stacks stage kappa in the top-left block; stage k occupies offset
/// (kappa - k) * width.
fn stack_offset(kappa: usize, k: usize, width: usize) -> usize {
    (kappa - 1 - k) * width
}

fn block_diag(blocks_stage_major: &[DMatrix<f64>]) -> DMatrix<f64> {
    // Input is stage-ordered 1..kappa; the stacked convention reverses it.
    let kappa = blocks_stage_major.len();
    let rows: usize = blocks_stage_major.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks_stage_major.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut ro, mut co) = (0, 0);
    for k in (0..kappa).rev() {
        let b = &blocks_stage_major[k];
        out.view_mut((ro, co), (b.nrows(), b.ncols())).copy_from(b);
        ro += b.nrows();
        co += b.ncols();
    }
    out
}

fn phi_matrix(red: &PlayerReduction, ctrl: &ControlledModel, a_pows: &[DMatrix<f64>]) -> DMatrix<f64> {
    let kappa = ctrl.base.horizon;
    let r = ctrl.input_dim();
    let mut phi = DMatrix::identity(r * kappa, r * kappa);
    for k in 1..kappa {
        for l in 0..k {
            let row = stack_offset(kappa, k, r);
            let col = stack_offset(kappa, l, r);
            let blk = &red.gains[k] * &a_pows[k - l - 1] * &ctrl.b;
            phi.view_mut((row, col), (r, r)).copy_from(&blk);
        }
    }
    phi
}

/// Build the sender's communication-form stage costs and constant.
pub fn control_to_comm(
    obj_s: &QuadraticObjective,
    obj_r: &QuadraticObjective,
    ctrl: &ControlledModel,
) -> Result<ControlReduction> {
    let sender = riccati_reduce(obj_s, ctrl)?;
    let receiver = riccati_reduce(obj_r, ctrl)?;
    let kappa = ctrl.base.horizon;
    let m = ctrl.base.dim;

    let mut a_pows = vec![DMatrix::identity(m, m)];
    for _ in 1..kappa.max(1) {
        a_pows.push(&ctrl.base.a * a_pows.last().unwrap());
    }

    let phi_s = phi_matrix(&sender, ctrl, &a_pows);
    let phi_r = phi_matrix(&receiver, ctrl, &a_pows);
    let k_s = block_diag(&sender.gains);
    let k_r = block_diag(&receiver.gains);
    let delta_s = block_diag(&sender.deltas);

    let phi_r_inv = phi_r
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Numeric("Phi_R is singular".into()))?;
    let m_s = &phi_s * phi_r_inv * &k_r;
    let xi = linalg::symmetrize(
        &(m_s.transpose() * &delta_s * &m_s
            - m_s.transpose() * &delta_s * &k_s
            - k_s.transpose() * &delta_s * &m_s),
    );

    // V_k folds the cross-stage posterior blocks E{xhat_i xhat_k'} = A^{i-k} H_k
    // into a per-stage cost.
    let xi_block = |k: usize, i: usize| -> DMatrix<f64> {
        xi.view((stack_offset(kappa, k, m), stack_offset(kappa, i, m)), (m, m))
            .into_owned()
    };
    let mut costs = Vec::with_capacity(kappa);
    for k in 0..kappa {
        let mut v = xi_block(k, k);
        for i in (k + 1)..kappa {
            let ap = &a_pows[i - k];
            v += xi_block(k, i) * ap + ap.transpose() * xi_block(i, k);
        }
        costs.push(linalg::symmetrize(&v));
    }

    // Stacked covariance of the control-free process, cross blocks
    // E{x^o_k (x^o_l)'} = A^{k-l} Sigma_l for k >= l.
    let sigmas = ctrl.base.stage_covariances();
    let mut cov = DMatrix::zeros(m * kappa, m * kappa);
    for k in 0..kappa {
        for l in 0..=k {
            let blk = &a_pows[k - l] * &sigmas[l];
            cov.view_mut((stack_offset(kappa, k, m), stack_offset(kappa, l, m)), (m, m))
                .copy_from(&blk);
            if l < k {
                cov.view_mut((stack_offset(kappa, l, m), stack_offset(kappa, k, m)), (m, m))
                    .copy_from(&blk.transpose());
            }
        }
    }
    let v_o = (&cov * k_s.transpose() * &delta_s * &k_s).trace() + sender.delta0;

    Ok(ControlReduction { sender, receiver, phi_s, phi_r, m_s, xi, costs, v_o })
}

/// The receiver's equilibrium control policy for a committed linear-plus-noise
/// rule: filter the control-free part of the signal, apply the transformed
/// gain, and undo the input transformation through the tracked control
/// response xi_k (xi_1 = 0, xi_{k+1} = A xi_k + B u_k, x_k = x^o_k + xi_k).
#[derive(Debug, Clone)]
pub struct ReceiverControlPolicy {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    maps: Vec<DMatrix<f64>>,
    filter: FilterGains,
    k_r: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct ReceiverControlState {
    /// Accumulated control response of the state.
    pub xi: DVector<f64>,
    /// Predicted control-free estimate A xhat_{k-1|k-1}.
    pub xhat_pred: DVector<f64>,
    /// Posterior control-free estimate after the last step.
    pub xhat: DVector<f64>,
    stage: usize,
}

pub fn recover_control_inputs(
    rule: &SignalingRule,
    ctrl: &ControlledModel,
    receiver: &PlayerReduction,
) -> Result<ReceiverControlPolicy> {
    let chain = ctrl.base.chain();
    if rule.horizon() != chain.horizon() {
        return Err(Error::Dimension("rule horizon does not match the model".into()));
    }
    for l in &rule.maps {
        if l.nrows() != ctrl.base.dim {
            return Err(Error::UnsupportedPolicy(
                "control recovery requires a memoryless state-space rule".into(),
            ));
        }
    }
    let filter = posterior::filter_gains(rule, &chain)?;
    Ok(ReceiverControlPolicy {
        a: ctrl.base.a.clone(),
        b: ctrl.b.clone(),
        maps: rule.maps.clone(),
        filter,
        k_r: receiver.gains.clone(),
    })
}

impl ReceiverControlPolicy {
    pub fn start(&self) -> ReceiverControlState {
        let m = self.a.nrows();
        ReceiverControlState {
            xi: DVector::zeros(m),
            xhat_pred: DVector::zeros(m),
            xhat: DVector::zeros(m),
            stage: 0,
        }
    }

    /// Consume the stage-k signal and return the receiver's input u_k.
    pub fn step(&self, state: &mut ReceiverControlState, signal: &DVector<f64>) -> DVector<f64> {
        let k = state.stage;
        // Strip the sigma-s_{1:k-1}-measurable control correction.
        let s_free = signal - self.maps[k].transpose() * &state.xi;
        let innovation = &s_free - self.maps[k].transpose() * &state.xhat_pred;
        state.xhat = &state.xhat_pred + &self.filter.gains[k] * innovation;
        // u^o_k = -K_{R,k} xhat^o_k, undone through xi_k.
        let u = -&self.k_r[k] * (&state.xhat + &state.xi);
        state.xi = &self.a * &state.xi + &self.b * &u;
        state.xhat_pred = &self.a * &state.xhat;
        state.stage += 1;
        u
    }
}

#[derive(Debug, Clone)]
pub struct ControlSolveReport {
    pub comm: SolveReport,
    pub reduction: ControlReduction,
}

/// End-to-end pipeline: reduce the control game, solve the chain SDP over the
/// control-free posterior covariances, synthesize the rule.
pub fn solve_control(
    obj_s: &QuadraticObjective,
    obj_r: &QuadraticObjective,
    ctrl: &ControlledModel,
    tol: f64,
) -> Result<ControlSolveReport> {
    let reduction = control_to_comm(obj_s, obj_r, ctrl)?;
    let chain = ctrl.base.chain();
    let reduced = ReducedObjective {
        costs: reduction.costs.clone(),
        constant: reduction.v_o,
        m_s: reduction.m_s.clone(),
    };
    let comm = comm::solve_reduced(&reduced, &chain, tol)?;
    Ok(ControlSolveReport { comm, reduction })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussMarkovModel;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eye(m: usize) -> DMatrix<f64> {
        DMatrix::identity(m, m)
    }

    fn scalar_ctrl(a: f64, b: f64, sw: f64, s1: f64, kappa: usize) -> ControlledModel {
        let base = GaussMarkovModel::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, sw),
            DMatrix::from_element(1, 1, s1),
            kappa,
        )
        .unwrap();
        ControlledModel::new(base, DMatrix::from_element(1, 1, b)).unwrap()
    }

    fn ctrl_obj(q: DMatrix<f64>, r: DMatrix<f64>) -> QuadraticObjective {
        QuadraticObjective::control(q, r).unwrap()
    }

    #[test]
    fn riccati_single_stage_base_case() {
        let ctrl = scalar_ctrl(1.0, 1.0, 1.0, 1.0, 1);
        let red = riccati_reduce(&ctrl_obj(eye(1), eye(1)), &ctrl).unwrap();
        // K_1 = (B'QB + R)^{-1} B'QA = 1/2
        assert!((red.gains[0][(0, 0)] - 0.5).abs() < 1e-14);
        assert!((red.deltas[0][(0, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn riccati_uncontrollable_input() {
        let ctrl = scalar_ctrl(1.0, 0.0, 1.0, 1.0, 3);
        let red = riccati_reduce(&ctrl_obj(eye(1), eye(1) * 2.0), &ctrl).unwrap();
        for k in 0..3 {
            assert_eq!(red.gains[k][(0, 0)], 0.0);
            assert!((red.deltas[k][(0, 0)] - 2.0).abs() < 1e-14);
        }
        // Qt accumulates A-weighted Q: Qt_3 = 2, Qt_2 = 3, Qt_1 = 4
        assert!((red.riccati[0][(0, 0)] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn riccati_scalar_hand_recursion() {
        let ctrl = scalar_ctrl(1.0, 1.0, 1.0, 1.0, 2);
        let red = riccati_reduce(&ctrl_obj(eye(1), eye(1)), &ctrl).unwrap();
        assert!((red.riccati[1][(0, 0)] - 1.5).abs() < 1e-14);
        assert!((red.gains[0][(0, 0)] - 0.6).abs() < 1e-14);
        assert!((red.deltas[0][(0, 0)] - 2.5).abs() < 1e-14);
        assert!((red.gains[1][(0, 0)] - 0.5).abs() < 1e-14);
        assert!((red.deltas[1][(0, 0)] - 2.0).abs() < 1e-14);
        // delta0 = (Qt_1 - Q) Sigma_1 + Qt_2 Sigma_w + Qt_3 Sigma_w
        assert!((red.riccati[0][(0, 0)] - 1.6).abs() < 1e-14);
        assert!((red.delta0 - 3.1).abs() < 1e-12);
    }

    #[test]
    fn delta0_is_uncontrolled_cost_when_b_zero() {
        // With B = 0 and u = 0 the total cost is E[x_2^2 + x_3^2] = 2 + 3.
        let ctrl = scalar_ctrl(1.0, 0.0, 1.0, 1.0, 2);
        let red = riccati_reduce(&ctrl_obj(eye(1), eye(1)), &ctrl).unwrap();
        assert!((red.delta0 - 5.0).abs() < 1e-12);
    }

    #[test]
    fn phi_is_unit_upper_triangular() {
        let ctrl = scalar_ctrl(0.8, 0.5, 1.0, 1.0, 4);
        let red = control_to_comm(
            &ctrl_obj(eye(1), eye(1) * 2.0),
            &ctrl_obj(eye(1), eye(1)),
            &ctrl,
        )
        .unwrap();
        for phi in [&red.phi_s, &red.phi_r] {
            for i in 0..4 {
                assert_eq!(phi[(i, i)], 1.0);
                for j in 0..i {
                    assert_eq!(phi[(i, j)], 0.0);
                }
            }
            assert!((phi.determinant() - 1.0).abs() < 1e-12);
        }
        // Stage kappa row carries K_kappa A^{c-2} B entries.
        let k4 = red.receiver.gains[3][(0, 0)];
        assert!((red.phi_r[(0, 1)] - k4 * 0.5).abs() < 1e-12);
        assert!((red.phi_r[(0, 2)] - k4 * 0.8 * 0.5).abs() < 1e-12);
        assert!((red.phi_r[(0, 3)] - k4 * 0.8 * 0.8 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn aligned_game_gives_nsd_xi() {
        let ctrl = scalar_ctrl(1.0, 1.0, 1.0, 1.0, 3);
        let obj = ctrl_obj(eye(1), eye(1));
        let red = control_to_comm(&obj, &obj, &ctrl).unwrap();
        // M_S = K_S, so Xi = -K_S' Delta_S K_S <= 0.
        let k_s = block_diag(&red.sender.gains);
        let d_s = block_diag(&red.sender.deltas);
        let expect = -(k_s.transpose() * d_s * k_s);
        assert!((&red.xi - expect).norm() < 1e-12);
        assert!(linalg::spectral_norm(&red.xi) > 0.0);
        assert!(linalg::psd_margin(&(-&red.xi)) > -1e-12);
    }

    #[test]
    fn single_stage_cost_is_diagonal_block() {
        let ctrl = scalar_ctrl(1.0, 1.0, 0.5, 2.0, 1);
        let red = control_to_comm(
            &ctrl_obj(eye(1) * 2.0, eye(1)),
            &ctrl_obj(eye(1), eye(1)),
            &ctrl,
        )
        .unwrap();
        assert_eq!(red.costs.len(), 1);
        assert!((red.costs[0][(0, 0)] - red.xi[(0, 0)]).abs() < 1e-14);
        // v_o = Sigma_1 K_S' Delta_S K_S + delta_{S,0} for kappa = 1.
        let ks = red.sender.gains[0][(0, 0)];
        let ds = red.sender.deltas[0][(0, 0)];
        let expect = 2.0 * ks * ks * ds + red.sender.delta0;
        assert!((red.v_o - expect).abs() < 1e-12);
    }

    #[test]
    fn stage_costs_match_stacked_xi_pairing() {
        // For posterior blocks E{xhat_i xhat_k'} = A^{i-k} H_k, the stacked
        // pairing Tr{S Xi} must equal sum_k Tr{H_k V_k}.
        let m = 2;
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.3, -0.2, 0.7]);
        let base = GaussMarkovModel::new(a.clone(), eye(2), eye(2), 3).unwrap();
        let ctrl = ControlledModel::new(base, DMatrix::from_row_slice(2, 1, &[1.0, 0.5])).unwrap();
        let red = control_to_comm(
            &ctrl_obj(eye(2), eye(1) * 3.0),
            &ctrl_obj(DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]), eye(1)),
            &ctrl,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let kappa = 3;
        for _ in 0..5 {
            let hs: Vec<DMatrix<f64>> = (0..kappa)
                .map(|_| {
                    let g = DMatrix::from_fn(m, m, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
                    linalg::symmetrize(&g)
                })
                .collect();
            let mut a_pows = vec![eye(m)];
            for _ in 1..kappa {
                a_pows.push(&a * a_pows.last().unwrap());
            }
            let mut s = DMatrix::zeros(m * kappa, m * kappa);
            for k in 0..kappa {
                for i in k..kappa {
                    let blk = &a_pows[i - k] * &hs[k];
                    s.view_mut(
                        (stack_offset(kappa, i, m), stack_offset(kappa, k, m)),
                        (m, m),
                    )
                    .copy_from(&blk);
                    if i > k {
                        s.view_mut(
                            (stack_offset(kappa, k, m), stack_offset(kappa, i, m)),
                            (m, m),
                        )
                        .copy_from(&blk.transpose());
                    }
                }
            }
            let stacked = (&s * &red.xi).trace();
            let per_stage: f64 =
                (0..kappa).map(|k| (&hs[k] * &red.costs[k]).trace()).sum();
            assert!(
                (stacked - per_stage).abs() < 1e-10 * (1.0 + stacked.abs()),
                "pairing mismatch {stacked} vs {per_stage}"
            );
        }
    }

    #[test]
    fn zero_rule_yields_zero_inputs() {
        let ctrl = scalar_ctrl(1.0, 1.0, 1.0, 1.0, 2);
        let red = riccati_reduce(&ctrl_obj(eye(1), eye(1)), &ctrl).unwrap();
        let rule = SignalingRule::zero(&ctrl.base.chain());
        let policy = recover_control_inputs(&rule, &ctrl, &red).unwrap();
        let mut st = policy.start();
        for _ in 0..2 {
            let u = policy.step(&mut st, &DVector::zeros(1));
            assert_eq!(u[0], 0.0);
        }
    }

    #[test]
    fn single_stage_input_is_filtered_gain() {
        // kappa = 1: u_1 = -K_{R,1} E{x_1 | s_1}, no transformation to undo.
        let ctrl = scalar_ctrl(1.0, 1.0, 1.0, 4.0, 1);
        let red = riccati_reduce(&ctrl_obj(eye(1), eye(1)), &ctrl).unwrap();
        let chain = ctrl.base.chain();
        let rule = SignalingRule {
            maps: vec![eye(1)],
            noise_vars: vec![DVector::from_element(1, 1.0)],
        };
        let policy = recover_control_inputs(&rule, &ctrl, &red).unwrap();
        let mut st = policy.start();
        let s = DVector::from_element(1, 2.0);
        let u = policy.step(&mut st, &s);
        // Kalman gain 4/(4+1); estimate = 1.6; K_R = 1/2.
        let gains = posterior::filter_gains(&rule, &chain).unwrap();
        let expect = -red.gains[0][(0, 0)] * gains.gains[0][(0, 0)] * 2.0;
        assert!((u[0] - expect).abs() < 1e-12);
        assert!((u[0] + 0.8).abs() < 1e-12);
    }

    #[test]
    fn aligned_scalar_game_discloses_fully() {
        let ctrl = scalar_ctrl(1.0, 1.0, 1.0, 1.0, 2);
        let obj = ctrl_obj(eye(1), eye(1));
        let report = solve_control(&obj, &obj, &ctrl, 1e-8).unwrap();
        let chain = ctrl.base.chain();
        for k in 0..2 {
            let err = (&report.comm.plan.stages[k] - &chain.sigmas[k]).norm();
            assert!(err < 1e-4, "stage {k} not full disclosure: {err:.3e}");
        }
        // Sender total cost then equals the perfect-information LQG cost.
        let full_info: f64 = report.comm.total;
        let by_hand = report.reduction.sender.delta0;
        // With full disclosure and aligned objectives u_k = -K_k x_k exactly
        // only when estimation is perfect at every stage, which holds here.
        assert!((full_info - by_hand).abs() < 1e-4, "{full_info} vs {by_hand}");
    }
}
