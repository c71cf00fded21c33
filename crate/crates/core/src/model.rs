//! Process model, objectives, and the chain-constrained plan geometry.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

/// Symmetry tolerance on declared-symmetric inputs (relative).
const SYM_TOL: f64 = 1e-12;

fn check_symmetric_psd(name: &str, x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != x.ncols() {
        return Err(Error::Dimension(format!("{name} is not square")));
    }
    let norm = linalg::spectral_norm(x).max(1.0);
    if (x - x.transpose()).norm() > SYM_TOL * norm * (x.nrows() as f64) {
        return Err(Error::InvalidModel(format!("{name} is not symmetric")));
    }
    if linalg::psd_margin(x) < -linalg::PSD_TOL * norm {
        return Err(Error::InvalidModel(format!(
            "{name} is not positive semi-definite (min eigenvalue {:.3e})",
            linalg::psd_margin(x)
        )));
    }
    Ok(())
}

/// First-order auto-regressive state recursion with fixed transition and
/// noise: x_{k+1} = A x_k + w_k, w_k ~ N(0, Sigma_w), x_1 ~ N(0, Sigma_1).
#[derive(Debug, Clone)]
pub struct GaussMarkovModel {
    pub dim: usize,
    pub a: DMatrix<f64>,
    pub sigma_w: DMatrix<f64>,
    pub sigma_1: DMatrix<f64>,
    pub horizon: usize,
}

impl GaussMarkovModel {
    pub fn new(
        a: DMatrix<f64>,
        sigma_w: DMatrix<f64>,
        sigma_1: DMatrix<f64>,
        horizon: usize,
    ) -> Result<Self> {
        let m = a.nrows();
        if m == 0 || horizon == 0 {
            return Err(Error::InvalidModel("dimension and horizon must be positive".into()));
        }
        if a.ncols() != m {
            return Err(Error::Dimension("A must be square".into()));
        }
        if sigma_w.nrows() != m || sigma_1.nrows() != m {
            return Err(Error::Dimension(
                "Sigma_w and Sigma_1 must match the state dimension".into(),
            ));
        }
        check_symmetric_psd("Sigma_w", &sigma_w)?;
        check_symmetric_psd("Sigma_1", &sigma_1)?;
        Ok(Self { dim: m, a, sigma_w, sigma_1, horizon })
    }

    /// Stage covariances Sigma_{1:kappa} under the recursion
    /// Sigma_{k+1} = A Sigma_k A' + Sigma_w, re-symmetrized each step.
    pub fn stage_covariances(&self) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(self.horizon);
        let mut cur = linalg::symmetrize(&self.sigma_1);
        for _ in 0..self.horizon {
            out.push(cur.clone());
            cur = linalg::symmetrize(&(&self.a * &cur * self.a.transpose() + &self.sigma_w));
        }
        out
    }

    /// The chain view of this model (caches Sigma_{1:kappa}).
    pub fn chain(&self) -> ChainModel {
        ChainModel::from_gauss_markov(self)
    }
}

/// Covariance propagation as a free function, mirroring the chain recursion.
pub fn propagate_covariance(model: &GaussMarkovModel) -> Vec<DMatrix<f64>> {
    model.stage_covariances()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    Communication,
    Control,
}

/// One player's weight pair. Communication: stage cost ||Q x_k - R u_k||^2.
/// Control: stage cost x_{k+1}' Q x_{k+1} + u_k' R u_k.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub kind: ObjectiveKind,
}

impl QuadraticObjective {
    pub fn communication(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        if q.nrows() != r.nrows() {
            return Err(Error::Dimension("Q and R must have the same row count".into()));
        }
        Ok(Self { q, r, kind: ObjectiveKind::Communication })
    }

    /// Control kind requires Q PSD and R positive definite.
    pub fn control(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        check_symmetric_psd("Q", &q)?;
        check_symmetric_psd("R", &r)?;
        if linalg::min_eig(&r) <= 0.0 {
            return Err(Error::InvalidModel("control R must be positive definite".into()));
        }
        Ok(Self { q, r, kind: ObjectiveKind::Control })
    }
}

/// Controlled process x_{k+1} = A x_k + B u_k + w_k.
#[derive(Debug, Clone)]
pub struct ControlledModel {
    pub base: GaussMarkovModel,
    pub b: DMatrix<f64>,
}

impl ControlledModel {
    pub fn new(base: GaussMarkovModel, b: DMatrix<f64>) -> Result<Self> {
        if b.nrows() != base.dim {
            return Err(Error::Dimension("B rows must match the state dimension".into()));
        }
        Ok(Self { base, b })
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
}

/// The SDP decision variables: covariances of the receiver's posterior
/// estimate, one per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorPlan {
    pub stages: Vec<DMatrix<f64>>,
}

impl PosteriorPlan {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }
}

/// Generalized chain: per-stage dimensions d_k, transitions A_k mapping stage
/// k-1 to k, innovation covariances (index 0 is the initial covariance), and
/// the cached stage covariances. A `GaussMarkovModel` is the constant-dimension
/// special case; the measurement lift produces a growing-dimension chain.
#[derive(Debug, Clone)]
pub struct ChainModel {
    pub dims: Vec<usize>,
    /// trans[k-1] maps stage k to stage k+1 (length horizon-1).
    pub trans: Vec<DMatrix<f64>>,
    /// noise[0] = initial covariance; noise[k] = innovation covariance into stage k+1.
    pub noise: Vec<DMatrix<f64>>,
    pub sigmas: Vec<DMatrix<f64>>,
}

impl ChainModel {
    pub fn from_parts(trans: Vec<DMatrix<f64>>, noise: Vec<DMatrix<f64>>) -> Result<Self> {
        if noise.is_empty() || trans.len() + 1 != noise.len() {
            return Err(Error::Dimension("chain needs one more noise block than transitions".into()));
        }
        let mut sigmas = Vec::with_capacity(noise.len());
        let mut dims = Vec::with_capacity(noise.len());
        let mut cur = linalg::symmetrize(&noise[0]);
        dims.push(cur.nrows());
        sigmas.push(cur.clone());
        for (k, a) in trans.iter().enumerate() {
            if a.ncols() != dims[k] {
                return Err(Error::Dimension(format!("transition {k} column mismatch")));
            }
            cur = linalg::symmetrize(&(a * &cur * a.transpose() + &noise[k + 1]));
            dims.push(cur.nrows());
            sigmas.push(cur.clone());
        }
        Ok(Self { dims, trans, noise, sigmas })
    }

    pub fn from_gauss_markov(model: &GaussMarkovModel) -> Self {
        let mut noise = vec![model.sigma_1.clone()];
        let mut trans = Vec::new();
        for _ in 1..model.horizon {
            trans.push(model.a.clone());
            noise.push(model.sigma_w.clone());
        }
        Self::from_parts(trans, noise).expect("validated model produces a valid chain")
    }

    pub fn horizon(&self) -> usize {
        self.dims.len()
    }

    /// A_k H_{k-1} A_k' for stage index k (0-based); zero at k = 0.
    pub fn lower_bound(&self, plan: &PosteriorPlan, k: usize) -> DMatrix<f64> {
        if k == 0 {
            DMatrix::zeros(self.dims[0], self.dims[0])
        } else {
            let a = &self.trans[k - 1];
            linalg::symmetrize(&(a * &plan.stages[k - 1] * a.transpose()))
        }
    }

    /// Sigma_k - A_k H_{k-1} A_k', the slab the stage-k variable lives in.
    pub fn slab(&self, plan: &PosteriorPlan, k: usize) -> DMatrix<f64> {
        linalg::symmetrize(&(&self.sigmas[k] - self.lower_bound(plan, k)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationSide {
    /// Sigma_k - H_k has a negative eigenvalue.
    Upper,
    /// H_k - A H_{k-1} A' has a negative eigenvalue.
    Lower,
}

#[derive(Debug, Clone)]
pub struct Violation {
    pub stage: usize,
    pub side: ViolationSide,
    /// Most negative eigenvalue of the violated slack matrix.
    pub margin: f64,
}

/// Check Sigma_k >= H_k >= A H_{k-1} A' at every stage. Empty result = ok.
/// Tolerance is 1e-8 * (1 + ||Sigma_k||_2) per stage.
pub fn validate_plan(plan: &PosteriorPlan, chain: &ChainModel) -> Result<Vec<Violation>> {
    if plan.horizon() != chain.horizon() {
        return Err(Error::Dimension("plan horizon does not match the model".into()));
    }
    let mut violations = Vec::new();
    for k in 0..chain.horizon() {
        let h = &plan.stages[k];
        if h.nrows() != chain.dims[k] || h.ncols() != chain.dims[k] {
            return Err(Error::Dimension(format!("plan stage {k} dimension mismatch")));
        }
        let tol = 1e-8 * (1.0 + linalg::spectral_norm(&chain.sigmas[k]));
        let upper = linalg::symmetrize(&(&chain.sigmas[k] - h));
        let mu = linalg::psd_margin(&upper);
        if mu < -tol {
            violations.push(Violation { stage: k, side: ViolationSide::Upper, margin: mu });
        }
        let lower = linalg::symmetrize(&(h - chain.lower_bound(plan, k)));
        let ml = linalg::psd_margin(&lower);
        if ml < -tol {
            violations.push(Violation { stage: k, side: ViolationSide::Lower, margin: ml });
        }
    }
    Ok(violations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn eye(m: usize) -> DMatrix<f64> {
        DMatrix::identity(m, m)
    }

    #[test]
    fn propagate_zero_transition_collapses_to_noise() {
        let model =
            GaussMarkovModel::new(DMatrix::zeros(2, 2), eye(2), eye(2), 3).unwrap();
        for s in propagate_covariance(&model) {
            assert!((s - eye(2)).norm() < 1e-14);
        }
    }

    #[test]
    fn propagate_identity_transition_accumulates() {
        let model = GaussMarkovModel::new(eye(2), eye(2), eye(2), 3).unwrap();
        let sigmas = propagate_covariance(&model);
        for (k, s) in sigmas.iter().enumerate() {
            assert!((s - eye(2) * (k as f64 + 1.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn propagate_scalar_fixed_point() {
        let model = GaussMarkovModel::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 0.75),
            DMatrix::from_element(1, 1, 1.0),
            4,
        )
        .unwrap();
        for s in propagate_covariance(&model) {
            assert!((s[(0, 0)] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn propagate_output_stays_psd() {
        // random-ish PSD inputs
        let a = DMatrix::from_row_slice(2, 2, &[0.9, -0.4, 0.3, 0.7]);
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.3, 0.8]);
        let sw = &g * g.transpose();
        let model = GaussMarkovModel::new(a, sw.clone(), sw, 5).unwrap();
        for s in propagate_covariance(&model) {
            let norm = crate::linalg::spectral_norm(&s);
            assert!(crate::linalg::psd_margin(&s) >= -1e-10 * norm);
        }
    }

    #[test]
    fn extremes_pass_validation() {
        let a = DMatrix::from_row_slice(2, 2, &[0.8, 0.1, 0.0, 0.6]);
        let model = GaussMarkovModel::new(a, eye(2), eye(2), 3).unwrap();
        let chain = model.chain();
        let full = PosteriorPlan { stages: chain.sigmas.clone() };
        assert!(validate_plan(&full, &chain).unwrap().is_empty());
        let none = PosteriorPlan { stages: vec![DMatrix::zeros(2, 2); 3] };
        assert!(validate_plan(&none, &chain).unwrap().is_empty());
    }

    #[test]
    fn scalar_lower_violation_detected() {
        // Sigma = (1, 2), A = 1: H = (1, 0.5) violates H_2 >= H_1.
        let model = GaussMarkovModel::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            2,
        )
        .unwrap();
        let chain = model.chain();
        let plan = PosteriorPlan {
            stages: vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 0.5)],
        };
        let v = validate_plan(&plan, &chain).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].stage, 1);
        assert_eq!(v[0].side, ViolationSide::Lower);
        assert!((v[0].margin - (-0.5)).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(GaussMarkovModel::new(DMatrix::zeros(2, 3), eye(2), eye(2), 1).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(GaussMarkovModel::new(eye(2), neg, eye(2), 1).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(GaussMarkovModel::new(eye(2), asym, eye(2), 1).is_err());
    }
}
