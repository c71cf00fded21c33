//! Purpose-built interior-point solver for the chain-constrained linear SDP
//!
//! ```text
//! minimize   sum_k Tr{H_k V_k}
//! subject to Sigma_k >= H_k >= A_k H_{k-1} A_k'      (H_0 = 0)
//!            sum_k Tr{G_{j,k} H_k} >= 0              (optional scalar cuts)
//! ```
//!
//! Log-det barrier path following with dense Newton steps and Armijo
//! backtracking. Problem sizes here are desk scale (kappa * d(d+1)/2 of a few
//! hundred variables at most), so assembling the dense Hessian is cheap.
//! Singular innovation covariances are regularized for the solve only; the
//! solution is projected back onto the unregularized feasible set by
//! eigenvalue clipping.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{validate_plan, ChainModel, PosteriorPlan};
use crate::posterior::ReducedSpace;

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Barrier path-following parameters (fixed per the solver design).
const BARRIER_MU: f64 = 10.0;
const ARMIJO_SLOPE: f64 = 0.25;
const BACKTRACK: f64 = 0.5;
const MAX_NEWTON_STEPS: usize = 500;
const INNER_DECREMENT: f64 = 1e-10;

/// Relative regularization applied to singular innovation covariances.
const REG_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ChainSdpProblem {
    pub chain: ChainModel,
    /// Per-stage cost matrices V_k.
    pub costs: Vec<DMatrix<f64>>,
    /// Scalar cuts: extras[j][k] is G_{j,k} in
    /// sum_k Tr{G_{j,k} H_k} + offsets[j] >= 0.
    pub extras: Vec<Vec<DMatrix<f64>>>,
    pub extra_offsets: Vec<f64>,
}

impl ChainSdpProblem {
    pub fn new(chain: ChainModel, costs: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::with_extras(chain, costs, Vec::new())
    }

    pub fn with_extras(
        chain: ChainModel,
        costs: Vec<DMatrix<f64>>,
        extras: Vec<Vec<DMatrix<f64>>>,
    ) -> Result<Self> {
        let offsets = vec![0.0; extras.len()];
        Self::with_offset_extras(chain, costs, extras, offsets)
    }

    pub fn with_offset_extras(
        chain: ChainModel,
        costs: Vec<DMatrix<f64>>,
        extras: Vec<Vec<DMatrix<f64>>>,
        extra_offsets: Vec<f64>,
    ) -> Result<Self> {
        if extra_offsets.len() != extras.len() {
            return Err(Error::Dimension("one offset per cut required".into()));
        }
        if costs.len() != chain.horizon() {
            return Err(Error::Dimension("one cost matrix per stage required".into()));
        }
        for (k, v) in costs.iter().enumerate() {
            if v.nrows() != chain.dims[k] || v.ncols() != chain.dims[k] {
                return Err(Error::Dimension(format!("cost matrix {k} dimension mismatch")));
            }
        }
        for g in &extras {
            if g.len() != chain.horizon() {
                return Err(Error::Dimension("each cut needs one block per stage".into()));
            }
            for (k, gk) in g.iter().enumerate() {
                if gk.nrows() != chain.dims[k] || gk.ncols() != chain.dims[k] {
                    return Err(Error::Dimension(format!("cut block {k} dimension mismatch")));
                }
            }
        }
        Ok(Self { chain, costs, extras, extra_offsets })
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub plan: PosteriorPlan,
    /// sum_k Tr{H*_k V_k} on the (unregularized) returned plan.
    pub objective: f64,
    pub newton_steps: usize,
    /// Barrier duality-gap bound nu / t at termination.
    pub gap: f64,
    /// Norm of the scaled stationarity residual at the final center.
    pub kkt_residual: f64,
}

/// Strictly interior start: H_k = (A H_{k-1} A' + Sigma_k)/2 on the
/// regularized chain.
pub fn feasible_init(problem: &ChainSdpProblem) -> Result<PosteriorPlan> {
    let chain = regularize(&problem.chain)?;
    midpoint_plan(&chain)
}

fn midpoint_plan(chain: &ChainModel) -> Result<PosteriorPlan> {
    let mut plan = PosteriorPlan { stages: Vec::with_capacity(chain.horizon()) };
    for k in 0..chain.horizon() {
        let lower = chain.lower_bound(&plan, k);
        let h = linalg::symmetrize(&((&lower + &chain.sigmas[k]) * 0.5));
        let slab = linalg::symmetrize(&(&chain.sigmas[k] - &lower));
        if linalg::min_eig(&slab) <= 0.0 {
            return Err(Error::Infeasible(format!(
                "stage {} slab is singular even after regularization",
                k + 1
            )));
        }
        plan.stages.push(h);
    }
    Ok(plan)
}

/// Regularized copy of the chain: any innovation covariance with
/// lambda_min < eps * ||.||_2 gets eps * ||.||_2 * I added (absolute floor
/// eps when the block is identically zero).
fn regularize(chain: &ChainModel) -> Result<ChainModel> {
    let mut noise = Vec::with_capacity(chain.noise.len());
    for w in &chain.noise {
        let norm = linalg::spectral_norm(w);
        let floor = if norm == 0.0 { REG_EPS } else { REG_EPS * norm };
        if linalg::min_eig(w) < REG_EPS * norm.max(floor) {
            noise.push(w + DMatrix::identity(w.nrows(), w.nrows()) * floor);
        } else {
            noise.push(w.clone());
        }
    }
    ChainModel::from_parts(chain.trans.clone(), noise)
}

pub fn solve(problem: &ChainSdpProblem, tol: f64) -> Result<SdpSolution> {
    if !(tol > 0.0 && tol <= 1e-2) {
        return Err(Error::Numeric(format!("tolerance {tol} outside (0, 1e-2]")));
    }
    let chain = regularize(&problem.chain)?;
    let mut ws =
        Workspace::new(&chain, &problem.costs, &problem.extras, &problem.extra_offsets, false);
    let mut h = midpoint_plan(&chain)?;
    let mut steps = 0usize;

    // Phase 1 when the midpoint violates a scalar cut.
    if !problem.extras.is_empty() {
        let min_slack = ws.cut_values(&h).into_iter().fold(f64::INFINITY, f64::min);
        if min_slack <= 0.0 {
            h = phase_one(&chain, &problem.extras, &problem.extra_offsets, h, &mut steps)?;
        }
    }

    let nu = ws.barrier_order();
    let mut t = 1.0;
    let kkt;
    loop {
        let r = ws.center(t, &mut h, None, &mut steps)?;
        let obj = ws.linear_objective(&h);
        if nu / t <= tol * (1.0 + obj.abs()) {
            kkt = r;
            break;
        }
        t *= BARRIER_MU;
    }
    let gap = nu / t;

    // Project onto the unregularized feasible set.
    let plan = project_onto_chain(&h, &problem.chain);
    let violations = validate_plan(&plan, &problem.chain)?;
    if !violations.is_empty() {
        return Err(Error::Numeric(format!(
            "projected solution violates the chain at {} stage(s)",
            violations.len()
        )));
    }
    let objective = plan
        .stages
        .iter()
        .zip(&problem.costs)
        .map(|(hk, vk)| (hk * vk).trace())
        .sum();
    Ok(SdpSolution { plan, objective, newton_steps: steps, gap, kkt_residual: kkt })
}

/// Clip a (possibly slightly infeasible) point onto the exact chain set,
/// stage by stage, by clamping whitened eigenvalues into [0, 1].
pub fn project_onto_chain(h: &PosteriorPlan, chain: &ChainModel) -> PosteriorPlan {
    let mut plan = PosteriorPlan { stages: Vec::with_capacity(chain.horizon()) };
    for k in 0..chain.horizon() {
        let lower = chain.lower_bound(&plan, k);
        let slab = linalg::symmetrize(&(&chain.sigmas[k] - &lower));
        let rs = ReducedSpace::new(&slab);
        let delta = linalg::symmetrize(&(&h.stages[k] - &lower));
        let t = rs.whiten(&delta);
        let eig = linalg::sym_eig(&t);
        let n = rs.rank;
        let mut clipped = DMatrix::zeros(n, n);
        for i in 0..n {
            let v = eig.values[i].clamp(0.0, 1.0);
            let u = eig.vectors.column(i);
            clipped += u * u.transpose() * v;
        }
        plan.stages.push(linalg::symmetrize(&(&lower + rs.unwhiten(&clipped))));
    }
    plan
}

/// Max-min-slack phase 1: maximize z subject to the chain barrier and
/// sum_k Tr{G_{j,k} H_k} >= z; stops as soon as z is strictly positive.
fn phase_one(
    chain: &ChainModel,
    extras: &[Vec<DMatrix<f64>>],
    extra_offsets: &[f64],
    mut h: PosteriorPlan,
    steps: &mut usize,
) -> Result<PosteriorPlan> {
    let costs: Vec<DMatrix<f64>> =
        chain.dims.iter().map(|&d| DMatrix::zeros(d, d)).collect();
    let mut ws = Workspace::new(chain, &costs, extras, extra_offsets, true);
    let mut z = ws.cut_values(&h).into_iter().fold(f64::INFINITY, f64::min) - 1.0;
    let nu = ws.barrier_order();
    let mut t = 1.0;
    loop {
        ws.center(t, &mut h, Some(&mut z), steps)?;
        if z > 0.0 {
            return Ok(h);
        }
        if nu / t <= 1e-10 * (1.0 + z.abs()) {
            return Err(Error::Infeasible(format!(
                "phase-1 max-min cut slack is {z:.3e}; the cut system has empty interior"
            )));
        }
        t *= BARRIER_MU;
    }
}

// --- internal machinery ----------------------------------------------------

fn svec_len(d: usize) -> usize {
    d * (d + 1) / 2
}

fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let d = m.nrows();
    let mut v = DVector::zeros(svec_len(d));
    let mut idx = 0;
    for j in 0..d {
        for i in 0..=j {
            v[idx] = if i == j { m[(i, i)] } else { SQRT2 * m[(i, j)] };
            idx += 1;
        }
    }
    v
}

fn smat(v: &[f64], d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    let mut idx = 0;
    for j in 0..d {
        for i in 0..=j {
            if i == j {
                m[(i, i)] = v[idx];
            } else {
                let x = v[idx] / SQRT2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            idx += 1;
        }
    }
    m
}

/// Adds `Tr{P E_a P E_b}` over the svec basis of one stage into `block`.
fn add_congruence_form(block: &mut DMatrix<f64>, p: &DMatrix<f64>, weight: f64) {
    let d = p.nrows();
    let mut col = 0;
    for j in 0..d {
        for i in 0..=j {
            let pi = p.column(i);
            let pj = p.column(j);
            let m = if i == j {
                DMatrix::from_fn(d, d, |r, c| pi[r] * pi[c])
            } else {
                DMatrix::from_fn(d, d, |r, c| (pi[r] * pj[c] + pj[r] * pi[c]) / SQRT2)
            };
            let sv = svec(&m);
            for r in 0..sv.len() {
                block[(r, col)] += weight * sv[r];
            }
            col += 1;
        }
    }
}

struct Workspace<'a> {
    chain: &'a ChainModel,
    costs: &'a [DMatrix<f64>],
    extras: &'a [Vec<DMatrix<f64>>],
    extra_offsets: &'a [f64],
    phase1: bool,
    offsets: Vec<usize>,
    n_stage_vars: usize,
    /// Concatenated svec of each cut's per-stage blocks.
    cut_vecs: Vec<DVector<f64>>,
}

struct Slacks {
    x_inv: Vec<DMatrix<f64>>,
    z_inv: Vec<DMatrix<f64>>,
    x_logdet: f64,
    z_logdet: f64,
    cuts: Vec<f64>,
}

impl<'a> Workspace<'a> {
    fn new(
        chain: &'a ChainModel,
        costs: &'a [DMatrix<f64>],
        extras: &'a [Vec<DMatrix<f64>>],
        extra_offsets: &'a [f64],
        phase1: bool,
    ) -> Self {
        let mut offsets = Vec::with_capacity(chain.horizon());
        let mut n = 0;
        for &d in &chain.dims {
            offsets.push(n);
            n += svec_len(d);
        }
        let cut_vecs = extras
            .iter()
            .map(|g| {
                let mut v = DVector::zeros(n);
                for (k, gk) in g.iter().enumerate() {
                    let sv = svec(&linalg::symmetrize(gk));
                    v.rows_mut(offsets[k], sv.len()).copy_from(&sv);
                }
                v
            })
            .collect();
        Workspace {
            chain,
            costs,
            extras,
            extra_offsets,
            phase1,
            offsets,
            n_stage_vars: n,
            cut_vecs,
        }
    }

    fn n_vars(&self) -> usize {
        self.n_stage_vars + usize::from(self.phase1)
    }

    fn barrier_order(&self) -> f64 {
        let psd: usize = self.chain.dims.iter().map(|&d| 2 * d).sum();
        (psd + self.extras.len()) as f64
    }

    fn cut_values(&self, h: &PosteriorPlan) -> Vec<f64> {
        self.extras
            .iter()
            .zip(self.extra_offsets)
            .map(|(g, off)| {
                off + g
                    .iter()
                    .zip(&h.stages)
                    .map(|(gk, hk)| (gk * hk).trace())
                    .sum::<f64>()
            })
            .collect()
    }


    fn linear_objective(&self, h: &PosteriorPlan) -> f64 {
        self.costs.iter().zip(&h.stages).map(|(v, hk)| (v * hk).trace()).sum()
    }

    fn objective(&self, h: &PosteriorPlan, z: f64) -> f64 {
        if self.phase1 {
            -z
        } else {
            self.linear_objective(h)
        }
    }

    /// Strict-feasibility check; returns inverse slack blocks and log-dets.
    fn slacks(&self, h: &PosteriorPlan, z: f64) -> Option<Slacks> {
        let kappa = self.chain.horizon();
        let mut x_inv = Vec::with_capacity(kappa);
        let mut z_inv = Vec::with_capacity(kappa);
        let mut x_logdet = 0.0;
        let mut z_logdet = 0.0;
        for k in 0..kappa {
            let x = linalg::symmetrize(&(&self.chain.sigmas[k] - &h.stages[k]));
            let cx: Cholesky<f64, Dyn> = Cholesky::new(x)?;
            x_logdet += 2.0 * cx.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            x_inv.push(cx.inverse());
            let zm = linalg::symmetrize(&(&h.stages[k] - self.chain.lower_bound(h, k)));
            let cz: Cholesky<f64, Dyn> = Cholesky::new(zm)?;
            z_logdet += 2.0 * cz.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            z_inv.push(cz.inverse());
        }
        let mut cuts = self.cut_values(h);
        for s in cuts.iter_mut() {
            if self.phase1 {
                *s -= z;
            }
            if *s <= 0.0 {
                return None;
            }
        }
        Some(Slacks { x_inv, z_inv, x_logdet, z_logdet, cuts })
    }

    fn potential(&self, t: f64, h: &PosteriorPlan, z: f64, s: &Slacks) -> f64 {
        t * self.objective(h, z) - s.x_logdet - s.z_logdet
            - s.cuts.iter().map(|v| v.ln()).sum::<f64>()
    }

    fn gradient(&self, t: f64, s: &Slacks) -> DVector<f64> {
        let kappa = self.chain.horizon();
        let mut grad = DVector::zeros(self.n_vars());
        for k in 0..kappa {
            let mut g = &s.x_inv[k] - &s.z_inv[k];
            if !self.phase1 {
                g += &self.costs[k] * t;
            }
            if k + 1 < kappa {
                let a = &self.chain.trans[k];
                g += a.transpose() * &s.z_inv[k + 1] * a;
            }
            let sv = svec(&linalg::symmetrize(&g));
            grad.rows_mut(self.offsets[k], sv.len()).copy_from(&sv);
        }
        for (j, slack) in s.cuts.iter().enumerate() {
            let gv = &self.cut_vecs[j] / *slack;
            grad.rows_mut(0, self.n_stage_vars).sub_assign_ref(&gv);
        }
        if self.phase1 {
            let zi = self.n_stage_vars;
            grad[zi] = -t + s.cuts.iter().map(|v| 1.0 / v).sum::<f64>();
        }
        grad
    }

    fn hessian(&self, s: &Slacks) -> DMatrix<f64> {
        let kappa = self.chain.horizon();
        let n = self.n_vars();
        let mut hess = DMatrix::zeros(n, n);
        for k in 0..kappa {
            let d = self.chain.dims[k];
            let p = svec_len(d);
            let off = self.offsets[k];
            {
                let mut block = hess.view_mut((off, off), (p, p));
                let mut tmp = DMatrix::zeros(p, p);
                add_congruence_form(&mut tmp, &s.x_inv[k], 1.0);
                add_congruence_form(&mut tmp, &s.z_inv[k], 1.0);
                if k + 1 < kappa {
                    let a = &self.chain.trans[k];
                    let y = linalg::symmetrize(&(a.transpose() * &s.z_inv[k + 1] * a));
                    add_congruence_form(&mut tmp, &y, 1.0);
                }
                block += tmp;
            }
            // Cross block with the previous stage from the shared slab barrier.
            if k > 0 {
                let a = &self.chain.trans[k - 1];
                let dp = self.chain.dims[k - 1];
                let pp = svec_len(dp);
                let offp = self.offsets[k - 1];
                let zi = &s.z_inv[k];
                let w = a.transpose() * zi; // columns w_i = A' (Z^{-1} e_i)
                let mut cross = DMatrix::zeros(pp, p);
                let mut col = 0;
                for j in 0..d {
                    for i in 0..=j {
                        let wi = w.column(i);
                        let wj = w.column(j);
                        let m = if i == j {
                            DMatrix::from_fn(dp, dp, |r, c| wi[r] * wi[c])
                        } else {
                            DMatrix::from_fn(dp, dp, |r, c| {
                                (wi[r] * wj[c] + wj[r] * wi[c]) / SQRT2
                            })
                        };
                        let sv = svec(&m);
                        for r in 0..pp {
                            cross[(r, col)] = -sv[r];
                        }
                        col += 1;
                    }
                }
                hess.view_mut((offp, off), (pp, p)).copy_from(&cross);
                hess.view_mut((off, offp), (p, pp)).copy_from(&cross.transpose());
            }
        }
        for (j, slack) in s.cuts.iter().enumerate() {
            let w = 1.0 / (slack * slack);
            let gv = &self.cut_vecs[j];
            for r in 0..self.n_stage_vars {
                if gv[r] == 0.0 {
                    continue;
                }
                for c in 0..self.n_stage_vars {
                    hess[(r, c)] += w * gv[r] * gv[c];
                }
            }
            if self.phase1 {
                let zi = self.n_stage_vars;
                for r in 0..self.n_stage_vars {
                    hess[(r, zi)] -= w * gv[r];
                    hess[(zi, r)] -= w * gv[r];
                }
                hess[(zi, zi)] += w;
            }
        }
        hess
    }

    fn apply_step(&self, h: &PosteriorPlan, z: f64, dir: &DVector<f64>, step: f64) -> (PosteriorPlan, f64) {
        let mut out = h.clone();
        for k in 0..self.chain.horizon() {
            let d = self.chain.dims[k];
            let p = svec_len(d);
            let seg: Vec<f64> =
                dir.rows(self.offsets[k], p).iter().map(|v| v * step).collect();
            out.stages[k] += smat(&seg, d);
            out.stages[k] = linalg::symmetrize(&out.stages[k]);
        }
        let z_new = if self.phase1 { z + step * dir[self.n_stage_vars] } else { z };
        (out, z_new)
    }

    /// Newton centering at fixed t. Returns the scaled stationarity residual.
    fn center(
        &mut self,
        t: f64,
        h: &mut PosteriorPlan,
        mut z: Option<&mut f64>,
        steps: &mut usize,
    ) -> Result<f64> {
        let mut zv = z.as_deref().copied().unwrap_or(0.0);
        for _inner in 0..60 {
            if *steps >= MAX_NEWTON_STEPS {
                return Err(Error::NonConvergence { steps: *steps, decrement: f64::NAN });
            }
            let s = self
                .slacks(h, zv)
                .ok_or_else(|| Error::Numeric("iterate left the interior".into()))?;
            let grad = self.gradient(t, &s);
            let hess = self.hessian(&s);
            let dir = solve_spd(&hess, &(-&grad))?;
            let decrement = -grad.dot(&dir);
            *steps += 1;
            if decrement <= 2.0 * INNER_DECREMENT {
                if let Some(zr) = z.as_deref_mut() {
                    *zr = zv;
                }
                return Ok(grad.norm() / t);
            }
            // Backtrack into the interior, then Armijo.
            let phi0 = self.potential(t, h, zv, &s);
            let slope = grad.dot(&dir);
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..80 {
                let (h_try, z_try) = self.apply_step(h, zv, &dir, step);
                if let Some(s_try) = self.slacks(&h_try, z_try) {
                    let phi = self.potential(t, &h_try, z_try, &s_try);
                    if phi <= phi0 + ARMIJO_SLOPE * step * slope {
                        *h = h_try;
                        zv = z_try;
                        accepted = true;
                        break;
                    }
                }
                step *= BACKTRACK;
            }
            if !accepted {
                // Step collapsed to numerical zero: treat as centered.
                if let Some(zr) = z.as_deref_mut() {
                    *zr = zv;
                }
                return Ok(grad.norm() / t);
            }
        }
        let s = self
            .slacks(h, zv)
            .ok_or_else(|| Error::Numeric("iterate left the interior".into()))?;
        let grad = self.gradient(t, &s);
        if let Some(zr) = z.as_deref_mut() {
            *zr = zv;
        }
        Ok(grad.norm() / t)
    }
}

trait SubAssignRef {
    fn sub_assign_ref(&mut self, other: &DVector<f64>);
}

impl<'a> SubAssignRef for nalgebra::DVectorViewMut<'a, f64> {
    fn sub_assign_ref(&mut self, other: &DVector<f64>) {
        for i in 0..other.len() {
            self[i] -= other[i];
        }
    }
}

/// Solve a symmetric positive definite system, adding a tiny ridge when the
/// factorization fails on a numerically semidefinite Hessian.
fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = Cholesky::new(a.clone()) {
        return Ok(ch.solve(b));
    }
    let ridge = 1e-12 * (a.trace().abs() / a.nrows() as f64).max(1.0);
    let mut aa = a.clone();
    for i in 0..a.nrows() {
        aa[(i, i)] += ridge;
    }
    Cholesky::new(aa)
        .map(|ch| ch.solve(b))
        .ok_or_else(|| Error::Numeric("Newton system is not positive definite".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussMarkovModel;
    use nalgebra::DMatrix;

    fn eye(m: usize) -> DMatrix<f64> {
        DMatrix::identity(m, m)
    }

    fn scalar_model(a: f64, sw: f64, s1: f64, kappa: usize) -> ChainModel {
        GaussMarkovModel::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, sw),
            DMatrix::from_element(1, 1, s1),
            kappa,
        )
        .unwrap()
        .chain()
    }

    #[test]
    fn feasible_init_is_midpoint() {
        let chain = scalar_model(1.0, 1.0, 1.0, 2);
        let prob = ChainSdpProblem::new(chain, vec![DMatrix::zeros(1, 1); 2]).unwrap();
        let init = feasible_init(&prob).unwrap();
        assert!((init.stages[0][(0, 0)] - 0.5).abs() < 1e-9);
        assert!((init.stages[1][(0, 0)] - 1.25).abs() < 1e-9);
        assert!(validate_plan(&init, &prob.chain).unwrap().is_empty());
    }

    #[test]
    fn aligned_single_stage_full_disclosure() {
        let m = 3;
        let model = GaussMarkovModel::new(
            DMatrix::zeros(m, m),
            DMatrix::zeros(m, m),
            eye(m),
            1,
        )
        .unwrap();
        let prob = ChainSdpProblem::new(model.chain(), vec![-eye(m)]).unwrap();
        let sol = solve(&prob, 1e-8).unwrap();
        assert!((sol.objective + m as f64).abs() < 1e-6);
        assert!((&sol.plan.stages[0] - eye(m)).norm() < 1e-4);
    }

    #[test]
    fn misaligned_single_stage_no_disclosure() {
        let model =
            GaussMarkovModel::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 2), eye(2), 1).unwrap();
        let prob = ChainSdpProblem::new(model.chain(), vec![eye(2)]).unwrap();
        let sol = solve(&prob, 1e-8).unwrap();
        assert!(sol.objective.abs() < 1e-6);
        assert!(sol.plan.stages[0].norm() < 1e-4);
    }

    #[test]
    fn scalar_two_stage_coupling_binds() {
        // V = (-2, 1): disclosing at stage 1 is worth 2 but costs 1 at stage 2
        // through the monotonicity coupling; optimum H* = (1, 1), value -1.
        let chain = scalar_model(1.0, 1.0, 1.0, 2);
        let costs = vec![DMatrix::from_element(1, 1, -2.0), DMatrix::from_element(1, 1, 1.0)];
        let sol = solve(&ChainSdpProblem::new(chain, costs).unwrap(), 1e-8).unwrap();
        assert!((sol.objective + 1.0).abs() < 1e-5, "objective {}", sol.objective);
        assert!((sol.plan.stages[0][(0, 0)] - 1.0).abs() < 1e-4);
        assert!((sol.plan.stages[1][(0, 0)] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn scalar_two_stage_delayed_disclosure() {
        let chain = scalar_model(1.0, 1.0, 1.0, 2);
        let costs = vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, -1.0)];
        let sol = solve(&ChainSdpProblem::new(chain, costs).unwrap(), 1e-8).unwrap();
        assert!((sol.objective + 2.0).abs() < 1e-5, "objective {}", sol.objective);
        assert!(sol.plan.stages[0][(0, 0)].abs() < 1e-4);
        assert!((sol.plan.stages[1][(0, 0)] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn binding_cut_moves_the_optimum() {
        // min -2 h11 + h22  s.t.  h22 >= h11 on 0 <= H <= I.
        // Unconstrained optimum diag(1, 0) is cut off; the constrained optimum
        // is diag(1, 1) with value -1. The midpoint start lies exactly on the
        // cut boundary, so this also exercises phase 1.
        let model =
            GaussMarkovModel::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 2), eye(2), 1).unwrap();
        let cost = DMatrix::from_diagonal(&nalgebra::dvector![-2.0, 1.0]);
        let cut = DMatrix::from_diagonal(&nalgebra::dvector![-1.0, 1.0]);
        let prob =
            ChainSdpProblem::with_extras(model.chain(), vec![cost], vec![vec![cut]]).unwrap();
        let sol = solve(&prob, 1e-8).unwrap();
        assert!((sol.objective + 1.0).abs() < 1e-5, "objective {}", sol.objective);
        assert!((&sol.plan.stages[0] - eye(2)).norm() < 1e-3);
    }

    #[test]
    fn vacuous_cut_changes_nothing() {
        let chain = scalar_model(0.0, 0.0, 1.0, 1);
        let prob = ChainSdpProblem::with_extras(
            chain,
            vec![DMatrix::from_element(1, 1, -1.0)],
            vec![vec![DMatrix::zeros(1, 1)]],
        )
        .unwrap();
        // zero cut has empty strict interior in the slack; slack is exactly 0.
        // Tr{0 * H} = 0 is not strictly positive -> phase 1 must report it.
        assert!(solve(&prob, 1e-8).is_err());
    }

    #[test]
    fn rejects_bad_tolerance() {
        let chain = scalar_model(0.0, 0.0, 1.0, 1);
        let prob = ChainSdpProblem::new(chain, vec![DMatrix::zeros(1, 1)]).unwrap();
        assert!(solve(&prob, 0.0).is_err());
        assert!(solve(&prob, 1.0).is_err());
    }
}
