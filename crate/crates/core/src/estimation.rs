//! Penalized maximum likelihood estimation.
//!
//! The constrained parameter space (orthonormal components, descending
//! variances, positive definite score covariance) is handled through an
//! unconstrained factorization of the same model:
//!
//! * intensity loadings `A` (`q × p1`): `C·u = A·ũ` with `ũ ~ N(0, I)`;
//! * response loadings `B` (`q × p2`): `D·v = B·ṽ` with `ṽ = G·ũ + ε`,
//!   `ε ~ N(0, I)`, so `Cov(ũ, ṽ) = Gᵀ` and `Cov(ṽ) = I + GGᵀ`;
//! * `log σ_η²`.
//!
//! Every point of this space is a valid model and every [`Theta`] has a
//! preimage. The map back to [`Theta`] orthonormalizes the loadings under
//! the Gram matrix through a singular value decomposition, which also
//! yields the variances in descending order; signs are then normalized.
//! The Laplace approximation is invariant under linear changes of the
//! latent variables, so the objective is identical in both coordinates.

use std::cell::RefCell;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSystem;
use crate::error::{Error, Result};
use crate::likelihood::{check_smoothing, predict_all, prepare, LatentModel, Smoothing, Subject};
use crate::model::{orthonormalize, Dataset, Theta, ThetaDocument};
use crate::optim::{minimize, LbfgsOptions};

/// Lower bound applied to variances produced by the initializer.
pub const INIT_VARIANCE_FLOOR: f64 = 1e-4;

/// Lower bound on score variances at the returned estimate.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub p1: usize,
    pub p2: usize,
    /// Smoothing parameters for `μ`, the `φ_k`, `ν` and the `ψ_k`.
    pub xi: Smoothing,
    pub max_outer_iters: usize,
    /// Relative objective change below which the optimizer stops.
    pub tol: f64,
    pub seed: u64,
    /// Standard deviation of random perturbations added to the starting
    /// loadings; zero disables jitter.
    pub init_jitter: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            p1: 2,
            p2: 2,
            xi: [1e-4; 4],
            max_outer_iters: 1000,
            tol: 1e-9,
            seed: 0,
            init_jitter: 0.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p1 == 0 || self.p2 == 0 {
            return Err(Error::InvalidParameter("p1 and p2 must be at least 1".into()));
        }
        check_smoothing(&self.xi)?;
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: Theta,
    /// Penalized log-likelihood after every accepted iteration.
    pub objective_trace: Vec<f64>,
    /// Predicted `(u, v)` per subject.
    pub scores: Vec<(DVector<f64>, DVector<f64>)>,
    pub converged: bool,
    pub n_used: usize,
    pub iterations: usize,
    pub evaluations: usize,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial value")
    }

    pub fn to_document(&self, basis: &BasisSystem, config: &FitConfig) -> FitDocument {
        FitDocument {
            theta: ThetaDocument::new(&self.theta, basis.spec()),
            config: config.clone(),
            objective_trace: self.objective_trace.clone(),
            scores_u: self.scores.iter().map(|s| s.0.iter().copied().collect()).collect(),
            scores_v: self.scores.iter().map(|s| s.1.iter().copied().collect()).collect(),
            converged: self.converged,
            n_used: self.n_used,
            iterations: self.iterations,
        }
    }
}

/// Serializable form of a [`FitResult`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDocument {
    pub theta: ThetaDocument,
    pub config: FitConfig,
    pub objective_trace: Vec<f64>,
    pub scores_u: Vec<Vec<f64>>,
    pub scores_v: Vec<Vec<f64>>,
    pub converged: bool,
    pub n_used: usize,
    pub iterations: usize,
}

/// Cholesky factor `L` of the Gram matrix (`J = LLᵀ`) and the roughness
/// matrix expressed in the corresponding orthonormal coordinates.
#[derive(Debug, Clone)]
pub(crate) struct Geometry {
    l: DMatrix<f64>,
    omega_tilde: DMatrix<f64>,
}

impl Geometry {
    pub(crate) fn new(basis: &BasisSystem) -> Self {
        let l = Cholesky::new(basis.gram().clone()).expect("Gram matrix is positive definite").unpack();
        let l_inv = l.clone().try_inverse().expect("triangular factor is invertible");
        let omega_tilde = &l_inv * basis.roughness() * l_inv.transpose();
        Self { l, omega_tilde: (&omega_tilde + omega_tilde.transpose()) * 0.5 }
    }

    /// Solves `Lᵀ C = U`.
    fn from_orthonormal(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        self.l
            .transpose()
            .solve_upper_triangular(u)
            .expect("triangular factor is invertible")
    }

    /// `tr(Ω̃ P)` with `P` the projector onto the span of `LᵀA`, and its
    /// gradient in `A`.
    fn span_penalty(&self, a: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let at = self.l.transpose() * a;
        let gram = at.tr_mul(&at);
        let n = match Cholesky::new(gram) {
            Some(c) => c.inverse(),
            None => return (f64::INFINITY, DMatrix::zeros(a.nrows(), a.ncols())),
        };
        let an = &at * &n;
        let value = (self.omega_tilde.clone() * &an).component_mul(&at).sum();
        let wa = &self.omega_tilde * &an;
        let proj_wa = &at * (&n * at.tr_mul(&wa));
        let grad_t = (wa - proj_wa) * 2.0;
        (value, &self.l * grad_t)
    }
}

/// Unconstrained working coordinates of the model.
#[derive(Debug, Clone)]
pub(crate) struct Working {
    pub c0: DVector<f64>,
    pub a: DMatrix<f64>,
    pub d0: DVector<f64>,
    pub b: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub log_var_eta: f64,
}

impl Working {
    fn dim(q: usize, p1: usize, p2: usize) -> usize {
        2 * q + q * (p1 + p2) + p1 * p2 + 1
    }

    fn pack(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(Self::dim(self.c0.len(), self.a.ncols(), self.b.ncols()));
        v.extend(self.c0.iter());
        v.extend(self.a.iter());
        v.extend(self.d0.iter());
        v.extend(self.b.iter());
        v.extend(self.g.iter());
        v.push(self.log_var_eta);
        DVector::from_vec(v)
    }

    fn unpack(x: &DVector<f64>, q: usize, p1: usize, p2: usize) -> Self {
        let s = x.as_slice();
        let mut at = 0;
        let mut take = |n: usize| {
            let out = &s[at..at + n];
            at += n;
            out
        };
        let c0 = DVector::from_column_slice(take(q));
        let a = DMatrix::from_column_slice(q, p1, take(q * p1));
        let d0 = DVector::from_column_slice(take(q));
        let b = DMatrix::from_column_slice(q, p2, take(q * p2));
        let g = DMatrix::from_column_slice(p2, p1, take(p1 * p2));
        let log_var_eta = take(1)[0];
        Self { c0, a, d0, b, g, log_var_eta }
    }

    /// Covariance of `(ũ, ṽ)`.
    fn latent_cov(&self) -> DMatrix<f64> {
        let (p1, p2) = (self.a.ncols(), self.b.ncols());
        let mut s = DMatrix::identity(p1 + p2, p1 + p2);
        let vv = DMatrix::identity(p2, p2) + &self.g * self.g.transpose();
        s.view_mut((p1, p1), (p2, p2)).copy_from(&vv);
        s.view_mut((p1, 0), (p2, p1)).copy_from(&self.g);
        s.view_mut((0, p1), (p1, p2)).copy_from(&self.g.transpose());
        s
    }

    fn model<'a>(&self, basis: &'a BasisSystem) -> Result<LatentModel<'a>> {
        LatentModel::new(
            basis,
            self.c0.clone(),
            self.a.clone(),
            self.d0.clone(),
            self.b.clone(),
            &self.latent_cov(),
            self.log_var_eta.exp(),
        )
    }

    pub(crate) fn from_theta(theta: &Theta) -> Result<Self> {
        theta.validate_shapes()?;
        let (p1, p2) = (theta.p1(), theta.p2());
        let sd_u = theta.var_u.map(f64::sqrt);
        let a = DMatrix::from_fn(theta.q(), p1, |i, k| theta.phi[(i, k)] * sd_u[k]);
        let k = DMatrix::from_fn(p1, p2, |i, l| theta.sigma_uv[(i, l)] / sd_u[i]);
        let schur = DMatrix::from_diagonal(&theta.var_v) - k.tr_mul(&k);
        let r = Cholesky::new(schur).ok_or(Error::NotPositiveDefinite)?.unpack();
        let g = r.solve_lower_triangular(&k.transpose()).expect("Cholesky factor is invertible");
        let b = &theta.psi * &r;
        Ok(Self {
            c0: theta.c0.clone(),
            a,
            d0: theta.d0.clone(),
            b,
            g,
            log_var_eta: theta.var_eta.ln(),
        })
    }

    /// Orthonormalizes the factorization back into a sign-normalized
    /// [`Theta`].
    pub(crate) fn to_theta(&self, geom: &Geometry, gram: &DMatrix<f64>) -> Result<Theta> {
        let (p1, p2) = (self.a.ncols(), self.b.ncols());
        let at = geom.l.transpose() * &self.a;
        let (u_left, s_u, v_right) = sorted_svd(at.clone());
        let phi = geom.from_orthonormal(&u_left);

        let m = DMatrix::identity(p2, p2) + &self.g * self.g.transpose();
        let r = Cholesky::new(m).ok_or(Error::NotPositiveDefinite)?.unpack();
        let bt = geom.l.transpose() * &self.b;
        let (u2, s_v, _) = sorted_svd(&bt * &r);
        let psi = geom.from_orthonormal(&u2);

        // Σ_uv = S Vᵀ Gᵀ (LᵀB)ᵀ U₂
        let sigma_uv = DMatrix::from_diagonal(&s_u) * v_right.transpose() * self.g.transpose() * bt.transpose() * &u2;
        let var_u = s_u.map(|s| (s * s).max(VARIANCE_FLOOR));
        let var_v = s_v.map(|s| (s * s).max(VARIANCE_FLOOR));
        let theta = Theta {
            sigma_uv: sigma_uv.view((0, 0), (p1, p2)).into_owned(),
            c0: self.c0.clone(),
            phi,
            d0: self.d0.clone(),
            psi,
            var_u,
            var_v,
            var_eta: self.log_var_eta.exp(),
        };
        theta.normalize_signs(gram)
    }
}

/// Thin SVD with singular values sorted in decreasing order. Returns
/// `(U, s, V)` with `M = U diag(s) Vᵀ`.
fn sorted_svd(m: DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s = DVector::from_iterator(order.len(), order.iter().map(|&i| svd.singular_values[i]));
    let u_sorted = DMatrix::from_columns(&order.iter().map(|&i| u.column(i)).collect::<Vec<_>>());
    let v_sorted = DMatrix::from_columns(&order.iter().map(|&i| vt.row(i).transpose()).collect::<Vec<_>>());
    (u_sorted, s, v_sorted)
}

/// Penalized objective and gradient in working coordinates.
pub(crate) struct Objective<'a> {
    basis: &'a BasisSystem,
    subjects: &'a [Subject],
    geom: Geometry,
    xi: Smoothing,
    q: usize,
    p1: usize,
    p2: usize,
    modes: RefCell<Vec<Option<DVector<f64>>>>,
}

impl<'a> Objective<'a> {
    pub(crate) fn new(basis: &'a BasisSystem, subjects: &'a [Subject], xi: Smoothing, p1: usize, p2: usize) -> Self {
        Self {
            basis,
            subjects,
            geom: Geometry::new(basis),
            xi,
            q: basis.dim(),
            p1,
            p2,
            modes: RefCell::new(vec![None; subjects.len()]),
        }
    }

    /// Penalized log-likelihood and its gradient.
    pub(crate) fn evaluate(&self, w: &Working) -> Result<(f64, DVector<f64>)> {
        let model = w.model(self.basis)?;
        let starts = self.modes.borrow().clone();
        let results: Vec<_> = self
            .subjects
            .par_iter()
            .zip(starts.par_iter())
            .map(|(s, start)| model.subject_laplace(s, start.as_ref(), true))
            .collect::<Result<Vec<_>>>()?;
        let n = results.len() as f64;
        let (p1, p2, q) = (self.p1, self.p2, self.q);

        let mut loglik = 0.0;
        let mut g_c0 = DVector::zeros(q);
        let mut g_a = DMatrix::zeros(q, p1);
        let mut g_d0 = DVector::zeros(q);
        let mut g_b = DMatrix::zeros(q, p2);
        let mut g_sigma = DMatrix::zeros(p1 + p2, p1 + p2);
        let mut g_var = 0.0;
        let mut modes = Vec::with_capacity(results.len());
        for r in results {
            loglik += r.loglik;
            let g = r.grad.expect("gradient requested");
            g_c0 += g.c0;
            g_a += g.load_u;
            g_d0 += g.d0;
            g_b += g.load_v;
            g_sigma += g.sigma;
            g_var += g.var_eta;
            modes.push(Some(r.mode.stacked()));
        }
        *self.modes.borrow_mut() = modes;

        let omega = self.basis.roughness();
        let (pen_a, grad_pen_a) = self.geom.span_penalty(&w.a);
        let (pen_b, grad_pen_b) = self.geom.span_penalty(&w.b);
        let pen_c0 = w.c0.dot(&(omega * &w.c0));
        let pen_d0 = w.d0.dot(&(omega * &w.d0));
        let value = loglik / n - self.xi[0] * pen_c0 - self.xi[1] * pen_a - self.xi[2] * pen_d0 - self.xi[3] * pen_b;

        let m_vu = g_sigma.view((p1, 0), (p2, p1)).into_owned();
        let m_vv = g_sigma.view((p1, p1), (p2, p2)).into_owned();
        let grad = Working {
            c0: g_c0 / n - omega * &w.c0 * (2.0 * self.xi[0]),
            a: g_a / n - grad_pen_a * self.xi[1],
            d0: g_d0 / n - omega * &w.d0 * (2.0 * self.xi[2]),
            b: g_b / n - grad_pen_b * self.xi[3],
            g: (m_vu * 2.0 + m_vv * &w.g * 2.0) / n,
            log_var_eta: g_var / n * w.log_var_eta.exp(),
        };
        Ok((value, grad.pack()))
    }

    fn unpack(&self, x: &DVector<f64>) -> Working {
        Working::unpack(x, self.q, self.p1, self.p2)
    }
}

fn variable_scale(w: &Working) -> DVector<f64> {
    let sd = (0.5 * w.log_var_eta).exp();
    let unit = Working {
        c0: DVector::from_element(w.c0.len(), 1.0),
        a: DMatrix::from_element(w.a.nrows(), w.a.ncols(), 1.0),
        d0: DVector::from_element(w.d0.len(), sd),
        b: DMatrix::from_element(w.b.nrows(), w.b.ncols(), sd),
        g: DMatrix::from_element(w.g.nrows(), w.g.ncols(), 1.0),
        log_var_eta: 1.0,
    };
    unit.pack()
}

/// Starting value built from crude per-subject smooths.
pub fn initialize(data: &Dataset, basis: &BasisSystem, config: &FitConfig) -> Result<Theta> {
    config.validate()?;
    if config.p1.max(config.p2) > basis.dim() {
        return Err(Error::InvalidParameter(format!(
            "at most {} components fit in a basis of that size",
            basis.dim()
        )));
    }
    if data.n() < 2 {
        return Err(Error::InvalidDataset("initialization needs at least two subjects".into()));
    }
    let subjects = prepare(basis, data)?;
    let gram = basis.gram();
    let (p1, p2) = (config.p1, config.p2);

    let c0 = pooled_log_intensity(basis, &subjects);
    let (d0, pooled_var) = pooled_mean(basis, &subjects);

    // per-subject deviations for subjects with enough points
    let rich: Vec<&Subject> = subjects.iter().filter(|s| s.m >= 4).collect();
    let mut theta = if rich.len() >= 2 {
        let dev_u: Vec<DVector<f64>> = rich
            .par_iter()
            .map(|s| subject_log_intensity_deviation(basis, s, &c0))
            .collect();
        let dev_v: Vec<(DVector<f64>, f64, usize)> = rich.par_iter().map(|s| subject_response_deviation(basis, s, &d0)).collect();
        let (phi, var_u, scores_u) = principal_components(&dev_u, gram, p1);
        let v_dev: Vec<DVector<f64>> = dev_v.iter().map(|d| d.0.clone()).collect();
        let (psi, var_v, scores_v) = principal_components(&v_dev, gram, p2);
        let (rss, count) = dev_v.iter().fold((0.0, 0usize), |acc, d| (acc.0 + d.1, acc.1 + d.2));
        let var_eta = if count > 0 { (rss / count as f64).max(INIT_VARIANCE_FLOOR) } else { pooled_var };

        let k = scores_u.len() as f64;
        let mean_u = scores_u.iter().fold(DVector::zeros(p1), |a, s| a + s) / k;
        let mean_v = scores_v.iter().fold(DVector::zeros(p2), |a, s| a + s) / k;
        let mut cross = DMatrix::zeros(p1, p2);
        for (su, sv) in scores_u.iter().zip(&scores_v) {
            cross += (su - &mean_u) * (sv - &mean_v).transpose();
        }
        cross /= (k - 1.0).max(1.0);
        Theta { sigma_uv: cross * 0.5, c0, phi, d0, psi, var_u, var_v, var_eta }
    } else {
        default_components(basis, c0, d0, p1, p2, pooled_var)?
    };

    // keep the score covariance positive definite
    let mut tries = 0;
    while !theta.sigma_is_pd() {
        theta.sigma_uv *= 0.5;
        tries += 1;
        if tries > 60 {
            theta.sigma_uv.fill(0.0);
            break;
        }
    }
    theta.normalize_signs(gram)
}

fn pooled_log_intensity(basis: &BasisSystem, subjects: &[Subject]) -> DVector<f64> {
    let n = subjects.len() as f64;
    let total: usize = subjects.iter().map(|s| s.m).sum();
    let len = basis.domain().length();
    let level = ((total as f64).max(0.5) / (n * len)).ln();
    let mut c = DVector::from_element(basis.dim(), level);
    if total == 0 {
        return c;
    }
    let mut point_sum = DVector::zeros(basis.dim());
    for s in subjects {
        point_sum += &s.design_sum;
    }
    let quad = basis.quad_design();
    let omega = basis.roughness();
    let rho = 1e-4 * total as f64;
    let objective = |c: &DVector<f64>| {
        let eta = quad * c;
        let integral: f64 = eta.iter().zip(basis.quad_weights()).map(|(e, w)| w * e.exp()).sum();
        point_sum.dot(c) - n * integral - rho * c.dot(&(omega * c))
    };
    for _ in 0..50 {
        let eta = quad * &c;
        let w = DVector::from_iterator(eta.len(), eta.iter().zip(basis.quad_weights()).map(|(e, w)| w * e.exp()));
        let grad = &point_sum - quad.tr_mul(&w) * n - omega * &c * (2.0 * rho);
        let weighted = DMatrix::from_fn(quad.nrows(), quad.ncols(), |i, j| quad[(i, j)] * w[i]);
        let hess = quad.tr_mul(&weighted) * n + omega * (2.0 * rho) + DMatrix::identity(basis.dim(), basis.dim()) * 1e-10;
        let Some(chol) = Cholesky::new(hess) else { break };
        let step = chol.solve(&grad);
        let base = objective(&c);
        let mut t = 1.0;
        while t > 1e-8 && !(objective(&(&c + &step * t)) >= base) {
            t *= 0.5;
        }
        c += &step * t;
        if grad.amax() < 1e-8 * total as f64 {
            break;
        }
    }
    c
}

fn pooled_mean(basis: &BasisSystem, subjects: &[Subject]) -> (DVector<f64>, f64) {
    let q = basis.dim();
    let mut xtx = DMatrix::zeros(q, q);
    let mut xty = DVector::zeros(q);
    let mut count = 0;
    for s in subjects {
        xtx += s.design.tr_mul(&s.design);
        xty += s.design.tr_mul(&s.y);
        count += s.m;
    }
    if count == 0 {
        return (DVector::zeros(q), 1.0);
    }
    let reg = basis.roughness() * (1e-4 * count as f64) + basis.gram() * (1e-8 * count as f64);
    let d = Cholesky::new(&xtx + reg).map(|c| c.solve(&xty)).unwrap_or_else(|| DVector::zeros(q));
    let rss: f64 = subjects.iter().map(|s| (&s.y - &s.design * &d).norm_squared()).sum();
    (d, (rss / count as f64).max(INIT_VARIANCE_FLOOR))
}

/// Ridge-penalized Poisson fit of one subject's log-intensity deviation
/// from the pooled `c0`.
fn subject_log_intensity_deviation(basis: &BasisSystem, s: &Subject, c0: &DVector<f64>) -> DVector<f64> {
    let q = basis.dim();
    let quad = basis.quad_design();
    let gram = basis.gram();
    let omega = basis.roughness();
    let ridge = gram * 1.0 + omega * 1e-3;
    let mu_q = quad * c0;
    let mut delta = DVector::zeros(q);
    for _ in 0..30 {
        let eta = &mu_q + quad * &delta;
        let w = DVector::from_iterator(eta.len(), eta.iter().zip(basis.quad_weights()).map(|(e, w)| w * e.exp()));
        let grad = &s.design_sum - quad.tr_mul(&w) - &ridge * &delta * 2.0;
        let weighted = DMatrix::from_fn(quad.nrows(), q, |i, j| quad[(i, j)] * w[i]);
        let hess = quad.tr_mul(&weighted) + &ridge * 2.0;
        let Some(chol) = Cholesky::new(hess) else { break };
        let step = chol.solve(&grad);
        let scale = (1.0 / step.amax().max(1.0)).min(1.0);
        delta += step * scale;
        if grad.amax() < 1e-8 {
            break;
        }
    }
    delta
}

/// Ridge-penalized least-squares fit of one subject's response deviation
/// from `ν`; also returns its residual sum of squares and count.
fn subject_response_deviation(basis: &BasisSystem, s: &Subject, d0: &DVector<f64>) -> (DVector<f64>, f64, usize) {
    let resid = &s.y - &s.design * d0;
    let reg = basis.gram() * 0.1 + basis.roughness() * 1e-4;
    let lhs = s.design.tr_mul(&s.design) + reg;
    let e = Cholesky::new(lhs)
        .map(|c| c.solve(&s.design.tr_mul(&resid)))
        .unwrap_or_else(|| DVector::zeros(basis.dim()));
    let rss = (&resid - &s.design * &e).norm_squared();
    (e, rss, s.m)
}

/// Leading `p` principal components of coefficient vectors under the `J`
/// inner product: components, variances and per-vector scores.
fn principal_components(devs: &[DVector<f64>], gram: &DMatrix<f64>, p: usize) -> (DMatrix<f64>, DVector<f64>, Vec<DVector<f64>>) {
    let q = gram.nrows();
    let k = devs.len() as f64;
    let mean = devs.iter().fold(DVector::zeros(q), |a, d| a + d) / k;
    let mut cov = DMatrix::zeros(q, q);
    for d in devs {
        let c = d - &mean;
        cov += &c * c.transpose();
    }
    cov /= (k - 1.0).max(1.0);
    let l = Cholesky::new(gram.clone()).expect("Gram matrix is positive definite").unpack();
    let whitened = l.transpose() * &cov * &l;
    let eig = nalgebra::SymmetricEigen::new((&whitened + whitened.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let u = DMatrix::from_columns(&order[..p].iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>());
    let comps = l.transpose().solve_upper_triangular(&u).expect("invertible");
    let cols: Vec<DVector<f64>> = comps.column_iter().map(|c| c.into_owned()).collect();
    let comps = DMatrix::from_columns(&orthonormalize(&cols, gram).unwrap_or(cols));
    let mut vars: Vec<f64> = order[..p].iter().map(|&i| eig.eigenvalues[i].max(INIT_VARIANCE_FLOOR)).collect();
    // strictly decreasing
    for i in 1..vars.len() {
        if vars[i] >= vars[i - 1] {
            vars[i] = vars[i - 1] * 0.9;
        }
    }
    let jc = gram * &comps;
    let scores = devs.iter().map(|d| jc.tr_mul(d)).collect();
    (comps, DVector::from_vec(vars), scores)
}

fn default_components(basis: &BasisSystem, c0: DVector<f64>, d0: DVector<f64>, p1: usize, p2: usize, var_eta: f64) -> Result<Theta> {
    let q = basis.dim();
    let knots = basis.knots();
    let lo = basis.domain().lo;
    let len = basis.domain().length();
    let seeds = |p: usize| -> Result<DMatrix<f64>> {
        let raw: Vec<DVector<f64>> = (0..p)
            .map(|k| {
                DVector::from_fn(q, |i, _| {
                    let g = ((knots[i + 1] + knots[i + 2] + knots[i + 3]) / 3.0 - lo) / len;
                    (2.0 * g - 1.0).powi(k as i32)
                })
            })
            .collect();
        Ok(DMatrix::from_columns(&orthonormalize(&raw, basis.gram())?))
    };
    let var = |p: usize| DVector::from_fn(p, |k, _| 0.1 * 0.5f64.powi(k as i32));
    Ok(Theta {
        sigma_uv: DMatrix::zeros(p1, p2),
        c0,
        phi: seeds(p1)?,
        d0,
        psi: seeds(p2)?,
        var_u: var(p1),
        var_v: var(p2),
        var_eta,
    })
}

/// Fits the model from the default starting value.
pub fn fit(data: &Dataset, basis: &BasisSystem, config: &FitConfig) -> Result<FitResult> {
    let init = initialize(data, basis, config)?;
    fit_from(data, basis, config, &init)
}

/// Fits the model starting from `init`.
pub fn fit_from(data: &Dataset, basis: &BasisSystem, config: &FitConfig, init: &Theta) -> Result<FitResult> {
    config.validate()?;
    if init.p1() != config.p1 || init.p2() != config.p2 || init.q() != basis.dim() {
        return Err(Error::InvalidParameter("starting value does not match the configuration".into()));
    }
    let subjects = prepare(basis, data)?;
    let objective = Objective::new(basis, &subjects, config.xi, config.p1, config.p2);
    let mut start = Working::from_theta(init)?;
    if config.init_jitter > 0.0 {
        let mut rng = crate::rng::stream(config.seed, u64::MAX, 0);
        for v in start.a.iter_mut().chain(start.b.iter_mut()) {
            let e: f64 = rng.sample(StandardNormal);
            *v += config.init_jitter * e;
        }
    }
    let opts = LbfgsOptions {
        memory: 30,
        max_iters: config.max_outer_iters,
        rel_tol: config.tol,
        patience: 3,
        grad_tol: 1e-7,
    };
    // the response block has curvature of order 1/σ_η² relative to the
    // intensity block; rescale it so the optimizer sees comparable scales
    let scale = variable_scale(&start);
    let outcome = minimize(
        |z| {
            let (v, g) = objective.evaluate(&objective.unpack(&z.component_mul(&scale)))?;
            Ok((-v, -g.component_mul(&scale)))
        },
        start.pack().component_div(&scale),
        &opts,
    )?;
    let best = objective.unpack(&outcome.x.component_mul(&scale));
    let theta = best.to_theta(&objective.geom, basis.gram())?;
    let scores = predict_all(&theta, basis, data)?;
    Ok(FitResult {
        theta,
        objective_trace: outcome.trace.iter().map(|v| -v).collect(),
        scores,
        converged: outcome.converged,
        n_used: data.n(),
        iterations: outcome.iterations,
        evaluations: outcome.evaluations,
    })
}

/// Evaluates the penalized objective and its gradient in working
/// coordinates at `theta` (used to check the chain rule).
#[doc(hidden)]
pub fn working_objective(theta: &Theta, basis: &BasisSystem, data: &Dataset, xi: &Smoothing) -> Result<(f64, DVector<f64>, DVector<f64>)> {
    let subjects = prepare(basis, data)?;
    let obj = Objective::new(basis, &subjects, *xi, theta.p1(), theta.p2());
    let w = Working::from_theta(theta)?;
    let (v, g) = obj.evaluate(&w)?;
    Ok((v, g, w.pack()))
}

/// Evaluates the penalized objective at a working-coordinate vector.
#[doc(hidden)]
pub fn working_value(x: &DVector<f64>, basis: &BasisSystem, data: &Dataset, xi: &Smoothing, p1: usize, p2: usize) -> Result<f64> {
    let subjects = prepare(basis, data)?;
    let obj = Objective::new(basis, &subjects, *xi, p1, p2);
    Ok(obj.evaluate(&obj.unpack(x))?.0)
}

/// Maps a working-coordinate vector to a [`Theta`].
#[doc(hidden)]
pub fn working_to_theta(x: &DVector<f64>, basis: &BasisSystem, p1: usize, p2: usize) -> Result<Theta> {
    let geom = Geometry::new(basis);
    Working::unpack(x, basis.dim(), p1, p2).to_theta(&geom, basis.gram())
}
