//! Laplace-approximated marginal likelihood.
//!
//! For one subject with points `x`, count `m` and responses `y`, the joint
//! log-density of data and latent scores `z = (u, v)` is
//!
//! ```text
//! h(z) = −m/2·log 2πσ² − ‖y − ν(x) − Ψ(x)v‖²/2σ²          (responses)
//!        − ∫λ_u + Σ_j log λ_u(x_j) − log m!                (point process)
//!        − (p/2)·log 2π − ½·log det Σ − ½·zᵀΣ⁻¹z            (scores)
//! ```
//!
//! with `log λ_u = μ + uᵀφ`. `h` is strictly concave in `z`, so Newton's
//! method finds the mode `ẑ`; the marginal is then approximated by
//! `h(ẑ) + (p/2)·log 2π − ½·log det H` with `H = −∇²h(ẑ)`.
//!
//! The routines here work with generic loadings: the intensity components
//! are `Γ·A` and the response components `Γ·B` for arbitrary coefficient
//! matrices `A`, `B`, and the scores have an arbitrary covariance. The
//! constrained parameter [`Theta`] is the special case with `J`-orthonormal
//! loadings; the optimizer uses an unconstrained factorization of the same
//! model. The gradient returned by [`subject_laplace`] is the exact gradient
//! of the Laplace approximation, including the dependence of `log det H` on
//! the mode.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::basis::BasisSystem;
use crate::error::{Error, Result};
use crate::model::{Dataset, MarkedRealization, ParamLayout, Theta};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Default cap on Newton iterations for the mode search.
pub const MAX_NEWTON_ITERS: usize = 100;

/// Gradient-norm tolerance for the mode search.
pub const MODE_TOLERANCE: f64 = 1e-8;

/// Latent-variable model in generic loading coordinates, with everything
/// that does not depend on the subject precomputed.
#[derive(Debug, Clone)]
pub struct LatentModel<'a> {
    basis: &'a BasisSystem,
    c0: DVector<f64>,
    load_u: DMatrix<f64>,
    d0: DVector<f64>,
    load_v: DMatrix<f64>,
    var_eta: f64,
    precision: DMatrix<f64>,
    log_det_sigma: f64,
    /// `μ` at the quadrature nodes.
    mu_q: DVector<f64>,
    /// Intensity components at the quadrature nodes, `Q × p1`.
    phi_q: DMatrix<f64>,
}

impl<'a> LatentModel<'a> {
    pub fn new(
        basis: &'a BasisSystem,
        c0: DVector<f64>,
        load_u: DMatrix<f64>,
        d0: DVector<f64>,
        load_v: DMatrix<f64>,
        sigma: &DMatrix<f64>,
        var_eta: f64,
    ) -> Result<Self> {
        let q = basis.dim();
        if c0.len() != q || d0.len() != q || load_u.nrows() != q || load_v.nrows() != q {
            return Err(Error::LengthMismatch { expected: q, got: c0.len() });
        }
        let p = load_u.ncols() + load_v.ncols();
        if sigma.nrows() != p || sigma.ncols() != p {
            return Err(Error::LengthMismatch { expected: p, got: sigma.nrows() });
        }
        if !(var_eta > 0.0 && var_eta.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise variance {var_eta}")));
        }
        let chol = Cholesky::new(sigma.clone()).ok_or(Error::NotPositiveDefinite)?;
        let log_det_sigma = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let precision = chol.inverse();
        let mu_q = basis.quad_design() * &c0;
        let phi_q = basis.quad_design() * &load_u;
        Ok(Self {
            basis,
            c0,
            load_u,
            d0,
            load_v,
            var_eta,
            precision,
            log_det_sigma,
            mu_q,
            phi_q,
        })
    }

    pub fn from_theta(theta: &Theta, basis: &'a BasisSystem) -> Result<Self> {
        theta.validate_shapes()?;
        Self::new(
            basis,
            theta.c0.clone(),
            theta.phi.clone(),
            theta.d0.clone(),
            theta.psi.clone(),
            &theta.full_sigma(),
            theta.var_eta,
        )
    }

    pub fn p1(&self) -> usize {
        self.load_u.ncols()
    }

    pub fn p2(&self) -> usize {
        self.load_v.ncols()
    }

    pub fn basis(&self) -> &BasisSystem {
        self.basis
    }

    /// Subject-specific quantities that depend on the current loadings.
    fn view(&self, subject: &Subject) -> SubjectView {
        let psi_x = &subject.design * &self.load_v;
        let resid0 = &subject.y - &subject.design * &self.d0;
        SubjectView {
            mu_sum: subject.design_sum.dot(&self.c0),
            phi_sum: self.load_u.tr_mul(&subject.design_sum),
            psi_x,
            resid0,
        }
    }

    /// Point-process intensity at the quadrature nodes times the weights.
    fn weighted_intensity(&self, u: &DVector<f64>) -> DVector<f64> {
        let eta = &self.mu_q + &self.phi_q * u;
        DVector::from_iterator(
            eta.len(),
            eta.iter().zip(self.basis.quad_weights()).map(|(e, w)| w * e.exp()),
        )
    }

    fn split(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let p1 = self.p1();
        (z.rows(0, p1).into_owned(), z.rows(p1, self.p2()).into_owned())
    }

    fn value(&self, subject: &Subject, view: &SubjectView, z: &DVector<f64>) -> f64 {
        let (u, v) = self.split(z);
        let w = self.weighted_intensity(&u);
        let m = subject.m as f64;
        let poisson = -w.sum() + view.mu_sum + view.phi_sum.dot(&u) - subject.log_m_factorial;
        let r = &view.resid0 - &view.psi_x * &v;
        let response = -0.5 * m * (LN_2PI + self.var_eta.ln()) - r.norm_squared() / (2.0 * self.var_eta);
        let p = z.len() as f64;
        let prior = -0.5 * p * LN_2PI - 0.5 * self.log_det_sigma - 0.5 * z.dot(&(&self.precision * z));
        response + poisson + prior
    }

    /// Value, gradient and negative Hessian of the log joint in `z`.
    fn derivatives(&self, subject: &Subject, view: &SubjectView, z: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let (p1, p2) = (self.p1(), self.p2());
        let (u, v) = self.split(z);
        let w = self.weighted_intensity(&u);
        let m = subject.m as f64;
        let r = &view.resid0 - &view.psi_x * &v;
        let kz = &self.precision * z;
        let value = {
            let poisson = -w.sum() + view.mu_sum + view.phi_sum.dot(&u) - subject.log_m_factorial;
            let response = -0.5 * m * (LN_2PI + self.var_eta.ln()) - r.norm_squared() / (2.0 * self.var_eta);
            let prior = -0.5 * (p1 + p2) as f64 * LN_2PI - 0.5 * self.log_det_sigma - 0.5 * z.dot(&kz);
            response + poisson + prior
        };
        let mut grad = -kz;
        let gu = &view.phi_sum - self.phi_q.tr_mul(&w);
        let gv = view.psi_x.tr_mul(&r) / self.var_eta;
        for k in 0..p1 {
            grad[k] += gu[k];
        }
        for l in 0..p2 {
            grad[p1 + l] += gv[l];
        }
        let mut hess = self.precision.clone();
        let weighted = DMatrix::from_fn(self.phi_q.nrows(), p1, |i, k| self.phi_q[(i, k)] * w[i]);
        let huu = self.phi_q.tr_mul(&weighted);
        let hvv = view.psi_x.tr_mul(&view.psi_x) / self.var_eta;
        for a in 0..p1 {
            for b in 0..p1 {
                hess[(a, b)] += huu[(a, b)];
            }
        }
        for a in 0..p2 {
            for b in 0..p2 {
                hess[(p1 + a, p1 + b)] += hvv[(a, b)];
            }
        }
        (value, grad, hess)
    }

    fn find_mode(&self, subject: &Subject, view: &SubjectView, start: Option<&DVector<f64>>) -> PosteriorMode {
        let p = self.p1() + self.p2();
        let mut z = match start {
            Some(s) if s.len() == p && s.iter().all(|v| v.is_finite()) => s.clone(),
            _ => DVector::zeros(p),
        };
        let mut iterations = 0;
        let mut converged = false;
        let (mut h, mut g, mut hess) = self.derivatives(subject, view, &z);
        while iterations < MAX_NEWTON_ITERS {
            if g.norm() <= MODE_TOLERANCE {
                converged = true;
                break;
            }
            iterations += 1;
            let step = match Cholesky::new(hess.clone()) {
                Some(c) => c.solve(&g),
                None => {
                    // Levenberg damping; H is positive definite in exact
                    // arithmetic, so this only guards against round-off.
                    let shift = 1e-8 * hess.diagonal().amax().max(1.0);
                    let damped = &hess + DMatrix::identity(p, p) * shift;
                    match Cholesky::new(damped) {
                        Some(c) => c.solve(&g),
                        None => g.clone(),
                    }
                }
            };
            let slope = g.dot(&step);
            let mut t = 1.0;
            let mut accepted = false;
            if slope < 1e-10 {
                // Inside the quadratic-convergence region the predicted gain
                // is below the resolution of h; take the full step.
                z += &step;
                accepted = true;
            }
            while !accepted && t > 1e-12 {
                let trial = &z + &step * t;
                let ht = self.value(subject, view, &trial);
                if ht.is_finite() && ht >= h + 1e-4 * t * slope {
                    z = trial;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            let (nh, ng, nhess) = self.derivatives(subject, view, &z);
            if !accepted {
                // No ascent possible at working precision.
                h = nh;
                g = ng;
                hess = nhess;
                converged = g.norm() <= 1e3 * MODE_TOLERANCE;
                break;
            }
            h = nh;
            g = ng;
            hess = nhess;
        }
        if !converged && g.norm() <= MODE_TOLERANCE {
            converged = true;
        }
        let (u_hat, v_hat) = self.split(&z);
        PosteriorMode {
            u_hat,
            v_hat,
            neg_hessian: hess,
            log_joint_at_mode: h,
            converged,
            iterations,
            grad_norm: g.norm(),
        }
    }

    /// Posterior mode of the scores for one subject.
    pub fn posterior_mode(&self, subject: &Subject, start: Option<&DVector<f64>>) -> PosteriorMode {
        let view = self.view(subject);
        self.find_mode(subject, &view, start)
    }

    /// Log joint density at given scores.
    pub fn log_joint(&self, subject: &Subject, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let view = self.view(subject);
        let z = stack(u, v);
        self.value(subject, &view, &z)
    }

    /// Laplace log-marginal for one subject, and optionally its exact
    /// gradient with respect to the generic parameters.
    pub fn subject_laplace(&self, subject: &Subject, start: Option<&DVector<f64>>, with_grad: bool) -> Result<SubjectLaplace> {
        let view = self.view(subject);
        let mode = self.find_mode(subject, &view, start);
        if !mode.converged {
            return Err(Error::ModeNotConverged { iterations: mode.iterations, grad_norm: mode.grad_norm });
        }
        let p = self.p1() + self.p2();
        let chol = Cholesky::new(mode.neg_hessian.clone()).ok_or(Error::SaddlePoint)?;
        let log_det_h = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let loglik = mode.log_joint_at_mode + 0.5 * p as f64 * LN_2PI - 0.5 * log_det_h;
        let grad = with_grad.then(|| self.laplace_gradient(subject, &view, &mode, &chol));
        Ok(SubjectLaplace { loglik, mode, grad })
    }

    fn laplace_gradient(
        &self,
        subject: &Subject,
        view: &SubjectView,
        mode: &PosteriorMode,
        chol: &Cholesky<f64, Dyn>,
    ) -> GenericGradient {
        let (p1, p2) = (self.p1(), self.p2());
        let p = p1 + p2;
        let quad = self.basis.quad_design();
        let n_q = quad.nrows();
        let u = &mode.u_hat;
        let v = &mode.v_hat;
        let z = stack(u, v);
        let cov = chol.inverse();
        let cov_uu = cov.view((0, 0), (p1, p1)).into_owned();
        let cov_vv = cov.view((p1, p1), (p2, p2)).into_owned();

        let w = self.weighted_intensity(u);
        // s_Q = diag(Φ_Q P_uu Φ_Qᵀ)
        let phi_cov = &self.phi_q * &cov_uu;
        let s: DVector<f64> = DVector::from_fn(n_q, |i, _| phi_cov.row(i).dot(&self.phi_q.row(i)));
        // a = ∂ log det H / ∂z has only u-entries; b = H⁻¹a.
        let a_u = self.phi_q.tr_mul(&w.component_mul(&s));
        let mut a = DVector::zeros(p);
        a.rows_mut(0, p1).copy_from(&a_u);
        let b = chol.solve(&a);
        let b_u = b.rows(0, p1).into_owned();
        let b_v = b.rows(p1, p2).into_owned();

        // intensity block
        let phi_b = &self.phi_q * &b_u;
        let omega = DVector::from_fn(n_q, |i, _| w[i] * (-1.0 + 0.5 * phi_b[i] - 0.5 * s[i]));
        let grad_c0 = &subject.design_sum + quad.tr_mul(&omega);
        let weighted_phi = DMatrix::from_fn(n_q, p1, |i, k| w[i] * self.phi_q[(i, k)]);
        let score_gap = &subject.design_sum - quad.tr_mul(&w);
        let grad_load_u = &grad_c0 * u.transpose() - (&score_gap * b_u.transpose()) * 0.5
            - quad.tr_mul(&weighted_phi) * &cov_uu;

        // response block
        let s2 = self.var_eta;
        let r = &view.resid0 - &view.psi_x * v;
        let psi_b = &view.psi_x * &b_v;
        let grad_d0 = subject.design.tr_mul(&(&r + &psi_b * 0.5)) / s2;
        let grad_load_v = &grad_d0 * v.transpose()
            - subject.design.tr_mul(&r) * b_v.transpose() * (0.5 / s2)
            - subject.design.tr_mul(&(&view.psi_x * &cov_vv)) / s2;
        let trace_term = (view.psi_x.tr_mul(&view.psi_x) * &cov_vv).trace();
        let m = subject.m as f64;
        let grad_var_eta = -0.5 * m / s2
            + r.norm_squared() / (2.0 * s2 * s2)
            + 0.5 * psi_b.dot(&r) / (s2 * s2)
            + 0.5 * trace_term / (s2 * s2);

        // covariance block, as a symmetric matrix gradient
        let k = &self.precision;
        let kz = k * &z;
        let kb = k * &b;
        let mut grad_sigma = k * (-0.5) + &kz * kz.transpose() * 0.5
            - (&kb * kz.transpose() + &kz * kb.transpose()) * 0.25
            + k * &cov * k * 0.5;
        grad_sigma = (&grad_sigma + grad_sigma.transpose()) * 0.5;

        GenericGradient {
            c0: grad_c0,
            load_u: grad_load_u,
            d0: grad_d0,
            load_v: grad_load_v,
            sigma: grad_sigma,
            var_eta: grad_var_eta,
        }
    }
}

fn stack(u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut z = DVector::zeros(u.len() + v.len());
    z.rows_mut(0, u.len()).copy_from(u);
    z.rows_mut(u.len(), v.len()).copy_from(v);
    z
}

/// Subject data with its spline design matrix precomputed.
#[derive(Debug, Clone)]
pub struct Subject {
    pub m: usize,
    /// `m × q` design at the subject's points.
    pub design: DMatrix<f64>,
    /// `Γ(x)ᵀ1`.
    pub design_sum: DVector<f64>,
    pub y: DVector<f64>,
    pub log_m_factorial: f64,
}

impl Subject {
    pub fn new(basis: &BasisSystem, obs: &MarkedRealization) -> Result<Self> {
        if obs.x.len() != obs.y.len() {
            return Err(Error::InvalidRealization("points and responses differ in length".into()));
        }
        let design = basis.eval_design(&obs.x)?;
        let design_sum = DVector::from_iterator(design.ncols(), design.column_iter().map(|c| c.sum()));
        let m = obs.m();
        Ok(Self {
            m,
            design,
            design_sum,
            y: DVector::from_column_slice(&obs.y),
            log_m_factorial: ln_gamma(m as f64 + 1.0),
        })
    }
}

/// Precomputes the design matrices of every subject.
pub fn prepare(basis: &BasisSystem, data: &Dataset) -> Result<Vec<Subject>> {
    data.realizations.par_iter().map(|r| Subject::new(basis, r)).collect()
}

struct SubjectView {
    mu_sum: f64,
    phi_sum: DVector<f64>,
    psi_x: DMatrix<f64>,
    resid0: DVector<f64>,
}

/// Gradient of a subject's Laplace log-marginal with respect to the generic
/// parameters. `sigma` is the symmetric matrix `M` such that a symmetric
/// perturbation `E` of the score covariance changes the value by `tr(M E)`.
#[derive(Debug, Clone)]
pub struct GenericGradient {
    pub c0: DVector<f64>,
    pub load_u: DMatrix<f64>,
    pub d0: DVector<f64>,
    pub load_v: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub var_eta: f64,
}

impl GenericGradient {
    /// Maps onto the stacked parameter of [`Theta`] (only the entries of
    /// the score covariance that are free parameters contribute).
    pub fn to_theta_order(&self) -> DVector<f64> {
        let (p1, p2, q) = (self.load_u.ncols(), self.load_v.ncols(), self.c0.len());
        let layout = ParamLayout::new(p1, p2, q);
        let mut out = DVector::zeros(layout.dim());
        for l in 0..p2 {
            for k in 0..p1 {
                out[layout.sigma_uv.start + l * p1 + k] = 2.0 * self.sigma[(k, p1 + l)];
            }
        }
        out.rows_mut(layout.c0.start, q).copy_from(&self.c0);
        out.rows_mut(layout.phi.start, p1 * q).copy_from_slice(self.load_u.as_slice());
        out.rows_mut(layout.d0.start, q).copy_from(&self.d0);
        out.rows_mut(layout.psi.start, p2 * q).copy_from_slice(self.load_v.as_slice());
        for k in 0..p1 {
            out[layout.var_u.start + k] = self.sigma[(k, k)];
        }
        for l in 0..p2 {
            out[layout.var_v.start + l] = self.sigma[(p1 + l, p1 + l)];
        }
        out[layout.var_eta] = self.var_eta;
        out
    }
}

/// Result of the Laplace approximation for one subject.
#[derive(Debug, Clone)]
pub struct SubjectLaplace {
    pub loglik: f64,
    pub mode: PosteriorMode,
    pub grad: Option<GenericGradient>,
}

/// Mode of the log joint density in the scores.
#[derive(Debug, Clone)]
pub struct PosteriorMode {
    pub u_hat: DVector<f64>,
    pub v_hat: DVector<f64>,
    /// Negative Hessian of the log joint at the mode.
    pub neg_hessian: DMatrix<f64>,
    pub log_joint_at_mode: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl PosteriorMode {
    pub fn stacked(&self) -> DVector<f64> {
        stack(&self.u_hat, &self.v_hat)
    }
}

/// Complete-data log density `log f(y|x,m,v) + log f(x,m|u) + log f(u,v)`.
pub fn log_joint(
    theta: &Theta,
    basis: &BasisSystem,
    obs: &MarkedRealization,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<f64> {
    let model = LatentModel::from_theta(theta, basis)?;
    if u.len() != theta.p1() || v.len() != theta.p2() {
        return Err(Error::LengthMismatch { expected: theta.p1() + theta.p2(), got: u.len() + v.len() });
    }
    let subject = Subject::new(basis, obs)?;
    Ok(model.log_joint(&subject, u, v))
}

/// Newton search for the posterior mode of `(u, v)`, starting at zero.
pub fn posterior_mode(theta: &Theta, basis: &BasisSystem, obs: &MarkedRealization) -> Result<PosteriorMode> {
    let model = LatentModel::from_theta(theta, basis)?;
    let subject = Subject::new(basis, obs)?;
    Ok(model.posterior_mode(&subject, None))
}

/// Laplace approximation of `log f(x, m, y)`.
pub fn laplace_loglik(theta: &Theta, basis: &BasisSystem, obs: &MarkedRealization) -> Result<f64> {
    let model = LatentModel::from_theta(theta, basis)?;
    let subject = Subject::new(basis, obs)?;
    Ok(model.subject_laplace(&subject, None, false)?.loglik)
}

/// Gradient of [`laplace_loglik`] with respect to the stacked parameter.
pub fn laplace_loglik_grad(theta: &Theta, basis: &BasisSystem, obs: &MarkedRealization) -> Result<DVector<f64>> {
    let model = LatentModel::from_theta(theta, basis)?;
    let subject = Subject::new(basis, obs)?;
    let out = model.subject_laplace(&subject, None, true)?;
    Ok(out.grad.expect("gradient requested").to_theta_order())
}

/// Smoothing parameters `(ξ_μ, ξ_φ, ξ_ν, ξ_ψ)`.
pub type Smoothing = [f64; 4];

/// The four roughness penalties `(P(μ), Σ P(φ_k), P(ν), Σ P(ψ_k))`.
pub fn roughness_terms(theta: &Theta, basis: &BasisSystem) -> [f64; 4] {
    let omega = basis.roughness();
    let quad = |c: nalgebra::DVectorView<f64>| c.dot(&(omega * c));
    let sum_cols = |m: &DMatrix<f64>| m.column_iter().map(|c| quad(c.as_view())).sum::<f64>();
    [quad(theta.c0.as_view()), sum_cols(&theta.phi), quad(theta.d0.as_view()), sum_cols(&theta.psi)]
}

/// Average Laplace log-likelihood minus the weighted roughness penalties.
pub fn penalized_loglik(theta: &Theta, basis: &BasisSystem, data: &Dataset, xi: &Smoothing) -> Result<f64> {
    check_smoothing(xi)?;
    let model = LatentModel::from_theta(theta, basis)?;
    let subjects = prepare(basis, data)?;
    let per: Vec<f64> = subjects
        .par_iter()
        .map(|s| model.subject_laplace(s, None, false).map(|o| o.loglik))
        .collect::<Result<_>>()?;
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    let pen = roughness_terms(theta, basis);
    Ok(mean - (0..4).map(|i| xi[i] * pen[i]).sum::<f64>())
}

/// Gradient of [`penalized_loglik`] in the stacked parameter order.
pub fn penalized_loglik_grad(theta: &Theta, basis: &BasisSystem, data: &Dataset, xi: &Smoothing) -> Result<DVector<f64>> {
    check_smoothing(xi)?;
    let model = LatentModel::from_theta(theta, basis)?;
    let subjects = prepare(basis, data)?;
    let per: Vec<DVector<f64>> = subjects
        .par_iter()
        .map(|s| {
            model
                .subject_laplace(s, None, true)
                .map(|o| o.grad.expect("gradient requested").to_theta_order())
        })
        .collect::<Result<_>>()?;
    let mut total = DVector::zeros(theta.dim());
    for g in &per {
        total += g;
    }
    total /= per.len() as f64;
    total -= penalty_gradient(theta, basis, xi);
    Ok(total)
}

/// Gradient of `Σ_i ξ_i P_i(θ)` in stacked order.
pub fn penalty_gradient(theta: &Theta, basis: &BasisSystem, xi: &Smoothing) -> DVector<f64> {
    let layout = ParamLayout::new(theta.p1(), theta.p2(), theta.q());
    let omega = basis.roughness();
    let q = theta.q();
    let mut g = DVector::zeros(layout.dim());
    g.rows_mut(layout.c0.start, q).copy_from(&(omega * &theta.c0 * (2.0 * xi[0])));
    for k in 0..theta.p1() {
        g.rows_mut(layout.phi_col(k), q).copy_from(&(omega * theta.phi.column(k) * (2.0 * xi[1])));
    }
    g.rows_mut(layout.d0.start, q).copy_from(&(omega * &theta.d0 * (2.0 * xi[2])));
    for l in 0..theta.p2() {
        g.rows_mut(layout.psi_col(l), q).copy_from(&(omega * theta.psi.column(l) * (2.0 * xi[3])));
    }
    g
}

pub(crate) fn check_smoothing(xi: &Smoothing) -> Result<()> {
    if xi.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidParameter(format!("smoothing parameters must be nonnegative, got {xi:?}")));
    }
    Ok(())
}

/// Laplace approximation of the posterior means `E(u | data)` and
/// `E(v | data)`, i.e. the posterior mode.
pub fn predict_scores(theta: &Theta, basis: &BasisSystem, obs: &MarkedRealization) -> Result<(DVector<f64>, DVector<f64>)> {
    let mode = posterior_mode(theta, basis, obs)?;
    if !mode.converged {
        return Err(Error::ModeNotConverged { iterations: mode.iterations, grad_norm: mode.grad_norm });
    }
    Ok((mode.u_hat, mode.v_hat))
}

/// Predicted scores for every subject of a dataset, computed in parallel.
pub fn predict_all(theta: &Theta, basis: &BasisSystem, data: &Dataset) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
    let model = LatentModel::from_theta(theta, basis)?;
    let subjects = prepare(basis, data)?;
    subjects
        .par_iter()
        .map(|s| {
            let mode = model.posterior_mode(s, None);
            if mode.converged {
                Ok((mode.u_hat, mode.v_hat))
            } else {
                Err(Error::ModeNotConverged { iterations: mode.iterations, grad_norm: mode.grad_norm })
            }
        })
        .collect()
}
