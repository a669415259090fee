//! Parameter vector, its constraint system and data containers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, BasisSystem, Interval};
use crate::error::{Error, Result};

/// Relative tolerance used to decide the "first nonzero" coefficient of a
/// component when fixing its sign.
pub const SIGN_TOLERANCE: f64 = 1e-8;

/// Full parameter of the joint model.
///
/// Functional parameters are stored as spline coefficients: `c0` for the
/// log baseline intensity `μ`, the columns of `phi` for the log-intensity
/// components `φ_k`, `d0` for the mean response `ν` and the columns of `psi`
/// for the response components `ψ_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    /// Cross-covariance `Σ_uv`, `p1 × p2`.
    pub sigma_uv: DMatrix<f64>,
    pub c0: DVector<f64>,
    /// `q × p1`, column `k` holds `c_k`.
    pub phi: DMatrix<f64>,
    pub d0: DVector<f64>,
    /// `q × p2`, column `k` holds `d_k`.
    pub psi: DMatrix<f64>,
    pub var_u: DVector<f64>,
    pub var_v: DVector<f64>,
    pub var_eta: f64,
}

impl Theta {
    pub fn p1(&self) -> usize {
        self.phi.ncols()
    }

    pub fn p2(&self) -> usize {
        self.psi.ncols()
    }

    pub fn q(&self) -> usize {
        self.c0.len()
    }

    /// Dimension `s` of the stacked parameter vector.
    pub fn dim(&self) -> usize {
        param_dim(self.p1(), self.p2(), self.q())
    }

    /// Checks that all blocks have consistent shapes and the scalar
    /// parameters are admissible.
    pub fn validate_shapes(&self) -> Result<()> {
        let (p1, p2, q) = (self.p1(), self.p2(), self.q());
        let bad = |what: &str| Err(Error::InvalidParameter(format!("inconsistent shape: {what}")));
        if p1 == 0 || p2 == 0 {
            return bad("at least one component per process is required");
        }
        if self.phi.nrows() != q || self.psi.nrows() != q || self.d0.len() != q {
            return bad("coefficient lengths differ");
        }
        if self.sigma_uv.nrows() != p1 || self.sigma_uv.ncols() != p2 {
            return bad("sigma_uv");
        }
        if self.var_u.len() != p1 || self.var_v.len() != p2 {
            return bad("variances");
        }
        if !(self.var_eta > 0.0) || self.var_u.iter().chain(self.var_v.iter()).any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidParameter("variances must be positive".into()));
        }
        Ok(())
    }

    /// Covariance of the stacked scores `(u, v)`.
    pub fn full_sigma(&self) -> DMatrix<f64> {
        let (p1, p2) = (self.p1(), self.p2());
        let mut s = DMatrix::zeros(p1 + p2, p1 + p2);
        for k in 0..p1 {
            s[(k, k)] = self.var_u[k];
        }
        for l in 0..p2 {
            s[(p1 + l, p1 + l)] = self.var_v[l];
        }
        for k in 0..p1 {
            for l in 0..p2 {
                s[(k, p1 + l)] = self.sigma_uv[(k, l)];
                s[(p1 + l, k)] = self.sigma_uv[(k, l)];
            }
        }
        s
    }

    pub fn sigma_is_pd(&self) -> bool {
        self.full_sigma().cholesky().is_some()
    }

    /// Cross-correlation matrix `ρ_uv`.
    pub fn cross_correlation(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.p1(), self.p2(), |k, l| {
            self.sigma_uv[(k, l)] / (self.var_u[k] * self.var_v[l]).sqrt()
        })
    }

    /// Stacks the parameter as `(vec Σ_uv, c0, c_1..c_p1, d0, d_1..d_p2,
    /// σ_u², σ_v², σ_η²)`, with `vec` in column-major order.
    pub fn to_vec(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend(self.sigma_uv.iter());
        out.extend(self.c0.iter());
        out.extend(self.phi.iter());
        out.extend(self.d0.iter());
        out.extend(self.psi.iter());
        out.extend(self.var_u.iter());
        out.extend(self.var_v.iter());
        out.push(self.var_eta);
        DVector::from_vec(out)
    }

    pub fn from_vec(p1: usize, p2: usize, q: usize, v: &[f64]) -> Result<Self> {
        let s = param_dim(p1, p2, q);
        if v.len() != s {
            return Err(Error::LengthMismatch { expected: s, got: v.len() });
        }
        let layout = ParamLayout::new(p1, p2, q);
        Ok(Self {
            sigma_uv: DMatrix::from_column_slice(p1, p2, &v[layout.sigma_uv.clone()]),
            c0: DVector::from_column_slice(&v[layout.c0.clone()]),
            phi: DMatrix::from_column_slice(q, p1, &v[layout.phi.clone()]),
            d0: DVector::from_column_slice(&v[layout.d0.clone()]),
            psi: DMatrix::from_column_slice(q, p2, &v[layout.psi.clone()]),
            var_u: DVector::from_column_slice(&v[layout.var_u.clone()]),
            var_v: DVector::from_column_slice(&v[layout.var_v.clone()]),
            var_eta: v[layout.var_eta],
        })
    }

    /// Largest `|c_kᵀJc_l − δ_kl|` over both component families.
    pub fn orthonormality_residual(&self, gram: &DMatrix<f64>) -> f64 {
        let res = |m: &DMatrix<f64>| {
            let g = m.transpose() * gram * m;
            let mut worst: f64 = 0.0;
            for i in 0..g.nrows() {
                for j in 0..g.ncols() {
                    let target = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((g[(i, j)] - target).abs());
                }
            }
            worst
        };
        res(&self.phi).max(res(&self.psi))
    }

    /// Log intensity `μ(x) + uᵀφ(x)` exponentiated at each point.
    pub fn intensity(&self, basis: &BasisSystem, u: &DVector<f64>, x: &[f64]) -> Result<DVector<f64>> {
        if u.len() != self.p1() {
            return Err(Error::LengthMismatch { expected: self.p1(), got: u.len() });
        }
        let design = basis.eval_design(x)?;
        let coef = &self.c0 + &self.phi * u;
        Ok((design * coef).map(f64::exp))
    }

    /// Mean response `ν(x) + vᵀψ(x)` at each point.
    pub fn mean_response(&self, basis: &BasisSystem, v: &DVector<f64>, x: &[f64]) -> Result<DVector<f64>> {
        if v.len() != self.p2() {
            return Err(Error::LengthMismatch { expected: self.p2(), got: v.len() });
        }
        let design = basis.eval_design(x)?;
        let coef = &self.d0 + &self.psi * v;
        Ok(design * coef)
    }

    /// Flips the sign of component `k` of the intensity process, together
    /// with row `k` of `Σ_uv`.
    pub fn flip_u(&mut self, k: usize) {
        self.phi.column_mut(k).neg_mut();
        self.sigma_uv.row_mut(k).neg_mut();
    }

    /// Flips the sign of component `l` of the response process, together
    /// with column `l` of `Σ_uv`.
    pub fn flip_v(&mut self, l: usize) {
        self.psi.column_mut(l).neg_mut();
        self.sigma_uv.column_mut(l).neg_mut();
    }

    /// Makes the first non-negligible coefficient of every component
    /// positive, flipping the matching row or column of `Σ_uv`.
    pub fn normalize_signs(&self, gram: &DMatrix<f64>) -> Result<Theta> {
        let mut out = self.clone();
        for k in 0..self.p1() {
            if leading_sign(&self.phi.column(k).into_owned(), gram).ok_or(Error::DegenerateComponent { index: k })? < 0.0 {
                out.flip_u(k);
            }
        }
        for l in 0..self.p2() {
            let s = leading_sign(&self.psi.column(l).into_owned(), gram)
                .ok_or(Error::DegenerateComponent { index: self.p1() + l })?;
            if s < 0.0 {
                out.flip_v(l);
            }
        }
        Ok(out)
    }
}

fn leading_sign(c: &DVector<f64>, gram: &DMatrix<f64>) -> Option<f64> {
    let norm = c.dot(&(gram * c)).max(0.0).sqrt();
    let tol = SIGN_TOLERANCE * norm;
    c.iter().find(|v| v.abs() > tol).map(|v| v.signum())
}

/// `s = p1·p2 + (p1 + 1)q + (p2 + 1)q + p1 + p2 + 1`.
pub fn param_dim(p1: usize, p2: usize, q: usize) -> usize {
    p1 * p2 + (p1 + 1) * q + (p2 + 1) * q + p1 + p2 + 1
}

/// Index ranges of the blocks of the stacked parameter vector.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub p1: usize,
    pub p2: usize,
    pub q: usize,
    pub sigma_uv: std::ops::Range<usize>,
    pub c0: std::ops::Range<usize>,
    pub phi: std::ops::Range<usize>,
    pub d0: std::ops::Range<usize>,
    pub psi: std::ops::Range<usize>,
    pub var_u: std::ops::Range<usize>,
    pub var_v: std::ops::Range<usize>,
    pub var_eta: usize,
}

impl ParamLayout {
    pub fn new(p1: usize, p2: usize, q: usize) -> Self {
        let mut at = 0;
        let mut take = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        let sigma_uv = take(p1 * p2);
        let c0 = take(q);
        let phi = take(p1 * q);
        let d0 = take(q);
        let psi = take(p2 * q);
        let var_u = take(p1);
        let var_v = take(p2);
        let var_eta = take(1).start;
        Self { p1, p2, q, sigma_uv, c0, phi, d0, psi, var_u, var_v, var_eta }
    }

    pub fn dim(&self) -> usize {
        self.var_eta + 1
    }

    /// Offset of `c_k` (`k` is 0-based).
    pub fn phi_col(&self, k: usize) -> usize {
        self.phi.start + k * self.q
    }

    pub fn psi_col(&self, l: usize) -> usize {
        self.psi.start + l * self.q
    }

    /// Human-readable names of every coordinate, in stacking order.
    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.dim());
        for l in 0..self.p2 {
            for k in 0..self.p1 {
                out.push(format!("sigma_uv[{},{}]", k + 1, l + 1));
            }
        }
        out.extend((0..self.q).map(|j| format!("c0[{}]", j + 1)));
        for k in 0..self.p1 {
            out.extend((0..self.q).map(|j| format!("c{}[{}]", k + 1, j + 1)));
        }
        out.extend((0..self.q).map(|j| format!("d0[{}]", j + 1)));
        for l in 0..self.p2 {
            out.extend((0..self.q).map(|j| format!("d{}[{}]", l + 1, j + 1)));
        }
        out.extend((0..self.p1).map(|k| format!("var_u[{}]", k + 1)));
        out.extend((0..self.p2).map(|l| format!("var_v[{}]", l + 1)));
        out.push("var_eta".into());
        out
    }
}

/// Gram-Schmidt under the inner product `⟨a, b⟩ = aᵀJb`, preserving span and
/// order. Fails on (numerical) rank deficiency.
pub fn orthonormalize(coefs: &[DVector<f64>], gram: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(coefs.len());
    for (index, c) in coefs.iter().enumerate() {
        let original = c.dot(&(gram * c)).max(0.0).sqrt();
        let mut w = c.clone();
        // two passes of modified Gram-Schmidt keep the residual at round-off
        for _ in 0..2 {
            for e in &out {
                let proj = e.dot(&(gram * &w));
                w.axpy(-proj, e, 1.0);
            }
        }
        let norm = w.dot(&(gram * &w)).max(0.0).sqrt();
        if !(norm > 1e-10 * original.max(f64::MIN_POSITIVE)) || original == 0.0 {
            return Err(Error::RankDeficient { index });
        }
        out.push(w / norm);
    }
    Ok(out)
}

/// One subject: sorted grid points and the responses observed there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedRealization {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl MarkedRealization {
    /// Builds a realization, sorting the points (responses follow their
    /// points).
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InvalidRealization(format!(
                "{} points but {} responses",
                x.len(),
                y.len()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidRealization("non-finite value".into()));
        }
        let mut pairs: Vec<(f64, f64)> = x.into_iter().zip(y).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (x, y) = pairs.into_iter().unzip();
        Ok(Self { x, y })
    }

    pub fn empty() -> Self {
        Self { x: Vec::new(), y: Vec::new() }
    }

    pub fn m(&self) -> usize {
        self.x.len()
    }
}

/// Independent realizations observed on a common domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub realizations: Vec<MarkedRealization>,
    pub domain: Interval,
}

impl Dataset {
    pub fn new(realizations: Vec<MarkedRealization>, domain: Interval) -> Result<Self> {
        if realizations.is_empty() {
            return Err(Error::InvalidDataset("at least one realization is required".into()));
        }
        for (i, r) in realizations.iter().enumerate() {
            for &x in &r.x {
                if !domain.contains(x) {
                    return Err(Error::InvalidDataset(format!(
                        "subject {i}: point {x} outside [{}, {}]",
                        domain.lo, domain.hi
                    )));
                }
            }
        }
        Ok(Self { realizations, domain })
    }

    pub fn n(&self) -> usize {
        self.realizations.len()
    }

    pub fn total_points(&self) -> usize {
        self.realizations.iter().map(|r| r.m()).sum()
    }

    /// Dataset made of the given subjects (repetitions allowed).
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            realizations: idx.iter().map(|&i| self.realizations[i].clone()).collect(),
            domain: self.domain,
        }
    }
}

/// Self-describing JSON form of a [`Theta`] together with its basis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaDocument {
    pub basis: BasisSpec,
    pub p1: usize,
    pub p2: usize,
    /// Rows of `Σ_uv`.
    pub sigma_uv: Vec<Vec<f64>>,
    pub c0: Vec<f64>,
    /// One coefficient vector per intensity component.
    pub phi: Vec<Vec<f64>>,
    pub d0: Vec<f64>,
    pub psi: Vec<Vec<f64>>,
    pub var_u: Vec<f64>,
    pub var_v: Vec<f64>,
    pub var_eta: f64,
}

impl ThetaDocument {
    pub fn new(theta: &Theta, basis: BasisSpec) -> Self {
        let cols = |m: &DMatrix<f64>| m.column_iter().map(|c| c.iter().copied().collect()).collect();
        Self {
            basis,
            p1: theta.p1(),
            p2: theta.p2(),
            sigma_uv: theta.sigma_uv.row_iter().map(|r| r.iter().copied().collect()).collect(),
            c0: theta.c0.iter().copied().collect(),
            phi: cols(&theta.phi),
            d0: theta.d0.iter().copied().collect(),
            psi: cols(&theta.psi),
            var_u: theta.var_u.iter().copied().collect(),
            var_v: theta.var_v.iter().copied().collect(),
            var_eta: theta.var_eta,
        }
    }

    pub fn theta(&self) -> Result<Theta> {
        let q = self.c0.len();
        let mat_cols = |v: &[Vec<f64>], n: usize| -> Result<DMatrix<f64>> {
            if v.len() != n || v.iter().any(|c| c.len() != q) {
                return Err(Error::InvalidParameter("component coefficient shape".into()));
            }
            Ok(DMatrix::from_fn(q, n, |i, k| v[k][i]))
        };
        if self.sigma_uv.len() != self.p1 || self.sigma_uv.iter().any(|r| r.len() != self.p2) {
            return Err(Error::InvalidParameter("sigma_uv shape".into()));
        }
        let theta = Theta {
            sigma_uv: DMatrix::from_fn(self.p1, self.p2, |k, l| self.sigma_uv[k][l]),
            c0: DVector::from_column_slice(&self.c0),
            phi: mat_cols(&self.phi, self.p1)?,
            d0: DVector::from_column_slice(&self.d0),
            psi: mat_cols(&self.psi, self.p2)?,
            var_u: DVector::from_column_slice(&self.var_u),
            var_v: DVector::from_column_slice(&self.var_v),
            var_eta: self.var_eta,
        };
        theta.validate_shapes()?;
        Ok(theta)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, DEFAULT_QUAD_ORDER};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn unit_basis() -> BasisSystem {
        build_basis(Interval::unit(), 5, DEFAULT_QUAD_ORDER).unwrap()
    }

    fn toy_theta(b: &BasisSystem) -> Theta {
        let q = b.dim();
        let raw: Vec<DVector<f64>> = (0..4)
            .map(|k| DVector::from_fn(q, |i, _| ((i + 1) as f64 * (k as f64 + 0.7)).sin() + 0.1))
            .collect();
        let ortho = orthonormalize(&raw, b.gram()).unwrap();
        Theta {
            sigma_uv: DMatrix::from_row_slice(2, 2, &[0.1, -0.02, 0.03, 0.04]),
            c0: b.affine_coefficients(2.0, 0.5),
            phi: DMatrix::from_columns(&ortho[..2]),
            d0: b.affine_coefficients(0.0, 5.0),
            psi: DMatrix::from_columns(&ortho[2..]),
            var_u: DVector::from_vec(vec![0.09, 0.03]),
            var_v: DVector::from_vec(vec![0.5, 0.2]),
            var_eta: 0.09,
        }
    }

    #[test]
    fn full_sigma_identity() {
        let b = unit_basis();
        let mut t = toy_theta(&b);
        t.sigma_uv.fill(0.0);
        t.var_u.fill(1.0);
        t.var_v.fill(1.0);
        assert_eq!(t.full_sigma(), DMatrix::identity(4, 4));
    }

    #[test]
    fn full_sigma_is_positive_definite() {
        let b = unit_basis();
        let t = toy_theta(&b);
        let s = t.full_sigma();
        assert_eq!(s, s.transpose());
        let min = s.symmetric_eigen().eigenvalues.min();
        assert!(min > 0.0);
        assert!(t.sigma_is_pd());
    }

    #[test]
    fn stacking_round_trip_and_dimension() {
        let b = unit_basis();
        let t = toy_theta(&b);
        assert_eq!(t.dim(), 63);
        assert_eq!(param_dim(2, 2, 14), 93);
        let v = t.to_vec();
        let back = Theta::from_vec(2, 2, 9, v.as_slice()).unwrap();
        assert_eq!(back, t);
        assert_eq!(ParamLayout::new(2, 2, 9).labels().len(), 63);
    }

    #[test]
    fn orthonormalize_gram_identity() {
        let b = unit_basis();
        let raw: Vec<DVector<f64>> = (0..3)
            .map(|k| DVector::from_fn(9, |i, _| ((i * 3 + k * 5) % 7) as f64 - 2.0 + 0.1 * k as f64))
            .collect();
        let out = orthonormalize(&raw, b.gram()).unwrap();
        let m = DMatrix::from_columns(&out);
        let g = m.transpose() * b.gram() * &m;
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(g[(i, j)], if i == j { 1.0 } else { 0.0 }, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn orthonormalize_identity_metric() {
        let j = DMatrix::identity(3, 3);
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let e12 = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        let out = orthonormalize(&[e1.clone(), e12], &j).unwrap();
        assert_abs_diff_eq!(out[0], e1, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], DVector::from_vec(vec![0.0, 1.0, 0.0]), epsilon = 1e-15);
        // already orthonormal input is unchanged
        let again = orthonormalize(&out, &j).unwrap();
        assert_abs_diff_eq!(again[1], out[1], epsilon = 1e-15);
    }

    #[test]
    fn orthonormalize_rank_deficiency() {
        let j = DMatrix::identity(3, 3);
        let a = DVector::from_vec(vec![1.0, 2.0, 0.0]);
        let b = &a * 3.0;
        assert!(matches!(orthonormalize(&[a, b], &j), Err(Error::RankDeficient { index: 1 })));
    }

    #[test]
    fn sign_normalization() {
        let b = unit_basis();
        let t = toy_theta(&b);
        let n1 = t.normalize_signs(b.gram()).unwrap();
        for k in 0..2 {
            assert!(n1.phi[(0, k)] > 0.0 && n1.psi[(0, k)] > 0.0);
        }
        assert_eq!(n1.normalize_signs(b.gram()).unwrap(), n1);
        let mut flipped = n1.clone();
        flipped.flip_u(0);
        assert_eq!(flipped.sigma_uv.row(0), -n1.sigma_uv.row(0));
        assert_eq!(flipped.normalize_signs(b.gram()).unwrap(), n1);
        // eigenvalues of the score covariance are preserved
        let mut e1: Vec<f64> = t.full_sigma().symmetric_eigen().eigenvalues.iter().copied().collect();
        let mut e2: Vec<f64> = n1.full_sigma().symmetric_eigen().eigenvalues.iter().copied().collect();
        e1.sort_by(f64::total_cmp);
        e2.sort_by(f64::total_cmp);
        for (a, b) in e1.iter().zip(&e2) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn degenerate_component_is_reported() {
        let b = unit_basis();
        let mut t = toy_theta(&b);
        t.psi.column_mut(1).fill(0.0);
        assert!(matches!(t.normalize_signs(b.gram()), Err(Error::DegenerateComponent { index: 3 })));
    }

    #[test]
    fn intensity_and_mean() {
        let b = unit_basis();
        let mut t = toy_theta(&b);
        t.phi.set_column(0, &b.interpolate(|x| 2f64.sqrt() * (PI * x).sin()));
        let x = [0.1, 0.5, 0.9];
        let base = t.intensity(&b, &DVector::zeros(2), &x).unwrap();
        let shifted = t.intensity(&b, &DVector::from_vec(vec![1.0, 0.0]), &x).unwrap();
        let design = b.eval_design(&x).unwrap();
        let phi1 = &design * t.phi.column(0);
        for j in 0..3 {
            assert_abs_diff_eq!(base[j], (2.0 + 0.5 * x[j]).exp(), epsilon = 1e-12);
            assert_abs_diff_eq!(shifted[j], base[j] * phi1[j].exp(), epsilon = 1e-12);
        }
        let mean = t.mean_response(&b, &DVector::zeros(2), &[0.5]).unwrap();
        assert_abs_diff_eq!(mean[0], 2.5, epsilon = 1e-13);
        assert!(t.intensity(&b, &DVector::zeros(2), &[1.5]).is_err());
    }

    #[test]
    fn document_round_trip() {
        let b = unit_basis();
        let t = toy_theta(&b);
        let doc = ThetaDocument::new(&t, b.spec());
        let json = doc.to_json().unwrap();
        let back = ThetaDocument::from_json(&json).unwrap();
        assert_eq!(back.theta().unwrap(), t);
        assert_eq!(back.basis, b.spec());
    }

    #[test]
    fn realization_validation() {
        let r = MarkedRealization::new(vec![0.5, 0.1], vec![1.0, 2.0]).unwrap();
        assert_eq!(r.x, vec![0.1, 0.5]);
        assert_eq!(r.y, vec![2.0, 1.0]);
        assert!(MarkedRealization::new(vec![0.1], vec![]).is_err());
        let d = Dataset::new(vec![r, MarkedRealization::empty()], Interval::unit()).unwrap();
        assert_eq!(d.n(), 2);
        let bad = MarkedRealization::new(vec![1.5], vec![0.0]).unwrap();
        assert!(Dataset::new(vec![bad], Interval::unit()).is_err());
        assert!(Dataset::new(vec![], Interval::unit()).is_err());
    }
}
