//! Cubic B-spline basis on a closed interval.
//!
//! The basis uses a clamped knot vector with equally spaced interior knots.
//! Alongside the basis itself, a [`BasisSystem`] caches the Gram matrix
//! `J = ∫ γγᵀ`, the roughness matrix `Ω = ∫ γ''γ''ᵀ` and a composite
//! Gauss-Legendre rule (with its design matrix) used for intensity integrals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::composite_rule;

/// Spline degree used throughout.
pub const DEGREE: usize = 3;

/// Default number of Gauss-Legendre nodes per knot span.
pub const DEFAULT_QUAD_ORDER: usize = 5;

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::DegenerateInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn unit() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn check(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfDomain { x, lo: self.lo, hi: self.hi })
        }
    }

    /// `n` equally spaced points from `lo` to `hi` inclusive.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![0.5 * (self.lo + self.hi)],
            _ => (0..n)
                .map(|i| self.lo + self.length() * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

/// Serializable description from which a [`BasisSystem`] can be rebuilt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub domain: Interval,
    pub interior_knots: usize,
    pub degree: usize,
    pub quad_order: usize,
}

impl BasisSpec {
    pub fn build(&self) -> Result<BasisSystem> {
        if self.degree != DEGREE {
            return Err(Error::InvalidParameter(format!(
                "only cubic splines are supported, got degree {}",
                self.degree
            )));
        }
        build_basis(self.domain, self.interior_knots, self.quad_order)
    }
}

#[derive(Debug, Clone)]
pub struct BasisSystem {
    domain: Interval,
    interior_knots: usize,
    quad_order: usize,
    knots: Vec<f64>,
    gram: DMatrix<f64>,
    roughness: DMatrix<f64>,
    quad_nodes: Vec<f64>,
    quad_weights: Vec<f64>,
    quad_design: DMatrix<f64>,
}

/// Builds a cubic B-spline system with `interior_knots` equally spaced knots
/// and `quad_order` Gauss-Legendre nodes per span for intensity integrals.
pub fn build_basis(domain: Interval, interior_knots: usize, quad_order: usize) -> Result<BasisSystem> {
    let domain = Interval::new(domain.lo, domain.hi)?;
    if interior_knots == 0 {
        return Err(Error::NoInteriorKnots);
    }
    if quad_order == 0 {
        return Err(Error::InvalidQuadratureOrder);
    }
    let breaks = domain.grid(interior_knots + 2);
    let mut knots = vec![domain.lo; DEGREE];
    knots.extend_from_slice(&breaks);
    knots.extend(std::iter::repeat_n(domain.hi, DEGREE));

    let mut system = BasisSystem {
        domain,
        interior_knots,
        quad_order,
        knots,
        gram: DMatrix::zeros(0, 0),
        roughness: DMatrix::zeros(0, 0),
        quad_nodes: Vec::new(),
        quad_weights: Vec::new(),
        quad_design: DMatrix::zeros(0, 0),
    };
    let q = system.dim();

    // Products of cubics have degree 6 and products of second derivatives
    // degree 2, so four nodes per span integrate both exactly.
    let (nodes, weights) = composite_rule(&breaks, DEGREE + 1);
    let mut gram = DMatrix::zeros(q, q);
    let mut rough = DMatrix::zeros(q, q);
    for (&x, &w) in nodes.iter().zip(&weights) {
        let span = system.find_span(x);
        let ders = system.derivatives(span, x, 2);
        let first = span - DEGREE;
        for a in 0..=DEGREE {
            for b in 0..=DEGREE {
                gram[(first + a, first + b)] += w * ders[0][a] * ders[0][b];
                rough[(first + a, first + b)] += w * ders[2][a] * ders[2][b];
            }
        }
    }
    system.gram = gram;
    system.roughness = rough;

    let (qn, qw) = composite_rule(&breaks, quad_order);
    system.quad_design = system.design_unchecked(&qn);
    system.quad_nodes = qn;
    system.quad_weights = qw;
    Ok(system)
}

impl BasisSystem {
    pub fn spec(&self) -> BasisSpec {
        BasisSpec {
            domain: self.domain,
            interior_knots: self.interior_knots,
            degree: DEGREE,
            quad_order: self.quad_order,
        }
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    pub fn degree(&self) -> usize {
        DEGREE
    }

    pub fn interior_knots(&self) -> usize {
        self.interior_knots
    }

    /// Basis dimension `q = interior_knots + degree + 1`.
    pub fn dim(&self) -> usize {
        self.interior_knots + DEGREE + 1
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Gram matrix `J`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Roughness matrix `Ω` with `cᵀΩc = ∫ (f_c'')²`.
    pub fn roughness(&self) -> &DMatrix<f64> {
        &self.roughness
    }

    pub fn quad_nodes(&self) -> &[f64] {
        &self.quad_nodes
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_weights
    }

    /// Design matrix at the quadrature nodes.
    pub fn quad_design(&self) -> &DMatrix<f64> {
        &self.quad_design
    }

    /// Integrates `f` with the intensity quadrature rule.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.quad_nodes
            .iter()
            .zip(&self.quad_weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Index `s` of the knot span `[t_s, t_{s+1})` containing `x`; the right
    /// endpoint belongs to the last span.
    fn find_span(&self, x: f64) -> usize {
        let q = self.dim();
        if x >= self.knots[q] {
            return q - 1;
        }
        if x <= self.knots[DEGREE] {
            return DEGREE;
        }
        // knots[DEGREE..=q] are the breakpoints; binary search among them.
        let (mut lo, mut hi) = (DEGREE, q);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Values of the `DEGREE + 1` nonzero basis functions at `x`, which lie
    /// in span `span`.
    fn values(&self, span: usize, x: f64) -> [f64; DEGREE + 1] {
        let t = &self.knots;
        let mut n = [0.0; DEGREE + 1];
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            n[j] = saved;
        }
        n
    }

    /// Values and derivatives up to order `nders` of the nonzero basis
    /// functions in `span`; `out[k][a]` is the `k`-th derivative of function
    /// `span - DEGREE + a`.
    fn derivatives(&self, span: usize, x: f64, nders: usize) -> Vec<[f64; DEGREE + 1]> {
        let p = DEGREE;
        let t = &self.knots;
        let mut ndu = [[0.0; DEGREE + 1]; DEGREE + 1];
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let tmp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![[0.0; DEGREE + 1]; nders + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = [[0.0; DEGREE + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=nders.min(p) {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=nders.min(p) {
            for v in ders[k].iter_mut() {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }
        ders
    }

    /// Sparse evaluation: index of the first nonzero function and the values
    /// of the `DEGREE + 1` nonzero functions at `x`.
    pub fn eval_local(&self, x: f64) -> Result<(usize, [f64; DEGREE + 1])> {
        self.domain.check(x)?;
        let span = self.find_span(x);
        Ok((span - DEGREE, self.values(span, x)))
    }

    /// Second derivatives of the basis at `x` as a dense `q`-vector.
    pub fn second_derivative_row(&self, x: f64) -> Result<DVector<f64>> {
        self.domain.check(x)?;
        let span = self.find_span(x);
        let ders = self.derivatives(span, x, 2);
        let mut row = DVector::zeros(self.dim());
        for a in 0..=DEGREE {
            row[span - DEGREE + a] = ders[2][a];
        }
        Ok(row)
    }

    /// `m × q` matrix whose row `j` is `γ(x_j)ᵀ`. Points outside the domain
    /// are an error.
    pub fn eval_design(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        for &xi in x {
            self.domain.check(xi)?;
        }
        Ok(self.design_unchecked(x))
    }

    fn design_unchecked(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.len(), self.dim());
        for (j, &xj) in x.iter().enumerate() {
            let span = self.find_span(xj);
            let vals = self.values(span, xj);
            for (a, v) in vals.iter().enumerate() {
                out[(j, span - DEGREE + a)] = *v;
            }
        }
        out
    }

    /// Evaluates the spline with coefficients `coef` at `x`.
    pub fn eval_function(&self, coef: &DVector<f64>, x: f64) -> Result<f64> {
        if coef.len() != self.dim() {
            return Err(Error::LengthMismatch { expected: self.dim(), got: coef.len() });
        }
        let (first, vals) = self.eval_local(x)?;
        Ok(vals.iter().enumerate().map(|(a, v)| v * coef[first + a]).sum())
    }

    /// Roughness `cᵀΩc = ∫ (f_c'')²`.
    pub fn penalty_value(&self, coef: &DVector<f64>) -> Result<f64> {
        if coef.len() != self.dim() {
            return Err(Error::LengthMismatch { expected: self.dim(), got: coef.len() });
        }
        Ok(coef.dot(&(&self.roughness * coef)).max(0.0))
    }

    /// Coefficients of the affine function `intercept + slope·x`.
    ///
    /// Cubic B-splines reproduce linear functions through the Greville
    /// abscissae.
    pub fn affine_coefficients(&self, intercept: f64, slope: f64) -> DVector<f64> {
        let q = self.dim();
        DVector::from_fn(q, |i, _| {
            let g = (self.knots[i + 1] + self.knots[i + 2] + self.knots[i + 3]) / 3.0;
            intercept + slope * g
        })
    }

    /// Least-squares projection of `f` onto the spline space in `L²`.
    pub fn project(&self, f: impl Fn(f64) -> f64) -> DVector<f64> {
        let q = self.dim();
        let mut rhs = DVector::zeros(q);
        for (k, (&x, &w)) in self.quad_nodes.iter().zip(&self.quad_weights).enumerate() {
            let fx = f(x);
            for i in 0..q {
                rhs[i] += w * fx * self.quad_design[(k, i)];
            }
        }
        self.gram
            .clone()
            .cholesky()
            .expect("Gram matrix is positive definite")
            .solve(&rhs)
    }

    /// Interpolates `f` at the Greville abscissae.
    pub fn interpolate(&self, f: impl Fn(f64) -> f64) -> DVector<f64> {
        let q = self.dim();
        let sites: Vec<f64> = (0..q)
            .map(|i| (self.knots[i + 1] + self.knots[i + 2] + self.knots[i + 3]) / 3.0)
            .collect();
        let design = self.design_unchecked(&sites);
        let rhs = DVector::from_iterator(q, sites.iter().map(|&x| f(x)));
        design.lu().solve(&rhs).expect("Greville collocation matrix is nonsingular")
    }
}
