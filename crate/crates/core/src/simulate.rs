//! Data generation from the full model and the Monte Carlo study harness.

use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{build_basis, BasisSystem, Interval};
use crate::error::{Error, Result};
use crate::estimation::{fit, FitConfig};
use crate::inference::asymptotic_covariance;
use crate::model::{Dataset, MarkedRealization, Theta};
use crate::modelselect::{sequential_cv, CvOutcome, CvPlan};
use crate::rng::{stream, StreamRng};

/// Grid size used to bound the intensity before thinning.
const BOUND_GRID: usize = 1024;
/// Inflation applied to the grid maximum of the intensity.
const BOUND_SAFETY: f64 = 1.05;
/// Largest expected number of proposals accepted per subject.
const MAX_PROPOSAL_MEAN: f64 = 1e6;
/// Score redraws allowed when the intensity overflows.
const MAX_REDRAWS: usize = 100;

/// Data-generating functions and covariances.
pub trait FunctionalTruth: Sync {
    fn domain(&self) -> Interval;
    fn p1(&self) -> usize;
    fn p2(&self) -> usize;
    /// Mean log-intensity.
    fn mu(&self, x: f64) -> f64;
    /// Mean response.
    fn nu(&self, x: f64) -> f64;
    fn phi(&self, k: usize, x: f64) -> f64;
    fn psi(&self, l: usize, x: f64) -> f64;
    /// Covariance of the stacked scores `(u, v)`.
    fn sigma(&self) -> DMatrix<f64>;
    fn var_eta(&self) -> f64;

    fn sigma_uv(&self) -> DMatrix<f64> {
        self.sigma().view((0, self.p1()), (self.p1(), self.p2())).into_owned()
    }

    fn log_intensity(&self, u: &DVector<f64>, x: f64) -> f64 {
        self.mu(x) + (0..self.p1()).map(|k| u[k] * self.phi(k, x)).sum::<f64>()
    }

    fn mean_response(&self, v: &DVector<f64>, x: f64) -> f64 {
        self.nu(x) + (0..self.p2()).map(|l| v[l] * self.psi(l, x)).sum::<f64>()
    }
}

/// The two-component sine design on `[0, 1]`, parameterized by the
/// baseline rate and the share of variance on the first component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaperDesign {
    pub rate: f64,
    pub alpha: f64,
}

impl PaperDesign {
    pub const SD_U: f64 = 0.3;
    pub const SD_V: f64 = 0.7;
    pub const SD_ETA: f64 = 0.3;
    pub const CORRELATION: f64 = 0.7;

    pub fn new(rate: f64, alpha: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::Simulation(format!("rate must be positive, got {rate}")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Simulation(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        Ok(Self { rate, alpha })
    }

    pub fn var_u(&self) -> [f64; 2] {
        let v = Self::SD_U * Self::SD_U;
        [v * self.alpha, v * (1.0 - self.alpha)]
    }

    pub fn var_v(&self) -> [f64; 2] {
        let v = Self::SD_V * Self::SD_V;
        [v * self.alpha, v * (1.0 - self.alpha)]
    }

    fn sine(k: usize, x: f64) -> f64 {
        SQRT_2 * ((k + 1) as f64 * PI * x).sin()
    }

    /// Spline approximation of the design (`L²` projection of every
    /// function onto the basis).
    pub fn projected_theta(&self, basis: &BasisSystem) -> Theta {
        let comp = |k: usize| basis.project(|x| Self::sine(k, x));
        let (vu, vv) = (self.var_u(), self.var_v());
        Theta {
            sigma_uv: self.sigma_uv(),
            c0: basis.project(|x| self.mu(x)),
            phi: DMatrix::from_columns(&[comp(0), comp(1)]),
            d0: basis.project(|x| self.nu(x)),
            psi: DMatrix::from_columns(&[comp(0), comp(1)]),
            var_u: DVector::from_row_slice(&vu),
            var_v: DVector::from_row_slice(&vv),
            var_eta: self.var_eta(),
        }
    }
}

impl FunctionalTruth for PaperDesign {
    fn domain(&self) -> Interval {
        Interval::unit()
    }
    fn p1(&self) -> usize {
        2
    }
    fn p2(&self) -> usize {
        2
    }
    fn mu(&self, x: f64) -> f64 {
        (PI * x).sin() - 1.98f64.ln() + self.rate.ln()
    }
    fn nu(&self, x: f64) -> f64 {
        5.0 * x
    }
    fn phi(&self, k: usize, x: f64) -> f64 {
        Self::sine(k, x)
    }
    fn psi(&self, l: usize, x: f64) -> f64 {
        Self::sine(l, x)
    }
    fn sigma(&self) -> DMatrix<f64> {
        let (vu, vv) = (self.var_u(), self.var_v());
        let mut s = DMatrix::zeros(4, 4);
        for k in 0..2 {
            s[(k, k)] = vu[k];
            s[(2 + k, 2 + k)] = vv[k];
            let c = Self::CORRELATION * (vu[k] * vv[k]).sqrt();
            s[(k, 2 + k)] = c;
            s[(2 + k, k)] = c;
        }
        s
    }
    fn var_eta(&self) -> f64 {
        Self::SD_ETA * Self::SD_ETA
    }
}

/// A truth given by spline coefficients.
#[derive(Debug, Clone)]
pub struct SplineTruth {
    pub theta: Theta,
    pub basis: BasisSystem,
}

impl SplineTruth {
    pub fn new(theta: Theta, basis: BasisSystem) -> Result<Self> {
        theta.validate_shapes()?;
        if theta.q() != basis.dim() {
            return Err(Error::LengthMismatch { expected: basis.dim(), got: theta.q() });
        }
        if !theta.sigma_is_pd() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self { theta, basis })
    }

    fn eval(&self, coef: nalgebra::DVectorView<'_, f64>, x: f64) -> f64 {
        let Ok((first, vals)) = self.basis.eval_local(x) else { return f64::NAN };
        vals.iter().enumerate().map(|(j, b)| b * coef[first + j]).sum()
    }
}

impl FunctionalTruth for SplineTruth {
    fn domain(&self) -> Interval {
        self.basis.domain()
    }
    fn p1(&self) -> usize {
        self.theta.p1()
    }
    fn p2(&self) -> usize {
        self.theta.p2()
    }
    fn mu(&self, x: f64) -> f64 {
        self.eval(self.theta.c0.column(0), x)
    }
    fn nu(&self, x: f64) -> f64 {
        self.eval(self.theta.d0.column(0), x)
    }
    fn phi(&self, k: usize, x: f64) -> f64 {
        self.eval(self.theta.phi.column(k), x)
    }
    fn psi(&self, l: usize, x: f64) -> f64 {
        self.eval(self.theta.psi.column(l), x)
    }
    fn sigma(&self) -> DMatrix<f64> {
        self.theta.full_sigma()
    }
    fn var_eta(&self) -> f64 {
        self.theta.var_eta
    }
}

/// Length of the auction-like time domain, in days.
pub const AUCTION_DAYS: f64 = 7.0;

/// A spline truth on `[0, 1]` shaped like seven-day auction data: bidding
/// intensity with an early bump and a steep late rise, an increasing mean
/// log-price, two intensity components and three price components. Time
/// maps to days through [`AUCTION_DAYS`].
pub fn auction_like_truth() -> Result<SplineTruth> {
    let basis = build_basis(Interval::unit(), 5, crate::basis::DEFAULT_QUAD_ORDER)?;
    let gram = basis.gram();
    let c0 = basis.interpolate(|x: f64| 4f64.ln() + (-(x / 0.08).powi(2)).exp() + 2.5 * x.powi(6));
    let d0 = basis.interpolate(|x: f64| 4.0 + 1.2 * x.sqrt());
    let phi = crate::model::orthonormalize(
        &[basis.interpolate(|_| 1.0), basis.interpolate(|x: f64| x.powi(4))],
        gram,
    )?;
    let psi = crate::model::orthonormalize(
        &[basis.interpolate(|_| 1.0), basis.interpolate(|x| x), basis.interpolate(|x| x * x)],
        gram,
    )?;
    let var_u = DVector::from_vec(vec![0.30f64, 0.09]);
    let var_v = DVector::from_vec(vec![0.25f64, 0.06, 0.02]);
    let rho = DMatrix::from_row_slice(2, 3, &[-0.69f64, 0.41, 0.28, -0.54, -0.77, -0.05]);
    let sigma_uv = DMatrix::from_fn(2, 3, |k, l| rho[(k, l)] * (var_u[k] * var_v[l]).sqrt());
    let theta = Theta {
        sigma_uv,
        c0,
        phi: DMatrix::from_columns(&phi),
        d0,
        psi: DMatrix::from_columns(&psi),
        var_u,
        var_v,
        var_eta: 0.01,
    }
    .normalize_signs(gram)?;
    SplineTruth::new(theta, basis)
}

/// One simulated subject with its latent scores.
#[derive(Debug, Clone)]
pub struct SampledSubject {
    pub obs: MarkedRealization,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    /// Number of times the scores were redrawn because the intensity
    /// overflowed.
    pub redraws: usize,
}

/// Draws one realization: scores from `N(0, Σ)`, points by thinning a
/// homogeneous process, and noisy responses at the points.
pub fn sample_realization<T: FunctionalTruth + ?Sized>(truth: &T, rng: &mut StreamRng) -> Result<SampledSubject> {
    let chol = Cholesky::new(truth.sigma()).ok_or(Error::NotPositiveDefinite)?;
    let (p1, p2) = (truth.p1(), truth.p2());
    let domain = truth.domain();
    for redraws in 0..=MAX_REDRAWS {
        let z = DVector::from_fn(p1 + p2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let scores = chol.l() * z;
        let u = scores.rows(0, p1).into_owned();
        let v = scores.rows(p1, p2).into_owned();
        let Some(x) = thin(truth, &u, domain, rng) else { continue };
        let sd = truth.var_eta().sqrt();
        let y = x
            .iter()
            .map(|&xi| truth.mean_response(&v, xi) + sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        return Ok(SampledSubject { obs: MarkedRealization::new(x, y)?, u, v, redraws });
    }
    Err(Error::Simulation(format!("intensity overflowed on {} consecutive score draws", MAX_REDRAWS + 1)))
}

/// Points of a Poisson process with intensity `exp(log_intensity(u, ·))`
/// sorted increasingly, or `None` if the intensity is too large to
/// simulate.
fn thin<T: FunctionalTruth + ?Sized>(truth: &T, u: &DVector<f64>, domain: Interval, rng: &mut StreamRng) -> Option<Vec<f64>> {
    let grid_max = domain
        .grid(BOUND_GRID)
        .iter()
        .map(|&x| truth.log_intensity(u, x))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut bound = grid_max.exp() * BOUND_SAFETY;
    'restart: loop {
        let mean = bound * domain.length();
        if !mean.is_finite() || mean > MAX_PROPOSAL_MEAN {
            return None;
        }
        let count = if mean > 0.0 {
            Poisson::new(mean).expect("positive finite mean").sample(rng) as usize
        } else {
            0
        };
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            let x = domain.lo + domain.length() * rng.random::<f64>();
            let lambda = truth.log_intensity(u, x).exp();
            if lambda > bound {
                // the grid missed the supremum; enlarge the bound and start over
                bound = lambda * BOUND_SAFETY;
                continue 'restart;
            }
            if rng.random::<f64>() * bound < lambda {
                points.push(x);
            }
        }
        points.sort_by(f64::total_cmp);
        return Some(points);
    }
}

/// A simulated dataset with the true scores of every subject.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub data: Dataset,
    pub u: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub redraws: usize,
}

impl SimulatedData {
    pub fn mean_count(&self) -> f64 {
        self.data.total_points() as f64 / self.data.n().max(1) as f64
    }
}

/// Simulates `n` subjects. Subject `i` of replicate `replicate` always uses
/// the same random stream, so the result does not depend on scheduling.
pub fn simulate_dataset<T: FunctionalTruth + ?Sized>(truth: &T, n: usize, seed: u64, replicate: u64) -> Result<SimulatedData> {
    if n == 0 {
        return Err(Error::Simulation("number of subjects must be positive".into()));
    }
    let subjects: Vec<SampledSubject> = (0..n)
        .into_par_iter()
        .map(|i| sample_realization(truth, &mut stream(seed, replicate, i as u64)))
        .collect::<Result<_>>()?;
    let redraws = subjects.iter().map(|s| s.redraws).sum();
    let (mut obs, mut u, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for s in subjects {
        obs.push(s.obs);
        u.push(s.u);
        v.push(s.v);
    }
    Ok(SimulatedData { data: Dataset::new(obs, truth.domain())?, u, v, redraws })
}

/// Sign flips applied by [`align_signs`].
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub theta: Theta,
    pub flipped_u: Vec<bool>,
    pub flipped_v: Vec<bool>,
    /// Components whose inner product with the truth vanished; these are
    /// left unflipped and may be reversed.
    pub ambiguous: Vec<usize>,
}

impl Alignment {
    /// Applies the same flips to predicted scores.
    pub fn apply_to_scores(&self, u: &mut DVector<f64>, v: &mut DVector<f64>) {
        for (k, &f) in self.flipped_u.iter().enumerate() {
            if f {
                u[k] = -u[k];
            }
        }
        for (l, &f) in self.flipped_v.iter().enumerate() {
            if f {
                v[l] = -v[l];
            }
        }
    }
}

/// `∫ f(x) g(x) dx` for a spline `f` with coefficients `coef`.
pub fn inner_product(basis: &BasisSystem, coef: &DVector<f64>, g: impl Fn(f64) -> f64) -> f64 {
    let vals = basis.quad_design() * coef;
    basis
        .quad_nodes()
        .iter()
        .zip(basis.quad_weights())
        .zip(vals.iter())
        .map(|((&x, &w), &f)| w * f * g(x))
        .sum()
}

/// `‖f − g‖` in `L²` for a spline `f`.
pub fn l2_distance(basis: &BasisSystem, coef: &DVector<f64>, g: impl Fn(f64) -> f64) -> f64 {
    let vals = basis.quad_design() * coef;
    basis
        .quad_nodes()
        .iter()
        .zip(basis.quad_weights())
        .zip(vals.iter())
        .map(|((&x, &w), &f)| w * (f - g(x)).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Flips estimated components so that their inner products with the true
/// components are nonnegative.
pub fn align_signs<T: FunctionalTruth + ?Sized>(theta: &Theta, basis: &BasisSystem, truth: &T) -> Result<Alignment> {
    let p1 = theta.p1().min(truth.p1());
    let p2 = theta.p2().min(truth.p2());
    let mut out = theta.clone();
    let mut flipped_u = vec![false; theta.p1()];
    let mut flipped_v = vec![false; theta.p2()];
    let mut ambiguous = Vec::new();
    for k in 0..p1 {
        let ip = inner_product(basis, &theta.phi.column(k).into_owned(), |x| truth.phi(k, x));
        if ip == 0.0 {
            ambiguous.push(k);
        } else if ip < 0.0 {
            out.flip_u(k);
            flipped_u[k] = true;
        }
    }
    for l in 0..p2 {
        let ip = inner_product(basis, &theta.psi.column(l).into_owned(), |x| truth.psi(l, x));
        if ip == 0.0 {
            ambiguous.push(theta.p1() + l);
        } else if ip < 0.0 {
            out.flip_v(l);
            flipped_v[l] = true;
        }
    }
    Ok(Alignment { theta: out, flipped_u, flipped_v, ambiguous })
}

/// Result of one Monte Carlo replicate after sign alignment.
#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub replicate: u64,
    pub theta: Theta,
    pub u_hat: Vec<DVector<f64>>,
    pub v_hat: Vec<DVector<f64>>,
    pub u_true: Vec<DVector<f64>>,
    pub v_true: Vec<DVector<f64>>,
    /// Asymptotic standard deviations of `Σ̂_uv`, when computed and
    /// available.
    pub sd_sigma_uv: Option<DMatrix<f64>>,
    pub converged: bool,
    pub mean_count: f64,
}

/// Root mean squared errors and standard deviation summaries for one
/// scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McReport {
    pub label: String,
    pub n: usize,
    pub replicates: usize,
    /// Replicates whose fit failed outright.
    pub failures: usize,
    /// Replicates whose optimizer stopped without converging.
    pub not_converged: usize,
    /// Replicates whose Fisher estimate was singular.
    pub singular_fisher: usize,
    /// Parameter name and root mean squared error, in table order.
    pub rmse: Vec<(String, f64)>,
    /// Monte Carlo standard deviation of each `Σ̂_uv` entry.
    pub mc_sd: Vec<Vec<f64>>,
    /// Median asymptotic standard deviation of each `Σ̂_uv` entry.
    pub median_asymptotic_sd: Option<Vec<Vec<f64>>>,
    /// Median absolute error of the asymptotic standard deviations.
    pub mae_asymptotic_sd: Option<Vec<Vec<f64>>>,
    pub mean_count: f64,
    pub xi: [f64; 4],
    pub failure_messages: Vec<String>,
}

impl McReport {
    pub fn rmse_of(&self, name: &str) -> Option<f64> {
        self.rmse.iter().find(|(n, _)| n == name).map(|r| r.1)
    }
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |acc, v| (acc.0 + v * v, acc.1 + 1));
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Summarizes aligned replicate fits against the truth.
pub fn rmse_report<T: FunctionalTruth + ?Sized>(
    label: &str,
    outcomes: &[ReplicateOutcome],
    truth: &T,
    basis: &BasisSystem,
) -> Result<McReport> {
    if outcomes.len() < 2 {
        return Err(Error::Simulation("at least two replicates are needed".into()));
    }
    let (p1, p2) = (truth.p1(), truth.p2());
    let true_uv = truth.sigma_uv();
    let sigma = truth.sigma();
    let mut rmse = Vec::new();
    for l in 0..p2 {
        for k in 0..p1 {
            rmse.push((
                format!("sigma_uv_{}{}", k + 1, l + 1),
                rms(outcomes.iter().map(|o| o.theta.sigma_uv[(k, l)] - true_uv[(k, l)])),
            ));
        }
    }
    // column-major entry order matches the table: 11, 21, 12, 22
    rmse.push(("mu".into(), rms(outcomes.iter().map(|o| l2_distance(basis, &o.theta.c0, |x| truth.mu(x))))));
    rmse.push(("nu".into(), rms(outcomes.iter().map(|o| l2_distance(basis, &o.theta.d0, |x| truth.nu(x))))));
    for k in 0..p1 {
        rmse.push((
            format!("phi_{}", k + 1),
            rms(outcomes.iter().map(|o| l2_distance(basis, &o.theta.phi.column(k).into_owned(), |x| truth.phi(k, x)))),
        ));
    }
    for l in 0..p2 {
        rmse.push((
            format!("psi_{}", l + 1),
            rms(outcomes.iter().map(|o| l2_distance(basis, &o.theta.psi.column(l).into_owned(), |x| truth.psi(l, x)))),
        ));
    }
    for k in 0..p1 {
        let t = sigma[(k, k)].sqrt();
        rmse.push((format!("sd_u_{}", k + 1), rms(outcomes.iter().map(|o| o.theta.var_u[k].sqrt() - t))));
    }
    for l in 0..p2 {
        let t = sigma[(p1 + l, p1 + l)].sqrt();
        rmse.push((format!("sd_v_{}", l + 1), rms(outcomes.iter().map(|o| o.theta.var_v[l].sqrt() - t))));
    }
    let sd_eta = truth.var_eta().sqrt();
    rmse.push(("sd_eta".into(), rms(outcomes.iter().map(|o| o.theta.var_eta.sqrt() - sd_eta))));
    let score_rmse = |get: &dyn Fn(&ReplicateOutcome) -> (f64, usize)| {
        rms(outcomes.iter().map(|o| {
            let (sum, n) = get(o);
            (sum / n.max(1) as f64).sqrt()
        }))
    };
    for k in 0..p1 {
        rmse.push((
            format!("u_{}", k + 1),
            score_rmse(&|o| (o.u_hat.iter().zip(&o.u_true).map(|(a, b)| (a[k] - b[k]).powi(2)).sum(), o.u_hat.len())),
        ));
    }
    for l in 0..p2 {
        rmse.push((
            format!("v_{}", l + 1),
            score_rmse(&|o| (o.v_hat.iter().zip(&o.v_true).map(|(a, b)| (a[l] - b[l]).powi(2)).sum(), o.v_hat.len())),
        ));
    }

    let mc_sd = (0..p1)
        .map(|k| (0..p2).map(|l| sample_sd(&outcomes.iter().map(|o| o.theta.sigma_uv[(k, l)]).collect::<Vec<_>>())).collect())
        .collect::<Vec<Vec<f64>>>();
    let with_sd: Vec<&DMatrix<f64>> = outcomes.iter().filter_map(|o| o.sd_sigma_uv.as_ref()).collect();
    let (median_sd, mae_sd) = if with_sd.is_empty() {
        (None, None)
    } else {
        let med: Vec<Vec<f64>> = (0..p1)
            .map(|k| (0..p2).map(|l| median(&mut with_sd.iter().map(|m| m[(k, l)]).collect::<Vec<_>>())).collect())
            .collect();
        let mae: Vec<Vec<f64>> = (0..p1)
            .map(|k| {
                (0..p2)
                    .map(|l| median(&mut with_sd.iter().map(|m| (m[(k, l)] - mc_sd[k][l]).abs()).collect::<Vec<_>>()))
                    .collect()
            })
            .collect();
        (Some(med), Some(mae))
    };
    Ok(McReport {
        label: label.to_string(),
        n: outcomes[0].u_hat.len(),
        replicates: outcomes.len(),
        failures: 0,
        not_converged: outcomes.iter().filter(|o| !o.converged).count(),
        singular_fisher: 0,
        rmse,
        mc_sd,
        median_asymptotic_sd: median_sd,
        mae_asymptotic_sd: mae_sd,
        mean_count: outcomes.iter().map(|o| o.mean_count).sum::<f64>() / outcomes.len() as f64,
        xi: [0.0; 4],
        failure_messages: Vec::new(),
    })
}

/// One cell of the simulation study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub label: String,
    pub design: PaperDesign,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn new(design: PaperDesign, n: usize, replicates: usize, seed: u64) -> Self {
        let label = format!("alpha{:03}-r{}-n{}", (design.alpha * 100.0).round() as u32, design.rate, n);
        Self { label, design, n, replicates, seed }
    }
}

/// Shared settings of a simulation study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub interior_knots: usize,
    pub fit: FitConfig,
    /// Also compute asymptotic standard deviations for every replicate.
    pub asymptotic: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { interior_knots: 5, fit: FitConfig::default(), asymptotic: false }
    }
}

/// Simulates, fits, aligns and scores every replicate of a scenario.
/// Replicate failures are counted and reported, not propagated.
pub fn run_scenario(scenario: &Scenario, config: &StudyConfig) -> Result<McReport> {
    let basis = build_basis(Interval::unit(), config.interior_knots, crate::basis::DEFAULT_QUAD_ORDER)?;
    let truth = scenario.design;
    let results: Vec<std::result::Result<(ReplicateOutcome, bool), String>> = (0..scenario.replicates as u64)
        .into_par_iter()
        .map(|r| run_replicate(&truth, &basis, scenario, config, r).map_err(|e| format!("replicate {r}: {e}")))
        .collect();
    let mut outcomes = Vec::new();
    let mut messages = Vec::new();
    let mut singular = 0;
    for r in results {
        match r {
            Ok((o, sing)) => {
                singular += usize::from(sing);
                outcomes.push(o);
            }
            Err(m) => messages.push(m),
        }
    }
    let mut report = rmse_report(&scenario.label, &outcomes, &truth, &basis)?;
    report.n = scenario.n;
    report.failures = messages.len();
    report.singular_fisher = singular;
    report.failure_messages = messages;
    report.xi = config.fit.xi;
    Ok(report)
}

/// Chooses smoothing parameters by cross-validation on one pilot replicate
/// of `design`, drawn from a stream that no study replicate uses.
pub fn pilot_smoothing(design: &PaperDesign, n: usize, seed: u64, config: &StudyConfig, plan: &CvPlan) -> Result<CvOutcome> {
    let basis = build_basis(Interval::unit(), config.interior_knots, crate::basis::DEFAULT_QUAD_ORDER)?;
    let pilot = simulate_dataset(design, n, seed, PILOT_REPLICATE)?;
    sequential_cv(&pilot.data, &basis, &config.fit, plan)
}

/// Replicate index reserved for pilot data.
pub const PILOT_REPLICATE: u64 = u64::MAX - 7;

/// Runs every scenario in turn.
pub fn run_study(scenarios: &[Scenario], config: &StudyConfig) -> Result<Vec<McReport>> {
    scenarios.iter().map(|s| run_scenario(s, config)).collect()
}

fn run_replicate(
    truth: &PaperDesign,
    basis: &BasisSystem,
    scenario: &Scenario,
    config: &StudyConfig,
    replicate: u64,
) -> Result<(ReplicateOutcome, bool)> {
    let sim = simulate_dataset(truth, scenario.n, scenario.seed, replicate)?;
    let mean_count = sim.mean_count();
    let fitted = fit(&sim.data, basis, &config.fit)?;
    let aligned = align_signs(&fitted.theta, basis, truth)?;
    let mut u_hat = Vec::with_capacity(scenario.n);
    let mut v_hat = Vec::with_capacity(scenario.n);
    for (u, v) in &fitted.scores {
        let (mut u, mut v) = (u.clone(), v.clone());
        aligned.apply_to_scores(&mut u, &mut v);
        u_hat.push(u);
        v_hat.push(v);
    }
    let mut singular = false;
    let sd_sigma_uv = if config.asymptotic {
        match asymptotic_covariance(&fitted.theta, basis, &sim.data) {
            Ok(inf) => {
                // standard deviations are unaffected by sign flips
                Some(inf.sd_sigma_uv.map(f64::abs))
            }
            Err(Error::SingularFisher { .. }) => {
                singular = true;
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok((
        ReplicateOutcome {
            replicate,
            theta: aligned.theta,
            u_hat,
            v_hat,
            u_true: sim.u,
            v_true: sim.v,
            sd_sigma_uv,
            converged: fitted.converged,
            mean_count,
        },
        singular,
    ))
}

/// Root mean squared errors with one column per report.
pub fn rmse_table_csv(reports: &[McReport]) -> String {
    let mut out = String::from("parameter");
    for r in reports {
        write!(out, ",{}", r.label).expect("writing to a string");
    }
    out.push('\n');
    if let Some(first) = reports.first() {
        for (i, (name, _)) in first.rmse.iter().enumerate() {
            out.push_str(name);
            for r in reports {
                write!(out, ",{:.6}", r.rmse[i].1).expect("writing to a string");
            }
            out.push('\n');
        }
        for (name, get) in [
            ("replicates", (|r: &McReport| r.replicates) as fn(&McReport) -> usize),
            ("failures", |r: &McReport| r.failures),
            ("not_converged", |r: &McReport| r.not_converged),
        ] {
            out.push_str(name);
            for r in reports {
                write!(out, ",{}", get(r)).expect("writing to a string");
            }
            out.push('\n');
        }
    }
    out
}

/// Monte Carlo and median asymptotic standard deviations of `Σ̂_uv`
/// (scaled by 10), one row per entry and scenario.
pub fn sd_table_csv(reports: &[McReport]) -> String {
    let mut out = String::from("scenario,parameter,true_x10,median_x10,mae_x10,ratio,singular_fisher\n");
    for r in reports {
        let p1 = r.mc_sd.len();
        let p2 = r.mc_sd.first().map_or(0, Vec::len);
        for l in 0..p2 {
            for k in 0..p1 {
                let mc = r.mc_sd[k][l];
                let med = r.median_asymptotic_sd.as_ref().map(|m| m[k][l]);
                let mae = r.mae_asymptotic_sd.as_ref().map(|m| m[k][l]);
                let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{:.4}", 10.0 * v));
                let ratio = med.map_or_else(|| "NA".to_string(), |m| format!("{:.4}", m / mc));
                writeln!(
                    out,
                    "{},sigma_uv_{}{},{:.4},{},{},{},{}",
                    r.label,
                    k + 1,
                    l + 1,
                    10.0 * mc,
                    fmt(med),
                    fmt(mae),
                    ratio,
                    r.singular_fisher
                )
                .expect("writing to a string");
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn design_covariances() {
        let d = PaperDesign::new(30.0, 0.75).unwrap();
        let s = d.sigma();
        assert_abs_diff_eq!(s[(0, 2)], 0.11025, epsilon = 1e-12);
        assert!(Cholesky::new(s).is_some());
        assert!(PaperDesign::new(0.0, 0.5).is_err());
        assert!(PaperDesign::new(1.0, 1.0).is_err());
    }

    #[test]
    fn components_are_orthonormal() {
        let b = build_basis(Interval::unit(), 20, 5).unwrap();
        let d = PaperDesign::new(10.0, 0.75).unwrap();
        let p = b.project(|x| d.phi(0, x));
        assert_abs_diff_eq!(inner_product(&b, &p, |x| d.phi(0, x)), 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(inner_product(&b, &p, |x| d.phi(1, x)), 0.0, epsilon = 1e-5);
    }

    #[test]
    fn simulation_is_reproducible() {
        let d = PaperDesign::new(10.0, 0.75).unwrap();
        let a = simulate_dataset(&d, 20, 7, 3).unwrap();
        let b = simulate_dataset(&d, 20, 7, 3).unwrap();
        assert_eq!(a.data, b.data);
        let c = simulate_dataset(&d, 20, 7, 4).unwrap();
        assert_ne!(a.data, c.data);
        assert!(a.data.realizations.iter().all(|r| r.x.windows(2).all(|w| w[0] <= w[1])));
    }

    #[test]
    fn zero_scores_give_poisson_counts() {
        struct Flat;
        impl FunctionalTruth for Flat {
            fn domain(&self) -> Interval {
                Interval::unit()
            }
            fn p1(&self) -> usize {
                1
            }
            fn p2(&self) -> usize {
                1
            }
            fn mu(&self, _: f64) -> f64 {
                10f64.ln()
            }
            fn nu(&self, _: f64) -> f64 {
                0.0
            }
            fn phi(&self, _: usize, _: f64) -> f64 {
                1.0
            }
            fn psi(&self, _: usize, _: f64) -> f64 {
                1.0
            }
            fn sigma(&self) -> DMatrix<f64> {
                DMatrix::identity(2, 2) * 1e-300
            }
            fn var_eta(&self) -> f64 {
                1.0
            }
        }
        let sim = simulate_dataset(&Flat, 10_000, 1, 0).unwrap();
        assert!((sim.mean_count() - 10.0).abs() < 0.1, "{}", sim.mean_count());
    }

    #[test]
    fn alignment_restores_flipped_components() {
        let b = build_basis(Interval::unit(), 5, 5).unwrap();
        let d = PaperDesign::new(30.0, 0.75).unwrap();
        let t = d.projected_theta(&b);
        let same = align_signs(&t, &b, &d).unwrap();
        assert_eq!(same.theta, t);
        let mut flipped = t.clone();
        flipped.flip_u(0);
        flipped.flip_v(1);
        let a = align_signs(&flipped, &b, &d).unwrap();
        assert_eq!(a.theta, t);
        assert_eq!(a.flipped_u, vec![true, false]);
        assert_eq!(a.flipped_v, vec![false, true]);
    }

    #[test]
    fn auction_truth_is_valid() {
        let t = auction_like_truth().unwrap();
        assert!(t.theta.orthonormality_residual(t.basis.gram()) < 1e-10);
        let sim = simulate_dataset(&t, 500, 3, 0).unwrap();
        assert!(sim.mean_count() > 5.0 && sim.mean_count() < 40.0, "{}", sim.mean_count());
    }

    #[test]
    fn l2_error_by_two_rules() {
        let b = build_basis(Interval::unit(), 5, 5).unwrap();
        let d = PaperDesign::new(30.0, 0.75).unwrap();
        let c = b.affine_coefficients(3.0, 0.5);
        let quad = l2_distance(&b, &c, |x| d.mu(x));
        let grid = Interval::unit().grid(20001);
        let vals = b.eval_design(&grid).unwrap() * &c;
        let sq: Vec<f64> = grid.iter().zip(vals.iter()).map(|(&x, &f)| (f - d.mu(x)).powi(2)).collect();
        let h = 1.0 / 20000.0;
        let trap = h * (sq.iter().sum::<f64>() - 0.5 * (sq[0] + sq[sq.len() - 1]));
        assert_abs_diff_eq!(quad, trap.sqrt(), epsilon = 1e-3);
    }
}
