//! Acceptance suite. Every criterion prints one PASS/FAIL line; the
//! process exits with failure if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use coxkl::basis::{build_basis, BasisSystem, Interval};
use coxkl::estimation::{fit, FitConfig, FitDocument};
use coxkl::inference::{asymptotic_covariance, constraint_jacobian};
use coxkl::likelihood::{laplace_loglik, penalized_loglik, penalized_loglik_grad, predict_scores, Smoothing};
use coxkl::model::{orthonormalize, Dataset, MarkedRealization, Theta};
use coxkl::modelselect::CvPlan;
use coxkl::rng::{stream, StreamRng};
use coxkl::simulate::{
    pilot_smoothing, run_scenario, sample_realization, simulate_dataset, FunctionalTruth, McReport, PaperDesign, Scenario,
    StudyConfig,
};
use coxkl::Error;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

const REFERENCE_RMSE_SIGMA_UV11_N200: f64 = 0.019;
const REFERENCE_RMSE_PSI1_N200: f64 = 0.061;
const STUDY_SEED: u64 = 20_240_101;
const STUDY_REPLICATES: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn main() {
    let criteria: Vec<(&str, fn(&mut Shared) -> Outcome)> = vec![
        ("1 expected counts", expected_counts),
        ("2 Poisson sampler", poisson_sampler),
        ("3 Laplace accuracy", laplace_accuracy),
        ("4 gradient check", gradient_check),
        ("5 conjugacy", conjugacy),
        ("6 recovery", recovery),
        ("7 asymptotic SD calibration", sd_calibration),
        ("8 singular Fisher at n=50", singular_fisher),
        ("9 invariants", invariants),
        ("10 auction-like pipeline", auction_pipeline),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut shared = Shared::default();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let o = run(&mut shared);
        let secs = t0.elapsed().as_secs_f64();
        println!("criterion {name}: {} ({secs:.1}s) {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

#[derive(Default)]
struct Shared {
    study_xi: Option<Smoothing>,
}

impl Shared {
    /// Smoothing parameters for the simulation study, chosen once by
    /// cross-validation on a pilot replicate.
    fn study_xi(&mut self) -> Smoothing {
        *self.study_xi.get_or_insert_with(|| {
            let design = PaperDesign::new(30.0, 0.75).unwrap();
            let config = StudyConfig::default();
            let plan = CvPlan { seed: STUDY_SEED, ..CvPlan::default() };
            let xi = pilot_smoothing(&design, 200, STUDY_SEED, &config, &plan).unwrap().best_xi;
            println!("  pilot cross-validation chose xi = {xi:?}");
            xi
        })
    }
}

fn expected_counts(_: &mut Shared) -> Outcome {
    let mut detail = String::new();
    let mut pass = true;
    for (rate, lo, hi) in [(10.0, 10.2, 10.8), (30.0, 30.6, 32.0)] {
        let d = PaperDesign::new(rate, 0.75).unwrap();
        let sim = simulate_dataset(&d, 10_000, 11, 0).unwrap();
        let m = sim.mean_count();
        pass &= m >= lo && m <= hi;
        detail.push_str(&format!("r={rate}: mean m = {m:.3} in [{lo}, {hi}]; "));
    }
    outcome(pass, detail)
}

/// Fixed intensity `exp(μ)` of the design with rate 30: the scores have
/// negligible variance.
struct FixedIntensity(PaperDesign);

impl FunctionalTruth for FixedIntensity {
    fn domain(&self) -> Interval {
        Interval::unit()
    }
    fn p1(&self) -> usize {
        1
    }
    fn p2(&self) -> usize {
        1
    }
    fn mu(&self, x: f64) -> f64 {
        self.0.mu(x)
    }
    fn nu(&self, _: f64) -> f64 {
        0.0
    }
    fn phi(&self, _: usize, _: f64) -> f64 {
        0.0
    }
    fn psi(&self, _: usize, _: f64) -> f64 {
        0.0
    }
    fn sigma(&self) -> DMatrix<f64> {
        DMatrix::identity(2, 2)
    }
    fn var_eta(&self) -> f64 {
        1.0
    }
}

/// Simpson's rule on `[0, x]` with `2k` panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn poisson_sampler(_: &mut Shared) -> Outcome {
    let truth = FixedIntensity(PaperDesign::new(30.0, 0.75).unwrap());
    let lambda = |x: f64| truth.mu(x).exp();
    let total = simpson(lambda, 0.0, 1.0, 20_000);
    let mut counts = Vec::new();
    let mut points = Vec::new();
    let mut i = 0u64;
    while points.len() < 100_000 {
        let s = sample_realization(&truth, &mut stream(5, 0, i)).unwrap();
        counts.push(s.obs.m() as f64);
        points.extend(s.obs.x);
        i += 1;
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se_mean = (total / n).sqrt();
    // variance of the sample variance of a Poisson(Λ) sample
    let se_var = ((total + 2.0 * total * total) / n).sqrt();
    let mean_ok = (mean - total).abs() <= 3.0 * se_mean;
    let var_ok = (var - total).abs() <= 3.0 * se_var;

    // Kolmogorov-Smirnov against the normalized intensity, CDF tabulated
    // by cumulative Simpson integration
    let grid = 20_000;
    let h = 1.0 / grid as f64;
    let mut cdf = vec![0.0; grid + 1];
    for j in 0..grid {
        let (a, b) = (j as f64 * h, (j + 1) as f64 * h);
        cdf[j + 1] = cdf[j] + (b - a) / 6.0 * (lambda(a) + 4.0 * lambda(0.5 * (a + b)) + lambda(b));
    }
    let norm = cdf[grid];
    let cdf_at = |x: f64| {
        let pos = (x / h).min(grid as f64 - 1e-9);
        let j = pos.floor() as usize;
        let t = pos - j as f64;
        ((1.0 - t) * cdf[j] + t * cdf[j + 1]) / norm
    };
    points.sort_by(f64::total_cmp);
    let np = points.len() as f64;
    let d = points
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf_at(x);
            (f - k as f64 / np).abs().max(((k + 1) as f64 / np - f).abs())
        })
        .fold(0.0, f64::max);
    let critical = 1.628 / np.sqrt();
    let ks_ok = d < critical;
    outcome(
        mean_ok && var_ok && ks_ok,
        format!(
            "Λ = {total:.4}; mean {mean:.4} (3 SE {:.4}); variance {var:.3} (3 SE {:.3}); KS D = {d:.5} < {critical:.5} over {} points",
            3.0 * se_mean,
            3.0 * se_var,
            points.len()
        ),
    )
}

fn normal(rng: &mut StreamRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Random parameter with orthonormal components and a positive definite
/// score covariance.
fn random_theta(rng: &mut StreamRng, basis: &BasisSystem, p1: usize, p2: usize, rate: f64) -> Theta {
    let q = basis.dim();
    let raw: Vec<DVector<f64>> = (0..p1 + p2).map(|_| DVector::from_fn(q, |_, _| normal(rng))).collect();
    let phi = orthonormalize(&raw[..p1], basis.gram()).unwrap();
    let psi = orthonormalize(&raw[p1..], basis.gram()).unwrap();
    let mut var_u: Vec<f64> = (0..p1).map(|_| 0.05 + 0.3 * rng.random::<f64>()).collect();
    let mut var_v: Vec<f64> = (0..p2).map(|_| 0.05 + 0.5 * rng.random::<f64>()).collect();
    var_u.sort_by(|a, b| b.total_cmp(a));
    var_v.sort_by(|a, b| b.total_cmp(a));
    let scale = 0.8 / (p1.max(p2) as f64);
    let sigma_uv = DMatrix::from_fn(p1, p2, |k, l| scale * (2.0 * rng.random::<f64>() - 1.0) * (var_u[k] * var_v[l]).sqrt());
    let c0 = basis.affine_coefficients(rate.ln(), 0.0) + DVector::from_fn(q, |_, _| 0.2 * normal(rng));
    let d0 = DVector::from_fn(q, |_, _| normal(rng));
    let theta = Theta {
        sigma_uv,
        c0,
        phi: DMatrix::from_columns(&phi),
        d0,
        psi: DMatrix::from_columns(&psi),
        var_u: DVector::from_vec(var_u),
        var_v: DVector::from_vec(var_v),
        var_eta: 0.05 + 0.3 * rng.random::<f64>(),
    };
    assert!(theta.sigma_is_pd());
    theta.normalize_signs(basis.gram()).unwrap()
}

fn random_realization(rng: &mut StreamRng, m: usize, theta: &Theta, basis: &BasisSystem) -> MarkedRealization {
    let x: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
    let mean = basis.eval_design(&x).unwrap() * &theta.d0;
    let y = mean.iter().map(|v| v + normal(rng)).collect();
    MarkedRealization::new(x, y).unwrap()
}

/// Log marginal density of one subject with one score per process, by
/// tensor Simpson integration over the scores.
fn exact_marginal(theta: &Theta, basis: &BasisSystem, obs: &MarkedRealization) -> f64 {
    let fine = Interval::unit().grid(2001);
    let fine_design = basis.eval_design(&fine).unwrap();
    let mu_fine = &fine_design * &theta.c0;
    let phi_fine = &fine_design * theta.phi.column(0);
    let weights: Vec<f64> = (0..fine.len())
        .map(|i| {
            let w = if i == 0 || i == fine.len() - 1 { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            w / (3.0 * (fine.len() - 1) as f64)
        })
        .collect();
    let design = basis.eval_design(&obs.x).unwrap();
    let mu_x = &design * &theta.c0;
    let phi_x = &design * theta.phi.column(0);
    let nu_x = &design * &theta.d0;
    let psi_x = &design * theta.psi.column(0);
    let m = obs.m();
    let log_m_fact: f64 = (1..=m).map(|k| (k as f64).ln()).sum();
    let sigma = theta.full_sigma();
    let prec = sigma.clone().try_inverse().unwrap();
    let log_det = sigma.determinant().ln();
    let s2 = theta.var_eta;

    let (su, sv) = (sigma[(0, 0)].sqrt(), sigma[(1, 1)].sqrt());
    let nodes = 801;
    let grid = |sd: f64| -> Vec<f64> { (0..nodes).map(|i| -10.0 * sd + 20.0 * sd * i as f64 / (nodes - 1) as f64).collect() };
    let (us, vs) = (grid(su), grid(sv));
    let simpson_w = |i: usize| if i == 0 || i == nodes - 1 { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
    let mut terms = Vec::with_capacity(nodes * nodes);
    for (i, &u) in us.iter().enumerate() {
        let integral: f64 = (0..fine.len()).map(|j| weights[j] * (mu_fine[j] + u * phi_fine[j]).exp()).sum();
        let point_part: f64 = (0..m).map(|j| mu_x[j] + u * phi_x[j]).sum::<f64>() - integral - log_m_fact;
        for (k, &v) in vs.iter().enumerate() {
            let resp: f64 = (0..m)
                .map(|j| {
                    let r = obs.y[j] - nu_x[j] - v * psi_x[j];
                    -0.5 * r * r / s2 - 0.5 * (2.0 * std::f64::consts::PI * s2).ln()
                })
                .sum();
            let z = DVector::from_vec(vec![u, v]);
            let prior = -0.5 * z.dot(&(&prec * &z)) - 0.5 * log_det - (2.0 * std::f64::consts::PI).ln();
            let w = simpson_w(i) * simpson_w(k) * (us[1] - us[0]) * (vs[1] - vs[0]) / 9.0;
            terms.push(point_part + resp + prior + w.ln());
        }
    }
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
}

fn gaussian_logpdf(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let chol = Cholesky::new(cov.clone()).unwrap();
    let r = y - mean;
    let sol = chol.solve(&r);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * r.dot(&sol) - 0.5 * log_det - 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI).ln()
}

fn laplace_accuracy(_: &mut Shared) -> Outcome {
    // smallest admissible cubic basis: one interior knot, five functions
    let basis = build_basis(Interval::unit(), 1, 5).unwrap();
    let mut worst = 0.0f64;
    for i in 0..20 {
        let mut rng = stream(303, i, 0);
        let theta = random_theta(&mut rng, &basis, 1, 1, 3.0);
        let m = rng.random_range(0..=3);
        let obs = random_realization(&mut rng, m, &theta, &basis);
        let approx = laplace_loglik(&theta, &basis, &obs).unwrap();
        let exact = exact_marginal(&theta, &basis, &obs);
        worst = worst.max((approx - exact).abs() / exact.abs());
    }

    // with uncorrelated score blocks the response part is exactly Gaussian,
    // so differences across responses at the same points are exact
    let mut worst_gauss = 0.0f64;
    for i in 0..20 {
        let mut rng = stream(304, i, 0);
        let mut theta = random_theta(&mut rng, &basis, 1, 1, 3.0);
        theta.sigma_uv.fill(0.0);
        let m = rng.random_range(1..=3);
        let a = random_realization(&mut rng, m, &theta, &basis);
        let b = MarkedRealization::new(a.x.clone(), a.y.iter().map(|y| y + normal(&mut rng)).collect()).unwrap();
        let diff = laplace_loglik(&theta, &basis, &a).unwrap() - laplace_loglik(&theta, &basis, &b).unwrap();
        let design = basis.eval_design(&a.x).unwrap();
        let mean = &design * &theta.d0;
        let psi = &design * &theta.psi;
        let cov = &psi * DMatrix::from_diagonal(&theta.var_v) * psi.transpose() + DMatrix::identity(m, m) * theta.var_eta;
        let exact = gaussian_logpdf(&DVector::from_vec(a.y.clone()), &mean, &cov)
            - gaussian_logpdf(&DVector::from_vec(b.y.clone()), &mean, &cov);
        worst_gauss = worst_gauss.max((diff - exact).abs() / exact.abs());
    }
    outcome(
        worst <= 0.02 && worst_gauss <= 1e-10,
        format!("max relative error {worst:.2e} (≤ 0.02) on 20 toy subjects; Gaussian reduction {worst_gauss:.2e} (≤ 1e-10)"),
    )
}

fn gradient_check(_: &mut Shared) -> Outcome {
    let basis = build_basis(Interval::unit(), 5, 5).unwrap();
    let mut worst = 0.0f64;
    for i in 0..10 {
        let mut rng = stream(404, i, 0);
        let theta = random_theta(&mut rng, &basis, 2, 2, 8.0);
        let subjects: Vec<MarkedRealization> = (0..4)
            .map(|_| {
                let m = rng.random_range(0..8);
                random_realization(&mut rng, m, &theta, &basis)
            })
            .collect();
        let data = Dataset::new(subjects, Interval::unit()).unwrap();
        let xi: Smoothing = [1e-3 * rng.random::<f64>(), 1e-3, 1e-4, 1e-3 * rng.random::<f64>()];
        let grad = penalized_loglik_grad(&theta, &basis, &data, &xi).unwrap();
        let x = theta.to_vec();
        let mut fd = DVector::zeros(x.len());
        for j in 0..x.len() {
            let h = 1e-5 * x[j].abs().max(1e-2);
            let eval = |t: f64| {
                let mut v = x.clone();
                v[j] += t;
                let th = Theta::from_vec(2, 2, basis.dim(), v.as_slice()).unwrap();
                penalized_loglik(&th, &basis, &data, &xi).unwrap()
            };
            fd[j] = (eval(h) - eval(-h)) / (2.0 * h);
        }
        worst = worst.max((&grad - &fd).amax() / grad.amax());
    }
    outcome(worst <= 1e-4, format!("max |∇ − FD|∞ / |∇|∞ = {worst:.2e} over 10 instances (≤ 1e-4)"))
}

fn conjugacy(_: &mut Shared) -> Outcome {
    let basis = build_basis(Interval::unit(), 5, 5).unwrap();
    let mut rng = stream(505, 0, 0);
    let mut theta = random_theta(&mut rng, &basis, 2, 2, 10.0);
    theta.sigma_uv.fill(0.0);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let m = rng.random_range(0..10);
        let obs = random_realization(&mut rng, m, &theta, &basis);
        let (_, v_hat) = predict_scores(&theta, &basis, &obs).unwrap();
        let ridge = if m == 0 {
            DVector::zeros(2)
        } else {
            let design = basis.eval_design(&obs.x).unwrap();
            let psi = &design * &theta.psi;
            let resid = DVector::from_vec(obs.y.clone()) - &design * &theta.d0;
            let lhs = psi.transpose() * &psi / theta.var_eta + DMatrix::from_diagonal(&theta.var_v.map(|v| 1.0 / v));
            lhs.try_inverse().unwrap() * psi.transpose() * resid / theta.var_eta
        };
        worst = worst.max((v_hat - ridge).amax());
    }
    outcome(worst <= 1e-8, format!("max |v̂ − ridge mean| = {worst:.2e} on 20 subjects (≤ 1e-8)"))
}

fn study(shared: &mut Shared, n: usize, asymptotic: bool) -> McReport {
    let xi = shared.study_xi();
    let design = PaperDesign::new(30.0, 0.75).unwrap();
    let config = StudyConfig { interior_knots: 5, fit: FitConfig { xi, ..FitConfig::default() }, asymptotic };
    run_scenario(&Scenario::new(design, n, STUDY_REPLICATES, STUDY_SEED), &config).unwrap()
}

fn recovery(shared: &mut Shared) -> Outcome {
    let reports: Vec<McReport> = [50, 100, 200].iter().map(|&n| study(shared, n, false)).collect();
    let s11: Vec<f64> = reports.iter().map(|r| r.rmse_of("sigma_uv_11").unwrap()).collect();
    let psi1 = reports[2].rmse_of("psi_1").unwrap();
    let failures: usize = reports.iter().map(|r| r.failures).sum();
    let monotone = s11.windows(2).all(|w| w[1] <= w[0]);
    let within = |v: f64, target: f64| v >= target / 2.0 && v <= target * 2.0;
    let pass = monotone && within(s11[2], REFERENCE_RMSE_SIGMA_UV11_N200) && within(psi1, REFERENCE_RMSE_PSI1_N200);
    outcome(
        pass,
        format!(
            "RMSE Σ_uv,11 at n=50/100/200: {:.4}/{:.4}/{:.4} (target .019); RMSE ψ1 at n=200: {psi1:.4} (target .061); {failures} failed replicates",
            s11[0], s11[1], s11[2]
        ),
    )
}

fn sd_calibration(shared: &mut Shared) -> Outcome {
    let r = study(shared, 400, true);
    let Some(med) = r.median_asymptotic_sd.clone() else {
        return outcome(false, "no asymptotic standard deviations were available".into());
    };
    let med11 = 10.0 * med[0][0];
    let mut ratios = Vec::new();
    for l in 0..2 {
        for k in 0..2 {
            ratios.push(med[k][l] / r.mc_sd[k][l]);
        }
    }
    let pass = (0.10..=0.16).contains(&med11) && ratios.iter().all(|q| (0.7..=1.4).contains(q));
    outcome(
        pass,
        format!(
            "median asymptotic SD×10 of Σ_uv,11 = {med11:.4} in [.10, .16] (Monte Carlo {:.4}); ratios (11, 21, 12, 22) = {:.3?}; {} singular",
            10.0 * r.mc_sd[0][0],
            ratios,
            r.singular_fisher
        ),
    )
}

fn singular_fisher(_: &mut Shared) -> Outcome {
    let basis = build_basis(Interval::unit(), 5, 5).unwrap();
    let design = PaperDesign::new(30.0, 0.75).unwrap();
    let sim = simulate_dataset(&design, 50, 808, 0).unwrap();
    let fitted = fit(&sim.data, &basis, &FitConfig::default()).unwrap();
    match asymptotic_covariance(&fitted.theta, &basis, &sim.data) {
        Err(Error::SingularFisher { rank, dim, n }) => {
            outcome(true, format!("s = {}, projected rank {rank} of {dim} with n = {n}", fitted.theta.dim()))
        }
        Ok(_) => outcome(false, "Fisher estimate was reported nonsingular".into()),
        Err(e) => outcome(false, format!("unexpected error: {e}")),
    }
}

fn invariants(_: &mut Shared) -> Outcome {
    let basis = build_basis(Interval::unit(), 5, 5).unwrap();
    let mut worst_orth = 0.0f64;
    let mut worst_drop = 0.0f64;
    let mut idempotent = true;
    let mut worst_vat = 0.0f64;
    for (i, (rate, n)) in [(10.0, 100), (30.0, 150), (30.0, 300)].into_iter().enumerate() {
        let design = PaperDesign::new(rate, 0.75).unwrap();
        let sim = simulate_dataset(&design, n, 909, i as u64).unwrap();
        let fitted = fit(&sim.data, &basis, &FitConfig::default()).unwrap();
        worst_orth = worst_orth.max(fitted.theta.orthonormality_residual(basis.gram()));
        for w in fitted.objective_trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
        let again = fitted.theta.normalize_signs(basis.gram()).unwrap();
        idempotent &= again == fitted.theta;
        if let Ok(inf) = asymptotic_covariance(&fitted.theta, &basis, &sim.data) {
            let a = constraint_jacobian(&fitted.theta, basis.gram());
            worst_vat = worst_vat.max((&inf.avar * a.transpose()).amax() / inf.avar.amax());
        }
    }

    // identical results on one and several worker threads
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let design = PaperDesign::new(30.0, 0.75).unwrap();
            let sim = simulate_dataset(&design, 120, 17, 2).unwrap();
            let fitted = fit(&sim.data, &basis, &FitConfig::default()).unwrap();
            (sim.data, fitted.theta.to_vec())
        })
    };
    let (d1, t1) = run(1);
    let (d4, t4) = run(4);
    let deterministic = d1 == d4 && t1 == t4;

    let pass = worst_orth <= 1e-8 && worst_drop <= 1e-8 && idempotent && worst_vat <= 1e-8 && deterministic;
    outcome(
        pass,
        format!(
            "orthonormality {worst_orth:.1e}; largest objective drop {worst_drop:.1e}; sign normalization idempotent: {idempotent}; \
             |V̂Aᵀ| / |V̂| = {worst_vat:.1e}; identical across thread counts: {deterministic}"
        ),
    )
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_coxkl")
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(bin()).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn read_matrix(path: &Path) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn auction_pipeline(_: &mut Shared) -> Outcome {
    let data_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join("auction_like");
    let out = tempfile::tempdir().unwrap();
    let p = |s: &str| out.path().join(s).to_string_lossy().into_owned();
    let data = data_dir.join("data.csv").to_string_lossy().into_owned();
    let subjects = data_dir.join("subjects.csv").to_string_lossy().into_owned();
    let config = data_dir.join("fit_config.json").to_string_lossy().into_owned();
    let (fit_dir, fit_file, predict_dir, infer_dir) = (p("fit"), p("fit/fit.json"), p("predict"), p("infer"));
    let steps = [
        vec!["fit", "--config", &config, "--data", &data, "--subjects", &subjects, "--out-dir", &fit_dir],
        vec!["predict", "--fit", &fit_file, "--data", &data, "--subjects", &subjects, "--out-dir", &predict_dir],
        vec!["infer", "--fit", &fit_file, "--data", &data, "--out-dir", &infer_dir],
    ];
    for s in &steps {
        if let Err(e) = run_cli(s) {
            return outcome(false, format!("`{}` failed: {e}", s[0]));
        }
    }
    #[derive(serde::Deserialize)]
    struct FitFile {
        fit: FitDocument,
    }
    let file: FitFile = serde_json::from_str(&std::fs::read_to_string(out.path().join("fit/fit.json")).unwrap()).unwrap();
    let theta = file.fit.theta.theta().unwrap();
    let basis = file.fit.theta.basis.build().unwrap();
    let orth = theta.orthonormality_residual(basis.gram());
    let monotone = file.fit.objective_trace.windows(2).all(|w| w[1] >= w[0] - 1e-8);
    let rho = read_matrix(&out.path().join("infer/correlation.csv"));
    let rho_ok = rho.iter().flatten().all(|r| (-1.0..=1.0).contains(r));
    let sd = read_matrix(&out.path().join("infer/sd_asymptotic.csv"));
    let sd_ok = sd.iter().flatten().all(|v| v.is_finite() && *v > 0.0);
    let scores = std::fs::read_to_string(out.path().join("predict/scores.csv")).unwrap();
    let rows_ok = scores.lines().count() == file.fit.n_used + 1;
    let pass = orth <= 1e-8 && monotone && rho_ok && sd_ok && rows_ok && file.fit.converged && theta.p2() == 3;
    outcome(
        pass,
        format!(
            "fit/predict/infer completed; converged {}; orthonormality {orth:.1e}; monotone trace {monotone}; ρ̂ in [-1, 1] {rho_ok}; \
             finite SDs {sd_ok}; ρ̂ = {rho:.2?}",
            file.fit.converged
        ),
    )
}
