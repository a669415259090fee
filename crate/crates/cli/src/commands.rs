use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use coxkl::basis::{build_basis, BasisSystem};
use coxkl::estimation::FitDocument;
use coxkl::inference::{bootstrap_sd, encode_matrix_dump};
use coxkl::likelihood::predict_all;
use coxkl::model::{ParamLayout, ThetaDocument};
use coxkl::modelselect::{log_grid, sequential_cv, CvPlan};
use coxkl::simulate::{
    auction_like_truth, pilot_smoothing, rmse_table_csv, run_scenario, sd_table_csv, simulate_dataset, FunctionalTruth,
    PaperDesign, Scenario, StudyConfig, AUCTION_DAYS,
};
use coxkl::{asymptotic_covariance, Dataset, Error, FitConfig, Interval, Theta};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::io::{self, labels, matrix_csv, num, LongitudinalData};
use crate::{CvArgs, DataArgs, Design, FitArgs, InferArgs, ModelArgs, PredictArgs, SimulateArgs, StudyArgs};

/// Fit output: the estimate on the normalized scale plus what is needed
/// to map back to the data.
#[derive(Debug, Serialize, Deserialize)]
pub struct FitFile {
    /// Original time domain.
    pub domain: [f64; 2],
    pub subject_ids: Vec<String>,
    pub fit: FitDocument,
}

#[derive(Debug, Serialize, Deserialize)]
struct SubjectScores {
    subject_id: String,
    u: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthFile {
    design: String,
    rate: Option<f64>,
    alpha: Option<f64>,
    domain: [f64; 2],
    /// Covariance of the stacked scores.
    sigma: Vec<Vec<f64>>,
    var_eta: f64,
    /// Spline coefficients of the truth, when it is a spline.
    theta: Option<ThetaDocument>,
    mean_count: f64,
    scores: Vec<SubjectScores>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn subject_ids(n: usize) -> Vec<String> {
    let width = n.to_string().len().max(3);
    (1..=n).map(|i| format!("s{i:0width$}")).collect()
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let (sim, domain, truth) = match a.design {
        Design::Paper => {
            let d = PaperDesign::new(a.r, a.alpha)?;
            let n = a.n.unwrap_or(200) as usize;
            let sim = simulate_dataset(&d, n, a.seed, a.replicate)?;
            let truth = TruthFile {
                design: "paper".into(),
                rate: Some(a.r),
                alpha: Some(a.alpha),
                domain: [0.0, 1.0],
                sigma: rows(&d.sigma()),
                var_eta: d.var_eta(),
                theta: None,
                mean_count: sim.mean_count(),
                scores: Vec::new(),
            };
            (sim, Interval::unit(), truth)
        }
        Design::Auction => {
            let t = auction_like_truth()?;
            let n = a.n.unwrap_or(194) as usize;
            let sim = simulate_dataset(&t, n, a.seed, a.replicate)?;
            let truth = TruthFile {
                design: "auction".into(),
                rate: None,
                alpha: None,
                domain: [0.0, AUCTION_DAYS],
                sigma: rows(&t.sigma()),
                var_eta: t.var_eta(),
                theta: Some(ThetaDocument::new(&t.theta, t.basis.spec())),
                mean_count: sim.mean_count(),
                scores: Vec::new(),
            };
            (sim, Interval::new(0.0, AUCTION_DAYS)?, truth)
        }
    };
    let ids = subject_ids(sim.data.n());
    let data = LongitudinalData {
        ids: ids.clone(),
        x: sim.data.realizations.iter().map(|r| r.x.iter().map(|&x| io::from_unit(domain, x)).collect()).collect(),
        y: sim.data.realizations.iter().map(|r| r.y.clone()).collect(),
    };
    data.write(&a.out_dir)?;
    let mut truth = truth;
    truth.scores = ids
        .iter()
        .zip(sim.u.iter().zip(&sim.v))
        .map(|(id, (u, v))| SubjectScores { subject_id: id.clone(), u: u.iter().copied().collect(), v: v.iter().copied().collect() })
        .collect();
    io::write_json(&a.out_dir.join("truth.json"), &truth)?;
    println!("subjects: {}", sim.data.n());
    println!("mean points per subject: {:.4}", sim.mean_count());
    println!("wrote {}", a.out_dir.display());
    Ok(())
}

fn fit_config(m: &ModelArgs) -> Result<FitConfig> {
    let xi = io::parse_list(&m.xi)?;
    let xi: [f64; 4] = xi.try_into().map_err(|_| anyhow::anyhow!("--xi needs four values"))?;
    let cfg = FitConfig {
        p1: m.p1,
        p2: m.p2,
        xi,
        max_outer_iters: m.max_iters,
        tol: m.tol,
        seed: m.seed,
        init_jitter: m.jitter,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load(data: &DataArgs, domain: Interval) -> Result<(LongitudinalData, Dataset)> {
    let raw = LongitudinalData::read(&data.data, data.subjects.as_deref())?;
    let ds = raw.normalized(domain)?;
    Ok((raw, ds))
}

fn curves_csv(theta: &Theta, basis: &BasisSystem, domain: Interval, grid: usize) -> Result<String> {
    let xs = Interval::unit().grid(grid);
    let design = basis.eval_design(&xs)?;
    let mu = &design * &theta.c0;
    let nu = &design * &theta.d0;
    let phi = &design * &theta.phi;
    let psi = &design * &theta.psi;
    let mut out = String::from("t,baseline_intensity,mean_response");
    for k in 1..=theta.p1() {
        out.push_str(&format!(",phi_{k}"));
    }
    for l in 1..=theta.p2() {
        out.push_str(&format!(",psi_{l}"));
    }
    out.push('\n');
    for (i, &x) in xs.iter().enumerate() {
        out.push_str(&num(io::from_unit(domain, x)));
        out.push(',');
        // intensity per unit of original time
        out.push_str(&num(mu[i].exp() / domain.length()));
        out.push(',');
        out.push_str(&num(nu[i]));
        for k in 0..theta.p1() {
            out.push(',');
            out.push_str(&num(phi[(i, k)]));
        }
        for l in 0..theta.p2() {
            out.push(',');
            out.push_str(&num(psi[(i, l)]));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn fit(a: FitArgs) -> Result<()> {
    let domain = io::parse_domain(&a.model.domain)?;
    let cfg = fit_config(&a.model)?;
    let (raw, data) = load(&a.data, domain)?;
    let basis = build_basis(Interval::unit(), a.model.knots, a.model.quad_order)?;
    let result = coxkl::fit(&data, &basis, &cfg)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let file = FitFile { domain: [domain.lo, domain.hi], subject_ids: raw.ids.clone(), fit: result.to_document(&basis, &cfg) };
    io::write_json(&a.out_dir.join("fit.json"), &file)?;
    io::write(&a.out_dir.join("curves.csv"), curves_csv(&result.theta, &basis, domain, a.grid)?)?;
    let mut trace = String::from("iteration,objective\n");
    for (i, v) in result.objective_trace.iter().enumerate() {
        trace.push_str(&format!("{i},{}\n", num(*v)));
    }
    io::write(&a.out_dir.join("trace.csv"), trace)?;
    let t = &result.theta;
    println!("subjects: {}  points: {}", data.n(), data.total_points());
    println!("parameters: {}", t.dim());
    println!("converged: {}  iterations: {}", result.converged, result.iterations);
    println!("penalized log-likelihood: {}", num(result.objective()));
    println!("orthonormality residual: {:.3e}", t.orthonormality_residual(basis.gram()));
    println!("score variances (intensity): {:?}", t.var_u.as_slice());
    println!("score variances (response): {:?}", t.var_v.as_slice());
    println!("noise variance: {}", num(t.var_eta));
    print!("{}", matrix_csv("sigma_uv", &labels("u", t.p1()), &labels("v", t.p2()), &t.sigma_uv));
    if !result.converged {
        eprintln!("warning: the optimizer stopped before meeting the convergence tolerance");
    }
    Ok(())
}

fn load_fit(path: &Path) -> Result<(FitFile, Theta, BasisSystem, Interval)> {
    let file: FitFile = io::read_json(path)?;
    let theta = file.fit.theta.theta()?;
    let basis = file.fit.theta.basis.build()?;
    let domain = Interval::new(file.domain[0], file.domain[1])?;
    Ok((file, theta, basis, domain))
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let (_, theta, basis, domain) = load_fit(&a.fit)?;
    let (raw, data) = load(&a.data, domain)?;
    let scores = predict_all(&theta, &basis, &data)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;

    let mut sc = String::from("subject_id,m");
    for k in 1..=theta.p1() {
        sc.push_str(&format!(",u_{k}"));
    }
    for l in 1..=theta.p2() {
        sc.push_str(&format!(",v_{l}"));
    }
    sc.push('\n');
    let xs = Interval::unit().grid(a.grid);
    let grid_design = basis.eval_design(&xs)?;
    let grid_mean = &grid_design * &theta.d0;
    let grid_psi = &grid_design * &theta.psi;
    let mut traj = String::from("subject_id,t,fitted\n");
    let mut resid = String::from("subject_id,t,y,fitted,residual\n");
    let (mut ss, mut count) = (0.0, 0usize);
    for (i, (u, v)) in scores.iter().enumerate() {
        let id = &raw.ids[i];
        sc.push_str(&format!("{id},{}", data.realizations[i].m()));
        for s in u.iter().chain(v.iter()) {
            sc.push(',');
            sc.push_str(&num(*s));
        }
        sc.push('\n');
        let g = &grid_mean + &grid_psi * v;
        for (j, &x) in xs.iter().enumerate() {
            traj.push_str(&format!("{id},{},{}\n", num(io::from_unit(domain, x)), num(g[j])));
        }
        let obs = &data.realizations[i];
        if obs.m() > 0 {
            let fitted = theta.mean_response(&basis, v, &obs.x)?;
            for (j, &y) in obs.y.iter().enumerate() {
                let r = y - fitted[j];
                ss += r * r;
                count += 1;
                resid.push_str(&format!("{id},{},{},{},{}\n", num(raw.x[i][j]), num(y), num(fitted[j]), num(r)));
            }
        }
    }
    io::write(&a.out_dir.join("scores.csv"), sc)?;
    io::write(&a.out_dir.join("trajectories.csv"), traj)?;
    io::write(&a.out_dir.join("residuals.csv"), resid)?;
    println!("subjects: {}", data.n());
    if count > 0 {
        println!("residual standard deviation: {:.6}", (ss / count as f64).sqrt());
    }
    println!("wrote {}", a.out_dir.display());
    Ok(())
}

pub fn infer(a: InferArgs) -> Result<()> {
    let (file, theta, basis, domain) = load_fit(&a.fit)?;
    // without a manifest, evaluate on the subjects the fit was computed on
    let raw = LongitudinalData::read_with(&a.data.data, a.data.subjects.as_deref(), Some(&file.subject_ids))?;
    let data = raw.normalized(domain)?;
    if data.n() != file.fit.n_used {
        eprintln!("warning: the data has {} subjects but the fit used {}", data.n(), file.fit.n_used);
    }
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let (p1, p2) = (theta.p1(), theta.p2());
    let (ru, cv) = (labels("u", p1), labels("v", p2));
    io::write(&a.out_dir.join("correlation.csv"), matrix_csv("rho_uv", &ru, &cv, &theta.cross_correlation()))?;
    println!("cross-correlation of scores:");
    print!("{}", matrix_csv("rho_uv", &ru, &cv, &theta.cross_correlation()));

    let inf = match asymptotic_covariance(&theta, &basis, &data) {
        Ok(inf) => inf,
        Err(Error::SingularFisher { rank, dim, n }) => bail!(
            "the Fisher information estimate is singular: projected rank {rank} of {dim} with n = {n} subjects \
             (asymptotic standard deviations need more subjects than free parameters)"
        ),
        Err(e) => return Err(e.into()),
    };
    io::write(&a.out_dir.join("sd_asymptotic.csv"), matrix_csv("sd_sigma_uv", &ru, &cv, &inf.sd_sigma_uv))?;
    let layout = ParamLayout::new(p1, p2, theta.q());
    io::write(&a.out_dir.join("avar.bin"), encode_matrix_dump(&inf.avar, layout.labels())?)?;
    println!("asymptotic standard deviations of sigma_uv:");
    print!("{}", matrix_csv("sd_sigma_uv", &ru, &cv, &inf.sd_sigma_uv));

    if a.bootstrap > 0 {
        let cfg = file.fit.config.clone();
        let boot = bootstrap_sd(&data, &basis, &cfg, &theta, a.bootstrap, a.seed)?;
        let m = DMatrix::from_fn(p1, p2, |k, l| boot.sd_sigma_uv[k][l]);
        io::write(&a.out_dir.join("sd_bootstrap.csv"), matrix_csv("sd_sigma_uv", &ru, &cv, &m))?;
        println!("bootstrap standard deviations of sigma_uv ({} used, {} dropped):", boot.used, boot.dropped);
        print!("{}", matrix_csv("sd_sigma_uv", &ru, &cv, &m));
    }
    println!("wrote {}", a.out_dir.display());
    Ok(())
}

pub fn cv(a: CvArgs) -> Result<()> {
    let domain = io::parse_domain(&a.model.domain)?;
    let cfg = fit_config(&a.model)?;
    let (_, data) = load(&a.data, domain)?;
    let basis = build_basis(Interval::unit(), a.model.knots, a.model.quad_order)?;
    let grid = log_grid(a.grid_min, a.grid_max, a.grid_points);
    let plan = CvPlan {
        folds: a.folds,
        grid: [grid.clone(), grid.clone(), grid.clone(), grid],
        sweep_order: [0, 1, 2, 3],
        init_xi: cfg.xi,
        sweeps: a.sweeps,
        seed: a.model.seed,
    };
    let out = sequential_cv(&data, &basis, &cfg, &plan)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    io::write(&a.out, out.to_csv())?;
    println!("best xi: {}", out.best_xi.map(|v| format!("{v:e}")).join(","));
    println!("cross-validated log-likelihood: {} (initial {})", num(out.best_score), num(out.initial_score));
    Ok(())
}

fn parse_scenario(s: &str) -> Result<PaperDesign> {
    let err = || anyhow::anyhow!("scenario {s:?} is not of the form alpha075-r30");
    let (a, r) = s.trim().split_once("-r").ok_or_else(err)?;
    let digits = a.strip_prefix("alpha").ok_or_else(err)?;
    let alpha = digits.parse::<f64>().map_err(|_| err())? / 10f64.powi(digits.len() as i32 - 1);
    let rate = r.parse::<f64>().map_err(|_| err())?;
    Ok(PaperDesign::new(rate, alpha)?)
}

pub fn study(a: StudyArgs) -> Result<()> {
    let (designs, sizes, knots, reps) = if a.full {
        let mut d = Vec::new();
        for alpha in [0.60, 0.75] {
            for r in [10.0, 30.0] {
                d.push(PaperDesign::new(r, alpha)?);
            }
        }
        (d, vec![50, 100, 200, 400], vec![5, 10], 300)
    } else {
        let d = a.scenarios.split(',').map(parse_scenario).collect::<Result<Vec<_>>>()?;
        (d, io::parse_usize_list(&a.n)?, io::parse_usize_list(&a.knots)?, a.reps)
    };
    if reps < 2 {
        bail!("--reps must be at least 2");
    }
    if sizes.contains(&0) {
        bail!("sample sizes must be positive");
    }
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let fixed_xi = match &a.xi {
        Some(s) => {
            let v = io::parse_list(s)?;
            Some(<[f64; 4]>::try_from(v).map_err(|_| anyhow::anyhow!("--xi needs four values"))?)
        }
        None => None,
    };
    let mut reports = Vec::new();
    let mut smoothing = String::from("scenario,knots,xi_mu,xi_phi,xi_nu,xi_psi,source\n");
    for &k in &knots {
        for design in &designs {
            let mut config = StudyConfig { interior_knots: k, fit: FitConfig::default(), asymptotic: a.asymptotic };
            let base = Scenario::new(*design, 0, reps, a.seed).label;
            let base = base.trim_end_matches("-n0").to_string();
            let source = match fixed_xi {
                Some(xi) => {
                    config.fit.xi = xi;
                    "fixed"
                }
                None => {
                    let pilot_n = *sizes.iter().max().expect("at least one size");
                    let plan = CvPlan { seed: a.seed, ..CvPlan::default() };
                    config.fit.xi = pilot_smoothing(design, pilot_n, a.seed, &config, &plan)?.best_xi;
                    "pilot-cv"
                }
            };
            let xi = config.fit.xi;
            smoothing.push_str(&format!("{base},{k},{:e},{:e},{:e},{:e},{source}\n", xi[0], xi[1], xi[2], xi[3]));
            for &n in &sizes {
                let mut scenario = Scenario::new(*design, n, reps, a.seed);
                if knots.len() > 1 {
                    scenario.label = format!("{}-k{k}", scenario.label);
                }
                let report = run_scenario(&scenario, &config)?;
                eprintln!(
                    "{}: {} replicates, {} failures, {} not converged",
                    report.label, report.replicates, report.failures, report.not_converged
                );
                reports.push(report);
            }
        }
    }
    let table1 = rmse_table_csv(&reports);
    io::write(&a.out_dir.join("table1.csv"), &table1)?;
    io::write(&a.out_dir.join("smoothing.csv"), smoothing)?;
    io::write_json(&a.out_dir.join("reports.json"), &reports)?;
    if a.asymptotic {
        io::write(&a.out_dir.join("table2.csv"), sd_table_csv(&reports))?;
    }
    print!("{table1}");
    Ok(())
}
