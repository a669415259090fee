//! Smoothing-parameter selection by k-fold cross-validation and choice of
//! component counts from variance proportions.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSystem;
use crate::error::{Error, Result};
use crate::estimation::{fit, FitConfig};
use crate::likelihood::{prepare, LatentModel, Smoothing};
use crate::model::Dataset;
use crate::rng::stream;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvPlan {
    pub folds: usize,
    /// Candidate values for each of the four smoothing parameters.
    pub grid: [Vec<f64>; 4],
    /// Order in which the coordinates are optimized (a permutation of
    /// `0..4`).
    pub sweep_order: [usize; 4],
    pub init_xi: Smoothing,
    pub sweeps: usize,
    /// Seed of the subject shuffle that defines the folds.
    pub seed: u64,
}

impl Default for CvPlan {
    fn default() -> Self {
        let grid = log_grid(1e-8, 1e-1, 7);
        Self {
            folds: 5,
            grid: [grid.clone(), grid.clone(), grid.clone(), grid],
            sweep_order: [0, 1, 2, 3],
            init_xi: [1e-4; 4],
            sweeps: 1,
            seed: 0,
        }
    }
}

impl CvPlan {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::CrossValidation("at least two folds are needed".into()));
        }
        if self.grid.iter().any(|g| g.is_empty() || g.iter().any(|&v| !(v >= 0.0 && v.is_finite()))) {
            return Err(Error::CrossValidation("grids must be nonempty with nonnegative entries".into()));
        }
        let mut order = self.sweep_order;
        order.sort_unstable();
        if order != [0, 1, 2, 3] {
            return Err(Error::CrossValidation("sweep order must be a permutation of 0..4".into()));
        }
        if self.sweeps == 0 {
            return Err(Error::CrossValidation("at least one sweep is needed".into()));
        }
        Ok(())
    }
}

/// `count` logarithmically spaced values from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

/// Assigns every subject to one of `folds` folds after a seeded shuffle.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, 0, u64::MAX - 1));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

/// Sum over subjects of the Laplace log-density of each subject under the
/// estimate fitted without its fold. Returns `-∞` if any fold fit fails.
pub fn cv_score(data: &Dataset, basis: &BasisSystem, config: &FitConfig, xi: &Smoothing, fold_of: &[usize]) -> Result<f64> {
    if fold_of.len() != data.n() {
        return Err(Error::LengthMismatch { expected: data.n(), got: fold_of.len() });
    }
    let folds = fold_of.iter().copied().max().map_or(0, |m| m + 1);
    let mut cfg = config.clone();
    cfg.xi = *xi;
    let scores: Vec<f64> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..data.n()).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..data.n()).filter(|&i| fold_of[i] == f).collect();
            if test.is_empty() {
                return Ok(0.0);
            }
            if train.is_empty() {
                return Err(Error::CrossValidation(format!("fold {f} leaves no training subjects")));
            }
            Ok(held_out_loglik(&data.subset(&train), &data.subset(&test), basis, &cfg).unwrap_or(f64::NEG_INFINITY))
        })
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum())
}

fn held_out_loglik(train: &Dataset, test: &Dataset, basis: &BasisSystem, config: &FitConfig) -> Result<f64> {
    let fitted = fit(train, basis, config)?;
    let model = LatentModel::from_theta(&fitted.theta, basis)?;
    let subjects = prepare(basis, test)?;
    let values: Vec<f64> = subjects
        .par_iter()
        .map(|s| model.subject_laplace(s, None, false).map(|r| r.loglik))
        .collect::<Result<_>>()?;
    Ok(values.iter().sum())
}

/// One row of the cross-validation score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRecord {
    pub xi: Smoothing,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvOutcome {
    pub best_xi: Smoothing,
    pub best_score: f64,
    pub initial_score: f64,
    /// Every evaluated candidate in evaluation order.
    pub table: Vec<CvRecord>,
}

impl CvOutcome {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("xi_mu,xi_phi,xi_nu,xi_psi,score\n");
        for r in &self.table {
            out.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:.17e}\n",
                r.xi[0], r.xi[1], r.xi[2], r.xi[3], r.score
            ));
        }
        out
    }
}

/// Coordinate-wise grid search over the smoothing parameters.
pub fn sequential_cv(data: &Dataset, basis: &BasisSystem, config: &FitConfig, plan: &CvPlan) -> Result<CvOutcome> {
    plan.validate()?;
    let fold_of = fold_assignment(data.n(), plan.folds.min(data.n()), plan.seed);
    let mut table = Vec::new();
    let mut best_xi = plan.init_xi;
    let initial_score = cv_score(data, basis, config, &best_xi, &fold_of)?;
    table.push(CvRecord { xi: best_xi, score: initial_score });
    let mut best_score = initial_score;
    for _ in 0..plan.sweeps {
        for &j in &plan.sweep_order {
            let candidates: Vec<Smoothing> = plan.grid[j]
                .iter()
                .map(|&v| {
                    let mut xi = best_xi;
                    xi[j] = v;
                    xi
                })
                .collect();
            let scores: Vec<f64> = candidates
                .iter()
                .map(|xi| cv_score(data, basis, config, xi, &fold_of))
                .collect::<Result<_>>()?;
            if scores.iter().all(|s| *s == f64::NEG_INFINITY) {
                return Err(Error::CrossValidation(format!("every candidate failed for smoothing parameter {}", j + 1)));
            }
            for (xi, &score) in candidates.iter().zip(&scores) {
                table.push(CvRecord { xi: *xi, score });
                if score > best_score {
                    best_score = score;
                    best_xi = *xi;
                }
            }
        }
    }
    Ok(CvOutcome { best_xi, best_score, initial_score, table })
}

/// Component counts chosen from cumulative variance proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentChoice {
    pub count: usize,
    pub cumulative: Vec<f64>,
}

/// Smallest count whose cumulative variance proportion reaches
/// `threshold`.
pub fn choose_components(variances: &[f64], threshold: f64) -> ComponentChoice {
    let total: f64 = variances.iter().sum();
    let mut acc = 0.0;
    let cumulative: Vec<f64> = variances
        .iter()
        .map(|v| {
            acc += v;
            if total > 0.0 {
                acc / total
            } else {
                1.0
            }
        })
        .collect();
    let count = cumulative
        .iter()
        .position(|&c| c >= threshold - 1e-12)
        .map_or(variances.len(), |i| i + 1);
    ComponentChoice { count, cumulative }
}
