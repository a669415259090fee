//! Asymptotic covariance of the estimator on the constraint tangent space,
//! and case-resampling bootstrap standard deviations.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSystem;
use crate::error::{Error, Result};
use crate::estimation::{fit_from, FitConfig};
use crate::likelihood::{prepare, LatentModel};
use crate::model::{param_dim, Dataset, ParamLayout, Theta};
use crate::rng::stream;

#[derive(Debug, Clone)]
pub struct InferenceResult {
    /// Outer-product estimate of the Fisher information, `s × s`.
    pub fisher: DMatrix<f64>,
    /// Orthonormal rows spanning the null space of the constraint
    /// Jacobian, `(s − s1) × s`.
    pub tangent_basis: DMatrix<f64>,
    /// Asymptotic covariance of `√n(θ̂ − θ)`, `s × s`.
    pub avar: DMatrix<f64>,
    /// Standard deviations of `Σ̂_uv` (already divided by `√n`).
    pub sd_sigma_uv: DMatrix<f64>,
    /// Standard deviations of every coordinate (already divided by `√n`).
    pub sd: DVector<f64>,
    /// Whether the projected information matrix had full numerical rank.
    pub rank_ok: bool,
    /// Smallest eigenvalue of the projected information matrix.
    pub min_eigenvalue: f64,
    pub n: usize,
}

/// Per-subject gradients of the Laplace log-density, one row per subject.
pub fn score_vectors(theta: &Theta, basis: &BasisSystem, data: &Dataset) -> Result<DMatrix<f64>> {
    let model = LatentModel::from_theta(theta, basis)?;
    let subjects = prepare(basis, data)?;
    let rows: Vec<DVector<f64>> = subjects
        .par_iter()
        .map(|s| {
            let r = model.subject_laplace(s, None, true)?;
            Ok(r.grad.expect("gradient requested").to_theta_order())
        })
        .collect::<Result<_>>()?;
    let s = theta.dim();
    Ok(DMatrix::from_fn(rows.len(), s, |i, j| rows[i][j]))
}

/// Number of orthonormality constraints.
pub fn constraint_count(p1: usize, p2: usize) -> usize {
    p1 * (p1 + 1) / 2 + p2 * (p2 + 1) / 2
}

/// Jacobian of the constraints `c_kᵀJc_l − δ_kl` (`k ≤ l`) followed by the
/// `d` analogs, with respect to the stacked parameter.
pub fn constraint_jacobian(theta: &Theta, gram: &DMatrix<f64>) -> DMatrix<f64> {
    let (p1, p2, q) = (theta.p1(), theta.p2(), theta.q());
    let layout = ParamLayout::new(p1, p2, q);
    let mut a = DMatrix::zeros(constraint_count(p1, p2), layout.dim());
    let mut row = 0;
    let mut fill = |coefs: &DMatrix<f64>, offset: &dyn Fn(usize) -> usize, a: &mut DMatrix<f64>| {
        let jc = gram * coefs;
        for k in 0..coefs.ncols() {
            for l in k..coefs.ncols() {
                if k == l {
                    a.view_mut((row, offset(k)), (1, q)).copy_from(&(jc.column(k) * 2.0).transpose());
                } else {
                    a.view_mut((row, offset(k)), (1, q)).copy_from(&jc.column(l).transpose());
                    a.view_mut((row, offset(l)), (1, q)).copy_from(&jc.column(k).transpose());
                }
                row += 1;
            }
        }
    };
    fill(&theta.phi, &|k| layout.phi_col(k), &mut a);
    fill(&theta.psi, &|l| layout.psi_col(l), &mut a);
    a
}

/// Gradients of the four roughness penalty sums, one row each.
pub fn penalty_jacobian(theta: &Theta, basis: &BasisSystem) -> DMatrix<f64> {
    let layout = ParamLayout::new(theta.p1(), theta.p2(), theta.q());
    let omega = basis.roughness();
    let mut dp = DMatrix::zeros(4, layout.dim());
    let q = theta.q();
    dp.view_mut((0, layout.c0.start), (1, q)).copy_from(&(omega * &theta.c0 * 2.0).transpose());
    for k in 0..theta.p1() {
        let g = omega * theta.phi.column(k) * 2.0;
        dp.view_mut((1, layout.phi_col(k)), (1, q)).copy_from(&g.transpose());
    }
    dp.view_mut((2, layout.d0.start), (1, q)).copy_from(&(omega * &theta.d0 * 2.0).transpose());
    for l in 0..theta.p2() {
        let g = omega * theta.psi.column(l) * 2.0;
        dp.view_mut((3, layout.psi_col(l)), (1, q)).copy_from(&g.transpose());
    }
    dp
}

/// Orthonormal basis (as rows) of the null space of `a`.
pub fn tangent_complement(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (r, s) = a.shape();
    if r > s {
        return Err(Error::JacobianRank { rank: s, expected: r });
    }
    // pad Aᵀ to a square matrix so the SVD returns a complete U
    let mut padded = DMatrix::zeros(s, s);
    padded.view_mut((0, 0), (s, r)).copy_from(&a.transpose());
    let svd = padded.svd(true, false);
    let u = svd.u.expect("requested U");
    let max_sv = svd.singular_values.max();
    let tol = max_sv * s as f64 * f64::EPSILON;
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let rank = order.iter().filter(|&&i| svd.singular_values[i] > tol).count();
    if rank < r {
        return Err(Error::JacobianRank { rank, expected: r });
    }
    let rows: Vec<_> = order[r..].iter().map(|&i| u.column(i).transpose()).collect();
    Ok(DMatrix::from_rows(&rows))
}

/// Sandwich-free asymptotic covariance `Bᵀ(B F̂ Bᵀ)⁻¹B` with `F̂` the
/// outer-product Fisher estimate. Fails when `B F̂ Bᵀ` is numerically
/// singular, which happens whenever `n < s − s1`.
pub fn asymptotic_covariance(theta: &Theta, basis: &BasisSystem, data: &Dataset) -> Result<InferenceResult> {
    let scores = score_vectors(theta, basis, data)?;
    let n = data.n();
    let fisher = scores.tr_mul(&scores) / n as f64;
    let a = constraint_jacobian(theta, basis.gram());
    let b = tangent_complement(&a)?;
    let projected = &b * &fisher * b.transpose();
    let projected = (&projected + projected.transpose()) * 0.5;
    let dim = projected.nrows();
    let eig = SymmetricEigen::new(projected);
    let max_ev = eig.eigenvalues.amax();
    let tol = max_ev * dim as f64 * f64::EPSILON;
    let rank = eig.eigenvalues.iter().filter(|&&e| e > tol).count();
    let min_eigenvalue = eig.eigenvalues.min();
    if rank < dim {
        return Err(Error::SingularFisher { rank, dim, n });
    }
    let inv_diag = eig.eigenvalues.map(|e| 1.0 / e);
    let inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_diag) * eig.eigenvectors.transpose();
    let avar = b.transpose() * inv * &b;
    let avar = (&avar + avar.transpose()) * 0.5;
    let sd = DVector::from_fn(avar.nrows(), |i, _| (avar[(i, i)].max(0.0) / n as f64).sqrt());
    let (p1, p2) = (theta.p1(), theta.p2());
    let sd_sigma_uv = DMatrix::from_fn(p1, p2, |k, l| sd[l * p1 + k]);
    Ok(InferenceResult {
        fisher,
        tangent_basis: b,
        avar,
        sd_sigma_uv,
        sd,
        rank_ok: true,
        min_eigenvalue,
        n,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Elementwise standard deviations of the resampled `Σ̂_uv`.
    pub sd_sigma_uv: Vec<Vec<f64>>,
    pub used: usize,
    pub dropped: usize,
}

/// Case-resampling bootstrap of `Σ̂_uv`. Each resampled fit starts from
/// `reference` and is sign-aligned to it through `J` inner products of the
/// components before the standard deviations are taken.
pub fn bootstrap_sd(
    data: &Dataset,
    basis: &BasisSystem,
    config: &FitConfig,
    reference: &Theta,
    n_boot: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    if n_boot < 2 {
        return Err(Error::InvalidParameter("the bootstrap needs at least two replicates".into()));
    }
    let n = data.n();
    let gram = basis.gram();
    let fits: Vec<Option<DMatrix<f64>>> = (0..n_boot as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, b, u64::MAX);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let resampled = data.subset(&idx);
            let fitted = fit_from(&resampled, basis, config, reference).ok()?;
            let mut t = fitted.theta;
            for k in 0..t.p1() {
                if t.phi.column(k).dot(&(gram * reference.phi.column(k))) < 0.0 {
                    t.flip_u(k);
                }
            }
            for l in 0..t.p2() {
                if t.psi.column(l).dot(&(gram * reference.psi.column(l))) < 0.0 {
                    t.flip_v(l);
                }
            }
            Some(t.sigma_uv)
        })
        .collect();
    let kept: Vec<DMatrix<f64>> = fits.into_iter().flatten().collect();
    let dropped = n_boot - kept.len();
    if kept.len() < 2 {
        return Err(Error::InvalidParameter(format!("only {} bootstrap fits succeeded", kept.len())));
    }
    let m = kept.len() as f64;
    let mean = kept.iter().fold(DMatrix::zeros(reference.p1(), reference.p2()), |a, s| a + s) / m;
    let sd = (0..reference.p1())
        .map(|k| {
            (0..reference.p2())
                .map(|l| (kept.iter().map(|s| (s[(k, l)] - mean[(k, l)]).powi(2)).sum::<f64>() / (m - 1.0)).sqrt())
                .collect()
        })
        .collect();
    Ok(BootstrapResult { sd_sigma_uv: sd, used: kept.len(), dropped })
}

/// Header of a binary matrix dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub rows: usize,
    pub cols: usize,
    /// Always `"f64-le"`.
    pub dtype: String,
    /// Always `"row-major"`.
    pub layout: String,
    pub labels: Vec<String>,
}

/// Serializes a matrix as one JSON header line followed by little-endian
/// `f64` values in row-major order.
pub fn encode_matrix_dump(m: &DMatrix<f64>, labels: Vec<String>) -> Result<Vec<u8>> {
    let header = MatrixHeader {
        rows: m.nrows(),
        cols: m.ncols(),
        dtype: "f64-le".into(),
        layout: "row-major".into(),
        labels,
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_matrix_dump(bytes: &[u8]) -> Result<(MatrixHeader, DMatrix<f64>)> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::InvalidParameter("matrix dump has no header line".into()))?;
    let header: MatrixHeader = serde_json::from_slice(&bytes[..split])?;
    let body = &bytes[split + 1..];
    if body.len() != header.rows * header.cols * 8 {
        return Err(Error::LengthMismatch { expected: header.rows * header.cols * 8, got: body.len() });
    }
    let values: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((header.clone(), DMatrix::from_row_slice(header.rows, header.cols, &values)))
}

/// Dimension of the tangent space.
pub fn tangent_dim(p1: usize, p2: usize, q: usize) -> usize {
    param_dim(p1, p2, q) - constraint_count(p1, p2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, Interval};
    use crate::simulate::PaperDesign;

    #[test]
    fn dimensions() {
        assert_eq!(constraint_count(2, 2), 6);
        assert_eq!(tangent_dim(2, 2, 9), 57);
        let b = build_basis(Interval::unit(), 5, 5).unwrap();
        let t = PaperDesign::new(30.0, 0.75).unwrap().projected_theta(&b);
        let a = constraint_jacobian(&t, b.gram());
        assert_eq!(a.shape(), (6, 63));
        let bt = tangent_complement(&a).unwrap();
        assert_eq!(bt.shape(), (57, 63));
        assert!((&a * bt.transpose()).amax() < 1e-10);
        assert!((&bt * bt.transpose() - DMatrix::identity(57, 57)).amax() < 1e-10);
    }

    #[test]
    fn complement_of_unit_row() {
        let mut a = DMatrix::zeros(1, 4);
        a[(0, 0)] = 1.0;
        let b = tangent_complement(&a).unwrap();
        assert!(b.column(0).amax() < 1e-15);
        assert!((&b.transpose() * &b - DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 1.0, 1.0]))).amax() < 1e-12);
        assert!(tangent_complement(&DMatrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn constraint_rows_match_finite_differences() {
        let b = build_basis(Interval::unit(), 5, 5).unwrap();
        let t = PaperDesign::new(30.0, 0.75).unwrap().projected_theta(&b);
        let a = constraint_jacobian(&t, b.gram());
        let h_fn = |v: &DVector<f64>| {
            let th = Theta::from_vec(2, 2, 9, v.as_slice()).unwrap();
            let cc = th.phi.transpose() * b.gram() * &th.phi;
            let dd = th.psi.transpose() * b.gram() * &th.psi;
            vec![cc[(0, 0)], cc[(0, 1)], cc[(1, 1)], dd[(0, 0)], dd[(0, 1)], dd[(1, 1)]]
        };
        let x = t.to_vec();
        for j in 0..x.len() {
            let h = 1e-6;
            let mut p = x.clone();
            p[j] += h;
            let mut m = x.clone();
            m[j] -= h;
            let (fp, fm) = (h_fn(&p), h_fn(&m));
            for r in 0..6 {
                assert!((a[(r, j)] - (fp[r] - fm[r]) / (2.0 * h)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dump_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -2.5, 3.0, 1e-300, f64::MAX, 0.1]);
        let bytes = encode_matrix_dump(&m, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let (h, back) = decode_matrix_dump(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(h.labels.len(), 3);
    }
}
