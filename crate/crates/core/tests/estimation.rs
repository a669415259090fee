//! Properties of the fitted estimates.

use coxkl::basis::{build_basis, BasisSystem, Interval};
use coxkl::estimation::{fit, fit_from, FitConfig};
use coxkl::likelihood::penalized_loglik;
use coxkl::model::{Dataset, MarkedRealization};
use coxkl::simulate::{simulate_dataset, PaperDesign};

fn setup(n: usize, replicate: u64) -> (Dataset, BasisSystem) {
    let design = PaperDesign::new(30.0, 0.75).unwrap();
    let sim = simulate_dataset(&design, n, 77, replicate).unwrap();
    (sim.data, build_basis(Interval::unit(), 5, 5).unwrap())
}

#[test]
fn fit_is_a_fixed_point() {
    let (data, basis) = setup(150, 0);
    let config = FitConfig::default();
    let first = fit(&data, &basis, &config).unwrap();
    assert!(first.converged);
    let again = fit_from(&data, &basis, &config, &first.theta).unwrap();
    let (a, b) = (first.objective(), again.objective());
    assert!(b >= a - 1e-8 * a.abs(), "{a} then {b}");
    assert!((b - a).abs() <= 1e-6 * a.abs(), "{a} then {b}");
    let value = penalized_loglik(&first.theta, &basis, &data, &config.xi).unwrap();
    assert!((value - a).abs() <= 1e-9 * a.abs());
    let drift = (&again.theta.sigma_uv - &first.theta.sigma_uv).amax();
    assert!(drift < 1e-3, "{drift}");
}

#[test]
fn heavy_smoothing_gives_affine_means() {
    let (data, basis) = setup(120, 1);
    let config = FitConfig { xi: [1e4, 1e-4, 1e4, 1e-4], ..FitConfig::default() };
    let fitted = fit(&data, &basis, &config).unwrap();
    let light = fit(&data, &basis, &FitConfig::default()).unwrap();
    let rough_heavy = basis.penalty_value(&fitted.theta.d0).unwrap();
    let rough_light = basis.penalty_value(&light.theta.d0).unwrap();
    assert!(rough_heavy < 1e-3 * rough_light.max(1e-3), "{rough_heavy} vs {rough_light}");
    assert!(basis.penalty_value(&fitted.theta.c0).unwrap() < 1e-3);
}

#[test]
fn shifting_responses_shifts_the_mean_only() {
    let (data, basis) = setup(120, 2);
    let shift = 3.5;
    let shifted = Dataset::new(
        data.realizations
            .iter()
            .map(|r| MarkedRealization::new(r.x.clone(), r.y.iter().map(|y| y + shift).collect()).unwrap())
            .collect(),
        data.domain,
    )
    .unwrap();
    let config = FitConfig::default();
    let a = fit(&data, &basis, &config).unwrap().theta;
    let b = fit(&shifted, &basis, &config).unwrap().theta;
    let expected = &a.d0 + basis.affine_coefficients(shift, 0.0);
    assert!((&b.d0 - expected).amax() < 1e-3, "{}", (&b.d0 - &a.d0));
    assert!((&b.sigma_uv - &a.sigma_uv).amax() < 1e-3);
    assert!((&b.psi - &a.psi).amax() < 1e-2);
    assert!((b.var_eta - a.var_eta).abs() < 1e-4);
}

#[test]
fn invalid_configuration_is_rejected() {
    let (data, basis) = setup(20, 3);
    assert!(fit(&data, &basis, &FitConfig { p1: 0, ..FitConfig::default() }).is_err());
    assert!(fit(&data, &basis, &FitConfig { xi: [-1.0, 0.0, 0.0, 0.0], ..FitConfig::default() }).is_err());
    assert!(fit(&data, &basis, &FitConfig { p2: basis.dim() + 1, ..FitConfig::default() }).is_err());
}
