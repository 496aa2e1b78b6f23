use nalgebra::{DMatrix, DVector, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatialgl::checks::{conditional_suite, geweke_test, prior_draw, GewekeConfig};
use spatialgl::distributions::InverseGaussian;
use spatialgl::gibbs::{
    posterior_dof, row_conditional, run_gibbs, sigma_conditional, update_sigma, GibbsConfig,
};
use spatialgl::report::batch_means_se;
use spatialgl::{Dataset, Hyperparameters, ModelState, SpatialStructure};
use statrs::distribution::{ContinuousCDF, InverseGamma, Normal};

fn ks_statistic(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic critical value of the one-sample KS statistic at p = 0.001.
fn ks_critical(n: usize) -> f64 {
    1.949 / (n as f64).sqrt()
}

#[test]
fn conditional_ratios_match_log_joint() {
    let r = conditional_suite(120, 2024).unwrap();
    assert!(r.instances >= 100);
    assert!(r.max_abs_error < 1e-8, "{r:?}");
}

#[test]
fn geweke_forward_and_successive_moments_agree() {
    let stats = geweke_test(&GewekeConfig::default()).unwrap();
    for s in &stats {
        assert!(s.z.abs() < 4.0, "{s:?}");
    }
}

#[test]
fn prior_only_sigma_conditional_matches_inverse_wishart_marginal() {
    // Zero residuals and all-zero rows leave only the prior scale in S*.
    let (n, c, d) = (3, 4, 2);
    let x = DMatrix::from_fn(n, d, |l, i| (l + i) as f64);
    let dataset = Dataset::new(DMatrix::zeros(n, c), x).unwrap();
    let spatial =
        SpatialStructure::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]), 0.3).unwrap();
    let s = Matrix2::new(2.0, 0.5, 0.5, 1.0);
    let hyper = Hyperparameters::with_wishart(1.0, 4.0, s).unwrap();
    let state = ModelState::new(
        DMatrix::zeros(d, c),
        Matrix2::identity(),
        DVector::from_element(d, 1.0),
    )
    .unwrap();
    let iw = sigma_conditional(&state, &dataset.cross_products(), n, &spatial, &hyper).unwrap();
    assert_eq!(*iw.scale(), s);
    let dof = posterior_dof(n, c, d, 4.0);
    assert_eq!(iw.dof(), dof);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws: Vec<f64> = (0..20_000)
        .map(|_| update_sigma(&state, &dataset, &spatial, &hyper, &mut rng).unwrap()[(0, 0)])
        .collect();
    // Σ_11 of IW_2(S, v) is inverse gamma with shape (v − 1)/2 and scale S_11/2.
    let marginal = InverseGamma::new(0.5 * (dof - 1.0), 0.5 * s[(0, 0)]).unwrap();
    let ks = ks_statistic(draws, |x| marginal.cdf(x));
    assert!(ks < ks_critical(20_000), "KS = {ks}");
}

#[test]
fn inverse_gaussian_sampler_matches_cdf() {
    let (mu, lambda) = (2.0, 8.0);
    let ig = InverseGaussian::new(mu, lambda).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let draws: Vec<f64> = (0..20_000).map(|_| ig.sample(&mut rng)).collect();
    let z = Normal::standard();
    let cdf = |x: f64| {
        let r = (lambda / x).sqrt();
        z.cdf(r * (x / mu - 1.0)) + (2.0 * lambda / mu).exp() * z.cdf(-r * (x / mu + 1.0))
    };
    let ks = ks_statistic(draws, cdf);
    assert!(ks < ks_critical(20_000), "KS = {ks}");
}

#[test]
fn null_snp_draws_center_on_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, c, d) = (8, 4, 2);
    let mut x = DMatrix::from_fn(n, d, |_, _| rng.random_range(0..3) as f64);
    x.column_mut(0).fill(0.0);
    let y = DMatrix::from_fn(n, c, |_, _| rng.random_range(-1.0..1.0));
    let dataset = Dataset::new(y, x).unwrap();
    let spatial =
        SpatialStructure::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]), 0.5).unwrap();
    let sigma = Matrix2::new(1.0, 0.4, 0.4, 2.0);
    let omega2 = 1.5;
    let state = ModelState::new(
        DMatrix::from_element(d, c, 0.3),
        sigma,
        DVector::from_vec(vec![omega2, 1.0]),
    )
    .unwrap();
    let cond = row_conditional(0, &state, &dataset.cross_products(), &spatial).unwrap();
    let m = 10_000;
    let draws: Vec<DVector<f64>> = (0..m).map(|_| cond.sample(&mut rng)).collect();
    for j in 0..c {
        let mean = draws.iter().map(|v| v[j]).sum::<f64>() / m as f64;
        let sd = (omega2 * sigma[(j % 2, j % 2)]).sqrt();
        assert!(
            mean.abs() < 3.0 * sd / (m as f64).sqrt(),
            "component {j}: {mean}"
        );
    }
}

#[test]
fn one_sweep_from_the_posterior_preserves_marginal_means() {
    // Draw (θ, Y) jointly at d = 1, apply one sweep, and compare Σ_11 moments
    // before and after across independent replicates.
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let spatial = SpatialStructure::new(a, 0.5).unwrap();
    let hyper = Hyperparameters::with_wishart(5.0, 12.0, Matrix2::identity() * 9.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = DMatrix::from_fn(6, 1, |l, _| (l % 3) as f64);
    let reps = 20_000;
    let mut before = Vec::with_capacity(reps);
    let mut after = Vec::with_capacity(reps);
    for _ in 0..reps {
        let theta = prior_draw(1, 4, &hyper, &mut rng).unwrap();
        let data =
            spatialgl::model::simulate_with_rng(&theta.w, &theta.sigma, &spatial, &x, &mut rng)
                .unwrap();
        before.push(theta.sigma[(0, 0)]);
        let mut sampler =
            spatialgl::gibbs::GibbsSampler::new(&data, &spatial, &hyper, theta).unwrap();
        sampler.sweep(&mut rng).unwrap();
        after.push(sampler.state().sigma[(0, 0)]);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let se = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64 / v.len() as f64)
            .sqrt()
    };
    let z = (mean(&before) - mean(&after)) / (se(&before).powi(2) + se(&after).powi(2)).sqrt();
    assert!(z.abs() < 4.0, "z = {z}");
}

#[test]
fn retained_draws_are_valid() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (n, c, d) = (30, 6, 4);
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(0..3) as f64);
    let y = DMatrix::from_fn(n, c, |_, _| rng.random_range(-1.0..1.0));
    let dataset = Dataset::new(y, x).unwrap();
    let a = DMatrix::from_row_slice(3, 3, &[0.0, 0.5, 0.2, 0.5, 0.0, 0.9, 0.2, 0.9, 0.0]);
    let spatial = SpatialStructure::new(a, 0.9).unwrap();
    let hyper = Hyperparameters::new(3.0).unwrap();
    let init = ModelState::new(
        DMatrix::zeros(d, c),
        Matrix2::identity(),
        DVector::from_element(d, 1.0),
    )
    .unwrap();
    let cfg = GibbsConfig::new(600, 100, 2, 99).unwrap();
    let out = run_gibbs(&dataset, &spatial, &hyper, &cfg, init.clone()).unwrap();
    assert_eq!(out.len(), 250);
    for t in 0..out.len() {
        let s = out.sigma_draws[t];
        assert!(s[(0, 0)] > 0.0 && s.determinant() > 0.0);
        assert!(out.omega2_draws[t]
            .iter()
            .all(|&o| o > 0.0 && o.is_finite()));
        assert!(out.w_draws[t].iter().all(|v| v.is_finite()));
        assert!(out.loglik_draws[t].iter().all(|v| v.is_finite()));
    }
    let again = run_gibbs(&dataset, &spatial, &hyper, &cfg, init).unwrap();
    assert_eq!(out.w_draws, again.w_draws);
    assert_eq!(out.loglik_draws, again.loglik_draws);
    let se = batch_means_se(
        &out.w_draws.iter().map(|w| w[(0, 0)]).collect::<Vec<_>>(),
        10,
    );
    assert!(se.is_finite() && se > 0.0);
}
