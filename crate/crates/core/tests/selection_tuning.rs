use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use spatialgl::checks::{fdr_oracle, fdr_oracle_suite, moment_consistency};
use spatialgl::selection::{
    fdr_threshold, gaussian_tail, quantile_sorted, tail_probabilities_from_draws, PosteriorSource,
    TailProbMatrix,
};
use spatialgl::tuning::{cv_folds, cv_sse, moment_lambda2, ridge_initialize, waic_with_min_draws};
use spatialgl::Dataset;

fn tail(p: DMatrix<f64>) -> TailProbMatrix {
    TailProbMatrix {
        p,
        c_star: 0.1,
        source: PosteriorSource::Mcmc,
        n: 1000,
    }
}

#[test]
fn fdr_threshold_matches_brute_force_oracle() {
    let r = fdr_oracle_suite(1000, 7).unwrap();
    assert_eq!(r.mismatches, 0, "{r:?}");
    assert!(r.with_ties > 100);
}

proptest! {
    #[test]
    fn selected_set_respects_the_fdr_bound(
        values in prop::collection::vec(0.0f64..=1.0, 1..60),
        alpha in 0.001f64..0.5,
    ) {
        let p = DMatrix::from_row_slice(1, values.len(), &values);
        let sel = fdr_threshold(&tail(p.clone()), alpha).unwrap();
        if !sel.selected.is_empty() {
            let mean_false = sel.selected.iter().map(|&(i, j)| 1.0 - p[(i, j)]).sum::<f64>()
                / sel.selected.len() as f64;
            prop_assert!(mean_false <= alpha + 1e-12);
        }
        let (threshold, selected) = fdr_oracle(&p, alpha);
        prop_assert_eq!(sel.threshold, threshold);
        prop_assert_eq!(sel.selected, selected);
    }

    #[test]
    fn tail_probabilities_shrink_as_c_star_grows(
        seed in any::<u64>(),
        c1 in 0.01f64..1.0,
        gap in 0.0f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws: Vec<DMatrix<f64>> = (0..150)
            .map(|_| DMatrix::from_fn(3, 4, |_, _| rng.random_range(-2.0..2.0)))
            .collect();
        let lo = tail_probabilities_from_draws(&draws, c1).unwrap();
        let hi = tail_probabilities_from_draws(&draws, c1 + gap).unwrap();
        for (a, b) in lo.p.iter().zip(hi.p.iter()) {
            prop_assert!(a >= b);
        }
    }

    #[test]
    fn waic_is_the_sum_of_its_terms_and_ignores_order(
        seed in any::<u64>(),
        m in 2usize..40,
        n in 1usize..10,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws: Vec<DVector<f64>> = (0..m)
            .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-30.0..0.0)))
            .collect();
        let r = waic_with_min_draws(&draws, 2).unwrap();
        prop_assert_eq!(r.waic, r.lppd_term + r.penalty_term);

        let mut perm_draws = draws.clone();
        perm_draws.reverse();
        let subjects: Vec<usize> = (0..n).rev().collect();
        let perm_subjects: Vec<DVector<f64>> = draws
            .iter()
            .map(|d| DVector::from_fn(n, |l, _| d[subjects[l]]))
            .collect();
        let a = waic_with_min_draws(&perm_draws, 2).unwrap();
        let b = waic_with_min_draws(&perm_subjects, 2).unwrap();
        prop_assert!((a.waic - r.waic).abs() <= 1e-9 * r.waic.abs().max(1.0));
        prop_assert!((b.waic - r.waic).abs() <= 1e-9 * r.waic.abs().max(1.0));
    }
}

#[test]
fn gaussian_tail_matches_monte_carlo() {
    let (mean, sd, c_star) = (0.1, 0.04, 0.044);
    let exact = gaussian_tail(mean, sd, c_star);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let normal = Normal::new(mean, sd).unwrap();
    let m = 1_000_000;
    let hits = (0..m)
        .filter(|_| normal.sample(&mut rng).abs() > c_star)
        .count();
    let mc = hits as f64 / m as f64;
    // Φ(1.4) + Φ(−3.6), independent of the implementation.
    assert!((exact - 0.919_403).abs() < 1e-6, "{exact}");
    assert!((exact - mc).abs() < 5e-4, "{exact} vs {mc}");
}

#[test]
fn type_seven_quantiles() {
    let v = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(quantile_sorted(&v, 0.25), 1.75);
    assert_eq!(quantile_sorted(&v, 0.5), 2.5);
    assert_eq!(quantile_sorted(&v, 0.0), 1.0);
    assert_eq!(quantile_sorted(&v, 1.0), 4.0);
    let w: Vec<f64> = (1..=11).map(f64::from).collect();
    assert_eq!(quantile_sorted(&w, 0.1), 2.0);
    assert!((quantile_sorted(&w, 0.975) - 10.75).abs() < 1e-12);
}

#[test]
fn moment_estimator_exact_cases_and_consistency() {
    let w = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 3.0, 1.0]);
    assert_eq!(moment_lambda2(&w, 2.0).unwrap(), 1.0);
    let w = DMatrix::from_row_slice(
        3,
        4,
        &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0],
    );
    assert_eq!(moment_lambda2(&w, 8.0).unwrap(), 2.0);
    for (seed, lambda2) in [(1, 5.0), (2, 0.5), (3, 60.0)] {
        let ratio = moment_consistency(1250, 4, lambda2, seed).unwrap();
        assert!((ratio - 1.0).abs() < 0.2, "ratio {ratio}");
    }
}

fn ridge_oracle(x: &DMatrix<f64>, y: &DMatrix<f64>, penalty: f64) -> DMatrix<f64> {
    let mut a = x.transpose() * x;
    for i in 0..a.nrows() {
        a[(i, i)] += penalty;
    }
    a.try_inverse().unwrap() * x.transpose() * y
}

#[test]
fn cross_validation_matches_fold_by_fold_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, d, c) = (40, 5, 2);
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    let beta = DMatrix::from_fn(d, c, |_, _| rng.random_range(-1.0..1.0));
    let y = &x * &beta + DMatrix::from_fn(n, c, |_, _| rng.random_range(-1.5..1.5));
    let data = Dataset::new(y.clone(), x.clone()).unwrap();
    let grid = [0.01, 0.1, 1.0, 10.0, 100.0];
    let seed = 9;
    let folds = cv_folds(n, 5, seed);

    let mut oracle = DMatrix::zeros(grid.len(), c);
    for test in &folds {
        let train: Vec<usize> = (0..n).filter(|r| !test.contains(r)).collect();
        let pick = |m: &DMatrix<f64>, rows: &[usize]| {
            DMatrix::from_fn(rows.len(), m.ncols(), |r, j| m[(rows[r], j)])
        };
        for (g, &pen) in grid.iter().enumerate() {
            let b = ridge_oracle(&pick(&x, &train), &pick(&y, &train), pen);
            let resid = pick(&y, test) - pick(&x, test) * b;
            for j in 0..c {
                oracle[(g, j)] += resid.column(j).norm_squared();
            }
        }
    }
    let sse = cv_sse(&data, 5, &grid, seed).unwrap();
    assert!((&sse - &oracle).abs().max() < 1e-9 * oracle.max());

    let init = ridge_initialize(&data, 5, &grid, seed).unwrap();
    for j in 0..c {
        let best = (0..grid.len()).fold(0, |b, g| {
            if oracle[(g, j)] < oracle[(b, j)] {
                g
            } else {
                b
            }
        });
        assert_eq!(init.ridge_penalties[j], grid[best]);
        let b = ridge_oracle(&x, &y.columns(j, 1).into_owned(), grid[best]);
        assert!((init.w_ridge.column(j) - b.column(0)).amax() < 1e-10);
    }
}

#[test]
fn ridge_orthonormal_design_and_shrinkage_limit() {
    let q = DMatrix::from_fn(8, 3, |r, c| if r == 2 * c { 1.0 } else { 0.0 });
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y = DMatrix::from_fn(8, 2, |_, _| rng.random_range(-2.0..2.0));
    let data = Dataset::new(y.clone(), q.clone()).unwrap();
    let r = ridge_initialize(&data, 4, &[0.5], 1).unwrap();
    let expected = q.transpose() * &y / 1.5;
    assert!((r.w_ridge - expected).abs().max() < 1e-12);
    let r = ridge_initialize(&data, 4, &[1e12], 1).unwrap();
    assert!(r.w_ridge.abs().max() < 1e-6);
}
