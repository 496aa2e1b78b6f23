//! Self-check suites: conditional-density ratios against the log joint, the
//! successive-conditional (Geweke) joint-distribution test, per-coordinate
//! ELBO monotonicity, fidelity of simulated errors, a brute-force FDR oracle
//! and the moment-estimator consistency check.

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::distributions::{sample_gamma_rate, standard_normal_matrix, InverseWishart2};
use crate::error::Result;
use crate::gibbs::{omega2_conditional, row_conditional, sigma_conditional, GibbsSampler};
use crate::harness::{random_genotypes, random_neighborhood};
use crate::linalg::chol2;
use crate::model::{
    log_joint, simulate_dataset, simulate_with_rng, Dataset, Hyperparameters, ModelState,
    SpatialStructure,
};
use crate::report::batch_means_se;
use crate::rng::derive_seed;
use crate::selection::{fdr_threshold, PosteriorSource, TailProbMatrix};
use crate::tuning::{moment_lambda2, ridge_initialize};
use crate::vb::{run_vb, VBConfig, VBPosterior, VbProblem};

/// A random problem with a full parameter state.
#[derive(Debug, Clone)]
pub struct Instance {
    pub dataset: Dataset,
    pub spatial: SpatialStructure,
    pub hyper: Hyperparameters,
    pub state: ModelState,
}

fn random_spd<R: Rng + ?Sized>(rng: &mut R) -> Matrix2<f64> {
    let l = Matrix2::new(
        rng.random_range(0.3..1.5),
        0.0,
        rng.random_range(-1.0..1.0),
        rng.random_range(0.3..1.5),
    );
    l * l.transpose() + Matrix2::identity() * 0.1
}

fn random_spatial<R: Rng + ?Sized>(pairs: usize, rng: &mut R) -> Result<SpatialStructure> {
    if pairs == 1 {
        return Ok(SpatialStructure::independence(1));
    }
    let a = random_neighborhood(pairs, rng);
    SpatialStructure::new(a, rng.random_range(0.0..0.95))
}

/// Unstructured data with random structure, hyperparameters and state.
pub fn random_instance<R: Rng + ?Sized>(
    n: usize,
    c: usize,
    d: usize,
    rng: &mut R,
) -> Result<Instance> {
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(0..3) as f64);
    let y = standard_normal_matrix(n, c, rng);
    let dataset = Dataset::new(y, x)?;
    let spatial = random_spatial(c / 2, rng)?;
    let hyper = Hyperparameters::with_wishart(
        rng.random_range(0.5..5.0),
        rng.random_range(2.0..8.0),
        random_spd(rng),
    )?;
    let state = ModelState::new(
        standard_normal_matrix(d, c, rng) * 0.5,
        random_spd(rng),
        DVector::from_fn(d, |_, _| rng.random_range(0.2..3.0)),
    )?;
    Ok(Instance {
        dataset,
        spatial,
        hyper,
        state,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionalReport {
    pub instances: usize,
    pub comparisons: usize,
    pub max_abs_error: f64,
}

/// Largest `|Δ log conditional − Δ log joint|` over two random values of every
/// block (each row of `W`, `Σ`, each `ω_i²`) of one instance.
pub fn conditional_ratio_errors<R: Rng + ?Sized>(
    inst: &Instance,
    rng: &mut R,
) -> Result<(usize, f64)> {
    let Instance {
        dataset,
        spatial,
        hyper,
        state,
    } = inst;
    let cp = dataset.cross_products();
    let joint = |s: &ModelState| log_joint(dataset, s, spatial, hyper);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for i in 0..dataset.d() {
        let cond = row_conditional(i, state, &cp, spatial)?;
        let a = DVector::from_fn(dataset.c(), |_, _| rng.random_range(-1.5..1.5));
        let b = DVector::from_fn(dataset.c(), |_, _| rng.random_range(-1.5..1.5));
        let (mut sa, mut sb) = (state.clone(), state.clone());
        sa.w.set_row(i, &a.transpose());
        sb.w.set_row(i, &b.transpose());
        let lhs = cond.ln_pdf(&a) - cond.ln_pdf(&b);
        worst = worst.max((lhs - (joint(&sa)? - joint(&sb)?)).abs());
        count += 1;
    }

    let iw = sigma_conditional(state, &cp, dataset.n(), spatial, hyper)?;
    let (sig_a, sig_b) = (random_spd(rng), random_spd(rng));
    let (mut sa, mut sb) = (state.clone(), state.clone());
    sa.sigma = sig_a;
    sb.sigma = sig_b;
    let lhs = iw.ln_pdf(&sig_a)? - iw.ln_pdf(&sig_b)?;
    worst = worst.max((lhs - (joint(&sa)? - joint(&sb)?)).abs());
    count += 1;

    for i in 0..dataset.d() {
        let cond = omega2_conditional(i, state, hyper)?;
        let (oa, ob) = (rng.random_range(0.05..4.0), rng.random_range(0.05..4.0));
        let (mut sa, mut sb) = (state.clone(), state.clone());
        sa.omega2[i] = oa;
        sb.omega2[i] = ob;
        let lhs = cond.ln_pdf(oa) - cond.ln_pdf(ob);
        worst = worst.max((lhs - (joint(&sa)? - joint(&sb)?)).abs());
        count += 1;
    }
    Ok((count, worst))
}

/// Conditional-ratio comparisons over random instances with `n ≤ 8`, `c ≤ 6`,
/// `d ≤ 3`.
pub fn conditional_suite(instances: usize, seed: u64) -> Result<ConditionalReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ConditionalReport {
        instances,
        comparisons: 0,
        max_abs_error: 0.0,
    };
    for _ in 0..instances {
        let n = rng.random_range(1..=8);
        let c = 2 * rng.random_range(1..=3);
        let d = rng.random_range(1..=3);
        let inst = random_instance(n, c, d, &mut rng)?;
        let (k, err) = conditional_ratio_errors(&inst, &mut rng)?;
        report.comparisons += k;
        report.max_abs_error = report.max_abs_error.max(err);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GewekeConfig {
    pub n: usize,
    pub d: usize,
    pub a: DMatrix<f64>,
    pub rho: f64,
    pub lambda2: f64,
    pub v: f64,
    pub s: Matrix2<f64>,
    pub sweeps: usize,
    pub batches: usize,
    pub seed: u64,
}

impl Default for GewekeConfig {
    fn default() -> Self {
        Self {
            n: 6,
            d: 2,
            a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            rho: 0.5,
            lambda2: 5.0,
            v: 12.0,
            s: Matrix2::identity() * 9.0,
            sweeps: 50_000,
            batches: 50,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GewekeStat {
    pub name: String,
    pub forward_mean: f64,
    pub forward_se: f64,
    pub successive_mean: f64,
    pub successive_se: f64,
    pub z: f64,
}

/// Draw `(W, Σ, ω²)` from the prior.
pub fn prior_draw<R: Rng + ?Sized>(
    d: usize,
    c: usize,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<ModelState> {
    let sigma = InverseWishart2::new(hyper.s, hyper.v)?.sample(rng)?;
    let l = chol2(&sigma, "Sigma")?;
    let mut omega2 = DVector::zeros(d);
    let mut w = DMatrix::zeros(d, c);
    for i in 0..d {
        omega2[i] = sample_gamma_rate(0.5 * (c as f64 + 1.0), 0.5 * hyper.lambda2, rng)?;
        let s = omega2[i].sqrt();
        let z = standard_normal_matrix(c / 2, 2, rng);
        for p in 0..c / 2 {
            w[(i, 2 * p)] = s * l[(0, 0)] * z[(p, 0)];
            w[(i, 2 * p + 1)] = s * (l[(1, 0)] * z[(p, 0)] + l[(1, 1)] * z[(p, 1)]);
        }
    }
    ModelState::new(w, sigma, omega2)
}

fn geweke_functions(s: &ModelState) -> [f64; 4] {
    let w11 = s.w[(0, 0)];
    [w11, w11 * w11, s.sigma[(0, 0)], s.omega2[0]]
}

const GEWEKE_NAMES: [&str; 4] = ["W11", "W11^2", "Sigma11", "omega2_1"];

/// Compares prior moments from independent forward draws of `(θ, Y)` with the
/// same moments along a chain that alternates a Gibbs sweep and a fresh `Y | θ`.
pub fn geweke_test(cfg: &GewekeConfig) -> Result<Vec<GewekeStat>> {
    let c = 2 * cfg.a.nrows();
    let spatial = SpatialStructure::new(cfg.a.clone(), cfg.rho)?;
    let hyper = Hyperparameters::with_wishart(cfg.lambda2, cfg.v, cfg.s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = random_genotypes(cfg.n, cfg.d, &mut rng);

    let mut forward = vec![Vec::new(); 4];
    for _ in 0..cfg.sweeps {
        let s = prior_draw(cfg.d, c, &hyper, &mut rng)?;
        for (k, g) in geweke_functions(&s).into_iter().enumerate() {
            forward[k].push(g);
        }
    }

    let init = prior_draw(cfg.d, c, &hyper, &mut rng)?;
    let data = simulate_with_rng(&init.w, &init.sigma, &spatial, &x, &mut rng)?;
    let mut sampler = GibbsSampler::new(&data, &spatial, &hyper, init)?;
    let mut successive = vec![Vec::new(); 4];
    for _ in 0..cfg.sweeps {
        sampler.sweep(&mut rng)?;
        let s = sampler.state().clone();
        for (k, g) in geweke_functions(&s).into_iter().enumerate() {
            successive[k].push(g);
        }
        let y = simulate_with_rng(&s.w, &s.sigma, &spatial, &x, &mut rng)?.y;
        sampler.set_y(y)?;
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok((0..4)
        .map(|k| {
            let fm = mean(&forward[k]);
            let var =
                forward[k].iter().map(|g| (g - fm).powi(2)).sum::<f64>() / (cfg.sweeps - 1) as f64;
            let fse = (var / cfg.sweeps as f64).sqrt();
            let sm = mean(&successive[k]);
            let sse = batch_means_se(&successive[k], cfg.batches);
            GewekeStat {
                name: GEWEKE_NAMES[k].to_string(),
                forward_mean: fm,
                forward_se: fse,
                successive_mean: sm,
                successive_se: sse,
                z: (fm - sm) / (fse * fse + sse * sse).sqrt(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ElboReport {
    pub instances: usize,
    pub updates: usize,
    /// Largest single-update drop in the ELBO (negative when none dropped).
    pub worst_decrease: f64,
    pub max_sweeps: usize,
    pub all_converged: bool,
}

/// A simulated desk-scale problem for the variational checks.
pub fn random_vb_problem<R: Rng + ?Sized>(
    rng: &mut R,
) -> Result<(Dataset, SpatialStructure, Hyperparameters)> {
    let n = rng.random_range(20..=60);
    let c = 2 * rng.random_range(2..=3);
    let d = rng.random_range(2..=8);
    let x = random_genotypes(n, d, rng);
    let truth = standard_normal_matrix(d, c, rng) * rng.random_range(0.05..0.5);
    let spatial = random_spatial(c / 2, rng)?;
    let sigma = random_spd(rng);
    let data = simulate_with_rng(&truth, &sigma, &spatial, &x, rng)?;
    let hyper = Hyperparameters::with_wishart(
        rng.random_range(0.5..20.0),
        rng.random_range(2.0..6.0),
        random_spd(rng),
    )?;
    Ok((data, spatial, hyper))
}

/// Tracks the ELBO across every coordinate update for `sweeps` sweeps, then
/// checks convergence under `config` from the same start.
pub fn elbo_monotonicity_suite(
    instances: usize,
    sweeps: usize,
    config: &VBConfig,
    seed: u64,
) -> Result<ElboReport> {
    let mut report = ElboReport {
        instances,
        updates: 0,
        worst_decrease: f64::NEG_INFINITY,
        max_sweeps: 0,
        all_converged: true,
    };
    for k in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
        let (data, spatial, hyper) = random_vb_problem(&mut rng)?;
        let start = ridge_initialize(
            &data,
            5,
            &crate::tuning::default_penalty_grid(),
            derive_seed(seed, k as u64),
        )?;
        let init = VBPosterior::initialize(&data, &hyper, &start.w_ridge)?;
        let problem = VbProblem::new(&data, &spatial, &hyper, *config)?;

        let mut post = init.clone();
        let mut prev = problem.elbo(&post)?;
        let mut track = |post: &VBPosterior, report: &mut ElboReport| -> Result<()> {
            let e = problem.elbo(post)?;
            report.worst_decrease = report.worst_decrease.max(prev - e);
            report.updates += 1;
            prev = e;
            Ok(())
        };
        for _ in 0..sweeps {
            for i in 0..post.d() {
                let (mean, cov) = problem.row_update(&post, i)?;
                post.mu_w.set_row(i, &mean.transpose());
                post.sigma_w[i] = cov;
                track(&post, &mut report)?;
            }
            post.s_sigma = problem.sigma_update(&post)?;
            track(&post, &mut report)?;
            for i in 0..post.d() {
                let eta = problem.eta_update(&post, i)?;
                post.set_eta(i, eta);
                track(&post, &mut report)?;
            }
        }

        let fit = run_vb(&data, &spatial, &hyper, config, init)?;
        report.max_sweeps = report.max_sweeps.max(fit.elbo_trace.len());
        report.all_converged &= fit.converged;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelityReport {
    pub draws: usize,
    pub max_abs_cov_error: f64,
    pub kappa: f64,
    /// Empirical within-pair correlation for each ROI pair.
    pub pair_correlations: Vec<f64>,
}

/// Empirical covariance of `count` simulated error vectors (`W = 0`), and the
/// exact `B⁻¹ ⊗ Σ` it should approach.
pub fn simulated_error_covariance(
    spatial: &SpatialStructure,
    sigma: &Matrix2<f64>,
    count: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let c = 2 * spatial.pairs();
    let x = DMatrix::from_element(count, 1, 0.0);
    let ds = simulate_dataset(&DMatrix::zeros(1, c), sigma, spatial, &x, seed)?;
    let mean = DVector::from_fn(c, |j, _| ds.y.column(j).mean());
    let centered = DMatrix::from_fn(count, c, |i, j| ds.y[(i, j)] - mean[j]);
    let cov = centered.transpose() * centered / (count - 1) as f64;
    Ok((cov, spatial.error_covariance(sigma)))
}

pub fn simulation_fidelity(
    spatial: &SpatialStructure,
    sigma: &Matrix2<f64>,
    count: usize,
    seed: u64,
) -> Result<FidelityReport> {
    let (emp, exact) = simulated_error_covariance(spatial, sigma, count, seed)?;
    let max_abs_cov_error = (&emp - &exact).abs().max();
    let pair_correlations = (0..spatial.pairs())
        .map(|p| {
            emp[(2 * p, 2 * p + 1)] / (emp[(2 * p, 2 * p)] * emp[(2 * p + 1, 2 * p + 1)]).sqrt()
        })
        .collect();
    Ok(FidelityReport {
        draws: count,
        max_abs_cov_error,
        kappa: sigma[(0, 1)] / (sigma[(0, 0)] * sigma[(1, 1)]).sqrt(),
        pair_correlations,
    })
}

/// Brute-force Bayesian FDR selection: for each prefix length, the mean of
/// `1 − p` over the `l` largest probabilities is found by repeated maximum
/// extraction. Returns the threshold and the selected cells in row-major order.
pub fn fdr_oracle(p: &DMatrix<f64>, alpha: f64) -> (f64, Vec<(usize, usize)>) {
    let values: Vec<f64> = (0..p.nrows())
        .flat_map(|i| (0..p.ncols()).map(move |j| p[(i, j)]))
        .collect();
    let mut taken = vec![false; values.len()];
    let mut order = Vec::with_capacity(values.len());
    for _ in 0..values.len() {
        let mut best: Option<usize> = None;
        for (k, &v) in values.iter().enumerate() {
            if !taken[k] && best.is_none_or(|b| v > values[b]) {
                best = Some(k);
            }
        }
        let b = best.expect("an untaken value remains");
        taken[b] = true;
        order.push(values[b]);
    }
    let mut threshold = 1.0;
    for l in 1..=order.len() {
        let mean_false = order[..l].iter().map(|v| 1.0 - v).sum::<f64>() / l as f64;
        if mean_false <= alpha {
            threshold = order[l - 1];
        }
    }
    let mut selected = Vec::new();
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            if p[(i, j)] > threshold {
                selected.push((i, j));
            }
        }
    }
    (threshold, selected)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdrOracleReport {
    pub matrices: usize,
    /// Matrices containing at least one repeated probability.
    pub with_ties: usize,
    pub mismatches: usize,
}

/// Compares [`fdr_threshold`] with [`fdr_oracle`] on random probability
/// matrices, about half of them drawn from a small value set to force ties.
pub fn fdr_oracle_suite(matrices: usize, seed: u64) -> Result<FdrOracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels = [0.5, 0.8, 0.9, 0.95, 0.97, 0.99, 0.9995, 1.0];
    let mut report = FdrOracleReport {
        matrices,
        with_ties: 0,
        mismatches: 0,
    };
    for _ in 0..matrices {
        let d = rng.random_range(1..=12);
        let c = 2 * rng.random_range(1..=4);
        let tied = rng.random_bool(0.5);
        let p = DMatrix::from_fn(d, c, |_, _| {
            if tied {
                levels[rng.random_range(0..levels.len())]
            } else {
                rng.random_range(0.6..1.0)
            }
        });
        let alpha = rng.random_range(0.005..0.3);
        let mut sorted: Vec<f64> = p.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            report.with_ties += 1;
        }
        let tail = TailProbMatrix {
            p: p.clone(),
            c_star: 0.1,
            source: PosteriorSource::Mcmc,
            n: 1000,
        };
        let got = fdr_threshold(&tail, alpha)?;
        let (threshold, selected) = fdr_oracle(&p, alpha);
        if got.threshold != threshold || got.selected != selected {
            report.mismatches += 1;
        }
    }
    Ok(report)
}

/// `λ̂² / λ²` when the exact prior draw of `W` (with `Σ = I`) is fed to the
/// moment estimator in place of the ridge estimate.
pub fn moment_consistency(d: usize, c: usize, lambda2: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = crate::harness::draw_prior_w(d, c, lambda2, &Matrix2::identity(), &mut rng)?;
    Ok(moment_lambda2(&w, 2.0)? / lambda2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_conditional_suite() {
        let r = conditional_suite(10, 3).unwrap();
        assert!(r.max_abs_error < 1e-8, "{r:?}");
        assert!(r.comparisons >= 30);
    }

    #[test]
    fn fdr_oracle_hand_case() {
        let p = DMatrix::from_row_slice(1, 4, &[0.99, 0.97, 0.9, 0.5]);
        let (t, sel) = fdr_oracle(&p, 0.05);
        assert_eq!(t, 0.9);
        assert_eq!(sel, vec![(0, 0), (0, 1)]);
        let r = fdr_oracle_suite(50, 1).unwrap();
        assert_eq!(r.mismatches, 0);
    }

    #[test]
    fn prior_draw_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hyper = Hyperparameters::with_wishart(2.0, 6.0, Matrix2::identity()).unwrap();
        let s = prior_draw(3, 4, &hyper, &mut rng).unwrap();
        assert_eq!(s.w.shape(), (3, 4));
        assert!(s.omega2.iter().all(|&o| o > 0.0));
    }
}
