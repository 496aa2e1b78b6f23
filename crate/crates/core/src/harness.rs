//! Simulation studies: estimation accuracy and interval coverage (study I),
//! empirical FDR of the Bayesian FDR rule (study II), and a WAIC comparison of
//! the spatial model against the independence baseline.
//!
//! Replicates run in parallel with seeds derived from the master seed, and
//! results are collected in replicate order.

use nalgebra::{DMatrix, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::{sample_gamma_rate, standard_normal_matrix};
use crate::error::{Error, Result};
use crate::gibbs::{run_gibbs, GibbsConfig, GibbsOutput};
use crate::io::{center_columns, standardize_phenotypes};
use crate::linalg::chol2;
use crate::model::{simulate_dataset, Dataset, SpatialStructure};
use crate::pipeline::{
    best_by_waic, fit_vb, prepare, rho_grid_waic, FitSettings, DEFAULT_RHO_GRID,
};
use crate::rng::derive_seed;
use crate::selection::{fdr_threshold, CoefficientPosterior};
use crate::tuning::waic;
use crate::vb::VBConfig;

/// Random symmetric neighborhood with off-diagonal weights uniform on `[0.1, 1]`.
pub fn random_neighborhood<R: Rng + ?Sized>(pairs: usize, rng: &mut R) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(pairs, pairs);
    for i in 0..pairs {
        for j in (i + 1)..pairs {
            let v = rng.random_range(0.1..=1.0);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Minor-allele counts `Binomial(2, maf)` with `maf ~ U(0.05, 0.5)` per SNP;
/// constant columns are redrawn.
pub fn random_genotypes<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, d);
    for j in 0..d {
        loop {
            let maf = rng.random_range(0.05..0.5);
            let b = Binomial::new(2, maf).expect("valid binomial");
            for i in 0..n {
                x[(i, j)] = b.sample(rng) as f64;
            }
            let first = x[(0, j)];
            if x.column(j).iter().any(|&v| v != first) {
                break;
            }
        }
    }
    x
}

/// Draw `W` from the group-lasso prior with fixed `Σ`.
pub fn draw_prior_w<R: Rng + ?Sized>(
    d: usize,
    c: usize,
    lambda2: f64,
    sigma: &Matrix2<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let l = chol2(sigma, "Sigma")?;
    let mut w = DMatrix::zeros(d, c);
    for i in 0..d {
        let omega2 = sample_gamma_rate(0.5 * (c as f64 + 1.0), 0.5 * lambda2, rng)?;
        let z = standard_normal_matrix(c / 2, 2, rng);
        let s = omega2.sqrt();
        for p in 0..c / 2 {
            w[(i, 2 * p)] = s * l[(0, 0)] * z[(p, 0)];
            w[(i, 2 * p + 1)] = s * (l[(1, 0)] * z[(p, 0)] + l[(1, 1)] * z[(p, 1)]);
        }
    }
    Ok(w)
}

/// `scale · [[1, κ], [κ, 1]]`.
pub fn sigma_from(kappa: f64, scale: f64) -> Matrix2<f64> {
    Matrix2::new(1.0, kappa, kappa, 1.0) * scale
}

/// One synthetic data set with its generating parameters.
#[derive(Debug, Clone)]
pub struct SimulatedProblem {
    pub dataset: Dataset,
    pub a: DMatrix<f64>,
    pub w_true: DMatrix<f64>,
    pub sigma: Matrix2<f64>,
}

/// Random genotypes and neighborhood, `W` from the prior at `λ²`, and
/// responses from the spatial model at `ρ`.
pub fn simulate_problem(
    n: usize,
    c: usize,
    d: usize,
    rho: f64,
    kappa: f64,
    lambda2: f64,
    seed: u64,
) -> Result<SimulatedProblem> {
    validate_dims(n, c, d, 1)?;
    if !(kappa > -1.0 && kappa < 1.0) {
        return Err(Error::invalid(
            "kappa",
            format!("{kappa} is outside (-1, 1)"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
    let x = random_genotypes(n, d, &mut rng);
    let a = random_neighborhood(c / 2, &mut rng);
    let spatial = SpatialStructure::new(a.clone(), rho)?;
    let sigma = sigma_from(kappa, 1.0);
    let w_true = draw_prior_w(d, c, lambda2, &sigma, &mut rng)?;
    let dataset = simulate_dataset(&w_true, &sigma, &spatial, &x, seed)?;
    Ok(SimulatedProblem {
        dataset,
        a,
        w_true,
        sigma,
    })
}

fn checked_threads<T, F>(replicates: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    (0..replicates).into_par_iter().map(f).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOneConfig {
    pub n: usize,
    pub c: usize,
    pub d: usize,
    pub replicates: usize,
    pub rho_true: f64,
    pub kappa: f64,
    /// Prior scale used to draw the true coefficients.
    pub lambda2_true: f64,
    pub rho_grid: Vec<f64>,
    pub vb_rho: f64,
    pub level: f64,
    pub gibbs: GibbsConfig,
    pub vb: VBConfig,
    pub settings: FitSettings,
    pub seed: u64,
}

impl Default for StudyOneConfig {
    fn default() -> Self {
        Self {
            n: 100,
            c: 6,
            d: 30,
            replicates: 50,
            rho_true: 0.8,
            kappa: 0.8,
            lambda2_true: 60.0,
            rho_grid: DEFAULT_RHO_GRID.to_vec(),
            vb_rho: 0.95,
            level: 0.95,
            gibbs: GibbsConfig::default(),
            vb: VBConfig::default(),
            settings: FitSettings::default(),
            seed: 1,
        }
    }
}

/// The fixed parts of a simulation design: genotypes, neighborhood, truth.
#[derive(Debug, Clone)]
pub struct SimDesign {
    pub x: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub spatial: SpatialStructure,
    pub sigma: Matrix2<f64>,
    pub w_true: DMatrix<f64>,
}

pub fn study_one_design(cfg: &StudyOneConfig) -> Result<SimDesign> {
    validate_dims(cfg.n, cfg.c, cfg.d, cfg.replicates)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX));
    let x = random_genotypes(cfg.n, cfg.d, &mut rng);
    let a = random_neighborhood(cfg.c / 2, &mut rng);
    let spatial = SpatialStructure::new(a.clone(), cfg.rho_true)?;
    let sigma = sigma_from(cfg.kappa, 1.0);
    let w_true = draw_prior_w(cfg.d, cfg.c, cfg.lambda2_true, &sigma, &mut rng)?;
    Ok(SimDesign {
        x,
        a,
        spatial,
        sigma,
        w_true,
    })
}

fn validate_dims(n: usize, c: usize, d: usize, r: usize) -> Result<()> {
    if c < 4 || !c.is_multiple_of(2) {
        return Err(Error::invalid(
            "c",
            format!("simulation studies need an even c >= 4, got {c}"),
        ));
    }
    if n < 5 || d == 0 || r == 0 {
        return Err(Error::invalid(
            "dimensions",
            format!("n = {n}, d = {d}, replicates = {r}"),
        ));
    }
    Ok(())
}

/// Per-method accuracy summaries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub mse: f64,
    pub corr: f64,
    pub bias2: f64,
    pub coverage: f64,
    pub post_sd: f64,
    pub per_replicate_mse: Vec<f64>,
    pub per_replicate_coverage: Vec<f64>,
    pub per_replicate_sd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyOneReport {
    pub spatial_mcmc: MethodSummary,
    pub independence_mcmc: MethodSummary,
    pub spatial_vb: MethodSummary,
    pub chosen_rho: Vec<f64>,
    pub lambda2: Vec<f64>,
}

impl StudyOneReport {
    /// Fraction of replicates where spatial MCMC has lower MSE than the baseline.
    pub fn mse_win_rate(&self) -> f64 {
        let wins = self
            .spatial_mcmc
            .per_replicate_mse
            .iter()
            .zip(&self.independence_mcmc.per_replicate_mse)
            .filter(|(s, b)| s < b)
            .count();
        wins as f64 / self.spatial_mcmc.per_replicate_mse.len() as f64
    }

    pub fn table(&self) -> String {
        let mut s = String::from("model,mse,corr,bias2,coverage,post_sd\n");
        for m in [
            &self.independence_mcmc,
            &self.spatial_mcmc,
            &self.spatial_vb,
        ] {
            s.push_str(&format!(
                "{},{:.6},{:.4},{:.6},{:.4},{:.5}\n",
                m.method, m.mse, m.corr, m.bias2, m.coverage, m.post_sd
            ));
        }
        s
    }
}

struct Estimate {
    mean: DMatrix<f64>,
    sd: DMatrix<f64>,
    lo: DMatrix<f64>,
    hi: DMatrix<f64>,
}

fn estimate<P: CoefficientPosterior>(post: &P, level: f64) -> Result<Estimate> {
    let ci = post.credible_intervals(level)?;
    Ok(Estimate {
        mean: post.posterior_mean(),
        sd: post.posterior_sd(),
        lo: ci.lo,
        hi: ci.hi,
    })
}

fn correlation(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

fn summarize(method: &str, truth: &DMatrix<f64>, ests: &[Estimate]) -> MethodSummary {
    let k = truth.len() as f64;
    let r = ests.len() as f64;
    let mut per_mse = Vec::new();
    let mut per_cov = Vec::new();
    let mut per_sd = Vec::new();
    let mut corr = 0.0;
    let mut mean_est = DMatrix::zeros(truth.nrows(), truth.ncols());
    for e in ests {
        let diff = &e.mean - truth;
        per_mse.push(diff.norm_squared() / k);
        let covered = truth
            .iter()
            .zip(e.lo.iter().zip(e.hi.iter()))
            .filter(|(t, (lo, hi))| *lo <= *t && *t <= *hi)
            .count();
        per_cov.push(covered as f64 / k);
        per_sd.push(e.sd.sum() / k);
        corr += correlation(&e.mean, truth);
        mean_est += &e.mean;
    }
    mean_est /= r;
    let bias2 = (mean_est - truth).norm_squared() / k;
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    MethodSummary {
        method: method.to_string(),
        mse: avg(&per_mse),
        corr: corr / r,
        bias2,
        coverage: avg(&per_cov),
        post_sd: avg(&per_sd),
        per_replicate_mse: per_mse,
        per_replicate_coverage: per_cov,
        per_replicate_sd: per_sd,
    }
}

struct StudyOneReplicate {
    spatial: Estimate,
    independence: Estimate,
    vb: Estimate,
    rho: f64,
    lambda2: f64,
}

pub fn run_sim_study_1(cfg: &StudyOneConfig) -> Result<StudyOneReport> {
    let design = study_one_design(cfg)?;
    let reps = checked_threads(cfg.replicates, |r| {
        let seed = derive_seed(cfg.seed, r as u64);
        let ds = simulate_dataset(
            &design.w_true,
            &design.sigma,
            &design.spatial,
            &design.x,
            seed,
        )?;
        let settings = FitSettings {
            ridge_seed: derive_seed(seed, 1),
            ..cfg.settings.clone()
        };
        let prep = prepare(&ds, &settings)?;
        let w0 = &prep.ridge.w_ridge;
        let gibbs = GibbsConfig {
            seed: derive_seed(seed, 2),
            ..cfg.gibbs
        };

        let vb_spatial = SpatialStructure::new(design.a.clone(), cfg.vb_rho)?;
        let vb = fit_vb(&ds, &vb_spatial, &prep.hyper, w0, &cfg.vb)?;

        let grid = rho_grid_waic(
            &ds,
            &design.a,
            &cfg.rho_grid,
            &prep.hyper,
            w0,
            &cfg.vb,
            &gibbs,
        )?;
        let best = best_by_waic(&grid);

        let ind = SpatialStructure::independence(cfg.c / 2);
        let ind_vb = fit_vb(&ds, &ind, &prep.hyper, w0, &cfg.vb)?;
        let ind_out = run_gibbs(&ds, &ind, &prep.hyper, &gibbs, ind_vb.to_model_state()?)?;

        Ok(StudyOneReplicate {
            spatial: estimate(&grid[best].output, cfg.level)?,
            independence: estimate(&ind_out, cfg.level)?,
            vb: estimate(&vb, cfg.level)?,
            rho: grid[best].value,
            lambda2: prep.hyper.lambda2,
        })
    })?;
    let pick = |f: fn(&StudyOneReplicate) -> &Estimate| -> Vec<Estimate> {
        reps.iter()
            .map(|r| {
                let e = f(r);
                Estimate {
                    mean: e.mean.clone(),
                    sd: e.sd.clone(),
                    lo: e.lo.clone(),
                    hi: e.hi.clone(),
                }
            })
            .collect()
    };
    Ok(StudyOneReport {
        spatial_mcmc: summarize("spatial_mcmc", &design.w_true, &pick(|r| &r.spatial)),
        independence_mcmc: summarize(
            "independence_mcmc",
            &design.w_true,
            &pick(|r| &r.independence),
        ),
        spatial_vb: summarize("spatial_vb", &design.w_true, &pick(|r| &r.vb)),
        chosen_rho: reps.iter().map(|r| r.rho).collect(),
        lambda2: reps.iter().map(|r| r.lambda2).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyTwoConfig {
    pub n: usize,
    pub c: usize,
    pub d: usize,
    pub replicates: usize,
    pub rho_true: f64,
    pub kappa: f64,
    /// Error variance scale; larger values shrink the standardized effects.
    pub sigma_scale: f64,
    /// Number of rows set to each of the effect values 1, 2, 3.
    pub effect_rows: [usize; 3],
    pub c_star_grid: Vec<f64>,
    pub alpha: f64,
    pub rho: f64,
    pub gibbs: GibbsConfig,
    pub vb: VBConfig,
    pub settings: FitSettings,
    pub seed: u64,
}

/// Scales the 50/25/25 rows (out of 486) of effects 1/2/3 to `d` SNPs by
/// largest-remainder rounding of the total.
pub fn scaled_effect_rows(d: usize) -> [usize; 3] {
    let full = [50.0, 25.0, 25.0];
    let exact: Vec<f64> = full.iter().map(|k| k * d as f64 / 486.0).collect();
    let total = (exact.iter().sum::<f64>()).round().max(1.0) as usize;
    let mut rows: Vec<usize> = exact.iter().map(|v| v.floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut k = 0;
    while rows.iter().sum::<usize>() < total {
        rows[order[k % 3]] += 1;
        k += 1;
    }
    [rows[0], rows[1], rows[2]]
}

impl Default for StudyTwoConfig {
    fn default() -> Self {
        Self {
            n: 100,
            c: 6,
            d: 30,
            replicates: 50,
            rho_true: 0.8,
            kappa: 0.8,
            sigma_scale: 1.0,
            effect_rows: scaled_effect_rows(30),
            c_star_grid: vec![
                0.005, 0.01, 0.02, 0.04, 0.06, 0.08, 0.1, 0.15, 0.2, 0.3, 0.5, 0.7, 1.0, 1.5,
            ],
            alpha: 0.05,
            rho: 0.95,
            gibbs: GibbsConfig::default(),
            vb: VBConfig::default(),
            settings: FitSettings::default(),
            seed: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdrPoint {
    pub c_star: f64,
    pub fdr_mcmc: f64,
    pub fdr_vb: f64,
    pub selected_mcmc: f64,
    pub selected_vb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyTwoReport {
    pub points: Vec<FdrPoint>,
    /// Largest `|W_ij| / sd(y_j)` in each replicate.
    pub max_standardized_effect: Vec<f64>,
}

impl StudyTwoReport {
    pub fn table(&self) -> String {
        let mut s = String::from("c_star,fdr_mcmc,fdr_vb,selected_mcmc,selected_vb\n");
        for p in &self.points {
            s.push_str(&format!(
                "{},{:.4},{:.4},{:.2},{:.2}\n",
                p.c_star, p.fdr_mcmc, p.fdr_vb, p.selected_mcmc, p.selected_vb
            ));
        }
        s
    }
}

pub fn study_two_design(cfg: &StudyTwoConfig) -> Result<SimDesign> {
    validate_dims(cfg.n, cfg.c, cfg.d, cfg.replicates)?;
    if cfg.effect_rows.iter().sum::<usize>() > cfg.d {
        return Err(Error::invalid("effect rows", "more nonzero rows than SNPs"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX));
    // Centered genotypes keep the model intercept-free once Y is centered.
    let x = center_columns(&random_genotypes(cfg.n, cfg.d, &mut rng));
    let a = random_neighborhood(cfg.c / 2, &mut rng);
    let spatial = SpatialStructure::new(a.clone(), cfg.rho_true)?;
    let sigma = sigma_from(cfg.kappa, cfg.sigma_scale);
    let mut w_true = DMatrix::zeros(cfg.d, cfg.c);
    let mut row = 0;
    for (k, &count) in cfg.effect_rows.iter().enumerate() {
        for _ in 0..count {
            w_true.row_mut(row).fill((k + 1) as f64);
            row += 1;
        }
    }
    Ok(SimDesign {
        x,
        a,
        spatial,
        sigma,
        w_true,
    })
}

fn false_discovery_proportion(sel: &[(usize, usize)], truth: &DMatrix<f64>) -> f64 {
    if sel.is_empty() {
        return 0.0;
    }
    let false_hits = sel.iter().filter(|&&(i, j)| truth[(i, j)] == 0.0).count();
    false_hits as f64 / sel.len() as f64
}

pub fn run_sim_study_2(cfg: &StudyTwoConfig) -> Result<StudyTwoReport> {
    let design = study_two_design(cfg)?;
    let g = cfg.c_star_grid.len();
    let reps = checked_threads(cfg.replicates, |r| {
        let seed = derive_seed(cfg.seed, r as u64);
        let raw = simulate_dataset(
            &design.w_true,
            &design.sigma,
            &design.spatial,
            &design.x,
            seed,
        )?;
        let (y, t) = standardize_phenotypes(&raw.y)?;
        let ds = Dataset::new(y, raw.x.clone())?;
        let max_effect = (0..cfg.c)
            .map(|j| design.w_true.column(j).amax() / t.sds[j])
            .fold(0.0, f64::max);
        let settings = FitSettings {
            ridge_seed: derive_seed(seed, 1),
            ..cfg.settings.clone()
        };
        let prep = prepare(&ds, &settings)?;
        let spatial = SpatialStructure::new(design.a.clone(), cfg.rho)?;
        let vb = fit_vb(&ds, &spatial, &prep.hyper, &prep.ridge.w_ridge, &cfg.vb)?;
        let gibbs = GibbsConfig {
            seed: derive_seed(seed, 2),
            ..cfg.gibbs
        };
        let out: GibbsOutput = run_gibbs(&ds, &spatial, &prep.hyper, &gibbs, vb.to_model_state()?)?;
        let mut row = Vec::with_capacity(g);
        for &cs in &cfg.c_star_grid {
            let sm = fdr_threshold(&out.tail_probabilities(cs)?, cfg.alpha)?;
            let sv = fdr_threshold(&vb.tail_probabilities(cs)?, cfg.alpha)?;
            row.push((
                false_discovery_proportion(&sm.selected, &design.w_true),
                false_discovery_proportion(&sv.selected, &design.w_true),
                sm.selected.len() as f64,
                sv.selected.len() as f64,
            ));
        }
        Ok((row, max_effect))
    })?;
    let r = reps.len() as f64;
    let points = (0..g)
        .map(|k| {
            let sum = |f: fn(&(f64, f64, f64, f64)) -> f64| {
                reps.iter().map(|(row, _)| f(&row[k])).sum::<f64>() / r
            };
            FdrPoint {
                c_star: cfg.c_star_grid[k],
                fdr_mcmc: sum(|v| v.0),
                fdr_vb: sum(|v| v.1),
                selected_mcmc: sum(|v| v.2),
                selected_vb: sum(|v| v.3),
            }
        })
        .collect();
    Ok(StudyTwoReport {
        points,
        max_standardized_effect: reps.iter().map(|(_, m)| *m).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaicStudyConfig {
    pub n: usize,
    pub c: usize,
    pub d: usize,
    pub replicates: usize,
    pub rho_true: f64,
    pub kappa: f64,
    pub lambda2_true: f64,
    pub gibbs: GibbsConfig,
    pub vb: VBConfig,
    pub settings: FitSettings,
    pub seed: u64,
}

impl Default for WaicStudyConfig {
    fn default() -> Self {
        Self {
            n: 100,
            c: 6,
            d: 30,
            replicates: 50,
            rho_true: 0.8,
            kappa: 0.8,
            lambda2_true: 60.0,
            gibbs: GibbsConfig {
                n_iter: 3000,
                burn_in: 1000,
                thin: 1,
                seed: 0,
            },
            vb: VBConfig::default(),
            settings: FitSettings::default(),
            seed: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaicStudyReport {
    pub spatial: Vec<f64>,
    pub independence: Vec<f64>,
}

impl WaicStudyReport {
    pub fn win_rate(&self) -> f64 {
        let wins = self
            .spatial
            .iter()
            .zip(&self.independence)
            .filter(|(s, i)| s < i)
            .count();
        wins as f64 / self.spatial.len() as f64
    }
}

/// WAIC of the spatial model at the generating `ρ` and of the independence
/// baseline, fitted to the same replicate.
pub fn run_waic_study(cfg: &WaicStudyConfig) -> Result<WaicStudyReport> {
    validate_dims(cfg.n, cfg.c, cfg.d, cfg.replicates)?;
    let reps = checked_threads(cfg.replicates, |r| {
        let seed = derive_seed(cfg.seed, r as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
        let x = random_genotypes(cfg.n, cfg.d, &mut rng);
        let a = random_neighborhood(cfg.c / 2, &mut rng);
        let spatial = SpatialStructure::new(a, cfg.rho_true)?;
        let sigma = sigma_from(cfg.kappa, 1.0);
        let w = draw_prior_w(cfg.d, cfg.c, cfg.lambda2_true, &sigma, &mut rng)?;
        let ds = simulate_dataset(&w, &sigma, &spatial, &x, seed)?;
        let settings = FitSettings {
            ridge_seed: derive_seed(seed, 1),
            ..cfg.settings.clone()
        };
        let prep = prepare(&ds, &settings)?;
        let gibbs = GibbsConfig {
            seed: derive_seed(seed, 2),
            ..cfg.gibbs
        };
        let ind = SpatialStructure::independence(cfg.c / 2);
        let mut scores = [0.0; 2];
        for (k, s) in [&spatial, &ind].into_iter().enumerate() {
            let vb = fit_vb(&ds, s, &prep.hyper, &prep.ridge.w_ridge, &cfg.vb)?;
            let out = run_gibbs(&ds, s, &prep.hyper, &gibbs, vb.to_model_state()?)?;
            scores[k] = waic(&out.loglik_draws)?.waic;
        }
        Ok(scores)
    })?;
    Ok(WaicStudyReport {
        spatial: reps.iter().map(|s| s[0]).collect(),
        independence: reps.iter().map(|s| s[1]).collect(),
    })
}
