//! End-to-end fitting: ridge start, `λ²` choice, VB, Gibbs, and grid scans.

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{run_gibbs, GibbsConfig, GibbsOutput};
use crate::model::{Dataset, Hyperparameters, SpatialStructure};
use crate::selection::{fdr_threshold, CoefficientPosterior};
use crate::tuning::{
    default_penalty_grid, moment_lambda2, ridge_initialize, waic, RidgeInit, WaicReport,
};
use crate::vb::{run_vb, VBConfig, VBPosterior};

/// Default `ρ` grid scanned by WAIC.
pub const DEFAULT_RHO_GRID: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 0.95];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lambda2Choice {
    Value(f64),
    Moment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub lambda2: Lambda2Choice,
    pub v: f64,
    pub s: Matrix2<f64>,
    pub cv_folds: usize,
    pub penalty_grid: Vec<f64>,
    pub ridge_seed: u64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            lambda2: Lambda2Choice::Moment,
            v: 2.0,
            s: Matrix2::identity(),
            cv_folds: 5,
            penalty_grid: default_penalty_grid(),
            ridge_seed: 0,
        }
    }
}

/// Ridge start and resolved hyperparameters.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub ridge: RidgeInit,
    pub hyper: Hyperparameters,
}

pub fn prepare(dataset: &Dataset, settings: &FitSettings) -> Result<Prepared> {
    let folds = settings.cv_folds.min(dataset.n());
    let ridge = ridge_initialize(dataset, folds, &settings.penalty_grid, settings.ridge_seed)?;
    let lambda2 = match settings.lambda2 {
        Lambda2Choice::Value(v) => v,
        Lambda2Choice::Moment => moment_lambda2(&ridge.w_ridge, settings.v)?,
    };
    let hyper = Hyperparameters::with_wishart(lambda2, settings.v, settings.s)?;
    Ok(Prepared { ridge, hyper })
}

/// The structure used for a given `ρ`. A single ROI pair has no neighbors, so
/// it always gets the independence structure.
pub fn spatial_for(a: &DMatrix<f64>, rho: f64) -> Result<SpatialStructure> {
    if a.nrows() == 1 && a.ncols() == 1 && a[(0, 0)] == 0.0 {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::RhoOutOfRange(rho));
        }
        return Ok(SpatialStructure::independence(1));
    }
    SpatialStructure::new(a.clone(), rho)
}

pub fn fit_vb(
    dataset: &Dataset,
    spatial: &SpatialStructure,
    hyper: &Hyperparameters,
    w_init: &DMatrix<f64>,
    config: &VBConfig,
) -> Result<VBPosterior> {
    let init = VBPosterior::initialize(dataset, hyper, w_init)?;
    run_vb(dataset, spatial, hyper, config, init)
}

/// Gibbs chain started from a VB fit at the same structure.
pub fn fit_gibbs(
    dataset: &Dataset,
    spatial: &SpatialStructure,
    hyper: &Hyperparameters,
    w_init: &DMatrix<f64>,
    vb_config: &VBConfig,
    config: &GibbsConfig,
) -> Result<(VBPosterior, GibbsOutput)> {
    let vb = fit_vb(dataset, spatial, hyper, w_init, vb_config)?;
    let out = run_gibbs(dataset, spatial, hyper, config, vb.to_model_state()?)?;
    Ok((vb, out))
}

#[derive(Debug, Clone)]
pub struct GridFit {
    pub value: f64,
    pub waic: WaicReport,
    pub output: GibbsOutput,
}

/// Gibbs fits over a `ρ` grid, each scored by WAIC.
pub fn rho_grid_waic(
    dataset: &Dataset,
    a: &DMatrix<f64>,
    grid: &[f64],
    hyper: &Hyperparameters,
    w_init: &DMatrix<f64>,
    vb_config: &VBConfig,
    config: &GibbsConfig,
) -> Result<Vec<GridFit>> {
    if grid.is_empty() {
        return Err(Error::invalid("rho grid", "must be nonempty"));
    }
    grid.iter()
        .map(|&rho| {
            let spatial = spatial_for(a, rho)?;
            let (_, output) = fit_gibbs(dataset, &spatial, hyper, w_init, vb_config, config)?;
            Ok(GridFit {
                value: rho,
                waic: waic(&output.loglik_draws)?,
                output,
            })
        })
        .collect()
}

/// Gibbs fits over a `λ²` grid at fixed structure, each scored by WAIC.
pub fn lambda2_grid_waic(
    dataset: &Dataset,
    spatial: &SpatialStructure,
    grid: &[f64],
    base: &Hyperparameters,
    w_init: &DMatrix<f64>,
    vb_config: &VBConfig,
    config: &GibbsConfig,
) -> Result<Vec<GridFit>> {
    if grid.is_empty() {
        return Err(Error::invalid("lambda2 grid", "must be nonempty"));
    }
    grid.iter()
        .map(|&l2| {
            let hyper = Hyperparameters::with_wishart(l2, base.v, base.s)?;
            let (_, output) = fit_gibbs(dataset, spatial, &hyper, w_init, vb_config, config)?;
            Ok(GridFit {
                value: l2,
                waic: waic(&output.loglik_draws)?,
                output,
            })
        })
        .collect()
}

/// Index of the smallest WAIC (first on ties).
pub fn best_by_waic(fits: &[GridFit]) -> usize {
    let mut best = 0;
    for (k, f) in fits.iter().enumerate() {
        if f.waic.waic < fits[best].waic.waic {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub lambda2: f64,
    pub mean: DMatrix<f64>,
    pub selected_counts: Vec<usize>,
    pub n_selected: usize,
}

/// VB posterior means and FDR selection counts along a `λ²` sweep.
#[allow(clippy::too_many_arguments)]
pub fn regularization_path(
    dataset: &Dataset,
    spatial: &SpatialStructure,
    grid: &[f64],
    base: &Hyperparameters,
    w_init: &DMatrix<f64>,
    vb_config: &VBConfig,
    c_star: f64,
    alpha: f64,
) -> Result<Vec<PathPoint>> {
    grid.iter()
        .map(|&l2| {
            let hyper = Hyperparameters::with_wishart(l2, base.v, base.s)?;
            let post = fit_vb(dataset, spatial, &hyper, w_init, vb_config)?;
            let sel = fdr_threshold(&post.tail_probabilities(c_star)?, alpha)?;
            Ok(PathPoint {
                lambda2: l2,
                mean: post.mu_w.clone(),
                n_selected: sel.selected.len(),
                selected_counts: sel.per_region_counts,
            })
        })
        .collect()
}
