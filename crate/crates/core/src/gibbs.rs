//! Gibbs sampler over the coefficient rows, `Σ`, and the group scales `ω²`.

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    gamma_rate_ln_pdf, sample_gamma_rate, standard_normal_matrix, InverseGaussian, InverseWishart2,
    LN_2PI,
};
use crate::error::{Error, Result};
use crate::linalg::{
    chol2, kron, log_det2, mat2_dyn, pairs_vec, spd2_inverse, trace_product2, vec_pairs, Chol,
};
use crate::model::{
    likelihood_scatter, log_likelihood_per_subject, prior_scatter, row_scatter, CrossProducts,
    Dataset, Hyperparameters, ModelState, SpatialStructure,
};

/// Scale mixing values below this are treated as an all-zero coefficient row.
pub const DEGENERATE_C_STAR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl GibbsConfig {
    pub fn new(n_iter: usize, burn_in: usize, thin: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            n_iter,
            burn_in,
            thin,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 {
            return Err(Error::invalid("n_iter", "must be positive"));
        }
        if self.burn_in >= self.n_iter {
            return Err(Error::invalid(
                "burn_in",
                format!("{} must be below n_iter = {}", self.burn_in, self.n_iter),
            ));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thin", "must be at least 1"));
        }
        Ok(())
    }

    /// Number of retained draws, `⌊(n_iter − burn_in) / thin⌋`.
    pub fn retained(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            n_iter: 10_000,
            burn_in: 5_000,
            thin: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsOutput {
    pub w_draws: Vec<DMatrix<f64>>,
    pub sigma_draws: Vec<Matrix2<f64>>,
    pub omega2_draws: Vec<DVector<f64>>,
    /// Per-subject `log p(y_ℓ | W, Σ)` for each retained draw.
    pub loglik_draws: Vec<DVector<f64>>,
}

impl GibbsOutput {
    pub fn len(&self) -> usize {
        self.w_draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w_draws.is_empty()
    }

    pub fn posterior_mean_w(&self) -> DMatrix<f64> {
        let mut acc = self.w_draws[0].clone() * 0.0;
        for w in &self.w_draws {
            acc += w;
        }
        acc / self.len() as f64
    }
}

/// Full conditional of one coefficient row: `MVN_c(μ, (P ⊗ Σ⁻¹)⁻¹)` with
/// `P = I/ω_i² + s_i B`. Everything is held in `(c/2) x 2` pair form.
#[derive(Debug, Clone)]
pub struct RowConditional {
    mean: DMatrix<f64>,
    p: DMatrix<f64>,
    p_chol: Chol,
    sigma_chol: Matrix2<f64>,
    sigma_inv: Matrix2<f64>,
}

impl RowConditional {
    pub fn mean(&self) -> DVector<f64> {
        pairs_vec(&self.mean)
    }

    /// The `(c/2) x (c/2)` factor `P` of the conditional precision `P ⊗ Σ⁻¹`.
    pub fn precision_factor(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn precision(&self) -> DMatrix<f64> {
        kron(&self.p, &mat2_dyn(&self.sigma_inv))
    }

    /// `μ + L_P⁻ᵀ Ξ L_Σᵀ`, which has covariance `P⁻¹ ⊗ Σ`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let xi = standard_normal_matrix(self.mean.nrows(), 2, rng);
        let z = self.p_chol.solve_upper_t(&xi);
        let l = &self.sigma_chol;
        let draw = DMatrix::from_fn(self.mean.nrows(), 2, |p, s| {
            let noise = if s == 0 {
                l[(0, 0)] * z[(p, 0)]
            } else {
                l[(1, 0)] * z[(p, 0)] + l[(1, 1)] * z[(p, 1)]
            };
            self.mean[(p, s)] + noise
        });
        pairs_vec(&draw)
    }

    pub fn ln_pdf(&self, row: &DVector<f64>) -> f64 {
        let m = self.mean.nrows() as f64;
        let diff = vec_pairs(row) - &self.mean;
        let k = diff.transpose() * &self.p * &diff;
        let k = Matrix2::new(k[(0, 0)], k[(0, 1)], k[(1, 0)], k[(1, 1)]);
        let log_det_prec = 2.0 * self.p_chol.log_det() + m * log_det2(&self.sigma_inv);
        -m * LN_2PI + 0.5 * log_det_prec - 0.5 * trace_product2(&self.sigma_inv, &k)
    }
}

/// Conditional of `ω_i²`: the reciprocal of an inverse Gaussian draw, or the
/// Gamma prior when the row is identically zero.
#[derive(Debug, Clone, Copy)]
pub enum Omega2Conditional {
    ReciprocalInverseGaussian(InverseGaussian),
    Prior { shape: f64, rate: f64 },
}

impl Omega2Conditional {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match self {
            Self::ReciprocalInverseGaussian(ig) => Ok(1.0 / ig.sample(rng)),
            Self::Prior { shape, rate } => sample_gamma_rate(*shape, *rate, rng),
        }
    }

    /// Log density of `ω²` (not of `η = 1/ω²`).
    pub fn ln_pdf(&self, omega2: f64) -> f64 {
        match self {
            Self::ReciprocalInverseGaussian(ig) => ig.ln_pdf(1.0 / omega2) - 2.0 * omega2.ln(),
            Self::Prior { shape, rate } => gamma_rate_ln_pdf(omega2, *shape, *rate),
        }
    }
}

/// `v* = v + nc/2 + cd/2`.
pub fn posterior_dof(n: usize, c: usize, d: usize, v: f64) -> f64 {
    v + (n * c) as f64 / 2.0 + (c * d) as f64 / 2.0
}

pub fn row_conditional(
    i: usize,
    state: &ModelState,
    cp: &CrossProducts,
    spatial: &SpatialStructure,
) -> Result<RowConditional> {
    let s_i = cp.xtx[(i, i)];
    let m = spatial.pairs();
    let mut p = &spatial.b * s_i;
    for k in 0..m {
        p[(k, k)] += 1.0 / state.omega2[i];
    }
    let p_chol = Chol::new(&p, "row conditional precision")?;
    let r = vec_pairs(&cp.partial_residual(&state.w, i));
    let mean = p_chol.solve(&(&spatial.b * r));
    let sigma_chol = chol2(&state.sigma, "Sigma")?;
    let sigma_inv = spd2_inverse(&state.sigma, "Sigma")?;
    Ok(RowConditional {
        mean,
        p,
        p_chol,
        sigma_chol,
        sigma_inv,
    })
}

/// `IW(S*, v*)` with `S* = Σ_ℓ Σ_{p,q} b_pq ε̃_{ℓ,p} ε̃_{ℓ,q}ᵀ + Σ_i M_i/ω_i² + S`.
pub fn sigma_conditional(
    state: &ModelState,
    cp: &CrossProducts,
    n: usize,
    spatial: &SpatialStructure,
    hyper: &Hyperparameters,
) -> Result<InverseWishart2> {
    let gram = cp.residual_gram(&state.w);
    let s_star =
        likelihood_scatter(spatial, &gram) + prior_scatter(&state.w, &state.omega2) + hyper.s;
    let dof = posterior_dof(n, state.w.ncols(), state.w.nrows(), hyper.v);
    InverseWishart2::new(s_star, dof).map_err(|e| match e {
        Error::NonPositiveDefinite(_) => Error::NonPositiveDefinite("S*"),
        other => other,
    })
}

pub fn omega2_conditional(
    i: usize,
    state: &ModelState,
    hyper: &Hyperparameters,
) -> Result<Omega2Conditional> {
    let sigma_inv = spd2_inverse(&state.sigma, "Sigma")?;
    let c_star = trace_product2(&sigma_inv, &row_scatter(&state.w, i));
    if !(c_star > DEGENERATE_C_STAR) {
        let c = state.w.ncols() as f64;
        return Ok(Omega2Conditional::Prior {
            shape: 0.5 * (c + 1.0),
            rate: 0.5 * hyper.lambda2,
        });
    }
    let ig = InverseGaussian::new((hyper.lambda2 / c_star).sqrt(), hyper.lambda2)?;
    Ok(Omega2Conditional::ReciprocalInverseGaussian(ig))
}

pub fn update_w_row<R: Rng + ?Sized>(
    i: usize,
    state: &ModelState,
    dataset: &Dataset,
    spatial: &SpatialStructure,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let cp = dataset.cross_products();
    Ok(row_conditional(i, state, &cp, spatial)?.sample(rng))
}

pub fn update_sigma<R: Rng + ?Sized>(
    state: &ModelState,
    dataset: &Dataset,
    spatial: &SpatialStructure,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<Matrix2<f64>> {
    let cp = dataset.cross_products();
    sigma_conditional(state, &cp, dataset.n(), spatial, hyper)?.sample(rng)
}

pub fn update_omega2<R: Rng + ?Sized>(
    state: &ModelState,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(state.omega2.len());
    for i in 0..out.len() {
        out[i] = omega2_conditional(i, state, hyper)?.sample(rng)?;
    }
    Ok(out)
}

/// A single chain holding its sufficient statistics and current state.
#[derive(Debug, Clone)]
pub struct GibbsSampler<'a> {
    spatial: &'a SpatialStructure,
    hyper: &'a Hyperparameters,
    dataset: Dataset,
    cp: CrossProducts,
    state: ModelState,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(
        dataset: &Dataset,
        spatial: &'a SpatialStructure,
        hyper: &'a Hyperparameters,
        init: ModelState,
    ) -> Result<Self> {
        init.validate()?;
        if init.w.shape() != (dataset.d(), dataset.c()) {
            return Err(Error::DimensionMismatch(format!(
                "initial W is {:?}, expected ({}, {})",
                init.w.shape(),
                dataset.d(),
                dataset.c()
            )));
        }
        if spatial.pairs() != dataset.pairs() {
            return Err(Error::NeighborhoodShape {
                rows: spatial.pairs(),
                cols: spatial.pairs(),
                expected: dataset.pairs(),
            });
        }
        Ok(Self {
            spatial,
            hyper,
            cp: dataset.cross_products(),
            dataset: dataset.clone(),
            state: init,
        })
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    /// Replace the phenotypes, keeping the design. Used by joint-distribution tests
    /// that alternate parameter and data draws.
    pub fn set_y(&mut self, y: DMatrix<f64>) -> Result<()> {
        self.dataset = Dataset::new(y, self.dataset.x.clone())?;
        self.cp.xty = self.dataset.x.transpose() * &self.dataset.y;
        self.cp.yty = self.dataset.y.transpose() * &self.dataset.y;
        Ok(())
    }

    /// One sweep: rows in ascending order, then `Σ`, then every `ω_i²`.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        for i in 0..self.dataset.d() {
            let row = row_conditional(i, &self.state, &self.cp, self.spatial)?.sample(rng);
            self.state.w.set_row(i, &row.transpose());
        }
        self.state.sigma = sigma_conditional(
            &self.state,
            &self.cp,
            self.dataset.n(),
            self.spatial,
            self.hyper,
        )?
        .sample(rng)?;
        for i in 0..self.dataset.d() {
            self.state.omega2[i] = omega2_conditional(i, &self.state, self.hyper)?.sample(rng)?;
        }
        Ok(())
    }

    pub fn loglik(&self) -> Result<DVector<f64>> {
        log_likelihood_per_subject(
            &self.dataset,
            &self.state.w,
            &self.state.sigma,
            self.spatial,
        )
    }
}

pub fn run_gibbs(
    dataset: &Dataset,
    spatial: &SpatialStructure,
    hyper: &Hyperparameters,
    config: &GibbsConfig,
    init: ModelState,
) -> Result<GibbsOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sampler = GibbsSampler::new(dataset, spatial, hyper, init)?;
    let m = config.retained();
    let mut out = GibbsOutput {
        w_draws: Vec::with_capacity(m),
        sigma_draws: Vec::with_capacity(m),
        omega2_draws: Vec::with_capacity(m),
        loglik_draws: Vec::with_capacity(m),
    };
    for sweep in 0..config.n_iter {
        sampler.sweep(&mut rng).map_err(|e| Error::AtSweep {
            sweep,
            source: Box::new(e),
        })?;
        let after_burn = sweep + 1;
        if after_burn > config.burn_in
            && (after_burn - config.burn_in).is_multiple_of(config.thin)
            && out.len() < m
        {
            let ll = sampler.loglik()?;
            if let Some(subject) = ll.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLogLik {
                    draw: out.len(),
                    subject,
                });
            }
            let s = sampler.state();
            out.w_draws.push(s.w.clone());
            out.sigma_draws.push(s.sigma);
            out.omega2_draws.push(s.omega2.clone());
            out.loglik_draws.push(ll);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::log_joint;

    fn small_problem(seed: u64) -> (Dataset, SpatialStructure, Hyperparameters, ModelState) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 7;
        let d = 3;
        let c = 6;
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(0..3) as f64);
        let y = standard_normal_matrix(n, c, &mut rng);
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 0.4, 0.9, 0.4, 0.0, 0.3, 0.9, 0.3, 0.0]);
        let spatial = SpatialStructure::new(a, 0.7).unwrap();
        let hyper = Hyperparameters::new(1.7).unwrap();
        let state = ModelState::new(
            standard_normal_matrix(d, c, &mut rng) * 0.5,
            Matrix2::new(1.2, 0.5, 0.5, 0.9),
            DVector::from_fn(d, |i, _| 0.3 + i as f64),
        )
        .unwrap();
        (Dataset::new(y, x).unwrap(), spatial, hyper, state)
    }

    #[test]
    fn retention_arithmetic() {
        let cfg = GibbsConfig::new(100, 50, 5, 1).unwrap();
        assert_eq!(cfg.retained(), 10);
        assert!(GibbsConfig::new(10, 10, 1, 0).is_err());
        assert!(GibbsConfig::new(10, 2, 0, 0).is_err());
    }

    #[test]
    fn v_star_arithmetic() {
        assert_eq!(posterior_dof(10, 4, 3, 2.0), 28.0);
    }

    #[test]
    fn eta_mean_is_one_when_c_star_equals_lambda2() {
        // Row with a single pair entry chosen so that c* = λ².
        let lambda2: f64 = 2.5;
        let state = ModelState::new(
            DMatrix::from_row_slice(1, 2, &[lambda2.sqrt(), 0.0]),
            Matrix2::identity(),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let hyper = Hyperparameters::new(lambda2).unwrap();
        match omega2_conditional(0, &state, &hyper).unwrap() {
            Omega2Conditional::ReciprocalInverseGaussian(ig) => {
                assert!((ig.mean() - 1.0).abs() < 1e-15);
                assert_eq!(ig.shape(), lambda2);
            }
            _ => panic!("expected inverse Gaussian"),
        }
    }

    #[test]
    fn zero_row_falls_back_to_prior() {
        let state = ModelState::new(
            DMatrix::zeros(1, 4),
            Matrix2::identity(),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let hyper = Hyperparameters::new(3.0).unwrap();
        match omega2_conditional(0, &state, &hyper).unwrap() {
            Omega2Conditional::Prior { shape, rate } => {
                assert_eq!(shape, 2.5);
                assert_eq!(rate, 1.5);
            }
            _ => panic!("expected prior"),
        }
    }

    #[test]
    fn collapsed_precision_matches_naive_sum() {
        let (ds, spatial, _, state) = small_problem(3);
        let cp = ds.cross_products();
        let sigma_inv = mat2_dyn(&spd2_inverse(&state.sigma, "s").unwrap());
        let c = ds.c();
        let likprec = kron(&spatial.b, &sigma_inv);
        for i in 0..ds.d() {
            let cond = row_conditional(i, &state, &cp, &spatial).unwrap();
            let mut naive = kron(&DMatrix::identity(c / 2, c / 2), &sigma_inv) / state.omega2[i];
            for l in 0..ds.n() {
                let x = ds.x[(l, i)];
                naive += &likprec * (x * x);
            }
            assert!((cond.precision() - naive).abs().max() < 1e-10);
        }
    }

    #[test]
    fn conditional_ratios_match_joint() {
        let (ds, spatial, hyper, state) = small_problem(9);
        let cp = ds.cross_products();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..ds.d() {
            let cond = row_conditional(i, &state, &cp, &spatial).unwrap();
            let w1 = cond.sample(&mut rng);
            let w2 = cond.sample(&mut rng);
            let mut s1 = state.clone();
            s1.w.set_row(i, &w1.transpose());
            let mut s2 = state.clone();
            s2.w.set_row(i, &w2.transpose());
            let lhs = cond.ln_pdf(&w1) - cond.ln_pdf(&w2);
            let rhs = log_joint(&ds, &s1, &spatial, &hyper).unwrap()
                - log_joint(&ds, &s2, &spatial, &hyper).unwrap();
            assert!((lhs - rhs).abs() < 1e-8, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn determinism() {
        let (ds, spatial, hyper, state) = small_problem(4);
        let cfg = GibbsConfig::new(30, 10, 2, 77).unwrap();
        let a = run_gibbs(&ds, &spatial, &hyper, &cfg, state.clone()).unwrap();
        let b = run_gibbs(&ds, &spatial, &hyper, &cfg, state).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
    }
}
