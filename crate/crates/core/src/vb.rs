//! Mean-field variational Bayes: `q(W) = Π_i N(μ_i, Σ_i)`, `q(Σ) = IW(S_q, v_q)`
//! and `q(η_i)` inverse Gaussian with `η_i = 1/ω_i²`.

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::distributions::{ln_mvgamma2, LN_2PI};
use crate::error::{Error, Result};
use crate::gibbs::{posterior_dof, DEGENERATE_C_STAR};
use crate::linalg::{
    kron, log_det2, mat2_dyn, pair_block_sum, pair_contract, spd2_inverse, symmetrize2,
    trace_product2, vec_pairs, Chol,
};
use crate::model::{
    row_scatter, CrossProducts, Dataset, Hyperparameters, ModelState, SpatialStructure,
};

/// How the residual term of `S_q` treats the spread of `q(W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualMode {
    /// Full expectation of the residual cross products, including `Σ_i s_i Σ_q(W_i)`.
    #[default]
    Exact,
    /// Residuals evaluated at the variational means only.
    PlugIn,
}

/// Second-order expansion used for `E_q log ω²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LogOmegaExpansion {
    /// `log μ − Var / (2μ²)`
    #[default]
    Standard,
    /// `log μ − Var / (2μ)`
    Unsquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VBConfig {
    pub epsilon: f64,
    pub k: usize,
    pub max_iter: usize,
    pub seed: u64,
    pub residual_mode: ResidualMode,
    pub log_omega: LogOmegaExpansion,
}

impl Default for VBConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            k: 2,
            max_iter: 1000,
            seed: 0,
            residual_mode: ResidualMode::Exact,
            log_omega: LogOmegaExpansion::Standard,
        }
    }
}

impl VBConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid(
                "epsilon",
                format!("{} is not positive", self.epsilon),
            ));
        }
        if self.k == 0 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VBPosterior {
    /// Row `i` holds `μ_q(W_(i))`.
    pub mu_w: DMatrix<f64>,
    pub sigma_w: Vec<DMatrix<f64>>,
    pub s_sigma: Matrix2<f64>,
    pub v_sigma: f64,
    pub mu_eta: DVector<f64>,
    pub mu_omega2: DVector<f64>,
    pub var_omega2: DVector<f64>,
    pub lambda2: f64,
    /// ELBO after each full sweep.
    pub elbo_trace: Vec<f64>,
    /// ELBO at the starting point.
    pub initial_elbo: Option<f64>,
    pub converged: bool,
}

impl VBPosterior {
    /// `μ_q(W) = w_init`, `Σ_q(W_i) = 0.01 I`, `S_q = S`, `μ_q(η) = 1`.
    pub fn initialize(
        dataset: &Dataset,
        hyper: &Hyperparameters,
        w_init: &DMatrix<f64>,
    ) -> Result<Self> {
        let (d, c) = (dataset.d(), dataset.c());
        if w_init.shape() != (d, c) {
            return Err(Error::DimensionMismatch(format!(
                "initial mean is {:?}, expected ({d}, {c})",
                w_init.shape()
            )));
        }
        let mut post = Self {
            mu_w: w_init.clone(),
            sigma_w: vec![DMatrix::identity(c, c) * 0.01; d],
            s_sigma: hyper.s,
            v_sigma: posterior_dof(dataset.n(), c, d, hyper.v),
            mu_eta: DVector::from_element(d, 1.0),
            mu_omega2: DVector::zeros(d),
            var_omega2: DVector::zeros(d),
            lambda2: hyper.lambda2,
            elbo_trace: Vec::new(),
            initial_elbo: None,
            converged: false,
        };
        for i in 0..d {
            post.set_eta(i, 1.0);
        }
        Ok(post)
    }

    pub fn d(&self) -> usize {
        self.mu_w.nrows()
    }

    pub fn c(&self) -> usize {
        self.mu_w.ncols()
    }

    /// Sets `μ_q(η_i)` and refreshes the reciprocal-inverse-Gaussian moments of `ω_i²`.
    pub fn set_eta(&mut self, i: usize, mu_eta: f64) {
        let l2 = self.lambda2;
        self.mu_eta[i] = mu_eta;
        self.mu_omega2[i] = 1.0 / mu_eta + 1.0 / l2;
        self.var_omega2[i] = 1.0 / (mu_eta * l2) + 2.0 / (l2 * l2);
    }

    /// `E_q[Σ⁻¹] = v_q S_q⁻¹`.
    pub fn e_sigma_inv(&self) -> Result<Matrix2<f64>> {
        Ok(spd2_inverse(&self.s_sigma, "S_q")? * self.v_sigma)
    }

    /// `E_q[Σ] = S_q / (v_q − 3)`.
    pub fn e_sigma(&self) -> Result<Matrix2<f64>> {
        if self.v_sigma <= 3.0 {
            return Err(Error::DegreesOfFreedomTooSmall(self.v_sigma));
        }
        Ok(self.s_sigma / (self.v_sigma - 3.0))
    }

    /// `Σ_p E_q[W̃_{i,p} W̃_{i,p}ᵀ]`.
    pub fn expected_row_scatter(&self, i: usize) -> Matrix2<f64> {
        row_scatter(&self.mu_w, i) + pair_block_sum(&self.sigma_w[i])
    }

    /// Marginal posterior standard deviations of every coefficient.
    pub fn sd_w(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.d(), self.c(), |i, j| self.sigma_w[i][(j, j)].sqrt())
    }

    pub fn final_elbo(&self) -> Option<f64> {
        self.elbo_trace.last().copied().or(self.initial_elbo)
    }

    /// Point state for starting a Gibbs chain: `W = μ_q(W)`, `Σ = E_q[Σ]`,
    /// `ω² = E_q[ω²]`.
    pub fn to_model_state(&self) -> Result<ModelState> {
        ModelState::new(self.mu_w.clone(), self.e_sigma()?, self.mu_omega2.clone())
    }
}

/// The additive pieces of the ELBO.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    pub likelihood: f64,
    pub prior_w: f64,
    pub prior_omega2: f64,
    pub prior_sigma: f64,
    pub entropy_w: f64,
    pub entropy_omega2: f64,
    pub entropy_sigma: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.likelihood
            + self.prior_w
            + self.prior_omega2
            + self.prior_sigma
            + self.entropy_w
            + self.entropy_omega2
            + self.entropy_sigma
    }
}

/// Data, structure and hyperparameters shared by all coordinate updates.
#[derive(Debug, Clone)]
pub struct VbProblem<'a> {
    pub dataset: &'a Dataset,
    pub spatial: &'a SpatialStructure,
    pub hyper: &'a Hyperparameters,
    pub cp: CrossProducts,
    pub config: VBConfig,
}

impl<'a> VbProblem<'a> {
    pub fn new(
        dataset: &'a Dataset,
        spatial: &'a SpatialStructure,
        hyper: &'a Hyperparameters,
        config: VBConfig,
    ) -> Result<Self> {
        config.validate()?;
        if spatial.pairs() != dataset.pairs() {
            return Err(Error::NeighborhoodShape {
                rows: spatial.pairs(),
                cols: spatial.pairs(),
                expected: dataset.pairs(),
            });
        }
        Ok(Self {
            dataset,
            spatial,
            hyper,
            cp: dataset.cross_products(),
            config,
        })
    }

    fn check(&self, post: &VBPosterior) -> Result<()> {
        if post.mu_w.shape() != (self.dataset.d(), self.dataset.c())
            || post.sigma_w.len() != post.d()
        {
            return Err(Error::DimensionMismatch(format!(
                "variational means are {:?}, expected ({}, {})",
                post.mu_w.shape(),
                self.dataset.d(),
                self.dataset.c()
            )));
        }
        Ok(())
    }

    /// Optimal `q(W_(i))` given the other factors:
    /// precision `(μ_q(η_i) I + s_i B) ⊗ E[Σ⁻¹]`, mean `P⁻¹ B R_i`.
    pub fn row_update(&self, post: &VBPosterior, i: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let m = self.spatial.pairs();
        let mut p = &self.spatial.b * self.cp.xtx[(i, i)];
        for k in 0..m {
            p[(k, k)] += post.mu_eta[i];
        }
        let p_chol = Chol::new(&p, "variational row precision")?;
        let r = vec_pairs(&self.cp.partial_residual(&post.mu_w, i));
        let mean = p_chol.solve(&(&self.spatial.b * r));
        let e_sigma_inv = post.e_sigma_inv()?;
        let scale = spd2_inverse(&e_sigma_inv, "E[Sigma^-1]")?;
        let mut cov = kron(&p_chol.inverse(), &mat2_dyn(&symmetrize2(&scale)));
        symmetrize(&mut cov);
        let mean = DVector::from_fn(2 * m, |k, _| mean[(k / 2, k % 2)]);
        Ok((mean, cov))
    }

    /// `E_q` of the residual cross products contracted against `B`.
    pub fn expected_likelihood_scatter(
        &self,
        post: &VBPosterior,
        mode: ResidualMode,
    ) -> Matrix2<f64> {
        let mut gram = self.cp.residual_gram(&post.mu_w);
        if mode == ResidualMode::Exact {
            for (k, cov) in post.sigma_w.iter().enumerate() {
                gram += cov * self.cp.xtx[(k, k)];
            }
        }
        pair_contract(&self.spatial.b, &gram)
    }

    /// Optimal `S_q`; `v_q = v + nc/2 + cd/2` is fixed.
    pub fn sigma_update(&self, post: &VBPosterior) -> Result<Matrix2<f64>> {
        let mut s =
            self.expected_likelihood_scatter(post, self.config.residual_mode) + self.hyper.s;
        for i in 0..post.d() {
            s += post.expected_row_scatter(i) * post.mu_eta[i];
        }
        let s = symmetrize2(&s);
        crate::linalg::chol2(&s, "S_q")?;
        Ok(s)
    }

    /// `E_q[c_i*] = tr(Σ_p E_q[W̃W̃ᵀ] E_q[Σ⁻¹])`.
    pub fn expected_c_star(&self, post: &VBPosterior, i: usize) -> Result<f64> {
        Ok(trace_product2(
            &post.expected_row_scatter(i),
            &post.e_sigma_inv()?,
        ))
    }

    /// `μ_q(η_i) = √(λ² / E_q[c_i*])`.
    pub fn eta_update(&self, post: &VBPosterior, i: usize) -> Result<f64> {
        let ec = self.expected_c_star(post, i)?;
        if !(ec > DEGENERATE_C_STAR) {
            return Err(Error::DegenerateRow(i));
        }
        Ok((self.hyper.lambda2 / ec).sqrt())
    }

    pub fn e_log_omega2(&self, post: &VBPosterior, i: usize) -> f64 {
        let mu = post.mu_omega2[i];
        let var = post.var_omega2[i];
        match self.config.log_omega {
            LogOmegaExpansion::Standard => mu.ln() - var / (2.0 * mu * mu),
            LogOmegaExpansion::Unsquared => mu.ln() - var / (2.0 * mu),
        }
    }

    pub fn elbo_terms(&self, post: &VBPosterior) -> Result<ElboTerms> {
        self.check(post)?;
        let n = self.dataset.n() as f64;
        let c = self.dataset.c() as f64;
        let l2 = self.hyper.lambda2;
        let e_sinv = post.e_sigma_inv()?;
        let e_log_det_sigma = log_det2(&post.e_sigma()?);

        let s_lik = self.expected_likelihood_scatter(post, ResidualMode::Exact);
        let likelihood = -0.5 * n * c * LN_2PI + n * self.spatial.log_det_b()
            - 0.25 * n * c * e_log_det_sigma
            - 0.5 * trace_product2(&e_sinv, &s_lik);

        let a = 0.5 * (c + 1.0);
        let mut prior_w = 0.0;
        let mut prior_omega2 = 0.0;
        let mut entropy_w = 0.0;
        let mut entropy_omega2 = 0.0;
        for i in 0..post.d() {
            let elog = self.e_log_omega2(post, i);
            prior_w += -0.5 * c * LN_2PI
                - 0.5 * c * elog
                - 0.25 * c * e_log_det_sigma
                - 0.5 * post.mu_eta[i] * trace_product2(&e_sinv, &post.expected_row_scatter(i));
            prior_omega2 +=
                a * (0.5 * l2).ln() - ln_gamma(a) + (a - 1.0) * elog - 0.5 * l2 * post.mu_omega2[i];
            let ld = Chol::new(&post.sigma_w[i], "variational row covariance")?.log_det();
            entropy_w += 0.5 * c * (1.0 + LN_2PI) + 0.5 * ld;
            entropy_omega2 += -0.5 * l2.ln() + 0.5 * LN_2PI + 0.5 * elog + 0.5;
        }

        let v = self.hyper.v;
        let prior_sigma = 0.5 * v * log_det2(&self.hyper.s)
            - v * std::f64::consts::LN_2
            - ln_mvgamma2(0.5 * v)
            - 0.5 * (v + 3.0) * e_log_det_sigma
            - 0.5 * trace_product2(&self.hyper.s, &e_sinv);
        let vq = post.v_sigma;
        let entropy_sigma = -0.5 * vq * log_det2(&post.s_sigma)
            + vq * std::f64::consts::LN_2
            + ln_mvgamma2(0.5 * vq)
            + 0.5 * (vq + 3.0) * e_log_det_sigma
            + vq;
        Ok(ElboTerms {
            likelihood,
            prior_w,
            prior_omega2,
            prior_sigma,
            entropy_w,
            entropy_omega2,
            entropy_sigma,
        })
    }

    pub fn elbo(&self, post: &VBPosterior) -> Result<f64> {
        Ok(self.elbo_terms(post)?.total())
    }

    /// One pass over rows, `Σ`, then every `η_i`.
    pub fn sweep(&self, post: &mut VBPosterior) -> Result<()> {
        self.check(post)?;
        for i in 0..post.d() {
            let (mean, cov) = self.row_update(post, i)?;
            post.mu_w.set_row(i, &mean.transpose());
            post.sigma_w[i] = cov;
        }
        post.s_sigma = self.sigma_update(post)?;
        for i in 0..post.d() {
            let eta = self.eta_update(post, i)?;
            post.set_eta(i, eta);
        }
        Ok(())
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn vb_update_w_row(
    i: usize,
    post: &VBPosterior,
    dataset: &Dataset,
    spatial: &SpatialStructure,
    hyper: &Hyperparameters,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    VbProblem::new(dataset, spatial, hyper, VBConfig::default())?.row_update(post, i)
}

pub fn vb_update_sigma(
    post: &VBPosterior,
    dataset: &Dataset,
    spatial: &SpatialStructure,
    hyper: &Hyperparameters,
) -> Result<Matrix2<f64>> {
    VbProblem::new(dataset, spatial, hyper, VBConfig::default())?.sigma_update(post)
}

/// Returns the new `μ_q(η_i)`; apply it with [`VBPosterior::set_eta`].
pub fn vb_update_eta(i: usize, post: &VBPosterior, hyper: &Hyperparameters) -> Result<f64> {
    let ec = trace_product2(&post.expected_row_scatter(i), &post.e_sigma_inv()?);
    if !(ec > DEGENERATE_C_STAR) {
        return Err(Error::DegenerateRow(i));
    }
    Ok((hyper.lambda2 / ec).sqrt())
}

pub fn compute_elbo(
    post: &VBPosterior,
    dataset: &Dataset,
    spatial: &SpatialStructure,
    hyper: &Hyperparameters,
) -> Result<f64> {
    VbProblem::new(dataset, spatial, hyper, VBConfig::default())?.elbo(post)
}

/// Coordinate ascent until the relative ELBO change stays below `ε` for `k`
/// consecutive sweeps. Hitting `max_iter` returns the last iterate with
/// `converged = false`.
pub fn run_vb(
    dataset: &Dataset,
    spatial: &SpatialStructure,
    hyper: &Hyperparameters,
    config: &VBConfig,
    init: VBPosterior,
) -> Result<VBPosterior> {
    let problem = VbProblem::new(dataset, spatial, hyper, *config)?;
    let mut post = init;
    post.lambda2 = hyper.lambda2;
    for i in 0..post.d() {
        let eta = post.mu_eta[i];
        post.set_eta(i, eta);
    }
    post.elbo_trace.clear();
    post.converged = false;
    let mut prev = problem.elbo(&post)?;
    post.initial_elbo = Some(prev);
    let mut streak = 0;
    for sweep in 0..config.max_iter {
        problem.sweep(&mut post).map_err(|e| Error::AtSweep {
            sweep,
            source: Box::new(e),
        })?;
        let elbo = problem.elbo(&post)?;
        post.elbo_trace.push(elbo);
        let rel = (elbo - prev).abs() / elbo.abs().max(1.0);
        prev = elbo;
        streak = if rel < config.epsilon { streak + 1 } else { 0 };
        if streak >= config.k {
            post.converged = true;
            return Ok(post);
        }
    }
    log::warn!(
        "variational Bayes stopped at max_iter = {} without meeting the tolerance",
        config.max_iter
    );
    Ok(post)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::standard_normal_matrix;
    use crate::gibbs::row_conditional;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(
        seed: u64,
        n: usize,
        c: usize,
        d: usize,
    ) -> (Dataset, SpatialStructure, Hyperparameters) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(0..3) as f64);
        let y = standard_normal_matrix(n, c, &mut rng);
        let m = c / 2;
        let mut a = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in (i + 1)..m {
                let v = rng.random_range(0.1..1.0);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let spatial = if m == 1 {
            SpatialStructure::independence(1)
        } else {
            SpatialStructure::new(a, 0.8).unwrap()
        };
        (
            Dataset::new(y, x).unwrap(),
            spatial,
            Hyperparameters::new(2.0).unwrap(),
        )
    }

    #[test]
    fn eta_closed_forms() {
        let (ds, _, hyper) = problem(1, 5, 2, 1);
        let mut post = VBPosterior::initialize(
            &ds,
            &Hyperparameters::new(4.0).unwrap(),
            &DMatrix::zeros(1, 2),
        )
        .unwrap();
        post.set_eta(0, 2.0);
        assert_eq!(post.mu_omega2[0], 0.75);
        assert_eq!(post.var_omega2[0], 0.25);
        let _ = hyper;
    }

    #[test]
    fn expected_scatter_block() {
        let (ds, _, hyper) = problem(1, 5, 2, 1);
        let mut post =
            VBPosterior::initialize(&ds, &hyper, &DMatrix::from_row_slice(1, 2, &[1.0, 2.0]))
                .unwrap();
        post.sigma_w[0] = DMatrix::from_row_slice(2, 2, &[0.1, 0.05, 0.05, 0.2]);
        let e = post.expected_row_scatter(0);
        let want = Matrix2::new(1.1, 2.05, 2.05, 4.2);
        assert!((e - want).abs().max() < 1e-15);
    }

    #[test]
    fn row_update_matches_gibbs_with_expectations() {
        let (ds, spatial, hyper) = problem(5, 12, 6, 3);
        let problem = VbProblem::new(&ds, &spatial, &hyper, VBConfig::default()).unwrap();
        let mut post =
            VBPosterior::initialize(&ds, &hyper, &(DMatrix::from_element(3, 6, 0.1))).unwrap();
        problem.sweep(&mut post).unwrap();
        let state = ModelState {
            w: post.mu_w.clone(),
            sigma: spd2_inverse(&post.e_sigma_inv().unwrap(), "s").unwrap(),
            omega2: post.mu_eta.map(|e| 1.0 / e),
        };
        let cp = ds.cross_products();
        for i in 0..3 {
            let (mean, cov) = problem.row_update(&post, i).unwrap();
            let cond = row_conditional(i, &state, &cp, &spatial).unwrap();
            let prec = Chol::new(&cov, "cov").unwrap().inverse();
            let scale = cond.precision().abs().max();
            assert!((prec - cond.precision()).abs().max() < 1e-10 * scale);
            assert!((mean - cond.mean()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn elbo_nondecreasing_per_coordinate() {
        for seed in 0..5 {
            let (ds, spatial, hyper) = problem(seed, 20, 4, 5);
            let problem = VbProblem::new(&ds, &spatial, &hyper, VBConfig::default()).unwrap();
            let mut post =
                VBPosterior::initialize(&ds, &hyper, &DMatrix::from_element(5, 4, 0.05)).unwrap();
            let mut last = problem.elbo(&post).unwrap();
            for _ in 0..5 {
                for i in 0..5 {
                    let (m, s) = problem.row_update(&post, i).unwrap();
                    post.mu_w.set_row(i, &m.transpose());
                    post.sigma_w[i] = s;
                    let e = problem.elbo(&post).unwrap();
                    assert!(e >= last - 1e-8, "row {i}: {e} < {last}");
                    last = e;
                }
                post.s_sigma = problem.sigma_update(&post).unwrap();
                let e = problem.elbo(&post).unwrap();
                assert!(e >= last - 1e-8, "sigma: {e} < {last}");
                last = e;
                for i in 0..5 {
                    let eta = problem.eta_update(&post, i).unwrap();
                    post.set_eta(i, eta);
                    let e = problem.elbo(&post).unwrap();
                    assert!(e >= last - 1e-8, "eta {i}: {e} < {last}");
                    last = e;
                }
            }
        }
    }

    #[test]
    fn infinite_tolerance_stops_after_k() {
        let (ds, spatial, hyper) = problem(2, 10, 4, 2);
        let init = VBPosterior::initialize(&ds, &hyper, &DMatrix::zeros(2, 4)).unwrap();
        let cfg = VBConfig {
            epsilon: f64::INFINITY,
            k: 3,
            ..VBConfig::default()
        };
        let post = run_vb(&ds, &spatial, &hyper, &cfg, init).unwrap();
        assert_eq!(post.elbo_trace.len(), 3);
        assert!(post.converged);
    }

    #[test]
    fn deterministic() {
        let (ds, spatial, hyper) = problem(3, 15, 4, 3);
        let init = VBPosterior::initialize(&ds, &hyper, &DMatrix::from_element(3, 4, 0.1)).unwrap();
        let a = run_vb(&ds, &spatial, &hyper, &VBConfig::default(), init.clone()).unwrap();
        let b = run_vb(&ds, &spatial, &hyper, &VBConfig::default(), init).unwrap();
        assert_eq!(a, b);
    }
}
