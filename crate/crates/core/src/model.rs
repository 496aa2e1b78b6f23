//! Domain types of the bivariate CAR regression model and its joint density.
//!
//! The phenotype vector of subject `ℓ` is modelled as
//! `y_ℓ ~ MVN_c(Wᵀ x_ℓ, B⁻¹ ⊗ Σ)` with `B = D_A − ρA`, the rows of `W` carry a
//! bivariate Gaussian scale-mixture prior `W̃_{i,p} ~ BVN(0, ω_i² Σ)` for each
//! ROI pair `p`, `ω_i² ~ Gamma((c+1)/2, rate λ²/2)` and `Σ ~ IW(v, S)`.

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distributions::{gamma_rate_ln_pdf, standard_normal_matrix, InverseWishart2, LN_2PI};
use crate::error::{Error, Result};
use crate::linalg::{
    chol2, log_det2, min_eigenvalue, pair_block_sum, pair_contract, row_pairs, spd2_inverse,
    trace_product2, Chol,
};

/// Phenotypes `y` (`n x c`, left/right measures of each ROI pair in adjacent
/// columns) and genotypes `x` (`n x d`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: DMatrix<f64>,
    pub x: DMatrix<f64>,
}

impl Dataset {
    pub fn new(y: DMatrix<f64>, x: DMatrix<f64>) -> Result<Self> {
        let (n, c) = y.shape();
        if c == 0 || c % 2 != 0 {
            return Err(Error::OddPhenotypeCount(c));
        }
        if x.nrows() != n {
            return Err(Error::SubjectCountMismatch { y: n, x: x.nrows() });
        }
        if n == 0 || x.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "need at least one subject and one marker, got n = {n}, d = {}",
                x.ncols()
            )));
        }
        check_finite(&y, "phenotypes")?;
        check_finite(&x, "genotypes")?;
        Ok(Self { y, x })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn c(&self) -> usize {
        self.y.ncols()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Number of ROI pairs, `c/2`.
    pub fn pairs(&self) -> usize {
        self.c() / 2
    }

    pub fn cross_products(&self) -> CrossProducts {
        CrossProducts {
            xtx: self.x.transpose() * &self.x,
            xty: self.x.transpose() * &self.y,
            yty: self.y.transpose() * &self.y,
        }
    }
}

fn check_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFiniteInput {
                    what,
                    row: i,
                    col: j,
                });
            }
        }
    }
    Ok(())
}

/// Sufficient statistics `XᵀX`, `XᵀY`, `YᵀY`.
#[derive(Debug, Clone)]
pub struct CrossProducts {
    pub xtx: DMatrix<f64>,
    pub xty: DMatrix<f64>,
    pub yty: DMatrix<f64>,
}

impl CrossProducts {
    /// `Σ_ℓ (y_ℓ − Wᵀx_ℓ)(y_ℓ − Wᵀx_ℓ)ᵀ`
    pub fn residual_gram(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let cross = w.transpose() * &self.xty;
        let mut g = &self.yty - &cross - cross.transpose() + w.transpose() * &self.xtx * w;
        // Exact symmetry keeps the 2x2 contractions symmetric.
        let c = g.nrows();
        for i in 0..c {
            for j in (i + 1)..c {
                let v = 0.5 * (g[(i, j)] + g[(j, i)]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    /// `Σ_ℓ x_ℓi (y_ℓ − Σ_{k≠i} x_ℓk W_k)` for row `i`, the partial-residual
    /// cross product that drives the row-wise updates.
    pub fn partial_residual(&self, w: &DMatrix<f64>, i: usize) -> DVector<f64> {
        let c = w.ncols();
        let mut r = DVector::from_fn(c, |j, _| self.xty[(i, j)]);
        for k in 0..w.nrows() {
            if k == i {
                continue;
            }
            let g = self.xtx[(i, k)];
            if g == 0.0 {
                continue;
            }
            for j in 0..c {
                r[j] -= g * w[(k, j)];
            }
        }
        r
    }
}

/// Neighborhood weights `A`, spatial dependence `ρ`, and the precision factor
/// `B = D_A − ρA`.
#[derive(Debug, Clone)]
pub struct SpatialStructure {
    pub a: DMatrix<f64>,
    pub rho: f64,
    pub d_a: DVector<f64>,
    pub b: DMatrix<f64>,
    b_chol: Chol,
}

impl SpatialStructure {
    /// Validates `a` and builds `B = D_A − ρA`, checking it is positive definite.
    pub fn new(a: DMatrix<f64>, rho: f64) -> Result<Self> {
        let m = a.nrows();
        if a.ncols() != m || m == 0 {
            return Err(Error::NeighborhoodShape {
                rows: a.nrows(),
                cols: a.ncols(),
                expected: m.max(1),
            });
        }
        if !(0.0..1.0).contains(&rho) || !rho.is_finite() {
            return Err(Error::RhoOutOfRange(rho));
        }
        check_finite(&a, "neighborhood matrix")?;
        let scale = a.abs().max().max(1.0);
        for i in 0..m {
            if a[(i, i)] != 0.0 {
                return Err(Error::NonZeroDiagonal(i));
            }
            for j in 0..m {
                if a[(i, j)] < 0.0 {
                    return Err(Error::NegativeNeighborhood { i, j });
                }
                let diff = (a[(i, j)] - a[(j, i)]).abs();
                if diff > 1e-12 * scale {
                    return Err(Error::NonSymmetricNeighborhood { i, j, diff });
                }
            }
        }
        let d_a = DVector::from_fn(m, |i, _| a.row(i).sum());
        if let Some(i) = d_a.iter().position(|&s| s <= 0.0) {
            return Err(Error::ZeroRowSum(i));
        }
        let b = DMatrix::from_diagonal(&d_a) - &a * rho;
        let b_chol = Chol::new(&b, "spatial precision B")?;
        Ok(Self {
            a,
            rho,
            d_a,
            b,
            b_chol,
        })
    }

    /// Independence across ROI pairs: `B = I`. This is the `ρ = 0` model with
    /// unit row sums, and also the only valid structure for a single pair.
    pub fn independence(pairs: usize) -> Self {
        let b = DMatrix::identity(pairs, pairs);
        let b_chol = Chol::new(&b, "spatial precision B").expect("identity is SPD");
        Self {
            a: DMatrix::zeros(pairs, pairs),
            rho: 0.0,
            d_a: DVector::from_element(pairs, 1.0),
            b,
            b_chol,
        }
    }

    pub fn pairs(&self) -> usize {
        self.b.nrows()
    }

    pub fn log_det_b(&self) -> f64 {
        self.b_chol.log_det()
    }

    pub fn b_chol(&self) -> &Chol {
        &self.b_chol
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.b)
    }

    /// Dense `c x c` error covariance `B⁻¹ ⊗ Σ`.
    pub fn error_covariance(&self, sigma: &Matrix2<f64>) -> DMatrix<f64> {
        let b_inv = self.b_chol.inverse();
        crate::linalg::kron(&b_inv, &crate::linalg::mat2_dyn(sigma))
    }
}

/// Current values of the regression matrix `w` (`d x c`), the within-pair
/// covariance `sigma`, and the group scales `omega2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub w: DMatrix<f64>,
    pub sigma: Matrix2<f64>,
    pub omega2: DVector<f64>,
}

impl ModelState {
    pub fn new(w: DMatrix<f64>, sigma: Matrix2<f64>, omega2: DVector<f64>) -> Result<Self> {
        let s = Self { w, sigma, omega2 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.nrows() != self.omega2.len() {
            return Err(Error::DimensionMismatch(format!(
                "W has {} rows but omega2 has {} entries",
                self.w.nrows(),
                self.omega2.len()
            )));
        }
        chol2(&self.sigma, "Sigma")?;
        if let Some(i) = self
            .omega2
            .iter()
            .position(|&v| !(v > 0.0 && v.is_finite()))
        {
            return Err(Error::invalid(
                "omega2",
                format!("entry {i} is not positive"),
            ));
        }
        Ok(())
    }

    /// Within-pair correlation `κ = Σ₁₂ / √(Σ₁₁Σ₂₂)`.
    pub fn kappa(&self) -> f64 {
        self.sigma[(0, 1)] / (self.sigma[(0, 0)] * self.sigma[(1, 1)]).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    pub lambda2: f64,
    pub v: f64,
    pub s: Matrix2<f64>,
}

impl Hyperparameters {
    /// `v = 2`, `S = I₂`.
    pub fn new(lambda2: f64) -> Result<Self> {
        Self::with_wishart(lambda2, 2.0, Matrix2::identity())
    }

    pub fn with_wishart(lambda2: f64, v: f64, s: Matrix2<f64>) -> Result<Self> {
        if !(lambda2 > 0.0 && lambda2.is_finite()) {
            return Err(Error::invalid(
                "lambda2",
                format!("{lambda2} is not positive"),
            ));
        }
        if !(v > 1.0) {
            return Err(Error::invalid("v", format!("{v} must exceed 1")));
        }
        chol2(&s, "Inverse-Wishart scale S")?;
        Ok(Self { lambda2, v, s })
    }
}

fn check_dims(dataset: &Dataset, state: &ModelState, spatial: &SpatialStructure) -> Result<()> {
    if state.w.shape() != (dataset.d(), dataset.c()) {
        return Err(Error::DimensionMismatch(format!(
            "W is {:?}, expected ({}, {})",
            state.w.shape(),
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
    state.validate()
}

/// `Σ_p W̃_{i,p} W̃_{i,p}ᵀ`, the 2x2 scatter of row `i` over ROI pairs.
pub fn row_scatter(w: &DMatrix<f64>, i: usize) -> Matrix2<f64> {
    let p = row_pairs(w, i);
    let g = p.transpose() * p;
    Matrix2::new(g[(0, 0)], g[(0, 1)], g[(1, 0)], g[(1, 1)])
}

/// `Σ_ℓ Σ_{p,q} b_pq ε̃_{ℓ,p} ε̃_{ℓ,q}ᵀ` from the residual gram matrix.
pub fn likelihood_scatter(spatial: &SpatialStructure, gram: &DMatrix<f64>) -> Matrix2<f64> {
    pair_contract(&spatial.b, gram)
}

/// Per-subject `log p(y_ℓ | W, Σ)` including all normalizing constants.
pub fn log_likelihood_per_subject(
    dataset: &Dataset,
    w: &DMatrix<f64>,
    sigma: &Matrix2<f64>,
    spatial: &SpatialStructure,
) -> Result<DVector<f64>> {
    let sigma_inv = spd2_inverse(sigma, "Sigma")?;
    let c = dataset.c() as f64;
    let base = -0.5 * c * LN_2PI + spatial.log_det_b() - 0.25 * c * log_det2(sigma);
    let resid = &dataset.y - &dataset.x * w;
    let lt = spatial.b_chol().l().transpose();
    let m = dataset.pairs();
    let mut out = DVector::zeros(dataset.n());
    for l in 0..dataset.n() {
        let e = DMatrix::from_fn(m, 2, |p, s| resid[(l, 2 * p + s)]);
        let f = &lt * e;
        let k = f.transpose() * f;
        let k = Matrix2::new(k[(0, 0)], k[(0, 1)], k[(1, 0)], k[(1, 1)]);
        out[l] = base - 0.5 * trace_product2(&sigma_inv, &k);
    }
    Ok(out)
}

/// `log p(Y, W, ω², Σ)`.
///
/// Every normalizing constant is retained (including the `2π` terms and the
/// inverse-Wishart and gamma normalizers), so the value is the exact log joint
/// density and differences across `ρ` or `λ²` are meaningful.
pub fn log_joint(
    dataset: &Dataset,
    state: &ModelState,
    spatial: &SpatialStructure,
    hyper: &Hyperparameters,
) -> Result<f64> {
    check_dims(dataset, state, spatial)?;
    let n = dataset.n() as f64;
    let c = dataset.c() as f64;
    let sigma_inv = spd2_inverse(&state.sigma, "Sigma")?;
    let ld_sigma = log_det2(&state.sigma);

    let resid = &dataset.y - &dataset.x * &state.w;
    let gram = resid.transpose() * resid;
    let s_lik = likelihood_scatter(spatial, &gram);
    let lik = -0.5 * n * c * LN_2PI + n * spatial.log_det_b()
        - 0.25 * n * c * ld_sigma
        - 0.5 * trace_product2(&sigma_inv, &s_lik);

    let shape = 0.5 * (c + 1.0);
    let rate = 0.5 * hyper.lambda2;
    let mut prior_w = 0.0;
    let mut prior_omega = 0.0;
    for i in 0..dataset.d() {
        let om = state.omega2[i];
        let scatter = row_scatter(&state.w, i);
        prior_w += -0.5 * c * LN_2PI
            - 0.5 * c * om.ln()
            - 0.25 * c * ld_sigma
            - 0.5 * trace_product2(&sigma_inv, &scatter) / om;
        prior_omega += gamma_rate_ln_pdf(om, shape, rate);
    }
    let prior_sigma = InverseWishart2::new(hyper.s, hyper.v)?.ln_pdf(&state.sigma)?;
    Ok(lik + prior_w + prior_omega + prior_sigma)
}

/// Default neighborhood: `A_ij` is the mean over hemispheres of the absolute
/// Pearson correlation between ROI `i` and ROI `j`; the diagonal is zero.
pub fn default_neighborhood(y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, c) = y.shape();
    if c % 2 != 0 || c == 0 {
        return Err(Error::OddPhenotypeCount(c));
    }
    if n < 3 {
        return Err(Error::invalid(
            "subject count",
            format!("need n >= 3, got {n}"),
        ));
    }
    let centered: Vec<DVector<f64>> = (0..c)
        .map(|j| {
            let col = y.column(j);
            let mean = col.sum() / n as f64;
            col.map(|v| v - mean)
        })
        .collect();
    let norms: Vec<f64> = centered.iter().map(|v| v.norm()).collect();
    if let Some(j) = norms.iter().position(|&s| s == 0.0) {
        return Err(Error::ConstantColumn(j));
    }
    let corr = |a: usize, b: usize| centered[a].dot(&centered[b]) / (norms[a] * norms[b]);
    let m = c / 2;
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let v = 0.5 * (corr(2 * i, 2 * j).abs() + corr(2 * i + 1, 2 * j + 1).abs());
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    Ok(a)
}

/// Draws `y_ℓ = Wᵀx_ℓ + ε_ℓ` with `ε_ℓ ~ MVN_c(0, B⁻¹ ⊗ Σ)`, using the factor
/// `L_B⁻ᵀ ⊗ L_Σ` of the covariance (`B = L_B L_Bᵀ`, `Σ = L_Σ L_Σᵀ`).
pub fn simulate_dataset(
    w_true: &DMatrix<f64>,
    sigma: &Matrix2<f64>,
    spatial: &SpatialStructure,
    x: &DMatrix<f64>,
    seed: u64,
) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_with_rng(w_true, sigma, spatial, x, &mut rng)
}

/// [`simulate_dataset`] drawing from a caller-supplied generator.
pub fn simulate_with_rng<R: rand::Rng + ?Sized>(
    w_true: &DMatrix<f64>,
    sigma: &Matrix2<f64>,
    spatial: &SpatialStructure,
    x: &DMatrix<f64>,
    rng: &mut R,
) -> Result<Dataset> {
    if w_true.nrows() != x.ncols() || w_true.ncols() != 2 * spatial.pairs() {
        return Err(Error::DimensionMismatch(format!(
            "W is {:?}, X has {} columns, spatial structure has {} pairs",
            w_true.shape(),
            x.ncols(),
            spatial.pairs()
        )));
    }
    let l_sigma = chol2(sigma, "Sigma")?;
    let m = spatial.pairs();
    let n = x.nrows();
    let mut y = x * w_true;
    for l in 0..n {
        let z = standard_normal_matrix(m, 2, rng);
        let left = spatial.b_chol().solve_upper_t(&z);
        for p in 0..m {
            let (z0, z1) = (left[(p, 0)], left[(p, 1)]);
            y[(l, 2 * p)] += l_sigma[(0, 0)] * z0;
            y[(l, 2 * p + 1)] += l_sigma[(1, 0)] * z0 + l_sigma[(1, 1)] * z1;
        }
    }
    Dataset::new(y, x.clone())
}

/// Block-diagonal prior scatter `Σ_i M_i / ω_i²` entering the Σ conditional.
pub fn prior_scatter(w: &DMatrix<f64>, omega2: &DVector<f64>) -> Matrix2<f64> {
    let mut acc = Matrix2::zeros();
    for i in 0..w.nrows() {
        acc += row_scatter(w, i) / omega2[i];
    }
    acc
}

/// `Σ_p` of the diagonal 2x2 blocks of a `c x c` covariance.
pub fn covariance_pair_scatter(cov: &DMatrix<f64>) -> Matrix2<f64> {
    pair_block_sum(cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{kron, mat2_dyn};

    fn path3() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0])
    }

    #[test]
    fn spatial_structure_two_node() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let s = SpatialStructure::new(a.clone(), 0.0).unwrap();
        assert_eq!(s.b, DMatrix::identity(2, 2));
        let s = SpatialStructure::new(a, 0.5).unwrap();
        assert_eq!(s.b, DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0]));
    }

    #[test]
    fn spatial_structure_path_graph_eigenvalues() {
        let s = SpatialStructure::new(path3(), 0.95).unwrap();
        // Oracle: B = diag(1,2,1) − 0.95 A, eigenvalues from the characteristic
        // polynomial via nalgebra's symmetric eigensolver on an independent copy.
        let b =
            DMatrix::from_row_slice(3, 3, &[1.0, -0.95, 0.0, -0.95, 2.0, -0.95, 0.0, -0.95, 1.0]);
        let eig = b.symmetric_eigen().eigenvalues;
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min > 0.0);
        assert!((s.min_eigenvalue() - min).abs() < 1e-12);
        // Diagonal-dominance bound (1 − ρ)·min row sum.
        assert!(min >= 0.05 * 1.0 - 1e-12);
    }

    #[test]
    fn spatial_structure_errors() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.0]);
        assert!(matches!(
            SpatialStructure::new(a, 0.5),
            Err(Error::NonSymmetricNeighborhood { .. })
        ));
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            SpatialStructure::new(a, 0.5),
            Err(Error::ZeroRowSum(2))
        ));
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(
            SpatialStructure::new(a.clone(), 1.0),
            Err(Error::RhoOutOfRange(_))
        ));
        assert!(matches!(
            SpatialStructure::new(a, -0.1),
            Err(Error::RhoOutOfRange(_))
        ));
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]);
        assert!(matches!(
            SpatialStructure::new(a, 0.1),
            Err(Error::NegativeNeighborhood { .. })
        ));
    }

    #[test]
    fn default_neighborhood_single_pair_is_zero() {
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 1.0, 3.0, 5.0]);
        assert_eq!(default_neighborhood(&y).unwrap(), DMatrix::zeros(1, 1));
    }

    #[test]
    fn default_neighborhood_averages_absolute_correlations() {
        // Left columns (0, 2) and right columns (1, 3) with designed correlations.
        let u = [1.0, -1.0, 1.0, -1.0, 0.0];
        let v = [1.0, 1.0, -1.0, -1.0, 0.0];
        // corr(u, 0.6u + 0.8v) = 0.6 since u ⟂ v with equal norms.
        let l2: Vec<f64> = (0..5).map(|k| 0.6 * u[k] + 0.8 * v[k]).collect();
        let r2: Vec<f64> = (0..5).map(|k| -0.8 * u[k] + 0.6 * v[k]).collect();
        let y = DMatrix::from_fn(5, 4, |i, j| match j {
            0 => u[i],
            1 => u[i],
            2 => l2[i],
            _ => r2[i],
        });
        let a = default_neighborhood(&y).unwrap();
        assert!((a[(0, 1)] - 0.7).abs() < 1e-12);
        assert_eq!(a[(0, 0)], 0.0);
    }

    #[test]
    fn default_neighborhood_rejects_constant_column() {
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 1.0, 1.0, 5.0]);
        assert!(matches!(
            default_neighborhood(&y),
            Err(Error::ConstantColumn(0))
        ));
    }

    #[test]
    fn dataset_validation() {
        let y = DMatrix::zeros(4, 3);
        let x = DMatrix::zeros(4, 1);
        assert!(matches!(
            Dataset::new(y, x),
            Err(Error::OddPhenotypeCount(3))
        ));
        let y = DMatrix::zeros(4, 2);
        let x = DMatrix::zeros(5, 1);
        assert!(matches!(
            Dataset::new(y, x),
            Err(Error::SubjectCountMismatch { y: 4, x: 5 })
        ));
        let mut y = DMatrix::zeros(4, 2);
        y[(1, 1)] = f64::NAN;
        assert!(matches!(
            Dataset::new(y, DMatrix::zeros(4, 1)),
            Err(Error::NonFiniteInput { row: 1, col: 1, .. })
        ));
    }

    #[test]
    fn independence_log_joint_reduces_to_sum_of_squares() {
        // ρ = 0, one pair with unit row sum, Σ = I, W = 0, ω² = 1.
        let y = DMatrix::from_row_slice(3, 2, &[0.5, -1.0, 2.0, 0.3, -0.7, 1.1]);
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 2.0]);
        let ds = Dataset::new(y.clone(), x).unwrap();
        let spatial = SpatialStructure::independence(1);
        let hyper = Hyperparameters::new(2.0).unwrap();
        let state = ModelState::new(
            DMatrix::zeros(1, 2),
            Matrix2::identity(),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let lj = log_joint(&ds, &state, &spatial, &hyper).unwrap();
        let lik_only = log_likelihood_per_subject(&ds, &state.w, &state.sigma, &spatial)
            .unwrap()
            .sum();
        let hand = -0.5 * y.norm_squared() - 0.5 * 6.0 * LN_2PI;
        assert!((lik_only - hand).abs() < 1e-12);
        // Remaining prior terms do not involve y.
        let ds2 = Dataset::new(y * 0.0, ds.x.clone()).unwrap();
        let lj2 = log_joint(&ds2, &state, &spatial, &hyper).unwrap();
        assert!((lj - lj2 - (hand + 3.0 * LN_2PI)).abs() < 1e-12);
    }

    #[test]
    fn log_joint_is_deterministic() {
        let y = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 0.3]);
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let ds = Dataset::new(y, x).unwrap();
        let spatial = SpatialStructure::independence(1);
        let hyper = Hyperparameters::new(2.0).unwrap();
        let state = ModelState::new(
            DMatrix::from_row_slice(1, 2, &[0.1, 0.2]),
            Matrix2::new(1.0, 0.3, 0.3, 2.0),
            DVector::from_element(1, 0.7),
        )
        .unwrap();
        let a = log_joint(&ds, &state, &spatial, &hyper).unwrap();
        let scaled = Dataset::new(&ds.y * 1.0, ds.x.clone()).unwrap();
        let b = log_joint(&scaled, &state, &spatial, &hyper).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn residual_gram_matches_direct() {
        let y = DMatrix::from_fn(6, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let x = DMatrix::from_fn(6, 2, |i, j| ((i + j) % 3) as f64);
        let ds = Dataset::new(y, x).unwrap();
        let w = DMatrix::from_fn(2, 4, |i, j| 0.1 * (i as f64) - 0.2 * j as f64);
        let direct = {
            let r = &ds.y - &ds.x * &w;
            r.transpose() * r
        };
        let g = ds.cross_products().residual_gram(&w);
        assert!((g - direct).abs().max() < 1e-12);
    }

    #[test]
    fn kronecker_inverse_identity() {
        let s = SpatialStructure::new(path3(), 0.6).unwrap();
        let sigma = Matrix2::new(1.3, 0.4, 0.4, 0.8);
        let prec = kron(&s.b, &mat2_dyn(&spd2_inverse(&sigma, "s").unwrap()));
        let cov = s.error_covariance(&sigma);
        let err = (prec * cov - DMatrix::identity(6, 6)).abs().max();
        assert!(err < 1e-10);
    }
}
