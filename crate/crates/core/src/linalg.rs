//! Small dense linear-algebra helpers shared by the samplers.
//!
//! Phenotype vectors of length `c` are laid out pair-major: entry `2p + s` is
//! side `s` (0 = left, 1 = right) of ROI pair `p`. Under that layout a length-`c`
//! vector is the row-major flattening of an `(c/2) x 2` matrix, and
//! `(M ⊗ N) vec(V) = vec(M V Nᵀ)` for `M` of size `c/2` and `N` of size 2.

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::{Error, Result};

/// Relative pivot tolerance for positive-definiteness checks.
pub const PIVOT_TOL: f64 = 1e-12;

/// Lower Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Chol {
    l: DMatrix<f64>,
}

impl Chol {
    /// Factor `m`, failing when any pivot falls below `PIVOT_TOL` times the
    /// largest diagonal entry.
    pub fn new(m: &DMatrix<f64>, what: &'static str) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "{what} is {}x{}, expected square",
                n,
                m.ncols()
            )));
        }
        let scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
        let floor = PIVOT_TOL * scale.max(f64::MIN_POSITIVE);
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut diag = m[(j, j)];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if !(diag > floor) || !diag.is_finite() {
                return Err(Error::NonPositiveDefinite(what));
            }
            let ljj = diag.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut v = m[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / ljj;
            }
        }
        Ok(Self { l })
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// `L⁻¹ b`
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        let n = self.dim();
        for col in 0..x.ncols() {
            for i in 0..n {
                let mut v = x[(i, col)];
                for k in 0..i {
                    v -= self.l[(i, k)] * x[(k, col)];
                }
                x[(i, col)] = v / self.l[(i, i)];
            }
        }
        x
    }

    /// `L⁻ᵀ b`
    pub fn solve_upper_t(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        let n = self.dim();
        for col in 0..x.ncols() {
            for i in (0..n).rev() {
                let mut v = x[(i, col)];
                for k in (i + 1)..n {
                    v -= self.l[(k, i)] * x[(k, col)];
                }
                x[(i, col)] = v / self.l[(i, i)];
            }
        }
        x
    }

    /// `M⁻¹ b`
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.solve_upper_t(&self.solve_lower(b))
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        DVector::from_column_slice(self.solve(&m).as_slice())
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve(&DMatrix::identity(self.dim(), self.dim()))
    }
}

/// Lower Cholesky factor of a 2x2 SPD matrix.
pub fn chol2(m: &Matrix2<f64>, what: &'static str) -> Result<Matrix2<f64>> {
    let scale = m[(0, 0)].abs().max(m[(1, 1)].abs()).max(f64::MIN_POSITIVE);
    let a = m[(0, 0)];
    if !(a > PIVOT_TOL * scale) || !a.is_finite() {
        return Err(Error::NonPositiveDefinite(what));
    }
    let l11 = a.sqrt();
    let l21 = m[(1, 0)] / l11;
    let rest = m[(1, 1)] - l21 * l21;
    if !(rest > PIVOT_TOL * scale) || !rest.is_finite() {
        return Err(Error::NonPositiveDefinite(what));
    }
    Ok(Matrix2::new(l11, 0.0, l21, rest.sqrt()))
}

/// Inverse of a 2x2 SPD matrix, checked through its Cholesky factor.
pub fn spd2_inverse(m: &Matrix2<f64>, what: &'static str) -> Result<Matrix2<f64>> {
    chol2(m, what)?;
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    Ok(Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det)
}

pub fn log_det2(m: &Matrix2<f64>) -> f64 {
    (m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]).ln()
}

pub fn symmetrize2(m: &Matrix2<f64>) -> Matrix2<f64> {
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    Matrix2::new(m[(0, 0)], off, off, m[(1, 1)])
}

/// Row `i` of a `d x c` matrix viewed as `(c/2) x 2` pairs.
pub fn row_pairs(w: &DMatrix<f64>, i: usize) -> DMatrix<f64> {
    let m = w.ncols() / 2;
    DMatrix::from_fn(m, 2, |p, s| w[(i, 2 * p + s)])
}

/// A length-`c` vector viewed as `(c/2) x 2` pairs.
pub fn vec_pairs(v: &DVector<f64>) -> DMatrix<f64> {
    let m = v.len() / 2;
    DMatrix::from_fn(m, 2, |p, s| v[2 * p + s])
}

/// Inverse of [`vec_pairs`].
pub fn pairs_vec(p: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(p.nrows() * 2, |k, _| p[(k / 2, k % 2)])
}

/// `Σ_{p,q} weights[p,q] · G[2p..2p+2, 2q..2q+2]`, the 2x2 contraction of a
/// `c x c` matrix against a `c/2 x c/2` weight matrix. With `G = Σ_ℓ e_ℓ e_ℓᵀ`
/// this is the matrix whose trace against `Σ⁻¹` gives `Σ_ℓ e_ℓᵀ (weights ⊗ Σ⁻¹) e_ℓ`.
pub fn pair_contract(weights: &DMatrix<f64>, g: &DMatrix<f64>) -> Matrix2<f64> {
    let m = weights.nrows();
    let mut out = Matrix2::zeros();
    for p in 0..m {
        for q in 0..m {
            let w = weights[(p, q)];
            if w == 0.0 {
                continue;
            }
            for s in 0..2 {
                for t in 0..2 {
                    out[(s, t)] += w * g[(2 * p + s, 2 * q + t)];
                }
            }
        }
    }
    out
}

/// Sum of the diagonal 2x2 blocks of a `c x c` matrix.
pub fn pair_block_sum(g: &DMatrix<f64>) -> Matrix2<f64> {
    let m = g.nrows() / 2;
    let mut out = Matrix2::zeros();
    for p in 0..m {
        for s in 0..2 {
            for t in 0..2 {
                out[(s, t)] += g[(2 * p + s, 2 * p + t)];
            }
        }
    }
    out
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

pub fn mat2_dyn(m: &Matrix2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(2, 2, |i, j| m[(i, j)])
}

pub fn trace_product2(a: &Matrix2<f64>, b: &Matrix2<f64>) -> f64 {
    a[(0, 0)] * b[(0, 0)] + a[(0, 1)] * b[(1, 0)] + a[(1, 0)] * b[(0, 1)] + a[(1, 1)] * b[(1, 1)]
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}
