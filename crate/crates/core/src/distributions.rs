//! Random variate generation and log densities for the conditionals.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix2};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{chol2, log_det2, spd2_inverse, symmetrize2, trace_product2};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `ln Γ₂(a)`, the bivariate gamma function.
pub fn ln_mvgamma2(a: f64) -> f64 {
    0.5 * PI.ln() + ln_gamma(a) + ln_gamma(a - 0.5)
}

pub fn standard_normal_matrix<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    // Column-major fill order is part of the seeded-determinism contract.
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Inverse Gaussian distribution with mean `mean` and shape `shape`.
#[derive(Debug, Clone, Copy)]
pub struct InverseGaussian {
    mean: f64,
    shape: f64,
}

impl InverseGaussian {
    pub fn new(mean: f64, shape: f64) -> Result<Self> {
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(Error::invalid("inverse Gaussian mean", format!("{mean}")));
        }
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(Error::invalid("inverse Gaussian shape", format!("{shape}")));
        }
        Ok(Self { mean, shape })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    /// Michael, Schucany and Haas transformation with multiple roots.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mu = self.mean;
        let lambda = self.shape;
        let nu: f64 = rng.sample(StandardNormal);
        let t = mu * nu * nu;
        // Smaller root of the quadratic, rearranged to avoid cancellation.
        let x = if t == 0.0 {
            mu
        } else {
            let root = (t * (4.0 * lambda + t)).sqrt();
            4.0 * mu * lambda * t / ((t + root) * (t + root))
        };
        let u: f64 = rng.random();
        if u * (mu + x) <= mu {
            x
        } else {
            mu * mu / x
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let (mu, lambda) = (self.mean, self.shape);
        0.5 * (lambda.ln() - LN_2PI - 3.0 * x.ln())
            - lambda * (x - mu) * (x - mu) / (2.0 * mu * mu * x)
    }
}

/// Gamma distribution in shape/rate form.
pub fn sample_gamma_rate<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::invalid("gamma parameters", e.to_string()))?;
    Ok(g.sample(rng))
}

pub fn gamma_rate_ln_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Inverse-Wishart distribution on 2x2 matrices, density proportional to
/// `|Σ|^{-(dof+3)/2} exp(-tr(scale Σ⁻¹)/2)`.
#[derive(Debug, Clone, Copy)]
pub struct InverseWishart2 {
    scale: Matrix2<f64>,
    dof: f64,
}

impl InverseWishart2 {
    pub fn new(scale: Matrix2<f64>, dof: f64) -> Result<Self> {
        chol2(&scale, "inverse-Wishart scale")?;
        if !(dof > 1.0) {
            return Err(Error::invalid(
                "inverse-Wishart degrees of freedom",
                format!("{dof}"),
            ));
        }
        Ok(Self {
            scale: symmetrize2(&scale),
            dof,
        })
    }

    pub fn scale(&self) -> &Matrix2<f64> {
        &self.scale
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    /// Bartlett decomposition of the Wishart draw for `Σ⁻¹`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Matrix2<f64>> {
        let scale_inv = spd2_inverse(&self.scale, "inverse-Wishart scale")?;
        let l = chol2(&scale_inv, "inverse-Wishart scale")?;
        let c1 = ChiSquared::new(self.dof)
            .map_err(|e| Error::invalid("chi-square dof", e.to_string()))?
            .sample(rng);
        let c2 = ChiSquared::new(self.dof - 1.0)
            .map_err(|e| Error::invalid("chi-square dof", e.to_string()))?
            .sample(rng);
        let z: f64 = rng.sample(StandardNormal);
        let a = Matrix2::new(c1.sqrt(), 0.0, z, c2.sqrt());
        let la = l * a;
        let precision = la * la.transpose();
        Ok(symmetrize2(&spd2_inverse(
            &precision,
            "inverse-Wishart draw",
        )?))
    }

    pub fn ln_pdf(&self, sigma: &Matrix2<f64>) -> Result<f64> {
        let sinv = spd2_inverse(sigma, "Sigma")?;
        let v = self.dof;
        Ok(0.5 * v * log_det2(&self.scale)
            - v * std::f64::consts::LN_2
            - ln_mvgamma2(0.5 * v)
            - 0.5 * (v + 3.0) * log_det2(sigma)
            - 0.5 * trace_product2(&self.scale, &sinv))
    }

    /// `E[Σ]`, defined for `dof > 3`.
    pub fn mean(&self) -> Result<Matrix2<f64>> {
        if self.dof <= 3.0 {
            return Err(Error::DegreesOfFreedomTooSmall(self.dof));
        }
        Ok(self.scale / (self.dof - 3.0))
    }

    /// `E[Σ⁻¹] = dof · scale⁻¹`.
    pub fn mean_inverse(&self) -> Result<Matrix2<f64>> {
        Ok(spd2_inverse(&self.scale, "inverse-Wishart scale")? * self.dof)
    }
}
