//! Posterior tail probabilities, Bayesian FDR thresholding and equal-tail
//! credible intervals for the coefficient matrix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::gibbs::GibbsOutput;
use crate::vb::VBPosterior;

/// Minimum number of retained draws for empirical tail probabilities.
pub const MIN_TAIL_DRAWS: usize = 100;
/// Nominal sample size used to clamp Gaussian tail probabilities.
pub const VB_NOMINAL_DRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosteriorSource {
    Mcmc,
    Vb,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailProbMatrix {
    pub p: DMatrix<f64>,
    pub c_star: f64,
    pub source: PosteriorSource,
    /// Sample size behind the `1 − 1/(2N)` clamp.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionResult {
    pub threshold: f64,
    pub alpha: f64,
    /// Length of the longest prefix of sorted probabilities meeting the bound.
    pub prefix_len: usize,
    /// `(snp, phenotype)` pairs in row-major order.
    pub selected: Vec<(usize, usize)>,
    pub per_region_counts: Vec<usize>,
}

impl SelectionResult {
    pub fn is_selected(&self, i: usize, j: usize) -> bool {
        self.selected.binary_search(&(i, j)).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CredibleIntervals {
    pub level: f64,
    pub lo: DMatrix<f64>,
    pub hi: DMatrix<f64>,
    pub mean: DMatrix<f64>,
}

/// Common interface over sampled and variational posteriors for `W`.
pub trait CoefficientPosterior {
    fn source(&self) -> PosteriorSource;
    fn posterior_mean(&self) -> DMatrix<f64>;
    fn posterior_sd(&self) -> DMatrix<f64>;
    fn tail_probabilities(&self, c_star: f64) -> Result<TailProbMatrix>;
    fn credible_intervals(&self, level: f64) -> Result<CredibleIntervals>;
}

fn clamp_one(p: f64, n: usize) -> f64 {
    if p >= 1.0 {
        1.0 - 1.0 / (2.0 * n as f64)
    } else {
        p
    }
}

fn check_c_star(c_star: f64) -> Result<()> {
    if !(c_star > 0.0) || !c_star.is_finite() {
        return Err(Error::NonPositiveCStar(c_star));
    }
    Ok(())
}

fn check_level(level: f64) -> Result<()> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::invalid(
            "credible level",
            format!("{level} is outside [0, 1)"),
        ));
    }
    Ok(())
}

/// `p_ij = N⁻¹ Σ_t 1{|W_ij^(t)| > c*}`, with exact ones clamped to `1 − 1/(2N)`.
pub fn tail_probabilities_from_draws(
    draws: &[DMatrix<f64>],
    c_star: f64,
) -> Result<TailProbMatrix> {
    check_c_star(c_star)?;
    if draws.len() < MIN_TAIL_DRAWS {
        return Err(Error::TooFewSamples {
            required: MIN_TAIL_DRAWS,
            got: draws.len(),
        });
    }
    let (d, c) = draws[0].shape();
    let mut counts = DMatrix::<f64>::zeros(d, c);
    for w in draws {
        for j in 0..c {
            for i in 0..d {
                if w[(i, j)].abs() > c_star {
                    counts[(i, j)] += 1.0;
                }
            }
        }
    }
    let n = draws.len();
    let p = counts.map(|k| clamp_one(k / n as f64, n));
    Ok(TailProbMatrix {
        p,
        c_star,
        source: PosteriorSource::Mcmc,
        n,
    })
}

/// Two-sided Gaussian tail `P(|W| > c*)` for `W ~ N(mean, sd²)`.
pub fn gaussian_tail(mean: f64, sd: f64, c_star: f64) -> f64 {
    if sd <= 0.0 {
        return if mean.abs() > c_star { 1.0 } else { 0.0 };
    }
    let z = Normal::standard();
    z.sf((c_star - mean) / sd) + z.cdf((-c_star - mean) / sd)
}

pub fn tail_probabilities_gaussian(
    mean: &DMatrix<f64>,
    sd: &DMatrix<f64>,
    c_star: f64,
    nominal_n: usize,
) -> Result<TailProbMatrix> {
    check_c_star(c_star)?;
    if nominal_n == 0 {
        return Err(Error::invalid("nominal sample size", "must be positive"));
    }
    let p = DMatrix::from_fn(mean.nrows(), mean.ncols(), |i, j| {
        clamp_one(gaussian_tail(mean[(i, j)], sd[(i, j)], c_star), nominal_n)
    });
    Ok(TailProbMatrix {
        p,
        c_star,
        source: PosteriorSource::Vb,
        n: nominal_n,
    })
}

/// Bayesian FDR rule: sort descending (stable in row-major order), take the
/// longest prefix whose mean of `1 − p` is at most `α`, set `φ_α` to its last
/// value and select `p > φ_α`.
pub fn fdr_threshold(tail: &TailProbMatrix, alpha: f64) -> Result<SelectionResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(
            "alpha",
            format!("{alpha} is outside (0, 1)"),
        ));
    }
    let (d, c) = tail.p.shape();
    let mut flat: Vec<((usize, usize), f64)> = Vec::with_capacity(d * c);
    for i in 0..d {
        for j in 0..c {
            flat.push(((i, j), tail.p[(i, j)]));
        }
    }
    flat.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut cum = 0.0;
    let mut prefix_len = 0;
    for (k, (_, p)) in flat.iter().enumerate() {
        cum += 1.0 - p;
        if cum / (k + 1) as f64 <= alpha {
            prefix_len = k + 1;
        }
    }
    let threshold = if prefix_len == 0 {
        1.0
    } else {
        flat[prefix_len - 1].1
    };
    let mut selected = Vec::new();
    let mut per_region_counts = vec![0; c];
    for i in 0..d {
        for (j, count) in per_region_counts.iter_mut().enumerate() {
            if tail.p[(i, j)] > threshold {
                selected.push((i, j));
                *count += 1;
            }
        }
    }
    Ok(SelectionResult {
        threshold,
        alpha,
        prefix_len,
        selected,
        per_region_counts,
    })
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn credible_intervals_from_draws(
    draws: &[DMatrix<f64>],
    level: f64,
) -> Result<CredibleIntervals> {
    check_level(level)?;
    if draws.is_empty() {
        return Err(Error::TooFewSamples {
            required: 1,
            got: 0,
        });
    }
    let (d, c) = draws[0].shape();
    let lower_q = 0.5 * (1.0 - level);
    let upper_q = 1.0 - lower_q;
    let mut lo = DMatrix::zeros(d, c);
    let mut hi = DMatrix::zeros(d, c);
    let mut mean = DMatrix::zeros(d, c);
    let mut buf = vec![0.0; draws.len()];
    for i in 0..d {
        for j in 0..c {
            for (t, w) in draws.iter().enumerate() {
                buf[t] = w[(i, j)];
            }
            mean[(i, j)] = buf.iter().sum::<f64>() / buf.len() as f64;
            buf.sort_by(f64::total_cmp);
            lo[(i, j)] = quantile_sorted(&buf, lower_q);
            hi[(i, j)] = quantile_sorted(&buf, upper_q);
        }
    }
    Ok(CredibleIntervals {
        level,
        lo,
        hi,
        mean,
    })
}

pub fn credible_intervals_gaussian(
    mean: &DMatrix<f64>,
    sd: &DMatrix<f64>,
    level: f64,
) -> Result<CredibleIntervals> {
    check_level(level)?;
    let z = Normal::standard().inverse_cdf(1.0 - 0.5 * (1.0 - level));
    Ok(CredibleIntervals {
        level,
        lo: mean - sd * z,
        hi: mean + sd * z,
        mean: mean.clone(),
    })
}

impl CoefficientPosterior for GibbsOutput {
    fn source(&self) -> PosteriorSource {
        PosteriorSource::Mcmc
    }

    fn posterior_mean(&self) -> DMatrix<f64> {
        self.posterior_mean_w()
    }

    fn posterior_sd(&self) -> DMatrix<f64> {
        let mean = self.posterior_mean_w();
        let mut acc = DMatrix::zeros(mean.nrows(), mean.ncols());
        for w in &self.w_draws {
            let dev = w - &mean;
            acc += dev.component_mul(&dev);
        }
        let denom = (self.len().max(2) - 1) as f64;
        acc.map(|v| (v / denom).sqrt())
    }

    fn tail_probabilities(&self, c_star: f64) -> Result<TailProbMatrix> {
        tail_probabilities_from_draws(&self.w_draws, c_star)
    }

    fn credible_intervals(&self, level: f64) -> Result<CredibleIntervals> {
        credible_intervals_from_draws(&self.w_draws, level)
    }
}

impl CoefficientPosterior for VBPosterior {
    fn source(&self) -> PosteriorSource {
        PosteriorSource::Vb
    }

    fn posterior_mean(&self) -> DMatrix<f64> {
        self.mu_w.clone()
    }

    fn posterior_sd(&self) -> DMatrix<f64> {
        self.sd_w()
    }

    fn tail_probabilities(&self, c_star: f64) -> Result<TailProbMatrix> {
        tail_probabilities_gaussian(&self.mu_w, &self.sd_w(), c_star, VB_NOMINAL_DRAWS)
    }

    fn credible_intervals(&self, level: f64) -> Result<CredibleIntervals> {
        credible_intervals_gaussian(&self.mu_w, &self.sd_w(), level)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tail(values: &[f64], d: usize, c: usize) -> TailProbMatrix {
        TailProbMatrix {
            p: DMatrix::from_row_slice(d, c, values),
            c_star: 0.1,
            source: PosteriorSource::Mcmc,
            n: 100,
        }
    }

    #[test]
    fn hand_enumerated_prefix() {
        let r = fdr_threshold(&tail(&[0.99, 0.97, 0.90, 0.50], 2, 2), 0.05).unwrap();
        assert_eq!(r.prefix_len, 3);
        assert_eq!(r.threshold, 0.90);
        assert_eq!(r.selected, vec![(0, 0), (0, 1)]);
        assert_eq!(r.per_region_counts, vec![1, 1]);
    }

    #[test]
    fn all_tied_selects_nothing() {
        let v = 1.0 - 1.0 / 20_000.0;
        let r = fdr_threshold(&tail(&[v; 6], 2, 3), 0.05).unwrap();
        assert_eq!(r.threshold, v);
        assert!(r.selected.is_empty());
    }

    #[test]
    fn permissive_alpha() {
        let r = fdr_threshold(&tail(&[0.3, 0.2, 0.9, 0.2], 2, 2), 0.999).unwrap();
        assert_eq!(r.prefix_len, 4);
        assert_eq!(r.threshold, 0.2);
        assert_eq!(r.selected, vec![(0, 0), (1, 0)]);
    }

    #[test]
    fn no_prefix_gives_unit_threshold() {
        let r = fdr_threshold(&tail(&[0.5, 0.4], 1, 2), 0.05).unwrap();
        assert_eq!(r.threshold, 1.0);
        assert_eq!(r.prefix_len, 0);
        assert!(r.selected.is_empty());
    }

    #[test]
    fn clamp_and_zero() {
        let zeros = vec![DMatrix::zeros(1, 1); 100];
        assert_eq!(
            tail_probabilities_from_draws(&zeros, 0.5).unwrap().p[(0, 0)],
            0.0
        );
        let big = vec![DMatrix::from_element(1, 1, -3.0); 100];
        assert_eq!(
            tail_probabilities_from_draws(&big, 0.5).unwrap().p[(0, 0)],
            0.995
        );
        assert!(matches!(
            tail_probabilities_from_draws(&big[..99], 0.5),
            Err(Error::TooFewSamples { .. })
        ));
        assert!(matches!(
            tail_probabilities_from_draws(&big, 0.0),
            Err(Error::NonPositiveCStar(_))
        ));
    }

    #[test]
    fn degenerate_level_gives_median() {
        let draws: Vec<DMatrix<f64>> = [-1.0, 0.0, 1.0]
            .iter()
            .map(|&v| DMatrix::from_element(1, 1, v))
            .collect();
        let ci = credible_intervals_from_draws(&draws, 0.0).unwrap();
        assert_eq!(ci.lo[(0, 0)], 0.0);
        assert_eq!(ci.hi[(0, 0)], 0.0);
    }

    #[test]
    fn gaussian_interval_shape() {
        let m = DMatrix::from_element(1, 1, 0.09);
        let s = DMatrix::from_element(1, 1, 0.064);
        let ci = credible_intervals_gaussian(&m, &s, 0.95).unwrap();
        assert!((ci.lo[(0, 0)] - -0.0354).abs() < 1e-3);
        assert!((ci.hi[(0, 0)] - 0.2154).abs() < 1e-3);
    }
}
