//! Logistic propensity model, quantile trimming, stabilized inverse
//! probability of treatment weights and covariate balance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Scalar};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropensityOptions {
    pub l2: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PropensityOptions {
    fn default() -> Self {
        PropensityOptions {
            l2: 0.0,
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Convergence<T> {
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: T,
}

/// Quantile cutoffs that produced a trimmed fit. Levels are recorded so a
/// second trim at the same levels reuses the cutoffs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrimBounds<T> {
    pub lo_q: f64,
    pub hi_q: f64,
    pub lo: T,
    pub hi: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PropensityFit<T> {
    /// Intercept on the original covariate scale.
    pub intercept: T,
    /// Coefficients on the original covariate scale.
    pub coefficients: Vec<T>,
    /// `e(x) = P(A=1|x)` per unit of the fitted (or trimmed) data.
    pub scores: Vec<T>,
    /// `P(A=1)`: treated fraction of the data the scores belong to.
    pub marginal: T,
    pub convergence: Convergence<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trim: Option<TrimBounds<T>>,
}

impl<T: Scalar> PropensityFit<T> {
    /// Score for an arbitrary covariate row.
    pub fn predict(&self, x: &[T]) -> T {
        let eta = self.intercept
            + x.iter()
                .zip(&self.coefficients)
                .map(|(&a, &b)| a * b)
                .sum::<T>();
        clamp_open(sigmoid(eta))
    }
}

fn clamp_open<T: Scalar>(p: T) -> T {
    let eps = T::epsilon();
    p.max(eps).min(T::one() - eps)
}

struct Standardized<T> {
    z: Vec<T>,
    means: Vec<T>,
    sds: Vec<T>,
}

/// Column-standardizes covariates; zero-variance columns become all zeros.
fn standardize<T: Scalar>(d: &Dataset<T>) -> Standardized<T> {
    let (n, k) = (d.n(), d.k());
    let mut means = vec![T::zero(); k];
    let mut sds = vec![T::zero(); k];
    for j in 0..k {
        let col = d.covariate_column(j);
        means[j] = stats::mean(&col);
        let v = col.iter().map(|&x| (x - means[j]) * (x - means[j])).sum::<T>()
            / T::from_usize_lossy(n);
        sds[j] = v.sqrt();
    }
    let mut z = vec![T::zero(); n * k];
    for i in 0..n {
        let row = d.row(i);
        for j in 0..k {
            if sds[j] > T::zero() {
                z[i * k + j] = (row[j] - means[j]) / sds[j];
            }
        }
    }
    Standardized { z, means, sds }
}

/// Mean penalized log-likelihood and its gradient at `theta = [b, w...]`.
fn objective<T: Scalar>(z: &[T], a: &[u8], k: usize, theta: &[T], l2: T) -> (T, Vec<T>) {
    let n = a.len();
    let nf = T::from_usize_lossy(n);
    let (ll, grad) = (0..n)
        .into_par_iter()
        .fold(
            || (T::zero(), vec![T::zero(); k + 1]),
            |(mut ll, mut g), i| {
                let row = &z[i * k..(i + 1) * k];
                let eta = theta[0]
                    + row
                        .iter()
                        .zip(&theta[1..])
                        .map(|(&x, &w)| x * w)
                        .sum::<T>();
                let ai = T::from_u8(a[i]).unwrap();
                ll += ai * eta - softplus(eta);
                let r = ai - sigmoid(eta);
                g[0] += r;
                for (gj, &x) in g[1..].iter_mut().zip(row) {
                    *gj += r * x;
                }
                (ll, g)
            },
        )
        .collect::<Vec<_>>()
        .into_iter()
        .fold((T::zero(), vec![T::zero(); k + 1]), |(l1, mut g1), (l2_, g2)| {
            for (x, y) in g1.iter_mut().zip(&g2) {
                *x += *y;
            }
            (l1 + l2_, g1)
        });
    let mut grad: Vec<T> = grad.into_iter().map(|g| g / nf).collect();
    let mut pen = T::zero();
    for j in 1..=k {
        grad[j] -= l2 * theta[j];
        pen += theta[j] * theta[j];
    }
    (ll / nf - l2 * pen / T::lit(2.0), grad)
}

/// Fits `P(A=1|X)` by L2-penalized maximum likelihood with full-batch
/// gradient ascent and backtracking on standardized covariates.
///
/// The penalty applies to the standardized slopes; the intercept is free.
/// Stops when the gradient max-norm drops below `tol`. Running out of
/// iterations is reported in [`Convergence`], not as an error.
pub fn fit_propensity<T: Scalar>(d: &Dataset<T>, opts: &PropensityOptions) -> Result<PropensityFit<T>> {
    d.require_both_arms()?;
    if !(opts.l2 >= 0.0) || !(opts.tol > 0.0) {
        return Err(Error::param("propensity l2 must be >= 0 and tol > 0"));
    }
    let k = d.k();
    let std = standardize(d);
    let a = d.treatment();
    let l2 = T::lit(opts.l2);
    let tol = T::lit(opts.tol);

    let p1 = T::from_usize_lossy(d.treated_count()) / T::from_usize_lossy(d.n());
    let mut theta = vec![T::zero(); k + 1];
    theta[0] = (p1 / (T::one() - p1)).ln();

    let (mut f, mut g) = objective(&std.z, a, k, &theta, l2);
    let mut step = T::one();
    let mut iterations = 0;
    let max_norm = |g: &[T]| g.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
    let mut gnorm = max_norm(&g);
    while gnorm >= tol && iterations < opts.max_iter {
        iterations += 1;
        let g2: T = g.iter().map(|&x| x * x).sum();
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<T> = theta.iter().zip(&g).map(|(&t, &gi)| t + step * gi).collect();
            let (fc, gc) = objective(&std.z, a, k, &cand, l2);
            if fc >= f + T::lit(1e-4) * step * g2 {
                theta = cand;
                f = fc;
                g = gc;
                accepted = true;
                break;
            }
            step = step * T::lit(0.5);
        }
        if !accepted {
            break;
        }
        step = (step * T::lit(2.0)).min(T::lit(64.0));
        gnorm = max_norm(&g);
    }

    let mut coefficients = vec![T::zero(); k];
    let mut intercept = theta[0];
    for j in 0..k {
        if std.sds[j] > T::zero() {
            coefficients[j] = theta[j + 1] / std.sds[j];
            intercept -= coefficients[j] * std.means[j];
        }
    }
    let scores: Vec<T> = (0..d.n())
        .into_par_iter()
        .map(|i| {
            let row = &std.z[i * k..(i + 1) * k];
            let eta = theta[0]
                + row
                    .iter()
                    .zip(&theta[1..])
                    .map(|(&x, &w)| x * w)
                    .sum::<T>();
            clamp_open(sigmoid(eta))
        })
        .collect();
    Ok(PropensityFit {
        intercept,
        coefficients,
        scores,
        marginal: p1,
        convergence: Convergence {
            converged: gnorm < tol,
            iterations,
            gradient_norm: gnorm,
        },
        trim: None,
    })
}

/// Result of [`trim_extremes`] with the indices of retained units.
#[derive(Debug, Clone)]
pub struct Trimmed<T> {
    pub dataset: Dataset<T>,
    pub fit: PropensityFit<T>,
    /// Positions in the input dataset, ascending.
    pub retained: Vec<usize>,
}

/// Drops units whose score is strictly below the `lo_q` quantile or strictly
/// above the `hi_q` quantile of the score distribution.
///
/// Cutoffs come from the untrimmed distribution. A fit that was already
/// trimmed at the same levels keeps its recorded cutoffs, so trimming twice
/// removes nothing more.
pub fn trim_extremes<T: Scalar>(
    fit: &PropensityFit<T>,
    d: &Dataset<T>,
    lo_q: f64,
    hi_q: f64,
) -> Result<Trimmed<T>> {
    if !(0.0 <= lo_q && lo_q < hi_q && hi_q <= 1.0) {
        return Err(Error::param(format!(
            "trim quantiles must satisfy 0 <= lo < hi <= 1, got {lo_q}, {hi_q}"
        )));
    }
    if fit.scores.len() != d.n() {
        return Err(Error::LengthMismatch {
            expected: d.n(),
            found: fit.scores.len(),
        });
    }
    let (lo, hi) = match fit.trim {
        Some(b) if b.lo_q == lo_q && b.hi_q == hi_q => (b.lo, b.hi),
        _ => {
            let sorted = stats::sorted_copy(&fit.scores);
            (
                stats::quantile_sorted(&sorted, lo_q),
                stats::quantile_sorted(&sorted, hi_q),
            )
        }
    };
    let retained: Vec<usize> = (0..d.n())
        .filter(|&i| fit.scores[i] >= lo && fit.scores[i] <= hi)
        .collect();
    let treated = retained.iter().filter(|&&i| d.treatment()[i] == 1).count();
    if treated == 0 {
        return Err(Error::TrimRemovesArm("treated"));
    }
    if treated == retained.len() {
        return Err(Error::TrimRemovesArm("control"));
    }
    let dataset = d.subset(&retained);
    let scores: Vec<T> = retained.iter().map(|&i| fit.scores[i]).collect();
    let marginal = T::from_usize_lossy(treated) / T::from_usize_lossy(retained.len());
    Ok(Trimmed {
        dataset,
        fit: PropensityFit {
            scores,
            marginal,
            trim: Some(TrimBounds { lo_q, hi_q, lo, hi }),
            ..fit.clone()
        },
        retained,
    })
}

/// Stabilized weights
/// `w = a P(a=1) / e(x) + (1 - a) (1 - P(a=1)) / (1 - e(x))`.
pub fn stabilized_weights<T: Scalar>(fit: &PropensityFit<T>, d: &Dataset<T>) -> Result<Vec<T>> {
    if fit.scores.len() != d.n() {
        return Err(Error::LengthMismatch {
            expected: d.n(),
            found: fit.scores.len(),
        });
    }
    let p = fit.marginal;
    fit.scores
        .iter()
        .zip(d.treatment())
        .map(|(&e, &a)| {
            if !(e > T::zero() && e < T::one()) {
                return Err(Error::DegenerateScore(e.as_f64()));
            }
            Ok(if a == 1 { p / e } else { (T::one() - p) / (T::one() - e) })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CovariateBalance<T> {
    pub covariate: String,
    pub smd_before: T,
    pub smd_after: T,
    /// Both arms have zero variance; SMDs reported as 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BalanceReport<T> {
    pub covariates: Vec<CovariateBalance<T>>,
    pub threshold: T,
    /// Covariates whose weighted SMD exceeds the threshold.
    pub flagged: Vec<String>,
}

impl<T: Scalar> BalanceReport<T> {
    pub fn mean_before(&self) -> T {
        stats::mean(&self.covariates.iter().map(|c| c.smd_before).collect::<Vec<_>>())
    }

    pub fn mean_after(&self) -> T {
        stats::mean(&self.covariates.iter().map(|c| c.smd_after).collect::<Vec<_>>())
    }

    pub fn fraction_improved(&self) -> f64 {
        let improved = self
            .covariates
            .iter()
            .filter(|c| c.smd_after < c.smd_before || (c.smd_before == T::zero() && c.smd_after == T::zero()))
            .count();
        improved as f64 / self.covariates.len().max(1) as f64
    }
}

/// `|m1 - m0| / sqrt((s1^2 + s0^2) / 2)`, 0 (degenerate) when both
/// variances vanish.
pub fn standardized_mean_difference<T: Scalar>(m1: T, v1: T, m0: T, v0: T) -> (T, bool) {
    let denom = ((v1 + v0) / T::lit(2.0)).sqrt();
    if denom <= T::zero() {
        return (T::zero(), true);
    }
    ((m1 - m0).abs() / denom, false)
}

/// Unweighted and weighted SMD per covariate.
pub fn balance_report<T: Scalar>(d: &Dataset<T>, weights: &[T], threshold: f64) -> Result<BalanceReport<T>> {
    if weights.len() != d.n() {
        return Err(Error::LengthMismatch {
            expected: d.n(),
            found: weights.len(),
        });
    }
    if weights.iter().any(|&w| !(w > T::zero())) {
        return Err(Error::param("balance weights must be positive"));
    }
    d.require_both_arms()?;
    let treated: Vec<usize> = (0..d.n()).filter(|&i| d.treatment()[i] == 1).collect();
    let control: Vec<usize> = (0..d.n()).filter(|&i| d.treatment()[i] == 0).collect();
    let w1: Vec<T> = treated.iter().map(|&i| weights[i]).collect();
    let w0: Vec<T> = control.iter().map(|&i| weights[i]).collect();
    let threshold = T::lit(threshold);

    let covariates: Vec<CovariateBalance<T>> = (0..d.k())
        .into_par_iter()
        .map(|j| {
            let col = d.covariate_column(j);
            let x1: Vec<T> = treated.iter().map(|&i| col[i]).collect();
            let x0: Vec<T> = control.iter().map(|&i| col[i]).collect();
            let (before, deg) = standardized_mean_difference(
                stats::mean(&x1),
                stats::variance(&x1),
                stats::mean(&x0),
                stats::variance(&x0),
            );
            let (after, _) = standardized_mean_difference(
                stats::weighted_mean(&x1, &w1),
                stats::weighted_variance(&x1, &w1),
                stats::weighted_mean(&x0, &w0),
                stats::weighted_variance(&x0, &w0),
            );
            CovariateBalance {
                covariate: d.covariate_names()[j].clone(),
                smd_before: before,
                smd_after: if deg { T::zero() } else { after },
                degenerate: deg,
            }
        })
        .collect();
    let flagged = covariates
        .iter()
        .filter(|c| c.smd_after > threshold)
        .map(|c| c.covariate.clone())
        .collect();
    Ok(BalanceReport {
        covariates,
        threshold,
        flagged,
    })
}
