//! Weighted least squares and a stochastic-gradient engine shared by the
//! SGD, Poisson and SVR families.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::linalg::solve_psd;
use crate::rng;
use crate::scalar::Scalar;

/// Weighted least squares with an intercept. `z` is row-major `n x p`.
/// Returns `(intercept, coefficients, skipped)`; rank-deficient directions
/// are dropped and their coefficients set to zero.
pub(crate) fn wls<T: Scalar>(z: &[T], p: usize, y: &[T], w: &[T]) -> (T, Vec<T>, Vec<usize>) {
    let q = p + 1;
    let n = y.len();
    let chunk = 512;
    let (gram, rhs) = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut g = vec![T::zero(); q * q];
            let mut r = vec![T::zero(); q];
            let mut row = vec![T::zero(); q];
            for i in c * chunk..((c + 1) * chunk).min(n) {
                row[0] = T::one();
                row[1..].copy_from_slice(&z[i * p..(i + 1) * p]);
                for a in 0..q {
                    let wa = w[i] * row[a];
                    r[a] += wa * y[i];
                    for b in a..q {
                        g[a * q + b] += wa * row[b];
                    }
                }
            }
            (g, r)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(
            (vec![T::zero(); q * q], vec![T::zero(); q]),
            |(mut g, mut r), (gc, rc)| {
                g.iter_mut().zip(&gc).for_each(|(a, b)| *a += *b);
                r.iter_mut().zip(&rc).for_each(|(a, b)| *a += *b);
                (g, r)
            },
        );
    let mut gram = gram;
    for a in 0..q {
        for b in 0..a {
            gram[a * q + b] = gram[b * q + a];
        }
    }
    let (beta, skipped) = solve_psd(&gram, &rhs, q);
    (beta[0], beta[1..].to_vec(), skipped)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum SgdLoss {
    Squared,
    Poisson,
    EpsilonInsensitive(f64),
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SgdOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Penalty on standardized slopes in the mean objective
    /// `(1/n) sum w L + l2/2 |beta|^2`.
    pub l2: f64,
    pub seed: u64,
}

/// Averaged SGD on standardized features. Returns intercept and
/// coefficients on the original feature scale.
pub(crate) fn sgd<T: Scalar>(z: &[T], p: usize, y: &[T], w: &[T], loss: SgdLoss, opts: &SgdOptions) -> (T, Vec<T>) {
    let n = y.len();
    let nf = T::from_usize_lossy(n);
    let mut means = vec![T::zero(); p];
    let mut sds = vec![T::zero(); p];
    for j in 0..p {
        let m = (0..n).map(|i| z[i * p + j]).sum::<T>() / nf;
        let v = (0..n).map(|i| (z[i * p + j] - m) * (z[i * p + j] - m)).sum::<T>() / nf;
        means[j] = m;
        sds[j] = v.sqrt();
    }
    let mut s = vec![T::zero(); n * p];
    for i in 0..n {
        for j in 0..p {
            if sds[j] > T::zero() {
                s[i * p + j] = (z[i * p + j] - means[j]) / sds[j];
            }
        }
    }

    let wsum: T = w.iter().copied().sum();
    let ym = y.iter().zip(w).map(|(&y, &w)| y * w).sum::<T>() / wsum;
    let (y_center, y_scale) = match loss {
        SgdLoss::Poisson => (T::zero(), T::one()),
        _ => {
            let v = y.iter().zip(w).map(|(&y, &w)| w * (y - ym) * (y - ym)).sum::<T>() / wsum;
            let sd = v.sqrt();
            (ym, if sd > T::zero() { sd } else { T::one() })
        }
    };
    let ys: Vec<T> = y.iter().map(|&v| (v - y_center) / y_scale).collect();
    let eps = match loss {
        SgdLoss::EpsilonInsensitive(e) => T::lit(e) / y_scale,
        _ => T::zero(),
    };
    let l2 = match loss {
        SgdLoss::EpsilonInsensitive(_) => T::lit(opts.l2) * y_scale,
        _ => T::lit(opts.l2),
    };

    let mean_sq = T::one() + s.iter().map(|&v| v * v).sum::<T>() / nf;
    let wmax = w.iter().fold(T::zero(), |m, &v| m.max(v));
    let curvature = match loss {
        SgdLoss::Poisson => ym.max(T::one()),
        _ => T::one(),
    };
    let lr0 = T::lit(opts.learning_rate) / (wmax * mean_sq * curvature);

    let mut theta = vec![T::zero(); p + 1];
    if loss == SgdLoss::Poisson {
        theta[0] = ym.max(T::lit(1e-8)).ln();
    }
    let mut avg = theta.clone();
    let mut averaged = 0usize;
    let burn_in = opts.epochs / 2;
    let clip = T::lit(20.0);
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0usize;
    for epoch in 0..opts.epochs {
        let mut r = rng::substream(opts.seed, "sgd/epoch", epoch as u64);
        order.shuffle(&mut r);
        for &i in &order {
            let row = &s[i * p..(i + 1) * p];
            let eta = theta[0] + row.iter().zip(&theta[1..]).map(|(&a, &b)| a * b).sum::<T>();
            let g = match loss {
                SgdLoss::Squared => eta - ys[i],
                SgdLoss::Poisson => eta.max(-clip).min(clip).exp() - ys[i],
                SgdLoss::EpsilonInsensitive(_) => {
                    let r = eta - ys[i];
                    if r > eps {
                        T::one()
                    } else if r < -eps {
                        -T::one()
                    } else {
                        T::zero()
                    }
                }
            };
            let lr = lr0 / (T::one() + T::from_usize_lossy(t) / nf).sqrt();
            let step = lr * w[i] * g;
            theta[0] -= step;
            for (th, &x) in theta[1..].iter_mut().zip(row) {
                *th -= step * x + lr * l2 * *th;
            }
            t += 1;
            if epoch >= burn_in {
                averaged += 1;
                let k = T::one() / T::from_usize_lossy(averaged);
                for (a, &th) in avg.iter_mut().zip(&theta) {
                    *a += (th - *a) * k;
                }
            }
        }
    }
    let theta = if averaged > 0 { avg } else { theta };

    let mut coefs = vec![T::zero(); p];
    let mut intercept = theta[0];
    for j in 0..p {
        if sds[j] > T::zero() {
            coefs[j] = theta[j + 1] / sds[j];
            intercept -= coefs[j] * means[j];
        }
    }
    for c in coefs.iter_mut() {
        *c *= y_scale;
    }
    (intercept * y_scale + y_center, coefs)
}
