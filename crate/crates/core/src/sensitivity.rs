//! Refutation tests: placebo treatment, synthetic unobserved confounders and
//! ranking-stability overlap.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze, Analysis, AnalysisConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::ranking::rank_rmse;
use crate::rng;
use crate::scalar::Scalar;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorMode {
    /// `u* = (u0 + N_a sum y) / (N_a + 1)`.
    ScaledSum,
    /// `u* = (u0 + sum y) / (N_a + 1)`, the Gaussian conjugate update with
    /// equal prior and likelihood variance.
    #[default]
    ConjugateCorrected,
}

/// Prior `U ~ N(alpha + a, epsilon)` and likelihood `y_i ~ N(u, epsilon)`
/// per treatment arm. `epsilon` is a variance; larger means weaker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfounderConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub posterior_mode: PosteriorMode,
    pub seed: u64,
}

impl Default for ConfounderConfig {
    fn default() -> Self {
        ConfounderConfig {
            alpha: 1e5,
            epsilon: 40.0 * 1e5,
            posterior_mode: PosteriorMode::default(),
            seed: 0,
        }
    }
}

impl ConfounderConfig {
    pub fn new(alpha: f64, epsilon: f64) -> Self {
        ConfounderConfig {
            alpha,
            epsilon,
            ..Default::default()
        }
    }

    /// The three model-selection configurations: `(1e5, 40 alpha)`,
    /// `(1e5, 100 alpha)`, `(1e3, 1700 alpha)`.
    pub fn defaults() -> Vec<Self> {
        vec![
            ConfounderConfig::new(1e5, 40.0 * 1e5),
            ConfounderConfig::new(1e5, 100.0 * 1e5),
            ConfounderConfig::new(1e3, 1700.0 * 1e3),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::param("confounder epsilon must be positive"));
        }
        if !self.alpha.is_finite() {
            return Err(Error::param("confounder alpha must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmPosterior {
    pub arm: u8,
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
}

/// Posterior `N(u*, eps*)` for one arm with `count` outcomes summing to
/// `sum_y`.
pub fn arm_posterior(cfg: &ConfounderConfig, arm: u8, count: usize, sum_y: f64) -> ArmPosterior {
    let u0 = cfg.alpha + arm as f64;
    let na = count as f64;
    let mean = match cfg.posterior_mode {
        PosteriorMode::ConjugateCorrected => (u0 + sum_y) / (na + 1.0),
        PosteriorMode::ScaledSum => (u0 + na * sum_y) / (na + 1.0),
    };
    ArmPosterior {
        arm,
        count,
        mean,
        variance: cfg.epsilon / (na + 1.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Confounder<T> {
    pub u: Vec<T>,
    pub corr_u_a: f64,
    pub corr_u_y: f64,
    pub posteriors: [ArmPosterior; 2],
}

/// Samples `U_i` from its arm's posterior and reports point-biserial
/// `corr(U, A)` and Pearson `corr(U, Y)`.
pub fn generate_confounder<T: Scalar>(d: &Dataset<T>, cfg: &ConfounderConfig) -> Result<Confounder<T>> {
    cfg.validate()?;
    d.require_both_arms()?;
    let mut count = [0usize; 2];
    let mut sum = [0f64; 2];
    for (&a, &y) in d.treatment().iter().zip(d.outcome()) {
        count[a as usize] += 1;
        sum[a as usize] += y.as_f64();
    }
    let posteriors = [0u8, 1].map(|a| arm_posterior(cfg, a, count[a as usize], sum[a as usize]));
    let dists = posteriors.map(|p| Normal::new(p.mean, p.variance.sqrt()).expect("finite posterior"));
    let mut r = rng::stream(cfg.seed, "confounder/u");
    let u64s: Vec<f64> = d.treatment().iter().map(|&a| dists[a as usize].sample(&mut r)).collect();
    let a: Vec<f64> = d.treatment().iter().map(|&a| a as f64).collect();
    let y: Vec<f64> = d.outcome().iter().map(|v| v.as_f64()).collect();
    Ok(Confounder {
        corr_u_a: stats::pearson(&u64s, &a),
        corr_u_y: stats::pearson(&u64s, &y),
        u: u64s.iter().map(|&v| T::lit(v)).collect(),
        posteriors,
    })
}

/// Share of units strictly above the baseline median that are also strictly
/// above the other run's median. 1 when the baseline has no such unit and
/// neither does the other run.
pub fn overlap_fraction<T: Scalar>(baseline: &[T], other: &[T]) -> Result<f64> {
    if baseline.len() != other.len() {
        return Err(Error::LengthMismatch {
            expected: baseline.len(),
            found: other.len(),
        });
    }
    if baseline.is_empty() {
        return Err(Error::NoData);
    }
    let mb = stats::median(baseline);
    let mo = stats::median(other);
    let mut top = 0usize;
    let mut kept = 0usize;
    let mut other_top = 0usize;
    for (&b, &o) in baseline.iter().zip(other) {
        if o > mo {
            other_top += 1;
        }
        if b > mb {
            top += 1;
            if o > mo {
                kept += 1;
            }
        }
    }
    Ok(if top == 0 {
        if other_top == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        kept as f64 / top as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlaceboOptions {
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for PlaceboOptions {
    fn default() -> Self {
        PlaceboOptions {
            bootstrap: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboRecord {
    /// Mean ITE under the fake treatment.
    pub ate_estimate: f64,
    /// Standard deviation of the bootstrap ATEs.
    pub ate_se: f64,
    /// Level RMSE of the placebo ranking against the reference levels.
    pub rank_rmse_vs_original: f64,
    /// Filled by callers that hold ground truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_rmse_vs_truth: Option<f64>,
    pub bootstrap_used: usize,
    #[serde(skip)]
    pub levels: Vec<usize>,
}

/// Replaces the treatment with Bernoulli(0.5) draws and reruns `cfg`.
///
/// The standard error comes from resampling units with replacement and
/// rerunning the whole pipeline on each resample. Resamples where a stage
/// fails (for example an arm vanishing) are dropped and counted out of
/// `bootstrap_used`.
pub fn placebo_test<T: Scalar>(
    d: &Dataset<T>,
    cfg: &AnalysisConfig,
    reference_levels: &[usize],
    opts: &PlaceboOptions,
) -> Result<PlaceboRecord> {
    let mut r = rng::stream(opts.seed, "placebo/treatment");
    let fake: Vec<u8> = (0..d.n()).map(|_| r.random::<bool>() as u8).collect();
    let placebo = d.with_treatment(fake)?;
    let run = analyze(&placebo, cfg)?;
    let ate = run.ate().as_f64();
    let levels = run.levels();
    let rmse = rank_rmse(&levels, reference_levels)?;

    let n = d.n();
    let ates: Vec<f64> = (0..opts.bootstrap)
        .into_par_iter()
        .filter_map(|b| {
            let mut r = rng::substream(opts.seed, "placebo/bootstrap", b as u64);
            let idx: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
            let sample = placebo.subset(&idx);
            analyze(&sample, cfg).ok().map(|a| a.ate().as_f64())
        })
        .collect();
    if opts.bootstrap > 0 && ates.len() < 2 {
        return Err(Error::InvalidData("placebo bootstrap: fewer than 2 resamples succeeded".into()));
    }
    let se = if ates.len() >= 2 { stats::variance(&ates).sqrt() } else { f64::NAN };
    Ok(PlaceboRecord {
        ate_estimate: ate,
        ate_se: se,
        rank_rmse_vs_original: rmse,
        rank_rmse_vs_truth: None,
        bootstrap_used: ates.len(),
        levels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfoundingRecord {
    pub config: usize,
    pub run: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub corr_u_a: f64,
    pub corr_u_y: f64,
    pub overlap_fraction: f64,
    pub rank_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfoundingSummary {
    pub config: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub runs: usize,
    pub overlap_mean: f64,
    pub overlap_sd: f64,
    pub rank_rmse_mean: f64,
    pub rank_rmse_sd: f64,
    pub corr_u_a_mean: f64,
    pub corr_u_y_mean: f64,
}

/// Seed of run `run` of configuration `config`. Independent of the model,
/// so every compared model sees the same confounder draws.
pub fn confounder_seed(master: u64, config: usize, run: usize) -> u64 {
    rng::derive_indexed(master, "sensitivity/confounder", &[config as u64, run as u64])
}

/// For each configuration and run: draw `U`, append it as a covariate, rerun
/// `cfg`, and compare with `baseline`.
pub fn confounding_overlap<T: Scalar>(
    d: &Dataset<T>,
    cfg: &AnalysisConfig,
    baseline: &Analysis<T>,
    configs: &[ConfounderConfig],
    runs: usize,
    master_seed: u64,
) -> Result<Vec<ConfoundingRecord>> {
    for c in configs {
        c.validate()?;
    }
    let base_ite = baseline.ite.ites();
    let base_levels = baseline.levels();
    let jobs: Vec<(usize, usize)> = (0..configs.len()).flat_map(|c| (0..runs).map(move |r| (c, r))).collect();
    jobs.into_par_iter()
        .map(|(c, run)| {
            let seed = confounder_seed(master_seed, c, run);
            let conf = ConfounderConfig { seed, ..configs[c] };
            let u = generate_confounder(d, &conf)?;
            let with_u = d.with_covariate("synthetic_confounder", &u.u)?;
            let rerun = analyze(&with_u, cfg)?;
            Ok(ConfoundingRecord {
                config: c,
                run,
                alpha: conf.alpha,
                epsilon: conf.epsilon,
                seed,
                corr_u_a: u.corr_u_a,
                corr_u_y: u.corr_u_y,
                overlap_fraction: overlap_fraction(&base_ite, &rerun.ite.ites())?,
                rank_rmse: rank_rmse(&rerun.levels(), &base_levels)?,
            })
        })
        .collect()
}

/// Mean and spread per configuration, in configuration order.
pub fn summarize(records: &[ConfoundingRecord]) -> Vec<ConfoundingSummary> {
    let mut configs: Vec<usize> = records.iter().map(|r| r.config).collect();
    configs.sort_unstable();
    configs.dedup();
    configs
        .into_iter()
        .map(|c| {
            let rs: Vec<&ConfoundingRecord> = records.iter().filter(|r| r.config == c).collect();
            let col = |f: fn(&ConfoundingRecord) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let sd = |v: &[f64]| if v.len() > 1 { stats::variance(v).sqrt() } else { 0.0 };
            let ov = col(|r| r.overlap_fraction);
            let rm = col(|r| r.rank_rmse);
            ConfoundingSummary {
                config: c,
                alpha: rs[0].alpha,
                epsilon: rs[0].epsilon,
                runs: rs.len(),
                overlap_mean: stats::mean(&ov),
                overlap_sd: sd(&ov),
                rank_rmse_mean: stats::mean(&rm),
                rank_rmse_sd: sd(&rm),
                corr_u_a_mean: stats::mean(&col(|r| r.corr_u_a)),
                corr_u_y_mean: stats::mean(&col(|r| r.corr_u_y)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placebo: Option<PlaceboRecord>,
    pub confounding: Vec<ConfoundingRecord>,
    pub summaries: Vec<ConfoundingSummary>,
}
