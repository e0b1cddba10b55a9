//! Instrumental-variable check of a ranking on a randomized campaign: split
//! units by predicted ITE and compare Wald estimates of the high and low
//! groups.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::ranking::{rank_values, select_top_percentile};
use crate::scalar::Scalar;
use crate::simulate::{simulate_campaign_cohort, SimConfig};

/// Fraction of the cohort randomly exposed in the reference campaign.
pub const DEFAULT_EXPOSURE: f64 = 0.661;

/// Units per instrument arm below which a group is not estimated.
pub const MIN_ARM_SIZE: usize = 50;

/// First stages smaller than this in absolute value are rejected.
pub const WEAK_INSTRUMENT: f64 = 0.01;

pub fn default_k_grid() -> Vec<f64> {
    (1..=9).map(|i| 10.0 * i as f64).collect()
}

#[derive(Debug, Clone)]
pub struct IvExperiment<T> {
    /// Covariates, proxy treatment and outcome.
    pub data: Dataset<T>,
    /// Randomized assignment.
    pub z: Vec<u8>,
    pub predicted_ite: Vec<T>,
    /// Full simulated record, when the campaign is simulated.
    pub oracle: Option<Dataset<T>>,
}

impl<T: Scalar> IvExperiment<T> {
    pub fn new(data: Dataset<T>, z: Vec<u8>, predicted_ite: Vec<T>) -> Result<Self> {
        let n = data.n();
        for len in [z.len(), predicted_ite.len()] {
            if len != n {
                return Err(Error::LengthMismatch { expected: n, found: len });
            }
        }
        if let Some(row) = z.iter().position(|&v| v > 1) {
            return Err(Error::InvalidData(format!("instrument value {} at row {}", z[row], row + 1)));
        }
        let exposed = z.iter().filter(|&&v| v == 1).count();
        if exposed == 0 || exposed == n {
            return Err(Error::SingleArmInstrument);
        }
        Ok(IvExperiment {
            data,
            z,
            predicted_ite,
            oracle: None,
        })
    }

    pub fn with_predictions(mut self, predicted_ite: Vec<T>) -> Result<Self> {
        if predicted_ite.len() != self.data.n() {
            return Err(Error::LengthMismatch {
                expected: self.data.n(),
                found: predicted_ite.len(),
            });
        }
        self.predicted_ite = predicted_ite;
        Ok(self)
    }

    /// True per-unit CATE from the oracle.
    pub fn true_cate(&self) -> Result<Vec<T>> {
        let gt = self
            .oracle
            .as_ref()
            .and_then(|o| o.ground_truth())
            .ok_or(Error::MissingGroundTruth)?;
        Ok(gt.iter().map(|g| g.true_cate).collect())
    }

    pub fn exposed_fraction(&self) -> f64 {
        self.z.iter().filter(|&&v| v == 1).count() as f64 / self.z.len() as f64
    }

    /// Mean true CATE over `group`.
    pub fn group_true_cate(&self, group: &[usize]) -> Result<f64> {
        let c = self.true_cate()?;
        Ok(group.iter().map(|&i| c[i].as_f64()).sum::<f64>() / group.len().max(1) as f64)
    }
}

/// Fresh cohort with `z ~ Bernoulli(exposure)`. Predictions start at zero;
/// set them with [`IvExperiment::with_predictions`].
pub fn simulate_campaign<T: Scalar>(cfg: &SimConfig, exposure: f64) -> Result<IvExperiment<T>> {
    let out = simulate_campaign_cohort::<T>(cfg, exposure)?;
    let z: Vec<u8> = out
        .oracle
        .ground_truth()
        .ok_or(Error::MissingGroundTruth)?
        .iter()
        .map(|g| g.z)
        .collect();
    let n = out.observed.n();
    let mut e = IvExperiment::new(out.observed, z, vec![T::zero(); n])?;
    e.oracle = Some(out.oracle);
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldEstimate {
    pub cate: f64,
    pub se: f64,
    /// `E[A|Z=1] - E[A|Z=0]`.
    pub first_stage: f64,
    /// `E[Y|Z=1] - E[Y|Z=0]`.
    pub itt: f64,
    pub n: usize,
    pub n_exposed: usize,
    pub n_unexposed: usize,
}

#[derive(Default)]
struct ArmMoments {
    n: usize,
    y: f64,
    a: f64,
    yy: f64,
    aa: f64,
    ya: f64,
}

impl ArmMoments {
    fn push(&mut self, y: f64, a: f64) {
        self.n += 1;
        self.y += y;
        self.a += a;
        self.yy += y * y;
        self.aa += a * a;
        self.ya += y * a;
    }

    /// Means and the sampling (co)variances of the means.
    fn summary(&self) -> (f64, f64, f64, f64, f64) {
        let n = self.n as f64;
        let my = self.y / n;
        let ma = self.a / n;
        let d = (n - 1.0) * n;
        let vy = (self.yy - n * my * my) / d;
        let va = (self.aa - n * ma * ma) / d;
        let cya = (self.ya - n * my * ma) / d;
        (my, ma, vy.max(0.0), va.max(0.0), cya)
    }
}

/// Wald ratio `ITT / first stage` within `group`, with a delta-method
/// standard error from the four arm means and their within-arm covariances.
/// With one binary instrument and no covariates this is the 2SLS estimate.
pub fn wald_2sls<T: Scalar>(e: &IvExperiment<T>, group: &[usize]) -> Result<WaldEstimate> {
    let mut arms = [ArmMoments::default(), ArmMoments::default()];
    for &i in group {
        if i >= e.data.n() {
            return Err(Error::param(format!("group index {i} out of range")));
        }
        arms[e.z[i] as usize].push(e.data.outcome()[i].as_f64(), e.data.treatment()[i] as f64);
    }
    if arms[0].n < 2 || arms[1].n < 2 {
        return Err(Error::SingleArmInstrument);
    }
    let (y0, a0, vy0, va0, c0) = arms[0].summary();
    let (y1, a1, vy1, va1, c1) = arms[1].summary();
    let fs = a1 - a0;
    if !(fs.abs() >= WEAK_INSTRUMENT) {
        return Err(Error::WeakInstrument(fs));
    }
    let itt = y1 - y0;
    let cate = itt / fs;
    let v_itt = vy1 + vy0;
    let v_fs = va1 + va0;
    let cov = c1 + c0;
    let var = (v_itt - 2.0 * cate * cov + cate * cate * v_fs) / (fs * fs);
    Ok(WaldEstimate {
        cate,
        se: var.max(0.0).sqrt(),
        first_stage: fs,
        itt,
        n: group.len(),
        n_exposed: arms[1].n,
        n_unexposed: arms[0].n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    High,
    Low,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::High => "high",
            Group::Low => "low",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvRecord {
    pub k: f64,
    pub group: Group,
    pub n_group: usize,
    pub first_stage: f64,
    pub cate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub k: f64,
    pub cate_high: f64,
    pub cate_low: f64,
    /// `cate_high > cate_low`.
    pub separated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedK {
    pub k: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvResult {
    pub records: Vec<IvRecord>,
    pub separation: Vec<Separation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<SkippedK>,
}

impl IvResult {
    pub fn all_separated(&self) -> bool {
        !self.separation.is_empty() && self.separation.iter().all(|s| s.separated)
    }
}

/// High group = top `k` percent by predicted ITE, low group = the rest.
pub fn split_groups<T: Scalar>(e: &IvExperiment<T>, k: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    let ranked = rank_values(&e.predicted_ite, 1)?;
    let high = select_top_percentile(&ranked, k)?;
    let mut in_high = vec![false; e.data.n()];
    for &i in &high {
        in_high[i] = true;
    }
    let low = (0..e.data.n()).filter(|&i| !in_high[i]).collect();
    Ok((high, low))
}

/// Wald estimates for the high and low groups at every `k`. A `k` where
/// either group has fewer than [`MIN_ARM_SIZE`] units in an instrument arm,
/// or whose estimate fails, is skipped with a note.
pub fn validate_ranking_splits<T: Scalar>(e: &IvExperiment<T>, k_grid: &[f64]) -> Result<IvResult> {
    let per_k: Vec<Result<std::result::Result<(Vec<IvRecord>, Separation), SkippedK>>> = k_grid
        .par_iter()
        .map(|&k| {
            let (high, low) = split_groups(e, k)?;
            let skip = |reason: String| Ok(Err(SkippedK { k, reason }));
            for (g, members) in [(Group::High, &high), (Group::Low, &low)] {
                let exposed = members.iter().filter(|&&i| e.z[i] == 1).count();
                let small = exposed.min(members.len() - exposed);
                if small < MIN_ARM_SIZE {
                    return skip(format!(
                        "{} group has {small} units in an instrument arm (minimum {MIN_ARM_SIZE})",
                        g.name()
                    ));
                }
            }
            let (h, l) = match (wald_2sls(e, &high), wald_2sls(e, &low)) {
                (Ok(h), Ok(l)) => (h, l),
                (Err(err), _) | (_, Err(err)) => return skip(err.to_string()),
            };
            let rec = |g, w: &WaldEstimate| IvRecord {
                k,
                group: g,
                n_group: w.n,
                first_stage: w.first_stage,
                cate: w.cate,
                se: w.se,
            };
            Ok(Ok((
                vec![rec(Group::High, &h), rec(Group::Low, &l)],
                Separation {
                    k,
                    cate_high: h.cate,
                    cate_low: l.cate,
                    separated: h.cate > l.cate,
                },
            )))
        })
        .collect();
    let mut out = IvResult {
        records: Vec::new(),
        separation: Vec::new(),
        skipped: Vec::new(),
    };
    for r in per_k {
        match r? {
            Ok((recs, sep)) => {
                out.records.extend(recs);
                out.separation.push(sep);
            }
            Err(s) => out.skipped.push(s),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn manual(z: Vec<u8>, a: Vec<u8>, y: Vec<f64>) -> IvExperiment<f64> {
        let n = z.len();
        let d = Dataset::new(vec!["x".into()], vec![0.0; n], a, y).unwrap();
        IvExperiment::new(d, z, vec![0.0; n]).unwrap()
    }

    #[test]
    fn perfect_compliance_is_difference_in_means() {
        let z = vec![1, 1, 1, 0, 0, 0];
        let y = vec![5.0, 7.0, 6.0, 1.0, 2.0, 3.0];
        let e = manual(z.clone(), z, y);
        let w = wald_2sls(&e, &[0, 1, 2, 3, 4, 5]).unwrap();
        assert_eq!(w.first_stage, 1.0);
        assert_eq!(w.cate, 4.0);
        assert_eq!(w.cate, w.itt);
        // Var = 1/3 + 1/3 for the two arm means
        assert!((w.se - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn independent_treatment_is_a_weak_instrument() {
        let z = vec![1, 1, 0, 0, 1, 0];
        let a = vec![1, 0, 1, 0, 1, 1];
        let e = manual(z, a, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        // first stage 2/3 - 2/3 = 0
        assert!(matches!(wald_2sls(&e, &[0, 1, 2, 3, 4, 5]), Err(Error::WeakInstrument(_))));
    }

    #[test]
    fn single_arm_instrument_is_rejected() {
        let d = Dataset::new(vec!["x".into()], vec![0.0; 3], vec![0, 1, 0], vec![0.0; 3]).unwrap();
        let err = IvExperiment::new(d, vec![1, 1, 1], vec![0.0; 3]).unwrap_err();
        assert_eq!(err.to_string(), "single-arm instrument");
    }

    #[test]
    fn exposure_must_be_inside_unit_interval() {
        let cfg = SimConfig {
            n: 100,
            k: 2,
            ..Default::default()
        };
        assert!(simulate_campaign::<f64>(&cfg, 1.0).is_err());
        assert!(simulate_campaign::<f64>(&cfg, 0.0).is_err());
        // a near-one exposure on a tiny cohort draws every unit into the
        // exposed arm
        let tiny = SimConfig {
            n: 4,
            k: 2,
            ..Default::default()
        };
        let err = simulate_campaign::<f64>(&tiny, 0.999_999).unwrap_err();
        assert_eq!(err.to_string(), "single-arm instrument");
    }

    #[test]
    fn intent_to_treat_is_compliance_times_effect() {
        // effect 30, compliance 0.75 - 0.25 = 0.5
        let n = 40000;
        let mut r = crate::rng::stream(8, "itt");
        let mut z = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let zi = r.random::<bool>() as u8;
            let p = if zi == 1 { 0.75 } else { 0.25 };
            let ai = (r.random::<f64>() < p) as u8;
            let noise: f64 = r.random::<f64>() * 10.0 - 5.0;
            z.push(zi);
            a.push(ai);
            y.push(3.0 + 30.0 * ai as f64 + noise);
        }
        let e = manual(z, a, y);
        let all: Vec<usize> = (0..n).collect();
        let w = wald_2sls(&e, &all).unwrap();
        assert!((w.first_stage - 0.5).abs() < 0.02);
        assert!((w.itt - 15.0).abs() < 1.0);
        assert!((w.cate - 30.0).abs() < 3.0 * w.se, "{} +- {}", w.cate, w.se);
    }

    #[test]
    fn scaling_outcomes_scales_estimates() {
        let sim = simulate_campaign::<f64>(
            &SimConfig {
                n: 4000,
                k: 3,
                seed: 5,
                ..Default::default()
            },
            DEFAULT_EXPOSURE,
        )
        .unwrap();
        let truth = sim.true_cate().unwrap();
        let e = sim.with_predictions(truth).unwrap();
        let scaled_y: Vec<f64> = e.data.outcome().iter().map(|y| 2.5 * y).collect();
        let scaled = IvExperiment {
            data: e.data.with_outcome(scaled_y).unwrap(),
            ..e.clone()
        };
        let a = validate_ranking_splits(&e, &default_k_grid()).unwrap();
        let b = validate_ranking_splits(&scaled, &default_k_grid()).unwrap();
        for (p, q) in a.records.iter().zip(&b.records) {
            assert!((q.cate - 2.5 * p.cate).abs() <= 1e-9 * p.cate.abs().max(1.0));
            assert!((q.se - 2.5 * p.se).abs() <= 1e-9 * p.se.max(1.0));
        }
        let flags = |r: &IvResult| r.separation.iter().map(|s| s.separated).collect::<Vec<_>>();
        assert_eq!(flags(&a), flags(&b));
    }

    #[test]
    fn default_grid_gives_nine_pairs_and_partitions() {
        let e = simulate_campaign::<f64>(
            &SimConfig {
                n: 3000,
                k: 3,
                seed: 9,
                ..Default::default()
            },
            DEFAULT_EXPOSURE,
        )
        .unwrap();
        let truth = e.true_cate().unwrap();
        let e = e.with_predictions(truth).unwrap();
        let r = validate_ranking_splits(&e, &default_k_grid()).unwrap();
        assert_eq!(r.records.len(), 18);
        assert_eq!(r.separation.len(), 9);
        for k in default_k_grid() {
            let (h, l) = split_groups(&e, k).unwrap();
            assert_eq!(h.len() + l.len(), 3000);
            assert!(h.iter().all(|i| l.binary_search(i).is_err()));
        }
        // mean true CATE of the top-k set does not increase with k
        let means: Vec<f64> = default_k_grid()
            .iter()
            .map(|&k| e.group_true_cate(&split_groups(&e, k).unwrap().0).unwrap())
            .collect();
        assert!(means.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn small_groups_are_skipped() {
        let e = simulate_campaign::<f64>(
            &SimConfig {
                n: 400,
                k: 2,
                seed: 2,
                ..Default::default()
            },
            DEFAULT_EXPOSURE,
        )
        .unwrap();
        let r = validate_ranking_splits(&e, &[10.0, 50.0]).unwrap();
        // 40 units at k = 10 cannot hold 50 per arm
        assert!(r.skipped.iter().any(|s| s.k == 10.0));
    }
}
