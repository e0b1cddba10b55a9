//! Synthetic cohorts with a hidden target treatment `Z`, an observed proxy
//! treatment `A` and known group-level effects.
//!
//! Observational cohorts follow the potential-outcome construction
//! `Y(z=1) = Y(z=0) + CATE(group)` with `A` drawn from a contingency table
//! given `Z`. Campaign cohorts (see [`simulate_campaign`]) route the effect of
//! `Z` through `A` instead, which is what an instrumental-variable analysis
//! of a randomized campaign assumes.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, GroundTruth};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{sigmoid, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    #[default]
    Clean,
    /// A hidden `U ~ N(0, 1)` enters the outcome (and by default the
    /// treatment logit) and is masked from the observed data.
    Confounded,
    /// `Z` discourages `A`.
    NegativeCompliance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplianceTable {
    pub p_a1_given_z1: f64,
    pub p_a1_given_z0: f64,
}

impl ComplianceTable {
    pub fn lift(&self) -> f64 {
        self.p_a1_given_z1 - self.p_a1_given_z0
    }

    pub fn default_for(mode: SimMode) -> Self {
        match mode {
            SimMode::Clean | SimMode::Confounded => ComplianceTable {
                p_a1_given_z1: 0.97,
                p_a1_given_z0: 0.03,
            },
            SimMode::NegativeCompliance => ComplianceTable {
                p_a1_given_z1: 0.3,
                p_a1_given_z0: 0.7,
            },
        }
    }
}

/// How units are placed into CATE groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupAssignment {
    /// Equal-size buckets of the sum of the listed covariates: the lowest
    /// bucket gets `cate_levels[0]`. Makes the CATE a function of `X`.
    CovariateIndex { covariates: Vec<usize> },
    /// Uniformly random equal-size groups, independent of `X`.
    Random,
}

impl Default for GroupAssignment {
    fn default() -> Self {
        GroupAssignment::CovariateIndex { covariates: vec![0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n: usize,
    pub k: usize,
    pub cate_levels: Vec<f64>,
    pub coef_values: Vec<i64>,
    pub coef_probs: Vec<f64>,
    pub noise_sd: f64,
    /// `None` selects the mode's default table.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compliance: Option<ComplianceTable>,
    pub z_assignment_prob: f64,
    /// Optional logit coefficients of `Z` on `X` (intercept from
    /// `z_assignment_prob`). Empty means `Z` is independent of `X`.
    pub z_logit_coefs: Vec<f64>,
    /// Confounded mode with empty `z_logit_coefs`: logit coefficient of `Z`
    /// on every covariate, so `X` confounds as well as the hidden `U`.
    /// 0 leaves `Z` independent of `X`.
    pub confounded_selection: f64,
    pub mode: SimMode,
    pub confounder_strength: f64,
    /// When false, `U` only enters the outcome.
    pub confounder_affects_treatment: bool,
    pub group_assignment: GroupAssignment,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 10_000,
            k: 50,
            cate_levels: vec![10.0, 20.0, 30.0, 40.0],
            coef_values: vec![0, 1, 2, 3, 4],
            coef_probs: vec![0.40, 0.30, 0.15, 0.10, 0.05],
            noise_sd: 1.0,
            compliance: None,
            z_assignment_prob: 0.5,
            z_logit_coefs: Vec::new(),
            confounded_selection: 0.1,
            mode: SimMode::Clean,
            confounder_strength: 2.0,
            confounder_affects_treatment: true,
            group_assignment: GroupAssignment::default(),
            seed: 0,
        }
    }
}

fn valid_prob(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl SimConfig {
    /// Logit coefficients of `Z` on `X` in effect for this configuration;
    /// empty when `Z` does not depend on `X`.
    pub fn effective_z_logit_coefs(&self) -> Vec<f64> {
        if self.z_logit_coefs.is_empty() && self.mode == SimMode::Confounded && self.confounded_selection != 0.0 {
            vec![self.confounded_selection; self.k]
        } else {
            self.z_logit_coefs.clone()
        }
    }

    pub fn table(&self) -> ComplianceTable {
        self.compliance
            .unwrap_or_else(|| ComplianceTable::default_for(self.mode))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::param("n must be positive"));
        }
        if self.k == 0 {
            return Err(Error::param("k must be positive"));
        }
        if self.cate_levels.is_empty() || self.cate_levels.len() > self.n {
            return Err(Error::param("cate_levels must be non-empty and at most n"));
        }
        if self.cate_levels.iter().any(|c| !c.is_finite()) {
            return Err(Error::param("cate_levels must be finite"));
        }
        if self.coef_values.is_empty() || self.coef_values.len() != self.coef_probs.len() {
            return Err(Error::param("coef_values and coef_probs must have equal, non-zero length"));
        }
        if self.coef_probs.iter().any(|&p| !valid_prob(p))
            || (self.coef_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::param("coef_probs must be probabilities summing to 1"));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::param("noise_sd must be non-negative"));
        }
        if !(self.z_assignment_prob > 0.0 && self.z_assignment_prob < 1.0) {
            return Err(Error::param("z_assignment_prob must lie in (0, 1)"));
        }
        if !self.z_logit_coefs.is_empty() && self.z_logit_coefs.len() != self.k {
            return Err(Error::param("z_logit_coefs must be empty or have length k"));
        }
        let t = self.table();
        if !valid_prob(t.p_a1_given_z1) || !valid_prob(t.p_a1_given_z0) {
            return Err(Error::param("compliance probabilities must lie in [0, 1]"));
        }
        match self.mode {
            SimMode::Clean | SimMode::Confounded if t.lift() <= 0.0 => {
                return Err(Error::param(
                    "clean and confounded modes need P(A=1|Z=1) > P(A=1|Z=0)",
                ))
            }
            SimMode::NegativeCompliance if t.lift() >= 0.0 => {
                return Err(Error::param(
                    "negative_compliance mode needs P(A=1|Z=1) < P(A=1|Z=0)",
                ))
            }
            _ => {}
        }
        if let GroupAssignment::CovariateIndex { covariates } = &self.group_assignment {
            if covariates.is_empty() || covariates.iter().any(|&c| c >= self.k) {
                return Err(Error::param("group index covariates must be valid column indices"));
            }
        }
        if !self.confounder_strength.is_finite() {
            return Err(Error::param("confounder_strength must be finite"));
        }
        if !self.confounded_selection.is_finite() {
            return Err(Error::param("confounded_selection must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput<T> {
    /// X, A, Y only.
    pub observed: Dataset<T>,
    /// Same rows with the full ground-truth record.
    pub oracle: Dataset<T>,
}

/// Outcome-model coefficients, drawn once per seed so cohorts and campaigns
/// generated from the same config share one population.
pub fn outcome_coefficients(cfg: &SimConfig) -> Vec<f64> {
    let mut r = rng::stream(cfg.seed, "structure/beta");
    (0..cfg.k)
        .map(|_| {
            let u: f64 = r.random();
            let mut acc = 0.0;
            for (v, p) in cfg.coef_values.iter().zip(&cfg.coef_probs) {
                acc += p;
                if u < acc {
                    return *v as f64;
                }
            }
            *cfg.coef_values.last().unwrap() as f64
        })
        .collect()
}

struct UnitDraw {
    x: Vec<f64>,
    z: u8,
    a: u8,
    u: f64,
    y0: f64,
}

#[derive(Clone, Copy)]
enum Regime {
    Observational,
    Campaign { exposure: f64 },
}

fn draw_units(cfg: &SimConfig, beta: &[f64], regime: Regime) -> Vec<UnitDraw> {
    let table = cfg.table();
    let tag = match regime {
        Regime::Observational => "units/cohort",
        Regime::Campaign { .. } => "units/campaign",
    };
    let confounded = cfg.mode == SimMode::Confounded;
    let z_coefs = cfg.effective_z_logit_coefs();
    (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::substream(cfg.seed, tag, i as u64);
            let x: Vec<f64> = (0..cfg.k).map(|_| StandardNormal.sample(&mut r)).collect();
            let u: f64 = StandardNormal.sample(&mut r);
            let eps: f64 = StandardNormal.sample(&mut r);
            let pz = match regime {
                Regime::Campaign { exposure } => exposure,
                Regime::Observational if z_coefs.is_empty() => cfg.z_assignment_prob,
                Regime::Observational => {
                    let base = (cfg.z_assignment_prob / (1.0 - cfg.z_assignment_prob)).ln();
                    let eta = base
                        + x.iter()
                            .zip(&z_coefs)
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    sigmoid(eta)
                }
            };
            let z = u8::from(r.random::<f64>() < pz);
            let mut pa = if z == 1 {
                table.p_a1_given_z1
            } else {
                table.p_a1_given_z0
            };
            if confounded && cfg.confounder_affects_treatment {
                let p = pa.clamp(1e-12, 1.0 - 1e-12);
                pa = sigmoid((p / (1.0 - p)).ln() + cfg.confounder_strength * u);
            }
            let a = u8::from(r.random::<f64>() < pa);
            let mut y0 = x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + cfg.noise_sd * eps;
            if confounded {
                y0 += cfg.confounder_strength * u;
            }
            UnitDraw { x, z, a, u, y0 }
        })
        .collect()
}

/// Group index (0-based) per unit.
fn assign_groups(cfg: &SimConfig, units: &[UnitDraw], regime_tag: &str) -> Vec<usize> {
    let n = units.len();
    let levels = cfg.cate_levels.len();
    let order: Vec<usize> = match &cfg.group_assignment {
        GroupAssignment::CovariateIndex { covariates } => {
            let score: Vec<f64> = units
                .iter()
                .map(|u| covariates.iter().map(|&c| u.x[c]).sum())
                .collect();
            let mut o: Vec<usize> = (0..n).collect();
            o.sort_by(|&a, &b| score[a].total_cmp(&score[b]).then(a.cmp(&b)));
            o
        }
        GroupAssignment::Random => {
            let mut o: Vec<usize> = (0..n).collect();
            o.shuffle(&mut rng::stream(cfg.seed, &format!("groups/{regime_tag}")));
            o
        }
    };
    let sizes = bucket_sizes(n, levels);
    let mut group = vec![0usize; n];
    let mut pos = 0;
    for (g, &s) in sizes.iter().enumerate() {
        for &i in &order[pos..pos + s] {
            group[i] = g;
        }
        pos += s;
    }
    group
}

/// Sizes of `levels` buckets over `n` units; lower buckets absorb the
/// remainder.
pub(crate) fn bucket_sizes(n: usize, levels: usize) -> Vec<usize> {
    let base = n / levels;
    let rem = n % levels;
    (0..levels).map(|l| base + usize::from(l < rem)).collect()
}

fn assemble<T: Scalar>(
    cfg: &SimConfig,
    units: Vec<UnitDraw>,
    groups: &[usize],
    regime: Regime,
) -> Result<SimOutput<T>> {
    let names: Vec<String> = (0..cfg.k).map(|j| format!("x{j}")).collect();
    let mut cov = Vec::with_capacity(cfg.n * cfg.k);
    let mut treatment = Vec::with_capacity(cfg.n);
    let mut outcome = Vec::with_capacity(cfg.n);
    let mut gt = Vec::with_capacity(cfg.n);
    let confounded = cfg.mode == SimMode::Confounded;
    for (u, &g) in units.into_iter().zip(groups) {
        let cate = cfg.cate_levels[g];
        let y = match regime {
            Regime::Observational => u.y0 + cate * f64::from(u.z),
            Regime::Campaign { .. } => u.y0 + cate * f64::from(u.a),
        };
        cov.extend(u.x.iter().map(|&v| T::lit(v)));
        treatment.push(u.a);
        outcome.push(T::lit(y));
        let y0 = T::lit(u.y0);
        let true_cate = T::lit(cate);
        gt.push(GroundTruth {
            true_group: g as u32 + 1,
            true_cate,
            y0,
            y1: y0 + true_cate,
            z: u.z,
            u: confounded.then(|| T::lit(u.u)),
        });
    }
    let observed = Dataset::new(names, cov, treatment, outcome)?;
    let oracle = observed.clone().with_ground_truth(gt)?;
    Ok(SimOutput { observed, oracle })
}

/// Generates an observational cohort. Deterministic given `cfg.seed`.
pub fn simulate_cohort<T: Scalar>(cfg: &SimConfig) -> Result<SimOutput<T>> {
    cfg.validate()?;
    let beta = outcome_coefficients(cfg);
    let units = draw_units(cfg, &beta, Regime::Observational);
    let groups = assign_groups(cfg, &units, "cohort");
    assemble(cfg, units, &groups, Regime::Observational)
}

/// Generates a randomized campaign from the same population as
/// [`simulate_cohort`] with `Z ~ Bernoulli(exposure)` independent of `X` and
/// the outcome driven by `A`: `Y = Y0 + CATE(group) * A`. The oracle's
/// `true_cate`, `y0` and `y1` refer to the effect of `A`.
pub fn simulate_campaign_cohort<T: Scalar>(cfg: &SimConfig, exposure: f64) -> Result<SimOutput<T>> {
    cfg.validate()?;
    if !(exposure > 0.0 && exposure < 1.0) {
        return Err(Error::param(format!("exposure {exposure} must lie in (0, 1)")));
    }
    let beta = outcome_coefficients(cfg);
    let regime = Regime::Campaign { exposure };
    let units = draw_units(cfg, &beta, regime);
    let groups = assign_groups(cfg, &units, "campaign");
    assemble(cfg, units, &groups, regime)
}

/// Level per unit from the oracle: the group with the smallest CATE gets 1,
/// equal CATEs share a level.
pub fn ground_truth_levels<T: Scalar>(oracle: &Dataset<T>) -> Result<Vec<usize>> {
    let gt = oracle.ground_truth().ok_or(Error::MissingGroundTruth)?;
    let mut distinct: Vec<T> = gt.iter().map(|g| g.true_cate).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite CATE"));
    distinct.dedup();
    Ok(gt
        .iter()
        .map(|g| {
            distinct
                .iter()
                .position(|&c| c == g.true_cate)
                .expect("value present")
                + 1
        })
        .collect())
}

pub fn ground_truth_rank<T: Scalar>(out: &SimOutput<T>) -> Result<Vec<usize>> {
    ground_truth_levels(&out.oracle)
}
