//! One model's pass over a dataset: propensity fit, trimming, stabilized
//! weights, weighted outcome fit, ITEs and ranking.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::Result;
use crate::outcome::{compute_ite, fit_outcome_model, IteTable, ModelSpec, OutcomeModel};
use crate::propensity::{fit_propensity, stabilized_weights, trim_extremes, PropensityFit, PropensityOptions};
use crate::ranking::{rank_and_bucket, RankedCohort};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub model: ModelSpec,
    /// IPTW on; off fits with unit weights on the untrimmed data.
    pub causal: bool,
    pub propensity: PropensityOptions,
    pub trim_lo: f64,
    pub trim_hi: f64,
    pub levels: usize,
    /// Seed for stochastic fitters when the model spec sets none.
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            model: ModelSpec::new(crate::outcome::Family::LinearWls),
            causal: true,
            propensity: PropensityOptions::default(),
            trim_lo: 0.01,
            trim_hi: 0.99,
            levels: 4,
            seed: 0,
        }
    }
}

impl AnalysisConfig {
    pub fn new(model: ModelSpec, causal: bool) -> Self {
        AnalysisConfig {
            model,
            causal,
            ..Default::default()
        }
    }

    fn resolved_model(&self) -> ModelSpec {
        let mut m = self.model.clone();
        m.hyper.seed.get_or_insert(self.seed);
        m
    }
}

#[derive(Debug, Clone)]
pub struct Analysis<T> {
    /// Propensity fit restricted to the retained units; `None` when
    /// non-causal.
    pub propensity: Option<PropensityFit<T>>,
    /// Input positions the outcome model was trained on.
    pub retained: Vec<usize>,
    /// Training weights aligned with `retained`.
    pub weights: Vec<T>,
    pub model: OutcomeModel<T>,
    /// ITEs for every input unit, trimmed or not.
    pub ite: IteTable<T>,
    pub ranked: RankedCohort<T>,
}

impl<T: Scalar> Analysis<T> {
    pub fn levels(&self) -> Vec<usize> {
        self.ranked.level_sequence()
    }

    pub fn ate(&self) -> T {
        self.ite.mean_ite()
    }
}

/// Runs the pipeline on `d`. Ground-truth columns, if any, are not read.
pub fn analyze<T: Scalar>(d: &Dataset<T>, cfg: &AnalysisConfig) -> Result<Analysis<T>> {
    d.require_both_arms()?;
    let spec = cfg.resolved_model();
    let (propensity, retained, train, weights) = if cfg.causal {
        let fit = fit_propensity(d, &cfg.propensity)?;
        let trimmed = trim_extremes(&fit, d, cfg.trim_lo, cfg.trim_hi)?;
        let w = stabilized_weights(&trimmed.fit, &trimmed.dataset)?;
        (Some(trimmed.fit), trimmed.retained, trimmed.dataset, w)
    } else {
        (None, (0..d.n()).collect(), d.clone(), vec![T::one(); d.n()])
    };
    let model = fit_outcome_model(&train, Some(&weights), &spec)?;
    let ite = compute_ite(&model, d)?;
    let ranked = rank_and_bucket(&ite, cfg.levels)?;
    Ok(Analysis {
        propensity,
        retained,
        weights,
        model,
        ite,
        ranked,
    })
}
