//! End-to-end pipeline: data, then per model fit, rank, balance, placebo,
//! synthetic confounders and IV validation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze, Analysis};
use crate::config::{ModelEntry, RunConfig};
use crate::dataset::{load_dataset, Dataset, Schema};
use crate::error::{Error, Result};
use crate::outcome::{compute_ite, Family};
use crate::propensity::{balance_report, CovariateBalance};
use crate::ranking::{rank_rmse, RankedCohort};
use crate::rng;
use crate::sensitivity::{confounding_overlap, placebo_test, summarize, ConfoundingRecord, ConfoundingSummary, PlaceboOptions, PlaceboRecord};
use crate::simulate::{ground_truth_levels, simulate_cohort};
use crate::validation::{simulate_campaign, validate_ranking_splits, IvExperiment, IvResult};

/// Data a run works on. Estimators only see `observed`.
#[derive(Debug, Clone)]
pub struct Input {
    pub observed: Dataset<f64>,
    /// Ground-truth levels when the source carries them.
    pub truth: Option<Vec<usize>>,
    pub oracle: Option<Dataset<f64>>,
}

/// Default column roles for external CSVs: `a`, `y`, everything else a
/// covariate except `id`.
pub fn default_schema() -> Schema {
    Schema {
        treatment: "a".into(),
        outcome: "y".into(),
        covariates: None,
        ground_truth: None,
        id: Some("id".into()),
    }
}

/// Simulates the cohort, or loads `cfg.data`.
pub fn load_input(cfg: &RunConfig) -> Result<Input> {
    match &cfg.data {
        None => {
            let out = simulate_cohort::<f64>(&cfg.sim)?;
            Ok(Input {
                truth: Some(ground_truth_levels(&out.oracle)?),
                observed: out.observed,
                oracle: Some(out.oracle),
            })
        }
        Some(src) => {
            let schema = match &src.schema {
                Some(p) => Schema::load(p)?,
                None => default_schema(),
            };
            let d = load_dataset::<f64>(&src.path, &schema)?;
            let truth = match d.ground_truth() {
                Some(_) => Some(ground_truth_levels(&d)?),
                None => None,
            };
            let oracle = d.ground_truth().is_some().then(|| d.clone());
            Ok(Input {
                observed: d.observed(),
                truth,
                oracle,
            })
        }
    }
}

/// Campaign for IV validation; only simulated runs have one.
pub fn campaign(cfg: &RunConfig) -> Result<Option<IvExperiment<f64>>> {
    if cfg.data.is_some() || !cfg.validation.enabled {
        return Ok(None);
    }
    let mut sim = cfg.sim.clone();
    sim.seed = rng::derive_seed(cfg.master_seed, "campaign");
    simulate_campaign(&sim, cfg.validation.exposure).map(Some)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Fit,
    Balance,
    Placebo,
    Confounding,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceSummary {
    pub mean_smd_before: f64,
    pub mean_smd_after: f64,
    pub fraction_improved: f64,
    pub threshold: f64,
    pub flagged: Vec<String>,
    pub covariates: Vec<CovariateBalance<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvSummary {
    pub k_evaluated: usize,
    pub k_separated: usize,
    pub all_separated: bool,
    pub result: IvResult,
}

impl IvSummary {
    fn from_result(result: IvResult) -> Self {
        IvSummary {
            k_evaluated: result.separation.len(),
            k_separated: result.separation.iter().filter(|s| s.separated).count(),
            all_separated: result.all_separated(),
            result,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub family: Family,
    pub causal: bool,
    /// First failing stage. Fields of later stages stay empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<StageError>,
    pub retained: usize,
    pub ate: Option<f64>,
    /// Mean training weight per arm, `[control, treated]`.
    pub weight_means: Option<[f64; 2]>,
    /// Level RMSE against ground truth.
    pub rank_rmse: Option<f64>,
    pub balance: Option<BalanceSummary>,
    pub placebo: Option<PlaceboRecord>,
    pub confounding: Vec<ConfoundingRecord>,
    pub overlap: Vec<ConfoundingSummary>,
    pub iv: Option<IvSummary>,
    /// Per-unit ranking; written to ranking.csv, not to report.json.
    #[serde(skip)]
    pub ranked: Option<RankedCohort<f64>>,
}

impl ModelReport {
    fn new(m: &ModelEntry) -> Self {
        ModelReport {
            name: m.name.clone(),
            family: m.family,
            causal: m.causal,
            error: None,
            retained: 0,
            ate: None,
            weight_means: None,
            rank_rmse: None,
            balance: None,
            placebo: None,
            confounding: Vec::new(),
            overlap: Vec::new(),
            iv: None,
            ranked: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortInfo {
    pub n: usize,
    pub k: usize,
    pub treated: usize,
    pub ground_truth: bool,
    pub simulated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub version: String,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohort: Option<CohortInfo>,
    /// IV separation of the true CATE on the campaign, as a reference line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_iv: Option<IvSummary>,
    pub models: Vec<ModelReport>,
    pub config: RunConfig,
}

impl RunReport {
    /// A report with no results, for a config.
    pub fn empty(cfg: &RunConfig) -> Self {
        RunReport {
            config_hash: cfg.hash(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: cfg.master_seed,
            cohort: None,
            oracle_iv: None,
            models: Vec::new(),
            config: cfg.clone(),
        }
    }

    pub fn failed_models(&self) -> impl Iterator<Item = &ModelReport> {
        self.models.iter().filter(|m| m.error.is_some())
    }
}

fn weight_means(a: &Analysis<f64>, d: &Dataset<f64>) -> [f64; 2] {
    let mut sum = [0.0; 2];
    let mut count = [0usize; 2];
    for (&i, &w) in a.retained.iter().zip(&a.weights) {
        let arm = d.treatment()[i] as usize;
        sum[arm] += w;
        count[arm] += 1;
    }
    [0, 1].map(|arm| sum[arm] / count[arm].max(1) as f64)
}

fn run_model(cfg: &RunConfig, m: &ModelEntry, input: &Input, iv: Option<&IvExperiment<f64>>) -> ModelReport {
    let mut rep = ModelReport::new(m);
    if let Err(e) = fill_model(cfg, m, input, iv, &mut rep) {
        rep.error = Some(e);
    }
    rep
}

fn fill_model(
    cfg: &RunConfig,
    m: &ModelEntry,
    input: &Input,
    iv: Option<&IvExperiment<f64>>,
    rep: &mut ModelReport,
) -> std::result::Result<(), StageError> {
    let at = |stage: Stage| move |e: Error| StageError {
        stage,
        message: e.to_string(),
    };
    let d = &input.observed;
    let acfg = cfg.analysis(m);
    let base = analyze(d, &acfg).map_err(at(Stage::Fit))?;
    rep.retained = base.retained.len();
    rep.ate = Some(base.ate());
    rep.weight_means = Some(weight_means(&base, d));
    if let Some(truth) = &input.truth {
        rep.rank_rmse = Some(rank_rmse(&base.levels(), truth).map_err(at(Stage::Fit))?);
    }
    rep.ranked = Some(base.ranked.clone());

    if m.causal {
        let train = d.subset(&base.retained);
        let b = balance_report(&train, &base.weights, cfg.balance_threshold).map_err(at(Stage::Balance))?;
        rep.balance = Some(BalanceSummary {
            mean_smd_before: b.mean_before(),
            mean_smd_after: b.mean_after(),
            fraction_improved: b.fraction_improved(),
            threshold: b.threshold,
            flagged: b.flagged,
            covariates: b.covariates,
        });
    }

    let s = &cfg.sensitivity;
    if s.placebo {
        let opts = PlaceboOptions {
            bootstrap: s.bootstrap,
            seed: rng::derive_seed(cfg.master_seed, "placebo"),
        };
        let mut p = placebo_test(d, &acfg, &base.levels(), &opts).map_err(at(Stage::Placebo))?;
        if let Some(truth) = &input.truth {
            p.rank_rmse_vs_truth = Some(rank_rmse(&p.levels, truth).map_err(at(Stage::Placebo))?);
        }
        rep.placebo = Some(p);
    }
    if s.confounding && !s.configs.is_empty() {
        let recs = confounding_overlap(d, &acfg, &base, &s.configs, s.runs, cfg.master_seed)
            .map_err(at(Stage::Confounding))?;
        rep.overlap = summarize(&recs);
        rep.confounding = recs;
    }

    if let Some(e) = iv {
        let pred = compute_ite(&base.model, &e.data).map_err(at(Stage::Validation))?;
        let e = e.clone().with_predictions(pred.ites()).map_err(at(Stage::Validation))?;
        let r = validate_ranking_splits(&e, &cfg.validation.k_grid).map_err(at(Stage::Validation))?;
        rep.iv = Some(IvSummary::from_result(r));
    }
    Ok(())
}

/// Runs every stage for every model. Config errors and input failures are
/// returned; a failing stage only ends its own model's branch and is
/// recorded in that model's entry. Model order follows the config.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunReport> {
    let cfg = cfg.clone().resolved();
    cfg.validate()?;
    let input = load_input(&cfg)?;
    let iv = campaign(&cfg)?;
    let oracle_iv = match &iv {
        Some(e) => {
            let truth = e.true_cate()?;
            let e = e.clone().with_predictions(truth)?;
            Some(IvSummary::from_result(validate_ranking_splits(&e, &cfg.validation.k_grid)?))
        }
        None => None,
    };
    let models: Vec<ModelReport> = cfg
        .models
        .par_iter()
        .map(|m| run_model(&cfg, m, &input, iv.as_ref()))
        .collect();
    let d = &input.observed;
    Ok(RunReport {
        cohort: Some(CohortInfo {
            n: d.n(),
            k: d.k(),
            treated: d.treated_count(),
            ground_truth: input.truth.is_some(),
            simulated: cfg.data.is_none(),
        }),
        oracle_iv,
        models,
        ..RunReport::empty(&cfg)
    })
}
