//! Weighted outcome models `f(x, a)` and individual treatment effects
//! `ite(x) = f(x, 1) - f(x, 0)`.
//!
//! Every family minimizes `sum_i w_i L(y_i, f(x_i, a_i))`. Passing no
//! weights is the same as passing unit weights, which gives the ordinary
//! (non-causal) regression.

mod linear;
mod tree;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use tree::{Node, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    LinearWls,
    LinearSgd,
    Poisson,
    SvrLinear,
    Tree,
    Forest,
    BoostedTrees,
}

impl Family {
    pub fn loss_kind(self) -> LossKind {
        match self {
            Family::Poisson => LossKind::PoissonDeviance,
            Family::SvrLinear => LossKind::EpsilonInsensitive,
            _ => LossKind::SquaredError,
        }
    }

    pub fn is_tree_based(self) -> bool {
        matches!(self, Family::Tree | Family::Forest | Family::BoostedTrees)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::LinearWls => "linear_wls",
            Family::LinearSgd => "linear_sgd",
            Family::Poisson => "poisson",
            Family::SvrLinear => "svr_linear",
            Family::Tree => "tree",
            Family::Forest => "forest",
            Family::BoostedTrees => "boosted_trees",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SquaredError,
    PoissonDeviance,
    EpsilonInsensitive,
}

/// Family hyperparameters. Unset fields take the family default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    /// Include the treatment column (default true).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub treatment: Option<bool>,
    /// Add `a * x` columns; linear, Poisson and SVR families only (default true).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interactions: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
    /// SVR penalty: `sum w L + 1/(2C) |beta|^2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_trees: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_leaf: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_features: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shrinkage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    #[serde(default)]
    pub hyper: Hyper,
}

impl ModelSpec {
    pub fn new(family: Family) -> Self {
        ModelSpec {
            family,
            hyper: Hyper::default(),
        }
    }

    pub fn without_interactions(mut self) -> Self {
        self.hyper.interactions = Some(false);
        self
    }

    pub fn without_treatment(mut self) -> Self {
        self.hyper.treatment = Some(false);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyper;
        let positive = |v: Option<f64>, name: &str| match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(Error::param(format!("{name} must be positive"))),
            _ => Ok(()),
        };
        positive(h.learning_rate, "learning_rate")?;
        positive(h.c, "c")?;
        positive(h.shrinkage, "shrinkage")?;
        if let Some(e) = h.epsilon {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::param("epsilon must be >= 0"));
            }
        }
        if let Some(l) = h.l2 {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::param("l2 must be >= 0"));
            }
        }
        for (v, name) in [
            (h.epochs, "epochs"),
            (h.n_trees, "n_trees"),
            (h.max_depth, "max_depth"),
            (h.min_leaf, "min_leaf"),
            (h.max_features, "max_features"),
            (h.rounds, "rounds"),
        ] {
            if v == Some(0) {
                return Err(Error::param(format!("{name} must be at least 1")));
            }
        }
        if h.interactions == Some(true) && self.family.is_tree_based() {
            return Err(Error::param("tree families take (x, a) raw; interactions are not supported"));
        }
        if h.interactions == Some(true) && h.treatment == Some(false) {
            return Err(Error::param("interactions need the treatment column"));
        }
        Ok(())
    }
}

/// How `(x, a)` becomes a feature row: `x`, then `a` if present, then
/// `a * x` if interactions are on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub covariates: usize,
    pub treatment: bool,
    pub interactions: bool,
}

impl FeatureMap {
    pub fn for_spec(spec: &ModelSpec, k: usize) -> Self {
        let treatment = spec.hyper.treatment.unwrap_or(true);
        let interactions = treatment && !spec.family.is_tree_based() && spec.hyper.interactions.unwrap_or(true);
        FeatureMap {
            covariates: k,
            treatment,
            interactions,
        }
    }

    pub fn dim(&self) -> usize {
        self.covariates * (1 + self.interactions as usize) + self.treatment as usize
    }

    pub fn encode<T: Scalar>(&self, x: &[T], a: u8, out: &mut [T]) {
        let k = self.covariates;
        out[..k].copy_from_slice(x);
        if self.treatment {
            let a = if a == 1 { T::one() } else { T::zero() };
            out[k] = a;
            if self.interactions {
                for j in 0..k {
                    out[k + 1 + j] = a * x[j];
                }
            }
        }
    }

    fn design<T: Scalar>(&self, d: &Dataset<T>) -> Vec<T> {
        let p = self.dim();
        let mut z = vec![T::zero(); d.n() * p];
        z.par_chunks_mut(p.max(1)).enumerate().for_each(|(i, row)| {
            if p > 0 {
                self.encode(d.row(i), d.treatment()[i], row);
            }
        });
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", tag = "kind", rename_all = "snake_case")]
pub enum Params<T> {
    /// Fitted on a constant outcome.
    Constant { value: T },
    /// Identity link: `f = intercept + coefficients . z`.
    Linear { intercept: T, coefficients: Vec<T> },
    /// Log link: `f = exp(intercept + coefficients . z)`.
    LogLinear { intercept: T, coefficients: Vec<T> },
    /// `f = base + scale * sum_t tree_t(z)`.
    Ensemble { base: T, scale: T, trees: Vec<Tree<T>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Diagnostics<T> {
    /// Weighted mean training loss of the final model.
    pub final_loss: T,
    /// Epochs, trees or rounds; 0 for closed-form fits.
    pub iterations: usize,
    /// Boosting only: weighted mean squared error after each round, starting
    /// with the base prediction.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub round_losses: Vec<T>,
    /// Linear WLS only: coefficients dropped as rank deficient.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct OutcomeModel<T> {
    pub family: Family,
    pub loss_kind: LossKind,
    pub feature_map: FeatureMap,
    pub params: Params<T>,
    pub diagnostics: Diagnostics<T>,
}

impl<T: Scalar> OutcomeModel<T> {
    /// Whether the fitted form can give different effects to different units.
    pub fn heterogeneous(&self) -> bool {
        self.feature_map.treatment && (self.feature_map.interactions || self.family.is_tree_based() || self.family == Family::Poisson)
    }

    fn eval(&self, z: &[T]) -> T {
        match &self.params {
            Params::Constant { value } => *value,
            Params::Linear { intercept, coefficients } => *intercept + dot(coefficients, z),
            Params::LogLinear { intercept, coefficients } => (*intercept + dot(coefficients, z)).exp(),
            Params::Ensemble { base, scale, trees } => {
                *base + *scale * trees.iter().map(|t| t.predict(z)).sum::<T>()
            }
        }
    }

    pub fn predict(&self, x: &[T], a: u8) -> Result<T> {
        if x.len() != self.feature_map.covariates {
            return Err(Error::DimensionMismatch {
                expected: self.feature_map.covariates,
                found: x.len(),
            });
        }
        let mut z = vec![T::zero(); self.feature_map.dim()];
        self.feature_map.encode(x, a, &mut z);
        Ok(self.eval(&z))
    }

    /// `(f(x,0), f(x,1), ite)`. Identity-link models compute the effect from
    /// the treatment terms alone, so a model without interactions gives the
    /// same ITE bit-for-bit for every `x`.
    fn contrast(&self, x: &[T], buf: &mut [T]) -> (T, T, T) {
        if let Params::Linear { intercept, coefficients } = &self.params {
            let k = self.feature_map.covariates;
            let base = *intercept + dot(&coefficients[..k], x);
            let effect = if self.feature_map.treatment {
                let mut e = coefficients[k];
                if self.feature_map.interactions {
                    e += dot(&coefficients[k + 1..], x);
                }
                e
            } else {
                T::zero()
            };
            return (base, base + effect, effect);
        }
        self.feature_map.encode(x, 0, buf);
        let y0 = self.eval(buf);
        self.feature_map.encode(x, 1, buf);
        let y1 = self.eval(buf);
        (y0, y1, y1 - y0)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&a, &b)| a * b).sum()
}

fn check_weights<T: Scalar>(weights: Option<&[T]>, n: usize) -> Result<Vec<T>> {
    let Some(w) = weights else {
        return Ok(vec![T::one(); n]);
    };
    if w.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: w.len(),
        });
    }
    if let Some(bad) = w.iter().find(|&&v| !(v > T::zero() && v.is_finite())) {
        return Err(Error::param(format!("weights must be positive and finite, found {bad}")));
    }
    // Normalizing by the mean makes every fit invariant to weight scale.
    let m = w.iter().copied().sum::<T>() / T::from_usize_lossy(n);
    Ok(w.iter().map(|&v| v / m).collect())
}

/// Fits `spec` to `d`. `weights = None` means unit weights.
pub fn fit_outcome_model<T: Scalar>(d: &Dataset<T>, weights: Option<&[T]>, spec: &ModelSpec) -> Result<OutcomeModel<T>> {
    spec.validate()?;
    let n = d.n();
    if n == 0 {
        return Err(Error::NoData);
    }
    let w = check_weights(weights, n)?;
    let y = d.outcome();
    let family = spec.family;
    if family == Family::Poisson {
        if let Some(i) = y.iter().position(|&v| v < T::zero()) {
            return Err(Error::param(format!(
                "poisson family needs non-negative outcomes (row {} is {})",
                i + 1,
                y[i]
            )));
        }
    }
    let fm = FeatureMap::for_spec(spec, d.k());
    let h = &spec.hyper;
    let seed = h.seed.unwrap_or(0);

    let model = |params: Params<T>, iterations: usize, round_losses: Vec<T>, dropped: Vec<usize>| {
        let mut m = OutcomeModel {
            family,
            loss_kind: family.loss_kind(),
            feature_map: fm,
            params,
            diagnostics: Diagnostics {
                final_loss: T::zero(),
                iterations,
                round_losses,
                dropped,
            },
        };
        m.diagnostics.final_loss = training_loss(&m, d, &w, h.epsilon.unwrap_or(0.1));
        m
    };

    if y.iter().all(|&v| v == y[0]) {
        return Ok(model(Params::Constant { value: y[0] }, 0, Vec::new(), Vec::new()));
    }

    let p = fm.dim();
    let z = fm.design(d);
    Ok(match family {
        Family::LinearWls => {
            let (intercept, coefficients, dropped) = linear::wls(&z, p, y, &w);
            model(Params::Linear { intercept, coefficients }, 0, Vec::new(), dropped)
        }
        Family::LinearSgd | Family::Poisson | Family::SvrLinear => {
            let loss = match family {
                Family::LinearSgd => linear::SgdLoss::Squared,
                Family::Poisson => linear::SgdLoss::Poisson,
                _ => linear::SgdLoss::EpsilonInsensitive(h.epsilon.unwrap_or(0.1)),
            };
            let l2 = match family {
                Family::SvrLinear => 1.0 / (h.c.unwrap_or(1.0) * n as f64),
                _ => h.l2.unwrap_or(0.0),
            };
            let opts = linear::SgdOptions {
                epochs: h.epochs.unwrap_or(match family {
                    Family::LinearSgd => 100,
                    _ => 50,
                }),
                learning_rate: h.learning_rate.unwrap_or(0.5),
                l2,
                seed,
            };
            let (intercept, coefficients) = linear::sgd(&z, p, y, &w, loss, &opts);
            let params = if family == Family::Poisson {
                Params::LogLinear { intercept, coefficients }
            } else {
                Params::Linear { intercept, coefficients }
            };
            model(params, opts.epochs, Vec::new(), Vec::new())
        }
        Family::Tree => {
            let opts = tree::TreeOptions {
                max_depth: h.max_depth.unwrap_or(8),
                min_leaf: h.min_leaf.unwrap_or(20),
                max_features: h.max_features.unwrap_or(p),
                seed,
            };
            let rows: Vec<usize> = (0..n).collect();
            let t = tree::fit_tree(&z, p, y, &w, &rows, opts);
            let params = Params::Ensemble {
                base: T::zero(),
                scale: T::one(),
                trees: vec![t],
            };
            model(params, 1, Vec::new(), Vec::new())
        }
        Family::Forest => {
            let n_trees = h.n_trees.unwrap_or(100);
            let opts = tree::TreeOptions {
                max_depth: h.max_depth.unwrap_or(usize::MAX),
                min_leaf: h.min_leaf.unwrap_or(20),
                max_features: h.max_features.unwrap_or(((p as f64).sqrt() as usize).max(1)),
                seed,
            };
            let trees = tree::fit_forest(&z, p, y, &w, n_trees, opts);
            let params = Params::Ensemble {
                base: T::zero(),
                scale: T::one() / T::from_usize_lossy(n_trees),
                trees,
            };
            model(params, n_trees, Vec::new(), Vec::new())
        }
        Family::BoostedTrees => {
            let rounds = h.rounds.unwrap_or(100);
            let shrinkage = T::lit(h.shrinkage.unwrap_or(0.1));
            let opts = tree::TreeOptions {
                max_depth: h.max_depth.unwrap_or(4),
                min_leaf: h.min_leaf.unwrap_or(20),
                max_features: h.max_features.unwrap_or(p),
                seed,
            };
            let (base, trees, losses) = tree::fit_boosting(&z, p, y, &w, rounds, shrinkage, opts);
            let params = Params::Ensemble {
                base,
                scale: shrinkage,
                trees,
            };
            model(params, rounds, losses, Vec::new())
        }
    })
}

fn training_loss<T: Scalar>(m: &OutcomeModel<T>, d: &Dataset<T>, w: &[T], eps: f64) -> T {
    let eps = T::lit(eps);
    let mut buf = vec![T::zero(); m.feature_map.dim()];
    let mut total = T::zero();
    for i in 0..d.n() {
        m.feature_map.encode(d.row(i), d.treatment()[i], &mut buf);
        let f = m.eval(&buf);
        let y = d.outcome()[i];
        let l = match m.loss_kind {
            LossKind::SquaredError => (y - f) * (y - f),
            LossKind::PoissonDeviance => {
                let mu = f.max(T::min_positive_value());
                let term = if y > T::zero() { y * (y / mu).ln() } else { T::zero() };
                T::lit(2.0) * (term - (y - mu))
            }
            LossKind::EpsilonInsensitive => ((y - f).abs() - eps).max(T::zero()),
        };
        total += w[i] * l;
    }
    total / T::from_usize_lossy(d.n())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct IteRecord<T> {
    pub index: usize,
    pub ite: T,
    pub y_hat_1: T,
    pub y_hat_0: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct IteTable<T> {
    pub records: Vec<IteRecord<T>>,
}

impl<T: Scalar> IteTable<T> {
    pub fn from_values(ites: &[T]) -> Self {
        IteTable {
            records: ites
                .iter()
                .enumerate()
                .map(|(index, &ite)| IteRecord {
                    index,
                    ite,
                    y_hat_1: ite,
                    y_hat_0: T::zero(),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ites(&self) -> Vec<T> {
        self.records.iter().map(|r| r.ite).collect()
    }

    pub fn mean_ite(&self) -> T {
        crate::stats::mean(&self.ites())
    }

    /// Copy with both predictions clamped to `[lo, hi]` and the ITE
    /// recomputed; for reporting count-valued outcomes.
    pub fn clamped(&self, lo: T, hi: T) -> Self {
        IteTable {
            records: self
                .records
                .iter()
                .map(|r| {
                    let y1 = r.y_hat_1.max(lo).min(hi);
                    let y0 = r.y_hat_0.max(lo).min(hi);
                    IteRecord {
                        index: r.index,
                        ite: y1 - y0,
                        y_hat_1: y1,
                        y_hat_0: y0,
                    }
                })
                .collect(),
        }
    }
}

/// Counterfactual predictions for every unit of `d`.
pub fn compute_ite<T: Scalar>(m: &OutcomeModel<T>, d: &Dataset<T>) -> Result<IteTable<T>> {
    if d.k() != m.feature_map.covariates {
        return Err(Error::DimensionMismatch {
            expected: m.feature_map.covariates,
            found: d.k(),
        });
    }
    let dim = m.feature_map.dim();
    let records = (0..d.n())
        .into_par_iter()
        .map_init(
            || vec![T::zero(); dim],
            |buf, i| {
                let (y0, y1, ite) = m.contrast(d.row(i), buf);
                IteRecord {
                    index: i,
                    ite,
                    y_hat_1: y1,
                    y_hat_0: y0,
                }
            },
        )
        .collect();
    Ok(IteTable { records })
}

#[cfg(test)]
mod tests;
