//! Ranks, quantile buckets, rank RMSE and top-k selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::outcome::IteTable;
use crate::scalar::Scalar;
use crate::simulate::bucket_sizes;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RankedUnit<T> {
    pub index: usize,
    pub ite: T,
    /// 1 is the highest ITE.
    pub rank: usize,
    /// 1 is the lowest bucket, `levels` the highest.
    pub level: usize,
}

/// Units in input order with their rank and bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RankedCohort<T> {
    pub units: Vec<RankedUnit<T>>,
    pub levels: usize,
}

impl<T: Scalar> RankedCohort<T> {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn level_sequence(&self) -> Vec<usize> {
        self.units.iter().map(|u| u.level).collect()
    }

    pub fn ites(&self) -> Vec<T> {
        self.units.iter().map(|u| u.ite).collect()
    }

    /// Input positions ordered by rank.
    pub fn by_rank(&self) -> Vec<usize> {
        let mut order = vec![0; self.units.len()];
        for (pos, u) in self.units.iter().enumerate() {
            order[u.rank - 1] = pos;
        }
        order
    }
}

/// Ranks `ites` in descending order (ties by ascending position) and cuts the
/// order into `levels` buckets. Lower levels absorb the remainder when
/// `levels` does not divide `n`.
pub fn rank_values<T: Scalar>(ites: &[T], levels: usize) -> Result<RankedCohort<T>> {
    let n = ites.len();
    if levels == 0 {
        return Err(Error::param("bucket count must be at least 1"));
    }
    if n < levels {
        return Err(Error::param(format!("cannot cut {n} units into {levels} buckets")));
    }
    if let Some(i) = ites.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidData(format!("non-finite ITE at unit {i}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ites[b].partial_cmp(&ites[a]).unwrap().then(a.cmp(&b)));

    let sizes = bucket_sizes(n, levels);
    let mut units: Vec<RankedUnit<T>> = ites
        .iter()
        .enumerate()
        .map(|(index, &ite)| RankedUnit {
            index,
            ite,
            rank: 0,
            level: 0,
        })
        .collect();
    let mut pos = 0;
    for level in (1..=levels).rev() {
        for _ in 0..sizes[level - 1] {
            let u = &mut units[order[pos]];
            u.rank = pos + 1;
            u.level = level;
            pos += 1;
        }
    }
    Ok(RankedCohort { units, levels })
}

/// [`rank_values`] on an ITE table; unit indices are taken from the table.
pub fn rank_and_bucket<T: Scalar>(ites: &IteTable<T>, levels: usize) -> Result<RankedCohort<T>> {
    let mut r = rank_values(&ites.ites(), levels)?;
    for (u, rec) in r.units.iter_mut().zip(&ites.records) {
        u.index = rec.index;
    }
    Ok(r)
}

/// `sqrt(mean((predicted - truth)^2))` over level sequences.
pub fn rank_rmse(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            found: predicted.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::NoData);
    }
    let ss: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(&p, &t)| {
            let d = p as f64 - t as f64;
            d * d
        })
        .sum();
    Ok((ss / predicted.len() as f64).sqrt())
}

/// Number of units in the top `k` percent: `ceil(n k / 100)`, with products
/// that land within rounding noise of an integer taken as that integer.
pub fn top_count(n: usize, k: f64) -> Result<usize> {
    if !(k > 0.0 && k <= 100.0) {
        return Err(Error::param(format!("percentile must be in (0, 100], got {k}")));
    }
    let exact = n as f64 * k / 100.0;
    let nearest = exact.round();
    let count = if (exact - nearest).abs() <= 1e-9 * exact.max(1.0) {
        nearest
    } else {
        exact.ceil()
    };
    Ok((count as usize).min(n))
}

/// Input positions of the `ceil(n k / 100)` highest-ranked units, ascending.
pub fn select_top_percentile<T: Scalar>(ranked: &RankedCohort<T>, k: f64) -> Result<Vec<usize>> {
    let m = top_count(ranked.len(), k)?;
    let mut sel: Vec<usize> = ranked
        .units
        .iter()
        .enumerate()
        .filter(|(_, u)| u.rank <= m)
        .map(|(pos, _)| pos)
        .collect();
    sel.sort_unstable();
    Ok(sel)
}

/// Per-unit membership flags for each `k` in `grid`.
pub fn top_k_flags<T: Scalar>(ranked: &RankedCohort<T>, grid: &[f64]) -> Result<Vec<Vec<bool>>> {
    grid.iter()
        .map(|&k| {
            let m = top_count(ranked.len(), k)?;
            Ok(ranked.units.iter().map(|u| u.rank <= m).collect())
        })
        .collect()
}
