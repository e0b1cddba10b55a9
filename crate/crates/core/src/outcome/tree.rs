//! Weighted regression trees, bagged forests and least-squares boosting.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", tag = "node", rename_all = "snake_case")]
pub enum Node<T> {
    Leaf {
        value: T,
    },
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
}

/// Flat binary tree; node 0 is the root. Rows with `x[feature] <= threshold`
/// go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Tree<T> {
    pub nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tree<T> {
    pub fn predict(&self, x: &[T]) -> T {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    /// `(feature, threshold)` of every split, in node order.
    pub fn thresholds(&self) -> Vec<(usize, T)> {
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Split { feature, threshold, .. } => Some((feature, threshold)),
                Node::Leaf { .. } => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeOptions {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `p` means all.
    pub max_features: usize,
    pub seed: u64,
}

struct Builder<'a, T> {
    z: &'a [T],
    p: usize,
    y: &'a [T],
    w: &'a [T],
    opts: TreeOptions,
    nodes: Vec<Node<T>>,
    left_mark: Vec<bool>,
    splits: u64,
}

/// Fits one tree on rows `rows` with frequency weights `w` (zero-weight rows
/// must be excluded by the caller).
pub(crate) fn fit_tree<T: Scalar>(z: &[T], p: usize, y: &[T], w: &[T], rows: &[usize], opts: TreeOptions) -> Tree<T> {
    let sorted: Vec<Vec<usize>> = (0..p)
        .map(|f| {
            let mut r = rows.to_vec();
            r.sort_by(|&a, &b| z[a * p + f].partial_cmp(&z[b * p + f]).unwrap().then(a.cmp(&b)));
            r
        })
        .collect();
    let mut b = Builder {
        z,
        p,
        y,
        w,
        opts,
        nodes: Vec::new(),
        left_mark: vec![false; y.len()],
        splits: 0,
    };
    b.grow(sorted, 0);
    Tree { nodes: b.nodes }
}

impl<T: Scalar> Builder<'_, T> {
    fn grow(&mut self, sorted: Vec<Vec<usize>>, depth: usize) -> usize {
        let rows = &sorted[0];
        let (mut sw, mut swy) = (T::zero(), T::zero());
        for &i in rows {
            sw += self.w[i];
            swy += self.w[i] * self.y[i];
        }
        let value = swy / sw;
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value });
        if depth >= self.opts.max_depth || rows.len() < 2 * self.opts.min_leaf {
            return id;
        }

        let features: Vec<usize> = if self.opts.max_features >= self.p {
            (0..self.p).collect()
        } else {
            let mut r = rng::substream(self.opts.seed, "tree/features", self.splits);
            let mut f = index::sample(&mut r, self.p, self.opts.max_features).into_vec();
            f.sort_unstable();
            f
        };
        self.splits += 1;

        let base = swy * swy / sw;
        let tiny = T::epsilon() * T::lit(64.0) * base.abs().max(T::min_positive_value());
        let mut best: Option<(T, usize, usize, T)> = None;
        for &f in &features {
            let order = &sorted[f];
            let (mut lw, mut lwy) = (T::zero(), T::zero());
            for pos in 0..order.len() - 1 {
                let i = order[pos];
                lw += self.w[i];
                lwy += self.w[i] * self.y[i];
                let count_left = pos + 1;
                if count_left < self.opts.min_leaf || order.len() - count_left < self.opts.min_leaf {
                    continue;
                }
                let xi = self.z[i * self.p + f];
                let xn = self.z[order[pos + 1] * self.p + f];
                if !(xn > xi) {
                    continue;
                }
                let rw = sw - lw;
                let rwy = swy - lwy;
                if !(lw > T::zero() && rw > T::zero()) {
                    continue;
                }
                let gain = lwy * lwy / lw + rwy * rwy / rw - base;
                if gain > tiny && best.is_none_or(|(g, ..)| gain > g) {
                    let mut thr = (xi + xn) / T::lit(2.0);
                    if !(thr >= xi && thr < xn) {
                        thr = xi;
                    }
                    best = Some((gain, f, pos, thr));
                }
            }
        }
        let Some((_, feature, pos, threshold)) = best else {
            return id;
        };

        for (k, &i) in sorted[feature].iter().enumerate() {
            self.left_mark[i] = k <= pos;
        }
        let mut left = Vec::with_capacity(self.p);
        let mut right = Vec::with_capacity(self.p);
        for list in &sorted {
            let (l, r): (Vec<usize>, Vec<usize>) = list.iter().partition(|&&i| self.left_mark[i]);
            left.push(l);
            right.push(r);
        }
        drop(sorted);
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left: l,
            right: r,
        };
        id
    }
}

/// Bagged trees: each tree sees a bootstrap resample (as integer frequency
/// weights) and a random feature subset at every split.
pub(crate) fn fit_forest<T: Scalar>(
    z: &[T],
    p: usize,
    y: &[T],
    w: &[T],
    n_trees: usize,
    opts: TreeOptions,
) -> Vec<Tree<T>> {
    let n = y.len();
    (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::substream(opts.seed, "forest/bootstrap", t as u64);
            let mut counts = vec![0u32; n];
            for _ in 0..n {
                counts[r.random_range(0..n)] += 1;
            }
            let rows: Vec<usize> = (0..n).filter(|&i| counts[i] > 0).collect();
            let wt: Vec<T> = (0..n).map(|i| w[i] * T::from_u32(counts[i]).unwrap()).collect();
            let tree_opts = TreeOptions {
                seed: rng::derive_indexed(opts.seed, "forest/tree", &[t as u64]),
                ..opts
            };
            fit_tree(z, p, y, &wt, &rows, tree_opts)
        })
        .collect()
}

/// Least-squares gradient boosting. Returns the base value, the trees and the
/// weighted mean squared error after each round (index 0 = base only).
pub(crate) fn fit_boosting<T: Scalar>(
    z: &[T],
    p: usize,
    y: &[T],
    w: &[T],
    rounds: usize,
    shrinkage: T,
    opts: TreeOptions,
) -> (T, Vec<Tree<T>>, Vec<T>) {
    let n = y.len();
    let sw: T = w.iter().copied().sum();
    let base = y.iter().zip(w).map(|(&y, &w)| y * w).sum::<T>() / sw;
    let mut f = vec![base; n];
    let rows: Vec<usize> = (0..n).collect();
    let loss = |f: &[T]| {
        f.iter()
            .zip(y)
            .zip(w)
            .map(|((&f, &y), &w)| w * (y - f) * (y - f))
            .sum::<T>()
            / sw
    };
    let mut losses = vec![loss(&f)];
    let mut trees = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let resid: Vec<T> = y.iter().zip(&f).map(|(&y, &f)| y - f).collect();
        let tree_opts = TreeOptions {
            seed: rng::derive_indexed(opts.seed, "boost/round", &[round as u64]),
            ..opts
        };
        let tree = fit_tree(z, p, &resid, w, &rows, tree_opts);
        f.par_iter_mut().enumerate().for_each(|(i, fi)| {
            *fi += shrinkage * tree.predict(&z[i * p..(i + 1) * p]);
        });
        losses.push(loss(&f));
        trees.push(tree);
    }
    (base, trees, losses)
}
