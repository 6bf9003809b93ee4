//! CART regression trees grown on presorted feature columns.
//!
//! Rows carry integer weights (bootstrap multiplicities); a row with weight
//! `k` behaves exactly like `k` copies of itself. Each node keeps, for every
//! feature, its rows sorted by that feature, so a split is a stable
//! partition of those lists rather than a fresh sort.

use rand::seq::index;
use rand_chacha::ChaCha8Rng;

use super::{ForestParams, TrainingData};
use crate::error::{Error, Result};
use crate::features::N_FEATURES;

pub(crate) const LEAF: u32 = 0;

/// Hot part of a node, read during prediction. For leaves `value` is the
/// prediction and `left == 0`; for splits rows with `x[feature] < value`
/// go to `left`, the rest to `left + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Hot {
    pub value: f64,
    pub left: u32,
    pub feature: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Stats {
    /// Weighted number of training rows reaching the node.
    pub n_samples: u32,
    /// Weighted mean squared deviation of the node's targets.
    pub impurity: f64,
}

/// Public view of one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        n_samples: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub(crate) hot: Vec<Hot>,
    pub(crate) stats: Vec<Stats>,
}

impl Tree {
    pub fn len(&self) -> usize {
        self.hot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hot.is_empty()
    }

    pub fn node(&self, i: usize) -> TreeNode {
        let h = self.hot[i];
        if h.left == LEAF {
            TreeNode::Leaf {
                value: h.value,
                n_samples: self.stats[i].n_samples,
            }
        } else {
            TreeNode::Split {
                feature: h.feature as usize,
                threshold: h.value,
                left: h.left as usize,
                right: h.left as usize + 1,
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.hot.iter().filter(|h| h.left == LEAF).count()
    }

    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, d)) = stack.pop() {
            best = best.max(d);
            let h = self.hot[i];
            if h.left != LEAF {
                stack.push((h.left as usize, d + 1));
                stack.push((h.left as usize + 1, d + 1));
            }
        }
        best
    }

    #[inline]
    pub fn predict_one(&self, x: &[f64; N_FEATURES]) -> f64 {
        let mut i = 0usize;
        loop {
            let h = self.hot[i];
            if h.left == LEAF {
                return h.value;
            }
            i = h.left as usize + (x[h.feature as usize] >= h.value) as usize;
        }
    }

    /// Add this tree's prediction for every row to `acc`. Rows are walked
    /// in lockstep groups so that cache misses of different rows overlap.
    pub(crate) fn accumulate(&self, rows: &[[f64; N_FEATURES]], acc: &mut [f64]) {
        const LANES: usize = 16;
        let hot = &self.hot[..];
        let mut xs = rows.chunks_exact(LANES);
        let mut accs = acc.chunks_exact_mut(LANES);
        for (x, a) in (&mut xs).zip(&mut accs) {
            let mut node = [0u32; LANES];
            loop {
                let mut moved = false;
                for j in 0..LANES {
                    let h = hot[node[j] as usize];
                    if h.left != LEAF {
                        node[j] = h.left + (x[j][h.feature as usize] >= h.value) as u32;
                        moved = true;
                    }
                }
                if !moved {
                    break;
                }
            }
            for j in 0..LANES {
                a[j] += hot[node[j] as usize].value;
            }
        }
        for (x, a) in xs.remainder().iter().zip(accs.into_remainder()) {
            *a += self.predict_one(x);
        }
    }

    /// Weighted impurity decrease per feature, normalised by root weight.
    pub fn impurity_decrease(&self) -> [f64; N_FEATURES] {
        let mut out = [0.0; N_FEATURES];
        let root = self.stats[0].n_samples as f64;
        for (h, s) in self.hot.iter().zip(&self.stats) {
            if h.left == LEAF {
                continue;
            }
            let l = self.stats[h.left as usize];
            let r = self.stats[h.left as usize + 1];
            let dec = s.n_samples as f64 * s.impurity
                - l.n_samples as f64 * l.impurity
                - r.n_samples as f64 * r.impurity;
            out[h.feature as usize] += dec / root;
        }
        out
    }
}

/// Per-feature row orders of a training set, sorted by value then row.
#[derive(Debug, Clone)]
pub struct Presorted {
    pub(crate) order: Vec<Vec<u32>>,
}

impl Presorted {
    pub fn new(data: &TrainingData) -> Self {
        let n = data.len() as u32;
        let order = (0..N_FEATURES)
            .map(|f| {
                let mut idx: Vec<u32> = (0..n).collect();
                idx.sort_by(|&a, &b| data.x[a as usize][f].total_cmp(&data.x[b as usize][f]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Presorted { order }
    }
}

#[derive(Clone, Copy)]
struct Entry {
    x: f64,
    row: u32,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

/// Grow one tree on rows with the given integer weights (zero excludes a
/// row). `rng` drives per-node feature subsampling only.
pub fn fit_tree_weighted(
    data: &TrainingData,
    presorted: &Presorted,
    weights: &[u32],
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
) -> Result<Tree> {
    params.validate()?;
    if data.is_empty() || weights.len() != data.len() {
        return Err(Error::Invalid("tree needs at least one row with matching weights".into()));
    }
    // per-feature (value, row) lists restricted to in-bag rows
    let mut lists: Vec<Vec<Entry>> = presorted
        .order
        .iter()
        .enumerate()
        .map(|(f, ord)| {
            ord.iter()
                .filter(|&&r| weights[r as usize] > 0)
                .map(|&r| Entry {
                    x: data.x[r as usize][f],
                    row: r,
                })
                .collect()
        })
        .collect();
    let m = lists[0].len();
    if m == 0 {
        return Err(Error::Invalid("all row weights are zero".into()));
    }
    let yw: Vec<(f64, f64)> = data.y.iter().zip(weights).map(|(&y, &w)| (y, w as f64)).collect();
    let msl = params.min_samples_leaf as f64;
    let mut goes_left = vec![false; data.len()];
    let mut scratch: Vec<Entry> = Vec::with_capacity(m);

    let mut tree = Tree {
        hot: vec![Hot {
            value: 0.0,
            left: LEAF,
            feature: 0,
        }],
        stats: vec![Stats {
            n_samples: 0,
            impurity: 0.0,
        }],
    };
    // (node, lo, hi, depth)
    let mut stack = vec![(0usize, 0usize, m, 0usize)];
    let mut feats: Vec<usize> = (0..N_FEATURES).collect();

    while let Some((node, lo, hi, depth)) = stack.pop() {
        let seg = &lists[0][lo..hi];
        let (mut w, mut s, mut q) = (0.0, 0.0, 0.0);
        let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
        for e in seg {
            let (y, wt) = yw[e.row as usize];
            w += wt;
            s += wt * y;
            q += wt * y * y;
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
        let mean = s / w;
        tree.stats[node] = Stats {
            n_samples: w as u32,
            impurity: (q / w - mean * mean).max(0.0),
        };
        tree.hot[node].value = mean;

        let stop = ymin == ymax || w < 2.0 * msl || params.max_depth.is_some_and(|d| depth >= d);
        if stop {
            continue;
        }

        if params.features_per_split < N_FEATURES {
            feats = index::sample(rng, N_FEATURES, params.features_per_split).into_vec();
            feats.sort_unstable();
        }
        let parent_score = s * s / w;
        let mut best: Option<Candidate> = None;
        for &f in &feats {
            let seg = &lists[f][lo..hi];
            let (mut wl, mut sl) = (0.0, 0.0);
            for k in 0..seg.len() - 1 {
                let (y, wt) = yw[seg[k].row as usize];
                wl += wt;
                sl += wt * y;
                let (a, b) = (seg[k].x, seg[k + 1].x);
                if a == b {
                    continue;
                }
                let wr = w - wl;
                if wl < msl || wr < msl {
                    continue;
                }
                let sr = s - sl;
                let score = sl * sl / wl + sr * sr / wr;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    let mut t = 0.5 * (a + b);
                    if t <= a {
                        t = b;
                    }
                    best = Some(Candidate {
                        feature: f,
                        threshold: t,
                        score,
                    });
                }
            }
        }
        let Some(best) = best else { continue };
        if !(best.score - parent_score > f64::EPSILON * q.abs()) {
            continue;
        }

        for e in &lists[best.feature][lo..hi] {
            goes_left[e.row as usize] = e.x < best.threshold;
        }
        let mut n_left = 0;
        for list in lists.iter_mut() {
            scratch.clear();
            let seg = &mut list[lo..hi];
            let mut write = 0;
            for k in 0..seg.len() {
                let e = seg[k];
                if goes_left[e.row as usize] {
                    seg[write] = e;
                    write += 1;
                } else {
                    scratch.push(e);
                }
            }
            seg[write..].copy_from_slice(&scratch);
            n_left = write;
        }

        let left = tree.hot.len();
        for _ in 0..2 {
            tree.hot.push(Hot {
                value: 0.0,
                left: LEAF,
                feature: 0,
            });
            tree.stats.push(Stats {
                n_samples: 0,
                impurity: 0.0,
            });
        }
        tree.hot[node] = Hot {
            value: best.threshold,
            left: left as u32,
            feature: best.feature as u32,
        };
        let mid = lo + n_left;
        stack.push((left + 1, mid, hi, depth + 1));
        stack.push((left, lo, mid, depth + 1));
    }
    Ok(tree)
}

/// Grow one tree on all rows with unit weights.
pub fn fit_tree(data: &TrainingData, params: &ForestParams, rng: &mut ChaCha8Rng) -> Result<Tree> {
    if data.is_empty() {
        return Err(Error::Invalid("cannot fit a tree to zero rows".into()));
    }
    let presorted = Presorted::new(data);
    fit_tree_weighted(data, &presorted, &vec![1; data.len()], params, rng)
}
