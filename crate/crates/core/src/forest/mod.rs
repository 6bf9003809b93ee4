//! Random-forest regression: bootstrap ensembles of CART trees with
//! out-of-bag error and mean-decrease-impurity importances.

mod io;
mod tree;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureDataset, N_FEATURES};
use crate::seed;

pub use io::{load_forest, read_forest, save_forest, write_forest};
pub use tree::{fit_tree, fit_tree_weighted, Presorted, Tree, TreeNode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub features_per_split: usize,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 30,
            min_samples_leaf: 5,
            max_depth: None,
            features_per_split: N_FEATURES,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Invalid("n_trees must be >= 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Invalid("min_samples_leaf must be >= 1".into()));
        }
        if !(1..=N_FEATURES).contains(&self.features_per_split) {
            return Err(Error::Invalid(format!("features_per_split must be in 1..={N_FEATURES}")));
        }
        Ok(())
    }
}

/// Row-major feature matrix with targets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingData {
    pub x: Vec<[f64; N_FEATURES]>,
    pub y: Vec<f64>,
}

impl TrainingData {
    pub fn new(x: Vec<[f64; N_FEATURES]>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Invalid(format!("{} feature rows but {} targets", x.len(), y.len())));
        }
        if x.len() > u32::MAX as usize {
            return Err(Error::Invalid("too many training rows".into()));
        }
        if let Some(i) = x.iter().zip(&y).position(|(r, t)| !t.is_finite() || r.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        Ok(TrainingData { x, y })
    }

    /// Concatenate datasets in order.
    pub fn from_datasets<'a>(sets: impl IntoIterator<Item = &'a FeatureDataset>) -> Result<Self> {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for d in sets {
            for r in &d.rows {
                x.push(r.features());
                y.push(r.target_e);
            }
        }
        Self::new(x, y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub params: ForestParams,
    pub seed: u64,
    /// `None` when no row was left out of any bootstrap.
    pub oob_mse: Option<f64>,
    pub importances: [f64; N_FEATURES],
    /// Set when every tree is a single leaf and importances fell back to
    /// uniform.
    pub importance_uniform: bool,
}

/// Bootstrap multiplicity of each row for tree `tree_index`.
pub fn bootstrap_counts(seed: u64, tree_index: usize, n: usize) -> Vec<u32> {
    let mut rng = seed::rng(seed::derive(seed, tree_index as u64));
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.gen_range(0..n)] += 1;
    }
    counts
}

/// Fit `params.n_trees` trees, each on its own bootstrap resample.
pub fn fit_forest(data: &TrainingData, params: &ForestParams, seed: u64) -> Result<ForestModel> {
    params.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("cannot fit a forest to zero rows".into()));
    }
    let n = data.len();
    let presorted = Presorted::new(data);
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut oob_sum = vec![0.0; n];
    let mut oob_count = vec![0u32; n];
    for t in 0..params.n_trees {
        let weights = if params.bootstrap {
            bootstrap_counts(seed, t, n)
        } else {
            vec![1; n]
        };
        // feature subsampling draws from a stream separate from the bootstrap
        let mut rng = seed::rng(seed::derive(seed::derive(seed, t as u64), 1));
        let tree = fit_tree_weighted(data, &presorted, &weights, params, &mut rng)?;
        for (i, &w) in weights.iter().enumerate() {
            if w == 0 {
                oob_sum[i] += tree.predict_one(&data.x[i]);
                oob_count[i] += 1;
            }
        }
        trees.push(tree);
    }

    let (mut se, mut m) = (0.0, 0usize);
    for i in 0..n {
        if oob_count[i] > 0 {
            let p = oob_sum[i] / oob_count[i] as f64;
            se += (p - data.y[i]).powi(2);
            m += 1;
        }
    }
    let mut model = ForestModel {
        trees,
        params: *params,
        seed,
        oob_mse: (m > 0).then(|| se / m as f64),
        importances: [0.0; N_FEATURES],
        importance_uniform: false,
    };
    let (imp, uniform) = compute_importance(&model);
    model.importances = imp;
    model.importance_uniform = uniform;
    Ok(model)
}

impl ForestModel {
    #[inline]
    pub fn predict_one(&self, x: &[f64; N_FEATURES]) -> f64 {
        let s: f64 = self.trees.iter().map(|t| t.predict_one(x)).sum();
        s / self.trees.len() as f64
    }

    /// Mean leaf value over trees for each row. Trees are walked in the
    /// outer loop so each stays cache-resident; per-row sums accumulate in
    /// tree order, matching [`ForestModel::predict_one`] bit for bit.
    pub fn predict(&self, rows: &[[f64; N_FEATURES]]) -> Vec<f64> {
        let mut acc = vec![0.0; rows.len()];
        for t in &self.trees {
            t.accumulate(rows, &mut acc);
        }
        let k = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        acc
    }

    pub fn n_nodes(&self) -> usize {
        self.trees.iter().map(Tree::len).sum()
    }
}

pub fn predict(model: &ForestModel, rows: &[[f64; N_FEATURES]]) -> Vec<f64> {
    model.predict(rows)
}

/// Mean-decrease-impurity importances, normalised to sum to one. The flag
/// is set when the total decrease is zero and uniform values are returned.
pub fn compute_importance(model: &ForestModel) -> ([f64; N_FEATURES], bool) {
    let mut total = [0.0; N_FEATURES];
    for t in &model.trees {
        for (acc, d) in total.iter_mut().zip(t.impurity_decrease()) {
            *acc += d.max(0.0);
        }
    }
    let k = model.trees.len().max(1) as f64;
    total.iter_mut().for_each(|v| *v /= k);
    let sum: f64 = total.iter().sum();
    if !(sum > 0.0) {
        return ([1.0 / N_FEATURES as f64; N_FEATURES], true);
    }
    (total.map(|v| v / sum), false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn random_data(n: usize, seed: u64, f: impl Fn(&[f64; N_FEATURES]) -> f64) -> TrainingData {
        let mut rng = seed::rng(seed);
        let x: Vec<[f64; N_FEATURES]> = (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(0.0..10.0))).collect();
        let y = x.iter().map(&f).collect();
        TrainingData::new(x, y).unwrap()
    }

    fn exact(min_samples_leaf: usize) -> ForestParams {
        ForestParams {
            n_trees: 1,
            min_samples_leaf,
            bootstrap: false,
            ..Default::default()
        }
    }

    // Reference traversal written against the public node view.
    fn walk(tree: &Tree, x: &[f64; N_FEATURES]) -> f64 {
        let mut i = 0;
        loop {
            match tree.node(i) {
                TreeNode::Leaf { value, .. } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    #[test]
    fn constant_target_is_one_leaf() {
        let d = random_data(40, 1, |_| 3.25);
        let t = fit_tree(&d, &exact(1), &mut seed::rng(0)).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.node(0), TreeNode::Leaf { value: 3.25, n_samples: 40 });
    }

    #[test]
    fn two_rows_split_at_midpoint() {
        let mut a = [0.0; N_FEATURES];
        let mut b = [0.0; N_FEATURES];
        a[2] = 1.0;
        b[2] = 3.0;
        let d = TrainingData::new(vec![a, b], vec![0.0, 10.0]).unwrap();
        let t = fit_tree(&d, &exact(1), &mut seed::rng(0)).unwrap();
        assert_eq!(
            t.node(0),
            TreeNode::Split {
                feature: 2,
                threshold: 2.0,
                left: 1,
                right: 2
            }
        );
        assert_eq!(t.node(1), TreeNode::Leaf { value: 0.0, n_samples: 1 });
        assert_eq!(t.node(2), TreeNode::Leaf { value: 10.0, n_samples: 1 });
    }

    #[test]
    fn ties_go_to_lowest_feature() {
        // features 1 and 3 separate the targets equally well
        let rows = vec![[0.0, 1.0, 5.0, 1.0, 5.0], [0.0, 2.0, 5.0, 2.0, 5.0]];
        let d = TrainingData::new(rows, vec![1.0, 2.0]).unwrap();
        let t = fit_tree(&d, &exact(1), &mut seed::rng(0)).unwrap();
        assert!(matches!(t.node(0), TreeNode::Split { feature: 1, .. }));
    }

    #[test]
    fn min_samples_leaf_respected() {
        let d = random_data(200, 2, |x| x[0] * x[1]);
        let t = fit_tree(&d, &exact(7), &mut seed::rng(0)).unwrap();
        for i in 0..t.len() {
            if let TreeNode::Leaf { n_samples, .. } = t.node(i) {
                assert!(n_samples >= 7);
            }
        }
    }

    #[test]
    fn leaves_are_means_of_their_rows() {
        let d = random_data(300, 3, |x| x[2].sin() + x[4]);
        let t = fit_tree(&d, &exact(4), &mut seed::rng(0)).unwrap();
        // route every row independently and recompute leaf means
        let mut sums = vec![(0.0, 0u32); t.len()];
        for (x, y) in d.x.iter().zip(&d.y) {
            let mut i = 0;
            while let TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } = t.node(i)
            {
                i = if x[feature] < threshold { left } else { right };
            }
            sums[i].0 += y;
            sums[i].1 += 1;
        }
        for i in 0..t.len() {
            if let TreeNode::Leaf { value, n_samples } = t.node(i) {
                assert_eq!(sums[i].1, n_samples);
                assert!((value - sums[i].0 / n_samples as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn depth_limit() {
        let d = random_data(500, 4, |x| x[0] + x[1]);
        let p = ForestParams {
            max_depth: Some(3),
            ..exact(1)
        };
        let t = fit_tree(&d, &p, &mut seed::rng(0)).unwrap();
        assert!(t.depth() <= 3);
        assert!(t.n_leaves() <= 8);
    }

    #[test]
    fn perfect_fit_on_distinct_rows() {
        let d = random_data(50, 5, |x| x.iter().sum::<f64>().cos());
        let t = fit_tree(&d, &exact(1), &mut seed::rng(0)).unwrap();
        let mse: f64 = d.x.iter().zip(&d.y).map(|(x, y)| (t.predict_one(x) - y).powi(2)).sum::<f64>() / 50.0;
        assert_eq!(mse, 0.0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(fit_tree(&TrainingData::default(), &exact(1), &mut seed::rng(0)).is_err());
        assert!(fit_forest(&TrainingData::default(), &ForestParams::default(), 0).is_err());
    }

    #[test]
    fn forest_is_deterministic() {
        let d = random_data(400, 6, |x| x[2] + 0.1 * x[0]);
        let p = ForestParams {
            n_trees: 5,
            ..Default::default()
        };
        let a = fit_forest(&d, &p, 11).unwrap();
        let b = fit_forest(&d, &p, 11).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        write_forest(&a, &mut ba).unwrap();
        write_forest(&b, &mut bb).unwrap();
        assert_eq!(ba, bb);
        assert_ne!(a, fit_forest(&d, &p, 12).unwrap());
    }

    #[test]
    fn bootstrap_unique_fraction() {
        let n = 20_000;
        let trees = 30;
        let mean: f64 = (0..trees)
            .map(|t| bootstrap_counts(99, t, n).iter().filter(|&&c| c > 0).count() as f64 / n as f64)
            .sum::<f64>()
            / trees as f64;
        let expected = 1.0 - (-1.0f64).exp();
        assert!((mean - expected).abs() < 0.02, "{mean}");
        let c = bootstrap_counts(99, 0, n);
        assert_eq!(c.iter().map(|&v| v as usize).sum::<usize>(), n);
        assert_ne!(c, bootstrap_counts(99, 1, n));
    }

    #[test]
    fn constant_target_has_zero_oob() {
        let d = random_data(100, 7, |_| 2.0);
        let m = fit_forest(&d, &ForestParams::default(), 3).unwrap();
        assert_eq!(m.oob_mse, Some(0.0));
        assert!(m.importance_uniform);
        assert!(m.importances.iter().all(|&v| v == 0.2));
    }

    #[test]
    fn oob_matches_independent_recount() {
        let d = random_data(150, 8, |x| x[3] * 2.0 - x[1]);
        let p = ForestParams {
            n_trees: 7,
            ..Default::default()
        };
        let m = fit_forest(&d, &p, 21).unwrap();
        let bags: Vec<Vec<u32>> = (0..7).map(|t| bootstrap_counts(21, t, d.len())).collect();
        let (mut se, mut k) = (0.0, 0);
        for i in 0..d.len() {
            let preds: Vec<f64> = (0..7)
                .filter(|&t| bags[t][i] == 0)
                .map(|t| walk(&m.trees[t], &d.x[i]))
                .collect();
            if !preds.is_empty() {
                let p = preds.iter().sum::<f64>() / preds.len() as f64;
                se += (p - d.y[i]).powi(2);
                k += 1;
            }
        }
        assert!(k > 0 && k < d.len());
        let expected = se / k as f64;
        assert!((m.oob_mse.unwrap() - expected).abs() <= 1e-12 * expected.max(1.0));
    }

    #[test]
    fn no_bootstrap_means_no_oob() {
        let d = random_data(30, 9, |x| x[0]);
        assert_eq!(fit_forest(&d, &exact(1), 0).unwrap().oob_mse, None);
    }

    #[test]
    fn single_tree_forest_equals_tree() {
        let d = random_data(200, 10, |x| x[0] - x[4]);
        let m = fit_forest(&d, &exact(2), 0).unwrap();
        let t = fit_tree(&d, &exact(2), &mut seed::rng(0)).unwrap();
        assert_eq!(m.trees[0], t);
        let probe = random_data(100, 11, |_| 0.0);
        let got = m.predict(&probe.x);
        for (g, x) in got.iter().zip(&probe.x) {
            assert_eq!(*g, t.predict_one(x));
        }
    }

    #[test]
    fn prediction_matches_brute_force_average() {
        let d = random_data(300, 12, |x| (x[2] - 5.0).abs() + x[3]);
        let p = ForestParams {
            n_trees: 6,
            ..Default::default()
        };
        let m = fit_forest(&d, &p, 5).unwrap();
        let probe = random_data(200, 13, |_| 0.0);
        let got = m.predict(&probe.x);
        for (g, x) in got.iter().zip(&probe.x) {
            let want = m.trees.iter().map(|t| walk(t, x)).sum::<f64>() / 6.0;
            assert!((g - want).abs() <= 1e-12 * want.abs().max(1.0));
            assert_eq!(*g, m.predict_one(x));
        }
    }

    #[test]
    fn single_informative_feature_dominates_importance() {
        let d = random_data(2000, 14, |x| 1.0 / (1.0 + x[2]));
        let m = fit_forest(&d, &ForestParams { n_trees: 10, ..Default::default() }, 1).unwrap();
        assert!(m.importances[2] >= 0.99, "{:?}", m.importances);
        assert!((m.importances.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(!m.importance_uniform);
    }

    #[test]
    fn importance_matches_hand_count() {
        // a single split on feature 2 carries all the decrease
        let mut a = [0.0; N_FEATURES];
        let mut b = [0.0; N_FEATURES];
        a[2] = 1.0;
        b[2] = 3.0;
        let d = TrainingData::new(vec![a, b], vec![0.0, 10.0]).unwrap();
        let m = fit_forest(&d, &exact(1), 0).unwrap();
        assert_eq!(m.importances, [0.0, 0.0, 1.0, 0.0, 0.0]);
        // root MSE 25 over 2 rows, children pure
        assert!((m.trees[0].impurity_decrease()[2] - 25.0).abs() < 1e-12);
    }

    #[test]
    fn feature_subsampling_is_seeded() {
        let d = random_data(500, 15, |x| x[0] + x[1] + x[2]);
        let p = ForestParams {
            n_trees: 3,
            features_per_split: 2,
            ..Default::default()
        };
        assert_eq!(fit_forest(&d, &p, 4).unwrap(), fit_forest(&d, &p, 4).unwrap());
        assert!(ForestParams { features_per_split: 0, ..p }.validate().is_err());
        assert!(ForestParams { features_per_split: 6, ..p }.validate().is_err());
        assert!(ForestParams { n_trees: 0, ..p }.validate().is_err());
    }

    #[test]
    fn monotone_step_function() {
        let d = random_data(400, 16, |x| x[2]);
        let t = fit_tree(&d, &exact(1), &mut seed::rng(0)).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=1000 {
            let mut x = [5.0; N_FEATURES];
            x[2] = k as f64 * 0.01;
            let p = t.predict_one(&x);
            assert!(p >= prev);
            prev = p;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn predictions_stay_within_target_range(seed in any::<u64>(), n in 2usize..120, leaf in 1usize..6) {
            let d = random_data(n, seed, |x| (x[0] * x[3]).sin() * 4.0 + x[1]);
            let p = ForestParams { n_trees: 4, min_samples_leaf: leaf, ..Default::default() };
            let m = fit_forest(&d, &p, seed).unwrap();
            let lo = d.y.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = d.y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let slack = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
            let probe = random_data(64, seed ^ 1, |_| 0.0);
            for v in m.predict(&probe.x) {
                prop_assert!(v >= lo - slack && v <= hi + slack);
            }
            prop_assert!((m.importances.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(m.importances.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn shuffled_rows_give_identical_trees(seed in any::<u64>(), n in 2usize..150) {
            let d = random_data(n, seed, |x| x[1] * x[2] - x[4]);
            let weights = bootstrap_counts(seed, 0, n);
            let p = ForestParams { min_samples_leaf: 2, ..ForestParams::default() };
            let base = fit_tree_weighted(&d, &Presorted::new(&d), &weights, &p, &mut seed::rng(1));

            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut seed::rng(seed ^ 7));
            let shuffled = TrainingData::new(perm.iter().map(|&i| d.x[i]).collect(), perm.iter().map(|&i| d.y[i]).collect()).unwrap();
            let w2: Vec<u32> = perm.iter().map(|&i| weights[i]).collect();
            let other = fit_tree_weighted(&shuffled, &Presorted::new(&shuffled), &w2, &p, &mut seed::rng(1));
            match (base, other) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
            }
        }
    }
}
