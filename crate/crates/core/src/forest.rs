//! Decision trees and random forests for feasibility classification and
//! criteria regression over ε-vectors.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_TAG: &str = "sdo-forest/1";

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("training data is empty")]
    EmptyData,
    #[error("expected {expected} features, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("non-finite value in row {row}")]
    NonFinite { row: usize },
    #[error("class labels must be nonnegative integers, found {0}")]
    InvalidLabel(f64),
    #[error("{rows} rows cannot be split into {k} folds")]
    TooFewRows { rows: usize, k: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Classify,
    Regress,
}

/// Feature rows with one label each. Classification labels are class ids
/// stored as integral floats.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl TrainingSet {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self, ForestError> {
        let set = Self { features, labels };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), ForestError> {
        if self.features.is_empty() {
            return Err(ForestError::EmptyData);
        }
        if self.labels.len() != self.features.len() {
            return Err(ForestError::ShapeMismatch { expected: self.features.len(), found: self.labels.len() });
        }
        let width = self.features[0].len();
        for (i, row) in self.features.iter().enumerate() {
            if row.len() != width {
                return Err(ForestError::ShapeMismatch { expected: width, found: row.len() });
            }
            if !row.iter().all(|v| v.is_finite()) || !self.labels[i].is_finite() {
                return Err(ForestError::NonFinite { row: i });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self { features: idx.iter().map(|&i| self.features[i].clone()).collect(), labels: idx.iter().map(|&i| self.labels[i]).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `ceil(sqrt(width))`.
    pub feature_subsample: Option<usize>,
    /// Fraction of rows drawn per tree.
    pub row_subsample: f64,
    /// Draw rows with replacement.
    pub bootstrap: bool,
}

impl Default for Hyper {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: None, min_leaf: 1, feature_subsample: None, row_subsample: 1.0, bootstrap: true }
    }
}

impl Hyper {
    /// One tree on all rows and all features.
    pub fn single_tree() -> Self {
        Self { n_trees: 1, feature_subsample: Some(usize::MAX), bootstrap: false, ..Self::default() }
    }

    fn validate(&self) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidHyper("n_trees must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(ForestError::InvalidHyper("min_leaf must be at least 1".into()));
        }
        if !(self.row_subsample > 0.0 && self.row_subsample <= 1.0) {
            return Err(ForestError::InvalidHyper(format!("row_subsample {} outside (0, 1]", self.row_subsample)));
        }
        if self.feature_subsample == Some(0) {
            return Err(ForestError::InvalidHyper("feature_subsample must be at least 1".into()));
        }
        Ok(())
    }

    fn features_per_split(&self, width: usize) -> usize {
        self.feature_subsample.unwrap_or_else(|| (width as f64).sqrt().ceil() as usize).clamp(1, width.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf(f64),
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, at: usize) -> usize {
            match t.nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }
}

fn class_of(label: f64) -> Result<usize, ForestError> {
    if label >= 0.0 && label.fract() == 0.0 && label < u32::MAX as f64 {
        Ok(label as usize)
    } else {
        Err(ForestError::InvalidLabel(label))
    }
}

/// Most frequent class; ties go to the smallest id.
fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

/// Sorted distinct values of each feature and the rank of every row's value.
struct Bins {
    values: Vec<Vec<f64>>,
    rank: Vec<Vec<u32>>,
}

impl Bins {
    fn new(data: &TrainingSet) -> Self {
        let mut values = Vec::with_capacity(data.width());
        let mut rank = Vec::with_capacity(data.width());
        for f in 0..data.width() {
            let mut v: Vec<f64> = data.features.iter().map(|r| r[f]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            rank.push(data.features.iter().map(|r| v.binary_search_by(|x| x.total_cmp(&r[f])).unwrap() as u32).collect());
            values.push(v);
        }
        Self { values, rank }
    }
}

struct Builder<'a> {
    data: &'a TrainingSet,
    bins: &'a Bins,
    mode: Mode,
    classes: &'a [usize],
    n_classes: usize,
    hyper: &'a Hyper,
    per_split: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct Best {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Builder<'_> {
    fn leaf_value(&self, idx: &[usize]) -> f64 {
        match self.mode {
            Mode::Classify => {
                let mut counts = vec![0; self.n_classes];
                for &i in idx {
                    counts[self.classes[i]] += 1;
                }
                majority(&counts) as f64
            }
            Mode::Regress => idx.iter().map(|&i| self.data.labels[i]).sum::<f64>() / idx.len() as f64,
        }
    }

    fn is_pure(&self, idx: &[usize]) -> bool {
        let first = self.data.labels[idx[0]];
        idx.iter().all(|&i| self.data.labels[i] == first)
    }

    /// Impurity of a node holding `idx`, in the same units as split scores.
    fn node_score(&self, idx: &[usize]) -> f64 {
        match self.mode {
            Mode::Classify => {
                let mut counts = vec![0usize; self.n_classes];
                for &i in idx {
                    counts[self.classes[i]] += 1;
                }
                weighted_gini(&counts, idx.len())
            }
            Mode::Regress => {
                let s: f64 = idx.iter().map(|&i| self.data.labels[i]).sum();
                -s * s / idx.len() as f64
            }
        }
    }

    /// Lowest weighted impurity over candidate features and midpoints. Ties
    /// keep the earlier (feature, threshold).
    fn best_split(&mut self, idx: &[usize]) -> Option<Best> {
        let width = self.data.width();
        let mut features: Vec<usize> = (0..width).collect();
        if self.per_split < width {
            for k in 0..self.per_split {
                let j = self.rng.gen_range(k..width);
                features.swap(k, j);
            }
            features.truncate(self.per_split);
            features.sort_unstable();
        }
        let min_leaf = self.hyper.min_leaf;
        let n = idx.len();
        let nc = self.n_classes.max(1);
        let mut best: Option<Best> = None;
        for &f in &features {
            let values = &self.bins.values[f];
            let rank = &self.bins.rank[f];
            let nb = values.len();
            // Per-bin row counts, then class counts or label sums.
            let mut count = vec![0usize; nb];
            let mut class_count = vec![0usize; if self.mode == Mode::Classify { nb * nc } else { 0 }];
            let mut sum = vec![0.0; if self.mode == Mode::Regress { nb } else { 0 }];
            for &i in idx {
                let b = rank[i] as usize;
                count[b] += 1;
                match self.mode {
                    Mode::Classify => class_count[b * nc + self.classes[i]] += 1,
                    Mode::Regress => sum[b] += self.data.labels[i],
                }
            }
            let mut left_counts = vec![0usize; nc];
            let mut right_counts = vec![0usize; nc];
            let (mut left_sum, mut right_sum) = (0.0, 0.0);
            match self.mode {
                Mode::Classify => idx.iter().for_each(|&i| right_counts[self.classes[i]] += 1),
                Mode::Regress => right_sum = sum.iter().sum(),
            }
            let mut nl = 0;
            let mut prev: Option<usize> = None;
            for b in 0..nb {
                if count[b] == 0 {
                    continue;
                }
                if let Some(pb) = prev {
                    if nl >= min_leaf && n - nl >= min_leaf {
                        let score = match self.mode {
                            Mode::Classify => weighted_gini(&left_counts, nl) + weighted_gini(&right_counts, n - nl),
                            Mode::Regress => -left_sum * left_sum / nl as f64 - right_sum * right_sum / (n - nl) as f64,
                        };
                        if best.as_ref().is_none_or(|bs| score < bs.score) {
                            let (lo, hi) = (values[pb], values[b]);
                            let mid = lo + (hi - lo) / 2.0;
                            // Guard against a midpoint that rounds onto the upper value.
                            let threshold = if mid < hi { mid } else { lo };
                            best = Some(Best { feature: f, threshold, score });
                        }
                    }
                }
                nl += count[b];
                match self.mode {
                    Mode::Classify => {
                        for c in 0..nc {
                            left_counts[c] += class_count[b * nc + c];
                            right_counts[c] -= class_count[b * nc + c];
                        }
                    }
                    Mode::Regress => {
                        left_sum += sum[b];
                        right_sum -= sum[b];
                    }
                }
                prev = Some(b);
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf(self.leaf_value(&idx)));
        let too_deep = self.hyper.max_depth.is_some_and(|d| depth >= d);
        if too_deep || idx.len() < 2 * self.hyper.min_leaf || self.is_pure(&idx) {
            return at;
        }
        let parent = self.node_score(&idx);
        let Some(best) = self.best_split(&idx) else { return at };
        let scale = match self.mode {
            Mode::Classify => idx.len() as f64,
            Mode::Regress => parent.abs().max(1.0),
        };
        if best.score >= parent - 1e-12 * scale {
            return at;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.data.features[i][best.feature] <= best.threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[at] = Node::Split { feature: best.feature, threshold: best.threshold, left, right };
        at
    }
}

/// `n * gini` for the given class counts.
fn weighted_gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let sq: f64 = counts.iter().map(|&c| (c * c) as f64).sum();
    n as f64 - sq / n as f64
}

fn class_ids(data: &TrainingSet, mode: Mode) -> Result<(Vec<usize>, usize), ForestError> {
    match mode {
        Mode::Regress => Ok((Vec::new(), 0)),
        Mode::Classify => {
            let ids = data.labels.iter().map(|&l| class_of(l)).collect::<Result<Vec<_>, _>>()?;
            let n = ids.iter().max().map_or(0, |m| m + 1);
            Ok((ids, n))
        }
    }
}

/// Grows one tree on the rows listed in `rows` (repeats allowed).
fn grow_tree(
    data: &TrainingSet,
    bins: &Bins,
    classes: &[usize],
    n_classes: usize,
    mode: Mode,
    hyper: &Hyper,
    rows: Vec<usize>,
    rng: ChaCha8Rng,
) -> Tree {
    let per_split = hyper.features_per_split(data.width());
    let mut b = Builder { data, bins, mode, classes, n_classes, hyper, per_split, rng, nodes: Vec::new() };
    b.grow(rows, 0);
    Tree { nodes: b.nodes }
}

/// Greedy binary tree on all rows; `seed` drives feature subsampling only.
pub fn train_tree(data: &TrainingSet, mode: Mode, hyper: &Hyper, seed: u64) -> Result<Tree, ForestError> {
    data.validate()?;
    hyper.validate()?;
    let (classes, n_classes) = class_ids(data, mode)?;
    let bins = Bins::new(data);
    Ok(grow_tree(data, &bins, &classes, n_classes, mode, hyper, (0..data.len()).collect(), tree_rng(seed, 0)))
}

/// Independent stream per tree so results do not depend on training order.
fn tree_rng(seed: u64, tree: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub mode: Mode,
    pub width: usize,
    pub seed: u64,
    pub hyper: Hyper,
    pub trees: Vec<Tree>,
}

pub fn train_forest(data: &TrainingSet, mode: Mode, hyper: &Hyper, seed: u64) -> Result<ForestModel, ForestError> {
    data.validate()?;
    hyper.validate()?;
    let n = data.len();
    let draw = ((n as f64 * hyper.row_subsample).round() as usize).max(1);
    let (classes, n_classes) = class_ids(data, mode)?;
    let bins = Bins::new(data);
    let mut trees = Vec::with_capacity(hyper.n_trees);
    for t in 0..hyper.n_trees {
        let mut rng = tree_rng(seed, t as u64);
        let rows: Vec<usize> = if !hyper.bootstrap && draw == n {
            (0..n).collect()
        } else if hyper.bootstrap {
            (0..draw).map(|_| rng.gen_range(0..n)).collect()
        } else {
            let mut all: Vec<usize> = (0..n).collect();
            for k in 0..draw {
                let j = rng.gen_range(k..n);
                all.swap(k, j);
            }
            all.truncate(draw);
            all
        };
        trees.push(grow_tree(data, &bins, &classes, n_classes, mode, hyper, rows, rng));
    }
    Ok(ForestModel { mode, width: data.width(), seed, hyper: hyper.clone(), trees })
}

impl ForestModel {
    /// Majority vote (ties to the smallest class id) or mean of tree outputs.
    pub fn predict(&self, x: &[f64]) -> Result<f64, ForestError> {
        if x.len() != self.width {
            return Err(ForestError::ShapeMismatch { expected: self.width, found: x.len() });
        }
        Ok(match self.mode {
            Mode::Regress => self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64,
            Mode::Classify => {
                let mut counts: Vec<usize> = Vec::new();
                for t in &self.trees {
                    let c = t.predict(x) as usize;
                    if c >= counts.len() {
                        counts.resize(c + 1, 0);
                    }
                    counts[c] += 1;
                }
                majority(&counts) as f64
            }
        })
    }

    pub fn predict_many(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>, ForestError> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let h = &self.hyper;
        let opt = |v: Option<usize>| v.map_or("none".to_string(), |v| v.to_string());
        let mode = match self.mode {
            Mode::Classify => "classify",
            Mode::Regress => "regress",
        };
        writeln!(s, "{FORMAT_TAG}").unwrap();
        writeln!(s, "mode {mode}").unwrap();
        writeln!(s, "width {}", self.width).unwrap();
        writeln!(s, "seed {}", self.seed).unwrap();
        writeln!(
            s,
            "hyper {} {} {} {} {:?} {}",
            h.n_trees,
            opt(h.max_depth),
            h.min_leaf,
            opt(h.feature_subsample),
            h.row_subsample,
            h.bootstrap
        )
        .unwrap();
        for t in &self.trees {
            writeln!(s, "tree {}", t.nodes.len()).unwrap();
            for n in &t.nodes {
                match n {
                    Node::Leaf(v) => writeln!(s, "L {v:?}").unwrap(),
                    Node::Split { feature, threshold, left, right } => writeln!(s, "S {feature} {threshold:?} {left} {right}").unwrap(),
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ForestError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        let bad = |line: usize, reason: &str| ForestError::Format { line, reason: reason.to_string() };
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(0, &format!("missing {what}")));
        let (ln, tag) = next("format tag")?;
        if tag != FORMAT_TAG {
            return Err(bad(ln, &format!("expected {FORMAT_TAG}")));
        }
        fn field<'b>(line: (usize, &'b str), key: &str) -> Result<(usize, Vec<&'b str>), ForestError> {
            let mut parts = line.1.split_whitespace();
            if parts.next() != Some(key) {
                return Err(ForestError::Format { line: line.0, reason: format!("expected `{key}`") });
            }
            Ok((line.0, parts.collect()))
        }
        fn num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, ForestError> {
            s.parse().map_err(|_| ForestError::Format { line, reason: format!("bad number `{s}`") })
        }
        fn opt(line: usize, s: &str) -> Result<Option<usize>, ForestError> {
            if s == "none" {
                Ok(None)
            } else {
                num(line, s).map(Some)
            }
        }
        let (ln, v) = field(next("mode")?, "mode")?;
        let mode = match v.as_slice() {
            ["classify"] => Mode::Classify,
            ["regress"] => Mode::Regress,
            _ => return Err(bad(ln, "unknown mode")),
        };
        let (ln, v) = field(next("width")?, "width")?;
        let width: usize = num(ln, v.first().ok_or_else(|| bad(ln, "missing width"))?)?;
        let (ln, v) = field(next("seed")?, "seed")?;
        let seed: u64 = num(ln, v.first().ok_or_else(|| bad(ln, "missing seed"))?)?;
        let (ln, v) = field(next("hyper")?, "hyper")?;
        let [n_trees, depth, min_leaf, fs, rs, bs] = v.as_slice() else { return Err(bad(ln, "expected 6 hyperparameters")) };
        let hyper = Hyper {
            n_trees: num(ln, n_trees)?,
            max_depth: opt(ln, depth)?,
            min_leaf: num(ln, min_leaf)?,
            feature_subsample: opt(ln, fs)?,
            row_subsample: num(ln, rs)?,
            bootstrap: num(ln, bs)?,
        };
        let mut trees = Vec::with_capacity(hyper.n_trees);
        for _ in 0..hyper.n_trees {
            let (ln, v) = field(next("tree")?, "tree")?;
            let count: usize = num(ln, v.first().ok_or_else(|| bad(ln, "missing node count"))?)?;
            let mut nodes = Vec::with_capacity(count);
            for _ in 0..count {
                let (ln, line) = next("node")?;
                let parts: Vec<&str> = line.split_whitespace().collect();
                nodes.push(match parts.as_slice() {
                    ["L", v] => Node::Leaf(num(ln, v)?),
                    ["S", f, t, l, r] => {
                        let (feature, left, right): (usize, usize, usize) = (num(ln, f)?, num(ln, l)?, num(ln, r)?);
                        if feature >= width || left >= count || right >= count {
                            return Err(bad(ln, "node index out of range"));
                        }
                        Node::Split { feature, threshold: num(ln, t)?, left, right }
                    }
                    _ => return Err(bad(ln, "malformed node")),
                });
            }
            trees.push(Tree { nodes });
        }
        if let Some((ln, extra)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(bad(ln, &format!("unexpected trailing content `{extra}`")));
        }
        Ok(Self { mode, width, seed, hyper, trees })
    }

    pub fn save(&self, path: &Path) -> Result<(), ForestError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ForestError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvMetrics {
    pub mode: Mode,
    /// Accuracy (classification) or mean absolute error (regression),
    /// averaged over all folds.
    pub mean: f64,
    pub per_fold: Vec<f64>,
}

/// `reps` rounds of `k`-fold cross-validation with seeded fold assignment.
pub fn cross_validate(data: &TrainingSet, mode: Mode, hyper: &Hyper, k: usize, reps: usize, seed: u64) -> Result<CvMetrics, ForestError> {
    data.validate()?;
    if k < 2 || data.len() < k {
        return Err(ForestError::TooFewRows { rows: data.len(), k });
    }
    let n = data.len();
    let mut per_fold = Vec::with_capacity(k * reps);
    for rep in 0..reps {
        let mut rng = tree_rng(seed, u64::MAX - rep as u64);
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for fold in 0..k {
            let test: Vec<usize> = order.iter().enumerate().filter(|(p, _)| p % k == fold).map(|(_, &i)| i).collect();
            let train: Vec<usize> = order.iter().enumerate().filter(|(p, _)| p % k != fold).map(|(_, &i)| i).collect();
            let model = train_forest(&data.subset(&train), mode, hyper, seed.wrapping_add((rep * k + fold) as u64))?;
            let mut score = 0.0;
            for &i in &test {
                let y = model.predict(&data.features[i])?;
                score += match mode {
                    Mode::Classify => f64::from(u8::from(y == data.labels[i])),
                    Mode::Regress => (y - data.labels[i]).abs(),
                };
            }
            per_fold.push(score / test.len() as f64);
        }
    }
    let mean = per_fold.iter().sum::<f64>() / per_fold.len() as f64;
    Ok(CvMetrics { mode, mean, per_fold })
}
