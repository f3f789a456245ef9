//! Downstream predictors: L2-regularized logistic regression fitted by
//! Newton's method, and bagged depth-limited decision trees.

use nalgebra::{DMatrix, DVector};
use ndarray::{ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::nn::sigmoid;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    LinearClassifier { l2: f64 },
    TreeEnsemble { n_trees: usize, max_depth: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamModelSpec {
    #[serde(flatten)]
    pub kind: ModelKind,
    pub seed: u64,
}

impl DownstreamModelSpec {
    pub fn linear(seed: u64) -> Self {
        Self {
            kind: ModelKind::LinearClassifier { l2: 1.0 },
            seed,
        }
    }

    pub fn forest(seed: u64) -> Self {
        Self {
            kind: ModelKind::TreeEnsemble {
                n_trees: 100,
                max_depth: 8,
            },
            seed,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ModelKind::LinearClassifier { .. } => "lr",
            ModelKind::TreeEnsemble { .. } => "rf",
        }
    }
}

/// Binary logistic regression with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl Logistic {
    /// Fit `P(y = 1 | x)`; `l2` penalizes the summed log-loss.
    pub fn fit(x: ArrayView2<'_, f64>, y: &[bool], l2: f64) -> Result<Self> {
        let (n, d) = x.dim();
        if n != y.len() || n == 0 {
            return Err(Error::ShapeMismatch(format!("{n} rows but {} targets", y.len())));
        }
        let p = d + 1;
        let mut w = DVector::<f64>::zeros(p);
        let design = |i: usize, j: usize| if j < d { x[[i, j]] } else { 1.0 };
        for _ in 0..50 {
            let mut grad = DVector::<f64>::zeros(p);
            let mut hess = DMatrix::<f64>::zeros(p, p);
            for i in 0..n {
                let z: f64 = (0..p).map(|j| design(i, j) * w[j]).sum();
                let mu = sigmoid(z);
                let r = mu - f64::from(u8::from(y[i]));
                let s = (mu * (1.0 - mu)).max(1e-10);
                for a in 0..p {
                    let xa = design(i, a);
                    if xa == 0.0 {
                        continue;
                    }
                    grad[a] += r * xa;
                    for b in a..p {
                        hess[(a, b)] += s * xa * design(i, b);
                    }
                }
            }
            for a in 0..p {
                for b in 0..a {
                    hess[(a, b)] = hess[(b, a)];
                }
            }
            for a in 0..d {
                grad[a] += l2 * w[a];
                hess[(a, a)] += l2;
            }
            hess[(d, d)] += 1e-8;
            let step = match hess.clone().cholesky() {
                Some(c) => c.solve(&grad),
                None => hess.lu().solve(&grad).ok_or_else(|| Error::Degenerate("singular Hessian".into()))?,
            };
            w -= &step;
            if step.amax() < 1e-8 {
                break;
            }
        }
        Ok(Self {
            weights: w.as_slice()[..d].to_vec(),
            intercept: w[d],
        })
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        x.outer_iter()
            .map(|row| sigmoid(row.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() + self.intercept))
            .collect()
    }
}

/// Multi-class classifier from one-vs-rest logistic models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneVsRest {
    pub classes: usize,
    pub models: Vec<Logistic>,
}

impl OneVsRest {
    pub fn fit(x: ArrayView2<'_, f64>, y: &[usize], classes: usize, l2: f64) -> Result<Self> {
        if classes == 2 {
            let t: Vec<bool> = y.iter().map(|&v| v == 1).collect();
            return Ok(Self {
                classes,
                models: vec![Logistic::fit(x, &t, l2)?],
            });
        }
        let models = (0..classes)
            .map(|c| {
                let t: Vec<bool> = y.iter().map(|&v| v == c).collect();
                Logistic::fit(x, &t, l2)
            })
            .collect::<Result<_>>()?;
        Ok(Self { classes, models })
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        if self.classes == 2 {
            return self.models[0]
                .predict_proba(x)
                .into_iter()
                .map(|p| usize::from(p >= 0.5))
                .collect();
        }
        let scores: Vec<Vec<f64>> = self.models.iter().map(|m| m.predict_proba(x)).collect();
        (0..x.nrows())
            .map(|i| {
                (0..self.classes)
                    .max_by(|&a, &b| scores[a][i].total_cmp(&scores[b][i]).then(b.cmp(&a)))
                    .expect("classes > 0")
            })
            .collect()
    }
}

const MAX_BINS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn score(&self, row: ArrayView1<'_, f64>) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(p) => return p,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }
}

/// Candidate thresholds per feature: midpoints between up to `MAX_BINS`
/// quantiles of the training values.
fn candidate_thresholds(x: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    x.axis_iter(Axis(1))
        .map(|col| {
            let mut v: Vec<f64> = col.to_vec();
            v.sort_by(f64::total_cmp);
            v.dedup();
            if v.len() <= 1 {
                return Vec::new();
            }
            if v.len() <= MAX_BINS + 1 {
                return v.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
            }
            let mut t: Vec<f64> = (1..=MAX_BINS)
                .map(|q| {
                    let i = q * (v.len() - 1) / (MAX_BINS + 1);
                    0.5 * (v[i] + v[i + 1])
                })
                .collect();
            t.dedup();
            t
        })
        .collect()
}

struct Grower<'x, 'y, 't> {
    x: ArrayView2<'x, f64>,
    y: &'y [bool],
    thresholds: &'t [Vec<f64>],
    max_depth: usize,
    mtry: usize,
    nodes: Vec<Node>,
}

fn gini(pos: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p) * n
}

impl Grower<'_, '_, '_> {
    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut rng::Rng) -> usize {
        let n = idx.len() as f64;
        let pos = idx.iter().filter(|&&i| self.y[i]).count() as f64;
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf(pos / n));
        if depth >= self.max_depth || pos == 0.0 || pos == n || idx.len() < 2 {
            return slot;
        }
        let d = self.x.ncols();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(rng);
        features.truncate(self.mtry);
        let parent = gini(pos, n);
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &features {
            let th = &self.thresholds[f];
            if th.is_empty() {
                continue;
            }
            let mut cnt = vec![0.0; th.len() + 1];
            let mut cpos = vec![0.0; th.len() + 1];
            for &i in idx.iter() {
                let v = self.x[[i, f]];
                let b = th.partition_point(|&t| t < v);
                cnt[b] += 1.0;
                if self.y[i] {
                    cpos[b] += 1.0;
                }
            }
            let (mut ln, mut lp) = (0.0, 0.0);
            for (b, &t) in th.iter().enumerate() {
                ln += cnt[b];
                lp += cpos[b];
                if ln == 0.0 || ln == n {
                    continue;
                }
                let gain = parent - gini(lp, ln) - gini(pos - lp, n - ln);
                if best.is_none_or(|(g, _, _)| gain > g + 1e-12) {
                    best = Some((gain, f, t));
                }
            }
        }
        let Some((gain, feature, threshold)) = best else {
            return slot;
        };
        if gain <= 1e-12 {
            return slot;
        }
        let mut split = 0;
        for k in 0..idx.len() {
            if self.x[[idx[k], feature]] <= threshold {
                idx.swap(k, split);
                split += 1;
            }
        }
        let (l, r) = idx.split_at_mut(split);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[slot] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        slot
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
}

impl Forest {
    pub fn fit(x: ArrayView2<'_, f64>, y: &[bool], n_trees: usize, max_depth: usize, seed: u64) -> Result<Self> {
        let n = x.nrows();
        if n == 0 || n != y.len() || n_trees == 0 {
            return Err(Error::InvalidArgument("forest needs rows, matching targets and trees".into()));
        }
        let thresholds = candidate_thresholds(x);
        let mtry = ((x.ncols() as f64).sqrt().ceil() as usize).max(1);
        let mut r = rng::from_seed(seed);
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let mut idx: Vec<usize> = (0..n).map(|_| r.gen_range(0..n)).collect();
            let mut g = Grower {
                x,
                y,
                thresholds: &thresholds,
                max_depth,
                mtry,
                nodes: Vec::new(),
            };
            g.grow(&mut idx, 0, &mut r);
            trees.push(Tree { nodes: g.nodes });
        }
        Ok(Self { trees })
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        x.outer_iter()
            .map(|row| self.trees.iter().map(|t| t.score(row)).sum::<f64>() / self.trees.len() as f64)
            .collect()
    }
}

/// A fitted downstream model for a binary task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Predictor {
    Linear(Logistic),
    Forest(Forest),
}

impl Predictor {
    /// Score for the positive class.
    pub fn scores(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        match self {
            Predictor::Linear(m) => m.predict_proba(x),
            Predictor::Forest(m) => m.predict_proba(x),
        }
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        self.scores(x).into_iter().map(|p| usize::from(p >= 0.5)).collect()
    }
}

/// Train a downstream model on rows `x` with binary targets.
pub fn train_downstream(x: ArrayView2<'_, f64>, y: &[usize], spec: &DownstreamModelSpec) -> Result<Predictor> {
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if let Some(bad) = y.iter().find(|&&v| v > 1) {
        return Err(Error::InvalidArgument(format!("downstream tasks are binary, got class {bad}")));
    }
    let t: Vec<bool> = y.iter().map(|&v| v == 1).collect();
    if t.iter().all(|&v| v) || t.iter().all(|&v| !v) {
        return Err(Error::Degenerate("training targets contain a single class".into()));
    }
    Ok(match spec.kind {
        ModelKind::LinearClassifier { l2 } => Predictor::Linear(Logistic::fit(x, &t, l2)?),
        ModelKind::TreeEnsemble { n_trees, max_depth } => {
            Predictor::Forest(Forest::fit(x, &t, n_trees, max_depth, spec.seed)?)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn rows(data: &[[f64; 2]]) -> Array2<f64> {
        Array2::from_shape_fn((data.len(), 2), |(i, j)| data[i][j])
    }

    fn separable(n: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut r = rng::from_seed(seed);
        let x = Array2::from_shape_fn((n, 2), |_| r.gen_range(-1.0..1.0));
        let y = x.outer_iter().map(|row| usize::from(row[0] + 0.5 * row[1] > 0.1)).collect();
        (x, y)
    }

    fn accuracy(p: &[usize], y: &[usize]) -> f64 {
        p.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
    }

    #[test]
    fn both_models_fit_separable_data() {
        let (x, y) = separable(600, 1);
        for spec in [DownstreamModelSpec::linear(0), DownstreamModelSpec::forest(0)] {
            let m = train_downstream(x.view(), &y, &spec).unwrap();
            let acc = accuracy(&m.predict(x.view()), &y);
            assert!(acc >= 0.99 || (spec.name() == "rf" && acc >= 0.97), "{} {acc}", spec.name());
        }
        let lr = DownstreamModelSpec {
            kind: ModelKind::LinearClassifier { l2: 1e-3 },
            seed: 0,
        };
        let m = train_downstream(x.view(), &y, &lr).unwrap();
        assert!(accuracy(&m.predict(x.view()), &y) >= 0.99);
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, y) = separable(300, 2);
        let a = train_downstream(x.view(), &y, &DownstreamModelSpec::forest(5)).unwrap();
        let b = train_downstream(x.view(), &y, &DownstreamModelSpec::forest(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_rejected() {
        let x = rows(&[[0.0, 1.0], [1.0, 0.0]]);
        assert!(train_downstream(x.view(), &[1, 1], &DownstreamModelSpec::linear(0)).is_err());
    }

    #[test]
    fn logistic_recovers_known_coefficients() {
        let mut r = rng::from_seed(3);
        let n = 20_000;
        let x = Array2::from_shape_fn((n, 1), |_| r.gen_range(-2.0..2.0));
        let y: Vec<bool> = x.column(0).iter().map(|&v| r.gen_bool(sigmoid(1.5 * v - 0.5))).collect();
        let m = Logistic::fit(x.view(), &y, 1e-6).unwrap();
        assert!((m.weights[0] - 1.5).abs() < 0.1, "{m:?}");
        assert!((m.intercept + 0.5).abs() < 0.1, "{m:?}");
    }

    #[test]
    fn one_vs_rest_three_classes() {
        let x = rows(&[[0.0, 0.0], [0.1, 0.0], [1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]]);
        let y = [0, 0, 1, 1, 2, 2];
        let m = OneVsRest::fit(x.view(), &y, 3, 1e-3).unwrap();
        assert_eq!(m.predict(x.view()), y.to_vec());
    }
}
