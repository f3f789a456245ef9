//! Utility, fairness and distributional metrics.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::models::{DownstreamModelSpec, Logistic, ModelKind, OneVsRest};
use crate::data::{Encoding, SegmentKind};
use crate::{rng, Error, Result};

/// Downstream utility on one binary task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
}

impl TaskMetrics {
    /// Metrics with `positive` as the positive class. `scores` are the
    /// model's probabilities of class 1.
    pub fn compute(pred: &[usize], scores: &[f64], labels: &[usize], positive: usize) -> Self {
        let n = labels.len().max(1) as f64;
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        let mut correct = 0.0;
        for (&p, &y) in pred.iter().zip(labels) {
            correct += f64::from(u8::from(p == y));
            match (p == positive, y == positive) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
        let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        let pos_scores: Vec<f64> = scores
            .iter()
            .map(|&s| if positive == 1 { s } else { 1.0 - s })
            .collect();
        let truth: Vec<bool> = labels.iter().map(|&y| y == positive).collect();
        Self {
            accuracy: correct / n,
            precision,
            recall,
            f1,
            auroc: auroc(&pos_scores, &truth),
            auprc: average_precision(&pos_scores, &truth),
        }
    }
}

/// Ranks starting at 1, ties sharing their average rank.
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve via the Mann-Whitney rank statistic. `None`
/// when only one class is present.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return None;
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    Some((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// ROC area by trapezoidal integration over distinct thresholds.
pub fn auroc_trapezoid(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0.0, 0.0);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let (tpr, fpr) = (tp / n_pos, fp / n_neg);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Some(area)
}

/// Average precision: precision at each distinct threshold weighted by the
/// recall increment.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    if n_pos == 0.0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut prev_recall, mut ap) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            tp += f64::from(u8::from(labels[order[i]]));
            seen += 1.0;
            i += 1;
        }
        let recall = tp / n_pos;
        ap += (recall - prev_recall) * (tp / seen);
        prev_recall = recall;
    }
    Some(ap)
}

fn group_indices(sensitive: &[usize], g: usize) -> Vec<usize> {
    (0..sensitive.len()).filter(|&i| sensitive[i] == g).collect()
}

/// Positive-prediction rate of group `a` minus that of group `b`.
pub fn parity_gap(pred: &[usize], sensitive: &[usize], a: usize, b: usize) -> Result<f64> {
    let rate = |g: usize| -> Result<f64> {
        let idx = group_indices(sensitive, g);
        if idx.is_empty() {
            return Err(Error::InvalidArgument(format!("sensitive group {g} is empty")));
        }
        Ok(idx.iter().filter(|&&i| pred[i] == 1).count() as f64 / idx.len() as f64)
    };
    Ok(rate(a)? - rate(b)?)
}

/// AUROC of group `a` minus that of group `b`; `None` (unauditable) when
/// either group lacks one of the classes.
pub fn auroc_gap(scores: &[f64], labels: &[usize], sensitive: &[usize], a: usize, b: usize) -> Result<Option<f64>> {
    let group_auc = |g: usize| -> Result<Option<f64>> {
        let idx = group_indices(sensitive, g);
        if idx.is_empty() {
            return Err(Error::InvalidArgument(format!("sensitive group {g} is empty")));
        }
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<bool> = idx.iter().map(|&i| labels[i] == 1).collect();
        Ok(auroc(&s, &l))
    };
    Ok(match (group_auc(a)?, group_auc(b)?) {
        (Some(x), Some(y)) => Some(x - y),
        _ => None,
    })
}

/// Plug-in mutual information (nats) of two discrete sequences.
pub fn plug_in_mi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut pa: BTreeMap<usize, f64> = BTreeMap::new();
    let mut pb: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0;
        *pa.entry(x).or_default() += 1.0;
        *pb.entry(y).or_default() += 1.0;
    }
    joint
        .iter()
        .map(|(&(x, y), &c)| {
            let p = c / n;
            p * (p / ((pa[&x] / n) * (pb[&y] / n))).ln()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Tolerance of the parity side of the oracle.
pub const PARITY_TOLERANCE: f64 = 0.01;

/// Statistical parity of `labels` across sensitive groups (largest pairwise
/// gap in positive rate below [`PARITY_TOLERANCE`]) together with the
/// plug-in MI between the two.
pub fn parity_mi_oracle(labels: &[usize], sensitive: &[usize]) -> (bool, f64) {
    let mut rates: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for (&y, &s) in labels.iter().zip(sensitive) {
        let e = rates.entry(s).or_default();
        e.0 += f64::from(u8::from(y == 1));
        e.1 += 1.0;
    }
    let r: Vec<f64> = rates.values().map(|(p, n)| p / n).collect();
    let spread = r.iter().copied().fold(f64::NEG_INFINITY, f64::max) - r.iter().copied().fold(f64::INFINITY, f64::min);
    (spread < PARITY_TOLERANCE, plug_in_mi(labels, sensitive))
}

/// Attacker accuracy predicting `sensitive` from one-hot `target` (a label
/// or a prediction), optionally with extra context columns, evaluated on a
/// held-out split.
pub fn leakage(
    target: &[usize],
    sensitive: &[usize],
    context: Option<ArrayView2<'_, f64>>,
    heldout_fraction: f64,
    seed: u64,
) -> Result<f64> {
    let n = target.len();
    if sensitive.len() != n {
        return Err(Error::ShapeMismatch("targets and sensitive values differ in length".into()));
    }
    let n_sens = sensitive.iter().copied().max().map_or(0, |m| m + 1);
    let distinct = sensitive.iter().collect::<std::collections::BTreeSet<_>>().len();
    if distinct < 2 {
        return Err(Error::Degenerate("sensitive column is constant".into()));
    }
    if !(heldout_fraction > 0.0 && heldout_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("held-out fraction must lie in (0, 1), got {heldout_fraction}")));
    }
    let k = target.iter().copied().max().unwrap_or(0) + 1;
    let extra = context.map_or(0, |c| c.ncols());
    let mut x = Array2::zeros((n, k + extra));
    for (i, &t) in target.iter().enumerate() {
        x[[i, t]] = 1.0;
        if let Some(c) = context {
            x.row_mut(i).slice_mut(ndarray::s![k..]).assign(&c.row(i));
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::from_seed(seed));
    let n_test = ((heldout_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let (test, train) = idx.split_at(n_test);
    let xtr = x.select(Axis(0), train);
    let ytr: Vec<usize> = train.iter().map(|&i| sensitive[i]).collect();
    let attacker = OneVsRest::fit(xtr.view(), &ytr, n_sens.max(2), 1e-3)?;
    let pred = attacker.predict(x.select(Axis(0), test).view());
    Ok(pred.iter().zip(test).filter(|(p, &i)| **p == sensitive[i]).count() as f64 / test.len() as f64)
}

fn jsd(p: &[f64], q: &[f64]) -> f64 {
    let kl = |a: &[f64], m: &[f64]| -> f64 {
        a.iter()
            .zip(m)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, y)| x * (x / y).ln())
            .sum()
    };
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    (0.5 * kl(p, &m) + 0.5 * kl(q, &m)).max(0.0)
}

fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let b = if width > 0.0 { ((v - lo) / width).floor() as isize } else { 0 };
        h[b.clamp(0, bins as isize - 1) as usize] += 1.0;
    }
    let n = values.len().max(1) as f64;
    h.iter_mut().for_each(|c| *c /= n);
    h
}

fn frequencies(values: &[usize], k: usize) -> Vec<f64> {
    let mut h = vec![0.0; k];
    for &v in values {
        h[v] += 1.0;
    }
    let n = values.len().max(1) as f64;
    h.iter_mut().for_each(|c| *c /= n);
    h
}

/// Mean per-column Jensen-Shannon divergence (nats) between two encoded
/// samples, label column included. Continuous columns use `bins`
/// equal-width bins over the union support.
pub fn jsd_marginal(
    encoding: &Encoding,
    real: (ArrayView2<'_, f64>, &[usize]),
    synth: (ArrayView2<'_, f64>, &[usize]),
    bins: usize,
) -> f64 {
    let mut total = 0.0;
    let mut cols = 0.0;
    for seg in &encoding.segments {
        let (p, q) = match &seg.kind {
            SegmentKind::Continuous { .. } => {
                let a: Vec<f64> = real.0.column(seg.offset).to_vec();
                let b: Vec<f64> = synth.0.column(seg.offset).to_vec();
                let lo = a.iter().chain(&b).copied().fold(f64::INFINITY, f64::min);
                let hi = a.iter().chain(&b).copied().fold(f64::NEG_INFINITY, f64::max);
                (histogram(&a, lo, hi, bins), histogram(&b, lo, hi, bins))
            }
            _ => {
                let k = seg.cardinality().expect("discrete");
                let vals = |x: ArrayView2<'_, f64>| -> Vec<usize> {
                    x.outer_iter().map(|r| seg.discrete_value(r).expect("discrete")).collect()
                };
                (frequencies(&vals(real.0), k), frequencies(&vals(synth.0), k))
            }
        };
        total += jsd(&p, &q);
        cols += 1.0;
    }
    let k = encoding.n_classes();
    total += jsd(&frequencies(real.1, k), &frequencies(synth.1, k));
    cols += 1.0;
    total / cols
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminativeScore {
    /// `|accuracy - 0.5|`, lower is better.
    pub score: f64,
    pub accuracy: f64,
}

/// Real-versus-synthetic classification with a linear model on a 70/30
/// split. Both samples are truncated to the same size.
pub fn discriminative_score(
    real: ArrayView2<'_, f64>,
    synth: ArrayView2<'_, f64>,
    spec: &DownstreamModelSpec,
) -> Result<DiscriminativeScore> {
    let n = real.nrows().min(synth.nrows());
    if n < 2 {
        return Err(Error::InvalidArgument("discriminative score needs at least two rows per side".into()));
    }
    let l2 = match spec.kind {
        ModelKind::LinearClassifier { l2 } => l2,
        ModelKind::TreeEnsemble { .. } => 1.0,
    };
    let mut r = rng::from_seed(spec.seed);
    let mut pick = |m: usize| {
        let mut idx: Vec<usize> = (0..m).collect();
        idx.shuffle(&mut r);
        idx.truncate(n);
        idx
    };
    let ri = pick(real.nrows());
    let si = pick(synth.nrows());
    let x = ndarray::concatenate(Axis(0), &[real.select(Axis(0), &ri).view(), synth.select(Axis(0), &si).view()])
        .expect("same width");
    let y: Vec<bool> = (0..2 * n).map(|i| i < n).collect();
    let mut order: Vec<usize> = (0..2 * n).collect();
    order.shuffle(&mut r);
    let n_train = (0.7 * (2 * n) as f64).round() as usize;
    let (tr, te) = order.split_at(n_train.clamp(1, 2 * n - 1));
    let model = Logistic::fit(
        x.select(Axis(0), tr).view(),
        &tr.iter().map(|&i| y[i]).collect::<Vec<_>>(),
        l2,
    )?;
    let p = model.predict_proba(x.select(Axis(0), te).view());
    let acc = p.iter().zip(te).filter(|(p, &i)| (**p >= 0.5) == y[i]).count() as f64 / te.len() as f64;
    Ok(DiscriminativeScore {
        score: (acc - 0.5).abs(),
        accuracy: acc,
    })
}
