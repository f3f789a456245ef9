//! Bias-injection synthesizer: toy populations whose sensitive/label coupling,
//! sub-group densities and proxy agreement are known analytically.
//!
//! Generative model, per row:
//!
//! * mixture component `k ~ weights` (the last component is the designated
//!   minority sub-group, its weight is `minority_fraction`), recorded in the
//!   categorical `cohort` column;
//! * features `x ~ N(means[k], diag(spreads[k]^2))`, columns `x1..xd`;
//! * sensitive `s ~ Bernoulli(sensitive_fraction)`, independent of `x`;
//! * optional `proxy`, equal to `s` with probability `proxy_agreement`;
//! * label `y ~ Bernoulli(sigmoid(label_signal * u + atanh(c) * (2s - 1)))`
//!   where `u` is the standardized first feature and `c` is
//!   `correlation_strength`. With no feature signal the odds of `y = 1`
//!   given `s = 1` are `sqrt((1 + c) / (1 - c))`; at `|c| = 1` the label
//!   equals `s` (or its complement) exactly.

use ndarray::Array2;
use rand::Rng as _;
use rand::distributions::WeightedIndex;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ColumnSchema, Dataset, Encoding, SegmentKind, SplitTag};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub spreads: Vec<Vec<f64>>,
}

fn default_sensitive_fraction() -> f64 {
    0.5
}

fn default_label_signal() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasInjectionSpec {
    pub n_rows: usize,
    pub base_distribution: MixtureSpec,
    pub correlation_strength: f64,
    pub minority_fraction: f64,
    /// `None` omits the proxy column.
    #[serde(default)]
    pub proxy_agreement: Option<f64>,
    #[serde(default)]
    pub label_missing_fraction: f64,
    pub seed: u64,
    #[serde(default = "default_sensitive_fraction")]
    pub sensitive_fraction: f64,
    /// Log-odds slope of the label in the standardized first feature.
    #[serde(default = "default_label_signal")]
    pub label_signal: f64,
}

impl BiasInjectionSpec {
    /// The standard biased toy: two features, a 30% second cohort, balanced
    /// sensitive attribute, correlation strength 0.8.
    pub fn standard_biased(n_rows: usize, seed: u64) -> Self {
        Self {
            n_rows,
            base_distribution: MixtureSpec {
                weights: vec![0.7, 0.3],
                means: vec![vec![-0.5, 0.0], vec![1.0, 1.5]],
                spreads: vec![vec![1.0, 1.0], vec![0.8, 0.6]],
            },
            correlation_strength: 0.8,
            minority_fraction: 0.3,
            proxy_agreement: None,
            label_missing_fraction: 0.0,
            seed,
            sensitive_fraction: 0.5,
            label_signal: default_label_signal(),
        }
    }

    /// Two-component mixture with a small, well separated minority mode.
    pub fn minority_mixture(n_rows: usize, minority_fraction: f64, seed: u64) -> Self {
        Self {
            n_rows,
            base_distribution: MixtureSpec {
                weights: vec![0.5, 0.5],
                means: vec![vec![0.0, 0.0], vec![3.5, 3.5]],
                spreads: vec![vec![1.0, 1.0], vec![0.4, 0.4]],
            },
            correlation_strength: 0.0,
            minority_fraction,
            proxy_agreement: None,
            label_missing_fraction: 0.0,
            seed,
            sensitive_fraction: 0.5,
            label_signal: 1.0,
        }
    }

    fn dims(&self) -> usize {
        self.base_distribution.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleSpec(m));
        if self.n_rows == 0 {
            return bad("n_rows must be positive".into());
        }
        let mix = &self.base_distribution;
        let k = mix.weights.len();
        if k < 2 {
            return bad("mixture needs at least two components (the last is the minority)".into());
        }
        if mix.means.len() != k || mix.spreads.len() != k {
            return bad("weights, means and spreads must have one entry per component".into());
        }
        let d = self.dims();
        if d == 0 {
            return bad("components need at least one feature dimension".into());
        }
        for (m, s) in mix.means.iter().zip(&mix.spreads) {
            if m.len() != d || s.len() != d {
                return bad("all components must share the feature dimension".into());
            }
            if s.iter().any(|&v| !(v > 0.0 && v.is_finite())) || m.iter().any(|v| !v.is_finite()) {
                return bad("spreads must be positive and means finite".into());
            }
        }
        let head: f64 = mix.weights[..k - 1].iter().sum();
        if mix.weights.iter().any(|&w| !(w >= 0.0)) || head <= 0.0 {
            return bad("majority component weights must be non-negative with a positive sum".into());
        }
        if !(self.minority_fraction > 0.0 && self.minority_fraction <= 0.5) {
            return bad(format!("minority_fraction {} outside (0, 0.5]", self.minority_fraction));
        }
        if !(self.correlation_strength.abs() <= 1.0) {
            return bad(format!(
                "correlation_strength {} outside [-1, 1]: conditional label rates would leave [0, 1]",
                self.correlation_strength
            ));
        }
        if let Some(p) = self.proxy_agreement {
            if !(0.5..=1.0).contains(&p) {
                return bad(format!("proxy_agreement {p} outside [0.5, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.label_missing_fraction) {
            return bad(format!(
                "label_missing_fraction {} outside [0, 1)",
                self.label_missing_fraction
            ));
        }
        if !(self.sensitive_fraction > 0.0 && self.sensitive_fraction < 1.0) {
            return bad(format!("sensitive_fraction {} outside (0, 1)", self.sensitive_fraction));
        }
        if !self.label_signal.is_finite() {
            return bad("label_signal must be finite".into());
        }
        Ok(())
    }

    /// Component weights after placing the minority fraction on the last
    /// component.
    pub fn effective_weights(&self) -> Vec<f64> {
        let w = &self.base_distribution.weights;
        let k = w.len();
        let head: f64 = w[..k - 1].iter().sum();
        let mut out: Vec<f64> = w[..k - 1].iter().map(|x| x / head * (1.0 - self.minority_fraction)).collect();
        out.push(self.minority_fraction);
        out
    }

    /// Mean and standard deviation of the first feature under the mixture.
    fn first_feature_moments(&self) -> (f64, f64) {
        let w = self.effective_weights();
        let mix = &self.base_distribution;
        let mean: f64 = w.iter().zip(&mix.means).map(|(w, m)| w * m[0]).sum();
        let second: f64 = w
            .iter()
            .zip(mix.means.iter().zip(&mix.spreads))
            .map(|(w, (m, s))| w * (s[0] * s[0] + m[0] * m[0]))
            .sum();
        (mean, (second - mean * mean).max(1e-12).sqrt())
    }

    fn sensitive_shift(&self) -> Option<f64> {
        let c = self.correlation_strength;
        if c.abs() >= 1.0 {
            None
        } else {
            Some(c.atanh())
        }
    }

    fn label_probability(&self, x1: f64, s: usize, moments: (f64, f64)) -> f64 {
        let sign = if s == 1 { 1.0 } else { -1.0 };
        match self.sensitive_shift() {
            None => {
                let y_eq_s = self.correlation_strength > 0.0;
                let y = if y_eq_s { s == 1 } else { s == 0 };
                if y {
                    1.0
                } else {
                    0.0
                }
            }
            Some(shift) => {
                let u = (x1 - moments.0) / moments.1;
                sigmoid(self.label_signal * u + shift * sign)
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `P(y = 1 | s)` implied by the spec, integrating the label model over the
/// mixture with composite Simpson quadrature.
pub fn analytic_label_rate(spec: &BiasInjectionSpec, s: usize) -> Result<f64> {
    spec.validate()?;
    let moments = spec.first_feature_moments();
    if spec.sensitive_shift().is_none() {
        return Ok(spec.label_probability(0.0, s, moments));
    }
    let w = spec.effective_weights();
    let mix = &spec.base_distribution;
    let mut total = 0.0;
    for (k, wk) in w.iter().enumerate() {
        let (m, sd) = (mix.means[k][0], mix.spreads[k][0]);
        let (lo, hi) = (m - 10.0 * sd, m + 10.0 * sd);
        let n = 4000;
        let h = (hi - lo) / n as f64;
        let f = |x: f64| {
            let z = (x - m) / sd;
            let pdf = (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
            pdf * spec.label_probability(x, s, moments)
        };
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            let x = lo + i as f64 * h;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        total += wk * acc * h / 3.0;
    }
    Ok(total)
}

/// Known quantities of a synthesized population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `P(y = 1 | s = 0)` and `P(y = 1 | s = 1)`.
    pub label_rate_given_sensitive: [f64; 2],
    pub sensitive_fraction: f64,
    /// Exact mutual information between label and sensitive, in nats.
    pub label_sensitive_mi: f64,
    pub component_weights: Vec<f64>,
    pub minority_fraction: f64,
    pub proxy_agreement: Option<f64>,
}

fn discrete_mi(joint: &[[f64; 2]; 2]) -> f64 {
    let ps = [joint[0][0] + joint[0][1], joint[1][0] + joint[1][1]];
    let py = [joint[0][0] + joint[1][0], joint[0][1] + joint[1][1]];
    let mut mi = 0.0;
    for s in 0..2 {
        for y in 0..2 {
            let p = joint[s][y];
            if p > 0.0 {
                mi += p * (p / (ps[s] * py[y])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Column names produced by [`synthesize_biased`].
pub const COHORT_COLUMN: &str = "cohort";
pub const SENSITIVE_COLUMN: &str = "sensitive";
pub const PROXY_COLUMN: &str = "proxy";
pub const LABEL_COLUMN: &str = "label";

pub fn synthesize_biased(spec: &BiasInjectionSpec) -> Result<Dataset> {
    spec.validate()?;
    let d = spec.dims();
    let weights = spec.effective_weights();
    let k = weights.len();
    let moments = spec.first_feature_moments();

    let cohorts: Vec<String> = (0..k).map(|i| format!("group_{i}")).collect();
    let cohort_refs: Vec<&str> = cohorts.iter().map(String::as_str).collect();
    let mut schema: Vec<ColumnSchema> = (1..=d).map(|i| ColumnSchema::continuous(&format!("x{i}"))).collect();
    schema.push(ColumnSchema::categorical(COHORT_COLUMN, &cohort_refs));
    schema.push(ColumnSchema::binary(SENSITIVE_COLUMN).sensitive());
    if spec.proxy_agreement.is_some() {
        schema.push(ColumnSchema::binary(PROXY_COLUMN));
    }
    schema.push(ColumnSchema::binary(LABEL_COLUMN).label());

    let mut rng = rng::substream(spec.seed, "synthesize");
    let comp = WeightedIndex::new(&weights).map_err(|e| Error::InfeasibleSpec(e.to_string()))?;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let n = spec.n_rows;
    let mut raw = Array2::<f64>::zeros((n, d));
    let mut comp_idx = vec![0usize; n];
    let mut sens = vec![0usize; n];
    let mut proxy = vec![0usize; n];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = comp.sample(&mut rng);
        comp_idx[i] = c;
        for j in 0..d {
            let z: f64 = std_normal.sample(&mut rng);
            raw[[i, j]] = spec.base_distribution.means[c][j] + spec.base_distribution.spreads[c][j] * z;
        }
        let s = usize::from(rng.gen::<f64>() < spec.sensitive_fraction);
        sens[i] = s;
        if let Some(agree) = spec.proxy_agreement {
            proxy[i] = if rng.gen::<f64>() < agree { s } else { 1 - s };
        }
        let p = spec.label_probability(raw[[i, 0]], s, moments);
        labels.push(Some(usize::from(rng.gen::<f64>() < p)));
    }

    let mut ranges = std::collections::BTreeMap::new();
    for j in 0..d {
        let col = raw.column(j);
        let min = col.iter().copied().fold(f64::INFINITY, f64::min);
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ranges.insert(format!("x{}", j + 1), (min, max));
    }
    let encoding = Encoding::new(&schema, &ranges)?;
    let mut features = Array2::<f64>::zeros((n, encoding.width));
    for seg in &encoding.segments {
        for i in 0..n {
            match (&seg.kind, seg.name.as_str()) {
                (SegmentKind::Continuous { .. }, name) => {
                    let j: usize = name[1..].parse::<usize>().expect("x<i> column") - 1;
                    features[[i, seg.offset]] = seg.scale(raw[[i, j]]);
                }
                (SegmentKind::Categorical { .. }, _) => features[[i, seg.offset + comp_idx[i]]] = 1.0,
                (SegmentKind::Binary, SENSITIVE_COLUMN) => features[[i, seg.offset]] = sens[i] as f64,
                (SegmentKind::Binary, _) => features[[i, seg.offset]] = proxy[i] as f64,
            }
        }
    }

    let p1 = [analytic_label_rate(spec, 0)?, analytic_label_rate(spec, 1)?];
    let ps = spec.sensitive_fraction;
    let joint = [
        [(1.0 - ps) * (1.0 - p1[0]), (1.0 - ps) * p1[0]],
        [ps * (1.0 - p1[1]), ps * p1[1]],
    ];
    let truth = GroundTruth {
        label_rate_given_sensitive: p1,
        sensitive_fraction: ps,
        label_sensitive_mi: discrete_mi(&joint),
        component_weights: weights,
        minority_fraction: spec.minority_fraction,
        proxy_agreement: spec.proxy_agreement,
    };
    let data = Dataset::from_parts(schema, encoding, features, labels, SplitTag::Train)?.with_ground_truth(truth);
    if spec.label_missing_fraction > 0.0 {
        data.mask_labels(spec.label_missing_fraction, rng::derive_seed(spec.seed, "mask"))
    } else {
        Ok(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plug_in_mi(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len() as f64;
        let mut joint = [[0.0; 2]; 2];
        for (&x, &y) in a.iter().zip(b) {
            joint[x][y] += 1.0 / n;
        }
        discrete_mi(&joint)
    }

    fn columns(d: &Dataset) -> (Vec<usize>, Vec<usize>) {
        let s = d.discrete_column(SENSITIVE_COLUMN).unwrap();
        let y: Vec<usize> = d.true_labels().iter().map(|y| y.unwrap()).collect();
        (s, y)
    }

    #[test]
    fn independence_at_zero_correlation() {
        let mut spec = BiasInjectionSpec::standard_biased(10_000, 3);
        spec.correlation_strength = 0.0;
        let d = synthesize_biased(&spec).unwrap();
        let (s, y) = columns(&d);
        assert!(plug_in_mi(&s, &y) < 0.01);
        assert!(d.ground_truth().unwrap().label_sensitive_mi < 1e-12);
    }

    #[test]
    fn full_correlation_gives_ln2() {
        let mut spec = BiasInjectionSpec::standard_biased(10_000, 4);
        spec.correlation_strength = 1.0;
        let d = synthesize_biased(&spec).unwrap();
        let gt = d.ground_truth().unwrap();
        assert!((gt.label_sensitive_mi - std::f64::consts::LN_2).abs() < 1e-12);
        let (s, y) = columns(&d);
        assert_eq!(s, y);
        assert!((plug_in_mi(&s, &y) - std::f64::consts::LN_2).abs() < 0.01);
    }

    #[test]
    fn no_feature_signal_gives_closed_form_rates() {
        let mut spec = BiasInjectionSpec::standard_biased(100, 1);
        spec.label_signal = 0.0;
        spec.correlation_strength = 0.6;
        assert!((analytic_label_rate(&spec, 1).unwrap() - 2.0 / 3.0).abs() < 1e-9);
        assert!((analytic_label_rate(&spec, 0).unwrap() - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn conditional_rates_and_minority_match_analytic() {
        let spec = BiasInjectionSpec::standard_biased(20_000, 11);
        let d = synthesize_biased(&spec).unwrap();
        let gt = d.ground_truth().unwrap().clone();
        let tol = 2.0 / (spec.n_rows as f64).sqrt();
        let (s, y) = columns(&d);
        for g in 0..2 {
            let rows: Vec<usize> = (0..s.len()).filter(|&i| s[i] == g).collect();
            let rate = rows.iter().filter(|&&i| y[i] == 1).count() as f64 / rows.len() as f64;
            assert!((rate - gt.label_rate_given_sensitive[g]).abs() < tol, "s={g} rate {rate}");
        }
        let cohort = d.discrete_column(COHORT_COLUMN).unwrap();
        let minority = cohort.iter().filter(|&&c| c == 1).count() as f64 / cohort.len() as f64;
        assert!((minority - spec.minority_fraction).abs() < tol);
    }

    #[test]
    fn proxy_agreement_matches() {
        let mut spec = BiasInjectionSpec::standard_biased(10_000, 5);
        spec.proxy_agreement = Some(0.95);
        let d = synthesize_biased(&spec).unwrap();
        let s = d.discrete_column(SENSITIVE_COLUMN).unwrap();
        let p = d.discrete_column(PROXY_COLUMN).unwrap();
        let agree = s.iter().zip(&p).filter(|(a, b)| a == b).count() as f64 / s.len() as f64;
        assert!((agree - 0.95).abs() < 0.01, "agreement {agree}");
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = BiasInjectionSpec::standard_biased(500, 9);
        let a = synthesize_biased(&spec).unwrap();
        let b = synthesize_biased(&spec).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(a.true_labels(), b.true_labels());
    }

    #[test]
    fn infeasible_specs_rejected() {
        let mut spec = BiasInjectionSpec::standard_biased(100, 1);
        spec.correlation_strength = 1.2;
        assert!(matches!(synthesize_biased(&spec), Err(Error::InfeasibleSpec(_))));
        let mut spec = BiasInjectionSpec::standard_biased(100, 1);
        spec.minority_fraction = 0.7;
        assert!(synthesize_biased(&spec).is_err());
        let mut spec = BiasInjectionSpec::standard_biased(100, 1);
        spec.proxy_agreement = Some(0.3);
        assert!(synthesize_biased(&spec).is_err());
    }

    #[test]
    fn missing_labels_are_masked() {
        let mut spec = BiasInjectionSpec::standard_biased(1000, 2);
        spec.label_missing_fraction = 0.4;
        let d = synthesize_biased(&spec).unwrap();
        assert_eq!(d.label_mask().iter().filter(|m| !**m).count(), 400);
        assert!(d.true_labels().iter().all(Option::is_some));
    }
}
