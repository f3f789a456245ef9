//! Sub-group representation: membership predicates, log disparity scores,
//! their windowed averages, the importance sampler built from them and the
//! density-preservation audit.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::{Encoding, SegmentKind};
use crate::{Error, Result};

/// Frequencies are clamped to `[P_EPS, 1 - P_EPS]` before taking odds.
pub const P_EPS: f64 = 1e-4;
/// Default sampler temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.5;
/// Ratio bound of the "90 percent rule".
pub const DEFAULT_DELTA: f64 = 0.9;

/// One test in a subgroup predicate. Discrete columns (including the label)
/// match `equals` against a category or class name (`"0"`/`"1"` for binary
/// columns); continuous columns match `min <= v < max` in original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equals: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl Condition {
    pub fn equals(column: &str, value: &str) -> Self {
        Self {
            column: column.into(),
            equals: Some(value.into()),
            min: None,
            max: None,
        }
    }

    pub fn range(column: &str, min: Option<f64>, max: Option<f64>) -> Self {
        Self {
            column: column.into(),
            equals: None,
            min,
            max,
        }
    }
}

/// A named conjunction of conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubgroupSpec {
    pub id: String,
    #[serde(default)]
    pub label: String,
    pub conditions: Vec<Condition>,
}

impl SubgroupSpec {
    pub fn new(id: &str, conditions: Vec<Condition>) -> Self {
        Self {
            id: id.into(),
            label: id.into(),
            conditions,
        }
    }
}

#[derive(Debug, Clone)]
enum Test {
    Label(usize),
    Discrete { segment: usize, value: usize },
    Range { offset: usize, lo: f64, hi: f64 },
}

/// A subgroup resolved against an encoding, ready to test encoded rows.
#[derive(Debug, Clone)]
pub struct Subgroup {
    pub spec: SubgroupSpec,
    tests: Vec<Test>,
    uses_label: bool,
    segments: Vec<crate::data::Segment>,
}

impl Subgroup {
    pub fn compile(spec: &SubgroupSpec, encoding: &Encoding) -> Result<Self> {
        if spec.conditions.is_empty() {
            return Err(Error::Config(format!("subgroup `{}` has no conditions", spec.id)));
        }
        let bad = |msg: String| Error::Config(format!("subgroup `{}`: {msg}", spec.id));
        let mut tests = Vec::new();
        for c in &spec.conditions {
            if c.column == encoding.label.name {
                let v = c.equals.as_deref().ok_or_else(|| bad("label conditions need `equals`".into()))?;
                let y = encoding
                    .class_index(v)
                    .ok_or_else(|| bad(format!("`{v}` is not a class of `{}`", c.column)))?;
                tests.push(Test::Label(y));
                continue;
            }
            let (idx, seg) = encoding
                .segments
                .iter()
                .enumerate()
                .find(|(_, s)| s.name == c.column)
                .ok_or_else(|| bad(format!("unknown column `{}`", c.column)))?;
            match &seg.kind {
                SegmentKind::Continuous { .. } => {
                    if c.equals.is_some() || (c.min.is_none() && c.max.is_none()) {
                        return Err(bad(format!("continuous column `{}` needs `min` and/or `max`", c.column)));
                    }
                    let lo = c.min.map_or(f64::NEG_INFINITY, |v| seg.scale(v));
                    let hi = c.max.map_or(f64::INFINITY, |v| seg.scale(v));
                    tests.push(Test::Range {
                        offset: seg.offset,
                        lo,
                        hi,
                    });
                }
                _ => {
                    let v = c
                        .equals
                        .as_deref()
                        .ok_or_else(|| bad(format!("discrete column `{}` needs `equals`", c.column)))?;
                    let value = seg
                        .value_names()
                        .iter()
                        .position(|n| n == v)
                        .ok_or_else(|| bad(format!("`{v}` is not a value of `{}`", c.column)))?;
                    tests.push(Test::Discrete { segment: idx, value });
                }
            }
        }
        Ok(Self {
            spec: spec.clone(),
            uses_label: tests.iter().any(|t| matches!(t, Test::Label(_))),
            tests,
            segments: encoding.segments.clone(),
        })
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    /// Membership of one encoded row. `None` when the predicate needs a label
    /// the row does not have.
    pub fn contains(&self, row: ndarray::ArrayView1<'_, f64>, label: Option<usize>) -> Option<bool> {
        if self.uses_label && label.is_none() {
            return None;
        }
        Some(self.tests.iter().all(|t| match *t {
            Test::Label(y) => label == Some(y),
            Test::Discrete { segment, value } => self.segments[segment].discrete_value(row) == Some(value),
            Test::Range { offset, lo, hi } => row[offset] >= lo && row[offset] < hi,
        }))
    }

    /// Fraction of evaluable rows inside the subgroup, with the number of
    /// evaluable rows.
    pub fn frequency(&self, rows: ArrayView2<'_, f64>, labels: &[Option<usize>]) -> (f64, usize) {
        let mut hit = 0usize;
        let mut n = 0usize;
        for (row, &y) in rows.outer_iter().zip(labels) {
            if let Some(m) = self.contains(row, y) {
                n += 1;
                hit += usize::from(m);
            }
        }
        if n == 0 {
            (0.0, 0)
        } else {
            (hit as f64 / n as f64, n)
        }
    }
}

pub fn compile_all(specs: &[SubgroupSpec], encoding: &Encoding) -> Result<Vec<Subgroup>> {
    specs.iter().map(|s| Subgroup::compile(s, encoding)).collect()
}

/// Log odds ratio of a subgroup's synthetic frequency against its real one.
pub fn lds(p_synth: f64, p_real: f64) -> f64 {
    let odds = |p: f64| {
        let p = p.clamp(P_EPS, 1.0 - P_EPS);
        p / (1.0 - p)
    };
    // ln(a) - ln(b) keeps lds(p, p) exactly zero and the sign antisymmetric.
    odds(p_synth).ln() - odds(p_real).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Missing,
    Under,
    Adequate,
    Over,
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Band::Missing => "missing",
            Band::Under => "under",
            Band::Adequate => "adequate",
            Band::Over => "over",
        })
    }
}

/// Representation band. Everything above `-log 0.9` counts as over.
pub fn classify_band(lds_value: f64) -> Band {
    let (l8, l9) = (0.8f64.ln(), 0.9f64.ln());
    if lds_value <= l8 {
        Band::Missing
    } else if lds_value <= l9 {
        Band::Under
    } else if lds_value <= -l9 {
        Band::Adequate
    } else {
        Band::Over
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdsRecord {
    pub subgroup_id: String,
    pub p_real: f64,
    pub p_synth: f64,
    pub lds: f64,
    pub epoch: usize,
}

/// LDS of every subgroup between a real and a synthetic sample.
pub fn lds_records(
    subgroups: &[Subgroup],
    real: (ArrayView2<'_, f64>, &[Option<usize>]),
    synth: (ArrayView2<'_, f64>, &[Option<usize>]),
    epoch: usize,
) -> Vec<LdsRecord> {
    subgroups
        .iter()
        .map(|g| {
            let (p_real, _) = g.frequency(real.0, real.1);
            let (p_synth, _) = g.frequency(synth.0, synth.1);
            LdsRecord {
                subgroup_id: g.id().to_string(),
                p_real,
                p_synth,
                lds: lds(p_synth, p_real),
                epoch,
            }
        })
        .collect()
}

/// Indices of the subgroups each row belongs to.
pub fn memberships(subgroups: &[Subgroup], rows: ArrayView2<'_, f64>, labels: &[Option<usize>]) -> Vec<Vec<usize>> {
    rows.outer_iter()
        .zip(labels)
        .map(|(row, &y)| {
            subgroups
                .iter()
                .enumerate()
                .filter(|(_, g)| g.contains(row, y) == Some(true))
                .map(|(j, _)| j)
                .collect()
        })
        .collect()
}

/// Windowed LDS score per instance: mean over the last `window` epochs of
/// the mean LDS of the subgroups the instance belongs to. `trace[e][j]` is
/// the LDS of subgroup `j` at epoch `e`.
pub fn ldss(trace: &[Vec<f64>], window: usize, membership: &[Vec<usize>]) -> Result<Vec<f64>> {
    if window == 0 || trace.is_empty() {
        return Err(Error::InvalidArgument("LDSS window is empty".into()));
    }
    let recent = &trace[trace.len().saturating_sub(window)..];
    let t = recent.len() as f64;
    // Per-subgroup window mean; the mean over epochs commutes with the mean
    // over an instance's subgroups.
    let n_groups = recent[0].len();
    let mut group_mean = vec![0.0; n_groups];
    for epoch in recent {
        if epoch.len() != n_groups {
            return Err(Error::ShapeMismatch("LDS trace rows differ in length".into()));
        }
        for (m, v) in group_mean.iter_mut().zip(epoch) {
            *m += v / t;
        }
    }
    membership
        .iter()
        .map(|gs| {
            if gs.is_empty() {
                return Ok(0.0);
            }
            let mut s = 0.0;
            for &j in gs {
                s += *group_mean
                    .get(j)
                    .ok_or_else(|| Error::ShapeMismatch(format!("subgroup index {j} outside trace")))?;
            }
            Ok(s / gs.len() as f64)
        })
        .collect()
}

/// Per-instance sampling distribution over the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingTable {
    pub weights: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub window: usize,
}

impl SamplingTable {
    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0; n],
            probabilities: vec![1.0 / n as f64; n],
            window: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    /// Check the table is a distribution over `n` rows.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.probabilities.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "sampling table has {} entries for {n} rows",
                self.probabilities.len()
            )));
        }
        let sum: f64 = self.probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-8 || self.probabilities.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidArgument(format!("sampling probabilities sum to {sum}")));
        }
        Ok(())
    }
}

/// Exponential weights `exp(-ldss / temperature)`, normalized. Rows of
/// under-represented subgroups (negative scores) get more mass.
pub fn sampling_table(scores: &[f64], temperature: f64, window: usize) -> Result<SamplingTable> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no scores to build a sampler from".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {temperature}")));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite LDSS score {bad}")));
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = scores.iter().map(|s| (-(s - lo) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let probabilities = weights.iter().map(|w| w / total).collect();
    Ok(SamplingTable {
        weights,
        probabilities,
        window,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupAudit {
    pub subgroup_id: String,
    pub p_real: f64,
    pub p_synth: f64,
    pub lds: f64,
    /// `None` when the subgroup is empty in the real data.
    pub band: Option<Band>,
    pub auditable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub delta: f64,
    pub subgroups: Vec<SubgroupAudit>,
    /// Share of auditable subgroups in each band.
    pub band_proportions: BTreeMap<Band, f64>,
    pub density_preserving: bool,
}

/// Density-preservation audit: every auditable subgroup must satisfy
/// `|LDS| < |log delta|`.
pub fn audit_dp_dgp(
    subgroups: &[Subgroup],
    real: (ArrayView2<'_, f64>, &[Option<usize>]),
    synth: (ArrayView2<'_, f64>, &[Option<usize>]),
    delta: f64,
) -> Result<Audit> {
    if real.0.nrows() == 0 || synth.0.nrows() == 0 {
        return Err(Error::InvalidArgument("audit needs non-empty real and synthetic samples".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    let bound = delta.ln().abs();
    let mut rows = Vec::with_capacity(subgroups.len());
    let mut counts: BTreeMap<Band, usize> = BTreeMap::new();
    let mut verdict = true;
    for g in subgroups {
        let (p_real, n_real) = g.frequency(real.0, real.1);
        let (p_synth, _) = g.frequency(synth.0, synth.1);
        let auditable = n_real > 0 && p_real > 0.0;
        let l = lds(p_synth, p_real);
        let band = auditable.then(|| classify_band(l));
        if let Some(b) = band {
            *counts.entry(b).or_default() += 1;
            verdict &= l.abs() < bound;
        }
        rows.push(SubgroupAudit {
            subgroup_id: g.id().to_string(),
            p_real,
            p_synth,
            lds: l,
            band,
            auditable,
        });
    }
    let n_auditable: usize = counts.values().sum();
    let band_proportions = [Band::Missing, Band::Under, Band::Adequate, Band::Over]
        .into_iter()
        .map(|b| {
            let c = counts.get(&b).copied().unwrap_or(0);
            (b, if n_auditable > 0 { c as f64 / n_auditable as f64 } else { 0.0 })
        })
        .collect();
    Ok(Audit {
        delta,
        subgroups: rows,
        band_proportions,
        density_preserving: verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_csv_str, ColumnSchema, SplitTag};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn lds_examples() {
        assert_eq!(lds(0.25, 0.25), 0.0);
        assert_abs_diff_eq!(lds(0.5, 0.25), 3f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(lds(0.25, 0.5), -(3f64.ln()), epsilon = 1e-12);
        assert!(lds(0.0, 0.3).is_finite());
    }

    #[test]
    fn band_examples() {
        assert_eq!(classify_band(0.0), Band::Adequate);
        assert_eq!(classify_band(0.85f64.ln()), Band::Under);
        assert_eq!(classify_band(-0.5), Band::Missing);
        assert_eq!(classify_band(0.2), Band::Over);
        assert_eq!(classify_band(5.0), Band::Over);
        assert_eq!(classify_band(0.8f64.ln()), Band::Missing);
        assert_eq!(classify_band(0.9f64.ln()), Band::Under);
        assert_eq!(classify_band(-(0.9f64.ln())), Band::Adequate);
    }

    #[test]
    fn ldss_examples() {
        assert_eq!(ldss(&[vec![-0.4]], 1, &[vec![0]]).unwrap(), vec![-0.4]);
        let trace = vec![vec![-0.2], vec![-0.4], vec![-0.6]];
        assert_abs_diff_eq!(ldss(&trace, 3, &[vec![0]]).unwrap()[0], -0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(ldss(&trace, 1, &[vec![0]]).unwrap()[0], -0.6, epsilon = 1e-12);
        let two = vec![vec![-0.2, 0.2]];
        assert_eq!(ldss(&two, 1, &[vec![0, 1], vec![]]).unwrap(), vec![0.0, 0.0]);
        assert!(ldss(&trace, 0, &[vec![0]]).is_err());
    }

    #[test]
    fn sampling_table_examples() {
        let t = sampling_table(&[0.3; 4], 0.5, 1).unwrap();
        assert!(t.probabilities.iter().all(|p| (p - 0.25).abs() < 1e-15));
        let t = sampling_table(&[-0.5, 0.0, 0.5], 1.0, 1).unwrap();
        let z = 0.5f64.exp() + 1.0 + (-0.5f64).exp();
        let expect = [0.5f64.exp() / z, 1.0 / z, (-0.5f64).exp() / z];
        for (p, e) in t.probabilities.iter().zip(expect) {
            assert_abs_diff_eq!(*p, e, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(t.probabilities[0], 0.506, epsilon = 1e-3);
        let hot = sampling_table(&[-0.5, 0.0, 0.5], 1e9, 1).unwrap();
        assert!(hot.probabilities.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-8));
    }

    proptest! {
        #[test]
        fn lds_is_antisymmetric(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            prop_assert_eq!(lds(a, b), -lds(b, a));
            prop_assert_eq!(lds(a, a), 0.0);
        }

        #[test]
        fn sampling_table_is_shift_invariant(
            scores in prop::collection::vec(-3.0f64..3.0, 1..50),
            shift in -10.0f64..10.0,
            temp in 0.05f64..5.0,
        ) {
            let a = sampling_table(&scores, temp, 1).unwrap();
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let b = sampling_table(&shifted, temp, 1).unwrap();
            a.validate(scores.len()).unwrap();
            for (p, q) in a.probabilities.iter().zip(&b.probabilities) {
                prop_assert!(*p >= 0.0);
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }

    fn toy() -> crate::data::Dataset {
        let schema = vec![
            ColumnSchema::continuous("age"),
            ColumnSchema::categorical("race", &["A", "B", "C"]).sensitive(),
            ColumnSchema::binary("y").label(),
        ];
        let csv = "age,race,y\n10,A,1\n20,A,0\n30,B,1\n40,B,\n50,A,1\n60,A,0\n";
        load_csv_str(csv, &schema, SplitTag::Train).unwrap()
    }

    #[test]
    fn predicates_on_encoded_rows() {
        let d = toy();
        let labels: Vec<Option<usize>> = (0..d.n_rows()).map(|i| d.observed_label(i)).collect();
        let b = Subgroup::compile(&SubgroupSpec::new("b", vec![Condition::equals("race", "B")]), d.encoding()).unwrap();
        assert_eq!(b.frequency(d.features().view(), &labels), (2.0 / 6.0, 6));
        let young = Subgroup::compile(
            &SubgroupSpec::new("young", vec![Condition::range("age", None, Some(35.0))]),
            d.encoding(),
        )
        .unwrap();
        assert_eq!(young.frequency(d.features().view(), &labels).0, 0.5);
        let pos_b = Subgroup::compile(
            &SubgroupSpec::new("b1", vec![Condition::equals("race", "B"), Condition::equals("y", "1")]),
            d.encoding(),
        )
        .unwrap();
        // The masked row is not evaluable for a label condition.
        assert_eq!(pos_b.frequency(d.features().view(), &labels), (1.0 / 5.0, 5));
        assert!(Subgroup::compile(&SubgroupSpec::new("x", vec![Condition::equals("race", "Z")]), d.encoding()).is_err());
        assert!(Subgroup::compile(&SubgroupSpec::new("x", vec![]), d.encoding()).is_err());
        assert!(Subgroup::compile(&SubgroupSpec::new("x", vec![Condition::equals("nope", "1")]), d.encoding()).is_err());
    }

    #[test]
    fn audit_flags_dropped_and_unauditable_groups() {
        let d = toy();
        let labels: Vec<Option<usize>> = (0..d.n_rows()).map(|i| d.true_label(i)).collect();
        let groups = compile_all(
            &[
                SubgroupSpec::new("a", vec![Condition::equals("race", "A")]),
                SubgroupSpec::new("b", vec![Condition::equals("race", "B")]),
                SubgroupSpec::new("c", vec![Condition::equals("race", "C")]),
            ],
            d.encoding(),
        )
        .unwrap();
        let real = (d.features().view(), labels.as_slice());
        let same = audit_dp_dgp(&groups, real, real, DEFAULT_DELTA).unwrap();
        assert!(same.density_preserving);
        assert!(!same.subgroups[2].auditable);
        assert_eq!(same.band_proportions[&Band::Adequate], 1.0);

        let only_a = d.subset(&[0, 1, 4, 5]);
        let la: Vec<Option<usize>> = (0..4).map(|i| only_a.true_label(i)).collect();
        let audit = audit_dp_dgp(&groups, real, (only_a.features().view(), &la), DEFAULT_DELTA).unwrap();
        assert!(!audit.density_preserving);
        assert_eq!(audit.subgroups[1].band, Some(Band::Missing));
        assert_eq!(audit.subgroups[0].band, Some(Band::Over));
    }
}
