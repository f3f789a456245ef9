//! Column-typed tabular datasets.
//!
//! Non-label columns are encoded into a dense feature matrix: continuous
//! columns are min-max scaled to `[0, 1]` (the scaling is kept for inversion),
//! binary columns take one `{0, 1}` cell and categorical columns a one-hot
//! group. The label column is kept apart as a class index so that it can be
//! masked for semi-supervised training without losing the value.

mod io;
mod synth;

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{rng, Error, Result};

pub use io::{load_csv, load_csv_str, load_csv_with_encoding, Table};
pub use synth::{analytic_label_rate, synthesize_biased, BiasInjectionSpec, GroundTruth, MixtureSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Categorical,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(default)]
    pub is_sensitive: bool,
    #[serde(default)]
    pub is_label: bool,
}

impl ColumnSchema {
    pub fn continuous(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Continuous,
            categories: Vec::new(),
            is_sensitive: false,
            is_label: false,
        }
    }

    pub fn binary(name: &str) -> Self {
        Self {
            kind: ColumnKind::Binary,
            ..Self::continuous(name)
        }
    }

    pub fn categorical(name: &str, categories: &[&str]) -> Self {
        Self {
            kind: ColumnKind::Categorical,
            categories: categories.iter().map(|c| c.to_string()).collect(),
            ..Self::continuous(name)
        }
    }

    pub fn sensitive(mut self) -> Self {
        self.is_sensitive = true;
        self
    }

    pub fn label(mut self) -> Self {
        self.is_label = true;
        self
    }
}

/// Checks the schema invariants: unique names, exactly one label column that
/// is discrete, and non-empty duplicate-free category lists.
pub fn validate_schema(schema: &[ColumnSchema]) -> Result<()> {
    if schema.is_empty() {
        return Err(Error::InvalidSchema("schema has no columns".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for col in schema {
        if !seen.insert(col.name.as_str()) {
            return Err(Error::InvalidSchema(format!("duplicate column `{}`", col.name)));
        }
        if col.kind == ColumnKind::Categorical {
            if col.categories.is_empty() {
                return Err(Error::InvalidSchema(format!(
                    "categorical column `{}` has no categories",
                    col.name
                )));
            }
            let mut cats = std::collections::BTreeSet::new();
            for c in &col.categories {
                if !cats.insert(c.as_str()) {
                    return Err(Error::InvalidSchema(format!(
                        "categorical column `{}` repeats category `{c}`",
                        col.name
                    )));
                }
            }
        }
    }
    let labels: Vec<_> = schema.iter().filter(|c| c.is_label).collect();
    match labels.as_slice() {
        [] => return Err(Error::InvalidSchema("no label column".into())),
        [label] => {
            if label.kind == ColumnKind::Continuous {
                return Err(Error::InvalidSchema(format!(
                    "label column `{}` must be binary or categorical",
                    label.name
                )));
            }
            if label.is_sensitive {
                return Err(Error::InvalidSchema(format!(
                    "label column `{}` cannot be sensitive",
                    label.name
                )));
            }
        }
        _ => return Err(Error::InvalidSchema("more than one label column".into())),
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SegmentKind {
    Continuous { min: f64, max: f64 },
    Binary,
    Categorical { categories: Vec<String> },
}

/// Placement of one non-label column inside the encoded feature row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub width: usize,
    pub sensitive: bool,
    pub kind: SegmentKind,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.width
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self.kind, SegmentKind::Continuous { .. })
    }

    pub fn scale(&self, value: f64) -> f64 {
        match self.kind {
            SegmentKind::Continuous { min, max } => {
                if max > min {
                    (value - min) / (max - min)
                } else {
                    0.0
                }
            }
            _ => value,
        }
    }

    pub fn unscale(&self, value: f64) -> f64 {
        match self.kind {
            SegmentKind::Continuous { min, max } => value * (max - min) + min,
            _ => value,
        }
    }

    /// Discrete value of this segment in an encoded row: the category index
    /// for categorical groups, 0/1 for binary cells. `None` for continuous.
    pub fn discrete_value(&self, row: ArrayView1<'_, f64>) -> Option<usize> {
        match &self.kind {
            SegmentKind::Continuous { .. } => None,
            SegmentKind::Binary => Some(usize::from(row[self.offset] >= 0.5)),
            SegmentKind::Categorical { .. } => Some(argmax(row.slice(ndarray::s![self.range()]))),
        }
    }

    /// Number of distinct values for discrete segments.
    pub fn cardinality(&self) -> Option<usize> {
        match &self.kind {
            SegmentKind::Continuous { .. } => None,
            SegmentKind::Binary => Some(2),
            SegmentKind::Categorical { categories } => Some(categories.len()),
        }
    }

    pub fn value_names(&self) -> Vec<String> {
        match &self.kind {
            SegmentKind::Continuous { .. } => Vec::new(),
            SegmentKind::Binary => vec!["0".into(), "1".into()],
            SegmentKind::Categorical { categories } => categories.clone(),
        }
    }
}

pub(crate) fn argmax(v: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &x) in v.iter().enumerate() {
        if x > best_v {
            best_v = x;
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEncoding {
    pub name: String,
    pub classes: Vec<String>,
}

/// Encoded layout of a schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub segments: Vec<Segment>,
    pub width: usize,
    pub label: LabelEncoding,
}

impl Encoding {
    /// Build a layout with the given continuous ranges (`name -> (min, max)`).
    pub fn new(schema: &[ColumnSchema], ranges: &BTreeMap<String, (f64, f64)>) -> Result<Self> {
        validate_schema(schema)?;
        let mut segments = Vec::new();
        let mut offset = 0;
        let mut label = None;
        for col in schema {
            if col.is_label {
                let classes = match col.kind {
                    ColumnKind::Binary => vec!["0".to_string(), "1".to_string()],
                    _ => col.categories.clone(),
                };
                label = Some(LabelEncoding {
                    name: col.name.clone(),
                    classes,
                });
                continue;
            }
            let (kind, width) = match col.kind {
                ColumnKind::Continuous => {
                    let (min, max) = ranges.get(&col.name).copied().unwrap_or((0.0, 1.0));
                    (SegmentKind::Continuous { min, max }, 1)
                }
                ColumnKind::Binary => (SegmentKind::Binary, 1),
                ColumnKind::Categorical => (
                    SegmentKind::Categorical {
                        categories: col.categories.clone(),
                    },
                    col.categories.len(),
                ),
            };
            segments.push(Segment {
                name: col.name.clone(),
                offset,
                width,
                sensitive: col.is_sensitive,
                kind,
            });
            offset += width;
        }
        Ok(Self {
            segments,
            width: offset,
            label: label.expect("validated schema has a label"),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.label.classes.len()
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Encoded feature indices belonging to sensitive columns.
    pub fn sensitive_indices(&self) -> Vec<usize> {
        self.segments
            .iter()
            .filter(|s| s.sensitive)
            .flat_map(|s| s.range())
            .collect()
    }

    pub fn nonsensitive_indices(&self) -> Vec<usize> {
        self.segments
            .iter()
            .filter(|s| !s.sensitive)
            .flat_map(|s| s.range())
            .collect()
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.label.classes.iter().position(|c| c == class)
    }

    /// Stable hash of the layout, used to guard checkpoints.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("encoding serializes"));
        hex::encode(&h.finalize()[..16])
    }

    /// Snap relaxed outputs to valid codes: argmax per categorical group,
    /// threshold 0.5 for binary cells, clamp continuous cells to `[0, 1]`.
    pub fn discretize(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for seg in &self.segments {
                match &seg.kind {
                    SegmentKind::Continuous { .. } => {
                        let v = row[seg.offset];
                        row[seg.offset] = v.clamp(0.0, 1.0);
                    }
                    SegmentKind::Binary => {
                        row[seg.offset] = if row[seg.offset] >= 0.5 { 1.0 } else { 0.0 };
                    }
                    SegmentKind::Categorical { .. } => {
                        let k = argmax(row.slice(ndarray::s![seg.range()]));
                        for j in seg.range() {
                            row[j] = 0.0;
                        }
                        row[seg.offset + k] = 1.0;
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
}

/// An encoded dataset. Immutable once constructed; derived datasets
/// (masked, split, subset) are new values.
#[derive(Debug, Clone)]
pub struct Dataset {
    schema: Vec<ColumnSchema>,
    encoding: Encoding,
    features: Array2<f64>,
    labels: Vec<Option<usize>>,
    label_mask: Vec<bool>,
    split: SplitTag,
    ground_truth: Option<GroundTruth>,
}

impl Dataset {
    /// Assemble a dataset from already-encoded parts. A row's label is
    /// observed iff `labels[i]` is `Some`.
    pub fn from_parts(
        schema: Vec<ColumnSchema>,
        encoding: Encoding,
        features: Array2<f64>,
        labels: Vec<Option<usize>>,
        split: SplitTag,
    ) -> Result<Self> {
        if features.ncols() != encoding.width {
            return Err(Error::ShapeMismatch(format!(
                "feature width {} does not match encoding width {}",
                features.ncols(),
                encoding.width
            )));
        }
        if features.nrows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        let k = encoding.n_classes();
        if let Some(bad) = labels.iter().flatten().find(|&&y| y >= k) {
            return Err(Error::ShapeMismatch(format!("label index {bad} out of range for {k} classes")));
        }
        let label_mask = labels.iter().map(Option::is_some).collect();
        Ok(Self {
            schema,
            encoding,
            features,
            labels,
            label_mask,
            split,
            ground_truth: None,
        })
    }

    pub(crate) fn with_ground_truth(mut self, gt: GroundTruth) -> Self {
        self.ground_truth = Some(gt);
        self
    }

    pub fn schema(&self) -> &[ColumnSchema] {
        &self.schema
    }

    pub fn encoding(&self) -> &Encoding {
        &self.encoding
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn label_mask(&self) -> &[bool] {
        &self.label_mask
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn ground_truth(&self) -> Option<&GroundTruth> {
        self.ground_truth.as_ref()
    }

    /// Label visible to training code; `None` when masked or missing.
    pub fn observed_label(&self, i: usize) -> Option<usize> {
        if self.label_mask[i] {
            self.labels[i]
        } else {
            None
        }
    }

    /// Label value including masked ones. Only evaluation code should look
    /// at masked values.
    pub fn true_label(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    /// All labels for evaluation; rows whose label is unknown are skipped by
    /// callers via `Option`.
    pub fn true_labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.observed_label(i).is_some()).collect()
    }

    pub fn unobserved_indices(&self) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.observed_label(i).is_none()).collect()
    }

    /// Empirical label prior over observed labels.
    pub fn label_prior(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.encoding.n_classes()];
        let mut n = 0.0;
        for i in 0..self.n_rows() {
            if let Some(y) = self.observed_label(i) {
                counts[y] += 1.0;
                n += 1.0;
            }
        }
        if n > 0.0 {
            counts.iter_mut().for_each(|c| *c /= n);
        }
        counts
    }

    /// Discrete value of a named column for row `i` (label column included).
    pub fn discrete_value(&self, column: &str, i: usize) -> Option<usize> {
        if column == self.encoding.label.name {
            return self.labels[i];
        }
        self.encoding
            .segment(column)
            .and_then(|seg| seg.discrete_value(self.features.row(i)))
    }

    /// Values of a discrete column for all rows.
    pub fn discrete_column(&self, column: &str) -> Result<Vec<usize>> {
        let seg = self
            .encoding
            .segment(column)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown column `{column}`")))?;
        if !seg.is_discrete() {
            return Err(Error::InvalidArgument(format!("column `{column}` is not discrete")));
        }
        Ok(self
            .features
            .axis_iter(Axis(0))
            .map(|row| seg.discrete_value(row).expect("discrete segment"))
            .collect())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            encoding: self.encoding.clone(),
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            label_mask: indices.iter().map(|&i| self.label_mask[i]).collect(),
            split: self.split,
            ground_truth: self.ground_truth.clone(),
        }
    }

    fn with_split(mut self, split: SplitTag) -> Self {
        self.split = split;
        self
    }

    /// Mask exactly `floor(fraction * n_observed)` observed labels. The
    /// selection depends only on `seed`; masked values stay available through
    /// [`Dataset::true_label`].
    pub fn mask_labels(&self, fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&fraction) || fraction.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "mask fraction must be in [0, 1), got {fraction}"
            )));
        }
        let mut observed = self.observed_indices();
        let k = (fraction * observed.len() as f64).floor() as usize;
        let mut out = self.clone();
        if k == 0 {
            return Ok(out);
        }
        let mut rng = rng::from_seed(seed);
        observed.shuffle(&mut rng);
        for &i in &observed[..k] {
            out.label_mask[i] = false;
        }
        Ok(out)
    }

    /// Stratified split by (sensitive values, label) with the given test
    /// fraction; both halves share this dataset's encoding.
    pub fn split_stratified(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::InvalidArgument(format!(
                "test fraction must be in [0, 1), got {test_fraction}"
            )));
        }
        let sensitive: Vec<&Segment> = self
            .encoding
            .segments
            .iter()
            .filter(|s| s.sensitive && s.is_discrete())
            .collect();
        let mut strata: BTreeMap<(Vec<usize>, Option<usize>), Vec<usize>> = BTreeMap::new();
        for i in 0..self.n_rows() {
            let row = self.features.row(i);
            let key: Vec<usize> = sensitive
                .iter()
                .map(|s| s.discrete_value(row).expect("discrete"))
                .collect();
            strata.entry((key, self.labels[i])).or_default().push(i);
        }
        let mut rng = rng::from_seed(seed);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (_, mut idx) in strata {
            idx.shuffle(&mut rng);
            let n_test = (test_fraction * idx.len() as f64).round() as usize;
            test.extend_from_slice(&idx[..n_test]);
            train.extend_from_slice(&idx[n_test..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((
            self.subset(&train).with_split(SplitTag::Train),
            self.subset(&test).with_split(SplitTag::Test),
        ))
    }

    /// Human-readable rows including the label (blank when unknown).
    pub fn to_table(&self) -> Result<Table> {
        let labels: Vec<Option<usize>> = self.labels.clone();
        io::decode_with_labels(&self.schema, &self.encoding, self.features.view(), &labels)
    }
}

/// Inverse of the encoding for the feature part of `rows`, plus optional
/// label indices. Categorical groups must be exact one-hot rows (use
/// [`Encoding::discretize`] on generated rows first).
pub fn decode(d: &Dataset, rows: ArrayView2<'_, f64>, labels: Option<&[usize]>) -> Result<Table> {
    let labels: Vec<Option<usize>> = match labels {
        Some(l) => l.iter().map(|&y| Some(y)).collect(),
        None => vec![None; rows.nrows()],
    };
    io::decode_with_labels(d.schema(), d.encoding(), rows, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Vec<ColumnSchema> {
        vec![
            ColumnSchema::continuous("age"),
            ColumnSchema::categorical("sex", &["M", "F"]).sensitive(),
            ColumnSchema::binary("income").label(),
        ]
    }

    #[test]
    fn schema_needs_exactly_one_label() {
        let mut s = schema();
        s[2].is_label = false;
        assert!(matches!(validate_schema(&s), Err(Error::InvalidSchema(_))));
        let mut s = schema();
        s[1].is_label = true;
        s[1].is_sensitive = false;
        assert!(validate_schema(&s).is_err());
    }

    #[test]
    fn schema_rejects_duplicate_categories() {
        let mut s = schema();
        s[1].categories = vec!["M".into(), "M".into()];
        assert!(validate_schema(&s).is_err());
        s[1].categories.clear();
        assert!(validate_schema(&s).is_err());
    }

    #[test]
    fn encoding_layout() {
        let enc = Encoding::new(&schema(), &BTreeMap::new()).unwrap();
        assert_eq!(enc.width, 3);
        assert_eq!(enc.sensitive_indices(), vec![1, 2]);
        assert_eq!(enc.nonsensitive_indices(), vec![0]);
        assert_eq!(enc.n_classes(), 2);
    }

    #[test]
    fn continuous_rescaling() {
        let seg = Segment {
            name: "x".into(),
            offset: 0,
            width: 1,
            sensitive: false,
            kind: SegmentKind::Continuous { min: 0.0, max: 100.0 },
        };
        assert_eq!(seg.unscale(0.5), 50.0);
        assert_eq!(seg.scale(25.0), 0.25);
    }

    #[test]
    fn discretize_snaps_groups() {
        let enc = Encoding::new(&schema(), &BTreeMap::new()).unwrap();
        let x = ndarray::array![[1.3, 0.3, 0.7], [-0.2, 0.6, 0.4]];
        let d = enc.discretize(x.view());
        assert_eq!(d, ndarray::array![[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]);
    }
}
