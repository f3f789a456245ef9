//! Downstream evaluation: train on one sample (usually synthetic), test on
//! real held-out rows, and report utility, fairness gaps and leakage.

mod metrics;
mod models;

pub use metrics::{
    auroc, auroc_gap, auroc_trapezoid, average_precision, discriminative_score, jsd_marginal, leakage, parity_gap,
    parity_mi_oracle, plug_in_mi, DiscriminativeScore, TaskMetrics, PARITY_TOLERANCE,
};
pub use models::{train_downstream, DownstreamModelSpec, Forest, Logistic, ModelKind, OneVsRest, Predictor, Tree};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Encoding};
use crate::{Error, Result};

/// What to evaluate and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Sensitive column; the first sensitive column of the schema when unset.
    pub sensitive_column: Option<String>,
    /// Group indices for the gaps, reported as `rate(a) - rate(b)`.
    pub group_a: usize,
    pub group_b: usize,
    /// Class index treated as positive for precision, recall and F1.
    pub positive_class: usize,
    pub leakage_heldout_fraction: f64,
    pub jsd_bins: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            sensitive_column: None,
            group_a: 1,
            group_b: 0,
            positive_class: 1,
            leakage_heldout_fraction: 0.3,
            jsd_bins: 32,
            seed: 0,
        }
    }
}

impl EvalSettings {
    fn sensitive<'a>(&'a self, enc: &'a Encoding) -> Result<&'a str> {
        if let Some(name) = &self.sensitive_column {
            let seg = enc
                .segment(name)
                .ok_or_else(|| Error::Config(format!("unknown sensitive column `{name}`")))?;
            if !seg.is_discrete() {
                return Err(Error::Config(format!("sensitive column `{name}` is continuous")));
            }
            return Ok(name);
        }
        enc.segments
            .iter()
            .find(|s| s.sensitive && s.is_discrete())
            .map(|s| s.name.as_str())
            .ok_or_else(|| Error::Config("schema has no discrete sensitive column".into()))
    }
}

/// Confusion counts (class 1 positive) within one sensitive group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupConfusion {
    pub group: usize,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub model: String,
    pub train_accuracy: f64,
    pub test: TaskMetrics,
    pub parity_gap: f64,
    /// `None` when a group lacks one of the classes.
    pub auroc_gap: Option<f64>,
    pub data_leakage: f64,
    pub model_leakage: f64,
    pub delta_amplification: f64,
    pub jsd: Option<f64>,
    pub discriminative: Option<DiscriminativeScore>,
    pub confusion: Vec<GroupConfusion>,
}

fn sensitive_values(enc: &Encoding, column: &str, x: ArrayView2<'_, f64>) -> Vec<usize> {
    let seg = enc.segment(column).expect("checked column");
    x.outer_iter().map(|r| seg.discrete_value(r).expect("discrete")).collect()
}

fn labeled(d: &Dataset) -> (Vec<usize>, Vec<usize>) {
    let idx: Vec<usize> = (0..d.n_rows()).filter(|&i| d.true_label(i).is_some()).collect();
    let y = idx.iter().map(|&i| d.true_label(i).expect("filtered")).collect();
    (idx, y)
}

/// Train `spec` on `train` (encoded rows with labels), evaluate on the
/// labeled rows of `test`. Data leakage is measured on the training labels,
/// model leakage on the test predictions. With `reference` (real training
/// rows) the distributional metrics are filled in.
pub fn evaluate(
    train: (ArrayView2<'_, f64>, &[usize]),
    test: &Dataset,
    spec: &DownstreamModelSpec,
    settings: &EvalSettings,
    reference: Option<&Dataset>,
) -> Result<FairnessReport> {
    let enc = test.encoding();
    if train.0.ncols() != enc.width {
        return Err(Error::ShapeMismatch("training rows do not match the test encoding".into()));
    }
    let column = settings.sensitive(enc)?;
    let predictor = train_downstream(train.0, train.1, spec)?;
    let train_pred = predictor.predict(train.0);
    let train_accuracy =
        train_pred.iter().zip(train.1).filter(|(p, y)| p == y).count() as f64 / train.1.len() as f64;

    let (idx, y_test) = labeled(test);
    let x_test = test.features().select(ndarray::Axis(0), &idx);
    let scores = predictor.scores(x_test.view());
    let pred = predictor.predict(x_test.view());
    let sens_test = sensitive_values(enc, column, x_test.view());
    let sens_train = sensitive_values(enc, column, train.0);

    let metrics = TaskMetrics::compute(&pred, &scores, &y_test, settings.positive_class);
    let gap = parity_gap(&pred, &sens_test, settings.group_a, settings.group_b)?;
    let auc_gap = auroc_gap(&scores, &y_test, &sens_test, settings.group_a, settings.group_b)?;
    let data_leakage = leakage(train.1, &sens_train, None, settings.leakage_heldout_fraction, settings.seed)?;
    let model_leakage = leakage(&pred, &sens_test, None, settings.leakage_heldout_fraction, settings.seed)?;

    let n_groups = enc.segment(column).and_then(|s| s.cardinality()).unwrap_or(2);
    let confusion = (0..n_groups)
        .map(|g| {
            let mut c = GroupConfusion {
                group: g,
                tp: 0,
                fp: 0,
                tn: 0,
                fn_: 0,
            };
            for i in (0..pred.len()).filter(|&i| sens_test[i] == g) {
                match (pred[i] == 1, y_test[i] == 1) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, false) => c.tn += 1,
                    (false, true) => c.fn_ += 1,
                }
            }
            c
        })
        .collect();

    let (jsd, discriminative) = match reference {
        Some(real) => {
            let (ridx, ry) = labeled(real);
            let rx = real.features().select(ndarray::Axis(0), &ridx);
            let synth_x = enc.discretize(train.0);
            let j = jsd_marginal(enc, (rx.view(), &ry), (synth_x.view(), train.1), settings.jsd_bins);
            let d = discriminative_score(rx.view(), synth_x.view(), &DownstreamModelSpec::linear(settings.seed))?;
            (Some(j), Some(d))
        }
        None => (None, None),
    };

    Ok(FairnessReport {
        model: spec.name().to_string(),
        train_accuracy,
        test: metrics,
        parity_gap: gap,
        auroc_gap: auc_gap,
        data_leakage,
        model_leakage,
        delta_amplification: model_leakage - data_leakage,
        jsd,
        discriminative,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize_biased, BiasInjectionSpec};

    #[test]
    fn real_data_report_on_biased_toy() {
        let train = synthesize_biased(&BiasInjectionSpec::standard_biased(8000, 1)).unwrap();
        let test = synthesize_biased(&BiasInjectionSpec::standard_biased(8000, 2)).unwrap();
        let (idx, y) = labeled(&train);
        let x = train.features().select(ndarray::Axis(0), &idx);
        let r = evaluate((x.view(), &y), &test, &DownstreamModelSpec::linear(0), &EvalSettings::default(), Some(&train))
            .unwrap();
        assert!(r.parity_gap > 0.2, "{r:?}");
        assert!(r.data_leakage > 0.55);
        assert_eq!(r.delta_amplification, r.model_leakage - r.data_leakage);
        assert!(r.test.accuracy > 0.8);
        assert!(r.jsd.unwrap() < 0.01);
        assert!(r.discriminative.unwrap().score < 0.05);
        let total: usize = r.confusion.iter().map(|c| c.tp + c.fp + c.tn + c.fn_).sum();
        assert_eq!(total, test.n_rows());
    }
}
