use ndarray::Axis;
use rand::distributions::WeightedIndex;
use rand::seq::SliceRandom;
use rand_distr::Distribution;

use super::{adversarial_step, generate_staged, Batch, BatchStage, EpochLog, GanLosses, ModelBundle, TrainingConfig};
use crate::data::Dataset;
use crate::representation::{lds_records, LdsRecord, SamplingTable, Subgroup};
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Where mini-batch rows come from.
#[derive(Debug, Clone)]
pub enum BatchSampler {
    /// Shuffled passes over the data.
    Uniform,
    /// Independent draws with replacement from a per-row distribution.
    Weighted(SamplingTable),
}

/// Row indices of every mini-batch in one epoch.
pub(crate) fn epoch_batches(n: usize, cfg: &TrainingConfig, sampler: &BatchSampler, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    let steps = n.div_ceil(cfg.batch_size);
    match sampler {
        BatchSampler::Uniform => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            Ok(order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect())
        }
        BatchSampler::Weighted(table) => {
            table.validate(n)?;
            let dist = WeightedIndex::new(&table.probabilities)
                .map_err(|e| Error::InvalidArgument(format!("sampling table: {e}")))?;
            Ok((0..steps)
                .map(|_| (0..cfg.batch_size.min(n)).map(|_| dist.sample(rng)).collect())
                .collect())
        }
    }
}

/// Assemble a batch from row indices, splitting by label visibility.
pub fn draw_batch(data: &Dataset, rows: &[usize]) -> Batch {
    let (labeled, unlabeled): (Vec<usize>, Vec<usize>) =
        rows.iter().partition(|&&i| data.observed_label(i).is_some());
    Batch {
        labeled_x: data.features().select(Axis(0), &labeled),
        labeled_y: labeled.iter().map(|&i| data.observed_label(i).expect("observed")).collect(),
        unlabeled_x: data.features().select(Axis(0), &unlabeled),
    }
}

/// Size of the generated sample used to estimate subgroup frequencies:
/// ten times the largest monitored subgroup, at least 4096, capped.
pub fn eval_sample_size(data: &Dataset, subgroups: &[Subgroup], cap: usize) -> usize {
    let labels: Vec<Option<usize>> = (0..data.n_rows()).map(|i| data.observed_label(i)).collect();
    let largest = subgroups
        .iter()
        .map(|g| {
            let (p, n) = g.frequency(data.features().view(), &labels);
            (p * n as f64).round() as usize
        })
        .max()
        .unwrap_or(0);
    (10 * largest).max(4096).min(cap.max(4096))
}

/// LDS of each monitored subgroup for a fresh generated sample.
pub fn monitor_lds(
    bundle: &ModelBundle,
    data: &Dataset,
    subgroups: &[Subgroup],
    n: usize,
    seed: u64,
    stage: BatchStage,
    epoch: usize,
) -> Result<Vec<LdsRecord>> {
    if subgroups.is_empty() {
        return Ok(Vec::new());
    }
    let batch = generate_staged(bundle, n, seed, stage, epoch)?;
    let synth = batch.discretized(&bundle.encoding);
    let synth_labels = batch.labels_opt();
    let real_labels: Vec<Option<usize>> = (0..data.n_rows()).map(|i| data.observed_label(i)).collect();
    Ok(lds_records(
        subgroups,
        (data.features().view(), &real_labels),
        (synth.view(), &synth_labels),
        epoch,
    ))
}

#[derive(Default)]
pub(crate) struct LossMeter {
    sum: GanLosses,
    mi: f64,
    n: usize,
    n_mi: usize,
}

impl LossMeter {
    pub(crate) fn add(&mut self, l: &GanLosses) {
        self.sum.discriminator += l.discriminator;
        self.sum.generator += l.generator;
        self.sum.classifier += l.classifier;
        self.sum.cross_entropy += l.cross_entropy;
        self.sum.value += l.value;
        self.n += 1;
    }

    pub(crate) fn add_mi(&mut self, v: f64) {
        self.mi += v;
        self.n_mi += 1;
    }

    pub(crate) fn finish(&self, stage: &str, epoch: usize, lds: Vec<f64>) -> EpochLog {
        let n = self.n.max(1) as f64;
        EpochLog {
            stage: stage.to_string(),
            epoch,
            discriminator_loss: self.sum.discriminator / n,
            generator_loss: self.sum.generator / n,
            classifier_loss: self.sum.classifier / n,
            value: self.sum.value / n,
            mutual_information: (self.n_mi > 0).then(|| self.mi / self.n_mi as f64),
            lds,
        }
    }
}

pub(crate) fn check_finite(l: &GanLosses, epoch: usize) -> Result<()> {
    match l.first_non_finite() {
        Some(name) => Err(Error::Divergence {
            epoch,
            loss: name.to_string(),
        }),
        None => Ok(()),
    }
}

pub(crate) fn check_labels(data: &Dataset) -> Result<()> {
    let k = data.encoding().n_classes();
    let mut seen = vec![false; k];
    for i in 0..data.n_rows() {
        if let Some(y) = data.observed_label(i) {
            seen[y] = true;
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidArgument(format!(
            "no observed label for class `{}`",
            data.encoding().label.classes[missing]
        )));
    }
    Ok(())
}

/// Stage 1: alternating adversarial training from scratch, recording the LDS
/// of every monitored subgroup after each epoch. The discriminator is frozen
/// into `discriminator_frozen` at the end.
pub fn train_stage1(data: &Dataset, mut bundle: ModelBundle, cfg: &TrainingConfig, monitor: &[Subgroup]) -> Result<ModelBundle> {
    cfg.validate()?;
    if data.encoding().hash() != bundle.schema_hash {
        return Err(Error::ShapeMismatch("dataset encoding differs from the model's".into()));
    }
    check_labels(data)?;
    bundle.label_prior = data.label_prior();
    bundle.log.subgroups = monitor.iter().map(|g| g.id().to_string()).collect();
    let semi = !data.unobserved_indices().is_empty();
    let mut batch_rng = rng::substream(cfg.seed, "batch");
    let monitor_seed = rng::derive_seed(cfg.seed, "monitor");
    let eval_n = eval_sample_size(data, monitor, cfg.monitor_sample_cap);

    for epoch in 0..cfg.epochs {
        let mut meter = LossMeter::default();
        for rows in epoch_batches(data.n_rows(), cfg, &BatchSampler::Uniform, &mut batch_rng)? {
            let batch = draw_batch(data, &rows);
            if batch.labeled_x.nrows() == 0 {
                continue;
            }
            let out = adversarial_step(&mut bundle, &batch, cfg, semi, &mut batch_rng, None)?;
            check_finite(&out.losses, epoch)?;
            meter.add(&out.losses);
        }
        let lds = monitor_lds(
            &bundle,
            data,
            monitor,
            eval_n,
            monitor_seed.wrapping_add(epoch as u64),
            BatchStage::Pretrain,
            epoch,
        )?;
        let entry = meter.finish("pretrain", epoch, lds.iter().map(|r| r.lds).collect());
        log::debug!(
            "pretrain epoch {epoch}: d {:.4} g {:.4} c {:.4}",
            entry.discriminator_loss,
            entry.generator_loss,
            entry.classifier_loss
        );
        bundle.log.epochs.push(entry);
    }
    bundle.discriminator_frozen = Some(bundle.discriminator.clone());
    Ok(bundle)
}
