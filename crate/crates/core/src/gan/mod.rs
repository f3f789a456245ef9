//! Semi-supervised three-player adversarial training: a classifier that
//! labels unlabeled rows, a label-conditional generator and a discriminator
//! over (row, label) pairs. With fully labeled data the game reduces to the
//! ordinary two-player GAN.

mod step;
pub(crate) mod train;

use std::path::Path;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::distributions::WeightedIndex;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Encoding, SegmentKind};
use crate::nn::{Activation, Adam, HeadPart, HeadSegment, Mlp, NetworkSpec, OutputHead};
use crate::{rng, Error, Result};

pub use step::{
    adversarial_step, discriminator_update, loss_gcd, standard_gan_losses, Batch, GanLosses, GeneratorPenalty,
    PlayerWeights, StepGradients, StepOutcome,
};
pub use train::{draw_batch, eval_sample_size, monitor_lds, train_stage1, BatchSampler};

/// Lower clamp of discriminator density ratios; the upper clamp is its
/// reciprocal.
pub const RATIO_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    Uniform,
    Normal,
}

/// Objective for the players that try to fool the discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryObjective {
    /// Minimize `-log D(fake)`.
    NonSaturating,
    /// Minimize `log(1 - D(fake))`.
    Minimax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub lambda_balance: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// First-moment decay of the adaptive-moment optimizer.
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub seed: u64,
    pub noise_dim: usize,
    pub noise_distribution: NoiseDistribution,
    pub objective: AdversaryObjective,
    pub gumbel_temperature: f64,
    /// Upper bound on the generated sample used for per-epoch LDS monitoring.
    pub monitor_sample_cap: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda_balance: 0.5,
            batch_size: 1024,
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            epochs: 100,
            seed: 0,
            noise_dim: 16,
            noise_distribution: NoiseDistribution::Normal,
            objective: AdversaryObjective::NonSaturating,
            gumbel_temperature: 0.2,
            monitor_sample_cap: 20_000,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda_balance > 0.0 && self.lambda_balance < 1.0) {
            return bad(format!("lambda_balance must lie in (0, 1), got {}", self.lambda_balance));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("optimizer betas must lie in [0, 1)".into());
        }
        if self.noise_dim == 0 {
            return bad("noise_dim must be at least 1".into());
        }
        if !(self.gumbel_temperature > 0.0) {
            return bad(format!("gumbel_temperature must be > 0, got {}", self.gumbel_temperature));
        }
        Ok(())
    }
}

/// Architectures of the three players.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpecs {
    pub classifier: NetworkSpec,
    pub generator: NetworkSpec,
    pub discriminator: NetworkSpec,
}

/// Hidden widths never drop below this, so tiny schemas still get usable
/// networks.
pub const MIN_HIDDEN: usize = 32;

impl ModelSpecs {
    /// Default shapes for an encoded width `f` and `k` label classes:
    /// generator `2f -> 1.5f -> f` with normalization, classifier
    /// `64 -> 128 -> 256 -> k`, discriminator `64 -> 64 -> 64 -> 1`.
    pub fn for_width(f: usize, k: usize, gumbel_temperature: f64) -> Self {
        let h1 = (2 * f).max(MIN_HIDDEN);
        let h2 = ((3 * f).div_ceil(2)).max(MIN_HIDDEN);
        Self {
            classifier: NetworkSpec {
                layer_widths: vec![64, 128, 256, k],
                activation: Activation::LeakyRelu,
                output_head: OutputHead::Linear,
                batch_norm: false,
            },
            generator: NetworkSpec {
                layer_widths: vec![h1, h2, f],
                activation: Activation::Relu,
                output_head: OutputHead::GumbelSoftmax {
                    temperature: gumbel_temperature,
                    straight_through: true,
                },
                batch_norm: true,
            },
            discriminator: NetworkSpec {
                layer_widths: vec![64, 64, 64, 1],
                activation: Activation::LeakyRelu,
                output_head: OutputHead::Linear,
                batch_norm: false,
            },
        }
    }
}

/// Generator head layout matching the encoded columns.
pub fn head_layout(encoding: &Encoding) -> Vec<HeadSegment> {
    encoding
        .segments
        .iter()
        .map(|seg| HeadSegment {
            offset: seg.offset,
            width: seg.width,
            part: match seg.kind {
                SegmentKind::Continuous { .. } => HeadPart::Continuous,
                SegmentKind::Binary => HeadPart::Binary,
                SegmentKind::Categorical { .. } => HeadPart::Categorical,
            },
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Optimizers {
    pub classifier: Adam,
    pub generator: Adam,
    pub discriminator: Adam,
}

/// Per-epoch record of one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: String,
    pub epoch: usize,
    pub discriminator_loss: f64,
    pub generator_loss: f64,
    pub classifier_loss: f64,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutual_information: Option<f64>,
    /// LDS per monitored subgroup, in subgroup order.
    pub lds: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub subgroups: Vec<String>,
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    /// LDS trace of one stage, `trace[e][j]` for epoch `e`, subgroup `j`.
    pub fn lds_trace(&self, stage: &str) -> Vec<Vec<f64>> {
        self.epochs
            .iter()
            .filter(|e| e.stage == stage)
            .map(|e| e.lds.clone())
            .collect()
    }
}

/// All networks and training state of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelBundle {
    pub encoding: Encoding,
    pub schema_hash: String,
    pub classifier: Mlp,
    pub generator: Mlp,
    pub discriminator: Mlp,
    /// Copy of the discriminator taken at the end of pretraining; never
    /// updated afterwards.
    pub discriminator_frozen: Option<Mlp>,
    /// Mutual-information statistic network, present after bias transform.
    #[serde(default)]
    pub statistic: Option<Mlp>,
    pub optimizers: Optimizers,
    pub label_prior: Vec<f64>,
    pub noise_dim: usize,
    pub noise_distribution: NoiseDistribution,
    pub log: TrainingLog,
}

/// Build the three players with deterministic initialization.
pub fn init_models(encoding: &Encoding, specs: &ModelSpecs, cfg: &TrainingConfig) -> Result<ModelBundle> {
    cfg.validate()?;
    let f = encoding.width;
    let k = encoding.n_classes();
    if specs.generator.output_width() != f {
        return Err(Error::ShapeMismatch(format!(
            "generator emits {} values but the encoded schema is {f} wide",
            specs.generator.output_width()
        )));
    }
    if specs.classifier.output_width() != k {
        return Err(Error::ShapeMismatch(format!(
            "classifier head has width {} but the label has {k} classes",
            specs.classifier.output_width()
        )));
    }
    if specs.discriminator.output_width() != 1 {
        return Err(Error::ShapeMismatch("discriminator must emit one logit".into()));
    }
    if !matches!(specs.classifier.output_head, OutputHead::Linear)
        || !matches!(specs.discriminator.output_head, OutputHead::Linear)
    {
        return Err(Error::ShapeMismatch(
            "classifier and discriminator heads must be linear (logits)".into(),
        ));
    }
    let seed = rng::derive_seed(cfg.seed, "init");
    let classifier = Mlp::new(f, &specs.classifier, None, &mut rng::substream(seed, "classifier"))?;
    let generator = Mlp::new(
        k + cfg.noise_dim,
        &specs.generator,
        Some(head_layout(encoding)),
        &mut rng::substream(seed, "generator"),
    )?;
    let discriminator = Mlp::new(f + k, &specs.discriminator, None, &mut rng::substream(seed, "discriminator"))?;
    let adam = |n| Adam::new(n, cfg.learning_rate, cfg.beta1, cfg.beta2);
    let optimizers = Optimizers {
        classifier: adam(classifier.n_params()),
        generator: adam(generator.n_params()),
        discriminator: adam(discriminator.n_params()),
    };
    Ok(ModelBundle {
        schema_hash: encoding.hash(),
        encoding: encoding.clone(),
        classifier,
        generator,
        discriminator,
        discriminator_frozen: None,
        statistic: None,
        optimizers,
        label_prior: vec![1.0 / k as f64; k],
        noise_dim: cfg.noise_dim,
        noise_distribution: cfg.noise_distribution,
        log: TrainingLog::default(),
    })
}

pub fn one_hot(labels: &[usize], k: usize) -> Array2<f64> {
    let mut out = Array2::zeros((labels.len(), k));
    for (i, &y) in labels.iter().enumerate() {
        out[[i, y]] = 1.0;
    }
    out
}

/// Row-wise concatenation `[a | b]`.
pub fn hstack(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    assert_eq!(a.nrows(), b.nrows(), "row counts agree");
    let mut out = Array2::zeros((a.nrows(), a.ncols() + b.ncols()));
    out.slice_mut(s![.., ..a.ncols()]).assign(&a);
    out.slice_mut(s![.., a.ncols()..]).assign(&b);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchStage {
    Pretrain,
    Transformed,
    DrsFiltered,
}

/// Generated rows `x'` (relaxed encoding), conditioning labels `y'` and the
/// sensitive columns of `x'`.
#[derive(Debug, Clone)]
pub struct GeneratedBatch {
    pub x_prime: Array2<f64>,
    pub y_prime: Array2<f64>,
    pub s_prime: Array2<f64>,
    pub stage: BatchStage,
    pub seed: u64,
    pub epoch: usize,
}

impl GeneratedBatch {
    pub fn len(&self) -> usize {
        self.x_prime.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Vec<usize> {
        self.y_prime
            .outer_iter()
            .map(crate::data::argmax)
            .collect()
    }

    pub fn labels_opt(&self) -> Vec<Option<usize>> {
        self.labels().into_iter().map(Some).collect()
    }

    /// Rows snapped to valid one-hot / binary codes.
    pub fn discretized(&self, encoding: &Encoding) -> Array2<f64> {
        encoding.discretize(self.x_prime.view())
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x_prime: self.x_prime.select(Axis(0), idx),
            y_prime: self.y_prime.select(Axis(0), idx),
            s_prime: self.s_prime.select(Axis(0), idx),
            ..self.clone()
        }
    }

    pub fn concat(parts: &[GeneratedBatch]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("no batches to concatenate".into()))?;
        let cat = |f: fn(&GeneratedBatch) -> ArrayView2<'_, f64>| {
            concatenate(Axis(0), &parts.iter().map(f).collect::<Vec<_>>()).expect("same widths")
        };
        Ok(Self {
            x_prime: cat(|b| b.x_prime.view()),
            y_prime: cat(|b| b.y_prime.view()),
            s_prime: cat(|b| b.s_prime.view()),
            ..first.clone()
        })
    }
}

/// Sensitive projection of encoded rows.
pub fn sensitive_projection(encoding: &Encoding, x: ArrayView2<'_, f64>) -> Array2<f64> {
    x.select(Axis(1), &encoding.sensitive_indices())
}

impl ModelBundle {
    pub fn n_classes(&self) -> usize {
        self.encoding.n_classes()
    }

    pub fn sample_noise(&self, n: usize, rng: &mut rng::Rng) -> Array2<f64> {
        match self.noise_distribution {
            NoiseDistribution::Normal => Array2::from_shape_fn((n, self.noise_dim), |_| rng.sample(StandardNormal)),
            NoiseDistribution::Uniform => Array2::from_shape_fn((n, self.noise_dim), |_| rng.gen_range(-1.0..1.0)),
        }
    }

    pub fn sample_labels(&self, n: usize, rng: &mut rng::Rng) -> Vec<usize> {
        let dist = WeightedIndex::new(&self.label_prior).expect("label prior has positive mass");
        (0..n).map(|_| dist.sample(rng)).collect()
    }

    /// Generator input `[onehot(y) | z]`.
    pub fn generator_input(&self, y: &Array2<f64>, z: &Array2<f64>) -> Array2<f64> {
        hstack(y.view(), z.view())
    }
}

/// Draw `n` rows from the generator: labels from the training prior, noise
/// from the configured distribution, relaxed heads sampled with Gumbel noise.
pub fn generate(bundle: &ModelBundle, n: usize, seed: u64) -> Result<GeneratedBatch> {
    generate_staged(bundle, n, seed, BatchStage::Pretrain, 0)
}

pub fn generate_staged(bundle: &ModelBundle, n: usize, seed: u64, stage: BatchStage, epoch: usize) -> Result<GeneratedBatch> {
    if n == 0 {
        return Err(Error::InvalidArgument("cannot generate zero rows".into()));
    }
    let mut r = rng::from_seed(seed);
    let labels = bundle.sample_labels(n, &mut r);
    let y = one_hot(&labels, bundle.n_classes());
    let z = bundle.sample_noise(n, &mut r);
    let x = bundle
        .generator
        .forward(bundle.generator_input(&y, &z).view(), crate::nn::Mode::Eval, Some(&mut r))
        .output;
    Ok(GeneratedBatch {
        s_prime: sensitive_projection(&bundle.encoding, x.view()),
        x_prime: x,
        y_prime: y,
        stage,
        seed,
        epoch,
    })
}

/// Discriminator input `[x | y]`.
pub fn discriminator_input(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Array2<f64> {
    hstack(x, y)
}

/// Density ratio `p / p_gamma = D / (1 - D) = exp(logit)` from the frozen
/// discriminator, clamped to `[RATIO_EPS, 1 / RATIO_EPS]`.
pub fn discriminator_density_ratio(bundle: &ModelBundle, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    Ok(frozen_log_ratio(bundle, x, y)?.into_iter().map(f64::exp).collect())
}

/// Clamped log density ratio from the frozen discriminator.
pub fn frozen_log_ratio(bundle: &ModelBundle, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    let d = bundle
        .discriminator_frozen
        .as_ref()
        .ok_or_else(|| Error::NotReady("the frozen discriminator is set at the end of pretraining".into()))?;
    let logits = d.predict(discriminator_input(x, y).view());
    let bound = -RATIO_EPS.ln();
    Ok(logits.column(0).iter().map(|l| l.clamp(-bound, bound)).collect())
}

/// Ratio implied by a discriminator probability.
pub fn ratio_from_probability(d: f64) -> f64 {
    (d / (1.0 - d)).clamp(RATIO_EPS, 1.0 / RATIO_EPS)
}

/// Classifier class probabilities.
pub fn classify(bundle: &ModelBundle, x: ArrayView2<'_, f64>) -> Array2<f64> {
    let logits = bundle.classifier.predict(x);
    crate::nn::gumbel_softmax(&logits, 1.0, None)
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: u32,
    bundle: ModelBundle,
}

const CHECKPOINT_FORMAT: u32 = 1;

impl ModelBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&Checkpoint {
            format: CHECKPOINT_FORMAT,
            bundle: self.clone(),
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Load a checkpoint, refusing it if it was trained on another layout.
    pub fn load(path: &Path, expected_schema_hash: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::CheckpointMismatch {
                expected: format!("format {CHECKPOINT_FORMAT}"),
                found: format!("format {}", ck.format),
            });
        }
        if ck.bundle.schema_hash != expected_schema_hash {
            return Err(Error::CheckpointMismatch {
                expected: expected_schema_hash.to_string(),
                found: ck.bundle.schema_hash,
            });
        }
        Ok(ck.bundle)
    }
}

/// Relaxed one-hot groups of generated rows: maximum deviation of a group
/// sum from 1.
pub fn max_group_sum_error(encoding: &Encoding, x: ArrayView2<'_, f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for seg in &encoding.segments {
        if let SegmentKind::Categorical { .. } = seg.kind {
            for row in x.outer_iter() {
                let sum: f64 = row.slice(s![seg.range()]).sum();
                worst = worst.max((sum - 1.0).abs());
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize_biased, BiasInjectionSpec};

    fn setup() -> (crate::data::Dataset, ModelSpecs, TrainingConfig) {
        let d = synthesize_biased(&BiasInjectionSpec::standard_biased(500, 3)).unwrap();
        let specs = ModelSpecs::for_width(d.encoding().width, 2, 0.2);
        (d, specs, TrainingConfig::default())
    }

    #[test]
    fn shapes_are_checked() {
        let (d, mut specs, cfg) = setup();
        assert!(init_models(d.encoding(), &specs, &cfg).is_ok());
        specs.classifier.layer_widths = vec![8, 3];
        assert!(matches!(init_models(d.encoding(), &specs, &cfg), Err(Error::ShapeMismatch(_))));
        let (d, mut specs, cfg) = setup();
        *specs.generator.layer_widths.last_mut().unwrap() += 1;
        assert!(matches!(init_models(d.encoding(), &specs, &cfg), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn initialization_is_seeded() {
        let (d, specs, mut cfg) = setup();
        let a = init_models(d.encoding(), &specs, &cfg).unwrap();
        let b = init_models(d.encoding(), &specs, &cfg).unwrap();
        assert_eq!(a.generator.params(), b.generator.params());
        assert_eq!(a.discriminator.params(), b.discriminator.params());
        cfg.seed = 1;
        let c = init_models(d.encoding(), &specs, &cfg).unwrap();
        assert_ne!(a.generator.params(), c.generator.params());
    }

    #[test]
    fn generation_is_deterministic_and_normalized() {
        let (d, specs, cfg) = setup();
        let mut m = init_models(d.encoding(), &specs, &cfg).unwrap();
        m.label_prior = vec![0.3, 0.7];
        let a = generate(&m, 1024, 9).unwrap();
        let b = generate(&m, 1024, 9).unwrap();
        assert_eq!(a.x_prime, b.x_prime);
        assert!(max_group_sum_error(d.encoding(), a.x_prime.view()) < 1e-5);
        let n = 20_000;
        let big = generate(&m, n, 1).unwrap();
        let ones = big.labels().iter().filter(|&&y| y == 1).count() as f64 / n as f64;
        assert!((ones - 0.7).abs() < 3.0 / (n as f64).sqrt());
        assert!(generate(&m, 0, 1).is_err());
    }

    #[test]
    fn ratio_algebra() {
        assert!((ratio_from_probability(0.5) - 1.0).abs() < 1e-12);
        assert!((ratio_from_probability(0.8) - 4.0).abs() < 1e-12);
        assert_eq!(ratio_from_probability(1.0), 1.0 / RATIO_EPS);
        assert_eq!(ratio_from_probability(0.0), RATIO_EPS);
    }

    #[test]
    fn ratio_requires_frozen_discriminator() {
        let (d, specs, cfg) = setup();
        let m = init_models(d.encoding(), &specs, &cfg).unwrap();
        let y = one_hot(&[0], 2);
        let x = d.features().slice(s![0..1, ..]).to_owned();
        assert!(matches!(discriminator_density_ratio(&m, x.view(), y.view()), Err(Error::NotReady(_))));
    }

    #[test]
    fn checkpoint_round_trip_and_hash_guard() {
        let (d, specs, cfg) = setup();
        let m = init_models(d.encoding(), &specs, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let back = ModelBundle::load(&path, &m.schema_hash).unwrap();
        assert_eq!(back.generator.params(), m.generator.params());
        assert!(matches!(
            ModelBundle::load(&path, "deadbeef"),
            Err(Error::CheckpointMismatch { .. })
        ));
    }
}
