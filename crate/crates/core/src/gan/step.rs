use ndarray::{s, Array2, ArrayView2};

use super::{discriminator_input, one_hot, AdversaryObjective, ModelBundle, TrainingConfig};
use crate::nn::{gumbel_softmax, gumbel_softmax_backward, sigmoid, softplus, Adam, Mlp, Mode};
use crate::rng::Rng;
use crate::{Error, Result};

/// One mini-batch of training rows split by label visibility.
#[derive(Debug, Clone)]
pub struct Batch {
    pub labeled_x: Array2<f64>,
    pub labeled_y: Vec<usize>,
    pub unlabeled_x: Array2<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labeled_x.nrows() + self.unlabeled_x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Weights of the two "fake" expectations in the discriminator objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlayerWeights {
    /// Pairs labeled by the classifier.
    pub pseudo: f64,
    /// Pairs produced by the generator.
    pub generated: f64,
}

impl PlayerWeights {
    /// Three-player weights `(lambda, 1 - lambda)`, or the two-player game
    /// `(0, 1)` when every label is observed.
    pub fn new(lambda: f64, semi_supervised: bool) -> Self {
        if semi_supervised {
            Self {
                pseudo: lambda,
                generated: 1.0 - lambda,
            }
        } else {
            Self {
                pseudo: 0.0,
                generated: 1.0,
            }
        }
    }
}

/// Per-player losses of one batch. `value` is the game value
/// `E log D(real) + w_c E log(1 - D(pseudo)) + w_g E log(1 - D(fake)) + CE`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GanLosses {
    /// Minimized by the discriminator (the negated adversarial value).
    pub discriminator: f64,
    pub generator: f64,
    /// Adversarial part plus cross-entropy on observed labels.
    pub classifier: f64,
    pub cross_entropy: f64,
    pub value: f64,
}

impl GanLosses {
    pub fn is_finite(&self) -> bool {
        [self.discriminator, self.generator, self.classifier, self.value]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("discriminator", self.discriminator),
            ("generator", self.generator),
            ("classifier", self.classifier),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for x in v {
        s += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// `log D` and `log(1 - D)` for a logit.
fn log_d(l: f64) -> f64 {
    -softplus(-l)
}

fn log_1m_d(l: f64) -> f64 {
    -softplus(l)
}

fn adversary_loss(logits: &[f64], objective: AdversaryObjective) -> f64 {
    match objective {
        AdversaryObjective::NonSaturating => mean(logits.iter().map(|&l| -log_d(l))),
        AdversaryObjective::Minimax => mean(logits.iter().map(|&l| log_1m_d(l))),
    }
}

/// d(adversary loss)/d(logit) for one sample, before averaging.
fn adversary_grad(l: f64, objective: AdversaryObjective) -> f64 {
    match objective {
        AdversaryObjective::NonSaturating => -sigmoid(-l),
        AdversaryObjective::Minimax => -sigmoid(l),
    }
}

/// Losses from discriminator logits on the three kinds of pairs.
pub fn losses_from_logits(
    real: &[f64],
    pseudo: &[f64],
    fake: &[f64],
    cross_entropy: f64,
    w: PlayerWeights,
    objective: AdversaryObjective,
) -> GanLosses {
    let adv = mean(real.iter().map(|&l| log_d(l)))
        + w.pseudo * mean(pseudo.iter().map(|&l| log_1m_d(l)))
        + w.generated * mean(fake.iter().map(|&l| log_1m_d(l)));
    GanLosses {
        discriminator: -adv,
        generator: w.generated * adversary_loss(fake, objective),
        classifier: w.pseudo * adversary_loss(pseudo, objective) + cross_entropy,
        cross_entropy,
        value: adv + cross_entropy,
    }
}

/// Textbook two-player losses: discriminator `-E log D(x) - E log(1 - D(G(z)))`,
/// generator per `objective`.
pub fn standard_gan_losses(real: &[f64], fake: &[f64], objective: AdversaryObjective) -> (f64, f64) {
    let d = -(mean(real.iter().map(|&l| log_d(l))) + mean(fake.iter().map(|&l| log_1m_d(l))));
    (d, adversary_loss(fake, objective))
}

/// Something added to the generator's loss, differentiable in the generated
/// rows. Receives the relaxed rows `x'` and the one-hot labels `y'`.
pub trait GeneratorPenalty {
    fn penalty(&mut self, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepGradients {
    pub discriminator: Vec<f64>,
    pub generator: Vec<f64>,
    pub classifier: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub losses: GanLosses,
    /// Unweighted penalty value when a penalty was supplied.
    pub penalty: Option<f64>,
    pub gradients: StepGradients,
}

fn logits_of(net: &Mlp, input: ArrayView2<'_, f64>) -> (crate::nn::Forward, Vec<f64>) {
    let fwd = net.forward(input, Mode::Train, None);
    let l = fwd.output.column(0).to_vec();
    (fwd, l)
}

/// Gradient column for a single-logit output.
fn column(grads: Vec<f64>) -> Array2<f64> {
    let n = grads.len();
    Array2::from_shape_vec((n, 1), grads).expect("column")
}

/// Discriminator loss and parameter gradient on explicit pairs. `pseudo`
/// may be empty.
pub fn discriminator_loss_grad(
    disc: &Mlp,
    real: ArrayView2<'_, f64>,
    pseudo: ArrayView2<'_, f64>,
    fake: ArrayView2<'_, f64>,
    w: PlayerWeights,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; disc.n_params()];
    let mut loss = 0.0;
    let mut part = |x: ArrayView2<'_, f64>, weight: f64, is_real: bool| {
        if x.nrows() == 0 || weight == 0.0 {
            return;
        }
        let (fwd, l) = logits_of(disc, x);
        let n = l.len() as f64;
        let (term, g): (f64, Vec<f64>) = if is_real {
            (
                mean(l.iter().map(|&v| -log_d(v))),
                l.iter().map(|&v| -sigmoid(-v) / n).collect(),
            )
        } else {
            (
                weight * mean(l.iter().map(|&v| -log_1m_d(v))),
                l.iter().map(|&v| weight * sigmoid(v) / n).collect(),
            )
        };
        loss += term;
        let (pg, _) = disc.backward(&fwd, column(g).view());
        grad.iter_mut().zip(pg).for_each(|(a, b)| *a += b);
    };
    part(real, 1.0, true);
    part(pseudo, w.pseudo, false);
    part(fake, w.generated, false);
    (loss, grad)
}

/// One optimizer step of a discriminator on explicit pairs; returns the loss
/// before the step and the gradient used.
pub fn discriminator_update(
    disc: &mut Mlp,
    opt: &mut Adam,
    real: ArrayView2<'_, f64>,
    pseudo: ArrayView2<'_, f64>,
    fake: ArrayView2<'_, f64>,
    w: PlayerWeights,
) -> (f64, Vec<f64>) {
    let (loss, grad) = discriminator_loss_grad(disc, real, pseudo, fake, w);
    opt.step(disc.params_mut(), &grad);
    (loss, grad)
}

/// Softmax cross-entropy of classifier logits against labels, with the
/// gradient on the logits (already averaged).
fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let p = gumbel_softmax(logits, 1.0, None);
    let n = labels.len().max(1) as f64;
    let mut loss = 0.0;
    let mut g = p.clone();
    for (i, &y) in labels.iter().enumerate() {
        loss -= p[[i, y]].max(1e-300).ln();
        g[[i, y]] -= 1.0;
    }
    g /= n;
    (loss / n, g)
}

struct Fakes {
    y: Array2<f64>,
    fwd: crate::nn::Forward,
}

fn draw_fakes(bundle: &ModelBundle, n: usize, rng: &mut Rng) -> Fakes {
    let labels = bundle.sample_labels(n, rng);
    let y = one_hot(&labels, bundle.n_classes());
    let z = bundle.sample_noise(n, rng);
    let fwd = bundle
        .generator
        .forward(bundle.generator_input(&y, &z).view(), Mode::Train, Some(rng));
    Fakes { y, fwd }
}

/// Losses of the current players on a batch, without updating anything.
pub fn loss_gcd(bundle: &ModelBundle, batch: &Batch, cfg: &TrainingConfig, rng: &mut Rng) -> Result<GanLosses> {
    if batch.labeled_x.nrows() == 0 {
        return Err(Error::InvalidArgument("the real batch has no labeled rows".into()));
    }
    let semi = batch.unlabeled_x.nrows() > 0;
    let w = PlayerWeights::new(cfg.lambda_balance, semi);
    let k = bundle.n_classes();
    let fakes = draw_fakes(bundle, batch.len(), rng);
    let real_in = discriminator_input(batch.labeled_x.view(), one_hot(&batch.labeled_y, k).view());
    let real = bundle.discriminator.predict(real_in.view()).column(0).to_vec();
    let fake_in = discriminator_input(fakes.fwd.output.view(), fakes.y.view());
    let fake = bundle.discriminator.predict(fake_in.view()).column(0).to_vec();
    let pseudo = if semi {
        let logits = bundle.classifier.predict(batch.unlabeled_x.view());
        let yc = gumbel_softmax(&logits, cfg.gumbel_temperature, Some(rng));
        let input = discriminator_input(batch.unlabeled_x.view(), yc.view());
        bundle.discriminator.predict(input.view()).column(0).to_vec()
    } else {
        Vec::new()
    };
    let (ce, _) = cross_entropy(&bundle.classifier.predict(batch.labeled_x.view()), &batch.labeled_y);
    Ok(losses_from_logits(&real, &pseudo, &fake, ce, w, cfg.objective))
}

/// One alternating update: discriminator, then generator (plus
/// `alpha * penalty` when given), then classifier.
///
/// `semi_supervised` selects the three-player weights; it is a property of
/// the dataset, not of the individual batch.
pub fn adversarial_step(
    bundle: &mut ModelBundle,
    batch: &Batch,
    cfg: &TrainingConfig,
    semi_supervised: bool,
    rng: &mut Rng,
    penalty: Option<(&mut dyn GeneratorPenalty, f64)>,
) -> Result<StepOutcome> {
    if batch.labeled_x.nrows() == 0 {
        return Err(Error::InvalidArgument("the real batch has no labeled rows".into()));
    }
    let w = PlayerWeights::new(cfg.lambda_balance, semi_supervised);
    let k = bundle.n_classes();
    let f = bundle.encoding.width;
    let tau = cfg.gumbel_temperature;

    let fakes = draw_fakes(bundle, batch.len(), rng);
    let x_fake = fakes.fwd.output.clone();
    let pseudo_y = if semi_supervised && batch.unlabeled_x.nrows() > 0 {
        let c_fwd = bundle.classifier.forward(batch.unlabeled_x.view(), Mode::Train, None);
        let yc = gumbel_softmax(&c_fwd.output, tau, Some(rng));
        Some((c_fwd, yc))
    } else {
        None
    };

    // Discriminator.
    let real_in = discriminator_input(batch.labeled_x.view(), one_hot(&batch.labeled_y, k).view());
    let fake_in = discriminator_input(x_fake.view(), fakes.y.view());
    let pseudo_in = match &pseudo_y {
        Some((_, yc)) => discriminator_input(batch.unlabeled_x.view(), yc.view()),
        None => Array2::zeros((0, f + k)),
    };
    let real_logits = bundle.discriminator.predict(real_in.view()).column(0).to_vec();
    let fake_logits_before = bundle.discriminator.predict(fake_in.view()).column(0).to_vec();
    let pseudo_logits = if pseudo_in.nrows() > 0 {
        bundle.discriminator.predict(pseudo_in.view()).column(0).to_vec()
    } else {
        Vec::new()
    };
    let (_, d_grad) = discriminator_update(
        &mut bundle.discriminator,
        &mut bundle.optimizers.discriminator,
        real_in.view(),
        pseudo_in.view(),
        fake_in.view(),
        w,
    );

    // Generator, against the updated discriminator.
    let (d_fwd, fake_logits) = logits_of(&bundle.discriminator, fake_in.view());
    let n_fake = fake_logits.len() as f64;
    let dl: Vec<f64> = fake_logits
        .iter()
        .map(|&l| w.generated * adversary_grad(l, cfg.objective) / n_fake)
        .collect();
    let (_, d_input_grad) = bundle.discriminator.backward(&d_fwd, column(dl).view());
    let mut gx = d_input_grad.slice(s![.., ..f]).to_owned();
    let mut penalty_value = None;
    let mut penalty_alpha = 0.0;
    if let Some((p, alpha)) = penalty {
        penalty_alpha = alpha;
        let (value, grad) = p.penalty(x_fake.view(), fakes.y.view())?;
        if grad.dim() != gx.dim() {
            return Err(Error::ShapeMismatch("penalty gradient does not match generated rows".into()));
        }
        gx.scaled_add(alpha, &grad);
        penalty_value = Some(value);
    }
    let (g_grad, _) = bundle.generator.backward(&fakes.fwd, gx.view());
    bundle.optimizers.generator.step(bundle.generator.params_mut(), &g_grad);
    bundle.generator.commit_batch_stats(&fakes.fwd);

    // Classifier: adversarial term through the relaxed pseudo labels, plus
    // cross-entropy on observed labels.
    let mut c_grad = vec![0.0; bundle.classifier.n_params()];
    let l_fwd = bundle.classifier.forward(batch.labeled_x.view(), Mode::Train, None);
    let (ce, ce_grad) = cross_entropy(&l_fwd.output, &batch.labeled_y);
    let (g, _) = bundle.classifier.backward(&l_fwd, ce_grad.view());
    c_grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    if let Some((c_fwd, yc)) = &pseudo_y {
        let (dp_fwd, pl) = logits_of(&bundle.discriminator, pseudo_in.view());
        let n = pl.len() as f64;
        let dl: Vec<f64> = pl
            .iter()
            .map(|&l| w.pseudo * adversary_grad(l, cfg.objective) / n)
            .collect();
        let (_, din) = bundle.discriminator.backward(&dp_fwd, column(dl).view());
        let dy = din.slice(s![.., f..]).to_owned();
        let dlogits = gumbel_softmax_backward(yc, &dy, tau);
        let (g, _) = bundle.classifier.backward(c_fwd, dlogits.view());
        c_grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    bundle.optimizers.classifier.step(bundle.classifier.params_mut(), &c_grad);

    let mut losses = losses_from_logits(&real_logits, &pseudo_logits, &fake_logits_before, ce, w, cfg.objective);
    // Report the generator's loss against the discriminator it was trained on.
    losses.generator = w.generated * adversary_loss(&fake_logits, cfg.objective);
    if let Some(v) = penalty_value {
        losses.generator += penalty_alpha * v;
    }
    Ok(StepOutcome {
        losses,
        penalty: penalty_value,
        gradients: StepGradients {
            discriminator: d_grad,
            generator: g_grad,
            classifier: c_grad,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::{init_models, ModelSpecs};
    use crate::rng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_half_discriminator_value() {
        let w = PlayerWeights::new(0.5, true);
        let l = losses_from_logits(&[0.0; 4], &[0.0; 3], &[0.0; 5], 0.25, w, AdversaryObjective::Minimax);
        let ln_half = 0.5f64.ln();
        assert_abs_diff_eq!(l.value, ln_half * (1.0 + 0.5 + 0.5) + 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(l.discriminator, -ln_half * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn two_player_reduction_is_exact() {
        let real = [0.3, -1.2, 2.0];
        let fake = [-0.7, 0.1];
        for obj in [AdversaryObjective::NonSaturating, AdversaryObjective::Minimax] {
            let l = losses_from_logits(&real, &[], &fake, 0.0, PlayerWeights::new(0.5, false), obj);
            let (d, g) = standard_gan_losses(&real, &fake, obj);
            assert_eq!(l.discriminator.to_bits(), d.to_bits());
            assert_eq!(l.generator.to_bits(), g.to_bits());
        }
    }

    #[test]
    fn perfect_classifier_has_zero_cross_entropy() {
        let logits = ndarray::array![[800.0, 0.0], [0.0, 800.0]];
        let (ce, _) = cross_entropy(&logits, &[0, 1]);
        assert_eq!(ce, 0.0);
    }

    #[test]
    fn constant_discriminator_bundle() {
        let d = crate::data::synthesize_biased(&crate::data::BiasInjectionSpec::standard_biased(200, 1)).unwrap();
        let cfg = TrainingConfig::default();
        let specs = ModelSpecs::for_width(d.encoding().width, 2, 0.2);
        let mut m = init_models(d.encoding(), &specs, &cfg).unwrap();
        let r = m.discriminator.last_layer_range();
        m.discriminator.params_mut()[r].iter_mut().for_each(|p| *p = 0.0);
        let obs = d.observed_indices();
        let batch = Batch {
            labeled_x: d.features().select(ndarray::Axis(0), &obs[..50]),
            labeled_y: obs[..50].iter().map(|&i| d.observed_label(i).unwrap()).collect(),
            unlabeled_x: d.features().select(ndarray::Axis(0), &obs[50..80]),
        };
        let l = loss_gcd(&m, &batch, &cfg, &mut rng::from_seed(0)).unwrap();
        assert_abs_diff_eq!(l.value - l.cross_entropy, 0.5f64.ln() * 2.0, epsilon = 1e-12);
        let empty = Batch {
            labeled_x: Array2::zeros((0, d.encoding().width)),
            labeled_y: vec![],
            unlabeled_x: batch.unlabeled_x.clone(),
        };
        assert!(loss_gcd(&m, &empty, &cfg, &mut rng::from_seed(0)).is_err());
    }
}
