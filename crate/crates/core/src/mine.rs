//! Neural mutual-information estimation with the Donsker-Varadhan bound
//! `I(W; S) >= E_joint[T] - log E_marginal[e^T]`, the fairness penalty built
//! from it, and the bias-transform fine-tuning loop.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::gan::{
    adversarial_step, draw_batch, generate_staged, hstack, monitor_lds, sensitive_projection, BatchSampler,
    BatchStage, GanLosses, GeneratorPenalty, ModelBundle, TrainingConfig,
};
use crate::nn::{Activation, Adam, Mlp, Mode, NetworkSpec, OutputHead};
use crate::representation::Subgroup;
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Which sensitive values the statistic network sees during bias transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitiveSource {
    /// The sensitive columns of the generated rows.
    Generated,
    /// Real sensitive values of training rows with the same label, drawn at
    /// random; the penalty then acts through the non-sensitive part only.
    RealConditioned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MineConfig {
    pub statistic_net: NetworkSpec,
    pub inner_steps_per_batch: usize,
    pub ema_decay: f64,
    pub alpha_fairness: f64,
    pub learning_rate: f64,
    /// Mini-batch size and passes for standalone estimation.
    pub batch_size: usize,
    pub epochs: usize,
    pub sensitive_source: SensitiveSource,
    /// Weight of the squared gap between the batch mean of the generated
    /// sensitive columns and their training mean. Keeps the penalty from
    /// lowering the bound by collapsing the sensitive marginal.
    pub sensitive_prior_weight: f64,
}

impl Default for MineConfig {
    fn default() -> Self {
        Self {
            statistic_net: NetworkSpec {
                layer_widths: vec![32, 32, 1],
                activation: Activation::Relu,
                output_head: OutputHead::Linear,
                batch_norm: false,
            },
            inner_steps_per_batch: 5,
            ema_decay: 0.99,
            alpha_fairness: 0.5,
            learning_rate: 1e-3,
            batch_size: 512,
            epochs: 40,
            sensitive_source: SensitiveSource::Generated,
            sensitive_prior_weight: 10.0,
        }
    }
}

impl MineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::Config(format!("ema_decay must lie in (0, 1), got {}", self.ema_decay)));
        }
        if !(self.alpha_fairness.is_finite() && self.alpha_fairness >= 0.0) {
            return Err(Error::Config(format!("alpha_fairness must be finite and >= 0, got {}", self.alpha_fairness)));
        }
        if self.statistic_net.output_width() != 1 || self.statistic_net.output_head != OutputHead::Linear {
            return Err(Error::Config("the statistic network must emit one linear output".into()));
        }
        if !(self.sensitive_prior_weight.is_finite() && self.sensitive_prior_weight >= 0.0) {
            return Err(Error::Config("sensitive_prior_weight must be finite and >= 0".into()));
        }
        if self.batch_size < 2 || !(self.learning_rate > 0.0) {
            return Err(Error::Config("MINE needs batch_size >= 2 and a positive learning rate".into()));
        }
        self.statistic_net.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    pub value_nats: f64,
    pub n_samples: usize,
    pub converged: bool,
}

impl MiEstimate {
    /// Value for reporting: tiny negative estimates are clamped to zero.
    pub fn reported(&self) -> f64 {
        self.value_nats.max(0.0)
    }
}

/// `log mean exp` of a slice, stable.
fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + (v.iter().map(|x| (x - m).exp()).sum::<f64>() / v.len() as f64).ln()
}

/// Pair rows `[w_i | s_pi(i)]` for a permutation `pi`.
fn marginal_pairs(w: ArrayView2<'_, f64>, s: ArrayView2<'_, f64>, perm: &[usize]) -> Array2<f64> {
    hstack(w, s.select(Axis(0), perm).view())
}

/// Donsker-Varadhan value on a batch and its gradients.
pub struct DvGradient {
    pub value: f64,
    /// Gradient of the bound with respect to the statistic parameters.
    pub params: Vec<f64>,
    /// Gradient with respect to the joint inputs `[w | s]`.
    pub joint_input: Array2<f64>,
    /// Gradient with respect to the marginal inputs `[w | s_perm]`.
    pub marginal_input: Array2<f64>,
    /// Batch mean of `e^T` on marginal pairs.
    pub marginal_mean_exp: f64,
}

/// Bound and gradients. With `denominator = None` the gradient of the log
/// term is exact; otherwise `denominator` replaces the batch mean of `e^T`
/// (the moving-average correction).
pub fn dv_bound_grad(t: &Mlp, joint: ArrayView2<'_, f64>, marginal: ArrayView2<'_, f64>, denominator: Option<f64>) -> DvGradient {
    let jf = t.forward(joint, Mode::Train, None);
    let mf = t.forward(marginal, Mode::Train, None);
    let tj = jf.output.column(0).to_vec();
    let tm = mf.output.column(0).to_vec();
    let nj = tj.len() as f64;
    let nm = tm.len() as f64;
    let lme = log_mean_exp(&tm);
    let value = tj.iter().sum::<f64>() / nj - lme;
    let mean_exp = lme.exp();
    let denom_log = denominator.map_or(lme, f64::ln);
    let gj = Array2::from_elem((tj.len(), 1), 1.0 / nj);
    let gm = Array2::from_shape_vec((tm.len(), 1), tm.iter().map(|v| -(v - denom_log).exp() / nm).collect())
        .expect("column");
    let (pj, ij) = t.backward(&jf, gj.view());
    let (pm, im) = t.backward(&mf, gm.view());
    DvGradient {
        value,
        params: pj.iter().zip(&pm).map(|(a, b)| a + b).collect(),
        joint_input: ij,
        marginal_input: im,
        marginal_mean_exp: mean_exp,
    }
}

/// Statistic network with its optimizer and moving-average denominator.
#[derive(Debug, Clone)]
pub struct MineState {
    pub net: Mlp,
    opt: Adam,
    ema: Option<f64>,
    decay: f64,
}

impl MineState {
    pub fn new(input_width: usize, cfg: &MineConfig, rng: &mut Rng) -> Result<Self> {
        let net = Mlp::new(input_width, &cfg.statistic_net, None, rng)?;
        let opt = Adam::new(net.n_params(), cfg.learning_rate, 0.9, 0.999);
        Ok(Self {
            net,
            opt,
            ema: None,
            decay: cfg.ema_decay,
        })
    }

    pub fn from_net(net: Mlp, cfg: &MineConfig) -> Self {
        let opt = Adam::new(net.n_params(), cfg.learning_rate, 0.9, 0.999);
        Self {
            net,
            opt,
            ema: None,
            decay: cfg.ema_decay,
        }
    }

    /// One ascent step on the bound for a batch; returns the batch bound.
    pub fn ascend(&mut self, w: ArrayView2<'_, f64>, s: ArrayView2<'_, f64>, rng: &mut Rng) -> f64 {
        let mut perm: Vec<usize> = (0..w.nrows()).collect();
        perm.shuffle(rng);
        let joint = hstack(w, s);
        let marg = marginal_pairs(w, s, &perm);
        // Moving average includes the current batch before it is used.
        let tm = self.net.predict(marg.view());
        let batch_mean = log_mean_exp(tm.column(0).as_slice().expect("contiguous")).exp();
        let ema = match self.ema {
            Some(e) => self.decay * e + (1.0 - self.decay) * batch_mean,
            None => batch_mean,
        };
        self.ema = Some(ema);
        let g = dv_bound_grad(&self.net, joint.view(), marg.view(), Some(ema));
        let descent: Vec<f64> = g.params.iter().map(|v| -v).collect();
        self.opt.step(self.net.params_mut(), &descent);
        g.value
    }

    /// Bound on a whole sample, averaged over a few independent shuffles.
    pub fn evaluate(&self, w: ArrayView2<'_, f64>, s: ArrayView2<'_, f64>, rng: &mut Rng) -> f64 {
        let joint = hstack(w, s);
        let tj = self.net.predict(joint.view());
        let mean_joint = tj.sum() / tj.nrows() as f64;
        let reps = 5;
        let mut total = 0.0;
        for _ in 0..reps {
            let mut perm: Vec<usize> = (0..w.nrows()).collect();
            perm.shuffle(rng);
            let tm = self.net.predict(marginal_pairs(w, s, &perm).view());
            total += mean_joint - log_mean_exp(tm.column(0).as_slice().expect("contiguous"));
        }
        total / reps as f64
    }
}

fn is_constant(x: ArrayView2<'_, f64>) -> bool {
    match x.outer_iter().next() {
        None => true,
        Some(first) => x.outer_iter().all(|r| r == first),
    }
}

/// Estimate `I(W; S)` from paired samples by training a fresh statistic
/// network.
pub fn mine_estimate(w: ArrayView2<'_, f64>, s: ArrayView2<'_, f64>, cfg: &MineConfig, seed: u64) -> Result<MiEstimate> {
    cfg.validate()?;
    let n = w.nrows();
    if n < 2 || s.nrows() != n {
        return Err(Error::InvalidArgument(format!(
            "need at least two paired samples, got {} and {}",
            w.nrows(),
            s.nrows()
        )));
    }
    if is_constant(w) || is_constant(s) {
        return Ok(MiEstimate {
            value_nats: 0.0,
            n_samples: n,
            converged: true,
        });
    }
    let mut r = rng::from_seed(seed);
    let mut state = MineState::new(w.ncols() + s.ncols(), cfg, &mut r)?;
    let bs = cfg.batch_size.min(n);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut r);
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks(bs) {
            if chunk.len() < 2 {
                continue;
            }
            let wb = w.select(Axis(0), chunk);
            let sb = s.select(Axis(0), chunk);
            sum += state.ascend(wb.view(), sb.view(), &mut r);
            count += 1;
        }
        history.push(sum / count.max(1) as f64);
    }
    let value = state.evaluate(w, s, &mut r);
    let converged = match history.len() {
        0..=3 => false,
        k => {
            let recent = &history[k - 2..];
            let before = &history[k - 4..k - 2];
            let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            (avg(recent) - avg(before)).abs() < 0.01
        }
    };
    if !value.is_finite() {
        return Err(Error::Degenerate("mutual-information estimate is not finite".into()));
    }
    Ok(MiEstimate {
        value_nats: value,
        n_samples: n,
        converged,
    })
}

/// Final generator objective: adversarial loss plus `alpha` times the MI
/// bound. Discriminator and classifier losses are untouched.
pub fn loss_final(losses: GanLosses, mi: f64, alpha: f64) -> Result<GanLosses> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {alpha}")));
    }
    Ok(GanLosses {
        generator: losses.generator + alpha * mi,
        ..losses
    })
}

/// Column split of generated rows into the statistic network's inputs.
#[derive(Debug, Clone)]
pub struct MiLayout {
    pub nonsensitive: Vec<usize>,
    pub sensitive: Vec<usize>,
}

impl MiLayout {
    pub fn new(encoding: &crate::data::Encoding) -> Result<Self> {
        let sensitive = encoding.sensitive_indices();
        if sensitive.is_empty() {
            return Err(Error::Config("bias transform needs at least one sensitive column".into()));
        }
        Ok(Self {
            nonsensitive: encoding.nonsensitive_indices(),
            sensitive,
        })
    }

    /// `W = [x_nonsensitive | y]`.
    pub fn w(&self, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Array2<f64> {
        hstack(x.select(Axis(1), &self.nonsensitive).view(), y)
    }

    pub fn s(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.select(Axis(1), &self.sensitive)
    }

    pub fn input_width(&self, n_classes: usize) -> usize {
        self.nonsensitive.len() + n_classes + self.sensitive.len()
    }
}

/// Real sensitive values grouped by label, for `SensitiveSource::RealConditioned`.
struct RealSensitive {
    by_label: Vec<Array2<f64>>,
}

impl RealSensitive {
    fn new(data: &Dataset, layout: &MiLayout) -> Self {
        let k = data.encoding().n_classes();
        let s = layout.s(data.features().view());
        let by_label = (0..k)
            .map(|c| {
                let idx: Vec<usize> = (0..data.n_rows()).filter(|&i| data.observed_label(i) == Some(c)).collect();
                s.select(Axis(0), &idx)
            })
            .collect();
        Self { by_label }
    }

    fn draw(&self, labels: &[usize], rng: &mut Rng) -> Array2<f64> {
        use rand::Rng as _;
        let width = self.by_label[0].ncols();
        let mut out = Array2::zeros((labels.len(), width));
        for (i, &y) in labels.iter().enumerate() {
            let pool = &self.by_label[y];
            if pool.nrows() > 0 {
                out.row_mut(i).assign(&pool.row(rng.gen_range(0..pool.nrows())));
            }
        }
        out
    }
}

/// The fairness penalty: current DV bound between `W` and `S` of generated
/// rows, differentiated into the rows.
struct MinePenalty<'a> {
    state: &'a MineState,
    layout: &'a MiLayout,
    real: Option<&'a RealSensitive>,
    prior: Option<(&'a [f64], f64)>,
    rng: &'a mut Rng,
}

impl GeneratorPenalty for MinePenalty<'_> {
    fn penalty(&mut self, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
        let w = self.layout.w(x, y);
        let s = match self.real {
            Some(r) => {
                let labels: Vec<usize> = y.outer_iter().map(crate::data::argmax).collect();
                r.draw(&labels, self.rng)
            }
            None => self.layout.s(x),
        };
        let mut perm: Vec<usize> = (0..w.nrows()).collect();
        perm.shuffle(self.rng);
        let joint = hstack(w.view(), s.view());
        let marg = marginal_pairs(w.view(), s.view(), &perm);
        let g = dv_bound_grad(&self.state.net, joint.view(), marg.view(), self.state.ema);
        let ws = w.ncols();
        let mut value = g.value;
        let mut gx = Array2::zeros(x.dim());
        for (c, &col) in self.layout.nonsensitive.iter().enumerate() {
            let mut dst = gx.column_mut(col);
            dst += &g.joint_input.column(c);
            dst += &g.marginal_input.column(c);
        }
        // With a label-conditioned generator the sensitive columns are the
        // only route for decoupling y' from s', so they carry gradient too.
        if self.real.is_none() {
            for (c, &col) in self.layout.sensitive.iter().enumerate() {
                let jg = g.joint_input.column(ws + c);
                let mg = g.marginal_input.column(ws + c);
                for i in 0..x.nrows() {
                    gx[[i, col]] += jg[i];
                    // Marginal row i carries s of row perm[i].
                    gx[[perm[i], col]] += mg[i];
                }
            }
            if let Some((prior, weight)) = self.prior {
                let n = x.nrows() as f64;
                for (&col, &p) in self.layout.sensitive.iter().zip(prior) {
                    let dev = x.column(col).sum() / n - p;
                    value += weight * dev * dev;
                    gx.column_mut(col).mapv_inplace(|v| v + 2.0 * weight * dev / n);
                }
            }
        }
        Ok((value, gx))
    }
}

fn sensitive_prior(data: &Dataset, layout: &MiLayout) -> Vec<f64> {
    let s = layout.s(data.features().view());
    s.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_default()
}

fn fake_w_s(
    bundle: &ModelBundle,
    layout: &MiLayout,
    real: Option<&RealSensitive>,
    n: usize,
    rng: &mut Rng,
) -> (Array2<f64>, Array2<f64>) {
    let labels = bundle.sample_labels(n, rng);
    let y = crate::gan::one_hot(&labels, bundle.n_classes());
    let z = bundle.sample_noise(n, rng);
    let x = bundle
        .generator
        .forward(bundle.generator_input(&y, &z).view(), Mode::Train, Some(rng))
        .output;
    let s = match real {
        Some(r) => r.draw(&labels, rng),
        None => layout.s(x.view()),
    };
    (layout.w(x.view(), y.view()), s)
}

/// Post-hoc estimate of `I(W; S)` on generated rows.
pub fn generated_mi(bundle: &ModelBundle, n: usize, cfg: &MineConfig, seed: u64) -> Result<MiEstimate> {
    let layout = MiLayout::new(&bundle.encoding)?;
    let batch = generate_staged(bundle, n, seed, BatchStage::Transformed, 0)?;
    let x = batch.discretized(&bundle.encoding);
    let w = layout.w(x.view(), batch.y_prime.view());
    let s = sensitive_projection(&bundle.encoding, x.view());
    mine_estimate(w.view(), s.view(), cfg, rng::derive_seed(seed, "estimate"))
}

/// Stage 2: fine-tune the pretrained players on `L_GCD + alpha * L_MI` with
/// mini-batches drawn by `sampler`. The statistic network takes
/// `inner_steps_per_batch` ascent steps before each player update. The frozen
/// discriminator is left untouched.
pub fn train_stage2(
    data: &Dataset,
    mut bundle: ModelBundle,
    mine_cfg: &MineConfig,
    sampler: &BatchSampler,
    cfg: &TrainingConfig,
    monitor: &[Subgroup],
) -> Result<ModelBundle> {
    cfg.validate()?;
    mine_cfg.validate()?;
    if bundle.discriminator_frozen.is_none() {
        return Err(Error::NotReady("bias transform needs a pretrained model".into()));
    }
    if data.encoding().hash() != bundle.schema_hash {
        return Err(Error::ShapeMismatch("dataset encoding differs from the model's".into()));
    }
    if let BatchSampler::Weighted(t) = sampler {
        t.validate(data.n_rows())?;
    }
    crate::gan::train::check_labels(data)?;
    let layout = MiLayout::new(&bundle.encoding)?;
    let real = match mine_cfg.sensitive_source {
        SensitiveSource::Generated => None,
        SensitiveSource::RealConditioned => Some(RealSensitive::new(data, &layout)),
    };
    let prior = sensitive_prior(data, &layout);
    let mut mine_rng = rng::substream(cfg.seed, "mine");
    let mut state = match bundle.statistic.take() {
        Some(net) => MineState::from_net(net, mine_cfg),
        None => MineState::new(layout.input_width(bundle.n_classes()), mine_cfg, &mut mine_rng)?,
    };
    let semi = !data.unobserved_indices().is_empty();
    let mut batch_rng = rng::substream(cfg.seed, "transform-batch");
    let monitor_seed = rng::derive_seed(cfg.seed, "transform-monitor");
    let eval_n = crate::gan::eval_sample_size(data, monitor, cfg.monitor_sample_cap);

    for epoch in 0..cfg.epochs {
        let mut meter = crate::gan::train::LossMeter::default();
        for rows in crate::gan::train::epoch_batches(data.n_rows(), cfg, sampler, &mut batch_rng)? {
            let batch = draw_batch(data, &rows);
            if batch.labeled_x.nrows() == 0 {
                continue;
            }
            for _ in 0..mine_cfg.inner_steps_per_batch {
                let (w, s) = fake_w_s(&bundle, &layout, real.as_ref(), batch.len().max(2), &mut mine_rng);
                state.ascend(w.view(), s.view(), &mut mine_rng);
            }
            let mut penalty = MinePenalty {
                state: &state,
                layout: &layout,
                real: real.as_ref(),
                prior: (mine_cfg.sensitive_prior_weight > 0.0).then_some((prior.as_slice(), mine_cfg.sensitive_prior_weight)),
                rng: &mut mine_rng,
            };
            let out = adversarial_step(
                &mut bundle,
                &batch,
                cfg,
                semi,
                &mut batch_rng,
                Some((&mut penalty, mine_cfg.alpha_fairness)),
            )?;
            crate::gan::train::check_finite(&out.losses, epoch)?;
            meter.add(&out.losses);
            if let Some(v) = out.penalty {
                meter.add_mi(v);
            }
        }
        let lds = monitor_lds(
            &bundle,
            data,
            monitor,
            eval_n,
            monitor_seed.wrapping_add(epoch as u64),
            BatchStage::Transformed,
            epoch,
        )?;
        let entry = meter.finish("transform", epoch, lds.iter().map(|r| r.lds).collect());
        log::debug!(
            "transform epoch {epoch}: g {:.4} mi {:?}",
            entry.generator_loss,
            entry.mutual_information
        );
        bundle.log.epochs.push(entry);
    }
    bundle.statistic = Some(state.net);
    Ok(bundle)
}

/// First-step gradients of the three players with a given alpha, for
/// checking that the penalty only reaches the generator.
pub fn first_step_gradients(
    data: &Dataset,
    bundle: &ModelBundle,
    mine_cfg: &MineConfig,
    cfg: &TrainingConfig,
) -> Result<crate::gan::StepGradients> {
    let mut one = cfg.clone();
    one.epochs = 1;
    let mut bundle = bundle.clone();
    let layout = MiLayout::new(&bundle.encoding)?;
    let mut mine_rng = rng::substream(cfg.seed, "mine");
    let mut state = match bundle.statistic.take() {
        Some(net) => MineState::from_net(net, mine_cfg),
        None => MineState::new(layout.input_width(bundle.n_classes()), mine_cfg, &mut mine_rng)?,
    };
    let mut batch_rng = rng::substream(cfg.seed, "transform-batch");
    let rows = crate::gan::train::epoch_batches(data.n_rows(), &one, &BatchSampler::Uniform, &mut batch_rng)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
    let batch = draw_batch(data, &rows);
    for _ in 0..mine_cfg.inner_steps_per_batch {
        let (w, s) = fake_w_s(&bundle, &layout, None, batch.len().max(2), &mut mine_rng);
        state.ascend(w.view(), s.view(), &mut mine_rng);
    }
    let mut penalty = MinePenalty {
        state: &state,
        layout: &layout,
        real: None,
        prior: None,
        rng: &mut mine_rng,
    };
    let semi = !data.unobserved_indices().is_empty();
    let out = adversarial_step(
        &mut bundle,
        &batch,
        cfg,
        semi,
        &mut batch_rng,
        Some((&mut penalty, mine_cfg.alpha_fairness)),
    )?;
    Ok(out.gradients)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::s;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    #[test]
    fn dv_gradient_matches_finite_differences() {
        let spec = NetworkSpec {
            layer_widths: vec![1],
            activation: Activation::Relu,
            output_head: OutputHead::Linear,
            batch_norm: false,
        };
        let mut r = rng::from_seed(1);
        let t = Mlp::new(3, &spec, None, &mut r).unwrap();
        assert_eq!(t.n_params(), 4);
        let w = Array2::from_shape_fn((40, 2), |_| r.sample::<f64, _>(StandardNormal));
        let s = Array2::from_shape_fn((40, 1), |(i, _)| if w[[i, 0]] > 0.0 { 1.0 } else { 0.0 });
        let perm: Vec<usize> = (0..40).rev().collect();
        let joint = hstack(w.view(), s.view());
        let marg = marginal_pairs(w.view(), s.view(), &perm);
        let g = dv_bound_grad(&t, joint.view(), marg.view(), None);
        let h = 1e-6;
        for i in 0..4 {
            let mut p = t.clone();
            p.params_mut()[i] += h;
            let up = dv_bound_grad(&p, joint.view(), marg.view(), None).value;
            p.params_mut()[i] -= 2.0 * h;
            let down = dv_bound_grad(&p, joint.view(), marg.view(), None).value;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g.params[i]).abs() <= 1e-3 * fd.abs().max(1e-6), "param {i}: {fd} vs {}", g.params[i]);
        }
    }

    #[test]
    fn constant_input_is_zero_and_converged() {
        let w = Array2::from_elem((10, 2), 1.0);
        let s = Array2::from_elem((10, 1), 0.0);
        let e = mine_estimate(w.view(), s.view(), &MineConfig::default(), 0).unwrap();
        assert_eq!(e.value_nats, 0.0);
        assert!(e.converged);
        assert!(mine_estimate(w.slice(s![..1, ..]), s.slice(s![..1, ..]), &MineConfig::default(), 0).is_err());
    }

    #[test]
    fn loss_final_composition() {
        let base = GanLosses {
            discriminator: 1.0,
            generator: 2.0,
            classifier: 3.0,
            cross_entropy: 0.5,
            value: -1.0,
        };
        assert_eq!(loss_final(base, 0.3, 0.0).unwrap(), base);
        let l = loss_final(base, 0.3, 1.0).unwrap();
        assert!((l.generator - 2.3).abs() < 1e-15);
        assert_eq!(l.discriminator, base.discriminator);
        assert_eq!(l.classifier, base.classifier);
        assert!(loss_final(base, 0.3, -1.0).is_err());
    }
}
