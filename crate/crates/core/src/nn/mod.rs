//! Small dense networks with hand-written backpropagation.
//!
//! All trainable parameters of a network live in one flat `Vec<f64>` so the
//! optimizer, checkpoints and finite-difference checks work on plain slices.
//! Gradients come back in the same layout.

mod adam;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::{rng::Rng, Error, Result};

pub use adam::Adam;

pub const LEAKY_SLOPE: f64 = 0.2;
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OutputHead {
    Sigmoid,
    Softmax,
    /// With `straight_through` the forward pass emits hard one-hot (or 0/1)
    /// samples while gradients flow through the relaxed values.
    GumbelSoftmax {
        temperature: f64,
        #[serde(default)]
        straight_through: bool,
    },
    Linear,
}

/// Architecture of one network. `layer_widths` lists every dense layer's
/// output width, the last one being the head width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub output_head: OutputHead,
    #[serde(default)]
    pub batch_norm: bool,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.is_empty() || self.layer_widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer widths must be positive and non-empty: {:?}",
                self.layer_widths
            )));
        }
        if let OutputHead::GumbelSoftmax { temperature, .. } = self.output_head {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(Error::InvalidArgument(format!("gumbel temperature must be > 0, got {temperature}")));
            }
        }
        Ok(())
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().expect("validated")
    }
}

/// How a slice of the head output is squashed when a layout is attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadPart {
    /// Sigmoid, for values in `[0, 1]`.
    Continuous,
    /// One relaxed Bernoulli cell.
    Binary,
    /// A relaxed one-hot group.
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSegment {
    pub offset: usize,
    pub width: usize,
    pub part: HeadPart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers.
    Train,
    /// Running statistics in normalization layers.
    Eval,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Layer {
    Dense {
        fan_in: usize,
        fan_out: usize,
        w: usize,
        b: usize,
    },
    Norm {
        dim: usize,
        gamma: usize,
        beta: usize,
        state: usize,
    },
    Act(Activation),
}

#[derive(Debug)]
enum Cached {
    Dense(Array2<f64>),
    Norm { xhat: Array2<f64>, inv_std: Array1<f64>, batch: bool },
    Act(Array2<f64>),
}

/// Result of a forward pass, holding what backward needs.
#[derive(Debug)]
pub struct Forward {
    pub output: Array2<f64>,
    /// Relaxed head values behind a straight-through output.
    relaxed: Option<Array2<f64>>,
    cache: Vec<Cached>,
    batch_stats: Vec<(Array1<f64>, Array1<f64>)>,
}

/// A multilayer perceptron with a configurable output head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    spec: NetworkSpec,
    input_width: usize,
    layers: Vec<Layer>,
    layout: Option<Vec<HeadSegment>>,
    params: Vec<f64>,
    /// Running mean/var of normalization layers (not trained by gradient).
    state: Vec<f64>,
}

impl Mlp {
    /// Build and initialize a network. `layout` splits the head into typed
    /// parts; without one the head applies to the whole output row.
    pub fn new(input_width: usize, spec: &NetworkSpec, layout: Option<Vec<HeadSegment>>, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        if input_width == 0 {
            return Err(Error::InvalidArgument("input width must be positive".into()));
        }
        if let Some(l) = &layout {
            let mut next = 0;
            for seg in l {
                if seg.offset != next || seg.width == 0 {
                    return Err(Error::ShapeMismatch("head layout must tile the output contiguously".into()));
                }
                if seg.part != HeadPart::Categorical && seg.width != 1 {
                    return Err(Error::ShapeMismatch("continuous and binary head parts have width 1".into()));
                }
                next += seg.width;
            }
            if next != spec.output_width() {
                return Err(Error::ShapeMismatch(format!(
                    "head layout covers {next} outputs but the final layer has {}",
                    spec.output_width()
                )));
            }
        }
        let mut layers = Vec::new();
        let mut n_params = 0;
        let mut n_state = 0;
        let mut fan_in = input_width;
        let last = spec.layer_widths.len() - 1;
        for (i, &fan_out) in spec.layer_widths.iter().enumerate() {
            layers.push(Layer::Dense {
                fan_in,
                fan_out,
                w: n_params,
                b: n_params + fan_in * fan_out,
            });
            n_params += fan_in * fan_out + fan_out;
            if i < last {
                if spec.batch_norm {
                    layers.push(Layer::Norm {
                        dim: fan_out,
                        gamma: n_params,
                        beta: n_params + fan_out,
                        state: n_state,
                    });
                    n_params += 2 * fan_out;
                    n_state += 2 * fan_out;
                }
                layers.push(Layer::Act(spec.activation));
            }
            fan_in = fan_out;
        }
        let mut params = vec![0.0; n_params];
        let mut state = vec![0.0; n_state];
        for layer in &layers {
            match *layer {
                Layer::Dense { fan_in, fan_out, w, b } => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    for p in &mut params[w..w + fan_in * fan_out] {
                        *p = rng.gen_range(-bound..bound);
                    }
                    for p in &mut params[b..b + fan_out] {
                        *p = rng.gen_range(-bound..bound);
                    }
                }
                Layer::Norm { dim, gamma, state: s, .. } => {
                    params[gamma..gamma + dim].iter_mut().for_each(|g| *g = 1.0);
                    state[s + dim..s + 2 * dim].iter_mut().for_each(|v| *v = 1.0);
                }
                Layer::Act(_) => {}
            }
        }
        Ok(Self {
            spec: spec.clone(),
            input_width,
            layers,
            layout,
            params,
            state,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn output_width(&self) -> usize {
        self.spec.output_width()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Index range of the final dense layer's weights and bias.
    pub fn last_layer_range(&self) -> std::ops::Range<usize> {
        for layer in self.layers.iter().rev() {
            if let Layer::Dense { w, b, fan_out, .. } = *layer {
                return w..b + fan_out;
            }
        }
        unreachable!("network has at least one dense layer")
    }

    fn weight(&self, off: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.params[off..off + rows * cols]).expect("layout")
    }

    fn vector(&self, off: usize, len: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[off..off + len])
    }

    /// Forward pass. Gumbel noise is drawn from `noise` when given; without
    /// it relaxed heads are evaluated at zero noise.
    pub fn forward(&self, x: ArrayView2<'_, f64>, mode: Mode, noise: Option<&mut Rng>) -> Forward {
        assert_eq!(x.ncols(), self.input_width, "network input width");
        let mut h = x.to_owned();
        let mut cache = Vec::with_capacity(self.layers.len());
        let mut batch_stats = Vec::new();
        for layer in &self.layers {
            match *layer {
                Layer::Dense { fan_in, fan_out, w, b } => {
                    let mut out = h.dot(&self.weight(w, fan_in, fan_out));
                    out += &self.vector(b, fan_out);
                    cache.push(Cached::Dense(std::mem::replace(&mut h, out)));
                }
                Layer::Norm { dim, gamma, beta, state } => {
                    let use_batch = mode == Mode::Train && h.nrows() > 1;
                    let (mean, var) = if use_batch {
                        let mean = h.mean_axis(Axis(0)).expect("non-empty batch");
                        let var = h.var_axis(Axis(0), 0.0);
                        (mean, var)
                    } else {
                        (
                            Array1::from(self.state[state..state + dim].to_vec()),
                            Array1::from(self.state[state + dim..state + 2 * dim].to_vec()),
                        )
                    };
                    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                    let xhat = (&h - &mean) * &inv_std;
                    let out = &xhat * &self.vector(gamma, dim) + self.vector(beta, dim);
                    if use_batch {
                        batch_stats.push((mean, var));
                    }
                    cache.push(Cached::Norm {
                        xhat,
                        inv_std,
                        batch: use_batch,
                    });
                    h = out;
                }
                Layer::Act(act) => {
                    let out = match act {
                        Activation::Relu => h.mapv(|v| v.max(0.0)),
                        Activation::LeakyRelu => h.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v }),
                    };
                    cache.push(Cached::Act(std::mem::replace(&mut h, out)));
                }
            }
        }
        let hard = noise.is_some()
            && matches!(
                self.spec.output_head,
                OutputHead::GumbelSoftmax {
                    straight_through: true,
                    ..
                }
            );
        let soft = self.apply_head(h, noise);
        let (output, relaxed) = if hard {
            (self.harden(&soft), Some(soft))
        } else {
            (soft, None)
        };
        Forward {
            output,
            relaxed,
            cache,
            batch_stats,
        }
    }

    /// Evaluation-mode output without noise.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.forward(x, Mode::Eval, None).output
    }

    fn apply_head(&self, mut z: Array2<f64>, mut noise: Option<&mut Rng>) -> Array2<f64> {
        match (self.spec.output_head, &self.layout) {
            (OutputHead::Linear, _) => z,
            (OutputHead::Sigmoid, None) => {
                z.mapv_inplace(sigmoid);
                z
            }
            (OutputHead::Softmax, None) => {
                let w = z.ncols();
                softmax_rows(&mut z, 0, w, 1.0, None);
                z
            }
            (OutputHead::GumbelSoftmax { temperature, .. }, None) => {
                let w = z.ncols();
                softmax_rows(&mut z, 0, w, temperature, noise);
                z
            }
            (head, Some(layout)) => {
                let temperature = match head {
                    OutputHead::GumbelSoftmax { temperature, .. } => temperature,
                    _ => 1.0,
                };
                let gumbel = matches!(head, OutputHead::GumbelSoftmax { .. });
                for seg in layout {
                    match seg.part {
                        HeadPart::Continuous => {
                            z.column_mut(seg.offset).mapv_inplace(sigmoid);
                        }
                        HeadPart::Binary => {
                            let mut col = z.column_mut(seg.offset);
                            for v in col.iter_mut() {
                                let l = match (gumbel, noise.as_deref_mut()) {
                                    (true, Some(r)) => {
                                        let u: f64 = r.gen_range(1e-12..1.0 - 1e-12);
                                        (*v + (u / (1.0 - u)).ln()) / temperature
                                    }
                                    (true, None) => *v / temperature,
                                    (false, _) => *v,
                                };
                                *v = sigmoid(l);
                            }
                        }
                        HeadPart::Categorical => {
                            let (t, n) = if gumbel {
                                (temperature, noise.as_deref_mut())
                            } else {
                                (1.0, None)
                            };
                            softmax_rows(&mut z, seg.offset, seg.width, t, n);
                        }
                    }
                }
                z
            }
        }
    }

    /// Argmax of each categorical segment and a 0.5 threshold on binary
    /// cells; continuous cells pass through.
    fn harden(&self, soft: &Array2<f64>) -> Array2<f64> {
        let mut out = soft.clone();
        let whole = [HeadSegment {
            offset: 0,
            width: soft.ncols(),
            part: HeadPart::Categorical,
        }];
        let layout = self.layout.as_deref().unwrap_or(&whole);
        for mut row in out.axis_iter_mut(Axis(0)) {
            for seg in layout {
                match seg.part {
                    HeadPart::Continuous => {}
                    HeadPart::Binary => {
                        let v = &mut row[seg.offset];
                        *v = if *v >= 0.5 { 1.0 } else { 0.0 };
                    }
                    HeadPart::Categorical => {
                        let mut cells = row.slice_mut(ndarray::s![seg.offset..seg.offset + seg.width]);
                        let k = crate::data::argmax(cells.view());
                        cells.fill(0.0);
                        cells[k] = 1.0;
                    }
                }
            }
        }
        out
    }

    fn head_backward(&self, y: &Array2<f64>, dy: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut dz = dy.to_owned();
        match (self.spec.output_head, &self.layout) {
            (OutputHead::Linear, _) => {}
            (OutputHead::Sigmoid, None) => {
                Zip::from(&mut dz).and(y).for_each(|d, &y| *d *= y * (1.0 - y));
            }
            (OutputHead::Softmax, None) => softmax_backward(&mut dz, y, 0, y.ncols(), 1.0),
            (OutputHead::GumbelSoftmax { temperature, .. }, None) => {
                softmax_backward(&mut dz, y, 0, y.ncols(), temperature)
            }
            (head, Some(layout)) => {
                let (gumbel, temperature) = match head {
                    OutputHead::GumbelSoftmax { temperature, .. } => (true, temperature),
                    _ => (false, 1.0),
                };
                for seg in layout {
                    match seg.part {
                        HeadPart::Continuous => {
                            let yc = y.column(seg.offset);
                            Zip::from(dz.column_mut(seg.offset)).and(&yc).for_each(|d, &y| *d *= y * (1.0 - y));
                        }
                        HeadPart::Binary => {
                            let t = if gumbel { temperature } else { 1.0 };
                            let yc = y.column(seg.offset);
                            Zip::from(dz.column_mut(seg.offset))
                                .and(&yc)
                                .for_each(|d, &y| *d *= y * (1.0 - y) / t);
                        }
                        HeadPart::Categorical => {
                            let t = if gumbel { temperature } else { 1.0 };
                            softmax_backward(&mut dz, y, seg.offset, seg.width, t);
                        }
                    }
                }
            }
        }
        dz
    }

    /// Backward pass: returns the parameter gradient (flat, same layout as
    /// [`Mlp::params`]) and the gradient with respect to the input.
    pub fn backward(&self, fwd: &Forward, grad_out: ArrayView2<'_, f64>) -> (Vec<f64>, Array2<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let mut g = self.head_backward(fwd.relaxed.as_ref().unwrap_or(&fwd.output), grad_out);
        for (layer, cached) in self.layers.iter().zip(&fwd.cache).rev() {
            match (layer, cached) {
                (&Layer::Dense { fan_in, fan_out, w, b }, Cached::Dense(input)) => {
                    let dw = input.t().dot(&g);
                    grad[w..w + fan_in * fan_out]
                        .iter_mut()
                        .zip(dw.iter())
                        .for_each(|(d, v)| *d += v);
                    let db = g.sum_axis(Axis(0));
                    grad[b..b + fan_out].iter_mut().zip(db.iter()).for_each(|(d, v)| *d += v);
                    g = g.dot(&self.weight(w, fan_in, fan_out).t());
                }
                (&Layer::Norm { dim, gamma, beta, .. }, Cached::Norm { xhat, inv_std, batch }) => {
                    let dgamma = (&g * xhat).sum_axis(Axis(0));
                    let dbeta = g.sum_axis(Axis(0));
                    grad[gamma..gamma + dim].iter_mut().zip(dgamma.iter()).for_each(|(d, v)| *d += v);
                    grad[beta..beta + dim].iter_mut().zip(dbeta.iter()).for_each(|(d, v)| *d += v);
                    let dxhat = &g * &self.vector(gamma, dim);
                    if *batch {
                        let n = g.nrows() as f64;
                        let sum_dxhat = dxhat.sum_axis(Axis(0));
                        let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(0));
                        let mut dx = dxhat * n - &sum_dxhat - &(xhat * &sum_dxhat_xhat);
                        dx *= &(inv_std / n);
                        g = dx;
                    } else {
                        g = dxhat * inv_std;
                    }
                }
                (Layer::Act(act), Cached::Act(pre)) => {
                    let slope = match act {
                        Activation::Relu => 0.0,
                        Activation::LeakyRelu => LEAKY_SLOPE,
                    };
                    Zip::from(&mut g).and(pre).for_each(|d, &p| {
                        if p <= 0.0 {
                            *d *= slope;
                        }
                    });
                }
                _ => unreachable!("cache matches layers"),
            }
        }
        (grad, g)
    }

    /// Fold the batch statistics of a training-mode pass into the running
    /// statistics.
    pub fn commit_batch_stats(&mut self, fwd: &Forward) {
        let mut stats = fwd.batch_stats.iter();
        for layer in &self.layers {
            if let Layer::Norm { dim, state, .. } = *layer {
                if let Some((mean, var)) = stats.next() {
                    for j in 0..dim {
                        let m = &mut self.state[state + j];
                        *m = (1.0 - BN_MOMENTUM) * *m + BN_MOMENTUM * mean[j];
                        let v = &mut self.state[state + dim + j];
                        *v = (1.0 - BN_MOMENTUM) * *v + BN_MOMENTUM * var[j];
                    }
                }
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

/// Relaxed one-hot sample `softmax((logits + gumbel) / temperature)` per row.
/// Without `noise` this is a tempered softmax.
pub fn gumbel_softmax(logits: &Array2<f64>, temperature: f64, noise: Option<&mut Rng>) -> Array2<f64> {
    let mut out = logits.clone();
    let w = out.ncols();
    softmax_rows(&mut out, 0, w, temperature, noise);
    out
}

/// Gradient with respect to the logits of [`gumbel_softmax`], given its
/// output `y` and the upstream gradient `dy`.
pub fn gumbel_softmax_backward(y: &Array2<f64>, dy: &Array2<f64>, temperature: f64) -> Array2<f64> {
    let mut dz = dy.clone();
    softmax_backward(&mut dz, y, 0, y.ncols(), temperature);
    dz
}

fn softmax_rows(z: &mut Array2<f64>, offset: usize, width: usize, temperature: f64, mut noise: Option<&mut Rng>) {
    for mut row in z.axis_iter_mut(Axis(0)) {
        let mut seg = row.slice_mut(ndarray::s![offset..offset + width]);
        if let Some(r) = noise.as_deref_mut() {
            for v in seg.iter_mut() {
                let u: f64 = r.gen_range(1e-12..1.0);
                *v -= (-u.ln()).ln();
            }
        }
        seg.mapv_inplace(|v| v / temperature);
        let m = seg.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        seg.mapv_inplace(|v| (v - m).exp());
        let s = seg.sum();
        seg.mapv_inplace(|v| v / s);
    }
}

fn softmax_backward(dz: &mut Array2<f64>, y: &Array2<f64>, offset: usize, width: usize, temperature: f64) {
    for (mut drow, yrow) in dz.axis_iter_mut(Axis(0)).zip(y.axis_iter(Axis(0))) {
        let ys = yrow.slice(ndarray::s![offset..offset + width]);
        let mut ds = drow.slice_mut(ndarray::s![offset..offset + width]);
        let dot: f64 = ds.iter().zip(ys.iter()).map(|(d, y)| d * y).sum();
        Zip::from(&mut ds).and(&ys).for_each(|d, &y| *d = y * (*d - dot) / temperature);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::Array2;

    fn spec(head: OutputHead, bn: bool) -> NetworkSpec {
        NetworkSpec {
            layer_widths: vec![5, 4, 3],
            activation: Activation::LeakyRelu,
            output_head: head,
            batch_norm: bn,
        }
    }

    fn random_input(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::from_seed(seed);
        Array2::from_shape_fn((n, d), |_| r.gen_range(-1.0..1.0))
    }

    /// Scalar loss sum(w * y) with fixed weights, for gradient checks.
    fn check_gradients(net: &Mlp, x: &Array2<f64>, noise_seed: Option<u64>) {
        let weights = random_input(x.nrows(), net.output_width(), 99);
        let loss = |n: &Mlp, x: &Array2<f64>| {
            let mut r = noise_seed.map(rng::from_seed);
            let out = n.forward(x.view(), Mode::Train, r.as_mut()).output;
            (&out * &weights).sum()
        };
        let mut r = noise_seed.map(rng::from_seed);
        let fwd = net.forward(x.view(), Mode::Train, r.as_mut());
        let (grad, dx) = net.backward(&fwd, weights.view());
        let h = 1e-6;
        for i in 0..net.n_params() {
            let mut p = net.clone();
            p.params_mut()[i] += h;
            let up = loss(&p, x);
            p.params_mut()[i] -= 2.0 * h;
            let down = loss(&p, x);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-5 * (1.0 + fd.abs()), "param {i}: fd {fd} vs {}", grad[i]);
        }
        for r in 0..x.nrows() {
            for c in 0..x.ncols() {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let up = loss(net, &xp);
                xp[[r, c]] -= 2.0 * h;
                let down = loss(net, &xp);
                let fd = (up - down) / (2.0 * h);
                assert!((fd - dx[[r, c]]).abs() < 1e-5 * (1.0 + fd.abs()), "input ({r},{c})");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng::from_seed(1);
        let x = random_input(6, 3, 2);
        for head in [OutputHead::Linear, OutputHead::Sigmoid, OutputHead::Softmax] {
            for bn in [false, true] {
                let net = Mlp::new(3, &spec(head, bn), None, &mut r).unwrap();
                check_gradients(&net, &x, None);
            }
        }
    }

    #[test]
    fn gumbel_layout_gradients_match() {
        let mut r = rng::from_seed(3);
        let layout = vec![
            HeadSegment { offset: 0, width: 1, part: HeadPart::Continuous },
            HeadSegment { offset: 1, width: 1, part: HeadPart::Binary },
            HeadSegment { offset: 2, width: 3, part: HeadPart::Categorical },
        ];
        let s = NetworkSpec {
            layer_widths: vec![6, 5],
            activation: Activation::Relu,
            output_head: OutputHead::GumbelSoftmax {
                temperature: 0.7,
                straight_through: false,
            },
            batch_norm: true,
        };
        let net = Mlp::new(4, &s, Some(layout), &mut r).unwrap();
        let x = random_input(5, 4, 8);
        check_gradients(&net, &x, Some(17));
    }

    #[test]
    fn relaxed_groups_sum_to_one() {
        let mut r = rng::from_seed(4);
        let layout = vec![
            HeadSegment { offset: 0, width: 2, part: HeadPart::Categorical },
            HeadSegment { offset: 2, width: 3, part: HeadPart::Categorical },
        ];
        let s = NetworkSpec {
            layer_widths: vec![8, 5],
            activation: Activation::LeakyRelu,
            output_head: OutputHead::GumbelSoftmax {
                temperature: 0.2,
                straight_through: false,
            },
            batch_norm: false,
        };
        let net = Mlp::new(3, &s, Some(layout), &mut r).unwrap();
        let x = random_input(50, 3, 5);
        let out = net.forward(x.view(), Mode::Train, Some(&mut r)).output;
        for row in out.outer_iter() {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-9);
            assert!((row[2] + row[3] + row[4] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_same_init() {
        let s = spec(OutputHead::Linear, true);
        let a = Mlp::new(3, &s, None, &mut rng::from_seed(5)).unwrap();
        let b = Mlp::new(3, &s, None, &mut rng::from_seed(5)).unwrap();
        let c = Mlp::new(3, &s, None, &mut rng::from_seed(6)).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn layout_must_cover_output() {
        let layout = vec![HeadSegment { offset: 0, width: 2, part: HeadPart::Categorical }];
        let err = Mlp::new(3, &spec(OutputHead::Softmax, false), Some(layout), &mut rng::from_seed(1));
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn running_stats_move_toward_batch() {
        let mut net = Mlp::new(3, &spec(OutputHead::Linear, true), None, &mut rng::from_seed(2)).unwrap();
        let x = random_input(32, 3, 3) + 5.0;
        let before = net.state.clone();
        let fwd = net.forward(x.view(), Mode::Train, None);
        net.commit_batch_stats(&fwd);
        assert_ne!(before, net.state);
    }
}
