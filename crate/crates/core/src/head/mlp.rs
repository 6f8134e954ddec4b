use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_f32_le, read_u32_le};
use crate::rng::{self, Rng};

const MAGIC: &[u8; 4] = b"MLP1";
pub const N_CLASSES: usize = 2;

/// Fully connected layer, `y = W x + b` with `W` out×in.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(input: usize, output: usize) -> Self {
        Self {
            weights: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Per-hidden-layer dropout multipliers: 0 for dropped units, `1/(1−p)` for
/// kept ones (inverted dropout).
pub type Masks = Vec<Array1<f64>>;

/// ReLU feed-forward classifier with dropout after every hidden activation
/// and a 2-logit output (genuine, deepfake).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMlp {
    layers: Vec<Dense>,
    dropout_rate: f64,
}

impl DropoutMlp {
    /// He-initialised network. `widths` runs from the input width to the
    /// output width, which must be 2.
    pub fn new(widths: &[usize], dropout_rate: f64, rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid(
                "widths",
                "need at least input and output widths",
            ));
        }
        if widths.contains(&0) {
            return Err(Error::invalid("widths", "layer widths must be positive"));
        }
        if *widths.last().unwrap() != N_CLASSES {
            return Err(Error::invalid("widths", "output layer must have 2 units"));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::invalid("dropout_rate", "must lie in [0, 1)"));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = (2.0 / fan_in as f64).sqrt();
                Dense {
                    weights: Array2::from_shape_simple_fn((fan_out, fan_in), || {
                        std * Distribution::<f64>::sample(&StandardNormal, &mut *rng)
                    }),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            layers,
            dropout_rate,
        })
    }

    pub fn from_layers(layers: Vec<Dense>, dropout_rate: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("layers", "empty network"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(pair[0].output_dim(), pair[1].input_dim()));
            }
        }
        for l in &layers {
            if l.bias.len() != l.output_dim() {
                return Err(Error::shape(l.output_dim(), l.bias.len()));
            }
        }
        if layers.last().unwrap().output_dim() != N_CLASSES {
            return Err(Error::invalid("layers", "output layer must have 2 units"));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::invalid("dropout_rate", "must lie in [0, 1)"));
        }
        Ok(Self {
            layers,
            dropout_rate,
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn with_dropout_rate(&self, p: f64) -> Result<Self> {
        Self::from_layers(self.layers.clone(), p)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Dense::output_dim))
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Draw one set of dropout masks. All-ones when the rate is zero.
    pub fn sample_masks(&self, rng: &mut Rng) -> Masks {
        let p = self.dropout_rate;
        let keep = 1.0 / (1.0 - p);
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| {
                Array1::from_shape_simple_fn(l.output_dim(), || {
                    if p > 0.0 && rng.random::<f64>() < p {
                        0.0
                    } else {
                        keep
                    }
                })
            })
            .collect()
    }

    /// Output logits; `masks = None` runs the deterministic network.
    pub fn logits(&self, x: ArrayView1<'_, f64>, masks: Option<&Masks>) -> Array1<f64> {
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weights.dot(&a) + &layer.bias;
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
                if let Some(m) = masks {
                    z *= &m[l];
                }
            }
            a = z;
        }
        a
    }

    pub fn predict_proba(&self, x: ArrayView1<'_, f64>) -> [f64; 2] {
        softmax2(self.logits(x, None).view())
    }

    /// Mean class-weighted cross-entropy over the rows of `x` and its
    /// gradient, with one fixed mask set per row (`None` disables dropout).
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<'_, f64>,
        labels: &[usize],
        class_weights: [f64; 2],
        masks: Option<&[Masks]>,
    ) -> (f64, Vec<Dense>) {
        let mut grads: Vec<Dense> = self
            .layers
            .iter()
            .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
            .collect();
        let n = x.nrows().max(1) as f64;
        let last = self.layers.len() - 1;
        let mut total = 0.0;
        for (i, row) in x.rows().into_iter().enumerate() {
            let m = masks.map(|m| &m[i]);
            // Forward pass keeping each layer's input and post-activation mask.
            let mut inputs = Vec::with_capacity(self.layers.len());
            let mut gates = Vec::with_capacity(last);
            let mut a = row.to_owned();
            for (l, layer) in self.layers.iter().enumerate() {
                let mut z = layer.weights.dot(&a) + &layer.bias;
                inputs.push(a);
                if l < last {
                    // relu(z) * mask == z * gate, and gate is also the local derivative.
                    let mut gate = z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    if let Some(m) = m {
                        gate *= &m[l];
                    }
                    z *= &gate;
                    gates.push(gate);
                }
                a = z;
            }
            let y = labels[i];
            let w = class_weights[y];
            let (ce, probs) = cross_entropy(a.view(), y);
            total += w * ce;

            let mut delta = probs;
            delta[y] -= 1.0;
            delta *= w / n;
            for l in (0..=last).rev() {
                let g = &mut grads[l];
                g.bias += &delta;
                let outer = delta
                    .view()
                    .insert_axis(ndarray::Axis(1))
                    .dot(&inputs[l].view().insert_axis(ndarray::Axis(0)));
                g.weights += &outer;
                if l > 0 {
                    delta = self.layers[l].weights.t().dot(&delta) * &gates[l - 1];
                }
            }
        }
        (total / n, grads)
    }

    pub fn loss(
        &self,
        x: ArrayView2<'_, f64>,
        labels: &[usize],
        class_weights: [f64; 2],
        masks: Option<&[Masks]>,
    ) -> f64 {
        let n = x.nrows().max(1) as f64;
        x.rows()
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                let z = self.logits(row, masks.map(|m| &m[i]));
                class_weights[labels[i]] * cross_entropy(z.view(), labels[i]).0
            })
            .sum::<f64>()
            / n
    }

    /// All parameters, layer by layer: weights row-major, then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::shape(self.n_params(), flat.len()));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    /// Flat index range of the output layer's parameters.
    pub fn output_layer_range(&self) -> std::ops::Range<usize> {
        let last = self.layers.last().unwrap();
        let len = last.weights.len() + last.bias.len();
        self.n_params() - len..self.n_params()
    }

    /// Round every parameter through f32, matching what `write` persists.
    pub fn quantized(&self) -> Self {
        let mut m = self.clone();
        for l in &mut m.layers {
            l.weights.mapv_inplace(|v| f64::from(v as f32));
            l.bias.mapv_inplace(|v| f64::from(v as f32));
        }
        m.dropout_rate = f64::from(self.dropout_rate as f32);
        m
    }

    /// MLP1 layout: magic, u32 layer count L, L+1 u32 widths, f32 dropout
    /// rate, then per layer the out×in weights (row-major) and the bias,
    /// all little-endian.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for width in self.widths() {
            w.write_all(&(width as u32).to_le_bytes())?;
        }
        w.write_all(&(self.dropout_rate as f32).to_le_bytes())?;
        for v in self.to_flat() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R, path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Malformed {
            kind: "model",
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic, expected MLP1"));
        }
        let n_layers = read_u32_le(&mut r).map_err(|_| bad("truncated header"))? as usize;
        if n_layers == 0 || n_layers > 64 {
            return Err(bad("implausible layer count"));
        }
        let widths = (0..=n_layers)
            .map(|_| read_u32_le(&mut r).map(|w| w as usize))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|_| bad("truncated widths"))?;
        let p = read_f32_le(&mut r, 1).map_err(|_| bad("truncated dropout rate"))?[0];
        let layers = widths
            .windows(2)
            .map(|w| {
                let weights = read_f32_le(&mut r, w[0] * w[1])?;
                let bias = read_f32_le(&mut r, w[1])?;
                Ok(Dense {
                    weights: Array2::from_shape_vec((w[1], w[0]), weights).expect("sized read"),
                    bias: Array1::from(bias),
                })
            })
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|_| bad("truncated parameters"))?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
            return Err(bad("trailing bytes"));
        }
        Self::from_layers(layers, p).map_err(|e| bad(&e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf).map_err(|e| Error::io(path, e))?;
        crate::io::write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read(bytes.as_slice(), path)
    }
}

/// Numerically stable two-class softmax.
pub fn softmax2(z: ArrayView1<'_, f64>) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

fn cross_entropy(z: ArrayView1<'_, f64>, y: usize) -> (f64, Array1<f64>) {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    let probs = z.mapv(|v| (v - lse).exp());
    (lse - z[y], probs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
    pub dropout_rate: f64,
    pub class_weighting: bool,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            learning_rate: 0.01,
            batch_size: 32,
            momentum: 0.9,
            seed: 0,
            dropout_rate: 0.2,
            class_weighting: true,
            hidden: vec![64, 32],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout_rate", "must lie in [0, 1)"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden", "layer widths must be positive"));
        }
        Ok(())
    }
}

/// Per-epoch training-set loss (evaluated without dropout after each epoch).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub class_weights: [f64; 2],
}

/// Inverse-frequency class weights `n / (2 n_c)`, or ones when disabled.
pub fn class_weights(labels: &[usize], weighting: bool) -> Result<[f64; 2]> {
    let n1 = labels.iter().filter(|&&y| y == 1).count();
    let n0 = labels.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::DegenerateLabels);
    }
    if !weighting {
        return Ok([1.0, 1.0]);
    }
    let n = labels.len() as f64;
    Ok([n / (2.0 * n0 as f64), n / (2.0 * n1 as f64)])
}

/// Train a fresh network on rows of `x` with class indices `labels`
/// (0 = genuine, 1 = deepfake).
pub fn train(
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(DropoutMlp, TrainReport)> {
    cfg.validate()?;
    let weights = class_weights(labels, cfg.class_weighting)?;
    let mut widths = vec![x.ncols()];
    widths.extend(&cfg.hidden);
    widths.push(N_CLASSES);
    let mut init_rng = rng::stream(cfg.seed, "mlp-init");
    let mut model = DropoutMlp::new(&widths, cfg.dropout_rate, &mut init_rng)?;
    let report = fit(
        &mut model,
        x,
        labels,
        weights,
        cfg,
        &mut rng::stream(cfg.seed, "mlp-train"),
    )?;
    Ok((model, report))
}

/// Continue training `model` in place with mini-batch SGD (momentum) and
/// dropout active, using the supplied class weights.
pub fn fit(
    model: &mut DropoutMlp,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    class_weights: [f64; 2],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainReport> {
    cfg.validate()?;
    if x.nrows() != labels.len() {
        return Err(Error::shape(x.nrows(), labels.len()));
    }
    if x.nrows() == 0 {
        return Err(Error::invalid("x", "no training rows"));
    }
    if x.ncols() != model.input_dim() {
        return Err(Error::shape(model.input_dim(), x.ncols()));
    }
    if labels.iter().any(|&y| y >= N_CLASSES) {
        return Err(Error::invalid("labels", "class index out of range"));
    }
    let mut velocity: Vec<Dense> = model
        .layers
        .iter()
        .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
        .collect();
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size) {
            let xb = x.select(ndarray::Axis(0), batch);
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let masks: Vec<Masks> = batch.iter().map(|_| model.sample_masks(rng)).collect();
            let (_, grads) = model.loss_and_grad(xb.view(), &yb, class_weights, Some(&masks));
            for ((layer, g), v) in model.layers.iter_mut().zip(&grads).zip(velocity.iter_mut()) {
                v.weights *= cfg.momentum;
                v.weights.scaled_add(-cfg.learning_rate, &g.weights);
                v.bias *= cfg.momentum;
                v.bias.scaled_add(-cfg.learning_rate, &g.bias);
                layer.weights += &v.weights;
                layer.bias += &v.bias;
            }
        }
        epoch_losses.push(model.loss(x, labels, class_weights, None));
    }
    Ok(TrainReport {
        epoch_losses,
        class_weights,
    })
}
