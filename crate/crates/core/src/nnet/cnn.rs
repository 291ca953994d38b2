//! Layered convolutional classifier with per-layer activation taps.
//!
//! Activations are channel-major (`C×H×W`). Convolutions use valid padding,
//! pooling is 2×2 with stride 2, and the network must end in a two-way
//! softmax trained with cross-entropy.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, Differentiable, TrainConfig, TrainHistory, CHECKPOINT_VERSION};
use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::rng::RngSeed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        kernel: [usize; 2],
        out_channels: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    Sigmoid,
    MaxPool,
    Dense {
        out: usize,
    },
    Softmax,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnSpec {
    /// Input shape as `[height, width, channels]`.
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
    /// Indices of layers whose outputs are exposed as taps.
    pub taps: Vec<usize>,
}

impl Default for CnnSpec {
    /// conv 3×3×8, sigmoid, pool, conv 3×3×16, sigmoid, pool, dense 32,
    /// sigmoid, dense 2, softmax; taps after both pools and the hidden dense.
    fn default() -> Self {
        use LayerSpec::*;
        Self {
            input: [32, 32, 3],
            layers: vec![
                Conv { kernel: [3, 3], out_channels: 8, stride: 1 },
                Sigmoid,
                MaxPool,
                Conv { kernel: [3, 3], out_channels: 16, stride: 1 },
                Sigmoid,
                MaxPool,
                Dense { out: 32 },
                Sigmoid,
                Dense { out: 2 },
                Softmax,
            ],
            taps: vec![2, 5, 7],
        }
    }
}

/// `(channels, height, width)`
pub type Shape = (usize, usize, usize);

fn numel(s: Shape) -> usize {
    s.0 * s.1 * s.2
}

impl CnnSpec {
    /// Output shape of every layer; fails on any inconsistency.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let [h, w, c] = self.input;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::shape("empty CNN input"));
        }
        if self.layers.is_empty() {
            return Err(Error::shape("CNN has no layers"));
        }
        let mut cur = (c, h, w);
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match *layer {
                LayerSpec::Conv { kernel: [kh, kw], out_channels, stride } => {
                    if kh == 0 || kw == 0 || out_channels == 0 || stride == 0 {
                        return Err(Error::shape(format!("layer {i}: zero-sized convolution")));
                    }
                    if kh > cur.1 || kw > cur.2 {
                        return Err(Error::shape(format!(
                            "layer {i}: kernel {kh}x{kw} larger than input {}x{}",
                            cur.1, cur.2
                        )));
                    }
                    (out_channels, (cur.1 - kh) / stride + 1, (cur.2 - kw) / stride + 1)
                }
                LayerSpec::Sigmoid => cur,
                LayerSpec::MaxPool => {
                    if cur.1 < 2 || cur.2 < 2 {
                        return Err(Error::shape(format!("layer {i}: pooling a {}x{} map", cur.1, cur.2)));
                    }
                    (cur.0, cur.1 / 2, cur.2 / 2)
                }
                LayerSpec::Dense { out } => {
                    if out == 0 {
                        return Err(Error::shape(format!("layer {i}: empty dense layer")));
                    }
                    (out, 1, 1)
                }
                LayerSpec::Softmax => {
                    if i + 1 != self.layers.len() {
                        return Err(Error::shape("softmax must be the last layer"));
                    }
                    if numel(cur) != 2 {
                        return Err(Error::shape(format!(
                            "softmax expects 2 inputs, got {}",
                            numel(cur)
                        )));
                    }
                    cur
                }
            };
            shapes.push(cur);
        }
        if self.layers.last() != Some(&LayerSpec::Softmax) {
            return Err(Error::shape("network must end in a two-way softmax"));
        }
        if let Some(t) = self.taps.iter().find(|&&t| t >= self.layers.len()) {
            return Err(Error::shape(format!("tap index {t} out of range")));
        }
        Ok(shapes)
    }

    pub fn tap_sizes(&self) -> Result<Vec<usize>> {
        let shapes = self.shapes()?;
        Ok(self.taps.iter().map(|&t| numel(shapes[t])).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    spec: CnnSpec,
    shapes: Vec<Shape>,
    params: Vec<LayerParams>,
    seed: RngSeed,
}

/// Class probabilities plus flattened activations at each tap.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnOutput {
    pub probs: [f64; 2],
    pub taps: Vec<(usize, Vec<f64>)>,
}

impl CnnModel {
    pub fn init(spec: CnnSpec, seed: RngSeed) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut rng = seed.rng();
        let [_, _, c0] = spec.input;
        let mut params = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let in_shape = if i == 0 { (c0, spec.input[0], spec.input[1]) } else { shapes[i - 1] };
            let (fan_in, fan_out, n) = match *layer {
                LayerSpec::Conv { kernel: [kh, kw], out_channels, .. } => {
                    let k = kh * kw;
                    (in_shape.0 * k, out_channels * k, out_channels * in_shape.0 * k)
                }
                LayerSpec::Dense { out } => (numel(in_shape), out, out * numel(in_shape)),
                _ => (0, 0, 0),
            };
            let bound = if n > 0 { (6.0 / (fan_in + fan_out) as f64).sqrt() } else { 0.0 };
            let weights = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
            let bias = vec![0.0; if n > 0 { shapes[i].0 } else { 0 }];
            params.push(LayerParams { weights, bias });
        }
        Ok(Self { spec, shapes, params, seed })
    }

    pub fn spec(&self) -> &CnnSpec {
        &self.spec
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    fn input_shape(&self) -> Shape {
        let [h, w, c] = self.spec.input;
        (c, h, w)
    }

    fn in_shape(&self, layer: usize) -> Shape {
        if layer == 0 {
            self.input_shape()
        } else {
            self.shapes[layer - 1]
        }
    }

    /// Converts an `H×W×C` image to the channel-major input vector.
    pub fn input_from_image(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        let [h, w, c] = self.spec.input;
        if (img.height(), img.width(), img.channels()) != (h, w, c) {
            return Err(Error::shape(format!(
                "CNN expects {h}x{w}x{c}, got {}x{}x{}",
                img.height(),
                img.width(),
                img.channels()
            )));
        }
        let mut out = vec![0.0; h * w * c];
        for r in 0..h {
            for col in 0..w {
                for ch in 0..c {
                    out[(ch * h + r) * w + col] = img.get(r, col, ch);
                }
            }
        }
        Ok(out)
    }

    /// All layer outputs; `acts[0]` is the input, `acts[i+1]` the output of layer `i`.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.spec.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let input = &acts[i];
            let (ic, ih, iw) = self.in_shape(i);
            let (oc, oh, ow) = self.shapes[i];
            let p = &self.params[i];
            let out = match *layer {
                LayerSpec::Conv { kernel: [kh, kw], stride, .. } => {
                    let mut out = vec![0.0; oc * oh * ow];
                    for o in 0..oc {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let mut s = p.bias[o];
                                for c in 0..ic {
                                    let wbase = ((o * ic + c) * kh) * kw;
                                    for ky in 0..kh {
                                        let row = (c * ih + y * stride + ky) * iw + xx * stride;
                                        let wrow = &p.weights[wbase + ky * kw..wbase + (ky + 1) * kw];
                                        for (kx, wv) in wrow.iter().enumerate() {
                                            s += wv * input[row + kx];
                                        }
                                    }
                                }
                                out[(o * oh + y) * ow + xx] = s;
                            }
                        }
                    }
                    out
                }
                LayerSpec::Sigmoid => input.iter().map(|&z| sigmoid(z)).collect(),
                LayerSpec::MaxPool => {
                    let mut out = vec![0.0; oc * oh * ow];
                    for c in 0..oc {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let base = (c * ih + 2 * y) * iw + 2 * xx;
                                out[(c * oh + y) * ow + xx] = input[base]
                                    .max(input[base + 1])
                                    .max(input[base + iw])
                                    .max(input[base + iw + 1]);
                            }
                        }
                    }
                    out
                }
                LayerSpec::Dense { out } => {
                    let n_in = ic * ih * iw;
                    (0..out)
                        .map(|o| {
                            p.bias[o]
                                + p.weights[o * n_in..(o + 1) * n_in]
                                    .iter()
                                    .zip(input)
                                    .map(|(w, v)| w * v)
                                    .sum::<f64>()
                        })
                        .collect()
                }
                LayerSpec::Softmax => {
                    let m = input.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = input.iter().map(|z| (z - m).exp()).collect();
                    let s: f64 = e.iter().sum();
                    e.into_iter().map(|v| v / s).collect()
                }
            };
            acts.push(out);
        }
        acts
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != numel(self.input_shape()) {
            return Err(Error::shape(format!(
                "CNN input has {} values, expected {}",
                x.len(),
                numel(self.input_shape())
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<CnnOutput> {
        self.check_input(x)?;
        let acts = self.activations(x);
        let last = acts.last().expect("at least one layer");
        Ok(CnnOutput {
            probs: [last[0], last[1]],
            taps: self
                .spec
                .taps
                .iter()
                .map(|&t| (t, acts[t + 1].clone()))
                .collect(),
        })
    }

    pub fn forward_image(&self, img: &ImageTensor) -> Result<CnnOutput> {
        self.forward(&self.input_from_image(img)?)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        let out = self.forward(x)?;
        Ok(if out.probs[1] > out.probs[0] { Label::Patient } else { Label::Healthy })
    }

    /// Loss and per-layer parameter gradients for one sample.
    fn backprop(&self, x: &[f64], label: usize) -> (f64, Vec<LayerParams>) {
        let acts = self.activations(x);
        let n = self.spec.layers.len();
        let probs = &acts[n];
        let loss = -probs[label].max(1e-300).ln();
        let mut grads: Vec<LayerParams> = self
            .params
            .iter()
            .map(|p| LayerParams {
                weights: vec![0.0; p.weights.len()],
                bias: vec![0.0; p.bias.len()],
            })
            .collect();
        // gradient at the softmax input
        let mut delta: Vec<f64> = probs.clone();
        delta[label] -= 1.0;
        for i in (0..n - 1).rev() {
            let input = &acts[i];
            let output = &acts[i + 1];
            let (ic, ih, iw) = self.in_shape(i);
            let (oc, oh, ow) = self.shapes[i];
            let p = &self.params[i];
            let g = &mut grads[i];
            delta = match self.spec.layers[i] {
                LayerSpec::Conv { kernel: [kh, kw], stride, .. } => {
                    let mut din = vec![0.0; input.len()];
                    for o in 0..oc {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let d = delta[(o * oh + y) * ow + xx];
                                if d == 0.0 {
                                    continue;
                                }
                                g.bias[o] += d;
                                for c in 0..ic {
                                    let wbase = ((o * ic + c) * kh) * kw;
                                    for ky in 0..kh {
                                        let row = (c * ih + y * stride + ky) * iw + xx * stride;
                                        for kx in 0..kw {
                                            g.weights[wbase + ky * kw + kx] += d * input[row + kx];
                                            din[row + kx] += d * p.weights[wbase + ky * kw + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    din
                }
                LayerSpec::Sigmoid => delta
                    .iter()
                    .zip(output)
                    .map(|(d, s)| d * s * (1.0 - s))
                    .collect(),
                LayerSpec::MaxPool => {
                    let mut din = vec![0.0; input.len()];
                    for c in 0..oc {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let base = (c * ih + 2 * y) * iw + 2 * xx;
                                let cands = [base, base + 1, base + iw, base + iw + 1];
                                let arg = cands
                                    .into_iter()
                                    .fold(base, |best, k| if input[k] > input[best] { k } else { best });
                                din[arg] += delta[(c * oh + y) * ow + xx];
                            }
                        }
                    }
                    din
                }
                LayerSpec::Dense { out } => {
                    let n_in = input.len();
                    let mut din = vec![0.0; n_in];
                    for o in 0..out {
                        let d = delta[o];
                        g.bias[o] += d;
                        let wrow = &p.weights[o * n_in..(o + 1) * n_in];
                        let grow = &mut g.weights[o * n_in..(o + 1) * n_in];
                        for k in 0..n_in {
                            grow[k] += d * input[k];
                            din[k] += d * wrow[k];
                        }
                    }
                    din
                }
                LayerSpec::Softmax => unreachable!("softmax is validated to be last"),
            };
        }
        (loss, grads)
    }

    pub fn loss(&self, x: &[f64], label: usize) -> f64 {
        let acts = self.activations(x);
        -acts[acts.len() - 1][label].max(1e-300).ln()
    }

    pub fn mean_loss(&self, data: &[(Vec<f64>, Label)]) -> f64 {
        data.iter().map(|(x, y)| self.loss(x, y.index())).sum::<f64>() / data.len() as f64
    }

    pub fn accuracy(&self, data: &[(Vec<f64>, Label)]) -> f64 {
        let hits = data
            .iter()
            .filter(|(x, y)| self.predict(x).map(|p| p == *y).unwrap_or(false))
            .count();
        hits as f64 / data.len() as f64
    }

    pub fn to_checkpoint(&self) -> CnnCheckpoint {
        CnnCheckpoint {
            format_version: CHECKPOINT_VERSION,
            kind: "cnn".into(),
            seed: self.seed,
            spec: self.spec.clone(),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(c: CnnCheckpoint) -> Result<Self> {
        if c.format_version != CHECKPOINT_VERSION || c.kind != "cnn" {
            return Err(Error::validation(format!(
                "not a cnn checkpoint (kind `{}`, version {})",
                c.kind, c.format_version
            )));
        }
        let template = Self::init(c.spec, c.seed)?;
        if template.params.len() != c.params.len()
            || template
                .params
                .iter()
                .zip(&c.params)
                .any(|(a, b)| a.weights.len() != b.weights.len() || a.bias.len() != b.bias.len())
        {
            return Err(Error::shape("cnn checkpoint parameter shapes"));
        }
        Ok(Self {
            params: c.params,
            ..template
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnCheckpoint {
    pub format_version: u32,
    pub kind: String,
    pub seed: RngSeed,
    pub spec: CnnSpec,
    pub params: Vec<LayerParams>,
}

pub fn cnn_init(spec: CnnSpec, seed: RngSeed) -> Result<CnnModel> {
    CnnModel::init(spec, seed)
}

/// Mini-batch gradient descent on mean cross-entropy.
pub fn cnn_train(
    spec: CnnSpec,
    data: &[(Vec<f64>, Label)],
    cfg: &TrainConfig,
) -> Result<(CnnModel, TrainHistory)> {
    cfg.validate()?;
    let mut model = CnnModel::init(spec, cfg.seed)?;
    if data.is_empty() {
        return Err(Error::validation("empty training set"));
    }
    for (x, _) in data {
        model.check_input(x)?;
    }
    let mut rng = cfg.seed.stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = TrainHistory {
        losses: vec![model.mean_loss(data)],
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<LayerParams>> = None;
            for &i in batch {
                let (_, g) = model.backprop(&data[i].0, data[i].1.index());
                match acc.as_mut() {
                    None => acc = Some(g),
                    Some(a) => {
                        for (al, gl) in a.iter_mut().zip(g) {
                            al.weights.iter_mut().zip(gl.weights).for_each(|(x, y)| *x += y);
                            al.bias.iter_mut().zip(gl.bias).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            for (p, g) in model.params.iter_mut().zip(acc.expect("non-empty batch")) {
                p.weights.iter_mut().zip(g.weights).for_each(|(w, d)| *w -= scale * d);
                p.bias.iter_mut().zip(g.bias).for_each(|(b, d)| *b -= scale * d);
            }
        }
        history.losses.push(model.mean_loss(data));
        log::debug!("cnn epoch {epoch}: loss {:.5}", history.last());
    }
    Ok((model, history))
}

impl Differentiable for CnnModel {
    type Sample = (Vec<f64>, Label);

    fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.weights.len() + p.bias.len()).sum()
    }

    fn param(&self, mut i: usize) -> f64 {
        for p in &self.params {
            if i < p.weights.len() {
                return p.weights[i];
            }
            i -= p.weights.len();
            if i < p.bias.len() {
                return p.bias[i];
            }
            i -= p.bias.len();
        }
        panic!("parameter index out of range")
    }

    fn set_param(&mut self, mut i: usize, v: f64) {
        for p in &mut self.params {
            if i < p.weights.len() {
                p.weights[i] = v;
                return;
            }
            i -= p.weights.len();
            if i < p.bias.len() {
                p.bias[i] = v;
                return;
            }
            i -= p.bias.len();
        }
        panic!("parameter index out of range")
    }

    fn loss(&self, (x, y): &Self::Sample) -> f64 {
        CnnModel::loss(self, x, y.index())
    }

    fn loss_and_grad(&self, (x, y): &Self::Sample) -> (f64, Vec<f64>) {
        let (loss, grads) = self.backprop(x, y.index());
        let flat = grads
            .into_iter()
            .flat_map(|g| g.weights.into_iter().chain(g.bias))
            .collect();
        (loss, flat)
    }
}
