//! Small feed-forward networks with hand-written backpropagation.
//!
//! A network is a chain of dense or valid-padding 2-D convolution layers.
//! The last layer is the classifier head; the post-activation output of the
//! layer right before it is the feature vector `z` used by the contrastive
//! unlearning loss. Activations are always carried as `[batch, len]`
//! matrices, and convolution layers reinterpret each row as
//! `channels x height x width`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{ConvDims, ParamEntry, ParamKind, ParameterSet, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
        activation: Activation,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        input_hw: [usize; 2],
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn input_len(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv2d {
                in_channels,
                input_hw,
                ..
            } => in_channels * input_hw[0] * input_hw[1],
        }
    }

    pub fn output_len(&self) -> usize {
        match *self {
            LayerSpec::Dense { outputs, .. } => outputs,
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                input_hw,
                ..
            } => out_channels * (input_hw[0] + 1 - kernel[0]) * (input_hw[1] + 1 - kernel[1]),
        }
    }

    pub fn activation(&self) -> Activation {
        match *self {
            LayerSpec::Dense { activation, .. } | LayerSpec::Conv2d { activation, .. } => {
                activation
            }
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel[0] * kernel[1],
        }
    }
}

pub fn weight_name(layer: usize) -> String {
    format!("l{layer}.weight")
}

pub fn bias_name(layer: usize) -> String {
    format!("l{layer}.bias")
}

/// Layer graph description; also the checkpoint architecture descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// Dense network `input -> hidden... -> classes`; the head has no activation.
    pub fn mlp(input_dim: usize, hidden: &[usize], classes: usize, activation: Activation) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for &h in hidden {
            layers.push(LayerSpec::Dense {
                inputs: fan_in,
                outputs: h,
                activation,
            });
            fan_in = h;
        }
        layers.push(LayerSpec::Dense {
            inputs: fan_in,
            outputs: classes,
            activation: Activation::Identity,
        });
        Self { input_dim, layers }
    }

    pub fn validate(&self) -> Result<()> {
        let Some(head) = self.layers.last() else {
            return Err(Error::InvalidArgument("architecture has no layers".into()));
        };
        if !matches!(
            head,
            LayerSpec::Dense {
                activation: Activation::Identity,
                ..
            }
        ) {
            return Err(Error::InvalidArgument(
                "classifier head must be a dense layer without activation".into(),
            ));
        }
        let mut width = self.input_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            if let LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                input_hw,
                ..
            } = *layer
            {
                if in_channels == 0
                    || out_channels == 0
                    || kernel.contains(&0)
                    || kernel[0] > input_hw[0]
                    || kernel[1] > input_hw[1]
                {
                    return Err(Error::shape(
                        format!("layer {i}"),
                        format!("bad conv geometry {layer:?}"),
                    ));
                }
            }
            if layer.input_len() != width {
                return Err(Error::shape(
                    format!("layer {i}"),
                    format!("expects {} inputs, previous layer gives {width}", layer.input_len()),
                ));
            }
            width = layer.output_len();
            if width == 0 {
                return Err(Error::shape(format!("layer {i}"), "zero-width output"));
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, LayerSpec::output_len)
    }

    /// Index of the last hidden layer, `None` for a head-only network
    /// (features are then the raw inputs).
    pub fn feature_layer(&self) -> Option<usize> {
        self.layers.len().checked_sub(2)
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_layer()
            .map_or(self.input_dim, |l| self.layers[l].output_len())
    }

    /// Zero-valued parameter set with this architecture's layout.
    pub fn param_layout(&self) -> ParameterSet {
        let mut p = ParameterSet::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let (weight, outputs) = match *layer {
                LayerSpec::Dense {
                    inputs, outputs, ..
                } => (
                    ParamEntry::new(ParamKind::DenseWeight, Tensor::zeros(vec![outputs, inputs])),
                    outputs,
                ),
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    let dims = ConvDims {
                        in_channels,
                        out_channels,
                        d1: kernel[0],
                        d2: kernel[1],
                    };
                    (
                        ParamEntry::conv(dims, Tensor::zeros(dims.shape()))
                            .expect("layout built from its own dims"),
                        out_channels,
                    )
                }
            };
            p.insert(weight_name(i), weight).expect("unique names");
            p.insert(
                bias_name(i),
                ParamEntry::new(ParamKind::Bias, Tensor::zeros(vec![outputs])),
            )
            .expect("unique names");
        }
        p
    }

    /// Seeded uniform fan-in initialization; biases start at zero.
    pub fn init_params(&self, seed: u64) -> ParameterSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = self.param_layout();
        for (i, layer) in self.layers.iter().enumerate() {
            let gain = match layer.activation() {
                Activation::Relu => 6.0,
                _ => 3.0,
            };
            let bound = (gain / layer.fan_in() as f64).sqrt();
            let w = p.get_mut(&weight_name(i)).expect("layout has weight");
            for v in w.tensor.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        p
    }
}

#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub logits: Tensor,
    pub features: Tensor,
}

/// Per-layer activations kept for backpropagation; `acts[0]` is the input.
#[derive(Debug, Clone)]
struct ForwardCache {
    acts: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct NetworkModel {
    arch: Architecture,
    params: ParameterSet,
    cache: Option<ForwardCache>,
}

impl NetworkModel {
    pub fn new(arch: Architecture, params: ParameterSet) -> Result<Self> {
        arch.validate()?;
        arch.param_layout().ensure_congruent(&params)?;
        Ok(Self {
            arch,
            params,
            cache: None,
        })
    }

    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let params = arch.init_params(seed);
        Self::new(arch, params)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        self.cache = None;
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParameterSet) -> Result<()> {
        self.params.ensure_congruent(&params)?;
        self.params = params;
        self.cache = None;
        Ok(())
    }

    pub fn into_params(self) -> ParameterSet {
        self.params
    }

    /// Inference pass; does not touch the backprop cache.
    pub fn forward(&self, batch: &Tensor) -> Result<ForwardResult> {
        let acts = self.run(batch)?;
        Ok(self.result_from(&acts))
    }

    /// Forward pass that keeps activations for a following [`backward`](Self::backward).
    pub fn forward_cached(&mut self, batch: &Tensor) -> Result<ForwardResult> {
        let acts = self.run(batch)?;
        let out = self.result_from(&acts);
        self.cache = Some(ForwardCache { acts });
        Ok(out)
    }

    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward(batch)?.logits;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }

    fn result_from(&self, acts: &[Tensor]) -> ForwardResult {
        let features = match self.arch.feature_layer() {
            Some(l) => acts[l + 1].clone(),
            None => acts[0].clone(),
        };
        ForwardResult {
            logits: acts.last().expect("non-empty").clone(),
            features,
        }
    }

    fn run(&self, batch: &Tensor) -> Result<Vec<Tensor>> {
        if batch.shape().len() != 2 || batch.row_len() != self.arch.input_dim {
            return Err(Error::shape(
                "layer 0",
                format!(
                    "expected [batch, {}] input, got {:?}",
                    self.arch.input_dim,
                    batch.shape()
                ),
            ));
        }
        let mut acts = Vec::with_capacity(self.arch.layers.len() + 1);
        acts.push(batch.clone());
        for (i, layer) in self.arch.layers.iter().enumerate() {
            let w = &self.params.get(&weight_name(i)).expect("validated").tensor;
            let b = &self.params.get(&bias_name(i)).expect("validated").tensor;
            let input = acts.last().expect("non-empty");
            let mut out = match *layer {
                LayerSpec::Dense {
                    inputs, outputs, ..
                } => dense_forward(input, w.data(), b.data(), inputs, outputs),
                LayerSpec::Conv2d { .. } => conv_forward(layer, input, w.data(), b.data()),
            };
            let act = layer.activation();
            if act != Activation::Identity {
                out.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
            }
            if !out.is_finite() {
                return Err(Error::shape(format!("layer {i}"), "non-finite activation"));
            }
            acts.push(out);
        }
        Ok(acts)
    }

    /// Backpropagates output gradients through the cached forward pass.
    ///
    /// `grad_logits` is the loss gradient at the head output and
    /// `grad_features` the gradient at the feature vector `z`; either may be
    /// absent. Consumes the cache.
    pub fn backward(
        &mut self,
        grad_logits: Option<&Tensor>,
        grad_features: Option<&Tensor>,
    ) -> Result<ParameterSet> {
        let cache = self.cache.take().ok_or(Error::NoForwardCache)?;
        let acts = &cache.acts;
        let batch = acts[0].rows();
        let n_layers = self.arch.layers.len();
        let mut grads = self.params.zeros_like();

        let mut g = match grad_logits {
            Some(gl) => {
                if gl.shape() != acts[n_layers].shape() {
                    return Err(Error::shape(
                        "head",
                        format!("logit gradient {:?} vs logits {:?}", gl.shape(), acts[n_layers].shape()),
                    ));
                }
                gl.clone()
            }
            None => Tensor::zeros(acts[n_layers].shape().to_vec()),
        };
        let feature_act = self.arch.feature_layer().map_or(0, |l| l + 1);
        if let Some(gf) = grad_features {
            if gf.shape() != acts[feature_act].shape() {
                return Err(Error::shape(
                    "features",
                    format!("feature gradient {:?} vs features {:?}", gf.shape(), acts[feature_act].shape()),
                ));
            }
        }

        for i in (0..n_layers).rev() {
            if i + 1 == feature_act {
                if let Some(gf) = grad_features {
                    g.data_mut().iter_mut().zip(gf.data()).for_each(|(a, b)| *a += b);
                }
            }
            let layer = &self.arch.layers[i];
            let act = layer.activation();
            if act != Activation::Identity {
                for (gv, &y) in g.data_mut().iter_mut().zip(acts[i + 1].data()) {
                    *gv *= act.derivative_from_output(y);
                }
            }
            let w = &self.params.get(&weight_name(i)).expect("validated").tensor;
            let mut gw = vec![0.0; w.len()];
            let mut gb = vec![0.0; layer_bias_len(layer)];
            let gx = match *layer {
                LayerSpec::Dense {
                    inputs, outputs, ..
                } => dense_backward(&acts[i], &g, w.data(), inputs, outputs, &mut gw, &mut gb),
                LayerSpec::Conv2d { .. } => conv_backward(layer, &acts[i], &g, w.data(), &mut gw, &mut gb),
            };
            grads
                .get_mut(&weight_name(i))
                .expect("layout")
                .tensor
                .data_mut()
                .copy_from_slice(&gw);
            grads
                .get_mut(&bias_name(i))
                .expect("layout")
                .tensor
                .data_mut()
                .copy_from_slice(&gb);
            g = gx;
        }
        debug_assert_eq!(g.rows(), batch);
        Ok(grads)
    }
}

fn layer_bias_len(layer: &LayerSpec) -> usize {
    match *layer {
        LayerSpec::Dense { outputs, .. } => outputs,
        LayerSpec::Conv2d { out_channels, .. } => out_channels,
    }
}

fn dense_forward(x: &Tensor, w: &[f64], b: &[f64], inputs: usize, outputs: usize) -> Tensor {
    let batch = x.rows();
    let mut out = vec![0.0; batch * outputs];
    for n in 0..batch {
        let xr = x.row(n);
        let orow = &mut out[n * outputs..(n + 1) * outputs];
        for (o, ov) in orow.iter_mut().enumerate() {
            let wr = &w[o * inputs..(o + 1) * inputs];
            *ov = b[o] + wr.iter().zip(xr).map(|(a, c)| a * c).sum::<f64>();
        }
    }
    Tensor::new(vec![batch, outputs], out).expect("consistent")
}

fn dense_backward(
    x: &Tensor,
    g: &Tensor,
    w: &[f64],
    inputs: usize,
    outputs: usize,
    gw: &mut [f64],
    gb: &mut [f64],
) -> Tensor {
    let batch = x.rows();
    let mut gx = vec![0.0; batch * inputs];
    for n in 0..batch {
        let xr = x.row(n);
        let gr = g.row(n);
        let gxr = &mut gx[n * inputs..(n + 1) * inputs];
        for o in 0..outputs {
            let go = gr[o];
            if go == 0.0 {
                continue;
            }
            gb[o] += go;
            let wr = &w[o * inputs..(o + 1) * inputs];
            let gwr = &mut gw[o * inputs..(o + 1) * inputs];
            for i in 0..inputs {
                gwr[i] += go * xr[i];
                gxr[i] += go * wr[i];
            }
        }
    }
    Tensor::new(vec![batch, inputs], gx).expect("consistent")
}

struct ConvGeom {
    cin: usize,
    cout: usize,
    k1: usize,
    k2: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

fn conv_geom(layer: &LayerSpec) -> ConvGeom {
    match *layer {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            input_hw,
            ..
        } => ConvGeom {
            cin: in_channels,
            cout: out_channels,
            k1: kernel[0],
            k2: kernel[1],
            h: input_hw[0],
            w: input_hw[1],
            oh: input_hw[0] + 1 - kernel[0],
            ow: input_hw[1] + 1 - kernel[1],
        },
        LayerSpec::Dense { .. } => unreachable!("conv geometry of a dense layer"),
    }
}

// Weight layout [in, out, d1, d2].
#[inline]
fn widx(c: &ConvGeom, n: usize, o: usize, x: usize, y: usize) -> usize {
    ((n * c.cout + o) * c.k1 + x) * c.k2 + y
}

fn conv_forward(layer: &LayerSpec, input: &Tensor, w: &[f64], b: &[f64]) -> Tensor {
    let c = conv_geom(layer);
    let batch = input.rows();
    let out_len = c.cout * c.oh * c.ow;
    let mut out = vec![0.0; batch * out_len];
    for s in 0..batch {
        let xin = input.row(s);
        let orow = &mut out[s * out_len..(s + 1) * out_len];
        for o in 0..c.cout {
            for i in 0..c.oh {
                for j in 0..c.ow {
                    let mut acc = b[o];
                    for n in 0..c.cin {
                        for x in 0..c.k1 {
                            let base = (n * c.h + i + x) * c.w + j;
                            for y in 0..c.k2 {
                                acc += w[widx(&c, n, o, x, y)] * xin[base + y];
                            }
                        }
                    }
                    orow[(o * c.oh + i) * c.ow + j] = acc;
                }
            }
        }
    }
    Tensor::new(vec![batch, out_len], out).expect("consistent")
}

fn conv_backward(
    layer: &LayerSpec,
    input: &Tensor,
    g: &Tensor,
    w: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
) -> Tensor {
    let c = conv_geom(layer);
    let batch = input.rows();
    let in_len = c.cin * c.h * c.w;
    let mut gx = vec![0.0; batch * in_len];
    for s in 0..batch {
        let xin = input.row(s);
        let grow = g.row(s);
        let gxr = &mut gx[s * in_len..(s + 1) * in_len];
        for o in 0..c.cout {
            for i in 0..c.oh {
                for j in 0..c.ow {
                    let go = grow[(o * c.oh + i) * c.ow + j];
                    if go == 0.0 {
                        continue;
                    }
                    gb[o] += go;
                    for n in 0..c.cin {
                        for x in 0..c.k1 {
                            let base = (n * c.h + i + x) * c.w + j;
                            for y in 0..c.k2 {
                                let wi = widx(&c, n, o, x, y);
                                gw[wi] += go * xin[base + y];
                                gxr[base + y] += go * w[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![batch, in_len], gx).expect("consistent")
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise softmax.
pub fn softmax(logits: &Tensor) -> Tensor {
    let c = logits.row_len();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean softmax cross-entropy and its gradient at the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let batch = logits.rows();
    let classes = logits.row_len();
    if labels.len() != batch {
        return Err(Error::InvalidArgument(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    let inv = 1.0 / batch as f64;
    for (n, &y) in labels.iter().enumerate() {
        let row = logits.row(n);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        let grow = &mut grad.data_mut()[n * classes..(n + 1) * classes];
        grow[y] -= 1.0;
        grow.iter_mut().for_each(|v| *v *= inv);
    }
    Ok((loss * inv, grad))
}

/// Cosine similarity; a zero-norm input yields 0 and sets `degenerate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    pub degenerate: bool,
}

pub(crate) const NORM_FLOOR: f64 = 1e-12;

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<Cosine> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "cosine similarity of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = norm(a);
    let nb = norm(b);
    if na < NORM_FLOOR || nb < NORM_FLOOR {
        log::warn!("degenerate cosine similarity: zero-norm input");
        return Ok(Cosine {
            value: 0.0,
            degenerate: true,
        });
    }
    let value = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    Ok(Cosine {
        value,
        degenerate: false,
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: ParameterSet,
    v: ParameterSet,
}

impl AdamState {
    pub fn new(params: &ParameterSet, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParameterSet, grads: &ParameterSet) -> Result<()> {
        params.ensure_congruent(grads)?;
        params.ensure_congruent(&self.m)?;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for ((((_, p), (_, g)), (_, m)), (_, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            let p = p.tensor.data_mut();
            let g = g.tensor.data();
            let m = m.tensor.data_mut();
            let v = v.tensor.data_mut();
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_identity_layers() -> NetworkModel {
        let arch = Architecture {
            input_dim: 2,
            layers: vec![
                LayerSpec::Dense {
                    inputs: 2,
                    outputs: 2,
                    activation: Activation::Identity,
                },
                LayerSpec::Dense {
                    inputs: 2,
                    outputs: 2,
                    activation: Activation::Identity,
                },
            ],
        };
        let mut p = arch.param_layout();
        for l in 0..2 {
            p.get_mut(&weight_name(l))
                .unwrap()
                .tensor
                .data_mut()
                .copy_from_slice(&[1., 0., 0., 1.]);
        }
        NetworkModel::new(arch, p).unwrap()
    }

    #[test]
    fn identity_forward() {
        let m = two_identity_layers();
        let x = Tensor::from_rows(&[vec![1., 2.]]).unwrap();
        let r = m.forward(&x).unwrap();
        assert_eq!(r.logits.data(), &[1., 2.]);
        assert_eq!(r.features.data(), &[1., 2.]);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let arch = Architecture::mlp(3, &[4], 2, Activation::Relu);
        let m = NetworkModel::new(arch.clone(), arch.param_layout()).unwrap();
        let x = Tensor::from_rows(&[vec![1., -2., 3.], vec![0.5, 0.5, 0.5]]).unwrap();
        assert!(m.forward(&x).unwrap().logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_two_layer_forward() {
        // W1 = [[1,2],[3,-4]], b1 = [0.5,-1], relu; W2 = [[1,-1],[2,0.5]], b2 = [0, 1]
        let arch = Architecture::mlp(2, &[2], 2, Activation::Relu);
        let mut p = arch.param_layout();
        p.get_mut("l0.weight").unwrap().tensor.data_mut().copy_from_slice(&[1., 2., 3., -4.]);
        p.get_mut("l0.bias").unwrap().tensor.data_mut().copy_from_slice(&[0.5, -1.]);
        p.get_mut("l1.weight").unwrap().tensor.data_mut().copy_from_slice(&[1., -1., 2., 0.5]);
        p.get_mut("l1.bias").unwrap().tensor.data_mut().copy_from_slice(&[0., 1.]);
        let m = NetworkModel::new(arch, p).unwrap();
        let r = m.forward(&Tensor::from_rows(&[vec![1., 0.]]).unwrap()).unwrap();
        // hidden: relu([1.5, 2]) = [1.5, 2]; out: [1.5-2, 3+1+1] = [-0.5, 5]
        assert_eq!(r.features.data(), &[1.5, 2.0]);
        assert_eq!(r.logits.data(), &[-0.5, 5.0]);
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let m = NetworkModel::init(Architecture::mlp(3, &[4], 2, Activation::Relu), 1).unwrap();
        let err = m.forward(&Tensor::zeros(vec![2, 5])).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn inconsistent_architecture_rejected() {
        let arch = Architecture {
            input_dim: 3,
            layers: vec![
                LayerSpec::Dense {
                    inputs: 3,
                    outputs: 4,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    inputs: 5,
                    outputs: 2,
                    activation: Activation::Identity,
                },
            ],
        };
        let err = arch.validate().unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }

    #[test]
    fn backward_requires_forward() {
        let mut m = NetworkModel::init(Architecture::mlp(3, &[4], 2, Activation::Relu), 1).unwrap();
        assert!(matches!(m.backward(None, None), Err(Error::NoForwardCache)));
        let x = Tensor::zeros(vec![1, 3]);
        m.forward_cached(&x).unwrap();
        m.backward(None, None).unwrap();
        // cache is consumed
        assert!(matches!(m.backward(None, None), Err(Error::NoForwardCache)));
    }

    #[test]
    fn zero_output_gradient_gives_zero_grads() {
        let mut m = NetworkModel::init(Architecture::mlp(3, &[4, 3], 2, Activation::Tanh), 7).unwrap();
        let x = Tensor::from_rows(&[vec![0.1, 0.2, -0.3]]).unwrap();
        m.forward_cached(&x).unwrap();
        let g = m.backward(Some(&Tensor::zeros(vec![1, 2])), None).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_quadratic_gradient_closed_form() {
        // y = w x, loss = (y - t)^2 with t folded in: dL/dw = 2 (w x - t) x
        let arch = Architecture::mlp(1, &[], 1, Activation::Identity);
        let mut p = arch.param_layout();
        let (w, x, t) = (0.7, 1.3, 0.2);
        p.get_mut("l0.weight").unwrap().tensor.data_mut()[0] = w;
        let mut m = NetworkModel::new(arch, p).unwrap();
        let r = m.forward_cached(&Tensor::new(vec![1, 1], vec![x]).unwrap()).unwrap();
        let dy = 2.0 * (r.logits.data()[0] - t);
        let g = m.backward(Some(&Tensor::new(vec![1, 1], vec![dy]).unwrap()), None).unwrap();
        let gw = g.get("l0.weight").unwrap().tensor.data()[0];
        assert!((gw - 2.0 * (w * x - t) * x).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_values() {
        let (l, _) = cross_entropy(&Tensor::zeros(vec![1, 4]), &[2]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);

        let (l, _) = cross_entropy(&Tensor::from_rows(&[vec![50., -50.]]).unwrap(), &[0]).unwrap();
        assert!(l < 1e-40);

        let (l, _) = cross_entropy(&Tensor::from_rows(&[vec![1., 2.]]).unwrap(), &[1]).unwrap();
        let expected = (1.0 + (-1f64).exp()).ln();
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.3133).abs() < 1e-4);

        assert!(cross_entropy(&Tensor::zeros(vec![1, 2]), &[2]).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_rows(&[vec![3., -1., 0.2], vec![1000., 999., -1000.]]).unwrap();
        let p = softmax(&x);
        for i in 0..2 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_cases() {
        let c = |a: &[f64], b: &[f64]| cosine_similarity(a, b).unwrap();
        assert!((c(&[1., 2., 3.], &[1., 2., 3.]).value - 1.0).abs() < 1e-15);
        assert_eq!(c(&[1., 0.], &[0., 1.]).value, 0.0);
        assert!((c(&[1., 0.], &[1., 1.]).value - 0.5f64.sqrt()).abs() < 1e-15);
        let d = c(&[0., 0.], &[1., 1.]);
        assert!(d.degenerate);
        assert_eq!(d.value, 0.0);
        assert!(cosine_similarity(&[1.], &[1., 2.]).is_err());
    }

    #[test]
    fn adam_zero_gradient_noop() {
        let p0 = Architecture::mlp(3, &[2], 2, Activation::Relu).init_params(3);
        let mut p = p0.clone();
        let mut st = AdamState::new(&p, 0.1);
        st.step(&mut p, &p0.zeros_like()).unwrap();
        assert_eq!(p, p0);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn adam_first_step_is_lr() {
        let arch = Architecture::mlp(1, &[], 1, Activation::Identity);
        let mut p = arch.param_layout();
        let mut g = p.zeros_like();
        g.get_mut("l0.weight").unwrap().tensor.data_mut()[0] = 1.0;
        let mut st = AdamState::new(&p, 0.1);
        st.step(&mut p, &g).unwrap();
        let w = p.get("l0.weight").unwrap().tensor.data()[0];
        // m_hat = v_hat = 1 -> step = 0.1 / (1 + 1e-8)
        assert!((w + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adam_descends_quadratic() {
        // loss = sum (w - 3)^2 over a 1x1 weight and bias
        let arch = Architecture::mlp(1, &[], 1, Activation::Identity);
        let mut p = arch.param_layout();
        let loss = |p: &ParameterSet| p.flatten().iter().map(|w| (w - 3.0).powi(2)).sum::<f64>();
        let mut st = AdamState::new(&p, 0.05);
        let mut prev = loss(&p);
        for _ in 0..2 {
            let mut g = p.clone();
            g.iter_mut()
                .for_each(|(_, e)| e.tensor.data_mut().iter_mut().for_each(|w| *w = 2.0 * (*w - 3.0)));
            st.step(&mut p, &g).unwrap();
            let l = loss(&p);
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn adam_rejects_incongruent() {
        let p = Architecture::mlp(2, &[2], 2, Activation::Relu).init_params(0);
        let q = Architecture::mlp(2, &[3], 2, Activation::Relu).init_params(0);
        let mut st = AdamState::new(&p, 0.1);
        let mut p2 = p.clone();
        assert!(st.step(&mut p2, &q).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let a = Architecture::mlp(5, &[8, 4], 3, Activation::Relu);
        assert_eq!(a.init_params(11), a.init_params(11));
        assert_ne!(a.init_params(11), a.init_params(12));
    }
}
