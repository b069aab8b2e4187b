//! Small feed-forward and convolutional networks with explicit backward passes.
//!
//! Layers own RAW weights. Every forward pass evaluates `tau(W)` first, so the
//! same code serves plain training (`tau` = identity), SAF-aware training, and
//! inference on weights read back from a faulty medium.

mod kernels;

use serde::{Deserialize, Serialize};

use crate::codec::{decode_to_vec, encode_slice, StoredDType};
use crate::error::{Error, Result};
use crate::injector::{inject, FaultConfig};
use crate::numerics::{Rng, StreamDomain, Tensor};
use crate::saf::SafKind;

use kernels::ConvGeom;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        out: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        saf: Option<SafKind>,
    },
    /// 3x3 kernel, zero padding 1.
    Conv2d {
        out_ch: usize,
        stride: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        saf: Option<SafKind>,
    },
    Relu,
    #[serde(rename = "maxpool2")]
    MaxPool2,
    Flatten,
}

impl LayerSpec {
    pub fn is_weighted(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    fn saf_override(&self) -> Option<SafKind> {
        match self {
            LayerSpec::Dense { saf, .. } | LayerSpec::Conv2d { saf, .. } => *saf,
            _ => None,
        }
    }
}

/// Architecture descriptor: everything needed to rebuild a model except its
/// parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    /// Per-sample input shape, `[channels, height, width]`.
    pub input_shape: Vec<usize>,
    pub class_count: usize,
    /// Default SAF for every weighted layer without an override.
    pub saf: SafKind,
    pub layers: Vec<LayerSpec>,
}

impl ArchSpec {
    /// conv3x3x16, relu, pool, conv3x3x32, relu, pool, flatten, dense128, relu, dense(classes)
    pub fn cnn_s(input_shape: [usize; 3], class_count: usize, saf: SafKind) -> Self {
        ArchSpec {
            name: "cnn-s".into(),
            input_shape: input_shape.to_vec(),
            class_count,
            saf,
            layers: vec![
                LayerSpec::Conv2d { out_ch: 16, stride: 1, saf: None },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Conv2d { out_ch: 32, stride: 1, saf: None },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Flatten,
                LayerSpec::Dense { out: 128, saf: None },
                LayerSpec::Relu,
                LayerSpec::Dense { out: class_count, saf: None },
            ],
        }
    }

    /// flatten, then dense+relu per hidden width, then the classifier.
    pub fn mlp(input_shape: &[usize], hidden: &[usize], class_count: usize, saf: SafKind) -> Self {
        let mut layers = vec![LayerSpec::Flatten];
        for &h in hidden {
            layers.push(LayerSpec::Dense { out: h, saf: None });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Dense { out: class_count, saf: None });
        ArchSpec {
            name: "mlp".into(),
            input_shape: input_shape.to_vec(),
            class_count,
            saf,
            layers,
        }
    }

    pub fn layer_saf(&self, index: usize) -> SafKind {
        self.layers[index].saf_override().unwrap_or(self.saf)
    }

    /// Sets an explicit SAF on one weighted layer (e.g. `SafKind::None` to exempt it).
    pub fn set_layer_saf(&mut self, index: usize, kind: Option<SafKind>) -> Result<()> {
        match self.layers.get_mut(index) {
            Some(LayerSpec::Dense { saf, .. }) | Some(LayerSpec::Conv2d { saf, .. }) => {
                *saf = kind;
                Ok(())
            }
            _ => Err(Error::Config(format!("layer {index} has no weights"))),
        }
    }

    /// Per-sample activation shapes at each layer boundary (`layers.len() + 1` entries).
    pub fn activation_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = shapes.last().unwrap();
            let next = match (layer, cur.as_slice()) {
                (LayerSpec::Dense { out, .. }, [_]) => vec![*out],
                (LayerSpec::Conv2d { out_ch, stride, .. }, &[c, h, w]) => {
                    if *stride == 0 || *stride > 2 {
                        return Err(Error::Config(format!("layer {i}: conv stride must be 1 or 2")));
                    }
                    let g = ConvGeom { in_ch: c, out_ch: *out_ch, in_h: h, in_w: w, stride: *stride };
                    vec![*out_ch, g.out_h(), g.out_w()]
                }
                (LayerSpec::MaxPool2, &[c, h, w]) if h >= 2 && w >= 2 => vec![c, h / 2, w / 2],
                (LayerSpec::Relu, s) => s.to_vec(),
                (LayerSpec::Flatten, s) => vec![s.iter().product()],
                (layer, s) => {
                    return Err(Error::dim(format!("layer {i} ({layer:?}) cannot take input shape {s:?}")))
                }
            };
            if next.contains(&0) {
                return Err(Error::dim(format!("layer {i} produces an empty activation")));
            }
            shapes.push(next);
        }
        if shapes.last().unwrap() != &[self.class_count] {
            return Err(Error::dim(format!(
                "network ends in {:?}, expected [{}]",
                shapes.last().unwrap(),
                self.class_count
            )));
        }
        Ok(shapes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: ArchSpec,
    shapes: Vec<Vec<usize>>,
    /// Aligned with `arch.layers`; `Some` for weighted layers.
    params: Vec<Option<Params>>,
}

/// Per-layer gradients, aligned with the model's layers.
pub type Gradients = Vec<Option<Params>>;

impl Model {
    /// Fan-in scaled uniform initialisation, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases.
    pub fn init(arch: ArchSpec, seed: u64) -> Result<Self> {
        let shapes = arch.activation_shapes()?;
        let mut rng = Rng::stream(seed, StreamDomain::Init, 0);
        let params = arch
            .layers
            .iter()
            .zip(&shapes)
            .map(|(layer, input)| {
                let (wshape, fan_in) = match layer {
                    LayerSpec::Dense { out, .. } => (vec![*out, input[0]], input[0]),
                    LayerSpec::Conv2d { out_ch, .. } => (vec![*out_ch, input[0], 3, 3], input[0] * 9),
                    _ => return None,
                };
                let bound = (1.0 / fan_in as f32).sqrt();
                let mut fill = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.range_f32(-bound, bound)).collect() };
                let n: usize = wshape.iter().product();
                let weight = Tensor::new(wshape.clone(), fill(n)).unwrap();
                let bias = Tensor::from_vec(fill(wshape[0]));
                Some(Params { weight, bias })
            })
            .collect();
        Ok(Model { arch, shapes, params })
    }

    /// Builds a model from explicit parameters, validating every shape.
    pub fn from_parts(arch: ArchSpec, params: Vec<Option<Params>>) -> Result<Self> {
        let template = Model::init(arch, 0)?;
        if params.len() != template.params.len() {
            return Err(Error::dim(format!(
                "expected parameters for {} layers, got {}",
                template.params.len(),
                params.len()
            )));
        }
        for (i, (want, got)) in template.params.iter().zip(&params).enumerate() {
            match (want, got) {
                (None, None) => {}
                (Some(w), Some(g)) if w.weight.shape() == g.weight.shape() && w.bias.shape() == g.bias.shape() => {}
                _ => return Err(Error::dim(format!("layer {i}: parameter shapes do not match the architecture"))),
            }
        }
        Ok(Model { params, ..template })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn class_count(&self) -> usize {
        self.arch.class_count
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.arch.input_shape
    }

    pub fn params(&self) -> &[Option<Params>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Params> {
        self.params.iter_mut().flatten()
    }

    /// Switches the default SAF (per-layer overrides stay in force).
    pub fn set_saf(&mut self, kind: SafKind) {
        self.arch.saf = kind;
    }

    pub fn set_layer_saf(&mut self, index: usize, kind: Option<SafKind>) -> Result<()> {
        self.arch.set_layer_saf(index, kind)
    }

    pub fn weight_count(&self) -> usize {
        self.params.iter().flatten().map(|p| p.weight.len()).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().flatten().map(|p| p.weight.len() + p.bias.len()).sum()
    }

    /// `tau(W)` for every weighted layer.
    pub fn effective_weights(&self) -> Vec<Option<Tensor>> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                p.as_ref()
                    .map(|p| crate::saf::saf_forward(self.arch.layer_saf(i), &p.weight))
            })
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        if x.shape().len() < 2 || x.shape()[1..] != self.arch.input_shape[..] {
            return Err(Error::dim(format!(
                "input {:?} does not match [batch, {:?}]",
                x.shape(),
                self.arch.input_shape
            )));
        }
        Ok(x.shape()[0])
    }

    /// Logits `[batch, class_count]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let eff = self.effective_weights();
        self.forward_with(&eff, x)
    }

    /// Forward pass with precomputed effective weights (see [`Model::effective_weights`]).
    pub fn forward_with(&self, effective: &[Option<Tensor>], x: &Tensor) -> Result<Tensor> {
        let batch = self.check_input(x)?;
        let mut act = x.data().to_vec();
        for i in 0..self.arch.layers.len() {
            act = self.layer_forward(i, effective, act, batch, None);
        }
        Tensor::new(vec![batch, self.arch.class_count], act)
    }

    /// Predicted class per sample: highest logit, lowest index on ties; NaN
    /// logits never win, and an all-NaN row predicts class 0.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward(x)?;
        Ok(argmax_rows(&logits))
    }

    fn layer_forward(
        &self,
        i: usize,
        effective: &[Option<Tensor>],
        x: Vec<f32>,
        batch: usize,
        pool_arg: Option<&mut Vec<u32>>,
    ) -> Vec<f32> {
        let input = &self.shapes[i];
        match &self.arch.layers[i] {
            LayerSpec::Dense { out, .. } => {
                let w = effective[i].as_ref().unwrap();
                let b = &self.params[i].as_ref().unwrap().bias;
                kernels::dense_forward(w.data(), b.data(), &x, batch, input[0], *out)
            }
            LayerSpec::Conv2d { out_ch, stride, .. } => {
                let g = ConvGeom { in_ch: input[0], out_ch: *out_ch, in_h: input[1], in_w: input[2], stride: *stride };
                let w = effective[i].as_ref().unwrap();
                let b = &self.params[i].as_ref().unwrap().bias;
                kernels::conv_forward(&g, w.data(), b.data(), &x, batch)
            }
            LayerSpec::Relu => x.into_iter().map(|v| if v < 0.0 { 0.0 } else { v }).collect(),
            LayerSpec::MaxPool2 => {
                let (y, arg) = kernels::maxpool_forward(&x, batch * input[0], input[1], input[2]);
                if let Some(slot) = pool_arg {
                    *slot = arg;
                }
                y
            }
            LayerSpec::Flatten => x,
        }
    }

    /// Mean softmax cross-entropy and its gradient with respect to the RAW
    /// parameters. Weight gradients carry the `tau'` factor; bias gradients do not.
    pub fn backward(&self, x: &Tensor, labels: &[usize]) -> Result<(f32, Gradients)> {
        self.backward_with_predictions(x, labels).map(|(loss, grads, _)| (loss, grads))
    }

    /// Like [`Model::backward`], also returning the argmax of the logits
    /// computed on the way.
    pub fn backward_with_predictions(&self, x: &Tensor, labels: &[usize]) -> Result<(f32, Gradients, Vec<usize>)> {
        let batch = self.check_input(x)?;
        if labels.len() != batch {
            return Err(Error::input(format!("{} labels for a batch of {batch}", labels.len())));
        }
        let eff = self.effective_weights();
        let n_layers = self.arch.layers.len();
        let mut inputs: Vec<Vec<f32>> = Vec::with_capacity(n_layers);
        let mut pool_args: Vec<Vec<u32>> = vec![Vec::new(); n_layers];
        let mut act = x.data().to_vec();
        for (i, arg) in pool_args.iter_mut().enumerate() {
            let next = self.layer_forward(i, &eff, act.clone(), batch, Some(arg));
            inputs.push(act);
            act = next;
        }
        let logits = Tensor::new(vec![batch, self.arch.class_count], act)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, labels)?;
        let predictions = argmax_rows(&logits);

        let first_weighted = self.arch.layers.iter().position(LayerSpec::is_weighted).unwrap_or(n_layers);
        let mut grads: Gradients = vec![None; n_layers];
        let mut dy = dlogits.into_data();
        for i in (0..n_layers).rev() {
            let input = &self.shapes[i];
            let x_in = &inputs[i];
            let need_dx = i > first_weighted;
            dy = match &self.arch.layers[i] {
                LayerSpec::Dense { out, .. } => {
                    let w = eff[i].as_ref().unwrap();
                    let mut gw = Tensor::zeros(w.shape());
                    let mut gb = Tensor::zeros(&[*out]);
                    let dx = kernels::dense_backward(
                        w.data(),
                        x_in,
                        &dy,
                        gw.data_mut(),
                        gb.data_mut(),
                        (batch, input[0], *out),
                        need_dx,
                    );
                    grads[i] = Some(self.raw_grads(i, gw, gb));
                    dx
                }
                LayerSpec::Conv2d { out_ch, stride, .. } => {
                    let g = ConvGeom { in_ch: input[0], out_ch: *out_ch, in_h: input[1], in_w: input[2], stride: *stride };
                    let w = eff[i].as_ref().unwrap();
                    let mut gw = Tensor::zeros(w.shape());
                    let mut gb = Tensor::zeros(&[*out_ch]);
                    let dx = kernels::conv_backward(&g, w.data(), x_in, &dy, gw.data_mut(), gb.data_mut(), need_dx);
                    grads[i] = Some(self.raw_grads(i, gw, gb));
                    dx
                }
                LayerSpec::Relu => x_in.iter().zip(&dy).map(|(&v, &d)| if v > 0.0 { d } else { 0.0 }).collect(),
                LayerSpec::MaxPool2 => {
                    let mut dx = vec![0.0f32; x_in.len()];
                    for (&src, &d) in pool_args[i].iter().zip(&dy) {
                        dx[src as usize] += d;
                    }
                    dx
                }
                LayerSpec::Flatten => dy,
            };
            if i <= first_weighted && grads[i].is_some() {
                break;
            }
        }
        Ok((loss, grads, predictions))
    }

    fn raw_grads(&self, i: usize, grad_eff: Tensor, grad_bias: Tensor) -> Params {
        let kind = self.arch.layer_saf(i);
        let raw = &self.params[i].as_ref().unwrap().weight;
        let weight = if kind.is_identity() {
            grad_eff
        } else {
            crate::saf::saf_backward(kind, raw, &grad_eff).expect("shapes agree by construction")
        };
        Params { weight, bias: grad_bias }
    }

    /// Raw weights of every weighted layer, concatenated in layer order.
    pub fn flat_weights(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.weight_count());
        for p in self.params.iter().flatten() {
            out.extend_from_slice(p.weight.data());
        }
        out
    }

    /// Replaces all raw weights from a buffer laid out like [`Model::flat_weights`].
    pub fn with_flat_weights(&self, flat: &[f32]) -> Result<Model> {
        if flat.len() != self.weight_count() {
            return Err(Error::dim(format!("{} weights for a model with {}", flat.len(), self.weight_count())));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for p in out.params.iter_mut().flatten() {
            let n = p.weight.len();
            p.weight.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }

    /// Deploy-time read path: encode the raw weights as `dtype`, flip bits per
    /// `cfg` over the concatenated buffer, and decode into a new model. Biases
    /// are kept in FP32 and are not faulted.
    pub fn read_deployed(&self, dtype: StoredDType, cfg: &FaultConfig) -> Result<(Model, u64)> {
        cfg.validate()?;
        let stored = encode_slice(&self.flat_weights(), dtype);
        let (faulty, flips) = inject(&stored, cfg);
        Ok((self.with_flat_weights(&decode_to_vec(&faulty))?, flips))
    }
}

/// Loss and `d loss / d logits` for mean softmax cross-entropy.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    let &[batch, classes] = logits.shape() else {
        return Err(Error::dim(format!("logits must be 2-D, got {:?}", logits.shape())));
    };
    if labels.len() != batch {
        return Err(Error::input(format!("{} labels for {batch} rows", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::input(format!("label {bad} outside 0..{classes}")));
    }
    let mut grad = Vec::with_capacity(batch * classes);
    let mut loss = 0.0f64;
    let scale = 1.0 / batch.max(1) as f32;
    for (row, &label) in logits.data().chunks_exact(classes.max(1)).zip(labels) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let sum: f32 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += (log_sum - row[label]) as f64;
        for (k, &z) in row.iter().enumerate() {
            let p = (z - log_sum).exp();
            grad.push((p - if k == label { 1.0 } else { 0.0 }) * scale);
        }
    }
    Ok(((loss / batch.max(1) as f64) as f32, Tensor::new(vec![batch, classes], grad)?))
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let classes = logits.shape().get(1).copied().unwrap_or(1).max(1);
    logits
        .data()
        .chunks_exact(classes)
        .map(|row| {
            let mut best = 0;
            let mut best_v = f32::NAN;
            for (k, &v) in row.iter().enumerate() {
                if v > best_v || (best_v.is_nan() && !v.is_nan()) {
                    best = k;
                    best_v = v;
                }
            }
            best
        })
        .collect()
}
