//! The fully convolutional segmentation network.
//!
//! Architecture, for `depth` encoder stages and `F = base_filters`:
//!
//! ```text
//! stem    3x3 stride-1 conv (pad 1), in_channels -> F, ReLU
//! enc d   2x2 stride-2 conv,         F*2^(d-1) -> F*2^d, ReLU   (halves extent)
//! dec d   2x nearest upsample, concat the encoder activation of the same
//!         extent, 3x3 stride-1 conv (pad 1), 3*F*2^(d-1) -> F*2^(d-1), ReLU
//! head    1x1 conv, F -> num_classes (logits)
//! ```
//!
//! Every operation is one of the four layer primitives; gradients are the
//! hand-derived backward passes from [`crate::tensor`].

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::bytes::ByteReader;
use crate::error::{Error, Result};
use crate::label::LabelMap;
use crate::raster::Raster;
use crate::rng::{stream, substream};
use crate::tensor::{
    conv2d_backward, conv2d_forward, conv_mac_count, relu, relu_backward, sgd_step,
    softmax_cross_entropy, upsample_nearest, upsample_nearest_backward, ConvParams, MacCounter,
    Tensor,
};

pub const GFM1_MAGIC: &[u8; 4] = b"GFM1";
pub const GFM1_VERSION: u32 = 1;

/// Hyperparameters of one model/training run.
#[derive(Debug, Clone, PartialEq)]
pub struct FcnConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub base_filters: usize,
    /// Number of 2x downsampling stages; input extents must divide 2^depth.
    pub depth: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    pub l1: f64,
    pub seed: u64,
}

impl Default for FcnConfig {
    fn default() -> FcnConfig {
        FcnConfig {
            in_channels: 5,
            num_classes: 4,
            base_filters: 16,
            depth: 2,
            learning_rate: 0.03,
            batch_size: 4,
            epochs: 10,
            l2: 0.0,
            l1: 0.0,
            seed: 42,
        }
    }
}

impl FcnConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("in_channels", self.in_channels),
            ("num_classes", self.num_classes),
            ("base_filters", self.base_filters),
            ("depth", self.depth),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [("l2", self.l2), ("l1", self.l1)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be non-negative and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Stem,
    Encoder,
    Decoder,
    Head,
}

impl LayerKind {
    pub fn to_u8(self) -> u8 {
        match self {
            LayerKind::Stem => 0,
            LayerKind::Encoder => 1,
            LayerKind::Decoder => 2,
            LayerKind::Head => 3,
        }
    }

    pub fn from_u8(v: u8) -> Option<LayerKind> {
        match v {
            0 => Some(LayerKind::Stem),
            1 => Some(LayerKind::Encoder),
            2 => Some(LayerKind::Decoder),
            3 => Some(LayerKind::Head),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub params: ConvParams,
}

/// Per-layer parameter gradients, aligned with [`FcnModel::layers`].
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weight_grad: Tensor,
    pub bias_grad: Tensor,
}

/// Gradients for every parameter tensor of a model.
#[derive(Debug, Clone)]
pub struct GradientTape {
    pub layers: Vec<LayerGrads>,
}

impl GradientTape {
    pub fn zeros_like(model: &FcnModel) -> GradientTape {
        GradientTape {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight_grad: Tensor::zeros(l.params.weights.shape()),
                    bias_grad: Tensor::zeros(l.params.bias.shape()),
                })
                .collect(),
        }
    }

    /// `self += a * other`, layer by layer.
    pub fn axpy(&mut self, a: f64, other: &GradientTape) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::ShapeMismatch(
                "gradient tapes with different layer counts".into(),
            ));
        }
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            mine.weight_grad.axpy(a, &theirs.weight_grad)?;
            mine.bias_grad.axpy(a, &theirs.bias_grad)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        for layer in &mut self.layers {
            layer.weight_grad.scale(a);
            layer.bias_grad.scale(a);
        }
    }
}

/// Layer geometry derived from a config: `(kind, out_c, in_c, k, stride, pad)`.
fn layer_plan(config: &FcnConfig) -> Vec<(LayerKind, usize, usize, usize, usize, usize)> {
    let f = config.base_filters;
    let mut plan = Vec::with_capacity(2 * config.depth + 2);
    plan.push((LayerKind::Stem, f, config.in_channels, 3, 1, 1));
    for d in 1..=config.depth {
        plan.push((LayerKind::Encoder, f << d, f << (d - 1), 2, 2, 0));
    }
    for d in (1..=config.depth).rev() {
        plan.push((LayerKind::Decoder, f << (d - 1), 3 * (f << (d - 1)), 3, 1, 1));
    }
    plan.push((LayerKind::Head, config.num_classes, f, 1, 1, 0));
    plan
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcnModel {
    pub config: FcnConfig,
    /// Execution order: stem, encoders (shallow to deep), decoders (deep to
    /// shallow), head.
    pub layers: Vec<Layer>,
}

/// Build a model with fan-in-scaled uniform weights drawn from per-layer
/// substreams of the config seed; biases start at zero.
pub fn build_fcn(config: &FcnConfig) -> Result<FcnModel> {
    config.validate()?;
    let mut layers = Vec::new();
    for (idx, (kind, out_c, in_c, k, stride, pad)) in layer_plan(config).into_iter().enumerate() {
        let mut rng = substream(config.seed, &[stream::WEIGHT_INIT, idx as u64]);
        let fan_in = (in_c * k * k) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let n = out_c * in_c * k * k;
        let weights = Tensor::from_vec(
            &[out_c, in_c, k, k],
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
        )?;
        let bias = Tensor::zeros(&[out_c]);
        layers.push(Layer {
            kind,
            params: ConvParams::new(weights, bias, stride, pad)?,
        });
    }
    Ok(FcnModel {
        config: config.clone(),
        layers,
    })
}

/// Activations cached by a forward pass for the backward walk.
struct ForwardCache {
    /// Pre-activation of stem, encoders and decoders, in layer order.
    preacts: Vec<Tensor>,
    /// Conv inputs, in layer order (concatenated inputs for decoders).
    inputs: Vec<Tensor>,
    logits: Tensor,
}

fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let (ca, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let cb = b.shape()[0];
    let mut data = Vec::with_capacity((ca + cb) * h * w);
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec(&[ca + cb, h, w], data).expect("concat shapes verified by caller")
}

fn split_channels(t: &Tensor, first: usize) -> (Tensor, Tensor) {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    debug_assert!(first > 0 && first < c);
    let hw = h * w;
    let a = Tensor::from_vec(&[first, h, w], t.data()[..first * hw].to_vec()).unwrap();
    let b = Tensor::from_vec(&[c - first, h, w], t.data()[first * hw..].to_vec()).unwrap();
    (a, b)
}

impl FcnModel {
    pub fn depth(&self) -> usize {
        self.config.depth
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let shape = input.shape();
        if shape.len() != 3 || shape[0] != self.config.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "model expects [{}, H, W] input, got {:?}",
                self.config.in_channels, shape
            )));
        }
        let div = 1usize << self.config.depth;
        if shape[1] % div != 0 || shape[2] % div != 0 {
            return Err(Error::InvalidArgument(format!(
                "input extent {}x{} not divisible by 2^depth = {div}",
                shape[1], shape[2]
            )));
        }
        Ok(())
    }

    fn conv_counted(
        &self,
        input: &Tensor,
        params: &ConvParams,
        macs: &mut MacCounter,
    ) -> Result<Tensor> {
        let out = conv2d_forward(input, params)?;
        macs.add(conv_mac_count(params, out.shape()[1], out.shape()[2]));
        Ok(out)
    }

    fn forward_cached(&self, input: &Tensor, macs: &mut MacCounter) -> Result<ForwardCache> {
        self.check_input(input)?;
        let depth = self.config.depth;
        let mut preacts = Vec::with_capacity(self.layers.len() - 1);
        let mut inputs = Vec::with_capacity(self.layers.len());

        // stem + encoders; `acts[d]` has extent H/2^d
        let mut acts: Vec<Tensor> = Vec::with_capacity(depth + 1);
        let mut current = input.clone();
        for layer in &self.layers[..=depth] {
            inputs.push(current.clone());
            let z = self.conv_counted(&current, &layer.params, macs)?;
            let a = relu(&z);
            preacts.push(z);
            acts.push(a.clone());
            current = a;
        }

        // decoders, deep to shallow: layer index depth + (depth - d) + 1
        let mut x = acts[depth].clone();
        for d in (1..=depth).rev() {
            let layer = &self.layers[depth + (depth - d) + 1];
            let up = upsample_nearest(&x, 2)?;
            let cat = concat_channels(&up, &acts[d - 1]);
            inputs.push(cat.clone());
            let z = self.conv_counted(&cat, &layer.params, macs)?;
            x = relu(&z);
            preacts.push(z);
        }

        // head (no activation)
        let head = &self.layers[2 * depth + 1];
        inputs.push(x.clone());
        let logits = self.conv_counted(&x, &head.params, macs)?;
        Ok(ForwardCache {
            preacts,
            inputs,
            logits,
        })
    }

    /// Class logits `[num_classes, H, W]`; the counter advances by the exact
    /// conv multiply-accumulate counts.
    pub fn forward(&self, input: &Tensor, macs: &mut MacCounter) -> Result<Tensor> {
        Ok(self.forward_cached(input, macs)?.logits)
    }

    fn backward_from_cache(
        &self,
        cache: &ForwardCache,
        logit_grad: &Tensor,
        macs: &mut MacCounter,
    ) -> Result<GradientTape> {
        let depth = self.config.depth;
        let mut tape = GradientTape::zeros_like(self);
        let backward_conv = |layer_idx: usize,
                             upstream: &Tensor,
                             tape: &mut GradientTape,
                             macs: &mut MacCounter|
         -> Result<Tensor> {
            let layer = &self.layers[layer_idx];
            let conv_input = &cache.inputs[layer_idx];
            let grads = conv2d_backward(conv_input, &layer.params, upstream)?;
            macs.add(2 * conv_mac_count(&layer.params, upstream.shape()[1], upstream.shape()[2]));
            tape.layers[layer_idx].weight_grad = grads.weight_grad;
            tape.layers[layer_idx].bias_grad = grads.bias_grad;
            Ok(grads.input_grad)
        };

        // head
        let head_idx = 2 * depth + 1;
        let mut g = backward_conv(head_idx, logit_grad, &mut tape, macs)?;

        // decoders, shallow to deep; collect the skip-path gradients
        let f = self.config.base_filters;
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; depth];
        for d in 1..=depth {
            let layer_idx = depth + (depth - d) + 1;
            g = relu_backward(&cache.preacts[layer_idx], &g)?;
            let cat_grad = backward_conv(layer_idx, &g, &mut tape, macs)?;
            let (up_grad, skip_grad) = split_channels(&cat_grad, f << d);
            skip_grads[d - 1] = Some(skip_grad);
            g = upsample_nearest_backward(&up_grad, 2)?;
        }

        // encoders, deep to shallow, folding in the skip contributions
        for d in (1..=depth).rev() {
            g = relu_backward(&cache.preacts[d], &g)?;
            let mut input_grad = backward_conv(d, &g, &mut tape, macs)?;
            input_grad.axpy(1.0, skip_grads[d - 1].as_ref().expect("set above"))?;
            g = input_grad;
        }

        // stem
        g = relu_backward(&cache.preacts[0], &g)?;
        backward_conv(0, &g, &mut tape, macs)?;

        Ok(tape)
    }

    /// Mean cross-entropy of one tile and the gradients of every parameter.
    /// The counter advances by the forward count plus twice that for the
    /// backward sweep.
    pub fn loss_and_gradients(
        &self,
        input: &Tensor,
        labels: &LabelMap,
        macs: &mut MacCounter,
    ) -> Result<(f64, GradientTape)> {
        let cache = self.forward_cached(input, macs)?;
        let (loss, logit_grad) = softmax_cross_entropy(&cache.logits, labels)?;
        let tape = self.backward_from_cache(&cache, &logit_grad, macs)?;
        Ok((loss, tape))
    }

    /// Parameter gradients of `sum(output_grad .* logits)` for an arbitrary
    /// output gradient.
    pub fn output_gradients(
        &self,
        input: &Tensor,
        output_grad: &Tensor,
        macs: &mut MacCounter,
    ) -> Result<GradientTape> {
        let cache = self.forward_cached(input, macs)?;
        if output_grad.shape() != cache.logits.shape() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?} does not match logits {:?}",
                output_grad.shape(),
                cache.logits.shape()
            )));
        }
        self.backward_from_cache(&cache, output_grad, macs)
    }

    /// One SGD step over every layer from an (already averaged) tape.
    pub fn apply_gradients(&mut self, tape: &GradientTape) -> Result<()> {
        if tape.layers.len() != self.layers.len() {
            return Err(Error::ShapeMismatch(
                "gradient tape does not match model layers".into(),
            ));
        }
        let (lr, l2, l1) = (self.config.learning_rate, self.config.l2, self.config.l1);
        for (layer, grads) in self.layers.iter_mut().zip(&tape.layers) {
            sgd_step(
                &mut layer.params,
                &grads.weight_grad,
                &grads.bias_grad,
                lr,
                l2,
                l1,
            )?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.params.param_count()).sum()
    }
}

/// Mirror an out-of-range index back into `[0, n)`, excluding the edge
/// sample from the reflection (n == 1 clamps).
fn reflect_index(idx: usize, n: usize) -> usize {
    if idx < n {
        return idx;
    }
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = idx % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Per-pixel argmax prediction; ties break toward the lowest class index.
/// Rasters whose extents do not divide `2^depth` are reflect-padded on the
/// bottom/right and the output is cropped back.
pub fn predict(model: &FcnModel, fused: &Raster) -> Result<LabelMap> {
    if fused.channels() != model.config.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "raster has {} channels but the model expects {}",
            fused.channels(),
            model.config.in_channels
        )));
    }
    let (w, h, c_in) = (fused.width(), fused.height(), fused.channels());
    let div = 1usize << model.config.depth;
    let pw = w.div_ceil(div) * div;
    let ph = h.div_ceil(div) * div;

    let input = if pw == w && ph == h {
        fused.to_tensor()
    } else {
        let mut data = Vec::with_capacity(c_in * ph * pw);
        for c in 0..c_in {
            let plane = fused.plane(c);
            for y in 0..ph {
                let sy = reflect_index(y, h);
                for x in 0..pw {
                    let sx = reflect_index(x, w);
                    data.push(plane[sy * w + sx] as f64);
                }
            }
        }
        Tensor::from_vec(&[c_in, ph, pw], data)?
    };

    let mut macs = MacCounter::new();
    let logits = model.forward(&input, &mut macs)?;
    let classes = model.config.num_classes;
    let mut ids = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for cls in 0..classes {
                let v = logits.plane(cls)[y * pw + x];
                if v > best_v {
                    best_v = v;
                    best = cls;
                }
            }
            ids[y * w + x] = best as u8;
        }
    }
    LabelMap::from_ids(w, h, classes, ids)
}

// --- GFM1 model files ------------------------------------------------------
//
// magic | u32 version | u32 in_channels | u32 num_classes | u32 depth |
// u32 base_filters | u64 seed | per layer: u8 kind, u32x4 weight shape,
// f32 weights, f32 biases. Weights are stored 32-bit and widened on load.

pub fn model_to_bytes(model: &FcnModel) -> Vec<u8> {
    let c = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(GFM1_MAGIC);
    out.extend_from_slice(&GFM1_VERSION.to_le_bytes());
    out.extend_from_slice(&(c.in_channels as u32).to_le_bytes());
    out.extend_from_slice(&(c.num_classes as u32).to_le_bytes());
    out.extend_from_slice(&(c.depth as u32).to_le_bytes());
    out.extend_from_slice(&(c.base_filters as u32).to_le_bytes());
    out.extend_from_slice(&c.seed.to_le_bytes());
    for layer in &model.layers {
        out.push(layer.kind.to_u8());
        for &dim in layer.params.weights.shape() {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &wv in layer.params.weights.data() {
            out.extend_from_slice(&(wv as f32).to_le_bytes());
        }
        for &bv in layer.params.bias.data() {
            out.extend_from_slice(&(bv as f32).to_le_bytes());
        }
    }
    out
}

pub fn model_from_bytes(buf: &[u8]) -> Result<FcnModel> {
    let mut r = ByteReader::new(buf);
    r.expect_magic(GFM1_MAGIC)?;
    let v_off = r.pos();
    let version = r.u32("version")?;
    if version != GFM1_VERSION {
        return Err(Error::InvalidField {
            offset: v_off,
            what: format!("unsupported version {version}"),
        });
    }
    let header_off = r.pos();
    let in_channels = r.u32("in_channels")? as usize;
    let num_classes = r.u32("num_classes")? as usize;
    let depth = r.u32("depth")? as usize;
    let base_filters = r.u32("base_filters")? as usize;
    let seed = r.u64("seed")?;
    let config = FcnConfig {
        in_channels,
        num_classes,
        depth,
        base_filters,
        seed,
        ..FcnConfig::default()
    };
    config.validate().map_err(|e| Error::InvalidField {
        offset: header_off,
        what: format!("bad header: {e}"),
    })?;

    let mut layers = Vec::new();
    for (kind, out_c, in_c, k, stride, pad) in layer_plan(&config) {
        let kind_off = r.pos();
        let file_kind = LayerKind::from_u8(r.u8("layer kind")?).ok_or_else(|| Error::InvalidField {
            offset: kind_off,
            what: "unknown layer kind".into(),
        })?;
        if file_kind != kind {
            return Err(Error::InvalidField {
                offset: kind_off,
                what: format!("layer kind {:?} where {:?} was expected", file_kind, kind),
            });
        }
        let shape_off = r.pos();
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32("weight shape")? as usize;
        }
        if dims != [out_c, in_c, k, k] {
            return Err(Error::InvalidField {
                offset: shape_off,
                what: format!(
                    "weight shape {dims:?} does not match expected [{out_c}, {in_c}, {k}, {k}]"
                ),
            });
        }
        let n = out_c * in_c * k * k;
        let mut weights = Vec::with_capacity(n);
        for _ in 0..n {
            weights.push(r.f32("weights")? as f64);
        }
        let mut bias = Vec::with_capacity(out_c);
        for _ in 0..out_c {
            bias.push(r.f32("bias")? as f64);
        }
        layers.push(Layer {
            kind,
            params: ConvParams::new(
                Tensor::from_vec(&[out_c, in_c, k, k], weights)?,
                Tensor::from_vec(&[out_c], bias)?,
                stride,
                pad,
            )?,
        });
    }
    r.finish()?;
    Ok(FcnModel { config, layers })
}

pub fn save_model<P: AsRef<Path>>(model: &FcnModel, path: P) -> Result<()> {
    fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model<P: AsRef<Path>>(path: P) -> Result<FcnModel> {
    let buf = fs::read(path)?;
    model_from_bytes(&buf)
}
