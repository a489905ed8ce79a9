//! ResUNet: a residual-network encoder under a U-Net decoder.
//!
//! Encoder stage `k` halves the resolution `k` times:
//!
//! | stage | module                 | channels | stride |
//! |-------|------------------------|----------|--------|
//! | 1     | conv1, bn1, relu       | 64       | 2      |
//! | 2     | maxpool, layer1        | 64       | 4      |
//! | 3     | layer2                 | 128      | 8      |
//! | 4     | layer3                 | 256      | 16     |
//! | 5     | layer4                 | 512      | 32     |
//!
//! Decoder block `i` upsamples with a stride-2 transposed convolution, concatenates
//! encoder stage `depth - 1 - i` (none for the last block), and applies two 3x3
//! conv/BN/ReLU layers. A 3x3 convolution projects to the output logits.
//!
//! Encoder parameters use the torchvision names under an `encoder.` prefix
//! (`encoder.layer2.0.downsample.1.running_var`, ...), so torchvision ResNet
//! checkpoints exported to safetensors load directly.

use candle_core::{DType, Device, Module, ModuleT, Tensor, Var, D};
use candle_nn::{
    batch_norm, conv2d, conv2d_no_bias, conv_transpose2d, BatchNorm, BatchNormConfig, Conv2d,
    Conv2dConfig, ConvTranspose2d, ConvTranspose2dConfig, VarBuilder, VarMap,
};
use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MAX_DEPTH: usize = 5;
const ENCODER_CHANNELS: [usize; 5] = [64, 64, 128, 256, 512];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder_depth: usize,
    /// `resnet18` or `resnet34`.
    pub encoder_variant: String,
    pub decoder_channels: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub use_pretrained: bool,
    /// safetensors file with torchvision-named encoder weights.
    pub pretrained_weights: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder_depth: 5,
            encoder_variant: "resnet34".into(),
            decoder_channels: vec![256, 128, 64, 32, 16],
            in_channels: 3,
            out_channels: 1,
            use_pretrained: false,
            pretrained_weights: None,
        }
    }
}

impl ModelConfig {
    /// Small configuration for quick experiments on modest hardware.
    pub fn compact(encoder_depth: usize) -> Self {
        let all = [128, 64, 32, 16, 16];
        ModelConfig {
            encoder_depth,
            encoder_variant: "resnet18".into(),
            decoder_channels: all[MAX_DEPTH - encoder_depth..].to_vec(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        blocks_per_stage(&self.encoder_variant)?;
        if !(1..=MAX_DEPTH).contains(&self.encoder_depth) {
            return Err(Error::Config(format!(
                "encoder_depth must lie in 1..={MAX_DEPTH}, got {}",
                self.encoder_depth
            )));
        }
        if self.decoder_channels.len() != self.encoder_depth {
            return Err(Error::Config(format!(
                "decoder_channels has {} entries but encoder_depth is {}",
                self.decoder_channels.len(),
                self.encoder_depth
            )));
        }
        if self.decoder_channels.contains(&0) || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.use_pretrained && self.pretrained_weights.is_none() {
            return Err(Error::Config(
                "use_pretrained is set but pretrained_weights names no file".into(),
            ));
        }
        Ok(())
    }

    /// Spatial sizes must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.encoder_depth
    }
}

fn blocks_per_stage(variant: &str) -> Result<[usize; 4]> {
    match variant {
        "resnet18" => Ok([2, 2, 2, 2]),
        "resnet34" => Ok([3, 4, 6, 3]),
        other => Err(Error::UnknownEncoder(other.to_string())),
    }
}

fn conv3x3(c_in: usize, c_out: usize, stride: usize, vb: VarBuilder) -> candle_core::Result<Conv2d> {
    let cfg = Conv2dConfig {
        padding: 1,
        stride,
        ..Default::default()
    };
    conv2d_no_bias(c_in, c_out, 3, cfg, vb)
}

fn bn(c: usize, vb: VarBuilder) -> candle_core::Result<BatchNorm> {
    batch_norm(c, BatchNormConfig::default(), vb)
}

/// Residual block `relu(F_res(x) + shortcut(x))` with
/// `F_res = bn2(conv2(relu(bn1(conv1(x)))))`.
#[derive(Debug, Clone)]
pub struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    downsample: Option<(Conv2d, BatchNorm)>,
}

impl BasicBlock {
    pub fn new(c_in: usize, c_out: usize, stride: usize, vb: VarBuilder) -> candle_core::Result<Self> {
        let downsample = if stride != 1 || c_in != c_out {
            let cfg = Conv2dConfig {
                stride,
                ..Default::default()
            };
            Some((
                conv2d_no_bias(c_in, c_out, 1, cfg, vb.pp("downsample.0"))?,
                bn(c_out, vb.pp("downsample.1"))?,
            ))
        } else {
            None
        };
        Ok(BasicBlock {
            conv1: conv3x3(c_in, c_out, stride, vb.pp("conv1"))?,
            bn1: bn(c_out, vb.pp("bn1"))?,
            conv2: conv3x3(c_out, c_out, 1, vb.pp("conv2"))?,
            bn2: bn(c_out, vb.pp("bn2"))?,
            downsample,
        })
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let y = self.conv1.forward(x)?;
        let y = self.bn1.forward_t(&y, train)?.relu()?;
        let y = self.conv2.forward(&y)?;
        let y = self.bn2.forward_t(&y, train)?;
        let shortcut = match &self.downsample {
            Some((conv, norm)) => norm.forward_t(&conv.forward(x)?, train)?,
            None => x.clone(),
        };
        (y + shortcut)?.relu()
    }
}

#[derive(Debug, Clone)]
struct Encoder {
    conv1: Conv2d,
    bn1: BatchNorm,
    layers: Vec<Vec<BasicBlock>>,
}

impl Encoder {
    fn new(cfg: &ModelConfig, vb: VarBuilder) -> candle_core::Result<Self> {
        let blocks = blocks_per_stage(&cfg.encoder_variant).map_err(candle_core::Error::wrap)?;
        let conv_cfg = Conv2dConfig {
            padding: 3,
            stride: 2,
            ..Default::default()
        };
        let conv1 = conv2d_no_bias(cfg.in_channels, 64, 7, conv_cfg, vb.pp("conv1"))?;
        let bn1 = bn(64, vb.pp("bn1"))?;
        let mut layers = Vec::new();
        for stage in 0..cfg.encoder_depth.saturating_sub(1) {
            let c_in = ENCODER_CHANNELS[stage];
            let c_out = ENCODER_CHANNELS[stage + 1];
            let vb_layer = vb.pp(format!("layer{}", stage + 1));
            let mut layer = Vec::new();
            for k in 0..blocks[stage] {
                let (cin, stride) = if k == 0 {
                    (c_in, if stage == 0 { 1 } else { 2 })
                } else {
                    (c_out, 1)
                };
                layer.push(BasicBlock::new(cin, c_out, stride, vb_layer.pp(k))?);
            }
            layers.push(layer);
        }
        Ok(Encoder { conv1, bn1, layers })
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Vec<Tensor>> {
        let mut features = Vec::with_capacity(self.layers.len() + 1);
        let mut h = self.bn1.forward_t(&self.conv1.forward(x)?, train)?.relu()?;
        features.push(h.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            if i == 0 {
                h = max_pool_3x3_s2(&h)?;
            }
            for block in layer {
                h = block.forward_t(&h, train)?;
            }
            features.push(h.clone());
        }
        Ok(features)
    }
}

/// Max over windows `2i - 1 ..= 2i + 1` along one spatial axis of even length.
fn max_pool_axis(x: &Tensor, axis: usize) -> candle_core::Result<Tensor> {
    let n = x.dim(axis)?;
    // zero padding is exact here because the input comes out of a relu
    let padded = x.pad_with_zeros(axis, 1, 1)?;
    let mut dims = padded.dims().to_vec();
    dims[axis] = n / 2 + 1;
    dims.insert(axis + 1, 2);
    let pairs = padded.reshape(dims)?;
    // padded index 2a + b sits at (a, b)
    let at = |start: usize, b: usize| -> candle_core::Result<Tensor> {
        pairs.narrow(axis, start, n / 2)?.narrow(axis + 1, b, 1)?.squeeze(axis + 1)
    };
    at(0, 0)?.maximum(&at(0, 1)?)?.maximum(&at(1, 0)?)
}

/// 3x3 max pooling with stride 2 and one pixel of padding, built from
/// differentiable primitives.
fn max_pool_3x3_s2(x: &Tensor) -> candle_core::Result<Tensor> {
    max_pool_axis(&max_pool_axis(x, 2)?, 3)
}

#[derive(Debug, Clone)]
struct DecoderBlock {
    up: ConvTranspose2d,
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
}

impl DecoderBlock {
    fn new(c_in: usize, c_skip: usize, c_out: usize, vb: VarBuilder) -> candle_core::Result<Self> {
        let up_cfg = ConvTranspose2dConfig {
            stride: 2,
            ..Default::default()
        };
        Ok(DecoderBlock {
            up: conv_transpose2d(c_in, c_out, 2, up_cfg, vb.pp("up"))?,
            conv1: conv3x3(c_out + c_skip, c_out, 1, vb.pp("conv1"))?,
            bn1: bn(c_out, vb.pp("bn1"))?,
            conv2: conv3x3(c_out, c_out, 1, vb.pp("conv2"))?,
            bn2: bn(c_out, vb.pp("bn2"))?,
        })
    }

    fn forward_t(&self, x: &Tensor, skip: Option<&Tensor>, train: bool) -> candle_core::Result<Tensor> {
        let mut h = self.up.forward(x)?;
        if let Some(skip) = skip {
            h = Tensor::cat(&[&h, skip], 1)?;
        }
        let h = self.bn1.forward_t(&self.conv1.forward(&h)?, train)?.relu()?;
        self.bn2.forward_t(&self.conv2.forward(&h)?, train)?.relu()
    }
}

/// Where encoder weights come from.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightsSource {
    /// safetensors file with torchvision ResNet names, with or without `encoder.`.
    File(PathBuf),
}

pub struct SegmentationModel {
    cfg: ModelConfig,
    varmap: VarMap,
    device: Device,
    dtype: DType,
    encoder: Encoder,
    decoder: Vec<DecoderBlock>,
    head: Conv2d,
}

impl SegmentationModel {
    /// Builds the model and initializes its parameters from `seed`.
    ///
    /// Convolutions get Kaiming-normal weights (fan-out), batch norms unit scale
    /// and zero shift, biases zero. When the config asks for pretrained weights
    /// they are loaded afterwards.
    pub fn new(cfg: &ModelConfig, device: &Device, dtype: DType, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, dtype, device);
        let encoder = Encoder::new(cfg, vb.pp("encoder"))?;
        let mut decoder = Vec::with_capacity(cfg.encoder_depth);
        let mut c_in = ENCODER_CHANNELS[cfg.encoder_depth - 1];
        for (i, &c_out) in cfg.decoder_channels.iter().enumerate() {
            let c_skip = if i + 1 < cfg.encoder_depth {
                ENCODER_CHANNELS[cfg.encoder_depth - 2 - i]
            } else {
                0
            };
            decoder.push(DecoderBlock::new(c_in, c_skip, c_out, vb.pp(format!("decoder.blocks.{i}")))?);
            c_in = c_out;
        }
        let head_cfg = Conv2dConfig {
            padding: 1,
            ..Default::default()
        };
        let head = conv2d(c_in, cfg.out_channels, 3, head_cfg, vb.pp("head"))?;
        let model = SegmentationModel {
            cfg: cfg.clone(),
            varmap,
            device: device.clone(),
            dtype,
            encoder,
            decoder,
            head,
        };
        model.reinitialize(seed)?;
        if cfg.use_pretrained {
            let path = cfg.pretrained_weights.clone().expect("validated");
            load_pretrained_encoder(&model, &WeightsSource::File(path))?;
        }
        log::debug!(
            "built {} ResUNet, depth {}, {} parameters",
            cfg.encoder_variant,
            cfg.encoder_depth,
            model.parameter_count()
        );
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    /// All variables sorted by name, including batch-norm running statistics.
    pub fn named_vars(&self) -> Vec<(String, Var)> {
        let data = self.varmap.data().lock().expect("varmap lock");
        let mut vars: Vec<_> = data.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        vars.sort_by(|a, b| a.0.cmp(&b.0));
        vars
    }

    /// Variables updated by gradient descent (running statistics excluded).
    pub fn trainable_vars(&self) -> Vec<(String, Var)> {
        self.named_vars()
            .into_iter()
            .filter(|(name, _)| !is_running_stat(name))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable_vars().iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Re-draws every parameter from a generator seeded with `seed`.
    pub fn reinitialize(&self, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, var) in self.named_vars() {
            let dims = var.dims().to_vec();
            let n: usize = dims.iter().product();
            let values: Vec<f64> = if dims.len() == 4 {
                let fan_out = dims[0] * dims[2] * dims[3];
                let normal = Normal::new(0.0, (2.0 / fan_out as f64).sqrt()).expect("finite std");
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            } else if name.ends_with("running_var") || name.ends_with("weight") {
                vec![1.0; n]
            } else {
                vec![0.0; n]
            };
            let t = Tensor::from_vec(values, dims, &self.device)?.to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize)> {
        let dims = x.dims();
        if dims.len() != 4 || dims[1] != self.cfg.in_channels {
            return Err(Error::shape(
                "model input (batch, channels, height, width)",
                &[dims.first().copied().unwrap_or(0), self.cfg.in_channels, 0, 0],
                dims,
            ));
        }
        let (h, w) = (dims[2], dims[3]);
        let d = self.cfg.divisor();
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(Error::IndivisibleInput {
                height: h,
                width: w,
                divisor: d,
            });
        }
        Ok((h, w))
    }

    /// Encoder feature maps, shallowest first.
    pub fn encode(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(x)?;
        Ok(self.encoder.forward_t(x, false)?)
    }

    /// Logits of shape `(batch, out_channels, height, width)`.
    ///
    /// `train` selects batch statistics (and updates the running averages) in the
    /// batch-norm layers.
    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.check_input(x)?;
        let features = self.encoder.forward_t(x, train)?;
        let depth = self.cfg.encoder_depth;
        let mut h = features[depth - 1].clone();
        for (i, block) in self.decoder.iter().enumerate() {
            let skip = (i + 1 < depth).then(|| &features[depth - 2 - i]);
            h = block.forward_t(&h, skip, train)?;
        }
        Ok(self.head.forward(&h)?)
    }

    /// `(batch, height, width)` single-channel images as the model's input tensor,
    /// replicating the channel to `in_channels`.
    pub fn input_tensor(&self, images: ArrayView3<f32>) -> Result<Tensor> {
        let (n, h, w) = images.dim();
        let flat: Vec<f32> = images.iter().copied().collect();
        let t = Tensor::from_vec(flat, (n, 1, h, w), &self.device)?.to_dtype(self.dtype)?;
        replicate_channels_tensor(&t, self.cfg.in_channels)
    }

    /// Eval-mode foreground probabilities, `(batch, height, width)`.
    pub fn predict_proba(&self, images: ArrayView3<f32>) -> Result<Array3<f32>> {
        let x = self.input_tensor(images)?;
        let logits = self.forward_t(&x, false)?;
        let p = candle_nn::ops::sigmoid(&logits.narrow(1, 0, 1)?.squeeze(1)?)?;
        tensor_to_array3(&p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.varmap.save(path)?;
        Ok(())
    }

    /// Loads a full parameter set written by [`save`](Self::save).
    pub fn load_weights(&self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let tensors = candle_core::safetensors::load(path, &self.device)?;
        let vars = self.named_vars();
        let expected: BTreeMap<&str, &Var> = vars.iter().map(|(k, v)| (k.as_str(), v)).collect();
        check_names(
            expected.iter().map(|(k, v)| (k.to_string(), v.dims().to_vec())),
            tensors.iter().map(|(k, t)| (k.clone(), t.dims().to_vec())),
        )?;
        for (name, var) in expected {
            var.set(&tensors[name].to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Parameter values on the host, for comparisons in tests and tools.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Vec<f64>>> {
        self.named_vars()
            .into_iter()
            .map(|(k, v)| Ok((k, v.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)))
            .collect()
    }
}

impl std::fmt::Debug for SegmentationModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SegmentationModel")
            .field("cfg", &self.cfg)
            .field("dtype", &self.dtype)
            .finish_non_exhaustive()
    }
}

fn is_running_stat(name: &str) -> bool {
    name.ends_with("running_mean") || name.ends_with("running_var")
}

/// Compares expected `(name, shape)` pairs with provided ones and reports the
/// first offending name in sorted order.
fn check_names(
    expected: impl Iterator<Item = (String, Vec<usize>)>,
    provided: impl Iterator<Item = (String, Vec<usize>)>,
) -> Result<()> {
    let expected: BTreeMap<String, Vec<usize>> = expected.collect();
    let provided: BTreeMap<String, Vec<usize>> = provided.collect();
    let names: BTreeSet<&String> = expected.keys().chain(provided.keys()).collect();
    for name in names {
        let detail = match (expected.get(name), provided.get(name)) {
            (Some(e), Some(p)) if e != p => format!("expected shape {e:?}, found {p:?}"),
            (Some(_), None) => "missing from weights".to_string(),
            (None, Some(_)) => "unexpected parameter".to_string(),
            _ => continue,
        };
        return Err(Error::WeightMismatch {
            name: name.clone(),
            detail,
        });
    }
    Ok(())
}

/// Replaces the encoder parameters with those in `source`; the decoder and head
/// are untouched.
///
/// Classifier weights (`fc.*`), `num_batches_tracked` counters and stages deeper
/// than the model's encoder are ignored. Any other missing, extra or mis-shaped
/// parameter is an error naming the first such parameter in sorted order.
pub fn load_pretrained_encoder(model: &SegmentationModel, source: &WeightsSource) -> Result<()> {
    let WeightsSource::File(path) = source;
    if !path.exists() {
        return Err(Error::MissingFile(path.clone()));
    }
    let raw = candle_core::safetensors::load(path, &model.device)?;
    let built_layers = model.cfg.encoder_depth.saturating_sub(1);
    let mut tensors = BTreeMap::new();
    for (key, t) in raw {
        let key = key.strip_prefix("encoder.").unwrap_or(&key).to_string();
        if key.starts_with("fc.") || key.ends_with("num_batches_tracked") {
            continue;
        }
        let deeper = (1..=4).any(|n| n > built_layers && key.starts_with(&format!("layer{n}.")));
        if deeper {
            continue;
        }
        tensors.insert(format!("encoder.{key}"), t);
    }
    let vars: Vec<_> = model
        .named_vars()
        .into_iter()
        .filter(|(k, _)| k.starts_with("encoder."))
        .collect();
    check_names(
        vars.iter().map(|(k, v)| (k.clone(), v.dims().to_vec())),
        tensors.iter().map(|(k, t)| (k.clone(), t.dims().to_vec())),
    )?;
    for (name, var) in &vars {
        var.set(&tensors[name].to_dtype(model.dtype)?)?;
    }
    log::info!("loaded {} encoder tensors from {}", vars.len(), path.display());
    Ok(())
}

/// `(height, width)` to `(3, height, width)` by copying.
pub fn replicate_channels(image: ArrayView2<f32>) -> Array3<f32> {
    let views = [image.insert_axis(Axis(0)); 3];
    ndarray::concatenate(Axis(0), &views).expect("equal shapes")
}

/// `(batch, 1, height, width)` to `(batch, channels, height, width)` by copying.
pub fn replicate_channels_tensor(x: &Tensor, channels: usize) -> Result<Tensor> {
    if x.rank() != 4 || x.dim(1)? != 1 {
        return Err(Error::shape("single-channel input", &[x.dim(0)?, 1], x.dims()));
    }
    if channels == 1 {
        return Ok(x.clone());
    }
    let copies = vec![x; channels];
    Ok(Tensor::cat(&copies, 1)?)
}

pub fn tensor_to_array3(t: &Tensor) -> Result<Array3<f32>> {
    let (n, h, w) = t.dims3()?;
    let v = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Ok(Array3::from_shape_vec((n, h, w), v).expect("length matches dims"))
}

pub fn tensor_to_array4_f64(t: &Tensor) -> Result<Array4<f64>> {
    let (n, c, h, w) = t.dims4()?;
    let v = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    Ok(Array4::from_shape_vec((n, c, h, w), v).expect("length matches dims"))
}

/// Variance over all elements of each feature map.
pub fn feature_variance(features: &[Tensor]) -> Result<Vec<f64>> {
    features
        .iter()
        .map(|f| {
            let f = f.to_dtype(DType::F64)?.flatten_all()?;
            Ok(f.var_keepdim(D::Minus1)?.squeeze(0)?.to_scalar::<f64>()?)
        })
        .collect()
}

/// Per-pixel host values of a `(height, width)` tensor.
pub fn tensor_to_array2(t: &Tensor) -> Result<Array2<f32>> {
    let (h, w) = t.dims2()?;
    let v = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Ok(Array2::from_shape_vec((h, w), v).expect("length matches dims"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            encoder_depth: 3,
            encoder_variant: "resnet18".into(),
            decoder_channels: vec![32, 16, 8],
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            encoder_variant: "resnet50".into(),
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::UnknownEncoder(_))));
        let bad = ModelConfig {
            decoder_channels: vec![16],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(ModelConfig::compact(4).decoder_channels, vec![64, 32, 16, 16]);
    }

    #[test]
    fn output_matches_input_size() {
        let model = SegmentationModel::new(&tiny(), &Device::Cpu, DType::F32, 0).unwrap();
        let x = Tensor::zeros((2, 3, 32, 48), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(model.forward_t(&x, false).unwrap().dims(), &[2, 1, 32, 48]);
        let x = Tensor::zeros((1, 3, 36, 32), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(model.forward_t(&x, false), Err(Error::IndivisibleInput { .. })));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = SegmentationModel::new(&tiny(), &Device::Cpu, DType::F32, 5).unwrap();
        let b = SegmentationModel::new(&tiny(), &Device::Cpu, DType::F32, 5).unwrap();
        let c = SegmentationModel::new(&tiny(), &Device::Cpu, DType::F32, 6).unwrap();
        assert_eq!(a.snapshot().unwrap(), b.snapshot().unwrap());
        assert_ne!(a.snapshot().unwrap(), c.snapshot().unwrap());
    }

    #[test]
    fn names_follow_torchvision() {
        let model = SegmentationModel::new(&tiny(), &Device::Cpu, DType::F32, 0).unwrap();
        let names: Vec<_> = model.named_vars().into_iter().map(|(k, _)| k).collect();
        for expected in [
            "encoder.conv1.weight",
            "encoder.bn1.running_var",
            "encoder.layer1.1.conv2.weight",
            "encoder.layer2.0.downsample.0.weight",
            "encoder.layer2.0.downsample.1.bias",
            "decoder.blocks.0.up.weight",
            "head.bias",
        ] {
            assert!(names.iter().any(|n| n == expected), "{expected} missing");
        }
        assert!(!names.iter().any(|n| n.starts_with("encoder.layer3")));
    }

    #[test]
    fn max_pool_matches_reference() {
        let x = Tensor::arange(0f32, 48., &Device::Cpu)
            .unwrap()
            .sin()
            .unwrap()
            .relu()
            .unwrap()
            .reshape((1, 1, 6, 8))
            .unwrap();
        let ours = max_pool_3x3_s2(&x).unwrap();
        let reference = x
            .pad_with_zeros(2, 1, 1)
            .unwrap()
            .pad_with_zeros(3, 1, 1)
            .unwrap()
            .max_pool2d_with_stride(3, 2)
            .unwrap();
        assert_eq!(ours.dims(), &[1, 1, 3, 4]);
        assert_eq!(
            ours.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            reference.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
    }

    #[test]
    fn replicate_copies() {
        let img = Array2::from_shape_fn((3, 4), |(r, c)| (r * 4 + c) as f32);
        let out = replicate_channels(img.view());
        assert_eq!(out.dim(), (3, 3, 4));
        for ch in out.outer_iter() {
            assert_eq!(ch, img);
        }
    }

    #[test]
    fn mismatch_reports_first_sorted_name() {
        let e = check_names(
            [("a".to_string(), vec![1]), ("c".to_string(), vec![2])].into_iter(),
            [("b".to_string(), vec![1]), ("c".to_string(), vec![3])].into_iter(),
        )
        .unwrap_err();
        assert!(matches!(e, Error::WeightMismatch { ref name, .. } if name == "a"), "{e}");
    }
}
