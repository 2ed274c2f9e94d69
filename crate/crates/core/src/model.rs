//! Segmentor and discriminator.
//!
//! The segmentor is a plain fully-convolutional encoder: a stack of stages,
//! each opening with a strided 3×3 convolution, whose downsampling factors
//! multiply to 16. A 1×1 head maps the deepest features to `C` class logits,
//! which are bilinearly upsampled back to the input size before the
//! per-pixel softmax. By default there are no skip connections; listing
//! stages in `skip_stages` adds FCN-style 1×1 score heads on those stage
//! outputs, whose upsampled logits are summed with the main head's.
//!
//! The discriminator scores a `C`-channel mask probability map (never the
//! image) with strided 3×3 convolutions, global average pooling and a single
//! linear unit followed by a sigmoid. Ground-truth one-hot masks and soft
//! predictions go through the same code path.
//!
//! Weights use He-normal initialisation for the leaky-ReLU convolutions and
//! `N(0, 1/fan_in)` for the linear read-outs, drawn from ChaCha8 seeded by the
//! caller (stream 0 for the segmentor, 1 for the discriminator). Biases start
//! at zero.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{
    bilinear_resize, bilinear_resize_backward, conv2d_backward, conv2d_forward, global_avg_pool,
    global_avg_pool_backward, leaky_relu, leaky_relu_backward, sigmoid, softmax_channels,
    softmax_channels_backward, ConvSpec, Grads, ParamSet, Tensor4, LEAKY_SLOPE,
};

/// Total downsampling between input and deepest feature map.
pub const OUTPUT_STRIDE: usize = 16;

/// Tolerance on per-pixel probability sums accepted by the discriminator.
pub const NORMALIZATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentorConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub num_classes: usize,
    pub stage_widths: Vec<usize>,
    /// Downsampling factor of each stage; the product must be 16.
    pub stage_downsample: Vec<usize>,
    /// Convolutions per stage (the first one is strided).
    pub convs_per_stage: usize,
    /// Stages (0-based, excluding the last) that also feed a score head.
    #[serde(default)]
    pub skip_stages: Vec<usize>,
}

impl SegmentorConfig {
    /// Small four-stage network used for CPU-scale experiments.
    pub fn desk(input_height: usize, input_width: usize, num_classes: usize) -> Self {
        Self {
            input_height,
            input_width,
            num_classes,
            stage_widths: vec![8, 16, 16, 32],
            stage_downsample: vec![2, 2, 2, 2],
            convs_per_stage: 2,
            skip_stages: Vec::new(),
        }
    }

    /// Widths and depth in the range of an 18-layer residual backbone
    /// (no residual connections, no pretrained weights).
    pub fn paper_scale(input_height: usize, input_width: usize, num_classes: usize) -> Self {
        Self {
            input_height,
            input_width,
            num_classes,
            stage_widths: vec![64, 128, 256, 512],
            stage_downsample: vec![2, 2, 2, 2],
            convs_per_stage: 4,
            skip_stages: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_widths.is_empty() || self.stage_widths.len() != self.stage_downsample.len() {
            return Err(Error::Config(format!(
                "segmentor needs one downsample factor per stage ({} widths, {} factors)",
                self.stage_widths.len(),
                self.stage_downsample.len()
            )));
        }
        let product: usize = self.stage_downsample.iter().product();
        if product != OUTPUT_STRIDE {
            return Err(Error::Config(format!(
                "product of downsample factors must be {OUTPUT_STRIDE}, got {product}"
            )));
        }
        if !self.input_height.is_multiple_of(OUTPUT_STRIDE) || !self.input_width.is_multiple_of(OUTPUT_STRIDE) {
            return Err(Error::Config(format!(
                "input size {}x{} is not divisible by {OUTPUT_STRIDE}",
                self.input_height, self.input_width
            )));
        }
        if self.input_height == 0 || self.input_width == 0 {
            return Err(Error::Config("input size must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.convs_per_stage == 0 || self.stage_widths.contains(&0) {
            return Err(Error::Config("stage widths and conv counts must be positive".into()));
        }
        if self.stage_downsample.contains(&0) {
            return Err(Error::Config("downsample factors must be positive".into()));
        }
        let last = self.stage_widths.len() - 1;
        if self.skip_stages.iter().any(|&s| s >= last) || !self.skip_stages.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(format!(
                "skip_stages must be strictly increasing and below {last}, got {:?}",
                self.skip_stages
            )));
        }
        Ok(())
    }

    fn conv_specs(&self) -> Vec<ConvSpec> {
        let mut specs = Vec::new();
        let mut in_c = 1;
        for (&width, &stride) in self.stage_widths.iter().zip(&self.stage_downsample) {
            for j in 0..self.convs_per_stage {
                specs.push(ConvSpec {
                    in_c,
                    out_c: width,
                    kernel: 3,
                    stride: if j == 0 { stride } else { 1 },
                    pad: 1,
                });
                in_c = width;
            }
        }
        specs
    }

    fn head_spec(&self) -> ConvSpec {
        self.score_spec(*self.stage_widths.last().unwrap_or(&1))
    }

    fn score_spec(&self, in_c: usize) -> ConvSpec {
        ConvSpec {
            in_c,
            out_c: self.num_classes,
            kernel: 1,
            stride: 1,
            pad: 0,
        }
    }

    /// Index into the conv stack of the convolution that consumes the
    /// output of `stage`.
    fn stage_output_index(&self, stage: usize) -> usize {
        (stage + 1) * self.convs_per_stage
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    /// Number of mask channels (= number of classes).
    pub input_channels: usize,
    /// Each stage is a stride-2 3×3 convolution.
    pub stage_widths: Vec<usize>,
}

impl DiscriminatorConfig {
    pub fn desk(num_classes: usize) -> Self {
        Self {
            input_channels: num_classes,
            stage_widths: vec![8, 16, 16, 32],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels < 2 {
            return Err(Error::Config("discriminator needs at least two channels".into()));
        }
        if self.stage_widths.is_empty() || self.stage_widths.contains(&0) {
            return Err(Error::Config("discriminator stage widths must be positive".into()));
        }
        Ok(())
    }

    fn conv_specs(&self) -> Vec<ConvSpec> {
        let mut in_c = self.input_channels;
        self.stage_widths
            .iter()
            .map(|&w| {
                let s = ConvSpec {
                    in_c,
                    out_c: w,
                    kernel: 3,
                    stride: 2,
                    pad: 1,
                };
                in_c = w;
                s
            })
            .collect()
    }
}

/// Both network configurations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub segmentor: SegmentorConfig,
    /// Absent in purely supervised training.
    pub discriminator: Option<DiscriminatorConfig>,
}

fn he_normal(rng: &mut ChaCha8Rng, len: usize, fan_in: usize, gain2: f64) -> Vec<f64> {
    let std = libm::sqrt(gain2 / fan_in as f64);
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..len).map(|_| normal.sample(rng)).collect()
}

fn leaky_gain2() -> f64 {
    2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)
}

fn push_conv(
    params: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    name: &str,
    spec: ConvSpec,
    gain2: f64,
) {
    let fan_in = spec.kernel * spec.kernel * spec.in_c;
    params.push(
        format!("{name}.weight"),
        vec![spec.kernel, spec.kernel, spec.in_c, spec.out_c],
        he_normal(rng, spec.weight_len(), fan_in, gain2),
    );
    params.push(format!("{name}.bias"), vec![spec.out_c], vec![0.0; spec.out_c]);
}

/// Intermediate values retained for the segmentor backward pass.
#[derive(Debug, Clone)]
pub struct SegmentorTrace {
    conv_inputs: Vec<Tensor4>,
    pre_activations: Vec<Tensor4>,
    head_input: Tensor4,
    logit_size: (usize, usize),
    pub probs: Tensor4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentor {
    pub config: SegmentorConfig,
    pub params: ParamSet,
}

impl Segmentor {
    pub fn init(config: SegmentorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let mut params = ParamSet::default();
        for (i, spec) in config.conv_specs().into_iter().enumerate() {
            push_conv(&mut params, &mut rng, &format!("seg.conv{i}"), spec, leaky_gain2());
        }
        push_conv(&mut params, &mut rng, "seg.head", config.head_spec(), 1.0);
        for &s in &config.skip_stages {
            let spec = config.score_spec(config.stage_widths[s]);
            push_conv(&mut params, &mut rng, &format!("seg.skip{s}"), spec, 1.0);
        }
        Ok(Self { config, params })
    }

    /// Spatial size of the deepest feature map for the configured input.
    pub fn deepest_feature_size(&self) -> (usize, usize) {
        let (mut h, mut w) = (self.config.input_height, self.config.input_width);
        for spec in self.config.conv_specs() {
            (h, w) = spec.out_size(h, w);
        }
        (h, w)
    }

    fn check_input(&self, images: &Tensor4) -> Result<()> {
        let c = &self.config;
        let expected = [images.n, c.input_height, c.input_width, 1];
        if images.shape() != expected || images.n == 0 {
            return Err(shape_err("segmentor input", expected, images.shape()));
        }
        Ok(())
    }

    /// Per-pixel class probabilities, `B×H×W×C`.
    pub fn forward(&self, images: &Tensor4) -> Result<Tensor4> {
        Ok(self.forward_trace(images)?.probs)
    }

    pub fn forward_trace(&self, images: &Tensor4) -> Result<SegmentorTrace> {
        self.check_input(images)?;
        let specs = self.config.conv_specs();
        let mut conv_inputs = Vec::with_capacity(specs.len());
        let mut pre_activations = Vec::with_capacity(specs.len());
        let mut x = images.clone();
        for (i, spec) in specs.iter().enumerate() {
            let z = conv2d_forward(
                &x,
                &self.params.params[2 * i].data,
                &self.params.params[2 * i + 1].data,
                *spec,
            );
            let a = leaky_relu(&z);
            conv_inputs.push(core::mem::replace(&mut x, a));
            pre_activations.push(z);
        }
        let h = 2 * specs.len();
        let logits_small = conv2d_forward(
            &x,
            &self.params.params[h].data,
            &self.params.params[h + 1].data,
            self.config.head_spec(),
        );
        let logit_size = (logits_small.h, logits_small.w);
        let mut logits = bilinear_resize(&logits_small, images.h, images.w);
        for (k, &s) in self.config.skip_stages.iter().enumerate() {
            let p = h + 2 + 2 * k;
            let feat = &conv_inputs[self.config.stage_output_index(s)];
            let score = conv2d_forward(
                feat,
                &self.params.params[p].data,
                &self.params.params[p + 1].data,
                self.config.score_spec(feat.c),
            );
            let up = bilinear_resize(&score, images.h, images.w);
            for (l, u) in logits.data.iter_mut().zip(&up.data) {
                *l += u;
            }
        }
        let probs = softmax_channels(&logits);
        Ok(SegmentorTrace {
            conv_inputs,
            pre_activations,
            head_input: x,
            logit_size,
            probs,
        })
    }

    /// Accumulates dL/dθ into `grads` given dL/d(probs).
    pub fn backward(&self, trace: &SegmentorTrace, dprobs: &Tensor4, grads: &mut Grads) {
        let specs = self.config.conv_specs();
        let dlogits = softmax_channels_backward(&trace.probs, dprobs);
        let dsmall = bilinear_resize_backward(&dlogits, trace.logit_size.0, trace.logit_size.1);
        let h = 2 * specs.len();
        let (gw, gb) = split_pair(grads, h);
        let mut g = conv2d_backward(
            &trace.head_input,
            &self.params.params[h].data,
            &dsmall,
            self.config.head_spec(),
            gw,
            gb,
            true,
        )
        .expect("input gradient requested");
        // Gradients reaching stage outputs through the skip heads.
        let mut skip_grads: Vec<(usize, Tensor4)> = Vec::new();
        for (k, &s) in self.config.skip_stages.iter().enumerate() {
            let p = h + 2 + 2 * k;
            let idx = self.config.stage_output_index(s);
            let feat = &trace.conv_inputs[idx];
            let dscore = bilinear_resize_backward(&dlogits, feat.h, feat.w);
            let (gw, gb) = split_pair(grads, p);
            let d = conv2d_backward(
                feat,
                &self.params.params[p].data,
                &dscore,
                self.config.score_spec(feat.c),
                gw,
                gb,
                true,
            )
            .expect("input gradient requested");
            skip_grads.push((idx, d));
        }
        for i in (0..specs.len()).rev() {
            if let Some((_, d)) = skip_grads.iter().find(|(idx, _)| *idx == i + 1) {
                for (a, b) in g.data.iter_mut().zip(&d.data) {
                    *a += b;
                }
            }
            leaky_relu_backward(&trace.pre_activations[i], &mut g);
            let (gw, gb) = split_pair(grads, 2 * i);
            let next = conv2d_backward(
                &trace.conv_inputs[i],
                &self.params.params[2 * i].data,
                &g,
                specs[i],
                gw,
                gb,
                i > 0,
            );
            match next {
                Some(d) => g = d,
                None => break,
            }
        }
    }
}

fn split_pair(grads: &mut Grads, i: usize) -> (&mut [f64], &mut [f64]) {
    let (a, b) = grads.split_at_mut(i + 1);
    (&mut a[i], &mut b[0])
}

/// Intermediate values retained for the discriminator backward pass.
#[derive(Debug, Clone)]
pub struct DiscriminatorTrace {
    conv_inputs: Vec<Tensor4>,
    pre_activations: Vec<Tensor4>,
    last: Tensor4,
    features: Vec<f64>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub params: ParamSet,
}

impl Discriminator {
    pub fn init(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut params = ParamSet::default();
        for (i, spec) in config.conv_specs().into_iter().enumerate() {
            push_conv(&mut params, &mut rng, &format!("disc.conv{i}"), spec, leaky_gain2());
        }
        let feat = *config.stage_widths.last().expect("validated");
        params.push("disc.fc.weight", vec![feat], he_normal(&mut rng, feat, feat, 1.0));
        params.push("disc.fc.bias", vec![1], vec![0.0]);
        Ok(Self { config, params })
    }

    fn check_input(&self, masks: &Tensor4) -> Result<()> {
        if masks.c != self.config.input_channels || masks.n == 0 || masks.h == 0 || masks.w == 0 {
            return Err(shape_err(
                "discriminator input",
                ["B", "H", "W", &format!("{}", self.config.input_channels)],
                masks.shape(),
            ));
        }
        for (pixel, px) in masks.data.chunks_exact(masks.c).enumerate() {
            let sum: f64 = px.iter().sum();
            if !((sum - 1.0).abs() <= NORMALIZATION_TOL) || px.iter().any(|&p| p < 0.0) {
                return Err(Error::NotNormalized { pixel, sum });
            }
        }
        Ok(())
    }

    /// One score in (0, 1) per mask.
    pub fn forward(&self, masks: &Tensor4) -> Result<Vec<f64>> {
        Ok(self.forward_trace(masks)?.scores)
    }

    pub fn forward_trace(&self, masks: &Tensor4) -> Result<DiscriminatorTrace> {
        self.check_input(masks)?;
        let specs = self.config.conv_specs();
        let mut conv_inputs = Vec::with_capacity(specs.len());
        let mut pre_activations = Vec::with_capacity(specs.len());
        let mut x = masks.clone();
        for (i, spec) in specs.iter().enumerate() {
            let z = conv2d_forward(
                &x,
                &self.params.params[2 * i].data,
                &self.params.params[2 * i + 1].data,
                *spec,
            );
            let a = leaky_relu(&z);
            conv_inputs.push(core::mem::replace(&mut x, a));
            pre_activations.push(z);
        }
        let features = global_avg_pool(&x);
        let fc = 2 * specs.len();
        let w = &self.params.params[fc].data;
        let b = self.params.params[fc + 1].data[0];
        let scores = features
            .chunks_exact(x.c)
            .map(|f| {
                let logit: f64 = b + f.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
                sigmoid(logit)
            })
            .collect();
        Ok(DiscriminatorTrace {
            conv_inputs,
            pre_activations,
            last: x,
            features,
            scores,
        })
    }

    /// Accumulates dL/dθ into `grads` given dL/d(scores). Returns dL/d(masks)
    /// when `want_dinput` is set.
    pub fn backward(
        &self,
        trace: &DiscriminatorTrace,
        dscores: &[f64],
        grads: &mut Grads,
        want_dinput: bool,
    ) -> Option<Tensor4> {
        let specs = self.config.conv_specs();
        let fc = 2 * specs.len();
        let feat = trace.last.c;
        let w = &self.params.params[fc].data;
        let mut dfeat = vec![0.0; trace.features.len()];
        for (n, (&s, &ds)) in trace.scores.iter().zip(dscores).enumerate() {
            let dlogit = ds * s * (1.0 - s);
            grads[fc + 1][0] += dlogit;
            let f = &trace.features[n * feat..(n + 1) * feat];
            for (j, (&fv, &wv)) in f.iter().zip(w).enumerate() {
                grads[fc][j] += dlogit * fv;
                dfeat[n * feat + j] = dlogit * wv;
            }
        }
        let last = &trace.last;
        let mut g = global_avg_pool_backward(&dfeat, last.n, last.h, last.w, last.c);
        for i in (0..specs.len()).rev() {
            leaky_relu_backward(&trace.pre_activations[i], &mut g);
            let (gw, gb) = split_pair(grads, 2 * i);
            let next = conv2d_backward(
                &trace.conv_inputs[i],
                &self.params.params[2 * i].data,
                &g,
                specs[i],
                gw,
                gb,
                i > 0 || want_dinput,
            );
            g = next?;
        }
        Some(g)
    }
}

/// Network parameters plus the update counters of the alternating schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub segmentor: Segmentor,
    pub discriminator: Option<Discriminator>,
    pub segmentor_updates: u64,
    pub discriminator_updates: u64,
}

/// Deterministic initialisation of both networks from one seed.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    let segmentor = Segmentor::init(config.segmentor.clone(), seed)?;
    let discriminator = match &config.discriminator {
        Some(d) => {
            if d.input_channels != config.segmentor.num_classes {
                return Err(Error::Config(format!(
                    "discriminator expects {} channels but the segmentor emits {} classes",
                    d.input_channels, config.segmentor.num_classes
                )));
            }
            Some(Discriminator::init(d.clone(), seed)?)
        }
        None => None,
    };
    Ok(ModelParams {
        segmentor,
        discriminator,
        segmentor_updates: 0,
        discriminator_updates: 0,
    })
}

impl ModelParams {
    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            segmentor: self.segmentor.config.clone(),
            discriminator: self.discriminator.as_ref().map(|d| d.config.clone()),
        }
    }
}
