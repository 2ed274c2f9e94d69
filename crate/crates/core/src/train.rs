//! Alternating adversarial training.
//!
//! One *cycle* performs `d_steps_per_s_step` discriminator updates followed
//! by one segmentor update. Which objectives are used depends on the mode:
//!
//! | mode              | discriminator step            | segmentor step            |
//! |-------------------|-------------------------------|---------------------------|
//! | `supervised`      | none                          | cross-entropy             |
//! | `supervised_adv`  | real GT vs source predictions | CE + adversarial (source) |
//! | `uda`             | adds target predictions       | adds adversarial (target) |
//! | `semi_supervised` | as `uda`                      | as `uda`                  |
//!
//! Every update draws a fresh batch from the [`BatchStream`]. Discriminator
//! "real" examples are ground-truth masks only.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ImageSample, LabelMask};
use crate::error::{Error, Result};
use crate::loss::{
    cross_entropy_seg_with_grad, da_discriminator_loss_with_grad, da_segmentor_loss_with_grad,
    smooth_labels, BatchLossReport, LossConfig,
};
use crate::model::{init_params, Discriminator, ModelConfig, ModelParams, Segmentor};
use crate::nn::{Adam, AdamConfig, Grads, Tensor4};

/// RNG stream of the source-batch sampler (model init uses 0 and 1).
pub const SOURCE_STREAM: u64 = 10;
pub const TARGET_STREAM: u64 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Cross-entropy only; no discriminator exists.
    Supervised,
    SupervisedAdv,
    /// Unsupervised domain adaptation with an unlabeled target stream.
    Uda,
    /// Labeled subset as source, unlabeled remainder as target.
    SemiSupervised,
}

impl TrainMode {
    pub fn is_adversarial(self) -> bool {
        self != TrainMode::Supervised
    }

    pub fn uses_target(self) -> bool {
        matches!(self, TrainMode::Uda | TrainMode::SemiSupervised)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default = "default_d_steps")]
    pub d_steps_per_s_step: u32,
    #[serde(default)]
    pub loss: LossConfig,
    /// Number of segmentor updates (cycles) to run.
    pub segmentor_steps: u64,
    pub seed: u64,
    /// Must stay false: the pipeline applies no stochastic transforms.
    #[serde(default)]
    pub augmentation: bool,
}

fn default_d_steps() -> u32 {
    2
}

impl TrainConfig {
    pub fn new(mode: TrainMode, model: ModelConfig, segmentor_steps: u64, seed: u64) -> Self {
        Self {
            mode,
            model,
            optimizer: AdamConfig::default(),
            d_steps_per_s_step: default_d_steps(),
            loss: LossConfig::default(),
            segmentor_steps,
            seed,
            augmentation: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_steps_per_s_step == 0 {
            return Err(Error::Config("d_steps_per_s_step must be at least 1".into()));
        }
        if self.augmentation {
            return Err(Error::Config("data augmentation is not supported".into()));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", o.learning_rate)));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.epsilon > 0.0) {
            return Err(Error::Config("optimizer betas must lie in [0, 1) and epsilon be positive".into()));
        }
        self.loss.validate()?;
        self.model.segmentor.validate()?;
        if self.mode.is_adversarial() {
            match &self.model.discriminator {
                Some(d) => d.validate()?,
                None => {
                    return Err(Error::Config(format!(
                        "mode {:?} needs a discriminator configuration",
                        self.mode
                    )))
                }
            }
        }
        Ok(())
    }

    /// Model configuration actually instantiated: the discriminator is
    /// dropped in supervised mode.
    pub fn effective_model(&self) -> ModelConfig {
        let mut m = self.model.clone();
        if !self.mode.is_adversarial() {
            m.discriminator = None;
        }
        m
    }
}

/// Losses logged for one cycle. Discriminator fields are averaged over the
/// cycle's discriminator updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Segmentor update index, starting at 1.
    pub step: u64,
    pub discriminator_updates: u64,
    pub loss: BatchLossReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub params: ModelParams,
    pub segmentor_optimizer: Adam,
    pub discriminator_optimizer: Option<Adam>,
    pub history: Vec<StepRecord>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let params = init_params(&cfg.effective_model(), cfg.seed)?;
        let segmentor_optimizer = Adam::new(cfg.optimizer, &params.segmentor.params);
        let discriminator_optimizer = params
            .discriminator
            .as_ref()
            .map(|d| Adam::new(cfg.optimizer, &d.params));
        Ok(Self {
            params,
            segmentor_optimizer,
            discriminator_optimizer,
            history: Vec::new(),
        })
    }

    pub fn segmentor_updates(&self) -> u64 {
        self.params.segmentor_updates
    }

    pub fn discriminator_updates(&self) -> u64 {
        self.params.discriminator_updates
    }
}

/// Labeled batch: `B×H×W×1` images and `B×H×W×C` one-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub images: Tensor4,
    pub labels: Tensor4,
}

/// Supplier of training batches. Calls happen in a fixed order, so a
/// deterministic stream gives a deterministic run.
pub trait BatchStream {
    fn next_source(&mut self, n: usize) -> Result<LabeledBatch>;
    /// `None` when there is no target data.
    fn next_target(&mut self, n: usize) -> Result<Option<Tensor4>>;
}

/// Endless reshuffled index sequence over `len` items.
#[derive(Debug, Clone)]
pub struct CyclicSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl CyclicSampler {
    pub fn new(len: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            order: (0..len).collect(),
            pos: len,
            rng,
        }
    }

    /// Next `n` indices, crossing epoch boundaries as needed. Empty when
    /// the sampler has no items.
    pub fn take(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        if self.order.is_empty() {
            return out;
        }
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Image and one-hot label tensors at the training resolution.
pub fn encode_labeled(image: &ImageSample, mask: &LabelMask, height: usize, width: usize) -> Result<LabeledBatch> {
    mask.matches_image(image)?;
    Ok(LabeledBatch {
        images: image.to_tensor(height, width),
        labels: mask.resize_nearest(height, width).one_hot(),
    })
}

/// Batch stream over pre-encoded samples held in memory.
#[derive(Debug, Clone)]
pub struct InMemoryStream {
    source: Vec<LabeledBatch>,
    target: Vec<Tensor4>,
    source_sampler: CyclicSampler,
    target_sampler: CyclicSampler,
}

impl InMemoryStream {
    /// `source` items and `target` images are single-sample tensors.
    pub fn new(source: Vec<LabeledBatch>, target: Vec<Tensor4>, seed: u64) -> Result<Self> {
        if source.is_empty() {
            return Err(Error::InvalidArgument("source stream is empty".into()));
        }
        if source.iter().any(|b| b.images.n != 1 || b.labels.n != 1) || target.iter().any(|t| t.n != 1) {
            return Err(Error::InvalidArgument("stream items must hold one sample each".into()));
        }
        Ok(Self {
            source_sampler: CyclicSampler::new(source.len(), seed, SOURCE_STREAM),
            target_sampler: CyclicSampler::new(target.len(), seed, TARGET_STREAM),
            source,
            target,
        })
    }

    pub fn source_len(&self) -> usize {
        self.source.len()
    }

    pub fn target_len(&self) -> usize {
        self.target.len()
    }
}

impl BatchStream for InMemoryStream {
    fn next_source(&mut self, n: usize) -> Result<LabeledBatch> {
        let idx = self.source_sampler.take(n);
        Ok(LabeledBatch {
            images: Tensor4::stack(idx.iter().map(|&i| &self.source[i].images))?,
            labels: Tensor4::stack(idx.iter().map(|&i| &self.source[i].labels))?,
        })
    }

    fn next_target(&mut self, n: usize) -> Result<Option<Tensor4>> {
        if self.target.is_empty() {
            return Ok(None);
        }
        let idx = self.target_sampler.take(n);
        Ok(Some(Tensor4::stack(idx.iter().map(|&i| &self.target[i]))?))
    }
}

fn check_report(report: &BatchLossReport, step: u64) -> Result<()> {
    let fields = [
        ("j_seg", report.j_seg),
        ("j_adv_source", report.j_adv_source),
        ("j_adv_target", report.j_adv_target),
        ("j_d_real", report.j_d_real),
        ("j_d_fake_source", report.j_d_fake_source),
        ("j_d_fake_target", report.j_d_fake_target),
    ];
    match fields.iter().find(|(_, v)| !v.is_finite()) {
        Some((name, _)) => Err(Error::NonFinite {
            step,
            tensor: String::from(*name),
        }),
        None => Ok(()),
    }
}

fn check_grads(grads: &Grads, names: impl Iterator<Item = String>, step: u64) -> Result<()> {
    for (g, name) in grads.iter().zip(names) {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step,
                tensor: format!("grad({name})"),
            });
        }
    }
    Ok(())
}

fn cat(a: &Tensor4, b: Option<&Tensor4>) -> Result<Tensor4> {
    match b {
        Some(b) if b.n > 0 => Tensor4::stack([a, b]),
        _ => Ok(a.clone()),
    }
}

fn fetch_target<S: BatchStream + ?Sized>(stream: &mut S, mode: TrainMode, n: usize) -> Result<Option<Tensor4>> {
    if mode.uses_target() {
        stream.next_target(n)
    } else {
        Ok(None)
    }
}

/// Discriminator objective (adversarial loss on ground truth versus
/// source and, when given, target predictions) and its gradient with
/// respect to the discriminator parameters.
pub fn discriminator_objective(
    segmentor: &Segmentor,
    discriminator: &Discriminator,
    source: &LabeledBatch,
    target: Option<&Tensor4>,
    loss: &LossConfig,
) -> Result<(BatchLossReport, Grads)> {
    let fake = segmentor.forward(&cat(&source.images, target)?)?;
    if !fake.all_finite() {
        return Err(Error::NonFinite {
            step: 0,
            tensor: String::from("segmentor output"),
        });
    }
    let n_t = fake.n - source.images.n;
    let real = smooth_labels(&source.labels, loss.real_label_smoothing);
    let masks = Tensor4::stack([&real, &fake])?;
    let trace = discriminator.forward_trace(&masks)?;
    let (real, rest) = trace.scores.split_at(source.labels.n);
    let (fake_s, fake_t) = rest.split_at(rest.len() - n_t);
    let (report, g) = da_discriminator_loss_with_grad(real, fake_s, fake_t, loss)?;
    let mut dscores = g.dreal;
    dscores.extend(g.dfake_source);
    dscores.extend(g.dfake_target);
    let mut grads = discriminator.params.zero_grads();
    discriminator.backward(&trace, &dscores, &mut grads, false);
    Ok((report, grads))
}

/// Segmentor objective and its gradient with respect to the segmentor
/// parameters. Without a discriminator this is plain cross-entropy; with
/// one, the adversarial terms on source and (when given) target
/// predictions are added.
pub fn segmentor_objective(
    segmentor: &Segmentor,
    discriminator: Option<&Discriminator>,
    source: &LabeledBatch,
    target: Option<&Tensor4>,
    loss: &LossConfig,
) -> Result<(BatchLossReport, Grads)> {
    let trace = segmentor.forward_trace(&cat(&source.images, target)?)?;
    if !trace.probs.all_finite() {
        return Err(Error::NonFinite {
            step: 0,
            tensor: String::from("segmentor output"),
        });
    }
    let n_s = source.images.n;
    let pred_source = trace.probs.slice_batch(0, n_s);
    let (report, dprobs) = match discriminator {
        Some(disc) => {
            let d_trace = disc.forward_trace(&trace.probs)?;
            let (ds, dt) = d_trace.scores.split_at(n_s);
            let (report, g) = da_segmentor_loss_with_grad(&pred_source, &source.labels, ds, dt, loss)?;
            let mut dscores = g.dscores_source;
            dscores.extend(g.dscores_target);
            // Discriminator parameter gradients are discarded here.
            let mut scratch = disc.params.zero_grads();
            let mut dprobs = disc
                .backward(&d_trace, &dscores, &mut scratch, true)
                .expect("input gradient requested");
            for (d, &c) in dprobs.data.iter_mut().zip(&g.dpred.data) {
                *d += c;
            }
            (report, dprobs)
        }
        None => {
            let (j_seg, dpred) = cross_entropy_seg_with_grad(&pred_source, &source.labels, loss)?;
            let report = BatchLossReport {
                j_seg,
                j_s_total: j_seg,
                ..BatchLossReport::default()
            };
            let mut dprobs = Tensor4::zeros(trace.probs.n, trace.probs.h, trace.probs.w, trace.probs.c);
            dprobs.data[..dpred.data.len()].copy_from_slice(&dpred.data);
            (report, dprobs)
        }
    };
    if !dprobs.all_finite() {
        return Err(Error::NonFinite {
            step: 0,
            tensor: String::from("grad(segmentor output)"),
        });
    }
    let mut grads = segmentor.params.zero_grads();
    segmentor.backward(&trace, &dprobs, &mut grads);
    Ok((report, grads))
}

fn at_step(e: Error, step: u64) -> Error {
    match e {
        Error::NonFinite { tensor, .. } => Error::NonFinite { step, tensor },
        other => other,
    }
}

fn discriminator_step<S: BatchStream + ?Sized>(
    state: &mut TrainState,
    stream: &mut S,
    cfg: &TrainConfig,
    step: u64,
) -> Result<BatchLossReport> {
    let b_d = cfg.loss.batch_disc;
    let source = stream.next_source(b_d)?;
    let target = fetch_target(stream, cfg.mode, b_d)?;
    let disc = state
        .params
        .discriminator
        .as_mut()
        .ok_or_else(|| Error::Config("adversarial step without a discriminator".into()))?;
    let (report, grads) =
        discriminator_objective(&state.params.segmentor, disc, &source, target.as_ref(), &cfg.loss)
            .map_err(|e| at_step(e, step))?;
    check_report(&report, step)?;
    check_grads(&grads, disc.params.params.iter().map(|p| p.name.clone()), step)?;
    let opt = state
        .discriminator_optimizer
        .as_mut()
        .ok_or_else(|| Error::Config("discriminator optimizer missing".into()))?;
    opt.update(&mut disc.params, &grads);
    if let Some(name) = disc.params.first_non_finite() {
        return Err(Error::NonFinite {
            step,
            tensor: String::from(name),
        });
    }
    state.params.discriminator_updates += 1;
    Ok(report)
}

fn segmentor_step<S: BatchStream + ?Sized>(
    state: &mut TrainState,
    stream: &mut S,
    cfg: &TrainConfig,
    step: u64,
) -> Result<BatchLossReport> {
    let source = stream.next_source(cfg.loss.batch_source)?;
    let target = fetch_target(stream, cfg.mode, cfg.loss.batch_source)?;
    let disc = if cfg.mode.is_adversarial() {
        state.params.discriminator.as_ref()
    } else {
        None
    };
    let seg = &state.params.segmentor;
    let (report, grads) =
        segmentor_objective(seg, disc, &source, target.as_ref(), &cfg.loss).map_err(|e| at_step(e, step))?;
    check_report(&report, step)?;
    check_grads(&grads, seg.params.params.iter().map(|p| p.name.clone()), step)?;
    let seg = &mut state.params.segmentor;
    state.segmentor_optimizer.update(&mut seg.params, &grads);
    if let Some(name) = seg.params.first_non_finite() {
        return Err(Error::NonFinite {
            step,
            tensor: String::from(name),
        });
    }
    state.params.segmentor_updates += 1;
    Ok(report)
}

/// One cycle: the discriminator updates (adversarial modes only), then one
/// segmentor update. The record is appended to the state's history.
pub fn train_cycle<S: BatchStream + ?Sized>(state: &mut TrainState, stream: &mut S, cfg: &TrainConfig) -> Result<StepRecord> {
    let step = state.params.segmentor_updates + 1;
    let mut d_sum = BatchLossReport::default();
    if cfg.mode.is_adversarial() {
        let k = cfg.d_steps_per_s_step;
        for _ in 0..k {
            let r = discriminator_step(state, stream, cfg, step)?;
            d_sum.j_d_real += r.j_d_real;
            d_sum.j_d_fake_source += r.j_d_fake_source;
            d_sum.j_d_fake_target += r.j_d_fake_target;
            d_sum.j_d_total += r.j_d_total;
        }
        let inv = 1.0 / k as f64;
        d_sum.j_d_real *= inv;
        d_sum.j_d_fake_source *= inv;
        d_sum.j_d_fake_target *= inv;
        d_sum.j_d_total *= inv;
    }
    let s = segmentor_step(state, stream, cfg, step)?;
    let record = StepRecord {
        step,
        discriminator_updates: state.params.discriminator_updates,
        loss: BatchLossReport {
            j_seg: s.j_seg,
            j_adv_source: s.j_adv_source,
            j_adv_target: s.j_adv_target,
            j_s_total: s.j_s_total,
            ..d_sum
        },
    };
    state.history.push(record);
    Ok(record)
}

/// Runs cycles until the state has `cfg.segmentor_steps` segmentor updates.
/// `on_step` sees the state after every cycle and may abort the run.
pub fn run<S, F>(state: &mut TrainState, stream: &mut S, cfg: &TrainConfig, mut on_step: F) -> Result<()>
where
    S: BatchStream + ?Sized,
    F: FnMut(&TrainState, &StepRecord) -> Result<()>,
{
    while state.params.segmentor_updates < cfg.segmentor_steps {
        let record = train_cycle(state, stream, cfg)?;
        on_step(state, &record)?;
    }
    Ok(())
}

/// Fresh initialisation followed by [`run`].
pub fn fit<S, F>(cfg: &TrainConfig, stream: &mut S, on_step: F) -> Result<TrainState>
where
    S: BatchStream + ?Sized,
    F: FnMut(&TrainState, &StepRecord) -> Result<()>,
{
    let mut state = TrainState::new(cfg)?;
    run(&mut state, stream, cfg, on_step)?;
    Ok(state)
}

/// Per-pixel argmax; ties go to the lowest class index.
pub fn argmax_mask(probs: &Tensor4, n: usize) -> LabelMask {
    let mut classes = Vec::with_capacity(probs.h * probs.w);
    for y in 0..probs.h {
        for x in 0..probs.w {
            let px = probs.pixel(n, y, x);
            let mut best = 0;
            for (k, &p) in px.iter().enumerate().skip(1) {
                if p > px[best] {
                    best = k;
                }
            }
            classes.push(best as u8);
        }
    }
    LabelMask {
        height: probs.h,
        width: probs.w,
        num_classes: probs.c,
        classes,
    }
}

/// Segments each image at the training resolution and resizes the argmax
/// map back to the image's native size.
pub fn predict(segmentor: &Segmentor, images: &[ImageSample]) -> Result<Vec<LabelMask>> {
    const CHUNK: usize = 8;
    let (h, w) = (segmentor.config.input_height, segmentor.config.input_width);
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(CHUNK) {
        let tensors: Vec<Tensor4> = chunk.iter().map(|im| im.to_tensor(h, w)).collect();
        let probs = segmentor.forward(&Tensor4::stack(tensors.iter())?)?;
        for (i, im) in chunk.iter().enumerate() {
            out.push(argmax_mask(&probs, i).resize_nearest(im.height, im.width));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_cycles_every_item_once_per_epoch() {
        let mut s = CyclicSampler::new(5, 3, SOURCE_STREAM);
        let mut first: Vec<usize> = s.take(5);
        first.sort_unstable();
        assert_eq!(first, [0, 1, 2, 3, 4]);
        // Epoch boundary inside one request.
        let a = s.take(3);
        let b = s.take(4);
        let mut second: Vec<usize> = a.iter().chain(&b[..2]).copied().collect();
        second.sort_unstable();
        assert_eq!(second, [0, 1, 2, 3, 4]);
        assert!(CyclicSampler::new(0, 1, 0).take(4).is_empty());
    }

    #[test]
    fn argmax_ties_go_to_background() {
        let probs = Tensor4::from_vec(1, 1, 2, 4, alloc::vec![0.25; 8]).unwrap();
        assert_eq!(argmax_mask(&probs, 0).classes, [0, 0]);
        let probs = Tensor4::from_vec(1, 1, 1, 3, alloc::vec![0.2, 0.4, 0.4]).unwrap();
        assert_eq!(argmax_mask(&probs, 0).classes, [1]);
    }
}
