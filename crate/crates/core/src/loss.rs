//! Segmentation and adversarial objectives.
//!
//! Every objective has a plain evaluation function returning a
//! [`BatchLossReport`] and a `*_with_grad` twin that also returns the
//! gradient with respect to its inputs (class probabilities and
//! discriminator scores). Gradients with respect to network parameters are
//! obtained by feeding these into the model backward passes.
//!
//! Batch normalisation uses the realised batch length: `B_S` is the number of
//! source predictions, `B_D` the number of ground-truth masks shown to the
//! discriminator. All logarithm arguments are clamped to `[eps_log, 1]`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the adversarial term in the segmentor objective.
    pub lambda_adv: f64,
    /// Segmentor batch size `B_S` used by the sampler.
    pub batch_source: usize,
    /// Discriminator batch size `B_D` used by the sampler.
    pub batch_disc: usize,
    /// Lower clamp for logarithm arguments.
    pub eps_log: f64,
    /// Ground-truth masks shown to the discriminator become
    /// `(1 - ε)·y + ε/C`. Zero keeps raw one-hot maps.
    #[serde(default)]
    pub real_label_smoothing: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_adv: 1e-4,
            batch_source: 8,
            batch_disc: 8,
            eps_log: 1e-7,
            real_label_smoothing: 0.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_adv >= 0.0) || !self.lambda_adv.is_finite() {
            return Err(Error::Config(alloc::format!(
                "lambda_adv must be finite and >= 0, got {}",
                self.lambda_adv
            )));
        }
        if !(self.eps_log > 0.0 && self.eps_log <= 1e-3) {
            return Err(Error::Config(alloc::format!(
                "eps_log must lie in (0, 1e-3], got {}",
                self.eps_log
            )));
        }
        if !(0.0..1.0).contains(&self.real_label_smoothing) {
            return Err(Error::Config(alloc::format!(
                "real_label_smoothing must lie in [0, 1), got {}",
                self.real_label_smoothing
            )));
        }
        if self.batch_source == 0 || self.batch_disc == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Applies [`LossConfig::real_label_smoothing`] to one-hot masks.
pub fn smooth_labels(labels: &Tensor4, eps: f64) -> Tensor4 {
    if eps == 0.0 {
        return labels.clone();
    }
    let floor = eps / labels.c as f64;
    let mut out = labels.clone();
    for v in &mut out.data {
        *v = (1.0 - eps) * *v + floor;
    }
    out
}

/// All loss components of one step. Unweighted adversarial terms are stored
/// separately; the totals are
///
/// - `j_s_total = j_seg + λ·j_adv_source + λ·j_adv_target`
/// - `j_d_total = j_d_real + j_d_fake_source + j_d_fake_target`
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BatchLossReport {
    pub j_seg: f64,
    pub j_adv_source: f64,
    pub j_adv_target: f64,
    pub j_s_total: f64,
    pub j_d_real: f64,
    pub j_d_fake_source: f64,
    pub j_d_fake_target: f64,
    pub j_d_total: f64,
}

/// Gradients of a segmentor objective.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentorLossGrad {
    pub dpred: Tensor4,
    pub dscores_source: Vec<f64>,
    pub dscores_target: Vec<f64>,
}

/// Gradients of a discriminator objective.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorLossGrad {
    pub dreal: Vec<f64>,
    pub dfake_source: Vec<f64>,
    pub dfake_target: Vec<f64>,
}

#[inline]
fn clamped_ln(p: f64, eps: f64) -> f64 {
    libm::log(p.clamp(eps, 1.0))
}

/// d/dp of [`clamped_ln`]; zero where the clamp is active.
#[inline]
fn clamped_ln_grad(p: f64, eps: f64) -> f64 {
    if p > eps && p <= 1.0 {
        1.0 / p
    } else {
        0.0
    }
}

fn check_scores(scores: &[f64]) -> Result<()> {
    for (index, &value) in scores.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::ScoreOutOfRange { index, value });
        }
    }
    Ok(())
}

fn check_seg_inputs(pred: &Tensor4, labels: &Tensor4) -> Result<()> {
    if pred.shape() != labels.shape() {
        return Err(shape_err("cross-entropy", labels.shape(), pred.shape()));
    }
    if pred.n == 0 || pred.h == 0 || pred.w == 0 || pred.c == 0 {
        return Err(shape_err("cross-entropy", "non-empty", pred.shape()));
    }
    for (pixel, px) in labels.data.chunks_exact(labels.c).enumerate() {
        let ones = px.iter().filter(|&&v| v == 1.0).count();
        let zeros = px.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != px.len() {
            return Err(Error::NotOneHot { pixel });
        }
    }
    if let Some(pixel) = pred.data.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NotNormalized {
            pixel: pixel / pred.c,
            sum: f64::NAN,
        });
    }
    Ok(())
}

/// Mean over batch and pixels of `-Σ_c y log p`.
pub fn cross_entropy_seg(pred: &Tensor4, labels: &Tensor4, cfg: &LossConfig) -> Result<f64> {
    Ok(cross_entropy_seg_with_grad(pred, labels, cfg)?.0)
}

pub fn cross_entropy_seg_with_grad(
    pred: &Tensor4,
    labels: &Tensor4,
    cfg: &LossConfig,
) -> Result<(f64, Tensor4)> {
    check_seg_inputs(pred, labels)?;
    let c = pred.c;
    let norm = 1.0 / (pred.n * pred.h * pred.w) as f64;
    let mut grad = Tensor4::zeros(pred.n, pred.h, pred.w, c);
    let mut sum = 0.0;
    for ((p, y), g) in pred
        .data
        .chunks_exact(c)
        .zip(labels.data.chunks_exact(c))
        .zip(grad.data.chunks_exact_mut(c))
    {
        let k = y.iter().position(|&v| v == 1.0).expect("checked one-hot");
        sum += clamped_ln(p[k], cfg.eps_log);
        g[k] = -norm * clamped_ln_grad(p[k], cfg.eps_log);
    }
    Ok((-sum * norm, grad))
}

/// Segmentation loss plus the non-saturating adversarial term on source
/// predictions.
pub fn segmentor_loss(
    pred_source: &Tensor4,
    labels: &Tensor4,
    d_scores_source: &[f64],
    cfg: &LossConfig,
) -> Result<BatchLossReport> {
    Ok(segmentor_loss_with_grad(pred_source, labels, d_scores_source, cfg)?.0)
}

pub fn segmentor_loss_with_grad(
    pred_source: &Tensor4,
    labels: &Tensor4,
    d_scores_source: &[f64],
    cfg: &LossConfig,
) -> Result<(BatchLossReport, SegmentorLossGrad)> {
    let (j_seg, dpred) = cross_entropy_seg_with_grad(pred_source, labels, cfg)?;
    check_scores(d_scores_source)?;
    let b_s = pred_source.n;
    if d_scores_source.len() != b_s {
        return Err(shape_err("source scores", b_s, d_scores_source.len()));
    }
    let inv = 1.0 / b_s as f64;
    let j_adv_source = -inv * d_scores_source.iter().map(|&d| clamped_ln(d, cfg.eps_log)).sum::<f64>();
    let dscores_source = d_scores_source
        .iter()
        .map(|&d| -cfg.lambda_adv * inv * clamped_ln_grad(d, cfg.eps_log))
        .collect();
    let report = BatchLossReport {
        j_seg,
        j_adv_source,
        j_s_total: j_seg + cfg.lambda_adv * j_adv_source,
        ..BatchLossReport::default()
    };
    Ok((
        report,
        SegmentorLossGrad {
            dpred,
            dscores_source,
            dscores_target: Vec::new(),
        },
    ))
}

/// Discriminator loss on ground truth (real) versus source predictions.
pub fn discriminator_loss(
    d_real: &[f64],
    d_fake_source: &[f64],
    cfg: &LossConfig,
) -> Result<BatchLossReport> {
    Ok(discriminator_loss_with_grad(d_real, d_fake_source, cfg)?.0)
}

pub fn discriminator_loss_with_grad(
    d_real: &[f64],
    d_fake_source: &[f64],
    cfg: &LossConfig,
) -> Result<(BatchLossReport, DiscriminatorLossGrad)> {
    check_scores(d_real)?;
    check_scores(d_fake_source)?;
    let b_d = d_real.len();
    if b_d == 0 {
        return Err(Error::InvalidArgument("discriminator batch is empty".into()));
    }
    if d_fake_source.len() != b_d {
        return Err(shape_err("fake source scores", b_d, d_fake_source.len()));
    }
    let inv = 1.0 / b_d as f64;
    let eps = cfg.eps_log;
    let j_d_real = -inv * d_real.iter().map(|&d| clamped_ln(d, eps)).sum::<f64>();
    let j_d_fake_source = -inv * d_fake_source.iter().map(|&d| clamped_ln(1.0 - d, eps)).sum::<f64>();
    let grad = DiscriminatorLossGrad {
        dreal: d_real.iter().map(|&d| -inv * clamped_ln_grad(d, eps)).collect(),
        dfake_source: d_fake_source
            .iter()
            .map(|&d| inv * clamped_ln_grad(1.0 - d, eps))
            .collect(),
        dfake_target: Vec::new(),
    };
    let report = BatchLossReport {
        j_d_real,
        j_d_fake_source,
        j_d_total: j_d_real + j_d_fake_source,
        ..BatchLossReport::default()
    };
    Ok((report, grad))
}

/// Domain-adaptive segmentor loss: adds the adversarial term on target
/// predictions, still normalised by `B_S`. An empty target batch reproduces
/// [`segmentor_loss`] bit for bit.
pub fn da_segmentor_loss(
    pred_source: &Tensor4,
    labels: &Tensor4,
    d_scores_source: &[f64],
    d_scores_target: &[f64],
    cfg: &LossConfig,
) -> Result<BatchLossReport> {
    Ok(da_segmentor_loss_with_grad(pred_source, labels, d_scores_source, d_scores_target, cfg)?.0)
}

pub fn da_segmentor_loss_with_grad(
    pred_source: &Tensor4,
    labels: &Tensor4,
    d_scores_source: &[f64],
    d_scores_target: &[f64],
    cfg: &LossConfig,
) -> Result<(BatchLossReport, SegmentorLossGrad)> {
    let (mut report, mut grad) = segmentor_loss_with_grad(pred_source, labels, d_scores_source, cfg)?;
    check_scores(d_scores_target)?;
    let inv = 1.0 / pred_source.n as f64;
    let eps = cfg.eps_log;
    report.j_adv_target = -inv * d_scores_target.iter().map(|&d| clamped_ln(d, eps)).sum::<f64>();
    report.j_s_total += cfg.lambda_adv * report.j_adv_target;
    grad.dscores_target = d_scores_target
        .iter()
        .map(|&d| -cfg.lambda_adv * inv * clamped_ln_grad(d, eps))
        .collect();
    Ok((report, grad))
}

/// Domain-adaptive discriminator loss: target predictions are additional
/// fakes, normalised by `B_D`. An empty target batch reproduces
/// [`discriminator_loss`] bit for bit.
pub fn da_discriminator_loss(
    d_real: &[f64],
    d_fake_source: &[f64],
    d_fake_target: &[f64],
    cfg: &LossConfig,
) -> Result<BatchLossReport> {
    Ok(da_discriminator_loss_with_grad(d_real, d_fake_source, d_fake_target, cfg)?.0)
}

pub fn da_discriminator_loss_with_grad(
    d_real: &[f64],
    d_fake_source: &[f64],
    d_fake_target: &[f64],
    cfg: &LossConfig,
) -> Result<(BatchLossReport, DiscriminatorLossGrad)> {
    let (mut report, mut grad) = discriminator_loss_with_grad(d_real, d_fake_source, cfg)?;
    check_scores(d_fake_target)?;
    let inv = 1.0 / d_real.len() as f64;
    let eps = cfg.eps_log;
    report.j_d_fake_target = -inv * d_fake_target.iter().map(|&d| clamped_ln(1.0 - d, eps)).sum::<f64>();
    report.j_d_total += report.j_d_fake_target;
    grad.dfake_target = d_fake_target
        .iter()
        .map(|&d| inv * clamped_ln_grad(1.0 - d, eps))
        .collect();
    Ok((report, grad))
}

/// One-hot encodes class indices into a `1×H×W×C` tensor.
pub fn one_hot(classes: &[u8], h: usize, w: usize, num_classes: usize) -> Tensor4 {
    let mut data = vec![0.0; h * w * num_classes];
    for (i, &k) in classes.iter().enumerate() {
        data[i * num_classes + k as usize] = 1.0;
    }
    Tensor4 {
        n: 1,
        h,
        w,
        c: num_classes,
        data,
    }
}
