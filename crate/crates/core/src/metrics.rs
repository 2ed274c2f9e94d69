//! Evaluation metrics: CTR error statistics, IoU and cardiomegaly
//! confusion rates.
//!
//! MAE is the mean absolute CTR difference in ratio units; reports display
//! it in percentage points (0.05 → "5.0%"), next to APE which is relative.
//! Spreads are population standard deviations. Rates whose denominator is
//! zero are `None` ("undefined"), never NaN.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{LabelMask, HEART, LEFT_LUNG, RIGHT_LUNG};
use crate::error::{shape_err, Error, Result};

/// Lung classes pooled into one region.
pub const LUNG_CLASSES: [u8; 2] = [RIGHT_LUNG, LEFT_LUNG];
pub const HEART_CLASSES: [u8; 1] = [HEART];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: libm::sqrt(var),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtrErrorStats {
    /// Relative error `|pred − true| / true`.
    pub ape: MeanStd,
    /// Absolute error in ratio units.
    pub ae: MeanStd,
    pub rmse: f64,
    pub n: usize,
}

pub fn ctr_errors(pred: &[f64], truth: &[f64]) -> Result<CtrErrorStats> {
    if pred.len() != truth.len() {
        return Err(shape_err("ctr_errors", truth.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("no CTR samples".into()));
    }
    if let Some(t) = truth.iter().find(|t| !(**t > 0.0)) {
        return Err(Error::InvalidArgument(alloc::format!(
            "reference CTR must be positive, got {t}"
        )));
    }
    let ae: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).collect();
    let ape: Vec<f64> = ae.iter().zip(truth).map(|(e, t)| e / t).collect();
    let mse = ae.iter().map(|e| e * e).sum::<f64>() / ae.len() as f64;
    Ok(CtrErrorStats {
        ape: MeanStd::of(&ape).expect("non-empty"),
        ae: MeanStd::of(&ae).expect("non-empty"),
        rmse: libm::sqrt(mse),
        n: pred.len(),
    })
}

/// Intersection over union of the pixels whose class is in `classes`.
/// Two empty regions have IoU 1.
pub fn iou(pred: &LabelMask, truth: &LabelMask, classes: &[u8]) -> Result<f64> {
    if (pred.height, pred.width) != (truth.height, truth.width) {
        return Err(shape_err(
            "iou",
            (truth.height, truth.width),
            (pred.height, pred.width),
        ));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in pred.classes.iter().zip(&truth.classes) {
        let (a, b) = (classes.contains(&p), classes.contains(&t));
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

fn rate(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn confusion_metrics(pred_flags: &[bool], true_flags: &[bool]) -> Result<ConfusionMetrics> {
    if pred_flags.len() != true_flags.len() {
        return Err(shape_err("confusion_metrics", true_flags.len(), pred_flags.len()));
    }
    if pred_flags.is_empty() {
        return Err(Error::InvalidArgument("no cardiomegaly flags".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &t) in pred_flags.iter().zip(true_flags) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(ConfusionMetrics {
        tp,
        fp,
        tn,
        fn_,
        accuracy: rate(tp + tn, tp + fp + tn + fn_),
        precision: rate(tp, tp + fp),
        sensitivity: rate(tp, tp + fn_),
        specificity: rate(tn, tn + fp),
    })
}

/// Everything an evaluation run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    /// Images whose CTR could not be estimated from the prediction.
    pub ctr_failures: usize,
    pub ape_mean: Option<f64>,
    pub ape_std: Option<f64>,
    pub mae_mean: Option<f64>,
    pub mae_std: Option<f64>,
    pub rmse: Option<f64>,
    pub iou_lungs: Option<MeanStd>,
    pub iou_heart: Option<MeanStd>,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

impl MetricsReport {
    pub fn new(
        n_samples: usize,
        ctr_failures: usize,
        ctr: Option<&CtrErrorStats>,
        iou_lungs: &[f64],
        iou_heart: &[f64],
        confusion: Option<&ConfusionMetrics>,
    ) -> Self {
        Self {
            n_samples,
            ctr_failures,
            ape_mean: ctr.map(|c| c.ape.mean),
            ape_std: ctr.map(|c| c.ape.std),
            mae_mean: ctr.map(|c| c.ae.mean),
            mae_std: ctr.map(|c| c.ae.std),
            rmse: ctr.map(|c| c.rmse),
            iou_lungs: MeanStd::of(iou_lungs),
            iou_heart: MeanStd::of(iou_heart),
            accuracy: confusion.and_then(|c| c.accuracy),
            precision: confusion.and_then(|c| c.precision),
            sensitivity: confusion.and_then(|c| c.sensitivity),
            specificity: confusion.and_then(|c| c.specificity),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::NUM_CLASSES;
    use alloc::vec;

    #[test]
    fn ctr_error_examples() {
        let s = ctr_errors(&[0.4, 0.6], &[0.4, 0.6]).unwrap();
        assert_eq!((s.ape.mean, s.ae.mean, s.rmse), (0.0, 0.0, 0.0));
        let s = ctr_errors(&[0.55], &[0.50]).unwrap();
        assert!((s.ape.mean - 0.10).abs() < 1e-12);
        assert!((s.ae.mean - 0.05).abs() < 1e-12);
        assert!((s.rmse - 0.05).abs() < 1e-12);
        let s = ctr_errors(&[0.53, 0.46], &[0.50, 0.50]).unwrap();
        assert!((s.rmse - libm::sqrt((0.0009 + 0.0016) / 2.0)).abs() < 1e-12);
        assert!((s.rmse - 0.035355).abs() < 1e-6);
    }

    #[test]
    fn ctr_error_rejections() {
        assert!(ctr_errors(&[0.5], &[0.5, 0.4]).is_err());
        assert!(ctr_errors(&[0.5], &[0.0]).is_err());
        assert!(ctr_errors(&[], &[]).is_err());
    }

    fn strip(start: usize, len: usize) -> LabelMask {
        let mut m = LabelMask::filled(1, 20, NUM_CLASSES, 0);
        for x in start..start + len {
            m.set(x, 0, RIGHT_LUNG);
        }
        m
    }

    #[test]
    fn iou_examples() {
        let a = strip(0, 10);
        assert_eq!(iou(&a, &a, &LUNG_CLASSES).unwrap(), 1.0);
        assert_eq!(iou(&strip(0, 5), &strip(10, 5), &LUNG_CLASSES).unwrap(), 0.0);
        assert!((iou(&strip(0, 10), &strip(5, 10), &LUNG_CLASSES).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        // no heart anywhere
        assert_eq!(iou(&a, &a, &HEART_CLASSES).unwrap(), 1.0);
        assert!(iou(&a, &LabelMask::filled(2, 10, NUM_CLASSES, 0), &LUNG_CLASSES).is_err());
    }

    #[test]
    fn lungs_pool_both_classes() {
        let mut a = strip(0, 10);
        let mut b = strip(0, 10);
        a.set(0, 0, LEFT_LUNG);
        b.set(9, 0, LEFT_LUNG);
        assert_eq!(iou(&a, &b, &LUNG_CLASSES).unwrap(), 1.0);
    }

    #[test]
    fn confusion_examples() {
        let c = confusion_metrics(&[true, false, true, false], &[true, false, true, false]).unwrap();
        assert_eq!(
            (c.accuracy, c.precision, c.sensitivity, c.specificity),
            (Some(1.0), Some(1.0), Some(1.0), Some(1.0))
        );
        // TP=3, FP=1, FN=1, TN=5
        let mut pred = vec![true; 4];
        let mut truth = vec![true, true, true, false];
        pred.push(false);
        truth.push(true);
        pred.extend([false; 5]);
        truth.extend([false; 5]);
        let c = confusion_metrics(&pred, &truth).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (3, 1, 1, 5));
        assert_eq!(c.accuracy, Some(0.8));
        assert_eq!(c.precision, Some(0.75));
        assert_eq!(c.sensitivity, Some(0.75));
        assert!((c.specificity.unwrap() - 5.0 / 6.0).abs() < 1e-15);

        let c = confusion_metrics(&[false, true], &[false, false]).unwrap();
        assert_eq!(c.sensitivity, None);
        assert_eq!(c.specificity, Some(0.5));
        assert!(confusion_metrics(&[true], &[]).is_err());
    }
}
