//! End-to-end evaluation: segment, estimate CTR on prediction and ground
//! truth, and aggregate metrics.
//!
//! The reference CTR of an image is the estimator applied to its
//! ground-truth mask. When the estimator fails on a prediction, the image
//! counts as a CTR failure with predicted ratio 0 (APE 100%, no
//! cardiomegaly). Images whose ground truth has no valid CTR are left out
//! of the CTR statistics.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ctr::{estimate_ctr, CtrOptions, CtrResult};
use crate::data::{ImageSample, LabelMask};
use crate::error::{shape_err, Result};
use crate::metrics::{confusion_metrics, ctr_errors, iou, MetricsReport, HEART_CLASSES, LUNG_CLASSES};
use crate::model::Segmentor;
use crate::train::predict;

/// Per-image outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub iou_lungs: f64,
    pub iou_heart: f64,
    pub reference_ctr: Option<f64>,
    pub predicted: Option<CtrResult>,
    /// Why the estimator failed on the prediction.
    pub failure: Option<String>,
}

impl ImageRecord {
    pub fn predicted_ctr(&self) -> Option<f64> {
        self.predicted.as_ref().map(|r| r.ratio)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub records: Vec<ImageRecord>,
    pub predictions: Vec<LabelMask>,
}

/// Scores predicted masks against ground truth.
pub fn evaluate_masks(
    ids: &[&str],
    spacings: &[Option<(f64, f64)>],
    predictions: &[LabelMask],
    truths: &[LabelMask],
    options: &CtrOptions,
) -> Result<(MetricsReport, Vec<ImageRecord>)> {
    let n = predictions.len();
    if truths.len() != n || ids.len() != n || spacings.len() != n {
        return Err(shape_err("evaluation inputs", n, (ids.len(), spacings.len(), truths.len())));
    }
    let mut records = Vec::with_capacity(n);
    let (mut pred_ctr, mut true_ctr) = (Vec::new(), Vec::new());
    let (mut pred_flags, mut true_flags) = (Vec::new(), Vec::new());
    let mut failures = 0;
    for i in 0..n {
        let (p, t) = (&predictions[i], &truths[i]);
        let reference = estimate_ctr(t, spacings[i], options).ok().map(|e| e.result.ratio);
        let (predicted, failure) = match estimate_ctr(p, spacings[i], options) {
            Ok(e) => (Some(e.result), None),
            Err(e) => (None, Some(e.to_string())),
        };
        if let Some(r) = reference {
            let ratio = predicted.as_ref().map_or(0.0, |c| c.ratio);
            failures += predicted.is_none() as usize;
            pred_ctr.push(ratio);
            true_ctr.push(r);
            pred_flags.push(ratio > options.threshold);
            true_flags.push(r > options.threshold);
        }
        records.push(ImageRecord {
            id: ids[i].to_string(),
            iou_lungs: iou(p, t, &LUNG_CLASSES)?,
            iou_heart: iou(p, t, &HEART_CLASSES)?,
            reference_ctr: reference,
            predicted,
            failure,
        });
    }
    let ctr = if true_ctr.is_empty() {
        None
    } else {
        Some(ctr_errors(&pred_ctr, &true_ctr)?)
    };
    let confusion = if true_flags.is_empty() {
        None
    } else {
        Some(confusion_metrics(&pred_flags, &true_flags)?)
    };
    let lungs: Vec<f64> = records.iter().map(|r| r.iou_lungs).collect();
    let heart: Vec<f64> = records.iter().map(|r| r.iou_heart).collect();
    let report = MetricsReport::new(n, failures, ctr.as_ref(), &lungs, &heart, confusion.as_ref());
    Ok((report, records))
}

/// Segments `images` with `segmentor` and scores the result.
pub fn evaluate(
    segmentor: &Segmentor,
    images: &[ImageSample],
    truths: &[LabelMask],
    options: &CtrOptions,
) -> Result<Evaluation> {
    let predictions = predict(segmentor, images)?;
    let ids: Vec<&str> = images.iter().map(|im| im.id.as_str()).collect();
    let spacings: Vec<_> = images.iter().map(|im| im.pixel_spacing).collect();
    let (report, records) = evaluate_masks(&ids, &spacings, &predictions, truths, options)?;
    Ok(Evaluation {
        report,
        records,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Domain;
    use crate::phantom::{generate_phantom, PhantomSpec};

    #[test]
    fn perfect_predictions_score_perfectly() {
        let p = generate_phantom(
            &PhantomSpec::rectangles(100, 100, (10, 90), (40, 60), (15, 85)),
            "r",
            Domain::Source,
        )
        .unwrap();
        let empty = LabelMask::filled(100, 100, p.mask.num_classes, 0);
        let (report, records) = evaluate_masks(
            &["a", "b"],
            &[None, None],
            &[p.mask.clone(), empty],
            &[p.mask.clone(), p.mask.clone()],
            &CtrOptions::default(),
        )
        .unwrap();
        assert_eq!(records[0].predicted_ctr(), Some(0.25));
        assert_eq!(records[0].iou_lungs, 1.0);
        assert!(records[1].failure.is_some());
        assert_eq!(report.ctr_failures, 1);
        // APE is 0 for the first image and 1 for the failed one.
        assert_eq!(report.ape_mean, Some(0.5));
        assert_eq!(report.n_samples, 2);
    }
}
