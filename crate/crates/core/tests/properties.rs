use std::collections::BTreeSet;

use cardioseg_core::data::{
    select_labeled_fraction, split_dataset, DatasetManifest, Domain, LabelMask, ManifestEntry,
    NUM_CLASSES,
};
use cardioseg_core::loss::{cross_entropy_seg, one_hot, LossConfig};
use cardioseg_core::metrics::{ctr_errors, iou, LUNG_CLASSES};
use cardioseg_core::nn::{softmax_channels, Tensor4};
use proptest::prelude::*;

fn manifest(n: usize) -> DatasetManifest {
    let entries = (0..n)
        .map(|i| ManifestEntry {
            id: format!("img{i:03}"),
            image: format!("img{i:03}.png"),
            mask: Some(format!("mask{i:03}.png")),
            domain: Domain::Source,
            reference_mask: None,
            pixel_spacing: None,
        })
        .collect();
    DatasetManifest::new(entries).unwrap()
}

fn ids(m: &DatasetManifest) -> BTreeSet<String> {
    m.entries.iter().map(|e| e.id.clone()).collect()
}

proptest! {
    #[test]
    fn cross_entropy_ignores_pixel_order(
        logits in prop::collection::vec(-3.0f64..3.0, 12 * 3),
        classes in prop::collection::vec(0u8..3, 12),
        seed in any::<u64>(),
    ) {
        let pred = softmax_channels(&Tensor4::from_vec(1, 3, 4, 3, logits).unwrap());
        let labels = one_hot(&classes, 3, 4, 3);
        let cfg = LossConfig::default();
        let base = cross_entropy_seg(&pred, &labels, &cfg).unwrap();
        // Fisher-Yates driven by a tiny LCG so the permutation depends on `seed`.
        let mut perm: Vec<usize> = (0..12).collect();
        let mut s = seed;
        for i in (1..12).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let mut p2 = pred.clone();
        let mut l2 = labels.clone();
        for (dst, &src) in perm.iter().enumerate() {
            p2.data[dst * 3..dst * 3 + 3].copy_from_slice(&pred.data[src * 3..src * 3 + 3]);
            l2.data[dst * 3..dst * 3 + 3].copy_from_slice(&labels.data[src * 3..src * 3 + 3]);
        }
        let permuted = cross_entropy_seg(&p2, &l2, &cfg).unwrap();
        prop_assert!((base - permuted).abs() < 1e-12);
    }

    #[test]
    fn one_hot_rows_sum_to_one(classes in prop::collection::vec(0u8..4, 1..40)) {
        let t = one_hot(&classes, 1, classes.len(), 4);
        for (px, &k) in t.data.chunks_exact(4).zip(&classes) {
            prop_assert_eq!(px.iter().sum::<f64>(), 1.0);
            prop_assert_eq!(px[k as usize], 1.0);
        }
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 4 * 5)) {
        let p = softmax_channels(&Tensor4::from_vec(1, 1, 4, 5, logits).unwrap());
        for px in p.data.chunks_exact(5) {
            prop_assert!((px.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(px.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn iou_is_symmetric_and_bounded(
        a in prop::collection::vec(0u8..4, 64),
        b in prop::collection::vec(0u8..4, 64),
    ) {
        let ma = LabelMask::new(8, 8, NUM_CLASSES, a).unwrap();
        let mb = LabelMask::new(8, 8, NUM_CLASSES, b).unwrap();
        let ab = iou(&ma, &mb, &LUNG_CLASSES).unwrap();
        let ba = iou(&mb, &ma, &LUNG_CLASSES).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(iou(&ma, &ma, &LUNG_CLASSES).unwrap(), 1.0);
    }

    #[test]
    fn rmse_dominates_mean_absolute_error(
        pairs in prop::collection::vec((0.01f64..1.0, 0.01f64..1.0), 1..50),
    ) {
        let (pred, truth): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let s = ctr_errors(&pred, &truth).unwrap();
        prop_assert!(s.rmse + 1e-15 >= s.ae.mean);
    }

    #[test]
    fn splits_partition_the_dataset(n in 2usize..300, frac in 0.01f64..0.99, seed in any::<u64>()) {
        let m = manifest(n);
        let (train, test) = split_dataset(&m, frac, seed).unwrap();
        let expected = ((frac * n as f64).round() as usize).clamp(1, n - 1);
        prop_assert_eq!(train.len(), expected);
        let (a, b) = (ids(&train), ids(&test));
        prop_assert!(a.is_disjoint(&b));
        prop_assert_eq!(a.union(&b).count(), n);
        let (again, _) = split_dataset(&m, frac, seed).unwrap();
        prop_assert_eq!(again, train);
    }

    #[test]
    fn labeled_subsets_partition_and_keep_reference_masks(
        n in 1usize..120,
        frac in 0.01f64..=1.0,
        seed in any::<u64>(),
    ) {
        let m = manifest(n);
        let (lab, unl) = select_labeled_fraction(&m, frac, seed).unwrap();
        prop_assert_eq!(lab.len(), ((frac * n as f64).round() as usize).clamp(1, n));
        prop_assert_eq!(lab.len() + unl.len(), n);
        prop_assert!(ids(&lab).is_disjoint(&ids(&unl)));
        prop_assert!(lab.entries.iter().all(|e| e.mask.is_some()));
        prop_assert!(unl.entries.iter().all(|e| e.mask.is_none() && e.reference_mask.is_some()));
    }
}
