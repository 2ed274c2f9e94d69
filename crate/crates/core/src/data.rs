//! Images, label masks, dataset manifests and the deterministic splits.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{bilinear_resize, Tensor4};

pub const BACKGROUND: u8 = 0;
/// Patient's right lung, which appears on the image's left in a PA film.
pub const RIGHT_LUNG: u8 = 1;
pub const LEFT_LUNG: u8 = 2;
pub const HEART: u8 = 3;
pub const NUM_CLASSES: usize = 4;

/// Smallest accepted image side.
pub const MIN_SIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

/// A grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSample {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
    pub domain: Domain,
    /// `(dx, dy)` in millimetres.
    pub pixel_spacing: Option<(f64, f64)>,
}

impl ImageSample {
    pub fn new(
        id: impl Into<String>,
        height: usize,
        width: usize,
        pixels: Vec<f64>,
        domain: Domain,
        pixel_spacing: Option<(f64, f64)>,
    ) -> Result<Self> {
        let id = id.into();
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::InvalidArgument(format!(
                "image `{id}` is {height}x{width}; both sides must be at least {MIN_SIDE}"
            )));
        }
        if pixels.len() != height * width {
            return Err(shape_err("image pixels", height * width, pixels.len()));
        }
        if let Some(i) = pixels.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!(
                "image `{id}` has intensity {} at pixel {i} outside [0, 1]",
                pixels[i]
            )));
        }
        if let Some((dx, dy)) = pixel_spacing {
            if !(dx > 0.0 && dy > 0.0 && dx.is_finite() && dy.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "image `{id}` has non-positive pixel spacing ({dx}, {dy})"
                )));
            }
        }
        Ok(Self {
            id,
            height,
            width,
            pixels,
            domain,
            pixel_spacing,
        })
    }

    /// Bilinear resize to the training resolution as a `1×H×W×1` tensor.
    pub fn to_tensor(&self, height: usize, width: usize) -> Tensor4 {
        let t = Tensor4 {
            n: 1,
            h: self.height,
            w: self.width,
            c: 1,
            data: self.pixels.clone(),
        };
        if (height, width) == (self.height, self.width) {
            t
        } else {
            let mut r = bilinear_resize(&t, height, width);
            for v in &mut r.data {
                *v = v.clamp(0.0, 1.0);
            }
            r
        }
    }
}

/// Per-pixel class indices, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMask {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub classes: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, num_classes: usize, classes: Vec<u8>) -> Result<Self> {
        if classes.len() != height * width {
            return Err(shape_err("label mask", height * width, classes.len()));
        }
        if num_classes == 0 || num_classes > 256 {
            return Err(Error::InvalidArgument(format!("unsupported class count {num_classes}")));
        }
        if let Some(i) = classes.iter().position(|&k| k as usize >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "mask entry {} at pixel {i} is not below {num_classes}",
                classes[i]
            )));
        }
        Ok(Self {
            height,
            width,
            num_classes,
            classes,
        })
    }

    pub fn filled(height: usize, width: usize, num_classes: usize, class: u8) -> Self {
        Self {
            height,
            width,
            num_classes,
            classes: alloc::vec![class; height * width],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.classes[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, class: u8) {
        self.classes[y * self.width + x] = class;
    }

    pub fn matches_image(&self, image: &ImageSample) -> Result<()> {
        if (self.height, self.width) != (image.height, image.width) {
            return Err(shape_err(
                "mask vs image",
                (image.height, image.width),
                (self.height, self.width),
            ));
        }
        Ok(())
    }

    pub fn one_hot(&self) -> Tensor4 {
        crate::loss::one_hot(&self.classes, self.height, self.width, self.num_classes)
    }

    /// Mirror across the vertical axis.
    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(self.width - 1 - x, y, self.get(x, y));
            }
        }
        out
    }

    /// Shift by `(dx, dy)`, filling uncovered pixels with background.
    pub fn translate(&self, dx: isize, dy: isize) -> Self {
        let mut out = Self::filled(self.height, self.width, self.num_classes, BACKGROUND);
        for y in 0..self.height {
            for x in 0..self.width {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx >= 0 && ny >= 0 && (nx as usize) < self.width && (ny as usize) < self.height {
                    out.set(nx as usize, ny as usize, self.get(x, y));
                }
            }
        }
        out
    }

    /// Nearest-neighbour resize with half-pixel centres.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Self {
        let src = |d: usize, dst: usize, len: usize| {
            ((((d as f64 + 0.5) * len as f64) / dst as f64) as usize).min(len - 1)
        };
        let mut out = Self::filled(height, width, self.num_classes, BACKGROUND);
        for y in 0..height {
            let sy = src(y, height, self.height);
            for x in 0..width {
                out.set(x, y, self.get(src(x, width, self.width), sy));
            }
        }
        out
    }
}

/// One dataset entry. Paths are stored as written in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    pub domain: Domain,
    /// Mask withheld from training (unlabeled split); evaluation only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_spacing: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    #[serde(default)]
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            entries,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Schema version and id uniqueness.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported manifest schema_version {} (expected {MANIFEST_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
        }
        Ok(())
    }

    /// Every entry must carry a training mask (supervised use).
    pub fn require_masks(&self) -> Result<()> {
        match self.entries.iter().find(|e| e.mask.is_none()) {
            Some(e) => Err(Error::InvalidArgument(format!(
                "entry `{}` has no mask but is used for supervised training",
                e.id
            ))),
            None => Ok(()),
        }
    }

    fn subset(&self, picked: &[usize]) -> Self {
        Self {
            schema_version: self.schema_version,
            entries: picked.iter().map(|&i| self.entries[i].clone()).collect(),
        }
    }

    /// Seeded partition into `(chosen, rest)`; both keep manifest order.
    fn partition(&self, count: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let mut idx: Vec<usize> = (0..self.entries.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        let mut chosen = idx[..count].to_vec();
        let mut rest = idx[count..].to_vec();
        chosen.sort_unstable();
        rest.sort_unstable();
        (chosen, rest)
    }
}

fn rounded_count(fraction: f64, n: usize) -> usize {
    libm::round(fraction * n as f64) as usize
}

/// Random train/test split with `round(fraction·N)` training entries
/// (clamped so that neither side is empty).
pub fn split_dataset(
    manifest: &DatasetManifest,
    train_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    let n = manifest.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("cannot split {n} entries")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let count = rounded_count(train_fraction, n).clamp(1, n - 1);
    let (train, test) = manifest.partition(count, seed);
    Ok((manifest.subset(&train), manifest.subset(&test)))
}

/// Picks `round(fraction·N)` labeled entries (at least one). The remaining
/// entries lose their training mask, which moves to `reference_mask`.
pub fn select_labeled_fraction(
    train: &DatasetManifest,
    fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "labeled fraction must lie in (0, 1], got {fraction}"
        )));
    }
    train.require_masks()?;
    let n = train.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty training manifest".into()));
    }
    let count = rounded_count(fraction, n).clamp(1, n);
    let (labeled, unlabeled) = train.partition(count, seed);
    let mut unlabeled = train.subset(&unlabeled);
    for e in &mut unlabeled.entries {
        e.reference_mask = e.mask.take();
    }
    Ok((train.subset(&labeled), unlabeled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn manifest(n: usize) -> DatasetManifest {
        DatasetManifest::new(
            (0..n)
                .map(|i| ManifestEntry {
                    id: format!("img{i:03}"),
                    image: format!("img{i:03}.png"),
                    mask: Some(format!("img{i:03}_mask.png")),
                    domain: Domain::Source,
                    reference_mask: None,
                    pixel_spacing: None,
                })
                .collect(),
        )
        .unwrap()
    }

    fn ids(m: &DatasetManifest) -> BTreeSet<String> {
        m.entries.iter().map(|e| e.id.clone()).collect()
    }

    #[test]
    fn jsrt_sized_split() {
        let m = manifest(247);
        let (train, test) = split_dataset(&m, 0.8, 7).unwrap();
        assert_eq!((train.len(), test.len()), (198, 49));
        let (a, b) = (ids(&train), ids(&test));
        assert!(a.is_disjoint(&b));
        assert_eq!(a.union(&b).cloned().collect::<BTreeSet<_>>(), ids(&m));
        assert_eq!(split_dataset(&m, 0.8, 7).unwrap(), (train, test));
    }

    #[test]
    fn small_split_and_errors() {
        let (train, test) = split_dataset(&manifest(10), 0.8, 1).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        assert!(split_dataset(&manifest(1), 0.8, 1).is_err());
        assert!(split_dataset(&manifest(10), 1.0, 1).is_err());
        assert!(split_dataset(&manifest(10), 0.0, 1).is_err());
    }

    #[test]
    fn labeled_fraction_sizes() {
        let m = manifest(198);
        let (l, u) = select_labeled_fraction(&m, 0.5, 3).unwrap();
        assert_eq!((l.len(), u.len()), (99, 99));
        assert!(u.entries.iter().all(|e| e.mask.is_none() && e.reference_mask.is_some()));
        let (l, u) = select_labeled_fraction(&m, 1.0, 3).unwrap();
        assert_eq!((l.len(), u.len()), (198, 0));
        assert!(select_labeled_fraction(&m, 0.0, 3).is_err());
        assert!(select_labeled_fraction(&m, 1.2, 3).is_err());
    }

    #[test]
    fn labeled_subsets_depend_on_seed() {
        let m = manifest(198);
        let (a, _) = select_labeled_fraction(&m, 0.1, 1).unwrap();
        let (b, _) = select_labeled_fraction(&m, 0.1, 2).unwrap();
        assert_eq!((a.len(), b.len()), (20, 20));
        assert_ne!(ids(&a), ids(&b));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut m = manifest(2);
        m.entries[1].id = m.entries[0].id.clone();
        assert_eq!(m.validate(), Err(Error::DuplicateId("img000".to_string())));
    }

    #[test]
    fn image_invariants() {
        assert!(ImageSample::new("a", 15, 16, vec![0.0; 240], Domain::Source, None).is_err());
        assert!(ImageSample::new("a", 16, 16, vec![1.5; 256], Domain::Source, None).is_err());
        assert!(ImageSample::new("a", 16, 16, vec![0.5; 256], Domain::Target, Some((0.175, 0.175))).is_ok());
    }

    #[test]
    fn mask_entries_below_class_count() {
        assert!(LabelMask::new(1, 2, 4, vec![0, 4]).is_err());
        let m = LabelMask::new(1, 3, 4, vec![0, 3, 1]).unwrap();
        assert_eq!(m.flip_horizontal().classes, vec![1, 3, 0]);
        assert_eq!(m.translate(1, 0).classes, vec![0, 0, 3]);
    }

    #[test]
    fn nearest_resize_round_trips_integer_upscale() {
        let m = LabelMask::new(2, 2, 4, vec![0, 1, 2, 3]).unwrap();
        let up = m.resize_nearest(4, 4);
        assert_eq!(up.classes, vec![0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3]);
        assert_eq!(up.resize_nearest(2, 2), m);
    }
}
