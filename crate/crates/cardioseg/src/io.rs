//! PNG images and masks, TOML manifests.
//!
//! Images are single-channel 8- or 16-bit PNGs normalised to `[0, 1]`;
//! masks are 8-bit single-channel PNGs holding class indices. Manifest
//! paths are relative to the manifest's own directory.

use std::fs;
use std::path::{Path, PathBuf};

use cardioseg_core::data::{DatasetManifest, Domain, ImageSample, LabelMask, ManifestEntry, NUM_CLASSES};
use image::{DynamicImage, ImageBuffer, Luma};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses TOML, reporting the line, column and offending field on failure.
pub fn parse_toml<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let mut message = e.message().to_string();
        if let Some(span) = e.span() {
            let line = text[..span.start].matches('\n').count() + 1;
            let col = span.start - text[..span.start].rfind('\n').map_or(0, |i| i + 1) + 1;
            message = format!("line {line}, column {col}: {message}");
        }
        Error::Parse {
            path: path.to_path_buf(),
            message,
        }
    })
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string_pretty(value).map_err(|e| Error::Config(format!("cannot serialise to TOML: {e}")))
}

pub fn read_image(
    path: &Path,
    id: &str,
    domain: Domain,
    pixel_spacing: Option<(f64, f64)>,
) -> Result<ImageSample> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        other => {
            return Err(Error::Image {
                path: path.to_path_buf(),
                message: format!("expected a single-channel image, found {:?}", other.color()),
            })
        }
    };
    Ok(ImageSample::new(id, h, w, pixels, domain, pixel_spacing)?)
}

/// Writes a 16-bit grayscale PNG.
pub fn write_image(path: &Path, image: &ImageSample) -> Result<()> {
    let raw: Vec<u16> = image
        .pixels
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(image.width as u32, image.height as u32, raw).expect("buffer matches size");
    save(path, &DynamicImage::ImageLuma16(buf))
}

pub fn read_mask(path: &Path) -> Result<LabelMask> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let DynamicImage::ImageLuma8(buf) = img else {
        return Err(Error::Image {
            path: path.to_path_buf(),
            message: format!("masks must be 8-bit single-channel, found {:?}", img.color()),
        });
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    LabelMask::new(h, w, NUM_CLASSES, buf.into_raw()).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_mask(path: &Path, mask: &LabelMask) -> Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(mask.width as u32, mask.height as u32, mask.classes.clone())
            .expect("buffer matches size");
    save(path, &DynamicImage::ImageLuma8(buf))
}

pub(crate) fn save(path: &Path, img: &DynamicImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// A validated manifest together with the directory its paths are
/// relative to.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub data: DatasetManifest,
}

impl Manifest {
    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn image(&self, e: &ManifestEntry) -> Result<ImageSample> {
        read_image(&self.resolve(&e.image), &e.id, e.domain, e.pixel_spacing)
    }

    /// Training mask, or the withheld reference mask for unlabeled entries.
    pub fn any_mask(&self, e: &ManifestEntry) -> Option<PathBuf> {
        e.mask.as_ref().or(e.reference_mask.as_ref()).map(|m| self.resolve(m))
    }

    /// Image and mask of an entry, checked against each other.
    pub fn labeled(&self, e: &ManifestEntry) -> Result<(ImageSample, LabelMask)> {
        let image = self.image(e)?;
        let path = self
            .any_mask(e)
            .ok_or_else(|| Error::Config(format!("entry `{}` has no mask", e.id)))?;
        let mask = read_mask(&path)?;
        mask.matches_image(&image).map_err(|err| Error::Image {
            path,
            message: err.to_string(),
        })?;
        Ok((image, mask))
    }

    pub fn with_data(&self, data: DatasetManifest) -> Self {
        Self {
            dir: self.dir.clone(),
            data,
        }
    }
}

/// Reads a manifest, validates its schema and checks that every referenced
/// file exists.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = read_to_string(path)?;
    let data: DatasetManifest = parse_toml(&text, path)?;
    data.validate().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = Manifest { dir, data };
    for e in &manifest.data.entries {
        let files = [Some(&e.image), e.mask.as_ref(), e.reference_mask.as_ref()];
        for rel in files.into_iter().flatten() {
            let p = manifest.resolve(rel);
            if !p.is_file() {
                return Err(Error::MissingFile {
                    id: e.id.clone(),
                    path: p,
                });
            }
        }
    }
    Ok(manifest)
}

pub fn save_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    write_file(path, to_toml(manifest)?)
}
