//! Synthetic chest phantoms with an analytically known cardiothoracic ratio.
//!
//! Each lung is a vertical slab between its lateral and medial border with
//! a chamfered apex on the lateral side and, optionally, a triangular notch
//! cut upward from the diaphragm just lateral to a short medial tip. The
//! notch apex is the cardiodiaphragmatic angle; the bottom lateral corner is
//! the costophrenic angle. Above the heart the medial borders step toward
//! the midline by `mediastinum_inset`, so the widest medial extent lies
//! beside the heart. Border jitter only ever moves the lateral border
//! medially and the medial border toward the midline, and the anchor row
//! `heart_top` keeps both borders exact, so the extreme borders above the
//! angles stay at `x_C, x_A, x_B, x_D` and the ratio is
//! `(x_B − x_A) / (x_D − x_C)` in pixel-centre coordinates.
//!
//! The rendered image maps each class to a base intensity, then applies the
//! domain transform: `gain·v + bias`, an optional resolution loss (box
//! downsample by `blur` and bilinear upsample), additive Gaussian noise and
//! clamping to `[0, 1]`.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{
    Domain, ImageSample, LabelMask, BACKGROUND, HEART, LEFT_LUNG, NUM_CLASSES, RIGHT_LUNG,
};
use crate::error::{Error, Result};
use crate::nn::{bilinear_resize, Tensor4};

/// Base intensities before the contrast transform.
const OUTSIDE_LEVEL: f64 = 0.05;
const BODY_LEVEL: f64 = 0.6;
const LUNG_LEVEL: f64 = 0.2;
const HEART_LEVEL: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    /// Lateral lung borders `(x_C, x_D)`.
    pub thorax: (usize, usize),
    /// Medial lung borders `(x_A, x_B)`.
    pub cardiac: (usize, usize),
    pub lung_top: usize,
    pub lung_bottom: usize,
    /// First row of the heart silhouette.
    pub heart_top: usize,
    /// Medial border shift toward the midline in rows above the heart.
    #[serde(default)]
    pub mediastinum_inset: usize,
    /// Cardiodiaphragmatic notch depth per lung `(right, left)`; 0 = none.
    pub angle_depths: (usize, usize),
    /// Size of the lateral apex chamfer.
    #[serde(default)]
    pub apex_chamfer: usize,
    /// Maximum per-row border displacement.
    #[serde(default)]
    pub border_jitter: usize,
    pub noise_sigma: f64,
    pub gain: f64,
    pub bias: f64,
    /// Resolution-loss factor; 1 keeps full resolution.
    #[serde(default = "one")]
    pub blur: usize,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl PhantomSpec {
    /// Plain rectangular lungs on a clean canvas.
    pub fn rectangles(
        height: usize,
        width: usize,
        thorax: (usize, usize),
        cardiac: (usize, usize),
        rows: (usize, usize),
    ) -> Self {
        Self {
            height,
            width,
            thorax,
            cardiac,
            lung_top: rows.0,
            lung_bottom: rows.1,
            heart_top: (rows.0 + rows.1) / 2,
            mediastinum_inset: 0,
            angle_depths: (0, 0),
            apex_chamfer: 0,
            border_jitter: 0,
            noise_sigma: 0.0,
            gain: 1.0,
            bias: 0.0,
            blur: 1,
            seed: 0,
        }
    }

    pub fn true_ctr(&self) -> f64 {
        (self.cardiac.1 - self.cardiac.0) as f64 / (self.thorax.1 - self.thorax.0) as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::Config(msg));
        let (xc, xd) = self.thorax;
        let (xa, xb) = self.cardiac;
        let j = self.border_jitter;
        if self.height < crate::data::MIN_SIDE || self.width < crate::data::MIN_SIDE {
            return bad(format!("canvas {}x{} is too small", self.height, self.width));
        }
        if !(xc < xa && xa < xb && xb < xd && xd < self.width) {
            return bad(format!(
                "need x_C < x_A < x_B < x_D < width, got {xc}, {xa}, {xb}, {xd} (width {})",
                self.width
            ));
        }
        let m = self.mediastinum_inset;
        if xb - xa <= 2 * (j + m) + 2 {
            return bad(format!(
                "cardiac gap {} too narrow for jitter {j} and inset {m}",
                xb - xa
            ));
        }
        if !(self.lung_top < self.heart_top
            && self.heart_top <= self.lung_bottom
            && self.lung_bottom < self.height)
        {
            return bad("need lung_top < heart_top <= lung_bottom < height".into());
        }
        let lung_h = self.lung_bottom - self.lung_top;
        if lung_h < 6 {
            return bad(format!("lungs only {lung_h} rows tall"));
        }
        let deepest = self.angle_depths.0.max(self.angle_depths.1);
        if self.heart_top < self.lung_top + self.apex_chamfer || self.heart_top + deepest >= self.lung_bottom {
            return bad(format!(
                "heart_top {} must lie below the apex chamfer and above the notches",
                self.heart_top
            ));
        }
        for (name, width, depth) in [
            ("right", xa - xc, self.angle_depths.0),
            ("left", xd - xb, self.angle_depths.1),
        ] {
            if width < 2 * depth + 4 + j {
                return bad(format!("{name} lung too narrow for notch depth {depth}"));
            }
            if 3 * depth > lung_h {
                return bad(format!("{name} notch depth {depth} leaves the inferior third"));
            }
            if 2 * self.apex_chamfer >= width.saturating_sub(j) || 3 * self.apex_chamfer >= lung_h {
                return bad(format!("apex chamfer {} too large for {name} lung", self.apex_chamfer));
            }
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) || !self.bias.is_finite() {
            return bad("gain must be positive and bias finite".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and >= 0".into());
        }
        if self.blur == 0 {
            return bad("blur factor must be >= 1".into());
        }
        Ok(())
    }

    /// Horizontal mirror (swaps the roles of the two lungs).
    pub fn mirrored(&self) -> Self {
        let m = |x: usize| self.width - 1 - x;
        Self {
            thorax: (m(self.thorax.1), m(self.thorax.0)),
            cardiac: (m(self.cardiac.1), m(self.cardiac.0)),
            angle_depths: (self.angle_depths.1, self.angle_depths.0),
            ..self.clone()
        }
    }

    /// Every coordinate multiplied by `k`.
    pub fn scaled(&self, k: usize) -> Self {
        Self {
            height: self.height * k,
            width: self.width * k,
            thorax: (self.thorax.0 * k, self.thorax.1 * k),
            cardiac: (self.cardiac.0 * k, self.cardiac.1 * k),
            lung_top: self.lung_top * k,
            lung_bottom: self.lung_bottom * k,
            heart_top: self.heart_top * k,
            mediastinum_inset: self.mediastinum_inset * k,
            angle_depths: (self.angle_depths.0 * k, self.angle_depths.1 * k),
            apex_chamfer: self.apex_chamfer * k,
            border_jitter: self.border_jitter * k,
            ..self.clone()
        }
    }
}

/// Phantom image, its label mask and the analytic CTR.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: ImageSample,
    pub mask: LabelMask,
    pub true_ctr: f64,
}

/// Renders the mask and image described by `spec`.
pub fn generate_phantom(spec: &PhantomSpec, id: &str, domain: Domain) -> Result<Phantom> {
    spec.validate()?;
    let mask = render_mask(spec);
    let image = render_image(spec, &mask, id, domain)?;
    Ok(Phantom {
        image,
        mask,
        true_ctr: spec.true_ctr(),
    })
}

fn render_mask(spec: &PhantomSpec) -> LabelMask {
    let (h, w) = (spec.height, spec.width);
    let mut mask = LabelMask::filled(h, w, NUM_CLASSES, BACKGROUND);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let (top, bottom) = (spec.lung_top, spec.lung_bottom);
    let anchor = spec.heart_top;
    let j = spec.border_jitter;
    let mut jitter = |y: usize| -> (usize, usize) {
        if j == 0 || y == anchor {
            (0, 0)
        } else {
            (rng.random_range(0..=j), rng.random_range(0..=j))
        }
    };

    // Heart first; lungs overwrite it where they overlap.
    let cx = (spec.cardiac.0 + spec.cardiac.1) as f64 / 2.0;
    let ax = (spec.cardiac.1 - spec.cardiac.0) as f64 / 2.0;
    let ay = (bottom + 1 - spec.heart_top) as f64;
    for y in spec.heart_top..=bottom {
        for x in spec.cardiac.0 + 1..spec.cardiac.1 {
            let (u, v) = ((x as f64 - cx) / ax, (y as f64 - bottom as f64) / ay);
            if u * u + v * v <= 1.0 {
                mask.set(x, y, HEART);
            }
        }
    }

    let c = spec.apex_chamfer;
    let (xc, xd) = spec.thorax;
    let (xa, xb) = spec.cardiac;
    let (dr, dl) = spec.angle_depths;
    let m = spec.mediastinum_inset;
    // Notch apex columns, two pixels lateral of the medial tip plus depth.
    let notch_r = xa - dr - 2;
    let notch_l = xb + dl + 2;
    for y in top..=bottom {
        let chamfer = (top + c).saturating_sub(y);
        let (jl, jm) = jitter(y);
        let (ql, qm) = jitter(y);
        let inset = if y < spec.heart_top { m } else { 0 };
        // right lung: [lateral, medial]
        let lat = xc + jl + chamfer;
        let med = (xa + jm + inset).min(w - 1);
        for x in lat..=med {
            if !in_notch(x, y, notch_r, bottom, dr) {
                mask.set(x, y, RIGHT_LUNG);
            }
        }
        // left lung: [medial, lateral]
        let med = xb - qm - inset;
        let lat = xd - ql - chamfer;
        for x in med..=lat {
            if !in_notch(x, y, notch_l, bottom, dl) {
                mask.set(x, y, LEFT_LUNG);
            }
        }
    }
    mask
}

#[inline]
fn in_notch(x: usize, y: usize, apex_x: usize, bottom: usize, depth: usize) -> bool {
    if depth == 0 {
        return false;
    }
    let apex_y = bottom - depth;
    y > apex_y && (y - apex_y) > x.abs_diff(apex_x)
}

fn render_image(spec: &PhantomSpec, mask: &LabelMask, id: &str, domain: Domain) -> Result<ImageSample> {
    let (h, w) = (spec.height, spec.width);
    let bcx = (spec.thorax.0 + spec.thorax.1) as f64 / 2.0;
    let bcy = (spec.lung_top + spec.lung_bottom) as f64 / 2.0 + 2.0;
    let brx = (spec.thorax.1 - spec.thorax.0) as f64 / 2.0 + 4.0;
    let bry = (spec.lung_bottom - spec.lung_top) as f64 / 2.0 + 8.0;
    let mut base = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let v = match mask.get(x, y) {
                RIGHT_LUNG | LEFT_LUNG => LUNG_LEVEL,
                HEART => HEART_LEVEL,
                _ => {
                    let (u, q) = ((x as f64 - bcx) / brx, (y as f64 - bcy) / bry);
                    if u * u + q * q <= 1.0 {
                        BODY_LEVEL
                    } else {
                        OUTSIDE_LEVEL
                    }
                }
            };
            base.push(spec.gain * v + spec.bias);
        }
    }
    let mut img = Tensor4 {
        n: 1,
        h,
        w,
        c: 1,
        data: base,
    };
    if spec.blur > 1 {
        let small = box_downsample(&img, spec.blur);
        img = bilinear_resize(&small, h, w);
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::Config(format!("noise: {e}")))?;
        for v in &mut img.data {
            *v += normal.sample(&mut rng);
        }
    }
    for v in &mut img.data {
        *v = v.clamp(0.0, 1.0);
    }
    ImageSample::new(id, h, w, img.data, domain, None)
}

fn box_downsample(img: &Tensor4, k: usize) -> Tensor4 {
    let (sh, sw) = (img.h.div_ceil(k), img.w.div_ceil(k));
    let mut out = Tensor4::zeros(1, sh, sw, 1);
    for sy in 0..sh {
        for sx in 0..sw {
            let (mut sum, mut cnt) = (0.0, 0usize);
            for y in sy * k..((sy + 1) * k).min(img.h) {
                for x in sx * k..((sx + 1) * k).min(img.w) {
                    sum += img.at(0, y, x, 0);
                    cnt += 1;
                }
            }
            out.data[sy * sw + sx] = sum / cnt as f64;
        }
    }
    out
}

/// Ranges for drawing random phantom specs on a fixed canvas. Geometry is
/// expressed as fractions of the canvas size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSampler {
    pub height: usize,
    pub width: usize,
    /// Range of each lung's width as a fraction of the canvas width.
    pub lung_width: (f64, f64),
    /// Range of the cardiac gap as a fraction of the canvas width.
    pub cardiac_gap: (f64, f64),
    /// Range of the mediastinum inset as a fraction of the cardiac gap.
    pub mediastinum_inset: (f64, f64),
    pub max_angle_depth: usize,
    pub max_apex_chamfer: usize,
    pub border_jitter: usize,
    pub gain: (f64, f64),
    pub bias: (f64, f64),
    pub noise_sigma: (f64, f64),
    pub blur: usize,
}

impl PhantomSampler {
    /// Clean, source-domain style phantoms.
    pub fn source(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            lung_width: (0.19, 0.26),
            cardiac_gap: (0.25, 0.45),
            mediastinum_inset: (0.2, 0.3),
            max_angle_depth: 3,
            max_apex_chamfer: 3,
            border_jitter: 1,
            gain: (0.9, 1.1),
            bias: (-0.05, 0.05),
            noise_sigma: (0.01, 0.03),
            blur: 1,
        }
    }

    /// Lower contrast, brighter, noisier and blurred: a different protocol.
    pub fn shifted_target(height: usize, width: usize) -> Self {
        Self {
            gain: (0.3, 0.4),
            bias: (0.45, 0.55),
            noise_sigma: (0.06, 0.08),
            blur: 2,
            ..Self::source(height, width)
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Result<PhantomSpec> {
        let (h, w) = (self.height, self.width);
        let frac = |rng: &mut dyn rand::RngCore, (lo, hi): (f64, f64), len: usize| -> usize {
            let v = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            libm::round(v * len as f64) as usize
        };
        let pick = |rng: &mut dyn rand::RngCore, (lo, hi): (f64, f64)| -> f64 {
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        };
        let margin = (w / 16).max(2);
        for _ in 0..64 {
            let lr = frac(rng, self.lung_width, w).max(6);
            let ll = frac(rng, self.lung_width, w).max(6);
            let gap = frac(rng, self.cardiac_gap, w).max(2 * self.border_jitter + 4);
            let total = lr + gap + ll;
            if total + 2 * margin >= w {
                continue;
            }
            let xc = rng.random_range(margin..=w - margin - total - 1);
            let (xa, xb, xd) = (xc + lr, xc + lr + gap, xc + total);
            let top = frac(rng, (0.08, 0.16), h);
            let bottom = frac(rng, (0.78, 0.88), h).min(h - 2);
            let lung_h = bottom - top;
            let heart_top = top + frac(rng, (0.35, 0.55), lung_h).max(1);
            let limit = |lung_w: usize| {
                let by_width = lung_w.saturating_sub(6 + self.border_jitter) / 2;
                self.max_angle_depth.min(by_width).min(lung_h / 3)
            };
            let dr = rng.random_range(0..=limit(lr));
            let dl = rng.random_range(0..=limit(ll));
            let chamfer_cap = self
                .max_apex_chamfer
                .min((lr.min(ll).saturating_sub(self.border_jitter + 1)) / 2)
                .min(lung_h / 3);
            let chamfer = rng.random_range(0..=chamfer_cap);
            let inset = frac(rng, self.mediastinum_inset, gap);
            let spec = PhantomSpec {
                height: h,
                width: w,
                thorax: (xc, xd),
                cardiac: (xa, xb),
                lung_top: top,
                lung_bottom: bottom,
                heart_top,
                mediastinum_inset: inset,
                angle_depths: (dr, dl),
                apex_chamfer: chamfer,
                border_jitter: self.border_jitter,
                noise_sigma: pick(rng, self.noise_sigma),
                gain: pick(rng, self.gain),
                bias: pick(rng, self.bias),
                blur: self.blur,
                seed: rng.random(),
            };
            if spec.validate().is_ok() {
                return Ok(spec);
            }
        }
        Err(Error::Config(format!(
            "sampler ranges admit no valid phantom on a {h}x{w} canvas"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect() -> PhantomSpec {
        PhantomSpec::rectangles(100, 100, (10, 90), (40, 60), (15, 85))
    }

    fn components(mask: &LabelMask) -> usize {
        // 8-connected flood fill over both lung classes.
        let (w, h) = (mask.width, mask.height);
        let mut seen = alloc::vec![false; w * h];
        let mut count = 0;
        for start in 0..w * h {
            let k = mask.classes[start];
            if seen[start] || !(k == RIGHT_LUNG || k == LEFT_LUNG) {
                continue;
            }
            count += 1;
            let mut stack = alloc::vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                let (x, y) = ((i % w) as isize, (i / w) as isize);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        if !seen[j] && mask.classes[j] == k {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        count
    }

    #[test]
    fn rectangle_ctr_is_a_quarter() {
        let p = generate_phantom(&rect(), "r", Domain::Source).unwrap();
        assert_eq!(p.true_ctr, 0.25);
        assert_eq!(p.mask.get(10, 50), RIGHT_LUNG);
        assert_eq!(p.mask.get(40, 50), RIGHT_LUNG);
        assert_eq!(p.mask.get(41, 84), HEART);
        assert_eq!(p.mask.get(60, 50), LEFT_LUNG);
        assert_eq!(p.mask.get(90, 50), LEFT_LUNG);
        assert_eq!(p.mask.get(91, 50), BACKGROUND);
    }

    #[test]
    fn generation_is_deterministic() {
        let mut s = rect();
        s.noise_sigma = 0.05;
        s.border_jitter = 2;
        s.seed = 9;
        let a = generate_phantom(&s, "a", Domain::Target).unwrap();
        let b = generate_phantom(&s, "a", Domain::Target).unwrap();
        assert_eq!(a, b);
        assert!(a.image.pixels.iter().zip(&b.image.pixels).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = rect();
        s.cardiac = (60, 40);
        assert!(matches!(generate_phantom(&s, "x", Domain::Source), Err(Error::Config(_))));
        let mut s = rect();
        s.angle_depths = (20, 0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn random_specs_have_two_lungs_and_ratio_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for sampler in [PhantomSampler::source(64, 64), PhantomSampler::shifted_target(96, 80)] {
            for _ in 0..50 {
                let spec = sampler.sample(&mut rng).unwrap();
                let p = generate_phantom(&spec, "p", Domain::Source).unwrap();
                assert_eq!(components(&p.mask), 2, "{spec:?}");
                assert!(p.true_ctr > 0.0 && p.true_ctr < 1.0);
                assert!(p.image.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn notch_apex_is_kept_and_below_is_cut() {
        let mut s = rect();
        s.angle_depths = (5, 0);
        let p = generate_phantom(&s, "n", Domain::Source).unwrap();
        let apex_x = 40 - 5 - 2;
        assert_eq!(p.mask.get(apex_x, 80), RIGHT_LUNG);
        assert_eq!(p.mask.get(apex_x, 81), BACKGROUND);
        assert_eq!(p.mask.get(apex_x + 4, 85), BACKGROUND);
        assert_eq!(p.mask.get(apex_x + 5, 85), RIGHT_LUNG);
    }
}
