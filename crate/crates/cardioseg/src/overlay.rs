//! Diagnostic overlays: the image with mask boundaries, the four key points
//! and their half-diameters, the central line and the ratio printed in the
//! corner.

use std::path::Path;

use cardioseg_core::ctr::{CtrResult, Point};
use cardioseg_core::data::{ImageSample, LabelMask};
use image::{DynamicImage, Rgb, RgbImage};

use crate::error::Result;
use crate::io::save;

const CLASS_COLOURS: [[u8; 3]; 4] = [[0, 0, 0], [0, 200, 255], [60, 220, 60], [255, 60, 60]];
const CENTRAL: [u8; 3] = [255, 220, 0];
const CARDIAC: [u8; 3] = [255, 120, 0];
const THORACIC: [u8; 3] = [200, 80, 255];
const TEXT: [u8; 3] = [255, 255, 255];

/// 3×5 glyphs, one row per byte, high bit on the left.
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        'A' => [0b010, 0b101, 0b111, 0b101, 0b101],
        'C' => [0b111, 0b100, 0b100, 0b100, 0b111],
        'F' => [0b111, 0b100, 0b110, 0b100, 0b100],
        'I' => [0b111, 0b010, 0b010, 0b010, 0b111],
        'L' => [0b100, 0b100, 0b100, 0b100, 0b111],
        'R' => [0b110, 0b101, 0b110, 0b101, 0b101],
        'T' => [0b111, 0b010, 0b010, 0b010, 0b010],
        _ => [0; 5],
    }
}

struct Canvas(RgbImage);

impl Canvas {
    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as u32) < self.0.width() && (y as u32) < self.0.height() {
            self.0.put_pixel(x as u32, y as u32, Rgb(c));
        }
    }

    fn hline(&mut self, x0: i64, x1: i64, y: i64, c: [u8; 3]) {
        for x in x0.min(x1)..=x0.max(x1) {
            self.put(x, y, c);
        }
    }

    fn cross(&mut self, p: Point, r: i64, c: [u8; 3]) {
        for d in -r..=r {
            self.put(p.x + d, p.y, c);
            self.put(p.x, p.y + d, c);
        }
    }

    fn text(&mut self, s: &str, x: i64, y: i64, scale: i64) {
        for (i, ch) in s.chars().enumerate() {
            let rows = glyph(ch);
            let ox = x + i as i64 * 4 * scale;
            for (ry, bits) in rows.iter().enumerate() {
                for rx in 0..3 {
                    if bits & (0b100 >> rx) != 0 {
                        for dy in 0..scale {
                            for dx in 0..scale {
                                self.put(ox + rx * scale + dx, y + ry as i64 * scale + dy, TEXT);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Renders the overlay. Without an image the mask itself is drawn in grey.
pub fn render(image: Option<&ImageSample>, mask: &LabelMask, ctr: Option<&CtrResult>) -> RgbImage {
    let (w, h) = (mask.width, mask.height);
    let mut c = Canvas(RgbImage::new(w as u32, h as u32));
    for y in 0..h {
        for x in 0..w {
            let v = match image {
                Some(im) => (im.pixels[y * w + x] * 255.0).round() as u8,
                None => mask.get(x, y) * 60,
            };
            c.put(x as i64, y as i64, [v, v, v]);
        }
    }
    for y in 0..h {
        for x in 0..w {
            let k = mask.get(x, y);
            if k == 0 {
                continue;
            }
            let edge = (x == 0 || mask.get(x - 1, y) != k)
                || (x + 1 == w || mask.get(x + 1, y) != k)
                || (y == 0 || mask.get(x, y - 1) != k)
                || (y + 1 == h || mask.get(x, y + 1) != k);
            if edge {
                c.put(x as i64, y as i64, CLASS_COLOURS[k as usize % 4]);
            }
        }
    }
    let scale = (w.min(h) as i64 / 100).max(1);
    let label = match ctr {
        Some(r) => {
            let cx = r.central_x.round() as i64;
            for y in 0..h as i64 {
                c.put(cx, y, CENTRAL);
            }
            let k = r.key_points;
            c.hline(k.cardiac_right.x, cx, k.cardiac_right.y, CARDIAC);
            c.hline(cx, k.cardiac_left.x, k.cardiac_left.y, CARDIAC);
            c.hline(k.thoracic_right.x, cx, k.thoracic_right.y, THORACIC);
            c.hline(cx, k.thoracic_left.x, k.thoracic_left.y, THORACIC);
            for (p, col) in [
                (k.cardiac_right, CARDIAC),
                (k.cardiac_left, CARDIAC),
                (k.thoracic_right, THORACIC),
                (k.thoracic_left, THORACIC),
            ] {
                c.cross(p, 1 + scale, col);
            }
            format!("CTR {:.3}", r.ratio)
        }
        None => "CTR FAIL".to_string(),
    };
    c.text(&label, scale, scale, scale);
    c.0
}

pub fn write(path: &Path, image: Option<&ImageSample>, mask: &LabelMask, ctr: Option<&CtrResult>) -> Result<()> {
    save(path, &DynamicImage::ImageRgb8(render(image, mask, ctr)))
}
