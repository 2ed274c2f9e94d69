use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Point;
use crate::data::{LabelMask, LEFT_LUNG, RIGHT_LUNG};
use crate::error::{Error, Result};

/// Side of the patient, assigned from the image position of the lung.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Laterality {
    /// Patient's right lung: smaller x on a PA film.
    Right,
    Left,
}

impl Laterality {
    /// +1 when increasing x points toward the midline.
    pub fn medial_sign(self) -> i64 {
        match self {
            Laterality::Right => 1,
            Laterality::Left => -1,
        }
    }
}

/// Outer boundary of one lung field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LungContour {
    pub laterality: Laterality,
    /// Mask class the component was taken from.
    pub class: u8,
    /// Raster-order label of the component within its class.
    pub component_id: usize,
    pub area: usize,
    /// Boundary pixel centres in tracing order (clockwise on screen).
    pub points: Vec<Point>,
}

impl LungContour {
    /// Bounding box `(xmin, xmax, ymin, ymax)`.
    pub fn bbox(&self) -> (i64, i64, i64, i64) {
        self.points.iter().fold(
            (i64::MAX, i64::MIN, i64::MAX, i64::MIN),
            |(x0, x1, y0, y1), p| (x0.min(p.x), x1.max(p.x), y0.min(p.y), y1.max(p.y)),
        )
    }

    /// Polygon vertices after merging runs of equal step direction.
    pub fn simplified(&self) -> Vec<Point> {
        let n = self.points.len();
        if n < 3 {
            return self.points.clone();
        }
        (0..n)
            .filter(|&i| {
                let prev = self.points[(i + n - 1) % n];
                let cur = self.points[i];
                let next = self.points[(i + 1) % n];
                let (ax, ay) = (cur.x - prev.x, cur.y - prev.y);
                let (bx, by) = (next.x - cur.x, next.y - cur.y);
                ax * by - ay * bx != 0 || ax * bx + ay * by < 0
            })
            .map(|i| self.points[i])
            .collect()
    }

    /// Shoelace area of the simplified polygon.
    pub fn polygon_area(&self) -> f64 {
        let p = &self.points;
        let n = p.len();
        let twice: i64 = (0..n)
            .map(|i| p[i].x * p[(i + 1) % n].y - p[(i + 1) % n].x * p[i].y)
            .sum();
        twice.unsigned_abs() as f64 / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LungContours {
    pub right: LungContour,
    pub left: LungContour,
}

impl LungContours {
    pub fn lungs(&self) -> [&LungContour; 2] {
        [&self.right, &self.left]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContourOptions {
    /// Components smaller than this many pixels count as missing.
    pub min_lung_area: usize,
}

impl Default for ContourOptions {
    fn default() -> Self {
        Self { min_lung_area: 16 }
    }
}

const NEIGHBOURS: [(i64, i64); 8] = [
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

struct Component {
    id: usize,
    pixels: Vec<usize>,
}

/// 8-connected components of `class`, in raster order of their first pixel.
fn components(mask: &LabelMask, class: u8) -> Vec<Component> {
    let (w, h) = (mask.width, mask.height);
    let mut label = vec![usize::MAX; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if mask.classes[start] != class || label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut pixels = Vec::new();
        let mut queue = VecDeque::from([start]);
        label[start] = id;
        while let Some(i) = queue.pop_front() {
            pixels.push(i);
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for (dx, dy) in NEIGHBOURS {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask.classes[j] == class && label[j] == usize::MAX {
                    label[j] = id;
                    queue.push_back(j);
                }
            }
        }
        out.push(Component { id, pixels });
    }
    out
}

/// Moore-neighbour tracing of the outer boundary of a pixel set.
fn trace_boundary(inside: &[bool], w: usize, h: usize, start: usize) -> Vec<Point> {
    let fg = |x: i64, y: i64| x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && inside[y as usize * w + x as usize];
    let s = Point::new((start % w) as i64, (start / w) as i64);
    // `start` is the first pixel in raster order, so its west neighbour is
    // outside the set.
    let mut cur = s;
    let mut back_dir = 0usize;
    let mut out = vec![s];
    let mut second: Option<Point> = None;
    let limit = 4 * w * h + 8;
    for _ in 0..limit {
        let mut next = None;
        for i in 1..=8 {
            let d = (back_dir + i) % 8;
            let (dx, dy) = NEIGHBOURS[d];
            if fg(cur.x + dx, cur.y + dy) {
                let prev = (back_dir + i - 1) % 8;
                let (bx, by) = NEIGHBOURS[prev];
                // Backtrack pixel expressed relative to the new current pixel.
                let rel = (cur.x + bx - (cur.x + dx), cur.y + by - (cur.y + dy));
                let nd = NEIGHBOURS.iter().position(|&n| n == rel).expect("adjacent pixels");
                next = Some((Point::new(cur.x + dx, cur.y + dy), nd));
                break;
            }
        }
        let Some((p, nd)) = next else {
            return out;
        };
        if cur == s {
            match second {
                None => second = Some(p),
                Some(q) if q == p => {
                    out.pop();
                    return out;
                }
                _ => {}
            }
        }
        out.push(p);
        cur = p;
        back_dir = nd;
    }
    out
}

/// Largest component of each lung class, traced, with laterality assigned
/// by centroid.
pub fn extract_contours(mask: &LabelMask, options: &ContourOptions) -> Result<LungContours> {
    let (w, h) = (mask.width, mask.height);
    let mut lungs = Vec::with_capacity(2);
    for class in [RIGHT_LUNG, LEFT_LUNG] {
        let comps = components(mask, class);
        let Some(best) = comps
            .iter()
            .fold(None::<&Component>, |acc, c| match acc {
                Some(a) if a.pixels.len() >= c.pixels.len() => Some(a),
                _ => Some(c),
            })
        else {
            return Err(Error::IncompleteSegmentation(format!("no pixels of lung class {class}")));
        };
        if best.pixels.len() < options.min_lung_area {
            return Err(Error::IncompleteSegmentation(format!(
                "largest component of lung class {class} has {} pixels (< {})",
                best.pixels.len(),
                options.min_lung_area
            )));
        }
        let mut inside = vec![false; w * h];
        for &i in &best.pixels {
            inside[i] = true;
        }
        let start = *best.pixels.iter().min().expect("non-empty");
        let points = trace_boundary(&inside, w, h, start);
        let cx = best.pixels.iter().map(|&i| (i % w) as f64).sum::<f64>() / best.pixels.len() as f64;
        lungs.push((
            cx,
            LungContour {
                laterality: Laterality::Right,
                class,
                component_id: best.id,
                area: best.pixels.len(),
                points,
            },
        ));
    }
    let (b, a) = (lungs.pop().expect("two"), lungs.pop().expect("two"));
    let (mut right, mut left) = if a.0 <= b.0 { (a.1, b.1) } else { (b.1, a.1) };
    right.laterality = Laterality::Right;
    left.laterality = Laterality::Left;
    Ok(LungContours { right, left })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::NUM_CLASSES;

    fn rect_mask() -> LabelMask {
        let mut m = LabelMask::filled(20, 30, NUM_CLASSES, 0);
        for y in 3..=15 {
            for x in 2..=9 {
                m.set(x, y, RIGHT_LUNG);
            }
            for x in 18..=26 {
                m.set(x, y, LEFT_LUNG);
            }
        }
        m
    }

    #[test]
    fn rectangles_simplify_to_four_corners() {
        let c = extract_contours(&rect_mask(), &ContourOptions::default()).unwrap();
        let mut corners = c.right.simplified();
        corners.sort_by_key(|p| (p.y, p.x));
        assert_eq!(
            corners,
            vec![Point::new(2, 3), Point::new(9, 3), Point::new(2, 15), Point::new(9, 15)]
        );
        assert_eq!(c.left.simplified().len(), 4);
        // Every boundary pixel appears exactly once.
        assert_eq!(c.right.points.len(), 2 * (8 + 13) - 4);
        assert_eq!(c.right.area, 8 * 13);
    }

    #[test]
    fn speckles_are_discarded() {
        let mut m = rect_mask();
        for x in 27..=29 {
            m.set(x, 0, RIGHT_LUNG);
        }
        let c = extract_contours(&m, &ContourOptions::default()).unwrap();
        assert!(c.right.points.iter().all(|p| p.x <= 9));
        assert_eq!(c.right.area, 104);
    }

    #[test]
    fn one_lung_is_incomplete() {
        let mut m = rect_mask();
        for v in m.classes.iter_mut() {
            if *v == LEFT_LUNG {
                *v = 0;
            }
        }
        assert!(matches!(
            extract_contours(&m, &ContourOptions::default()),
            Err(Error::IncompleteSegmentation(_))
        ));
    }

    #[test]
    fn laterality_follows_position_not_class() {
        let m = rect_mask().flip_horizontal();
        let c = extract_contours(&m, &ContourOptions::default()).unwrap();
        assert_eq!(c.right.class, LEFT_LUNG);
        assert!(c.right.bbox().1 < c.left.bbox().0);
    }

    #[test]
    fn single_pixel_and_thin_shapes_trace() {
        let mut inside = vec![false; 25];
        inside[12] = true;
        assert_eq!(trace_boundary(&inside, 5, 5, 12), vec![Point::new(2, 2)]);
        // A horizontal bar two pixels long.
        inside[13] = true;
        assert_eq!(
            trace_boundary(&inside, 5, 5, 12),
            vec![Point::new(2, 2), Point::new(3, 2)]
        );
    }

    #[test]
    fn traced_contour_is_closed_chain() {
        let c = extract_contours(&rect_mask(), &ContourOptions::default()).unwrap();
        let pts = &c.left.points;
        for i in 0..pts.len() {
            let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
            assert!((a.x - b.x).abs() <= 1 && (a.y - b.y).abs() <= 1);
        }
        assert!(c.left.polygon_area() > 0.0);
    }
}
