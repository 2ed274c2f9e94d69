//! Cardiothoracic ratio from a two-lung label mask.
//!
//! Pipeline: [`extract_contours`] keeps the largest component of each lung
//! class and traces its outer boundary; [`detect_landmarks`] finds the
//! cardiodiaphragmatic and costophrenic angles of each lung from its convex
//! hull; [`compute_ctr`] maximises the four horizontal half-diameters
//! against a central line, using only contour points strictly above the
//! corresponding angle.
//!
//! Coordinates are pixel centres with the origin at the top-left, so
//! "above" means a smaller `y`. On a PA film the patient's right lung lies
//! at smaller `x`.
//!
//! Landmark rule, per lung: the lung's bounding box is split at its
//! horizontal midpoint into a medial and a lateral half, and its inferior
//! third is `y >= ymax - (ymax - ymin) / 3`. Every contour point lying
//! between two consecutive hull vertices (in tracing order) gets a pocket
//! depth, its distance to the chord joining them. The deepest pocket point
//! in the medial half of the inferior third is the cardiodiaphragmatic
//! angle, provided it is at least [`MIN_NOTCH_DEPTH`] deep; otherwise the
//! lowest medial hull vertex is used. The costophrenic angle is the lowest
//! lateral hull vertex. Ties go to the lower point, then to the more medial
//! (cardiodiaphragmatic) or more lateral (costophrenic) one.
//!
//! Diameters: the medial point of a row is the lung pixel closest to the
//! midline, the lateral point the one farthest from it. Each half-diameter
//! is maximised independently; ties go to the most superior point.

mod contour;
mod hull;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use contour::{extract_contours, ContourOptions, Laterality, LungContour, LungContours};
pub use hull::{convex_hull, line_distance};

use crate::data::LabelMask;
use crate::error::{Error, Result};

/// Cardiomegaly threshold on the ratio.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Shallowest concavity accepted as a cardiodiaphragmatic notch, in pixels.
pub const MIN_NOTCH_DEPTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: i64,
    pub y: i64,
}

impl Point {
    pub const fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LungLandmarks {
    pub cardiodiaphragmatic: Point,
    pub costophrenic: Point,
    /// Pocket depth at the cardiodiaphragmatic point; 0 when the convex
    /// fallback was used.
    pub notch_depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmarks {
    pub right: LungLandmarks,
    pub left: LungLandmarks,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyPoints {
    pub cardiac_right: Point,
    pub cardiac_left: Point,
    pub thoracic_right: Point,
    pub thoracic_left: Point,
}

/// Half-diameters measured from the central line: `a`/`b` cardiac on the
/// right/left, `c`/`d` thoracic on the right/left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfDiameters {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl HalfDiameters {
    fn scaled(self, k: f64) -> Self {
        Self {
            a: self.a * k,
            b: self.b * k,
            c: self.c * k,
            d: self.d * k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtrResult {
    pub key_points: KeyPoints,
    pub central_x: f64,
    /// In pixels.
    pub half_diameters: HalfDiameters,
    /// In millimetres, when the pixel spacing is known.
    pub half_diameters_mm: Option<HalfDiameters>,
    pub cardiac_diameter: f64,
    pub thoracic_diameter: f64,
    pub ratio: f64,
    pub cardiomegaly: bool,
}

/// Strict comparison against the threshold.
pub fn classify_cardiomegaly(ratio: f64, threshold: f64) -> bool {
    ratio > threshold
}

/// Pocket depth of every contour point relative to the hull chord spanning
/// it; hull vertices get 0.
pub fn pocket_depths(points: &[Point], hull: &[Point]) -> Vec<f64> {
    let n = points.len();
    let mut depth = alloc::vec![0.0; n];
    let on_hull: BTreeSet<Point> = hull.iter().copied().collect();
    let hits: Vec<usize> = (0..n).filter(|&i| on_hull.contains(&points[i])).collect();
    if hits.is_empty() {
        return depth;
    }
    for (k, &from) in hits.iter().enumerate() {
        let to = hits[(k + 1) % hits.len()];
        let span = (to + n - from) % n;
        let span = if span == 0 { n } else { span };
        for step in 1..span {
            let i = (from + step) % n;
            depth[i] = line_distance(points[i], points[from], points[to]);
        }
    }
    depth
}

fn lung_landmarks(lung: &LungContour) -> Result<LungLandmarks> {
    let hull = convex_hull(&lung.points);
    if hull.len() < 3 {
        return Err(Error::DegenerateContour(format!(
            "{:?} lung contour is collinear ({} hull vertices)",
            lung.laterality,
            hull.len()
        )));
    }
    let sign = lung.laterality.medial_sign();
    let (x0, x1, y0, y1) = lung.bbox();
    // Work in doubled coordinates so the midpoint stays integral.
    let mid2 = x0 + x1;
    let is_medial = |p: &Point| sign * (2 * p.x - mid2) >= 0;
    let is_lateral = |p: &Point| sign * (2 * p.x - mid2) <= 0;
    let inferior = |p: &Point| 3 * p.y >= 3 * y1 - (y1 - y0);

    let depths = pocket_depths(&lung.points, &hull);
    let mut notch: Option<(f64, Point)> = None;
    for (p, &d) in lung.points.iter().zip(&depths) {
        if d < MIN_NOTCH_DEPTH || !is_medial(p) || !inferior(p) {
            continue;
        }
        let better = match notch {
            None => true,
            Some((bd, bp)) => (d, p.y, sign * p.x) > (bd, bp.y, sign * bp.x),
        };
        if better {
            notch = Some((d, *p));
        }
    }
    let (cardiodiaphragmatic, notch_depth) = match notch {
        Some((d, p)) => (p, d),
        None => {
            let p = hull
                .iter()
                .filter(|p| is_medial(p))
                .max_by_key(|p| (p.y, sign * p.x))
                .copied()
                .ok_or_else(|| Error::DegenerateContour("no medial hull vertex".into()))?;
            (p, 0.0)
        }
    };
    let costophrenic = hull
        .iter()
        .filter(|p| is_lateral(p))
        .max_by_key(|p| (p.y, -sign * p.x))
        .copied()
        .ok_or_else(|| Error::DegenerateContour("no lateral hull vertex".into()))?;
    Ok(LungLandmarks {
        cardiodiaphragmatic,
        costophrenic,
        notch_depth,
    })
}

pub fn detect_landmarks(contours: &LungContours) -> Result<Landmarks> {
    Ok(Landmarks {
        right: lung_landmarks(&contours.right)?,
        left: lung_landmarks(&contours.left)?,
    })
}

/// `(medial, lateral)` point of every contour row.
fn row_extremes(lung: &LungContour) -> BTreeMap<i64, (Point, Point)> {
    let sign = lung.laterality.medial_sign();
    let mut rows: BTreeMap<i64, (Point, Point)> = BTreeMap::new();
    for &p in &lung.points {
        rows.entry(p.y)
            .and_modify(|(m, l)| {
                if sign * p.x > sign * m.x {
                    *m = p;
                }
                if sign * p.x < sign * l.x {
                    *l = p;
                }
            })
            .or_insert((p, p));
    }
    rows
}

/// Maximises `extent(p)` over `points`; ties go to the smallest `y`.
fn maximise(points: impl Iterator<Item = Point>, extent: impl Fn(Point) -> f64) -> Option<(Point, f64)> {
    points.fold(None, |best, p| {
        let e = extent(p);
        match best {
            Some((bp, be)) if be > e || (be == e && bp.y <= p.y) => Some((bp, be)),
            _ => Some((p, e)),
        }
    })
}

/// CTR with the central line at the midpoint of the two
/// cardiodiaphragmatic angles.
pub fn compute_ctr(
    contours: &LungContours,
    landmarks: &Landmarks,
    spacing: Option<(f64, f64)>,
) -> Result<CtrResult> {
    let central_x =
        (landmarks.right.cardiodiaphragmatic.x + landmarks.left.cardiodiaphragmatic.x) as f64 / 2.0;
    compute_ctr_with_central_line(contours, landmarks, spacing, central_x)
}

/// CTR against an explicit central line.
pub fn compute_ctr_with_central_line(
    contours: &LungContours,
    landmarks: &Landmarks,
    spacing: Option<(f64, f64)>,
    central_x: f64,
) -> Result<CtrResult> {
    let right = row_extremes(&contours.right);
    let left = row_extremes(&contours.left);
    let above = |rows: &BTreeMap<i64, (Point, Point)>, limit: i64, medial: bool| {
        rows.range(..limit)
            .map(move |(_, &(m, l))| if medial { m } else { l })
            .collect::<Vec<_>>()
    };
    let (lr, ll) = (landmarks.right, landmarks.left);
    let (cardiac_right, a) = maximise(
        above(&right, lr.cardiodiaphragmatic.y, true).into_iter(),
        |p| central_x - p.x as f64,
    )
    .ok_or(Error::EmptyEligibleSet("right cardiac border"))?;
    let (cardiac_left, b) = maximise(
        above(&left, ll.cardiodiaphragmatic.y, true).into_iter(),
        |p| p.x as f64 - central_x,
    )
    .ok_or(Error::EmptyEligibleSet("left cardiac border"))?;
    let (thoracic_right, c) = maximise(
        above(&right, lr.costophrenic.y, false).into_iter(),
        |p| central_x - p.x as f64,
    )
    .ok_or(Error::EmptyEligibleSet("right thoracic border"))?;
    let (thoracic_left, d) = maximise(
        above(&left, ll.costophrenic.y, false).into_iter(),
        |p| p.x as f64 - central_x,
    )
    .ok_or(Error::EmptyEligibleSet("left thoracic border"))?;

    let half = HalfDiameters { a, b, c, d };
    let cardiac_diameter = a + b;
    let thoracic_diameter = c + d;
    if !(thoracic_diameter > 0.0) {
        return Err(Error::DegenerateContour(format!(
            "thoracic diameter {thoracic_diameter} is not positive"
        )));
    }
    let ratio = cardiac_diameter / thoracic_diameter;
    Ok(CtrResult {
        key_points: KeyPoints {
            cardiac_right,
            cardiac_left,
            thoracic_right,
            thoracic_left,
        },
        central_x,
        half_diameters: half,
        half_diameters_mm: spacing.map(|(dx, _)| half.scaled(dx)),
        cardiac_diameter,
        thoracic_diameter,
        ratio,
        cardiomegaly: classify_cardiomegaly(ratio, DEFAULT_THRESHOLD),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtrOptions {
    pub contour: ContourOptions,
    pub threshold: f64,
}

impl Default for CtrOptions {
    fn default() -> Self {
        Self {
            contour: ContourOptions::default(),
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// Everything the pipeline produced for one mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtrEstimate {
    pub contours: LungContours,
    pub landmarks: Landmarks,
    pub result: CtrResult,
}

/// Contours, landmarks and CTR in one call.
pub fn estimate_ctr(mask: &LabelMask, spacing: Option<(f64, f64)>, options: &CtrOptions) -> Result<CtrEstimate> {
    let contours = extract_contours(mask, &options.contour)?;
    let landmarks = detect_landmarks(&contours)?;
    let mut result = compute_ctr(&contours, &landmarks, spacing)?;
    result.cardiomegaly = classify_cardiomegaly(result.ratio, options.threshold);
    Ok(CtrEstimate {
        contours,
        landmarks,
        result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Domain;
    use crate::phantom::{generate_phantom, PhantomSpec};

    fn rect() -> PhantomSpec {
        PhantomSpec::rectangles(100, 100, (10, 90), (40, 60), (15, 85))
    }

    fn estimate(spec: &PhantomSpec) -> CtrEstimate {
        let p = generate_phantom(spec, "t", Domain::Source).unwrap();
        estimate_ctr(&p.mask, None, &CtrOptions::default()).unwrap()
    }

    #[test]
    fn rectangle_phantom() {
        let e = estimate(&rect());
        assert_eq!(e.result.ratio, 0.25);
        assert!(!e.result.cardiomegaly);
        assert_eq!(e.landmarks.right.cardiodiaphragmatic, Point::new(40, 85));
        assert_eq!(e.landmarks.right.costophrenic, Point::new(10, 85));
        assert_eq!(e.landmarks.left.cardiodiaphragmatic, Point::new(60, 85));
        assert_eq!(e.landmarks.left.costophrenic, Point::new(90, 85));
        assert_eq!(e.result.key_points.cardiac_right, Point::new(40, 15));
        assert_eq!(e.result.central_x, 50.0);
        assert_eq!(e.result.cardiac_diameter, 20.0);
        assert_eq!(e.result.thoracic_diameter, 80.0);
    }

    #[test]
    fn notch_apex_becomes_cardiodiaphragmatic_angle() {
        let mut s = rect();
        s.angle_depths = (5, 3);
        let e = estimate(&s);
        assert_eq!(e.landmarks.right.cardiodiaphragmatic, Point::new(33, 80));
        assert_eq!(e.landmarks.left.cardiodiaphragmatic, Point::new(65, 82));
        assert_eq!(e.landmarks.right.notch_depth, 5.0);
        assert_eq!(e.result.ratio, 0.25);
    }

    #[test]
    fn translation_and_mirror() {
        let base = estimate(&rect()).result.ratio;
        let p = generate_phantom(&rect(), "t", Domain::Source).unwrap();
        let moved = estimate_ctr(&p.mask.translate(7, 0), None, &CtrOptions::default()).unwrap();
        assert_eq!(moved.result.ratio, base);
        let flipped = estimate_ctr(&p.mask.flip_horizontal(), None, &CtrOptions::default()).unwrap();
        assert_eq!(flipped.result.ratio, base);
    }

    #[test]
    fn spacing_scales_reported_millimetres_only() {
        let p = generate_phantom(&rect(), "t", Domain::Source).unwrap();
        let e = estimate_ctr(&p.mask, Some((0.175, 0.2)), &CtrOptions::default()).unwrap();
        let mm = e.result.half_diameters_mm.unwrap();
        assert!((mm.a - 10.0 * 0.175).abs() < 1e-12);
        assert!(((mm.a + mm.b) / (mm.c + mm.d) - 0.25).abs() < 1e-12);
        assert_eq!(e.result.ratio, 0.25);
    }

    #[test]
    fn cardiomegaly_is_strict() {
        assert!(classify_cardiomegaly(0.55, 0.5));
        assert!(!classify_cardiomegaly(0.50, 0.5));
        assert!(!classify_cardiomegaly(0.25, 0.5));
    }

    #[test]
    fn landmark_at_top_row_empties_eligible_set() {
        let p = generate_phantom(&rect(), "t", Domain::Source).unwrap();
        let contours = extract_contours(&p.mask, &ContourOptions::default()).unwrap();
        let mut lm = detect_landmarks(&contours).unwrap();
        lm.right.cardiodiaphragmatic.y = 15;
        assert_eq!(
            compute_ctr(&contours, &lm, None),
            Err(Error::EmptyEligibleSet("right cardiac border"))
        );
    }

    #[test]
    fn pocket_depth_of_v_notch() {
        // Square outline with a V cut into the bottom edge.
        let pts = alloc::vec![
            Point::new(0, 0),
            Point::new(6, 0),
            Point::new(6, 6),
            Point::new(4, 6),
            Point::new(3, 4),
            Point::new(2, 6),
            Point::new(0, 6),
        ];
        let hull = convex_hull(&pts);
        let d = pocket_depths(&pts, &hull);
        assert_eq!(d[4], 2.0);
        assert_eq!(d[0], 0.0);
    }
}
