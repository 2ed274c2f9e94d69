use alloc::vec::Vec;

use super::Point;

#[inline]
pub(crate) fn cross(o: Point, a: Point, b: Point) -> i64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull by Andrew's monotone chain. Collinear points are dropped;
/// vertices come out counter-clockwise in a y-up frame, starting from the
/// lexicographically smallest point.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_unstable_by_key(|p| (p.x, p.y));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Perpendicular distance from `p` to the line through `a` and `b`
/// (Euclidean distance to `a` when the two coincide).
pub fn line_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = ((b.x - a.x) as f64, (b.y - a.y) as f64);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        let (ex, ey) = ((p.x - a.x) as f64, (p.y - a.y) as f64);
        return libm::sqrt(ex * ex + ey * ey);
    }
    (cross(a, b, p).unsigned_abs() as f64) / libm::sqrt(len2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn square_with_interior_and_edge_points() {
        let pts = vec![
            Point::new(0, 0),
            Point::new(4, 0),
            Point::new(4, 4),
            Point::new(0, 4),
            Point::new(2, 2),
            Point::new(2, 0),
            Point::new(0, 2),
        ];
        let hull = convex_hull(&pts);
        assert_eq!(
            hull,
            vec![Point::new(0, 0), Point::new(4, 0), Point::new(4, 4), Point::new(0, 4)]
        );
    }

    #[test]
    fn collinear_input_collapses() {
        let pts: Vec<Point> = (0..5).map(|i| Point::new(i, 2 * i)).collect();
        assert_eq!(convex_hull(&pts), vec![Point::new(0, 0), Point::new(4, 8)]);
    }

    #[test]
    fn distances() {
        let d = line_distance(Point::new(1, 3), Point::new(0, 0), Point::new(5, 0));
        assert_eq!(d, 3.0);
        assert_eq!(line_distance(Point::new(3, 4), Point::new(0, 0), Point::new(0, 0)), 5.0);
    }
}
