//! Planar polygons for rate regions: downward-closed convex hulls,
//! point-to-polygon distances and Hausdorff distances.

pub type Point = [f64; 2];

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull (counter-clockwise, no repeated or collinear vertices) via
/// the monotone chain.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.iter().copied().filter(|p| p[0].is_finite() && p[1].is_finite()).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup_by(|a, b| (a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
    if pts.len() <= 2 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 1e-15 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 1e-15 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Hull of the points, their axis projections and the origin, after
/// clipping to the non-negative quadrant.
pub fn downward_closed_hull(points: &[Point]) -> Vec<Point> {
    let mut all = vec![[0.0, 0.0]];
    for p in points {
        let q = [p[0].max(0.0), p[1].max(0.0)];
        all.push(q);
        all.push([q[0], 0.0]);
        all.push([0.0, q[1]]);
    }
    convex_hull(&all)
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
    ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()
}

/// Euclidean distance from `p` to a convex polygon (zero inside).
pub fn distance_to_polygon(poly: &[Point], p: Point) -> f64 {
    match poly.len() {
        0 => f64::INFINITY,
        1 => segment_distance(p, poly[0], poly[0]),
        2 => segment_distance(p, poly[0], poly[1]),
        n => {
            let inside = (0..n).all(|i| cross(poly[i], poly[(i + 1) % n], p) >= -1e-14);
            if inside {
                0.0
            } else {
                (0..n).map(|i| segment_distance(p, poly[i], poly[(i + 1) % n])).fold(f64::INFINITY, f64::min)
            }
        }
    }
}

/// Every vertex of `inner` lies within `slack` of `outer`.
pub fn includes(outer: &[Point], inner: &[Point], slack: f64) -> bool {
    inner.iter().all(|&p| distance_to_polygon(outer, p) <= slack)
}

/// Largest distance from a vertex of `a` to `b`; for convex polygons this
/// is the directed Hausdorff distance.
pub fn directed_hausdorff(a: &[Point], b: &[Point]) -> f64 {
    a.iter().map(|&p| distance_to_polygon(b, p)).fold(0.0, f64::max)
}

pub fn hausdorff(a: &[Point], b: &[Point]) -> f64 {
    directed_hausdorff(a, b).max(directed_hausdorff(b, a))
}

/// `max w . p` over the polygon.
pub fn support(poly: &[Point], w: Point) -> f64 {
    poly.iter().map(|p| w[0] * p[0] + w[1] * p[1]).fold(f64::NEG_INFINITY, f64::max)
}

/// Corner points of `{x <= a, y <= b, x + y <= s}` in the non-negative
/// quadrant (negative bounds clipped to zero).
pub fn pentagon_vertices(a: f64, b: f64, s: f64) -> [Point; 2] {
    let (a, b, s) = (a.max(0.0), b.max(0.0), s.max(0.0));
    let x1 = a.min(s);
    let y2 = b.min(s);
    [[x1, b.min(s - x1)], [a.min(s - y2), y2]]
}

/// `max w0 x + w1 y` over the same pentagon, `w >= 0`.
pub fn pentagon_value(w: Point, a: f64, b: f64, s: f64) -> f64 {
    let [p, q] = pentagon_vertices(a, b, s);
    (w[0] * p[0] + w[1] * p[1]).max(w[0] * q[0] + w[1] * q[1]).max(0.0)
}

/// The three dual pieces whose minimum is [`pentagon_value`] for
/// non-negative `a, b, s`: `w0 a + w1 b`, `(w0-m) a + (w1-m) b + m s` and
/// `M s` with `m = min w`, `M = max w`. Each piece is returned as its
/// coefficients on `(a, b, s)`.
pub fn pentagon_dual_pieces(w: Point) -> [[f64; 3]; 3] {
    let m = w[0].min(w[1]);
    let big = w[0].max(w[1]);
    [[w[0], w[1], 0.0], [w[0] - m, w[1] - m, m], [0.0, 0.0, big]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hull_is_counter_clockwise_and_drops_interior_points() {
        let h = downward_closed_hull(&[[1.0, 0.5], [0.5, 1.0], [0.4, 0.4]]);
        assert_eq!(h, vec![[0.0, 0.0], [1.0, 0.0], [1.0, 0.5], [0.5, 1.0], [0.0, 1.0]]);
        let n = h.len();
        let area2: f64 = (0..n).map(|i| h[i][0] * h[(i + 1) % n][1] - h[(i + 1) % n][0] * h[i][1]).sum();
        assert!(area2 > 0.0);
    }

    #[test]
    fn distances_and_inclusion() {
        let square = downward_closed_hull(&[[1.0, 1.0]]);
        assert_eq!(distance_to_polygon(&square, [0.5, 0.5]), 0.0);
        assert!((distance_to_polygon(&square, [2.0, 0.5]) - 1.0).abs() < 1e-15);
        let small = downward_closed_hull(&[[0.9, 0.9]]);
        assert!(includes(&square, &small, 0.0));
        assert!(!includes(&small, &square, 0.05));
        assert!((hausdorff(&square, &small) - 0.1 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_hulls() {
        assert_eq!(downward_closed_hull(&[]), vec![[0.0, 0.0]]);
        let seg = downward_closed_hull(&[[0.7, 0.0]]);
        assert_eq!(seg.len(), 2);
        assert!((distance_to_polygon(&seg, [0.7, 0.3]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn pentagon_corners() {
        assert_eq!(pentagon_vertices(0.5, 0.75, 1.0), [[0.5, 0.5], [0.25, 0.75]]);
        // sum bound inactive
        assert_eq!(pentagon_vertices(0.2, 0.3, 1.0), [[0.2, 0.3], [0.2, 0.3]]);
        assert_eq!(pentagon_vertices(-0.1, 0.3, 0.2), [[0.0, 0.2], [0.0, 0.2]]);
    }

    proptest! {
        #[test]
        fn dual_pieces_match_vertex_value(a in 0.0..2.0f64, b in 0.0..2.0f64, s in 0.0..3.0f64,
                                          w0 in 0.0..1.0f64, w1 in 0.0..1.0f64) {
            let v = pentagon_value([w0, w1], a, b, s);
            let dual = pentagon_dual_pieces([w0, w1])
                .iter()
                .map(|c| c[0] * a + c[1] * b + c[2] * s)
                .fold(f64::INFINITY, f64::min);
            prop_assert!((v - dual).abs() < 1e-12, "{} vs {}", v, dual);
        }

        #[test]
        fn hull_contains_its_points(pts in proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64), 1..20)) {
            let pts: Vec<Point> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            let h = downward_closed_hull(&pts);
            for p in &pts {
                prop_assert!(distance_to_polygon(&h, *p) < 1e-12);
            }
        }
    }
}
