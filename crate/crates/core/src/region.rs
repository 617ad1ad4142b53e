//! Flexibility-region polygons assembled from boundary points, and metrics
//! comparing two regions.

use std::fmt;

use geo::{Area, BooleanOps, Coord, LineString, Polygon};
use thiserror::Error;

use crate::sweep::{BoundaryPoint, Side};

/// A point of the `(p_se, q_se)` plane in pu.
pub type Point = (f64, f64);

/// Consecutive vertices closer than this are merged.
const MERGE_TOL: f64 = 1e-10;

/// Default boundary sampling: points per mean edge length.
pub const DEFAULT_SAMPLES_PER_EDGE: f64 = 10.0;

/// Counter-clockwise region boundary in the `(p, q)` plane, closed
/// implicitly. Two vertices describe a region collapsed to a segment.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPolygon {
    vertices: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegionError {
    #[error("{side} side has {found} optimal points, at least 2 required")]
    TooFewPoints { side: Side, found: usize },
    #[error("polygon needs at least 3 distinct vertices, got {0}")]
    TooFewVertices(usize),
    #[error("edges {first} and {second} cross")]
    SelfIntersection { first: usize, second: usize },
    #[error("non-finite vertex {0}")]
    NonFinite(usize),
}

/// Comparison of a region against a reference region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionMetrics {
    pub area: f64,
    pub hausdorff_vs_ref: f64,
    pub sym_diff_area_vs_ref: f64,
    pub max_import_p: f64,
    pub max_export_p: f64,
}

impl RegionPolygon {
    /// Validates a vertex loop: simple, re-oriented counter-clockwise.
    /// Two distinct vertices give a segment.
    pub fn new(vertices: Vec<Point>) -> Result<Self, RegionError> {
        if let Some(i) = vertices
            .iter()
            .position(|&(p, q)| !(p.is_finite() && q.is_finite()))
        {
            return Err(RegionError::NonFinite(i));
        }
        let mut v = merge_close(vertices);
        if v.len() == 2 {
            return Ok(RegionPolygon { vertices: v });
        }
        if v.len() < 3 {
            return Err(RegionError::TooFewVertices(v.len()));
        }
        if let Some((first, second)) = first_crossing(&v) {
            return Err(RegionError::SelfIntersection { first, second });
        }
        if signed_area(&v) < 0.0 {
            v.reverse();
        }
        Ok(RegionPolygon { vertices: v })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn is_segment(&self) -> bool {
        self.vertices.len() == 2
    }

    /// Edges as `(start, end)`; a segment has a single edge.
    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        let count = if n == 2 { 1 } else { n };
        (0..count).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(a, b)| dist(a, b)).sum()
    }

    pub fn max_import_p(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| v.0)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_export_p(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| v.0)
            .fold(f64::INFINITY, f64::min)
    }

    /// Points along the boundary spaced at most `step` apart, vertices included.
    pub fn sample_boundary(&self, step: f64) -> Vec<Point> {
        let mut out = Vec::new();
        for (a, b) in self.edges() {
            let len = dist(a, b);
            let k = if step > 0.0 {
                (len / step).ceil().max(1.0) as usize
            } else {
                1
            };
            for j in 0..k {
                let t = j as f64 / k as f64;
                out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
            }
        }
        if self.is_segment() {
            out.push(self.vertices[1]);
        }
        out
    }

    fn mean_edge(&self) -> f64 {
        let count = self.edges().count();
        self.perimeter() / count as f64
    }

    fn to_geo(&self) -> Polygon<f64> {
        let ring: Vec<Coord<f64>> = self.vertices.iter().map(|&(x, y)| Coord { x, y }).collect();
        Polygon::new(LineString::new(ring), vec![])
    }
}

impl fmt::Display for RegionPolygon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "region with {} vertices, area {:.6} pu^2",
            self.vertices.len(),
            polygon_area(self)
        )
    }
}

/// Upper-side points by ascending `q`, then lower-side points by descending
/// `q`; non-optimal points are skipped. A sweep over a collapsed reactive
/// range yields a segment.
pub fn assemble_polygon(points: &[BoundaryPoint]) -> Result<RegionPolygon, RegionError> {
    let side = |s: Side| {
        let mut v: Vec<&BoundaryPoint> = points
            .iter()
            .filter(|p| p.side == s && p.status.is_optimal())
            .collect();
        v.sort_by(|a, b| {
            a.q_se
                .total_cmp(&b.q_se)
                .then(a.band_index.cmp(&b.band_index))
        });
        v
    };
    let upper = side(Side::Upper);
    let mut lower = side(Side::Lower);
    lower.reverse();
    let collapsed = upper.len() == 1 && lower.len() == 1;
    if !collapsed {
        for (s, v) in [(Side::Upper, &upper), (Side::Lower, &lower)] {
            if v.len() < 2 {
                return Err(RegionError::TooFewPoints {
                    side: s,
                    found: v.len(),
                });
            }
        }
    }
    let vertices = upper
        .iter()
        .chain(&lower)
        .map(|p| (p.p_se, p.q_se))
        .collect();
    RegionPolygon::new(vertices)
}

/// Shoelace area; zero for a segment.
pub fn polygon_area(poly: &RegionPolygon) -> f64 {
    if poly.is_segment() {
        0.0
    } else {
        signed_area(&poly.vertices).abs()
    }
}

/// Distance from `pt` to the polygon boundary.
pub fn boundary_distance(poly: &RegionPolygon, pt: Point) -> f64 {
    poly.edges()
        .map(|(a, b)| point_segment_distance(pt, a, b))
        .fold(f64::INFINITY, f64::min)
}

/// Ray-casting membership of `pt` in the polygon grown outward by `dilation`.
pub fn contains(poly: &RegionPolygon, pt: Point, dilation: f64) -> bool {
    if !poly.is_segment() && inside(&poly.vertices, pt) {
        return true;
    }
    boundary_distance(poly, pt) <= dilation
}

/// Metrics of `poly` against `reference` with the default boundary sampling.
pub fn compare(poly: &RegionPolygon, reference: &RegionPolygon) -> RegionMetrics {
    compare_with(poly, reference, DEFAULT_SAMPLES_PER_EDGE)
}

/// Metrics of `poly` against `reference`; each boundary is sampled with
/// step `mean edge length / samples_per_edge` for the Hausdorff distance.
pub fn compare_with(
    poly: &RegionPolygon,
    reference: &RegionPolygon,
    samples_per_edge: f64,
) -> RegionMetrics {
    RegionMetrics {
        area: polygon_area(poly),
        hausdorff_vs_ref: hausdorff(poly, reference, samples_per_edge),
        sym_diff_area_vs_ref: sym_diff_area(poly, reference),
        max_import_p: poly.max_import_p(),
        max_export_p: poly.max_export_p(),
    }
}

/// Sampled Hausdorff distance between the two boundaries.
pub fn hausdorff(a: &RegionPolygon, b: &RegionPolygon, samples_per_edge: f64) -> f64 {
    let one_way = |from: &RegionPolygon, to: &RegionPolygon| {
        from.sample_boundary(from.mean_edge() / samples_per_edge)
            .into_iter()
            .map(|pt| boundary_distance(to, pt))
            .fold(0.0, f64::max)
    };
    one_way(a, b).max(one_way(b, a))
}

/// Area of the symmetric difference; a segment counts as a zero-width
/// polygon.
pub fn sym_diff_area(a: &RegionPolygon, b: &RegionPolygon) -> f64 {
    match (a.is_segment(), b.is_segment()) {
        (true, true) => 0.0,
        (true, false) => polygon_area(b),
        (false, true) => polygon_area(a),
        (false, false) => a.to_geo().xor(&b.to_geo()).unsigned_area(),
    }
}

fn merge_close(vertices: Vec<Point>) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::with_capacity(vertices.len());
    for v in vertices {
        if out.last().is_none_or(|&last| dist(last, v) > MERGE_TOL) {
            out.push(v);
        }
    }
    while out.len() > 1 && dist(out[0], *out.last().expect("non-empty")) <= MERGE_TOL {
        out.pop();
    }
    out
}

fn signed_area(v: &[Point]) -> f64 {
    let n = v.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
}

fn dist(a: Point, b: Point) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist(p, (a.0 + t * dx, a.1 + t * dy))
}

fn inside(v: &[Point], pt: Point) -> bool {
    let n = v.len();
    let mut odd = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (v[i], v[j]);
        if (a.1 > pt.1) != (b.1 > pt.1) && pt.0 < (b.0 - a.0) * (pt.1 - a.1) / (b.1 - a.1) + a.0 {
            odd = !odd;
        }
        j = i;
    }
    odd
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let (o1, o2, o3, o4) = (
        orient(a, b, c),
        orient(a, b, d),
        orient(c, d, a),
        orient(c, d, b),
    );
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
    {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// First pair of non-adjacent crossing edges, by edge start index.
fn first_crossing(v: &[Point]) -> Option<(usize, usize)> {
    let n = v.len();
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(a, b, v[j], v[(j + 1) % n]) {
                return Some((i, j));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ipm::SolveStatus;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::time::Duration;

    fn square() -> RegionPolygon {
        RegionPolygon::new(vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]).unwrap()
    }

    fn point(side: Side, band: usize, p: f64, q: f64, status: SolveStatus) -> BoundaryPoint {
        BoundaryPoint {
            p_se: p,
            q_se: q,
            side,
            band_index: band,
            status,
            iterations: 1,
            factorizations: 1,
            solve_time: Duration::ZERO,
            kkt_residual: 0.0,
            x: vec![],
        }
    }

    #[test]
    fn unit_square_from_points() {
        let pts = vec![
            point(Side::Upper, 1, 1.0, 0.0, SolveStatus::Optimal),
            point(Side::Upper, 2, 1.0, 1.0, SolveStatus::Optimal),
            point(Side::Lower, 1, 0.0, 0.0, SolveStatus::Optimal),
            point(Side::Lower, 2, 0.0, 1.0, SolveStatus::Optimal),
        ];
        let poly = assemble_polygon(&pts).unwrap();
        assert_eq!(polygon_area(&poly), 1.0);
        assert!(signed_area(poly.vertices()) > 0.0);
    }

    #[test]
    fn failed_band_skipped() {
        let mut pts = vec![
            point(Side::Upper, 1, 1.0, 0.0, SolveStatus::Optimal),
            point(Side::Upper, 2, 5.0, 0.5, SolveStatus::NumericalFailure),
            point(Side::Upper, 3, 1.0, 1.0, SolveStatus::Optimal),
        ];
        pts.extend(
            [0.0, 0.5, 1.0]
                .iter()
                .enumerate()
                .map(|(i, &q)| point(Side::Lower, i + 1, 0.0, q, SolveStatus::Optimal)),
        );
        let poly = assemble_polygon(&pts).unwrap();
        assert_eq!(poly.vertices().len(), 5);
        assert!((polygon_area(&poly) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn too_few_points() {
        let pts = vec![
            point(Side::Upper, 1, 1.0, 0.0, SolveStatus::Optimal),
            point(Side::Upper, 2, 1.0, 1.0, SolveStatus::Optimal),
            point(Side::Lower, 1, 0.0, 0.0, SolveStatus::Optimal),
            point(Side::Lower, 2, 0.0, 1.0, SolveStatus::IterationLimit),
        ];
        assert_eq!(
            assemble_polygon(&pts),
            Err(RegionError::TooFewPoints {
                side: Side::Lower,
                found: 1
            })
        );
    }

    #[test]
    fn collapsed_sweep_is_a_segment() {
        let pts = vec![
            point(Side::Upper, 1, 2.0, 0.5, SolveStatus::Optimal),
            point(Side::Lower, 1, -1.0, 0.5, SolveStatus::Optimal),
        ];
        let poly = assemble_polygon(&pts).unwrap();
        assert!(poly.is_segment());
        assert_eq!(polygon_area(&poly), 0.0);
        assert!(contains(&poly, (0.0, 0.5), 0.0));
        assert_eq!(compare(&poly, &poly).hausdorff_vs_ref, 0.0);
        let m = compare(&poly, &square());
        assert_eq!(m.sym_diff_area_vs_ref, 1.0);
    }

    #[test]
    fn crossing_reported() {
        let err =
            RegionPolygon::new(vec![(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)]).unwrap_err();
        assert_eq!(
            err,
            RegionError::SelfIntersection {
                first: 0,
                second: 2
            }
        );
    }

    #[test]
    fn clockwise_input_reoriented() {
        let poly =
            RegionPolygon::new(vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0)]).unwrap();
        assert!(signed_area(poly.vertices()) > 0.0);
    }

    #[test]
    fn triangle_area() {
        let t = RegionPolygon::new(vec![(0.0, 0.0), (2.0, 0.0), (0.0, 2.0)]).unwrap();
        assert_eq!(polygon_area(&t), 2.0);
    }

    fn random_convex(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
        let mut angles: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        angles.sort_by(f64::total_cmp);
        let (cx, cy, r) = (
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(0.1..2.0),
        );
        angles
            .iter()
            .map(|a| (cx + r * a.cos(), cy + r * a.sin()))
            .collect()
    }

    #[test]
    fn convex_area_matches_fan_triangulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let v = random_convex(&mut rng, 20);
            let fan: f64 = (1..v.len() - 1)
                .map(|i| {
                    let (a, b, c) = (v[0], v[i], v[i + 1]);
                    0.5 * ((b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1)).abs()
                })
                .sum();
            let poly = RegionPolygon::new(v).unwrap();
            assert!((polygon_area(&poly) - fan).abs() < 1e-12);
        }
    }

    #[test]
    fn containment_with_dilation() {
        let sq = square();
        assert!(contains(&sq, (0.5, 0.5), 0.0));
        assert!(!contains(&sq, (1.5, 0.5), 0.0));
        assert!(contains(&sq, (1.5, 0.5), 0.6));
    }

    #[test]
    fn shifted_square() {
        let shifted =
            RegionPolygon::new(vec![(1.0, 0.0), (2.0, 0.0), (2.0, 1.0), (1.0, 1.0)]).unwrap();
        let m = compare(&shifted, &square());
        assert!(
            (m.sym_diff_area_vs_ref - 2.0).abs() < 1e-12,
            "{}",
            m.sym_diff_area_vs_ref
        );
        assert!((m.hausdorff_vs_ref - 1.0).abs() < 1e-12);
        assert_eq!((m.max_import_p, m.max_export_p), (2.0, 1.0));
    }

    #[test]
    fn self_comparison_is_zero() {
        let sq = square();
        let m = compare(&sq, &sq);
        assert_eq!((m.hausdorff_vs_ref, m.area), (0.0, 1.0));
        assert!(m.sym_diff_area_vs_ref.abs() < 1e-12);
    }

    fn polygon_strategy() -> impl Strategy<Value = Vec<Point>> {
        (3usize..16, any::<u64>())
            .prop_map(|(n, seed)| random_convex(&mut ChaCha8Rng::seed_from_u64(seed), n))
    }

    proptest! {
        #[test]
        fn area_invariant_under_rigid_motion(v in polygon_strategy(), dx in -5.0..5.0f64, dy in -5.0..5.0f64, th in 0.0..6.3f64) {
            let Ok(a) = RegionPolygon::new(v.clone()) else { return Ok(()) };
            let moved: Vec<Point> = v.iter().map(|&(x, y)| (x * th.cos() - y * th.sin() + dx, x * th.sin() + y * th.cos() + dy)).collect();
            let b = RegionPolygon::new(moved).unwrap();
            prop_assert!((polygon_area(&a) - polygon_area(&b)).abs() < 1e-12 * polygon_area(&a).max(1.0) * 10.0);
        }

        #[test]
        fn vertices_are_contained(v in polygon_strategy()) {
            let Ok(a) = RegionPolygon::new(v) else { return Ok(()) };
            for &pt in a.vertices() {
                prop_assert!(contains(&a, pt, 1e-9));
            }
        }

        #[test]
        fn metrics_symmetric(v in polygon_strategy(), w in polygon_strategy()) {
            let (Ok(a), Ok(b)) = (RegionPolygon::new(v), RegionPolygon::new(w)) else { return Ok(()) };
            let (ab, ba) = (compare(&a, &b), compare(&b, &a));
            prop_assert_eq!(ab.hausdorff_vs_ref, ba.hausdorff_vs_ref);
            prop_assert!((ab.sym_diff_area_vs_ref - ba.sym_diff_area_vs_ref).abs() < 1e-9);
            let aa = compare(&a, &a);
            prop_assert!(aa.hausdorff_vs_ref < 1e-12);
            prop_assert!(aa.sym_diff_area_vs_ref.abs() < 1e-9);
        }
    }
}
