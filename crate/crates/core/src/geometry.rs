//! Planar polygon arithmetic for compactness scoring.
//!
//! Unit polygons are assumed to form an edge-matched (or at least
//! collinear-overlapping) tiling: two units are neighbours when their rings
//! share boundary of positive length. Dissolving a set of units removes every
//! shared stretch of boundary, so a territory's perimeter is the length of
//! its exterior boundary plus any enclosed holes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Matching tolerance for shared boundary detection, in instance units.
pub const EPS_GEO: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// A polygon made of one closed outer ring followed by zero or more holes.
/// Serializes as the bare array of rings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Point>>", into = "Vec<Vec<Point>>")]
pub struct Polygon {
    rings: Vec<Vec<Point>>,
}

impl TryFrom<Vec<Vec<Point>>> for Polygon {
    type Error = Error;

    fn try_from(rings: Vec<Vec<Point>>) -> Result<Self> {
        Polygon::new(rings)
    }
}

impl From<Polygon> for Vec<Vec<Point>> {
    fn from(p: Polygon) -> Self {
        p.rings
    }
}

impl Polygon {
    /// Builds a polygon, checking that every ring is closed, has at least
    /// three distinct vertices, and that the outer ring encloses area.
    pub fn new(rings: Vec<Vec<Point>>) -> Result<Self> {
        if rings.is_empty() {
            return Err(Error::Geometry("polygon has no rings".into()));
        }
        for (r, ring) in rings.iter().enumerate() {
            if ring.len() < 4 {
                return Err(Error::Geometry(format!(
                    "ring {r} has {} points, need at least 4 (closed)",
                    ring.len()
                )));
            }
            if ring.first() != ring.last() {
                return Err(Error::Geometry(format!("ring {r} is not closed")));
            }
            let mut distinct: Vec<Point> = Vec::with_capacity(ring.len());
            for p in &ring[..ring.len() - 1] {
                if !distinct.iter().any(|q| q.distance(*p) <= EPS_GEO) {
                    distinct.push(*p);
                }
            }
            if distinct.len() < 3 {
                return Err(Error::Geometry(format!(
                    "ring {r} is degenerate ({} distinct points)",
                    distinct.len()
                )));
            }
        }
        if signed_ring_area(&rings[0]).abs() <= 0.0 {
            return Err(Error::Geometry("outer ring has zero area".into()));
        }
        Ok(Self { rings })
    }

    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(vec![vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
            Point::new(x0, y0),
        ]])
    }

    pub fn rings(&self) -> &[Vec<Point>] {
        &self.rings
    }

    pub fn outer(&self) -> &[Point] {
        &self.rings[0]
    }

    pub fn holes(&self) -> &[Vec<Point>] {
        &self.rings[1..]
    }

    pub fn area(&self) -> f64 {
        let outer = signed_ring_area(self.outer()).abs();
        let holes: f64 = self.holes().iter().map(|h| signed_ring_area(h).abs()).sum();
        outer - holes
    }

    /// Total ring length, holes included.
    pub fn perimeter(&self) -> f64 {
        self.rings.iter().map(|r| ring_length(r)).sum()
    }

    /// Area-weighted centroid (holes subtracted).
    pub fn centroid(&self) -> Point {
        let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
        for (r, ring) in self.rings.iter().enumerate() {
            let (ra, rx, ry) = ring_moments(ring);
            // Orient every ring's contribution: outer positive, holes negative.
            let sign = if r == 0 { ra.signum() } else { -ra.signum() };
            a += sign * ra;
            cx += sign * rx;
            cy += sign * ry;
        }
        if a.abs() <= f64::EPSILON {
            return self.outer()[0];
        }
        Point::new(cx / (3.0 * a), cy / (3.0 * a))
    }

    pub fn bbox(&self) -> BBox {
        let mut b = BBox::empty();
        for p in self.outer() {
            b.include(*p);
        }
        b
    }

    /// Scales every coordinate by `s` about the origin.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rings: self
                .rings
                .iter()
                .map(|r| r.iter().map(|p| Point::new(p.x * s, p.y * s)).collect())
                .collect(),
        }
    }

    fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.rings
            .iter()
            .flat_map(|r| r.windows(2).map(|w| (w[0], w[1])))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min: Point,
    pub max: Point,
}

impl BBox {
    fn empty() -> Self {
        Self {
            min: Point::new(f64::INFINITY, f64::INFINITY),
            max: Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn include(&mut self, p: Point) {
        self.min.x = self.min.x.min(p.x);
        self.min.y = self.min.y.min(p.y);
        self.max.x = self.max.x.max(p.x);
        self.max.y = self.max.y.max(p.y);
    }

    /// True when the boxes overlap or touch (within `EPS_GEO`).
    pub fn touches(&self, other: &BBox) -> bool {
        self.min.x <= other.max.x + EPS_GEO
            && other.min.x <= self.max.x + EPS_GEO
            && self.min.y <= other.max.y + EPS_GEO
            && other.min.y <= self.max.y + EPS_GEO
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeStats {
    pub area: f64,
    pub perimeter: f64,
}

fn signed_ring_area(ring: &[Point]) -> f64 {
    ring.windows(2)
        .map(|w| w[0].x * w[1].y - w[1].x * w[0].y)
        .sum::<f64>()
        / 2.0
}

/// Signed area and first moments of a ring; centroid = moment / (3·area).
fn ring_moments(ring: &[Point]) -> (f64, f64, f64) {
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for w in ring.windows(2) {
        let cross = w[0].x * w[1].y - w[1].x * w[0].y;
        a += cross;
        cx += (w[0].x + w[1].x) * cross;
        cy += (w[0].y + w[1].y) * cross;
    }
    (a / 2.0, cx / 2.0, cy / 2.0)
}

fn ring_length(ring: &[Point]) -> f64 {
    ring.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Shoelace area of the outer ring minus its holes.
pub fn polygon_area(p: &Polygon) -> f64 {
    p.area()
}

/// Length of the collinear overlap between two segments, zero when they are
/// not collinear within `EPS_GEO`.
fn segment_overlap(a: (Point, Point), b: (Point, Point)) -> f64 {
    let dx = a.1.x - a.0.x;
    let dy = a.1.y - a.0.y;
    let len = dx.hypot(dy);
    if len <= EPS_GEO {
        return 0.0;
    }
    let off = |p: Point| ((p.x - a.0.x) * dy - (p.y - a.0.y) * dx).abs() / len;
    if off(b.0) > EPS_GEO || off(b.1) > EPS_GEO {
        return 0.0;
    }
    let proj = |p: Point| ((p.x - a.0.x) * dx + (p.y - a.0.y) * dy) / len;
    let (t0, t1) = (proj(b.0), proj(b.1));
    let (lo, hi) = (t0.min(t1), t0.max(t1));
    let overlap = hi.min(len) - lo.max(0.0);
    if overlap > EPS_GEO {
        overlap
    } else {
        0.0
    }
}

/// Length of boundary shared by two polygons. Corner contact yields zero.
pub fn shared_boundary_length(a: &Polygon, b: &Polygon) -> f64 {
    if !a.bbox().touches(&b.bbox()) {
        return 0.0;
    }
    let mut total = 0.0;
    for sa in a.segments() {
        for sb in b.segments() {
            total += segment_overlap(sa, sb);
        }
    }
    total
}

/// Merges the footprints of non-overlapping unit polygons.
///
/// The area is the sum of unit areas; the perimeter keeps only boundary that
/// is not shared by two units of the set.
pub fn dissolve(units: &[&Polygon]) -> Result<ShapeStats> {
    if units.is_empty() {
        return Err(Error::Geometry("cannot dissolve an empty set of units".into()));
    }
    let area = units.iter().map(|p| p.area()).sum();
    let mut perimeter: f64 = units.iter().map(|p| p.perimeter()).sum();
    let boxes: Vec<BBox> = units.iter().map(|p| p.bbox()).collect();
    for i in 0..units.len() {
        for j in (i + 1)..units.len() {
            if boxes[i].touches(&boxes[j]) {
                perimeter -= 2.0 * shared_boundary_length(units[i], units[j]);
            }
        }
    }
    Ok(ShapeStats {
        area,
        perimeter: perimeter.max(0.0),
    })
}

/// Polsby-Popper score `4π·area / perimeter²`; 1 for a circle.
pub fn polsby_popper(s: ShapeStats) -> Result<f64> {
    if !(s.perimeter > 0.0) {
        return Err(Error::Geometry(format!(
            "Polsby-Popper undefined for perimeter {}",
            s.perimeter
        )));
    }
    Ok(4.0 * std::f64::consts::PI * s.area / (s.perimeter * s.perimeter))
}

fn on_segment(pt: Point, a: Point, b: Point) -> bool {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let len = dx.hypot(dy);
    if len <= EPS_GEO {
        return pt.distance(a) <= EPS_GEO;
    }
    let off = ((pt.x - a.x) * dy - (pt.y - a.y) * dx).abs() / len;
    let t = ((pt.x - a.x) * dx + (pt.y - a.y) * dy) / len;
    off <= EPS_GEO && t >= -EPS_GEO && t <= len + EPS_GEO
}

fn ring_contains(ring: &[Point], pt: Point) -> bool {
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.y > pt.y) != (b.y > pt.y) {
            let x = a.x + (pt.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if pt.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn ring_boundary(ring: &[Point], pt: Point) -> bool {
    ring.windows(2).any(|w| on_segment(pt, w[0], w[1]))
}

/// Ray-casting containment test. Points on any ring boundary count as inside.
pub fn point_in_polygon(pt: Point, p: &Polygon) -> bool {
    if p.rings.iter().any(|r| ring_boundary(r, pt)) {
        return true;
    }
    ring_contains(p.outer(), pt) && !p.holes().iter().any(|h| ring_contains(h, pt))
}
