//! Full-face mask from a projected 3-D contour: perspective projection,
//! monotone-chain convex hull and half-plane rasterization.
//!
//! Pixel `(i, j)` is probed at its center `(x, y) = (j + 0.5, i + 0.5)`.
//! Pixels lying exactly on a hull edge count as inside.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::BinaryMask;

pub const CONTOUR_VERTICES: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }
}

/// Twice the signed area of triangle `(o, a, b)`; positive for a left turn.
#[inline]
pub fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Camera `K [R | t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub intrinsics: [[f64; 3]; 3],
    pub extrinsics: [[f64; 4]; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            intrinsics: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            extrinsics: [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
        }
    }

    pub fn validate(&self, rigid: bool) -> Result<()> {
        let k = &self.intrinsics;
        if det3(k).abs() < 1e-12 {
            return Err(Error::Degenerate("intrinsics are singular".into()));
        }
        if rigid {
            let r = [
                [self.extrinsics[0][0], self.extrinsics[0][1], self.extrinsics[0][2]],
                [self.extrinsics[1][0], self.extrinsics[1][1], self.extrinsics[1][2]],
                [self.extrinsics[2][0], self.extrinsics[2][1], self.extrinsics[2][2]],
            ];
            let d = det3(&r);
            if (d - 1.0).abs() > 1e-6 {
                return Err(Error::Degenerate(format!("rotation block determinant {d} is not +1")));
            }
        }
        Ok(())
    }

    fn projection(&self) -> [[f64; 4]; 3] {
        let mut p = [[0.0; 4]; 3];
        for (r, row) in p.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|m| self.intrinsics[r][m] * self.extrinsics[m][c]).sum();
            }
        }
        p
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContourShape {
    vertices: Vec<[f64; 3]>,
}

impl ContourShape {
    pub fn new(vertices: Vec<[f64; 3]>) -> Result<Self> {
        if vertices.len() != CONTOUR_VERTICES {
            return Err(Error::Invalid(format!(
                "contour needs {CONTOUR_VERTICES} vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("contour vertex".into()));
        }
        Ok(ContourShape { vertices })
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }
}

/// Project 3-D points through `K [R | t]`, dividing by depth.
pub fn project(pose: &Pose, points: &[[f64; 3]]) -> Result<Vec<Point2>> {
    let p = pose.projection();
    points
        .iter()
        .enumerate()
        .map(|(idx, x)| {
            let h = [x[0], x[1], x[2], 1.0];
            let row = |r: usize| (0..4).map(|c| p[r][c] * h[c]).sum::<f64>();
            let (u, v, w) = (row(0), row(1), row(2));
            if w.abs() < 1e-9 || w < 0.0 {
                return Err(Error::Degenerate(format!(
                    "point {idx} has depth {w}; it must lie in front of the camera"
                )));
            }
            Ok(Point2::new(u / w, v / w))
        })
        .collect()
}

pub fn project_points(pose: &Pose, shape: &ContourShape) -> Result<Vec<Point2>> {
    project(pose, shape.vertices())
}

/// Strictly convex polygon with counter-clockwise vertex order
/// (in a y-up frame; with image rows growing downward the loop appears
/// clockwise on screen, which does not affect the half-plane tests).
#[derive(Clone, Debug, PartialEq)]
pub struct Hull2D {
    vertices: Vec<Point2>,
}

impl Hull2D {
    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    /// Directed edges `(a, b)`; the interior lies on the left of each.
    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Half-plane test against every edge; boundary points are inside.
    pub fn contains(&self, p: Point2) -> bool {
        self.edges().all(|(a, b)| cross(a, b, p) >= 0.0)
    }
}

/// Andrew's monotone chain. Collinear points on the boundary are dropped.
pub fn convex_hull(points: &[Point2]) -> Result<Hull2D> {
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::NonFinite("hull input point".into()));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 distinct points, got {}",
            pts.len()
        )));
    }

    let mut hull: Vec<Point2> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();

    if hull.len() < 3 {
        return Err(Error::Degenerate("input points are collinear".into()));
    }
    Ok(Hull2D { vertices: hull })
}

/// Rasterize a hull into an `height x width` mask by scanline: each row's
/// inside run is bracketed from the edge intersections, then its two ends
/// are settled with the exact half-plane predicate.
pub fn rasterize_hull(hull: &Hull2D, height: usize, width: usize) -> BinaryMask {
    let mut mask = BinaryMask::filled(height, width, false);
    if width == 0 {
        return mask;
    }
    let inside = |i: usize, j: usize| hull.contains(Point2::new(j as f64 + 0.5, i as f64 + 0.5));

    for i in 0..height {
        let y = i as f64 + 0.5;
        // x-interval where every edge constraint holds at this y
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        let mut empty = false;
        for (a, b) in hull.edges() {
            // cross(a, b, p) = dx*(y - ay) - dy*(x - ax) >= 0
            let dx = b.x - a.x;
            let dy = b.y - a.y;
            let c = dx * (y - a.y);
            if dy == 0.0 {
                if c < 0.0 {
                    empty = true;
                }
            } else if dy > 0.0 {
                hi = hi.min(a.x + c / dy);
            } else {
                lo = lo.max(a.x + c / dy);
            }
        }
        if empty || lo > hi + 1.0 {
            continue;
        }
        // candidate column range from the continuous interval
        let jl = ((lo - 0.5).ceil().max(0.0)).min(width as f64 - 1.0) as usize;
        let jr = ((hi - 0.5).floor().min(width as f64 - 1.0)).max(0.0) as usize;
        let (mut l, mut r) = (jl, jr.max(jl));
        // settle the left end
        while l > 0 && inside(i, l - 1) {
            l -= 1;
        }
        while l <= r && !inside(i, l) {
            l += 1;
        }
        if l > r {
            // the bracket may have missed a sliver; fall back to a scan
            match (0..width).find(|&j| inside(i, j)) {
                Some(j) => {
                    l = j;
                    r = j;
                }
                None => continue,
            }
        }
        while r + 1 < width && inside(i, r + 1) {
            r += 1;
        }
        while r > l && !inside(i, r) {
            r -= 1;
        }
        for j in l..=r {
            mask.set(i, j, true);
        }
    }
    mask
}

/// Full-face mask from pose and contour.
pub fn full_face_mask(pose: &Pose, shape: &ContourShape, height: usize, width: usize) -> Result<BinaryMask> {
    let pts = project_points(pose, shape)?;
    let hull = convex_hull(&pts)?;
    Ok(rasterize_hull(&hull, height, width))
}

/// Parse the plain-text pose file: 12 extrinsic reals (row-major 3x4),
/// 9 intrinsic reals (row-major 3x3), then 64 x 3 vertex reals.
pub fn parse_pose_file(text: &str) -> Result<(Pose, ContourShape)> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Format(format!("not a number: {t:?}")))
        })
        .collect::<Result<_>>()?;
    let need = 12 + 9 + CONTOUR_VERTICES * 3;
    if vals.len() != need {
        return Err(Error::Format(format!(
            "pose file needs {need} numbers, got {}",
            vals.len()
        )));
    }
    let mut extrinsics = [[0.0; 4]; 3];
    for r in 0..3 {
        for c in 0..4 {
            extrinsics[r][c] = vals[r * 4 + c];
        }
    }
    let mut intrinsics = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            intrinsics[r][c] = vals[12 + r * 3 + c];
        }
    }
    let vertices = vals[21..].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let pose = Pose { intrinsics, extrinsics };
    pose.validate(false)?;
    Ok((pose, ContourShape::new(vertices)?))
}

pub fn read_pose_file(path: impl AsRef<Path>) -> Result<(Pose, ContourShape)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pose_file(&text)
}

pub fn format_pose_file(pose: &Pose, shape: &ContourShape) -> String {
    let mut out = String::new();
    for row in &pose.extrinsics {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    for row in &pose.intrinsics {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    for v in shape.vertices() {
        out.push_str(&format!("{:?} {:?} {:?}\n", v[0], v[1], v[2]));
    }
    out
}
