//! Landmark-driven face morphing: Delaunay triangulation of the landmark set,
//! piecewise-affine warping onto an interpolated shape, and alpha blending.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::Image;

/// Blend factor used when none is given.
pub const DEFAULT_ALPHA: f64 = 0.5;
/// Number of frame anchors appended before triangulation.
pub const ANCHOR_COUNT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Ordered fiducial points of one image, in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmarks {
    points: Vec<Point>,
    height: usize,
    width: usize,
}

impl Landmarks {
    pub fn new(points: Vec<Point>, height: usize, width: usize) -> Result<Self> {
        let (max_x, max_y) = ((width as f64) - 1.0, (height as f64) - 1.0);
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite()) || p.x < 0.0 || p.y < 0.0 || p.x > max_x || p.y > max_y {
                return Err(Error::Geometry(format!(
                    "landmark {i} at ({}, {}) lies outside the {height}x{width} frame",
                    p.x, p.y
                )));
            }
        }
        Ok(Self { points, height, width })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn frame(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Copy with the four frame corners and four edge midpoints appended.
    pub fn with_anchors(&self) -> Landmarks {
        let (w, h) = ((self.width as f64) - 1.0, (self.height as f64) - 1.0);
        let mut points = self.points.clone();
        points.extend([
            Point::new(0.0, 0.0),
            Point::new(w, 0.0),
            Point::new(0.0, h),
            Point::new(w, h),
            Point::new(w / 2.0, 0.0),
            Point::new(0.0, h / 2.0),
            Point::new(w, h / 2.0),
            Point::new(w / 2.0, h),
        ]);
        Landmarks {
            points,
            height: self.height,
            width: self.width,
        }
    }

    /// `(1 − alpha)·self + alpha·other`, point by point.
    pub fn interpolate(&self, other: &Landmarks, alpha: f64) -> Result<Landmarks> {
        if self.len() != other.len() {
            return Err(Error::Correspondence(format!(
                "landmark counts differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        if self.frame() != other.frame() {
            return Err(Error::Correspondence(format!(
                "landmark frames differ: {:?} vs {:?}",
                self.frame(),
                other.frame()
            )));
        }
        let points = self
            .points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| {
                if a == b {
                    *a
                } else {
                    Point::new((1.0 - alpha) * a.x + alpha * b.x, (1.0 - alpha) * a.y + alpha * b.y)
                }
            })
            .collect();
        Ok(Landmarks {
            points,
            height: self.height,
            width: self.width,
        })
    }
}

/// Triangulation over an indexed vertex set.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn triangle(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }
}

#[inline]
fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Positive when `d` lies strictly inside the circumcircle of the
/// counter-clockwise triangle `(a, b, c)`.
#[inline]
pub(crate) fn in_circle(a: Point, b: Point, c: Point, d: Point) -> f64 {
    let (adx, ady) = (a.x - d.x, a.y - d.y);
    let (bdx, bdy) = (b.x - d.x, b.y - d.y);
    let (cdx, cdy) = (c.x - d.x, c.y - d.y);
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx)
}

/// Bowyer–Watson Delaunay triangulation. Triangles are returned
/// counter-clockwise (in a y-up sense) and sorted for determinism.
pub fn delaunay(points: &[Point]) -> Result<TriangleMesh> {
    if points.len() < 3 {
        return Err(Error::Geometry(format!(
            "triangulation needs at least 3 points, got {}",
            points.len()
        )));
    }
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in points {
        min_x = min_x.min(p.x);
        min_y = min_y.min(p.y);
        max_x = max_x.max(p.x);
        max_y = max_y.max(p.y);
    }
    let span = (max_x - min_x).max(max_y - min_y).max(1e-9);
    let scale = span * 1e-12;
    let first = points[0];
    let non_collinear = points
        .iter()
        .find(|p| (p.x - first.x).hypot(p.y - first.y) > scale)
        .is_some_and(|&second| points.iter().any(|&c| orient(first, second, c).abs() > scale * span));
    if !non_collinear {
        return Err(Error::Geometry("all points are collinear".into()));
    }

    let n = points.len();
    let (cx, cy) = ((min_x + max_x) / 2.0, (min_y + max_y) / 2.0);
    let r = span * 20.0;
    let mut verts: Vec<Point> = points.to_vec();
    verts.push(Point::new(cx - 2.0 * r, cy - r));
    verts.push(Point::new(cx + 2.0 * r, cy - r));
    verts.push(Point::new(cx, cy + 2.0 * r));
    let mut tris: Vec<[usize; 3]> = vec![ccw([n, n + 1, n + 2], &verts)];

    for (pi, p) in points.iter().enumerate() {
        let mut bad = Vec::new();
        for (ti, t) in tris.iter().enumerate() {
            if in_circle(verts[t[0]], verts[t[1]], verts[t[2]], *p) > 0.0 {
                bad.push(ti);
            }
        }
        // Cavity boundary: edges of bad triangles not shared with another bad one.
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for &ti in &bad {
            let t = tris[ti];
            for e in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                if let Some(pos) = edges.iter().position(|&(a, b)| a == e.1 && b == e.0) {
                    edges.swap_remove(pos);
                } else {
                    edges.push(e);
                }
            }
        }
        for &ti in bad.iter().rev() {
            tris.swap_remove(ti);
        }
        for (a, b) in edges {
            if orient(verts[a], verts[b], *p).abs() > 0.0 {
                tris.push(ccw([a, b, pi], &verts));
            }
        }
    }

    let mut triangles: Vec<[usize; 3]> = tris
        .into_iter()
        .filter(|t| t.iter().all(|&i| i < n))
        .filter(|t| orient(points[t[0]], points[t[1]], points[t[2]]).abs() > scale * span)
        .map(|mut t| {
            // rotate so the smallest index comes first, keeping orientation
            while t[0] > t[1] || t[0] > t[2] {
                t = [t[1], t[2], t[0]];
            }
            t
        })
        .collect();
    triangles.sort_unstable();
    Ok(TriangleMesh {
        vertices: points.to_vec(),
        triangles,
    })
}

fn ccw(t: [usize; 3], verts: &[Point]) -> [usize; 3] {
    if orient(verts[t[0]], verts[t[1]], verts[t[2]]) < 0.0 {
        [t[0], t[2], t[1]]
    } else {
        t
    }
}

/// Barycentric coordinates of `p` in triangle `t`, or `None` when degenerate.
#[inline]
fn barycentric(t: &[Point; 3], p: Point) -> Option<(f64, f64, f64)> {
    let det = orient(t[0], t[1], t[2]);
    if det == 0.0 {
        return None;
    }
    let l1 = orient(p, t[1], t[2]) / det;
    let l2 = orient(t[0], p, t[2]) / det;
    Some((l1, l2, 1.0 - l1 - l2))
}

const INSIDE_TOL: f64 = 1e-9;

/// Warps `img` so that `src` landmarks land on `dst`. Every pixel of a
/// destination triangle is pulled from the matching source triangle through
/// its affine map with bilinear sampling; pixels no triangle covers keep the
/// input value.
pub fn piecewise_warp(img: &Image, src: &Landmarks, dst: &Landmarks, mesh: &TriangleMesh) -> Result<Image> {
    if src.len() != dst.len() {
        return Err(Error::Correspondence(format!(
            "source has {} landmarks, destination {}",
            src.len(),
            dst.len()
        )));
    }
    if let Some(bad) = mesh.triangles.iter().flatten().find(|&&i| i >= src.len()) {
        return Err(Error::Correspondence(format!(
            "mesh references vertex {bad} but only {} landmarks exist",
            src.len()
        )));
    }
    let (h, w, ch) = img.shape();
    let mut out = img.clone();
    let mut done = vec![false; h * w];
    let (sp, dp) = (src.points(), dst.points());
    for tri in &mesh.triangles {
        let d = [dp[tri[0]], dp[tri[1]], dp[tri[2]]];
        let s = [sp[tri[0]], sp[tri[1]], sp[tri[2]]];
        let identity = d == s;
        let x0 = d.iter().map(|p| p.x).fold(f64::MAX, f64::min).floor().max(0.0) as usize;
        let x1 = (d.iter().map(|p| p.x).fold(f64::MIN, f64::max).ceil() as usize).min(w - 1);
        let y0 = d.iter().map(|p| p.y).fold(f64::MAX, f64::min).floor().max(0.0) as usize;
        let y1 = (d.iter().map(|p| p.y).fold(f64::MIN, f64::max).ceil() as usize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if done[y * w + x] {
                    continue;
                }
                let Some((l0, l1, l2)) = barycentric(&d, Point::new(x as f64, y as f64)) else {
                    continue;
                };
                if l0 < -INSIDE_TOL || l1 < -INSIDE_TOL || l2 < -INSIDE_TOL {
                    continue;
                }
                done[y * w + x] = true;
                if identity {
                    continue;
                }
                let sx = l0 * s[0].x + l1 * s[1].x + l2 * s[2].x;
                let sy = l0 * s[0].y + l1 * s[1].y + l2 * s[2].y;
                for c in 0..ch {
                    out.set(y, x, c, img.sample_bilinear(sx, sy, c));
                }
            }
        }
    }
    Ok(out)
}

/// Landmark morph of two aligned faces. Returns the blended image and the
/// interpolated landmark set (without frame anchors).
pub fn morph(i1: &Image, lm1: &Landmarks, i2: &Image, lm2: &Landmarks, alpha: f64) -> Result<(Image, Landmarks)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Correspondence(format!("alpha {alpha} outside [0, 1]")));
    }
    if i1.shape() != i2.shape() {
        return Err(Error::Correspondence(format!(
            "image shapes differ: {:?} vs {:?}",
            i1.shape(),
            i2.shape()
        )));
    }
    if lm1.frame() != (i1.height(), i1.width()) {
        return Err(Error::Correspondence("landmark frame does not match the image".into()));
    }
    let target = lm1.interpolate(lm2, alpha)?;
    let (a1, a2, at) = (lm1.with_anchors(), lm2.with_anchors(), target.with_anchors());
    let mesh = delaunay(at.points())?;
    let w1 = piecewise_warp(i1, &a1, &at, &mesh)?;
    let w2 = piecewise_warp(i2, &a2, &at, &mesh)?;
    let data = w1
        .data()
        .iter()
        .zip(w2.data())
        .map(|(p, q)| (1.0 - alpha) * p + alpha * q)
        .collect();
    let (h, w, c) = i1.shape();
    Ok((Image::new(h, w, c, data)?, target))
}

/// One landmark-file record: `path count x1 y1 x2 y2 ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkRecord {
    pub image: PathBuf,
    pub points: Vec<Point>,
}

impl LandmarkRecord {
    pub fn to_line(&self) -> String {
        let mut s = format!("{} {}", self.image.display(), self.points.len());
        for p in &self.points {
            write!(s, " {} {}", p.x, p.y).expect("writing to a String");
        }
        s
    }

    pub fn parse_line(line: &str, origin: &Path) -> Result<Self> {
        let err = |reason: String| Error::Parse {
            path: origin.to_path_buf(),
            reason,
        };
        let mut fields = line.split_whitespace();
        let image = fields.next().ok_or_else(|| err("empty landmark record".into()))?;
        let count: usize = fields
            .next()
            .ok_or_else(|| err("missing point count".into()))?
            .parse()
            .map_err(|e| err(format!("bad point count: {e}")))?;
        let coords: Vec<f64> = fields
            .map(|f| f.parse::<f64>().map_err(|e| err(format!("bad coordinate `{f}`: {e}"))))
            .collect::<Result<_>>()?;
        if coords.len() != 2 * count {
            return Err(err(format!("expected {} coordinates, found {}", 2 * count, coords.len())));
        }
        Ok(Self {
            image: PathBuf::from(image),
            points: coords.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect(),
        })
    }

    pub fn landmarks(&self, height: usize, width: usize) -> Result<Landmarks> {
        Landmarks::new(self.points.clone(), height, width)
    }
}

pub fn read_landmark_file(path: &Path) -> Result<Vec<LandmarkRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| LandmarkRecord::parse_line(l, path))
        .collect()
}

pub fn write_landmark_file(path: &Path, records: &[LandmarkRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&r.to_line());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
