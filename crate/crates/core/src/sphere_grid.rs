//! Fixed discretizations of the unit circle and the unit sphere.
//!
//! A [`Grid`] pairs unit normals with positive quadrature weights so that
//! `sum_i g(u_i) w_i` approximates the integral of `g` against spherical
//! Lebesgue measure. Points of `R^2` are stored as `Vector3` with a zero last
//! coordinate so the geometry code can share one vector type.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Point = Vector3<f64>;

/// A unit vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction(Point);

impl Direction {
    /// Normalizes `v`. Panics on the zero vector.
    pub fn new(v: Point) -> Self {
        let norm = v.norm();
        assert!(norm > 0.0, "direction from zero vector");
        Direction(v / norm)
    }

    pub fn planar(angle: f64) -> Self {
        Direction(Point::new(angle.cos(), angle.sin(), 0.0))
    }

    pub fn as_point(&self) -> &Point {
        &self.0
    }

    pub fn dot(&self, x: &Point) -> f64 {
        self.0.dot(x)
    }
}

impl std::ops::Deref for Direction {
    type Target = Point;
    fn deref(&self) -> &Point {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct Grid {
    dim: usize,
    normals: Vec<Direction>,
    weights: Vec<f64>,
}

/// `H^{n-1}(S^{n-1}) = n kappa_n`.
pub fn sphere_area(dim: usize) -> f64 {
    match dim {
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// Volume of the unit ball `kappa_n`; `kappa_1 = 2`.
pub fn ball_volume(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => panic!("unsupported dimension {dim}"),
    }
}

impl Grid {
    pub fn build(dim: usize, resolution: usize) -> Result<Grid> {
        match dim {
            2 => {
                if resolution < 8 {
                    return Err(Error::ResolutionTooSmall { dim, got: resolution, min: 8 });
                }
                Ok(Self::circle(resolution))
            }
            3 => {
                if resolution < 12 {
                    return Err(Error::ResolutionTooSmall { dim, got: resolution, min: 12 });
                }
                // smallest frequency k with 10k^2 + 2 >= resolution
                let mut k = 1;
                while 10 * k * k + 2 < resolution {
                    k += 1;
                }
                Ok(Self::icosphere(k))
            }
            _ => Err(Error::InvalidDimension(dim)),
        }
    }

    /// `count` equally spaced normals on the circle starting at `(1, 0)`.
    /// Unlike [`Grid::build`] this accepts any `count >= 3`.
    pub fn circle(count: usize) -> Grid {
        assert!(count >= 3);
        let w = 2.0 * PI / count as f64;
        let normals = (0..count)
            .map(|i| {
                let a = w * i as f64;
                // exact axis values for multiples of pi/2
                let (s, c) = match (4 * i) % count {
                    0 => exact_quarter(4 * i / count),
                    _ => a.sin_cos(),
                };
                Direction(Point::new(c, s, 0.0))
            })
            .collect();
        Grid { dim: 2, normals, weights: vec![w; count] }
    }

    /// Geodesic sphere of frequency `k` (`10k^2 + 2` vertices) with spherical
    /// Voronoi cell areas as weights.
    pub fn icosphere(k: usize) -> Grid {
        assert!(k >= 1);
        let (vertices, triangles) = subdivided_icosahedron(k);
        let weights = voronoi_areas(&vertices, &triangles);
        Grid { dim: 3, normals: vertices.into_iter().map(Direction).collect(), weights }
    }

    /// Arbitrary normals and weights. Normals are normalized; weights must be
    /// positive.
    pub fn from_parts(dim: usize, normals: Vec<Point>, weights: Vec<f64>) -> Result<Grid> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidDimension(dim));
        }
        if normals.len() != weights.len() {
            return Err(Error::LengthMismatch { expected: normals.len(), got: weights.len() });
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidProblem("grid weights must be positive".into()));
        }
        let normals = normals
            .into_iter()
            .map(|mut v| {
                if dim == 2 {
                    v.z = 0.0;
                }
                Direction::new(v)
            })
            .collect();
        Ok(Grid { dim, normals, weights })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn normals(&self) -> &[Direction] {
        &self.normals
    }

    pub fn normal(&self, i: usize) -> &Direction {
        &self.normals[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Indices `i` with `<u_i, v> >= cos(alpha)`.
    pub fn cap_indices(&self, v: &Direction, alpha: f64) -> Vec<usize> {
        let c = alpha.cos();
        // cos(pi) is exactly -1 but cos(pi/2) is 6e-17; snap the boundary
        let c = if (alpha - PI / 2.0).abs() < 1e-15 { 0.0 } else { c };
        self.normals
            .iter()
            .enumerate()
            .filter(|(_, u)| u.dot(v) >= c || alpha >= PI)
            .map(|(i, _)| i)
            .collect()
    }

    /// Smallest pairwise angle between normals.
    pub fn min_pairwise_angle(&self) -> f64 {
        let mut best = PI;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                let c = self.normals[i].dot(&self.normals[j]).clamp(-1.0, 1.0);
                best = best.min(c.acos());
            }
        }
        best
    }

    /// Lower bound of `max_i <u_i, v>` over unit `v`, estimated on a dense set
    /// of probe directions.
    pub fn spanning_margin(&self) -> f64 {
        let probes: Vec<Point> = match self.dim {
            2 => (0..4096).map(|k| Direction::planar(2.0 * PI * k as f64 / 4096.0).0).collect(),
            _ => fibonacci_sphere(8192),
        };
        probes
            .iter()
            .map(|v| self.normals.iter().map(|u| u.dot(v)).fold(f64::NEG_INFINITY, f64::max))
            .fold(f64::INFINITY, f64::min)
    }

    /// Rows `i,u_x,u_y[,u_z],w`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (i, (u, w)) in self.normals.iter().zip(&self.weights).enumerate() {
            if self.dim == 2 {
                writeln!(out, "{i},{:.17e},{:.17e},{:.17e}", u.x, u.y, w).unwrap();
            } else {
                writeln!(out, "{i},{:.17e},{:.17e},{:.17e},{:.17e}", u.x, u.y, u.z, w).unwrap();
            }
        }
        out
    }
}

fn exact_quarter(q: usize) -> (f64, f64) {
    match q % 4 {
        0 => (0.0, 1.0),
        1 => (1.0, 0.0),
        2 => (0.0, -1.0),
        _ => (-1.0, 0.0),
    }
}

fn fibonacci_sphere(count: usize) -> Vec<Point> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * i as f64;
            Point::new(r * a.cos(), r * a.sin(), z)
        })
        .collect()
}

fn icosahedron() -> (Vec<Point>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ];
    let vertices = raw.iter().map(|&(x, y, z)| Point::new(x, y, z).normalize()).collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (vertices, faces)
}

/// Class I geodesic subdivision: each face is split into `k^2` triangles
/// using barycentric lattice points, shared edge points deduplicated.
fn subdivided_icosahedron(k: usize) -> (Vec<Point>, Vec<[usize; 3]>) {
    let (base, faces) = icosahedron();
    let mut vertices: Vec<Point> = Vec::new();
    let mut index: HashMap<(usize, usize, usize, usize, usize, usize), usize> = HashMap::new();
    let mut triangles = Vec::with_capacity(20 * k * k);

    // key a lattice point by its barycentric coordinates over sorted corner ids
    let mut lattice_id = |face: &[usize; 3], a: usize, b: usize, c: usize, vertices: &mut Vec<Point>| {
        let mut pairs = [(face[0], a), (face[1], b), (face[2], c)];
        pairs.sort();
        let key = (pairs[0].0, pairs[0].1, pairs[1].0, pairs[1].1, pairs[2].0, pairs[2].1);
        // points on a shared edge or corner have zero weight on some corners
        let key = canonical_key(key);
        *index.entry(key).or_insert_with(|| {
            let p = (base[face[0]] * a as f64 + base[face[1]] * b as f64 + base[face[2]] * c as f64)
                .normalize();
            vertices.push(p);
            vertices.len() - 1
        })
    };

    for face in &faces {
        let mut ids = vec![vec![0usize; k + 1]; k + 1];
        for i in 0..=k {
            for j in 0..=k - i {
                ids[i][j] = lattice_id(face, k - i - j, i, j, &mut vertices);
            }
        }
        for i in 0..k {
            for j in 0..k - i {
                triangles.push([ids[i][j], ids[i + 1][j], ids[i][j + 1]]);
                if j + 1 < k - i {
                    triangles.push([ids[i + 1][j], ids[i + 1][j + 1], ids[i][j + 1]]);
                }
            }
        }
    }
    // orient triangles outward
    for t in &mut triangles {
        let (a, b, c) = (vertices[t[0]], vertices[t[1]], vertices[t[2]]);
        if (b - a).cross(&(c - a)).dot(&(a + b + c)) < 0.0 {
            t.swap(1, 2);
        }
    }
    (vertices, triangles)
}

fn canonical_key(
    key: (usize, usize, usize, usize, usize, usize),
) -> (usize, usize, usize, usize, usize, usize) {
    // drop zero-weight corners so the same point seen from two faces matches
    let mut parts: Vec<(usize, usize)> =
        [(key.0, key.1), (key.2, key.3), (key.4, key.5)].into_iter().filter(|p| p.1 > 0).collect();
    parts.sort();
    while parts.len() < 3 {
        parts.push((usize::MAX, 0));
    }
    (parts[0].0, parts[0].1, parts[1].0, parts[1].1, parts[2].0, parts[2].1)
}

/// Signed area of the spherical triangle `abc` (Van Oosterom-Strackee).
fn spherical_triangle_area(a: &Point, b: &Point, c: &Point) -> f64 {
    let num = a.dot(&b.cross(c));
    let den = 1.0 + a.dot(b) + b.dot(c) + c.dot(a);
    2.0 * num.atan2(den)
}

/// Circumcentric dual cell areas: every triangle is split among its corners
/// through the edge midpoints and the spherical circumcenter.
fn voronoi_areas(vertices: &[Point], triangles: &[[usize; 3]]) -> Vec<f64> {
    let mut areas = vec![0.0; vertices.len()];
    for t in triangles {
        let p = [vertices[t[0]], vertices[t[1]], vertices[t[2]]];
        let mut cc = (p[1] - p[0]).cross(&(p[2] - p[0])).normalize();
        if cc.dot(&(p[0] + p[1] + p[2])) < 0.0 {
            cc = -cc;
        }
        for k in 0..3 {
            let a = p[k];
            let b = p[(k + 1) % 3];
            let c = p[(k + 2) % 3];
            let mab = (a + b).normalize();
            let mca = (c + a).normalize();
            areas[t[k]] += spherical_triangle_area(&a, &mab, &cc) + spherical_triangle_area(&a, &cc, &mca);
        }
    }
    areas
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_point_circle() {
        let g = Grid::circle(4);
        let expect = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
        for (u, (x, y)) in g.normals().iter().zip(expect) {
            assert_eq!((u.x, u.y), (x, y));
        }
        assert!(g.weights().iter().all(|w| (*w - PI / 2.0).abs() < 1e-15));
    }

    #[test]
    fn build_rejects_bad_input() {
        assert_eq!(Grid::build(4, 100).unwrap_err(), Error::InvalidDimension(4));
        assert!(matches!(Grid::build(2, 7), Err(Error::ResolutionTooSmall { .. })));
        assert!(matches!(Grid::build(3, 11), Err(Error::ResolutionTooSmall { .. })));
    }

    #[test]
    fn circle_weights_sum() {
        let g = Grid::build(2, 360).unwrap();
        let s: f64 = g.weights().iter().sum();
        assert!((s - 2.0 * PI).abs() < 1e-12);
        let second: f64 = g.normals().iter().zip(g.weights()).map(|(u, w)| u.x * u.x * w).sum();
        assert!((second - PI).abs() < 1e-9);
    }

    #[test]
    fn icosphere_counts_and_area() {
        for (res, n) in [(12, 12), (42, 42), (100, 162), (162, 162)] {
            let g = Grid::build(3, res).unwrap();
            assert_eq!(g.len(), n);
            let s: f64 = g.weights().iter().sum();
            assert!((s - 4.0 * PI).abs() < 1e-9 * 4.0 * PI, "{res}: {s}");
            assert!(g.weights().iter().all(|w| *w > 0.0));
            let first: Point = g.normals().iter().zip(g.weights()).map(|(u, w)| **u * *w).sum();
            assert!(first.norm() < 1e-9);
        }
        let g = Grid::build(3, 42).unwrap();
        assert!(g.min_pairwise_angle() > 0.1);
        assert!(g.spanning_margin() >= 0.1);
    }

    #[test]
    fn caps() {
        let g = Grid::circle(4);
        let e1 = Direction::planar(0.0);
        assert_eq!(g.cap_indices(&e1, PI / 2.0), vec![0, 1, 3]);
        assert_eq!(g.cap_indices(&e1, PI).len(), 4);
        let g = Grid::build(2, 360).unwrap();
        assert_eq!(g.cap_indices(&e1, PI / 3.0).len(), 121);
    }

    #[test]
    fn csv_rows() {
        let csv = Grid::circle(4).to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().next().unwrap().starts_with("0,1.0"));
        let csv = Grid::build(3, 12).unwrap().to_csv();
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 5);
    }
}
