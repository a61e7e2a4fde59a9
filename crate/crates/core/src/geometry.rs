//! Wulff bodies `[h] = { x : <x, u_i> <= h_i for all i }` and their
//! measurements.
//!
//! The halfspace intersection is read off the convex hull of the dual points
//! `u_i / h_i`: hull vertices are the active facets and hull facets (edges in
//! the plane) are the body's vertices. Normals whose dual point is not
//! extreme keep a zero facet area so vectors indexed by the grid keep a fixed
//! length.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hull::{hull_2d, hull_3d};
use crate::sphere_grid::{Direction, Grid, Point};

/// Facets with smaller `(n-1)`-measure are treated as inactive.
pub const DEGENERATE_AREA: f64 = 1e-14;

/// Support values on the grid normals.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SupportVector(pub Vec<f64>);

impl SupportVector {
    pub fn constant(len: usize, value: f64) -> Self {
        SupportVector(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        SupportVector(self.0.iter().map(|h| h * alpha).collect())
    }

    fn check_positive(&self) -> Result<()> {
        match self.0.iter().position(|h| !(*h > 0.0)) {
            Some(index) => Err(Error::NonPositiveSupport { index, value: self.0[index] }),
            None => Ok(()),
        }
    }
}

impl std::ops::Index<usize> for SupportVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Two facets sharing an `(n-2)`-face of measure `length` (a vertex, length
/// 1, in the plane).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adjacency {
    pub a: usize,
    pub b: usize,
    pub length: f64,
}

#[derive(Debug, Clone)]
pub struct Body {
    dim: usize,
    normals: Vec<Point>,
    h: Vec<f64>,
    vertices: Vec<Point>,
    facets: Vec<Vec<usize>>,
    areas: Vec<f64>,
    adjacency: Vec<Adjacency>,
    volume: f64,
    centroid: Point,
}

impl Body {
    /// Builds `[h]` over the grid normals.
    pub fn wulff(h: &SupportVector, grid: &Grid) -> Result<Body> {
        if h.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), got: h.len() });
        }
        h.check_positive()?;
        let normals: Vec<Point> = grid.normals().iter().map(|u| *u.as_point()).collect();
        match grid.dim() {
            2 => Self::wulff_2d(normals, h.0.clone()),
            3 => Self::wulff_3d(normals, h.0.clone()),
            d => Err(Error::InvalidDimension(d)),
        }
    }

    fn wulff_2d(normals: Vec<Point>, h: Vec<f64>) -> Result<Body> {
        let n = normals.len();
        let dual: Vec<Point> = normals.iter().zip(&h).map(|(u, h)| u / *h).collect();
        let scale = dual.iter().map(|p| p.norm()).fold(0.0, f64::max);
        let cycle = hull_2d(&dual, 1e-13);
        if cycle.len() < 3 {
            return Err(Error::Unbounded);
        }
        // origin strictly inside the dual hull <=> bounded body
        for k in 0..cycle.len() {
            let (a, b) = (dual[cycle[k]], dual[cycle[(k + 1) % cycle.len()]]);
            if a.x * b.y - a.y * b.x <= 1e-13 * scale * scale {
                return Err(Error::Unbounded);
            }
        }
        let m = cycle.len();
        let vertices: Vec<Point> = (0..m)
            .map(|k| line_intersection(&normals, &h, cycle[k], cycle[(k + 1) % m]))
            .collect();
        let mut facets = vec![Vec::new(); n];
        let mut areas = vec![0.0; n];
        for k in 0..m {
            let i = cycle[k];
            let (prev, next) = ((k + m - 1) % m, k);
            let len = (vertices[next] - vertices[prev]).norm();
            if len >= DEGENERATE_AREA {
                facets[i] = vec![prev, next];
                areas[i] = len;
            }
        }
        let mut adjacency = Vec::new();
        let active: Vec<usize> = cycle.iter().copied().filter(|&i| areas[i] > 0.0).collect();
        for k in 0..active.len() {
            let (a, b) = (active[k], active[(k + 1) % active.len()]);
            adjacency.push(Adjacency { a: a.min(b), b: a.max(b), length: 1.0 });
        }
        let mut body = Body {
            dim: 2,
            normals,
            h,
            vertices,
            facets,
            areas,
            adjacency,
            volume: 0.0,
            centroid: Point::zeros(),
        };
        body.finish();
        Ok(body)
    }

    fn wulff_3d(normals: Vec<Point>, h: Vec<f64>) -> Result<Body> {
        let n = normals.len();
        let dual: Vec<Point> = normals.iter().zip(&h).map(|(u, h)| u / *h).collect();
        let scale = dual.iter().map(|p| p.norm()).fold(0.0, f64::max);
        let faces = hull_3d(&dual, 1e-12 * scale).ok_or(Error::Unbounded)?;
        if faces.iter().any(|f| f.offset <= 1e-12 * scale) {
            return Err(Error::Unbounded);
        }
        let vertices: Vec<Point> = faces.iter().map(|f| f.normal / f.offset).collect();

        let mut edge_face: HashMap<(usize, usize), usize> = HashMap::with_capacity(3 * faces.len());
        let mut incident: Vec<Option<usize>> = vec![None; n];
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                edge_face.insert((f.v[k], f.v[(k + 1) % 3]), fi);
                incident[f.v[k]] = Some(fi);
            }
        }

        let mut facets = vec![Vec::new(); n];
        let mut areas = vec![0.0; n];
        for i in 0..n {
            let Some(start) = incident[i] else { continue };
            // walk the faces around dual vertex i
            let mut ring = Vec::new();
            let mut f = start;
            loop {
                ring.push(f);
                let v = faces[f].v;
                let k = v.iter().position(|&x| x == i).unwrap();
                let b = v[(k + 2) % 3];
                f = match edge_face.get(&(i, b)) {
                    Some(&g) => g,
                    None => break,
                };
                if f == start || ring.len() > faces.len() {
                    break;
                }
            }
            let u = normals[i];
            let mut cross = Point::zeros();
            for k in 0..ring.len() {
                cross += vertices[ring[k]].cross(&vertices[ring[(k + 1) % ring.len()]]);
            }
            let area = 0.5 * cross.dot(&u);
            let (area, ring) = if area < 0.0 {
                ring.reverse();
                (-area, ring)
            } else {
                (area, ring)
            };
            if area >= DEGENERATE_AREA {
                areas[i] = area;
                facets[i] = ring;
            }
        }

        let mut adjacency = Vec::new();
        for (&(a, b), &f) in &edge_face {
            if a < b && areas[a] > 0.0 && areas[b] > 0.0 {
                let g = edge_face[&(b, a)];
                let length = (vertices[f] - vertices[g]).norm();
                if length > 0.0 {
                    adjacency.push(Adjacency { a, b, length });
                }
            }
        }
        adjacency.sort_by(|x, y| (x.a, x.b).cmp(&(y.a, y.b)));

        let mut body = Body {
            dim: 3,
            normals,
            h,
            vertices,
            facets,
            areas,
            adjacency,
            volume: 0.0,
            centroid: Point::zeros(),
        };
        body.finish();
        Ok(body)
    }

    /// Cone decomposition from the origin for volume and centroid.
    fn finish(&mut self) {
        let mut volume = 0.0;
        let mut moment = Point::zeros();
        for i in 0..self.normals.len() {
            let f = &self.facets[i];
            if f.is_empty() {
                continue;
            }
            match self.dim {
                2 => {
                    let (a, b) = (self.vertices[f[0]], self.vertices[f[1]]);
                    let v = 0.5 * self.h[i] * self.areas[i];
                    volume += v;
                    moment += v * (a + b) / 3.0;
                }
                _ => {
                    let a = self.vertices[f[0]];
                    for k in 1..f.len() - 1 {
                        let (b, c) = (self.vertices[f[k]], self.vertices[f[k + 1]]);
                        let v = a.dot(&b.cross(&c)) / 6.0;
                        volume += v;
                        moment += v * (a + b + c) / 4.0;
                    }
                }
            }
        }
        if self.dim == 3 {
            // the signed tetrahedra sum is the volume; keep the facet formula
            // as the reported value since it is what the gradient identity uses
            let cone: f64 = (0..self.normals.len()).map(|i| self.h[i] * self.areas[i]).sum::<f64>() / 3.0;
            self.centroid = moment / volume;
            self.volume = cone;
        } else {
            self.centroid = moment / volume;
            self.volume = volume;
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// Facet areas `S_i`, zero for inactive normals.
    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn centroid(&self) -> Point {
        self.centroid
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn facet(&self, i: usize) -> &[usize] {
        &self.facets[i]
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.areas[i] > 0.0
    }

    pub fn adjacency(&self) -> &[Adjacency] {
        &self.adjacency
    }

    /// Input support values the body was built from.
    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn support(&self, v: &Point) -> f64 {
        self.vertices.iter().map(|x| x.dot(v)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn support_eval(&self, v: &Direction) -> f64 {
        self.support(v.as_point())
    }

    /// True support values at the grid normals (`<= h_i`).
    pub fn true_support(&self) -> Vec<f64> {
        self.normals.iter().map(|u| self.support(u)).collect()
    }

    /// Closedness defect `sum_i S_i u_i`.
    pub fn area_moment(&self) -> Point {
        self.normals.iter().zip(&self.areas).map(|(u, s)| u * *s).sum()
    }

    /// Inradius about `center` (distance to the nearest active facet plane)
    /// and circumradius (farthest vertex).
    pub fn radii(&self, center: &Point) -> Result<(f64, f64)> {
        let r = (0..self.normals.len())
            .filter(|&i| self.is_active(i))
            .map(|i| self.h[i] - self.normals[i].dot(center))
            .fold(f64::INFINITY, f64::min);
        if !(r > 0.0) {
            return Err(Error::NotInterior { margin: r });
        }
        let big_r = self.vertices.iter().map(|x| (x - center).norm()).fold(0.0, f64::max);
        Ok((r, big_r))
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (k, a) in self.vertices.iter().enumerate() {
            for b in &self.vertices[k + 1..] {
                d = d.max((a - b).norm());
            }
        }
        d
    }

    /// Hessian of `h -> V([h])`: `dS_i/dh_j = l_ij / sin(theta_ij)` for
    /// adjacent facets, `dS_i/dh_i = -sum_j l_ij cot(theta_ij)`.
    pub fn volume_hessian(&self) -> DMatrix<f64> {
        let n = self.normals.len();
        let mut m = DMatrix::zeros(n, n);
        for adj in &self.adjacency {
            let c = self.normals[adj.a].dot(&self.normals[adj.b]).clamp(-1.0, 1.0);
            let s = (1.0 - c * c).sqrt();
            if s <= 0.0 {
                continue;
            }
            let off = adj.length / s;
            m[(adj.a, adj.b)] += off;
            m[(adj.b, adj.a)] += off;
            m[(adj.a, adj.a)] -= adj.length * c / s;
            m[(adj.b, adj.b)] -= adj.length * c / s;
        }
        m
    }

    /// Closed polygon `x,y` rows (first vertex repeated) for planar bodies.
    pub fn to_polygon_csv(&self) -> String {
        let mut out = String::from("x,y\n");
        for x in self.vertices.iter().chain(self.vertices.first()) {
            writeln!(out, "{:.17e},{:.17e}", x.x, x.y).unwrap();
        }
        out
    }

    /// OFF mesh with one polygon per active facet.
    pub fn to_off(&self) -> String {
        let active: Vec<&Vec<usize>> = self.facets.iter().filter(|f| !f.is_empty()).collect();
        let mut out = String::from("OFF\n");
        writeln!(out, "{} {} 0", self.vertices.len(), active.len()).unwrap();
        for x in &self.vertices {
            writeln!(out, "{:.17e} {:.17e} {:.17e}", x.x, x.y, x.z).unwrap();
        }
        for f in active {
            write!(out, "{}", f.len()).unwrap();
            for v in f {
                write!(out, " {v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn line_intersection(normals: &[Point], h: &[f64], a: usize, b: usize) -> Point {
    let (ua, ub) = (normals[a], normals[b]);
    let det = ua.x * ub.y - ua.y * ub.x;
    Point::new((h[a] * ub.y - h[b] * ua.y) / det, (ua.x * h[b] - ub.x * h[a]) / det, 0.0)
}

/// Support values of `[h] - v`: `h_i - <u_i, v>`.
pub fn recenter(h: &SupportVector, grid: &Grid, v: &Point) -> Result<SupportVector> {
    let out: Vec<f64> = h.0.iter().zip(grid.normals()).map(|(h, u)| h - u.dot(v)).collect();
    let margin = out.iter().copied().fold(f64::INFINITY, f64::min);
    if !(margin > 0.0) {
        return Err(Error::NotInterior { margin });
    }
    Ok(SupportVector(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn square() -> (Grid, Body) {
        let g = Grid::circle(4);
        let b = Body::wulff(&SupportVector::constant(4, 1.0), &g).unwrap();
        (g, b)
    }

    #[test]
    fn unit_square() {
        let (_, b) = square();
        assert!((b.volume() - 4.0).abs() < 1e-14);
        for s in b.areas() {
            assert!((s - 2.0).abs() < 1e-14);
        }
        assert!(b.centroid().norm() < 1e-15);
        let diag = Direction::new(Point::new(1.0, 1.0, 0.0));
        assert!((b.support_eval(&diag) - 2f64.sqrt()).abs() < 1e-14);
        let (r, big_r) = b.radii(&Point::zeros()).unwrap();
        assert!((r - 1.0).abs() < 1e-15 && (big_r - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn redundant_constraint_is_inactive() {
        let mut normals: Vec<Point> = Grid::circle(4).normals().iter().map(|u| **u).collect();
        normals.push(Point::new(1.0, 1.0, 0.0));
        let g = Grid::from_parts(2, normals, vec![1.0; 5]).unwrap();
        let b = Body::wulff(&SupportVector(vec![1.0, 1.0, 1.0, 1.0, 10.0]), &g).unwrap();
        assert_eq!(b.areas()[4], 0.0);
        assert!(!b.is_active(4));
        assert!((b.volume() - 4.0).abs() < 1e-13);
        let s = b.support_eval(g.normal(4));
        assert!((s - 2f64.sqrt()).abs() < 1e-13 && s < 10.0);
        assert_eq!(b.support_eval(g.normal(0)), 1.0);
    }

    #[test]
    fn triangle_centroid() {
        // triangle (0,0), (3,0), (0,3) translated by (-1,-1) so o is interior
        let normals = vec![Point::new(-1.0, 0.0, 0.0), Point::new(0.0, -1.0, 0.0), Point::new(1.0, 1.0, 0.0)];
        let g = Grid::from_parts(2, normals, vec![1.0; 3]).unwrap();
        let b = Body::wulff(&SupportVector(vec![1.0, 1.0, 0.5f64.sqrt()]), &g).unwrap();
        let c = b.centroid() + Point::new(1.0, 1.0, 0.0);
        assert!((c - Point::new(1.0, 1.0, 0.0)).norm() < 1e-12);
        assert!((b.volume() - 4.5).abs() < 1e-12);
    }

    #[test]
    fn recenter_square() {
        let g = Grid::circle(4);
        let h = recenter(&SupportVector::constant(4, 1.0), &g, &Point::new(0.5, 0.0, 0.0)).unwrap();
        assert_eq!(h.0, vec![0.5, 1.0, 1.5, 1.0]);
        assert!(recenter(&SupportVector::constant(4, 1.0), &g, &Point::new(1.0, 0.0, 0.0)).is_err());
        let id = recenter(&SupportVector::constant(4, 1.0), &g, &Point::zeros()).unwrap();
        assert_eq!(id.0, vec![1.0; 4]);
    }

    #[test]
    fn unbounded_is_rejected() {
        let normals = vec![Point::new(1.0, 0.0, 0.0), Point::new(0.0, 1.0, 0.0), Point::new(-1.0, 0.0, 0.0)];
        let g = Grid::from_parts(2, normals, vec![1.0; 3]).unwrap();
        assert_eq!(Body::wulff(&SupportVector::constant(3, 1.0), &g).unwrap_err(), Error::Unbounded);
        let g = Grid::circle(4);
        assert!(matches!(
            Body::wulff(&SupportVector(vec![1.0, 0.0, 1.0, 1.0]), &g),
            Err(Error::NonPositiveSupport { index: 1, .. })
        ));
    }

    #[test]
    fn icosphere_body_approaches_ball() {
        let g = Grid::build(3, 162).unwrap();
        let b = Body::wulff(&SupportVector::constant(g.len(), 1.0), &g).unwrap();
        let ball = 4.0 * PI / 3.0;
        assert!(b.volume() > ball && (b.volume() - ball) / ball < 0.02);
        assert!(b.area_moment().norm() < 1e-9);
        assert!(b.centroid().norm() < 1e-9);
        assert!((0..g.len()).all(|i| b.is_active(i)));
    }

    #[test]
    fn cube_in_three_dimensions() {
        let normals = vec![
            Point::new(1.0, 0.0, 0.0),
            Point::new(-1.0, 0.0, 0.0),
            Point::new(0.0, 1.0, 0.0),
            Point::new(0.0, -1.0, 0.0),
            Point::new(0.0, 0.0, 1.0),
            Point::new(0.0, 0.0, -1.0),
        ];
        let g = Grid::from_parts(3, normals, vec![4.0 * PI / 6.0; 6]).unwrap();
        let b = Body::wulff(&SupportVector(vec![1.0, 1.0, 2.0, 2.0, 0.5, 0.5]), &g).unwrap();
        assert!((b.volume() - 2.0 * 4.0 * 1.0).abs() < 1e-12);
        assert!((b.areas()[0] - 4.0 * 1.0).abs() < 1e-12);
        assert!((b.areas()[4] - 2.0 * 4.0).abs() < 1e-12);
        assert_eq!(b.adjacency().len(), 12);
        assert!(b.to_off().starts_with("OFF\n"));
    }
}
