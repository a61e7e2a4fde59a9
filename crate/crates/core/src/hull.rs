//! Convex hulls of point sets that strictly contain the origin.
//!
//! Only the combinatorics the Wulff-body construction needs are produced:
//! the hull vertex cycle in the plane and an outward-oriented triangulation
//! in space. Points within `tol` of the current hull are treated as
//! non-extreme.

use crate::sphere_grid::Point;

/// Counter-clockwise cycle of extreme point indices. A point is dropped as
/// collinear when the turn at it has `|sin| <= tol`.
pub fn hull_2d(points: &[Point], tol: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (points[a], points[b]);
        pa.x.partial_cmp(&pb.x).unwrap().then(pa.y.partial_cmp(&pb.y).unwrap())
    });
    let turn = |o: usize, a: usize, b: usize| {
        let (o, a, b) = (points[o], points[a], points[b]);
        let (da, db) = (a - o, b - o);
        let scale = da.norm() * db.norm();
        if scale == 0.0 {
            return 0.0;
        }
        (da.x * db.y - da.y * db.x) / scale
    };
    let mut lower: Vec<usize> = Vec::new();
    for &i in &order {
        while lower.len() >= 2 && turn(lower[lower.len() - 2], lower[lower.len() - 1], i) <= tol {
            lower.pop();
        }
        lower.push(i);
    }
    let mut upper: Vec<usize> = Vec::new();
    for &i in order.iter().rev() {
        while upper.len() >= 2 && turn(upper[upper.len() - 2], upper[upper.len() - 1], i) <= tol {
            upper.pop();
        }
        upper.push(i);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

#[derive(Debug, Clone, Copy)]
pub struct Face {
    pub v: [usize; 3],
    /// Outward unit normal.
    pub normal: Point,
    /// Plane offset: `<normal, x> = offset` on the face.
    pub offset: f64,
}

impl Face {
    fn new(points: &[Point], v: [usize; 3]) -> Face {
        let (a, b, c) = (points[v[0]], points[v[1]], points[v[2]]);
        let normal = (b - a).cross(&(c - a)).normalize();
        let offset = normal.dot(&a);
        Face { v, normal, offset }
    }

    fn distance(&self, p: &Point) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Incremental 3-d hull. Returns outward-oriented triangles; every edge is
/// shared by exactly two of them. Returns `None` when the points are
/// (numerically) coplanar.
pub fn hull_3d(points: &[Point], tol: f64) -> Option<Vec<Face>> {
    let n = points.len();
    if n < 4 {
        return None;
    }
    // initial tetrahedron from extreme points
    let i0 = (0..n).max_by(|&a, &b| points[a].x.partial_cmp(&points[b].x).unwrap())?;
    let i1 = (0..n).max_by(|&a, &b| {
        (points[a] - points[i0]).norm().partial_cmp(&(points[b] - points[i0]).norm()).unwrap()
    })?;
    let line = points[i1] - points[i0];
    let i2 = (0..n).max_by(|&a, &b| {
        let da = line.cross(&(points[a] - points[i0])).norm();
        let db = line.cross(&(points[b] - points[i0])).norm();
        da.partial_cmp(&db).unwrap()
    })?;
    let plane = line.cross(&(points[i2] - points[i0]));
    if plane.norm() <= tol {
        return None;
    }
    let i3 = (0..n).max_by(|&a, &b| {
        let da = plane.dot(&(points[a] - points[i0])).abs();
        let db = plane.dot(&(points[b] - points[i0])).abs();
        da.partial_cmp(&db).unwrap()
    })?;
    if plane.normalize().dot(&(points[i3] - points[i0])).abs() <= tol {
        return None;
    }
    let centroid = (points[i0] + points[i1] + points[i2] + points[i3]) / 4.0;
    let mut faces: Vec<Face> = Vec::new();
    for tri in [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]] {
        let mut f = Face::new(points, tri);
        if f.distance(&centroid) > 0.0 {
            f = Face::new(points, [tri[0], tri[2], tri[1]]);
        }
        faces.push(f);
    }

    let mut alive = vec![true; 4];
    for p in 0..n {
        if [i0, i1, i2, i3].contains(&p) {
            continue;
        }
        let visible: Vec<usize> = (0..faces.len())
            .filter(|&f| alive[f] && faces[f].distance(&points[p]) > tol)
            .collect();
        if visible.is_empty() {
            continue;
        }
        // horizon: directed edges of visible faces whose twin is not visible
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for &f in &visible {
            let v = faces[f].v;
            for k in 0..3 {
                edges.push((v[k], v[(k + 1) % 3]));
            }
        }
        let horizon: Vec<(usize, usize)> =
            edges.iter().copied().filter(|&(a, b)| !edges.contains(&(b, a))).collect();
        for &f in &visible {
            alive[f] = false;
        }
        for (a, b) in horizon {
            faces.push(Face::new(points, [a, b, p]));
            alive.push(true);
        }
    }
    Some(faces.into_iter().zip(alive).filter(|(_, a)| *a).map(|(f, _)| f).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_with_interior_and_edge_points() {
        let pts = vec![
            Point::new(1.0, 1.0, 0.0),
            Point::new(-1.0, 1.0, 0.0),
            Point::new(-1.0, -1.0, 0.0),
            Point::new(1.0, -1.0, 0.0),
            Point::new(0.0, 0.0, 0.0),
            Point::new(1.0, 0.0, 0.0),
        ];
        let mut h = hull_2d(&pts, 1e-12);
        h.sort();
        assert_eq!(h, vec![0, 1, 2, 3]);
    }

    #[test]
    fn cube_hull_is_closed() {
        let mut pts = Vec::new();
        for x in [-1.0, 1.0] {
            for y in [-1.0, 1.0] {
                for z in [-1.0, 1.0] {
                    pts.push(Point::new(x, y, z));
                }
            }
        }
        pts.push(Point::new(0.1, 0.2, -0.3));
        let faces = hull_3d(&pts, 1e-12).unwrap();
        assert_eq!(faces.len(), 12);
        // closed 2-manifold: every directed edge has its reverse
        let mut edges = Vec::new();
        for f in &faces {
            for k in 0..3 {
                edges.push((f.v[k], f.v[(k + 1) % 3]));
            }
        }
        for &(a, b) in &edges {
            assert!(edges.contains(&(b, a)));
        }
        assert!(faces.iter().all(|f| !f.v.contains(&8)));
        assert!(faces.iter().all(|f| (f.offset - 1.0).abs() < 1e-12));
    }
}
