#![allow(dead_code)]

use std::f64::consts::PI;

use orlicz::center::DiscreteMeasure;
use orlicz::geometry::{Body, SupportVector};
use orlicz::sphere_grid::{Grid, Point};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Support values at the grid normals of the hull of a random point cloud
/// around the origin. The origin is always interior: planar clouds have
/// angular gaps below pi, spatial ones contain a scaled octahedron.
pub fn random_body(grid: &Grid, rng: &mut ChaCha8Rng) -> SupportVector {
    let mut points = Vec::new();
    if grid.dim() == 2 {
        let m = rng.gen_range(5..20);
        for k in 0..m {
            let a = 2.0 * PI * (k as f64 + rng.gen_range(0.0..0.8)) / m as f64;
            let r = rng.gen_range(0.4..1.6);
            points.push(Point::new(r * a.cos(), r * a.sin(), 0.0));
        }
    } else {
        for axis in 0..3 {
            for s in [-1.0, 1.0] {
                let mut p = Point::zeros();
                p[axis] = s * rng.gen_range(0.3..1.0);
                points.push(p);
            }
        }
        for _ in 0..rng.gen_range(4..30) {
            let v = Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            points.push(v * rng.gen_range(0.5..1.5));
        }
    }
    SupportVector(grid.normals().iter().map(|u| points.iter().map(|p| u.dot(p)).fold(f64::MIN, f64::max)).collect())
}

/// Smooth strictly convex planar body, slightly perturbed, with every facet
/// active.
pub fn random_smooth_planar(grid: &Grid, rng: &mut ChaCha8Rng) -> SupportVector {
    loop {
        let a = rng.gen_range(0.0..0.2);
        let b = rng.gen_range(0.0..0.05);
        let (p1, p2) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
        let h: Vec<f64> = grid
            .normals()
            .iter()
            .map(|u| {
                let t = u.y.atan2(u.x);
                (1.0 + a * (2.0 * t + p1).cos() + b * (3.0 * t + p2).cos()) * (1.0 + rng.gen_range(-1e-3..1e-3))
            })
            .collect();
        let h = SupportVector(h);
        let body = Body::wulff(&h, grid).unwrap();
        if (0..grid.len()).all(|i| body.is_active(i)) {
            return h;
        }
    }
}

pub fn random_measure(grid: &Grid, rng: &mut ChaCha8Rng, low: f64, high: f64) -> DiscreteMeasure {
    let f: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(low..high)).collect();
    DiscreteMeasure::from_density(&f, grid).unwrap()
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}
