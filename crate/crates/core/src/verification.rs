//! Certificates for computed solutions and an exhaustive-search oracle for
//! tiny planar instances.

use serde::{Deserialize, Serialize};

use crate::center::DiscreteMeasure;
use crate::error::{Error, Result};
use crate::extremal::{el_residual_masked, lambda_estimate};
use crate::geometry::{Body, SupportVector};
use crate::kernel::{Kernel, KernelTable, OrliczSpec};
use crate::sphere_grid::{ball_volume, Direction, Grid, Point};

/// Strip parameters used for the profile in a [`Certificate`].
pub const PROFILE_T: [f64; 8] = [0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 0.9];

/// Multiplier and Euler-Lagrange residual against the unmollified
/// `psi = 1/phi`. Only normals with `mask[i]` enter the residual when a mask
/// is given; the multiplier always uses every normal. The multiplier is
/// `(1/n) sum h psi(h) mu / V`, which reduces to the usual estimate at
/// `V = 1` and stays exact for rescaled bodies.
pub fn residual_plain(
    h: &SupportVector,
    mu: &DiscreteMeasure,
    orlicz: &OrliczSpec,
    body: &Body,
    mask: Option<&[bool]>,
) -> (f64, f64) {
    let lambda = lambda_estimate(h, mu, orlicz, body.dim()) / body.volume();
    (lambda, el_residual_masked(h, mu, orlicz, body, lambda, mask))
}

/// `sum of mu_i over |<u_i, v>| <= t`.
pub fn strip_mass(mu: &DiscreteMeasure, grid: &Grid, v: &Direction, t: f64) -> f64 {
    grid.normals().iter().zip(&mu.masses).filter(|(u, _)| u.dot(v).abs() <= t).map(|(_, m)| m).sum()
}

/// `(t, sup_v strip_mass(v, t))` with `v` ranging over the grid normals.
pub fn strip_profile(mu: &DiscreteMeasure, grid: &Grid, ts: &[f64]) -> Vec<(f64, f64)> {
    ts.iter()
        .map(|&t| {
            let best = grid.normals().iter().map(|v| strip_mass(mu, grid, v, t)).fold(0.0, f64::max);
            (t, best)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub residual_plain: f64,
    pub lambda: f64,
    pub santalo_ratio: f64,
    pub centroid_ok: bool,
    pub active_ok: bool,
    /// `sum Psi(h_{K-sigma}) mu >= Psi(5) sum mu`.
    pub energy_bound_ok: bool,
    pub diameter: f64,
    /// `2 R` with `R` the circumradius about the origin.
    pub diameter_bound: f64,
    pub diameter_ok: bool,
    pub strip_profile: Vec<(f64, f64)>,
}

/// Support values of `K - sigma(K)` at the grid normals.
fn centered_support(body: &Body, grid: &Grid) -> Vec<f64> {
    let c = body.centroid();
    grid.normals().iter().map(|u| body.support(u) - u.dot(&c)).collect()
}

/// `[sum h_{K-sigma}^{-n} w] / [n kappa_n^2 / V]`.
pub fn santalo_ratio(body: &Body, grid: &Grid) -> f64 {
    let n = grid.dim() as f64;
    let polar: f64 = centered_support(body, grid).iter().zip(grid.weights()).map(|(h, w)| h.powf(-n) * w).sum();
    polar / (n * ball_volume(grid.dim()).powi(2) / body.volume())
}

/// `h_{K-sigma}(-u) <= n h_{K-sigma}(u)` at every grid normal.
pub fn centroid_inclusion(body: &Body, grid: &Grid) -> bool {
    let c = body.centroid();
    let n = grid.dim() as f64;
    let scale = body.diameter();
    grid.normals().iter().all(|u| {
        let up = body.support(u) - u.dot(&c);
        let down = body.support(&-**u) + u.dot(&c);
        down <= n * up + 1e-12 * scale
    })
}

/// Certificate for support values `h` (centered at the optimal center) and
/// the measure they were solved for. Failures are reported as flags.
pub fn certify(h: &SupportVector, grid: &Grid, mu: &DiscreteMeasure, orlicz: &OrliczSpec, mask: Option<&[bool]>) -> Result<Certificate> {
    let body = Body::wulff(h, grid)?;
    let (lambda, residual) = residual_plain(h, mu, orlicz, &body, mask);
    let active_ok = mu.masses.iter().enumerate().all(|(i, m)| *m == 0.0 || body.is_active(i));
    let psi5 = orlicz.big_psi(5.0);
    let energy: f64 = centered_support(&body, grid).iter().zip(&mu.masses).map(|(h, m)| orlicz.big_psi(*h) * m).sum();
    let energy_bound_ok = energy >= psi5 * mu.total();
    let diameter = body.diameter();
    let diameter_bound = match body.radii(&Point::zeros()) {
        Ok((_, r)) => 2.0 * r,
        Err(_) => f64::NAN,
    };
    Ok(Certificate {
        residual_plain: residual,
        lambda,
        santalo_ratio: santalo_ratio(&body, grid),
        centroid_ok: centroid_inclusion(&body, grid),
        active_ok,
        energy_bound_ok,
        diameter,
        diameter_bound,
        diameter_ok: diameter <= diameter_bound * (1.0 + 1e-12),
        strip_profile: strip_profile(mu, grid, &PROFILE_T),
    })
}

/// Polygon `{x : <x, u_i> <= h_i}` by successive half-plane clipping of a
/// large box. Independent of the hull-based construction.
fn clip_polygon(h: &[f64], normals: &[Point]) -> Vec<(f64, f64)> {
    let big = 1e3 * h.iter().copied().fold(0.0, f64::max);
    let mut poly = vec![(-big, -big), (big, -big), (big, big), (-big, big)];
    for (hi, u) in h.iter().zip(normals) {
        let side = |p: &(f64, f64)| p.0 * u.x + p.1 * u.y - hi;
        let mut out = Vec::with_capacity(poly.len() + 1);
        for k in 0..poly.len() {
            let a = poly[k];
            let b = poly[(k + 1) % poly.len()];
            let (sa, sb) = (side(&a), side(&b));
            if sa <= 0.0 {
                out.push(a);
            }
            if (sa < 0.0 && sb > 0.0) || (sa > 0.0 && sb < 0.0) {
                let s = sa / (sa - sb);
                out.push((a.0 + s * (b.0 - a.0), a.1 + s * (b.1 - a.1)));
            }
        }
        poly = out;
        if poly.is_empty() {
            break;
        }
    }
    poly
}

fn shoelace(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    0.5 * (0..n).map(|k| poly[k].0 * poly[(k + 1) % n].1 - poly[(k + 1) % n].0 * poly[k].1).sum::<f64>()
}

/// Golden-section maximization of `f` on `[a, b]`.
fn golden_max(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, iterations: usize) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iterations {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

struct Oracle<'a, K> {
    normals: Vec<Point>,
    masses: &'a [f64],
    kernel: K,
}

impl<K: Kernel> Oracle<'_, K> {
    fn phi(&self, h: &[f64], x: f64, y: f64) -> f64 {
        let mut total = 0.0;
        for ((h, u), m) in h.iter().zip(&self.normals).zip(self.masses) {
            let t = h - u.x * x - u.y * y;
            if t <= 0.0 {
                return f64::INFINITY;
            }
            if *m != 0.0 {
                total += self.kernel.big_psi(t) * m;
            }
        }
        total
    }

    /// `min_xi Phi` by a grid search over the bounding box and alternating
    /// golden-section polishing.
    fn reduced(&self, h: &[f64], poly: &[(f64, f64)], grid: usize, rounds: usize) -> f64 {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in poly {
            x0 = x0.min(p.0);
            x1 = x1.max(p.0);
            y0 = y0.min(p.1);
            y1 = y1.max(p.1);
        }
        let (dx, dy) = ((x1 - x0) / grid as f64, (y1 - y0) / grid as f64);
        let (mut bx, mut by, mut best) = (0.0, 0.0, f64::INFINITY);
        for i in 0..grid {
            for j in 0..grid {
                let (x, y) = (x0 + (i as f64 + 0.5) * dx, y0 + (j as f64 + 0.5) * dy);
                let v = self.phi(h, x, y);
                if v < best {
                    (bx, by, best) = (x, y, v);
                }
            }
        }
        let (mut wx, mut wy) = (dx, dy);
        for _ in 0..rounds {
            let (x, v) = golden_max(|x| -self.phi(h, x, by), bx - wx, bx + wx, 30);
            if -v < best {
                (bx, best) = (x, -v);
            }
            let (y, v) = golden_max(|y| -self.phi(h, bx, y), by - wy, by + wy, 30);
            if -v < best {
                (by, best) = (y, -v);
            }
            wx *= 0.5;
            wy *= 0.5;
        }
        best
    }

    /// Reduced energy of `h` after scaling to unit area; `None` when the
    /// polygon is degenerate or misses `volume_tol`.
    fn value(&self, h: &[f64], grid: usize, rounds: usize, volume_tol: f64) -> Option<(f64, Vec<f64>)> {
        let poly = clip_polygon(h, &self.normals);
        let area = shoelace(&poly);
        if !(area > 1e-12) {
            return None;
        }
        let s = area.powf(-0.5);
        let scaled: Vec<f64> = h.iter().map(|h| h * s).collect();
        let poly: Vec<(f64, f64)> = poly.iter().map(|p| (p.0 * s, p.1 * s)).collect();
        if (shoelace(&poly) - 1.0).abs() > volume_tol {
            return None;
        }
        let v = self.reduced(&scaled, &poly, grid, rounds);
        v.is_finite().then_some((v, scaled))
    }
}

/// Exhaustive search for the maximizer of the reduced energy over unit-area
/// polygons with normals from a planar grid of at most 8 directions.
///
/// `h_0` is pinned to 1 and the other values range over a logarithmic
/// lattice in `[0.1, 10]`; the number of levels per coordinate is 40 reduced
/// so that the lattice has at most `20_000` points. The lattice maximizer is
/// refined by coordinatewise golden-section passes until the largest move is
/// below `1e-4`. The result is centered at its optimal center.
pub fn brute_force_oracle<K: Kernel>(mu: &DiscreteMeasure, kernel: &K, grid: &Grid, volume_tol: f64) -> Result<SupportVector> {
    let n = grid.len();
    if grid.dim() != 2 || n > 8 {
        return Err(Error::InvalidProblem(format!("oracle needs a planar grid with at most 8 normals, got dim {} N {n}", grid.dim())));
    }
    let oracle = Oracle {
        normals: grid.normals().iter().map(|u| **u).collect(),
        masses: &mu.masses,
        kernel: KernelTable::new(kernel, 1e-7, 1e4, KernelTable::<K>::DEFAULT_POINTS),
    };
    let free = n - 1;
    let levels = (1..=40usize).rev().find(|l| (*l as f64).powi(free as i32) <= 20_000.0).unwrap_or(2).max(2);
    let lattice: Vec<f64> = (0..levels).map(|k| 10f64.powf(-1.0 + 2.0 * k as f64 / (levels - 1) as f64)).collect();

    let mut best = f64::NEG_INFINITY;
    let mut best_h = vec![1.0; n];
    let mut idx = vec![0usize; free];
    let mut h = vec![1.0; n];
    loop {
        for (k, &i) in idx.iter().enumerate() {
            h[k + 1] = lattice[i];
        }
        if let Some((v, _)) = oracle.value(&h, 8, 2, volume_tol) {
            if v > best {
                best = v;
                best_h.clone_from(&h);
            }
        }
        let mut k = 0;
        while k < free {
            idx[k] += 1;
            if idx[k] < levels {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == free {
            break;
        }
    }

    // coordinatewise refinement in log coordinates
    let log_step = 2.0 * std::f64::consts::LN_10 / (levels - 1) as f64;
    let mut width = log_step;
    let value_at = |h: &[f64]| oracle.value(h, 16, 12, volume_tol).map(|(v, _)| v).unwrap_or(f64::NEG_INFINITY);
    best = value_at(&best_h);
    for _pass in 0..200 {
        let mut moved: f64 = 0.0;
        for k in 1..n {
            let base = best_h[k].ln();
            let lo = (base - width).max(0.1f64.ln());
            let hi = (base + width).min(10f64.ln());
            let mut trial = best_h.clone();
            let (s, v) = golden_max(
                |s| {
                    trial[k] = s.exp();
                    value_at(&trial)
                },
                lo,
                hi,
                40,
            );
            if v > best {
                moved = moved.max((s.exp() - best_h[k]).abs());
                best_h[k] = s.exp();
                best = v;
            }
        }
        if moved < 1e-4 {
            if width < 1e-6 {
                break;
            }
            width *= 0.5;
        }
    }

    let (_, scaled) = oracle
        .value(&best_h, 16, 12, volume_tol)
        .ok_or_else(|| Error::InvalidProblem("oracle found no admissible polygon".into()))?;
    let h = SupportVector(scaled);
    let center = crate::center::solve_center(&h, grid, mu, kernel, 1e-12)?;
    crate::geometry::recenter(&h, grid, &center.point())
}
