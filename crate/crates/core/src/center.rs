//! The inner problem: for fixed support values, the point `xi` minimizing
//! `Phi_eps(K, xi) = sum_i Psi_eps(h_i - <u_i, xi>) mu_i` over the interior.
//!
//! The energy is strictly convex in `xi` and blows up at the boundary, so a
//! damped Newton iteration with an interior margin guard converges from the
//! centroid.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Body, SupportVector};
use crate::kernel::Kernel;
use crate::sphere_grid::{Direction, Grid, Point};

pub const DEFAULT_INNER_TOL: f64 = 1e-10;
const MAX_ITERATIONS: usize = 200;

/// Masses `mu_i = f(u_i) w_i` on the grid normals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    pub masses: Vec<f64>,
    /// Known bounds `tau1 < f < tau2`, recorded when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<(f64, f64)>,
}

impl DiscreteMeasure {
    /// Checks non-negativity, positive total mass and that no closed
    /// hemisphere carries all of it.
    pub fn new(masses: Vec<f64>, grid: &Grid) -> Result<DiscreteMeasure> {
        if masses.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), got: masses.len() });
        }
        if masses.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidMeasure("masses must be finite and non-negative".into()));
        }
        if !(masses.iter().sum::<f64>() > 0.0) {
            return Err(Error::InvalidMeasure("total mass must be positive".into()));
        }
        let m = DiscreteMeasure { masses, tau: None };
        let margin = m.hemisphere_margin(grid);
        if !(margin > 0.0) {
            return Err(Error::InvalidMeasure(format!(
                "mass concentrated on a closed hemisphere (margin {margin:e})"
            )));
        }
        Ok(m)
    }

    /// `f(u_i) w_i`.
    pub fn from_density(values: &[f64], grid: &Grid) -> Result<DiscreteMeasure> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        let masses = values.iter().zip(grid.weights()).map(|(f, w)| f * w).collect();
        DiscreteMeasure::new(masses, grid)
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// `min_v sum_{<u_i,v> > 0} mu_i <u_i, v>` over the grid normals and their
    /// pairwise bisectors as probe directions.
    pub fn hemisphere_margin(&self, grid: &Grid) -> f64 {
        let mut probes: Vec<Point> = grid.normals().iter().map(|u| **u).collect();
        probes.extend(grid.normals().iter().map(|u| -**u));
        if grid.dim() == 2 {
            let k = 720;
            probes.extend((0..k).map(|j| *Direction::planar(2.0 * std::f64::consts::PI * j as f64 / k as f64)));
        }
        probes
            .iter()
            .map(|v| {
                grid.normals()
                    .iter()
                    .zip(&self.masses)
                    .map(|(u, m)| m * u.dot(v).max(0.0))
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterResult {
    pub xi: [f64; 3],
    pub gradient_norm: f64,
    pub hessian_min_eigenvalue: f64,
    pub iterations: usize,
    /// Newton decrements of the accepted steps.
    pub decrements: Vec<f64>,
}

impl CenterResult {
    pub fn point(&self) -> Point {
        Point::from(self.xi)
    }
}

fn margins<'a>(h: &'a SupportVector, grid: &'a Grid, xi: &Point) -> impl Iterator<Item = f64> + 'a {
    let xi = *xi;
    h.0.iter().zip(grid.normals()).map(move |(h, u)| h - u.dot(&xi))
}

fn min_margin(h: &SupportVector, grid: &Grid, xi: &Point) -> f64 {
    margins(h, grid, xi).fold(f64::INFINITY, f64::min)
}

/// `sum_i Psi_eps(h_i - <u_i, xi>) mu_i`.
pub fn energy<K: Kernel>(h: &SupportVector, xi: &Point, grid: &Grid, mu: &DiscreteMeasure, kernel: &K) -> Result<f64> {
    let mut total = 0.0;
    for (t, m) in margins(h, grid, xi).zip(&mu.masses) {
        if !(t > 0.0) {
            return Err(Error::NotInterior { margin: t });
        }
        if *m != 0.0 {
            total += kernel.big_psi(t) * m;
        }
    }
    Ok(total)
}

/// `grad_xi Phi = sum_i u_i psi_eps(h_i - <u_i, xi>) mu_i`; vanishes at `xi(K)`.
pub fn center_gradient<K: Kernel>(
    h: &SupportVector,
    xi: &Point,
    grid: &Grid,
    mu: &DiscreteMeasure,
    kernel: &K,
) -> Result<Point> {
    let mut g = Point::zeros();
    for ((t, m), u) in margins(h, grid, xi).zip(&mu.masses).zip(grid.normals()) {
        if !(t > 0.0) {
            return Err(Error::NotInterior { margin: t });
        }
        if *m != 0.0 {
            g += **u * (kernel.psi(t) * m);
        }
    }
    Ok(g)
}

/// `sum_i u_i u_i^T (-psi'_eps(h_i - <u_i, xi>)) mu_i`. For planar grids the
/// third row and column are zero.
pub fn center_hessian<K: Kernel>(
    h: &SupportVector,
    xi: &Point,
    grid: &Grid,
    mu: &DiscreteMeasure,
    kernel: &K,
) -> Result<Matrix3<f64>> {
    let mut m3 = Matrix3::zeros();
    for ((t, m), u) in margins(h, grid, xi).zip(&mu.masses).zip(grid.normals()) {
        if !(t > 0.0) {
            return Err(Error::NotInterior { margin: t });
        }
        if *m != 0.0 {
            m3 += (**u * u.transpose()) * (-kernel.dpsi(t) * m);
        }
    }
    Ok(m3)
}

/// Solves `hess * x = rhs` in the first `dim` coordinates.
pub(crate) fn solve_small(hess: &Matrix3<f64>, rhs: &Vector3<f64>, dim: usize) -> Option<Vector3<f64>> {
    if dim == 2 {
        let m = Matrix2::new(hess[(0, 0)], hess[(0, 1)], hess[(1, 0)], hess[(1, 1)]);
        let x = m.cholesky()?.solve(&Vector2::new(rhs.x, rhs.y));
        Some(Vector3::new(x.x, x.y, 0.0))
    } else {
        hess.cholesky().map(|c| c.solve(rhs))
    }
}

pub(crate) fn min_eigenvalue(hess: &Matrix3<f64>, dim: usize) -> f64 {
    if dim == 2 {
        let m = Matrix2::new(hess[(0, 0)], hess[(0, 1)], hess[(1, 0)], hess[(1, 1)]);
        m.symmetric_eigenvalues().min()
    } else {
        hess.symmetric_eigenvalues().min()
    }
}

/// Damped Newton from the centroid of `[h]`. Steps are halved until the
/// iterate keeps every facet margin above `1e-3` of the centroid's minimum
/// margin (or half the current one, whichever is smaller) and the energy
/// does not increase. Stops when `|grad| <= tol * sum mu`.
pub fn solve_center<K: Kernel>(
    h: &SupportVector,
    grid: &Grid,
    mu: &DiscreteMeasure,
    kernel: &K,
    tol: f64,
) -> Result<CenterResult> {
    let body = Body::wulff(h, grid)?;
    solve_center_from(h, grid, mu, kernel, tol, body.centroid())
}

pub fn solve_center_from<K: Kernel>(
    h: &SupportVector,
    grid: &Grid,
    mu: &DiscreteMeasure,
    kernel: &K,
    tol: f64,
    start: Point,
) -> Result<CenterResult> {
    let dim = grid.dim();
    let target = tol * mu.total();
    let guard = 1e-3 * min_margin(h, grid, &start);
    if !(guard > 0.0) {
        return Err(Error::NotInterior { margin: guard });
    }
    let mut xi = start;
    let mut value = energy(h, &xi, grid, mu, kernel)?;
    let mut decrements = Vec::new();
    let mut trace = Vec::new();
    for iteration in 0..MAX_ITERATIONS {
        let g = center_gradient(h, &xi, grid, mu, kernel)?;
        let gnorm = g.norm();
        trace.push(gnorm);
        let hess = center_hessian(h, &xi, grid, mu, kernel)?;
        if gnorm <= target {
            return Ok(CenterResult {
                xi: xi.into(),
                gradient_norm: gnorm,
                hessian_min_eigenvalue: min_eigenvalue(&hess, dim),
                iterations: iteration,
                decrements,
            });
        }
        let step = solve_small(&hess, &g, dim).map(|s| -s).unwrap_or(-g);
        let decrement = (-g.dot(&step)).max(0.0).sqrt();
        let floor = guard.min(0.5 * min_margin(h, grid, &xi));
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = xi + step * t;
            if min_margin(h, grid, &trial) >= floor {
                let v = energy(h, &trial, grid, mu, kernel)?;
                // tolerate rounding-level increases once the step is tiny
                if v <= value + 1e-14 * value.abs() {
                    xi = trial;
                    value = v;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        decrements.push(decrement);
    }
    let gnorm = center_gradient(h, &xi, grid, mu, kernel)?.norm();
    if gnorm <= target {
        let hess = center_hessian(h, &xi, grid, mu, kernel)?;
        return Ok(CenterResult {
            xi: xi.into(),
            gradient_norm: gnorm,
            hessian_min_eigenvalue: min_eigenvalue(&hess, dim),
            iterations: trace.len(),
            decrements,
        });
    }
    Err(Error::CenterNotConverged { iterations: trace.len(), gradient_norm: gnorm, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::recenter;
    use crate::kernel::{derive_constants, make_power_spec, mollify, SmoothedKernel};

    fn kernel(eps: f64) -> SmoothedKernel {
        let spec = make_power_spec(2, -1.0).unwrap();
        let c = derive_constants(&spec, 2).unwrap();
        mollify(&spec, &c, eps).unwrap()
    }

    #[test]
    fn measure_validation() {
        let g = Grid::circle(4);
        assert!(DiscreteMeasure::new(vec![1.0; 4], &g).is_ok());
        assert!(DiscreteMeasure::new(vec![1.0, 1.0, 0.0, 1.0], &g).is_err());
        assert!(DiscreteMeasure::new(vec![0.0; 4], &g).is_err());
        assert!(DiscreteMeasure::new(vec![1.0, -1.0, 1.0, 1.0], &g).is_err());
        assert!(DiscreteMeasure::new(vec![1.0; 3], &g).is_err());
    }

    #[test]
    fn square_energy_and_hessian() {
        let g = Grid::circle(4);
        let k = kernel(1e-3);
        let h = SupportVector::constant(4, 1.0);
        let mu = DiscreteMeasure::new(vec![1.0; 4], &g).unwrap();
        let e = energy(&h, &Point::zeros(), &g, &mu, &k).unwrap();
        assert!((e - 4.0 * k.big_psi(1.0)).abs() < 1e-15);
        // Psi(1) = 1 for p = -1; the mollified value stays within O(eps)
        assert!((e - 4.0).abs() < 4.0 * 3e-3);
        let hess = center_hessian(&h, &Point::zeros(), &g, &mu, &k).unwrap();
        let d = -2.0 * k.dpsi(1.0);
        assert!((hess[(0, 0)] - d).abs() < 1e-12 && (hess[(1, 1)] - d).abs() < 1e-12);
        assert!(hess[(0, 1)].abs() < 1e-12);
        let grad = center_gradient(&h, &Point::zeros(), &g, &mu, &k).unwrap();
        assert!(grad.norm() < 1e-12);
    }

    #[test]
    fn outside_is_an_error() {
        let g = Grid::circle(4);
        let k = kernel(1e-2);
        let h = SupportVector::constant(4, 1.0);
        let mu = DiscreteMeasure::new(vec![1.0; 4], &g).unwrap();
        assert!(matches!(
            energy(&h, &Point::new(1.0, 0.0, 0.0), &g, &mu, &k),
            Err(Error::NotInterior { .. })
        ));
    }

    #[test]
    fn energy_decreases_toward_center() {
        let g = Grid::build(2, 16).unwrap();
        let k = kernel(1e-2);
        let h = SupportVector::constant(16, 1.0);
        let mu = DiscreteMeasure::from_density(&[1.0; 16], &g).unwrap();
        let mut last = f64::INFINITY;
        for j in 0..20 {
            let x = 0.95 * (1.0 - j as f64 / 19.0);
            let e = energy(&h, &Point::new(x, 0.0, 0.0), &g, &mu, &k).unwrap();
            assert!(e < last);
            last = e;
        }
    }

    #[test]
    fn symmetric_center_is_origin() {
        let g = Grid::build(2, 64).unwrap();
        let k = kernel(1e-2);
        let h = SupportVector::constant(64, 0.7);
        let mu = DiscreteMeasure::from_density(&vec![1.0; 64], &g).unwrap();
        let c = solve_center(&h, &g, &mu, &k, DEFAULT_INNER_TOL).unwrap();
        assert!(c.point().norm() < 1e-10);
        assert!(c.hessian_min_eigenvalue > 0.0);
    }

    #[test]
    fn translation_equivariance() {
        let g = Grid::build(2, 32).unwrap();
        let k = kernel(1e-2);
        let h = SupportVector(
            g.normals().iter().map(|u| (1.0 + 0.3 * u.x * u.x + 0.2 * u.y).max(0.5)).collect(),
        );
        let mu = DiscreteMeasure::from_density(
            &g.normals().iter().map(|u| 1.0 + 0.5 * u.x).collect::<Vec<_>>(),
            &g,
        )
        .unwrap();
        let a = solve_center(&h, &g, &mu, &k, 1e-12).unwrap();
        let v = Point::new(0.1, -0.05, 0.0);
        let hv = recenter(&h, &g, &v).unwrap();
        let b = solve_center(&hv, &g, &mu, &k, 1e-12).unwrap();
        assert!((b.point() - (a.point() - v)).norm() < 1e-9);
    }
}
