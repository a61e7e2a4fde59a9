//! Outer problem: extremize `F(h) = Phi_eps([h], xi([h]))` over support
//! vectors with `V([h]) = 1`.
//!
//! By the envelope identity the derivative of `F` in `h_i` is
//! `-psi_eps(h_i - <u_i, xi>) mu_i`; the volume gradient is the facet-area
//! vector `S`. Every iteration fixes the translation gauge by moving `xi` to
//! the origin, picks an ascent direction tangent to `{V = 1}`, and runs a
//! backtracking line search with volume renormalization `h <- h V^{-1/n}`.

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::center::{solve_center, solve_small, CenterResult, DiscreteMeasure, DEFAULT_INNER_TOL};
use crate::error::Result;
use crate::geometry::{recenter, Body, SupportVector};
use crate::kernel::Kernel;
use crate::sphere_grid::{ball_volume, Grid, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AscentDirection {
    /// Tangent-space Newton step with the Lagrangian Hessian made definite
    /// by taking absolute eigenvalues; falls back to the gradient when the
    /// line search rejects it.
    Newton,
    /// `d = g - (<g,S>/<S,S>) S`.
    Gradient,
}

/// Whether `F` is maximized (default) or minimized. Minimization is
/// experimental.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremizeConfig {
    pub tol: f64,
    pub inner_tol: f64,
    pub max_iterations: usize,
    pub direction: AscentDirection,
    pub sense: Sense,
    pub armijo: f64,
    pub min_step: f64,
    pub h_floor: f64,
    /// First trial step moves no support value by more than this fraction
    /// of itself. The discrete energy is unbounded along needle-shaped
    /// bodies, so long steps can leave the basin of the interior extremum.
    pub max_relative_step: f64,
}

impl Default for ExtremizeConfig {
    fn default() -> Self {
        ExtremizeConfig {
            tol: 1e-9,
            inner_tol: DEFAULT_INNER_TOL,
            max_iterations: 500,
            direction: AscentDirection::Newton,
            sense: Sense::Maximize,
            armijo: 1e-4,
            min_step: 1e-14,
            h_floor: 1e-8,
            max_relative_step: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub energy: f64,
    pub el_residual: f64,
    pub lambda: f64,
    pub step: f64,
    pub rmin: f64,
    pub rmax: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    StepTooSmall,
    LineSearchFailed,
    MaxIterations,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtremalBody {
    /// Support values with `xi = o`.
    pub h: SupportVector,
    pub lambda: f64,
    pub el_residual: f64,
    pub energy_value: f64,
    pub converged: bool,
    pub stop: StopReason,
    pub accepted_steps: usize,
    pub center: CenterResult,
    pub trace: Vec<TraceRow>,
}

/// Envelope gradient `g_i = -psi_eps(h_i - <u_i, xi>) mu_i` at the solved
/// center `xi`.
pub fn shape_gradient<K: Kernel>(h: &SupportVector, xi: &Point, grid: &Grid, mu: &DiscreteMeasure, kernel: &K) -> Vec<f64> {
    h.0.iter()
        .zip(grid.normals())
        .zip(&mu.masses)
        .map(|((h, u), m)| if *m == 0.0 { 0.0 } else { -kernel.psi(h - u.dot(xi)) * m })
        .collect()
}

/// `lambda = (1/n) sum_i h_i psi(h_i) mu_i` for `h` already centered at `xi`.
pub fn lambda_estimate<K: Kernel>(h: &SupportVector, mu: &DiscreteMeasure, kernel: &K, dim: usize) -> f64 {
    h.0.iter()
        .zip(&mu.masses)
        .filter(|(_, m)| **m != 0.0)
        .map(|(h, m)| h * kernel.psi(*h) * m)
        .sum::<f64>()
        / dim as f64
}

/// Least-squares multiplier fitting `psi(h_i) mu_i ~ lambda S_i`.
pub fn lambda_least_squares<K: Kernel>(h: &SupportVector, mu: &DiscreteMeasure, kernel: &K, body: &Body) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for ((h, m), s) in h.0.iter().zip(&mu.masses).zip(body.areas()) {
        let a = if *m == 0.0 { 0.0 } else { kernel.psi(*h) * m };
        num += a * s;
        den += s * s;
    }
    num / den
}

/// `max_i |psi(h_i) mu_i - lambda S_i| / (psi(h_i) mu_i + lambda S_i)` over
/// normals with mass or area, restricted to `mask` when given.
pub fn el_residual_masked<K: Kernel>(
    h: &SupportVector,
    mu: &DiscreteMeasure,
    kernel: &K,
    body: &Body,
    lambda: f64,
    mask: Option<&[bool]>,
) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, ((h, m), s)) in h.0.iter().zip(&mu.masses).zip(body.areas()).enumerate() {
        if mask.is_some_and(|mask| !mask[i]) || (*m == 0.0 && *s == 0.0) {
            continue;
        }
        let a = if *m == 0.0 { 0.0 } else { kernel.psi(*h) * m };
        let b = lambda * s;
        worst = worst.max((a - b).abs() / (a + b + 1e-300));
    }
    worst
}

pub fn el_residual<K: Kernel>(h: &SupportVector, mu: &DiscreteMeasure, kernel: &K, body: &Body, lambda: f64) -> f64 {
    el_residual_masked(h, mu, kernel, body, lambda, None)
}

/// Support values of the volume-one ball.
pub fn ball(grid: &Grid) -> SupportVector {
    let r = ball_volume(grid.dim()).powf(-1.0 / grid.dim() as f64);
    SupportVector::constant(grid.len(), r)
}

/// `h` scaled so `V([h]) = 1`.
pub fn normalize_volume(h: &SupportVector, grid: &Grid) -> Result<SupportVector> {
    let v = Body::wulff(h, grid)?.volume();
    Ok(h.scaled(v.powf(-1.0 / grid.dim() as f64)))
}

/// A support vector with its center solved and moved to the origin.
struct State {
    h: SupportVector,
    body: Body,
    center: CenterResult,
    energy: f64,
}

fn evaluate<K: Kernel>(h: &SupportVector, grid: &Grid, mu: &DiscreteMeasure, kernel: &K, inner_tol: f64) -> Result<State> {
    let center = solve_center(h, grid, mu, kernel, inner_tol)?;
    let h = recenter(h, grid, &center.point())?;
    let body = Body::wulff(&h, grid)?;
    let energy = crate::center::energy(&h, &Point::zeros(), grid, mu, kernel)?;
    Ok(State { h, body, center, energy })
}

/// Reduced energy `F(h) = min_xi Phi_eps([h], xi)`.
pub fn reduced_energy<K: Kernel>(h: &SupportVector, grid: &Grid, mu: &DiscreteMeasure, kernel: &K, inner_tol: f64) -> Result<f64> {
    let center = solve_center(h, grid, mu, kernel, inner_tol)?;
    crate::center::energy(h, &center.point(), grid, mu, kernel)
}

/// Orthonormal basis of `span{S, e_1-translation, ..., e_n-translation}`.
fn constraint_basis(grid: &Grid, areas: &[f64]) -> Vec<DVector<f64>> {
    let n = grid.len();
    let mut cols: Vec<DVector<f64>> = vec![DVector::from_column_slice(areas)];
    for j in 0..grid.dim() {
        cols.push(DVector::from_iterator(n, grid.normals().iter().map(|u| u[j])));
    }
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for mut c in cols {
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&c);
                c -= b * proj;
            }
        }
        let norm = c.norm();
        if norm > 1e-12 {
            basis.push(c / norm);
        }
    }
    basis
}

fn project(v: &DVector<f64>, basis: &[DVector<f64>]) -> DVector<f64> {
    let mut out = v.clone();
    for b in basis {
        let proj = b.dot(&out);
        out -= b * proj;
    }
    out
}

/// Hessian of the reduced energy: `D - B Hxx^{-1} B^T`, with
/// `D = diag(-psi' mu)`, `B_i = psi' mu_i u_i`.
fn reduced_energy_hessian<K: Kernel>(h: &SupportVector, grid: &Grid, mu: &DiscreteMeasure, kernel: &K) -> DMatrix<f64> {
    let n = grid.len();
    let dim = grid.dim();
    let dpsi: Vec<f64> = h.0.iter().zip(&mu.masses).map(|(h, m)| if *m == 0.0 { 0.0 } else { kernel.dpsi(*h) * m }).collect();
    let mut hxx = Matrix3::zeros();
    for (u, d) in grid.normals().iter().zip(&dpsi) {
        hxx -= (**u * u.transpose()) * *d;
    }
    // columns of Hxx^{-1} B^T
    let mut solved: Vec<Point> = Vec::with_capacity(n);
    for (u, d) in grid.normals().iter().zip(&dpsi) {
        let b = **u * *d;
        solved.push(solve_small(&hxx, &b, dim).unwrap_or_else(Point::zeros));
    }
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let bi = **grid.normal(i) * dpsi[i];
        for j in i..n {
            let v = -bi.dot(&solved[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m[(i, i)] -= dpsi[i];
    }
    m
}

fn newton_direction<K: Kernel>(
    state: &State,
    grid: &Grid,
    mu: &DiscreteMeasure,
    kernel: &K,
    grad: &DVector<f64>,
    sign: f64,
) -> Option<DVector<f64>> {
    let areas = state.body.areas();
    let s = DVector::from_column_slice(areas);
    let multiplier = -sign * grad.dot(&s) / s.dot(&s);
    let mut lag = reduced_energy_hessian(&state.h, grid, mu, kernel) * sign + state.body.volume_hessian() * multiplier;
    lag = (&lag + lag.transpose()) * 0.5;
    let basis = constraint_basis(grid, areas);
    let n = grid.len();
    let mut proj = DMatrix::<f64>::identity(n, n);
    for b in &basis {
        proj -= b * b.transpose();
    }
    let scale = lag.diagonal().amax().max(1e-300);
    let mut m = &proj * &lag * &proj;
    for b in &basis {
        m += (b * b.transpose()) * scale;
    }
    let eig = m.symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let pg = project(grad, &basis);
    let mut d = DVector::zeros(n);
    for k in 0..n {
        let v = eig.eigenvectors.column(k);
        let coef = v.dot(&pg) / eig.eigenvalues[k].abs().max(1e-10 * top);
        d += v * coef;
    }
    let d = project(&d, &basis);
    d.iter().all(|x| x.is_finite()).then_some(d)
}

fn gradient_direction(grad: &DVector<f64>, areas: &[f64]) -> DVector<f64> {
    let s = DVector::from_column_slice(areas);
    grad - &s * (grad.dot(&s) / s.dot(&s))
}

/// Largest `t` with `t |d_i| <= frac h_i` for all `i`.
fn relative_cap(h: &SupportVector, d: &DVector<f64>, frac: f64) -> f64 {
    h.0.iter().zip(d.iter()).filter(|(_, d)| **d != 0.0).map(|(h, d)| frac * h / d.abs()).fold(f64::INFINITY, f64::min)
}

fn trace_row(iter: usize, state: &State, lambda: f64, residual: f64, step: f64) -> TraceRow {
    let (rmin, rmax) = state.body.radii(&Point::zeros()).unwrap_or((f64::NAN, f64::NAN));
    TraceRow { iter, energy: state.energy, el_residual: residual, lambda, step, rmin, rmax }
}

/// Projected ascent on `{V = 1}` from `initial` (the volume-one ball when
/// `None`).
pub fn extremize<K: Kernel>(
    mu: &DiscreteMeasure,
    grid: &Grid,
    kernel: &K,
    config: &ExtremizeConfig,
    initial: Option<&SupportVector>,
) -> Result<ExtremalBody> {
    let dim = grid.dim();
    let sign = match config.sense {
        Sense::Maximize => 1.0,
        Sense::Minimize => -1.0,
    };
    let start = match initial {
        Some(h) => normalize_volume(h, grid)?,
        None => ball(grid),
    };
    let mut state = evaluate(&start, grid, mu, kernel, config.inner_tol)?;
    let mut trace = Vec::new();
    let mut accepted = 0;
    let mut last_step = 0.0;
    let mut stop = StopReason::MaxIterations;

    for iter in 0..=config.max_iterations {
        let lambda = lambda_estimate(&state.h, mu, kernel, dim);
        let residual = el_residual(&state.h, mu, kernel, &state.body, lambda);
        trace.push(trace_row(iter, &state, lambda, residual, last_step));
        if residual <= config.tol {
            stop = StopReason::Converged;
            break;
        }
        if iter == config.max_iterations {
            break;
        }
        let g = DVector::from_vec(shape_gradient(&state.h, &Point::zeros(), grid, mu, kernel)) * sign;
        let mut candidates = Vec::new();
        if config.direction == AscentDirection::Newton {
            if let Some(d) = newton_direction(&state, grid, mu, kernel, &g, sign) {
                let t0 = relative_cap(&state.h, &d, config.max_relative_step).min(1.0);
                candidates.push((d, t0));
            }
        }
        let d = gradient_direction(&g, state.body.areas());
        let t0 = relative_cap(&state.h, &d, config.max_relative_step).min(1.0 / d.amax());
        candidates.push((d, t0));

        let mut moved = None;
        for (d, t0) in candidates {
            let slope = g.dot(&d);
            if !(slope > 0.0) {
                continue;
            }
            if let Some(next) = line_search(&state, &d, t0, slope, sign, grid, mu, kernel, config)? {
                moved = Some(next);
                break;
            }
        }
        match moved {
            Some((next, step)) => {
                state = next;
                last_step = step;
                accepted += 1;
            }
            None => {
                stop = StopReason::LineSearchFailed;
                break;
            }
        }
        if last_step < config.min_step {
            stop = StopReason::StepTooSmall;
            break;
        }
    }

    let last = *trace.last().unwrap();
    Ok(ExtremalBody {
        h: state.h,
        lambda: last.lambda,
        el_residual: last.el_residual,
        energy_value: state.energy,
        converged: stop == StopReason::Converged,
        stop,
        accepted_steps: accepted,
        center: state.center,
        trace,
    })
}

#[allow(clippy::too_many_arguments)]
fn line_search<K: Kernel>(
    state: &State,
    d: &DVector<f64>,
    t0: f64,
    slope: f64,
    sign: f64,
    grid: &Grid,
    mu: &DiscreteMeasure,
    kernel: &K,
    config: &ExtremizeConfig,
) -> Result<Option<(State, f64)>> {
    let dmax = d.amax();
    // below this predicted gain the Armijo test is lost in rounding of F
    let noise = 64.0 * f64::EPSILON * state.energy.abs().max(1.0);
    let mut residual_now = None;
    let mut t = t0;
    while t * dmax >= config.min_step {
        let trial = SupportVector(
            state.h.0.iter().zip(d.iter()).map(|(h, d)| (h + t * d).max(config.h_floor)).collect(),
        );
        if let Ok(trial) = normalize_volume(&trial, grid) {
            if let Ok(next) = evaluate(&trial, grid, mu, kernel, config.inner_tol) {
                if sign * next.energy >= sign * state.energy + config.armijo * t * slope {
                    return Ok(Some((next, t * dmax)));
                }
                if t * slope <= noise && sign * next.energy >= sign * state.energy - noise {
                    let before = *residual_now.get_or_insert_with(|| state_residual(state, mu, kernel));
                    if state_residual(&next, mu, kernel) < before {
                        return Ok(Some((next, t * dmax)));
                    }
                }
            }
        }
        t *= 0.5;
    }
    Ok(None)
}

fn state_residual<K: Kernel>(state: &State, mu: &DiscreteMeasure, kernel: &K) -> f64 {
    let lambda = lambda_estimate(&state.h, mu, kernel, state.body.dim());
    el_residual(&state.h, mu, kernel, &state.body, lambda)
}

impl ExtremalBody {
    /// Trace CSV `iter,energy,el_residual,lambda,step,rmin,rmax`.
    pub fn trace_csv(&self) -> String {
        trace_csv(&self.trace)
    }
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("iter,energy,el_residual,lambda,step,rmin,rmax\n");
    for r in rows {
        writeln!(
            out,
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.iter, r.energy, r.el_residual, r.lambda, r.step, r.rmin, r.rmax
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{derive_constants, make_power_spec, mollify, SmoothedKernel};
    use std::f64::consts::PI;

    fn kernel(eps: f64) -> SmoothedKernel {
        let spec = make_power_spec(2, -1.0).unwrap();
        let c = derive_constants(&spec, 2).unwrap();
        mollify(&spec, &c, eps).unwrap()
    }

    #[test]
    fn square_gradient_is_uniform() {
        let g = Grid::circle(4);
        let k = kernel(1e-2);
        let h = SupportVector::constant(4, 1.0);
        let mu = DiscreteMeasure::new(vec![1.0; 4], &g).unwrap();
        let grad = shape_gradient(&h, &Point::zeros(), &g, &mu, &k);
        assert!(grad.iter().all(|x| (x + k.psi(1.0)).abs() < 1e-15));
        let grad2 = shape_gradient(&h.scaled(2.0), &Point::zeros(), &g, &mu, &k);
        assert!(grad.iter().zip(&grad2).all(|(a, b)| b.abs() < a.abs()));
    }

    #[test]
    fn volume_hessian_matches_finite_differences() {
        let g = Grid::build(2, 12).unwrap();
        let h = SupportVector(g.normals().iter().map(|u| 1.0 + 0.2 * u.x + 0.1 * u.y * u.y).collect());
        let body = Body::wulff(&h, &g).unwrap();
        let hv = body.volume_hessian();
        let step = 1e-6;
        for j in 0..g.len() {
            let mut hp = h.clone();
            hp.0[j] += step;
            let mut hm = h.clone();
            hm.0[j] -= step;
            let sp = Body::wulff(&hp, &g).unwrap();
            let sm = Body::wulff(&hm, &g).unwrap();
            for i in 0..g.len() {
                let fd = (sp.areas()[i] - sm.areas()[i]) / (2.0 * step);
                assert!((fd - hv[(i, j)]).abs() < 1e-6, "({i},{j}) {fd} vs {}", hv[(i, j)]);
            }
        }
        // Euler: H h = (n - 1) S
        let hh = &hv * DVector::from_column_slice(&h.0);
        for i in 0..g.len() {
            assert!((hh[i] - body.areas()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn ball_is_stationary_for_uniform_density() {
        let g = Grid::build(2, 64).unwrap();
        let k = kernel(1e-3);
        let mu = DiscreteMeasure::from_density(&vec![1.0; 64], &g).unwrap();
        let out = extremize(&mu, &g, &k, &ExtremizeConfig { tol: 1e-3, ..Default::default() }, None).unwrap();
        assert!(out.converged);
        let r = PI.powf(-0.5);
        assert!(out.h.0.iter().all(|h| (h - r).abs() < 1e-3 * r));
    }

    #[test]
    fn gradient_and_newton_agree() {
        let g = Grid::build(2, 16).unwrap();
        let k = kernel(1e-2);
        let f: Vec<f64> = g.normals().iter().map(|u| 1.0 + 0.4 * u.x + 0.3 * u.y * u.y).collect();
        let mu = DiscreteMeasure::from_density(&f, &g).unwrap();
        let newton = extremize(&mu, &g, &k, &ExtremizeConfig { tol: 1e-10, ..Default::default() }, None).unwrap();
        assert!(newton.converged, "{:?}", newton.stop);
        let grad_cfg = ExtremizeConfig { tol: 1e-6, direction: AscentDirection::Gradient, max_iterations: 20000, ..Default::default() };
        let grad = extremize(&mu, &g, &k, &grad_cfg, None).unwrap();
        assert!(grad.converged, "{:?} {}", grad.stop, grad.el_residual);
        for (a, b) in newton.h.0.iter().zip(&grad.h.0) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
        // accepted iterates never lose energy
        for w in grad.trace.windows(2) {
            assert!(w[1].energy >= w[0].energy);
        }
        for row in &newton.trace {
            let v = row.energy;
            assert!(v.is_finite());
        }
    }
}
