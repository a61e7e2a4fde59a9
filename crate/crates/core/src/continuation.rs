//! Annealing in the mollification width `eps` and truncation level `m`,
//! with warm starts, final certification against the unmollified `psi`, and
//! the lambda absorption for power `phi`.

use serde::{Deserialize, Serialize};

use crate::center::DiscreteMeasure;
use crate::error::{Error, Result};
use crate::extremal::{ball, extremize, ExtremizeConfig, StopReason, TraceRow};
use crate::geometry::{Body, SupportVector};
use crate::kernel::{derive_constants, mollify, KernelConstants, OrliczSpec};
use crate::sphere_grid::Grid;
use crate::verification::residual_plain;

pub const DEFAULT_EPS_SCHEDULE: [f64; 6] = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 1e-4];
pub const DEFAULT_M_SCHEDULE: [u32; 4] = [4, 16, 64, 256];

/// `f_m = clamp(f, 1/m, m)`.
pub fn truncate_density(f: &[f64], m: u32) -> Vec<f64> {
    let m = m as f64;
    f.iter().map(|v| v.clamp(1.0 / m, m)).collect()
}

/// Default `eps` schedule with entries at or above `delta` dropped.
pub fn default_eps_schedule(delta: f64) -> Vec<f64> {
    DEFAULT_EPS_SCHEDULE.iter().copied().filter(|e| *e < delta).collect()
}

/// Non-empty, strictly decreasing, inside `(0, delta)`.
pub fn validate_eps_schedule(eps: &[f64], delta: f64) -> Result<()> {
    if eps.is_empty() {
        return Err(Error::InvalidProblem("eps schedule is empty".into()));
    }
    for (k, e) in eps.iter().enumerate() {
        if !(*e > 0.0 && *e < delta) {
            return Err(Error::EpsilonOutOfRange { eps: *e, delta });
        }
        if k > 0 && !(*e < eps[k - 1]) {
            return Err(Error::InvalidProblem("eps schedule must be strictly decreasing".into()));
        }
    }
    Ok(())
}

/// Entries at least 2 and strictly increasing.
pub fn validate_m_schedule(m: &[u32]) -> Result<()> {
    for (k, v) in m.iter().enumerate() {
        if *v < 2 {
            return Err(Error::InvalidProblem(format!("truncation level {v} below 2")));
        }
        if k > 0 && *v <= m[k - 1] {
            return Err(Error::InvalidProblem("m schedule must be strictly increasing".into()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub grid: Grid,
    /// `f(u_i)` at the grid normals.
    pub density: Vec<f64>,
    pub orlicz: OrliczSpec,
    pub constants: KernelConstants,
    pub eps_schedule: Vec<f64>,
    /// Truncation levels; empty means the density is used as given.
    pub m_schedule: Vec<u32>,
    pub extremize: ExtremizeConfig,
}

impl ProblemSpec {
    /// Problem with the default `eps` schedule and no truncation.
    pub fn new(grid: Grid, density: Vec<f64>, orlicz: OrliczSpec) -> Result<ProblemSpec> {
        ProblemSpec::truncated(grid, density, orlicz, Vec::new())
    }

    /// Problem with the default `eps` schedule and truncation levels `m`;
    /// the density may vanish when `m` is non-empty.
    pub fn truncated(grid: Grid, density: Vec<f64>, orlicz: OrliczSpec, m: Vec<u32>) -> Result<ProblemSpec> {
        let constants = derive_constants(&orlicz, grid.dim())?;
        let spec = ProblemSpec {
            eps_schedule: default_eps_schedule(constants.delta),
            grid,
            density,
            orlicz,
            constants,
            m_schedule: m,
            extremize: ExtremizeConfig::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_eps_schedule(mut self, eps: Vec<f64>) -> Result<ProblemSpec> {
        self.eps_schedule = eps;
        self.validate()?;
        Ok(self)
    }

    pub fn with_m_schedule(mut self, m: Vec<u32>) -> Result<ProblemSpec> {
        self.m_schedule = m;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.density.len() != self.grid.len() {
            return Err(Error::LengthMismatch { expected: self.grid.len(), got: self.density.len() });
        }
        validate_eps_schedule(&self.eps_schedule, self.constants.delta)?;
        validate_m_schedule(&self.m_schedule)?;
        if self.density.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::InvalidMeasure("density values must be finite and non-negative".into()));
        }
        if self.m_schedule.is_empty() && self.density.iter().any(|f| *f <= 0.0) {
            return Err(Error::InvalidMeasure("density vanishes at some normals; give an m schedule".into()));
        }
        self.measure(self.m_schedule.last().copied()).map(|_| ())
    }

    /// Masses for truncation level `m` (`None`: untruncated).
    pub fn measure(&self, m: Option<u32>) -> Result<DiscreteMeasure> {
        match m {
            Some(m) => DiscreteMeasure::from_density(&truncate_density(&self.density, m), &self.grid),
            None => DiscreteMeasure::from_density(&self.density, &self.grid),
        }
    }

    /// The measure of the last stage.
    pub fn final_measure(&self) -> Result<DiscreteMeasure> {
        self.measure(self.m_schedule.last().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub index: usize,
    pub m: Option<u32>,
    pub eps: f64,
    pub converged: bool,
    pub stop: StopReason,
    pub accepted_steps: usize,
    pub residual_start: f64,
    pub residual_end: f64,
    pub lambda: f64,
    pub energy: f64,
    /// `max_i |h_i - h_i(previous stage)|`.
    pub drift: f64,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    /// `(k, max_i |h_i - h_{i + N/k}|)` for each order `k` dividing `N`
    /// (planar grids only).
    pub rotations: Vec<(usize, f64)>,
    /// `max_i |h_i - h_{antipode(i)}|` when the grid is centrally symmetric.
    pub central: Option<f64>,
}

/// Rotational and central symmetry defects of `h`.
pub fn symmetry_report(h: &SupportVector, grid: &Grid) -> SymmetryReport {
    let n = grid.len();
    let mut rotations = Vec::new();
    if grid.dim() == 2 {
        for k in [2, 3, 4, 5, 6, 8] {
            if n.is_multiple_of(k) {
                let shift = n / k;
                let defect = (0..n).map(|i| (h.0[i] - h.0[(i + shift) % n]).abs()).fold(0.0, f64::max);
                rotations.push((k, defect));
            }
        }
    }
    let antipode: Option<Vec<usize>> = (0..n)
        .map(|i| {
            let target = -**grid.normal(i);
            (0..n).find(|&j| (**grid.normal(j) - target).norm() < 1e-9)
        })
        .collect();
    let central = antipode.map(|a| (0..n).map(|i| (h.0[i] - h.0[a[i]]).abs()).fold(0.0, f64::max));
    SymmetryReport { rotations, central }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub h: SupportVector,
    /// Optimal center after the final recentering.
    pub xi: [f64; 3],
    /// Multiplier against the unmollified `psi`.
    pub lambda: f64,
    pub lambda_mollified: f64,
    pub residual_mollified: f64,
    pub residual_plain: f64,
    pub converged: bool,
    /// First stage that stopped short of its tolerance.
    pub failed_stage: Option<usize>,
    pub stages: Vec<StageReport>,
    pub symmetry: SymmetryReport,
}

/// Runs every `(m, eps)` stage in order, warm-starting each from the
/// previous result (the first from the volume-one ball).
pub fn solve(problem: &ProblemSpec) -> Result<Solution> {
    problem.validate()?;
    let grid = &problem.grid;
    let levels: Vec<Option<u32>> = if problem.m_schedule.is_empty() {
        vec![None]
    } else {
        problem.m_schedule.iter().map(|m| Some(*m)).collect()
    };
    let mut h = ball(grid);
    let mut stages: Vec<StageReport> = Vec::new();
    let mut last = None;
    for m in levels {
        let mu = problem.measure(m)?;
        for &eps in &problem.eps_schedule {
            let kernel = mollify(&problem.orlicz, &problem.constants, eps)?;
            let out = extremize(&mu, grid, &kernel, &problem.extremize, Some(&h))?;
            let drift = out.h.0.iter().zip(&h.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            stages.push(StageReport {
                index: stages.len(),
                m,
                eps,
                converged: out.converged,
                stop: out.stop,
                accepted_steps: out.accepted_steps,
                residual_start: out.trace[0].el_residual,
                residual_end: out.el_residual,
                lambda: out.lambda,
                energy: out.energy_value,
                drift,
                trace: out.trace.clone(),
            });
            h = out.h.clone();
            last = Some(out);
        }
    }
    let last = last.expect("at least one stage");
    let mu = problem.final_measure()?;
    let body = Body::wulff(&h, grid)?;
    let (lambda, residual) = residual_plain(&h, &mu, &problem.orlicz, &body, None);
    let failed_stage = stages.iter().find(|s| !s.converged).map(|s| s.index);
    Ok(Solution {
        symmetry: symmetry_report(&h, grid),
        h,
        xi: [0.0; 3],
        lambda,
        lambda_mollified: last.lambda,
        residual_mollified: last.el_residual,
        residual_plain: residual,
        converged: failed_stage.is_none(),
        failed_stage,
        stages,
    })
}

/// `lambda^{1/(n-p)} h`: the rescaled body solves the equation with
/// multiplier one.
pub fn absorb_lambda(solution: &Solution, orlicz: &OrliczSpec, n: usize) -> Result<SupportVector> {
    match orlicz {
        OrliczSpec::Power { p } => Ok(solution.h.scaled(solution.lambda.powf(1.0 / (n as f64 - p)))),
        OrliczSpec::Tabulated(_) => Err(Error::NotPowerType),
    }
}
