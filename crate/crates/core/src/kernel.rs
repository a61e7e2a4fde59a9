//! Orlicz data `phi`, `psi = 1/phi`, `Psi(t) = int_t^inf psi` and the
//! mollified kernel `psi_eps`, `Psi_eps` used by the variational scheme.
//!
//! `psi_eps` is assembled from four pieces:
//!
//! * `aleph t^(q-1)` on `(0, eps/2]`,
//! * the tangent line of that power at `eps/2` on `(eps/2, t0)`,
//! * a monotone C^1 cubic join on `(t0, eps)`,
//! * `theta_eps = psi * eta_eps` on `[eps, inf)`,
//!
//! plus `eps / (1 + t^2)` everywhere. The convolution uses a fixed 32-point
//! Gauss rule against the bump `exp(-1/(1-x^2))`, so `theta_eps` is a finite
//! weighted average of `psi` over `[t, t + eps]` and `Psi_eps` on `[eps, inf)`
//! is the same average of `Psi`.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre, log_split_integral};

/// Anything that can play the role of `psi` in the energy.
pub trait Kernel {
    fn psi(&self, t: f64) -> f64;
    fn dpsi(&self, t: f64) -> f64;
    /// `int_t^inf psi`.
    fn big_psi(&self, t: f64) -> f64;
}

/// Tabulated `phi` with monotone cubic interpolation between samples,
/// power-law extrapolation `phi ~ t^(1-p)` below the table and
/// `psi ~ t^tail_exponent` above it.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiTable {
    pub p: f64,
    pub t: Vec<f64>,
    pub phi: Vec<f64>,
    pub tail_exponent: f64,
    slopes: Vec<f64>,
    /// `Psi` at the table nodes.
    big_psi_nodes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OrliczSpec {
    Power { p: f64 },
    Tabulated(PhiTable),
}

pub fn make_power_spec(n: usize, p: f64) -> Result<OrliczSpec> {
    if !(p > -(n as f64) && p < 0.0) {
        return Err(Error::ExponentOutOfRange { p, n });
    }
    Ok(OrliczSpec::Power { p })
}

impl PhiTable {
    pub fn new(n: usize, p: f64, t: Vec<f64>, phi: Vec<f64>, tail_exponent: f64) -> Result<PhiTable> {
        if !(p > -(n as f64) && p < 0.0) {
            return Err(Error::ExponentOutOfRange { p, n });
        }
        if t.len() != phi.len() || t.len() < 2 {
            return Err(Error::InvalidOrlicz("table needs at least two (t, phi) pairs".into()));
        }
        if t[0] <= 0.0 || t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidOrlicz("table abscissae must be positive and increasing".into()));
        }
        if phi[0] <= 0.0 || phi.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidOrlicz("phi must be positive and strictly increasing".into()));
        }
        if !(tail_exponent < -1.0) {
            return Err(Error::InvalidOrlicz(format!(
                "tail exponent {tail_exponent} must be < -1 for psi to be integrable"
            )));
        }
        let slopes = monotone_slopes(&t, &phi);
        let mut table = PhiTable { p, t, phi, tail_exponent, slopes, big_psi_nodes: Vec::new() };
        table.integrate_nodes();
        Ok(table)
    }

    fn integrate_nodes(&mut self) {
        let m = self.t.len();
        let mut nodes = vec![0.0; m];
        let last = m - 1;
        let psi_last = 1.0 / self.phi[last];
        nodes[last] = psi_last * self.t[last] / (-self.tail_exponent - 1.0);
        let (x, w) = gauss_legendre(16);
        for k in (0..last).rev() {
            let (a, b) = (self.t[k], self.t[k + 1]);
            let seg: f64 = x
                .iter()
                .zip(&w)
                .map(|(x, w)| {
                    let s = 0.5 * (a + b) + 0.5 * (b - a) * x;
                    w * 0.5 * (b - a) / self.phi_in_table(k, s)
                })
                .sum();
            nodes[k] = nodes[k + 1] + seg;
        }
        self.big_psi_nodes = nodes;
    }

    fn segment(&self, t: f64) -> usize {
        match self.t.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(k) => k.min(self.t.len() - 2),
            Err(k) => k.saturating_sub(1).min(self.t.len() - 2),
        }
    }

    fn phi_in_table(&self, k: usize, t: f64) -> f64 {
        hermite_value(self.t[k], self.t[k + 1], self.phi[k], self.phi[k + 1], self.slopes[k], self.slopes[k + 1], t)
    }

    fn dphi_in_table(&self, k: usize, t: f64) -> f64 {
        hermite_slope(self.t[k], self.t[k + 1], self.phi[k], self.phi[k + 1], self.slopes[k], self.slopes[k + 1], t)
    }

    fn phi(&self, t: f64) -> f64 {
        let (t0, tn) = (self.t[0], *self.t.last().unwrap());
        if t <= 0.0 {
            0.0
        } else if t < t0 {
            self.phi[0] * (t / t0).powf(1.0 - self.p)
        } else if t > tn {
            *self.phi.last().unwrap() * (t / tn).powf(-self.tail_exponent)
        } else {
            self.phi_in_table(self.segment(t), t)
        }
    }

    fn dphi(&self, t: f64) -> f64 {
        let (t0, tn) = (self.t[0], *self.t.last().unwrap());
        if t < t0 {
            self.phi[0] * (1.0 - self.p) * (t / t0).powf(-self.p) / t0
        } else if t > tn {
            let e = -self.tail_exponent;
            *self.phi.last().unwrap() * e * (t / tn).powf(e - 1.0) / tn
        } else {
            self.dphi_in_table(self.segment(t), t)
        }
    }

    fn big_psi(&self, t: f64) -> f64 {
        let (t0, tn) = (self.t[0], *self.t.last().unwrap());
        if t >= tn {
            let psi_n = 1.0 / self.phi.last().unwrap();
            let e = self.tail_exponent;
            return psi_n * tn / (-e - 1.0) * (t / tn).powf(e + 1.0);
        }
        if t < t0 {
            let psi0 = 1.0 / self.phi[0];
            return self.big_psi_nodes[0] + psi0 * t0 * (1.0 - (t / t0).powf(self.p)) / self.p;
        }
        let k = self.segment(t);
        let b = self.t[k + 1];
        let (x, w) = gauss_legendre(16);
        let seg: f64 = x
            .iter()
            .zip(&w)
            .map(|(x, w)| {
                let s = 0.5 * (t + b) + 0.5 * (b - t) * x;
                w * 0.5 * (b - t) / self.phi_in_table(k, s)
            })
            .sum();
        self.big_psi_nodes[k + 1] + seg
    }
}

impl OrliczSpec {
    pub fn p(&self) -> f64 {
        match self {
            OrliczSpec::Power { p } => *p,
            OrliczSpec::Tabulated(t) => t.p,
        }
    }

    pub fn phi(&self, t: f64) -> f64 {
        match self {
            OrliczSpec::Power { p } => t.powf(1.0 - p),
            OrliczSpec::Tabulated(table) => table.phi(t),
        }
    }

    pub fn is_power(&self) -> bool {
        matches!(self, OrliczSpec::Power { .. })
    }

    /// Checks `phi(0) = 0`, strict monotonicity on a 1000-point ladder and the
    /// `liminf phi(t)/t^(1-p) > 0` condition on the ladder inside `(0, delta]`.
    pub fn validate(&self, delta: f64) -> Result<()> {
        if self.phi(0.0) != 0.0 {
            return Err(Error::InvalidOrlicz("phi(0) must be 0".into()));
        }
        let ladder: Vec<f64> = (0..1000).map(|k| 10f64.powf(-8.0 + 11.0 * k as f64 / 999.0)).collect();
        let values: Vec<f64> = ladder.iter().map(|&t| self.phi(t)).collect();
        if values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidOrlicz("phi is not strictly increasing".into()));
        }
        let p = self.p();
        let c0 = ladder
            .iter()
            .zip(&values)
            .filter(|(t, _)| **t <= delta)
            .map(|(t, phi)| phi / t.powf(1.0 - p))
            .fold(f64::INFINITY, f64::min);
        if !(c0 > 0.0) {
            return Err(Error::InvalidOrlicz("phi(t)/t^(1-p) is not bounded below near 0".into()));
        }
        Ok(())
    }
}

impl Kernel for OrliczSpec {
    fn psi(&self, t: f64) -> f64 {
        match self {
            OrliczSpec::Power { p } => t.powf(p - 1.0),
            OrliczSpec::Tabulated(table) => 1.0 / table.phi(t),
        }
    }

    fn dpsi(&self, t: f64) -> f64 {
        match self {
            OrliczSpec::Power { p } => (p - 1.0) * t.powf(p - 2.0),
            OrliczSpec::Tabulated(table) => {
                let phi = table.phi(t);
                -table.dphi(t) / (phi * phi)
            }
        }
    }

    fn big_psi(&self, t: f64) -> f64 {
        match self {
            OrliczSpec::Power { p } => -t.powf(*p) / p,
            OrliczSpec::Tabulated(table) => table.big_psi(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    pub q: f64,
    pub delta: f64,
    pub aleph: f64,
    pub aleph0: f64,
    pub aleph1: f64,
    pub a: f64,
}

/// Finds `delta` and `aleph` with `psi(t) < aleph t^(p-1)` on `(0, delta)` by
/// scanning a log grid (10% margins) and evaluates the derived constants.
pub fn derive_constants(spec: &OrliczSpec, n: usize) -> Result<KernelConstants> {
    let p = spec.p();
    let ratio = |t: f64| spec.psi(t) / t.powf(p - 1.0);
    let scan: Vec<f64> = (0..=1200).map(|k| 10f64.powf(-12.0 + 12.0 * k as f64 / 1200.0)).collect();
    let ratios: Vec<f64> = scan.iter().map(|&t| ratio(t)).collect();
    if ratios.iter().any(|r| !r.is_finite()) {
        return Err(Error::UnboundedNearZero);
    }
    // a ratio still growing by 10x over the last six decades is not bounded
    if ratio(1e-12) > 10.0 * ratio(1e-6) {
        return Err(Error::UnboundedNearZero);
    }
    let sup = ratios.iter().copied().fold(0.0, f64::max);
    let aleph = (1.1 * sup).max(1.1);
    let delta = 0.9;
    spec.validate(delta)?;

    let q = p.min(-(n as f64 - 1.0));
    let a = spec.big_psi(delta) + FRAC_PI_2 - delta.atan();
    let aleph0 = (2.0 * aleph / q.abs()).max(a / delta.powf(q));
    let aleph1 = (1.0 - 2f64.powf(q)) * aleph / q.abs();
    Ok(KernelConstants { q, delta, aleph, aleph0, aleph1, a })
}

/// `A = int_delta^inf psi + 1/(1+t^2)` by adaptive quadrature up to a cutoff
/// and an analytic tail; an independent route to the `a` field.
pub fn a_by_quadrature(spec: &OrliczSpec, delta: f64) -> f64 {
    let cut = 1e4;
    let body = log_split_integral(|t| spec.psi(t) + 1.0 / (1.0 + t * t), delta, cut, 1e-12);
    body + spec.big_psi(cut) + FRAC_PI_2 - cut.atan()
}

/// One cubic Hermite segment on `[t0, t1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cubic {
    t0: f64,
    t1: f64,
    y0: f64,
    y1: f64,
    m0: f64,
    m1: f64,
}

impl Cubic {
    fn coefficients(&self) -> [f64; 4] {
        let l = self.t1 - self.t0;
        let d = (self.y1 - self.y0) / l;
        [self.y0, self.m0, (3.0 * d - 2.0 * self.m0 - self.m1) / l, (self.m0 + self.m1 - 2.0 * d) / (l * l)]
    }

    fn value(&self, t: f64) -> f64 {
        let c = self.coefficients();
        let s = t - self.t0;
        c[0] + s * (c[1] + s * (c[2] + s * c[3]))
    }

    fn slope(&self, t: f64) -> f64 {
        let c = self.coefficients();
        let s = t - self.t0;
        c[1] + s * (2.0 * c[2] + 3.0 * s * c[3])
    }

    /// `int_a^b` for `t0 <= a <= b <= t1`.
    fn integral(&self, a: f64, b: f64) -> f64 {
        let c = self.coefficients();
        let prim = |s: f64| s * (c[0] + s * (c[1] / 2.0 + s * (c[2] / 3.0 + s * c[3] / 4.0)));
        prim(b - self.t0) - prim(a - self.t0)
    }

    /// Largest slope on the segment; strictly decreasing iff negative.
    fn max_slope(&self) -> f64 {
        let c = self.coefficients();
        let l = self.t1 - self.t0;
        let mut best = self.m0.max(self.m1);
        if c[3] != 0.0 {
            let s = -c[2] / (3.0 * c[3]);
            if s > 0.0 && s < l {
                best = best.max(c[1] + s * (2.0 * c[2] + 3.0 * s * c[3]));
            }
        }
        best
    }
}

/// How the `(t0, eps)` join was built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JoinKind {
    /// A single cubic Hermite segment.
    Hermite,
    /// Three Hermite segments with slopes kept inside the monotone region.
    ThreePiece,
}

#[derive(Debug, Clone)]
pub struct SmoothedKernel {
    spec: OrliczSpec,
    constants: KernelConstants,
    eps: f64,
    /// Shift fractions `s_k` in `(0, 1)` and normalized bump weights.
    shifts: Vec<f64>,
    bump: Vec<f64>,
    /// Tangent line `line0 + line1 * t`.
    line0: f64,
    line1: f64,
    t0: f64,
    join: Vec<Cubic>,
    join_kind: JoinKind,
    /// `int_eps^inf theta_eps`.
    theta_tail: f64,
}

/// Bump `exp(-1/(1-x^2))` sampled at the 32 Gauss nodes of `(-1, 1)`, mapped
/// to shift fractions `(1 - x)/2`; weights normalized to sum to one.
fn bump_rule() -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(32);
    let raw: Vec<f64> = x.iter().zip(&w).map(|(x, w)| w * (-1.0 / (1.0 - x * x)).exp()).collect();
    let total: f64 = raw.iter().sum();
    let shifts = x.iter().map(|x| 0.5 * (1.0 - x)).collect();
    (shifts, raw.into_iter().map(|r| r / total).collect())
}

pub fn mollify(spec: &OrliczSpec, constants: &KernelConstants, eps: f64) -> Result<SmoothedKernel> {
    SmoothedKernel::new(spec.clone(), *constants, eps)
}

impl SmoothedKernel {
    pub fn new(spec: OrliczSpec, constants: KernelConstants, eps: f64) -> Result<SmoothedKernel> {
        if !(eps > 0.0 && eps < constants.delta) {
            return Err(Error::EpsilonOutOfRange { eps, delta: constants.delta });
        }
        let (shifts, bump) = bump_rule();
        let mut k = SmoothedKernel {
            spec,
            constants,
            eps,
            shifts,
            bump,
            line0: 0.0,
            line1: 0.0,
            t0: 0.0,
            join: Vec::new(),
            join_kind: JoinKind::Hermite,
            theta_tail: 0.0,
        };
        k.theta_tail = k.average(|t| k.spec.big_psi(t), eps);

        let (aleph, q) = (constants.aleph, constants.q);
        let half = eps / 2.0;
        k.line1 = aleph * (q - 1.0) * half.powf(q - 2.0);
        k.line0 = aleph * half.powf(q - 1.0) - k.line1 * half;
        let theta_end = k.theta(eps);
        let slope_end = k.dtheta(eps);
        let target = 0.5 * (theta_end + aleph * eps.powf(q - 1.0));
        let mut t0 = (target - k.line0) / k.line1;

        let mut join = None;
        for _ in 0..60 {
            let c = Cubic { t0, t1: eps, y0: k.line(t0), y1: theta_end, m0: k.line1, m1: slope_end };
            if c.max_slope() < 0.0 {
                join = Some(vec![c]);
                break;
            }
            t0 = 0.5 * (t0 + half);
        }
        match join {
            Some(j) => {
                k.join = j;
                k.join_kind = JoinKind::Hermite;
            }
            None => {
                t0 = (target - k.line0) / k.line1;
                k.join = three_piece_join(t0, eps, k.line0 + k.line1 * t0, theta_end, k.line1, slope_end);
                k.join_kind = JoinKind::ThreePiece;
            }
        }
        k.t0 = t0;
        Ok(k)
    }

    fn average<F: Fn(f64) -> f64>(&self, f: F, t: f64) -> f64 {
        self.shifts.iter().zip(&self.bump).map(|(s, w)| w * f(t + self.eps * s)).sum()
    }

    /// `theta_eps = psi * eta_eps`, defined for all `t > 0`.
    pub fn theta(&self, t: f64) -> f64 {
        self.average(|s| self.spec.psi(s), t)
    }

    fn dtheta(&self, t: f64) -> f64 {
        self.average(|s| self.spec.dpsi(s), t)
    }

    fn line(&self, t: f64) -> f64 {
        self.line0 + self.line1 * t
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn constants(&self) -> &KernelConstants {
        &self.constants
    }

    pub fn spec(&self) -> &OrliczSpec {
        &self.spec
    }

    pub fn join_kind(&self) -> JoinKind {
        self.join_kind
    }

    /// Splice points `eps/2`, `t0`, interior join knots, `eps`.
    pub fn splice_points(&self) -> Vec<f64> {
        let mut pts = vec![self.eps / 2.0];
        pts.extend(self.join.iter().map(|c| c.t0));
        pts.push(self.eps);
        pts
    }

    /// The spliced, unshifted `theta~_eps`.
    fn theta_tilde(&self, t: f64) -> f64 {
        let c = &self.constants;
        if t <= self.eps / 2.0 {
            c.aleph * t.powf(c.q - 1.0)
        } else if t < self.t0 {
            self.line(t)
        } else if t < self.eps {
            self.piece(t).value(t)
        } else {
            self.theta(t)
        }
    }

    fn dtheta_tilde(&self, t: f64) -> f64 {
        let c = &self.constants;
        if t <= self.eps / 2.0 {
            c.aleph * (c.q - 1.0) * t.powf(c.q - 2.0)
        } else if t < self.t0 {
            self.line1
        } else if t < self.eps {
            self.piece(t).slope(t)
        } else {
            self.dtheta(t)
        }
    }

    fn piece(&self, t: f64) -> &Cubic {
        self.join.iter().find(|c| t < c.t1).unwrap_or_else(|| self.join.last().unwrap())
    }

    /// `int_t^eps theta~_eps` for `0 < t <= eps`.
    fn near_integral(&self, t: f64) -> f64 {
        let c = &self.constants;
        let half = self.eps / 2.0;
        let mut total = 0.0;
        if t < half {
            total += c.aleph * (half.powf(c.q) - t.powf(c.q)) / c.q;
        }
        let (a, b) = (t.max(half), self.t0);
        if a < b {
            total += self.line0 * (b - a) + 0.5 * self.line1 * (b * b - a * a);
        }
        for piece in &self.join {
            let a = t.max(piece.t0);
            if a < piece.t1 {
                total += piece.integral(a, piece.t1);
            }
        }
        total
    }

    /// `Psi_eps(t)`.
    pub fn big_psi_eps(&self, t: f64) -> f64 {
        Kernel::big_psi(self, t)
    }

    /// `Psi_eps(t)` as `int_t^T psi_eps` by adaptive quadrature plus the tail
    /// `Psi(T) + eps (pi/2 - atan T)`, `T = max(10, 10/eps)`. Independent of
    /// the closed form used by [`Kernel::big_psi`]; the tail drops the
    /// `O(eps psi(T))` shift of the convolution.
    pub fn big_psi_by_quadrature(&self, t: f64) -> f64 {
        let cut = (10.0f64).max(10.0 / self.eps);
        if t >= cut {
            return self.spec.big_psi(t) + self.eps * (FRAC_PI_2 - t.atan());
        }
        let mut breaks: Vec<f64> = self.splice_points().into_iter().filter(|&b| b > t && b < cut).collect();
        breaks.insert(0, t);
        breaks.push(cut);
        let mut total = 0.0;
        for w in breaks.windows(2) {
            total += log_split_integral(|s| self.psi(s), w[0], w[1], 1e-13);
        }
        total + self.spec.big_psi(cut) + self.eps * (FRAC_PI_2 - cut.atan())
    }

    /// CSV `t,psi,psi_eps,Psi,Psi_eps` on a log grid.
    pub fn dump_csv(&self, t_min: f64, t_max: f64, points: usize) -> String {
        let mut out = String::from("t,psi,psi_eps,Psi,Psi_eps\n");
        for k in 0..points {
            let t = t_min * (t_max / t_min).powf(k as f64 / (points - 1).max(1) as f64);
            writeln!(
                out,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                t,
                self.spec.psi(t),
                self.psi(t),
                self.spec.big_psi(t),
                self.big_psi(t)
            )
            .unwrap();
        }
        out
    }
}

impl Kernel for SmoothedKernel {
    fn psi(&self, t: f64) -> f64 {
        self.theta_tilde(t) + self.eps / (1.0 + t * t)
    }

    fn dpsi(&self, t: f64) -> f64 {
        let d = 1.0 + t * t;
        self.dtheta_tilde(t) - 2.0 * self.eps * t / (d * d)
    }

    fn big_psi(&self, t: f64) -> f64 {
        let arctan_tail = self.eps * (FRAC_PI_2 - t.atan());
        if t >= self.eps {
            self.average(|s| self.spec.big_psi(s), t) + arctan_tail
        } else {
            self.theta_tail + self.near_integral(t) + arctan_tail
        }
    }
}

/// Monotone C^1 join from `(a, ya, ma)` to `(b, yb, mb)`, `ya > yb`, `ma, mb < 0`.
/// The outer segments are short enough that their slope ratios stay at most 1,
/// the middle one is the secant line, so every segment is decreasing.
fn three_piece_join(a: f64, b: f64, ya: f64, yb: f64, ma: f64, mb: f64) -> Vec<Cubic> {
    let len = b - a;
    let drop = ya - yb;
    let la = (drop / (3.0 * ma.abs())).min(len / 3.0);
    let lb = (drop / (3.0 * mb.abs())).min(len / 3.0);
    let (ta, tb) = (a + la, b - lb);
    let (y1, y2) = (ya - drop / 3.0, yb + drop / 3.0);
    let mid = (y2 - y1) / (tb - ta);
    vec![
        Cubic { t0: a, t1: ta, y0: ya, y1, m0: ma, m1: mid },
        Cubic { t0: ta, t1: tb, y0: y1, y1: y2, m0: mid, m1: mid },
        Cubic { t0: tb, t1: b, y0: y2, y1: yb, m0: mid, m1: mb },
    ]
}

fn hermite_value(t0: f64, t1: f64, y0: f64, y1: f64, m0: f64, m1: f64, t: f64) -> f64 {
    Cubic { t0, t1, y0, y1, m0, m1 }.value(t)
}

fn hermite_slope(t0: f64, t1: f64, y0: f64, y1: f64, m0: f64, m1: f64, t: f64) -> f64 {
    Cubic { t0, t1, y0, y1, m0, m1 }.slope(t)
}

/// Fritsch-Carlson slopes for increasing data.
fn monotone_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let m = x.len();
    let d: Vec<f64> = (0..m - 1).map(|k| (y[k + 1] - y[k]) / (x[k + 1] - x[k])).collect();
    let mut s = vec![0.0; m];
    s[0] = d[0];
    s[m - 1] = d[m - 2];
    for k in 1..m - 1 {
        s[k] = if d[k - 1] * d[k] <= 0.0 {
            0.0
        } else {
            let (w1, w2) = (2.0 * (x[k + 1] - x[k]) + (x[k] - x[k - 1]), (x[k + 1] - x[k]) + 2.0 * (x[k] - x[k - 1]));
            (w1 + w2) / (w1 / d[k - 1] + w2 / d[k])
        };
    }
    s
}

/// Memoized kernel on a log grid with cubic Hermite interpolation from exact
/// values and slopes; outside the grid the wrapped kernel is called directly.
#[derive(Debug, Clone)]
pub struct KernelTable<K> {
    inner: K,
    t: Vec<f64>,
    log_t0: f64,
    inv_step: f64,
    psi: Vec<f64>,
    dpsi: Vec<f64>,
    big_psi: Vec<f64>,
}

impl<K: Kernel> KernelTable<K> {
    pub const DEFAULT_POINTS: usize = 4096;

    pub fn new(inner: K, t_min: f64, t_max: f64, points: usize) -> Self {
        let step = (t_max / t_min).ln() / (points - 1) as f64;
        let t: Vec<f64> = (0..points).map(|k| t_min * (step * k as f64).exp()).collect();
        let psi = t.iter().map(|&s| inner.psi(s)).collect();
        let dpsi = t.iter().map(|&s| inner.dpsi(s)).collect();
        let big_psi = t.iter().map(|&s| inner.big_psi(s)).collect();
        KernelTable { inner, log_t0: t_min.ln(), inv_step: 1.0 / step, t, psi, dpsi, big_psi }
    }

    pub fn inner(&self) -> &K {
        &self.inner
    }

    fn locate(&self, t: f64) -> Option<usize> {
        if !(t >= self.t[0] && t < *self.t.last().unwrap()) {
            return None;
        }
        let k = ((t.ln() - self.log_t0) * self.inv_step) as usize;
        Some(k.min(self.t.len() - 2))
    }
}

impl<K: Kernel> Kernel for KernelTable<K> {
    fn psi(&self, t: f64) -> f64 {
        match self.locate(t) {
            Some(k) => hermite_value(self.t[k], self.t[k + 1], self.psi[k], self.psi[k + 1], self.dpsi[k], self.dpsi[k + 1], t),
            None => self.inner.psi(t),
        }
    }

    fn dpsi(&self, t: f64) -> f64 {
        match self.locate(t) {
            Some(k) => hermite_slope(self.t[k], self.t[k + 1], self.psi[k], self.psi[k + 1], self.dpsi[k], self.dpsi[k + 1], t),
            None => self.inner.dpsi(t),
        }
    }

    fn big_psi(&self, t: f64) -> f64 {
        match self.locate(t) {
            Some(k) => hermite_value(self.t[k], self.t[k + 1], self.big_psi[k], self.big_psi[k + 1], -self.psi[k], -self.psi[k + 1], t),
            None => self.inner.big_psi(t),
        }
    }
}

impl<K: Kernel + ?Sized> Kernel for &K {
    fn psi(&self, t: f64) -> f64 {
        (**self).psi(t)
    }
    fn dpsi(&self, t: f64) -> f64 {
        (**self).dpsi(t)
    }
    fn big_psi(&self, t: f64) -> f64 {
        (**self).big_psi(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn power(p: f64) -> (OrliczSpec, KernelConstants) {
        let spec = make_power_spec(2, p).unwrap();
        let c = derive_constants(&spec, 2).unwrap();
        (spec, c)
    }

    #[test]
    fn power_spec_values() {
        let spec = make_power_spec(2, -1.0).unwrap();
        assert_eq!(spec.phi(2.0), 4.0);
        assert_eq!(spec.psi(2.0), 0.25);
        assert_eq!(spec.big_psi(2.0), 0.5);
        assert!(spec.big_psi(1e6) < 1e-5);
        for t in [0.5, 1.0, 5.0] {
            let h = 1e-5;
            let fd = -(spec.big_psi(t + h) - spec.big_psi(t - h)) / (2.0 * h);
            assert!((fd - spec.psi(t)).abs() < 1e-8 * spec.psi(t).max(1.0));
        }
        assert!(matches!(make_power_spec(2, -3.0), Err(Error::ExponentOutOfRange { .. })));
        assert!(make_power_spec(2, 0.0).is_err());
        assert!(make_power_spec(3, -2.5).is_ok());
    }

    #[test]
    fn constants_for_inverse_square() {
        let (_, c) = power(-1.0);
        assert!((c.aleph - 1.1).abs() < 1e-12);
        assert_eq!(c.delta, 0.9);
        assert_eq!(c.q, -1.0);
        assert!((c.aleph1 - 0.55).abs() < 1e-12);
        let a = 1.0 / 0.9 + PI / 2.0 - 0.9f64.atan();
        assert!((c.a - a).abs() < 1e-12);
        assert!((c.a - 1.94909).abs() < 1e-5);
        assert!((c.aleph0 - (2.2f64).max(a * 0.9)).abs() < 1e-12);
    }

    #[test]
    fn q_uses_dimension() {
        let spec = make_power_spec(3, -0.5).unwrap();
        let c = derive_constants(&spec, 3).unwrap();
        assert_eq!(c.q, -2.0);
    }

    #[test]
    fn a_by_quadrature_matches_closed_form() {
        let (spec, c) = power(-1.0);
        assert!((a_by_quadrature(&spec, c.delta) - c.a).abs() < 1e-8);
    }

    #[test]
    fn near_zero_branch_is_exact_power() {
        let (spec, c) = power(-1.0);
        for eps in [1e-1, 1e-2, 1e-3] {
            let k = mollify(&spec, &c, eps).unwrap();
            let t = eps / 4.0;
            let expect = c.aleph * t.powf(c.q - 1.0) + eps / (1.0 + t * t);
            assert_eq!(k.psi(t), expect);
        }
    }

    #[test]
    fn theta_is_bracketed() {
        let (spec, c) = power(-1.0);
        let k = mollify(&spec, &c, 1e-2).unwrap();
        for t in [0.5, 1.0, 2.0] {
            let th = k.theta(t);
            assert!(th <= spec.psi(t) && th >= spec.psi(t + 1e-2));
        }
    }

    #[test]
    fn psi_eps_converges_at_one() {
        let (spec, c) = power(-1.0);
        for eps in [1e-2, 1e-3] {
            let k = mollify(&spec, &c, eps).unwrap();
            assert!((k.psi(1.0) - 1.0).abs() <= 2.0 * eps);
        }
    }

    #[test]
    fn eps_range_is_checked() {
        let (spec, c) = power(-1.0);
        assert!(matches!(mollify(&spec, &c, 0.95), Err(Error::EpsilonOutOfRange { .. })));
        assert!(mollify(&spec, &c, 0.0).is_err());
    }

    #[test]
    fn strictly_decreasing_everywhere() {
        for (n, p) in [(2, -0.5), (2, -1.0), (2, -1.5), (3, -1.0), (3, -2.5)] {
            let spec = make_power_spec(n, p).unwrap();
            let c = derive_constants(&spec, n).unwrap();
            for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
                let k = mollify(&spec, &c, eps).unwrap();
                for j in 0..2000 {
                    let t = eps * 1e-3 * (1e7f64).powf(j as f64 / 1999.0);
                    assert!(k.dpsi(t) < 0.0, "n={n} p={p} eps={eps} t={t}");
                    if t < c.delta {
                        assert!(k.psi(t) < 2.0 * c.aleph * t.powf(c.q - 1.0));
                    }
                    if t >= eps {
                        assert!(k.psi(t) <= spec.psi(t) + 1.0 / (1.0 + t * t));
                    }
                }
            }
        }
    }

    #[test]
    fn big_psi_routes_agree() {
        let (spec, c) = power(-1.0);
        let k = mollify(&spec, &c, 1e-2).unwrap();
        for t in [1e-4, 3e-3, 7e-3, 1e-2, 0.1, 1.0, 5.0] {
            let a = k.big_psi(t);
            let b = k.big_psi_by_quadrature(t);
            assert!((a - b).abs() < 1e-6 * a.max(1.0), "t={t}: {a} vs {b}");
        }
    }

    #[test]
    fn table_matches_exact() {
        let (spec, c) = power(-1.0);
        let k = mollify(&spec, &c, 1e-3).unwrap();
        let tab = KernelTable::new(k.clone(), 1e-6, 1e3, KernelTable::<SmoothedKernel>::DEFAULT_POINTS);
        for t in [2e-6, 1e-4, 4.9e-4, 7e-4, 1e-3, 0.3, 1.0, 17.0, 2e3] {
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
            assert!(rel(tab.psi(t), k.psi(t)) < 1e-5, "psi at {t}");
            assert!(rel(tab.big_psi(t), k.big_psi(t)) < 1e-6, "Psi at {t}");
        }
    }

    #[test]
    fn tabulated_power_reproduces_power() {
        let ts: Vec<f64> = (0..400).map(|k| 1e-3 * 1e6f64.powf(k as f64 / 399.0)).collect();
        let phis: Vec<f64> = ts.iter().map(|t| t * t).collect();
        let table = PhiTable::new(2, -1.0, ts, phis, -2.0).unwrap();
        let spec = OrliczSpec::Tabulated(table);
        let exact = make_power_spec(2, -1.0).unwrap();
        for t in [1e-4, 0.01, 0.5, 1.0, 3.0, 100.0, 1e4] {
            assert!((spec.psi(t) - exact.psi(t)).abs() < 1e-6 * exact.psi(t), "psi {t}");
            assert!((spec.big_psi(t) - exact.big_psi(t)).abs() < 1e-6 * exact.big_psi(t), "Psi {t}");
        }
        let c = derive_constants(&spec, 2).unwrap();
        assert!((c.aleph - 1.1).abs() < 1e-4);
        assert!(PhiTable::new(2, -1.0, vec![1.0, 2.0], vec![2.0, 1.0], -2.0).is_err());
        assert!(PhiTable::new(2, -1.0, vec![1.0, 2.0], vec![1.0, 2.0], -0.5).is_err());
    }

    #[test]
    fn unbounded_ratio_is_rejected() {
        // phi ~ t^3 near zero while p = -1 asks for t^2: psi/t^(p-1) ~ 1/t
        let ts: Vec<f64> = (0..50).map(|k| 1e-14 * 1e15f64.powf(k as f64 / 49.0)).collect();
        let phis: Vec<f64> = ts.iter().map(|t| t.powi(3)).collect();
        let table = PhiTable::new(2, -1.0, ts, phis, -3.0).unwrap();
        assert_eq!(derive_constants(&OrliczSpec::Tabulated(table), 2).unwrap_err(), Error::UnboundedNearZero);
    }
}
