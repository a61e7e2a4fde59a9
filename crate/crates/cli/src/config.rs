//! JSON run configuration and its translation into a [`ProblemSpec`].

use std::fmt;
use std::path::PathBuf;

use evalexpr::{ContextWithMutableFunctions, ContextWithMutableVariables, DefaultNumericTypes, EvalexprError, Function, HashMapContext, Value};
use orlicz::continuation::{default_eps_schedule, validate_eps_schedule, validate_m_schedule, ProblemSpec};
use orlicz::extremal::{AscentDirection, ExtremizeConfig, Sense};
use orlicz::kernel::{derive_constants, make_power_spec, OrliczSpec, PhiTable};
use orlicz::sphere_grid::{Grid, Point};
use rand::{Rng, SeedableRng};
use serde::Deserialize;

/// A rejected configuration, naming the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: &str, message: impl fmt::Display) -> Self {
        ConfigError { field: field.to_string(), message: message.to_string() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dim: usize,
    pub resolution: usize,
    pub p: f64,
    #[serde(default)]
    pub orlicz: OrliczConfig,
    pub density: DensityConfig,
    #[serde(default)]
    pub schedules: Schedules,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub outputs: Outputs,
    /// Seed for the `random` density.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OrliczConfig {
    #[default]
    Power,
    Table { t: Vec<f64>, phi: Vec<f64>, tail_exponent: f64 },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
    /// `base + a cos(k theta + phase)`, planar only.
    Harmonic {
        #[serde(default = "one")]
        base: f64,
        a: f64,
        k: u32,
        #[serde(default)]
        phase: f64,
    },
    /// `max(<u, axis>, 0)^exponent`, axis defaulting to `e_1`.
    ClampedPower {
        exponent: f64,
        #[serde(default)]
        axis: Option<[f64; 3]>,
    },
    Table { values: Vec<f64> },
    /// Arithmetic in `x`, `y`, `z` and (planar) `theta`.
    Expression { expr: String },
    /// Independent uniform values in `[low, high]`.
    Random {
        #[serde(default = "half")]
        low: f64,
        #[serde(default = "three_halves")]
        high: f64,
    },
}

fn half() -> f64 {
    0.5
}

fn three_halves() -> f64 {
    1.5
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedules {
    /// Defaults to the standard annealing schedule clipped below `delta`.
    pub eps: Option<Vec<f64>>,
    #[serde(default)]
    pub m: Vec<u32>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "Tolerances::default_inner")]
    pub inner: f64,
    #[serde(default = "Tolerances::default_outer")]
    pub outer: f64,
}

impl Tolerances {
    fn default_inner() -> f64 {
        ExtremizeConfig::default().inner_tol
    }
    fn default_outer() -> f64 {
        ExtremizeConfig::default().tol
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { inner: Self::default_inner(), outer: Self::default_outer() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "SolverConfig::default_direction")]
    pub direction: AscentDirection,
    #[serde(default = "SolverConfig::default_sense")]
    pub sense: Sense,
    #[serde(default = "SolverConfig::default_max_iterations")]
    pub max_iterations: usize,
}

impl SolverConfig {
    fn default_direction() -> AscentDirection {
        AscentDirection::Newton
    }
    fn default_sense() -> Sense {
        Sense::Maximize
    }
    fn default_max_iterations() -> usize {
        ExtremizeConfig::default().max_iterations
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            direction: Self::default_direction(),
            sense: Self::default_sense(),
            max_iterations: Self::default_max_iterations(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// `body.csv` (planar) or `body.off` (spatial).
    #[serde(default = "yes")]
    pub mesh: bool,
    #[serde(default)]
    pub kernel_dump: bool,
    #[serde(default = "yes")]
    pub traces: bool,
}

fn yes() -> bool {
    true
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs { dir: None, mesh: true, kernel_dump: false, traces: true }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "<root>".to_string() } else { path };
            ConfigError::new(&field, e.inner())
        })
    }

    pub fn orlicz_spec(&self) -> Result<OrliczSpec, ConfigError> {
        if !matches!(self.dim, 2 | 3) {
            return Err(ConfigError::new("dim", format!("{} is not 2 or 3", self.dim)));
        }
        let n = self.dim as f64;
        if !(self.p > -n && self.p < 0.0) {
            return Err(ConfigError::new("p", format!("p = {} out of (-n, 0) with n = {}", self.p, self.dim)));
        }
        let spec = match &self.orlicz {
            OrliczConfig::Power => make_power_spec(self.dim, self.p).map_err(|e| ConfigError::new("p", e))?,
            OrliczConfig::Table { t, phi, tail_exponent } => OrliczSpec::Tabulated(
                PhiTable::new(self.dim, self.p, t.clone(), phi.clone(), *tail_exponent).map_err(|e| ConfigError::new("orlicz", e))?,
            ),
        };
        derive_constants(&spec, self.dim).map_err(|e| ConfigError::new("orlicz", e))?;
        Ok(spec)
    }

    pub fn grid(&self) -> Result<Grid, ConfigError> {
        if !matches!(self.dim, 2 | 3) {
            return Err(ConfigError::new("dim", format!("{} is not 2 or 3", self.dim)));
        }
        Grid::build(self.dim, self.resolution).map_err(|e| ConfigError::new("resolution", e))
    }

    /// Density values at the grid normals.
    pub fn sample_density(&self, grid: &Grid) -> Result<Vec<f64>, ConfigError> {
        let values = match &self.density {
            DensityConfig::Constant { value } => vec![*value; grid.len()],
            DensityConfig::Harmonic { base, a, k, phase } => {
                if grid.dim() != 2 {
                    return Err(ConfigError::new("density.kind", "harmonic density needs dim = 2"));
                }
                grid.normals().iter().map(|u| base + a * (*k as f64 * u.y.atan2(u.x) + phase).cos()).collect()
            }
            DensityConfig::ClampedPower { exponent, axis } => {
                let e = axis.map(Point::from).unwrap_or_else(Point::x);
                if !(e.norm() > 0.0) {
                    return Err(ConfigError::new("density.axis", "axis must be non-zero"));
                }
                let e = e.normalize();
                grid.normals().iter().map(|u| u.dot(&e).max(0.0).powf(*exponent)).collect()
            }
            DensityConfig::Table { values } => {
                if values.len() != grid.len() {
                    return Err(ConfigError::new(
                        "density.values",
                        format!("expected {} values (one per grid normal), got {}", grid.len(), values.len()),
                    ));
                }
                values.clone()
            }
            DensityConfig::Expression { expr } => {
                sample_expression(expr, grid).map_err(|e| ConfigError::new("density.expr", e))?
            }
            DensityConfig::Random { low, high } => {
                if !(*low > 0.0 && high > low) {
                    return Err(ConfigError::new("density", "random density needs 0 < low < high"));
                }
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
                (0..grid.len()).map(|_| rng.gen_range(*low..*high)).collect()
            }
        };
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ConfigError::new("density", "values must be finite and non-negative"));
        }
        Ok(values)
    }

    /// Fully validated problem; nothing is computed beyond sampling.
    pub fn problem(&self) -> Result<ProblemSpec, ConfigError> {
        let orlicz = self.orlicz_spec()?;
        let grid = self.grid()?;
        let density = self.sample_density(&grid)?;
        let constants = derive_constants(&orlicz, self.dim).map_err(|e| ConfigError::new("orlicz", e))?;
        let eps = self.schedules.eps.clone().unwrap_or_else(|| default_eps_schedule(constants.delta));
        validate_eps_schedule(&eps, constants.delta).map_err(|e| ConfigError::new("schedules.eps", e))?;
        validate_m_schedule(&self.schedules.m).map_err(|e| ConfigError::new("schedules.m", e))?;
        if !(self.tolerances.inner > 0.0) {
            return Err(ConfigError::new("tolerances.inner", "must be positive"));
        }
        if !(self.tolerances.outer > 0.0) {
            return Err(ConfigError::new("tolerances.outer", "must be positive"));
        }
        let problem = ProblemSpec {
            grid,
            density,
            orlicz,
            constants,
            eps_schedule: eps,
            m_schedule: self.schedules.m.clone(),
            extremize: ExtremizeConfig {
                tol: self.tolerances.outer,
                inner_tol: self.tolerances.inner,
                max_iterations: self.solver.max_iterations,
                direction: self.solver.direction,
                sense: self.solver.sense,
                ..ExtremizeConfig::default()
            },
        };
        problem.validate().map_err(|e| ConfigError::new("density", e))?;
        Ok(problem)
    }

    /// Normals counted in the certificate residual: those where the density
    /// exceeds the final truncation floor, or all of them.
    pub fn residual_mask(&self, problem: &ProblemSpec) -> Option<Vec<bool>> {
        problem.m_schedule.last().map(|m| problem.density.iter().map(|f| *f > 1.0 / *m as f64).collect())
    }
}

fn unary(f: fn(f64) -> f64) -> Function<DefaultNumericTypes> {
    Function::new(move |arg: &Value<DefaultNumericTypes>| Ok(Value::Float(f(arg.as_number()?))))
}

fn binary(f: fn(f64, f64) -> f64) -> Function<DefaultNumericTypes> {
    Function::new(move |arg: &Value<DefaultNumericTypes>| {
        let args = arg.as_fixed_len_tuple(2)?;
        Ok(Value::Float(f(args[0].as_number()?, args[1].as_number()?)))
    })
}

fn sample_expression(expr: &str, grid: &Grid) -> Result<Vec<f64>, EvalexprError<DefaultNumericTypes>> {
    let tree = evalexpr::build_operator_tree::<DefaultNumericTypes>(expr)?;
    let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
    let fns: [(&str, fn(f64) -> f64); 11] = [
        ("sin", f64::sin),
        ("cos", f64::cos),
        ("tan", f64::tan),
        ("atan", f64::atan),
        ("exp", f64::exp),
        ("ln", f64::ln),
        ("log", f64::ln),
        ("sqrt", f64::sqrt),
        ("abs", f64::abs),
        ("pos", |x| x.max(0.0)),
        ("cbrt", f64::cbrt),
    ];
    for (name, f) in fns {
        ctx.set_function(name.into(), unary(f))?;
    }
    ctx.set_function("pow".into(), binary(f64::powf))?;
    ctx.set_function("atan2".into(), binary(f64::atan2))?;
    ctx.set_value("pi".into(), Value::Float(std::f64::consts::PI))?;
    let mut out = Vec::with_capacity(grid.len());
    for u in grid.normals() {
        ctx.set_value("x".into(), Value::Float(u.x))?;
        ctx.set_value("y".into(), Value::Float(u.y))?;
        ctx.set_value("z".into(), Value::Float(u.z))?;
        ctx.set_value("theta".into(), Value::Float(u.y.atan2(u.x)))?;
        out.push(tree.eval_number_with_context(&ctx)?);
    }
    Ok(out)
}
