//! Scenario files: TOML configuration for every solver and the sweep driver.
//!
//! Unknown keys are rejected, missing required keys are listed together,
//! and type errors carry the dotted key path. Every defaulted value is
//! written back by [`Scenario::echo`], and the echo reloads to the same
//! scenario.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cell::CellProblem;
use crate::coefficients::{
    FaceTable, InitialField, LayeredScalar, LayeredTensor, LayeredVelocity, LeakProfile, SourceSchedule, Tensor,
    TransportCoefficients, VelocityKind,
};
use crate::error::{Error, Result};
use crate::geometry::{
    build_perforated_grid, decompose_regions, AlveolusArray, BoxDomain, GridResolution, PerforatedGrid,
    StripResolution, VerticalAnchors,
};
use crate::limit::LimitOptions;
use crate::linalg::SolverOptions;
use crate::micro::OuterBoundary;
use crate::transient::TransientOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub geometry: GeometryConfig,
    pub coefficients: CoefficientsConfig,
    pub source: LeakProfile,
    #[serde(default = "default_initial")]
    pub initial: InitialField,
    #[serde(default = "default_boundary")]
    pub boundary: OuterBoundary,
    pub run: RunConfig,
    #[serde(default)]
    pub limit: LimitOptions,
    #[serde(default)]
    pub cells: CellConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// Space dimension (2 or 3).
    pub n: usize,
    /// Box side `L`.
    pub side: f64,
    /// Obstacle half-widths `M = Π ]−m_i, m_i[`, one per lateral axis.
    pub m: Vec<f64>,
    /// Hole half-height exponent (`ε^β`).
    pub beta: f64,
    /// Period used by single runs.
    pub eps: f64,
    /// Band constant: `G_ε` has half-width `d ε log(1/ε)`.
    #[serde(default = "default_d")]
    pub d: f64,
    pub resolution: GridResolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsConfig {
    /// Inner-layer diffusion tensor `A¹`, row-major `n×n`.
    pub a_inner: Vec<f64>,
    /// Outer diffusion tensor `A²`, row-major `n×n`.
    pub a_outer: Vec<f64>,
    pub omega_inner: f64,
    pub omega_outer: f64,
    /// Layer half-height `h` in units of ε.
    pub h: f64,
    /// Decay constant `λ`; mutually exclusive with `half_life`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_life: Option<f64>,
    #[serde(default = "default_velocity")]
    pub velocity: VelocityConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VelocityConfig {
    Zero,
    Uniform {
        inner: Vec<f64>,
        outer: Vec<f64>,
    },
    Cellular {
        amplitude: f64,
        period: f64,
    },
    /// Face-flux table file (see `FaceTable::parse`), relative to the
    /// working directory.
    FaceTable {
        path: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Values of ε visited by `study`, coarsest first.
    #[serde(default)]
    pub sweep: Vec<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Relative residual of every linear solve.
    #[serde(default = "default_linear")]
    pub linear: f64,
    /// Per-step relative mass-balance bound.
    #[serde(default = "default_mass_balance")]
    pub mass_balance: f64,
    /// Smallest admissible eigenvalue of the diffusion tensors.
    #[serde(default = "default_pd")]
    pub pd: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Lagged sweeps for the cross-diffusion terms of anisotropic tensors.
    #[serde(default = "default_cross")]
    pub cross_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    /// Resolution of standalone strips (the `cell` subcommand).
    #[serde(default = "default_strip_resolution")]
    pub resolution: StripResolution,
    /// Strip half-height `Y` of standalone strips.
    #[serde(default = "default_truncation")]
    pub truncation: f64,
    /// Largest `Y` reached by truncation doubling.
    #[serde(default = "default_truncation_max")]
    pub truncation_max: f64,
    /// Problems solved by the `cell` subcommand, e.g. `["w", "chi-1"]`.
    #[serde(default = "default_problems")]
    pub problems: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Write a field dump every this many steps (0: final state only).
    #[serde(default)]
    pub snapshot_every: usize,
    /// Write field dumps at all.
    #[serde(default)]
    pub fields: bool,
}

fn default_d() -> f64 {
    2.0
}
fn default_initial() -> InitialField {
    InitialField::Zero
}
fn default_boundary() -> OuterBoundary {
    OuterBoundary::LayeredBox
}
fn default_velocity() -> VelocityConfig {
    VelocityConfig::Zero
}
/// Three decades below the mass-balance bound: a residual of `tol·‖b‖`
/// leaves up to about `tol·‖b‖·√N` unaccounted per step, and `‖b‖` carries
/// the full storage term.
fn default_linear() -> f64 {
    1e-13
}
fn default_mass_balance() -> f64 {
    1e-10
}
fn default_pd() -> f64 {
    1e-12
}
fn default_max_iterations() -> usize {
    5000
}
fn default_cross() -> usize {
    3
}
fn default_strip_resolution() -> StripResolution {
    StripResolution {
        cells_per_unit: 32,
        obstacle_cells: 4,
        growth: 1.2,
        max_spacing: 1.0 / 16.0,
    }
}
fn default_truncation() -> f64 {
    6.0
}
fn default_truncation_max() -> f64 {
    24.0
}
fn default_problems() -> Vec<String> {
    vec!["w".into()]
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            linear: default_linear(),
            mass_balance: default_mass_balance(),
            pd: default_pd(),
            max_iterations: default_max_iterations(),
            cross_iterations: default_cross(),
        }
    }
}

impl Default for CellConfig {
    fn default() -> Self {
        Self {
            resolution: default_strip_resolution(),
            truncation: default_truncation(),
            truncation_max: default_truncation_max(),
            problems: default_problems(),
        }
    }
}

/// Keys without defaults, as dotted paths.
const REQUIRED: &[&str] = &[
    "geometry.n",
    "geometry.side",
    "geometry.m",
    "geometry.beta",
    "geometry.eps",
    "geometry.resolution.cells_per_eps",
    "coefficients.a_inner",
    "coefficients.a_outer",
    "coefficients.omega_inner",
    "coefficients.omega_outer",
    "coefficients.h",
    "source.kind",
    "run.dt",
    "run.horizon",
];

fn lookup<'a>(table: &'a toml::Table, path: &str) -> Option<&'a toml::Value> {
    let mut parts = path.split('.');
    let mut v = table.get(parts.next()?)?;
    for p in parts {
        v = v.as_table()?.get(p)?;
    }
    Some(v)
}

impl Scenario {
    /// Parses and validates a scenario.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<document>", e.message().to_string()))?;
        let missing: Vec<&str> = REQUIRED
            .iter()
            .copied()
            .filter(|k| lookup(&table, k).is_none())
            .collect();
        if !missing.is_empty() {
            return Err(Error::config(
                missing.join(", "),
                format!("missing required keys: {}", missing.join(", ")),
            ));
        }
        let scenario: Scenario = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), format!("cannot read scenario: {e}")))?;
        Self::parse(&text)
    }

    /// The scenario with every default filled in, as TOML.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("scenarios always serialize")
    }

    /// Same scenario at another ε.
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        let mut s = self.clone();
        s.geometry.eps = eps;
        s.validate()?;
        Ok(s)
    }

    /// The sweep list, or the single ε when no sweep is given.
    pub fn sweep(&self) -> Vec<f64> {
        if self.run.sweep.is_empty() {
            vec![self.geometry.eps]
        } else {
            self.run.sweep.clone()
        }
    }

    /// Checks every module invariant for the single ε and every sweep value.
    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        let geo = |field: &str, e: Error| Error::config(format!("geometry.{field}"), e.to_string());
        let domain = BoxDomain::new(g.n, g.side).map_err(|e| geo("n", e))?;
        if g.m.len() + 1 != g.n {
            return Err(Error::config(
                "geometry.m",
                format!("expected {} half-widths for n = {}, got {}", g.n - 1, g.n, g.m.len()),
            ));
        }
        self.coefficients()?;
        self.schedule()?;
        let t = &self.run;
        if !(t.dt > 0.0 && t.dt.is_finite()) {
            return Err(Error::config("run.dt", "time step must be positive"));
        }
        if !(t.horizon > 0.0 && t.horizon.is_finite()) {
            return Err(Error::config("run.horizon", "horizon must be positive"));
        }
        let tol = &t.tolerances;
        for (name, v) in [
            ("linear", tol.linear),
            ("mass_balance", tol.mass_balance),
            ("pd", tol.pd),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(
                    format!("run.tolerances.{name}"),
                    "tolerance must lie in ]0,1[",
                ));
            }
        }
        if tol.max_iterations == 0 {
            return Err(Error::config("run.tolerances.max_iterations", "must be positive"));
        }
        if t.sweep.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config("run.sweep", "sweep values must decrease strictly"));
        }
        let mut all = vec![("geometry.eps".to_string(), g.eps)];
        all.extend(t.sweep.iter().enumerate().map(|(i, &e)| (format!("run.sweep[{i}]"), e)));
        for (path, eps) in all {
            let err = |e: Error| Error::config(path.clone(), e.to_string());
            let array = AlveolusArray::new(g.m.clone(), eps, g.beta).map_err(err)?;
            array.periods(domain.side).map_err(err)?;
            decompose_regions(&domain, eps, g.d).map_err(err)?;
            if array.half_height() >= domain.half() {
                return Err(err(Error::Geometry("hole reaches the box boundary".into())));
            }
        }
        let c = &self.cells;
        if !(c.truncation >= 2.0 && c.truncation_max >= c.truncation) {
            return Err(Error::config(
                "cells.truncation",
                "strip truncation must be at least 2 and not exceed truncation_max",
            ));
        }
        for (i, p) in c.problems.iter().enumerate() {
            CellProblem::parse(p, g.n).map_err(|e| Error::config(format!("cells.problems[{i}]"), e.to_string()))?;
        }
        Ok(())
    }

    pub fn domain(&self) -> BoxDomain {
        BoxDomain::new(self.geometry.n, self.geometry.side).expect("validated")
    }

    pub fn array(&self) -> Result<AlveolusArray> {
        AlveolusArray::new(self.geometry.m.clone(), self.geometry.eps, self.geometry.beta)
    }

    pub fn band_half_width(&self) -> f64 {
        let eps = self.geometry.eps;
        self.geometry.d * eps * (1.0 / eps).ln()
    }

    /// Micro grid resolving the hole, layer and band heights.
    pub fn perforated_grid(&self) -> Result<PerforatedGrid> {
        let eps = self.geometry.eps;
        build_perforated_grid(
            &self.domain(),
            &self.array()?,
            &self.geometry.resolution,
            &VerticalAnchors {
                layer: Some(self.coefficients.h * eps),
                band: Some(self.band_half_width()),
            },
        )
    }

    pub fn coefficients(&self) -> Result<TransportCoefficients> {
        let c = &self.coefficients;
        let n = self.geometry.n;
        let coef = |field: &str, e: Error| Error::config(format!("coefficients.{field}"), e.to_string());
        let inner = Tensor::from_row_major(n, &c.a_inner).map_err(|e| coef("a_inner", e))?;
        let outer = Tensor::from_row_major(n, &c.a_outer).map_err(|e| coef("a_outer", e))?;
        inner
            .check_spd(self.run.tolerances.pd)
            .map_err(|e| coef("a_inner", e))?;
        let a = LayeredTensor::new(inner, outer, c.h, self.run.tolerances.pd).map_err(|e| coef("a_outer", e))?;
        let omega = LayeredScalar::new(c.omega_inner, c.omega_outer, c.h).map_err(|e| coef("omega_inner", e))?;
        let lambda = match (c.lambda, c.half_life) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "coefficients.lambda",
                    "give either lambda or half_life, not both",
                ))
            }
            (Some(l), None) if !(l >= 0.0 && l.is_finite()) => {
                return Err(Error::config(
                    "coefficients.lambda",
                    "decay constant must be non-negative",
                ))
            }
            (Some(l), None) => l,
            (None, Some(t)) => crate::coefficients::decay_constant(t).map_err(|e| coef("half_life", e))?,
            (None, None) => 0.0,
        };
        let kind = match &c.velocity {
            VelocityConfig::Zero => VelocityKind::Zero,
            VelocityConfig::Uniform { inner, outer } => VelocityKind::Uniform {
                inner: inner.clone(),
                outer: outer.clone(),
            },
            VelocityConfig::Cellular { amplitude, period } => VelocityKind::Cellular {
                amplitude: *amplitude,
                period: *period,
            },
            VelocityConfig::FaceTable { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::config("coefficients.velocity.path", e.to_string()))?;
                VelocityKind::FaceTable(FaceTable::parse(&text).map_err(|e| coef("velocity.path", e))?)
            }
        };
        let velocity = LayeredVelocity::new(kind, c.h, n).map_err(|e| coef("velocity", e))?;
        Ok(TransportCoefficients {
            a,
            omega,
            velocity,
            lambda,
        })
    }

    pub fn schedule(&self) -> Result<SourceSchedule> {
        SourceSchedule::new(self.source.clone(), self.run.horizon).map_err(|e| Error::config("source", e.to_string()))
    }

    pub fn transient_options(&self) -> TransientOptions {
        let tol = &self.run.tolerances;
        TransientOptions {
            dt: self.run.dt,
            horizon: self.run.horizon,
            linear: SolverOptions {
                rel_tol: tol.linear,
                max_iter: tol.max_iterations,
            },
            cross_iterations: tol.cross_iterations,
        }
    }

    /// Cell-problem strip half-height used by the expansion at this ε:
    /// `d log(1/ε) + 1`, capped by the box.
    pub fn expansion_truncation(&self) -> f64 {
        let eps = self.geometry.eps;
        let available = self.domain().half() / eps;
        (self.geometry.d * (1.0 / eps).ln() + 1.0).min(available)
    }
}

/// The reference desk scenario.
pub const DESK_SCENARIO: &str = r#"[geometry]
n = 2
side = 1.0
m = [0.25]
beta = 2.0
eps = 0.0625
d = 2.0

[geometry.resolution]
cells_per_eps = 8

[coefficients]
a_inner = [0.5, 0.0, 0.0, 0.5]
a_outer = [1.0, 0.0, 0.0, 1.0]
omega_inner = 0.8
omega_outer = 1.0
h = 1.5
lambda = 0.0

[coefficients.velocity]
kind = "uniform"
inner = [0.2, -0.1]
outer = [0.5, -0.1]

[source]
kind = "pulse"
amplitude = 1.0
t_m = 0.1

[run]
dt = 0.01
horizon = 0.5
sweep = [0.0625, 0.03125, 0.015625]
"#;
