//! Transient transport on the perforated domain with leaking alveoli.

use serde::{Deserialize, Serialize};

use crate::coefficients::{InitialField, SourceSchedule, TransportCoefficients};
use crate::error::Result;
use crate::fv::{BoundaryKind, BoundarySpec, Discretization, FvSetup};
use crate::geometry::PerforatedGrid;
use crate::transient::{run_transient, TransientOptions, TransientRun, TransientRunReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SideCondition {
    /// `φ = 0`.
    Dirichlet,
    /// `n·(A∇φ − vφ) = 0`.
    ZeroFlux,
}

impl SideCondition {
    fn spec(self) -> BoundarySpec {
        match self {
            SideCondition::Dirichlet => BoundarySpec::dirichlet(),
            SideCondition::ZeroFlux => BoundarySpec::zero_flux(),
        }
    }
}

/// Conditions on the top (`S⁺`) and bottom (`S⁻`) faces; lateral faces are
/// periodic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OuterBoundary {
    /// Dirichlet at the bottom, zero total flux at the top.
    LayeredBox,
    /// Zero total flux everywhere.
    Sealed,
    General {
        bottom: SideCondition,
        top: SideCondition,
    },
}

impl OuterBoundary {
    pub fn sides(self) -> (SideCondition, SideCondition) {
        match self {
            OuterBoundary::LayeredBox => (SideCondition::Dirichlet, SideCondition::ZeroFlux),
            OuterBoundary::Sealed => (SideCondition::ZeroFlux, SideCondition::ZeroFlux),
            OuterBoundary::General { bottom, top } => (bottom, top),
        }
    }

    /// Top and bottom conditions exchanged.
    pub fn swapped(self) -> Self {
        let (bottom, top) = self.sides();
        OuterBoundary::General {
            bottom: top,
            top: bottom,
        }
    }

    pub fn spec(self, vertical: usize, axis: usize, side: i32) -> BoundarySpec {
        let (bottom, top) = self.sides();
        if axis != vertical {
            // Only reached on non-periodic lateral axes.
            return BoundarySpec::zero_flux();
        }
        if side < 0 {
            bottom.spec()
        } else {
            top.spec()
        }
    }
}

/// Finite-volume discretization of the perforated problem.
pub fn micro_discretization(
    pg: &PerforatedGrid,
    coeffs: &TransportCoefficients,
    bc: OuterBoundary,
) -> Result<Discretization> {
    let g = &pg.grid;
    let eps = Some(pg.array.eps);
    let v = g.vertical_axis();
    let active = pg.fluid_mask();
    let vel = coeffs.velocity.scaled(eps);
    Discretization::build(FvSetup {
        grid: g,
        active: &active,
        tensor: &|c| *coeffs.a.eval(g.cell_center(c)[v], eps),
        capacity: &|c| coeffs.omega.eval(g.cell_center(c)[v], eps),
        velocity: &vel,
        outer: &|axis, side| bc.spec(v, axis, side),
        wall: &|cell, axis, side, area| {
            let nb = g.neighbor(cell, axis, side).expect("wall faces have a neighbour");
            BoundarySpec::injection(area, pg.hole_of(nb).unwrap_or(0))
        },
        cut: None,
        planes: Vec::new(),
    })
}

/// Solves the microscopic problem; hole faces inject `Φ(t)` per unit area.
pub fn solve_microscopic(
    pg: &PerforatedGrid,
    coeffs: &TransportCoefficients,
    bc: OuterBoundary,
    schedule: &SourceSchedule,
    phi0: &InitialField,
    opts: &TransientOptions,
) -> Result<TransientRun> {
    let disc = micro_discretization(pg, coeffs, bc)?;
    let init: Vec<f64> = disc
        .cell_of_dof
        .iter()
        .map(|&c| {
            let x = disc.grid.cell_center(c);
            phi0.eval(&x[..disc.grid.ndim()])
        })
        .collect();
    run_transient(&disc, schedule, coeffs.lambda, init, opts).map_err(|e| e.context("microscopic solve"))
}

/// Total hole influx rate per unit `Φ`, i.e. the discrete `Σ_α |Γ_α|`.
pub fn injection_weight(disc: &Discretization) -> f64 {
    disc.boundary
        .iter()
        .filter(|b| b.spec.kind == BoundaryKind::Injection)
        .map(|b| b.spec.weight)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyCheck {
    pub max_abs: f64,
    pub energy_residual: f64,
    pub energy_tolerance: f64,
    pub passes: bool,
}

/// Checks the discrete energy identity of a completed run.
pub fn energy_diagnostics(report: &TransientRunReport, tolerance: f64) -> EnergyCheck {
    let r = report.energy.relative_residual;
    EnergyCheck {
        max_abs: report.max_abs,
        energy_residual: r,
        energy_tolerance: tolerance,
        passes: r <= tolerance,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformityCheck {
    pub max_bound: f64,
    pub h1_bound: f64,
    pub max_values: Vec<f64>,
    pub h1_values: Vec<f64>,
    pub passes: bool,
}

/// Uniform bounds across an ε-sweep: every run stays below the first
/// (coarsest) run's `max|φ|` and `‖φ‖_{L²(0,T;H¹)}` times `1 + slack`.
pub fn uniformity_check(reports: &[&TransientRunReport], slack: f64) -> UniformityCheck {
    let max_values: Vec<f64> = reports.iter().map(|r| r.max_abs).collect();
    let h1_values: Vec<f64> = reports.iter().map(|r| r.h1_time_sq.sqrt()).collect();
    let max_bound = max_values.first().copied().unwrap_or(0.0) * (1.0 + slack);
    let h1_bound = h1_values.first().copied().unwrap_or(0.0) * (1.0 + slack);
    let passes = max_values.iter().all(|&m| m <= max_bound) && h1_values.iter().all(|&h| h <= h1_bound);
    UniformityCheck {
        max_bound,
        h1_bound,
        max_values,
        h1_values,
        passes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{LayeredScalar, LayeredTensor, LayeredVelocity, LeakProfile, Tensor, VelocityKind};
    use crate::geometry::{build_perforated_grid, AlveolusArray, BoxDomain, GridResolution, VerticalAnchors};
    use crate::linalg::SolverOptions;

    fn desk(eps: f64) -> PerforatedGrid {
        build_perforated_grid(
            &BoxDomain::new(2, 1.0).unwrap(),
            &AlveolusArray::new(vec![0.25], eps, 2.0).unwrap(),
            &GridResolution::with_cells_per_eps(8),
            &VerticalAnchors {
                layer: Some(1.5 * eps),
                band: None,
            },
        )
        .unwrap()
    }

    fn coeffs(lambda: f64, velocity: bool) -> TransportCoefficients {
        let velocity = if velocity {
            LayeredVelocity::new(
                VelocityKind::Uniform {
                    inner: vec![0.2, -0.1],
                    outer: vec![0.5, -0.1],
                },
                1.5,
                2,
            )
            .unwrap()
        } else {
            LayeredVelocity::zero(2)
        };
        TransportCoefficients {
            a: LayeredTensor::new(Tensor::scaled_identity(2, 0.5), Tensor::identity(2), 1.5, 1e-12).unwrap(),
            omega: LayeredScalar::new(0.8, 1.0, 1.5).unwrap(),
            velocity,
            lambda,
        }
    }

    fn opts(dt: f64, horizon: f64, tol: f64) -> TransientOptions {
        TransientOptions {
            dt,
            horizon,
            linear: SolverOptions {
                rel_tol: tol,
                max_iter: 2000,
            },
            cross_iterations: 3,
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let pg = desk(0.125);
        let run = solve_microscopic(
            &pg,
            &coeffs(0.7, true),
            OuterBoundary::LayeredBox,
            &SourceSchedule::zero(0.2),
            &InitialField::Zero,
            &opts(0.05, 0.2, 1e-10),
        )
        .unwrap();
        assert_eq!(run.series.max_abs(), 0.0);
        assert_eq!(run.report.energy.residual, 0.0);
    }

    #[test]
    fn pulse_mass_balance() {
        let pg = desk(0.125);
        let src = SourceSchedule::new(
            LeakProfile::Pulse {
                amplitude: 1.0,
                t_m: 0.1,
            },
            0.3,
        )
        .unwrap();
        let run = solve_microscopic(
            &pg,
            &coeffs(0.7, true),
            OuterBoundary::LayeredBox,
            &src,
            &InitialField::Zero,
            &opts(0.01, 0.3, 1e-12),
        )
        .unwrap();
        let r = &run.report;
        assert!(r.worst_balance < 1e-10, "balance {}", r.worst_balance);
        let gamma: f64 = pg.hole_boundary_areas().iter().sum();
        assert!((r.total_injected - 0.1 * gamma).abs() < 1e-12);
        assert!(r.energy.relative_residual < 1e-9, "{:?}", r.energy);
    }
}
