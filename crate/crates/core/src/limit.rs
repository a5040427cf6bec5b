//! Homogenized problems with embedded interface jumps: the single-interface
//! limit on `Σ`, the two-interface outer solution on `Σ±` and the
//! first corrector with value and flux jumps on `Σ±`.

use serde::{Deserialize, Serialize};

use crate::coefficients::{InitialField, SourceSchedule, TransportCoefficients};
use crate::error::{Error, Result};
use crate::fv::{BoundarySpec, Discretization, FvSetup, JumpPlane};
use crate::geometry::{hole_boundary_measure, obstacle_measure, AlveolusArray, SnappedBand};
use crate::grid::TensorGrid;
use crate::micro::OuterBoundary;
use crate::transient::{run_transient, TransientOptions, TransientRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitVariant {
    /// Single interface at `x_n = 0`, outer coefficients everywhere.
    Sigma,
    /// Flux jumps on both band planes.
    TwoInterface,
    /// Value and flux jumps on both band planes, zero initial data.
    Corrector,
}

/// Sign choices and boundary assignment for the homogenized problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitOptions {
    /// Use `+2Φ|M|` on `Σ` (a sink under the leak-is-source convention)
    /// instead of the mass-consistent `−2Φ|M|`.
    #[serde(default)]
    pub literal_sigma_sign: bool,
    /// Exchange the top and bottom conditions for the band problems.
    #[serde(default)]
    pub outer_bc_literal: bool,
}

/// Jumps per plane, proportional to `Φ(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpSpec {
    /// `(height, value-jump coefficient, flux-jump coefficient)`.
    pub planes: Vec<(f64, f64, f64)>,
}

impl JumpSpec {
    pub fn for_variant(
        variant: LimitVariant,
        array: &AlveolusArray,
        a2_nn: f64,
        band: Option<&SnappedBand>,
        opts: &LimitOptions,
    ) -> Result<Self> {
        let half_dp = 0.5 * hole_boundary_measure(array);
        let need_band = || band.ok_or_else(|| Error::Invalid("band planes required".into()));
        Ok(match variant {
            LimitVariant::Sigma => {
                let g = 2.0 * obstacle_measure(array);
                JumpSpec {
                    planes: vec![(0.0, 0.0, if opts.literal_sigma_sign { g } else { -g })],
                }
            }
            LimitVariant::TwoInterface => {
                let b = need_band()?;
                JumpSpec {
                    planes: vec![(b.upper, 0.0, -half_dp), (b.lower, 0.0, -half_dp)],
                }
            }
            LimitVariant::Corrector => {
                let b = need_band()?;
                let j = half_dp / a2_nn;
                JumpSpec {
                    planes: vec![(b.upper, -j, -j), (b.lower, j, j)],
                }
            }
        })
    }

    fn to_planes(&self, grid: &TensorGrid) -> Result<Vec<JumpPlane>> {
        let v = grid.vertical_axis();
        self.planes
            .iter()
            .map(|&(y, value, flux)| {
                let (k, dist) = grid.nearest_face(v, y);
                if dist > 1e-12 {
                    return Err(Error::Geometry(format!("interface at {y} is not a grid face")));
                }
                Ok(JumpPlane { face: k, value, flux })
            })
            .collect()
    }
}

/// Discretization of a homogenized variant on the unperforated grid.
pub fn limit_discretization(
    grid: &TensorGrid,
    eps: Option<f64>,
    coeffs: &TransportCoefficients,
    bc: OuterBoundary,
    jumps: &JumpSpec,
) -> Result<Discretization> {
    let v = grid.vertical_axis();
    let active = vec![true; grid.len()];
    let vel = coeffs.velocity.scaled(eps);
    Discretization::build(FvSetup {
        grid,
        active: &active,
        tensor: &|c| *coeffs.a.eval(grid.cell_center(c)[v], eps),
        capacity: &|c| coeffs.omega.eval(grid.cell_center(c)[v], eps),
        velocity: &vel,
        outer: &|axis, side| bc.spec(v, axis, side),
        wall: &|_, _, _, _| BoundarySpec::zero_flux(),
        cut: None,
        planes: jumps.to_planes(grid)?,
    })
}

fn initial(disc: &Discretization, phi0: &InitialField) -> Vec<f64> {
    let n = disc.grid.ndim();
    disc.cell_of_dof
        .iter()
        .map(|&c| phi0.eval(&disc.grid.cell_center(c)[..n]))
        .collect()
}

/// Limit problem on `Σ`: `[φ] = 0`, `[e_n·(A²∇φ − v²_nφ)] = −2Φ|M|`.
#[allow(clippy::too_many_arguments)]
pub fn solve_limit(
    grid: &TensorGrid,
    array: &AlveolusArray,
    coeffs: &TransportCoefficients,
    bc: OuterBoundary,
    schedule: &SourceSchedule,
    phi0: &InitialField,
    opts: &TransientOptions,
    limit: &LimitOptions,
) -> Result<TransientRun> {
    let jumps = JumpSpec::for_variant(LimitVariant::Sigma, array, coeffs.a.outer_nn(), None, limit)?;
    let disc = limit_discretization(grid, None, coeffs, bc, &jumps)?;
    run_transient(&disc, schedule, coeffs.lambda, initial(&disc, phi0), opts).map_err(|e| e.context("limit solve"))
}

/// Outer solution `φ⁰_ε` with flux jumps `−½Φ|∂P_ε|` on `Σ±_ε`.
#[allow(clippy::too_many_arguments)]
pub fn solve_two_interface(
    grid: &TensorGrid,
    array: &AlveolusArray,
    band: &SnappedBand,
    coeffs: &TransportCoefficients,
    bc: OuterBoundary,
    schedule: &SourceSchedule,
    phi0: &InitialField,
    opts: &TransientOptions,
    limit: &LimitOptions,
) -> Result<TransientRun> {
    let jumps = JumpSpec::for_variant(
        LimitVariant::TwoInterface,
        array,
        coeffs.a.outer_nn(),
        Some(band),
        limit,
    )?;
    let bc = if limit.outer_bc_literal { bc.swapped() } else { bc };
    let disc = limit_discretization(grid, Some(array.eps), coeffs, bc, &jumps)?;
    run_transient(&disc, schedule, coeffs.lambda, initial(&disc, phi0), opts).map_err(|e| e.context("outer solve"))
}

/// First corrector `φ¹_ε`: `[φ¹] = [e_n·(A²∇φ¹ − v²_nφ¹)] = ∓½Φ|∂P_ε|/A²_nn` on `Σ±_ε`.
#[allow(clippy::too_many_arguments)]
pub fn solve_first_corrector(
    grid: &TensorGrid,
    array: &AlveolusArray,
    band: &SnappedBand,
    coeffs: &TransportCoefficients,
    bc: OuterBoundary,
    schedule: &SourceSchedule,
    opts: &TransientOptions,
    limit: &LimitOptions,
) -> Result<TransientRun> {
    let jumps = JumpSpec::for_variant(LimitVariant::Corrector, array, coeffs.a.outer_nn(), Some(band), limit)?;
    let bc = if limit.outer_bc_literal { bc.swapped() } else { bc };
    let disc = limit_discretization(grid, Some(array.eps), coeffs, bc, &jumps)?;
    let zero = vec![0.0; disc.len()];
    run_transient(&disc, schedule, coeffs.lambda, zero, opts).map_err(|e| e.context("corrector solve"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrector_jump_magnitudes() {
        let a = AlveolusArray::new(vec![0.25], 0.1, 2.0).unwrap();
        let band = SnappedBand {
            upper_face: 10,
            lower_face: 5,
            upper: 0.3,
            lower: -0.3,
            snap_distance: 0.0,
        };
        let j = JumpSpec::for_variant(LimitVariant::Corrector, &a, 1.0, Some(&band), &LimitOptions::default()).unwrap();
        assert!((j.planes[0].1 + 0.7).abs() < 1e-12);
        assert!((j.planes[1].1 - 0.7).abs() < 1e-12);
        let t = JumpSpec::for_variant(
            LimitVariant::TwoInterface,
            &a,
            1.0,
            Some(&band),
            &LimitOptions::default(),
        )
        .unwrap();
        let total: f64 = t.planes.iter().map(|p| p.2).sum();
        assert!((total + 1.4).abs() < 1e-12);
        let s = JumpSpec::for_variant(LimitVariant::Sigma, &a, 1.0, None, &LimitOptions::default()).unwrap();
        assert_eq!(s.planes, vec![(0.0, 0.0, -1.0)]);
    }
}
