//! Matched asymptotic expansions built from the outer solution, the first
//! corrector and the cell solutions, their error norms against microscopic
//! solutions, and convergence-rate fits.
//!
//! All fields live on the cells of the perforated grid: the outer and
//! corrector problems are solved on its unperforated tensor grid and the
//! cell solutions on a strip made of its cells, so `x/ε` samples fall on
//! strip cell centres and no interpolation is involved.

use serde::Serialize;

use crate::cell::{linear_fit, CellFamily, CellSolution};
use crate::coefficients::{face_geometry, FaceVelocity, LayeredVelocity, SourceSchedule};
use crate::error::{Error, Result};
use crate::field::{h1_seminorm_sq, l2_norm_sq, Series};
use crate::geometry::{PerforatedGrid, Region, SnappedBand};
use crate::grid::TensorGrid;

/// Everything needed to evaluate `F_ε` and `H_ε` on the micro grid.
#[derive(Debug, Clone)]
pub struct ExpansionBundle {
    pub pg: PerforatedGrid,
    pub band: SnappedBand,
    pub d: f64,
    pub phi0: Series,
    pub phi1: Series,
    pub cells: CellFamily,
    pub schedule: SourceSchedule,
    /// Cell-centred `v^ε` (average of the two face normals per axis).
    velocity: Vec<[f64; 3]>,
    /// Cells of `G_ε`.
    in_band: Vec<bool>,
}

/// Time-independent cell functions sampled at `x/ε` on one grid cell.
#[derive(Debug, Clone, Copy, Default)]
struct Samples {
    chi: [f64; 3],
    w: f64,
    chi_lm: [[f64; 3]; 3],
    w_ij: [[f64; 3]; 3],
    z: [f64; 3],
}

/// Expansion values on every grid cell at one snapshot.
#[derive(Debug, Clone)]
pub struct ExpansionSnapshot {
    pub time: f64,
    pub source: f64,
    /// `φ⁰_ε + d ε log(1/ε) φ¹_ε` (the outer branch of `F_ε`).
    pub outer: Vec<f64>,
    /// `F_ε`.
    pub f: Vec<f64>,
    /// `H_ε`.
    pub h: Vec<f64>,
    /// `ε w_ε(x/ε) Φ` in the band, 0 elsewhere.
    pub w_term: Vec<f64>,
}

/// `ε log(1/ε)`.
pub fn band_scale(eps: f64) -> f64 {
    eps * (1.0 / eps).ln()
}

/// One-dimensional derivative along `axis` on the grid, not crossing the
/// planes `cut_faces` of the vertical axis: three-point central differences
/// on nonuniform spacing, two-point one-sided next to a plane or the outer
/// boundary.
pub fn derivative(grid: &TensorGrid, values: &[f64], axis: usize, cut_faces: &[usize]) -> Vec<f64> {
    let v = grid.vertical_axis();
    (0..grid.len())
        .map(|c| {
            let idx = grid.multi_index(c);
            let blocked = |side: i32| {
                axis == v && {
                    let face = if side > 0 { idx[v] + 1 } else { idx[v] };
                    cut_faces.contains(&face)
                }
            };
            let nb = |side: i32| -> Option<(f64, f64)> {
                if blocked(side) {
                    return None;
                }
                let n = grid.neighbor(c, axis, side)?;
                let j = grid.multi_index(n)[axis];
                let h = 0.5 * (grid.width(axis, idx[axis]) + grid.width(axis, j));
                Some((values[n], h))
            };
            let f0 = values[c];
            match (nb(-1), nb(1)) {
                (Some((fm, hm)), Some((fp, hp))) => (hm * hm * (fp - f0) + hp * hp * (f0 - fm)) / (hm * hp * (hm + hp)),
                (Some((fm, hm)), None) => (f0 - fm) / hm,
                (None, Some((fp, hp))) => (fp - f0) / hp,
                (None, None) => 0.0,
            }
        })
        .collect()
}

impl ExpansionBundle {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pg: PerforatedGrid,
        band: SnappedBand,
        d: f64,
        phi0: Series,
        phi1: Series,
        cells: CellFamily,
        schedule: SourceSchedule,
        velocity: &LayeredVelocity,
    ) -> Result<Self> {
        if phi0.grid != pg.grid || phi1.grid != pg.grid {
            return Err(Error::Invalid(
                "expansion constituents must share the micro grid".into(),
            ));
        }
        if phi0.times != phi1.times {
            return Err(Error::Invalid("outer and corrector timelines differ".into()));
        }
        let g = &pg.grid;
        let n = g.ndim();
        if cells.chi.len() != n {
            return Err(Error::Invalid("cell family dimension does not match the grid".into()));
        }
        let eps = pg.array.eps;
        let vel = velocity.scaled(Some(eps));
        let velocity = (0..g.len())
            .map(|c| {
                let mut out = [0.0; 3];
                for (a, o) in out.iter_mut().enumerate().take(n) {
                    *o = 0.5 * (vel.normal(&face_geometry(g, c, a, -1)) + vel.normal(&face_geometry(g, c, a, 1)));
                }
                out
            })
            .collect();
        let in_band = (0..g.len()).map(|c| band.region(g, c) == Region::Band).collect();
        Ok(Self {
            pg,
            band,
            d,
            phi0,
            phi1,
            cells,
            schedule,
            velocity,
            in_band,
        })
    }

    pub fn eps(&self) -> f64 {
        self.pg.array.eps
    }

    pub fn grid(&self) -> &TensorGrid {
        &self.pg.grid
    }

    pub fn len(&self) -> usize {
        self.phi0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi0.is_empty()
    }

    pub fn in_band(&self, cell: usize) -> bool {
        self.in_band[cell]
    }

    /// Vertical face indices of `Σ±_ε`.
    pub fn planes(&self) -> [usize; 2] {
        [self.band.lower_face, self.band.upper_face]
    }

    /// `Φ` attached to snapshot `k`: the mean over the step that produced it.
    /// The initial snapshot is the initial data, on which no leak has acted
    /// yet, so it carries `Φ = 0` (consistent with the zero initial
    /// corrector).
    pub fn source_at(&self, k: usize) -> f64 {
        let t = &self.phi0.times;
        if k == 0 {
            0.0
        } else {
            self.schedule.mean(t[k - 1], t[k])
        }
    }

    fn samples(&self) -> Vec<Samples> {
        let g = self.grid();
        let n = g.ndim();
        let eps = self.eps();
        let s = |sol: &CellSolution, y: &[f64]| sol.sample(y);
        (0..g.len())
            .map(|c| {
                if !self.in_band[c] {
                    return Samples::default();
                }
                let x = g.cell_center(c);
                let y: Vec<f64> = x[..n].iter().map(|xi| xi / eps).collect();
                let mut out = Samples {
                    w: s(&self.cells.w, &y),
                    ..Samples::default()
                };
                for k in 0..n {
                    out.chi[k] = s(&self.cells.chi[k], &y);
                    out.z[k] = s(&self.cells.z[k], &y);
                    for l in 0..n {
                        out.chi_lm[k][l] = s(&self.cells.chi_lm[k][l], &y);
                        out.w_ij[k][l] = s(&self.cells.w_ij[k][l], &y);
                    }
                }
                out
            })
            .collect()
    }

    /// Evaluates every expansion at every snapshot.
    pub fn snapshots(&self) -> Vec<ExpansionSnapshot> {
        let samples = self.samples();
        (0..self.len()).map(|k| self.snapshot_with(k, &samples)).collect()
    }

    /// Evaluates the expansions at snapshot `k`.
    pub fn snapshot(&self, k: usize) -> ExpansionSnapshot {
        self.snapshot_with(k, &self.samples())
    }

    fn snapshot_with(&self, k: usize, samples: &[Samples]) -> ExpansionSnapshot {
        let g = self.grid();
        let n = g.ndim();
        let eps = self.eps();
        let patch = self.d * band_scale(eps);
        let cuts = self.planes();
        let phi0 = &self.phi0.values[k];
        let phi1 = &self.phi1.values[k];
        let src = self.source_at(k);
        let outer: Vec<f64> = phi0.iter().zip(phi1).map(|(a, b)| a + patch * b).collect();
        let d_outer: Vec<Vec<f64>> = (0..n).map(|a| derivative(g, &outer, a, &cuts)).collect();
        let d0: Vec<Vec<f64>> = (0..n).map(|a| derivative(g, phi0, a, &cuts)).collect();
        let dd0: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|a| (0..n).map(|b| derivative(g, &d0[a], b, &cuts)).collect())
            .collect();
        let mut f = outer.clone();
        let mut h = phi0.clone();
        let mut w_term = vec![0.0; g.len()];
        for c in 0..g.len() {
            if !self.in_band[c] {
                continue;
            }
            let s = &samples[c];
            let vel = &self.velocity[c];
            let wphi = s.w * src;
            let mut first_f = wphi;
            let mut first_h = wphi;
            let mut second = 0.0;
            for kk in 0..n {
                first_f += s.chi[kk] * d_outer[kk][c];
                first_h += s.chi[kk] * d0[kk][c];
                second += src * s.z[kk] * vel[kk];
                for l in 0..n {
                    second += s.chi_lm[kk][l] * dd0[kk][l][c];
                    second += s.w_ij[kk][l] * d0[kk][c] * vel[l];
                }
            }
            f[c] += eps * first_f + eps * eps * second;
            h[c] += eps * first_h;
            w_term[c] = eps * wphi;
        }
        ExpansionSnapshot {
            time: self.phi0.times[k],
            source: src,
            outer,
            f,
            h,
            w_term,
        }
    }

    /// `‖u‖_{L²(G_ε)}` over fluid band cells.
    pub fn band_l2(&self, values: &[f64]) -> f64 {
        let mask: Vec<bool> = (0..self.grid().len())
            .map(|c| self.in_band[c] && self.pg.is_fluid(c))
            .collect();
        l2_norm_sq(self.grid(), &mask, values).sqrt()
    }

    /// Jump `F(outer trace) − F(band trace)` across `Σ±_ε`, RMS over the
    /// plane, with one-sided linear extrapolation of both traces.
    pub fn interface_mismatch(&self, snap: &ExpansionSnapshot) -> f64 {
        let g = self.grid();
        let v = g.vertical_axis();
        let nv = g.dims()[v];
        let mut sum = 0.0;
        let mut area = 0.0;
        for face in self.planes() {
            if face < 2 || face + 2 > nv {
                continue;
            }
            for c in 0..g.len() {
                let idx = g.multi_index(c);
                if idx[v] + 1 != face {
                    continue;
                }
                let below = [g.neighbor(c, v, -1), Some(c)];
                let up1 = g.neighbor(c, v, 1);
                let up2 = up1.and_then(|u| g.neighbor(u, v, 1));
                let (Some(b2), Some(b1), Some(a1), Some(a2)) = (below[0], below[1], up1, up2) else {
                    continue;
                };
                if ![b2, b1, a1, a2].iter().all(|&x| self.pg.is_fluid(x)) {
                    continue;
                }
                let y_face = g.faces(v)[face];
                let trace = |c1: usize, c2: usize| {
                    let (y1, y2) = (g.cell_center(c1)[v], g.cell_center(c2)[v]);
                    snap.f[c1] + (snap.f[c1] - snap.f[c2]) * (y_face - y1) / (y1 - y2)
                };
                let jump = trace(a1, a2) - trace(b1, b2);
                let a = g.face_area(c, v);
                sum += a * jump * jump;
                area += a;
            }
        }
        if area > 0.0 {
            (sum / area).sqrt()
        } else {
            0.0
        }
    }
}

impl ExpansionBundle {
    /// `(‖ε w_ε Φ‖_{L²(G_ε)}, ‖φ⁰_ε‖_{L²(G_ε)})` per snapshot.
    pub fn band_terms(&self) -> Vec<(f64, f64)> {
        let samples = self.samples();
        (0..self.len())
            .map(|k| {
                let snap = self.snapshot_with(k, &samples);
                (self.band_l2(&snap.w_term), self.band_l2(&self.phi0.values[k]))
            })
            .collect()
    }
}

/// Discrete `L²(0,T;H¹)` and `L^∞(0,T;L²)` norms of an error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorNorms {
    pub l2_h1: f64,
    pub linf_l2: f64,
}

/// Running accumulation of [`ErrorNorms`] over snapshots.
#[derive(Debug, Clone, Copy, Default)]
struct NormAccumulator {
    l2h1_sq: f64,
    linf: f64,
}

impl NormAccumulator {
    /// Adds snapshot error `e`; `dt` is the length of the step ending at it
    /// (0 for the initial snapshot).
    fn add(&mut self, grid: &TensorGrid, mask: &[bool], broken: &[usize], dt: f64, e: &[f64]) {
        let v = grid.vertical_axis();
        let skip = |axis: usize, lo: usize, _hi: usize| axis == v && broken.contains(&(grid.multi_index(lo)[v] + 1));
        let l2 = l2_norm_sq(grid, mask, e);
        self.linf = self.linf.max(l2.sqrt());
        if dt > 0.0 {
            self.l2h1_sq += dt * (l2 + h1_seminorm_sq(grid, mask, e, &skip));
        }
    }

    fn finish(self) -> ErrorNorms {
        ErrorNorms {
            l2_h1: self.l2h1_sq.sqrt(),
            linf_l2: self.linf,
        }
    }
}

fn check_compatible(reference: &Series, grid: &TensorGrid, times: &[f64]) -> Result<()> {
    if reference.times.len() != times.len()
        || reference
            .times
            .iter()
            .zip(times)
            .any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + a.abs()))
    {
        return Err(Error::Invalid("error norms need a common timeline".into()));
    }
    if reference.grid != *grid {
        return Err(Error::Invalid("error norms need a common grid".into()));
    }
    Ok(())
}

/// Norms of `reference − candidate(k)` over cells in `mask`. The `H¹` part
/// skips vertical faces listed in `broken_faces` (the broken norm on
/// `B_ε`). The time integral is the right-endpoint sum over the steps.
pub fn error_norms(
    grid: &TensorGrid,
    mask: &[bool],
    times: &[f64],
    reference: &Series,
    candidate: &dyn Fn(usize) -> Vec<f64>,
    broken_faces: &[usize],
) -> Result<ErrorNorms> {
    check_compatible(reference, grid, times)?;
    let mut acc = NormAccumulator::default();
    for k in 0..times.len() {
        let e: Vec<f64> = reference.values[k]
            .iter()
            .zip(candidate(k))
            .map(|(a, b)| a - b)
            .collect();
        let dt = if k > 0 { times[k] - times[k - 1] } else { 0.0 };
        acc.add(grid, mask, broken_faces, dt, &e);
    }
    Ok(acc.finish())
}

/// Errors of the expansions against one microscopic reference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionErrors {
    /// `φ_ε − φ⁰_ε` on `B_ε`.
    pub outer: ErrorNorms,
    /// `φ_ε − H_ε` on `B_ε`.
    pub h: ErrorNorms,
    /// `φ_ε − F_ε` on `B_ε`.
    pub f: ErrorNorms,
    /// Largest RMS jump of `F_ε` across `Σ±_ε` over the snapshots.
    pub interface_mismatch: f64,
    /// `ε² log²(1/ε) + ε^d`.
    pub mismatch_scale: f64,
    /// `‖ε w_ε Φ‖_{L²(G_ε)}` per snapshot.
    pub w_term: Vec<f64>,
    /// `‖φ⁰_ε‖_{L²(G_ε)}` per snapshot.
    pub outer_band: Vec<f64>,
    /// Cell values are read at coinciding cell centres, so sampling adds no
    /// interpolation error.
    pub interpolation_error: f64,
}

impl ExpansionBundle {
    /// Compares `φ⁰_ε`, `H_ε` and `F_ε` with the microscopic series
    /// `reference` on the fluid cells, with `H¹` broken across `Σ±_ε`.
    pub fn compare(&self, reference: &Series) -> Result<ExpansionErrors> {
        let g = self.grid();
        check_compatible(reference, g, &self.phi0.times)?;
        let mask = self.pg.fluid_mask();
        let broken = self.planes();
        let samples = self.samples();
        let (mut outer, mut h, mut f) = Default::default();
        let mut mismatch = 0.0f64;
        let mut w_term = Vec::with_capacity(self.len());
        let mut outer_band = Vec::with_capacity(self.len());
        let times = &self.phi0.times;
        for k in 0..self.len() {
            let snap = self.snapshot_with(k, &samples);
            let dt = if k > 0 { times[k] - times[k - 1] } else { 0.0 };
            let r = &reference.values[k];
            let diff = |c: &[f64]| -> Vec<f64> { r.iter().zip(c).map(|(a, b)| a - b).collect() };
            NormAccumulator::add(&mut outer, g, &mask, &broken, dt, &diff(&self.phi0.values[k]));
            NormAccumulator::add(&mut h, g, &mask, &broken, dt, &diff(&snap.h));
            NormAccumulator::add(&mut f, g, &mask, &broken, dt, &diff(&snap.f));
            mismatch = mismatch.max(self.interface_mismatch(&snap));
            w_term.push(self.band_l2(&snap.w_term));
            outer_band.push(self.band_l2(&self.phi0.values[k]));
        }
        let eps = self.eps();
        let ln = (1.0 / eps).ln();
        Ok(ExpansionErrors {
            outer: NormAccumulator::finish(outer),
            h: NormAccumulator::finish(h),
            f: NormAccumulator::finish(f),
            interface_mismatch: mismatch,
            mismatch_scale: eps * eps * ln * ln + eps.powf(self.d),
            w_term,
            outer_band,
            interpolation_error: 0.0,
        })
    }
}

/// Power-law fit `error ≈ C (ε log(1/ε))^m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub exponent: f64,
    pub r2: f64,
    pub points: usize,
    /// Errors do not decrease monotonically as `ε` decreases.
    pub not_decreasing: bool,
}

/// Least-squares slope of `ln error` against `ln(ε log(1/ε))`.
pub fn fit_rate(eps: &[f64], errors: &[f64]) -> Result<RateFit> {
    fit_power(eps, errors, band_scale)
}

/// Least-squares slope of `ln error` against `ln ε`.
pub fn fit_power_eps(eps: &[f64], errors: &[f64]) -> Result<RateFit> {
    fit_power(eps, errors, |e| e)
}

fn fit_power(eps: &[f64], errors: &[f64], scale: fn(f64) -> f64) -> Result<RateFit> {
    if eps.len() != errors.len() || eps.len() < 2 {
        return Err(Error::Invalid("rate fit needs at least two (ε, error) pairs".into()));
    }
    if eps.iter().any(|&e| !(e > 0.0 && e < 1.0)) || errors.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(Error::Invalid(
            "rate fit needs ε in (0,1) and positive finite errors".into(),
        ));
    }
    let mut pairs: Vec<(f64, f64)> = eps.iter().copied().zip(errors.iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let not_decreasing = pairs.windows(2).any(|w| w[1].1 >= w[0].1);
    let pts: Vec<(f64, f64)> = pairs.iter().map(|&(e, r)| (scale(e).ln(), r.ln())).collect();
    let (slope, _, r2) = linear_fit(&pts);
    Ok(RateFit {
        exponent: slope,
        r2,
        points: pts.len(),
        not_decreasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::uniform_faces;

    #[test]
    fn manufactured_rate() {
        let eps = [0.1, 0.05, 0.025, 0.0125, 0.00625, 0.003125, 0.001];
        let errs: Vec<f64> = eps.iter().map(|&e| 3.0 * band_scale(e).powf(1.5)).collect();
        let fit = fit_rate(&eps, &errs).unwrap();
        assert!((fit.exponent - 1.5).abs() < 0.01);
        assert!(!fit.not_decreasing);
        let flat = fit_rate(&eps, &[1.0; 7]).unwrap();
        assert!(flat.not_decreasing);
        assert!(fit_rate(&eps[..1], &errs[..1]).is_err());
    }

    fn square_grid(n: usize) -> TensorGrid {
        TensorGrid::new(
            vec![uniform_faces(0.0, 1.0, n), uniform_faces(-0.5, 0.5, n)],
            vec![true, false],
        )
        .unwrap()
    }

    fn constant_series(g: &TensorGrid, times: &[f64], values: &[f64]) -> Series {
        let mut s = Series::new(g.clone(), vec![true; g.len()]);
        for &t in times {
            s.push(t, values.to_vec());
        }
        s
    }

    #[test]
    fn identical_inputs_have_zero_error() {
        let g = square_grid(6);
        let times = [0.0, 0.1, 0.3];
        let f: Vec<f64> = (0..g.len())
            .map(|c| g.cell_center(c)[0].sin() + g.cell_center(c)[1])
            .collect();
        let r = constant_series(&g, &times, &f);
        let e = error_norms(&g, &vec![true; g.len()], &times, &r, &|k| r.values[k].clone(), &[]).unwrap();
        assert_eq!(
            e,
            ErrorNorms {
                l2_h1: 0.0,
                linf_l2: 0.0
            }
        );
    }

    #[test]
    fn one_cell_perturbation_scales_linearly() {
        let n = 8;
        let g = square_grid(n);
        let h = 1.0 / n as f64;
        let times = [0.0, 0.25, 0.5];
        let zero = vec![0.0; g.len()];
        let r = constant_series(&g, &times, &zero);
        let mask = vec![true; g.len()];
        // Interior cell (3, 3); a second one next to a broken vertical face.
        let cell = 3 * n + 3;
        for delta in [1e-3, 2e-3, 1.0] {
            let bump = |c: usize| {
                let mut v = zero.clone();
                v[c] = delta;
                v
            };
            let cand = |k: usize| if k == 0 { zero.clone() } else { bump(cell) };
            let e = error_norms(&g, &mask, &times, &r, &cand, &[]).unwrap();
            assert!((e.linf_l2 - delta * h).abs() <= 1e-15 * (1.0 + delta));
            // Four faces, each contributing area·dist·(δ/h)² = δ².
            let expected = (0.5 * (delta * delta * h * h + 4.0 * delta * delta)).sqrt();
            assert!((e.l2_h1 - expected).abs() <= 1e-14 * expected);
            // Breaking the face above the cell removes one face term.
            let broken = error_norms(&g, &mask, &times, &r, &cand, &[4]).unwrap();
            let expected = (0.5 * (delta * delta * h * h + 3.0 * delta * delta)).sqrt();
            assert!((broken.l2_h1 - expected).abs() <= 1e-14 * expected);
        }
    }

    #[test]
    fn norms_reject_mismatched_timelines() {
        let g = square_grid(4);
        let zero = vec![0.0; g.len()];
        let r = constant_series(&g, &[0.0, 0.1], &zero);
        let mask = vec![true; g.len()];
        assert!(error_norms(&g, &mask, &[0.0, 0.2], &r, &|_| zero.clone(), &[]).is_err());
        assert!(error_norms(&square_grid(5), &[true; 25], &[0.0, 0.1], &r, &|_| vec![0.0; 25], &[]).is_err());
    }

    #[test]
    fn derivative_exact_on_quadratics_away_from_cuts() {
        let g = TensorGrid::new(
            vec![uniform_faces(0.0, 1.0, 4), vec![-1.0, -0.6, -0.1, 0.0, 0.3, 0.35, 1.0]],
            vec![true, false],
        )
        .unwrap();
        let f: Vec<f64> = (0..g.len()).map(|c| g.cell_center(c)[1].powi(2)).collect();
        let d = derivative(&g, &f, 1, &[3]);
        for c in 0..g.len() {
            let j = g.multi_index(c)[1];
            let y = g.cell_center(c)[1];
            if j != 0 && j != 5 && j != 2 && j != 3 {
                assert!((d[c] - 2.0 * y).abs() < 1e-12, "cell {c}: {} vs {}", d[c], 2.0 * y);
            }
        }
        // Lateral derivative of a function of y only vanishes.
        assert!(derivative(&g, &f, 0, &[]).iter().all(|&x| x.abs() < 1e-14));
    }
}
