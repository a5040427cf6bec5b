//! Implicit time stepping shared by every transport solve.
//!
//! One step from `tⁿ` to `tⁿ⁺¹` applies the decay exactly,
//! `φ̃ = e^{−λΔt} φⁿ`, and then an implicit Euler transport step
//! `ωV (φⁿ⁺¹ − φ̃)/Δt + Σ_faces J(φⁿ⁺¹) = S̄`, where `S̄` uses the exact mean of
//! the source over the step. The time grid is split at every breakpoint of
//! the source so a pulse is resolved exactly.

use serde::Serialize;

use crate::coefficients::SourceSchedule;
use crate::error::{Error, Result};
use crate::field::{h1_seminorm_sq, Series};
use crate::fv::{BoundaryKind, Discretization};
use crate::linalg::{LinearSystem, SolverOptions};

/// Step end points: `[0, T]` split at the breakpoints, each piece divided
/// into equal steps no longer than `dt`.
pub fn time_grid(dt: f64, horizon: f64, breakpoints: &[f64]) -> Result<Vec<f64>> {
    if !(dt > 0.0) || !(horizon > 0.0) {
        return Err(Error::config("run", "time step and horizon must be positive"));
    }
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&b| b > 0.0 && b < horizon)
        .collect();
    cuts.push(horizon);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let mut times = vec![0.0];
    let mut t0 = 0.0;
    for c in cuts {
        let len = c - t0;
        if len <= 1e-14 * horizon {
            continue;
        }
        let k = (len / dt - 1e-9).ceil().max(1.0) as usize;
        for i in 1..=k {
            times.push(if i == k { c } else { t0 + len * i as f64 / k as f64 });
        }
        t0 = c;
    }
    Ok(times)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransientOptions {
    pub dt: f64,
    pub horizon: f64,
    pub linear: SolverOptions,
    /// Fixed-point sweeps for lagged cross-diffusion (only with full tensors).
    pub cross_iterations: usize,
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    /// `Σ ωVφ`.
    pub mass: f64,
    pub min: f64,
    pub max: f64,
    /// `‖√ω φ‖_{L²}`.
    pub l2: f64,
    /// Broken `|∇φ|_{L²}` (jump planes excluded).
    pub h1: f64,
    pub storage: f64,
    pub decay: f64,
    pub outflow: f64,
    pub injection: f64,
    /// `|storage + decay + outflow − injection|` relative to the largest term.
    pub balance_residual: f64,
    pub iterations: usize,
}

/// Discrete energy identity accumulated over the run: with `E = ½‖√ω φ‖²`,
/// `E(T) − E(0) + decay + dissipation + transport − source = residual`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EnergyBudget {
    pub initial: f64,
    pub fin: f64,
    /// `Σ ½(1 − e^{−2λΔt}) ‖√ω φⁿ‖²`.
    pub decay: f64,
    /// Implicit-Euler dissipation `Σ ½‖√ω (φⁿ⁺¹ − φ̃)‖²`.
    pub dissipation: f64,
    /// `Σ Δt (φ, div J)` over transport faces (diffusion, advection, outer boundary, jumps).
    pub transport: f64,
    /// Diffusive part `Σ Δt T (Δφ)²` of `transport` on plain faces.
    pub diffusion: f64,
    /// `Σ Δt Φ ∮ φ` over injection faces.
    pub source: f64,
    pub residual: f64,
    pub relative_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransientRunReport {
    pub steps: Vec<StepRecord>,
    pub energy: EnergyBudget,
    /// `∫ Φ · (injection weight) dt`, i.e. total hole influx.
    pub total_injected: f64,
    pub max_abs: f64,
    /// `‖∇φ‖²_{L²(0,T;L²)}` (rectangle rule at step ends).
    pub h1_time_sq: f64,
    pub worst_balance: f64,
    pub linear_tolerance: f64,
}

impl TransientRunReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("t,mass,min,max,h1,balance_residual\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                s.t, s.mass, s.min, s.max, s.h1, s.balance_residual
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TransientRun {
    pub series: Series,
    pub report: TransientRunReport,
}

fn stats(disc: &Discretization, phi: &[f64], t: f64) -> StepRecord {
    let mass: f64 = disc.capacity.iter().zip(phi).map(|(c, p)| c * p).sum();
    let l2 = disc
        .capacity
        .iter()
        .zip(phi)
        .map(|(c, p)| c * p * p)
        .sum::<f64>()
        .sqrt();
    let min = phi.iter().copied().fold(f64::INFINITY, f64::min);
    let max = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cells = disc.to_cells(phi, 0.0);
    let v = disc.grid.vertical_axis();
    let planes: Vec<usize> = disc.planes.iter().map(|p| p.face).collect();
    let g = &disc.grid;
    let skip = |axis: usize, _lo: usize, hi: usize| axis == v && planes.contains(&g.multi_index(hi)[v]);
    let h1 = h1_seminorm_sq(g, &disc.active_mask(), &cells, &skip).sqrt();
    StepRecord {
        t,
        mass,
        min,
        max,
        l2,
        h1,
        storage: 0.0,
        decay: 0.0,
        outflow: 0.0,
        injection: 0.0,
        balance_residual: 0.0,
        iterations: 0,
    }
}

/// Runs the transient problem from `phi0` (dof values).
pub fn run_transient(
    disc: &Discretization,
    schedule: &SourceSchedule,
    lambda: f64,
    phi0: Vec<f64>,
    opts: &TransientOptions,
) -> Result<TransientRun> {
    let n = disc.len();
    if phi0.len() != n {
        return Err(Error::Invalid("initial field does not match the grid".into()));
    }
    let times = time_grid(opts.dt, opts.horizon, &schedule.breakpoints())?;
    let mut series = Series::new(disc.grid.clone(), disc.active_mask());
    series.push(0.0, disc.to_cells(&phi0, 0.0));
    let mut systems: Vec<(f64, LinearSystem)> = Vec::new();
    let mut phi = phi0;
    let mut steps = vec![stats(disc, &phi, 0.0)];
    let kinetic = |p: &[f64]| 0.5 * disc.capacity.iter().zip(p).map(|(c, x)| c * x * x).sum::<f64>();
    let mut energy = EnergyBudget {
        initial: kinetic(&phi),
        ..Default::default()
    };
    let mut total_injected = 0.0;
    let mut h1_time_sq = 0.0;
    let injection_weight: f64 = disc
        .boundary
        .iter()
        .filter(|b| b.spec.kind == BoundaryKind::Injection)
        .map(|b| b.spec.weight)
        .sum();
    let plane_weight: f64 = disc
        .interior
        .iter()
        .filter_map(|f| f.plane.map(|k| -disc.planes[k].flux * f.area))
        .sum();
    // Opposite plane jumps cancel in the net injection; the budget is
    // measured against the gross interface transfer.
    let plane_gross: f64 = disc
        .interior
        .iter()
        .filter_map(|f| f.plane.map(|k| disc.planes[k].flux.abs() * f.area))
        .sum();
    for (step, w) in times.windows(2).enumerate() {
        let (t0, t1) = (w[0], w[1]);
        let dt = t1 - t0;
        let s = schedule.mean(t0, t1);
        let decay_factor = (-lambda * dt).exp();
        let tilde: Vec<f64> = phi.iter().map(|p| p * decay_factor).collect();
        let sys_idx = match systems.iter().position(|(d, _)| (d - dt).abs() <= 1e-14 * dt) {
            Some(i) => i,
            None => {
                let m = disc.assemble(1.0 / dt, None)?;
                systems.push((dt, LinearSystem::new(m)?));
                systems.len() - 1
            }
        };
        let sys = &systems[sys_idx].1;
        let mut base = disc.source_vector(s);
        for i in 0..n {
            base[i] += disc.capacity[i] / dt * tilde[i];
        }
        let mut next = phi.clone();
        let mut cross = vec![0.0; disc.interior.len()];
        let sweeps = if disc.has_cross {
            opts.cross_iterations.max(1)
        } else {
            1
        };
        let mut iterations = 0;
        for _ in 0..sweeps {
            cross = disc.cross_fluxes(&next);
            let mut rhs = base.clone();
            disc.add_cross(&cross, &mut rhs);
            let st = sys
                .solve(&rhs, &mut next, &opts.linear)
                .map_err(|e| e.context(format!("time step {} (t = {t1:.6})", step + 1)))?;
            iterations += st.iterations;
        }
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                step: step + 1,
                time: t1,
            });
        }
        // Mass budget.
        let fl = disc.fluxes(&next, s, &cross);
        let storage: f64 = (0..n).map(|i| disc.capacity[i] * (next[i] - phi[i])).sum();
        let decay: f64 = (0..n).map(|i| disc.capacity[i] * (phi[i] - tilde[i])).sum();
        let outflow: f64 = dt
            * disc
                .boundary
                .iter()
                .zip(&fl.boundary)
                .filter(|(b, _)| b.spec.kind != BoundaryKind::Injection)
                .map(|(_, j)| j)
                .sum::<f64>();
        let injection = dt * s * (injection_weight + plane_weight);
        let gross = dt * s.abs() * (injection_weight.abs() + plane_gross);
        let scale = storage.abs().max(decay.abs()).max(outflow.abs()).max(gross);
        let resid = storage + decay + outflow - injection;
        let balance_residual = if scale > 0.0 { resid.abs() / scale } else { resid.abs() };
        total_injected += dt * s * injection_weight;

        // Energy identity.
        let div = disc.divergence(&fl);
        let mut transport = 0.0;
        let mut source = 0.0;
        for (b, j) in disc.boundary.iter().zip(&fl.boundary) {
            if b.spec.kind == BoundaryKind::Injection {
                source += dt * next[b.dof] * (-j);
            }
        }
        for i in 0..n {
            transport += dt * next[i] * div[i];
        }
        transport += source; // injection faces are sources, not transport
        for f in &disc.interior {
            if f.plane.is_none() {
                let d = next[f.hi] - next[f.lo];
                energy.diffusion += dt * f.transmissibility() * d * d;
            }
        }
        let old_kin = kinetic(&phi);
        energy.decay += old_kin * (1.0 - decay_factor * decay_factor);
        energy.dissipation += 0.5
            * (0..n)
                .map(|i| disc.capacity[i] * (next[i] - tilde[i]).powi(2))
                .sum::<f64>();
        energy.transport += transport;
        energy.source += source;

        phi = next;
        let mut rec = stats(disc, &phi, t1);
        rec.storage = storage;
        rec.decay = decay;
        rec.outflow = outflow;
        rec.injection = injection;
        rec.balance_residual = balance_residual;
        rec.iterations = iterations;
        h1_time_sq += dt * rec.h1 * rec.h1;
        steps.push(rec);
        series.push(t1, disc.to_cells(&phi, 0.0));
    }
    energy.fin = kinetic(&phi);
    energy.residual =
        energy.fin - energy.initial + energy.decay + energy.dissipation + energy.transport - energy.source;
    let escale = [
        energy.fin,
        energy.initial,
        energy.decay,
        energy.dissipation,
        energy.transport.abs(),
        energy.source.abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    energy.relative_residual = if escale > 0.0 {
        energy.residual.abs() / escale
    } else {
        energy.residual.abs()
    };
    let worst_balance = steps.iter().map(|s| s.balance_residual).fold(0.0, f64::max);
    let max_abs = steps.iter().map(|s| s.max.abs().max(s.min.abs())).fold(0.0, f64::max);
    Ok(TransientRun {
        series,
        report: TransientRunReport {
            steps,
            energy,
            total_injected,
            max_abs,
            h1_time_sq,
            worst_balance,
            linear_tolerance: opts.linear.rel_tol,
        },
    })
}
