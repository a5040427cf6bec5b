//! The ε-sweep driver: for each period it solves the microscopic reference,
//! the interface limit, the outer solution, the first corrector and the cell
//! problems, assembles the expansions, measures their errors and fits the
//! convergence rates.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cell::{CellFamily, CellSetup};
use crate::error::{Error, Result};
use crate::expansion::{error_norms, fit_rate, ErrorNorms, ExpansionBundle, ExpansionErrors, RateFit};
use crate::geometry::decompose_regions;
use crate::limit::{solve_first_corrector, solve_limit, solve_two_interface};
use crate::micro::solve_microscopic;
use crate::scenario::Scenario;
use crate::transient::{TransientRun, TransientRunReport};

/// Results for one value of ε.
#[derive(Debug, Clone, Serialize)]
pub struct StudyPoint {
    pub eps: f64,
    pub cells: usize,
    pub steps: usize,
    pub band_half_width: f64,
    pub truncation: f64,
    /// `max |φ_ε|`.
    pub max_abs: f64,
    /// `‖φ_ε‖_{L²(0,T;H¹)}`.
    pub energy_norm: f64,
    pub worst_balance: f64,
    /// `φ_ε − φ` on the fluid cells.
    pub limit: ErrorNorms,
    pub expansion: ExpansionErrors,
    #[serde(skip)]
    pub micro_report: TransientRunReport,
}

/// One fitted rate.
#[derive(Debug, Clone, Serialize)]
pub struct FitRow {
    pub quantity: &'static str,
    pub norm: &'static str,
    pub fit: Option<RateFit>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub points: Vec<StudyPoint>,
    pub fits: Vec<FitRow>,
}

/// The transient solvers available for a single run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    /// Microscopic problem on the perforated domain.
    Micro,
    /// Homogenized problem with the leak on the mid-plane.
    Limit,
    /// Outer problem with flux jumps on the band planes.
    Outer,
    /// First corrector with value and flux jumps on the band planes.
    Corrector,
}

impl Solver {
    pub fn name(self) -> &'static str {
        match self {
            Solver::Micro => "solve-micro",
            Solver::Limit => "solve-limit",
            Solver::Outer => "solve-outer",
            Solver::Corrector => "solve-corrector",
        }
    }
}

/// Runs one solver on the scenario at its current ε.
pub fn solve(scenario: &Scenario, solver: Solver) -> Result<TransientRun> {
    let pg = scenario.perforated_grid()?;
    let coeffs = scenario.coefficients()?;
    let schedule = scenario.schedule()?;
    let opts = scenario.transient_options();
    let bc = scenario.boundary;
    let init = &scenario.initial;
    let lim = &scenario.limit;
    let band = || decompose_regions(&pg.domain, scenario.geometry.eps, scenario.geometry.d)?.snap(&pg.grid);
    match solver {
        Solver::Micro => solve_microscopic(&pg, &coeffs, bc, &schedule, init, &opts),
        Solver::Limit => solve_limit(&pg.grid, &pg.array, &coeffs, bc, &schedule, init, &opts, lim),
        Solver::Outer => solve_two_interface(&pg.grid, &pg.array, &band()?, &coeffs, bc, &schedule, init, &opts, lim),
        Solver::Corrector => solve_first_corrector(&pg.grid, &pg.array, &band()?, &coeffs, bc, &schedule, &opts, lim),
    }
}

/// Runs every solver at the scenario's current ε and compares.
pub fn run_point(scenario: &Scenario) -> Result<StudyPoint> {
    let eps = scenario.geometry.eps;
    let ctx = |e: Error| e.context(format!("study point eps = {eps}"));
    let pg = scenario.perforated_grid().map_err(ctx)?;
    let coeffs = scenario.coefficients()?;
    let schedule = scenario.schedule()?;
    let opts = scenario.transient_options();
    let bc = scenario.boundary;
    let band = decompose_regions(&pg.domain, eps, scenario.geometry.d)
        .and_then(|r| r.snap(&pg.grid))
        .map_err(ctx)?;
    let micro = solve_microscopic(&pg, &coeffs, bc, &schedule, &scenario.initial, &opts).map_err(ctx)?;
    let limit = solve_limit(
        &pg.grid,
        &pg.array,
        &coeffs,
        bc,
        &schedule,
        &scenario.initial,
        &opts,
        &scenario.limit,
    )
    .map_err(ctx)?;
    let outer = solve_two_interface(
        &pg.grid,
        &pg.array,
        &band,
        &coeffs,
        bc,
        &schedule,
        &scenario.initial,
        &opts,
        &scenario.limit,
    )
    .map_err(ctx)?;
    let corrector = solve_first_corrector(
        &pg.grid,
        &pg.array,
        &band,
        &coeffs,
        bc,
        &schedule,
        &opts,
        &scenario.limit,
    )
    .map_err(ctx)?;
    let truncation = scenario.expansion_truncation();
    let setup = CellSetup::from_micro(&pg, coeffs.a.clone(), truncation).map_err(ctx)?;
    let cells = CellFamily::solve(&setup).map_err(ctx)?;

    let mask = pg.fluid_mask();
    let times = micro.series.times.clone();
    let limit_err = error_norms(
        &pg.grid,
        &mask,
        &times,
        &micro.series,
        &|k| limit.series.values[k].clone(),
        &[],
    )
    .map_err(ctx)?;
    let bundle = ExpansionBundle::new(
        pg.clone(),
        band.clone(),
        scenario.geometry.d,
        outer.series,
        corrector.series,
        cells,
        schedule,
        &coeffs.velocity,
    )
    .map_err(ctx)?;
    let expansion = bundle.compare(&micro.series).map_err(ctx)?;
    let r = &micro.report;
    Ok(StudyPoint {
        eps,
        cells: pg.grid.len(),
        steps: times.len() - 1,
        band_half_width: scenario.band_half_width(),
        truncation: setup.truncation(),
        max_abs: r.max_abs,
        energy_norm: r.h1_time_sq.sqrt(),
        worst_balance: r.worst_balance,
        limit: limit_err,
        expansion,
        micro_report: micro.report,
    })
}

/// Size of the band term `ε w_ε Φ` against the outer solution in `G_ε`.
#[derive(Debug, Clone, Serialize)]
pub struct BandDominance {
    pub eps: f64,
    pub t_m: f64,
    pub times: Vec<f64>,
    pub w_term: Vec<f64>,
    pub outer_band: Vec<f64>,
    /// The band term exceeds the outer solution at every snapshot inside
    /// the pulse `]0, t_m]`.
    pub dominates_during_pulse: bool,
    /// The band term is below the outer solution at every snapshot from
    /// `5 t_m` on.
    pub recedes_after: bool,
}

/// Solves the outer problem and the cell problems at the scenario's ε and
/// compares the band term with the outer solution over time.
pub fn band_dominance(scenario: &Scenario) -> Result<BandDominance> {
    let eps = scenario.geometry.eps;
    let pg = scenario.perforated_grid()?;
    let coeffs = scenario.coefficients()?;
    let schedule = scenario.schedule()?;
    let opts = scenario.transient_options();
    let band = decompose_regions(&pg.domain, eps, scenario.geometry.d)?.snap(&pg.grid)?;
    let args = (&pg.grid, &pg.array, &band, &coeffs, scenario.boundary, &schedule);
    let outer = solve_two_interface(
        args.0,
        args.1,
        args.2,
        args.3,
        args.4,
        args.5,
        &scenario.initial,
        &opts,
        &scenario.limit,
    )?;
    let corrector = solve_first_corrector(args.0, args.1, args.2, args.3, args.4, args.5, &opts, &scenario.limit)?;
    let setup = CellSetup::from_micro(&pg, coeffs.a.clone(), scenario.expansion_truncation())?;
    let cells = CellFamily::solve(&setup)?;
    let t_m = schedule.t_m;
    let times = outer.series.times.clone();
    let bundle = ExpansionBundle::new(
        pg,
        band,
        scenario.geometry.d,
        outer.series,
        corrector.series,
        cells,
        schedule,
        &coeffs.velocity,
    )?;
    let (w_term, outer_band): (Vec<f64>, Vec<f64>) = bundle.band_terms().into_iter().unzip();
    let tol = 1e-12 * t_m;
    let during: Vec<usize> = (0..times.len())
        .filter(|&k| times[k] > 0.0 && times[k] <= t_m + tol)
        .collect();
    let after: Vec<usize> = (0..times.len()).filter(|&k| times[k] >= 5.0 * t_m - tol).collect();
    Ok(BandDominance {
        eps,
        t_m,
        dominates_during_pulse: !during.is_empty() && during.iter().all(|&k| w_term[k] > outer_band[k]),
        recedes_after: !after.is_empty() && after.iter().all(|&k| w_term[k] < outer_band[k]),
        times,
        w_term,
        outer_band,
    })
}

type Pick = fn(&StudyPoint) -> f64;

/// Quantities whose rates are fitted, with the norm they are measured in.
const FITTED: &[(&str, &str, Pick)] = &[
    ("limit", "l2_h1", |p| p.limit.l2_h1),
    ("limit", "linf_l2", |p| p.limit.linf_l2),
    ("outer", "l2_h1", |p| p.expansion.outer.l2_h1),
    ("outer", "linf_l2", |p| p.expansion.outer.linf_l2),
    ("h", "l2_h1", |p| p.expansion.h.l2_h1),
    ("h", "linf_l2", |p| p.expansion.h.linf_l2),
    ("f", "l2_h1", |p| p.expansion.f.l2_h1),
    ("f", "linf_l2", |p| p.expansion.f.linf_l2),
];

/// Runs the sweep on `threads` workers (0: rayon's default). Points are
/// independent and returned in sweep order.
pub fn run_study(scenario: &Scenario, threads: usize) -> Result<StudyReport> {
    let sweep = scenario.sweep();
    let scenarios: Vec<Scenario> = sweep.iter().map(|&e| scenario.with_eps(e)).collect::<Result<_>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Invalid(format!("cannot start worker pool: {e}")))?;
    let points: Vec<StudyPoint> = pool.install(|| scenarios.par_iter().map(run_point).collect::<Result<_>>())?;
    let eps: Vec<f64> = points.iter().map(|p| p.eps).collect();
    let fits = FITTED
        .iter()
        .map(|&(quantity, norm, pick)| {
            let errs: Vec<f64> = points.iter().map(pick).collect();
            FitRow {
                quantity,
                norm,
                fit: fit_rate(&eps, &errs).ok(),
            }
        })
        .collect();
    Ok(StudyReport { points, fits })
}

fn num(x: f64) -> String {
    format!("{x:.12e}")
}

impl StudyReport {
    pub fn fit(&self, quantity: &str, norm: &str) -> Option<RateFit> {
        self.fits
            .iter()
            .find(|f| f.quantity == quantity && f.norm == norm)
            .and_then(|f| f.fit)
    }

    /// Per-ε error table.
    pub fn rates_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["eps".to_string(), "eps_log".into(), "cells".into(), "steps".into()];
        header.extend(FITTED.iter().map(|(q, n, _)| format!("{q}_{n}")));
        header.extend(
            [
                "interface_mismatch",
                "mismatch_scale",
                "max_abs",
                "energy_norm",
                "worst_balance",
            ]
            .map(String::from),
        );
        w.write_record(&header).map_err(csv_err)?;
        for p in &self.points {
            let mut row = vec![
                num(p.eps),
                num(crate::expansion::band_scale(p.eps)),
                p.cells.to_string(),
                p.steps.to_string(),
            ];
            row.extend(FITTED.iter().map(|(_, _, pick)| num(pick(p))));
            row.extend(
                [
                    p.expansion.interface_mismatch,
                    p.expansion.mismatch_scale,
                    p.max_abs,
                    p.energy_norm,
                    p.worst_balance,
                ]
                .map(num),
            );
            w.write_record(&row).map_err(csv_err)?;
        }
        finish(w)
    }

    /// Fitted exponents against `ε log(1/ε)`.
    pub fn fits_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["quantity", "norm", "exponent", "r2", "points", "not_decreasing"])
            .map_err(csv_err)?;
        for f in &self.fits {
            let row = match f.fit {
                Some(fit) => vec![
                    f.quantity.to_string(),
                    f.norm.to_string(),
                    num(fit.exponent),
                    num(fit.r2),
                    fit.points.to_string(),
                    fit.not_decreasing.to_string(),
                ],
                None => vec![
                    f.quantity.into(),
                    f.norm.into(),
                    "".into(),
                    "".into(),
                    "0".into(),
                    "".into(),
                ],
            };
            w.write_record(&row).map_err(csv_err)?;
        }
        finish(w)
    }

    /// Band-term and outer norms in `G_ε` per snapshot of the finest point.
    pub fn band_terms_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["eps", "snapshot", "w_term", "outer_band"])
            .map_err(csv_err)?;
        for p in &self.points {
            for (k, (a, b)) in p.expansion.w_term.iter().zip(&p.expansion.outer_band).enumerate() {
                w.write_record([num(p.eps), k.to_string(), num(*a), num(*b)])
                    .map_err(csv_err)?;
            }
        }
        finish(w)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Invalid(format!("csv: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Hex SHA-256 of the canonical scenario echo.
pub fn config_hash(scenario: &Scenario) -> String {
    let digest = Sha256::digest(scenario.echo().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Provenance manifest: configuration hash, tolerances and grid sizes. It
/// carries no timestamps, so repeated runs produce identical bytes.
pub fn manifest(scenario: &Scenario, command: &str, report: Option<&StudyReport>) -> serde_json::Value {
    let tol = &scenario.run.tolerances;
    serde_json::json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config_sha256": config_hash(scenario),
        "tolerances": {
            "linear": tol.linear,
            "mass_balance": tol.mass_balance,
            "pd": tol.pd,
            "max_iterations": tol.max_iterations,
            "cross_iterations": tol.cross_iterations,
        },
        "seeds": [],
        "points": report.map(|r| r.points.iter().map(|p| serde_json::json!({
            "eps": p.eps,
            "cells": p.cells,
            "steps": p.steps,
            "band_half_width": p.band_half_width,
            "cell_truncation": p.truncation,
            "interpolation_error": p.expansion.interpolation_error,
        })).collect::<Vec<_>>()),
    })
}

/// Writes `rates.csv`, `fits.csv`, `band_terms.csv`, `manifest.json` and
/// the scenario echo into `out`.
pub fn write_study(out: &Path, scenario: &Scenario, report: &StudyReport) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("rates.csv"), report.rates_csv()?)?;
    std::fs::write(out.join("fits.csv"), report.fits_csv()?)?;
    std::fs::write(out.join("band_terms.csv"), report.band_terms_csv()?)?;
    std::fs::write(out.join("scenario.toml"), scenario.echo())?;
    let m = manifest(scenario, "study", Some(report));
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&m).expect("json") + "\n",
    )?;
    Ok(())
}
