//! Command-line driver for the alveoli solvers.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver failure,
//! 4 a post-run check (mass balance, residual) failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use alveoli::cell::{solve_with_truncation_doubling, CellProblem, CellSetup, CellSolution, TruncationCheck};
use alveoli::field::{write_field, Series};
use alveoli::geometry::{StripDomain, StripMode};
use alveoli::scenario::Scenario;
use alveoli::study::{manifest, run_study, solve, write_study, Solver};
use alveoli::transient::TransientRun;
use alveoli::Error;

#[derive(Parser)]
#[command(
    name = "alveoli",
    version,
    about = "Transport through periodically perforated layered media"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the period ε of single runs (and replace the sweep).
    #[arg(long)]
    eps: Option<f64>,
    /// Worker threads (0: one per core).
    #[arg(long, default_value_t = 0)]
    parallel: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Microscopic problem on the perforated domain.
    SolveMicro(Common),
    /// Homogenized problem with the leak collapsed onto the mid-plane.
    SolveLimit(Common),
    /// Outer solution with flux jumps on the band planes.
    SolveOuter(Common),
    /// First corrector with value and flux jumps on the band planes.
    SolveCorrector(Common),
    /// Cell problems on a standalone strip.
    Cell {
        #[command(flatten)]
        common: Common,
        /// Problems to solve (`w`, `chi-2`, `chi-12`, `w-21`, `z-2`, ...);
        /// defaults to the scenario's list.
        problems: Vec<String>,
        /// Use the flat obstacle `M × {0}` instead of the scaled one.
        #[arg(long)]
        flat: bool,
    },
    /// Full ε-sweep: all solvers, expansion errors and rate fits.
    Study(Common),
    /// Load and validate a scenario and print it with all defaults.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

enum Failure {
    Config(String),
    Solver(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Solver(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Solver(format!("output: {e}"))
    }
}

type Outcome = std::result::Result<(), Failure>;

fn load(common: &Common) -> std::result::Result<Scenario, Failure> {
    let mut s = Scenario::load(&common.config)?;
    if let Some(eps) = common.eps {
        s = s.with_eps(eps)?;
        s.run.sweep = vec![eps];
    }
    if common.parallel > 0 {
        // Only the first call configures the global pool; later calls in
        // the same process keep it.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(common.parallel)
            .build_global();
    }
    Ok(s)
}

fn write_json(path: &Path, value: &impl Serialize) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json") + "\n";
    std::fs::write(path, text)
}

fn write_fields(out: &Path, scenario: &Scenario, series: &Series) -> std::io::Result<()> {
    if !scenario.outputs.fields || series.is_empty() {
        return Ok(());
    }
    let every = scenario.outputs.snapshot_every;
    let last = series.len() - 1;
    for k in 0..=last {
        if k == last || (every > 0 && k % every == 0) {
            write_field(&out.join(format!("field_{k:05}.txt")), &series.field(k)).map_err(std::io::Error::other)?;
        }
    }
    Ok(())
}

/// Writes the step table, summary, manifest and fields of a transient run
/// and checks its mass balance.
fn finish_run(common: &Common, scenario: &Scenario, command: &str, run: &TransientRun) -> Outcome {
    let out = &common.out;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("steps.csv"), run.report.csv())?;
    let r = &run.report;
    write_json(
        &out.join("summary.json"),
        &serde_json::json!({
            "eps": scenario.geometry.eps,
            "cells": run.series.grid.len(),
            "steps": r.steps.len() - 1,
            "max_abs": r.max_abs,
            "energy_norm": r.h1_time_sq.sqrt(),
            "total_injected": r.total_injected,
            "worst_balance": r.worst_balance,
            "energy": r.energy,
        }),
    )?;
    write_json(&out.join("manifest.json"), &manifest(scenario, command, None))?;
    std::fs::write(out.join("scenario.toml"), scenario.echo())?;
    write_fields(out, scenario, &run.series)?;
    let tol = scenario.run.tolerances.mass_balance;
    if r.worst_balance > tol {
        return Err(Failure::Check(format!(
            "mass balance residual {:.3e} exceeds {tol:.1e}",
            r.worst_balance
        )));
    }
    println!("{command}: {} steps, max |phi| = {:.6e}", r.steps.len() - 1, r.max_abs);
    Ok(())
}

fn solve_one(common: &Common, solver: Solver) -> Outcome {
    let s = load(common)?;
    let run = solve(&s, solver)?;
    finish_run(common, &s, solver.name(), &run)
}

#[derive(Serialize)]
struct CellRow<'a> {
    #[serde(flatten)]
    solution: &'a CellSolution,
    label: String,
    checks: &'a [TruncationCheck],
}

fn cell(common: &Common, names: &[String], flat: bool) -> Outcome {
    let s = load(common)?;
    let n = s.geometry.n;
    let names = if names.is_empty() {
        s.cells.problems.clone()
    } else {
        names.to_vec()
    };
    let problems: Vec<CellProblem> = names
        .iter()
        .map(|p| CellProblem::parse(p, n).map_err(|e| Failure::Config(e.to_string())))
        .collect::<std::result::Result<_, _>>()?;
    let mode = if flat { StripMode::Flat } else { StripMode::Scaled };
    let g = &s.geometry;
    let strip = StripDomain::new(mode, g.m.clone(), g.eps, g.beta, s.cells.truncation)?;
    let setup = CellSetup::standalone(strip, &s.cells.resolution, s.coefficients()?.a)?;
    let half_measure = 0.5 * setup.boundary_measure();
    let out = &common.out;
    std::fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "problem",
        "truncation",
        "c_plus",
        "c_minus",
        "far_flux_top",
        "far_flux_bottom",
        "expected_flux_top",
        "expected_flux_bottom",
        "decay_rate",
        "non_decaying",
        "residual",
        "iterations",
    ])
    .map_err(|e| Failure::Solver(e.to_string()))?;
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for p in &problems {
        let (sol, checks) = solve_with_truncation_doubling(&setup, *p, s.cells.truncation_max, 1e-8)?;
        let (top, bottom) = if *p == CellProblem::W {
            (format!("{:.12e}", -half_measure), format!("{:.12e}", half_measure))
        } else {
            (String::new(), String::new())
        };
        let rate = sol
            .decay
            .as_ref()
            .map(|f| format!("{:.12e}", f.rate))
            .unwrap_or_default();
        w.write_record([
            p.label(),
            format!("{:.12e}", sol.truncation),
            format!("{:.12e}", sol.c_plus),
            format!("{:.12e}", sol.c_minus),
            format!("{:.12e}", sol.far_flux_top),
            format!("{:.12e}", sol.far_flux_bottom),
            top,
            bottom,
            rate,
            sol.non_decaying.to_string(),
            format!("{:.6e}", sol.residual),
            sol.iterations.to_string(),
        ])
        .map_err(|e| Failure::Solver(e.to_string()))?;
        worst = worst.max(sol.residual);
        rows.push((sol, checks));
    }
    let bytes = w.into_inner().map_err(|e| Failure::Solver(e.to_string()))?;
    std::fs::write(out.join("cells.csv"), bytes)?;
    let detail: Vec<CellRow> = rows
        .iter()
        .map(|(sol, checks)| CellRow {
            solution: sol,
            label: sol.problem.label(),
            checks,
        })
        .collect();
    write_json(&out.join("cells.json"), &detail)?;
    write_json(&out.join("manifest.json"), &manifest(&s, "cell", None))?;
    if worst > 1e-8 {
        return Err(Failure::Check(format!("cell residual {worst:.3e} exceeds 1e-8")));
    }
    println!("cell: {} problem(s) solved", problems.len());
    Ok(())
}

fn study(common: &Common) -> Outcome {
    let s = load(common)?;
    let report = run_study(&s, common.parallel)?;
    write_study(&common.out, &s, &report)?;
    let tol = s.run.tolerances.mass_balance;
    if let Some(p) = report.points.iter().find(|p| p.worst_balance > tol) {
        return Err(Failure::Check(format!(
            "mass balance residual {:.3e} at eps = {} exceeds {tol:.1e}",
            p.worst_balance, p.eps
        )));
    }
    println!(
        "study: {} point(s) written to {}",
        report.points.len(),
        common.out.display()
    );
    Ok(())
}

fn validate(config: &Path) -> Outcome {
    let s = Scenario::load(config)?;
    print!("{}", s.echo());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::SolveMicro(c) => solve_one(c, Solver::Micro),
        Command::SolveLimit(c) => solve_one(c, Solver::Limit),
        Command::SolveOuter(c) => solve_one(c, Solver::Outer),
        Command::SolveCorrector(c) => solve_one(c, Solver::Corrector),
        Command::Cell { common, problems, flat } => cell(common, problems, *flat),
        Command::Study(c) => study(c),
        Command::ValidateConfig { config } => validate(config),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Check(m)) => {
            eprintln!("check failed: {m}");
            ExitCode::from(4)
        }
    }
}
