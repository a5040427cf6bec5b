//! Boundary-layer cell problems on truncated periodic strips.
//!
//! Every problem is a steady diffusion problem `−div(A(y_n)∇u) = f` on the
//! strip `]−½,½[^{n−1} × ]−Y,Y[` minus the obstacle, periodic in `y'`, with
//! Neumann data `n·A∇u = g` on the obstacle (`n` pointing into the obstacle)
//! and homogeneous Neumann conditions at `y_n = ±Y`.
//!
//! Problems whose solutions grow at infinity (`w` linearly, `zⁿ`
//! quadratically) are split into a known profile and a remainder. The
//! profile enters through the discrete operator applied to it, with its
//! exact flux through the strip ends, so the remainder problem is compatible
//! to rounding. Volumetric right-hand sides are integrated cell by cell as
//! face sums (divergence theorem). The additive constant is fixed by making
//! the mean over the far-field slabs `{Y−1 < |y_n| < Y}` vanish.

use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::{LayeredTensor, LayeredVelocity, Tensor};
use crate::error::{Error, Result};
use crate::fv::{BoundarySpec, Discretization, FaceOverride, FvSetup, INACTIVE};
use crate::geometry::{
    build_strip_grid, strip_grid_from_micro, PerforatedGrid, StripDomain, StripMode, StripResolution,
};
use crate::grid::TensorGrid;
use crate::linalg::{LinearSystem, SolverOptions};

/// Which auxiliary problem (axes are 0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum CellProblem {
    ChiK(usize),
    W,
    ChiLm(usize, usize),
    WIj(usize, usize),
    ZK(usize),
}

impl CellProblem {
    /// Name with 1-based indices, e.g. `chi-2`, `w`, `chi-12`.
    pub fn label(&self) -> String {
        match *self {
            CellProblem::ChiK(k) => format!("chi-{}", k + 1),
            CellProblem::W => "w".into(),
            CellProblem::ChiLm(l, m) => format!("chi-{}{}", l + 1, m + 1),
            CellProblem::WIj(i, j) => format!("w-{}{}", i + 1, j + 1),
            CellProblem::ZK(k) => format!("z-{}", k + 1),
        }
    }

    /// Parses a label such as `chi-2` (1-based, as printed by [`label`](Self::label)).
    pub fn parse(s: &str, n: usize) -> Result<Self> {
        let bad = || {
            Error::Invalid(format!(
                "unknown cell problem `{s}` (expected chi-k, w, chi-lm, w-ij or z-k)"
            ))
        };
        let axis = |c: char| -> Result<usize> {
            let k = c.to_digit(10).ok_or_else(bad)? as usize;
            if k == 0 || k > n {
                return Err(Error::Invalid(format!("axis {k} out of range 1..={n} in `{s}`")));
            }
            Ok(k - 1)
        };
        if s == "w" {
            return Ok(CellProblem::W);
        }
        let (head, idx) = s.split_once('-').ok_or_else(bad)?;
        let d: Vec<char> = idx.chars().collect();
        match (head, d.len()) {
            ("chi", 1) => Ok(CellProblem::ChiK(axis(d[0])?)),
            ("chi", 2) => Ok(CellProblem::ChiLm(axis(d[0])?, axis(d[1])?)),
            ("w", 2) => Ok(CellProblem::WIj(axis(d[0])?, axis(d[1])?)),
            ("z", 1) => Ok(CellProblem::ZK(axis(d[0])?)),
            _ => Err(bad()),
        }
    }
}

/// Quintic `ζ`: 0 for `|y| ≤ ½`, 1 for `|y| ≥ 1`, C² in between.
pub fn cutoff(y: f64) -> f64 {
    let s = ((y.abs() - 0.5) / 0.5).clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// Known non-decaying part of a cell solution, a function of `y_n` only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum GrowthProfile {
    None,
    /// `π(y_n) = −ζ(y_n) · slope · |y_n|`.
    Linear {
        slope: f64,
    },
    /// `q(y_n) = ζ(y_n) · coef · |y_n| y_n`.
    Quadratic {
        coef: f64,
    },
}

impl GrowthProfile {
    /// `π` for `w`: slope `½|∂P|/A²_nn`.
    pub fn for_w(boundary_measure: f64, a2_nn: f64) -> Self {
        GrowthProfile::Linear {
            slope: 0.5 * boundary_measure / a2_nn,
        }
    }

    /// Quadratic analogue for `zⁿ`: coefficient `−¼|∂P|(A²_nn)⁻²`.
    pub fn for_zn(boundary_measure: f64, a2_nn: f64) -> Self {
        GrowthProfile::Quadratic {
            coef: -0.25 * boundary_measure / (a2_nn * a2_nn),
        }
    }

    pub fn value(&self, y: f64) -> f64 {
        match *self {
            GrowthProfile::None => 0.0,
            GrowthProfile::Linear { slope } => -cutoff(y) * slope * y.abs(),
            GrowthProfile::Quadratic { coef } => cutoff(y) * coef * y.abs() * y,
        }
    }

    /// Derivative where `ζ ≡ 1` (`|y| ≥ 1`).
    pub fn far_derivative(&self, y: f64) -> f64 {
        match *self {
            GrowthProfile::None => 0.0,
            GrowthProfile::Linear { slope } => -slope * y.signum(),
            GrowthProfile::Quadratic { coef } => 2.0 * coef * y.abs(),
        }
    }
}

/// A strip with its grid and the layered tensor `A(y_n)`.
#[derive(Debug, Clone)]
pub struct CellSetup {
    pub strip: StripDomain,
    pub grid: TensorGrid,
    pub a: LayeredTensor,
    pub solver: SolverOptions,
}

fn cell_solver() -> SolverOptions {
    SolverOptions {
        rel_tol: 1e-12,
        max_iter: 20_000,
    }
}

impl CellSetup {
    /// Strip grid built for the strip alone.
    pub fn standalone(strip: StripDomain, res: &StripResolution, a: LayeredTensor) -> Result<Self> {
        let grid = build_strip_grid(&strip, res, Some(a.h))?;
        Self::on_grid(strip, grid, a)
    }

    /// Uses a given grid; it must reach `±Y` and carry a face at `y_n = 0`
    /// for the flat obstacle.
    pub fn on_grid(strip: StripDomain, grid: TensorGrid, a: LayeredTensor) -> Result<Self> {
        let s = Self {
            strip,
            grid,
            a,
            solver: cell_solver(),
        };
        if s.strip.mode == StripMode::Flat && s.zero_face().is_none() {
            return Err(Error::Geometry("flat obstacle needs a grid face at y_n = 0".into()));
        }
        Ok(s)
    }

    /// Strip made of the micro grid cells of one period, so samples at
    /// `x/ε` fall on strip cell centres.
    pub fn from_micro(pg: &PerforatedGrid, a: LayeredTensor, truncation: f64) -> Result<Self> {
        let grid = strip_grid_from_micro(pg, truncation)?;
        let v = grid.vertical_axis();
        let (lo, hi) = grid.extent(v);
        let strip = StripDomain::new(
            StripMode::Scaled,
            pg.array.m.clone(),
            pg.array.eps,
            pg.array.beta,
            hi.min(-lo),
        )?;
        Self::on_grid(strip, grid, a)
    }

    /// Same strip with the grid extended by uniform rows up to `±truncation`;
    /// the cells inside the old truncation are unchanged.
    pub fn extended(&self, truncation: f64) -> Result<Self> {
        let v = self.grid.vertical_axis();
        let f = self.grid.faces(v);
        let nf = f.len();
        let h = f[nf - 1] - f[nf - 2];
        let y0 = f[nf - 1];
        let steps = ((truncation - y0) / h - 1e-9).ceil().max(0.0) as usize;
        let top: Vec<f64> = (1..=steps)
            .map(|k| if k == steps { truncation } else { y0 + k as f64 * h })
            .collect();
        let mut faces: Vec<f64> = top.iter().rev().map(|y| -y).collect();
        faces.extend_from_slice(f);
        faces.extend(top);
        let mut all: Vec<Vec<f64>> = (0..v).map(|a| self.grid.faces(a).to_vec()).collect();
        all.push(faces);
        let periodic = (0..=v).map(|a| self.grid.is_periodic(a)).collect();
        Ok(Self {
            strip: self.strip.with_truncation(truncation),
            grid: TensorGrid::new(all, periodic)?,
            a: self.a.clone(),
            solver: self.solver,
        })
    }

    pub fn truncation(&self) -> f64 {
        let (lo, hi) = self.grid.extent(self.grid.vertical_axis());
        hi.min(-lo)
    }

    /// `|∂P_ε|` of the scaled obstacle, `2|M|` for the flat one.
    pub fn boundary_measure(&self) -> f64 {
        self.strip.obstacle_boundary_measure()
    }

    pub fn a2_nn(&self) -> f64 {
        self.a.outer_nn()
    }

    fn tensor(&self, cell: usize) -> &Tensor {
        self.a.at_fast(self.grid.cell_center(cell)[self.grid.vertical_axis()])
    }

    fn active(&self) -> Vec<bool> {
        let g = &self.grid;
        let n = g.ndim();
        let t = self.strip.obstacle_half_height();
        (0..g.len())
            .map(|c| {
                let y = g.cell_center(c);
                !(self.strip.mode == StripMode::Scaled && self.strip.in_footprint(&y[..n - 1]) && y[n - 1].abs() < t)
            })
            .collect()
    }

    fn zero_face(&self) -> Option<usize> {
        let (k, d) = self.grid.nearest_face(self.grid.vertical_axis(), 0.0);
        (d < 1e-12).then_some(k)
    }

    /// Whether the face between `lo` and its upper neighbour along `axis`
    /// lies on the flat obstacle.
    fn is_flat_cut(&self, lo: usize, axis: usize) -> bool {
        let g = &self.grid;
        let v = g.vertical_axis();
        if self.strip.mode != StripMode::Flat || axis != v {
            return false;
        }
        let Some(k) = self.zero_face() else { return false };
        g.multi_index(lo)[v] + 1 == k && self.strip.in_footprint(&g.cell_center(lo)[..g.ndim() - 1])
    }

    /// Discretization with obstacle data `g(tensor, axis, side)`, where
    /// `side` points from the fluid cell into the obstacle.
    fn discretize(&self, data: &dyn Fn(&Tensor, usize, i32) -> f64) -> Result<Discretization> {
        let g = &self.grid;
        let n = g.ndim();
        let active = self.active();
        let zero = LayeredVelocity::zero(n);
        let vel = zero.scaled(None);
        let cut = |lo: usize, hi: usize, axis: usize, area: f64| -> FaceOverride {
            if !self.is_flat_cut(lo, axis) {
                return FaceOverride::Keep;
            }
            FaceOverride::Cut {
                lo: BoundarySpec::injection(data(self.tensor(lo), axis, 1) * area, 0),
                hi: BoundarySpec::injection(data(self.tensor(hi), axis, -1) * area, 0),
            }
        };
        Discretization::build(FvSetup {
            grid: g,
            active: &active,
            tensor: &|c| *self.tensor(c),
            capacity: &|_| 1.0,
            velocity: &vel,
            outer: &|_, _| BoundarySpec::zero_flux(),
            wall: &|cell, axis, side, area| BoundarySpec::injection(data(self.tensor(cell), axis, side) * area, 0),
            cut: Some(&cut),
            planes: Vec::new(),
        })
    }

    /// `Σ_faces n_a · area · u_face · coef(cell, axis, neighbour)` per dof:
    /// the cell integral of a divergence-form source built from a previous
    /// solution `u`. Face values are interpolated between active cells,
    /// one-sided on the obstacle, and use the exact profile at the ends.
    fn face_sum(
        &self,
        disc: &Discretization,
        u: &CellSolution,
        coef: &dyn Fn(usize, usize, Option<usize>) -> f64,
    ) -> Vec<f64> {
        let g = &self.grid;
        let v = g.vertical_axis();
        let mut out = vec![0.0; disc.len()];
        for (dof, &cell) in disc.cell_of_dof.iter().enumerate() {
            let idx = g.multi_index(cell);
            for axis in 0..g.ndim() {
                let area = g.face_area(cell, axis);
                for side in [-1i32, 1] {
                    let (face_val, other) = match g.neighbor(cell, axis, side) {
                        Some(nb) if disc.dof_of_cell[nb] != INACTIVE => {
                            let lo = if side > 0 { cell } else { nb };
                            if self.is_flat_cut(lo, axis) {
                                (u.values[cell], None)
                            } else {
                                let w0 = g.width(axis, idx[axis]);
                                let w1 = g.width(axis, g.multi_index(nb)[axis]);
                                ((u.values[cell] * w1 + u.values[nb] * w0) / (w0 + w1), Some(nb))
                            }
                        }
                        Some(_) => (u.values[cell], None),
                        None => {
                            let yc = g.center(v, idx[v]);
                            let yf = yc + side as f64 * 0.5 * g.width(v, idx[v]);
                            (u.values[cell] + u.profile.value(yf) - u.profile.value(yc), None)
                        }
                    };
                    let c = coef(cell, axis, other);
                    if c != 0.0 {
                        out[dof] += side as f64 * area * face_val * c;
                    }
                }
            }
        }
        out
    }
}

/// Exponential fit of a tail norm `N(s) ≈ C e^{−τ s}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub rate: f64,
    pub constant: f64,
    pub r2: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DecayFailure {
    /// The decaying part is identically zero.
    Trivial,
    TooFewPoints,
    /// Tail not monotone or fitted rate not positive (truncation pollution
    /// or a non-decaying field).
    NotDecaying,
}

impl std::fmt::Display for DecayFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DecayFailure::Trivial => "trivial",
            DecayFailure::TooFewPoints => "too-few-points",
            DecayFailure::NotDecaying => "not-decaying",
        })
    }
}

/// Ordinary least squares `y = a x + b`; returns `(a, b, R²)`.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let a = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let b = my - a * mx;
    let r2 = if syy > 0.0 && sxx > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    (a, b, r2)
}

/// Least-squares fit of `ln N(s)` against `s`. Samples below a relative
/// noise floor of `1e-10 · max N` are discarded.
pub fn fit_exponential(samples: &[(f64, f64)]) -> std::result::Result<DecayFit, DecayFailure> {
    let top = samples.iter().map(|s| s.1).fold(0.0, f64::max);
    if top == 0.0 {
        return Err(DecayFailure::Trivial);
    }
    let floor = 1e-10 * top;
    let kept: Vec<(f64, f64)> = samples.iter().copied().filter(|s| s.1 > floor).collect();
    if kept.windows(2).any(|w| w[1].1 > w[0].1 * (1.0 + 1e-6)) {
        return Err(DecayFailure::NotDecaying);
    }
    if kept.len() < 3 {
        return Err(DecayFailure::TooFewPoints);
    }
    let logs: Vec<(f64, f64)> = kept.iter().map(|&(s, v)| (s, v.ln())).collect();
    let (slope, icpt, r2) = linear_fit(&logs);
    if slope >= 0.0 {
        return Err(DecayFailure::NotDecaying);
    }
    Ok(DecayFit {
        rate: -slope,
        constant: icpt.exp(),
        r2,
        points: kept.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSolution {
    pub problem: CellProblem,
    #[serde(skip)]
    pub strip: StripDomain,
    pub mode: StripMode,
    pub truncation: f64,
    #[serde(skip)]
    pub grid: TensorGrid,
    #[serde(skip)]
    pub mask: Vec<bool>,
    /// Full solution per grid cell; inactive cells hold 0.
    #[serde(skip)]
    pub values: Vec<f64>,
    /// Decaying remainder per grid cell (`values − profile`).
    #[serde(skip)]
    pub remainder: Vec<f64>,
    pub profile: GrowthProfile,
    /// Far-field means of the remainder above and below the obstacle.
    pub c_plus: f64,
    pub c_minus: f64,
    /// Total normal flux `A∇u·e_n` through the cross-section nearest
    /// `y_n = +(Y−1)` and `−(Y−1)`.
    pub far_flux_top: f64,
    pub far_flux_bottom: f64,
    /// Net source (obstacle data plus volumetric term minus the profile's
    /// end fluxes) before the compatibility correction.
    pub imbalance: f64,
    /// The source was incompatible with a decaying solution; the imbalance
    /// was sent out symmetrically through the strip ends.
    pub non_decaying: bool,
    /// `max |L_h u − f| / max |f|` on the full (unpinned) system.
    pub residual: f64,
    pub iterations: usize,
    #[serde(serialize_with = "ser_decay")]
    pub decay: std::result::Result<DecayFit, DecayFailure>,
}

fn ser_decay<S: serde::Serializer>(
    d: &std::result::Result<DecayFit, DecayFailure>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    match d {
        Ok(fit) => fit.serialize(s),
        Err(e) => s.serialize_str(&e.to_string()),
    }
}

impl CellSolution {
    fn side_constant(&self, y_n: f64) -> f64 {
        if y_n >= 0.0 {
            self.c_plus
        } else {
            self.c_minus
        }
    }

    /// `u(y)`; lateral coordinates are reduced periodically and beyond the
    /// truncation the far-field constant plus profile is returned. Points in
    /// the obstacle return 0.
    pub fn sample(&self, y: &[f64]) -> f64 {
        let g = &self.grid;
        let n = g.ndim();
        let yn = y[n - 1];
        if yn.abs() >= self.truncation {
            return self.side_constant(yn) + self.profile.value(yn);
        }
        let mut idx = [0usize; 3];
        for a in 0..n - 1 {
            let r = y[a] - y[a].round();
            idx[a] = g.locate(a, if r >= 0.5 { r - 1.0 } else { r });
        }
        idx[n - 1] = g.locate(n - 1, yn);
        self.values[g.index(&idx[..n])]
    }

    /// Tail norm `|u − c±|_{H¹(|y_n| > s)}` of the remainder.
    pub fn tail_norm(&self, s: f64) -> f64 {
        let g = &self.grid;
        let v = g.vertical_axis();
        let mut sum = 0.0;
        for c in 0..g.len() {
            if !self.mask[c] {
                continue;
            }
            let yc = g.cell_center(c)[v];
            if yc.abs() <= s {
                continue;
            }
            let r = self.remainder[c] - self.side_constant(yc);
            sum += g.volume(c) * r * r;
            let idx = g.multi_index(c);
            for axis in 0..g.ndim() {
                let Some(nb) = g.neighbor(c, axis, 1) else { continue };
                if !self.mask[nb] || g.cell_center(nb)[v].abs() <= s {
                    continue;
                }
                let dist = 0.5 * (g.width(axis, idx[axis]) + g.width(axis, g.multi_index(nb)[axis]));
                let d = self.remainder[nb] - self.remainder[c];
                sum += g.face_area(c, axis) * d * d / dist;
            }
        }
        sum.sqrt()
    }

    /// Fits the decay of the tail norm over face heights in `[s0, s1]`.
    pub fn fit_decay(&self, s0: f64, s1: f64) -> std::result::Result<DecayFit, DecayFailure> {
        let g = &self.grid;
        let samples: Vec<(f64, f64)> = g
            .faces(g.vertical_axis())
            .iter()
            .copied()
            .filter(|&y| y >= s0 - 1e-12 && y <= s1 + 1e-12)
            .map(|s| (s, self.tail_norm(s)))
            .collect();
        fit_exponential(&samples)
    }

    /// `‖∇u‖_{L²}` over the strip.
    pub fn gradient_norm(&self) -> f64 {
        gradient_distance(self, None)
    }

    /// Largest `|u(y) − u(−y)|` (or `|u(y) + u(−y)|` with `odd`) over active
    /// cells. Requires a mirror-symmetric grid.
    pub fn parity_defect(&self, odd: bool) -> f64 {
        let g = &self.grid;
        let n = g.ndim();
        let mut worst = 0.0f64;
        for c in 0..g.len() {
            if !self.mask[c] {
                continue;
            }
            let y = g.cell_center(c);
            let neg: Vec<f64> = (0..n).map(|a| -y[a]).collect();
            let other = self.sample(&neg);
            let d = if odd {
                self.values[c] + other
            } else {
                self.values[c] - other
            };
            worst = worst.max(d.abs());
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn on_flat_obstacle(sol: &CellSolution, lo: usize, hi: usize) -> bool {
    if sol.mode != StripMode::Flat {
        return false;
    }
    let g = &sol.grid;
    let v = g.vertical_axis();
    let (k, d) = g.nearest_face(v, 0.0);
    d < 1e-12
        && g.multi_index(lo)[v] + 1 == k
        && g.multi_index(hi)[v] == k
        && sol.strip.in_footprint(&g.cell_center(lo)[..g.ndim() - 1])
}

/// `‖∇(a − b)‖_{L²}` over faces whose cells are active in both solutions
/// (and not on a flat obstacle), or `‖∇a‖` when `b` is `None`. Both
/// solutions must live on the same grid.
pub fn gradient_distance(a: &CellSolution, b: Option<&CellSolution>) -> f64 {
    let g = &a.grid;
    let mut s = 0.0;
    for c in 0..g.len() {
        let idx = g.multi_index(c);
        for axis in 0..g.ndim() {
            let Some(nb) = g.neighbor(c, axis, 1) else { continue };
            let usable = |sol: &CellSolution| sol.mask[c] && sol.mask[nb] && !on_flat_obstacle(sol, c, nb);
            if !usable(a) || !b.is_none_or(usable) {
                continue;
            }
            let dist = 0.5 * (g.width(axis, idx[axis]) + g.width(axis, g.multi_index(nb)[axis]));
            let mut d = a.values[nb] - a.values[c];
            if let Some(bs) = b {
                d -= bs.values[nb] - bs.values[c];
            }
            s += g.face_area(c, axis) * d * d / dist;
        }
    }
    s.sqrt()
}

fn is_end_face(g: &TensorGrid, cell: usize, axis: usize, outward: i32) -> bool {
    axis == g.vertical_axis() && g.neighbor(cell, axis, outward).is_none()
}

/// Solves `L_h r = rhs` (pure Neumann) with the profile, the imbalance
/// correction, the normalization and diagnostics.
fn finish(
    setup: &CellSetup,
    disc: &Discretization,
    problem: CellProblem,
    profile: GrowthProfile,
    mut rhs: Vec<f64>,
) -> Result<CellSolution> {
    let g = &setup.grid;
    let v = g.vertical_axis();
    let n = disc.len();
    let yn = |dof: usize| g.cell_center(disc.cell_of_dof[dof])[v];

    // Size of the uncancelled parts: the linear tolerance is relative to it.
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut reference = norm(&rhs);
    // Subtract L_h(profile), including its exact flux through the ends.
    if profile != GrowthProfile::None {
        let p: Vec<f64> = (0..n).map(|d| profile.value(yn(d))).collect();
        let cross = disc.cross_fluxes(&p);
        let div = disc.divergence(&disc.fluxes(&p, 0.0, &cross));
        for d in 0..n {
            rhs[d] -= div[d];
        }
        for b in &disc.boundary {
            let cell = disc.cell_of_dof[b.dof];
            if is_end_face(g, cell, b.axis, b.outward) {
                let k = g.multi_index(cell)[v];
                let y_end = g.center(v, k) + b.outward as f64 * 0.5 * g.width(v, k);
                let a_nn = setup.tensor(cell).get(v, v);
                let outflow = -a_nn * profile.far_derivative(y_end) * b.outward as f64 * b.area;
                rhs[b.dof] -= outflow;
            }
        }
        reference = reference.max(norm(&div));
    }

    let scale = rhs.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let imbalance: f64 = rhs.iter().sum();
    let non_decaying = imbalance.abs() > 1e-9 * scale * (n as f64).sqrt();
    // Send any imbalance out through both ends, half each (end areas sum to 1).
    for b in &disc.boundary {
        if is_end_face(g, disc.cell_of_dof[b.dof], b.axis, b.outward) {
            rhs[b.dof] -= 0.5 * imbalance * b.area;
        }
    }

    let mut r = vec![0.0; n];
    let mut iterations = 0;
    if scale > 0.0 {
        let pin = n - 1;
        let system = LinearSystem::new(disc.assemble(0.0, Some(pin))?.without_column(pin)?)?;
        let bnorm = norm(&rhs);
        let opts = SolverOptions {
            rel_tol: setup.solver.rel_tol * (reference / bnorm).max(1.0),
            ..setup.solver
        };
        let sweeps = if disc.has_cross { 60 } else { 1 };
        let mut cross = vec![0.0; disc.interior.len()];
        for _ in 0..sweeps {
            let mut b = rhs.clone();
            disc.add_cross(&cross, &mut b);
            b[pin] = 0.0;
            let prev = r.clone();
            let stats = system.solve_symmetric(&b, &mut r, &opts)?;
            iterations += stats.iterations;
            cross = disc.cross_fluxes(&r);
            let change = r.iter().zip(&prev).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let size = r.iter().fold(0.0f64, |m, a| m.max(a.abs()));
            if !disc.has_cross || change <= 1e-12 * size {
                break;
            }
        }
    }

    // Residual of the full system, including cross terms.
    let cross = disc.cross_fluxes(&r);
    let div = disc.divergence(&disc.fluxes(&r, 0.0, &cross));
    let residual = if scale > 0.0 {
        (0..n).fold(0.0f64, |m, d| m.max((div[d] - rhs[d]).abs())) / scale
    } else {
        0.0
    };

    // Normalize: zero mean over both far-field slabs.
    let y_max = setup.truncation();
    let slab = |upper: bool| -> f64 {
        let (mut s, mut vol) = (0.0, 0.0);
        for d in 0..n {
            let y = yn(d);
            if y.abs() > y_max - 1.0 && (y > 0.0) == upper {
                s += disc.volume[d] * r[d];
                vol += disc.volume[d];
            }
        }
        s / vol
    };
    let (up, down) = (slab(true), slab(false));
    let shift = 0.5 * (up + down);
    for x in &mut r {
        *x -= shift;
    }
    let remainder = disc.to_cells(&r, 0.0);
    let mask = disc.active_mask();
    let values: Vec<f64> = (0..g.len())
        .map(|c| {
            if mask[c] {
                remainder[c] + profile.value(g.cell_center(c)[v])
            } else {
                0.0
            }
        })
        .collect();

    let mut sol = CellSolution {
        problem,
        strip: setup.strip.clone(),
        mode: setup.strip.mode,
        truncation: y_max,
        grid: g.clone(),
        mask,
        values,
        remainder,
        profile,
        c_plus: up - shift,
        c_minus: down - shift,
        far_flux_top: 0.0,
        far_flux_bottom: 0.0,
        imbalance,
        non_decaying,
        residual,
        iterations,
        decay: Err(DecayFailure::Trivial),
    };
    sol.far_flux_top = far_flux(setup, &sol, y_max - 1.0);
    sol.far_flux_bottom = far_flux(setup, &sol, -(y_max - 1.0));
    sol.decay = if non_decaying {
        Err(DecayFailure::NotDecaying)
    } else {
        sol.fit_decay(1.0, y_max - 1.0)
    };
    Ok(sol)
}

/// Total `A∇u·e_n` through the row of vertical faces nearest `y`.
fn far_flux(setup: &CellSetup, sol: &CellSolution, y: f64) -> f64 {
    let g = &setup.grid;
    let v = g.vertical_axis();
    let (k, _) = g.nearest_face(v, y);
    let mut total = 0.0;
    for c in 0..g.len() {
        let idx = g.multi_index(c);
        if idx[v] + 1 != k {
            continue;
        }
        let Some(nb) = g.neighbor(c, v, 1) else { continue };
        if !sol.mask[c] || !sol.mask[nb] {
            continue;
        }
        let (d0, d1) = (0.5 * g.width(v, idx[v]), 0.5 * g.width(v, idx[v] + 1));
        let (a0, a1) = (setup.tensor(c).get(v, v), setup.tensor(nb).get(v, v));
        let t = 1.0 / (d0 / a0 + d1 / a1);
        total += g.face_area(c, v) * t * (sol.values[nb] - sol.values[c]);
    }
    total
}

fn check_axis(setup: &CellSetup, k: usize) -> Result<()> {
    if k >= setup.grid.ndim() {
        return Err(Error::Invalid(format!(
            "axis {} out of range for n = {}",
            k + 1,
            setup.grid.ndim()
        )));
    }
    Ok(())
}

fn check_input(problem: CellProblem, needed: CellProblem, given: &CellSolution) -> Result<()> {
    if given.problem != needed {
        return Err(Error::Invalid(format!(
            "{} needs {} as input, got {}",
            problem.label(),
            needed.label(),
            given.problem.label()
        )));
    }
    Ok(())
}

/// `χᵏ`: `−div(A∇χ) = 0`, `n·A∇(χ + y_k) = 0` on the obstacle.
pub fn solve_chi_k(setup: &CellSetup, k: usize) -> Result<CellSolution> {
    check_axis(setup, k)?;
    let disc = setup.discretize(&|t: &Tensor, axis, side| -(side as f64) * t.get(axis, k))?;
    let rhs = disc.source_vector(1.0);
    finish(setup, &disc, CellProblem::ChiK(k), GrowthProfile::None, rhs)
}

/// `w = v + π`: unit Neumann data on the obstacle, linear far field
/// `A∇w → ∓½|∂P| e_n`.
pub fn solve_w(setup: &CellSetup) -> Result<CellSolution> {
    let disc = setup.discretize(&|_: &Tensor, _, _| 1.0)?;
    let rhs = disc.source_vector(1.0);
    let profile = GrowthProfile::for_w(setup.boundary_measure(), setup.a2_nn());
    finish(setup, &disc, CellProblem::W, profile, rhs)
}

fn homogeneous(setup: &CellSetup) -> Result<Discretization> {
    setup.discretize(&|_: &Tensor, _, _| 0.0)
}

/// `χ^{lm}`: source `A_{lk} ∂_kχ^m + ∂_k(A_{kl} χ^m)`, homogeneous Neumann data.
pub fn solve_chi_lm(setup: &CellSetup, l: usize, m: usize, chi_m: &CellSolution) -> Result<CellSolution> {
    check_axis(setup, l)?;
    let problem = CellProblem::ChiLm(l, m);
    check_input(problem, CellProblem::ChiK(m), chi_m)?;
    let disc = homogeneous(setup)?;
    let rhs = setup.face_sum(&disc, chi_m, &|cell, axis, nb| {
        let own = setup.tensor(cell);
        let face = match nb {
            Some(nb) => 0.5 * (own.get(axis, l) + setup.tensor(nb).get(axis, l)),
            None => own.get(axis, l),
        };
        own.get(l, axis) + face
    });
    finish(setup, &disc, problem, GrowthProfile::None, rhs)
}

/// `w^{ij}`: source `∂χ^j/∂y_i`, homogeneous Neumann data.
pub fn solve_w_ij(setup: &CellSetup, i: usize, j: usize, chi_j: &CellSolution) -> Result<CellSolution> {
    check_axis(setup, i)?;
    let problem = CellProblem::WIj(i, j);
    check_input(problem, CellProblem::ChiK(j), chi_j)?;
    let disc = homogeneous(setup)?;
    let rhs = setup.face_sum(&disc, chi_j, &|_, axis, _| if axis == i { 1.0 } else { 0.0 });
    finish(setup, &disc, problem, GrowthProfile::None, rhs)
}

/// `zᵏ`: source `−∂w/∂y_k`, homogeneous Neumann data; `zⁿ` carries the
/// quadratic profile `−¼|∂P|(A²_nn)⁻²|y_n|y_n`.
pub fn solve_z_k(setup: &CellSetup, k: usize, w: &CellSolution) -> Result<CellSolution> {
    check_axis(setup, k)?;
    let problem = CellProblem::ZK(k);
    check_input(problem, CellProblem::W, w)?;
    let disc = homogeneous(setup)?;
    let rhs = setup.face_sum(&disc, w, &|_, axis, _| if axis == k { -1.0 } else { 0.0 });
    let profile = if k == setup.grid.vertical_axis() {
        GrowthProfile::for_zn(setup.boundary_measure(), setup.a2_nn())
    } else {
        GrowthProfile::None
    };
    finish(setup, &disc, problem, profile, rhs)
}

/// Solves one problem, solving its inputs first.
pub fn solve_problem(setup: &CellSetup, problem: CellProblem) -> Result<CellSolution> {
    match problem {
        CellProblem::ChiK(k) => solve_chi_k(setup, k),
        CellProblem::W => solve_w(setup),
        CellProblem::ChiLm(l, m) => check_axis(setup, m)
            .and_then(|_| solve_chi_k(setup, m))
            .and_then(|chi| solve_chi_lm(setup, l, m, &chi)),
        CellProblem::WIj(i, j) => check_axis(setup, j)
            .and_then(|_| solve_chi_k(setup, j))
            .and_then(|chi| solve_w_ij(setup, i, j, &chi)),
        CellProblem::ZK(k) => solve_w(setup).and_then(|w| solve_z_k(setup, k, &w)),
    }
    .map_err(|e| e.context(format!("cell problem {}", problem.label())))
}

/// All cell solutions on one strip; indices are 0-based axes.
#[derive(Debug, Clone)]
pub struct CellFamily {
    pub chi: Vec<CellSolution>,
    pub w: CellSolution,
    /// `chi_lm[l][m]`.
    pub chi_lm: Vec<Vec<CellSolution>>,
    /// `w_ij[i][j]`.
    pub w_ij: Vec<Vec<CellSolution>>,
    pub z: Vec<CellSolution>,
}

impl CellFamily {
    /// Solves every problem; independent solves run in parallel and the
    /// result does not depend on the thread count.
    pub fn solve(setup: &CellSetup) -> Result<Self> {
        let n = setup.grid.ndim();
        let first: Vec<CellSolution> = (0..=n)
            .into_par_iter()
            .map(|k| if k < n { solve_chi_k(setup, k) } else { solve_w(setup) })
            .collect::<Result<_>>()?;
        let (chi, w) = (first[..n].to_vec(), first[n].clone());
        let second: Vec<CellSolution> = (0..2 * n * n + n)
            .into_par_iter()
            .map(|t| {
                if t < n * n {
                    solve_chi_lm(setup, t / n, t % n, &chi[t % n])
                } else if t < 2 * n * n {
                    let t = t - n * n;
                    solve_w_ij(setup, t / n, t % n, &chi[t % n])
                } else {
                    solve_z_k(setup, t - 2 * n * n, &w)
                }
            })
            .collect::<Result<_>>()?;
        let chi_lm = second[..n * n].chunks(n).map(<[_]>::to_vec).collect();
        let w_ij = second[n * n..2 * n * n].chunks(n).map(<[_]>::to_vec).collect();
        let z = second[2 * n * n..].to_vec();
        Ok(Self {
            chi,
            w,
            chi_lm,
            w_ij,
            z,
        })
    }

    pub fn all(&self) -> Vec<&CellSolution> {
        let mut out: Vec<&CellSolution> = self.chi.iter().collect();
        out.push(&self.w);
        out.extend(self.chi_lm.iter().flatten());
        out.extend(self.w_ij.iter().flatten());
        out.extend(self.z.iter());
        out
    }
}

/// Outcome of one truncation-doubling comparison.
#[derive(Debug, Clone, Serialize)]
pub struct TruncationCheck {
    pub truncation: f64,
    pub change_constants: f64,
    pub change_flux: f64,
    pub bound: f64,
    pub passes: bool,
}

/// Solves at `Y`, then at `2Y` on the same grid extended by uniform rows,
/// doubling until the stabilization constants and the far-field fluxes (at
/// `±(Y−1)`) change by less than `max(e^{−τ̂Y}, floor)` or `y_max` would be
/// exceeded. Returns the solution at the accepted truncation and the checks.
pub fn solve_with_truncation_doubling(
    setup: &CellSetup,
    problem: CellProblem,
    y_max: f64,
    floor: f64,
) -> Result<(CellSolution, Vec<TruncationCheck>)> {
    let mut current = setup.clone();
    let mut sol = solve_problem(&current, problem)?;
    let mut history = Vec::new();
    loop {
        let y = current.truncation();
        if 2.0 * y > y_max + 1e-12 {
            return Ok((sol, history));
        }
        let next = current.extended(2.0 * y)?;
        let next_sol = solve_problem(&next, problem)?;
        let change_flux = (far_flux(&current, &sol, y - 1.0) - far_flux(&next, &next_sol, y - 1.0))
            .abs()
            .max((far_flux(&current, &sol, 1.0 - y) - far_flux(&next, &next_sol, 1.0 - y)).abs());
        let change_constants = (sol.c_plus - next_sol.c_plus)
            .abs()
            .max((sol.c_minus - next_sol.c_minus).abs());
        let bound = match sol.decay {
            Ok(fit) => (-fit.rate * y).exp().max(floor),
            Err(_) => floor,
        };
        let passes = change_flux <= bound && change_constants <= bound;
        history.push(TruncationCheck {
            truncation: y,
            change_constants,
            change_flux,
            bound,
            passes,
        });
        if passes {
            return Ok((sol, history));
        }
        current = next;
        sol = next_sol;
    }
}

/// One row of the scaled-versus-flat comparison.
#[derive(Debug, Clone, Serialize)]
pub struct Lemma2Row {
    pub eps: f64,
    pub error: f64,
}

/// Convergence of a scaled-obstacle solution to its flat-obstacle limit:
/// `‖∇(u_ε − u)‖_{L²}` for each `ε` (both solved on the scaled grid) and the
/// fitted exponent of the error against `ε`.
pub fn lemma2_sweep(
    problem: CellProblem,
    m: &[f64],
    beta: f64,
    truncation: f64,
    eps_list: &[f64],
    res: &StripResolution,
    a: &LayeredTensor,
) -> Result<(Vec<Lemma2Row>, f64)> {
    let rows: Vec<Lemma2Row> = eps_list
        .par_iter()
        .map(|&eps| {
            let strip = StripDomain::new(StripMode::Scaled, m.to_vec(), eps, beta, truncation)?;
            let scaled = CellSetup::standalone(strip.clone(), res, a.clone())?;
            let flat_strip = StripDomain {
                mode: StripMode::Flat,
                ..strip
            };
            let flat = CellSetup::on_grid(flat_strip, scaled.grid.clone(), a.clone())?;
            let us = solve_problem(&scaled, problem)?;
            let uf = solve_problem(&flat, problem)?;
            Ok(Lemma2Row {
                eps,
                error: gradient_distance(&us, Some(&uf)),
            })
        })
        .collect::<Result<_>>()?;
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.error > 0.0)
        .map(|r| (r.eps.ln(), r.error.ln()))
        .collect();
    let slope = if pts.len() >= 2 { linear_fit(&pts).0 } else { f64::NAN };
    Ok((rows, slope))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn res() -> StripResolution {
        StripResolution {
            cells_per_unit: 16,
            obstacle_cells: 2,
            growth: 1.2,
            max_spacing: 1.0 / 8.0,
        }
    }

    fn identity() -> LayeredTensor {
        LayeredTensor::constant(Tensor::identity(2))
    }

    fn layered() -> LayeredTensor {
        LayeredTensor::new(Tensor::scaled_identity(2, 0.5), Tensor::identity(2), 1.5, 1e-12).unwrap()
    }

    fn setup(mode: StripMode, a: LayeredTensor) -> CellSetup {
        let strip = StripDomain::new(StripMode::Scaled, vec![0.25], 0.2, 2.0, 4.0).unwrap();
        let scaled = CellSetup::standalone(strip.clone(), &res(), a.clone()).unwrap();
        CellSetup::on_grid(StripDomain { mode, ..strip }, scaled.grid, a).unwrap()
    }

    #[test]
    fn cutoff_profile() {
        assert_eq!(cutoff(0.3), 0.0);
        assert_eq!(cutoff(-0.5), 0.0);
        assert_eq!(cutoff(1.0), 1.0);
        assert_eq!(cutoff(-7.0), 1.0);
        assert!((cutoff(0.75) - 0.5).abs() < 1e-15);
        let p = GrowthProfile::for_w(1.4, 1.0);
        assert!((p.value(2.0) + 1.4).abs() < 1e-15);
        assert_eq!(p.value(2.0), p.value(-2.0));
        let q = GrowthProfile::for_zn(1.4, 1.0);
        assert_eq!(q, GrowthProfile::Quadratic { coef: -0.35 });
    }

    #[test]
    fn labels_round_trip() {
        for p in [
            CellProblem::ChiK(1),
            CellProblem::W,
            CellProblem::ChiLm(0, 1),
            CellProblem::WIj(1, 1),
            CellProblem::ZK(0),
        ] {
            assert_eq!(CellProblem::parse(&p.label(), 2).unwrap(), p);
        }
        assert!(CellProblem::parse("chi-3", 2).is_err());
        assert!(CellProblem::parse("q-1", 2).is_err());
    }

    #[test]
    fn synthetic_decay_rate() {
        let samples: Vec<(f64, f64)> = (0..30)
            .map(|i| {
                let s = 1.0 + 0.1 * i as f64;
                (s, 3.0 * (-2.0 * s).exp())
            })
            .collect();
        let fit = fit_exponential(&samples).unwrap();
        assert!((fit.rate - 2.0).abs() < 0.02);
        assert!((fit.constant - 3.0).abs() < 1e-9);
        let flat: Vec<(f64, f64)> = samples.iter().map(|&(s, _)| (s, 1.0)).collect();
        assert_eq!(fit_exponential(&flat), Err(DecayFailure::NotDecaying));
        let zero: Vec<(f64, f64)> = samples.iter().map(|&(s, _)| (s, 0.0)).collect();
        assert_eq!(fit_exponential(&zero), Err(DecayFailure::Trivial));
    }

    #[test]
    fn flat_lateral_chi_vanishes() {
        let s = setup(StripMode::Flat, layered());
        let chi = solve_chi_k(&s, 0).unwrap();
        assert!(chi.gradient_norm() <= 1e-10);
        assert_eq!(chi.decay, Err(DecayFailure::Trivial));
    }

    #[test]
    fn no_obstacle_everything_vanishes() {
        let strip = StripDomain::new(StripMode::Scaled, vec![0.25], 0.2, 2.0, 4.0)
            .unwrap()
            .without_obstacle();
        let s = CellSetup::standalone(strip, &res(), layered()).unwrap();
        let fam = CellFamily::solve(&s).unwrap();
        for sol in fam.all() {
            assert!(sol.max_abs() == 0.0, "{} not zero", sol.problem.label());
        }
    }

    #[test]
    fn flat_w_far_flux() {
        let s = setup(StripMode::Flat, identity());
        let w = solve_w(&s).unwrap();
        assert!((w.far_flux_top + 0.5).abs() < 1e-4, "{}", w.far_flux_top);
        assert!((w.far_flux_bottom - 0.5).abs() < 1e-4, "{}", w.far_flux_bottom);
        assert!(!w.non_decaying);
        assert!(w.residual < 1e-9);
        assert!(w.parity_defect(false) < 1e-10);
        assert!(w.decay.unwrap().rate > 0.0);
    }

    #[test]
    fn scaled_w_compatibility_and_parity() {
        let s = setup(StripMode::Scaled, layered());
        let w = solve_w(&s).unwrap();
        let half = 0.5 * s.boundary_measure();
        assert!((w.far_flux_top + half).abs() < 1e-4);
        assert!((w.far_flux_bottom - half).abs() < 1e-4);
        assert!(w.imbalance.abs() < 1e-12);
        assert!(w.c_plus.abs() < 1e-10 && w.c_minus.abs() < 1e-10);
        assert!(w.parity_defect(false) < 1e-10);
    }

    #[test]
    fn chi_n_is_odd() {
        let s = setup(StripMode::Scaled, layered());
        let chi = solve_chi_k(&s, 1).unwrap();
        assert!(chi.gradient_norm() > 1e-3);
        assert!(chi.parity_defect(true) < 1e-10);
        assert!((chi.c_plus + chi.c_minus).abs() < 1e-10);
        assert!(chi.decay.unwrap().rate > 1.0);
    }

    #[test]
    fn lateral_z_is_odd() {
        let s = setup(StripMode::Flat, identity());
        let w = solve_w(&s).unwrap();
        let z = solve_z_k(&s, 0, &w).unwrap();
        assert!(z.parity_defect(true) < 1e-10);
    }

    #[test]
    fn doubling_keeps_inner_grid() {
        let s = setup(StripMode::Scaled, identity());
        let e = s.extended(8.0).unwrap();
        assert_eq!(e.truncation(), 8.0);
        let (sol, hist) = solve_with_truncation_doubling(&s, CellProblem::W, 8.0, 1e-9).unwrap();
        assert!(!hist.is_empty());
        assert!(hist[0].passes, "{:?}", hist[0]);
        assert_eq!(sol.truncation, 4.0);
    }
}
