//! Cell-centred finite-volume discretization of
//! `−div(A∇φ) + div(vφ)` on a masked tensor grid.
//!
//! Faces carry two-point diffusive fluxes (harmonic half-conductances) and
//! fully upwinded advective fluxes. Vertical faces may sit on an embedded
//! jump plane where `[φ] = g₀` and `[e_n·(A∇φ − v_nφ)] = G` are prescribed;
//! the two one-sided traces are eliminated analytically so the unknowns stay
//! cell-centred and the scheme remains conservative. With `g₀ = G = 0` the
//! jump face coincides with an ordinary face.
//!
//! Sign convention: `J` denotes the conservative transport flux
//! `(−A∇φ + vφ)·e_axis · area`, so positive `J` leaves the lower cell.

use crate::coefficients::{face_geometry, FaceVelocity, Tensor};
use crate::error::{Error, Result};
use crate::grid::TensorGrid;
use crate::linalg::CsrMatrix;

pub const INACTIVE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    /// Homogeneous Dirichlet value on the face.
    Dirichlet,
    /// Zero total (diffusive + advective) flux.
    ZeroFlux,
    /// Prescribed total influx `weight · s(t)`.
    Injection,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundarySpec {
    pub kind: BoundaryKind,
    /// Influx per unit source amplitude (used by [`BoundaryKind::Injection`]).
    pub weight: f64,
    /// Free label, e.g. the hole index.
    pub tag: u32,
}

impl BoundarySpec {
    pub fn dirichlet() -> Self {
        Self {
            kind: BoundaryKind::Dirichlet,
            weight: 0.0,
            tag: 0,
        }
    }

    pub fn zero_flux() -> Self {
        Self {
            kind: BoundaryKind::ZeroFlux,
            weight: 0.0,
            tag: 0,
        }
    }

    pub fn injection(weight: f64, tag: u32) -> Self {
        Self {
            kind: BoundaryKind::Injection,
            weight,
            tag,
        }
    }
}

/// Embedded plane at vertical face index `face` with jumps proportional to
/// the source amplitude: `[φ] = value·s`, `[e_n·(A∇φ − v_nφ)] = flux·s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpPlane {
    pub face: usize,
    pub value: f64,
    pub flux: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteriorFace {
    pub lo: usize,
    pub hi: usize,
    pub axis: usize,
    pub area: f64,
    /// Half conductances `A_aa · area / half-width`.
    pub a_lo: f64,
    pub a_hi: f64,
    /// `v·e_axis · area`.
    pub flow: f64,
    pub plane: Option<usize>,
    /// Off-diagonal tensor entries `A_ab` (b ≠ axis) on the face.
    pub cross: [f64; 3],
}

impl InteriorFace {
    pub fn transmissibility(&self) -> f64 {
        self.a_lo * self.a_hi / (self.a_lo + self.a_hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFace {
    pub dof: usize,
    pub axis: usize,
    pub outward: i32,
    pub area: f64,
    pub cond: f64,
    /// Outward `v·n · area`.
    pub flow: f64,
    pub spec: BoundarySpec,
}

/// Per-face fluxes of a state.
#[derive(Debug, Clone, PartialEq)]
pub struct Fluxes {
    /// `(J_lo, J_hi)` per interior face: flux leaving `lo`, flux entering `hi`.
    pub interior: Vec<(f64, f64)>,
    /// Diffusive part `F_lo = A∂φ·area` on the lower side, per interior face.
    pub diffusive: Vec<f64>,
    /// Outward flux per boundary face.
    pub boundary: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Discretization {
    pub grid: TensorGrid,
    pub dof_of_cell: Vec<usize>,
    pub cell_of_dof: Vec<usize>,
    pub volume: Vec<f64>,
    pub capacity: Vec<f64>,
    pub interior: Vec<InteriorFace>,
    pub boundary: Vec<BoundaryFace>,
    pub planes: Vec<JumpPlane>,
    pub has_cross: bool,
}

/// What to do with a face between two active cells.
pub enum FaceOverride {
    Keep,
    /// Cut the face: it becomes one boundary face on each side.
    Cut {
        lo: BoundarySpec,
        hi: BoundarySpec,
    },
}

/// Inputs for [`Discretization::build`].
pub struct FvSetup<'a> {
    pub grid: &'a TensorGrid,
    pub active: &'a [bool],
    pub tensor: &'a dyn Fn(usize) -> Tensor,
    pub capacity: &'a dyn Fn(usize) -> f64,
    pub velocity: &'a dyn FaceVelocity,
    /// Condition on the outer boundary: `(axis, side) → spec`.
    pub outer: &'a dyn Fn(usize, i32) -> BoundarySpec,
    /// Condition on a face towards an inactive cell: `(cell, axis, side, area) → spec`.
    pub wall: &'a dyn Fn(usize, usize, i32, f64) -> BoundarySpec,
    /// Optional cut of interior faces: `(lo, hi, axis, area) → override`.
    pub cut: Option<&'a dyn Fn(usize, usize, usize, f64) -> FaceOverride>,
    pub planes: Vec<JumpPlane>,
}

impl Discretization {
    pub fn build(s: FvSetup<'_>) -> Result<Self> {
        let g = s.grid;
        if s.active.len() != g.len() {
            return Err(Error::Assembly("activity mask does not match the grid".into()));
        }
        let mut dof_of_cell = vec![INACTIVE; g.len()];
        let mut cell_of_dof = Vec::new();
        for (c, &a) in s.active.iter().enumerate() {
            if a {
                dof_of_cell[c] = cell_of_dof.len();
                cell_of_dof.push(c);
            }
        }
        if cell_of_dof.is_empty() {
            return Err(Error::Assembly("no active cells".into()));
        }
        let nd = g.ndim();
        let v = g.vertical_axis();
        let volume: Vec<f64> = cell_of_dof.iter().map(|&c| g.volume(c)).collect();
        let capacity: Vec<f64> = cell_of_dof
            .iter()
            .zip(&volume)
            .map(|(&c, vol)| (s.capacity)(c) * vol)
            .collect();
        let tensors: Vec<Tensor> = cell_of_dof.iter().map(|&c| (s.tensor)(c)).collect();
        let has_cross = tensors.iter().any(|t| !t.is_diagonal());
        for p in &s.planes {
            if p.face == 0 || p.face >= g.faces(v).len() - 1 {
                return Err(Error::Assembly(format!(
                    "jump plane at face {} is not interior",
                    p.face
                )));
            }
        }
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        for (dof, &cell) in cell_of_dof.iter().enumerate() {
            let idx = g.multi_index(cell);
            for axis in 0..nd {
                let area = g.face_area(cell, axis);
                let half = 0.5 * g.width(axis, idx[axis]);
                let t = &tensors[dof];
                let cond = t.get(axis, axis) * area / half;
                for side in [-1, 1] {
                    let nb = g.neighbor(cell, axis, side);
                    let geom = face_geometry(g, cell, axis, side);
                    let un = s.velocity.normal(&geom);
                    match nb {
                        Some(nb) if s.active[nb] => {
                            if side < 0 {
                                continue; // each interior face once, from its lower cell
                            }
                            let nbd = dof_of_cell[nb];
                            if let Some(cut) = s.cut {
                                if let FaceOverride::Cut { lo, hi } = cut(cell, nb, axis, area) {
                                    boundary.push(BoundaryFace {
                                        dof,
                                        axis,
                                        outward: 1,
                                        area,
                                        cond,
                                        flow: un * area,
                                        spec: lo,
                                    });
                                    let tn = &tensors[nbd];
                                    let hn = 0.5 * g.width(axis, g.multi_index(nb)[axis]);
                                    boundary.push(BoundaryFace {
                                        dof: nbd,
                                        axis,
                                        outward: -1,
                                        area,
                                        cond: tn.get(axis, axis) * area / hn,
                                        flow: -un * area,
                                        spec: hi,
                                    });
                                    continue;
                                }
                            }
                            let tn = &tensors[nbd];
                            let hn = 0.5 * g.width(axis, g.multi_index(nb)[axis]);
                            let plane = if axis == v {
                                s.planes.iter().position(|p| p.face == idx[v] + 1)
                            } else {
                                None
                            };
                            let mut cross = [0.0; 3];
                            for b in 0..nd {
                                if b != axis {
                                    cross[b] = 0.5 * (t.get(axis, b) + tn.get(axis, b));
                                }
                            }
                            interior.push(InteriorFace {
                                lo: dof,
                                hi: nbd,
                                axis,
                                area,
                                a_lo: cond,
                                a_hi: tn.get(axis, axis) * area / hn,
                                flow: un * area,
                                plane,
                                cross,
                            });
                        }
                        Some(_) => boundary.push(BoundaryFace {
                            dof,
                            axis,
                            outward: side,
                            area,
                            cond,
                            flow: side as f64 * un * area,
                            spec: (s.wall)(cell, axis, side, area),
                        }),
                        None => boundary.push(BoundaryFace {
                            dof,
                            axis,
                            outward: side,
                            area,
                            cond,
                            flow: side as f64 * un * area,
                            spec: (s.outer)(axis, side),
                        }),
                    }
                }
            }
        }
        Ok(Self {
            grid: g.clone(),
            dof_of_cell,
            cell_of_dof,
            volume,
            capacity,
            interior,
            boundary,
            planes: s.planes,
            has_cross,
        })
    }

    pub fn len(&self) -> usize {
        self.cell_of_dof.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cell_of_dof.is_empty()
    }

    /// Matrix of `storage·capacity + Σ_faces J` (linear part).
    /// `pinned` replaces a row by the identity (fixes the constant of pure
    /// Neumann problems).
    pub fn assemble(&self, storage: f64, pinned: Option<usize>) -> Result<CsrMatrix> {
        let n = self.len();
        let mut t = Vec::with_capacity(n + 4 * self.interior.len());
        for i in 0..n {
            t.push((i, i, storage * self.capacity[i]));
        }
        for f in &self.interior {
            let tr = f.transmissibility();
            let qp = f.flow.max(0.0);
            let qm = f.flow.min(0.0);
            // lo row: +J_lo ; hi row: −J_hi (same linear part).
            t.push((f.lo, f.lo, qp + tr));
            t.push((f.lo, f.hi, qm - tr));
            t.push((f.hi, f.lo, -(qp + tr)));
            t.push((f.hi, f.hi, -(qm - tr)));
        }
        for b in &self.boundary {
            if b.spec.kind == BoundaryKind::Dirichlet {
                t.push((b.dof, b.dof, b.cond + b.flow.max(0.0)));
            }
        }
        if let Some(p) = pinned {
            t.retain(|&(i, _, _)| i != p);
            t.push((p, p, 1.0));
        }
        CsrMatrix::from_triplets(n, t)
    }

    fn plane_constants(&self, f: &InteriorFace, s: f64) -> (f64, f64) {
        match f.plane {
            None => (0.0, 0.0),
            Some(k) => {
                let p = &self.planes[k];
                let g0 = p.value * s;
                let gf = p.flux * s * f.area;
                let tr = f.transmissibility();
                let q = f.flow;
                let jump_f = gf + q * g0;
                let c_lo = -q.min(0.0) * g0 + tr * g0 + f.a_lo / (f.a_lo + f.a_hi) * jump_f;
                (c_lo, c_lo - gf)
            }
        }
    }

    /// Right-hand side contributions of sources and jump planes at source
    /// amplitude `s`.
    pub fn source_vector(&self, s: f64) -> Vec<f64> {
        let mut r = vec![0.0; self.len()];
        for b in &self.boundary {
            if b.spec.kind == BoundaryKind::Injection {
                r[b.dof] += b.spec.weight * s;
            }
        }
        for f in &self.interior {
            let (c_lo, c_hi) = self.plane_constants(f, s);
            r[f.lo] -= c_lo;
            r[f.hi] += c_hi;
        }
        r
    }

    /// Cell gradient component along `b` by (one-sided where needed)
    /// central differences, not crossing jump planes.
    fn cell_gradient(&self, phi: &[f64], dof: usize, b: usize) -> f64 {
        let g = &self.grid;
        let cell = self.cell_of_dof[dof];
        let idx = g.multi_index(cell);
        let v = g.vertical_axis();
        let neighbor = |side: i32| -> Option<(f64, f64)> {
            let nb = g.neighbor(cell, b, side)?;
            let nd = self.dof_of_cell[nb];
            if nd == INACTIVE {
                return None;
            }
            if b == v {
                let face = if side > 0 { idx[v] + 1 } else { idx[v] };
                if self.planes.iter().any(|p| p.face == face) {
                    return None;
                }
            }
            let nidx = g.multi_index(nb)[b];
            let dist = 0.5 * (g.width(b, idx[b]) + g.width(b, nidx));
            Some((phi[nd], side as f64 * dist))
        };
        match (neighbor(-1), neighbor(1)) {
            (Some((pm, dm)), Some((pp, dp))) => (pp - pm) / (dp - dm),
            (Some((pm, dm)), None) => (phi[dof] - pm) / (-dm),
            (None, Some((pp, dp))) => (pp - phi[dof]) / dp,
            (None, None) => 0.0,
        }
    }

    /// Explicit cross-diffusion outflow `−A_ab ∂_bφ · area` per interior face.
    pub fn cross_fluxes(&self, phi: &[f64]) -> Vec<f64> {
        if !self.has_cross {
            return vec![0.0; self.interior.len()];
        }
        self.interior
            .iter()
            .map(|f| {
                if f.plane.is_some() {
                    return 0.0;
                }
                let mut s = 0.0;
                for b in 0..self.grid.ndim() {
                    if b != f.axis && f.cross[b] != 0.0 {
                        let gb = 0.5 * (self.cell_gradient(phi, f.lo, b) + self.cell_gradient(phi, f.hi, b));
                        s -= f.cross[b] * gb * f.area;
                    }
                }
                s
            })
            .collect()
    }

    /// Adds the explicit cross fluxes to a right-hand side.
    pub fn add_cross(&self, cross: &[f64], rhs: &mut [f64]) {
        for (f, c) in self.interior.iter().zip(cross) {
            rhs[f.lo] -= c;
            rhs[f.hi] += c;
        }
    }

    /// Face fluxes of `phi` at source amplitude `s` with lagged cross fluxes.
    pub fn fluxes(&self, phi: &[f64], s: f64, cross: &[f64]) -> Fluxes {
        let mut interior = Vec::with_capacity(self.interior.len());
        let mut diffusive = Vec::with_capacity(self.interior.len());
        for (i, f) in self.interior.iter().enumerate() {
            let tr = f.transmissibility();
            let (qp, qm) = (f.flow.max(0.0), f.flow.min(0.0));
            let (c_lo, c_hi) = self.plane_constants(f, s);
            let lin = (qp + tr) * phi[f.lo] + (qm - tr) * phi[f.hi];
            let cr = cross.get(i).copied().unwrap_or(0.0);
            interior.push((lin + c_lo + cr, lin + c_hi + cr));
            let adv_lo = match f.plane {
                None => qp * phi[f.lo] + qm * phi[f.hi],
                Some(k) => qp * phi[f.lo] + qm * (phi[f.hi] - self.planes[k].value * s),
            };
            diffusive.push(adv_lo - (lin + c_lo));
        }
        let boundary = self
            .boundary
            .iter()
            .map(|b| {
                let p = phi[b.dof];
                match b.spec.kind {
                    BoundaryKind::Dirichlet => (b.cond + b.flow.max(0.0)) * p,
                    BoundaryKind::ZeroFlux => 0.0,
                    BoundaryKind::Injection => -b.spec.weight * s,
                }
            })
            .collect();
        Fluxes {
            interior,
            diffusive,
            boundary,
        }
    }

    /// Net outflow of every cell, `Σ_faces J`.
    pub fn divergence(&self, fl: &Fluxes) -> Vec<f64> {
        let mut d = vec![0.0; self.len()];
        for (f, &(jl, jh)) in self.interior.iter().zip(&fl.interior) {
            d[f.lo] += jl;
            d[f.hi] -= jh;
        }
        for (b, &j) in self.boundary.iter().zip(&fl.boundary) {
            d[b.dof] += j;
        }
        d
    }

    /// Scatter dof values onto the full grid (inactive cells get `fill`).
    pub fn to_cells(&self, phi: &[f64], fill: f64) -> Vec<f64> {
        let mut out = vec![fill; self.grid.len()];
        for (d, &c) in self.cell_of_dof.iter().enumerate() {
            out[c] = phi[d];
        }
        out
    }

    pub fn from_cells(&self, values: &[f64]) -> Vec<f64> {
        self.cell_of_dof.iter().map(|&c| values[c]).collect()
    }

    pub fn active_mask(&self) -> Vec<bool> {
        self.dof_of_cell.iter().map(|&d| d != INACTIVE).collect()
    }

    /// Both one-sided traces on every plane face: `(face, φ⁻, φ⁺)`.
    pub fn plane_traces(&self, phi: &[f64], s: f64) -> Vec<(usize, f64, f64)> {
        self.interior
            .iter()
            .enumerate()
            .filter_map(|(i, f)| {
                let k = f.plane?;
                let p = &self.planes[k];
                let g0 = p.value * s;
                let jf = p.flux * s * f.area + f.flow * g0;
                let lower = (f.a_lo * phi[f.lo] + f.a_hi * (phi[f.hi] - g0) - jf) / (f.a_lo + f.a_hi);
                Some((i, lower, lower + g0))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{LayeredVelocity, VelocityKind};
    use crate::grid::uniform_faces;
    use crate::linalg::{LinearSystem, SolverOptions};

    fn column(n: usize) -> TensorGrid {
        TensorGrid::new(
            vec![uniform_faces(0.0, 1.0, 2), uniform_faces(-1.0, 1.0, n)],
            vec![true, false],
        )
        .unwrap()
    }

    fn build(grid: &TensorGrid, planes: Vec<JumpPlane>, vel: &dyn FaceVelocity) -> Discretization {
        let active = vec![true; grid.len()];
        Discretization::build(FvSetup {
            grid,
            active: &active,
            tensor: &|_| Tensor::identity(2),
            capacity: &|_| 1.0,
            velocity: vel,
            outer: &|_, side| {
                if side < 0 {
                    BoundarySpec::dirichlet()
                } else {
                    BoundarySpec::zero_flux()
                }
            },
            wall: &|_, _, _, _| BoundarySpec::zero_flux(),
            cut: None,
            planes,
        })
        .unwrap()
    }

    #[test]
    fn zero_jump_plane_is_stencil_identical() {
        let g = column(8);
        let vel = LayeredVelocity::new(
            VelocityKind::Uniform {
                inner: vec![0.0, -0.3],
                outer: vec![0.0, -0.3],
            },
            1.0,
            2,
        )
        .unwrap();
        let plain = build(&g, vec![], &vel.scaled(None));
        let jumped = build(
            &g,
            vec![JumpPlane {
                face: 4,
                value: 0.0,
                flux: 0.0,
            }],
            &vel.scaled(None),
        );
        assert_eq!(plain.assemble(2.0, None).unwrap(), jumped.assemble(2.0, None).unwrap());
        assert!(jumped.source_vector(1.0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn steady_flux_jump_profile() {
        // 1-D: −φ'' = 0, φ(−1) = 0, φ'(1) = 0, [φ'] = G = −2 at 0.
        let g = column(16);
        let vel = LayeredVelocity::zero(2);
        let d = build(
            &g,
            vec![JumpPlane {
                face: 8,
                value: 0.0,
                flux: -2.0,
            }],
            &vel.scaled(None),
        );
        let a = d.assemble(0.0, None).unwrap();
        let rhs = d.source_vector(1.0);
        let sys = LinearSystem::new(a).unwrap();
        let mut x = vec![0.0; d.len()];
        sys.solve(
            &rhs,
            &mut x,
            &SolverOptions {
                rel_tol: 1e-13,
                max_iter: 500,
            },
        )
        .unwrap();
        for (dof, &c) in d.cell_of_dof.iter().enumerate() {
            let y = g.cell_center(c)[1];
            let exact = if y < 0.0 { 2.0 * (y + 1.0) } else { 2.0 };
            assert!((x[dof] - exact).abs() < 1e-10, "{y}: {} vs {exact}", x[dof]);
        }
        let fl = d.fluxes(&x, 1.0, &[]);
        for (f, &(jl, jh)) in d.interior.iter().zip(&fl.interior) {
            if f.plane.is_some() {
                assert!(((jh - jl) - 2.0 * f.area).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn value_jump_is_exact() {
        let g = column(16);
        let vel = LayeredVelocity::zero(2);
        let d = build(
            &g,
            vec![JumpPlane {
                face: 8,
                value: 0.7,
                flux: 0.0,
            }],
            &vel.scaled(None),
        );
        let sys = LinearSystem::new(d.assemble(0.0, None).unwrap()).unwrap();
        let mut x = vec![0.0; d.len()];
        sys.solve(
            &d.source_vector(1.0),
            &mut x,
            &SolverOptions {
                rel_tol: 1e-13,
                max_iter: 500,
            },
        )
        .unwrap();
        // No flux anywhere: φ = 0 below, 0.7 above.
        for (dof, &c) in d.cell_of_dof.iter().enumerate() {
            let y = g.cell_center(c)[1];
            let exact = if y < 0.0 { 0.0 } else { 0.7 };
            assert!((x[dof] - exact).abs() < 1e-10);
        }
        for (_, lo, hi) in d.plane_traces(&x, 1.0) {
            assert_eq!(hi - lo, 0.7);
        }
    }
}
