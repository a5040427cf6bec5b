//! Two-layer coefficient fields switching at `|x_n/ε| = h`, the leak schedule
//! and the initial concentration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TensorGrid;

/// Small dense matrix, row-major, dimension 1..=3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub a: [[f64; 3]; 3],
}

impl Tensor {
    pub fn from_row_major(n: usize, v: &[f64]) -> Result<Self> {
        if v.len() != n * n {
            return Err(Error::Coefficients(format!(
                "expected {} matrix entries, got {}",
                n * n,
                v.len()
            )));
        }
        let mut a = [[0.0; 3]; 3];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = v[i * n + j];
            }
        }
        Ok(Self { n, a })
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        let mut a = [[0.0; 3]; 3];
        for (i, row) in a.iter_mut().enumerate().take(n) {
            row[i] = s;
        }
        Self { n, a }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i][j]
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| i == j || self.a[i][j] == 0.0))
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        (0..self.n)
            .flat_map(|i| (0..self.n).map(move |j| (i, j)))
            .map(|(i, j)| self.a[i][j])
            .collect()
    }

    /// Eigenvalues of the symmetric part by cyclic Jacobi rotations, ascending.
    pub fn symmetric_eigenvalues(&self) -> Vec<f64> {
        let n = self.n;
        let mut m = [[0.0; 3]; 3];
        for i in 0..n {
            for j in 0..n {
                m[i][j] = 0.5 * (self.a[i][j] + self.a[j][i]);
            }
        }
        for _sweep in 0..64 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|(i, j)| i != j)
                .map(|(i, j)| m[i][j] * m[i][j])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if m[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[k][p];
                        let mkq = m[k][q];
                        m[k][p] = c * mkp - s * mkq;
                        m[k][q] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[p][k];
                        let mqk = m[q][k];
                        m[p][k] = c * mpk - s * mqk;
                        m[q][k] = s * mpk + c * mqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    /// Checks symmetry and positive definiteness; returns `(λ_min, λ_max)`.
    pub fn check_spd(&self, tol: f64) -> Result<(f64, f64)> {
        let scale = (0..self.n)
            .flat_map(|i| (0..self.n).map(move |j| (i, j)))
            .map(|(i, j)| self.a[i][j].abs())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        for i in 0..self.n {
            for j in 0..i {
                if (self.a[i][j] - self.a[j][i]).abs() > tol * scale {
                    return Err(Error::Coefficients(format!(
                        "diffusion matrix is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let ev = self.symmetric_eigenvalues();
        let lo = ev[0];
        let hi = *ev.last().unwrap();
        if !(lo > tol * scale) {
            return Err(Error::Coefficients(format!(
                "diffusion matrix is not positive definite (smallest eigenvalue {lo:e})"
            )));
        }
        Ok((lo, hi))
    }
}

/// `A(y_n)`: `A1` for `|y_n| < h`, `A2` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredTensor {
    pub inner: Tensor,
    pub outer: Tensor,
    pub h: f64,
    pub inner_bounds: (f64, f64),
    pub outer_bounds: (f64, f64),
}

impl LayeredTensor {
    pub fn new(inner: Tensor, outer: Tensor, h: f64, pd_tol: f64) -> Result<Self> {
        if inner.n != outer.n {
            return Err(Error::Coefficients("A1 and A2 have different sizes".into()));
        }
        if !(h > 0.0) {
            return Err(Error::Coefficients(format!(
                "layer half-height h must be positive, got {h}"
            )));
        }
        let inner_bounds = inner.check_spd(pd_tol).map_err(|e| e.context("A1"))?;
        let outer_bounds = outer.check_spd(pd_tol).map_err(|e| e.context("A2"))?;
        Ok(Self {
            inner,
            outer,
            h,
            inner_bounds,
            outer_bounds,
        })
    }

    pub fn constant(a: Tensor) -> Self {
        let b = (a.get(0, 0), a.get(0, 0));
        Self {
            inner: a,
            outer: a,
            h: 1.0,
            inner_bounds: b,
            outer_bounds: b,
        }
    }

    /// Strip-variable evaluation `A(y_n)`; the interface belongs to the outer layer.
    pub fn at_fast(&self, y_n: f64) -> &Tensor {
        if y_n.abs() < self.h {
            &self.inner
        } else {
            &self.outer
        }
    }

    /// `A^ε(x_n) = A(x_n/ε)`; `None` selects the outer tensor everywhere.
    pub fn eval(&self, x_n: f64, eps: Option<f64>) -> &Tensor {
        match eps {
            Some(e) => self.at_fast(x_n / e),
            None => &self.outer,
        }
    }

    pub fn outer_nn(&self) -> f64 {
        let n = self.outer.n;
        self.outer.get(n - 1, n - 1)
    }

    pub fn is_diagonal(&self) -> bool {
        self.inner.is_diagonal() && self.outer.is_diagonal()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayeredScalar {
    pub inner: f64,
    pub outer: f64,
    pub h: f64,
}

impl LayeredScalar {
    pub fn new(inner: f64, outer: f64, h: f64) -> Result<Self> {
        if !(inner > 0.0 && outer > 0.0) {
            return Err(Error::Coefficients(format!(
                "porosities must be positive, got {inner}, {outer}"
            )));
        }
        Ok(Self { inner, outer, h })
    }

    pub fn eval(&self, x_n: f64, eps: Option<f64>) -> f64 {
        match eps {
            Some(e) if (x_n / e).abs() < self.h => self.inner,
            _ => self.outer,
        }
    }
}

/// Geometry of one face for velocity evaluation.
#[derive(Debug, Clone, Copy)]
pub struct FaceGeom {
    pub axis: usize,
    pub position: f64,
    /// Extent of the face along every axis (degenerate along `axis`).
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    /// Face multi-index: along `axis` the face number, elsewhere the cell.
    pub index: [usize; 3],
}

impl FaceGeom {
    pub fn center(&self, n: usize) -> [f64; 3] {
        let mut c = [0.0; 3];
        for a in 0..n {
            c[a] = if a == self.axis {
                self.position
            } else {
                0.5 * (self.lo[a] + self.hi[a])
            };
        }
        c
    }
}

/// Normal velocity on grid faces (positive along the axis).
pub trait FaceVelocity {
    fn normal(&self, face: &FaceGeom) -> f64;
}

/// Velocity given pointwise, sampled at face centres.
pub struct PointVelocity<F: Fn(&[f64]) -> Vec<f64>> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64>> FaceVelocity for PointVelocity<F> {
    fn normal(&self, face: &FaceGeom) -> f64 {
        let c = face.center(self.n);
        (self.f)(&c[..self.n])[face.axis]
    }
}

/// Face-normal velocities read from a file, indexed by face.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceTable {
    pub dims: Vec<usize>,
    /// Per axis, values in face order (axis 0 fastest).
    pub values: Vec<Vec<f64>>,
}

impl FaceTable {
    /// Text format: `dims d0 d1 [d2]`, then per axis a line `axis k`
    /// followed by whitespace-separated face velocities. Lines starting with
    /// `#` are comments. Lateral axes are periodic (`d_a` faces), the
    /// vertical axis has `d_n + 1` faces.
    pub fn parse(text: &str) -> Result<Self> {
        let mut dims: Option<Vec<usize>> = None;
        let mut values: Vec<Vec<f64>> = Vec::new();
        let mut current: Option<usize> = None;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tok = line.split_whitespace();
            let head = tok.next().unwrap();
            let bad = |m: &str| Error::config(format!("face-flux line {}", ln + 1), m.to_string());
            match head {
                "dims" => {
                    let d: std::result::Result<Vec<usize>, _> = tok.map(|t| t.parse()).collect();
                    let d = d.map_err(|_| bad("bad dims"))?;
                    values = vec![Vec::new(); d.len()];
                    dims = Some(d);
                }
                "axis" => {
                    let k: usize = tok.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad axis"))?;
                    if k >= values.len() {
                        return Err(bad("axis out of range"));
                    }
                    current = Some(k);
                }
                _ => {
                    let k = current.ok_or_else(|| bad("values before any axis line"))?;
                    for t in std::iter::once(head).chain(tok) {
                        values[k].push(t.parse().map_err(|_| bad("bad number"))?);
                    }
                }
            }
        }
        let dims = dims.ok_or_else(|| Error::config("face-flux", "missing dims line"))?;
        let n = dims.len();
        for (a, v) in values.iter().enumerate() {
            let count: usize = (0..n)
                .map(|b| if b == a && a == n - 1 { dims[b] + 1 } else { dims[b] })
                .product();
            if v.len() != count {
                return Err(Error::config(
                    format!("face-flux axis {a}"),
                    format!("expected {count} values, got {}", v.len()),
                ));
            }
        }
        Ok(Self { dims, values })
    }

    pub fn matches(&self, grid: &TensorGrid) -> bool {
        self.dims == grid.dims()
    }

    fn lookup(&self, face: &FaceGeom) -> f64 {
        let n = self.dims.len();
        let a = face.axis;
        let mut stride = 1;
        let mut idx = 0;
        for b in 0..n {
            let len = if b == a && a == n - 1 {
                self.dims[b] + 1
            } else {
                self.dims[b]
            };
            let i = if b == a { face.index[b] % len } else { face.index[b] };
            idx += i * stride;
            stride *= len;
        }
        self.values[a][idx]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VelocityKind {
    Zero,
    /// Constant per layer; the last components must agree.
    Uniform {
        inner: Vec<f64>,
        outer: Vec<f64>,
    },
    /// Stream function `ψ = U L/(2π) sin(2π x₁/L) cos(π x₂/L)` (2-D only).
    Cellular {
        amplitude: f64,
        period: f64,
    },
    FaceTable(FaceTable),
}

/// `v(x, y_n)` with branches `v¹` for `|y_n| < h` and `v²` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredVelocity {
    pub kind: VelocityKind,
    pub h: f64,
    pub n: usize,
}

impl LayeredVelocity {
    pub fn zero(n: usize) -> Self {
        Self {
            kind: VelocityKind::Zero,
            h: 1.0,
            n,
        }
    }

    pub fn new(kind: VelocityKind, h: f64, n: usize) -> Result<Self> {
        match &kind {
            VelocityKind::Uniform { inner, outer } => {
                if inner.len() != n || outer.len() != n {
                    return Err(Error::Coefficients(format!(
                        "uniform velocity needs {n} components per layer"
                    )));
                }
                if inner[n - 1] != outer[n - 1] {
                    return Err(Error::Coefficients(
                        "the vertical velocity component must be the same in both layers".into(),
                    ));
                }
            }
            VelocityKind::Cellular { period, .. } => {
                if n != 2 {
                    return Err(Error::Coefficients("cellular velocity is 2-D only".into()));
                }
                if !(*period > 0.0) {
                    return Err(Error::Coefficients("cellular period must be positive".into()));
                }
            }
            VelocityKind::FaceTable(t) => {
                if t.dims.len() != n {
                    return Err(Error::Coefficients("face-flux table dimension mismatch".into()));
                }
            }
            VelocityKind::Zero => {}
        }
        Ok(Self { kind, h, n })
    }

    pub fn is_zero(&self) -> bool {
        match &self.kind {
            VelocityKind::Zero => true,
            VelocityKind::Uniform { inner, outer } => inner.iter().chain(outer).all(|&v| v == 0.0),
            VelocityKind::Cellular { amplitude, .. } => *amplitude == 0.0,
            VelocityKind::FaceTable(t) => t.values.iter().flatten().all(|&v| v == 0.0),
        }
    }

    /// Velocity bound to a scale: `Some(ε)` gives `v^ε`, `None` gives `v²`.
    pub fn scaled(&self, eps: Option<f64>) -> ScaledVelocity<'_> {
        ScaledVelocity { field: self, eps }
    }

    /// Point value (used for the second-order expansion terms).
    pub fn point(&self, x: &[f64], eps: Option<f64>) -> [f64; 3] {
        let n = self.n;
        let mut out = [0.0; 3];
        match &self.kind {
            VelocityKind::Zero | VelocityKind::FaceTable(_) => {}
            VelocityKind::Uniform { inner, outer } => {
                let inside = eps.map(|e| (x[n - 1] / e).abs() < self.h).unwrap_or(false);
                let v = if inside { inner } else { outer };
                out[..n].copy_from_slice(&v[..n]);
            }
            VelocityKind::Cellular { amplitude, period } => {
                let k = 2.0 * std::f64::consts::PI / period;
                let q = std::f64::consts::PI / period;
                let c = amplitude / k;
                out[0] = -c * q * (k * x[0]).sin() * (q * x[1]).sin();
                out[1] = -c * k * (k * x[0]).cos() * (q * x[1]).cos();
            }
        }
        out
    }
}

pub struct ScaledVelocity<'a> {
    field: &'a LayeredVelocity,
    eps: Option<f64>,
}

impl FaceVelocity for ScaledVelocity<'_> {
    fn normal(&self, face: &FaceGeom) -> f64 {
        let n = self.field.n;
        match &self.field.kind {
            VelocityKind::Zero => 0.0,
            VelocityKind::Uniform { inner, outer } => {
                let y = if face.axis == n - 1 {
                    face.position
                } else {
                    0.5 * (face.lo[n - 1] + face.hi[n - 1])
                };
                let inside = self.eps.map(|e| (y / e).abs() < self.field.h).unwrap_or(false);
                if inside {
                    inner[face.axis]
                } else {
                    outer[face.axis]
                }
            }
            VelocityKind::Cellular { amplitude, period } => {
                let k = 2.0 * std::f64::consts::PI / period;
                let q = std::f64::consts::PI / period;
                let psi = |x: f64, y: f64| amplitude / k * (k * x).sin() * (q * y).cos();
                if face.axis == 0 {
                    let x = face.position;
                    (psi(x, face.hi[1]) - psi(x, face.lo[1])) / (face.hi[1] - face.lo[1])
                } else {
                    let y = face.position;
                    -(psi(face.hi[0], y) - psi(face.lo[0], y)) / (face.hi[0] - face.lo[0])
                }
            }
            VelocityKind::FaceTable(t) => t.lookup(face),
        }
    }
}

/// Geometry of the `side` face of `cell` normal to `axis`.
pub fn face_geometry(grid: &TensorGrid, cell: usize, axis: usize, side: i32) -> FaceGeom {
    let idx = grid.multi_index(cell);
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    let mut index = idx;
    for a in 0..grid.ndim() {
        lo[a] = grid.faces(a)[idx[a]];
        hi[a] = grid.faces(a)[idx[a] + 1];
    }
    let k = if side > 0 { idx[axis] + 1 } else { idx[axis] };
    index[axis] = k;
    let position = grid.faces(axis)[k];
    lo[axis] = position;
    hi[axis] = position;
    FaceGeom {
        axis,
        position,
        lo,
        hi,
        index,
    }
}

/// Largest discrete divergence `|Σ_f v·n A_f| / V` over all cells.
pub fn check_divergence_free(v: &dyn FaceVelocity, grid: &TensorGrid) -> f64 {
    let mut worst: f64 = 0.0;
    for cell in 0..grid.len() {
        let mut div = 0.0;
        for axis in 0..grid.ndim() {
            let area = grid.face_area(cell, axis);
            div +=
                area * (v.normal(&face_geometry(grid, cell, axis, 1)) - v.normal(&face_geometry(grid, cell, axis, -1)));
        }
        worst = worst.max((div / grid.volume(cell)).abs());
    }
    worst
}

/// `λ = log 2 / τ`; an infinite half-life means no decay.
pub fn decay_constant(half_life: f64) -> Result<f64> {
    if !(half_life > 0.0) {
        return Err(Error::Coefficients(format!(
            "half-life must be positive, got {half_life}"
        )));
    }
    Ok(std::f64::consts::LN_2 / half_life)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LeakProfile {
    /// `Φ = amplitude` on `[0, t_m[`.
    Pulse { amplitude: f64, t_m: f64 },
    /// Piecewise-constant rows `[t0, t1, value]`.
    Table { rows: Vec<[f64; 3]> },
}

/// Leak flux `Φ(t)` with compact support `[0, t_m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSchedule {
    pub profile: LeakProfile,
    pub t_m: f64,
    pub horizon: f64,
}

impl SourceSchedule {
    pub fn new(profile: LeakProfile, horizon: f64) -> Result<Self> {
        let t_m = match &profile {
            LeakProfile::Pulse { amplitude, t_m } => {
                if !amplitude.is_finite() {
                    return Err(Error::Coefficients("leak amplitude must be finite".into()));
                }
                if !(*t_m > 0.0) {
                    return Err(Error::Coefficients(format!("t_m must be positive, got {t_m}")));
                }
                *t_m
            }
            LeakProfile::Table { rows } => {
                let mut end: f64 = 0.0;
                for (i, r) in rows.iter().enumerate() {
                    if !(r[0] >= 0.0 && r[1] > r[0]) || !r[2].is_finite() {
                        return Err(Error::Coefficients(format!("leak table row {i} is invalid")));
                    }
                    end = end.max(r[1]);
                }
                let mut sorted = rows.clone();
                sorted.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
                if sorted.windows(2).any(|w| w[1][0] < w[0][1]) {
                    return Err(Error::Coefficients("leak table rows overlap".into()));
                }
                if end <= 0.0 {
                    horizon * 0.5
                } else {
                    end
                }
            }
        };
        if !(horizon > t_m) {
            return Err(Error::Coefficients(format!(
                "leak support [0, {t_m}] must end before the horizon T = {horizon}"
            )));
        }
        Ok(Self { profile, t_m, horizon })
    }

    pub fn zero(horizon: f64) -> Self {
        Self {
            profile: LeakProfile::Table { rows: Vec::new() },
            t_m: 0.5 * horizon,
            horizon,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match &self.profile {
            LeakProfile::Pulse { amplitude, t_m } => {
                if (0.0..*t_m).contains(&t) {
                    *amplitude
                } else {
                    0.0
                }
            }
            LeakProfile::Table { rows } => rows.iter().find(|r| t >= r[0] && t < r[1]).map(|r| r[2]).unwrap_or(0.0),
        }
    }

    /// Exact `∫_{t0}^{t1} Φ dt`.
    pub fn integral(&self, t0: f64, t1: f64) -> f64 {
        let overlap = |a: f64, b: f64| (t1.min(b) - t0.max(a)).max(0.0);
        match &self.profile {
            LeakProfile::Pulse { amplitude, t_m } => amplitude * overlap(0.0, *t_m),
            LeakProfile::Table { rows } => rows.iter().map(|r| r[2] * overlap(r[0], r[1])).sum(),
        }
    }

    pub fn mean(&self, t0: f64, t1: f64) -> f64 {
        self.integral(t0, t1) / (t1 - t0)
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = match &self.profile {
            LeakProfile::Pulse { t_m, .. } => vec![*t_m],
            LeakProfile::Table { rows } => rows.iter().flat_map(|r| [r[0], r[1]]).collect(),
        };
        b.retain(|&t| t > 0.0 && t < self.horizon);
        b.sort_by(|a, b| a.partial_cmp(b).unwrap());
        b.dedup();
        b
    }

    pub fn is_zero(&self) -> bool {
        match &self.profile {
            LeakProfile::Pulse { amplitude, .. } => *amplitude == 0.0,
            LeakProfile::Table { rows } => rows.iter().all(|r| r[2] == 0.0),
        }
    }
}

/// Initial concentration `φ₀`, L-periodic in `x'` by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialField {
    Zero,
    Constant {
        value: f64,
    },
    /// Gaussian in `x_n` only.
    Layer {
        amplitude: f64,
        center: f64,
        width: f64,
    },
}

impl InitialField {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            InitialField::Zero => 0.0,
            InitialField::Constant { value } => *value,
            InitialField::Layer {
                amplitude,
                center,
                width,
            } => {
                let y = x[x.len() - 1];
                amplitude * (-((y - center) / width).powi(2)).exp()
            }
        }
    }
}

/// All coefficients of one transport problem.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportCoefficients {
    pub a: LayeredTensor,
    pub omega: LayeredScalar,
    pub velocity: LayeredVelocity,
    /// Decay constant `λ`.
    pub lambda: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::uniform_faces;

    fn layered(h: f64) -> LayeredTensor {
        LayeredTensor::new(Tensor::scaled_identity(2, 0.5), Tensor::identity(2), h, 1e-12).unwrap()
    }

    #[test]
    fn tensor_layers() {
        let a = layered(1.5);
        assert_eq!(a.eval(0.05, Some(0.05)).get(0, 0), 0.5);
        assert_eq!(a.eval(0.5, Some(0.05)).get(0, 0), 1.0);
        // Interface belongs to the outer layer.
        assert_eq!(a.eval(0.375, Some(0.25)).get(0, 0), 1.0);
        assert_eq!(a.eval(0.0, None).get(0, 0), 1.0);
        let same = LayeredTensor::constant(Tensor::identity(2));
        for x in [-0.4, 0.0, 0.3] {
            assert_eq!(same.eval(x, Some(0.1)), &Tensor::identity(2));
        }
    }

    #[test]
    fn tensor_even_in_xn() {
        let a = layered(1.5);
        for k in 0..50 {
            let x = k as f64 * 0.013;
            assert_eq!(a.eval(x, Some(0.07)), a.eval(-x, Some(0.07)));
        }
    }

    #[test]
    fn spd_check() {
        let good = Tensor::from_row_major(2, &[2.0, 0.5, 0.5, 1.0]).unwrap();
        let (lo, hi) = good.check_spd(1e-12).unwrap();
        let tr: f64 = 3.0;
        let det = 1.75;
        let disc = (tr * tr / 4.0 - det).sqrt();
        assert!((lo - (1.5 - disc)).abs() < 1e-12 && (hi - (1.5 + disc)).abs() < 1e-12);
        let indefinite = Tensor::from_row_major(2, &[1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(indefinite.check_spd(1e-12).is_err());
        let skew = Tensor::from_row_major(2, &[1.0, 0.1, 0.0, 1.0]).unwrap();
        assert!(skew.check_spd(1e-12).is_err());
    }

    #[test]
    fn decay_examples() {
        assert!((decay_constant(1.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((decay_constant(std::f64::consts::LN_2).unwrap() - 1.0).abs() < 1e-15);
        assert!(decay_constant(1e300).unwrap() < 1e-299);
        assert_eq!(decay_constant(f64::INFINITY).unwrap(), 0.0);
        assert!(decay_constant(0.0).is_err());
        assert!(decay_constant(-1.0).is_err());
    }

    fn square() -> TensorGrid {
        TensorGrid::new(
            vec![uniform_faces(-0.5, 0.5, 8), uniform_faces(-0.5, 0.5, 8)],
            vec![false, false],
        )
        .unwrap()
    }

    #[test]
    fn divergence_examples() {
        let g = square();
        let c = PointVelocity {
            n: 2,
            f: |_x: &[f64]| vec![0.3, -0.2],
        };
        assert!(check_divergence_free(&c, &g) < 1e-14);
        let rot = PointVelocity {
            n: 2,
            f: |x: &[f64]| vec![-x[1], x[0]],
        };
        assert!(check_divergence_free(&rot, &g) < 1e-13);
        let stretch = PointVelocity {
            n: 2,
            f: |x: &[f64]| vec![x[0], 0.0],
        };
        assert!((check_divergence_free(&stretch, &g) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cellular_is_discretely_divergence_free() {
        let g = TensorGrid::new(
            vec![
                uniform_faces(-0.5, 0.5, 12),
                vec![-0.5, -0.3, -0.01, 0.0, 0.02, 0.2, 0.5],
            ],
            vec![true, false],
        )
        .unwrap();
        let v = LayeredVelocity::new(
            VelocityKind::Cellular {
                amplitude: 0.7,
                period: 1.0,
            },
            1.5,
            2,
        )
        .unwrap();
        assert!(check_divergence_free(&v.scaled(Some(0.1)), &g) < 1e-12);
        let u = LayeredVelocity::new(
            VelocityKind::Uniform {
                inner: vec![0.1, -0.2],
                outer: vec![0.5, -0.2],
            },
            1.5,
            2,
        )
        .unwrap();
        assert!(check_divergence_free(&u.scaled(Some(0.1)), &g) < 1e-12);
        assert!(LayeredVelocity::new(
            VelocityKind::Uniform {
                inner: vec![0.1, -0.1],
                outer: vec![0.5, -0.2],
            },
            1.5,
            2
        )
        .is_err());
    }

    #[test]
    fn face_table_parses_and_checks() {
        let g = TensorGrid::new(
            vec![uniform_faces(0.0, 1.0, 2), uniform_faces(0.0, 1.0, 2)],
            vec![true, false],
        )
        .unwrap();
        let text = "# test\ndims 2 2\naxis 0\n1 1 1 1\naxis 1\n0 0 0 0 0 0\n";
        let t = FaceTable::parse(text).unwrap();
        assert!(t.matches(&g));
        let v = LayeredVelocity::new(VelocityKind::FaceTable(t), 1.0, 2).unwrap();
        assert!(check_divergence_free(&v.scaled(None), &g) < 1e-15);
        assert!(FaceTable::parse("dims 2 2\naxis 0\n1 1\n").is_err());
    }

    #[test]
    fn schedule_integrals() {
        let s = SourceSchedule::new(
            LeakProfile::Pulse {
                amplitude: 2.0,
                t_m: 0.1,
            },
            1.0,
        )
        .unwrap();
        assert_eq!(s.value(0.05), 2.0);
        assert_eq!(s.value(0.1), 0.0);
        assert!((s.integral(0.0, 1.0) - 0.2).abs() < 1e-15);
        assert!((s.integral(0.05, 0.5) - 0.1).abs() < 1e-15);
        assert_eq!(s.breakpoints(), vec![0.1]);
        let t = SourceSchedule::new(
            LeakProfile::Table {
                rows: vec![[0.0, 0.1, 1.0], [0.1, 0.2, 3.0]],
            },
            1.0,
        )
        .unwrap();
        assert!((t.t_m - 0.2).abs() < 1e-15);
        assert!((t.integral(0.05, 0.15) - 0.2).abs() < 1e-15);
        assert!(SourceSchedule::new(
            LeakProfile::Pulse {
                amplitude: 1.0,
                t_m: 2.0
            },
            1.0
        )
        .is_err());
    }
}
