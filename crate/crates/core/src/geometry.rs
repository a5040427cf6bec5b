//! Box domain, periodic alveolus array, perforated grids, strip domains for
//! the cell problems and the three-region split around the repository plane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{uniform_faces, TensorGrid, VerticalLayout};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub n: usize,
    pub side: f64,
}

impl BoxDomain {
    pub fn new(n: usize, side: f64) -> Result<Self> {
        if !(n == 2 || n == 3) {
            return Err(Error::Geometry(format!("dimension must be 2 or 3, got {n}")));
        }
        if !(side > 0.0) || !side.is_finite() {
            return Err(Error::Geometry(format!("side length must be positive, got {side}")));
        }
        Ok(Self { n, side })
    }

    pub fn half(&self) -> f64 {
        0.5 * self.side
    }

    /// Height of the repository plane.
    pub fn sigma_height(&self) -> f64 {
        0.0
    }
}

/// The periodic array of rectangular alveoli `ε(α + M) × ]−ε^β, ε^β[`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlveolusArray {
    /// Half-widths of `M` in units of the periodicity cell.
    pub m: Vec<f64>,
    pub eps: f64,
    pub beta: f64,
}

impl AlveolusArray {
    pub fn new(m: Vec<f64>, eps: f64, beta: f64) -> Result<Self> {
        if m.is_empty() || m.len() > 2 {
            return Err(Error::Geometry(format!(
                "obstacle needs 1 or 2 half-widths, got {}",
                m.len()
            )));
        }
        for (i, &mi) in m.iter().enumerate() {
            if !(mi > 0.0 && mi < 0.5) {
                return Err(Error::Geometry(format!("m[{i}] = {mi} outside ]0, 1/2[")));
            }
        }
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::Geometry(format!("eps must be positive, got {eps}")));
        }
        if !(beta > 1.0) || !beta.is_finite() {
            return Err(Error::Geometry(format!("beta must exceed 1, got {beta}")));
        }
        Ok(Self { m, eps, beta })
    }

    pub fn lateral_dims(&self) -> usize {
        self.m.len()
    }

    /// Hole half-height `ε^β`.
    pub fn half_height(&self) -> f64 {
        self.eps.powf(self.beta)
    }

    /// Number of periods `L/ε`, rejecting non-integer ratios.
    pub fn periods(&self, side: f64) -> Result<usize> {
        let r = side / self.eps;
        let k = r.round();
        if k < 1.0 || (r - k).abs() > 1e-9 * r.max(1.0) {
            return Err(Error::Geometry(format!("L/eps = {r} is not a positive integer")));
        }
        Ok(k as usize)
    }
}

/// `|M| = ∏ 2 m_i`.
pub fn obstacle_measure(array: &AlveolusArray) -> f64 {
    array.m.iter().map(|m| 2.0 * m).product()
}

/// Perimeter of the rectangle `M` (for `n = 2` the count of its two end points).
pub fn obstacle_perimeter(m: &[f64]) -> f64 {
    (0..m.len())
        .map(|i| {
            2.0 * m
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, mj)| 2.0 * mj)
                .product::<f64>()
        })
        .sum()
}

/// Surface measure of the scaled obstacle `P_ε = M × ]−ε^{β−1}, ε^{β−1}[`.
pub fn hole_boundary_measure(array: &AlveolusArray) -> f64 {
    2.0 * obstacle_measure(array) + 2.0 * array.eps.powf(array.beta - 1.0) * obstacle_perimeter(&array.m)
}

/// Resolution controls for [`build_perforated_grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridResolution {
    /// Lateral cells per period ε.
    pub cells_per_eps: usize,
    /// Vertical cells across the hole half-height ε^β.
    #[serde(default = "default_hole_cells")]
    pub hole_cells: usize,
    /// Vertical cells per ε inside the refined zone.
    #[serde(default = "default_band_cells")]
    pub band_cells_per_eps: usize,
    #[serde(default = "default_growth")]
    pub growth: f64,
    /// Largest vertical spacing far from the array, as a fraction of L.
    #[serde(default = "default_outer_fraction")]
    pub outer_fraction: f64,
    /// The refined zone extends to this many ε beyond the band plane.
    #[serde(default = "default_margin")]
    pub margin_eps: f64,
}

fn default_hole_cells() -> usize {
    2
}
fn default_band_cells() -> usize {
    8
}
fn default_growth() -> f64 {
    1.2
}
fn default_outer_fraction() -> f64 {
    1.0 / 32.0
}
fn default_margin() -> f64 {
    2.0
}

impl GridResolution {
    pub fn with_cells_per_eps(cells_per_eps: usize) -> Self {
        Self {
            cells_per_eps,
            hole_cells: default_hole_cells(),
            band_cells_per_eps: default_band_cells(),
            growth: default_growth(),
            outer_fraction: default_outer_fraction(),
            margin_eps: default_margin(),
        }
    }
}

/// Extra heights the vertical grid must resolve exactly.
#[derive(Debug, Clone, Default)]
pub struct VerticalAnchors {
    /// Layer half-height `εh` of the inner coefficient layer.
    pub layer: Option<f64>,
    /// Band half-width `dε log(1/ε)`.
    pub band: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceTag {
    Interior,
    Hole(u32),
    Top,
    Bottom,
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoleFace {
    pub cell: usize,
    pub axis: usize,
    /// +1 if the hole lies on the `+` side of the fluid cell.
    pub side: i32,
    pub hole: u32,
    pub area: f64,
}

/// Structured grid of the box with the alveoli masked out.
#[derive(Debug, Clone)]
pub struct PerforatedGrid {
    pub grid: TensorGrid,
    pub domain: BoxDomain,
    pub array: AlveolusArray,
    hole_of_cell: Vec<Option<u32>>,
    periods: usize,
}

impl PerforatedGrid {
    pub fn hole_count(&self) -> usize {
        self.periods.pow(self.array.lateral_dims() as u32)
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn hole_of(&self, cell: usize) -> Option<u32> {
        self.hole_of_cell[cell]
    }

    pub fn is_fluid(&self, cell: usize) -> bool {
        self.hole_of_cell[cell].is_none()
    }

    pub fn fluid_mask(&self) -> Vec<bool> {
        self.hole_of_cell.iter().map(|h| h.is_none()).collect()
    }

    pub fn face_tag(&self, cell: usize, axis: usize, side: i32) -> FaceTag {
        match self.grid.neighbor(cell, axis, side) {
            None => {
                if side > 0 {
                    FaceTag::Top
                } else {
                    FaceTag::Bottom
                }
            }
            Some(nb) => {
                if let (None, Some(h)) = (self.hole_of_cell[cell], self.hole_of_cell[nb]) {
                    return FaceTag::Hole(h);
                }
                let i = self.grid.multi_index(cell)[axis];
                let wraps = (side > 0 && i + 1 == self.grid.dims()[axis]) || (side < 0 && i == 0);
                if wraps {
                    FaceTag::Periodic
                } else {
                    FaceTag::Interior
                }
            }
        }
    }

    /// All fluid-cell faces bordering a hole.
    pub fn hole_faces(&self) -> Vec<HoleFace> {
        let mut out = Vec::new();
        for cell in 0..self.grid.len() {
            if !self.is_fluid(cell) {
                continue;
            }
            for axis in 0..self.grid.ndim() {
                for side in [-1, 1] {
                    if let FaceTag::Hole(hole) = self.face_tag(cell, axis, side) {
                        out.push(HoleFace {
                            cell,
                            axis,
                            side,
                            hole,
                            area: self.grid.face_area(cell, axis),
                        });
                    }
                }
            }
        }
        out
    }

    pub fn hole_boundary_areas(&self) -> Vec<f64> {
        let mut areas = vec![0.0; self.hole_count()];
        for f in self.hole_faces() {
            areas[f.hole as usize] += f.area;
        }
        areas
    }

    pub fn hole_volume(&self) -> f64 {
        (0..self.grid.len())
            .filter(|&c| !self.is_fluid(c))
            .map(|c| self.grid.volume(c))
            .sum()
    }
}

fn hole_membership(x: &[f64], array: &AlveolusArray, periods: usize) -> Option<u32> {
    let n = x.len();
    let xn = x[n - 1];
    if xn.abs() >= array.half_height() {
        return None;
    }
    let mut id = 0u32;
    let mut mult = 1u32;
    for a in 0..n - 1 {
        let u = x[a] / array.eps;
        let alpha = u.round();
        if (u - alpha).abs() >= array.m[a] {
            return None;
        }
        let k = (alpha as i64).rem_euclid(periods as i64) as u32;
        id += k * mult;
        mult *= periods as u32;
    }
    Some(id)
}

fn require_face(faces: &[f64], x: f64, what: &str) -> Result<()> {
    let tol = 1e-9 * (faces[faces.len() - 1] - faces[0]);
    let (lo, hi) = (faces[0], faces[faces.len() - 1]);
    // Hole edges outside the box wrap around periodically.
    let span = hi - lo;
    let xw = lo + (x - lo).rem_euclid(span);
    if faces
        .iter()
        .any(|&f| (f - xw).abs() <= tol || (f - xw - span).abs() <= tol || (f - xw + span).abs() <= tol)
    {
        Ok(())
    } else {
        Err(Error::Geometry(format!(
            "{what} at {x} does not fall on a grid face; adjust the resolution"
        )))
    }
}

/// Builds the perforated grid of the box for one value of ε.
pub fn build_perforated_grid(
    domain: &BoxDomain,
    array: &AlveolusArray,
    res: &GridResolution,
    anchors: &VerticalAnchors,
) -> Result<PerforatedGrid> {
    if array.lateral_dims() != domain.n - 1 {
        return Err(Error::Geometry(format!(
            "obstacle has {} half-widths but the box has dimension {}",
            array.lateral_dims(),
            domain.n
        )));
    }
    let periods = array.periods(domain.side)?;
    if res.cells_per_eps == 0 {
        return Err(Error::Geometry("cells_per_eps must be positive".into()));
    }
    if res.hole_cells < 2 {
        return Err(Error::Geometry(format!(
            "hole half-height eps^beta spans {} vertical cells; at least 2 are needed",
            res.hole_cells
        )));
    }
    if !(res.growth >= 1.0) {
        return Err(Error::Geometry("grid growth ratio must be at least 1".into()));
    }
    let half = domain.half();
    let t = array.half_height();
    if t >= half {
        return Err(Error::Geometry(format!(
            "hole half-height {t} reaches the box boundary"
        )));
    }
    let eps = array.eps;
    let mut faces = Vec::with_capacity(domain.n);
    for a in 0..domain.n - 1 {
        let f = uniform_faces(-half, half, periods * res.cells_per_eps);
        for k in 0..periods as i64 {
            let c = (k - periods as i64 / 2) as f64 * eps;
            require_face(&f, c - array.m[a] * eps, "hole edge")?;
            require_face(&f, c + array.m[a] * eps, "hole edge")?;
        }
        faces.push(f);
    }
    let band = anchors.band.unwrap_or(0.0);
    let layer = anchors.layer.unwrap_or(0.0);
    let fine_until = (band.max(layer).max(t) + res.margin_eps * eps).min(half);
    let mut a = vec![t];
    a.extend(anchors.layer.filter(|&l| l > t));
    a.extend(anchors.band.filter(|&b| b > t));
    let layout = VerticalLayout {
        anchors: a,
        inner_spacing: t / res.hole_cells as f64,
        growth: res.growth,
        fine_spacing: eps / res.band_cells_per_eps as f64,
        fine_until,
        coarse_spacing: res.outer_fraction * domain.side,
        half_height: half,
    };
    faces.push(layout.build()?);
    let mut periodic = vec![true; domain.n];
    periodic[domain.n - 1] = false;
    let grid = TensorGrid::new(faces, periodic)?;

    let hole_of_cell = (0..grid.len())
        .map(|c| {
            let x = grid.cell_center(c);
            hole_membership(&x[..domain.n], array, periods)
        })
        .collect();
    Ok(PerforatedGrid {
        grid,
        domain: *domain,
        array: array.clone(),
        hole_of_cell,
        periods,
    })
}

/// Unperforated grid sharing the faces of `pg`.
pub fn full_mask(pg: &PerforatedGrid) -> Vec<bool> {
    vec![true; pg.grid.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Upper,
    Lower,
    Band,
}

/// Split of the box into `Ω⁺_ε`, `Ω⁻_ε` and the band `G_ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionDecomposition {
    pub d: f64,
    pub eps: f64,
    /// `b = d ε log(1/ε)`.
    pub band: f64,
    pub near_degenerate: bool,
}

pub fn decompose_regions(domain: &BoxDomain, eps: f64, d: f64) -> Result<RegionDecomposition> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Geometry(format!("eps must lie in ]0,1[, got {eps}")));
    }
    if !(d >= 2.0) {
        return Err(Error::Geometry(format!("band constant d must be at least 2, got {d}")));
    }
    let band = d * eps * (1.0 / eps).ln();
    let half = domain.half();
    if band >= half {
        return Err(Error::Geometry(format!(
            "band half-width {band:.4} reaches the box half-height {half}"
        )));
    }
    Ok(RegionDecomposition {
        d,
        eps,
        band,
        near_degenerate: half - band < 0.1 * half,
    })
}

/// Band planes snapped to grid faces.
#[derive(Debug, Clone, PartialEq)]
pub struct SnappedBand {
    /// Vertical face index of `Σ⁺_ε`.
    pub upper_face: usize,
    /// Vertical face index of `Σ⁻_ε`.
    pub lower_face: usize,
    pub upper: f64,
    pub lower: f64,
    pub snap_distance: f64,
}

impl RegionDecomposition {
    pub fn snap(&self, grid: &TensorGrid) -> Result<SnappedBand> {
        let v = grid.vertical_axis();
        let (ku, du) = grid.nearest_face(v, self.band);
        let (kl, dl) = grid.nearest_face(v, -self.band);
        let nf = grid.faces(v).len();
        if ku == 0 || ku + 1 == nf || kl == 0 || kl + 1 == nf || kl >= ku {
            return Err(Error::Geometry("band planes snap onto the box boundary".into()));
        }
        let f = grid.faces(v);
        for (k, dist) in [(ku, du), (kl, dl)] {
            let h = (f[k + 1] - f[k]).max(f[k] - f[k - 1]);
            if dist > 0.5 * h + 1e-12 {
                return Err(Error::Geometry(format!(
                    "band plane snap distance {dist} exceeds half a cell"
                )));
            }
        }
        Ok(SnappedBand {
            upper_face: ku,
            lower_face: kl,
            upper: f[ku],
            lower: f[kl],
            snap_distance: du.max(dl),
        })
    }
}

impl SnappedBand {
    pub fn region_of_height(&self, y: f64) -> Region {
        if y > self.upper {
            Region::Upper
        } else if y < self.lower {
            Region::Lower
        } else {
            Region::Band
        }
    }

    pub fn region(&self, grid: &TensorGrid, cell: usize) -> Region {
        let v = grid.vertical_axis();
        let k = grid.multi_index(cell)[v];
        if k >= self.upper_face {
            Region::Upper
        } else if k < self.lower_face {
            Region::Lower
        } else {
            Region::Band
        }
    }

    /// Whether the vertical face between vertical cell rows `k-1` and `k`
    /// lies on one of the band planes.
    pub fn is_plane(&self, k: usize) -> bool {
        k == self.upper_face || k == self.lower_face
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StripMode {
    /// Obstacle `M × ]−ε^{β−1}, ε^{β−1}[`.
    Scaled,
    /// Obstacle `M × {0}`, a double-sided internal face set.
    Flat,
}

/// Truncated periodic strip `]−1/2, 1/2[^{n−1} × ]−Y, Y[` minus the obstacle.
#[derive(Debug, Clone, PartialEq)]
pub struct StripDomain {
    pub mode: StripMode,
    pub m: Vec<f64>,
    pub eps: f64,
    pub beta: f64,
    pub truncation: f64,
    /// Strip without any obstacle.
    pub empty: bool,
}

impl StripDomain {
    pub fn new(mode: StripMode, m: Vec<f64>, eps: f64, beta: f64, truncation: f64) -> Result<Self> {
        AlveolusArray::new(m.clone(), eps, beta)?;
        if !(truncation >= 2.0) {
            return Err(Error::Geometry(format!(
                "strip truncation Y = {truncation} must be at least 2"
            )));
        }
        let s = Self {
            mode,
            m,
            eps,
            beta,
            truncation,
            empty: false,
        };
        if s.mode == StripMode::Scaled && s.obstacle_half_height() >= 0.5 {
            return Err(Error::Geometry(
                "scaled obstacle reaches the cut-off transition |y_n| = 1/2".into(),
            ));
        }
        Ok(s)
    }

    pub fn without_obstacle(mut self) -> Self {
        self.empty = true;
        self
    }

    pub fn with_truncation(&self, truncation: f64) -> Self {
        Self {
            truncation,
            ..self.clone()
        }
    }

    pub fn lateral_dims(&self) -> usize {
        self.m.len()
    }

    /// `ε^{β−1}` (zero in flat mode).
    pub fn obstacle_half_height(&self) -> f64 {
        match self.mode {
            StripMode::Scaled => self.eps.powf(self.beta - 1.0),
            StripMode::Flat => 0.0,
        }
    }

    /// `|∂P_ε|`, or `2|M|` for the flat obstacle.
    pub fn obstacle_boundary_measure(&self) -> f64 {
        if self.empty {
            return 0.0;
        }
        let m_area: f64 = self.m.iter().map(|m| 2.0 * m).product();
        2.0 * m_area + 2.0 * self.obstacle_half_height() * obstacle_perimeter(&self.m)
    }

    pub fn in_footprint(&self, y: &[f64]) -> bool {
        !self.empty && self.m.iter().enumerate().all(|(a, &m)| y[a].abs() < m)
    }
}

/// Resolution of a standalone strip grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StripResolution {
    /// Lateral cells across the unit period.
    pub cells_per_unit: usize,
    /// Vertical cells across the obstacle half-height (scaled geometry).
    #[serde(default = "default_obstacle_cells")]
    pub obstacle_cells: usize,
    #[serde(default = "default_growth")]
    pub growth: f64,
    /// Largest vertical spacing, in strip units.
    #[serde(default = "default_strip_spacing")]
    pub max_spacing: f64,
}

fn default_obstacle_cells() -> usize {
    4
}
fn default_strip_spacing() -> f64 {
    1.0 / 16.0
}

/// Strip grid with faces at 0, `±ε^{β−1}`, `±h` and `±Y`; the same grid
/// carries both the scaled and the flat obstacle.
pub fn build_strip_grid(strip: &StripDomain, res: &StripResolution, layer: Option<f64>) -> Result<TensorGrid> {
    let t = strip.eps.powf(strip.beta - 1.0);
    let lat = uniform_faces(-0.5, 0.5, res.cells_per_unit);
    for &m in &strip.m {
        require_face(&lat, m, "obstacle edge")?;
        require_face(&lat, -m, "obstacle edge")?;
    }
    let mut anchors = vec![t, 0.5, 1.0];
    anchors.extend(layer.filter(|&h| h > 0.0));
    let layout = VerticalLayout {
        anchors,
        inner_spacing: t / res.obstacle_cells.max(2) as f64,
        growth: res.growth,
        fine_spacing: res.max_spacing,
        fine_until: strip.truncation,
        coarse_spacing: res.max_spacing,
        half_height: strip.truncation,
    };
    let mut faces = vec![lat; strip.lateral_dims()];
    faces.push(layout.build()?);
    let mut periodic = vec![true; faces.len()];
    *periodic.last_mut().unwrap() = false;
    TensorGrid::new(faces, periodic)
}

/// Strip grid whose cells are the micro grid cells of one period around the
/// hole at the origin, rescaled by `1/ε` and cut at `|y_n| ≤ Y`.
pub fn strip_grid_from_micro(pg: &PerforatedGrid, truncation: f64) -> Result<TensorGrid> {
    let eps = pg.array.eps;
    let g = &pg.grid;
    let n = g.ndim();
    let mut faces = Vec::with_capacity(n);
    for a in 0..n - 1 {
        let f = g.faces(a);
        let lo = f.iter().position(|&x| (x / eps + 0.5).abs() < 1e-9);
        let hi = f.iter().position(|&x| (x / eps - 0.5).abs() < 1e-9);
        match (lo, hi) {
            (Some(lo), Some(hi)) => {
                let mut s: Vec<f64> = f[lo..=hi].iter().map(|x| x / eps).collect();
                s[0] = -0.5;
                *s.last_mut().unwrap() = 0.5;
                faces.push(s);
            }
            _ => {
                return Err(Error::Geometry(
                    "micro grid has no faces at ±ε/2; use an even cells_per_eps".into(),
                ))
            }
        }
    }
    let v: Vec<f64> = g
        .faces(n - 1)
        .iter()
        .map(|y| y / eps)
        .filter(|y| y.abs() <= truncation + 1e-9)
        .collect();
    if v.len() < 4 || v[0] > -2.0 || *v.last().unwrap() < 2.0 {
        return Err(Error::Geometry(format!(
            "micro grid does not reach |y_n| = {truncation} in strip units"
        )));
    }
    faces.push(v);
    let mut periodic = vec![true; n];
    periodic[n - 1] = false;
    TensorGrid::new(faces, periodic)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk(eps: f64, cells: usize) -> PerforatedGrid {
        let domain = BoxDomain::new(2, 1.0).unwrap();
        let array = AlveolusArray::new(vec![0.25], eps, 2.0).unwrap();
        build_perforated_grid(
            &domain,
            &array,
            &GridResolution::with_cells_per_eps(cells),
            &VerticalAnchors {
                layer: Some(1.5 * eps),
                band: None,
            },
        )
        .unwrap()
    }

    #[test]
    fn hole_count_quarter() {
        let pg = desk(0.25, 8);
        assert_eq!(pg.hole_count(), 4);
        let areas = pg.hole_boundary_areas();
        assert_eq!(areas.len(), 4);
        // |Γ_α| = ε(2|M| + 4 ε^{β−1}) in 2-D.
        let exact = 0.25 * (2.0 * 0.5 + 4.0 * 0.25);
        for a in areas {
            assert!((a - exact).abs() < 1e-12, "{a} vs {exact}");
        }
    }

    #[test]
    fn thirty_holes() {
        let pg = desk(1.0 / 30.0, 8);
        assert_eq!(pg.hole_count(), 30);
        let mut seen = [false; 30];
        for c in 0..pg.grid.len() {
            if let Some(h) = pg.hole_of(c) {
                seen[h as usize] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn non_integer_period_rejected() {
        let domain = BoxDomain::new(2, 1.0).unwrap();
        let ok = AlveolusArray::new(vec![0.25], 1.0 / 3.0, 2.0).unwrap();
        assert_eq!(ok.periods(domain.side).unwrap(), 3);
        let bad = AlveolusArray::new(vec![0.25], 0.3, 2.0).unwrap();
        let err = build_perforated_grid(
            &domain,
            &bad,
            &GridResolution::with_cells_per_eps(8),
            &VerticalAnchors::default(),
        );
        assert!(matches!(err, Err(Error::Geometry(_))));
    }

    #[test]
    fn unresolved_hole_rejected() {
        let domain = BoxDomain::new(2, 1.0).unwrap();
        let array = AlveolusArray::new(vec![0.25], 0.25, 2.0).unwrap();
        let mut res = GridResolution::with_cells_per_eps(8);
        res.hole_cells = 1;
        assert!(build_perforated_grid(&domain, &array, &res, &VerticalAnchors::default()).is_err());
    }

    #[test]
    fn measures() {
        let a = AlveolusArray::new(vec![0.25], 0.1, 2.0).unwrap();
        assert!((obstacle_measure(&a) - 0.5).abs() < 1e-15);
        assert!((hole_boundary_measure(&a) - 1.4).abs() < 1e-12);
        let b = AlveolusArray::new(vec![0.25, 0.1], 0.1, 2.0).unwrap();
        assert!((obstacle_measure(&b) - 0.1).abs() < 1e-15);
        let c = AlveolusArray::new(vec![0.25, 0.25], 0.1, 2.0).unwrap();
        assert!((hole_boundary_measure(&c) - 0.9).abs() < 1e-12);
        let edge = AlveolusArray::new(vec![0.5 - 1e-9], 0.1, 2.0).unwrap();
        assert!((obstacle_measure(&edge) - (1.0 - 2e-9)).abs() < 1e-15);
        let tiny = AlveolusArray::new(vec![0.25], 1e-8, 2.0).unwrap();
        assert!((hole_boundary_measure(&tiny) - 1.0).abs() < 1e-7);
        assert!(AlveolusArray::new(vec![0.5], 0.1, 2.0).is_err());
        assert!(AlveolusArray::new(vec![0.25], 0.1, 1.0).is_err());
    }

    #[test]
    fn hole_volume_fraction() {
        let pg = desk(0.125, 8);
        let a = &pg.array;
        let expected = obstacle_measure(a) * a.eps * 2.0 * a.half_height() * pg.hole_count() as f64;
        assert!((pg.hole_volume() - expected).abs() < 1e-12);
    }

    #[test]
    fn measures_independent_of_refinement() {
        let coarse = desk(0.125, 8);
        let fine = desk(0.125, 16);
        assert_eq!(coarse.hole_count(), fine.hole_count());
        let ca = coarse.hole_boundary_areas();
        let fa = fine.hole_boundary_areas();
        for (c, f) in ca.iter().zip(&fa) {
            assert!((c - f).abs() < 1e-12);
        }
    }

    #[test]
    fn hole_faces_tagged_once() {
        let pg = desk(0.25, 8);
        for f in pg.hole_faces() {
            let nb = pg.grid.neighbor(f.cell, f.axis, f.side).unwrap();
            assert_eq!(pg.hole_of(nb), Some(f.hole));
        }
    }

    #[test]
    fn region_examples() {
        let d = BoxDomain::new(2, 1.0).unwrap();
        let r = decompose_regions(&d, 0.1, 2.0).unwrap();
        assert!((r.band - 0.2 * 10f64.ln()).abs() < 1e-12);
        assert!(r.near_degenerate);
        let r = decompose_regions(&d, 0.05, 2.0).unwrap();
        assert!((r.band - 0.29957).abs() < 1e-4);
        assert!(!r.near_degenerate);
        assert!(decompose_regions(&d, 0.2, 3.0).is_err());
        assert!(decompose_regions(&d, 0.05, 1.5).is_err());
    }

    #[test]
    fn regions_partition_volume() {
        let pg = desk(0.0625, 8);
        let r = decompose_regions(&pg.domain, 0.0625, 2.0).unwrap();
        let s = r.snap(&pg.grid).unwrap();
        let mut vol = [0.0; 3];
        for c in 0..pg.grid.len() {
            let k = match s.region(&pg.grid, c) {
                Region::Upper => 0,
                Region::Lower => 1,
                Region::Band => 2,
            };
            vol[k] += pg.grid.volume(c);
        }
        let total: f64 = vol.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((vol[2] - (s.upper - s.lower)).abs() < 1e-12);
    }

    #[test]
    fn strip_measures() {
        let s = StripDomain::new(StripMode::Scaled, vec![0.25], 0.1, 2.0, 4.0).unwrap();
        assert!((s.obstacle_boundary_measure() - 1.4).abs() < 1e-12);
        let f = StripDomain::new(StripMode::Flat, vec![0.25], 0.1, 2.0, 4.0).unwrap();
        assert!((f.obstacle_boundary_measure() - 1.0).abs() < 1e-12);
        assert!(StripDomain::new(StripMode::Flat, vec![0.25], 0.1, 2.0, 1.0).is_err());
    }
}
