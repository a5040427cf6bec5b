//! Cell-centred fields, time series, discrete norms and the text dump format.
//!
//! Dump format (one file per snapshot):
//!
//! ```text
//! # alveoli field
//! time 1.0000000000000000e-1
//! dims 64 40
//! faces 0 <d0+1 coordinates>
//! faces 1 <d1+1 coordinates>
//! mask <one 0/1 character per cell, axis 0 fastest>
//! values
//! <one value per line, axis 0 fastest; inactive cells hold 0>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::TensorGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: TensorGrid,
    pub mask: Vec<bool>,
    pub time: f64,
    pub values: Vec<f64>,
}

/// Snapshots of one solve on a fixed grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub grid: TensorGrid,
    pub mask: Vec<bool>,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(grid: TensorGrid, mask: Vec<bool>) -> Self {
        Self {
            grid,
            mask,
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, values: Vec<f64>) {
        self.times.push(t);
        self.values.push(values);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn field(&self, k: usize) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            mask: self.mask.clone(),
            time: self.times[k],
            values: self.values[k].clone(),
        }
    }

    pub fn last(&self) -> ScalarField {
        self.field(self.len() - 1)
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|v| v.iter().zip(&self.mask).filter(|(_, &m)| m).map(|(x, _)| x.abs()))
            .fold(0.0, f64::max)
    }
}

/// `Σ V φ²` over masked cells.
pub fn l2_norm_sq(grid: &TensorGrid, mask: &[bool], values: &[f64]) -> f64 {
    (0..grid.len())
        .filter(|&c| mask[c])
        .map(|c| grid.volume(c) * values[c] * values[c])
        .sum()
}

/// Weighted `Σ w V φ²`.
pub fn weighted_l2_sq(grid: &TensorGrid, mask: &[bool], weight: &[f64], values: &[f64]) -> f64 {
    (0..grid.len())
        .filter(|&c| mask[c])
        .map(|c| weight[c] * grid.volume(c) * values[c] * values[c])
        .sum()
}

/// Discrete `|∇φ|²_{L²}` from face differences between masked cells.
/// `skip(axis, lo, hi)` excludes faces (e.g. interfaces of a broken norm).
pub fn h1_seminorm_sq(
    grid: &TensorGrid,
    mask: &[bool],
    values: &[f64],
    skip: &dyn Fn(usize, usize, usize) -> bool,
) -> f64 {
    let mut s = 0.0;
    for c in 0..grid.len() {
        if !mask[c] {
            continue;
        }
        let idx = grid.multi_index(c);
        for axis in 0..grid.ndim() {
            let Some(nb) = grid.neighbor(c, axis, 1) else { continue };
            if !mask[nb] || skip(axis, c, nb) {
                continue;
            }
            let dist = 0.5 * (grid.width(axis, idx[axis]) + grid.width(axis, grid.multi_index(nb)[axis]));
            let area = grid.face_area(c, axis);
            let d = values[nb] - values[c];
            s += area * dist * (d / dist).powi(2);
        }
    }
    s
}

/// Skip rule that keeps every face.
pub fn no_skip(_: usize, _: usize, _: usize) -> bool {
    false
}

fn fmt_list(out: &mut String, xs: &[f64]) {
    for x in xs {
        let _ = write!(out, " {x:.17e}");
    }
}

pub fn format_field(f: &ScalarField) -> String {
    let g = &f.grid;
    let mut out = String::new();
    out.push_str("# alveoli field\n");
    let _ = writeln!(out, "time {:.17e}", f.time);
    out.push_str("dims");
    for d in g.dims() {
        let _ = write!(out, " {d}");
    }
    out.push('\n');
    for a in 0..g.ndim() {
        let _ = write!(out, "faces {a}");
        fmt_list(&mut out, g.faces(a));
        out.push('\n');
    }
    out.push_str("periodic");
    for a in 0..g.ndim() {
        let _ = write!(out, " {}", u8::from(g.is_periodic(a)));
    }
    out.push('\n');
    out.push_str("mask ");
    out.extend(f.mask.iter().map(|&m| if m { '1' } else { '0' }));
    out.push_str("\nvalues\n");
    for (v, &m) in f.values.iter().zip(&f.mask) {
        let _ = writeln!(out, "{:.17e}", if m { *v } else { 0.0 });
    }
    out
}

pub fn parse_field(text: &str) -> Result<ScalarField> {
    let bad = |m: &str| Error::Invalid(format!("field dump: {m}"));
    let mut time = None;
    let mut faces: Vec<Vec<f64>> = Vec::new();
    let mut periodic = Vec::new();
    let mut mask = Vec::new();
    let mut values = Vec::new();
    let mut in_values = false;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if in_values {
            values.push(line.parse::<f64>().map_err(|_| bad("bad value"))?);
            continue;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("time") => time = Some(tok.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad time"))?),
            Some("dims") => {}
            Some("faces") => {
                let _axis = tok.next();
                let f: std::result::Result<Vec<f64>, _> = tok.map(str::parse).collect();
                faces.push(f.map_err(|_| bad("bad face"))?);
            }
            Some("periodic") => periodic = tok.map(|t| t == "1").collect(),
            Some("mask") => mask = tok.next().unwrap_or("").chars().map(|c| c == '1').collect(),
            Some("values") => in_values = true,
            _ => return Err(bad("unknown line")),
        }
    }
    let grid = TensorGrid::new(faces, periodic)?;
    if mask.len() != grid.len() || values.len() != grid.len() {
        return Err(bad("size mismatch"));
    }
    Ok(ScalarField {
        grid,
        mask,
        time: time.ok_or_else(|| bad("missing time"))?,
        values,
    })
}

pub fn write_field(path: &Path, f: &ScalarField) -> Result<()> {
    std::fs::write(path, format_field(f))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::uniform_faces;

    fn grid() -> TensorGrid {
        TensorGrid::new(
            vec![uniform_faces(0.0, 1.0, 4), vec![-1.0, -0.2, 0.1, 1.0]],
            vec![true, false],
        )
        .unwrap()
    }

    #[test]
    fn dump_round_trip() {
        let g = grid();
        let mask: Vec<bool> = (0..g.len()).map(|c| c != 5).collect();
        let values: Vec<f64> = (0..g.len())
            .map(|c| if c == 5 { 0.0 } else { (c as f64).sin() / 3.0 })
            .collect();
        let f = ScalarField {
            grid: g,
            mask,
            time: 0.1,
            values,
        };
        let back = parse_field(&format_field(&f)).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn norms_of_constant_and_linear() {
        let g = grid();
        let mask = vec![true; g.len()];
        let ones = vec![1.0; g.len()];
        assert!((l2_norm_sq(&g, &mask, &ones) - 2.0).abs() < 1e-14);
        assert_eq!(h1_seminorm_sq(&g, &mask, &ones, &no_skip), 0.0);
        // φ = x₀ without periodic wrap: skip the wrap face.
        let lin: Vec<f64> = (0..g.len()).map(|c| g.cell_center(c)[0]).collect();
        let skip = |axis: usize, lo: usize, hi: usize| axis == 0 && hi < lo;
        let h = h1_seminorm_sq(&g, &mask, &lin, &skip);
        // Interior faces only: 3 of 4 columns of faces, each of height 2.
        assert!((h - 3.0 * 0.25 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_cell_perturbation_scales_with_volume() {
        let g = grid();
        let mask = vec![true; g.len()];
        let mut e = vec![0.0; g.len()];
        e[2] = 0.5;
        assert!((l2_norm_sq(&g, &mask, &e) - 0.25 * g.volume(2)).abs() < 1e-15);
    }
}
