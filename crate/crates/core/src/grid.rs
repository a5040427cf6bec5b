//! Structured tensor-product grids.
//!
//! Axis 0 varies fastest in the flat cell index. The last axis is always the
//! vertical one (the `x_n` direction across the repository plane).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorGrid {
    faces: Vec<Vec<f64>>,
    periodic: Vec<bool>,
    dims: Vec<usize>,
    strides: Vec<usize>,
}

impl TensorGrid {
    pub fn new(faces: Vec<Vec<f64>>, periodic: Vec<bool>) -> Result<Self> {
        if faces.is_empty() || faces.len() > 3 || faces.len() != periodic.len() {
            return Err(Error::Geometry(format!(
                "grid needs 1..=3 axes with matching periodic flags, got {} / {}",
                faces.len(),
                periodic.len()
            )));
        }
        for (axis, f) in faces.iter().enumerate() {
            if f.len() < 2 {
                return Err(Error::Geometry(format!("axis {axis} has no cells")));
            }
            if f.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Geometry(format!(
                    "axis {axis} face coordinates are not strictly increasing"
                )));
            }
        }
        let dims: Vec<usize> = faces.iter().map(|f| f.len() - 1).collect();
        let mut strides = vec![1; dims.len()];
        for a in 1..dims.len() {
            strides[a] = strides[a - 1] * dims[a - 1];
        }
        Ok(Self {
            faces,
            periodic,
            dims,
            strides,
        })
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn vertical_axis(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn faces(&self, axis: usize) -> &[f64] {
        &self.faces[axis]
    }

    pub fn is_periodic(&self, axis: usize) -> bool {
        self.periodic[axis]
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, mut cell: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for a in (0..self.ndim()).rev() {
            out[a] = cell / self.strides[a];
            cell %= self.strides[a];
        }
        out
    }

    pub fn width(&self, axis: usize, i: usize) -> f64 {
        self.faces[axis][i + 1] - self.faces[axis][i]
    }

    pub fn center(&self, axis: usize, i: usize) -> f64 {
        0.5 * (self.faces[axis][i] + self.faces[axis][i + 1])
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 3] {
        let idx = self.multi_index(cell);
        let mut c = [0.0; 3];
        for a in 0..self.ndim() {
            c[a] = self.center(a, idx[a]);
        }
        c
    }

    pub fn volume(&self, cell: usize) -> f64 {
        let idx = self.multi_index(cell);
        (0..self.ndim()).map(|a| self.width(a, idx[a])).product()
    }

    /// Area of the face normal to `axis` bounding `cell`.
    pub fn face_area(&self, cell: usize, axis: usize) -> f64 {
        let idx = self.multi_index(cell);
        (0..self.ndim())
            .filter(|&a| a != axis)
            .map(|a| self.width(a, idx[a]))
            .product()
    }

    pub fn extent(&self, axis: usize) -> (f64, f64) {
        let f = &self.faces[axis];
        (f[0], f[f.len() - 1])
    }

    /// Neighbour across the `+` (side = +1) or `-` face along `axis`,
    /// wrapping on periodic axes.
    pub fn neighbor(&self, cell: usize, axis: usize, side: i32) -> Option<usize> {
        let idx = self.multi_index(cell);
        let i = idx[axis];
        let n = self.dims[axis];
        let j = if side > 0 {
            if i + 1 < n {
                i + 1
            } else if self.periodic[axis] && n > 1 {
                0
            } else {
                return None;
            }
        } else if i > 0 {
            i - 1
        } else if self.periodic[axis] && n > 1 {
            n - 1
        } else {
            return None;
        };
        Some(cell - i * self.strides[axis] + j * self.strides[axis])
    }

    /// Index of the face closest to `x` along `axis`, with its distance.
    pub fn nearest_face(&self, axis: usize, x: f64) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, &f) in self.faces[axis].iter().enumerate() {
            let d = (f - x).abs();
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    /// Cell index along `axis` containing coordinate `x` (clamped).
    pub fn locate(&self, axis: usize, x: f64) -> usize {
        let f = &self.faces[axis];
        match f.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
            Ok(k) => k.min(self.dims[axis] - 1),
            Err(k) => k.saturating_sub(1).min(self.dims[axis] - 1),
        }
    }
}

/// Uniform faces on `[lo, hi]` with `n` cells.
pub fn uniform_faces(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / n as f64;
    (0..=n).map(|k| if k == n { hi } else { lo + k as f64 * h }).collect()
}

/// Faces strictly inside `(y0, y1]` growing geometrically from `h_start`
/// by `ratio` and capped at `h_max`; the steps are shrunk uniformly so the
/// last face is exactly `y1`.
pub fn graded_segment(y0: f64, y1: f64, h_start: f64, ratio: f64, h_max: f64) -> Vec<f64> {
    let len = y1 - y0;
    if len <= 0.0 {
        return Vec::new();
    }
    let mut steps = Vec::new();
    let mut h = h_start.min(h_max).max(1e-300);
    let mut sum = 0.0;
    while sum < len {
        steps.push(h);
        sum += h;
        h = (h * ratio).min(h_max);
    }
    let scale = len / sum;
    let mut out = Vec::with_capacity(steps.len());
    let mut y = y0;
    for (i, s) in steps.iter().enumerate() {
        y = if i + 1 == steps.len() { y1 } else { y + s * scale };
        out.push(y);
    }
    out
}

/// Recipe for a vertical face set symmetric about zero.
#[derive(Debug, Clone)]
pub struct VerticalLayout {
    /// Positive anchor heights that must coincide with faces, e.g. hole top.
    pub anchors: Vec<f64>,
    /// Spacing of the uniform innermost zone `[0, anchors[0]]`.
    pub inner_spacing: f64,
    /// Geometric growth ratio between zones.
    pub growth: f64,
    /// Maximum spacing below `fine_until`.
    pub fine_spacing: f64,
    /// Height up to which `fine_spacing` caps the cells.
    pub fine_until: f64,
    /// Maximum spacing beyond `fine_until`.
    pub coarse_spacing: f64,
    /// Half-height of the column.
    pub half_height: f64,
}

impl VerticalLayout {
    pub fn build(&self) -> Result<Vec<f64>> {
        let mut anchors: Vec<f64> = self
            .anchors
            .iter()
            .copied()
            .filter(|&a| a > 0.0 && a < self.half_height)
            .collect();
        anchors.push(self.half_height);
        if self.fine_until > 0.0 && self.fine_until < self.half_height {
            anchors.push(self.fine_until);
        }
        anchors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        anchors.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * self.half_height);

        let mut pos = vec![0.0];
        let mut h_prev = self.inner_spacing;
        let first = anchors[0];
        let n_inner = (first / self.inner_spacing - 1e-9).ceil().max(1.0) as usize;
        for k in 1..=n_inner {
            pos.push(if k == n_inner {
                first
            } else {
                first * k as f64 / n_inner as f64
            });
        }
        h_prev = h_prev.min(first / n_inner as f64);
        for w in anchors.windows(2) {
            let (a, b) = (w[0], w[1]);
            let cap = if a < self.fine_until - 1e-12 {
                self.fine_spacing
            } else {
                self.coarse_spacing
            };
            let seg = graded_segment(a, b, h_prev * self.growth, self.growth, cap);
            if let Some(&last) = seg.last() {
                let before = if seg.len() >= 2 { seg[seg.len() - 2] } else { a };
                h_prev = last - before;
            }
            pos.extend(seg);
        }
        let mut faces: Vec<f64> = pos.iter().rev().map(|&y| -y).collect();
        faces.pop();
        faces.extend(pos);
        // Exact mirror symmetry.
        let n = faces.len();
        for i in 0..n / 2 {
            faces[i] = -faces[n - 1 - i];
        }
        faces[n / 2] = 0.0;
        if faces.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Geometry("vertical layout produced degenerate cells".into()));
        }
        Ok(faces)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_neighbors_wrap() {
        let g = TensorGrid::new(
            vec![uniform_faces(0.0, 1.0, 4), uniform_faces(0.0, 1.0, 3)],
            vec![true, false],
        )
        .unwrap();
        let c = g.index(&[3, 1]);
        assert_eq!(g.neighbor(c, 0, 1), Some(g.index(&[0, 1])));
        assert_eq!(g.neighbor(g.index(&[0, 0]), 1, -1), None);
        assert_eq!(g.multi_index(c)[..2], [3, 1]);
    }

    #[test]
    fn graded_segment_hits_end() {
        let s = graded_segment(0.1, 1.0, 0.01, 1.2, 0.1);
        assert_eq!(*s.last().unwrap(), 1.0);
        assert!(s.windows(2).all(|w| w[1] > w[0]));
        let steps: Vec<f64> = std::iter::once(s[0] - 0.1)
            .chain(s.windows(2).map(|w| w[1] - w[0]))
            .collect();
        assert!(steps.iter().all(|&h| h <= 0.1 + 1e-12));
    }

    #[test]
    fn vertical_layout_symmetric_with_anchors() {
        let lay = VerticalLayout {
            anchors: vec![1.0 / 256.0, 0.09375, 0.3466],
            inner_spacing: 1.0 / 512.0,
            growth: 1.2,
            fine_spacing: 1.0 / 128.0,
            fine_until: 0.4,
            coarse_spacing: 1.0 / 32.0,
            half_height: 0.5,
        };
        let f = lay.build().unwrap();
        let n = f.len();
        for i in 0..n {
            assert_eq!(f[i], -f[n - 1 - i]);
        }
        for a in [0.0, 1.0 / 256.0, 0.09375, 0.3466, 0.5] {
            assert!(f.iter().any(|&y| (y - a).abs() < 1e-15), "missing {a}");
        }
        assert!(f.windows(2).all(|w| w[1] - w[0] <= 1.0 / 32.0 + 1e-12));
    }
}
