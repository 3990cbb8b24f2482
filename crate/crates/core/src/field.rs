//! Dense fields over the centred box `[-R, R]^dim` and the convolution step
//! they evolve by.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::kernels::{LatticeVector, SignedKernel};

/// Geometry of the box `[-R, R]^dim`, stored row-major with the last axis
/// contiguous.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid {
    dim: usize,
    radius: usize,
    side: usize,
    strides: Vec<usize>,
    len: usize,
}

impl Grid {
    pub fn new(dim: usize, radius: usize) -> Self {
        assert!(dim >= 1, "grid dimension must be positive");
        let side = 2 * radius + 1;
        let mut strides = vec![1; dim];
        for i in (0..dim.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * side;
        }
        let len = side.pow(dim as u32);
        Grid { dim, radius, side, strides, len }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn origin(&self) -> usize {
        self.strides.iter().map(|s| s * self.radius).sum()
    }

    pub fn index(&self, x: &[i64]) -> Option<usize> {
        if x.len() != self.dim {
            return None;
        }
        let r = self.radius as i64;
        let mut idx = 0;
        for (&c, &s) in x.iter().zip(&self.strides) {
            if c < -r || c > r {
                return None;
            }
            idx += (c + r) as usize * s;
        }
        Some(idx)
    }

    pub fn coords(&self, mut idx: usize) -> Vec<i64> {
        let r = self.radius as i64;
        self.strides
            .iter()
            .map(|&s| {
                let c = idx / s;
                idx %= s;
                c as i64 - r
            })
            .collect()
    }

    pub(crate) fn offset(&self, u: &[i64]) -> isize {
        u.iter().zip(&self.strides).map(|(&c, &s)| c as isize * s as isize).sum()
    }

    /// Calls `f(row_start, row_end)` for every contiguous run of target
    /// indices `y` such that `y - u` also lies in the box.
    fn for_each_shifted_run(&self, u: &[i64], mut f: impl FnMut(usize, usize)) {
        let r = self.radius as i64;
        let lo: Vec<i64> = u.iter().map(|&c| (-r).max(-r + c)).collect();
        let hi: Vec<i64> = u.iter().map(|&c| r.min(r + c)).collect();
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return;
        }
        let last = self.dim - 1;
        let mut cur: Vec<i64> = lo.clone();
        loop {
            let mut start = 0;
            for i in 0..last {
                start += (cur[i] + r) as usize * self.strides[i];
            }
            let a = start + (lo[last] + r) as usize;
            let b = start + (hi[last] + r) as usize + 1;
            f(a, b);
            // Odometer over the leading axes.
            let mut axis = last;
            loop {
                if axis == 0 {
                    return;
                }
                axis -= 1;
                if cur[axis] < hi[axis] {
                    cur[axis] += 1;
                    break;
                }
                cur[axis] = lo[axis];
            }
        }
    }
}

/// Kernel pre-resolved against a grid: flat offsets plus the original vectors.
#[derive(Clone, Debug)]
pub struct GridKernel {
    entries: Vec<(Vec<i64>, isize, f64)>,
}

impl GridKernel {
    pub fn new(grid: &Grid, kernel: &SignedKernel) -> Self {
        let entries = kernel
            .iter()
            .map(|(u, w)| (u.coords().to_vec(), grid.offset(u.coords()), w))
            .collect();
        GridKernel { entries }
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.2).sum()
    }

    /// `dst = kernel * src`, i.e. `dst[y] = sum_u w(u) src[y - u]`. Mass pushed
    /// outside the box is dropped.
    pub fn convolve(&self, grid: &Grid, src: &[f64], dst: &mut [f64]) {
        dst.iter_mut().for_each(|v| *v = 0.0);
        self.convolve_add(grid, src, dst);
    }

    pub fn convolve_add(&self, grid: &Grid, src: &[f64], dst: &mut [f64]) {
        for (u, off, w) in &self.entries {
            let w = *w;
            let off = *off;
            grid.for_each_shifted_run(u, |a, b| {
                let sa = (a as isize - off) as usize;
                let s = &src[sa..sa + (b - a)];
                for (d, &v) in dst[a..b].iter_mut().zip(s) {
                    *d += w * v;
                }
            });
        }
    }

    /// `dst[origin + u] += scale * w(u)` for every in-box `u`.
    pub fn scatter_from_origin(&self, grid: &Grid, scale: f64, dst: &mut [f64]) {
        if scale == 0.0 {
            return;
        }
        for (u, _, w) in &self.entries {
            if let Some(i) = grid.index(u) {
                dst[i] += scale * w;
            }
        }
    }
}

/// Values on `[-R, R]^dim` at a fixed time.
#[derive(Clone, Debug, PartialEq)]
pub struct MassField {
    grid: Grid,
    time: usize,
    values: Vec<f64>,
    leaked: f64,
}

impl MassField {
    pub fn zeros(dim: usize, radius: usize, time: usize) -> Self {
        let grid = Grid::new(dim, radius);
        let values = vec![0.0; grid.len()];
        MassField { grid, time, values, leaked: 0.0 }
    }

    pub fn point_mass(dim: usize, radius: usize) -> Self {
        let mut f = MassField::zeros(dim, radius, 0);
        let o = f.grid.origin();
        f.values[o] = 1.0;
        f
    }

    /// Field holding a kernel's weights, at time `time`.
    pub fn from_kernel(kernel: &SignedKernel, radius: usize, time: usize) -> Self {
        let mut f = MassField::zeros(kernel.dim(), radius, time);
        for (u, w) in kernel.iter() {
            if let Some(i) = f.grid.index(u.coords()) {
                f.values[i] += w;
            } else {
                f.leaked += w;
            }
        }
        f
    }

    pub(crate) fn from_parts(grid: Grid, time: usize, values: Vec<f64>, leaked: f64) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        MassField { grid, time, values, leaked }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    pub fn radius(&self) -> usize {
        self.grid.radius
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Signed mass that left the box so far.
    pub fn leaked(&self) -> f64 {
        self.leaked
    }

    pub fn get(&self, x: &[i64]) -> f64 {
        self.grid.index(x).map(|i| self.values[i]).unwrap_or(0.0)
    }

    pub fn at(&self, x: &LatticeVector) -> f64 {
        self.get(x.coords())
    }

    pub fn origin_value(&self) -> f64 {
        self.values[self.grid.origin()]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Iterate `(coords, value)` over every site.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<i64>, f64)> + '_ {
        self.values.iter().enumerate().map(|(i, &v)| (self.grid.coords(i), v))
    }

    /// `max_x |self(x) - other(x)|` over the union of both boxes.
    pub fn max_abs_diff(&self, other: &MassField) -> f64 {
        assert_eq!(self.dim(), other.dim(), "fields of different dimension");
        let (big, small) = if self.radius() >= other.radius() { (self, other) } else { (other, self) };
        big.iter().map(|(x, v)| (v - small.get(&x)).abs()).fold(0.0, f64::max)
    }

    /// Entrywise `self - other` on this field's box.
    pub fn minus(&self, other: &MassField) -> MassField {
        let values = self.iter().map(|(x, v)| v - other.get(&x)).collect();
        MassField::from_parts(self.grid.clone(), self.time, values, self.leaked - other.leaked)
    }

    /// Copy onto a box of a different radius, dropping what falls outside.
    pub fn resized(&self, radius: usize) -> MassField {
        let mut out = MassField::zeros(self.dim(), radius, self.time);
        for (x, v) in self.iter() {
            if let Some(i) = out.grid.index(&x) {
                out.values[i] = v;
            }
        }
        out.leaked = self.leaked;
        out
    }

    /// `max_x |f(x) + f(-x)|`, zero for an antisymmetric field.
    pub fn antisymmetry_defect(&self) -> f64 {
        self.iter()
            .map(|(x, v)| {
                let m: Vec<i64> = x.iter().map(|c| -c).collect();
                (v + self.get(&m)).abs()
            })
            .fold(0.0, f64::max)
    }

    /// CSV with a `#` metadata header, columns `x_1..x_dim,value`.
    pub fn to_csv(&self, kernel_hash: &str) -> String {
        let mut out = String::new();
        writeln!(out, "# dim={}", self.dim()).unwrap();
        writeln!(out, "# n={}", self.time).unwrap();
        writeln!(out, "# R={}", self.radius()).unwrap();
        writeln!(out, "# kernel={kernel_hash}").unwrap();
        let cols: Vec<String> = (1..=self.dim()).map(|i| format!("x_{i}")).collect();
        writeln!(out, "{},value", cols.join(",")).unwrap();
        for (x, v) in self.iter() {
            for c in &x {
                write!(out, "{c},").unwrap();
            }
            writeln!(out, "{v:e}").unwrap();
        }
        out
    }
}

/// Exact-box requirement for `steps` steps of size at most `step_radius`.
pub fn required_radius(steps: usize, step_radius: usize) -> usize {
    steps * step_radius
}

/// How the box radius is chosen for an evolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoxPolicy {
    /// `R = n * step radius`; no mass can leave.
    Exact,
    /// Fixed radius, rejected with `BoxTooSmall` unless exact.
    Strict(usize),
    /// Fixed radius; leaked mass is tracked on the field.
    Loose(usize),
}

impl BoxPolicy {
    pub fn resolve(self, steps: usize, step_radius: usize) -> Result<usize> {
        let required = required_radius(steps, step_radius);
        match self {
            BoxPolicy::Exact => Ok(required),
            BoxPolicy::Strict(r) if r >= required => Ok(r),
            BoxPolicy::Strict(r) => Err(Error::BoxTooSmall { radius: r, required, steps }),
            BoxPolicy::Loose(r) => Ok(r),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let g = Grid::new(3, 2);
        assert_eq!(g.len(), 125);
        for i in 0..g.len() {
            assert_eq!(g.index(&g.coords(i)), Some(i));
        }
        assert_eq!(g.coords(g.origin()), vec![0, 0, 0]);
        assert_eq!(g.index(&[3, 0, 0]), None);
    }

    #[test]
    fn convolution_matches_direct_scatter() {
        let g = Grid::new(2, 3);
        let k = SignedKernel::from_pairs(2, &[(&[1, 0], 0.3), (&[0, -2], 0.5), (&[-1, 1], 0.2)]);
        let gk = GridKernel::new(&g, &k);
        let src: Vec<f64> = (0..g.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut dst = vec![0.0; g.len()];
        gk.convolve(&g, &src, &mut dst);
        let mut expect = vec![0.0; g.len()];
        for (i, &v) in src.iter().enumerate() {
            let x = g.coords(i);
            for (u, w) in k.iter() {
                let y: Vec<i64> = x.iter().zip(u.coords()).map(|(a, b)| a + b).collect();
                if let Some(j) = g.index(&y) {
                    expect[j] += w * v;
                }
            }
        }
        for (a, b) in dst.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn box_policy() {
        assert_eq!(BoxPolicy::Exact.resolve(5, 2), Ok(10));
        assert_eq!(BoxPolicy::Strict(12).resolve(5, 2), Ok(12));
        assert_eq!(BoxPolicy::Strict(9).resolve(5, 2).unwrap_err().name(), "BoxTooSmall");
        assert_eq!(BoxPolicy::Loose(3).resolve(5, 2), Ok(3));
    }

    #[test]
    fn csv_header_and_rows() {
        let f = MassField::point_mass(1, 1);
        let csv = f.to_csv("abc");
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# dim=1");
        assert_eq!(lines[3], "# kernel=abc");
        assert_eq!(lines[4], "x_1,value");
        assert_eq!(lines[6], "0,1e0");
        assert_eq!(lines.len(), 8);
    }
}
