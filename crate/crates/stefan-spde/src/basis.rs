//! Dirichlet eigenbasis of the unit box in one or two dimensions.
//!
//! Grid fields live on the interior collocation points ξ = i/M, i = 1..M−1,
//! stored as an `(M−1) × (M−1)` array in 2D and `(M−1) × 1` in 1D.

use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{matmul, matmul_at, matmul_bt, pairwise_map};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("dimension must be 1 or 2, got {0}")]
    Dimension(usize),
    #[error("need at least one mode per axis")]
    NoModes,
    #[error("grid of {grid} points per axis is too coarse for {modes} modes (need M ≥ 2m)")]
    GridTooCoarse { modes: usize, grid: usize },
    #[error("mode index {index} out of range for {len} modes")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("grid shape {got:?} does not match expected {expected:?}")]
    ShapeMismatch { got: (usize, usize), expected: (usize, usize) },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub dim: usize,
    pub modes: usize,
    pub grid: usize,
}

impl BasisSpec {
    pub fn new(dim: usize, modes: usize) -> Self {
        Self { dim, modes, grid: 2 * modes }
    }

    pub fn with_grid(mut self, grid: usize) -> Self {
        self.grid = grid;
        self
    }

    pub fn len(&self) -> usize {
        self.modes.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Multi-index (k₁, k₂); k₂ = 0 in 1D.
pub type Mode = [usize; 2];

pub fn mode_eigenvalue(k: Mode) -> f64 {
    PI * PI * (k[0] * k[0] + k[1] * k[1]) as f64
}

/// Modes sorted by eigenvalue, ties lexicographic, with every k ≤ `max_k`.
pub fn ordered_modes(dim: usize, max_k: usize) -> Vec<Mode> {
    let mut modes: Vec<Mode> = if dim == 1 {
        (1..=max_k).map(|k| [k, 0]).collect()
    } else {
        (1..=max_k).flat_map(|a| (1..=max_k).map(move |b| [a, b])).collect()
    };
    modes.sort_by_key(|k| (k[0] * k[0] + k[1] * k[1], k[0], k[1]));
    modes
}

/// First `count` modes of the unbounded ordering.
pub fn leading_modes(dim: usize, count: usize) -> Vec<Mode> {
    let mut modes = ordered_modes(dim, count.max(1));
    modes.truncate(count);
    modes
}

/// √2·sin(kπ·i/M) with the argument reduced exactly.
pub fn sine_node(k: usize, i: usize, grid: usize) -> f64 {
    let r = (k * i) % (2 * grid);
    SQRT_2 * (PI * r as f64 / grid as f64).sin()
}

/// √2·kπ·cos(kπ·i/M).
pub fn cosine_node(k: usize, i: usize, grid: usize) -> f64 {
    let r = (k * i) % (2 * grid);
    SQRT_2 * k as f64 * PI * (PI * r as f64 / grid as f64).cos()
}

/// Table `[i, k−1] = f(k, i)` for i = 1..M−1, k = 1..=kmax.
fn node_table(grid: usize, kmax: usize, f: fn(usize, usize, usize) -> f64) -> Array2<f64> {
    Array2::from_shape_fn((grid - 1, kmax), |(i, k)| f(k + 1, i + 1, grid))
}

#[derive(Debug, Clone)]
pub struct Basis {
    spec: BasisSpec,
    modes: Vec<Mode>,
    lambdas: Vec<f64>,
    slots: Vec<usize>,
    phi: Array2<f64>,
    dphi: Array2<f64>,
    phi_y: Array2<f64>,
    dphi_y: Array2<f64>,
    full: Array2<f64>,
    dfull: Array2<f64>,
    full_y: Array2<f64>,
    dfull_y: Array2<f64>,
}

impl Basis {
    pub fn new(spec: BasisSpec) -> Result<Self, BasisError> {
        if spec.dim != 1 && spec.dim != 2 {
            return Err(BasisError::Dimension(spec.dim));
        }
        if spec.modes == 0 {
            return Err(BasisError::NoModes);
        }
        if spec.grid < 2 * spec.modes {
            return Err(BasisError::GridTooCoarse { modes: spec.modes, grid: spec.grid });
        }
        let m = spec.modes;
        let mm = spec.grid;
        let modes = ordered_modes(spec.dim, m);
        let lambdas = modes.iter().map(|&k| mode_eigenvalue(k)).collect();
        let ny = if spec.dim == 2 { m } else { 1 };
        let mut slots = vec![0; m * ny];
        for (j, k) in modes.iter().enumerate() {
            slots[slot(k, ny)] = j;
        }
        let phi = node_table(mm, m, sine_node);
        let dphi = node_table(mm, m, cosine_node);
        let full = node_table(mm, mm - 1, sine_node);
        let dfull = node_table(mm, mm - 1, cosine_node);
        let (phi_y, dphi_y, full_y, dfull_y) = if spec.dim == 2 {
            (phi.clone(), dphi.clone(), full.clone(), dfull.clone())
        } else {
            let one = Array2::ones((1, 1));
            let zero = Array2::zeros((1, 1));
            (one.clone(), zero.clone(), one, zero)
        };
        Ok(Self { spec, modes, lambdas, slots, phi, dphi, phi_y, dphi_y, full, dfull, full_y, dfull_y })
    }

    pub fn spec(&self) -> BasisSpec {
        self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambdas.iter().copied().fold(0.0, f64::max)
    }

    /// Interior points per axis (M − 1).
    pub fn points(&self) -> usize {
        self.spec.grid - 1
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        let n = self.points();
        if self.spec.dim == 2 {
            (n, n)
        } else {
            (n, 1)
        }
    }

    /// Quadrature weight of one grid cell.
    pub fn cell_weight(&self) -> f64 {
        let h = 1.0 / self.spec.grid as f64;
        if self.spec.dim == 2 {
            h * h
        } else {
            h
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (1..self.spec.grid).map(|i| i as f64 / self.spec.grid as f64).collect()
    }

    fn coeff_cols(&self) -> usize {
        if self.spec.dim == 2 {
            self.spec.modes
        } else {
            1
        }
    }

    pub fn eigenvalue(&self, j: usize) -> Result<f64, BasisError> {
        self.check_index(j)?;
        Ok(self.lambdas[j])
    }

    pub fn mode(&self, j: usize) -> Result<Mode, BasisError> {
        self.check_index(j)?;
        Ok(self.modes[j])
    }

    /// Flat index of a multi-index, if retained.
    pub fn index_of(&self, k: Mode) -> Option<usize> {
        let m = self.spec.modes;
        let ok = k[0] >= 1 && k[0] <= m && if self.spec.dim == 2 { k[1] >= 1 && k[1] <= m } else { k[1] == 0 };
        ok.then(|| self.slots[slot(&k, self.coeff_cols())])
    }

    fn check_index(&self, j: usize) -> Result<(), BasisError> {
        if j < self.len() {
            Ok(())
        } else {
            Err(BasisError::IndexOutOfRange { index: j, len: self.len() })
        }
    }

    fn check_shape(&self, g: &ArrayView2<f64>) -> Result<(), BasisError> {
        if g.dim() == self.grid_shape() {
            Ok(())
        } else {
            Err(BasisError::ShapeMismatch { got: g.dim(), expected: self.grid_shape() })
        }
    }

    /// Coefficient vector as an `m × m` (or `m × 1`) matrix indexed by (k₁−1, k₂−1).
    pub fn to_matrix(&self, c: &[f64]) -> Array2<f64> {
        let ny = self.coeff_cols();
        let mut out = Array2::zeros((self.spec.modes, ny));
        for (j, k) in self.modes.iter().enumerate() {
            let s = slot(k, ny);
            out[[s / ny, s % ny]] = c[j];
        }
        out
    }

    pub fn from_matrix(&self, a: &Array2<f64>) -> Vec<f64> {
        let ny = self.coeff_cols();
        self.modes
            .iter()
            .map(|k| {
                let s = slot(k, ny);
                a[[s / ny, s % ny]]
            })
            .collect()
    }

    /// Values on the grid.
    pub fn synthesize(&self, c: &[f64]) -> Array2<f64> {
        let cm = self.to_matrix(c);
        synth(&self.phi, &cm, &self.phi_y)
    }

    /// (∂₁X, ∂₂X) on the grid.
    pub fn synthesize_gradient(&self, c: &[f64]) -> (Array2<f64>, Array2<f64>) {
        let cm = self.to_matrix(c);
        (synth(&self.dphi, &cm, &self.phi_y), synth(&self.phi, &cm, &self.dphi_y))
    }

    /// Collocation projection onto the retained modes.
    pub fn project(&self, g: &Array2<f64>) -> Result<Vec<f64>, BasisError> {
        self.check_shape(&g.view())?;
        let a = analyze(&self.phi, g, &self.phi_y, self.cell_weight());
        Ok(self.from_matrix(&a))
    }

    /// Full sine-series coefficients of the grid interpolant, indexed (p−1, q−1).
    pub fn interpolate(&self, g: &Array2<f64>) -> Result<Array2<f64>, BasisError> {
        self.check_shape(&g.view())?;
        Ok(analyze(&self.full, g, &self.full_y, self.cell_weight()))
    }

    /// Values of a full interpolant on the grid.
    pub fn synthesize_full(&self, a: &Array2<f64>) -> Array2<f64> {
        synth(&self.full, a, &self.full_y)
    }

    /// Gradient of a full interpolant on the grid.
    pub fn gradient_full(&self, a: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        (synth(&self.dfull, a, &self.full_y), synth(&self.full, a, &self.dfull_y))
    }

    /// First `m` modes of a full interpolant, in flat order.
    pub fn truncate(&self, a: &Array2<f64>) -> Vec<f64> {
        let ny = self.coeff_cols();
        self.modes
            .iter()
            .map(|k| {
                let s = slot(k, ny);
                a[[s / ny, s % ny]]
            })
            .collect()
    }

    pub fn eigenfunction_on_grid(&self, j: usize) -> Result<Array2<f64>, BasisError> {
        self.check_index(j)?;
        let mut c = vec![0.0; self.len()];
        c[j] = 1.0;
        Ok(self.synthesize(&c))
    }

    pub fn basis_gradient_on_grid(&self, j: usize) -> Result<(Array2<f64>, Array2<f64>), BasisError> {
        self.check_index(j)?;
        let mut c = vec![0.0; self.len()];
        c[j] = 1.0;
        Ok(self.synthesize_gradient(&c))
    }

    /// e_j at an arbitrary point.
    pub fn mode_value_at(&self, j: usize, x: f64, y: f64) -> f64 {
        let [a, b] = self.modes[j];
        let sx = SQRT_2 * (a as f64 * PI * x).sin();
        if self.spec.dim == 1 {
            sx
        } else {
            sx * SQRT_2 * (b as f64 * PI * y).sin()
        }
    }

    /// ∇e_j at an arbitrary point.
    pub fn mode_gradient_at(&self, j: usize, x: f64, y: f64) -> (f64, f64) {
        let [a, b] = self.modes[j];
        let (wa, wb) = (a as f64 * PI, b as f64 * PI);
        if self.spec.dim == 1 {
            (SQRT_2 * wa * (wa * x).cos(), 0.0)
        } else {
            (
                2.0 * wa * (wa * x).cos() * (wb * y).sin(),
                2.0 * wb * (wa * x).sin() * (wb * y).cos(),
            )
        }
    }

    pub fn apply_laplacian(&self, c: &[f64]) -> Vec<f64> {
        c.iter().zip(&self.lambdas).map(|(c, l)| -l * c).collect()
    }

    /// Grid quadrature ∫f.
    pub fn integrate(&self, g: &Array2<f64>) -> f64 {
        let s = g.as_standard_layout();
        self.cell_weight() * crate::linalg::pairwise_sum(s.as_slice().expect("standard layout"))
    }

    pub fn norm_l2(&self, c: &[f64]) -> f64 {
        pairwise_map(c.len(), |j| c[j] * c[j]).sqrt()
    }

    pub fn norm_h1(&self, c: &[f64]) -> f64 {
        pairwise_map(c.len(), |j| self.lambdas[j] * c[j] * c[j]).sqrt()
    }

    pub fn norm_h_minus(&self, c: &[f64], beta: f64) -> f64 {
        let l = &self.lambdas;
        pairwise_map(c.len(), |j| c[j] * c[j] / l[j].powf(beta)).sqrt()
    }

    /// max_j max_grid |e_j| / λ_j.
    pub fn sup_norm_constant(&self) -> f64 {
        (0..self.len())
            .map(|j| {
                let e = self.eigenfunction_on_grid(j).expect("index in range");
                e.iter().fold(0.0f64, |a, v| a.max(v.abs())) / self.lambdas[j]
            })
            .fold(0.0, f64::max)
    }

    /// Grid field as CSV: header with M and d, then row-major values.
    pub fn grid_csv(&self, g: &Array2<f64>) -> String {
        let mut s = format!("# M = {}, d = {}\n", self.spec.grid, self.spec.dim);
        s.push_str(if self.spec.dim == 2 { "x,y,value\n" } else { "x,value\n" });
        let x = self.nodes();
        for ((i, j), v) in g.indexed_iter() {
            if self.spec.dim == 2 {
                let _ = writeln!(s, "{},{},{}", x[i], x[j], v);
            } else {
                let _ = writeln!(s, "{},{}", x[i], v);
            }
        }
        s
    }
}

fn slot(k: &Mode, ny: usize) -> usize {
    if ny == 1 {
        k[0] - 1
    } else {
        (k[0] - 1) * ny + (k[1] - 1)
    }
}

/// Tx · C · Tyᵀ.
pub fn synth(tx: &Array2<f64>, c: &Array2<f64>, ty: &Array2<f64>) -> Array2<f64> {
    let t = matmul(tx.view(), c.view());
    matmul_bt(t.view(), ty.view())
}

/// w · Txᵀ · G · Ty.
pub fn analyze(tx: &Array2<f64>, g: &Array2<f64>, ty: &Array2<f64>, w: f64) -> Array2<f64> {
    let t = matmul_at(tx.view(), g.view());
    let mut a = matmul(t.view(), ty.view());
    a.mapv_inplace(|v| v * w);
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_examples() {
        let b = Basis::new(BasisSpec::new(2, 4)).unwrap();
        assert_eq!(b.mode(0).unwrap(), [1, 1]);
        assert!((b.eigenvalue(0).unwrap() - 19.7392088).abs() < 1e-6);
        let e = b.eigenfunction_on_grid(0).unwrap();
        assert!((e[[3, 3]] - 2.0).abs() < 1e-14);
        let (gx, gy) = b.basis_gradient_on_grid(0).unwrap();
        assert!(gx[[3, 3]].abs() < 1e-14 && gy[[3, 3]].abs() < 1e-14);

        let b1 = Basis::new(BasisSpec::new(1, 4)).unwrap();
        let e = b1.eigenfunction_on_grid(2).unwrap();
        assert!((e[[3, 0]] + SQRT_2).abs() < 1e-14);
        assert!(b.eigenvalue(16).is_err());
    }

    #[test]
    fn ordering_monotone_and_bijective() {
        let b = Basis::new(BasisSpec::new(2, 8)).unwrap();
        for w in b.lambdas().windows(2) {
            assert!(w[0] <= w[1]);
        }
        for (j, &k) in b.modes().iter().enumerate() {
            assert_eq!(b.index_of(k), Some(j));
        }
        assert_eq!(b.index_of([9, 1]), None);
    }

    #[test]
    fn round_trip_and_parseval() {
        let b = Basis::new(BasisSpec::new(2, 8)).unwrap();
        let c: Vec<f64> = (0..b.len()).map(|j| ((j * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let g = b.synthesize(&c);
        let back = b.project(&g).unwrap();
        for (x, y) in c.iter().zip(&back) {
            assert!((x - y).abs() < 1e-12);
        }
        let sq = g.mapv(|v| v * v);
        let l2 = b.norm_l2(&c);
        assert!((b.integrate(&sq) - l2 * l2).abs() < 1e-10 * l2 * l2);
    }

    #[test]
    fn gradient_green_identity() {
        let b = Basis::new(BasisSpec::new(2, 6)).unwrap();
        let (x, w) = crate::quadrature::gauss_legendre_unit(24);
        for j in 0..16 {
            let mut s = 0.0;
            for (xi, wi) in x.iter().zip(&w) {
                for (yi, wj) in x.iter().zip(&w) {
                    let (gx, gy) = b.mode_gradient_at(j, *xi, *yi);
                    s += wi * wj * (gx * gx + gy * gy);
                }
            }
            assert!((s - b.lambdas()[j]).abs() < 1e-8 * b.lambdas()[j]);
            let (gx, _) = b.basis_gradient_on_grid(j).unwrap();
            let nodes = b.nodes();
            assert!((gx[[2, 3]] - b.mode_gradient_at(j, nodes[2], nodes[3]).0).abs() < 1e-12);
        }
    }

    #[test]
    fn norms() {
        let b = Basis::new(BasisSpec::new(2, 4)).unwrap();
        let mut c = vec![0.0; b.len()];
        c[b.index_of([1, 1]).unwrap()] = 1.0;
        c[b.index_of([1, 2]).unwrap()] = 1.0;
        let expect = 1.0 / (2.0 * PI * PI) + 1.0 / (5.0 * PI * PI);
        assert!((b.norm_h_minus(&c, 1.0).powi(2) - expect).abs() < 1e-15);
        assert_eq!(b.norm_h1(&vec![0.0; b.len()]), 0.0);
    }

    #[test]
    fn interpolant_reproduces_grid() {
        let b = Basis::new(BasisSpec::new(2, 4)).unwrap();
        let g = Array2::from_shape_fn(b.grid_shape(), |(i, j)| ((i * 3 + j * 5) % 7) as f64 - 3.0);
        let a = b.interpolate(&g).unwrap();
        let back = b.synthesize_full(&a);
        for (x, y) in g.iter().zip(back.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_coarse_grid() {
        assert!(matches!(
            Basis::new(BasisSpec::new(2, 8).with_grid(10)),
            Err(BasisError::GridTooCoarse { .. })
        ));
    }
}
