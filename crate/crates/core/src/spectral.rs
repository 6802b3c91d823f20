//! Fourier representation of real fields on the flat torus `T^d = R^d / 2πZ^d`.
//!
//! A [`SpectralField`] stores the complex coefficients `u_k` of
//! `u(x) = Σ_k u_k e^{i k·x}` for `|k_i| < n/2`, in FFT order. Norms follow the
//! coefficient-sum convention `‖u‖²_{H^s} = Σ |u_k|² (1 + |k|²)^s`, so the
//! physical `L²` integral is never used in place of the `H^0` norm.
//!
//! Pointwise cubes are evaluated on a zero-padded grid of `2n` points per
//! dimension, which is alias-free for a cubic product truncated back to the
//! retained band.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("non-finite physical values in pointwise product")]
    ProductOverflow,
    #[error("mask selects no grid node")]
    EmptyMask,
    #[error("fields live on different grids ({0} vs {1})")]
    GridMismatch(TorusGrid, TorusGrid),
    #[error("expected {expected} physical values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Uniform tensor grid on the `d`-torus with `n` nodes per dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusGrid {
    d: usize,
    n: usize,
    /// Padding ratio used for pointwise products, as numerator/denominator.
    dealias: (u32, u32),
}

impl fmt::Display for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T^{}[n={}]", self.d, self.n)
    }
}

impl TorusGrid {
    pub fn new(d: usize, n: usize) -> Result<Self, SpectralError> {
        Self::with_dealias(d, n, (2, 1))
    }

    /// Grid with an explicit padding ratio for products. Ratios below 2 are
    /// rejected since they alias cubic products back into the band.
    pub fn with_dealias(d: usize, n: usize, dealias: (u32, u32)) -> Result<Self, SpectralError> {
        if d != 1 && d != 2 {
            return Err(SpectralError::InvalidGrid(format!("dimension {d} not in {{1, 2}}")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(SpectralError::InvalidGrid(format!("n = {n} must be a power of two and at least 8")));
        }
        if dealias.1 == 0 || dealias.0 < 2 * dealias.1 {
            return Err(SpectralError::InvalidGrid(format!(
                "dealias ratio {}/{} must be at least 2",
                dealias.0, dealias.1
            )));
        }
        Ok(Self { d, n, dealias })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dealias(&self) -> (u32, u32) {
        self.dealias
    }

    /// Number of nodes (and coefficient slots).
    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Per-dimension size of the padded product grid (even).
    pub fn padded_n(&self) -> usize {
        let (num, den) = (self.dealias.0 as usize, self.dealias.1 as usize);
        let m = (self.n * num).div_ceil(den);
        m + (m % 2)
    }

    /// Signed wavenumber stored at FFT slot `j`; the Nyquist slot maps to `n/2`.
    pub fn wavenumber(&self, j: usize) -> i64 {
        if j <= self.n / 2 {
            j as i64
        } else {
            j as i64 - self.n as i64
        }
    }

    /// FFT slot for a signed wavenumber, `None` outside the retained band.
    pub fn slot(&self, k: i64) -> Option<usize> {
        let half = (self.n / 2) as i64;
        if k.abs() >= half {
            None
        } else if k >= 0 {
            Some(k as usize)
        } else {
            Some((k + self.n as i64) as usize)
        }
    }

    /// Flat coefficient index for a wavevector (length `d`).
    pub fn index_of(&self, k: &[i64]) -> Option<usize> {
        debug_assert_eq!(k.len(), self.d);
        let mut idx = 0;
        for &ki in k {
            idx = idx * self.n + self.slot(ki)?;
        }
        Some(idx)
    }

    /// Wavevector stored at flat index `idx`; `None` on a Nyquist slot.
    pub fn wavevector(&self, idx: usize) -> Option<Vec<i64>> {
        let mut k = vec![0i64; self.d];
        let mut rem = idx;
        for i in (0..self.d).rev() {
            let j = rem % self.n;
            rem /= self.n;
            if j == self.n / 2 {
                return None;
            }
            k[i] = self.wavenumber(j);
        }
        Some(k)
    }

    /// `|k|²` at each flat index; Nyquist slots report `None`.
    pub fn k_squared(&self) -> Vec<Option<f64>> {
        (0..self.len()).map(|i| self.wavevector(i).map(|k| k.iter().map(|&x| (x * x) as f64).sum())).collect()
    }

    /// Coordinates of node `idx` (row-major, first coordinate slowest).
    pub fn node(&self, idx: usize) -> Vec<f64> {
        let h = 2.0 * std::f64::consts::PI / self.n as f64;
        let mut x = vec![0.0; self.d];
        let mut rem = idx;
        for i in (0..self.d).rev() {
            x[i] = (rem % self.n) as f64 * h;
            rem /= self.n;
        }
        x
    }

    /// Largest `|k|²` representable in the retained band.
    pub fn max_k_squared(&self) -> f64 {
        let kmax = (self.n / 2 - 1) as f64;
        kmax * kmax * self.d as f64
    }

    /// Volume of one grid cell, `(2π/n)^d`.
    pub fn cell_volume(&self) -> f64 {
        (2.0 * std::f64::consts::PI / self.n as f64).powi(self.d as i32)
    }
}

/// Regularity order of a Sobolev norm.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SobolevIndex(pub f64);

impl From<f64> for SobolevIndex {
    fn from(s: f64) -> Self {
        SobolevIndex(s)
    }
}

impl From<i32> for SobolevIndex {
    fn from(s: i32) -> Self {
        SobolevIndex(s as f64)
    }
}

/// Per-grid lookup tables shared by every field on that grid.
#[derive(Debug)]
pub(crate) struct GridTables {
    /// `|k|²` per slot, NaN on Nyquist slots.
    pub(crate) k2: Vec<f64>,
    /// Slot of `-k` per slot (self on Nyquist slots).
    pub(crate) neg: Vec<usize>,
    /// Slot on the padded product grid, `usize::MAX` on Nyquist slots.
    pub(crate) padded: Vec<usize>,
}

impl GridTables {
    fn build(grid: TorusGrid) -> Self {
        let m = grid.padded_n();
        let mut k2 = Vec::with_capacity(grid.len());
        let mut neg = Vec::with_capacity(grid.len());
        let mut padded = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            match grid.wavevector(i) {
                Some(k) => {
                    k2.push(k.iter().map(|&x| (x * x) as f64).sum());
                    let nk: Vec<i64> = k.iter().map(|&x| -x).collect();
                    neg.push(grid.index_of(&nk).expect("negated wavevector in band"));
                    let mut idx = 0;
                    for &ki in &k {
                        idx = idx * m + if ki >= 0 { ki as usize } else { (ki + m as i64) as usize };
                    }
                    padded.push(idx);
                }
                None => {
                    k2.push(f64::NAN);
                    neg.push(i);
                    padded.push(usize::MAX);
                }
            }
        }
        Self { k2, neg, padded }
    }
}

pub(crate) fn tables(grid: TorusGrid) -> Arc<GridTables> {
    TABLES.with(|t| t.borrow_mut().entry(grid).or_insert_with(|| Arc::new(GridTables::build(grid))).clone())
}

type PlanCache = HashMap<(usize, bool), Arc<dyn Fft<f64>>>;

thread_local! {
    static TABLES: RefCell<HashMap<TorusGrid, Arc<GridTables>>> = RefCell::new(HashMap::new());
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
    static PLANS: RefCell<PlanCache> = RefCell::new(HashMap::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|plans| {
        plans
            .borrow_mut()
            .entry((n, inverse))
            .or_insert_with(|| {
                PLANNER.with(|p| {
                    let mut p = p.borrow_mut();
                    if inverse {
                        p.plan_fft_inverse(n)
                    } else {
                        p.plan_fft_forward(n)
                    }
                })
            })
            .clone()
    })
}

/// Unnormalized in-place transform of an `n^d` row-major array.
fn fft_nd(data: &mut [Complex64], n: usize, d: usize, inverse: bool) {
    let fft = plan(n, inverse);
    match d {
        1 => fft.process(data),
        2 => {
            for row in data.chunks_mut(n) {
                fft.process(row);
            }
            let mut col = vec![Complex64::new(0.0, 0.0); n];
            for j in 0..n {
                for i in 0..n {
                    col[i] = data[i * n + j];
                }
                fft.process(&mut col);
                for i in 0..n {
                    data[i * n + j] = col[i];
                }
            }
        }
        _ => unreachable!("grid dimension validated at construction"),
    }
}

/// Boolean selection of grid nodes, used as the control region `ω`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    grid: TorusGrid,
    nodes: Vec<bool>,
}

impl Mask {
    pub fn new(grid: TorusGrid, nodes: Vec<bool>) -> Result<Self, SpectralError> {
        if nodes.len() != grid.len() {
            return Err(SpectralError::LengthMismatch { expected: grid.len(), got: nodes.len() });
        }
        Ok(Self { grid, nodes })
    }

    pub fn full(grid: TorusGrid) -> Self {
        Self { grid, nodes: vec![true; grid.len()] }
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[f64]) -> bool) -> Self {
        let nodes = (0..grid.len()).map(|i| f(&grid.node(i))).collect();
        Self { grid, nodes }
    }

    /// Nodes whose first coordinate lies in `[a, b)`.
    pub fn slab(grid: TorusGrid, a: f64, b: f64) -> Self {
        Self::from_fn(grid, |x| x[0] >= a - 1e-12 && x[0] < b - 1e-12)
    }

    pub fn from_indices(grid: TorusGrid, idx: &[usize]) -> Result<Self, SpectralError> {
        let mut nodes = vec![false; grid.len()];
        for &i in idx {
            if i >= grid.len() {
                return Err(SpectralError::LengthMismatch { expected: grid.len(), got: i + 1 });
            }
            nodes[i] = true;
        }
        Ok(Self { grid, nodes })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn nodes(&self) -> &[bool] {
        &self.nodes
    }

    pub fn indices(&self) -> Vec<usize> {
        self.nodes.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }

    pub fn count(&self) -> usize {
        self.nodes.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Lebesgue measure of the selected cells.
    pub fn measure(&self) -> f64 {
        self.count() as f64 * self.grid.cell_volume()
    }

    /// Node-index list, one index per line.
    pub fn to_index_list(&self) -> String {
        let mut s = String::new();
        for i in self.indices() {
            s.push_str(&i.to_string());
            s.push('\n');
        }
        s
    }

    pub fn parse_index_list(grid: TorusGrid, text: &str) -> Result<Self, SpectralError> {
        let idx: Result<Vec<usize>, _> =
            text.lines().map(str::trim).filter(|l| !l.is_empty()).map(|l| l.parse::<usize>()).collect();
        let idx = idx.map_err(|e| SpectralError::InvalidGrid(format!("bad mask index: {e}")))?;
        Self::from_indices(grid, &idx)
    }
}

/// Real field on the torus held as Hermitian-symmetric Fourier coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: TorusGrid,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: TorusGrid) -> Self {
        Self { grid, coeffs: vec![Complex64::new(0.0, 0.0); grid.len()] }
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        let mut f = Self::zeros(grid);
        f.coeffs[0] = Complex64::new(c, 0.0);
        f
    }

    /// Build from coefficients in FFT order; Nyquist slots are cleared and the
    /// result is symmetrized so that it represents a real field.
    pub fn from_coeffs(grid: TorusGrid, coeffs: Vec<Complex64>) -> Result<Self, SpectralError> {
        if coeffs.len() != grid.len() {
            return Err(SpectralError::LengthMismatch { expected: grid.len(), got: coeffs.len() });
        }
        let mut f = Self { grid, coeffs };
        f.clear_nyquist();
        f.symmetrize();
        Ok(f)
    }

    pub fn from_physical(grid: TorusGrid, values: &[f64]) -> Result<Self, SpectralError> {
        if values.len() != grid.len() {
            return Err(SpectralError::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_nd(&mut data, grid.n, grid.d, false);
        let scale = 1.0 / grid.len() as f64;
        for c in data.iter_mut() {
            *c *= scale;
        }
        let mut f = Self { grid, coeffs: data };
        f.clear_nyquist();
        f.symmetrize();
        Ok(f)
    }

    /// Sample `f` at the grid nodes and transform.
    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values: Vec<f64> = (0..grid.len()).map(|i| f(&grid.node(i))).collect();
        Self::from_physical(grid, &values).expect("length matches grid")
    }

    /// `amplitude · sin(k·x)` or `amplitude · cos(k·x)` set directly in spectral space.
    pub fn trig(grid: TorusGrid, k: &[i64], cosine: bool, amplitude: f64) -> Self {
        let mut f = Self::zeros(grid);
        f.add_trig(k, cosine, amplitude);
        f
    }

    /// Adds `amplitude · sin(k·x)` (or cos) in place. Modes outside the band are ignored.
    pub fn add_trig(&mut self, k: &[i64], cosine: bool, amplitude: f64) {
        let neg: Vec<i64> = k.iter().map(|&x| -x).collect();
        let (Some(ip), Some(im)) = (self.grid.index_of(k), self.grid.index_of(&neg)) else {
            return;
        };
        if ip == im {
            // k = 0: sin vanishes, cos is the constant.
            if cosine {
                self.coeffs[ip] += Complex64::new(amplitude, 0.0);
            }
            return;
        }
        let c = if cosine { Complex64::new(amplitude / 2.0, 0.0) } else { Complex64::new(0.0, -amplitude / 2.0) };
        self.coeffs[ip] += c;
        self.coeffs[im] += c.conj();
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeff(&self, k: &[i64]) -> Complex64 {
        self.grid.index_of(k).map(|i| self.coeffs[i]).unwrap_or_default()
    }

    pub fn to_physical(&self) -> Vec<f64> {
        let mut data = self.coeffs.clone();
        fft_nd(&mut data, self.grid.n, self.grid.d, true);
        data.into_iter().map(|c| c.re).collect()
    }

    /// Largest imaginary part produced by the inverse transform.
    pub fn imaginary_residual(&self) -> f64 {
        let mut data = self.coeffs.clone();
        fft_nd(&mut data, self.grid.n, self.grid.d, true);
        data.iter().map(|c| c.im.abs()).fold(0.0, f64::max)
    }

    /// Largest `|u_{-k} - conj(u_k)|` over all modes.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.coeffs.len() {
            if let Some(k) = self.grid.wavevector(i) {
                let neg: Vec<i64> = k.iter().map(|&x| -x).collect();
                let j = self.grid.index_of(&neg).expect("negated wavevector in band");
                worst = worst.max((self.coeffs[j] - self.coeffs[i].conj()).norm());
            }
        }
        worst
    }

    fn clear_nyquist(&mut self) {
        let t = tables(self.grid);
        for (c, k2) in self.coeffs.iter_mut().zip(&t.k2) {
            if k2.is_nan() {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }

    fn symmetrize(&mut self) {
        let t = tables(self.grid);
        for i in 0..self.coeffs.len() {
            if !t.k2[i].is_nan() {
                let j = t.neg[i];
                if j > i {
                    let avg = (self.coeffs[i] + self.coeffs[j].conj()) * 0.5;
                    self.coeffs[i] = avg;
                    self.coeffs[j] = avg.conj();
                } else if j == i {
                    self.coeffs[i].im = 0.0;
                }
            }
        }
    }

    fn check_grid(&self, other: &Self) -> Result<(), SpectralError> {
        if self.grid != other.grid {
            return Err(SpectralError::GridMismatch(self.grid, other.grid));
        }
        Ok(())
    }

    /// `(Σ_k |u_k|² (1+|k|²)^s)^{1/2}` over the retained modes.
    pub fn sobolev_norm(&self, s: impl Into<SobolevIndex>) -> f64 {
        let s = s.into().0;
        let t = tables(self.grid);
        let mut acc = 0.0;
        for (c, &k2) in self.coeffs.iter().zip(&t.k2) {
            if !k2.is_nan() {
                let w = if s == 0.0 { 1.0 } else { (1.0 + k2).powf(s) };
                acc += c.norm_sqr() * w;
            }
        }
        acc.sqrt()
    }

    /// Applies a real radial multiplier `m(|k|²)` coefficient-wise.
    pub fn multiplier(&self, m: impl Fn(f64) -> f64) -> Self {
        let t = tables(self.grid);
        let coeffs = self
            .coeffs
            .iter()
            .zip(&t.k2)
            .map(|(&c, &k2)| if k2.is_nan() { Complex64::new(0.0, 0.0) } else { c * m(k2) })
            .collect();
        Self { grid: self.grid, coeffs }
    }

    pub fn laplacian(&self) -> Self {
        self.multiplier(|k2| -k2)
    }

    /// `A u = -Δ²u - Δu`, symbol `-(|k|⁴ - |k|²)`.
    pub fn apply_operator_a(&self) -> Self {
        self.multiplier(linear_symbol)
    }

    /// Pointwise cube on the padded grid, truncated back to the band.
    pub fn cube(&self) -> Result<Self, SpectralError> {
        let grid = self.grid;
        let (m, mut padded) = self.padded_values();
        for v in padded.iter_mut() {
            let r = v.re;
            if !r.is_finite() {
                return Err(SpectralError::ProductOverflow);
            }
            *v = Complex64::new(r * r * r, 0.0);
        }
        fft_nd(&mut padded, m, grid.d, false);
        let scale = 1.0 / padded.len() as f64;
        let t = tables(grid);
        let mut out = Self::zeros(grid);
        for (o, &p) in out.coeffs.iter_mut().zip(&t.padded) {
            if p != usize::MAX {
                *o = padded[p] * scale;
            }
        }
        out.symmetrize();
        Ok(out)
    }

    /// Physical values on the padded product grid (`padded_n()` nodes per dimension).
    pub fn padded_physical(&self) -> Vec<f64> {
        self.padded_values().1.into_iter().map(|c| c.re).collect()
    }

    fn padded_values(&self) -> (usize, Vec<Complex64>) {
        let m = self.grid.padded_n();
        let t = tables(self.grid);
        let mut padded = vec![Complex64::new(0.0, 0.0); m.pow(self.grid.d as u32)];
        for (&c, &p) in self.coeffs.iter().zip(&t.padded) {
            if p != usize::MAX {
                padded[p] = c;
            }
        }
        fft_nd(&mut padded, m, self.grid.d, true);
        (m, padded)
    }

    /// `Δ(u³)` with an alias-free cube.
    pub fn laplacian_of_cube(&self) -> Result<Self, SpectralError> {
        Ok(self.cube()?.laplacian())
    }

    /// Splits `u` into `(E_λ u, u - E_λ u)` where `E_λ` keeps modes with `|k|² ≤ λ`.
    pub fn spectral_project(&self, lambda: f64) -> (Self, Self) {
        let mut low = Self::zeros(self.grid);
        let mut high = Self::zeros(self.grid);
        let t = tables(self.grid);
        for (i, &k2) in t.k2.iter().enumerate() {
            if !k2.is_nan() {
                if k2 <= lambda {
                    low.coeffs[i] = self.coeffs[i];
                } else {
                    high.coeffs[i] = self.coeffs[i];
                }
            }
        }
        (low, high)
    }

    /// Physical-space product with the indicator of `mask`.
    pub fn indicator_multiply(&self, mask: &Mask) -> Result<Self, SpectralError> {
        if mask.grid != self.grid {
            return Err(SpectralError::GridMismatch(self.grid, mask.grid));
        }
        if mask.is_empty() {
            return Err(SpectralError::EmptyMask);
        }
        let mut values = self.to_physical();
        for (v, &keep) in values.iter_mut().zip(&mask.nodes) {
            if !keep {
                *v = 0.0;
            }
        }
        Self::from_physical(self.grid, &values)
    }

    /// Mean value, i.e. the zero Fourier coefficient.
    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    pub fn max_abs(&self) -> f64 {
        self.to_physical().iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Largest `|k|_1` among modes with `|u_k| > tol`.
    pub fn max_l1_frequency(&self, tol: f64) -> i64 {
        let mut best = 0;
        for (i, c) in self.coeffs.iter().enumerate() {
            if c.norm() > tol {
                if let Some(k) = self.grid.wavevector(i) {
                    best = best.max(k.iter().map(|x| x.abs()).sum());
                }
            }
        }
        best
    }

    pub fn scale(&self, a: f64) -> Self {
        Self { grid: self.grid, coeffs: self.coeffs.iter().map(|&c| c * a).collect() }
    }

    /// `self + a·other`.
    pub fn axpy(&self, a: f64, other: &Self) -> Result<Self, SpectralError> {
        self.check_grid(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(&x, &y)| x + y * a).collect();
        Ok(Self { grid: self.grid, coeffs })
    }

    /// Distance `‖self - other‖_{H^s}`.
    pub fn distance(&self, other: &Self, s: impl Into<SobolevIndex>) -> f64 {
        (self - other).sobolev_norm(s)
    }

    pub(crate) fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }
}

/// Symbol of `A = -Δ² - Δ` at `|k|² = k2`.
pub fn linear_symbol(k2: f64) -> f64 {
    -(k2 * k2 - k2)
}

impl Add for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: &SpectralField) -> SpectralField {
        self.axpy(1.0, rhs).expect("fields on the same grid")
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: &SpectralField) -> SpectralField {
        self.axpy(-1.0, rhs).expect("fields on the same grid")
    }
}

impl Add for SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: SpectralField) -> SpectralField {
        &self + &rhs
    }
}

impl Sub for SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: SpectralField) -> SpectralField {
        &self - &rhs
    }
}

impl AddAssign<&SpectralField> for SpectralField {
    fn add_assign(&mut self, rhs: &SpectralField) {
        assert_eq!(self.grid, rhs.grid, "fields on the same grid");
        for (x, y) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *x += y;
        }
    }
}

impl SubAssign<&SpectralField> for SpectralField {
    fn sub_assign(&mut self, rhs: &SpectralField) {
        assert_eq!(self.grid, rhs.grid, "fields on the same grid");
        for (x, y) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *x -= y;
        }
    }
}

impl Mul<f64> for &SpectralField {
    type Output = SpectralField;
    fn mul(self, a: f64) -> SpectralField {
        self.scale(a)
    }
}

impl Mul<f64> for SpectralField {
    type Output = SpectralField;
    fn mul(self, a: f64) -> SpectralField {
        self.scale(a)
    }
}

impl Neg for &SpectralField {
    type Output = SpectralField;
    fn neg(self) -> SpectralField {
        self.scale(-1.0)
    }
}
