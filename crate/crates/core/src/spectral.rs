//! Fourier pseudospectral machinery on the periodic box `[0, 2π)³`.
//!
//! Fields are stored as real point values on a uniform `n × n × n` grid in
//! row-major order (`x₁` slowest, `x₃` fastest). Spectra use the
//! normalisation `f̂(k) = n⁻³ Σ f(x) e^{-ik·x}`, so the inverse transform is a
//! plain sum over modes.
//!
//! Derivatives of any order along an axis annihilate the Nyquist mode on that
//! axis. This keeps every derivative real-valued, makes `∂ⱼ` exactly
//! skew-adjoint under the grid quadrature and lets derivatives commute.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Default highest derivative order accepted by the differentiation and norm
/// routines.
pub const DEFAULT_MAX_ORDER: usize = 4;

/// Volume of the periodic box.
pub const BOX_VOLUME: f64 = 8.0 * PI * PI * PI;

struct Plans {
    n: usize,
    max_order: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Uniform periodic grid with `n` points per axis on `[0, 2π)³`.
///
/// Cloning is cheap; FFT plans are shared.
#[derive(Clone)]
pub struct TorusGrid {
    plans: Arc<Plans>,
}

impl TorusGrid {
    pub fn new(n: usize) -> Result<Self> {
        Self::with_max_order(n, DEFAULT_MAX_ORDER)
    }

    pub fn with_max_order(n: usize, max_order: usize) -> Result<Self> {
        if n < 4 || !n.is_multiple_of(2) {
            return Err(Error::InvalidGrid(n));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        Ok(Self {
            plans: Arc::new(Plans {
                n,
                max_order,
                forward,
                inverse,
            }),
        })
    }

    pub fn n(&self) -> usize {
        self.plans.n
    }

    pub fn max_order(&self) -> usize {
        self.plans.max_order
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        let n = self.n();
        n * n * n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n() as f64
    }

    /// Integer wavenumber carried by FFT index `m`, in `{-n/2+1, …, n/2}`.
    pub fn wavenumber(&self, m: usize) -> i64 {
        let n = self.n();
        if m <= n / 2 {
            m as i64
        } else {
            m as i64 - n as i64
        }
    }

    pub fn is_nyquist(&self, m: usize) -> bool {
        m == self.n() / 2
    }

    /// Wave vector of flat spectral index `idx`.
    pub fn wave_vector(&self, idx: usize) -> [i64; 3] {
        let [a, b, c] = self.unflatten(idx);
        [self.wavenumber(a), self.wavenumber(b), self.wavenumber(c)]
    }

    pub fn unflatten(&self, idx: usize) -> [usize; 3] {
        let n = self.n();
        [idx / (n * n), (idx / n) % n, idx % n]
    }

    pub fn flatten(&self, i: [usize; 3]) -> usize {
        let n = self.n();
        (i[0] * n + i[1]) * n + i[2]
    }

    /// Physical coordinates of flat grid index `idx`.
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let h = self.spacing();
        let [a, b, c] = self.unflatten(idx);
        [a as f64 * h, b as f64 * h, c as f64 * h]
    }

    fn check_order(&self, order: usize) -> Result<()> {
        if order > self.max_order() {
            return Err(Error::OrderTooHigh {
                order,
                max: self.max_order(),
            });
        }
        Ok(())
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.n();
        let fft = if inverse {
            &self.plans.inverse
        } else {
            &self.plans.forward
        };
        // Fastest axis: contiguous rows.
        fft.process(data);
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        // Middle axis.
        for a in 0..n {
            for c in 0..n {
                for (b, v) in line.iter_mut().enumerate() {
                    *v = data[(a * n + b) * n + c];
                }
                fft.process(&mut line);
                for (b, v) in line.iter().enumerate() {
                    data[(a * n + b) * n + c] = *v;
                }
            }
        }
        // Slowest axis.
        for b in 0..n {
            for c in 0..n {
                for (a, v) in line.iter_mut().enumerate() {
                    *v = data[(a * n + b) * n + c];
                }
                fft.process(&mut line);
                for (a, v) in line.iter().enumerate() {
                    data[(a * n + b) * n + c] = *v;
                }
            }
        }
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.plans, &other.plans)
            || (self.n() == other.n() && self.max_order() == other.max_order())
    }
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("n", &self.n())
            .field("max_order", &self.max_order())
            .finish()
    }
}

/// Multi-index `α = (α₁, α₂, α₃)` selecting the derivative `∂₁^α₁ ∂₂^α₂ ∂₃^α₃`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct MultiIndex(pub [u32; 3]);

impl MultiIndex {
    pub const ZERO: MultiIndex = MultiIndex([0, 0, 0]);

    pub fn new(a1: u32, a2: u32, a3: u32) -> Self {
        Self([a1, a2, a3])
    }

    /// Unit multi-index along `axis`.
    pub fn unit(axis: usize) -> Self {
        let mut a = [0; 3];
        a[axis] = 1;
        Self(a)
    }

    pub fn order(&self) -> usize {
        self.0.iter().map(|&a| a as usize).sum()
    }

    /// Every multi-index with `|α| ≤ s`, ordered by total order.
    pub fn up_to(s: usize) -> Vec<MultiIndex> {
        let s = s as u32;
        let mut out = Vec::new();
        for total in 0..=s {
            for a1 in (0..=total).rev() {
                for a2 in (0..=total - a1).rev() {
                    out.push(MultiIndex([a1, a2, total - a1 - a2]));
                }
            }
        }
        out
    }

    /// Fourier multiplier `(ik)^α` with the Nyquist convention of this module.
    fn multiplier(&self, grid: &TorusGrid, idx: usize) -> Complex64 {
        let m = grid.unflatten(idx);
        let mut out = Complex64::new(1.0, 0.0);
        for axis in 0..3 {
            let a = self.0[axis];
            if a == 0 {
                continue;
            }
            if grid.is_nyquist(m[axis]) {
                return Complex64::new(0.0, 0.0);
            }
            let ik = Complex64::new(0.0, grid.wavenumber(m[axis]) as f64);
            out *= ik.powu(a);
        }
        out
    }

    /// `|(ik)^α|²`, used by the Sobolev weight.
    fn weight(&self, grid: &TorusGrid, idx: usize) -> f64 {
        let m = grid.unflatten(idx);
        let mut w = 1.0;
        for axis in 0..3 {
            let a = self.0[axis];
            if a == 0 {
                continue;
            }
            if grid.is_nyquist(m[axis]) {
                return 0.0;
            }
            let k = grid.wavenumber(m[axis]) as f64;
            w *= (k * k).powi(a as i32);
        }
        w
    }
}

impl std::ops::Add for MultiIndex {
    type Output = MultiIndex;
    fn add(self, other: MultiIndex) -> MultiIndex {
        MultiIndex(std::array::from_fn(|i| self.0[i] + other.0[i]))
    }
}

/// Real scalar field sampled on a [`TorusGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    /// Wraps point values; rejects non-finite entries.
    pub fn new(grid: &TorusGrid, values: Vec<f64>) -> Result<Self> {
        assert_eq!(values.len(), grid.len(), "value count must match grid");
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("values"));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub(crate) fn from_vec_unchecked(grid: &TorusGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn zeros(grid: &TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &TorusGrid, c: f64) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f(x)` at every grid point.
    pub fn from_fn(grid: &TorusGrid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        Self::from_vec_unchecked(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination of two fields on the same grid.
    ///
    /// Panics on a grid mismatch.
    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        assert!(self.grid == other.grid, "grid mismatch");
        Self::from_vec_unchecked(
            &self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn scale(&self, c: f64) -> ScalarField {
        self.map(|v| c * v)
    }

    /// `self += a · x`.
    pub fn axpy(&mut self, a: f64, x: &ScalarField) {
        assert!(self.grid == x.grid, "grid mismatch");
        for (s, &v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `∫ f dx` over the box.
    pub fn integral(&self) -> f64 {
        self.mean() * BOX_VOLUME
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn spectrum(&self) -> Spectrum {
        let n3 = self.grid.len() as f64;
        let mut coeffs: Vec<Complex64> = self
            .values
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        self.grid.transform(&mut coeffs, false);
        for c in &mut coeffs {
            *c /= n3;
        }
        Spectrum {
            grid: self.grid.clone(),
            coeffs,
        }
    }
}

impl std::ops::Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl std::ops::Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl std::ops::Mul for &ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a * b)
    }
}

/// Fourier coefficients of a real field.
#[derive(Clone, Debug)]
pub struct Spectrum {
    grid: TorusGrid,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn zeros(grid: &TorusGrid) -> Self {
        Self {
            grid: grid.clone(),
            coeffs: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    /// Back to point values; the imaginary residue of the inverse transform
    /// is discarded.
    pub fn to_field(&self) -> ScalarField {
        let mut data = self.coeffs.clone();
        self.grid.transform(&mut data, true);
        ScalarField::from_vec_unchecked(&self.grid, data.into_iter().map(|c| c.re).collect())
    }

    /// Multiplies each mode by `f(k)`.
    pub fn map_modes(&self, f: impl Fn([i64; 3], Complex64) -> Complex64) -> Spectrum {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| f(self.grid.wave_vector(i), c))
            .collect();
        Spectrum {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    pub fn derivative(&self, alpha: MultiIndex) -> Result<Spectrum> {
        self.grid.check_order(alpha.order())?;
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| c * alpha.multiplier(&self.grid, i))
            .collect();
        Ok(Spectrum {
            grid: self.grid.clone(),
            coeffs,
        })
    }

    /// First derivative along `axis` as point values.
    pub fn partial(&self, axis: usize) -> ScalarField {
        self.derivative(MultiIndex::unit(axis))
            .expect("first derivatives are always admissible")
            .to_field()
    }

    /// Laplacian `Σⱼ ∂ⱼ²` as point values.
    pub fn laplacian(&self) -> ScalarField {
        let nyq = self.grid.n() as i64 / 2;
        self.map_modes(|k, c| {
            let k2: i64 = k.iter().filter(|&&kj| kj != nyq).map(|&kj| kj * kj).sum();
            c * -(k2 as f64)
        })
        .to_field()
    }

    /// Zeroes every mode with some `|kⱼ| > n/3`.
    pub fn dealias(&mut self) {
        let n = self.grid.n() as i64;
        for i in 0..self.coeffs.len() {
            let k = self.grid.wave_vector(i);
            if k.iter().any(|&kj| 3 * kj.abs() > n) {
                self.coeffs[i] = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// `Σ_k |f̂(k)|²`.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// `∇^α f` by Fourier multiplication with `(ik)^α`.
pub fn spectral_derivative(f: &ScalarField, alpha: MultiIndex) -> Result<ScalarField> {
    f.grid.check_order(alpha.order())?;
    if alpha.order() == 0 {
        return Ok(f.clone());
    }
    Ok(f.spectrum().derivative(alpha)?.to_field())
}

/// `H^s` norm in multi-index form, `(Σ_f Σ_{|α|≤s} ‖∇^α f‖²_{L²})^{1/2}`.
pub fn sobolev_norm(fields: &[&ScalarField], s: usize) -> Result<f64> {
    Ok(sobolev_norm_sq(fields, s)?.sqrt())
}

/// Square of [`sobolev_norm`].
pub fn sobolev_norm_sq(fields: &[&ScalarField], s: usize) -> Result<f64> {
    let Some(first) = fields.first() else {
        return Ok(0.0);
    };
    let grid = first.grid();
    grid.check_order(s)?;
    for f in fields {
        first.same_grid(f)?;
    }
    let alphas = MultiIndex::up_to(s);
    let weights: Vec<f64> = (0..grid.len())
        .map(|i| alphas.iter().map(|a| a.weight(grid, i)).sum())
        .collect();
    let mut total = 0.0;
    for f in fields {
        let spec = f.spectrum();
        total += spec
            .coeffs
            .iter()
            .zip(&weights)
            .map(|(c, w)| w * c.norm_sqr())
            .sum::<f64>();
    }
    Ok(total * BOX_VOLUME)
}

pub fn linf_norm(f: &ScalarField) -> f64 {
    f.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// `∫ f g dx` by the grid rule, exact for products of band-limited fields.
pub fn l2_inner(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    f.same_grid(g)?;
    let sum: f64 = f.values.iter().zip(&g.values).map(|(a, b)| a * b).sum();
    Ok(sum * BOX_VOLUME / f.grid.len() as f64)
}

/// Two-thirds rule: removes every mode with some `|kⱼ| > n/3`.
pub fn dealias(f: &ScalarField) -> ScalarField {
    let mut spec = f.spectrum();
    spec.dealias();
    spec.to_field()
}

/// Real field with random Fourier content confined to `|kⱼ| ≤ kmax`.
///
/// Coefficients are standard normal in real and imaginary part; the result
/// is the real part of the synthesised field, so it stays in the band.
pub fn random_band_limited(grid: &TorusGrid, kmax: i64, rng: &mut impl rand::Rng) -> ScalarField {
    let mut spec = Spectrum::zeros(grid);
    for i in 0..grid.len() {
        let k = grid.wave_vector(i);
        if k.iter().all(|kj| kj.abs() <= kmax) && !k.iter().any(|&kj| kj == grid.n() as i64 / 2) {
            let re: f64 = rng.sample(rand_distr::StandardNormal);
            let im: f64 = rng.sample(rand_distr::StandardNormal);
            spec.coeffs_mut()[i] = Complex64::new(re, im);
        }
    }
    spec.to_field()
}
