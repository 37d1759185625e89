//! Sampled fields, Haar spectra, and the transforms between them.
//!
//! A field is piecewise constant on the finest cells; the inner product is
//! `<f,g> = sum over cells of f . conj(g) . (cell area)`, matching the
//! continuum inner product under piecewise-constant sampling.
//!
//! Per axis, the orthonormal basis of the `2^N`-dimensional sample space is
//! the constant function (slot 0) together with the cancellative Haar
//! functions `h_I` of levels `0..N` (slot `2^level + index`). The 2D basis is
//! the tensor square, so a spectrum is stored as a `2^N x 2^N` grid of
//! coefficients; the `(0, .)` and `(., 0)` slots are the mean bookkeeping
//! terms that a finite model needs for exact round trips.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DyadicInterval, DyadicRectangle, GridConfig, HaarIndex2D};

pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);

// ---------------------------------------------------------------------------
// 1D line transforms
// ---------------------------------------------------------------------------

/// In-place Haar analysis of one line of `n` samples with the given cell
/// width. On return, slot 0 holds the integral `<f, 1>` and slot `2^j + k`
/// holds `<f, h_{(j,k)}>`.
pub(crate) fn analyze_line(line: &mut [Complex64], cell_width: f64, scratch: &mut Vec<Complex64>) {
    let n = line.len();
    debug_assert!(n.is_power_of_two());
    scratch.clear();
    scratch.extend(line.iter().map(|v| v * cell_width));
    let mut m = n;
    let mut width = cell_width;
    while m > 1 {
        m /= 2;
        width *= 2.0;
        let norm = 1.0 / width.sqrt();
        for k in 0..m {
            let a = scratch[2 * k];
            let b = scratch[2 * k + 1];
            line[m + k] = (a - b) * norm;
            scratch[k] = a + b;
        }
    }
    line[0] = scratch[0];
}

/// Inverse of [`analyze_line`].
pub(crate) fn synthesize_line(
    line: &mut [Complex64],
    scratch: &mut Vec<Complex64>,
) {
    let n = line.len();
    debug_assert!(n.is_power_of_two());
    scratch.clear();
    scratch.resize(n, ZERO);
    scratch[0] = line[0];
    let mut m = 1;
    let mut width = 1.0f64;
    while m < n {
        let norm = 1.0 / width.sqrt();
        for k in (0..m).rev() {
            let val = scratch[k];
            let c = line[m + k] * norm;
            scratch[2 * k] = val + c;
            scratch[2 * k + 1] = val - c;
        }
        m *= 2;
        width *= 0.5;
    }
    line.copy_from_slice(scratch);
}

/// Average pyramid: returns `u` of length `2n` with `u[tree_index(I)] =
/// <f, h^1_I>` for every dyadic interval of levels `0..=N`. Slot 0 unused.
pub(crate) fn average_tree_line(line: &[Complex64], cell_width: f64) -> Vec<Complex64> {
    let n = line.len();
    let mut ints = vec![ZERO; 2 * n];
    for (i, v) in line.iter().enumerate() {
        ints[n + i] = v * cell_width;
    }
    for t in (1..n).rev() {
        ints[t] = ints[2 * t] + ints[2 * t + 1];
    }
    let mut out = vec![ZERO; 2 * n];
    for t in 1..2 * n {
        let level = usize::BITS - 1 - t.leading_zeros();
        let measure = cell_width * (n >> level) as f64;
        out[t] = ints[t] / measure.sqrt();
    }
    out
}

/// Adjoint of [`average_tree_line`] as a synthesis: given coefficients `c`
/// over tree nodes, produces the samples of `sum_I c_I h^1_I`.
pub(crate) fn accumulate_average_line(coeffs: &[Complex64], n: usize, cell_width: f64) -> Vec<Complex64> {
    debug_assert_eq!(coeffs.len(), 2 * n);
    let mut acc = vec![ZERO; 2 * n];
    for t in 1..2 * n {
        let level = usize::BITS - 1 - t.leading_zeros();
        let measure = cell_width * (n >> level) as f64;
        let own = coeffs[t] / measure.sqrt();
        acc[t] = own + if t > 1 { acc[t / 2] } else { ZERO };
    }
    acc[n..].to_vec()
}

/// Synthesis of purely cancellative line coefficients (slot 0 ignored).
pub(crate) fn accumulate_cancellative_line(
    coeffs: &[Complex64],
    scratch: &mut Vec<Complex64>,
) -> Vec<Complex64> {
    let mut line = coeffs.to_vec();
    line[0] = ZERO;
    synthesize_line(&mut line, scratch);
    line
}

// ---------------------------------------------------------------------------
// Generic 2D transform over `comps` interleaved components
// ---------------------------------------------------------------------------

fn transform2d(data: &mut [Complex64], n: usize, comps: usize, cell_width: f64, analyze: bool) {
    let mut line = vec![ZERO; n];
    let mut scratch = Vec::with_capacity(n);
    // x-axis: elements of a line are `comps` apart
    for row in 0..n {
        for c in 0..comps {
            let base = row * n * comps + c;
            for i in 0..n {
                line[i] = data[base + i * comps];
            }
            if analyze {
                analyze_line(&mut line, cell_width, &mut scratch);
            } else {
                synthesize_line(&mut line, &mut scratch);
            }
            for i in 0..n {
                data[base + i * comps] = line[i];
            }
        }
    }
    // y-axis: elements of a line are `n * comps` apart
    for col in 0..n {
        for c in 0..comps {
            let base = col * comps + c;
            for i in 0..n {
                line[i] = data[base + i * n * comps];
            }
            if analyze {
                analyze_line(&mut line, cell_width, &mut scratch);
            } else {
                synthesize_line(&mut line, &mut scratch);
            }
            for i in 0..n {
                data[base + i * n * comps] = line[i];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// 2D vector-valued types
// ---------------------------------------------------------------------------

macro_rules! grid2d_common {
    ($ty:ident, $comps:ident) => {
        impl $ty {
            pub fn zeros(cfg: GridConfig) -> Self {
                let len = cfg.cell_count() * cfg.$comps();
                $ty { cfg, data: vec![ZERO; len] }
            }

            #[inline]
            pub fn config(&self) -> GridConfig {
                self.cfg
            }

            #[inline]
            pub fn data(&self) -> &[Complex64] {
                &self.data
            }

            #[inline]
            pub fn data_mut(&mut self) -> &mut [Complex64] {
                &mut self.data
            }

            pub fn scaled(&self, c: Complex64) -> Self {
                let mut out = self.clone();
                for v in out.data.iter_mut() {
                    *v *= c;
                }
                out
            }

            pub fn add_scaled(&mut self, other: &Self, c: Complex64) {
                debug_assert_eq!(self.data.len(), other.data.len());
                for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
                    *a += b * c;
                }
            }

            pub fn sub(&self, other: &Self) -> Self {
                let mut out = self.clone();
                out.add_scaled(other, Complex64::new(-1.0, 0.0));
                out
            }
        }
    };
}

/// A function `[0,1)^2 -> C^d`, piecewise constant on the finest cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledField2D {
    cfg: GridConfig,
    data: Vec<Complex64>,
}

/// A function `[0,1)^2 -> C^{d x d}` (matrix symbol), cellwise row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSymbol2D {
    cfg: GridConfig,
    data: Vec<Complex64>,
}

/// Haar coefficients of a vector-valued function: a `2^N x 2^N` grid of
/// `C^d` coefficients indexed by per-axis basis slots.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSpectrum2D {
    cfg: GridConfig,
    data: Vec<Complex64>,
}

/// Haar coefficients of a matrix symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSpectrum2D {
    cfg: GridConfig,
    data: Vec<Complex64>,
}

trait CompCount {
    fn vec_comps(&self) -> usize;
    fn mat_comps(&self) -> usize;
}
impl CompCount for GridConfig {
    fn vec_comps(&self) -> usize {
        self.dim
    }
    fn mat_comps(&self) -> usize {
        self.dim * self.dim
    }
}

grid2d_common!(SampledField2D, vec_comps);
grid2d_common!(SampledSymbol2D, mat_comps);
grid2d_common!(VectorSpectrum2D, vec_comps);
grid2d_common!(MatrixSpectrum2D, mat_comps);

impl SampledField2D {
    pub fn from_fn(cfg: GridConfig, mut f: impl FnMut(usize, usize, usize) -> Complex64) -> Self {
        let n = cfg.side();
        let d = cfg.dim;
        let mut out = Self::zeros(cfg);
        for iy in 0..n {
            for ix in 0..n {
                for c in 0..d {
                    out.data[(iy * n + ix) * d + c] = f(ix, iy, c);
                }
            }
        }
        out
    }

    /// Value vector at a cell.
    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> &[Complex64] {
        let n = self.cfg.side();
        let d = self.cfg.dim;
        &self.data[(iy * n + ix) * d..(iy * n + ix) * d + d]
    }

    #[inline]
    pub fn at_mut(&mut self, ix: usize, iy: usize) -> &mut [Complex64] {
        let n = self.cfg.side();
        let d = self.cfg.dim;
        &mut self.data[(iy * n + ix) * d..(iy * n + ix) * d + d]
    }

    /// `<f, g>` with the cell-area weight.
    pub fn inner(&self, other: &Self) -> Complex64 {
        debug_assert_eq!(self.data.len(), other.data.len());
        let area = self.cfg.cell_area();
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b.conj())
            .sum::<Complex64>()
            * area
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).re.max(0.0).sqrt()
    }

    pub fn random(cfg: GridConfig, rng: &mut impl Rng) -> Self {
        let mut out = Self::zeros(cfg);
        for v in out.data.iter_mut() {
            *v = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        }
        out
    }
}

impl SampledSymbol2D {
    /// Matrix at a cell, row-major `d x d`.
    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> &[Complex64] {
        let n = self.cfg.side();
        let dd = self.cfg.dim * self.cfg.dim;
        &self.data[(iy * n + ix) * dd..(iy * n + ix) * dd + dd]
    }

    #[inline]
    pub fn at_mut(&mut self, ix: usize, iy: usize) -> &mut [Complex64] {
        let n = self.cfg.side();
        let dd = self.cfg.dim * self.cfg.dim;
        &mut self.data[(iy * n + ix) * dd..(iy * n + ix) * dd + dd]
    }

    /// Cellwise conjugate transpose `B(x)^*`.
    pub fn adjoint_symbol(&self) -> Self {
        let d = self.cfg.dim;
        let mut out = Self::zeros(self.cfg);
        for (src, dst) in self.data.chunks(d * d).zip(out.data.chunks_mut(d * d)) {
            for r in 0..d {
                for c in 0..d {
                    dst[r * d + c] = src[c * d + r].conj();
                }
            }
        }
        out
    }

    pub fn identity(cfg: GridConfig) -> Self {
        let d = cfg.dim;
        let mut out = Self::zeros(cfg);
        for cell in out.data.chunks_mut(d * d) {
            for r in 0..d {
                cell[r * d + r] = Complex64::new(1.0, 0.0);
            }
        }
        out
    }

    pub fn l2_norm(&self) -> f64 {
        let area = self.cfg.cell_area();
        (self.data.iter().map(|v| v.norm_sqr()).sum::<f64>() * area).sqrt()
    }
}

impl VectorSpectrum2D {
    /// Coefficient vector at per-axis slots `(sx, sy)`.
    #[inline]
    pub fn coeff(&self, sx: usize, sy: usize) -> &[Complex64] {
        let n = self.cfg.side();
        let d = self.cfg.dim;
        &self.data[(sy * n + sx) * d..(sy * n + sx) * d + d]
    }

    #[inline]
    pub fn coeff_mut(&mut self, sx: usize, sy: usize) -> &mut [Complex64] {
        let n = self.cfg.side();
        let d = self.cfg.dim;
        &mut self.data[(sy * n + sx) * d..(sy * n + sx) * d + d]
    }

    /// Coefficient of the fully cancellative `h_R`.
    pub fn rect_coeff(&self, rect: &DyadicRectangle) -> &[Complex64] {
        self.coeff(rect.ix.tree_index(), rect.iy.tree_index())
    }

    pub fn rect_coeff_mut(&mut self, rect: &DyadicRectangle) -> &mut [Complex64] {
        self.coeff_mut(rect.ix.tree_index(), rect.iy.tree_index())
    }

    /// Parseval inner product (plain coefficient pairing).
    pub fn inner(&self, other: &Self) -> Complex64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b.conj())
            .sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Zeroes every coefficient with a mean factor in either axis.
    pub fn project_cancellative(&self) -> Self {
        let n = self.cfg.side();
        let d = self.cfg.dim;
        let mut out = self.clone();
        for sy in 0..n {
            for sx in 0..n {
                if sx == 0 || sy == 0 {
                    out.data[(sy * n + sx) * d..(sy * n + sx) * d + d].fill(ZERO);
                }
            }
        }
        out
    }

    /// Keeps only cancellative coefficients with per-axis levels at most
    /// `(max_x, max_y)`; everything else (including means) is zeroed.
    pub fn project_levels(&self, max_x: u32, max_y: u32) -> Self {
        let n = self.cfg.side();
        let d = self.cfg.dim;
        let mut out = Self::zeros(self.cfg);
        for sy in 1..n {
            let ly = DyadicInterval::from_tree_index(sy).level;
            if ly > max_y {
                continue;
            }
            for sx in 1..n {
                let lx = DyadicInterval::from_tree_index(sx).level;
                if lx > max_x {
                    continue;
                }
                out.data[(sy * n + sx) * d..(sy * n + sx) * d + d]
                    .copy_from_slice(&self.data[(sy * n + sx) * d..(sy * n + sx) * d + d]);
            }
        }
        out
    }

    pub fn random(cfg: GridConfig, rng: &mut impl Rng) -> Self {
        let mut out = Self::zeros(cfg);
        for v in out.data.iter_mut() {
            *v = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        }
        out
    }

    /// Random Gaussian coefficients on the fully cancellative slots only.
    pub fn random_cancellative(cfg: GridConfig, rng: &mut impl Rng) -> Self {
        let n = cfg.side();
        let d = cfg.dim;
        let mut out = Self::zeros(cfg);
        for sy in 1..n {
            for sx in 1..n {
                for c in 0..d {
                    out.data[(sy * n + sx) * d + c] =
                        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                }
            }
        }
        out
    }
}

impl MatrixSpectrum2D {
    /// Coefficient matrix at per-axis slots, row-major `d x d`.
    #[inline]
    pub fn coeff(&self, sx: usize, sy: usize) -> &[Complex64] {
        let n = self.cfg.side();
        let dd = self.cfg.dim * self.cfg.dim;
        &self.data[(sy * n + sx) * dd..(sy * n + sx) * dd + dd]
    }

    #[inline]
    pub fn coeff_mut(&mut self, sx: usize, sy: usize) -> &mut [Complex64] {
        let n = self.cfg.side();
        let dd = self.cfg.dim * self.cfg.dim;
        &mut self.data[(sy * n + sx) * dd..(sy * n + sx) * dd + dd]
    }

    /// Coefficient `B^(R)` of the fully cancellative `h_R`.
    pub fn rect_coeff(&self, rect: &DyadicRectangle) -> &[Complex64] {
        self.coeff(rect.ix.tree_index(), rect.iy.tree_index())
    }

    pub fn rect_coeff_mut(&mut self, rect: &DyadicRectangle) -> &mut [Complex64] {
        self.coeff_mut(rect.ix.tree_index(), rect.iy.tree_index())
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// True if any coefficient with a mean factor is nonzero.
    pub fn has_mean_terms(&self) -> bool {
        let n = self.cfg.side();
        let dd = self.cfg.dim * self.cfg.dim;
        for sy in 0..n {
            for sx in 0..n {
                if sx != 0 && sy != 0 {
                    continue;
                }
                let c = &self.data[(sy * n + sx) * dd..(sy * n + sx) * dd + dd];
                if c.iter().any(|v| v.norm_sqr() > 0.0) {
                    return true;
                }
            }
        }
        false
    }

    /// Spectrum of the adjoint symbol `B^*`: every coefficient conjugate
    /// transposed (the Haar functions are real).
    pub fn adjoint_symbol(&self) -> Self {
        let d = self.cfg.dim;
        let mut out = Self::zeros(self.cfg);
        for (src, dst) in self.data.chunks(d * d).zip(out.data.chunks_mut(d * d)) {
            for r in 0..d {
                for c in 0..d {
                    dst[r * d + c] = src[c * d + r].conj();
                }
            }
        }
        out
    }

    /// Extracts the scalar entry `b_{rc}` as a dimension-1 spectrum.
    pub fn extract_entry(&self, r: usize, c: usize) -> MatrixSpectrum2D {
        let d = self.cfg.dim;
        let cfg1 = GridConfig { depth: self.cfg.depth, dim: 1, seed: self.cfg.seed };
        let mut out = MatrixSpectrum2D::zeros(cfg1);
        for (i, chunk) in self.data.chunks(d * d).enumerate() {
            out.data[i] = chunk[r * d + c];
        }
        out
    }

    /// Embeds a scalar spectrum as `b . E_{rc}` in dimension `d`.
    pub fn embed_entry(scalar: &MatrixSpectrum2D, r: usize, c: usize, d: usize, seed: u64) -> Result<Self> {
        if scalar.cfg.dim != 1 {
            return Err(Error::DimensionMismatch("embed_entry expects a scalar spectrum".into()));
        }
        let cfg = GridConfig::new(scalar.cfg.depth, d, seed)?;
        let mut out = MatrixSpectrum2D::zeros(cfg);
        for (i, v) in scalar.data.iter().enumerate() {
            out.data[i * d * d + r * d + c] = *v;
        }
        Ok(out)
    }

    pub fn project_levels(&self, max_x: u32, max_y: u32) -> Self {
        let n = self.cfg.side();
        let dd = self.cfg.dim * self.cfg.dim;
        let mut out = Self::zeros(self.cfg);
        for sy in 1..n {
            let ly = DyadicInterval::from_tree_index(sy).level;
            if ly > max_y {
                continue;
            }
            for sx in 1..n {
                let lx = DyadicInterval::from_tree_index(sx).level;
                if lx > max_x {
                    continue;
                }
                out.data[(sy * n + sx) * dd..(sy * n + sx) * dd + dd]
                    .copy_from_slice(&self.data[(sy * n + sx) * dd..(sy * n + sx) * dd + dd]);
            }
        }
        out
    }

    /// Random Gaussian coefficients on the fully cancellative slots only.
    pub fn random_cancellative(cfg: GridConfig, rng: &mut impl Rng) -> Self {
        let n = cfg.side();
        let dd = cfg.dim * cfg.dim;
        let mut out = Self::zeros(cfg);
        for sy in 1..n {
            for sx in 1..n {
                for k in 0..dd {
                    out.data[(sy * n + sx) * dd + k] =
                        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Analysis / synthesis
// ---------------------------------------------------------------------------

/// Haar analysis of a vector field.
pub fn analyze2d(f: &SampledField2D) -> VectorSpectrum2D {
    let cfg = f.cfg;
    let mut data = f.data.clone();
    transform2d(&mut data, cfg.side(), cfg.dim, cfg.cell_width(), true);
    VectorSpectrum2D { cfg, data }
}

/// Haar synthesis of a vector spectrum.
pub fn synthesize2d(s: &VectorSpectrum2D) -> SampledField2D {
    let cfg = s.cfg;
    let mut data = s.data.clone();
    transform2d(&mut data, cfg.side(), cfg.dim, cfg.cell_width(), false);
    SampledField2D { cfg, data }
}

/// Haar analysis of a matrix symbol.
pub fn analyze2d_symbol(b: &SampledSymbol2D) -> MatrixSpectrum2D {
    let cfg = b.cfg;
    let mut data = b.data.clone();
    transform2d(&mut data, cfg.side(), cfg.dim * cfg.dim, cfg.cell_width(), true);
    MatrixSpectrum2D { cfg, data }
}

/// Haar synthesis of a matrix spectrum.
pub fn synthesize2d_symbol(s: &MatrixSpectrum2D) -> SampledSymbol2D {
    let cfg = s.cfg;
    let mut data = s.data.clone();
    transform2d(&mut data, cfg.side(), cfg.dim * cfg.dim, cfg.cell_width(), false);
    SampledSymbol2D { cfg, data }
}

/// Samples of a single (scalar-valued) basis element, `L^2`-normalized.
pub fn evaluate_basis(h: &HaarIndex2D, depth: u32) -> Result<SampledField2D> {
    h.validate(depth)?;
    let cfg = GridConfig::new(depth, 1, 0)?;
    let n = cfg.side();
    let profile = |i: &DyadicInterval, kind: u8| -> Vec<f64> {
        let mut v = vec![0.0; n];
        if kind == 1 {
            v.fill(1.0);
        } else {
            let (l, r) = i.children(depth).expect("validated");
            let a = 1.0 / i.measure().sqrt();
            for c in l.cells(depth) {
                v[c] = a;
            }
            for c in r.cells(depth) {
                v[c] = -a;
            }
        }
        v
    };
    let px = profile(&h.rect.ix, h.kind.0);
    let py = profile(&h.rect.iy, h.kind.1);
    Ok(SampledField2D::from_fn(cfg, |ix, iy, _| {
        Complex64::new(px[ix] * py[iy], 0.0)
    }))
}

// ---------------------------------------------------------------------------
// 1D model (used by the one-parameter shift and its tests)
// ---------------------------------------------------------------------------

/// A function `[0,1) -> C^d` on `2^N` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledField1D {
    pub depth: u32,
    pub dim: usize,
    pub data: Vec<Complex64>,
}

/// Haar coefficients of a 1D field: slot 0 mean, slot `2^j + k` for `h_I`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSpectrum1D {
    pub depth: u32,
    pub dim: usize,
    pub data: Vec<Complex64>,
}

impl SampledField1D {
    pub fn zeros(depth: u32, dim: usize) -> Self {
        SampledField1D { depth, dim, data: vec![ZERO; (1usize << depth) * dim] }
    }

    pub fn inner(&self, other: &Self) -> Complex64 {
        let w = 1.0 / (1usize << self.depth) as f64;
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b.conj())
            .sum::<Complex64>()
            * w
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).re.max(0.0).sqrt()
    }

    /// Samples of `h_I` (`dim` must be 1 to stay scalar).
    pub fn haar(depth: u32, i: &DyadicInterval) -> Result<Self> {
        if i.level >= depth {
            return Err(Error::UnrepresentableIndex(format!(
                "cancellative h at level {} needs depth > {}",
                i.level, i.level
            )));
        }
        let mut f = Self::zeros(depth, 1);
        let (l, r) = i.children(depth)?;
        let a = 1.0 / i.measure().sqrt();
        for c in l.cells(depth) {
            f.data[c] = Complex64::new(a, 0.0);
        }
        for c in r.cells(depth) {
            f.data[c] = Complex64::new(-a, 0.0);
        }
        Ok(f)
    }
}

impl VectorSpectrum1D {
    pub fn zeros(depth: u32, dim: usize) -> Self {
        VectorSpectrum1D { depth, dim, data: vec![ZERO; (1usize << depth) * dim] }
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn coeff(&self, slot: usize) -> &[Complex64] {
        &self.data[slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn coeff_mut(&mut self, slot: usize) -> &mut [Complex64] {
        &mut self.data[slot * self.dim..(slot + 1) * self.dim]
    }
}

pub fn analyze1d(f: &SampledField1D) -> VectorSpectrum1D {
    let n = 1usize << f.depth;
    let w = 1.0 / n as f64;
    let mut data = f.data.clone();
    let mut line = vec![ZERO; n];
    let mut scratch = Vec::with_capacity(n);
    for c in 0..f.dim {
        for i in 0..n {
            line[i] = data[i * f.dim + c];
        }
        analyze_line(&mut line, w, &mut scratch);
        for i in 0..n {
            data[i * f.dim + c] = line[i];
        }
    }
    VectorSpectrum1D { depth: f.depth, dim: f.dim, data }
}

pub fn synthesize1d(s: &VectorSpectrum1D) -> SampledField1D {
    let n = 1usize << s.depth;
    let mut data = s.data.clone();
    let mut line = vec![ZERO; n];
    let mut scratch = Vec::with_capacity(n);
    for c in 0..s.dim {
        for i in 0..n {
            line[i] = data[i * s.dim + c];
        }
        synthesize_line(&mut line, &mut scratch);
        for i in 0..n {
            data[i * s.dim + c] = line[i];
        }
    }
    SampledField1D { depth: s.depth, dim: s.dim, data }
}

// ---------------------------------------------------------------------------
// Pairing tables for hybrid (cancellative / average) coefficients
// ---------------------------------------------------------------------------

/// Which 1D profile family an axis of a pairing uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PairKind {
    /// `h_I`, indexed by slots `[1, 2^N)`.
    Cancellative,
    /// `h^1_I`, indexed by tree nodes `[1, 2^{N+1})`.
    Average,
}

impl PairKind {
    fn slots(&self, n: usize) -> usize {
        match self {
            PairKind::Cancellative => n,
            PairKind::Average => 2 * n,
        }
    }
}

/// Table of `<f, p_I (x) q_J>` over all representable per-axis indices.
pub(crate) struct PairTable {
    pub kind_x: PairKind,
    pub kind_y: PairKind,
    pub slots_x: usize,
    pub slots_y: usize,
    pub comps: usize,
    pub data: Vec<Complex64>,
}

impl PairTable {
    #[inline]
    pub fn at(&self, sx: usize, sy: usize) -> &[Complex64] {
        let base = (sy * self.slots_x + sx) * self.comps;
        &self.data[base..base + self.comps]
    }

    #[inline]
    pub fn at_mut(&mut self, sx: usize, sy: usize) -> &mut [Complex64] {
        let base = (sy * self.slots_x + sx) * self.comps;
        &mut self.data[base..base + self.comps]
    }
}

/// Computes all pairings `<f, p_I (x) q_J>` of cellwise data with `comps`
/// interleaved components in one pass.
pub(crate) fn pair_table_raw(
    data_in: &[Complex64],
    n: usize,
    comps: usize,
    cell_width: f64,
    kind_x: PairKind,
    kind_y: PairKind,
) -> PairTable {
    let w = cell_width;
    let sx_max = kind_x.slots(n);
    let sy_max = kind_y.slots(n);

    // Stage 1: per row, pair along x. stage[(iy * sx_max + sx) * comps + c]
    let mut stage = vec![ZERO; n * sx_max * comps];
    let mut line = vec![ZERO; n];
    let mut scratch = Vec::with_capacity(n);
    for iy in 0..n {
        for c in 0..comps {
            for ix in 0..n {
                line[ix] = data_in[(iy * n + ix) * comps + c];
            }
            match kind_x {
                PairKind::Cancellative => {
                    let mut l = line.clone();
                    analyze_line(&mut l, w, &mut scratch);
                    for sx in 1..n {
                        stage[(iy * sx_max + sx) * comps + c] = l[sx];
                    }
                }
                PairKind::Average => {
                    let avg = average_tree_line(&line, w);
                    for sx in 1..2 * n {
                        stage[(iy * sx_max + sx) * comps + c] = avg[sx];
                    }
                }
            }
        }
    }

    // Stage 2: per x-slot, pair along y.
    let mut data = vec![ZERO; sx_max * sy_max * comps];
    for sx in 0..sx_max {
        for c in 0..comps {
            for iy in 0..n {
                line[iy] = stage[(iy * sx_max + sx) * comps + c];
            }
            match kind_y {
                PairKind::Cancellative => {
                    let mut l = line.clone();
                    analyze_line(&mut l, w, &mut scratch);
                    for sy in 1..n {
                        data[(sy * sx_max + sx) * comps + c] = l[sy];
                    }
                }
                PairKind::Average => {
                    let avg = average_tree_line(&line, w);
                    for sy in 1..2 * n {
                        data[(sy * sx_max + sx) * comps + c] = avg[sy];
                    }
                }
            }
        }
    }

    PairTable { kind_x, kind_y, slots_x: sx_max, slots_y: sy_max, comps, data }
}

/// Computes all pairings `<f, p_I (x) q_J>` of a sampled field in one pass.
pub(crate) fn pair_table(f: &SampledField2D, kind_x: PairKind, kind_y: PairKind) -> PairTable {
    pair_table_raw(
        &f.data,
        f.cfg.side(),
        f.cfg.dim,
        f.cfg.cell_width(),
        kind_x,
        kind_y,
    )
}

/// Synthesis adjoint of [`pair_table_raw`]: cellwise samples of
/// `sum_{I,J} c(I,J) p_I (x) q_J`.
pub(crate) fn accumulate_table_raw(table: &PairTable, n: usize, cell_width: f64) -> Vec<Complex64> {
    let d = table.comps;
    let w = cell_width;

    // Stage 1: per x-slot, synthesize along y.
    let mut stage = vec![ZERO; table.slots_x * n * d];
    let mut scratch = Vec::with_capacity(n);
    let mut coeffs = vec![ZERO; table.slots_y];
    for sx in 0..table.slots_x {
        for c in 0..d {
            for sy in 0..table.slots_y {
                coeffs[sy] = table.data[(sy * table.slots_x + sx) * d + c];
            }
            let line = match table.kind_y {
                PairKind::Cancellative => accumulate_cancellative_line(&coeffs, &mut scratch),
                PairKind::Average => accumulate_average_line(&coeffs, n, w),
            };
            for iy in 0..n {
                stage[(iy * table.slots_x + sx) * d + c] = line[iy];
            }
        }
    }

    // Stage 2: per row, synthesize along x.
    let mut out = vec![ZERO; n * n * d];
    let mut coeffs_x = vec![ZERO; table.slots_x];
    for iy in 0..n {
        for c in 0..d {
            for sx in 0..table.slots_x {
                coeffs_x[sx] = stage[(iy * table.slots_x + sx) * d + c];
            }
            let line = match table.kind_x {
                PairKind::Cancellative => accumulate_cancellative_line(&coeffs_x, &mut scratch),
                PairKind::Average => accumulate_average_line(&coeffs_x, n, w),
            };
            for ix in 0..n {
                out[(iy * n + ix) * d + c] = line[ix];
            }
        }
    }
    out
}

/// Field-valued wrapper around [`accumulate_table_raw`].
pub(crate) fn accumulate_table(table: &PairTable, cfg: GridConfig) -> SampledField2D {
    debug_assert_eq!(table.comps, cfg.dim);
    let data = accumulate_table_raw(table, cfg.side(), cfg.cell_width());
    SampledField2D { cfg, data }
}

// ---------------------------------------------------------------------------
// JSON serialization of spectra
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CoefficientDoc {
    kind: [u8; 2],
    jx: u32,
    kx: usize,
    jy: u32,
    ky: usize,
    matrix: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct SpectrumDoc {
    depth: u32,
    dim: usize,
    coefficients: Vec<CoefficientDoc>,
}

fn spectrum_doc(cfg: GridConfig, comps: usize, data: &[Complex64]) -> SpectrumDoc {
    let n = cfg.side();
    let mut coefficients = Vec::new();
    for h in HaarIndex2D::all(cfg.depth) {
        let (sx, sy) = h.slots();
        let base = (sy * n + sx) * comps;
        let chunk = &data[base..base + comps];
        if chunk.iter().all(|v| v.re == 0.0 && v.im == 0.0) {
            continue;
        }
        coefficients.push(CoefficientDoc {
            kind: [h.kind.0, h.kind.1],
            jx: h.rect.ix.level,
            kx: h.rect.ix.index,
            jy: h.rect.iy.level,
            ky: h.rect.iy.index,
            matrix: chunk.iter().map(|v| [v.re, v.im]).collect(),
        });
    }
    SpectrumDoc { depth: cfg.depth, dim: cfg.dim, coefficients }
}

fn spectrum_from_doc(doc: &SpectrumDoc, comps_per_dim: impl Fn(usize) -> usize, seed: u64) -> Result<(GridConfig, Vec<Complex64>)> {
    let cfg = GridConfig::new(doc.depth, doc.dim, seed)?;
    let n = cfg.side();
    let comps = comps_per_dim(doc.dim);
    let mut data = vec![ZERO; n * n * comps];
    for c in &doc.coefficients {
        let h = HaarIndex2D {
            rect: DyadicRectangle::new(
                DyadicInterval::new(c.jx, c.kx),
                DyadicInterval::new(c.jy, c.ky),
            ),
            kind: (c.kind[0], c.kind[1]),
        };
        h.validate(doc.depth)?;
        if c.matrix.len() != comps {
            return Err(Error::DimensionMismatch(format!(
                "coefficient has {} entries, expected {comps}",
                c.matrix.len()
            )));
        }
        let (sx, sy) = h.slots();
        let base = (sy * n + sx) * comps;
        for (k, re_im) in c.matrix.iter().enumerate() {
            data[base + k] = Complex64::new(re_im[0], re_im[1]);
        }
    }
    Ok((cfg, data))
}

impl VectorSpectrum2D {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&spectrum_doc(self.cfg, self.cfg.dim, &self.data)).expect("serialize")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let doc: SpectrumDoc = serde_json::from_str(json)?;
        let (cfg, data) = spectrum_from_doc(&doc, |d| d, 0)?;
        Ok(VectorSpectrum2D { cfg, data })
    }
}

impl MatrixSpectrum2D {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&spectrum_doc(self.cfg, self.cfg.dim * self.cfg.dim, &self.data))
            .expect("serialize")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let doc: SpectrumDoc = serde_json::from_str(json)?;
        let (cfg, data) = spectrum_from_doc(&doc, |d| d * d, 0)?;
        Ok(MatrixSpectrum2D { cfg, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(depth: u32, dim: usize) -> GridConfig {
        GridConfig::new(depth, dim, 42).unwrap()
    }

    #[test]
    fn constant_field_has_only_mean_coefficient() {
        let cfg = cfg(3, 2);
        let v = [Complex64::new(1.5, -0.5), Complex64::new(0.0, 2.0)];
        let f = SampledField2D::from_fn(cfg, |_, _, c| v[c]);
        let s = analyze2d(&f);
        let n = cfg.side();
        for sy in 0..n {
            for sx in 0..n {
                let c = s.coeff(sx, sy);
                if sx == 0 && sy == 0 {
                    for k in 0..2 {
                        assert!((c[k] - v[k]).norm() < 1e-14);
                    }
                } else {
                    assert!(c.iter().all(|z| z.norm() < 1e-14), "({sx},{sy})");
                }
            }
        }
    }

    #[test]
    fn sampled_basis_element_gives_unit_coefficient() {
        let depth = 3;
        let r0 = DyadicRectangle::new(DyadicInterval::new(1, 0), DyadicInterval::new(2, 3));
        let h = HaarIndex2D::cancellative(r0);
        let hf = evaluate_basis(&h, depth).unwrap();
        let cfg2 = cfg(depth, 2);
        // f = h_{R0} e_1
        let f = SampledField2D::from_fn(cfg2, |ix, iy, c| {
            if c == 0 {
                hf.at(ix, iy)[0]
            } else {
                ZERO
            }
        });
        let s = analyze2d(&f);
        let n = cfg2.side();
        let (sx0, sy0) = h.slots();
        for sy in 0..n {
            for sx in 0..n {
                let c = s.coeff(sx, sy);
                if (sx, sy) == (sx0, sy0) {
                    assert!((c[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
                    assert!(c[1].norm() < 1e-12);
                } else {
                    assert!(c.iter().all(|z| z.norm() < 1e-12));
                }
            }
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        for depth in [2u32, 3, 4] {
            for dim in [1usize, 2, 3] {
                let cfg = GridConfig::new(depth, dim, 7).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(depth as u64 * 10 + dim as u64);
                for _ in 0..20 {
                    let f = SampledField2D::random(cfg, &mut rng);
                    let s = analyze2d(&f);
                    let back = synthesize2d(&s);
                    let err = back.sub(&f).l2_norm() / f.l2_norm();
                    assert!(err < 1e-12, "round trip err {err}");
                    let pars = (s.l2_norm() - f.l2_norm()).abs() / f.l2_norm();
                    assert!(pars < 1e-12, "parseval err {pars}");
                }
            }
        }
    }

    #[test]
    fn spectrum_round_trip_from_coefficients() {
        let cfg = cfg(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let s = VectorSpectrum2D::random(cfg, &mut rng);
        let f = synthesize2d(&s);
        let s2 = analyze2d(&f);
        assert!(s2.sub(&s).l2_norm() / s.l2_norm() < 1e-12);
    }

    #[test]
    fn basis_orthonormality_random_pairs() {
        let depth = 3;
        let all: Vec<_> = HaarIndex2D::all(depth).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = all[rng.gen_range(0..all.len())];
            let b = all[rng.gen_range(0..all.len())];
            let fa = evaluate_basis(&a, depth).unwrap();
            let fb = evaluate_basis(&b, depth).unwrap();
            let ip = fa.inner(&fb);
            let expect = if a == b { 1.0 } else { 0.0 };
            assert!(
                (ip - Complex64::new(expect, 0.0)).norm() < 1e-12,
                "{a:?} {b:?} -> {ip}"
            );
        }
    }

    #[test]
    fn root_mean_basis_is_constant_one() {
        let h = HaarIndex2D::from_slots(0, 0);
        let f = evaluate_basis(&h, 2).unwrap();
        for v in f.data() {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn quarter_cell_values_of_level_one_tensor() {
        // h_{(1,0)} (x) h_{(1,1)} takes values +-2 on quarter cells.
        let h = HaarIndex2D::cancellative(DyadicRectangle::new(
            DyadicInterval::new(1, 0),
            DyadicInterval::new(1, 1),
        ));
        let f = evaluate_basis(&h, 2).unwrap();
        let mut sq = 0.0;
        for iy in 0..4 {
            for ix in 0..4 {
                let v = f.at(ix, iy)[0].re;
                if ix < 2 && iy >= 2 {
                    assert!((v.abs() - 2.0).abs() < 1e-12);
                }
                sq += v * v;
            }
        }
        assert!((sq / 16.0 - 1.0).abs() < 1e-12, "l2 norm 1");
    }

    #[test]
    fn one_dimensional_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut f = SampledField1D::zeros(4, 2);
        for v in f.data.iter_mut() {
            *v = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        }
        let s = analyze1d(&f);
        let back = synthesize1d(&s);
        for (a, b) in back.data.iter().zip(f.data.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!((s.l2_norm() - f.l2_norm()).abs() < 1e-12);
    }

    #[test]
    fn pair_table_matches_direct_integration() {
        let cfg = cfg(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let f = SampledField2D::random(cfg, &mut rng);
        let n = cfg.side();
        let table = pair_table(&f, PairKind::Average, PairKind::Cancellative);

        // direct: <f, h^1_I (x) h_J> for a few picks
        for _ in 0..10 {
            let i = DyadicInterval::from_tree_index(rng.gen_range(1..2 * n));
            let j = DyadicInterval::from_tree_index(rng.gen_range(1..n));
            let hj = SampledField1D::haar(cfg.depth, &j).unwrap();
            let area = cfg.cell_area();
            let mut direct = vec![ZERO; cfg.dim];
            let wx = 1.0 / i.measure().sqrt();
            for iy in 0..n {
                for ixc in i.cells(cfg.depth) {
                    for c in 0..cfg.dim {
                        direct[c] += f.at(ixc, iy)[c] * wx * hj.data[iy].re * area;
                    }
                }
            }
            let got = table.at(i.tree_index(), j.tree_index());
            for c in 0..cfg.dim {
                assert!((got[c] - direct[c]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn accumulate_table_is_adjoint_of_pair_table() {
        let cfg = cfg(3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for (kx, ky) in [
            (PairKind::Cancellative, PairKind::Cancellative),
            (PairKind::Average, PairKind::Cancellative),
            (PairKind::Cancellative, PairKind::Average),
            (PairKind::Average, PairKind::Average),
        ] {
            let f = SampledField2D::random(cfg, &mut rng);
            let n = cfg.side();
            let mut table = PairTable {
                kind_x: kx,
                kind_y: ky,
                slots_x: kx.slots(n),
                slots_y: ky.slots(n),
                comps: 1,
                data: vec![ZERO; kx.slots(n) * ky.slots(n)],
            };
            for sy in 1..table.slots_y {
                for sx in 1..table.slots_x {
                    table.at_mut(sx, sy)[0] =
                        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                }
            }
            let g = accumulate_table(&table, cfg);
            // <accumulate(c), f> == sum c(I,J) conj(<f, p_I q_J>)
            let lhs = g.inner(&f);
            let ftab = pair_table(&f, kx, ky);
            let mut rhs = ZERO;
            for sy in 1..table.slots_y {
                for sx in 1..table.slots_x {
                    rhs += table.at(sx, sy)[0] * ftab.at(sx, sy)[0].conj();
                }
            }
            assert!((lhs - rhs).norm() < 1e-12, "{kx:?} {ky:?}");
        }
    }

    #[test]
    fn spectrum_json_round_trip_and_schema() {
        let cfg = GridConfig::new(2, 1, 0).unwrap();
        let mut s = MatrixSpectrum2D::zeros(cfg);
        let r = DyadicRectangle::new(DyadicInterval::new(1, 1), DyadicInterval::new(0, 0));
        s.rect_coeff_mut(&r)[0] = Complex64::new(2.0, -1.0);
        let json = s.to_json();
        assert_eq!(
            json,
            r#"{"depth":2,"dim":1,"coefficients":[{"kind":[0,0],"jx":1,"kx":1,"jy":0,"ky":0,"matrix":[[2.0,-1.0]]}]}"#
        );
        let back = MatrixSpectrum2D::from_json(&json).unwrap();
        assert!(back.sub(&s).l2_norm() < 1e-15);
    }
}
