//! Dyadic shifts, symbol multiplication, commutators, and operator-norm
//! estimation for matrix-free linear maps on coefficient space.
//!
//! The shift sends `h_I` to `(h_{I-} - h_{I+})/sqrt(2)`; in coefficient form
//! the output at `I` is `a_I` times the input at the parent of `I`. On the
//! finite grid the image of the finest cancellative level would need
//! sub-resolution Haar functions, so those coefficients are annihilated;
//! every isometry statement below is restricted to the truncation-safe
//! subspace accordingly.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    analyze2d, synthesize2d, SampledField2D, SampledSymbol2D, VectorSpectrum1D, VectorSpectrum2D,
    ZERO,
};
use crate::grid::GridConfig;

/// Coordinate axis of the square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

#[inline]
fn child_sign(slot: usize) -> f64 {
    // Tree slots 2k / 2k+1 are the left / right child of slot k.
    if slot % 2 == 0 {
        std::f64::consts::FRAC_1_SQRT_2
    } else {
        -std::f64::consts::FRAC_1_SQRT_2
    }
}

// ---------------------------------------------------------------------------
// Shifts
// ---------------------------------------------------------------------------

/// One-parameter dyadic shift in coefficient space.
pub fn shift1d(s: &VectorSpectrum1D) -> VectorSpectrum1D {
    let n = 1usize << s.depth;
    let d = s.dim;
    let mut out = VectorSpectrum1D::zeros(s.depth, s.dim);
    for slot in 2..n {
        let a = child_sign(slot);
        let parent = slot / 2;
        for c in 0..d {
            out.data[slot * d + c] = s.data[parent * d + c] * a;
        }
    }
    out
}

/// Adjoint of [`shift1d`]: output at `K` is `(in(K-) - in(K+))/sqrt(2)`.
pub fn shift1d_adjoint(s: &VectorSpectrum1D) -> VectorSpectrum1D {
    let n = 1usize << s.depth;
    let d = s.dim;
    let mut out = VectorSpectrum1D::zeros(s.depth, s.dim);
    for slot in 1..n / 2 {
        for c in 0..d {
            let l = s.data[(2 * slot) * d + c];
            let r = s.data[(2 * slot + 1) * d + c];
            out.data[slot * d + c] = (l - r) * std::f64::consts::FRAC_1_SQRT_2;
        }
    }
    out
}

fn shift2d_axis(s: &VectorSpectrum2D, axis: Axis, adjoint: bool) -> VectorSpectrum2D {
    let cfg = s.config();
    let n = cfg.side();
    let d = cfg.dim;
    let mut out = VectorSpectrum2D::zeros(cfg);
    let (fast, slow) = match axis {
        Axis::X => (1usize, n), // shifted slot varies along x
        Axis::Y => (n, 1),
    };
    if !adjoint {
        for other in 0..n {
            for slot in 2..n {
                let a = child_sign(slot);
                let parent = slot / 2;
                let dst = (other * slow + slot * fast) * d;
                let src = (other * slow + parent * fast) * d;
                for c in 0..d {
                    out.data_mut()[dst + c] = s.data()[src + c] * a;
                }
            }
        }
    } else {
        for other in 0..n {
            for slot in 1..n / 2 {
                let dst = (other * slow + slot * fast) * d;
                let l = (other * slow + (2 * slot) * fast) * d;
                let r = (other * slow + (2 * slot + 1) * fast) * d;
                for c in 0..d {
                    out.data_mut()[dst + c] =
                        (s.data()[l + c] - s.data()[r + c]) * std::f64::consts::FRAC_1_SQRT_2;
                }
            }
        }
    }
    out
}

/// Tensor action of the shift on the x Haar factor.
pub fn shift_x(s: &VectorSpectrum2D) -> VectorSpectrum2D {
    shift2d_axis(s, Axis::X, false)
}

/// Tensor action of the shift on the y Haar factor.
pub fn shift_y(s: &VectorSpectrum2D) -> VectorSpectrum2D {
    shift2d_axis(s, Axis::Y, false)
}

pub fn shift_x_adjoint(s: &VectorSpectrum2D) -> VectorSpectrum2D {
    shift2d_axis(s, Axis::X, true)
}

pub fn shift_y_adjoint(s: &VectorSpectrum2D) -> VectorSpectrum2D {
    shift2d_axis(s, Axis::Y, true)
}

pub fn shift_axis(s: &VectorSpectrum2D, axis: Axis) -> VectorSpectrum2D {
    shift2d_axis(s, axis, false)
}

/// Shift applied in sample space (transform at the boundaries).
pub fn shift_field(f: &SampledField2D, axis: Axis) -> SampledField2D {
    synthesize2d(&shift_axis(&analyze2d(f), axis))
}

// ---------------------------------------------------------------------------
// Multiplication and commutators
// ---------------------------------------------------------------------------

/// Per-cell matrix-vector product `(Bf)(x) = B(x) f(x)`.
pub fn multiply(b: &SampledSymbol2D, f: &SampledField2D) -> Result<SampledField2D> {
    b.config().same_grid(&f.config())?;
    let cfg = f.config();
    let n = cfg.side();
    let d = cfg.dim;
    let mut out = SampledField2D::zeros(cfg);
    for iy in 0..n {
        for ix in 0..n {
            let m = b.at(ix, iy);
            let v = f.at(ix, iy);
            let o = out.at_mut(ix, iy);
            for r in 0..d {
                let mut acc = ZERO;
                for c in 0..d {
                    acc += m[r * d + c] * v[c];
                }
                o[r] = acc;
            }
        }
    }
    Ok(out)
}

/// One-parameter commutator `B . Sh_axis(f) - Sh_axis(B f)`.
pub fn commutator1p(b: &SampledSymbol2D, f: &SampledField2D, axis: Axis) -> Result<SampledField2D> {
    let lhs = multiply(b, &shift_field(f, axis))?;
    let rhs = shift_field(&multiply(b, f)?, axis);
    Ok(lhs.sub(&rhs))
}

fn commutator2p_generic(
    b: &SampledSymbol2D,
    f: &SampledField2D,
    hx: &dyn Fn(&SampledField2D) -> SampledField2D,
    hy: &dyn Fn(&SampledField2D) -> SampledField2D,
) -> Result<SampledField2D> {
    b.config().same_grid(&f.config())?;
    let h2f = hy(f);
    let t1 = multiply(b, &hx(&h2f))?;
    let t2 = hx(&multiply(b, &h2f)?);
    let h1f = hx(f);
    let t3 = hy(&multiply(b, &h1f)?);
    let t4 = hy(&hx(&multiply(b, f)?));
    let mut out = t1;
    out.add_scaled(&t2, Complex64::new(-1.0, 0.0));
    out.add_scaled(&t3, Complex64::new(-1.0, 0.0));
    out.add_scaled(&t4, Complex64::new(1.0, 0.0));
    Ok(out)
}

/// Iterated commutator `[[M_B, Sh_1], Sh_2] f` with the dyadic shifts.
pub fn commutator2p(b: &SampledSymbol2D, f: &SampledField2D) -> Result<SampledField2D> {
    commutator2p_generic(
        b,
        f,
        &|g| shift_field(g, Axis::X),
        &|g| shift_field(g, Axis::Y),
    )
}

fn shift_field_adjoint(f: &SampledField2D, axis: Axis) -> SampledField2D {
    synthesize2d(&shift2d_axis(&analyze2d(f), axis, true))
}

/// Adjoint of [`commutator2p`]: the same four-term sum with the adjoint
/// symbol and adjoint shifts.
pub fn commutator2p_adjoint(b_adj: &SampledSymbol2D, f: &SampledField2D) -> Result<SampledField2D> {
    commutator2p_generic(
        b_adj,
        f,
        &|g| shift_field_adjoint(g, Axis::X),
        &|g| shift_field_adjoint(g, Axis::Y),
    )
}

/// Scalar 1D commutator `b . Sh(f) - Sh(b f)` (both fields dimension 1).
pub fn commutator1d(
    b: &crate::field::SampledField1D,
    f: &crate::field::SampledField1D,
) -> Result<crate::field::SampledField1D> {
    use crate::field::{analyze1d, synthesize1d, SampledField1D};
    if b.dim != 1 || f.dim != 1 || b.depth != f.depth {
        return Err(Error::DimensionMismatch("commutator1d expects matching scalar fields".into()));
    }
    let shift = |g: &SampledField1D| synthesize1d(&shift1d(&analyze1d(g)));
    let pointwise = |a: &SampledField1D, b: &SampledField1D| {
        let mut out = a.clone();
        for (x, y) in out.data.iter_mut().zip(b.data.iter()) {
            *x *= y;
        }
        out
    };
    let lhs = pointwise(b, &shift(f));
    let mut rhs = shift(&pointwise(b, f));
    for (x, y) in rhs.data.iter_mut().zip(lhs.data.iter()) {
        *x = y - *x;
    }
    Ok(rhs)
}

// ---------------------------------------------------------------------------
// Operator handles and norm estimation
// ---------------------------------------------------------------------------

type ApplyFn = Box<dyn Fn(&VectorSpectrum2D) -> VectorSpectrum2D + Send + Sync>;

/// A matrix-free linear map on `VectorSpectrum2D` with its adjoint and an
/// optional materialized matrix for oracle comparison.
pub struct LinearOperatorHandle {
    cfg: GridConfig,
    apply: ApplyFn,
    adjoint: ApplyFn,
    materialized: Option<DMatrix<Complex64>>,
}

impl LinearOperatorHandle {
    pub fn new(cfg: GridConfig, apply: ApplyFn, adjoint: ApplyFn) -> Self {
        LinearOperatorHandle { cfg, apply, adjoint, materialized: None }
    }

    pub fn config(&self) -> GridConfig {
        self.cfg
    }

    /// Flat dimension of the space the operator acts on.
    pub fn flat_dim(&self) -> usize {
        self.cfg.flat_dim()
    }

    pub fn apply(&self, s: &VectorSpectrum2D) -> VectorSpectrum2D {
        (self.apply)(s)
    }

    pub fn apply_adjoint(&self, s: &VectorSpectrum2D) -> VectorSpectrum2D {
        (self.adjoint)(s)
    }

    pub fn materialized(&self) -> Option<&DMatrix<Complex64>> {
        self.materialized.as_ref()
    }

    /// Applies the operator to every basis vector and stores the columns.
    pub fn with_materialized(mut self) -> Self {
        self.materialized = Some(self.materialize());
        self
    }

    pub fn materialize(&self) -> DMatrix<Complex64> {
        let dim = self.flat_dim();
        let mut m = DMatrix::zeros(dim, dim);
        for j in 0..dim {
            let mut e = VectorSpectrum2D::zeros(self.cfg);
            e.data_mut()[j] = Complex64::new(1.0, 0.0);
            let col = self.apply(&e);
            for (i, v) in col.data().iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }

    pub fn zero(cfg: GridConfig) -> Self {
        LinearOperatorHandle::new(
            cfg,
            Box::new(move |_| VectorSpectrum2D::zeros(cfg)),
            Box::new(move |_| VectorSpectrum2D::zeros(cfg)),
        )
    }

    /// Wraps an explicit matrix (columns act on flattened spectra).
    pub fn from_matrix(cfg: GridConfig, m: DMatrix<Complex64>) -> Self {
        let mh = m.adjoint();
        let m2 = m.clone();
        let apply = move |s: &VectorSpectrum2D| apply_matrix(&m2, s, cfg);
        let adj = move |s: &VectorSpectrum2D| apply_matrix(&mh, s, cfg);
        LinearOperatorHandle {
            cfg,
            apply: Box::new(apply),
            adjoint: Box::new(adj),
            materialized: Some(m),
        }
    }

    /// The shift in the given axis.
    pub fn shift(cfg: GridConfig, axis: Axis) -> Self {
        LinearOperatorHandle::new(
            cfg,
            Box::new(move |s| shift2d_axis(s, axis, false)),
            Box::new(move |s| shift2d_axis(s, axis, true)),
        )
    }

    /// The shift restricted to the truncation-safe subspace (cancellative
    /// coefficients of axis level at most `N-2`), where it is an isometry.
    pub fn shift_restricted(cfg: GridConfig, axis: Axis) -> Self {
        let project = move |s: &VectorSpectrum2D| match axis {
            Axis::X => s.project_levels(cfg.depth - 2, cfg.depth - 1),
            Axis::Y => s.project_levels(cfg.depth - 1, cfg.depth - 2),
        };
        LinearOperatorHandle::new(
            cfg,
            Box::new(move |s| shift2d_axis(&project(s), axis, false)),
            Box::new(move |s| project(&shift2d_axis(s, axis, true))),
        )
    }

    /// Iterated shift commutator `[[M_B, Sh_1], Sh_2]` for a sampled symbol.
    pub fn commutator2p(b: &SampledSymbol2D) -> Self {
        let cfg = b.config();
        let b_fwd = b.clone();
        let b_adj = b.adjoint_symbol();
        LinearOperatorHandle::new(
            cfg,
            Box::new(move |s| {
                analyze2d(&commutator2p(&b_fwd, &synthesize2d(s)).expect("same grid"))
            }),
            Box::new(move |s| {
                analyze2d(&commutator2p_adjoint(&b_adj, &synthesize2d(s)).expect("same grid"))
            }),
        )
    }
}

fn apply_matrix(m: &DMatrix<Complex64>, s: &VectorSpectrum2D, cfg: GridConfig) -> VectorSpectrum2D {
    let mut out = VectorSpectrum2D::zeros(cfg);
    let dim = cfg.flat_dim();
    for i in 0..dim {
        let mut acc = ZERO;
        for j in 0..dim {
            acc += m[(i, j)] * s.data()[j];
        }
        out.data_mut()[i] = acc;
    }
    out
}

/// Result of the iterative norm estimation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub iterations: usize,
    pub restarts: usize,
}

/// Largest singular value via power iteration on `T^* T`, with independent
/// seeded restarts (the maximum over restarts is reported).
///
/// Returns [`Error::NoConvergence`] carrying the last estimate when any
/// restart fails to stabilize within `max_iters`.
pub fn operator_norm(op: &LinearOperatorHandle, tol: f64, max_iters: usize) -> Result<NormEstimate> {
    const RESTARTS: usize = 5;
    const MIN_ITERS: usize = 8;
    use rand::SeedableRng;
    let mut best = 0.0f64;
    let mut total_iters = 0usize;
    let mut all_converged = true;
    for restart in 0..RESTARTS {
        let mut rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(op.cfg.seed ^ (0x9e37_79b9_7f4a_7c15u64).wrapping_mul(restart as u64 + 1));
        let mut v = VectorSpectrum2D::random(op.cfg, &mut rng);
        let nv = v.l2_norm();
        if nv == 0.0 {
            continue;
        }
        let inv = Complex64::new(1.0 / nv, 0.0);
        v = v.scaled(inv);
        let mut prev = f64::NAN;
        let mut converged = false;
        let mut iters = 0;
        for k in 0..max_iters {
            iters = k + 1;
            let w = op.apply(&v);
            let sigma = w.l2_norm();
            if sigma == 0.0 {
                // v is in the kernel; the estimate from this start is 0.
                prev = 0.0;
                converged = true;
                break;
            }
            let u = op.apply_adjoint(&w);
            let nu = u.l2_norm();
            if nu == 0.0 {
                prev = sigma;
                converged = true;
                break;
            }
            v = u.scaled(Complex64::new(1.0 / nu, 0.0));
            if k >= MIN_ITERS && (sigma - prev).abs() <= tol * sigma.max(f64::MIN_POSITIVE) {
                prev = sigma;
                converged = true;
                break;
            }
            prev = sigma;
        }
        total_iters += iters;
        best = best.max(prev);
        all_converged &= converged;
    }
    if !all_converged {
        return Err(Error::NoConvergence { last: best, iters: total_iters });
    }
    Ok(NormEstimate { value: best, iterations: total_iters, restarts: RESTARTS })
}

/// Writes a materialized matrix as CSV, row-major with `re,im` cell pairs.
pub fn write_matrix_csv<W: std::io::Write>(m: &DMatrix<Complex64>, mut w: W) -> Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|j| format!("{},{}", m[(i, j)].re, m[(i, j)].im))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
