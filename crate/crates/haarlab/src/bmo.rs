//! Matrix-valued dyadic BMO norms over test-set families, the trace bound,
//! the Carleson embedding check, square and maximal functions, and the
//! bilinear forms driving the paraproduct duality.
//!
//! "Open sets" of the finite model are arbitrary nonempty unions of finest
//! cells. The exact supremum over all unions is exponential, so the default
//! family samples it: all dyadic rectangles, the full square, and random
//! unions of a few rectangles. That yields a certified lower bound on the
//! norm; at depth 2 the family is exhaustive and the bound is exact.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    pair_table, MatrixSpectrum2D, PairKind, SampledField2D, VectorSpectrum2D,
};
use crate::grid::{DyadicInterval, DyadicRectangle, GridConfig};

// ---------------------------------------------------------------------------
// Cell sets and test-set families
// ---------------------------------------------------------------------------

/// A set of finest cells of the `2^N x 2^N` grid, as a bitmask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellSet {
    n: usize,
    words: Vec<u64>,
}

impl CellSet {
    pub fn empty(depth: u32) -> Self {
        let n = 1usize << depth;
        CellSet { n, words: vec![0; (n * n + 63) / 64] }
    }

    pub fn full(depth: u32) -> Self {
        let mut s = Self::empty(depth);
        let n = s.n;
        for c in 0..n * n {
            s.insert_linear(c);
        }
        s
    }

    pub fn side(&self) -> usize {
        self.n
    }

    #[inline]
    fn insert_linear(&mut self, cell: usize) {
        self.words[cell / 64] |= 1u64 << (cell % 64);
    }

    pub fn insert(&mut self, ix: usize, iy: usize) {
        self.insert_linear(iy * self.n + ix);
    }

    pub fn contains(&self, ix: usize, iy: usize) -> bool {
        let cell = iy * self.n + ix;
        self.words[cell / 64] & (1u64 << (cell % 64)) != 0
    }

    pub fn union_with(&mut self, other: &CellSet) {
        for (a, b) in self.words.iter_mut().zip(other.words.iter()) {
            *a |= b;
        }
    }

    pub fn cell_count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    /// Lebesgue measure of the union.
    pub fn measure(&self) -> f64 {
        self.cell_count() as f64 / (self.n * self.n) as f64
    }

    /// True when every cell of `other` lies in `self`.
    pub fn contains_set(&self, other: &CellSet) -> bool {
        self.words
            .iter()
            .zip(other.words.iter())
            .all(|(a, b)| b & !a == 0)
    }

    pub fn from_rectangle(depth: u32, r: &DyadicRectangle) -> Self {
        let mut s = Self::empty(depth);
        for iy in r.iy.cells(depth) {
            for ix in r.ix.cells(depth) {
                s.insert(ix, iy);
            }
        }
        s
    }

    pub fn cells(&self) -> Vec<[usize; 2]> {
        let mut out = Vec::new();
        for iy in 0..self.n {
            for ix in 0..self.n {
                if self.contains(ix, iy) {
                    out.push([ix, iy]);
                }
            }
        }
        out
    }

    pub fn from_cells(depth: u32, cells: &[[usize; 2]]) -> Self {
        let mut s = Self::empty(depth);
        for c in cells {
            s.insert(c[0], c[1]);
        }
        s
    }
}

/// How the test sets for the supremum are produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestSetFamily {
    /// Every dyadic rectangle (all levels, down to single cells).
    Rectangles,
    /// The full square only.
    FullSquare,
    /// Random unions of up to `max_rects` dyadic rectangles.
    RandomUnions { max_rects: usize, trials: usize },
    /// Every nonempty subset of cells. Exponential; depth 2 only.
    ExhaustiveCells,
    /// Union of several families.
    Composite(Vec<TestSetFamily>),
}

impl TestSetFamily {
    /// The default sampling family: rectangles, the full square, and 512
    /// random unions of up to 8 rectangles. At depth 2 the exhaustive family
    /// is affordable and replaces the sampling.
    pub fn default_family(depth: u32) -> Self {
        if depth <= 2 {
            TestSetFamily::Composite(vec![
                TestSetFamily::Rectangles,
                TestSetFamily::ExhaustiveCells,
            ])
        } else {
            TestSetFamily::Composite(vec![
                TestSetFamily::Rectangles,
                TestSetFamily::FullSquare,
                TestSetFamily::RandomUnions { max_rects: 8, trials: 512 },
            ])
        }
    }

    /// Materializes the members. Deterministic for a given `(depth, seed)`.
    pub fn members(&self, depth: u32, seed: u64) -> Vec<CellSet> {
        match self {
            TestSetFamily::Rectangles => all_rectangles(depth)
                .iter()
                .map(|r| CellSet::from_rectangle(depth, r))
                .collect(),
            TestSetFamily::FullSquare => vec![CellSet::full(depth)],
            TestSetFamily::RandomUnions { max_rects, trials } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7565_6e69_6f6e_73u64);
                let rects = all_rectangles(depth);
                let mut out = Vec::with_capacity(*trials);
                for _ in 0..*trials {
                    let count = rng.gen_range(1..=*max_rects);
                    let mut u = CellSet::empty(depth);
                    for _ in 0..count {
                        let r = &rects[rng.gen_range(0..rects.len())];
                        u.union_with(&CellSet::from_rectangle(depth, r));
                    }
                    out.push(u);
                }
                out
            }
            TestSetFamily::ExhaustiveCells => {
                let n = 1usize << depth;
                let cells = n * n;
                assert!(cells <= 16, "exhaustive family is only meant for depth <= 2");
                let mut out = Vec::with_capacity((1usize << cells) - 1);
                for mask in 1u64..(1u64 << cells) {
                    out.push(CellSet { n, words: vec![mask] });
                }
                out
            }
            TestSetFamily::Composite(parts) => {
                let mut out = Vec::new();
                for (k, p) in parts.iter().enumerate() {
                    out.extend(p.members(depth, seed.wrapping_add(k as u64)));
                }
                out
            }
        }
    }
}

fn all_rectangles(depth: u32) -> Vec<DyadicRectangle> {
    let mut out = Vec::new();
    for jx in 0..=depth {
        for kx in 0..(1usize << jx) {
            for jy in 0..=depth {
                for ky in 0..(1usize << jy) {
                    out.push(DyadicRectangle::new(
                        DyadicInterval::new(jx, kx),
                        DyadicInterval::new(jy, ky),
                    ));
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// BMO norms
// ---------------------------------------------------------------------------

/// Which coefficient product order achieved the supremum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixOrder {
    /// `B^(R) B^(R)^*`
    #[serde(rename = "left")]
    Left,
    /// `B^(R)^* B^(R)`
    #[serde(rename = "right")]
    Right,
}

/// Computed BMO quantities with the maximizing test set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BmoReport {
    pub rect_norm: f64,
    pub openset_norm: f64,
    pub order: MatrixOrder,
    pub trace_quantity: f64,
    pub witness_cells: Vec<[usize; 2]>,
    /// Supremum per order over the open-set family.
    #[serde(skip)]
    pub left_norm: f64,
    #[serde(skip)]
    pub right_norm: f64,
    /// Coefficient mass on mean slots that the norm ignores.
    #[serde(skip)]
    pub ignored_mean_mass: f64,
}

fn largest_eigenvalue_psd(m: &[Complex64], d: usize) -> f64 {
    if d == 1 {
        return m[0].re.max(0.0);
    }
    // Symmetrize to kill 1e-16 asymmetry before the eigensolve.
    let mut h = DMatrix::<Complex64>::zeros(d, d);
    for r in 0..d {
        for c in 0..d {
            h[(r, c)] = (m[r * d + c] + m[c * d + r].conj()) * 0.5;
        }
    }
    h.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0f64, f64::max)
}

struct RectangleData {
    rect: DyadicRectangle,
    mask: CellSet,
    /// `B^(R) B^(R)^*` and `B^(R)^* B^(R)`, row-major `d x d`.
    left: Vec<Complex64>,
    right: Vec<Complex64>,
    frobenius_sq: f64,
}

fn rectangle_data(b: &MatrixSpectrum2D) -> Vec<RectangleData> {
    let cfg = b.config();
    let d = cfg.dim;
    let mut out = Vec::new();
    for rect in DyadicRectangle::all_cancellative(cfg.depth) {
        let m = b.rect_coeff(&rect);
        if m.iter().all(|v| v.norm_sqr() == 0.0) {
            continue;
        }
        let mut left = vec![Complex64::new(0.0, 0.0); d * d];
        let mut right = vec![Complex64::new(0.0, 0.0); d * d];
        for r in 0..d {
            for c in 0..d {
                let mut l = Complex64::new(0.0, 0.0);
                let mut rr = Complex64::new(0.0, 0.0);
                for k in 0..d {
                    l += m[r * d + k] * m[c * d + k].conj();
                    rr += m[k * d + r].conj() * m[k * d + c];
                }
                left[r * d + c] = l;
                right[r * d + c] = rr;
            }
        }
        let frobenius_sq = m.iter().map(|v| v.norm_sqr()).sum();
        out.push(RectangleData {
            rect,
            mask: CellSet::from_rectangle(cfg.depth, &rect),
            left,
            right,
            frobenius_sq,
        });
    }
    out
}

struct SetEvaluation {
    left: f64,
    right: f64,
    trace: f64,
}

fn evaluate_set(u: &CellSet, rects: &[RectangleData], d: usize) -> Option<SetEvaluation> {
    if u.is_empty() {
        return None;
    }
    let inv_measure = 1.0 / u.measure();
    let mut left_sum = vec![Complex64::new(0.0, 0.0); d * d];
    let mut right_sum = vec![Complex64::new(0.0, 0.0); d * d];
    let mut frob = 0.0;
    let mut any = false;
    for r in rects {
        if !u.contains_set(&r.mask) {
            continue;
        }
        any = true;
        for k in 0..d * d {
            left_sum[k] += r.left[k];
            right_sum[k] += r.right[k];
        }
        frob += r.frobenius_sq;
    }
    if !any {
        return None;
    }
    for k in 0..d * d {
        left_sum[k] *= inv_measure;
        right_sum[k] *= inv_measure;
    }
    Some(SetEvaluation {
        left: largest_eigenvalue_psd(&left_sum, d).max(0.0).sqrt(),
        right: largest_eigenvalue_psd(&right_sum, d).max(0.0).sqrt(),
        trace: (frob * inv_measure).sqrt(),
    })
}

/// BMO norm of a (mean-free) symbol over a test-set family.
///
/// Mean coefficients carry no oscillation and are ignored; their mass is
/// reported in `ignored_mean_mass`.
pub fn bmo_norm(b: &MatrixSpectrum2D, family: &TestSetFamily) -> Result<BmoReport> {
    let cfg = b.config();
    let d = cfg.dim;
    let projected_mass = {
        let full = b.l2_norm();
        let canc: f64 = rectangle_data(b).iter().map(|r| r.frobenius_sq).sum();
        (full * full - canc).max(0.0).sqrt()
    };
    let rects = rectangle_data(b);

    let members = family.members(cfg.depth, cfg.seed);
    if members.is_empty() {
        return Err(Error::EmptyFamily);
    }

    let mut openset = 0.0f64;
    let mut left_best = 0.0f64;
    let mut right_best = 0.0f64;
    let mut trace_best = 0.0f64;
    let mut order = MatrixOrder::Left;
    let mut witness = members[0].clone();
    for u in &members {
        let Some(ev) = evaluate_set(u, &rects, d) else { continue };
        left_best = left_best.max(ev.left);
        right_best = right_best.max(ev.right);
        trace_best = trace_best.max(ev.trace);
        let (v, o) = if ev.left >= ev.right {
            (ev.left, MatrixOrder::Left)
        } else {
            (ev.right, MatrixOrder::Right)
        };
        if v > openset {
            openset = v;
            order = o;
            witness = u.clone();
        }
    }

    // The rectangular norm is always reported against the full rectangle
    // family, independent of the requested open-set family.
    let mut rect_norm = 0.0f64;
    for r in all_rectangles(cfg.depth) {
        let u = CellSet::from_rectangle(cfg.depth, &r);
        if let Some(ev) = evaluate_set(&u, &rects, d) {
            rect_norm = rect_norm.max(ev.left.max(ev.right));
        }
    }

    Ok(BmoReport {
        rect_norm,
        openset_norm: openset,
        order,
        trace_quantity: trace_best,
        witness_cells: witness.cells(),
        left_norm: left_best,
        right_norm: right_best,
        ignored_mean_mass: projected_mass,
    })
}

/// Replays the norm evaluation on a recorded witness set.
pub fn replay_witness(b: &MatrixSpectrum2D, cells: &[[usize; 2]]) -> Result<f64> {
    let cfg = b.config();
    let u = CellSet::from_cells(cfg.depth, cells);
    if u.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let rects = rectangle_data(b);
    Ok(evaluate_set(&u, &rects, cfg.dim)
        .map(|ev| ev.left.max(ev.right))
        .unwrap_or(0.0))
}

/// Trace-bound quantities: the Frobenius aggregate against `d` times the
/// operator-order norm.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TraceBound {
    pub lhs: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Checks `max_U sqrt(|U|^{-1} sum ||B^(R)||_F^2) <= d . C` over the family.
pub fn trace_bound_check(b: &MatrixSpectrum2D, family: &TestSetFamily) -> Result<TraceBound> {
    let report = bmo_norm(b, family)?;
    let lhs = report.trace_quantity;
    let bound = b.config().dim as f64 * report.openset_norm;
    Ok(TraceBound { lhs, bound, holds: lhs <= (1.0 + 1e-9) * bound })
}

// ---------------------------------------------------------------------------
// Carleson embedding
// ---------------------------------------------------------------------------

/// Nonnegative weights indexed by cancellative dyadic rectangles.
#[derive(Debug, Clone)]
pub struct CarlesonWeights {
    pub depth: u32,
    /// `values[(sy * 2^N + sx)]` with per-axis cancellative slots.
    pub values: Vec<f64>,
}

/// Which norm of the coefficient feeds the Carleson weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightNorm {
    Frobenius,
    Operator,
}

impl CarlesonWeights {
    pub fn zeros(depth: u32) -> Self {
        let n = 1usize << depth;
        CarlesonWeights { depth, values: vec![0.0; n * n] }
    }

    pub fn at(&self, rect: &DyadicRectangle) -> f64 {
        let n = 1usize << self.depth;
        self.values[rect.iy.tree_index() * n + rect.ix.tree_index()]
    }

    pub fn set(&mut self, rect: &DyadicRectangle, v: f64) {
        let n = 1usize << self.depth;
        self.values[rect.iy.tree_index() * n + rect.ix.tree_index()] = v;
    }

    /// Weights `a_R = ||B^(R)||^2` from a symbol, Frobenius or operator norm.
    pub fn from_symbol(b: &MatrixSpectrum2D, norm: WeightNorm) -> Self {
        let cfg = b.config();
        let d = cfg.dim;
        let mut out = Self::zeros(cfg.depth);
        for rect in DyadicRectangle::all_cancellative(cfg.depth) {
            let m = b.rect_coeff(&rect);
            let v = match norm {
                WeightNorm::Frobenius => m.iter().map(|z| z.norm_sqr()).sum(),
                WeightNorm::Operator => {
                    let mut gram = vec![Complex64::new(0.0, 0.0); d * d];
                    for r in 0..d {
                        for c in 0..d {
                            let mut acc = Complex64::new(0.0, 0.0);
                            for k in 0..d {
                                acc += m[r * d + k] * m[c * d + k].conj();
                            }
                            gram[r * d + c] = acc;
                        }
                    }
                    largest_eigenvalue_psd(&gram, d)
                }
            };
            out.set(&rect, v);
        }
        out
    }
}

/// Empirical Carleson embedding quantities.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CarlesonReport {
    /// Empirical best embedding constant over sampled nonnegative `f`.
    pub c1_emp: f64,
    /// Testing constant `max_U |U|^{-1} sum_{R in U} a_R`.
    pub c2: f64,
    /// `c1_emp / c2` (zero when both vanish).
    pub ratio: f64,
}

/// A nonnegative scalar field on the cells.
fn embedding_ratio(a: &CarlesonWeights, f: &[f64], depth: u32) -> f64 {
    let n = 1usize << depth;
    let norm_sq: f64 = f.iter().map(|v| v * v).sum::<f64>() / (n * n) as f64;
    if norm_sq == 0.0 {
        return 0.0;
    }
    // averages over all dyadic intervals per axis via an integral pyramid
    let avgs = rect_averages(f, depth);
    let mut sum = 0.0;
    for rect in DyadicRectangle::all_cancellative(depth) {
        let w = a.at(&rect);
        if w == 0.0 {
            continue;
        }
        let avg = avgs[rect.iy.tree_index() * 2 * n + rect.ix.tree_index()];
        sum += w * avg * avg;
    }
    sum / norm_sq
}

/// Averages of a scalar field over every dyadic rectangle (all node pairs).
fn rect_averages(f: &[f64], depth: u32) -> Vec<f64> {
    let n = 1usize << depth;
    // x-stage: integrals over x-nodes per row
    let mut stage = vec![0.0f64; 2 * n * n]; // [iy][tx]
    for iy in 0..n {
        let row = &f[iy * n..(iy + 1) * n];
        let mut ints = vec![0.0f64; 2 * n];
        for (i, v) in row.iter().enumerate() {
            ints[n + i] = v / n as f64;
        }
        for t in (1..n).rev() {
            ints[t] = ints[2 * t] + ints[2 * t + 1];
        }
        stage[iy * 2 * n..(iy + 1) * 2 * n].copy_from_slice(&ints);
    }
    // y-stage per x-node
    let mut out = vec![0.0f64; 2 * n * 2 * n]; // [ty][tx]
    for tx in 1..2 * n {
        let mut ints = vec![0.0f64; 2 * n];
        for iy in 0..n {
            ints[n + iy] = stage[iy * 2 * n + tx] / n as f64;
        }
        for t in (1..n).rev() {
            ints[t] = ints[2 * t] + ints[2 * t + 1];
        }
        for ty in 1..2 * n {
            let lx = usize::BITS - 1 - tx.leading_zeros();
            let ly = usize::BITS - 1 - ty.leading_zeros();
            let area = 1.0 / ((1u64 << lx) as f64 * (1u64 << ly) as f64);
            out[ty * 2 * n + tx] = ints[ty] / area;
        }
    }
    out
}

/// Empirically compares the embedding constant against the testing constant.
///
/// `C2` is exact over the family; `C1` is a supremum over all nonnegative
/// `f`, approached here by multiplicative-perturbation hill climbing seeded
/// with the family indicators (which already force `c1_emp >= c2`).
pub fn carleson_check(
    a: &CarlesonWeights,
    family: &TestSetFamily,
    trials: usize,
    seed: u64,
) -> Result<CarlesonReport> {
    let depth = a.depth;
    let n = 1usize << depth;
    let members = family.members(depth, seed);
    if members.is_empty() {
        return Err(Error::EmptyFamily);
    }

    let mut c2 = 0.0f64;
    let mut best_u: Option<&CellSet> = None;
    for u in &members {
        if u.is_empty() {
            continue;
        }
        let mut sum = 0.0;
        for rect in DyadicRectangle::all_cancellative(depth) {
            let w = a.at(&rect);
            if w == 0.0 {
                continue;
            }
            if u.contains_set(&CellSet::from_rectangle(depth, &rect)) {
                sum += w;
            }
        }
        let v = sum / u.measure();
        if v > c2 {
            c2 = v;
            best_u = Some(u);
        }
    }

    let mut c1 = 0.0f64;
    // Seed with the best indicator and the full square.
    let mut seeds: Vec<Vec<f64>> = Vec::new();
    if let Some(u) = best_u {
        let mut f = vec![0.0; n * n];
        for iy in 0..n {
            for ix in 0..n {
                if u.contains(ix, iy) {
                    f[iy * n + ix] = 1.0;
                }
            }
        }
        seeds.push(f);
    }
    seeds.push(vec![1.0; n * n]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6361_726c_6573_6f6eu64);
    for t in 0..trials {
        let f: Vec<f64> = if t < seeds.len() {
            seeds[t].clone()
        } else {
            (0..n * n).map(|_| rng.gen::<f64>()).collect()
        };
        let mut f = f;
        let mut best = embedding_ratio(a, &f, depth);
        let mut sigma = 0.5;
        for _ in 0..40 {
            let candidate: Vec<f64> = f
                .iter()
                .map(|v| v * (sigma * (rng.gen::<f64>() - 0.5)).exp())
                .collect();
            let r = embedding_ratio(a, &candidate, depth);
            if r > best {
                best = r;
                f = candidate;
            } else {
                sigma *= 0.93;
            }
        }
        c1 = c1.max(best);
    }

    let ratio = if c2 > 0.0 { c1 / c2 } else { 0.0 };
    if !ratio.is_finite() {
        return Err(Error::InvalidConfig("carleson ratio is not finite".into()));
    }
    Ok(CarlesonReport { c1_emp: c1, c2, ratio })
}

// ---------------------------------------------------------------------------
// Square and maximal functions
// ---------------------------------------------------------------------------

/// A nonnegative scalar field on the cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RealField2D {
    pub depth: u32,
    pub data: Vec<f64>,
}

impl RealField2D {
    pub fn zeros(depth: u32) -> Self {
        let n = 1usize << depth;
        RealField2D { depth, data: vec![0.0; n * n] }
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.data[iy * (1usize << self.depth) + ix]
    }

    pub fn l2_norm(&self) -> f64 {
        let n = 1usize << self.depth;
        (self.data.iter().map(|v| v * v).sum::<f64>() / (n * n) as f64).sqrt()
    }
}

fn add_rect_mass(out: &mut RealField2D, rect: &DyadicRectangle, mass: f64) {
    let depth = out.depth;
    let n = 1usize << depth;
    let v = mass / rect.measure();
    for iy in rect.iy.cells(depth) {
        for ix in rect.ix.cells(depth) {
            out.data[iy * n + ix] += v;
        }
    }
}

/// Square function of a vector spectrum over the fully cancellative family.
pub fn square_function(f: &VectorSpectrum2D) -> RealField2D {
    let cfg = f.config();
    let mut sq = RealField2D::zeros(cfg.depth);
    for rect in DyadicRectangle::all_cancellative(cfg.depth) {
        let mass: f64 = f.rect_coeff(&rect).iter().map(|v| v.norm_sqr()).sum();
        if mass > 0.0 {
            add_rect_mass(&mut sq, &rect, mass);
        }
    }
    for v in sq.data.iter_mut() {
        *v = v.sqrt();
    }
    sq
}

/// Square function of a matrix spectrum, aggregating Frobenius norms.
pub fn square_function_symbol(m: &MatrixSpectrum2D) -> RealField2D {
    let cfg = m.config();
    let mut sq = RealField2D::zeros(cfg.depth);
    for rect in DyadicRectangle::all_cancellative(cfg.depth) {
        let mass: f64 = m.rect_coeff(&rect).iter().map(|v| v.norm_sqr()).sum();
        if mass > 0.0 {
            add_rect_mass(&mut sq, &rect, mass);
        }
    }
    for v in sq.data.iter_mut() {
        *v = v.sqrt();
    }
    sq
}

/// Strong maximal function: per cell, the largest average of `|g|` over
/// dyadic rectangles containing the cell.
pub fn strong_maximal(g: &RealField2D) -> RealField2D {
    let depth = g.depth;
    let n = 1usize << depth;
    let abs: Vec<f64> = g.data.iter().map(|v| v.abs()).collect();
    let avgs = rect_averages(&abs, depth);
    let mut out = RealField2D::zeros(depth);
    for iy in 0..n {
        for ix in 0..n {
            let mut best = 0.0f64;
            let mut tx = n + ix;
            while tx >= 1 {
                let mut ty = n + iy;
                while ty >= 1 {
                    best = best.max(avgs[ty * 2 * n + tx]);
                    ty /= 2;
                }
                tx /= 2;
            }
            out.data[iy * n + ix] = best;
        }
    }
    out
}

fn line_maximal(row: &[f64]) -> Vec<f64> {
    let n = row.len();
    let mut ints = vec![0.0f64; 2 * n];
    for (i, v) in row.iter().enumerate() {
        ints[n + i] = v.abs() / n as f64;
    }
    for t in (1..n).rev() {
        ints[t] = ints[2 * t] + ints[2 * t + 1];
    }
    (0..n)
        .map(|i| {
            let mut best = 0.0f64;
            let mut t = n + i;
            while t >= 1 {
                let level = usize::BITS - 1 - t.leading_zeros();
                let measure = 1.0 / (1u64 << level) as f64;
                best = best.max(ints[t] / measure);
                t /= 2;
            }
            best
        })
        .collect()
}

/// One-variable dyadic maximal function in x (per row).
pub fn maximal_x(g: &RealField2D) -> RealField2D {
    let depth = g.depth;
    let n = 1usize << depth;
    let mut out = RealField2D::zeros(depth);
    for iy in 0..n {
        let row: Vec<f64> = (0..n).map(|ix| g.at(ix, iy)).collect();
        let m = line_maximal(&row);
        out.data[iy * n..(iy + 1) * n].copy_from_slice(&m);
    }
    out
}

/// One-variable dyadic maximal function in y (per column).
pub fn maximal_y(g: &RealField2D) -> RealField2D {
    let depth = g.depth;
    let n = 1usize << depth;
    let mut out = RealField2D::zeros(depth);
    for ix in 0..n {
        let col: Vec<f64> = (0..n).map(|iy| g.at(ix, iy)).collect();
        let m = line_maximal(&col);
        for iy in 0..n {
            out.data[iy * n + ix] = m[iy];
        }
    }
    out
}

/// Pointwise Euclidean norm of a vector field.
pub fn pointwise_norm(f: &SampledField2D) -> RealField2D {
    let cfg = f.config();
    let n = cfg.side();
    let mut out = RealField2D::zeros(cfg.depth);
    for iy in 0..n {
        for ix in 0..n {
            out.data[iy * n + ix] = f.at(ix, iy).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        }
    }
    out
}

/// The hybrid square function: x-localized Haar slices run through the
/// y-maximal function before the square aggregation.
pub fn stilde(f: &SampledField2D) -> RealField2D {
    let cfg = f.config();
    let depth = cfg.depth;
    let n = cfg.side();
    let d = cfg.dim;
    // <f, h_I>_x per x-slot as a function of y.
    let table = pair_table(f, PairKind::Cancellative, PairKind::Cancellative);
    // We need the raw y-profiles, so recompute stage-1 style: pair in x only.
    // Simplest: for each x-slot, synthesize the y-line from its cancellative
    // block is wrong; instead integrate directly.
    let _ = table;
    let w = cfg.cell_width();
    let mut out_sq = vec![0.0f64; n * n];
    let mut line = vec![crate::field::ZERO; n];
    let mut scratch = Vec::with_capacity(n);
    // slice[(sx)][iy][c]
    let mut slice = vec![crate::field::ZERO; n * n * d];
    for iy in 0..n {
        for c in 0..d {
            for ix in 0..n {
                line[ix] = f.at(ix, iy)[c];
            }
            crate::field::analyze_line(&mut line, w, &mut scratch);
            for sx in 1..n {
                slice[(sx * n + iy) * d + c] = line[sx];
            }
        }
    }
    for sx in 1..n {
        let i = DyadicInterval::from_tree_index(sx);
        // || <f, h_I> || (y), then dyadic maximal in y.
        let norms: Vec<f64> = (0..n)
            .map(|iy| {
                (0..d)
                    .map(|c| slice[(sx * n + iy) * d + c].norm_sqr())
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let m = line_maximal(&norms);
        let inv = 1.0 / i.measure();
        for iy in 0..n {
            let add = m[iy] * m[iy] * inv;
            for ix in i.cells(depth) {
                out_sq[iy * n + ix] += add;
            }
        }
    }
    RealField2D { depth, data: out_sq.iter().map(|v| v.sqrt()).collect() }
}

// ---------------------------------------------------------------------------
// Bilinear forms
// ---------------------------------------------------------------------------

/// `Pi_1(f,g)`: rank-one coefficients pairing the cancellative data of `g`
/// with the double averages of `f`.
pub fn pi1(f: &SampledField2D, g: &SampledField2D) -> Result<MatrixSpectrum2D> {
    f.config().same_grid(&g.config())?;
    let cfg = f.config();
    let d = cfg.dim;
    let g_spec = crate::field::analyze2d(g);
    let f_avg = pair_table(f, PairKind::Average, PairKind::Average);
    let mut out = MatrixSpectrum2D::zeros(cfg);
    for rect in DyadicRectangle::all_cancellative(cfg.depth) {
        let (sx, sy) = (rect.ix.tree_index(), rect.iy.tree_index());
        let gv = g_spec.coeff(sx, sy);
        let fv = f_avg.at(sx, sy);
        let w = 1.0 / (rect.ix.measure() * rect.iy.measure()).sqrt();
        let m = out.rect_coeff_mut(&rect);
        for r in 0..d {
            for c in 0..d {
                m[r * d + c] = gv[r] * fv[c].conj() * w;
            }
        }
    }
    Ok(out)
}

/// `Pi_2(f,g)`: the mixed pairings of the `P4` computation.
pub fn pi2(f: &SampledField2D, g: &SampledField2D) -> Result<MatrixSpectrum2D> {
    f.config().same_grid(&g.config())?;
    let cfg = f.config();
    let d = cfg.dim;
    let g_mix = pair_table(g, PairKind::Average, PairKind::Cancellative);
    let f_mix = pair_table(f, PairKind::Cancellative, PairKind::Average);
    let mut out = MatrixSpectrum2D::zeros(cfg);
    for rect in DyadicRectangle::all_cancellative(cfg.depth) {
        let (sx, sy) = (rect.ix.tree_index(), rect.iy.tree_index());
        let gv = g_mix.at(sx, sy);
        let fv = f_mix.at(sx, sy);
        let w = 1.0 / (rect.ix.measure() * rect.iy.measure()).sqrt();
        let m = out.rect_coeff_mut(&rect);
        for r in 0..d {
            for c in 0..d {
                m[r * d + c] = gv[r] * fv[c].conj() * w;
            }
        }
    }
    Ok(out)
}

/// Trace pairing `<B, M> = sum_R Tr(B^(R) M^(R)^*)` over cancellative slots.
pub fn trace_pairing(b: &MatrixSpectrum2D, m: &MatrixSpectrum2D) -> Complex64 {
    let d = b.config().dim;
    let mut acc = Complex64::new(0.0, 0.0);
    for rect in DyadicRectangle::all_cancellative(b.config().depth) {
        let a = b.rect_coeff(&rect);
        let c = m.rect_coeff(&rect);
        for k in 0..d * d {
            acc += a[k] * c[k].conj();
        }
    }
    acc
}
