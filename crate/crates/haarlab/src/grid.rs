//! Finite dyadic model of the unit square.
//!
//! Everything lives on the grid of `2^N x 2^N` cells of the square `[0,1)^2`.
//! Dyadic intervals are indexed by `(level, index)` with `level` in `[0, N]`;
//! level `N` intervals are single cells. The cancellative Haar function `h_I`
//! exists for intervals with representable children, i.e. `level < N`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard limits keeping full state vectors comfortably in memory.
pub const MAX_DEPTH: u32 = 10;
pub const MAX_DIM: usize = 8;

/// Grid resolution, vector dimension, and the seed for randomized routines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Depth `N`: finest cells have side `2^-N`.
    pub depth: u32,
    /// Dimension `d` of the vector values (symbols are `d x d`).
    pub dim: usize,
    /// Seed for randomized routines (test-set sampling, norm restarts).
    pub seed: u64,
}

impl GridConfig {
    pub fn new(depth: u32, dim: usize, seed: u64) -> Result<Self> {
        if depth < 1 || depth > MAX_DEPTH {
            return Err(Error::InvalidConfig(format!(
                "depth must be in [1, {MAX_DEPTH}], got {depth}"
            )));
        }
        if dim < 1 || dim > MAX_DIM {
            return Err(Error::InvalidConfig(format!(
                "dim must be in [1, {MAX_DIM}], got {dim}"
            )));
        }
        Ok(GridConfig { depth, dim, seed })
    }

    /// Cells per side, `2^N`.
    #[inline]
    pub fn side(&self) -> usize {
        1 << self.depth
    }

    /// Total number of cells, `4^N`.
    #[inline]
    pub fn cell_count(&self) -> usize {
        self.side() * self.side()
    }

    /// Side length of a finest cell.
    #[inline]
    pub fn cell_width(&self) -> f64 {
        1.0 / self.side() as f64
    }

    /// Area of a finest cell.
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.cell_width() * self.cell_width()
    }

    /// Flat dimension of the vector-valued sample/coefficient space.
    #[inline]
    pub fn flat_dim(&self) -> usize {
        self.cell_count() * self.dim
    }

    pub fn same_grid(&self, other: &GridConfig) -> Result<()> {
        if self.depth != other.depth || self.dim != other.dim {
            return Err(Error::DimensionMismatch(format!(
                "grid (N={}, d={}) vs (N={}, d={})",
                self.depth, self.dim, other.depth, other.dim
            )));
        }
        Ok(())
    }
}

/// A dyadic subinterval of `[0,1)`: `[k 2^-j, (k+1) 2^-j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicInterval {
    pub level: u32,
    pub index: usize,
}

impl DyadicInterval {
    pub fn new(level: u32, index: usize) -> Self {
        debug_assert!(index < (1usize << level), "index {index} out of range at level {level}");
        DyadicInterval { level, index }
    }

    /// The full interval `[0,1)`.
    pub const ROOT: DyadicInterval = DyadicInterval { level: 0, index: 0 };

    /// Lebesgue measure `2^-level`.
    #[inline]
    pub fn measure(&self) -> f64 {
        1.0 / (1u64 << self.level) as f64
    }

    /// Left and right halves. Fails at the finest representable level.
    pub fn children(&self, depth: u32) -> Result<(DyadicInterval, DyadicInterval)> {
        if self.level >= depth {
            return Err(Error::LevelOverflow { level: self.level, depth });
        }
        Ok((
            DyadicInterval::new(self.level + 1, 2 * self.index),
            DyadicInterval::new(self.level + 1, 2 * self.index + 1),
        ))
    }

    /// The unique dyadic interval containing this one with twice the measure.
    pub fn parent(&self) -> Result<DyadicInterval> {
        if self.level == 0 {
            return Err(Error::RootHasNoParent);
        }
        Ok(DyadicInterval::new(self.level - 1, self.index / 2))
    }

    /// `g`-th ancestor (`ancestor(1) == parent`).
    pub fn ancestor(&self, generations: u32) -> Result<DyadicInterval> {
        if self.level < generations {
            return Err(Error::RootHasNoParent);
        }
        Ok(DyadicInterval::new(
            self.level - generations,
            self.index >> generations,
        ))
    }

    #[inline]
    pub fn is_left_child(&self) -> bool {
        self.index % 2 == 0
    }

    /// The shift weight `a_I`: `+1/sqrt(2)` for a left child, `-1/sqrt(2)`
    /// for a right child. Undefined on the root.
    pub fn haar_sign(&self) -> Result<f64> {
        if self.level == 0 {
            return Err(Error::RootHasNoParent);
        }
        let s = if self.is_left_child() { 1.0 } else { -1.0 };
        Ok(s * std::f64::consts::FRAC_1_SQRT_2)
    }

    /// Sign of the parent Haar function `h_{parent}` on this interval.
    pub fn parent_value_sign(&self) -> Result<f64> {
        if self.level == 0 {
            return Err(Error::RootHasNoParent);
        }
        Ok(if self.is_left_child() { 1.0 } else { -1.0 })
    }

    #[inline]
    pub fn contains(&self, other: &DyadicInterval) -> bool {
        other.level >= self.level && (other.index >> (other.level - self.level)) == self.index
    }

    /// Heap-style tree index `2^level + index`, unique over all levels.
    ///
    /// For cancellative intervals (`level < N`) this coincides with the slot
    /// of the coefficient of `h_I` in a spectrum; slot 0 holds the mean.
    #[inline]
    pub fn tree_index(&self) -> usize {
        (1usize << self.level) + self.index
    }

    /// Inverse of [`tree_index`](Self::tree_index).
    pub fn from_tree_index(t: usize) -> Self {
        debug_assert!(t >= 1);
        let level = usize::BITS - 1 - t.leading_zeros();
        DyadicInterval::new(level, t - (1usize << level))
    }

    /// Range of finest-cell indices covered at the given depth.
    pub fn cells(&self, depth: u32) -> std::ops::Range<usize> {
        let w = 1usize << (depth - self.level);
        self.index * w..(self.index + 1) * w
    }

    /// All intervals of the given level.
    pub fn all_at_level(level: u32) -> impl Iterator<Item = DyadicInterval> {
        (0..(1usize << level)).map(move |k| DyadicInterval::new(level, k))
    }

    /// All cancellative intervals at depth `N`, i.e. levels `0..N`.
    pub fn all_cancellative(depth: u32) -> impl Iterator<Item = DyadicInterval> {
        (0..depth).flat_map(DyadicInterval::all_at_level)
    }
}

/// A product of two dyadic intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicRectangle {
    pub ix: DyadicInterval,
    pub iy: DyadicInterval,
}

impl DyadicRectangle {
    pub fn new(ix: DyadicInterval, iy: DyadicInterval) -> Self {
        DyadicRectangle { ix, iy }
    }

    #[inline]
    pub fn measure(&self) -> f64 {
        self.ix.measure() * self.iy.measure()
    }

    #[inline]
    pub fn contains(&self, other: &DyadicRectangle) -> bool {
        self.ix.contains(&other.ix) && self.iy.contains(&other.iy)
    }

    /// All rectangles with both factors cancellative at depth `N`.
    pub fn all_cancellative(depth: u32) -> impl Iterator<Item = DyadicRectangle> {
        DyadicInterval::all_cancellative(depth).flat_map(move |ix| {
            DyadicInterval::all_cancellative(depth).map(move |iy| DyadicRectangle::new(ix, iy))
        })
    }
}

/// One element of the orthonormal basis of the depth-`N` sample space.
///
/// `kind = (0, 0)` is the fully cancellative `h_I (x) h_J`. A component with
/// kind 1 is the non-cancellative mean factor; in the orthonormal basis it
/// only occurs for the root interval (`h^1 of [0,1)`, the constant 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HaarIndex2D {
    pub rect: DyadicRectangle,
    pub kind: (u8, u8),
}

impl HaarIndex2D {
    pub fn cancellative(rect: DyadicRectangle) -> Self {
        HaarIndex2D { rect, kind: (0, 0) }
    }

    /// Checks representability at depth `N` and basis membership.
    pub fn validate(&self, depth: u32) -> Result<()> {
        let check_axis = |i: &DyadicInterval, kind: u8| -> Result<()> {
            match kind {
                0 => {
                    if i.level >= depth {
                        Err(Error::UnrepresentableIndex(format!(
                            "cancellative factor at level {} needs children at depth {}",
                            i.level, depth
                        )))
                    } else {
                        Ok(())
                    }
                }
                1 => {
                    if i.level != 0 {
                        Err(Error::UnrepresentableIndex(
                            "mean factor of the basis must be the root interval".into(),
                        ))
                    } else {
                        Ok(())
                    }
                }
                k => Err(Error::UnrepresentableIndex(format!("kind component {k}"))),
            }
        };
        check_axis(&self.rect.ix, self.kind.0)?;
        check_axis(&self.rect.iy, self.kind.1)
    }

    /// Per-axis coefficient slot: 0 for the mean, `2^j + k` for `h_{(j,k)}`.
    pub fn slots(&self) -> (usize, usize) {
        let slot = |i: &DyadicInterval, kind: u8| -> usize {
            if kind == 1 {
                0
            } else {
                i.tree_index()
            }
        };
        (slot(&self.rect.ix, self.kind.0), slot(&self.rect.iy, self.kind.1))
    }

    /// Basis element for a pair of per-axis slots.
    pub fn from_slots(sx: usize, sy: usize) -> Self {
        let axis = |s: usize| -> (DyadicInterval, u8) {
            if s == 0 {
                (DyadicInterval::ROOT, 1)
            } else {
                (DyadicInterval::from_tree_index(s), 0)
            }
        };
        let (ix, ex) = axis(sx);
        let (iy, ey) = axis(sy);
        HaarIndex2D {
            rect: DyadicRectangle::new(ix, iy),
            kind: (ex, ey),
        }
    }

    /// Enumerates the full orthonormal basis, `(2^N)^2` elements.
    pub fn all(depth: u32) -> impl Iterator<Item = HaarIndex2D> {
        let n = 1usize << depth;
        (0..n).flat_map(move |sy| (0..n).map(move |sx| HaarIndex2D::from_slots(sx, sy)))
    }
}
