//! Paraproducts, the four-case reduction of the restricted commutator terms,
//! and the nine-term expansion of the pointwise product `B f`.
//!
//! Every operator here is a sum of the shape
//!
//! ```text
//!   f  |->  sum over (I, J)  S(sym_I x sym_J) . <f, p_I (x) p_J> . (q_I (x) q_J) . w
//! ```
//!
//! where the symbol lookup, the pairing profile `p`, and the output profile
//! `q` per axis range over cancellative Haar functions and their averaging
//! companions. That uniform shape is what [`AxisItem`] encodes; the named
//! paraproducts, their adjoints, the four case operators, and the nine
//! product terms are all tables of such items.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    accumulate_table, analyze2d, pair_table, pair_table_raw, synthesize2d, synthesize2d_symbol,
    MatrixSpectrum2D, PairKind, PairTable, SampledField2D, VectorSpectrum2D, ZERO,
};
use crate::grid::{DyadicInterval, GridConfig};
use crate::operators::{
    commutator2p, multiply, shift_axis, shift_x, shift_x_adjoint, shift_y, shift_y_adjoint, Axis,
    LinearOperatorHandle,
};

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

// ---------------------------------------------------------------------------
// Item machinery
// ---------------------------------------------------------------------------

/// One per-axis summand: symbol slot, pairing profile, output profile, weight.
#[derive(Debug, Clone, Copy)]
struct AxisItem {
    sym_kind: PairKind,
    sym_slot: usize,
    pair_kind: PairKind,
    pair_slot: usize,
    out_kind: PairKind,
    out_slot: usize,
    weight: f64,
}

impl AxisItem {
    fn adjoint(&self) -> AxisItem {
        AxisItem {
            pair_kind: self.out_kind,
            pair_slot: self.out_slot,
            out_kind: self.pair_kind,
            out_slot: self.pair_slot,
            ..*self
        }
    }
}

#[inline]
fn inv_sqrt_measure(i: &DyadicInterval) -> f64 {
    (1u64 << i.level) as f64 * i.measure().sqrt() // == 2^{level/2}
}

/// `pair h at I -> output h^1 at I`, weight `|I|^{-1/2}`.
fn canc_to_mean_items(n: usize) -> Vec<AxisItem> {
    (1..n)
        .map(|slot| {
            let i = DyadicInterval::from_tree_index(slot);
            AxisItem {
                sym_kind: PairKind::Cancellative,
                sym_slot: slot,
                pair_kind: PairKind::Cancellative,
                pair_slot: slot,
                out_kind: PairKind::Average,
                out_slot: slot,
                weight: inv_sqrt_measure(&i),
            }
        })
        .collect()
}

/// `pair h^1 at I -> output h at I`, weight `|I|^{-1/2}`.
fn avg_to_canc_items(n: usize) -> Vec<AxisItem> {
    (1..n)
        .map(|slot| {
            let i = DyadicInterval::from_tree_index(slot);
            AxisItem {
                sym_kind: PairKind::Cancellative,
                sym_slot: slot,
                pair_kind: PairKind::Average,
                pair_slot: slot,
                out_kind: PairKind::Cancellative,
                out_slot: slot,
                weight: inv_sqrt_measure(&i),
            }
        })
        .collect()
}

/// `pair h at the child C, symbol at its `gen`-th ancestor A, output h at C`,
/// weight `sign(h_A on C) . |A|^{-1/2}`.
fn child_signed_items(n: usize, gen: u32) -> Vec<AxisItem> {
    let mut items = Vec::new();
    for slot in 1..n {
        let c = DyadicInterval::from_tree_index(slot);
        if c.level < gen {
            continue;
        }
        let a = c.ancestor(gen).expect("level checked");
        let side = c.ancestor(gen - 1).expect("level checked");
        let sign = if side.level == 0 {
            1.0
        } else if side.is_left_child() {
            1.0
        } else {
            -1.0
        };
        items.push(AxisItem {
            sym_kind: PairKind::Cancellative,
            sym_slot: a.tree_index(),
            pair_kind: PairKind::Cancellative,
            pair_slot: slot,
            out_kind: PairKind::Cancellative,
            out_slot: slot,
            weight: sign * inv_sqrt_measure(&a),
        });
    }
    items
}

/// `pair h at the parent A, output h at the child C`, weight
/// `(1/sqrt 2) . |A|^{-1/2}`; symbol at A. The child sign enters squared
/// (once from the shift weight, once from the parent Haar value), hence the
/// constant factor.
fn parent_paired_items(n: usize) -> Vec<AxisItem> {
    (2..n)
        .map(|slot| {
            let c = DyadicInterval::from_tree_index(slot);
            let a = c.parent().expect("level >= 1");
            AxisItem {
                sym_kind: PairKind::Cancellative,
                sym_slot: a.tree_index(),
                pair_kind: PairKind::Cancellative,
                pair_slot: a.tree_index(),
                out_kind: PairKind::Cancellative,
                out_slot: slot,
                weight: FRAC_1_SQRT_2 * inv_sqrt_measure(&a),
            }
        })
        .collect()
}

/// Per-axis pattern of the nine-term expansion: which factor carries the
/// averaging profile.
fn product_pattern_items(n: usize, pattern: (u8, u8, u8)) -> Vec<AxisItem> {
    (1..n)
        .map(|slot| {
            let i = DyadicInterval::from_tree_index(slot);
            let kind = |e: u8| {
                if e == 1 {
                    PairKind::Average
                } else {
                    PairKind::Cancellative
                }
            };
            AxisItem {
                sym_kind: kind(pattern.0),
                sym_slot: slot,
                pair_kind: kind(pattern.1),
                pair_slot: slot,
                out_kind: kind(pattern.2),
                out_slot: slot,
                weight: inv_sqrt_measure(&i),
            }
        })
        .collect()
}

/// Precomputed symbol pairings for every lookup kind an item table may use.
struct SymbolTables {
    d: usize,
    n: usize,
    canc: Vec<Complex64>,
    avg_canc: Option<PairTable>,
    canc_avg: Option<PairTable>,
    avg_avg: Option<PairTable>,
}

impl SymbolTables {
    fn new(b: &MatrixSpectrum2D, need_avg: bool) -> Self {
        let cfg = b.config();
        let (avg_canc, canc_avg, avg_avg) = if need_avg {
            let samples = synthesize2d_symbol(b);
            let n = cfg.side();
            let dd = cfg.dim * cfg.dim;
            let w = cfg.cell_width();
            (
                Some(pair_table_raw(samples.data(), n, dd, w, PairKind::Average, PairKind::Cancellative)),
                Some(pair_table_raw(samples.data(), n, dd, w, PairKind::Cancellative, PairKind::Average)),
                Some(pair_table_raw(samples.data(), n, dd, w, PairKind::Average, PairKind::Average)),
            )
        } else {
            (None, None, None)
        };
        SymbolTables {
            d: cfg.dim,
            n: cfg.side(),
            canc: b.data().to_vec(),
            avg_canc,
            canc_avg,
            avg_avg,
        }
    }

    fn lookup(&self, kx: PairKind, ky: PairKind, sx: usize, sy: usize) -> &[Complex64] {
        let dd = self.d * self.d;
        match (kx, ky) {
            (PairKind::Cancellative, PairKind::Cancellative) => {
                let base = (sy * self.n + sx) * dd;
                &self.canc[base..base + dd]
            }
            (PairKind::Average, PairKind::Cancellative) => self.avg_canc.as_ref().unwrap().at(sx, sy),
            (PairKind::Cancellative, PairKind::Average) => self.canc_avg.as_ref().unwrap().at(sx, sy),
            (PairKind::Average, PairKind::Average) => self.avg_avg.as_ref().unwrap().at(sx, sy),
        }
    }
}

/// Applies the item-table operator `f -> sum S . <f, p> . q . w`.
///
/// With `conj_symbol` set, the conjugate transpose of each symbol coefficient
/// acts instead (the adjoint path).
fn apply_items(
    sym: &SymbolTables,
    f: &VectorSpectrum2D,
    x_items: &[AxisItem],
    y_items: &[AxisItem],
    conj_symbol: bool,
) -> VectorSpectrum2D {
    let cfg = f.config();
    let n = cfg.side();
    let d = cfg.dim;

    // Pairing tables for every (kind_x, kind_y) combination in use.
    let mut f_samples: Option<SampledField2D> = None;
    let mut tables: Vec<((PairKind, PairKind), PairTable)> = Vec::new();
    for xi in x_items {
        for yi in y_items {
            let key = (xi.pair_kind, yi.pair_kind);
            if key == (PairKind::Cancellative, PairKind::Cancellative) {
                continue;
            }
            if tables.iter().any(|(k, _)| *k == key) {
                continue;
            }
            let samples = f_samples.get_or_insert_with(|| synthesize2d(f));
            tables.push((key, pair_table(samples, key.0, key.1)));
        }
    }
    let pairing = |kx: PairKind, ky: PairKind, sx: usize, sy: usize| -> &[Complex64] {
        if (kx, ky) == (PairKind::Cancellative, PairKind::Cancellative) {
            f.coeff(sx, sy)
        } else {
            &tables
                .iter()
                .find(|(k, _)| *k == (kx, ky))
                .expect("table prepared")
                .1
                .at(sx, sy)
        }
    };

    // Output accumulation tables per output profile kind pair.
    let mut out_tables: Vec<((PairKind, PairKind), PairTable)> = Vec::new();
    for xi in x_items {
        for yi in y_items {
            let key = (xi.out_kind, yi.out_kind);
            if out_tables.iter().any(|(k, _)| *k == key) {
                continue;
            }
            let slots_x = match key.0 {
                PairKind::Cancellative => n,
                PairKind::Average => 2 * n,
            };
            let slots_y = match key.1 {
                PairKind::Cancellative => n,
                PairKind::Average => 2 * n,
            };
            out_tables.push((
                key,
                PairTable {
                    kind_x: key.0,
                    kind_y: key.1,
                    slots_x,
                    slots_y,
                    comps: d,
                    data: vec![ZERO; slots_x * slots_y * d],
                },
            ));
        }
    }

    let mut mv = vec![ZERO; d];
    for xi in x_items {
        for yi in y_items {
            let w = xi.weight * yi.weight;
            let out_idx = out_tables
                .iter()
                .position(|(k, _)| *k == (xi.out_kind, yi.out_kind))
                .expect("out table prepared");
            let v = pairing(xi.pair_kind, yi.pair_kind, xi.pair_slot, yi.pair_slot).to_vec();
            let m = sym.lookup(xi.sym_kind, yi.sym_kind, xi.sym_slot, yi.sym_slot);
            for r in 0..d {
                let mut acc = ZERO;
                if conj_symbol {
                    for c in 0..d {
                        acc += m[c * d + r].conj() * v[c];
                    }
                } else {
                    for c in 0..d {
                        acc += m[r * d + c] * v[c];
                    }
                }
                mv[r] = acc * w;
            }
            let dst = out_tables[out_idx].1.at_mut(xi.out_slot, yi.out_slot);
            for r in 0..d {
                dst[r] += mv[r];
            }
        }
    }

    let mut out_field = SampledField2D::zeros(cfg);
    for (_, table) in &out_tables {
        out_field.add_scaled(&accumulate_table(table, cfg), Complex64::new(1.0, 0.0));
    }
    analyze2d(&out_field)
}

// ---------------------------------------------------------------------------
// Named paraproducts
// ---------------------------------------------------------------------------

/// The five paraproducts plus the two adjoint forms the case analysis needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParaproductVariant {
    /// Symbol at the parent rectangle, fully cancellative pairing, averaging
    /// output in the non-parent axis.
    P1,
    /// Symbol and pairing at the parent, cancellative output at the child.
    P2,
    /// Double-average pairing, fully cancellative output.
    P3,
    /// Mixed pairing `h (x) h^1`, output `h^1 (x) h`.
    P4,
    /// Mixed pairing `h^1 (x) h`, output `h (x) h^1`.
    P5,
    /// `(P3_{S^*})^*`: fully cancellative pairing, double-average output.
    P3Star,
    /// `(P2_{S^*})^*`: the parent-indexed dual of `P1`.
    P1Dual,
}

impl std::fmt::Display for ParaproductVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ParaproductVariant::P1 => "P1",
            ParaproductVariant::P2 => "P2",
            ParaproductVariant::P3 => "P3",
            ParaproductVariant::P4 => "P4",
            ParaproductVariant::P5 => "P5",
            ParaproductVariant::P3Star => "P3*",
            ParaproductVariant::P1Dual => "P1-dual",
        };
        write!(f, "{s}")
    }
}

/// A paraproduct with its symbol and index conventions.
///
/// The signs of the parent-indexed variants are fixed by the Haar sign of the
/// child position; this is the unique convention under which the case
/// decomposition below reproduces the commutator exactly.
#[derive(Clone)]
pub struct ParaproductSpec {
    pub variant: ParaproductVariant,
    pub symbol: MatrixSpectrum2D,
    /// Axis carrying the parent indexing for P1/P2/P1Dual.
    pub parent_axis: Axis,
    /// Ancestor generation for P1 (1 = parent, 2 = great parent).
    pub generation: u32,
}

impl ParaproductSpec {
    pub fn new(variant: ParaproductVariant, symbol: MatrixSpectrum2D) -> Self {
        ParaproductSpec { variant, symbol, parent_axis: Axis::Y, generation: 1 }
    }

    pub fn with_parent_axis(mut self, axis: Axis) -> Self {
        self.parent_axis = axis;
        self
    }

    pub fn with_generation(mut self, generation: u32) -> Result<Self> {
        if !(1..=2).contains(&generation) {
            return Err(Error::InvalidConfig(format!(
                "paraproduct generation must be 1 or 2, got {generation}"
            )));
        }
        self.generation = generation;
        Ok(self)
    }

    /// Item tables in (distinguished, other) axis order, plus the conjugation
    /// flag of the symbol lookup.
    fn items(&self, n: usize) -> (Vec<AxisItem>, Vec<AxisItem>, bool) {
        match self.variant {
            ParaproductVariant::P1 => (
                child_signed_items(n, self.generation),
                canc_to_mean_items(n),
                false,
            ),
            ParaproductVariant::P2 => (parent_paired_items(n), avg_to_canc_items(n), false),
            ParaproductVariant::P3 => (avg_to_canc_items(n), avg_to_canc_items(n), false),
            ParaproductVariant::P4 => (canc_to_mean_items(n), avg_to_canc_items(n), false),
            ParaproductVariant::P5 => (avg_to_canc_items(n), canc_to_mean_items(n), false),
            ParaproductVariant::P3Star => (canc_to_mean_items(n), canc_to_mean_items(n), false),
            ParaproductVariant::P1Dual => (
                parent_paired_items(n).iter().map(AxisItem::adjoint).collect(),
                canc_to_mean_items(n),
                false,
            ),
        }
    }

    fn xy_items(&self, n: usize) -> (Vec<AxisItem>, Vec<AxisItem>, bool) {
        let (dist, other, conj) = self.items(n);
        match self.variant {
            // P3 and its star are symmetric; P4/P5 are already written in
            // (x, y) order in Proposition-1 orientation.
            ParaproductVariant::P3 | ParaproductVariant::P3Star => (dist, other, conj),
            ParaproductVariant::P4 => (dist, other, conj),
            ParaproductVariant::P5 => (dist, other, conj),
            // Parent-indexed variants: the distinguished items sit on the
            // parent axis.
            _ => match self.parent_axis {
                Axis::Y => (other, dist, conj),
                Axis::X => (dist, other, conj),
            },
        }
    }
}

/// Applies a paraproduct to a spectrum.
pub fn apply_paraproduct(spec: &ParaproductSpec, f: &VectorSpectrum2D) -> Result<VectorSpectrum2D> {
    spec.symbol.config().same_grid(&f.config())?;
    let n = f.config().side();
    let (xi, yi, conj) = spec.xy_items(n);
    let sym = SymbolTables::new(&spec.symbol, false);
    Ok(apply_items(&sym, f, &xi, &yi, conj))
}

/// Adjoint spec for the variants the case analysis dualizes.
///
/// `P2` with symbol `B` maps to the `P1`-type dual with symbol `B^*`; `P3`
/// maps to `P3Star` with symbol `B^*`.
pub fn paraproduct_adjoint(spec: &ParaproductSpec) -> Result<ParaproductSpec> {
    let adj_symbol = spec.symbol.adjoint_symbol();
    let variant = match spec.variant {
        ParaproductVariant::P2 => ParaproductVariant::P1Dual,
        ParaproductVariant::P3 => ParaproductVariant::P3Star,
        v => return Err(Error::UnsupportedAdjoint(v.to_string())),
    };
    Ok(ParaproductSpec {
        variant,
        symbol: adj_symbol,
        parent_axis: spec.parent_axis,
        generation: spec.generation,
    })
}

/// Wraps a paraproduct as an operator handle (adjoint via item transposition).
pub fn paraproduct_handle(spec: &ParaproductSpec) -> LinearOperatorHandle {
    let cfg = spec.symbol.config();
    let n = cfg.side();
    let (xi, yi, conj) = spec.xy_items(n);
    let xi_adj: Vec<AxisItem> = xi.iter().map(AxisItem::adjoint).collect();
    let yi_adj: Vec<AxisItem> = yi.iter().map(AxisItem::adjoint).collect();
    let sym = std::sync::Arc::new(SymbolTables::new(&spec.symbol, false));
    let sym2 = sym.clone();
    LinearOperatorHandle::new(
        cfg,
        Box::new(move |f| apply_items(&sym, f, &xi, &yi, conj)),
        Box::new(move |f| apply_items(&sym2, f, &xi_adj, &yi_adj, !conj)),
    )
}

// ---------------------------------------------------------------------------
// Case operators and the restricted commutator terms
// ---------------------------------------------------------------------------

/// The four containment cases of the restricted double sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseId {
    /// `I = K`, `J = L`
    EqEq,
    /// `I (strict) K`, `J (strict) L`
    StrictStrict,
    /// `I = K`, `J (strict) L`
    EqStrict,
    /// `I (strict) K`, `J = L`
    StrictEq,
}

impl CaseId {
    pub const ALL: [CaseId; 4] = [CaseId::EqEq, CaseId::StrictStrict, CaseId::EqStrict, CaseId::StrictEq];

    pub fn name(&self) -> &'static str {
        match self {
            CaseId::EqEq => "eq_eq",
            CaseId::StrictStrict => "strict_strict",
            CaseId::EqStrict => "eq_strict",
            CaseId::StrictEq => "strict_eq",
        }
    }

    pub fn parse(s: &str) -> Result<CaseId> {
        CaseId::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownName { kind: "case", name: s.into() })
    }
}

/// The literal composition the case analysis assigns to each case of the
/// second restricted term: `Sh_1 . P . Sh_2` (no inner shift for the
/// strict-equal case).
pub fn case_operator(case: CaseId, b: &MatrixSpectrum2D) -> LinearOperatorHandle {
    let cfg = b.config();
    let parts: Vec<ParaproductSpec> = match case {
        CaseId::EqEq => vec![ParaproductSpec::new(ParaproductVariant::P1, b.clone())],
        CaseId::StrictStrict => vec![
            ParaproductSpec::new(ParaproductVariant::P3, b.clone()),
            ParaproductSpec::new(ParaproductVariant::P5, b.clone()),
        ],
        CaseId::EqStrict => vec![
            ParaproductSpec::new(ParaproductVariant::P4, b.clone()),
            ParaproductSpec::new(ParaproductVariant::P3Star, b.clone()),
        ],
        CaseId::StrictEq => vec![ParaproductSpec::new(ParaproductVariant::P2, b.clone())],
    };
    let inner_shift = case != CaseId::StrictEq;
    let handles: Vec<LinearOperatorHandle> = parts.iter().map(paraproduct_handle).collect();
    let handles2: Vec<LinearOperatorHandle> = parts.iter().map(paraproduct_handle).collect();
    LinearOperatorHandle::new(
        cfg,
        Box::new(move |f| {
            let g = if inner_shift { shift_y(f) } else { f.clone() };
            let mut acc = VectorSpectrum2D::zeros(cfg);
            for h in &handles {
                acc.add_scaled(&h.apply(&g), Complex64::new(1.0, 0.0));
            }
            shift_x(&acc)
        }),
        Box::new(move |f| {
            let g = shift_x_adjoint(f);
            let mut acc = VectorSpectrum2D::zeros(cfg);
            for h in &handles2 {
                acc.add_scaled(&h.apply_adjoint(&g), Complex64::new(1.0, 0.0));
            }
            if inner_shift {
                shift_y_adjoint(&acc)
            } else {
                acc
            }
        }),
    )
}

/// Which structural factor a restricted term carries per axis: the shift
/// inside the product (`Shifted`) or outside it (`Plain`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AxisStructure {
    Plain,
    Shifted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AxisCase {
    Equal,
    Strict,
}

fn axis_case_items(structure: AxisStructure, case: AxisCase, n: usize) -> Vec<AxisItem> {
    match (structure, case) {
        (AxisStructure::Plain, AxisCase::Equal) => canc_to_mean_items(n),
        (AxisStructure::Plain, AxisCase::Strict) => avg_to_canc_items(n),
        (AxisStructure::Shifted, AxisCase::Equal) => child_signed_items(n, 1),
        (AxisStructure::Shifted, AxisCase::Strict) => {
            let mut items = avg_to_canc_items(n);
            items.extend(canc_to_mean_items(n));
            items
        }
    }
}

/// One of the four restricted commutator terms, assembled case by case from
/// the paraproduct item tables.
fn restricted_term(
    b: &MatrixSpectrum2D,
    f: &VectorSpectrum2D,
    sx: AxisStructure,
    sy: AxisStructure,
) -> VectorSpectrum2D {
    let cfg = f.config();
    let n = cfg.side();
    let mut g = f.clone();
    if sx == AxisStructure::Shifted {
        g = shift_x(&g);
    }
    if sy == AxisStructure::Shifted {
        g = shift_y(&g);
    }
    let sym = SymbolTables::new(b, false);
    let mut acc = VectorSpectrum2D::zeros(cfg);
    for cx in [AxisCase::Equal, AxisCase::Strict] {
        for cy in [AxisCase::Equal, AxisCase::Strict] {
            let xi = axis_case_items(sx, cx, n);
            let yi = axis_case_items(sy, cy, n);
            acc.add_scaled(&apply_items(&sym, &g, &xi, &yi, false), Complex64::new(1.0, 0.0));
        }
    }
    if sx == AxisStructure::Plain {
        acc = shift_x(&acc);
    }
    if sy == AxisStructure::Plain {
        acc = shift_y(&acc);
    }
    acc
}

/// The four restricted terms whose alternating sum is the commutator.
pub fn restricted_terms(
    b: &MatrixSpectrum2D,
    f: &VectorSpectrum2D,
) -> Result<[VectorSpectrum2D; 4]> {
    b.config().same_grid(&f.config())?;
    Ok([
        restricted_term(b, f, AxisStructure::Shifted, AxisStructure::Shifted),
        restricted_term(b, f, AxisStructure::Plain, AxisStructure::Shifted),
        restricted_term(b, f, AxisStructure::Shifted, AxisStructure::Plain),
        restricted_term(b, f, AxisStructure::Plain, AxisStructure::Plain),
    ])
}

/// Relative residual of the case-decomposition identity
/// `commutator = T1 - T2 - T3 + T4` on truncation-safe supports.
pub fn decomposition_check(b: &MatrixSpectrum2D, f: &VectorSpectrum2D) -> Result<f64> {
    b.config().same_grid(&f.config())?;
    let b_samples = synthesize2d_symbol(b);
    let f_samples = synthesize2d(f);
    let direct = analyze2d(&commutator2p(&b_samples, &f_samples)?);
    let [t1, t2, t3, t4] = restricted_terms(b, f)?;
    let mut assembled = t1;
    assembled.add_scaled(&t2, Complex64::new(-1.0, 0.0));
    assembled.add_scaled(&t3, Complex64::new(-1.0, 0.0));
    assembled.add_scaled(&t4, Complex64::new(1.0, 0.0));
    let fnorm = f.l2_norm();
    if fnorm == 0.0 {
        return Ok(direct.sub(&assembled).l2_norm());
    }
    Ok(direct.sub(&assembled).l2_norm() / fnorm)
}

// ---------------------------------------------------------------------------
// Nine-term product expansion
// ---------------------------------------------------------------------------

/// Per-axis pattern `(eps_B, eps_f, eps_out)` of a product term.
pub type AxisPattern = (u8, u8, u8);

/// The three per-axis patterns of the one-parameter product expansion.
pub const AXIS_PATTERNS: [AxisPattern; 3] = [(0, 0, 1), (1, 0, 0), (0, 1, 0)];

/// The nine operators whose sum is pointwise multiplication by `B`.
pub struct NineTermExpansion {
    cfg: GridConfig,
    /// `(x pattern, y pattern)` per term, same order as `handles`.
    pub patterns: Vec<(AxisPattern, AxisPattern)>,
    handles: Vec<LinearOperatorHandle>,
}

impl NineTermExpansion {
    pub fn handles(&self) -> &[LinearOperatorHandle] {
        &self.handles
    }

    /// Applies the sum of all nine terms.
    pub fn apply_sum(&self, f: &VectorSpectrum2D) -> VectorSpectrum2D {
        let mut acc = VectorSpectrum2D::zeros(self.cfg);
        for h in &self.handles {
            acc.add_scaled(&h.apply(f), Complex64::new(1.0, 0.0));
        }
        acc
    }
}

/// Builds the nine-term expansion of multiplication by the (mean-free)
/// symbol `B`.
pub fn nine_term_expand(b: &MatrixSpectrum2D) -> NineTermExpansion {
    let cfg = b.config();
    let n = cfg.side();
    let sym = std::sync::Arc::new(SymbolTables::new(b, true));
    let mut patterns = Vec::new();
    let mut handles = Vec::new();
    for px in AXIS_PATTERNS {
        for py in AXIS_PATTERNS {
            patterns.push((px, py));
            let xi = product_pattern_items(n, px);
            let yi = product_pattern_items(n, py);
            let xi_adj: Vec<AxisItem> = xi.iter().map(AxisItem::adjoint).collect();
            let yi_adj: Vec<AxisItem> = yi.iter().map(AxisItem::adjoint).collect();
            let s1 = sym.clone();
            let s2 = sym.clone();
            handles.push(LinearOperatorHandle::new(
                cfg,
                Box::new(move |f| apply_items(&s1, f, &xi, &yi, false)),
                Box::new(move |f| apply_items(&s2, f, &xi_adj, &yi_adj, true)),
            ));
        }
    }
    NineTermExpansion { cfg, patterns, handles }
}

/// Relative residual of `sum_i T_i f = B f`.
pub fn product_identity_check(b: &MatrixSpectrum2D, f: &VectorSpectrum2D) -> Result<f64> {
    b.config().same_grid(&f.config())?;
    if b.has_mean_terms() {
        return Err(Error::InvalidConfig(
            "nine-term expansion expects a mean-free symbol".into(),
        ));
    }
    let expansion = nine_term_expand(b);
    let assembled = expansion.apply_sum(f);
    let direct = analyze2d(&multiply(&synthesize2d_symbol(b), &synthesize2d(f))?);
    let scale = direct.l2_norm();
    let diff = assembled.sub(&direct).l2_norm();
    if scale == 0.0 {
        return Ok(diff);
    }
    Ok(diff / scale)
}

// ---------------------------------------------------------------------------
// Record type shared with the report aggregator
// ---------------------------------------------------------------------------

/// JSON record emitted by the identity checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub case: String,
    #[serde(rename = "N")]
    pub n: u32,
    pub d: usize,
    pub residual: f64,
}

impl ResidualRecord {
    pub fn new(case: impl Into<String>, cfg: GridConfig, residual: f64) -> Self {
        ResidualRecord { case: case.into(), n: cfg.depth, d: cfg.dim, residual }
    }
}

// ---------------------------------------------------------------------------

/// Inner shift helper shared with the experiments module.
pub fn shift_both(f: &VectorSpectrum2D) -> VectorSpectrum2D {
    shift_axis(&shift_axis(f, Axis::X), Axis::Y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{evaluate_basis, SampledField1D};
    use crate::grid::{DyadicRectangle, HaarIndex2D};
    use crate::operators::commutator1d;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(depth: u32, dim: usize) -> GridConfig {
        GridConfig::new(depth, dim, 33).unwrap()
    }

    /// Direct per-rectangle summation oracle for the named paraproducts:
    /// pairings by explicit integration, profiles built from indicators.
    fn paraproduct_oracle(spec: &ParaproductSpec, f: &SampledField2D) -> SampledField2D {
        let cfgv = f.config();
        let depth = cfgv.depth;
        let n = cfgv.side();
        let d = cfgv.dim;
        assert_eq!(spec.parent_axis, Axis::Y, "oracle covers the Prop-1 orientation");
        let profile = |i: &DyadicInterval, avg: bool| -> Vec<f64> {
            let mut v = vec![0.0; n];
            if avg {
                let a = 1.0 / i.measure().sqrt();
                for c in i.cells(depth) {
                    v[c] = a;
                }
            } else {
                let (l, r) = i.children(depth).unwrap();
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
        let pair = |px: &[f64], py: &[f64]| -> Vec<Complex64> {
            let mut acc = vec![ZERO; d];
            for iy in 0..n {
                for ix in 0..n {
                    let wgt = px[ix] * py[iy] * cfgv.cell_area();
                    if wgt == 0.0 {
                        continue;
                    }
                    for c in 0..d {
                        acc[c] += f.at(ix, iy)[c] * wgt;
                    }
                }
            }
            acc
        };
        let mut out = SampledField2D::zeros(cfgv);
        let mut add_term = |m: &[Complex64], conj: bool, v: &[Complex64], w: f64, ox: &[f64], oy: &[f64]| {
            let mut mv = vec![ZERO; d];
            for r in 0..d {
                let mut a = ZERO;
                for c in 0..d {
                    a += if conj { m[c * d + r].conj() } else { m[r * d + c] } * v[c];
                }
                mv[r] = a * w;
            }
            for iy in 0..n {
                for ix in 0..n {
                    let p = ox[ix] * oy[iy];
                    if p == 0.0 {
                        continue;
                    }
                    for r in 0..d {
                        out.at_mut(ix, iy)[r] += mv[r] * p;
                    }
                }
            }
        };
        let b = &spec.symbol;
        for i in DyadicInterval::all_cancellative(depth) {
            for j in DyadicInterval::all_cancellative(depth) {
                let wij = 1.0 / (i.measure().sqrt() * j.measure().sqrt());
                match spec.variant {
                    ParaproductVariant::P3 => add_term(
                        b.rect_coeff(&DyadicRectangle::new(i, j)),
                        false,
                        &pair(&profile(&i, true), &profile(&j, true)),
                        wij,
                        &profile(&i, false),
                        &profile(&j, false),
                    ),
                    ParaproductVariant::P4 => add_term(
                        b.rect_coeff(&DyadicRectangle::new(i, j)),
                        false,
                        &pair(&profile(&i, false), &profile(&j, true)),
                        wij,
                        &profile(&i, true),
                        &profile(&j, false),
                    ),
                    ParaproductVariant::P5 => add_term(
                        b.rect_coeff(&DyadicRectangle::new(i, j)),
                        false,
                        &pair(&profile(&i, true), &profile(&j, false)),
                        wij,
                        &profile(&i, false),
                        &profile(&j, true),
                    ),
                    ParaproductVariant::P3Star => add_term(
                        b.rect_coeff(&DyadicRectangle::new(i, j)),
                        false,
                        &pair(&profile(&i, false), &profile(&j, false)),
                        wij,
                        &profile(&i, true),
                        &profile(&j, true),
                    ),
                    ParaproductVariant::P1 => {
                        let g = spec.generation;
                        if j.level < g {
                            continue;
                        }
                        let a = j.ancestor(g).unwrap();
                        let side = j.ancestor(g - 1).unwrap();
                        let sign = if side.level == 0 || side.is_left_child() { 1.0 } else { -1.0 };
                        let w = sign / (i.measure().sqrt() * a.measure().sqrt());
                        add_term(
                            b.rect_coeff(&DyadicRectangle::new(i, a)),
                            false,
                            &pair(&profile(&i, false), &profile(&j, false)),
                            w,
                            &profile(&i, true),
                            &profile(&j, false),
                        );
                    }
                    ParaproductVariant::P2 => {
                        if j.level < 1 {
                            continue;
                        }
                        let a = j.parent().unwrap();
                        let w = FRAC_1_SQRT_2 / (i.measure().sqrt() * a.measure().sqrt());
                        add_term(
                            b.rect_coeff(&DyadicRectangle::new(i, a)),
                            false,
                            &pair(&profile(&i, true), &profile(&a, false)),
                            w,
                            &profile(&i, false),
                            &profile(&j, false),
                        );
                    }
                    ParaproductVariant::P1Dual => {
                        if j.level < 1 {
                            continue;
                        }
                        let a = j.parent().unwrap();
                        let w = FRAC_1_SQRT_2 / (i.measure().sqrt() * a.measure().sqrt());
                        add_term(
                            b.rect_coeff(&DyadicRectangle::new(i, a)),
                            false,
                            &pair(&profile(&i, false), &profile(&j, false)),
                            w,
                            &profile(&i, true),
                            &profile(&a, false),
                        );
                    }
                }
            }
        }
        out
    }

    #[test]
    fn zero_symbol_gives_zero() {
        let cfg = cfg(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = VectorSpectrum2D::random(cfg, &mut rng);
        for variant in [
            ParaproductVariant::P1,
            ParaproductVariant::P2,
            ParaproductVariant::P3,
            ParaproductVariant::P4,
            ParaproductVariant::P5,
        ] {
            let spec = ParaproductSpec::new(variant, MatrixSpectrum2D::zeros(cfg));
            let out = apply_paraproduct(&spec, &f).unwrap();
            assert!(out.l2_norm() < 1e-15, "{variant}");
        }
    }

    #[test]
    fn p3_single_coefficient_hand_expansion() {
        let depth = 3;
        let cfgv = cfg(depth, 2);
        let i0 = DyadicInterval::new(1, 0);
        let j0 = DyadicInterval::new(2, 1);
        let r0 = DyadicRectangle::new(i0, j0);
        let mut b = MatrixSpectrum2D::zeros(cfgv);
        // A = [[2, i], [0, -1]]
        let a = [
            Complex64::new(2.0, 0.0),
            Complex64::new(0.0, 1.0),
            ZERO,
            Complex64::new(-1.0, 0.0),
        ];
        b.rect_coeff_mut(&r0).copy_from_slice(&a);

        // f = (h^1_{I0} (x) h^1_{J0}) e1: the only surviving pairing is 1.
        let n = cfgv.side();
        let mut f = SampledField2D::zeros(cfgv);
        let ax = 1.0 / i0.measure().sqrt();
        let ay = 1.0 / j0.measure().sqrt();
        for iy in j0.cells(depth) {
            for ix in i0.cells(depth) {
                f.at_mut(ix, iy)[0] = Complex64::new(ax * ay, 0.0);
            }
        }
        let spec = ParaproductSpec::new(ParaproductVariant::P3, b);
        let out = apply_paraproduct(&spec, &analyze2d(&f)).unwrap();
        // expected single output coefficient A e1 |I0|^{-1/2}|J0|^{-1/2} at R0
        let w = 1.0 / (i0.measure().sqrt() * j0.measure().sqrt());
        for sy in 0..n {
            for sx in 0..n {
                let c = out.coeff(sx, sy);
                if (sx, sy) == (i0.tree_index(), j0.tree_index()) {
                    assert!((c[0] - a[0] * w).norm() < 1e-12);
                    assert!((c[1] - a[2] * w).norm() < 1e-12);
                } else {
                    assert!(c.iter().all(|v| v.norm() < 1e-12), "({sx},{sy})");
                }
            }
        }
    }

    #[test]
    fn paraproducts_match_direct_summation_oracle() {
        let cfgv = cfg(3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = MatrixSpectrum2D::random_cancellative(cfgv, &mut rng);
        let fs = VectorSpectrum2D::random(cfgv, &mut rng);
        let f = synthesize2d(&fs);
        for variant in [
            ParaproductVariant::P1,
            ParaproductVariant::P2,
            ParaproductVariant::P3,
            ParaproductVariant::P4,
            ParaproductVariant::P5,
            ParaproductVariant::P3Star,
            ParaproductVariant::P1Dual,
        ] {
            let spec = ParaproductSpec::new(variant, b.clone());
            let fast = synthesize2d(&apply_paraproduct(&spec, &fs).unwrap());
            let slow = paraproduct_oracle(&spec, &f);
            let err = fast.sub(&slow).l2_norm() / slow.l2_norm().max(1e-30);
            assert!(err < 1e-10, "{variant}: {err}");
        }
    }

    #[test]
    fn generation_two_parent_paraproduct_matches_oracle() {
        let cfgv = cfg(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let b = MatrixSpectrum2D::random_cancellative(cfgv, &mut rng);
        let fs = VectorSpectrum2D::random(cfgv, &mut rng);
        let spec = ParaproductSpec::new(ParaproductVariant::P1, b)
            .with_generation(2)
            .unwrap();
        let fast = synthesize2d(&apply_paraproduct(&spec, &fs).unwrap());
        let slow = paraproduct_oracle(&spec, &synthesize2d(&fs));
        assert!(fast.sub(&slow).l2_norm() / slow.l2_norm() < 1e-10);
        assert!(ParaproductSpec::new(ParaproductVariant::P1, MatrixSpectrum2D::zeros(cfgv))
            .with_generation(3)
            .is_err());
    }

    #[test]
    fn adjoint_pairing_identities() {
        let cfgv = cfg(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let b = MatrixSpectrum2D::random_cancellative(cfgv, &mut rng);
        for variant in [ParaproductVariant::P2, ParaproductVariant::P3] {
            let spec = ParaproductSpec::new(variant, b.clone());
            let adj = paraproduct_adjoint(&spec).unwrap();
            for _ in 0..30 {
                let f = VectorSpectrum2D::random(cfgv, &mut rng);
                let g = VectorSpectrum2D::random(cfgv, &mut rng);
                let lhs = apply_paraproduct(&spec, &f).unwrap().inner(&g);
                let rhs = f.inner(&apply_paraproduct(&adj, &g).unwrap());
                assert!((lhs - rhs).norm() < 1e-10 * (1.0 + lhs.norm()), "{variant}");
            }
        }
        assert!(paraproduct_adjoint(&ParaproductSpec::new(ParaproductVariant::P4, b)).is_err());
    }

    #[test]
    fn adjoint_pairing_exact_for_real_scalar_symbol() {
        // Hermitian reduction: d = 1 with real coefficients.
        let cfgv = cfg(3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut b = MatrixSpectrum2D::random_cancellative(cfgv, &mut rng);
        for v in b.data_mut().iter_mut() {
            *v = Complex64::new(v.re, 0.0);
        }
        let spec = ParaproductSpec::new(ParaproductVariant::P2, b);
        let adj = paraproduct_adjoint(&spec).unwrap();
        let f = VectorSpectrum2D::random(cfgv, &mut rng);
        let g = VectorSpectrum2D::random(cfgv, &mut rng);
        let lhs = apply_paraproduct(&spec, &f).unwrap().inner(&g);
        let rhs = f.inner(&apply_paraproduct(&adj, &g).unwrap());
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn paraproduct_handles_are_adjoint_consistent() {
        let cfgv = cfg(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let b = MatrixSpectrum2D::random_cancellative(cfgv, &mut rng);
        for variant in [
            ParaproductVariant::P1,
            ParaproductVariant::P2,
            ParaproductVariant::P3,
            ParaproductVariant::P4,
            ParaproductVariant::P5,
        ] {
            let h = paraproduct_handle(&ParaproductSpec::new(variant, b.clone()));
            for _ in 0..5 {
                let f = VectorSpectrum2D::random(cfgv, &mut rng);
                let g = VectorSpectrum2D::random(cfgv, &mut rng);
                let lhs = h.apply(&f).inner(&g);
                let rhs = f.inner(&h.apply_adjoint(&g));
                assert!((lhs - rhs).norm() < 1e-10 * (1.0 + lhs.norm()), "{variant}");
            }
        }
    }

    /// Restricted quadruple-sum oracle of the second term structure:
    /// `Sh_1 ( sum_{pred} B^(IxJ) f^(KxL) (h_I h_K) (x) (h_J Sh h_L) )`,
    /// all pieces built from sampled Haar profiles.
    fn t2_case_oracle(
        b: &MatrixSpectrum2D,
        f: &VectorSpectrum2D,
        pred: impl Fn(&DyadicInterval, &DyadicInterval, &DyadicInterval, &DyadicInterval) -> bool,
    ) -> VectorSpectrum2D {
        let cfgv = f.config();
        let depth = cfgv.depth;
        let n = cfgv.side();
        let d = cfgv.dim;
        let haar_samples = |i: &DyadicInterval| SampledField1D::haar(depth, i).unwrap().data;
        let shift_samples = |i: &DyadicInterval| -> Vec<Complex64> {
            if i.level + 2 > depth {
                return vec![ZERO; n];
            }
            let (l, r) = i.children(depth).unwrap();
            let hl = haar_samples(&l);
            let hr = haar_samples(&r);
            (0..n)
                .map(|k| (hl[k] - hr[k]) * FRAC_1_SQRT_2)
                .collect()
        };
        let mut inner = SampledField2D::zeros(cfgv);
        for i in DyadicInterval::all_cancellative(depth) {
            let hi = haar_samples(&i);
            for k in DyadicInterval::all_cancellative(depth) {
                let hk = haar_samples(&k);
                for j in DyadicInterval::all_cancellative(depth) {
                    let hj = haar_samples(&j);
                    for l in DyadicInterval::all_cancellative(depth) {
                        if !pred(&i, &j, &k, &l) {
                            continue;
                        }
                        let shl = shift_samples(&l);
                        let m = b.rect_coeff(&DyadicRectangle::new(i, j));
                        let v = f.rect_coeff(&DyadicRectangle::new(k, l));
                        let mut mv = vec![ZERO; d];
                        let mut nonzero = false;
                        for r in 0..d {
                            let mut acc = ZERO;
                            for c in 0..d {
                                acc += m[r * d + c] * v[c];
                            }
                            mv[r] = acc;
                            nonzero |= acc.norm_sqr() > 0.0;
                        }
                        if !nonzero {
                            continue;
                        }
                        for iy in 0..n {
                            let py = hj[iy] * shl[iy];
                            if py.norm_sqr() == 0.0 {
                                continue;
                            }
                            for ix in 0..n {
                                let p = hi[ix] * hk[ix] * py;
                                if p.norm_sqr() == 0.0 {
                                    continue;
                                }
                                for r in 0..d {
                                    inner.at_mut(ix, iy)[r] += mv[r] * p;
                                }
                            }
                        }
                    }
                }
            }
        }
        shift_x(&analyze2d(&inner))
    }

    #[test]
    fn case_operators_match_restricted_quadruple_sum() {
        let cfgv = cfg(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        // Safe supports keep the shifts isometric on every term.
        let b = MatrixSpectrum2D::random_cancellative(cfgv, &mut rng)
            .project_levels(cfgv.depth - 2, cfgv.depth - 2);
        let f = VectorSpectrum2D::random(cfgv, &mut rng)
            .project_levels(cfgv.depth - 2, cfgv.depth - 2);
        let pred = |case: CaseId| {
            move |i: &DyadicInterval, j: &DyadicInterval, k: &DyadicInterval, l: &DyadicInterval| match case {
                CaseId::EqEq => i == k && j == l,
                CaseId::StrictStrict => k.contains(i) && i != k && l.contains(j) && j != l,
                CaseId::EqStrict => i == k && l.contains(j) && j != l,
                CaseId::StrictEq => k.contains(i) && i != k && j == l,
            }
        };
        for case in CaseId::ALL {
            let op = case_operator(case, &b);
            let got = op.apply(&f);
            let want = t2_case_oracle(&b, &f, pred(case));
            let err = got.sub(&want).l2_norm() / f.l2_norm();
            assert!(err < 1e-10, "{}: {err}", case.name());
        }
    }

    #[test]
    fn case_operator_zero_symbol() {
        let cfgv = cfg(3, 1);
        let b = MatrixSpectrum2D::zeros(cfgv);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let f = VectorSpectrum2D::random(cfgv, &mut rng);
        for case in CaseId::ALL {
            assert!(case_operator(case, &b).apply(&f).l2_norm() < 1e-15);
        }
    }

    #[test]
    fn case_sum_equals_second_restricted_term() {
        let cfgv = cfg(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let b = MatrixSpectrum2D::random_cancellative(cfgv, &mut rng)
            .project_levels(cfgv.depth - 2, cfgv.depth - 2);
        let f = VectorSpectrum2D::random(cfgv, &mut rng)
            .project_levels(cfgv.depth - 2, cfgv.depth - 2);
        let mut case_sum = VectorSpectrum2D::zeros(cfgv);
        for case in CaseId::ALL {
            case_sum.add_scaled(&case_operator(case, &b).apply(&f), Complex64::new(1.0, 0.0));
        }
        let t2 = restricted_term(&b, &f, AxisStructure::Plain, AxisStructure::Shifted);
        assert!(case_sum.sub(&t2).l2_norm() / f.l2_norm() < 1e-12);
    }

    #[test]
    fn decomposition_residual_small_on_safe_supports() {
        for dim in [1usize, 2] {
            let cfgv = cfg(3, dim);
            let mut rng = ChaCha8Rng::seed_from_u64(41 + dim as u64);
            for _ in 0..3 {
                let b = MatrixSpectrum2D::random_cancellative(cfgv, &mut rng)
                    .project_levels(cfgv.depth - 2, cfgv.depth - 2);
                let f = VectorSpectrum2D::random(cfgv, &mut rng)
                    .project_levels(cfgv.depth - 2, cfgv.depth - 2);
                let res = decomposition_check(&b, &f).unwrap();
                assert!(res < 1e-10, "d={dim} residual {res}");
            }
        }
    }

    #[test]
    fn decomposition_residual_zero_for_constant_symbol() {
        let cfgv = cfg(3, 2);
        let b = MatrixSpectrum2D::zeros(cfgv); // constant symbol = zero spectrum + mean, mean-free here
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let f = VectorSpectrum2D::random(cfgv, &mut rng)
            .project_levels(cfgv.depth - 2, cfgv.depth - 2);
        assert!(decomposition_check(&b, &f).unwrap() < 1e-14);
    }

    #[test]
    fn commutator_equals_quadruple_sum_small() {
        // Tensor-factored oracle built on the 1D commutator.
        let cfgv = cfg(3, 1);
        let depth = cfgv.depth;
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let b = MatrixSpectrum2D::random_cancellative(cfgv, &mut rng);
        let f = VectorSpectrum2D::random(cfgv, &mut rng).project_cancellative();
        let direct = commutator2p(&synthesize2d_symbol(&b), &synthesize2d(&f)).unwrap();

        let n = cfgv.side();
        let mut oracle = SampledField2D::zeros(cfgv);
        for i in DyadicInterval::all_cancellative(depth) {
            let hi = SampledField1D::haar(depth, &i).unwrap();
            for k in DyadicInterval::all_cancellative(depth) {
                if !k.contains(&i) {
                    continue;
                }
                let hk = SampledField1D::haar(depth, &k).unwrap();
                let cx = commutator1d(&hi, &hk).unwrap();
                for j in DyadicInterval::all_cancellative(depth) {
                    let hj = SampledField1D::haar(depth, &j).unwrap();
                    for l in DyadicInterval::all_cancellative(depth) {
                        if !l.contains(&j) {
                            continue;
                        }
                        let hl = SampledField1D::haar(depth, &l).unwrap();
                        let cy = commutator1d(&hj, &hl).unwrap();
                        let coef = b.rect_coeff(&DyadicRectangle::new(i, j))[0]
                            * f.rect_coeff(&DyadicRectangle::new(k, l))[0];
                        if coef.norm_sqr() == 0.0 {
                            continue;
                        }
                        for iy in 0..n {
                            for ix in 0..n {
                                oracle.at_mut(ix, iy)[0] += coef * cx.data[ix] * cy.data[iy];
                            }
                        }
                    }
                }
            }
        }
        let err = direct.sub(&oracle).l2_norm() / f.l2_norm();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn nine_term_sum_reproduces_pointwise_product() {
        let cfgv = cfg(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let b = MatrixSpectrum2D::random_cancellative(cfgv, &mut rng);
        let f = VectorSpectrum2D::random(cfgv, &mut rng);
        let res = product_identity_check(&b, &f).unwrap();
        assert!(res < 1e-10, "{res}");
    }

    #[test]
    fn nine_term_constant_field() {
        let cfgv = cfg(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let b = MatrixSpectrum2D::random_cancellative(cfgv, &mut rng);
        let v = [Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.25)];
        let f = analyze2d(&SampledField2D::from_fn(cfgv, |_, _, c| v[c]));
        let res = product_identity_check(&b, &f).unwrap();
        assert!(res < 1e-10, "{res}");
    }

    #[test]
    fn nine_term_haar_square() {
        // d = 1, B = f = h_{R0}: the product is the normalized indicator.
        let depth = 3;
        let cfgv = cfg(depth, 1);
        let r0 = DyadicRectangle::new(DyadicInterval::new(1, 1), DyadicInterval::new(1, 0));
        let mut b = MatrixSpectrum2D::zeros(cfgv);
        b.rect_coeff_mut(&r0)[0] = Complex64::new(1.0, 0.0);
        let mut fs = VectorSpectrum2D::zeros(cfgv);
        fs.rect_coeff_mut(&r0)[0] = Complex64::new(1.0, 0.0);
        let expansion = nine_term_expand(&b);
        let got = synthesize2d(&expansion.apply_sum(&fs));
        let h = evaluate_basis(&HaarIndex2D::cancellative(r0), depth).unwrap();
        let n = cfgv.side();
        for iy in 0..n {
            for ix in 0..n {
                let expect = h.at(ix, iy)[0] * h.at(ix, iy)[0];
                assert!((got.at(ix, iy)[0] - expect).norm() < 1e-12);
            }
        }
        assert_eq!(expansion.patterns.len(), 9);
    }

    #[test]
    fn paraproducts_linear_in_argument_and_symbol() {
        let cfgv = cfg(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let b1 = MatrixSpectrum2D::random_cancellative(cfgv, &mut rng);
        let b2 = MatrixSpectrum2D::random_cancellative(cfgv, &mut rng);
        let f1 = VectorSpectrum2D::random(cfgv, &mut rng);
        let f2 = VectorSpectrum2D::random(cfgv, &mut rng);
        let alpha = Complex64::new(rng.gen::<f64>(), rng.gen::<f64>());
        let beta = Complex64::new(rng.gen::<f64>(), rng.gen::<f64>());
        for variant in [ParaproductVariant::P1, ParaproductVariant::P3, ParaproductVariant::P4] {
            // linear in f
            let spec = ParaproductSpec::new(variant, b1.clone());
            let mut combo = f1.scaled(alpha);
            combo.add_scaled(&f2, beta);
            let lhs = apply_paraproduct(&spec, &combo).unwrap();
            let mut rhs = apply_paraproduct(&spec, &f1).unwrap().scaled(alpha);
            rhs.add_scaled(&apply_paraproduct(&spec, &f2).unwrap(), beta);
            assert!(lhs.sub(&rhs).l2_norm() < 1e-12 * (1.0 + rhs.l2_norm()));
            // linear in the symbol coefficients
            let mut bsum = b1.scaled(alpha);
            bsum.add_scaled(&b2, beta);
            let lhs2 = apply_paraproduct(&ParaproductSpec::new(variant, bsum), &f1).unwrap();
            let mut rhs2 = apply_paraproduct(&ParaproductSpec::new(variant, b1.clone()), &f1)
                .unwrap()
                .scaled(alpha);
            rhs2.add_scaled(
                &apply_paraproduct(&ParaproductSpec::new(variant, b2.clone()), &f1).unwrap(),
                beta,
            );
            assert!(lhs2.sub(&rhs2).l2_norm() < 1e-12 * (1.0 + rhs2.l2_norm()));
        }
    }
}
