//! Finite posets and the power-set lattice of input coalitions.
//!
//! Input `i` (1-based) of `D = {1, …, d}` is stored as bit `i - 1` of a
//! [`SubsetMask`]. Every [`SetFunctionTable`] is indexed by the raw mask bits,
//! so entry `0` is the empty coalition and entry `2^d - 1` is `D`.
//!
//! Two zeta-like incidence functions exist and are easy to confuse:
//! [`IncidenceFunction::delta`] is the convolution identity (`1` iff `x = y`)
//! and [`IncidenceFunction::zeta_standard`] is `1` iff `x ≤ y`. The Möbius
//! function is the convolution inverse of the standard zeta, not of delta.

use std::fmt;

use thiserror::Error;

use crate::ring::Ring;

/// Largest supported number of inputs. Tables are dense, `2^d` entries.
pub const MAX_DIMENSION: usize = 24;

/// Posets larger than this skip the cubic transitivity check on construction.
const AXIOM_CHECK_LIMIT: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("dimension {0} is outside the supported range 1..={MAX_DIMENSION}")]
    Dimension(usize),
    #[error("mask {bits:#x} does not fit in dimension {dim}")]
    MaskOutOfRange { bits: u32, dim: usize },
    #[error("input index {index} is outside 1..={dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("subsets belong to different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("{sub} is not a subset of {sup}")]
    NotSubset { sub: String, sup: String },
    #[error("node {0} is out of range")]
    NodeOutOfRange(usize),
    #[error("nodes {x} and {y} are not ordered (x ≰ y)")]
    NotOrdered { x: usize, y: usize },
    #[error("relation is not a partial order: {0}")]
    NotPartialOrder(String),
    #[error("incidence functions are defined over different posets")]
    PosetMismatch,
    #[error("table has {got} entries, expected 2^{dim} = {expected}")]
    TableLength { got: usize, dim: usize, expected: usize },
    #[error("table entry {0} has a different ring shape than entry 0")]
    ShapeMismatch(usize),
}

/// A coalition `A ⊆ {1, …, d}`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubsetMask {
    bits: u32,
    dim: u8,
}

impl SubsetMask {
    pub fn new(bits: u32, dim: usize) -> Result<Self, LatticeError> {
        check_dimension(dim)?;
        if u64::from(bits) >= 1u64 << dim {
            return Err(LatticeError::MaskOutOfRange { bits, dim });
        }
        Ok(Self { bits, dim: dim as u8 })
    }

    pub fn empty(dim: usize) -> Result<Self, LatticeError> {
        Self::new(0, dim)
    }

    pub fn full(dim: usize) -> Result<Self, LatticeError> {
        check_dimension(dim)?;
        Ok(Self {
            bits: ((1u64 << dim) - 1) as u32,
            dim: dim as u8,
        })
    }

    /// Builds a mask from 1-based input indices. Duplicates are allowed.
    pub fn from_indices(indices: &[usize], dim: usize) -> Result<Self, LatticeError> {
        check_dimension(dim)?;
        let mut bits = 0u32;
        for &index in indices {
            if index == 0 || index > dim {
                return Err(LatticeError::IndexOutOfRange { index, dim });
            }
            bits |= 1 << (index - 1);
        }
        Ok(Self { bits, dim: dim as u8 })
    }

    /// Every subset of `D` in increasing mask order.
    pub fn all(dim: usize) -> Result<impl Iterator<Item = SubsetMask>, LatticeError> {
        check_dimension(dim)?;
        let d = dim as u8;
        Ok((0..(1u32 << dim)).map(move |bits| SubsetMask { bits, dim: d }))
    }

    #[inline]
    pub fn bits(self) -> u32 {
        self.bits
    }

    #[inline]
    pub fn index(self) -> usize {
        self.bits as usize
    }

    #[inline]
    pub fn dim(self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn cardinality(self) -> usize {
        self.bits.count_ones() as usize
    }

    #[inline]
    pub fn is_empty(self) -> bool {
        self.bits == 0
    }

    #[inline]
    pub fn is_full(self) -> bool {
        u64::from(self.bits) == (1u64 << self.dim) - 1
    }

    /// Whether 1-based input `index` belongs to the coalition.
    #[inline]
    pub fn contains(self, index: usize) -> bool {
        index >= 1 && index <= self.dim() && self.bits & (1 << (index - 1)) != 0
    }

    #[inline]
    pub fn is_subset_of(self, other: SubsetMask) -> bool {
        self.bits & !other.bits == 0
    }

    pub fn complement(self) -> SubsetMask {
        let full = ((1u64 << self.dim) - 1) as u32;
        SubsetMask {
            bits: full & !self.bits,
            dim: self.dim,
        }
    }

    /// Sorted 1-based indices of the inputs in the coalition.
    pub fn indices(self) -> Vec<usize> {
        (1..=self.dim()).filter(|&i| self.contains(i)).collect()
    }

    /// Sorted 0-based column positions, convenient for slicing sample rows.
    pub fn positions(self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.bits & (1 << i) != 0).collect()
    }
}

impl fmt::Debug for SubsetMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self)
    }
}

/// Comma-separated ascending 1-based indices; the empty set renders as "".
impl fmt::Display for SubsetMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.indices().iter().map(|i| i.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

fn check_dimension(dim: usize) -> Result<(), LatticeError> {
    if dim == 0 || dim > MAX_DIMENSION {
        Err(LatticeError::Dimension(dim))
    } else {
        Ok(())
    }
}

/// Möbius function of the Boolean lattice, `(-1)^{|A \ B|}` for `B ⊆ A`.
pub fn mobius_boolean(b: SubsetMask, a: SubsetMask) -> Result<i64, LatticeError> {
    if a.dim != b.dim {
        return Err(LatticeError::DimensionMismatch(b.dim(), a.dim()));
    }
    if !b.is_subset_of(a) {
        return Err(LatticeError::NotSubset {
            sub: format!("{b:?}"),
            sup: format!("{a:?}"),
        });
    }
    Ok(if (a.cardinality() - b.cardinality()).is_multiple_of(2) {
        1
    } else {
        -1
    })
}

/// A finite poset on nodes `0..n`, stored as a dense order relation.
#[derive(Clone, PartialEq, Eq)]
pub struct FinitePoset {
    labels: Vec<String>,
    leq: Vec<bool>,
    /// Nodes sorted so that `x ≤ y` implies `x` comes first.
    linear_extension: Vec<usize>,
}

impl fmt::Debug for FinitePoset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FinitePoset").field("labels", &self.labels).finish()
    }
}

impl FinitePoset {
    /// Builds a poset from labels and an order predicate `leq(x, y)`.
    ///
    /// Reflexivity and antisymmetry are always checked; transitivity is
    /// checked when there are at most 12 nodes.
    pub fn new<F>(labels: Vec<String>, leq: F) -> Result<Self, LatticeError>
    where
        F: Fn(usize, usize) -> bool,
    {
        let n = labels.len();
        if n == 0 {
            return Err(LatticeError::NotPartialOrder("empty node set".into()));
        }
        let mut rel = vec![false; n * n];
        for x in 0..n {
            for y in 0..n {
                rel[x * n + y] = leq(x, y);
            }
        }
        for x in 0..n {
            if !rel[x * n + x] {
                return Err(LatticeError::NotPartialOrder(format!("{} ≰ {}", labels[x], labels[x])));
            }
            for y in (x + 1)..n {
                if rel[x * n + y] && rel[y * n + x] {
                    return Err(LatticeError::NotPartialOrder(format!(
                        "{} and {} are mutually related",
                        labels[x], labels[y]
                    )));
                }
            }
        }
        if n <= AXIOM_CHECK_LIMIT {
            for x in 0..n {
                for y in 0..n {
                    if !rel[x * n + y] {
                        continue;
                    }
                    for z in 0..n {
                        if rel[y * n + z] && !rel[x * n + z] {
                            return Err(LatticeError::NotPartialOrder(format!(
                                "{} ≤ {} ≤ {} but {} ≰ {}",
                                labels[x], labels[y], labels[z], labels[x], labels[z]
                            )));
                        }
                    }
                }
            }
        }
        // Number of strict predecessors strictly increases along any chain.
        let mut order: Vec<usize> = (0..n).collect();
        let below: Vec<usize> = (0..n).map(|y| (0..n).filter(|&x| rel[x * n + y]).count()).collect();
        order.sort_by_key(|&y| (below[y], y));
        Ok(Self {
            labels,
            leq: rel,
            linear_extension: order,
        })
    }

    /// The chain `0 < 1 < … < n-1`.
    pub fn chain(n: usize) -> Result<Self, LatticeError> {
        Self::new((0..n).map(|i| i.to_string()).collect(), |x, y| x <= y)
    }

    /// `(𝒫(D), ⊆)`; node `i` is the subset with mask bits `i`.
    pub fn boolean_lattice(dim: usize) -> Result<Self, LatticeError> {
        let labels = SubsetMask::all(dim)?.map(|m| format!("{m:?}")).collect();
        Self::new(labels, |x, y| x & !y == 0)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, x: usize) -> &str {
        &self.labels[x]
    }

    #[inline]
    pub fn leq(&self, x: usize, y: usize) -> bool {
        self.leq[x * self.len() + y]
    }

    fn check_node(&self, x: usize) -> Result<(), LatticeError> {
        if x < self.len() {
            Ok(())
        } else {
            Err(LatticeError::NodeOutOfRange(x))
        }
    }

    /// `μ(x, ·)` over the whole poset, zero where `x ≰ y`.
    ///
    /// Walks a linear extension so every `μ(x, z)` with `z < y` is available
    /// when `μ(x, y)` is needed.
    pub fn mobius_row(&self, x: usize) -> Result<Vec<i64>, LatticeError> {
        self.check_node(x)?;
        let n = self.len();
        let mut row = vec![0i64; n];
        for &y in &self.linear_extension {
            if !self.leq(x, y) {
                continue;
            }
            row[y] = if y == x {
                1
            } else {
                -(0..n)
                    .filter(|&z| z != y && self.leq(x, z) && self.leq(z, y))
                    .map(|z| row[z])
                    .sum::<i64>()
            };
        }
        Ok(row)
    }
}

/// `μ(x, y)` by the defining recursion `μ(x,x) = 1`, `μ(x,y) = -Σ_{x≤z<y} μ(x,z)`.
pub fn mobius_recursive(poset: &FinitePoset, x: usize, y: usize) -> Result<i64, LatticeError> {
    poset.check_node(x)?;
    poset.check_node(y)?;
    if !poset.leq(x, y) {
        return Err(LatticeError::NotOrdered { x, y });
    }
    Ok(poset.mobius_row(x)?[y])
}

/// An element of the incidence algebra: values on pairs `x ≤ y`, zero elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct IncidenceFunction<T> {
    poset: FinitePoset,
    values: Vec<T>,
}

impl<T: Ring> IncidenceFunction<T> {
    /// `values(x, y) = f(x, y)` for `x ≤ y`; `zero` everywhere else.
    pub fn from_fn<F>(poset: &FinitePoset, zero: T, f: F) -> Self
    where
        F: Fn(usize, usize) -> T,
    {
        let n = poset.len();
        let mut values = Vec::with_capacity(n * n);
        for x in 0..n {
            for y in 0..n {
                values.push(if poset.leq(x, y) { f(x, y) } else { zero.clone() });
            }
        }
        Self {
            poset: poset.clone(),
            values,
        }
    }

    /// The convolution identity: `one` iff `x = y`.
    pub fn delta(poset: &FinitePoset, one: T) -> Self {
        let zero = one.zero_like();
        Self::from_fn(
            poset,
            zero.clone(),
            |x, y| if x == y { one.clone() } else { zero.clone() },
        )
    }

    /// `one` iff `x ≤ y`.
    pub fn zeta_standard(poset: &FinitePoset, one: T) -> Self {
        Self::from_fn(poset, one.zero_like(), |_, _| one.clone())
    }

    pub fn poset(&self) -> &FinitePoset {
        &self.poset
    }

    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.values[x * self.poset.len() + y]
    }
}

impl IncidenceFunction<i64> {
    /// The Möbius function, computed row by row with the recursion.
    pub fn mobius(poset: &FinitePoset) -> Self {
        let n = poset.len();
        let mut values = Vec::with_capacity(n * n);
        for x in 0..n {
            values.extend(poset.mobius_row(x).expect("node in range"));
        }
        Self {
            poset: poset.clone(),
            values,
        }
    }
}

/// `(f * g)(x, z) = Σ_{x ≤ y ≤ z} f(x, y) g(y, z)`.
pub fn convolve<T: Ring>(
    f: &IncidenceFunction<T>,
    g: &IncidenceFunction<T>,
) -> Result<IncidenceFunction<T>, LatticeError> {
    if f.poset != g.poset {
        return Err(LatticeError::PosetMismatch);
    }
    let p = &f.poset;
    let n = p.len();
    let zero = f.values[0].zero_like();
    let mut values = Vec::with_capacity(n * n);
    for x in 0..n {
        for z in 0..n {
            let mut acc = zero.clone();
            if p.leq(x, z) {
                for y in 0..n {
                    if p.leq(x, y) && p.leq(y, z) {
                        acc.add_assign_ref(&f.get(x, y).mul_ref(g.get(y, z)));
                    }
                }
            }
            values.push(acc);
        }
    }
    Ok(IncidenceFunction {
        poset: p.clone(),
        values,
    })
}

/// A set function `𝒫(D) → 𝔸`, stored densely by mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SetFunctionTable<T> {
    dim: usize,
    entries: Vec<T>,
}

impl<T: Ring> SetFunctionTable<T> {
    pub fn new(dim: usize, entries: Vec<T>) -> Result<Self, LatticeError> {
        check_dimension(dim)?;
        let expected = 1usize << dim;
        if entries.len() != expected {
            return Err(LatticeError::TableLength {
                got: entries.len(),
                dim,
                expected,
            });
        }
        if let Some(bad) = entries.iter().position(|e| !e.same_shape(&entries[0])) {
            return Err(LatticeError::ShapeMismatch(bad));
        }
        Ok(Self { dim, entries })
    }

    pub fn from_fn<F>(dim: usize, f: F) -> Result<Self, LatticeError>
    where
        F: FnMut(SubsetMask) -> T,
    {
        let entries = SubsetMask::all(dim)?.map(f).collect();
        Self::new(dim, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, subset: SubsetMask) -> &T {
        debug_assert_eq!(subset.dim(), self.dim);
        &self.entries[subset.index()]
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<T> {
        self.entries
    }

    /// Value at the full coalition `D`.
    pub fn top(&self) -> &T {
        &self.entries[self.entries.len() - 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = (SubsetMask, &T)> {
        let d = self.dim as u8;
        self.entries
            .iter()
            .enumerate()
            .map(move |(i, v)| (SubsetMask { bits: i as u32, dim: d }, v))
    }

    /// Pointwise map; the closure must preserve the ring shape.
    pub fn map<U: Ring, F: Fn(&T) -> U>(&self, f: F) -> SetFunctionTable<U> {
        SetFunctionTable {
            dim: self.dim,
            entries: self.entries.iter().map(f).collect(),
        }
    }

    /// `ψ_A = Σ_{B ⊆ A} (-1)^{|A∖B|} φ_B`, in `O(d·2^d)` ring operations.
    pub fn mobius_transform(&self) -> Self {
        let mut out = self.clone();
        lattice_sweep(&mut out.entries, |lo, hi| hi.sub_assign_ref(lo));
        out
    }

    /// `φ_A = Σ_{B ⊆ A} ψ_B`, in `O(d·2^d)` ring operations.
    pub fn zeta_transform(&self) -> Self {
        let mut out = self.clone();
        lattice_sweep(&mut out.entries, |lo, hi| hi.add_assign_ref(lo));
        out
    }

    /// `Σ_A entries[A]`, accumulated in mask order.
    pub fn total(&self) -> T {
        let mut acc = self.entries[0].clone();
        for e in &self.entries[1..] {
            acc.add_assign_ref(e);
        }
        acc
    }
}

/// One pass per coordinate; pairs each `A ∌ i` with `A ∪ {i}`.
fn lattice_sweep<T>(xs: &mut [T], update: impl Fn(&T, &mut T)) {
    let n = xs.len();
    let mut half = 1;
    while half < n {
        for block in xs.chunks_exact_mut(2 * half) {
            let (lo, hi) = block.split_at_mut(half);
            for (l, h) in lo.iter().zip(hi.iter_mut()) {
                update(l, h);
            }
        }
        half *= 2;
    }
}

/// Free-function form of [`SetFunctionTable::mobius_transform`].
pub fn mobius_transform<T: Ring>(phi: &SetFunctionTable<T>) -> SetFunctionTable<T> {
    phi.mobius_transform()
}

/// Free-function form of [`SetFunctionTable::zeta_transform`].
pub fn zeta_transform<T: Ring>(psi: &SetFunctionTable<T>) -> SetFunctionTable<T> {
    psi.zeta_transform()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(indices: &[usize], d: usize) -> SubsetMask {
        SubsetMask::from_indices(indices, d).unwrap()
    }

    #[test]
    fn subset_mask_basics() {
        let a = mask(&[1, 3], 3);
        assert_eq!(a.bits(), 0b101);
        assert_eq!(a.cardinality(), 2);
        assert_eq!(a.indices(), vec![1, 3]);
        assert_eq!(a.to_string(), "1,3");
        assert_eq!(a.complement(), mask(&[2], 3));
        assert!(SubsetMask::empty(3).unwrap().to_string().is_empty());
        assert!(SubsetMask::full(3).unwrap().is_full());
        assert!(SubsetMask::new(8, 3).is_err());
        assert!(SubsetMask::from_indices(&[0], 3).is_err());
        assert!(SubsetMask::full(25).is_err());
        assert_eq!(SubsetMask::full(24).unwrap().bits(), (1 << 24) - 1);
    }

    #[test]
    fn chain_mobius() {
        let chain = FinitePoset::chain(3).unwrap();
        assert_eq!(mobius_recursive(&chain, 0, 0).unwrap(), 1);
        assert_eq!(mobius_recursive(&chain, 0, 1).unwrap(), -1);
        assert_eq!(mobius_recursive(&chain, 0, 2).unwrap(), 0);
        assert!(matches!(
            mobius_recursive(&chain, 2, 0),
            Err(LatticeError::NotOrdered { .. })
        ));
    }

    #[test]
    fn boolean_mobius_examples() {
        let lattice = FinitePoset::boolean_lattice(3).unwrap();
        assert_eq!(mobius_recursive(&lattice, 0, 0b111).unwrap(), -1);
        assert_eq!(mobius_boolean(mask(&[1], 2), mask(&[1], 2)).unwrap(), 1);
        assert_eq!(mobius_boolean(mask(&[1], 2), mask(&[1, 2], 2)).unwrap(), -1);
        assert_eq!(mobius_boolean(mask(&[], 2), mask(&[1, 2], 2)).unwrap(), 1);
        assert!(mobius_boolean(mask(&[2], 2), mask(&[1], 2)).is_err());
    }

    #[test]
    fn rejects_non_partial_orders() {
        let labels: Vec<String> = (0..3).map(|i| i.to_string()).collect();
        // not reflexive
        assert!(FinitePoset::new(labels.clone(), |x, y| x < y).is_err());
        // not antisymmetric
        assert!(FinitePoset::new(labels.clone(), |_, _| true).is_err());
        // not transitive: 0 ≤ 1 ≤ 2 only via adjacent pairs
        assert!(FinitePoset::new(labels, |x, y| x == y || y == x + 1).is_err());
    }

    #[test]
    fn convolution_examples() {
        let chain = FinitePoset::chain(2).unwrap();
        let zeta = IncidenceFunction::zeta_standard(&chain, 1i64);
        let zz = convolve(&zeta, &zeta).unwrap();
        assert_eq!(*zz.get(0, 1), 2);

        let delta = IncidenceFunction::delta(&chain, 1i64);
        assert_eq!(convolve(&delta, &zeta).unwrap(), zeta);

        let lattice = FinitePoset::boolean_lattice(3).unwrap();
        let mu = IncidenceFunction::mobius(&lattice);
        let zeta3 = IncidenceFunction::zeta_standard(&lattice, 1i64);
        assert_eq!(convolve(&mu, &zeta3).unwrap(), IncidenceFunction::delta(&lattice, 1i64));

        assert_eq!(convolve(&zeta, &zeta3), Err(LatticeError::PosetMismatch));
    }

    #[test]
    fn transform_examples() {
        let phi = SetFunctionTable::new(1, vec![0.0, 4.5]).unwrap();
        assert_eq!(phi.mobius_transform().entries(), &[0.0, 4.5]);

        let phi = SetFunctionTable::new(2, vec![0i64, 2, 3, 5]).unwrap();
        let psi = phi.mobius_transform();
        assert_eq!(psi.entries(), &[0, 2, 3, 0]);
        assert_eq!(psi.zeta_transform(), phi);

        let zero = SetFunctionTable::new(3, vec![0i64; 8]).unwrap();
        assert_eq!(zero.zeta_transform(), zero);

        let mut delta = vec![0i64; 8];
        delta[0] = 1;
        let ones = SetFunctionTable::new(3, delta).unwrap().zeta_transform();
        assert!(ones.entries().iter().all(|&v| v == 1));
    }

    #[test]
    fn table_validation() {
        assert!(matches!(
            SetFunctionTable::new(2, vec![0.0; 3]),
            Err(LatticeError::TableLength { got: 3, .. })
        ));
        assert!(SetFunctionTable::<f64>::new(0, vec![]).is_err());
    }
}
