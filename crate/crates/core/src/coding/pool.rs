//! The universe of pairwise-safe coding vectors and the mutable pool drawn
//! from it.
//!
//! The universe is the column set of a systematic extended Reed-Solomon
//! generator: Vandermonde columns `(1, a, a^2, ..., a^(n-1))` for every field
//! element `a`, plus the column at infinity `(0, ..., 0, 1)`, all multiplied
//! by the inverse of the first `n` columns. Any `n` of those columns are
//! independent, the first `n` become the unit vectors, and the set has
//! `2^q + 1` members when the field allows it.

use super::CodingError;
use crate::gf::{Field, FieldElement};
use rand::Rng;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Ceiling on universe size; wide fields would otherwise build 65537 vectors.
pub const MAX_UNIVERSE: usize = 4097;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VectorUniverse {
    n: usize,
    flat: Vec<FieldElement>,
    /// `units[j]` is the index of the unit vector `e_j`.
    units: Vec<usize>,
}

impl VectorUniverse {
    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.flat.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[FieldElement] {
        &self.flat[i * self.n..(i + 1) * self.n]
    }

    pub fn unit(&self, j: usize) -> usize {
        self.units[j]
    }

    /// Index of the unit vector `e_j` if `i` is one.
    pub fn unit_position(&self, i: usize) -> Option<usize> {
        self.units.iter().position(|&u| u == i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &[FieldElement]> {
        self.flat.chunks_exact(self.n)
    }
}

/// Builds the universe for `n`-dimensional vectors over `field`.
pub fn build_vector_universe(n: usize, field: &Field) -> Result<VectorUniverse, CodingError> {
    let order = field.order() as usize;
    if n == 0 {
        return Err(CodingError::invalid("vector dimension must be positive"));
    }
    if order < n {
        return Err(CodingError::FieldTooSmall { bits: field.spec().bits(), n });
    }
    if n == 1 {
        let flat: Vec<FieldElement> =
            (1..order as u32).take(MAX_UNIVERSE).map(|v| field.element(v).expect("value below order")).collect();
        return Ok(VectorUniverse { n, flat, units: vec![0] });
    }

    let size = (order + 1).min(MAX_UNIVERSE);
    let column = |a: FieldElement| -> Vec<FieldElement> {
        let mut col = Vec::with_capacity(n);
        let mut x = FieldElement::ONE;
        for _ in 0..n {
            col.push(x);
            x = field.mul(x, a);
        }
        col
    };
    let mut columns: Vec<Vec<FieldElement>> = Vec::with_capacity(size);
    for a in 0..order as u32 {
        if columns.len() == size - 1 {
            break;
        }
        columns.push(column(field.element(a)?));
    }
    let mut infinity = vec![FieldElement::ZERO; n];
    infinity[n - 1] = FieldElement::ONE;
    columns.push(infinity);

    let basis: Vec<Vec<FieldElement>> = columns[..n].to_vec();
    let inv = invert_columns(field, &basis)?;
    let mut flat = Vec::with_capacity(size * n);
    for col in &columns {
        for row in &inv {
            flat.push(field.dot(row, col));
        }
    }
    Ok(VectorUniverse { n, flat, units: (0..n).collect() })
}

/// Inverse of the matrix whose columns are `cols`, returned as rows.
fn invert_columns(field: &Field, cols: &[Vec<FieldElement>]) -> Result<Vec<Vec<FieldElement>>, CodingError> {
    let n = cols.len();
    let mut a: Vec<Vec<FieldElement>> = (0..n).map(|r| (0..n).map(|c| cols[c][r]).collect()).collect();
    let mut inv: Vec<Vec<FieldElement>> =
        (0..n).map(|r| (0..n).map(|c| if r == c { FieldElement::ONE } else { FieldElement::ZERO }).collect()).collect();
    for c in 0..n {
        let p =
            (c..n).find(|&r| !a[r][c].is_zero()).ok_or_else(|| CodingError::invalid("basis columns are dependent"))?;
        a.swap(c, p);
        inv.swap(c, p);
        let s = field.inv(a[c][c])?;
        for k in 0..n {
            a[c][k] = field.mul(a[c][k], s);
            inv[c][k] = field.mul(inv[c][k], s);
        }
        for r in 0..n {
            if r != c && !a[r][c].is_zero() {
                let f = a[r][c];
                for k in 0..n {
                    let (x, y) = (field.mul(f, a[c][k]), field.mul(f, inv[c][k]));
                    a[r][k] = field.add(a[r][k], x);
                    inv[r][k] = field.add(inv[r][k], y);
                }
            }
        }
    }
    Ok(inv)
}

/// Set of indices supporting O(1) insert, removal and uniform sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
struct IndexedSet {
    items: Vec<usize>,
    pos: Vec<usize>,
}

const ABSENT: usize = usize::MAX;

impl IndexedSet {
    fn full(n: usize) -> Self {
        IndexedSet { items: (0..n).collect(), pos: (0..n).collect() }
    }

    fn contains(&self, i: usize) -> bool {
        self.pos[i] != ABSENT
    }

    fn insert(&mut self, i: usize) {
        if !self.contains(i) {
            self.pos[i] = self.items.len();
            self.items.push(i);
        }
    }

    fn remove(&mut self, i: usize) -> bool {
        let p = self.pos[i];
        if p == ABSENT {
            return false;
        }
        self.items.swap_remove(p);
        if let Some(&moved) = self.items.get(p) {
            self.pos[moved] = p;
        }
        self.pos[i] = ABSENT;
        true
    }
}

/// Available subset of a universe plus bookkeeping for vectors in use.
///
/// A vector that leaves the available set is either a held unit vector or a
/// vector that was sent. Its holders are recorded; once none of them is still
/// backlogged the vector is safe to send again, since it cannot be in the span
/// of any peer that still needs packets.
#[derive(Debug, Clone)]
pub struct CodingVectorPool {
    universe: Arc<VectorUniverse>,
    available: IndexedSet,
    in_use: BTreeMap<usize, Vec<usize>>,
}

impl CodingVectorPool {
    pub fn new(universe: Arc<VectorUniverse>) -> Self {
        let available = IndexedSet::full(universe.len());
        CodingVectorPool { universe, available, in_use: BTreeMap::new() }
    }

    pub fn universe(&self) -> &Arc<VectorUniverse> {
        &self.universe
    }

    pub fn available_len(&self) -> usize {
        self.available.items.len()
    }

    pub fn is_exhausted(&self) -> bool {
        self.available.items.is_empty()
    }

    pub fn is_available(&self, i: usize) -> bool {
        self.available.contains(i)
    }

    /// Available indices in internal order.
    pub fn available(&self) -> &[usize] {
        &self.available.items
    }

    /// Draws a vector uniformly and withdraws it.
    pub fn select<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<usize, CodingError> {
        if self.available.items.is_empty() {
            return Err(CodingError::PoolExhausted);
        }
        let i = self.available.items[rng.random_range(0..self.available.items.len())];
        self.available.remove(i);
        self.in_use.entry(i).or_default();
        Ok(i)
    }

    /// Withdraws `i` and records `holder` as holding it.
    pub fn withdraw(&mut self, i: usize, holder: usize) {
        self.available.remove(i);
        let holders = self.in_use.entry(i).or_default();
        if !holders.contains(&holder) {
            holders.push(holder);
        }
    }

    /// Withdraws `i` without a holder, e.g. while it is in flight.
    pub fn reserve(&mut self, i: usize) {
        self.available.remove(i);
        self.in_use.entry(i).or_default();
    }

    /// Records that `holder` received the in-use vector `i`.
    pub fn add_holder(&mut self, i: usize, holder: usize) {
        self.withdraw(i, holder);
    }

    pub fn holders(&self, i: usize) -> &[usize] {
        self.in_use.get(&i).map_or(&[], Vec::as_slice)
    }

    /// Puts `i` back regardless of holders, e.g. after a send that reached
    /// nobody.
    pub fn restore(&mut self, i: usize) {
        if self.in_use.get(&i).is_some_and(|h| h.is_empty()) {
            self.in_use.remove(&i);
            self.available.insert(i);
        }
    }

    /// Returns every in-use vector none of whose holders is backlogged.
    /// Vectors with no recorded holder stay out; they may be in flight.
    pub fn release_completed(&mut self, backlog: &[u32]) -> usize {
        let ready: Vec<usize> = self
            .in_use
            .iter()
            .filter(|(_, h)| !h.is_empty() && h.iter().all(|&p| backlog[p] == 0))
            .map(|(&i, _)| i)
            .collect();
        for &i in &ready {
            self.in_use.remove(&i);
            self.available.insert(i);
        }
        ready.len()
    }
}

/// Fresh pool whose available set is the whole universe.
pub fn build_vector_pool(n: usize, field: &Field) -> Result<CodingVectorPool, CodingError> {
    Ok(CodingVectorPool::new(Arc::new(build_vector_universe(n, field)?)))
}
