//! Arithmetic over the binary extension fields GF(2^q), 1 <= q <= 16.
//!
//! A [`FieldSpec`] names the field (bit width plus reduction polynomial) and a
//! [`Field`] holds the lookup tables built from it. Multiplication is
//! table-driven for q <= 8 and falls back to shift-and-reduce above that;
//! inversion always goes through the log/exp tables.
//!
//! Payload helpers ([`Field::axpy`], [`Field::scale`]) treat a byte slice as a
//! sequence of q-bit symbols. Widths 1, 2 and 4 pack several symbols per byte,
//! width 8 is one symbol per byte and width 16 is one little-endian symbol per
//! byte pair. Other widths support scalar arithmetic only.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub const MAX_BITS: u8 = 16;

/// Reduction polynomials used when only a width is given. Index is the width.
const DEFAULT_POLYS: [u32; 17] =
    [0, 0x3, 0x7, 0xB, 0x13, 0x25, 0x43, 0x83, 0x11B, 0x211, 0x409, 0x805, 0x1053, 0x201B, 0x4443, 0x8003, 0x1100B];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("field width {0} outside 1..=16")]
    BitsOutOfRange(u8),
    #[error("polynomial {poly:#x} does not have degree {bits}")]
    WrongDegree { bits: u8, poly: u32 },
    #[error("polynomial {poly:#x} is reducible over GF(2)")]
    Reducible { poly: u32 },
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("value {value} is not an element of GF(2^{bits})")]
    OutOfField { bits: u8, value: u32 },
    #[error("payload arithmetic supports q in {{1, 2, 4, 8, 16}}, got {0}")]
    UnsupportedPayloadWidth(u8),
    #[error("payload of {len} bytes is not a whole number of {bits}-bit symbols")]
    RaggedPayload { bits: u8, len: usize },
}

/// Bit width and reduction polynomial of a binary extension field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawFieldSpec", into = "RawFieldSpec")]
pub struct FieldSpec {
    bits: u8,
    poly: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFieldSpec {
    q: u8,
    #[serde(default)]
    poly: Option<u32>,
}

impl TryFrom<RawFieldSpec> for FieldSpec {
    type Error = FieldError;

    fn try_from(raw: RawFieldSpec) -> Result<Self, Self::Error> {
        match raw.poly {
            Some(poly) => FieldSpec::new(raw.q, poly),
            None => FieldSpec::with_default_poly(raw.q),
        }
    }
}

impl From<FieldSpec> for RawFieldSpec {
    fn from(spec: FieldSpec) -> Self {
        RawFieldSpec { q: spec.bits, poly: Some(spec.poly) }
    }
}

impl FieldSpec {
    /// GF(2^8) reduced by x^8 + x^4 + x^3 + x + 1.
    pub const GF256: FieldSpec = FieldSpec { bits: 8, poly: 0x11B };

    pub fn new(bits: u8, poly: u32) -> Result<Self, FieldError> {
        if bits == 0 || bits > MAX_BITS {
            return Err(FieldError::BitsOutOfRange(bits));
        }
        if degree(poly) != Some(u32::from(bits)) {
            return Err(FieldError::WrongDegree { bits, poly });
        }
        if !is_irreducible(poly) {
            return Err(FieldError::Reducible { poly });
        }
        Ok(FieldSpec { bits, poly })
    }

    pub fn with_default_poly(bits: u8) -> Result<Self, FieldError> {
        if bits == 0 || bits > MAX_BITS {
            return Err(FieldError::BitsOutOfRange(bits));
        }
        FieldSpec::new(bits, DEFAULT_POLYS[bits as usize])
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn poly(&self) -> u32 {
        self.poly
    }

    /// Number of field elements, 2^q.
    pub fn order(&self) -> u32 {
        1 << self.bits
    }

    /// Bytes used on the wire for one coefficient (q rounded up to whole bytes).
    pub fn coefficient_bytes(&self) -> usize {
        usize::from(self.bits).div_ceil(8)
    }

    pub fn supports_payload(&self) -> bool {
        matches!(self.bits, 1 | 2 | 4 | 8 | 16)
    }
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::GF256
    }
}

impl fmt::Display for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GF(2^{}) mod {:#x}", self.bits, self.poly)
    }
}

/// An element of some GF(2^q). The owning [`Field`] guarantees `value < 2^q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[repr(transparent)]
pub struct FieldElement(u16);

impl FieldElement {
    pub const ZERO: FieldElement = FieldElement(0);
    pub const ONE: FieldElement = FieldElement(1);

    pub fn value(self) -> u16 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

fn degree(p: u32) -> Option<u32> {
    if p == 0 {
        None
    } else {
        Some(31 - p.leading_zeros())
    }
}

fn poly_mod(mut a: u32, b: u32) -> u32 {
    let db = degree(b).expect("nonzero divisor");
    while let Some(da) = degree(a) {
        if da < db {
            break;
        }
        a ^= b << (da - db);
    }
    a
}

/// Trial division by every polynomial of degree 1..=deg/2.
pub fn is_irreducible(poly: u32) -> bool {
    let Some(d) = degree(poly) else { return false };
    if d == 0 {
        return false;
    }
    for div_deg in 1..=d / 2 {
        for divisor in (1u32 << div_deg)..(1u32 << (div_deg + 1)) {
            if poly_mod(poly, divisor) == 0 {
                return false;
            }
        }
    }
    true
}

/// Carry-less multiply followed by long-division reduction. Independent of
/// any table; used as the oracle for the table-driven path.
pub fn reference_mul(spec: FieldSpec, a: u16, b: u16) -> u16 {
    let mut product: u32 = 0;
    let (a, b) = (u32::from(a), u32::from(b));
    for bit in 0..spec.bits {
        if b & (1 << bit) != 0 {
            product ^= a << bit;
        }
    }
    poly_mod(product, spec.poly) as u16
}

/// Russian-peasant multiply with reduction folded into each shift.
#[inline]
fn shift_reduce_mul(spec: FieldSpec, a: u16, b: u16) -> u16 {
    let top = 1u32 << spec.bits;
    let (mut a, mut b) = (u32::from(a), u32::from(b));
    let mut acc = 0u32;
    while b != 0 {
        if b & 1 != 0 {
            acc ^= a;
        }
        b >>= 1;
        a <<= 1;
        if a & top != 0 {
            a ^= spec.poly;
        }
    }
    acc as u16
}

fn reference_pow(spec: FieldSpec, base: u16, mut exp: u32) -> u16 {
    let mut acc = 1u16;
    let mut b = base;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = reference_mul(spec, acc, b);
        }
        b = reference_mul(spec, b, b);
        exp >>= 1;
    }
    acc
}

fn prime_factors(mut n: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        if n.is_multiple_of(p) {
            out.push(p);
            while n.is_multiple_of(p) {
                n /= p;
            }
        }
        p += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// Smallest element whose multiplicative order is 2^q - 1.
fn find_generator(spec: FieldSpec) -> u16 {
    let group = spec.order() - 1;
    if group == 1 {
        return 1;
    }
    let factors = prime_factors(group);
    (2..spec.order())
        .map(|g| g as u16)
        .find(|&g| factors.iter().all(|&p| reference_pow(spec, g, group / p) != 1))
        .expect("the multiplicative group of a finite field is cyclic")
}

/// Lookup tables for one field plus the arithmetic that uses them.
#[derive(Clone)]
pub struct Field {
    spec: FieldSpec,
    generator: u16,
    /// exp[i] = g^i, doubled so that exp[log a + log b] needs no reduction.
    exp: Vec<u16>,
    /// log[a] for a != 0; log[0] is unused.
    log: Vec<u16>,
    /// Full product table for q <= 8, row-major, `order * order` entries.
    mul_table: Option<Vec<u8>>,
    /// For q in {1, 2, 4}: for each coefficient, the byte -> byte map that
    /// multiplies every packed symbol of the byte.
    packed: Option<Vec<[u8; 256]>>,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field").field("spec", &self.spec).field("generator", &self.generator).finish_non_exhaustive()
    }
}

impl Field {
    pub fn new(spec: FieldSpec) -> Field {
        let order = spec.order() as usize;
        let group = order - 1;
        let generator = find_generator(spec);

        let mut exp = vec![0u16; 2 * group.max(1)];
        let mut log = vec![0u16; order];
        let mut x = 1u16;
        for (i, e) in exp.iter_mut().take(group).enumerate() {
            *e = x;
            log[x as usize] = i as u16;
            x = reference_mul(spec, x, generator);
        }
        for i in group..exp.len() {
            exp[i] = exp[i - group];
        }

        let mut field = Field { spec, generator, exp, log, mul_table: None, packed: None };
        if spec.bits <= 8 {
            let mut table = vec![0u8; order * order];
            for a in 0..order {
                for b in 0..order {
                    table[a * order + b] = field.log_mul(a as u16, b as u16) as u8;
                }
            }
            field.mul_table = Some(table);
        }
        if matches!(spec.bits, 1 | 2 | 4) {
            let width = spec.bits as u32;
            let mask = (1u16 << width) - 1;
            let per_byte = 8 / width;
            let packed = (0..order as u16)
                .map(|c| {
                    let mut map = [0u8; 256];
                    for (byte, slot) in map.iter_mut().enumerate() {
                        let mut out = 0u8;
                        for s in 0..per_byte {
                            let sym = (byte as u16 >> (s * width)) & mask;
                            out |= (field.log_mul(c, sym) as u8) << (s * width);
                        }
                        *slot = out;
                    }
                    map
                })
                .collect();
            field.packed = Some(packed);
        }
        field
    }

    /// Validates `(bits, poly)` and builds the tables in one step.
    pub fn build(bits: u8, poly: u32) -> Result<Field, FieldError> {
        Ok(Field::new(FieldSpec::new(bits, poly)?))
    }

    pub fn spec(&self) -> FieldSpec {
        self.spec
    }

    pub fn order(&self) -> u32 {
        self.spec.order()
    }

    pub fn generator(&self) -> FieldElement {
        FieldElement(self.generator)
    }

    /// `exp[i] = g^i` for `i < 2^q - 1`.
    pub fn exp_table(&self) -> &[u16] {
        &self.exp[..self.order() as usize - 1]
    }

    pub fn log_table(&self) -> &[u16] {
        &self.log
    }

    pub fn element(&self, value: u32) -> Result<FieldElement, FieldError> {
        if value < self.order() {
            Ok(FieldElement(value as u16))
        } else {
            Err(FieldError::OutOfField { bits: self.spec.bits, value })
        }
    }

    /// `g^i` for any exponent.
    pub fn pow_generator(&self, i: usize) -> FieldElement {
        let group = self.order() as usize - 1;
        FieldElement(self.exp[i % group.max(1)])
    }

    #[inline]
    fn log_mul(&self, a: u16, b: u16) -> u16 {
        if a == 0 || b == 0 {
            0
        } else {
            self.exp[self.log[a as usize] as usize + self.log[b as usize] as usize]
        }
    }

    #[inline]
    pub fn add(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        FieldElement(a.0 ^ b.0)
    }

    #[inline]
    pub fn mul(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        match &self.mul_table {
            Some(table) => FieldElement(u16::from(table[((a.0 as usize) << self.spec.bits) | b.0 as usize])),
            None => FieldElement(shift_reduce_mul(self.spec, a.0, b.0)),
        }
    }

    pub fn inv(&self, a: FieldElement) -> Result<FieldElement, FieldError> {
        if a.is_zero() {
            return Err(FieldError::ZeroInverse);
        }
        let group = self.order() as usize - 1;
        if group == 1 {
            return Ok(FieldElement::ONE);
        }
        let l = self.log[a.0 as usize] as usize;
        Ok(FieldElement(self.exp[(group - l) % group]))
    }

    pub fn div(&self, a: FieldElement, b: FieldElement) -> Result<FieldElement, FieldError> {
        Ok(self.mul(a, self.inv(b)?))
    }

    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> FieldElement {
        FieldElement(rng.random_range(0..self.order()) as u16)
    }

    pub fn random_nonzero<R: Rng + ?Sized>(&self, rng: &mut R) -> FieldElement {
        FieldElement(rng.random_range(1..self.order()) as u16)
    }

    /// Checks that a payload of `len` bytes is a whole number of symbols.
    pub fn check_payload_len(&self, len: usize) -> Result<(), FieldError> {
        if !self.spec.supports_payload() {
            return Err(FieldError::UnsupportedPayloadWidth(self.spec.bits));
        }
        if self.spec.bits == 16 && !len.is_multiple_of(2) {
            return Err(FieldError::RaggedPayload { bits: 16, len });
        }
        Ok(())
    }

    /// `dst[k] += c * src[k]` for every symbol position k.
    ///
    /// Panics if the slices differ in length or the width has no payload
    /// layout; see [`Field::check_payload_len`].
    pub fn axpy(&self, dst: &mut [u8], c: FieldElement, src: &[u8]) {
        assert_eq!(dst.len(), src.len(), "payload length mismatch");
        if c.is_zero() {
            return;
        }
        if c == FieldElement::ONE {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d ^= s);
            return;
        }
        match self.spec.bits {
            8 => {
                let table = self.mul_table.as_ref().expect("q=8 has a product table");
                let row = &table[(c.0 as usize) << 8..(c.0 as usize + 1) << 8];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d ^= row[s as usize]);
            }
            1 | 2 | 4 => {
                let map = &self.packed.as_ref().expect("packed widths have maps")[c.0 as usize];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d ^= map[s as usize]);
            }
            16 => {
                for (d, s) in dst.chunks_exact_mut(2).zip(src.chunks_exact(2)) {
                    let sym = FieldElement(u16::from_le_bytes([s[0], s[1]]));
                    let prod = self.mul(c, sym).0.to_le_bytes();
                    d[0] ^= prod[0];
                    d[1] ^= prod[1];
                }
            }
            other => panic!("no payload layout for q={other}"),
        }
    }

    /// `buf[k] *= c` for every symbol position k.
    pub fn scale(&self, buf: &mut [u8], c: FieldElement) {
        if c == FieldElement::ONE {
            return;
        }
        if c.is_zero() {
            buf.fill(0);
            return;
        }
        match self.spec.bits {
            8 => {
                let table = self.mul_table.as_ref().expect("q=8 has a product table");
                let row = &table[(c.0 as usize) << 8..(c.0 as usize + 1) << 8];
                buf.iter_mut().for_each(|b| *b = row[*b as usize]);
            }
            1 | 2 | 4 => {
                let map = &self.packed.as_ref().expect("packed widths have maps")[c.0 as usize];
                buf.iter_mut().for_each(|b| *b = map[*b as usize]);
            }
            16 => {
                for pair in buf.chunks_exact_mut(2) {
                    let sym = FieldElement(u16::from_le_bytes([pair[0], pair[1]]));
                    pair.copy_from_slice(&self.mul(c, sym).0.to_le_bytes());
                }
            }
            other => panic!("no payload layout for q={other}"),
        }
    }

    /// Inner product of two coefficient vectors.
    pub fn dot(&self, a: &[FieldElement], b: &[FieldElement]) -> FieldElement {
        a.iter().zip(b).fold(FieldElement::ZERO, |acc, (&x, &y)| self.add(acc, self.mul(x, y)))
    }
}
