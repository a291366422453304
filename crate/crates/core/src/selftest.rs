//! Invariant checks shared by the `selftest` command and the test suites.
//! Oracles here avoid the lookup tables: products come from bitwise
//! carry-less multiplication and inverses from exhaustive search.

use crate::coding::{build_vector_universe, encode, CodedPacket, DecoderState, GroupLayout, PacketGroup};
use crate::gf::{reference_mul, Field, FieldElement, FieldSpec};
use crate::par::stream_rng;
use crate::sim::{self, ProtocolKind, SimConfig};
use rand::Rng;
use std::sync::Arc;

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn from(name: &str, r: Result<String, String>) -> Check {
        match r {
            Ok(detail) => Check { name: name.into(), passed: true, detail },
            Err(detail) => Check { name: name.into(), passed: false, detail },
        }
    }
}

fn el(f: &Field, v: u32) -> FieldElement {
    f.element(v).expect("value below order")
}

fn reference_inv(spec: FieldSpec, a: u16) -> Option<u16> {
    (1..spec.order()).map(|b| b as u16).find(|&b| reference_mul(spec, a, b) == 1)
}

fn axioms_hold(f: &Field, a: FieldElement, b: FieldElement, c: FieldElement) -> Result<(), String> {
    let ok = f.add(a, b) == f.add(b, a)
        && f.mul(a, b) == f.mul(b, a)
        && f.add(f.add(a, b), c) == f.add(a, f.add(b, c))
        && f.mul(f.mul(a, b), c) == f.mul(a, f.mul(b, c))
        && f.mul(a, f.add(b, c)) == f.add(f.mul(a, b), f.mul(a, c))
        && f.add(a, FieldElement::ZERO) == a
        && f.mul(a, FieldElement::ONE) == a
        && f.add(a, a) == FieldElement::ZERO
        && (a.is_zero() || f.mul(a, f.inv(a).map_err(|e| e.to_string())?) == FieldElement::ONE);
    if ok {
        Ok(())
    } else {
        Err(format!("axiom fails at ({}, {}, {})", a.value(), b.value(), c.value()))
    }
}

/// Every field axiom over every triple of elements.
pub fn field_axioms_exhaustive(spec: FieldSpec) -> Result<String, String> {
    let f = Field::new(spec);
    let q = f.order();
    for a in 0..q {
        for b in 0..q {
            for c in 0..q {
                axioms_hold(&f, el(&f, a), el(&f, b), el(&f, c))?;
            }
        }
    }
    Ok(format!("{} triples over GF({q})", u64::from(q).pow(3)))
}

/// Field axioms on `n` random triples.
pub fn field_axioms_sampled(spec: FieldSpec, n: u64, seed: u64) -> Result<String, String> {
    let f = Field::new(spec);
    let mut rng = stream_rng(seed, 0);
    for _ in 0..n {
        let (a, b, c) = (f.random(&mut rng), f.random(&mut rng), f.random(&mut rng));
        axioms_hold(&f, a, b, c)?;
    }
    Ok(format!("{n} random triples over GF({})", f.order()))
}

/// Table products and inverses against the bitwise oracle on every pair.
pub fn tables_match_reference(spec: FieldSpec) -> Result<String, String> {
    let f = Field::new(spec);
    let q = f.order();
    for a in 0..q {
        for b in 0..q {
            let want = reference_mul(spec, a as u16, b as u16);
            let got = f.mul(el(&f, a), el(&f, b)).value();
            if got != want {
                return Err(format!("{a} * {b}: table {got}, reference {want}"));
            }
        }
        if a > 0 && f.inv(el(&f, a)).ok().map(FieldElement::value) != reference_inv(spec, a as u16) {
            return Err(format!("inverse of {a} disagrees"));
        }
    }
    Ok(format!("{} products over GF({q})", u64::from(q) * u64::from(q)))
}

/// Rank of `rows` by elimination with oracle arithmetic.
pub fn reference_rank(spec: FieldSpec, mut rows: Vec<Vec<u16>>) -> usize {
    let cols = rows.first().map_or(0, Vec::len);
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..rows.len()).find(|&r| rows[r][c] != 0) else { continue };
        rows.swap(rank, p);
        let inv = reference_inv(spec, rows[rank][c]).expect("nonzero has an inverse");
        let pivot: Vec<u16> = rows[rank].iter().map(|&x| reference_mul(spec, x, inv)).collect();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != rank && row[c] != 0 {
                let k = row[c];
                for (x, &p) in row.iter_mut().zip(&pivot) {
                    *x ^= reference_mul(spec, k, p);
                }
            }
        }
        rows[rank] = pivot;
        rank += 1;
    }
    rank
}

fn subsets(n: usize, k: usize, f: &mut dyn FnMut(&[usize]) -> bool) -> bool {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize]) -> bool) -> bool {
        if cur.len() == k {
            return f(cur);
        }
        for i in start..n {
            cur.push(i);
            if !go(i + 1, n, k, cur, f) {
                return false;
            }
            cur.pop();
        }
        true
    }
    go(0, n, k, &mut Vec::with_capacity(k), f)
}

/// Every `n`-subset of the universe is independent.
pub fn universe_is_mds(n: usize, spec: FieldSpec) -> Result<String, String> {
    let f = Field::new(spec);
    let u = build_vector_universe(n, &f).map_err(|e| e.to_string())?;
    let mut checked = 0u64;
    let mut bad = None;
    subsets(u.len(), n, &mut |idx| {
        checked += 1;
        let rows: Vec<Vec<u16>> = idx.iter().map(|&i| u.vector(i).iter().map(|x| x.value()).collect()).collect();
        if reference_rank(spec, rows) < n {
            bad = Some(idx.to_vec());
            return false;
        }
        true
    });
    match bad {
        Some(idx) => Err(format!("dependent subset {idx:?} for n={n} over GF({})", f.order())),
        None => Ok(format!("{checked} subsets of {} vectors, n={n}, GF({})", u.len(), f.order())),
    }
}

/// Encodes random groups with random independent vectors and decodes them.
pub fn codec_round_trips(cases: u32, max_group: usize, max_chunk: usize, seed: u64) -> Result<String, String> {
    let mut rng = stream_rng(seed, 0);
    for case in 0..cases {
        let bits = if rng.random_bool(0.5) { 8 } else { 16 };
        let spec = FieldSpec::with_default_poly(bits).expect("supported width");
        let field = Arc::new(Field::new(spec));
        let g = rng.random_range(1..=max_group);
        let len = rng.random_range(1..=max_chunk / 2) * 2;
        let natives: Vec<Vec<u8>> = (0..g).map(|_| (0..len).map(|_| rng.random()).collect()).collect();
        let layout = GroupLayout { group_id: case, first_native: 0, real: g as u32, size: g as u32 };
        let group = PacketGroup::new(layout, &natives).map_err(|e| e.to_string())?;
        let mut dec = DecoderState::for_layout(Arc::clone(&field), &layout, len);
        let mut sent = 0;
        while !dec.is_complete() {
            sent += 1;
            if sent > 4 * g + 64 {
                return Err(format!("case {case}: no full rank after {sent} packets"));
            }
            let v: Vec<FieldElement> = (0..g).map(|_| field.random(&mut rng)).collect();
            let p: CodedPacket = encode(&field, &group, &v).map_err(|e| e.to_string())?;
            dec.insert(&p).map_err(|e| e.to_string())?;
        }
        let out = dec.solve().map_err(|e| e.to_string())?;
        if out != natives {
            return Err(format!("case {case}: decoded payloads differ (g={g}, len={len}, q={bits})"));
        }
    }
    Ok(format!("{cases} round trips, g <= {max_group}, chunk <= {max_chunk} B"))
}

fn small_sim(protocol: ProtocolKind, seed: u64) -> SimConfig {
    let mut c = SimConfig { protocol, seed, content_size: 256 * 1024, ..SimConfig::default() };
    c.topology.peers = 30;
    c
}

/// Hashes, capacities and the lossless innovation guarantee on small runs.
pub fn simulator_invariants(seed: u64) -> Result<String, String> {
    for protocol in ProtocolKind::ALL {
        let c = small_sim(protocol, seed);
        let r = sim::run(&c).map_err(|e| e.to_string())?;
        let again = sim::run(&c).map_err(|e| e.to_string())?;
        let tag = protocol.name();
        if r != again {
            return Err(format!("{tag}: repeated run differs"));
        }
        if r.finished != r.joined || r.hash_mismatches != 0 {
            return Err(format!("{tag}: {}/{} finished, {} hash mismatches", r.finished, r.joined, r.hash_mismatches));
        }
        if r.max_capacity_overload > 1e-6 {
            return Err(format!("{tag}: capacity overload {}", r.max_capacity_overload));
        }
        if r.max_finish_time < r.avg_finish_time || !(0.0..=1.0).contains(&r.failure_rate) {
            return Err(format!("{tag}: finish-time or failure-rate invariant broken"));
        }
        if protocol == ProtocolKind::Dsnc && r.non_innovative != 0 {
            return Err(format!("DSNC: {} non-innovative receptions", r.non_innovative));
        }
    }
    Ok("TNNC, FNCM and DSNC on 30 peers".into())
}

/// The quick suite run by the command line.
pub fn run_selftest() -> Vec<Check> {
    let mut out = Vec::new();
    for bits in 1..=4 {
        let spec = FieldSpec::with_default_poly(bits).expect("supported width");
        out.push(Check::from(&format!("field axioms GF(2^{bits})"), field_axioms_exhaustive(spec)));
    }
    out.push(Check::from("field axioms GF(2^8) sampled", field_axioms_sampled(FieldSpec::GF256, 100_000, 1)));
    out.push(Check::from("tables GF(2^8)", tables_match_reference(FieldSpec::GF256)));
    for bits in 1..=4u8 {
        let spec = FieldSpec::with_default_poly(bits).expect("supported width");
        for n in (1..=4).filter(|&n| n <= spec.order() as usize) {
            out.push(Check::from(&format!("MDS universe n={n} GF(2^{bits})"), universe_is_mds(n, spec)));
        }
    }
    out.push(Check::from("codec round trips", codec_round_trips(200, 64, 4096, 2)));
    out.push(Check::from("simulator invariants", simulator_invariants(3)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_rank_of_small_matrices() {
        let spec = FieldSpec::with_default_poly(2).unwrap();
        assert_eq!(reference_rank(spec, vec![vec![1, 0], vec![0, 1]]), 2);
        assert_eq!(reference_rank(spec, vec![vec![1, 2], vec![2, 3]]), 1);
        assert_eq!(reference_rank(spec, vec![vec![0, 0]]), 0);
    }

    #[test]
    fn subsets_counts_binomials() {
        let mut n = 0;
        subsets(6, 3, &mut |_| {
            n += 1;
            true
        });
        assert_eq!(n, 20);
    }

    #[test]
    fn a_dependent_set_is_caught() {
        let spec = FieldSpec::with_default_poly(2).unwrap();
        let rows = vec![vec![1, 1, 0], vec![0, 1, 1], vec![1, 0, 1]];
        assert_eq!(reference_rank(spec, rows), 2);
    }

    #[test]
    fn quick_suite_passes() {
        let failed: Vec<Check> = run_selftest().into_iter().filter(|c| !c.passed).collect();
        assert!(failed.is_empty(), "{failed:?}");
    }
}
