use super::{CodedPacket, CodingError, GroupLayout};
use crate::gf::{Field, FieldElement};
use std::sync::Arc;

#[derive(Debug, Clone)]
struct Row {
    pivot: usize,
    vector: Vec<FieldElement>,
    payload: Vec<u8>,
}

/// Progressive Gauss-Jordan decoder for one generation.
///
/// Rows are kept in reduced row-echelon form sorted by pivot column, so a
/// full-rank state holds the identity and the payloads are the natives.
/// A payload length of zero turns the decoder into a pure rank tracker.
#[derive(Debug, Clone)]
pub struct DecoderState {
    field: Arc<Field>,
    group_id: u32,
    group_size: usize,
    payload_len: usize,
    rows: Vec<Row>,
    /// `pivot_row[c]` is the row whose pivot is column `c`.
    pivot_row: Vec<Option<usize>>,
}

impl DecoderState {
    pub fn new(field: Arc<Field>, group_id: u32, group_size: usize, payload_len: usize) -> Self {
        DecoderState {
            field,
            group_id,
            group_size,
            payload_len,
            rows: Vec::with_capacity(group_size),
            pivot_row: vec![None; group_size],
        }
    }

    /// Decoder for a group whose padding slots are already known to be zero.
    pub fn for_layout(field: Arc<Field>, layout: &GroupLayout, payload_len: usize) -> Self {
        let mut d = DecoderState::new(field, layout.group_id, layout.size as usize, payload_len);
        for slot in layout.real as usize..layout.size as usize {
            d.insert_native(slot, vec![0; payload_len]).expect("fresh decoder accepts padding");
        }
        d
    }

    pub fn group_id(&self) -> u32 {
        self.group_id
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    pub fn is_complete(&self) -> bool {
        self.rows.len() == self.group_size
    }

    pub fn has_pivot(&self, column: usize) -> bool {
        self.pivot_row[column].is_some()
    }

    /// Inserts native packet `slot` as the unit vector `e_slot`.
    pub fn insert_native(&mut self, slot: usize, payload: Vec<u8>) -> Result<bool, CodingError> {
        let mut vector = vec![FieldElement::ZERO; self.group_size];
        *vector.get_mut(slot).ok_or(CodingError::LengthMismatch { expected: self.group_size, got: slot + 1 })? =
            FieldElement::ONE;
        self.insert_parts(vector, payload)
    }

    pub fn insert(&mut self, packet: &CodedPacket) -> Result<bool, CodingError> {
        if packet.group_id != self.group_id {
            return Err(CodingError::GroupMismatch { expected: self.group_id, got: packet.group_id });
        }
        self.insert_parts(packet.vector.clone(), packet.payload.clone())
    }

    /// Inserts a bare coefficient vector into a rank-only tracker.
    pub fn insert_vector(&mut self, vector: Vec<FieldElement>) -> Result<bool, CodingError> {
        if self.payload_len > 0 {
            return Err(CodingError::invalid("bare vectors only fit rank-only trackers"));
        }
        self.insert_parts(vector, Vec::new())
    }

    /// True iff `vector` lies outside the current span.
    pub fn is_innovative(&self, vector: &[FieldElement]) -> bool {
        let mut v = vector.to_vec();
        self.reduce(&mut v, None);
        v.iter().any(|c| !c.is_zero())
    }

    fn reduce(&self, v: &mut [FieldElement], mut payload: Option<&mut [u8]>) {
        let f = &self.field;
        for row in &self.rows {
            let c = v[row.pivot];
            if c.is_zero() {
                continue;
            }
            for (x, &y) in v.iter_mut().zip(&row.vector) {
                *x = f.add(*x, f.mul(c, y));
            }
            if let Some(p) = payload.as_deref_mut() {
                f.axpy(p, c, &row.payload);
            }
        }
    }

    fn insert_parts(&mut self, mut vector: Vec<FieldElement>, mut payload: Vec<u8>) -> Result<bool, CodingError> {
        if vector.len() != self.group_size {
            return Err(CodingError::LengthMismatch { expected: self.group_size, got: vector.len() });
        }
        let track_payload = self.payload_len > 0;
        if track_payload && payload.len() != self.payload_len {
            return Err(CodingError::LengthMismatch { expected: self.payload_len, got: payload.len() });
        }
        if !track_payload {
            payload.clear();
        }
        self.reduce(&mut vector, track_payload.then_some(payload.as_mut_slice()));
        let Some(pivot) = vector.iter().position(|c| !c.is_zero()) else {
            return Ok(false);
        };
        let f = Arc::clone(&self.field);
        let s = f.inv(vector[pivot])?;
        for x in vector.iter_mut() {
            *x = f.mul(*x, s);
        }
        if track_payload {
            f.scale(&mut payload, s);
        }
        for row in &mut self.rows {
            let c = row.vector[pivot];
            if c.is_zero() {
                continue;
            }
            for (x, &y) in row.vector.iter_mut().zip(&vector) {
                *x = f.add(*x, f.mul(c, y));
            }
            if track_payload {
                f.axpy(&mut row.payload, c, &payload);
            }
        }
        let at = self.rows.partition_point(|r| r.pivot < pivot);
        self.rows.insert(at, Row { pivot, vector, payload });
        for (i, row) in self.rows.iter().enumerate().skip(at) {
            self.pivot_row[row.pivot] = Some(i);
        }
        Ok(true)
    }

    /// A uniformly random nonzero combination of the stored rows, or `None`
    /// while the state is empty.
    pub fn random_combination<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Option<CodedPacket> {
        if self.rows.is_empty() {
            return None;
        }
        let f = &self.field;
        let coeffs: Vec<FieldElement> = loop {
            let c: Vec<FieldElement> = self.rows.iter().map(|_| f.random(rng)).collect();
            if c.iter().any(|x| !x.is_zero()) {
                break c;
            }
        };
        let mut vector = vec![FieldElement::ZERO; self.group_size];
        let mut payload = vec![0u8; self.payload_len];
        for (row, &c) in self.rows.iter().zip(&coeffs) {
            for (x, &y) in vector.iter_mut().zip(&row.vector) {
                *x = f.add(*x, f.mul(c, y));
            }
            if self.payload_len > 0 {
                f.axpy(&mut payload, c, &row.payload);
            }
        }
        Some(CodedPacket { group_id: self.group_id, vector, payload })
    }

    /// The group's native packets, padding included.
    pub fn solve(&self) -> Result<Vec<Vec<u8>>, CodingError> {
        if !self.is_complete() {
            return Err(CodingError::NotReady { gap: self.group_size - self.rank() });
        }
        Ok(self.rows.iter().map(|r| r.payload.clone()).collect())
    }

    /// Checks the reduced row-echelon invariants; used by tests.
    pub fn is_rref(&self) -> bool {
        let pivots_sorted = self.rows.windows(2).all(|w| w[0].pivot < w[1].pivot);
        let pivots_clean = self.rows.iter().all(|r| {
            r.vector[r.pivot] == FieldElement::ONE
                && r.vector[..r.pivot].iter().all(|c| c.is_zero())
                && self.rows.iter().all(|o| o.pivot == r.pivot || o.vector[r.pivot].is_zero())
        });
        pivots_sorted && pivots_clean
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::{encode, form_packet_groups, PacketGroup};
    use crate::gf::FieldSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gf() -> Arc<Field> {
        Arc::new(Field::new(FieldSpec::GF256))
    }

    fn packet(f: &Field, v: &[u32]) -> CodedPacket {
        CodedPacket { group_id: 0, vector: v.iter().map(|&x| f.element(x).unwrap()).collect(), payload: vec![] }
    }

    #[test]
    fn first_packet_innovative_duplicate_not() {
        let f = gf();
        let mut d = DecoderState::new(f.clone(), 0, 3, 0);
        let p = packet(&f, &[5, 0, 9]);
        assert!(d.insert(&p).unwrap());
        assert_eq!(d.rank(), 1);
        assert!(!d.insert(&p).unwrap());
        assert_eq!(d.rank(), 1);
    }

    #[test]
    fn span_membership() {
        let f = gf();
        let mut d = DecoderState::new(f.clone(), 0, 3, 0);
        d.insert(&packet(&f, &[1, 0, 0])).unwrap();
        d.insert(&packet(&f, &[0, 1, 0])).unwrap();
        assert!(!d.insert(&packet(&f, &[1, 1, 0])).unwrap());
        assert!(d.insert(&packet(&f, &[0, 0, 1])).unwrap());
        assert!(d.is_complete());
    }

    #[test]
    fn group_mismatch_rejected() {
        let f = gf();
        let mut d = DecoderState::new(f.clone(), 4, 2, 0);
        assert!(matches!(d.insert(&packet(&f, &[1, 0])), Err(CodingError::GroupMismatch { .. })));
    }

    #[test]
    fn not_ready_reports_gap() {
        let f = gf();
        let mut d = DecoderState::new(f.clone(), 0, 3, 0);
        d.insert(&packet(&f, &[1, 2, 3])).unwrap();
        d.insert(&packet(&f, &[0, 1, 3])).unwrap();
        assert_eq!(d.solve(), Err(CodingError::NotReady { gap: 1 }));
    }

    #[test]
    fn identity_decode() {
        let f = gf();
        let mut d = DecoderState::new(f, 0, 3, 2);
        for j in (0..3).rev() {
            d.insert_native(j, vec![j as u8, 7]).unwrap();
        }
        assert_eq!(d.solve().unwrap(), vec![vec![0, 7], vec![1, 7], vec![2, 7]]);
    }

    #[test]
    fn random_round_trip_keeps_rref() {
        let f = gf();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(1..12usize);
            let natives: Vec<Vec<u8>> = (0..n).map(|_| (0..16).map(|_| rng.random()).collect()).collect();
            let layout = form_packet_groups(n as u32, n as u32).unwrap()[0];
            let group = PacketGroup::new(layout, &natives).unwrap();
            let mut d = DecoderState::new(f.clone(), 0, n, 16);
            let mut last = 0;
            while !d.is_complete() {
                let v: Vec<FieldElement> = (0..n).map(|_| f.random(&mut rng)).collect();
                d.insert(&encode(&f, &group, &v).unwrap()).unwrap();
                assert!(d.is_rref());
                assert!(d.rank() >= last && d.rank() <= last + 1);
                last = d.rank();
            }
            assert_eq!(d.solve().unwrap(), natives);
        }
    }

    #[test]
    fn random_combination_stays_in_span() {
        let f = gf();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut d = DecoderState::new(f.clone(), 0, 4, 2);
        assert!(d.random_combination(&mut rng).is_none());
        d.insert_native(1, vec![5, 6]).unwrap();
        d.insert_native(3, vec![7, 8]).unwrap();
        for _ in 0..20 {
            let p = d.random_combination(&mut rng).unwrap();
            assert!(p.vector.iter().any(|c| !c.is_zero()));
            assert!(!d.is_innovative(&p.vector));
            assert!(p.vector[0].is_zero() && p.vector[2].is_zero());
            let mut expect = vec![0u8; 2];
            f.axpy(&mut expect, p.vector[1], &[5, 6]);
            f.axpy(&mut expect, p.vector[3], &[7, 8]);
            assert_eq!(p.payload, expect);
        }
    }

    #[test]
    fn padding_is_preloaded() {
        let f = gf();
        let layout = form_packet_groups(3, 4).unwrap()[0];
        let d = DecoderState::for_layout(f, &layout, 4);
        assert_eq!(d.rank(), 1);
        assert!(d.has_pivot(3) && !d.has_pivot(0));
    }
}
