use super::{CodingError, PacketGroup};
use crate::gf::{Field, FieldElement, FieldSpec};
use serde::{Deserialize, Serialize};

/// A linear combination of a group's native packets tagged with its
/// coefficients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodedPacket {
    pub group_id: u32,
    pub vector: Vec<FieldElement>,
    pub payload: Vec<u8>,
}

const HEADER_BYTES: usize = 6;

impl CodedPacket {
    pub fn group_size(&self) -> usize {
        self.vector.len()
    }

    /// Bytes taken by the coefficient vector on the wire.
    pub fn vector_bytes(spec: FieldSpec, group_size: usize) -> usize {
        group_size * spec.coefficient_bytes()
    }

    pub fn wire_len(&self, spec: FieldSpec) -> usize {
        HEADER_BYTES + Self::vector_bytes(spec, self.vector.len()) + self.payload.len()
    }

    /// Serializes as `group_id` (u32 LE), `group_size` (u16 LE), one
    /// coefficient per 1 or 2 bytes (LE), then the payload.
    pub fn to_bytes(&self, spec: FieldSpec) -> Result<Vec<u8>, CodingError> {
        let size =
            u16::try_from(self.vector.len()).map_err(|_| CodingError::invalid("group size does not fit in 16 bits"))?;
        let mut out = Vec::with_capacity(self.wire_len(spec));
        out.extend_from_slice(&self.group_id.to_le_bytes());
        out.extend_from_slice(&size.to_le_bytes());
        for c in &self.vector {
            if spec.coefficient_bytes() == 2 {
                out.extend_from_slice(&c.value().to_le_bytes());
            } else {
                out.push(c.value() as u8);
            }
        }
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn from_bytes(field: &Field, bytes: &[u8]) -> Result<Self, CodingError> {
        if bytes.len() < HEADER_BYTES {
            return Err(CodingError::invalid("truncated packet header"));
        }
        let group_id = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes"));
        let size = u16::from_le_bytes(bytes[4..6].try_into().expect("2 bytes")) as usize;
        let width = field.spec().coefficient_bytes();
        let end = HEADER_BYTES + size * width;
        if bytes.len() < end {
            return Err(CodingError::invalid("truncated coding vector"));
        }
        let vector = bytes[HEADER_BYTES..end]
            .chunks_exact(width)
            .map(|c| {
                let v = if width == 2 { u16::from_le_bytes([c[0], c[1]]) } else { u16::from(c[0]) };
                field.element(v.into())
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CodedPacket { group_id, vector, payload: bytes[end..].to_vec() })
    }
}

/// `payload = sum_i vector[i] * group.packets[i]`, symbol by symbol.
pub fn encode(field: &Field, group: &PacketGroup, vector: &[FieldElement]) -> Result<CodedPacket, CodingError> {
    if vector.len() != group.group_size() {
        return Err(CodingError::LengthMismatch { expected: group.group_size(), got: vector.len() });
    }
    let len = group.packet_len();
    field.check_payload_len(len)?;
    let mut payload = vec![0u8; len];
    for (&c, p) in vector.iter().zip(&group.packets) {
        field.axpy(&mut payload, c, p);
    }
    Ok(CodedPacket { group_id: group.group_id(), vector: vector.to_vec(), payload })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::{form_packet_groups, GroupLayout};

    fn group(packets: Vec<Vec<u8>>) -> PacketGroup {
        let n = packets.len() as u32;
        let layout: GroupLayout = form_packet_groups(n, n).unwrap()[0];
        PacketGroup::new(layout, &packets).unwrap()
    }

    fn el(f: &Field, v: u32) -> FieldElement {
        f.element(v).unwrap()
    }

    #[test]
    fn unit_vector_returns_native() {
        let f = Field::new(FieldSpec::GF256);
        let g = group(vec![vec![1, 2, 3], vec![4, 5, 6], vec![7, 8, 9]]);
        let p = encode(&f, &g, &[el(&f, 0), el(&f, 1), el(&f, 0)]).unwrap();
        assert_eq!(p.payload, vec![4, 5, 6]);
    }

    #[test]
    fn zero_vector_gives_zero_payload() {
        let f = Field::new(FieldSpec::GF256);
        let g = group(vec![vec![9, 9], vec![3, 3]]);
        let p = encode(&f, &g, &[FieldElement::ZERO; 2]).unwrap();
        assert_eq!(p.payload, vec![0, 0]);
    }

    #[test]
    fn hand_evaluated_combination() {
        let f = Field::new(FieldSpec::GF256);
        let g = group(vec![vec![0x01], vec![0x01]]);
        let p = encode(&f, &g, &[el(&f, 0x02), el(&f, 0x03)]).unwrap();
        assert_eq!(p.payload, vec![0x01]);
    }

    #[test]
    fn length_mismatch_rejected() {
        let f = Field::new(FieldSpec::GF256);
        let g = group(vec![vec![1], vec![2]]);
        assert!(matches!(encode(&f, &g, &[FieldElement::ONE]), Err(CodingError::LengthMismatch { .. })));
    }

    #[test]
    fn wire_format_round_trip() {
        for bits in [8u8, 16] {
            let f = Field::new(FieldSpec::with_default_poly(bits).unwrap());
            let p = CodedPacket {
                group_id: 0x0102_0304,
                vector: vec![el(&f, 1), el(&f, 200), el(&f, 7)],
                payload: vec![10, 20, 30, 40],
            };
            let bytes = p.to_bytes(f.spec()).unwrap();
            assert_eq!(&bytes[..6], &[4, 3, 2, 1, 3, 0]);
            assert_eq!(bytes.len(), p.wire_len(f.spec()));
            assert_eq!(bytes.len(), 6 + 3 * usize::from(bits / 8) + 4);
            assert_eq!(CodedPacket::from_bytes(&f, &bytes).unwrap(), p);
        }
    }
}
