//! Content segmentation and packet-group formation.

use super::CodingError;
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Upper bound on chunks per segment unless the caller overrides it.
pub const DEFAULT_SEGMENT_CAP: u32 = 256;

/// How a piece of content is cut into segments of fixed-size chunks.
///
/// Every segment spans `chunks_per_segment` chunk slots. Slots past the end of
/// the content are padding and carry no data; the final real chunk is
/// zero-padded up to `chunk_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub content_size: u64,
    pub chunk_size: u32,
    pub chunks_per_segment: u32,
    pub segment_count: u32,
    /// Number of chunks that carry content bytes.
    pub chunk_count: u32,
}

pub fn segment_content(
    content_size: u64,
    chunk_size: u32,
    chunks_per_segment: u32,
) -> Result<SegmentPlan, CodingError> {
    segment_content_capped(content_size, chunk_size, chunks_per_segment, DEFAULT_SEGMENT_CAP)
}

pub fn segment_content_capped(
    content_size: u64,
    chunk_size: u32,
    chunks_per_segment: u32,
    cap: u32,
) -> Result<SegmentPlan, CodingError> {
    if content_size == 0 {
        return Err(CodingError::invalid("content size must be positive"));
    }
    if chunk_size == 0 {
        return Err(CodingError::invalid("chunk size must be positive"));
    }
    if chunks_per_segment == 0 || chunks_per_segment > cap {
        return Err(CodingError::invalid(format!("chunks per segment must be in 1..={cap}, got {chunks_per_segment}")));
    }
    let chunks = content_size.div_ceil(u64::from(chunk_size));
    let chunk_count = u32::try_from(chunks).map_err(|_| CodingError::invalid("content needs more than 2^32 chunks"))?;
    let segment_count = chunk_count.div_ceil(chunks_per_segment);
    Ok(SegmentPlan { content_size, chunk_size, chunks_per_segment, segment_count, chunk_count })
}

impl SegmentPlan {
    /// Global indices of the real chunks in segment `s`.
    pub fn chunk_range(&self, s: u32) -> Range<u32> {
        let start = s * self.chunks_per_segment;
        let end = (start + self.chunks_per_segment).min(self.chunk_count);
        start..end.max(start)
    }

    pub fn chunks_in_segment(&self, s: u32) -> u32 {
        let r = self.chunk_range(s);
        r.end - r.start
    }

    pub fn segment_of(&self, chunk: u32) -> u32 {
        chunk / self.chunks_per_segment
    }

    /// Zero bytes appended to the final chunk.
    pub fn tail_padding(&self) -> u64 {
        u64::from(self.chunk_count) * u64::from(self.chunk_size) - self.content_size
    }

    /// Cuts `content` into `chunk_count` chunks, zero-padding the last.
    pub fn split(&self, content: &[u8]) -> Result<Vec<Vec<u8>>, CodingError> {
        if content.len() as u64 != self.content_size {
            return Err(CodingError::invalid(format!(
                "content has {} bytes, plan expects {}",
                content.len(),
                self.content_size
            )));
        }
        let size = self.chunk_size as usize;
        Ok(content
            .chunks(size)
            .map(|c| {
                let mut chunk = c.to_vec();
                chunk.resize(size, 0);
                chunk
            })
            .collect())
    }

    /// Inverse of [`SegmentPlan::split`]; drops the tail padding.
    pub fn reassemble(&self, chunks: &[Vec<u8>]) -> Vec<u8> {
        let mut out: Vec<u8> = chunks.iter().flatten().copied().collect();
        out.truncate(self.content_size as usize);
        out
    }
}

/// Placement of one packet group inside a run of native packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLayout {
    pub group_id: u32,
    /// Index of the first native packet of this group.
    pub first_native: u32,
    /// Real (non-padding) packets; the remaining `size - real` slots are zero.
    pub real: u32,
    pub size: u32,
}

impl GroupLayout {
    pub fn padding(&self) -> u32 {
        self.size - self.real
    }

    pub fn is_padding(&self, slot: usize) -> bool {
        slot as u32 >= self.real
    }

    pub fn natives(&self) -> Range<u32> {
        self.first_native..self.first_native + self.real
    }
}

/// Cuts `n_native` packets into groups of exactly `group_size` slots. The last
/// group is topped up with zero packets when `group_size` does not divide
/// `n_native`; an exact fit adds no extra group.
pub fn form_packet_groups(n_native: u32, group_size: u32) -> Result<Vec<GroupLayout>, CodingError> {
    if n_native == 0 || group_size == 0 {
        return Err(CodingError::invalid("packet count and group size must be positive"));
    }
    let groups = n_native.div_ceil(group_size);
    Ok((0..groups)
        .map(|g| {
            let first = g * group_size;
            GroupLayout { group_id: g, first_native: first, real: (n_native - first).min(group_size), size: group_size }
        })
        .collect())
}

/// The native packets of one group, padding included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketGroup {
    pub layout: GroupLayout,
    pub packets: Vec<Vec<u8>>,
}

impl PacketGroup {
    /// Builds the group from the full native list; `natives[layout.natives()]`
    /// must exist and share one length.
    pub fn new(layout: GroupLayout, natives: &[Vec<u8>]) -> Result<Self, CodingError> {
        let range = layout.natives();
        let real = natives
            .get(range.start as usize..range.end as usize)
            .ok_or_else(|| CodingError::invalid("group refers to missing native packets"))?;
        let len = real.first().map_or(0, Vec::len);
        if real.iter().any(|p| p.len() != len) {
            return Err(CodingError::invalid("native packets differ in length"));
        }
        let mut packets = real.to_vec();
        packets.resize(layout.size as usize, vec![0; len]);
        Ok(PacketGroup { layout, packets })
    }

    pub fn group_id(&self) -> u32 {
        self.layout.group_id
    }

    pub fn group_size(&self) -> usize {
        self.layout.size as usize
    }

    pub fn packet_len(&self) -> usize {
        self.packets.first().map_or(0, Vec::len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KIB: u64 = 1024;
    const MIB: u64 = 1024 * 1024;

    #[test]
    fn one_mebibyte_is_one_segment() {
        let plan = segment_content(MIB, 16 * KIB as u32, 64).unwrap();
        assert_eq!(plan.segment_count, 1);
        assert_eq!(plan.chunk_count, 64);
        assert_eq!(plan.tail_padding(), 0);
    }

    #[test]
    fn single_byte_content() {
        let plan = segment_content(1, 16 * KIB as u32, 64).unwrap();
        assert_eq!(plan.segment_count, 1);
        assert_eq!(plan.chunk_count, 1);
        assert_eq!(plan.tail_padding(), 16 * KIB - 1);
        let chunks = plan.split(&[0xAB]).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0][0], 0xAB);
        assert!(chunks[0][1..].iter().all(|&b| b == 0));
        assert_eq!(plan.reassemble(&chunks), vec![0xAB]);
    }

    #[test]
    fn large_content_segment_count() {
        let content = 122_000_000u64;
        let plan = segment_content(content, 32 * KIB as u32, 128).unwrap();
        assert_eq!(u64::from(plan.segment_count), content.div_ceil(4 * MIB));
        assert_eq!(plan.segment_count, 30);
        let covered = u64::from(plan.segment_count) * u64::from(plan.chunks_per_segment) * u64::from(plan.chunk_size);
        assert!(covered >= content);
    }

    #[test]
    fn rejects_zero_sizes_and_cap() {
        assert!(segment_content(0, 16, 4).is_err());
        assert!(segment_content(10, 0, 4).is_err());
        assert!(segment_content(10, 16, 0).is_err());
        assert!(segment_content(10, 16, 257).is_err());
        assert!(segment_content(10, 16, 256).is_ok());
    }

    #[test]
    fn last_segment_may_be_short() {
        let plan = segment_content(10 * 100, 100, 4).unwrap();
        assert_eq!(plan.segment_count, 3);
        assert_eq!(plan.chunks_in_segment(0), 4);
        assert_eq!(plan.chunks_in_segment(2), 2);
        assert_eq!(plan.segment_of(9), 2);
    }

    #[test]
    fn groups_with_padding() {
        let groups = form_packet_groups(10, 4).unwrap();
        assert_eq!(groups.len(), 3);
        assert_eq!(groups[2].real, 2);
        assert_eq!(groups[2].padding(), 2);
        assert!(groups.iter().all(|g| g.size == 4));
    }

    #[test]
    fn groups_exact_fit() {
        let groups = form_packet_groups(8, 4).unwrap();
        assert_eq!(groups.len(), 2);
        assert!(groups.iter().all(|g| g.padding() == 0));
    }

    #[test]
    fn group_larger_than_content() {
        let groups = form_packet_groups(3, 4).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].real, 3);
        assert_eq!(groups[0].padding(), 1);
        let groups = form_packet_groups(1, 4).unwrap();
        assert_eq!((groups[0].real, groups[0].padding()), (1, 3));
    }

    #[test]
    fn packet_group_pads_with_zeros() {
        let natives: Vec<Vec<u8>> = (0..3u8).map(|i| vec![i + 1; 5]).collect();
        let layout = form_packet_groups(3, 4).unwrap()[0];
        let group = PacketGroup::new(layout, &natives).unwrap();
        assert_eq!(group.packets.len(), 4);
        assert_eq!(group.packets[3], vec![0; 5]);
        assert!(layout.is_padding(3) && !layout.is_padding(2));
    }
}
