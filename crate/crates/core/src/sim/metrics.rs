//! Per-run accounting and the final report.

use crate::coding::DecoderState;
use crate::gf::{Field, FieldElement};
use crate::overlay::NodeId;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

/// Packets sent over a link divided by the distinct information they carried.
/// An unused link has stress zero.
pub fn link_stress(packets: u64, distinct: u64) -> f64 {
    if distinct == 0 {
        0.0
    } else {
        packets as f64 / distinct as f64
    }
}

/// Counts packets on one link and the information they carry: distinct
/// chunk ids for plain chunks, the rank per generation for coded packets.
#[derive(Debug, Clone, Default)]
pub struct LinkTracker {
    packets: u64,
    chunks: BTreeSet<u32>,
    generations: BTreeMap<u32, DecoderState>,
}

impl LinkTracker {
    pub fn record_chunk(&mut self, chunk: u32) {
        self.packets += 1;
        self.chunks.insert(chunk);
    }

    pub fn record_vector(&mut self, field: &Arc<Field>, generation: u32, vector: &[FieldElement]) {
        self.packets += 1;
        let tracker = self
            .generations
            .entry(generation)
            .or_insert_with(|| DecoderState::new(Arc::clone(field), generation, vector.len(), 0));
        tracker.insert_vector(vector.to_vec()).expect("rank-only tracker of matching width");
    }

    pub fn packets(&self) -> u64 {
        self.packets
    }

    pub fn distinct(&self) -> u64 {
        self.chunks.len() as u64 + self.generations.values().map(|d| d.rank() as u64).sum::<u64>()
    }

    pub fn stress(&self) -> f64 {
        link_stress(self.packets, self.distinct())
    }
}

/// One link of the final report. The access link is `a == b == u32::MAX`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub a: NodeId,
    pub b: NodeId,
    pub packets: u64,
    pub distinct: u64,
    pub stress: f64,
}

pub const ACCESS_LINK: NodeId = NodeId::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub protocol: String,
    pub peers: u32,
    pub seed: u64,
    /// Bytes uploaded by peers per second of run time.
    pub throughput: f64,
    pub avg_finish_time: f64,
    pub max_finish_time: f64,
    pub failure_rate: f64,
    pub mean_link_stress: f64,
    pub max_link_stress: f64,
    pub access_link_stress: f64,
    /// Coding-vector bytes over all coded packets sent.
    pub message_overhead: u64,
    pub overhead_per_packet: u64,
    pub access_link_traffic: u64,
    pub peer_uploaded_bytes: u64,
    pub server_uploaded_bytes: u64,
    pub makespan: f64,
    pub joined: u32,
    pub finished: u32,
    pub unfinished: u32,
    /// Mean share of a peer's download time spent on its k-th completed segment.
    pub per_segment_progress: Vec<f64>,
    pub transmissions: u64,
    pub lost: u64,
    pub coded_packets: u64,
    pub non_innovative: u64,
    pub fallback_vectors: u64,
    pub hash_mismatches: u32,
    pub native_sends: u64,
    pub groups_formed: u32,
    pub max_capacity_overload: f64,
    pub horizon_exceeded: bool,
    pub stalled: bool,
    pub events: u64,
    pub links: Vec<LinkRecord>,
}

/// Accumulates transfer outcomes during a run.
#[derive(Debug)]
pub(crate) struct Collector {
    field: Arc<Field>,
    pub links: BTreeMap<(NodeId, NodeId), LinkTracker>,
    pub access: LinkTracker,
    pub access_bytes: u64,
    pub transmissions: u64,
    pub lost: u64,
    pub coded_packets: u64,
    pub non_innovative: u64,
    pub fallback_vectors: u64,
    pub native_sends: u64,
    pub max_overload: f64,
    pub trace: Option<Vec<String>>,
}

/// What one completed transfer carried, for link accounting.
pub(crate) enum Carried<'a> {
    Chunk(u32),
    Vector { generation: u32, vector: &'a [FieldElement], coded: bool },
}

impl Collector {
    pub fn new(field: Arc<Field>, trace: bool) -> Self {
        Collector {
            field,
            links: BTreeMap::new(),
            access: LinkTracker::default(),
            access_bytes: 0,
            transmissions: 0,
            lost: 0,
            coded_packets: 0,
            non_innovative: 0,
            fallback_vectors: 0,
            native_sends: 0,
            max_overload: 0.0,
            trace: trace.then(Vec::new),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &mut self,
        time: f64,
        kind: &str,
        src: NodeId,
        dst: NodeId,
        crosses: bool,
        bytes: u64,
        carried: Carried<'_>,
        outcome: Option<bool>,
    ) {
        self.transmissions += 1;
        if outcome.is_none() {
            self.lost += 1;
        }
        if outcome == Some(false) {
            self.non_innovative += 1;
        }
        if crosses {
            self.access_bytes += bytes;
        }
        let key = (src.min(dst), src.max(dst));
        let group_id = match carried {
            Carried::Chunk(c) => {
                self.links.entry(key).or_default().record_chunk(c);
                if crosses {
                    self.access.record_chunk(c);
                }
                c
            }
            Carried::Vector { generation, vector, coded } => {
                if coded {
                    self.coded_packets += 1;
                }
                self.links.entry(key).or_default().record_vector(&self.field, generation, vector);
                if crosses {
                    self.access.record_vector(&self.field, generation, vector);
                }
                generation
            }
        };
        if let Some(t) = &mut self.trace {
            let flag = match outcome {
                Some(true) => "1",
                Some(false) => "0",
                None => "-",
            };
            t.push(format!("{time:.6} {kind} {src} {dst} {group_id} {bytes} {flag}"));
        }
    }

    pub fn link_records(&self) -> Vec<LinkRecord> {
        let mut out: Vec<LinkRecord> = self
            .links
            .iter()
            .map(|(&(a, b), t)| LinkRecord { a, b, packets: t.packets(), distinct: t.distinct(), stress: t.stress() })
            .collect();
        if self.access.packets() > 0 {
            out.push(LinkRecord {
                a: ACCESS_LINK,
                b: ACCESS_LINK,
                packets: self.access.packets(),
                distinct: self.access.distinct(),
                stress: self.access.stress(),
            });
        }
        out
    }
}

/// Mean share of download time per completed segment, by completion order.
/// `peers` holds `(join, segment completion times)` for finished peers.
pub(crate) fn segment_progress(peers: &[(f64, Vec<f64>)], segments: usize) -> Vec<f64> {
    let mut sums = vec![0.0; segments];
    let mut count = 0usize;
    for (join, done) in peers {
        let mut times = done.clone();
        times.sort_by(f64::total_cmp);
        let total = times.last().map_or(0.0, |&t| t - join);
        if total <= 0.0 || times.len() != segments {
            continue;
        }
        let mut prev = *join;
        for (k, &t) in times.iter().enumerate() {
            sums[k] += (t - prev) / total;
            prev = t;
        }
        count += 1;
    }
    if count > 0 {
        for s in &mut sums {
            *s /= count as f64;
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gf::FieldSpec;

    #[test]
    fn three_copies_of_one_packet() {
        let mut t = LinkTracker::default();
        for _ in 0..3 {
            t.record_chunk(7);
        }
        assert_eq!((t.packets(), t.distinct()), (3, 1));
        assert_eq!(t.stress(), 3.0);
        assert_eq!(link_stress(3, 1), 3.0);
    }

    #[test]
    fn coded_distinct_is_rank() {
        let f = Arc::new(Field::new(FieldSpec::default()));
        let e = |v: u32| f.element(v).unwrap();
        let mut t = LinkTracker::default();
        t.record_vector(&f, 0, &[e(1), e(0)]);
        t.record_vector(&f, 0, &[e(2), e(0)]);
        t.record_vector(&f, 0, &[e(0), e(1)]);
        t.record_vector(&f, 1, &[e(1), e(1)]);
        assert_eq!((t.packets(), t.distinct()), (4, 3));
        assert!((t.stress() - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(LinkTracker::default().stress(), 0.0);
    }

    #[test]
    fn progress_shares_sum_to_one() {
        let p = segment_progress(&[(1.0, vec![3.0, 5.0]), (0.0, vec![4.0, 1.0])], 2);
        assert!((p[0] - (0.5 + 0.25) / 2.0).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trace_line_format() {
        let f = Arc::new(Field::new(FieldSpec::default()));
        let mut c = Collector::new(f, true);
        c.record(1.5, "chunk", 0, 3, true, 100, Carried::Chunk(2), Some(true));
        c.record(2.0, "chunk", 3, 0, false, 100, Carried::Chunk(2), None);
        assert_eq!(c.trace.as_ref().unwrap()[0], "1.500000 chunk 0 3 2 100 1");
        assert_eq!(c.trace.as_ref().unwrap()[1], "2.000000 chunk 3 0 2 100 -");
        assert_eq!(c.access_bytes, 100);
        assert_eq!(c.lost, 1);
        assert_eq!(c.link_records()[0].stress, 2.0);
    }
}
