//! Flat random network coding: one generation per segment, and every peer
//! forwards fresh random combinations of what it holds.

use super::engine::{CodedKind, Payload, Planned, Protocol, Transfer, World};
use super::metrics::Carried;
use crate::coding::{DecoderState, GroupLayout};
use crate::overlay::NodeId;
use std::collections::BTreeMap;
use std::sync::Arc;

pub(crate) struct Fncm {
    /// Decoder per node and segment; the server's are full.
    dec: Vec<Vec<DecoderState>>,
    inflight: Vec<Vec<u32>>,
    complete: Vec<u32>,
    /// `(receiver, sender, segment)` mapped to the sender's rank when the
    /// receiver last got a useless packet from it; the sender is skipped for
    /// that receiver until its rank grows.
    useless: BTreeMap<(NodeId, NodeId, u32), usize>,
}

impl Fncm {
    pub fn new(w: &World) -> Fncm {
        let plan = w.plan;
        let len = w.cfg.payload_len();
        let layouts: Vec<GroupLayout> = (0..plan.segment_count)
            .map(|s| GroupLayout {
                group_id: s,
                first_native: s * plan.chunks_per_segment,
                real: plan.chunks_in_segment(s),
                size: plan.chunks_per_segment,
            })
            .collect();
        let fresh: Vec<DecoderState> =
            layouts.iter().map(|l| DecoderState::for_layout(Arc::clone(&w.field), l, len)).collect();
        let mut dec = vec![fresh; w.nodes.len()];
        for (s, l) in layouts.iter().enumerate() {
            for slot in 0..l.real as usize {
                let chunk = l.first_native as usize + slot;
                dec[0][s].insert_native(slot, w.content[chunk].clone()).expect("native fits its segment");
            }
        }
        Fncm {
            dec,
            inflight: vec![vec![0; plan.segment_count as usize]; w.nodes.len()],
            complete: vec![0; w.nodes.len()],
            useless: BTreeMap::new(),
        }
    }

    /// Earliest segment `src` can usefully feed to `y`.
    fn pick_segment(&self, src: NodeId, y: NodeId) -> Option<u32> {
        let (ds, dy) = (&self.dec[src as usize], &self.dec[y as usize]);
        (0..ds.len()).map(|s| s as u32).find(|&s| {
            let (a, b) = (&ds[s as usize], &dy[s as usize]);
            a.rank() > 0
                && !b.is_complete()
                && b.rank() + (self.inflight[y as usize][s as usize] as usize) < b.group_size()
                && self.useless.get(&(y, src, s)).is_none_or(|&r| a.rank() > r)
        })
    }
}

impl Protocol for Fncm {
    fn peer_joined(&mut self, _w: &mut World, _p: NodeId) {}

    fn peer_left(&mut self, _w: &mut World, _p: NodeId) {}

    fn next_upload(&mut self, w: &mut World, src: NodeId) -> Option<Planned> {
        let ns = w.neighbours(src).to_vec();
        let n = ns.len();
        let start = w.nodes[src as usize].rr;
        for k in 0..n {
            let y = ns[(start + k) % n];
            if !w.can_download(y) {
                continue;
            }
            let Some(s) = self.pick_segment(src, y) else { continue };
            let packet = self.dec[src as usize][s as usize].random_combination(&mut w.rng)?;
            self.inflight[y as usize][s as usize] += 1;
            w.nodes[src as usize].rr = (start + k + 1) % n;
            return Some(Planned {
                dst: y,
                payload: Payload::Coded { generation: s, packet, id: None, kind: CodedKind::Flat, attempts: 0 },
            });
        }
        None
    }

    fn cancelled(&mut self, _w: &mut World, t: &Transfer) {
        if let Payload::Coded { generation, .. } = t.payload {
            self.inflight[t.dst as usize][generation as usize] -= 1;
        }
    }

    fn delivered(&mut self, w: &mut World, t: Transfer, lost: bool) {
        let Payload::Coded { generation: s, ref packet, .. } = t.payload else {
            unreachable!("flat coding carries coded packets only")
        };
        let (y, si) = (t.dst, s as usize);
        self.inflight[y as usize][si] -= 1;
        let carried = Carried::Vector { generation: s, vector: &packet.vector, coded: true };
        if lost {
            w.record(&t, "coded", carried, None);
            return;
        }
        let innovative = self.dec[y as usize][si].insert(packet).expect("packet matches its segment");
        w.record(&t, "coded", carried, Some(innovative));
        if !innovative {
            let r = self.dec[t.src as usize][si].rank();
            self.useless.insert((y, t.src, s), r);
            return;
        }
        if self.dec[y as usize][si].is_complete() {
            w.segment_completed(y, s);
            self.complete[y as usize] += 1;
            if self.complete[y as usize] == w.plan.segment_count {
                let mut chunks = Vec::with_capacity(w.content.len());
                for d in &self.dec[y as usize] {
                    chunks.extend(d.solve().expect("complete segment solves"));
                }
                w.finish_peer(y, &chunks);
            }
        }
    }
}
