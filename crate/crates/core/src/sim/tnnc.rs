//! Chunk exchange with local-rarest-first selection.

use super::engine::{EventKind, Payload, Planned, Protocol, Transfer, World};
use super::metrics::Carried;
use super::TnncMode;
use crate::overlay::{NodeId, SERVER};
use fixedbitset::FixedBitSet;
use rand::Rng;
use std::collections::VecDeque;
use std::sync::Arc;

/// Picks the candidate with the smallest neighbour count, ties uniformly at
/// random. `counts[c]` is the number of neighbours holding chunk `c`.
pub fn rarest_first<R, I>(candidates: I, counts: &[u32], rng: &mut R) -> Option<u32>
where
    R: Rng + ?Sized,
    I: IntoIterator<Item = u32>,
{
    let mut best: Option<(u32, u32)> = None;
    let mut ties = 0u32;
    for c in candidates {
        let n = counts[c as usize];
        match best {
            Some((_, b)) if n > b => {}
            Some((_, b)) if n == b => {
                ties += 1;
                if rng.random_range(0..ties) == 0 {
                    best = Some((c, n));
                }
            }
            _ => {
                best = Some((c, n));
                ties = 1;
            }
        }
    }
    best.map(|(c, _)| c)
}

pub(crate) struct Tnnc {
    have: Vec<FixedBitSet>,
    store: Vec<Vec<Option<Arc<[u8]>>>>,
    inflight: Vec<FixedBitSet>,
    /// `avail[p][c]`: neighbours of `p` holding chunk `c`.
    avail: Vec<Vec<u32>>,
    received: Vec<usize>,
    seg_left: Vec<Vec<u32>>,
    mode: TnncMode,
    parent: Vec<Option<NodeId>>,
    depth: Vec<u32>,
}

impl Tnnc {
    pub fn new(w: &World) -> Tnnc {
        let nodes = w.nodes.len();
        let chunks = w.plan.chunk_count as usize;
        let mut have = vec![FixedBitSet::with_capacity(chunks); nodes];
        have[0].insert_range(..);
        let mut store = vec![vec![None; chunks]; nodes];
        store[0] = w.content[..chunks].iter().map(|c| Some(Arc::from(c.as_slice()))).collect();
        let mut avail = vec![vec![0u32; chunks]; nodes];
        for &v in w.neighbours(SERVER) {
            avail[v as usize].iter_mut().for_each(|a| *a += 1);
        }
        let seg_left = vec![(0..w.plan.segment_count).map(|s| w.plan.chunks_in_segment(s)).collect(); nodes];
        Tnnc {
            have,
            store,
            inflight: vec![FixedBitSet::with_capacity(chunks); nodes],
            avail,
            received: vec![0; nodes],
            seg_left,
            mode: w.cfg.tnnc_mode,
            parent: vec![None; nodes],
            depth: vec![0; nodes],
        }
    }

    fn adjust(&mut self, p: NodeId, holder: NodeId, up: bool) {
        let (have, avail) = (&self.have[holder as usize], &mut self.avail[p as usize]);
        for c in have.ones() {
            if up {
                avail[c] += 1;
            } else {
                avail[c] -= 1;
            }
        }
    }

    /// Picks the shallowest alive neighbour already in the tree as parent.
    fn attach(&mut self, w: &mut World, p: NodeId) {
        let best = w
            .neighbours(p)
            .iter()
            .copied()
            .filter(|&v| v == SERVER || (w.alive(v) && self.parent[v as usize].is_some()))
            .min_by_key(|&v| (self.depth[v as usize], v));
        if let Some(v) = best {
            self.parent[p as usize] = Some(v);
            self.depth[p as usize] = self.depth[v as usize] + 1;
            w.mark(v);
        } else {
            let at = w.now + w.cfg.tree_rejoin_delay.max(1e-3);
            w.schedule(at, EventKind::Retry, p);
        }
    }

    /// Rebuilds parents breadth-first from the server over alive peers.
    fn rebuild_tree(&mut self, w: &World) {
        self.parent.iter_mut().for_each(|p| *p = None);
        let mut seen = vec![false; w.nodes.len()];
        seen[0] = true;
        let mut queue = VecDeque::from([SERVER]);
        while let Some(u) = queue.pop_front() {
            let mut ns: Vec<NodeId> = w.neighbours(u).to_vec();
            ns.sort_unstable();
            for v in ns {
                if !seen[v as usize] && w.alive(v) {
                    seen[v as usize] = true;
                    self.parent[v as usize] = Some(u);
                    self.depth[v as usize] = self.depth[u as usize] + 1;
                    queue.push_back(v);
                }
            }
        }
    }
}

impl Protocol for Tnnc {
    fn peer_joined(&mut self, w: &mut World, p: NodeId) {
        if self.mode == TnncMode::Tree {
            if w.now == 0.0 {
                self.rebuild_tree(w);
            } else {
                self.attach(w, p);
            }
        }
    }

    fn peer_left(&mut self, w: &mut World, p: NodeId) {
        if self.mode != TnncMode::Tree {
            return;
        }
        self.parent[p as usize] = None;
        let orphans: Vec<NodeId> =
            (1..=w.peers()).filter(|&c| self.parent[c as usize] == Some(p) && w.alive(c)).collect();
        let at = w.now + w.cfg.tree_rejoin_delay;
        for c in orphans {
            self.parent[c as usize] = None;
            w.schedule(at, EventKind::Retry, c);
        }
    }

    fn retry(&mut self, w: &mut World, p: NodeId) {
        if self.mode == TnncMode::Tree && w.alive(p) && self.parent[p as usize].is_none() {
            self.attach(w, p);
        }
        w.mark(p);
    }

    fn edge_added(&mut self, _w: &mut World, a: NodeId, b: NodeId) {
        self.adjust(a, b, true);
        self.adjust(b, a, true);
    }

    fn edge_removed(&mut self, _w: &mut World, a: NodeId, b: NodeId) {
        self.adjust(a, b, false);
        self.adjust(b, a, false);
    }

    fn next_upload(&mut self, w: &mut World, src: NodeId) -> Option<Planned> {
        let ns = w.neighbours(src).to_vec();
        let n = ns.len();
        let start = w.nodes[src as usize].rr;
        for k in 0..n {
            let y = ns[(start + k) % n];
            if !w.can_download(y) {
                continue;
            }
            if self.mode == TnncMode::Tree && self.parent[y as usize] != Some(src) {
                continue;
            }
            let (hs, hy, fy) = (&self.have[src as usize], &self.have[y as usize], &self.inflight[y as usize]);
            let candidates = hs.ones().filter(|&c| !hy.contains(c) && !fy.contains(c)).map(|c| c as u32);
            if let Some(c) = rarest_first(candidates, &self.avail[y as usize], &mut w.rng) {
                self.inflight[y as usize].insert(c as usize);
                w.nodes[src as usize].rr = (start + k + 1) % n;
                let data = Arc::clone(self.store[src as usize][c as usize].as_ref().expect("held chunk is stored"));
                return Some(Planned { dst: y, payload: Payload::Chunk { chunk: c, data } });
            }
        }
        None
    }

    fn cancelled(&mut self, _w: &mut World, t: &Transfer) {
        if let Payload::Chunk { chunk, .. } = t.payload {
            self.inflight[t.dst as usize].set(chunk as usize, false);
        }
    }

    fn delivered(&mut self, w: &mut World, t: Transfer, lost: bool) {
        let Payload::Chunk { chunk, ref data } = t.payload else { unreachable!("chunk exchange carries chunks only") };
        let (y, c) = (t.dst, chunk as usize);
        self.inflight[y as usize].set(c, false);
        if lost {
            w.record(&t, "chunk", Carried::Chunk(chunk), None);
            return;
        }
        let fresh = !self.have[y as usize].contains(c);
        w.record(&t, "chunk", Carried::Chunk(chunk), Some(fresh));
        if !fresh {
            return;
        }
        self.have[y as usize].insert(c);
        self.store[y as usize][c] = Some(Arc::clone(data));
        for &v in w.neighbours(y) {
            self.avail[v as usize][c] += 1;
        }
        self.received[y as usize] += 1;
        let s = w.plan.segment_of(chunk);
        self.seg_left[y as usize][s as usize] -= 1;
        if self.seg_left[y as usize][s as usize] == 0 {
            w.segment_completed(y, s);
        }
        if self.received[y as usize] == w.plan.chunk_count as usize {
            let chunks: Vec<Vec<u8>> =
                self.store[y as usize].iter().map(|d| d.as_deref().expect("complete").to_vec()).collect();
            w.finish_peer(y, &chunks);
        }
    }
}
