//! Grouped coding: the server pushes native packets, peers then form
//! similarity groups around super-peers, and coded packets flow with
//! coefficient vectors drawn from the pairwise-safe universe.
//!
//! Every coded packet carries a universe vector, so a receiver that holds
//! fewer than `g` distinct universe ids of a packet group stays full rank
//! when it gets a new id. Transmitters draw fresh ids from their pool and,
//! once it runs dry, reuse any id the receiver does not hold. Relays forward
//! exact copies of held packets.

use super::engine::{CodedKind, EventKind, Payload, Planned, Protocol, Transfer, World};
use super::metrics::Carried;
use super::tnnc;
use crate::coding::{
    build_vector_universe, constraint_update, encode, form_packet_groups, BacklogCounter, CodedPacket,
    CodingVectorPool, DecoderState, DeliveryReport, GroupLayout, PacketGroup, VectorUniverse,
};
use crate::overlay::{elect_super_peer, form_groups, interest_score, NodeId, PeerProfile, SERVER};
use crate::sim::SimError;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

#[derive(Debug, Clone)]
struct Hold {
    dec: DecoderState,
    /// Universe ids held, padding units included.
    ids: Vec<usize>,
    /// Received packets that can be relayed.
    packets: Vec<(usize, CodedPacket)>,
    inflight_ids: Vec<usize>,
    solved: Option<Arc<PacketGroup>>,
}

impl Hold {
    fn knows(&self, id: usize) -> bool {
        self.ids.contains(&id) || self.inflight_ids.contains(&id)
    }

    fn room(&self) -> bool {
        self.dec.rank() + self.inflight_ids.len() < self.dec.group_size()
    }
}

/// Push of the first native packets before grouping.
#[derive(Debug)]
struct Nptp {
    delivered: Vec<bool>,
    sending: Vec<bool>,
    natives_held: Vec<u32>,
    order: Vec<NodeId>,
    done: bool,
}

#[derive(Debug, Clone)]
struct Cluster {
    members: Vec<NodeId>,
    head: NodeId,
}

#[derive(Debug, Clone)]
struct Retry {
    target: NodeId,
    k: usize,
    id: usize,
    packet: CodedPacket,
    attempts: u32,
}

/// Pool and backlog of one transmitter for one packet group.
#[derive(Debug, Clone)]
struct PgPool {
    pool: CodingVectorPool,
    backlog: BacklogCounter,
}

#[derive(Debug, Clone)]
struct Transmitter {
    audience: Vec<NodeId>,
    /// Super-peers move group by group; the server serves each receiver its
    /// lowest missing group.
    barrier: bool,
    pools: BTreeMap<usize, PgPool>,
    rr: usize,
    retries: VecDeque<Retry>,
}

impl Transmitter {
    fn new(audience: Vec<NodeId>, barrier: bool) -> Self {
        Transmitter { audience, barrier, pools: BTreeMap::new(), rr: 0, retries: VecDeque::new() }
    }

    fn reset(&mut self) {
        self.pools.clear();
    }
}

pub(crate) struct Dsnc {
    g: usize,
    layouts: Vec<GroupLayout>,
    source: Vec<Arc<PacketGroup>>,
    universe: Arc<VectorUniverse>,
    hold: Vec<Vec<Hold>>,
    complete: Vec<u32>,
    seg_left: Vec<Vec<u32>>,
    segment_of: Vec<u32>,
    /// Packet group and slot of each of the first natives.
    native_slot: Vec<(usize, usize)>,
    nptp: Nptp,
    grouped: bool,
    clusters: BTreeMap<u32, Cluster>,
    next_cluster: u32,
    cluster_of: Vec<Option<u32>>,
    tx: BTreeMap<NodeId, Transmitter>,
    groups_formed: u32,
}

impl Dsnc {
    pub fn new(w: &mut World) -> Result<Dsnc, SimError> {
        let plan = w.plan;
        let g = w.cfg.group_size as usize;
        let mut layouts = Vec::new();
        let mut segment_of = Vec::new();
        for s in 0..plan.segment_count {
            let base = s * plan.chunks_per_segment;
            for l in form_packet_groups(plan.chunks_in_segment(s), w.cfg.group_size)? {
                layouts.push(GroupLayout {
                    group_id: layouts.len() as u32,
                    first_native: base + l.first_native,
                    real: l.real,
                    size: l.size,
                });
                segment_of.push(s);
            }
        }
        let source: Vec<Arc<PacketGroup>> = layouts
            .iter()
            .map(|&l| -> Result<Arc<PacketGroup>, SimError> {
                let shifted = GroupLayout { first_native: 0, ..l };
                let natives = &w.content[l.first_native as usize..(l.first_native + l.real) as usize];
                Ok(Arc::new(PacketGroup { layout: l, packets: PacketGroup::new(shifted, natives)?.packets }))
            })
            .collect::<Result<_, _>>()?;
        let universe = Arc::new(build_vector_universe(g, &w.field)?);
        let len = w.cfg.payload_len();
        let fresh: Vec<Hold> = layouts
            .iter()
            .map(|l| Hold {
                dec: DecoderState::for_layout(Arc::clone(&w.field), l, len),
                ids: (l.real as usize..g).map(|j| universe.unit(j)).collect(),
                packets: Vec::new(),
                inflight_ids: Vec::new(),
                solved: None,
            })
            .collect();
        let natives = w.cfg.nptp_natives.unwrap_or(plan.chunks_in_segment(0)).min(plan.chunk_count) as usize;
        let native_slot = (0..natives as u32)
            .map(|c| {
                let k = layouts.iter().position(|l| l.natives().contains(&c)).expect("every chunk has a group");
                (k, (c - layouts[k].first_native) as usize)
            })
            .collect();
        let mut per_seg = vec![0u32; plan.segment_count as usize];
        for &s in &segment_of {
            per_seg[s as usize] += 1;
        }
        let nodes = w.nodes.len();
        let mut order: Vec<NodeId> = (1..=w.peers()).collect();
        order.shuffle(&mut w.rng);
        Ok(Dsnc {
            g,
            layouts,
            source,
            universe,
            hold: vec![fresh; nodes],
            complete: vec![0; nodes],
            seg_left: vec![per_seg; nodes],
            segment_of,
            native_slot,
            nptp: Nptp {
                delivered: vec![false; natives],
                sending: vec![false; natives],
                natives_held: vec![0; nodes],
                order,
                done: false,
            },
            grouped: false,
            clusters: BTreeMap::new(),
            next_cluster: 0,
            cluster_of: vec![None; nodes],
            tx: BTreeMap::new(),
            groups_formed: 0,
        })
    }

    fn group_count(&self) -> usize {
        self.layouts.len()
    }

    fn has_group(&self, p: NodeId, k: usize) -> bool {
        p == SERVER || self.hold[p as usize][k].dec.is_complete()
    }

    /// Who feeds `p` with fresh vectors once groups exist.
    fn transmitter_of(&self, p: NodeId) -> Option<NodeId> {
        let c = &self.clusters[&self.cluster_of[p as usize]?];
        Some(if c.head == p { SERVER } else { c.head })
    }

    fn profile(&self, w: &World, p: NodeId) -> PeerProfile {
        let spec = &w.topo.nodes[p as usize];
        let mut pr = PeerProfile::new(p, spec.upload, spec.download, spec.in_campus, w.plan.chunk_count as usize);
        let mut held = 0u64;
        for (k, h) in self.hold[p as usize].iter().enumerate() {
            for &(id, _) in &h.packets {
                held += 1;
                if let Some(slot) = self.universe.unit_position(id) {
                    pr.content.insert((self.layouts[k].first_native as usize) + slot);
                }
            }
        }
        pr.contribution = held * u64::from(w.cfg.chunk_size);
        pr.interested = !w.finished(p);
        pr
    }

    /// Whether a transfer into `y` over the access link is acceptable for
    /// group `k`: no alive neighbour on `y`'s side holds an id `y` lacks.
    fn crossing_allowed(&self, w: &World, y: NodeId, k: usize) -> bool {
        let hy = &self.hold[y as usize][k];
        w.neighbours(y).iter().all(|&v| {
            v == SERVER
                || !w.alive(v)
                || w.crosses(y, v)
                || self.hold[v as usize][k].packets.iter().all(|(id, _)| hy.knows(*id))
        })
    }

    fn locality_ok(&self, w: &World, src: NodeId, y: NodeId, k: usize) -> bool {
        !w.cfg.locality || !w.crosses(src, y) || self.crossing_allowed(w, y, k)
    }

    fn natives_of(&mut self, src: NodeId, k: usize) -> Arc<PacketGroup> {
        if src == SERVER {
            return Arc::clone(&self.source[k]);
        }
        let layout = self.layouts[k];
        let h = &mut self.hold[src as usize][k];
        Arc::clone(h.solved.get_or_insert_with(|| {
            Arc::new(PacketGroup { layout, packets: h.dec.solve().expect("complete group solves") })
        }))
    }

    fn coded(&mut self, w: &World, src: NodeId, k: usize, id: usize, kind: CodedKind, attempts: u32) -> Payload {
        let group = self.natives_of(src, k);
        let packet = encode(&w.field, &group, self.universe.vector(id)).expect("universe vector fits its group");
        Payload::Coded { generation: k as u32, packet, id: Some(id), kind, attempts }
    }

    fn start_to(&mut self, y: NodeId, k: usize, id: usize) {
        self.hold[y as usize][k].inflight_ids.push(id);
    }

    fn native_upload(&mut self, w: &mut World) -> Option<Planned> {
        let j = (0..self.nptp.delivered.len()).find(|&j| !self.nptp.delivered[j] && !self.nptp.sending[j])?;
        let (k, slot) = self.native_slot[j];
        let id = self.universe.unit(slot);
        let target = self
            .nptp
            .order
            .iter()
            .copied()
            .filter(|&p| w.can_download(p) && !self.hold[p as usize][k].knows(id))
            .min_by_key(|&p| self.nptp.natives_held[p as usize])?;
        self.nptp.sending[j] = true;
        self.start_to(target, k, id);
        let payload = self.coded(w, SERVER, k, id, CodedKind::Native, 0);
        Some(Planned { dst: target, payload })
    }

    /// Groups transmitter `src` may send to `p`: the current one for a
    /// super-peer, any the server holds otherwise.
    fn target_groups(&self, w: &World, src: NodeId, tx: &Transmitter, current: Option<usize>, p: NodeId) -> Vec<u32> {
        if !w.can_download(p) {
            return Vec::new();
        }
        let fits = |k: usize| {
            let h = &self.hold[p as usize][k];
            !h.dec.is_complete() && h.room() && self.has_group(src, k) && self.locality_ok(w, src, p, k)
        };
        if tx.barrier {
            current.filter(|&k| fits(k)).map(|k| k as u32).into_iter().collect()
        } else {
            (0..self.group_count()).filter(|&k| fits(k)).map(|k| k as u32).collect()
        }
    }

    /// Per packet group, the alive neighbours of `p` holding any packet of it.
    fn neighbour_counts(&self, w: &World, p: NodeId) -> Vec<u32> {
        let mut counts = vec![0u32; self.group_count()];
        for &v in w.neighbours(p) {
            if v == SERVER || !w.alive(v) {
                continue;
            }
            for (k, h) in self.hold[v as usize].iter().enumerate() {
                counts[k] += u32::from(!h.packets.is_empty());
            }
        }
        counts
    }

    fn pool_for<'a>(&self, tx: &'a mut Transmitter, k: usize) -> &'a mut PgPool {
        tx.pools.entry(k).or_insert_with(|| {
            let mut pool = CodingVectorPool::new(Arc::clone(&self.universe));
            let mut backlog = vec![0u32; self.hold.len()];
            for &p in &tx.audience {
                let h = &self.hold[p as usize][k];
                for &id in &h.ids {
                    pool.withdraw(id, p as usize);
                }
                for &id in &h.inflight_ids {
                    pool.reserve(id);
                }
                backlog[p as usize] = (self.g - h.dec.rank()) as u32;
            }
            for r in tx.retries.iter().filter(|r| r.k == k) {
                pool.reserve(r.id);
            }
            PgPool { pool, backlog: BacklogCounter::new(backlog) }
        })
    }

    /// A universe id `p` does not know for group `k`: fresh from the pool
    /// when possible, otherwise any unknown id.
    fn pick_vector<R: Rng + ?Sized>(&self, pp: &mut PgPool, p: NodeId, k: usize, rng: &mut R) -> (usize, bool) {
        let h = &self.hold[p as usize][k];
        let mut rejected = Vec::new();
        let mut found = None;
        while let Ok(id) = pp.pool.select(rng) {
            if h.knows(id) {
                rejected.push(id);
            } else {
                found = Some(id);
                break;
            }
        }
        for id in rejected {
            pp.pool.restore(id);
        }
        if let Some(id) = found {
            return (id, false);
        }
        let unknown: Vec<usize> = (0..self.universe.len()).filter(|&i| !h.knows(i)).collect();
        (*unknown.choose(rng).expect("universe exceeds the group size"), true)
    }

    fn transmit(&mut self, w: &mut World, src: NodeId) -> Option<Planned> {
        let mut tx = self.tx.remove(&src)?;
        let out = self.transmit_with(w, src, &mut tx);
        self.tx.insert(src, tx);
        out
    }

    fn transmit_with(&mut self, w: &mut World, src: NodeId, tx: &mut Transmitter) -> Option<Planned> {
        tx.audience.retain(|&p| w.alive(p));
        let current =
            (0..self.group_count()).find(|&k| tx.audience.iter().any(|&p| !self.hold[p as usize][k].dec.is_complete()));
        let stale: Vec<usize> = tx.pools.keys().copied().filter(|&k| current.is_none_or(|c| k < c)).collect();
        for k in stale {
            tx.pools.remove(&k);
        }
        if tx.barrier {
            tx.retries.retain(|r| Some(r.k) == current);
        }

        let mut ready = None;
        for (i, r) in tx.retries.iter().enumerate() {
            let h = &self.hold[r.target as usize][r.k];
            if w.can_download(r.target) && !h.dec.is_complete() && h.room() && !h.knows(r.id) {
                ready = Some(i);
                break;
            }
        }
        if let Some(i) = ready {
            let r = tx.retries.remove(i).expect("index from scan");
            self.start_to(r.target, r.k, r.id);
            let payload = Payload::Coded {
                generation: r.k as u32,
                packet: r.packet,
                id: Some(r.id),
                kind: CodedKind::Transmit,
                attempts: r.attempts,
            };
            return Some(Planned { dst: r.target, payload });
        }

        let n = tx.audience.len();
        for step in 0..n {
            let p = tx.audience[(tx.rr + step) % n];
            let eligible = self.target_groups(w, src, tx, current, p);
            let k = match eligible.as_slice() {
                [] => continue,
                [k] => *k as usize,
                _ => {
                    let counts = self.neighbour_counts(w, p);
                    tnnc::rarest_first(eligible, &counts, &mut w.rng).expect("candidates exist") as usize
                }
            };
            self.pool_for(tx, k);
            let mut pp = tx.pools.remove(&k).expect("pool just ensured");
            let (id, reused) = self.pick_vector(&mut pp, p, k, &mut w.rng);
            tx.pools.insert(k, pp);
            if reused {
                w.metrics.fallback_vectors += 1;
            }
            tx.rr = (tx.rr + step + 1) % n;
            self.start_to(p, k, id);
            let payload = self.coded(w, src, k, id, CodedKind::Transmit, 0);
            return Some(Planned { dst: p, payload });
        }
        None
    }

    fn relay(&mut self, w: &mut World, src: NodeId) -> Option<Planned> {
        let ns = w.neighbours(src).to_vec();
        let n = ns.len();
        let start = w.nodes[src as usize].rr;
        for step in 0..n {
            let y = ns[(start + step) % n];
            if y == SERVER || !w.can_download(y) {
                continue;
            }
            let eligible = (0..self.group_count())
                .filter(|&k| {
                    let (hs, hy) = (&self.hold[src as usize][k], &self.hold[y as usize][k]);
                    !hs.packets.is_empty()
                        && !hy.dec.is_complete()
                        && hy.room()
                        && hs.packets.iter().any(|(id, _)| !hy.knows(*id))
                        && self.locality_ok(w, src, y, k)
                })
                .map(|k| k as u32)
                .collect::<Vec<_>>();
            let counts = self.neighbour_counts(w, y);
            if let Some(k) = tnnc::rarest_first(eligible, &counts, &mut w.rng) {
                let k = k as usize;
                let (hs, hy) = (&self.hold[src as usize][k], &self.hold[y as usize][k]);
                let candidates: Vec<usize> = (0..hs.packets.len()).filter(|&i| !hy.knows(hs.packets[i].0)).collect();
                let i = *candidates.choose(&mut w.rng).expect("non-empty");
                let (id, packet) = hs.packets[i].clone();
                w.nodes[src as usize].rr = (start + step + 1) % n;
                self.start_to(y, k, id);
                let payload =
                    Payload::Coded { generation: k as u32, packet, id: Some(id), kind: CodedKind::Relay, attempts: 0 };
                return Some(Planned { dst: y, payload });
            }
        }
        None
    }

    fn new_cluster(&mut self, w: &mut World, members: Vec<NodeId>, head: NodeId) {
        let id = self.next_cluster;
        self.next_cluster += 1;
        for &m in &members {
            self.cluster_of[m as usize] = Some(id);
            if m != head && w.topo.add_edge(head, m) {
                w.mark(m);
            }
        }
        w.topo.add_edge(SERVER, head);
        let audience = members.iter().copied().filter(|&m| m != head).collect();
        self.tx.insert(head, Transmitter::new(audience, true));
        if let Some(s) = self.tx.get_mut(&SERVER) {
            s.audience.push(head);
            s.reset();
        }
        self.clusters.insert(id, Cluster { members, head });
        w.mark(head);
        w.mark(SERVER);
    }

    fn form(&mut self, w: &mut World) {
        let alive: Vec<NodeId> = (1..=w.peers()).filter(|&p| w.alive(p)).collect();
        let pos: BTreeMap<NodeId, usize> = alive.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let profiles: Vec<PeerProfile> = alive.iter().map(|&p| self.profile(w, p)).collect();
        let neighbours: Vec<Vec<usize>> =
            alive.iter().map(|&p| w.neighbours(p).iter().filter_map(|v| pos.get(v).copied()).collect()).collect();
        let groups = form_groups(&profiles, &neighbours, w.cfg.grouping);
        self.tx.insert(SERVER, Transmitter::new(Vec::new(), false));
        self.groups_formed = groups.len() as u32;
        for gr in groups {
            self.new_cluster(w, gr.members, gr.super_peers[0]);
        }
        // Finished peers were not grouped; they keep relaying.
    }

    /// Joiner after grouping: first fitting neighbour's group, else alone.
    fn attach(&mut self, w: &mut World, p: NodeId) {
        let me = self.profile(w, p);
        let mut near: Vec<NodeId> = w.neighbours(p).iter().copied().filter(|&v| v != SERVER && w.alive(v)).collect();
        near.sort_unstable();
        let cap = w.cfg.grouping.max_group_size.max(1);
        let host = near.into_iter().find_map(|v| {
            let c = self.cluster_of[v as usize]?;
            let fits = w.in_campus(v) == w.in_campus(p)
                && self.clusters[&c].members.len() < cap
                && interest_score(&me, &self.profile(w, v)) > w.cfg.grouping.threshold;
            fits.then_some(c)
        });
        match host {
            Some(c) => {
                let cl = self.clusters.get_mut(&c).expect("host cluster exists");
                cl.members.push(p);
                let head = cl.head;
                self.cluster_of[p as usize] = Some(c);
                w.topo.add_edge(head, p);
                let t = self.tx.get_mut(&head).expect("head transmits");
                t.audience.push(p);
                t.reset();
                w.mark(head);
            }
            None => self.new_cluster(w, vec![p], p),
        }
    }
}

impl Protocol for Dsnc {
    fn peer_joined(&mut self, w: &mut World, p: NodeId) {
        if self.grouped {
            self.attach(w, p);
        }
        w.mark(SERVER);
    }

    fn peer_left(&mut self, w: &mut World, p: NodeId) {
        for t in self.tx.values_mut() {
            t.retries.retain(|r| r.target != p);
        }
        let Some(c) = self.cluster_of[p as usize].take() else { return };
        let mut cl = self.clusters.remove(&c).expect("cluster exists");
        cl.members.retain(|&m| m != p);
        let old = self.tx.remove(&p);
        if let Some(s) = self.tx.get_mut(&SERVER) {
            s.audience.retain(|&m| m != p);
            s.reset();
        }
        if cl.members.is_empty() {
            return;
        }
        if cl.head == p {
            let profiles: Vec<PeerProfile> = cl.members.iter().map(|&m| self.profile(w, m)).collect();
            let head = elect_super_peer(profiles.iter()).expect("members remain");
            let mut t = old.unwrap_or_else(|| Transmitter::new(Vec::new(), true));
            t.audience = cl.members.iter().copied().filter(|&m| m != head).collect();
            t.retries.clear();
            t.reset();
            self.clusters.insert(c, Cluster { members: cl.members.clone(), head });
            for &m in &cl.members {
                if m != head {
                    w.topo.add_edge(head, m);
                    w.mark(m);
                }
            }
            w.topo.add_edge(SERVER, head);
            self.tx.insert(head, t);
            if let Some(s) = self.tx.get_mut(&SERVER) {
                s.audience.push(head);
            }
            w.mark(head);
        } else {
            let head = cl.head;
            if let Some(t) = self.tx.get_mut(&head) {
                t.audience.retain(|&m| m != p);
                t.reset();
            }
            self.clusters.insert(c, cl);
            w.mark(head);
        }
        w.mark(SERVER);
    }

    fn next_upload(&mut self, w: &mut World, src: NodeId) -> Option<Planned> {
        if src == SERVER {
            if !self.nptp.done {
                return self.native_upload(w);
            }
            return self.transmit(w, SERVER);
        }
        if let Some(p) = self.transmit(w, src) {
            return Some(p);
        }
        self.relay(w, src)
    }

    fn cancelled(&mut self, w: &mut World, t: &Transfer) {
        let Payload::Coded { generation, id: Some(id), kind, .. } = t.payload else { return };
        let k = generation as usize;
        let h = &mut self.hold[t.dst as usize][k];
        if let Some(i) = h.inflight_ids.iter().position(|&x| x == id) {
            h.inflight_ids.swap_remove(i);
        }
        match kind {
            CodedKind::Native => {
                if let Some(j) = self.native_index(k, id) {
                    self.nptp.sending[j] = false;
                    w.mark(SERVER);
                }
            }
            CodedKind::Transmit => {
                if let Some(pp) = self.tx.get_mut(&t.src).and_then(|tx| tx.pools.get_mut(&k)) {
                    pp.pool.restore(id);
                }
            }
            CodedKind::Relay | CodedKind::Flat => {}
        }
    }

    fn delivered(&mut self, w: &mut World, t: Transfer, lost: bool) {
        let Payload::Coded { generation, ref packet, id: Some(id), kind, attempts } = t.payload else {
            unreachable!("grouped coding carries universe vectors only")
        };
        let (y, k) = (t.dst, generation as usize);
        let label = match kind {
            CodedKind::Native => "native",
            CodedKind::Transmit => "coded",
            CodedKind::Relay | CodedKind::Flat => "relay",
        };
        if kind == CodedKind::Native {
            w.metrics.native_sends += 1;
        }
        {
            let h = &mut self.hold[y as usize][k];
            if let Some(i) = h.inflight_ids.iter().position(|&x| x == id) {
                h.inflight_ids.swap_remove(i);
            }
        }
        let carried = Carried::Vector { generation, vector: &packet.vector, coded: true };
        if lost {
            w.record(&t, label, carried, None);
            match kind {
                CodedKind::Native => {
                    if let Some(j) = self.native_index(k, id) {
                        self.nptp.sending[j] = false;
                    }
                    w.mark(SERVER);
                }
                CodedKind::Transmit => {
                    if let Some(tx) = self.tx.get_mut(&t.src) {
                        if attempts < w.cfg.retry_cap {
                            tx.retries.push_back(Retry {
                                target: y,
                                k,
                                id,
                                packet: packet.clone(),
                                attempts: attempts + 1,
                            });
                        } else if let Some(pp) = tx.pools.get_mut(&k) {
                            pp.pool.restore(id);
                        }
                    }
                    w.mark(t.src);
                }
                CodedKind::Relay | CodedKind::Flat => {}
            }
            return;
        }
        let h = &mut self.hold[y as usize][k];
        let innovative = h.dec.insert(packet).expect("packet matches its group");
        w.record(&t, label, carried, Some(innovative));
        if !innovative {
            return;
        }
        h.ids.push(id);
        h.packets.push((id, packet.clone()));
        let done = h.dec.is_complete();
        if kind == CodedKind::Native {
            if let Some(j) = self.native_index(k, id) {
                self.nptp.sending[j] = false;
                if !self.nptp.delivered[j] {
                    self.nptp.delivered[j] = true;
                    self.nptp.natives_held[y as usize] += 1;
                }
            }
            if !self.nptp.done && self.nptp.delivered.iter().all(|&d| d) {
                self.nptp.done = true;
                let now = w.now;
                w.schedule(now, EventKind::PhaseTransition, SERVER);
            }
        }
        if let Some(tn) = self.transmitter_of(y) {
            if let Some(pp) = self.tx.get_mut(&tn).and_then(|tx| tx.pools.get_mut(&k)) {
                let report = DeliveryReport { vector: Some(id), receivers: vec![y as usize] };
                let _ = constraint_update(&mut pp.backlog, &mut pp.pool, &report);
            }
            w.mark(tn);
        }
        if done {
            self.complete[y as usize] += 1;
            let s = self.segment_of[k] as usize;
            self.seg_left[y as usize][s] -= 1;
            if self.seg_left[y as usize][s] == 0 {
                w.segment_completed(y, s as u32);
            }
            if self.complete[y as usize] as usize == self.group_count() {
                let mut chunks = Vec::with_capacity(w.content.len());
                for k in 0..self.group_count() {
                    let group = self.natives_of(y, k);
                    chunks.extend(group.packets[..group.layout.real as usize].iter().cloned());
                }
                w.finish_peer(y, &chunks);
            }
        }
    }

    fn phase_transition(&mut self, w: &mut World) {
        if self.grouped {
            return;
        }
        self.grouped = true;
        self.form(w);
        for p in 0..=w.peers() {
            w.mark(p);
        }
    }

    fn groups_formed(&self) -> u32 {
        self.groups_formed
    }
}

impl Dsnc {
    fn native_index(&self, k: usize, id: usize) -> Option<usize> {
        let slot = self.universe.unit_position(id)?;
        self.native_slot.iter().position(|&(kk, s)| kk == k && s == slot)
    }
}
