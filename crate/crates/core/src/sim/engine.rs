//! Event loop, node and transfer state shared by every protocol.

use super::bandwidth::{max_overload, BandwidthModel, FlowPath, MaxMinSolver};
use super::metrics::{segment_progress, Carried, Collector, MetricsReport};
use super::{dsnc, fncm, tnnc, ProtocolKind, SimConfig, SimError};
use crate::coding::{segment_content, CodedPacket, SegmentPlan};
use crate::gf::Field;
use crate::overlay::{
    generate_topology, sample_churn_events, sample_link_failure, ChurnKind, DeparturePolicy, LinkFailureModel, NodeId,
    Topology, SERVER,
};
use crate::par::stream_rng;
use rand::seq::IndexedRandom;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::sync::Arc;

/// Heap events; completions of transfers are found by scanning flows and
/// always go first at equal times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum EventKind {
    Join,
    Leave,
    PhaseTransition,
    Retry,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    kind: EventKind,
    subject: NodeId,
    seq: u64,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.cmp(&other.kind))
            .then(self.subject.cmp(&other.subject))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Status {
    Waiting,
    Active,
    Departed,
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub status: Status,
    pub up_slots: u32,
    pub down_slots: u32,
    pub up_busy: u32,
    pub down_busy: u32,
    pub joined_at: f64,
    pub finished_at: Option<f64>,
    pub segment_done: Vec<Option<f64>>,
    pub uploaded: f64,
    /// Round-robin cursor over the adjacency list.
    pub rr: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CodedKind {
    /// Native packet pushed before grouping.
    Native,
    /// Fresh vector from a transmitter's pool or a fallback draw.
    Transmit,
    /// Exact copy of a held packet.
    Relay,
    /// Random recombination.
    Flat,
}

#[derive(Debug, Clone)]
pub(crate) enum Payload {
    Chunk { chunk: u32, data: Arc<[u8]> },
    Coded { generation: u32, packet: CodedPacket, id: Option<usize>, kind: CodedKind, attempts: u32 },
}

#[derive(Debug, Clone)]
pub(crate) struct Transfer {
    pub src: NodeId,
    pub dst: NodeId,
    pub wire: u64,
    remaining: f64,
    rate: f64,
    pub crosses: bool,
    pub payload: Payload,
}

pub(crate) struct Planned {
    pub dst: NodeId,
    pub payload: Payload,
}

pub(crate) trait Protocol {
    fn peer_joined(&mut self, w: &mut World, p: NodeId);
    /// Called after the peer's transfers were cancelled and its edges removed.
    fn peer_left(&mut self, w: &mut World, p: NodeId);
    fn edge_added(&mut self, _w: &mut World, _a: NodeId, _b: NodeId) {}
    fn edge_removed(&mut self, _w: &mut World, _a: NodeId, _b: NodeId) {}
    /// Next upload `src` should start with a free slot, if any.
    fn next_upload(&mut self, w: &mut World, src: NodeId) -> Option<Planned>;
    fn cancelled(&mut self, w: &mut World, t: &Transfer);
    fn delivered(&mut self, w: &mut World, t: Transfer, lost: bool);
    fn phase_transition(&mut self, _w: &mut World) {}
    fn retry(&mut self, w: &mut World, p: NodeId) {
        w.mark(p);
    }
    fn groups_formed(&self) -> u32 {
        0
    }
}

/// Everything but the protocol's own state.
pub(crate) struct World {
    pub cfg: SimConfig,
    pub now: f64,
    pub field: Arc<Field>,
    pub plan: SegmentPlan,
    /// Carried payload of every chunk, padding to full segments included.
    pub content: Vec<Vec<u8>>,
    content_hash: [u8; 32],
    pub topo: Topology,
    pub nodes: Vec<Node>,
    transfers: Vec<Transfer>,
    pub rng: ChaCha8Rng,
    fail_rng: ChaCha8Rng,
    repair_rng: ChaCha8Rng,
    failure: LinkFailureModel,
    heap: BinaryHeap<Reverse<Event>>,
    seq: u64,
    dirty: Vec<bool>,
    dirty_list: Vec<NodeId>,
    pub metrics: Collector,
    bw: BandwidthModel,
    caps: Vec<f64>,
    solver: MaxMinSolver,
    paths: Vec<FlowPath>,
    rates_dirty: bool,
    pending_joins: usize,
    downloading: usize,
    hash_mismatches: u32,
}

fn digest(chunks: &[Vec<u8>]) -> [u8; 32] {
    let mut h = Sha256::new();
    for c in chunks {
        h.update(c);
    }
    h.finalize().into()
}

impl World {
    pub fn peers(&self) -> u32 {
        self.cfg.topology.peers
    }

    pub fn alive(&self, p: NodeId) -> bool {
        self.nodes[p as usize].status == Status::Active
    }

    pub fn finished(&self, p: NodeId) -> bool {
        self.nodes[p as usize].finished_at.is_some()
    }

    /// Alive and still downloading.
    pub fn wants(&self, p: NodeId) -> bool {
        p != SERVER && self.alive(p) && !self.finished(p)
    }

    pub fn can_download(&self, p: NodeId) -> bool {
        let n = &self.nodes[p as usize];
        self.wants(p) && n.down_busy < n.down_slots
    }

    pub fn in_campus(&self, p: NodeId) -> bool {
        self.topo.nodes[p as usize].in_campus
    }

    pub fn crosses(&self, a: NodeId, b: NodeId) -> bool {
        self.topo.crosses(a, b)
    }

    pub fn neighbours(&self, p: NodeId) -> &[NodeId] {
        &self.topo.adjacency[p as usize]
    }

    pub fn mark(&mut self, p: NodeId) {
        if !self.dirty[p as usize] {
            self.dirty[p as usize] = true;
            self.dirty_list.push(p);
        }
    }

    pub fn mark_with_neighbours(&mut self, p: NodeId) {
        self.mark(p);
        for i in 0..self.topo.adjacency[p as usize].len() {
            let q = self.topo.adjacency[p as usize][i];
            self.mark(q);
        }
    }

    pub fn schedule(&mut self, time: f64, kind: EventKind, subject: NodeId) {
        self.seq += 1;
        self.heap.push(Reverse(Event { time, kind, subject, seq: self.seq }));
    }

    pub fn wire_len(&self, payload: &Payload) -> u64 {
        match payload {
            Payload::Chunk { .. } => u64::from(self.cfg.chunk_size) + 4,
            Payload::Coded { packet, .. } => {
                (6 + CodedPacket::vector_bytes(self.cfg.field, packet.group_size())) as u64
                    + u64::from(self.cfg.chunk_size)
            }
        }
    }

    pub fn record(&mut self, t: &Transfer, kind: &str, carried: Carried<'_>, outcome: Option<bool>) {
        let now = self.now;
        self.metrics.record(now, kind, t.src, t.dst, t.crosses, t.wire, carried, outcome);
    }

    pub fn segment_completed(&mut self, p: NodeId, s: u32) {
        let now = self.now;
        let slot = &mut self.nodes[p as usize].segment_done[s as usize];
        if slot.is_none() {
            *slot = Some(now);
        }
    }

    /// Marks `p` finished with the decoded `chunks` and checks them.
    pub fn finish_peer(&mut self, p: NodeId, chunks: &[Vec<u8>]) {
        if self.finished(p) {
            return;
        }
        let real = &chunks[..self.plan.chunk_count as usize];
        if digest(real) != self.content_hash {
            self.hash_mismatches += 1;
        }
        self.nodes[p as usize].finished_at = Some(self.now);
        self.downloading -= 1;
        let leave = self.cfg.churn.as_ref().is_some_and(|c| c.policy == DeparturePolicy::LeaveAfterDownload);
        if leave {
            let now = self.now;
            self.schedule(now, EventKind::Leave, p);
        }
    }

    /// Random alive peers other than `u` and not adjacent to it.
    fn repair_candidates(&self, u: NodeId, prefer_downloading: bool) -> Vec<NodeId> {
        (1..=self.peers())
            .filter(|&v| v != u && self.alive(v) && !self.topo.has_edge(u, v))
            .filter(|&v| !prefer_downloading || !self.finished(v))
            .collect()
    }

    fn alive_degree(&self, u: NodeId) -> usize {
        self.neighbours(u).iter().filter(|&&v| v != SERVER && self.alive(v)).count()
    }
}

pub(crate) struct Sim {
    w: World,
    proto: Box<dyn Protocol>,
    events: u64,
}

impl Sim {
    pub fn new(cfg: &SimConfig) -> Result<Sim, SimError> {
        let seed = cfg.seed;
        let topo = generate_topology(&cfg.topology, &mut stream_rng(seed, 1))?;
        let plan = segment_content(cfg.content_size, cfg.chunk_size, cfg.chunks_per_segment)?;
        let field = Arc::new(Field::new(cfg.field));
        let mut content_rng = stream_rng(seed, 3);
        let len = cfg.payload_len();
        let padded = (plan.segment_count * plan.chunks_per_segment) as usize;
        let mut content: Vec<Vec<u8>> = if cfg.carried_payload_bytes == 0 {
            let mut bytes = vec![0u8; cfg.content_size as usize];
            content_rng.fill_bytes(&mut bytes);
            plan.split(&bytes)?
        } else {
            (0..plan.chunk_count)
                .map(|_| {
                    let mut c = vec![0u8; len];
                    content_rng.fill_bytes(&mut c);
                    c
                })
                .collect()
        };
        let content_hash = digest(&content);
        content.resize(padded, vec![0u8; len]);

        let nodes: Vec<Node> = (0..topo.nodes.len())
            .map(|i| Node {
                status: if i == 0 { Status::Active } else { Status::Waiting },
                up_slots: if i == 0 { cfg.server_upload_slots } else { cfg.upload_slots },
                down_slots: if i == 0 { 0 } else { cfg.download_slots },
                up_busy: 0,
                down_busy: 0,
                joined_at: 0.0,
                finished_at: None,
                segment_done: vec![None; plan.segment_count as usize],
                uploaded: 0.0,
                rr: 0,
            })
            .collect();
        let bw = BandwidthModel {
            upload: topo.nodes.iter().map(|n| n.upload as f64).collect(),
            download: topo.nodes.iter().map(|n| if n.download == 0 { 1.0 } else { n.download as f64 }).collect(),
            access: topo.access_capacity as f64,
        };
        let caps = bw.capacities();
        let count = nodes.len();
        let mut w = World {
            cfg: cfg.clone(),
            now: 0.0,
            field: Arc::clone(&field),
            plan,
            content,
            content_hash,
            topo,
            nodes,
            transfers: Vec::new(),
            rng: stream_rng(seed, 4),
            fail_rng: stream_rng(seed, 5),
            repair_rng: stream_rng(seed, 6),
            failure: LinkFailureModel { p_fail: cfg.loss_probability },
            heap: BinaryHeap::new(),
            seq: 0,
            dirty: vec![false; count],
            dirty_list: Vec::new(),
            metrics: Collector::new(field, cfg.trace),
            bw,
            caps,
            solver: MaxMinSolver::default(),
            paths: Vec::new(),
            rates_dirty: false,
            pending_joins: 0,
            downloading: 0,
            hash_mismatches: 0,
        };
        match &cfg.churn {
            Some(model) => {
                let events = sample_churn_events(model, cfg.topology.peers, cfg.horizon, &mut stream_rng(seed, 2));
                for e in events {
                    let kind = match e.kind {
                        ChurnKind::Join => {
                            w.pending_joins += 1;
                            EventKind::Join
                        }
                        ChurnKind::Lifetime => EventKind::Leave,
                    };
                    w.schedule(e.time, kind, e.peer);
                }
            }
            None => {
                for p in 1..=cfg.topology.peers {
                    w.pending_joins += 1;
                    w.schedule(0.0, EventKind::Join, p);
                }
            }
        }
        let proto: Box<dyn Protocol> = match cfg.protocol {
            ProtocolKind::Tnnc => Box::new(tnnc::Tnnc::new(&w)),
            ProtocolKind::Fncm => Box::new(fncm::Fncm::new(&w)),
            ProtocolKind::Dsnc => Box::new(dsnc::Dsnc::new(&mut w)?),
        };
        Ok(Sim { w, proto, events: 0 })
    }

    fn join(&mut self, p: NodeId) -> bool {
        let n = &mut self.w.nodes[p as usize];
        if n.status != Status::Waiting {
            return false;
        }
        n.status = Status::Active;
        n.joined_at = self.w.now;
        self.w.pending_joins -= 1;
        self.w.downloading += 1;
        true
    }

    fn finish_join(&mut self, p: NodeId) {
        if !self.w.alive(p) {
            return;
        }
        self.repair(p);
        self.proto.peer_joined(&mut self.w, p);
        self.w.mark_with_neighbours(p);
    }

    /// Tops up the alive degree of `u` with random alive peers.
    fn repair(&mut self, u: NodeId) {
        let target = if u == SERVER {
            self.w.cfg.topology.server_degree as usize
        } else {
            (self.w.cfg.topology.degree as usize).div_ceil(2)
        };
        let have = if u == SERVER {
            self.w.neighbours(SERVER).iter().filter(|&&v| self.w.wants(v)).count()
        } else {
            self.w.alive_degree(u)
        };
        if have >= target {
            return;
        }
        let mut pool = self.w.repair_candidates(u, u == SERVER);
        let mut added = Vec::new();
        for _ in have..target {
            let Some(&v) = pool.choose(&mut self.w.repair_rng) else { break };
            pool.retain(|&x| x != v);
            self.w.topo.add_edge(u, v);
            added.push(v);
        }
        for v in added {
            self.proto.edge_added(&mut self.w, u, v);
            self.w.mark(v);
            self.w.mark(u);
        }
    }

    fn depart(&mut self, p: NodeId) {
        if !self.w.alive(p) {
            return;
        }
        self.w.nodes[p as usize].status = Status::Departed;
        if !self.w.finished(p) {
            self.w.downloading -= 1;
        }
        let (gone, kept): (Vec<Transfer>, Vec<Transfer>) =
            std::mem::take(&mut self.w.transfers).into_iter().partition(|t| t.src == p || t.dst == p);
        self.w.transfers = kept;
        for t in &gone {
            self.release_slots(t);
            self.proto.cancelled(&mut self.w, t);
            self.w.mark(t.src);
            self.w.mark(t.dst);
        }
        self.w.rates_dirty = true;
        let former = self.w.topo.adjacency[p as usize].clone();
        for &v in &former {
            self.proto.edge_removed(&mut self.w, p, v);
            self.w.topo.remove_edge(p, v);
        }
        self.proto.peer_left(&mut self.w, p);
        for &v in &former {
            if self.w.alive(v) {
                self.repair(v);
                self.w.mark_with_neighbours(v);
            }
        }
    }

    fn release_slots(&mut self, t: &Transfer) {
        self.w.nodes[t.src as usize].up_busy -= 1;
        self.w.nodes[t.dst as usize].down_busy -= 1;
    }

    fn start(&mut self, src: NodeId, plan: Planned) {
        let w = &mut self.w;
        debug_assert!(w.can_download(plan.dst));
        let wire = w.wire_len(&plan.payload);
        w.nodes[src as usize].up_busy += 1;
        w.nodes[plan.dst as usize].down_busy += 1;
        let crosses = w.crosses(src, plan.dst);
        w.transfers.push(Transfer {
            src,
            dst: plan.dst,
            wire,
            remaining: wire as f64,
            rate: 0.0,
            crosses,
            payload: plan.payload,
        });
        w.rates_dirty = true;
    }

    fn schedule_dirty(&mut self) {
        while !self.w.dirty_list.is_empty() {
            let mut list = std::mem::take(&mut self.w.dirty_list);
            list.sort_unstable();
            for &u in &list {
                self.w.dirty[u as usize] = false;
            }
            for u in list {
                if !self.w.alive(u) {
                    continue;
                }
                while self.w.nodes[u as usize].up_busy < self.w.nodes[u as usize].up_slots {
                    match self.proto.next_upload(&mut self.w, u) {
                        Some(plan) => self.start(u, plan),
                        None => break,
                    }
                }
            }
            // Starting uploads never frees capacity, so one more pass only
            // happens when a protocol marked nodes while planning.
        }
    }

    fn replan(&mut self) {
        let w = &mut self.w;
        w.paths.clear();
        w.paths.extend(w.transfers.iter().map(|t| w.bw.flow(t.src as usize, t.dst as usize, t.crosses)));
        let rates = w.solver.solve(&w.caps, &w.paths);
        let over = max_overload(&w.caps, &w.paths, rates);
        w.metrics.max_overload = w.metrics.max_overload.max(over);
        for (t, &r) in w.transfers.iter_mut().zip(rates) {
            t.rate = r;
        }
        w.rates_dirty = false;
    }

    fn done(&self) -> bool {
        self.w.pending_joins == 0 && self.w.downloading == 0
    }

    fn advance(&mut self, to: f64) {
        let dt = to - self.w.now;
        for t in &mut self.w.transfers {
            let moved = (t.rate * dt).min(t.remaining);
            t.remaining -= moved;
            self.w.nodes[t.src as usize].uploaded += moved;
        }
        self.w.now = to;
    }

    pub fn run(mut self) -> Result<(MetricsReport, Vec<String>), SimError> {
        let mut horizon_exceeded = false;
        let mut stalled = false;
        loop {
            let mut joined = Vec::new();
            while let Some(Reverse(ev)) = self.w.heap.peek().copied() {
                if ev.time > self.w.now {
                    break;
                }
                self.w.heap.pop();
                self.events += 1;
                match ev.kind {
                    EventKind::Join => {
                        if self.join(ev.subject) {
                            joined.push(ev.subject);
                        }
                    }
                    EventKind::Leave => {
                        let p = ev.subject;
                        let stays = self.w.finished(p)
                            && self
                                .w
                                .cfg
                                .churn
                                .as_ref()
                                .is_some_and(|c| c.policy == DeparturePolicy::StayAfterDownload);
                        if !stays {
                            self.depart(p);
                        }
                    }
                    EventKind::PhaseTransition => self.proto.phase_transition(&mut self.w),
                    EventKind::Retry => self.proto.retry(&mut self.w, ev.subject),
                }
                let next_is_join =
                    self.w.heap.peek().is_some_and(|Reverse(e)| e.time <= self.w.now && e.kind == EventKind::Join);
                if !next_is_join {
                    for p in joined.drain(..) {
                        self.finish_join(p);
                    }
                }
            }
            self.schedule_dirty();
            if self.w.heap.peek().is_some_and(|Reverse(e)| e.time <= self.w.now) {
                continue;
            }
            if self.done() {
                break;
            }
            if self.w.rates_dirty {
                self.replan();
            }
            let now = self.w.now;
            let finish_of = |t: &Transfer| if t.rate > 0.0 { now + t.remaining / t.rate } else { f64::INFINITY };
            let next_flow = self.w.transfers.iter().map(finish_of).fold(f64::INFINITY, f64::min);
            let next_event = self.w.heap.peek().map_or(f64::INFINITY, |Reverse(e)| e.time);
            let next = next_flow.min(next_event);
            if !next.is_finite() {
                stalled = true;
                break;
            }
            if next > self.w.cfg.horizon {
                let h = self.w.cfg.horizon;
                self.advance(h);
                horizon_exceeded = true;
                break;
            }
            let tol = 1e-12 * next.abs().max(1.0);
            let ends: Vec<bool> = self.w.transfers.iter().map(|t| finish_of(t) <= next + tol).collect();
            self.advance(next);
            if !ends.contains(&true) {
                continue;
            }
            let mut done = Vec::new();
            let mut kept = Vec::with_capacity(self.w.transfers.len());
            for (t, end) in std::mem::take(&mut self.w.transfers).into_iter().zip(ends) {
                if end {
                    done.push(t);
                } else {
                    kept.push(t);
                }
            }
            self.w.transfers = kept;
            self.w.rates_dirty = true;
            for t in done {
                self.events += 1;
                self.w.nodes[t.src as usize].uploaded += t.remaining;
                self.release_slots(&t);
                self.w.mark(t.src);
                self.w.mark_with_neighbours(t.dst);
                let lost = sample_link_failure(&self.w.failure, &mut self.w.fail_rng);
                self.proto.delivered(&mut self.w, t, lost);
            }
        }
        let groups = self.proto.groups_formed();
        let trace = self.w.metrics.trace.take().unwrap_or_default();
        Ok((self.report(groups, horizon_exceeded, stalled), trace))
    }

    fn report(&self, groups: u32, horizon_exceeded: bool, stalled: bool) -> MetricsReport {
        let w = &self.w;
        let makespan = w.now;
        let peers = &w.nodes[1..];
        let joined: Vec<&Node> = peers.iter().filter(|n| n.status != Status::Waiting).collect();
        let finish: Vec<f64> = joined.iter().filter_map(|n| n.finished_at.map(|f| f - n.joined_at)).collect();
        let finished = finish.len() as u32;
        let unfinished = joined.len() as u32 - finished;
        let avg = if finish.is_empty() { 0.0 } else { finish.iter().sum::<f64>() / finish.len() as f64 };
        let max = finish.iter().copied().fold(0.0, f64::max);
        let uploaded: f64 = peers.iter().map(|n| n.uploaded).sum();
        let links = w.metrics.link_records();
        let used: Vec<&super::LinkRecord> =
            links.iter().filter(|l| l.packets > 0 && l.a != super::metrics::ACCESS_LINK).collect();
        let mean_stress =
            if used.is_empty() { 0.0 } else { used.iter().map(|l| l.stress).sum::<f64>() / used.len() as f64 };
        let max_stress = used.iter().map(|l| l.stress).fold(0.0, f64::max);
        let per_packet = match w.cfg.protocol {
            ProtocolKind::Tnnc => 0,
            ProtocolKind::Fncm => CodedPacket::vector_bytes(w.cfg.field, w.cfg.chunks_per_segment as usize) as u64,
            ProtocolKind::Dsnc => CodedPacket::vector_bytes(w.cfg.field, w.cfg.group_size as usize) as u64,
        };
        let progress_input: Vec<(f64, Vec<f64>)> = joined
            .iter()
            .filter(|n| n.finished_at.is_some())
            .map(|n| (n.joined_at, n.segment_done.iter().flatten().copied().collect()))
            .collect();
        let m = &w.metrics;
        MetricsReport {
            protocol: w.cfg.protocol.name().to_string(),
            peers: w.peers(),
            seed: w.cfg.seed,
            throughput: if makespan > 0.0 { uploaded / makespan } else { 0.0 },
            avg_finish_time: avg,
            max_finish_time: max,
            failure_rate: if joined.is_empty() { 0.0 } else { f64::from(unfinished) / joined.len() as f64 },
            mean_link_stress: mean_stress,
            max_link_stress: max_stress,
            access_link_stress: m.access.stress(),
            message_overhead: m.coded_packets * per_packet,
            overhead_per_packet: per_packet,
            access_link_traffic: m.access_bytes,
            peer_uploaded_bytes: uploaded.round() as u64,
            server_uploaded_bytes: w.nodes[0].uploaded.round() as u64,
            makespan,
            joined: joined.len() as u32,
            finished,
            unfinished,
            per_segment_progress: segment_progress(&progress_input, w.plan.segment_count as usize),
            transmissions: m.transmissions,
            lost: m.lost,
            coded_packets: m.coded_packets,
            non_innovative: m.non_innovative,
            fallback_vectors: m.fallback_vectors,
            hash_mismatches: w.hash_mismatches,
            native_sends: m.native_sends,
            groups_formed: groups,
            max_capacity_overload: m.max_overload,
            horizon_exceeded,
            stalled,
            events: self.events,
            links,
        }
    }
}
