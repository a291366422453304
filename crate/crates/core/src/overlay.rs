//! Peer population, random overlay with a campus access link, similarity
//! grouping with super-peers, churn and link-failure models.

use fixedbitset::FixedBitSet;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

pub type NodeId = u32;

/// Node 0 of every topology is the content server.
pub const SERVER: NodeId = 0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OverlayError {
    #[error("invalid topology configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerProfile {
    pub peer_id: NodeId,
    pub upload_capacity: u64,
    pub download_capacity: u64,
    pub in_campus: bool,
    pub content: FixedBitSet,
    /// Bytes of content this peer holds and offers to others.
    pub contribution: u64,
    pub interested: bool,
}

impl PeerProfile {
    pub fn new(peer_id: NodeId, upload_capacity: u64, download_capacity: u64, in_campus: bool, chunks: usize) -> Self {
        PeerProfile {
            peer_id,
            upload_capacity,
            download_capacity,
            in_campus,
            content: FixedBitSet::with_capacity(chunks),
            contribution: 0,
            interested: true,
        }
    }
}

/// Share of chunks held by exactly one of the two peers among those held by
/// either. Zero when neither holds anything.
pub fn dissimilarity(a: &FixedBitSet, b: &FixedBitSet) -> f64 {
    let union = a.union_count(b);
    if union == 0 {
        return 0.0;
    }
    a.symmetric_difference_count(b) as f64 / union as f64
}

/// Dissimilarity of the two bitmaps times the candidate's contribution.
/// Peers that do not want the content score zero.
pub fn interest_score(requester: &PeerProfile, candidate: &PeerProfile) -> f64 {
    if !requester.interested || !candidate.interested {
        return 0.0;
    }
    dissimilarity(&requester.content, &candidate.content) * candidate.contribution as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub group_id: u32,
    pub members: Vec<NodeId>,
    pub super_peers: Vec<NodeId>,
    /// Packet groups this group is nominally responsible for spreading.
    pub share: Vec<u32>,
}

impl Group {
    pub fn contains(&self, id: NodeId) -> bool {
        self.members.contains(&id)
    }
}

/// Highest upload capacity, ties to the lowest id. `None` for no members.
pub fn elect_super_peer<'a, I>(members: I) -> Option<NodeId>
where
    I: IntoIterator<Item = &'a PeerProfile>,
{
    members
        .into_iter()
        .max_by(|a, b| a.upload_capacity.cmp(&b.upload_capacity).then(b.peer_id.cmp(&a.peer_id)))
        .map(|p| p.peer_id)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupingOptions {
    /// A candidate is accepted when the score strictly exceeds this.
    pub threshold: f64,
    pub max_group_size: usize,
}

impl Default for GroupingOptions {
    fn default() -> Self {
        GroupingOptions { threshold: 0.0, max_group_size: 8 }
    }
}

/// Greeting-based grouping.
///
/// Peers greet in ascending id. A peer joins the group of the first
/// neighbour (ascending id) that is already grouped, sits on the same side
/// of the access link, has room, and scores above the threshold. Otherwise it
/// starts its own group. `profiles` is indexed by position, `neighbours[i]`
/// lists positions.
pub fn form_groups(profiles: &[PeerProfile], neighbours: &[Vec<usize>], options: GroupingOptions) -> Vec<Group> {
    let mut order: Vec<usize> = (0..profiles.len()).collect();
    order.sort_by_key(|&i| profiles[i].peer_id);
    let mut group_of: Vec<Option<usize>> = vec![None; profiles.len()];
    let mut members: Vec<Vec<usize>> = Vec::new();
    for &i in &order {
        if !profiles[i].interested {
            continue;
        }
        let mut near: Vec<usize> = neighbours.get(i).cloned().unwrap_or_default();
        near.sort_by_key(|&j| profiles[j].peer_id);
        let host = near.into_iter().find_map(|j| {
            let g = group_of[j]?;
            let fits = profiles[j].in_campus == profiles[i].in_campus
                && members[g].len() < options.max_group_size.max(1)
                && interest_score(&profiles[i], &profiles[j]) > options.threshold;
            fits.then_some(g)
        });
        let g = host.unwrap_or_else(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[g].push(i);
        group_of[i] = Some(g);
    }
    members
        .into_iter()
        .enumerate()
        .map(|(g, m)| {
            let head = elect_super_peer(m.iter().map(|&i| &profiles[i])).expect("groups are non-empty");
            Group {
                group_id: g as u32,
                members: m.iter().map(|&i| profiles[i].peer_id).collect(),
                super_peers: vec![head],
                share: Vec::new(),
            }
        })
        .collect()
}

/// Assigns packet groups to groups round-robin.
pub fn assign_shares(groups: &mut [Group], packet_groups: u32) {
    if groups.is_empty() {
        return;
    }
    for g in groups.iter_mut() {
        g.share.clear();
    }
    let n = groups.len() as u32;
    for k in 0..packet_groups {
        groups[(k % n) as usize].share.push(k);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityTier {
    pub fraction: f64,
    /// Relative capacity; tiers are rescaled so the population mean matches
    /// the homogeneous capacity.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    pub peers: u32,
    /// Target mean overlay degree among peers.
    pub degree: u32,
    /// Peers the server connects to.
    pub server_degree: u32,
    pub campus_fraction: f64,
    /// Bytes per second.
    pub peer_upload: u64,
    pub peer_download: u64,
    pub server_upload: u64,
    pub access_capacity: u64,
    /// Empty means homogeneous capacities.
    pub tiers: Vec<CapacityTier>,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        let peer_upload = 256 * 1024;
        TopologyConfig {
            peers: 100,
            degree: 8,
            server_degree: 8,
            campus_fraction: 0.3,
            peer_upload,
            peer_download: 1024 * 1024,
            server_upload: 4 * peer_upload,
            access_capacity: 16 * peer_upload,
            tiers: Vec::new(),
        }
    }
}

impl TopologyConfig {
    pub fn validate(&self) -> Result<(), OverlayError> {
        let bad = |m: &str| Err(OverlayError::Invalid(m.to_string()));
        if self.peers == 0 {
            return bad("peer count must be at least 1");
        }
        if self.degree == 0 || self.server_degree == 0 {
            return bad("degrees must be positive");
        }
        if !(0.0..=1.0).contains(&self.campus_fraction) {
            return bad("campus fraction must lie in [0, 1]");
        }
        if self.peer_upload == 0 || self.peer_download == 0 || self.server_upload == 0 || self.access_capacity == 0 {
            return bad("capacities must be positive");
        }
        if !self.tiers.is_empty() {
            let total: f64 = self.tiers.iter().map(|t| t.fraction).sum();
            if self.tiers.iter().any(|t| t.fraction < 0.0 || t.weight <= 0.0) || (total - 1.0).abs() > 1e-9 {
                return bad("tier fractions must be non-negative and sum to 1, weights positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub upload: u64,
    pub download: u64,
    pub in_campus: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    /// Index 0 is the server.
    pub nodes: Vec<NodeSpec>,
    pub adjacency: Vec<Vec<NodeId>>,
    pub access_capacity: u64,
}

impl Topology {
    pub fn peer_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency[a as usize].contains(&b)
    }

    pub fn add_edge(&mut self, a: NodeId, b: NodeId) -> bool {
        if a == b || self.has_edge(a, b) {
            return false;
        }
        self.adjacency[a as usize].push(b);
        self.adjacency[b as usize].push(a);
        true
    }

    pub fn remove_edge(&mut self, a: NodeId, b: NodeId) {
        self.adjacency[a as usize].retain(|&x| x != b);
        self.adjacency[b as usize].retain(|&x| x != a);
    }

    /// Undirected edges with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out: Vec<(NodeId, NodeId)> = self
            .adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, ns)| ns.iter().filter(move |&&b| (a as NodeId) < b).map(move |&b| (a as NodeId, b)))
            .collect();
        out.sort_unstable();
        out
    }

    /// Whether traffic between `a` and `b` uses the campus access link.
    pub fn crosses(&self, a: NodeId, b: NodeId) -> bool {
        self.nodes[a as usize].in_campus != self.nodes[b as usize].in_campus
    }

    /// Mean degree over peers, server edges excluded.
    pub fn mean_peer_degree(&self) -> f64 {
        let n = self.peer_count();
        let total: usize = (1..=n).map(|i| self.adjacency[i].iter().filter(|&&b| b != SERVER).count()).sum();
        total as f64 / n as f64
    }

    /// One `a b capacity` line per edge; capacity is the smaller upload cap.
    pub fn edge_list(&self) -> String {
        let mut out = String::new();
        for (a, b) in self.edges() {
            let cap = self.nodes[a as usize].upload.min(self.nodes[b as usize].upload);
            writeln!(out, "{a} {b} {cap}").expect("writing to a string");
        }
        out
    }
}

/// Random overlay: peers pair up stubs of the target degree, the graph is
/// then stitched into one component and the server attaches to a random
/// subset of peers.
pub fn generate_topology<R: Rng + ?Sized>(cfg: &TopologyConfig, rng: &mut R) -> Result<Topology, OverlayError> {
    cfg.validate()?;
    let n = cfg.peers as usize;
    let campus = (cfg.campus_fraction * n as f64).round() as usize;
    let mut campus_flags: Vec<bool> = (0..n).map(|i| i < campus).collect();
    campus_flags.shuffle(rng);

    let weights = tier_weights(cfg, n, rng);
    let mut nodes = vec![NodeSpec { upload: cfg.server_upload, download: cfg.server_upload, in_campus: false }];
    for i in 0..n {
        nodes.push(NodeSpec {
            upload: ((cfg.peer_upload as f64) * weights[i]).round().max(1.0) as u64,
            download: ((cfg.peer_download as f64) * weights[i]).round().max(1.0) as u64,
            in_campus: campus_flags[i],
        });
    }
    let mut topo = Topology { nodes, adjacency: vec![Vec::new(); n + 1], access_capacity: cfg.access_capacity };

    if n > 1 {
        let d = (cfg.degree as usize).min(n - 1);
        let mut stubs: Vec<NodeId> = (1..=n as NodeId).flat_map(|p| std::iter::repeat_n(p, d)).collect();
        stubs.shuffle(rng);
        for pair in stubs.chunks_exact(2) {
            topo.add_edge(pair[0], pair[1]);
        }
        connect_components(&mut topo, rng);
    }
    let mut peers: Vec<NodeId> = (1..=n as NodeId).collect();
    peers.shuffle(rng);
    for &p in peers.iter().take((cfg.server_degree as usize).min(n)) {
        topo.add_edge(SERVER, p);
    }
    Ok(topo)
}

/// Capacity multipliers whose mean over the population is exactly one.
fn tier_weights<R: Rng + ?Sized>(cfg: &TopologyConfig, n: usize, rng: &mut R) -> Vec<f64> {
    if cfg.tiers.is_empty() {
        return vec![1.0; n];
    }
    let mut w = Vec::with_capacity(n);
    let mut assigned = 0usize;
    for (i, t) in cfg.tiers.iter().enumerate() {
        let count = if i + 1 == cfg.tiers.len() {
            n - assigned
        } else {
            ((t.fraction * n as f64).round() as usize).min(n - assigned)
        };
        w.extend(std::iter::repeat_n(t.weight, count));
        assigned += count;
    }
    w.shuffle(rng);
    let mean = w.iter().sum::<f64>() / n as f64;
    w.iter().map(|x| x / mean).collect()
}

fn connect_components<R: Rng + ?Sized>(topo: &mut Topology, rng: &mut R) {
    let n = topo.peer_count();
    let mut comp = vec![usize::MAX; n + 1];
    let mut reps: Vec<Vec<NodeId>> = Vec::new();
    for start in 1..=n {
        if comp[start] != usize::MAX {
            continue;
        }
        let c = reps.len();
        let mut members = vec![start as NodeId];
        comp[start] = c;
        let mut i = 0;
        while i < members.len() {
            let u = members[i] as usize;
            for &v in &topo.adjacency[u] {
                if v != SERVER && comp[v as usize] == usize::MAX {
                    comp[v as usize] = c;
                    members.push(v);
                }
            }
            i += 1;
        }
        reps.push(members);
    }
    for w in 1..reps.len() {
        let a = reps[w - 1][rng.random_range(0..reps[w - 1].len())];
        let b = reps[w][rng.random_range(0..reps[w].len())];
        topo.add_edge(a, b);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeparturePolicy {
    StayAfterDownload,
    LeaveAfterDownload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChurnModel {
    /// Share of peers present at time zero; the rest arrive later.
    pub initial_fraction: f64,
    /// Poisson arrival rate of the remaining peers, per second.
    pub arrival_rate: f64,
    /// Mean of the exponential lifetime; a peer still downloading when it
    /// expires leaves. `None` means peers never give up.
    #[serde(default)]
    pub mean_lifetime: Option<f64>,
    pub policy: DeparturePolicy,
}

impl ChurnModel {
    pub fn validate(&self) -> Result<(), OverlayError> {
        let ok = (0.0..=1.0).contains(&self.initial_fraction)
            && self.arrival_rate >= 0.0
            && self.mean_lifetime.is_none_or(|m| m > 0.0)
            && (self.initial_fraction > 0.0 || self.arrival_rate > 0.0);
        if ok {
            Ok(())
        } else {
            Err(OverlayError::Invalid("churn rates must be non-negative and some peer must arrive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChurnKind {
    Join,
    Lifetime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChurnEvent {
    pub time: f64,
    pub peer: NodeId,
    pub kind: ChurnKind,
}

/// Arrival times of a rate-`rate` Poisson process on `[0, horizon)`.
pub fn sample_arrivals<R: Rng + ?Sized>(rate: f64, horizon: f64, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::new();
    if rate <= 0.0 {
        return out;
    }
    let exp = Exp::new(rate).expect("positive rate");
    let mut t = exp.sample(rng);
    while t < horizon {
        out.push(t);
        t += exp.sample(rng);
    }
    out
}

/// Join and lifetime-expiry events for peers `1..=peers`, within the horizon,
/// sorted by time then peer.
pub fn sample_churn_events<R: Rng + ?Sized>(
    model: &ChurnModel,
    peers: u32,
    horizon: f64,
    rng: &mut R,
) -> Vec<ChurnEvent> {
    let initial = (model.initial_fraction * f64::from(peers)).round() as u32;
    let mut order: Vec<NodeId> = (1..=peers).collect();
    order.shuffle(rng);
    let arrival = (model.arrival_rate > 0.0).then(|| Exp::new(model.arrival_rate).expect("positive rate"));
    let lifetime = model.mean_lifetime.map(|m| Exp::new(1.0 / m).expect("positive mean"));
    let mut events = Vec::new();
    let mut t = 0.0;
    for (k, &peer) in order.iter().enumerate() {
        let join = if (k as u32) < initial {
            0.0
        } else if let Some(a) = &arrival {
            t += a.sample(rng);
            t
        } else {
            f64::INFINITY
        };
        if join >= horizon && join > 0.0 {
            continue;
        }
        events.push(ChurnEvent { time: join, peer, kind: ChurnKind::Join });
        if let Some(l) = &lifetime {
            let end = join + l.sample(rng);
            if end < horizon {
                events.push(ChurnEvent { time: end, peer, kind: ChurnKind::Lifetime });
            }
        }
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.peer.cmp(&b.peer)).then(a.kind.cmp(&b.kind)));
    events
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkFailureModel {
    pub p_fail: f64,
}

impl LinkFailureModel {
    pub fn new(p_fail: f64) -> Result<Self, OverlayError> {
        if (0.0..=1.0).contains(&p_fail) {
            Ok(LinkFailureModel { p_fail })
        } else {
            Err(OverlayError::Invalid(format!("failure probability {p_fail} outside [0, 1]")))
        }
    }
}

/// Whether one transmission is lost.
pub fn sample_link_failure<R: Rng + ?Sized>(model: &LinkFailureModel, rng: &mut R) -> bool {
    if model.p_fail <= 0.0 {
        false
    } else if model.p_fail >= 1.0 {
        true
    } else {
        rng.random_bool(model.p_fail)
    }
}
