//! Max-min fair rate allocation by progressive filling.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Capacity owners shared by flows: upload and download of each node plus
/// the campus access link.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthModel {
    pub upload: Vec<f64>,
    pub download: Vec<f64>,
    pub access: f64,
}

impl BandwidthModel {
    pub fn resource_count(&self) -> usize {
        self.upload.len() + self.download.len() + 1
    }

    pub fn up(&self, node: usize) -> usize {
        node
    }

    pub fn down(&self, node: usize) -> usize {
        self.upload.len() + node
    }

    pub fn access_link(&self) -> usize {
        self.upload.len() + self.download.len()
    }

    pub fn capacities(&self) -> Vec<f64> {
        let mut caps = self.upload.clone();
        caps.extend_from_slice(&self.download);
        caps.push(self.access);
        caps
    }

    /// Resources used by a flow from `src` to `dst`.
    pub fn path(&self, src: usize, dst: usize, crosses: bool) -> Vec<usize> {
        self.flow(src, dst, crosses).resources().collect()
    }

    pub fn flow(&self, src: usize, dst: usize, crosses: bool) -> FlowPath {
        if crosses {
            FlowPath::new(&[self.up(src), self.down(dst), self.access_link()])
        } else {
            FlowPath::new(&[self.up(src), self.down(dst)])
        }
    }
}

/// Resources crossed by one flow: at most upload, download and access link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowPath {
    res: [u32; 3],
    len: u8,
}

impl FlowPath {
    pub fn new(resources: &[usize]) -> Self {
        assert!(resources.len() <= 3, "a flow crosses at most three resources");
        let mut res = [0u32; 3];
        for (slot, &r) in res.iter_mut().zip(resources) {
            *slot = r as u32;
        }
        FlowPath { res, len: resources.len() as u8 }
    }

    pub fn resources(&self) -> impl Iterator<Item = usize> + '_ {
        self.res[..self.len as usize].iter().map(|&r| r as usize)
    }
}

#[derive(PartialEq)]
struct Level {
    share: f64,
    resource: u32,
    stamp: u32,
}

impl Eq for Level {}

impl Ord for Level {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on share, then resource index.
        other.share.total_cmp(&self.share).then(other.resource.cmp(&self.resource))
    }
}

impl PartialOrd for Level {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Progressive filling with buffers kept across calls.
///
/// The resource with the smallest fair share is the bottleneck of all its
/// unfixed flows. Fixing them never lowers another resource's share, so stale
/// heap entries can simply be skipped.
#[derive(Default)]
pub struct MaxMinSolver {
    start: Vec<usize>,
    users: Vec<u32>,
    remaining: Vec<f64>,
    count: Vec<u32>,
    stamp: Vec<u32>,
    fixed: Vec<bool>,
    heap: BinaryHeap<Level>,
    rates: Vec<f64>,
}

impl MaxMinSolver {
    pub fn solve(&mut self, capacities: &[f64], flows: &[FlowPath]) -> &[f64] {
        let r_count = capacities.len();
        self.rates.clear();
        self.rates.resize(flows.len(), 0.0);
        if flows.is_empty() {
            return &self.rates;
        }
        self.count.clear();
        self.count.resize(r_count, 0);
        for f in flows {
            for r in f.resources() {
                self.count[r] += 1;
            }
        }
        self.start.clear();
        self.start.resize(r_count + 1, 0);
        for r in 0..r_count {
            self.start[r + 1] = self.start[r] + self.count[r] as usize;
        }
        self.users.clear();
        self.users.resize(self.start[r_count], 0);
        let mut fill = self.start[..r_count].to_vec();
        for (i, f) in flows.iter().enumerate() {
            for r in f.resources() {
                self.users[fill[r]] = i as u32;
                fill[r] += 1;
            }
        }
        self.remaining.clear();
        self.remaining.extend_from_slice(capacities);
        self.stamp.clear();
        self.stamp.resize(r_count, 0);
        self.fixed.clear();
        self.fixed.resize(flows.len(), false);
        let mut levels = std::mem::take(&mut self.heap).into_vec();
        levels.clear();
        levels.extend((0..r_count).filter(|&r| self.count[r] > 0).map(|r| Level {
            share: self.remaining[r] / f64::from(self.count[r]),
            resource: r as u32,
            stamp: 0,
        }));
        self.heap = BinaryHeap::from(levels);
        while let Some(Level { share, resource, stamp: s }) = self.heap.pop() {
            let resource = resource as usize;
            if s != self.stamp[resource] || self.count[resource] == 0 {
                continue;
            }
            let share = share.max(0.0);
            for u in self.start[resource]..self.start[resource + 1] {
                let f = self.users[u] as usize;
                if self.fixed[f] {
                    continue;
                }
                self.fixed[f] = true;
                self.rates[f] = share;
                for r in flows[f].resources() {
                    self.remaining[r] = (self.remaining[r] - share).max(0.0);
                    self.count[r] -= 1;
                    self.stamp[r] += 1;
                    if self.count[r] > 0 && r != resource {
                        let level = self.remaining[r] / f64::from(self.count[r]);
                        self.heap.push(Level { share: level, resource: r as u32, stamp: self.stamp[r] });
                    }
                }
            }
        }
        &self.rates
    }
}

/// Max-min fair rates for `flows`, each a list of resource indices, under
/// `capacities`. Every resource with flows ends up either saturated or with
/// all its flows limited elsewhere.
pub fn allocate_bandwidth(capacities: &[f64], flows: &[Vec<usize>]) -> Vec<f64> {
    let paths: Vec<FlowPath> = flows.iter().map(|f| FlowPath::new(f)).collect();
    MaxMinSolver::default().solve(capacities, &paths).to_vec()
}

/// Largest relative overshoot of any resource under `rates`; zero when all
/// caps hold.
pub fn max_overload(capacities: &[f64], flows: &[FlowPath], rates: &[f64]) -> f64 {
    let mut load = vec![0.0; capacities.len()];
    for (path, &rate) in flows.iter().zip(rates) {
        for r in path.resources() {
            load[r] += rate;
        }
    }
    load.iter().zip(capacities).map(|(&l, &c)| ((l - c) / c).max(0.0)).fold(0.0, f64::max)
}
