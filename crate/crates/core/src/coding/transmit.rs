//! Constraint initialization, vector selection, backlog updates and the
//! per-group transmission loop built on them.

use super::{
    encode, CodedPacket, CodingError, CodingVectorPool, DecoderState, GroupLayout, PacketGroup, VectorUniverse,
};
use crate::gf::{Field, FieldElement};
use rand::Rng;
use std::sync::Arc;

/// `lacks[i][j]` is true while peer `i` still lacks native slot `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceptionIndicator {
    lacks: Vec<Vec<bool>>,
}

impl ReceptionIndicator {
    /// Builds the matrix from per-peer holdings of the group's slots.
    /// Padding columns are forced to zero.
    pub fn from_holdings(layout: &GroupLayout, holds: &[Vec<bool>]) -> Result<Self, CodingError> {
        let size = layout.size as usize;
        let lacks = holds
            .iter()
            .map(|row| {
                if row.len() != size {
                    return Err(CodingError::LengthMismatch { expected: size, got: row.len() });
                }
                Ok(row.iter().enumerate().map(|(j, &h)| !h && !layout.is_padding(j)).collect())
            })
            .collect::<Result<_, _>>()?;
        Ok(ReceptionIndicator { lacks })
    }

    pub fn peers(&self) -> usize {
        self.lacks.len()
    }

    pub fn lacks(&self, peer: usize, slot: usize) -> bool {
        self.lacks[peer][slot]
    }

    pub fn missing(&self, peer: usize) -> u32 {
        self.lacks[peer].iter().filter(|&&l| l).count() as u32
    }
}

/// Innovative packets each peer still needs for the current group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BacklogCounter(Vec<u32>);

impl BacklogCounter {
    pub fn new(counts: Vec<u32>) -> Self {
        BacklogCounter(counts)
    }

    pub fn get(&self, peer: usize) -> u32 {
        self.0[peer]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn any(&self) -> bool {
        self.0.iter().any(|&c| c > 0)
    }

    pub fn backlogged(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, _)| i)
    }
}

/// Which peers received one transmitted vector. `vector` is `None` for a
/// fallback vector outside the universe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryReport {
    pub vector: Option<usize>,
    pub receivers: Vec<usize>,
}

/// Backlogs from the indicator rows, and a pool without the unit vectors of
/// any slot some peer already holds. Those holders are recorded so the unit
/// vectors can be reused after they finish.
pub fn constraint_init(
    layout: &GroupLayout,
    indicators: &ReceptionIndicator,
    universe: &Arc<VectorUniverse>,
) -> Result<(BacklogCounter, CodingVectorPool), CodingError> {
    let size = layout.size as usize;
    if universe.dimension() != size {
        return Err(CodingError::LengthMismatch { expected: size, got: universe.dimension() });
    }
    if let Some(row) = indicators.lacks.iter().find(|r| r.len() != size) {
        return Err(CodingError::LengthMismatch { expected: size, got: row.len() });
    }
    let backlog = BacklogCounter((0..indicators.peers()).map(|i| indicators.missing(i)).collect());
    let mut pool = CodingVectorPool::new(Arc::clone(universe));
    for j in 0..size {
        for i in 0..indicators.peers() {
            if !indicators.lacks(i, j) {
                pool.withdraw(universe.unit(j), i);
            }
        }
    }
    Ok((backlog, pool))
}

pub fn select_vector<R: Rng + ?Sized>(pool: &mut CodingVectorPool, rng: &mut R) -> Result<usize, CodingError> {
    pool.select(rng)
}

/// Applies one delivery report. Returns the peers that finished the group.
///
/// A receiver that is not backlogged is ignored. A backlogged receiver that is
/// offered a universe vector it already holds is a protocol bug: counting it
/// would let the backlog drift below the true rank deficit.
pub fn constraint_update(
    backlog: &mut BacklogCounter,
    pool: &mut CodingVectorPool,
    report: &DeliveryReport,
) -> Result<Vec<usize>, CodingError> {
    let mut finished = Vec::new();
    for &r in &report.receivers {
        let count = backlog
            .0
            .get_mut(r)
            .ok_or_else(|| CodingError::Consistency(format!("receiver {r} is not in the audience")))?;
        if *count == 0 {
            continue;
        }
        if let Some(v) = report.vector {
            if pool.holders(v).contains(&r) {
                return Err(CodingError::Consistency(format!("peer {r} received vector {v} twice")));
            }
            pool.add_holder(v, r);
        }
        *count -= 1;
        if *count == 0 {
            finished.push(r);
        }
    }
    if let Some(v) = report.vector {
        pool.restore(v);
    }
    if !finished.is_empty() {
        pool.release_completed(backlog.as_slice());
    }
    Ok(finished)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransmitOptions {
    /// Extra sends of one packet while it reaches no backlogged peer.
    pub retry_cap: u32,
    /// Consecutive packets that reach nobody before the loop gives up.
    pub max_idle: u32,
    /// Random draws tried per fallback vector.
    pub fallback_draws: u32,
}

impl Default for TransmitOptions {
    fn default() -> Self {
        TransmitOptions { retry_cap: 10, max_idle: 64, fallback_draws: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransmitRecord {
    pub vector: Option<usize>,
    pub sends: u32,
    pub delivered: Vec<usize>,
    /// Per delivered peer, whether the packet raised its rank.
    pub innovative: Vec<bool>,
    /// Whether the packet was innovative to every peer backlogged at send
    /// time.
    pub innovative_to_all: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransmissionLog {
    pub records: Vec<TransmitRecord>,
    pub sends: u64,
    /// Receptions by a backlogged peer that did not raise its rank.
    pub non_innovative: u64,
    pub fallback_vectors: u64,
}

fn fallback_vector<R: Rng + ?Sized>(
    field: &Field,
    decoders: &[DecoderState],
    backlog: &BacklogCounter,
    n: usize,
    draws: u32,
    rng: &mut R,
) -> Option<Vec<FieldElement>> {
    (0..draws).find_map(|_| {
        let v: Vec<FieldElement> = (0..n).map(|_| field.random(rng)).collect();
        backlog.backlogged().all(|i| decoders[i].is_innovative(&v)).then_some(v)
    })
}

/// Runs the transmission loop for one group until no peer is backlogged.
///
/// `decoders[i]` must already hold what peer `i` holds. `send` performs one
/// transmission and returns the peers that received it.
#[allow(clippy::too_many_arguments)]
pub fn dsnc_transmit_group<R, S>(
    field: &Field,
    group: &PacketGroup,
    decoders: &mut [DecoderState],
    indicators: &ReceptionIndicator,
    universe: &Arc<VectorUniverse>,
    rng: &mut R,
    options: TransmitOptions,
    mut send: S,
) -> Result<TransmissionLog, CodingError>
where
    R: Rng + ?Sized,
    S: FnMut(&CodedPacket) -> Vec<usize>,
{
    if decoders.len() != indicators.peers() {
        return Err(CodingError::LengthMismatch { expected: indicators.peers(), got: decoders.len() });
    }
    let (mut backlog, mut pool) = constraint_init(&group.layout, indicators, universe)?;
    let mut log = TransmissionLog::default();
    let mut idle = 0u32;
    let stall = |backlog: &BacklogCounter, log: &TransmissionLog| CodingError::Stall {
        group_id: group.group_id(),
        backlogged: backlog.backlogged().count(),
        sends: log.sends as usize,
    };
    while backlog.any() {
        let (id, vector) = match select_vector(&mut pool, rng) {
            Ok(i) => (Some(i), universe.vector(i).to_vec()),
            Err(CodingError::PoolExhausted) => {
                log.fallback_vectors += 1;
                let v = fallback_vector(field, decoders, &backlog, group.group_size(), options.fallback_draws, rng)
                    .ok_or_else(|| stall(&backlog, &log))?;
                (None, v)
            }
            Err(e) => return Err(e),
        };
        let packet = encode(field, group, &vector)?;
        let innovative_to_all = backlog.backlogged().all(|i| decoders[i].is_innovative(&vector));

        let mut sends = 0;
        let mut delivered = Vec::new();
        for _ in 0..=options.retry_cap {
            sends += 1;
            delivered = send(&packet);
            delivered.sort_unstable();
            delivered.dedup();
            if delivered.iter().any(|&r| r < decoders.len() && backlog.get(r) > 0) {
                break;
            }
        }
        log.sends += u64::from(sends);

        let mut innovative = Vec::with_capacity(delivered.len());
        for &r in &delivered {
            let decoder = decoders
                .get_mut(r)
                .ok_or_else(|| CodingError::Consistency(format!("receiver {r} is not in the audience")))?;
            let fresh = decoder.insert(&packet)?;
            if backlog.get(r) > 0 && !fresh {
                log.non_innovative += 1;
            }
            innovative.push(fresh);
        }
        let reached = delivered.iter().any(|&r| backlog.get(r) > 0);
        constraint_update(&mut backlog, &mut pool, &DeliveryReport { vector: id, receivers: delivered.clone() })?;
        log.records.push(TransmitRecord { vector: id, sends, delivered, innovative, innovative_to_all });
        if reached {
            idle = 0;
        } else {
            idle += 1;
            if idle > options.max_idle {
                return Err(stall(&backlog, &log));
            }
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::{build_vector_universe, form_packet_groups};
    use crate::gf::FieldSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Setup {
        field: Arc<Field>,
        group: PacketGroup,
        universe: Arc<VectorUniverse>,
    }

    fn setup(n: u32) -> Setup {
        let field = Arc::new(Field::new(FieldSpec::GF256));
        let natives: Vec<Vec<u8>> = (0..n).map(|i| vec![i as u8 + 1; 8]).collect();
        let layout = form_packet_groups(n, n).unwrap()[0];
        let group = PacketGroup::new(layout, &natives).unwrap();
        let universe = Arc::new(build_vector_universe(n as usize, &field).unwrap());
        Setup { field, group, universe }
    }

    fn decoders(s: &Setup, holds: &[Vec<bool>]) -> Vec<DecoderState> {
        holds
            .iter()
            .map(|row| {
                let mut d = DecoderState::for_layout(s.field.clone(), &s.group.layout, 8);
                for (j, &h) in row.iter().enumerate() {
                    if h {
                        d.insert_native(j, s.group.packets[j].clone()).unwrap();
                    }
                }
                d
            })
            .collect()
    }

    #[test]
    fn init_excludes_held_units() {
        let s = setup(3);
        let holds = vec![vec![true, false, false], vec![false, false, false]];
        let ind = ReceptionIndicator::from_holdings(&s.group.layout, &holds).unwrap();
        let (backlog, pool) = constraint_init(&s.group.layout, &ind, &s.universe).unwrap();
        assert_eq!(backlog.as_slice(), &[2, 3]);
        assert!(!pool.is_available(s.universe.unit(0)));
        assert!(pool.is_available(s.universe.unit(1)));
        assert_eq!(pool.available_len(), s.universe.len() - 1);
    }

    #[test]
    fn init_all_complete_and_all_missing() {
        let s = setup(3);
        let ind = ReceptionIndicator::from_holdings(&s.group.layout, &[vec![true; 3]]).unwrap();
        let (backlog, _) = constraint_init(&s.group.layout, &ind, &s.universe).unwrap();
        assert!(!backlog.any());
        let ind = ReceptionIndicator::from_holdings(&s.group.layout, &[vec![false; 3]]).unwrap();
        let (_, pool) = constraint_init(&s.group.layout, &ind, &s.universe).unwrap();
        assert_eq!(pool.available_len(), s.universe.len());
    }

    #[test]
    fn padding_columns_forced_to_zero() {
        let layout = form_packet_groups(3, 4).unwrap()[0];
        let ind = ReceptionIndicator::from_holdings(&layout, &[vec![false; 4]]).unwrap();
        assert_eq!(ind.missing(0), 3);
        assert!(!ind.lacks(0, 3));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let s = setup(3);
        let layout = form_packet_groups(4, 4).unwrap()[0];
        let ind = ReceptionIndicator::from_holdings(&layout, &[vec![false; 4]]).unwrap();
        assert!(constraint_init(&layout, &ind, &s.universe).is_err());
    }

    #[test]
    fn update_decrements_and_ignores_finished() {
        let s = setup(3);
        let holds = vec![vec![true, true, false], vec![true, true, true]];
        let ind = ReceptionIndicator::from_holdings(&s.group.layout, &holds).unwrap();
        let (mut backlog, mut pool) = constraint_init(&s.group.layout, &ind, &s.universe).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = select_vector(&mut pool, &mut rng).unwrap();
        let done =
            constraint_update(&mut backlog, &mut pool, &DeliveryReport { vector: Some(v), receivers: vec![0, 1] })
                .unwrap();
        assert_eq!(done, vec![0]);
        assert_eq!(backlog.as_slice(), &[0, 0]);
        // Everyone is done, so every withdrawn vector is back.
        assert_eq!(pool.available_len(), s.universe.len());
    }

    #[test]
    fn duplicate_delivery_is_inconsistent() {
        let s = setup(3);
        let ind = ReceptionIndicator::from_holdings(&s.group.layout, &[vec![false; 3]]).unwrap();
        let (mut backlog, mut pool) = constraint_init(&s.group.layout, &ind, &s.universe).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = select_vector(&mut pool, &mut rng).unwrap();
        let report = DeliveryReport { vector: Some(v), receivers: vec![0] };
        constraint_update(&mut backlog, &mut pool, &report).unwrap();
        assert!(matches!(constraint_update(&mut backlog, &mut pool, &report), Err(CodingError::Consistency(_))));
    }

    #[test]
    fn single_peer_missing_k_needs_k_sends() {
        let s = setup(6);
        for k in 0..=6usize {
            let holds = vec![(0..6).map(|j| j >= k).collect::<Vec<_>>()];
            let ind = ReceptionIndicator::from_holdings(&s.group.layout, &holds).unwrap();
            let mut decs = decoders(&s, &holds);
            let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
            let log = dsnc_transmit_group(
                &s.field,
                &s.group,
                &mut decs,
                &ind,
                &s.universe,
                &mut rng,
                TransmitOptions::default(),
                |_| vec![0],
            )
            .unwrap();
            assert_eq!(log.sends, k as u64);
            assert_eq!(log.records.len(), k);
            if k > 0 {
                assert_eq!(decs[0].solve().unwrap(), s.group.packets);
            }
        }
    }

    #[test]
    fn disjoint_halves_need_at_most_four() {
        let s = setup(4);
        let holds = vec![vec![true, true, false, false], vec![false, false, true, true]];
        let ind = ReceptionIndicator::from_holdings(&s.group.layout, &holds).unwrap();
        let mut decs = decoders(&s, &holds);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let log = dsnc_transmit_group(
            &s.field,
            &s.group,
            &mut decs,
            &ind,
            &s.universe,
            &mut rng,
            TransmitOptions::default(),
            |_| vec![0, 1],
        )
        .unwrap();
        assert!(log.sends <= 4);
        assert_eq!(log.non_innovative, 0);
        assert!(log.records.iter().all(|r| r.innovative_to_all && r.innovative.iter().all(|&b| b)));
    }

    #[test]
    fn nothing_backlogged_gives_empty_log() {
        let s = setup(2);
        let holds = vec![vec![true, true]];
        let ind = ReceptionIndicator::from_holdings(&s.group.layout, &holds).unwrap();
        let mut decs = decoders(&s, &holds);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let log = dsnc_transmit_group(
            &s.field,
            &s.group,
            &mut decs,
            &ind,
            &s.universe,
            &mut rng,
            TransmitOptions::default(),
            |_| panic!("nothing should be sent"),
        )
        .unwrap();
        assert!(log.records.is_empty());
    }

    #[test]
    fn lossy_delivery_retries_and_stays_innovative() {
        let s = setup(8);
        let holds: Vec<Vec<bool>> = (0..6).map(|i| (0..8).map(|j| (i + j) % 3 == 0).collect()).collect();
        let ind = ReceptionIndicator::from_holdings(&s.group.layout, &holds).unwrap();
        let mut decs = decoders(&s, &holds);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut loss = ChaCha8Rng::seed_from_u64(80);
        let log = dsnc_transmit_group(
            &s.field,
            &s.group,
            &mut decs,
            &ind,
            &s.universe,
            &mut rng,
            TransmitOptions::default(),
            |_| (0..6).filter(|_| loss.random_bool(0.5)).collect(),
        )
        .unwrap();
        assert_eq!(log.non_innovative, 0);
        assert!(log.records.iter().all(|r| r.innovative_to_all));
        for d in &decs {
            assert_eq!(d.solve().unwrap(), s.group.packets);
        }
    }

    #[test]
    fn stall_when_nothing_arrives() {
        let s = setup(2);
        let holds = vec![vec![false, false]];
        let ind = ReceptionIndicator::from_holdings(&s.group.layout, &holds).unwrap();
        let mut decs = decoders(&s, &holds);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let opts = TransmitOptions { retry_cap: 1, max_idle: 3, fallback_draws: 4 };
        let err = dsnc_transmit_group(&s.field, &s.group, &mut decs, &ind, &s.universe, &mut rng, opts, |_| vec![])
            .unwrap_err();
        assert!(matches!(err, CodingError::Stall { backlogged: 1, .. }));
    }
}
