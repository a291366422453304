//! Coupon-collector expectations for plain draws and for random linear
//! combinations, with Monte Carlo estimators for both.
//!
//! In the coded variant a draw is a uniform vector of `GF(q)^s` and succeeds
//! when it raises the collected rank. `q` here is the field order.

use crate::coding::DecoderState;
use crate::gf::{Field, FieldElement, FieldSpec};
use crate::par::{stream_rng, Execution};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CouponError {
    #[error("index {i} outside 1..={s}")]
    IndexOutOfRange { i: u32, s: u32 },
    #[error("coupon universe must be non-empty")]
    EmptyUniverse,
    #[error("field order must be at least 2, got {0}")]
    OrderTooSmall(u64),
    #[error("Monte Carlo needs a field order 2^k with 1 <= k <= 16, got {0}")]
    UnsupportedOrder(u64),
    #[error("at least one trial is required")]
    NoTrials,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouponModel {
    pub s: u32,
    pub q: u64,
}

impl CouponModel {
    pub fn new(s: u32, q: u64) -> Result<Self, CouponError> {
        if s == 0 {
            return Err(CouponError::EmptyUniverse);
        }
        if q < 2 {
            return Err(CouponError::OrderTooSmall(q));
        }
        Ok(CouponModel { s, q })
    }

    /// `q^(i-1) / q^s`, evaluated through the exponent so it never overflows.
    fn dependent_fraction(&self, i: u32) -> f64 {
        let exponent = f64::from(i) - 1.0 - f64::from(self.s);
        ((self.q as f64).ln() * exponent).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouponStats {
    pub mean: f64,
    pub trials: u64,
    pub std_error: f64,
}

fn check(i: u32, s: u32) -> Result<(), CouponError> {
    if s == 0 {
        return Err(CouponError::EmptyUniverse);
    }
    if i == 0 || i > s {
        return Err(CouponError::IndexOutOfRange { i, s });
    }
    Ok(())
}

/// Probability that the next draw is new after `i - 1` distinct coupons.
pub fn p_draw(i: u32, s: u32) -> Result<f64, CouponError> {
    check(i, s)?;
    Ok(1.0 - f64::from(i - 1) / f64::from(s))
}

/// Mean number of draws spent on the `i`-th new coupon.
pub fn expected_wait(i: u32, s: u32) -> Result<f64, CouponError> {
    check(i, s)?;
    Ok(f64::from(s) / f64::from(s - i + 1))
}

/// Mean draws to hold `i` distinct coupons: `s * sum_{k=s-i+1}^{s} 1/k`.
pub fn expected_sample(i: u32, s: u32) -> Result<f64, CouponError> {
    check(i, s)?;
    let tail: f64 = (s - i + 1..=s).rev().map(|k| 1.0 / f64::from(k)).sum();
    Ok(f64::from(s) * tail)
}

/// Mean number of distinct coupons among `n` draws.
pub fn expected_distinct(n: u64, s: u32) -> Result<f64, CouponError> {
    if s == 0 {
        return Err(CouponError::EmptyUniverse);
    }
    let s = f64::from(s);
    Ok(s * (1.0 - (1.0 - 1.0 / s).powf(n as f64)))
}

/// Exponential lower bound `s * (1 - e^(-n/s))` on [`expected_distinct`].
pub fn distinct_lower_bound(n: u64, s: u32) -> Result<f64, CouponError> {
    if s == 0 {
        return Err(CouponError::EmptyUniverse);
    }
    let s = f64::from(s);
    Ok(s * (1.0 - (-(n as f64) / s).exp()))
}

/// Probability that a uniform vector raises rank `i - 1` to `i`.
pub fn coded_p_draw(i: u32, model: CouponModel) -> Result<f64, CouponError> {
    check(i, model.s)?;
    Ok(1.0 - model.dependent_fraction(i))
}

pub fn coded_expected_wait(i: u32, model: CouponModel) -> Result<f64, CouponError> {
    check(i, model.s)?;
    Ok(1.0 / (1.0 - model.dependent_fraction(i)))
}

/// Mean draws to reach rank `i`.
pub fn coded_expected_sample(i: u32, model: CouponModel) -> Result<f64, CouponError> {
    check(i, model.s)?;
    (1..=i).map(|j| coded_expected_wait(j, model)).sum()
}

/// Trials per independently seeded work unit.
const CHUNK: u64 = 1024;

#[derive(Default)]
struct Moments {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn merge(mut self, o: Moments) -> Moments {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        self
    }

    fn stats(&self) -> CouponStats {
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = if self.n > 1 { ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        CouponStats { mean, trials: self.n, std_error: (var / n).sqrt() }
    }
}

fn run_chunks<F>(trials: u64, seed: u64, exec: Execution, trial: F) -> Result<CouponStats, CouponError>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> u64 + Sync + Send,
{
    if trials == 0 {
        return Err(CouponError::NoTrials);
    }
    let chunks = trials.div_ceil(CHUNK) as usize;
    let parts = exec.map(chunks, |c| {
        let mut rng = stream_rng(seed, c as u64);
        let count = CHUNK.min(trials - c as u64 * CHUNK);
        let mut m = Moments::default();
        for _ in 0..count {
            m.push(trial(&mut rng) as f64);
        }
        m
    });
    Ok(parts.into_iter().fold(Moments::default(), Moments::merge).stats())
}

/// Draws until `target` distinct coupons out of `s` are held.
pub fn monte_carlo_classic<R: Rng + ?Sized>(
    s: u32,
    target: u32,
    trials: u64,
    rng: &mut R,
    exec: Execution,
) -> Result<CouponStats, CouponError> {
    check(target, s)?;
    let seed = rng.next_u64();
    run_chunks(trials, seed, exec, |rng| {
        let mut seen = vec![false; s as usize];
        let (mut distinct, mut draws) = (0, 0u64);
        while distinct < target {
            draws += 1;
            let c = rng.random_range(0..s as usize);
            if !seen[c] {
                seen[c] = true;
                distinct += 1;
            }
        }
        draws
    })
}

/// Draws uniform vectors of `GF(q)^s` until the collected rank is `target`.
/// The zero vector is a legitimate (never innovative) draw.
pub fn monte_carlo_coded<R: Rng + ?Sized>(
    model: CouponModel,
    target: u32,
    trials: u64,
    rng: &mut R,
    exec: Execution,
) -> Result<CouponStats, CouponError> {
    check(target, model.s)?;
    if !model.q.is_power_of_two() || model.q > 1 << 16 {
        return Err(CouponError::UnsupportedOrder(model.q));
    }
    let bits = model.q.trailing_zeros() as u8;
    let s = model.s as usize;
    let seed = rng.next_u64();
    if bits == 1 && s <= 64 {
        return run_chunks(trials, seed, exec, |rng| binary_trial(s, target, rng));
    }
    let field = Arc::new(Field::new(FieldSpec::with_default_poly(bits).expect("width in range")));
    run_chunks(trials, seed, exec, |rng| {
        let mut d = DecoderState::new(Arc::clone(&field), 0, s, 0);
        let mut draws = 0u64;
        let mut v = vec![FieldElement::ZERO; s];
        let packet_of =
            |v: &[FieldElement]| crate::coding::CodedPacket { group_id: 0, vector: v.to_vec(), payload: vec![] };
        while d.rank() < target as usize {
            draws += 1;
            v.iter_mut().for_each(|x| *x = field.random(rng));
            d.insert(&packet_of(&v)).expect("dimensions match");
        }
        draws
    })
}

/// GF(2) rank tracking with one machine word per basis vector.
fn binary_trial<R: Rng + ?Sized>(s: usize, target: u32, rng: &mut R) -> u64 {
    let mask = if s == 64 { u64::MAX } else { (1u64 << s) - 1 };
    let mut basis = [0u64; 64];
    let (mut rank, mut draws) = (0u32, 0u64);
    while rank < target {
        draws += 1;
        let mut v = rng.next_u64() & mask;
        while v != 0 {
            let top = 63 - v.leading_zeros() as usize;
            if basis[top] == 0 {
                basis[top] = v;
                rank += 1;
                break;
            }
            v ^= basis[top];
        }
    }
    draws
}

/// One row of the closed-form comparison printed by the command line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouponRow {
    pub i: u32,
    pub p: f64,
    pub wait: f64,
    pub sample: f64,
    pub coded_p: f64,
    pub coded_wait: f64,
    pub coded_sample: f64,
}

pub fn comparison_table(model: CouponModel) -> Vec<CouponRow> {
    (1..=model.s)
        .map(|i| CouponRow {
            i,
            p: p_draw(i, model.s).expect("i in range"),
            wait: expected_wait(i, model.s).expect("i in range"),
            sample: expected_sample(i, model.s).expect("i in range"),
            coded_p: coded_p_draw(i, model).expect("i in range"),
            coded_wait: coded_expected_wait(i, model).expect("i in range"),
            coded_sample: coded_expected_sample(i, model).expect("i in range"),
        })
        .collect()
}
