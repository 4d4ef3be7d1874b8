//! Per-arm reservoir sampling for optimistic loss predictions.
//!
//! The optimistic learner keeps one reservoir per arm. On sampling rounds it
//! either appends (warm-up fill) or overwrites a uniformly random slot
//! (replace), so each slot always holds one past observed loss and the
//! reservoir mean μ̃ tracks the arm's running loss level with O(ln T) memory.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from reservoir maintenance.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReservoirError {
    /// A replace was requested while the reservoir is empty; the round
    /// scheduler must fill before it replaces.
    #[error("replace requested on an empty reservoir")]
    ReplaceOnEmpty,
}

/// Which insertion rule applies this round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InsertPhase {
    /// Append to the sample list (warm-up rounds).
    Fill,
    /// Overwrite the slot at ⌊u·len⌋ with the new loss.
    Replace,
}

/// A bounded uniform sample of one arm's observed losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reservoir {
    capacity: usize,
    samples: Vec<f64>,
}

impl Reservoir {
    /// An empty reservoir holding at most `capacity` samples.
    pub fn with_capacity(capacity: usize) -> Self {
        assert!(capacity >= 1, "reservoir capacity must be at least 1");
        Reservoir {
            capacity,
            samples: Vec::with_capacity(capacity),
        }
    }

    /// Capacity ⌈ln T⌉ (minimum 1), the scale the sampling schedule is
    /// calibrated for.
    pub fn for_horizon(horizon: usize) -> Self {
        Self::with_capacity(horizon_capacity(horizon))
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Exact arithmetic mean μ̃ of the stored samples; 0 when empty.
    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.samples.iter().sum::<f64>() / self.samples.len() as f64
        }
    }
}

/// Capacity ⌈ln T⌉ with a floor of 1.
pub fn horizon_capacity(horizon: usize) -> usize {
    ((horizon as f64).ln().ceil() as usize).max(1)
}

/// Whether round `t` is a reservoir-sampling round: `u < min(K·ln T / t, 1)`.
///
/// During the warm-up window t ≤ K·ln T the probability clamps to 1, so the
/// outcome is `true` for every draw.
pub fn schedule_reservoir_round(t: usize, k: usize, horizon: usize, u: f64) -> bool {
    debug_assert!(t >= 1 && t <= horizon, "round {t} outside 1..={horizon}");
    let p = (k as f64 * (horizon as f64).ln() / t as f64).min(1.0);
    u < p
}

/// Inserts one observed loss, appending (fill) or overwriting the slot at
/// ⌊u·len⌋ (replace). The draw `u` is unused in the fill phase.
pub fn reservoir_insert(
    r: &mut Reservoir,
    loss: f64,
    phase: InsertPhase,
    u: f64,
) -> Result<(), ReservoirError> {
    debug_assert!((0.0..=1.0).contains(&loss), "loss {loss} outside [0,1]");
    match phase {
        InsertPhase::Fill => {
            assert!(
                r.samples.len() < r.capacity,
                "fill would exceed capacity {}",
                r.capacity
            );
            r.samples.push(loss);
        }
        InsertPhase::Replace => {
            if r.samples.is_empty() {
                return Err(ReservoirError::ReplaceOnEmpty);
            }
            let idx = ((u * r.samples.len() as f64) as usize).min(r.samples.len() - 1);
            r.samples[idx] = loss;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn fill_single_element() {
        let mut r = Reservoir::with_capacity(4);
        reservoir_insert(&mut r, 0.7, InsertPhase::Fill, 0.0).unwrap();
        assert_eq!(r.samples(), &[0.7]);
        assert!((r.mean() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn replace_overwrites_indexed_slot() {
        let mut r = Reservoir::with_capacity(4);
        reservoir_insert(&mut r, 0.2, InsertPhase::Fill, 0.0).unwrap();
        reservoir_insert(&mut r, 0.4, InsertPhase::Fill, 0.0).unwrap();
        // u = 0.3 over 2 slots lands on index 0.
        reservoir_insert(&mut r, 1.0, InsertPhase::Replace, 0.3).unwrap();
        assert_eq!(r.samples(), &[1.0, 0.4]);
        assert!((r.mean() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn replace_on_empty_is_an_error() {
        let mut r = Reservoir::with_capacity(4);
        assert_eq!(
            reservoir_insert(&mut r, 0.5, InsertPhase::Replace, 0.5),
            Err(ReservoirError::ReplaceOnEmpty)
        );
    }

    #[test]
    fn empty_mean_is_zero() {
        assert_eq!(Reservoir::with_capacity(3).mean(), 0.0);
    }

    #[test]
    fn horizon_capacity_examples() {
        assert_eq!(horizon_capacity(10_000), 10, "ceil(ln 1e4) = ceil(9.21)");
        assert_eq!(horizon_capacity(2), 1);
        assert_eq!(horizon_capacity(1), 1, "floor of 1 applies at ln 1 = 0");
    }

    #[test]
    fn schedule_probability_formula() {
        // t = T, K = 4, T = 1e4: p = 4·ln(1e4)/1e4 ≈ 0.003684.
        let p = 4.0 * (10_000f64).ln() / 10_000.0;
        assert!((p - 0.003684).abs() < 1e-6);
        assert!(schedule_reservoir_round(10_000, 4, 10_000, p - 1e-9));
        assert!(!schedule_reservoir_round(10_000, 4, 10_000, p + 1e-9));
    }

    #[test]
    fn schedule_always_true_during_warmup() {
        // t ≤ K·ln T clamps the probability to 1.
        let (k, t_hor) = (4, 10_000);
        let warmup_end = (k as f64 * (t_hor as f64).ln()).floor() as usize;
        for t in [1, 2, warmup_end] {
            assert!(
                schedule_reservoir_round(t, k, t_hor, 1.0 - 1e-12),
                "round {t} inside warm-up must schedule"
            );
        }
    }

    #[test]
    fn schedule_frequency_matches_bernoulli_rate() {
        // Monte-Carlo: empirical frequency within 3 standard errors.
        let mut rng = ChaCha12Rng::seed_from_u64(0x5eed_0001);
        let (t, k, horizon) = (5_000usize, 4usize, 10_000usize);
        let p = (k as f64 * (horizon as f64).ln() / t as f64).min(1.0);
        let n = 100_000usize;
        let mut hits = 0usize;
        for _ in 0..n {
            if schedule_reservoir_round(t, k, horizon, rng.gen::<f64>()) {
                hits += 1;
            }
        }
        let freq = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!(
            (freq - p).abs() <= 3.0 * se,
            "frequency {freq} vs rate {p}, 3·SE = {:.2e}",
            3.0 * se
        );
    }

    #[test]
    fn stationary_stream_mean_is_unbiased() {
        // E[μ̃] → 0.5 for Unif[0,1] streams, averaged over replications.
        let mut rng = ChaCha12Rng::seed_from_u64(0x5eed_0002);
        let reps = 10_000usize;
        let mut acc = 0.0;
        let mut sq = 0.0;
        for _ in 0..reps {
            let mut r = Reservoir::with_capacity(8);
            for i in 0..100 {
                let x: f64 = rng.gen();
                let phase = if i < 8 {
                    InsertPhase::Fill
                } else {
                    InsertPhase::Replace
                };
                reservoir_insert(&mut r, x, phase, rng.gen()).unwrap();
            }
            let m = r.mean();
            acc += m;
            sq += m * m;
        }
        let mean = acc / reps as f64;
        let var = sq / reps as f64 - mean * mean;
        let se = (var / reps as f64).sqrt();
        assert!(
            (mean - 0.5).abs() <= 3.0 * se,
            "E[mean] = {mean}, 3·SE = {:.2e}",
            3.0 * se
        );
    }

    #[test]
    fn bernoulli_mean_variance_is_capacity_limited() {
        // Var[μ̃] ≤ 1/(4·capacity) for i.i.d. Bernoulli losses.
        let mut rng = ChaCha12Rng::seed_from_u64(0x5eed_0003);
        let capacity = 8usize;
        let mu = 0.3f64;
        let reps = 10_000usize;
        let mut acc = 0.0;
        let mut sq = 0.0;
        for _ in 0..reps {
            let mut r = Reservoir::with_capacity(capacity);
            for i in 0..60 {
                let x = if rng.gen::<f64>() < mu { 1.0 } else { 0.0 };
                let phase = if i < capacity {
                    InsertPhase::Fill
                } else {
                    InsertPhase::Replace
                };
                reservoir_insert(&mut r, x, phase, rng.gen()).unwrap();
            }
            let m = r.mean();
            acc += m;
            sq += m * m;
        }
        let mean = acc / reps as f64;
        let var = sq / reps as f64 - mean * mean;
        assert!(
            var <= 1.0 / (4.0 * capacity as f64),
            "Var[mean] = {var} exceeds 1/(4·{capacity})"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn fill_mean_is_order_invariant(
            mut xs in proptest::collection::vec(0.0..1.0f64, 2..8)
        ) {
            let mut a = Reservoir::with_capacity(8);
            for &x in &xs {
                reservoir_insert(&mut a, x, InsertPhase::Fill, 0.0).unwrap();
            }
            xs.reverse();
            let mut b = Reservoir::with_capacity(8);
            for &x in &xs {
                reservoir_insert(&mut b, x, InsertPhase::Fill, 0.0).unwrap();
            }
            prop_assert!((a.mean() - b.mean()).abs() < 1e-12);
        }

        #[test]
        fn insert_preserves_capacity_bound(
            n in 1usize..40,
            cap in 1usize..10,
            seed in proptest::num::u64::ANY,
        ) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut r = Reservoir::with_capacity(cap);
            for _ in 0..n {
                let phase = if r.len() < cap { InsertPhase::Fill } else { InsertPhase::Replace };
                reservoir_insert(&mut r, rng.gen(), phase, rng.gen()).unwrap();
            }
            prop_assert!(r.len() <= cap);
            prop_assert_eq!(r.len(), n.min(cap));
        }
    }
}
