//! Score function and reputation coarsening.

use serde::{Deserialize, Serialize};

use crate::error::ParamError;

/// A score update rule `upd(sc, x)` on the domain `(-∞, M]`.
///
/// Implementations are expected to satisfy the four monotonicity axioms checked in the
/// tests of this module; [`ScoreParams`] is the piecewise-linear instance used by default.
pub trait ScoreFunction {
    fn update(&self, sc: f64, reports: i64) -> f64;
    fn cap(&self) -> f64;
    fn tolerance(&self) -> i64;
}

/// Tolerance `k`, cap `M` and recovery rate `b` of the default score function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    pub k: i64,
    pub cap: i64,
    pub recovery: f64,
}

impl ScoreParams {
    pub fn new(k: i64, cap: i64, recovery: f64) -> Result<Self, ParamError> {
        let params = ScoreParams { k, cap, recovery };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if self.k < 1 {
            return Err(ParamError::Tolerance);
        }
        if self.cap < 1 {
            return Err(ParamError::Cap);
        }
        if !(self.recovery > 0.0 && self.recovery <= 1.0) {
            return Err(ParamError::Recovery(self.recovery));
        }
        Ok(())
    }
}

/// The piecewise score update:
///
/// ```text
/// sc - x + k             if x >= k
/// min(sc + b, M)         if x < k and sc >= 0
/// min(sc - x + k, 0)     if x < k and sc < 0
/// ```
///
/// `x` may be negative (a noisy count).
pub fn upd(sc: f64, x: i64, params: &ScoreParams) -> f64 {
    let k = params.k;
    if x >= k {
        sc - (x - k) as f64
    } else if sc >= 0.0 {
        (sc + params.recovery).min(params.cap as f64)
    } else {
        (sc - (x - k) as f64).min(0.0)
    }
}

impl ScoreFunction for ScoreParams {
    fn update(&self, sc: f64, reports: i64) -> f64 {
        upd(sc, reports, self)
    }

    fn cap(&self) -> f64 {
        self.cap as f64
    }

    fn tolerance(&self) -> i64 {
        self.k
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReputationLevel {
    Low = 0,
    Medium = 1,
    High = 2,
    VeryHigh = 3,
}

impl ReputationLevel {
    pub const ALL: [ReputationLevel; 4] = [
        ReputationLevel::Low,
        ReputationLevel::Medium,
        ReputationLevel::High,
        ReputationLevel::VeryHigh,
    ];

    pub fn ordinal(self) -> u8 {
        self as u8
    }

    pub fn from_ordinal(value: u8) -> Option<Self> {
        Self::ALL.get(value as usize).copied()
    }
}

/// Three strictly increasing cut points splitting the score line into four levels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds([f64; 3]);

impl Thresholds {
    pub fn new(cuts: [f64; 3]) -> Result<Self, ParamError> {
        if cuts.iter().any(|c| !c.is_finite()) || cuts[0] >= cuts[1] || cuts[1] >= cuts[2] {
            return Err(ParamError::Thresholds);
        }
        Ok(Thresholds(cuts))
    }

    /// `low < 0 ≤ medium < M/3 ≤ high < 2M/3 ≤ very_high`.
    pub fn for_cap(cap: i64) -> Self {
        let m = cap as f64;
        Thresholds([0.0, m / 3.0, 2.0 * m / 3.0])
    }

    pub fn cuts(&self) -> [f64; 3] {
        self.0
    }
}

pub fn reputation(sc: f64, thresholds: &Thresholds) -> ReputationLevel {
    let level = thresholds.0.iter().filter(|&&cut| sc >= cut).count();
    ReputationLevel::ALL[level]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> ScoreParams {
        ScoreParams::new(2, 100, 0.5).unwrap()
    }

    #[test]
    fn worked_examples() {
        let p = params();
        assert_eq!(upd(100.0, 5, &p), 97.0);
        assert_eq!(upd(100.0, 0, &p), 100.0);
        assert_eq!(upd(-3.0, 1, &p), -2.0);
        assert_eq!(upd(50.0, 2, &p), 50.0);
        assert_eq!(upd(50.0, -7, &p), 50.5);
        assert_eq!(upd(-10.0, -4, &p), -4.0);
    }

    #[test]
    fn rejects_bad_params() {
        assert_eq!(ScoreParams::new(0, 10, 0.5), Err(ParamError::Tolerance));
        assert_eq!(ScoreParams::new(1, 0, 0.5), Err(ParamError::Cap));
        assert!(ScoreParams::new(1, 10, 0.0).is_err());
        assert!(ScoreParams::new(1, 10, 1.5).is_err());
        assert!(ScoreParams::new(1, 10, 1.0).is_ok());
        assert!(Thresholds::new([0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn default_levels() {
        let t = Thresholds::for_cap(99);
        assert_eq!(reputation(99.0, &t), ReputationLevel::VeryHigh);
        assert_eq!(reputation(-10.0, &t), ReputationLevel::Low);
        assert_eq!(reputation(0.0, &t), ReputationLevel::Medium);
        assert_eq!(reputation(33.0, &t), ReputationLevel::High);
        assert_eq!(reputation(65.9, &t), ReputationLevel::High);
        assert_eq!(reputation(66.0, &t), ReputationLevel::VeryHigh);
        for level in ReputationLevel::ALL {
            assert_eq!(ReputationLevel::from_ordinal(level.ordinal()), Some(level));
        }
        assert_eq!(ReputationLevel::from_ordinal(4), None);
    }

    proptest! {
        #[test]
        fn axioms_hold(
            sc_steps in -100i64..=200,
            x in -30i64..=30,
            k in 1i64..=6,
            cap in 1i64..=100,
            b_idx in 0usize..4,
        ) {
            let b = [0.125, 0.25, 0.5, 1.0][b_idx];
            let p = ScoreParams::new(k, cap, b).unwrap();
            let sc = (sc_steps as f64 * 0.5).min(cap as f64);
            let sc_up = sc + 1.0;
            if sc_up <= cap as f64 {
                prop_assert!(upd(sc_up, x, &p) >= upd(sc, x - 1, &p));
            }
            prop_assert!(upd(sc, x, &p) >= upd(sc, x + 1, &p));
            if x >= k {
                prop_assert!(upd(sc, x, &p) >= upd(sc, x + 1, &p) + 1.0);
            }
            prop_assert!(upd(sc, k, &p) >= sc);
            prop_assert!(upd(sc, x, &p) <= cap as f64);
        }

        #[test]
        fn reputation_is_order_preserving(a in -200.0f64..200.0, b in -200.0f64..200.0) {
            let t = Thresholds::for_cap(100);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(reputation(lo, &t) <= reputation(hi, &t));
        }
    }
}
