//! Truncated, shifted and rounded Gaussian noise for report counts.
//!
//! Parameters are carried as decimals so that sensitivity scaling is exact; they are
//! only converted to `f64` at sampling time.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rust_decimal::prelude::ToPrimitive;
use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Serialize};

use crate::error::ParamError;

/// Continuous draws above this point are rejected before rounding.
pub const TRUNCATION_POINT: f64 = -0.5;
pub const MAX_REJECTIONS: u32 = 1_000_000;

/// A noise distribution. `mu` and `noise_std` are the parameters actually sampled,
/// i.e. already scaled for `sensitivity`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub mu: Decimal,
    pub noise_std: Decimal,
    pub sensitivity: i64,
}

impl NoiseParams {
    pub fn new(mu: Decimal, noise_std: Decimal, sensitivity: i64) -> Result<Self, ParamError> {
        let params = NoiseParams {
            mu,
            noise_std,
            sensitivity,
        };
        params.validate()?;
        Ok(params)
    }

    /// Builds the distribution for sensitivity `sensitivity` from sensitivity-1 parameters.
    pub fn from_base(
        mu: Decimal,
        noise_std: Decimal,
        sensitivity: i64,
    ) -> Result<Self, ParamError> {
        let (mu, noise_std) = scale_params(mu, noise_std, sensitivity)?;
        NoiseParams::new(mu, noise_std, sensitivity)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if self.mu >= Decimal::NEGATIVE_ONE {
            return Err(ParamError::NoiseShift(self.mu.to_string()));
        }
        if self.noise_std <= Decimal::ZERO {
            return Err(ParamError::NoiseStd(self.noise_std.to_string()));
        }
        if self.sensitivity < 1 {
            return Err(ParamError::Sensitivity(self.sensitivity));
        }
        Ok(())
    }

    pub fn mu_f64(&self) -> f64 {
        self.mu.to_f64().expect("decimal fits in f64")
    }

    pub fn std_f64(&self) -> f64 {
        self.noise_std.to_f64().expect("decimal fits in f64")
    }

    /// Deterministic noise applied for epochs a sender missed: `mu` rounded half away
    /// from zero.
    pub fn catch_up_noise(&self) -> i64 {
        self.mu
            .round_dp_with_strategy(0, RoundingStrategy::MidpointAwayFromZero)
            .to_i64()
            .expect("integral decimal fits in i64")
    }
}

/// `mu' = -1/2 + B·(1/2 + mu)`, `std' = B·std`.
pub fn scale_params(
    mu: Decimal,
    noise_std: Decimal,
    sensitivity: i64,
) -> Result<(Decimal, Decimal), ParamError> {
    if sensitivity < 1 {
        return Err(ParamError::Sensitivity(sensitivity));
    }
    let half = Decimal::new(5, 1);
    let b = Decimal::from(sensitivity);
    Ok((-half + b * (half + mu), b * noise_std))
}

/// `(B_vk, compositions, mu, sigma)` rows tuned for `(ε = 4, δ = 2^-16)`.
pub const TABLE: [(i64, u32, Decimal, Decimal); 8] = [
    (
        1,
        1,
        Decimal::from_parts(8, 0, 0, true, 0),
        Decimal::from_parts(11, 0, 0, false, 1),
    ),
    (
        1,
        10,
        Decimal::from_parts(18, 0, 0, true, 0),
        Decimal::from_parts(35, 0, 0, false, 1),
    ),
    (
        1,
        20,
        Decimal::from_parts(30, 0, 0, true, 0),
        Decimal::from_parts(5, 0, 0, false, 0),
    ),
    (
        1,
        40,
        Decimal::from_parts(40, 0, 0, true, 0),
        Decimal::from_parts(7, 0, 0, false, 0),
    ),
    (
        1,
        100,
        Decimal::from_parts(50, 0, 0, true, 0),
        Decimal::from_parts(11, 0, 0, false, 0),
    ),
    (
        3,
        1,
        Decimal::from_parts(23, 0, 0, true, 0),
        Decimal::from_parts(33, 0, 0, false, 1),
    ),
    (
        3,
        10,
        Decimal::from_parts(40, 0, 0, true, 0),
        Decimal::from_parts(10, 0, 0, false, 0),
    ),
    (
        5,
        1,
        Decimal::from_parts(38, 0, 0, true, 0),
        Decimal::from_parts(55, 0, 0, false, 1),
    ),
];

pub fn lookup_params(sensitivity: i64, compositions: u32) -> Option<NoiseParams> {
    TABLE
        .iter()
        .find(|row| row.0 == sensitivity && row.1 == compositions)
        .map(|&(sensitivity, _, mu, noise_std)| NoiseParams {
            mu,
            noise_std,
            sensitivity,
        })
}

/// A reusable sampler; construct once per parameter set.
#[derive(Clone, Copy, Debug)]
pub struct NoiseSampler {
    normal: Normal<f64>,
}

impl NoiseSampler {
    pub fn new(params: &NoiseParams) -> Result<Self, ParamError> {
        params.validate()?;
        let normal = Normal::new(params.mu_f64(), params.std_f64())
            .map_err(|_| ParamError::NoiseStd(params.noise_std.to_string()))?;
        Ok(NoiseSampler { normal })
    }

    /// Returns an integer `N ≤ -1`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<i64, ParamError> {
        for _ in 0..MAX_REJECTIONS {
            let draw: f64 = self.normal.sample(rng);
            if draw <= TRUNCATION_POINT {
                return Ok(draw.round() as i64);
            }
        }
        Err(ParamError::NoiseRejection(MAX_REJECTIONS))
    }
}

pub fn sample_noise<R: Rng + ?Sized>(params: &NoiseParams, rng: &mut R) -> Result<i64, ParamError> {
    NoiseSampler::new(params)?.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

    fn dec(s: &str) -> Decimal {
        s.parse().unwrap()
    }

    #[test]
    fn scaling_matches_table_rows() {
        assert_eq!(
            scale_params(dec("-8"), dec("1.1"), 1).unwrap(),
            (dec("-8"), dec("1.1"))
        );
        assert_eq!(
            scale_params(dec("-8"), dec("1.1"), 3).unwrap(),
            (dec("-23"), dec("3.3"))
        );
        assert_eq!(
            scale_params(dec("-8"), dec("1.1"), 5).unwrap(),
            (dec("-38"), dec("5.5"))
        );
        assert_eq!(
            scale_params(dec("-8"), dec("1.1"), 0),
            Err(ParamError::Sensitivity(0))
        );
        let row = lookup_params(3, 1).unwrap();
        assert_eq!(
            NoiseParams::from_base(dec("-8"), dec("1.1"), 3).unwrap(),
            row
        );
    }

    #[test]
    fn lookup() {
        let p = lookup_params(1, 10).unwrap();
        assert_eq!((p.mu, p.noise_std), (dec("-18"), dec("3.5")));
        let p = lookup_params(1, 100).unwrap();
        assert_eq!((p.mu, p.noise_std), (dec("-50"), dec("11")));
        assert_eq!(lookup_params(2, 1), None);
        for row in TABLE {
            assert!(NoiseParams::new(row.2, row.3, row.0).is_ok());
        }
    }

    #[test]
    fn validation() {
        assert!(NoiseParams::new(dec("-1"), dec("1"), 1).is_err());
        assert!(NoiseParams::new(dec("-2"), dec("0"), 1).is_err());
        assert!(NoiseParams::new(dec("-2"), dec("1"), 0).is_err());
    }

    #[test]
    fn catch_up_rounds_mu() {
        assert_eq!(lookup_params(1, 1).unwrap().catch_up_noise(), -8);
        let p = NoiseParams::from_base(dec("-8"), dec("1.1"), 2).unwrap();
        assert_eq!(p.mu, dec("-15.5"));
        assert_eq!(p.catch_up_noise(), -16);
    }

    #[test]
    fn mean_and_tail_mass() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let p = NoiseParams::new(dec("-17"), dec("3.7"), 1).unwrap();
        let sampler = NoiseSampler::new(&p).unwrap();
        let n = 100_000;
        let sum: i64 = (0..n).map(|_| sampler.sample(&mut rng).unwrap()).sum();
        let mean = sum as f64 / n as f64;
        assert!((-17.2..=-16.8).contains(&mean), "mean {mean}");

        let p = lookup_params(1, 1).unwrap();
        let sampler = NoiseSampler::new(&p).unwrap();
        let inside = (0..n)
            .map(|_| sampler.sample(&mut rng).unwrap())
            .filter(|v| (-13..=-3).contains(v))
            .count();
        assert!(inside as f64 >= 0.999 * n as f64);
    }

    #[test]
    fn rounding_edge_is_minus_one() {
        // A distribution centred just below the truncation point exercises the
        // `-0.5 → -1` boundary heavily.
        let p = NoiseParams::new(dec("-1.01"), dec("0.3"), 1).unwrap();
        let sampler = NoiseSampler::new(&p).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        for _ in 0..10_000 {
            assert!(sampler.sample(&mut rng).unwrap() <= -1);
        }
    }

    #[test]
    fn pathological_params_hit_the_cap() {
        // Mass above -1/2 is essentially 1 when the mean sits far above the cut.
        let sampler = NoiseSampler {
            normal: Normal::new(1.0e9, 1.0).unwrap(),
        };
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        assert_eq!(
            sampler.sample(&mut rng),
            Err(ParamError::NoiseRejection(MAX_REJECTIONS))
        );
    }

    #[test]
    fn bucket_mass_oracle_sums_to_one() {
        let normal = StatNormal::new(-8.0, 1.1).unwrap();
        let z = normal.cdf(TRUNCATION_POINT);
        let total: f64 = (-40..=-1)
            .map(|n| {
                let hi = (n as f64 + 0.5).min(TRUNCATION_POINT);
                (normal.cdf(hi) - normal.cdf(n as f64 - 0.5)) / z
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn unit_sensitivity_is_identity(mu_milli in -100_000i64..-1_001, std_milli in 1i64..50_000) {
            let mu = Decimal::new(mu_milli, 3);
            let std = Decimal::new(std_milli, 3);
            prop_assert_eq!(scale_params(mu, std, 1).unwrap(), (mu, std));
        }
    }
}
