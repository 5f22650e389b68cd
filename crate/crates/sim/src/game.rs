//! The sender's memoryless game and its dynamic-programming solution.
//!
//! A state is `(sc, e, r, x)`: current score, epochs remaining after the current one,
//! remaining report budget and reports received so far this epoch. With delayed
//! reporting the state also carries the report counts of the last `E` epochs that have
//! not been scored yet.
//!
//! Rules shared by every solver in this crate:
//!
//! - Executing scripts until one more report arrives is allowed while `r > 0` and
//!   `u + (x + 1) + N_e <= r`, where `u` is the number of pending, not yet scored reports.
//! - Ending epoch `e` scores `c = p + N_e` (with `p = x` when there is no delay, otherwise
//!   the oldest pending count) as `upd(sc, c)` and spends `max(c, 0)` of the budget.
//! - Waiting at `e = 0` ends the game.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use sandi_core::score::{reputation, upd, ReputationLevel, ScoreParams, Thresholds};

pub const LEVELS: usize = ReputationLevel::ALL.len();
/// Upper bound on memoized states before a solve is abandoned.
pub const MAX_STATES: usize = 4_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("state space exceeds {0} states")]
    StateSpace(usize),
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),
    #[error("invalid instance: {0}")]
    Invalid(String),
}

/// Expected reward and report probability of one class of equivalent scripts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptArchetype {
    #[serde(default)]
    pub name: String,
    /// `E[q(s, y)·Rew(s)]` per reputation level, lowest first.
    pub exp_reward: [f64; LEVELS],
    /// `E[p(s, y)]` per reputation level, in `(0, 1]`.
    pub exp_report: [f64; LEVELS],
    /// Epochs (counted as epochs remaining) in which scripts of this class can run;
    /// always available when absent.
    #[serde(default)]
    pub available: Option<[u32; 2]>,
}

impl ScriptArchetype {
    pub fn new(exp_reward: [f64; LEVELS], exp_report: [f64; LEVELS]) -> Self {
        ScriptArchetype {
            name: String::new(),
            exp_reward,
            exp_report,
            available: None,
        }
    }

    pub fn available_at(&self, e: u32) -> bool {
        self.available.is_none_or(|[lo, hi]| lo <= e && e <= hi)
    }

    /// Checks ranges and the receivers' rationality shape: rewards non-decreasing and
    /// report probabilities non-increasing in reputation.
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |what: &str| {
            Err(SimError::Invalid(format!(
                "archetype {:?}: {what}",
                self.name
            )))
        };
        if self
            .exp_reward
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return bad("rewards must be finite and non-negative");
        }
        if self.exp_report.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return bad("report probabilities must lie in (0, 1]");
        }
        if self.exp_reward.windows(2).any(|w| w[0] > w[1]) {
            return bad("rewards must not decrease with reputation");
        }
        if self.exp_report.windows(2).any(|w| w[0] < w[1]) {
            return bad("report probabilities must not increase with reputation");
        }
        if let Some([lo, hi]) = self.available {
            if lo > hi {
                return bad("empty availability window");
            }
        }
        Ok(())
    }
}

/// `Rew~(s, y) = E[q·Rew] / E[p]`, the expected reward per expected report.
pub fn rew_tilde(archetype: &ScriptArchetype, y: ReputationLevel) -> f64 {
    let i = y.ordinal() as usize;
    archetype.exp_reward[i] / archetype.exp_report[i]
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameEnv {
    pub archetypes: Vec<ScriptArchetype>,
    pub score: ScoreParams,
    pub thresholds: Thresholds,
    /// `noise[i]` is `N_i`, applied when the epoch with `i` epochs remaining ends.
    pub noise: Vec<i64>,
    pub horizon: u32,
    pub budget: u32,
    /// Reporting delay `E` in epochs.
    pub delay: usize,
}

impl GameEnv {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.archetypes.is_empty() {
            return Err(SimError::Invalid("no archetypes".into()));
        }
        for a in &self.archetypes {
            a.validate()?;
        }
        self.score
            .validate()
            .map_err(|e| SimError::Invalid(e.to_string()))?;
        if self.noise.len() != self.horizon as usize + 1 {
            return Err(SimError::Invalid(format!(
                "noise sequence has {} entries, horizon needs {}",
                self.noise.len(),
                self.horizon + 1
            )));
        }
        if self.noise.iter().any(|&n| n > -1) {
            return Err(SimError::Invalid("noise values must be at most -1".into()));
        }
        Ok(())
    }

    pub fn level(&self, sc: f64) -> ReputationLevel {
        reputation(sc, &self.thresholds)
    }

    /// Best `Rew~` among archetypes available at `e`, if any.
    pub fn best_rew_tilde(&self, y: ReputationLevel, e: u32) -> Option<f64> {
        self.archetypes
            .iter()
            .filter(|a| a.available_at(e))
            .map(|a| rew_tilde(a, y))
            .reduce(f64::max)
    }

    /// True when the best available `Rew~` at every reputation never drops as the
    /// game advances (as `e` counts down).
    pub fn satisfies_growth(&self) -> bool {
        ReputationLevel::ALL.iter().all(|&y| {
            let best: Vec<f64> = (0..=self.horizon)
                .rev()
                .map(|e| self.best_rew_tilde(y, e).unwrap_or(0.0))
                .collect();
            best.windows(2).all(|w| w[0] <= w[1])
        })
    }

    /// Whether one more report may be collected, given `uncounted` reports already
    /// received but not yet scored (including this epoch's `x`).
    pub fn may_execute(&self, e: u32, r: u32, uncounted: u64) -> bool {
        r > 0 && uncounted as i64 + 1 + self.noise[e as usize] <= r as i64
    }

    /// Score and budget after ending epoch `e` with `counted` reports scored.
    pub fn end_epoch(&self, sc: f64, e: u32, r: u32, counted: u64) -> (f64, u32) {
        let c = counted as i64 + self.noise[e as usize];
        let spent = c.max(0) as u32;
        (upd(sc, c, &self.score), r.saturating_sub(spent))
    }

    pub fn min_noise(&self) -> i64 {
        *self.noise.iter().min().expect("noise is non-empty")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct Key {
    sc: u64,
    e: u32,
    r: u32,
    x: u32,
    pending: Vec<u32>,
}

/// Memoized solver for `f_{sc,e,r}^x`.
pub struct Solver<'a> {
    env: &'a GameEnv,
    memo: HashMap<Key, f64>,
}

impl<'a> Solver<'a> {
    pub fn new(env: &'a GameEnv) -> Self {
        Solver {
            env,
            memo: HashMap::new(),
        }
    }

    pub fn states(&self) -> usize {
        self.memo.len()
    }

    /// `pending` holds the unscored counts of the previous `E` epochs, oldest first.
    pub fn value(
        &mut self,
        sc: f64,
        e: u32,
        r: u32,
        x: u32,
        pending: &[u32],
    ) -> Result<f64, SimError> {
        debug_assert_eq!(pending.len(), self.env.delay);
        let key = Key {
            sc: sc.to_bits(),
            e,
            r,
            x,
            pending: pending.to_vec(),
        };
        if let Some(&v) = self.memo.get(&key) {
            return Ok(v);
        }
        if self.memo.len() >= MAX_STATES {
            return Err(SimError::StateSpace(MAX_STATES));
        }
        let env = self.env;

        let wait = if e == 0 {
            0.0
        } else {
            let (counted, next_pending) = match pending.split_first() {
                None => (x, Vec::new()),
                Some((&oldest, rest)) => {
                    let mut next = rest.to_vec();
                    next.push(x);
                    (oldest, next)
                }
            };
            let (sc2, r2) = env.end_epoch(sc, e, r, counted as u64);
            self.value(sc2, e - 1, r2, 0, &next_pending)?
        };

        let uncounted = pending.iter().map(|&p| p as u64).sum::<u64>() + x as u64;
        let execute = match env.best_rew_tilde(env.level(sc), e) {
            Some(best) if env.may_execute(e, r, uncounted) => {
                Some(best + self.value(sc, e, r, x + 1, pending)?)
            }
            _ => None,
        };

        let v = execute.map_or(wait, |ex| ex.max(wait));
        self.memo.insert(key, v);
        Ok(v)
    }
}

/// `f_{sc,e,r}^x` for a game without pending reports from earlier epochs.
pub fn optimal_value(sc: f64, e: u32, r: u32, x: u32, env: &GameEnv) -> Result<f64, SimError> {
    Solver::new(env).value(sc, e, r, x, &vec![0; env.delay])
}

/// A normalized strategy `(X_e, …, X_0)`, stored in that order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StrategyProfile(pub Vec<u32>);

impl StrategyProfile {
    /// Target for the epoch with `e` epochs remaining.
    pub fn target(&self, e: u32) -> u32 {
        self.0[self.0.len() - 1 - e as usize]
    }
}

/// Per-epoch trace of a profile evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStep {
    pub e: u32,
    pub sc: f64,
    pub budget: u32,
    /// Reports actually collected after truncation to the budget.
    pub executed: u32,
    pub reward: f64,
}

/// Expected total reward of following `profile` from score `sc` with the full budget.
/// Targets the budget cannot accommodate are truncated.
pub fn evaluate_strategy(profile: &StrategyProfile, env: &GameEnv, sc: f64) -> f64 {
    trace_strategy(profile, env, sc)
        .iter()
        .map(|s| s.reward)
        .sum()
}

pub fn trace_strategy(profile: &StrategyProfile, env: &GameEnv, sc: f64) -> Vec<EpochStep> {
    assert_eq!(
        profile.0.len(),
        env.horizon as usize + 1,
        "profile length must be horizon + 1"
    );
    let mut sc = sc;
    let mut r = env.budget;
    let mut pending = vec![0u32; env.delay];
    let mut steps = Vec::with_capacity(profile.0.len());
    for e in (0..=env.horizon).rev() {
        let unscored: u64 = pending.iter().map(|&p| p as u64).sum();
        let best = env.best_rew_tilde(env.level(sc), e);
        let mut x = 0u32;
        if best.is_some() {
            while x < profile.target(e) && env.may_execute(e, r, unscored + x as u64) {
                x += 1;
            }
        }
        let reward = best.map_or(0.0, |b| x as f64 * b);
        steps.push(EpochStep {
            e,
            sc,
            budget: r,
            executed: x,
            reward,
        });
        let counted = if env.delay == 0 {
            x
        } else {
            pending.push(x);
            pending.remove(0)
        };
        (sc, r) = env.end_epoch(sc, e, r, counted as u64);
    }
    steps
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn flat_env(rew: f64, noise: Vec<i64>, budget: u32) -> GameEnv {
        GameEnv {
            archetypes: vec![ScriptArchetype::new([rew; 4], [1.0; 4])],
            score: ScoreParams::new(1, 10, 0.5).unwrap(),
            thresholds: Thresholds::for_cap(10),
            horizon: noise.len() as u32 - 1,
            noise,
            budget,
            delay: 0,
        }
    }

    #[test]
    fn rew_tilde_examples() {
        let a = ScriptArchetype::new([1.0; 4], [0.5; 4]);
        assert_eq!(rew_tilde(&a, ReputationLevel::Low), 2.0);
        let a = ScriptArchetype::new([0.0; 4], [0.5; 4]);
        assert_eq!(rew_tilde(&a, ReputationLevel::High), 0.0);
        let a = ScriptArchetype::new([0.3, 0.4, 0.5, 0.7], [1.0; 4]);
        assert_eq!(rew_tilde(&a, ReputationLevel::VeryHigh), 0.7);
    }

    #[test]
    fn zero_budget_is_worthless() {
        let env = flat_env(2.0, vec![-1, -1, -1], 0);
        for sc in [10.0, 0.0, -3.0] {
            assert_eq!(optimal_value(sc, 2, 0, 0, &env).unwrap(), 0.0);
        }
    }

    #[test]
    fn single_epoch_fills_budget_plus_noise() {
        // X + N_0 <= r with N_0 = -1, r = 3 allows X = 4.
        let env = flat_env(2.0, vec![-1], 3);
        assert_eq!(optimal_value(10.0, 0, 3, 0, &env).unwrap(), 8.0);
    }

    #[test]
    fn evaluation_truncates_at_budget() {
        let env = flat_env(2.0, vec![-1], 3);
        assert_eq!(
            evaluate_strategy(&StrategyProfile(vec![0]), &env, 10.0),
            0.0
        );
        assert_eq!(
            evaluate_strategy(&StrategyProfile(vec![4]), &env, 10.0),
            8.0
        );
        assert_eq!(
            evaluate_strategy(&StrategyProfile(vec![9]), &env, 10.0),
            8.0
        );
    }

    #[test]
    fn tolerance_profile_keeps_the_cap() {
        // X = k - N_0 reports keep the score at M.
        let env = GameEnv {
            score: ScoreParams::new(2, 10, 0.5).unwrap(),
            ..flat_env(1.0, vec![-2, -3], 20)
        };
        let steps = trace_strategy(&StrategyProfile(vec![5, 4]), &env, 10.0);
        assert_eq!(steps[0].executed, 5);
        assert_eq!(steps[1].sc, 10.0);
        assert_eq!(steps[1].budget, 18);
    }

    #[test]
    fn availability_and_growth() {
        let mut env = flat_env(1.0, vec![-1, -1, -1], 3);
        assert!(env.satisfies_growth());
        let mut early = ScriptArchetype::new([5.0; 4], [1.0; 4]);
        early.available = Some([2, 2]);
        env.archetypes.push(early.clone());
        assert!(!env.satisfies_growth());
        early.available = Some([0, 1]);
        env.archetypes[1] = early;
        assert!(env.satisfies_growth());
        assert_eq!(env.best_rew_tilde(ReputationLevel::High, 2), Some(1.0));
        assert_eq!(env.best_rew_tilde(ReputationLevel::High, 1), Some(5.0));
    }

    #[test]
    fn solver_memoizes_states() {
        let env = flat_env(1.0, vec![-1; 2], 3);
        let mut solver = Solver::new(&env);
        solver.value(10.0, 1, 3, 0, &[]).unwrap();
        assert!(solver.states() > 0);
    }

    #[test]
    fn validation() {
        let mut env = flat_env(1.0, vec![-1, -1], 3);
        assert!(env.validate().is_ok());
        env.noise.push(-1);
        assert!(env.validate().is_err());
        let mut env = flat_env(1.0, vec![0, -1], 3);
        assert!(env.validate().is_err());
        env.noise = vec![-1, -1];
        env.archetypes[0].exp_report[1] = 0.0;
        assert!(env.validate().is_err());
        env.archetypes[0].exp_report = [0.9, 0.8, 0.8, 0.9];
        assert!(env.validate().is_err());
    }
}
