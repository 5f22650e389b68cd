//! Exhaustive search over sender strategies for tiny instances.
//!
//! A strategy fixes, per epoch, how many reports to collect and which archetype runs in
//! each stretch between two reports. Reporting is the only event that changes the state,
//! so choosing one archetype per stretch covers every adaptive strategy. The expected
//! reward of a stretch is `E[q·Rew] / E[p]`: the script runs a geometric number of times.

use std::collections::HashMap;

use sandi_core::score::ReputationLevel;

use crate::game::{GameEnv, SimError};

pub const MAX_HORIZON: u32 = 3;
pub const MAX_BUDGET: u32 = 5;
pub const MAX_ARCHETYPES: usize = 3;
const MAX_LEAVES: u64 = 20_000_000;

/// What the sender does in one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochPlan {
    pub e: u32,
    pub level: ReputationLevel,
    /// Archetype index for each stretch; its length is the number of reports collected.
    pub scripts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BruteResult {
    pub value: f64,
    /// Plans for epochs `e_max, …, 0`.
    pub witness: Vec<EpochPlan>,
    pub leaves: u64,
}

pub fn brute_force_optimum(env: &GameEnv, sc: f64) -> Result<BruteResult, SimError> {
    env.validate()?;
    if env.horizon > MAX_HORIZON || env.budget > MAX_BUDGET || env.archetypes.len() > MAX_ARCHETYPES
    {
        return Err(SimError::TooLarge(format!(
            "horizon {} budget {} archetypes {}",
            env.horizon,
            env.budget,
            env.archetypes.len()
        )));
    }
    let mut search = Search {
        env,
        stretches: HashMap::new(),
        leaves: 0,
    };
    let (value, mut witness) = search.epoch(sc, env.horizon, env.budget, &vec![0; env.delay])?;
    witness.reverse();
    Ok(BruteResult {
        value,
        witness,
        leaves: search.leaves,
    })
}

struct Search<'a> {
    env: &'a GameEnv,
    /// Best multiset of `n` stretches per (level, epoch, n).
    stretches: HashMap<(ReputationLevel, u32, u32), (f64, Vec<usize>)>,
    leaves: u64,
}

impl Search<'_> {
    /// Returns the best value from the start of epoch `e` and its plans, epoch 0 first.
    fn epoch(
        &mut self,
        sc: f64,
        e: u32,
        r: u32,
        pending: &[u32],
    ) -> Result<(f64, Vec<EpochPlan>), SimError> {
        let env = self.env;
        let level = env.level(sc);
        let available: Vec<usize> = (0..env.archetypes.len())
            .filter(|&i| env.archetypes[i].available_at(e))
            .collect();
        let unscored: i64 = pending.iter().map(|&p| p as i64).sum();
        let max_x = if r == 0 || available.is_empty() {
            0
        } else {
            (r as i64 - env.noise[e as usize] - unscored).max(0) as u32
        };

        let mut best: Option<(f64, Vec<EpochPlan>)> = None;
        for x in 0..=max_x {
            let (reward, scripts) = self.best_stretches(level, e, x, &available);
            let (rest, mut plans) = if e == 0 {
                self.leaves += 1;
                if self.leaves > MAX_LEAVES {
                    return Err(SimError::TooLarge(format!(
                        "more than {MAX_LEAVES} strategies"
                    )));
                }
                (0.0, Vec::new())
            } else {
                let (counted, next) = match pending.split_first() {
                    None => (x, Vec::new()),
                    Some((&oldest, tail)) => {
                        let mut next = tail.to_vec();
                        next.push(x);
                        (oldest, next)
                    }
                };
                let c = counted as i64 + env.noise[e as usize];
                let sc2 = sandi_core::score::upd(sc, c, &env.score);
                let r2 = r.saturating_sub(c.max(0) as u32);
                self.epoch(sc2, e - 1, r2, &next)?
            };
            let total = reward + rest;
            if best.as_ref().is_none_or(|(v, _)| total > *v) {
                plans.push(EpochPlan { e, level, scripts });
                best = Some((total, plans));
            }
        }
        Ok(best.expect("x = 0 is always feasible"))
    }

    /// Enumerates every multiset of `n` available archetypes.
    fn best_stretches(
        &mut self,
        level: ReputationLevel,
        e: u32,
        n: u32,
        available: &[usize],
    ) -> (f64, Vec<usize>) {
        if let Some(hit) = self.stretches.get(&(level, e, n)) {
            return hit.clone();
        }
        let y = level.ordinal() as usize;
        let stretch = |i: usize| {
            let a = &self.env.archetypes[i];
            a.exp_reward[y] / a.exp_report[y]
        };
        let mut best = (0.0, Vec::new());
        let mut found = false;
        let mut pick = vec![0usize; n as usize];
        loop {
            let scripts: Vec<usize> = pick.iter().map(|&j| available[j]).collect();
            let value: f64 = scripts.iter().map(|&i| stretch(i)).sum();
            if !found || value > best.0 {
                best = (value, scripts);
                found = true;
            }
            // Next non-decreasing index sequence.
            let Some(pos) = (0..pick.len())
                .rev()
                .find(|&p| pick[p] + 1 < available.len())
            else {
                break;
            };
            let v = pick[pos] + 1;
            pick[pos..].iter_mut().for_each(|slot| *slot = v);
        }
        self.stretches.insert((level, e, n), best.clone());
        best
    }
}
