//! Instance files and random tiny instances.
//!
//! ```toml
//! horizon = 2
//! budget = 3
//! start_score = 10.0
//! delay = 0
//! noise = [-1, -2, -1]        # N_0, N_1, N_2
//! thresholds = [0.0, 3.5, 7.0] # optional, defaults to the cap thirds
//!
//! [score]
//! k = 1
//! cap = 10
//! recovery = 0.5
//!
//! [[archetype]]
//! name = "newsletter"
//! exp_reward = [0.2, 0.4, 0.6, 0.8]
//! exp_report = [0.5, 0.5, 0.4, 0.4]
//! available = [0, 1]           # optional, epochs remaining
//! ```

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use sandi_core::score::{ScoreParams, Thresholds};

use crate::game::{GameEnv, ScriptArchetype, SimError, LEVELS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub horizon: u32,
    pub budget: u32,
    pub start_score: f64,
    #[serde(default)]
    pub delay: usize,
    pub noise: Vec<i64>,
    #[serde(default)]
    pub thresholds: Option<[f64; 3]>,
    pub score: ScoreParams,
    #[serde(rename = "archetype")]
    pub archetypes: Vec<ScriptArchetype>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub env: GameEnv,
    pub start_score: f64,
}

impl Instance {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let file: InstanceFile =
            toml::from_str(text).map_err(|e| SimError::Invalid(e.to_string()))?;
        file.try_into()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&InstanceFile::from(self)).expect("instance serializes")
    }
}

impl TryFrom<InstanceFile> for Instance {
    type Error = SimError;

    fn try_from(file: InstanceFile) -> Result<Self, SimError> {
        let thresholds = match file.thresholds {
            Some(cuts) => Thresholds::new(cuts).map_err(|e| SimError::Invalid(e.to_string()))?,
            None => Thresholds::for_cap(file.score.cap),
        };
        if !(file.start_score.is_finite() && file.start_score <= file.score.cap as f64) {
            return Err(SimError::Invalid(format!(
                "start score {} above the cap",
                file.start_score
            )));
        }
        let env = GameEnv {
            archetypes: file.archetypes,
            score: file.score,
            thresholds,
            noise: file.noise,
            horizon: file.horizon,
            budget: file.budget,
            delay: file.delay,
        };
        env.validate()?;
        Ok(Instance {
            env,
            start_score: file.start_score,
        })
    }
}

impl From<&Instance> for InstanceFile {
    fn from(instance: &Instance) -> Self {
        let env = &instance.env;
        InstanceFile {
            horizon: env.horizon,
            budget: env.budget,
            start_score: instance.start_score,
            delay: env.delay,
            noise: env.noise.clone(),
            thresholds: Some(env.thresholds.cuts()),
            score: env.score,
            archetypes: env.archetypes.clone(),
        }
    }
}

/// Sorted values on a grid of quarters, so scores stay exactly representable.
fn sorted_quarters<R: Rng>(rng: &mut R, lo: u32, hi: u32, ascending: bool) -> [f64; LEVELS] {
    let mut v: [f64; LEVELS] = std::array::from_fn(|_| rng.gen_range(lo..=hi) as f64 / 4.0);
    v.sort_by(f64::total_cmp);
    if !ascending {
        v.reverse();
    }
    v
}

fn random_archetype<R: Rng>(rng: &mut R, horizon: u32, windows: bool) -> ScriptArchetype {
    let mut a = ScriptArchetype::new(
        sorted_quarters(rng, 0, 12, true),
        sorted_quarters(rng, 1, 4, false),
    );
    if windows && rng.gen_bool(0.3) {
        let lo = rng.gen_range(0..=horizon);
        a.available = Some([lo, rng.gen_range(lo..=horizon)]);
    }
    a
}

/// Shape of the instances drawn by [`random_tiny`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TinySpec {
    pub delay: usize,
    /// Let some archetypes run only in part of the game, which may violate the growth
    /// assumption.
    pub windows: bool,
    /// Draw start scores below zero as well as in `[0, M]`.
    pub negative_starts: bool,
}

/// A random instance small enough for [`crate::brute::brute_force_optimum`].
pub fn random_tiny<R: Rng>(rng: &mut R, spec: TinySpec) -> Instance {
    let TinySpec {
        delay,
        windows,
        negative_starts,
    } = spec;
    let horizon = rng.gen_range(0..=3);
    let k = rng.gen_range(1..=3);
    let cap = 8;
    let count = rng.gen_range(1..=3);
    let mut archetypes: Vec<ScriptArchetype> = (0..count)
        .map(|i| {
            let mut a = random_archetype(rng, horizon, windows);
            a.name = format!("a{i}");
            a
        })
        .collect();
    if archetypes.iter().all(|a| a.available.is_some()) {
        archetypes[0].available = None;
    }
    let env = GameEnv {
        archetypes,
        score: ScoreParams::new(k, cap, *[0.25, 0.5, 1.0].choose(rng).unwrap()).unwrap(),
        thresholds: Thresholds::for_cap(cap),
        noise: (0..=horizon).map(|_| rng.gen_range(-3..=-1)).collect(),
        horizon,
        budget: rng.gen_range(0..=5),
        delay,
    };
    let starts: &[f64] = if negative_starts {
        &[8.0, 6.5, 4.0, 2.5, 0.0, -1.0, -2.5]
    } else {
        &[8.0, 6.5, 4.0, 2.5, 0.0]
    };
    let start_score = *starts.choose(rng).unwrap();
    Instance { env, start_score }
}
