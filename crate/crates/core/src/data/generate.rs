//! Offline dataset generators for the toy environments.

use super::dataset::{Dataset, DatasetMeta};
use super::env::{random_action, Bandit2d, Env, EnvName, PointMaze};
use crate::error::{Error, Result};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Episodes rolled out per scripted policy when measuring reference returns.
pub const REFERENCE_EPISODES: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScriptedPolicy {
    Expert,
    Random,
}

/// Runs one episode of a scripted policy, calling `record` per transition.
/// Returns the undiscounted return.
pub fn rollout(
    env: &mut dyn Env,
    policy: ScriptedPolicy,
    rng: &mut dyn RngCore,
    mut record: impl FnMut(&[f64], &[f64], f64, &[f64], bool),
) -> f64 {
    let mut obs = env.reset(rng);
    let mut total = 0.0;
    loop {
        let a = match policy {
            ScriptedPolicy::Expert => env.expert_action(&obs, rng),
            ScriptedPolicy::Random => random_action(env.act_dim(), rng),
        };
        let step = env.step(&a);
        record(&obs, &a, step.reward, &step.observation, step.done);
        total += step.reward;
        obs = step.observation;
        if step.done {
            return total;
        }
    }
}

/// Mean returns of the random and expert scripted policies, rolled out from
/// `seed`. Stored in dataset metadata so scores can be normalized.
pub fn reference_returns(env: EnvName, seed: u64, episodes: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = env.make();
    let mut mean = |policy| {
        (0..episodes)
            .map(|_| rollout(env.as_mut(), policy, &mut rng, |_, _, _, _, _| {}))
            .sum::<f64>()
            / episodes as f64
    };
    let random = mean(ScriptedPolicy::Random);
    let expert = mean(ScriptedPolicy::Expert);
    (random, expert)
}

fn meta(env: EnvName, rng: &mut impl Rng) -> DatasetMeta {
    let seed: u64 = rng.gen();
    let (random_return, expert_return) = reference_returns(env, seed, REFERENCE_EPISODES);
    DatasetMeta {
        env_name: env.as_str().to_string(),
        random_return,
        expert_return,
        reference_seed: Some(seed),
    }
}

/// `n` single-step samples whose actions come half from each mode.
pub fn gen_bandit2d(n: usize, rng: &mut impl Rng) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Usage("dataset size must be at least 1".into()));
    }
    let meta = meta(EnvName::Bandit2d, rng);
    let mut env = Bandit2d::default();
    let mut ds = Dataset::empty(1, 2, meta);
    let rng: &mut dyn RngCore = rng;
    for _ in 0..n {
        rollout(&mut env, ScriptedPolicy::Expert, rng, |s, a, r, s2, d| {
            ds.push(s, a, r, s2, d)
        });
    }
    Ok(ds)
}

/// `n` point-maze transitions. Whole episodes are assigned to the expert
/// whenever the expert's share of transitions so far is at most
/// `quality_mix`, otherwise to the uniform-random policy. The final episode
/// is cut at `n` rows and may end without a terminal flag.
pub fn gen_pointmaze(n: usize, quality_mix: f64, rng: &mut impl Rng) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Usage("dataset size must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&quality_mix) {
        return Err(Error::Usage(format!(
            "quality mix {quality_mix} outside [0, 1]"
        )));
    }
    let meta = meta(EnvName::Pointmaze, rng);
    let mut env = PointMaze::default();
    let mut ds = Dataset::empty(4, 2, meta);
    let mut expert_rows = 0usize;
    let rng: &mut dyn RngCore = rng;
    while ds.len() < n {
        let expert = quality_mix > 0.0 && (expert_rows as f64) <= quality_mix * ds.len() as f64;
        let policy = if expert {
            ScriptedPolicy::Expert
        } else {
            ScriptedPolicy::Random
        };
        let before = ds.len();
        rollout(&mut env, policy, rng, |s, a, r, s2, d| {
            if ds.len() < n {
                ds.push(s, a, r, s2, d)
            }
        });
        if expert {
            expert_rows += ds.len() - before;
        }
    }
    Ok(ds)
}

/// Dispatches to the generator for `env`.
pub fn generate(env: EnvName, n: usize, quality_mix: f64, rng: &mut impl Rng) -> Result<Dataset> {
    match env {
        EnvName::Bandit2d => gen_bandit2d(n, rng),
        EnvName::Pointmaze => gen_pointmaze(n, quality_mix, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandit_modes_are_balanced() {
        let ds = gen_bandit2d(10_000, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(ds.terminals.iter().all(|&t| t));
        let ones = (0..ds.len())
            .filter(|&i| Bandit2d::nearest_center(ds.action(i)).0 == 1)
            .count() as f64;
        let frac = ones / ds.len() as f64;
        assert!((frac - 0.5).abs() < 0.03, "{frac}");
        let mean = |k: usize| (0..ds.len()).map(|i| ds.action(i)[k]).sum::<f64>() / ds.len() as f64;
        assert!(mean(0).abs() < 0.03 && mean(1).abs() < 0.03);
        assert!(ds.rewards.iter().all(|&r| r <= 1.0));
        assert!(ds.rewards.iter().cloned().fold(f64::MIN, f64::max) > 0.99);
        ds.validate().unwrap();
    }

    #[test]
    fn pointmaze_quality_extremes() {
        let expert = gen_pointmaze(5_000, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let rets = expert.episode_returns();
        let mean = rets.iter().sum::<f64>() / rets.len() as f64;
        assert!((mean - expert.meta.expert_return).abs() < 0.05, "{mean}");

        let random = gen_pointmaze(5_000, 0.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let rets = random.episode_returns();
        let mean = rets.iter().sum::<f64>() / rets.len() as f64;
        assert!((mean - random.meta.random_return).abs() < 0.05, "{mean}");
    }

    #[test]
    fn pointmaze_terminals_mark_goal_or_timeout() {
        let ds = gen_pointmaze(3_000, 0.3, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(ds.len(), 3_000);
        ds.validate().unwrap();
        let mut len = 0;
        for i in 0..ds.len() {
            len += 1;
            let goal = ds.rewards[i] == 1.0;
            let timeout = len == PointMaze::MAX_STEPS;
            if i + 1 < ds.len() {
                assert_eq!(ds.terminals[i], goal || timeout, "row {i}");
            }
            if ds.terminals[i] {
                len = 0;
            }
        }
    }

    #[test]
    fn zero_rows_is_usage_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(matches!(gen_bandit2d(0, &mut rng), Err(Error::Usage(_))));
        assert!(matches!(
            gen_pointmaze(0, 0.5, &mut rng),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            gen_pointmaze(10, 1.5, &mut rng),
            Err(Error::Usage(_))
        ));
    }
}
