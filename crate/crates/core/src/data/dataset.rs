use crate::engine::Tensor;
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: &[u8; 4] = b"DPG1";

/// Provenance and reference returns of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env_name: String,
    pub random_return: f64,
    pub expert_return: f64,
    /// Seed that reproduces the reference-return rollouts.
    #[serde(default)]
    pub reference_seed: Option<u64>,
}

/// Columnar offline transitions `(s, a, r, s', done)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub observations: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_observations: Vec<f64>,
    pub terminals: Vec<bool>,
    pub meta: DatasetMeta,
}

/// A minibatch gathered from a [`Dataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub observations: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub next_observations: Tensor,
    pub terminals: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

impl Dataset {
    pub fn empty(obs_dim: usize, act_dim: usize, meta: DatasetMeta) -> Self {
        Self {
            obs_dim,
            act_dim,
            observations: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_observations: Vec::new(),
            terminals: Vec::new(),
            meta,
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(
        &mut self,
        obs: &[f64],
        action: &[f64],
        reward: f64,
        next_obs: &[f64],
        terminal: bool,
    ) {
        debug_assert_eq!(obs.len(), self.obs_dim);
        debug_assert_eq!(action.len(), self.act_dim);
        self.observations.extend_from_slice(obs);
        self.actions.extend_from_slice(action);
        self.rewards.push(reward);
        self.next_observations.extend_from_slice(next_obs);
        self.terminals.push(terminal);
    }

    pub fn observation(&self, i: usize) -> &[f64] {
        &self.observations[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * self.act_dim..(i + 1) * self.act_dim]
    }

    pub fn next_observation(&self, i: usize) -> &[f64] {
        &self.next_observations[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    /// Checks column lengths, action bounds and finiteness.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let bad = |what: &str| Err(Error::Usage(format!("dataset: {what}")));
        if self.observations.len() != n * self.obs_dim
            || self.next_observations.len() != n * self.obs_dim
            || self.actions.len() != n * self.act_dim
            || self.terminals.len() != n
        {
            return bad("column lengths disagree");
        }
        if self.actions.iter().any(|a| !(-1.0..=1.0).contains(a)) {
            return bad("action outside [-1, 1]");
        }
        if self.rewards.iter().any(|r| !r.is_finite()) {
            return bad("non-finite reward");
        }
        if self
            .observations
            .iter()
            .chain(&self.next_observations)
            .any(|v| !v.is_finite())
        {
            return bad("non-finite observation");
        }
        if !self.meta.random_return.is_finite() || !self.meta.expert_return.is_finite() {
            return bad("non-finite reference return");
        }
        Ok(())
    }

    /// Gathers rows into a [`Batch`].
    pub fn batch(&self, indices: &[usize]) -> Batch {
        let gather = |col: &[f64], width: usize| {
            let mut out = Vec::with_capacity(indices.len() * width);
            for &i in indices {
                out.extend_from_slice(&col[i * width..(i + 1) * width]);
            }
            Tensor::matrix(indices.len(), width, out).unwrap()
        };
        Batch {
            observations: gather(&self.observations, self.obs_dim),
            actions: gather(&self.actions, self.act_dim),
            rewards: indices.iter().map(|&i| self.rewards[i]).collect(),
            next_observations: gather(&self.next_observations, self.obs_dim),
            terminals: indices.iter().map(|&i| self.terminals[i]).collect(),
        }
    }

    /// Adds `shift` to every stored reward.
    pub fn shift_rewards(&mut self, shift: f64) {
        self.rewards.iter_mut().for_each(|r| *r += shift);
    }

    /// Undiscounted returns of every complete episode (rows up to and
    /// including a terminal). A trailing truncated episode is ignored.
    pub fn episode_returns(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut acc = 0.0;
        for (r, &done) in self.rewards.iter().zip(&self.terminals) {
            acc += r;
            if done {
                out.push(acc);
                acc = 0.0;
            }
        }
        out
    }
}

/// Uniform i.i.d. row indices, drawn from `rng`.
pub fn sample_indices(n: usize, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if batch_size < 1 {
        return Err(Error::Usage("batch size must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::Usage("cannot sample from an empty dataset".into()));
    }
    Ok((0..batch_size).map(|_| rng.gen_range(0..n)).collect())
}

/// Uniform minibatch with replacement.
pub fn sample_batch(ds: &Dataset, batch_size: usize, rng: &mut impl Rng) -> Result<Batch> {
    let idx = sample_indices(ds.len(), batch_size, rng)?;
    Ok(ds.batch(&idx))
}

/// DPG1 bytes: magic, `u32` n/obs_dim/act_dim, the float columns
/// (observations, actions, rewards, next observations), one byte per
/// terminal flag, then a `u32`-length-prefixed JSON metadata blob. All
/// integers and floats little-endian.
pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let meta = serde_json::to_vec(&ds.meta).expect("meta serializes");
    let floats =
        ds.observations.len() + ds.actions.len() + ds.rewards.len() + ds.next_observations.len();
    let mut out = Vec::with_capacity(16 + 8 * floats + ds.len() + 4 + meta.len());
    out.extend_from_slice(MAGIC);
    for v in [ds.len(), ds.obs_dim, ds.act_dim] {
        let v = u32::try_from(v).map_err(|_| Error::Usage(format!("{v} does not fit in u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for col in [
        &ds.observations,
        &ds.actions,
        &ds.rewards,
        &ds.next_observations,
    ] {
        for v in col.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend(ds.terminals.iter().map(|&t| t as u8));
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < n {
            return Err(Error::format(
                self.pos,
                format!("truncated {what}: need {n} bytes, {remaining} remain"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn floats(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = count
            .checked_mul(8)
            .ok_or_else(|| Error::format(self.pos, format!("{what} length overflows")))?;
        Ok(self
            .take(bytes, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected DPG1"));
    }
    let n = c.u32("sample count")?;
    let obs_dim = c.u32("obs_dim")?;
    let act_dim = c.u32("act_dim")?;
    let observations = c.floats(n * obs_dim, "observations")?;
    let actions = c.floats(n * act_dim, "actions")?;
    let rewards = c.floats(n, "rewards")?;
    let next_observations = c.floats(n * obs_dim, "next observations")?;
    let flags_at = c.pos;
    let terminals = c
        .take(n, "terminals")?
        .iter()
        .enumerate()
        .map(|(k, &b)| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::format(
                flags_at + k,
                format!("terminal flag {other}"),
            )),
        })
        .collect::<Result<Vec<_>>>()?;
    let meta_len = c.u32("metadata length")?;
    let meta_at = c.pos;
    let meta = serde_json::from_slice(c.take(meta_len, "metadata")?)
        .map_err(|e| Error::format(meta_at, format!("bad metadata: {e}")))?;
    if c.pos != bytes.len() {
        return Err(Error::format(c.pos, "trailing bytes after metadata"));
    }
    Ok(Dataset {
        obs_dim,
        act_dim,
        observations,
        actions,
        rewards,
        next_observations,
        terminals,
        meta,
    })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let bytes = encode_dataset(ds)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}

/// `100 · (ret − random) / (expert − random)`.
pub fn normalized_score(ret: f64, random_return: f64, expert_return: f64) -> Result<f64> {
    if !(expert_return > random_return) || !expert_return.is_finite() || !random_return.is_finite()
    {
        return Err(Error::Config(format!(
            "degenerate reference returns: random {random_return}, expert {expert_return}"
        )));
    }
    Ok(100.0 * (ret - random_return) / (expert_return - random_return))
}
