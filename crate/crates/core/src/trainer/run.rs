use super::config::TrainConfig;
use super::state::{StepMetrics, TrainerState};
use crate::data::{normalized_score, Dataset, Env, EnvName};
use crate::diffusion::{make_schedule, sample_action, NoiseSchedule, PolicyNet};
use crate::engine::checkpoint::{load_adam, load_mlp, save_adam, save_mlp};
use crate::engine::Tensor;
use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const METRICS_HEADER: &str =
    "step,critic_loss,policy_loss,disc_loss,diffusion_loss,mean_q,down_weight_mean,eval_return,normalized_score";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REFERENCES_FILE: &str = "references.json";

/// Environment and score anchors of the dataset a run trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct References {
    pub env_name: String,
    pub random_return: f64,
    pub expert_return: f64,
}

impl References {
    pub fn of(dataset: &Dataset) -> Self {
        Self {
            env_name: dataset.meta.env_name.clone(),
            random_return: dataset.meta.random_return,
            expert_return: dataset.meta.expert_return,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("references serialize") + "\n";
        write_file(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Outcome of [`evaluate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean_return: f64,
    pub normalized_score: f64,
    pub episodes: usize,
    pub returns: Vec<f64>,
}

/// Runs `episodes` episodes acting with `sample_action`. Episode `k` uses its
/// own RNG stream `k` under `seed`, for both the reset and the policy noise.
pub fn evaluate(
    policy: &PolicyNet,
    schedule: &NoiseSchedule,
    env: &mut dyn Env,
    references: (f64, f64),
    episodes: usize,
    seed: u64,
) -> Result<EvalResult> {
    let mut act = |obs: &[f64], rng: &mut ChaCha8Rng| {
        sample_action(policy, &Tensor::row(obs), schedule, rng).map(Tensor::into_data)
    };
    evaluate_with(&mut act, env, references, episodes, seed)
}

/// Maps an observation to an action, drawing any noise from the episode RNG.
pub type Controller<'a> = dyn FnMut(&[f64], &mut ChaCha8Rng) -> Result<Vec<f64>> + 'a;

/// [`evaluate`] for an arbitrary controller.
pub fn evaluate_with(
    act: &mut Controller<'_>,
    env: &mut dyn Env,
    references: (f64, f64),
    episodes: usize,
    seed: u64,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::Usage("evaluation needs at least one episode".into()));
    }
    let mut returns = Vec::with_capacity(episodes);
    for k in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut obs = env.reset(&mut rng);
        let mut total = 0.0;
        for _ in 0..env.max_steps() {
            let a = act(&obs, &mut rng)?;
            let step = env.step(&a);
            total += step.reward;
            obs = step.observation;
            if step.done {
                break;
            }
        }
        returns.push(total);
    }
    let mean_return = returns.iter().sum::<f64>() / episodes as f64;
    Ok(EvalResult {
        mean_return,
        normalized_score: normalized_score(mean_return, references.0, references.1)?,
        episodes,
        returns,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

/// Checkpoint manifest. `created_unix` is the only non-reproducible field
/// in a run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub step: u64,
    pub config_hash: String,
    pub policy_updates: u64,
    rng: RngState,
    pub created_unix: u64,
}

const NETWORKS: [&str; 7] = [
    "policy",
    "policy_target",
    "q1",
    "q2",
    "q1_target",
    "q2_target",
    "disc",
];
const OPTIMIZERS: [&str; 4] = ["policy", "q1", "q2", "disc"];

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Result<[u8; 32]> {
    let bad = || Error::Config(format!("bad rng seed `{s}` in manifest"));
    if s.len() != 64 {
        return Err(bad());
    }
    let mut out = [0u8; 32];
    for (k, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * k..2 * k + 2], 16).map_err(|_| bad())?;
    }
    Ok(out)
}

/// Writes every network, optimizer state, the config and the manifest into
/// `dir`.
pub fn save_checkpoint(state: &TrainerState, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let nets = [
        &state.policy.eps_model,
        &state.policy_target.eps_model,
        &state.critics.q1,
        &state.critics.q2,
        &state.critics.q1_target,
        &state.critics.q2_target,
        &state.disc.net,
    ];
    for (name, net) in NETWORKS.iter().zip(nets) {
        save_mlp(net, &dir.join(format!("{name}.bin")))?;
    }
    let opts = [
        &state.policy_opt,
        &state.q1_opt,
        &state.q2_opt,
        &state.disc_opt,
    ];
    for (name, opt) in OPTIMIZERS.iter().zip(opts) {
        save_adam(opt, &dir.join(format!("{name}.adam")))?;
    }
    write_file(&dir.join(CONFIG_FILE), state.config.to_json().as_bytes())?;
    let manifest = Manifest {
        step: state.step,
        config_hash: state.config.hash(),
        policy_updates: state.policy_updates,
        rng: RngState {
            seed: hex(&state.rng.get_seed()),
            stream: state.rng.get_stream(),
            word_pos: state.rng.get_word_pos().to_string(),
        },
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_file(&dir.join(MANIFEST_FILE), text.as_bytes())
}

/// Restores a full trainer from a checkpoint directory.
pub fn load_checkpoint(dir: &Path, obs_dim: usize, act_dim: usize) -> Result<TrainerState> {
    let config = TrainConfig::load(&dir.join(CONFIG_FILE))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
    if manifest.config_hash != config.hash() {
        return Err(Error::Config(
            "checkpoint config does not match its manifest hash".into(),
        ));
    }
    let mut state = TrainerState::new(config, obs_dim, act_dim)?;
    let load = |name: &str| load_mlp(&dir.join(format!("{name}.bin")));
    state.policy = PolicyNet::from_params(load("policy")?, obs_dim, act_dim)?;
    state.policy_target = PolicyNet::from_params(load("policy_target")?, obs_dim, act_dim)?;
    state.critics.q1 = load("q1")?;
    state.critics.q2 = load("q2")?;
    state.critics.q1_target = load("q1_target")?;
    state.critics.q2_target = load("q2_target")?;
    state.disc.net = load("disc")?;
    let opt = |name: &str| load_adam(&dir.join(format!("{name}.adam")));
    state.policy_opt = opt("policy")?;
    state.q1_opt = opt("q1")?;
    state.q2_opt = opt("q2")?;
    state.disc_opt = opt("disc")?;
    state.step = manifest.step;
    state.policy_updates = manifest.policy_updates;
    let mut rng = ChaCha8Rng::from_seed(unhex(&manifest.rng.seed)?);
    rng.set_stream(manifest.rng.stream);
    let word_pos: u128 = manifest
        .rng
        .word_pos
        .parse()
        .map_err(|_| Error::Config("bad rng position in manifest".into()))?;
    rng.set_word_pos(word_pos);
    state.rng = rng;
    Ok(state)
}

/// Loads just the policy and its schedule for evaluation.
pub fn load_policy(dir: &Path) -> Result<(PolicyNet, NoiseSchedule, TrainConfig)> {
    let config = TrainConfig::load(&dir.join(CONFIG_FILE))?;
    let net = load_mlp(&dir.join("policy.bin"))?;
    let act_dim = net.out_dim();
    let obs_dim = net
        .in_dim()
        .checked_sub(act_dim + crate::diffusion::TIME_EMBED_DIM)
        .ok_or_else(|| Error::Dimension("policy checkpoint has too few inputs".into()))?;
    let policy = PolicyNet::from_params(net, obs_dim, act_dim)?;
    let schedule = make_schedule(config.diffusion_steps, config.beta_min, config.beta_max)?;
    Ok((policy, schedule, config))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Running means over a logging interval.
#[derive(Default)]
struct Accumulator {
    critic: Vec<f64>,
    disc: Vec<f64>,
    mean_q: Vec<f64>,
    policy: Vec<f64>,
    diffusion: Vec<f64>,
    down_weight: Vec<f64>,
}

impl Accumulator {
    fn add(&mut self, m: &StepMetrics) {
        self.critic.push(m.critic_loss);
        self.disc.push(m.disc_loss);
        self.mean_q.push(m.mean_q);
        if let Some(p) = &m.policy {
            self.policy.push(p.loss);
            self.diffusion.push(p.diffusion_loss);
            self.down_weight.push(p.down_weight_mean);
        }
    }

    fn mean(v: &[f64]) -> String {
        if v.is_empty() {
            String::new()
        } else {
            (v.iter().sum::<f64>() / v.len() as f64).to_string()
        }
    }

    fn row(&self, step: u64, eval: Option<&EvalResult>) -> String {
        let (ret, score) = eval
            .map(|e| (e.mean_return.to_string(), e.normalized_score.to_string()))
            .unwrap_or_default();
        format!(
            "{step},{},{},{},{},{},{},{ret},{score}",
            Self::mean(&self.critic),
            Self::mean(&self.policy),
            Self::mean(&self.disc),
            Self::mean(&self.diffusion),
            Self::mean(&self.mean_q),
            Self::mean(&self.down_weight),
        )
    }
}

/// Paths and final numbers of a run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub final_step: u64,
    pub evals: Vec<(u64, EvalResult)>,
}

/// Options for [`train`].
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Continue from `out_dir/checkpoint` when it exists.
    pub resume: bool,
}

/// Trains until `config.total_steps` completed steps, logging a metrics row
/// every `log_interval` steps, evaluating every `eval_interval` steps, and
/// writing the final checkpoint. On a numeric failure the rows written so far
/// stay on disk.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    out_dir: &Path,
    options: &TrainOptions,
) -> Result<RunSummary> {
    config.validate()?;
    dataset.validate()?;
    if dataset.is_empty() {
        return Err(Error::Usage("cannot train on an empty dataset".into()));
    }
    let env_name: EnvName = dataset.meta.env_name.parse()?;
    let references = (dataset.meta.random_return, dataset.meta.expert_return);
    normalized_score(0.0, references.0, references.1)?;

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ckpt = out_dir.join(CHECKPOINT_DIR);
    let metrics_path = out_dir.join(METRICS_FILE);

    let resuming = options.resume && ckpt.join(MANIFEST_FILE).exists();
    let mut state = if resuming {
        let mut s = load_checkpoint(&ckpt, dataset.obs_dim, dataset.act_dim)?;
        if s.config.resume_hash() != config.resume_hash() {
            return Err(Error::Config(
                "resume config differs from the checkpoint beyond total_steps".into(),
            ));
        }
        s.config = config.clone();
        s
    } else {
        TrainerState::new(config.clone(), dataset.obs_dim, dataset.act_dim)?
    };
    write_file(&out_dir.join(CONFIG_FILE), config.to_json().as_bytes())?;

    let mut metrics: File = if resuming && metrics_path.exists() {
        OpenOptions::new()
            .append(true)
            .open(&metrics_path)
            .map_err(|e| Error::io(&metrics_path, e))?
    } else {
        let mut f = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        writeln!(f, "{METRICS_HEADER}").map_err(|e| Error::io(&metrics_path, e))?;
        f
    };

    let shifted;
    let train_data = if config.antmaze_reward_shift {
        let mut d = dataset.clone();
        d.shift_rewards(-1.0);
        shifted = d;
        &shifted
    } else {
        dataset
    };

    let mut env = env_name.make();
    let mut evals = Vec::new();
    let mut acc = Accumulator::default();
    while state.step < config.total_steps {
        let m = state.train_step(train_data)?;
        acc.add(&m);
        let step = state.step;
        let eval_now = step % config.eval_interval == 0;
        if eval_now || step % config.log_interval == 0 {
            let eval = if eval_now {
                let r = evaluate(
                    &state.policy,
                    &state.schedule,
                    env.as_mut(),
                    references,
                    config.eval_episodes,
                    config.seed.wrapping_add(step),
                )?;
                Some(r)
            } else {
                None
            };
            writeln!(metrics, "{}", acc.row(step, eval.as_ref()))
                .map_err(|e| Error::io(&metrics_path, e))?;
            metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
            if let Some(e) = eval {
                evals.push((step, e));
            }
            acc = Accumulator::default();
        }
    }
    save_checkpoint(&state, &ckpt)?;
    References::of(dataset).save(&ckpt.join(REFERENCES_FILE))?;
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        final_step: state.step,
        evals,
    })
}

/// Parses the `normalized_score` column of a metrics file: `(step, score)`
/// for every evaluation row.
pub fn read_eval_scores(metrics_path: &Path) -> Result<Vec<(u64, f64)>> {
    let text = std::fs::read_to_string(metrics_path).map_err(|e| Error::io(metrics_path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::format(
            0,
            format!("{} has an unexpected header", metrics_path.display()),
        ));
    }
    let mut out = Vec::new();
    let mut offset = METRICS_HEADER.len() + 1;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(Error::format(offset, "metrics row does not have 9 columns"));
        }
        if !cols[8].is_empty() {
            let step = cols[0]
                .parse()
                .map_err(|_| Error::format(offset, "bad step"))?;
            let score = cols[8]
                .parse()
                .map_err(|_| Error::format(offset, "bad score"))?;
            out.push((step, score));
        }
        offset += line.len() + 1;
    }
    Ok(out)
}
