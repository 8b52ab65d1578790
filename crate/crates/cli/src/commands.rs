use crate::summary::{read_run, RunReport};
use diffpogan_core::data::{
    generate, load_dataset, reference_returns, save_dataset, EnvName, REFERENCE_EPISODES,
};
use diffpogan_core::trainer::{
    evaluate, load_policy, References, RunSummary, TrainOptions, CHECKPOINT_DIR, MANIFEST_FILE,
    REFERENCES_FILE,
};
use diffpogan_core::{Dataset, Error, Result, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Printed by `eval`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub mean_return: f64,
    pub normalized_score: f64,
    pub episodes: usize,
}

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io(path, e))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))
}

pub fn gen_data(env: &str, n: usize, quality_mix: f64, seed: u64, out: &Path) -> Result<()> {
    let env: EnvName = env.parse()?;
    if n == 0 {
        return Err(Error::Usage("--n must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&quality_mix) {
        return Err(Error::Usage(format!(
            "--quality-mix {quality_mix} is outside [0, 1]"
        )));
    }
    let ds = generate(env, n, quality_mix, &mut ChaCha8Rng::seed_from_u64(seed))?;
    save_dataset(&ds, out)
}

fn load_inputs(config: &Path, data: &Path, out_dir: &Path) -> Result<(TrainConfig, Dataset)> {
    let config = TrainConfig::load(config)?;
    let dataset = load_dataset(data)?;
    prepare_dir(out_dir)?;
    Ok((config, dataset))
}

pub fn train(config: &Path, data: &Path, out_dir: &Path, resume: bool) -> Result<RunSummary> {
    let (config, dataset) = load_inputs(config, data, out_dir)?;
    diffpogan_core::trainer::train(&config, &dataset, out_dir, &TrainOptions { resume })
}

fn checkpoint_dir(path: &Path) -> PathBuf {
    if path.join(MANIFEST_FILE).exists() {
        path.to_path_buf()
    } else {
        path.join(CHECKPOINT_DIR)
    }
}

pub fn eval(
    checkpoint: &Path,
    env: &str,
    episodes: usize,
    seed: u64,
    data: Option<&Path>,
) -> Result<EvalReport> {
    let env_name: EnvName = env.parse()?;
    let dir = checkpoint_dir(checkpoint);
    let (policy, schedule, _) = load_policy(&dir)?;
    let stored = dir.join(REFERENCES_FILE);
    let known = match data {
        Some(path) => Some(References::of(&load_dataset(path)?)),
        None if stored.exists() => Some(References::load(&stored)?),
        None => None,
    };
    let references = known
        .filter(|r| r.env_name == env_name.as_str())
        .unwrap_or_else(|| {
            let (random_return, expert_return) =
                reference_returns(env_name, seed, REFERENCE_EPISODES);
            References {
                env_name: env_name.as_str().into(),
                random_return,
                expert_return,
            }
        });
    let mut env = env_name.make();
    if env.obs_dim() != policy.obs_dim() || env.act_dim() != policy.act_dim() {
        return Err(Error::Dimension(format!(
            "checkpoint policy is {}→{}, {} is {}→{}",
            policy.obs_dim(),
            policy.act_dim(),
            env_name.as_str(),
            env.obs_dim(),
            env.act_dim()
        )));
    }
    let r = evaluate(
        &policy,
        &schedule,
        env.as_mut(),
        (references.random_return, references.expert_return),
        episodes,
        seed,
    )?;
    Ok(EvalReport {
        mean_return: r.mean_return,
        normalized_score: r.normalized_score,
        episodes: r.episodes,
    })
}

/// Trains every `(name, config)` under `out_dir/name`, up to `jobs` at a
/// time, and summarizes each run. Results keep the input order.
fn run_all(
    runs: Vec<(String, TrainConfig)>,
    dataset: &Dataset,
    out_dir: &Path,
    window: usize,
    jobs: usize,
) -> Result<Vec<RunReport>> {
    if jobs == 0 {
        return Err(Error::Usage("--jobs must be at least 1".into()));
    }
    for (_, c) in &runs {
        c.validate()?;
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunReport>>>> =
        Mutex::new((0..runs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(runs.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some((name, config)) = runs.get(k) else {
                    break;
                };
                let dir = out_dir.join(name);
                let r =
                    diffpogan_core::trainer::train(config, dataset, &dir, &TrainOptions::default())
                        .and_then(|_| read_run(&dir, window));
                results.lock().expect("no poisoned lock")[k] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("no poisoned lock")
        .into_iter()
        .map(|r| r.expect("every run finished"))
        .collect()
}

pub fn ablate_t(
    config: &Path,
    data: &Path,
    t_list: &[usize],
    out_dir: &Path,
    window: usize,
    jobs: usize,
) -> Result<Vec<(usize, f64)>> {
    if t_list.is_empty() {
        return Err(Error::Usage("--t-list is empty".into()));
    }
    let (base, dataset) = load_inputs(config, data, out_dir)?;
    let runs = t_list
        .iter()
        .map(|&t| {
            (
                format!("t{t}"),
                TrainConfig {
                    diffusion_steps: t,
                    ..base.clone()
                },
            )
        })
        .collect();
    let reports = run_all(runs, &dataset, out_dir, window, jobs)?;
    let rows: Vec<(usize, f64)> = t_list
        .iter()
        .copied()
        .zip(reports.iter().map(|r| r.final_normalized_score))
        .collect();
    let mut csv = String::from("t,final_normalized_score\n");
    for (t, s) in &rows {
        csv.push_str(&format!("{t},{s}\n"));
    }
    write(&out_dir.join("summary.csv"), &csv)?;
    Ok(rows)
}

/// Returns `(with, without)` summary scores.
pub fn ablate_downweight(
    config: &Path,
    data: &Path,
    out_dir: &Path,
    window: usize,
    jobs: usize,
) -> Result<(f64, f64)> {
    let (base, dataset) = load_inputs(config, data, out_dir)?;
    let runs = vec![
        (
            "with_down_weight".to_string(),
            TrainConfig {
                use_down_weight: true,
                ..base.clone()
            },
        ),
        (
            "without_down_weight".to_string(),
            TrainConfig {
                use_down_weight: false,
                ..base
            },
        ),
    ];
    let reports = run_all(runs, &dataset, out_dir, window, jobs)?;
    let (with, without) = (
        reports[0].final_normalized_score,
        reports[1].final_normalized_score,
    );
    write(
        &out_dir.join("summary.csv"),
        &format!("variant,final_normalized_score\nwith_down_weight,{with}\nwithout_down_weight,{without}\n"),
    )?;
    Ok((with, without))
}

pub fn report(run_dirs: &[PathBuf], out: &Path, window: usize) -> Result<Vec<RunReport>> {
    let reports = run_dirs
        .iter()
        .map(|d| read_run(d, window))
        .collect::<Result<Vec<_>>>()?;
    let mut csv =
        String::from("run_dir,final_step,evals,final_normalized_score,best_normalized_score\n");
    for r in &reports {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.run_dir.display(),
            r.final_step,
            r.evals,
            r.final_normalized_score,
            r.best_normalized_score
        ));
    }
    write(out, &csv)?;
    Ok(reports)
}
