//! Seeded experiment runs, metric files and the hidden-size sweep.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::{EnvSpec, ExperimentConfig, MacsMode, OfflineSpec};
use super::eval::{evaluate_ctr_logged, evaluate_offline_metrics, EvalStep, OfflineMetrics};
use crate::agents::{ActorCriticAgent, Policy};
use crate::envs::{
    ingest_ratings, make_offline_env, synthetic_movielens_100k, train_mf, OfflineRecEnv, RatingsTable, SynthRecEnv,
};
use crate::error::{Error, Result};
use crate::macs::{train_macs_expert, Augmentation, CfTrainReport, CounterfactualPolicy, TrainingRun};
use crate::mdp::Environment;
use crate::nn::Metadata;

pub const METRICS_HEADER: &str = "episode,steps,avg_return,ctr,ctr_ma10,kl,aug_count,eps1,eps2,wall_ms,seed";
pub const AGGREGATE_HEADER: &str = "variant,mode,runs,mean_final_ctr,std_final_ctr,min_final_ctr,max_final_ctr";
pub const SWEEP_HEADER: &str = "hidden,runs,mean_final_ctr,std_final_ctr,argmax";

/// One evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    /// Training episodes completed.
    pub episode: u64,
    /// Environment steps taken in training so far.
    pub steps: u64,
    /// Mean training return over the episodes since the previous row.
    pub avg_return: f64,
    /// Evaluation click-through rate, exploration off.
    pub ctr: f64,
    /// Mean of this and up to nine preceding `ctr` values.
    pub ctr_ma10: f64,
    pub kl: Option<f64>,
    pub aug_count: u64,
    pub eps1: Option<f64>,
    pub eps2: Option<f64>,
    pub wall_ms: Option<u64>,
    pub seed: u64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.episode,
            self.steps,
            self.avg_return,
            self.ctr,
            self.ctr_ma10,
            opt(self.kl),
            self.aug_count,
            opt(self.eps1),
            opt(self.eps2),
            self.wall_ms.map(|w| w.to_string()).unwrap_or_default(),
            self.seed
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

/// Reads the `ctr` column of a metrics file written by [`metrics_csv`].
pub fn read_ctr_column(text: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Parse {
            line: 1,
            msg: "not a metrics file".into(),
        });
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .nth(3)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: i + 2,
                    msg: "missing ctr value".into(),
                })
        })
        .collect()
}

/// Everything one seed produced.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    /// Evaluation steps keyed by the training episode of their evaluation point.
    pub eval_log: Vec<(u64, EvalStep)>,
    pub agent: ActorCriticAgent,
    pub cf_policy: Option<CounterfactualPolicy>,
    /// Expert mode: the counterfactual-policy training report.
    pub cf_report: Option<CfTrainReport>,
    /// Offline environments: ranking metrics of the final policy.
    pub offline: Option<OfflineMetrics>,
}

impl SeedRun {
    pub fn final_ctr(&self) -> Option<f64> {
        self.rows.last().map(|r| r.ctr)
    }
}

/// A built environment of either kind.
#[derive(Debug, Clone)]
pub enum BuiltEnv {
    SynthRec(SynthRecEnv),
    Offline(OfflineRecEnv),
}

pub fn load_ratings(spec: &OfflineSpec) -> Result<RatingsTable> {
    match &spec.ratings {
        Some(path) => ingest_ratings(BufReader::new(File::open(path)?)),
        None => ingest_ratings(synthetic_movielens_100k(spec.data_seed).as_bytes()),
    }
}

pub fn build_env(spec: &EnvSpec) -> Result<BuiltEnv> {
    match spec {
        EnvSpec::SynthRec(c) => Ok(BuiltEnv::SynthRec(SynthRecEnv::new(c.clone())?)),
        EnvSpec::Offline(c) => {
            let table = load_ratings(c)?;
            let (model, _) = train_mf(&table, &c.mf)?;
            let env =
                make_offline_env(model, &table, c.history_len, c.data_seed)?.with_threshold(c.relevance_threshold);
            Ok(BuiltEnv::Offline(env))
        }
    }
}

/// Stable hash of the effective configuration, stored in checkpoints. The
/// output directory is left out: it does not change what is computed.
pub fn config_hash(cfg: &ExperimentConfig) -> u64 {
    let mut cfg = cfg.clone();
    cfg.out = PathBuf::new();
    // FNV-1a
    cfg.emit().bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Runs one seed in `env`. In expert mode `expert` is used when given;
/// otherwise the configured checkpoint is loaded, or an expert is trained
/// with this seed for `macs.expert_episodes` episodes.
pub fn run_seed(cfg: &ExperimentConfig, env: &BuiltEnv, seed: u64, expert: Option<&Policy>) -> Result<SeedRun> {
    match env {
        BuiltEnv::SynthRec(e) => run_seed_in(cfg, e, seed, expert, &|_| Ok(None)),
        BuiltEnv::Offline(e) => run_seed_in(cfg, e, seed, expert, &|p| {
            evaluate_offline_metrics(
                |s| p.act(s),
                e,
                cfg.schedule.eval_episodes,
                cfg.schedule.max_steps,
                seed,
            )
            .map(Some)
        }),
    }
}

type OfflineHook<'a> = &'a dyn Fn(&Policy) -> Result<Option<OfflineMetrics>>;

fn run_seed_in<E: Environment>(
    cfg: &ExperimentConfig,
    env: &E,
    seed: u64,
    expert: Option<&Policy>,
    offline: OfflineHook<'_>,
) -> Result<SeedRun> {
    cfg.validate()?;
    let started = Instant::now();
    let sched = &cfg.schedule;
    let macs = &cfg.macs.config;
    let hi = env.reward_range().1;
    let mut fixed_thresholds = None;
    let mut cf_report = None;
    let aug = match cfg.macs.mode {
        MacsMode::Off => Augmentation::Off,
        MacsMode::RandomMask => Augmentation::RandomMask {
            prob: cfg.macs.mask_prob,
        },
        MacsMode::Joint => Augmentation::Joint,
        MacsMode::Expert => {
            let expert = match (expert, &cfg.macs.expert_checkpoint) {
                (Some(p), _) => p.clone(),
                (None, Some(path)) => ActorCriticAgent::load_policy(BufReader::new(File::open(path)?))?,
                (None, None) => {
                    let mut pre = cfg.clone();
                    pre.macs.mode = MacsMode::Off;
                    pre.schedule.episodes = cfg.macs.expert_episodes;
                    pre.schedule.log_eval = false;
                    run_seed_in(&pre, env, seed, None, &|_| Ok(None))?.agent.policy()
                }
            };
            let (policy, report) =
                train_macs_expert(&expert, env, cfg.variant, &cfg.agent, macs, sched.max_steps, seed)?;
            fixed_thresholds = Some(macs.thresholds(sched.max_steps as f64 * hi, macs.shaped_cap(sched.max_steps, hi)));
            cf_report = Some(report);
            Augmentation::Expert(Box::new(policy))
        }
    };
    let mut run = TrainingRun::new(
        env.clone(),
        cfg.variant,
        cfg.agent.clone(),
        macs.clone(),
        aug,
        sched.max_steps,
        seed,
    )?;

    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut eval_log = Vec::new();
    let mut window = Vec::with_capacity(sched.eval_every);
    for ep in 1..=sched.episodes as u64 {
        let summary = run.run_episode()?;
        window.push(summary.ret);
        if ep % sched.eval_every as u64 != 0 {
            continue;
        }
        let policy = run.agent().policy();
        let (ctr, log) = evaluate_ctr_logged(|s| policy.act(s), env, sched.eval_episodes, sched.max_steps, seed)?;
        if sched.log_eval {
            eval_log.extend(log.into_iter().map(|s| (ep, s)));
        }
        let recent: Vec<f64> = rows.iter().rev().take(9).map(|r| r.ctr).chain([ctr]).collect();
        let th = summary.thresholds.or(fixed_thresholds);
        rows.push(MetricsRow {
            episode: ep,
            steps: summary.steps,
            avg_return: window.iter().sum::<f64>() / window.len() as f64,
            ctr,
            ctr_ma10: recent.iter().sum::<f64>() / recent.len() as f64,
            kl: summary.kl,
            aug_count: summary.aug_count,
            eps1: th.map(|t| t.eps1),
            eps2: th.map(|t| t.eps2),
            wall_ms: sched.wall_clock.then(|| started.elapsed().as_millis() as u64),
            seed,
        });
        window.clear();
    }
    let offline = offline(&run.agent().policy())?;
    Ok(SeedRun {
        seed,
        rows,
        eval_log,
        agent: run.agent().clone(),
        cf_policy: run.cf_policy().cloned(),
        cf_report,
        offline,
    })
}

/// Files written by a run, removed again if the run fails part-way.
struct OutputSet {
    paths: Vec<PathBuf>,
    armed: bool,
}

impl OutputSet {
    fn new() -> Self {
        Self {
            paths: Vec::new(),
            armed: true,
        }
    }

    fn write(&mut self, path: PathBuf, contents: &[u8]) -> Result<()> {
        self.paths.push(path.clone());
        let mut f = File::create(&path)?;
        f.write_all(contents)?;
        Ok(())
    }

    fn keep(mut self) -> Vec<PathBuf> {
        self.armed = false;
        std::mem::take(&mut self.paths)
    }
}

impl Drop for OutputSet {
    fn drop(&mut self) {
        if self.armed {
            for p in &self.paths {
                let _ = fs::remove_file(p);
            }
        }
    }
}

pub fn metrics_file(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("metrics_seed{seed}.csv"))
}

pub fn checkpoint_file(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("agent_seed{seed}.ckpt"))
}

pub fn cf_checkpoint_file(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("cf_seed{seed}.ckpt"))
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub runs: Vec<SeedRun>,
    pub files: Vec<PathBuf>,
    pub finals: Vec<f64>,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs every configured seed and writes, under `cfg.out`: `config.txt`, one
/// metrics file and one agent checkpoint per seed, the counterfactual policy
/// when there is one, optional evaluation logs, and `aggregate.csv`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let env = build_env(&cfg.env)?;
    run_experiment_in(cfg, &env)
}

pub fn run_experiment_in(cfg: &ExperimentConfig, env: &BuiltEnv) -> Result<ExperimentReport> {
    fs::create_dir_all(&cfg.out)?;
    let mut out = OutputSet::new();
    let meta = |episodes: u64, tag: &str| Metadata {
        config_hash: config_hash(cfg),
        episodes,
        tag: tag.to_string(),
    };
    out.write(cfg.out.join("config.txt"), cfg.emit().as_bytes())?;
    let mut runs = Vec::new();
    let mut offline_rows = String::from("seed,precision,recall,accuracy,episodes,degenerate_episodes\n");
    for &seed in &cfg.seeds {
        let run = run_seed(cfg, env, seed, None)?;
        out.write(metrics_file(&cfg.out, seed), metrics_csv(&run.rows).as_bytes())?;
        let mut bytes = Vec::new();
        run.agent.save(&meta(cfg.schedule.episodes as u64, ""), &mut bytes)?;
        out.write(checkpoint_file(&cfg.out, seed), &bytes)?;
        if let Some(cf) = &run.cf_policy {
            let mut bytes = Vec::new();
            cf.save(&meta(cf.episodes_trained(), ""), &mut bytes)?;
            out.write(cf_checkpoint_file(&cfg.out, seed), &bytes)?;
        }
        if cfg.schedule.log_eval {
            let mut s = String::from("episode,eval_episode,step,reward\n");
            for (ep, e) in &run.eval_log {
                let _ = writeln!(s, "{ep},{},{},{}", e.episode, e.step, e.reward);
            }
            out.write(cfg.out.join(format!("eval_seed{seed}.csv")), s.as_bytes())?;
        }
        if let Some(m) = &run.offline {
            let _ = writeln!(
                offline_rows,
                "{seed},{},{},{},{},{}",
                m.precision, m.recall, m.accuracy, m.episodes, m.degenerate_episodes
            );
        }
        runs.push(run);
    }
    let finals: Vec<f64> = runs.iter().filter_map(SeedRun::final_ctr).collect();
    out.write(
        cfg.out.join("aggregate.csv"),
        aggregate_csv(&cfg.variant.to_string(), cfg.macs.mode.name(), &finals).as_bytes(),
    )?;
    if matches!(cfg.env, EnvSpec::Offline(_)) {
        out.write(cfg.out.join("offline_metrics.csv"), offline_rows.as_bytes())?;
    }
    Ok(ExperimentReport {
        runs,
        files: out.keep(),
        finals,
    })
}

pub fn aggregate_csv(variant: &str, mode: &str, finals: &[f64]) -> String {
    let (mean, std) = mean_std(finals);
    let min = finals.iter().copied().fold(f64::INFINITY, f64::min);
    let max = finals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    format!(
        "{AGGREGATE_HEADER}\n{variant},{mode},{},{mean},{std},{min},{max}\n",
        finals.len()
    )
}

pub const DEFAULT_HIDDEN_SIZES: [usize; 3] = [64, 128, 256];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub hidden: usize,
    pub finals: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub argmax: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub csv: String,
    pub path: PathBuf,
}

impl SweepReport {
    pub fn best(&self) -> Option<usize> {
        self.rows.iter().find(|r| r.argmax).map(|r| r.hidden)
    }
}

/// Runs `sizes x seeds` experiments that differ only in hidden width. Each
/// size writes its per-seed files under `out/hidden<size>`; the aggregate
/// goes to `out/sweep.csv` with the best mean final CTR marked (the first
/// size wins ties).
pub fn sweep_hidden_sizes(base: &ExperimentConfig, sizes: &[usize], seeds: &[u64]) -> Result<SweepReport> {
    if sizes.is_empty() || seeds.is_empty() {
        return Err(Error::config("sweep needs at least one size and one seed"));
    }
    base.validate()?;
    let env = build_env(&base.env)?;
    let mut rows = Vec::new();
    for &hidden in sizes {
        let mut cfg = base.clone();
        cfg.agent.hidden = hidden;
        cfg.seeds = seeds.to_vec();
        cfg.out = base.out.join(format!("hidden{hidden}"));
        let report = run_experiment_in(&cfg, &env)?;
        let (mean, std) = mean_std(&report.finals);
        rows.push(SweepRow {
            hidden,
            finals: report.finals,
            mean,
            std,
            argmax: false,
        });
    }
    let best = rows
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (i, r)| match acc {
            Some((_, m)) if r.mean <= m => acc,
            _ => Some((i, r.mean)),
        })
        .map(|(i, _)| i);
    if let Some(i) = best {
        rows[i].argmax = true;
    }
    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.hidden,
            r.finals.len(),
            r.mean,
            r.std,
            u8::from(r.argmax)
        );
    }
    let path = base.out.join("sweep.csv");
    fs::create_dir_all(&base.out)?;
    fs::write(&path, &csv)?;
    Ok(SweepReport { rows, csv, path })
}
