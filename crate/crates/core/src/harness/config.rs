//! Sectioned `key = value` experiment configuration.
//!
//! ```text
//! seeds = 0, 1, 2
//! out = results
//!
//! [env]
//! kind = synthrec
//!
//! [agent]
//! variant = ddpg
//!
//! [macs]
//! mode = joint
//!
//! [schedule]
//! episodes = 2000
//! ```
//!
//! Every key except `env.kind` and `agent.variant` has a default. Unknown
//! keys, duplicates and unparsable values are errors. [`ExperimentConfig::emit`]
//! writes the fully defaulted configuration back in the same format.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use crate::agents::{AgentConfig, Variant};
use crate::envs::{MfParams, SynthRecConfig, DEFAULT_RELEVANCE_THRESHOLD};
use crate::error::{Error, Result};
use crate::macs::{EstimatorConfig, MacsConfig};

const SECTIONS: [&str; 4] = ["env", "agent", "macs", "schedule"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacsMode {
    Off,
    Expert,
    Joint,
    RandomMask,
}

impl MacsMode {
    pub fn name(self) -> &'static str {
        match self {
            MacsMode::Off => "off",
            MacsMode::Expert => "expert",
            MacsMode::Joint => "joint",
            MacsMode::RandomMask => "random-mask",
        }
    }
}

impl fmt::Display for MacsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MacsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(MacsMode::Off),
            "expert" => Ok(MacsMode::Expert),
            "joint" => Ok(MacsMode::Joint),
            "random-mask" => Ok(MacsMode::RandomMask),
            other => Err(Error::config(format!("unknown macs mode {other:?}"))),
        }
    }
}

/// Offline environment built from a ratings file, or from the bundled
/// generator when no file is given.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineSpec {
    pub ratings: Option<PathBuf>,
    /// Seed of the generated ratings when `ratings` is unset.
    pub data_seed: u64,
    pub mf: MfParams,
    pub history_len: usize,
    pub relevance_threshold: f64,
}

impl Default for OfflineSpec {
    fn default() -> Self {
        Self {
            ratings: None,
            data_seed: 0,
            mf: MfParams::default(),
            history_len: 2,
            relevance_threshold: DEFAULT_RELEVANCE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    SynthRec(SynthRecConfig),
    Offline(OfflineSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacsSection {
    pub mode: MacsMode,
    pub config: MacsConfig,
    pub mask_prob: f64,
    /// Expert mode: load the expert from here instead of pre-training one.
    pub expert_checkpoint: Option<PathBuf>,
    /// Expert mode: training episodes for the pre-trained expert. The
    /// expert is trained with the run's own seed.
    pub expert_episodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub episodes: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Fill the `wall_ms` column. Off by default so that metric files are
    /// reproducible byte for byte.
    pub wall_clock: bool,
    /// Also write every evaluation step to `eval_<seed>.csv`.
    pub log_eval: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            episodes: 2000,
            max_steps: 20,
            eval_every: 100,
            eval_episodes: 10,
            wall_clock: false,
            log_eval: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub variant: Variant,
    pub agent: AgentConfig,
    pub macs: MacsSection,
    pub schedule: Schedule,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl ExperimentConfig {
    /// Defaults for everything but the two required keys.
    pub fn new(env: EnvSpec, variant: Variant) -> Self {
        let schedule = Schedule::default();
        Self {
            env,
            variant,
            agent: AgentConfig::for_variant(variant),
            macs: MacsSection {
                mode: MacsMode::Off,
                config: MacsConfig::default(),
                mask_prob: 0.1,
                expert_checkpoint: None,
                expert_episodes: schedule.episodes,
            },
            schedule,
            seeds: vec![0],
            out: PathBuf::from("results"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        self.macs.config.validate()?;
        if let EnvSpec::SynthRec(c) = &self.env {
            c.validate()?;
        }
        if !(0.0..=1.0).contains(&self.macs.mask_prob) {
            return Err(Error::config("macs.mask_prob must lie in [0, 1]"));
        }
        let s = &self.schedule;
        if s.max_steps == 0 || s.eval_every == 0 || s.eval_episodes == 0 {
            return Err(Error::config(
                "schedule.max_steps, eval_every and eval_episodes must be positive",
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must not be empty"));
        }
        Ok(())
    }

    /// The fully defaulted configuration in the parseable text format.
    pub fn emit(&self) -> String {
        let mut o = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(o, "seeds = {}", seeds.join(", "));
        let _ = writeln!(o, "out = {}", self.out.display());

        o.push_str("\n[env]\n");
        match &self.env {
            EnvSpec::SynthRec(c) => {
                kv(&mut o, "kind", "synthrec");
                kv(&mut o, "n_static", c.n_static);
                kv(&mut o, "n_dynamic", c.n_dynamic);
                kv(&mut o, "item_dim", c.item_dim);
                kv(&mut o, "history_len", c.history_len);
                kv(&mut o, "essential_static_count", c.essential_static_count);
                kv(&mut o, "drift_rate", c.drift_rate);
                kv(&mut o, "seed", c.seed);
                kv(&mut o, "click_scale", c.click_scale);
                kv(&mut o, "preference_scale", c.preference_scale);
                kv(&mut o, "interest_scale", c.interest_scale);
                kv(&mut o, "coherence", c.coherence);
                kv(&mut o, "click_bias", c.click_bias);
                kv(&mut o, "context_sharpness", c.context_sharpness);
            }
            EnvSpec::Offline(c) => {
                kv(&mut o, "kind", "offline");
                kv(&mut o, "ratings", opt_path(&c.ratings));
                kv(&mut o, "data_seed", c.data_seed);
                kv(&mut o, "mf_k", c.mf.k);
                kv(&mut o, "mf_epochs", c.mf.epochs);
                kv(&mut o, "mf_lr", c.mf.lr);
                kv(&mut o, "mf_reg", c.mf.reg);
                kv(&mut o, "mf_seed", c.mf.seed);
                kv(&mut o, "holdout_frac", c.mf.holdout_frac);
                kv(&mut o, "history_len", c.history_len);
                kv(&mut o, "relevance_threshold", c.relevance_threshold);
            }
        }

        o.push_str("\n[agent]\n");
        let a = &self.agent;
        kv(&mut o, "variant", self.variant);
        kv(&mut o, "gamma", a.gamma);
        kv(&mut o, "tau", a.tau);
        kv(&mut o, "batch_size", a.batch_size);
        kv(&mut o, "buffer_capacity", a.buffer_capacity);
        kv(&mut o, "hidden", a.hidden);
        kv(&mut o, "hidden_layers", a.hidden_layers);
        kv(&mut o, "actor_lr", a.actor_lr);
        kv(&mut o, "critic_lr", a.critic_lr);
        kv(&mut o, "sigma_explore", a.sigma_explore);
        kv(&mut o, "alpha", a.alpha);
        kv(&mut o, "policy_delay", a.policy_delay);
        kv(&mut o, "target_noise", a.target_noise);
        kv(&mut o, "noise_clip", a.noise_clip);
        kv(&mut o, "warmup_steps", a.warmup_steps);

        o.push_str("\n[macs]\n");
        let m = &self.macs;
        let c = &m.config;
        kv(&mut o, "mode", m.mode);
        kv(&mut o, "eps", c.eps);
        kv(&mut o, "lambda_base", c.lambda_base);
        kv(&mut o, "eps1", opt_f64(c.eps1));
        kv(&mut o, "eps2", opt_f64(c.eps2));
        kv(&mut o, "delta1", opt_f64(c.delta1));
        kv(&mut o, "delta2", opt_f64(c.delta2));
        kv(&mut o, "max_cf_episodes", c.max_cf_episodes);
        kv(&mut o, "cf_gamma", c.cf_gamma);
        kv(&mut o, "avg_window", c.avg_window);
        kv(&mut o, "qualify_episodes", c.qualify_episodes);
        kv(&mut o, "bins", c.estimator.bins);
        kv(&mut o, "smoothing", c.estimator.smoothing);
        kv(&mut o, "window", c.estimator.capacity);
        kv(&mut o, "warmup", c.estimator.warmup);
        kv(&mut o, "mask_prob", m.mask_prob);
        kv(&mut o, "expert_checkpoint", opt_path(&m.expert_checkpoint));
        kv(&mut o, "expert_episodes", m.expert_episodes);

        o.push_str("\n[schedule]\n");
        let s = &self.schedule;
        kv(&mut o, "episodes", s.episodes);
        kv(&mut o, "max_steps", s.max_steps);
        kv(&mut o, "eval_every", s.eval_every);
        kv(&mut o, "eval_episodes", s.eval_episodes);
        kv(&mut o, "wall_clock", s.wall_clock);
        kv(&mut o, "log_eval", s.log_eval);
        o
    }
}

fn kv(o: &mut String, key: &str, value: impl fmt::Display) {
    let _ = writeln!(o, "{key} = {value}");
}

fn opt_f64(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map_or_else(|| "none".to_string(), |p| p.display().to_string())
}

struct Entry {
    value: String,
    line: usize,
}

/// Key-value pairs by `section.key`; top-level keys have no prefix.
struct Table {
    entries: BTreeMap<String, Entry>,
}

impl Table {
    fn parse(source: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (i, raw) in source.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| parse_err(line_no, "unterminated section header"))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(Error::config(format!("unknown section [{name}] on line {line_no}")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(line_no, "expected `key = value`"))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(parse_err(line_no, "empty key"));
            }
            let full = match &section {
                Some(s) => format!("{s}.{key}"),
                None => key.to_string(),
            };
            let entry = Entry {
                value: value.trim().to_string(),
                line: line_no,
            };
            if let Some(prev) = entries.insert(full.clone(), entry) {
                return Err(Error::config(format!(
                    "duplicate key {full} (first on line {})",
                    prev.line
                )));
            }
        }
        Ok(Self { entries })
    }

    fn take_str(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.remove(key).map(|e| (e.value, e.line))
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take_str(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::config(format!("{key} on line {line}: cannot parse {v:?}"))),
        }
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    /// `auto` keeps the derived default.
    fn set_opt_f64(&mut self, key: &str, slot: &mut Option<f64>) -> Result<()> {
        match self.take_str(key) {
            None => Ok(()),
            Some((v, _)) if v == "auto" => {
                *slot = None;
                Ok(())
            }
            Some((v, line)) => {
                let x = v
                    .parse()
                    .map_err(|_| Error::config(format!("{key} on line {line}: cannot parse {v:?}")))?;
                *slot = Some(x);
                Ok(())
            }
        }
    }

    fn set_opt_path(&mut self, key: &str, slot: &mut Option<PathBuf>) {
        if let Some((v, _)) = self.take_str(key) {
            *slot = if v == "none" || v.is_empty() {
                None
            } else {
                Some(PathBuf::from(v))
            };
        }
    }

    fn required(&mut self, key: &str) -> Result<(String, usize)> {
        self.take_str(key)
            .ok_or_else(|| Error::config(format!("missing required key {key}")))
    }

    fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((k, e)) => Err(Error::config(format!("unknown key {k} on line {}", e.line))),
        }
    }
}

fn parse_err(line: usize, msg: &str) -> Error {
    Error::Parse {
        line,
        msg: msg.to_string(),
    }
}

pub fn parse_config(source: &str) -> Result<ExperimentConfig> {
    let mut t = Table::parse(source)?;
    let (kind, kind_line) = t.required("env.kind")?;
    let env = match kind.as_str() {
        "synthrec" => {
            let mut c = SynthRecConfig::default();
            t.set("env.n_static", &mut c.n_static)?;
            t.set("env.n_dynamic", &mut c.n_dynamic)?;
            t.set("env.item_dim", &mut c.item_dim)?;
            t.set("env.history_len", &mut c.history_len)?;
            t.set("env.essential_static_count", &mut c.essential_static_count)?;
            t.set("env.drift_rate", &mut c.drift_rate)?;
            t.set("env.seed", &mut c.seed)?;
            t.set("env.click_scale", &mut c.click_scale)?;
            t.set("env.preference_scale", &mut c.preference_scale)?;
            t.set("env.interest_scale", &mut c.interest_scale)?;
            t.set("env.coherence", &mut c.coherence)?;
            t.set("env.click_bias", &mut c.click_bias)?;
            t.set("env.context_sharpness", &mut c.context_sharpness)?;
            EnvSpec::SynthRec(c)
        }
        "offline" => {
            let mut c = OfflineSpec::default();
            t.set_opt_path("env.ratings", &mut c.ratings);
            t.set("env.data_seed", &mut c.data_seed)?;
            t.set("env.mf_k", &mut c.mf.k)?;
            t.set("env.mf_epochs", &mut c.mf.epochs)?;
            t.set("env.mf_lr", &mut c.mf.lr)?;
            t.set("env.mf_reg", &mut c.mf.reg)?;
            t.set("env.mf_seed", &mut c.mf.seed)?;
            t.set("env.holdout_frac", &mut c.mf.holdout_frac)?;
            t.set("env.history_len", &mut c.history_len)?;
            t.set("env.relevance_threshold", &mut c.relevance_threshold)?;
            EnvSpec::Offline(c)
        }
        other => {
            return Err(Error::config(format!(
                "env.kind on line {kind_line}: unknown environment {other:?}"
            )));
        }
    };

    let (variant, _) = t.required("agent.variant")?;
    let variant: Variant = variant.parse()?;
    let mut cfg = ExperimentConfig::new(env, variant);

    if let Some((v, line)) = t.take_str("seeds") {
        cfg.seeds = v
            .split(',')
            .map(|s| s.trim().parse::<u64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::config(format!("seeds on line {line}: expected comma-separated integers")))?;
    }
    if let Some((v, _)) = t.take_str("out") {
        cfg.out = PathBuf::from(v);
    }

    let a = &mut cfg.agent;
    t.set("agent.gamma", &mut a.gamma)?;
    t.set("agent.tau", &mut a.tau)?;
    t.set("agent.batch_size", &mut a.batch_size)?;
    t.set("agent.buffer_capacity", &mut a.buffer_capacity)?;
    t.set("agent.hidden", &mut a.hidden)?;
    t.set("agent.hidden_layers", &mut a.hidden_layers)?;
    t.set("agent.actor_lr", &mut a.actor_lr)?;
    t.set("agent.critic_lr", &mut a.critic_lr)?;
    t.set("agent.sigma_explore", &mut a.sigma_explore)?;
    t.set("agent.alpha", &mut a.alpha)?;
    t.set("agent.policy_delay", &mut a.policy_delay)?;
    t.set("agent.target_noise", &mut a.target_noise)?;
    t.set("agent.noise_clip", &mut a.noise_clip)?;
    t.set("agent.warmup_steps", &mut a.warmup_steps)?;

    let m = &mut cfg.macs;
    t.set("macs.mode", &mut m.mode)?;
    let c = &mut m.config;
    t.set("macs.eps", &mut c.eps)?;
    t.set("macs.lambda_base", &mut c.lambda_base)?;
    t.set_opt_f64("macs.eps1", &mut c.eps1)?;
    t.set_opt_f64("macs.eps2", &mut c.eps2)?;
    t.set_opt_f64("macs.delta1", &mut c.delta1)?;
    t.set_opt_f64("macs.delta2", &mut c.delta2)?;
    t.set("macs.max_cf_episodes", &mut c.max_cf_episodes)?;
    t.set("macs.cf_gamma", &mut c.cf_gamma)?;
    t.set("macs.avg_window", &mut c.avg_window)?;
    t.set("macs.qualify_episodes", &mut c.qualify_episodes)?;
    let e: &mut EstimatorConfig = &mut c.estimator;
    t.set("macs.bins", &mut e.bins)?;
    t.set("macs.smoothing", &mut e.smoothing)?;
    t.set("macs.window", &mut e.capacity)?;
    t.set("macs.warmup", &mut e.warmup)?;
    t.set("macs.mask_prob", &mut m.mask_prob)?;
    t.set_opt_path("macs.expert_checkpoint", &mut m.expert_checkpoint);

    let s = &mut cfg.schedule;
    t.set("schedule.episodes", &mut s.episodes)?;
    t.set("schedule.max_steps", &mut s.max_steps)?;
    t.set("schedule.eval_every", &mut s.eval_every)?;
    t.set("schedule.eval_episodes", &mut s.eval_episodes)?;
    t.set("schedule.wall_clock", &mut s.wall_clock)?;
    t.set("schedule.log_eval", &mut s.log_eval)?;
    // Defaults to the run length, so it is read after the schedule.
    cfg.macs.expert_episodes = cfg.schedule.episodes;
    t.set("macs.expert_episodes", &mut cfg.macs.expert_episodes)?;

    t.finish()?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[env]\nkind = synthrec\n[agent]\nvariant = ddpg\n";

    #[test]
    fn defaults_fill_everything_else() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.agent.hidden, 128);
        assert_eq!(c.variant, Variant::Ddpg);
        assert_eq!(c.macs.mode, MacsMode::Off);
        assert_eq!(c.schedule, Schedule::default());
        assert_eq!(c.env, EnvSpec::SynthRec(SynthRecConfig::default()));
        assert_eq!(c.macs.expert_episodes, 2000);
        let td3 = parse_config("[env]\nkind = synthrec\n[agent]\nvariant = td3\n").unwrap();
        assert_eq!(td3.agent.warmup_steps, 500);
    }

    #[test]
    fn emitted_config_reparses_identically() {
        let src = "seeds = 3, 4\nout = /tmp/x # trailing comment\n[env]\nkind = offline\nmf_k = 8\n\
                   [agent]\nvariant = sac\nhidden = 64\nalpha = 0.05\n[macs]\nmode = joint\neps1 = inf\n\
                   delta2 = 0.25\n[schedule]\nepisodes = 30\neval_every = 7\n";
        let c = parse_config(src).unwrap();
        assert_eq!(c.macs.config.eps1, Some(f64::INFINITY));
        let text = c.emit();
        let again = parse_config(&text).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.emit(), text);
        let d = parse_config(MINIMAL).unwrap();
        assert_eq!(parse_config(&d.emit()).unwrap(), d);
    }

    #[test]
    fn rejections() {
        let bad_variant = "[env]\nkind = synthrec\n[agent]\nvariant = DQN\n";
        assert!(matches!(parse_config(bad_variant), Err(Error::Config(_))));
        let missing = "[env]\nkind = synthrec\n";
        match parse_config(missing) {
            Err(Error::Config(m)) => assert!(m.contains("agent.variant"), "{m}"),
            other => panic!("{other:?}"),
        }
        let unknown = format!("{MINIMAL}[schedule]\nepisodez = 3\n");
        match parse_config(&unknown) {
            Err(Error::Config(m)) => assert!(m.contains("schedule.episodez"), "{m}"),
            other => panic!("{other:?}"),
        }
        let mismatch = format!("{MINIMAL}[schedule]\nepisodes = many\n");
        assert!(matches!(parse_config(&mismatch), Err(Error::Config(_))));
        let dup = format!("{MINIMAL}[agent]\nvariant = sac\n");
        assert!(matches!(parse_config(&dup), Err(Error::Config(_))));
        assert!(matches!(
            parse_config("[env\nkind = synthrec"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("[env]\nkind synthrec"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(parse_config("[extra]\n"), Err(Error::Config(_))));
        let bad_mode = format!("{MINIMAL}[macs]\nmode = sometimes\n");
        assert!(matches!(parse_config(&bad_mode), Err(Error::Config(_))));
    }
}
