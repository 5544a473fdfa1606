//! Flat key = value configuration. Every key has a default; a config file
//! overrides defaults and command-line `--key value` flags override the
//! file. `#` starts a comment.

use crate::{Error, Result};
use gplac_core::model::{ArchitectureConfig, ModelVariant};
use gplac_core::sim::SimConfig;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct Config {
    // model / architecture
    pub variant: ModelVariant,
    pub image_h: usize,
    pub image_w: usize,
    pub conv_filters: Vec<usize>,
    pub kernel: usize,
    pub padding: usize,
    pub fc_width: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub temperature: f64,
    pub dropout_p: f64,
    pub lambda: f32,
    // training
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub ft_phase1_steps: usize,
    pub batch_demo: usize,
    pub batch_weak: usize,
    pub lr: f32,
    pub seed: u64,
    pub eval_cadence: usize,
    pub eval_trials: usize,
    pub eval_subsample_trials: usize,
    pub weak_fraction: f64,
    pub holdout_fraction: f64,
    // dataset generation
    pub n_weak_envs: usize,
    pub n_test_envs: usize,
    pub demo_episodes: usize,
    pub episode_len: usize,
    pub weak_pos_per_env: usize,
    pub weak_neg_per_env: usize,
    pub gen_multi_demos: bool,
    // world constants
    pub dt: f32,
    pub a_max: f32,
    pub contact_radius: f32,
    pub goal_radius: f32,
    pub jitter_max: i32,
    pub demo_region: f32,
    pub max_distractors: usize,
    // experiment suite
    pub exp_variants: Vec<ModelVariant>,
    pub exp_seeds: usize,
    pub sweep_fractions: Vec<f64>,
    // viz
    pub viz_per_env: usize,
    // paths
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub paper_scale: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            variant: ModelVariant::Gplac,
            image_h: 64,
            image_w: 64,
            conv_filters: vec![16, 16, 8],
            kernel: 3,
            padding: 1,
            fc_width: 64,
            state_dim: 4,
            action_dim: 2,
            temperature: 1.0,
            dropout_p: 0.1,
            lambda: 1.0,
            total_steps: 5000,
            warmup_steps: 500,
            ft_phase1_steps: 1000,
            batch_demo: 32,
            batch_weak: 32,
            lr: 3e-4,
            seed: 0,
            eval_cadence: 250,
            eval_trials: 20,
            eval_subsample_trials: 20,
            weak_fraction: 1.0,
            holdout_fraction: 0.2,
            n_weak_envs: 8,
            n_test_envs: 8,
            demo_episodes: 60,
            episode_len: 40,
            weak_pos_per_env: 50,
            weak_neg_per_env: 50,
            gen_multi_demos: true,
            dt: 1.0 / 20.0,
            a_max: 0.5,
            contact_radius: 0.06,
            goal_radius: 0.08,
            jitter_max: 3,
            demo_region: 0.6,
            max_distractors: 3,
            exp_variants: vec![ModelVariant::Gplac, ModelVariant::Att1],
            exp_seeds: 3,
            sweep_fractions: vec![1.0, 0.1, 0.01],
            viz_per_env: 8,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            checkpoint: None,
            paper_scale: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Usage(format!("cannot parse {key} = {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Usage(format!("cannot parse {key} = {other:?} as bool"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| parse_num(key, v))
        .collect::<Result<Vec<T>>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(Error::Usage(format!("{key} must not be empty")))
            } else {
                Ok(v)
            }
        })
}

impl Config {
    /// Load defaults, then a config file if given, then flag overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Config> {
        let mut cfg = Config::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(e, path))?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::Usage(format!(
                        "{}:{}: expected key = value, got {raw:?}",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                cfg.set(key.trim(), value.trim())?;
            }
        }
        for (key, value) in overrides {
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "variant" => self.variant = ModelVariant::parse(value).map_err(Error::from)?,
            "image_h" => self.image_h = parse_num(key, value)?,
            "image_w" => self.image_w = parse_num(key, value)?,
            "conv_filters" => self.conv_filters = parse_list(key, value)?,
            "kernel" => self.kernel = parse_num(key, value)?,
            "padding" => self.padding = parse_num(key, value)?,
            "fc_width" => self.fc_width = parse_num(key, value)?,
            "state_dim" => self.state_dim = parse_num(key, value)?,
            "action_dim" => self.action_dim = parse_num(key, value)?,
            "temperature" => self.temperature = parse_num(key, value)?,
            "dropout_p" => self.dropout_p = parse_num(key, value)?,
            "lambda" => self.lambda = parse_num(key, value)?,
            "total_steps" => self.total_steps = parse_num(key, value)?,
            "warmup_steps" => self.warmup_steps = parse_num(key, value)?,
            "ft_phase1_steps" => self.ft_phase1_steps = parse_num(key, value)?,
            "batch_demo" => self.batch_demo = parse_num(key, value)?,
            "batch_weak" => self.batch_weak = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "eval_cadence" => self.eval_cadence = parse_num(key, value)?,
            "eval_trials" => self.eval_trials = parse_num(key, value)?,
            "eval_subsample_trials" => self.eval_subsample_trials = parse_num(key, value)?,
            "weak_fraction" => self.weak_fraction = parse_num(key, value)?,
            "holdout_fraction" => self.holdout_fraction = parse_num(key, value)?,
            "n_weak_envs" => self.n_weak_envs = parse_num(key, value)?,
            "n_test_envs" => self.n_test_envs = parse_num(key, value)?,
            "demo_episodes" => self.demo_episodes = parse_num(key, value)?,
            "episode_len" => self.episode_len = parse_num(key, value)?,
            "weak_pos_per_env" => self.weak_pos_per_env = parse_num(key, value)?,
            "weak_neg_per_env" => self.weak_neg_per_env = parse_num(key, value)?,
            "gen_multi_demos" => self.gen_multi_demos = parse_bool(key, value)?,
            "dt" => self.dt = parse_num(key, value)?,
            "a_max" => self.a_max = parse_num(key, value)?,
            "contact_radius" => self.contact_radius = parse_num(key, value)?,
            "goal_radius" => self.goal_radius = parse_num(key, value)?,
            "jitter_max" => self.jitter_max = parse_num(key, value)?,
            "demo_region" => self.demo_region = parse_num(key, value)?,
            "max_distractors" => self.max_distractors = parse_num(key, value)?,
            "exp_variants" => {
                self.exp_variants = value
                    .split(',')
                    .map(|v| ModelVariant::parse(v.trim()).map_err(Error::from))
                    .collect::<Result<Vec<_>>>()?;
            }
            "exp_seeds" => self.exp_seeds = parse_num(key, value)?,
            "sweep_fractions" => self.sweep_fractions = parse_list(key, value)?,
            "viz_per_env" => self.viz_per_env = parse_num(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "paper_scale" => self.paper_scale = parse_bool(key, value)?,
            _ => {
                return Err(Error::Usage(format!(
                    "unknown config key {key:?}\n{}",
                    KEY_HELP
                )))
            }
        }
        Ok(())
    }

    /// Architecture for a given variant under this config.
    pub fn arch_for(&self, variant: ModelVariant) -> ArchitectureConfig {
        if self.paper_scale {
            let mut arch = ArchitectureConfig::paper_scale(variant.uses_attention());
            arch.state_dim = self.state_dim;
            arch.action_dim = self.action_dim;
            return arch;
        }
        ArchitectureConfig {
            image_h: self.image_h,
            image_w: self.image_w,
            image_c: 3,
            conv_strides: ArchitectureConfig::default_strides(
                self.conv_filters.len(),
                variant.uses_attention(),
            ),
            conv_filters: self.conv_filters.clone(),
            kernel: self.kernel,
            padding: self.padding,
            fc_width: self.fc_width,
            use_attention: variant.uses_attention(),
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            temperature: self.temperature,
            dropout_p: self.dropout_p,
        }
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            image_h: self.image_h,
            image_w: self.image_w,
            episode_len: self.episode_len,
            dt: self.dt,
            a_max: self.a_max,
            contact_radius: self.contact_radius,
            goal_radius: self.goal_radius,
            jitter_max: self.jitter_max,
            demo_region: self.demo_region,
            max_distractors: self.max_distractors,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps >= self.total_steps {
            return Err(Error::Usage(format!(
                "warmup_steps ({}) must be below total_steps ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.batch_demo == 0 || self.batch_weak == 0 {
            return Err(Error::Usage("batch sizes must be >= 1".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Usage("lambda must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.weak_fraction) || self.weak_fraction == 0.0 {
            return Err(Error::Usage("weak_fraction must be in (0, 1]".into()));
        }
        if self.variant == ModelVariant::AttFt && self.ft_phase1_steps >= self.total_steps {
            return Err(Error::Usage(
                "ft_phase1_steps must be below total_steps".into(),
            ));
        }
        self.arch_for(self.variant).validate().map_err(Error::from)
    }
}

pub const KEY_HELP: &str = "config keys (key = value per line, # comments, every key has a default):
  variant image_h image_w conv_filters kernel padding fc_width state_dim
  action_dim temperature dropout_p lambda total_steps warmup_steps
  ft_phase1_steps batch_demo batch_weak lr seed eval_cadence eval_trials
  eval_subsample_trials weak_fraction holdout_fraction n_weak_envs
  n_test_envs demo_episodes episode_len weak_pos_per_env weak_neg_per_env
  gen_multi_demos dt a_max contact_radius goal_radius jitter_max
  demo_region max_distractors exp_variants exp_seeds sweep_fractions
  viz_per_env data_dir out_dir checkpoint paper_scale";
