//! Flat `key = value` configuration covering data, model, training and attack settings.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::attack::AttackConfig;
use crate::geom::SorParams;
use crate::model::ModelConfig;
use crate::synth::DatasetConfig;

use super::{Result, TrainError};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// First adversarial epoch is `adversarial_start_epoch + 1`; `None` means `epochs / 2`.
    pub adversarial_start_epoch: Option<usize>,
    pub lr: f64,
    pub batch: usize,
    pub lambda_edge: f64,
    pub mask_ratio: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub metrics_path: Option<PathBuf>,
    pub adv_use_edge: bool,
    /// Test triples per split scored after each epoch; 0 scores every triple.
    pub eval_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 400,
            adversarial_start_epoch: None,
            lr: 5e-5,
            batch: 4,
            lambda_edge: 0.0005,
            mask_ratio: 0.5,
            seed: 0,
            checkpoint_every: 0,
            metrics_path: None,
            adv_use_edge: true,
            eval_samples: 8,
        }
    }
}

impl TrainConfig {
    pub fn adversarial_start(&self) -> usize {
        self.adversarial_start_epoch.unwrap_or(self.epochs / 2)
    }
}

/// Everything one run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub data: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub attack: AttackConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            attack: AttackConfig::default(),
        }
    }
}

impl Config {
    /// Desk-scale preset: narrow layers, 40 epochs and a faster learning rate.
    pub fn toy() -> Self {
        Config {
            model: ModelConfig::toy(),
            train: TrainConfig { epochs: 40, lr: 1e-3, ..TrainConfig::default() },
            ..Config::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.attack.validate()?;
        let t = &self.train;
        let bad = |m: String| Err(TrainError::Config(m));
        if t.adversarial_start() > t.epochs {
            return bad(format!("adversarial_start_epoch {} exceeds epochs {}", t.adversarial_start(), t.epochs));
        }
        if t.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if !(t.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", t.lr));
        }
        if !(t.lambda_edge >= 0.0) {
            return bad(format!("lambda_edge must be nonnegative, got {}", t.lambda_edge));
        }
        if !(0.0..1.0).contains(&t.mask_ratio) {
            return bad(format!("mask_ratio {} outside [0, 1)", t.mask_ratio));
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(key.trim(), value.trim()).map_err(|e| TrainError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::toy();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("invalid value {v:?} for {key}"))
        }
        fn flag(key: &str, v: &str) -> std::result::Result<bool, String> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(format!("invalid boolean {v:?} for {key}")),
            }
        }
        fn widths<const N: usize>(key: &str, v: &str) -> std::result::Result<[usize; N], String> {
            let ws: Vec<usize> = v.split(',').map(|w| num(key, w.trim())).collect::<std::result::Result<_, _>>()?;
            ws.try_into().map_err(|_| format!("{key} needs {N} comma-separated widths"))
        }
        let (d, m, t, a) = (&mut self.data, &mut self.model, &mut self.train, &mut self.attack);
        match key {
            "train_identities" => d.train_identities = num(key, value)?,
            "train_poses" => d.train_poses = num(key, value)?,
            "test_identities" => d.test_identities = num(key, value)?,
            "unseen_poses" => d.unseen_poses = num(key, value)?,
            "rings_per_limb" => d.spec.rings_per_limb = num(key, value)?,
            "vertices_per_ring" => d.spec.vertices_per_ring = num(key, value)?,
            "pairs_per_epoch" => d.pairs_per_epoch = if value == "auto" { None } else { Some(num(key, value)?) },
            "pose_amplitude" => d.pose_amplitude = num(key, value)?,
            "encoder_widths" => m.encoder_widths = widths(key, value)?,
            "decoder_widths" => m.decoder_widths = widths(key, value)?,
            "norm_eps" => m.norm_eps = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "adversarial_start_epoch" => {
                t.adversarial_start_epoch = if value == "auto" { None } else { Some(num(key, value)?) }
            }
            "lr" => t.lr = num(key, value)?,
            "batch" => t.batch = num(key, value)?,
            "lambda_edge" => t.lambda_edge = num(key, value)?,
            "mask_ratio" => t.mask_ratio = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            "checkpoint_every" => t.checkpoint_every = num(key, value)?,
            "metrics_path" => t.metrics_path = if value.is_empty() { None } else { Some(PathBuf::from(value)) },
            "adv_use_edge" => t.adv_use_edge = flag(key, value)?,
            "eval_samples" => t.eval_samples = num(key, value)?,
            "attack_method" => a.method = value.parse().map_err(|e| format!("{e}"))?,
            "attack_eps" => a.eps = num(key, value)?,
            "attack_iterations" => a.iterations = num(key, value)?,
            "attack_momentum" => a.momentum = num(key, value)?,
            "attack_step_rule" => a.step_rule = value.parse().map_err(|e| format!("{e}"))?,
            "attack_norm" => a.norm = value.parse().map_err(|e| format!("{e}"))?,
            "attack_random_init" => a.random_init = flag(key, value)?,
            "attack_apply_sor" => a.apply_sor = flag(key, value)?,
            "sor_k" => a.sor = SorParams { k: num(key, value)?, ..a.sor },
            "sor_alpha" => a.sor = SorParams { alpha: num(key, value)?, ..a.sor },
            _ => return Err(format!("unknown configuration key {key:?}")),
        }
        Ok(())
    }

    /// Renders every key; `Config::parse(&c.to_text())` reproduces `c`.
    pub fn to_text(&self) -> String {
        let (d, m, t, a) = (&self.data, &self.model, &self.train, &self.attack);
        let join = |ws: &[usize]| ws.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let auto = |v: Option<usize>| v.map_or("auto".to_string(), |v| v.to_string());
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("train_identities", d.train_identities.to_string());
        kv("train_poses", d.train_poses.to_string());
        kv("test_identities", d.test_identities.to_string());
        kv("unseen_poses", d.unseen_poses.to_string());
        kv("rings_per_limb", d.spec.rings_per_limb.to_string());
        kv("vertices_per_ring", d.spec.vertices_per_ring.to_string());
        kv("pairs_per_epoch", auto(d.pairs_per_epoch));
        kv("pose_amplitude", format!("{:?}", d.pose_amplitude));
        kv("encoder_widths", join(&m.encoder_widths));
        kv("decoder_widths", join(&m.decoder_widths));
        kv("norm_eps", format!("{:?}", m.norm_eps));
        kv("epochs", t.epochs.to_string());
        kv("adversarial_start_epoch", auto(t.adversarial_start_epoch));
        kv("lr", format!("{:?}", t.lr));
        kv("batch", t.batch.to_string());
        kv("lambda_edge", format!("{:?}", t.lambda_edge));
        kv("mask_ratio", format!("{:?}", t.mask_ratio));
        kv("seed", t.seed.to_string());
        kv("checkpoint_every", t.checkpoint_every.to_string());
        kv("metrics_path", t.metrics_path.as_ref().map_or(String::new(), |p| p.display().to_string()));
        kv("adv_use_edge", t.adv_use_edge.to_string());
        kv("eval_samples", t.eval_samples.to_string());
        kv("attack_method", a.method.to_string());
        kv("attack_eps", format!("{:?}", a.eps));
        kv("attack_iterations", a.iterations.to_string());
        kv("attack_momentum", format!("{:?}", a.momentum));
        kv("attack_step_rule", a.step_rule.to_string());
        kv("attack_norm", a.norm.to_string());
        kv("attack_random_init", a.random_init.to_string());
        kv("attack_apply_sor", a.apply_sor.to_string());
        kv("sor_k", a.sor.k.to_string());
        kv("sor_alpha", format!("{:?}", a.sor.alpha));
        s
    }
}
