//! Two-stage training: clean epochs, then epochs on adversarial poses
//! generated on the fly against the model being trained.

mod config;
mod eval;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attack::{generate_adversarial, AttackError};
use crate::geom::{GeomError, Point};
use crate::loss::{l_edge, l_rec, LossWeights};
use crate::model::{load_checkpoint, save_checkpoint, Model, ModelError};
use crate::synth::{Dataset, SynthError, Triple};
use crate::tensor::{Adam, AdamConfig, Tensor, TensorError};

pub use config::{Config, TrainConfig};
pub use eval::{evaluate, subset, EvalOptions, EvalReport, EvalRow, Summary, ADVERSARIAL};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("non-finite loss in epoch {epoch}, triples {triples:?}; parameter norm {param_norm}")]
    NonFinite { epoch: usize, triples: Vec<Triple>, param_norm: f64 },
    #[error("attack gradients leaked into optimizer buffers")]
    GradientLeak,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(ModelError::Tensor(e))
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Independent generator for the named purpose at a given index.
pub fn stream_rng(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(&format!("{name}/{index}")));
    rng
}

pub const METRICS_HEADER: &str = "epoch,loss_rec,loss_edge,pmd_seen,pmd_unseen,pmd_adv";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub adversarial: bool,
    pub loss_rec: f64,
    pub loss_edge: f64,
    pub pmd_seen: f64,
    pub pmd_unseen: f64,
    pub pmd_adv: f64,
    /// Mean L2 norm of the pose perturbations applied this epoch.
    pub perturbation_l2: f64,
    /// Triples skipped because their attack gradient vanished.
    pub skipped: usize,
    pub seconds: f64,
}

impl EpochStats {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.loss_rec, self.loss_edge, self.pmd_seen, self.pmd_unseen, self.pmd_adv
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchStats {
    pub loss_rec: f64,
    pub loss_edge: f64,
    pub perturbation_l2: f64,
    pub used: usize,
    pub skipped: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepMode {
    Clean,
    Adversarial,
}

pub struct Trainer<'a> {
    pub model: Model,
    pub adam: Adam,
    pub cfg: Config,
    pub data: &'a Dataset,
    /// Number of completed epochs.
    pub epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(model: Model, cfg: Config, data: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(AdamConfig { lr: cfg.train.lr, ..AdamConfig::default() }, model.params());
        Ok(Trainer { model, adam, cfg, data, epoch: 0 })
    }

    /// Fresh model initialized from the configured seed.
    pub fn from_config(cfg: Config, data: &'a Dataset) -> Result<Self> {
        let model = Model::new(cfg.model.clone(), stream_rng(cfg.train.seed, "init", 0).next_seed())?;
        Self::new(model, cfg, data)
    }

    /// Continues from a checkpoint written by [`Trainer::save`].
    pub fn resume(dir: &Path, cfg: Config, data: &'a Dataset) -> Result<Self> {
        let ck = load_checkpoint(dir)?;
        if ck.model.config() != &cfg.model {
            return Err(TrainError::Config("checkpoint widths differ from the configured model".into()));
        }
        let epoch = ck
            .meta
            .get("epoch")
            .and_then(|e| e.parse().ok())
            .ok_or_else(|| TrainError::Config("checkpoint does not record its epoch".into()))?;
        let mut t = Self::new(ck.model, cfg, data)?;
        if let Some(adam) = ck.adam {
            t.adam = adam;
        }
        t.adam.config.lr = t.cfg.train.lr;
        t.epoch = epoch;
        Ok(t)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut meta = BTreeMap::new();
        meta.insert("epoch".to_string(), self.epoch.to_string());
        meta.insert("seed".to_string(), self.cfg.train.seed.to_string());
        save_checkpoint(dir, &self.model, Some(&self.adam), &meta)?;
        Ok(())
    }

    fn weights(&self, mode: StepMode) -> LossWeights {
        let use_edge = mode == StepMode::Clean || self.cfg.train.adv_use_edge;
        LossWeights { lambda_edge: if use_edge { self.cfg.train.lambda_edge } else { 0.0 }, ..LossWeights::default() }
    }

    /// One optimizer step over `batch`. In adversarial mode every pose is first
    /// replaced by an attack on the current parameters.
    pub fn step(
        &mut self,
        batch: &[Triple],
        mode: StepMode,
        mask_rng: &mut ChaCha8Rng,
        attack_rng: &mut ChaCha8Rng,
    ) -> Result<BatchStats> {
        let data = self.data;
        let mut stats = BatchStats::default();
        let mut poses: Vec<(Triple, Vec<Point>)> = Vec::with_capacity(batch.len());
        for &t in batch {
            let pose = &data.meshes[t.pose];
            match mode {
                StepMode::Clean => poses.push((t, pose.vertices.clone())),
                StepMode::Adversarial => {
                    let (id, gt) = (&data.meshes[t.identity], &data.meshes[t.gt]);
                    match generate_adversarial(
                        &self.model,
                        &pose.cloud(),
                        &id.vertices,
                        &gt.vertices,
                        &self.cfg.attack,
                        attack_rng,
                    ) {
                        Ok(o) => {
                            stats.perturbation_l2 += o.l2;
                            poses.push((t, o.sample.points));
                        }
                        Err(AttackError::DegenerateGradient(_)) => stats.skipped += 1,
                        Err(e) => return Err(e.into()),
                    }
                }
            }
        }
        if self.model.params().has_any_grad() {
            return Err(TrainError::GradientLeak);
        }
        if poses.is_empty() {
            return Ok(stats);
        }

        let w = self.weights(mode);
        let scale = 1.0 / poses.len() as f64;
        for (t, pose) in &poses {
            let p = self.model.bind(true);
            let id = Tensor::from_points(&data.meshes[t.identity].vertices, false);
            let gt = Tensor::from_points(&data.meshes[t.gt].vertices, false);
            let out = self.model.forward(
                &p,
                &Tensor::from_points(pose, false),
                &id,
                self.cfg.train.mask_ratio,
                true,
                mask_rng,
            )?;
            let rec = l_rec(&out, &gt)?;
            let mut loss = rec.clone();
            if w.lambda_edge > 0.0 {
                let edge = l_edge(&out, &gt, &data.edges)?;
                stats.loss_edge += edge.item();
                loss = loss.add(&edge.mul_scalar(w.lambda_edge))?;
            }
            if !loss.item().is_finite() {
                return Err(TrainError::NonFinite {
                    epoch: self.epoch + 1,
                    triples: batch.to_vec(),
                    param_norm: self.model.params().l2_norm(),
                });
            }
            stats.loss_rec += rec.item();
            loss.backward()?;
            self.model.params_mut().accumulate_grads(&p, scale)?;
        }
        self.adam.step(self.model.params_mut());
        stats.used = poses.len();
        Ok(stats)
    }

    /// Trains one epoch in the given mode without evaluating.
    pub fn train_epoch(&mut self, mode: StepMode) -> Result<EpochStats> {
        let start = Instant::now();
        let epoch = self.epoch + 1;
        let seed = self.cfg.train.seed;
        let pairs = self.data.epoch_pairs(&mut stream_rng(seed, "pairs", epoch as u64));
        let mut mask_rng = stream_rng(seed, "mask", epoch as u64);
        let mut attack_rng = stream_rng(seed, "attack", epoch as u64);
        let mut total = BatchStats::default();
        for batch in pairs.chunks(self.cfg.train.batch) {
            let s = self.step(batch, mode, &mut mask_rng, &mut attack_rng)?;
            total.loss_rec += s.loss_rec;
            total.loss_edge += s.loss_edge;
            total.perturbation_l2 += s.perturbation_l2;
            total.used += s.used;
            total.skipped += s.skipped;
        }
        self.epoch = epoch;
        let n = total.used.max(1) as f64;
        Ok(EpochStats {
            epoch,
            adversarial: mode == StepMode::Adversarial,
            loss_rec: total.loss_rec / n,
            loss_edge: total.loss_edge / n,
            pmd_seen: f64::NAN,
            pmd_unseen: f64::NAN,
            pmd_adv: f64::NAN,
            perturbation_l2: total.perturbation_l2 / n,
            skipped: total.skipped,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            samples: self.cfg.train.eval_samples,
            attack: Some(self.cfg.attack),
            seed: self.cfg.train.seed,
            ..EvalOptions::default()
        }
    }

    /// Mode of the next epoch under the two-stage schedule.
    pub fn next_mode(&self) -> StepMode {
        if self.epoch < self.cfg.train.adversarial_start() {
            StepMode::Clean
        } else {
            StepMode::Adversarial
        }
    }

    /// Trains and evaluates the next epoch.
    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        let mut stats = self.train_epoch(self.next_mode())?;
        let report = evaluate(&self.model, self.data, &self.eval_options())?;
        stats.pmd_seen = report.pmd_seen();
        stats.pmd_unseen = report.pmd_unseen();
        stats.pmd_adv = report.pmd_adversarial();
        Ok(stats)
    }

    /// Runs the remaining epochs. With `out`, checkpoints go to
    /// `out/checkpoints/epoch_NNNN` at the configured cadence and `out/final`
    /// at the end. Metrics rows are appended to the configured CSV, which is
    /// created with its header when training starts from epoch 0.
    pub fn fit(&mut self, out: Option<&Path>) -> Result<Vec<EpochStats>> {
        let metrics_path = self.cfg.train.metrics_path.clone();
        if let Some(path) = &metrics_path {
            if self.epoch == 0 {
                std::fs::write(path, format!("{METRICS_HEADER}\n"))?;
            }
        }
        let mut history = Vec::new();
        while self.epoch < self.cfg.train.epochs {
            let stats = self.run_epoch()?;
            log::info!(
                "epoch {} ({}) rec {:.6} edge {:.6} pmd seen {:.3} unseen {:.3} adv {:.3} [{:.1}s]",
                stats.epoch,
                if stats.adversarial { "adversarial" } else { "clean" },
                stats.loss_rec,
                stats.loss_edge,
                stats.pmd_seen,
                stats.pmd_unseen,
                stats.pmd_adv,
                stats.seconds
            );
            if let Some(path) = &metrics_path {
                let mut f = std::fs::OpenOptions::new().append(true).create(true).open(path)?;
                writeln!(f, "{}", stats.csv_row())?;
            }
            if let Some(out) = out {
                let every = self.cfg.train.checkpoint_every;
                if every > 0 && self.epoch % every == 0 {
                    self.save(&checkpoint_dir(out, self.epoch))?;
                }
            }
            history.push(stats);
        }
        if let Some(out) = out {
            self.save(&out.join("final"))?;
        }
        Ok(history)
    }
}

pub fn checkpoint_dir(out: &Path, epoch: usize) -> PathBuf {
    out.join("checkpoints").join(format!("epoch_{epoch:04}"))
}

/// Metrics CSV text for a training history.
pub fn metrics_csv(history: &[EpochStats]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for h in history {
        let _ = writeln!(s, "{}", h.csv_row());
    }
    s
}

trait NextSeed {
    fn next_seed(self) -> u64;
}

impl NextSeed for ChaCha8Rng {
    fn next_seed(mut self) -> u64 {
        rand::Rng::random(&mut self)
    }
}
