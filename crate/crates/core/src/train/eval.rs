use std::fmt::Write as _;

use crate::attack::{generate_adversarial, AttackConfig, AttackError};
use crate::geom::Point;
use crate::loss::{pmd, PMD_UNIT};
use crate::model::Model;
use crate::synth::{Dataset, Split, Triple};
use crate::tensor::Tensor;

use super::{stream_rng, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub split: &'static str,
    pub sample: usize,
    /// Raw PMD, not scaled to reporting units.
    pub pmd: f64,
}

/// Mean and population standard deviation in reporting units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Adversarial samples dropped because their gradient vanished.
    pub skipped: usize,
}

pub const ADVERSARIAL: &str = "adversarial";

impl EvalReport {
    pub fn summary(&self, split: &str) -> Option<Summary> {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.split == split).map(|r| r.pmd / PMD_UNIT).collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        Some(Summary { mean, std, count: v.len() })
    }

    fn mean_or_nan(&self, split: &str) -> f64 {
        self.summary(split).map_or(f64::NAN, |s| s.mean)
    }

    pub fn pmd_seen(&self) -> f64 {
        self.mean_or_nan(Split::Seen.name())
    }

    pub fn pmd_unseen(&self) -> f64 {
        self.mean_or_nan(Split::Unseen.name())
    }

    pub fn pmd_adversarial(&self) -> f64 {
        self.mean_or_nan(ADVERSARIAL)
    }

    /// Per-sample rows, then `mean` and `std` rows per split, in reporting units.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("split,sample,pmd_x1e4\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.split, r.sample, r.pmd / PMD_UNIT);
        }
        for split in [Split::Seen.name(), Split::Unseen.name(), ADVERSARIAL] {
            if let Some(s) = self.summary(split) {
                let _ = writeln!(out, "{split},mean,{}", s.mean);
                let _ = writeln!(out, "{split},std,{}", s.std);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    /// Triples per split, evenly spaced; 0 uses all of them.
    pub samples: usize,
    pub attack: Option<AttackConfig>,
    pub seed: u64,
    pub splits: Vec<Split>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { samples: 0, attack: None, seed: 0, splits: vec![Split::Seen, Split::Unseen] }
    }
}

pub fn subset(triples: &[Triple], samples: usize) -> Vec<(usize, Triple)> {
    if samples == 0 || samples >= triples.len() {
        return triples.iter().copied().enumerate().collect();
    }
    (0..samples).map(|i| i * triples.len() / samples).map(|i| (i, triples[i])).collect()
}

fn transfer_pmd(
    model: &Model,
    pose: &[Point],
    id: &[Point],
    gt: &[Point],
    seed: u64,
    tag: &str,
    i: usize,
) -> Result<f64> {
    let p = model.bind(false);
    let mut rng = stream_rng(seed, tag, i as u64);
    let out =
        model.forward(&p, &Tensor::from_points(pose, false), &Tensor::from_points(id, false), 0.0, false, &mut rng)?;
    Ok(pmd(&out.to_points(0), gt)?)
}

/// PMD of the model on the requested splits, plus PMD under attack on the
/// seen split when an attack is configured. Inference runs without masking
/// and never touches the parameters.
pub fn evaluate(model: &Model, data: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for &split in &opts.splits {
        for (i, t) in subset(data.split(split), opts.samples) {
            let (pose, id, gt) = (&data.meshes[t.pose], &data.meshes[t.identity], &data.meshes[t.gt]);
            let v = transfer_pmd(model, &pose.vertices, &id.vertices, &gt.vertices, opts.seed, split.name(), i)?;
            report.rows.push(EvalRow { split: split.name(), sample: i, pmd: v });
        }
    }
    if let Some(cfg) = &opts.attack {
        for (i, t) in subset(&data.seen, opts.samples) {
            let (pose, id, gt) = (&data.meshes[t.pose], &data.meshes[t.identity], &data.meshes[t.gt]);
            let mut rng = stream_rng(opts.seed, "eval-attack", i as u64);
            match generate_adversarial(model, &pose.cloud(), &id.vertices, &gt.vertices, cfg, &mut rng) {
                Ok(outcome) => {
                    let v = transfer_pmd(
                        model,
                        &outcome.sample.points,
                        &id.vertices,
                        &gt.vertices,
                        opts.seed,
                        ADVERSARIAL,
                        i,
                    )?;
                    report.rows.push(EvalRow { split: ADVERSARIAL, sample: i, pmd: v });
                }
                Err(AttackError::DegenerateGradient(_)) => report.skipped += 1,
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(report)
}
