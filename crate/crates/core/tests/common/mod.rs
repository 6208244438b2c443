#![allow(dead_code)]

pub mod gradcheck;

use posemae_core::geom::{EdgeSet, Point};
use posemae_core::model::{Model, ModelConfig};
use posemae_core::synth::{make_dataset, Dataset, DatasetConfig};
use posemae_core::train::{stream_rng, Config};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(rng: &mut impl Rng, n: usize, extent: f64) -> Vec<Point> {
    (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-extent..extent))).collect()
}

pub fn chain_edges(n: usize) -> EdgeSet {
    EdgeSet::from_pairs((1..n).map(|i| (i - 1, i)).collect())
}

pub fn toy_model(width: usize, seed: u64) -> Model {
    Model::new(ModelConfig::uniform(width), seed).unwrap()
}

/// Small dataset for fast trainer tests: 4 identities by 6 poses, 2 test identities.
pub fn tiny_data() -> (Config, Dataset) {
    let mut cfg = Config::toy();
    cfg.model = ModelConfig::uniform(8);
    cfg.data = DatasetConfig {
        train_identities: 4,
        train_poses: 6,
        test_identities: 2,
        unseen_poses: 3,
        pairs_per_epoch: Some(8),
        ..DatasetConfig::default()
    };
    cfg.train.epochs = 2;
    cfg.train.eval_samples = 2;
    cfg.attack.iterations = 2;
    let data = make_dataset(&cfg.data, &mut stream_rng(0, "data", 0)).unwrap();
    (cfg, data)
}

/// Sets every decoder attention gain, so the output depends on the pose.
pub fn with_gains(mut model: Model, gamma: f64) -> Model {
    for i in 0..4 {
        let g = model.decoder_layout(i).gamma;
        model.params_mut().values_mut(g)[0] = gamma;
    }
    model
}

/// Dense loop form of `gamma * softmax(q k^T) v + z` for one batch element.
pub fn attention_oracle(q: &[f64], k: &[f64], v: &[f64], gamma: f64, z: &[f64], c: usize, n: usize) -> Vec<f64> {
    let mut a = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            a[i * c + j] = (0..n).map(|t| q[i * n + t] * k[j * n + t]).sum();
        }
        let m = a[i * c..(i + 1) * c].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = a[i * c..(i + 1) * c].iter().map(|x| (x - m).exp()).sum();
        for j in 0..c {
            a[i * c + j] = (a[i * c + j] - m).exp() / s;
        }
    }
    let mut out = z.to_vec();
    for i in 0..c {
        for t in 0..n {
            out[i * n + t] += gamma * (0..c).map(|j| a[i * c + j] * v[j * n + t]).sum::<f64>();
        }
    }
    out
}

/// Width-8 model with unit attention gains, trained two clean epochs on [`tiny_data`].
pub fn trained_tiny() -> (Config, Dataset, Model) {
    let (cfg, data) = tiny_data();
    let model = with_gains(toy_model(8, 11), 1.0);
    let mut t = posemae_core::train::Trainer::new(model, cfg.clone(), &data).unwrap();
    for _ in 0..2 {
        t.train_epoch(posemae_core::train::StepMode::Clean).unwrap();
    }
    let model = t.model;
    (cfg, data, model)
}

/// Unit-spaced 5x5x4 lattice plus one far point at index 100.
pub fn lattice_with_outlier() -> Vec<Point> {
    let mut pts: Vec<Point> = (0..100).map(|i| [(i % 5) as f64, ((i / 5) % 5) as f64, (i / 25) as f64]).collect();
    pts.push([40.0, 40.0, 40.0]);
    pts
}

/// Config text for a dataset and model small enough for end-to-end CLI runs.
pub const TINY_CONFIG: &str = "\
train_identities = 4
train_poses = 6
test_identities = 2
unseen_poses = 3
pairs_per_epoch = 8
encoder_widths = 8, 8, 8
decoder_widths = 8, 8, 8, 8
epochs = 2
eval_samples = 2
attack_iterations = 2
checkpoint_every = 1
";
