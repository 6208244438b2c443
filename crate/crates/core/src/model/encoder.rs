use rand::Rng;

use super::{Conv, ModelError, Result};
use crate::geom::{canonical_order, mask_indices, mask_keep_count, subset_by_rank, Point};
use crate::tensor::Tensor;

pub const NUM_SCALES: usize = 3;

/// Smallest pose the encoder accepts.
pub const MIN_POSE_POINTS: usize = 4;

/// Point indices fed to each encoder scale.
///
/// Scale `s` holds `floor(N / 2^s)` points drawn over the coordinate order,
/// then masked. Every scale keeps at least two points so instance norm has
/// something to normalize.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplePlan {
    pub scales: Vec<Vec<usize>>,
    pub num_points: usize,
}

impl SamplePlan {
    pub fn draw<R: Rng + ?Sized>(pose: &[Point], phi: f64, rng: &mut R) -> Result<Self> {
        let n = pose.len();
        if n < MIN_POSE_POINTS {
            return Err(ModelError::Precondition(format!("pose needs at least {MIN_POSE_POINTS} points, got {n}")));
        }
        mask_keep_count(n, phi)?;
        let order = canonical_order(pose);
        let mut scales = Vec::with_capacity(NUM_SCALES);
        for s in 0..NUM_SCALES {
            let count = (n >> s).max(2);
            let base: Vec<usize> = if count == n { (0..n).collect() } else { subset_by_rank(&order, count, rng) };
            let keep = if phi > 0.0 && mask_keep_count(count, phi)? < 2 {
                let mut idx = rand::seq::index::sample(rng, count, 2).into_vec();
                idx.sort_unstable();
                idx
            } else {
                mask_indices(count, phi, rng)?
            };
            scales.push(keep.into_iter().map(|i| base[i]).collect());
        }
        Ok(SamplePlan { scales, num_points: n })
    }

    /// Plan feeding every point to every scale.
    pub fn full(n: usize) -> Self {
        SamplePlan { scales: vec![(0..n).collect(); NUM_SCALES], num_points: n }
    }
}

pub(super) fn encode(
    layers: &[[Conv; 3]; NUM_SCALES],
    p: &[Tensor],
    pose: &Tensor,
    plan: &SamplePlan,
    eps: f64,
) -> Result<Tensor> {
    let n = pose.shape()[2];
    if plan.num_points != n {
        return Err(ModelError::Precondition(format!(
            "sampling plan drawn for {} points, pose has {n}",
            plan.num_points
        )));
    }
    let v = pose.values();
    if (0..3).all(|c| v[c * n..(c + 1) * n].iter().all(|&x| x == v[c * n])) {
        return Err(ModelError::Tensor(crate::tensor::TensorError::Degenerate {
            op: "encode",
            reason: "all pose points coincide".into(),
        }));
    }
    let mut pooled: Option<Tensor> = None;
    for (stack, idx) in layers.iter().zip(&plan.scales) {
        let mut x = if idx.len() == n && idx.iter().enumerate().all(|(a, &b)| a == b) {
            pose.clone()
        } else {
            pose.gather(idx)?
        };
        for conv in stack {
            x = conv.apply(p, &x)?.instance_norm(eps)?.relu();
        }
        let m = x.max_over_axis()?;
        pooled = Some(match pooled {
            None => m,
            Some(acc) => acc.add(&m)?,
        });
    }
    Ok(pooled.expect("at least one scale"))
}

#[cfg(test)]
mod tests {
    use super::super::{Model, ModelConfig};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud(seed: u64, n: usize) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)])
            .collect()
    }

    #[test]
    fn plan_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plan = SamplePlan::draw(&cloud(0, 100), 0.0, &mut rng).unwrap();
        let sizes: Vec<usize> = plan.scales.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![100, 50, 25]);
        let plan = SamplePlan::draw(&cloud(0, 100), 0.5, &mut rng).unwrap();
        let sizes: Vec<usize> = plan.scales.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![50, 25, 13]);
        let plan = SamplePlan::draw(&cloud(0, 4), 0.9, &mut rng).unwrap();
        assert!(plan.scales.iter().all(|s| s.len() == 2));
        assert!(SamplePlan::draw(&cloud(0, 3), 0.0, &mut rng).is_err());
        assert!(SamplePlan::draw(&cloud(0, 10), 1.0, &mut rng).is_err());
    }

    #[test]
    fn pooled_code_ignores_point_order() {
        let model = Model::new(ModelConfig::uniform(8), 2).unwrap();
        let p = model.bind(false);
        let pts = cloud(5, 64);
        let mut shuffled = pts.clone();
        shuffled.reverse();
        shuffled.swap(3, 40);
        let code = |pts: &[Point]| {
            let plan = model.plan(pts, 0.0, false, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
            model.encode(&p, &Tensor::from_points(pts, false), &plan).unwrap().values().to_vec()
        };
        for (a, b) in code(&pts).iter().zip(code(&shuffled)) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn coincident_pose_is_degenerate() {
        let model = Model::new(ModelConfig::uniform(4), 2).unwrap();
        let pts = vec![[0.1, 0.2, 0.3]; 8];
        let err =
            model.encode(&model.bind(false), &Tensor::from_points(&pts, false), &SamplePlan::full(8)).unwrap_err();
        assert!(matches!(err, ModelError::Tensor(crate::tensor::TensorError::Degenerate { .. })));
    }
}
