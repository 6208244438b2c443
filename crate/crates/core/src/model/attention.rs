use std::cell::Cell;

use super::{ModelError, Result};
use crate::tensor::Tensor;

thread_local! {
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

/// Largest attention map, in elements, built on this thread since the last reset.
pub fn attention_peak() -> usize {
    PEAK.with(Cell::get)
}

pub fn reset_attention_peak() {
    PEAK.with(|p| p.set(0));
}

/// `softmax(q k^T)` over the last axis: `[B,C,N] x [B,C,N] -> [B,C,C]`.
pub fn channel_attention_map(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    if q.shape() != k.shape() {
        return Err(ModelError::Precondition(format!(
            "attention inputs differ in shape: {:?} vs {:?}",
            q.shape(),
            k.shape()
        )));
    }
    let logits = q.matmul(&k.transpose()?)?;
    PEAK.with(|p| p.set(p.get().max(logits.numel())));
    Ok(logits.softmax(2)?)
}

/// `gamma * (A v) + z_pose` with `A = softmax(q k^T)`.
/// The decoder takes `q` and `v` from the identity embedding and `k` from the pose features.
pub fn channel_attention(q: &Tensor, k: &Tensor, v: &Tensor, gamma: &Tensor, z_pose: &Tensor) -> Result<Tensor> {
    if v.shape() != z_pose.shape() {
        return Err(ModelError::Precondition(format!(
            "value and residual differ in shape: {:?} vs {:?}",
            v.shape(),
            z_pose.shape()
        )));
    }
    let a = channel_attention_map(q, k)?;
    Ok(a.matmul(v)?.scale(gamma)?.add(z_pose)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape).unwrap()
    }

    #[test]
    fn map_is_channel_square_and_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (q, k) = (random(&mut rng, &[2, 6, 9]), random(&mut rng, &[2, 6, 9]));
        let a = channel_attention_map(&q, &k).unwrap();
        assert_eq!(a.shape(), &[2, 6, 6]);
        for row in a.values().chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn zero_gain_is_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (q, k, v, z) = (
            random(&mut rng, &[1, 4, 5]),
            random(&mut rng, &[1, 4, 5]),
            random(&mut rng, &[1, 4, 5]),
            random(&mut rng, &[1, 4, 5]),
        );
        let out = channel_attention(&q, &k, &v, &Tensor::new(vec![0.0], &[1]).unwrap(), &z).unwrap();
        assert_eq!(out.values(), z.values());
    }
}
