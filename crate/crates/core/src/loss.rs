//! Training objectives and the PMD metric. Meshes enter as `[1, 3, N]` tensors.

use crate::geom::{EdgeSet, Point};
use crate::tensor::{Result, Tensor, TensorError};

/// Reported PMD values are divided by this unit.
pub const PMD_UNIT: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_edge: f64,
    pub delta_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_edge: 0.0005, delta_adv: 1e-8 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_edge >= 0.0) || !(self.delta_adv > 0.0) {
            return Err(TensorError::Invalid {
                op: "loss_weights",
                reason: format!("need lambda_edge >= 0 and delta_adv > 0, got {self:?}"),
            });
        }
        Ok(())
    }
}

fn check_pair(op: &'static str, result: &Tensor, gt: &Tensor) -> Result<usize> {
    if result.shape() != gt.shape() || result.rank() != 3 || result.shape()[1] != 3 {
        return Err(TensorError::Shape { op, lhs: result.shape().to_vec(), rhs: gt.shape().to_vec() });
    }
    let n = result.shape()[0] * result.shape()[2];
    if n == 0 {
        return Err(TensorError::Degenerate { op, reason: "no vertices".into() });
    }
    Ok(n)
}

/// Mean squared per-vertex distance.
pub fn l_rec(result: &Tensor, gt: &Tensor) -> Result<Tensor> {
    let n = check_pair("l_rec", result, gt)?;
    let d = result.sub(gt)?;
    Ok(d.mul(&d)?.sum().mul_scalar(1.0 / n as f64))
}

fn edge_lengths(x: &Tensor, edges: &EdgeSet) -> Result<Tensor> {
    let (i, j) = edges.endpoints();
    let d = x.gather(&i)?.sub(&x.gather(&j)?)?;
    Ok(d.mul(&d)?.sum_axis(1)?.sqrt())
}

/// Mean squared difference of edge lengths against the ground truth.
pub fn l_edge(result: &Tensor, gt: &Tensor, edges: &EdgeSet) -> Result<Tensor> {
    check_pair("l_edge", result, gt)?;
    if edges.is_empty() {
        return Err(TensorError::Degenerate { op: "l_edge", reason: "empty edge set".into() });
    }
    let target = edge_lengths(&gt.detach(), edges)?;
    let d = edge_lengths(result, edges)?.sub(&target)?;
    Ok(d.mul(&d)?.sum().mul_scalar(1.0 / edges.len() as f64))
}

/// `l_rec + lambda_edge * l_edge`. The edge term is skipped when its weight is zero.
pub fn l_full(result: &Tensor, gt: &Tensor, edges: &EdgeSet, w: &LossWeights) -> Result<Tensor> {
    w.validate()?;
    let rec = l_rec(result, gt)?;
    if w.lambda_edge == 0.0 {
        return Ok(rec);
    }
    rec.add(&l_edge(result, gt, edges)?.mul_scalar(w.lambda_edge))
}

/// `1 / (l_rec + delta)`; lower means a worse reconstruction.
pub fn f_adv(result: &Tensor, gt: &Tensor, delta: f64) -> Result<Tensor> {
    if !(delta > 0.0) {
        return Err(TensorError::Invalid { op: "f_adv", reason: format!("delta must be positive, got {delta}") });
    }
    Ok(l_rec(result, gt)?.add_scalar(delta).recip())
}

/// Mean squared per-vertex distance, computed without building a graph. The
/// running mean is exact for constant per-vertex errors.
pub fn pmd(result: &[Point], gt: &[Point]) -> Result<f64> {
    if result.len() != gt.len() || result.is_empty() {
        return Err(TensorError::Shape { op: "pmd", lhs: vec![result.len(), 3], rhs: vec![gt.len(), 3] });
    }
    let mut mean = 0.0;
    for (i, (r, g)) in result.iter().zip(gt).enumerate() {
        let d: f64 = (0..3).map(|c| (r[c] - g[c]) * (r[c] - g[c])).sum();
        mean += (d - mean) / (i + 1) as f64;
    }
    Ok(mean)
}

/// PMD in reporting units.
pub fn pmd_reported(result: &[Point], gt: &[Point]) -> Result<f64> {
    Ok(pmd(result, gt)? / PMD_UNIT)
}
