use super::{ModelError, Result};
use crate::tensor::Tensor;

/// `instance_norm(z) * scale + bias`, where `scale` and `bias` are per-vertex
/// projections of the identity mesh coordinates.
pub fn spadain(z: &Tensor, scale: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    if z.shape() != scale.shape() || z.shape() != bias.shape() {
        return Err(ModelError::Precondition(format!(
            "SPAdaIN operands differ in shape: {:?}, {:?}, {:?}",
            z.shape(),
            scale.shape(),
            bias.shape()
        )));
    }
    Ok(z.instance_norm(eps)?.mul(scale)?.add(bias)?)
}
