use rand::Rng;

use super::{attention::channel_attention, spadain::spadain, Conv, ModelError, Result};
use crate::tensor::{ParamStore, Tensor};

/// Conditioning projections of one SPAdaIN block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpadainLayout {
    pub scale: Conv,
    pub bias: Conv,
}

impl SpadainLayout {
    fn apply(&self, p: &[Tensor], z: &Tensor, id_mesh: &Tensor, eps: f64) -> Result<Tensor> {
        spadain(z, &self.scale.apply(p, id_mesh)?, &self.bias.apply(p, id_mesh)?, eps)
    }
}

/// Parameter slots of one decoder block of width `C`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderLayout {
    pub width: usize,
    pub lift: Conv,
    pub q: Conv,
    pub k: Conv,
    pub v: Conv,
    pub gamma: usize,
    /// Two on the main path, then the skip path.
    pub spadain: [SpadainLayout; 3],
    pub conv: [Conv; 3],
}

impl DecoderLayout {
    pub(super) fn register(store: &mut ParamStore, rng: &mut impl Rng, name: &str, c: usize) -> Self {
        let lift = Conv::register(store, rng, &format!("{name}.lift"), 3, c);
        let q = Conv::register(store, rng, &format!("{name}.q"), c, c);
        let k = Conv::register(store, rng, &format!("{name}.k"), c, c);
        let v = Conv::register(store, rng, &format!("{name}.v"), c, c);
        let gamma = store.add(format!("{name}.gamma"), &[1], vec![0.0]);
        let mut spadain = Vec::with_capacity(3);
        let mut conv = Vec::with_capacity(3);
        for j in 0..3 {
            spadain.push(SpadainLayout {
                scale: Conv::register(store, rng, &format!("{name}.spa{j}.scale"), 3, c),
                bias: Conv::register(store, rng, &format!("{name}.spa{j}.bias"), 3, c),
            });
            conv.push(Conv::register(store, rng, &format!("{name}.conv{j}"), c, c));
        }
        DecoderLayout {
            width: c,
            lift,
            q,
            k,
            v,
            gamma,
            spadain: spadain.try_into().expect("three blocks"),
            conv: conv.try_into().expect("three convs"),
        }
    }

    pub(super) fn apply(&self, p: &[Tensor], z_pose: &Tensor, id_mesh: &Tensor, eps: f64) -> Result<Tensor> {
        if z_pose.rank() != 3 || z_pose.shape()[1] != self.width {
            return Err(ModelError::Precondition(format!(
                "decoder of width {} got features of shape {:?}",
                self.width,
                z_pose.shape()
            )));
        }
        let z_id = self.lift.apply(p, id_mesh)?;
        let z = channel_attention(
            &self.q.apply(p, &z_id)?.mul_scalar(1.0 / z_id.shape()[2] as f64),
            &self.k.apply(p, z_pose)?,
            &self.v.apply(p, &z_id)?,
            &p[self.gamma],
            z_pose,
        )?;
        let block = |j: usize, x: &Tensor| -> Result<Tensor> {
            let h = self.spadain[j].apply(p, x, id_mesh, eps)?;
            Ok(self.conv[j].apply(p, &h)?.relu())
        };
        let main = block(1, &block(0, &z)?)?;
        let skip = block(2, &z)?;
        Ok(main.add(&skip)?)
    }

    /// Slots of every SPAdaIN conditioning projection.
    pub fn spadain_slots(&self) -> Vec<usize> {
        self.spadain.iter().flat_map(|s| [s.scale.w, s.scale.b, s.bias.w, s.bias.b]).collect()
    }
}
