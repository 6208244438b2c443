//! The pose-transfer network.
//!
//! A multi-scale encoder pools the driving pose into one latent code, which is
//! tiled over the identity vertices and refined by four decoder blocks. Each
//! block mixes identity and pose features with channel attention and
//! re-injects identity geometry through SPAdaIN. A final projection and `tanh`
//! produce identity-sized coordinates.

mod attention;
mod checkpoint;
mod decoder;
mod encoder;
mod spadain;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::{GeomError, Mesh, Point, PointCloud};
use crate::tensor::{ParamStore, Tensor, TensorError};

pub use attention::{attention_peak, channel_attention, channel_attention_map, reset_attention_peak};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use decoder::DecoderLayout;
pub use encoder::{SamplePlan, MIN_POSE_POINTS, NUM_SCALES};
pub use spadain::spadain;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Layer widths. The encoder chain starts at 3 input channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder_widths: [usize; 3],
    pub decoder_widths: [usize; 4],
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { encoder_widths: [64, 128, 1024], decoder_widths: [1024, 512, 512, 256], norm_eps: 1e-5 }
    }
}

impl ModelConfig {
    pub fn toy() -> Self {
        ModelConfig { encoder_widths: [16, 32, 64], decoder_widths: [64, 32, 32, 16], ..Self::default() }
    }

    /// All widths equal to `w`; used for finite-difference testing.
    pub fn uniform(w: usize) -> Self {
        ModelConfig { encoder_widths: [w; 3], decoder_widths: [w; 4], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_widths.iter().chain(&self.decoder_widths).any(|&w| w == 0) {
            return Err(ModelError::Precondition("layer widths must be positive".into()));
        }
        if !(self.norm_eps > 0.0) {
            return Err(ModelError::Precondition("norm_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Parameter slots of a kernel-1 convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub w: usize,
    pub b: usize,
}

impl Conv {
    fn register(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cin: usize, cout: usize) -> Self {
        let bound = 1.0 / (cin as f64).sqrt();
        let w = (0..cout * cin).map(|_| rng.random_range(-bound..=bound)).collect();
        Conv {
            w: store.add(format!("{name}.w"), &[cout, cin], w),
            b: store.add(format!("{name}.b"), &[cout], (0..cout).map(|_| rng.random_range(-bound..=bound)).collect()),
        }
    }

    pub fn apply(&self, p: &[Tensor], x: &Tensor) -> Result<Tensor> {
        Ok(x.pointwise_linear(&p[self.w], &p[self.b])?)
    }
}

#[derive(Clone, Debug)]
struct Layout {
    encoder: [[Conv; 3]; NUM_SCALES],
    projections: [Conv; 4],
    decoders: [DecoderLayout; 4],
    head: Conv,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

impl Model {
    /// Fresh model: weights and biases uniform in `±1/sqrt(fan_in)`, attention gains zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let [e1, e2, e3] = config.encoder_widths;
        let encoder = std::array::from_fn(|s| {
            [
                Conv::register(&mut store, &mut rng, &format!("enc.s{s}.l0"), 3, e1),
                Conv::register(&mut store, &mut rng, &format!("enc.s{s}.l1"), e1, e2),
                Conv::register(&mut store, &mut rng, &format!("enc.s{s}.l2"), e2, e3),
            ]
        });
        let mut projections = Vec::with_capacity(4);
        let mut decoders = Vec::with_capacity(4);
        let mut prev = e3;
        for (i, &c) in config.decoder_widths.iter().enumerate() {
            projections.push(Conv::register(&mut store, &mut rng, &format!("proj{i}"), prev, c));
            decoders.push(DecoderLayout::register(&mut store, &mut rng, &format!("dec{i}"), c));
            prev = c;
        }
        let head = Conv::register(&mut store, &mut rng, "head", prev, 3);
        let layout = Layout {
            encoder,
            projections: projections.try_into().expect("four projections"),
            decoders: decoders.try_into().expect("four decoders"),
            head,
        };
        Ok(Model { config, params: store, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn decoder_layout(&self, i: usize) -> &DecoderLayout {
        &self.layout.decoders[i]
    }

    /// Leaf tensors over the current parameter values.
    pub fn bind(&self, requires_grad: bool) -> Vec<Tensor> {
        self.params.bind(requires_grad)
    }

    /// Draws the per-scale point subsets for one forward pass. Masking with
    /// ratio `phi` applies only when `training` is set.
    pub fn plan<R: Rng + ?Sized>(&self, pose: &[Point], phi: f64, training: bool, rng: &mut R) -> Result<SamplePlan> {
        SamplePlan::draw(pose, if training { phi } else { 0.0 }, rng)
    }

    /// Pooled pose code `[1, C, 1]` under a fixed sampling plan.
    pub fn encode(&self, p: &[Tensor], pose: &Tensor, plan: &SamplePlan) -> Result<Tensor> {
        encoder::encode(&self.layout.encoder, p, pose, plan, self.config.norm_eps)
    }

    /// Decoder block `i` on pose features `z_pose` conditioned on the identity mesh.
    pub fn decoder_block(&self, p: &[Tensor], i: usize, z_pose: &Tensor, id_mesh: &Tensor) -> Result<Tensor> {
        self.layout.decoders[i].apply(p, z_pose, id_mesh, self.config.norm_eps)
    }

    /// Full forward pass for `pose: [1,3,Np]` and `id_mesh: [1,3,Nid]`, returning `[1,3,Nid]`.
    pub fn forward_planned(&self, p: &[Tensor], pose: &Tensor, id_mesh: &Tensor, plan: &SamplePlan) -> Result<Tensor> {
        check_canonical("pose", pose)?;
        check_canonical("identity", id_mesh)?;
        let n_id = id_mesh.shape()[2];
        let code = self.encode(p, pose, plan)?;
        let mut z = code.tile(n_id)?;
        for (proj, i) in self.layout.projections.iter().zip(0..) {
            z = proj.apply(p, &z)?;
            z = self.decoder_block(p, i, &z, id_mesh)?;
        }
        Ok(self.layout.head.apply(p, &z)?.tanh())
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        p: &[Tensor],
        pose: &Tensor,
        id_mesh: &Tensor,
        phi: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Tensor> {
        let plan = self.plan(&pose.to_points(0), phi, training, rng)?;
        self.forward_planned(p, pose, id_mesh, &plan)
    }

    /// Inference without gradient tracking; the result inherits the identity topology.
    pub fn transfer<R: Rng + ?Sized>(&self, pose: &PointCloud, id_mesh: &Mesh, rng: &mut R) -> Result<Mesh> {
        let p = self.bind(false);
        let out = self.forward(
            &p,
            &Tensor::from_points(&pose.points, false),
            &Tensor::from_points(&id_mesh.vertices, false),
            0.0,
            false,
            rng,
        )?;
        Ok(id_mesh.with_vertices(out.to_points(0)))
    }

    pub(crate) fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let fresh = Model::new(config, 0)?;
        if fresh.params.names() != params.names() {
            return Err(ModelError::Checkpoint("parameter names do not match the configured model".into()));
        }
        for slot in 0..params.len() {
            if fresh.params.shape(slot) != params.shape(slot) {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    params.names()[slot],
                    params.shape(slot),
                    fresh.params.shape(slot)
                )));
            }
        }
        Ok(Model { params, ..fresh })
    }
}

fn check_canonical(what: &str, t: &Tensor) -> Result<()> {
    if t.rank() != 3 || t.shape()[0] != 1 || t.shape()[1] != 3 {
        return Err(ModelError::Precondition(format!("{what} must have shape [1,3,N], got {:?}", t.shape())));
    }
    if let Some(v) = t.values().iter().find(|v| !(v.abs() <= 1.0 + 1e-9)) {
        return Err(ModelError::Precondition(format!(
            "{what} coordinate {v} lies outside [-1, 1]; canonicalize the input first"
        )));
    }
    Ok(())
}
