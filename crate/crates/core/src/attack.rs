//! Gradient attacks on the pose input.
//!
//! Every method ascends the reconstruction error by stepping against the
//! gradient of `f_adv`, which falls as the error grows.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::geom::{sor, GeomError, Point, PointCloud, SorParams, SorResult};
use crate::loss::f_adv;
use crate::model::{Model, ModelError, SamplePlan};
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AttackError {
    #[error("degenerate gradient: {0}")]
    DegenerateGradient(String),
    #[error("invalid attack configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

pub type Result<T> = std::result::Result<T, AttackError>;

macro_rules! named_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl FromStr for $name {
            type Err = AttackError;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($text => Ok($name::$variant),)+
                    other => Err(AttackError::Config(format!(
                        concat!("unknown ", stringify!($name), " {:?}; expected one of: ", $($text, " "),+), other
                    ))),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($name::$variant => $text,)+ })
            }
        }
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackMethod {
    Fgm,
    Ifgm,
    Mifgm,
    Pgd,
}
named_enum!(AttackMethod { Fgm => "fgm", Ifgm => "ifgm", Mifgm => "mifgm", Pgd => "pgd" });

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepRule {
    Raw,
    Sign,
    L2,
}
named_enum!(StepRule { Raw => "raw", Sign => "sign", L2 => "l2" });

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    L2,
    Linf,
}
named_enum!(NormKind { L2 => "l2", Linf => "linf" });

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackConfig {
    pub method: AttackMethod,
    pub eps: f64,
    pub iterations: usize,
    pub momentum: f64,
    pub step_rule: StepRule,
    pub norm: NormKind,
    pub random_init: bool,
    pub apply_sor: bool,
    pub sor: SorParams,
    pub delta: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            method: AttackMethod::Fgm,
            eps: 0.08,
            iterations: 10,
            momentum: 0.1,
            step_rule: StepRule::Sign,
            norm: NormKind::L2,
            random_init: true,
            apply_sor: true,
            sor: SorParams::default(),
            delta: 1e-8,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(AttackError::Config(format!("eps must be finite and nonnegative, got {}", self.eps)));
        }
        if self.iterations == 0 {
            return Err(AttackError::Config("iterations must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(AttackError::Config(format!("momentum {} outside [0, 1]", self.momentum)));
        }
        if !(self.delta > 0.0) {
            return Err(AttackError::Config("delta must be positive".into()));
        }
        Ok(())
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn norm_of(v: &[f64], kind: NormKind) -> f64 {
    match kind {
        NormKind::L2 => l2(v),
        NormKind::Linf => linf(v),
    }
}

/// A step of size `size` along the ascent direction `a` under `rule`.
fn step(a: &[f64], rule: StepRule, size: f64) -> Result<Vec<f64>> {
    match rule {
        StepRule::Raw => Ok(a.iter().map(|x| size * x).collect()),
        StepRule::Sign => {
            if a.iter().all(|&x| x == 0.0) {
                return Err(AttackError::DegenerateGradient("sign step of an all-zero gradient".into()));
            }
            Ok(a.iter().map(|&x| size * sign(x)).collect())
        }
        StepRule::L2 => {
            let n = l2(a);
            if n == 0.0 {
                return Err(AttackError::DegenerateGradient("normalizing an all-zero gradient".into()));
            }
            Ok(a.iter().map(|x| size * x / n).collect())
        }
    }
}

/// Projects `delta` into the `eps`-ball of `kind`.
pub fn project(delta: &mut [f64], eps: f64, kind: NormKind) {
    match kind {
        NormKind::L2 => {
            let n = l2(delta);
            if n > eps {
                let s = eps / n;
                delta.iter_mut().for_each(|d| *d *= s);
            }
        }
        NormKind::Linf => delta.iter_mut().for_each(|d| *d = d.clamp(-eps, eps)),
    }
}

fn random_in_ball<R: Rng + ?Sized>(dim: usize, eps: f64, kind: NormKind, rng: &mut R) -> Vec<f64> {
    match kind {
        NormKind::Linf => (0..dim).map(|_| rng.random_range(-eps..=eps)).collect(),
        NormKind::L2 => {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = l2(&v).max(f64::MIN_POSITIVE);
            let r = eps * rng.random::<f64>().powf(1.0 / dim as f64);
            v.iter_mut().for_each(|x| *x *= r / n);
            v
        }
    }
}

/// Runs the configured method against a black-box gradient oracle.
///
/// `grad(x)` returns the gradient of the objective to be decreased at `x`;
/// the result is the final perturbation, not the perturbed point.
pub fn perturbation<G, R>(x0: &[f64], cfg: &AttackConfig, rng: &mut R, mut grad: G) -> Result<Vec<f64>>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let dim = x0.len();
    if cfg.eps == 0.0 {
        return Ok(vec![0.0; dim]);
    }
    let shifted = |delta: &[f64]| -> Vec<f64> { x0.iter().zip(delta).map(|(x, d)| x + d).collect() };
    let ascent = |g: Vec<f64>| -> Vec<f64> { g.into_iter().map(|v| -v).collect() };

    if cfg.method == AttackMethod::Fgm {
        return step(&ascent(grad(x0)?), cfg.step_rule, cfg.eps);
    }
    let alpha = cfg.eps / cfg.iterations as f64;
    let mut delta = if cfg.method == AttackMethod::Pgd && cfg.random_init {
        random_in_ball(dim, cfg.eps, cfg.norm, rng)
    } else {
        vec![0.0; dim]
    };
    let mut m = vec![0.0; dim];
    for _ in 0..cfg.iterations {
        let a = ascent(grad(&shifted(&delta))?);
        let s = if cfg.method == AttackMethod::Mifgm {
            let l1: f64 = a.iter().map(|v| v.abs()).sum();
            if l1 == 0.0 {
                return Err(AttackError::DegenerateGradient("momentum update with an all-zero gradient".into()));
            }
            for (mi, ai) in m.iter_mut().zip(&a) {
                *mi = cfg.momentum * *mi + ai / l1;
            }
            step(&m, StepRule::Sign, alpha)?
        } else {
            step(&a, cfg.step_rule, alpha)?
        };
        for (d, v) in delta.iter_mut().zip(&s) {
            *d += v;
        }
        project(&mut delta, cfg.eps, cfg.norm);
    }
    Ok(delta)
}

fn flatten(points: &[Point]) -> Vec<f64> {
    points.iter().flat_map(|p| p.iter().copied()).collect()
}

fn unflatten(v: &[f64]) -> Vec<Point> {
    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Victim of an attack: a frozen model, one identity mesh and its ground truth.
pub struct Victim<'a> {
    pub model: &'a Model,
    params: Vec<Tensor>,
    id_mesh: Tensor,
    gt: Tensor,
}

impl<'a> Victim<'a> {
    pub fn new(model: &'a Model, id_mesh: &[Point], gt: &[Point]) -> Result<Self> {
        if id_mesh.len() != gt.len() {
            return Err(AttackError::Config(format!(
                "identity has {} vertices but ground truth has {}",
                id_mesh.len(),
                gt.len()
            )));
        }
        Ok(Victim {
            model,
            params: model.bind(false),
            id_mesh: Tensor::from_points(id_mesh, false),
            gt: Tensor::from_points(gt, false),
        })
    }

    /// Model output for `pose` under the evaluation-mode `plan`.
    pub fn output(&self, pose: &[Point], plan: &SamplePlan) -> Result<Vec<Point>> {
        let out = self.model.forward_planned(&self.params, &Tensor::from_points(pose, false), &self.id_mesh, plan)?;
        Ok(out.to_points(0))
    }

    /// Gradient of `f_adv` with respect to the pose coordinates. Parameters
    /// are bound without tracking, so they never receive gradients.
    pub fn input_gradient(&self, pose: &[Point], plan: &SamplePlan, delta: f64) -> Result<Vec<Point>> {
        let x = Tensor::from_points(pose, true);
        let out = self.model.forward_planned(&self.params, &x, &self.id_mesh, plan)?;
        f_adv(&out, &self.gt, delta).map_err(ModelError::from)?.backward().map_err(ModelError::from)?;
        let g = x.grad().unwrap_or_else(|| vec![0.0; 3 * pose.len()]);
        let n = pose.len();
        Ok((0..n).map(|i| [g[i], g[n + i], g[2 * n + i]]).collect())
    }

    /// Perturbed pose under a fixed sampling plan, before any filtering.
    pub fn attack<R: Rng + ?Sized>(
        &self,
        pose: &[Point],
        plan: &SamplePlan,
        cfg: &AttackConfig,
        rng: &mut R,
    ) -> Result<Vec<Point>> {
        let x0 = flatten(pose);
        let delta =
            perturbation(&x0, cfg, rng, |x| Ok(flatten(&self.input_gradient(&unflatten(x), plan, cfg.delta)?)))?;
        Ok(unflatten(&x0.iter().zip(&delta).map(|(a, b)| a + b).collect::<Vec<_>>()))
    }
}

#[derive(Clone, Debug)]
pub struct AttackOutcome {
    /// Perturbed pose before filtering.
    pub adversarial: PointCloud,
    /// Final sample: the filtered cloud when SOR is on, else `adversarial`.
    pub sample: PointCloud,
    pub sor: Option<SorResult>,
    pub l2: f64,
    pub linf: f64,
    pub warning: Option<String>,
}

/// Attack `pose` against the victim, then optionally filter with SOR.
pub fn generate_adversarial<R: Rng + ?Sized>(
    model: &Model,
    pose: &PointCloud,
    id_mesh: &[Point],
    gt: &[Point],
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    let victim = Victim::new(model, id_mesh, gt)?;
    let plan = model.plan(&pose.points, 0.0, false, rng)?;
    let adv = victim.attack(&pose.points, &plan, cfg, rng)?;
    let diff: Vec<f64> = flatten(&adv).iter().zip(flatten(&pose.points)).map(|(a, b)| a - b).collect();
    let adversarial = PointCloud::new(adv);
    let (sample, sor_result, warning) = if cfg.apply_sor {
        let r = sor(&adversarial, cfg.sor)?;
        let warning = (r.removed_fraction() > 0.5).then(|| {
            format!(
                "SOR removed {} of {} points; the perturbation is likely excessive",
                r.removed.len(),
                adversarial.len()
            )
        });
        (r.cloud.clone(), Some(r), warning)
    } else {
        (adversarial.clone(), None, None)
    };
    Ok(AttackOutcome { adversarial, sample, sor: sor_result, l2: l2(&diff), linf: linf(&diff), warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Gradient of `-|x - c|^2`, so ascent pushes away from `c`.
    fn away_from(c: f64) -> impl FnMut(&[f64]) -> Result<Vec<f64>> {
        move |x| Ok(x.iter().map(|v| -2.0 * (v - c)).collect())
    }

    fn cfg(method: AttackMethod) -> AttackConfig {
        AttackConfig { method, ..AttackConfig::default() }
    }

    #[test]
    fn fgm_sign_moves_every_coordinate_by_eps() {
        let x = [0.3, -0.2, 0.7];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = perturbation(&x, &cfg(AttackMethod::Fgm), &mut rng, away_from(0.0)).unwrap();
        assert_eq!(d, vec![0.08, -0.08, 0.08]);
        let zero = AttackConfig { eps: 0.0, ..cfg(AttackMethod::Fgm) };
        assert_eq!(perturbation(&x, &zero, &mut rng, away_from(0.0)).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn step_rules() {
        let x = [3.0, 4.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let raw = AttackConfig { step_rule: StepRule::Raw, eps: 0.5, ..cfg(AttackMethod::Fgm) };
        assert_eq!(perturbation(&x, &raw, &mut rng, away_from(0.0)).unwrap(), vec![3.0, 4.0]);
        let unit = AttackConfig { step_rule: StepRule::L2, eps: 0.5, ..cfg(AttackMethod::Fgm) };
        let d = perturbation(&x, &unit, &mut rng, away_from(0.0)).unwrap();
        assert!((d[0] - 0.3).abs() < 1e-15 && (d[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_degenerate_except_raw() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let flat = |x: &[f64]| Ok(vec![0.0; x.len()]);
        assert!(matches!(
            perturbation(&[1.0, 2.0], &cfg(AttackMethod::Fgm), &mut rng, flat),
            Err(AttackError::DegenerateGradient(_))
        ));
        let raw = AttackConfig { step_rule: StepRule::Raw, ..cfg(AttackMethod::Fgm) };
        assert_eq!(perturbation(&[1.0, 2.0], &raw, &mut rng, flat).unwrap(), vec![0.0, 0.0]);
        assert!(perturbation(&[1.0], &cfg(AttackMethod::Mifgm), &mut rng, flat).is_err());
    }

    #[test]
    fn single_iteration_collapses_to_fgm() {
        let x = [0.1, -0.4, 0.25, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one = AttackConfig { iterations: 1, norm: NormKind::Linf, ..cfg(AttackMethod::Ifgm) };
        let a = perturbation(&x, &one, &mut rng, away_from(0.05)).unwrap();
        let b = perturbation(&x, &cfg(AttackMethod::Fgm), &mut rng, away_from(0.05)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_momentum_matches_ifgm() {
        let x = [0.1, -0.4, 0.25, 0.3];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let grad = |x: &[f64]| Ok::<_, AttackError>(x.iter().map(|v| (3.0 * v).sin() - 0.2).collect());
        let mi = AttackConfig { momentum: 0.0, ..cfg(AttackMethod::Mifgm) };
        let a = perturbation(&x, &mi, &mut rng, grad).unwrap();
        let b = perturbation(&x, &cfg(AttackMethod::Ifgm), &mut rng, grad).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn iterative_methods_respect_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        for method in [AttackMethod::Ifgm, AttackMethod::Mifgm, AttackMethod::Pgd] {
            for norm in [NormKind::L2, NormKind::Linf] {
                for rule in [StepRule::Raw, StepRule::Sign, StepRule::L2] {
                    let c = AttackConfig { method, norm, step_rule: rule, eps: 0.05, ..AttackConfig::default() };
                    let d = perturbation(&x, &c, &mut rng, away_from(0.1)).unwrap();
                    assert!(norm_of(&d, norm) <= 0.05 + 1e-9, "{method} {norm} {rule}");
                }
            }
        }
    }

    #[test]
    fn names_parse() {
        assert_eq!("PGD".parse::<AttackMethod>().unwrap(), AttackMethod::Pgd);
        assert_eq!("linf".parse::<NormKind>().unwrap(), NormKind::Linf);
        assert!("cw".parse::<AttackMethod>().is_err());
        assert_eq!(StepRule::Sign.to_string(), "sign");
    }
}
