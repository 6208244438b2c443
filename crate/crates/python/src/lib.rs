//! Python bindings. Point sets cross the boundary as lists of `[x, y, z]`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use posemae_core::attack::{generate_adversarial, AttackConfig};
use posemae_core::geom::{self, Mesh, Point, PointCloud, SorParams};
use posemae_core::loss;
use posemae_core::model::{self as core_model, ModelConfig};
use posemae_core::synth::{self, FigurePose, FigureShape, FigureSpec};
use posemae_core::train::{self, stream_rng, Config, EvalOptions, Trainer};

type Faces = Vec<[usize; 3]>;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

#[pyfunction]
fn read_mesh(path: PathBuf) -> PyResult<(Vec<Point>, Faces)> {
    let m = geom::read_mesh(&path, None).map_err(io_err)?;
    Ok((m.vertices, m.faces))
}

#[pyfunction]
#[pyo3(signature = (path, vertices, faces = Vec::new()))]
fn write_mesh(path: PathBuf, vertices: Vec<Point>, faces: Faces) -> PyResult<()> {
    let mesh = Mesh::new(vertices, faces, "mesh").map_err(value_err)?;
    geom::write_mesh(&path, &mesh, None).map_err(io_err)
}

/// Returns `(points, shift, scale)` with `points = (input - shift) * scale`.
#[pyfunction]
fn canonicalize(points: Vec<Point>) -> PyResult<(Vec<Point>, Point, f64)> {
    let (p, c) = geom::canonicalize_points(&points).map_err(value_err)?;
    Ok((p, c.shift, c.scale))
}

/// Returns `(kept, removed)` index lists.
#[pyfunction]
#[pyo3(signature = (points, k = 2, alpha = 1.1))]
fn sor(points: Vec<Point>, k: usize, alpha: f64) -> PyResult<(Vec<usize>, Vec<usize>)> {
    geom::sor_indices(&points, SorParams { k, alpha }).map_err(value_err)
}

/// Mean squared per-vertex distance, unscaled.
#[pyfunction]
fn pmd(result: Vec<Point>, gt: Vec<Point>) -> PyResult<f64> {
    loss::pmd(&result, &gt).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (girth, lengths, angles, rings_per_limb = 4, vertices_per_ring = 16))]
fn generate_figure(
    girth: f64,
    lengths: [f64; synth::NUM_LIMBS],
    angles: Vec<[f64; 2]>,
    rings_per_limb: usize,
    vertices_per_ring: usize,
) -> PyResult<(Vec<Point>, Faces)> {
    let angles =
        angles.try_into().map_err(|a: Vec<_>| value_err(format!("expected 10 joint angle pairs, got {}", a.len())))?;
    let spec = FigureSpec { rings_per_limb, vertices_per_ring };
    let m =
        synth::generate_figure(&spec, &FigureShape { girth, lengths }, &FigurePose { angles }).map_err(value_err)?;
    Ok((m.vertices, m.faces))
}

/// A random figure: shape and pose drawn from the seed.
#[pyfunction]
#[pyo3(signature = (seed = 0, amplitude = synth::ANGLE_LIMIT))]
fn random_figure(seed: u64, amplitude: f64) -> PyResult<(Vec<Point>, Faces)> {
    let mut rng = stream_rng(seed, "figure", 0);
    let shape = FigureShape::sample(&mut rng);
    let pose = FigurePose::sample(&mut rng, amplitude);
    let m = synth::generate_figure(&FigureSpec::default(), &shape, &pose).map_err(value_err)?;
    Ok((m.vertices, m.faces))
}

#[pyfunction]
#[pyo3(signature = (out_dir, config = String::new(), seed = 0))]
fn make_dataset(out_dir: PathBuf, config: String, seed: u64) -> PyResult<usize> {
    let cfg = Config::parse(&config).map_err(value_err)?;
    let data = synth::make_dataset(&cfg.data, &mut stream_rng(seed, "data", 0)).map_err(value_err)?;
    synth::write_dataset(&out_dir, &data).map_err(io_err)?;
    Ok(data.meshes.len())
}

#[pyclass(name = "Model", module = "posemae")]
struct PyModel {
    inner: core_model::Model,
}

#[pymethods]
impl PyModel {
    /// `preset` is `"toy"` or `"full"`.
    #[new]
    #[pyo3(signature = (preset = "toy", seed = 0))]
    fn new(preset: &str, seed: u64) -> PyResult<Self> {
        let config = match preset {
            "toy" => ModelConfig::toy(),
            "full" => ModelConfig::default(),
            other => return Err(value_err(format!("unknown preset {other:?}"))),
        };
        Ok(PyModel { inner: core_model::Model::new(config, seed).map_err(value_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel { inner: core_model::load_checkpoint(&path).map_err(io_err)?.model })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        core_model::save_checkpoint(&path, &self.inner, None, &BTreeMap::new()).map_err(io_err)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }

    /// Both inputs must already be canonical (coordinates within the unit box).
    #[pyo3(signature = (pose, identity, seed = 0))]
    fn transfer(&self, pose: Vec<Point>, identity: Vec<Point>, seed: u64) -> PyResult<Vec<Point>> {
        let id = Mesh::from_points(identity, "identity");
        let out = self
            .inner
            .transfer(&PointCloud::new(pose), &id, &mut stream_rng(seed, "transfer", 0))
            .map_err(value_err)?;
        Ok(out.vertices)
    }

    /// Returns a dict with the adversarial cloud, the filtered sample and the perturbation norms.
    #[pyo3(signature = (pose, identity, gt, method = "fgm", eps = 0.08, iterations = 10, apply_sor = true, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn attack<'py>(
        &self,
        py: Python<'py>,
        pose: Vec<Point>,
        identity: Vec<Point>,
        gt: Vec<Point>,
        method: &str,
        eps: f64,
        iterations: usize,
        apply_sor: bool,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let cfg = AttackConfig {
            method: method.parse().map_err(value_err)?,
            eps,
            iterations,
            apply_sor,
            ..AttackConfig::default()
        };
        let o = generate_adversarial(
            &self.inner,
            &PointCloud::new(pose),
            &identity,
            &gt,
            &cfg,
            &mut stream_rng(seed, "attack", 0),
        )
        .map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("adversarial", o.adversarial.points)?;
        d.set_item("sample", o.sample.points)?;
        d.set_item("removed", o.sor.map(|s| s.removed).unwrap_or_default())?;
        d.set_item("l2", o.l2)?;
        d.set_item("linf", o.linf)?;
        Ok(d)
    }

    /// Report CSV over a generated dataset directory.
    #[pyo3(signature = (data_dir, samples = 0, attack = false, seed = 0))]
    fn evaluate(&self, data_dir: PathBuf, samples: usize, attack: bool, seed: u64) -> PyResult<String> {
        let data = synth::load_dataset(&data_dir).map_err(io_err)?;
        let opts = EvalOptions { samples, attack: attack.then(AttackConfig::default), seed, ..EvalOptions::default() };
        Ok(train::evaluate(&self.inner, &data, &opts).map_err(value_err)?.to_csv())
    }
}

/// Trains on a dataset directory and returns the metrics CSV.
#[pyfunction]
#[pyo3(signature = (data_dir, out_dir, config = String::new()))]
fn fit(data_dir: PathBuf, out_dir: PathBuf, config: String) -> PyResult<String> {
    let cfg = Config::parse(&config).map_err(value_err)?;
    let data = synth::load_dataset(&data_dir).map_err(io_err)?;
    let mut trainer = Trainer::from_config(cfg, &data).map_err(value_err)?;
    let history = trainer.fit(Some(&out_dir)).map_err(value_err)?;
    Ok(train::metrics_csv(&history))
}

#[pymodule]
fn posemae(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PMD_UNIT", loss::PMD_UNIT)?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(read_mesh, m)?)?;
    m.add_function(wrap_pyfunction!(write_mesh, m)?)?;
    m.add_function(wrap_pyfunction!(canonicalize, m)?)?;
    m.add_function(wrap_pyfunction!(sor, m)?)?;
    m.add_function(wrap_pyfunction!(pmd, m)?)?;
    m.add_function(wrap_pyfunction!(generate_figure, m)?)?;
    m.add_function(wrap_pyfunction!(random_figure, m)?)?;
    m.add_function(wrap_pyfunction!(make_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    Ok(())
}
