//! Meshes, point clouds and the preprocessing applied to them.

mod io;
mod ops;
mod sor;

use std::collections::BTreeSet;

pub use io::{parse_obj, parse_ply, read_mesh, write_mesh, write_obj, write_ply, MeshFormat};
pub use ops::{
    add_gaussian_noise, canonical_order, canonicalize, canonicalize_points, downsample, downsample_indices, mask,
    mask_indices, mask_keep_count, subset_by_rank, Canonical, CANONICAL_EXTENT,
};
pub use sor::{knn_mean_distances, sor, sor_indices, SorParams, SorResult};

pub type Point = [f64; 3];

#[derive(Debug, thiserror::Error)]
pub enum GeomError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("face {face} references vertex {index}, but the mesh has {count} vertices")]
    IndexOutOfRange { face: usize, index: usize, count: usize },
    #[error("face {face} is degenerate: {indices:?}")]
    DegenerateFace { face: usize, indices: [usize; 3] },
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("mesh has no faces, so it has no edges")]
    NoEdges,
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GeomError>;

/// Vertex positions with an optional fixed triangle topology.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub faces: Vec<[usize; 3]>,
    pub name: String,
}

impl Mesh {
    /// Builds a mesh, rejecting out-of-range and degenerate faces.
    pub fn new(vertices: Vec<Point>, faces: Vec<[usize; 3]>, name: impl Into<String>) -> Result<Self> {
        let mesh = Mesh { vertices, faces, name: name.into() };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn from_points(points: Vec<Point>, name: impl Into<String>) -> Self {
        Mesh { vertices: points, faces: Vec::new(), name: name.into() }
    }

    pub fn validate(&self) -> Result<()> {
        let count = self.vertices.len();
        for (f, tri) in self.faces.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i >= count) {
                return Err(GeomError::IndexOutOfRange { face: f, index, count });
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(GeomError::DegenerateFace { face: f, indices: *tri });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn cloud(&self) -> PointCloud {
        PointCloud { points: self.vertices.clone() }
    }

    /// Same topology and name, new positions.
    pub fn with_vertices(&self, vertices: Vec<Point>) -> Mesh {
        assert_eq!(vertices.len(), self.vertices.len(), "vertex count must be preserved");
        Mesh { vertices, faces: self.faces.clone(), name: self.name.clone() }
    }
}

/// Unordered set of points.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud { points: indices.iter().map(|&i| self.points[i]).collect() }
    }
}

impl From<Vec<Point>> for PointCloud {
    fn from(points: Vec<Point>) -> Self {
        PointCloud { points }
    }
}

/// Unique undirected edges `(i, j)` with `i < j`, sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeSet {
    edges: Vec<(usize, usize)>,
}

impl EdgeSet {
    /// Normalizes each pair to `i < j` and removes duplicates.
    pub fn from_pairs(pairs: Vec<(usize, usize)>) -> Self {
        let set: BTreeSet<(usize, usize)> = pairs.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
        EdgeSet { edges: set.into_iter().collect() }
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Split into parallel endpoint index lists.
    pub fn endpoints(&self) -> (Vec<usize>, Vec<usize>) {
        self.edges.iter().copied().unzip()
    }
}

pub fn edges_of(mesh: &Mesh) -> Result<EdgeSet> {
    if mesh.faces.is_empty() {
        return Err(GeomError::NoEdges);
    }
    let mut set = BTreeSet::new();
    for tri in &mesh.faces {
        for (a, b) in [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])] {
            set.insert((a.min(b), a.max(b)));
        }
    }
    Ok(EdgeSet { edges: set.into_iter().collect() })
}

pub(crate) fn dist(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
