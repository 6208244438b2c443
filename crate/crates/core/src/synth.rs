//! Procedural articulated figures with separable shape and pose.
//!
//! A figure is five open tubes (torso, two arms, two legs) swept along a
//! two-segment skeleton. Shape sets the tube girth and limb lengths; pose sets
//! two rotations per joint. Topology depends only on the ring settings, so
//! the exact transfer of pose `p` onto identity `s` is `generate(s, p)`.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::geom::{canonicalize, edges_of, read_mesh, write_obj, EdgeSet, GeomError, Mesh, Point};

pub const NUM_LIMBS: usize = 5;
pub const JOINTS_PER_LIMB: usize = 2;
pub const GIRTH_RANGE: (f64, f64) = (0.05, 0.15);
pub const LENGTH_RANGE: (f64, f64) = (0.3, 0.6);
pub const ANGLE_LIMIT: f64 = FRAC_PI_2;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("parameter out of range: {0}")]
    Range(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FigureSpec {
    pub rings_per_limb: usize,
    pub vertices_per_ring: usize,
}

impl Default for FigureSpec {
    fn default() -> Self {
        FigureSpec { rings_per_limb: 4, vertices_per_ring: 16 }
    }
}

impl FigureSpec {
    pub fn num_vertices(&self) -> usize {
        NUM_LIMBS * self.rings_per_limb * self.vertices_per_ring
    }

    fn validate(&self) -> Result<()> {
        if self.rings_per_limb < 2 || self.vertices_per_ring < 3 {
            return Err(SynthError::Range(format!(
                "need at least 2 rings of 3 vertices per limb, got {} x {}",
                self.rings_per_limb, self.vertices_per_ring
            )));
        }
        Ok(())
    }

    /// Quad strips along each limb, split into triangles.
    pub fn faces(&self) -> Vec<[usize; 3]> {
        let (r, v) = (self.rings_per_limb, self.vertices_per_ring);
        let mut faces = Vec::with_capacity(NUM_LIMBS * (r - 1) * v * 2);
        for limb in 0..NUM_LIMBS {
            let at = |k: usize, j: usize| limb * r * v + k * v + j % v;
            for k in 0..r - 1 {
                for j in 0..v {
                    faces.push([at(k, j), at(k, j + 1), at(k + 1, j + 1)]);
                    faces.push([at(k, j), at(k + 1, j + 1), at(k + 1, j)]);
                }
            }
        }
        faces
    }
}

/// Intrinsic parameters: one tube radius for the whole figure plus a length per limb.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FigureShape {
    pub girth: f64,
    /// Torso, left arm, right arm, left leg, right leg.
    pub lengths: [f64; NUM_LIMBS],
}

impl FigureShape {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        FigureShape {
            girth: rng.random_range(GIRTH_RANGE.0..=GIRTH_RANGE.1),
            lengths: std::array::from_fn(|_| rng.random_range(LENGTH_RANGE.0..=LENGTH_RANGE.1)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        if !inside(self.girth, GIRTH_RANGE) {
            return Err(SynthError::Range(format!("girth {} outside {GIRTH_RANGE:?}", self.girth)));
        }
        if let Some(l) = self.lengths.iter().find(|&&l| !inside(l, LENGTH_RANGE)) {
            return Err(SynthError::Range(format!("limb length {l} outside {LENGTH_RANGE:?}")));
        }
        Ok(())
    }
}

/// Extrinsic parameters: `angles[2 * limb + joint] = [about x, about y]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FigurePose {
    pub angles: [[f64; 2]; NUM_LIMBS * JOINTS_PER_LIMB],
}

impl FigurePose {
    pub fn rest() -> Self {
        FigurePose { angles: [[0.0; 2]; NUM_LIMBS * JOINTS_PER_LIMB] }
    }

    /// Angles uniform in `±amplitude`, with `amplitude <= pi/2`.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, amplitude: f64) -> Self {
        let a = amplitude.clamp(0.0, ANGLE_LIMIT);
        FigurePose { angles: std::array::from_fn(|_| [rng.random_range(-a..=a), rng.random_range(-a..=a)]) }
    }

    pub fn mirrored(&self) -> Self {
        FigurePose { angles: self.angles.map(|[a, b]| [-a, -b]) }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(a) = self.angles.iter().flatten().find(|a| !(a.abs() <= ANGLE_LIMIT)) {
            return Err(SynthError::Range(format!("joint angle {a} outside [-pi/2, pi/2]")));
        }
        Ok(())
    }
}

type Mat = [[f64; 3]; 3];

fn matmul(a: &Mat, b: &Mat) -> Mat {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

fn apply(m: &Mat, v: &Point) -> Point {
    std::array::from_fn(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

fn add(a: &Point, b: &Point, s: f64) -> Point {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

const IDENTITY: Mat = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// `Rx(a) * Ry(b)`. Both factors flip sign under reflection through z = 0,
/// so negating every angle mirrors the posed figure through that plane.
fn joint(a: f64, b: f64) -> Mat {
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]];
    let ry = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
    matmul(&rx, &ry)
}

struct Limb {
    root: Point,
    direction: Point,
    frames: [Mat; JOINTS_PER_LIMB],
    length: f64,
}

impl Limb {
    fn pose(root: Point, direction: Point, parent: &Mat, angles: &[[f64; 2]], length: f64) -> Self {
        let f0 = matmul(parent, &joint(angles[0][0], angles[0][1]));
        let f1 = matmul(&f0, &joint(angles[1][0], angles[1][1]));
        Limb { root, direction, frames: [f0, f1], length }
    }

    fn segment_end(&self, seg: usize) -> Point {
        let half = self.length / 2.0;
        let mut p = self.root;
        for f in &self.frames[..=seg] {
            p = add(&p, &apply(f, &self.direction), half);
        }
        p
    }

    /// Centre and frame of the tube at arc length `s`.
    fn at(&self, s: f64) -> (Point, Mat) {
        let half = self.length / 2.0;
        if s <= half {
            (add(&self.root, &apply(&self.frames[0], &self.direction), s), self.frames[0])
        } else {
            (add(&self.segment_end(0), &apply(&self.frames[1], &self.direction), s - half), self.frames[1])
        }
    }
}

/// Posed and canonicalized figure mesh.
pub fn generate_figure(spec: &FigureSpec, shape: &FigureShape, pose: &FigurePose) -> Result<Mesh> {
    spec.validate()?;
    shape.validate()?;
    pose.validate()?;
    let g = shape.girth;
    let offset = 2.5 * g;
    let a = &pose.angles;
    let torso = Limb::pose([0.0; 3], [0.0, 1.0, 0.0], &IDENTITY, &a[0..2], shape.lengths[0]);
    let top = torso.segment_end(1);
    let chest = torso.frames[1];
    let limbs = [
        Limb::pose(
            add(&top, &apply(&chest, &[-1.0, 0.0, 0.0]), offset),
            [-1.0, 0.0, 0.0],
            &chest,
            &a[2..4],
            shape.lengths[1],
        ),
        Limb::pose(
            add(&top, &apply(&chest, &[1.0, 0.0, 0.0]), offset),
            [1.0, 0.0, 0.0],
            &chest,
            &a[4..6],
            shape.lengths[2],
        ),
        Limb::pose([-offset, 0.0, 0.0], [0.0, -1.0, 0.0], &IDENTITY, &a[6..8], shape.lengths[3]),
        Limb::pose([offset, 0.0, 0.0], [0.0, -1.0, 0.0], &IDENTITY, &a[8..10], shape.lengths[4]),
    ];
    let (r, v) = (spec.rings_per_limb, spec.vertices_per_ring);
    let mut vertices = Vec::with_capacity(spec.num_vertices());
    for limb in std::iter::once(&torso).chain(&limbs) {
        let d = limb.direction;
        // In-plane normal to the rest direction, and the plane normal.
        let u0 = [-d[1], d[0], 0.0];
        let w0 = [0.0, 0.0, 1.0];
        for k in 0..r {
            let (centre, frame) = limb.at(limb.length * k as f64 / (r - 1) as f64);
            let (u, w) = (apply(&frame, &u0), apply(&frame, &w0));
            for j in 0..v {
                let (s, c) = (std::f64::consts::TAU * j as f64 / v as f64).sin_cos();
                vertices.push(add(&add(&centre, &u, g * c), &w, g * s));
            }
        }
    }
    let mesh = Mesh::new(vertices, spec.faces(), "figure")?;
    Ok(canonicalize(&mesh)?.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub train_identities: usize,
    pub train_poses: usize,
    pub test_identities: usize,
    pub unseen_poses: usize,
    pub spec: FigureSpec,
    /// Random training triples per epoch; `None` uses one sixth of the training grid.
    pub pairs_per_epoch: Option<usize>,
    pub pose_amplitude: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            train_identities: 16,
            train_poses: 40,
            test_identities: 4,
            unseen_poses: 20,
            spec: FigureSpec::default(),
            pairs_per_epoch: None,
            pose_amplitude: ANGLE_LIMIT,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.train_identities, self.train_poses, self.test_identities, self.unseen_poses].contains(&0) {
            return Err(SynthError::Dataset("every split count must be at least 1".into()));
        }
        if self.pairs_per_epoch == Some(0) {
            return Err(SynthError::Dataset("pairs_per_epoch must be at least 1".into()));
        }
        if !(0.0..=ANGLE_LIMIT).contains(&self.pose_amplitude) {
            return Err(SynthError::Range(format!("pose amplitude {} outside [0, pi/2]", self.pose_amplitude)));
        }
        self.spec.validate()
    }
}

/// Mesh indices of one pose-transfer example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Triple {
    pub pose: usize,
    pub identity: usize,
    pub gt: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Seen,
    Unseen,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Seen => "seen",
            Split::Unseen => "unseen",
        }
    }
}

/// Grid of figure meshes keyed by (identity label, pose label) plus test triples.
///
/// Identity labels `0..train_identities` are training identities, the rest are
/// test identities. Pose labels `0..train_poses` are training poses, the rest
/// are unseen poses.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub meshes: Vec<Mesh>,
    pub keys: Vec<(usize, usize)>,
    pub edges: EdgeSet,
    pub train_identities: Vec<usize>,
    pub train_poses: Vec<usize>,
    pub seen: Vec<Triple>,
    pub unseen: Vec<Triple>,
    pub pairs_per_epoch: usize,
    lookup: HashMap<(usize, usize), usize>,
}

impl Dataset {
    fn from_grid(
        meshes: Vec<Mesh>,
        keys: Vec<(usize, usize)>,
        train_identities: Vec<usize>,
        train_poses: Vec<usize>,
        seen: Vec<Triple>,
        unseen: Vec<Triple>,
        pairs_per_epoch: usize,
    ) -> Result<Self> {
        let first = meshes.first().ok_or_else(|| SynthError::Dataset("no meshes".into()))?;
        if meshes.iter().any(|m| m.faces != first.faces) {
            return Err(SynthError::Dataset("meshes do not share one topology".into()));
        }
        let edges = edges_of(first)?;
        let lookup: HashMap<_, _> = keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        if lookup.len() != keys.len() {
            return Err(SynthError::Dataset("duplicate mesh key".into()));
        }
        for t in seen.iter().chain(&unseen) {
            if [t.pose, t.identity, t.gt].iter().any(|&i| i >= meshes.len()) {
                return Err(SynthError::Dataset(format!("triple {t:?} references a missing mesh")));
            }
        }
        for &i in &train_identities {
            for &p in &train_poses {
                if !lookup.contains_key(&(i, p)) {
                    return Err(SynthError::Dataset(format!("training mesh ({i}, {p}) missing")));
                }
            }
        }
        Ok(Dataset { meshes, keys, edges, train_identities, train_poses, seen, unseen, pairs_per_epoch, lookup })
    }

    pub fn mesh_index(&self, identity: usize, pose: usize) -> Option<usize> {
        self.lookup.get(&(identity, pose)).copied()
    }

    pub fn mesh(&self, identity: usize, pose: usize) -> &Mesh {
        &self.meshes[self.lookup[&(identity, pose)]]
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Seen => &self.seen,
            Split::Unseen => &self.unseen,
            Split::Train => &[],
        }
    }

    /// Random training triples: pose from `(s, p)`, identity from `(t, q)`,
    /// ground truth `(t, p)`.
    pub fn epoch_pairs<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Triple> {
        let ids = &self.train_identities;
        let poses = &self.train_poses;
        (0..self.pairs_per_epoch)
            .map(|_| {
                let s = ids[rng.random_range(0..ids.len())];
                let t = ids[rng.random_range(0..ids.len())];
                let p = poses[rng.random_range(0..poses.len())];
                let q = poses[rng.random_range(0..poses.len())];
                Triple { pose: self.lookup[&(s, p)], identity: self.lookup[&(t, q)], gt: self.lookup[&(t, p)] }
            })
            .collect()
    }
}

/// Samples identities and poses, then materializes every mesh the splits use.
pub fn make_dataset<R: Rng + ?Sized>(cfg: &DatasetConfig, rng: &mut R) -> Result<Dataset> {
    cfg.validate()?;
    let n_id = cfg.train_identities + cfg.test_identities;
    let n_pose = cfg.train_poses + cfg.unseen_poses;
    let shapes: Vec<FigureShape> = (0..n_id).map(|_| FigureShape::sample(rng)).collect();
    let poses: Vec<FigurePose> = (0..n_pose).map(|_| FigurePose::sample(rng, cfg.pose_amplitude)).collect();
    let train_ids: Vec<usize> = (0..cfg.train_identities).collect();
    let test_ids: Vec<usize> = (cfg.train_identities..n_id).collect();
    let train_poses: Vec<usize> = (0..cfg.train_poses).collect();
    let unseen_poses: Vec<usize> = (cfg.train_poses..n_pose).collect();

    let mut keys = Vec::new();
    for &i in &train_ids {
        keys.extend(train_poses.iter().map(|&p| (i, p)));
    }
    for &i in &test_ids {
        keys.extend(train_poses.iter().chain(&unseen_poses).map(|&p| (i, p)));
    }
    let meshes = keys
        .iter()
        .map(|&(i, p)| {
            let mut m = generate_figure(&cfg.spec, &shapes[i], &poses[p])?;
            m.name = format!("id{i:03}_pose{p:03}");
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    let lookup: HashMap<(usize, usize), usize> = keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let test_triples = |pose_set: &[usize]| -> Vec<Triple> {
        let mut out = Vec::new();
        for (k, &t) in test_ids.iter().enumerate() {
            let source = test_ids[(k + 1) % test_ids.len()];
            for (j, &p) in pose_set.iter().enumerate() {
                let q = pose_set[(j + 1) % pose_set.len()];
                out.push(Triple { pose: lookup[&(source, p)], identity: lookup[&(t, q)], gt: lookup[&(t, p)] });
            }
        }
        out
    };
    let seen = test_triples(&train_poses);
    let unseen = test_triples(&unseen_poses);
    let pairs = cfg.pairs_per_epoch.unwrap_or_else(|| (train_ids.len() * train_poses.len()).div_ceil(6));
    Dataset::from_grid(meshes, keys, train_ids, train_poses, seen, unseen, pairs)
}

pub const DATASET_MANIFEST: &str = "manifest.txt";
const DATASET_MAGIC: &str = "posemae-dataset 1";

/// Writes every mesh as OBJ under `dir/meshes/` plus a text manifest.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    let io = |e: std::io::Error| SynthError::Geom(GeomError::Io(e));
    std::fs::create_dir_all(dir.join("meshes")).map_err(io)?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "{DATASET_MAGIC}");
    let _ = writeln!(manifest, "pairs_per_epoch {}", data.pairs_per_epoch);
    let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    let _ = writeln!(manifest, "train_identities {}", list(&data.train_identities));
    let _ = writeln!(manifest, "train_poses {}", list(&data.train_poses));
    for (m, &(i, p)) in data.meshes.iter().zip(&data.keys) {
        let rel = format!("meshes/{}.obj", m.name);
        std::fs::write(dir.join(&rel), write_obj(m)).map_err(io)?;
        let _ = writeln!(manifest, "mesh {i} {p} {rel}");
    }
    for (split, triples) in [(Split::Seen, &data.seen), (Split::Unseen, &data.unseen)] {
        for t in triples {
            let _ = writeln!(manifest, "triple {} {} {} {}", split.name(), t.pose, t.identity, t.gt);
        }
    }
    std::fs::write(dir.join(DATASET_MANIFEST), manifest).map_err(io)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(dir.join(DATASET_MANIFEST)).map_err(|e| SynthError::Geom(GeomError::Io(e)))?;
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l) != Some(DATASET_MAGIC) {
        return Err(SynthError::Dataset("missing dataset manifest header".into()));
    }
    let num = |t: &str, line: usize| -> Result<usize> {
        t.parse().map_err(|_| SynthError::Dataset(format!("manifest line {}: bad number {t:?}", line + 1)))
    };
    let (mut meshes, mut keys, mut seen, mut unseen) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut ids, mut poses, mut pairs) = (Vec::new(), Vec::new(), None);
    for (ln, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["pairs_per_epoch", n] => pairs = Some(num(n, ln)?),
            ["train_identities", rest @ ..] => ids = rest.iter().map(|t| num(t, ln)).collect::<Result<_>>()?,
            ["train_poses", rest @ ..] => poses = rest.iter().map(|t| num(t, ln)).collect::<Result<_>>()?,
            ["mesh", i, p, rel] => {
                let mut m = read_mesh(&dir.join(rel), None)?;
                m.name = Path::new(rel).file_stem().and_then(|s| s.to_str()).unwrap_or("mesh").to_string();
                meshes.push(m);
                keys.push((num(i, ln)?, num(p, ln)?));
            }
            ["triple", split, a, b, c] => {
                let t = Triple { pose: num(a, ln)?, identity: num(b, ln)?, gt: num(c, ln)? };
                match *split {
                    "seen" => seen.push(t),
                    "unseen" => unseen.push(t),
                    other => return Err(SynthError::Dataset(format!("unknown split {other:?}"))),
                }
            }
            _ => return Err(SynthError::Dataset(format!("manifest line {}: unrecognized {line:?}", ln + 1))),
        }
    }
    let pairs = pairs.ok_or_else(|| SynthError::Dataset("manifest lacks pairs_per_epoch".into()))?;
    Dataset::from_grid(meshes, keys, ids, poses, seen, unseen, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn topology_counts() {
        let spec = FigureSpec::default();
        let m = generate_figure(&spec, &FigureShape { girth: 0.1, lengths: [0.45; 5] }, &FigurePose::rest()).unwrap();
        assert_eq!(m.len(), 320);
        assert_eq!(m.faces.len(), 480);
        assert_eq!(edges_of(&m).unwrap().len(), 800);
    }

    #[test]
    fn determinism_and_shared_topology() {
        let spec = FigureSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (FigureShape::sample(&mut rng), FigureShape::sample(&mut rng));
        let pose = FigurePose::sample(&mut rng, ANGLE_LIMIT);
        let ma = generate_figure(&spec, &a, &pose).unwrap();
        assert_eq!(ma, generate_figure(&spec, &a, &pose).unwrap());
        let mb = generate_figure(&spec, &b, &pose).unwrap();
        assert_eq!(ma.faces, mb.faces);
        assert_ne!(ma.vertices, mb.vertices);
    }

    #[test]
    fn out_of_range_rejected() {
        let spec = FigureSpec::default();
        let ok = FigureShape { girth: 0.1, lengths: [0.4; 5] };
        assert!(generate_figure(&spec, &FigureShape { girth: 0.2, ..ok }, &FigurePose::rest()).is_err());
        let mut pose = FigurePose::rest();
        pose.angles[3][1] = 2.0;
        assert!(generate_figure(&spec, &ok, &pose).is_err());
    }

    #[test]
    fn dataset_splits() {
        let data = make_dataset(&DatasetConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(data.train_identities.len(), 16);
        assert_eq!(data.train_poses.len(), 40);
        assert_eq!(data.seen.len(), 4 * 40);
        assert_eq!(data.unseen.len(), 4 * 20);
        assert_eq!(data.pairs_per_epoch, 107);
        let train_ids: Vec<usize> = data.train_identities.clone();
        for t in data.seen.iter().chain(&data.unseen) {
            for m in [t.pose, t.identity, t.gt] {
                assert!(!train_ids.contains(&data.keys[m].0));
            }
        }
        for t in &data.unseen {
            assert!(!data.train_poses.contains(&data.keys[t.gt].1));
        }
        let pairs = data.epoch_pairs(&mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(pairs.len(), 107);
        for t in pairs {
            assert_eq!(data.keys[t.gt].0, data.keys[t.identity].0);
            assert_eq!(data.keys[t.gt].1, data.keys[t.pose].1);
        }
    }

    #[test]
    fn mirrored_pose_reflects_through_rest_plane() {
        let spec = FigureSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let shape = FigureShape::sample(&mut rng);
        let pose = FigurePose::sample(&mut rng, ANGLE_LIMIT);
        let a = generate_figure(&spec, &shape, &pose).unwrap();
        let b = generate_figure(&spec, &shape, &pose.mirrored()).unwrap();
        let v = spec.vertices_per_ring;
        for ring in 0..NUM_LIMBS * spec.rings_per_limb {
            for j in 0..v {
                let p = a.vertices[ring * v + j];
                let q = b.vertices[ring * v + (v - j) % v];
                for (x, y) in [p[0], p[1], -p[2]].iter().zip(q) {
                    assert!((x - y).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn clean_figures_survive_outlier_removal() {
        let spec = FigureSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let m = generate_figure(&spec, &FigureShape::sample(&mut rng), &FigurePose::sample(&mut rng, ANGLE_LIMIT))
                .unwrap();
            let r = crate::geom::sor(&m.cloud(), crate::geom::SorParams::default()).unwrap();
            assert!(r.kept.len() as f64 >= 0.99 * m.len() as f64, "removed {}", r.removed.len());
        }
    }
}
