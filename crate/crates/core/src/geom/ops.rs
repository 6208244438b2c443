use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{GeomError, Mesh, Point, PointCloud, Result};

/// Largest absolute coordinate after canonicalization.
pub const CANONICAL_EXTENT: f64 = 0.9;

/// The similarity transform applied by [`canonicalize`]: `p' = (p - shift) * scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Canonical {
    pub shift: Point,
    pub scale: f64,
}

impl Canonical {
    pub fn apply(&self, p: &Point) -> Point {
        [(p[0] - self.shift[0]) * self.scale, (p[1] - self.shift[1]) * self.scale, (p[2] - self.shift[2]) * self.scale]
    }

    pub fn invert(&self, p: &Point) -> Point {
        [p[0] / self.scale + self.shift[0], p[1] / self.scale + self.shift[1], p[2] / self.scale + self.shift[2]]
    }

    pub fn invert_points(&self, points: &[Point]) -> Vec<Point> {
        points.iter().map(|p| self.invert(p)).collect()
    }
}

pub fn canonicalize_points(points: &[Point]) -> Result<(Vec<Point>, Canonical)> {
    if points.is_empty() {
        return Err(GeomError::Degenerate("cannot canonicalize an empty point set".into()));
    }
    let n = points.len() as f64;
    let mut shift = [0.0; 3];
    for p in points {
        for c in 0..3 {
            shift[c] += p[c];
        }
    }
    shift.iter_mut().for_each(|s| *s /= n);
    let extent = points.iter().flat_map(|p| (0..3).map(move |c| (p[c] - shift[c]).abs())).fold(0.0, f64::max);
    if extent == 0.0 || !extent.is_finite() {
        return Err(GeomError::Degenerate("all vertices coincide".into()));
    }
    let t = Canonical { shift, scale: CANONICAL_EXTENT / extent };
    Ok((points.iter().map(|p| t.apply(p)).collect(), t))
}

/// Zero centroid, max |coordinate| of [`CANONICAL_EXTENT`]; faces untouched.
pub fn canonicalize(mesh: &Mesh) -> Result<(Mesh, Canonical)> {
    let (vertices, t) = canonicalize_points(&mesh.vertices)?;
    Ok((mesh.with_vertices(vertices), t))
}

/// Indices sorting points lexicographically by (x, y, z), ties by index.
pub fn canonical_order(points: &[Point]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (&points[a], &points[b]);
        p[0].total_cmp(&q[0]).then(p[1].total_cmp(&q[1])).then(p[2].total_cmp(&q[2])).then(a.cmp(&b))
    });
    order
}

/// Draws `count` distinct positions of `order` uniformly and returns the
/// referenced indices in ascending order.
pub fn subset_by_rank<R: Rng + ?Sized>(order: &[usize], count: usize, rng: &mut R) -> Vec<usize> {
    let mut picked: Vec<usize> =
        rand::seq::index::sample(rng, order.len(), count).into_iter().map(|r| order[r]).collect();
    picked.sort_unstable();
    picked
}

/// Random subset of `floor(N / factor)` indices, ascending.
///
/// Ranks are drawn over the coordinate order rather than the storage order,
/// so the selected point set does not depend on how the input is permuted.
pub fn downsample_indices<R: Rng + ?Sized>(points: &[Point], factor: usize, rng: &mut R) -> Result<Vec<usize>> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(GeomError::InvalidArgument(format!("downsample factor {factor} is not a power of two")));
    }
    if points.len() < factor {
        return Err(GeomError::InvalidArgument(format!("cannot downsample {} points by {factor}", points.len())));
    }
    if factor == 1 {
        return Ok((0..points.len()).collect());
    }
    Ok(subset_by_rank(&canonical_order(points), points.len() / factor, rng))
}

pub fn downsample<R: Rng + ?Sized>(pc: &PointCloud, factor: usize, rng: &mut R) -> Result<PointCloud> {
    Ok(pc.select(&downsample_indices(&pc.points, factor, rng)?))
}

pub fn mask_keep_count(n: usize, ratio: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(GeomError::InvalidArgument(format!("mask ratio {ratio} outside [0, 1)")));
    }
    Ok(((n as f64 * (1.0 - ratio)).round() as usize).clamp(1, n.max(1)))
}

/// Indices kept after masking a fraction `ratio` of `n` points, ascending.
/// A zero ratio keeps everything and draws nothing from `rng`.
pub fn mask_indices<R: Rng + ?Sized>(n: usize, ratio: f64, rng: &mut R) -> Result<Vec<usize>> {
    let keep = mask_keep_count(n, ratio)?;
    if keep >= n {
        return Ok((0..n).collect());
    }
    let mut idx = rand::seq::index::sample(rng, n, keep).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

pub fn mask<R: Rng + ?Sized>(pc: &PointCloud, ratio: f64, rng: &mut R) -> Result<PointCloud> {
    Ok(pc.select(&mask_indices(pc.len(), ratio, rng)?))
}

pub fn add_gaussian_noise<R: Rng + ?Sized>(pc: &PointCloud, sigma: f64, rng: &mut R) -> Result<PointCloud> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(GeomError::InvalidArgument(format!("noise sigma {sigma} must be finite and nonnegative")));
    }
    if sigma == 0.0 {
        return Ok(pc.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let points = pc
        .points
        .iter()
        .map(|p| [p[0] + normal.sample(rng), p[1] + normal.sample(rng), p[2] + normal.sample(rng)])
        .collect();
    Ok(PointCloud { points })
}
