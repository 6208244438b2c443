use super::{dist, GeomError, Point, PointCloud, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SorParams {
    pub k: usize,
    pub alpha: f64,
}

impl Default for SorParams {
    fn default() -> Self {
        SorParams { k: 2, alpha: 1.1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SorResult {
    pub cloud: PointCloud,
    pub kept: Vec<usize>,
    pub removed: Vec<usize>,
}

impl SorResult {
    pub fn removed_fraction(&self) -> f64 {
        let total = self.kept.len() + self.removed.len();
        if total == 0 {
            0.0
        } else {
            self.removed.len() as f64 / total as f64
        }
    }
}

/// Mean distance from each point to its `k` nearest other points.
pub fn knn_mean_distances(points: &[Point], k: usize) -> Vec<f64> {
    let mut buf = Vec::with_capacity(points.len());
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            buf.clear();
            buf.extend(points.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, q)| dist(p, q)));
            buf.select_nth_unstable_by(k - 1, f64::total_cmp);
            buf[..k].iter().sum::<f64>() / k as f64
        })
        .collect()
}

/// Returns `(kept, removed)` index lists, both ascending.
pub fn sor_indices(points: &[Point], params: SorParams) -> Result<(Vec<usize>, Vec<usize>)> {
    if params.k == 0 {
        return Err(GeomError::InvalidArgument("SOR needs k >= 1".into()));
    }
    if points.len() <= params.k {
        return Err(GeomError::InvalidArgument(format!(
            "SOR with k = {} needs more than {} points, got {}",
            params.k,
            params.k,
            points.len()
        )));
    }
    let d = knn_mean_distances(points, params.k);
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let std = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let threshold = mean + params.alpha * std;
    // Equal distances can land a few ulps above the threshold.
    let slack = 1e-9 * mean;
    let (kept, removed): (Vec<usize>, Vec<usize>) = (0..points.len()).partition(|&i| d[i] - threshold <= slack);
    Ok((kept, removed))
}

/// Drops points whose mean kNN distance exceeds `mean + alpha * std`.
pub fn sor(pc: &PointCloud, params: SorParams) -> Result<SorResult> {
    let (kept, removed) = sor_indices(&pc.points, params)?;
    Ok(SorResult { cloud: pc.select(&kept), kept, removed })
}
