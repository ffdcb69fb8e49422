//! Correspondence machinery for one iteration: forward matches, overlap
//! trimming (hard assignment), backward matches for the kept points and the
//! reliability weights derived from the forward/backward distance ratio.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidTransform};
use crate::nnsearch::KdTree;

/// Nearest model point of a transformed data point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardMatch {
    pub target: usize,
    pub distance: f64,
}

/// Nearest data point of a model point, found in the untransformed data frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardMatch {
    pub source: usize,
    pub distance: f64,
}

/// Outcome of the overlap search.
#[derive(Debug, Clone, PartialEq)]
pub struct HardAssignment {
    /// Fraction of data points kept.
    pub xi: f64,
    pub inlier_count: usize,
    /// Trimmed statistic of the chosen prefix.
    pub psi: f64,
    /// Inlier flag per data index.
    pub mask: Vec<bool>,
}

/// Bilateral information of an inlier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bilateral {
    pub source: usize,
    pub distance: f64,
    /// Regularized forward/backward ratio, never below one.
    pub rho: f64,
    /// Soft reliability weight in (0, 1].
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub target: usize,
    pub forward_dist: f64,
    pub inlier: bool,
    /// Populated for inliers only.
    pub bilateral: Option<Bilateral>,
    /// Solver weight `q = ω·p`; exactly zero for outliers.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub entries: Vec<Correspondence>,
    pub hard: HardAssignment,
}

/// Tunables of the hard/soft assignment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssignmentParams {
    pub gamma: f64,
    pub lambda: f64,
    pub xi_min: f64,
    pub delta: f64,
}

pub fn forward_correspondences(
    model_index: &KdTree,
    transformed_data: &[Point3],
) -> Vec<ForwardMatch> {
    transformed_data
        .par_iter()
        .map(|p| {
            let (target, distance) = model_index.nearest_unchecked(p);
            ForwardMatch { target, distance }
        })
        .collect()
}

/// Smallest admissible prefix size `⌈ξ_min·n⌉`, at least one.
pub fn min_prefix(xi_min: f64, n: usize) -> usize {
    // the epsilon keeps e.g. 0.3·10 = 3.0000000000000004 from rounding up to 4
    let h = (xi_min * n as f64 - 1e-9).ceil();
    (h.max(1.0) as usize).min(n)
}

/// Trimmed statistic of a prefix with squared-distance sum `sum_sq`, `h` of
/// `n` points kept.
#[inline]
pub fn trimmed_psi(sum_sq: f64, h: usize, n: usize, lambda: f64) -> f64 {
    let xi = h as f64 / n as f64;
    sum_sq / (h as f64 * xi.powf(1.0 + lambda))
}

/// Chooses the overlap fraction by scanning distance-sorted prefixes.
///
/// Squared distances are sorted ascending (ties by data index) and the
/// trimmed statistic is evaluated incrementally for every prefix size from
/// `⌈ξ_min·N⌉` to `N`. The first minimizing prefix wins. If every distance is
/// zero the full set is returned.
pub fn hard_assignment(forward_dists: &[f64], lambda: f64, xi_min: f64) -> Result<HardAssignment> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if !(xi_min > 0.0 && xi_min <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "xi_min must lie in (0, 1], got {xi_min}"
        )));
    }
    if forward_dists.is_empty() {
        return Err(Error::InvalidInput("no forward distances".into()));
    }
    if let Some(d) = forward_dists
        .iter()
        .find(|d| !(d.is_finite() && **d >= 0.0))
    {
        return Err(Error::InvalidInput(format!("invalid distance {d}")));
    }
    let n = forward_dists.len();
    let mut order: Vec<usize> = (0..n).collect();
    let sq: Vec<f64> = forward_dists.iter().map(|d| d * d).collect();
    order.sort_by(|&a, &b| sq[a].total_cmp(&sq[b]));

    let h_min = min_prefix(xi_min, n);
    let mut sum = 0.0;
    let mut best: Option<(usize, f64)> = None;
    for (k, &i) in order.iter().enumerate() {
        sum += sq[i];
        let h = k + 1;
        if h < h_min {
            continue;
        }
        let psi = trimmed_psi(sum, h, n, lambda);
        if best.is_none_or(|(_, b)| psi < b) {
            best = Some((h, psi));
        }
    }
    let (mut h, mut psi) = best.expect("h_min <= n");
    if sum == 0.0 {
        h = n;
        psi = 0.0;
    }
    let mut mask = vec![false; n];
    for &i in &order[..h] {
        mask[i] = true;
    }
    Ok(HardAssignment {
        xi: h as f64 / n as f64,
        inlier_count: h,
        psi,
        mask,
    })
}

/// Backward matches of `model_points` against the untransformed data.
///
/// Each model point is pulled back through the inverse of `current`, so the
/// data tree never has to be rebuilt. Distances are rigid-invariant and equal
/// those measured against the transformed data.
pub fn backward_correspondences(
    data_index: &KdTree,
    model_points: &[Point3],
    current: &RigidTransform,
) -> Vec<BackwardMatch> {
    let inverse = current.inverse();
    model_points
        .par_iter()
        .map(|m| {
            let (source, distance) = data_index.nearest_unchecked(&inverse.apply(m));
            BackwardMatch { source, distance }
        })
        .collect()
}

/// `(forward + δ) / (backward + δ)`, floored at one.
///
/// The backward search ranges over a set containing the forward source, so
/// the ratio is at least one up to rounding; the floor removes that rounding.
pub fn distance_ratio(forward_dist: f64, backward_dist: f64, delta: f64) -> Result<f64> {
    if !(forward_dist >= 0.0 && backward_dist >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "distances must be non-negative, got {forward_dist} and {backward_dist}"
        )));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "delta must be positive, got {delta}"
        )));
    }
    Ok(((forward_dist + delta) / (backward_dist + delta)).max(1.0))
}

/// Reliability weight `exp(−γ(ρ − 1))`.
pub fn soft_assignment(rho: f64, gamma: f64) -> Result<f64> {
    if !(rho >= 1.0) {
        return Err(Error::InvalidInput(format!(
            "ratio must be at least 1, got {rho}"
        )));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "gamma must be non-negative, got {gamma}"
        )));
    }
    Ok((-gamma * (rho - 1.0)).exp())
}

/// Runs the full assignment step for the current iterate.
///
/// `transformed_data` must be the data cloud already moved by `current`;
/// `data_index` is built over the untransformed data. With `bilateral` false
/// the backward pass is skipped and every inlier gets weight one.
pub fn assign(
    model_index: &KdTree,
    data_index: &KdTree,
    model_points: &[Point3],
    transformed_data: &[Point3],
    current: &RigidTransform,
    params: &AssignmentParams,
    bilateral: bool,
) -> Result<CorrespondenceSet> {
    let forward = forward_correspondences(model_index, transformed_data);
    let dists: Vec<f64> = forward.iter().map(|f| f.distance).collect();
    let hard = hard_assignment(&dists, params.lambda, params.xi_min)?;

    let mut entries: Vec<Correspondence> = forward
        .iter()
        .zip(&hard.mask)
        .map(|(f, &inlier)| Correspondence {
            target: f.target,
            forward_dist: f.distance,
            inlier,
            bilateral: None,
            weight: if inlier { 1.0 } else { 0.0 },
        })
        .collect();

    if bilateral {
        let inliers: Vec<usize> = (0..entries.len()).filter(|&i| hard.mask[i]).collect();
        let targets: Vec<Point3> = inliers
            .iter()
            .map(|&i| model_points[entries[i].target])
            .collect();
        let backward = backward_correspondences(data_index, &targets, current);
        for (&i, b) in inliers.iter().zip(&backward) {
            let e = &mut entries[i];
            let rho = distance_ratio(e.forward_dist, b.distance, params.delta)?;
            let p = soft_assignment(rho, params.gamma)?;
            e.bilateral = Some(Bilateral {
                source: b.source,
                distance: b.distance,
                rho,
                p,
            });
            e.weight = p;
        }
    }
    Ok(CorrespondenceSet { entries, hard })
}
