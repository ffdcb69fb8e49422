//! Closed-form weighted rigid alignment.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidTransform};

/// Ratio below which the second singular value of the cross-covariance is
/// treated as zero (collinear or single-point support).
const RANK_TOLERANCE: f64 = 1e-12;

/// Source/target pairs with non-negative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPairSet {
    source: Vec<Point3>,
    target: Vec<Point3>,
    weights: Vec<f64>,
}

impl WeightedPairSet {
    pub fn new(source: Vec<Point3>, target: Vec<Point3>, weights: Vec<f64>) -> Result<Self> {
        if source.len() != target.len() || source.len() != weights.len() {
            return Err(Error::InvalidInput(format!(
                "pair set lengths differ: {} sources, {} targets, {} weights",
                source.len(),
                target.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidInput(format!("invalid weight {w}")));
        }
        let finite = |p: &Point3| p.coords.iter().all(|c| c.is_finite());
        if !source.iter().chain(&target).all(finite) {
            return Err(Error::InvalidInput("non-finite pair coordinate".into()));
        }
        Ok(Self {
            source,
            target,
            weights,
        })
    }

    pub fn uniform(source: Vec<Point3>, target: Vec<Point3>) -> Result<Self> {
        let n = source.len();
        Self::new(source, target, vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn source(&self) -> &[Point3] {
        &self.source
    }

    pub fn target(&self) -> &[Point3] {
        &self.target
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn triples(&self) -> impl Iterator<Item = (&Point3, &Point3, f64)> {
        self.source
            .iter()
            .zip(&self.target)
            .zip(&self.weights)
            .map(|((s, t), &w)| (s, t, w))
    }
}

/// Minimizes `Σ qᵢ‖R·sᵢ + t − mᵢ‖²` over proper rigid motions.
///
/// Both sides are centred on their weighted centroids, the weighted
/// cross-covariance `H = Σ qᵢ·xᵢ·yᵢᵀ` is decomposed as `U·Λ·Vᵀ` and the
/// rotation is `V·diag(1, 1, det(V·Uᵀ))·Uᵀ`; the translation then maps the
/// source centroid onto the target centroid.
pub fn weighted_rigid_solve(pairs: &WeightedPairSet) -> Result<RigidTransform> {
    let total = pairs.total_weight();
    if !(total > 0.0) {
        return Err(Error::NoInliers);
    }
    let support = pairs.weights.iter().filter(|&&w| w > 0.0).count();
    if support < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "{support} weighted pairs, at least 3 required"
        )));
    }

    let mut src_sum = Vector3::zeros();
    let mut dst_sum = Vector3::zeros();
    for (s, t, w) in pairs.triples() {
        src_sum += w * s.coords;
        dst_sum += w * t.coords;
    }
    let src_mean = src_sum / total;
    let dst_mean = dst_sum / total;

    let mut h = Matrix3::zeros();
    for (s, t, w) in pairs.triples() {
        if w == 0.0 {
            continue;
        }
        let x = s.coords - src_mean;
        let y = t.coords - dst_mean;
        h += w * x * y.transpose();
    }

    let svd = h.svd(true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= RANK_TOLERANCE * sv[0] {
        return Err(Error::DegenerateGeometry(format!(
            "cross-covariance is rank deficient (singular values {:e}, {:e}, {:e})",
            sv[0], sv[1], sv[2]
        )));
    }
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested Vᵀ").transpose();
    let reflect = (v * u.transpose()).determinant().signum();
    let guard = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, reflect));
    let rotation = v * guard * u.transpose();
    let translation = dst_mean - rotation * src_mean;
    RigidTransform::new(rotation, translation)
}

/// `Σ qᵢ‖R·sᵢ + t − mᵢ‖²`.
pub fn weighted_sse(pairs: &WeightedPairSet, transform: &RigidTransform) -> f64 {
    pairs
        .triples()
        .filter(|(_, _, w)| *w != 0.0)
        .map(|(s, t, w)| w * (transform.apply(s) - t).norm_squared())
        .sum()
}
