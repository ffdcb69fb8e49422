//! Points, clouds and rigid transforms.

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnsearch::KdTree;

pub type Point3 = nalgebra::Point3<f64>;

/// Per-entry tolerance on `RᵀR = I` and `det R = 1`.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// An ordered, non-empty list of finite 3-D points.
///
/// Point indices are stable: every operation that returns a cloud keeps the
/// input order, so an index `i` always refers to the same sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(index) = points
            .iter()
            .position(|p| !p.coords.iter().all(|c| c.is_finite()))
        {
            return Err(Error::NonFinitePoint { index });
        }
        Ok(Self { points })
    }

    pub fn from_xyz(coords: &[[f64; 3]]) -> Result<Self> {
        Self::new(
            coords
                .iter()
                .map(|c| Point3::new(c[0], c[1], c[2]))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for the `len`/`is_empty` pairing.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3> {
        self.points.iter()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    /// Cloud made of the points at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.points[i]).collect())
    }
}

impl std::ops::Index<usize> for PointCloud {
    type Output = Point3;

    fn index(&self, i: usize) -> &Point3 {
        &self.points[i]
    }
}

/// A proper rigid motion `p ↦ R·p + t`.
///
/// Serializes as `{"rotation": [9 reals, row-major], "translation": [3 reals]}`
/// and re-validates the rotation on deserialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "TransformRecord", try_from = "TransformRecord")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates that `rotation` is orthonormal with determinant +1 and that
    /// every entry is finite.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidInput("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: rotation.into_inner(),
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation by `angle` radians about `axis`, no translation.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(*axis);
        Self::from_rotation(Rotation3::from_axis_angle(&axis, angle), Vector3::zeros())
    }

    /// Parses a row-major homogeneous 4×4 matrix whose last row is `0 0 0 1`.
    pub fn from_homogeneous(m: &Matrix4<f64>) -> Result<Self> {
        let last = m.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return Err(Error::InvalidInput(
                "last row of a rigid 4x4 matrix must be 0 0 0 1".into(),
            ));
        }
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Row-major rotation entries.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }

    pub fn from_row_major(rotation: &[f64; 9], translation: &[f64; 3]) -> Result<Self> {
        Self::new(
            Matrix3::from_row_slice(rotation),
            Vector3::from_column_slice(translation),
        )
    }

    #[inline]
    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// `rotation' = Rᵀ`, `translation' = −Rᵀ·t`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Group composition: the returned transform applies `other` first, then
    /// `self`.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Offsets a ground-truth transform by a perturbation as
    /// `(R_p·R_g, t_p + t_g)`.
    ///
    /// This is not group composition: the translations add without the
    /// perturbation rotating the ground-truth translation. Benchmarks use it
    /// to derive initial guesses near a known pose.
    pub fn perturb(&self, perturbation: &RigidTransform) -> Self {
        Self {
            rotation: perturbation.rotation * self.rotation,
            translation: perturbation.translation + self.translation,
        }
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    pub fn check(&self) -> Result<()> {
        check_rotation(&self.rotation)
    }
}

#[derive(Serialize, Deserialize)]
struct TransformRecord {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl From<RigidTransform> for TransformRecord {
    fn from(t: RigidTransform) -> Self {
        Self {
            rotation: t.rotation_row_major(),
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TryFrom<TransformRecord> for RigidTransform {
    type Error = Error;

    fn try_from(r: TransformRecord) -> Result<Self> {
        RigidTransform::from_row_major(&r.rotation, &r.translation)
    }
}

fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    if !r.iter().all(|c| c.is_finite()) {
        return Err(Error::InvalidRotation("non-finite entry".into()));
    }
    let err = (r.transpose() * r - Matrix3::identity()).amax();
    if err > ROTATION_TOLERANCE {
        return Err(Error::InvalidRotation(format!(
            "RᵀR deviates from identity by {err:e}"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(Error::InvalidRotation(format!("determinant is {det}")));
    }
    Ok(())
}

/// Applies `transform` to every point, preserving order.
pub fn apply_transform(cloud: &PointCloud, transform: &RigidTransform) -> Result<PointCloud> {
    transform.check()?;
    Ok(PointCloud {
        points: cloud.iter().map(|p| transform.apply(p)).collect(),
    })
}

pub fn invert_transform(transform: &RigidTransform) -> Result<RigidTransform> {
    transform.check()?;
    Ok(transform.inverse())
}

/// `p ↦ a(b(p))`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> Result<RigidTransform> {
    a.check()?;
    b.check()?;
    Ok(a.compose(b))
}

/// Mean distance from each point to its nearest other point in the cloud.
///
/// Duplicate points contribute a distance of zero.
pub fn mean_resolution(cloud: &PointCloud) -> Result<f64> {
    if cloud.len() < 2 {
        return Err(Error::InvalidInput(
            "point resolution needs at least two points".into(),
        ));
    }
    let tree = KdTree::build(cloud);
    let total: f64 = (0..cloud.len())
        .map(|i| {
            tree.nearest_excluding(&cloud[i], i)
                .expect("cloud has a second point")
                .1
        })
        .sum();
    Ok(total / cloud.len() as f64)
}
