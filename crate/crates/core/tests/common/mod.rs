#![allow(dead_code)]

use hsaicp::{Point3, PointCloud, RigidTransform};
use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Point3> {
    (0..n)
        .map(|_| {
            Point3::new(
                rng.random_range(-scale..scale),
                rng.random_range(-scale..scale),
                rng.random_range(-scale..scale),
            )
        })
        .collect()
}

pub fn random_cloud(seed: u64, n: usize) -> PointCloud {
    PointCloud::new(random_points(&mut rng(seed), n, 1.0)).unwrap()
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    q.to_rotation_matrix().into_inner()
}

pub fn random_transform(rng: &mut ChaCha8Rng, trans_scale: f64) -> RigidTransform {
    let t = Vector3::new(
        rng.random_range(-trans_scale..trans_scale),
        rng.random_range(-trans_scale..trans_scale),
        rng.random_range(-trans_scale..trans_scale),
    );
    RigidTransform::new(random_rotation(rng), t).unwrap()
}

/// Linear scan on squared distances, strict comparison so the lowest index
/// wins ties.
pub fn brute_nearest(points: &[Point3], q: &Point3) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let (dx, dy, dz) = (p.x - q.x, p.y - q.y, p.z - q.z);
        let d2 = dx * dx + dy * dy + dz * dz;
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    (best.0, best.1.sqrt())
}

pub fn brute_resolution(points: &[Point3]) -> f64 {
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut best = f64::INFINITY;
        for j in 0..n {
            if i != j {
                best = best.min((points[i] - points[j]).norm());
            }
        }
        total += best;
    }
    total / n as f64
}

pub fn rotation_gap(a: &RigidTransform, b: &RigidTransform) -> f64 {
    (a.rotation() - b.rotation()).norm()
}

pub fn translation_gap(a: &RigidTransform, b: &RigidTransform) -> f64 {
    (a.translation() - b.translation()).norm()
}
