//! Rigid point-cloud registration for partially overlapping scans.
//!
//! The main algorithm alternates between
//!
//! 1. matching every moved data point to its nearest model point,
//! 2. keeping the best-matching fraction of the data (the overlap, chosen by a
//!    trimmed statistic over distance-sorted prefixes),
//! 3. weighting each kept match by how well its forward and backward nearest
//!    neighbour distances agree, and
//! 4. solving the weighted rigid alignment in closed form.
//!
//! ICP, fractional trimmed ICP, weighted ICP and correntropy ICP are provided
//! as baselines, together with a synthetic benchmark that generates
//! partially overlapping pairs with known ground truth.
//!
//! ```
//! use hsaicp::{register, PointCloud, RegistrationParams, RigidTransform};
//!
//! let model = hsaicp::bench::synthetic_surface(2000, 7).unwrap();
//! let truth = RigidTransform::from_axis_angle(&nalgebra::Vector3::z(), 0.05);
//! let data = hsaicp::apply_transform(&model, &truth.inverse()).unwrap();
//! let result = register(&data, &model, &RigidTransform::identity(), &RegistrationParams::default()).unwrap();
//! assert!((result.transform.rotation() - truth.rotation()).norm() < 1e-6);
//! ```

// negated comparisons are used on purpose: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod bench;
pub mod error;
pub mod geometry;
pub mod nnsearch;
pub mod pipeline;
pub mod solver;

pub use error::{Error, Result};
pub use geometry::{
    apply_transform, compose, invert_transform, mean_resolution, Point3, PointCloud, RigidTransform,
};
pub use nnsearch::KdTree;
pub use pipeline::{
    cticp, ftricp, hsa_icp, icp, register, wicp, Algorithm, IterationReport, Registration,
    RegistrationParams, RegistrationResult,
};
pub use solver::{weighted_rigid_solve, weighted_sse, WeightedPairSet};
