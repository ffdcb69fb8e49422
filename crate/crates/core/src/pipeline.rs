//! Iterative registration: the hard/soft assignment method and the ICP,
//! fractional trimmed ICP, weighted ICP and correntropy ICP baselines.
//!
//! All algorithms share one loop: match the moved data against the model,
//! turn the matches into per-point weights, solve the weighted rigid problem,
//! and stop when the weighted mean squared residual and the translation step
//! have both settled.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assignment::{self, AssignmentParams, CorrespondenceSet, ForwardMatch};
use crate::error::{Error, Result};
use crate::geometry::{mean_resolution, Point3, PointCloud, RigidTransform};
use crate::nnsearch::KdTree;
use crate::solver::{weighted_rigid_solve, weighted_sse, WeightedPairSet};

/// Weighted MSE below `(MSE_FLOOR_FACTOR·d)²` counts as settled.
pub const MSE_FLOOR_FACTOR: f64 = 1e-9;

/// wICP rejects pairs beyond this multiple of the median match distance.
pub const WICP_MEDIAN_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Hard (overlap) plus soft (bidirectional reliability) assignment.
    Hsa,
    Icp,
    /// Fractional trimmed ICP: hard assignment only.
    FtrIcp,
    /// Linear distance weighting with median-based rejection.
    WIcp,
    /// Fixed-bandwidth Gaussian (correntropy) weighting.
    CtIcp,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Hsa,
        Algorithm::Icp,
        Algorithm::FtrIcp,
        Algorithm::WIcp,
        Algorithm::CtIcp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Hsa => "hsa",
            Algorithm::Icp => "icp",
            Algorithm::FtrIcp => "ftricp",
            Algorithm::WIcp => "wicp",
            Algorithm::CtIcp => "cticp",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown algorithm '{s}'")))
    }
}

/// Tunables shared by every algorithm. Length-valued options left at `None`
/// are derived from the model's mean point resolution `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationParams {
    pub algorithm: Algorithm,
    /// Soft assignment sharpness.
    pub gamma: f64,
    /// Overlap penalty exponent of the trimmed statistic.
    pub lambda: f64,
    pub xi_min: f64,
    /// Ratio regularizer; `None` means `1e-6·d`.
    pub delta: Option<f64>,
    pub max_iterations: usize,
    /// Relative change of the weighted MSE below which the objective has settled.
    pub rel_tol: f64,
    /// Translation step floor; `None` means `1e-6·d`.
    pub trans_tol: Option<f64>,
    /// CtICP kernel width; `None` means `2·d`.
    pub cticp_sigma: Option<f64>,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Hsa,
            gamma: 2.0,
            lambda: 2.0,
            xi_min: 0.25,
            delta: None,
            max_iterations: 100,
            rel_tol: 1e-8,
            trans_tol: None,
            cticp_sigma: None,
        }
    }
}

impl RegistrationParams {
    pub fn with_algorithm(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad =
            |what: &str, v: f64| Err(Error::InvalidInput(format!("{what} out of range: {v}")));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma", self.gamma);
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda", self.lambda);
        }
        if !(self.xi_min > 0.0 && self.xi_min <= 1.0) {
            return bad("xi_min", self.xi_min);
        }
        if !(self.rel_tol >= 0.0) {
            return bad("rel_tol", self.rel_tol);
        }
        for (what, v) in [
            ("delta", self.delta),
            ("trans_tol", self.trans_tol),
            ("cticp_sigma", self.cticp_sigma),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(what, v);
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub algorithm: Algorithm,
    /// Final estimate mapping the data cloud onto the model cloud.
    pub transform: RigidTransform,
    pub iterations: usize,
    pub converged: bool,
    pub xi_final: f64,
    /// Weighted MSE after each solver update.
    pub objective_trace: Vec<f64>,
    pub inlier_count_trace: Vec<usize>,
    pub xi_trace: Vec<f64>,
    /// Estimate after each solver update.
    pub transform_trace: Vec<RigidTransform>,
    pub runtime_secs: f64,
    /// Why the run stopped early, when it did.
    pub failure: Option<String>,
}

impl RegistrationResult {
    /// Equality ignoring wall-clock runtime.
    pub fn same_outcome(&self, other: &Self) -> bool {
        Self {
            runtime_secs: 0.0,
            ..self.clone()
        } == Self {
            runtime_secs: 0.0,
            ..other.clone()
        }
    }
}

/// Everything that happened in one iteration, handed to observers.
#[derive(Debug)]
pub struct IterationReport<'a> {
    pub iteration: usize,
    pub before: &'a RigidTransform,
    pub after: &'a RigidTransform,
    pub forward: &'a [ForwardMatch],
    /// Present for the trimmed algorithms.
    pub correspondences: Option<&'a CorrespondenceSet>,
    /// Weight per data index.
    pub weights: &'a [f64],
    pub pairs: &'a WeightedPairSet,
    pub sse_before: f64,
    pub sse_after: f64,
}

/// A prepared registration problem: both k-d trees are built once and
/// reused for every run.
pub struct Registration<'a> {
    data: &'a PointCloud,
    model: &'a PointCloud,
    model_index: KdTree,
    data_index: KdTree,
    resolution: f64,
}

impl<'a> Registration<'a> {
    pub fn new(data: &'a PointCloud, model: &'a PointCloud) -> Result<Self> {
        if data.len() < 3 || model.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "registration needs at least 3 points per cloud (data {}, model {})",
                data.len(),
                model.len()
            )));
        }
        let resolution = mean_resolution(model)?;
        Ok(Self {
            data,
            model,
            model_index: KdTree::build(model),
            data_index: KdTree::build(data),
            resolution,
        })
    }

    /// Mean point resolution of the model.
    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn run(
        &self,
        init: &RigidTransform,
        params: &RegistrationParams,
    ) -> Result<RegistrationResult> {
        self.run_observed(init, params, |_| {})
    }

    pub fn run_observed<F>(
        &self,
        init: &RigidTransform,
        params: &RegistrationParams,
        mut observer: F,
    ) -> Result<RegistrationResult>
    where
        F: FnMut(&IterationReport<'_>),
    {
        params.validate()?;
        init.check()?;
        let started = Instant::now();
        let d = self.resolution;
        // a cloud made only of duplicates has d = 0; keep the derived
        // quantities positive
        let scale = if d > 0.0 { d } else { 1.0 };
        let assignment = AssignmentParams {
            gamma: params.gamma,
            lambda: params.lambda,
            xi_min: params.xi_min,
            delta: params.delta.unwrap_or(1e-6 * scale),
        };
        let trans_tol = params.trans_tol.unwrap_or(1e-6 * scale);
        let sigma = params.cticp_sigma.unwrap_or(2.0 * scale);
        // MSE values below this are rounding noise; their relative change means nothing
        let mse_floor = (MSE_FLOOR_FACTOR * scale).powi(2);

        let mut result = RegistrationResult {
            algorithm: params.algorithm,
            transform: *init,
            iterations: 0,
            converged: false,
            xi_final: 1.0,
            objective_trace: Vec::new(),
            inlier_count_trace: Vec::new(),
            xi_trace: Vec::new(),
            transform_trace: Vec::new(),
            runtime_secs: 0.0,
            failure: None,
        };
        let mut prev_mse: Option<f64> = None;

        for iteration in 0..params.max_iterations {
            let current = result.transform;
            let moved: Vec<Point3> = self.data.iter().map(|p| current.apply(p)).collect();

            let (forward, correspondences, weights, xi) = match params.algorithm {
                Algorithm::Hsa | Algorithm::FtrIcp => {
                    let set = assignment::assign(
                        &self.model_index,
                        &self.data_index,
                        self.model.points(),
                        &moved,
                        &current,
                        &assignment,
                        params.algorithm == Algorithm::Hsa,
                    )?;
                    let forward: Vec<ForwardMatch> = set
                        .entries
                        .iter()
                        .map(|e| ForwardMatch {
                            target: e.target,
                            distance: e.forward_dist,
                        })
                        .collect();
                    let weights = set.entries.iter().map(|e| e.weight).collect();
                    let xi = set.hard.xi;
                    (forward, Some(set), weights, xi)
                }
                Algorithm::Icp => {
                    let forward = assignment::forward_correspondences(&self.model_index, &moved);
                    let weights = vec![1.0; forward.len()];
                    (forward, None, weights, 1.0)
                }
                Algorithm::WIcp => {
                    let forward = assignment::forward_correspondences(&self.model_index, &moved);
                    let weights = linear_weights(&forward);
                    let kept = weights.iter().filter(|&&w| w > 0.0).count();
                    let xi = kept as f64 / weights.len() as f64;
                    (forward, None, weights, xi)
                }
                Algorithm::CtIcp => {
                    let forward = assignment::forward_correspondences(&self.model_index, &moved);
                    let weights = gaussian_weights(&forward, sigma);
                    (forward, None, weights, 1.0)
                }
            };

            let pairs = self.pairs(&forward, &weights)?;
            let sse_before = weighted_sse(&pairs, &current);
            let next = match weighted_rigid_solve(&pairs) {
                Ok(t) => t,
                Err(e) => {
                    result.failure = Some(e.to_string());
                    break;
                }
            };
            let sse_after = weighted_sse(&pairs, &next);
            observer(&IterationReport {
                iteration,
                before: &current,
                after: &next,
                forward: &forward,
                correspondences: correspondences.as_ref(),
                weights: &weights,
                pairs: &pairs,
                sse_before,
                sse_after,
            });

            let mse = sse_after / pairs.total_weight();
            let step = (next.translation() - current.translation()).norm();
            result.transform = next;
            result.iterations = iteration + 1;
            result.xi_final = xi;
            result.objective_trace.push(mse);
            result.inlier_count_trace.push(pairs.len());
            result.xi_trace.push(xi);
            result.transform_trace.push(next);

            if let Some(prev) = prev_mse {
                let settled =
                    relative_change(prev, mse) < params.rel_tol || prev.max(mse) <= mse_floor;
                if settled && step < trans_tol {
                    result.converged = true;
                    break;
                }
            }
            prev_mse = Some(mse);
        }
        result.runtime_secs = started.elapsed().as_secs_f64();
        Ok(result)
    }

    // positive-weight pairs in data order, source side untransformed
    fn pairs(&self, forward: &[ForwardMatch], weights: &[f64]) -> Result<WeightedPairSet> {
        let mut source = Vec::new();
        let mut target = Vec::new();
        let mut w = Vec::new();
        for (i, (f, &q)) in forward.iter().zip(weights).enumerate() {
            if q > 0.0 {
                source.push(self.data[i]);
                target.push(self.model[f.target]);
                w.push(q);
            }
        }
        if w.is_empty() {
            return Err(Error::NoInliers);
        }
        WeightedPairSet::new(source, target, w)
    }
}

fn relative_change(prev: f64, current: f64) -> f64 {
    if prev == current {
        0.0
    } else if prev == 0.0 {
        f64::INFINITY
    } else {
        (prev - current).abs() / prev
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// `max(0, 1 − dist/τ)` with `τ = 3·median(dist)`. A zero median keeps only
/// the exact matches.
pub fn linear_weights(forward: &[ForwardMatch]) -> Vec<f64> {
    let mut dists: Vec<f64> = forward.iter().map(|f| f.distance).collect();
    let tau = WICP_MEDIAN_FACTOR * median(&mut dists);
    forward
        .iter()
        .map(|f| {
            if tau > 0.0 {
                (1.0 - f.distance / tau).max(0.0)
            } else if f.distance == 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// `exp(−dist²/(2σ²))`.
pub fn gaussian_weights(forward: &[ForwardMatch], sigma: f64) -> Vec<f64> {
    let denom = 2.0 * sigma * sigma;
    forward
        .iter()
        .map(|f| (-(f.distance * f.distance) / denom).exp())
        .collect()
}

/// Runs the algorithm selected in `params`.
pub fn register(
    data: &PointCloud,
    model: &PointCloud,
    init: &RigidTransform,
    params: &RegistrationParams,
) -> Result<RegistrationResult> {
    Registration::new(data, model)?.run(init, params)
}

fn register_as(
    algorithm: Algorithm,
    data: &PointCloud,
    model: &PointCloud,
    init: &RigidTransform,
    params: &RegistrationParams,
) -> Result<RegistrationResult> {
    register(
        data,
        model,
        init,
        &RegistrationParams {
            algorithm,
            ..*params
        },
    )
}

/// Hard/soft assignment ICP; `params.algorithm` is ignored.
pub fn hsa_icp(
    data: &PointCloud,
    model: &PointCloud,
    init: &RigidTransform,
    params: &RegistrationParams,
) -> Result<RegistrationResult> {
    register_as(Algorithm::Hsa, data, model, init, params)
}

pub fn icp(
    data: &PointCloud,
    model: &PointCloud,
    init: &RigidTransform,
    params: &RegistrationParams,
) -> Result<RegistrationResult> {
    register_as(Algorithm::Icp, data, model, init, params)
}

pub fn ftricp(
    data: &PointCloud,
    model: &PointCloud,
    init: &RigidTransform,
    params: &RegistrationParams,
) -> Result<RegistrationResult> {
    register_as(Algorithm::FtrIcp, data, model, init, params)
}

pub fn wicp(
    data: &PointCloud,
    model: &PointCloud,
    init: &RigidTransform,
    params: &RegistrationParams,
) -> Result<RegistrationResult> {
    register_as(Algorithm::WIcp, data, model, init, params)
}

pub fn cticp(
    data: &PointCloud,
    model: &PointCloud,
    init: &RigidTransform,
    params: &RegistrationParams,
) -> Result<RegistrationResult> {
    register_as(Algorithm::CtIcp, data, model, init, params)
}
