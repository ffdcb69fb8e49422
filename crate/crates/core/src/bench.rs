//! Synthetic evaluation: partially overlapping scan pairs with known ground
//! truth, random initial perturbations, error metrics and Monte-Carlo
//! campaigns.
//!
//! Every random draw comes from a ChaCha8 stream seeded from a `u64`. Trial
//! seeds are derived from the campaign seed with [`sub_seed`], so a campaign
//! is reproducible bit for bit whatever the thread scheduling.

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mean_resolution, Point3, PointCloud, RigidTransform};
use crate::pipeline::{Algorithm, IterationReport, Registration, RegistrationParams};

/// Fraction of points kept by the random deletion.
pub const KEEP_FRACTION: f64 = 0.95;
/// Largest cut, as a fraction of the source size.
pub const MAX_CUT_FRACTION: f64 = 0.4;
pub const SUCCESS_ROTATION_TOL: f64 = 0.01;

/// Overlap of a generated pair: `0.95·(0.95N − 2n) / (0.95N − n)`.
pub fn overlap_ratio(n_points: usize, n_cut: usize) -> f64 {
    let kept = KEEP_FRACTION * n_points as f64;
    let n = n_cut as f64;
    KEEP_FRACTION * (kept - 2.0 * n) / (kept - n)
}

/// Cut size whose [`overlap_ratio`] is closest to `xi`.
pub fn n_cut_for_overlap(n_points: usize, xi: f64) -> Result<usize> {
    if !(xi > 0.0 && xi <= KEEP_FRACTION) {
        return Err(Error::InvalidInput(format!(
            "target overlap {xi} outside (0, {KEEP_FRACTION}]"
        )));
    }
    let kept = KEEP_FRACTION * n_points as f64;
    let exact = kept * (KEEP_FRACTION - xi) / (2.0 * KEEP_FRACTION - xi);
    let lo = exact.floor().max(0.0) as usize;
    let n = [lo, lo + 1]
        .into_iter()
        .min_by(|&a, &b| {
            (overlap_ratio(n_points, a) - xi)
                .abs()
                .total_cmp(&(overlap_ratio(n_points, b) - xi).abs())
        })
        .unwrap_or(lo);
    if n as f64 >= MAX_CUT_FRACTION * n_points as f64 {
        return Err(Error::InvalidInput(format!(
            "overlap {xi} needs a cut of {n} points, limit is {MAX_CUT_FRACTION}·N"
        )));
    }
    Ok(n)
}

/// Standard deviation of the noise added to the data shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Noise {
    Absolute(f64),
    /// Multiple of the model's mean point resolution.
    Resolution(f64),
}

impl Default for Noise {
    fn default() -> Self {
        Noise::Resolution(0.5)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPair {
    pub data: PointCloud,
    pub model: PointCloud,
    /// Motion taking the data shape onto the model shape.
    pub ground_truth: RigidTransform,
    pub xi_true: f64,
    /// Mean point resolution of the model.
    pub d: f64,
    pub noise_sigma: f64,
    pub n_cut: usize,
    pub seed: u64,
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
    loop {
        let q = nalgebra::Quaternion::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        if q.norm() > 1e-6 {
            return UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        }
    }
}

#[inline]
fn symmetric(rng: &mut ChaCha8Rng, range: f64) -> f64 {
    (2.0 * rng.random::<f64>() - 1.0) * range
}

/// Builds a data/model pair from one source cloud.
///
/// Each shape keeps an independent random 95% of the source. The data shape
/// loses the `n_cut` points that project furthest along a random axis and
/// receives isotropic Gaussian noise; the model shape is moved by a random
/// rigid motion and loses the `n_cut` points at the opposite end of the same
/// axis.
pub fn generate_pair(
    source: &PointCloud,
    n_cut: usize,
    noise: Noise,
    seed: u64,
) -> Result<SimulatedPair> {
    let n = source.len();
    if n_cut as f64 >= MAX_CUT_FRACTION * n as f64 {
        return Err(Error::InvalidInput(format!(
            "cut of {n_cut} points too large for a {n}-point source"
        )));
    }
    match noise {
        Noise::Absolute(s) | Noise::Resolution(s) if !(s >= 0.0 && s.is_finite()) => {
            return Err(Error::InvalidInput(format!("invalid noise level {s}")));
        }
        _ => {}
    }
    let keep = (KEEP_FRACTION * n as f64).round() as usize;
    if keep < n_cut + 3 {
        return Err(Error::InvalidInput(format!(
            "source of {n} points is too small"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data_idx = index::sample(&mut rng, n, keep).into_vec();
    let mut model_idx = index::sample(&mut rng, n, keep).into_vec();
    data_idx.sort_unstable();
    model_idx.sort_unstable();

    let axis = random_unit(&mut rng);
    let proj: Vec<f64> = source.iter().map(|p| p.coords.dot(&axis)).collect();
    let by_proj = |idx: &[usize]| {
        let mut v = idx.to_vec();
        v.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]).then(a.cmp(&b)));
        v
    };
    let data_sorted = by_proj(&data_idx);
    let model_sorted = by_proj(&model_idx);
    // data loses its top end, model its bottom end
    let data_cut = &data_sorted[keep - n_cut..];
    let model_cut = &model_sorted[..n_cut];
    if n_cut > 0 && proj[data_cut[0]] <= proj[model_cut[n_cut - 1]] {
        return Err(Error::InvalidInput(format!(
            "cut regions of {n_cut} points intersect"
        )));
    }
    let mut data_keep: Vec<usize> = data_sorted[..keep - n_cut].to_vec();
    let mut model_keep: Vec<usize> = model_sorted[n_cut..].to_vec();
    data_keep.sort_unstable();
    model_keep.sort_unstable();

    let rotation = random_rotation(&mut rng);
    let (centroid, radius) = extent(source);
    let translation = Vector3::new(
        symmetric(&mut rng, radius),
        symmetric(&mut rng, radius),
        symmetric(&mut rng, radius),
    ) - rotation * centroid
        + centroid;
    let ground_truth = RigidTransform::from_rotation(rotation, translation);

    let model = PointCloud::new(
        model_keep
            .iter()
            .map(|&i| ground_truth.apply(&source[i]))
            .collect(),
    )?;
    let d = mean_resolution(&model)?;
    let noise_sigma = match noise {
        Noise::Absolute(s) => s,
        Noise::Resolution(k) => k * d,
    };
    let data_points: Vec<Point3> = data_keep
        .iter()
        .map(|&i| {
            let e: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            source[i] + noise_sigma * Vector3::from(e)
        })
        .collect();

    Ok(SimulatedPair {
        data: PointCloud::new(data_points)?,
        model,
        ground_truth,
        xi_true: overlap_ratio(n, n_cut),
        d,
        noise_sigma,
        n_cut,
        seed,
    })
}

fn extent(cloud: &PointCloud) -> (Vector3<f64>, f64) {
    let c = cloud.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / cloud.len() as f64;
    let r = cloud
        .iter()
        .map(|p| (p.coords - c).norm())
        .fold(0.0, f64::max);
    (c, r)
}

/// Closed, asymmetric test surface with seeded random sampling.
///
/// A sphere is deformed by seeded Gaussian bumps and dents and stretched
/// anisotropically, so no rigid motion other than the identity maps the
/// surface onto itself. Sample directions are drawn uniformly at random
/// rather than on a lattice: a regular lattice is nearly invariant under
/// small rotations and gives nearest-neighbour matching spurious minima.
/// The output depends only on `n` and `seed`.
pub fn synthetic_surface(n: usize, seed: u64) -> Result<PointCloud> {
    if n < 3 {
        return Err(Error::InvalidInput(
            "surface needs at least 3 samples".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps: Vec<(Vector3<f64>, f64, f64)> = (0..SURFACE_BUMPS)
        .map(|_| {
            let c = random_unit(&mut rng);
            let amp = rng.random_range(-0.12..0.25);
            let width = rng.random_range(0.15..0.45);
            (c, amp, width)
        })
        .collect();
    let stretch = Vector3::new(1.3, 1.0, 0.8);
    let points = (0..n)
        .map(|_| {
            let u = random_unit(&mut rng);
            let radius = 1.0
                + bumps
                    .iter()
                    .map(|(c, a, w)| a * (-(1.0 - u.dot(c)) / (w * w)).exp())
                    .sum::<f64>();
            Point3::from((radius * u).component_mul(&stretch))
        })
        .collect();
    PointCloud::new(points)
}

const SURFACE_BUMPS: usize = 30;

/// Random offset with Euler angles uniform in `±angle_range_deg` and
/// translation components uniform in `±trans_range·d`.
pub fn random_perturbation(
    angle_range_deg: f64,
    trans_range: f64,
    d: f64,
    seed: u64,
) -> Result<RigidTransform> {
    if !(angle_range_deg >= 0.0 && trans_range >= 0.0 && d >= 0.0) {
        return Err(Error::InvalidInput(
            "perturbation ranges must be non-negative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = angle_range_deg.to_radians();
    let (roll, pitch, yaw) = (
        symmetric(&mut rng, a),
        symmetric(&mut rng, a),
        symmetric(&mut rng, a),
    );
    let t = trans_range * d;
    let translation = Vector3::new(
        symmetric(&mut rng, t),
        symmetric(&mut rng, t),
        symmetric(&mut rng, t),
    );
    Ok(RigidTransform::from_rotation(
        Rotation3::from_euler_angles(roll, pitch, yaw),
        translation,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeErrors {
    /// Frobenius norm of the rotation difference.
    pub eps_r: f64,
    pub eps_t_raw: f64,
    /// `eps_t_raw / d`.
    pub eps_t_norm: f64,
}

impl RelativeErrors {
    /// `ε_R ≤ 0.01` and raw `ε_t ≤ d`.
    pub fn success(&self, d: f64) -> bool {
        self.eps_r <= SUCCESS_ROTATION_TOL && self.eps_t_raw <= d
    }
}

pub fn relative_errors(
    estimated: &RigidTransform,
    truth: &RigidTransform,
    d: f64,
) -> Result<RelativeErrors> {
    if !(d > 0.0) {
        return Err(Error::InvalidInput(format!(
            "resolution must be positive, got {d}"
        )));
    }
    let eps_r = (estimated.rotation() - truth.rotation()).norm();
    let eps_t_raw = (estimated.translation() - truth.translation()).norm();
    Ok(RelativeErrors {
        eps_r,
        eps_t_raw,
        eps_t_norm: eps_t_raw / d,
    })
}

/// SplitMix64 mix of a base seed with two stream labels.
pub fn sub_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F).rotate_left(31);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    /// Target overlaps; each becomes the nearest achievable cut size.
    pub overlaps: Vec<f64>,
    pub trials: usize,
    pub algorithms: Vec<Algorithm>,
    /// Shared tunables; the algorithm field is overridden per run.
    pub params: RegistrationParams,
    pub noise: Noise,
    pub angle_range_deg: f64,
    /// In units of the model resolution.
    pub trans_range: f64,
    pub seed: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            overlaps: vec![0.8],
            trials: 20,
            algorithms: Algorithm::ALL.to_vec(),
            params: RegistrationParams::default(),
            noise: Noise::default(),
            angle_range_deg: 5.0,
            trans_range: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub xi_target: f64,
    pub xi_true: f64,
    pub n_cut: usize,
    pub trial: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub d: f64,
    pub eps_r: f64,
    pub eps_t_raw: f64,
    pub eps_t_norm: f64,
    pub success: bool,
    pub runtime_secs: f64,
    pub iterations: usize,
    pub converged: bool,
    pub xi_estimated: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub xi_target: f64,
    pub xi_true: f64,
    pub n_cut: usize,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_eps_r: f64,
    pub median_eps_r: f64,
    pub mean_eps_t: f64,
    pub median_eps_t: f64,
    pub mean_runtime_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub config: CampaignConfig,
    pub source_points: usize,
    pub summaries: Vec<AlgorithmSummary>,
    pub trials: Vec<TrialReport>,
}

pub const CSV_HEADER: [&str; 15] = [
    "xi_target",
    "xi_true",
    "n_cut",
    "trial",
    "seed",
    "algorithm",
    "d",
    "eps_r",
    "eps_t_raw",
    "eps_t_norm",
    "success",
    "iterations",
    "converged",
    "xi_estimated",
    "failure",
];

impl CampaignReport {
    pub fn summary(&self, algorithm: Algorithm, xi_target: f64) -> Option<&AlgorithmSummary> {
        self.summaries
            .iter()
            .find(|s| s.algorithm == algorithm && s.xi_target == xi_target)
    }

    /// One row per trial and algorithm. Wall-clock fields are left out so
    /// that the output depends on the seed alone.
    pub fn to_csv(&self) -> Result<String> {
        let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for t in &self.trials {
            w.write_record([
                t.xi_target.to_string(),
                t.xi_true.to_string(),
                t.n_cut.to_string(),
                t.trial.to_string(),
                t.seed.to_string(),
                t.algorithm.to_string(),
                t.d.to_string(),
                t.eps_r.to_string(),
                t.eps_t_raw.to_string(),
                t.eps_t_norm.to_string(),
                t.success.to_string(),
                t.iterations.to_string(),
                t.converged.to_string(),
                t.xi_estimated.to_string(),
                t.failure.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Copy with every runtime zeroed.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.trials.iter_mut().for_each(|t| t.runtime_secs = 0.0);
        r.summaries
            .iter_mut()
            .for_each(|s| s.mean_runtime_secs = 0.0);
        r
    }
}

/// Runs every algorithm on `trials` freshly generated pairs per overlap.
pub fn run_monte_carlo(source: &PointCloud, config: &CampaignConfig) -> Result<CampaignReport> {
    run_monte_carlo_observed(source, config, &|_, _| {})
}

/// [`run_monte_carlo`] with a callback invoked on every iteration of every
/// registration. Trials run in parallel, so the callback must be `Sync`.
pub fn run_monte_carlo_observed(
    source: &PointCloud,
    config: &CampaignConfig,
    observer: &(dyn Fn(Algorithm, &IterationReport<'_>) + Sync),
) -> Result<CampaignReport> {
    if config.trials == 0 {
        return Err(Error::InvalidInput(
            "a campaign needs at least one trial".into(),
        ));
    }
    if config.algorithms.is_empty() {
        return Err(Error::InvalidInput("no algorithms selected".into()));
    }
    config.params.validate()?;
    let cuts = config
        .overlaps
        .iter()
        .map(|&xi| n_cut_for_overlap(source.len(), xi))
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..cuts.len())
        .flat_map(|s| (0..config.trials).map(move |k| (s, k)))
        .collect();
    let per_job = jobs
        .par_iter()
        .map(|&(s, k)| run_trial(source, config, config.overlaps[s], cuts[s], s, k, observer))
        .collect::<Result<Vec<_>>>()?;
    let trials: Vec<TrialReport> = per_job.into_iter().flatten().collect();

    let mut summaries = Vec::new();
    for (s, &xi_target) in config.overlaps.iter().enumerate() {
        for &algorithm in &config.algorithms {
            let rows: Vec<&TrialReport> = trials
                .iter()
                .filter(|t| t.algorithm == algorithm && t.xi_target == xi_target)
                .collect();
            summaries.push(summarize(
                algorithm,
                xi_target,
                source.len(),
                cuts[s],
                &rows,
            ));
        }
    }
    Ok(CampaignReport {
        config: config.clone(),
        source_points: source.len(),
        summaries,
        trials,
    })
}

fn run_trial(
    source: &PointCloud,
    config: &CampaignConfig,
    xi_target: f64,
    n_cut: usize,
    setting: usize,
    trial: usize,
    observer: &(dyn Fn(Algorithm, &IterationReport<'_>) + Sync),
) -> Result<Vec<TrialReport>> {
    let seed = sub_seed(config.seed, setting as u64, trial as u64);
    let pair = generate_pair(source, n_cut, config.noise, seed)?;
    let perturbation = random_perturbation(
        config.angle_range_deg,
        config.trans_range,
        pair.d,
        sub_seed(seed, 1, 0),
    )?;
    let init = pair.ground_truth.perturb(&perturbation);
    let problem = Registration::new(&pair.data, &pair.model)?;

    let mut out = Vec::with_capacity(config.algorithms.len());
    for &algorithm in &config.algorithms {
        let params = RegistrationParams {
            algorithm,
            ..config.params
        };
        let (estimate, runtime, iterations, converged, xi_estimated, failure) =
            match problem.run_observed(&init, &params, |it| observer(algorithm, it)) {
                Ok(r) => (
                    r.transform,
                    r.runtime_secs,
                    r.iterations,
                    r.converged,
                    r.xi_final,
                    r.failure,
                ),
                Err(e) => (init, 0.0, 0, false, 0.0, Some(e.to_string())),
            };
        let errors = relative_errors(&estimate, &pair.ground_truth, pair.d)?;
        out.push(TrialReport {
            xi_target,
            xi_true: pair.xi_true,
            n_cut,
            trial,
            seed,
            algorithm,
            d: pair.d,
            eps_r: errors.eps_r,
            eps_t_raw: errors.eps_t_raw,
            eps_t_norm: errors.eps_t_norm,
            success: errors.success(pair.d),
            runtime_secs: runtime,
            iterations,
            converged,
            xi_estimated,
            failure,
        });
    }
    Ok(out)
}

fn summarize(
    algorithm: Algorithm,
    xi_target: f64,
    n_points: usize,
    n_cut: usize,
    rows: &[&TrialReport],
) -> AlgorithmSummary {
    let n = rows.len();
    let mean = |f: &dyn Fn(&TrialReport) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n as f64;
    let median = |f: &dyn Fn(&TrialReport) -> f64| {
        let mut v: Vec<f64> = rows.iter().map(|r| f(r)).collect();
        v.sort_by(f64::total_cmp);
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    };
    let successes = rows.iter().filter(|r| r.success).count();
    AlgorithmSummary {
        algorithm,
        xi_target,
        xi_true: overlap_ratio(n_points, n_cut),
        n_cut,
        trials: n,
        successes,
        success_rate: successes as f64 / n as f64,
        mean_eps_r: mean(&|r| r.eps_r),
        median_eps_r: median(&|r| r.eps_r),
        mean_eps_t: mean(&|r| r.eps_t_raw),
        median_eps_t: median(&|r| r.eps_t_raw),
        mean_runtime_secs: mean(&|r| r.runtime_secs),
    }
}
