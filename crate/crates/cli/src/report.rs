//! JSON documents written by the command-line tool, plus the plain-text 4×4
//! initial-transform format.

use std::fs;
use std::path::Path;

use hsaicp::bench::RelativeErrors;
use hsaicp::{Algorithm, RegistrationParams, RegistrationResult, RigidTransform};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Outcome of one `register` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub converged: bool,
    pub xi: f64,
    /// Row-major 3×3.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    /// Present only when a ground truth was supplied.
    pub eps_r: Option<f64>,
    pub eps_t_raw: Option<f64>,
    pub eps_t_norm: Option<f64>,
    pub runtime_ms: f64,
    pub params: RegistrationParams,
    pub seed: Option<u64>,
    /// Model mean point resolution.
    pub resolution: f64,
    pub init: RigidTransform,
    pub failure: Option<String>,
}

impl ReportFile {
    pub fn new(
        result: &RegistrationResult,
        params: &RegistrationParams,
        init: &RigidTransform,
        resolution: f64,
        errors: Option<RelativeErrors>,
        seed: Option<u64>,
    ) -> Self {
        let t = result.transform.translation();
        Self {
            algorithm: result.algorithm,
            iterations: result.iterations,
            converged: result.converged,
            xi: result.xi_final,
            rotation: result.transform.rotation_row_major(),
            translation: [t.x, t.y, t.z],
            eps_r: errors.map(|e| e.eps_r),
            eps_t_raw: errors.map(|e| e.eps_t_raw),
            eps_t_norm: errors.map(|e| e.eps_t_norm),
            runtime_ms: result.runtime_secs * 1e3,
            params: *params,
            seed,
            resolution,
            init: *init,
            failure: result.failure.clone(),
        }
    }

    /// The estimated transform; fails if the rotation block is not a rotation.
    pub fn transform(&self) -> Result<RigidTransform, hsaicp::Error> {
        RigidTransform::from_row_major(&self.rotation, &self.translation)
    }
}

/// Contents of `meta.json` written by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationMeta {
    pub xi_true: f64,
    pub n_cut: usize,
    pub source_points: usize,
    pub data_points: usize,
    pub model_points: usize,
    pub resolution: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn write_report(report: &ReportFile, path: &Path) -> Result<(), CliError> {
    write_json(report, path)
}

pub fn read_report(path: &Path) -> Result<ReportFile, CliError> {
    let report: ReportFile = read_json(path)?;
    report
        .transform()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(report)
}

/// Parses 16 whitespace-separated reals as a row-major 4×4 homogeneous matrix.
pub fn parse_matrix4(text: &str) -> Result<RigidTransform, String> {
    let mut values = Vec::with_capacity(16);
    for (line_no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| format!("line {}: invalid number '{tok}'", line_no + 1))?;
            if !v.is_finite() {
                return Err(format!("line {}: non-finite value '{tok}'", line_no + 1));
            }
            values.push(v);
        }
    }
    if values.len() != 16 {
        return Err(format!("expected 16 values, found {}", values.len()));
    }
    let m = nalgebra::Matrix4::from_row_slice(&values);
    RigidTransform::from_homogeneous(&m).map_err(|e| e.to_string())
}

pub fn format_matrix4(t: &RigidTransform) -> String {
    let m = t.to_homogeneous();
    let mut out = String::new();
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| format!("{:.16e}", m[(r, c)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn load_matrix4(path: &Path) -> Result<RigidTransform, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_matrix4(&text).map_err(|m| CliError::Data(format!("{}: {m}", path.display())))
}

/// Reads a ground truth either as a `{rotation, translation}` JSON document
/// or as a 4×4 matrix file.
pub fn load_transform(path: &Path) -> Result<RigidTransform, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    if text.trim_start().starts_with('{') {
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    } else {
        parse_matrix4(&text).map_err(|m| CliError::Data(format!("{}: {m}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_report_serialization() {
        let result = RegistrationResult {
            algorithm: Algorithm::Hsa,
            transform: RigidTransform::identity(),
            iterations: 1,
            converged: true,
            xi_final: 1.0,
            objective_trace: vec![0.0],
            inlier_count_trace: vec![3],
            xi_trace: vec![1.0],
            transform_trace: vec![RigidTransform::identity()],
            runtime_secs: 0.0,
            failure: None,
        };
        let params = RegistrationParams::default();
        let r = ReportFile::new(
            &result,
            &params,
            &RigidTransform::identity(),
            1.0,
            None,
            None,
        );
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(
            v["rotation"],
            serde_json::json!([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
        );
        assert_eq!(v["translation"], serde_json::json!([0.0, 0.0, 0.0]));
        assert_eq!(v["algorithm"], "hsa");
    }

    #[test]
    fn matrix4_round_trip() {
        let r = RigidTransform::from_axis_angle(&nalgebra::Vector3::new(1.0, 2.0, 0.5), 0.3);
        let t = RigidTransform::new(*r.rotation(), nalgebra::Vector3::new(0.1, -2.0, 1.0 / 3.0))
            .unwrap();
        assert_eq!(parse_matrix4(&format_matrix4(&t)).unwrap(), t);
    }

    #[test]
    fn matrix4_rejects_bad_last_row_and_count() {
        assert!(parse_matrix4("1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 2").is_err());
        assert!(parse_matrix4("1 0 0 0 0 1 0 0 0 0 1 0").is_err());
    }
}
