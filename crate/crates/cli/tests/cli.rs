use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hsaicp::bench::synthetic_surface;
use hsaicp::{Algorithm, Point3, PointCloud, RegistrationParams, RigidTransform};
use hsaicp_cli::cloud_io::{encode_cloud, parse_cloud};
use hsaicp_cli::report::{format_matrix4, read_report};
use hsaicp_cli::{load_cloud, write_cloud, CloudFormat, Location, ReportFile, SimulationMeta};
use proptest::prelude::*;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn hsa_icp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsa-icp"))
        .args(args)
        .env_remove("HSA_ICP_THREADS")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tetra() -> Vec<Point3> {
    vec![
        Point3::new(0.0, 0.0, 0.0),
        Point3::new(1.0, 0.0, 0.0),
        Point3::new(0.0, 1.0, 0.0),
        Point3::new(0.25, 0.5, 1.25),
    ]
}

pub const MALFORMED: [(&str, Location); 8] = [
    ("bad_magic.ply", Location::Line(1)),
    ("count_mismatch.ply", Location::Line(10)),
    ("nan_value.xyz", Location::Line(3)),
    ("missing_z.xyz", Location::Line(2)),
    ("big_endian.ply", Location::Line(2)),
    ("truncated_binary.ply", Location::Offset(182)),
    ("bad_token.ply", Location::Line(9)),
    ("no_z_property.ply", Location::Line(6)),
];

#[test]
fn valid_fixtures_agree() {
    for name in ["tetra_ascii.ply", "tetra_binary.ply", "tetra.xyz"] {
        let cloud = load_cloud(fixture(name)).unwrap();
        assert_eq!(cloud.points(), tetra(), "{name}");
    }
}

#[test]
fn malformed_fixtures_name_their_location() {
    for (name, want) in MALFORMED {
        let err = load_cloud(fixture(name)).unwrap_err();
        assert_eq!(err.location(), Some(want), "{name}: {err}");
        assert!(err.to_string().contains(name));
    }
}

#[test]
fn register_rejects_malformed_input_with_exit_2() {
    let good = fixture("tetra.xyz");
    for (name, want) in MALFORMED {
        let out = hsa_icp(&["register", "--data", s(&fixture(name)), "--model", s(&good)]);
        assert_eq!(out.status.code(), Some(2), "{name}");
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.contains(&want.to_string()), "{name}: {stderr}");
    }
}

#[test]
fn missing_file_is_a_data_error() {
    let out = hsa_icp(&[
        "register",
        "--data",
        "/nonexistent/a.ply",
        "--model",
        "/nonexistent/b.ply",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/a.ply"));
}

#[test]
fn usage_errors_exit_1() {
    for args in [
        &["register", "--frobnicate"][..],
        &["register", "--data", "x.ply"][..],
        &["register", "--data", "a", "--model", "b", "--algo", "sgd"][..],
        &["teleport"][..],
        &[][..],
    ] {
        let out = hsa_icp(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty());
        assert!(out.stdout.is_empty());
    }
    assert_eq!(hsa_icp(&["--help"]).status.code(), Some(0));
}

fn surface_file(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join("source.ply");
    write_cloud(
        &synthetic_surface(n, 21).unwrap(),
        &path,
        CloudFormat::PlyBinaryLe,
    )
    .unwrap();
    path
}

#[test]
fn simulate_without_cut_or_noise() {
    let dir = tempfile::tempdir().unwrap();
    let src = surface_file(dir.path(), 600);
    let out_dir = dir.path().join("pair");
    let out = hsa_icp(&[
        "simulate",
        "--source",
        s(&src),
        "--n-cut",
        "0",
        "--noise-sigma",
        "0",
        "--out-dir",
        s(&out_dir),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let meta: SimulationMeta =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta.xi_true, 0.95);
    assert_eq!(meta.noise_sigma, 0.0);
    assert_eq!(meta.data_points, 570);
    assert_eq!(load_cloud(out_dir.join("data.ply")).unwrap().len(), 570);
    assert_eq!(load_cloud(out_dir.join("model.ply")).unwrap().len(), 570);
    let truth: RigidTransform =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("truth.json")).unwrap())
            .unwrap();
    assert!(truth.check().is_ok());
}

#[test]
fn simulate_then_register_recovers_truth() {
    let dir = tempfile::tempdir().unwrap();
    let src = surface_file(dir.path(), 2000);
    let pair = dir.path().join("pair");
    let out = hsa_icp(&[
        "simulate",
        "--source",
        s(&src),
        "--n-cut",
        "200",
        "--seed",
        "4",
        "--out-dir",
        s(&pair),
    ]);
    assert_eq!(out.status.code(), Some(0));

    // start 2° and a little translation off the truth
    let truth: RigidTransform =
        serde_json::from_str(&std::fs::read_to_string(pair.join("truth.json")).unwrap()).unwrap();
    let nudge =
        RigidTransform::from_axis_angle(&nalgebra::Vector3::new(1.0, 1.0, 0.0), 2f64.to_radians());
    let init = truth.perturb(&nudge);
    let init_path = dir.path().join("init.txt");
    std::fs::write(&init_path, format_matrix4(&init)).unwrap();

    let report_path = dir.path().join("fresh/report.json");
    std::fs::create_dir(dir.path().join("fresh")).unwrap();
    let aligned = dir.path().join("aligned.xyz");
    let out = hsa_icp(&[
        "register",
        "--data",
        s(&pair.join("data.ply")),
        "--model",
        s(&pair.join("model.ply")),
        "--init",
        s(&init_path),
        "--truth",
        s(&pair.join("truth.json")),
        "--seed",
        "17",
        "--out",
        s(&report_path),
        "--aligned-out",
        s(&aligned),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = read_report(&report_path).unwrap();
    assert_eq!(report.algorithm, Algorithm::Hsa);
    assert!(report.converged);
    assert_eq!(report.init, init);
    assert_eq!(report.seed, Some(17));
    assert!(report.eps_r.unwrap() <= 0.01);
    assert!(report.eps_t_raw.unwrap() <= report.resolution);
    assert_eq!(report.params, RegistrationParams::default());
    assert_eq!(
        load_cloud(&aligned).unwrap().len(),
        load_cloud(pair.join("data.ply")).unwrap().len()
    );
}

#[test]
fn non_convergence_exits_3_and_still_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let src = surface_file(dir.path(), 800);
    let pair = dir.path().join("pair");
    assert_eq!(
        hsa_icp(&[
            "simulate",
            "--source",
            s(&src),
            "--n-cut",
            "100",
            "--out-dir",
            s(&pair)
        ])
        .status
        .code(),
        Some(0)
    );
    let report_path = dir.path().join("r.json");
    let out = hsa_icp(&[
        "register",
        "--data",
        s(&pair.join("data.ply")),
        "--model",
        s(&pair.join("model.ply")),
        "--algo",
        "icp",
        "--max-iters",
        "1",
        "--out",
        s(&report_path),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let report = read_report(&report_path).unwrap();
    assert!(!report.converged);
    assert_eq!(report.iterations, 1);
    assert_eq!(report.algorithm, Algorithm::Icp);
    assert_eq!(report.eps_r, None);
}

#[test]
fn aligned_input_reports_identity_on_stdout() {
    let out = hsa_icp(&[
        "register",
        "--data",
        s(&fixture("tetra.xyz")),
        "--model",
        s(&fixture("tetra_ascii.ply")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: ReportFile = serde_json::from_slice(&out.stdout).unwrap();
    let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    assert!(
        report
            .rotation
            .iter()
            .zip(eye)
            .all(|(a, b)| (a - b).abs() < 1e-12),
        "{:?}",
        report.rotation
    );
    assert!(report.translation.iter().all(|t| t.abs() < 1e-12));
    assert_eq!(report.xi, 1.0);
}

fn bench_once(dir: &Path, src: &Path, name: &str, threads: Option<&str>) -> Vec<u8> {
    let out_path = dir.join(format!("{name}.json"));
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hsa-icp"));
    cmd.args([
        "bench",
        "--source",
        s(src),
        "--overlaps",
        "0.8,0.6",
        "--trials",
        "2",
        "--algos",
        "hsa,icp",
        "--seed",
        "9",
        "--out",
        s(&out_path),
    ]);
    match threads {
        Some(t) => cmd.env("HSA_ICP_THREADS", t),
        None => cmd.env_remove("HSA_ICP_THREADS"),
    };
    let out = cmd.output().unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(json["trials"].as_array().unwrap().len(), 8);
    std::fs::read(dir.join(format!("{name}.csv"))).unwrap()
}

#[test]
fn bench_csv_is_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let src = surface_file(dir.path(), 800);
    let a = bench_once(dir.path(), &src, "a", None);
    let b = bench_once(dir.path(), &src, "b", Some("3"));
    let c = bench_once(dir.path(), &src, "c", Some("1"));
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 9);
}

#[test]
fn bad_thread_cap_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let src = surface_file(dir.path(), 300);
    let out = Command::new(env!("CARGO_BIN_EXE_hsa-icp"))
        .args([
            "bench",
            "--source",
            s(&src),
            "--overlaps",
            "0.8",
            "--trials",
            "1",
            "--algos",
            "icp",
            "--out",
        ])
        .arg(dir.path().join("r.json"))
        .env("HSA_ICP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

fn coord() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6f64..1e6,
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
    ]
}

fn finite() -> impl Strategy<Value = f64> {
    -1e3f64..1e3
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cloud_round_trip_is_exact(pts in prop::collection::vec(prop::array::uniform3(coord()), 1..60)) {
        let cloud = PointCloud::from_xyz(&pts).unwrap();
        for f in [CloudFormat::PlyAscii, CloudFormat::PlyBinaryLe, CloudFormat::Xyz] {
            let back = parse_cloud(&encode_cloud(&cloud, f)).unwrap();
            prop_assert_eq!(back.as_slice(), cloud.points());
            prop_assert_eq!(encode_cloud(&cloud, f), encode_cloud(&cloud, f));
        }
    }

    #[test]
    fn report_round_trip_is_lossless(
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -3.0f64..3.0,
        t in prop::array::uniform3(finite()),
        xi in 0.0f64..1.0,
        runtime in 0.0f64..1e4,
        iterations in 0usize..1000,
        seed in prop::option::of(any::<u64>()),
        eps in prop::option::of(0.0f64..10.0),
    ) {
        prop_assume!(axis.iter().any(|a| a.abs() > 1e-3));
        let r = RigidTransform::from_axis_angle(&nalgebra::Vector3::from(axis), angle);
        let transform = RigidTransform::new(*r.rotation(), nalgebra::Vector3::from(t)).unwrap();
        let report = ReportFile {
            algorithm: Algorithm::WIcp,
            iterations,
            converged: iterations % 2 == 0,
            xi,
            rotation: transform.rotation_row_major(),
            translation: t,
            eps_r: eps,
            eps_t_raw: eps.map(|e| e * 3.0),
            eps_t_norm: eps.map(|e| e / 7.0),
            runtime_ms: runtime,
            params: RegistrationParams { delta: Some(1e-7), ..RegistrationParams::default() },
            seed,
            resolution: 0.0123,
            init: transform.inverse(),
            failure: None,
        };
        let text = serde_json::to_string(&report).unwrap();
        let back: ReportFile = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &report);
        prop_assert!(back.transform().is_ok());
    }
}
