use fleetslam::config::{Backend, ConfigError, DriveMode};
use fleetslam::runner::{run_scenario, RunOptions};
use fleetslam::{RunError, ScenarioConfig};
use fleetslam_core::grid::import_map;
use std::path::{Path, PathBuf};

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn parse(text: &str) -> Result<ScenarioConfig, ConfigError> {
    ScenarioConfig::parse(text, &scenarios(), Path::new("inline.toml"))
}

const SHORT: &str = r#"
name = "short"
environment = "lab.env"
seed = 3
duration = 6.0

[[robots]]
namespace = "alpha"
start = [0.7, 3.4, 0.0]
backend = "graph"
waypoints = [[2.0, 2.9]]

[[robots]]
namespace = "bravo"
start = [4.0, 2.0, 0.0]
backend = "filter"
waypoints = [[5.0, 1.6]]
"#;

fn invalid(text: &str) -> String {
    let cfg = parse(text).unwrap();
    let env = cfg.load_environment().unwrap();
    match cfg.validate(&env) {
        Err(ConfigError::Invalid(m)) => m,
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn bundled_scenarios_load_and_validate() {
    for name in ["office_graph.toml", "office_filter.toml", "lab_merge2.toml", "lab_merge3.toml"] {
        let cfg = ScenarioConfig::load(scenarios().join(name)).unwrap();
        let env = cfg.load_environment().unwrap();
        cfg.validate(&env).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(cfg.robots.iter().all(|r| r.drive == DriveMode::Scripted));
    }
    let f = ScenarioConfig::load(scenarios().join("office_filter.toml")).unwrap();
    assert_eq!(f.robots[0].backend, Backend::Filter);
    assert_eq!(f.filter.particle_count, 30);
    assert_eq!(f.scan_every(), 5);
}

#[test]
fn validation_rejects_bad_scenarios() {
    assert!(invalid(&SHORT.replace("\"bravo\"", "\"alpha\"")).contains("used twice"));
    assert!(invalid(&SHORT.replace("\"bravo\"", "\"merged\"")).contains("namespace"));
    assert!(invalid(&SHORT.replace("\"bravo\"", "\"Bravo\"")).contains("namespace"));
    assert!(invalid(&SHORT.replace("[4.0, 2.0, 0.0]", "[40.0, 2.0, 0.0]")).contains("free space"));
    // 5 cm from the box at 1.2..1.8 x 1.2..2.0, inside the body radius
    assert!(invalid(&SHORT.replace("[4.0, 2.0, 0.0]", "[1.85, 1.6, 0.0]")).contains("free space"));
    assert!(invalid(&SHORT.replace("waypoints = [[5.0, 1.6]]", "")).contains("no waypoints"));
    assert!(invalid(&SHORT.replace("duration = 6.0", "duration = 6.0\ndt = 0.03")).contains("whole number"));
    assert!(invalid(&SHORT.replace("duration = 6.0", "duration = 6.0\n[filter]\nparticle_count = 0")).contains("particle"));
}

#[test]
fn parse_errors_name_the_file() {
    let err = parse("seed = \"x\"").unwrap_err();
    assert!(matches!(err, ConfigError::Parse { .. }));
    assert!(err.to_string().contains("inline.toml"));
    let err = ScenarioConfig::load("/nonexistent/scenario.toml").unwrap_err();
    assert!(matches!(err, ConfigError::Read { .. }));
}

#[test]
fn missing_environment_is_a_config_error() {
    let cfg = parse(&SHORT.replace("lab.env", "nowhere.env")).unwrap();
    let err = run_scenario(&cfg, &RunOptions::default()).err().unwrap();
    assert!(matches!(err, RunError::Config(ConfigError::Environment { .. })), "{err}");
}

#[test]
fn short_run_writes_every_artifact() {
    let cfg = parse(SHORT).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = run_scenario(
        &cfg,
        &RunOptions {
            out: Some(dir.path().to_path_buf()),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(out.robots.len(), 2);
    for r in &out.robots {
        let d = dir.path().join(&r.namespace);
        for f in ["map.pgm", "map.yaml", "truth.csv", "estimate.csv", "odometry.csv"] {
            assert!(d.join(f).is_file(), "{}/{f}", r.namespace);
        }
        assert_eq!(d.join("graph.fspg").is_file(), r.namespace == "alpha");
        // the exported map reads back as the same ternary map
        let back = import_map(d.join("map.yaml")).unwrap();
        assert_eq!(back.ternary(), r.map.ternary());
        let truth = std::fs::read_to_string(d.join("truth.csv")).unwrap();
        assert_eq!(truth.lines().count(), r.log.truth.len() + 1);
        assert!(r.ll.accepted > 0 && r.ll.rejected == 0);
        // the first truth sample is the start frame origin
        assert_eq!(r.log.truth[0].1, fleetslam_core::Pose2::IDENTITY);
    }
    let metrics: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["seed"], 3);
    assert_eq!(metrics["robots"].as_array().unwrap().len(), 2);
    assert!(dir.path().join("merged/map.pgm").is_file());
    assert!(dir.path().join("merged/transforms.json").is_file());
    assert!(!dir.path().join("INCOMPLETE").exists());
}

#[test]
fn seed_override_changes_the_noise() {
    let cfg = parse(SHORT).unwrap();
    let a = run_scenario(&cfg, &RunOptions::default()).unwrap();
    let b = run_scenario(
        &cfg,
        &RunOptions {
            seed: Some(4),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(b.metrics.seed, 4);
    assert_ne!(a.robots[0].log.odometry, b.robots[0].log.odometry);
    // ground truth does not depend on the noise streams
    assert_eq!(a.robots[0].log.truth, b.robots[0].log.truth);
}

#[test]
fn teleop_without_commands_holds_still_in_real_time() {
    let mut cfg = parse(&SHORT.replace("duration = 6.0", "duration = 1.5")).unwrap();
    cfg.hub.ws_port = 0;
    let started = std::time::Instant::now();
    let out = run_scenario(
        &cfg,
        &RunOptions {
            teleop: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(started.elapsed().as_secs_f64() >= 1.4);
    for r in &out.robots {
        assert!((r.metrics.sim_time - 1.5).abs() < 1e-9);
        // the deadman keeps every command at zero
        assert!(r.log.truth.iter().all(|(_, p)| *p == fleetslam_core::Pose2::IDENTITY));
    }
}
