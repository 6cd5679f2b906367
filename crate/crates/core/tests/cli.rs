use std::path::Path;
use std::process::Command;

use ircard::cli::{self, config::RunConfig, formats};
use ircard::sensor::encode_response;

fn run(args: &[&str]) -> i32 {
    let mut all = vec!["ircard"];
    all.extend_from_slice(args);
    cli::run(all)
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_map(p: &Path) -> formats::Grid {
    formats::parse_map_csv(&std::fs::read_to_string(p).unwrap(), "map").unwrap()
}

/// Calibration that inverts the default chip exactly.
fn identity_calibration(dir: &Path) -> std::path::PathBuf {
    let mut pixels = Vec::new();
    for row in 0..4 {
        for col in 0..4 {
            pixels.push(serde_json::json!({
                "row": row, "col": col,
                "a_c": 21.0 + 400_000.0 / 2_500.0,
                "b_c_per_hz": -1.0 / 2_500.0,
                "rms_c": 0.0
            }));
        }
    }
    let cal = serde_json::json!({
        "reference_distance_m": 0.01, "plate_size_m": 0.1, "pixels": pixels, "distance_gain": 1.0
    });
    let p = dir.join("identity.json");
    std::fs::write(&p, cal.to_string()).unwrap();
    p
}

#[test]
fn simulate_default_writes_series_and_map() {
    let dir = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    assert_eq!(run(&["simulate", "--out-dir", path(dir.path())]), 0);
    assert!(start.elapsed().as_secs_f64() < 10.0);
    for f in [
        "plate.csv",
        "die.csv",
        "frequency.csv",
        "map.csv",
        "map.pgm",
        "map.ppm",
        "map.txt",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let die = std::fs::read_to_string(dir.path().join("die.csv")).unwrap();
    let header = die.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 17);
    assert!(header.starts_with("time_s,A1,A2,A3,A4,B1"));
    let map = read_map(&dir.path().join("map.csv"));
    assert_eq!(map.values.len(), 16);
    assert!(map.values.iter().all(|t| *t > 21.0));
}

#[test]
fn zero_sources_stay_at_ambient() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"sources": [], "timing": {"t_end_s": 30, "dt_s": 0.5, "record_every_s": 10}}"#,
    )
    .unwrap();
    assert_eq!(
        run(&[
            "simulate",
            "--config",
            path(&cfg),
            "--out-dir",
            path(dir.path())
        ]),
        0
    );
    let map = read_map(&dir.path().join("map.csv"));
    assert!(map.values.iter().all(|t| (*t - 21.0).abs() < 1e-9));
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"card\": {\n    \"rows\": \"four\"\n  }\n}\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ircard"))
        .args([
            "simulate",
            "--config",
            path(&cfg),
            "--out-dir",
            path(dir.path()),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json") && err.contains("line 3"), "{err}");
}

#[test]
fn unknown_key_and_bad_value_name_their_key() {
    let err = RunConfig::from_json(r#"{"timing": {"dt": 0.1}}"#, "c.json").unwrap_err();
    assert!(err.to_string().contains("dt"), "{err}");
    let err = RunConfig::from_json(r#"{"environment": {"gap_m": -1}}"#, "c.json").unwrap_err();
    assert!(err.to_string().contains("environment.gap_m"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn missing_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.bin");
    let cal = identity_calibration(dir.path());
    assert_ne!(
        run(&[
            "ingest",
            path(&missing),
            path(&cal),
            "--out-dir",
            path(dir.path())
        ]),
        0
    );
    assert_ne!(
        run(&["render", path(&missing), "--out-dir", path(dir.path())]),
        0
    );
}

#[test]
fn empty_stream_yields_no_cycles() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("empty.bin");
    std::fs::write(&stream, []).unwrap();
    let cal = identity_calibration(dir.path());
    assert_eq!(
        run(&[
            "ingest",
            path(&stream),
            path(&cal),
            "--out-dir",
            path(dir.path())
        ]),
        0
    );
    let table = std::fs::read_to_string(dir.path().join("cycles.csv")).unwrap();
    assert_eq!(table.lines().count(), 1);
}

#[test]
fn simulated_stream_round_trips_through_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"timing": {"t_end_s": 120, "dt_s": 0.1, "record_every_s": 30}}"#,
    )
    .unwrap();
    let sim = dir.path().join("sim");
    assert_eq!(
        run(&["simulate", "--config", path(&cfg), "--out-dir", path(&sim)]),
        0
    );
    let cal = identity_calibration(dir.path());
    let out = dir.path().join("ingest");
    assert_eq!(
        run(&[
            "ingest",
            path(&sim.join("frames.bin")),
            path(&cal),
            "--out-dir",
            path(&out)
        ]),
        0
    );

    let die = std::fs::read_to_string(sim.join("die.csv")).unwrap();
    let cycles = std::fs::read_to_string(out.join("cycles.csv")).unwrap();
    let die_rows: Vec<&str> = die.lines().skip(1).collect();
    let cycle_rows: Vec<&str> = cycles.lines().skip(1).collect();
    assert_eq!(die_rows.len(), cycle_rows.len());
    for (d, c) in die_rows.iter().zip(&cycle_rows) {
        let d: Vec<f64> = d.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        let c: Vec<f64> = c.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        for (a, b) in d.iter().zip(&c) {
            // 50 Hz noise at 2500 Hz/°C is 0.02 °C; allow five sigma.
            assert!((a - b).abs() < 0.1, "{a} vs {b}");
        }
    }
    assert!(out.join("map.pgm").exists() && out.join("cycle_0000.csv").exists());
}

#[test]
fn corrupted_frame_is_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for r in 0..4 {
        for c in 0..4 {
            bytes.extend_from_slice(&encode_response(r, c, 400_000).unwrap());
        }
    }
    bytes[3 * 7 + 6] ^= 0x40;
    let stream = dir.path().join("s.bin");
    std::fs::write(&stream, &bytes).unwrap();
    let decoded = cli::ingest::decode_stream(&bytes, 4, 4);
    assert_eq!(decoded.malformed, 1);
    let cal = identity_calibration(dir.path());
    assert_eq!(
        run(&[
            "ingest",
            path(&stream),
            path(&cal),
            "--out-dir",
            path(dir.path())
        ]),
        0
    );
    let map = read_map(&dir.path().join("map.csv"));
    assert!(map.values[3].is_nan());
    assert!((map.values[0] - 21.0).abs() < 1e-9);
}

#[test]
fn render_matches_golden_files() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let dir = tempfile::tempdir().unwrap();
    let map = fixtures.join("golden_map.csv");
    assert_eq!(
        run(&[
            "render",
            path(&map),
            "--cell",
            "4",
            "--out-dir",
            path(dir.path())
        ]),
        0
    );
    for ext in ["pgm", "ppm", "txt"] {
        let got = std::fs::read(dir.path().join(format!("golden_map.{ext}"))).unwrap();
        let want = std::fs::read(fixtures.join(format!("golden_map.{ext}"))).unwrap();
        assert_eq!(got, want, "{ext} differs");
    }
}

#[test]
fn render_default_cell_and_ragged_input() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("m.csv");
    std::fs::write(&map, "1,2,3,4\n5,6,7,8\n9,10,11,12\n13,14,15,16\n").unwrap();
    assert_eq!(
        run(&["render", path(&map), "--out-dir", path(dir.path())]),
        0
    );
    let pgm = std::fs::read(dir.path().join("m.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n128 128\n255\n"));
    std::fs::write(&map, "1,2\n3\n").unwrap();
    assert_ne!(
        run(&["render", path(&map), "--out-dir", path(dir.path())]),
        0
    );
}

#[test]
fn calibrate_fit_and_locate_commands() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    // Replay A misses its thresholds but keeps its report and artifacts.
    assert_eq!(run(&["replay", "A", "--out-dir", path(&a)]), 1);
    assert!(std::fs::read_to_string(a.join("report.txt"))
        .unwrap()
        .contains("FAIL"));
    let fit = dir.path().join("fit");
    assert_eq!(
        run(&[
            "calibrate-fit",
            path(&a.join("samples.csv")),
            "--out-dir",
            path(&fit)
        ]),
        0
    );
    let cal = cli::load_calibration(&fit.join("calibration.json")).unwrap();
    assert_eq!(cal.pixels.len(), 16);

    let sim = dir.path().join("sim");
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"sources": [{"center_x_m": 0.004, "center_y_m": -0.003, "width_m": 0.01, "height_m": 0.01,
            "drive": {"prescribed": {"temperature_c": 90}}}],
            "timing": {"t_end_s": 1200, "dt_s": 0.5, "record_every_s": 600}}"#,
    )
    .unwrap();
    assert_eq!(
        run(&["simulate", "--config", path(&cfg), "--out-dir", path(&sim)]),
        0
    );
    assert_eq!(
        run(&[
            "locate",
            path(&sim.join("map.csv")),
            "--config",
            path(&cfg),
            "--out-dir",
            path(&sim)
        ]),
        0
    );
    let est: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(sim.join("estimate.json")).unwrap()).unwrap();
    let (x, y) = (est["x_m"].as_f64().unwrap(), est["y_m"].as_f64().unwrap());
    assert!((x - 0.004).hypot(y + 0.003) < 2e-3, "({x}, {y})");
}

#[test]
fn replay_exit_code_follows_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ircard"))
        .args(["replay", "B", "--out-dir", path(dir.path())])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("PASS sensed rise strictly decreasing"));
    let out = Command::new(env!("CARGO_BIN_EXE_ircard"))
        .args(["replay", "C", "--out-dir", path(dir.path())])
        .output()
        .unwrap();
    let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    let expected = if report.contains("FAIL") { 1 } else { 0 };
    assert_eq!(out.status.code(), Some(expected));
    assert!(report.contains("hottest A2, next B2"));
}
