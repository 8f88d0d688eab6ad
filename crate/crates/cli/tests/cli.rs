//! Black-box CLI behavior: exit codes, artifact layout, gridmap output.

use std::path::Path;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_geochem")
}

fn write_tiny_survey(dir: &Path) -> (String, String) {
    let survey = dir.join("survey.csv");
    let deposits = dir.join("deposits.csv");
    let mut rows = String::from("SAMPLEID,SAMPLETYPE,x,y,Au_ppb,Cu_ppm,Ni_ppm\n");
    let mut k = 0;
    for i in 0..8 {
        for j in 0..8 {
            k += 1;
            let au = 2.0 + ((i * j) % 5) as f64 + if i == 3 && j == 3 { 40.0 } else { 0.0 };
            let cu = 10.0 + ((i + 2 * j) % 7) as f64;
            let ni = 5.0 + ((2 * i + j) % 3) as f64;
            rows.push_str(&format!("S{k},soil,{}.0,{}.0,{au},{cu},{ni}\n", i, j));
        }
    }
    std::fs::write(&survey, rows).unwrap();
    std::fs::write(&deposits, "SiteID,ProjectID,x,y\nD1,P,3.0,3.0\n").unwrap();
    (
        survey.to_str().unwrap().to_string(),
        deposits.to_str().unwrap().to_string(),
    )
}

#[test]
fn run_writes_scored_csv_report_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (survey, deposits) = write_tiny_survey(dir.path());
    let out = dir.path().join("out");
    let config = format!(
        r#"
[input]
survey = "{survey}"
deposits = "{deposits}"

[protocol]
n_runs = 3
bg_per_pos = 5
seed = 1

[[detectors]]
kind = "zscore"

[output]
dir = "{}"
"#,
        out.display()
    );
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, config).unwrap();
    let output = Command::new(bin())
        .args(["run", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    assert!(out.join("scores_zscore.csv").exists());
    assert!(out.join("report_zscore.json").exists());
    assert!(out.join("comparison.csv").exists());
    assert!(out.join("manifest.json").exists());
    let rows = std::fs::read_to_string(out.join("report_rows.csv")).unwrap();
    assert!(rows.starts_with("dataset,detector,config_hash,"));
    assert_eq!(rows.lines().count(), 2);
    assert!(rows.lines().nth(1).unwrap().starts_with("dataset,zscore,"));

    // Comparison cell equals the report mean exactly.
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report_zscore.json")).unwrap())
            .unwrap();
    let table = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    let cell: f64 = table.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(cell, report["auc_mean"].as_f64().unwrap());

    // Scored CSV carries ten-significant-digit scores.
    let scored = std::fs::read_to_string(out.join("scores_zscore.csv")).unwrap();
    let first = scored.lines().nth(1).unwrap();
    let score_field = first.split(',').nth(3).unwrap();
    assert!(score_field.contains('e'), "expected scientific notation, got {score_field}");
}

#[test]
fn config_errors_exit_1_data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    // Unparseable config.
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "this is not toml [").unwrap();
    let out = Command::new(bin()).args(["run", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // Valid config pointing at a missing survey file.
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(
        &cfg,
        r#"
[input]
survey = "/nonexistent/survey.csv"
deposits = "/nonexistent/deposits.csv"

[[detectors]]
kind = "zscore"
"#,
    )
    .unwrap();
    let out = Command::new(bin()).args(["run", cfg.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Structurally valid config with an unknown detector kind.
    let cfg2 = dir.path().join("cfg2.toml");
    std::fs::write(
        &cfg2,
        r#"
[input]
survey = "s.csv"
deposits = "d.csv"

[[detectors]]
kind = "nonsense"
"#,
    )
    .unwrap();
    let out = Command::new(bin()).args(["run", cfg2.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn geochemformer_without_target_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (survey, deposits) = write_tiny_survey(dir.path());
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(
        &cfg,
        format!(
            r#"
[input]
survey = "{survey}"
deposits = "{deposits}"

[[detectors]]
kind = "geochemformer"

[output]
dir = "{}"
"#,
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let out = Command::new(bin()).args(["run", cfg.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "{out:?}");
}

#[test]
fn env_var_supplies_default_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let (survey, deposits) = write_tiny_survey(dir.path());
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(
        &cfg,
        format!(
            r#"
[input]
survey = "{survey}"
deposits = "{deposits}"

[protocol]
n_runs = 2
seed = 3

[[detectors]]
kind = "zscore"
"#
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("env_out");
    let out = Command::new(bin())
        .args(["run", cfg.to_str().unwrap()])
        .env("GEOCHEM_OUT_DIR", &out_dir)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(out_dir.join("scores_zscore.csv").exists());
}

#[test]
fn gridmap_produces_esri_ascii_and_overlay() {
    let dir = tempfile::tempdir().unwrap();
    let (survey, deposits) = write_tiny_survey(dir.path());
    let out = dir.path().join("out");
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(
        &cfg,
        format!(
            r#"
[input]
survey = "{survey}"
deposits = "{deposits}"

[protocol]
n_runs = 2
seed = 9

[[detectors]]
kind = "zscore"

[output]
dir = "{}"
"#,
            out.display()
        ),
    )
    .unwrap();
    assert!(Command::new(bin())
        .args(["run", cfg.to_str().unwrap()])
        .status()
        .unwrap()
        .success());

    let raster = dir.path().join("map.asc");
    let status = Command::new(bin())
        .args([
            "gridmap",
            out.join("scores_zscore.csv").to_str().unwrap(),
            "--out",
            raster.to_str().unwrap(),
            "--nx",
            "16",
            "--ny",
            "16",
            "--method",
            "idw",
            "--deposits",
            &deposits,
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&raster).unwrap();
    assert!(text.starts_with("ncols 16\nnrows 16\n"));
    assert!(text.contains("NODATA_value -9999"));
    assert_eq!(text.lines().count(), 6 + 16);
    assert!(dir.path().join("map_deposits.asc").exists());

    // The highest-score sample sits at the deposit, so the raster maximum
    // should be near that corner of the grid.
    let kriging = dir.path().join("map_k.asc");
    let status = Command::new(bin())
        .args([
            "gridmap",
            out.join("scores_zscore.csv").to_str().unwrap(),
            "--out",
            kriging.to_str().unwrap(),
            "--nx",
            "8",
            "--ny",
            "8",
            "--method",
            "kriging",
        ])
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn gridmap_oracle_scores_peak_at_the_deposit() {
    // Scores = negative distance to the deposit; the raster's best cell must
    // land next to it.
    let dir = tempfile::tempdir().unwrap();
    let scored = dir.path().join("scores.csv");
    let dep = [5.0f64, 4.0f64];
    let mut text = String::from("SAMPLEID,x,y,score\n");
    let mut k = 0;
    for i in 0..10 {
        for j in 0..10 {
            k += 1;
            let (x, y) = (i as f64, j as f64);
            let d = ((x - dep[0]).powi(2) + (y - dep[1]).powi(2)).sqrt();
            text.push_str(&format!("S{k},{x},{y},{}\n", -d));
        }
    }
    std::fs::write(&scored, text).unwrap();
    let raster = dir.path().join("oracle.asc");
    assert!(Command::new(bin())
        .args([
            "gridmap",
            scored.to_str().unwrap(),
            "--out",
            raster.to_str().unwrap(),
            "--nx",
            "20",
            "--ny",
            "20",
            "--method",
            "idw",
        ])
        .status()
        .unwrap()
        .success());

    let content = std::fs::read_to_string(&raster).unwrap();
    let mut lines = content.lines();
    let mut header = std::collections::HashMap::new();
    for _ in 0..6 {
        let line = lines.next().unwrap();
        let mut parts = line.split_whitespace();
        header.insert(
            parts.next().unwrap().to_string(),
            parts.next().unwrap().parse::<f64>().unwrap(),
        );
    }
    let (nx, ny) = (header["ncols"] as usize, header["nrows"] as usize);
    let cell = header["cellsize"];
    let (x0, y0) = (header["xllcorner"], header["yllcorner"]);
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    for (row_idx, line) in lines.enumerate() {
        let iy = ny - 1 - row_idx; // rows are written north to south
        for (ix, tok) in line.split_whitespace().enumerate() {
            let v: f64 = tok.parse().unwrap();
            if v > best.0 {
                best = (v, ix, iy);
            }
        }
    }
    let bx = x0 + (best.1 as f64 + 0.5) * cell;
    let by = y0 + (best.2 as f64 + 0.5) * cell;
    let dist = ((bx - dep[0]).powi(2) + (by - dep[1]).powi(2)).sqrt();
    assert!(
        dist <= cell * 1.5,
        "best raster cell ({bx},{by}) not at the deposit {dep:?} (nx={nx})"
    );
}

#[test]
fn synth_round_trips_and_differs_across_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (path, seed) in [(&a, "11"), (&b, "12")] {
        let status = Command::new(bin())
            .args([
                "synth",
                "--out-dir",
                path.to_str().unwrap(),
                "--seed",
                seed,
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let sa = std::fs::read(a.join("survey.csv")).unwrap();
    let sb = std::fs::read(b.join("survey.csv")).unwrap();
    assert_ne!(sa, sb);
    assert!(a.join("deposits.csv").exists());
    assert!(a.join("ground_truth.csv").exists());

    // Same seed reproduces byte-identical files.
    let a2 = dir.path().join("a2");
    assert!(Command::new(bin())
        .args(["synth", "--out-dir", a2.to_str().unwrap(), "--seed", "11"])
        .status()
        .unwrap()
        .success());
    let sa2 = std::fs::read(a2.join("survey.csv")).unwrap();
    assert_eq!(sa, sa2);

    let inspect = Command::new(bin())
        .args(["inspect", a.join("survey.csv").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(inspect.status.success());
    let text = String::from_utf8(inspect.stdout).unwrap();
    assert!(text.contains("samples: 2000"));
    assert!(text.contains("elements: 12"));
    assert!(text.contains("average sampling distance"));
}
