use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use refaudit::deface::quickshear;
use refaudit::phantom::{generate_phantom, PhantomParams};
use refaudit::quality::quality_report;
use refaudit::stats::{bootstrap_mean, Observation, ObservationTable, Prediction, PredictionTable};
use refaudit::surface::{face_distance_report, MasdMode};
use refaudit::volume::nifti;

fn refaudit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refaudit")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small() -> PhantomParams {
    PhantomParams { grid: [64; 3], spacing_mm: 4.0, ..PhantomParams::default() }
}

/// Writes original, defaced and `removed` mask files for one small phantom.
fn subject(dir: &Path, seed: u64) -> [PathBuf; 3] {
    let p = generate_phantom(seed, small()).unwrap();
    let d = quickshear(&p.volume, &p.brain, 10.0).unwrap();
    let paths = ["orig", "defaced", "removed"].map(|n| dir.join(format!("s{seed}_{n}.nii.gz")));
    nifti::save(&p.volume, &paths[0]).unwrap();
    nifti::save(&d.volume, &paths[1]).unwrap();
    nifti::save_mask(&d.removed, &paths[2]).unwrap();
    paths
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn phantom_writes_volumes_and_records_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = refaudit(&["phantom", "--n", "3", "--seed", "9", "--grid", "64", "--spacing", "4", "--out", s(dir)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let mut names: Vec<String> =
        fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names.iter().filter(|n| n.ends_with(".nii.gz")).count(), 3);
    assert_eq!(names.iter().filter(|n| n.ends_with(".json")).count(), 3);
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n} differs");
    }
    let record: Value = serde_json::from_slice(&fs::read(a.join("phantom-000.json")).unwrap()).unwrap();
    assert_eq!(record["seed"], refaudit::phantom::member_seed(9, 0));
    assert_eq!(record["shape"]["params"]["grid"], serde_json::json!([64, 64, 64]));

    let blocker = tmp.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let bad = blocker.join("sub");
    let o = refaudit(&["phantom", "--out", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(s(&bad)), "{}", stderr(&o));
}

#[test]
fn masd_values_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let [orig, defaced, _] = subject(tmp.path(), 1);
    let o = refaudit(&["masd", s(&orig), s(&orig)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().next(), Some("subject_id,method,masd_mm"));
    assert!(out.lines().nth(1).unwrap().ends_with(",0.000"), "{out}");

    let o = refaudit(&["masd", s(&orig), s(&defaced), "--decimals", "12"]);
    let printed: f64 = stdout(&o).lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    let lib = face_distance_report(&nifti::load(&orig).unwrap(), &nifti::load(&defaced).unwrap(), MasdMode::Symmetric)
        .unwrap();
    assert!((printed - lib).abs() < 1e-9, "{printed} vs {lib}");
    assert!(lib > 0.0);

    let junk = tmp.path().join("junk.nii");
    fs::write(&junk, b"not an image").unwrap();
    assert_eq!(refaudit(&["masd", s(&orig), s(&junk)]).status.code(), Some(3));
    assert_eq!(refaudit(&["masd", s(&orig), s(&tmp.path().join("missing.nii.gz"))]).status.code(), Some(3));
}

#[test]
fn quality_single_batch_and_geometry_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rows = vec!["subject_id,original,defaced,refaced,masks".to_string()];
    let mut reports = Vec::new();
    for seed in 0..4 {
        let [orig, defaced, removed] = subject(tmp.path(), seed);
        // a crude refacing: the defaced image with its removed region lifted to 60
        let o = nifti::load(&orig).unwrap();
        let d = nifti::load(&defaced).unwrap();
        let m = refaudit::BinaryMask::from_volume(&nifti::load(&removed).unwrap());
        let r = d.with_data(d.data.iter().zip(&m.data).map(|(&v, &k)| if k { 60.0 } else { v }).collect()).unwrap();
        let refaced = tmp.path().join(format!("s{seed}_refaced.nii.gz"));
        nifti::save(&r, &refaced).unwrap();
        reports.push(quality_report(&o, &d, &r, &[("removed", &m)]).unwrap());
        let name = |p: &Path| p.file_name().unwrap().to_str().unwrap().to_string();
        rows.push(format!("s{seed},{},{},{},removed={}", name(&orig), name(&defaced), name(&refaced), name(&removed)));
    }
    let [orig, defaced, removed] =
        [0, 1, 2].map(|i| tmp.path().join(["s0_orig", "s0_defaced", "s0_removed"][i]).with_extension("nii.gz"));

    let o = refaudit(&[
        "quality",
        "--original",
        s(&orig),
        "--defaced",
        s(&defaced),
        "--refaced",
        s(&orig),
        "--mask",
        &format!("removed={}", s(&removed)),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o).lines().nth(1).unwrap().to_string();
    let cols: Vec<&str> = line.split(',').collect();
    assert_eq!(cols[1], "inf");
    assert_eq!(cols[3], "1.000000");
    assert_eq!(cols[5], "removed");

    let batch = tmp.path().join("batch.csv");
    fs::write(&batch, rows.join("\n") + "\n").unwrap();
    let args = ["quality", "--batch", s(&batch), "--boot", "500", "--seed", "4"];
    let first = refaudit(&args);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    assert_eq!(stdout(&first), stdout(&refaudit(&args)));
    let psnr_face: Vec<f64> = reports.iter().map(|r| r.face.psnr).collect();
    let expected = bootstrap_mean(&psnr_face, 500, 4).unwrap();
    let row = stdout(&first).lines().find(|l| l.starts_with("psnr_face,")).unwrap().to_string();
    assert!(row.contains(&format!("\"{}\"", expected.cell())), "{row} vs {}", expected.cell());

    let other = generate_phantom(0, PhantomParams { grid: [72; 3], ..small() }).unwrap();
    let wrong = tmp.path().join("wrong.nii.gz");
    nifti::save(&other.volume, &wrong).unwrap();
    let o = refaudit(&[
        "quality",
        "--original",
        s(&orig),
        "--defaced",
        s(&defaced),
        "--refaced",
        s(&wrong),
        "--mask",
        s(&removed),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

/// Checks the subset of JSON Schema used by the report schema.
fn validate(schema: &Value, v: &Value, path: &str, errors: &mut Vec<String>) {
    if let Some(t) = schema.get("type") {
        let types: Vec<&str> = match t {
            Value::String(s) => vec![s.as_str()],
            Value::Array(a) => a.iter().filter_map(Value::as_str).collect(),
            _ => vec![],
        };
        let ok = types.iter().any(|t| match *t {
            "object" => v.is_object(),
            "array" => v.is_array(),
            "string" => v.is_string(),
            "integer" => v.is_i64() || v.is_u64(),
            "number" => v.is_number(),
            "boolean" => v.is_boolean(),
            "null" => v.is_null(),
            _ => false,
        });
        if !ok {
            errors.push(format!("{path}: expected {types:?}, got {v}"));
            return;
        }
    }
    if let Some(Value::Array(options)) = schema.get("enum") {
        if !options.contains(v) {
            errors.push(format!("{path}: {v} not in enum"));
        }
    }
    if let Some(x) = v.as_f64() {
        if schema.get("minimum").and_then(Value::as_f64).is_some_and(|m| x < m) {
            errors.push(format!("{path}: {x} below minimum"));
        }
        if schema.get("maximum").and_then(Value::as_f64).is_some_and(|m| x > m) {
            errors.push(format!("{path}: {x} above maximum"));
        }
    }
    if let Some(obj) = v.as_object() {
        for key in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
            let key = key.as_str().unwrap();
            if !obj.contains_key(key) {
                errors.push(format!("{path}: missing {key}"));
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        for (k, child) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(sub) => validate(sub, child, &format!("{path}.{k}"), errors),
                None if schema.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    errors.push(format!("{path}: unexpected {k}"))
                }
                None => {}
            }
        }
    }
    if let Some(arr) = v.as_array() {
        let len = arr.len() as u64;
        if schema.get("minItems").and_then(Value::as_u64).is_some_and(|m| len < m) {
            errors.push(format!("{path}: too few items"));
        }
        if schema.get("maxItems").and_then(Value::as_u64).is_some_and(|m| len > m) {
            errors.push(format!("{path}: too many items"));
        }
        if let Some(items) = schema.get("items") {
            for (i, item) in arr.iter().enumerate() {
                validate(items, item, &format!("{path}[{i}]"), errors);
            }
        }
    }
}

fn write_tables(dir: &Path, drop_last_prediction: bool) -> (PathBuf, PathBuf) {
    let mut obs = Vec::new();
    let mut pred = Vec::new();
    for s in 0..12 {
        for v in 0..2 {
            let age = 50.0 + s as f64 * 2.0 + v as f64;
            let noise = ((s * 7 + v * 3) % 5) as f64 * 0.3;
            let y = 1.0 + 0.02 * age + 0.5 * (s % 2) as f64 + noise + 0.1 * (s % 3) as f64;
            obs.push(Observation { subject_id: format!("p{s}"), visit: v, age, sex: (s % 2) as u8, y });
            for (m, scale) in [("good", 1.0), ("noisy", 0.2)] {
                let y_pred = scale * noise + (1.0 - scale) * ((s * 13 + v * 5) % 7) as f64;
                pred.push(Prediction { subject_id: format!("p{s}"), visit: v, method: m.into(), y_pred });
            }
        }
    }
    if drop_last_prediction {
        pred.pop();
    }
    let (op, pp) = (dir.join("obs.csv"), dir.join("pred.csv"));
    ObservationTable::new(obs).unwrap().to_writer(fs::File::create(&op).unwrap()).unwrap();
    PredictionTable::new(pred).unwrap().to_writer(fs::File::create(&pp).unwrap()).unwrap();
    (op, pp)
}

#[test]
fn correlate_report_matches_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let (obs, pred) = write_tables(tmp.path(), false);
    let out = tmp.path().join("report.json");
    let o = refaudit(&["correlate", s(&obs), s(&pred), "--boot", "400", "--seed", "2", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas/correlation_report.schema.json");
    let schema: Value = serde_json::from_slice(&fs::read(schema_path).unwrap()).unwrap();
    let mut errors = Vec::new();
    validate(&schema, &report, "$", &mut errors);
    assert!(errors.is_empty(), "{errors:#?}");
    assert_eq!(report["methods"].as_array().unwrap().len(), 2);
    assert_eq!(report["n_boot"], 400);
    let stars = report["comparisons"][0]["stars"].as_str().unwrap();
    let p = report["comparisons"][0]["p_value"].as_f64().unwrap();
    assert_eq!(stars, refaudit::stats::significance_stars(p));

    let mut broken = report.clone();
    broken["fit"]["criterion"] = Value::from("REML");
    broken["extra"] = Value::from(1);
    let mut errors = Vec::new();
    validate(&schema, &broken, "$", &mut errors);
    assert_eq!(errors.len(), 2, "{errors:?}");
}

#[test]
fn correlate_join_failure_lists_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let (obs, pred) = write_tables(tmp.path(), true);
    let o = refaudit(&["correlate", s(&obs), s(&pred), "--boot", "50"]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("noisy:p11/1"), "{}", stderr(&o));
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(refaudit(&["masd"]).status.code(), Some(2));
    assert_eq!(refaudit(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(refaudit(&["demo", "--out", "x", "--steps", "0"]).status.code(), Some(2));
    let help = refaudit(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    for sub in ["phantom", "masd", "quality", "correlate", "demo"] {
        assert!(stdout(&help).contains(sub));
    }
    assert!(stdout(&refaudit(&["--version"])).contains(refaudit::VERSION));
}
