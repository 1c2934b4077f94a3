use std::path::Path;
use std::process::{Command, Output};

use latcompass_core::engine::{Engine, Side};
use latcompass_core::generator::BuiltinGenerator;
use latcompass_core::store::DirectionStore;
use serde_json::Value;

fn latcompass(args: &[&str], data_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latcompass"))
        .args(args)
        .env("LATCOMPASS_DATA_DIR", data_dir)
        .env("LATCOMPASS_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Saves one calibrated compass into `dir` and returns its record id.
fn saved_record(dir: &Path) -> String {
    let engine = Engine::new(std::sync::Arc::new(BuiltinGenerator::new()), 2.0).unwrap();
    let mut session = engine.create_session(0, latcompass_core::latent::SpaceTag::Z).unwrap();
    engine.fill_pool(&mut session, 30, 0).unwrap();
    let mut order: Vec<_> = session.pool.iter().map(|s| (s.z.values()[0], s.id.clone())).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (_, id) in &order[..7] {
        session.assign(id, Side::Left).unwrap();
    }
    for (_, id) in &order[order.len() - 7..] {
        session.assign(id, Side::Right).unwrap();
    }
    let compass = engine.calibrate(&session, &Default::default()).unwrap();
    let store = DirectionStore::open(dir).unwrap();
    store.save(&compass, "dusk", 0, &engine.info().fingerprint()).unwrap().id.to_string()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &[][..],
        &["fly"],
        &["moderate", "x"],
        &["moderate", "x", "maybe"],
        &["serve", "--svm-c", "-1"],
        &["serve", "--backend", "ftp://x"],
        &["eval", "--seeds", "0"],
        &["eval", "--attribute", "5"],
        &["eval", "--space", "everywhere"],
    ] {
        let out = latcompass(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
    }
    let out = Command::new(env!("CARGO_BIN_EXE_latcompass"))
        .args(["serve"])
        .env("LATCOMPASS_TRUNCATION_THETA", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "env overrides are validated too");
}

#[test]
fn moderating_an_unknown_record_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = latcompass(&["moderate", "unknown-id", "approved"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("UnknownRecord"), "{}", stderr(&out));
}

#[test]
fn moderate_export_and_import() {
    let dir = tempfile::tempdir().unwrap();
    let id = saved_record(dir.path());
    let out = latcompass(&["moderate", &id, "approved"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let store = DirectionStore::open(dir.path()).unwrap();
    assert_eq!(store.list(Some("approved".parse().unwrap()), None).len(), 1);

    let file = dir.path().join("export.json");
    let out = latcompass(&["export-direction", &id, file.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let out = latcompass(&["export-direction", &id, file.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1), "refuses to overwrite without --force");
    let out = latcompass(&["export-direction", &id, file.to_str().unwrap(), "--force"], dir.path());
    assert_eq!(out.status.code(), Some(0));

    let other = tempfile::tempdir().unwrap();
    let out = latcompass(&["import-direction", file.to_str().unwrap()], other.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("pending"));
    let imported = DirectionStore::open(other.path()).unwrap().get(&id.as_str().into()).unwrap();
    let original = store.get(&id.as_str().into()).unwrap();
    assert_eq!(imported.direction, original.direction);
    assert_eq!(imported.label, "dusk");

    let out = latcompass(&["import-direction", file.to_str().unwrap()], other.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("DuplicateRecord"));

    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{\"id\": 3}").unwrap();
    let out = latcompass(&["import-direction", garbage.to_str().unwrap()], other.path());
    assert_eq!(out.status.code(), Some(1));
    let out = latcompass(&["import-direction", "/nonexistent/file.json"], other.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn serve_with_unreachable_backend_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = format!("http://127.0.0.1:{port}");
    let out = latcompass(&["serve", "--backend", &backend, "--port", "0"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("backend"), "{}", stderr(&out));
}

#[test]
fn eval_writes_a_metrics_file() {
    let dir = tempfile::tempdir().unwrap();
    let out_file = dir.path().join("metrics.json");
    let out = latcompass(
        &["eval", "--seeds", "2", "--attribute", "1", "--space", "scene", "--out", out_file.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let metrics: Value = serde_json::from_slice(&std::fs::read(&out_file).unwrap()).unwrap();
    let reports = metrics.as_array().unwrap();
    assert_eq!(reports.len(), 1);
    let r = &reports[0];
    for key in
        ["attribute", "space", "n_train", "seeds", "cosines", "median_cosine", "monotonic_fraction", "config_digest"]
    {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    assert_eq!(r["attribute"], 1);
    assert_eq!(r["space"], "scene");
    assert_eq!(r["n_train"], 14);
    assert_eq!(r["seeds"], serde_json::json!([0, 1]));
    assert_eq!(r["cosines"].as_array().unwrap().len(), 2);

    let out = latcompass(&["eval", "--seeds", "1", "--n-train", "13", "--out", out_file.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1), "policy violation is a runtime error");
}
