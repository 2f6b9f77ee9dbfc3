mod common;

use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use xcompose::core_model::PipelineConfig;
use xcompose::integrator::synthetic::LinearWorld;
use xcompose::integrator::{evaluate_loss, load_model, IntegratorModel, IntegratorVariant, MlpProfile};
use xcompose::pipeline::{compose_detailed, Phase, Trace};

const GOLDEN_COMPOSE_SHA256: &str = "a076fd3e16bcdb70e9f430a8af24fb81e9ab62eb18fa80e241d7ca5590c59924";

fn xcompose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xcompose"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn sha256_file(p: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(p).unwrap()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn compose_args<'a>(fx: &'a common::FixtureFiles, out: &'a Path) -> Vec<&'a str> {
    vec![
        "compose", "--bg", p(&fx.bg), "--fg", p(&fx.fg), "--fg-mask", p(&fx.fg_mask), "--bg-box", p(&fx.bg_box),
        "--place", "40,48,1.0", "--out", p(out),
    ]
}

fn read_trace(path: &Path) -> Trace {
    Trace::read_jsonl(path).unwrap()
}

#[test]
fn compose_writes_result_trace_and_preview() {
    let dir = tempfile::tempdir().unwrap();
    let fx = common::write_fixture(dir.path());
    let out = dir.path().join("out.png");
    let o = xcompose(&compose_args(&fx, &out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("20 denoiser calls"));
    for f in ["out.png", "out.preview.png", "out.trace.jsonl"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    assert_eq!(read_trace(&dir.path().join("out.trace.jsonl")).denoiser_calls(), 20);
    assert_eq!(sha256_file(&out), GOLDEN_COMPOSE_SHA256);

    // the library on the same files gives the same bytes
    let job = common::png_roundtrip(common::job(PipelineConfig::default()));
    let lib = compose_detailed(&job, &mut common::toy(), &common::fallback()).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), lib.image.to_png_bytes().unwrap());
}

#[test]
fn compose_defaults_placement_to_the_box() {
    let dir = tempfile::tempdir().unwrap();
    let fx = common::write_fixture(dir.path());
    let (out, fitted) = (dir.path().join("a.png"), dir.path().join("b.png"));
    let mut args = compose_args(&fx, &out);
    assert!(xcompose(&args).status.success());
    args.truncate(args.len() - 4);
    args.extend(["--out", p(&fitted)]);
    assert!(xcompose(&args).status.success());
    // the 48 px foreground fits the 48 px box at its origin
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&fitted).unwrap());
}

#[test]
fn explicit_trace_and_preview_paths() {
    let dir = tempfile::tempdir().unwrap();
    let fx = common::write_fixture(dir.path());
    let out = dir.path().join("r.png");
    let (trace, preview) = (dir.path().join("t.jsonl"), dir.path().join("p.png"));
    let mut args = compose_args(&fx, &out);
    args.extend(["--trace", p(&trace), "--preview", p(&preview), "--prompt", "a red disk"]);
    let o = xcompose(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(trace.is_file() && preview.is_file());
    assert!(!dir.path().join("r.trace.jsonl").exists());
}

#[test]
fn no_inversion_trace_has_only_reconstruction() {
    let dir = tempfile::tempdir().unwrap();
    let fx = common::write_fixture(dir.path());
    let out = dir.path().join("o.png");
    let mut args = compose_args(&fx, &out);
    args.push("--no-inversion");
    let o = xcompose(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = read_trace(&dir.path().join("o.trace.jsonl"));
    assert_eq!(trace.calls_in(Phase::Invert), 0);
    assert_eq!(trace.calls_in(Phase::Reconstruct), 10);
}

#[test]
fn missing_argument_exits_2_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let fx = common::write_fixture(dir.path());
    let o = xcompose(&["compose", "--bg", p(&fx.bg), "--fg-mask", p(&fx.fg_mask), "--out", "x.png"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("--fg") && err.contains("Usage"), "{err}");
}

#[test]
fn invalid_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let fx = common::write_fixture(dir.path());
    let out = dir.path().join("o.png");
    let mut args = compose_args(&fx, &out);
    args.extend(["--lambda-init", "2.5"]);
    assert_eq!(xcompose(&args).status.code(), Some(2));
    let mut args = compose_args(&fx, &out);
    args[2] = "/nonexistent/bg.png";
    let o = xcompose(&args);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("background"));
    let mut args = compose_args(&fx, &out);
    args[10] = "120,0,1";
    assert_eq!(xcompose(&args).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn unavailable_backbone_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let fx = common::write_fixture(dir.path());
    let out = dir.path().join("o.png");
    let mut args = compose_args(&fx, &out);
    args.extend(["--backbone", "sdxl"]);
    let o = xcompose(&args);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

fn small_world() -> LinearWorld {
    LinearWorld::projected(4, 64, 16, 0.7, 0.3, 5)
}

#[test]
fn train_mlp_writes_model_and_loss_curve() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("triplets.jsonl");
    common::write_world_triplets(&manifest, &small_world(), 400, 0);
    let model = dir.path().join("integrator.bin");
    let o = xcompose(&[
        "train-mlp", "--triplets", p(&manifest), "--lr", "1e-3", "--epochs", "15", "--batch-size", "32", "--hidden", "128",
        "--out-model", p(&model),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let curve = std::fs::read_to_string(dir.path().join("integrator.bin.loss.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some("epoch,train_loss,val_loss"));
    assert!(lines.count() >= 1);

    let m = load_model(&model).unwrap();
    assert_eq!(m.variant, IntegratorVariant::Residual);
    let meta = m.meta.clone().unwrap();
    assert_eq!((meta.train_triplets, meta.val_triplets), (320, 80));
    assert_eq!(meta.config.lr, 1e-3);

    let held_out = small_world().sample(200, 99);
    let zero = IntegratorModel::zeros(MlpProfile::for_shape(4, 64).unwrap());
    let baseline = evaluate_loss(&zero, &held_out).unwrap();
    let trained = evaluate_loss(&m, &held_out).unwrap();
    assert!(trained < 0.25 * baseline, "trained {trained} vs zero model {baseline}");
}

#[test]
fn train_mlp_records_the_direct_variant() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("triplets.jsonl");
    common::write_world_triplets(&manifest, &small_world(), 60, 1);
    let model = dir.path().join("direct.bin");
    let curve = dir.path().join("curve.csv");
    let o = xcompose(&[
        "train-mlp", "--triplets", p(&manifest), "--direct", "--epochs", "2", "--hidden", "32", "--out-model", p(&model),
        "--loss-curve", p(&curve),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(curve.is_file());
    assert_eq!(load_model(&model).unwrap().variant, IntegratorVariant::Direct);
    let o = xcompose(&["train-mlp", "--triplets", p(&manifest), "--direct", "--residual", "--out-model", p(&model)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_mlp_rejects_malformed_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("bad.jsonl");
    std::fs::write(&manifest, "{\"content_id\": 3}\n").unwrap();
    let model = dir.path().join("m.bin");
    let o = xcompose(&["train-mlp", "--triplets", p(&manifest), "--out-model", p(&model)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
    assert!(!model.exists());
}

#[test]
fn compose_uses_a_trained_model() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("triplets.jsonl");
    common::write_world_triplets(&manifest, &small_world(), 60, 2);
    let model = dir.path().join("m.bin");
    assert!(xcompose(&["train-mlp", "--triplets", p(&manifest), "--epochs", "2", "--hidden", "32", "--out-model", p(&model)])
        .status
        .success());
    let fx = common::write_fixture(dir.path());
    let out = dir.path().join("o.png");
    let mut args = compose_args(&fx, &out);
    args.extend(["--model", p(&model)]);
    let o = xcompose(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    std::fs::write(&model, b"garbage").unwrap();
    assert_eq!(xcompose(&args).status.code(), Some(2));
}

#[test]
fn eval_writes_report_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let fx = common::write_benchmark(dir.path(), &["a", "b"]);
    let script = dir.path().join("lpips.sh");
    std::fs::write(&script, "#!/bin/sh\necho 0.42\n").unwrap();
    let (report, csv, rows) = (dir.path().join("r.json"), dir.path().join("r.csv"), dir.path().join("rows.csv"));
    let scorer = format!("lpips=/bin/sh {}", script.display());
    let o = xcompose(&[
        "eval", "--manifest", p(&fx.manifest), "--results", p(&fx.results), "--scorer", &scorer, "--expect", "baseline",
        "--out", p(&report), "--csv", p(&csv), "--rows-csv", p(&rows),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("2 scored, 0 missing"), "{stdout}");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["aggregates"]["lpips"], 0.42);
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("method,"));
    assert_eq!(std::fs::read_to_string(&rows).unwrap().lines().count(), 3);

    let o = xcompose(&["eval", "--manifest", p(&fx.manifest), "--results", p(&fx.results), "--scorer", "fid=/bin/true"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn presets_prints_the_default_config() {
    let o = xcompose(&["presets"]);
    assert!(o.status.success());
    let cfg: PipelineConfig = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(cfg, PipelineConfig::default());
}

#[test]
fn serve_rejects_a_bad_setting() {
    let o = xcompose(&["serve", "--workers", "0", "--addr", "127.0.0.1:0"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn serve_answers_over_tcp() {
    use std::io::{Read, Write};
    use std::net::{TcpListener, TcpStream};
    use std::time::{Duration, Instant};

    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    let addr = format!("127.0.0.1:{port}");
    let mut child = Command::new(env!("CARGO_BIN_EXE_xcompose"))
        .args(["serve", "--addr", &addr, "--data-dir", p(dir.path())])
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let response = loop {
        if let Ok(mut s) = TcpStream::connect(&addr) {
            s.write_all(b"GET /v1/healthz HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").unwrap();
            let mut buf = String::new();
            s.read_to_string(&mut buf).unwrap();
            break buf;
        }
        assert!(Instant::now() < deadline, "server did not come up");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("\"status\":\"ok\""), "{response}");
}
