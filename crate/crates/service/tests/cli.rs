use std::path::Path;
use std::process::{Command, Output};

use candle_core::{DType, Device};
use texfx_core::dataset::DatasetManifest;
use texfx_core::eval::MetricReport;
use texfx_core::net::{checkpoint, NetConfig, TransferNet};
use texfx_core::Image3;

fn texfx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_texfx"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tiny_checkpoint(path: &Path) {
    let cfg = NetConfig {
        base_channels: 4,
        content_channels: 8,
        style_channels: 4,
        disc_channels: 4,
        disc_downsamples: 2,
        ..NetConfig::default()
    };
    checkpoint::save(&TransferNet::new(cfg, DType::F32, &Device::Cpu).unwrap(), path).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_exits_with_usage() {
    let out = texfx(&["synth", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(texfx(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn synth_creates_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    ok(&texfx(&["synth", "--styles", "2", "--glyphs", "30", "--size", "64", "--seed", "7", "--out", s(&d)]));
    let m = DatasetManifest::load(&d).unwrap();
    assert_eq!(m.entries.len(), 60);
    assert_eq!(m.image_size, 64);
}

#[test]
fn inference_commands_write_images() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    ok(&texfx(&["synth", "--styles", "2", "--glyphs", "6", "--size", "32", "--seed", "1", "--out", s(&d)]));
    let m = DatasetManifest::load(&d).unwrap();
    let ckpt = dir.path().join("c.safetensors");
    tiny_checkpoint(&ckpt);
    let style = d.join(&m.entries[0].style_file);
    let glyph = d.join(&m.entries[1].glyph_file);

    let out = dir.path().join("o.png");
    ok(&texfx(&["stylize", "--style", s(&style), "--glyph", s(&glyph), "--checkpoint", s(&ckpt), "--out", s(&out)]));
    let img = Image3::load_png(&out).unwrap();
    assert_eq!((img.height(), img.width()), (32, 32));

    let out2 = dir.path().join("g.png");
    ok(&texfx(&["destylize", "--style", s(&style), "--checkpoint", s(&ckpt), "--out", s(&out2)]));
    assert!(out2.is_file());

    let report = dir.path().join("r.json");
    ok(&texfx(&["eval", "--checkpoint", s(&ckpt), "--manifest", s(&d), "--backbone", "random:3", "--out", s(&report)]));
    let r: MetricReport = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r.manifest_hash, m.hash());
    assert!(!r.rows.is_empty());

    let missing = texfx(&["stylize", "--style", "/nonexistent.png", "--glyph", s(&glyph), "--checkpoint", s(&ckpt)]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn train_and_finetune_write_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    ok(&texfx(&["synth", "--styles", "2", "--glyphs", "6", "--size", "16", "--seed", "1", "--out", s(&d)]));
    let cfg = serde_json::json!({
        "paired": d,
        "iterations": 3,
        "batch_size": 2,
        "net": {"base_channels": 4, "content_channels": 8, "style_channels": 4, "disc_channels": 4, "disc_downsamples": 2}
    });
    let cfg_path = dir.path().join("run.json");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let run = dir.path().join("run");
    ok(&texfx(&["train", "--config", s(&cfg_path), "--out", s(&run)]));
    let ckpt = run.join("final.safetensors");
    assert!(ckpt.is_file());
    let log = std::fs::read_to_string(run.join("train.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let m = DatasetManifest::load(&d).unwrap();
    let style = d.join(&m.entries[0].style_file);
    let glyph = d.join(&m.entries[0].glyph_file);
    let out = dir.path().join("ft.safetensors");
    ok(&texfx(&[
        "finetune", "--checkpoint", s(&ckpt), "--style", s(&style), "--glyph", s(&glyph), "--iterations", "2", "--out", s(&out),
    ]));
    checkpoint::load(&out, &Device::Cpu).unwrap();

    let bad = texfx(&["train", "--out", s(&run)]);
    assert_eq!(bad.status.code(), Some(1));
}
