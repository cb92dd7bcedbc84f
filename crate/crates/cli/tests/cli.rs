use std::path::Path;
use std::process::{Command, Output};

use relume_core::envlight::EnvMap;
use relume_core::io::{self, bundle::import_viewer_bundle};
use relume_core::{Image, Rgb};

fn relume(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relume"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = relume(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn sky_file(dir: &Path) -> std::path::PathBuf {
    let env = EnvMap::from_fn(16, |d| Rgb::new(0.5 + 0.5 * d.y().max(0.0), 0.6, 0.7 - 0.2 * d.x())).unwrap();
    let path = dir.join("sky.pfm");
    io::write_env(&path, &env).unwrap();
    path
}

#[test]
fn usage_errors_exit_2() {
    let out = relume(&["render", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    // Generators refuse to run without an explicit seed.
    let out = relume(&["gen-scene", "--out", "/tmp/never"]);
    assert_eq!(out.status.code(), Some(2));
    let out = relume(&["gen-masks", "--out", "/tmp/never"]);
    assert_eq!(out.status.code(), Some(2));
    let out = relume(&["olat-composite", "--stack", "x", "--out", "y.pfm"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(relume(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.hdr");
    std::fs::write(&bad, b"#?RADIANCE\n\n-Y 4 +X 8\n\x02\x02").unwrap();
    let out = relume(&["convolve-hdri", "--env", s(&bad), "--out", s(&tmp.path().join("c"))]);
    assert_eq!(out.status.code(), Some(3));
    let missing = tmp.path().join("nothing.pfm");
    let out = relume(&["eval", "--pred", s(&missing), "--ref", s(&missing)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn eval_of_identical_images() {
    let tmp = tempfile::tempdir().unwrap();
    let img = Image::from_fn(20, 14, |x, y| Rgb::new(x as f64 / 20.0, y as f64 / 14.0, 0.3));
    let path = tmp.path().join("x.pfm");
    io::write_hdr(&path, &img).unwrap();
    let report: serde_json::Value = serde_json::from_str(&ok(&["eval", "--pred", s(&path), "--ref", s(&path)])).unwrap();
    assert_eq!(report["ssim"], 1.0);
    assert_eq!(report["mae"], 0.0);
    assert_eq!(report["mse"], 0.0);
    assert!(report["lpips"].is_null());
}

#[test]
fn scene_render_relight_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let sky = sky_file(t);
    let bundle = t.join("scene");
    ok(&["gen-scene", "--seed", "4", "--kind", "heightfield", "--resolution", "20", "--out", s(&bundle)]);
    assert!(bundle.join("manifest.json").exists());

    let renders = t.join("renders");
    ok(&["render", "--bundle", s(&bundle), "--env", s(&sky), "--out", s(&renders)]);
    let relit = t.join("relit.pfm");
    ok(&["relight", "--bundle", s(&bundle), "--env", s(&sky), "--out", s(&relit)]);
    assert_eq!(
        std::fs::read(renders.join("pbr.pfm")).unwrap(),
        std::fs::read(&relit).unwrap()
    );

    let albedo = t.join("albedo.pfm");
    let out = ok(&[
        "recover-albedo",
        "--render",
        s(&renders.join("diffuse.pfm")),
        "--bundle",
        s(&bundle),
        "--env",
        s(&sky),
        "--out",
        s(&albedo),
    ]);
    assert!(out.contains("flagged_pixels"));
    assert_eq!(io::read_hdr(&albedo).unwrap().dims(), (20, 20));

    let conv = t.join("conv");
    ok(&["convolve-hdri", "--env", s(&sky), "--exponents", "1,8", "--height", "8", "--out", s(&conv)]);
    assert_eq!(io::read_hdr(&conv.join("env_phong_8.pfm")).unwrap().dims(), (16, 8));
}

#[test]
fn olat_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let sky = sky_file(t);
    let bundle = t.join("sphere");
    ok(&["gen-scene", "--seed", "0", "--resolution", "16", "--out", s(&bundle)]);
    let stack = t.join("stack");
    ok(&[
        "olat-render", "--bundle", s(&bundle), "--seed", "0", "--lights", "24", "--component", "diffuse", "--out",
        s(&stack),
    ]);
    let weights = t.join("w.json");
    let comp = t.join("comp.pfm");
    ok(&[
        "olat-composite", "--stack", s(&stack), "--env", s(&sky), "--save-weights", s(&weights), "--out", s(&comp),
    ]);
    let comp2 = t.join("comp2.pfm");
    ok(&["olat-composite", "--stack", s(&stack), "--weights", s(&weights), "--out", s(&comp2)]);
    assert_eq!(std::fs::read(&comp).unwrap(), std::fs::read(&comp2).unwrap());

    let ps = t.join("ps");
    let out = ok(&["photometric-stereo", "--stack", s(&stack), "--out", s(&ps)]);
    let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(summary["valid_pixels"].as_u64().unwrap() > 100);
    assert!(ps.join("normal.pfm").exists() && ps.join("valid.png").exists());
}

#[test]
fn masks_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["gen-masks", "--seed", "11", "--count", "6", "--height", "40", "--width", "56", "--out", s(dir)]);
    }
    for f in ["masks.json", "mask_00000.png", "mask_00005.png"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    let index: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("masks.json")).unwrap()).unwrap();
    assert_eq!(index["masks"].as_array().unwrap().len(), 6);
    let out = relume(&["gen-masks", "--seed", "1", "--height", "0", "--out", s(&tmp.path().join("c"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn export_viewer_revalidates() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let sky = sky_file(t);
    let bundle = t.join("scene");
    ok(&["gen-scene", "--seed", "2", "--resolution", "24", "--out", s(&bundle)]);
    let view = t.join("viewer");
    ok(&["export-viewer", "--bundle", s(&bundle), "--env", s(&sky), "--out", s(&view)]);
    let vb = import_viewer_bundle(&view).unwrap();
    assert_eq!(vb.convolved.len(), 4);
    assert_eq!(vb.env_preview.height(), 16);
    assert!(vb.manifest.scene.is_some());
}
