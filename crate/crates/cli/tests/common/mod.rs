#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_langfield"));
    c.env_remove("LANGFIELD_THREADS");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic 4-region scene and its frontal camera in `dir`.
pub fn scene_and_camera(dir: &Path, resolution: u32) -> (PathBuf, PathBuf) {
    let scene = dir.join("scene.lfs");
    let camera = dir.join("camera.json");
    ok(&["synth", "--seed", "1", "--n", "2000", "--k", "8", "--c", "16", "--regions", "4", "-o", s(&scene)]);
    let r = resolution.to_string();
    ok(&["camera", "--width", &r, "--height", &r, "-o", s(&camera)]);
    (scene, camera)
}
