//! Shared fixtures for the benchmarks.

use langfield::scene::random_scene;
use langfield::{Camera, Scene};

/// Random scene and a frontal camera, sized like the performance check.
pub fn fixture(n: usize, k: usize, c: usize, resolution: u32) -> (Scene, Camera) {
    let scene = random_scene(7, n, k, c);
    let cam = langfield::scene::synthetic_camera(resolution, resolution);
    (scene, cam)
}
