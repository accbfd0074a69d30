//! Shared helpers for driving the `ecm` binary.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ecm_core::control::Box3D;
use ecm_core::correspondence::Grid;
use ecm_core::geometry::{back_project, PixelCoord};
use ecm_core::scene_file::synthetic_scene;
use ecm_core::tensor_io::Tensor;

pub fn ecm(args: &[&str], threads: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ecm"));
    cmd.args(args);
    match threads {
        Some(n) => cmd.env("ECM_THREADS", n.to_string()),
        None => cmd.env_remove("ECM_THREADS"),
    };
    cmd.output().expect("ecm binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

/// Path as a `'static` argument string (tests only; leaks).
pub fn s(p: &Path) -> &'static str {
    Box::leak(p.to_str().unwrap().to_owned().into_boxed_str())
}

/// Deterministic `[C, H, W]` latent with values away from zero.
pub fn write_latent(path: &Path, c: u32, h: u32, w: u32) {
    let n = (c * h * w) as usize;
    let data = (0..n).map(|i| 1.0 + ((i * 7919) % 1000) as f32 / 1000.0).collect();
    Tensor::new(vec![c, h, w], data).unwrap().write(path).unwrap();
}

/// Ego point whose projection in the front camera lands exactly on the
/// center of latent cell `(h, w)` of a `grid`, at camera depth `depth`.
pub fn point_on_cell(grid: Grid, h: usize, w: usize, depth: f64) -> [f64; 3] {
    let cam = ecm_core::oracle::make_rig()[0].scaled_to(grid.width as u32, grid.height as u32);
    let p = back_project(&PixelCoord::new(w as f64 + 0.5, h as f64 + 0.5), &cam, depth).unwrap();
    [p.x, p.y, p.z]
}

/// Synthetic scene with a tracked car in front of the vehicle in both frames
/// and a frame-0 front feature tensor, written to `dir/scene.json`.
pub fn write_rich_scene(dir: &Path) -> PathBuf {
    let mut f = synthetic_scene().to_file_struct();
    for (frame, x) in [(0usize, 14.0), (1, 13.5)] {
        f.frames[frame].boxes.push(Box3D::new([x, -1.0, 0.8], [4.5, 1.9, 1.6], 0.1, "car", Some(7)).unwrap());
    }
    write_latent(&dir.join("front_0.ecmt"), 4, 28, 50);
    f.frames[0].features.insert("front".into(), "front_0.ecmt".into());
    let path = dir.join("scene.json");
    std::fs::write(&path, serde_json::to_string_pretty(&f).unwrap()).unwrap();
    path
}

/// Synthetic scene whose frame 1 carries only `boxes`.
pub fn write_scene_with_boxes(dir: &Path, boxes: Vec<Box3D>) -> PathBuf {
    let mut f = synthetic_scene().to_file_struct();
    f.frames[1].boxes = boxes;
    let path = dir.join("boxes.json");
    std::fs::write(&path, serde_json::to_string(&f).unwrap()).unwrap();
    path
}

/// Every command with output files, as `(name, args)`; `{dir}` is replaced by the output directory.
pub fn command_matrix(scene: &Path, latent: &Path) -> Vec<(&'static str, Vec<String>)> {
    let sc = s(scene).to_string();
    let lt = s(latent).to_string();
    let raw: Vec<(&str, Vec<&str>)> = vec![
        ("overlap", vec!["overlap", "--scene", &sc, "--query-view", "front", "--k", "5", "--out", "{dir}/overlap.csv"]),
        ("overlap-temporal", vec!["overlap", "--scene", &sc, "--candidates", "front@0,front_left@0,front_right", "--out", "{dir}/overlap_t.csv"]),
        ("verify", vec!["verify", "--scene", &sc, "--out", "{dir}/verify.json"]),
        ("sample", vec!["sample", "--seed", "42", "--out", "{dir}/plan.json"]),
        ("schedule", vec!["sample", "--mode", "reverse", "--total", "9", "--out", "{dir}/schedule.json"]),
        ("inject", vec!["inject", "--scene", &sc, "--latent-in", &lt, "--seed", "5", "--n-learned", "4", "--maps", "--identity", "--out", "{dir}/inj.ecmt"]),
        ("render", vec!["render", "--scene", &sc, "--view", "front_left", "--out", "{dir}/img.ppm", "--depth-out", "{dir}/depth.ecmt"]),
        ("field", vec!["field", "--scene", &sc, "--query", "front@1", "--target", "front_left@0", "--out", "{dir}/field.ecmt"]),
        ("make-scene", vec!["make-scene", "--out", "{dir}/scene_out.json"]),
    ];
    raw.into_iter().map(|(n, a)| (n, a.into_iter().map(String::from).collect())).collect()
}

/// Runs one matrix entry writing into `dir`; returns the produced files' bytes, sorted by name.
pub fn run_into(args: &[String], dir: &Path, threads: Option<usize>) -> Result<Vec<(String, Vec<u8>)>, String> {
    let args: Vec<String> = args.iter().map(|a| a.replace("{dir}", s(dir))).collect();
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = ecm(&refs, threads);
    if !o.status.success() {
        return Err(format!("{:?} failed: {}", refs, String::from_utf8_lossy(&o.stderr)));
    }
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    Ok(files)
}
