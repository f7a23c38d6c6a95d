//! A generated scene on disk:
//!
//! ```text
//! spec.txt      scene description (key=value)
//! cloud.txt     initial point cloud, `x y z` per line
//! labels.txt    0 (static) or 1 (dynamic) per cloud point
//! cameras.txt   `c t fx fy cx cy` then the row-major rotation and the
//!               translation, one line per frame
//! frames/cam{c}_t{t}.ppm
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::image::{read_image, write_image};
use super::IoError;
use crate::raster::CameraFrame;
use crate::scene::PointCloud;
use crate::synthetic::{SceneSpec, SyntheticFrame, SyntheticScene};

pub fn frame_file_name(camera: usize, timestep: usize) -> String {
    format!("cam{camera}_t{timestep}.ppm")
}

fn write(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(|e| IoError::file(path, e))
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| IoError::file(path, e))
}

pub fn save_scene_dir(dir: &Path, scene: &SyntheticScene) -> Result<(), IoError> {
    let frames = dir.join("frames");
    fs::create_dir_all(&frames).map_err(|e| IoError::file(&frames, e))?;
    write(&dir.join("spec.txt"), &scene.spec.to_text())?;
    write(&dir.join("cloud.txt"), &scene.init_cloud.to_text())?;
    let labels: String = scene.region_labels.iter().map(|l| format!("{l}\n")).collect();
    write(&dir.join("labels.txt"), &labels)?;
    let mut cams = String::from("# c t fx fy cx cy r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz\n");
    for f in &scene.frames {
        let c = &f.camera;
        let _ = write!(cams, "{} {} {} {} {} {}", f.camera_index, f.timestep, c.fx, c.fy, c.cx, c.cy);
        for v in c.rotation.iter().flatten().chain(&c.translation) {
            let _ = write!(cams, " {v}");
        }
        cams.push('\n');
        if let Some(gt) = &c.ground_truth {
            write_image(&frames.join(frame_file_name(f.camera_index, f.timestep)), gt)?;
        }
    }
    write(&dir.join("cameras.txt"), &cams)
}

/// Reads a scene directory; ground truth comes from the stored 8-bit frames.
pub fn load_scene_dir(dir: &Path) -> Result<SyntheticScene, IoError> {
    let spec = SceneSpec::parse(&read(&dir.join("spec.txt"))?)?;
    let init_cloud = PointCloud::parse(&read(&dir.join("cloud.txt"))?)?;
    let labels_path = dir.join("labels.txt");
    let region_labels = read(&labels_path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| match l.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(IoError::Format(format!("{}: bad label {other:?}", labels_path.display()))),
        })
        .collect::<Result<Vec<u8>, _>>()?;
    if region_labels.len() != init_cloud.len() {
        return Err(IoError::Format(format!(
            "{} labels for {} cloud points",
            region_labels.len(),
            init_cloud.len()
        )));
    }

    let cams_path = dir.join("cameras.txt");
    let mut frames = Vec::new();
    for (i, raw) in read(&cams_path)?.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| IoError::Format(format!("{} line {}: {msg}", cams_path.display(), i + 1));
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| err(format!("{e}")))?;
        if v.len() != 18 {
            return Err(err(format!("expected 18 values, got {}", v.len())));
        }
        let (ci, ts) = (v[0] as usize, v[1] as usize);
        if ts >= spec.n_timesteps || ci >= spec.n_cameras {
            return Err(err(format!("frame (camera {ci}, timestep {ts}) outside the scene")));
        }
        let path = dir.join("frames").join(frame_file_name(ci, ts));
        let gt = read_image(&path)?;
        if (gt.width, gt.height) != (spec.width, spec.height) {
            return Err(IoError::Format(format!("{}: size differs from spec.txt", path.display())));
        }
        let camera = CameraFrame {
            rotation: [[v[6], v[7], v[8]], [v[9], v[10], v[11]], [v[12], v[13], v[14]]],
            translation: [v[15], v[16], v[17]],
            fx: v[2],
            fy: v[3],
            cx: v[4],
            cy: v[5],
            width: spec.width,
            height: spec.height,
            t: spec.time(ts),
            ground_truth: Some(gt),
        };
        frames.push(SyntheticFrame {
            camera_index: ci,
            timestep: ts,
            camera,
        });
    }
    Ok(SyntheticScene {
        spec,
        frames,
        init_cloud,
        region_labels,
    })
}
