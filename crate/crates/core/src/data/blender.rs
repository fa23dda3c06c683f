//! Reader and writer for `transforms_{split}.json` datasets.
//!
//! Poses are camera-to-world matrices in the OpenGL convention (camera looks
//! down −z, +y up). Images are straight-alpha RGBA PNGs; in memory they are
//! kept premultiplied. Frames may carry an integer `scale` key marking a
//! downsampled copy; its intrinsics are the base ones divided by the scale.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, SVD};
use serde::{Deserialize, Serialize};

use super::{DataError, ScaledDataset, Split, ViewRecord};
use crate::geometry::{Mat3, Vec3};
use crate::raster::Image;
use crate::render::camera::rotation_error;
use crate::render::{Camera, Intrinsics};

/// Poses whose rotation part is this close to orthonormal are snapped to the
/// nearest rotation; anything worse is rejected.
const RIGID_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Serialize, Deserialize)]
struct TransformsFile {
    camera_angle_x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    camera_angle_y: Option<f64>,
    frames: Vec<FrameEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameEntry {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<u32>,
}

fn gl_to_cv() -> Mat3 {
    Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

fn frame_image_path(root: &Path, file_path: &str) -> PathBuf {
    let p = root.join(file_path.trim_start_matches("./"));
    if p.extension().is_some() {
        p
    } else {
        p.with_extension("png")
    }
}

fn pose_from_matrix(m: &[[f64; 4]; 4], frame: &str) -> Result<(Mat3, Vec3), DataError> {
    let mat = Matrix4::from_fn(|r, c| m[r][c]);
    let bottom_ok = (mat[(3, 0)].abs() + mat[(3, 1)].abs() + mat[(3, 2)].abs() + (mat[(3, 3)] - 1.0).abs()) < 1e-9;
    let r_gl: Mat3 = mat.fixed_view::<3, 3>(0, 0).into_owned();
    if !bottom_ok || !mat.iter().all(|v| v.is_finite()) || r_gl.determinant().abs() < 1e-9 {
        return Err(DataError::NonInvertiblePose { frame: frame.to_string() });
    }
    let mut rotation = r_gl * gl_to_cv();
    let err = rotation_error(&rotation);
    if err > RIGID_TOLERANCE {
        return Err(DataError::NonRigidPose { frame: frame.to_string(), error: err });
    }
    if err > 0.0 {
        let svd = SVD::new(rotation, true, true);
        rotation = svd.u.expect("u") * svd.v_t.expect("v_t");
    }
    Ok((rotation, Vec3::new(mat[(0, 3)], mat[(1, 3)], mat[(2, 3)])))
}

/// Load `root/transforms_{split}.json` and its frames.
pub fn load_blender(root: &Path, split: Split, scene_radius: f64) -> Result<ScaledDataset, DataError> {
    let json_path = root.join(format!("transforms_{}.json", split.file_stem()));
    let text = fs::read_to_string(&json_path).map_err(io_err(&json_path))?;
    let parsed: TransformsFile = serde_json::from_str(&text)
        .map_err(|e| DataError::Transforms { path: json_path.display().to_string(), msg: e.to_string() })?;

    let mut loaded = Vec::with_capacity(parsed.frames.len());
    for f in &parsed.frames {
        let path = frame_image_path(root, &f.file_path);
        if !path.is_file() {
            return Err(DataError::MissingFrame(path.display().to_string()));
        }
        let mut image = Image::load_rgba(&path)?;
        for px in image.data.chunks_exact_mut(4) {
            let a = px[3];
            px[..3].iter_mut().for_each(|c| *c *= a);
        }
        let scale = f.scale.unwrap_or(1).max(1);
        loaded.push((f, image, scale));
    }

    // Base resolution comes from a full-scale frame if present, otherwise
    // from the first frame scaled back up.
    let base = loaded
        .iter()
        .find(|(_, _, s)| *s == 1)
        .or(loaded.first())
        .map(|(_, img, s)| (img.width * *s as usize, img.height * *s as usize));
    let Some((bw, bh)) = base else {
        return Ok(ScaledDataset { views: Vec::new(), scene_radius, split });
    };
    let fx = 0.5 * bw as f64 / (0.5 * parsed.camera_angle_x).tan();
    let fy = parsed.camera_angle_y.map_or(fx, |a| 0.5 * bh as f64 / (0.5 * a).tan());
    let base_k = Intrinsics { fx, fy, cx: bw as f64 / 2.0, cy: bh as f64 / 2.0, width: bw as u32, height: bh as u32 };

    let mut views = Vec::with_capacity(loaded.len());
    for (f, image, scale) in loaded {
        let name = f.file_path.clone();
        let expected = (bw / scale as usize, bh / scale as usize);
        if bw % scale as usize != 0 || bh % scale as usize != 0 || (image.width, image.height) != expected {
            return Err(DataError::Resolution { frame: name, got: (image.width, image.height), expected, scale });
        }
        let (rotation, translation) = pose_from_matrix(&f.transform_matrix, &name)?;
        let camera = Camera::new(base_k, rotation, translation)?.scaled(scale)?;
        views.push(ViewRecord { name, camera, image, scale });
    }
    Ok(ScaledDataset { views, scene_radius, split })
}

/// Write `dataset` under `root` as `transforms_{split}.json` plus one PNG
/// per view in `root/{split}/`. All views must share square pixels and a
/// centered principal point.
pub fn write_blender(dataset: &ScaledDataset, root: &Path) -> Result<(), DataError> {
    let stem = dataset.split.file_stem();
    let img_dir = root.join(stem);
    fs::create_dir_all(&img_dir).map_err(io_err(&img_dir))?;
    let mut frames = Vec::with_capacity(dataset.views.len());
    let mut angle_x = None;
    for (i, v) in dataset.views.iter().enumerate() {
        let k = &v.camera.intrinsics;
        angle_x.get_or_insert(2.0 * (0.5 * k.width as f64 / k.fx).atan());
        let file_stem = format!("r_{i:03}");
        let mut straight = v.image.clone();
        for px in straight.data.chunks_exact_mut(4) {
            let a = px[3];
            if a > 0.0 {
                px[..3].iter_mut().for_each(|c| *c /= a);
            }
        }
        straight.save_png(&img_dir.join(format!("{file_stem}.png")))?;
        let r = v.camera.rotation * gl_to_cv();
        let t = v.camera.translation;
        let mut m = [[0.0; 4]; 4];
        for row in 0..3 {
            for col in 0..3 {
                m[row][col] = r[(row, col)];
            }
            m[row][3] = t[row];
        }
        m[3][3] = 1.0;
        frames.push(FrameEntry {
            file_path: format!("./{stem}/{file_stem}"),
            transform_matrix: m,
            scale: (v.scale != 1).then_some(v.scale),
        });
    }
    let file = TransformsFile { camera_angle_x: angle_x.unwrap_or(0.0), camera_angle_y: None, frames };
    let json_path = root.join(format!("transforms_{stem}.json"));
    let text = serde_json::to_string_pretty(&file).expect("serializable");
    fs::write(&json_path, text).map_err(io_err(&json_path))
}
