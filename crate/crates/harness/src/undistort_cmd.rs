//! Fisheye image to tangent-patch mosaic plus JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use egofit_core::camera::FisheyeCamera;
use egofit_core::image::Image;
use egofit_core::undistort::{crop_boundary, generate_patches, PatchGridConfig, UndistortedPatchSet};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct UndistortOutputs {
    pub mosaic: PathBuf,
    pub sidecar: PathBuf,
    pub patch_count: usize,
}

/// Output paths for `prefix`: `<prefix>.pgm` or `<prefix>.ppm`, and `<prefix>.json`.
pub fn output_paths(prefix: &Path, channels: usize) -> (PathBuf, PathBuf) {
    let ext = if channels == 1 { "pgm" } else { "ppm" };
    let base = prefix.as_os_str().to_owned();
    let with = |e: &str| {
        let mut s = base.clone();
        s.push(".");
        s.push(e);
        PathBuf::from(s)
    };
    (with(ext), with("json"))
}

pub fn undistort_image(
    image: &Image,
    camera: &FisheyeCamera,
    config: &PatchGridConfig,
    crop: Option<usize>,
) -> Result<UndistortedPatchSet> {
    let set = generate_patches(image, camera, config)?;
    Ok(match crop {
        Some(c) => crop_boundary(&set, c)?,
        None => set,
    })
}

fn write_outputs(set: &UndistortedPatchSet, config: &PatchGridConfig, crop: Option<usize>, prefix: &Path) -> Result<UndistortOutputs> {
    let (mosaic_path, sidecar_path) = output_paths(prefix, set.channels);
    let mosaic = set.mosaic()?;
    let bytes = mosaic.encode_pnm()?;
    fs::write(&mosaic_path, bytes).map_err(|e| HarnessError::io(&mosaic_path, e))?;
    let mut sidecar = set.sidecar(config);
    sidecar["crop_cols_each_side"] = serde_json::json!(crop.unwrap_or(0));
    let mut text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    text.push('\n');
    fs::write(&sidecar_path, text).map_err(|e| HarnessError::io(&sidecar_path, e))?;
    Ok(UndistortOutputs {
        mosaic: mosaic_path,
        sidecar: sidecar_path,
        patch_count: set.len(),
    })
}

/// Reads the image, undistorts it and writes the mosaic and sidecar; anything
/// written before a failure is removed.
pub fn run_undistort(
    image_path: &Path,
    camera: &FisheyeCamera,
    config: &PatchGridConfig,
    crop: Option<usize>,
    prefix: &Path,
) -> Result<UndistortOutputs> {
    let image = Image::read_pnm(image_path)?;
    let set = undistort_image(&image, camera, config, crop)?;
    write_outputs(&set, config, crop, prefix).inspect_err(|_| {
        let (m, s) = output_paths(prefix, set.channels);
        let _ = fs::remove_file(m);
        let _ = fs::remove_file(s);
    })
}
