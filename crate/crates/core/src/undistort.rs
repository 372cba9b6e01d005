//! Tangent-plane undistortion patches.
//!
//! Every patch center on a regular `N x N` image grid is lifted to the unit
//! sphere. A horizontal neighbour pixel fixes the in-plane orientation of the
//! tangent plane at that center, an `M x M` square grid of side `l` is laid out
//! on the plane, and each grid point is projected back into the fisheye image
//! and bilinearly sampled.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraError, FisheyeCamera, Pixel2, Point3};
use crate::image::{Image, ImageError};

#[derive(Debug, Error)]
pub enum UndistortError {
    #[error("degenerate neighbour ray at cell {cell:?}")]
    DegenerateNeighbor { cell: Option<(usize, usize)> },
    #[error("invalid crop: {cols_each_side} columns per side from a grid with {grid_cols} columns")]
    InvalidCrop {
        cols_each_side: usize,
        grid_cols: usize,
    },
    #[error("invalid patch grid config: {0}")]
    InvalidConfig(String),
    #[error("image is {image_w}x{image_h} but the camera expects {camera_w}x{camera_h}")]
    DimensionMismatch {
        image_w: usize,
        image_h: usize,
        camera_w: u32,
        camera_h: u32,
    },
    #[error("camera error at cell {cell:?}: {source}")]
    Camera {
        cell: Option<(usize, usize)>,
        #[source]
        source: CameraError,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Sampling parameters of the patch grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchGridConfig {
    /// Patch centers per image side (`N`).
    pub n_patches_per_side: usize,
    /// Samples per patch side (`M`).
    pub samples_per_patch: usize,
    /// Horizontal pixel offset of the orientation neighbour (`d`).
    pub neighbor_offset_px: f64,
    /// Side of the square on the tangent plane, in unit-sphere units (`l`).
    pub tangent_square_side: f64,
}

impl Default for PatchGridConfig {
    fn default() -> Self {
        Self {
            n_patches_per_side: 16,
            samples_per_patch: 16,
            neighbor_offset_px: 8.0,
            tangent_square_side: 0.2,
        }
    }
}

impl PatchGridConfig {
    pub fn validate(&self) -> Result<(), UndistortError> {
        if self.n_patches_per_side < 1 {
            return Err(UndistortError::InvalidConfig("n_patches_per_side must be >= 1".into()));
        }
        if self.samples_per_patch < 2 {
            return Err(UndistortError::InvalidConfig("samples_per_patch must be >= 2".into()));
        }
        if !(self.neighbor_offset_px > 0.0) {
            return Err(UndistortError::InvalidConfig("neighbor_offset_px must be > 0".into()));
        }
        if !(self.tangent_square_side > 0.0) {
            return Err(UndistortError::InvalidConfig("tangent_square_side must be > 0".into()));
        }
        Ok(())
    }
}

/// Orthonormal frame of the tangent plane at a patch center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentFrame {
    pub center_on_sphere: Point3,
    pub axis_x: Point3,
    pub axis_y: Point3,
    pub axis_z: Point3,
}

/// One resampled patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// Grid row (vertical center index `j`).
    pub row: usize,
    /// Grid column (horizontal center index `i`).
    pub col: usize,
    pub center_px: Pixel2,
    pub frame: TangentFrame,
    /// `M * M` fisheye coordinates, index `n * M + m` (`m` along `axis_x`).
    pub sample_coords: Vec<Pixel2>,
    /// `M * M * channels` values, same order as `sample_coords`, channels interleaved.
    pub values: Vec<f64>,
    /// Fraction of sample coordinates that fell outside the image and were clamped.
    pub clamped_fraction: f64,
}

/// Grid of resampled patches in row-major grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct UndistortedPatchSet {
    pub rows: usize,
    pub cols: usize,
    pub samples_per_patch: usize,
    pub channels: usize,
    pub patches: Vec<Patch>,
}

impl UndistortedPatchSet {
    pub fn grid_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patch(&self, row: usize, col: usize) -> &Patch {
        &self.patches[row * self.cols + col]
    }

    /// Tiles patches in grid order into a single `(cols*M) x (rows*M)` image.
    pub fn mosaic(&self) -> Result<Image, UndistortError> {
        let m = self.samples_per_patch;
        let mut img = Image::filled(self.cols * m, self.rows * m, self.channels, 0.0)?;
        for (k, patch) in self.patches.iter().enumerate() {
            let (r, c) = (k / self.cols, k % self.cols);
            for n in 0..m {
                for mm in 0..m {
                    for ch in 0..self.channels {
                        let v = patch.values[(n * m + mm) * self.channels + ch];
                        img.set(c * m + mm, r * m + n, ch, v);
                    }
                }
            }
        }
        Ok(img)
    }

    /// JSON sidecar with grid shape, frames and sample coordinates.
    pub fn sidecar(&self, config: &PatchGridConfig) -> serde_json::Value {
        let cells: Vec<serde_json::Value> = self
            .patches
            .iter()
            .map(|p| {
                serde_json::json!({
                    "row": p.row,
                    "col": p.col,
                    "center_px": [p.center_px.x, p.center_px.y],
                    "frame": {
                        "center_on_sphere": p.frame.center_on_sphere.as_slice(),
                        "axis_x": p.frame.axis_x.as_slice(),
                        "axis_y": p.frame.axis_y.as_slice(),
                        "axis_z": p.frame.axis_z.as_slice(),
                    },
                    "clamped_fraction": p.clamped_fraction,
                    "sample_coords": p.sample_coords.iter().map(|c| [c.x, c.y]).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({
            "grid_shape": [self.rows, self.cols],
            "samples_per_patch": self.samples_per_patch,
            "channels": self.channels,
            "config": config,
            "cells": cells,
        })
    }
}

/// Patch centers `((W/N)(i + 1/2), (H/N)(j + 1/2))`, indexed `[j][i]`.
pub fn patch_centers(config: &PatchGridConfig, width: usize, height: usize) -> Vec<Vec<Pixel2>> {
    let n = config.n_patches_per_side;
    let sx = width as f64 / n as f64;
    let sy = height as f64 / n as f64;
    (0..n)
        .map(|j| {
            (0..n)
                .map(|i| Pixel2::new(sx * (i as f64 + 0.5), sy * (j as f64 + 0.5)))
                .collect()
        })
        .collect()
}

/// Tangent frame at `center_px` oriented by the neighbour `d` pixels to the right.
pub fn tangent_frame(
    camera: &FisheyeCamera,
    center_px: &Pixel2,
    d: f64,
) -> Result<TangentFrame, UndistortError> {
    let lift = |px: &Pixel2| {
        camera
            .unproject(px, 1.0)
            .map_err(|source| UndistortError::Camera { cell: None, source })
    };
    let raw = lift(center_px)?;
    let center = raw / raw.norm();
    let neighbour = lift(&Pixel2::new(center_px.x + d, center_px.y))?;

    let denom = neighbour.dot(&center);
    if !(denom > 0.0) {
        return Err(UndistortError::DegenerateNeighbor { cell: None });
    }
    let on_plane = neighbour * (center.dot(&center) / denom);
    let offset = on_plane - center;
    let len = offset.norm();
    if !(len > 1e-12) {
        return Err(UndistortError::DegenerateNeighbor { cell: None });
    }
    let axis_x = offset / len;
    let axis_z = center;
    let cross = axis_z.cross(&axis_x);
    let axis_y = cross / cross.norm();
    Ok(TangentFrame {
        center_on_sphere: center,
        axis_x,
        axis_y,
        axis_z,
    })
}

/// Points `p_c + (l/M)(m~ v_x + n~ v_y)` with `m~ = m - (M-1)/2`, index `n * M + m`.
pub fn sample_grid(frame: &TangentFrame, config: &PatchGridConfig) -> Vec<Point3> {
    let m = config.samples_per_patch;
    let half = (m as f64 - 1.0) / 2.0;
    let step = config.tangent_square_side / m as f64;
    let mut out = Vec::with_capacity(m * m);
    for n in 0..m {
        let dn = n as f64 - half;
        for mm in 0..m {
            let dm = mm as f64 - half;
            out.push(frame.center_on_sphere + (frame.axis_x * dm + frame.axis_y * dn) * step);
        }
    }
    out
}

fn build_patch(
    image: &Image,
    camera: &FisheyeCamera,
    config: &PatchGridConfig,
    row: usize,
    col: usize,
    center_px: Pixel2,
) -> Result<Patch, UndistortError> {
    let cell = Some((row, col));
    let frame = tangent_frame(camera, &center_px, config.neighbor_offset_px).map_err(|e| match e {
        UndistortError::DegenerateNeighbor { .. } => UndistortError::DegenerateNeighbor { cell },
        UndistortError::Camera { source, .. } => UndistortError::Camera { cell, source },
        other => other,
    })?;
    let points = sample_grid(&frame, config);
    let channels = image.channels();
    let mut sample_coords = Vec::with_capacity(points.len());
    let mut values = Vec::with_capacity(points.len() * channels);
    let mut clamped = 0usize;
    for p in &points {
        let c = camera
            .project(p)
            .map_err(|source| UndistortError::Camera { cell, source })?;
        if !image.contains(&c) {
            clamped += 1;
        }
        for ch in 0..channels {
            values.push(image.bilinear(&c, ch));
        }
        sample_coords.push(c);
    }
    Ok(Patch {
        row,
        col,
        center_px,
        frame,
        clamped_fraction: clamped as f64 / points.len() as f64,
        sample_coords,
        values,
    })
}

/// Builds every patch of the grid, in row-major order.
pub fn generate_patches(
    image: &Image,
    camera: &FisheyeCamera,
    config: &PatchGridConfig,
) -> Result<UndistortedPatchSet, UndistortError> {
    config.validate()?;
    if image.width() != camera.image_width() as usize || image.height() != camera.image_height() as usize {
        return Err(UndistortError::DimensionMismatch {
            image_w: image.width(),
            image_h: image.height(),
            camera_w: camera.image_width(),
            camera_h: camera.image_height(),
        });
    }
    let n = config.n_patches_per_side;
    let centers = patch_centers(config, image.width(), image.height());
    let mut patches = Vec::with_capacity(n * n);
    for (j, row) in centers.iter().enumerate() {
        for (i, center) in row.iter().enumerate() {
            patches.push(build_patch(image, camera, config, j, i, *center)?);
        }
    }
    Ok(UndistortedPatchSet {
        rows: n,
        cols: n,
        samples_per_patch: config.samples_per_patch,
        channels: image.channels(),
        patches,
    })
}

/// Drops the `cols_each_side` leftmost and rightmost grid columns.
pub fn crop_boundary(
    set: &UndistortedPatchSet,
    cols_each_side: usize,
) -> Result<UndistortedPatchSet, UndistortError> {
    if 2 * cols_each_side >= set.cols {
        return Err(UndistortError::InvalidCrop {
            cols_each_side,
            grid_cols: set.cols,
        });
    }
    let keep = cols_each_side..set.cols - cols_each_side;
    let patches = set
        .patches
        .iter()
        .enumerate()
        .filter(|(k, _)| keep.contains(&(k % set.cols)))
        .map(|(_, p)| p.clone())
        .collect();
    Ok(UndistortedPatchSet {
        rows: set.rows,
        cols: set.cols - 2 * cols_each_side,
        samples_per_patch: set.samples_per_patch,
        channels: set.channels,
        patches,
    })
}
