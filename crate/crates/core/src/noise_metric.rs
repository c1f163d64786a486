//! Laplacian noise level of a patch: the mean absolute response of the
//! 5-point Laplacian over the patch pixels.

use thiserror::Error;

use crate::patch_selection::{Anchor, PATCH_SIZE};
use crate::plane::Plane;

/// 3×3 discrete Laplacian. Entries sum to zero.
pub const LAPLACIAN: [[i32; 3]; 3] = [[0, 1, 0], [1, -4, 1], [0, 1, 0]];

/// Pixels per patch.
pub const PATCH_PIXELS: usize = PATCH_SIZE * PATCH_SIZE;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("patch at ({}, {}) lacks a one-pixel margin inside a {width}x{height} plane", .anchor.x, .anchor.y)]
pub struct MarginUnavailable {
    pub anchor: Anchor,
    pub width: usize,
    pub height: usize,
}

/// Laplacian response at an interior pixel `(x, y)`.
#[inline]
pub(crate) fn laplacian_at(plane: &Plane, x: usize, y: usize) -> f64 {
    let above = plane.row(y - 1);
    let row = plane.row(y);
    let below = plane.row(y + 1);
    above[x] + below[x] + row[x - 1] + row[x + 1] - 4.0 * row[x]
}

/// Noise level `n̂(p)`. The stencil reads the real neighbouring pixels around
/// the patch, so patches touching the image border are rejected.
pub fn laplacian_noise_level(plane: &Plane, patch: Anchor) -> Result<f64, MarginUnavailable> {
    if patch.x < 1
        || patch.y < 1
        || patch.x + PATCH_SIZE + 1 > plane.width()
        || patch.y + PATCH_SIZE + 1 > plane.height()
    {
        return Err(MarginUnavailable {
            anchor: patch,
            width: plane.width(),
            height: plane.height(),
        });
    }
    let mut sum = 0.0;
    for y in patch.y..patch.y + PATCH_SIZE {
        for x in patch.x..patch.x + PATCH_SIZE {
            sum += laplacian_at(plane, x, y).abs();
        }
    }
    Ok(sum / PATCH_PIXELS as f64)
}
