//! Decoder-side noise synthesis.
//!
//! Three high-pass random matrices are built by subtracting, from every
//! uniform draw, the draw of a randomly picked pixel in its 5×5
//! neighbourhood. Each matrix is then scaled to unit mean absolute Laplacian
//! response. Per-pixel noise levels come from the model evaluated on the L′
//! and M′ planes, and the XYB image is perturbed as
//!
//! ```text
//! X += ψ(n_L·R_L − n_M·R_M)       + (1−ψ)·R_c·(n_L − n_M)
//! Y += ψ(n_L·R_L + n_M·R_M)       + (1−ψ)·R_c·(n_L + n_M)
//! B += H_B·ψ(n_L·R_L + n_M·R_M)   + (1−ψ)·R_c·(n_L + n_M)
//! ```
//!
//! Every stage is a per-pixel map over the stateless RNG, so row-parallel
//! execution is bit-identical to sequential execution.

use rayon::prelude::*;
use thiserror::Error;

use crate::colorspace::{ColorSpace, OpsinConstants, PlanarImage};
use crate::model_fit::NoiseModel;
use crate::noise_metric::laplacian_at;
use crate::plane::Plane;
use crate::rng::{MatrixId, RngStream};

/// Half-width of the neighbourhood a pixel's partner is drawn from.
pub const NEIGHBOR_RADIUS: usize = 2;

/// Colour adjustment weight used when none is given.
pub const DEFAULT_PSI: f64 = 0.1;

const MIN_LAPLACIAN_ENERGY: f64 = 1e-12;

const BASE_DRAW: u32 = 0;
const NEIGHBOR_DRAW: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum RegenError {
    #[error("noise matrices need at least 3x3 pixels, got {width}x{height}")]
    TooSmall { width: usize, height: usize },
    #[error("matrix has no Laplacian energy ({0:e})")]
    DegenerateMatrix(f64),
    #[error("psi {0} outside [0, 1]")]
    BadPsi(f64),
    #[error("image, level map and noise field dimensions disagree")]
    DimensionMismatch,
    #[error("expected a {expected:?} image, got {found:?}")]
    WrongSpace {
        expected: ColorSpace,
        found: ColorSpace,
    },
}

fn neighbor_offsets() -> Vec<(isize, isize)> {
    let r = NEIGHBOR_RADIUS as isize;
    let mut v = Vec::with_capacity((2 * NEIGHBOR_RADIUS + 1).pow(2) - 1);
    for dy in -r..=r {
        for dx in -r..=r {
            if (dx, dy) != (0, 0) {
                v.push((dx, dy));
            }
        }
    }
    v
}

/// Unnormalised high-pass matrix: `U(x, y) − U(x′, y′)` with `(x′, y′)`
/// drawn uniformly from the window around `(x, y)` (centre excluded,
/// coordinates clamped to the matrix). Every term reads only the base draws,
/// never an already-written output.
pub fn generate_highpass(width: usize, height: usize, stream: &RngStream, id: MatrixId) -> Result<Plane, RegenError> {
    if width < 2 || height < 2 {
        return Err(RegenError::TooSmall { width, height });
    }
    let ms = stream.matrix(id);
    let offsets = neighbor_offsets();
    let last = offsets.len() - 1;
    let n = offsets.len() as f64;
    let (wmax, hmax) = (width as isize - 1, height as isize - 1);
    let mut out = Plane::new(width, height);
    // U is stateless, so the partner's draw is recomputed rather than read
    // from a stored base matrix; the result is the same either way.
    out.as_mut_slice()
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, v) in row.iter_mut().enumerate() {
                let u = ms.uniform(x as u32, y as u32, NEIGHBOR_DRAW);
                let (dx, dy) = offsets[((u * n) as usize).min(last)];
                let nx = (x as isize + dx).clamp(0, wmax) as u32;
                let ny = (y as isize + dy).clamp(0, hmax) as u32;
                *v = ms.uniform(x as u32, y as u32, BASE_DRAW) - ms.uniform(nx, ny, BASE_DRAW);
            }
        });
    Ok(out)
}

/// `(1/(w·h)) · Σ |L ∗ m|` over interior pixels. Row sums are reduced in row
/// order so the result does not depend on the thread count.
pub fn laplacian_energy(m: &Plane) -> f64 {
    let (w, h) = (m.width(), m.height());
    if w < 3 || h < 3 {
        return 0.0;
    }
    let rows: Vec<f64> = (1..h - 1)
        .into_par_iter()
        .map(|y| (1..w - 1).map(|x| laplacian_at(m, x, y).abs()).sum::<f64>())
        .collect();
    rows.iter().sum::<f64>() / (w * h) as f64
}

/// Scales `m` to unit [`laplacian_energy`].
pub fn normalize_highpass(m: &Plane) -> Result<Plane, RegenError> {
    let s = laplacian_energy(m);
    if !(s >= MIN_LAPLACIAN_ENERGY) {
        return Err(RegenError::DegenerateMatrix(s));
    }
    Ok(m.map(|v| v / s))
}

/// The three normalised noise matrices for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    pub r_l: Plane,
    pub r_m: Plane,
    pub r_c: Plane,
    pub seed: u64,
    pub psi: f64,
}

impl NoiseField {
    pub fn generate(width: usize, height: usize, seed: u64, psi: f64) -> Result<Self, RegenError> {
        if !(0.0..=1.0).contains(&psi) {
            return Err(RegenError::BadPsi(psi));
        }
        if width < 3 || height < 3 {
            return Err(RegenError::TooSmall { width, height });
        }
        let stream = RngStream::new(seed);
        let make = |id| normalize_highpass(&generate_highpass(width, height, &stream, id)?);
        Ok(Self {
            r_l: make(MatrixId::Long)?,
            r_m: make(MatrixId::Medium)?,
            r_c: make(MatrixId::Correlated)?,
            seed,
            psi,
        })
    }

    pub fn width(&self) -> usize {
        self.r_l.width()
    }

    pub fn height(&self) -> usize {
        self.r_l.height()
    }
}

/// Per-pixel noise levels of the L′ and M′ channels.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseLevelMap {
    pub n_l: Plane,
    pub n_m: Plane,
}

impl NoiseLevelMap {
    /// Multiplies both maps by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            n_l: self.n_l.map(|v| v * k),
            n_m: self.n_m.map(|v| v * k),
        }
    }
}

pub fn noise_levels(glms: &PlanarImage, model: &NoiseModel) -> Result<NoiseLevelMap, RegenError> {
    if glms.space() != ColorSpace::Glms {
        return Err(RegenError::WrongSpace {
            expected: ColorSpace::Glms,
            found: glms.space(),
        });
    }
    let predict = |p: &Plane| {
        let mut out = Plane::new(p.width(), p.height());
        out.as_mut_slice()
            .par_iter_mut()
            .zip(p.as_slice().par_iter())
            .for_each(|(o, &i)| *o = model.predict(i));
        out
    };
    Ok(NoiseLevelMap {
        n_l: predict(glms.plane(0)),
        n_m: predict(glms.plane(1)),
    })
}

/// Additive XYB perturbation for one pixel.
#[inline]
pub fn pixel_perturbation(n_l: f64, n_m: f64, r_l: f64, r_m: f64, r_c: f64, psi: f64, h_b: f64) -> [f64; 3] {
    let indep_diff = psi * (n_l * r_l - n_m * r_m);
    let indep_sum = psi * (n_l * r_l + n_m * r_m);
    let corr = 1.0 - psi;
    [
        indep_diff + corr * r_c * (n_l - n_m),
        indep_sum + corr * r_c * (n_l + n_m),
        h_b * indep_sum + corr * r_c * (n_l + n_m),
    ]
}

/// `(ΔX, ΔY, ΔB)` planes.
pub fn perturbation(levels: &NoiseLevelMap, field: &NoiseField, consts: &OpsinConstants) -> Result<[Plane; 3], RegenError> {
    if !levels.n_l.same_size(&field.r_l) || !levels.n_m.same_size(&field.r_l) {
        return Err(RegenError::DimensionMismatch);
    }
    let (w, h) = (field.width(), field.height());
    let (psi, h_b) = (field.psi, consts.h_b());
    let mut out = [Plane::new(w, h), Plane::new(w, h), Plane::new(w, h)];
    let [dx, dy, db] = &mut out;
    (
        dx.as_mut_slice().par_iter_mut(),
        dy.as_mut_slice().par_iter_mut(),
        db.as_mut_slice().par_iter_mut(),
        levels.n_l.as_slice().par_iter(),
        levels.n_m.as_slice().par_iter(),
        field.r_l.as_slice().par_iter(),
        field.r_m.as_slice().par_iter(),
        field.r_c.as_slice().par_iter(),
    )
        .into_par_iter()
        .for_each(|(ox, oy, ob, &nl, &nm, &rl, &rm, &rc)| {
            let [a, b, c] = pixel_perturbation(nl, nm, rl, rm, rc, psi, h_b);
            *ox = a;
            *oy = b;
            *ob = c;
        });
    Ok(out)
}

/// Returns a new XYB image with the synthesised noise added.
pub fn apply_noise(
    xyb: &PlanarImage,
    levels: &NoiseLevelMap,
    field: &NoiseField,
    consts: &OpsinConstants,
) -> Result<PlanarImage, RegenError> {
    let delta = perturbation(levels, field, consts)?;
    add_perturbation(xyb, &delta)
}

/// `xyb + delta`, channel by channel.
pub fn add_perturbation(xyb: &PlanarImage, delta: &[Plane; 3]) -> Result<PlanarImage, RegenError> {
    if xyb.space() != ColorSpace::Xyb {
        return Err(RegenError::WrongSpace {
            expected: ColorSpace::Xyb,
            found: xyb.space(),
        });
    }
    if !xyb.plane(0).same_size(&delta[0]) {
        return Err(RegenError::DimensionMismatch);
    }
    let (w, h) = (xyb.width(), xyb.height());
    let mut planes = [Plane::new(w, h), Plane::new(w, h), Plane::new(w, h)];
    for c in 0..3 {
        planes[c]
            .as_mut_slice()
            .par_iter_mut()
            .zip(xyb.plane(c).as_slice().par_iter().zip(delta[c].as_slice().par_iter()))
            .for_each(|(o, (&v, &d))| *o = v + d);
    }
    PlanarImage::new(ColorSpace::Xyb, planes).map_err(|_| RegenError::DimensionMismatch)
}

/// Noisy RGB image and the XYB perturbation that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesized {
    pub image: PlanarImage,
    pub perturbation: [Plane; 3],
}

/// The whole decode path in one per-pixel pass: RGB → g-LMS → XYB, add the
/// perturbation for levels `level_scale · n(I′)`, then back to clamped RGB.
/// Bit-identical to chaining [`noise_levels`], [`NoiseLevelMap::scaled`],
/// [`apply_noise`] and the colour conversions.
pub fn synthesize_rgb(
    rgb: &PlanarImage,
    model: &NoiseModel,
    level_scale: f64,
    field: &NoiseField,
    consts: &OpsinConstants,
) -> Result<Synthesized, RegenError> {
    if rgb.space() != ColorSpace::Rgb {
        return Err(RegenError::WrongSpace {
            expected: ColorSpace::Rgb,
            found: rgb.space(),
        });
    }
    let (w, h) = (rgb.width(), rgb.height());
    if w != field.width() || h != field.height() {
        return Err(RegenError::DimensionMismatch);
    }
    let (psi, h_b) = (field.psi, consts.h_b());
    let mut img = [Plane::new(w, h), Plane::new(w, h), Plane::new(w, h)];
    let mut delta = [Plane::new(w, h), Plane::new(w, h), Plane::new(w, h)];
    let [o0, o1, o2] = &mut img;
    let [d0, d1, d2] = &mut delta;
    let [r, g, b] = rgb.planes();
    (
        (
            o0.as_mut_slice().par_chunks_mut(w),
            o1.as_mut_slice().par_chunks_mut(w),
            o2.as_mut_slice().par_chunks_mut(w),
        ),
        (
            d0.as_mut_slice().par_chunks_mut(w),
            d1.as_mut_slice().par_chunks_mut(w),
            d2.as_mut_slice().par_chunks_mut(w),
        ),
        (r.as_slice().par_chunks(w), g.as_slice().par_chunks(w), b.as_slice().par_chunks(w)),
        (
            field.r_l.as_slice().par_chunks(w),
            field.r_m.as_slice().par_chunks(w),
            field.r_c.as_slice().par_chunks(w),
        ),
    )
        .into_par_iter()
        .for_each(|((o0, o1, o2), (d0, d1, d2), (r, g, b), (rl, rm, rc))| {
            for i in 0..w {
                let glms = consts.rgb_to_glms_px([r[i], g[i], b[i]]);
                let n_l = model.predict(glms[0]) * level_scale;
                let n_m = model.predict(glms[1]) * level_scale;
                let d = pixel_perturbation(n_l, n_m, rl[i], rm[i], rc[i], psi, h_b);
                let [x, y, bb] = consts.glms_to_xyb_px(glms);
                let noisy = [x + d[0], y + d[1], bb + d[2]];
                [o0[i], o1[i], o2[i]] = consts.glms_to_rgb_px(consts.xyb_to_glms_px(noisy));
                [d0[i], d1[i], d2[i]] = d;
            }
        });
    Ok(Synthesized {
        image: PlanarImage::new(ColorSpace::Rgb, img).map_err(|_| RegenError::DimensionMismatch)?,
        perturbation: delta,
    })
}
