//! Conversions between 8-bit-range RGB, gamma-corrected LMS and XYB.
//!
//! RGB is first mixed into long/medium/short cone responses, then each
//! response is cube-rooted ("g-LMS"). XYB is a linear opponent transform of
//! the first two g-LMS channels; the third channel passes through.
//!
//! All conversions are pure per-pixel maps and run row-parallel.

use rayon::prelude::*;
use thiserror::Error;

use crate::plane::Plane;

/// Tolerance applied to range checks on input planes.
pub const RANGE_TOLERANCE: f64 = 1e-6;

/// Cone-response mix applied to RGB (rows: L, M, S). Each row sums to 1.
pub const OPSIN_MIX: [[f64; 3]; 3] = [
    [0.355, 0.589, 0.056],
    [0.251, 0.715, 0.034],
    [0.092, 0.165, 0.743],
];

const MIN_DETERMINANT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorSpace {
    Rgb,
    Glms,
    Xyb,
}

#[derive(Debug, Error, PartialEq)]
pub enum ColorError {
    #[error("expected a {expected:?} image, got {found:?}")]
    WrongSpace {
        expected: ColorSpace,
        found: ColorSpace,
    },
    #[error("planes must share non-zero dimensions")]
    BadDimensions,
    #[error("non-finite value in plane {plane} at ({x}, {y})")]
    NonFinite { plane: usize, x: usize, y: usize },
    #[error("value {value} in plane {plane} at ({x}, {y}) is outside [{lo}, {hi}]")]
    OutOfRange {
        plane: usize,
        x: usize,
        y: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("mix matrix is not invertible (determinant {0:e})")]
    SingularMix(f64),
    #[error("opponent gains must be non-zero (H_L = {h_l}, H_M = {h_m})")]
    DegenerateGains { h_l: f64, h_m: f64 },
}

/// Three equally sized float planes tagged with the space they live in.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarImage {
    space: ColorSpace,
    planes: [Plane; 3],
}

impl PlanarImage {
    /// Checks that all planes share non-zero dimensions and hold only finite
    /// values. Range checks happen in the conversions that consume the image.
    pub fn new(space: ColorSpace, planes: [Plane; 3]) -> Result<Self, ColorError> {
        let (w, h) = (planes[0].width(), planes[0].height());
        if w == 0 || h == 0 || planes.iter().any(|p| p.width() != w || p.height() != h) {
            return Err(ColorError::BadDimensions);
        }
        for (c, plane) in planes.iter().enumerate() {
            if let Some(i) = plane.as_slice().iter().position(|v| !v.is_finite()) {
                return Err(ColorError::NonFinite {
                    plane: c,
                    x: i % w,
                    y: i / w,
                });
            }
        }
        Ok(Self { space, planes })
    }

    /// A constant-colour image.
    pub fn uniform(space: ColorSpace, width: usize, height: usize, value: [f64; 3]) -> Self {
        Self {
            space,
            planes: value.map(|v| Plane::filled(width, height, v)),
        }
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }

    pub fn plane(&self, c: usize) -> &Plane {
        &self.planes[c]
    }

    pub fn planes(&self) -> &[Plane; 3] {
        &self.planes
    }

    pub fn into_planes(self) -> [Plane; 3] {
        self.planes
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        [
            self.planes[0].get(x, y),
            self.planes[1].get(x, y),
            self.planes[2].get(x, y),
        ]
    }

    fn expect_space(&self, expected: ColorSpace) -> Result<(), ColorError> {
        if self.space == expected {
            Ok(())
        } else {
            Err(ColorError::WrongSpace {
                expected,
                found: self.space,
            })
        }
    }

    fn check_range(&self, lo: f64, hi: f64) -> Result<(), ColorError> {
        let w = self.width();
        for (c, plane) in self.planes.iter().enumerate() {
            let bad = plane
                .as_slice()
                .iter()
                .position(|&v| v < lo - RANGE_TOLERANCE || v > hi + RANGE_TOLERANCE);
            if let Some(i) = bad {
                return Err(ColorError::OutOfRange {
                    plane: c,
                    x: i % w,
                    y: i / w,
                    value: plane.as_slice()[i],
                    lo,
                    hi,
                });
            }
        }
        Ok(())
    }
}

/// Applies `f` to every pixel in parallel. Purely elementwise, so the result
/// does not depend on the thread count.
pub(crate) fn map_pixels(
    planes: &[Plane; 3],
    f: impl Fn([f64; 3]) -> [f64; 3] + Sync,
) -> [Plane; 3] {
    let (w, h) = (planes[0].width(), planes[0].height());
    let mut out = [Plane::new(w, h), Plane::new(w, h), Plane::new(w, h)];
    if w == 0 {
        return out;
    }
    let [o0, o1, o2] = &mut out;
    (
        o0.as_mut_slice().par_chunks_mut(w),
        o1.as_mut_slice().par_chunks_mut(w),
        o2.as_mut_slice().par_chunks_mut(w),
        planes[0].as_slice().par_chunks(w),
        planes[1].as_slice().par_chunks(w),
        planes[2].as_slice().par_chunks(w),
    )
        .into_par_iter()
        .for_each(|(a, b, c, p, q, r)| {
            for i in 0..w {
                [a[i], b[i], c[i]] = f([p[i], q[i], r[i]]);
            }
        });
    out
}

/// Opsin mixing matrix, its inverse, and the opponent-channel gains.
#[derive(Debug, Clone, PartialEq)]
pub struct OpsinConstants {
    mix: [[f64; 3]; 3],
    inverse: [[f64; 3]; 3],
    h_l: f64,
    h_m: f64,
    h_b: f64,
}

impl Default for OpsinConstants {
    fn default() -> Self {
        Self::new(OPSIN_MIX, 1.0, 1.0, 1.0).expect("default opsin constants are well-formed")
    }
}

impl OpsinConstants {
    pub fn new(mix: [[f64; 3]; 3], h_l: f64, h_m: f64, h_b: f64) -> Result<Self, ColorError> {
        if h_l == 0.0 || h_m == 0.0 {
            return Err(ColorError::DegenerateGains { h_l, h_m });
        }
        let inverse = invert3(&mix)?;
        Ok(Self {
            mix,
            inverse,
            h_l,
            h_m,
            h_b,
        })
    }

    /// Default constants with a different blue-channel noise gain.
    pub fn with_h_b(h_b: f64) -> Self {
        Self {
            h_b,
            ..Self::default()
        }
    }

    pub fn mix(&self) -> &[[f64; 3]; 3] {
        &self.mix
    }

    pub fn h_l(&self) -> f64 {
        self.h_l
    }

    pub fn h_m(&self) -> f64 {
        self.h_m
    }

    pub fn h_b(&self) -> f64 {
        self.h_b
    }

    /// RGB in `[0, 255]` to cube-rooted cone responses in `[0, 1]`.
    pub fn rgb_to_glms(&self, img: &PlanarImage) -> Result<PlanarImage, ColorError> {
        img.expect_space(ColorSpace::Rgb)?;
        img.check_range(0.0, 255.0)?;
        let planes = map_pixels(&img.planes, |p| self.rgb_to_glms_px(p));
        Ok(PlanarImage {
            space: ColorSpace::Glms,
            planes,
        })
    }

    #[inline]
    pub fn rgb_to_glms_px(&self, rgb: [f64; 3]) -> [f64; 3] {
        let m = &self.mix;
        let rgb = rgb.map(|v| v.clamp(0.0, 255.0) / 255.0);
        [0, 1, 2].map(|r| {
            let lin = m[r][0] * rgb[0] + m[r][1] * rgb[1] + m[r][2] * rgb[2];
            lin.max(0.0).cbrt().min(1.0)
        })
    }

    pub fn glms_to_xyb(&self, img: &PlanarImage) -> Result<PlanarImage, ColorError> {
        img.expect_space(ColorSpace::Glms)?;
        let planes = map_pixels(&img.planes, |p| self.glms_to_xyb_px(p));
        Ok(PlanarImage {
            space: ColorSpace::Xyb,
            planes,
        })
    }

    #[inline]
    pub fn glms_to_xyb_px(&self, [l, m, s]: [f64; 3]) -> [f64; 3] {
        let (hl, hm) = (self.h_l, self.h_m);
        [0.5 * (hl * l - hm * m), 0.5 * (hl * l + hm * m), s]
    }

    /// Inverse of [`Self::glms_to_xyb`]. Recovered channels are clamped to
    /// `[0, 1]`; added noise legitimately pushes pixels out of gamut.
    pub fn xyb_to_glms(&self, img: &PlanarImage) -> Result<PlanarImage, ColorError> {
        img.expect_space(ColorSpace::Xyb)?;
        let planes = map_pixels(&img.planes, |p| self.xyb_to_glms_px(p));
        Ok(PlanarImage {
            space: ColorSpace::Glms,
            planes,
        })
    }

    #[inline]
    pub fn xyb_to_glms_px(&self, [x, y, b]: [f64; 3]) -> [f64; 3] {
        [
            ((y + x) / self.h_l).clamp(0.0, 1.0),
            ((y - x) / self.h_m).clamp(0.0, 1.0),
            b.clamp(0.0, 1.0),
        ]
    }

    pub fn glms_to_rgb(&self, img: &PlanarImage) -> Result<PlanarImage, ColorError> {
        img.expect_space(ColorSpace::Glms)?;
        let planes = map_pixels(&img.planes, |p| self.glms_to_rgb_px(p));
        Ok(PlanarImage {
            space: ColorSpace::Rgb,
            planes,
        })
    }

    #[inline]
    pub fn glms_to_rgb_px(&self, glms: [f64; 3]) -> [f64; 3] {
        let inv = &self.inverse;
        let lin = glms.map(|v| v * v * v * 255.0);
        [0, 1, 2].map(|r| (inv[r][0] * lin[0] + inv[r][1] * lin[1] + inv[r][2] * lin[2]).clamp(0.0, 255.0))
    }
}

fn invert3(m: &[[f64; 3]; 3]) -> Result<[[f64; 3]; 3], ColorError> {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let c00 = cof(1, 2, 1, 2);
    let c01 = -cof(1, 2, 0, 2);
    let c02 = cof(1, 2, 0, 1);
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    if !det.is_finite() || det.abs() < MIN_DETERMINANT {
        return Err(ColorError::SingularMix(det));
    }
    // adjugate = transpose of the cofactor matrix
    let adj = [
        [c00, -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [c01, cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [c02, -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ];
    Ok(adj.map(|row| row.map(|v| v / det)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn px(space: ColorSpace, v: [f64; 3]) -> PlanarImage {
        PlanarImage::uniform(space, 1, 1, v)
    }

    fn assert_close(a: [f64; 3], b: [f64; 3], tol: f64) {
        for c in 0..3 {
            assert!((a[c] - b[c]).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn mix_rows_sum_to_one() {
        for row in OPSIN_MIX {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rgb_to_glms_examples() {
        let k = OpsinConstants::default();
        let black = k.rgb_to_glms(&px(ColorSpace::Rgb, [0.0; 3])).unwrap();
        assert_eq!(black.pixel(0, 0), [0.0; 3]);

        let white = k.rgb_to_glms(&px(ColorSpace::Rgb, [255.0; 3])).unwrap();
        assert_close(white.pixel(0, 0), [1.0; 3], 1e-12);

        // cube roots of the green column, computed independently
        let green = k.rgb_to_glms(&px(ColorSpace::Rgb, [0.0, 255.0, 0.0])).unwrap();
        assert_close(
            green.pixel(0, 0),
            [0.8382465312104411, 0.8942014036741273, 0.5484806552432618],
            1e-12,
        );
    }

    #[test]
    fn rgb_to_glms_rejects_out_of_range() {
        let k = OpsinConstants::default();
        let err = k.rgb_to_glms(&px(ColorSpace::Rgb, [0.0, 256.0, 0.0])).unwrap_err();
        assert!(matches!(err, ColorError::OutOfRange { plane: 1, .. }));
        let err = k.rgb_to_glms(&px(ColorSpace::Rgb, [-0.01, 0.0, 0.0])).unwrap_err();
        assert!(matches!(err, ColorError::OutOfRange { plane: 0, .. }));
        // within tolerance is accepted
        k.rgb_to_glms(&px(ColorSpace::Rgb, [255.0 + 5e-7, -5e-7, 0.0])).unwrap();
    }

    #[test]
    fn wrong_space_is_rejected() {
        let k = OpsinConstants::default();
        let err = k.glms_to_xyb(&px(ColorSpace::Rgb, [0.0; 3])).unwrap_err();
        assert_eq!(
            err,
            ColorError::WrongSpace {
                expected: ColorSpace::Glms,
                found: ColorSpace::Rgb
            }
        );
    }

    #[test]
    fn glms_xyb_examples() {
        let k = OpsinConstants::default();
        let xyb = k.glms_to_xyb(&px(ColorSpace::Glms, [0.7, 0.7, 0.123])).unwrap();
        assert_eq!(xyb.pixel(0, 0), [0.0, 0.7, 0.123]);

        let xyb = k.glms_to_xyb(&px(ColorSpace::Glms, [1.0, 0.0, 0.3])).unwrap();
        assert_eq!(xyb.pixel(0, 0), [0.5, 0.5, 0.3]);

        let xyb = k.glms_to_xyb(&px(ColorSpace::Glms, [0.8, 0.6, 0.2])).unwrap();
        assert_close(xyb.pixel(0, 0), [0.1, 0.7, 0.2], 1e-15);

        let glms = k.xyb_to_glms(&px(ColorSpace::Xyb, [0.0, 0.4, 0.9])).unwrap();
        assert_eq!(glms.pixel(0, 0), [0.4, 0.4, 0.9]);

        let glms = k.xyb_to_glms(&px(ColorSpace::Xyb, [0.1, 0.7, 0.2])).unwrap();
        assert_close(glms.pixel(0, 0), [0.8, 0.6, 0.2], 1e-15);
    }

    #[test]
    fn xyb_to_glms_clamps_out_of_gamut() {
        let k = OpsinConstants::default();
        let glms = k.xyb_to_glms(&px(ColorSpace::Xyb, [0.3, 0.9, -0.2])).unwrap();
        assert_close(glms.pixel(0, 0), [1.0, 0.6, 0.0], 1e-15);
    }

    #[test]
    fn glms_to_rgb_examples() {
        let k = OpsinConstants::default();
        let rgb = k.glms_to_rgb(&px(ColorSpace::Glms, [0.0; 3])).unwrap();
        assert_eq!(rgb.pixel(0, 0), [0.0; 3]);
        let rgb = k.glms_to_rgb(&px(ColorSpace::Glms, [1.0; 3])).unwrap();
        assert_close(rgb.pixel(0, 0), [255.0; 3], 1e-9);
    }

    #[test]
    fn singular_mix_is_rejected_at_construction() {
        let mix = [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]];
        assert!(matches!(
            OpsinConstants::new(mix, 1.0, 1.0, 1.0),
            Err(ColorError::SingularMix(_))
        ));
        assert!(matches!(
            OpsinConstants::new(OPSIN_MIX, 0.0, 1.0, 1.0),
            Err(ColorError::DegenerateGains { .. })
        ));
    }

    #[test]
    fn inverse_matches_identity() {
        let inv = invert3(&OPSIN_MIX).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let v: f64 = (0..3).map(|k| OPSIN_MIX[r][k] * inv[k][c]).sum();
                assert!((v - if r == c { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constructor_rejects_nan_and_mismatched_planes() {
        let mut p = Plane::new(2, 2);
        p.set(1, 1, f64::NAN);
        let err = PlanarImage::new(ColorSpace::Rgb, [p, Plane::new(2, 2), Plane::new(2, 2)]);
        assert_eq!(err.unwrap_err(), ColorError::NonFinite { plane: 0, x: 1, y: 1 });
        let err = PlanarImage::new(ColorSpace::Rgb, [Plane::new(2, 2), Plane::new(3, 2), Plane::new(2, 2)]);
        assert_eq!(err.unwrap_err(), ColorError::BadDimensions);
    }

    proptest! {
        #[test]
        fn glms_to_xyb_is_linear(
            u in prop::array::uniform3(0.0f64..1.0),
            v in prop::array::uniform3(0.0f64..1.0),
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
        ) {
            let k = OpsinConstants::default();
            let f = |p: [f64; 3]| k.glms_to_xyb(&px(ColorSpace::Glms, p)).unwrap().pixel(0, 0);
            let combo = [0, 1, 2].map(|c| a * u[c] + b * v[c]);
            let lhs = f(combo);
            let (fu, fv) = (f(u), f(v));
            for c in 0..3 {
                prop_assert!((lhs[c] - (a * fu[c] + b * fv[c])).abs() < 1e-14);
            }
        }

        #[test]
        fn y_is_monotone_in_each_rgb_channel(
            rgb in prop::array::uniform3(0.0f64..255.0),
            bump in 0.0f64..255.0,
            channel in 0usize..3,
        ) {
            let k = OpsinConstants::default();
            let y = |p: [f64; 3]| {
                let g = k.rgb_to_glms(&px(ColorSpace::Rgb, p)).unwrap();
                k.glms_to_xyb(&g).unwrap().pixel(0, 0)[1]
            };
            let mut brighter = rgb;
            brighter[channel] = (rgb[channel] + bump).min(255.0);
            prop_assert!(y(brighter) >= y(rgb));
        }

        #[test]
        fn full_round_trip(rgb in prop::array::uniform3(0.0f64..=255.0)) {
            let k = OpsinConstants::default();
            let img = px(ColorSpace::Rgb, rgb);
            let back = k.glms_to_rgb(
                &k.xyb_to_glms(&k.glms_to_xyb(&k.rgb_to_glms(&img).unwrap()).unwrap()).unwrap(),
            ).unwrap();
            for c in 0..3 {
                prop_assert!((back.pixel(0, 0)[c] - rgb[c]).abs() <= 0.01);
            }
        }
    }
}
