//! Homogeneous patch selection.
//!
//! The image is tiled into non-overlapping 8×8 patches. Inside each patch a
//! 3×4 centre block is compared against eight neighbouring blocks with a sum
//! of absolute differences; the mean of the smaller half of those sums is the
//! patch's homogeneity score `r(p)`. Scores are histogrammed, the histogram
//! peak gives the threshold, capped at `t_max`, and patches scoring below it
//! are kept.

use rayon::prelude::*;
use thiserror::Error;

use crate::colorspace::{ColorSpace, PlanarImage};
use crate::plane::Plane;

pub const PATCH_SIZE: usize = 8;

/// Top-left corner of a patch in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Anchor {
    pub x: usize,
    pub y: usize,
}

impl Anchor {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

/// Full, non-overlapping patch tiles of a `width × height` image. Partial
/// tiles on the right and bottom edges are dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    width: usize,
    height: usize,
    anchors: Vec<Anchor>,
}

impl PatchGrid {
    pub fn new(width: usize, height: usize) -> Self {
        let anchors = (0..height / PATCH_SIZE)
            .flat_map(|ty| (0..width / PATCH_SIZE).map(move |tx| Anchor::new(tx * PATCH_SIZE, ty * PATCH_SIZE)))
            .collect();
        Self {
            width,
            height,
            anchors,
        }
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Whether the patch has a one-pixel ring of real image pixels around it.
    pub fn has_margin(&self, a: Anchor) -> bool {
        a.x >= 1 && a.y >= 1 && a.x + PATCH_SIZE < self.width && a.y + PATCH_SIZE < self.height
    }
}

/// Placement of the centre block and its neighbours inside a patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    pub block_h: usize,
    pub block_w: usize,
    /// Patch-relative `(row, col)` of the centre block's top-left pixel.
    pub center: (usize, usize),
    /// `(d_row, d_col)` offsets of the neighbour blocks from the centre block.
    pub neighbor_offsets: Vec<(isize, isize)>,
}

impl Default for BlockLayout {
    fn default() -> Self {
        let mut neighbor_offsets = Vec::with_capacity(8);
        for dr in [-2, 0, 2] {
            for dc in [-2, 0, 2] {
                if (dr, dc) != (0, 0) {
                    neighbor_offsets.push((dr, dc));
                }
            }
        }
        Self {
            block_h: 3,
            block_w: 4,
            center: (2, 2),
            neighbor_offsets,
        }
    }
}

impl BlockLayout {
    /// Number of neighbour blocks, `K`.
    pub fn k(&self) -> usize {
        self.neighbor_offsets.len()
    }

    /// Patch-relative `(row, col)` of neighbour `l` (zero-based).
    fn neighbor_origin(&self, l: usize) -> (usize, usize) {
        let (dr, dc) = self.neighbor_offsets[l];
        (
            self.center.0.checked_add_signed(dr).expect("neighbour block above patch"),
            self.center.1.checked_add_signed(dc).expect("neighbour block left of patch"),
        )
    }

    /// True when every block lies inside the patch and `K` is even and non-zero.
    pub fn is_valid(&self) -> bool {
        let fits = |(r, c): (isize, isize)| {
            r >= 0 && c >= 0 && r as usize + self.block_h <= PATCH_SIZE && c as usize + self.block_w <= PATCH_SIZE
        };
        let (cr, cc) = (self.center.0 as isize, self.center.1 as isize);
        self.k() > 0
            && self.k().is_multiple_of(2)
            && fits((cr, cc))
            && self.neighbor_offsets.iter().all(|&(dr, dc)| fits((cr + dr, cc + dc)))
    }
}

/// Sum of absolute differences between the centre block and neighbour `l`
/// (zero-based) of the patch at `patch`.
pub fn sad_score(plane: &Plane, patch: Anchor, layout: &BlockLayout, l: usize) -> f64 {
    let (nr, nc) = layout.neighbor_origin(l);
    let (cr, cc) = layout.center;
    let mut sum = 0.0;
    for i in 0..layout.block_h {
        let center_row = &plane.row(patch.y + cr + i)[patch.x + cc..patch.x + cc + layout.block_w];
        let other_row = &plane.row(patch.y + nr + i)[patch.x + nc..patch.x + nc + layout.block_w];
        for (a, b) in center_row.iter().zip(other_row) {
            sum += (a - b).abs();
        }
    }
    sum
}

/// Rank-ordered score: `(2/K)` times the sum of the `K/2` smallest SAD values.
pub fn road_from_sads(sads: &mut [f64]) -> f64 {
    let k = sads.len();
    sads.sort_unstable_by(f64::total_cmp);
    let half = k / 2;
    sads[..half].iter().sum::<f64>() * 2.0 / k as f64
}

/// Homogeneity score `r(p)` of one patch.
pub fn road_homogeneity(plane: &Plane, patch: Anchor, layout: &BlockLayout) -> f64 {
    let mut sads: Vec<f64> = (0..layout.k()).map(|l| sad_score(plane, patch, layout, l)).collect();
    road_from_sads(&mut sads)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyParams {
    pub t_max: f64,
    pub bins: usize,
    /// Upper edge of the histogram; larger scores land in the last bin.
    pub hist_max: f64,
    pub layout: BlockLayout,
}

impl Default for SurveyParams {
    fn default() -> Self {
        Self {
            t_max: 0.2,
            bins: 255,
            hist_max: 1.0,
            layout: BlockLayout::default(),
        }
    }
}

/// Integer-count histogram over `[0, max]` with the overflow folded into the
/// last bin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    counts: Vec<u64>,
    max_bits: u64,
}

impl Histogram {
    pub fn new(bins: usize, max: f64) -> Self {
        assert!(bins > 0 && max > 0.0);
        Self {
            counts: vec![0; bins],
            max_bits: max.to_bits(),
        }
    }

    pub fn max(&self) -> f64 {
        f64::from_bits(self.max_bits)
    }

    pub fn bin_width(&self) -> f64 {
        self.max() / self.counts.len() as f64
    }

    pub fn bin_of(&self, value: f64) -> usize {
        let bins = self.counts.len();
        let idx = (value.max(0.0) / self.max() * bins as f64).floor();
        (idx as usize).min(bins - 1)
    }

    /// Adds a finite value; non-finite values are ignored.
    pub fn add(&mut self, value: f64) {
        if value.is_finite() {
            let b = self.bin_of(value);
            self.counts[b] += 1;
        }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Index of the most populated bin; ties go to the lowest index.
    pub fn peak_bin(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        best
    }

    pub fn bin_center(&self, bin: usize) -> f64 {
        (bin as f64 + 0.5) * self.bin_width()
    }
}

/// Threshold rule: the histogram peak, capped at `t_max`.
pub fn threshold(peak: f64, t_max: f64) -> f64 {
    peak.min(t_max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneitySurvey {
    pub grid: PatchGrid,
    /// `r(p)` for every anchor of `grid`, in the same order.
    pub scores: Vec<f64>,
    pub histogram: Histogram,
    /// Centre of the peak bin.
    pub peak: f64,
    pub threshold: f64,
    pub selected: Vec<Anchor>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SurveyError {
    #[error("expected a g-LMS image, got {0:?}")]
    WrongSpace(ColorSpace),
    #[error("image yields {patches} patches; at least 4 are needed")]
    DegenerateImage { patches: usize },
    #[error("block layout does not fit inside an {PATCH_SIZE}x{PATCH_SIZE} patch")]
    BadLayout,
    #[error("no patch scored below the threshold {:.6}", .0.threshold)]
    EmptySelection(Box<HomogeneitySurvey>),
}

/// Scores every patch of the L′ plane and selects the homogeneous ones.
pub fn build_survey(glms: &PlanarImage, params: &SurveyParams) -> Result<HomogeneitySurvey, SurveyError> {
    if glms.space() != ColorSpace::Glms {
        return Err(SurveyError::WrongSpace(glms.space()));
    }
    survey_plane(glms.plane(0), params)
}

/// Same as [`build_survey`] on a bare plane.
pub fn survey_plane(plane: &Plane, params: &SurveyParams) -> Result<HomogeneitySurvey, SurveyError> {
    if !params.layout.is_valid() {
        return Err(SurveyError::BadLayout);
    }
    let grid = PatchGrid::new(plane.width(), plane.height());
    if grid.len() < 4 {
        return Err(SurveyError::DegenerateImage { patches: grid.len() });
    }
    let scores: Vec<f64> = grid
        .anchors()
        .par_iter()
        .map(|&a| road_homogeneity(plane, a, &params.layout))
        .collect();

    let mut histogram = Histogram::new(params.bins, params.hist_max);
    for &s in &scores {
        histogram.add(s);
    }
    let peak = histogram.bin_center(histogram.peak_bin());
    let t = threshold(peak, params.t_max);
    let selected: Vec<Anchor> = grid
        .anchors()
        .iter()
        .zip(&scores)
        .filter(|(_, &s)| s < t)
        .map(|(&a, _)| a)
        .collect();

    let survey = HomogeneitySurvey {
        grid,
        scores,
        histogram,
        peak,
        threshold: t,
        selected,
    };
    if survey.selected.is_empty() {
        return Err(SurveyError::EmptySelection(Box::new(survey)));
    }
    Ok(survey)
}
