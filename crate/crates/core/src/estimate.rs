//! Encoder half: RGB image in, noise model and diagnostics out.

use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::colorspace::{ColorError, OpsinConstants, PlanarImage};
use crate::model_fit::{fit, mean_intensity, FitConfig, FitError, FitReport, NoiseModel, Sample, TrainingSet};
use crate::noise_metric::laplacian_noise_level;
use crate::patch_selection::{build_survey, HomogeneitySurvey, SurveyError, SurveyParams};

/// Smallest side that leaves at least one patch with a full margin.
pub const MIN_IMAGE_SIDE: usize = 24;

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("image is {width}x{height}; at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE} is needed")]
    TooSmall { width: usize, height: usize },
    #[error(transparent)]
    Color(#[from] ColorError),
    #[error(transparent)]
    Survey(SurveyError),
    #[error(transparent)]
    Fit(FitError),
}

/// Why the null model was emitted instead of a fitted one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fallback {
    NoHomogeneousPatches,
    TooFewSamples { found: usize, required: usize },
}

impl fmt::Display for Fallback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fallback::NoHomogeneousPatches => f.write_str("no homogeneous patches"),
            Fallback::TooFewSamples { found, required } => {
                write!(f, "{found} training samples, {required} required")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimateConfig {
    pub survey: SurveyParams,
    pub fit: FitConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub width: usize,
    pub height: usize,
    pub model: NoiseModel,
    pub patch_count: usize,
    pub selected_count: usize,
    pub sample_count: usize,
    pub threshold: f64,
    pub histogram_peak: f64,
    pub samples: Vec<Sample>,
    pub fit: Option<FitReport>,
    pub fallback: Option<Fallback>,
    pub survey: HomogeneitySurvey,
}

impl EstimateReport {
    /// Line-oriented `key=value` block followed by a tab-separated sample
    /// table. Floats use a fixed number of digits so reports diff cleanly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "width={}", self.width);
        let _ = writeln!(s, "height={}", self.height);
        let _ = writeln!(s, "alpha={:.9}", self.model.alpha);
        let _ = writeln!(s, "beta={:.9}", self.model.beta);
        let _ = writeln!(s, "gamma={:.9}", self.model.gamma);
        let _ = writeln!(s, "patches={}", self.patch_count);
        let _ = writeln!(s, "selected={}", self.selected_count);
        let _ = writeln!(s, "sample_count={}", self.sample_count);
        let _ = writeln!(s, "histogram_peak={:.9}", self.histogram_peak);
        let _ = writeln!(s, "threshold={:.9}", self.threshold);
        if let Some(f) = &self.fit {
            let _ = writeln!(s, "objective={:.9e}", f.objective);
            let _ = writeln!(s, "iterations={}", f.iterations);
            let _ = writeln!(s, "converged={}", f.converged);
        }
        if let Some(fb) = &self.fallback {
            let _ = writeln!(s, "warning=null model emitted: {fb}");
        }
        let _ = writeln!(s, "# intensity\tnoise_level");
        for smp in &self.samples {
            let _ = writeln!(s, "{:.9}\t{:.9}", smp.intensity, smp.noise_level);
        }
        s
    }
}

/// Training samples from the selected patches that have a full margin.
pub fn training_samples(glms: &PlanarImage, survey: &HomogeneitySurvey) -> TrainingSet {
    let l = glms.plane(0);
    survey
        .selected
        .iter()
        .filter_map(|&a| {
            let n = laplacian_noise_level(l, a).ok()?;
            Some(Sample {
                intensity: mean_intensity(l, a),
                noise_level: n,
            })
        })
        .collect()
}

pub fn estimate_model(rgb: &PlanarImage, consts: &OpsinConstants, cfg: &EstimateConfig) -> Result<EstimateReport, EstimateError> {
    let (width, height) = (rgb.width(), rgb.height());
    if width < MIN_IMAGE_SIDE || height < MIN_IMAGE_SIDE {
        return Err(EstimateError::TooSmall { width, height });
    }
    let glms = consts.rgb_to_glms(rgb)?;
    let (survey, empty) = match build_survey(&glms, &cfg.survey) {
        Ok(s) => (s, false),
        Err(SurveyError::EmptySelection(s)) => (*s, true),
        Err(e) => return Err(EstimateError::Survey(e)),
    };
    let ts = training_samples(&glms, &survey);
    let mut report = EstimateReport {
        width,
        height,
        model: NoiseModel::NULL,
        patch_count: survey.grid.len(),
        selected_count: survey.selected.len(),
        sample_count: ts.len(),
        threshold: survey.threshold,
        histogram_peak: survey.peak,
        samples: ts.samples.clone(),
        fit: None,
        fallback: None,
        survey,
    };
    if empty {
        report.fallback = Some(Fallback::NoHomogeneousPatches);
        return Ok(report);
    }
    match fit(&ts, &cfg.fit) {
        Ok(f) => {
            report.model = f.model;
            report.fit = Some(f);
        }
        Err(FitError::InsufficientSamples { found, required }) => {
            report.fallback = Some(Fallback::TooFewSamples { found, required });
        }
        Err(e) => return Err(EstimateError::Fit(e)),
    }
    Ok(report)
}

/// Per-patch homogeneity dump: the histogram peak and threshold, then one
/// `x y r selected` line per patch in raster order.
pub fn survey_text(survey: &HomogeneitySurvey) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "histogram_peak={:.9}", survey.peak);
    let _ = writeln!(s, "threshold={:.9}", survey.threshold);
    let _ = writeln!(s, "# x\ty\tr\tselected");
    for (a, r) in survey.grid.anchors().iter().zip(&survey.scores) {
        let _ = writeln!(s, "{}\t{}\t{:.9}\t{}", a.x, a.y, r, u8::from(*r < survey.threshold));
    }
    s
}
