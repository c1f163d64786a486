//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::blur::gaussian_blur;
use crate::colorspace::{ColorError, ColorSpace, OpsinConstants, PlanarImage};
use crate::estimate::{estimate_model, survey_text, EstimateConfig, EstimateError, EstimateReport};
use crate::io::{encode_f32_planes, load_image, save_image, write_atomic, ImageError};
use crate::model_fit::NoiseModel;
use crate::noise_metric::laplacian_noise_level;
use crate::patch_selection::PatchGrid;
use crate::plane::Plane;
use crate::regen::{synthesize_rgb, NoiseField, RegenError, Synthesized, DEFAULT_PSI};
use crate::sidecar::{decode_sidecar, encode_sidecar, SidecarError};

#[derive(Debug, Parser)]
#[command(name = "noise-regen", version, about = "Estimate an image noise model and re-synthesise matching noise")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a noise model to an image and write the 11-byte sidecar.
    Estimate {
        input: PathBuf,
        sidecar: PathBuf,
        /// Write the report here instead of standard output.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write the per-patch homogeneity scores here.
        #[arg(long)]
        survey: Option<PathBuf>,
    },
    /// Add noise described by a sidecar to an image.
    Apply {
        input: PathBuf,
        sidecar: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        noise: NoiseArgs,
        /// Write the float XYB perturbation (dX, dY, dB) as raw f32 LE planes.
        #[arg(long)]
        dump_float: Option<PathBuf>,
    },
    /// Estimate, blur, and re-add noise; print the three energies.
    Roundtrip {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 1.2)]
        blur_sigma: f64,
        #[command(flatten)]
        noise: NoiseArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct NoiseArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_PSI)]
    pub psi: f64,
    /// Multiplier on the predicted noise levels.
    #[arg(long, default_value_t = 1.0)]
    pub level_scale: f64,
}

impl Default for NoiseArgs {
    fn default() -> Self {
        Self {
            seed: 0,
            psi: DEFAULT_PSI,
            level_scale: 1.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ImageError,
    },
    #[error("{path}: image is {width}x{height}, too small")]
    TooSmall { path: PathBuf, width: usize, height: usize },
    #[error("{path}: {source}")]
    Sidecar {
        path: PathBuf,
        #[source]
        source: SidecarError,
    },
    #[error("cannot read {path}: {source}")]
    ReadSidecar {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid argument: {0}")]
    BadArgument(String),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Image { .. } | CliError::BadArgument(_) => 2,
            CliError::TooSmall { .. } => 3,
            CliError::Sidecar { .. } | CliError::ReadSidecar { .. } => 4,
            CliError::Write { .. } | CliError::Internal(_) => 1,
        }
    }
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn load(path: &Path) -> Result<PlanarImage, CliError> {
    load_image(path).map_err(|source| CliError::Image {
        path: path.to_owned(),
        source,
    })
}

fn save(img: &PlanarImage, path: &Path) -> Result<(), CliError> {
    save_image(img, path).map_err(|e| match e {
        ImageError::Io { source, .. } => CliError::Write {
            path: path.to_owned(),
            source,
        },
        other => internal(other),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(|source| CliError::Write {
        path: path.to_owned(),
        source,
    })
}

fn estimate_err(path: &Path, e: EstimateError) -> CliError {
    match e {
        EstimateError::TooSmall { width, height } => CliError::TooSmall {
            path: path.to_owned(),
            width,
            height,
        },
        other => internal(other),
    }
}

pub fn estimate(input: &Path) -> Result<EstimateReport, CliError> {
    let rgb = load(input)?;
    estimate_model(&rgb, &OpsinConstants::default(), &EstimateConfig::default()).map_err(|e| estimate_err(input, e))
}

pub fn cmd_estimate(input: &Path, sidecar: &Path, report: Option<&Path>, survey: Option<&Path>) -> Result<EstimateReport, CliError> {
    let rep = estimate(input)?;
    let bytes = encode_sidecar(&rep.model).map_err(internal)?;
    write_file(sidecar, &bytes)?;
    if let Some(fb) = &rep.fallback {
        eprintln!("warning: {}: null model emitted ({fb})", input.display());
    }
    match report {
        Some(p) => write_file(p, rep.to_text().as_bytes())?,
        None => print!("{}", rep.to_text()),
    }
    if let Some(p) = survey {
        write_file(p, survey_text(&rep.survey).as_bytes())?;
    }
    Ok(rep)
}

pub fn read_sidecar(path: &Path) -> Result<NoiseModel, CliError> {
    let bytes = fs::read(path).map_err(|source| CliError::ReadSidecar {
        path: path.to_owned(),
        source,
    })?;
    decode_sidecar(&bytes).map_err(|source| CliError::Sidecar {
        path: path.to_owned(),
        source,
    })
}

/// RGB → g-LMS → XYB, perturb, and back to RGB (clamped).
pub fn add_noise(rgb: &PlanarImage, model: &NoiseModel, args: &NoiseArgs) -> Result<Synthesized, CliError> {
    if !(args.level_scale >= 0.0 && args.level_scale.is_finite()) {
        return Err(CliError::BadArgument(format!("level scale {} must be finite and non-negative", args.level_scale)));
    }
    if !(0.0..=1.0).contains(&args.psi) {
        return Err(CliError::BadArgument(format!("psi {} outside [0, 1]", args.psi)));
    }
    let field = NoiseField::generate(rgb.width(), rgb.height(), args.seed, args.psi).map_err(|e| match e {
        RegenError::TooSmall { width, height } => CliError::TooSmall {
            path: PathBuf::new(),
            width,
            height,
        },
        other => internal(other),
    })?;
    synthesize_rgb(rgb, model, args.level_scale, &field, &OpsinConstants::default()).map_err(internal)
}

fn color_err(e: ColorError) -> CliError {
    match e {
        ColorError::OutOfRange { .. } | ColorError::NonFinite { .. } => CliError::BadArgument(e.to_string()),
        other => internal(other),
    }
}

fn with_path(e: CliError, path: &Path) -> CliError {
    match e {
        CliError::TooSmall { width, height, .. } => CliError::TooSmall {
            path: path.to_owned(),
            width,
            height,
        },
        other => other,
    }
}

pub fn cmd_apply(input: &Path, sidecar: &Path, output: &Path, args: &NoiseArgs, dump_float: Option<&Path>) -> Result<(), CliError> {
    let rgb = load(input)?;
    let model = read_sidecar(sidecar)?;
    let applied = add_noise(&rgb, &model, args).map_err(|e| with_path(e, input))?;
    if let Some(p) = dump_float {
        write_file(p, &encode_f32_planes(&applied.perturbation))?;
    }
    save(&applied.image, output)
}

/// Mean Laplacian noise level of the L′ plane over every patch with a full
/// margin.
pub fn mean_patch_noise(rgb: &PlanarImage) -> Result<f64, CliError> {
    let glms = OpsinConstants::default().rgb_to_glms(rgb).map_err(color_err)?;
    Ok(mean_patch_noise_plane(glms.plane(0)))
}

fn mean_patch_noise_plane(l: &Plane) -> f64 {
    let grid = PatchGrid::new(l.width(), l.height());
    let levels: Vec<f64> = grid
        .anchors()
        .iter()
        .filter_map(|&a| laplacian_noise_level(l, a).ok())
        .collect();
    if levels.is_empty() {
        0.0
    } else {
        levels.iter().sum::<f64>() / levels.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundtripEnergies {
    pub input: f64,
    pub blurred: f64,
    pub restored: f64,
    /// Noise level of the restored-minus-blurred L′ difference.
    pub synthesized: f64,
}

pub fn roundtrip(rgb: &PlanarImage, blur_sigma: f64, args: &NoiseArgs) -> Result<(PlanarImage, EstimateReport, RoundtripEnergies), CliError> {
    if !(blur_sigma >= 0.0 && blur_sigma.is_finite()) {
        return Err(CliError::BadArgument(format!("blur sigma {blur_sigma} must be finite and non-negative")));
    }
    let k = OpsinConstants::default();
    let rep = estimate_model(rgb, &k, &EstimateConfig::default()).map_err(|e| estimate_err(Path::new(""), e))?;
    let [r, g, b] = rgb.planes();
    let blurred = PlanarImage::new(
        ColorSpace::Rgb,
        [gaussian_blur(r, blur_sigma), gaussian_blur(g, blur_sigma), gaussian_blur(b, blur_sigma)].map(|p| p.map(|v| (v + 0.5).floor().clamp(0.0, 255.0))),
    )
    .map_err(internal)?;
    let restored = add_noise(&blurred, &rep.model, args)?.image.clone();
    let restored8 = PlanarImage::new(
        ColorSpace::Rgb,
        restored.planes().clone().map(|p| p.map(|v| (v + 0.5).floor().clamp(0.0, 255.0))),
    )
    .map_err(internal)?;

    let l_of = |img: &PlanarImage| k.rgb_to_glms(img).map(|g| g.into_planes()[0].clone()).map_err(internal);
    let (l_in, l_blur, l_rest) = (l_of(rgb)?, l_of(&blurred)?, l_of(&restored8)?);
    let diff = Plane::from_fn(l_rest.width(), l_rest.height(), |x, y| l_rest.get(x, y) - l_blur.get(x, y));
    let energies = RoundtripEnergies {
        input: mean_patch_noise_plane(&l_in),
        blurred: mean_patch_noise_plane(&l_blur),
        restored: mean_patch_noise_plane(&l_rest),
        synthesized: mean_patch_noise_plane(&diff),
    };
    Ok((restored8, rep, energies))
}

pub fn cmd_roundtrip(input: &Path, output: &Path, blur_sigma: f64, args: &NoiseArgs) -> Result<RoundtripEnergies, CliError> {
    let rgb = load(input)?;
    let (img, rep, e) = roundtrip(&rgb, blur_sigma, args).map_err(|e| with_path(e, input))?;
    if let Some(fb) = &rep.fallback {
        eprintln!("warning: {}: null model emitted ({fb})", input.display());
    }
    save(&img, output)?;
    println!("alpha={:.9}", rep.model.alpha);
    println!("beta={:.9}", rep.model.beta);
    println!("gamma={:.9}", rep.model.gamma);
    println!("input_energy={:.9}", e.input);
    println!("blurred_energy={:.9}", e.blurred);
    println!("restored_energy={:.9}", e.restored);
    println!("synthesized_energy={:.9}", e.synthesized);
    Ok(e)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Estimate {
            input,
            sidecar,
            report,
            survey,
        } => cmd_estimate(&input, &sidecar, report.as_deref(), survey.as_deref()).map(drop),
        Command::Apply {
            input,
            sidecar,
            output,
            noise,
            dump_float,
        } => cmd_apply(&input, &sidecar, &output, &noise, dump_float.as_deref()),
        Command::Roundtrip {
            input,
            output,
            blur_sigma,
            noise,
        } => cmd_roundtrip(&input, &output, blur_sigma, &noise).map(drop),
    }
}

/// Parses arguments, runs the command on a pool of the requested size and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
