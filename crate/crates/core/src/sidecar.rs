//! Fixed 11-byte serialisation of a [`NoiseModel`].
//!
//! ```text
//! offset  size  field
//!      0     4  magic "NRG1"
//!      4     1  version (1)
//!      5     2  alpha code, u16 little-endian, alpha = 4 · code / 65535
//!      7     2  beta code,  u16 little-endian, beta  = code / 65535
//!      9     2  gamma code, u16 little-endian, gamma = −8 + 16 · code / 65535
//! ```
//!
//! Codes are uniform quantisations of the parameter box, rounded to nearest
//! with ties up.

use thiserror::Error;

use crate::model_fit::{NoiseModel, ALPHA_RANGE, BETA_RANGE, GAMMA_RANGE};

pub const MAGIC: [u8; 4] = *b"NRG1";
pub const VERSION: u8 = 1;
pub const SIDECAR_LEN: usize = 11;

const CODE_MAX: f64 = u16::MAX as f64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SidecarError {
    #[error("sidecar is {0} bytes, expected {SIDECAR_LEN}")]
    Truncated(usize),
    #[error("bad sidecar magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported sidecar version {0}")]
    BadVersion(u8),
    #[error("model is outside the encodable parameter box")]
    OutOfRange,
}

/// Quantisation step per parameter.
pub fn step(range: (f64, f64)) -> f64 {
    (range.1 - range.0) / CODE_MAX
}

fn quantize(v: f64, (lo, hi): (f64, f64)) -> u16 {
    let code = ((v - lo) / (hi - lo) * CODE_MAX + 0.5).floor();
    code.clamp(0.0, CODE_MAX) as u16
}

fn dequantize(code: u16, (lo, hi): (f64, f64)) -> f64 {
    lo + f64::from(code) * (hi - lo) / CODE_MAX
}

pub fn encode_sidecar(model: &NoiseModel) -> Result<[u8; SIDECAR_LEN], SidecarError> {
    if !model.is_in_box() {
        return Err(SidecarError::OutOfRange);
    }
    let mut out = [0u8; SIDECAR_LEN];
    out[..4].copy_from_slice(&MAGIC);
    out[4] = VERSION;
    out[5..7].copy_from_slice(&quantize(model.alpha, ALPHA_RANGE).to_le_bytes());
    out[7..9].copy_from_slice(&quantize(model.beta, BETA_RANGE).to_le_bytes());
    out[9..11].copy_from_slice(&quantize(model.gamma, GAMMA_RANGE).to_le_bytes());
    Ok(out)
}

pub fn decode_sidecar(bytes: &[u8]) -> Result<NoiseModel, SidecarError> {
    if bytes.len() != SIDECAR_LEN {
        return Err(SidecarError::Truncated(bytes.len()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(SidecarError::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(SidecarError::BadVersion(bytes[4]));
    }
    let code = |at: usize| u16::from_le_bytes([bytes[at], bytes[at + 1]]);
    Ok(NoiseModel::new(
        dequantize(code(5), ALPHA_RANGE),
        dequantize(code(7), BETA_RANGE),
        dequantize(code(9), GAMMA_RANGE),
    ))
}
