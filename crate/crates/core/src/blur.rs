//! Separable Gaussian blur, used by the round-trip command as a smoothing
//! stand-in for a lossy codec.

use rayon::prelude::*;

use crate::plane::Plane;

/// Normalised 1-D kernel of radius `ceil(3σ)`. `σ ≤ 0` gives the identity.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if !(sigma > 0.0) {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Blurs with edge clamping.
pub fn gaussian_blur(p: &Plane, sigma: f64) -> Plane {
    let k = gaussian_kernel(sigma);
    if k.len() == 1 {
        return p.clone();
    }
    let r = (k.len() / 2) as isize;
    let (w, h) = (p.width(), p.height());
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let mut tmp = Plane::new(w, h);
    tmp.as_mut_slice().par_chunks_mut(w).enumerate().for_each(|(y, out)| {
        let row = p.row(y);
        for (x, o) in out.iter_mut().enumerate() {
            *o = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * row[clamp(x as isize + i as isize - r, w)])
                .sum();
        }
    });

    let mut out = Plane::new(w, h);
    out.as_mut_slice().par_chunks_mut(w).enumerate().for_each(|(y, o)| {
        for (i, kv) in k.iter().enumerate() {
            let src = tmp.row(clamp(y as isize + i as isize - r, h));
            for (ov, sv) in o.iter_mut().zip(src) {
                *ov += kv * sv;
            }
        }
    });
    out
}
