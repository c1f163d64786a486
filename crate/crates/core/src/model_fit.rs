//! Intensity-dependent noise model `n(i) = α·i^γ + β` and its fit.
//!
//! The fit minimises
//!
//! ```text
//! F = Σ_p (n̂_p − n(ī_p))² + ξ·α·γ
//! ```
//!
//! over the parameter box `α ∈ [0, 4]`, `β ∈ [0, 1]`, `γ ∈ [−8, 8]`. The
//! small `ξ·α·γ` term favours decreasing curves when the data cannot tell them
//! apart. The optimiser is a damped Newton iteration on the analytic
//! Hessian with projection onto the box after every step; any step that does
//! not lower `F` is rejected and the damping raised, so `F` never increases.

use thiserror::Error;

use crate::patch_selection::{Anchor, PATCH_SIZE};
use crate::plane::Plane;

/// Intensities below this are clamped before evaluating `i^γ`.
pub const MIN_INTENSITY: f64 = 1e-3;

pub const ALPHA_RANGE: (f64, f64) = (0.0, 4.0);
pub const BETA_RANGE: (f64, f64) = (0.0, 1.0);
pub const GAMMA_RANGE: (f64, f64) = (-8.0, 8.0);

const LOWER: [f64; 3] = [ALPHA_RANGE.0, BETA_RANGE.0, GAMMA_RANGE.0];
const UPPER: [f64; 3] = [ALPHA_RANGE.1, BETA_RANGE.1, GAMMA_RANGE.1];

/// Floor on the diagonal used to scale the damping term, so directions with
/// zero curvature still get a finite step.
const DAMPING_FLOOR: f64 = 1e-9;
const MAX_DAMPING_STEPS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl NoiseModel {
    /// Adds no noise anywhere.
    pub const NULL: NoiseModel = NoiseModel {
        alpha: 0.0,
        beta: 0.0,
        gamma: 1.0,
    };

    pub const fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    pub fn is_in_box(&self) -> bool {
        let p = self.to_array();
        (0..3).all(|i| p[i] >= LOWER[i] && p[i] <= UPPER[i])
    }

    /// Predicted noise level at intensity `i`, clamped to be non-negative.
    #[inline]
    pub fn predict(&self, i: f64) -> f64 {
        let i = clamp_intensity(i);
        (self.alpha * i.powf(self.gamma) + self.beta).max(0.0)
    }

    fn to_array(self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }

    fn from_array(p: [f64; 3]) -> Self {
        Self::new(p[0], p[1], p[2])
    }
}

#[inline]
fn clamp_intensity(i: f64) -> f64 {
    i.clamp(MIN_INTENSITY, 1.0)
}

/// `(mean L′ intensity, Laplacian noise level)` of one homogeneous patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub intensity: f64,
    pub noise_level: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub samples: Vec<Sample>,
}

impl TrainingSet {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

impl FromIterator<Sample> for TrainingSet {
    fn from_iter<T: IntoIterator<Item = Sample>>(iter: T) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Mean of the 64 patch values.
pub fn mean_intensity(plane: &Plane, patch: Anchor) -> f64 {
    let mut sum = 0.0;
    for y in patch.y..patch.y + PATCH_SIZE {
        sum += plane.row(y)[patch.x..patch.x + PATCH_SIZE].iter().sum::<f64>();
    }
    sum / (PATCH_SIZE * PATCH_SIZE) as f64
}

/// `F` at `model`.
pub fn objective(model: &NoiseModel, ts: &TrainingSet, xi: f64) -> f64 {
    let NoiseModel { alpha, beta, gamma } = *model;
    let data: f64 = ts
        .samples
        .iter()
        .map(|s| {
            let e = s.noise_level - (alpha * clamp_intensity(s.intensity).powf(gamma) + beta);
            e * e
        })
        .sum();
    data + xi * alpha * gamma
}

/// `(∂F/∂α, ∂F/∂β, ∂F/∂γ)`.
pub fn objective_gradient(model: &NoiseModel, ts: &TrainingSet, xi: f64) -> [f64; 3] {
    let NoiseModel { alpha, beta, gamma } = *model;
    let mut g = [xi * gamma, 0.0, xi * alpha];
    for s in &ts.samples {
        let i = clamp_intensity(s.intensity);
        let t = i.powf(gamma);
        let e = s.noise_level - (alpha * t + beta);
        g[0] -= 2.0 * e * t;
        g[1] -= 2.0 * e;
        g[2] -= 2.0 * e * alpha * t * i.ln();
    }
    g
}

fn objective_hessian(model: &NoiseModel, ts: &TrainingSet, xi: f64) -> [[f64; 3]; 3] {
    let NoiseModel { alpha, beta, gamma } = *model;
    let mut h = [[0.0; 3]; 3];
    h[0][2] = xi;
    h[2][0] = xi;
    for s in &ts.samples {
        let i = clamp_intensity(s.intensity);
        let ln = i.ln();
        let t = i.powf(gamma);
        let e = s.noise_level - (alpha * t + beta);
        // residual Jacobian and second derivatives
        let je = [-t, -1.0, -alpha * t * ln];
        let e_ag = -t * ln;
        let e_gg = -alpha * t * ln * ln;
        for r in 0..3 {
            for c in 0..3 {
                h[r][c] += 2.0 * je[r] * je[c];
            }
        }
        h[0][2] += 2.0 * e * e_ag;
        h[2][0] += 2.0 * e * e_ag;
        h[2][2] += 2.0 * e * e_gg;
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Weight of the `α·γ` regulariser, `0 ≤ ξ < 1`.
    pub xi: f64,
    pub max_iterations: usize,
    /// Stop once the projected gradient norm falls to this.
    pub grad_tolerance: f64,
    /// Fewer samples than this are refused.
    pub min_samples: usize,
    /// Starting point; `None` derives one from the data.
    pub init: Option<NoiseModel>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            xi: 5e-5,
            max_iterations: 200,
            grad_tolerance: 1e-8,
            min_samples: 16,
            init: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("{found} training samples, at least {required} required")]
    InsufficientSamples { found: usize, required: usize },
    #[error("regularisation weight {0} outside [0, 1)")]
    BadXi(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub model: NoiseModel,
    pub initial_objective: f64,
    pub objective: f64,
    pub iterations: usize,
    /// Projected gradient reached `grad_tolerance`.
    pub converged: bool,
}

/// Data-driven starting point: `α₀ = max(10⁻³, mean n̂)`, `β₀ = min n̂`,
/// `γ₀ = −0.5`, projected into the box.
pub fn initial_model(ts: &TrainingSet) -> NoiseModel {
    let n = ts.len().max(1) as f64;
    let mean = ts.samples.iter().map(|s| s.noise_level).sum::<f64>() / n;
    let min = ts
        .samples
        .iter()
        .map(|s| s.noise_level)
        .fold(f64::INFINITY, f64::min);
    let min = if min.is_finite() { min } else { 0.0 };
    NoiseModel::from_array(project([mean.max(1e-3), min, -0.5]))
}

fn project(mut p: [f64; 3]) -> [f64; 3] {
    for i in 0..3 {
        p[i] = p[i].clamp(LOWER[i], UPPER[i]);
    }
    p
}

/// Components pinned at a bound with the gradient pushing outward.
fn active_set(p: &[f64; 3], g: &[f64; 3]) -> [bool; 3] {
    [0, 1, 2].map(|i| (p[i] <= LOWER[i] && g[i] > 0.0) || (p[i] >= UPPER[i] && g[i] < 0.0))
}

/// Solves `(H + λ·D) d = −g` over the free components by Cholesky. `None`
/// when the damped system is not positive definite.
fn damped_step(h: &[[f64; 3]; 3], g: &[f64; 3], active: &[bool; 3], lambda: f64) -> Option<[f64; 3]> {
    let free: Vec<usize> = (0..3).filter(|&i| !active[i]).collect();
    let n = free.len();
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            a[r][c] = h[i][j];
        }
        a[r][r] += lambda * h[i][i].abs().max(DAMPING_FLOOR);
        b[r] = -g[i];
    }
    // Cholesky: a = L Lᵀ
    let mut l = [[0.0; 3]; 3];
    for r in 0..n {
        for c in 0..=r {
            let s: f64 = (0..c).map(|k| l[r][k] * l[c][k]).sum();
            if r == c {
                let d = a[r][r] - s;
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                l[r][r] = d.sqrt();
            } else {
                l[r][c] = (a[r][c] - s) / l[c][c];
            }
        }
    }
    let mut y = [0.0; 3];
    for r in 0..n {
        y[r] = (b[r] - (0..r).map(|k| l[r][k] * y[k]).sum::<f64>()) / l[r][r];
    }
    let mut x = [0.0; 3];
    for r in (0..n).rev() {
        x[r] = (y[r] - (r + 1..n).map(|k| l[k][r] * x[k]).sum::<f64>()) / l[r][r];
    }
    let mut d = [0.0; 3];
    for (r, &i) in free.iter().enumerate() {
        d[i] = x[r];
    }
    d.iter().all(|v| v.is_finite()).then_some(d)
}

/// Fits the model to `ts`.
pub fn fit(ts: &TrainingSet, cfg: &FitConfig) -> Result<FitReport, FitError> {
    if !(0.0..1.0).contains(&cfg.xi) {
        return Err(FitError::BadXi(cfg.xi));
    }
    if ts.len() < cfg.min_samples.max(1) {
        return Err(FitError::InsufficientSamples {
            found: ts.len(),
            required: cfg.min_samples.max(1),
        });
    }
    let init = NoiseModel::from_array(project(cfg.init.unwrap_or_else(|| initial_model(ts)).to_array()));
    let initial_objective = objective(&init, ts, cfg.xi);

    // With no measurable noise the null model is a stationary point at F = 0.
    if ts.samples.iter().all(|s| s.noise_level == 0.0) && initial_objective >= 0.0 {
        return Ok(FitReport {
            model: NoiseModel::NULL,
            initial_objective,
            objective: objective(&NoiseModel::NULL, ts, cfg.xi),
            iterations: 0,
            converged: true,
        });
    }

    let mut p = init.to_array();
    let mut f = initial_objective;
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        let model = NoiseModel::from_array(p);
        let g = objective_gradient(&model, ts, cfg.xi);
        let active = active_set(&p, &g);
        let pg: f64 = (0..3).filter(|&i| !active[i]).map(|i| g[i] * g[i]).sum::<f64>().sqrt();
        if pg <= cfg.grad_tolerance {
            converged = true;
            break;
        }
        let h = objective_hessian(&model, ts, cfg.xi);
        let mut accepted = false;
        for _ in 0..MAX_DAMPING_STEPS {
            if let Some(d) = damped_step(&h, &g, &active, lambda) {
                let cand = project([p[0] + d[0], p[1] + d[1], p[2] + d[2]]);
                let fc = objective(&NoiseModel::from_array(cand), ts, cfg.xi);
                if fc < f {
                    p = cand;
                    f = fc;
                    lambda = (lambda * 0.3).max(1e-12);
                    accepted = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        iterations += 1;
        if !accepted {
            // no representable step lowers F any further
            break;
        }
    }

    Ok(FitReport {
        model: NoiseModel::from_array(p),
        initial_objective,
        objective: f,
        iterations,
        converged,
    })
}
