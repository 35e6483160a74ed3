//! Overhauser field, decay times and effective-diffusion fits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::DotModel;
use crate::solver::PolarizationField;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservableError {
    #[error("curve never reaches 0.5 within t_end = {t_end} s (last value {last})")]
    InsufficientHorizon { t_end: f64, last: f64 },
    #[error("invalid decay curve: {0}")]
    InvalidCurve(String),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("curve is not monotonically decaying: {0}")]
    NotDecaying(String),
    #[error("initial Overhauser field vanishes; cannot normalize")]
    ZeroInitial,
}

/// Normalized Overhauser decay h(t)/h(0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub id: String,
    /// Radius of the Gaussian initial polarization (nm).
    pub initial_radius: f64,
    pub samples: Vec<(f64, f64)>,
}

impl DecayCurve {
    /// Checks strictly increasing times and finite values.
    pub fn new(id: impl Into<String>, initial_radius: f64, samples: Vec<(f64, f64)>) -> Result<Self, ObservableError> {
        if samples.is_empty() {
            return Err(ObservableError::InvalidCurve("no samples".into()));
        }
        for w in samples.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(ObservableError::InvalidCurve(format!(
                    "times not strictly increasing at {} -> {}",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(&(t, h)) = samples.iter().find(|(t, h)| !t.is_finite() || !h.is_finite()) {
            return Err(ObservableError::InvalidCurve(format!("non-finite sample ({t}, {h})")));
        }
        Ok(Self {
            id: id.into(),
            initial_radius,
            samples,
        })
    }

    /// Normalizes raw (t, h) pairs by the first value.
    pub fn from_raw(id: impl Into<String>, initial_radius: f64, raw: &[(f64, f64)]) -> Result<Self, ObservableError> {
        let h0 = raw.first().map(|s| s.1).unwrap_or(0.0);
        if h0 == 0.0 {
            return Err(ObservableError::ZeroInitial);
        }
        Self::new(id, initial_radius, raw.iter().map(|&(t, h)| (t, h / h0)).collect())
    }

    /// Samples the closed-form constant-D decay on `times`.
    pub fn analytic(d: f64, initial_radius: f64, l0: f64, times: &[f64]) -> Self {
        Self {
            id: format!("analytic_d{d}"),
            initial_radius,
            samples: times
                .iter()
                .map(|&t| (t, analytic_decay(d, t, initial_radius, l0)))
                .collect(),
        }
    }

    pub fn t_end(&self) -> f64 {
        self.samples.last().map(|s| s.0).unwrap_or(0.0)
    }
}

/// h(t)/h(0) for constant D and a Gaussian initial polarization of radius
/// r0 weighted by the envelope of radius l0: 1/(1 + 4Dt/(r0² + l0²)).
pub fn analytic_decay(d: f64, t: f64, r0: f64, l0: f64) -> f64 {
    1.0 / (1.0 + 4.0 * d * t / (r0 * r0 + l0 * l0))
}

/// Σ_k A_k⟨I_k⟩ in rad/s, summed over the midplane layer: each node
/// stands for (h/a0)² sites with coupling A(x, y, 0).
pub fn overhauser(field: &PolarizationField, dot: &DotModel) -> f64 {
    let a0 = dot.lattice_constant;
    dot.hyperfine_peak * envelope_moment(field, dot) / (a0 * a0)
}

/// ∫ exp(−r²/l0²)·I dA over the mesh (nm²). Proportional to the Overhauser
/// field but independent of A0, so curves stay defined when A0 = 0.
pub fn envelope_moment(field: &PolarizationField, dot: &DotModel) -> f64 {
    let mesh = &field.mesh;
    let area = mesh.h * mesh.h;
    mesh.nodes()
        .zip(&field.values)
        .map(|((_, _, x, y), &v)| dot.envelope(x, y, 0.0) * v)
        .sum::<f64>()
        * area
}

/// First time the curve falls to 0.5, linearly interpolated.
pub fn half_decay_time(curve: &DecayCurve) -> Result<f64, ObservableError> {
    let s = &curve.samples;
    if let Some(&(t, h)) = s.first() {
        if h <= 0.5 {
            return Ok(t);
        }
    }
    for w in s.windows(2) {
        let ((t0, h0), (t1, h1)) = (w[0], w[1]);
        if h1 <= 0.5 {
            if h1 == 0.5 {
                return Ok(t1);
            }
            return Ok(t0 + (h0 - 0.5) / (h0 - h1) * (t1 - t0));
        }
    }
    Err(ObservableError::InsufficientHorizon {
        t_end: curve.t_end(),
        last: s.last().map(|s| s.1).unwrap_or(f64::NAN),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    #[serde(rename = "D_eff_nm2_per_s")]
    pub d_eff: f64,
    /// Root-mean-square of h − model over the window.
    pub residual: f64,
    pub window: (f64, f64),
}

pub const FIT_MIN_SAMPLES: usize = 10;
pub const FIT_RANGE: (f64, f64) = (1e-3, 1e3);

/// Least-squares constant D reproducing the curve through the closed-form
/// decay. Scans a log grid over [`FIT_RANGE`], then refines by golden
/// section in log D.
pub fn fit_deff(curve: &DecayCurve, dot: &DotModel) -> Result<FitResult, ObservableError> {
    let s = &curve.samples;
    if s.len() < FIT_MIN_SAMPLES {
        return Err(ObservableError::TooFewSamples {
            need: FIT_MIN_SAMPLES,
            got: s.len(),
        });
    }
    for w in s.windows(2) {
        if w[1].1 > w[0].1 * (1.0 + 1e-9) + 1e-12 {
            return Err(ObservableError::NotDecaying(format!(
                "h rises from {} to {} between t = {} and {} s",
                w[0].1, w[1].1, w[0].0, w[1].0
            )));
        }
    }
    if s[s.len() - 1].1 >= s[0].1 {
        return Err(ObservableError::NotDecaying("no net decay over the window".into()));
    }
    let r0 = curve.initial_radius;
    let l0 = dot.fock_darwin_radius;
    let sse = |log_d: f64| -> f64 {
        let d = log_d.exp();
        s.iter()
            .map(|&(t, h)| {
                let e = h - analytic_decay(d, t, r0, l0);
                e * e
            })
            .sum()
    };

    let (lo, hi) = (FIT_RANGE.0.ln(), FIT_RANGE.1.ln());
    let n = 240;
    let grid: Vec<f64> = (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect();
    let best = (0..=n)
        .min_by(|&a, &b| sse(grid[a]).total_cmp(&sse(grid[b])))
        .unwrap_or(0);
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(n)];
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (sse(c), sse(d));
    while b - a > 1e-12 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = sse(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = sse(d);
        }
    }
    let log_d = 0.5 * (a + b);
    Ok(FitResult {
        d_eff: log_d.exp(),
        residual: (sse(log_d) / s.len() as f64).sqrt(),
        window: (s[0].0, s[s.len() - 1].0),
    })
}
