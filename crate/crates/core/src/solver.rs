//! Finite-difference propagation of the polarization field
//! ∂I/∂t = D(x, y)(∂²x + ∂²y) I with the field pinned to zero on the outer
//! boundary.
//!
//! Two schemes: forward Euler on the 5-point stencil, and Peaceman-Rachford
//! ADI. Both default to the non-divergence operator D·ΔI; the conservative
//! ∇·(D∇I) form, with face coefficients averaged from the two nodes, is
//! available for sensitivity runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dfield::{DiffusionField, Mesh2D};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("mesh of the polarization field does not match the diffusion field")]
    MeshMismatch,
    #[error("invalid solver configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("initial radius must be positive, got {0}")]
    InitialRadius(f64),
    #[error("explicit step {dt} s exceeds the stability limit {limit} s")]
    UnstableStep { dt: f64, limit: f64 },
    #[error("instability at t = {time} s: |I| reached {value} at node ({x}, {y}) nm, initial max {initial_max}")]
    Instability {
        time: f64,
        value: f64,
        x: f64,
        y: f64,
        initial_max: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarizationField {
    pub mesh: Mesh2D,
    pub values: Vec<f64>,
    /// Seconds since the start of the decay.
    pub time: f64,
}

impl PolarizationField {
    pub fn zeros(mesh: Mesh2D) -> Self {
        Self {
            mesh,
            values: vec![0.0; mesh.len()],
            time: 0.0,
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Gaussian initial polarization exp(−r²/r0²) with unit peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Explicit,
    Adi,
}

impl Scheme {
    pub fn as_key(self) -> &'static str {
        match self {
            Scheme::Explicit => "explicit",
            Scheme::Adi => "adi",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        match key {
            "explicit" => Some(Self::Explicit),
            "adi" => Some(Self::Adi),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionForm {
    /// D(x, y)·ΔI.
    #[default]
    NonDivergence,
    /// ∇·(D∇I).
    Divergence,
}

impl DiffusionForm {
    pub fn as_key(self) -> &'static str {
        match self {
            DiffusionForm::NonDivergence => "non_divergence",
            DiffusionForm::Divergence => "divergence",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        match key {
            "non_divergence" => Some(Self::NonDivergence),
            "divergence" => Some(Self::Divergence),
            _ => None,
        }
    }
}

/// Where the field is held at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Outer edge of the square mesh.
    #[default]
    DirichletZero,
    /// Everything at r ≥ radius, plus the mesh edge.
    DirichletDisc { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeStep {
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub scheme: Scheme,
    pub dt: TimeStep,
    pub t_end: f64,
    pub snapshot_times: Vec<f64>,
    pub form: DiffusionForm,
    pub boundary: Boundary,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Explicit,
            dt: TimeStep::Auto,
            t_end: 600.0,
            snapshot_times: Vec::new(),
            form: DiffusionForm::NonDivergence,
            boundary: Boundary::DirichletZero,
        }
    }
}

impl SolverConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            out.push(format!("t_end must be positive, got {}", self.t_end));
        }
        if let TimeStep::Fixed(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                out.push(format!("dt must be positive, got {dt}"));
            }
        }
        for &t in &self.snapshot_times {
            if !(t >= 0.0 && t <= self.t_end) {
                out.push(format!("snapshot time {t} outside [0, {}]", self.t_end));
            }
        }
        if let Boundary::DirichletDisc { radius } = self.boundary {
            if !(radius > 0.0) {
                out.push(format!("disc radius must be positive, got {radius}"));
            }
        }
        out
    }
}

/// exp(−r²/r0²) on every node, zero on the boundary. The second value
/// carries warnings, e.g. when r0 is large enough for the boundary to
/// truncate the Gaussian.
pub fn make_initial(mesh: &Mesh2D, r0: f64) -> Result<(PolarizationField, Vec<String>), SolverError> {
    if !(r0 > 0.0 && r0.is_finite()) {
        return Err(SolverError::InitialRadius(r0));
    }
    let mut warnings = Vec::new();
    let width = (mesh.nx - 1).min(mesh.ny - 1) as f64 * mesh.h;
    if r0 > width / 4.0 {
        warnings.push(format!(
            "initial radius {r0} nm exceeds a quarter of the domain width {width} nm; the boundary truncates the profile"
        ));
    }
    let values = mesh
        .nodes()
        .map(|(ix, iy, x, y)| {
            if mesh.is_boundary(ix, iy) {
                0.0
            } else {
                (-(x * x + y * y) / (r0 * r0)).exp()
            }
        })
        .collect();
    Ok((
        PolarizationField {
            mesh: *mesh,
            values,
            time: 0.0,
        },
        warnings,
    ))
}

/// 0.9·h²/(4·max D), or `t_end` when D vanishes everywhere.
pub fn stability_dt(d: &DiffusionField, t_end: f64) -> f64 {
    let max = d.max();
    if max > 0.0 {
        0.9 * d.mesh.h * d.mesh.h / (4.0 * max)
    } else {
        t_end
    }
}

/// Largest ADI step for which both explicit half-steps keep nonnegative
/// weights, so the scheme obeys the discrete maximum principle.
pub fn adi_positive_dt(d: &DiffusionField, t_end: f64) -> f64 {
    let max = d.max();
    if max > 0.0 {
        d.mesh.h * d.mesh.h / max
    } else {
        t_end
    }
}

/// Resolved step size for a configuration.
pub fn resolve_dt(d: &DiffusionField, cfg: &SolverConfig) -> Result<f64, SolverError> {
    match (cfg.dt, cfg.scheme) {
        (TimeStep::Auto, Scheme::Explicit) => Ok(stability_dt(d, cfg.t_end).min(cfg.t_end)),
        (TimeStep::Auto, Scheme::Adi) => Ok(adi_positive_dt(d, cfg.t_end).min(cfg.t_end)),
        (TimeStep::Fixed(dt), Scheme::Explicit) => {
            let max = d.max();
            let limit = if max > 0.0 {
                d.mesh.h * d.mesh.h / (4.0 * max)
            } else {
                f64::INFINITY
            };
            if dt > limit {
                Err(SolverError::UnstableStep { dt, limit })
            } else {
                Ok(dt)
            }
        }
        (TimeStep::Fixed(dt), Scheme::Adi) => Ok(dt),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub dt: f64,
    pub steps: u64,
    pub initial_total: f64,
    pub final_total: f64,
    pub final_time: f64,
}

impl RunStats {
    /// |ΣI(t_end) − ΣI(0)| / ΣI(0).
    pub fn relative_drift(&self) -> f64 {
        if self.initial_total == 0.0 {
            0.0
        } else {
            (self.final_total - self.initial_total).abs() / self.initial_total
        }
    }
}

/// Runs to `cfg.t_end` and returns copies of the field at each snapshot time.
pub fn evolve(
    init: &PolarizationField,
    d: &DiffusionField,
    cfg: &SolverConfig,
) -> Result<Vec<PolarizationField>, SolverError> {
    let mut out = Vec::with_capacity(cfg.snapshot_times.len());
    evolve_observed(init, d, cfg, &cfg.snapshot_times, |f| out.push(f.clone()))?;
    Ok(out)
}

/// Runs to `cfg.t_end`, calling `observe` at every time in `times` (sorted,
/// duplicates dropped). Steps are shortened to land on each time exactly.
pub fn evolve_observed(
    init: &PolarizationField,
    d: &DiffusionField,
    cfg: &SolverConfig,
    times: &[f64],
    mut observe: impl FnMut(&PolarizationField),
) -> Result<RunStats, SolverError> {
    evolve_until(init, d, cfg, times, |f| {
        observe(f);
        true
    })
}

/// Like [`evolve_observed`], but stops early once `observe` returns false.
pub fn evolve_until(
    init: &PolarizationField,
    d: &DiffusionField,
    cfg: &SolverConfig,
    times: &[f64],
    mut observe: impl FnMut(&PolarizationField) -> bool,
) -> Result<RunStats, SolverError> {
    if init.mesh != d.mesh {
        return Err(SolverError::MeshMismatch);
    }
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(SolverError::Config(v));
    }
    for &t in times {
        if !(t >= 0.0 && t <= cfg.t_end) {
            return Err(SolverError::Config(vec![format!(
                "observation time {t} outside [0, {}]",
                cfg.t_end
            )]));
        }
    }
    let dt = resolve_dt(d, cfg)?;
    let mut targets: Vec<f64> = times.to_vec();
    targets.sort_by(f64::total_cmp);
    targets.dedup();

    let mesh = d.mesh;
    let fixed = fixed_mask(&mesh, cfg.boundary);
    let mut field = init.clone();
    for (v, &f) in field.values.iter_mut().zip(&fixed) {
        if f {
            *v = 0.0;
        }
    }
    let initial_max = field.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let initial_total = field.total();
    let mut stepper = Stepper::new(&mesh, &d.values, &fixed, cfg.scheme, cfg.form);
    let mut steps = 0u64;
    let limit = 1.01 * initial_max;

    let mut next = 0;
    let mut running = true;
    while next < targets.len() && targets[next] <= 0.0 {
        running &= observe(&field);
        next += 1;
    }
    let mut t = 0.0;
    while running && t < cfg.t_end {
        let stop = if next < targets.len() { targets[next] } else { cfg.t_end };
        let remaining = stop - t;
        let step = if remaining <= dt * (1.0 + 1e-9) { remaining } else { dt };
        let peak = stepper.step(&mut field.values, step);
        steps += 1;
        t = if step == remaining { stop } else { t + step };
        field.time = t;
        if peak.0 > limit {
            let (x, y) = mesh.coords(peak.1 % mesh.nx, peak.1 / mesh.nx);
            return Err(SolverError::Instability {
                time: t,
                value: peak.0,
                x,
                y,
                initial_max,
            });
        }
        while running && next < targets.len() && targets[next] <= t {
            running &= observe(&field);
            next += 1;
        }
    }
    Ok(RunStats {
        dt,
        steps,
        initial_total,
        final_total: field.total(),
        final_time: t,
    })
}

fn fixed_mask(mesh: &Mesh2D, boundary: Boundary) -> Vec<bool> {
    mesh.nodes()
        .map(|(ix, iy, x, y)| {
            mesh.is_boundary(ix, iy)
                || matches!(boundary, Boundary::DirichletDisc { radius } if x.hypot(y) >= radius)
        })
        .collect()
}

/// Owns scratch buffers for one run.
struct Stepper<'a> {
    mesh: Mesh2D,
    d: &'a [f64],
    fixed: &'a [bool],
    scheme: Scheme,
    form: DiffusionForm,
    scratch: Vec<f64>,
    rhs: Vec<f64>,
    cprime: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(mesh: &Mesh2D, d: &'a [f64], fixed: &'a [bool], scheme: Scheme, form: DiffusionForm) -> Self {
        let n = mesh.len();
        let adi = scheme == Scheme::Adi;
        Self {
            mesh: *mesh,
            d,
            fixed,
            scheme,
            form,
            scratch: vec![0.0; n],
            rhs: if adi { vec![0.0; n] } else { Vec::new() },
            cprime: if adi { vec![0.0; n] } else { Vec::new() },
        }
    }

    /// Advances `u` by `dt`; returns the largest |u| and its node.
    fn step(&mut self, u: &mut Vec<f64>, dt: f64) -> (f64, usize) {
        match self.scheme {
            Scheme::Explicit => self.explicit(u, dt),
            Scheme::Adi => self.adi(u, dt),
        }
    }

    /// Coefficients (west, east) of the 1D second-difference operator along
    /// an axis at node n, with `stride` to the next node on that axis.
    #[inline]
    fn weights(&self, n: usize, stride: usize) -> (f64, f64) {
        match self.form {
            DiffusionForm::NonDivergence => (self.d[n], self.d[n]),
            DiffusionForm::Divergence => (
                0.5 * (self.d[n] + self.d[n - stride]),
                0.5 * (self.d[n] + self.d[n + stride]),
            ),
        }
    }

    fn explicit(&mut self, u: &mut Vec<f64>, dt: f64) -> (f64, usize) {
        let nx = self.mesh.nx;
        let ny = self.mesh.ny;
        let r = dt / (self.mesh.h * self.mesh.h);
        let next = &mut self.scratch;
        let mut peak = (0.0f64, 0usize);
        for iy in 0..ny {
            for ix in 0..nx {
                let n = iy * nx + ix;
                if self.fixed[n] {
                    next[n] = 0.0;
                    continue;
                }
                let c = u[n];
                let v = match self.form {
                    DiffusionForm::NonDivergence => {
                        c + r * self.d[n] * (u[n - 1] + u[n + 1] + u[n - nx] + u[n + nx] - 4.0 * c)
                    }
                    DiffusionForm::Divergence => {
                        let dn = self.d[n];
                        let dw = 0.5 * (dn + self.d[n - 1]);
                        let de = 0.5 * (dn + self.d[n + 1]);
                        let ds = 0.5 * (dn + self.d[n - nx]);
                        let dno = 0.5 * (dn + self.d[n + nx]);
                        c + r
                            * (de * (u[n + 1] - c) - dw * (c - u[n - 1]) + dno * (u[n + nx] - c)
                                - ds * (c - u[n - nx]))
                    }
                };
                next[n] = v;
                if v.abs() > peak.0 {
                    peak = (v.abs(), n);
                }
            }
        }
        std::mem::swap(u, next);
        peak
    }

    /// Explicit half-operator (1 + θL) along one axis applied to `src`.
    fn explicit_half(&self, src: &[f64], dst: &mut [f64], theta: f64, stride: usize) {
        for n in 0..src.len() {
            if self.fixed[n] {
                dst[n] = 0.0;
                continue;
            }
            let (w, e) = self.weights(n, stride);
            let c = src[n];
            dst[n] = c + theta * (w * (src[n - stride] - c) + e * (src[n + stride] - c));
        }
    }

    /// Solves (1 − θL) v = rhs along one axis for every line at once. Lines
    /// run over `inner` with `stride`; `outer` enumerates the line starts.
    fn implicit_half(&mut self, out: &mut [f64], theta: f64, along_x: bool) {
        let nx = self.mesh.nx;
        let ny = self.mesh.ny;
        let (len, stride) = if along_x { (nx, 1) } else { (ny, nx) };
        let lines = if along_x { ny } else { nx };
        let start = |line: usize| if along_x { line * nx } else { line };
        // Thomas algorithm; fixed nodes are identity rows.
        for line in 0..lines {
            let s = start(line);
            let mut prev_c = 0.0;
            let mut prev_d = 0.0;
            for p in 0..len {
                let n = s + p * stride;
                let (a, b, c) = if self.fixed[n] {
                    (0.0, 1.0, 0.0)
                } else {
                    let (w, e) = self.weights(n, stride);
                    (-theta * w, 1.0 + theta * (w + e), -theta * e)
                };
                let rhs = if self.fixed[n] { 0.0 } else { self.rhs[n] };
                let denom = b - a * prev_c;
                let cp = c / denom;
                let dp = (rhs - a * prev_d) / denom;
                self.cprime[n] = cp;
                out[n] = dp;
                prev_c = cp;
                prev_d = dp;
            }
            let mut after = 0.0;
            for p in (0..len).rev() {
                let n = s + p * stride;
                let v = out[n] - self.cprime[n] * after;
                out[n] = v;
                after = v;
            }
        }
    }

    fn adi(&mut self, u: &mut [f64], dt: f64) -> (f64, usize) {
        let nx = self.mesh.nx;
        let theta = 0.5 * dt / (self.mesh.h * self.mesh.h);
        let mut rhs = std::mem::take(&mut self.rhs);
        let mut half = std::mem::take(&mut self.scratch);
        // x implicit, y explicit
        self.explicit_half(u, &mut rhs, theta, nx);
        self.rhs = rhs;
        self.implicit_half(&mut half, theta, true);
        // y implicit, x explicit
        let mut rhs = std::mem::take(&mut self.rhs);
        self.explicit_half(&half, &mut rhs, theta, 1);
        self.rhs = rhs;
        self.implicit_half(u, theta, false);
        self.scratch = half;
        u.iter()
            .enumerate()
            .fold((0.0f64, 0usize), |p, (n, v)| if v.abs() > p.0 { (v.abs(), n) } else { p })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfield::FieldMetadata;
    use crate::dfield::ProbeLayer;
    use crate::model::ElectronConfig;

    fn meta() -> FieldMetadata {
        FieldMetadata {
            field_t: 2.0,
            electron: ElectronConfig::Absent,
            pair_cutoff_nm: 1.689,
            broadening_cutoff_nm: 3.378,
            probe: ProbeLayer::Midplane,
        }
    }

    fn constant(mesh: Mesh2D, d: f64) -> DiffusionField {
        DiffusionField::constant(mesh, d, meta())
    }

    #[test]
    fn initial_profile() {
        let mesh = Mesh2D::square(300.0, 3.0).unwrap();
        let (f, warn) = make_initial(&mesh, 30.0).unwrap();
        assert!(warn.is_empty());
        let (cx, cy) = mesh.nearest(0.0, 0.0);
        assert_eq!(f.values[mesh.index(cx, cy)], 1.0);
        let (rx, ry) = mesh.nearest(30.0, 0.0);
        assert!((f.values[mesh.index(rx, ry)] - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(f.values[0], 0.0);
        assert!(make_initial(&mesh, 0.0).is_err());
        let (_, warn) = make_initial(&mesh, 200.0).unwrap();
        assert_eq!(warn.len(), 1);
    }

    #[test]
    fn stability_dt_arithmetic() {
        let mesh = Mesh2D::square(30.0, 3.0).unwrap();
        let dt = stability_dt(&constant(mesh, 7.0), 100.0);
        assert!((dt - 0.9 * 9.0 / 28.0).abs() < 1e-15);
        let dt70 = stability_dt(&constant(mesh, 70.0), 100.0);
        assert!((dt70 - dt / 10.0).abs() < 1e-15);
        assert_eq!(stability_dt(&constant(mesh, 0.0), 100.0), 100.0);
    }

    #[test]
    fn zero_diffusion_and_zero_data_are_stationary() {
        let mesh = Mesh2D::square(30.0, 3.0).unwrap();
        let (init, _) = make_initial(&mesh, 6.0).unwrap();
        for scheme in [Scheme::Explicit, Scheme::Adi] {
            let cfg = SolverConfig {
                scheme,
                t_end: 10.0,
                snapshot_times: vec![5.0, 10.0],
                ..Default::default()
            };
            let out = evolve(&init, &constant(mesh, 0.0), &cfg).unwrap();
            assert_eq!(out.len(), 2);
            assert_eq!(out[1].values, init.values);
            let zero = PolarizationField::zeros(mesh);
            let out = evolve(&zero, &constant(mesh, 3.0), &cfg).unwrap();
            assert!(out.iter().all(|f| f.values.iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn explicit_rejects_oversized_step() {
        let mesh = Mesh2D::square(30.0, 3.0).unwrap();
        let (init, _) = make_initial(&mesh, 6.0).unwrap();
        let cfg = SolverConfig {
            dt: TimeStep::Fixed(1.0),
            t_end: 10.0,
            ..Default::default()
        };
        assert!(matches!(
            evolve(&init, &constant(mesh, 7.0), &cfg),
            Err(SolverError::UnstableStep { .. })
        ));
    }

    #[test]
    fn instability_is_detected() {
        // a negative coefficient at the peak drives anti-diffusion
        let mesh = Mesh2D::square(30.0, 3.0).unwrap();
        let (init, _) = make_initial(&mesh, 6.0).unwrap();
        let mut d = constant(mesh, 7.0);
        let (cx, cy) = mesh.nearest(0.0, 0.0);
        d.values[mesh.index(cx, cy)] = -7.0;
        let cfg = SolverConfig {
            t_end: 50.0,
            ..Default::default()
        };
        match evolve(&init, &d, &cfg) {
            Err(SolverError::Instability { x, y, initial_max, .. }) => {
                assert_eq!((x, y), (0.0, 0.0));
                assert_eq!(initial_max, 1.0);
            }
            other => panic!("expected instability, got {other:?}"),
        }
    }

    #[test]
    fn maximum_principle_holds_for_both_schemes() {
        let mesh = Mesh2D::square(60.0, 3.0).unwrap();
        let (init, _) = make_initial(&mesh, 12.0).unwrap();
        let mut d = constant(mesh, 7.0);
        for (n, (_, _, x, y)) in mesh.nodes().enumerate() {
            d.values[n] = 7.0 * (1.0 - 0.9 * (-(x * x + y * y) / 400.0).exp()) + 50.0 * (-(x * x + y * y) / 25.0).exp();
        }
        for scheme in [Scheme::Explicit, Scheme::Adi] {
            for form in [DiffusionForm::NonDivergence, DiffusionForm::Divergence] {
                let cfg = SolverConfig {
                    scheme,
                    form,
                    t_end: 40.0,
                    snapshot_times: (1..=20).map(|k| 2.0 * k as f64).collect(),
                    ..Default::default()
                };
                let snaps = evolve(&init, &d, &cfg).unwrap();
                let mut last_max = init.max();
                for s in &snaps {
                    assert!(s.min() >= 0.0, "{scheme:?} {form:?} min {}", s.min());
                    assert!(s.max() <= last_max + 1e-15, "{scheme:?} {form:?}");
                    last_max = s.max();
                }
            }
        }
    }

    #[test]
    fn matches_gaussian_spread_for_constant_d() {
        // I(r,t) = (r0²/s²) exp(−r²/s²), s² = r0² + 4Dt
        let mesh = Mesh2D::square(300.0, 3.0).unwrap();
        let r0 = 30.0;
        let dval = 7.0;
        let (init, _) = make_initial(&mesh, r0).unwrap();
        let cfg = SolverConfig {
            t_end: 100.0,
            snapshot_times: vec![25.0, 50.0, 100.0],
            ..Default::default()
        };
        let snaps = evolve(&init, &constant(mesh, dval), &cfg).unwrap();
        for s in &snaps {
            let s2 = r0 * r0 + 4.0 * dval * s.time;
            let peak = r0 * r0 / s2;
            for (n, (_, _, x, y)) in mesh.nodes().enumerate() {
                let exact = peak * (-(x * x + y * y) / s2).exp();
                let err = (s.values[n] - exact).abs();
                assert!(err <= 0.01 * peak, "t={} ({x},{y}): {err}", s.time);
                if exact > 1e-2 * peak {
                    assert!(
                        err <= 0.01 * exact,
                        "t={} ({x},{y}): {} vs {exact}",
                        s.time,
                        s.values[n]
                    );
                }
            }
        }
    }

    #[test]
    fn constant_d_conserves_total_before_boundary_losses() {
        let mesh = Mesh2D::square(300.0, 3.0).unwrap();
        let (init, _) = make_initial(&mesh, 30.0).unwrap();
        for form in [DiffusionForm::NonDivergence, DiffusionForm::Divergence] {
            let cfg = SolverConfig {
                t_end: 20.0,
                form,
                ..Default::default()
            };
            let stats = evolve_observed(&init, &constant(mesh, 7.0), &cfg, &[], |_| {}).unwrap();
            assert!(stats.relative_drift() < 1e-6, "{}", stats.relative_drift());
        }
    }

    #[test]
    fn disc_boundary_pins_outer_ring() {
        let mesh = Mesh2D::square(60.0, 3.0).unwrap();
        let (init, _) = make_initial(&mesh, 12.0).unwrap();
        for scheme in [Scheme::Explicit, Scheme::Adi] {
            let cfg = SolverConfig {
                scheme,
                t_end: 5.0,
                snapshot_times: vec![5.0],
                boundary: Boundary::DirichletDisc { radius: 45.0 },
                ..Default::default()
            };
            let out = evolve(&init, &constant(mesh, 7.0), &cfg).unwrap();
            for (n, (_, _, x, y)) in mesh.nodes().enumerate() {
                if x.hypot(y) >= 45.0 {
                    assert_eq!(out[0].values[n], 0.0);
                }
            }
        }
    }

    #[test]
    fn schemes_agree_on_constant_d() {
        let mesh = Mesh2D::square(150.0, 3.0).unwrap();
        let (init, _) = make_initial(&mesh, 30.0).unwrap();
        let d = constant(mesh, 7.0);
        let run = |scheme| {
            let cfg = SolverConfig {
                scheme,
                t_end: 60.0,
                snapshot_times: vec![60.0],
                ..Default::default()
            };
            evolve(&init, &d, &cfg).unwrap().remove(0)
        };
        let e = run(Scheme::Explicit);
        let a = run(Scheme::Adi);
        let (cx, cy) = mesh.nearest(0.0, 0.0);
        let n = mesh.index(cx, cy);
        let exact = 900.0 / (900.0 + 4.0 * 7.0 * 60.0);
        for v in [e.values[n], a.values[n]] {
            assert!((v - exact).abs() < 5e-3 * exact, "{v} vs {exact}");
        }
        assert!((e.values[n] - a.values[n]).abs() < 5e-3 * exact);
    }
}
