//! Direct integration of the pairwise rate equation
//! dI_k/dt = Σ_i W_ik (I_i − I_k) on small lattices, and the standard
//! comparison against the coarse-grained solver.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dfield::{DiffusionCalculator, DiffusionField, FieldError, Mesh2D, ProbeLayer};
use crate::model::{build_lattice, DotModel, ElectronConfig, LatticeSpec, ModelError, Site};
use crate::observables::{envelope_moment, half_decay_time, DecayCurve, ObservableError};
use crate::rates::{RateEngine, RateError, RateParams};
use crate::solver::{evolve_observed, make_initial, DiffusionForm, SolverConfig, SolverError};

pub const DEFAULT_NETWORK_CAP: usize = 50_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("network has {count} sites, cap is {cap}")]
    TooManySites { count: usize, cap: usize },
    #[error("duplicate site at cell {0:?}")]
    DuplicateSite([i32; 3]),
    #[error("state length {got} does not match {sites} sites")]
    StateLength { got: usize, sites: usize },
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("step size underflow at t = {time} s (dt = {dt} s)")]
    StepUnderflow { time: f64, dt: f64 },
    #[error("network curve never reached half decay by t = {0} s")]
    Horizon(f64),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Observable(#[from] ObservableError),
}

/// Sites plus a symmetric sparse rate matrix in CSR layout (rad/s).
#[derive(Debug, Clone, PartialEq)]
pub struct RateNetwork {
    pub sites: Vec<Site>,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    rates: Vec<f64>,
    pub state: Vec<f64>,
}

impl RateNetwork {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Stored (i, k, W) with i < k.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.len()).flat_map(move |i| {
            (self.row_start[i]..self.row_start[i + 1])
                .filter(move |&e| self.cols[e] > i)
                .map(move |e| (i, self.cols[e], self.rates[e]))
        })
    }

    pub fn rate(&self, i: usize, k: usize) -> f64 {
        let row = &self.cols[self.row_start[i]..self.row_start[i + 1]];
        match row.binary_search(&k) {
            Ok(p) => self.rates[self.row_start[i] + p],
            Err(_) => 0.0,
        }
    }

    pub fn set_state(&mut self, state: Vec<f64>) -> Result<(), OracleError> {
        if state.len() != self.len() {
            return Err(OracleError::StateLength {
                got: state.len(),
                sites: self.len(),
            });
        }
        self.state = state;
        Ok(())
    }

    /// Largest row sum of W; bounds the spectral radius of the generator by
    /// twice this value.
    pub fn max_out_rate(&self) -> f64 {
        (0..self.len())
            .map(|i| self.rates[self.row_start[i]..self.row_start[i + 1]].iter().sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn derivative(&self, y: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let yk = y[k];
            let mut acc = 0.0;
            for e in self.row_start[k]..self.row_start[k + 1] {
                acc += self.rates[e] * (y[self.cols[e]] - yk);
            }
            *o = acc;
        }
    }
}

/// Every pair within the pair cutoff, rates from the lattice engine. The
/// state starts at zero.
pub fn build_network(sites: &[Site], dot: &DotModel, p: RateParams) -> Result<RateNetwork, OracleError> {
    build_network_capped(sites, dot, p, DEFAULT_NETWORK_CAP)
}

pub fn build_network_capped(
    sites: &[Site],
    dot: &DotModel,
    p: RateParams,
    cap: usize,
) -> Result<RateNetwork, OracleError> {
    if sites.len() > cap {
        return Err(OracleError::TooManySites {
            count: sites.len(),
            cap,
        });
    }
    let engine = RateEngine::new(dot, p)?;
    let mut by_cell = HashMap::with_capacity(sites.len());
    for (n, s) in sites.iter().enumerate() {
        if by_cell.insert(s.cell, n).is_some() {
            return Err(OracleError::DuplicateSite(s.cell));
        }
    }
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); sites.len()];
    for (n, s) in sites.iter().enumerate() {
        for (d, w) in engine.rates_from(s.cell) {
            let other = [s.cell[0] + d[0], s.cell[1] + d[1], s.cell[2] + d[2]];
            if let Some(&m) = by_cell.get(&other) {
                // each pair once, mirrored for exact symmetry
                if m > n && w != 0.0 {
                    rows[n].push((m, w));
                    rows[m].push((n, w));
                }
            }
        }
    }
    let mut row_start = Vec::with_capacity(sites.len() + 1);
    let mut cols = Vec::new();
    let mut rates = Vec::new();
    row_start.push(0);
    for mut row in rows {
        row.sort_by_key(|e| e.0);
        for (c, w) in row {
            cols.push(c);
            rates.push(w);
        }
        row_start.push(cols.len());
    }
    Ok(RateNetwork {
        sites: sites.to_vec(),
        row_start,
        cols,
        rates,
        state: vec![0.0; sites.len()],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationStats {
    pub steps: u64,
    pub rejected: u64,
    pub initial_total: f64,
    pub final_total: f64,
}

impl IntegrationStats {
    pub fn relative_drift(&self) -> f64 {
        if self.initial_total == 0.0 {
            (self.final_total - self.initial_total).abs()
        } else {
            ((self.final_total - self.initial_total) / self.initial_total).abs()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<(f64, Vec<f64>)>,
    pub stats: IntegrationStats,
}

/// Integrates from `net.state` to `t_end`, storing the state at each of
/// `times`.
pub fn integrate_network(net: &RateNetwork, t_end: f64, tol: f64, times: &[f64]) -> Result<Trajectory, OracleError> {
    let mut samples = Vec::with_capacity(times.len());
    let stats = integrate_observed(net, t_end, tol, times, |t, y| samples.push((t, y.to_vec())))?;
    Ok(Trajectory { samples, stats })
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive Dormand-Prince integration with mixed error control
/// |err| ≤ tol·(1 + |y|). `observe` receives (t, state) at every time in
/// `times` (sorted, clipped to [0, t_end]); steps land on them exactly.
pub fn integrate_observed(
    net: &RateNetwork,
    t_end: f64,
    tol: f64,
    times: &[f64],
    mut observe: impl FnMut(f64, &[f64]),
) -> Result<IntegrationStats, OracleError> {
    if !(tol > 0.0) {
        return Err(OracleError::Tolerance(tol));
    }
    let n = net.len();
    let mut targets: Vec<f64> = times.iter().copied().filter(|&t| t >= 0.0 && t <= t_end).collect();
    targets.sort_by(f64::total_cmp);
    targets.dedup();

    let mut y = net.state.clone();
    let initial_total: f64 = y.iter().sum();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut t = 0.0;
    let mut next = 0;
    while next < targets.len() && targets[next] <= 0.0 {
        observe(0.0, &y);
        next += 1;
    }
    let max_rate = net.max_out_rate();
    let mut dt = if max_rate > 0.0 {
        (1.0 / max_rate).min(t_end)
    } else {
        t_end
    };
    let (mut steps, mut rejected) = (0u64, 0u64);
    net.derivative(&y, &mut k[0]);
    while t < t_end {
        let stop = if next < targets.len() { targets[next] } else { t_end };
        let lands = dt >= stop - t;
        let h = if lands { stop - t } else { dt };
        if h <= 1e-14 * t_end.max(1e-300) && !lands {
            return Err(OracleError::StepUnderflow { time: t, dt: h });
        }
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, a) in A[s][..s].iter().enumerate() {
                    if *a != 0.0 {
                        acc += h * a * k[j][i];
                    }
                }
                stage[i] = acc;
            }
            net.derivative(&stage, &mut k[s]);
        }
        // stage after s = 6 holds the 5th-order solution (FSAL)
        y_new.copy_from_slice(&stage);
        let mut err = 0.0f64;
        for i in 0..n {
            let mut e = 0.0;
            for s in 0..7 {
                e += (B5[s] - B4[s]) * k[s][i];
            }
            let scale = tol * (1.0 + y[i].abs().max(y_new[i].abs()));
            err = err.max((h * e).abs() / scale);
        }
        if err <= 1.0 {
            steps += 1;
            t = if lands { stop } else { t + h };
            std::mem::swap(&mut y, &mut y_new);
            let last = k.pop().expect("seven stages");
            k.insert(0, last);
            while next < targets.len() && targets[next] <= t {
                observe(t, &y);
                next += 1;
            }
        } else {
            rejected += 1;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        // a short landing step says nothing about the next step size
        if !(lands && err <= 1.0) || factor < 1.0 {
            dt = h * factor;
        }
        if dt <= 1e-14 * t_end {
            return Err(OracleError::StepUnderflow { time: t, dt });
        }
    }
    Ok(IntegrationStats {
        steps,
        rejected,
        initial_total,
        final_total: y.iter().sum(),
    })
}

/// Parameters of the network-vs-solver comparison on a scaled,
/// single-layer dot. Lengths are in lattice cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub l0_cells: u32,
    pub r0_cells: u32,
    pub half_cells: u32,
    pub field: f64,
    pub electron: ElectronConfig,
    pub tol: f64,
    pub samples: usize,
    pub form: DiffusionForm,
}

impl Default for OracleCheck {
    fn default() -> Self {
        Self {
            l0_cells: 8,
            r0_cells: 8,
            half_cells: 80,
            field: 2.0,
            electron: ElectronConfig::Absent,
            tol: 1e-10,
            samples: 40,
            form: DiffusionForm::NonDivergence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub check: OracleCheck,
    pub sites: usize,
    pub network: Vec<(f64, f64)>,
    pub pde: Vec<(f64, f64)>,
    pub network_half_decay: f64,
    /// max |h_pde − h_net|/h_net over samples with t ≤ t½.
    pub max_relative_gap: f64,
    pub conservation_drift: f64,
    pub background_d: f64,
}

impl OracleCheck {
    /// The scaled dot: l0 = l0_cells·a0 and a single lattice layer.
    pub fn dot(&self, base: &DotModel) -> DotModel {
        let a = base.lattice_constant;
        DotModel {
            fock_darwin_radius: self.l0_cells as f64 * a,
            thickness: a,
            field: self.field,
            electron: self.electron,
            ..*base
        }
    }

    /// Runs both pipelines on matching grids (mesh nodes sit on lattice
    /// sites) and compares the normalized Overhauser decays.
    pub fn run(&self, base: &DotModel, params: RateParams) -> Result<OracleReport, OracleError> {
        let dot = self.dot(base);
        let a = dot.lattice_constant;
        let half = self.half_cells;
        let sites = build_lattice(
            &LatticeSpec {
                spacing: a,
                half_extent: [half, half, 0],
            },
            DEFAULT_NETWORK_CAP as u64,
        )?;
        let calc = DiffusionCalculator::new(&dot, params, ProbeLayer::Midplane)?;
        let mesh = Mesh2D::square(half as f64 * a, a)?;
        let field = calc.build(&mesh)?;
        let background = calc.coefficient_at(half as f64 * a * 0.9, 0.0);

        let r0 = self.r0_cells as f64 * a;
        let l0 = dot.fock_darwin_radius;
        let horizon = horizon(&field, r0, l0);
        let times: Vec<f64> = (0..=self.samples)
            .map(|k| horizon * k as f64 / self.samples as f64)
            .collect();

        let mut net = build_network(&sites, &dot, params)?;
        let initial: Vec<f64> = sites
            .iter()
            .map(|s| (-(s.x * s.x + s.y * s.y) / (r0 * r0)).exp())
            .collect();
        net.set_state(initial)?;
        let weights: Vec<f64> = sites.iter().map(|s| dot.envelope(s.x, s.y, 0.0)).collect();
        let mut raw_net = Vec::with_capacity(times.len());
        let stats = integrate_observed(&net, horizon, self.tol, &times, |t, y| {
            raw_net.push((t, weights.iter().zip(y).map(|(w, v)| w * v).sum::<f64>()));
        })?;

        let (init, _) = make_initial(&mesh, r0)?;
        let cfg = SolverConfig {
            t_end: horizon,
            form: self.form,
            ..Default::default()
        };
        let mut raw_pde = Vec::with_capacity(times.len());
        evolve_observed(&init, &field, &cfg, &times, |f| {
            raw_pde.push((f.time, envelope_moment(f, &dot)));
        })?;

        let net_curve = DecayCurve::from_raw("network", r0, &raw_net)?;
        let pde_curve = DecayCurve::from_raw("pde", r0, &raw_pde)?;
        let t_half = half_decay_time(&net_curve).map_err(|_| OracleError::Horizon(horizon))?;
        let max_relative_gap = net_curve
            .samples
            .iter()
            .zip(&pde_curve.samples)
            .filter(|((t, _), _)| *t <= t_half)
            .map(|((_, hn), (_, hp))| ((hp - hn) / hn).abs())
            .fold(0.0, f64::max);
        Ok(OracleReport {
            check: *self,
            sites: sites.len(),
            network: net_curve.samples,
            pde: pde_curve.samples,
            network_half_decay: t_half,
            max_relative_gap,
            conservation_drift: stats.relative_drift(),
            background_d: background,
        })
    }
}

/// Twice the half-decay time the slowest coefficient near the dot would
/// give on its own, so both curves pass 0.5 well inside the window.
fn horizon(field: &DiffusionField, r0: f64, l0: f64) -> f64 {
    let reach = 2.0 * l0.max(r0);
    let slowest = field
        .mesh
        .nodes()
        .zip(&field.values)
        .filter(|((_, _, x, y), _)| x.hypot(*y) <= reach)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    2.0 * (r0 * r0 + l0 * l0) / (4.0 * slowest.max(1e-12))
}
