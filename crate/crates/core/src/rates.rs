//! Pairwise nuclear flip-flop rates.
//!
//! The rate between sites i and k is the spin-3/2 closed form
//!
//! ```text
//! W = C²·√(2π)·[ 17/5 (A²+g)^-½ + 12/5 (A²+64C²+g)^-½ + 9/10 (A²+256C²+g)^-½ ]
//! ```
//!
//! with A = A_ik the Knight detuning, C = C_ik the dipolar plus
//! electron-mediated coupling and g = g_ik the local-field broadening. The
//! free functions evaluate one pair from first principles; [`RateEngine`]
//! evaluates the same expressions on the implicit lattice of the dot slab
//! with precomputed stencils and is what the field and network builders use.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{dipolar_coupling, dipolar_from_offset, DotModel, ModelError, Site};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("secular approximation invalid: B0 = {0} T")]
    SecularApproximation(f64),
    #[error("unsupported spin {0}: rate constants exist for I = 3/2 only")]
    UnsupportedSpin(f64),
    #[error("invalid rate parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),
    #[error("pair ({0}, {1}) has nonzero coupling but zero detuning and broadening")]
    UndampedPair(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Truncation radii (nm) for the pair sum and the broadening sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub pair_cutoff: f64,
    pub broadening_cutoff: f64,
}

impl RateParams {
    /// Third-neighbour shell for pairs, six spacings for the broadening.
    pub fn for_spacing(a0: f64) -> Self {
        Self {
            pair_cutoff: 3.0 * a0,
            broadening_cutoff: 6.0 * a0,
        }
    }

    pub fn violations(&self, a0: f64) -> Vec<String> {
        let mut out = Vec::new();
        let min = 2.0 * a0 * (1.0 - 1e-12);
        if !(self.pair_cutoff >= min) {
            out.push(format!(
                "pair cutoff {} nm is below 2·a0 = {} nm",
                self.pair_cutoff,
                2.0 * a0
            ));
        }
        if !(self.broadening_cutoff >= min) {
            out.push(format!(
                "broadening cutoff {} nm is below 2·a0 = {} nm",
                self.broadening_cutoff,
                2.0 * a0
            ));
        }
        out
    }
}

/// One entry of the symmetric rate matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRate {
    pub i: usize,
    pub k: usize,
    pub w: f64,
}

/// Knight detuning A_ik = 2S_z(A_i − A_k); zero without an electron.
pub fn knight_detuning(i: &Site, k: &Site, dot: &DotModel) -> f64 {
    let p = dot.electron.polarization();
    if p == 0.0 {
        return 0.0;
    }
    let ai = dot.hyperfine_peak * dot.envelope(i.x, i.y, i.z);
    let ak = dot.hyperfine_peak * dot.envelope(k.x, k.y, k.z);
    p * (ai - ak)
}

/// Coefficient multiplying A_i A_k in C_ik: 2S_z / (4 g_e μB B0/ħ).
fn mediated_factor(dot: &DotModel) -> Result<f64, RateError> {
    if !(dot.field > 0.0) {
        return Err(RateError::SecularApproximation(dot.field));
    }
    let p = dot.electron.polarization();
    if p == 0.0 {
        return Ok(0.0);
    }
    Ok(p / dot.constants.mediated_denominator(dot.field))
}

/// C_ik = B_ik + 2S_z A_i A_k / (4 g_e μB B0/ħ).
pub fn c_coefficient(i: &Site, k: &Site, dot: &DotModel) -> Result<f64, RateError> {
    let m = mediated_factor(dot)?;
    let b = dipolar_coupling(i, k, &dot.constants)?;
    if m == 0.0 {
        return Ok(b);
    }
    let ai = dot.hyperfine_peak * dot.envelope(i.x, i.y, i.z);
    let ak = dot.hyperfine_peak * dot.envelope(k.x, k.y, k.z);
    Ok(b + m * ai * ak)
}

/// Lattice cells j ≠ i, k of the dot slab within `radius` of the pair
/// midpoint, in ascending row-major order.
fn broadening_cells(ci: [i32; 3], ck: [i32; 3], radius_cells: f64, half_layers: i32) -> Vec<[i32; 3]> {
    // Work in doubled coordinates so the midpoint is integral.
    let mid2 = [ci[0] + ck[0], ci[1] + ck[1], ci[2] + ck[2]];
    let r2x4 = 4.0 * radius_cells * radius_cells * (1.0 + 1e-12);
    let reach = radius_cells.ceil() as i32 + 1;
    let lo = |a: usize| mid2[a].div_euclid(2) - reach;
    let hi = |a: usize| mid2[a].div_euclid(2) + reach + 1;
    let mut out = Vec::new();
    for jx in lo(0)..=hi(0) {
        for jy in lo(1)..=hi(1) {
            for jz in lo(2).max(-half_layers)..=hi(2).min(half_layers) {
                let d = [2 * jx - mid2[0], 2 * jy - mid2[1], 2 * jz - mid2[2]];
                let n2 = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as f64;
                let j = [jx, jy, jz];
                if n2 <= r2x4 && j != ci && j != ck {
                    out.push(j);
                }
            }
        }
    }
    out
}

/// g_ik = 80 Σ_{j≠i,k} (C_ij − C_kj)², summed over lattice sites within the
/// broadening cutoff of the pair midpoint in ascending site order.
pub fn broadening(i: &Site, k: &Site, dot: &DotModel, p: &RateParams) -> Result<f64, RateError> {
    let a = dot.lattice_constant;
    let half_layers = dot.half_layers();
    let mut sum = 0.0;
    for cj in broadening_cells(i.cell, k.cell, p.broadening_cutoff / a, half_layers) {
        let j = Site::at_cell(usize::MAX, cj, a);
        let d = c_coefficient(i, &j, dot)? - c_coefficient(k, &j, dot)?;
        sum += d * d;
    }
    Ok(80.0 * sum)
}

/// The three-term spin-3/2 rate for given detuning, coupling and broadening.
#[inline]
pub fn closed_form(detuning: f64, coupling: f64, broadening: f64) -> f64 {
    if coupling == 0.0 {
        return 0.0;
    }
    let s = (2.0 * std::f64::consts::PI).sqrt();
    let a2 = detuning * detuning;
    let c2 = coupling * coupling;
    c2 * s
        * (3.4 / (a2 + broadening).sqrt()
            + 2.4 / (a2 + 64.0 * c2 + broadening).sqrt()
            + 0.9 / (a2 + 256.0 * c2 + broadening).sqrt())
}

fn check_spin(dot: &DotModel) -> Result<(), RateError> {
    if dot.spin != 1.5 {
        return Err(RateError::UnsupportedSpin(dot.spin));
    }
    Ok(())
}

/// Flip-flop rate W_ik in s⁻¹; zero beyond the pair cutoff.
pub fn flipflop_rate(i: &Site, k: &Site, dot: &DotModel, p: &RateParams) -> Result<f64, RateError> {
    check_spin(dot)?;
    if i.distance(k) > p.pair_cutoff * (1.0 + 1e-12) {
        return Ok(0.0);
    }
    let c = c_coefficient(i, k, dot)?;
    if c == 0.0 {
        return Ok(0.0);
    }
    let a = knight_detuning(i, k, dot);
    let g = broadening(i, k, dot, p)?;
    if a == 0.0 && g == 0.0 {
        return Err(RateError::UndampedPair(i.index, k.index));
    }
    Ok(closed_form(a, c, g))
}

/// Ingredients of one pair, for inspection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairBreakdown {
    pub detuning: f64,
    pub coupling: f64,
    pub broadening: f64,
    pub rate: f64,
}

pub fn pair_breakdown(i: &Site, k: &Site, dot: &DotModel, p: &RateParams) -> Result<PairBreakdown, RateError> {
    Ok(PairBreakdown {
        detuning: knight_detuning(i, k, dot),
        coupling: c_coefficient(i, k, dot)?,
        broadening: broadening(i, k, dot, p)?,
        rate: flipflop_rate(i, k, dot, p)?,
    })
}

struct Partner {
    /// j − i in cells.
    rel: [i32; 3],
    /// B_ij − B_kj.
    db: f64,
}

struct PairStencil {
    /// k − i in cells.
    offset: [i32; 3],
    dipolar: f64,
    partners: Vec<Partner>,
    /// Σ db² over partners inside the slab, indexed by i_z + half_layers.
    db2_by_layer: Vec<f64>,
}

/// Precomputed pair and broadening stencils for a dot model.
pub struct RateEngine {
    dot: DotModel,
    params: RateParams,
    half_layers: i32,
    mediated: f64,
    stencils: Vec<PairStencil>,
    reach: i32,
    layer_weight: Vec<f64>,
}

/// Hyperfine couplings A around one center cell, stored separably.
pub struct LocalCouplings {
    center: [i32; 3],
    reach: i32,
    ex: Vec<f64>,
    ey: Vec<f64>,
    peak: f64,
    /// Upper bound on A over the window.
    max_a: f64,
}

impl LocalCouplings {
    #[inline]
    fn at(&self, cell: [i32; 3], layer_weight: &[f64], half_layers: i32) -> f64 {
        let ix = (cell[0] - self.center[0] + self.reach) as usize;
        let iy = (cell[1] - self.center[1] + self.reach) as usize;
        let iz = (cell[2] + half_layers) as usize;
        self.ex[ix] * self.ey[iy] * layer_weight[iz]
    }
}

impl RateEngine {
    pub fn new(dot: &DotModel, params: RateParams) -> Result<Self, RateError> {
        dot.validate()?;
        check_spin(dot)?;
        let v = params.violations(dot.lattice_constant);
        if !v.is_empty() {
            return Err(RateError::InvalidParams(v));
        }
        let mediated = mediated_factor(dot)?;
        let a = dot.lattice_constant;
        let half_layers = dot.half_layers();
        let pref = dot.constants.dipolar_prefactor();
        let dip = |d: [i32; 3]| dipolar_from_offset(d.map(|c| c as f64 * a), pref);

        let pair_r = p_cells(params.pair_cutoff, a);
        let span = pair_r.ceil() as i32;
        let mut stencils = Vec::new();
        for dx in -span..=span {
            for dy in -span..=span {
                for dz in -span..=span {
                    let d = [dx, dy, dz];
                    let n2 = (dx * dx + dy * dy + dz * dz) as f64;
                    if d == [0; 3] || n2 > pair_r * pair_r * (1.0 + 1e-12) {
                        continue;
                    }
                    // partners for i at the origin of an unbounded slab
                    let partners: Vec<Partner> =
                        broadening_cells([0; 3], d, params.broadening_cutoff / a, i32::MAX / 4)
                            .into_iter()
                            .map(|j| {
                                let kj = [j[0] - d[0], j[1] - d[1], j[2] - d[2]];
                                Partner {
                                    rel: j,
                                    db: dip(j) - dip(kj),
                                }
                            })
                            .collect();
                    let db2_by_layer = (-half_layers..=half_layers)
                        .map(|iz| {
                            partners
                                .iter()
                                .filter(|p| (iz + p.rel[2]).abs() <= half_layers)
                                .map(|p| p.db * p.db)
                                .sum()
                        })
                        .collect();
                    stencils.push(PairStencil {
                        offset: d,
                        dipolar: dip(d),
                        partners,
                        db2_by_layer,
                    });
                }
            }
        }
        let reach = span + (params.broadening_cutoff / a).ceil() as i32 + 2;
        let layer_weight = (-half_layers..=half_layers)
            .map(|iz| dot.envelope(0.0, 0.0, iz as f64 * a))
            .collect();
        Ok(Self {
            dot: *dot,
            params,
            half_layers,
            mediated,
            stencils,
            reach,
            layer_weight,
        })
    }

    pub fn dot(&self) -> &DotModel {
        &self.dot
    }

    pub fn params(&self) -> &RateParams {
        &self.params
    }

    pub fn half_layers(&self) -> i32 {
        self.half_layers
    }

    /// Pair offsets (k − i, in cells) inside the pair cutoff.
    pub fn pair_offsets(&self) -> impl Iterator<Item = [i32; 3]> + '_ {
        self.stencils.iter().map(|s| s.offset)
    }

    /// Envelope tables for all cells any pair around `center` can touch.
    pub fn local(&self, center: [i32; 3]) -> LocalCouplings {
        let a = self.dot.lattice_constant;
        let l2 = self.dot.fock_darwin_radius * self.dot.fock_darwin_radius;
        let reach = self.reach;
        let axis = |c: i32| -> Vec<f64> {
            (-reach..=reach)
                .map(|o| {
                    let x = (c + o) as f64 * a;
                    (-(x * x) / l2).exp()
                })
                .collect()
        };
        let ex = axis(center[0]);
        let ey = axis(center[1]);
        let top = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
        let max_a = self.dot.hyperfine_peak * top(&ex) * top(&ey) * top(&self.layer_weight);
        LocalCouplings {
            center,
            reach,
            ex,
            ey,
            peak: self.dot.hyperfine_peak,
            max_a,
        }
    }

    /// Rates from cell `k` to every in-slab partner i = k + offset within
    /// the pair cutoff, in stencil order. Entries are (offset, W).
    pub fn rates_from(&self, k: [i32; 3]) -> Vec<([i32; 3], f64)> {
        let local = self.local(k);
        self.stencils
            .iter()
            .filter_map(|s| {
                let i = add(k, s.offset);
                if i[2].abs() > self.half_layers {
                    return None;
                }
                Some((s.offset, self.stencil_rate(&local, s, k)))
            })
            .collect()
    }

    /// Same as [`rates_from`](Self::rates_from), restricted to offsets
    /// accepted by `keep`.
    pub fn rates_from_filtered(
        &self,
        k: [i32; 3],
        keep: impl Fn([i32; 3]) -> bool,
    ) -> Vec<([i32; 3], f64)> {
        let local = self.local(k);
        self.stencils
            .iter()
            .filter(|s| keep(s.offset) && (k[2] + s.offset[2]).abs() <= self.half_layers)
            .map(|s| (s.offset, self.stencil_rate(&local, s, k)))
            .collect()
    }

    /// Rate between two cells; zero beyond the pair cutoff or outside the slab.
    pub fn rate(&self, i: [i32; 3], k: [i32; 3]) -> f64 {
        let d = [k[0] - i[0], k[1] - i[1], k[2] - i[2]];
        if i[2].abs() > self.half_layers || k[2].abs() > self.half_layers {
            return 0.0;
        }
        match self.stencils.iter().find(|s| s.offset == d) {
            Some(s) => {
                let local = self.local(i);
                self.stencil_rate(&local, s, i)
            }
            None => 0.0,
        }
    }

    // i is the stencil origin, k = i + offset.
    fn stencil_rate(&self, local: &LocalCouplings, s: &PairStencil, i: [i32; 3]) -> f64 {
        let k = add(i, s.offset);
        let lw = &self.layer_weight;
        let hl = self.half_layers;
        let ai = local.peak * local.at(i, lw, hl);
        let ak = local.peak * local.at(k, lw, hl);
        let coupling = s.dipolar + self.mediated * ai * ak;
        if coupling == 0.0 {
            return 0.0;
        }
        let detuning = self.dot.electron.polarization() * (ai - ak);
        let db2 = s.db2_by_layer[(i[2] + hl) as usize];
        let x = self.mediated * (ai - ak);
        // Skip the partner loop when the mediated correction to g cannot
        // change db2 at double precision.
        let bound = s.partners.len() as f64 * local.max_a * local.max_a;
        let negligible = x * x * bound + 2.0 * x.abs() * (db2 * bound).sqrt() <= 1e-17 * db2;
        let g = if x == 0.0 || negligible {
            80.0 * db2
        } else {
            let mut sba = 0.0;
            let mut saa = 0.0;
            for p in &s.partners {
                let j = add(i, p.rel);
                if j[2].abs() > hl {
                    continue;
                }
                let aj = local.peak * local.at(j, lw, hl);
                sba += p.db * aj;
                saa += aj * aj;
            }
            80.0 * (db2 + 2.0 * x * sba + x * x * saa)
        };
        closed_form(detuning, coupling, g)
    }
}

fn p_cells(radius: f64, a: f64) -> f64 {
    radius / a
}

#[inline]
fn add(a: [i32; 3], b: [i32; 3]) -> [i32; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
