//! Physical constants, dot geometry, the nuclear lattice and the two
//! microscopic couplings (contact hyperfine and nuclear dipole-dipole).
//!
//! Lengths are in nm, fields in T, couplings in rad/s. Energies given in μeV
//! are converted to angular frequency by dividing by ħ.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exact SI elementary charge, used for μeV → J conversion.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

const NM: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("degenerate pair: sites {0} and {1} coincide")]
    DegeneratePair(usize, usize),
    #[error("invalid dot model: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("lattice has {count} sites, above the cap of {cap}")]
    TooManySites { count: u64, cap: u64 },
}

/// Physical constants in SI units.
///
/// Defaults are CODATA 2018 for μ0, μB, μN and ħ. `g_n` is the As-75 value
/// (μ = 1.43948 μN over I = 3/2). `g_e` carries the free-electron magnitude
/// with a positive sign so that, for S_z = +1/2, the electron-mediated
/// flip-flop adds to the in-plane dipolar coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub mu0: f64,
    pub mu_b: f64,
    pub mu_n: f64,
    pub hbar: f64,
    pub g_e: f64,
    pub g_n: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            mu0: 1.256_637_062_12e-6,
            mu_b: 9.274_010_078_3e-24,
            mu_n: 5.050_783_746_1e-27,
            hbar: 1.054_571_817e-34,
            g_e: 2.002_319_304_36,
            g_n: 1.43948 / 1.5,
        }
    }
}

impl PhysicalConstants {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("mu0", self.mu0),
            ("mu_B", self.mu_b),
            ("mu_N", self.mu_n),
            ("hbar", self.hbar),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("g_e", self.g_e), ("g_n", self.g_n)] {
            if !v.is_finite() || v == 0.0 {
                out.push(format!("{name} must be finite and nonzero, got {v}"));
            }
        }
        out
    }

    /// Energy in μeV to angular frequency in rad/s.
    pub fn uev_to_rad_per_s(&self, uev: f64) -> f64 {
        uev * 1e-6 * ELEMENTARY_CHARGE / self.hbar
    }

    pub fn rad_per_s_to_uev(&self, rate: f64) -> f64 {
        rate * self.hbar / (1e-6 * ELEMENTARY_CHARGE)
    }

    /// (μ0/4π)(g_n μN)²/ħ for separations measured in nm, in rad/s·nm³.
    pub fn dipolar_prefactor(&self) -> f64 {
        let moment = self.g_n * self.mu_n;
        self.mu0 / (4.0 * std::f64::consts::PI) * moment * moment / self.hbar / (NM * NM * NM)
    }

    /// 4 g_e μB B0 / ħ, the denominator of the electron-mediated coupling.
    pub fn mediated_denominator(&self, field: f64) -> f64 {
        4.0 * self.g_e * self.mu_b * field / self.hbar
    }
}

/// Electron spin projection when the dot is occupied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpinProjection {
    Up,
    Down,
}

impl SpinProjection {
    pub fn sz(self) -> f64 {
        match self {
            SpinProjection::Up => 0.5,
            SpinProjection::Down => -0.5,
        }
    }
}

/// Electron configuration. `Absent` models S_z ≡ 0, e.g. a (2,0) singlet:
/// no Knight shift and no electron-mediated flip-flops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElectronConfig {
    Present { sz: SpinProjection },
    Absent,
}

impl ElectronConfig {
    pub const UP: ElectronConfig = ElectronConfig::Present {
        sz: SpinProjection::Up,
    };
    pub const DOWN: ElectronConfig = ElectronConfig::Present {
        sz: SpinProjection::Down,
    };

    /// 2·S_z: ±1 when present, 0 when absent.
    pub fn polarization(self) -> f64 {
        match self {
            ElectronConfig::Present { sz } => 2.0 * sz.sz(),
            ElectronConfig::Absent => 0.0,
        }
    }

    pub fn is_present(self) -> bool {
        matches!(self, ElectronConfig::Present { .. })
    }

    pub fn as_key(self) -> &'static str {
        match self {
            ElectronConfig::Present {
                sz: SpinProjection::Up,
            } => "present_up",
            ElectronConfig::Present {
                sz: SpinProjection::Down,
            } => "present_down",
            ElectronConfig::Absent => "absent",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        match key {
            "present_up" => Some(Self::UP),
            "present_down" => Some(Self::DOWN),
            "absent" => Some(Self::Absent),
            _ => None,
        }
    }
}

/// Everything physical about a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DotModel {
    /// Fock-Darwin radius l0 (nm).
    pub fock_darwin_radius: f64,
    /// Dot thickness z0 (nm); the dot occupies |z| ≤ z0/2.
    pub thickness: f64,
    /// Hyperfine coupling at the origin, A0 (rad/s).
    pub hyperfine_peak: f64,
    /// Simple-cubic lattice constant a0 (nm).
    pub lattice_constant: f64,
    /// External field B0 (T) along z.
    pub field: f64,
    /// Nuclear spin quantum number; the rate constants only exist for 3/2.
    pub spin: f64,
    pub electron: ElectronConfig,
    pub constants: PhysicalConstants,
}

impl Default for DotModel {
    fn default() -> Self {
        let constants = PhysicalConstants::default();
        Self {
            fock_darwin_radius: 30.0,
            thickness: 10.0,
            hyperfine_peak: constants.uev_to_rad_per_s(1e-3),
            lattice_constant: 0.563,
            field: 2.0,
            spin: 1.5,
            electron: ElectronConfig::UP,
            constants,
        }
    }
}

impl DotModel {
    /// All violated invariants, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.constants.violations();
        let positive = [
            ("l0", self.fock_darwin_radius),
            ("z0", self.thickness),
            ("a0", self.lattice_constant),
            ("B0", self.field),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.hyperfine_peak >= 0.0 && self.hyperfine_peak.is_finite()) {
            out.push(format!("A0 must be nonnegative, got {}", self.hyperfine_peak));
        }
        if self.spin != 1.5 {
            out.push(format!("nuclear spin must be 3/2, got {}", self.spin));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Invalid(v))
        }
    }

    pub fn with_field(mut self, field: f64) -> Self {
        self.field = field;
        self
    }

    pub fn with_electron(mut self, electron: ElectronConfig) -> Self {
        self.electron = electron;
        self
    }

    /// Largest |m| such that the lattice layer z = m·a0 lies inside the dot.
    pub fn half_layers(&self) -> i32 {
        (self.thickness / 2.0 / self.lattice_constant + 1e-9).floor() as i32
    }

    /// Normalized hyperfine envelope cos²(πz/z0)·exp(−(x²+y²)/l0²), zero
    /// outside the dot.
    pub fn envelope(&self, x: f64, y: f64, z: f64) -> f64 {
        if z.abs() > self.thickness / 2.0 {
            return 0.0;
        }
        let c = (std::f64::consts::PI * z / self.thickness).cos();
        let l2 = self.fock_darwin_radius * self.fock_darwin_radius;
        c * c * (-(x * x + y * y) / l2).exp()
    }

    /// Σ_k A_k over every lattice site of the dot slab, in rad/s. Uses the
    /// separability of the envelope; the in-plane sum runs out to 12·l0.
    pub fn hyperfine_sum(&self) -> f64 {
        let a = self.lattice_constant;
        let l0 = self.fock_darwin_radius;
        let reach = (12.0 * l0 / a).ceil() as i64;
        let line: f64 = (-reach..=reach)
            .map(|i| {
                let x = i as f64 * a;
                (-(x * x) / (l0 * l0)).exp()
            })
            .sum();
        let m = self.half_layers();
        let layers: f64 = (-m..=m)
            .map(|iz| {
                let c = (std::f64::consts::PI * iz as f64 * a / self.thickness).cos();
                c * c
            })
            .sum();
        self.hyperfine_peak * line * line * layers
    }
}

/// One nuclear site. `cell` holds the integer lattice coordinates; the
/// positions are `cell · a0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub cell: [i32; 3],
}

impl Site {
    pub fn at_cell(index: usize, cell: [i32; 3], spacing: f64) -> Self {
        Self {
            index,
            x: cell[0] as f64 * spacing,
            y: cell[1] as f64 * spacing,
            z: cell[2] as f64 * spacing,
            cell,
        }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn distance(&self, other: &Site) -> f64 {
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        let dz = other.z - self.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// A finite simple-cubic patch centered on the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub spacing: f64,
    /// Sites per axis are `2·half_extent + 1`.
    pub half_extent: [u32; 3],
}

impl LatticeSpec {
    /// Patch with the given in-plane half extents and every layer of the dot
    /// slab |z| ≤ z0/2.
    pub fn for_dot(dot: &DotModel, half_x: u32, half_y: u32) -> Self {
        Self {
            spacing: dot.lattice_constant,
            half_extent: [half_x, half_y, dot.half_layers().max(0) as u32],
        }
    }

    /// Patch covering a box of the given full widths (nm).
    pub fn covering_box(spacing: f64, widths: [f64; 3]) -> Self {
        let half = |w: f64| (w / 2.0 / spacing + 1e-9).floor() as u32;
        Self {
            spacing,
            half_extent: [half(widths[0]), half(widths[1]), half(widths[2])],
        }
    }

    pub fn axis_counts(&self) -> [u64; 3] {
        self.half_extent.map(|h| 2 * h as u64 + 1)
    }

    pub fn site_count(&self) -> u64 {
        self.axis_counts().iter().product()
    }
}

/// Default cap on the number of sites a lattice may materialize.
pub const DEFAULT_SITE_CAP: u64 = 10_000_000;

/// A_i = A0 cos²(πz/z0) exp[−(x²+y²)/l0²] in rad/s; zero outside the slab.
pub fn hyperfine_coupling(pos: [f64; 3], dot: &DotModel) -> f64 {
    dot.hyperfine_peak * dot.envelope(pos[0], pos[1], pos[2])
}

/// Secular dipolar coupling B_ij = (μ0/4π)(g_n μN)² R⁻³ (1 − 3cos²θ)/ħ.
pub fn dipolar_coupling(
    i: &Site,
    j: &Site,
    c: &PhysicalConstants,
) -> Result<f64, ModelError> {
    let d = [j.x - i.x, j.y - i.y, j.z - i.z];
    let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    if r2 == 0.0 {
        return Err(ModelError::DegeneratePair(i.index, j.index));
    }
    Ok(dipolar_from_offset(d, c.dipolar_prefactor()))
}

/// Dipolar coupling for a separation vector `d` (nm) given the prefactor
/// from [`PhysicalConstants::dipolar_prefactor`].
#[inline]
pub(crate) fn dipolar_from_offset(d: [f64; 3], prefactor: f64) -> f64 {
    let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    let angular = 1.0 - 3.0 * d[2] * d[2] / r2;
    prefactor * angular / (r2 * r2.sqrt())
}

/// Materializes the patch in row-major order (x slowest, z fastest).
pub fn build_lattice(spec: &LatticeSpec, cap: u64) -> Result<Vec<Site>, ModelError> {
    let count = spec.site_count();
    if count > cap {
        return Err(ModelError::TooManySites { count, cap });
    }
    if !(spec.spacing > 0.0) {
        return Err(ModelError::Invalid(vec![format!(
            "lattice spacing must be positive, got {}",
            spec.spacing
        )]));
    }
    let [hx, hy, hz] = spec.half_extent.map(|h| h as i32);
    let mut sites = Vec::with_capacity(count as usize);
    for ix in -hx..=hx {
        for iy in -hy..=hy {
            for iz in -hz..=hz {
                sites.push(Site::at_cell(sites.len(), [ix, iy, iz], spec.spacing));
            }
        }
    }
    Ok(sites)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn site(index: usize, x: f64, y: f64, z: f64) -> Site {
        Site {
            index,
            x,
            y,
            z,
            cell: [0; 3],
        }
    }

    #[test]
    fn hyperfine_reference_points() {
        let dot = DotModel::default();
        let a0 = dot.hyperfine_peak;
        let l0 = dot.fock_darwin_radius;
        assert_eq!(hyperfine_coupling([0.0, 0.0, 0.0], &dot), a0);
        let at_l0 = hyperfine_coupling([l0, 0.0, 0.0], &dot);
        assert!((at_l0 - a0 * (-1.0f64).exp()).abs() < 1e-12 * a0);
        let face = hyperfine_coupling([0.0, 0.0, dot.thickness / 2.0], &dot);
        assert!(face.abs() < 1e-20 * a0);
        assert_eq!(hyperfine_coupling([0.0, 0.0, 6.0], &dot), 0.0);
    }

    #[test]
    fn dipolar_reference_angles() {
        let c = PhysicalConstants::default();
        let a = 0.563;
        let unit = c.dipolar_prefactor() / (a * a * a);
        let o = site(0, 0.0, 0.0, 0.0);
        let along_z = dipolar_coupling(&o, &site(1, 0.0, 0.0, a), &c).unwrap();
        assert!((along_z + 2.0 * unit).abs() < 1e-12 * unit);
        let in_plane = dipolar_coupling(&o, &site(1, a, 0.0, 0.0), &c).unwrap();
        assert!((in_plane - unit).abs() < 1e-12 * unit);
        let theta = (1.0f64 / 3.0f64.sqrt()).acos();
        let magic = site(1, a * theta.sin(), 0.0, a * theta.cos());
        let b = dipolar_coupling(&o, &magic, &c).unwrap();
        assert!(b.abs() < 1e-12 * unit);
    }

    #[test]
    fn dipolar_unit_value_matches_hand_arithmetic() {
        // (1e-7)(0.959653 * 5.0507837461e-27)^2 / (0.563e-9)^3 / 1.054571817e-34
        let c = PhysicalConstants::default();
        let unit = c.dipolar_prefactor() / 0.563f64.powi(3);
        assert!((unit - 124.8375).abs() < 1e-3, "{unit}");
    }

    #[test]
    fn coincident_sites_are_rejected() {
        let c = PhysicalConstants::default();
        let s = site(3, 1.0, 2.0, 0.0);
        let t = site(4, 1.0, 2.0, 0.0);
        assert_eq!(
            dipolar_coupling(&s, &t, &c),
            Err(ModelError::DegeneratePair(3, 4))
        );
    }

    #[test]
    fn lattice_counts_and_spacing() {
        let spec = LatticeSpec {
            spacing: 0.563,
            half_extent: [1, 1, 0],
        };
        let sites = build_lattice(&spec, DEFAULT_SITE_CAP).unwrap();
        assert_eq!(sites.len(), 9);
        let cx: f64 = sites.iter().map(|s| s.x).sum();
        let cy: f64 = sites.iter().map(|s| s.y).sum();
        assert!(cx.abs() < 1e-12 && cy.abs() < 1e-12);
        for (n, s) in sites.iter().enumerate() {
            assert_eq!(s.index, n);
        }
        // sites 0 and 3 differ by one step in x
        assert!((sites[0].distance(&sites[3]) - 0.563).abs() < 1e-12);
    }

    #[test]
    fn full_domain_exceeds_cap() {
        let spec = LatticeSpec::covering_box(0.563, [600.0, 600.0, 10.0]);
        assert_eq!(spec.axis_counts(), [1065, 1065, 17]);
        let n = spec.site_count();
        // volume / a0^3 = 600*600*10/0.563^3 ≈ 2.02e7
        assert!((1.8e7..2.2e7).contains(&(n as f64)), "{n}");
        assert!(matches!(
            build_lattice(&spec, DEFAULT_SITE_CAP),
            Err(ModelError::TooManySites { .. })
        ));
    }

    #[test]
    fn reference_parameter_set_validates() {
        let dot = DotModel::default();
        assert!(dot.validate().is_ok());
        assert_eq!(dot.half_layers(), 8);
        let bad = DotModel {
            field: 0.0,
            thickness: -1.0,
            spin: 0.5,
            ..dot
        };
        match bad.validate() {
            Err(ModelError::Invalid(v)) => assert_eq!(v.len(), 3, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hyperfine_sum_close_to_continuum_estimate() {
        let dot = DotModel::default();
        let a = dot.lattice_constant;
        // A0 · (π l0²)(z0/2)/a0³ in the continuum limit
        let continuum = dot.hyperfine_peak * std::f64::consts::PI * 900.0 * 5.0 / (a * a * a);
        let s = dot.hyperfine_sum();
        assert!((s / continuum - 1.0).abs() < 0.03, "{}", s / continuum);
        let uev = dot.constants.rad_per_s_to_uev(s);
        assert!((70.0..90.0).contains(&uev), "{uev}");
    }

    #[test]
    fn angular_average_of_dipolar_factor_vanishes() {
        // Deterministic uniform sampling of cos θ on [-1, 1] (midpoint rule).
        let n = 200_000;
        let mean: f64 = (0..n)
            .map(|k| {
                let u = -1.0 + (2.0 * k as f64 + 1.0) / n as f64;
                1.0 - 3.0 * u * u
            })
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 1e-9, "{mean}");
    }

    proptest! {
        #[test]
        fn hyperfine_is_radially_symmetric(r in 0.0f64..120.0, phi in 0.0f64..6.3, z in -5.0f64..5.0) {
            let dot = DotModel::default();
            let a = hyperfine_coupling([r, 0.0, z], &dot);
            let b = hyperfine_coupling([r * phi.cos(), r * phi.sin(), z], &dot);
            prop_assert!((a - b).abs() <= 1e-12 * dot.hyperfine_peak);
        }

        #[test]
        fn dipolar_symmetric_and_cubic(
            dx in -3.0f64..3.0, dy in -3.0f64..3.0, dz in -3.0f64..3.0,
        ) {
            prop_assume!(dx * dx + dy * dy + dz * dz > 0.01);
            let c = PhysicalConstants::default();
            let i = site(0, 0.3, -0.2, 0.1);
            let j = site(1, 0.3 + dx, -0.2 + dy, 0.1 + dz);
            let bij = dipolar_coupling(&i, &j, &c).unwrap();
            let bji = dipolar_coupling(&j, &i, &c).unwrap();
            prop_assert_eq!(bij, bji);
            let o = site(0, 0.0, 0.0, 0.0);
            let near = dipolar_coupling(&o, &site(1, dx, dy, dz), &c).unwrap();
            let far = dipolar_coupling(&o, &site(1, 2.0 * dx, 2.0 * dy, 2.0 * dz), &c).unwrap();
            prop_assert!((near - 8.0 * far).abs() <= 1e-12 * near.abs().max(1e-300));
        }
    }
}
