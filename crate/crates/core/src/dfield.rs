//! Coarse-grained diffusion coefficient D(x, y).
//!
//! A probe site is snapped to the lattice at the requested in-plane point and
//! the flip-flop rates to its neighbours are reduced to
//! `D = Σ_i W_ik [(x_k − x_i)² + (y_k − y_i)²] / 4`. With W in s⁻¹ and
//! separations in nm this is already nm²/s; no further conversion happens.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DotModel, ElectronConfig};
use crate::rates::{RateEngine, RateError, RateParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("invalid mesh: {0}")]
    Mesh(String),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error("node ({x} nm, {y} nm): {reason}")]
    Node { x: f64, y: f64, reason: String },
}

/// Regular 2D mesh; node (ix, iy) sits at `origin + (ix·h, iy·h)` and values
/// are stored row-major with x fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mesh2D {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub origin: (f64, f64),
}

impl Mesh2D {
    pub fn new(nx: usize, ny: usize, h: f64, origin: (f64, f64)) -> Result<Self, FieldError> {
        if nx < 3 || ny < 3 {
            return Err(FieldError::Mesh(format!("need at least 3x3 nodes, got {nx}x{ny}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(FieldError::Mesh(format!("spacing must be positive, got {h}")));
        }
        Ok(Self { nx, ny, h, origin })
    }

    /// Square mesh on [−half_width, half_width]²; the spacing must divide the
    /// width into a whole number of cells.
    pub fn square(half_width: f64, h: f64) -> Result<Self, FieldError> {
        let cells = 2.0 * half_width / h;
        let n = cells.round();
        if (cells - n).abs() > 1e-9 * cells.max(1.0) {
            return Err(FieldError::Mesh(format!(
                "spacing {h} nm does not divide the domain width {} nm",
                2.0 * half_width
            )));
        }
        Self::new(n as usize + 1, n as usize + 1, h, (-half_width, -half_width))
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    #[inline]
    pub fn coords(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin.0 + ix as f64 * self.h,
            self.origin.1 + iy as f64 * self.h,
        )
    }

    pub fn is_boundary(&self, ix: usize, iy: usize) -> bool {
        ix == 0 || iy == 0 || ix + 1 == self.nx || iy + 1 == self.ny
    }

    /// All nodes as (ix, iy, x, y) in storage order.
    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize, f64, f64)> + '_ {
        (0..self.ny).flat_map(move |iy| {
            (0..self.nx).map(move |ix| {
                let (x, y) = self.coords(ix, iy);
                (ix, iy, x, y)
            })
        })
    }

    /// Node index closest to (x, y).
    pub fn nearest(&self, x: f64, y: f64) -> (usize, usize) {
        let fx = ((x - self.origin.0) / self.h).round().clamp(0.0, (self.nx - 1) as f64);
        let fy = ((y - self.origin.1) / self.h).round().clamp(0.0, (self.ny - 1) as f64);
        (fx as usize, fy as usize)
    }
}

/// Which lattice layers the probe site samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProbeLayer {
    /// z = 0, where the electron couples most strongly.
    #[default]
    Midplane,
    /// Uniform average over every layer of the dot slab.
    LayerAveraged,
}

impl ProbeLayer {
    pub fn as_key(self) -> &'static str {
        match self {
            ProbeLayer::Midplane => "midplane",
            ProbeLayer::LayerAveraged => "layer_averaged",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        match key {
            "midplane" => Some(Self::Midplane),
            "layer_averaged" => Some(Self::LayerAveraged),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldMetadata {
    pub field_t: f64,
    pub electron: ElectronConfig,
    pub pair_cutoff_nm: f64,
    pub broadening_cutoff_nm: f64,
    pub probe: ProbeLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionField {
    pub mesh: Mesh2D,
    /// D at each node, nm²/s.
    pub values: Vec<f64>,
    pub metadata: FieldMetadata,
}

impl DiffusionField {
    /// Uniform field, mainly for analytic comparisons.
    pub fn constant(mesh: Mesh2D, d: f64, metadata: FieldMetadata) -> Self {
        Self {
            mesh,
            values: vec![d; mesh.len()],
            metadata,
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn at_node(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.mesh.index(ix, iy)]
    }

    pub fn at_nearest(&self, x: f64, y: f64) -> f64 {
        let (ix, iy) = self.mesh.nearest(x, y);
        self.at_node(ix, iy)
    }

    /// Mean of the nodes with r ≥ `radius`.
    pub fn far_field(&self, radius: f64) -> Option<f64> {
        let (sum, n) = self
            .mesh
            .nodes()
            .filter(|&(_, _, x, y)| x.hypot(y) >= radius)
            .fold((0.0, 0usize), |(s, n), (ix, iy, _, _)| {
                (s + self.at_node(ix, iy), n + 1)
            });
        (n > 0).then(|| sum / n as f64)
    }
}

/// Reduction of one probe's rates; D^{αβ} entries in nm²/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiffusionTensor(pub [[f64; 3]; 3]);

impl DiffusionTensor {
    pub fn xx(&self) -> f64 {
        self.0[0][0]
    }
    pub fn yy(&self) -> f64 {
        self.0[1][1]
    }
    pub fn zz(&self) -> f64 {
        self.0[2][2]
    }
    pub fn xy(&self) -> f64 {
        self.0[0][1]
    }
    /// The isotropic in-plane coefficient (D^{xx} + D^{yy})/2.
    pub fn in_plane(&self) -> f64 {
        0.5 * (self.xx() + self.yy())
    }
}

/// Evaluates D at arbitrary points for a fixed dot and truncation.
pub struct DiffusionCalculator {
    engine: RateEngine,
    probe: ProbeLayer,
}

impl DiffusionCalculator {
    pub fn new(dot: &DotModel, params: RateParams, probe: ProbeLayer) -> Result<Self, FieldError> {
        Ok(Self {
            engine: RateEngine::new(dot, params)?,
            probe,
        })
    }

    pub fn engine(&self) -> &RateEngine {
        &self.engine
    }

    fn probe_cells(&self, x: f64, y: f64) -> Vec<[i32; 3]> {
        let a = self.engine.dot().lattice_constant;
        let kx = (x / a).round() as i32;
        let ky = (y / a).round() as i32;
        match self.probe {
            ProbeLayer::Midplane => vec![[kx, ky, 0]],
            ProbeLayer::LayerAveraged => {
                let m = self.engine.half_layers();
                (-m..=m).map(|kz| [kx, ky, kz]).collect()
            }
        }
    }

    /// D(x, y) in nm²/s.
    pub fn coefficient_at(&self, x: f64, y: f64) -> f64 {
        let a = self.engine.dot().lattice_constant;
        let cells = self.probe_cells(x, y);
        let total: f64 = cells
            .iter()
            .map(|&k| {
                self.engine
                    .rates_from_filtered(k, |d| d[0] != 0 || d[1] != 0)
                    .into_iter()
                    .map(|(d, w)| {
                        let dx = d[0] as f64 * a;
                        let dy = d[1] as f64 * a;
                        w * (dx * dx + dy * dy) / 4.0
                    })
                    .sum::<f64>()
            })
            .sum();
        total / cells.len() as f64
    }

    /// D^{αβ} = Σ_i W_ik Δα Δβ / 2.
    pub fn tensor_at(&self, x: f64, y: f64) -> DiffusionTensor {
        let a = self.engine.dot().lattice_constant;
        let cells = self.probe_cells(x, y);
        let mut t = [[0.0; 3]; 3];
        for &k in &cells {
            for (d, w) in self.engine.rates_from(k) {
                let v = d.map(|c| c as f64 * a);
                for (row, &va) in t.iter_mut().zip(&v) {
                    for (entry, &vb) in row.iter_mut().zip(&v) {
                        *entry += w * va * vb / 2.0;
                    }
                }
            }
        }
        let n = cells.len() as f64;
        DiffusionTensor(t.map(|row| row.map(|e| e / n)))
    }

    pub fn metadata(&self) -> FieldMetadata {
        let dot = self.engine.dot();
        let p = self.engine.params();
        FieldMetadata {
            field_t: dot.field,
            electron: dot.electron,
            pair_cutoff_nm: p.pair_cutoff,
            broadening_cutoff_nm: p.broadening_cutoff,
            probe: self.probe,
        }
    }

    /// Evaluates every node. Nodes are independent, so the result does not
    /// depend on the worker count.
    pub fn build(&self, mesh: &Mesh2D) -> Result<DiffusionField, FieldError> {
        let values: Vec<f64> = (0..mesh.len())
            .into_par_iter()
            .map(|n| {
                let (x, y) = mesh.coords(n % mesh.nx, n / mesh.nx);
                let d = self.coefficient_at(x, y);
                if d.is_finite() && d >= 0.0 {
                    Ok(d)
                } else {
                    Err(FieldError::Node {
                        x,
                        y,
                        reason: format!("diffusion coefficient {d} is not a finite nonnegative value"),
                    })
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(DiffusionField {
            mesh: *mesh,
            values,
            metadata: self.metadata(),
        })
    }
}

pub fn diffusion_coefficient_at(point: (f64, f64), dot: &DotModel, p: RateParams) -> Result<f64, FieldError> {
    Ok(DiffusionCalculator::new(dot, p, ProbeLayer::Midplane)?.coefficient_at(point.0, point.1))
}

pub fn diffusion_tensor_at(point: (f64, f64), dot: &DotModel, p: RateParams) -> Result<DiffusionTensor, FieldError> {
    Ok(DiffusionCalculator::new(dot, p, ProbeLayer::Midplane)?.tensor_at(point.0, point.1))
}

pub fn build_field(mesh: &Mesh2D, dot: &DotModel, p: RateParams) -> Result<DiffusionField, FieldError> {
    DiffusionCalculator::new(dot, p, ProbeLayer::Midplane)?.build(mesh)
}

/// Bulk value with the electron removed, at the origin of the lattice.
pub fn bulk_background(dot: &DotModel, p: RateParams) -> Result<f64, FieldError> {
    let bulk = dot.with_electron(ElectronConfig::Absent);
    diffusion_coefficient_at((0.0, 0.0), &bulk, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(dot: &DotModel) -> RateParams {
        RateParams::for_spacing(dot.lattice_constant)
    }

    #[test]
    fn mesh_layout() {
        let m = Mesh2D::square(300.0, 3.0).unwrap();
        assert_eq!((m.nx, m.ny), (201, 201));
        assert_eq!(m.coords(100, 100), (0.0, 0.0));
        assert_eq!(m.coords(0, 200), (-300.0, 300.0));
        assert_eq!(m.index(1, 2), 2 * 201 + 1);
        assert!(Mesh2D::square(300.0, 7.0).is_err());
        assert!(Mesh2D::new(2, 5, 1.0, (0.0, 0.0)).is_err());
    }

    #[test]
    fn bulk_tensor_is_isotropic_in_plane() {
        let dot = DotModel::default().with_electron(ElectronConfig::Absent);
        let t = diffusion_tensor_at((150.0, -90.0), &dot, params(&dot)).unwrap();
        assert!(t.xy().abs() < 1e-10 * t.xx());
        assert!(t.0[0][2].abs() < 1e-10 * t.xx());
        assert!((t.xx() - t.yy()).abs() < 1e-10 * t.xx());
        let d = diffusion_coefficient_at((150.0, -90.0), &dot, params(&dot)).unwrap();
        assert!((d - t.in_plane()).abs() < 1e-10 * d);
    }

    #[test]
    fn bulk_background_golden() {
        let dot = DotModel::default();
        let bg = bulk_background(&dot, params(&dot)).unwrap();
        assert!((bg / GOLDEN_BULK_D - 1.0).abs() < 1e-10, "{bg}");
    }

    // tests/oracles/dfield_reference.py
    const GOLDEN_BULK_D: f64 = 26.350008944033103;
    const GOLDEN_CENTER_0P2T: f64 = 47.672426917279964;
    const GOLDEN_CENTER_2T: f64 = 25.423665799619428;
    const GOLDEN_L0_2T: [f64; 3] = [13.18133979443947, 5.825863948829581, 20.53681564004937];

    #[test]
    fn center_values_match_reference() {
        let dot = DotModel::default();
        for (b, want) in [(0.2, GOLDEN_CENTER_0P2T), (2.0, GOLDEN_CENTER_2T)] {
            let d = diffusion_coefficient_at((0.0, 0.0), &dot.with_field(b), params(&dot)).unwrap();
            assert!((d / want - 1.0).abs() < 1e-10, "B0={b}: {d}");
        }
    }

    #[test]
    fn radial_component_suppressed_at_l0() {
        let dot = DotModel::default();
        let t = diffusion_tensor_at((30.0, 0.0), &dot, params(&dot)).unwrap();
        let [d, xx, yy] = GOLDEN_L0_2T;
        assert!((t.in_plane() / d - 1.0).abs() < 1e-10);
        assert!((t.xx() / xx - 1.0).abs() < 1e-10);
        assert!((t.yy() / yy - 1.0).abs() < 1e-10);
        assert!(t.xy().abs() < 1e-12 * d);
        // radial hops carry the Knight detuning, tangential ones do not
        assert!(t.xx() < 0.5 * t.yy());
    }

    #[test]
    fn three_by_three_bulk_mesh_is_uniform() {
        let dot = DotModel::default();
        let mesh = Mesh2D::new(3, 3, 3.0, (200.0, 200.0)).unwrap();
        let f = build_field(&mesh, &dot, params(&dot)).unwrap();
        let first = f.values[0];
        for v in &f.values {
            assert!((v - first).abs() < 1e-9 * first, "{v} vs {first}");
        }
    }

    #[test]
    fn absent_field_independent_of_b0_and_equal_to_zero_a0() {
        let base = DotModel::default().with_electron(ElectronConfig::Absent);
        let p = params(&base);
        let mesh = Mesh2D::new(5, 5, 6.0, (-12.0, -12.0)).unwrap();
        let f1 = build_field(&mesh, &base.with_field(0.02), p).unwrap();
        let f2 = build_field(&mesh, &base.with_field(2.0), p).unwrap();
        let mut zero = DotModel::default();
        zero.hyperfine_peak = 0.0;
        let f3 = build_field(&mesh, &zero, p).unwrap();
        for ((a, b), c) in f1.values.iter().zip(&f2.values).zip(&f3.values) {
            assert!((a - b).abs() <= 1e-12 * a);
            assert!((a - c).abs() <= 1e-12 * a);
        }
    }

    #[test]
    fn layer_averaged_probe_runs_and_stays_positive() {
        let dot = DotModel::default().with_field(0.2);
        let calc = DiffusionCalculator::new(&dot, params(&dot), ProbeLayer::LayerAveraged).unwrap();
        let d = calc.coefficient_at(0.0, 0.0);
        assert!(d.is_finite() && d > 0.0);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]
        #[test]
        fn field_has_square_symmetry(ix in -80i32..=80, iy in -80i32..=80) {
            let dot = DotModel::default().with_field(0.2);
            let calc = DiffusionCalculator::new(&dot, params(&dot), ProbeLayer::Midplane).unwrap();
            let a = dot.lattice_constant;
            let (x, y) = (ix as f64 * a, iy as f64 * a);
            let d = calc.coefficient_at(x, y);
            for (u, v) in [(-x, y), (x, -y), (y, x)] {
                let e = calc.coefficient_at(u, v);
                proptest::prop_assert!((d - e).abs() <= 1e-10 * d, "{} vs {}", d, e);
            }
        }
    }
}
