//! Run configuration: the TOML schema, validation and unit conversion.
//!
//! Every section and key has a default, so an empty file is a complete
//! configuration. Unknown keys are rejected. Energies are given in μeV and
//! converted to rad/s with ħ.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dfield::{Mesh2D, ProbeLayer};
use crate::model::{DotModel, ElectronConfig, PhysicalConstants};
use crate::rates::RateParams;
use crate::solver::{Boundary, DiffusionForm, Scheme, SolverConfig, TimeStep};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DotSection {
    pub l0_nm: f64,
    pub z0_nm: f64,
    pub a0_nm: f64,
    #[serde(rename = "A0_ueV")]
    pub a0_uev: f64,
    #[serde(rename = "B0_T")]
    pub b0_t: f64,
    /// "present_up", "present_down" or "absent".
    pub electron: String,
    pub spin: f64,
    /// Expected Σ_k A_k; a mismatch with the computed sum is a warning.
    #[serde(rename = "sum_A_target_ueV", skip_serializing_if = "Option::is_none")]
    pub sum_a_target_uev: Option<f64>,
}

impl Default for DotSection {
    fn default() -> Self {
        Self {
            l0_nm: 30.0,
            z0_nm: 10.0,
            a0_nm: 0.563,
            a0_uev: 1e-3,
            b0_t: 2.0,
            electron: "present_up".into(),
            spin: 1.5,
            sum_a_target_uev: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsSection {
    pub mu0: f64,
    pub mu_b_j_per_t: f64,
    pub mu_n_j_per_t: f64,
    pub hbar_j_s: f64,
    pub g_e: f64,
    pub g_n: f64,
}

impl Default for ConstantsSection {
    fn default() -> Self {
        let c = PhysicalConstants::default();
        Self {
            mu0: c.mu0,
            mu_b_j_per_t: c.mu_b,
            mu_n_j_per_t: c.mu_n,
            hbar_j_s: c.hbar,
            g_e: c.g_e,
            g_n: c.g_n,
        }
    }
}

/// Cutoffs in nm; absent values resolve to 3·a0 and 6·a0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RatesSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair_cutoff_nm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub broadening_cutoff_nm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    pub half_width_nm: f64,
    pub h_nm: f64,
}

impl Default for MeshSection {
    fn default() -> Self {
        Self {
            half_width_nm: 300.0,
            h_nm: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// "explicit" or "adi".
    pub scheme: String,
    /// Fixed step in s; absent means automatic.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_s: Option<f64>,
    pub t_end_s: f64,
    /// "non_divergence" or "divergence".
    pub form: String,
    /// Dirichlet-zero on the square edge, or additionally outside this disc.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disc_radius_nm: Option<f64>,
    /// Times at which full polarization snapshots are written.
    pub snapshot_times_s: Vec<f64>,
    /// Log-spaced decay samples covering five decades below t_end.
    pub log_samples: usize,
    /// Evenly spaced decay samples on (0, t_end].
    pub linear_samples: usize,
    /// Stop once h/h0 drops below this; 0 runs to t_end.
    pub stop_below: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            scheme: "explicit".into(),
            dt_s: None,
            t_end_s: 600.0,
            form: "non_divergence".into(),
            disc_radius_nm: None,
            snapshot_times_s: Vec::new(),
            log_samples: 250,
            linear_samples: 200,
            stop_below: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    /// Radius of the Gaussian initial polarization; absent means l0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r0_nm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DfieldSection {
    /// "midplane" or "layer_averaged".
    pub probe: String,
}

impl Default for DfieldSection {
    fn default() -> Self {
        Self {
            probe: "midplane".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dot: DotSection,
    pub constants: ConstantsSection,
    pub rates: RatesSection,
    pub mesh: MeshSection,
    pub solver: SolverSection,
    pub initial: InitialSection,
    pub dfield: DfieldSection,
}

/// A validated configuration in internal units.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub dot: DotModel,
    pub rates: RateParams,
    pub mesh: Mesh2D,
    pub solver: SolverConfig,
    pub initial_radius: f64,
    pub probe: ProbeLayer,
    pub log_samples: usize,
    pub linear_samples: usize,
    pub stop_below: f64,
    pub warnings: Vec<String>,
}

impl Resolved {
    /// Decay sample times: t = 0, a log grid over five decades below t_end
    /// and an even grid, merged.
    pub fn sample_times(&self) -> Vec<f64> {
        let t_end = self.solver.t_end;
        let mut t = vec![0.0];
        let n = self.log_samples;
        for k in 0..n {
            let frac = if n > 1 { k as f64 / (n - 1) as f64 } else { 1.0 };
            t.push(t_end * 10f64.powf(-5.0 * (1.0 - frac)));
        }
        for k in 1..=self.linear_samples {
            t.push(t_end * k as f64 / self.linear_samples as f64);
        }
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Cutoffs resolved against the lattice constant.
    pub fn rate_params(&self) -> RateParams {
        let d = RateParams::for_spacing(self.dot.a0_nm);
        RateParams {
            pair_cutoff: self.rates.pair_cutoff_nm.unwrap_or(d.pair_cutoff),
            broadening_cutoff: self.rates.broadening_cutoff_nm.unwrap_or(d.broadening_cutoff),
        }
    }

    /// Fills in every derived default so the serialized form is
    /// self-describing.
    pub fn materialized(&self) -> Self {
        let mut c = self.clone();
        let p = self.rate_params();
        c.rates.pair_cutoff_nm = Some(p.pair_cutoff);
        c.rates.broadening_cutoff_nm = Some(p.broadening_cutoff);
        c.initial.r0_nm = Some(self.initial.r0_nm.unwrap_or(self.dot.l0_nm));
        c
    }

    /// Converts to internal units, collecting every violation.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let mut errs = Vec::new();
        let constants = PhysicalConstants {
            mu0: self.constants.mu0,
            mu_b: self.constants.mu_b_j_per_t,
            mu_n: self.constants.mu_n_j_per_t,
            hbar: self.constants.hbar_j_s,
            g_e: self.constants.g_e,
            g_n: self.constants.g_n,
        };
        let electron = ElectronConfig::from_key(&self.dot.electron).unwrap_or_else(|| {
            errs.push(format!(
                "dot.electron must be present_up, present_down or absent, got {:?}",
                self.dot.electron
            ));
            ElectronConfig::UP
        });
        if !(self.dot.a0_uev >= 0.0 && self.dot.a0_uev.is_finite()) {
            errs.push(format!("dot.A0_ueV must be nonnegative, got {}", self.dot.a0_uev));
        }
        let dot = DotModel {
            fock_darwin_radius: self.dot.l0_nm,
            thickness: self.dot.z0_nm,
            hyperfine_peak: constants.uev_to_rad_per_s(self.dot.a0_uev.max(0.0)),
            lattice_constant: self.dot.a0_nm,
            field: self.dot.b0_t,
            spin: self.dot.spin,
            electron,
            constants,
        };
        errs.extend(
            dot.violations()
                .into_iter()
                .filter(|v| !v.starts_with("A0"))
                .map(|v| format!("dot: {v}")),
        );
        let rates = self.rate_params();
        if self.dot.a0_nm > 0.0 {
            errs.extend(rates.violations(self.dot.a0_nm).into_iter().map(|v| format!("rates: {v}")));
        }

        let mesh = match Mesh2D::square(self.mesh.half_width_nm, self.mesh.h_nm) {
            Ok(m) if self.mesh.half_width_nm > 0.0 => Some(m),
            Ok(_) => {
                errs.push(format!("mesh.half_width_nm must be positive, got {}", self.mesh.half_width_nm));
                None
            }
            Err(e) => {
                errs.push(format!("mesh: {e}"));
                None
            }
        };

        let scheme = Scheme::from_key(&self.solver.scheme).unwrap_or_else(|| {
            errs.push(format!("solver.scheme must be explicit or adi, got {:?}", self.solver.scheme));
            Scheme::Explicit
        });
        let form = DiffusionForm::from_key(&self.solver.form).unwrap_or_else(|| {
            errs.push(format!(
                "solver.form must be non_divergence or divergence, got {:?}",
                self.solver.form
            ));
            DiffusionForm::NonDivergence
        });
        let solver = SolverConfig {
            scheme,
            dt: self.solver.dt_s.map_or(TimeStep::Auto, TimeStep::Fixed),
            t_end: self.solver.t_end_s,
            snapshot_times: self.solver.snapshot_times_s.clone(),
            form,
            boundary: self
                .solver
                .disc_radius_nm
                .map_or(Boundary::DirichletZero, |radius| Boundary::DirichletDisc { radius }),
        };
        errs.extend(solver.violations().into_iter().map(|v| format!("solver: {v}")));
        if !(0.0..1.0).contains(&self.solver.stop_below) {
            errs.push(format!("solver.stop_below must lie in [0, 1), got {}", self.solver.stop_below));
        }
        if self.solver.log_samples + self.solver.linear_samples < 10 {
            errs.push("solver: need at least 10 decay samples".into());
        }

        let probe = ProbeLayer::from_key(&self.dfield.probe).unwrap_or_else(|| {
            errs.push(format!(
                "dfield.probe must be midplane or layer_averaged, got {:?}",
                self.dfield.probe
            ));
            ProbeLayer::Midplane
        });
        let r0 = self.initial.r0_nm.unwrap_or(self.dot.l0_nm);
        if !(r0 > 0.0 && r0.is_finite()) {
            errs.push(format!("initial.r0_nm must be positive, got {r0}"));
        }

        if !errs.is_empty() {
            return Err(ConfigError::Invalid(errs));
        }
        let mesh = mesh.expect("validated");
        let mut warnings = Vec::new();
        if let Some(target) = self.dot.sum_a_target_uev {
            let sum = constants.rad_per_s_to_uev(dot.hyperfine_sum());
            if (sum - target).abs() > 0.1 * target.abs() {
                warnings.push(format!(
                    "sum of hyperfine couplings is {sum:.4} ueV, target {target} ueV; A0 and the target are inconsistent"
                ));
            }
        }
        if r0 > self.mesh.half_width_nm / 2.0 {
            warnings.push(format!(
                "initial radius {r0} nm exceeds a quarter of the domain width; the boundary truncates the profile"
            ));
        }
        Ok(Resolved {
            dot,
            rates,
            mesh,
            solver,
            initial_radius: r0,
            probe,
            log_samples: self.solver.log_samples,
            linear_samples: self.solver.linear_samples,
            stop_below: self.solver.stop_below,
            warnings,
        })
    }
}

/// Reads a `.toml` config or the `config` member of a `.json` run manifest.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |message: String| ConfigError::Parse {
        path: path.to_path_buf(),
        message,
    };
    if path.extension().is_some_and(|e| e == "json") {
        #[derive(Deserialize)]
        struct ConfigOnly {
            config: RunConfig,
        }
        let m: ConfigOnly = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
        Ok(m.config)
    } else {
        RunConfig::from_toml_str(&text).map_err(parse_err)
    }
}
