//! Named presets, their expected properties, and parameter sweeps.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::dfield::{bulk_background, DiffusionCalculator, DiffusionField};
use crate::model::ElectronConfig;
use crate::observables::{envelope_moment, fit_deff, half_decay_time, DecayCurve, FitResult};
use crate::output::{self, Derived, OutputError, RunManifest};
use crate::solver::{evolve_until, make_initial, resolve_dt, stability_dt, PolarizationField, RunStats};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario {0:?}; known: fig1, fig2, fig3, fig4, fig5")]
    Unknown(String),
    #[error("unknown sweep parameter {0:?}; expected B0, r0, electron or A0")]
    UnknownParameter(String),
    #[error("bad sweep value {value:?} for {param}: {reason}")]
    BadValue {
        param: String,
        value: String,
        reason: String,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Output(#[from] OutputError),
}

/// Changes applied on top of a base configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub electron: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hyperfine_uev: Option<f64>,
    /// Initial radius as a multiple of l0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r0_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r0_nm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mesh_h_nm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_below: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.field_t {
            cfg.dot.b0_t = v;
        }
        if let Some(v) = &self.electron {
            cfg.dot.electron = v.clone();
        }
        if let Some(v) = self.hyperfine_uev {
            cfg.dot.a0_uev = v;
        }
        if let Some(v) = self.r0_factor {
            cfg.initial.r0_nm = Some(v * cfg.dot.l0_nm);
        }
        if let Some(v) = self.r0_nm {
            cfg.initial.r0_nm = Some(v);
        }
        if let Some(v) = self.t_end_s {
            cfg.solver.t_end_s = v;
        }
        if let Some(v) = &self.scheme {
            cfg.solver.scheme = v.clone();
        }
        if let Some(v) = self.mesh_h_nm {
            cfg.mesh.h_nm = v;
        }
        if let Some(v) = self.stop_below {
            cfg.solver.stop_below = v;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub label: String,
    pub overrides: Overrides,
    /// Propagate the polarization and record the Overhauser decay.
    pub decay: bool,
    /// Fit an effective constant D to the decay.
    pub fit: bool,
}

impl RunSpec {
    fn field_only(label: &str, overrides: Overrides) -> Self {
        Self {
            label: label.into(),
            overrides,
            decay: false,
            fit: false,
        }
    }

    fn decay(label: &str, overrides: Overrides, fit: bool) -> Self {
        Self {
            label: label.into(),
            overrides,
            decay: true,
            fit,
        }
    }
}

/// Machine-checkable property of a scenario's runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expectation {
    CenterAboveBackground { run: String },
    CenterBelowBackground { run: String },
    /// Half-decay times strictly increase along the list.
    HalfDecayIncreasing { runs: Vec<String> },
    HalfDecayWithin { run: String, lo: f64, hi: f64 },
    /// D_eff over the bulk background D.
    SuppressionWithin { run: String, lo: f64, hi: f64 },
    DeffWithin { run: String, lo: f64, hi: f64 },
    DeffRatioBelow { numerator: String, denominator: String, max: f64 },
    /// h/h0 stays in [0, 1] and never increases.
    DecayMonotone { run: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub description: String,
    pub runs: Vec<RunSpec>,
    pub expectations: Vec<Expectation>,
}

fn field(b: f64) -> Overrides {
    Overrides {
        field_t: Some(b),
        ..Default::default()
    }
}

pub const SCENARIO_IDS: [&str; 5] = ["fig1", "fig2", "fig3", "fig4", "fig5"];

pub fn scenario(id: &str) -> Result<Scenario, ScenarioError> {
    let s = match id {
        "fig1" => Scenario {
            id: id.into(),
            description: "D field at B0 = 0.2 T: enhanced at the dot center".into(),
            runs: vec![RunSpec::field_only("b0_0.2T", field(0.2))],
            expectations: vec![Expectation::CenterAboveBackground { run: "b0_0.2T".into() }],
        },
        "fig2" => Scenario {
            id: id.into(),
            description: "D field at B0 = 2 T: suppressed around the dot".into(),
            runs: vec![RunSpec::field_only("b0_2T", field(2.0))],
            expectations: vec![Expectation::CenterBelowBackground { run: "b0_2T".into() }],
        },
        "fig3" => {
            let small = |b: f64| Overrides {
                field_t: Some(b),
                t_end_s: Some(600.0),
                stop_below: Some(0.2),
                ..Default::default()
            };
            let absent = Overrides {
                electron: Some("absent".into()),
                ..small(2.0)
            };
            let labels = ["b0_10mT", "b0_20mT", "absent"];
            Scenario {
                id: id.into(),
                description: "Overhauser decay at 10 mT and 20 mT and without the electron".into(),
                runs: vec![
                    RunSpec::decay(labels[0], small(0.01), false),
                    RunSpec::decay(labels[1], small(0.02), false),
                    RunSpec::decay(labels[2], absent, false),
                ],
                expectations: [
                    Expectation::HalfDecayIncreasing {
                        runs: labels.map(String::from).to_vec(),
                    },
                ]
                .into_iter()
                .chain(labels.iter().map(|l| Expectation::HalfDecayWithin {
                    run: (*l).into(),
                    lo: 1.0,
                    hi: 600.0,
                }))
                .chain(labels.iter().map(|l| Expectation::DecayMonotone { run: (*l).into() }))
                .collect(),
            }
        }
        "fig4" => {
            let long = |electron: Option<&str>| Overrides {
                field_t: Some(2.0),
                electron: electron.map(String::from),
                t_end_s: Some(3000.0),
                scheme: Some("adi".into()),
                ..Default::default()
            };
            Scenario {
                id: id.into(),
                description: "Overhauser decay at 2 T with an effective constant-D fit".into(),
                runs: vec![
                    RunSpec::decay("b0_2T", long(None), true),
                    RunSpec::decay("absent", long(Some("absent")), true),
                ],
                expectations: vec![
                    Expectation::SuppressionWithin {
                        run: "b0_2T".into(),
                        lo: 0.03,
                        hi: 0.3,
                    },
                    Expectation::DeffWithin {
                        run: "b0_2T".into(),
                        lo: 0.7 / 3.0,
                        hi: 0.7 * 3.0,
                    },
                    Expectation::DeffRatioBelow {
                        numerator: "b0_2T".into(),
                        denominator: "absent".into(),
                        max: 0.35,
                    },
                    Expectation::DecayMonotone { run: "b0_2T".into() },
                    Expectation::DecayMonotone { run: "absent".into() },
                ],
            }
        }
        "fig5" => {
            let factors = [0.5, 0.625, 0.75, 0.875, 1.0];
            let label = |f: f64| format!("r0_{f}l0");
            Scenario {
                id: id.into(),
                description: "Decay at B0 = 0.2 T for narrower initial polarization".into(),
                runs: factors
                    .iter()
                    .map(|&f| {
                        RunSpec::decay(
                            &label(f),
                            Overrides {
                                field_t: Some(0.2),
                                r0_factor: Some(f),
                                stop_below: Some(0.2),
                                ..Default::default()
                            },
                            false,
                        )
                    })
                    .collect(),
                expectations: vec![
                    Expectation::HalfDecayIncreasing {
                        runs: [0.5, 0.75, 1.0].map(label).to_vec(),
                    },
                    Expectation::HalfDecayIncreasing {
                        runs: factors.map(label).to_vec(),
                    },
                ],
            }
        }
        other => return Err(ScenarioError::Unknown(other.into())),
    };
    Ok(s)
}

/// Result of one run; failures are kept as messages so other runs and
/// checks still report.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub label: String,
    pub config: RunConfig,
    pub warnings: Vec<String>,
    pub field: Option<DiffusionField>,
    pub background_d: Option<f64>,
    pub center_d: Option<f64>,
    pub far_field_d: Option<f64>,
    pub decay: Option<DecayCurve>,
    pub half_decay: Option<Result<f64, String>>,
    pub fit: Option<Result<FitResult, String>>,
    pub stats: Option<RunStats>,
    pub stability_dt: Option<f64>,
    pub dt: Option<f64>,
    pub snapshots: Vec<PolarizationField>,
    pub error: Option<String>,
    pub elapsed_s: f64,
}

impl RunOutcome {
    fn empty(label: &str, config: RunConfig) -> Self {
        Self {
            label: label.into(),
            config,
            warnings: Vec::new(),
            field: None,
            background_d: None,
            center_d: None,
            far_field_d: None,
            decay: None,
            half_decay: None,
            fit: None,
            stats: None,
            stability_dt: None,
            dt: None,
            snapshots: Vec::new(),
            error: None,
            elapsed_s: 0.0,
        }
    }

    pub fn half_decay_s(&self) -> Option<f64> {
        self.half_decay.as_ref().and_then(|r| r.as_ref().ok().copied())
    }

    pub fn d_eff(&self) -> Option<f64> {
        self.fit.as_ref().and_then(|r| r.as_ref().ok().map(|f| f.d_eff))
    }

    pub fn manifest(&self, scenario: Option<&str>, seed: Option<u64>) -> RunManifest {
        let mut m = RunManifest::new(&self.config);
        m.scenario = scenario.map(String::from);
        m.run = Some(self.label.clone());
        m.warnings = self.warnings.clone();
        m.seed = seed;
        m.elapsed_s = self.elapsed_s;
        let resolved = self.config.resolve().ok();
        m.derived = Derived {
            background_d_nm2_per_s: self.background_d,
            center_d_nm2_per_s: self.center_d,
            max_d_nm2_per_s: self.field.as_ref().map(|f| f.max()),
            sum_a_uev: resolved
                .as_ref()
                .map(|r| r.dot.constants.rad_per_s_to_uev(r.dot.hyperfine_sum()))
                .unwrap_or(f64::NAN),
            a0_rad_per_s: resolved.as_ref().map(|r| r.dot.hyperfine_peak).unwrap_or(f64::NAN),
            stability_dt_s: self.stability_dt,
            dt_s: self.dt,
            steps: self.stats.map(|s| s.steps),
            final_time_s: self.stats.map(|s| s.final_time),
            total_drift: self.stats.map(|s| s.relative_drift()),
            half_decay_s: self.half_decay_s(),
            d_eff_nm2_per_s: self.d_eff(),
        };
        m
    }

    /// dfield.csv, decay.csv, fit.json, snapshots and manifest.json.
    pub fn write(&self, dir: &Path, scenario: Option<&str>, seed: Option<u64>) -> Result<(), OutputError> {
        if let Some(f) = &self.field {
            output::write_dfield(&dir.join("dfield.csv"), f)?;
        }
        if let Some(c) = &self.decay {
            output::write_decay(&dir.join("decay.csv"), c)?;
        }
        if let Some(Ok(fit)) = &self.fit {
            output::write_fit(&dir.join("fit.json"), fit)?;
        }
        for s in &self.snapshots {
            output::write_snapshot(&dir.join(format!("snapshot_t{}.csv", s.time)), s)?;
        }
        output::write_json(&dir.join("manifest.json"), &self.manifest(scenario, seed))
    }
}

/// Builds the D field and, if asked, propagates and reduces the decay.
pub fn execute_run(base: &RunConfig, spec: &RunSpec) -> RunOutcome {
    let start = Instant::now();
    let mut cfg = base.clone();
    spec.overrides.apply(&mut cfg);
    let mut out = RunOutcome::empty(&spec.label, cfg.clone());
    if let Err(e) = run_into(&cfg, spec, &mut out) {
        out.error = Some(e);
    }
    out.elapsed_s = start.elapsed().as_secs_f64();
    out
}

fn run_into(cfg: &RunConfig, spec: &RunSpec, out: &mut RunOutcome) -> Result<(), String> {
    let r = cfg.resolve().map_err(|e| e.to_string())?;
    out.warnings.extend(r.warnings.iter().cloned());
    let calc = DiffusionCalculator::new(&r.dot, r.rates, r.probe).map_err(|e| e.to_string())?;
    let field = calc.build(&r.mesh).map_err(|e| e.to_string())?;
    out.background_d = Some(bulk_background(&r.dot, r.rates).map_err(|e| e.to_string())?);
    out.center_d = Some(calc.coefficient_at(0.0, 0.0));
    out.far_field_d = field.far_field(0.8 * cfg.mesh.half_width_nm);
    out.stability_dt = Some(stability_dt(&field, r.solver.t_end));
    if spec.decay {
        out.dt = Some(resolve_dt(&field, &r.solver).map_err(|e| e.to_string())?);
        let (init, warn) = make_initial(&r.mesh, r.initial_radius).map_err(|e| e.to_string())?;
        out.warnings.extend(warn);
        let mut times = r.sample_times();
        times.extend(r.solver.snapshot_times.iter().copied());
        let snaps = &r.solver.snapshot_times;
        let mut raw: Vec<(f64, f64)> = Vec::with_capacity(times.len());
        let mut snapshots = Vec::new();
        let stop = r.stop_below;
        let stats = evolve_until(&init, &field, &r.solver, &times, |f| {
            if snaps.contains(&f.time) {
                snapshots.push(f.clone());
            }
            let m = envelope_moment(f, &r.dot);
            raw.push((f.time, m));
            !(stop > 0.0 && m < stop * raw[0].1)
        })
        .map_err(|e| e.to_string())?;
        out.stats = Some(stats);
        out.snapshots = snapshots;
        let curve = DecayCurve::from_raw(spec.label.clone(), r.initial_radius, &raw).map_err(|e| e.to_string())?;
        out.half_decay = Some(half_decay_time(&curve).map_err(|e| e.to_string()));
        if spec.fit {
            out.fit = Some(fit_deff(&curve, &r.dot).map_err(|e| e.to_string()));
        }
        out.decay = Some(curve);
    }
    out.field = Some(field);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub expectation: Expectation,
    pub passed: bool,
    pub detail: String,
}

pub fn check(e: &Expectation, runs: &BTreeMap<String, &RunOutcome>) -> CheckResult {
    let result = evaluate(e, runs);
    let (passed, detail) = match result {
        Ok(pair) => pair,
        Err(msg) => (false, msg),
    };
    CheckResult {
        expectation: e.clone(),
        passed,
        detail,
    }
}

fn evaluate(e: &Expectation, runs: &BTreeMap<String, &RunOutcome>) -> Result<(bool, String), String> {
    let get = |label: &str| -> Result<&RunOutcome, String> {
        let r = runs.get(label).ok_or_else(|| format!("no run {label:?}"))?;
        match &r.error {
            Some(e) => Err(format!("run {label} failed: {e}")),
            None => Ok(*r),
        }
    };
    let t_half = |label: &str| -> Result<f64, String> {
        match &get(label)?.half_decay {
            Some(Ok(t)) => Ok(*t),
            Some(Err(e)) => Err(format!("{label}: {e}")),
            None => Err(format!("{label}: no decay")),
        }
    };
    let d_eff = |label: &str| -> Result<f64, String> {
        match &get(label)?.fit {
            Some(Ok(f)) => Ok(f.d_eff),
            Some(Err(e)) => Err(format!("{label}: {e}")),
            None => Err(format!("{label}: no fit")),
        }
    };
    let center_vs_background = |label: &str| -> Result<(f64, f64), String> {
        let r = get(label)?;
        Ok((r.center_d.unwrap_or(f64::NAN), r.background_d.unwrap_or(f64::NAN)))
    };
    Ok(match e {
        Expectation::CenterAboveBackground { run } => {
            let (c, b) = center_vs_background(run)?;
            (c > b, format!("D(0,0) = {c} vs background {b}"))
        }
        Expectation::CenterBelowBackground { run } => {
            let (c, b) = center_vs_background(run)?;
            (c < b, format!("D(0,0) = {c} vs background {b}"))
        }
        Expectation::HalfDecayIncreasing { runs: labels } => {
            let ts = labels.iter().map(|l| t_half(l)).collect::<Result<Vec<_>, _>>()?;
            let ok = ts.windows(2).all(|w| w[1] > w[0]);
            let detail = labels
                .iter()
                .zip(&ts)
                .map(|(l, t)| format!("{l}: {t} s"))
                .collect::<Vec<_>>()
                .join(", ");
            (ok, detail)
        }
        Expectation::HalfDecayWithin { run, lo, hi } => {
            let t = t_half(run)?;
            (t >= *lo && t <= *hi, format!("t_half = {t} s, want [{lo}, {hi}]"))
        }
        Expectation::SuppressionWithin { run, lo, hi } => {
            let d = d_eff(run)?;
            let b = get(run)?.background_d.unwrap_or(f64::NAN);
            let ratio = d / b;
            (
                ratio >= *lo && ratio <= *hi,
                format!("D_eff/background = {d}/{b} = {ratio}, want [{lo}, {hi}]"),
            )
        }
        Expectation::DeffWithin { run, lo, hi } => {
            let d = d_eff(run)?;
            (d >= *lo && d <= *hi, format!("D_eff = {d}, want [{lo}, {hi}]"))
        }
        Expectation::DeffRatioBelow {
            numerator,
            denominator,
            max,
        } => {
            let ratio = d_eff(numerator)? / d_eff(denominator)?;
            (ratio < *max, format!("ratio = {ratio}, want < {max}"))
        }
        Expectation::DecayMonotone { run } => {
            let c = get(run)?.decay.as_ref().ok_or_else(|| format!("{run}: no decay"))?;
            let bounded = c.samples.iter().all(|s| (0.0..=1.0).contains(&s.1));
            let rise = c
                .samples
                .windows(2)
                .map(|w| w[1].1 - w[0].1)
                .fold(f64::NEG_INFINITY, f64::max);
            (
                bounded && rise <= 0.0,
                format!("in [0, 1]: {bounded}, largest step change {rise}"),
            )
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub error: Option<String>,
    pub background_d: Option<f64>,
    pub center_d: Option<f64>,
    pub far_field_d: Option<f64>,
    pub half_decay_s: Option<f64>,
    pub d_eff: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub runs: Vec<RunSummary>,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

pub struct ScenarioResult {
    pub report: ScenarioReport,
    pub outcomes: Vec<RunOutcome>,
}

/// Runs every preset run, applying `forced` after the preset's own
/// overrides, and evaluates the expectations. With `out`, writes one
/// subdirectory per run plus `report.json` and `scenario.json`.
pub fn run_scenario(
    s: &Scenario,
    base: &RunConfig,
    forced: &Overrides,
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<ScenarioResult, ScenarioError> {
    let outcomes: Vec<RunOutcome> = s
        .runs
        .par_iter()
        .map(|spec| {
            let mut cfg = base.clone();
            spec.overrides.apply(&mut cfg);
            forced.apply(&mut cfg);
            let plain = RunSpec {
                overrides: Overrides::default(),
                ..spec.clone()
            };
            execute_run(&cfg, &plain)
        })
        .collect();
    let by_label: BTreeMap<String, &RunOutcome> = outcomes.iter().map(|o| (o.label.clone(), o)).collect();
    let checks: Vec<CheckResult> = s.expectations.iter().map(|e| check(e, &by_label)).collect();
    let runs = outcomes
        .iter()
        .map(|o| RunSummary {
            label: o.label.clone(),
            error: o.error.clone(),
            background_d: o.background_d,
            center_d: o.center_d,
            far_field_d: o.far_field_d,
            half_decay_s: o.half_decay_s(),
            d_eff: o.d_eff(),
            warnings: o.warnings.clone(),
        })
        .collect();
    let passed = checks.iter().all(|c| c.passed) && outcomes.iter().all(|o| o.error.is_none());
    let report = ScenarioReport {
        scenario: s.id.clone(),
        runs,
        checks,
        passed,
    };
    if let Some(dir) = out {
        for o in &outcomes {
            o.write(&dir.join(&o.label), Some(&s.id), seed)?;
        }
        output::write_json(&dir.join("scenario.json"), s)?;
        output::write_json(&dir.join("report.json"), &report)?;
    }
    Ok(ScenarioResult { report, outcomes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    B0,
    R0,
    Electron,
    A0,
}

impl SweepParam {
    pub fn parse(name: &str) -> Result<Self, ScenarioError> {
        match name {
            "B0" | "b0" => Ok(Self::B0),
            "r0" | "R0" => Ok(Self::R0),
            "electron" => Ok(Self::Electron),
            "A0" | "a0" => Ok(Self::A0),
            other => Err(ScenarioError::UnknownParameter(other.into())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::B0 => "B0_T",
            Self::R0 => "r0_nm",
            Self::Electron => "electron",
            Self::A0 => "A0_ueV",
        }
    }

    pub fn overrides(self, value: &str) -> Result<Overrides, ScenarioError> {
        let bad = |reason: String| ScenarioError::BadValue {
            param: self.name().into(),
            value: value.into(),
            reason,
        };
        let num = || value.trim().parse::<f64>().map_err(|e| bad(e.to_string()));
        let mut o = Overrides::default();
        match self {
            Self::B0 => o.field_t = Some(num()?),
            Self::R0 => o.r0_nm = Some(num()?),
            Self::A0 => o.hyperfine_uev = Some(num()?),
            Self::Electron => {
                let key = value.trim();
                if ElectronConfig::from_key(key).is_none() {
                    return Err(bad("expected present_up, present_down or absent".into()));
                }
                o.electron = Some(key.into());
            }
        }
        Ok(o)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub half_decay_s: Option<f64>,
    #[serde(rename = "D_eff_nm2_per_s")]
    pub d_eff: Option<f64>,
    pub error: Option<String>,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("value,t_half_s,D_eff_nm2_per_s,status\n");
    for r in rows {
        let status = match &r.error {
            None => "ok".to_string(),
            Some(e) => format!("\"error: {}\"", e.replace('"', "'").replace('\n', " ")),
        };
        s.push_str(&format!("{},{},{},{}\n", r.value, opt(r.half_decay_s), opt(r.d_eff), status));
    }
    s
}

/// One decay-and-fit run per value. Rows keep the order of `values`; a
/// failed run marks its row and the others continue.
pub fn sweep(
    param: SweepParam,
    values: &[String],
    base: &RunConfig,
    preset: &Overrides,
    out: Option<&Path>,
) -> Result<Vec<SweepRow>, ScenarioError> {
    let specs = values
        .iter()
        .map(|v| param.overrides(v).map(|o| (v.clone(), o)))
        .collect::<Result<Vec<_>, _>>()?;
    let outcomes: Vec<(String, RunOutcome)> = specs
        .par_iter()
        .map(|(v, o)| {
            let mut cfg = base.clone();
            preset.apply(&mut cfg);
            o.apply(&mut cfg);
            let label = format!("{}_{}", param.name(), v);
            let spec = RunSpec::decay(&label, Overrides::default(), true);
            (v.clone(), execute_run(&cfg, &spec))
        })
        .collect();
    let rows: Vec<SweepRow> = outcomes
        .iter()
        .map(|(v, o)| {
            let error = o
                .error
                .clone()
                .or_else(|| o.half_decay.as_ref().and_then(|r| r.clone().err()))
                .or_else(|| o.fit.as_ref().and_then(|r| r.clone().err()));
            SweepRow {
                value: v.clone(),
                half_decay_s: o.half_decay_s(),
                d_eff: o.d_eff(),
                error,
            }
        })
        .collect();
    if let Some(dir) = out {
        for (_, o) in &outcomes {
            o.write(&dir.join(&o.label), None, None)?;
        }
        output::write_text(&dir.join("sweep.csv"), &sweep_csv(&rows))?;
    }
    Ok(rows)
}
