//! Acceptance criteria. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process fails if any criterion
//! does.

use std::time::Instant;

use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use overhauser::config::RunConfig;
use overhauser::dfield::{build_field, bulk_background, diffusion_coefficient_at, DiffusionField, Mesh2D};
use overhauser::model::{dipolar_coupling, DotModel, ElectronConfig, PhysicalConstants, Site};
use overhauser::observables::{analytic_decay, envelope_moment, fit_deff, half_decay_time, DecayCurve};
use overhauser::oracle::{OracleCheck, DEFAULT_NETWORK_CAP};
use overhauser::rates::{flipflop_rate, RateEngine, RateParams};
use overhauser::scenarios::{execute_run, run_scenario, scenario, Overrides, RunSpec};
use overhauser::solver::{evolve_observed, make_initial, SolverConfig};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn params() -> RateParams {
    RateParams::for_spacing(DotModel::default().lattice_constant)
}

fn c1_bulk_diffusion() -> Verdict {
    let start = Instant::now();
    let dot = DotModel::default();
    let mesh = Mesh2D::square(300.0, 3.0).unwrap();
    let field = build_field(&mesh, &dot, params()).unwrap();
    let far = field.far_field(240.0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        (3.5..=14.0).contains(&far) && secs < 60.0,
        format!("far-field D = {far:.4} nm^2/s, want [3.5, 14]; field built in {secs:.1} s"),
    )
}

fn c2_crossover() -> Verdict {
    let dot = DotModel::default();
    let bg = bulk_background(&dot, params()).unwrap();
    let low = diffusion_coefficient_at((0.0, 0.0), &dot.with_field(0.2), params()).unwrap();
    let high = diffusion_coefficient_at((0.0, 0.0), &dot.with_field(2.0), params()).unwrap();
    verdict(
        low > bg && bg > high,
        format!("D(0,0)@0.2T = {low:.4} > background {bg:.4} > D(0,0)@2T = {high:.4}"),
    )
}

fn c3_suppression() -> Verdict {
    let fig4 = scenario("fig4").unwrap();
    let spec = fig4.runs.iter().find(|r| r.label == "b0_2T").unwrap();
    let out = execute_run(&RunConfig::default(), spec);
    if let Some(e) = out.error {
        return verdict(false, format!("run failed: {e}"));
    }
    let (Some(d), Some(bg)) = (out.d_eff(), out.background_d) else {
        return verdict(false, format!("no fit: {:?}", out.fit));
    };
    let ratio = d / bg;
    verdict(
        (0.03..=0.3).contains(&ratio),
        format!("D_eff = {d:.4}, background = {bg:.4}, ratio = {ratio:.4}, want [0.03, 0.3]"),
    )
}

fn c4_field_orderings() -> Verdict {
    let r = run_scenario(&scenario("fig3").unwrap(), &RunConfig::default(), &Overrides::default(), None, None).unwrap();
    let t: Vec<Option<f64>> = ["b0_10mT", "b0_20mT", "absent"]
        .iter()
        .map(|l| r.outcomes.iter().find(|o| o.label == *l).and_then(|o| o.half_decay_s()))
        .collect();
    let [Some(a), Some(b), Some(c)] = t[..] else {
        return verdict(false, format!("missing half-decay times: {t:?}"));
    };
    let in_range = [a, b, c].iter().all(|t| (1.0..=600.0).contains(t));
    verdict(
        a < b && b < c && in_range,
        format!("t_half: 10 mT = {a:.4} s, 20 mT = {b:.4} s, absent = {c:.4} s; each in [1, 600]"),
    )
}

fn c5_width_ordering() -> Verdict {
    let base = RunConfig::default();
    let mut ts = Vec::new();
    for f in [0.5, 0.75, 1.0] {
        let spec = RunSpec {
            label: format!("r0_{f}l0"),
            overrides: Overrides {
                field_t: Some(0.2),
                r0_factor: Some(f),
                stop_below: Some(0.2),
                ..Default::default()
            },
            decay: true,
            fit: false,
        };
        match execute_run(&base, &spec).half_decay_s() {
            Some(t) => ts.push(t),
            None => return verdict(false, format!("no half-decay time for r0 = {f} l0")),
        }
    }
    verdict(
        ts.windows(2).all(|w| w[1] > w[0]),
        format!("t_half over r0 = 0.5, 0.75, 1.0 l0: {:.4}, {:.4}, {:.4} s", ts[0], ts[1], ts[2]),
    )
}

fn c6_analytic() -> Verdict {
    let dot = DotModel::default();
    let l0 = dot.fock_darwin_radius;
    let d = 7.0;
    let t_half = l0 * l0 / (2.0 * d);
    let mesh = Mesh2D::square(300.0, 3.0).unwrap();
    let meta = build_field(&Mesh2D::new(3, 3, 3.0, (0.0, 0.0)).unwrap(), &dot, params())
        .unwrap()
        .metadata;
    let field = DiffusionField::constant(mesh, d, meta);
    let (init, _) = make_initial(&mesh, l0).unwrap();
    let cfg = SolverConfig {
        t_end: 2.0 * t_half,
        ..Default::default()
    };
    let times: Vec<f64> = (0..=100).map(|k| 2.0 * t_half * k as f64 / 100.0).collect();
    let mut raw = Vec::new();
    evolve_observed(&init, &field, &cfg, &times, |f| raw.push((f.time, envelope_moment(f, &dot)))).unwrap();
    let curve = DecayCurve::from_raw("analytic", l0, &raw).unwrap();
    let worst = curve
        .samples
        .iter()
        .map(|&(t, h)| {
            let exact = 1.0 / (1.0 + 2.0 * d * t / (l0 * l0));
            debug_assert!((exact - analytic_decay(d, t, l0, l0)).abs() < 1e-15);
            ((h - exact) / exact).abs()
        })
        .fold(0.0, f64::max);
    let th = half_decay_time(&curve).unwrap();
    verdict(
        worst <= 0.01,
        format!("max relative deviation {worst:.2e} up to 2 t_half; simulated t_half = {th:.3} s vs {t_half:.3} s"),
    )
}

fn c7_microscopic() -> Verdict {
    let dot = DotModel::default();
    let check = OracleCheck {
        electron: ElectronConfig::UP,
        field: 2.0,
        ..Default::default()
    };
    let bulk = OracleCheck::default();
    let (rep, bulk_rep) = match (check.run(&dot, params()), bulk.run(&dot, params())) {
        (Ok(a), Ok(b)) => (a, b),
        (a, b) => return verdict(false, format!("oracle failed: {:?} {:?}", a.err(), b.err())),
    };
    let pass = rep.max_relative_gap <= 0.05
        && rep.conservation_drift <= 1e-9
        && bulk_rep.conservation_drift <= 1e-9
        && rep.sites <= DEFAULT_NETWORK_CAP;
    verdict(
        pass,
        format!(
            "l0 = 8 a0, 2 T, {} sites: max gap {:.4} through t_half = {:.3} s (want <= 0.05), drift {:.1e}; electron-free patch gap {:.4}, drift {:.1e}",
            rep.sites,
            rep.max_relative_gap,
            rep.network_half_decay,
            rep.conservation_drift,
            bulk_rep.max_relative_gap,
            bulk_rep.conservation_drift
        ),
    )
}

fn random_pair_checks() -> Result<(), String> {
    let dot = DotModel::default().with_field(0.2);
    let p = params();
    let engine = RateEngine::new(&dot, p).map_err(|e| e.to_string())?;
    let a = dot.lattice_constant;
    let h = dot.half_layers();
    let strategy = (-60i32..=60, -60i32..=60, -h..=h, -3i32..=3, -3i32..=3, -3i32..=3)
        .prop_filter("inside slab, distinct, within cutoff", move |&(_, _, z, dx, dy, dz)| {
            let n2 = dx * dx + dy * dy + dz * dz;
            (z + dz).abs() <= h && n2 > 0 && n2 <= 9
        });
    let mut runner = TestRunner::new_with_rng(
        Config::with_cases(1000),
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    for _ in 0..1000 {
        let (x, y, z, dx, dy, dz) = strategy
            .new_tree(&mut runner)
            .map_err(|e| e.to_string())?
            .current();
        let i = Site::at_cell(0, [x, y, z], a);
        let k = Site::at_cell(1, [x + dx, y + dy, z + dz], a);
        let wik = flipflop_rate(&i, &k, &dot, &p).map_err(|e| e.to_string())?;
        let wki = flipflop_rate(&k, &i, &dot, &p).map_err(|e| e.to_string())?;
        let eik = engine.rate(i.cell, k.cell);
        let eki = engine.rate(k.cell, i.cell);
        if !(wik >= 0.0 && eik >= 0.0) {
            return Err(format!("negative rate for {:?}-{:?}", i.cell, k.cell));
        }
        if (wik - wki).abs() > 1e-12 * wik.max(1e-300) || (eik - eki).abs() > 1e-10 * eik.max(1e-300) {
            return Err(format!("asymmetric rate for {:?}-{:?}: {wik} {wki} {eik} {eki}", i.cell, k.cell));
        }
    }
    Ok(())
}

fn dipolar_checks() -> Result<(), String> {
    let c = PhysicalConstants::default();
    let a = 0.563;
    let o = Site::at_cell(0, [0, 0, 0], a);
    let magic = dipolar_coupling(&o, &Site::at_cell(1, [1, 1, 1], a), &c).map_err(|e| e.to_string())?;
    let nn = dipolar_coupling(&o, &Site::at_cell(1, [1, 0, 0], a), &c).map_err(|e| e.to_string())?;
    if magic.abs() > 1e-12 * nn.abs() {
        return Err(format!("magic-angle coupling {magic}"));
    }
    for cell in [[1, 0, 0], [0, 0, 1], [1, 2, 0], [2, 1, 3]] {
        let near = dipolar_coupling(&o, &Site::at_cell(1, cell, a), &c).map_err(|e| e.to_string())?;
        let far = dipolar_coupling(&o, &Site::at_cell(1, cell.map(|v| 2 * v), a), &c).map_err(|e| e.to_string())?;
        if (near / far - 8.0).abs() > 8e-12 {
            return Err(format!("R^-3 scaling broken at {cell:?}: {}", near / far));
        }
    }
    Ok(())
}

fn absent_field_checks() -> Result<(), String> {
    let base = DotModel::default().with_electron(ElectronConfig::Absent);
    let mesh = Mesh2D::new(9, 9, 6.0, (-24.0, -24.0)).map_err(|e| e.to_string())?;
    let reference = build_field(&mesh, &base.with_field(2.0), params()).map_err(|e| e.to_string())?;
    for b in [0.01, 0.02, 0.2, 20.0] {
        let f = build_field(&mesh, &base.with_field(b), params()).map_err(|e| e.to_string())?;
        for (x, y) in f.values.iter().zip(&reference.values) {
            if (x - y).abs() > 1e-12 * y {
                return Err(format!("absent field depends on B0 = {b}: {x} vs {y}"));
            }
        }
    }
    Ok(())
}

fn fit_checks() -> Result<(), String> {
    let dot = DotModel::default();
    let times: Vec<f64> = (0..=60).map(|k| 10.0 * k as f64).collect();
    for d in [0.5, 2.0, 7.0, 20.0] {
        let fit = fit_deff(&DecayCurve::analytic(d, 30.0, 30.0, &times), &dot).map_err(|e| e.to_string())?;
        if (fit.d_eff - d).abs() > 0.01 * d {
            return Err(format!("fit of D = {d} returned {}", fit.d_eff));
        }
    }
    Ok(())
}

fn rerun_checks() -> Result<(), String> {
    let mut base = RunConfig::default();
    base.mesh.h_nm = 6.0;
    base.solver.t_end_s = 60.0;
    let s = scenario("fig3").map_err(|e| e.to_string())?;
    let forced = Overrides {
        t_end_s: Some(60.0),
        ..Default::default()
    };
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    for d in &dirs {
        run_scenario(&s, &base, &forced, Some(d.path()), None).map_err(|e| e.to_string())?;
    }
    for run in ["b0_10mT", "b0_20mT", "absent"] {
        for file in ["dfield.csv", "decay.csv"] {
            let read = |i: usize| std::fs::read(dirs[i].path().join(run).join(file)).map_err(|e| e.to_string());
            if read(0)? != read(1)? {
                return Err(format!("{run}/{file} differs between reruns"));
            }
        }
    }
    Ok(())
}

fn c8_properties() -> Verdict {
    let suites: [(&str, fn() -> Result<(), String>); 5] = [
        ("rate symmetry over 1000 random pairs", random_pair_checks),
        ("dipolar magic angle and R^-3", dipolar_checks),
        ("electron-free field independent of B0", absent_field_checks),
        ("fit round trip", fit_checks),
        ("byte-identical reruns", rerun_checks),
    ];
    let mut failed = Vec::new();
    for (name, f) in suites {
        if let Err(e) = f() {
            failed.push(format!("{name}: {e}"));
        }
    }
    if failed.is_empty() {
        verdict(true, "rate symmetry, dipolar, B0 independence, fit round trip, reruns")
    } else {
        verdict(false, failed.join("; "))
    }
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("bulk diffusion coefficient", c1_bulk_diffusion),
        ("field-strength crossover", c2_crossover),
        ("effective suppression at 2 T", c3_suppression),
        ("decay orderings vs field", c4_field_orderings),
        ("initial-width ordering", c5_width_ordering),
        ("analytic oracle", c6_analytic),
        ("microscopic oracle", c7_microscopic),
        ("property suites", c8_properties),
    ];
    let mut failures = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = f();
        println!(
            "criterion {} {:<30} {}  {} ({:.1} s)",
            n + 1,
            name,
            if v.passed { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
        if !v.passed {
            failures += 1;
        }
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
