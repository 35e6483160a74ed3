use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use overhauser::config::{load_config, RunConfig};
use overhauser::dfield::DiffusionCalculator;
use overhauser::model::Site;
use overhauser::oracle::{OracleCheck, OracleReport};
use overhauser::output::{self, RunManifest};
use overhauser::rates::pair_breakdown;
use overhauser::scenarios::{run_scenario, scenario, sweep, Overrides, RunSpec, SweepParam};
use overhauser::model::ElectronConfig;
use overhauser::solver::Scheme;

#[derive(Parser)]
#[command(name = "overhauser", version, about = "Nuclear spin diffusion and Overhauser field decay in a quantum dot")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mesh spacing override (nm).
    #[arg(long)]
    mesh_h: Option<f64>,
    /// explicit or adi.
    #[arg(long)]
    scheme: Option<String>,
    /// Worker threads; defaults to the rayon default (RAYON_NUM_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    /// Reserved; nothing is stochastic. Recorded in manifests.
    #[arg(long)]
    seed: Option<u64>,
    /// Treat configuration warnings as errors.
    #[arg(long)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named scenario and check its expected properties.
    Run {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Decay and fit for each value of one parameter.
    Sweep {
        /// B0, r0, electron or A0.
        #[arg(long)]
        param: String,
        /// Comma-separated values (T, nm, key or ueV).
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Take the first run of this scenario as the base.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Build the diffusion field and write dfield.csv.
    Dfield {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print detuning, coupling, broadening and rate for one pair of
    /// lattice cells, given as x,y,z integers.
    Rates {
        #[arg(long, num_args = 2, value_names = ["I", "K"], required = true)]
        pair: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare the rate network with the diffusion solver on a scaled dot.
    OracleCheck {
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

const ORACLE_TOLERANCE: f64 = 0.05;
const ORACLE_DRIFT: f64 = 1e-9;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

type Res<T> = Result<T, Box<dyn std::error::Error>>;

fn prepare(common: &Common) -> Res<(RunConfig, Overrides)> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = match &common.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = &common.scheme {
        if Scheme::from_key(s).is_none() {
            return Err(format!("--scheme must be explicit or adi, got {s:?}").into());
        }
    }
    let forced = Overrides {
        scheme: common.scheme.clone(),
        mesh_h_nm: common.mesh_h,
        ..Default::default()
    };
    let mut check = cfg.clone();
    forced.apply(&mut check);
    let resolved = check.resolve()?;
    for w in &resolved.warnings {
        eprintln!("warning: {w}");
    }
    if common.strict && !resolved.warnings.is_empty() {
        return Err("warnings present and --strict given".into());
    }
    Ok((cfg, forced))
}

fn dispatch(cmd: Command) -> Res<bool> {
    match cmd {
        Command::Run { scenario: id, out, common } => {
            let (cfg, forced) = prepare(&common)?;
            let s = scenario(&id)?;
            let result = run_scenario(&s, &cfg, &forced, Some(&out), common.seed)?;
            for r in &result.report.runs {
                if let Some(e) = &r.error {
                    println!("run {} failed: {e}", r.label);
                }
            }
            for c in &result.report.checks {
                println!("[{}] {}", if c.passed { "PASS" } else { "FAIL" }, c.detail);
            }
            if common.strict && result.report.runs.iter().any(|r| !r.warnings.is_empty()) {
                println!("warnings present and --strict given");
                return Ok(false);
            }
            Ok(result.report.passed)
        }
        Command::Sweep {
            param,
            values,
            scenario: base_id,
            out,
            common,
        } => {
            let (cfg, forced) = prepare(&common)?;
            let param = SweepParam::parse(&param)?;
            let mut preset = match base_id {
                Some(id) => scenario(&id)?
                    .runs
                    .first()
                    .map(|r: &RunSpec| r.overrides.clone())
                    .unwrap_or_default(),
                None => Overrides::default(),
            };
            preset.scheme = forced.scheme.or(preset.scheme);
            preset.mesh_h_nm = forced.mesh_h_nm;
            let rows = sweep(param, &values, &cfg, &preset, out.as_deref())?;
            print!("{}", overhauser::scenarios::sweep_csv(&rows));
            Ok(rows.iter().all(|r| r.error.is_none()))
        }
        Command::Dfield { out, common } => {
            let (mut cfg, forced) = prepare(&common)?;
            forced.apply(&mut cfg);
            let r = cfg.resolve()?;
            let start = std::time::Instant::now();
            let calc = DiffusionCalculator::new(&r.dot, r.rates, r.probe)?;
            let field = calc.build(&r.mesh)?;
            output::write_dfield(&out.join("dfield.csv"), &field)?;
            let mut m = RunManifest::new(&cfg);
            m.seed = common.seed;
            m.warnings = r.warnings.clone();
            m.derived.background_d_nm2_per_s = Some(overhauser::dfield::bulk_background(&r.dot, r.rates)?);
            m.derived.center_d_nm2_per_s = Some(calc.coefficient_at(0.0, 0.0));
            m.derived.max_d_nm2_per_s = Some(field.max());
            m.derived.sum_a_uev = r.dot.constants.rad_per_s_to_uev(r.dot.hyperfine_sum());
            m.derived.a0_rad_per_s = r.dot.hyperfine_peak;
            m.derived.stability_dt_s = Some(overhauser::solver::stability_dt(&field, r.solver.t_end));
            m.elapsed_s = start.elapsed().as_secs_f64();
            output::write_json(&out.join("manifest.json"), &m)?;
            println!(
                "D(0,0) = {} nm^2/s, background = {} nm^2/s, max = {} nm^2/s",
                m.derived.center_d_nm2_per_s.unwrap_or(f64::NAN),
                m.derived.background_d_nm2_per_s.unwrap_or(f64::NAN),
                field.max()
            );
            Ok(true)
        }
        Command::Rates { pair, common } => {
            let (mut cfg, forced) = prepare(&common)?;
            forced.apply(&mut cfg);
            let r = cfg.resolve()?;
            let i = Site::at_cell(0, parse_cell(&pair[0])?, r.dot.lattice_constant);
            let k = Site::at_cell(1, parse_cell(&pair[1])?, r.dot.lattice_constant);
            let b = pair_breakdown(&i, &k, &r.dot, &r.rates)?;
            #[derive(Serialize)]
            struct Out {
                i: [i32; 3],
                k: [i32; 3],
                distance_nm: f64,
                detuning_rad_per_s: f64,
                coupling_rad_per_s: f64,
                broadening_rad2_per_s2: f64,
                rate_rad_per_s: f64,
            }
            let o = Out {
                i: i.cell,
                k: k.cell,
                distance_nm: i.distance(&k),
                detuning_rad_per_s: b.detuning,
                coupling_rad_per_s: b.coupling,
                broadening_rad2_per_s2: b.broadening,
                rate_rad_per_s: b.rate,
            };
            println!("{}", serde_json::to_string_pretty(&o)?);
            Ok(true)
        }
        Command::OracleCheck { out, common } => {
            let (cfg, _) = prepare(&common)?;
            let r = cfg.resolve()?;
            let cases = [
                ("dot_2T", OracleCheck {
                    electron: ElectronConfig::UP,
                    field: 2.0,
                    ..Default::default()
                }),
                ("bulk", OracleCheck::default()),
            ];
            let mut all = true;
            let mut reports = Vec::new();
            for (name, chk) in cases {
                let rep = chk.run(&r.dot, r.rates)?;
                let pass = rep.max_relative_gap <= ORACLE_TOLERANCE && rep.conservation_drift <= ORACLE_DRIFT;
                all &= pass;
                println!(
                    "[{}] {name}: max gap {:.4} through t_half = {} s, drift {:e}",
                    if pass { "PASS" } else { "FAIL" },
                    rep.max_relative_gap,
                    rep.network_half_decay,
                    rep.conservation_drift
                );
                if let Some(dir) = &out {
                    write_oracle(&dir.join(name), &rep)?;
                }
                reports.push((name, pass, rep));
            }
            if let Some(dir) = &out {
                #[derive(Serialize)]
                struct Entry<'a> {
                    case: &'a str,
                    passed: bool,
                    tolerance: f64,
                    max_relative_gap: f64,
                    network_half_decay_s: f64,
                    conservation_drift: f64,
                    sites: usize,
                    background_d_nm2_per_s: f64,
                    check: &'a OracleCheck,
                }
                let entries: Vec<Entry> = reports
                    .iter()
                    .map(|(name, pass, rep)| Entry {
                        case: name,
                        passed: *pass,
                        tolerance: ORACLE_TOLERANCE,
                        max_relative_gap: rep.max_relative_gap,
                        network_half_decay_s: rep.network_half_decay,
                        conservation_drift: rep.conservation_drift,
                        sites: rep.sites,
                        background_d_nm2_per_s: rep.background_d,
                        check: &rep.check,
                    })
                    .collect();
                output::write_json(&dir.join("report.json"), &entries)?;
            }
            Ok(all)
        }
    }
}

fn write_oracle(dir: &Path, rep: &OracleReport) -> Res<()> {
    output::write_text(&dir.join("network.csv"), &output::decay_csv(&rep.network))?;
    output::write_text(&dir.join("pde.csv"), &output::decay_csv(&rep.pde))?;
    Ok(())
}

fn parse_cell(s: &str) -> Res<[i32; 3]> {
    let parts: Vec<i32> = s
        .split(',')
        .map(|p| p.trim().parse::<i32>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("cell {s:?}: {e}"))?;
    <[i32; 3]>::try_from(parts).map_err(|_| format!("cell {s:?} needs three integers x,y,z").into())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Command {
        Cli::try_parse_from([&["overhauser"], args].concat()).unwrap().command
    }

    #[test]
    fn parses_every_subcommand() {
        assert!(matches!(parse(&["run", "--scenario", "fig1", "--out", "o"]), Command::Run { .. }));
        match parse(&["sweep", "--param", "B0", "--values", "0.1,0.2", "--seed", "3"]) {
            Command::Sweep { values, common, .. } => {
                assert_eq!(values, ["0.1", "0.2"]);
                assert_eq!(common.seed, Some(3));
            }
            _ => panic!(),
        }
        assert!(matches!(parse(&["dfield", "--out", "o", "--mesh-h", "6"]), Command::Dfield { .. }));
        assert!(matches!(parse(&["rates", "--pair", "0,0,0", "1,0,0"]), Command::Rates { .. }));
        assert!(matches!(parse(&["oracle-check", "--strict"]), Command::OracleCheck { .. }));
        assert!(Cli::try_parse_from(["overhauser", "rates", "--pair", "0,0,0"]).is_err());
        assert!(Cli::try_parse_from(["overhauser", "run", "--out", "o"]).is_err());
    }

    #[test]
    fn cells_parse_or_explain() {
        assert_eq!(parse_cell("1, -2,0").unwrap(), [1, -2, 0]);
        assert!(parse_cell("1,2").is_err());
        assert!(parse_cell("a,0,0").is_err());
    }

    #[test]
    fn rates_and_errors_dispatch() {
        assert!(dispatch(parse(&["rates", "--pair", "0,0,0", "1,0,0"])).unwrap());
        assert!(dispatch(parse(&["rates", "--pair", "0,0,0", "0,0,0"])).is_err());
        assert!(dispatch(parse(&["run", "--scenario", "fig9", "--out", "o"])).is_err());
        assert!(dispatch(parse(&["dfield", "--out", "o", "--scheme", "rk4"])).is_err());
    }

    #[test]
    fn unknown_config_key_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "[dot]\nbogus = 1\n").unwrap();
        let out = dir.path().join("o");
        let cmd = parse(&["dfield", "--out", out.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
        assert!(dispatch(cmd).is_err());
    }

    #[test]
    fn dfield_writes_csv_and_reloadable_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        assert!(dispatch(parse(&["dfield", "--out", out.to_str().unwrap(), "--mesh-h", "10"])).unwrap());
        let csv = std::fs::read_to_string(out.join("dfield.csv")).unwrap();
        assert!(csv.starts_with("x_nm,y_nm,D_nm2_per_s\n"));
        let back = load_config(&out.join("manifest.json")).unwrap();
        assert_eq!(back.mesh.h_nm, 10.0);
    }

    #[test]
    fn sweep_with_bad_field_fails_its_row() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let cmd = parse(&[
            "sweep", "--param", "B0", "--values", "0", "--mesh-h", "10", "--out", out.to_str().unwrap(),
        ]);
        assert!(!dispatch(cmd).unwrap());
    }
}
