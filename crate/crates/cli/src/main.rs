use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use kawastefan::flow::{build_flow, build_kernels, energy_scale, FlowTarget};
use kawastefan::harness::{self, integral_checks, verify_csv, verify_suite, ExperimentConfig, Suite};
use kawastefan::hydro::{check_lower_bound, check_max_principle, integrate, HydroParams, HydroState, StepControl};
use kawastefan::lattice::write_snapshot;
use kawastefan::library::{Profile, TestFunction};
use kawastefan::rng::replica_rng;
use kawastefan::sim::{empirical_pairing, sample_bernoulli_pair, SimParams, Simulator};
use kawastefan::stefan::{solve_limit, weak_residual, FluxFunction, LimitControl, WeakTestFunction};
use kawastefan::{DensityField, Species, Torus};

#[derive(Parser)]
#[command(name = "kawastefan", version, about = "Kawasaki dynamics with annihilation, its hydrodynamic system and the Stefan limit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replicas of the particle system, observed through a test function.
    Simulate {
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long = "N")]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        d1: f64,
        #[arg(long, default_value_t = 1.0)]
        d2: f64,
        #[arg(long = "K")]
        k: f64,
        #[arg(long = "T")]
        t: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        replicas: usize,
        /// Comma-separated macroscopic times.
        #[arg(long, value_delimiter = ',')]
        observe_times: Vec<f64>,
        #[arg(long, default_value = "one")]
        phi: String,
        #[arg(long, default_value = "sine")]
        profile: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// The discretized hydrodynamic system; one snapshot per species and output time.
    Hydro {
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long = "N")]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        d1: f64,
        #[arg(long, default_value_t = 1.0)]
        d2: f64,
        #[arg(long = "K")]
        k: f64,
        #[arg(long = "T")]
        t: f64,
        #[arg(long, default_value = "sine")]
        profile: String,
        /// Number of equally spaced output times after t = 0.
        #[arg(long, default_value_t = 10)]
        outputs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// The limiting equation; final snapshot plus a weak-residual report.
    Stefan {
        #[arg(long, default_value_t = 1)]
        d: usize,
        /// Grid sizes; each gets its own residual rows.
        #[arg(long = "M", value_delimiter = ',')]
        m: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        d1: f64,
        #[arg(long, default_value_t = 1.0)]
        d2: f64,
        #[arg(long = "T")]
        t: f64,
        #[arg(long, default_value = "signed-sine")]
        profile: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Flow from a point mass to an averaging kernel on a box.
    Flow {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        ell: usize,
        #[arg(long, value_enum, default_value_t = Report::Energy)]
        report: Report,
        #[arg(long, value_enum, default_value_t = Target::Double)]
        target: Target,
        /// Where the uniform block starts inside the box.
        #[arg(long, default_value_t = 0)]
        offset: usize,
        /// Writes `x_index,direction,value` for every box edge.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Exact identity and inequality suites.
    Verify {
        #[arg(long)]
        suite: String,
        #[arg(long = "N", default_value_t = 4)]
        n: usize,
        #[arg(long = "K", default_value_t = 1.0)]
        k: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: PathBuf,
    },
    /// Config-driven experiments; exits nonzero if any asserted bound fails.
    Converge {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Report {
    Energy,
    Divergence,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Single,
    Double,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn snapshot(path: &Path, torus: &Torus, label: &str, values: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    write_snapshot(&mut w, torus, label, values)?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate {
            d,
            n,
            d1,
            d2,
            k,
            t,
            seed,
            replicas,
            mut observe_times,
            phi,
            profile,
            out,
        } => {
            let torus = Torus::new(d, n)?;
            let phi: TestFunction = phi.parse()?;
            let [u1, u2] = Profile::from_name(&profile, n)?.sample(torus);
            let params = SimParams::new(d1, d2, k)?;
            if observe_times.is_empty() {
                observe_times.push(t);
            }
            if observe_times.windows(2).any(|w| w[0] > w[1]) {
                bail!("observe times must be sorted");
            }
            let mut w = create(&out)?;
            writeln!(w, "time,species,pairing_value,replica")?;
            for r in 0..replicas {
                let mut rng = replica_rng(seed, r as u64);
                let c0 = sample_bernoulli_pair(&u1, &u2, &mut rng)?;
                let mut sim = Simulator::new(c0, params)?;
                let mut rows = Vec::new();
                let f = |x: &[f64]| phi.eval(x);
                sim.run(
                    t,
                    &observe_times,
                    |time, c| {
                        for s in Species::BOTH {
                            rows.push((time, s.label(), empirical_pairing(c, f, s)));
                        }
                    },
                    &mut rng,
                    None,
                )?;
                for (time, s, v) in rows {
                    writeln!(w, "{time},{s},{v},{r}")?;
                }
            }
            w.flush()?;
            Ok(true)
        }
        Command::Hydro {
            d,
            n,
            d1,
            d2,
            k,
            t,
            profile,
            outputs,
            out,
        } => {
            let torus = Torus::new(d, n)?;
            let [u1, u2] = Profile::from_name(&profile, n)?.sample(torus);
            let s0 = HydroState::new(u1, u2)?;
            let params = HydroParams::new(d1, d2, k)?;
            let steps = outputs.max(1);
            let times: Vec<f64> = (0..=steps).map(|i| t * i as f64 / steps as f64).collect();
            let traj = integrate(&s0, t, &params, &StepControl::default(), &times)?;
            fs::create_dir_all(&out)?;
            for (i, s) in traj.states.iter().enumerate() {
                for sp in Species::BOTH {
                    let label = format!("u{}", sp.label());
                    let path = out.join(format!("hydro_{i:04}_{label}.txt"));
                    snapshot(&path, &torus, &label, s.u[sp.index()].values())?;
                }
            }
            let c = s0.u[0].max().max(s0.u[1].max());
            let lo = s0.u[0].min().min(s0.u[1].min());
            let mut ok = true;
            let mp = check_max_principle(&traj.states, c);
            let lb = check_lower_bound(&traj.states, lo, k);
            println!("max principle: worst violation {:e}", mp.worst_violation);
            println!("lower bound: worst violation {:e}", lb.worst_violation);
            ok &= mp.holds && lb.holds;
            for check in integral_checks(&traj, &params) {
                println!("{}: {} (bound {})", check.name, check.value, check.bound);
                ok &= check.pass;
            }
            println!("{} steps of {:e}", traj.steps, traj.dt);
            Ok(ok)
        }
        Command::Stefan {
            d,
            m,
            d1,
            d2,
            t,
            profile,
            out,
        } => {
            if m.is_empty() {
                bail!("give at least one grid size with --M");
            }
            let flux = FluxFunction::new(d1, d2)?;
            fs::create_dir_all(&out)?;
            let mut report = create(&out.join("residual.csv"))?;
            writeln!(report, "psi_id,M,dt,residual")?;
            for &size in &m {
                let grid = Torus::new(d, size)?;
                let p = Profile::from_name(&profile, size)?;
                let w0 = DensityField::from_profile(grid, |r| p.signed(r));
                let control = LimitControl::default();
                let traj = solve_limit(&w0, t, &flux, &control, &[t])?;
                snapshot(
                    &out.join(format!("stefan_m{size}.txt")),
                    &grid,
                    "w",
                    traj.states[0].values(),
                )?;
                for (psi, r) in weak_residual(&w0, t, &flux, &control, WeakTestFunction::family(d))? {
                    writeln!(report, "{psi},{size},{},{r}", traj.dt)?;
                }
            }
            report.flush()?;
            Ok(true)
        }
        Command::Flow {
            d,
            ell,
            report,
            target,
            offset,
            dump,
        } => {
            let kernel = build_kernels(ell, d, offset)?;
            let target = match target {
                Target::Single => FlowTarget::Single,
                Target::Double => FlowTarget::Double,
            };
            let flow = build_flow(&kernel, target)?;
            match report {
                Report::Energy => {
                    let e = flow.energy();
                    println!("energy {e}");
                    println!("energy/scale {}", e / energy_scale(d, ell));
                }
                Report::Divergence => println!("divergence defect {:e}", flow.divergence_defect()),
            }
            if let Some(path) = dump {
                let mut w = create(&path)?;
                flow.write_dump(&mut w)?;
                w.flush()?;
            }
            Ok(true)
        }
        Command::Verify {
            suite,
            n,
            k,
            seed,
            report,
        } => {
            let suite: Suite = suite.parse()?;
            let rows = verify_suite(suite, n, k, seed)?;
            let mut w = create(&report)?;
            w.write_all(verify_csv(&rows).as_bytes())?;
            w.flush()?;
            let failed = rows.iter().filter(|r| !r.pass).count();
            println!("{suite}: {} instances, {failed} failed", rows.len());
            Ok(failed == 0)
        }
        Command::Converge { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out
                .or_else(|| cfg.output.as_ref().map(PathBuf::from))
                .context("no output directory: pass --out or set `output` in the config")?;
            let report = harness::run(&cfg)?;
            report.write(&cfg, &dir)?;
            for c in report.checks.iter().filter(|c| !c.pass) {
                eprintln!("bound failed: {} = {} > {}", c.name, c.value, c.bound);
            }
            println!(
                "{} checks, {} failed; report in {}",
                report.checks.len(),
                report.checks.iter().filter(|c| !c.pass).count(),
                dir.display()
            );
            Ok(report.all_passed())
        }
    }
}
