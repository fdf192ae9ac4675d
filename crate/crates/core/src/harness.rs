//! Experiment configuration, the micro → meso and meso → macro convergence
//! studies, the space-time integral bounds on hydrodynamic runs, and the CSV
//! report format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydro::{
    check_lower_bound, check_max_principle, integrate, HydroParams, HydroState,
    HydroTrajectory, StepControl,
};
use crate::lattice::{write_snapshot, DensityField, Species, Torus};
use crate::library::{Profile, TestFunction};
use crate::rng::replica_rng;
use crate::sim::{empirical_pairing, sample_bernoulli_pair, SimParams, Simulator};
use crate::stats::clopper_pearson;
use crate::stefan::{solve_limit, FluxFunction, LimitControl};

/// Slack added to the space-time integral bounds for time quadrature.
pub const INTEGRAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Sim,
    Hydro,
    Stefan,
    Verify,
    Converge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Fixed,
    DeltaSqrtLog,
}

/// `K(N)` either fixed or `max(1, δ √log N)`; several `δ` form a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub kind: ScheduleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<f64>>,
}

/// One point of a schedule grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KRule {
    Fixed(f64),
    DeltaSqrtLog(f64),
}

impl KRule {
    pub fn kill_rate(&self, side: usize) -> f64 {
        match *self {
            KRule::Fixed(k) => k,
            KRule::DeltaSqrtLog(delta) => (delta * (side as f64).ln().sqrt()).max(1.0),
        }
    }

    pub fn label(&self) -> String {
        match self {
            KRule::Fixed(k) => format!("fixed={k}"),
            KRule::DeltaSqrtLog(d) => format!("delta={d}"),
        }
    }
}

impl Schedule {
    pub fn rules(&self) -> Result<Vec<KRule>> {
        let rules = match (self.kind, &self.k, &self.delta) {
            (ScheduleKind::Fixed, Some(k), None) => vec![KRule::Fixed(*k)],
            (ScheduleKind::DeltaSqrtLog, None, Some(d)) if !d.is_empty() => {
                d.iter().map(|&d| KRule::DeltaSqrtLog(d)).collect()
            }
            (ScheduleKind::Fixed, _, _) => {
                return Err(Error::Config("fixed schedule takes `k` and no `delta`".into()))
            }
            (ScheduleKind::DeltaSqrtLog, _, _) => {
                return Err(Error::Config(
                    "delta_sqrt_log schedule takes a nonempty `delta` list and no `k`".into(),
                ))
            }
        };
        for r in &rules {
            let v = match *r {
                KRule::Fixed(k) => k,
                KRule::DeltaSqrtLog(d) => d,
            };
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("schedule value {v} must be positive")));
            }
        }
        Ok(rules)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "one")]
    pub dim: usize,
    pub d1: f64,
    pub d2: f64,
    pub profile: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicroConfig {
    pub sides: Vec<usize>,
    pub replicas: usize,
    pub times: Vec<f64>,
    pub test_function: String,
    pub epsilon: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroConfig {
    pub sides: Vec<usize>,
    pub horizon: f64,
    #[serde(default = "default_reference_grid")]
    pub reference_grid: usize,
    #[serde(default = "default_quadrature")]
    pub quadrature_points: usize,
    #[serde(default = "default_time_samples")]
    pub time_samples: usize,
    /// Allowed relative growth of the distance from one side to the next.
    #[serde(default = "default_growth")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HydroRunConfig {
    pub sides: Vec<usize>,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub level: Level,
    pub seed: u64,
    /// Worker threads for replicas; 0 uses every core.
    #[serde(default)]
    pub parallelism: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub model: ModelConfig,
    pub schedule: Schedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub micro: Option<MicroConfig>,
    #[serde(default, rename = "macro", skip_serializing_if = "Option::is_none")]
    pub macro_: Option<MacroConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hydro: Option<HydroRunConfig>,
}

fn one() -> usize {
    1
}
fn default_alpha() -> f64 {
    0.05
}
fn default_reference_grid() -> usize {
    2048
}
fn default_quadrature() -> usize {
    8192
}
fn default_time_samples() -> usize {
    20
}
fn default_growth() -> f64 {
    0.1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// The config with every default filled in, as TOML.
    pub fn resolved(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn profile(&self, side: usize) -> Result<Profile> {
        Profile::from_name(&self.model.profile, side)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if !(1..=3).contains(&m.dim) {
            return Err(Error::Config(format!("dimension {} not in 1..=3", m.dim)));
        }
        HydroParams::new(m.d1, m.d2, 0.0).map_err(|e| Error::Config(e.to_string()))?;
        self.profile(2)?;
        self.schedule.rules()?;
        let check_sides = |sides: &[usize], what: &str| -> Result<()> {
            if sides.is_empty() || sides.iter().any(|&n| n < 2) {
                return Err(Error::Config(format!("{what}: sides must be nonempty and >= 2")));
            }
            if sides.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!("{what}: sides must increase")));
            }
            Ok(())
        };
        let positive = |v: f64, what: &str| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be positive, got {v}")))
            }
        };
        if let Some(mc) = &self.micro {
            check_sides(&mc.sides, "micro")?;
            mc.test_function.parse::<TestFunction>()?;
            positive(mc.epsilon, "micro.epsilon")?;
            if mc.replicas == 0 {
                return Err(Error::Config("micro.replicas must be positive".into()));
            }
            if !(mc.alpha > 0.0 && mc.alpha < 1.0) {
                return Err(Error::Config("micro.alpha must lie in (0, 1)".into()));
            }
            if mc.times.is_empty()
                || mc.times.iter().any(|&t| !(t >= 0.0 && t.is_finite()))
                || mc.times.windows(2).any(|w| w[0] >= w[1])
            {
                return Err(Error::Config("micro.times must be increasing and >= 0".into()));
            }
        }
        if let Some(mc) = &self.macro_ {
            check_sides(&mc.sides, "macro")?;
            positive(mc.horizon, "macro.horizon")?;
            if m.dim != 1 {
                return Err(Error::Config("the macroscopic study is one-dimensional".into()));
            }
            if mc.reference_grid < 2 || mc.quadrature_points < 2 || mc.time_samples == 0 {
                return Err(Error::Config("macro grid sizes must be >= 2".into()));
            }
            if !(mc.tolerance >= 0.0) {
                return Err(Error::Config("macro.tolerance must be >= 0".into()));
            }
        }
        if let Some(h) = &self.hydro {
            check_sides(&h.sides, "hydro")?;
            positive(h.horizon, "hydro.horizon")?;
        }
        let needed = match self.level {
            Level::Converge => self.micro.is_some() || self.macro_.is_some(),
            Level::Hydro => self.hydro.is_some(),
            Level::Sim => self.micro.is_some(),
            Level::Stefan => self.macro_.is_some(),
            Level::Verify => false,
        };
        if !needed {
            return Err(Error::Config(format!(
                "level {:?} has no matching section in the config",
                self.level
            )));
        }
        Ok(())
    }
}

/// Piecewise-constant extension of a lattice field: the value at `r` is
/// `u(x)` for the unique `x` with `r` in the half-open box of side `1/N`
/// centred at `x/N`.
#[derive(Debug, Clone, Copy)]
pub struct StepFunction<'a> {
    field: &'a DensityField,
}

pub fn embed_step(u: &DensityField) -> StepFunction<'_> {
    StepFunction { field: u }
}

impl StepFunction<'_> {
    pub fn site(&self, r: &[f64]) -> usize {
        let t = self.field.torus();
        let n = t.side();
        let coords: Vec<usize> = r
            .iter()
            .map(|&ra| ((ra * n as f64 + 0.5).floor() as i64).rem_euclid(n as i64) as usize)
            .collect();
        t.index(&coords)
    }

    pub fn eval(&self, r: &[f64]) -> f64 {
        self.field.get(self.site(r))
    }

    /// `∫_{𝕋^d}` of the step function, `N^{-d} Σ_x u(x)`.
    pub fn integral(&self) -> f64 {
        self.field.mean()
    }
}

/// A named scalar compared against a bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound,
            pass: value <= bound,
        }
    }
}

/// `∫₀ᵀ N^{-d} Σ_x u₁u₂ dt` of a run.
pub fn segregation_integral(traj: &HydroTrajectory) -> f64 {
    traj.integrals.segregation
}

/// `∫₀ᵀ N^{-d} Σ_x |∇ᴺu_i|² dt` of a run.
pub fn gradient_l2_integral(traj: &HydroTrajectory, species: Species) -> f64 {
    traj.integrals.gradient_sq[species.index()]
}

/// The segregation bound `1/K` and the gradient bounds `1/(2d_i)`, each with
/// [`INTEGRAL_TOL`] slack.
pub fn integral_checks(traj: &HydroTrajectory, params: &HydroParams) -> Vec<Check> {
    let mut out = Vec::with_capacity(3);
    let seg_bound = if params.kill_rate > 0.0 {
        1.0 / params.kill_rate
    } else {
        f64::INFINITY
    };
    out.push(Check::at_most(
        "segregation",
        segregation_integral(traj),
        seg_bound + INTEGRAL_TOL,
    ));
    for s in [Species::First, Species::Second] {
        out.push(Check::at_most(
            format!("gradient_l2_{}", s.label()),
            gradient_l2_integral(traj, s),
            1.0 / (2.0 * params.diffusivity[s.index()]) + INTEGRAL_TOL,
        ));
    }
    out
}

/// `N^{-d} Σ_x u(x) φ(x/N)`.
pub fn field_pairing(u: &DensityField, phi: &TestFunction) -> f64 {
    let t = u.torus();
    let sum: f64 = u
        .values()
        .iter()
        .enumerate()
        .map(|(x, &v)| v * phi.eval(&t.position(x)))
        .sum();
    sum / t.sites() as f64
}

/// Probability that the pairing gap exceeds `ε`, at one `(N, t, species)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Exceedance {
    pub rule: String,
    pub side: usize,
    pub kill_rate: f64,
    pub time: f64,
    pub species: Species,
    pub exceed: u64,
    pub replicas: u64,
    pub p_hat: f64,
    pub ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub rule: String,
    pub side: usize,
    pub kill_rate: f64,
    pub replica: usize,
    pub time: f64,
    pub species: Species,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegralRow {
    pub study: &'static str,
    pub rule: String,
    pub side: usize,
    pub kill_rate: f64,
    pub segregation: f64,
    pub gradient_sq: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRow {
    pub rule: String,
    pub side: usize,
    pub kill_rate: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedField {
    pub name: String,
    pub torus: Torus,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceReport {
    pub gaps: Vec<GapRow>,
    pub exceedance: Vec<Exceedance>,
    pub integrals: Vec<IntegralRow>,
    pub distances: Vec<DistanceRow>,
    pub checks: Vec<Check>,
    pub snapshots: Vec<NamedField>,
}

impl ConvergenceReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    fn absorb(&mut self, other: ConvergenceReport) {
        self.gaps.extend(other.gaps);
        self.exceedance.extend(other.exceedance);
        self.integrals.extend(other.integrals);
        self.distances.extend(other.distances);
        self.checks.extend(other.checks);
        self.snapshots.extend(other.snapshots);
    }

    /// Long-format CSV, one row per recorded quantity.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,rule,n,k,replica,time,species,value,lower,upper,pass\n");
        for g in &self.gaps {
            let _ = writeln!(
                s,
                "gap,{},{},{},{},{},{},{},,,",
                g.rule,
                g.side,
                g.kill_rate,
                g.replica,
                g.time,
                g.species.label(),
                g.gap
            );
        }
        for e in &self.exceedance {
            let _ = writeln!(
                s,
                "exceedance,{},{},{},,{},{},{},{},{},",
                e.rule,
                e.side,
                e.kill_rate,
                e.time,
                e.species.label(),
                e.p_hat,
                e.ci.0,
                e.ci.1
            );
        }
        for i in &self.integrals {
            let _ = writeln!(
                s,
                "segregation:{},{},{},{},,,,{},,,",
                i.study, i.rule, i.side, i.kill_rate, i.segregation
            );
            for (sp, g) in i.gradient_sq.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "gradient_l2:{},{},{},{},,,{},{},,,",
                    i.study,
                    i.rule,
                    i.side,
                    i.kill_rate,
                    sp + 1,
                    g
                );
            }
        }
        for d in &self.distances {
            let _ = writeln!(s, "l2,{},{},{},,,,{},,,", d.rule, d.side, d.kill_rate, d.l2);
        }
        for c in &self.checks {
            let _ = writeln!(s, "check:{},,,,,,,{},,{},{}", c.name, c.value, c.bound, c.pass);
        }
        s
    }

    /// Writes `report.csv`, `config.resolved` and `snapshots/*.txt` into `dir`.
    pub fn write(&self, config: &ExperimentConfig, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("snapshots"))?;
        fs::write(dir.join("report.csv"), self.to_csv())?;
        fs::write(dir.join("config.resolved"), config.resolved()?)?;
        for f in &self.snapshots {
            let mut buf = Vec::new();
            write_snapshot(&mut buf, &f.torus, &f.name, &f.values)?;
            fs::write(dir.join("snapshots").join(format!("{}.txt", f.name)), buf)?;
        }
        Ok(())
    }
}

fn stream_seed(seed: u64, rule: usize, side: usize) -> u64 {
    seed ^ ((rule as u64) << 48) ^ (side as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn hydro_state(profile: &Profile, torus: Torus) -> Result<HydroState> {
    let [u1, u2] = profile.sample(torus);
    HydroState::new(u1, u2)
}

/// For every side and schedule point: `R` replicas of the particle system
/// and one hydrodynamic run from the same initial densities, compared through
/// `⟨·, φ⟩` at each observation time. Adds a trend check that the
/// exceedance frequency at the next side does not exceed the upper
/// confidence limit at the current one.
pub fn converge_microscopic(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    let mc = config
        .micro
        .as_ref()
        .ok_or_else(|| Error::Config("missing [micro] section".into()))?;
    let phi: TestFunction = mc.test_function.parse()?;
    let m = &config.model;
    let t_end = *mc.times.last().expect("validated nonempty");
    let pool = pool(config.parallelism)?;
    let mut report = ConvergenceReport::default();

    for (ri, rule) in config.schedule.rules()?.iter().enumerate() {
        let label = rule.label();
        let mut previous: Option<Vec<Exceedance>> = None;
        for &side in &mc.sides {
            let k = rule.kill_rate(side);
            let torus = Torus::new(m.dim, side)?;
            let profile = config.profile(side)?;
            let state0 = hydro_state(&profile, torus)?;
            let hp = HydroParams::new(m.d1, m.d2, k)?;
            let traj = integrate(&state0, t_end, &hp, &StepControl::default(), &mc.times)?;
            record_hydro(&mut report, "micro", &label, side, &traj, &hp);
            let mean: Vec<[f64; 2]> = traj
                .states
                .iter()
                .map(|s| [field_pairing(&s.u[0], &phi), field_pairing(&s.u[1], &phi)])
                .collect();

            let sp = SimParams::new(m.d1, m.d2, k)?;
            let seed = stream_seed(config.seed, ri, side);
            let runs: Vec<Result<Vec<[f64; 2]>>> = pool.install(|| {
                (0..mc.replicas)
                    .into_par_iter()
                    .map(|r| {
                        let mut rng = replica_rng(seed, r as u64);
                        let c0 = sample_bernoulli_pair(&state0.u[0], &state0.u[1], &mut rng)?;
                        let mut sim = Simulator::new(c0, sp)?;
                        let mut seen = Vec::with_capacity(mc.times.len());
                        let f = |r: &[f64]| phi.eval(r);
                        sim.run(
                            t_end,
                            &mc.times,
                            |_, c| {
                                seen.push([
                                    empirical_pairing(c, f, Species::First),
                                    empirical_pairing(c, f, Species::Second),
                                ])
                            },
                            &mut rng,
                            None,
                        )?;
                        Ok(seen)
                    })
                    .collect()
            });
            let runs: Vec<Vec<[f64; 2]>> = runs.into_iter().collect::<Result<_>>()?;

            let mut here = Vec::new();
            for (ti, &time) in mc.times.iter().enumerate() {
                for s in [Species::First, Species::Second] {
                    let mut exceed = 0u64;
                    for (r, run) in runs.iter().enumerate() {
                        let gap = (run[ti][s.index()] - mean[ti][s.index()]).abs();
                        if gap > mc.epsilon {
                            exceed += 1;
                        }
                        report.gaps.push(GapRow {
                            rule: label.clone(),
                            side,
                            kill_rate: k,
                            replica: r,
                            time,
                            species: s,
                            gap,
                        });
                    }
                    let n = mc.replicas as u64;
                    here.push(Exceedance {
                        rule: label.clone(),
                        side,
                        kill_rate: k,
                        time,
                        species: s,
                        exceed,
                        replicas: n,
                        p_hat: exceed as f64 / n as f64,
                        ci: clopper_pearson(exceed, n, mc.alpha),
                    });
                }
            }
            if let Some(prev) = &previous {
                for (a, b) in prev.iter().zip(&here) {
                    report.checks.push(Check::at_most(
                        format!(
                            "exceedance_trend[{label},n={},t={},species={}]",
                            b.side,
                            b.time,
                            b.species.label()
                        ),
                        b.p_hat,
                        a.ci.1,
                    ));
                }
            }
            report.exceedance.extend(here.iter().cloned());
            previous = Some(here);
        }
    }
    Ok(report)
}

fn record_hydro(
    report: &mut ConvergenceReport,
    study: &'static str,
    label: &str,
    side: usize,
    traj: &HydroTrajectory,
    params: &HydroParams,
) {
    report.integrals.push(IntegralRow {
        study,
        rule: label.to_string(),
        side,
        kill_rate: params.kill_rate,
        segregation: traj.integrals.segregation,
        gradient_sq: traj.integrals.gradient_sq,
    });
    for mut c in integral_checks(traj, params) {
        c.name = format!("{}[{study},{label},n={side}]", c.name);
        report.checks.push(c);
    }
    if let Some(last) = traj.states.last() {
        for (i, u) in last.u.iter().enumerate() {
            report.snapshots.push(NamedField {
                name: format!("{study}_{}_n{side}_u{}", label.replace('=', ""), i + 1),
                torus: *u.torus(),
                values: u.values().to_vec(),
            });
        }
    }
}

/// Periodic linear interpolation of one-dimensional grid data at `r`.
pub fn interpolate_periodic(values: &[f64], r: f64) -> f64 {
    let m = values.len();
    let s = r.rem_euclid(1.0) * m as f64;
    let j = s.floor();
    let f = s - j;
    let j = j as usize % m;
    values[j] * (1.0 - f) + values[(j + 1) % m] * f
}

/// `(Q^{-1} Σ_q (a(r_q) − b(r_q))²)^{1/2}` on the midpoints `r_q = (q + ½)/Q`.
pub fn l2_distance(a: impl Fn(f64) -> f64, b: impl Fn(f64) -> f64, points: usize) -> f64 {
    let q = points as f64;
    let sum: f64 = (0..points)
        .map(|i| {
            let r = (i as f64 + 0.5) / q;
            let d = a(r) - b(r);
            d * d
        })
        .sum();
    (sum / q).sqrt()
}

/// Distance in `L²([0,T] × 𝕋)` between the embedded `w^N = u₁ − u₂` of the
/// hydrodynamic system and a Stefan reference on a fine grid, for each side.
/// Adds a check that each distance is at most `(1 + tolerance)` times the
/// previous one.
pub fn converge_macroscopic(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    let mc = config
        .macro_
        .as_ref()
        .ok_or_else(|| Error::Config("missing [macro] section".into()))?;
    let m = &config.model;
    let times: Vec<f64> = (0..=mc.time_samples)
        .map(|i| mc.horizon * i as f64 / mc.time_samples as f64)
        .collect();
    let mut report = ConvergenceReport::default();

    let grid = Torus::new(1, mc.reference_grid)?;
    let profile = config.profile(mc.reference_grid)?;
    let w0 = DensityField::from_profile(grid, |r| profile.signed(r));
    let flux = FluxFunction::new(m.d1, m.d2)?;
    let reference = solve_limit(&w0, mc.horizon, &flux, &LimitControl::default(), &times)?;
    let ref_mass: Vec<f64> = reference.states.iter().map(|w| w.mean()).collect();
    let drift = ref_mass.iter().map(|v| (v - ref_mass[0]).abs()).fold(0.0, f64::max);
    report
        .checks
        .push(Check::at_most("reference_mass_drift", drift, 1e-12));
    if let Some(last) = reference.states.last() {
        report.snapshots.push(NamedField {
            name: format!("macro_reference_m{}", mc.reference_grid),
            torus: grid,
            values: last.values().to_vec(),
        });
    }

    for rule in config.schedule.rules()? {
        let label = rule.label();
        let mut previous: Option<f64> = None;
        for &side in &mc.sides {
            let k = rule.kill_rate(side);
            let torus = Torus::new(1, side)?;
            let state0 = hydro_state(&config.profile(side)?, torus)?;
            let hp = HydroParams::new(m.d1, m.d2, k)?;
            let traj = integrate(&state0, mc.horizon, &hp, &StepControl::default(), &times)?;
            record_hydro(&mut report, "macro", &label, side, &traj, &hp);

            let mut sq = Vec::with_capacity(times.len());
            let mut mass_drift: f64 = 0.0;
            let mass0 = state0.signed_mass() / side as f64;
            for (s, wref) in traj.states.iter().zip(&reference.states) {
                let w = DensityField::new(
                    torus,
                    s.u[0]
                        .values()
                        .iter()
                        .zip(s.u[1].values())
                        .map(|(a, b)| a - b)
                        .collect(),
                )?;
                mass_drift = mass_drift.max((s.signed_mass() / side as f64 - mass0).abs());
                let e = embed_step(&w);
                let d = l2_distance(
                    |r| e.eval(&[r]),
                    |r| interpolate_periodic(wref.values(), r),
                    mc.quadrature_points,
                );
                sq.push(d * d);
            }
            let dt = mc.horizon / mc.time_samples as f64;
            let integral: f64 = sq
                .windows(2)
                .map(|p| 0.5 * dt * (p[0] + p[1]))
                .sum::<f64>();
            let l2 = integral.sqrt();
            report.checks.push(Check::at_most(
                format!("hydro_mass_drift[{label},n={side}]"),
                mass_drift,
                1e-12,
            ));
            if let Some(prev) = previous {
                report.checks.push(Check::at_most(
                    format!("distance_trend[{label},n={side}]"),
                    l2,
                    (1.0 + mc.tolerance) * prev,
                ));
            }
            report.distances.push(DistanceRow {
                rule: label.clone(),
                side,
                kill_rate: k,
                l2,
            });
            previous = Some(l2);
        }
    }
    Ok(report)
}

/// Hydrodynamic runs with every a-priori bound checked: values in
/// `[0, max u(0)]`, the lower bound `min u(0) e^{−Kt}` and the integral bounds.
pub fn hydro_bounds(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    let hc = config
        .hydro
        .as_ref()
        .ok_or_else(|| Error::Config("missing [hydro] section".into()))?;
    let m = &config.model;
    let mut report = ConvergenceReport::default();
    let times: Vec<f64> = (0..=20).map(|i| hc.horizon * i as f64 / 20.0).collect();
    for rule in config.schedule.rules()? {
        let label = rule.label();
        for &side in &hc.sides {
            let k = rule.kill_rate(side);
            let torus = Torus::new(m.dim, side)?;
            let state0 = hydro_state(&config.profile(side)?, torus)?;
            let hp = HydroParams::new(m.d1, m.d2, k)?;
            let traj = integrate(&state0, hc.horizon, &hp, &StepControl::default(), &times)?;
            record_hydro(&mut report, "hydro", &label, side, &traj, &hp);
            let c = state0.u[0].max().max(state0.u[1].max());
            let lo = state0.u[0].min().min(state0.u[1].min());
            let mp = check_max_principle(&traj.states, c);
            let lb = check_lower_bound(&traj.states, lo, k);
            report.checks.push(Check::at_most(
                format!("max_principle[{label},n={side}]"),
                mp.worst_violation,
                crate::hydro::BOUND_TOL,
            ));
            report.checks.push(Check::at_most(
                format!("lower_bound[{label},n={side}]"),
                lb.worst_violation,
                crate::hydro::BOUND_TOL,
            ));
        }
    }
    Ok(report)
}

/// Runs whatever the config's level calls for.
pub fn run(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    let mut report = ConvergenceReport::default();
    match config.level {
        Level::Converge => {
            if config.micro.is_some() {
                report.absorb(converge_microscopic(config)?);
            }
            if config.macro_.is_some() {
                report.absorb(converge_macroscopic(config)?);
            }
        }
        Level::Sim => report.absorb(converge_microscopic(config)?),
        Level::Stefan => report.absorb(converge_macroscopic(config)?),
        Level::Hydro => report.absorb(hydro_bounds(config)?),
        Level::Verify => {
            return Err(Error::Config(
                "the verify level runs from the `verify` subcommand".into(),
            ))
        }
    }
    Ok(report)
}

/// Identity suites runnable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Adjoint,
    VDecomp,
    EntropyIneq,
    Ibp,
    Ldp,
    Concentration,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "adjoint" => Suite::Adjoint,
            "vdecomp" => Suite::VDecomp,
            "entropy-ineq" => Suite::EntropyIneq,
            "ibp" => Suite::Ibp,
            "ldp" => Suite::Ldp,
            "concentration" => Suite::Concentration,
            other => return Err(Error::Config(format!("unknown suite {other:?}"))),
        })
    }
}

impl std::fmt::Display for Suite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Suite::Adjoint => "adjoint",
            Suite::VDecomp => "vdecomp",
            Suite::EntropyIneq => "entropy-ineq",
            Suite::Ibp => "ibp",
            Suite::Ldp => "ldp",
            Suite::Concentration => "concentration",
        })
    }
}

/// One verified instance. For identities `value` is a defect that must stay
/// below `bound`; for inequalities it is the quantity compared with `bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyRow {
    pub suite: Suite,
    pub instance: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

pub fn verify_csv(rows: &[VerifyRow]) -> String {
    let mut s = String::from("suite,instance_id,defect_or_margin,bound,pass\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.suite, r.instance, r.value, r.bound, r.pass);
    }
    s
}

/// Runs one suite on the ring of `side` sites with kill rate `kill_rate`.
///
/// `concentration` reads `side` as the largest number of variables.
pub fn verify_suite(suite: Suite, side: usize, kill_rate: f64, seed: u64) -> Result<Vec<VerifyRow>> {
    use crate::flow::{concentration_exact, kappa, TwoPoint};
    use crate::ode::Tolerance;
    use crate::oracle::{
        adjoint_one, build_generator, enumerate_states, ldp_check, random_ibp_instance,
        verify_entropy_inequality, verify_ibp, verify_v_decomposition, ProductMeasure,
    };
    use rand::Rng;

    let mut rng = replica_rng(seed, 0);
    let mut rows = Vec::new();
    let mut row = |instance: String, value: f64, bound: f64, pass: bool| {
        rows.push(VerifyRow {
            suite,
            instance,
            value,
            bound,
            pass,
        })
    };
    let random_measure = |space: &crate::oracle::StateSpace, rng: &mut crate::rng::SimRng, lo: f64, hi: f64| {
        let t = *space.torus();
        let mut draw = || {
            DensityField::new(t, (0..t.sites()).map(|_| rng.random_range(lo..hi)).collect())
        };
        ProductMeasure::new(draw()?, draw()?)
    };
    match suite {
        Suite::Adjoint => {
            let space = enumerate_states(side)?;
            let g = build_generator(&space, &SimParams::new(1.0, 1.0, kill_rate)?);
            for i in 0..25 {
                let nu = random_measure(&space, &mut rng, 0.05, 0.95)?.weights(&space);
                let f: Vec<f64> = (0..space.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                // ∫ L f dν = ∫ f L^{*,ν}1 dν
                let lf = g.apply(&f);
                let star = adjoint_one(&g, &nu);
                let lhs: f64 = lf.iter().zip(&nu).map(|(a, b)| a * b).sum();
                let rhs: f64 = f.iter().zip(&star).zip(&nu).map(|((a, b), c)| a * b * c).sum();
                let d = (lhs - rhs).abs();
                row(i.to_string(), d, 1e-12, d <= 1e-12);
            }
            let nu = ProductMeasure::constant(*space.torus(), 0.3, 0.6)?.weights(&space);
            let g0 = build_generator(&space, &SimParams::new(1.0, 1.0, 0.0)?);
            let r = adjoint_one(&g0, &nu).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            row("stationary".into(), r, 1e-13, r <= 1e-13);
            let rs = g.max_row_sum();
            row("row_sums".into(), rs, 1e-13, rs <= 1e-13);
        }
        Suite::VDecomp => {
            let space = enumerate_states(side)?;
            let g = build_generator(&space, &SimParams::new(1.0, 0.7, kill_rate)?);
            for i in 0..25 {
                let nu = random_measure(&space, &mut rng, 0.05, 0.95)?;
                let d = verify_v_decomposition(&g, &nu)?;
                row(i.to_string(), d, 1e-10, d <= 1e-10);
            }
        }
        Suite::EntropyIneq => {
            let space = enumerate_states(side)?;
            let g = build_generator(&space, &SimParams::new(1.0, 1.0, kill_rate)?);
            let nu = random_measure(&space, &mut rng, 0.2, 0.8)?;
            let u0 = [
                nu.density(Species::First).clone(),
                nu.density(Species::Second).clone(),
            ];
            let times: Vec<f64> = (1..=50).map(|k| k as f64 / 50.0).collect();
            let tol = Tolerance {
                rtol: 1e-12,
                atol: 1e-16,
            };
            for s in verify_entropy_inequality(&g, &u0, None, &times, 1e-4, tol)? {
                row(format!("t={}", s.t), s.margin, -1e-6, s.margin >= -1e-6);
            }
        }
        Suite::Ibp => {
            let space = enumerate_states(side)?;
            for i in 0..50 {
                let nu = random_measure(&space, &mut rng, 0.1, 0.9)?;
                let x = i % side;
                let y = (x + 1) % side;
                let (h, f) = random_ibp_instance(&space, &nu, x, y, true, &mut rng);
                let r = verify_ibp(&space, &nu, &h, &f, x, y)?;
                row(format!("{i}:identity"), r.defect(), 1e-12, r.defect() <= 1e-12);
                row(format!("{i}:remainder"), r.r1.abs(), r.bound, r.within_bound());
            }
        }
        Suite::Ldp => {
            let sides = [side, 2 * side, 4 * side];
            for p in ldp_check(|_| 0.5, TestFunction::One, 0.1, 20_000, &sides, seed)? {
                let exact = p.exact.expect("binomial case");
                let inside = p.ci.0 <= exact && exact <= p.ci.1;
                row(
                    format!("n={}", p.side),
                    p.neg_log_p / p.side as f64,
                    -exact.ln() / p.side as f64,
                    inside && p.neg_log_p > 0.0,
                );
            }
        }
        Suite::Concentration => {
            for n in 1..=side.min(20) {
                let vars: Vec<TwoPoint> = (0..n)
                    .map(|_| {
                        let lo = rng.random_range(-1.0..1.0);
                        TwoPoint {
                            lo,
                            hi: lo + rng.random_range(0.0..1.5),
                            p_hi: rng.random_range(0.0..=1.0),
                        }
                    })
                    .collect();
                let k = kappa(&vars);
                for frac in [0.25, 0.5, 0.75, 1.0] {
                    let gamma = if k > 0.0 { frac / k } else { 0.0 };
                    let r = concentration_exact(&vars, gamma)?;
                    row(format!("n={n},gamma={gamma}"), r.lhs, r.rhs, r.holds());
                }
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
level = "converge"
seed = 11

[model]
d1 = 1.0
d2 = 1.0
profile = "sine"

[schedule]
kind = "delta_sqrt_log"
delta = [1.0]

[micro]
sides = [16, 32]
replicas = 8
times = [0.0, 0.01]
test_function = "cos1"
epsilon = 0.05
"#;

    #[test]
    fn schedule_values() {
        let r = KRule::DeltaSqrtLog(1.0);
        assert_eq!(r.kill_rate(2), 1.0);
        assert!((r.kill_rate(64) - 64f64.ln().sqrt()).abs() < 1e-15);
        assert_eq!(KRule::Fixed(3.0).kill_rate(1000), 3.0);
    }

    #[test]
    fn config_round_trips_through_resolved_form() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.model.dim, 1);
        let again = ExperimentConfig::from_toml(&cfg.resolved().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let bad = SAMPLE.replace("epsilon = 0.05", "epsilon = 0.05\nepsilom = 0.1");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let bad = SAMPLE.replace("seed = 11", "seed = 11\nreplica = 3");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn unknown_names_are_errors() {
        assert!(ExperimentConfig::from_toml(&SAMPLE.replace("\"sine\"", "\"saw\"")).is_err());
        assert!(ExperimentConfig::from_toml(&SAMPLE.replace("cos1", "cosh")).is_err());
        let bad = SAMPLE.replace("kind = \"delta_sqrt_log\"", "kind = \"fixed\"");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn embedding_conventions() {
        let t = Torus::new(1, 8).unwrap();
        let u = DensityField::new(t, (0..8).map(|x| x as f64).collect()).unwrap();
        let e = embed_step(&u);
        for x in 0..8 {
            assert_eq!(e.eval(&[x as f64 / 8.0]), x as f64);
        }
        // box of site 0 is [−1/16, 1/16)
        assert_eq!(e.eval(&[0.999]), 0.0);
        assert_eq!(e.eval(&[1.0 / 16.0]), 1.0);
        assert_eq!(e.eval(&[1.0 / 16.0 - 1e-9]), 0.0);
        let fine = l2_distance(|r| e.eval(&[r]), |_| 0.0, 8 * 64).powi(2);
        let exact = (0..8).map(|x| (x * x) as f64).sum::<f64>() / 8.0;
        assert!((fine - exact).abs() < 1e-12);
        assert!((e.integral() - 3.5).abs() < 1e-15);
    }

    #[test]
    fn embedding_in_two_dimensions() {
        let t = Torus::new(2, 4).unwrap();
        let u = DensityField::new(t, (0..16).map(|x| x as f64).collect()).unwrap();
        let e = embed_step(&u);
        assert_eq!(e.eval(&[0.25, 0.5]), u.get(t.index(&[1, 2])));
        assert_eq!(e.eval(&[0.9, 0.1]), u.get(t.index(&[0, 0])));
    }

    #[test]
    fn interpolation_is_exact_for_linear_data_away_from_the_seam() {
        let v: Vec<f64> = (0..10).map(|j| j as f64 / 10.0).collect();
        assert!((interpolate_periodic(&v, 0.25) - 0.25).abs() < 1e-15);
        // wraps from the last point back to the first
        assert!((interpolate_periodic(&v, 0.95) - 0.45).abs() < 1e-15);
    }

    #[test]
    fn integrals_vanish_in_trivial_cases() {
        let t = Torus::new(1, 32).unwrap();
        let hp = HydroParams::new(2.0, 1.0, 5.0).unwrap();
        let u1 = DensityField::from_profile(t, |r| 0.5 + 0.3 * (2.0 * std::f64::consts::PI * r[0]).sin());
        let s = HydroState::new(u1, DensityField::constant(t, 0.0)).unwrap();
        let traj = integrate(&s, 0.05, &hp, &StepControl::default(), &[]).unwrap();
        assert_eq!(segregation_integral(&traj), 0.0);
        let checks = integral_checks(&traj, &hp);
        assert!(checks.iter().all(|c| c.pass));
        assert!((checks[1].bound - 0.25 - INTEGRAL_TOL).abs() < 1e-15);

        let c = HydroState::new(DensityField::constant(t, 0.3), DensityField::constant(t, 0.2)).unwrap();
        let traj = integrate(&c, 0.05, &hp, &StepControl::default(), &[]).unwrap();
        assert_eq!(gradient_l2_integral(&traj, Species::First), 0.0);
        assert!(segregation_integral(&traj) > 0.0);
    }

    #[test]
    fn verify_suites_pass_on_small_rings() {
        for suite in ["adjoint", "vdecomp", "ibp", "concentration"] {
            let rows = verify_suite(suite.parse().unwrap(), 4, 1.5, 3).unwrap();
            assert!(!rows.is_empty());
            assert!(rows.iter().all(|r| r.pass), "{suite}: {rows:?}");
        }
        assert!("adjoin".parse::<Suite>().is_err());
        let csv = verify_csv(&verify_suite(Suite::VDecomp, 3, 0.0, 1).unwrap());
        assert!(csv.starts_with("suite,instance_id,defect_or_margin,bound,pass\n"));
        assert_eq!(csv.lines().count(), 26);
    }

    #[test]
    fn microscopic_study_is_reproducible() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        let a = converge_microscopic(&cfg).unwrap();
        let b = converge_microscopic(&cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.gaps.len(), 2 * 2 * 2 * 8);
        assert!(a.gaps.iter().all(|g| g.gap.is_finite() && g.gap >= 0.0));
    }
}
