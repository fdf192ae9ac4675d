//! Exact continuous-time simulation of the two-species exclusion process
//! with annihilation, generated by `N² L₀ + K L_G`.
//!
//! Species `i` particles exchange across a bond at rate `N² d_i` and a doubly
//! occupied site is emptied of both particles at rate `K`. Only exchanges
//! across discrepant bonds (one end occupied, the other empty) change the
//! state, so the enabled-event sets are:
//!
//! * per species, the set of discrepant bonds;
//! * the set of doubly occupied sites.
//!
//! Both are kept as indexed sets updated in `O(d)` per event, so an event
//! costs `O(d)` regardless of the lattice size.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::lattice::{DensityField, PairConfig, Species, Torus};
use crate::rng::SimRng;

/// Rates of the particle system. Time is macroscopic: `N²` is applied to the
/// jump rates internally.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub jump_rates: [f64; 2],
    pub kill_rate: f64,
}

impl SimParams {
    pub fn new(d1: f64, d2: f64, kill_rate: f64) -> Result<Self> {
        if !(d1 > 0.0 && d2 > 0.0 && d1.is_finite() && d2.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "jump rates must be positive, got d1={d1}, d2={d2}"
            )));
        }
        if !(kill_rate >= 0.0 && kill_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kill rate must be nonnegative, got {kill_rate}"
            )));
        }
        Ok(Self {
            jump_rates: [d1, d2],
            kill_rate,
        })
    }
}

/// Independent Bernoulli occupations with `P(σ_{i,x} = 1) = u_i(x)`.
pub fn sample_bernoulli_pair(
    u1: &DensityField,
    u2: &DensityField,
    rng: &mut SimRng,
) -> Result<PairConfig> {
    if u1.torus() != u2.torus() {
        return Err(Error::InvalidParameter("density fields live on different tori".into()));
    }
    u1.check_range(0.0, 1.0)?;
    u2.check_range(0.0, 1.0)?;
    let mut draw = |u: &DensityField| -> Vec<u8> {
        u.values()
            .iter()
            .map(|&p| (rng.random::<f64>() < p) as u8)
            .collect()
    };
    let s1 = draw(u1);
    let s2 = draw(u2);
    PairConfig::new(*u1.torus(), s1, s2)
}

/// `N² d₁ B₁ + N² d₂ B₂ + K M`, recounted from scratch.
pub fn total_event_rate(config: &PairConfig, params: &SimParams) -> f64 {
    let n2 = (config.torus().side() as f64).powi(2);
    n2 * params.jump_rates[0] * config.discrepant_bonds(Species::First) as f64
        + n2 * params.jump_rates[1] * config.discrepant_bonds(Species::Second) as f64
        + params.kill_rate * config.doubly_occupied() as f64
}

/// `⟨α_i^N, φ⟩ = N^{-d} Σ_x σ_{i,x} φ(x/N)`.
pub fn empirical_pairing(
    config: &PairConfig,
    phi: impl Fn(&[f64]) -> f64,
    species: Species,
) -> f64 {
    let t = config.torus();
    let sum: f64 = config
        .sigma(species)
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == 1)
        .map(|(x, _)| phi(&t.position(x)))
        .sum();
    sum / t.sites() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Exchange(Species),
    Kill,
}

/// Where an event happened: a bond `{site, site + e_axis}` or a site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Location {
    Bond { site: usize, axis: usize },
    Site(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub location: Location,
}

pub type EventLog = Vec<Event>;

const ABSENT: u32 = u32::MAX;

/// Set of ids in `0..capacity` with O(1) insert, remove and uniform sampling.
#[derive(Debug, Clone)]
struct IndexedSet {
    items: Vec<u32>,
    pos: Vec<u32>,
}

impl IndexedSet {
    fn new(capacity: usize) -> Self {
        Self {
            items: Vec::new(),
            pos: vec![ABSENT; capacity],
        }
    }

    #[inline]
    fn len(&self) -> usize {
        self.items.len()
    }

    #[inline]
    fn get(&self, i: usize) -> usize {
        self.items[i] as usize
    }

    #[inline]
    fn set(&mut self, id: usize, present: bool) {
        let p = self.pos[id];
        if present && p == ABSENT {
            self.pos[id] = self.items.len() as u32;
            self.items.push(id as u32);
        } else if !present && p != ABSENT {
            let last = self.items.pop().expect("non-empty");
            if last as usize != id {
                self.items[p as usize] = last;
                self.pos[last as usize] = p;
            }
            self.pos[id] = ABSENT;
        }
    }
}

/// A single trajectory of the particle system.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: PairConfig,
    params: SimParams,
    time: f64,
    n2: f64,
    forward: Vec<u32>,
    backward: Vec<u32>,
    discrepant: [IndexedSet; 2],
    doubles: IndexedSet,
}

impl Simulator {
    pub fn new(config: PairConfig, params: SimParams) -> Result<Self> {
        let t = *config.torus();
        if t.sites() > (u32::MAX as usize) / t.dim().max(1) {
            return Err(Error::InvalidLattice("lattice too large for u32 bond ids".into()));
        }
        let dim = t.dim();
        let mut forward = vec![0u32; t.bonds()];
        let mut backward = vec![0u32; t.bonds()];
        for x in 0..t.sites() {
            for a in 0..dim {
                forward[x * dim + a] = t.forward(x, a) as u32;
                backward[x * dim + a] = t.backward(x, a) as u32;
            }
        }
        let mut sim = Self {
            n2: (t.side() as f64).powi(2),
            discrepant: [IndexedSet::new(t.bonds()), IndexedSet::new(t.bonds())],
            doubles: IndexedSet::new(t.sites()),
            config,
            params,
            time: 0.0,
            forward,
            backward,
        };
        for x in 0..t.sites() {
            sim.refresh_site(x);
            for a in 0..dim {
                for sp in Species::BOTH {
                    sim.refresh_bond(sp, x * dim + a);
                }
            }
        }
        Ok(sim)
    }

    pub fn config(&self) -> &PairConfig {
        &self.config
    }

    pub fn into_config(self) -> PairConfig {
        self.config
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn torus(&self) -> &Torus {
        self.config.torus()
    }

    /// Current `(B₁, B₂, M)` from the incremental sets.
    pub fn tallies(&self) -> (usize, usize, usize) {
        (
            self.discrepant[0].len(),
            self.discrepant[1].len(),
            self.doubles.len(),
        )
    }

    pub fn total_rate(&self) -> f64 {
        self.n2 * self.params.jump_rates[0] * self.discrepant[0].len() as f64
            + self.n2 * self.params.jump_rates[1] * self.discrepant[1].len() as f64
            + self.params.kill_rate * self.doubles.len() as f64
    }

    #[inline]
    fn refresh_bond(&mut self, sp: Species, bond: usize) {
        let dim = self.config.torus().dim();
        let x = bond / dim;
        let y = self.forward[bond] as usize;
        let s = self.config.sigma(sp);
        let differs = s[x] != s[y];
        self.discrepant[sp.index()].set(bond, differs);
    }

    #[inline]
    fn refresh_site(&mut self, x: usize) {
        let both = self.config.get(Species::First, x) == 1 && self.config.get(Species::Second, x) == 1;
        self.doubles.set(x, both);
    }

    fn refresh_bonds_at(&mut self, sp: Species, x: usize) {
        let dim = self.config.torus().dim();
        for a in 0..dim {
            self.refresh_bond(sp, x * dim + a);
            let back = self.backward[x * dim + a] as usize;
            self.refresh_bond(sp, back * dim + a);
        }
    }

    /// Draws the next event and its holding time without applying it.
    fn propose(&self, rng: &mut SimRng) -> Result<(f64, EventKind, Location)> {
        let total = self.total_rate();
        if total <= 0.0 {
            return Err(Error::Absorbing);
        }
        let hold: f64 = Exp1.sample(rng);
        let dt = hold / total;
        let dim = self.config.torus().dim();
        let mut u = rng.random::<f64>() * total;
        for sp in Species::BOTH {
            let set = &self.discrepant[sp.index()];
            let unit = self.n2 * self.params.jump_rates[sp.index()];
            let block = unit * set.len() as f64;
            if u < block {
                let k = ((u / unit) as usize).min(set.len() - 1);
                let bond = set.get(k);
                return Ok((
                    dt,
                    EventKind::Exchange(sp),
                    Location::Bond {
                        site: bond / dim,
                        axis: bond % dim,
                    },
                ));
            }
            u -= block;
        }
        if self.doubles.len() == 0 {
            // only reachable through rounding at the top of the range
            let sp = if self.discrepant[1].len() > 0 {
                Species::Second
            } else {
                Species::First
            };
            let set = &self.discrepant[sp.index()];
            let bond = set.get(set.len() - 1);
            return Ok((
                dt,
                EventKind::Exchange(sp),
                Location::Bond {
                    site: bond / dim,
                    axis: bond % dim,
                },
            ));
        }
        let k = ((u / self.params.kill_rate) as usize).min(self.doubles.len() - 1);
        Ok((dt, EventKind::Kill, Location::Site(self.doubles.get(k))))
    }

    fn apply(&mut self, kind: EventKind, location: Location) {
        match (kind, location) {
            (EventKind::Exchange(sp), Location::Bond { site, axis }) => {
                let dim = self.config.torus().dim();
                let y = self.forward[site * dim + axis] as usize;
                let a = self.config.get(sp, site);
                let b = self.config.get(sp, y);
                self.config.set(sp, site, b);
                self.config.set(sp, y, a);
                self.refresh_bonds_at(sp, site);
                self.refresh_bonds_at(sp, y);
                self.refresh_site(site);
                self.refresh_site(y);
            }
            (EventKind::Kill, Location::Site(x)) => {
                self.config.set(Species::First, x, 0);
                self.config.set(Species::Second, x, 0);
                self.refresh_bonds_at(Species::First, x);
                self.refresh_bonds_at(Species::Second, x);
                self.refresh_site(x);
            }
            _ => unreachable!("event kind and location do not match"),
        }
    }

    /// Performs one transition. Returns the holding time and the event.
    pub fn step(&mut self, rng: &mut SimRng) -> Result<(f64, Event)> {
        let (dt, kind, location) = self.propose(rng)?;
        self.time += dt;
        self.apply(kind, location);
        Ok((
            dt,
            Event {
                time: self.time,
                kind,
                location,
            },
        ))
    }

    /// Runs until macroscopic time `t_end`, calling `observer(t, config)` at
    /// each of the sorted `observe_times` that falls in `[now, t_end]`.
    ///
    /// The state at an observation time is the state after every event up to
    /// and including that time. Reaching an absorbing state ends the run
    /// normally: remaining observations see the frozen configuration.
    pub fn run(
        &mut self,
        t_end: f64,
        observe_times: &[f64],
        mut observer: impl FnMut(f64, &PairConfig),
        rng: &mut SimRng,
        mut log: Option<&mut EventLog>,
    ) -> Result<RunSummary> {
        if !(t_end >= 0.0) {
            return Err(Error::InvalidParameter(format!("negative end time {t_end}")));
        }
        if observe_times.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidParameter("observer times must be sorted".into()));
        }
        let mut next_obs = observe_times.partition_point(|&t| t < self.time);
        let mut events = 0u64;
        let mut kills = 0u64;
        let mut absorbed = false;
        let t_end = t_end.max(self.time);
        loop {
            let proposal = match self.propose(rng) {
                Ok(p) => Some(p),
                Err(Error::Absorbing) => None,
                Err(e) => return Err(e),
            };
            let next_time = proposal.map_or(f64::INFINITY, |(dt, _, _)| self.time + dt);
            while next_obs < observe_times.len()
                && observe_times[next_obs] < next_time
                && observe_times[next_obs] <= t_end
            {
                observer(observe_times[next_obs], &self.config);
                next_obs += 1;
            }
            let Some((_, kind, location)) = proposal else {
                absorbed = true;
                self.time = t_end;
                break;
            };
            if next_time >= t_end {
                self.time = t_end;
                break;
            }
            self.time = next_time;
            self.apply(kind, location);
            events += 1;
            if kind == EventKind::Kill {
                kills += 1;
            }
            if let Some(log) = log.as_deref_mut() {
                log.push(Event {
                    time: next_time,
                    kind,
                    location,
                });
            }
        }
        Ok(RunSummary {
            events,
            kills,
            absorbed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunSummary {
    pub events: u64,
    pub kills: u64,
    pub absorbed: bool,
}

/// One-shot helper: runs from `config0` to `t_end` and returns the final
/// configuration, the event log and the summary.
pub fn simulate(
    config0: PairConfig,
    t_end: f64,
    params: SimParams,
    rng: &mut SimRng,
    observe_times: &[f64],
    observer: impl FnMut(f64, &PairConfig),
) -> Result<(PairConfig, EventLog, RunSummary)> {
    let mut sim = Simulator::new(config0, params)?;
    let mut log = Vec::new();
    let summary = sim.run(t_end, observe_times, observer, rng, Some(&mut log))?;
    Ok((sim.into_config(), log, summary))
}
