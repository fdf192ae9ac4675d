//! Exact computations on the full state space of a one-dimensional torus
//! with very few sites: the generator as a sparse matrix, the forward
//! equation, relative entropy and Dirichlet forms against product Bernoulli
//! measures, and the identities and inequalities of the relative entropy
//! method evaluated state by state.
//!
//! A state packs both occupation fields into one integer: bit `2x` holds
//! `σ₁(x)` and bit `2x + 1` holds `σ₂(x)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::hydro::{rhs as hydro_rhs, HydroParams, HydroState};
use crate::lattice::{DensityField, PairConfig, Species, Torus};
use crate::library::TestFunction;
use crate::ode::{dopri5, Tolerance};
use crate::rng::replica_rng;
use crate::sim::SimParams;
use crate::stats::{binomial_deviation_probability, clopper_pearson};

/// Largest number of sites the oracle accepts (`4^10` states).
pub const MAX_SITES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateSpace {
    torus: Torus,
}

impl StateSpace {
    pub fn new(side: usize) -> Result<Self> {
        if side > MAX_SITES {
            return Err(Error::StateSpaceTooLarge {
                sites: side,
                budget: MAX_SITES,
            });
        }
        Ok(Self {
            torus: Torus::new(1, side)?,
        })
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn side(&self) -> usize {
        self.torus.side()
    }

    pub fn len(&self) -> usize {
        1 << (2 * self.side())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn occupation(state: usize, species: Species, x: usize) -> u8 {
        ((state >> (2 * x + species.index())) & 1) as u8
    }

    pub fn index(&self, config: &PairConfig) -> Result<usize> {
        if config.torus() != &self.torus {
            return Err(Error::InvalidLattice("configuration has the wrong shape".into()));
        }
        let mut s = 0;
        for x in 0..self.side() {
            for sp in Species::BOTH {
                s |= (config.get(sp, x) as usize) << (2 * x + sp.index());
            }
        }
        Ok(s)
    }

    pub fn config(&self, state: usize) -> PairConfig {
        let n = self.side();
        let s1 = (0..n).map(|x| Self::occupation(state, Species::First, x)).collect();
        let s2 = (0..n).map(|x| Self::occupation(state, Species::Second, x)).collect();
        PairConfig::new(self.torus, s1, s2).expect("binary fields")
    }

    /// State with the occupations of `species` at `x` and `y` exchanged.
    pub fn swap(state: usize, species: Species, x: usize, y: usize) -> usize {
        let bx = 2 * x + species.index();
        let by = 2 * y + species.index();
        if (state >> bx) & 1 == (state >> by) & 1 {
            state
        } else {
            state ^ (1 << bx) ^ (1 << by)
        }
    }

    /// Bonds `(x, x + 1)`; on two sites both bonds join the same pair.
    fn bonds(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.side();
        (0..n).map(move |x| (x, (x + 1) % n))
    }
}

pub fn enumerate_states(side: usize) -> Result<StateSpace> {
    StateSpace::new(side)
}

/// `L = N²(d₁L₀(σ₁) + d₂L₀(σ₂)) + K L_G` in compressed-row form.
#[derive(Debug, Clone)]
pub struct Generator {
    space: StateSpace,
    params: SimParams,
    row_start: Vec<usize>,
    cols: Vec<u32>,
    rates: Vec<f64>,
    diag: Vec<f64>,
}

impl Generator {
    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    /// Off-diagonal `(target, rate)` pairs of a row.
    pub fn row(&self, s: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_start[s]..self.row_start[s + 1];
        self.cols[r.clone()]
            .iter()
            .zip(&self.rates[r])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn diagonal(&self, s: usize) -> f64 {
        self.diag[s]
    }

    pub fn exit_rate(&self, s: usize) -> f64 {
        -self.diag[s]
    }

    /// Largest `|Σ_t L(s, t)|` over rows, with a compensated sum.
    pub fn max_row_sum(&self) -> f64 {
        (0..self.space.len())
            .map(|s| {
                let mut sum = self.diag[s];
                let mut comp = 0.0;
                for (_, v) in self.row(s) {
                    let t = sum + v;
                    comp += if sum.abs() >= v.abs() {
                        (sum - t) + v
                    } else {
                        (v - t) + sum
                    };
                    sum = t;
                }
                (sum + comp).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `out = μL`, i.e. `out(t) = Σ_s μ(s) L(s, t)`.
    pub fn apply_forward(&self, mu: &[f64], out: &mut [f64]) {
        for (o, (&m, &d)) in out.iter_mut().zip(mu.iter().zip(&self.diag)) {
            *o = m * d;
        }
        for (s, &m) in mu.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (t, v) in self.row(s) {
                out[t] += m * v;
            }
        }
    }

    /// `(Lf)(s) = Σ_t L(s, t)(f(t) − f(s))`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.space.len())
            .map(|s| self.row(s).map(|(t, v)| v * (f[t] - f[s])).sum())
            .collect()
    }
}

pub fn build_generator(space: &StateSpace, params: &SimParams) -> Generator {
    let n = space.side();
    let n2 = (n * n) as f64;
    let len = space.len();
    let mut row_start = Vec::with_capacity(len + 1);
    let mut cols = Vec::new();
    let mut rates = Vec::new();
    let mut diag = Vec::with_capacity(len);
    let mut row: Vec<(usize, f64)> = Vec::new();
    for s in 0..len {
        row_start.push(cols.len());
        row.clear();
        for sp in Species::BOTH {
            let rate = n2 * params.jump_rates[sp.index()];
            for (x, y) in space.bonds() {
                let t = StateSpace::swap(s, sp, x, y);
                if t != s && rate > 0.0 {
                    row.push((t, rate));
                }
            }
        }
        if params.kill_rate > 0.0 {
            for x in 0..n {
                let both = 0b11 << (2 * x);
                if s & both == both {
                    row.push((s & !both, params.kill_rate));
                }
            }
        }
        row.sort_by_key(|&(t, _)| t);
        let mut exit = 0.0;
        let mut i = 0;
        while i < row.len() {
            let t = row[i].0;
            let mut v = 0.0;
            while i < row.len() && row[i].0 == t {
                v += row[i].1;
                i += 1;
            }
            cols.push(t as u32);
            rates.push(v);
            exit += v;
        }
        diag.push(-exit);
    }
    row_start.push(cols.len());
    Generator {
        space: *space,
        params: *params,
        row_start,
        cols,
        rates,
        diag,
    }
}

/// Independent Bernoulli occupations with means `u₁(x)`, `u₂(x)` in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductMeasure {
    u: [DensityField; 2],
}

impl ProductMeasure {
    pub fn new(u1: DensityField, u2: DensityField) -> Result<Self> {
        if u1.torus() != u2.torus() {
            return Err(Error::InvalidLattice("species live on different tori".into()));
        }
        for u in [&u1, &u2] {
            for (site, &value) in u.values().iter().enumerate() {
                if !(value > 0.0 && value < 1.0) {
                    return Err(Error::OutOfRange {
                        site,
                        value,
                        lo: 0.0,
                        hi: 1.0,
                    });
                }
            }
        }
        Ok(Self { u: [u1, u2] })
    }

    pub fn constant(torus: Torus, p1: f64, p2: f64) -> Result<Self> {
        Self::new(DensityField::constant(torus, p1), DensityField::constant(torus, p2))
    }

    pub fn density(&self, species: Species) -> &DensityField {
        &self.u[species.index()]
    }

    pub fn weight(&self, state: usize) -> f64 {
        let mut w = 1.0;
        for x in 0..self.u[0].torus().sites() {
            for sp in Species::BOTH {
                let p = self.u[sp.index()].get(x);
                w *= if StateSpace::occupation(state, sp, x) == 1 {
                    p
                } else {
                    1.0 - p
                };
            }
        }
        w
    }

    pub fn weights(&self, space: &StateSpace) -> Vec<f64> {
        (0..space.len()).map(|s| self.weight(s)).collect()
    }

    /// `ω_{i,x}(s) = (σ_{i,x} − u_i(x)) / χ(u_i(x))`.
    pub fn omega(&self, state: usize, species: Species, x: usize) -> f64 {
        let u = self.u[species.index()].get(x);
        (StateSpace::occupation(state, species, x) as f64 - u) / (u * (1.0 - u))
    }
}

/// Forward equation `μ' = μL`, returning `μ` at each sorted time.
pub fn evolve_master(
    generator: &Generator,
    mu0: &[f64],
    times: &[f64],
    tol: Tolerance,
) -> Result<Vec<Vec<f64>>> {
    check_distribution(mu0, generator.space.len())?;
    dopri5(
        |_, mu, out| generator.apply_forward(mu, out),
        0.0,
        mu0,
        times,
        tol,
        10_000_000,
    )
}

fn check_distribution(mu: &[f64], len: usize) -> Result<()> {
    if mu.len() != len {
        return Err(Error::LengthMismatch {
            expected: len,
            got: mu.len(),
        });
    }
    let total: f64 = mu.iter().sum();
    if mu.iter().any(|&m| !(m >= 0.0)) || (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "not a probability vector (total {total})"
        )));
    }
    Ok(())
}

/// `Σ_s μ(s) log(μ(s)/ν(s))` with `0 log 0 = 0`.
pub fn relative_entropy(mu: &[f64], nu: &[f64]) -> Result<f64> {
    if mu.len() != nu.len() {
        return Err(Error::LengthMismatch {
            expected: nu.len(),
            got: mu.len(),
        });
    }
    let mut h = 0.0;
    for (s, (&m, &n)) in mu.iter().zip(nu).enumerate() {
        if !(n > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "reference measure vanishes at state {s}"
            )));
        }
        if m > 0.0 {
            h += m * (m / n).ln();
        }
    }
    Ok(h)
}

/// `(1/4) Σ_{ordered neighbours x, y} Σ_s ν(s) [d₁(f(σ₁^{x,y}) − f)² + d₂(f(σ₂^{x,y}) − f)²]`.
pub fn dirichlet_form(space: &StateSpace, f: &[f64], nu: &[f64], diffusivity: [f64; 2]) -> f64 {
    let mut acc = 0.0;
    for s in 0..space.len() {
        let mut local = 0.0;
        for sp in Species::BOTH {
            for (x, y) in space.bonds() {
                let d = f[StateSpace::swap(s, sp, x, y)] - f[s];
                local += diffusivity[sp.index()] * d * d;
            }
        }
        acc += nu[s] * local;
    }
    // each unordered bond stands for two ordered pairs
    0.5 * acc
}

/// `(L^{*,ν}1)(s) = (νL)(s) / ν(s)`.
pub fn adjoint_one(generator: &Generator, nu: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; nu.len()];
    generator.apply_forward(nu, &mut out);
    for (o, &n) in out.iter_mut().zip(nu) {
        *o /= n;
    }
    out
}

/// Parameters of the hydrodynamic system matching a generator.
fn hydro_params(params: &SimParams) -> Result<HydroParams> {
    HydroParams::new(params.jump_rates[0], params.jump_rates[1], params.kill_rate)
}

/// `Σ_{i,x} ∂t u_i(x) ω_{i,x}(s)` with `∂t u` from the hydrodynamic right side.
fn dt_log_psi(space: &StateSpace, nu: &ProductMeasure, du: &[Vec<f64>; 2]) -> Vec<f64> {
    (0..space.len())
        .map(|s| {
            let mut acc = 0.0;
            for sp in Species::BOTH {
                for x in 0..space.side() {
                    acc += du[sp.index()][x] * nu.omega(s, sp, x);
                }
            }
            acc
        })
        .collect()
}

/// `V₁(s) + V₂(s) + V(s)` evaluated from the closed forms.
pub fn v_terms(space: &StateSpace, nu: &ProductMeasure, params: &SimParams) -> Vec<f64> {
    let t = space.torus();
    let n = space.side();
    let n2 = (n * n) as f64;
    (0..space.len())
        .map(|s| {
            let mut acc = 0.0;
            for sp in Species::BOTH {
                let u = nu.density(sp);
                let mut pair = 0.0;
                for x in 0..n {
                    for y in t.neighbors(x) {
                        let g = u.get(y) - u.get(x);
                        pair += g * g * nu.omega(s, sp, x) * nu.omega(s, sp, y);
                    }
                }
                acc -= 0.5 * params.jump_rates[sp.index()] * n2 * pair;
            }
            let u1 = nu.density(Species::First);
            let u2 = nu.density(Species::Second);
            for x in 0..n {
                let (a, b) = (u1.get(x), u2.get(x));
                acc += params.kill_rate
                    * (a + b - 1.0)
                    * a
                    * b
                    * nu.omega(s, Species::First, x)
                    * nu.omega(s, Species::Second, x);
            }
            acc
        })
        .collect()
}

/// `max_s |(L^{*,ν}1 − ∂t log ψ)(s) − (V₁ + V₂ + V)(s)|`.
pub fn verify_v_decomposition(generator: &Generator, nu: &ProductMeasure) -> Result<f64> {
    let space = generator.space();
    if nu.density(Species::First).torus() != space.torus() {
        return Err(Error::InvalidLattice("measure and state space differ".into()));
    }
    let weights = nu.weights(space);
    let adj = adjoint_one(generator, &weights);
    let state = HydroState::new(
        nu.density(Species::First).clone(),
        nu.density(Species::Second).clone(),
    )?;
    let du = hydro_rhs(&state, &hydro_params(generator.params())?);
    let dlog = dt_log_psi(space, nu, &du);
    let v = v_terms(space, nu, generator.params());
    Ok((0..space.len())
        .map(|s| (adj[s] - dlog[s] - v[s]).abs())
        .fold(0.0, f64::max))
}

/// One sampled time of the entropy-derivative inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropySample {
    pub t: f64,
    pub entropy: f64,
    /// centred difference of `H(μ_t|ν_t)`
    pub dh_dt: f64,
    /// `−2N² 𝒟(√(dμ/dν); ν) + ∫ (L^{*,ν}1 − ∂t log ψ) dμ`
    pub bound: f64,
    /// `bound − dh_dt`; nonnegative when the inequality holds
    pub margin: f64,
}

/// Evolves `μ` by the forward equation and `(u₁, u₂)` by the hydrodynamic
/// system together, and evaluates both sides of the entropy inequality at
/// every time in `times` (all `≥ h`).
pub fn verify_entropy_inequality(
    generator: &Generator,
    u0: &[DensityField; 2],
    mu0: Option<&[f64]>,
    times: &[f64],
    h: f64,
    tol: Tolerance,
) -> Result<Vec<EntropySample>> {
    let space = *generator.space();
    let n = space.side();
    let len = space.len();
    let hp = hydro_params(generator.params())?;
    let nu0 = ProductMeasure::new(u0[0].clone(), u0[1].clone())?;
    let mu0 = match mu0 {
        Some(m) => m.to_vec(),
        None => nu0.weights(&space),
    };
    check_distribution(&mu0, len)?;
    if times.iter().any(|&t| t < h) || times.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter(
            "sample times must be sorted and at least the difference step".into(),
        ));
    }

    let mut grid: Vec<f64> = times.iter().flat_map(|&t| [t - h, t, t + h]).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut y0 = mu0;
    y0.extend_from_slice(u0[0].values());
    y0.extend_from_slice(u0[1].values());
    let torus = *space.torus();
    let out = dopri5(
        |_, y, dy| {
            let (mu, rest) = y.split_at(len);
            let (dmu, drest) = dy.split_at_mut(len);
            generator.apply_forward(mu, dmu);
            let st = HydroState::new(
                DensityField::new(torus, rest[..n].to_vec()).expect("length"),
                DensityField::new(torus, rest[n..].to_vec()).expect("length"),
            )
            .expect("same torus");
            let [a, b] = hydro_rhs(&st, &hp);
            drest[..n].copy_from_slice(&a);
            drest[n..].copy_from_slice(&b);
        },
        0.0,
        &y0,
        &grid,
        tol,
        10_000_000,
    )?;

    let split = |y: &[f64]| -> Result<(Vec<f64>, ProductMeasure)> {
        let nu = ProductMeasure::new(
            DensityField::new(torus, y[len..len + n].to_vec())?,
            DensityField::new(torus, y[len + n..].to_vec())?,
        )?;
        Ok((y[..len].to_vec(), nu))
    };
    let entropy_at = |y: &[f64]| -> Result<f64> {
        let (mu, nu) = split(y)?;
        relative_entropy(&mu, &nu.weights(&space))
    };
    let find = |t: f64| grid.iter().position(|&g| g == t).expect("grid contains t");

    let n2 = (n * n) as f64;
    let diffusivity = generator.params().jump_rates;
    let mut samples = Vec::with_capacity(times.len());
    for &t in times {
        let (mu, nu) = split(&out[find(t)])?;
        let weights = nu.weights(&space);
        let hm = entropy_at(&out[find(t - h)])?;
        let hp_ = entropy_at(&out[find(t + h)])?;
        let dh_dt = (hp_ - hm) / (2.0 * h);
        let root: Vec<f64> = mu.iter().zip(&weights).map(|(m, w)| (m / w).max(0.0).sqrt()).collect();
        let dir = dirichlet_form(&space, &root, &weights, diffusivity);
        let adj = adjoint_one(generator, &weights);
        let st = HydroState::new(
            nu.density(Species::First).clone(),
            nu.density(Species::Second).clone(),
        )?;
        let dlog = dt_log_psi(&space, &nu, &hydro_rhs(&st, &hp));
        let drift: f64 = (0..len).map(|s| mu[s] * (adj[s] - dlog[s])).sum();
        let bound = -2.0 * n2 * dir + drift;
        samples.push(EntropySample {
            t,
            entropy: relative_entropy(&mu, &weights)?,
            dh_dt,
            bound,
            margin: bound - dh_dt,
        });
    }
    Ok(samples)
}

/// Every term of the integration-by-parts formula, by enumeration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbpReport {
    /// `∫ h (σ₂(y) − σ₂(x)) f dν`
    pub lhs: f64,
    /// `∫ h(σ₂^{x,y}) σ₂(x) (f(σ₂^{x,y}) − f) dν`
    pub main: f64,
    /// `lhs − main`
    pub r1: f64,
    /// `∫ (h(σ₂^{x,y}) − h) σ₂(x) f dν`
    pub swap_term: f64,
    /// `∫ h(σ₂^{x,y}) σ₂(x) f(σ₂^{x,y}) r_{x,y} dν`
    pub r0: f64,
    /// `C e^{2c₁K} |u₂(x) − u₂(y)| ∫|h| f dν + ‖h − h∘swap‖∞`
    pub bound: f64,
    /// the constant `C` used in `bound`
    pub constant: f64,
}

impl IbpReport {
    /// `|R₁ − (swap term + R₀)|`.
    pub fn defect(&self) -> f64 {
        (self.r1 - self.swap_term - self.r0).abs()
    }

    pub fn within_bound(&self) -> bool {
        self.r1.abs() <= self.bound * (1.0 + 1e-12) + 1e-15
    }
}

/// Evaluates the formula for `h`, a density `f` (`∫ f dν = 1`) and the
/// adjacent pair `(x, y)`. The lower and upper bounds on `u₂` entering
/// the constant are taken at `x` and `y`: `e^{−c₁K} = min`, `c₂ = max`.
pub fn verify_ibp(
    space: &StateSpace,
    nu: &ProductMeasure,
    h: &[f64],
    f: &[f64],
    x: usize,
    y: usize,
) -> Result<IbpReport> {
    let len = space.len();
    for v in [h, f] {
        if v.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                got: v.len(),
            });
        }
    }
    if !space.torus().neighbors(x).contains(&y) {
        return Err(Error::InvalidParameter(format!("sites {x} and {y} are not adjacent")));
    }
    let weights = nu.weights(space);
    let u2 = nu.density(Species::Second);
    let (ux, uy) = (u2.get(x), u2.get(y));
    let sig2 = |s: usize, z: usize| StateSpace::occupation(s, Species::Second, z) as f64;
    let ratio_err = |s: usize| -> f64 {
        match (sig2(s, x) as u8, sig2(s, y) as u8) {
            (1, 0) => (uy - ux) / (ux * (1.0 - uy)),
            (0, 1) => (ux - uy) / ((1.0 - ux) * uy),
            _ => 0.0,
        }
    };
    let mut lhs = 0.0;
    let mut main = 0.0;
    let mut swap_term = 0.0;
    let mut r0 = 0.0;
    let mut abs_h = 0.0;
    let mut sup_swap: f64 = 0.0;
    for s in 0..len {
        let w = weights[s];
        let t = StateSpace::swap(s, Species::Second, x, y);
        lhs += h[s] * (sig2(s, y) - sig2(s, x)) * f[s] * w;
        main += h[t] * sig2(s, x) * (f[t] - f[s]) * w;
        swap_term += (h[t] - h[s]) * sig2(s, x) * f[s] * w;
        r0 += h[t] * sig2(s, x) * f[t] * ratio_err(s) * w;
        abs_h += h[s].abs() * f[s] * w;
        sup_swap = sup_swap.max((h[t] - h[s]).abs());
    }
    let lo = ux.min(uy);
    let c2 = ux.max(uy);
    let c0 = 1.0 / (1.0 - c2);
    let constant = c0 * (1.0 + 2.0 * c2 * c0);
    let bound = constant / (lo * lo) * (ux - uy).abs() * abs_h + sup_swap;
    Ok(IbpReport {
        lhs,
        main,
        r1: lhs - main,
        swap_term,
        r0,
        bound,
        constant,
    })
}

/// Random `(h, f)` pair for the integration-by-parts check; when
/// `invariant`, `h` is symmetrized under the `σ₂` exchange at `(x, y)`.
pub fn random_ibp_instance<R: Rng>(
    space: &StateSpace,
    nu: &ProductMeasure,
    x: usize,
    y: usize,
    invariant: bool,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let len = space.len();
    let mut h: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    if invariant {
        for s in 0..len {
            let t = StateSpace::swap(s, Species::Second, x, y);
            if t > s {
                let m = 0.5 * (h[s] + h[t]);
                h[s] = m;
                h[t] = m;
            }
        }
    }
    let weights = nu.weights(space);
    let mut f: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..2.0)).collect();
    let z: f64 = f.iter().zip(&weights).map(|(a, b)| a * b).sum();
    for v in &mut f {
        *v /= z;
    }
    (h, f)
}

/// Exceedance estimate at one lattice size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdpPoint {
    pub side: usize,
    pub replicas: u64,
    pub exceedances: u64,
    pub p_hat: f64,
    /// 95% Clopper–Pearson interval for the exceedance probability
    pub ci: (f64, f64),
    /// `−log P̂`
    pub neg_log_p: f64,
    /// exact probability when the pairing is a binomial proportion
    pub exact: Option<f64>,
}

/// Monte Carlo estimate of `ν(|⟨α₁, φ⟩ − ⟨u₁, φ⟩| > ε)` under the product
/// measure with mean profile `u` on each `N` of a one-dimensional sweep.
pub fn ldp_check(
    u: impl Fn(f64) -> f64,
    phi: TestFunction,
    epsilon: f64,
    replicas: u64,
    sides: &[usize],
    seed: u64,
) -> Result<Vec<LdpPoint>> {
    if replicas == 0 {
        return Err(Error::InvalidParameter("need at least one replica".into()));
    }
    let mut out = Vec::with_capacity(sides.len());
    for (k, &side) in sides.iter().enumerate() {
        let t = Torus::new(1, side)?;
        let means: Vec<f64> = (0..side).map(|x| u(x as f64 / side as f64)).collect();
        if means.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::InvalidParameter("mean profile must lie in [0, 1]".into()));
        }
        let weights: Vec<f64> = (0..side).map(|x| phi.eval(&t.position(x))).collect();
        let centre: f64 = means.iter().zip(&weights).map(|(m, w)| m * w).sum::<f64>() / side as f64;
        let mut rng = replica_rng(seed, k as u64);
        let mut hits = 0u64;
        for _ in 0..replicas {
            let mut acc = 0.0;
            for (m, w) in means.iter().zip(&weights) {
                if rng.random::<f64>() < *m {
                    acc += w;
                }
            }
            if (acc / side as f64 - centre).abs() > epsilon {
                hits += 1;
            }
        }
        let p_hat = hits as f64 / replicas as f64;
        let constant_mean = means.iter().all(|&m| m == means[0]);
        let exact = (phi == TestFunction::One && constant_mean)
            .then(|| binomial_deviation_probability(side as u64, means[0], epsilon));
        out.push(LdpPoint {
            side,
            replicas,
            exceedances: hits,
            p_hat,
            ci: clopper_pearson(hits, replicas, 0.05),
            neg_log_p: -p_hat.ln(),
            exact,
        });
    }
    Ok(out)
}
