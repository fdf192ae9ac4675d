//! The discretized reaction-diffusion system
//! `∂t u_i = d_i N² Δu_i − K u₁u₂` on the torus, the heat kernel of `N²Δ`,
//! and checkers for the a-priori bounds its solutions satisfy.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::lattice::{laplacian_into, DensityField, Torus};
use crate::stats::log_sum_exp;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HydroParams {
    pub diffusivity: [f64; 2],
    pub kill_rate: f64,
}

impl HydroParams {
    pub fn new(d1: f64, d2: f64, kill_rate: f64) -> Result<Self> {
        if !(d1 > 0.0 && d2 > 0.0 && d1.is_finite() && d2.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "diffusivities must be positive, got ({d1}, {d2})"
            )));
        }
        if !(kill_rate >= 0.0 && kill_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kill rate must be finite and >= 0, got {kill_rate}"
            )));
        }
        Ok(Self {
            diffusivity: [d1, d2],
            kill_rate,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HydroState {
    pub t: f64,
    pub u: [DensityField; 2],
}

impl HydroState {
    pub fn new(u1: DensityField, u2: DensityField) -> Result<Self> {
        if u1.torus() != u2.torus() {
            return Err(Error::InvalidLattice("species live on different tori".into()));
        }
        Ok(Self { t: 0.0, u: [u1, u2] })
    }

    pub fn torus(&self) -> &Torus {
        self.u[0].torus()
    }

    /// `Σ_x (u₁ − u₂)`.
    pub fn signed_mass(&self) -> f64 {
        self.u[0]
            .values()
            .iter()
            .zip(self.u[1].values())
            .map(|(a, b)| a - b)
            .sum()
    }
}

/// `du_i(x) = d_i N² Δu_i(x) − K u₁(x)u₂(x)`.
pub fn rhs(state: &HydroState, params: &HydroParams) -> [Vec<f64>; 2] {
    let n = state.torus().sites();
    let mut out = [vec![0.0; n], vec![0.0; n]];
    let [a, b] = &mut out;
    rhs_into(
        state.torus(),
        [state.u[0].values(), state.u[1].values()],
        params,
        [a, b],
    );
    out
}

fn rhs_into(t: &Torus, u: [&[f64]; 2], params: &HydroParams, out: [&mut [f64]; 2]) {
    let n2 = (t.side() * t.side()) as f64;
    let k = params.kill_rate;
    let [o1, o2] = out;
    laplacian_into(t, u[0], o1);
    laplacian_into(t, u[1], o2);
    let s1 = params.diffusivity[0] * n2;
    let s2 = params.diffusivity[1] * n2;
    for x in 0..u[0].len() {
        let react = k * u[0][x] * u[1][x];
        o1[x] = s1 * o1[x] - react;
        o2[x] = s2 * o2[x] - react;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    Euler,
    /// Three-stage strong-stability-preserving Runge–Kutta (Shu–Osher form):
    /// a convex combination of Euler steps, so any bound preserved by one
    /// Euler step of the same size is preserved by the full step.
    #[default]
    Ssprk3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    /// Fraction of the largest bound-preserving Euler step.
    pub theta: f64,
    pub dt_floor: f64,
    pub scheme: Scheme,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            theta: 0.9,
            dt_floor: 1e-12,
            scheme: Scheme::Ssprk3,
        }
    }
}

/// `θ · min_i 1 / (2d·d_i N² + K)`.
pub fn stable_step(torus: &Torus, params: &HydroParams, theta: f64) -> f64 {
    let n2 = (torus.side() * torus.side()) as f64;
    let two_d = 2.0 * torus.dim() as f64;
    params
        .diffusivity
        .iter()
        .map(|&d| theta / (two_d * d * n2 + params.kill_rate))
        .fold(f64::INFINITY, f64::min)
}

/// Space-time integrals accumulated by the trapezoid rule over every step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunIntegrals {
    /// `∫₀ᵀ N^{-d} Σ_x u₁u₂ dt`
    pub segregation: f64,
    /// `∫₀ᵀ N^{-d} Σ_x |∇ᴺu_i|² dt`
    pub gradient_sq: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct HydroTrajectory {
    /// States at the requested output times, in order.
    pub states: Vec<HydroState>,
    pub integrals: RunIntegrals,
    pub steps: usize,
    /// Nominal step size; the last step before each output time may be shorter.
    pub dt: f64,
}

/// Integrates to `t_end`, recording the state at each `output_times` entry
/// (sorted, within `[0, t_end]`).
pub fn integrate(
    state0: &HydroState,
    t_end: f64,
    params: &HydroParams,
    control: &StepControl,
    output_times: &[f64],
) -> Result<HydroTrajectory> {
    integrate_observed(state0, t_end, params, control, output_times, |_| {})
}

/// As [`integrate`], calling `on_step` with the initial state and after every
/// accepted step.
pub fn integrate_observed(
    state0: &HydroState,
    t_end: f64,
    params: &HydroParams,
    control: &StepControl,
    output_times: &[f64],
    mut on_step: impl FnMut(&HydroState),
) -> Result<HydroTrajectory> {
    for u in &state0.u {
        u.check_range(0.0, 1.0)?;
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!("bad horizon {t_end}")));
    }
    if output_times.windows(2).any(|w| w[0] > w[1])
        || output_times.iter().any(|&t| !(0.0..=t_end).contains(&t))
    {
        return Err(Error::InvalidParameter(
            "output times must be sorted and inside [0, T]".into(),
        ));
    }
    let torus = *state0.torus();
    let dt = stable_step(&torus, params, control.theta);
    if dt < control.dt_floor {
        return Err(Error::StepTooSmall {
            dt,
            floor: control.dt_floor,
        });
    }

    let n = torus.sites();
    let mut state = state0.clone();
    let mut ws = Workspace::new(n);
    let mut states = Vec::with_capacity(output_times.len());
    let mut next_out = 0;
    let mut integrals = RunIntegrals::default();
    let mut dens = densities(&state);
    let mut steps = 0;
    let t0 = state.t;

    on_step(&state);
    loop {
        while next_out < output_times.len() && output_times[next_out] <= state.t - t0 {
            states.push(state.clone());
            next_out += 1;
        }
        let elapsed = state.t - t0;
        if elapsed >= t_end {
            break;
        }
        let mut target = t_end;
        if let Some(&t) = output_times.get(next_out) {
            target = target.min(t);
        }
        let remaining = target - elapsed;
        let (h, land) = if remaining <= dt * (1.0 + 1e-12) {
            (remaining, true)
        } else {
            (dt, false)
        };
        step(&mut state, params, control.scheme, h, &mut ws);
        state.t = if land { t0 + target } else { state.t + h };
        steps += 1;

        let next = densities(&state);
        integrals.segregation += 0.5 * h * (dens.0 + next.0);
        for i in 0..2 {
            integrals.gradient_sq[i] += 0.5 * h * (dens.1[i] + next.1[i]);
        }
        dens = next;
        on_step(&state);
    }
    Ok(HydroTrajectory {
        states,
        integrals,
        steps,
        dt,
    })
}

struct Workspace {
    k: [Vec<f64>; 2],
    stage: [Vec<f64>; 2],
    euler: [Vec<f64>; 2],
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            k: [vec![0.0; n], vec![0.0; n]],
            stage: [vec![0.0; n], vec![0.0; n]],
            euler: [vec![0.0; n], vec![0.0; n]],
        }
    }
}

fn euler_into(
    t: &Torus,
    from: [&[f64]; 2],
    params: &HydroParams,
    h: f64,
    k: &mut [Vec<f64>; 2],
    out: [&mut [f64]; 2],
) {
    let [k1, k2] = k;
    rhs_into(t, from, params, [k1, k2]);
    let [o1, o2] = out;
    for x in 0..o1.len() {
        o1[x] = from[0][x] + h * k1[x];
        o2[x] = from[1][x] + h * k2[x];
    }
}

fn step(state: &mut HydroState, params: &HydroParams, scheme: Scheme, h: f64, ws: &mut Workspace) {
    let torus = *state.torus();
    let [u1, u2] = &mut state.u;
    let (u1, u2) = (u1.values_mut(), u2.values_mut());
    let Workspace { k, stage, euler } = ws;
    let [s1, s2] = stage;
    let [e1, e2] = euler;
    match scheme {
        Scheme::Euler => {
            euler_into(&torus, [u1, u2], params, h, k, [s1, s2]);
            u1.copy_from_slice(s1);
            u2.copy_from_slice(s2);
        }
        Scheme::Ssprk3 => {
            euler_into(&torus, [u1, u2], params, h, k, [s1, s2]);
            euler_into(&torus, [s1, s2], params, h, k, [e1, e2]);
            for x in 0..u1.len() {
                s1[x] = 0.75 * u1[x] + 0.25 * e1[x];
                s2[x] = 0.75 * u2[x] + 0.25 * e2[x];
            }
            euler_into(&torus, [s1, s2], params, h, k, [e1, e2]);
            for x in 0..u1.len() {
                u1[x] = u1[x] / 3.0 + 2.0 / 3.0 * e1[x];
                u2[x] = u2[x] / 3.0 + 2.0 / 3.0 * e2[x];
            }
        }
    }
}

/// `(N^{-d} Σ u₁u₂, [N^{-d} Σ |∇ᴺu_i|²])`.
fn densities(state: &HydroState) -> (f64, [f64; 2]) {
    let t = state.torus();
    let n = t.sites() as f64;
    let seg = state.u[0]
        .values()
        .iter()
        .zip(state.u[1].values())
        .map(|(a, b)| a * b)
        .sum::<f64>()
        / n;
    (seg, [gradient_sq(&state.u[0]) / n, gradient_sq(&state.u[1]) / n])
}

/// `Σ_x |∇ᴺu(x)|²`.
pub fn gradient_sq(u: &DensityField) -> f64 {
    let t = u.torus();
    let side = t.side() as f64;
    let v = u.values();
    let mut acc = 0.0;
    for x in 0..t.sites() {
        for a in 0..t.dim() {
            let g = side * (v[t.forward(x, a)] - v[x]);
            acc += g * g;
        }
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub holds: bool,
    /// Largest amount by which any value falls outside the bound (0 if none).
    pub worst_violation: f64,
}

pub const BOUND_TOL: f64 = 1e-10;

/// Every value of every state lies in `[−tol, c + tol]`.
pub fn check_max_principle<'a>(
    states: impl IntoIterator<Item = &'a HydroState>,
    c: f64,
) -> BoundCheck {
    let mut worst: f64 = 0.0;
    for s in states {
        for u in &s.u {
            worst = worst.max(-u.min()).max(u.max() - c);
        }
    }
    BoundCheck {
        holds: worst <= BOUND_TOL,
        worst_violation: worst.max(0.0),
    }
}

/// `u₀ e^{−Kt}`.
pub fn lower_bound(t: f64, u0: f64, kill_rate: f64) -> f64 {
    u0 * (-kill_rate * t).exp()
}

/// Every value is at least `u₀ e^{−Kt} − tol` at its state's time.
pub fn check_lower_bound<'a>(
    states: impl IntoIterator<Item = &'a HydroState>,
    u0: f64,
    kill_rate: f64,
) -> BoundCheck {
    let mut worst: f64 = 0.0;
    for s in states {
        let floor = lower_bound(s.t, u0, kill_rate);
        for u in &s.u {
            worst = worst.max(floor - u.min());
        }
    }
    BoundCheck {
        holds: worst <= BOUND_TOL,
        worst_violation: worst.max(0.0),
    }
}

/// Constants of the admissibility assumption on initial data:
/// `|∇ᴺu_i| ≤ C₀K` and `e^{−c₁K} ≤ u_i ≤ c₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Admissibility {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

pub fn admissibility(u: &[DensityField; 2], kill_rate: f64) -> Admissibility {
    let k = kill_rate.max(f64::MIN_POSITIVE);
    let grad = u[0].max_gradient_norm().max(u[1].max_gradient_norm());
    let lo = u[0].min().min(u[1].min());
    let hi = u[0].max().max(u[1].max());
    Admissibility {
        c0: grad / k,
        c1: if lo > 0.0 { -lo.ln() / k } else { f64::INFINITY },
        c2: hi,
    }
}

/// Smallest `C ≥ 0` with `|∇ᴺu_i(t,x)| ≤ K(C₀ + C√t)` on every state with
/// `t > 0`.
pub fn gradient_bound_check<'a>(
    states: impl IntoIterator<Item = &'a HydroState>,
    c0: f64,
    kill_rate: f64,
) -> f64 {
    let mut c: f64 = 0.0;
    for s in states {
        if s.t <= 0.0 {
            continue;
        }
        let g = s.u[0].max_gradient_norm().max(s.u[1].max_gradient_norm());
        c = c.max((g / kill_rate - c0) / s.t.sqrt());
    }
    c
}

/// How a [`HeatKernel`] is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelRoute {
    /// Sum over the torus Fourier modes.
    Spectral,
    /// Images of the lattice kernel on `ℤ`, summed in log space.
    Wrapped,
}

/// Transition kernel of the semigroup generated by `D·N²Δ` at time `t`.
///
/// The kernel factorizes over axes, so only the one-dimensional kernel
/// `k(z)`, `z ∈ ℤ/Nℤ`, is stored: `p(x, y) = Π_j k(y_j − x_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatKernel {
    torus: Torus,
    axis: Vec<f64>,
}

impl HeatKernel {
    pub fn new(torus: Torus, t: f64, diffusivity: f64) -> Self {
        Self::with_route(torus, t, diffusivity, KernelRoute::Spectral)
    }

    pub fn with_route(torus: Torus, t: f64, diffusivity: f64, route: KernelRoute) -> Self {
        let side = torus.side();
        let tau = diffusivity * (side * side) as f64 * t;
        let axis = match route {
            KernelRoute::Spectral => spectral_1d(side, tau),
            KernelRoute::Wrapped => log_wrapped_1d(side, tau)
                .into_iter()
                .map(f64::exp)
                .collect(),
        };
        Self { torus, axis }
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    /// One-dimensional factor `k(z)`.
    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    pub fn value(&self, x: usize, y: usize) -> f64 {
        let n = self.torus.side();
        (0..self.torus.dim())
            .map(|a| {
                let z = (self.torus.coord(y, a) + n - self.torus.coord(x, a)) % n;
                self.axis[z]
            })
            .product()
    }

    pub fn row(&self, x: usize) -> Vec<f64> {
        (0..self.torus.sites()).map(|y| self.value(x, y)).collect()
    }

    /// `(Pu)(x) = Σ_y p(x, y) u(y)`, applied one axis at a time.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let t = &self.torus;
        let n = t.side();
        let mut cur = u.to_vec();
        let mut next = vec![0.0; cur.len()];
        for a in 0..t.dim() {
            let stride = t.stride(a);
            for (x, out) in next.iter_mut().enumerate() {
                let cx = t.coord(x, a);
                let base = x - cx * stride;
                let mut acc = 0.0;
                for (z, &k) in self.axis.iter().enumerate() {
                    acc += k * cur[base + ((cx + z) % n) * stride];
                }
                *out = acc;
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }
}

/// `k(z) = N^{-1} Σ_m exp(−τ·2(1 − cos 2πm/N)) cos(2πmz/N)`.
fn spectral_1d(side: usize, tau: f64) -> Vec<f64> {
    let n = side as f64;
    let decay: Vec<f64> = (0..side)
        .map(|m| {
            let lambda = 2.0 * (1.0 - (2.0 * std::f64::consts::PI * m as f64 / n).cos());
            (-tau * lambda).exp()
        })
        .collect();
    (0..side)
        .map(|z| {
            decay
                .iter()
                .enumerate()
                .map(|(m, &e)| {
                    // reduce m·z mod N before forming the angle
                    let phase = ((m * z) % side) as f64 / n;
                    e * (2.0 * std::f64::consts::PI * phase).cos()
                })
                .sum::<f64>()
                / n
        })
        .collect()
}

/// `ln p(τ, n)` for the rate-1 nearest-neighbour walk on `ℤ`:
/// `p(τ, n) = e^{−2τ} Σ_m τ^{2m+|n|} / (m!(m+|n|)!)`.
pub fn log_lattice_kernel(tau: f64, n: i64) -> f64 {
    let n = n.unsigned_abs();
    if tau == 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let lt = tau.ln();
    let nf = n as f64;
    // terms peak near m ≈ (sqrt(n² + 4τ²) − n)/2
    let peak = ((nf * nf + 4.0 * tau * tau).sqrt() - nf) / 2.0;
    let term = |m: f64| (2.0 * m + nf) * lt - ln_gamma(m + 1.0) - ln_gamma(m + nf + 1.0);
    let center = peak.floor();
    let top = term(center);
    let mut terms = vec![top];
    let mut m = center + 1.0;
    loop {
        let v = term(m);
        terms.push(v);
        if v < top - 60.0 {
            break;
        }
        m += 1.0;
    }
    let mut m = center - 1.0;
    while m >= 0.0 {
        let v = term(m);
        terms.push(v);
        if v < top - 60.0 {
            break;
        }
        m -= 1.0;
    }
    -2.0 * tau + log_sum_exp(terms)
}

/// `ln k(z)` with `k(z) = Σ_j p(τ, z + jN)`.
pub fn log_wrapped_1d(side: usize, tau: f64) -> Vec<f64> {
    let n = side as i64;
    // images beyond ~40 standard deviations contribute nothing
    let reach = (40.0 * (2.0 * tau).sqrt() + 2.0 * side as f64 + 40.0) as i64;
    let images = reach / n + 1;
    (0..n)
        .map(|z| {
            log_sum_exp((-images..=images).map(|j| log_lattice_kernel(tau, z + j * n)))
        })
        .collect()
}

/// Largest `|∇ᴺp(t,x,y)|·√t / p(c·t,x,y)` over `t` in the grid and all `x, y`,
/// for the kernel of `N²Δ`. Evaluated in log space through the wrapped route,
/// so far-field ratios stay accurate where the kernel itself underflows.
pub fn kernel_gradient_ratio(t_grid: &[f64], torus: &Torus, c_probe: f64) -> Result<f64> {
    if !(c_probe > 0.0 && c_probe <= 1.0) {
        return Err(Error::InvalidParameter(format!("c_probe must lie in (0, 1], got {c_probe}")));
    }
    let side = torus.side();
    let n = side as f64;
    let mut best: f64 = 0.0;
    for &t in t_grid {
        if !(t > 0.0) {
            return Err(Error::InvalidParameter(format!("grid times must be positive, got {t}")));
        }
        let tau = n * n * t;
        let lk = log_wrapped_1d(side, tau);
        let lk_probe = log_wrapped_1d(side, c_probe * tau);
        // x = 0 by translation invariance; y ranges over all sites
        for y in 0..torus.sites() {
            let zs: Vec<usize> = (0..torus.dim()).map(|a| torus.coord(y, a)).collect();
            let mut grad_sq = 0.0;
            let mut log_ratio = 0.0;
            for &z in &zs {
                // ∂ in x_j: k(z − 1) − k(z), relative to k(z)
                let rel = (lk[(z + side - 1) % side] - lk[z]).exp() - 1.0;
                grad_sq += rel * rel;
                log_ratio += lk[z] - lk_probe[z];
            }
            let r = n * t.sqrt() * grad_sq.sqrt() * log_ratio.exp();
            best = best.max(r);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn constant_state(t: Torus, a: f64, b: f64) -> HydroState {
        HydroState::new(DensityField::constant(t, a), DensityField::constant(t, b)).unwrap()
    }

    #[test]
    fn rhs_of_constants_is_pure_reaction() {
        let t = Torus::new(2, 8).unwrap();
        let p = HydroParams::new(1.0, 2.0, 3.0).unwrap();
        let [d1, d2] = rhs(&constant_state(t, 0.5, 0.2), &p);
        for x in 0..t.sites() {
            assert_relative_eq!(d1[x], -0.3, epsilon = 1e-15);
            assert_relative_eq!(d2[x], -0.3, epsilon = 1e-15);
        }
    }

    #[test]
    fn rhs_without_reaction_conserves_each_species() {
        let t = Torus::new(1, 16).unwrap();
        let p = HydroParams::new(1.0, 0.5, 0.0).unwrap();
        let s = HydroState::new(
            DensityField::from_profile(t, |r| 0.5 + 0.3 * (6.0 * r[0]).sin()),
            DensityField::from_profile(t, |r| 0.2 + 0.1 * r[0]),
        )
        .unwrap();
        let [d1, d2] = rhs(&s, &p);
        assert!(d1.iter().sum::<f64>().abs() < 1e-10);
        assert!(d2.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn constant_data_follow_the_reaction_ode() {
        let t = Torus::new(1, 64).unwrap();
        let p = HydroParams::new(1.0, 1.0, 1.0).unwrap();
        let traj = integrate(
            &constant_state(t, 0.5, 0.5),
            1.0,
            &p,
            &StepControl::default(),
            &[1.0],
        )
        .unwrap();
        let end = &traj.states[0];
        assert_eq!(end.t, 1.0);
        for u in &end.u {
            assert!((u.max() - 1.0 / 3.0).abs() < 1e-6);
            assert_eq!(u.max(), u.min());
        }
    }

    #[test]
    fn signed_mass_is_conserved() {
        let t = Torus::new(1, 32).unwrap();
        let p = HydroParams::new(1.0, 2.0, 5.0).unwrap();
        let u = crate::library::Profile::from_name("two-bump", 32).unwrap().sample(t);
        let s0 = HydroState::new(u[0].clone(), u[1].clone()).unwrap();
        let m0 = s0.signed_mass();
        let traj = integrate(&s0, 0.2, &p, &StepControl::default(), &[0.1, 0.2]).unwrap();
        for s in &traj.states {
            assert!((s.signed_mass() - m0).abs() <= 1e-12 * m0.abs().max(1.0));
        }
    }

    #[test]
    fn output_times_are_hit_exactly() {
        let t = Torus::new(1, 8).unwrap();
        let p = HydroParams::new(1.0, 1.0, 1.0).unwrap();
        let times = [0.0, 0.0123, 0.05, 0.05, 0.1];
        let traj = integrate(&constant_state(t, 0.3, 0.4), 0.1, &p, &StepControl::default(), &times)
            .unwrap();
        let got: Vec<f64> = traj.states.iter().map(|s| s.t).collect();
        assert_eq!(got, times);
    }

    #[test]
    fn out_of_range_initial_data_rejected() {
        let t = Torus::new(1, 8).unwrap();
        let p = HydroParams::new(1.0, 1.0, 1.0).unwrap();
        let bad = constant_state(t, 1.2, 0.0);
        assert!(integrate(&bad, 0.1, &p, &StepControl::default(), &[]).is_err());
    }

    #[test]
    fn step_floor_enforced() {
        let t = Torus::new(1, 64).unwrap();
        let p = HydroParams::new(1.0, 1.0, 1.0).unwrap();
        let control = StepControl {
            dt_floor: 1e-3,
            ..StepControl::default()
        };
        assert!(matches!(
            integrate(&constant_state(t, 0.3, 0.4), 0.1, &p, &control, &[]),
            Err(Error::StepTooSmall { .. })
        ));
    }

    #[test]
    fn lower_bound_values() {
        assert_relative_eq!(lower_bound(1.0, 0.1, 2.0), 0.1 * (-2.0f64).exp());
        assert_relative_eq!(lower_bound(1.0, 0.1, 2.0), 0.0135335, epsilon = 1e-7);
        assert_eq!(lower_bound(0.0, 0.1, 2.0), 0.1);
        assert_eq!(lower_bound(3.0, 0.1, 0.0), 0.1);
    }

    #[test]
    fn max_principle_accepts_data_touching_c() {
        let t = Torus::new(1, 8).unwrap();
        let s = constant_state(t, 0.9, 0.0);
        assert!(check_max_principle([&s], 0.9).holds);
        let s = constant_state(t, 0.9 + 1e-6, 0.0);
        let c = check_max_principle([&s], 0.9);
        assert!(!c.holds);
        assert!((c.worst_violation - 1e-6).abs() < 1e-12);
    }

    #[test]
    fn bounds_hold_for_random_data() {
        let t = Torus::new(1, 64).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for &k in &[1.0, 5.0] {
            let p = HydroParams::new(1.0, 0.7, k).unwrap();
            let u1: Vec<f64> = (0..64).map(|_| rng.random_range(0.05..0.9)).collect();
            let u2: Vec<f64> = (0..64).map(|_| rng.random_range(0.05..0.9)).collect();
            let u0 = u1.iter().chain(&u2).copied().fold(1.0, f64::min);
            let s0 = HydroState::new(
                DensityField::new(t, u1).unwrap(),
                DensityField::new(t, u2).unwrap(),
            )
            .unwrap();
            let mut all = Vec::new();
            integrate_observed(&s0, 0.2, &p, &StepControl::default(), &[], |s| {
                all.push(s.clone())
            })
            .unwrap();
            assert!(check_max_principle(&all, 0.9).holds);
            assert!(check_lower_bound(&all, u0, k).holds);
        }
    }

    #[test]
    fn euler_scheme_also_preserves_bounds() {
        let t = Torus::new(1, 32).unwrap();
        let p = HydroParams::new(1.0, 1.0, 5.0).unwrap();
        let u = crate::library::Profile::from_name("step", 32).unwrap().sample(t);
        let s0 = HydroState::new(u[0].clone(), u[1].clone()).unwrap();
        let control = StepControl {
            scheme: Scheme::Euler,
            ..StepControl::default()
        };
        let mut all = Vec::new();
        integrate_observed(&s0, 0.1, &p, &control, &[], |s| all.push(s.clone())).unwrap();
        assert!(check_max_principle(&all, 0.61).holds);
        assert!(check_lower_bound(&all, 0.01, 5.0).holds);
    }

    #[test]
    fn integrals_respect_energy_bounds() {
        let t = Torus::new(1, 64).unwrap();
        let p = HydroParams::new(1.0, 2.0, 10.0).unwrap();
        let u = crate::library::Profile::from_name("two-bump", 64).unwrap().sample(t);
        let s0 = HydroState::new(u[0].clone(), u[1].clone()).unwrap();
        let traj = integrate(&s0, 0.5, &p, &StepControl::default(), &[]).unwrap();
        assert!(traj.integrals.segregation <= 0.1);
        assert!(traj.integrals.gradient_sq[0] <= 0.5);
        assert!(traj.integrals.gradient_sq[1] <= 0.25);
        assert!(traj.integrals.gradient_sq[0] > 0.0);
    }

    #[test]
    fn segregation_vanishes_without_second_species() {
        let t = Torus::new(1, 32).unwrap();
        let p = HydroParams::new(1.0, 1.0, 3.0).unwrap();
        let s0 = HydroState::new(
            DensityField::from_profile(t, |r| 0.5 + 0.2 * (6.3 * r[0]).cos()),
            DensityField::constant(t, 0.0),
        )
        .unwrap();
        let traj = integrate(&s0, 0.1, &p, &StepControl::default(), &[]).unwrap();
        assert_eq!(traj.integrals.segregation, 0.0);
        assert_eq!(traj.integrals.gradient_sq[1], 0.0);
    }

    #[test]
    fn heat_kernel_basic_properties() {
        let t = Torus::new(2, 6).unwrap();
        let k0 = HeatKernel::new(t, 0.0, 1.0);
        for x in 0..t.sites() {
            for y in 0..t.sites() {
                let expect = if x == y { 1.0 } else { 0.0 };
                assert!((k0.value(x, y) - expect).abs() < 1e-14);
            }
        }
        let k = HeatKernel::new(t, 0.01, 1.5);
        for x in 0..t.sites() {
            let row = k.row(x);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-13);
            for y in 0..t.sites() {
                assert!(row[y] >= -1e-14);
                assert!((k.value(x, y) - k.value(y, x)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn spectral_and_wrapped_routes_agree() {
        for side in [2, 3, 5, 8, 16] {
            let t = Torus::new(1, side).unwrap();
            for time in [1e-4, 1e-3, 1e-2, 0.1] {
                let a = HeatKernel::with_route(t, time, 1.0, KernelRoute::Spectral);
                let b = HeatKernel::with_route(t, time, 1.0, KernelRoute::Wrapped);
                for z in 0..side {
                    assert!(
                        (a.axis()[z] - b.axis()[z]).abs() < 1e-13,
                        "N={side} t={time} z={z}: {} vs {}",
                        a.axis()[z],
                        b.axis()[z]
                    );
                }
            }
        }
    }

    #[test]
    fn lattice_kernel_small_time_expansion() {
        // p(τ, 1) = τ + O(τ²), p(τ, 0) = 1 − 2τ + O(τ²)
        let tau: f64 = 1e-6;
        assert!((log_lattice_kernel(tau, 1).exp() - tau).abs() < 1e-11);
        assert!((log_lattice_kernel(tau, 0).exp() - (1.0 - 2.0 * tau)).abs() < 1e-11);
        assert_eq!(log_lattice_kernel(0.0, 3), f64::NEG_INFINITY);
    }

    #[test]
    fn kernel_apply_matches_rows() {
        let t = Torus::new(2, 5).unwrap();
        let k = HeatKernel::new(t, 0.02, 1.0);
        let u: Vec<f64> = (0..t.sites()).map(|i| (i as f64 * 0.37).sin()).collect();
        let fast = k.apply(&u);
        for x in 0..t.sites() {
            let slow: f64 = k.row(x).iter().zip(&u).map(|(a, b)| a * b).sum();
            assert!((fast[x] - slow).abs() < 1e-14);
        }
    }

    #[test]
    fn pure_diffusion_matches_kernel_at_third_order() {
        let t = Torus::new(1, 16).unwrap();
        let p = HydroParams::new(1.0, 0.5, 0.0).unwrap();
        let u = crate::library::Profile::from_name("sine", 16).unwrap().sample(t);
        let s0 = HydroState::new(u[0].clone(), u[1].clone()).unwrap();
        let error = |theta: f64| {
            let control = StepControl {
                theta,
                ..StepControl::default()
            };
            let traj = integrate(&s0, 0.02, &p, &control, &[0.02]).unwrap();
            let mut worst: f64 = 0.0;
            for i in 0..2 {
                let exact = HeatKernel::new(t, 0.02, p.diffusivity[i]).apply(u[i].values());
                for (a, b) in traj.states[0].u[i].values().iter().zip(&exact) {
                    worst = worst.max((a - b).abs());
                }
            }
            worst
        };
        let coarse = error(0.9);
        let fine = error(0.45);
        assert!(coarse < 1e-5, "{coarse}");
        assert!(coarse / fine > 6.0, "{coarse} {fine}");
    }

    #[test]
    fn duhamel_identity_by_quadrature() {
        // u(t) = P_t u(0) − K ∫₀ᵗ P_{t−s}(u₁u₂)(s) ds
        let t = Torus::new(1, 8).unwrap();
        let p = HydroParams::new(1.0, 1.0, 2.0).unwrap();
        let u = crate::library::Profile::from_name("sine", 8).unwrap().sample(t);
        let s0 = HydroState::new(u[0].clone(), u[1].clone()).unwrap();
        let horizon = 0.05;
        let m = 200;
        let times: Vec<f64> = (0..=m).map(|j| horizon * j as f64 / m as f64).collect();
        let traj = integrate(&s0, horizon, &p, &StepControl::default(), &times).unwrap();
        let mut integral = vec![0.0; t.sites()];
        for (j, s) in traj.states.iter().enumerate() {
            let w = if j == 0 || j == m { 0.5 } else { 1.0 } * horizon / m as f64;
            let prod: Vec<f64> = s.u[0]
                .values()
                .iter()
                .zip(s.u[1].values())
                .map(|(a, b)| a * b)
                .collect();
            let evolved = HeatKernel::new(t, horizon - s.t, 1.0).apply(&prod);
            for x in 0..t.sites() {
                integral[x] += w * evolved[x];
            }
        }
        let free = HeatKernel::new(t, horizon, 1.0).apply(u[0].values());
        let end = traj.states.last().unwrap();
        for x in 0..t.sites() {
            let duhamel = free[x] - p.kill_rate * integral[x];
            assert!((end.u[0].get(x) - duhamel).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_ratio_is_finite_and_translation_invariant() {
        let t = Torus::new(1, 32).unwrap();
        let grid: Vec<f64> = (0..9).map(|k| 10f64.powf(-4.0 + 0.5 * k as f64)).collect();
        let c = kernel_gradient_ratio(&grid, &t, 0.5).unwrap();
        assert!(c.is_finite() && c > 0.0);
        // translation invariance of the underlying kernel
        let k = HeatKernel::new(t, 0.01, 1.0);
        for z in 0..32 {
            assert!((k.value(0, z) - k.value(7, (z + 7) % 32)).abs() < 1e-16);
        }
        assert!(kernel_gradient_ratio(&grid, &t, 0.0).is_err());
    }

    #[test]
    fn gradient_ratio_vanishes_as_kernel_equilibrates() {
        let t = Torus::new(1, 16).unwrap();
        let early = kernel_gradient_ratio(&[0.01], &t, 1.0).unwrap();
        let late = kernel_gradient_ratio(&[1.0], &t, 1.0).unwrap();
        assert!(early > 0.1);
        assert!(late < 1e-6);
    }

    #[test]
    fn gradient_constant_for_constant_data_is_zero() {
        let t = Torus::new(1, 16).unwrap();
        let p = HydroParams::new(1.0, 1.0, 2.0).unwrap();
        let traj = integrate(
            &constant_state(t, 0.4, 0.3),
            0.1,
            &p,
            &StepControl::default(),
            &[0.0, 0.05, 0.1],
        )
        .unwrap();
        assert_eq!(gradient_bound_check(&traj.states, 0.0, 2.0), 0.0);
    }

    #[test]
    fn admissibility_constants() {
        let t = Torus::new(1, 8).unwrap();
        let u = [DensityField::constant(t, 0.5), DensityField::constant(t, 0.25)];
        let a = admissibility(&u, 2.0);
        assert_eq!(a.c0, 0.0);
        assert_relative_eq!(a.c1, -(0.25f64).ln() / 2.0);
        assert_eq!(a.c2, 0.5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn signed_mass_conserved_for_random_fields(
            vals in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 12),
            k in 0.0f64..8.0,
        ) {
            let t = Torus::new(1, 12).unwrap();
            let (a, b): (Vec<f64>, Vec<f64>) = vals.into_iter().unzip();
            let s0 = HydroState::new(DensityField::new(t, a).unwrap(), DensityField::new(t, b).unwrap()).unwrap();
            let p = HydroParams::new(1.0, 0.3, k).unwrap();
            let m0 = s0.signed_mass();
            let traj = integrate(&s0, 0.05, &p, &StepControl::default(), &[0.05]).unwrap();
            prop_assert!((traj.states[0].signed_mass() - m0).abs() <= 1e-12 * m0.abs().max(1.0));
            prop_assert!(check_max_principle(&traj.states, 1.0).holds);
        }
    }
}
