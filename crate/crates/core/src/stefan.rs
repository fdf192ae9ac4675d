//! The fast-reaction limit `∂t w = Δ𝒟(w)` on the unit torus, its weak form,
//! and one-dimensional interface diagnostics.
//!
//! Fields live on a uniform grid of `M` cells per axis; cell `x` sits at
//! `x/M`. The grid is unrelated to the particle lattice.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rustfft::{num_complex::Complex64, FftPlanner};

use crate::error::{Error, Result};
use crate::lattice::{laplacian_into, DensityField, Torus};

/// `𝒟(s) = d₁s` for `s ≥ 0` and `d₂s` otherwise.
pub fn flux(s: f64, d1: f64, d2: f64) -> f64 {
    if s >= 0.0 {
        d1 * s
    } else {
        d2 * s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxFunction {
    pub d1: f64,
    pub d2: f64,
}

impl FluxFunction {
    pub fn new(d1: f64, d2: f64) -> Result<Self> {
        if !(d1 > 0.0 && d2 > 0.0 && d1.is_finite() && d2.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "flux slopes must be positive, got ({d1}, {d2})"
            )));
        }
        Ok(Self { d1, d2 })
    }

    pub fn eval(&self, s: f64) -> f64 {
        flux(s, self.d1, self.d2)
    }

    pub fn max_slope(&self) -> f64 {
        self.d1.max(self.d2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitControl {
    pub theta: f64,
    pub dt_floor: f64,
}

impl Default for LimitControl {
    fn default() -> Self {
        Self {
            theta: 0.9,
            dt_floor: 1e-12,
        }
    }
}

/// `θ / (2d · max(d₁, d₂) · M²)`.
pub fn limit_step(grid: &Torus, flux: &FluxFunction, theta: f64) -> f64 {
    let m = grid.side() as f64;
    theta / (2.0 * grid.dim() as f64 * flux.max_slope() * m * m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityField>,
    pub steps: usize,
    pub dt: f64,
}

/// Explicit conservative scheme `w ← w + dt·M²·Δ(𝒟(w))`, recording the
/// state at each of the sorted `output_times`.
pub fn solve_limit(
    w0: &DensityField,
    t_end: f64,
    flux: &FluxFunction,
    control: &LimitControl,
    output_times: &[f64],
) -> Result<LimitTrajectory> {
    solve_limit_observed(w0, t_end, flux, control, output_times, |_, _| {})
}

/// As [`solve_limit`], calling `on_step(t, w)` at `t = 0` and after every step.
pub fn solve_limit_observed(
    w0: &DensityField,
    t_end: f64,
    flux: &FluxFunction,
    control: &LimitControl,
    output_times: &[f64],
    mut on_step: impl FnMut(f64, &[f64]),
) -> Result<LimitTrajectory> {
    w0.check_range(-1.0, 1.0)?;
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
    let grid = *w0.torus();
    let dt = limit_step(&grid, flux, control.theta);
    if dt < control.dt_floor {
        return Err(Error::StepTooSmall {
            dt,
            floor: control.dt_floor,
        });
    }
    let m2 = (grid.side() * grid.side()) as f64;
    let mut w = w0.values().to_vec();
    let mut dw = vec![0.0; w.len()];
    let mut lap = vec![0.0; w.len()];
    let mut t = 0.0;
    let mut steps = 0;
    let mut out = LimitTrajectory {
        times: Vec::with_capacity(output_times.len()),
        states: Vec::with_capacity(output_times.len()),
        steps: 0,
        dt,
    };
    let mut next_out = 0;
    on_step(t, &w);
    loop {
        while next_out < output_times.len() && output_times[next_out] <= t {
            out.times.push(output_times[next_out]);
            out.states.push(DensityField::new(grid, w.clone())?);
            next_out += 1;
        }
        if t >= t_end {
            break;
        }
        let target = output_times.get(next_out).map_or(t_end, |&o| o.min(t_end));
        let remaining = target - t;
        let (h, land) = if remaining <= dt * (1.0 + 1e-12) {
            (remaining, true)
        } else {
            (dt, false)
        };
        for (d, &v) in dw.iter_mut().zip(&w) {
            *d = flux.eval(v);
        }
        laplacian_into(&grid, &dw, &mut lap);
        for (v, l) in w.iter_mut().zip(&lap) {
            *v += h * m2 * l;
        }
        t = if land { target } else { t + h };
        steps += 1;
        on_step(t, &w);
    }
    out.steps = steps;
    Ok(out)
}

/// Solution of `∂t w = D Δw` on the unit torus from grid data `w0`, via the
/// discrete Fourier transform: mode `k` is damped by `exp(−4π²|k|² D t)`.
pub fn spectral_heat(w0: &DensityField, t: f64, diffusivity: f64) -> DensityField {
    let grid = *w0.torus();
    let m = grid.side();
    let mut data: Vec<Complex64> = w0.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(m);
    let inverse = planner.plan_fft_inverse(m);
    along_axes(&grid, &mut data, |line| forward.process(line));
    let wave = |j: usize| {
        let k = if j <= m / 2 { j as f64 } else { j as f64 - m as f64 };
        k * k
    };
    for (i, c) in data.iter_mut().enumerate() {
        let k2: f64 = (0..grid.dim()).map(|a| wave(grid.coord(i, a))).sum();
        *c *= (-4.0 * PI * PI * k2 * diffusivity * t).exp();
    }
    along_axes(&grid, &mut data, |line| inverse.process(line));
    let scale = 1.0 / grid.sites() as f64;
    DensityField::new(grid, data.iter().map(|c| c.re * scale).collect())
        .expect("length preserved")
}

fn along_axes(grid: &Torus, data: &mut [Complex64], mut transform: impl FnMut(&mut [Complex64])) {
    let m = grid.side();
    let mut line = vec![Complex64::new(0.0, 0.0); m];
    for a in 0..grid.dim() {
        let stride = grid.stride(a);
        for start in 0..grid.sites() {
            if grid.coord(start, a) != 0 {
                continue;
            }
            for (j, l) in line.iter_mut().enumerate() {
                *l = data[start + j * stride];
            }
            transform(&mut line);
            for (j, l) in line.iter().enumerate() {
                data[start + j * stride] = *l;
            }
        }
    }
}

/// Space factor of a weak-form test function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Cos,
    Sin,
}

/// `ψ(t, r) = ((T − t)/T) · trig(2π k·r)` with integer wave vector `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeakTestFunction {
    pub phase: Phase,
    pub wave: Vec<i32>,
}

impl WeakTestFunction {
    /// Fixed family used in reports: first two modes along the first axis in
    /// both phases, plus a diagonal mode when `d ≥ 2`.
    pub fn family(dim: usize) -> Vec<WeakTestFunction> {
        let axis = |k: i32| {
            let mut w = vec![0; dim];
            w[0] = k;
            w
        };
        let mut out = vec![
            WeakTestFunction { phase: Phase::Cos, wave: axis(1) },
            WeakTestFunction { phase: Phase::Sin, wave: axis(1) },
            WeakTestFunction { phase: Phase::Cos, wave: axis(2) },
            WeakTestFunction { phase: Phase::Sin, wave: axis(2) },
        ];
        if dim >= 2 {
            let mut w = vec![0; dim];
            w[0] = 1;
            w[1] = 1;
            out.push(WeakTestFunction { phase: Phase::Cos, wave: w });
        }
        out
    }

    fn trig(&self, r: &[f64]) -> f64 {
        let arg: f64 = 2.0 * PI * self.wave.iter().zip(r).map(|(&k, &x)| k as f64 * x).sum::<f64>();
        match self.phase {
            Phase::Cos => arg.cos(),
            Phase::Sin => arg.sin(),
        }
    }

    fn wave_sq(&self) -> f64 {
        self.wave.iter().map(|&k| (k * k) as f64).sum()
    }

    pub fn value(&self, t: f64, horizon: f64, r: &[f64]) -> f64 {
        (horizon - t) / horizon * self.trig(r)
    }
}

impl fmt::Display for WeakTestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.phase {
            Phase::Cos => "cos",
            Phase::Sin => "sin",
        };
        let ks: Vec<String> = self.wave.iter().map(|k| k.to_string()).collect();
        write!(f, "{p}[{}]", ks.join(":"))
    }
}

impl FromStr for WeakTestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad test function id {s:?}"));
        let (p, rest) = s.split_at(s.find('[').ok_or_else(bad)?);
        let phase = match p {
            "cos" => Phase::Cos,
            "sin" => Phase::Sin,
            _ => return Err(bad()),
        };
        let inner = rest.strip_prefix('[').and_then(|r| r.strip_suffix(']')).ok_or_else(bad)?;
        let wave = inner
            .split(':')
            .map(|k| k.parse::<i32>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { phase, wave })
    }
}

/// Streams a trajectory and accumulates
/// `∫₀ᵀ∫ (w∂tψ + 𝒟(w)Δψ) dr dt + ∫ w₀ψ(0) dr` for each test function:
/// trapezoid rule over the observed times, midpoint rule over cells.
#[derive(Debug, Clone)]
pub struct WeakResidual {
    psis: Vec<WeakTestFunction>,
    trig: Vec<Vec<f64>>,
    flux: FluxFunction,
    horizon: f64,
    acc: Vec<f64>,
    last: Option<(f64, Vec<f64>)>,
    cell: f64,
}

impl WeakResidual {
    pub fn new(grid: &Torus, psis: Vec<WeakTestFunction>, flux: FluxFunction, horizon: f64) -> Self {
        let trig = psis
            .iter()
            .map(|p| (0..grid.sites()).map(|x| p.trig(&grid.position(x))).collect())
            .collect();
        let n = psis.len();
        Self {
            psis,
            trig,
            flux,
            horizon,
            acc: vec![0.0; n],
            last: None,
            cell: 1.0 / grid.sites() as f64,
        }
    }

    /// Space integrand at time `t` for every ψ.
    fn integrand(&self, t: f64, w: &[f64]) -> Vec<f64> {
        let time = (self.horizon - t) / self.horizon;
        let dtime = -1.0 / self.horizon;
        self.psis
            .iter()
            .zip(&self.trig)
            .map(|(p, trig)| {
                let lap = -4.0 * PI * PI * p.wave_sq();
                let s: f64 = w
                    .iter()
                    .zip(trig)
                    .map(|(&v, &g)| v * dtime * g + self.flux.eval(v) * time * lap * g)
                    .sum();
                s * self.cell
            })
            .collect()
    }

    pub fn observe(&mut self, t: f64, w: &[f64]) {
        let now = self.integrand(t, w);
        match &self.last {
            None => {
                // initial-data term ∫ w₀ ψ(0)
                for (a, trig) in self.acc.iter_mut().zip(&self.trig) {
                    *a += w.iter().zip(trig).map(|(v, g)| v * g).sum::<f64>() * self.cell;
                }
            }
            Some((t_prev, prev)) => {
                let h = t - t_prev;
                for ((a, p), q) in self.acc.iter_mut().zip(prev).zip(&now) {
                    *a += 0.5 * h * (p + q);
                }
            }
        }
        self.last = Some((t, now));
    }

    /// `(ψ, |residual|)` pairs.
    pub fn finish(self) -> Vec<(WeakTestFunction, f64)> {
        self.psis.into_iter().zip(self.acc.into_iter().map(f64::abs)).collect()
    }
}

/// Runs the scheme to `horizon` and returns the weak residual for each ψ.
pub fn weak_residual(
    w0: &DensityField,
    horizon: f64,
    flux: &FluxFunction,
    control: &LimitControl,
    psis: Vec<WeakTestFunction>,
) -> Result<Vec<(WeakTestFunction, f64)>> {
    let mut acc = WeakResidual::new(w0.torus(), psis, *flux, horizon);
    solve_limit_observed(w0, horizon, flux, control, &[], |t, w| acc.observe(t, w))?;
    Ok(acc.finish())
}

/// A zero crossing of a one-dimensional grid field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    /// Position in `[0, 1)`.
    pub position: f64,
    /// `∂w` (in the increasing-`r` direction) on the `w > 0` side.
    pub slope_pos: f64,
    /// `∂w` on the `w ≤ 0` side.
    pub slope_neg: f64,
}

impl Crossing {
    /// `|d₁|s⁺| − d₂|s⁻|| / max(d₁|s⁺|, d₂|s⁻|)`; zero when the fluxes balance.
    pub fn flux_imbalance(&self, d1: f64, d2: f64) -> f64 {
        let a = d1 * self.slope_pos.abs();
        let b = d2 * self.slope_neg.abs();
        let scale = a.max(b);
        if scale == 0.0 {
            0.0
        } else {
            (a - b).abs() / scale
        }
    }
}

/// Sign changes of `w` between neighbouring cells, located by linear
/// interpolation. Slopes are one-cell differences just outside the
/// crossing interval.
pub fn interface_extract_1d(w: &DensityField) -> Result<Vec<Crossing>> {
    let grid = w.torus();
    if grid.dim() != 1 {
        return Err(Error::InvalidLattice(format!(
            "interface extraction needs d = 1, got d = {}",
            grid.dim()
        )));
    }
    let m = grid.side();
    let v = w.values();
    let at = |i: isize| v[i.rem_euclid(m as isize) as usize];
    let mf = m as f64;
    let mut out = Vec::new();
    for x in 0..m {
        let (a, b) = (v[x], v[(x + 1) % m]);
        if (a > 0.0) == (b > 0.0) {
            continue;
        }
        let frac = a / (a - b);
        let xi = x as isize;
        let left = mf * (at(xi) - at(xi - 1));
        let right = mf * (at(xi + 2) - at(xi + 1));
        let (slope_pos, slope_neg) = if a > 0.0 { (left, right) } else { (right, left) };
        out.push(Crossing {
            position: ((x as f64 + frac) / mf).rem_euclid(1.0),
            slope_pos,
            slope_neg,
        });
    }
    Ok(out)
}

/// `(u₁, u₂) = (w⁺, w⁻)`.
pub fn segregated_densities(w: &DensityField) -> [DensityField; 2] {
    let t = *w.torus();
    let pos = w.values().iter().map(|v| v.max(0.0)).collect();
    let neg = w.values().iter().map(|v| (-v).max(0.0)).collect();
    [
        DensityField::new(t, pos).expect("same length"),
        DensityField::new(t, neg).expect("same length"),
    ]
}
