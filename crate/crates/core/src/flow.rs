//! Averaging kernels on boxes, flows between a point mass and an averaging
//! kernel, local block averages, the telescoping identity that replaces the
//! reaction term by its block-averaged version, and the quadratic-exponential
//! concentration bound for sums of bounded variables.

use std::sync::Arc;

use rand::Rng;
use rustdct::{DctPlanner, TransformType2And3};

use crate::error::{Error, Result};
use crate::lattice::{DensityField, PairConfig, Species, Torus};
use crate::stats::log_sum_exp;

/// Where the uniform block starts: `{offset, …, offset + ℓ − 1}^d`.
///
/// Offset 0 is the block used for local averages; offset 1 reproduces the
/// one-dimensional closed forms with support starting at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragingKernel {
    ell: usize,
    dim: usize,
    offset: usize,
    /// one-axis factors on `0..box_side`
    p_axis: Vec<f64>,
    q_axis: Vec<f64>,
}

impl AveragingKernel {
    /// `p_ℓ` uniform on the block, `q_ℓ = p_ℓ * p_ℓ` by direct convolution.
    pub fn new(ell: usize, dim: usize, offset: usize) -> Result<Self> {
        if ell == 0 {
            return Err(Error::InvalidParameter("block size must be >= 1".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        let side = 2 * ell + offset;
        let mut p_axis = vec![0.0; side];
        for v in &mut p_axis[offset..offset + ell] {
            *v = 1.0 / ell as f64;
        }
        let mut q_axis = vec![0.0; side];
        for (a, &pa) in p_axis.iter().enumerate() {
            for (b, &pb) in p_axis.iter().enumerate() {
                if pa != 0.0 && pb != 0.0 {
                    q_axis[a + b] += pa * pb;
                }
            }
        }
        Ok(Self {
            ell,
            dim,
            offset,
            p_axis,
            q_axis,
        })
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Side of the box carrying the flow: `2ℓ + offset`.
    pub fn box_side(&self) -> usize {
        self.p_axis.len()
    }

    pub fn p_axis(&self) -> &[f64] {
        &self.p_axis
    }

    pub fn q_axis(&self) -> &[f64] {
        &self.q_axis
    }

    /// `p_ℓ(x)` for `x` in box coordinates (zero outside the box).
    pub fn p(&self, x: &[usize]) -> f64 {
        x.iter().map(|&c| self.p_axis.get(c).copied().unwrap_or(0.0)).product()
    }

    pub fn q(&self, x: &[usize]) -> f64 {
        x.iter().map(|&c| self.q_axis.get(c).copied().unwrap_or(0.0)).product()
    }

    fn target_axis(&self, target: FlowTarget) -> &[f64] {
        match target {
            FlowTarget::Single => &self.p_axis,
            FlowTarget::Double => &self.q_axis,
        }
    }
}

pub fn build_kernels(ell: usize, dim: usize, offset: usize) -> Result<AveragingKernel> {
    AveragingKernel::new(ell, dim, offset)
}

/// Which kernel the flow drains into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowTarget {
    /// `p_ℓ`
    Single,
    /// `q_ℓ = p_ℓ * p_ℓ`
    Double,
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    /// `Φ(x, x+1)` for `x = 0..side−1` (one dimension).
    Edges(Vec<f64>),
    /// `Φ(x, x+e_j) = φ(x) − φ(x+e_j)` inside the box.
    Potential(Vec<f64>),
}

/// Antisymmetric edge function on the box `{0, …, L−1}^d` with
/// `Σ_z Φ(x, z) = δ₀(x) − target(x)`; edges leaving the box carry nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeFlow {
    kernel: AveragingKernel,
    target: FlowTarget,
    side: usize,
    repr: Repr,
}

impl LatticeFlow {
    pub fn kernel(&self) -> &AveragingKernel {
        &self.kernel
    }

    pub fn target(&self) -> FlowTarget {
        self.target
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim
    }

    pub fn box_side(&self) -> usize {
        self.side
    }

    pub fn box_sites(&self) -> usize {
        self.side.pow(self.dim() as u32)
    }

    fn stride(&self, axis: usize) -> usize {
        self.side.pow((self.dim() - 1 - axis) as u32)
    }

    /// Box coordinates of a box index, first axis slowest.
    pub fn box_coords(&self, index: usize) -> Vec<usize> {
        (0..self.dim())
            .map(|a| (index / self.stride(a)) % self.side)
            .collect()
    }

    /// `Φ(y, y + e_axis)` for box index `y`; zero if `y + e_axis` leaves the box.
    pub fn edge(&self, y: usize, axis: usize) -> f64 {
        let c = (y / self.stride(axis)) % self.side;
        if c + 1 >= self.side {
            return 0.0;
        }
        match &self.repr {
            Repr::Edges(e) => e[y],
            Repr::Potential(phi) => phi[y] - phi[y + self.stride(axis)],
        }
    }

    /// `max_x |Σ_z Φ(x, z) − (δ₀(x) − target(x))|` over the box.
    pub fn divergence_defect(&self) -> f64 {
        let axis_target = self.kernel.target_axis(self.target);
        let mut worst: f64 = 0.0;
        for y in 0..self.box_sites() {
            let coords = self.box_coords(y);
            let mut div = 0.0;
            for (a, &c) in coords.iter().enumerate() {
                div += self.edge(y, a);
                if c > 0 {
                    div -= self.edge(y - self.stride(a), a);
                }
            }
            let target: f64 = coords.iter().map(|&c| axis_target[c]).product();
            let source = if coords.iter().all(|&c| c == 0) { 1.0 } else { 0.0 };
            worst = worst.max((div - (source - target)).abs());
        }
        worst
    }

    /// `Σ_x Σ_j Φ(x, x+e_j)²` over all box edges.
    pub fn energy(&self) -> f64 {
        let mut acc = 0.0;
        for y in 0..self.box_sites() {
            for a in 0..self.dim() {
                let e = self.edge(y, a);
                acc += e * e;
            }
        }
        acc
    }

    /// Writes `x_index,direction,value` for every box edge `(x, x + e_direction)`.
    pub fn write_dump<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        for y in 0..self.box_sites() {
            for a in 0..self.dim() {
                if (y / self.stride(a)) % self.side + 1 < self.side {
                    writeln!(out, "{y},{a},{}", self.edge(y, a))?;
                }
            }
        }
        Ok(())
    }
}

/// Energy normalization: `ℓ` for `d = 1`, `log ℓ` for `d = 2`, `1` beyond.
pub fn energy_scale(dim: usize, ell: usize) -> f64 {
    match dim {
        1 => ell as f64,
        2 => (ell as f64).ln(),
        _ => 1.0,
    }
}

/// Flow from `δ₀` to the chosen kernel.
///
/// In one dimension the single-kernel flow is `1 − CDF_p`, and the
/// double-kernel flow is assembled as `Φ_p + Σ_a p(a) τ_a Φ_p`. In higher
/// dimensions the minimum-energy flow is the gradient of the Neumann
/// Poisson potential on the box, obtained with a cosine transform.
pub fn build_flow(kernel: &AveragingKernel, target: FlowTarget) -> Result<LatticeFlow> {
    let side = kernel.box_side();
    let repr = if kernel.dim == 1 {
        let single = single_flow_1d(&kernel.p_axis);
        Repr::Edges(match target {
            FlowTarget::Single => single,
            FlowTarget::Double => {
                let mut out = single.clone();
                for (a, &pa) in kernel.p_axis.iter().enumerate() {
                    if pa == 0.0 {
                        continue;
                    }
                    for x in a..side {
                        out[x] += pa * single[x - a];
                    }
                }
                out
            }
        })
    } else {
        Repr::Potential(neumann_potential(kernel, target)?)
    };
    let flow = LatticeFlow {
        kernel: kernel.clone(),
        target,
        side,
        repr,
    };
    let defect = flow.divergence_defect();
    if defect > 1e-12 {
        return Err(Error::Integration(format!(
            "flow divergence defect {defect:e} exceeds 1e-12"
        )));
    }
    Ok(flow)
}

/// `Φ(x, x+1) = 1 − Σ_{y ≤ x} p(y)`, with the last edge leaving the box zeroed.
fn single_flow_1d(p: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    let mut mass = 1.0;
    for (x, &px) in p.iter().enumerate() {
        mass -= px;
        out[x] = mass;
    }
    // exact zeros once all mass is past
    let last = p.iter().rposition(|&v| v != 0.0).unwrap_or(0);
    for v in &mut out[last..] {
        *v = 0.0;
    }
    out
}

/// Solves `Σ_{z∼x} (φ(x) − φ(z)) = δ₀(x) − target(x)` on the box with
/// reflecting boundary, then applies one step of iterative refinement.
fn neumann_potential(kernel: &AveragingKernel, target: FlowTarget) -> Result<Vec<f64>> {
    let side = kernel.box_side();
    let dim = kernel.dim;
    let sites = side
        .checked_pow(dim as u32)
        .ok_or_else(|| Error::InvalidParameter("flow box too large".into()))?;
    let axis_target = kernel.target_axis(target).to_vec();
    let mut planner = DctPlanner::new();
    let dct = planner.plan_dct2(side);
    let eig: Vec<f64> = (0..side)
        .map(|k| 2.0 * (1.0 - (std::f64::consts::PI * k as f64 / side as f64).cos()))
        .collect();

    let rhs = |coords: &[usize]| -> f64 {
        let t: f64 = coords.iter().map(|&c| axis_target[c]).product();
        let s = if coords.iter().all(|&c| c == 0) { 1.0 } else { 0.0 };
        s - t
    };
    let coords_of = |mut i: usize, buf: &mut [usize]| {
        for a in (0..dim).rev() {
            buf[a] = i % side;
            i /= side;
        }
    };

    let mut phi = vec![0.0; sites];
    let mut buf = vec![0usize; dim];
    for (i, v) in phi.iter_mut().enumerate() {
        coords_of(i, &mut buf);
        *v = rhs(&buf);
    }
    solve_neumann(&mut phi, side, dim, &dct, &eig);

    // refinement, only when needed since it doubles the memory footprint
    let mut worst: f64 = 0.0;
    for i in 0..sites {
        coords_of(i, &mut buf);
        worst = worst.max((rhs(&buf) - apply_box_laplacian(&phi, i, &buf, side)).abs());
    }
    if worst > 1e-14 {
        let mut resid = vec![0.0; sites];
        for (i, r) in resid.iter_mut().enumerate() {
            coords_of(i, &mut buf);
            *r = rhs(&buf) - apply_box_laplacian(&phi, i, &buf, side);
        }
        solve_neumann(&mut resid, side, dim, &dct, &eig);
        for (p, d) in phi.iter_mut().zip(&resid) {
            *p += d;
        }
    }
    Ok(phi)
}

/// `Σ_{z∼x in box} (φ(x) − φ(z))`.
fn apply_box_laplacian(phi: &[f64], i: usize, coords: &[usize], side: usize) -> f64 {
    let dim = coords.len();
    let mut acc = 0.0;
    let mut stride = 1;
    for a in (0..dim).rev() {
        let c = coords[a];
        if c > 0 {
            acc += phi[i] - phi[i - stride];
        }
        if c + 1 < side {
            acc += phi[i] - phi[i + stride];
        }
        stride *= side;
    }
    acc
}

/// In place: `data ← L⁺ data` for the reflecting box Laplacian, with the
/// constant mode set to zero.
fn solve_neumann(
    data: &mut [f64],
    side: usize,
    dim: usize,
    dct: &Arc<dyn TransformType2And3<f64>>,
    eig: &[f64],
) {
    let mut scratch = vec![0.0; dct.get_scratch_len()];
    along_axes(data, side, dim, |line| {
        dct.process_dct2_with_scratch(line, &mut scratch)
    });
    let norm = (2.0 / side as f64).powi(dim as i32);
    let mut k = vec![0usize; dim];
    for v in data.iter_mut() {
        let lambda: f64 = k.iter().map(|&j| eig[j]).sum();
        *v = if lambda == 0.0 { 0.0 } else { *v / lambda * norm };
        for a in (0..dim).rev() {
            k[a] += 1;
            if k[a] < side {
                break;
            }
            k[a] = 0;
        }
    }
    let mut scratch = vec![0.0; dct.get_scratch_len()];
    along_axes(data, side, dim, |line| {
        dct.process_dct3_with_scratch(line, &mut scratch)
    });
}

/// Applies `transform` to every line along every axis of a `side^dim` array,
/// gathering strided lines in cache-friendly batches.
fn along_axes(data: &mut [f64], side: usize, dim: usize, mut transform: impl FnMut(&mut [f64])) {
    const BATCH: usize = 64;
    let mut lines = vec![0.0; BATCH * side];
    for a in 0..dim {
        let stride = side.pow((dim - 1 - a) as u32);
        let block = stride * side;
        for start in (0..data.len()).step_by(block) {
            if stride == 1 {
                transform(&mut data[start..start + side]);
                continue;
            }
            let mut inner = 0;
            while inner < stride {
                let width = BATCH.min(stride - inner);
                for j in 0..side {
                    let row = start + j * stride + inner;
                    for w in 0..width {
                        lines[w * side + j] = data[row + w];
                    }
                }
                for w in 0..width {
                    transform(&mut lines[w * side..(w + 1) * side]);
                }
                for j in 0..side {
                    let row = start + j * stride + inner;
                    for w in 0..width {
                        data[row + w] = lines[w * side + j];
                    }
                }
                inner += width;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `ℓ^{-d} Σ_{y ∈ Λ_ℓ} g(x − y)`
    Left,
    /// `ℓ^{-d} Σ_{y ∈ Λ_ℓ} g(x + y)`
    Right,
}

/// Mean of `g` over the block `x ∓ Λ_ℓ`, `Λ_ℓ = {0, …, ℓ−1}^d`, with wraparound.
pub fn local_average(g: &DensityField, x: usize, ell: usize, direction: Direction) -> Result<f64> {
    let t = g.torus();
    if ell == 0 || ell > t.side() {
        return Err(Error::InvalidParameter(format!(
            "block size {ell} must lie in 1..={}",
            t.side()
        )));
    }
    let sign: isize = match direction {
        Direction::Left => -1,
        Direction::Right => 1,
    };
    let offsets = block_offsets(ell, t.dim());
    let sum: f64 = offsets
        .iter()
        .map(|o| {
            let shift: Vec<isize> = o.iter().map(|&c| sign * c as isize).collect();
            g.get(t.translate(x, &shift))
        })
        .sum();
    Ok(sum / offsets.len() as f64)
}

fn block_offsets(ell: usize, dim: usize) -> Vec<Vec<usize>> {
    let count = ell.pow(dim as u32);
    (0..count)
        .map(|mut i| {
            let mut c = vec![0; dim];
            for a in (0..dim).rev() {
                c[a] = i % ell;
                i /= ell;
            }
            c
        })
        .collect()
}

/// `ω_x = (σ_x − u(x)) / (u(x)(1 − u(x)))`.
pub fn omega(sigma: &[u8], u: &DensityField) -> Result<Vec<f64>> {
    check_open(u)?;
    Ok(sigma
        .iter()
        .zip(u.values())
        .map(|(&s, &v)| (s as f64 - v) / (v * (1.0 - v)))
        .collect())
}

/// `ω̃₁ = (u₁ + u₂ − 1) u₁ u₂ ω₁`.
pub fn omega_tilde(sigma1: &[u8], u1: &DensityField, u2: &DensityField) -> Result<Vec<f64>> {
    let w = omega(sigma1, u1)?;
    check_open(u2)?;
    Ok(w.iter()
        .zip(u1.values().iter().zip(u2.values()))
        .map(|(o, (&a, &b))| (a + b - 1.0) * a * b * o)
        .collect())
}

fn check_open(u: &DensityField) -> Result<()> {
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
    Ok(())
}

/// `h_x^j = Σ_{y, y+e_j ∈ box} ω̃₁(x + y + e_j) Φ(y, y + e_j)`.
pub fn h_field(
    sigma1: &[u8],
    u1: &DensityField,
    u2: &DensityField,
    flow: &LatticeFlow,
    x: usize,
    axis: usize,
) -> Result<f64> {
    let wt = omega_tilde(sigma1, u1, u2)?;
    check_flow_fits(u1.torus(), flow)?;
    Ok(h_from_weights(&wt, u1.torus(), flow, x, axis))
}

fn check_flow_fits(t: &Torus, flow: &LatticeFlow) -> Result<()> {
    if flow.dim() != t.dim() || flow.box_side() > t.side() {
        return Err(Error::InvalidParameter(format!(
            "flow box {}^{} does not fit in the torus {}^{}",
            flow.box_side(),
            flow.dim(),
            t.side(),
            t.dim()
        )));
    }
    Ok(())
}

fn h_from_weights(wt: &[f64], t: &Torus, flow: &LatticeFlow, x: usize, axis: usize) -> f64 {
    let base = t.forward(x, axis);
    let mut acc = 0.0;
    for y in 0..flow.box_sites() {
        let e = flow.edge(y, axis);
        if e == 0.0 {
            continue;
        }
        let shift: Vec<isize> = flow.box_coords(y).iter().map(|&c| c as isize).collect();
        acc += wt[t.translate(base, &shift)] * e;
    }
    acc
}

/// Each side of `V − V^ℓ = K Σ_j Σ_x h_x^j (ω₂(x+e_j) − ω₂(x))`, evaluated
/// independently.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelescopingReport {
    /// `K Σ_x ω̃₁(x) ω₂(x)`
    pub v: f64,
    /// `K Σ_x →(ω̃₁)_x ←(ω₂)_x`, from block averages
    pub v_ell: f64,
    /// `K Σ_x ω̃₁(x) (ω₂ * q_ℓ)(x)`, from the kernel
    pub v_ell_conv: f64,
    /// the flow side
    pub rhs: f64,
}

impl TelescopingReport {
    pub fn lhs(&self) -> f64 {
        self.v - self.v_ell
    }

    /// Largest disagreement among the three evaluations.
    pub fn defect(&self) -> f64 {
        (self.lhs() - self.rhs)
            .abs()
            .max((self.v_ell - self.v_ell_conv).abs())
    }
}

pub fn telescoping_check(
    config: &PairConfig,
    u1: &DensityField,
    u2: &DensityField,
    kill_rate: f64,
    flow: &LatticeFlow,
) -> Result<TelescopingReport> {
    let t = config.torus();
    if u1.torus() != t || u2.torus() != t {
        return Err(Error::InvalidLattice("fields and configuration differ in shape".into()));
    }
    let kernel = flow.kernel();
    if kernel.offset() != 0 || flow.target() != FlowTarget::Double {
        return Err(Error::InvalidParameter(
            "telescoping needs the double-kernel flow on blocks starting at 0".into(),
        ));
    }
    check_flow_fits(t, flow)?;
    let ell = kernel.ell();
    let wt = omega_tilde(config.sigma(Species::First), u1, u2)?;
    let w2 = omega(config.sigma(Species::Second), u2)?;
    let n = t.sites();

    let v = kill_rate * wt.iter().zip(&w2).map(|(a, b)| a * b).sum::<f64>();

    let wt_field = DensityField::new(*t, wt.clone())?;
    let w2_field = DensityField::new(*t, w2.clone())?;
    let mut v_ell = 0.0;
    for x in 0..n {
        v_ell += local_average(&wt_field, x, ell, Direction::Right)?
            * local_average(&w2_field, x, ell, Direction::Left)?;
    }
    v_ell *= kill_rate;

    let qbox = flow.box_sites();
    let mut v_ell_conv = 0.0;
    for y in 0..n {
        let mut conv = 0.0;
        for z in 0..qbox {
            let zc = flow.box_coords(z);
            let q = kernel.q(&zc);
            if q == 0.0 {
                continue;
            }
            let shift: Vec<isize> = zc.iter().map(|&c| -(c as isize)).collect();
            conv += w2[t.translate(y, &shift)] * q;
        }
        v_ell_conv += wt[y] * conv;
    }
    v_ell_conv *= kill_rate;

    let mut rhs = 0.0;
    for axis in 0..t.dim() {
        for x in 0..n {
            let h = h_from_weights(&wt, t, flow, x, axis);
            rhs += h * (w2[t.forward(x, axis)] - w2[x]);
        }
    }
    rhs *= kill_rate;

    Ok(TelescopingReport {
        v,
        v_ell,
        v_ell_conv,
        rhs,
    })
}

/// A variable taking `lo` with probability `1 − p_hi` and `hi` with `p_hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPoint {
    pub lo: f64,
    pub hi: f64,
    pub p_hi: f64,
}

impl TwoPoint {
    pub fn bernoulli(p: f64) -> Self {
        Self {
            lo: 0.0,
            hi: 1.0,
            p_hi: p,
        }
    }

    fn mean(&self) -> f64 {
        self.lo + self.p_hi * (self.hi - self.lo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentrationResult {
    /// `log E exp(γ (Σ (X_i − E X_i))²)`, exact or estimated
    pub lhs: f64,
    /// `2γκ`
    pub rhs: f64,
    /// For Monte Carlo: a one-sided 1 − α upper confidence bound on `lhs`.
    pub lhs_upper: f64,
}

impl ConcentrationResult {
    pub fn holds(&self) -> bool {
        self.lhs_upper <= self.rhs + 1e-12
    }
}

/// `κ = Σ (b_i − a_i)²`.
pub fn kappa(vars: &[TwoPoint]) -> f64 {
    vars.iter().map(|v| (v.hi - v.lo).powi(2)).sum()
}

fn check_gamma(vars: &[TwoPoint], gamma: f64) -> Result<f64> {
    let k = kappa(vars);
    if vars.iter().any(|v| !(0.0..=1.0).contains(&v.p_hi) || v.hi < v.lo) {
        return Err(Error::InvalidParameter("bad two-point variable".into()));
    }
    if !(gamma >= 0.0) || gamma * k > 1.0 + 1e-15 {
        return Err(Error::InvalidParameter(format!(
            "gamma = {gamma} must lie in [0, 1/kappa] with kappa = {k}"
        )));
    }
    Ok(k)
}

/// Exact expectation over all `2^n` outcomes (`n ≤ 20`).
pub fn concentration_exact(vars: &[TwoPoint], gamma: f64) -> Result<ConcentrationResult> {
    let k = check_gamma(vars, gamma)?;
    let n = vars.len();
    if n > 20 {
        return Err(Error::StateSpaceTooLarge {
            sites: n,
            budget: 20,
        });
    }
    let means: Vec<f64> = vars.iter().map(TwoPoint::mean).collect();
    let mut terms = Vec::with_capacity(1 << n);
    for mask in 0u32..(1u32 << n) {
        let mut s = 0.0;
        let mut logp = 0.0;
        for (i, v) in vars.iter().enumerate() {
            let (x, p) = if mask >> i & 1 == 1 {
                (v.hi, v.p_hi)
            } else {
                (v.lo, 1.0 - v.p_hi)
            };
            if p == 0.0 {
                logp = f64::NEG_INFINITY;
                break;
            }
            logp += p.ln();
            s += x - means[i];
        }
        if logp > f64::NEG_INFINITY {
            terms.push(logp + gamma * s * s);
        }
    }
    let lhs = log_sum_exp(terms);
    Ok(ConcentrationResult {
        lhs,
        rhs: 2.0 * gamma * k,
        lhs_upper: lhs,
    })
}

/// Sample-mean estimate with a Hoeffding upper confidence bound at level
/// `1 − alpha`, using `exp(γ S²) ∈ [1, exp(γ (Σ(b_i − a_i))²)]`.
pub fn concentration_monte_carlo<R: Rng>(
    vars: &[TwoPoint],
    gamma: f64,
    samples: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<ConcentrationResult> {
    let k = check_gamma(vars, gamma)?;
    if samples == 0 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter("need samples > 0 and alpha in (0, 1)".into()));
    }
    let means: Vec<f64> = vars.iter().map(TwoPoint::mean).collect();
    let mut acc = 0.0;
    for _ in 0..samples {
        let s: f64 = vars
            .iter()
            .zip(&means)
            .map(|(v, m)| {
                let x = if rng.random::<f64>() < v.p_hi { v.hi } else { v.lo };
                x - m
            })
            .sum();
        acc += (gamma * s * s).exp();
    }
    let mean = acc / samples as f64;
    let width: f64 = vars.iter().map(|v| v.hi - v.lo).sum();
    let range = (gamma * width * width).exp() - 1.0;
    let upper = mean + range * ((1.0 / alpha).ln() / (2.0 * samples as f64)).sqrt();
    Ok(ConcentrationResult {
        lhs: mean.ln(),
        rhs: 2.0 * gamma * k,
        lhs_upper: upper.ln(),
    })
}
