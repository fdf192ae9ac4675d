//! Adaptive Dormand–Prince 5(4) integrator for large linear-ish systems
//! (master equations) where only a right-hand-side callback is available.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-13,
        }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// fifth-order weights minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `y' = f(t, y)` from `t0` and returns the state at each of the
/// sorted `times` (all `>= t0`). Steps are shortened to land exactly on
/// every requested time.
pub fn dopri5<F>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    times: &[f64],
    tol: Tolerance,
    max_steps: usize,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if times.windows(2).any(|w| w[0] > w[1]) || times.first().is_some_and(|&t| t < t0) {
        return Err(Error::Integration("output times must be sorted and >= t0".into()));
    }
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut out = Vec::with_capacity(times.len());

    f(t, &y, &mut k[0]);
    let mut h = initial_step(&y, &k[0], tol, times.last().map_or(0.0, |&te| te - t0));
    let mut steps = 0usize;

    for &target in times {
        while t < target {
            if steps >= max_steps {
                return Err(Error::Integration(format!(
                    "exceeded {max_steps} steps before t = {target}"
                )));
            }
            let last = t + h >= target;
            let h_try = if last { target - t } else { h };
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = y[i];
                    for (j, kj) in k.iter().enumerate().take(s) {
                        let a = A[s][j];
                        if a != 0.0 {
                            acc += h_try * a * kj[i];
                        }
                    }
                    stage[i] = acc;
                }
                let (head, tail) = k.split_at_mut(s);
                let _ = head;
                f(t + C[s] * h_try, &stage, &mut tail[0]);
                if s == 6 {
                    y_new.copy_from_slice(&stage);
                }
            }
            // error estimate with stage 7 = f(t + h, y_new)
            let mut err_sq = 0.0;
            for i in 0..n {
                let mut e = 0.0;
                for (j, kj) in k.iter().enumerate() {
                    e += E[j] * kj[i];
                }
                let scale = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
                let r = h_try * e / scale;
                err_sq += r * r;
            }
            let err = (err_sq / n.max(1) as f64).sqrt();
            steps += 1;
            if !err.is_finite() {
                return Err(Error::Integration("non-finite error estimate".into()));
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                t = if last { target } else { t + h_try };
                std::mem::swap(&mut y, &mut y_new);
                // FSAL: last stage is the derivative at the new point
                let (first, rest) = k.split_at_mut(1);
                first[0].copy_from_slice(&rest[5]);
                if !last {
                    h = h_try * factor;
                } else {
                    h = h.max(h_try * factor).min(h * 5.0);
                }
            } else {
                h = h_try * factor.min(1.0);
                if h < 1e-15 * t.abs().max(1.0) {
                    return Err(Error::Integration(format!("step size underflow at t = {t}")));
                }
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

fn initial_step(y: &[f64], dy: &[f64], tol: Tolerance, span: f64) -> f64 {
    let n = y.len().max(1) as f64;
    let d0 = (y.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let d1 = (dy
        .iter()
        .zip(y)
        .map(|(d, v)| {
            let s = tol.atol + tol.rtol * v.abs();
            (d / s).powi(2)
        })
        .sum::<f64>()
        / n)
        .sqrt();
    let guess = if d1 > 1e-12 { 0.01 / d1 } else { 1e-3 };
    let guess = if d0 > 0.0 { guess } else { guess.min(1e-3) };
    if span > 0.0 {
        guess.min(span)
    } else {
        guess
    }
}
