//! Built-in initial-data profiles and test functions, addressable by name
//! from configs and the command line.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lattice::{DensityField, Torus};

/// Smooth test function on `[0, 1)^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFunction {
    /// `φ ≡ 1`
    One,
    /// `cos(2π k r₁)`
    Cos(u32),
    /// `sin(2π k r₁)`
    Sin(u32),
    /// `C^∞` bump of half-width 1/4 centred at `r₁ = 1/2`, peak value 1.
    Bump,
}

impl TestFunction {
    pub const BUILTIN: [TestFunction; 6] = [
        TestFunction::One,
        TestFunction::Cos(1),
        TestFunction::Sin(1),
        TestFunction::Cos(2),
        TestFunction::Sin(2),
        TestFunction::Bump,
    ];

    pub fn eval(&self, r: &[f64]) -> f64 {
        match *self {
            TestFunction::One => 1.0,
            TestFunction::Cos(k) => (2.0 * PI * k as f64 * r[0]).cos(),
            TestFunction::Sin(k) => (2.0 * PI * k as f64 * r[0]).sin(),
            TestFunction::Bump => {
                let z = 4.0 * (r[0].rem_euclid(1.0) - 0.5);
                if z.abs() >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - z * z)).exp()
                }
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        1.0
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunction::One => write!(f, "one"),
            TestFunction::Cos(k) => write!(f, "cos{k}"),
            TestFunction::Sin(k) => write!(f, "sin{k}"),
            TestFunction::Bump => write!(f, "bump"),
        }
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mode = |rest: &str| {
            rest.parse::<u32>()
                .ok()
                .filter(|&k| k > 0)
                .ok_or_else(|| Error::Config(format!("unknown test function {s:?}")))
        };
        match s {
            "one" => Ok(TestFunction::One),
            "bump" => Ok(TestFunction::Bump),
            _ if s.starts_with("cos") => Ok(TestFunction::Cos(mode(&s[3..])?)),
            _ if s.starts_with("sin") => Ok(TestFunction::Sin(mode(&s[3..])?)),
            _ => Err(Error::Config(format!("unknown test function {s:?}"))),
        }
    }
}

/// Initial densities `(u₁, u₂)` as functions of the macroscopic position.
///
/// Every profile keeps both densities inside `[floor, c₂]` with `c₂ < 1`, so
/// the lower bound `e^{-c₁K} ≤ u` holds with `c₁ = -ln(floor)/K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    Constant { u1: f64, u2: f64 },
    /// `u_i = mean_i + amp_i sin(2π r₁)`.
    Sine {
        mean1: f64,
        amp1: f64,
        mean2: f64,
        amp2: f64,
    },
    /// `w₀ = offset + amp sin(2π r₁)`, split as `u₁ = floor + w₀⁺`, `u₂ = floor + w₀⁻`.
    SignedSine { offset: f64, amp: f64, floor: f64 },
    /// `w₀ = ±level` on `[1/4, 3/4)` and its complement, ramped linearly over
    /// one lattice cell of width `1/cells` at each interface.
    Step { level: f64, floor: f64, cells: usize },
    /// Species 1 bump at `r₁ = 1/4`, species 2 bump at `r₁ = 3/4`.
    TwoBump { height: f64, floor: f64 },
}

impl Profile {
    pub fn from_name(name: &str, side: usize) -> Result<Self> {
        match name {
            "constant" => Ok(Profile::Constant { u1: 0.5, u2: 0.5 }),
            "sine" => Ok(Profile::Sine {
                mean1: 0.4,
                amp1: 0.2,
                mean2: 0.4,
                amp2: -0.2,
            }),
            "signed-sine" => Ok(Profile::SignedSine {
                offset: 0.0,
                amp: 0.6,
                floor: 0.01,
            }),
            "step" => Ok(Profile::Step {
                level: 0.6,
                floor: 0.01,
                cells: side,
            }),
            "two-bump" => Ok(Profile::TwoBump {
                height: 0.8,
                floor: 0.01,
            }),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }

    pub const NAMES: [&'static str; 5] = ["constant", "sine", "signed-sine", "step", "two-bump"];

    /// `(u₁(r), u₂(r))`.
    pub fn densities(&self, r: &[f64]) -> (f64, f64) {
        let s = r[0].rem_euclid(1.0);
        match *self {
            Profile::Constant { u1, u2 } => (u1, u2),
            Profile::Sine {
                mean1,
                amp1,
                mean2,
                amp2,
            } => {
                let v = (2.0 * PI * s).sin();
                (mean1 + amp1 * v, mean2 + amp2 * v)
            }
            Profile::SignedSine { offset, amp, floor } => {
                split(offset + amp * (2.0 * PI * s).sin(), floor)
            }
            Profile::Step {
                level,
                floor,
                cells,
            } => {
                let h = 1.0 / cells as f64;
                // signed distance to the nearer interface, positive inside [1/4, 3/4)
                let z = (s - 0.25).min(0.75 - s);
                let ramp = (z / h + 0.5).clamp(0.0, 1.0);
                split(level * (2.0 * ramp - 1.0), floor)
            }
            Profile::TwoBump { height, floor } => {
                let bump = |c: f64| {
                    let z = (s - c).abs().min(1.0 - (s - c).abs()) / 0.2;
                    if z >= 1.0 {
                        0.0
                    } else {
                        (0.5 * PI * z).cos().powi(2)
                    }
                };
                (floor + height * bump(0.25), floor + height * bump(0.75))
            }
        }
    }

    /// `w₀(r) = u₁(r) - u₂(r)`.
    pub fn signed(&self, r: &[f64]) -> f64 {
        let (a, b) = self.densities(r);
        a - b
    }

    pub fn sample(&self, torus: Torus) -> [DensityField; 2] {
        [
            DensityField::from_profile(torus, |r| self.densities(r).0),
            DensityField::from_profile(torus, |r| self.densities(r).1),
        ]
    }
}

fn split(w: f64, floor: f64) -> (f64, f64) {
    (floor + w.max(0.0), floor + (-w).max(0.0))
}
