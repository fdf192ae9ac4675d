//! Periodic lattice `(Z/NZ)^d`, fields on it, and the nearest-neighbour
//! difference operators used by every other module.
//!
//! Sites are addressed by a row-major linear index over `{0,..,N-1}^d`:
//! the first coordinate is the slowest varying one.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Discrete torus of side `side` in `dim` dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Torus {
    dim: usize,
    side: usize,
    sites: usize,
}

impl Torus {
    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidLattice("dimension must be positive".into()));
        }
        if side < 2 {
            return Err(Error::InvalidLattice(format!(
                "side length must be at least 2, got {side}"
            )));
        }
        let sites = (0..dim)
            .try_fold(1usize, |acc, _| acc.checked_mul(side))
            .ok_or_else(|| Error::InvalidLattice("site count overflows usize".into()))?;
        Ok(Self { dim, side, sites })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    /// Number of sites, `N^d`.
    #[inline]
    pub fn sites(&self) -> usize {
        self.sites
    }

    /// Number of bonds `{x, x + e_j}`; equals `d N^d`.
    #[inline]
    pub fn bonds(&self) -> usize {
        self.sites * self.dim
    }

    /// Index increment for a unit step along `axis`.
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        debug_assert!(axis < self.dim);
        self.side.pow((self.dim - 1 - axis) as u32)
    }

    #[inline]
    pub fn coord(&self, site: usize, axis: usize) -> usize {
        (site / self.stride(axis)) % self.side
    }

    pub fn coords(&self, site: usize) -> Vec<usize> {
        (0..self.dim).map(|a| self.coord(site, a)).collect()
    }

    /// Linear index of a coordinate vector; coordinates are reduced mod `N`.
    pub fn index(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.dim);
        coords
            .iter()
            .fold(0usize, |acc, &c| acc * self.side + c % self.side)
    }

    /// `x + e_axis` with wraparound.
    #[inline]
    pub fn forward(&self, site: usize, axis: usize) -> usize {
        let stride = self.stride(axis);
        if (site / stride) % self.side == self.side - 1 {
            site + stride - self.side * stride
        } else {
            site + stride
        }
    }

    /// `x - e_axis` with wraparound.
    #[inline]
    pub fn backward(&self, site: usize, axis: usize) -> usize {
        let stride = self.stride(axis);
        if (site / stride) % self.side == 0 {
            site + self.side * stride - stride
        } else {
            site - stride
        }
    }

    /// Translate `site` by an arbitrary (possibly negative) offset vector.
    pub fn translate(&self, site: usize, offset: &[isize]) -> usize {
        debug_assert_eq!(offset.len(), self.dim);
        let n = self.side as isize;
        let mut idx = 0usize;
        for (axis, &o) in offset.iter().enumerate() {
            let c = self.coord(site, axis) as isize;
            idx = idx * self.side + (c + o).rem_euclid(n) as usize;
        }
        idx
    }

    /// The `2d` neighbours of `site`, ordered `x - e_1, x + e_1, ..., x - e_d, x + e_d`.
    /// For `N = 2` both entries of a direction coincide and are listed twice.
    pub fn neighbors(&self, site: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(2 * self.dim);
        for axis in 0..self.dim {
            out.push(self.backward(site, axis));
            out.push(self.forward(site, axis));
        }
        out
    }

    /// Macroscopic position `x / N` of a site, in `[0, 1)^d`.
    pub fn position(&self, site: usize) -> Vec<f64> {
        let n = self.side as f64;
        (0..self.dim)
            .map(|a| self.coord(site, a) as f64 / n)
            .collect()
    }
}

/// Which of the two particle species.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Species {
    First,
    Second,
}

impl Species {
    pub const BOTH: [Species; 2] = [Species::First, Species::Second];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Species::First => 0,
            Species::Second => 1,
        }
    }

    /// 1-based label used in CSV output.
    pub fn label(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_label(label: u8) -> Result<Self> {
        match label {
            1 => Ok(Species::First),
            2 => Ok(Species::Second),
            other => Err(Error::InvalidParameter(format!(
                "species must be 1 or 2, got {other}"
            ))),
        }
    }
}

/// Real field on the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    torus: Torus,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(torus: Torus, values: Vec<f64>) -> Result<Self> {
        if values.len() != torus.sites() {
            return Err(Error::LengthMismatch {
                expected: torus.sites(),
                got: values.len(),
            });
        }
        Ok(Self { torus, values })
    }

    pub fn constant(torus: Torus, value: f64) -> Self {
        Self {
            torus,
            values: vec![value; torus.sites()],
        }
    }

    /// Samples a macroscopic profile `f(r)` at `r = x / N`.
    pub fn from_profile(torus: Torus, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..torus.sites()).map(|x| f(&torus.position(x))).collect();
        Self { torus, values }
    }

    #[inline]
    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, site: usize) -> f64 {
        self.values[site]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Errors on the first site outside `[lo, hi]` (or non-finite).
    pub fn check_range(&self, lo: f64, hi: f64) -> Result<()> {
        for (site, &value) in self.values.iter().enumerate() {
            if !(lo..=hi).contains(&value) {
                return Err(Error::OutOfRange { site, value, lo, hi });
            }
        }
        Ok(())
    }

    /// Largest Euclidean norm of `∇^N u` over the lattice.
    pub fn max_gradient_norm(&self) -> f64 {
        (0..self.torus.sites())
            .map(|x| norm(&discrete_gradient(self, x)))
            .fold(0.0, f64::max)
    }
}

/// Two binary occupation fields `(σ₁, σ₂)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PairConfig {
    torus: Torus,
    sigma: [Vec<u8>; 2],
}

impl PairConfig {
    pub fn new(torus: Torus, sigma1: Vec<u8>, sigma2: Vec<u8>) -> Result<Self> {
        for s in [&sigma1, &sigma2] {
            if s.len() != torus.sites() {
                return Err(Error::LengthMismatch {
                    expected: torus.sites(),
                    got: s.len(),
                });
            }
            if let Some((site, &v)) = s.iter().enumerate().find(|(_, &v)| v > 1) {
                return Err(Error::OutOfRange {
                    site,
                    value: v as f64,
                    lo: 0.0,
                    hi: 1.0,
                });
            }
        }
        Ok(Self {
            torus,
            sigma: [sigma1, sigma2],
        })
    }

    pub fn empty(torus: Torus) -> Self {
        let n = torus.sites();
        Self {
            torus,
            sigma: [vec![0; n], vec![0; n]],
        }
    }

    #[inline]
    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    #[inline]
    pub fn sigma(&self, species: Species) -> &[u8] {
        &self.sigma[species.index()]
    }

    #[inline]
    pub fn get(&self, species: Species, site: usize) -> u8 {
        self.sigma[species.index()][site]
    }

    #[inline]
    pub(crate) fn set(&mut self, species: Species, site: usize, value: u8) {
        self.sigma[species.index()][site] = value;
    }

    /// Particle count `n_i`.
    pub fn count(&self, species: Species) -> usize {
        self.sigma[species.index()]
            .iter()
            .map(|&v| v as usize)
            .sum()
    }

    /// Number of sites with `σ₁ = σ₂ = 1`.
    pub fn doubly_occupied(&self) -> usize {
        self.sigma[0]
            .iter()
            .zip(&self.sigma[1])
            .filter(|(&a, &b)| a == 1 && b == 1)
            .count()
    }

    /// Number of bonds `{x, x + e_j}` whose endpoints disagree for `species`.
    pub fn discrepant_bonds(&self, species: Species) -> usize {
        let s = self.sigma(species);
        let t = &self.torus;
        (0..t.sites())
            .map(|x| {
                (0..t.dim())
                    .filter(|&a| s[x] != s[t.forward(x, a)])
                    .count()
            })
            .sum()
    }

    pub fn as_field(&self, species: Species) -> DensityField {
        DensityField {
            torus: self.torus,
            values: self.sigma(species).iter().map(|&v| v as f64).collect(),
        }
    }
}

/// `Σ_{|y-x|=1} (u(y) - u(x))`; unscaled, so `Δ^N = N² Δ`.
pub fn discrete_laplacian(field: &DensityField, x: usize) -> f64 {
    let t = field.torus();
    let u = field.values();
    let ux = u[x];
    (0..t.dim())
        .map(|a| (u[t.forward(x, a)] - ux) + (u[t.backward(x, a)] - ux))
        .sum()
}

/// Unscaled Laplacian at every site.
pub fn laplacian(field: &DensityField) -> Vec<f64> {
    let mut out = vec![0.0; field.torus().sites()];
    laplacian_into(field.torus(), field.values(), &mut out);
    out
}

pub(crate) fn laplacian_into(t: &Torus, u: &[f64], out: &mut [f64]) {
    if t.dim() == 1 {
        let n = u.len();
        for x in 0..n {
            let left = if x == 0 { u[n - 1] } else { u[x - 1] };
            let right = if x + 1 == n { u[0] } else { u[x + 1] };
            out[x] = left + right - 2.0 * u[x];
        }
        return;
    }
    for (x, o) in out.iter_mut().enumerate() {
        let ux = u[x];
        *o = (0..t.dim())
            .map(|a| (u[t.forward(x, a)] - ux) + (u[t.backward(x, a)] - ux))
            .sum();
    }
}

/// `∇^N u(x) = {N (u(x + e_j) - u(x))}_j`.
pub fn discrete_gradient(field: &DensityField, x: usize) -> Vec<f64> {
    gradient_scaled(field, x, field.torus().side() as f64)
}

/// Forward difference with an arbitrary prefactor; `scale = 1` gives `∇¹`.
pub fn gradient_scaled(field: &DensityField, x: usize, scale: f64) -> Vec<f64> {
    let t = field.torus();
    let u = field.values();
    (0..t.dim())
        .map(|a| scale * (u[t.forward(x, a)] - u[x]))
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// A field read back from the text snapshot format.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub torus: Torus,
    pub species: String,
    pub values: Vec<f64>,
}

/// Writes the header line `d,N,species` followed by one `index,value` line per site.
pub fn write_snapshot<W: Write>(
    mut out: W,
    torus: &Torus,
    species: &str,
    values: &[f64],
) -> Result<()> {
    if values.len() != torus.sites() {
        return Err(Error::LengthMismatch {
            expected: torus.sites(),
            got: values.len(),
        });
    }
    if species.contains([',', '\n']) {
        return Err(Error::InvalidParameter(format!(
            "species label {species:?} may not contain ',' or newlines"
        )));
    }
    writeln!(out, "{},{},{}", torus.dim(), torus.side(), species)?;
    for (i, v) in values.iter().enumerate() {
        writeln!(out, "{i},{v}")?;
    }
    Ok(())
}

pub fn read_snapshot<R: BufRead>(input: R) -> Result<Snapshot> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("missing snapshot header".into()))??;
    let mut parts = header.trim().splitn(3, ',');
    let mut next = |what: &str| {
        parts
            .next()
            .ok_or_else(|| Error::Parse(format!("header lacks {what}")))
    };
    let dim: usize = next("d")?
        .parse()
        .map_err(|e| Error::Parse(format!("bad dimension: {e}")))?;
    let side: usize = next("N")?
        .parse()
        .map_err(|e| Error::Parse(format!("bad side: {e}")))?;
    let species = next("species")?.to_string();
    let torus = Torus::new(dim, side)?;

    let mut values = vec![f64::NAN; torus.sites()];
    let mut seen = vec![false; torus.sites()];
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (idx, val) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("line {}: expected index,value", lineno + 2)))?;
        let idx: usize = idx
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))?;
        let val: f64 = val
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))?;
        if idx >= torus.sites() {
            return Err(Error::Parse(format!(
                "line {}: index {idx} out of range",
                lineno + 2
            )));
        }
        if seen[idx] {
            return Err(Error::Parse(format!("duplicate site index {idx}")));
        }
        seen[idx] = true;
        values[idx] = val;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Parse(format!("site {missing} missing from snapshot")));
    }
    Ok(Snapshot {
        torus,
        species,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn neighbors_wrap_in_one_dimension() {
        let t = Torus::new(1, 4).unwrap();
        assert_eq!(t.neighbors(0), vec![3, 1]);
    }

    #[test]
    fn neighbors_in_two_dimensions() {
        let t = Torus::new(2, 3).unwrap();
        let got: Vec<Vec<usize>> = t.neighbors(0).into_iter().map(|s| t.coords(s)).collect();
        assert_eq!(got, vec![vec![2, 0], vec![1, 0], vec![0, 2], vec![0, 1]]);
    }

    #[test]
    fn side_two_lists_duplicate_neighbors() {
        let t = Torus::new(1, 2).unwrap();
        assert_eq!(t.neighbors(0), vec![1, 1]);
    }

    #[test]
    fn rejects_degenerate_tori() {
        assert!(Torus::new(0, 4).is_err());
        assert!(Torus::new(2, 1).is_err());
    }

    #[test]
    fn laplacian_of_constant_vanishes() {
        let t = Torus::new(2, 5).unwrap();
        let f = DensityField::constant(t, 0.3);
        assert!(laplacian(&f).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn laplacian_of_spike() {
        let t = Torus::new(1, 4).unwrap();
        let f = DensityField::new(t, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(discrete_laplacian(&f, 1), -2.0);
        assert_eq!(laplacian(&f).iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn gradient_of_ramp_wraps() {
        let t = Torus::new(1, 8).unwrap();
        let f = DensityField::new(t, (0..8).map(|x| x as f64 / 8.0).collect()).unwrap();
        for x in 0..7 {
            assert!((discrete_gradient(&f, x)[0] - 1.0).abs() < 1e-12);
        }
        assert!((discrete_gradient(&f, 7)[0] + 7.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_of_constant_and_separable_fields() {
        let t = Torus::new(2, 6).unwrap();
        let c = DensityField::constant(t, 0.7);
        assert_eq!(discrete_gradient(&c, 4), vec![0.0, 0.0]);
        let f = DensityField::from_profile(t, |r| (2.0 * std::f64::consts::PI * r[0]).sin());
        for x in 0..t.sites() {
            assert_eq!(discrete_gradient(&f, x)[1], 0.0);
        }
    }

    #[test]
    fn pair_config_validates_entries() {
        let t = Torus::new(1, 3).unwrap();
        assert!(PairConfig::new(t, vec![0, 1, 2], vec![0, 0, 0]).is_err());
        assert!(PairConfig::new(t, vec![0, 1], vec![0, 0, 0]).is_err());
        let c = PairConfig::new(t, vec![1, 1, 0], vec![0, 1, 1]).unwrap();
        assert_eq!(c.count(Species::First), 2);
        assert_eq!(c.doubly_occupied(), 1);
        assert_eq!(c.discrepant_bonds(Species::First), 2);
    }

    #[test]
    fn snapshot_rejects_missing_sites() {
        let text = "1,4,u1\n0,0.5\n1,0.5\n3,0.5\n";
        assert!(read_snapshot(text.as_bytes()).is_err());
    }

    fn field_strategy() -> impl Strategy<Value = DensityField> {
        (1usize..=3, 2usize..=6).prop_flat_map(|(d, n)| {
            let t = Torus::new(d, n).unwrap();
            prop::collection::vec(-10.0f64..10.0, t.sites())
                .prop_map(move |v| DensityField::new(t, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn laplacian_sums_to_zero(f in field_strategy()) {
            let total: f64 = laplacian(&f).iter().sum();
            prop_assert!(total.abs() <= 1e-12 * f.torus().sites() as f64 * 10.0);
        }

        #[test]
        fn laplacian_is_divergence_of_unit_gradient(f in field_strategy()) {
            let t = *f.torus();
            for x in 0..t.sites() {
                let here = gradient_scaled(&f, x, 1.0);
                let div: f64 = (0..t.dim())
                    .map(|a| here[a] - gradient_scaled(&f, t.backward(x, a), 1.0)[a])
                    .sum();
                prop_assert!((div - discrete_laplacian(&f, x)).abs() < 1e-12);
            }
        }

        #[test]
        fn neighbor_relation_is_symmetric(d in 1usize..=3, n in 2usize..=5) {
            let t = Torus::new(d, n).unwrap();
            for x in 0..t.sites() {
                for y in t.neighbors(x) {
                    let forward = t.neighbors(x).iter().filter(|&&z| z == y).count();
                    let back = t.neighbors(y).iter().filter(|&&z| z == x).count();
                    prop_assert_eq!(forward, back);
                }
            }
        }

        #[test]
        fn snapshot_round_trips(f in field_strategy()) {
            let mut buf = Vec::new();
            write_snapshot(&mut buf, f.torus(), "u1", f.values()).unwrap();
            let snap = read_snapshot(buf.as_slice()).unwrap();
            prop_assert_eq!(snap.torus, *f.torus());
            prop_assert_eq!(snap.species, "u1");
            prop_assert_eq!(snap.values, f.values().to_vec());
        }
    }
}
