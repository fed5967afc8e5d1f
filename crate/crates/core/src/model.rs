//! Chain configuration, state, and the single-event exchange kernel.
//!
//! Cells are indexed `1..=N` in the physics and `0..N` in slices. Bond
//! (clock) `k` in `0..=N` joins slot `k` and slot `k + 1`, where slot 0 is
//! the left bath at `T_L` and slot `N + 1` the right bath at `T_R`. Bonds 0
//! and `N` are boundary bonds; the rest are interior.

use std::fmt;

use crate::error::{domain, ChainError, Result};
use crate::rate::{RateFunctionSpec, RateKind};

/// Full parameterization of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub n_cells: usize,
    /// `M`, the number of particles per cell. Sets both the clock speed-up
    /// and the Beta(1, M - 1) exchange fractions.
    pub particles: u64,
    pub t_left: f64,
    pub t_right: f64,
    pub rate_fn: RateFunctionSpec,
    pub master_seed: u64,
}

impl ChainConfig {
    /// Config with the default cap `100 * sqrt(max(T_L, T_R))` and seed 0.
    pub fn new(n_cells: usize, particles: u64, t_left: f64, t_right: f64, kind: RateKind) -> Result<Self> {
        let cap = default_rate_cap(t_left, t_right);
        let cfg = Self {
            n_cells,
            particles,
            t_left,
            t_right,
            rate_fn: RateFunctionSpec { kind, cap },
            master_seed: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_cap(mut self, cap: f64) -> Result<Self> {
        self.rate_fn = RateFunctionSpec::new(self.rate_fn.kind, cap)?;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn with_particles(mut self, particles: u64) -> Result<Self> {
        self.particles = particles;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ChainError::InvalidConfig(msg));
        if self.n_cells < 1 {
            return bad("n_cells must be at least 1".into());
        }
        if self.particles < 2 {
            return bad(format!("particles must be at least 2, got {}", self.particles));
        }
        if !(self.t_left > 0.0 && self.t_left.is_finite()) {
            return bad(format!("t_left must be positive, got {}", self.t_left));
        }
        if !(self.t_right > 0.0 && self.t_right.is_finite()) {
            return bad(format!("t_right must be positive, got {}", self.t_right));
        }
        RateFunctionSpec::new(self.rate_fn.kind, self.rate_fn.cap)?;
        Ok(())
    }

    #[inline]
    pub fn m(&self) -> f64 {
        self.particles as f64
    }

    #[inline]
    pub fn n_bonds(&self) -> usize {
        self.n_cells + 1
    }

    #[inline]
    pub fn rate_cap(&self) -> f64 {
        self.rate_fn.cap
    }

    /// Energy of slot `j` in `0..=N+1`, with baths at both ends.
    #[inline]
    pub fn slot(&self, energies: &[f64], j: usize) -> f64 {
        if j == 0 {
            self.t_left
        } else if j == self.n_cells + 1 {
            self.t_right
        } else {
            energies[j - 1]
        }
    }

    /// Rate of bond `k`, i.e. `f(E_k, E_{k+1})` with bath slots.
    #[inline]
    pub fn bond_rate(&self, energies: &[f64], k: usize) -> f64 {
        self.rate_fn.eval(self.slot(energies, k), self.slot(energies, k + 1))
    }

    /// Writes all `N + 1` bond rates into `out` and returns their sum.
    pub fn bond_rates_into(&self, energies: &[f64], out: &mut Vec<f64>) -> f64 {
        out.clear();
        let mut total = 0.0;
        for k in 0..=self.n_cells {
            let r = self.bond_rate(energies, k);
            total += r;
            out.push(r);
        }
        total
    }

    pub(crate) fn check_state(&self, state: &EnergyState) -> Result<()> {
        if state.len() != self.n_cells {
            return Err(ChainError::Dimension {
                expected: self.n_cells,
                got: state.len(),
            });
        }
        Ok(())
    }
}

pub fn default_rate_cap(t_left: f64, t_right: f64) -> f64 {
    100.0 * t_left.max(t_right).max(0.0).sqrt().max(1e-12)
}

/// Cell energies `(E_1, ..., E_N)`, all strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyState(Vec<f64>);

impl EnergyState {
    pub fn new(energies: Vec<f64>) -> Result<Self> {
        if energies.is_empty() {
            return Err(ChainError::InvalidConfig("empty energy state".into()));
        }
        if let Some((i, &e)) = energies.iter().enumerate().find(|(_, e)| !(**e > 0.0 && e.is_finite())) {
            return Err(ChainError::NonPositive {
                cell: i + 1,
                value: e,
                time: 0.0,
            });
        }
        Ok(Self(energies))
    }

    pub fn uniform(n: usize, energy: f64) -> Result<Self> {
        Self::new(vec![energy; n])
    }

    /// Linear profile between the baths: `E_i = T_L + i (T_R - T_L)/(N + 1)`.
    pub fn linear_profile(cfg: &ChainConfig) -> Self {
        let n = cfg.n_cells;
        let dt = (cfg.t_right - cfg.t_left) / (n as f64 + 1.0);
        Self((1..=n).map(|i| cfg.t_left + i as f64 * dt).collect())
    }

    pub(crate) fn from_vec_unchecked(v: Vec<f64>) -> Self {
        Self(v)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for EnergyState {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl fmt::Display for EnergyState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{e}")?;
        }
        f.write_str(")")
    }
}

/// The randomness of one exchange event: clock selector `p1`, bath draw
/// `p2`, redistribution fraction `p3` and the two Beta(1, M - 1) fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExchangeDraw {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub b1: f64,
    pub b2: f64,
}

impl ExchangeDraw {
    /// Builds a draw from open-interval uniforms, transforming the last two
    /// through the Beta(1, M - 1) inverse CDF.
    pub fn from_uniforms(p1: f64, p2: f64, p3: f64, u_b1: f64, u_b2: f64, m: u64) -> Result<Self> {
        for (name, v) in [("p1", p1), ("p2", p2), ("p3", p3)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(domain("exchange_draw", format!("{name} = {v} not in (0, 1)")));
            }
        }
        Ok(Self {
            p1,
            p2,
            p3,
            b1: sample_beta(u_b1, m)?,
            b2: sample_beta(u_b2, m)?,
        })
    }
}

/// One jump of the process.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub clock_index: usize,
    /// Net energy moved from slot `k` to slot `k + 1`.
    pub flux: f64,
    pub state_after: EnergyState,
}

impl EventRecord {
    pub fn is_boundary(&self, n_cells: usize) -> bool {
        self.clock_index == 0 || self.clock_index == n_cells
    }
}

/// `min(f(e1, e2), K)` with positivity checks.
pub fn rate(spec: &RateFunctionSpec, e1: f64, e2: f64) -> Result<f64> {
    spec.rate(e1, e2)
}

/// Sum of all `N + 1` bond rates, boundary bonds included.
pub fn total_rate(state: &EnergyState, cfg: &ChainConfig) -> Result<f64> {
    cfg.check_state(state)?;
    let e = state.as_slice();
    Ok((0..=cfg.n_cells).map(|k| cfg.bond_rate(e, k)).sum())
}

/// Inverse CDF of Beta(1, M - 1): `1 - (1 - u)^(1/(M - 1))`.
pub fn sample_beta(u: f64, m: u64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(domain("sample_beta", format!("u = {u} not in (0, 1)")));
    }
    if m < 2 {
        return Err(domain("sample_beta", format!("M = {m} < 2")));
    }
    Ok(beta_inv_cdf(u, m))
}

#[inline]
pub(crate) fn beta_inv_cdf(u: f64, m: u64) -> f64 {
    -((-u).ln_1p() / (m - 1) as f64).exp_m1()
}

/// Exponential variate with mean `t_bath` by inversion: `-t_bath ln(1 - u)`.
pub fn sample_bath_energy(u: f64, t_bath: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(domain("sample_bath_energy", format!("u = {u} not in (0, 1)")));
    }
    if !(t_bath > 0.0) {
        return Err(domain("sample_bath_energy", format!("t_bath = {t_bath} <= 0")));
    }
    Ok(bath_inv_cdf(u, t_bath))
}

#[inline]
pub(crate) fn bath_inv_cdf(u: f64, t_bath: f64) -> f64 {
    -t_bath * (-u).ln_1p()
}

/// Clock `k` whose cumulative-rate subinterval of (0, 1) contains `p1`.
pub fn select_clock(state: &EnergyState, cfg: &ChainConfig, p1: f64) -> Result<usize> {
    cfg.check_state(state)?;
    let mut rates = Vec::with_capacity(cfg.n_bonds());
    let total = cfg.bond_rates_into(state.as_slice(), &mut rates);
    Ok(select_from_rates(&rates, total, p1))
}

#[inline]
pub(crate) fn select_from_rates(rates: &[f64], total: f64, p1: f64) -> usize {
    let target = p1 * total;
    let mut acc = 0.0;
    for (k, r) in rates.iter().enumerate() {
        acc += r;
        if target < acc {
            return k;
        }
    }
    // rounding can leave target == total; it belongs to the last bond
    rates.len() - 1
}

/// Applies the exchange on bond `k` and returns the post-event state with
/// the bond flux `J_k` (positive when energy moves rightwards).
pub fn apply_exchange(
    state: &EnergyState,
    cfg: &ChainConfig,
    k: usize,
    draw: &ExchangeDraw,
) -> Result<(EnergyState, f64)> {
    cfg.check_state(state)?;
    if k > cfg.n_cells {
        return Err(ChainError::ClockOutOfRange {
            index: k,
            n_cells: cfg.n_cells,
        });
    }
    let mut e = state.as_slice().to_vec();
    let flux = exchange_in_place(&mut e, cfg, k, draw);
    Ok((EnergyState(e), flux))
}

/// In-place kernel. `k` must be in `0..=N`.
///
/// Interior: `E_k' = E_k - B1 E_k + p (B1 E_k + B2 E_{k+1})` and
/// `E_{k+1}' = E_{k+1} - B2 E_{k+1} + (1 - p)(B1 E_k + B2 E_{k+1})`, applied as
/// a single transfer `J = (1 - p) B1 E_k - p B2 E_{k+1}` so the pair sum is
/// preserved to rounding. Boundary bonds exchange with a bath energy
/// `X = -T ln(1 - p2)` and only the adjacent cell changes.
#[inline]
pub(crate) fn exchange_in_place(e: &mut [f64], cfg: &ChainConfig, k: usize, d: &ExchangeDraw) -> f64 {
    let n = cfg.n_cells;
    let p = d.p3;
    if k == 0 {
        let x = bath_inv_cdf(d.p2, cfg.t_left);
        let old = e[0];
        let new = cell_update(old, x, p, d.b1, d.b2);
        e[0] = new;
        new - old
    } else if k == n {
        let x = bath_inv_cdf(d.p2, cfg.t_right);
        let old = e[n - 1];
        let new = cell_update(old, x, p, d.b1, d.b2);
        e[n - 1] = new;
        old - new
    } else {
        let (a, b) = (e[k - 1], e[k]);
        let j = (1.0 - p) * d.b1 * a - p * d.b2 * b;
        let mut na = a - j;
        let mut nb = b + j;
        if !(na > 0.0 && nb > 0.0) {
            na = cell_update(a, b, p, d.b1, d.b2);
            nb = cell_update(b, a, 1.0 - p, d.b2, d.b1);
        }
        e[k - 1] = na;
        e[k] = nb;
        nb - b
    }
}

/// `E - B1 E + p (B1 E + B2 X)`, written so each term is non-negative.
#[inline]
fn cell_update(e: f64, x: f64, p: f64, b1: f64, b2: f64) -> f64 {
    e * (1.0 - b1 * (1.0 - p)) + p * b2 * x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{ChainRng, UniformSource};

    fn cfg(n: usize, m: u64, tl: f64, tr: f64, kind: RateKind) -> ChainConfig {
        ChainConfig::new(n, m, tl, tr, kind).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ChainConfig::new(0, 10, 1.0, 1.0, RateKind::SqrtProduct).is_err());
        assert!(ChainConfig::new(2, 1, 1.0, 1.0, RateKind::SqrtProduct).is_err());
        assert!(ChainConfig::new(2, 10, 0.0, 1.0, RateKind::SqrtProduct).is_err());
        assert!(ChainConfig::new(2, 10, 1.0, -1.0, RateKind::SqrtProduct).is_err());
        let c = cfg(2, 10, 1.0, 4.0, RateKind::SqrtProduct);
        assert_eq!(c.rate_cap(), 200.0);
        assert!(c.clone().with_cap(0.0).is_err());
    }

    #[test]
    fn total_rate_hand_value() {
        let c = cfg(2, 10, 1.0, 1.0, RateKind::SqrtProduct).with_cap(10.0).unwrap();
        let s = EnergyState::new(vec![1.0, 4.0]).unwrap();
        // f(1,1) + f(1,4) + f(4,1) = 1 + 2 + 2
        assert_eq!(total_rate(&s, &c).unwrap(), 5.0);
    }

    #[test]
    fn total_rate_constant_and_cap() {
        let c = cfg(7, 10, 1.0, 2.0, RateKind::Constant(1.0));
        let s = EnergyState::uniform(7, 3.3).unwrap();
        assert_eq!(total_rate(&s, &c).unwrap(), 8.0);
        let c = cfg(3, 10, 50.0, 80.0, RateKind::SqrtProduct).with_cap(2.0).unwrap();
        let s = EnergyState::new(vec![60.0, 70.0, 75.0]).unwrap();
        assert!(total_rate(&s, &c).unwrap() <= 4.0 * 2.0);
    }

    #[test]
    fn total_rate_rejects_wrong_length() {
        let c = cfg(3, 10, 1.0, 2.0, RateKind::SqrtProduct);
        let s = EnergyState::uniform(2, 1.0).unwrap();
        assert!(matches!(total_rate(&s, &c), Err(ChainError::Dimension { .. })));
    }

    #[test]
    fn beta_sampler_values() {
        assert_eq!(sample_beta(0.5, 2).unwrap(), 0.5);
        let tiny = sample_beta(1e-300, 1000).unwrap();
        assert!(tiny > 0.0 && tiny < 1e-299);
        assert!(sample_beta(0.0, 10).is_err());
        assert!(sample_beta(1.0, 10).is_err());
        assert!(sample_beta(0.3, 1).is_err());
        let near_one = sample_beta(1.0 - f64::EPSILON / 2.0, 2).unwrap();
        assert!(near_one < 1.0);
    }

    #[test]
    fn beta_sampler_mean() {
        let mut rng = ChainRng::from_seed(3);
        let m = 20;
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| sample_beta(rng.open01(), m).unwrap()).sum::<f64>() / n as f64;
        // sd of Beta(1,19) is about 0.046, so SE ~ 1e-4
        assert!((mean - 1.0 / m as f64).abs() < 5e-4, "mean {mean}");
    }

    #[test]
    fn bath_sampler() {
        let u = 1.0 - (-1.0f64).exp();
        assert!((sample_bath_energy(u, 2.0).unwrap() - 2.0).abs() < 1e-14);
        assert!(sample_bath_energy(1e-300, 2.0).unwrap() > 0.0);
        assert!(sample_bath_energy(0.5, 0.0).is_err());
        let mut rng = ChainRng::from_seed(4);
        let n = 200_000;
        let mean: f64 = (0..n)
            .map(|_| sample_bath_energy(rng.open01(), 1.5).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.5).abs() < 5.0 * 1.5 / (n as f64).sqrt());
    }

    #[test]
    fn select_clock_partitions() {
        let c = cfg(1, 10, 1.0, 1.0, RateKind::Constant(1.0));
        let s = EnergyState::uniform(1, 1.0).unwrap();
        assert_eq!(select_clock(&s, &c, 0.25).unwrap(), 0);
        assert_eq!(select_clock(&s, &c, 0.75).unwrap(), 1);
        assert_eq!(select_clock(&s, &c, 1e-300).unwrap(), 0);
        assert_eq!(select_clock(&s, &c, 1.0 - 1e-16).unwrap(), 1);
    }

    #[test]
    fn interior_exchange_hand_example() {
        let c = cfg(2, 10, 1.0, 1.0, RateKind::SqrtProduct);
        let s = EnergyState::new(vec![2.0, 4.0]).unwrap();
        let d = ExchangeDraw {
            p1: 0.5,
            p2: 0.5,
            p3: 1.0,
            b1: 0.5,
            b2: 0.25,
        };
        let (after, j) = apply_exchange(&s, &c, 1, &d).unwrap();
        assert_eq!(after.as_slice(), &[3.0, 3.0]);
        assert_eq!(j, -1.0);
    }

    #[test]
    fn exchange_returning_contribution_is_identity() {
        let c = cfg(3, 10, 1.0, 1.0, RateKind::SqrtProduct);
        let s = EnergyState::new(vec![1.0, 2.0, 3.0]).unwrap();
        let (b1, b2) = (0.2, 0.1);
        // p (B1 E1 + B2 E2) = B1 E1
        let p = b1 * 1.0 / (b1 * 1.0 + b2 * 2.0);
        let d = ExchangeDraw {
            p1: 0.5,
            p2: 0.5,
            p3: p,
            b1,
            b2,
        };
        let (after, j) = apply_exchange(&s, &c, 1, &d).unwrap();
        assert!((after[0] - 1.0).abs() < 1e-15);
        assert!((after[1] - 2.0).abs() < 1e-15);
        assert!(j.abs() < 1e-15);
    }

    #[test]
    fn boundary_exchanges_touch_one_cell() {
        let c = cfg(3, 10, 1.0, 2.0, RateKind::SqrtProduct);
        let s = EnergyState::new(vec![1.2, 1.5, 1.8]).unwrap();
        let d = ExchangeDraw {
            p1: 0.5,
            p2: 0.6,
            p3: 0.3,
            b1: 0.1,
            b2: 0.2,
        };
        let (a, j0) = apply_exchange(&s, &c, 0, &d).unwrap();
        assert_eq!(&a.as_slice()[1..], &s.as_slice()[1..]);
        assert!((j0 - (a[0] - s[0])).abs() < 1e-15);
        let x = bath_inv_cdf(0.6, 1.0);
        let want = 1.2 - 0.1 * 1.2 + 0.3 * (0.1 * 1.2 + 0.2 * x);
        assert!((a[0] - want).abs() < 1e-14);

        let (b, jn) = apply_exchange(&s, &c, 3, &d).unwrap();
        assert_eq!(&b.as_slice()[..2], &s.as_slice()[..2]);
        assert!((jn - (s[2] - b[2])).abs() < 1e-15);
        assert!(apply_exchange(&s, &c, 4, &d).is_err());
    }

    #[test]
    fn single_cell_chain_has_two_boundary_bonds() {
        let c = cfg(1, 10, 1.0, 3.0, RateKind::SqrtProduct);
        let s = EnergyState::new(vec![2.0]).unwrap();
        assert_eq!(total_rate(&s, &c).unwrap(), 2f64.sqrt() + 6f64.sqrt());
        let d = ExchangeDraw {
            p1: 0.5,
            p2: 0.5,
            p3: 0.5,
            b1: 0.1,
            b2: 0.1,
        };
        let (_, j0) = apply_exchange(&s, &c, 0, &d).unwrap();
        let (_, j1) = apply_exchange(&s, &c, 1, &d).unwrap();
        assert!(j0.is_finite() && j1.is_finite());
    }
}
