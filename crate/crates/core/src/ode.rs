//! The deterministic limit: drift field, fixed-step RK4 integration, the
//! equilibrium profile by shooting on the bond flux, the Jacobian at the
//! equilibrium and the resulting conductivity.

use nalgebra::DMatrix;

use crate::error::{ChainError, Result};
use crate::model::{ChainConfig, EnergyState};
use crate::rate::RateFunctionSpec;

/// Drift `F(E)`:
/// `F_i = f(E_{i-1},E_i)(E_{i-1}-E_i)/2 + f(E_i,E_{i+1})(E_{i+1}-E_i)/2`
/// with bath slots `E_0 = T_L`, `E_{N+1} = T_R`.
pub fn drift(state: &EnergyState, cfg: &ChainConfig) -> Result<Vec<f64>> {
    cfg.check_state(state)?;
    let mut out = vec![0.0; cfg.n_cells];
    drift_into(state.as_slice(), cfg, &mut out);
    Ok(out)
}

/// Allocation-free drift. `e` and `out` have length `N`.
pub fn drift_into(e: &[f64], cfg: &ChainConfig, out: &mut [f64]) {
    let n = cfg.n_cells;
    // bond flux g_k = f(E_k, E_{k+1}) (E_{k+1} - E_k)/2, F_i = g_i - g_{i-1}
    let mut prev = {
        let (a, b) = (cfg.t_left, e[0]);
        0.5 * cfg.rate_fn.eval(a, b) * (b - a)
    };
    for i in 0..n {
        let a = e[i];
        let b = if i + 1 < n { e[i + 1] } else { cfg.t_right };
        let g = 0.5 * cfg.rate_fn.eval(a, b) * (b - a);
        out[i] = g - prev;
        prev = g;
    }
}

/// One classical RK4 step of `y' = f(t, y)` in place.
pub(crate) fn rk4_step<F>(y: &mut [f64], t: f64, h: f64, scratch: &mut Rk4Scratch, mut f: F)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    scratch.resize(n);
    let Rk4Scratch { k1, k2, k3, k4, tmp } = scratch;
    f(t, y, k1);
    for j in 0..n {
        tmp[j] = y[j] + 0.5 * h * k1[j];
    }
    f(t + 0.5 * h, tmp, k2);
    for j in 0..n {
        tmp[j] = y[j] + 0.5 * h * k2[j];
    }
    f(t + 0.5 * h, tmp, k3);
    for j in 0..n {
        tmp[j] = y[j] + h * k3[j];
    }
    f(t + h, tmp, k4);
    for j in 0..n {
        y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    }
}

#[derive(Debug, Default)]
pub(crate) struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    fn resize(&mut self, n: usize) {
        for v in [&mut self.k1, &mut self.k2, &mut self.k3, &mut self.k4, &mut self.tmp] {
            v.resize(n, 0.0);
        }
    }
}

/// Number of uniform steps of size at most `dt` covering `[0, t_end]`.
pub(crate) fn step_count(t_end: f64, dt: f64) -> usize {
    ((t_end / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Grid solution of the limit ODE, with drift values stored at every node
/// for cubic Hermite interpolation between nodes.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    derivs: Vec<Vec<f64>>,
}

impl OdeSolution {
    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("non-empty grid")
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("non-empty grid")
    }

    /// State at time `t` by cubic Hermite interpolation (fourth-order
    /// accurate, matching the integrator). Times outside the grid clamp to
    /// its ends.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let n = self.times.len();
        if t <= self.times[0] || n == 1 {
            return self.states[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1].clone();
        }
        let j = self.times.partition_point(|&s| s <= t).max(1) - 1;
        let (t0, t1) = (self.times[j], self.times[j + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let (y0, y1) = (&self.states[j], &self.states[j + 1]);
        let (d0, d1) = (&self.derivs[j], &self.derivs[j + 1]);
        (0..y0.len())
            .map(|i| h00 * y0[i] + h10 * h * d0[i] + h01 * y1[i] + h11 * h * d1[i])
            .collect()
    }
}

/// Integrates `dE/dt = F(E)` from `e0` over `[0, t_end]` with uniform RK4
/// steps no larger than `dt`.
pub fn integrate_ode(cfg: &ChainConfig, e0: &EnergyState, t_end: f64, dt: f64) -> Result<OdeSolution> {
    cfg.check_state(e0)?;
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(ChainError::InvalidConfig(format!(
            "integrate_ode needs dt > 0 and t_end >= 0, got dt = {dt}, t_end = {t_end}"
        )));
    }
    let steps = if t_end == 0.0 { 0 } else { step_count(t_end, dt) };
    let h = if steps == 0 { 0.0 } else { t_end / steps as f64 };
    let n = cfg.n_cells;
    let mut y = e0.as_slice().to_vec();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut derivs = Vec::with_capacity(steps + 1);
    let mut d = vec![0.0; n];
    drift_into(&y, cfg, &mut d);
    times.push(0.0);
    states.push(y.clone());
    derivs.push(d.clone());
    let mut scratch = Rk4Scratch::default();
    for s in 0..steps {
        let t = s as f64 * h;
        rk4_step(&mut y, t, h, &mut scratch, |_, x, out| drift_into(x, cfg, out));
        if let Some((i, &v)) = y.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(ChainError::NonPositive {
                cell: i + 1,
                value: v,
                time: t + h,
            });
        }
        drift_into(&y, cfg, &mut d);
        times.push((s + 1) as f64 * h);
        states.push(y.clone());
        derivs.push(d.clone());
    }
    Ok(OdeSolution { times, states, derivs })
}

/// Equilibrium of the limit ODE.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumProfile {
    pub e_star: EnergyState,
    /// Bond flux constant `f(E*_k, E*_{k+1}) (E*_{k+1} - E*_k)`, equal on
    /// every bond.
    pub c_star: f64,
    /// `|T_R*(c*) - T_R|` at the returned flux.
    pub residual: f64,
    /// Outer bisection iterations used.
    pub iterations: usize,
}

/// Solves `f(a, x)(x - a) = c` for `x >= a` by bracketing bisection.
fn next_cell(spec: &RateFunctionSpec, a: f64, c: f64, tol: f64) -> Result<f64> {
    let g = |x: f64| spec.eval(a, x) * (x - a) - c;
    let mut lo = a;
    let mut width = c / spec.eval(a, a) + 1.0;
    let mut hi = a + width;
    let mut expansions = 0;
    while g(hi) < 0.0 {
        width *= 2.0;
        hi = a + width;
        expansions += 1;
        if expansions > 200 || !hi.is_finite() {
            return Err(ChainError::Bracketing(format!(
                "no sign change for f(a, x)(x - a) = {c} with a = {a}, last bracket [{lo}, {hi}]"
            )));
        }
    }
    for _ in 0..400 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Forward shooting recursion: given a bond flux `c >= 0`, returns
/// `(E*_1(c), ..., E*_N(c), T_R*(c))` starting from `T_L`.
pub fn shoot(cfg: &ChainConfig, c: f64, tol: f64) -> Result<Vec<f64>> {
    if !(c >= 0.0) {
        return Err(ChainError::Domain {
            op: "shoot",
            detail: format!("bond flux must be non-negative, got {c}"),
        });
    }
    let mut out = Vec::with_capacity(cfg.n_cells + 1);
    let mut a = cfg.t_left;
    for _ in 0..=cfg.n_cells {
        a = next_cell(&cfg.rate_fn, a, c, tol)?;
        out.push(a);
    }
    Ok(out)
}

/// Equilibrium profile `E*` with `F(E*) = 0`, found by bisection on the
/// bond flux `c` so that the shooting recursion lands on `T_R`.
///
/// For `T_L > T_R` the mirrored chain is solved and the result reversed
/// (all provided rate kinds are symmetric); `c*` is then negative.
pub fn solve_equilibrium(cfg: &ChainConfig, tol: f64) -> Result<EquilibriumProfile> {
    cfg.validate()?;
    if !(tol > 0.0) {
        return Err(ChainError::InvalidConfig(format!("tol must be positive, got {tol}")));
    }
    let n = cfg.n_cells;
    if cfg.t_left == cfg.t_right {
        return Ok(EquilibriumProfile {
            e_star: EnergyState::uniform(n, cfg.t_left)?,
            c_star: 0.0,
            residual: 0.0,
            iterations: 0,
        });
    }
    if cfg.t_left > cfg.t_right {
        let mut mirrored = cfg.clone();
        std::mem::swap(&mut mirrored.t_left, &mut mirrored.t_right);
        let p = solve_equilibrium(&mirrored, tol)?;
        let mut e = p.e_star.into_vec();
        e.reverse();
        return Ok(EquilibriumProfile {
            e_star: EnergyState::new(e)?,
            c_star: -p.c_star,
            residual: p.residual,
            iterations: p.iterations,
        });
    }

    let inner_tol = tol / 10.0;
    let target = cfg.t_right;
    let (mut lo, mut hi) = (0.0, cfg.rate_cap() * (cfg.t_right - cfg.t_left));
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    for it in 1..=400 {
        let c = 0.5 * (lo + hi);
        let prof = shoot(cfg, c, inner_tol)?;
        let tr = prof[n];
        let res = (tr - target).abs();
        if best.as_ref().map_or(true, |b| res < b.2) {
            best = Some((c, prof.clone(), res));
        }
        if res <= tol {
            let mut e = prof;
            e.truncate(n);
            return Ok(EquilibriumProfile {
                e_star: EnergyState::new(e)?,
                c_star: c,
                residual: res,
                iterations: it,
            });
        }
        if tr < target {
            lo = c;
        } else {
            hi = c;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let (c, _, res) = best.expect("at least one iteration");
    Err(ChainError::Bracketing(format!(
        "outer bisection stalled at c = {c} with residual {res:e} > tol {tol:e}"
    )))
}

/// Jacobian of the drift at an equilibrium with stability diagnostics.
#[derive(Debug, Clone)]
pub struct JacobianReport {
    /// `N x N` tridiagonal matrix `DF(E*)`.
    pub jac: DMatrix<f64>,
    pub eigen_real_parts: Vec<f64>,
    /// Row sums `sum_j DF_ij`.
    pub row_sums: Vec<f64>,
    /// Every Gershgorin disc lies in the open left half-plane.
    pub gershgorin_ok: bool,
    /// `gamma` has negative partials at every bond of the profile.
    pub gamma_condition_ok: bool,
    /// Max entrywise gap between the analytic Jacobian and central
    /// differences of the drift with step `h`.
    pub fd_max_error: f64,
}

impl JacobianReport {
    pub fn max_real_part(&self) -> f64 {
        self.eigen_real_parts.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_hurwitz(&self) -> bool {
        self.max_real_part() < 0.0
    }
}

/// Analytic `DF(E)` from the closed-form partials of the rate function.
///
/// This is the exact Jacobian of the drift and therefore carries the factor
/// one half on every entry.
pub fn drift_jacobian(state: &[f64], cfg: &ChainConfig) -> DMatrix<f64> {
    let n = cfg.n_cells;
    let spec = &cfg.rate_fn;
    let mut jac = DMatrix::zeros(n, n);
    for i in 0..n {
        let left = cfg.slot(state, i);
        let mid = state[i];
        let right = cfg.slot(state, i + 2);
        let fl = spec.eval(left, mid);
        let fr = spec.eval(mid, right);
        let (fl1, fl2) = spec.partials(left, mid);
        let (fr1, fr2) = spec.partials(mid, right);
        jac[(i, i)] = 0.5 * (fl2 * (left - mid) - fl) + 0.5 * (fr1 * (right - mid) - fr);
        if i > 0 {
            jac[(i, i - 1)] = 0.5 * (fl1 * (left - mid) + fl);
        }
        if i + 1 < n {
            jac[(i, i + 1)] = 0.5 * (fr2 * (right - mid) + fr);
        }
    }
    jac
}

/// Central-difference Jacobian of the drift with step `h`.
pub fn drift_jacobian_fd(state: &[f64], cfg: &ChainConfig, h: f64) -> DMatrix<f64> {
    let n = cfg.n_cells;
    let mut jac = DMatrix::zeros(n, n);
    let mut x = state.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        let orig = x[j];
        x[j] = orig + h;
        drift_into(&x, cfg, &mut fp);
        x[j] = orig - h;
        drift_into(&x, cfg, &mut fm);
        x[j] = orig;
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Real parts of the eigenvalues of a square matrix (dense Schur).
pub fn eigen_real_parts(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().complex_eigenvalues().iter().map(|z| z.re).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Jacobian report at `e_star`; `h` is the finite-difference step of the
/// cross-check.
pub fn jacobian(e_star: &EnergyState, cfg: &ChainConfig, h: f64) -> Result<JacobianReport> {
    cfg.check_state(e_star)?;
    if !(h > 0.0) {
        return Err(ChainError::InvalidConfig(format!("h must be positive, got {h}")));
    }
    let e = e_star.as_slice();
    let n = cfg.n_cells;
    let jac = drift_jacobian(e, cfg);
    let fd = drift_jacobian_fd(e, cfg, h);
    let fd_max_error = (&jac - &fd).amax();
    let row_sums: Vec<f64> = (0..n).map(|i| jac.row(i).sum()).collect();
    let gershgorin_ok = (0..n).all(|i| {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| jac[(i, j)].abs()).sum();
        jac[(i, i)] + off < 0.0
    });
    let gamma_condition_ok = (0..=n).all(|k| {
        let (a, b) = (cfg.slot(e, k), cfg.slot(e, k + 1));
        gamma_partials_negative(&cfg.rate_fn, a, b)
    });
    let eigen_real_parts = eigen_real_parts(&jac);
    Ok(JacobianReport {
        jac,
        eigen_real_parts,
        row_sums,
        gershgorin_ok,
        gamma_condition_ok,
        fd_max_error,
    })
}

/// Closed-form `gamma = (df/dE1 + df/dE2)/f`.
pub fn gamma(spec: &RateFunctionSpec, e1: f64, e2: f64) -> Result<f64> {
    spec.gamma(e1, e2)
}

/// Whether both partial derivatives of `gamma` are negative at `(e1, e2)`,
/// by central differences.
pub fn gamma_partials_negative(spec: &RateFunctionSpec, e1: f64, e2: f64) -> bool {
    let h1 = 1e-5 * e1;
    let h2 = 1e-5 * e2;
    let g = |x: f64, y: f64| spec.gamma(x, y);
    let (Ok(a), Ok(b), Ok(c), Ok(d)) = (g(e1 + h1, e2), g(e1 - h1, e2), g(e1, e2 + h2), g(e1, e2 - h2)) else {
        return false;
    };
    (a - b) < 0.0 && (c - d) < 0.0
}

/// Fourier-law conductivity of the equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct Conductivity {
    /// `c* (N + 1) / (2 (T_R - T_L))`.
    pub kappa: f64,
    pub c_star: f64,
    /// `f(T_L,T_L)/2` and `f(T_R,T_R)/2`, ordered.
    pub lower: f64,
    pub upper: f64,
    pub profile: EquilibriumProfile,
}

pub fn conductivity(cfg: &ChainConfig, tol: f64) -> Result<Conductivity> {
    if cfg.t_left == cfg.t_right {
        return Err(ChainError::ZeroGradient);
    }
    let profile = solve_equilibrium(cfg, tol)?;
    let c_star = profile.c_star;
    let kappa = c_star * (cfg.n_cells as f64 + 1.0) / (2.0 * (cfg.t_right - cfg.t_left));
    let a = 0.5 * cfg.rate_fn.eval(cfg.t_left, cfg.t_left);
    let b = 0.5 * cfg.rate_fn.eval(cfg.t_right, cfg.t_right);
    Ok(Conductivity {
        kappa,
        c_star,
        lower: a.min(b),
        upper: a.max(b),
        profile,
    })
}
