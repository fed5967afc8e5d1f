//! Exact event-driven simulation of the chain on the fast time scale,
//! where clock `k` rings at rate `M f(E_k, E_{k+1})`.
//!
//! Each event consumes uniforms in the fixed order
//! `q, p1, [p2 if boundary], p3, u_B1, u_B2`: `q` sets the waiting time
//! `-ln(1 - q) / (M R)`, `p1` picks the clock, `p2` the bath energy and the
//! last two become Beta(1, M - 1) fractions by inversion. A path is a pure
//! function of `(cfg, e0, t_end, seed)`.

use rayon::prelude::*;

use crate::error::{ChainError, Result};
use crate::model::{
    beta_inv_cdf, exchange_in_place, select_from_rates, ChainConfig, EnergyState, EventRecord, ExchangeDraw,
};
use crate::ode::OdeSolution;
use crate::rng::{path_seed, ChainRng, UniformSource};
use crate::stats::MomentSummary;

/// Default cap on the number of logged events per trajectory.
pub const DEFAULT_EVENT_CAP: usize = 10_000_000;

/// Draws everything after `q` for one event and applies it to `e`.
#[inline]
fn fire<U: UniformSource>(e: &mut [f64], cfg: &ChainConfig, rates: &[f64], total: f64, stream: &mut U) -> (usize, f64) {
    let p1 = stream.open01();
    let k = select_from_rates(rates, total, p1);
    let boundary = k == 0 || k == cfg.n_cells;
    let p2 = if boundary { stream.open01() } else { 0.5 };
    let p3 = stream.open01();
    let m = cfg.particles;
    let b1 = beta_inv_cdf(stream.open01(), m);
    let b2 = beta_inv_cdf(stream.open01(), m);
    let draw = ExchangeDraw { p1, p2, p3, b1, b2 };
    let flux = exchange_in_place(e, cfg, k, &draw);
    (k, flux)
}

/// One event from `state` at time `t_now`. Returns the waiting time and the
/// event, whose `time` is `t_now + dt`.
pub fn step<U: UniformSource>(
    state: &EnergyState,
    cfg: &ChainConfig,
    t_now: f64,
    stream: &mut U,
) -> Result<(f64, EventRecord)> {
    cfg.check_state(state)?;
    let mut rates = Vec::with_capacity(cfg.n_bonds());
    let total = cfg.bond_rates_into(state.as_slice(), &mut rates);
    let q = stream.open01();
    let dt = -(-q).ln_1p() / (cfg.m() * total);
    let mut e = state.as_slice().to_vec();
    let (k, flux) = fire(&mut e, cfg, &rates, total, stream);
    Ok((
        dt,
        EventRecord {
            time: t_now + dt,
            clock_index: k,
            flux,
            state_after: EnergyState::from_vec_unchecked(e),
        },
    ))
}

/// A path in progress. The next event time is drawn as soon as the previous
/// event fires, so chopping a run into `advance_to` calls on any grid
/// yields the same path.
#[derive(Debug, Clone)]
pub struct PathCursor<'c> {
    cfg: &'c ChainConfig,
    rng: ChainRng,
    e: Vec<f64>,
    t: f64,
    t_next: f64,
    rates: Vec<f64>,
    total: f64,
    pub n_events: u64,
    /// Sum of `J_k` over events on bond `k`.
    pub bond_flux: Vec<f64>,
    pub bond_events: Vec<u64>,
    /// Net energy that entered through both boundary bonds.
    pub influx: f64,
}

impl<'c> PathCursor<'c> {
    pub fn new(cfg: &'c ChainConfig, e0: &EnergyState, seed: u64) -> Result<Self> {
        cfg.check_state(e0)?;
        let mut c = Self {
            cfg,
            rng: ChainRng::from_seed(seed),
            e: e0.as_slice().to_vec(),
            t: 0.0,
            t_next: 0.0,
            rates: Vec::with_capacity(cfg.n_bonds()),
            total: 0.0,
            n_events: 0,
            bond_flux: vec![0.0; cfg.n_bonds()],
            bond_events: vec![0; cfg.n_bonds()],
            influx: 0.0,
        };
        c.schedule();
        Ok(c)
    }

    fn schedule(&mut self) {
        self.total = self.cfg.bond_rates_into(&self.e, &mut self.rates);
        let q = self.rng.open01();
        self.t_next = self.t - (-q).ln_1p() / (self.cfg.m() * self.total);
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn energies(&self) -> &[f64] {
        &self.e
    }

    /// Fires every event with time `< t_target`, then sets the clock to
    /// `t_target`. `on_event(time, clock, flux, state_after)` sees each one.
    pub fn advance_to<F>(&mut self, t_target: f64, mut on_event: F)
    where
        F: FnMut(f64, usize, f64, &[f64]),
    {
        let n = self.cfg.n_cells;
        while self.t_next < t_target {
            self.t = self.t_next;
            let (k, flux) = fire(&mut self.e, self.cfg, &self.rates, self.total, &mut self.rng);
            self.n_events += 1;
            self.bond_flux[k] += flux;
            self.bond_events[k] += 1;
            if k == 0 {
                self.influx += flux;
            }
            if k == n {
                self.influx -= flux;
            }
            on_event(self.t, k, flux, &self.e);
            self.schedule();
        }
        if t_target > self.t {
            self.t = t_target;
        }
    }

    /// Zeroes the flux accumulators, e.g. after a burn-in.
    pub fn reset_accumulators(&mut self) {
        self.n_events = 0;
        self.bond_flux.iter_mut().for_each(|v| *v = 0.0);
        self.bond_events.iter_mut().for_each(|v| *v = 0);
        self.influx = 0.0;
    }
}

/// Options for [`simulate_with`].
#[derive(Debug, Clone)]
pub struct SimOptions {
    /// Event log is kept only while it stays at or below this many events.
    pub event_cap: usize,
    /// Times at which to snapshot the state (ascending, within `[0, t_end]`).
    pub snapshot_times: Vec<f64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            event_cap: DEFAULT_EVENT_CAP,
            snapshot_times: Vec::new(),
        }
    }
}

/// A simulated path: piecewise constant, right-continuous.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub initial_state: EnergyState,
    /// All events with time `< t_end`, unless the log overflowed.
    pub events: Vec<EventRecord>,
    /// Cumulative boundary influx after each logged event.
    pub boundary_influx: Vec<f64>,
    /// False when the event cap was hit and `events` was discarded.
    pub log_complete: bool,
    pub t_end: f64,
    pub final_state: EnergyState,
    pub n_events: u64,
    pub bond_flux: Vec<f64>,
    pub bond_events: Vec<u64>,
    pub total_influx: f64,
    pub snapshots: Vec<(f64, EnergyState)>,
    pub particles: u64,
    pub t_left: f64,
    pub t_right: f64,
}

impl Trajectory {
    /// State after the last event at or before `t`. `None` once the event
    /// log has been dropped, unless `t` is a snapshot time.
    pub fn state_at(&self, t: f64) -> Option<EnergyState> {
        if let Some((_, s)) = self.snapshots.iter().find(|(ts, _)| *ts == t) {
            return Some(s.clone());
        }
        if !self.log_complete {
            return None;
        }
        if t >= self.t_end {
            return Some(self.final_state.clone());
        }
        let idx = self.events.partition_point(|ev| ev.time <= t);
        Some(if idx == 0 {
            self.initial_state.clone()
        } else {
            self.events[idx - 1].state_after.clone()
        })
    }
}

pub fn simulate(cfg: &ChainConfig, e0: &EnergyState, t_end: f64, seed: u64) -> Result<Trajectory> {
    simulate_with(cfg, e0, t_end, seed, &SimOptions::default())
}

pub fn simulate_with(
    cfg: &ChainConfig,
    e0: &EnergyState,
    t_end: f64,
    seed: u64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    if !(t_end > 0.0) {
        return Err(ChainError::InvalidConfig(format!(
            "t_end must be positive, got {t_end}"
        )));
    }
    let mut cur = PathCursor::new(cfg, e0, seed)?;
    let mut events = Vec::new();
    let mut influx_log = Vec::new();
    let mut complete = true;
    let mut running_influx = 0.0;
    let n = cfg.n_cells;
    let mut snapshots = Vec::with_capacity(opts.snapshot_times.len());
    let mut log = |t: f64, k: usize, flux: f64, e: &[f64]| {
        if k == 0 {
            running_influx += flux;
        } else if k == n {
            running_influx -= flux;
        }
        if !complete {
            return;
        }
        if events.len() >= opts.event_cap {
            complete = false;
            events = Vec::new();
            influx_log = Vec::new();
            return;
        }
        events.push(EventRecord {
            time: t,
            clock_index: k,
            flux,
            state_after: EnergyState::from_vec_unchecked(e.to_vec()),
        });
        influx_log.push(running_influx);
    };
    for &ts in opts.snapshot_times.iter().filter(|&&ts| ts <= t_end) {
        cur.advance_to(ts, &mut log);
        snapshots.push((ts, EnergyState::from_vec_unchecked(cur.energies().to_vec())));
    }
    cur.advance_to(t_end, &mut log);
    Ok(Trajectory {
        initial_state: e0.clone(),
        events,
        boundary_influx: influx_log,
        log_complete: complete,
        t_end,
        final_state: EnergyState::from_vec_unchecked(cur.energies().to_vec()),
        n_events: cur.n_events,
        bond_flux: cur.bond_flux.clone(),
        bond_events: cur.bond_events.clone(),
        total_influx: cur.influx,
        snapshots,
        particles: cfg.particles,
        t_left: cfg.t_left,
        t_right: cfg.t_right,
    })
}

/// Flux and energy functionals of a trajectory.
#[derive(Debug, Clone)]
pub struct PathFunctionals {
    /// Net boundary influx over `[0, t_end]`.
    pub boundary_influx: f64,
    /// Per-bond time-averaged flux, `sum_k J_k / t_end` (left to right).
    pub bond_mean_flux: Vec<f64>,
    /// `-sum_k bond_mean_flux_k / (T_R - T_L)`, the empirical
    /// conductivity; `None` when `T_L = T_R`.
    pub kappa_hat: Option<f64>,
    /// `(time, total energy)` after each logged event, starting at `t = 0`.
    /// Empty when the event log was dropped.
    pub total_energy: Vec<(f64, f64)>,
}

/// Conductivity estimate from per-bond mean fluxes measured on the fast
/// time scale: `-sum_k phi_k / (T_R - T_L)`.
pub fn kappa_from_bond_flux(bond_mean_flux: &[f64], t_left: f64, t_right: f64) -> Option<f64> {
    if t_left == t_right {
        return None;
    }
    Some(-bond_mean_flux.iter().sum::<f64>() / (t_right - t_left))
}

pub fn path_functionals(traj: &Trajectory) -> PathFunctionals {
    let bond_mean_flux: Vec<f64> = traj.bond_flux.iter().map(|s| s / traj.t_end).collect();
    let kappa_hat = kappa_from_bond_flux(&bond_mean_flux, traj.t_left, traj.t_right);
    let mut total_energy = Vec::new();
    if traj.log_complete {
        let e0 = traj.initial_state.total();
        total_energy.reserve(traj.events.len() + 1);
        total_energy.push((0.0, e0));
        for (ev, inf) in traj.events.iter().zip(&traj.boundary_influx) {
            total_energy.push((ev.time, e0 + inf));
        }
    }
    PathFunctionals {
        boundary_influx: traj.total_influx,
        bond_mean_flux,
        kappa_hat,
        total_energy,
    }
}

/// Ensemble summary.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub time_grid: Vec<f64>,
    pub mean_path: Vec<Vec<f64>>,
    /// Moments of the final states, or of `sqrt(M) (state - reference)` at
    /// the final grid time when `rescaled`.
    pub final_moments: MomentSummary,
    pub n_paths: usize,
    pub rescaled: bool,
    /// Per path: `max_t ||state(t) - reference(t)||_inf` over the grid.
    pub sup_errors: Option<Vec<f64>>,
    /// Per path final states (unscaled), in path order.
    pub final_states: Vec<Vec<f64>>,
}

impl EnsembleStats {
    pub fn cov_final(&self) -> &nalgebra::DMatrix<f64> {
        &self.final_moments.cov
    }
}

/// Simulates `n_paths` independent paths in parallel. Path `i` uses seed
/// `path_seed(cfg.master_seed, i)`. States are sampled on `time_grid`
/// (ascending; its last entry is the horizon). With a `reference`
/// solution, deviations from it are tracked as well.
pub fn ensemble(
    cfg: &ChainConfig,
    e0: &EnergyState,
    n_paths: usize,
    time_grid: &[f64],
    reference: Option<&OdeSolution>,
) -> Result<EnsembleStats> {
    cfg.check_state(e0)?;
    if n_paths == 0 {
        return Err(ChainError::InvalidConfig("n_paths must be at least 1".into()));
    }
    if time_grid.is_empty() || time_grid.windows(2).any(|w| w[1] < w[0]) || time_grid[0] < 0.0 {
        return Err(ChainError::InvalidConfig(
            "time_grid must be non-empty, non-negative and ascending".into(),
        ));
    }
    let refs: Option<Vec<Vec<f64>>> = reference.map(|r| time_grid.iter().map(|&t| r.at(t)).collect());
    let paths: Vec<(Vec<Vec<f64>>, f64)> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut cur = PathCursor::new(cfg, e0, path_seed(cfg.master_seed, i as u64)).expect("state checked above");
            let mut snaps = Vec::with_capacity(time_grid.len());
            let mut sup = 0.0f64;
            for (g, &t) in time_grid.iter().enumerate() {
                cur.advance_to(t, |_, _, _, _| {});
                let s = cur.energies().to_vec();
                if let Some(r) = &refs {
                    let d = s.iter().zip(&r[g]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    sup = sup.max(d);
                }
                snaps.push(s);
            }
            (snaps, sup)
        })
        .collect();

    let n = cfg.n_cells;
    let mean_path: Vec<Vec<f64>> = (0..time_grid.len())
        .map(|g| {
            (0..n)
                .map(|c| {
                    let xs: Vec<f64> = paths.iter().map(|p| p.0[g][c]).collect();
                    crate::stats::mean(&xs)
                })
                .collect()
        })
        .collect();
    let last = time_grid.len() - 1;
    let final_states: Vec<Vec<f64>> = paths.iter().map(|p| p.0[last].clone()).collect();
    let sqrt_m = cfg.m().sqrt();
    let samples: Vec<Vec<f64>> = match &refs {
        Some(r) => final_states
            .iter()
            .map(|s| s.iter().zip(&r[last]).map(|(a, b)| sqrt_m * (a - b)).collect())
            .collect(),
        None => final_states.clone(),
    };
    let final_moments = if n_paths >= 2 {
        MomentSummary::from_samples(&samples)
    } else {
        MomentSummary {
            n: 1,
            mean: samples[0].clone(),
            mean_se: vec![0.0; n],
            cov: nalgebra::DMatrix::zeros(n, n),
            cov_se: nalgebra::DMatrix::zeros(n, n),
        }
    };
    Ok(EnsembleStats {
        time_grid: time_grid.to_vec(),
        mean_path,
        final_moments,
        n_paths,
        rescaled: refs.is_some(),
        sup_errors: refs.map(|_| paths.iter().map(|p| p.1).collect()),
        final_states,
    })
}
