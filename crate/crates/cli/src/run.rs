//! Subcommand implementations. Each writes its CSVs into the output
//! directory and returns what the manifest and exit status need.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Result};
use heatchain_core::export::{self, save};
use heatchain_core::fluct::{
    covariance_ode, h_matrix, integrate_clt_sde, integrate_mesoscopic, moments_exact, ness_gaussian, sde_seed,
    sigma_matrix,
};
use heatchain_core::jump::{path_functionals, simulate_with, SimOptions};
use heatchain_core::ode::{conductivity, integrate_ode, solve_equilibrium};
use heatchain_core::rng::path_seed;
use heatchain_core::verify::{self, ExperimentReport, FourierSim, NessOptions};

use crate::config::Params;

pub const SUBCOMMANDS: &[&str] = &[
    "simulate",
    "ode",
    "equilibrium",
    "kappa",
    "sde-clt",
    "sde-meso",
    "moments",
    "lyapunov",
    "verify-lln",
    "verify-clt",
    "verify-fourier",
    "verify-beta",
    "verify-ness",
    "verify-meso",
];

#[derive(Debug, Default)]
pub struct Outcome {
    /// Files written, relative to the output directory.
    pub files: Vec<String>,
    /// Seeds actually used, `(label, value)`.
    pub seeds: Vec<(String, u64)>,
    pub report: Option<ExperimentReport>,
    /// Short human summary for stdout.
    pub summary: String,
}

impl Outcome {
    fn file(&mut self, dir: &Path, name: &str, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
        save(&dir.join(name), f)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn report(&mut self, dir: &Path, rep: ExperimentReport) -> Result<()> {
        export::write_report(dir, &rep)?;
        self.files.push("report.csv".into());
        self.files.push("report.txt".into());
        let _ = write!(self.summary, "{}", rep.to_text());
        self.report = Some(rep);
        Ok(())
    }
}

pub fn dispatch(p: &Params, dir: &Path) -> Result<Outcome> {
    let mut o = Outcome::default();
    match p.subcommand() {
        "simulate" => simulate(p, dir, &mut o)?,
        "ode" => {
            let cfg = p.chain()?;
            let e0 = p.energies("e0", &cfg)?;
            let sol = integrate_ode(&cfg, &e0, p.get("t_end")?, p.get("dt")?)?;
            o.file(dir, "trajectory.csv", |w| export::write_ode(w, &sol))?;
            o.summary = format!("final state: {:?}\n", sol.final_state());
        }
        "equilibrium" => {
            let cfg = p.chain()?;
            let tol: f64 = p.get("tol")?;
            let prof = solve_equilibrium(&cfg, tol)?;
            o.file(dir, "equilibrium.csv", |w| export::write_equilibrium(w, &prof))?;
            o.summary = format!("E* = {}\nc* = {}\n", prof.e_star, prof.c_star);
            if cfg.t_left != cfg.t_right {
                write_kappa(&cfg, tol, dir, &mut o)?;
            }
        }
        "kappa" => {
            let cfg = p.chain()?;
            let tol: f64 = p.get("tol")?;
            if cfg.t_left == cfg.t_right {
                bail!("kappa needs t_left != t_right");
            }
            write_kappa(&cfg, tol, dir, &mut o)?;
        }
        "sde-clt" => {
            let cfg = p.chain()?;
            let e0 = p.energies("e0", &cfg)?;
            let (t_end, dt): (f64, f64) = (p.get("t_end")?, p.get("dt")?);
            let theta = integrate_ode(&cfg, &e0, t_end, dt)?;
            let seed = sde_seed(cfg.master_seed);
            o.seeds.push(("sde".into(), seed));
            let path = integrate_clt_sde(&cfg, &theta, t_end, dt, seed)?;
            let sig = covariance_ode(&cfg, &theta, t_end, dt)?;
            o.file(dir, "trajectory.csv", |w| export::write_sde_path(w, &path))?;
            o.file(dir, "sigma.csv", |w| export::write_matrix(w, sig.final_matrix()))?;
            o.summary = format!("Sigma(T) =\n{}", sig.final_matrix());
        }
        "sde-meso" => {
            let cfg = p.chain()?;
            let e0 = p.energies("e0", &cfg)?;
            let seed = sde_seed(cfg.master_seed);
            o.seeds.push(("sde".into(), seed));
            let path = integrate_mesoscopic(&cfg, &e0, p.get("t_end")?, p.get("dt")?, seed)?;
            o.file(dir, "trajectory.csv", |w| export::write_sde_path(w, &path))?;
            o.summary = format!(
                "final state: {:?}\nresampled steps: {}, clamped steps: {}\n",
                path.final_state(),
                path.resamples,
                path.clamps
            );
        }
        "moments" => {
            let cfg = p.chain()?;
            let state = p.energies("state", &cfg)?;
            let n_samples: usize = p.get("n_samples")?;
            let sig = sigma_matrix(&state, &cfg)?;
            let m2 = cfg.m() * cfg.m();
            let exact = moments_exact(&state, &cfg, cfg.particles)?.entries * m2;
            let hht = h_matrix(&state, &cfg)?.gram();
            o.file(dir, "sigma.csv", |w| export::write_matrix(w, &sig.entries))?;
            o.file(dir, "moments_exact.csv", |w| export::write_matrix(w, &exact))?;
            o.file(dir, "hht.csv", |w| export::write_matrix(w, &hht))?;
            o.summary = format!("Sigma = H H^T / R =\n{}M^2 E[zeta zeta^T] =\n{}", sig.entries, exact);
            if n_samples > 0 {
                o.seeds.push(("oracle".into(), cfg.master_seed));
                o.report(dir, verify::moment_oracle_experiment(&state, &cfg, n_samples)?)?;
            }
        }
        "lyapunov" => {
            let cfg = p.chain()?;
            let tol: f64 = p.get("tol")?;
            let h: f64 = p.get("h")?;
            let g = ness_gaussian(&cfg, tol)?;
            o.file(dir, "equilibrium.csv", |w| {
                writeln!(w, "i,E_star")?;
                for (i, v) in g.e_star.as_slice().iter().enumerate() {
                    writeln!(w, "{},{v}", i + 1)?;
                }
                Ok(())
            })?;
            o.file(dir, "jacobian.csv", |w| export::write_matrix(w, &g.jacobian.jac))?;
            o.file(dir, "lyapunov.csv", |w| export::write_matrix(w, &g.s.entries))?;
            o.file(dir, "covariance.csv", |w| export::write_matrix(w, &g.covariance))?;
            o.report(dir, verify::stability_experiment(&cfg, &[10.0 * h, h], tol)?)?;
            let _ = write!(
                o.summary,
                "S =\n{}S / M =\n{}residual = {:e}\n",
                g.s.entries, g.covariance, g.residual
            );
        }
        "verify-lln" => {
            let cfg = p.chain()?;
            let e0 = p.energies("e0", &cfg)?;
            let m_list: Vec<u64> = p.get_list("m_list")?;
            push_path_seeds(&mut o, cfg.master_seed, &m_list);
            let rep = verify::lln_experiment(
                &cfg,
                &e0,
                &m_list,
                p.get("t_end")?,
                p.get("grid_dt")?,
                p.get("n_paths")?,
            )?;
            o.report(dir, rep)?;
        }
        "verify-clt" => {
            let cfg = p.chain()?;
            let e0 = p.energies("e0", &cfg)?;
            o.seeds.push(("path[0]".into(), path_seed(cfg.master_seed, 0)));
            let rep = verify::clt_experiment(&cfg, &e0, p.get("t_end")?, p.get("n_paths")?)?;
            o.report(dir, rep)?;
        }
        "verify-fourier" => {
            let cfg = p.chain()?;
            let sim = FourierSim {
                n_paths: p.get("n_paths")?,
                t_measure: p.get("t_measure")?,
                burn_in: p.get("burn_in")?,
                n_batches: p.get("n_batches")?,
            };
            let deltas: Vec<f64> = p.get_list("delta_list")?;
            let rep = verify::fourier_experiment(&cfg, &deltas, &sim, p.get("tol")?)?;
            o.report(dir, rep)?;
        }
        "verify-beta" => {
            let m_list: Vec<f64> = p.get_list("m_list")?;
            o.report(dir, verify::beta_tail_check(&m_list, p.get("epsilon")?)?)?;
        }
        "verify-ness" => {
            let cfg = p.chain()?;
            o.seeds.push(("path".into(), cfg.master_seed));
            let opts = NessOptions {
                burn_in: p.get_auto("burn_in")?,
                t_measure: p.get("t_measure")?,
                sample_dt: p.get("sample_dt")?,
                n_batches: p.get("n_batches")?,
                tol: p.get("tol")?,
                check_doubling: false,
            };
            o.report(dir, verify::ness_experiment(&cfg, &opts)?)?;
        }
        "verify-meso" => {
            let cfg = p.chain()?;
            let e0 = p.energies("e0", &cfg)?;
            let m_list: Vec<u64> = p.get_list("m_list")?;
            push_path_seeds(&mut o, cfg.master_seed, &m_list);
            let rep =
                verify::mesoscopic_comparison(&cfg, &e0, &m_list, p.get("t_end")?, p.get("dt")?, p.get("n_paths")?)?;
            o.report(dir, rep)?;
        }
        other => return Err(anyhow!("unknown subcommand `{other}`")),
    }
    Ok(o)
}

fn push_path_seeds(o: &mut Outcome, master: u64, m_list: &[u64]) {
    for &m in m_list {
        let s = heatchain_core::rng::stream_seed(master, m);
        o.seeds.push((format!("master[M={m}]"), s));
    }
}

fn simulate(p: &Params, dir: &Path, o: &mut Outcome) -> Result<()> {
    let cfg = p.chain()?;
    let e0 = p.energies("e0", &cfg)?;
    let t_end: f64 = p.get("t_end")?;
    let event_cap: usize = p.get("event_cap")?;
    let seed = path_seed(cfg.master_seed, 0);
    o.seeds.push(("path[0]".into(), seed));
    // snapshots keep trajectory.csv useful when the event log overflows
    let snapshot_times: Vec<f64> = (0..=1000).map(|i| t_end * i as f64 / 1000.0).collect();
    let traj = simulate_with(
        &cfg,
        &e0,
        t_end,
        seed,
        &SimOptions {
            event_cap,
            snapshot_times,
        },
    )?;
    let pf = path_functionals(&traj);
    o.file(dir, "trajectory.csv", |w| export::write_trajectory(w, &traj))?;
    if traj.log_complete {
        o.file(dir, "events.csv", |w| export::write_events(w, &traj))?;
    }
    o.file(dir, "functionals.csv", |w| {
        writeln!(w, "name,value")?;
        writeln!(w, "n_events,{}", traj.n_events)?;
        writeln!(w, "boundary_influx,{}", pf.boundary_influx)?;
        if let Some(k) = pf.kappa_hat {
            writeln!(w, "kappa_hat,{k}")?;
        }
        for (k, v) in pf.bond_mean_flux.iter().enumerate() {
            writeln!(w, "bond_mean_flux[{k}],{v}")?;
        }
        Ok(())
    })?;
    o.summary = format!(
        "events: {}{}\nfinal state: {}\nboundary influx: {}\n",
        traj.n_events,
        if traj.log_complete {
            ""
        } else {
            " (event log exceeded event_cap; events.csv not written)"
        },
        traj.final_state,
        pf.boundary_influx
    );
    Ok(())
}

fn write_kappa(cfg: &heatchain_core::ChainConfig, tol: f64, dir: &Path, o: &mut Outcome) -> Result<()> {
    let c = conductivity(cfg, tol)?;
    if !o.files.iter().any(|f| f == "equilibrium.csv") {
        o.file(dir, "equilibrium.csv", |w| export::write_equilibrium(w, &c.profile))?;
    }
    o.file(dir, "kappa.csv", |w| {
        writeln!(w, "kappa,c_star,lower,upper")?;
        writeln!(w, "{},{},{},{}", c.kappa, c.c_star, c.lower, c.upper)
    })?;
    let _ = writeln!(o.summary, "kappa = {} (bounds [{}, {}])", c.kappa, c.lower, c.upper);
    Ok(())
}

/// Gnuplot script for the CSVs of a run.
pub fn plot_script(files: &[String], n_cells: Option<usize>) -> String {
    let mut s = String::from("# gnuplot script; run with `gnuplot -p plot.gp` inside the output directory\n");
    s.push_str("set datafile separator ','\nset key autotitle columnhead\n");
    for f in files {
        match f.as_str() {
            "trajectory.csv" => {
                let n = n_cells.unwrap_or(1);
                let _ = writeln!(
                    s,
                    "set title 'trajectory'\nset xlabel 't'\nplot for [i=2:{}] '{f}' using 1:i with steps",
                    n + 1
                );
                s.push_str("pause mouse close\n");
            }
            "equilibrium.csv" => {
                let _ = writeln!(
                    s,
                    "set title 'equilibrium profile'\nset xlabel 'cell'\nplot '{f}' using 1:2 with linespoints"
                );
                s.push_str("pause mouse close\n");
            }
            "events.csv" => {
                let _ = writeln!(
                    s,
                    "set title 'event flux'\nset xlabel 't'\nplot '{f}' using 1:3 with impulses"
                );
                s.push_str("pause mouse close\n");
            }
            f if f.ends_with(".csv") && f != "report.csv" && f != "functionals.csv" && f != "kappa.csv" => {
                let _ = writeln!(
                    s,
                    "set title '{f}'\nset yrange [*:*] reverse\nplot '{f}' using 2:1:3 with image\nset yrange [*:*] noreverse"
                );
                s.push_str("pause mouse close\n");
            }
            _ => {}
        }
    }
    s
}
