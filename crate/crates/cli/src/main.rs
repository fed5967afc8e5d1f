//! `heatchain`: command-line front end for the energy-exchange chain.
//!
//! Exit status: 0 on success, 1 when a verification check fails (one
//! `FAIL ...` line on stderr), 2 for usage, configuration or runtime errors.

mod config;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use heatchain_core::rng::SEED_RULE;

use config::{keys_help, Params};

macro_rules! key_flags {
    ($($key:ident),* $(,)?) => {
        /// Per-key overrides; any key from the config file can be given as a flag.
        #[derive(Args, Debug, Default)]
        struct KeyFlags {
            $(
                #[arg(long = stringify!($key), global = true, value_name = "VALUE", help_heading = "Config keys")]
                $key: Option<String>,
            )*
        }

        impl KeyFlags {
            fn pairs(&self) -> Vec<(&'static str, Option<&String>)> {
                vec![$((stringify!($key), self.$key.as_ref())),*]
            }
        }
    };
}

key_flags!(
    n_cells, particles, t_left, t_right, rate_fn, rate_cap, seed, e0, state, t_end, dt, grid_dt, n_paths, n_samples,
    m_list, delta_list, epsilon, tol, h, burn_in, t_measure, sample_dt, n_batches, event_cap,
);

#[derive(Parser, Debug)]
#[command(
    name = "heatchain",
    version,
    about = "Stochastic energy-exchange chain between two heat baths"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, env = "HEATCHAIN_OUT", default_value = "heatchain-out")]
    out: PathBuf,

    /// Worker threads for ensembles (default: all cores). Results do not
    /// depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Also write `plot.gp`, a gnuplot script for the CSVs.
    #[arg(long, global = true)]
    plot: bool,

    #[command(flatten)]
    keys: KeyFlags,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Simulate one path of the jump process.
    Simulate,
    /// Integrate the deterministic limit ODE.
    Ode,
    /// Solve for the equilibrium profile (and conductivity).
    Equilibrium,
    /// Conductivity of the equilibrium.
    Kappa,
    /// One path of the linear fluctuation SDE, and its covariance at t_end.
    #[command(name = "sde-clt")]
    SdeClt,
    /// One path of the mesoscopic SDE.
    #[command(name = "sde-meso")]
    SdeMeso,
    /// One-event second moment matrix at a state (optionally checked by Monte Carlo).
    Moments,
    /// Stationary Gaussian covariance from the Lyapunov equation, with a stability report.
    Lyapunov,
    /// Law of large numbers scaling experiment.
    #[command(name = "verify-lln")]
    VerifyLln,
    /// Central limit covariance experiment.
    #[command(name = "verify-clt")]
    VerifyClt,
    /// Fourier's law experiment.
    #[command(name = "verify-fourier")]
    VerifyFourier,
    /// Beta(1, M-1) tail bound check.
    #[command(name = "verify-beta")]
    VerifyBeta,
    /// Steady-state Gaussian experiment.
    #[command(name = "verify-ness")]
    VerifyNess,
    /// Jump process against mesoscopic SDE moments.
    #[command(name = "verify-meso")]
    VerifyMeso,
    /// Re-run from a manifest written by an earlier run.
    Rerun {
        /// Path to `manifest.txt`.
        manifest: PathBuf,
    },
}

impl Cmd {
    fn name(&self) -> Option<&'static str> {
        Some(match self {
            Cmd::Simulate => "simulate",
            Cmd::Ode => "ode",
            Cmd::Equilibrium => "equilibrium",
            Cmd::Kappa => "kappa",
            Cmd::SdeClt => "sde-clt",
            Cmd::SdeMeso => "sde-meso",
            Cmd::Moments => "moments",
            Cmd::Lyapunov => "lyapunov",
            Cmd::VerifyLln => "verify-lln",
            Cmd::VerifyClt => "verify-clt",
            Cmd::VerifyFourier => "verify-fourier",
            Cmd::VerifyBeta => "verify-beta",
            Cmd::VerifyNess => "verify-ness",
            Cmd::VerifyMeso => "verify-meso",
            Cmd::Rerun { .. } => return None,
        })
    }
}

fn command() -> clap::Command {
    let mut cmd = Cli::command();
    for sub in run::SUBCOMMANDS {
        cmd = cmd.mut_subcommand(*sub, |c| c.after_help(keys_help(sub)));
    }
    cmd
}

fn main() -> ExitCode {
    let matches = command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match real_main(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    let mut params = match &cli.cmd {
        Cmd::Rerun { manifest } => {
            let mut p = Params::new("");
            let sub = p
                .load_file(manifest, true)?
                .with_context(|| format!("{} has no `subcommand` entry", manifest.display()))?;
            if !run::SUBCOMMANDS.contains(&sub.as_str()) {
                bail!("manifest names unknown subcommand `{sub}`");
            }
            let mut q = Params::new(&sub);
            q.load_file(manifest, true)?;
            q
        }
        other => {
            let mut p = Params::new(other.name().expect("not rerun"));
            if let Some(path) = &cli.config {
                p.load_file(path, false)?;
            }
            p
        }
    };
    for (k, v) in cli.keys.pairs() {
        if let Some(v) = v {
            params.set_flag(k, v)?;
        }
    }

    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let outcome = run::dispatch(&params, &cli.out)?;
    let mut files = outcome.files.clone();
    if cli.plot {
        let n = params
            .used()
            .iter()
            .find(|(k, _)| k == "n_cells")
            .and_then(|(_, v)| v.parse().ok());
        std::fs::write(cli.out.join("plot.gp"), run::plot_script(&files, n))?;
        files.push("plot.gp".into());
    }
    write_manifest(&cli.out, &params, &outcome, &files, cli.threads)?;

    print!("{}", outcome.summary);
    println!("outputs written to {}", cli.out.display());
    match &outcome.report {
        Some(rep) if !rep.passed() => {
            eprintln!("{}", rep.failure_line().unwrap_or_default());
            Ok(false)
        }
        _ => Ok(true),
    }
}

/// `manifest.txt` is itself a config file: metadata lives in comments and
/// `heatchain rerun manifest.txt` replays the run.
fn write_manifest(dir: &Path, p: &Params, o: &run::Outcome, files: &[String], threads: Option<usize>) -> Result<()> {
    let ts = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut s = String::from("# heatchain run manifest; replay with `heatchain rerun <this file>`\n");
    s.push_str(&format!("# version = {}\n", env!("CARGO_PKG_VERSION")));
    s.push_str(&format!("# timestamp_unix = {ts}\n"));
    s.push_str(&format!(
        "# threads = {}\n",
        threads.map_or_else(
            || format!("default ({})", rayon::current_num_threads()),
            |n| n.to_string()
        )
    ));
    s.push_str(&format!("# seed_rule = {SEED_RULE}\n"));
    for (label, seed) in &o.seeds {
        s.push_str(&format!("# resolved_seed {label} = {seed}\n"));
    }
    s.push_str(&format!("# outputs = {}\n", files.join(",")));
    s.push_str(&format!("subcommand = {}\n", p.subcommand()));
    for (k, v) in p.used() {
        s.push_str(&format!("{k} = {v}\n"));
    }
    std::fs::write(dir.join("manifest.txt"), s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clap_definition_is_consistent() {
        command().debug_assert();
    }

    #[test]
    fn flag_names_match_config_keys() {
        let names: Vec<&str> = KeyFlags::default().pairs().into_iter().map(|(k, _)| k).collect();
        assert_eq!(names, config::KEYS);
    }
}
