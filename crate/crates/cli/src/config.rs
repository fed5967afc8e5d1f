//! Flat `key = value` configuration with per-subcommand defaults.
//!
//! Precedence is flag > file > default. Every key read by a run is recorded
//! with its resolved value so the manifest can reproduce the run exactly.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use heatchain_core::model::default_rate_cap;
use heatchain_core::{ChainConfig, EnergyState, RateKind};

/// Every accepted key, in manifest order.
pub const KEYS: &[&str] = &[
    "n_cells",
    "particles",
    "t_left",
    "t_right",
    "rate_fn",
    "rate_cap",
    "seed",
    "e0",
    "state",
    "t_end",
    "dt",
    "grid_dt",
    "n_paths",
    "n_samples",
    "m_list",
    "delta_list",
    "epsilon",
    "tol",
    "h",
    "burn_in",
    "t_measure",
    "sample_dt",
    "n_batches",
    "event_cap",
];

/// Reserved for manifests; names the subcommand to replay.
pub const SUBCOMMAND_KEY: &str = "subcommand";

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    File { line: usize },
    Flag,
    Default,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::File { line } => write!(f, "config line {line}"),
            Source::Flag => write!(f, "command-line flag"),
            Source::Default => write!(f, "built-in default"),
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    source: Source,
}

/// Parsed `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str, allow_subcommand: bool) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| anyhow!("line {line}: expected key = value, got `{body}`"))?;
        let (k, v) = (k.trim(), v.trim());
        let known = KEYS.contains(&k) || (allow_subcommand && k == SUBCOMMAND_KEY);
        if !known {
            bail!("line {line}: unknown key `{k}`");
        }
        if v.is_empty() {
            bail!("line {line}: missing value for key `{k}`");
        }
        if out.iter().any(|(pk, _, _): &(String, String, usize)| pk == k) {
            bail!("line {line}: duplicate key `{k}`");
        }
        out.push((k.to_string(), v.to_string(), line));
    }
    Ok(out)
}

/// Resolved parameters for one run.
#[derive(Debug, Default)]
pub struct Params {
    subcommand: String,
    entries: BTreeMap<String, Entry>,
    used: RefCell<BTreeMap<String, String>>,
}

impl Params {
    pub fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            ..Default::default()
        }
    }

    pub fn subcommand(&self) -> &str {
        &self.subcommand
    }

    pub fn load_file(&mut self, path: &Path, allow_subcommand: bool) -> Result<Option<String>> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut sub = None;
        for (k, v, line) in parse_kv(&text, allow_subcommand).with_context(|| format!("in {}", path.display()))? {
            if k == SUBCOMMAND_KEY {
                sub = Some(v);
                continue;
            }
            self.entries.insert(
                k,
                Entry {
                    value: v,
                    source: Source::File { line },
                },
            );
        }
        Ok(sub)
    }

    /// Overrides from flags; `key` must be one of [`KEYS`].
    pub fn set_flag(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            bail!("unknown key `{key}`");
        }
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                source: Source::Flag,
            },
        );
        Ok(())
    }

    fn raw(&self, key: &str) -> Result<(String, Source)> {
        debug_assert!(KEYS.contains(&key), "{key}");
        let (value, source) = match self.entries.get(key) {
            Some(e) => (e.value.clone(), e.source.clone()),
            None => {
                let d = default_for(&self.subcommand, key)
                    .ok_or_else(|| anyhow!("missing required key `{key}` for `{}`", self.subcommand))?;
                (d.to_string(), Source::Default)
            }
        };
        Ok((value, source))
    }

    fn record(&self, key: &str, value: String) {
        self.used.borrow_mut().insert(key.to_string(), value);
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let (v, src) = self.raw(key)?;
        let parsed = v
            .parse::<T>()
            .map_err(|e| anyhow!("key `{key}` ({src}): cannot parse `{v}`: {e}"))?;
        self.record(key, v);
        Ok(parsed)
    }

    /// `auto` maps to `None`.
    pub fn get_auto<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        let (v, _) = self.raw(key)?;
        if v == "auto" {
            self.record(key, v);
            return Ok(None);
        }
        self.get(key).map(Some)
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        let (v, src) = self.raw(key)?;
        let items = v
            .split([',', ';'])
            .map(|s| {
                let s = s.trim();
                s.parse::<T>()
                    .map_err(|e| anyhow!("key `{key}` ({src}): cannot parse list item `{s}`: {e}"))
            })
            .collect::<Result<Vec<T>>>()?;
        self.record(key, v);
        Ok(items)
    }

    /// Chain parameters. `rate_cap = auto` resolves to the default cap and
    /// is recorded as the number.
    pub fn chain(&self) -> Result<ChainConfig> {
        let n: usize = self.get("n_cells")?;
        let m: u64 = self.get("particles")?;
        let tl: f64 = self.get("t_left")?;
        let tr: f64 = self.get("t_right")?;
        let kind: RateKind = self.get("rate_fn")?;
        let seed: u64 = self.get("seed")?;
        let cap = match self.get_auto::<f64>("rate_cap")? {
            Some(c) => c,
            None => {
                let c = default_rate_cap(tl, tr);
                self.record("rate_cap", c.to_string());
                c
            }
        };
        let cfg = ChainConfig::new(n, m, tl, tr, kind)
            .and_then(|c| c.with_cap(cap))
            .map_err(|e| anyhow!("invalid chain configuration: {e}"))?;
        Ok(cfg.with_seed(seed))
    }

    /// Energy vector under `key`; `auto` is `n_cells` copies of `t_left`.
    pub fn energies(&self, key: &str, cfg: &ChainConfig) -> Result<EnergyState> {
        let (v, _) = self.raw(key)?;
        let vals = if v == "auto" {
            let vals = vec![cfg.t_left; cfg.n_cells];
            self.record(key, join(&vals));
            vals
        } else {
            self.get_list::<f64>(key)?
        };
        if vals.len() != cfg.n_cells {
            bail!("key `{key}`: expected {} values, got {}", cfg.n_cells, vals.len());
        }
        EnergyState::new(vals).map_err(|e| anyhow!("key `{key}`: {e}"))
    }

    /// Keys read so far with their resolved values.
    pub fn used(&self) -> Vec<(String, String)> {
        let used = self.used.borrow();
        KEYS.iter()
            .filter_map(|k| used.get(*k).map(|v| (k.to_string(), v.clone())))
            .collect()
    }
}

pub fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Keys read by each subcommand.
pub fn keys_for(sub: &str) -> &'static [&'static str] {
    const CHAIN: [&str; 7] = [
        "n_cells",
        "particles",
        "t_left",
        "t_right",
        "rate_fn",
        "rate_cap",
        "seed",
    ];
    macro_rules! with_chain {
        ($($k:literal),*) => {{
            const K: &[&str] = &[CHAIN[0], CHAIN[1], CHAIN[2], CHAIN[3], CHAIN[4], CHAIN[5], CHAIN[6] $(, $k)*];
            K
        }};
    }
    match sub {
        "simulate" => with_chain!("e0", "t_end", "event_cap"),
        "ode" => with_chain!("e0", "t_end", "dt"),
        "equilibrium" | "kappa" => with_chain!("tol"),
        "sde-clt" | "sde-meso" => with_chain!("e0", "t_end", "dt"),
        "moments" => with_chain!("state", "n_samples"),
        "lyapunov" => with_chain!("tol", "h"),
        "verify-lln" => with_chain!("e0", "m_list", "t_end", "grid_dt", "n_paths"),
        "verify-clt" => with_chain!("e0", "t_end", "n_paths"),
        "verify-fourier" => with_chain!("delta_list", "tol", "n_paths", "t_measure", "burn_in", "n_batches"),
        "verify-beta" => &["m_list", "epsilon"],
        "verify-ness" => with_chain!("burn_in", "t_measure", "sample_dt", "n_batches", "tol"),
        "verify-meso" => with_chain!("e0", "m_list", "t_end", "dt", "n_paths"),
        _ => &[],
    }
}

/// Default value of `key` for subcommand `sub`.
pub fn default_for(sub: &str, key: &str) -> Option<&'static str> {
    let specific = match (sub, key) {
        ("verify-lln", "n_cells") => "5",
        ("verify-ness", "particles") => "200",
        ("verify-ness", "t_right") => "1.5",
        ("simulate", "particles") => "100",
        ("simulate", "t_end") => "1",
        ("ode", "t_end") => "5",
        ("verify-lln", "t_end") => "5",
        ("verify-lln", "m_list") => "100,1000,10000",
        ("verify-lln", "n_paths") => "200",
        ("verify-clt", "n_paths") => "10000",
        ("verify-meso", "m_list") => "100,1000",
        ("verify-meso", "n_paths") => "4000",
        ("verify-fourier", "n_paths") => "8",
        ("verify-fourier", "t_measure") => "2000",
        ("verify-fourier", "burn_in") => "50",
        ("verify-fourier", "n_batches") => "20",
        ("verify-ness", "t_measure") => "20000",
        ("verify-ness", "n_batches") => "40",
        ("verify-beta", "m_list") => "1000,1000000,1000000000",
        ("sde-clt" | "sde-meso" | "verify-meso", "dt") => "0.001",
        _ => "",
    };
    if !specific.is_empty() {
        return Some(specific);
    }
    Some(match key {
        "n_cells" => "3",
        "particles" => "1000",
        "t_left" => "1",
        "t_right" => "2",
        "rate_fn" => "sqrt_product",
        "rate_cap" => "auto",
        "seed" => "42",
        "e0" | "state" => "auto",
        "t_end" => "2",
        "dt" => "0.01",
        "grid_dt" => "0.05",
        "n_samples" => "0",
        "delta_list" => "0.2,0.1,0.05",
        "epsilon" => "0.3",
        "tol" => "1e-12",
        "h" => "1e-5",
        "burn_in" => "auto",
        "sample_dt" => "0.5",
        "event_cap" => "10000000",
        _ => return None,
    })
}

/// Help block listing the keys of `sub` with their defaults.
pub fn keys_help(sub: &str) -> String {
    let mut s = String::from("Keys (config file `key = value`, or flag `--key value`), with defaults:\n");
    for k in keys_for(sub) {
        let d = default_for(sub, k).unwrap_or("(required)");
        s.push_str(&format!("  {k:<11} {d}\n"));
    }
    s.push_str("\n`auto` for rate_cap is 100 sqrt(max(t_left, t_right)); for e0/state it is t_left in every cell;\n");
    s.push_str("for burn_in it is 5 / |max Re lambda| of the equilibrium Jacobian (verify-ness).\n");
    s
}
