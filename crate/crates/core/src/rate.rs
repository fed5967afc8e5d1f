//! Bond rate functions `f(E1, E2)`.
//!
//! Every kind is evaluated uncapped and then clipped at the configured cap
//! `K`, so the evaluated rate is positive, non-decreasing in each argument
//! and bounded by `K`. Partial derivatives are those of the capped function:
//! they vanish wherever the cap binds.

use std::fmt;
use std::str::FromStr;

use crate::error::{domain, ChainError, Result};

/// The uncapped shape of a rate function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateKind {
    /// `f = c`.
    Constant(f64),
    /// `f = sqrt(E1 * E2)`.
    SqrtProduct,
    /// `f = sqrt(E1 * E2 / (E1 + E2))`.
    SqrtHarmonic,
    /// `f = sqrt(min(E1, E2))`.
    MinEnergySqrt,
    /// `f = min(E1, E2)`.
    MinEnergy,
}

/// A rate kind together with its cap `K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFunctionSpec {
    pub kind: RateKind,
    pub cap: f64,
}

impl RateFunctionSpec {
    pub fn new(kind: RateKind, cap: f64) -> Result<Self> {
        if !(cap > 0.0 && cap.is_finite()) {
            return Err(ChainError::InvalidConfig(format!(
                "rate_cap must be positive and finite, got {cap}"
            )));
        }
        if let RateKind::Constant(c) = kind {
            if !(c > 0.0 && c.is_finite()) {
                return Err(ChainError::InvalidConfig(format!(
                    "constant rate must be positive, got {c}"
                )));
            }
        }
        Ok(Self { kind, cap })
    }

    /// Uncapped value of the rate function.
    #[inline]
    pub fn raw(&self, e1: f64, e2: f64) -> f64 {
        match self.kind {
            RateKind::Constant(c) => c,
            RateKind::SqrtProduct => (e1 * e2).sqrt(),
            RateKind::SqrtHarmonic => (e1 * e2 / (e1 + e2)).sqrt(),
            RateKind::MinEnergySqrt => e1.min(e2).sqrt(),
            RateKind::MinEnergy => e1.min(e2),
        }
    }

    /// Capped rate `min(f(e1, e2), K)`. Inputs are not validated; use
    /// [`RateFunctionSpec::rate`] for the checked version.
    #[inline]
    pub fn eval(&self, e1: f64, e2: f64) -> f64 {
        self.raw(e1, e2).min(self.cap)
    }

    /// Checked evaluation: both energies must be strictly positive.
    pub fn rate(&self, e1: f64, e2: f64) -> Result<f64> {
        if !(e1 > 0.0 && e2 > 0.0) {
            return Err(domain("rate", format!("energies must be positive, got ({e1}, {e2})")));
        }
        Ok(self.eval(e1, e2))
    }

    #[inline]
    pub fn is_capped(&self, e1: f64, e2: f64) -> bool {
        self.raw(e1, e2) >= self.cap
    }

    /// Partial derivatives `(df/dE1, df/dE2)` of the capped function.
    ///
    /// The min-based kinds are not differentiable on the diagonal; there the
    /// symmetric subgradient (half of the one-sided derivative in each
    /// argument) is returned.
    pub fn partials(&self, e1: f64, e2: f64) -> (f64, f64) {
        if self.is_capped(e1, e2) {
            return (0.0, 0.0);
        }
        match self.kind {
            RateKind::Constant(_) => (0.0, 0.0),
            RateKind::SqrtProduct => {
                let f = (e1 * e2).sqrt();
                (0.5 * e2 / f, 0.5 * e1 / f)
            }
            RateKind::SqrtHarmonic => {
                let s = e1 + e2;
                let f = (e1 * e2 / s).sqrt();
                let inv = 0.5 / (f * s * s);
                (e2 * e2 * inv, e1 * e1 * inv)
            }
            RateKind::MinEnergySqrt => min_split(e1, e2, |m| 0.5 / m.sqrt()),
            RateKind::MinEnergy => min_split(e1, e2, |_| 1.0),
        }
    }

    /// `gamma = (df/dE1 + df/dE2) / f`, the logarithmic divergence of `f`.
    ///
    /// Undefined where the cap binds (the capped function is flat there).
    pub fn gamma(&self, e1: f64, e2: f64) -> Result<f64> {
        if !(e1 > 0.0 && e2 > 0.0) {
            return Err(domain("gamma", format!("energies must be positive, got ({e1}, {e2})")));
        }
        if self.is_capped(e1, e2) {
            return Err(ChainError::CappedRegion { e1, e2 });
        }
        let (d1, d2) = self.partials(e1, e2);
        Ok((d1 + d2) / self.raw(e1, e2))
    }
}

fn min_split(e1: f64, e2: f64, deriv: impl Fn(f64) -> f64) -> (f64, f64) {
    if e1 < e2 {
        (deriv(e1), 0.0)
    } else if e2 < e1 {
        (0.0, deriv(e2))
    } else {
        let d = 0.5 * deriv(e1);
        (d, d)
    }
}

impl fmt::Display for RateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateKind::Constant(c) => write!(f, "constant({c})"),
            RateKind::SqrtProduct => f.write_str("sqrt_product"),
            RateKind::SqrtHarmonic => f.write_str("sqrt_harmonic"),
            RateKind::MinEnergySqrt => f.write_str("min_energy_sqrt"),
            RateKind::MinEnergy => f.write_str("min_energy"),
        }
    }
}

impl FromStr for RateKind {
    type Err = ChainError;

    /// Accepts `sqrt_product`, `sqrt_harmonic`, `min_energy_sqrt`,
    /// `min_energy`, `constant` (c = 1), `constant(c)` and `constant:c`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "sqrt_product" => return Ok(RateKind::SqrtProduct),
            "sqrt_harmonic" => return Ok(RateKind::SqrtHarmonic),
            "min_energy_sqrt" => return Ok(RateKind::MinEnergySqrt),
            "min_energy" => return Ok(RateKind::MinEnergy),
            "constant" => return Ok(RateKind::Constant(1.0)),
            _ => {}
        }
        let arg = s
            .strip_prefix("constant(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("constant:"));
        match arg {
            Some(v) => {
                let c: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| ChainError::InvalidConfig(format!("bad constant rate value `{v}`")))?;
                if c > 0.0 && c.is_finite() {
                    Ok(RateKind::Constant(c))
                } else {
                    Err(ChainError::InvalidConfig(format!(
                        "constant rate must be positive, got {c}"
                    )))
                }
            }
            None => Err(ChainError::InvalidConfig(format!("unknown rate function `{s}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: RateKind, cap: f64) -> RateFunctionSpec {
        RateFunctionSpec::new(kind, cap).unwrap()
    }

    #[test]
    fn hand_values() {
        assert_eq!(spec(RateKind::SqrtProduct, 10.0).rate(1.0, 4.0).unwrap(), 2.0);
        assert_eq!(spec(RateKind::SqrtProduct, 5.0).rate(100.0, 100.0).unwrap(), 5.0);
        let c = spec(RateKind::Constant(1.0), 10.0);
        for (x, y) in [(0.1, 7.0), (3.0, 3.0), (1e-6, 1e6)] {
            assert_eq!(c.rate(x, y).unwrap(), 1.0);
        }
    }

    #[test]
    fn rejects_non_positive_energy() {
        let s = spec(RateKind::SqrtHarmonic, 10.0);
        assert!(s.rate(0.0, 1.0).is_err());
        assert!(s.rate(1.0, -2.0).is_err());
    }

    #[test]
    fn partials_match_central_differences() {
        let kinds = [
            RateKind::SqrtProduct,
            RateKind::SqrtHarmonic,
            RateKind::MinEnergySqrt,
            RateKind::MinEnergy,
            RateKind::Constant(2.0),
        ];
        let h = 1e-6;
        for kind in kinds {
            let s = spec(kind, 100.0);
            for (x, y) in [(1.0, 1.7), (2.3, 0.4), (0.9, 1.2)] {
                let (d1, d2) = s.partials(x, y);
                let n1 = (s.eval(x + h, y) - s.eval(x - h, y)) / (2.0 * h);
                let n2 = (s.eval(x, y + h) - s.eval(x, y - h)) / (2.0 * h);
                assert!((d1 - n1).abs() < 1e-7, "{kind} d1 {d1} vs {n1}");
                assert!((d2 - n2).abs() < 1e-7, "{kind} d2 {d2} vs {n2}");
            }
        }
    }

    #[test]
    fn gamma_is_log_divergence() {
        // (df1 + df2)/f computed by hand: sqrt(xy) gives (x+y)/(2xy),
        // sqrt(xy/(x+y)) gives (x^2+y^2)/(2xy(x+y)).
        let p = spec(RateKind::SqrtProduct, 100.0);
        let h = spec(RateKind::SqrtHarmonic, 100.0);
        assert!((p.gamma(1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((h.gamma(1.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let (x, y) = (1.3_f64, 2.9_f64);
        assert!((p.gamma(x, y).unwrap() - (x + y) / (2.0 * x * y)).abs() < 1e-14);
        let want = (x * x + y * y) / (2.0 * x * y * (x + y));
        assert!((h.gamma(x, y).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn harmonic_gamma_decreases_only_inside_window() {
        let h = spec(RateKind::SqrtHarmonic, 100.0);
        let w = 1.0 + 2f64.sqrt();
        let d = 1e-6;
        let dgamma_d1 = |x: f64, y: f64| (h.gamma(x + d, y).unwrap() - h.gamma(x - d, y).unwrap()) / (2.0 * d);
        let dgamma_d2 = |x: f64, y: f64| (h.gamma(x, y + d).unwrap() - h.gamma(x, y - d).unwrap()) / (2.0 * d);
        let e1 = 1.0;
        // just inside both edges of the window
        for e2 in [e1 / w * 1.01, e1 * w * 0.99, e1] {
            assert!(dgamma_d1(e1, e2) < 0.0 && dgamma_d2(e1, e2) < 0.0);
        }
        // just outside: one partial turns positive
        assert!(dgamma_d1(e1, e1 / w * 0.99) > 0.0);
        assert!(dgamma_d2(e1, e1 * w * 1.01) > 0.0);
    }

    #[test]
    fn gamma_flags_capped_region() {
        let s = spec(RateKind::SqrtProduct, 1.0);
        assert!(matches!(s.gamma(4.0, 4.0), Err(ChainError::CappedRegion { .. })));
        assert_eq!(s.partials(4.0, 4.0), (0.0, 0.0));
    }

    #[test]
    fn parse_round_trip() {
        for s in [
            "sqrt_product",
            "sqrt_harmonic",
            "min_energy_sqrt",
            "min_energy",
            "constant(2.5)",
        ] {
            let k: RateKind = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        assert_eq!("constant".parse::<RateKind>().unwrap(), RateKind::Constant(1.0));
        assert_eq!("constant:3".parse::<RateKind>().unwrap(), RateKind::Constant(3.0));
        assert!("constant(-1)".parse::<RateKind>().is_err());
        assert!("cubic".parse::<RateKind>().is_err());
    }
}
