//! The model mixture and scalar functions derived from it.
//!
//! A mixture is a finite family of coefficients `beta_p` (p >= 2) plus an
//! external field `h`. It induces
//!
//! ```text
//! xi(s)    = sum_p beta_p^2 s^p
//! theta(s) = s xi'(s) - xi(s)
//! C(u)     = (xi(1) - xi(u) - xi'(u)(1-u)) / 2      (Onsager correction)
//! ```
//!
//! all on [0, 1], together with the Bernoulli rate function `I(x)` on [-1, 1]
//! and the SK-specific Plefka convergence margin.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Derivative order accepted by [`MixtureSpec::eval`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deriv {
    Value,
    First,
    Second,
}

/// A mixed p-spin mixture: coefficients `beta_p` keyed by p >= 2, and field h.
///
/// The SK model at inverse temperature beta is entered as `beta_2 = beta/sqrt(2)`,
/// so that `xi(s) = beta^2 s^2 / 2` holds literally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixtureSpec", into = "RawMixtureSpec")]
pub struct MixtureSpec {
    coeffs: BTreeMap<u32, f64>,
    h: f64,
}

#[derive(Serialize, Deserialize)]
struct RawMixtureSpec {
    coeffs: BTreeMap<u32, f64>,
    h: f64,
}

impl TryFrom<RawMixtureSpec> for MixtureSpec {
    type Error = Error;
    fn try_from(raw: RawMixtureSpec) -> Result<Self> {
        MixtureSpec::new(raw.coeffs, raw.h)
    }
}

impl From<MixtureSpec> for RawMixtureSpec {
    fn from(spec: MixtureSpec) -> Self {
        RawMixtureSpec {
            coeffs: spec.coeffs,
            h: spec.h,
        }
    }
}

impl MixtureSpec {
    /// Validates and builds a mixture. Requires every p >= 2, all values
    /// finite, and at least one nonzero coefficient.
    pub fn new(coeffs: BTreeMap<u32, f64>, h: f64) -> Result<Self> {
        if let Some((&p, _)) = coeffs.iter().find(|(&p, _)| p < 2) {
            return Err(Error::Invalid {
                what: "mixture",
                why: format!("coefficient key p = {p} is below 2"),
            });
        }
        if let Some((&p, &b)) = coeffs.iter().find(|(_, b)| !b.is_finite()) {
            return Err(Error::Invalid {
                what: "mixture",
                why: format!("beta_{p} = {b} is not finite"),
            });
        }
        if coeffs.values().all(|&b| b == 0.0) {
            return Err(Error::Invalid {
                what: "mixture",
                why: "all coefficients are zero; at least one beta_p must be nonzero".into(),
            });
        }
        if !h.is_finite() {
            return Err(Error::Invalid {
                what: "mixture",
                why: format!("h = {h} is not finite"),
            });
        }
        Ok(MixtureSpec { coeffs, h })
    }

    /// SK model at inverse temperature `beta`: the single coefficient
    /// `beta_2 = beta / sqrt(2)`.
    pub fn sk(beta: f64, h: f64) -> Self {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(2, beta / std::f64::consts::SQRT_2);
        MixtureSpec::new(coeffs, h).expect("SK mixture is always valid")
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn coeffs(&self) -> &BTreeMap<u32, f64> {
        &self.coeffs
    }

    /// p-values carrying a nonzero coefficient, ascending.
    pub fn active_p(&self) -> Vec<u32> {
        self.coeffs
            .iter()
            .filter(|(_, &b)| b != 0.0)
            .map(|(&p, _)| p)
            .collect()
    }

    /// Recovers beta for a pure SK mixture ({2: beta/sqrt(2)}), if that is
    /// what this spec is. The Plefka criterion is stated only for that case.
    pub fn sk_beta(&self) -> Option<f64> {
        let active = self.active_p();
        if active == [2] {
            Some(self.coeffs[&2] * std::f64::consts::SQRT_2)
        } else {
            None
        }
    }

    /// xi(s) = sum beta_p^2 s^p. Plain polynomial evaluation, no domain check.
    pub fn xi(&self, s: f64) -> f64 {
        self.coeffs
            .iter()
            .map(|(&p, &b)| b * b * s.powi(p as i32))
            .sum()
    }

    /// xi'(s).
    pub fn xi_d(&self, s: f64) -> f64 {
        self.coeffs
            .iter()
            .map(|(&p, &b)| b * b * p as f64 * s.powi(p as i32 - 1))
            .sum()
    }

    /// xi''(s).
    pub fn xi_dd(&self, s: f64) -> f64 {
        self.coeffs
            .iter()
            .map(|(&p, &b)| b * b * (p * (p - 1)) as f64 * s.powi(p as i32 - 2))
            .sum()
    }

    /// Antiderivative of xi''(s) s, i.e. G(s) = sum beta_p^2 (p-1) s^p with
    /// G(0) = 0. Step profiles integrate xi''(s) s exactly through this.
    pub(crate) fn xi_dd_s_antideriv(&self, s: f64) -> f64 {
        self.coeffs
            .iter()
            .map(|(&p, &b)| b * b * (p - 1) as f64 * s.powi(p as i32))
            .sum()
    }

    /// Checked evaluation of xi and its first two derivatives on [0, 1].
    pub fn eval(&self, s: f64, order: Deriv) -> Result<f64> {
        check_unit_interval("s", s)?;
        Ok(match order {
            Deriv::Value => self.xi(s),
            Deriv::First => self.xi_d(s),
            Deriv::Second => self.xi_dd(s),
        })
    }

    /// theta(s) = s xi'(s) - xi(s) on [0, 1].
    pub fn theta(&self, s: f64) -> Result<f64> {
        check_unit_interval("s", s)?;
        Ok(s * self.xi_d(s) - self.xi(s))
    }

    /// Onsager correction C(u) = (xi(1) - xi(u) - xi'(u)(1 - u)) / 2 on [0, 1].
    /// Nonnegative by convexity of xi.
    pub fn onsager_c(&self, u: f64) -> Result<f64> {
        check_unit_interval("u", u)?;
        Ok(0.5 * (self.xi(1.0) - self.xi(u) - self.xi_d(u) * (1.0 - u)))
    }
}

fn check_unit_interval(what: &'static str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain {
            what,
            value: v,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(())
}

/// I(x) = (1+x)/2 log((1+x)/2) + (1-x)/2 log((1-x)/2) on [-1, 1],
/// with the 0 log 0 = 0 convention at the endpoints. Note I <= 0 and
/// I(0) = -log 2; the entropy of the corresponding product marginal is -I.
pub fn bernoulli_entropy(x: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::Domain {
            what: "x",
            value: x,
            lo: -1.0,
            hi: 1.0,
        });
    }
    Ok(bernoulli_entropy_unchecked(x))
}

/// As [`bernoulli_entropy`] but clamping instead of erroring; used by hot
/// loops that already guarantee x in [-1, 1].
pub(crate) fn bernoulli_entropy_unchecked(x: f64) -> f64 {
    let p = (1.0 + x) / 2.0;
    let q = (1.0 - x) / 2.0;
    let mut v = 0.0;
    if p > 0.0 {
        v += p * p.ln();
    }
    if q > 0.0 {
        v += q * q.ln();
    }
    v
}

/// Outcome of the SK Plefka convergence criterion 1 > beta^2 (1 - 2 q_EA + r).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlefkaReport {
    pub q_ea: f64,
    pub r: f64,
    /// 1 - beta^2 (1 - 2 q_EA + r); the criterion holds iff margin > 0.
    pub margin: f64,
    pub holds: bool,
}

/// Evaluates the Plefka condition for the SK interpretation at inverse
/// temperature `beta` and magnetization vector `m`.
pub fn plefka_condition(beta: f64, m: &[f64]) -> Result<PlefkaReport> {
    if m.is_empty() {
        return Err(Error::Invalid {
            what: "magnetization",
            why: "empty vector".into(),
        });
    }
    for &mi in m {
        if !(-1.0..=1.0).contains(&mi) {
            return Err(Error::Domain {
                what: "m_i",
                value: mi,
                lo: -1.0,
                hi: 1.0,
            });
        }
    }
    let n = m.len() as f64;
    let q_ea = m.iter().map(|&x| x * x).sum::<f64>() / n;
    let r = m.iter().map(|&x| x.powi(4)).sum::<f64>() / n;
    let margin = 1.0 - beta * beta * (1.0 - 2.0 * q_ea + r);
    Ok(PlefkaReport {
        q_ea,
        r,
        margin,
        holds: margin > 0.0,
    })
}
