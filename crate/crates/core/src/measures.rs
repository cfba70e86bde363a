//! Step-function order parameters.
//!
//! One representation houses both spaces the functionals are minimized over:
//! CDF mode for distribution functions on [0, 1] (right-continuous,
//! nondecreasing, terminal value 1) and gamma mode for nonnegative
//! right-continuous nondecreasing functions on [0, u).
//!
//! A profile is a list of knots `(q_i, v_i)`: the function equals `v_i` on
//! `[q_i, q_{i+1})` and 0 below `q_1`. Construction canonicalizes
//! (near-duplicate knots are merged) and validates strict monotonicity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::MixtureSpec;

/// Knots closer than this in q are merged during canonicalization.
pub const MERGE_Q_TOL: f64 = 1e-9;
/// Knots closer than this in value are merged during canonicalization.
pub const MERGE_V_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfileMode {
    #[serde(rename = "CDF")]
    Cdf,
    #[serde(rename = "GAMMA")]
    Gamma,
}

impl ProfileMode {
    fn name(self) -> &'static str {
        match self {
            ProfileMode::Cdf => "CDF",
            ProfileMode::Gamma => "GAMMA",
        }
    }
}

/// A right-continuous nondecreasing step function on `[0, domain_end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile", into = "RawProfile")]
pub struct StepProfile {
    mode: ProfileMode,
    domain_end: f64,
    knots: Vec<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct RawProfile {
    mode: ProfileMode,
    domain_end: f64,
    knots: Vec<(f64, f64)>,
}

impl TryFrom<RawProfile> for StepProfile {
    type Error = Error;
    fn try_from(raw: RawProfile) -> Result<Self> {
        StepProfile::new(raw.mode, raw.domain_end, raw.knots)
    }
}

impl From<StepProfile> for RawProfile {
    fn from(p: StepProfile) -> Self {
        RawProfile {
            mode: p.mode,
            domain_end: p.domain_end,
            knots: p.knots,
        }
    }
}

impl StepProfile {
    /// Canonicalizes and validates a profile in the given mode.
    pub fn new(mode: ProfileMode, domain_end: f64, knots: Vec<(f64, f64)>) -> Result<Self> {
        if !domain_end.is_finite() || domain_end < 0.0 {
            return Err(Error::Invalid {
                what: "profile",
                why: format!("domain_end = {domain_end}"),
            });
        }
        if mode == ProfileMode::Cdf && domain_end != 1.0 {
            return Err(Error::Invalid {
                what: "profile",
                why: format!("CDF mode requires domain_end = 1, got {domain_end}"),
            });
        }
        let knots = canonicalize(mode, domain_end, knots)?;
        if mode == ProfileMode::Cdf && knots.is_empty() {
            return Err(Error::Invalid {
                what: "profile",
                why: "CDF mode requires at least one knot".into(),
            });
        }
        Ok(StepProfile {
            mode,
            domain_end,
            knots,
        })
    }

    /// A distribution function on [0, 1] from `(q_i, v_i)` knots; the last
    /// value must reach 1 (within 1e-12; it is then snapped to exactly 1).
    pub fn cdf(knots: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(ProfileMode::Cdf, 1.0, knots)
    }

    /// A nonnegative nondecreasing step function on [0, domain_end).
    pub fn gamma(knots: Vec<(f64, f64)>, domain_end: f64) -> Result<Self> {
        Self::new(ProfileMode::Gamma, domain_end, knots)
    }

    /// The distribution function of a point mass at `q`: 1 on [q, 1].
    pub fn dirac(q: f64) -> Result<Self> {
        Self::cdf(vec![(q, 1.0)])
    }

    pub fn mode(&self) -> ProfileMode {
        self.mode
    }

    pub fn domain_end(&self) -> f64 {
        self.domain_end
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    /// Right-continuous evaluation with domain check.
    pub fn evaluate(&self, s: f64) -> Result<f64> {
        if !(0.0..=self.domain_end).contains(&s) {
            return Err(Error::Domain {
                what: "s",
                value: s,
                lo: 0.0,
                hi: self.domain_end,
            });
        }
        Ok(self.value_at(s))
    }

    /// Right-continuous step lookup; returns 0 below the first knot.
    /// No domain check (callers in hot loops validate once).
    pub fn value_at(&self, s: f64) -> f64 {
        let mut v = 0.0;
        for &(q, kv) in &self.knots {
            if q <= s {
                v = kv;
            } else {
                break;
            }
        }
        v
    }

    /// Largest point in the support of the induced measure (CDF mode only).
    pub fn support_max(&self) -> Result<f64> {
        if self.mode != ProfileMode::Cdf {
            return Err(Error::Mode {
                expected: "CDF",
                got: self.mode.name(),
            });
        }
        Ok(self.knots.last().map(|&(q, _)| q).unwrap_or(0.0))
    }

    /// Restriction of a CDF to [0, u): a gamma-mode profile with the same
    /// values below u.
    pub fn restrict_to_gamma(&self, u: f64) -> Result<StepProfile> {
        if self.mode != ProfileMode::Cdf {
            return Err(Error::Mode {
                expected: "CDF",
                got: self.mode.name(),
            });
        }
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Domain {
                what: "u",
                value: u,
                lo: 0.0,
                hi: 1.0,
            });
        }
        let knots: Vec<(f64, f64)> = self
            .knots
            .iter()
            .copied()
            .filter(|&(q, _)| q < u)
            .collect();
        StepProfile::gamma(knots, u)
    }

    /// Exact integral of xi''(s) s profile(s) over [0, upper], using the
    /// closed-form antiderivative of the polynomial xi''(s) s per step.
    pub fn weighted_integral(&self, spec: &MixtureSpec, upper: f64) -> Result<f64> {
        if !(0.0..=self.domain_end + 1e-12).contains(&upper) {
            return Err(Error::Domain {
                what: "upper",
                value: upper,
                lo: 0.0,
                hi: self.domain_end,
            });
        }
        let mut total = 0.0;
        for (i, &(q, v)) in self.knots.iter().enumerate() {
            if q >= upper {
                break;
            }
            let seg_end = self
                .knots
                .get(i + 1)
                .map(|&(next_q, _)| next_q)
                .unwrap_or(self.domain_end)
                .min(upper);
            if seg_end > q {
                total += v * (spec.xi_dd_s_antideriv(seg_end) - spec.xi_dd_s_antideriv(q));
            }
        }
        Ok(total)
    }

    /// Atoms of the induced measure: (location, weight) with weights
    /// v_i - v_{i-1} (CDF mode only).
    pub fn atoms(&self) -> Result<Vec<(f64, f64)>> {
        if self.mode != ProfileMode::Cdf {
            return Err(Error::Mode {
                expected: "CDF",
                got: self.mode.name(),
            });
        }
        let mut prev = 0.0;
        Ok(self
            .knots
            .iter()
            .map(|&(q, v)| {
                let w = v - prev;
                prev = v;
                (q, w)
            })
            .collect())
    }

    /// Integral of `f` against the induced measure: sum of weight * f(q)
    /// over atoms (CDF mode only).
    pub fn measure_integral(&self, mut f: impl FnMut(f64) -> f64) -> Result<f64> {
        Ok(self.atoms()?.iter().map(|&(q, w)| w * f(q)).sum())
    }

    /// Pointwise convex combination (1-theta) a + theta b of two profiles of
    /// the same mode and domain, as a step profile on the union of knots.
    pub fn mix(a: &StepProfile, b: &StepProfile, theta: f64) -> Result<StepProfile> {
        if a.mode != b.mode || a.domain_end != b.domain_end {
            return Err(Error::Invalid {
                what: "profile mix",
                why: "modes or domains differ".into(),
            });
        }
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::Domain {
                what: "theta",
                value: theta,
                lo: 0.0,
                hi: 1.0,
            });
        }
        let mut qs: Vec<f64> = a
            .knots
            .iter()
            .chain(b.knots.iter())
            .map(|&(q, _)| q)
            .collect();
        qs.sort_by(f64::total_cmp);
        qs.dedup();
        let knots = qs
            .into_iter()
            .map(|q| (q, (1.0 - theta) * a.value_at(q) + theta * b.value_at(q)))
            .collect();
        StepProfile::new(a.mode, a.domain_end, knots)
    }
}

fn canonicalize(
    mode: ProfileMode,
    domain_end: f64,
    mut knots: Vec<(f64, f64)>,
) -> Result<Vec<(f64, f64)>> {
    for &(q, v) in &knots {
        if !q.is_finite() || !v.is_finite() {
            return Err(Error::Invalid {
                what: "profile",
                why: format!("non-finite knot ({q}, {v})"),
            });
        }
        if q < 0.0 || q > domain_end {
            return Err(Error::Invalid {
                what: "profile",
                why: format!("knot location {q} outside [0, {domain_end}]"),
            });
        }
        if v < 0.0 {
            return Err(Error::Invalid {
                what: "profile",
                why: format!("negative knot value {v}"),
            });
        }
    }
    knots.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    // gamma mode lives on [0, domain_end); a knot at the right end is empty
    if mode == ProfileMode::Gamma {
        knots.retain(|&(q, _)| q < domain_end);
    }
    // merge near-duplicate locations (keep the larger value) and
    // near-duplicate values (keep the earlier location)
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(knots.len());
    for (q, v) in knots {
        match merged.last_mut() {
            Some(last) if (q - last.0).abs() < MERGE_Q_TOL => {
                last.1 = last.1.max(v);
            }
            Some(last) if (v - last.1).abs() < MERGE_V_TOL => {
                // same value continues; drop the later knot
            }
            _ => merged.push((q, v)),
        }
    }
    for w in merged.windows(2) {
        if w[1].0 <= w[0].0 || w[1].1 <= w[0].1 {
            return Err(Error::Invalid {
                what: "profile",
                why: format!(
                    "knots not strictly increasing after canonicalization: {:?} -> {:?}",
                    w[0], w[1]
                ),
            });
        }
    }
    if mode == ProfileMode::Cdf {
        if let Some(last) = merged.last_mut() {
            if (last.1 - 1.0).abs() > MERGE_V_TOL {
                return Err(Error::Invalid {
                    what: "profile",
                    why: format!("CDF terminal value {} is not 1", last.1),
                });
            }
            last.1 = 1.0;
        }
    }
    Ok(merged)
}


#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_gamma_profile() -> impl Strategy<Value = StepProfile> {
        (1usize..5, 0.2f64..1.0).prop_flat_map(|(k, end)| {
            (
                proptest::collection::vec(0.01f64..0.99, k),
                proptest::collection::vec(0.01f64..2.0, k),
            )
                .prop_map(move |(qs, dvs)| {
                    let mut qs: Vec<f64> = qs.iter().map(|q| q * end * 0.999).collect();
                    qs.sort_by(f64::total_cmp);
                    qs.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
                    let mut v = 0.0;
                    let knots: Vec<(f64, f64)> = qs
                        .iter()
                        .zip(dvs.iter())
                        .map(|(&q, &dv)| {
                            v += dv;
                            (q, v)
                        })
                        .collect();
                    StepProfile::gamma(knots, end).unwrap()
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn duplicate_knots_do_not_change_evaluation(p in arb_gamma_profile()) {
            let mut noisy = p.knots().to_vec();
            noisy.extend_from_slice(p.knots());
            let again = StepProfile::gamma(noisy, p.domain_end()).unwrap();
            for i in 0..200 {
                let s = p.domain_end() * i as f64 / 200.0;
                prop_assert_eq!(p.value_at(s), again.value_at(s));
            }
        }

        #[test]
        fn restrict_matches_original(p in arb_gamma_profile(), frac in 0.1f64..1.0) {
            // build a CDF extension of the gamma profile, restrict it back
            let end = p.domain_end();
            let mut knots: Vec<(f64,f64)> = p
                .knots()
                .iter()
                .map(|&(q, v)| (q * 0.9, v / 10.0))
                .collect();
            knots.push((0.95, 1.0));
            let alpha = StepProfile::cdf(knots).unwrap();
            let u = frac * end;
            let g = alpha.restrict_to_gamma(u).unwrap();
            for i in 0..100 {
                let s = u * i as f64 / 100.0;
                if s < u {
                    prop_assert_eq!(g.value_at(s), alpha.value_at(s));
                }
            }
        }
    }
}
