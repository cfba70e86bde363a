//! Minimization of the two functionals and the TAP curve sweep.
//!
//! Profiles are truncated to at most k atoms and searched in an unconstrained
//! raw space: atom locations go through sorted sigmoids, distribution values
//! through stick-breaking, gamma values through a capped increasing
//! transform, and lambda through a scaled tanh. The search itself is
//! derivative-free (multistart Nelder–Mead plus a coordinate polish);
//! closed-form one-atom candidates are always entered into the pool, and the
//! Monte Carlo directional derivatives are kept as optimality verifiers
//! rather than as the search engine.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{ProfileMode, StepProfile};
use crate::mixture::MixtureSpec;
use crate::pde::{constrained_functional, parisi_functional, solve_parisi, Boundary, GridConfig};
use crate::quad::GaussHermite;
use crate::rng::stream_rng;
use crate::sde::{optimality_profile, simulate, OptimalityPoint, SdeConfig, SdeRun};

/// Options shared by the minimizers.
#[derive(Debug, Clone)]
pub struct MinimizeOpts {
    /// Multistart count (the structured candidates come on top).
    pub starts: usize,
    pub seed: u64,
    /// Nelder–Mead iteration cap per start.
    pub max_iters: usize,
    /// Simplex value-spread target.
    pub ftol: f64,
    pub grid: GridConfig,
    /// Cap on gamma-profile values.
    pub gamma_max: f64,
    /// Entered as one start of the search (atoms beyond k are dropped,
    /// missing atoms padded with zero weight).
    pub warm_start: Option<StepProfile>,
    pub warm_lambda: Option<f64>,
    /// A CDF whose restriction seeds each constrained solve (used by the
    /// curve sweep to carry the unconstrained minimizer across u).
    pub cdf_hint: Option<StepProfile>,
    /// Coordinate polish after the multistart merge.
    pub polish: bool,
    /// When set, attach the optimality profile g(s) at the atoms of the
    /// reported minimizer (unconstrained case only).
    pub diagnostics: Option<SdeConfig>,
}

impl Default for MinimizeOpts {
    fn default() -> Self {
        MinimizeOpts {
            starts: 8,
            seed: 0,
            max_iters: 400,
            ftol: 1e-10,
            grid: GridConfig::default(),
            gamma_max: 50.0,
            warm_start: None,
            warm_lambda: None,
            cdf_hint: None,
            polish: true,
            diagnostics: None,
        }
    }
}

/// Result of a functional minimization.
#[derive(Debug, Clone, Serialize)]
pub struct MinimizeResult {
    pub profile: StepProfile,
    pub value: f64,
    /// Present for the constrained functional.
    pub lambda: Option<f64>,
    /// Total objective evaluations across starts and polish.
    pub iterations: usize,
    pub converged: bool,
    pub starts: usize,
    /// Bound-pinning flags ("gamma_max_pinned", "lambda_edge_pinned"):
    /// the infimum is possibly not attained.
    pub edge_flags: Vec<String>,
    pub diagnostics: Option<Vec<OptimalityPoint>>,
}

impl MinimizeResult {
    /// Top of the support of the reported profile (CDF results).
    pub fn q_p(&self) -> Result<f64> {
        self.profile.support_max()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

// ---------------------------------------------------------------------------
// replica-symmetric closed forms
// ---------------------------------------------------------------------------

/// The fixed point q = E tanh^2(h + z sqrt(xi'(q))), by damped iteration
/// (damping 1/2) from q = 0.5 to residual 1e-12. At h = 0 a collapse of the
/// iterate below 1e-10 returns exactly 0.
pub fn rs_fixed_point(spec: &MixtureSpec) -> Result<f64> {
    let gh = GaussHermite::new(61);
    let h = spec.h();
    let mut q: f64 = 0.5;
    let mut residual = f64::INFINITY;
    for _ in 0..100_000 {
        let t = gh.expect(|z| {
            let th = (h + z * spec.xi_d(q).sqrt()).tanh();
            th * th
        });
        residual = (t - q).abs();
        q = 0.5 * q + 0.5 * t;
        if h == 0.0 && q < 1e-10 {
            return Ok(0.0);
        }
        if residual < 1e-12 {
            return Ok(q);
        }
    }
    Err(Error::NonConvergence {
        what: "rs_fixed_point",
        iterations: 100_000,
        residual,
    })
}

/// E log 2cosh(h + z sqrt(xi'(q))) + C(q); equals the functional value of
/// the one-atom profile at q.
pub fn rs_free_energy(spec: &MixtureSpec, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain {
            what: "q",
            value: q,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let gh = GaussHermite::new(61);
    let h = spec.h();
    let sd = spec.xi_d(q).sqrt();
    let e = gh.expect(|z| {
        let x: f64 = h + z * sd;
        x.abs() + (-2.0 * x.abs()).exp().ln_1p()
    });
    Ok(e + spec.onsager_c(q)?)
}

// ---------------------------------------------------------------------------
// Nelder-Mead with coordinate polish
// ---------------------------------------------------------------------------

struct NmOutcome {
    x: Vec<f64>,
    value: f64,
    evals: usize,
    converged: bool,
}

fn nelder_mead(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x0: &[f64],
    step: f64,
    max_iters: usize,
    ftol: f64,
) -> NmOutcome {
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64]| {
        evals += 1;
        f(x)
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(x0);
    simplex.push((x0.to_vec(), v0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = eval(&x);
        simplex.push((x, v));
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;
    for _ in 0..max_iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        if spread.abs() < ftol {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflect: Vec<f64> = (0..n)
            .map(|j| centroid[j] + alpha * (centroid[j] - worst.0[j]))
            .collect();
        let fr = eval(&reflect);
        if fr < simplex[0].1 {
            let expand: Vec<f64> = (0..n)
                .map(|j| centroid[j] + gamma * (reflect[j] - centroid[j]))
                .collect();
            let fe = eval(&expand);
            simplex[n] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflect, fr);
        } else {
            let contract: Vec<f64> = (0..n)
                .map(|j| centroid[j] + rho * (worst.0[j] - centroid[j]))
                .collect();
            let fc = eval(&contract);
            if fc < worst.1 {
                simplex[n] = (contract, fc);
            } else {
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let shrunk: Vec<f64> = (0..n)
                        .map(|j| best[j] + sigma * (entry.0[j] - best[j]))
                        .collect();
                    let fv = eval(&shrunk);
                    *entry = (shrunk, fv);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    NmOutcome {
        x: simplex[0].0.clone(),
        value: simplex[0].1,
        evals,
        converged,
    }
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let m = 0.5 * (a + b);
    (m, f(m))
}

/// One or two golden-section sweeps along each raw coordinate.
fn coordinate_polish(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x: &mut Vec<f64>,
    mut value: f64,
    half_width: f64,
    sweeps: usize,
) -> (f64, usize) {
    let mut evals = 0usize;
    for _ in 0..sweeps {
        for i in 0..x.len() {
            let xi = x[i];
            let g = |t: f64| {
                let mut y = x.clone();
                y[i] = t;
                f(&y)
            };
            let (t, v) = golden_min(&g, xi - half_width, xi + half_width, 24);
            evals += 26;
            if v < value {
                value = v;
                x[i] = t;
            }
        }
    }
    (value, evals)
}

// ---------------------------------------------------------------------------
// parameterizations
// ---------------------------------------------------------------------------

/// raw[0..k] -> sorted sigmoid locations; raw[k..2k-1] -> stick-breaking
/// values ending at 1.
fn decode_cdf(raw: &[f64], k: usize) -> Result<StepProfile> {
    let mut qs: Vec<f64> = raw[..k].iter().map(|&a| sigmoid(a)).collect();
    qs.sort_by(f64::total_cmp);
    let mut v = 0.0;
    let mut knots = Vec::with_capacity(k);
    for i in 0..k {
        let vi = if i == k - 1 {
            1.0
        } else {
            let s = sigmoid(raw[k + i]);
            v + (1.0 - v) * s
        };
        knots.push((qs[i], vi.max(v + 1e-15)));
        v = vi;
    }
    StepProfile::cdf(knots)
}

fn encode_cdf(profile: &StepProfile, k: usize) -> Vec<f64> {
    let atoms = profile.atoms().expect("CDF profile");
    let mut raw_q = Vec::with_capacity(k);
    let mut weights = Vec::with_capacity(k);
    for &(q, w) in atoms.iter().take(k) {
        raw_q.push(logit(q));
        weights.push(w.max(0.0));
    }
    // pad with zero-weight atoms above the top
    let q_top = atoms.last().map(|&(q, _)| q).unwrap_or(0.0);
    let missing = k - raw_q.len();
    for i in 0..missing {
        let q = q_top + (1.0 - q_top) * (i + 1) as f64 / (missing + 1) as f64;
        raw_q.push(logit(q.clamp(1e-6, 1.0 - 1e-6)));
        weights.push(0.0);
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        weights[0] = 1.0;
    }
    let mut raw = raw_q;
    let mut v = 0.0;
    let total: f64 = weights.iter().sum();
    for i in 0..k - 1 {
        let vi = v + weights[i] / total;
        let s = if 1.0 - v > 1e-12 {
            ((vi - v) / (1.0 - v)).clamp(1e-9, 1.0 - 1e-9)
        } else {
            0.5
        };
        raw.push(logit(s));
        v = vi;
    }
    raw
}

/// Constrained raw layout: raw[0] -> lambda, raw[1..1+k] -> locations in
/// [0, u), raw[1+k..1+2k] -> capped increasing values.
struct GammaCode {
    u: f64,
    k: usize,
    gamma_max: f64,
    lambda_scale: f64,
}

impl GammaCode {
    fn dim(&self) -> usize {
        1 + 2 * self.k
    }

    fn lambda(&self, raw: &[f64]) -> f64 {
        self.lambda_scale * raw[0].tanh()
    }

    fn decode(&self, raw: &[f64]) -> Result<(f64, StepProfile)> {
        let lambda = self.lambda(raw);
        if self.k == 0 || self.u <= 0.0 {
            return Ok((lambda, StepProfile::gamma(vec![], self.u)?));
        }
        let mut qs: Vec<f64> = raw[1..1 + self.k]
            .iter()
            .map(|&a| self.u * sigmoid(a) * (1.0 - 1e-12))
            .collect();
        qs.sort_by(f64::total_cmp);
        let mut v = 0.0;
        let mut knots = Vec::with_capacity(self.k);
        for i in 0..self.k {
            let s = sigmoid(raw[1 + self.k + i]);
            let vi = v + (self.gamma_max - v) * s;
            knots.push((qs[i], vi));
            v = vi;
        }
        // drop numerically weightless leading structure
        let knots: Vec<(f64, f64)> = knots.into_iter().filter(|&(_, v)| v > 1e-12).collect();
        Ok((lambda, StepProfile::gamma(knots, self.u)?))
    }

    fn encode(&self, lambda: f64, gamma: &StepProfile) -> Vec<f64> {
        let t = (lambda / self.lambda_scale).clamp(-1.0 + 1e-12, 1.0 - 1e-12);
        let mut raw = vec![t.atanh()];
        if self.k == 0 {
            return raw;
        }
        let mut qs = Vec::with_capacity(self.k);
        let mut vs = Vec::with_capacity(self.k);
        for &(q, v) in gamma.knots().iter().take(self.k) {
            qs.push(logit((q / self.u.max(1e-12)).clamp(1e-9, 1.0 - 1e-9)));
            vs.push(v.min(self.gamma_max * (1.0 - 1e-9)));
        }
        let missing = self.k - qs.len();
        let q_top = gamma.knots().last().map(|&(q, _)| q).unwrap_or(0.0);
        for i in 0..missing {
            let q = q_top + (self.u - q_top) * (i + 1) as f64 / (missing + 1) as f64;
            qs.push(logit((q / self.u.max(1e-12)).clamp(1e-9, 1.0 - 1e-9)));
            vs.push(vs.last().copied().unwrap_or(1e-9) + 1e-9);
        }
        raw.extend_from_slice(&qs);
        let mut v = 0.0;
        for &vi in &vs {
            let s = ((vi - v) / (self.gamma_max - v)).clamp(1e-12, 1.0 - 1e-12);
            raw.push(logit(s));
            v = vi;
        }
        raw
    }
}

// ---------------------------------------------------------------------------
// multistart driver
// ---------------------------------------------------------------------------

fn run_multistart(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    starts: Vec<Vec<f64>>,
    opts: &MinimizeOpts,
) -> Result<NmOutcome> {
    let outcomes: Vec<NmOutcome> = starts
        .par_iter()
        .map(|x0| nelder_mead(f, x0, 0.6, opts.max_iters, opts.ftol))
        .collect();
    let evals: usize = outcomes.iter().map(|o| o.evals).sum();
    let any_converged = outcomes.iter().any(|o| o.converged);
    let mut best = outcomes
        .into_iter()
        .filter(|o| o.value.is_finite())
        .min_by(|a, b| {
            a.value
                .total_cmp(&b.value)
                .then_with(|| a.x.iter().map(|v| v.to_bits()).cmp(b.x.iter().map(|v| v.to_bits())))
        })
        .ok_or_else(|| Error::Optimizer {
            trace: "all starts produced non-finite values".into(),
        })?;
    best.evals = evals;
    best.converged = any_converged;
    if opts.polish {
        let mut x = best.x.clone();
        let (v, e) = coordinate_polish(f, &mut x, best.value, 0.35, 2);
        best.x = x;
        best.value = v;
        best.evals += e;
    }
    Ok(best)
}

/// Minimizes the distribution-function functional over profiles with at most
/// `k` atoms. The one-atom closed-form family is always entered as a
/// candidate, so RS collapses are located exactly.
pub fn minimize_parisi(spec: &MixtureSpec, k: usize, opts: &MinimizeOpts) -> Result<MinimizeResult> {
    if k == 0 {
        return Err(Error::Invalid {
            what: "minimize_parisi",
            why: "k must be at least 1".into(),
        });
    }
    let dim = 2 * k - 1;
    let objective = move |raw: &[f64]| -> f64 {
        match decode_cdf(raw, k) {
            Ok(profile) => {
                parisi_functional(spec, &profile, &opts.grid).unwrap_or(f64::INFINITY)
            }
            Err(_) => f64::INFINITY,
        }
    };

    // structured candidates: RS scan and the warm start
    let (q_rs, _) = golden_min(
        |q| rs_free_energy(spec, q.clamp(0.0, 1.0)).unwrap_or(f64::INFINITY),
        0.0,
        1.0,
        60,
    );
    let q_fp = rs_fixed_point(spec).unwrap_or(q_rs);
    let mut starts: Vec<Vec<f64>> = Vec::new();
    starts.push(encode_cdf(&StepProfile::dirac(q_rs.clamp(1e-9, 1.0))?, k));
    starts.push(encode_cdf(&StepProfile::dirac(q_fp.clamp(1e-9, 1.0))?, k));
    if let Some(w) = &opts.warm_start {
        starts.push(encode_cdf(w, k));
    }
    let mut rng = stream_rng(opts.seed, 0xC0FFEE);
    while starts.len() < opts.starts.max(2) + 2 {
        let raw: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.5..2.5)).collect();
        starts.push(raw);
    }

    let best = run_multistart(&objective, starts, opts)?;
    let profile = decode_cdf(&best.x, k)?;
    let (profile, value) = drop_weightless_atoms(spec, profile, best.value, &opts.grid)?;

    let diagnostics = match &opts.diagnostics {
        Some(cfg) => Some(attach_diagnostics(spec, &profile, &opts.grid, cfg)?),
        None => None,
    };

    Ok(MinimizeResult {
        value,
        lambda: None,
        iterations: best.evals,
        converged: best.converged,
        starts: opts.starts,
        edge_flags: vec![],
        diagnostics,
        profile,
    })
}

/// Reporting tie-break: atoms whose weight fell below 1e-6 are artifacts of
/// the parameterization; drop them and re-evaluate.
fn drop_weightless_atoms(
    spec: &MixtureSpec,
    profile: StepProfile,
    value: f64,
    grid: &GridConfig,
) -> Result<(StepProfile, f64)> {
    let atoms = profile.atoms()?;
    let kept: Vec<(f64, f64)> = atoms.iter().copied().filter(|&(_, w)| w >= 1e-6).collect();
    if kept.len() == atoms.len() || kept.is_empty() {
        return Ok((profile, value));
    }
    let total: f64 = kept.iter().map(|&(_, w)| w).sum();
    let mut v = 0.0;
    let knots: Vec<(f64, f64)> = kept
        .iter()
        .map(|&(q, w)| {
            v += w / total;
            (q, v)
        })
        .collect();
    let cleaned = StepProfile::cdf(knots)?;
    let new_value = parisi_functional(spec, &cleaned, grid)?;
    Ok((cleaned, new_value))
}

fn attach_diagnostics(
    spec: &MixtureSpec,
    profile: &StepProfile,
    grid: &GridConfig,
    cfg: &SdeConfig,
) -> Result<Vec<OptimalityPoint>> {
    let q_top = profile.support_max()?;
    if q_top <= 0.0 {
        return Ok(vec![]);
    }
    let pde = solve_parisi(spec, profile, Boundary::LogCosh, grid)?;
    let checkpoints: Vec<f64> = profile.atoms()?.iter().map(|&(q, _)| q).collect();
    let run = simulate(spec, profile, &pde, q_top, &checkpoints, cfg)?;
    Ok(optimality_profile(&run, spec))
}

/// Minimizes the constrained functional over lambda and gamma profiles with
/// at most `k` atoms capped at `gamma_max`. Lambda is searched inside the
/// closed-form window (-0.249, 0.249); a minimum pinned at that edge
/// triggers one widened re-solve over (-4, 4) using the direct-maximization
/// boundary, and a minimum still pinned there is flagged.
pub fn minimize_constrained(
    spec: &MixtureSpec,
    u: f64,
    k: usize,
    opts: &MinimizeOpts,
) -> Result<MinimizeResult> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Domain {
            what: "u",
            value: u,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let narrow = GammaCode {
        u,
        k: if u > 0.0 { k } else { 0 },
        gamma_max: opts.gamma_max,
        lambda_scale: 0.249,
    };
    let mut outcome = constrained_pass(spec, &narrow, opts, None)?;
    let mut edge_flags = Vec::new();
    let lambda_narrow = narrow.lambda(&outcome.1.x);
    if lambda_narrow.abs() > 0.24 {
        // re-solve over the widened window with the fallback boundary
        let wide = GammaCode {
            lambda_scale: 4.0,
            ..narrow
        };
        let warm = {
            let (l, g) = narrow.decode(&outcome.1.x)?;
            wide.encode(l, &g)
        };
        let wide_outcome = constrained_pass(spec, &wide, opts, Some(warm))?;
        if wide_outcome.1.value <= outcome.1.value {
            outcome = wide_outcome;
            let l = 4.0 * outcome.1.x[0].tanh();
            if l.abs() > 3.9 {
                edge_flags.push("lambda_edge_pinned".to_string());
            }
        }
    }
    let (code, best) = outcome;
    let (lambda, gamma) = code.decode(&best.x)?;
    if gamma
        .knots()
        .last()
        .map_or(false, |&(_, v)| v > 0.999 * opts.gamma_max)
    {
        edge_flags.push("gamma_max_pinned".to_string());
    }
    Ok(MinimizeResult {
        value: best.value,
        lambda: Some(lambda),
        iterations: best.evals,
        converged: best.converged && edge_flags.is_empty(),
        starts: opts.starts,
        edge_flags,
        diagnostics: None,
        profile: gamma,
    })
}

fn constrained_pass(
    spec: &MixtureSpec,
    code: &GammaCode,
    opts: &MinimizeOpts,
    extra_start: Option<Vec<f64>>,
) -> Result<(GammaCode, NmOutcome)> {
    let u = code.u;
    let objective = move |raw: &[f64]| -> f64 {
        match code.decode(raw) {
            Ok((lambda, gamma)) => {
                constrained_functional(spec, u, lambda, &gamma, &opts.grid)
                    .unwrap_or(f64::INFINITY)
            }
            Err(_) => f64::INFINITY,
        }
    };

    let empty = StepProfile::gamma(vec![], u)?;
    let mut starts: Vec<Vec<f64>> = Vec::new();
    // empty-gamma candidate with a 1-d lambda scan
    let (t_best, _) = golden_min(
        |t| {
            let lambda = code.lambda_scale * t.tanh();
            constrained_functional(spec, u, lambda, &empty, &opts.grid).unwrap_or(f64::INFINITY)
        },
        -3.0,
        3.0,
        40,
    );
    let mut start0 = vec![0.0; code.dim()];
    start0[0] = t_best;
    for slot in start0.iter_mut().skip(1 + code.k) {
        *slot = -8.0; // near-zero gamma values
    }
    starts.push(start0);
    if let Some(hint) = &opts.cdf_hint {
        let g = hint.restrict_to_gamma(u)?;
        starts.push(code.encode(0.0, &g));
    }
    if let Some(w) = &opts.warm_start {
        if w.mode() == ProfileMode::Gamma {
            let knots: Vec<(f64, f64)> = w
                .knots()
                .iter()
                .copied()
                .filter(|&(q, _)| q < u * (1.0 - 1e-12))
                .collect();
            let adapted = StepProfile::gamma(knots, u)?;
            starts.push(code.encode(opts.warm_lambda.unwrap_or(0.0), &adapted));
        }
    }
    if let Some(x) = extra_start {
        starts.push(x);
    }
    let mut rng = stream_rng(opts.seed, 0xBEEF);
    while starts.len() < opts.starts.max(2) + 1 {
        let mut raw: Vec<f64> = (0..code.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        // bias value coordinates low: gamma values of order one, not gamma_max
        for slot in raw.iter_mut().skip(1 + code.k) {
            *slot += -4.5;
        }
        starts.push(raw);
    }
    let best = run_multistart(&objective, starts, opts)?;
    Ok((
        GammaCode {
            u: code.u,
            k: code.k,
            gamma_max: code.gamma_max,
            lambda_scale: code.lambda_scale,
        },
        best,
    ))
}

/// One point of the limiting TAP free-energy curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TapCurvePoint {
    pub u: f64,
    /// inf P_u + C(u); None when the point failed.
    pub f_tap: Option<f64>,
    pub inf_value: Option<f64>,
    pub lambda: Option<f64>,
    pub converged: bool,
    pub edge_flags: Vec<String>,
    pub error: Option<String>,
}

/// Sweeps minimize_constrained over `u_grid` with monotone warm-starting,
/// adding the Onsager term at each point. Failures are flagged per point and
/// the rest of the curve is still produced.
pub fn tap_limit_curve(
    spec: &MixtureSpec,
    u_grid: &[f64],
    k: usize,
    opts: &MinimizeOpts,
) -> Vec<TapCurvePoint> {
    let mut points = Vec::with_capacity(u_grid.len());
    let mut warm: Option<(f64, StepProfile)> = None;
    for (i, &u) in u_grid.iter().enumerate() {
        let mut o = opts.clone();
        if let Some((l, g)) = &warm {
            o.warm_start = Some(g.clone());
            o.warm_lambda = Some(*l);
            o.starts = (opts.starts / 3).max(2);
        } else if i > 0 {
            o.starts = (opts.starts / 3).max(2);
        }
        match minimize_constrained(spec, u, k, &o) {
            Ok(res) => {
                let c = spec.onsager_c(u).expect("u validated");
                warm = Some((res.lambda.unwrap_or(0.0), res.profile.clone()));
                points.push(TapCurvePoint {
                    u,
                    f_tap: Some(res.value + c),
                    inf_value: Some(res.value),
                    lambda: res.lambda,
                    converged: res.converged,
                    edge_flags: res.edge_flags,
                    error: None,
                });
            }
            Err(e) => points.push(TapCurvePoint {
                u,
                f_tap: None,
                inf_value: None,
                lambda: None,
                converged: false,
                edge_flags: vec![],
                error: Some(e.to_string()),
            }),
        }
    }
    points
}

// ---------------------------------------------------------------------------
// directional derivatives (verifiers)
// ---------------------------------------------------------------------------

fn interp_batch_vsq(run: &SdeRun, batch: Option<usize>, s: f64) -> f64 {
    let cps = &run.checkpoints;
    let value = |i: usize| match batch {
        Some(b) => cps[i].batch_v_sq[b],
        None => cps[i].v_sq_mean,
    };
    if s <= cps[0].s {
        return value(0);
    }
    if s >= cps[cps.len() - 1].s {
        return value(cps.len() - 1);
    }
    let mut i = 0;
    while cps[i + 1].s < s {
        i += 1;
    }
    let (a, b) = (cps[i].s, cps[i + 1].s);
    let t = if b > a { (s - a) / (b - a) } else { 0.0 };
    (1.0 - t) * value(i) + t * value(i + 1)
}

fn integrate_direction(
    spec: &MixtureSpec,
    run: &SdeRun,
    batch: Option<usize>,
    upper: f64,
    diff: &dyn Fn(f64) -> f64,
) -> f64 {
    // fine trapezoid over [0, upper]; E v^2 interpolated from checkpoints,
    // the profile difference is piecewise constant
    let n = 2000;
    let dh = upper / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        let sm = (i as f64 + 0.5) * dh;
        let integrand =
            spec.xi_dd(sm) * diff(sm) * (interp_batch_vsq(run, batch, sm) - sm);
        total += integrand * dh;
    }
    0.5 * total
}

/// d/dtheta P((1-theta) alpha0 + theta alpha) at theta = 0+, from a run of
/// the diffusion built on alpha0 over [0, 1]. Returns (estimate, se).
pub fn directional_derivative_unconstrained(
    spec: &MixtureSpec,
    alpha0: &StepProfile,
    alpha: &StepProfile,
    run: &SdeRun,
) -> Result<(f64, f64)> {
    if alpha0.mode() != ProfileMode::Cdf || alpha.mode() != ProfileMode::Cdf {
        return Err(Error::Mode {
            expected: "CDF",
            got: "GAMMA",
        });
    }
    if (run.end_s - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid {
            what: "sde run",
            why: "unconstrained directional derivative needs a run over [0, 1]".into(),
        });
    }
    let diff = |s: f64| alpha.value_at(s) - alpha0.value_at(s);
    let estimate = integrate_direction(spec, run, None, 1.0, &diff);
    let n_b = run.checkpoints[0].batch_v_sq.len();
    let per_batch: Vec<f64> = (0..n_b)
        .map(|b| integrate_direction(spec, run, Some(b), 1.0, &diff))
        .collect();
    let mean = per_batch.iter().sum::<f64>() / n_b as f64;
    let var = per_batch
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (n_b as f64 - 1.0);
    let se = (var / n_b as f64).sqrt();
    Ok((estimate, se))
}

/// d/dtheta P_u((1-theta)(lambda0, gamma0) + theta (lambda, gamma)) at 0+,
/// from a run built on gamma0 over [0, u]. Returns (estimate, se).
#[allow(clippy::too_many_arguments)]
pub fn directional_derivative_constrained(
    spec: &MixtureSpec,
    u: f64,
    lambda0: f64,
    gamma0: &StepProfile,
    lambda: f64,
    gamma: &StepProfile,
    run: &SdeRun,
) -> Result<(f64, f64)> {
    if lambda0.abs() >= 0.25 {
        return Err(Error::NotApplicable(
            "constrained directional derivative requires |lambda0| < 1/4".into(),
        ));
    }
    if gamma0.mode() != ProfileMode::Gamma || gamma.mode() != ProfileMode::Gamma {
        return Err(Error::Mode {
            expected: "GAMMA",
            got: "CDF",
        });
    }
    if (run.end_s - u).abs() > 1e-9 {
        return Err(Error::Invalid {
            what: "sde run",
            why: format!("run ends at {}, expected u = {u}", run.end_s),
        });
    }
    let diff = |s: f64| gamma.value_at(s) - gamma0.value_at(s);
    let end = run
        .checkpoint_at(u)
        .ok_or_else(|| Error::Invalid {
            what: "sde run",
            why: "no checkpoint at the end time".into(),
        })?;
    let estimate =
        integrate_direction(spec, run, None, u, &diff) + (lambda - lambda0) * (end.v_sq_mean - u);
    let n_b = end.batch_v_sq.len();
    let per_batch: Vec<f64> = (0..n_b)
        .map(|b| {
            integrate_direction(spec, run, Some(b), u, &diff)
                + (lambda - lambda0) * (end.batch_v_sq[b] - u)
        })
        .collect();
    let mean = per_batch.iter().sum::<f64>() / n_b as f64;
    let var = per_batch
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (n_b as f64 - 1.0);
    let se = (var / n_b as f64).sqrt();
    Ok((estimate, se))
}
