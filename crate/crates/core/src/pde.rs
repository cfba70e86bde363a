//! Backward solves of the Parisi-type PDE for step profiles, under both
//! boundary conditions, and assembly of both functionals.
//!
//! On a step where the profile is constant (value zeta) the PDE linearizes
//! exactly: exp(zeta Phi) satisfies the backward heat equation with rate
//! xi''(s)/2, so a single Gaussian-smoothing step of variance
//! xi'(b) - xi'(a) advances the solution across the whole step:
//!
//! ```text
//! Phi(a, x) = zeta^{-1} log E_z exp(zeta Phi(b, x + sigma z)),  sigma^2 = xi'(b) - xi'(a)
//! Phi(a, x) = E_z Phi(b, x + sigma z)                           when zeta = 0
//! ```
//!
//! Gaussian expectations use Gauss-Hermite quadrature with monotone cubic
//! (Fritsch-Carlson) interpolation on a uniform x-grid. Both boundary
//! functions are asymptotically affine with slope +-1, so beyond the grid
//! the solution is extended analytically by its edge-anchored tangents.

use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{ProfileMode, StepProfile};
use crate::mixture::{bernoulli_entropy_unchecked, MixtureSpec};
use crate::quad::{GaussHermite, DEFAULT_GH_NODES};

/// Terminal condition of the solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Boundary {
    /// log cosh(x) — the distribution-function (CDF) functional.
    LogCosh,
    /// f(x, lambda) = max_m (m x + lambda m^2 - I(m)) — the constrained
    /// soft-spin functional.
    Soft(f64),
}

/// Grid and quadrature parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    /// Half-width of the x-grid; None picks |h| + 8 sqrt(xi'(1)) + 4.
    pub x_max: Option<f64>,
    /// Uniform grid spacing.
    pub dx: f64,
    /// Gauss-Hermite node count.
    pub gh_nodes: usize,
    /// Stored rows per profile step (for in-step drift interpolation).
    pub sub_knots: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            x_max: None,
            dx: 2e-3,
            gh_nodes: DEFAULT_GH_NODES,
            sub_knots: 8,
        }
    }
}

/// Edge slopes may drift from the boundary's by at most this much before the
/// solve is declared under-resolved in x.
const EDGE_SLOPE_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
struct Row {
    s: f64,
    phi: Vec<f64>,
    dphi: Vec<f64>,
}

/// Grid representation of Phi(s, x) and its x-derivative at profile knots
/// (plus in-step sub-rows).
#[derive(Debug, Clone)]
pub struct PdeSolution {
    x0: f64,
    dx: f64,
    n_x: usize,
    domain_end: f64,
    boundary: Boundary,
    rows: Vec<Row>,
    s_knots: Vec<f64>,
    spec_hash: u64,
}

impl PdeSolution {
    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn domain_end(&self) -> f64 {
        self.domain_end
    }

    /// Identifier of the generating (spec, profile, boundary, grid) inputs.
    pub fn spec_hash(&self) -> u64 {
        self.spec_hash
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn x_at(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    pub fn x_min(&self) -> f64 {
        self.x0
    }

    pub fn x_max(&self) -> f64 {
        self.x_at(self.n_x - 1)
    }

    /// Profile knots augmented with {0, domain_end}.
    pub fn s_knots(&self) -> &[f64] {
        &self.s_knots
    }

    /// All stored rows as (s, phi, dphi), ascending in s.
    pub fn rows(&self) -> impl Iterator<Item = (f64, &[f64], &[f64])> {
        self.rows
            .iter()
            .map(|r| (r.s, r.phi.as_slice(), r.dphi.as_slice()))
    }

    fn bracket_rows(&self, s: f64) -> (usize, usize, f64) {
        let s = s.clamp(0.0, self.domain_end);
        match self
            .rows
            .binary_search_by(|r| r.s.partial_cmp(&s).unwrap())
        {
            Ok(i) => (i, i, 0.0),
            Err(i) => {
                let hi = i.min(self.rows.len() - 1);
                let lo = hi.saturating_sub(1);
                let (sl, sh) = (self.rows[lo].s, self.rows[hi].s);
                let t = if sh > sl { (s - sl) / (sh - sl) } else { 0.0 };
                (lo, hi, t)
            }
        }
    }

    /// Phi(s, x): linear in s between stored rows, monotone cubic in x,
    /// affine tails beyond the grid.
    pub fn phi_at(&self, s: f64, x: f64) -> f64 {
        let (lo, hi, t) = self.bracket_rows(s);
        let a = row_phi_at(&self.rows[lo], self.x0, self.dx, self.n_x, x);
        if lo == hi {
            return a;
        }
        let b = row_phi_at(&self.rows[hi], self.x0, self.dx, self.n_x, x);
        (1.0 - t) * a + t * b
    }

    /// dPhi/dx(s, x): bilinear between stored rows, +-1 tails beyond the grid.
    pub fn dphi_at(&self, s: f64, x: f64) -> f64 {
        let (lo, hi, t) = self.bracket_rows(s);
        let a = row_dphi_at(&self.rows[lo], self.x0, self.dx, self.n_x, x);
        if lo == hi {
            return a;
        }
        let b = row_dphi_at(&self.rows[hi], self.x0, self.dx, self.n_x, x);
        (1.0 - t) * a + t * b
    }

    pub fn in_grid(&self, x: f64) -> bool {
        x >= self.x0 && x <= self.x_max()
    }
}

fn row_phi_at(row: &Row, x0: f64, dx: f64, n: usize, x: f64) -> f64 {
    let xmax = x0 + (n - 1) as f64 * dx;
    if x >= xmax {
        return x + (row.phi[n - 1] - xmax);
    }
    if x <= x0 {
        return -x + (row.phi[0] + x0);
    }
    let t = (x - x0) / dx;
    let j = (t.floor() as usize).min(n - 2);
    let u = t - j as f64;
    // local monotone-cubic: harmonic-mean slopes from adjacent secants
    let phi = &row.phi;
    let sec = |i: usize| (phi[i + 1] - phi[i]) / dx;
    let slope = |i: usize| -> f64 {
        if i == 0 {
            sec(0)
        } else if i == n - 1 {
            sec(n - 2)
        } else {
            let (a, b) = (sec(i - 1), sec(i));
            if a * b <= 0.0 {
                0.0
            } else {
                2.0 * a * b / (a + b)
            }
        }
    };
    let (h00, h10, h01, h11) = hermite_basis(u);
    h00 * phi[j] + h01 * phi[j + 1] + dx * (h10 * slope(j) + h11 * slope(j + 1))
}

fn row_dphi_at(row: &Row, x0: f64, dx: f64, n: usize, x: f64) -> f64 {
    let xmax = x0 + (n - 1) as f64 * dx;
    if x >= xmax {
        return 1.0;
    }
    if x <= x0 {
        return -1.0;
    }
    let t = (x - x0) / dx;
    let j = (t.floor() as usize).min(n - 2);
    let u = t - j as f64;
    (1.0 - u) * row.dphi[j] + u * row.dphi[j + 1]
}

fn hermite_basis(u: f64) -> (f64, f64, f64, f64) {
    let u2 = u * u;
    let u3 = u2 * u;
    (
        2.0 * u3 - 3.0 * u2 + 1.0,
        u3 - 2.0 * u2 + u,
        -2.0 * u3 + 3.0 * u2,
        u3 - u2,
    )
}

/// The unique m in [-1, 1] with m = tanh(x + 2 lambda m), for |lambda| < 1/4
/// (the map is a contraction there). Newton iteration on the residual,
/// polished to below 1e-13.
pub fn magnetization_fixed_point(x: f64, lambda: f64) -> Result<f64> {
    if lambda.abs() >= 0.25 {
        return Err(Error::NotApplicable(format!(
            "magnetization fixed point requires |lambda| < 1/4, got {lambda}; \
             use direct maximization"
        )));
    }
    Ok(fixed_point_inner(x, lambda))
}

fn fixed_point_inner(x: f64, lambda: f64) -> f64 {
    let mut m = x.tanh();
    for _ in 0..64 {
        let th = (x + 2.0 * lambda * m).tanh();
        let g = m - th;
        let dg = 1.0 - 2.0 * lambda * (1.0 - th * th);
        let step = g / dg;
        m = (m - step).clamp(-1.0, 1.0);
        if step.abs() < 1e-15 {
            break;
        }
    }
    // damped fixed-point fallback if Newton stalled (flat dg near |m| = 1)
    let mut residual = (m - (x + 2.0 * lambda * m).tanh()).abs();
    let mut guard = 0;
    while residual > 1e-13 && guard < 10_000 {
        m = 0.5 * m + 0.5 * (x + 2.0 * lambda * m).tanh();
        residual = (m - (x + 2.0 * lambda * m).tanh()).abs();
        guard += 1;
    }
    m
}

/// Boundary value of the soft-spin solve at one point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SoftBoundaryPoint {
    pub x: f64,
    pub lambda: f64,
    /// argmax of m x + lambda m^2 - I(m) over [-1, 1].
    pub m_star: f64,
    pub f_value: f64,
}

/// f(x, lambda) = max_{m in [-1,1]} (m x + lambda m^2 - I(m)).
///
/// For |lambda| < 1/4 the closed form through the tanh fixed point applies;
/// otherwise the maximum is located by a 512-point scan refined by
/// golden-section search.
pub fn soft_boundary_f(x: f64, lambda: f64) -> SoftBoundaryPoint {
    if lambda.abs() < 0.25 {
        let m = fixed_point_inner(x, lambda);
        let f_value = log_2cosh(x + 2.0 * lambda * m) - lambda * m * m;
        SoftBoundaryPoint {
            x,
            lambda,
            m_star: m,
            f_value,
        }
    } else {
        let g = |m: f64| m * x + lambda * m * m - bernoulli_entropy_unchecked(m);
        const GRID: usize = 512;
        let mut best_i = 0;
        let mut best = f64::NEG_INFINITY;
        for i in 0..=GRID {
            let m = -1.0 + 2.0 * i as f64 / GRID as f64;
            let v = g(m);
            if v > best {
                best = v;
                best_i = i;
            }
        }
        let lo = -1.0 + 2.0 * best_i.saturating_sub(1) as f64 / GRID as f64;
        let hi = -1.0 + 2.0 * (best_i + 1).min(GRID) as f64 / GRID as f64;
        let (m, f_value) = golden_max(g, lo, hi);
        SoftBoundaryPoint {
            x,
            lambda,
            m_star: m,
            f_value,
        }
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..80 {
        if fc > fd {
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
        if (b - a).abs() < 1e-14 {
            break;
        }
    }
    let m = 0.5 * (a + b);
    (m, f(m))
}

fn log_2cosh(x: f64) -> f64 {
    // log 2cosh(x) = |x| + log(1 + exp(-2|x|))
    x.abs() + (-2.0 * x.abs()).exp().ln_1p()
}

fn log_cosh(x: f64) -> f64 {
    log_2cosh(x) - std::f64::consts::LN_2
}

struct Grid {
    x0: f64,
    dx: f64,
    n: usize,
}

impl Grid {
    fn build(spec: &MixtureSpec, cfg: &GridConfig) -> Result<Grid> {
        if !(cfg.dx > 0.0) || !cfg.dx.is_finite() {
            return Err(Error::Invalid {
                what: "grid",
                why: format!("dx = {}", cfg.dx),
            });
        }
        let x_max = cfg
            .x_max
            .unwrap_or_else(|| spec.h().abs() + 8.0 * spec.xi_d(1.0).sqrt() + 4.0);
        if !(x_max > 0.0) {
            return Err(Error::Invalid {
                what: "grid",
                why: format!("x_max = {x_max}"),
            });
        }
        let half = (x_max / cfg.dx).ceil() as usize;
        let n = 2 * half + 1;
        Ok(Grid {
            x0: -(half as f64) * cfg.dx,
            dx: cfg.dx,
            n,
        })
    }

    fn x_at(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }
}

/// Fritsch-Carlson limited slopes on a uniform grid.
fn pchip_slopes(phi: &[f64], dx: f64) -> Vec<f64> {
    let n = phi.len();
    let mut d = vec![0.0; n];
    if n < 2 {
        return d;
    }
    let sec = |i: usize| (phi[i + 1] - phi[i]) / dx;
    d[0] = sec(0);
    d[n - 1] = sec(n - 2);
    for i in 1..n - 1 {
        let (a, b) = (sec(i - 1), sec(i));
        d[i] = if a * b <= 0.0 { 0.0 } else { 2.0 * a * b / (a + b) };
    }
    d
}

/// One Cole-Hopf smoothing step across variance sigma^2 with tilt zeta.
fn cole_hopf_step(grid: &Grid, gh: &GaussHermite, phi: &[f64], zeta: f64, sigma: f64) -> Vec<f64> {
    let n = grid.n;
    if sigma <= 0.0 {
        return phi.to_vec();
    }
    let slopes = pchip_slopes(phi, grid.dx);
    let c_plus = phi[n - 1] - grid.x_at(n - 1);
    let c_minus = phi[0] + grid.x0;

    struct NodeIp {
        shift: isize,
        w: f64,
        off: f64,
        h00: f64,
        h10: f64,
        h01: f64,
        h11: f64,
    }
    let nodes: Vec<NodeIp> = gh
        .nodes
        .iter()
        .zip(gh.weights.iter())
        .map(|(&z, &w)| {
            let off = sigma * z;
            let t = off / grid.dx;
            let mf = t.floor();
            let u = t - mf;
            let (h00, h10, h01, h11) = hermite_basis(u);
            NodeIp {
                shift: mf as isize,
                w,
                off,
                h00,
                h10: h10 * grid.dx,
                h01,
                h11: h11 * grid.dx,
            }
        })
        .collect();

    let node_val = |node: &NodeIp, i: usize| -> f64 {
        let j = i as isize + node.shift;
        if j >= 0 && (j as usize) + 1 < n {
            let j = j as usize;
            node.h00 * phi[j]
                + node.h01 * phi[j + 1]
                + node.h10 * slopes[j]
                + node.h11 * slopes[j + 1]
        } else {
            let y = grid.x_at(i) + node.off;
            if y >= 0.0 {
                y + c_plus
            } else {
                -y + c_minus
            }
        }
    };

    let mut out = vec![0.0; n];
    if zeta == 0.0 {
        for node in &nodes {
            let lo = (-node.shift).max(0) as usize;
            let hi = ((n as isize - 1 - node.shift).max(0) as usize).min(n);
            for i in 0..lo.min(n) {
                out[i] += node.w * node_val(node, i);
            }
            let j0 = (lo as isize + node.shift) as usize;
            for (i, o) in out[lo..hi].iter_mut().enumerate() {
                let j = j0 + i;
                *o += node.w
                    * (node.h00 * phi[j]
                        + node.h01 * phi[j + 1]
                        + node.h10 * slopes[j]
                        + node.h11 * slopes[j + 1]);
            }
            for i in hi..n {
                out[i] += node.w * node_val(node, i);
            }
        }
    } else {
        const BS: usize = 512;
        let k_n = nodes.len();
        let mut buf = vec![0.0; k_n * BS];
        let mut bstart = 0;
        while bstart < n {
            let bl = BS.min(n - bstart);
            for (k, node) in nodes.iter().enumerate() {
                let row = &mut buf[k * BS..k * BS + bl];
                for (c, slot) in row.iter_mut().enumerate() {
                    *slot = node_val(node, bstart + c);
                }
            }
            for c in 0..bl {
                let mut mx = f64::NEG_INFINITY;
                for k in 0..k_n {
                    let v = buf[k * BS + c];
                    if v > mx {
                        mx = v;
                    }
                }
                let mut r = 0.0;
                for (k, node) in nodes.iter().enumerate() {
                    let a = zeta * (buf[k * BS + c] - mx);
                    if a < -40.0 {
                        r -= node.w;
                    } else {
                        r += node.w * a.exp_m1();
                    }
                }
                out[bstart + c] = mx + r.ln_1p() / zeta;
            }
            bstart += bl;
        }
    }
    out
}

/// Centered x-derivative with second-order one-sided edges, clamped to
/// [-1, 1] (the boundary slope bound, preserved by the recursion).
fn ddx(grid: &Grid, phi: &[f64]) -> Vec<f64> {
    let n = grid.n;
    let dx = grid.dx;
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * phi[0] + 4.0 * phi[1] - phi[2]) / (2.0 * dx);
    d[n - 1] = (3.0 * phi[n - 1] - 4.0 * phi[n - 2] + phi[n - 3]) / (2.0 * dx);
    for i in 1..n - 1 {
        d[i] = (phi[i + 1] - phi[i - 1]) / (2.0 * dx);
    }
    for v in &mut d {
        *v = v.clamp(-1.0, 1.0);
    }
    d
}

/// Profile segments [a, b) with their constant value, ascending.
fn segments(profile: &StepProfile) -> Vec<(f64, f64, f64)> {
    let end = profile.domain_end();
    let mut bounds = vec![0.0];
    for &(q, _) in profile.knots() {
        if q > 0.0 && q < end {
            bounds.push(q);
        }
    }
    bounds.push(end);
    bounds
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| (w[0], w[1], profile.value_at(w[0])))
        .collect()
}

fn spec_hash(
    spec: &MixtureSpec,
    profile: &StepProfile,
    boundary: Boundary,
    cfg: &GridConfig,
) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for (&p, &b) in spec.coeffs() {
        p.hash(&mut h);
        b.to_bits().hash(&mut h);
    }
    spec.h().to_bits().hash(&mut h);
    (profile.mode() == ProfileMode::Cdf).hash(&mut h);
    profile.domain_end().to_bits().hash(&mut h);
    for &(q, v) in profile.knots() {
        q.to_bits().hash(&mut h);
        v.to_bits().hash(&mut h);
    }
    match boundary {
        Boundary::LogCosh => 0u8.hash(&mut h),
        Boundary::Soft(l) => {
            1u8.hash(&mut h);
            l.to_bits().hash(&mut h);
        }
    }
    cfg.x_max.map(f64::to_bits).hash(&mut h);
    cfg.dx.to_bits().hash(&mut h);
    cfg.gh_nodes.hash(&mut h);
    cfg.sub_knots.hash(&mut h);
    h.finish()
}

/// Solves the PDE backward from `profile.domain_end()` to 0.
pub fn solve_parisi(
    spec: &MixtureSpec,
    profile: &StepProfile,
    boundary: Boundary,
    cfg: &GridConfig,
) -> Result<PdeSolution> {
    if cfg.sub_knots == 0 {
        return Err(Error::Invalid {
            what: "grid",
            why: "sub_knots must be at least 1".into(),
        });
    }
    let grid = Grid::build(spec, cfg)?;
    let gh = GaussHermite::new(cfg.gh_nodes);
    let end = profile.domain_end();

    let (phi_b, dphi_b): (Vec<f64>, Vec<f64>) = match boundary {
        Boundary::LogCosh => (0..grid.n)
            .map(|i| {
                let x = grid.x_at(i);
                (log_cosh(x), x.tanh())
            })
            .unzip(),
        Boundary::Soft(lambda) => {
            if !lambda.is_finite() {
                return Err(Error::Invalid {
                    what: "boundary",
                    why: format!("lambda = {lambda}"),
                });
            }
            (0..grid.n)
                .map(|i| {
                    let p = soft_boundary_f(grid.x_at(i), lambda);
                    (p.f_value, p.m_star)
                })
                .unzip()
        }
    };

    let mut rows = vec![Row {
        s: end,
        phi: phi_b,
        dphi: dphi_b,
    }];

    for &(a, b, zeta) in segments(profile).iter().rev() {
        let top_phi = rows.last().unwrap().phi.clone();
        let xi_d_b = spec.xi_d(b);
        for j in 1..=cfg.sub_knots {
            let s = if j == cfg.sub_knots {
                a
            } else {
                b - (b - a) * j as f64 / cfg.sub_knots as f64
            };
            let sigma2 = (xi_d_b - spec.xi_d(s)).max(0.0);
            let phi = cole_hopf_step(&grid, &gh, &top_phi, zeta, sigma2.sqrt());
            let dphi = ddx(&grid, &phi);
            rows.push(Row { s, phi, dphi });
        }
    }
    rows.reverse();

    // edge-resolution check: the smoothing must not have reached the grid edge
    let bnd = rows.last().unwrap();
    let (e0, e1) = (bnd.dphi[0], bnd.dphi[grid.n - 1]);
    for row in &rows {
        let dev = (row.dphi[0] - e0).abs().max((row.dphi[grid.n - 1] - e1).abs());
        if dev > EDGE_SLOPE_TOL {
            return Err(Error::GridUnderflow {
                deviation: dev,
                tol: EDGE_SLOPE_TOL,
                x_max: grid.x_at(grid.n - 1),
            });
        }
    }

    let mut s_knots = vec![0.0];
    for &(q, _) in profile.knots() {
        if q > 0.0 && q < end {
            s_knots.push(q);
        }
    }
    if end > 0.0 {
        s_knots.push(end);
    }

    Ok(PdeSolution {
        x0: grid.x0,
        dx: grid.dx,
        n_x: grid.n,
        domain_end: end,
        boundary,
        rows,
        s_knots,
        spec_hash: spec_hash(spec, profile, boundary, cfg),
    })
}

/// Light solve keeping only the final row; used by the functional assemblies
/// where only Phi(0, h) is needed.
fn solve_origin_value(
    spec: &MixtureSpec,
    profile: &StepProfile,
    boundary: Boundary,
    cfg: &GridConfig,
) -> Result<f64> {
    let light = GridConfig {
        sub_knots: 1,
        ..cfg.clone()
    };
    let sol = solve_parisi(spec, profile, boundary, &light)?;
    Ok(sol.phi_at(0.0, spec.h()))
}

/// P(alpha) = log 2 + Phi_alpha(0, h) - (1/2) int_0^1 xi''(s) s alpha(s) ds.
pub fn parisi_functional(spec: &MixtureSpec, alpha: &StepProfile, cfg: &GridConfig) -> Result<f64> {
    if alpha.mode() != ProfileMode::Cdf {
        return Err(Error::Mode {
            expected: "CDF",
            got: "GAMMA",
        });
    }
    let phi0 = solve_origin_value(spec, alpha, Boundary::LogCosh, cfg)?;
    let correction = 0.5 * alpha.weighted_integral(spec, 1.0)?;
    Ok(std::f64::consts::LN_2 + phi0 - correction)
}

/// P_u(lambda, gamma) = Phi_{u,gamma}(0, h, lambda) - lambda u
///                      - (1/2) int_0^u xi''(s) s gamma(s) ds.
pub fn constrained_functional(
    spec: &MixtureSpec,
    u: f64,
    lambda: f64,
    gamma: &StepProfile,
    cfg: &GridConfig,
) -> Result<f64> {
    if gamma.mode() != ProfileMode::Gamma {
        return Err(Error::Mode {
            expected: "GAMMA",
            got: "CDF",
        });
    }
    if (gamma.domain_end() - u).abs() > 1e-12 {
        return Err(Error::Invalid {
            what: "gamma profile",
            why: format!(
                "domain_end {} does not match u = {u}",
                gamma.domain_end()
            ),
        });
    }
    if u == 0.0 {
        // no evolution: P_0(lambda) = f(h, lambda) - 0
        return Ok(soft_boundary_f(spec.h(), lambda).f_value);
    }
    let phi0 = solve_origin_value(spec, gamma, Boundary::Soft(lambda), cfg)?;
    let correction = 0.5 * gamma.weighted_integral(spec, u)?;
    Ok(phi0 - lambda * u - correction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn sk(beta: f64, h: f64) -> MixtureSpec {
        MixtureSpec::sk(beta, h)
    }

    fn mixed() -> MixtureSpec {
        let mut c = BTreeMap::new();
        c.insert(2, 0.5);
        c.insert(3, 0.3);
        MixtureSpec::new(c, 0.2).unwrap()
    }

    fn coarse() -> GridConfig {
        GridConfig {
            dx: 4e-3,
            ..GridConfig::default()
        }
    }

    #[test]
    fn fixed_point_examples() {
        for x in [-2.0, -0.3, 0.0, 0.7, 3.0] {
            assert!((magnetization_fixed_point(x, 0.0).unwrap() - x.tanh()).abs() < 1e-13);
        }
        for l in [-0.2, -0.05, 0.1, 0.24] {
            assert_eq!(magnetization_fixed_point(0.0, l).unwrap(), 0.0);
        }
        assert!(magnetization_fixed_point(1.0, 0.25).is_err());

        // bisection oracle for x = 1, lambda = 0.2 (frozen from mpmath run)
        let m = magnetization_fixed_point(1.0, 0.2).unwrap();
        assert!((m - 0.873_954_548_255_713_6).abs() < 1e-12);
        // residual contract
        assert!((m - (1.0 + 0.4 * m).tanh()).abs() < 1e-13);
    }

    #[test]
    fn soft_boundary_examples() {
        for x in [-1.5, 0.0, 0.4, 2.0] {
            let p = soft_boundary_f(x, 0.0);
            assert!((p.f_value - log_2cosh(x)).abs() < 1e-13);
            assert!((p.m_star - x.tanh()).abs() < 1e-13);
        }
        let p = soft_boundary_f(0.0, 0.0);
        assert!((p.f_value - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(p.m_star, 0.0);

        // closed form vs grid maximization at (2, 0.2); frozen oracle value
        let p = soft_boundary_f(2.0, 0.2);
        assert!((p.f_value - 2.208_250_071_987_227_8).abs() < 1e-12);
        let grid_max = {
            let g =
                |m: f64| m * 2.0 + 0.2 * m * m - bernoulli_entropy_unchecked(m);
            let mut best = f64::NEG_INFINITY;
            let mut best_m = 0.0;
            for i in 0..=512 {
                let m = -1.0 + 2.0 * i as f64 / 512.0;
                if g(m) > best {
                    best = g(m);
                    best_m = m;
                }
            }
            golden_max(g, best_m - 2.0 / 512.0, best_m + 2.0 / 512.0).1
        };
        assert!((p.f_value - grid_max).abs() < 1e-8);

        // fallback branch beyond |lambda| >= 1/4 stays continuous-ish in lambda
        let a = soft_boundary_f(0.7, 0.2499);
        let b = soft_boundary_f(0.7, 0.2501);
        assert!((a.f_value - b.f_value).abs() < 1e-3);
    }

    #[test]
    fn all_one_profile_closed_form() {
        // alpha == 1 on [0,1]: Phi(0,x) = log cosh(x) + xi'(1)/2
        let spec = sk(0.8, 0.2);
        let alpha = StepProfile::dirac(0.0).unwrap();
        let sol = solve_parisi(&spec, &alpha, Boundary::LogCosh, &coarse()).unwrap();
        for x in [-3.0, -0.5, 0.0, 0.2, 1.7] {
            let expect = log_cosh(x) + spec.xi_d(1.0) / 2.0;
            assert!(
                (sol.phi_at(0.0, x) - expect).abs() < 1e-8,
                "x = {x}: {} vs {expect}",
                sol.phi_at(0.0, x)
            );
        }
    }

    #[test]
    fn dirac_profile_cole_hopf_closed_form() {
        // alpha = 1_{[q,1]}: Phi(q, x) = log cosh(x) + (xi'(1) - xi'(q))/2
        let spec = mixed();
        let q = 0.4;
        let alpha = StepProfile::dirac(q).unwrap();
        let sol = solve_parisi(&spec, &alpha, Boundary::LogCosh, &coarse()).unwrap();
        for x in [-2.0, 0.0, 0.9] {
            let expect = log_cosh(x) + 0.5 * (spec.xi_d(1.0) - spec.xi_d(q));
            assert!((sol.phi_at(q, x) - expect).abs() < 1e-8);
        }
    }

    #[test]
    fn pair_identity_between_boundaries() {
        // log 2 + Phi_alpha(s, x) = Phi_{u,gamma}(s, x, 0) + (xi'(1) - xi'(u))/2
        let spec = sk(0.5, 0.3);
        for alpha in [
            StepProfile::cdf(vec![(0.2, 0.4), (0.55, 1.0)]).unwrap(),
            StepProfile::dirac(0.35).unwrap(),
            StepProfile::cdf(vec![(0.05, 0.2), (0.3, 0.7), (0.6, 1.0)]).unwrap(),
        ] {
            let u = alpha.support_max().unwrap();
            let gamma = alpha.restrict_to_gamma(u).unwrap();
            let full = solve_parisi(&spec, &alpha, Boundary::LogCosh, &coarse()).unwrap();
            let cons = solve_parisi(&spec, &gamma, Boundary::Soft(0.0), &coarse()).unwrap();
            let shift = 0.5 * (spec.xi_d(1.0) - spec.xi_d(u));
            for s in [0.0, u / 3.0, u] {
                for x in [-1.2, 0.0, 0.3, 2.1] {
                    let lhs = std::f64::consts::LN_2 + full.phi_at(s, x);
                    let rhs = cons.phi_at(s, x) + shift;
                    assert!(
                        (lhs - rhs).abs() < 1e-6,
                        "s = {s}, x = {x}: {lhs} vs {rhs}"
                    );
                }
            }
        }
    }

    #[test]
    fn slope_bound_and_convexity_invariants() {
        let spec = mixed();
        let alpha = StepProfile::cdf(vec![(0.15, 0.3), (0.5, 1.0)]).unwrap();
        let sol = solve_parisi(&spec, &alpha, Boundary::LogCosh, &coarse()).unwrap();
        for (_, phi, dphi) in sol.rows() {
            for &d in dphi {
                assert!((-1.0..=1.0).contains(&d));
            }
            for w in phi.windows(3) {
                assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-8);
            }
        }
    }

    #[test]
    fn boundary_monotonicity() {
        // larger boundary data (larger lambda) => pointwise larger solution
        let spec = sk(0.6, 0.1);
        let gamma = StepProfile::gamma(vec![(0.1, 0.5)], 0.45).unwrap();
        let lo = solve_parisi(&spec, &gamma, Boundary::Soft(-0.1), &coarse()).unwrap();
        let hi = solve_parisi(&spec, &gamma, Boundary::Soft(0.1), &coarse()).unwrap();
        for ((_, phi_lo, _), (_, phi_hi, _)) in lo.rows().zip(hi.rows()) {
            for (a, b) in phi_lo.iter().zip(phi_hi.iter()) {
                assert!(a <= &(b + 1e-9));
            }
        }
    }

    #[test]
    fn constant_shift_equivariance() {
        // adding a constant to the boundary shifts the solution by the same
        // constant; realized here through the soft boundary at lambda = 0,
        // which is log cosh + log 2
        let spec = sk(0.7, 0.0);
        let alpha = StepProfile::dirac(0.5).unwrap();
        let gamma = alpha.restrict_to_gamma(1.0).unwrap();
        let base = solve_parisi(&spec, &alpha, Boundary::LogCosh, &coarse()).unwrap();
        let shifted = solve_parisi(&spec, &gamma, Boundary::Soft(0.0), &coarse()).unwrap();
        for x in [-2.0, -0.4, 0.0, 1.1] {
            for s in [0.0, 0.25, 0.5, 1.0] {
                let d = shifted.phi_at(s, x) - base.phi_at(s, x);
                assert!((d - std::f64::consts::LN_2).abs() < 5e-7, "s={s} x={x} d={d}");
            }
        }
    }

    #[test]
    fn grid_convergence() {
        let spec = sk(0.3, 0.3);
        let alpha = StepProfile::dirac(0.09).unwrap();
        let a = parisi_functional(&spec, &alpha, &GridConfig::default()).unwrap();
        let b = parisi_functional(
            &spec,
            &alpha,
            &GridConfig {
                dx: 1e-3,
                gh_nodes: 121,
                ..GridConfig::default()
            },
        )
        .unwrap();
        assert!((a - b).abs() < 1e-7, "{a} vs {b}");
    }

    #[test]
    fn grid_underflow_reported() {
        let spec = sk(1.0, 0.0);
        let alpha = StepProfile::dirac(0.0).unwrap();
        let err = solve_parisi(
            &spec,
            &alpha,
            Boundary::LogCosh,
            &GridConfig {
                x_max: Some(1.5),
                ..coarse()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::GridUnderflow { .. }));
    }

    #[test]
    fn parisi_functional_rs_values() {
        // Dirac at 0, SK h=0: log 2 + beta^2/4
        let beta = 0.3;
        let spec = sk(beta, 0.0);
        let alpha = StepProfile::dirac(0.0).unwrap();
        let p = parisi_functional(&spec, &alpha, &GridConfig::default()).unwrap();
        assert!((p - (std::f64::consts::LN_2 + beta * beta / 4.0)).abs() < 1e-9);

        // Dirac at q: E log 2cosh(h + z sqrt(xi'(q))) + C(q), by quadrature
        let spec = mixed();
        let q = 0.3;
        let alpha = StepProfile::dirac(q).unwrap();
        let p = parisi_functional(&spec, &alpha, &GridConfig::default()).unwrap();
        let gh = GaussHermite::new(93);
        let expect = gh.expect(|z| log_2cosh(spec.h() + z * spec.xi_d(q).sqrt()))
            + spec.onsager_c(q).unwrap();
        assert!((p - expect).abs() < 1e-8, "{p} vs {expect}");
    }

    #[test]
    fn constrained_functional_examples() {
        // empty gamma, u = 0, lambda = 0 -> f(h, 0) = log 2cosh(h)
        let spec = sk(0.4, 0.6);
        let empty = StepProfile::gamma(vec![], 0.0).unwrap();
        let v = constrained_functional(&spec, 0.0, 0.0, &empty, &coarse()).unwrap();
        assert!((v - log_2cosh(0.6)).abs() < 1e-12);

        // Case identity: P_u(0, gamma) = P(alpha) - C(u) for alpha extending
        // gamma by 1 on [u, 1]
        let spec = mixed();
        for (alpha, u) in [
            (StepProfile::cdf(vec![(0.2, 0.35), (0.5, 1.0)]).unwrap(), 0.5),
            (StepProfile::dirac(0.25).unwrap(), 0.6),
            (StepProfile::cdf(vec![(0.1, 0.5), (0.42, 1.0)]).unwrap(), 0.42),
        ] {
            // extend: alpha must equal 1 on [u,1]; by construction support_max <= u
            let gamma = alpha.restrict_to_gamma(u).unwrap();
            let lhs = constrained_functional(&spec, u, 0.0, &gamma, &coarse()).unwrap();
            let rhs = parisi_functional(&spec, &alpha, &coarse()).unwrap()
                - spec.onsager_c(u).unwrap();
            assert!((lhs - rhs).abs() < 1e-7, "u = {u}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn dump_rows_are_consistent() {
        let spec = sk(0.5, 0.1);
        let alpha = StepProfile::cdf(vec![(0.3, 1.0)]).unwrap();
        let sol = solve_parisi(&spec, &alpha, Boundary::LogCosh, &coarse()).unwrap();
        assert_eq!(sol.s_knots(), &[0.0, 0.3, 1.0]);
        let n_rows = sol.rows().count();
        assert_eq!(n_rows, 2 * GridConfig::default().sub_knots + 1);
        assert!(sol.spec_hash() != 0);
        // rows ascending in s
        let ss: Vec<f64> = sol.rows().map(|(s, _, _)| s).collect();
        for w in ss.windows(2) {
            assert!(w[1] > w[0]);
        }
    }
}
