//! Gauss–Hermite quadrature in Gaussian-expectation form.
//!
//! Nodes and weights are computed by Newton iteration on the orthonormal
//! Hermite recurrence and stored pre-transformed for standard-normal
//! expectations: `E f(z) = sum_k w[k] f(z[k])` with the weights normalized
//! to sum exactly to 1.

/// Default node count; gives ~1e-12 expectation error for the smooth,
/// asymptotically affine integrands appearing in the PDE recursion.
pub const DEFAULT_GH_NODES: usize = 61;

#[derive(Debug, Clone)]
pub struct GaussHermite {
    /// Evaluation points for z ~ N(0, 1).
    pub nodes: Vec<f64>,
    /// Matching weights, summing to 1.
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "need at least one quadrature node");
        let (t, w) = hermite_rule(n);
        let sqrt2 = std::f64::consts::SQRT_2;
        let nodes: Vec<f64> = t.iter().map(|&x| sqrt2 * x).collect();
        let total: f64 = w.iter().sum();
        let weights: Vec<f64> = w.iter().map(|&x| x / total).collect();
        GaussHermite { nodes, weights }
    }

    /// E_{z ~ N(0,1)} f(z).
    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(self.weights.iter())
            .map(|(&z, &w)| w * f(z))
            .sum()
    }
}

/// Physicists' Gauss–Hermite rule: integral of e^{-t^2} f(t) dt.
fn hermite_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut t = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = (n + 1) / 2;
    let mut z = 0.0f64;
    for i in 0..m {
        // initial guesses from the asymptotic root layout
        z = match i {
            0 => {
                let an = (2 * n + 1) as f64;
                an.sqrt() - 1.85575 * an.powf(-1.0 / 6.0)
            }
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * t[0],
            3 => 1.91 * z - 0.91 * t[1],
            _ => 2.0 * z - t[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            // orthonormal recurrence: p1 = h_n(z), p2 = h_{n-1}(z)
            let mut p1 = std::f64::consts::PI.powf(-0.25);
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / j as f64).sqrt() * p2 - ((j as f64 - 1.0) / j as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        t[i] = z;
        t[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    // exact middle node for odd n
    if n % 2 == 1 {
        t[n / 2] = 0.0;
    }
    // ascending order
    t.reverse();
    w.reverse();
    (t, w)
}
