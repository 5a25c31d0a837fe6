//! Gauss–Hermite rules for expectations under a normal distribution, plus
//! the standard normal helpers shared by the VOI and metareasoning code.

use std::f64::consts::PI;

use libm::erfc;
use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub const DEFAULT_NODES: usize = 21;

/// Gauss–Hermite rule rescaled so that `expect(mu, sigma, f)` approximates
/// `E[f(X)]` for `X ~ N(mu, sigma^2)`.
///
/// Nodes are stored as standard-normal abscissae (`sqrt(2) * x_k`) and the
/// weights are divided by `sqrt(pi)` so they sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("quadrature_nodes", "must be at least 1"));
        }
        let (xs, ws) = hermite_nodes(n);
        let scale = std::f64::consts::SQRT_2;
        let norm = PI.sqrt();
        Ok(Self {
            nodes: xs.iter().map(|x| x * scale).collect(),
            weights: ws.iter().map(|w| w / norm).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Standard-normal abscissae, ascending.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Probability weights, summing to one.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn expect<F: Fn(f64) -> f64>(&self, mu: f64, sigma: f64, f: F) -> f64 {
        if sigma <= 0.0 {
            return f(mu);
        }
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| w * f(mu + sigma * t))
            .sum()
    }
}

impl Default for GaussHermite {
    fn default() -> Self {
        Self::new(DEFAULT_NODES).expect("default node count is positive")
    }
}

/// Physicists' Gauss–Hermite nodes and weights (weight function `exp(-x^2)`)
/// by Newton iteration on the orthonormal Hermite recurrence.
fn hermite_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        // largest root first; mirror into ascending order
        x[i] = z;
        w[i] = 2.0 / (pp * pp);
    }
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..m {
        xs[n - 1 - i] = x[i];
        ws[n - 1 - i] = w[i];
        xs[i] = -x[i];
        ws[i] = w[i];
    }
    if n % 2 == 1 {
        xs[n / 2] = 0.0;
    }
    (xs, ws)
}

/// Gauss–Laguerre rule for `∫_0^∞ e^{-t} f(t) dt`, from the eigen-decomposition
/// of the Jacobi matrix of the Laguerre recurrence. Nodes ascending.
pub fn gauss_laguerre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        jacobi[(k, k)] = 2.0 * k as f64 + 1.0;
        if k + 1 < n {
            jacobi[(k, k + 1)] = (k + 1) as f64;
            jacobi[(k + 1, k)] = (k + 1) as f64;
        }
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Standard-normal mass beyond which [`normal_integral`] ignores the tails.
pub const NORMAL_CUTOFF: f64 = 7.0;

const LEGENDRE_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const LEGENDRE_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// `∫ f(z) φ(z) dz` over `[lo, hi]` ∩ `[-7, 7]`, with `f` smooth on the
/// interval. Five-point Gauss–Legendre on unit-width panels aligned to the
/// integers, so adjacent intervals share panel edges.
pub fn normal_integral<F: FnMut(f64) -> f64>(lo: f64, hi: f64, mut f: F) -> f64 {
    let lo = lo.max(-NORMAL_CUTOFF);
    let hi = hi.min(NORMAL_CUTOFF);
    let mut total = 0.0;
    let mut a = lo;
    while a < hi {
        let b = (a.floor() + 1.0).min(hi);
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        for (t, w) in LEGENDRE_NODES.iter().zip(&LEGENDRE_WEIGHTS) {
            let z = mid + half * t;
            total += half * w * f(z) * normal_pdf(z);
        }
        a = b;
    }
    total
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Compensated (Neumaier) running sum. Used wherever a total is compared
/// against a hard cap, so that e.g. one hundred costs of 0.01 sum to 1.0.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    /// Total if `x` were added, without mutating.
    pub fn peek_add(&self, x: f64) -> f64 {
        let mut s = *self;
        s.add(x);
        s.value()
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}
