//! Value-of-information estimates for single measurements (myopic) and for
//! runs of repeated measurements of one candidate (blinkered).
//!
//! The intrinsic value of a measurement is the expected gain in the best
//! expected utility after seeing its outcome:
//!
//! ```text
//! Λ = E_y[ max_i E[u(z_i) | y] ] - max_i E[u(z_i)]
//! ```
//!
//! Under a Gaussian belief the posterior mean of every item is affine in the
//! observation and the posterior variances do not depend on it, so the outer
//! expectation is a one-dimensional integral over the standardised
//! observation. Inner expectations use Gauss–Hermite rules.

use std::borrow::Cow;
use std::sync::OnceLock;

use crate::belief::{GaussianBelief, MeasurementType, UtilityFn};
use crate::quadrature::{normal_integral, GaussHermite};

/// A measurement: a measurement type applied to an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Candidate {
    pub type_index: usize,
    pub item_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoiEstimate {
    pub intrinsic: f64,
    /// Cost of the measurement sequence the estimate refers to.
    pub cost: f64,
    pub net: f64,
    /// Number of repetitions behind the estimate (1 for myopic, 0 when
    /// nothing is affordable).
    pub batch: usize,
}

impl VoiEstimate {
    pub fn new(intrinsic: f64, cost: f64, batch: usize) -> Self {
        Self {
            intrinsic,
            cost,
            net: intrinsic - cost,
            batch,
        }
    }
}

pub fn net_voi(estimate: &VoiEstimate) -> f64 {
    estimate.net
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    Myopic,
    /// Repeated measurements of the same candidate, optionally capped in
    /// length. `None` lets the remaining budget decide.
    Blinkered { max_batch: Option<usize> },
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Myopic => "myopic",
            Scheme::Blinkered { .. } => "blinkered",
        }
    }
}

/// Shares the per-belief work (each item's current expected utility) across
/// many VOI evaluations on the same belief.
#[derive(Debug, Clone)]
pub struct VoiEvaluator<'a> {
    belief: &'a GaussianBelief,
    utility: UtilityFn,
    gh: &'a GaussHermite,
    expected: Cow<'a, [f64]>,
}

impl<'a> VoiEvaluator<'a> {
    pub fn new(belief: &'a GaussianBelief, utility: &UtilityFn, gh: &'a GaussHermite) -> Self {
        let expected = expected_utilities(belief, utility, gh);
        Self {
            belief,
            utility: *utility,
            gh,
            expected: Cow::Owned(expected),
        }
    }

    /// Reuses expected utilities computed by [`expected_utilities`] for the same belief.
    pub fn with_expected(
        belief: &'a GaussianBelief,
        utility: &UtilityFn,
        gh: &'a GaussHermite,
        expected: &'a [f64],
    ) -> Self {
        debug_assert_eq!(expected.len(), belief.len());
        Self {
            belief,
            utility: *utility,
            gh,
            expected: Cow::Borrowed(expected),
        }
    }

    pub fn myopic(&self, item: usize, mtype: &MeasurementType) -> VoiEstimate {
        VoiEstimate::new(self.intrinsic(item, mtype.noise_variance), mtype.cost, 1)
    }

    /// Best net value over runs of `n = 1..=N` repetitions, where `N` is the
    /// number of repetitions the remaining budget affords (capped by
    /// `max_batch`). `n` repetitions with noise variance `s` are equivalent
    /// to one observation with variance `s / n`.
    pub fn blinkered(
        &self,
        item: usize,
        mtype: &MeasurementType,
        remaining_budget: f64,
        max_batch: Option<usize>,
    ) -> VoiEstimate {
        let affordable = affordable_repetitions(remaining_budget, mtype.cost);
        let n_max = max_batch.map_or(affordable, |cap| affordable.min(cap));
        if n_max == 0 {
            return VoiEstimate::new(0.0, mtype.cost, 0);
        }
        let mut best: Option<VoiEstimate> = None;
        for n in 1..=n_max {
            let lambda = self.intrinsic(item, mtype.noise_variance / n as f64);
            let est = VoiEstimate::new(lambda, n as f64 * mtype.cost, n);
            if best.map_or(true, |b| est.net > b.net) {
                best = Some(est);
            }
        }
        best.expect("n_max >= 1")
    }

    pub fn estimate(
        &self,
        scheme: &Scheme,
        item: usize,
        mtype: &MeasurementType,
        remaining_budget: f64,
    ) -> VoiEstimate {
        match *scheme {
            Scheme::Myopic => self.myopic(item, mtype),
            Scheme::Blinkered { max_batch } => {
                self.blinkered(item, mtype, remaining_budget, max_batch)
            }
        }
    }

    /// Myopic intrinsic VOI of observing `item` with noise variance `noise_variance`.
    pub fn intrinsic(&self, item: usize, noise_variance: f64) -> f64 {
        let belief = self.belief;
        let sjj = belief.variance(item);
        if !(sjj > 0.0) {
            return 0.0;
        }
        let utility = &self.utility;
        let gh = self.gh;
        let n = belief.len();
        let mean = belief.mean();
        let cov = belief.covariance();
        let pred_var = sjj + noise_variance;
        let pred_sd = pred_var.sqrt();
        let col = cov.column(item);
        let nodes = scan_nodes();
        let k = nodes.len();

        // With the observation standardised to t, item i's posterior mean is
        // mean_i + shift_i * t and its posterior sd does not depend on t.
        let shift: Vec<f64> = (0..n).map(|i| col[i] / pred_sd).collect();
        let sd: Vec<f64> = (0..n)
            .map(|i| (cov[(i, i)] - col[i] * col[i] / pred_var).max(0.0).sqrt())
            .collect();
        let value = |i: usize, t: f64| utility.expect(mean[i] + shift[i] * t, sd[i], gh);

        // Visit items from the currently most promising down so the running
        // per-node maxima rise early.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.expected[b].total_cmp(&self.expected[a]));
        let incumbent = order[0];

        // Envelope of the posterior expected utilities at the quadrature
        // nodes, and which item attains it.
        let mut best = vec![f64::NEG_INFINITY; k];
        let mut arg = vec![incumbent; k];
        let mut suffix_min = vec![0.0; k + 1];
        // Past visit position `cutoff[i]` item i is worth at most `cap[i]`.
        let mut cutoff = vec![k; n];
        let mut cap = vec![f64::INFINITY; n];
        for &i in &order {
            if shift[i] == 0.0 {
                let v = value(i, 0.0);
                for (b, a) in best.iter_mut().zip(arg.iter_mut()) {
                    if v > *b {
                        *b = v;
                        *a = i;
                    }
                }
                cutoff[i] = 0;
                cap[i] = v;
                continue;
            }
            // E[u] is monotone in the mean, so along `visit` the item's value
            // only decreases; stop once it cannot beat any remaining node.
            let visit = |pos: usize| if shift[i] > 0.0 { k - 1 - pos } else { pos };
            suffix_min[k] = f64::INFINITY;
            for pos in (0..k).rev() {
                suffix_min[pos] = suffix_min[pos + 1].min(best[visit(pos)]);
            }
            for pos in 0..k {
                let node = visit(pos);
                let v = value(i, nodes[node]);
                if v <= suffix_min[pos] {
                    cutoff[i] = pos;
                    cap[i] = v;
                    break;
                }
                if v > best[node] {
                    best[node] = v;
                    arg[node] = i;
                }
            }
        }

        // The envelope has a kink wherever the leading item changes, which
        // a Gauss–Hermite sum over it resolves poorly. Locate each change
        // between neighbouring nodes and integrate the smooth pieces
        // separately, as gains over the incumbent so that a measurement that
        // never changes the decision is worth exactly zero.
        let mut pieces = vec![(f64::NEG_INFINITY, arg[0])];
        let mut bound = vec![f64::INFINITY; n];
        for node in 1..k {
            let (a, b) = (arg[node - 1], arg[node]);
            if a == b {
                continue;
            }
            for i in 0..n {
                let first = if shift[i] > 0.0 {
                    k - 1 - node
                } else {
                    node - 1
                };
                bound[i] = if shift[i] == 0.0 || first >= cutoff[i] {
                    cap[i]
                } else {
                    f64::INFINITY
                };
            }
            let gap = Gap {
                value: &value,
                bound: &bound,
            };
            gap.split(a, b, nodes[node - 1], nodes[node], 0, &mut pieces);
        }
        let mut lambda = 0.0;
        for (p, &(lo, leader)) in pieces.iter().enumerate() {
            let hi = pieces.get(p + 1).map_or(f64::INFINITY, |q| q.0);
            if leader != incumbent && hi > lo {
                lambda += normal_integral(lo, hi, |t| value(leader, t) - value(incumbent, t));
            }
        }
        lambda.max(0.0)
    }
}

/// The stretch between two neighbouring quadrature nodes where the leading
/// item changes. `bound[i]` caps item i's value anywhere inside it.
struct Gap<'g, F> {
    value: &'g F,
    bound: &'g [f64],
}

impl<F: Fn(usize, f64) -> f64> Gap<'_, F> {
    /// Hand-over from leader `a` at `lo` to `b` at `hi`. If a third item
    /// beats both at their crossing it leads somewhere in between, and each
    /// half is split again.
    fn split(
        &self,
        a: usize,
        b: usize,
        lo: f64,
        hi: f64,
        depth: usize,
        pieces: &mut Vec<(f64, usize)>,
    ) {
        let value = self.value;
        let z = crossing(|t| value(a, t) - value(b, t), lo, hi);
        let mut top = None;
        let mut top_value = value(a, z).max(value(b, z)) + 1e-12;
        for (i, &cap) in self.bound.iter().enumerate() {
            if i == a || i == b || cap <= top_value {
                continue;
            }
            let v = value(i, z);
            if v > top_value {
                top = Some(i);
                top_value = v;
            }
        }
        match top {
            Some(c) if depth < 16 => {
                self.split(a, c, lo, z, depth + 1, pieces);
                self.split(c, b, z, hi, depth + 1, pieces);
            }
            _ => pieces.push((z, b)),
        }
    }
}

/// Observation points at which the envelope is scanned for changes of the
/// leading item. Only locates kinks; the integral itself uses panels.
const SCAN_NODES: usize = 11;

fn scan_nodes() -> &'static [f64] {
    static NODES: OnceLock<Vec<f64>> = OnceLock::new();
    NODES.get_or_init(|| {
        GaussHermite::new(SCAN_NODES)
            .expect("positive node count")
            .nodes()
            .to_vec()
    })
}

/// Root of `d` on `[lo, hi]` where `d(lo) >= 0 >= d(hi)`, by Illinois
/// false position.
fn crossing<F: Fn(f64) -> f64>(d: F, lo: f64, hi: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (d(a), d(b));
    if !(fa > 0.0 && fb < 0.0) {
        return if fa <= 0.0 { a } else { b };
    }
    let mut side = 0;
    for _ in 0..60 {
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !(c > a && c < b) {
            c = 0.5 * (a + b);
        }
        let fc = d(c);
        if fc == 0.0 || b - a < 1e-9 {
            return c;
        }
        if fc < 0.0 {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    0.5 * (a + b)
}

/// `E[u(z_i)]` for every item under the current marginals.
pub fn expected_utilities(
    belief: &GaussianBelief,
    utility: &UtilityFn,
    gh: &GaussHermite,
) -> Vec<f64> {
    (0..belief.len())
        .map(|i| belief.expected_utility(i, utility, gh))
        .collect()
}

pub fn myopic_voi(
    belief: &GaussianBelief,
    item: usize,
    mtype: &MeasurementType,
    utility: &UtilityFn,
    gh: &GaussHermite,
) -> VoiEstimate {
    VoiEvaluator::new(belief, utility, gh).myopic(item, mtype)
}

pub fn blinkered_voi(
    belief: &GaussianBelief,
    item: usize,
    mtype: &MeasurementType,
    utility: &UtilityFn,
    gh: &GaussHermite,
    remaining_budget: f64,
    max_batch: Option<usize>,
) -> VoiEstimate {
    VoiEvaluator::new(belief, utility, gh).blinkered(item, mtype, remaining_budget, max_batch)
}

fn affordable_repetitions(remaining_budget: f64, cost: f64) -> usize {
    if !(remaining_budget >= cost) {
        return 0;
    }
    // guard against 1.0 / 0.01 landing just below 100
    ((remaining_budget / cost) * (1.0 + 1e-12)).floor() as usize
}

pub fn intrinsic_value(
    belief: &GaussianBelief,
    item: usize,
    noise_variance: f64,
    utility: &UtilityFn,
    gh: &GaussHermite,
) -> f64 {
    VoiEvaluator::new(belief, utility, gh).intrinsic(item, noise_variance)
}
