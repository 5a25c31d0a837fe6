//! Selective recomputation of VOI estimates.
//!
//! Each candidate keeps its last computed net value together with a normal
//! belief about how far the true value has drifted since. The spread of that
//! belief grows by `tau^2` per performed measurement and collapses to zero
//! when the value is recomputed. A round recomputes a candidate only while
//! the expected improvement of the next choice from doing so exceeds the
//! computation cost `c_v`.

use crate::error::{Error, Result};
use crate::quadrature::{normal_cdf, normal_pdf};
use crate::voi::VoiEstimate;

/// Online estimate of the per-measurement drift variance `tau^2`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TauLearner {
    sum_sq_drift: f64,
    sample_count: usize,
}

impl TauLearner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the change of a value that was last computed
    /// `measurements_since` measurements ago. Drift over `n` steps has
    /// variance `n * tau^2`, so `drift^2 / n` is one sample of `tau^2`.
    pub fn observe(&mut self, old: f64, new: f64, measurements_since: usize) {
        if measurements_since == 0 {
            return;
        }
        let d = new - old;
        self.sum_sq_drift += d * d / measurements_since as f64;
        self.sample_count += 1;
    }

    pub fn tau_sq(&self) -> f64 {
        if self.sample_count == 0 {
            0.0
        } else {
            self.sum_sq_drift / self.sample_count as f64
        }
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateBelief {
    pub last_net: f64,
    pub last_intrinsic: f64,
    /// Standard deviation of the belief about the current value.
    pub sigma: f64,
    pub measurements_since: usize,
}

impl CandidateBelief {
    fn fresh(est: &VoiEstimate) -> Self {
        Self {
            last_net: est.net,
            last_intrinsic: est.intrinsic,
            sigma: 0.0,
            measurements_since: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoiBeliefState {
    entries: Vec<CandidateBelief>,
    tau: TauLearner,
    recompute_cost: f64,
    recompute_count: usize,
}

impl VoiBeliefState {
    /// Computes every candidate's VOI once; each call counts as a recomputation.
    pub fn initialize<F>(candidates: usize, recompute_cost: f64, mut oracle: F) -> Result<Self>
    where
        F: FnMut(usize) -> VoiEstimate,
    {
        if !(recompute_cost > 0.0) {
            return Err(Error::invalid(
                "c_v",
                format!("must be > 0, got {recompute_cost}"),
            ));
        }
        let entries = (0..candidates)
            .map(|j| CandidateBelief::fresh(&oracle(j)))
            .collect();
        Ok(Self {
            entries,
            tau: TauLearner::new(),
            recompute_cost,
            recompute_count: candidates,
        })
    }

    /// State from explicit entries, with no recomputations counted.
    pub fn from_entries(
        entries: Vec<CandidateBelief>,
        tau: TauLearner,
        recompute_cost: f64,
    ) -> Result<Self> {
        if !(recompute_cost > 0.0) {
            return Err(Error::invalid(
                "c_v",
                format!("must be > 0, got {recompute_cost}"),
            ));
        }
        if entries.iter().any(|e| !(e.sigma >= 0.0)) {
            return Err(Error::invalid("sigma", "must be >= 0"));
        }
        Ok(Self {
            entries,
            tau,
            recompute_cost,
            recompute_count: 0,
        })
    }

    pub fn entries(&self) -> &[CandidateBelief] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tau(&self) -> &TauLearner {
        &self.tau
    }

    pub fn recompute_cost(&self) -> f64 {
        self.recompute_cost
    }

    pub fn recompute_count(&self) -> usize {
        self.recompute_count
    }

    /// Adds the current `tau^2` to every tracked variance. Call once per
    /// performed measurement.
    ///
    /// Before the learner has seen a single drift sample there is no model of
    /// how much a value moves, so stale values become completely uncertain
    /// (`sigma = inf`) until recomputed.
    pub fn inflate_all(&mut self) {
        let learned = self.tau.sample_count() > 0;
        let tau_sq = self.tau.tau_sq();
        for e in &mut self.entries {
            e.sigma = if learned {
                (e.sigma * e.sigma + tau_sq).sqrt()
            } else {
                f64::INFINITY
            };
            e.measurements_since += 1;
        }
    }

    fn recompute<F>(&mut self, j: usize, oracle: &mut F) -> f64
    where
        F: FnMut(usize) -> VoiEstimate,
    {
        let est = oracle(j);
        self.recompute_count += 1;
        let e = &mut self.entries[j];
        self.tau.observe(e.last_net, est.net, e.measurements_since);
        *e = CandidateBelief::fresh(&est);
        est.net
    }
}

/// Value the comparison for candidate `k` is made against: the best other
/// value when `k` is the current argmax (lowest index among ties), the best
/// value otherwise.
pub fn select_gamma(values: &[f64], k: usize) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::Degenerate(
            "at least two candidates are needed to compare against".into(),
        ));
    }
    if k >= values.len() {
        return Err(Error::invalid("k", "candidate index out of range"));
    }
    let top = TopTwo::of(values);
    Ok(top.gamma(k))
}

#[derive(Debug, Clone, Copy)]
struct TopTwo {
    best_index: usize,
    best: f64,
    second: f64,
}

impl TopTwo {
    fn of(values: &[f64]) -> Self {
        let mut best_index = 0;
        let mut best = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        for (j, &v) in values.iter().enumerate() {
            if v > best {
                second = best;
                best = v;
                best_index = j;
            } else if v > second {
                second = v;
            }
        }
        Self {
            best_index,
            best,
            second,
        }
    }

    fn gamma(&self, k: usize) -> f64 {
        if k == self.best_index {
            self.second
        } else {
            self.best
        }
    }
}

/// Expected gain from recomputing a value believed to be `N(v_k, sigma_k^2)`
/// when the decision hinges on whether it crosses `v_gamma`, minus `c_v`.
pub fn recompute_value(v_k: f64, sigma_k: f64, v_gamma: f64, c_v: f64) -> f64 {
    if !(sigma_k > 0.0) {
        return -c_v;
    }
    if sigma_k.is_infinite() {
        return f64::INFINITY;
    }
    let delta = (v_gamma - v_k).abs();
    sigma_k * crossing_gain(delta / sigma_k) - c_v
}

/// `phi(t) - t * Phi(-t)` for `t >= 0`, i.e. `E[max(Z - t, 0)]`.
fn crossing_gain(t: f64) -> f64 {
    if t <= 4.0 {
        return (normal_pdf(t) - t * normal_cdf(-t)).max(0.0);
    }
    // Mills-ratio continued fraction avoids cancellation in the tail:
    // phi(t) - t Phi(-t) = phi(t) / (1 + t D), D = t + 2/(t + 3/(t + ...)).
    let mut d = t;
    for k in (2..=60).rev() {
        d = t + k as f64 / d;
    }
    normal_pdf(t) / (1.0 + t * d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundOutcome {
    /// Candidate chosen for the next measurement.
    pub chosen: usize,
    /// Its net value after the final recomputation (0 when out of budget).
    pub net: f64,
}

/// One selection round. Out-of-budget candidates count as `V = 0, sigma = 0`.
/// Candidates are recomputed in order of decreasing `W_k` until no `W_k` is
/// positive; then the argmax of the current values is recomputed once more
/// and returned.
pub fn recomputation_round<F>(
    state: &mut VoiBeliefState,
    in_budget: &[bool],
    mut oracle: F,
) -> Result<RoundOutcome>
where
    F: FnMut(usize) -> VoiEstimate,
{
    let n = state.len();
    if n == 0 {
        return Err(Error::Degenerate("empty candidate set".into()));
    }
    if in_budget.len() != n {
        return Err(Error::invalid(
            "in_budget",
            "length differs from candidate count",
        ));
    }
    let c_v = state.recompute_cost;
    let mut values = vec![0.0; n];
    for j in 0..n {
        if in_budget[j] {
            values[j] = state.entries[j].last_net;
        } else {
            state.entries[j].sigma = 0.0;
        }
    }

    if n >= 2 {
        loop {
            let top = TopTwo::of(&values);
            let mut k_max = 0;
            let mut w_max = f64::NEG_INFINITY;
            for k in 0..n {
                let w = if in_budget[k] {
                    recompute_value(values[k], state.entries[k].sigma, top.gamma(k), c_v)
                } else {
                    0.0
                };
                if w > w_max {
                    w_max = w;
                    k_max = k;
                }
            }
            if w_max <= 0.0 {
                break;
            }
            values[k_max] = state.recompute(k_max, &mut oracle);
        }
    }

    let chosen = TopTwo::of(&values).best_index;
    let net = if in_budget[chosen] {
        state.recompute(chosen, &mut oracle)
    } else {
        0.0
    };
    Ok(RoundOutcome { chosen, net })
}
