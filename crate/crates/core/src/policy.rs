//! Complete selection episodes: the greedy VOI loop, its variant with
//! selective VOI recomputation, and a random-measurement baseline.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::belief::{GaussianBelief, Problem};
use crate::bench::simulate_measurement;
use crate::error::{Error, Result};
use crate::metareasoning::{recomputation_round, VoiBeliefState};
use crate::quadrature::{CompensatedSum, GaussHermite};
use crate::voi::{expected_utilities, Candidate, Scheme, VoiEstimate, VoiEvaluator};

#[derive(Debug, Clone, PartialEq)]
pub struct PerformedMeasurement {
    pub candidate: Candidate,
    pub observation: f64,
    pub cost: f64,
}

/// Record of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub performed: Vec<PerformedMeasurement>,
    pub total_cost: f64,
    pub selected: usize,
    pub reward: f64,
    pub intrinsic_utility: f64,
    pub recompute_count: usize,
    pub seed: u64,
}

impl Trace {
    pub fn measurement_count(&self) -> usize {
        self.performed.len()
    }

    pub fn items_measured(&self) -> Vec<usize> {
        self.performed
            .iter()
            .map(|m| m.candidate.item_index)
            .collect()
    }
}

/// Mutable state shared by all three policies.
struct Episode<'a> {
    problem: &'a Problem,
    candidates: Vec<Candidate>,
    gh: GaussHermite,
    belief: GaussianBelief,
    expected: Vec<f64>,
    spent: CompensatedSum,
    observations: ChaCha8Rng,
    performed: Vec<PerformedMeasurement>,
    seed: u64,
}

impl<'a> Episode<'a> {
    fn new(problem: &'a Problem, seed: u64) -> Result<Self> {
        let gh = problem.quadrature();
        let belief = problem.prior()?;
        let expected = expected_utilities(&belief, &problem.utility, &gh);
        Ok(Self {
            problem,
            candidates: problem.candidates(),
            gh,
            belief,
            expected,
            spent: CompensatedSum::new(),
            observations: ChaCha8Rng::seed_from_u64(seed),
            performed: Vec::new(),
            seed,
        })
    }

    fn affordable(&self) -> Vec<bool> {
        self.candidates
            .iter()
            .map(|&c| self.spent.peek_add(self.problem.candidate_cost(c)) <= self.problem.budget)
            .collect()
    }

    fn remaining_budget(&self) -> f64 {
        self.problem.budget - self.spent.value()
    }

    fn estimate(&self, j: usize, scheme: &Scheme) -> VoiEstimate {
        let c = self.candidates[j];
        VoiEvaluator::with_expected(
            &self.belief,
            &self.problem.utility,
            &self.gh,
            &self.expected,
        )
        .estimate(
            scheme,
            c.item_index,
            &self.problem.measurement_types[c.type_index],
            self.remaining_budget(),
        )
    }

    fn measure(&mut self, j: usize) {
        let c = self.candidates[j];
        let mtype = self.problem.measurement_types[c.type_index];
        let y = simulate_measurement(self.problem, c, &mut self.observations);
        self.belief
            .update_in_place(c.item_index, y, mtype.noise_variance);
        self.expected = expected_utilities(&self.belief, &self.problem.utility, &self.gh);
        self.spent.add(mtype.cost);
        self.performed.push(PerformedMeasurement {
            candidate: c,
            observation: y,
            cost: mtype.cost,
        });
    }

    fn finish(self, recompute_count: usize) -> Trace {
        let (selected, _) = self.belief.best_item(&self.problem.utility, &self.gh);
        let intrinsic_utility = self.problem.true_utility(selected);
        let total_cost = self.spent.value();
        Trace {
            performed: self.performed,
            total_cost,
            selected,
            reward: intrinsic_utility - total_cost,
            intrinsic_utility,
            recompute_count,
            seed: self.seed,
        }
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = j;
        }
    }
    best
}

/// Greedy selection: every step recomputes the VOI of every affordable
/// candidate and performs the best one while its net value is positive.
pub fn run_greedy(problem: &Problem, scheme: Scheme, seed: u64) -> Result<Trace> {
    let mut ep = Episode::new(problem, seed)?;
    let mut recomputes = 0;
    loop {
        let affordable = ep.affordable();
        let values: Vec<f64> = (0..ep.candidates.len())
            .map(|j| {
                if affordable[j] {
                    recomputes += 1;
                    ep.estimate(j, &scheme).net
                } else {
                    0.0
                }
            })
            .collect();
        let j_max = argmax(&values);
        if values[j_max] > 0.0 {
            ep.measure(j_max);
        } else {
            break;
        }
    }
    Ok(ep.finish(recomputes))
}

/// Greedy selection where each step's candidate scoring is a
/// [`recomputation_round`] with computation cost `c_v`.
pub fn run_rational(problem: &Problem, scheme: Scheme, c_v: f64, seed: u64) -> Result<Trace> {
    if !(c_v > 0.0) {
        return Err(Error::invalid("c_v", format!("must be > 0, got {c_v}")));
    }
    let mut ep = Episode::new(problem, seed)?;
    let mut state =
        VoiBeliefState::initialize(ep.candidates.len(), c_v, |j| ep.estimate(j, &scheme))?;
    loop {
        let affordable = ep.affordable();
        let outcome = recomputation_round(&mut state, &affordable, |j| ep.estimate(j, &scheme))?;
        if affordable[outcome.chosen] && outcome.net > 0.0 {
            ep.measure(outcome.chosen);
            state.inflate_all();
        } else {
            break;
        }
    }
    Ok(ep.finish(state.recompute_count()))
}

/// Performs up to `n_measurements` uniformly random affordable measurements,
/// then selects the best item under the resulting belief.
pub fn run_random(problem: &Problem, n_measurements: usize, seed: u64) -> Result<Trace> {
    let mut ep = Episode::new(problem, seed)?;
    let mut choices = ChaCha8Rng::seed_from_u64(seed);
    choices.set_stream(1);
    for _ in 0..n_measurements {
        let affordable = ep.affordable();
        let open: Vec<usize> = (0..ep.candidates.len())
            .filter(|&j| affordable[j])
            .collect();
        match open.choose(&mut choices) {
            Some(&j) => ep.measure(j),
            None => break,
        }
    }
    Ok(ep.finish(0))
}
