//! Benchmark problems, the measurement simulator and replicated experiments.

use std::f64::consts::{E, PI};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::belief::{MeasurementType, Problem, ProblemParams, UtilityFn};
use crate::error::{Error, Result};
use crate::policy::{run_greedy, run_random, run_rational, Trace};
use crate::quadrature::DEFAULT_NODES;
use crate::voi::{Candidate, Scheme};

/// Two-argument Ackley function, peaked at the origin with value `20 + e`.
pub fn ackley(x: f64, y: f64) -> f64 {
    20.0 * (-0.2 * ((x * x + y * y) / 2.0).sqrt()).exp()
        + (((2.0 * PI * x).cos() + (2.0 * PI * y).cos()) / 2.0).exp()
}

pub const ACKLEY_PEAK: f64 = 20.0 + E;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    Greedy,
    Rational,
    Random,
}

impl Selector {
    pub fn name(&self) -> &'static str {
        match self {
            Selector::Greedy => "greedy",
            Selector::Rational => "rational",
            Selector::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "greedy" => Some(Selector::Greedy),
            "rational" => Some(Selector::Rational),
            "random" => Some(Selector::Random),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    Ackley {
        x_range: (f64, f64),
        y_range: (f64, f64),
        step: f64,
        /// Subtracted from every Ackley value to give the item value.
        value_offset: f64,
    },
    Table {
        path: String,
    },
}

impl ProblemSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::Ackley { .. } => "ackley",
            ProblemSpec::Table { .. } => "table",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub noise_variance: f64,
    pub cost: f64,
    pub dependency_variance: f64,
    pub anchor_variance: f64,
    pub anchor_mean: f64,
    pub budget: f64,
    pub utility: UtilityFn,
    pub scheme: Scheme,
    pub selector: Selector,
    pub c_v: Option<f64>,
    /// Explicit measurement count for the random selector; otherwise taken
    /// from a paired rational run.
    pub random_measurements: Option<usize>,
    pub replications: usize,
    pub seed: u64,
    pub quadrature_nodes: usize,
}

impl ExperimentConfig {
    /// Ackley defaults: `tanh(2z)` utility, noise variance 0.5, cost 0.01,
    /// neighbour variance 0.5, grid step 0.2 on `[-2, 2]^2`.
    pub fn ackley() -> Self {
        Self {
            problem: ProblemSpec::Ackley {
                x_range: (-2.0, 2.0),
                y_range: (-2.0, 2.0),
                step: 0.2,
                value_offset: 0.0,
            },
            noise_variance: 0.5,
            cost: 0.01,
            dependency_variance: 0.5,
            anchor_variance: 1.0,
            anchor_mean: 0.0,
            budget: 1.0,
            utility: UtilityFn::Tanh {
                scale: 2.0,
                shift: 0.0,
            },
            scheme: Scheme::Myopic,
            selector: Selector::Greedy,
            c_v: None,
            random_measurements: None,
            replications: 100,
            seed: 0,
            quadrature_nodes: DEFAULT_NODES,
        }
    }

    /// A smaller Ackley instance that runs a full experiment in seconds: a
    /// 9×9 grid on `[-1, 1]^2` (step 0.25, so the origin is a node) with
    /// values shifted down by 21.5. Only the central peak then has a clearly
    /// positive utility, so finding it is what separates good selectors from
    /// poor ones. The full-size default is saturated: `tanh(2z)` of any raw
    /// Ackley value is 1 to within rounding.
    pub fn ackley_desk() -> Self {
        Self {
            problem: ProblemSpec::Ackley {
                x_range: (-1.0, 1.0),
                y_range: (-1.0, 1.0),
                step: 0.25,
                value_offset: 21.5,
            },
            ..Self::ackley()
        }
    }

    /// Tabulated-surface defaults: `tanh(4(z - 0.5))` utility, noise
    /// variance 0.25, cost 0.01, neighbour variance 0.4.
    pub fn table(path: impl Into<String>) -> Self {
        Self {
            problem: ProblemSpec::Table { path: path.into() },
            noise_variance: 0.25,
            cost: 0.01,
            dependency_variance: 0.4,
            anchor_mean: 0.5,
            utility: UtilityFn::Tanh {
                scale: 4.0,
                shift: 0.5,
            },
            ..Self::ackley()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("noise_variance", self.noise_variance),
            ("cost", self.cost),
            ("dependency_variance", self.dependency_variance),
            ("anchor_variance", self.anchor_variance),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(
                    key,
                    format!("must be a finite number > 0, got {v}"),
                ));
            }
        }
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return Err(Error::config(
                "budget",
                format!("must be >= 0, got {}", self.budget),
            ));
        }
        if !self.anchor_mean.is_finite() {
            return Err(Error::config("anchor_mean", "must be finite"));
        }
        if self.replications == 0 {
            return Err(Error::config("replications", "must be >= 1"));
        }
        if self.quadrature_nodes == 0 {
            return Err(Error::config("quadrature_nodes", "must be >= 1"));
        }
        if let Some(c) = self.c_v {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config("c_v", format!("must be > 0, got {c}")));
            }
        }
        if let Scheme::Blinkered { max_batch: Some(0) } = self.scheme {
            return Err(Error::config("max_batch", "must be >= 1"));
        }
        if let UtilityFn::Tanh { scale, shift } = self.utility {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::config(
                    "utility_scale",
                    format!("must be > 0, got {scale}"),
                ));
            }
            if !shift.is_finite() {
                return Err(Error::config("utility_shift", "must be finite"));
            }
        }
        match self.selector {
            Selector::Rational if self.c_v.is_none() => {
                return Err(Error::config("c_v", "the rational selector needs a computation cost"))
            }
            Selector::Random if self.c_v.is_none() && self.random_measurements.is_none() => {
                return Err(Error::config(
                    "random_measurements",
                    "the random selector needs either random_measurements or c_v for a paired rational run",
                ))
            }
            _ => {}
        }
        if let ProblemSpec::Ackley {
            x_range,
            y_range,
            step,
            value_offset,
        } = &self.problem
        {
            if !(*step > 0.0 && step.is_finite()) {
                return Err(Error::config("step", format!("must be > 0, got {step}")));
            }
            axis_count(*x_range, *step, "x_max")?;
            axis_count(*y_range, *step, "y_max")?;
            if !value_offset.is_finite() {
                return Err(Error::config("value_offset", "must be finite"));
            }
        }
        Ok(())
    }

    fn params(&self) -> Result<ProblemParams> {
        Ok(ProblemParams {
            measurement_types: vec![MeasurementType::new(self.cost, self.noise_variance)?],
            utility: self.utility,
            budget: self.budget,
            dependency_variance: self.dependency_variance,
            anchor_variance: self.anchor_variance,
            anchor_mean: self.anchor_mean,
            quadrature_nodes: self.quadrature_nodes,
        })
    }

    pub fn build_problem(&self) -> Result<Problem> {
        match &self.problem {
            ProblemSpec::Ackley { .. } => make_ackley_problem(self),
            ProblemSpec::Table { path } => load_table_problem(path, self),
        }
    }
}

/// Number of grid nodes on `[lo, hi]` with spacing `step`; the extent must
/// be a whole number of steps.
fn axis_count(range: (f64, f64), step: f64, key: &str) -> Result<usize> {
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && hi >= lo) {
        return Err(Error::config(key, format!("invalid range [{lo}, {hi}]")));
    }
    let steps = (hi - lo) / step;
    let rounded = steps.round();
    if (steps - rounded).abs() > 1e-6 {
        return Err(Error::config(
            key,
            format!("range [{lo}, {hi}] is not a whole number of steps of {step}"),
        ));
    }
    Ok(rounded as usize + 1)
}

pub fn make_ackley_problem(config: &ExperimentConfig) -> Result<Problem> {
    let ProblemSpec::Ackley {
        x_range,
        y_range,
        step,
        value_offset,
    } = config.problem
    else {
        return Err(Error::config("problem", "not an Ackley problem"));
    };
    config.validate()?;
    let cols = axis_count(x_range, step, "x_max")?;
    let rows = axis_count(y_range, step, "y_max")?;
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = ackley_node(x_range.0, y_range.0, step, r, c);
            values.push(ackley(x, y) - value_offset);
        }
    }
    Problem::on_grid(
        (rows, cols),
        (x_range.0, y_range.0),
        (step, step),
        values,
        config.params()?,
    )
}

/// Coordinates of grid node `(row, col)`, computed from the integer offset
/// so that symmetric nodes get exactly symmetric coordinates.
fn ackley_node(x0: f64, y0: f64, step: f64, row: usize, col: usize) -> (f64, f64) {
    (x0 + col as f64 * step, y0 + row as f64 * step)
}

/// Parses a whitespace-separated, row-major numeric grid. Blank lines are
/// skipped; rows and columns in errors are 1-based line and field numbers.
pub fn parse_table(text: &str) -> Result<(usize, usize, Vec<f64>)> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    let mut last_line = 0;
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        last_line = line_no + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for (field_no, field) in line.split_whitespace().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::TableFormat {
                row: line_no + 1,
                col: field_no + 1,
                reason: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::TableFormat {
                    row: line_no + 1,
                    col: field_no + 1,
                    reason: format!("`{field}` is not finite"),
                });
            }
            values.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(Error::TableFormat {
                    row: line_no + 1,
                    col: count.min(c) + 1,
                    reason: format!("expected {c} columns, found {count}"),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    match cols {
        Some(c) => Ok((rows, c, values)),
        None => Err(Error::TableFormat {
            row: last_line.max(1),
            col: 1,
            reason: "table is empty".into(),
        }),
    }
}

/// Loads a tabulated objective surface. Node `(r, c)` sits at coordinates
/// `(c + 1, r + 1)`.
pub fn load_table_problem(path: impl AsRef<Path>, config: &ExperimentConfig) -> Result<Problem> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    table_problem(&text, config)
}

pub fn table_problem(text: &str, config: &ExperimentConfig) -> Result<Problem> {
    let (rows, cols, values) = parse_table(text)?;
    Problem::on_grid(
        (rows, cols),
        (1.0, 1.0),
        (1.0, 1.0),
        values,
        config.params()?,
    )
}

/// One noisy observation of the candidate's item: the true value plus a
/// single normal draw scaled by the type's noise.
pub fn simulate_measurement<R: Rng + ?Sized>(
    problem: &Problem,
    candidate: Candidate,
    rng: &mut R,
) -> f64 {
    let mtype = &problem.measurement_types[candidate.type_index];
    let z: f64 = rng.sample(StandardNormal);
    problem.true_value(candidate.item_index) + mtype.noise_variance.sqrt() * z
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self::default();
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentStats {
    pub reward: MeanSd,
    pub intrinsic_utility: MeanSd,
    pub total_cost: MeanSd,
    pub recomputes: MeanSd,
    pub replications: usize,
}

impl ExperimentStats {
    pub fn from_traces(traces: &[Trace]) -> Self {
        let col = |f: fn(&Trace) -> f64| traces.iter().map(f).collect::<Vec<_>>();
        Self {
            reward: MeanSd::of(&col(|t| t.reward)),
            intrinsic_utility: MeanSd::of(&col(|t| t.intrinsic_utility)),
            total_cost: MeanSd::of(&col(|t| t.total_cost)),
            recomputes: MeanSd::of(&col(|t| t.recompute_count as f64)),
            replications: traces.len(),
        }
    }
}

/// Runs one episode of `selector` on `problem`.
pub fn run_episode(problem: &Problem, config: &ExperimentConfig, seed: u64) -> Result<Trace> {
    match config.selector {
        Selector::Greedy => run_greedy(problem, config.scheme, seed),
        Selector::Rational => {
            let c_v = config.c_v.ok_or_else(|| {
                Error::config("c_v", "the rational selector needs a computation cost")
            })?;
            run_rational(problem, config.scheme, c_v, seed)
        }
        Selector::Random => {
            let n = match (config.random_measurements, config.c_v) {
                (Some(n), _) => n,
                (None, Some(c_v)) => run_rational(problem, config.scheme, c_v, seed)?.measurement_count(),
                (None, None) => {
                    return Err(Error::config(
                        "random_measurements",
                        "the random selector needs either random_measurements or c_v for a paired rational run",
                    ))
                }
            };
            run_random(problem, n, seed)
        }
    }
}

/// All replications of an experiment; replication `i` uses seed `seed + i`.
pub fn run_traces(config: &ExperimentConfig) -> Result<Vec<Trace>> {
    config.validate()?;
    let problem = config.build_problem()?;
    (0..config.replications as u64)
        .map(|i| run_episode(&problem, config, config.seed.wrapping_add(i)))
        .collect()
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentStats> {
    Ok(ExperimentStats::from_traces(&run_traces(config)?))
}
