//! Configuration parsing and the `run` / `sweep` commands behind the binary.
//!
//! Configuration is a flat TOML table. `problem` picks the default set
//! (`ackley`, `desk` or `table`); every other key overrides one field.

use std::io::Write;
use std::path::Path;

use toml::{Table, Value};

use crate::belief::UtilityFn;
use crate::bench::{run_episode, ExperimentConfig, ExperimentStats, ProblemSpec, Selector};
use crate::error::{Error, Result};
use crate::policy::{run_random, run_rational, Trace};
use crate::voi::Scheme;

pub const CSV_HEADER: &str = "problem,scheme,selector,c_v,replications,mean_reward,sd_reward,\
mean_intrinsic,sd_intrinsic,mean_cost,sd_cost,mean_recomputes,sd_recomputes";

const CONFIG_KEYS: &[&str] = &[
    "problem",
    "table_path",
    "x_min",
    "x_max",
    "y_min",
    "y_max",
    "step",
    "value_offset",
    "noise_variance",
    "cost",
    "dependency_variance",
    "anchor_variance",
    "anchor_mean",
    "budget",
    "utility",
    "utility_scale",
    "utility_shift",
    "scheme",
    "max_batch",
    "selector",
    "c_v",
    "random_measurements",
    "replications",
    "seed",
    "quadrature_nodes",
];

const SWEEP_KEYS: &[&str] = &["selectors", "c_v_values", "c_v_min", "c_v_max", "c_v_count"];

/// Reads an optional TOML file and applies `key=value` overrides on top.
/// Override values are parsed as TOML scalars, falling back to bare strings.
pub fn load_table(file: Option<&Path>, overrides: &[String]) -> Result<Table> {
    let mut table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            text.parse::<Table>()
                .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?
        }
        None => Table::new(),
    };
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::config(item.as_str(), "override must look like key=value"))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        table.insert(key.to_string(), value);
    }
    Ok(table)
}

fn number(table: &Table, key: &str) -> Result<Option<f64>> {
    match table.get(key) {
        None => Ok(None),
        Some(Value::Float(v)) => Ok(Some(*v)),
        Some(Value::Integer(v)) => Ok(Some(*v as f64)),
        Some(other) => Err(Error::config(
            key,
            format!("expected a number, got {other}"),
        )),
    }
}

fn count(table: &Table, key: &str) -> Result<Option<u64>> {
    match table.get(key) {
        None => Ok(None),
        Some(Value::Integer(v)) if *v >= 0 => Ok(Some(*v as u64)),
        Some(other) => Err(Error::config(
            key,
            format!("expected a non-negative integer, got {other}"),
        )),
    }
}

fn text<'t>(table: &'t Table, key: &str) -> Result<Option<&'t str>> {
    match table.get(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(Error::config(
            key,
            format!("expected a string, got {other}"),
        )),
    }
}

fn reject_unknown(table: &Table, allowed: &[&[&str]]) -> Result<()> {
    for key in table.keys() {
        if !allowed.iter().any(|set| set.contains(&key.as_str())) {
            return Err(Error::config(key.as_str(), "unknown key"));
        }
    }
    Ok(())
}

/// Builds a validated [`ExperimentConfig`] from a flat table.
pub fn parse_config(table: &Table) -> Result<ExperimentConfig> {
    reject_unknown(table, &[CONFIG_KEYS])?;
    config_from(table)
}

fn config_from(table: &Table) -> Result<ExperimentConfig> {
    let mut cfg = match text(table, "problem")?.unwrap_or("ackley") {
        "ackley" => ExperimentConfig::ackley(),
        "desk" => ExperimentConfig::ackley_desk(),
        "table" => {
            let path = text(table, "table_path")?
                .ok_or_else(|| Error::config("table_path", "required when problem = \"table\""))?;
            ExperimentConfig::table(path)
        }
        other => {
            return Err(Error::config(
                "problem",
                format!("expected one of ackley, desk, table; got `{other}`"),
            ))
        }
    };

    match &mut cfg.problem {
        ProblemSpec::Ackley {
            x_range,
            y_range,
            step,
            value_offset,
        } => {
            if table.contains_key("table_path") {
                return Err(Error::config(
                    "table_path",
                    "only valid when problem = \"table\"",
                ));
            }
            set(&mut x_range.0, number(table, "x_min")?);
            set(&mut x_range.1, number(table, "x_max")?);
            set(&mut y_range.0, number(table, "y_min")?);
            set(&mut y_range.1, number(table, "y_max")?);
            set(step, number(table, "step")?);
            set(value_offset, number(table, "value_offset")?);
        }
        ProblemSpec::Table { .. } => {
            for key in ["x_min", "x_max", "y_min", "y_max", "step", "value_offset"] {
                if table.contains_key(key) {
                    return Err(Error::config(key, "only valid for Ackley problems"));
                }
            }
        }
    }

    set(&mut cfg.noise_variance, number(table, "noise_variance")?);
    set(&mut cfg.cost, number(table, "cost")?);
    set(
        &mut cfg.dependency_variance,
        number(table, "dependency_variance")?,
    );
    set(&mut cfg.anchor_variance, number(table, "anchor_variance")?);
    set(&mut cfg.anchor_mean, number(table, "anchor_mean")?);
    set(&mut cfg.budget, number(table, "budget")?);

    let (mut scale, mut shift) = match cfg.utility {
        UtilityFn::Tanh { scale, shift } => (scale, shift),
        UtilityFn::Identity => (1.0, 0.0),
    };
    set(&mut scale, number(table, "utility_scale")?);
    set(&mut shift, number(table, "utility_shift")?);
    let kind = match text(table, "utility")? {
        Some(k) => k,
        None => match cfg.utility {
            UtilityFn::Identity => "identity",
            UtilityFn::Tanh { .. } => "tanh",
        },
    };
    cfg.utility = match kind {
        "tanh" => UtilityFn::Tanh { scale, shift },
        "identity" => {
            for key in ["utility_scale", "utility_shift"] {
                if table.contains_key(key) {
                    return Err(Error::config(key, "only valid with utility = \"tanh\""));
                }
            }
            UtilityFn::Identity
        }
        other => {
            return Err(Error::config(
                "utility",
                format!("expected tanh or identity, got `{other}`"),
            ))
        }
    };

    let max_batch = count(table, "max_batch")?.map(|n| n as usize);
    cfg.scheme = match text(table, "scheme")?.unwrap_or("myopic") {
        "myopic" if max_batch.is_some() => {
            return Err(Error::config(
                "max_batch",
                "only valid with scheme = \"blinkered\"",
            ))
        }
        "myopic" => Scheme::Myopic,
        "blinkered" => Scheme::Blinkered { max_batch },
        other => {
            return Err(Error::config(
                "scheme",
                format!("expected myopic or blinkered, got `{other}`"),
            ))
        }
    };

    if let Some(s) = text(table, "selector")? {
        cfg.selector = Selector::parse(s).ok_or_else(|| {
            Error::config(
                "selector",
                format!("expected greedy, rational or random, got `{s}`"),
            )
        })?;
    }
    if let Some(c) = number(table, "c_v")? {
        cfg.c_v = Some(c);
    }
    if let Some(n) = count(table, "random_measurements")? {
        cfg.random_measurements = Some(n as usize);
    }
    if let Some(n) = count(table, "replications")? {
        cfg.replications = n as usize;
    }
    if let Some(s) = count(table, "seed")? {
        cfg.seed = s;
    }
    if let Some(n) = count(table, "quadrature_nodes")? {
        cfg.quadrature_nodes = n as usize;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn set(field: &mut f64, value: Option<f64>) {
    if let Some(v) = value {
        *field = v;
    }
}

/// The effective configuration as TOML; [`parse_config`] reads it back to
/// an equal value.
pub fn emit_config(cfg: &ExperimentConfig) -> String {
    let mut t = Table::new();
    let float = |v: f64| Value::Float(v);
    match &cfg.problem {
        ProblemSpec::Ackley {
            x_range,
            y_range,
            step,
            value_offset,
        } => {
            t.insert("problem".into(), "ackley".into());
            t.insert("x_min".into(), float(x_range.0));
            t.insert("x_max".into(), float(x_range.1));
            t.insert("y_min".into(), float(y_range.0));
            t.insert("y_max".into(), float(y_range.1));
            t.insert("step".into(), float(*step));
            t.insert("value_offset".into(), float(*value_offset));
        }
        ProblemSpec::Table { path } => {
            t.insert("problem".into(), "table".into());
            t.insert("table_path".into(), path.as_str().into());
        }
    }
    t.insert("noise_variance".into(), float(cfg.noise_variance));
    t.insert("cost".into(), float(cfg.cost));
    t.insert("dependency_variance".into(), float(cfg.dependency_variance));
    t.insert("anchor_variance".into(), float(cfg.anchor_variance));
    t.insert("anchor_mean".into(), float(cfg.anchor_mean));
    t.insert("budget".into(), float(cfg.budget));
    match cfg.utility {
        UtilityFn::Identity => {
            t.insert("utility".into(), "identity".into());
        }
        UtilityFn::Tanh { scale, shift } => {
            t.insert("utility".into(), "tanh".into());
            t.insert("utility_scale".into(), float(scale));
            t.insert("utility_shift".into(), float(shift));
        }
    }
    t.insert("scheme".into(), cfg.scheme.name().into());
    if let Scheme::Blinkered { max_batch: Some(n) } = cfg.scheme {
        t.insert("max_batch".into(), Value::Integer(n as i64));
    }
    t.insert("selector".into(), cfg.selector.name().into());
    if let Some(c) = cfg.c_v {
        t.insert("c_v".into(), float(c));
    }
    if let Some(n) = cfg.random_measurements {
        t.insert("random_measurements".into(), Value::Integer(n as i64));
    }
    t.insert(
        "replications".into(),
        Value::Integer(cfg.replications as i64),
    );
    t.insert("seed".into(), Value::Integer(cfg.seed as i64));
    t.insert(
        "quadrature_nodes".into(),
        Value::Integer(cfg.quadrature_nodes as i64),
    );
    t.to_string()
}

/// Selectors and computation costs for a sweep. Every `(c_v, selector)`
/// cell runs on the same seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub config: ExperimentConfig,
    pub selectors: Vec<Selector>,
    pub c_values: Vec<f64>,
}

/// `count` log-spaced values from `min` to `max` inclusive.
pub fn log_space(min: f64, max: f64, count: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max >= min && max.is_finite()) {
        return Err(Error::config(
            "c_v_min",
            format!("need 0 < c_v_min <= c_v_max, got [{min}, {max}]"),
        ));
    }
    if count < 2 {
        return Err(Error::config(
            "c_v_count",
            format!("must be >= 2, got {count}"),
        ));
    }
    let (a, b) = (min.ln(), max.ln());
    Ok((0..count)
        .map(|i| {
            if i + 1 == count {
                max
            } else {
                (a + (b - a) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect())
}

/// Reads a sweep. Computation costs are given relative to the measurement
/// cost, either as `c_v_values` or as a `c_v_min..c_v_max` log range with
/// `c_v_count` points (default 8 points over `[1e-5, 1e-1]`).
pub fn parse_sweep(table: &Table) -> Result<SweepSpec> {
    reject_unknown(table, &[CONFIG_KEYS, SWEEP_KEYS])?;
    let mut base = table.clone();
    for key in SWEEP_KEYS {
        base.remove(*key);
    }
    // Individual cells supply their own c_v, so the base config must not
    // demand one.
    base.remove("selector");
    let mut config = config_from(&base)?;
    if table.contains_key("selector") {
        return Err(Error::config("selector", "use `selectors` in a sweep"));
    }
    config.selector = Selector::Greedy;

    let selectors = match table.get("selectors") {
        None => vec![Selector::Greedy, Selector::Rational, Selector::Random],
        Some(Value::Array(items)) if !items.is_empty() => items
            .iter()
            .map(|v| {
                v.as_str().and_then(Selector::parse).ok_or_else(|| {
                    Error::config(
                        "selectors",
                        format!("expected greedy, rational or random, got {v}"),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?,
        Some(other) => {
            return Err(Error::config(
                "selectors",
                format!("expected a non-empty list of selector names, got {other}"),
            ))
        }
    };

    let relative = match table.get("c_v_values") {
        Some(_) if SWEEP_KEYS[2..].iter().any(|k| table.contains_key(*k)) => {
            return Err(Error::config(
                "c_v_values",
                "give either a list or a range, not both",
            ))
        }
        Some(Value::Array(items)) if !items.is_empty() => items
            .iter()
            .map(|v| match v {
                Value::Float(x) if *x > 0.0 && x.is_finite() => Ok(*x),
                Value::Integer(x) if *x > 0 => Ok(*x as f64),
                _ => Err(Error::config(
                    "c_v_values",
                    format!("values must be > 0, got {v}"),
                )),
            })
            .collect::<Result<Vec<_>>>()?,
        Some(other) => {
            return Err(Error::config(
                "c_v_values",
                format!("expected a non-empty list of numbers, got {other}"),
            ))
        }
        None => log_space(
            number(table, "c_v_min")?.unwrap_or(1e-5),
            number(table, "c_v_max")?.unwrap_or(1e-1),
            count(table, "c_v_count")?.unwrap_or(8) as usize,
        )?,
    };
    Ok(SweepSpec {
        c_values: relative.iter().map(|r| r * config.cost).collect(),
        selectors,
        config,
    })
}

/// One output line: the aggregated metrics of a `(c_v, selector)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub problem: &'static str,
    pub scheme: &'static str,
    pub selector: Selector,
    pub c_v: Option<f64>,
    pub stats: ExperimentStats,
}

impl Row {
    fn new(cfg: &ExperimentConfig, selector: Selector, c_v: Option<f64>, traces: &[Trace]) -> Self {
        Self {
            problem: cfg.problem.name(),
            scheme: cfg.scheme.name(),
            selector,
            c_v,
            stats: ExperimentStats::from_traces(traces),
        }
    }

    pub fn to_csv(&self) -> String {
        let s = &self.stats;
        let c_v = self.c_v.map(|c| c.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.problem,
            self.scheme,
            self.selector.name(),
            c_v,
            s.replications,
            s.reward.mean,
            s.reward.sd,
            s.intrinsic_utility.mean,
            s.intrinsic_utility.sd,
            s.total_cost.mean,
            s.total_cost.sd,
            s.recomputes.mean,
            s.recomputes.sd
        )
    }
}

fn seeds(cfg: &ExperimentConfig) -> impl Iterator<Item = u64> + '_ {
    (0..cfg.replications as u64).map(|i| cfg.seed.wrapping_add(i))
}

pub fn run_row(cfg: &ExperimentConfig) -> Result<Row> {
    cfg.validate()?;
    let problem = cfg.build_problem()?;
    let traces = seeds(cfg)
        .map(|s| run_episode(&problem, cfg, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(Row::new(cfg, cfg.selector, cfg.c_v, &traces))
}

/// All cells of a sweep in output order: c_v-major, then selectors in the
/// order given. Greedy traces do not depend on c_v and are computed once;
/// random cells reuse the paired rational traces for their measurement
/// counts.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<Row>> {
    let cfg = &spec.config;
    cfg.validate()?;
    let problem = cfg.build_problem()?;
    let mut greedy: Option<Vec<Trace>> = None;
    let mut rows = Vec::new();
    for &c_v in &spec.c_values {
        let mut rational: Option<Vec<Trace>> = None;
        for &selector in &spec.selectors {
            let traces = match selector {
                Selector::Greedy => {
                    if greedy.is_none() {
                        let g = seeds(cfg)
                            .map(|s| crate::policy::run_greedy(&problem, cfg.scheme, s))
                            .collect::<Result<Vec<_>>>()?;
                        greedy = Some(g);
                    }
                    greedy.clone().unwrap_or_default()
                }
                Selector::Rational | Selector::Random => {
                    if rational.is_none()
                        && (selector == Selector::Rational || cfg.random_measurements.is_none())
                    {
                        let r = seeds(cfg)
                            .map(|s| run_rational(&problem, cfg.scheme, c_v, s))
                            .collect::<Result<Vec<_>>>()?;
                        rational = Some(r);
                    }
                    if selector == Selector::Rational {
                        rational.clone().unwrap_or_default()
                    } else {
                        match (cfg.random_measurements, &rational) {
                            (Some(n), _) => seeds(cfg)
                                .map(|s| run_random(&problem, n, s))
                                .collect::<Result<Vec<_>>>()?,
                            (None, Some(paired)) => paired
                                .iter()
                                .map(|t| run_random(&problem, t.measurement_count(), t.seed))
                                .collect::<Result<Vec<_>>>()?,
                            (None, None) => unreachable!("paired rational traces computed above"),
                        }
                    }
                }
            };
            rows.push(Row::new(cfg, selector, Some(c_v), &traces));
        }
    }
    Ok(rows)
}

pub fn cmd_run(cfg: &ExperimentConfig, out: &mut impl Write) -> Result<()> {
    let row = run_row(cfg)?;
    writeln!(out, "{CSV_HEADER}")?;
    writeln!(out, "{}", row.to_csv())?;
    Ok(())
}

pub fn cmd_sweep(spec: &SweepSpec, out: &mut impl Write) -> Result<()> {
    let rows = run_sweep(spec)?;
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.to_csv())?;
    }
    Ok(())
}
