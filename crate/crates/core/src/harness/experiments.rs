//! Rate experiments.
//!
//! Each experiment maps a config to a table (one row per grid point, in grid
//! order) plus log-log fits. Clouds at grid point `g` are keyed
//! `(seed, g, θ)`; pilots use a disjoint level range. All reductions are
//! ordered, so tables are identical for any worker count.

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, ExperimentKind};
use super::fit::{fit_series, FitOutcome};
use crate::error::{Error, Result};
use crate::measure::{w2_1d, w2_exact_small, ExactSum, Functional};
use crate::mlmc::{self, mean_and_variance, EstimatorKind, EstimatorReport, LevelSchedule};
use crate::models::ModelSpec;
use crate::paths::{self, CloudKey};
use crate::simulate;

/// Level offset separating pilot clouds from measurement clouds.
const PILOT_LEVEL: u32 = 1 << 20;

/// One table cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    /// Floats carry 17 significant digits, enough to round-trip.
    pub fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => format!("{x:.16e}"),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(i) => Some(*i as f64),
            Cell::Float(x) => Some(*x),
            _ => None,
        }
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Float)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Numeric values of a column; `None` for empty or text cells.
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j].as_f64()).collect())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub kind: ExperimentKind,
    pub table: Table,
    pub fits: Vec<(String, FitOutcome)>,
    pub notes: serde_json::Map<String, serde_json::Value>,
    /// Present for `estimate`.
    #[serde(skip)]
    pub report: Option<EstimatorReport>,
}

impl Outcome {
    fn new(kind: ExperimentKind, table: Table) -> Self {
        Self {
            kind,
            table,
            fits: Vec::new(),
            notes: serde_json::Map::new(),
            report: None,
        }
    }

    pub fn fit(&self, name: &str) -> Option<&FitOutcome> {
        self.fits.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }

    /// Exact zeros in a series that is not identically zero carry no rate
    /// information and are left out of the fit; the count goes into the notes.
    fn add_fit(&mut self, name: &str, xs: &[f64], ys: &[f64]) -> Result<()> {
        let pts: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
        let kept: Vec<(f64, f64)> = pts.iter().copied().filter(|p| p.1 != 0.0).collect();
        let fit = if kept.is_empty() || kept.len() == pts.len() {
            fit_series(&pts)?
        } else {
            self.note(&format!("{name}_zero_points_dropped"), pts.len() - kept.len());
            fit_series(&kept)?
        };
        self.fits.push((name.to_string(), fit));
        Ok(())
    }

    fn note(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.notes.insert(key.to_string(), value.into());
    }
}

/// Runs `f(θ)` for `θ = 0..m` in parallel; results in `θ` order, first error by `θ`.
fn par_clouds<T: Send>(m: u64, level: u32, f: impl Fn(u32) -> Result<T> + Sync) -> Result<Vec<T>> {
    let m = u32::try_from(m).map_err(|_| Error::config("too many clouds"))?;
    let results: Vec<Result<T>> = (0..m).into_par_iter().map(|t| f(t).map_err(|e| e.in_cloud(level, t))).collect();
    results.into_iter().collect()
}

fn grid_level(g: usize) -> u32 {
    g as u32
}

fn variance_or_zero(values: &[f64]) -> f64 {
    mean_and_variance(values).1.unwrap_or(0.0)
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let (m, v) = mean_and_variance(values);
    (m, v.map_or(0.0, |v| (v / values.len() as f64).sqrt()))
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::IidVariance => iid_variance(cfg),
        ExperimentKind::ParticleVariance => particle_variance(cfg),
        ExperimentKind::WeakError => weak_error(cfg),
        ExperimentKind::StrongPoc => strong_poc(cfg),
        ExperimentKind::EulerStrong => euler_strong(cfg),
        ExperimentKind::Complexity => complexity(cfg),
        ExperimentKind::Estimate => estimate(cfg),
    }
}

fn even_sizes(cfg: &ExperimentConfig) -> Result<Vec<usize>> {
    let ns = cfg.sizes();
    if let Some(n) = ns.iter().find(|&&n| n < 2 || n % 2 != 0) {
        return Err(Error::config(format!("antithetic splits need even N >= 2, got {n}")));
    }
    Ok(ns)
}

/// Variance of `Φ(μ^N) − ½Φ(first half) − ½Φ(second half)` over i.i.d. samples,
/// with the non-antithetic `Φ(μ^N) − Φ(first half)` as baseline.
pub fn iid_variance(cfg: &ExperimentConfig) -> Result<Outcome> {
    let model = cfg.model_spec()?;
    let phi = cfg.functional_spec()?;
    let law = model.initial_law();
    let ns = even_sizes(cfg)?;
    let mut table = Table::new(&["n", "samples", "antithetic_variance", "standard_variance"]);
    let (mut anti, mut std) = (Vec::new(), Vec::new());
    for (g, &n) in ns.iter().enumerate() {
        let level = grid_level(g);
        let pairs = par_clouds(cfg.samples, level, |t| {
            let key = CloudKey::new(cfg.seed, level, t);
            let s = paths::sample_law(law, 0..n, &key)?;
            let (h1, h2) = (s.subset(0..n / 2)?, s.subset(n / 2..n)?);
            let a = phi.antithetic_difference(&s, &h1, &h2)?;
            let b = phi.evaluate(&s)? - phi.evaluate(&h1)?;
            Ok((a, b))
        })?;
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        anti.push(variance_or_zero(&a));
        std.push(variance_or_zero(&b));
        table.push(vec![n.into(), cfg.samples.into(), anti[g].into(), std[g].into()]);
    }
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let mut out = Outcome::new(cfg.kind, table);
    out.add_fit("antithetic", &xs, &anti)?;
    out.add_fit("standard", &xs, &std)?;
    Ok(out)
}

/// Same statistic for particle systems at `h = T/N`, Euler or exact in time.
pub fn particle_variance(cfg: &ExperimentConfig) -> Result<Outcome> {
    let model = cfg.model_spec()?;
    let phi = cfg.functional_spec()?;
    let ns = even_sizes(cfg)?;
    let exact = match cfg.options.estimator.as_deref().unwrap_or("euler") {
        "euler" => false,
        "exact" => true,
        other => return Err(Error::config(format!("particle-variance estimator must be euler or exact, got '{other}'"))),
    };
    let mut table = Table::new(&["n", "steps", "samples", "antithetic_variance", "standard_variance"]);
    let (mut anti, mut std) = (Vec::new(), Vec::new());
    for (g, &n) in ns.iter().enumerate() {
        let level = grid_level(g);
        let p = if exact { 1 } else { n };
        let pairs = par_clouds(cfg.samples, level, |t| {
            let key = CloudKey::new(cfg.seed, level, t);
            let triple = if exact {
                simulate::antithetic_triple_exact(&model, n / 2, cfg.horizon, &key)?
            } else {
                simulate::antithetic_triple_euler(&model, n / 2, p, cfg.horizon, &key)?
            };
            Ok((triple.difference(&phi)?, triple.standard_difference(&phi)?))
        })?;
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        anti.push(variance_or_zero(&a));
        std.push(variance_or_zero(&b));
        table.push(vec![n.into(), p.into(), cfg.samples.into(), anti[g].into(), std[g].into()]);
    }
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let mut out = Outcome::new(cfg.kind, table);
    out.add_fit("antithetic", &xs, &anti)?;
    out.add_fit("standard", &xs, &std)?;
    Ok(out)
}

fn exact_phi(model: &ModelSpec, phi: &Functional, horizon: f64) -> Result<f64> {
    model
        .analytic()
        .and_then(|r| r.phi_exact(phi, horizon))
        .ok_or_else(|| Error::unsupported(format!("no closed-form value of '{}' for {}", phi.descriptor(), model.tag())))
}

/// `|E Φ(μ^{N,h}_T) − Φ(μ_T)|` along particle counts (h = T/N) or step counts.
///
/// Cloud counts are scaled so that three standard errors stay below a third
/// of the smallest expected bias on the grid. That bias is extrapolated at
/// rate one from the pilot bias at the first grid point.
pub fn weak_error(cfg: &ExperimentConfig) -> Result<Outcome> {
    let model = cfg.model_spec()?;
    let phi = cfg.functional_spec()?;
    let truth = exact_phi(&model, &phi, cfg.horizon)?;
    let by_steps = match cfg.options.axis.as_deref().unwrap_or("particles") {
        "particles" => false,
        "steps" => true,
        other => return Err(Error::config(format!("weak-error axis must be particles or steps, got '{other}'"))),
    };
    let sizes = cfg.sizes();
    let points: Vec<(usize, usize)> = if by_steps {
        let n = cfg
            .options
            .particles
            .ok_or_else(|| Error::config("weak-error along steps needs options.particles"))?;
        sizes.iter().map(|&p| (n, p)).collect()
    } else {
        sizes.iter().map(|&n| (n, cfg.options.steps.unwrap_or(n))).collect()
    };
    let pilot = cfg.samples;
    let cap = cfg.options.max_samples.unwrap_or(500_000).max(pilot);

    let phi_clouds = |level: u32, m: u64, n: usize, p: usize| {
        par_clouds(m, level, |t| {
            let cloud = simulate::euler_terminal(&model, n, p, cfg.horizon, &CloudKey::new(cfg.seed, level, t))?;
            phi.evaluate(&cloud.states)
        })
    };

    let mut pilot_var = Vec::new();
    let mut first_bias = 0.0;
    for (g, &(n, p)) in points.iter().enumerate() {
        let values = phi_clouds(PILOT_LEVEL + grid_level(g), pilot, n, p)?;
        let (mean, var) = mean_and_variance(&values);
        if g == 0 {
            first_bias = (mean - truth).abs();
        }
        pilot_var.push(var.unwrap_or(0.0));
    }
    let scale = |&(n, p): &(usize, usize)| if by_steps { p as f64 } else { n as f64 };
    let min_bias = first_bias * scale(&points[0]) / scale(points.last().expect("grid is non-empty"));

    let mut table = Table::new(&["n", "steps", "samples", "estimate", "exact", "bias", "abs_bias", "stderr"]);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (g, &(n, p)) in points.iter().enumerate() {
        let m = if min_bias > 0.0 {
            ((81.0 * pilot_var[g] / (min_bias * min_bias)).ceil() as u64).clamp(pilot, cap)
        } else {
            cap
        };
        let values = phi_clouds(grid_level(g), m, n, p)?;
        let (mean, se) = mean_stderr(&values);
        let bias = mean - truth;
        table.push(vec![
            n.into(),
            p.into(),
            m.into(),
            mean.into(),
            truth.into(),
            bias.into(),
            bias.abs().into(),
            se.into(),
        ]);
        xs.push(if by_steps { cfg.horizon / p as f64 } else { n as f64 });
        ys.push(bias.abs());
    }
    let mut out = Outcome::new(cfg.kind, table);
    out.note("pilot_bias_first_point", first_bias);
    out.note("min_expected_bias", min_bias);
    out.add_fit("bias", &xs, &ys)?;
    Ok(out)
}

/// `(1/N) Σ_i max_k |X_i(t_k) − Y_i(t_k)|⁴` averaged over clouds.
pub fn strong_poc(cfg: &ExperimentConfig) -> Result<Outcome> {
    let model = cfg.model_spec()?;
    let p = cfg.options.steps.unwrap_or(128);
    let ns = cfg.sizes();
    let mut table = Table::new(&["n", "steps", "samples", "statistic", "stderr"]);
    let mut ys = Vec::new();
    for (g, &n) in ns.iter().enumerate() {
        let level = grid_level(g);
        let stats = par_clouds(cfg.samples, level, |t| {
            Ok(simulate::coupled_pair(&model, n, p, cfg.horizon, &CloudKey::new(cfg.seed, level, t))?.statistic())
        })?;
        let (mean, se) = mean_stderr(&stats);
        ys.push(mean);
        table.push(vec![n.into(), p.into(), cfg.samples.into(), mean.into(), se.into()]);
    }
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let mut out = Outcome::new(cfg.kind, table);
    out.add_fit("statistic", &xs, &ys)?;
    Ok(out)
}

/// `E W₂(μ^Y_T, μ^{Z,h}_T)²` at fixed `N`, where the reference `Y` and the
/// Euler clouds share initial states and Brownian increments. The reference
/// is the exact linear solution conditioned on a fine grid, or an Euler run
/// on that grid.
pub fn euler_strong(cfg: &ExperimentConfig) -> Result<Outcome> {
    let model = cfg.model_spec()?;
    let n = cfg.options.particles.unwrap_or(64);
    let p_ref = cfg.options.reference_steps.unwrap_or(1024);
    let exact_ref = match cfg.options.reference.as_deref() {
        None => model.is_linear(),
        Some("exact") => true,
        Some("euler") => false,
        Some(other) => return Err(Error::config(format!("reference must be exact or euler, got '{other}'"))),
    };
    let steps = cfg.sizes();
    for &p in &steps {
        if p > p_ref || p_ref % p != 0 || !(p_ref / p).is_power_of_two() {
            return Err(Error::config(format!(
                "step count {p} must divide the reference resolution {p_ref} by a power of two"
            )));
        }
    }
    let d = model.dim();
    let h_ref = cfg.horizon / p_ref as f64;
    let per_cloud = par_clouds(cfg.samples, 0, |t| {
        let key = CloudKey::new(cfg.seed, 0, t);
        let init = paths::draw_initials(&model, n, &key)?;
        let table = paths::draw_increments(n, p_ref, h_ref, d, &key)?;
        let reference = if exact_ref {
            simulate::exact_linear_from(&model, &init, &table, &key, 0)?
        } else {
            simulate::euler_from(&model, &init, &table, &key)?
        };
        steps
            .iter()
            .map(|&p| {
                let coarse = table.coarsen_by(p_ref / p)?;
                let z = simulate::euler_from(&model, &init, &coarse, &key)?;
                let w = if d == 1 {
                    w2_1d(&reference.states, &z.states)?
                } else {
                    w2_exact_small(&reference.states, &z.states)?
                };
                Ok(w * w)
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let mut table = Table::new(&["steps", "h", "samples", "w2_squared", "stderr"]);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (g, &p) in steps.iter().enumerate() {
        let column: Vec<f64> = per_cloud.iter().map(|row| row[g]).collect();
        let (mean, se) = mean_stderr(&column);
        let h = cfg.horizon / p as f64;
        table.push(vec![p.into(), h.into(), cfg.samples.into(), mean.into(), se.into()]);
        xs.push(h);
        ys.push(mean);
    }
    let mut out = Outcome::new(cfg.kind, table);
    out.note("reference", if exact_ref { "exact" } else { "euler" });
    out.note("reference_steps", p_ref);
    out.note("particles", n);
    out.add_fit("w2", &xs, &ys)?;
    Ok(out)
}

fn rmse(errors: &[f64]) -> f64 {
    (errors.iter().map(|e| e * e).collect::<ExactSum>().value() / errors.len() as f64).sqrt()
}

/// Seed of the `s`-th replicate run.
fn replicate_seed(seed: u64, s: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(s)
}

/// Closed-form costs of the epsilon schedules and achieved RMSE over seeds.
pub fn complexity(cfg: &ExperimentConfig) -> Result<Outcome> {
    let model = cfg.model_spec()?;
    let phi = cfg.functional_spec()?;
    let truth = exact_phi(&model, &phi, cfg.horizon)?;
    let base_n = cfg.options.base_n.unwrap_or(1);
    let linear = model.is_linear();
    let mut table = Table::new(&[
        "epsilon",
        "levels",
        "cost_amlmc_euler",
        "cost_ensemble",
        "cost_amlmc_exact",
        "cost_amlmc_exact_per_log2",
        "rmse_amlmc_euler",
        "rmse_ensemble",
        "rmse_amlmc_exact",
        "seeds",
    ]);
    let eps = cfg.grid_values();
    let (mut c_euler, mut c_ens, mut c_exact) = (Vec::new(), Vec::new(), Vec::new());
    for &e in &eps {
        let s_euler = LevelSchedule::from_epsilon(e, cfg.horizon)?.with_base_n(base_n)?;
        let s_ens = LevelSchedule::ensemble_from_epsilon(e, cfg.horizon)?;
        let s_exact = LevelSchedule::exact_from_epsilon(e, cfg.horizon)?.with_base_n(base_n)?;
        let cost_euler = s_euler.cost(EstimatorKind::AmlmcEuler);
        let cost_ens = s_ens.cost(EstimatorKind::Ensemble);
        let cost_exact = s_exact.cost(EstimatorKind::AmlmcExact);
        let per_log2 = cost_exact as f64 / e.ln().powi(2);

        let errors = |kind: EstimatorKind, schedule: &LevelSchedule, cost: u64| -> Result<Vec<f64>> {
            (0..cfg.samples)
                .map(|s| {
                    let r = mlmc::run(kind, &model, &phi, schedule, replicate_seed(cfg.seed, s))?;
                    if r.cost_interactions != cost {
                        return Err(Error::Data(format!("{} cost {} differs from schedule cost {cost}", kind.name(), r.cost_interactions)));
                    }
                    Ok(r.estimate - truth)
                })
                .collect()
        };
        let r_euler = rmse(&errors(EstimatorKind::AmlmcEuler, &s_euler, cost_euler)?);
        let r_ens = rmse(&errors(EstimatorKind::Ensemble, &s_ens, cost_ens)?);
        let r_exact = if linear {
            Some(rmse(&errors(EstimatorKind::AmlmcExact, &s_exact, cost_exact)?))
        } else {
            None
        };
        table.push(vec![
            e.into(),
            (s_euler.top() as u64).into(),
            cost_euler.into(),
            cost_ens.into(),
            cost_exact.into(),
            per_log2.into(),
            r_euler.into(),
            r_ens.into(),
            r_exact.into(),
            cfg.samples.into(),
        ]);
        c_euler.push(cost_euler as f64);
        c_ens.push(cost_ens as f64);
        c_exact.push(per_log2);
    }
    let mut out = Outcome::new(cfg.kind, table);
    out.note("exact_value", truth);
    out.note("base_n", base_n);
    out.add_fit("cost_amlmc_euler", &eps, &c_euler)?;
    out.add_fit("cost_ensemble", &eps, &c_ens)?;
    out.add_fit("cost_amlmc_exact_per_log2", &eps, &c_exact)?;
    Ok(out)
}

/// Schedule described by an estimate config.
pub fn estimate_schedule(cfg: &ExperimentConfig, kind: EstimatorKind) -> Result<LevelSchedule> {
    let base_n = cfg.options.base_n.unwrap_or(1);
    match (&cfg.options.counts, cfg.options.epsilon) {
        (Some(_), Some(_)) => Err(Error::config("give either options.epsilon or options.counts, not both")),
        (Some(counts), None) => LevelSchedule::manual(cfg.horizon, base_n, base_n, counts.clone()),
        (None, Some(e)) => match kind {
            EstimatorKind::Ensemble => LevelSchedule::ensemble_from_epsilon(e, cfg.horizon),
            EstimatorKind::AmlmcExact => LevelSchedule::exact_from_epsilon(e, cfg.horizon)?.with_base_n(base_n),
            _ => LevelSchedule::from_epsilon(e, cfg.horizon)?.with_base_n(base_n),
        },
        (None, None) => Err(Error::config("estimate needs options.epsilon or options.counts")),
    }
}

/// One estimator run; the table lists per-level statistics.
pub fn estimate(cfg: &ExperimentConfig) -> Result<Outcome> {
    let model = cfg.model_spec()?;
    let phi = cfg.functional_spec()?;
    let kind = EstimatorKind::from_name(cfg.options.estimator.as_deref().unwrap_or("amlmc-euler"))?;
    let schedule = estimate_schedule(cfg, kind)?;
    let report = mlmc::run(kind, &model, &phi, &schedule, cfg.seed)?;
    let mut table = Table::new(&["level", "n", "steps", "m", "mean", "variance"]);
    for l in &report.per_level {
        table.push(vec![
            u64::from(l.level).into(),
            l.n.into(),
            l.steps.into(),
            l.m.into(),
            l.mean.into(),
            l.variance.into(),
        ]);
    }
    let mut out = Outcome::new(cfg.kind, table);
    out.note("estimator", kind.name());
    out.note("estimate", report.estimate);
    out.note("cost_interactions", report.cost_interactions);
    out.note("fingerprint", report.fingerprint());
    if let Some(v) = model.analytic().and_then(|r| r.phi_exact(&phi, cfg.horizon)) {
        out.note("exact_value", v);
    }
    out.report = Some(report);
    Ok(out)
}
