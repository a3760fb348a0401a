//! Estimators and level schedules.
//!
//! Every estimator is a telescoping sum: a plain level-0 term plus per-level
//! corrections, each averaged over `M_ℓ` independent clouds keyed by
//! `(seed, ℓ, θ)`. Clouds run in parallel; results are gathered in key order
//! and reduced with exact summation, so a report does not depend on the
//! worker count.

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::measure::{ExactSum, Functional};
use crate::models::{InitialLaw, ModelSpec};
use crate::paths::{self, CloudKey};
use crate::simulate;

/// One level: `N_ℓ` particles, `p_ℓ` steps of `h_ℓ = T/p_ℓ`, `M_ℓ` clouds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelSpec {
    pub level: u32,
    pub n: usize,
    pub steps: usize,
    pub h: f64,
    pub m: u64,
}

/// Levels `0..=L` with doubling particle counts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelSchedule {
    levels: Vec<LevelSpec>,
    horizon: f64,
    epsilon: Option<f64>,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < (-1.0f64).exp()) {
        return Err(Error::config(format!("epsilon must lie in (0, 1/e), got {epsilon}")));
    }
    Ok(())
}

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::config(format!("horizon must be positive, got {horizon}")));
    }
    Ok(())
}

/// `L = ⌈log₂(√2/ε)⌉`.
pub fn top_level(epsilon: f64) -> Result<u32> {
    check_epsilon(epsilon)?;
    Ok((std::f64::consts::SQRT_2 / epsilon).log2().ceil() as u32)
}

fn ceil_count(x: f64) -> u64 {
    x.ceil().max(1.0) as u64
}

impl LevelSchedule {
    /// Schedule for A-MLMC with Euler steps:
    /// `M_ℓ = ⌈2ε⁻² 2^{L/2} (1 − 2^{−1/2})⁻¹ 2^{−5ℓ/2}⌉`, `N_ℓ = 2^ℓ`, `h_ℓ = T/N_ℓ`.
    pub fn from_epsilon(epsilon: f64, horizon: f64) -> Result<Self> {
        let top = top_level(epsilon)?;
        let c = 2.0 / (epsilon * epsilon) * 2f64.powf(top as f64 / 2.0) / (1.0 - 0.5f64.sqrt());
        let ms = (0..=top).map(|l| ceil_count(c * 2f64.powf(-2.5 * l as f64))).collect();
        Self::build(horizon, 1, ms, Some(epsilon))
    }

    /// Schedule for the exact-in-time linear estimator, whose level-ℓ
    /// variance and cost scale as `2^{−2ℓ}` and `2^{2ℓ}`:
    /// `M_ℓ = ⌈2ε⁻² (L+1) 2^{−2ℓ}⌉` with the same `L`.
    pub fn exact_from_epsilon(epsilon: f64, horizon: f64) -> Result<Self> {
        let top = top_level(epsilon)?;
        let c = 2.0 / (epsilon * epsilon) * (top + 1) as f64;
        let ms = (0..=top).map(|l| ceil_count(c * 4f64.powi(-(l as i32)))).collect();
        Self::build(horizon, 1, ms, Some(epsilon))
    }

    /// Single-level ensemble reaching the same bias and variance targets:
    /// `N = 2^L`, `h = T/N`, `M = ⌈2ε⁻² 2^{−L}⌉`.
    pub fn ensemble_from_epsilon(epsilon: f64, horizon: f64) -> Result<Self> {
        let top = top_level(epsilon)?;
        let n = 1usize << top;
        let m = ceil_count(2.0 / (epsilon * epsilon) / n as f64);
        Self::build(horizon, n, vec![m], Some(epsilon))
    }

    /// Levels with `N_ℓ = base_n·2^ℓ`, `p_ℓ = base_steps·2^ℓ` and the given `M_ℓ`.
    pub fn manual(horizon: f64, base_n: usize, base_steps: usize, ms: Vec<u64>) -> Result<Self> {
        if base_n == 0 || base_steps == 0 {
            return Err(Error::config("base particle count and step count must be positive"));
        }
        let mut s = Self::build(horizon, base_n, ms, None)?;
        for l in &mut s.levels {
            l.steps = base_steps << l.level;
            l.h = horizon / l.steps as f64;
        }
        Ok(s)
    }

    fn build(horizon: f64, base_n: usize, ms: Vec<u64>, epsilon: Option<f64>) -> Result<Self> {
        check_horizon(horizon)?;
        if ms.is_empty() {
            return Err(Error::config("schedule needs at least one level"));
        }
        if ms.len() > 40 {
            return Err(Error::config("schedule has too many levels"));
        }
        if ms.contains(&0) {
            return Err(Error::config("every level needs at least one cloud"));
        }
        if ms.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::config(format!("cloud counts must be non-increasing, got {ms:?}")));
        }
        let levels = ms
            .into_iter()
            .enumerate()
            .map(|(l, m)| {
                let n = base_n << l;
                LevelSpec {
                    level: l as u32,
                    n,
                    steps: n,
                    h: horizon / n as f64,
                    m,
                }
            })
            .collect();
        Ok(Self {
            levels,
            horizon,
            epsilon,
        })
    }

    /// Rescales `N_ℓ` (and `p_ℓ = N_ℓ`) to `base_n·2^ℓ`, keeping `M_ℓ`.
    pub fn with_base_n(mut self, base_n: usize) -> Result<Self> {
        if base_n == 0 {
            return Err(Error::config("base particle count must be positive"));
        }
        for l in &mut self.levels {
            l.n = base_n << l.level;
            l.steps = l.n;
            l.h = self.horizon / l.steps as f64;
        }
        Ok(self)
    }

    pub fn levels(&self) -> &[LevelSpec] {
        &self.levels
    }

    /// `L`.
    pub fn top(&self) -> u32 {
        self.levels.len() as u32 - 1
    }

    pub fn base_n(&self) -> usize {
        self.levels[0].n
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn epsilon(&self) -> Option<f64> {
        self.epsilon
    }

    pub fn counts(&self) -> Vec<u64> {
        self.levels.iter().map(|l| l.m).collect()
    }

    /// `Σ_ℓ M_ℓ · charge(ℓ)` for the given estimator.
    pub fn cost(&self, kind: EstimatorKind) -> u64 {
        self.levels.iter().map(|l| l.m * level_charge(kind, l)).sum()
    }
}

impl fmt::Display for LevelSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.epsilon {
            Some(e) => writeln!(f, "epsilon = {e}, L = {}, T = {}", self.top(), self.horizon)?,
            None => writeln!(f, "L = {}, T = {}", self.top(), self.horizon)?,
        }
        writeln!(f, "level\tN\tsteps\th\tM")?;
        for l in &self.levels {
            writeln!(f, "{}\t{}\t{}\t{}\t{}", l.level, l.n, l.steps, l.h, l.m)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    /// Single-level average of Euler clouds.
    Ensemble,
    /// Antithetic MLMC over i.i.d. samples of the initial law.
    AmlmcIid,
    /// Antithetic MLMC on exactly simulated linear particle systems.
    AmlmcExact,
    /// Antithetic MLMC on Euler particle systems.
    AmlmcEuler,
    /// Standard MLMC: first half of the fine particles at double step.
    MlmcStandard,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Ensemble => "ensemble",
            EstimatorKind::AmlmcIid => "amlmc-iid",
            EstimatorKind::AmlmcExact => "amlmc-exact",
            EstimatorKind::AmlmcEuler => "amlmc-euler",
            EstimatorKind::MlmcStandard => "mlmc-standard",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        [
            EstimatorKind::Ensemble,
            EstimatorKind::AmlmcIid,
            EstimatorKind::AmlmcExact,
            EstimatorKind::AmlmcEuler,
            EstimatorKind::MlmcStandard,
        ]
        .into_iter()
        .find(|k| k.name() == name)
        .ok_or_else(|| Error::config(format!("unknown estimator '{name}'")))
    }
}

fn sq(n: usize) -> u64 {
    (n as u64) * (n as u64)
}

/// Interaction units charged per cloud at one level.
pub fn level_charge(kind: EstimatorKind, l: &LevelSpec) -> u64 {
    let (n, p) = (l.n, l.steps as u64);
    match kind {
        EstimatorKind::AmlmcIid => n as u64,
        EstimatorKind::Ensemble => sq(n) * p,
        EstimatorKind::AmlmcExact if l.level == 0 => sq(n),
        EstimatorKind::AmlmcExact => sq(n) + 2 * sq(n / 2),
        EstimatorKind::AmlmcEuler | EstimatorKind::MlmcStandard if l.level == 0 => sq(n) * p,
        EstimatorKind::AmlmcEuler => sq(n) * p + 2 * sq(n / 2) * (p / 2),
        EstimatorKind::MlmcStandard => sq(n) * p + sq(n / 2) * (p / 2),
    }
}

/// Summary of one level's corrections.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelStats {
    pub level: u32,
    pub n: usize,
    pub steps: usize,
    pub m: u64,
    pub mean: f64,
    /// Unbiased sample variance; absent when `M_ℓ = 1`.
    pub variance: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimatorReport {
    pub kind: EstimatorKind,
    pub estimate: f64,
    pub per_level: Vec<LevelStats>,
    pub cost_interactions: u64,
    pub master_seed: u64,
    /// Seconds; the only field that varies between identical runs.
    pub wall_time: f64,
}

impl EstimatorReport {
    /// SHA-256 over every field except wall time, floats by bit pattern.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.kind.name().as_bytes());
        h.update(self.estimate.to_bits().to_le_bytes());
        h.update(self.cost_interactions.to_le_bytes());
        h.update(self.master_seed.to_le_bytes());
        for l in &self.per_level {
            h.update(l.level.to_le_bytes());
            h.update((l.n as u64).to_le_bytes());
            h.update((l.steps as u64).to_le_bytes());
            h.update(l.m.to_le_bytes());
            h.update(l.mean.to_bits().to_le_bytes());
            match l.variance {
                Some(v) => h.update(v.to_bits().to_le_bytes()),
                None => h.update([0xff; 8]),
            }
        }
        hex::encode(h.finalize())
    }

    /// Equal in every field except wall time.
    pub fn same_result(&self, other: &EstimatorReport) -> bool {
        self.fingerprint() == other.fingerprint()
    }
}

/// Mean and unbiased variance, both from exact sums.
pub fn mean_and_variance(values: &[f64]) -> (f64, Option<f64>) {
    let m = values.len() as f64;
    let mean = values.iter().copied().collect::<ExactSum>().value() / m;
    let var = (values.len() > 1).then(|| {
        values.iter().map(|x| (x - mean) * (x - mean)).collect::<ExactSum>().value() / (m - 1.0)
    });
    (mean, var)
}

type CloudFn<'a> = dyn Fn(&LevelSpec, &CloudKey) -> Result<(f64, u64)> + Sync + 'a;

fn run_levels(
    kind: EstimatorKind,
    schedule: &LevelSchedule,
    seed: u64,
    cloud: &CloudFn<'_>,
) -> Result<EstimatorReport> {
    let start = Instant::now();
    let mut jobs = Vec::new();
    for (li, l) in schedule.levels.iter().enumerate() {
        let m = u32::try_from(l.m).map_err(|_| Error::config("too many clouds at one level"))?;
        jobs.extend((0..m).map(|theta| (li, theta)));
    }
    let results: Vec<Result<(f64, u64)>> = jobs
        .par_iter()
        .map(|&(li, theta)| {
            let l = &schedule.levels[li];
            let key = CloudKey::new(seed, l.level, theta);
            cloud(l, &key).map_err(|e| e.in_cloud(l.level, theta))
        })
        .collect();

    let mut per_level = Vec::with_capacity(schedule.levels.len());
    let mut cost = 0u64;
    let mut total = ExactSum::new();
    let mut it = results.into_iter();
    for l in &schedule.levels {
        let mut values = Vec::with_capacity(l.m as usize);
        for r in it.by_ref().take(l.m as usize) {
            let (v, units) = r?;
            values.push(v);
            cost += units;
        }
        let (mean, variance) = mean_and_variance(&values);
        total.add(mean);
        per_level.push(LevelStats {
            level: l.level,
            n: l.n,
            steps: l.steps,
            m: l.m,
            mean,
            variance,
        });
    }
    let expected = schedule.cost(kind);
    if cost != expected {
        return Err(Error::Data(format!(
            "accumulated cost {cost} differs from closed form {expected}"
        )));
    }
    Ok(EstimatorReport {
        kind,
        estimate: total.value(),
        per_level,
        cost_interactions: cost,
        master_seed: seed,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn check_model_phi(model: &ModelSpec, phi: &Functional) -> Result<()> {
    if model.dim() != phi.dim() {
        return Err(Error::config(format!(
            "functional dimension {} does not match model dimension {}",
            phi.dim(),
            model.dim()
        )));
    }
    Ok(())
}

/// `Q_{M,N,h} = (1/M) Σ_θ Φ(μ^{N,h}_θ)` over Euler clouds.
pub fn run_ensemble(
    model: &ModelSpec,
    phi: &Functional,
    m: u64,
    n: usize,
    p: usize,
    horizon: f64,
    seed: u64,
) -> Result<EstimatorReport> {
    check_model_phi(model, phi)?;
    if n == 0 || p == 0 {
        return Err(Error::config("particle and step counts must be positive"));
    }
    let schedule = LevelSchedule::manual(horizon, n, p, vec![m])?;
    run_levels(EstimatorKind::Ensemble, &schedule, seed, &|l, key| {
        let cloud = simulate::euler_terminal(model, l.n, l.steps, horizon, key)?;
        Ok((phi.evaluate(&cloud.states)?, cloud.interaction_units))
    })
}

/// Single-level ensemble described by a one-level schedule.
pub fn run_ensemble_schedule(model: &ModelSpec, phi: &Functional, schedule: &LevelSchedule, seed: u64) -> Result<EstimatorReport> {
    if schedule.levels.len() != 1 {
        return Err(Error::config("an ensemble schedule has exactly one level"));
    }
    let l = &schedule.levels[0];
    run_ensemble(model, phi, l.m, l.n, l.steps, schedule.horizon, seed)
}

fn check_particle_schedule(schedule: &LevelSchedule) -> Result<()> {
    for l in schedule.levels.iter().skip(1) {
        if l.n % 2 != 0 || l.steps % 2 != 0 {
            return Err(Error::config(format!(
                "level {} needs even particle and step counts, got N={} p={}",
                l.level, l.n, l.steps
            )));
        }
    }
    Ok(())
}

/// Antithetic MLMC over i.i.d. samples: corrections
/// `Φ(μ^{N_ℓ}) − ½Φ(first half) − ½Φ(second half)` of one sample.
pub fn run_amlmc_iid(law: &InitialLaw, phi: &Functional, schedule: &LevelSchedule, seed: u64) -> Result<EstimatorReport> {
    if law.dim() != phi.dim() {
        return Err(Error::config("functional and law dimensions differ"));
    }
    check_particle_schedule(schedule)?;
    run_levels(EstimatorKind::AmlmcIid, schedule, seed, &|l, key| {
        let sample = paths::sample_law(law, 0..l.n, key)?;
        let v = if l.level == 0 {
            phi.evaluate(&sample)?
        } else {
            let half = l.n / 2;
            phi.antithetic_difference(&sample, &sample.subset(0..half)?, &sample.subset(half..l.n)?)?
        };
        Ok((v, l.n as u64))
    })
}

/// Antithetic MLMC on exactly simulated linear systems (no time step).
pub fn run_amlmc_particles_exact(
    model: &ModelSpec,
    phi: &Functional,
    schedule: &LevelSchedule,
    seed: u64,
) -> Result<EstimatorReport> {
    check_model_phi(model, phi)?;
    if model.linear_parts().is_none() {
        return Err(Error::unsupported(format!("exact estimator needs a linear model, got {}", model.tag())));
    }
    check_particle_schedule(schedule)?;
    let horizon = schedule.horizon;
    run_levels(EstimatorKind::AmlmcExact, schedule, seed, &|l, key| {
        if l.level == 0 {
            let cloud = simulate::exact_linear_terminal(model, l.n, horizon, key)?;
            Ok((phi.evaluate(&cloud.states)?, cloud.interaction_units))
        } else {
            let t = simulate::antithetic_triple_exact(model, l.n / 2, horizon, key)?;
            Ok((t.difference(phi)?, t.interaction_units()))
        }
    })
}

/// Antithetic MLMC on Euler particle systems.
pub fn run_amlmc_particles_euler(
    model: &ModelSpec,
    phi: &Functional,
    schedule: &LevelSchedule,
    seed: u64,
) -> Result<EstimatorReport> {
    check_model_phi(model, phi)?;
    check_particle_schedule(schedule)?;
    let horizon = schedule.horizon;
    run_levels(EstimatorKind::AmlmcEuler, schedule, seed, &|l, key| {
        if l.level == 0 {
            let cloud = simulate::euler_terminal(model, l.n, l.steps, horizon, key)?;
            Ok((phi.evaluate(&cloud.states)?, cloud.interaction_units))
        } else {
            let t = simulate::antithetic_triple_euler(model, l.n / 2, l.steps, horizon, key)?;
            Ok((t.difference(phi)?, t.interaction_units()))
        }
    })
}

/// Standard MLMC with the coarse system made of the first `N_ℓ/2` fine
/// particles under coarsened increments.
pub fn run_mlmc_standard(
    model: &ModelSpec,
    phi: &Functional,
    schedule: &LevelSchedule,
    seed: u64,
) -> Result<EstimatorReport> {
    check_model_phi(model, phi)?;
    check_particle_schedule(schedule)?;
    let horizon = schedule.horizon;
    run_levels(EstimatorKind::MlmcStandard, schedule, seed, &|l, key| {
        if l.level == 0 {
            let cloud = simulate::euler_terminal(model, l.n, l.steps, horizon, key)?;
            Ok((phi.evaluate(&cloud.states)?, cloud.interaction_units))
        } else {
            let (fine, coarse) = simulate::coarse_pair_euler(model, l.n, l.steps, horizon, key)?;
            let v = phi.evaluate(&fine.states)? - phi.evaluate(&coarse.states)?;
            Ok((v, fine.interaction_units + coarse.interaction_units))
        }
    })
}

/// Dispatches on `kind`; `AmlmcIid` samples the model's initial law.
pub fn run(kind: EstimatorKind, model: &ModelSpec, phi: &Functional, schedule: &LevelSchedule, seed: u64) -> Result<EstimatorReport> {
    match kind {
        EstimatorKind::Ensemble => run_ensemble_schedule(model, phi, schedule, seed),
        EstimatorKind::AmlmcIid => run_amlmc_iid(model.initial_law(), phi, schedule, seed),
        EstimatorKind::AmlmcExact => run_amlmc_particles_exact(model, phi, schedule, seed),
        EstimatorKind::AmlmcEuler => run_amlmc_particles_euler(model, phi, schedule, seed),
        EstimatorKind::MlmcStandard => run_mlmc_standard(model, phi, schedule, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use std::f64::consts::SQRT_2;

    /// Independent re-evaluation of the closed forms in integer-friendly terms.
    fn oracle_counts(epsilon: f64) -> (u32, Vec<u64>) {
        let mut top = 0u32;
        while 2f64.powi(top as i32) < SQRT_2 / epsilon {
            top += 1;
        }
        let ms = (0..=top)
            .map(|l| {
                let x = 2.0 * epsilon.powi(-2) * (2f64.sqrt()).powi(top as i32) / (1.0 - 1.0 / SQRT_2)
                    / (2f64.sqrt()).powi(5 * l as i32);
                x.ceil() as u64
            })
            .collect();
        (top, ms)
    }

    #[test]
    fn schedule_examples() {
        let s = LevelSchedule::from_epsilon(0.1, 1.0).unwrap();
        assert_eq!(s.top(), 4);
        assert_eq!(s.counts(), vec![2732, 483, 86, 16, 3]);
        assert_eq!(oracle_counts(0.1), (4, vec![2732, 483, 86, 16, 3]));
        let ns: Vec<usize> = s.levels().iter().map(|l| l.n).collect();
        assert_eq!(ns, vec![1, 2, 4, 8, 16]);
        assert_eq!(s.levels()[3].h, 0.125);

        let s = LevelSchedule::from_epsilon(0.25, 2.0).unwrap();
        assert_eq!(s.top(), 3);
        assert_eq!(s.counts()[0], 310);
        assert_eq!(s.counts(), oracle_counts(0.25).1);

        for bad in [std::f64::consts::FRAC_1_SQRT_2, 0.0, -0.1, 0.5, f64::NAN] {
            assert!(matches!(LevelSchedule::from_epsilon(bad, 1.0), Err(Error::Config(_))));
        }
        assert!(LevelSchedule::from_epsilon(0.1, 0.0).is_err());
    }

    #[test]
    fn schedule_invariants_over_epsilon() {
        for &eps in &[0.3, 0.2, 0.1, 0.05, 0.025, 0.01] {
            for s in [
                LevelSchedule::from_epsilon(eps, 1.0).unwrap(),
                LevelSchedule::exact_from_epsilon(eps, 1.0).unwrap(),
                LevelSchedule::from_epsilon(eps, 1.0).unwrap().with_base_n(4).unwrap(),
            ] {
                for w in s.levels().windows(2) {
                    assert_eq!(w[1].n, 2 * w[0].n);
                    assert_eq!(w[1].h, w[0].h / 2.0);
                    assert!(w[1].m <= w[0].m);
                }
                assert!(s.levels().iter().all(|l| l.m >= 1 && l.steps == l.n));
            }
        }
        let e = LevelSchedule::ensemble_from_epsilon(0.1, 1.0).unwrap();
        assert_eq!(e.levels().len(), 1);
        assert_eq!(e.levels()[0].n, 16);
        assert_eq!(e.levels()[0].m, 13);
        assert!(LevelSchedule::manual(1.0, 2, 2, vec![3, 5]).is_err());
    }

    #[test]
    fn level_charges() {
        let l3 = LevelSpec {
            level: 3,
            n: 8,
            steps: 8,
            h: 0.125,
            m: 1,
        };
        assert_eq!(level_charge(EstimatorKind::AmlmcEuler, &l3), 640);
        assert_eq!(level_charge(EstimatorKind::MlmcStandard, &l3), 512 + 64);
        assert_eq!(level_charge(EstimatorKind::AmlmcExact, &l3), 64 + 32);
        assert_eq!(level_charge(EstimatorKind::AmlmcIid, &l3), 8);
        let l0 = LevelSpec { level: 0, ..l3 };
        assert_eq!(level_charge(EstimatorKind::AmlmcEuler, &l0), 512);
        assert_eq!(level_charge(EstimatorKind::AmlmcExact, &l0), 64);
    }

    #[test]
    fn ensemble_examples() {
        let ou = models::mean_field_ou(1.0, 1.0, 0.0, 1.0).unwrap();
        let phi = Functional::by_name("cos-mean", 1).unwrap();
        let r = run_ensemble(&ou, &phi, 1, 8, 4, 1.0, 3).unwrap();
        let cloud = simulate::euler_terminal(&ou, 8, 4, 1.0, &CloudKey::new(3, 0, 0)).unwrap();
        assert_eq!(r.estimate, phi.evaluate(&cloud.states).unwrap());
        assert_eq!(r.per_level[0].variance, None);
        assert_eq!(r.cost_interactions, 64 * 4);

        let c = ModelSpec::frozen(InitialLaw::dirac(vec![1.25]).unwrap()).unwrap();
        let mean = Functional::by_name("mean", 1).unwrap();
        for (m, n, p) in [(1, 1, 1), (7, 5, 3), (20, 16, 2)] {
            assert_eq!(run_ensemble(&c, &mean, m, n, p, 1.0, 0).unwrap().estimate, 1.25);
        }
    }

    #[test]
    fn ensemble_matches_stationary_second_moment() {
        let ou = models::mean_field_ou(1.0, SQRT_2, 0.0, 1.0).unwrap();
        let phi = Functional::by_name("second-moment", 1).unwrap();
        let r = run_ensemble(&ou, &phi, 200, 1 << 8, 1 << 8, 1.0, 11).unwrap();
        assert!((r.estimate - 1.0).abs() < 0.05, "estimate {}", r.estimate);
        assert_eq!(r.cost_interactions, 200 * (1u64 << 24));
    }

    #[test]
    fn iid_linear_corrections_vanish() {
        let law = InitialLaw::gaussian(0.3, 2.0).unwrap();
        let phi = Functional::by_name("mean", 1).unwrap();
        let s = LevelSchedule::manual(1.0, 1, 1, vec![50, 40, 30, 20, 10]).unwrap();
        for seed in 0..5 {
            let r = run_amlmc_iid(&law, &phi, &s, seed).unwrap();
            for l in &r.per_level[1..] {
                assert_eq!(l.mean, 0.0);
                assert_eq!(l.variance, Some(0.0));
            }
            assert_eq!(r.estimate, r.per_level[0].mean);
            assert_eq!(r.cost_interactions, 50 + 80 + 120 + 160 + 160);
        }
        let cos = Functional::by_name("cos-mean", 1).unwrap();
        let r = run_amlmc_iid(&InitialLaw::dirac(vec![0.0]).unwrap(), &cos, &s, 0).unwrap();
        assert_eq!(r.estimate, 1.0);
    }

    #[test]
    fn base_cases_match_ensembles() {
        let ou = models::mean_field_ou(1.0, 1.0, 0.0, 0.5).unwrap();
        let phi = Functional::by_name("cos-mean", 1).unwrap();
        let s = LevelSchedule::manual(1.0, 4, 4, vec![25]).unwrap();
        let ens = run_ensemble(&ou, &phi, 25, 4, 4, 1.0, 77).unwrap();
        let euler = run_amlmc_particles_euler(&ou, &phi, &s, 77).unwrap();
        let standard = run_mlmc_standard(&ou, &phi, &s, 77).unwrap();
        assert_eq!(ens.estimate.to_bits(), euler.estimate.to_bits());
        assert_eq!(ens.estimate.to_bits(), standard.estimate.to_bits());
        assert_eq!(ens.per_level, euler.per_level);

        let exact = run_amlmc_particles_exact(&ou, &phi, &s, 77).unwrap();
        let direct: Vec<f64> = (0..25)
            .map(|t| {
                let c = simulate::exact_linear_terminal(&ou, 4, 1.0, &CloudKey::new(77, 0, t)).unwrap();
                phi.evaluate(&c.states).unwrap()
            })
            .collect();
        assert_eq!(exact.estimate, mean_and_variance(&direct).0);
        assert_eq!(exact.cost_interactions, 25 * 16);
    }

    #[test]
    fn exact_estimator_checks() {
        let frozen_ou = models::mean_field_ou(1.0, 0.0, 0.0, 1.0).unwrap();
        let mean = Functional::by_name("mean", 1).unwrap();
        let s = LevelSchedule::manual(1.0, 1, 1, vec![20, 10, 10]).unwrap();
        let r = run_amlmc_particles_exact(&frozen_ou, &mean, &s, 0).unwrap();
        for l in &r.per_level[1..] {
            assert!(l.mean.abs() < 1e-15);
        }
        let kur = models::kuramoto(1.0, 1.0).unwrap();
        assert!(matches!(run_amlmc_particles_exact(&kur, &mean, &s, 0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn reports_are_reproducible_and_cost_checked() {
        let ou = models::mean_field_ou(1.0, 1.0, 0.0, 0.5).unwrap();
        let phi = Functional::by_name("second-moment", 1).unwrap();
        let s = LevelSchedule::from_epsilon(0.25, 1.0).unwrap();
        let a = run_amlmc_particles_euler(&ou, &phi, &s, 5).unwrap();
        let b = run_amlmc_particles_euler(&ou, &phi, &s, 5).unwrap();
        assert!(a.same_result(&b));
        assert_eq!(a.cost_interactions, s.cost(EstimatorKind::AmlmcEuler));
        let sum: ExactSum = a.per_level.iter().map(|l| l.mean).collect();
        assert_eq!(a.estimate, sum.value());
        let c = run_amlmc_particles_euler(&ou, &phi, &s, 6).unwrap();
        assert_eq!(a.cost_interactions, c.cost_interactions);
        assert!(!a.same_result(&c));
    }

    #[test]
    fn errors_carry_cloud_addresses() {
        let law = InitialLaw::dirac(vec![1.0]).unwrap();
        let f: crate::models::DriftFn = std::sync::Arc::new(|x, _| vec![x[0] * x[0] * 1e300]);
        let model = ModelSpec::custom(
            "explosive",
            crate::models::Drift::Custom { name: "x^2".into(), f },
            crate::models::Diffusion::scalar(1, 0.0),
            law,
            0,
        )
        .unwrap();
        let phi = Functional::by_name("mean", 1).unwrap();
        match run_ensemble(&model, &phi, 3, 2, 4, 1.0, 0) {
            Err(Error::Cloud { level: 0, cloud: 0, source }) => {
                assert!(matches!(*source, Error::Numerical { .. }))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    /// Doubling `M_ℓ` halves the variance of each level mean.
    #[test]
    fn doubling_clouds_halves_level_variance() {
        let ou = models::mean_field_ou(1.0, 1.0, 0.0, 0.5).unwrap();
        let phi = Functional::by_name("cos-mean", 1).unwrap();
        let s1 = LevelSchedule::manual(1.0, 2, 2, vec![40, 20, 20]).unwrap();
        let s2 = LevelSchedule::manual(1.0, 2, 2, vec![80, 40, 40]).unwrap();
        let reps = 30;
        for kind in [EstimatorKind::AmlmcEuler, EstimatorKind::MlmcStandard, EstimatorKind::AmlmcIid, EstimatorKind::AmlmcExact] {
            for level in 0..3 {
                let mut ratios = Vec::new();
                for seed in 0..reps {
                    let a = run(kind, &ou, &phi, &s1, seed).unwrap();
                    let b = run(kind, &ou, &phi, &s2, 1000 + seed).unwrap();
                    let va = a.per_level[level].variance.unwrap() / a.per_level[level].m as f64;
                    let vb = b.per_level[level].variance.unwrap() / b.per_level[level].m as f64;
                    ratios.push((va, vb));
                }
                let ma = ratios.iter().map(|r| r.0).sum::<f64>() / reps as f64;
                let mb = ratios.iter().map(|r| r.1).sum::<f64>() / reps as f64;
                if ma == 0.0 {
                    assert_eq!(mb, 0.0);
                    continue;
                }
                // 3σ band for the mean of M-variance estimates from 30 repetitions.
                let sd = |k: usize, m: f64| {
                    let v: f64 = ratios.iter().map(|r| if k == 0 { r.0 } else { r.1 }).map(|x| (x - m).powi(2)).sum::<f64>()
                        / (reps - 1) as f64;
                    (v / reps as f64).sqrt()
                };
                let diff = mb - 0.5 * ma;
                let band = 3.0 * (sd(1, mb).powi(2) + 0.25 * sd(0, ma).powi(2)).sqrt();
                assert!(diff.abs() <= band, "{kind:?} level {level}: {mb} vs {ma}/2 (band {band})");
            }
        }
    }

    #[test]
    fn antithetic_beats_standard_at_large_n() {
        // A nonzero mean keeps cos'(m) away from zero, so the standard
        // correction has its first-order O(1/N) variance.
        let ou = models::mean_field_ou(1.0, 1.0, 1.0, 0.5).unwrap();
        let phi = Functional::by_name("cos-mean", 1).unwrap();
        // Single level at N = 2⁸ by running level 1 of a base-128 schedule.
        let s = LevelSchedule::manual(1.0, 128, 128, vec![2, 2]).unwrap();
        let sm = LevelSchedule::manual(1.0, 128, 128, vec![100, 100]).unwrap();
        let a = run_amlmc_particles_euler(&ou, &phi, &sm, 1).unwrap();
        let b = run_mlmc_standard(&ou, &phi, &sm, 1).unwrap();
        let ratio = b.per_level[1].variance.unwrap() / a.per_level[1].variance.unwrap();
        assert!(ratio >= 8.0, "variance ratio {ratio}");
        assert!(run_amlmc_particles_euler(&ou, &phi, &s, 1).is_ok());
    }
}
