//! Particle-system time evolution.
//!
//! Euler steps freeze both the state and the empirical measure at the left
//! grid point. For the linear mean-field OU model the interacting system is
//! also simulated exactly, conditionally on the same Brownian increments, so
//! exact and Euler runs can share noise.
//!
//! Cost is charged in interaction units: `N²` per mean-field round, so an
//! Euler run over `p` steps costs `N²p` and an exact run `N²`.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::measure::{EmpiricalMeasure, ExactSum, Functional};
use crate::models::{Frozen, ModelSpec};
use crate::paths::{self, Channel, CloudKey, IncrementTable};

/// Particle states of one cloud at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleCloud {
    pub states: EmpiricalMeasure,
    pub t: f64,
    pub model_tag: String,
    pub provenance: CloudKey,
    pub interaction_units: u64,
}

impl ParticleCloud {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Fine system of `2N` particles and its two coupled halves of `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct AntitheticTriple {
    pub fine: ParticleCloud,
    pub half1: ParticleCloud,
    pub half2: ParticleCloud,
}

impl AntitheticTriple {
    /// `Φ(fine) − ½(Φ(half1) + Φ(half2))`.
    pub fn difference(&self, phi: &Functional) -> Result<f64> {
        phi.antithetic_difference(&self.fine.states, &self.half1.states, &self.half2.states)
    }

    /// Non-antithetic `Φ(fine) − Φ(half1)`.
    pub fn standard_difference(&self, phi: &Functional) -> Result<f64> {
        Ok(phi.evaluate(&self.fine.states)? - phi.evaluate(&self.half1.states)?)
    }

    pub fn interaction_units(&self) -> u64 {
        self.fine.interaction_units + self.half1.interaction_units + self.half2.interaction_units
    }
}

fn units(n: usize, rounds: usize) -> u64 {
    (n as u64) * (n as u64) * (rounds as u64)
}

fn step_size(p: usize, horizon: f64) -> Result<f64> {
    if p == 0 {
        return Err(Error::config("number of steps must be at least 1"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::config(format!("horizon must be positive, got {horizon}")));
    }
    Ok(horizon / p as f64)
}

fn check_finite_states(x: &[f64], step: usize) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(pos) => Err(Error::Numerical {
            step,
            detail: format!("non-finite state {} at coordinate {pos}", x[pos]),
        }),
    }
}

/// One Euler step of a single particle: `x ← x + b h + σ ΔW`.
#[inline]
fn euler_particle(
    model: &ModelSpec,
    frozen: &Frozen,
    x: &mut [f64],
    dw: &[f64],
    h: f64,
    b: &mut [f64],
    scratch: &mut Vec<f64>,
) {
    model.drift_frozen(frozen, x, b);
    let d = x.len();
    let sig = model.diffusion_frozen(frozen, x, scratch);
    if d == 1 {
        x[0] = x[0] + b[0] * h + sig[0] * dw[0];
        return;
    }
    let noise: Vec<f64> = (0..d)
        .map(|r| sig[r * d..(r + 1) * d].iter().zip(dw).map(|(s, w)| s * w).sum())
        .collect();
    for r in 0..d {
        x[r] = x[r] + b[r] * h + noise[r];
    }
}

/// Evolves `x` (flat, row-major) through every step of `table`.
fn euler_evolve(model: &ModelSpec, x: &mut [f64], table: &IncrementTable) -> Result<()> {
    let d = model.dim();
    let h = table.h();
    let mut b = vec![0.0; d];
    let mut scratch = Vec::new();
    for k in 0..table.steps() {
        let frozen = model.freeze(x);
        let dw = table.step(k);
        for (xi, dwi) in x.chunks_exact_mut(d).zip(dw.chunks_exact(d)) {
            euler_particle(model, &frozen, xi, dwi, h, &mut b, &mut scratch);
        }
        check_finite_states(x, k)?;
    }
    Ok(())
}

fn check_inputs(model: &ModelSpec, initials: &EmpiricalMeasure, table: &IncrementTable) -> Result<()> {
    if initials.dim() != model.dim() || table.dim() != model.dim() {
        return Err(Error::config("initial states, increments and model must share dimension"));
    }
    if initials.len() != table.particles() {
        return Err(Error::config(format!(
            "{} initial states but increments for {} particles",
            initials.len(),
            table.particles()
        )));
    }
    Ok(())
}

/// Euler scheme from given initial states and increments.
pub fn euler_from(
    model: &ModelSpec,
    initials: &EmpiricalMeasure,
    table: &IncrementTable,
    key: &CloudKey,
) -> Result<ParticleCloud> {
    check_inputs(model, initials, table)?;
    let mut x = initials.as_flat().to_vec();
    euler_evolve(model, &mut x, table)?;
    Ok(ParticleCloud {
        states: EmpiricalMeasure::from_flat_unchecked(x, model.dim()),
        t: table.horizon(),
        model_tag: model.tag().to_string(),
        provenance: *key,
        interaction_units: units(initials.len(), table.steps()),
    })
}

/// Terminal cloud of the `N`-particle Euler scheme with `p` steps of `T/p`.
pub fn euler_terminal(model: &ModelSpec, n: usize, p: usize, horizon: f64, key: &CloudKey) -> Result<ParticleCloud> {
    let h = step_size(p, horizon)?;
    let initials = paths::draw_initials(model, n, key)?;
    let table = paths::draw_increments(n, p, h, model.dim(), key)?;
    euler_from(model, &initials, &table, key)
}

/// Coefficients for `G = ∫_0^T e^{−α(T−s)} dW_s` given the increments on a
/// uniform grid: `G = Σ_k a_k ΔW_k + r Z` with `Z` independent of the grid.
fn ou_bridge_weights(alpha: f64, h: f64, steps: usize) -> (Vec<f64>, f64) {
    // Over one step of length h: Cov(∫e^{−αu}dW, ΔW) = c, Var = s².
    let c = -(-alpha * h).exp_m1() / alpha;
    let s2 = -(-2.0 * alpha * h).exp_m1() / (2.0 * alpha);
    let resid = (s2 - c * c / h).max(0.0);
    let mut weights = Vec::with_capacity(steps);
    let mut r2 = ExactSum::new();
    for k in 0..steps {
        let decay = (-alpha * h * (steps - 1 - k) as f64).exp();
        weights.push(decay * c / h);
        r2.add(decay * decay * resid);
    }
    (weights, r2.value().sqrt())
}

/// Exact simulation of mean-field OU driven by the Brownian motion whose grid
/// increments are `table`.
///
/// The cloud splits into its empirical mean `M`, driven by the average
/// Brownian motion, and deviations `D_i` that are OU processes:
/// `X_i(T) = M_0 + S W̄_T + e^{−αT} D_i(0) + S (G_i − Ḡ)`. The part of `G_i`
/// not determined by the grid comes from the particle's bridge stream, so the
/// result depends on `key` and the global index `first + i` of each particle.
pub fn exact_linear_from(
    model: &ModelSpec,
    initials: &EmpiricalMeasure,
    table: &IncrementTable,
    key: &CloudKey,
    first: usize,
) -> Result<ParticleCloud> {
    let (alpha, sigma) = model
        .linear_parts()
        .ok_or_else(|| Error::unsupported(format!("exact simulation needs a linear model, got {}", model.tag())))?;
    check_inputs(model, initials, table)?;
    let d = model.dim();
    let n = initials.len();
    let horizon = table.horizon();
    let (weights, resid) = ou_bridge_weights(alpha, table.h(), table.steps());

    let w_total = table.totals();
    let mut g = vec![0.0; n * d];
    for (i, gi) in g.chunks_exact_mut(d).enumerate() {
        let index = u32::try_from(first + i).map_err(|_| Error::config("particle index exceeds u32"))?;
        let mut bridge = key.particle(index, Channel::Bridge).stream();
        for (j, gij) in gi.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, wk) in weights.iter().enumerate() {
                acc += wk * table.increment(k, i)[j];
            }
            *gij = acc + resid * bridge.next_normal();
        }
    }

    let x0 = initials.as_flat();
    let mean_of = |v: &[f64]| -> Vec<f64> {
        (0..d)
            .map(|j| v.iter().skip(j).step_by(d).copied().collect::<ExactSum>().value() / n as f64)
            .collect()
    };
    let m0 = mean_of(x0);
    let w_bar = mean_of(&w_total);
    let g_bar = mean_of(&g);
    let apply = |v: &[f64]| -> Vec<f64> {
        (0..d)
            .map(|r| sigma[r * d..(r + 1) * d].iter().zip(v).map(|(s, x)| s * x).sum())
            .collect()
    };
    let shift = apply(&w_bar);
    let m_t: Vec<f64> = m0.iter().zip(&shift).map(|(a, b)| a + b).collect();
    let decay = (-alpha * horizon).exp();

    let mut x = vec![0.0; n * d];
    let mut dev = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            dev[j] = g[i * d + j] - g_bar[j];
        }
        let noise = apply(&dev);
        for j in 0..d {
            x[i * d + j] = m_t[j] + decay * (x0[i * d + j] - m0[j]) + noise[j];
        }
    }
    check_finite_states(&x, table.steps())?;
    Ok(ParticleCloud {
        states: EmpiricalMeasure::from_flat_unchecked(x, d),
        t: horizon,
        model_tag: model.tag().to_string(),
        provenance: *key,
        interaction_units: units(n, 1),
    })
}

/// Exact terminal cloud of the `N`-particle linear system at time `T`.
pub fn exact_linear_terminal(model: &ModelSpec, n: usize, horizon: f64, key: &CloudKey) -> Result<ParticleCloud> {
    if model.linear_parts().is_none() {
        return Err(Error::unsupported(format!(
            "exact simulation needs a linear model, got {}",
            model.tag()
        )));
    }
    step_size(1, horizon)?;
    let initials = paths::draw_initials(model, n, key)?;
    let table = paths::draw_increments(n, 1, horizon, model.dim(), key)?;
    exact_linear_from(model, &initials, &table, key, 0)
}

fn halves(n: usize) -> [Range<usize>; 2] {
    [0..n, n..2 * n]
}

/// Fine Euler system of `2N` particles at step `T/p` and its halves of `N`
/// particles at step `2T/p`, interacting only within themselves.
pub fn antithetic_triple_euler(
    model: &ModelSpec,
    n: usize,
    p: usize,
    horizon: f64,
    key: &CloudKey,
) -> Result<AntitheticTriple> {
    let (fine, [half1, half2]) = euler_with_halves(model, n, p, horizon, key, 2)?;
    Ok(AntitheticTriple {
        fine,
        half1: half1.expect("first half"),
        half2: half2.expect("second half"),
    })
}

/// Fine Euler system of `n` particles and the coarse system formed by its
/// first `n/2` particles at double step (the non-antithetic coupling).
pub fn coarse_pair_euler(
    model: &ModelSpec,
    n: usize,
    p: usize,
    horizon: f64,
    key: &CloudKey,
) -> Result<(ParticleCloud, ParticleCloud)> {
    if n % 2 != 0 {
        return Err(Error::config(format!("fine particle count {n} must be even")));
    }
    let (fine, [half1, _]) = euler_with_halves(model, n / 2, p, horizon, key, 1)?;
    Ok((fine, half1.expect("first half")))
}

fn euler_with_halves(
    model: &ModelSpec,
    n: usize,
    p: usize,
    horizon: f64,
    key: &CloudKey,
    count: usize,
) -> Result<(ParticleCloud, [Option<ParticleCloud>; 2])> {
    if p % 2 != 0 {
        return Err(Error::config(format!("step count {p} must be even for coarse coupling")));
    }
    if n == 0 {
        return Err(Error::config("half systems need at least one particle"));
    }
    let h = step_size(p, horizon)?;
    let initials = paths::draw_initials(model, 2 * n, key)?;
    let table = paths::draw_increments(2 * n, p, h, model.dim(), key)?;
    let fine = euler_from(model, &initials, &table, key)?;
    let coarse = table.coarsen()?;
    let mut out = [None, None];
    for (slot, range) in out.iter_mut().zip(halves(n)).take(count) {
        let init = initials.subset(range.clone())?;
        let inc = coarse.select_particles(range)?;
        *slot = Some(euler_from(model, &init, &inc, key)?);
    }
    Ok((fine, out))
}

/// Exact fine system of `2N` particles and its halves of `N`, for the linear model.
pub fn antithetic_triple_exact(model: &ModelSpec, n: usize, horizon: f64, key: &CloudKey) -> Result<AntitheticTriple> {
    if model.linear_parts().is_none() {
        return Err(Error::unsupported(format!(
            "exact simulation needs a linear model, got {}",
            model.tag()
        )));
    }
    if n == 0 {
        return Err(Error::config("half systems need at least one particle"));
    }
    step_size(1, horizon)?;
    let initials = paths::draw_initials(model, 2 * n, key)?;
    let table = paths::draw_increments(2 * n, 1, horizon, model.dim(), key)?;
    let fine = exact_linear_from(model, &initials, &table, key, 0)?;
    let [r1, r2] = halves(n);
    let half1 = exact_linear_from(model, &initials.subset(r1.clone())?, &table.select_particles(r1.clone())?, key, r1.start)?;
    let half2 = exact_linear_from(model, &initials.subset(r2.clone())?, &table.select_particles(r2.clone())?, key, r2.start)?;
    Ok(AntitheticTriple { fine, half1, half2 })
}

/// Interacting system `Y` and mean-field system `X` under shared noise.
#[derive(Clone, Debug)]
pub struct CoupledPair {
    pub y: ParticleCloud,
    pub x: ParticleCloud,
    /// Per particle, the maximum over grid times of `|X_i − Y_i|⁴`.
    pub max_fourth: Vec<f64>,
}

impl CoupledPair {
    /// `(1/N) Σ_i max_k |X_i(t_k) − Y_i(t_k)|⁴`.
    pub fn statistic(&self) -> f64 {
        self.max_fourth.iter().copied().collect::<ExactSum>().value() / self.max_fourth.len() as f64
    }
}

/// Euler paths of `Y^{i,N}` (interacting) and `X^i` (driven by the exact law
/// `μ_t`) from the same initial conditions and increments.
pub fn coupled_pair(model: &ModelSpec, n: usize, p: usize, horizon: f64, key: &CloudKey) -> Result<CoupledPair> {
    let reference = model
        .analytic()
        .filter(|_| model.linear_parts().is_some())
        .ok_or_else(|| Error::unsupported(format!("{} has no closed-form law flow", model.tag())))?;
    let h = step_size(p, horizon)?;
    let d = model.dim();
    let initials = paths::draw_initials(model, n, key)?;
    let table = paths::draw_increments(n, p, h, d, key)?;
    let mut y = initials.as_flat().to_vec();
    let mut x = y.clone();
    let mut max_fourth = vec![0.0; n];
    let mut b = vec![0.0; d];
    let mut scratch = Vec::new();
    for k in 0..p {
        let t = k as f64 * h;
        let fy = model.freeze(&y);
        let fx = Frozen::law_mean(reference.mean(t));
        let dw = table.step(k);
        for i in 0..n {
            let dwi = &dw[i * d..(i + 1) * d];
            euler_particle(model, &fy, &mut y[i * d..(i + 1) * d], dwi, h, &mut b, &mut scratch);
            euler_particle(model, &fx, &mut x[i * d..(i + 1) * d], dwi, h, &mut b, &mut scratch);
            let e2: f64 = (0..d).map(|j| (x[i * d + j] - y[i * d + j]).powi(2)).sum();
            max_fourth[i] = f64::max(max_fourth[i], e2 * e2);
        }
        check_finite_states(&y, k)?;
        check_finite_states(&x, k)?;
    }
    let cloud = |states: Vec<f64>, cost| ParticleCloud {
        states: EmpiricalMeasure::from_flat_unchecked(states, d),
        t: table.horizon(),
        model_tag: model.tag().to_string(),
        provenance: *key,
        interaction_units: cost,
    };
    Ok(CoupledPair {
        y: cloud(y, units(n, p)),
        x: cloud(x, (n as u64) * (p as u64)),
        max_fourth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{self, Diffusion, Drift, InitialLaw};
    use std::f64::consts::SQRT_2;

    fn sample_var(v: &[f64]) -> f64 {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    }

    fn key(cloud: u32) -> CloudKey {
        CloudKey::new(2024, 3, cloud)
    }

    #[test]
    fn static_model_keeps_initial_states() {
        let model = ModelSpec::frozen(InitialLaw::gaussian(0.0, 1.0).unwrap()).unwrap();
        let init = paths::draw_initials(&model, 16, &key(0)).unwrap();
        let cloud = euler_terminal(&model, 16, 7, 1.0, &key(0)).unwrap();
        assert_eq!(cloud.states, init);
        assert_eq!(cloud.interaction_units, 16 * 16 * 7);
        assert!(matches!(euler_terminal(&model, 16, 0, 1.0, &key(0)), Err(Error::Config(_))));
    }

    #[test]
    fn constant_drift_is_integrated_exactly() {
        // Steps and horizon are dyadic so every partial sum is representable.
        let law = InitialLaw::gaussian(1.0, 2.0).unwrap();
        let model = ModelSpec::custom("const", Drift::Constant(vec![0.75]), Diffusion::scalar(1, 0.0), law, 4).unwrap();
        for p in [1, 2, 8, 64] {
            let init = paths::draw_initials(&model, 8, &key(1)).unwrap();
            let cloud = euler_terminal(&model, 8, p, 2.0, &key(1)).unwrap();
            for (x, x0) in cloud.states.as_flat().iter().zip(init.as_flat()) {
                assert!((x - (x0 + 1.5)).abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0), "p={p}");
            }
        }
    }

    #[test]
    fn ou_stationary_variance() {
        let model = models::mean_field_ou(1.0, SQRT_2, 0.0, 1.0).unwrap();
        let cloud = euler_terminal(&model, 1 << 12, 1 << 7, 1.0, &key(2)).unwrap();
        let v = sample_var(cloud.states.as_flat());
        assert!((v - 1.0).abs() < 0.08, "variance {v}");
    }

    #[test]
    fn blowup_is_reported_with_step() {
        let law = InitialLaw::dirac(vec![1.0]).unwrap();
        let f: models::DriftFn = std::sync::Arc::new(|x, _| vec![x[0] * x[0] * 1e200]);
        let model = ModelSpec::custom("explosive", Drift::Custom { name: "x^2".into(), f }, Diffusion::scalar(1, 0.0), law, 0)
            .unwrap();
        match euler_terminal(&model, 2, 10, 1.0, &key(0)) {
            Err(Error::Numerical { step, .. }) => assert!(step < 10),
            other => panic!("expected blowup, got {other:?}"),
        }
    }

    #[test]
    fn exact_linear_examples() {
        let model = models::mean_field_ou(1.0, 0.0, 1.0, 0.0).unwrap();
        let cloud = exact_linear_terminal(&model, 5, 1.0, &key(0)).unwrap();
        assert!(cloud.states.as_flat().iter().all(|&x| x == 1.0));
        assert_eq!(cloud.interaction_units, 25);

        // Two atoms collapsing to their mean; compare with fine Euler.
        let alpha = 5.0;
        let model = models::mean_field_ou(alpha, 0.0, 0.0, 1.0).unwrap();
        let init = EmpiricalMeasure::from_scalars(&[0.0, 2.0]).unwrap();
        let one = paths::draw_increments(2, 1, 1.0, 1, &key(0)).unwrap();
        let exact = exact_linear_from(&model, &init, &one, &key(0), 0).unwrap();
        let e = exact.states.as_flat();
        let dev = (-alpha).exp();
        assert!((e[0] - (1.0 - dev)).abs() < 1e-14 && (e[1] - (1.0 + dev)).abs() < 1e-14);
        let fine = paths::draw_increments(2, 1 << 14, 1.0 / (1 << 14) as f64, 1, &key(0)).unwrap();
        let euler = euler_from(&model, &init, &fine, &key(0)).unwrap();
        for (a, b) in e.iter().zip(euler.states.as_flat()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }

        let kur = models::kuramoto(1.0, 1.0).unwrap();
        assert!(matches!(exact_linear_terminal(&kur, 4, 1.0, &key(0)), Err(Error::Unsupported(_))));
        assert!(matches!(antithetic_triple_exact(&kur, 4, 1.0, &key(0)), Err(Error::Unsupported(_))));
    }

    #[test]
    fn exact_and_euler_share_noise() {
        let model = models::mean_field_ou(1.0, 1.0, 0.0, 0.5).unwrap();
        let n = 1 << 8;
        let p = 1 << 10;
        let k = key(4);
        let init = paths::draw_initials(&model, n, &k).unwrap();
        let table = paths::draw_increments(n, p, 1.0 / p as f64, 1, &k).unwrap();
        let exact = exact_linear_from(&model, &init, &table, &k, 0).unwrap();
        let euler = euler_from(&model, &init, &table, &k).unwrap();
        let mean = |c: &ParticleCloud| c.states.mean()[0];
        assert!((mean(&exact) - mean(&euler)).abs() <= 5e-3);
        // Pathwise closeness, not only in the mean.
        let worst = exact
            .states
            .as_flat()
            .iter()
            .zip(euler.states.as_flat())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 5e-3, "max pathwise gap {worst}");
    }

    #[test]
    fn exact_and_euler_agree_in_distribution() {
        // Averaged over 20 independent clouds of 2¹⁰ particles each: a single
        // cloud's sample variance has standard deviation ≈ 0.04.
        let model = models::mean_field_ou(1.0, SQRT_2, 0.0, 0.0).unwrap();
        let (mut ve, mut vu) = (0.0, 0.0);
        for c in 0..20 {
            ve += sample_var(exact_linear_terminal(&model, 1 << 10, 1.0, &key(c)).unwrap().states.as_flat()) / 20.0;
            vu += sample_var(euler_terminal(&model, 1 << 10, 1 << 10, 1.0, &key(100 + c)).unwrap().states.as_flat()) / 20.0;
        }
        assert!((ve - vu).abs() < 0.05, "{ve} vs {vu}");
        let target = 1.0 - (-2.0f64).exp();
        assert!((ve - target).abs() < 0.03, "exact variance {ve}");
    }

    #[test]
    fn mean_is_conserved_without_noise() {
        let model = models::mean_field_ou(1.5, 0.0, 0.3, 2.0).unwrap();
        let n = 64;
        let init = paths::draw_initials(&model, n, &key(0)).unwrap();
        let m0 = init.mean()[0];
        let mut x = init.as_flat().to_vec();
        let p = 100;
        let table = paths::draw_increments(n, p, 0.01, 1, &key(0)).unwrap();
        for k in 0..p {
            let one = IncrementTable::from_raw(table.step(k).to_vec(), 1, n, 1, 0.01).unwrap();
            euler_evolve(&model, &mut x, &one).unwrap();
            let m = EmpiricalMeasure::from_scalars(&x).unwrap().mean()[0];
            assert!((m - m0).abs() < 1e-12 * (k + 1) as f64);
        }
    }

    #[test]
    fn antithetic_halves_equal_direct_coarse_runs() {
        for model in [
            models::mean_field_ou(1.0, 1.0, 0.0, 0.5).unwrap(),
            models::kuramoto(1.5, 0.7).unwrap(),
        ] {
            let n = 16;
            let p = 8;
            let k = key(9);
            let triple = antithetic_triple_euler(&model, n, p, 1.0, &k).unwrap();
            for (range, half) in [(0..n, &triple.half1), (n..2 * n, &triple.half2)] {
                let init = paths::sample_law(model.initial_law(), range.clone(), &k).unwrap();
                let inc = paths::draw_increments_range(range, p, 1.0 / p as f64, 1, &k).unwrap().coarsen().unwrap();
                let direct = euler_from(&model, &init, &inc, &k).unwrap();
                assert_eq!(direct.states.as_flat(), half.states.as_flat());
            }
            assert_eq!(triple.interaction_units(), (32 * 32 * 8 + 2 * 16 * 16 * 4) as u64);
        }
        let model = models::mean_field_ou(1.0, 1.0, 0.0, 0.5).unwrap();
        assert!(matches!(antithetic_triple_euler(&model, 4, 3, 1.0, &key(0)), Err(Error::Config(_))));
    }

    #[test]
    fn exact_halves_equal_direct_runs() {
        let model = models::mean_field_ou(0.8, 1.2, 0.1, 0.5).unwrap();
        let n = 12;
        let k = key(3);
        let triple = antithetic_triple_exact(&model, n, 1.0, &k).unwrap();
        assert_eq!(triple.half1.states, exact_linear_terminal(&model, n, 1.0, &k).unwrap().states);
        let init = paths::sample_law(model.initial_law(), n..2 * n, &k).unwrap();
        let inc = paths::draw_increments_range(n..2 * n, 1, 1.0, 1, &k).unwrap();
        let direct = exact_linear_from(&model, &init, &inc, &k, n).unwrap();
        assert_eq!(triple.half2.states, direct.states);
    }

    #[test]
    fn degenerate_triples_have_zero_difference() {
        let model = ModelSpec::frozen(InitialLaw::gaussian(0.0, 1.0).unwrap()).unwrap();
        let phi = Functional::by_name("mean", 1).unwrap();
        let t = antithetic_triple_euler(&model, 8, 4, 1.0, &key(0)).unwrap();
        assert_eq!(t.difference(&phi).unwrap(), 0.0);

        let model = models::mean_field_ou(1.0, 0.0, 2.0, 0.0).unwrap();
        let t = antithetic_triple_exact(&model, 8, 1.0, &key(0)).unwrap();
        assert_eq!(t.fine.states.as_flat(), &[2.0; 16]);
        for name in Functional::NAMES {
            let phi = Functional::by_name(name, 1).unwrap();
            assert_eq!(t.difference(&phi).unwrap(), 0.0);
        }
    }

    #[test]
    fn linear_exact_difference_is_rounding_small() {
        // The linear correction vanishes in exact arithmetic for every α,
        // because the fine mean is the average of the half means.
        let phi = Functional::by_name("mean", 1).unwrap();
        for alpha in [0.1, 1.0, 4.0] {
            let model = models::mean_field_ou(alpha, 1.0, 0.0, 1.0).unwrap();
            for c in 0..20 {
                let t = antithetic_triple_exact(&model, 32, 1.0, &key(c)).unwrap();
                assert!(t.difference(&phi).unwrap().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relabeling_particles_preserves_functionals() {
        let model = models::kuramoto(1.0, 0.5).unwrap();
        let n = 10;
        let k = key(7);
        let init = paths::draw_initials(&model, n, &k).unwrap();
        let table = paths::draw_increments(n, 6, 1.0 / 6.0, 1, &k).unwrap();
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
        let init_p = EmpiricalMeasure::from_scalars(&perm.iter().map(|&i| init.as_flat()[i]).collect::<Vec<_>>()).unwrap();
        let mut raw = Vec::new();
        for s in 0..6 {
            raw.extend(perm.iter().map(|&i| table.increment(s, i)[0]));
        }
        let table_p = IncrementTable::from_raw(raw, 6, n, 1, 1.0 / 6.0).unwrap();
        let a = euler_from(&model, &init, &table, &k).unwrap();
        let b = euler_from(&model, &init_p, &table_p, &k).unwrap();
        for name in Functional::NAMES {
            let phi = Functional::by_name(name, 1).unwrap();
            assert_eq!(phi.evaluate(&a.states).unwrap(), phi.evaluate(&b.states).unwrap());
        }
    }

    #[test]
    fn coupled_pair_examples() {
        let model = models::mean_field_ou(1.0, 0.0, 0.5, 0.0).unwrap();
        let pair = coupled_pair(&model, 8, 16, 1.0, &key(0)).unwrap();
        assert_eq!(pair.statistic(), 0.0);
        assert_eq!(pair.x.states, pair.y.states);

        // N = 1: Y's own mean moves with its noise, X's does not.
        let model = models::mean_field_ou(1.0, 1.0, 0.0, 1.0).unwrap();
        let stats: Vec<f64> = (0..200).map(|c| coupled_pair(&model, 1, 32, 1.0, &key(c)).unwrap().statistic()).collect();
        let avg = stats.iter().sum::<f64>() / stats.len() as f64;
        assert!(avg > 0.05 && avg < 5.0, "N=1 statistic {avg}");

        let kur = models::kuramoto(1.0, 1.0).unwrap();
        assert!(matches!(coupled_pair(&kur, 4, 4, 1.0, &key(0)), Err(Error::Unsupported(_))));
    }
}
