//! Hierarchically keyed random streams and Brownian increment tables.
//!
//! Every random number is addressed by `(master, level, cloud, particle,
//! channel, index)` through a counter-based generator (Philox4x64-10), so
//! no draw depends on how many other draws happened before it. Two
//! consequences the estimators rely on:
//!
//! * a particle's initial condition and Brownian path depend only on its own
//!   key, so the first `N` particles of a `2N` draw equal an `N` draw;
//! * clouds can be simulated in any order, on any thread, with identical
//!   results.

use std::ops::Range;

use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::models::{InitialLaw, ModelSpec};

const PHILOX_M0: u64 = 0xD2E7_470E_E14C_6C93;
const PHILOX_M1: u64 = 0xCA5A_8263_9512_1157;
const PHILOX_W0: u64 = 0x9E37_79B9_7F4A_7C15;
const PHILOX_W1: u64 = 0xBB67_AE85_84CA_A73B;

/// Second key word; separates this crate's streams from other Philox users
/// sharing a master seed.
const STREAM_DOMAIN: u64 = 0x6d76_6d63_7061_7468;

#[inline]
fn mulhilo(a: u64, b: u64) -> (u64, u64) {
    let p = u128::from(a) * u128::from(b);
    ((p >> 64) as u64, p as u64)
}

/// The Philox4x64 bijection with 10 rounds.
pub fn philox4x64_10(counter: [u64; 4], key: [u64; 2]) -> [u64; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// Uniform on the open interval (0, 1) from the top 52 bits; both endpoints
/// `2⁻⁵³` and `1 − 2⁻⁵³` are representable.
#[inline]
pub fn open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Standard normal quantile.
#[inline]
pub fn standard_normal_quantile(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

/// What a stream is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    Initial,
    Brownian,
    /// Residual draws that complete a Brownian path beyond its increment grid.
    Bridge,
}

impl Channel {
    fn tag(self) -> u64 {
        match self {
            Channel::Initial => 1,
            Channel::Brownian => 2,
            Channel::Bridge => 3,
        }
    }
}

/// Address of one simulated cloud `(ℓ, θ)` under a master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CloudKey {
    pub master: u64,
    pub level: u32,
    pub cloud: u32,
}

impl CloudKey {
    pub fn new(master: u64, level: u32, cloud: u32) -> Self {
        Self {
            master,
            level,
            cloud,
        }
    }

    pub fn particle(&self, particle: u32, channel: Channel) -> SeedKey {
        SeedKey {
            master: self.master,
            level: self.level,
            cloud: self.cloud,
            particle,
            channel,
        }
    }
}

/// Full address of one particle's stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedKey {
    pub master: u64,
    pub level: u32,
    pub cloud: u32,
    pub particle: u32,
    pub channel: Channel,
}

impl SeedKey {
    pub fn stream(&self) -> ParticleStream {
        ParticleStream::new(*self)
    }

    fn counter(&self, block: u64) -> [u64; 4] {
        [
            block,
            u64::from(self.particle) | (self.channel.tag() << 32),
            u64::from(self.cloud) | (u64::from(self.level) << 32),
            0,
        ]
    }

    /// The `index`-th raw 64-bit word of this stream.
    pub fn word_at(&self, index: u64) -> u64 {
        philox4x64_10(self.counter(index / 4), [self.master, STREAM_DOMAIN])[(index % 4) as usize]
    }
}

/// Sequential reader over one particle's stream.
#[derive(Clone, Debug)]
pub struct ParticleStream {
    key: SeedKey,
    block: u64,
    buf: [u64; 4],
    pos: usize,
}

impl ParticleStream {
    pub fn new(key: SeedKey) -> Self {
        Self {
            key,
            block: 0,
            buf: [0; 4],
            pos: 4,
        }
    }

    pub fn key(&self) -> &SeedKey {
        &self.key
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        if self.pos == 4 {
            self.buf = philox4x64_10(self.key.counter(self.block), [self.key.master, STREAM_DOMAIN]);
            self.block += 1;
            self.pos = 0;
        }
        let v = self.buf[self.pos];
        self.pos += 1;
        v
    }

    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        open_unit(self.next_u64())
    }

    /// Standard normal by inversion: exactly one word per draw.
    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        standard_normal_quantile(self.next_uniform())
    }
}

fn particle_index(i: usize) -> Result<u32> {
    u32::try_from(i).map_err(|_| Error::config(format!("particle index {i} exceeds u32")))
}

/// Initial conditions `ξ_i` for particles 0..n of a cloud.
pub fn draw_initials(model: &ModelSpec, n: usize, key: &CloudKey) -> Result<EmpiricalMeasure> {
    sample_law(model.initial_law(), 0..n, key)
}

/// Draws from `law` for the given particle indices, one stream per particle.
pub fn sample_law(law: &InitialLaw, particles: Range<usize>, key: &CloudKey) -> Result<EmpiricalMeasure> {
    if particles.is_empty() {
        return Err(Error::config("need at least one particle"));
    }
    let dim = law.dim();
    let mut points = Vec::with_capacity(particles.len() * dim);
    for i in particles {
        let mut stream = key.particle(particle_index(i)?, Channel::Initial).stream();
        let x = law.sample(&mut stream);
        if x.len() != dim {
            return Err(Error::config(format!(
                "initial law '{}' produced {} coordinates, expected {dim}",
                law.descriptor(),
                x.len()
            )));
        }
        points.extend_from_slice(&x);
    }
    EmpiricalMeasure::new(points, dim)
}

/// Number of steps `T/h`, which must be a positive integer.
pub fn steps_for(horizon: f64, h: f64) -> Result<usize> {
    if !(horizon > 0.0 && h > 0.0) {
        return Err(Error::config("horizon and step must be positive"));
    }
    let ratio = horizon / h;
    let p = ratio.round();
    if p < 1.0 || (ratio - p).abs() > 1e-9 * p {
        return Err(Error::config(format!(
            "horizon {horizon} is not an integer multiple of step {h}"
        )));
    }
    Ok(p as usize)
}

/// Gaussian increments `ΔW^i_k ~ N(0, h)` laid out as `(step, particle, dim)`.
#[derive(Clone, Debug, PartialEq)]
pub struct IncrementTable {
    dw: Vec<f64>,
    steps: usize,
    particles: usize,
    dim: usize,
    h: f64,
}

/// Increment table for particles 0..n, `p` steps of size `h`.
pub fn draw_increments(n: usize, p: usize, h: f64, d: usize, key: &CloudKey) -> Result<IncrementTable> {
    draw_increments_range(0..n, p, h, d, key)
}

/// Increment table for the given particle indices.
pub fn draw_increments_range(
    particles: Range<usize>,
    p: usize,
    h: f64,
    d: usize,
    key: &CloudKey,
) -> Result<IncrementTable> {
    if p == 0 {
        return Err(Error::config("need at least one time step"));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::config(format!("step size must be positive, got {h}")));
    }
    if d == 0 || particles.is_empty() {
        return Err(Error::config("need positive dimension and particle count"));
    }
    let n = particles.len();
    let scale = h.sqrt();
    let mut dw = vec![0.0; p * n * d];
    for (local, i) in particles.enumerate() {
        let mut stream = key.particle(particle_index(i)?, Channel::Brownian).stream();
        for k in 0..p {
            let base = (k * n + local) * d;
            for slot in &mut dw[base..base + d] {
                *slot = scale * stream.next_normal();
            }
        }
    }
    Ok(IncrementTable {
        dw,
        steps: p,
        particles: n,
        dim: d,
        h,
    })
}

impl IncrementTable {
    /// Builds a table from raw `(step, particle, dim)` data.
    pub fn from_raw(dw: Vec<f64>, steps: usize, particles: usize, dim: usize, h: f64) -> Result<Self> {
        if steps == 0 || particles == 0 || dim == 0 || h.is_nan() || h <= 0.0 {
            return Err(Error::config("table shape and step must be positive"));
        }
        if dw.len() != steps * particles * dim {
            return Err(Error::config("table data does not match its shape"));
        }
        Ok(Self {
            dw,
            steps,
            particles,
            dim,
            h,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn horizon(&self) -> f64 {
        self.h * self.steps as f64
    }

    /// Increment of `particle` over step `k`.
    #[inline]
    pub fn increment(&self, k: usize, particle: usize) -> &[f64] {
        let base = (k * self.particles + particle) * self.dim;
        &self.dw[base..base + self.dim]
    }

    /// All increments of step `k`, particle-major.
    #[inline]
    pub fn step(&self, k: usize) -> &[f64] {
        let w = self.particles * self.dim;
        &self.dw[k * w..(k + 1) * w]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.dw
    }

    /// Table at step `2h`: entry `k` is `fine[2k] + fine[2k+1]`, in that order.
    pub fn coarsen(&self) -> Result<IncrementTable> {
        if self.steps % 2 != 0 {
            return Err(Error::config(format!(
                "cannot coarsen a table with an odd number of steps ({})",
                self.steps
            )));
        }
        let w = self.particles * self.dim;
        let steps = self.steps / 2;
        let mut dw = Vec::with_capacity(steps * w);
        for k in 0..steps {
            let a = &self.dw[2 * k * w..(2 * k + 1) * w];
            let b = &self.dw[(2 * k + 1) * w..(2 * k + 2) * w];
            dw.extend(a.iter().zip(b).map(|(x, y)| x + y));
        }
        Ok(IncrementTable {
            dw,
            steps,
            particles: self.particles,
            dim: self.dim,
            h: 2.0 * self.h,
        })
    }

    /// Coarsens `factor` times; `factor` must be a power of two dividing the step count.
    pub fn coarsen_by(&self, factor: usize) -> Result<IncrementTable> {
        if factor == 0 || !factor.is_power_of_two() {
            return Err(Error::config(format!("coarsening factor {factor} is not a power of two")));
        }
        let mut table = self.clone();
        let mut f = factor;
        while f > 1 {
            table = table.coarsen()?;
            f /= 2;
        }
        Ok(table)
    }

    /// Columns for the particles in `range`, renumbered from zero.
    pub fn select_particles(&self, range: Range<usize>) -> Result<IncrementTable> {
        if range.is_empty() || range.end > self.particles {
            return Err(Error::config(format!(
                "particle range {range:?} out of bounds for {} particles",
                self.particles
            )));
        }
        let n = range.len();
        let mut dw = Vec::with_capacity(self.steps * n * self.dim);
        for k in 0..self.steps {
            let step = self.step(k);
            dw.extend_from_slice(&step[range.start * self.dim..range.end * self.dim]);
        }
        Ok(IncrementTable {
            dw,
            steps: self.steps,
            particles: n,
            dim: self.dim,
            h: self.h,
        })
    }

    /// `W^i_T − W^i_0` per particle and coordinate.
    ///
    /// Steps are combined by bottom-up pairwise reduction (adjacent pairs
    /// first, an odd tail carried up), whose first pass is exactly
    /// [`coarsen`](Self::coarsen). Fine and coarsened tables therefore have
    /// bit-identical totals.
    pub fn totals(&self) -> Vec<f64> {
        let w = self.particles * self.dim;
        let mut rows: Vec<Vec<f64>> = (0..self.steps).map(|k| self.step(k).to_vec()).collect();
        while rows.len() > 1 {
            let mut next = Vec::with_capacity(rows.len().div_ceil(2));
            let mut it = rows.into_iter();
            while let Some(a) = it.next() {
                match it.next() {
                    Some(b) => next.push(a.iter().zip(&b).map(|(x, y)| x + y).collect()),
                    None => next.push(a),
                }
            }
            rows = next;
        }
        rows.pop().unwrap_or_else(|| vec![0.0; w])
    }
}
