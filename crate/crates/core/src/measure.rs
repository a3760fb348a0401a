//! Empirical measures on ℝ^d and the functionals evaluated on them.
//!
//! A measure is a uniform-weight point cloud `μ^N = (1/N) Σ δ_{x_i}`. All
//! integrals against a measure are accumulated with [`ExactSum`], so a
//! functional's value depends only on the multiset of points: permuting the
//! cloud, or splitting the reduction across threads, gives bit-identical
//! results.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Largest cloud size accepted by [`w2_exact_small`].
pub const DEFAULT_W2_CAP: usize = 10;

/// Clouds up to this size are matched by enumerating every permutation.
const BRUTE_FORCE_MAX: usize = 8;

/// Exact floating-point accumulator with a correctly rounded result.
///
/// Keeps the running sum as a list of non-overlapping partials (Shewchuk's
/// expansion arithmetic, the algorithm behind Python's `math.fsum`). The
/// represented value is the exact real sum of every input, so the rounded
/// result is independent of insertion order.
///
/// Inputs must be finite and the exact sum must not overflow.
#[derive(Clone, Debug, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let mut x = value;
        let mut kept = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        self.partials.truncate(kept);
        self.partials.push(x);
    }

    /// Adds every partial of `other`, scaled by `sign` (±1, which is exact).
    pub fn merge(&mut self, other: &ExactSum, sign: f64) {
        for &p in &other.partials {
            self.add(sign * p);
        }
    }

    /// The exact sum rounded to the nearest `f64` (ties to even).
    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let Some(mut n) = p.len().checked_sub(1) else {
            return 0.0;
        };
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // Half-way case: the remaining partials decide the rounding direction.
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        // Collapse -0.0 so the sign of zero never depends on input order.
        hi + 0.0
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = ExactSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Correctly rounded sum of a slice.
pub fn exact_sum(values: &[f64]) -> f64 {
    values.iter().copied().collect::<ExactSum>().value()
}

/// Uniform-weight point cloud on ℝ^d.
///
/// Points are stored row-major: point `i` occupies `points[i*d..(i+1)*d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<f64>,
    dim: usize,
}

impl EmpiricalMeasure {
    /// Builds a measure from row-major coordinates.
    pub fn new(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("measure dimension must be positive"));
        }
        if points.is_empty() {
            return Err(Error::config("measure needs at least one point"));
        }
        if points.len() % dim != 0 {
            return Err(Error::config(format!(
                "{} coordinates do not split into points of dimension {dim}",
                points.len()
            )));
        }
        if let Some(pos) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!(
                "point {} has a non-finite coordinate",
                pos / dim
            )));
        }
        Ok(Self { points, dim })
    }

    /// One-dimensional measure with the given atoms.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec(), 1)
    }

    /// Measure from a list of equal-length points.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::config("points have differing dimensions"));
        }
        Self::new(points.concat(), dim)
    }

    /// Caller guarantees the invariants (used on simulation output that was
    /// already checked for finiteness).
    pub(crate) fn from_flat_unchecked(points: Vec<f64>, dim: usize) -> Self {
        debug_assert!(dim > 0 && !points.is_empty() && points.len() % dim == 0);
        Self { points, dim }
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    /// Always false; present for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.points
    }

    /// Sub-cloud made of the points with indices in `range`.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.is_empty() || range.end > self.len() {
            return Err(Error::config(format!(
                "subset {range:?} out of bounds for {} points",
                self.len()
            )));
        }
        Ok(Self {
            points: self.points[range.start * self.dim..range.end * self.dim].to_vec(),
            dim: self.dim,
        })
    }

    /// Every atom repeated `copies` times; the measure itself is unchanged.
    pub fn replicate(&self, copies: usize) -> Result<Self> {
        if copies == 0 {
            return Err(Error::config("replication factor must be positive"));
        }
        let mut points = Vec::with_capacity(self.points.len() * copies);
        for p in self.points() {
            for _ in 0..copies {
                points.extend_from_slice(p);
            }
        }
        Ok(Self {
            points,
            dim: self.dim,
        })
    }

    /// Exact mean of every coordinate.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.len() as f64;
        (0..self.dim)
            .map(|j| self.points().map(|p| p[j]).collect::<ExactSum>().value() / n)
            .collect()
    }

    /// `∫|x|² dμ`.
    pub fn second_moment(&self) -> f64 {
        self.points().map(squared_norm).collect::<ExactSum>().value() / self.len() as f64
    }
}

fn squared_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Inner function `G` of a functional `F(∫G dμ)`.
pub type IntegrandFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Integrand {
    /// `G(x) = x_j`.
    Coordinate(usize),
    /// `G(x) = |x|²`.
    SquaredNorm,
    /// User-supplied `G`.
    Custom {
        name: String,
        g: IntegrandFn,
    },
}

impl Integrand {
    fn apply(&self, x: &[f64]) -> f64 {
        match self {
            Integrand::Coordinate(j) => x[*j],
            Integrand::SquaredNorm => squared_norm(x),
            Integrand::Custom { g, .. } => g(x),
        }
    }

    fn integral(&self, mu: &EmpiricalMeasure) -> f64 {
        self.accumulate(mu).value() / mu.len() as f64
    }

    fn accumulate(&self, mu: &EmpiricalMeasure) -> ExactSum {
        mu.points().map(|p| self.apply(p)).collect()
    }

    fn min_dim(&self) -> usize {
        match self {
            Integrand::Coordinate(j) => j + 1,
            _ => 1,
        }
    }
}

impl fmt::Debug for Integrand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Integrand::Coordinate(j) => write!(f, "x[{j}]"),
            Integrand::SquaredNorm => write!(f, "|x|^2"),
            Integrand::Custom { name, .. } => write!(f, "{name}"),
        }
    }
}

/// Outer function `F` of a functional `F(∫G dμ)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outer {
    Identity,
    Cos,
    Square,
}

impl Outer {
    fn apply(self, m: f64) -> f64 {
        match self {
            Outer::Identity => m,
            Outer::Cos => m.cos(),
            Outer::Square => m * m,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum FunctionalKind {
    Composed { outer: Outer, integrand: Integrand },
    /// `(∫x_0 dμ)² + ∫|x|² dμ`.
    MomentPolynomial,
}

/// A map `Φ: P₂(ℝ^d) → ℝ` evaluated on empirical measures.
#[derive(Clone, Debug)]
pub struct Functional {
    pub(crate) kind: FunctionalKind,
    descriptor: String,
    smoothness_class: u32,
    dim: usize,
}

impl Functional {
    /// Names accepted by [`Functional::by_name`].
    pub const NAMES: [&'static str; 5] =
        ["mean", "second-moment", "cos-mean", "square-mean", "moment-poly"];

    /// `∫G dμ`.
    pub fn linear(integrand: Integrand, dim: usize) -> Result<Self> {
        Self::composed(Outer::Identity, integrand, dim)
    }

    /// `F(∫G dμ)`.
    pub fn composed(outer: Outer, integrand: Integrand, dim: usize) -> Result<Self> {
        if dim < integrand.min_dim() {
            return Err(Error::config(format!(
                "integrand {integrand:?} needs dimension at least {}",
                integrand.min_dim()
            )));
        }
        let descriptor = match outer {
            Outer::Identity => format!("int {integrand:?} dmu"),
            Outer::Cos => format!("cos(int {integrand:?} dmu)"),
            Outer::Square => format!("(int {integrand:?} dmu)^2"),
        };
        Ok(Self {
            kind: FunctionalKind::Composed { outer, integrand },
            descriptor,
            smoothness_class: 4,
            dim,
        })
    }

    /// `(∫x_0 dμ)² + ∫|x|² dμ`.
    pub fn moment_polynomial(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dimension must be positive"));
        }
        Ok(Self {
            kind: FunctionalKind::MomentPolynomial,
            descriptor: "(int x dmu)^2 + int |x|^2 dmu".into(),
            smoothness_class: 4,
            dim,
        })
    }

    /// Built-in functional in dimension `dim`; see [`Functional::NAMES`].
    pub fn by_name(name: &str, dim: usize) -> Result<Self> {
        match name {
            "mean" => Self::linear(Integrand::Coordinate(0), dim),
            "second-moment" => Self::linear(Integrand::SquaredNorm, dim),
            "cos-mean" => Self::composed(Outer::Cos, Integrand::Coordinate(0), dim),
            "square-mean" => Self::composed(Outer::Square, Integrand::Coordinate(0), dim),
            "moment-poly" => Self::moment_polynomial(dim),
            other => Err(Error::config(format!(
                "unknown functional '{other}' (expected one of {:?})",
                Self::NAMES
            ))),
        }
    }

    /// Overrides the declared smoothness class (metadata only).
    pub fn with_smoothness_class(mut self, k: u32) -> Self {
        self.smoothness_class = k;
        self
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    pub fn smoothness_class(&self) -> u32 {
        self.smoothness_class
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// True for `∫G dμ`, which is affine in the measure.
    pub fn is_linear(&self) -> bool {
        matches!(
            self.kind,
            FunctionalKind::Composed {
                outer: Outer::Identity,
                ..
            }
        )
    }

    fn check_dim(&self, mu: &EmpiricalMeasure) -> Result<()> {
        if mu.dim() != self.dim {
            return Err(Error::config(format!(
                "functional '{}' expects dimension {}, measure has {}",
                self.descriptor,
                self.dim,
                mu.dim()
            )));
        }
        Ok(())
    }

    pub fn evaluate(&self, mu: &EmpiricalMeasure) -> Result<f64> {
        self.check_dim(mu)?;
        Ok(match &self.kind {
            FunctionalKind::Composed { outer, integrand } => outer.apply(integrand.integral(mu)),
            FunctionalKind::MomentPolynomial => {
                let m = Integrand::Coordinate(0).integral(mu);
                m * m + mu.second_moment()
            }
        })
    }

    /// `Φ(fine) − ½(Φ(half1) + Φ(half2))`.
    ///
    /// For linear functionals with `|fine| = |half1| + |half2|` and equal
    /// halves the three integrals share the denominator `|fine|`, so the
    /// difference is formed exactly before a single rounding. It is exactly
    /// zero whenever the fine cloud is the union of the halves.
    pub fn antithetic_difference(
        &self,
        fine: &EmpiricalMeasure,
        half1: &EmpiricalMeasure,
        half2: &EmpiricalMeasure,
    ) -> Result<f64> {
        for mu in [fine, half1, half2] {
            self.check_dim(mu)?;
        }
        if let FunctionalKind::Composed {
            outer: Outer::Identity,
            integrand,
        } = &self.kind
        {
            if half1.len() == half2.len() && fine.len() == half1.len() + half2.len() {
                let mut acc = integrand.accumulate(fine);
                acc.merge(&integrand.accumulate(half1), -1.0);
                acc.merge(&integrand.accumulate(half2), -1.0);
                return Ok(acc.value() / fine.len() as f64);
            }
        }
        let f = self.evaluate(fine)?;
        let a = self.evaluate(half1)?;
        let b = self.evaluate(half2)?;
        Ok(f - 0.5 * (a + b))
    }
}

/// Free-function form of [`Functional::evaluate`].
pub fn evaluate(phi: &Functional, mu: &EmpiricalMeasure) -> Result<f64> {
    phi.evaluate(mu)
}

/// Exact W₂ between two one-dimensional clouds of equal size, by monotone
/// matching of the sorted atoms.
pub fn w2_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(Error::unsupported("w2_1d needs one-dimensional measures"));
    }
    if mu.len() != nu.len() {
        return Err(Error::unsupported(format!(
            "w2_1d needs equal sizes, got {} and {}",
            mu.len(),
            nu.len()
        )));
    }
    let mut a = mu.as_flat().to_vec();
    let mut b = nu.as_flat().to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let cost = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y) * (x - y))
        .collect::<ExactSum>()
        .value();
    Ok((cost / a.len() as f64).sqrt())
}

/// Exact W₂ between equal-size clouds in any dimension, capped at
/// [`DEFAULT_W2_CAP`] points.
pub fn w2_exact_small(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    w2_exact_with_cap(mu, nu, DEFAULT_W2_CAP)
}

/// Exact W₂ as an optimal assignment under squared Euclidean cost.
///
/// Enumerates permutations up to 8 points and runs the Hungarian method
/// above that.
pub fn w2_exact_with_cap(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, cap: usize) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::config(format!(
            "dimension mismatch: {} vs {}",
            mu.dim(),
            nu.dim()
        )));
    }
    let n = mu.len();
    if nu.len() != n {
        return Err(Error::unsupported(format!(
            "exact W2 needs equal sizes, got {n} and {}",
            nu.len()
        )));
    }
    if n > cap {
        return Err(Error::unsupported(format!(
            "exact W2 limited to {cap} points, got {n}"
        )));
    }
    let cost: Vec<f64> = mu
        .points()
        .flat_map(|x| nu.points().map(move |y| squared_distance(x, y)))
        .collect();
    let assignment = if n <= BRUTE_FORCE_MAX {
        brute_force_assignment(&cost, n)
    } else {
        hungarian(&cost, n)
    };
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .collect::<ExactSum>()
        .value();
    Ok((total / n as f64).sqrt())
}

/// Minimum-cost permutation by Heap's algorithm.
fn brute_force_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    let total = |perm: &[usize]| -> f64 {
        perm.iter()
            .enumerate()
            .map(|(i, &j)| cost[i * n + j])
            .collect::<ExactSum>()
            .value()
    };
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = total(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let t = total(&perm);
            if t < best_cost {
                best_cost = t;
                best.copy_from_slice(&perm);
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// O(n³) Hungarian method with row/column potentials. Returns, for each row,
/// its assigned column.
fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    let a = |i: usize, j: usize| cost[(i - 1) * n + (j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // col_match[j] = row matched to column j (1-based, 0 = free).
    let mut col_match = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        col_match[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_match[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = a(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_match[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_match[j0] = col_match[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[col_match[j] - 1] = j - 1;
    }
    row_to_col
}

/// The N-point measure `(1/N)δ_η + ((N−1)/N)m` for an (N−1)-point `m`.
pub fn mix_with_atom(eta: &[f64], m: &EmpiricalMeasure, n: usize) -> Result<EmpiricalMeasure> {
    if n < 2 || m.len() != n - 1 {
        return Err(Error::config(format!(
            "mixing into {n} points needs a measure with {} points, got {}",
            n.saturating_sub(1),
            m.len()
        )));
    }
    if eta.len() != m.dim() {
        return Err(Error::config(format!(
            "atom has dimension {}, measure has {}",
            eta.len(),
            m.dim()
        )));
    }
    let mut points = Vec::with_capacity(n * m.dim());
    points.extend_from_slice(eta);
    points.extend_from_slice(m.as_flat());
    EmpiricalMeasure::new(points, m.dim())
}
