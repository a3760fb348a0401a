//! McKean-Vlasov model definitions and closed-form reference laws.
//!
//! A model is a drift `b(x, μ)`, a diffusion `σ(x, μ)` (a `d×d` matrix,
//! row-major) and an initial law `ν`. The built-in drifts depend on `μ` only
//! through a few integrals, which the simulator computes once per step
//! ("frozen" summaries); custom drifts receive the whole empirical measure.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measure::{EmpiricalMeasure, ExactSum, Functional, FunctionalKind, Integrand, Outer};
use crate::paths::ParticleStream;

pub type DriftFn = Arc<dyn Fn(&[f64], &EmpiricalMeasure) -> Vec<f64> + Send + Sync>;
pub type DiffusionFn = Arc<dyn Fn(&[f64], &EmpiricalMeasure) -> Vec<f64> + Send + Sync>;
pub type SamplerFn = Arc<dyn Fn(&mut ParticleStream) -> Vec<f64> + Send + Sync>;

/// Drift `b(x, μ)`.
#[derive(Clone)]
pub enum Drift {
    /// `−α(x − ∫y μ(dy))`.
    MeanFieldOu { alpha: f64 },
    /// `K ∫sin(y − x) μ(dy)`, d = 1.
    Kuramoto { coupling: f64 },
    /// A constant vector, independent of state and measure.
    Constant(Vec<f64>),
    Custom { name: String, f: DriftFn },
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::MeanFieldOu { alpha } => write!(f, "MeanFieldOu {{ alpha: {alpha} }}"),
            Drift::Kuramoto { coupling } => write!(f, "Kuramoto {{ coupling: {coupling} }}"),
            Drift::Constant(c) => write!(f, "Constant({c:?})"),
            Drift::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

/// Diffusion `σ(x, μ)` as a row-major `d×d` matrix.
#[derive(Clone)]
pub enum Diffusion {
    Constant(Vec<f64>),
    Custom { name: String, f: DiffusionFn },
}

impl Diffusion {
    /// `s·I` in dimension `dim`.
    pub fn scalar(dim: usize, s: f64) -> Self {
        let mut m = vec![0.0; dim * dim];
        for j in 0..dim {
            m[j * dim + j] = s;
        }
        Diffusion::Constant(m)
    }
}

impl fmt::Debug for Diffusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diffusion::Constant(m) => write!(f, "Constant({m:?})"),
            Diffusion::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

#[derive(Clone)]
enum LawKind {
    /// Independent coordinates `N(mean_j, std_j²)`.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    Dirac(Vec<f64>),
    Custom(SamplerFn),
}

/// Initial law `ν` with a stream-driven sampler.
#[derive(Clone)]
pub struct InitialLaw {
    kind: LawKind,
    dim: usize,
    moment12_finite: bool,
    descriptor: String,
}

impl fmt::Debug for InitialLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InitialLaw")
            .field("descriptor", &self.descriptor)
            .field("dim", &self.dim)
            .finish()
    }
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be finite, got {v}")))
    }
}

impl InitialLaw {
    /// Scalar `N(mean, var)`.
    pub fn gaussian(mean: f64, var: f64) -> Result<Self> {
        Self::gaussian_diag(vec![mean], vec![var])
    }

    /// Product of independent normals.
    pub fn gaussian_diag(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.is_empty() || mean.len() != var.len() {
            return Err(Error::config("mean and variance must have the same positive length"));
        }
        for (&m, &v) in mean.iter().zip(&var) {
            check_finite("initial mean", m)?;
            check_finite("initial variance", v)?;
            if v < 0.0 {
                return Err(Error::config(format!("initial variance must be >= 0, got {v}")));
            }
        }
        let descriptor = if mean.len() == 1 {
            format!("N({}, {})", mean[0], var[0])
        } else {
            format!("N({mean:?}, diag{var:?})")
        };
        Ok(Self {
            dim: mean.len(),
            kind: LawKind::Gaussian {
                mean,
                std: var.iter().map(|v| v.sqrt()).collect(),
            },
            moment12_finite: true,
            descriptor,
        })
    }

    pub fn dirac(point: Vec<f64>) -> Result<Self> {
        if point.is_empty() {
            return Err(Error::config("point must have positive dimension"));
        }
        for &x in &point {
            check_finite("atom coordinate", x)?;
        }
        Ok(Self {
            dim: point.len(),
            descriptor: format!("delta{point:?}"),
            kind: LawKind::Dirac(point),
            moment12_finite: true,
        })
    }

    /// User-supplied sampler; `moment12_finite` is the caller's declaration.
    pub fn custom(descriptor: impl Into<String>, dim: usize, moment12_finite: bool, sampler: SamplerFn) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dimension must be positive"));
        }
        Ok(Self {
            kind: LawKind::Custom(sampler),
            dim,
            moment12_finite,
            descriptor: descriptor.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn moment12_finite(&self) -> bool {
        self.moment12_finite
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    /// One draw. Gaussian laws consume exactly one word per coordinate.
    pub fn sample(&self, stream: &mut ParticleStream) -> Vec<f64> {
        match &self.kind {
            LawKind::Gaussian { mean, std } => mean
                .iter()
                .zip(std)
                .map(|(m, s)| m + s * stream.next_normal())
                .collect(),
            LawKind::Dirac(p) => p.clone(),
            LawKind::Custom(f) => f(stream),
        }
    }

    /// `(mean, variance)` of a scalar Gaussian or Dirac law.
    fn scalar_moments(&self) -> Option<(f64, f64)> {
        match &self.kind {
            LawKind::Gaussian { mean, std } if mean.len() == 1 => Some((mean[0], std[0] * std[0])),
            LawKind::Dirac(p) if p.len() == 1 => Some((p[0], 0.0)),
            _ => None,
        }
    }
}

/// Closed-form law flow of the scalar mean-field OU model, `μ_t = N(m(t), v(t))`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticReference {
    alpha: f64,
    sigma: f64,
    m0: f64,
    v0: f64,
}

impl AnalyticReference {
    /// `m(t)`; the mean is conserved because `E b(X_t, μ_t) = 0`.
    pub fn mean(&self, _t: f64) -> Vec<f64> {
        vec![self.m0]
    }

    /// `v(t) = σ²/(2α) + (v0 − σ²/(2α)) e^{−2αt}` as a 1×1 matrix.
    pub fn variance(&self, t: f64) -> Vec<f64> {
        let stat = self.sigma * self.sigma / (2.0 * self.alpha);
        vec![stat + (self.v0 - stat) * (-2.0 * self.alpha * t).exp()]
    }

    /// `Φ(μ_t)` for the built-in functionals; `None` for custom integrands.
    pub fn phi_exact(&self, phi: &Functional, t: f64) -> Option<f64> {
        if phi.dim() != 1 {
            return None;
        }
        let m = self.m0;
        let v = self.variance(t)[0];
        match &phi.kind {
            FunctionalKind::MomentPolynomial => Some(2.0 * m * m + v),
            FunctionalKind::Composed { outer, integrand } => {
                let g = match integrand {
                    Integrand::Coordinate(0) => m,
                    Integrand::SquaredNorm => v + m * m,
                    _ => return None,
                };
                Some(match outer {
                    Outer::Identity => g,
                    Outer::Cos => g.cos(),
                    Outer::Square => g * g,
                })
            }
        }
    }
}

/// A McKean-Vlasov model `dX = b(X, μ) dt + σ(X, μ) dW`, `X_0 ~ ν`.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    tag: String,
    dim: usize,
    drift: Drift,
    diffusion: Diffusion,
    smoothness_class: u32,
    initial_law: InitialLaw,
    reference: Option<AnalyticReference>,
}

/// Scalar mean-field OU: `b(x, μ) = −α(x − ∫y μ(dy))`, constant `σ`, `ν = N(m0, v0)`.
pub fn mean_field_ou(alpha: f64, sigma: f64, init_mean: f64, init_var: f64) -> Result<ModelSpec> {
    for (name, v) in [("alpha", alpha), ("sigma", sigma), ("init_mean", init_mean), ("init_var", init_var)] {
        check_finite(name, v)?;
    }
    if alpha <= 0.0 {
        return Err(Error::config(format!("alpha must be > 0, got {alpha}")));
    }
    if sigma < 0.0 {
        return Err(Error::config(format!("sigma must be >= 0, got {sigma}")));
    }
    let law = InitialLaw::gaussian(init_mean, init_var)?;
    Ok(ModelSpec {
        tag: format!("mean-field-ou(alpha={alpha}, sigma={sigma})"),
        dim: 1,
        drift: Drift::MeanFieldOu { alpha },
        diffusion: Diffusion::scalar(1, sigma),
        smoothness_class: 4,
        initial_law: law,
        reference: Some(AnalyticReference {
            alpha,
            sigma,
            m0: init_mean,
            v0: init_var,
        }),
    })
}

/// Kuramoto-type model: `b(x, μ) = K ∫sin(y − x) μ(dy)`, constant `σ`.
///
/// The initial law defaults to `N(0, 1)`; see [`ModelSpec::with_initial_law`].
pub fn kuramoto(coupling: f64, sigma: f64) -> Result<ModelSpec> {
    check_finite("K", coupling)?;
    check_finite("sigma", sigma)?;
    if sigma < 0.0 {
        return Err(Error::config(format!("sigma must be >= 0, got {sigma}")));
    }
    Ok(ModelSpec {
        tag: format!("kuramoto(K={coupling}, sigma={sigma})"),
        dim: 1,
        drift: Drift::Kuramoto { coupling },
        diffusion: Diffusion::scalar(1, sigma),
        smoothness_class: 4,
        initial_law: InitialLaw::gaussian(0.0, 1.0)?,
        reference: None,
    })
}

impl ModelSpec {
    /// A model from arbitrary parts. No analytic reference is attached.
    pub fn custom(
        tag: impl Into<String>,
        drift: Drift,
        diffusion: Diffusion,
        initial_law: InitialLaw,
        smoothness_class: u32,
    ) -> Result<Self> {
        let dim = initial_law.dim();
        match &drift {
            Drift::Constant(c) if c.len() != dim => {
                return Err(Error::config("constant drift has the wrong dimension"))
            }
            Drift::Kuramoto { .. } if dim != 1 => return Err(Error::config("Kuramoto drift is one-dimensional")),
            _ => {}
        }
        if let Diffusion::Constant(m) = &diffusion {
            if m.len() != dim * dim {
                return Err(Error::config("diffusion matrix must be d x d"));
            }
            for &x in m {
                check_finite("diffusion entry", x)?;
            }
        }
        Ok(Self {
            tag: tag.into(),
            dim,
            drift,
            diffusion,
            smoothness_class,
            initial_law,
            reference: None,
        })
    }

    /// `b ≡ 0`, `σ ≡ 0` in dimension `dim`, for degenerate test cases.
    pub fn frozen(initial_law: InitialLaw) -> Result<Self> {
        let dim = initial_law.dim();
        Self::custom("static", Drift::Constant(vec![0.0; dim]), Diffusion::scalar(dim, 0.0), initial_law, 4)
    }

    /// Replaces `ν`. For mean-field OU the reference law is kept when the new
    /// law is scalar Gaussian or Dirac, and dropped otherwise.
    pub fn with_initial_law(mut self, law: InitialLaw) -> Result<Self> {
        if law.dim() != self.dim {
            return Err(Error::config(format!(
                "initial law has dimension {}, model has {}",
                law.dim(),
                self.dim
            )));
        }
        self.reference = match (&self.reference, law.scalar_moments()) {
            (Some(r), Some((m0, v0))) => Some(AnalyticReference {
                m0,
                v0,
                ..r.clone()
            }),
            _ => None,
        };
        self.initial_law = law;
        Ok(self)
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn drift(&self) -> &Drift {
        &self.drift
    }

    pub fn diffusion(&self) -> &Diffusion {
        &self.diffusion
    }

    pub fn constant_sigma(&self) -> bool {
        matches!(self.diffusion, Diffusion::Constant(_))
    }

    pub fn smoothness_class(&self) -> u32 {
        self.smoothness_class
    }

    pub fn initial_law(&self) -> &InitialLaw {
        &self.initial_law
    }

    pub fn analytic(&self) -> Option<&AnalyticReference> {
        self.reference.as_ref()
    }

    /// Whether exact simulation is available (linear mean-field OU, constant σ).
    pub fn is_linear(&self) -> bool {
        self.linear_parts().is_some()
    }

    /// `(α, σ-matrix)` when the model is linear mean-field OU with constant diffusion.
    pub(crate) fn linear_parts(&self) -> Option<(f64, &[f64])> {
        match (&self.drift, &self.diffusion) {
            (Drift::MeanFieldOu { alpha }, Diffusion::Constant(s)) => Some((*alpha, s)),
            _ => None,
        }
    }

    /// Computes the measure-dependent part of `b` and `σ` for particle states
    /// `states` (flat, row-major). Summaries are exact sums, so they do not
    /// depend on particle order.
    pub(crate) fn freeze(&self, states: &[f64]) -> Frozen {
        let d = self.dim;
        let n = (states.len() / d) as f64;
        let summary = match &self.drift {
            Drift::MeanFieldOu { .. } => {
                let mut acc = vec![ExactSum::new(); d];
                for p in states.chunks_exact(d) {
                    for (a, &x) in acc.iter_mut().zip(p) {
                        a.add(x);
                    }
                }
                Summary::Mean(acc.iter().map(|a| a.value() / n).collect())
            }
            Drift::Kuramoto { .. } => {
                let mut s = ExactSum::new();
                let mut c = ExactSum::new();
                for &y in states {
                    let (sy, cy) = y.sin_cos();
                    s.add(sy);
                    c.add(cy);
                }
                Summary::Trig {
                    sin: s.value() / n,
                    cos: c.value() / n,
                }
            }
            Drift::Constant(_) | Drift::Custom { .. } => Summary::None,
        };
        let needs_measure = matches!(self.drift, Drift::Custom { .. }) || matches!(self.diffusion, Diffusion::Custom { .. });
        Frozen {
            summary,
            measure: needs_measure.then(|| EmpiricalMeasure::from_flat_unchecked(states.to_vec(), d)),
        }
    }

    /// Writes `b(x, μ)` into `out` using a frozen summary of `μ`.
    #[inline]
    pub(crate) fn drift_frozen(&self, frozen: &Frozen, x: &[f64], out: &mut [f64]) {
        match (&self.drift, &frozen.summary) {
            (Drift::MeanFieldOu { alpha }, Summary::Mean(m)) => {
                for ((o, &xi), &mi) in out.iter_mut().zip(x).zip(m) {
                    *o = -alpha * (xi - mi);
                }
            }
            (Drift::Kuramoto { coupling }, Summary::Trig { sin, cos }) => {
                let (sx, cx) = x[0].sin_cos();
                out[0] = coupling * (sin * cx - cos * sx);
            }
            (Drift::Constant(c), _) => out.copy_from_slice(c),
            (Drift::Custom { f, .. }, _) => {
                let mu = frozen.measure.as_ref().expect("custom drift needs the measure");
                out.copy_from_slice(&f(x, mu));
            }
            _ => unreachable!("summary does not match drift"),
        }
    }

    /// `σ(x, μ)` as a row-major matrix.
    #[inline]
    pub(crate) fn diffusion_frozen<'a>(&'a self, frozen: &Frozen, x: &[f64], scratch: &'a mut Vec<f64>) -> &'a [f64] {
        match &self.diffusion {
            Diffusion::Constant(m) => m,
            Diffusion::Custom { f, .. } => {
                let mu = frozen.measure.as_ref().expect("custom diffusion needs the measure");
                *scratch = f(x, mu);
                scratch
            }
        }
    }

    fn check_point(&self, x: &[f64], mu: &EmpiricalMeasure) -> Result<()> {
        if x.len() != self.dim || mu.dim() != self.dim {
            return Err(Error::config(format!(
                "model dimension {} does not match point ({}) or measure ({})",
                self.dim,
                x.len(),
                mu.dim()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Summary {
    Mean(Vec<f64>),
    Trig { sin: f64, cos: f64 },
    None,
}

/// Measure-dependent data for one time step.
#[derive(Clone, Debug)]
pub(crate) struct Frozen {
    summary: Summary,
    measure: Option<EmpiricalMeasure>,
}

impl Frozen {
    /// Summary of a law with the given mean, for mean-field OU drifts.
    pub(crate) fn law_mean(mean: Vec<f64>) -> Self {
        Frozen {
            summary: Summary::Mean(mean),
            measure: None,
        }
    }
}

/// `b(x, μ)`. Charged `N` interaction units, one per atom of `μ`.
pub fn drift_eval(model: &ModelSpec, x: &[f64], mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
    model.check_point(x, mu)?;
    let frozen = model.freeze(mu.as_flat());
    let mut out = vec![0.0; model.dim];
    model.drift_frozen(&frozen, x, &mut out);
    Ok(out)
}

/// `σ(x, μ)` as a row-major `d×d` matrix.
pub fn diffusion_eval(model: &ModelSpec, x: &[f64], mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
    model.check_point(x, mu)?;
    let frozen = model.freeze(mu.as_flat());
    let mut scratch = Vec::new();
    Ok(model.diffusion_frozen(&frozen, x, &mut scratch).to_vec())
}
