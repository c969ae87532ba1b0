//! Metric models on balls in normal coordinates.
//!
//! Three kinds are supported: the flat metric, the truncated quadratic
//! expansion `g_ij(x) = δ_ij + (1/3) R_kijl x^k x^l`, and the exact
//! space-form metric of constant sectional curvature. Every kind is the
//! identity at the origin; the truncated kind agrees with the exact kind
//! of the same curvature to fourth order in `|x|`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::curvature::RiemannTensor;
use crate::poly::unit_ball_avg_moment;
use crate::{Error, Result};

/// Default validity radius for the truncated expansion; keeps the metric
/// uniformly positive definite for moderate tensors.
pub const TRUNCATED_VALIDITY_RADIUS: f64 = 0.5;

/// Stand-in for an unbounded validity radius (flat and nonpositively
/// curved exact metrics); finite so that serialized configs round-trip.
pub const UNBOUNDED_VALIDITY_RADIUS: f64 = 1.0e6;

/// Which metric model a [`NormalMetric`] evaluates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricKind {
    /// Euclidean metric; `metric_at` is the identity everywhere.
    Flat,
    /// Quadratic normal-coordinate expansion around the given curvature tensor.
    Truncated { tensor: RiemannTensor },
    /// Exact space form of constant sectional curvature `kappa`.
    ExactConstant { kappa: f64 },
}

/// A metric model on a ball in normal coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalMetric {
    dim: usize,
    validity_radius: f64,
    #[serde(flatten)]
    kind: MetricKind,
}

#[derive(Deserialize)]
struct NormalMetricRepr {
    dim: usize,
    validity_radius: f64,
    #[serde(flatten)]
    kind: MetricKind,
}

impl<'de> Deserialize<'de> for NormalMetric {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let repr = NormalMetricRepr::deserialize(deserializer)?;
        NormalMetric::with_kind(repr.dim, repr.kind, repr.validity_radius)
            .map_err(serde::de::Error::custom)
    }
}

impl NormalMetric {
    /// Flat metric in `dim` dimensions.
    pub fn flat(dim: usize) -> Result<Self> {
        Self::with_kind(dim, MetricKind::Flat, UNBOUNDED_VALIDITY_RADIUS)
    }

    /// Truncated quadratic expansion around `tensor`, with the default
    /// validity radius.
    pub fn truncated(tensor: RiemannTensor) -> Self {
        let dim = tensor.dim();
        Self {
            dim,
            validity_radius: TRUNCATED_VALIDITY_RADIUS,
            kind: MetricKind::Truncated { tensor },
        }
    }

    /// Exact constant-curvature metric. For `kappa > 0` the default
    /// validity radius is `π / (2√κ)`, safely inside the conjugate radius.
    pub fn exact_constant(dim: usize, kappa: f64) -> Result<Self> {
        let validity = if kappa > 0.0 {
            std::f64::consts::FRAC_PI_2 / kappa.sqrt()
        } else {
            UNBOUNDED_VALIDITY_RADIUS
        };
        Self::with_kind(dim, MetricKind::ExactConstant { kappa }, validity)
    }

    /// Builds a metric with an explicit validity radius, validating shape
    /// consistency.
    pub fn with_kind(dim: usize, kind: MetricKind, validity_radius: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        if !(validity_radius > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "validity radius must be positive, got {validity_radius}"
            )));
        }
        if let MetricKind::Truncated { tensor } = &kind {
            if tensor.dim() != dim {
                return Err(Error::DimensionMismatch(dim, tensor.dim()));
            }
        }
        Ok(Self {
            dim,
            validity_radius,
            kind,
        })
    }

    /// Overrides the validity radius.
    pub fn with_validity_radius(mut self, validity_radius: f64) -> Result<Self> {
        if !(validity_radius > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "validity radius must be positive, got {validity_radius}"
            )));
        }
        self.validity_radius = validity_radius;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &MetricKind {
        &self.kind
    }

    pub fn validity_radius(&self) -> f64 {
        self.validity_radius
    }

    pub fn is_flat(&self) -> bool {
        match &self.kind {
            MetricKind::Flat => true,
            MetricKind::ExactConstant { kappa } => *kappa == 0.0,
            MetricKind::Truncated { tensor } => tensor.is_zero(),
        }
    }

    /// Curvature tensor of the model at the center point.
    pub fn curvature_tensor(&self) -> RiemannTensor {
        match &self.kind {
            MetricKind::Flat => RiemannTensor::zeros(self.dim).expect("dim checked"),
            MetricKind::Truncated { tensor } => tensor.clone(),
            MetricKind::ExactConstant { kappa } => {
                RiemannTensor::constant_sectional(self.dim, *kappa).expect("dim checked")
            }
        }
    }

    fn check_inside(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch(self.dim, x.len()));
        }
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let r = r2.sqrt();
        if r > self.validity_radius * (1.0 + 1e-12) {
            return Err(Error::OutsideValidity {
                radius: r,
                validity: self.validity_radius,
            });
        }
        Ok(r)
    }

    /// Metric matrix `g(x)`; symmetric positive definite inside the
    /// validity radius, the identity at `x = 0`.
    pub fn metric_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let r = self.check_inside(x)?;
        let n = self.dim;
        match &self.kind {
            MetricKind::Flat => Ok(DMatrix::identity(n, n)),
            MetricKind::Truncated { tensor } => {
                let mut g = DMatrix::identity(n, n);
                for i in 0..n {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for k in 0..n {
                            for l in 0..n {
                                acc += tensor.get(k, i, j, l) * x[k] * x[l];
                            }
                        }
                        g[(i, j)] += acc / 3.0;
                    }
                }
                Ok(g)
            }
            MetricKind::ExactConstant { kappa } => Ok(space_form_metric(n, *kappa, x, r)),
        }
    }

    /// Inverse principal square root `A(x) = g(x)^{-1/2}`, computed by
    /// symmetric eigendecomposition so it is exact for every kind. The
    /// output satisfies `Aᵀ g A = Id` and is symmetric positive definite.
    pub fn sqrt_inv_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let g = self.metric_at(x)?;
        if matches!(self.kind, MetricKind::Flat) {
            return Ok(g);
        }
        let n = self.dim;
        let eig = g.symmetric_eigen();
        let mut out = DMatrix::zeros(n, n);
        for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda <= 0.0 {
                return Err(Error::NotPositiveDefinite(lambda));
            }
            let v = eig.eigenvectors.column(idx);
            let scale = 1.0 / lambda.sqrt();
            for i in 0..n {
                for j in 0..n {
                    out[(i, j)] += scale * v[i] * v[j];
                }
            }
        }
        Ok(out)
    }

    /// Riemannian volume density `√det g(x)`.
    pub fn volume_density(&self, x: &[f64]) -> Result<f64> {
        let g = self.metric_at(x)?;
        let det = g.determinant();
        if det <= 0.0 {
            return Err(Error::NotPositiveDefinite(det));
        }
        Ok(det.sqrt())
    }
}

/// Exact constant-curvature metric in normal coordinates:
/// `g(x) = s(r)² Id + (1 − s(r)²)/r² · x xᵀ` with
/// `s(r) = sin(√κ r)/(√κ r)` for `κ > 0` and the hyperbolic analogue for
/// `κ < 0`. Evaluated by series near the origin where the closed form
/// degenerates.
fn space_form_metric(n: usize, kappa: f64, x: &[f64], r: f64) -> DMatrix<f64> {
    let mut g = DMatrix::identity(n, n);
    if kappa == 0.0 {
        return g;
    }
    let t = kappa * r * r; // signed z², shared by both curvature signs
    let (s2, u) = if t.abs() < 1e-8 {
        // sin(z)/z squared = 1 − t/3 + 2t²/45 with t = z² (sinh for t < 0).
        let s2 = 1.0 - t / 3.0 + 2.0 * t * t / 45.0;
        let u = kappa * (1.0 / 3.0 - 2.0 * t / 45.0);
        (s2, u)
    } else {
        let w = (kappa.abs()).sqrt() * r;
        let s = if kappa > 0.0 {
            w.sin() / w
        } else {
            w.sinh() / w
        };
        let s2 = s * s;
        (s2, (1.0 - s2) / (r * r))
    };
    for i in 0..n {
        for j in 0..n {
            g[(i, j)] = if i == j { s2 } else { 0.0 };
            g[(i, j)] += u * x[i] * x[j];
        }
    }
    g
}

/// Volume-normalized fourth moment `⨍_{B_1(0)} x^k x^l x^c x^d dx` of the
/// unit ball in `dim` dimensions (0-based indices). Closed form:
/// `(δ_kl δ_cd + δ_kc δ_ld + δ_kd δ_lc) / ((n+2)(n+4))`.
pub fn ball_moment(dim: usize, k: usize, l: usize, c: usize, d: usize) -> f64 {
    assert!(dim >= 2, "dimension must be at least 2");
    assert!(
        k < dim && l < dim && c < dim && d < dim,
        "moment index out of range"
    );
    let mut exps = vec![0u32; dim];
    exps[k] += 1;
    exps[l] += 1;
    exps[c] += 1;
    exps[d] += 1;
    unit_ball_avg_moment(dim, &exps)
}

/// Fully symmetric fourth-moment tensor `κ^{klcd}`, the normalized ball
/// moment divided by 36. Entries with any odd index multiplicity vanish.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTensor {
    dim: usize,
    entries: Vec<f64>,
}

impl MomentTensor {
    pub fn new(dim: usize) -> Self {
        let n = dim;
        let mut entries = vec![0.0; n * n * n * n];
        for k in 0..n {
            for l in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        entries[((k * n + l) * n + c) * n + d] =
                            ball_moment(n, k, l, c, d) / 36.0;
                    }
                }
            }
        }
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize, c: usize, d: usize) -> f64 {
        let n = self.dim;
        self.entries[((k * n + l) * n + c) * n + d]
    }
}

/// The `h⁴` coefficient of the identity-map energy on shrinking balls:
/// `κ^{klcd} Σ_ij R_kijl R_cijd`. Nonnegative and quadratic in the tensor;
/// equals the average of `|(1/6) R_kijl x^k x^l|²` over the unit ball.
pub fn expmap_energy_coefficient(tensor: &RiemannTensor) -> f64 {
    let n = tensor.dim();
    let kappa = MomentTensor::new(n);
    let mut acc = 0.0;
    for k in 0..n {
        for l in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let m = kappa.get(k, l, c, d);
                    if m == 0.0 {
                        continue;
                    }
                    let mut inner = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            inner += tensor.get(k, i, j, l) * tensor.get(c, i, j, d);
                        }
                    }
                    acc += m * inner;
                }
            }
        }
    }
    acc
}
