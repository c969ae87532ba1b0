//! The nonlinear incompatible elastic energy on shrinking domains:
//! the volume-normalized integral of `dist²(du·g^{-1/2}, SO(n))` against
//! the Riemannian volume, evaluated by ball or tube quadrature, together
//! with its minimization over polynomial deformations.
//!
//! Minimization runs a limited-memory BFGS in preconditioned coordinates:
//! the Gram matrix of symmetric gradients over the quadrature (which is
//! the energy Hessian at the minimizer up to curvature corrections)
//! whitens the variables, and the default start is the linearized
//! corrector — the least-squares solution of `Sym dv = Id − g^{-1/2}` —
//! which sits within `O(h²)` of the minimizer.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::geometry::NormalMetric;
use crate::optim;
use crate::poly::{eval_monomial, eval_monomial_derivative, monomial_exponents, Exponents};
use crate::quadrature::{BallQuadrature, Quadrature};
use crate::{Error, Result};

/// Relative eigenvalue cutoff separating rigid-motion kernel directions
/// in the preconditioner and corrector solves.
const KERNEL_CUTOFF: f64 = 1e-10;

/// A deformation of the domain represented by coefficients over the
/// monomial vector-field basis of total degree `0..=ansatz_degree`
/// (monomial-major, direction-minor). The affine part is included, so the
/// identity map and rigid motions are exactly representable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConfigurationRepr", into = "ConfigurationRepr")]
pub struct Configuration {
    dim: usize,
    ansatz_degree: u32,
    coefficients: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ConfigurationRepr {
    dim: usize,
    ansatz_degree: u32,
    coefficients: Vec<f64>,
}

impl TryFrom<ConfigurationRepr> for Configuration {
    type Error = Error;
    fn try_from(r: ConfigurationRepr) -> Result<Self> {
        Configuration::from_coefficients(r.dim, r.ansatz_degree, r.coefficients)
    }
}

impl From<Configuration> for ConfigurationRepr {
    fn from(c: Configuration) -> Self {
        ConfigurationRepr {
            dim: c.dim,
            ansatz_degree: c.ansatz_degree,
            coefficients: c.coefficients,
        }
    }
}

impl Configuration {
    /// The identity map `u(x) = x`.
    pub fn identity(dim: usize, ansatz_degree: u32) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        if ansatz_degree < 1 {
            return Err(Error::InvalidDegree {
                got: ansatz_degree,
                min: 1,
            });
        }
        let monomials = monomial_exponents(dim, 0, ansatz_degree);
        let mut coefficients = vec![0.0; monomials.len() * dim];
        // Degree-1 monomials follow the constant, in coordinate order.
        for j in 0..dim {
            coefficients[(1 + j) * dim + j] = 1.0;
        }
        Ok(Self {
            dim,
            ansatz_degree,
            coefficients,
        })
    }

    pub fn from_coefficients(
        dim: usize,
        ansatz_degree: u32,
        coefficients: Vec<f64>,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        let expected = monomial_exponents(dim, 0, ansatz_degree).len() * dim;
        if coefficients.len() != expected {
            return Err(Error::ShapeMismatch {
                dim,
                expected,
                got: coefficients.len(),
            });
        }
        Ok(Self {
            dim,
            ansatz_degree,
            coefficients,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ansatz_degree(&self) -> u32 {
        self.ansatz_degree
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    fn monomials(&self) -> Vec<Exponents> {
        monomial_exponents(self.dim, 0, self.ansatz_degree)
    }

    /// Evaluates `u(x)`.
    pub fn map(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch(self.dim, x.len()));
        }
        let mut out = vec![0.0; self.dim];
        for (m, exps) in self.monomials().iter().enumerate() {
            let v = eval_monomial(exps, x);
            if v == 0.0 {
                continue;
            }
            for i in 0..self.dim {
                out[i] += self.coefficients[m * self.dim + i] * v;
            }
        }
        Ok(out)
    }

    /// Jacobian `du(x)` with entries `∂_j u_i`.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch(self.dim, x.len()));
        }
        let n = self.dim;
        let mut jac = DMatrix::zeros(n, n);
        for (m, exps) in self.monomials().iter().enumerate() {
            for j in 0..n {
                let d = eval_monomial_derivative(exps, x, j);
                if d == 0.0 {
                    continue;
                }
                for i in 0..n {
                    jac[(i, j)] += self.coefficients[m * n + i] * d;
                }
            }
        }
        Ok(jac)
    }

    /// The rigidly moved configuration `x ↦ Q u(x) + t`.
    pub fn rigid_transformed(&self, q: &DMatrix<f64>, t: &[f64]) -> Result<Self> {
        if q.nrows() != self.dim || q.ncols() != self.dim || t.len() != self.dim {
            return Err(Error::DimensionMismatch(self.dim, q.nrows()));
        }
        let n = self.dim;
        let count = self.coefficients.len() / n;
        let mut coefficients = vec![0.0; self.coefficients.len()];
        for m in 0..count {
            for i in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += q[(i, k)] * self.coefficients[m * n + k];
                }
                coefficients[m * n + i] = acc;
            }
        }
        // The constant monomial leads the basis.
        for i in 0..n {
            coefficients[i] += t[i];
        }
        Ok(Self {
            dim: n,
            ansatz_degree: self.ansatz_degree,
            coefficients,
        })
    }
}

/// Frobenius distance of a square matrix to the rotation group. Zero
/// exactly on `SO(n)`; 1-Lipschitz. For `det F ≤ 0` the smallest singular
/// value is reflected.
pub fn dist_to_rotations(f: &DMatrix<f64>) -> Result<f64> {
    if f.nrows() != f.ncols() {
        return Err(Error::DimensionMismatch(f.nrows(), f.ncols()));
    }
    if !f.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(rotation_distance_parts(f).0.sqrt())
}

/// Squared distance to `SO(n)` together with the nearest (possibly
/// reflected) rotation; the energy gradient is `2(F − R)`.
///
/// Computed from the symmetric eigendecomposition of `FᵀF − Id`, which
/// yields `σ² − 1` with absolute accuracy and keeps the distance smooth
/// to machine precision near `SO(n)` — an iterative SVD loses several
/// digits there because the singular values cluster at 1. The stable form
/// `σ − 1 = μ / (1 + σ)` with `μ = σ² − 1` avoids the cancellation.
fn rotation_distance_parts(f: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let n = f.nrows();
    let det = f.determinant();
    let mut gram_shift = f.transpose() * f;
    for i in 0..n {
        gram_shift[(i, i)] -= 1.0;
    }
    let eig = gram_shift.symmetric_eigen();

    let mut min_idx = 0;
    for k in 1..n {
        if eig.eigenvalues[k] < eig.eigenvalues[min_idx] {
            min_idx = k;
        }
    }
    let mut dist_sq = 0.0;
    let mut inv_root = DMatrix::zeros(n, n);
    for k in 0..n {
        let mu = eig.eigenvalues[k].max(-1.0);
        let sigma = (1.0 + mu).sqrt();
        let flip = det < 0.0 && k == min_idx;
        if flip {
            dist_sq += (sigma + 1.0) * (sigma + 1.0);
        } else {
            let d = mu / (1.0 + sigma);
            dist_sq += d * d;
        }
        // Accumulate (FᵀF)^{-1/2}, reflected on the det ≤ 0 branch, so
        // that R = F · inv_root is the nearest (reflected) rotation.
        let weight = if sigma > 1e-150 {
            let base = 1.0 / sigma;
            if flip {
                -base
            } else {
                base
            }
        } else {
            0.0
        };
        let v = eig.eigenvectors.column(k);
        for i in 0..n {
            for j in 0..n {
                inv_root[(i, j)] += weight * v[i] * v[j];
            }
        }
    }
    (dist_sq, f * inv_root)
}

/// Pointwise energy density `dist²(du(x)·g^{-1/2}(x), SO(n))`.
pub fn energy_density(u: &Configuration, m: &NormalMetric, x: &[f64]) -> Result<f64> {
    if u.dim() != m.dim() {
        return Err(Error::DimensionMismatch(u.dim(), m.dim()));
    }
    let jac = u.jacobian(x)?;
    let a = m.sqrt_inv_at(x)?;
    Ok(rotation_distance_parts(&(jac * a)).0)
}

/// Volume-normalized total energy over the quadrature domain:
/// `Σ w ρ dist² / Σ w ρ` with `ρ = √det g`. Insensitive to uniform
/// rescaling of the weights.
pub fn total_energy<Q: Quadrature>(u: &Configuration, m: &NormalMetric, quad: &Q) -> Result<f64> {
    let ws = Workspace::build(m, quad, u.ansatz_degree())?;
    Ok(ws.energy_and_grad(&ws.coeff_matrix(u), false).0)
}

/// Analytic gradient of [`total_energy`] with respect to the configuration
/// coefficients, in the same layout as [`Configuration::coefficients`].
pub fn total_energy_gradient<Q: Quadrature>(
    u: &Configuration,
    m: &NormalMetric,
    quad: &Q,
) -> Result<Vec<f64>> {
    let ws = Workspace::build(m, quad, u.ansatz_degree())?;
    let (_, grad) = ws.energy_and_grad(&ws.coeff_matrix(u), true);
    let gmat = grad.expect("gradient requested");
    let n = ws.dim;
    let mut out = vec![0.0; gmat.ncols() * n];
    for mcol in 0..gmat.ncols() {
        for i in 0..n {
            out[mcol * n + i] = gmat[(i, mcol)];
        }
    }
    Ok(out)
}

/// One row of the identity-map benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityEnergyRow {
    pub h: f64,
    pub energy: f64,
    pub energy_over_h4: f64,
}

/// Tabulates the identity-map energy on balls of the given radii; the
/// rescaled column converges to the identity-map energy coefficient of
/// the metric's curvature tensor as `h → 0`.
pub fn identity_energy_curve(
    m: &NormalMetric,
    h_list: &[f64],
    quadrature_degree: u32,
) -> Result<Vec<IdentityEnergyRow>> {
    let mut rows = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let quad = BallQuadrature::new(m.dim(), h, quadrature_degree)?;
        let iota = Configuration::identity(m.dim(), 1)?;
        let energy = total_energy(&iota, m, &quad)?;
        rows.push(IdentityEnergyRow {
            h,
            energy,
            energy_over_h4: energy / h.powi(4),
        });
    }
    Ok(rows)
}

/// Initial guess for the energy minimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Start from the identity map.
    Identity,
    /// Start from the identity plus the linearized corrector (falls back
    /// to the identity when the corrector does not lower the energy).
    Corrector,
}

/// Options for [`minimize_energy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimizeOptions {
    /// Stationarity threshold on the max-norm of the coefficient gradient.
    /// Default: `1e-12 · (1 + initial energy)`.
    pub grad_tol: Option<f64>,
    pub max_iters: usize,
    pub init: InitStrategy,
    /// Exactness degree of the ball quadrature built by [`minimize_energy`].
    pub quadrature_degree: u32,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            grad_tol: None,
            max_iters: 2000,
            init: InitStrategy::Corrector,
            quadrature_degree: crate::quadrature::DEFAULT_DEGREE,
        }
    }
}

/// Result of one energy minimization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Minimization {
    pub h: f64,
    pub energy: f64,
    pub energy_over_h4: f64,
    /// False when the iteration budget ran out before reaching the
    /// stationarity tolerance; the fields then hold the best iterate.
    pub converged: bool,
    pub iterations: usize,
    pub ansatz_degree: u32,
    pub coefficients: Vec<f64>,
}

impl Minimization {
    pub fn configuration(&self, dim: usize) -> Result<Configuration> {
        Configuration::from_coefficients(dim, self.ansatz_degree, self.coefficients.clone())
    }
}

/// Minimizes the elastic energy over the ball of radius `h`.
pub fn minimize_energy(
    m: &NormalMetric,
    h: f64,
    ansatz_degree: u32,
    opts: &MinimizeOptions,
) -> Result<Minimization> {
    let quad = BallQuadrature::new(m.dim(), h, opts.quadrature_degree)?;
    minimize_energy_on(m, &quad, h, ansatz_degree, opts, None)
}

/// Minimizes the elastic energy over an arbitrary quadrature domain.
/// `h` only labels the result rows (ball radius or tube thickness).
/// An explicit `initial` configuration overrides the init strategy.
pub fn minimize_energy_on<Q: Quadrature>(
    m: &NormalMetric,
    quad: &Q,
    h: f64,
    ansatz_degree: u32,
    opts: &MinimizeOptions,
    initial: Option<&Configuration>,
) -> Result<Minimization> {
    if ansatz_degree < 3 {
        return Err(Error::InvalidDegree {
            got: ansatz_degree,
            min: 3,
        });
    }
    let n = m.dim();
    let ws = Workspace::build(m, quad, ansatz_degree)?;
    let unknowns = ws.monomials.len() * n;

    // Diagonal monomial scaling (coordinates in units of the domain
    // extent) so that the Gram spectrum separates the rigid-motion kernel
    // from genuinely small directions at any radius.
    let diag = ws.monomial_scaling();

    // Gram of symmetric gradients over the quadrature: preconditioner and
    // corrector system in one.
    let gram = ws.sym_grad_gram();
    let mut gram_scaled = gram;
    for a in 0..unknowns {
        for b in 0..unknowns {
            gram_scaled[(a, b)] *= diag[a] * diag[b];
        }
    }
    let eig = gram_scaled.symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l));
    let cutoff = KERNEL_CUTOFF * lambda_max.max(f64::MIN_POSITIVE);

    // Whitened variable directions, kernel excluded: the rigid-motion
    // kernel is energy-flat up to higher order, and the minimizer manifold
    // intersects the complement, where the full gradient vanishes.
    let mut directions: Vec<(usize, f64)> = Vec::new();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff {
            directions.push((k, lambda));
        }
    }
    let reduced = directions.len();
    let mut basis = DMatrix::<f64>::zeros(unknowns, reduced);
    for (col, &(k, lambda)) in directions.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let scale = 1.0 / lambda.sqrt();
        for a in 0..unknowns {
            basis[(a, col)] = diag[a] * v[a] * scale;
        }
    }

    let iota = Configuration::identity(n, ansatz_degree)?;
    let iota_vec = DVector::from_column_slice(iota.coefficients());
    let (identity_energy, _) = ws.energy_and_grad(&ws.coeff_matrix(&iota), false);

    let start_vec = match initial {
        Some(u0) => {
            if u0.dim() != n || u0.ansatz_degree() != ansatz_degree {
                return Err(Error::DimensionMismatch(u0.dim(), n));
            }
            // Normalize the rigid-motion gauge of the supplied start: the
            // energy is invariant, and the kernel directions excluded from
            // the search are the flat directions only near the identity.
            let alignment = align_rigid(u0, quad)?;
            let shift: Vec<f64> = alignment.translation.iter().map(|v| -v).collect();
            let aligned = u0.rigid_transformed(&alignment.rotation, &shift)?;
            DVector::from_column_slice(aligned.coefficients())
        }
        None => match opts.init {
            InitStrategy::Identity => iota_vec.clone(),
            InitStrategy::Corrector => {
                let rhs = ws.corrector_rhs();
                let rhs_scaled =
                    DVector::from_iterator(unknowns, rhs.iter().zip(&diag).map(|(r, d)| r * d));
                let mut correction_scaled = DVector::zeros(unknowns);
                for &(k, lambda) in &directions {
                    let q = eig.eigenvectors.column(k);
                    correction_scaled.axpy(q.dot(&rhs_scaled) / lambda, &q, 1.0);
                }
                let correction = DVector::from_iterator(
                    unknowns,
                    correction_scaled.iter().zip(&diag).map(|(c, d)| c * d),
                );
                let candidate = &iota_vec + correction;
                let e_candidate = ws.energy_and_grad(&ws.vec_to_matrix(&candidate), false).0;
                if e_candidate < identity_energy {
                    candidate
                } else {
                    iota_vec.clone()
                }
            }
        },
    };

    let start_energy = ws.energy_and_grad(&ws.vec_to_matrix(&start_vec), false).0;
    let grad_tol = opts.grad_tol.unwrap_or(1e-12 * (1.0 + start_energy));

    // Optimize c = start + B z over the reduced whitened variables.
    let eval = |z: &[f64], grad_out: &mut [f64]| -> (f64, f64) {
        let zv = DVector::from_column_slice(z);
        let c = &start_vec + &basis * zv;
        let (energy, grad) = ws.energy_and_grad(&ws.vec_to_matrix(&c), true);
        let gmat = grad.expect("gradient requested");
        let mut g_c = DVector::zeros(unknowns);
        for mcol in 0..ws.monomials.len() {
            for i in 0..n {
                g_c[mcol * n + i] = gmat[(i, mcol)];
            }
        }
        let metric = g_c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let g_z = basis.transpose() * g_c;
        grad_out.copy_from_slice(g_z.as_slice());
        (energy, metric)
    };

    let outcome = optim::lbfgs(&vec![0.0; reduced], eval, grad_tol, opts.max_iters);

    let zv = DVector::from_column_slice(&outcome.x);
    let c = &start_vec + &basis * zv;
    let coefficients: Vec<f64> = c.iter().copied().collect();

    Ok(Minimization {
        h,
        energy: outcome.value,
        energy_over_h4: outcome.value / h.powi(4),
        converged: outcome.metric <= grad_tol,
        iterations: outcome.iterations,
        ansatz_degree,
        coefficients,
    })
}

/// Procrustes alignment of a configuration to the identity map.
#[derive(Debug, Clone)]
pub struct RigidAlignment {
    /// Rotation `Q` such that `Q u − translation` is closest to the identity.
    pub rotation: DMatrix<f64>,
    pub translation: DVector<f64>,
    /// Normalized `W^{1,2}`-type norm of the aligned displacement.
    pub residual: f64,
    /// True when the averaged gradient was rank-deficient and the
    /// alignment fell back to the identity rotation.
    pub degenerate: bool,
}

/// Aligns `u` to the identity over rigid motions by polar factorization of
/// the quadrature-averaged gradient, and reports the aligned displacement
/// norm `(⨍|Qu − c − x|² + ⨍|Q du − Id|²)^{1/2}`.
pub fn align_rigid<Q: Quadrature>(u: &Configuration, quad: &Q) -> Result<RigidAlignment> {
    let n = u.dim();
    if quad.dim() != n {
        return Err(Error::DimensionMismatch(n, quad.dim()));
    }
    let total_weight: f64 = quad.weights().iter().sum();
    let mut avg_grad = DMatrix::<f64>::zeros(n, n);
    for (x, &w) in quad.nodes().iter().zip(quad.weights()) {
        avg_grad += u.jacobian(x)? * (w / total_weight);
    }
    if !avg_grad.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite);
    }

    let svd = avg_grad.clone().svd(true, true);
    let sv = &svd.singular_values;
    let s_max = sv.iter().fold(0.0f64, |a, &s| a.max(s));
    let s_min = sv.iter().fold(f64::INFINITY, |a, &s| a.min(s));
    let degenerate = !(s_min > 1e-12 * s_max.max(1e-300));

    let rotation = if degenerate {
        DMatrix::identity(n, n)
    } else {
        let u_svd = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v_t requested");
        // Maximize tr(Q Ḡ): Q = V Uᵀ, reflecting the smallest singular
        // direction when the determinant demands it.
        let mut q = v_t.transpose() * u_svd.transpose();
        if q.determinant() < 0.0 {
            let mut min_idx = 0;
            for k in 1..n {
                if sv[k] < sv[min_idx] {
                    min_idx = k;
                }
            }
            let mut d = DMatrix::identity(n, n);
            d[(min_idx, min_idx)] = -1.0;
            q = v_t.transpose() * d * u_svd.transpose();
        }
        q
    };

    // Best translation: mean of Qu − x.
    let mut translation = DVector::zeros(n);
    for (x, &w) in quad.nodes().iter().zip(quad.weights()) {
        let ux = u.map(x)?;
        for i in 0..n {
            let qu_i: f64 = (0..n).map(|k| rotation[(i, k)] * ux[k]).sum();
            translation[i] += (qu_i - x[i]) * w / total_weight;
        }
    }

    let mut l2 = 0.0;
    let mut h1 = 0.0;
    for (x, &w) in quad.nodes().iter().zip(quad.weights()) {
        let ux = u.map(x)?;
        for i in 0..n {
            let qu_i: f64 = (0..n).map(|k| rotation[(i, k)] * ux[k]).sum();
            let v = qu_i - translation[i] - x[i];
            l2 += v * v * w / total_weight;
        }
        let diff = &rotation * u.jacobian(x)? - DMatrix::<f64>::identity(n, n);
        h1 += diff.norm_squared() * w / total_weight;
    }

    Ok(RigidAlignment {
        rotation,
        translation,
        residual: (l2 + h1).sqrt(),
        degenerate,
    })
}

/// Per-run precomputation: relative Riemannian weights, metric roots and
/// monomial gradient tables at every quadrature node.
struct Workspace {
    dim: usize,
    monomials: Vec<Exponents>,
    rel_weights: Vec<f64>,
    sqrt_inv: Vec<DMatrix<f64>>,
    /// Per node: `M×n` table of `∂_j x^{α_m}`.
    grad_tables: Vec<DMatrix<f64>>,
    /// Per-coordinate extent of the quadrature domain.
    coord_extent: Vec<f64>,
}

impl Workspace {
    fn build<Q: Quadrature>(m: &NormalMetric, quad: &Q, degree: u32) -> Result<Self> {
        let n = m.dim();
        if quad.dim() != n {
            return Err(Error::DimensionMismatch(n, quad.dim()));
        }
        let monomials = monomial_exponents(n, 0, degree);
        let count = quad.len();
        let mut rel_weights = Vec::with_capacity(count);
        let mut sqrt_inv = Vec::with_capacity(count);
        let mut grad_tables = Vec::with_capacity(count);
        let mut coord_extent = vec![0.0f64; n];
        for (x, &w) in quad.nodes().iter().zip(quad.weights()) {
            rel_weights.push(w * m.volume_density(x)?);
            sqrt_inv.push(m.sqrt_inv_at(x)?);
            let mut g = DMatrix::zeros(monomials.len(), n);
            for (mi, exps) in monomials.iter().enumerate() {
                for j in 0..n {
                    g[(mi, j)] = eval_monomial_derivative(exps, x, j);
                }
            }
            grad_tables.push(g);
            for j in 0..n {
                coord_extent[j] = coord_extent[j].max(x[j].abs());
            }
        }
        let total: f64 = rel_weights.iter().sum();
        rel_weights.iter_mut().for_each(|v| *v /= total);
        coord_extent.iter_mut().for_each(|v| *v = v.max(1e-12));
        Ok(Self {
            dim: n,
            monomials,
            rel_weights,
            sqrt_inv,
            grad_tables,
            coord_extent,
        })
    }

    /// Per-unknown diagonal scaling `Π_i extent_i^{−α_i}`, expressing each
    /// monomial coefficient in units where the domain has unit extent.
    fn monomial_scaling(&self) -> Vec<f64> {
        let n = self.dim;
        let mut diag = Vec::with_capacity(self.monomials.len() * n);
        for exps in &self.monomials {
            let mut d = 1.0;
            for (j, &e) in exps.iter().enumerate() {
                d /= self.coord_extent[j].powi(e as i32);
            }
            for _ in 0..n {
                diag.push(d);
            }
        }
        diag
    }

    /// Coefficient matrix `C` with `C[i][m] = coeffs[m·n + i]`, so that
    /// `du(x) = C · G(x)`.
    fn coeff_matrix(&self, u: &Configuration) -> DMatrix<f64> {
        let n = self.dim;
        let mcount = self.monomials.len();
        let mut c = DMatrix::zeros(n, mcount);
        for m in 0..mcount {
            for i in 0..n {
                c[(i, m)] = u.coefficients()[m * n + i];
            }
        }
        c
    }

    fn vec_to_matrix(&self, coeffs: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim;
        let mcount = self.monomials.len();
        let mut c = DMatrix::zeros(n, mcount);
        for m in 0..mcount {
            for i in 0..n {
                c[(i, m)] = coeffs[m * n + i];
            }
        }
        c
    }

    /// Energy and (optionally) its gradient as an `n×M` matrix.
    fn energy_and_grad(&self, cmat: &DMatrix<f64>, want_grad: bool) -> (f64, Option<DMatrix<f64>>) {
        let n = self.dim;
        let mut energy = 0.0;
        let mut grad = if want_grad {
            Some(DMatrix::<f64>::zeros(n, self.monomials.len()))
        } else {
            None
        };
        for q in 0..self.rel_weights.len() {
            let jac = cmat * &self.grad_tables[q];
            let mapped = &jac * &self.sqrt_inv[q];
            let (d2, rot) = rotation_distance_parts(&mapped);
            let w = self.rel_weights[q];
            energy += w * d2;
            if let Some(g) = grad.as_mut() {
                // dE/d(du) = 2(M − R) Aᵀ, then back through du = C G.
                let pull = (mapped - rot) * self.sqrt_inv[q].transpose();
                *g += pull * self.grad_tables[q].transpose() * (2.0 * w);
            }
        }
        (energy, grad)
    }

    /// Gram matrix of symmetric gradients of the basis fields under the
    /// relative quadrature weights. Exact for the polynomial integrands.
    fn sym_grad_gram(&self) -> DMatrix<f64> {
        let n = self.dim;
        let mcount = self.monomials.len();
        // GradGram[a][b] = Σ_q w ∇A·∇B; Cross[p][s][a][b] = Σ_q w ∂_p A ∂_s B.
        let mut grad_gram = DMatrix::<f64>::zeros(mcount, mcount);
        let mut cross = vec![DMatrix::<f64>::zeros(mcount, mcount); n * n];
        for q in 0..self.rel_weights.len() {
            let g = &self.grad_tables[q];
            let w = self.rel_weights[q];
            grad_gram += g * g.transpose() * w;
            for p in 0..n {
                for s in 0..n {
                    let target = &mut cross[p * n + s];
                    for a in 0..mcount {
                        let wa = w * g[(a, p)];
                        if wa == 0.0 {
                            continue;
                        }
                        for b in 0..mcount {
                            target[(a, b)] += wa * g[(b, s)];
                        }
                    }
                }
            }
        }
        let unknowns = mcount * n;
        let mut k = DMatrix::<f64>::zeros(unknowns, unknowns);
        for ma in 0..mcount {
            for ia in 0..n {
                let a = ma * n + ia;
                for mb in 0..mcount {
                    for ib in 0..n {
                        let b = mb * n + ib;
                        let mut entry = cross[ib * n + ia][(ma, mb)];
                        if ia == ib {
                            entry += grad_gram[(ma, mb)];
                        }
                        k[(a, b)] = 0.5 * entry;
                    }
                }
            }
        }
        k
    }

    /// Right-hand side of the linearized corrector: pairs each basis
    /// field's symmetric gradient with the target `T(x) = Id − g^{-1/2}(x)`.
    fn corrector_rhs(&self) -> DVector<f64> {
        let n = self.dim;
        let mcount = self.monomials.len();
        let mut rhs = DVector::zeros(mcount * n);
        for q in 0..self.rel_weights.len() {
            let g = &self.grad_tables[q];
            let a = &self.sqrt_inv[q];
            let w = self.rel_weights[q];
            for ma in 0..mcount {
                for ia in 0..n {
                    let mut acc = 0.0;
                    for j in 0..n {
                        let t_ij = (if ia == j { 1.0 } else { 0.0 }) - a[(ia, j)];
                        acc += g[(ma, j)] * t_ij;
                    }
                    rhs[ma * n + ia] += w * acc;
                }
            }
        }
        rhs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::RiemannTensor;
    use crate::quadrature::TubeQuadrature;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere() -> NormalMetric {
        NormalMetric::exact_constant(2, 1.0).unwrap()
    }

    fn rotation2(theta: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
    }

    #[test]
    fn identity_configuration_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in 2..=4 {
            let iota = Configuration::identity(n, 4).unwrap();
            for _ in 0..10 {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let u = iota.map(&x).unwrap();
                assert_eq!(u, x);
                let jac = iota.jacobian(&x).unwrap();
                assert_eq!(jac, DMatrix::<f64>::identity(n, n));
            }
        }
    }

    #[test]
    fn distance_to_rotations_basics() {
        assert_eq!(dist_to_rotations(&DMatrix::identity(3, 3)).unwrap(), 0.0);
        let f = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert!((dist_to_rotations(&f).unwrap() - 1.0).abs() < 1e-14);
        let r = rotation2(0.9);
        assert!(dist_to_rotations(&r).unwrap() < 1e-14);
    }

    #[test]
    fn distance_to_rotations_reflection_matches_grid_oracle() {
        let f = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        let d = dist_to_rotations(&f).unwrap();
        // Brute-force minimization of |F − R(θ)| over a 10⁶-point grid.
        let steps = 1_000_000;
        let mut best = f64::INFINITY;
        for s in 0..steps {
            let theta = 2.0 * std::f64::consts::PI * s as f64 / steps as f64;
            let diff = &f - rotation2(theta);
            best = best.min(diff.norm_squared());
        }
        let oracle = best.sqrt();
        assert!((oracle - 2.0).abs() < 1e-9, "oracle {oracle}");
        assert!((d - 2.0).abs() < 1e-14, "distance {d}");
    }

    #[test]
    fn distance_is_one_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let a = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-2.0..2.0));
            let b = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-2.0..2.0));
            let da = dist_to_rotations(&a).unwrap();
            let db = dist_to_rotations(&b).unwrap();
            assert!((da - db).abs() <= (&a - &b).norm() + 1e-12);
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let f = DMatrix::from_row_slice(2, 2, &[f64::NAN, 0.0, 0.0, 1.0]);
        assert!(dist_to_rotations(&f).is_err());
    }

    #[test]
    fn identity_density_vanishes_on_flat_metric() {
        let m = NormalMetric::flat(3).unwrap();
        let iota = Configuration::identity(3, 2).unwrap();
        let d = energy_density(&iota, &m, &[0.2, -0.1, 0.4]).unwrap();
        assert!(d < 1e-30);
    }

    #[test]
    fn identity_density_matches_sqrt_inv_deviation() {
        // Two code paths: dist²(dι·A, SO) and |A − Id|² for SPD A.
        let t = RiemannTensor::constant_sectional(2, 1.0).unwrap();
        let m = NormalMetric::truncated(t);
        let iota = Configuration::identity(2, 1).unwrap();
        for &t in &[0.1, 0.25, 0.4] {
            let x = [t, 0.0];
            let d = energy_density(&iota, &m, &x).unwrap();
            let a = m.sqrt_inv_at(&x).unwrap();
            let dev = (&a - DMatrix::<f64>::identity(2, 2)).norm_squared();
            assert!((d - dev).abs() < 1e-12 * (1.0 + dev), "t={t}: {d} vs {dev}");
        }
    }

    #[test]
    fn density_is_frame_indifferent() {
        let m = sphere();
        let base = Configuration::identity(2, 3).unwrap();
        let mut coeffs = base.coefficients().to_vec();
        coeffs[10] += 0.05;
        let u = Configuration::from_coefficients(2, 3, coeffs).unwrap();
        let q = rotation2(0.77);
        let rotated = u.rigid_transformed(&q, &[0.3, -0.2]).unwrap();
        for &x in &[[0.1, 0.2], [0.0, 0.3], [-0.2, -0.1]] {
            let d0 = energy_density(&u, &m, &x).unwrap();
            let d1 = energy_density(&rotated, &m, &x).unwrap();
            assert!((d0 - d1).abs() < 1e-14 * (1.0 + d0));
        }
    }

    #[test]
    fn total_energy_flat_identity_is_zero() {
        let m = NormalMetric::flat(2).unwrap();
        let quad = BallQuadrature::new(2, 0.3, 10).unwrap();
        let iota = Configuration::identity(2, 3).unwrap();
        assert!(total_energy(&iota, &m, &quad).unwrap() < 1e-30);
    }

    #[test]
    fn identity_energy_near_asymptotic_coefficient() {
        // E[ι] at h = 0.1 within 3% of h⁴/108 on the unit sphere.
        let m = sphere();
        let quad = BallQuadrature::new(2, 0.1, 20).unwrap();
        let iota = Configuration::identity(2, 1).unwrap();
        let e = total_energy(&iota, &m, &quad).unwrap();
        let target = 1e-4 / 108.0;
        assert!((e - target).abs() < 0.03 * target, "energy {e} vs {target}");
    }

    #[test]
    fn total_energy_is_rigid_motion_invariant() {
        let m = sphere();
        let quad = BallQuadrature::new(2, 0.2, 12).unwrap();
        let iota = Configuration::identity(2, 3).unwrap();
        let moved = iota
            .rigid_transformed(&rotation2(1.1), &[5.0, -2.0])
            .unwrap();
        let e0 = total_energy(&iota, &m, &quad).unwrap();
        let e1 = total_energy(&moved, &m, &quad).unwrap();
        assert!((e0 - e1).abs() <= 1e-14 * (1.0 + e0));
    }

    #[test]
    fn quadrature_honesty_on_polynomial_integrand() {
        // u = x + ε ∇Φ with Φ = x₁²x₂ has a symmetric Jacobian
        // perturbation, so dist² is the polynomial ε²|Hess Φ|² and the
        // total energy has the closed form 3ε²h² on the flat ball.
        let (eps, h) = (1e-3, 0.5);
        let m = NormalMetric::flat(2).unwrap();
        let quad = BallQuadrature::new(2, h, 10).unwrap();
        let mut coeffs = Configuration::identity(2, 2)
            .unwrap()
            .coefficients()
            .to_vec();
        let monos = monomial_exponents(2, 0, 2);
        let idx_x1x2 = monos.iter().position(|e| e == &vec![1, 1]).unwrap();
        let idx_x1sq = monos.iter().position(|e| e == &vec![2, 0]).unwrap();
        coeffs[idx_x1x2 * 2] += 2.0 * eps; // ∂Φ/∂x₁ = 2x₁x₂
        coeffs[idx_x1sq * 2 + 1] += eps; // ∂Φ/∂x₂ = x₁²
        let u = Configuration::from_coefficients(2, 2, coeffs).unwrap();
        let e = total_energy(&u, &m, &quad).unwrap();
        let exact = 3.0 * eps * eps * h * h;
        assert!(((e - exact) / exact).abs() < 1e-12, "{e} vs {exact}");
    }

    #[test]
    fn identity_curve_flat_is_zero_and_sphere_converges() {
        let flat = NormalMetric::flat(2).unwrap();
        for row in identity_energy_curve(&flat, &[0.4, 0.1], 12).unwrap() {
            assert!(row.energy < 1e-30);
        }

        let rows = identity_energy_curve(&sphere(), &[0.4, 0.2, 0.1, 0.05], 20).unwrap();
        let coeff = 1.0 / 108.0;
        let devs: Vec<f64> = rows
            .iter()
            .map(|r| (r.energy_over_h4 - coeff).abs())
            .collect();
        for pair in devs.windows(2) {
            assert!(pair[1] < pair[0], "deviations not monotone: {devs:?}");
        }
        assert!(devs[3] / coeff < 0.01, "final deviation {devs:?}");
        // Remainder is quadratic in h: halving h cuts the deviation well
        // below the 0.6 factor.
        assert!(devs[3] <= 0.6 * devs[2]);

        // Truncated and exact metrics share the limit.
        let trunc = NormalMetric::truncated(RiemannTensor::constant_sectional(2, 1.0).unwrap());
        let trunc_rows = identity_energy_curve(&trunc, &[0.05], 20).unwrap();
        let rel = (trunc_rows[0].energy_over_h4 - rows[3].energy_over_h4).abs()
            / rows[3].energy_over_h4;
        assert!(rel < 0.005, "cross-model gap {rel}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let metrics = [
            sphere(),
            NormalMetric::truncated(RiemannTensor::constant_sectional(2, -0.7).unwrap()),
        ];
        for m in &metrics {
            let quad = BallQuadrature::new(2, 0.3, 8).unwrap();
            let base = Configuration::identity(2, 3).unwrap();
            let mut coeffs = base.coefficients().to_vec();
            for c in coeffs.iter_mut() {
                *c += rng.gen_range(-0.02..0.02);
            }
            let u = Configuration::from_coefficients(2, 3, coeffs.clone()).unwrap();
            let analytic = total_energy_gradient(&u, m, &quad).unwrap();
            let step = 3e-6;
            let mut worst: f64 = 0.0;
            let scale = analytic.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for k in 0..coeffs.len() {
                let mut cp = coeffs.clone();
                cp[k] += step;
                let up = Configuration::from_coefficients(2, 3, cp).unwrap();
                let mut cm = coeffs.clone();
                cm[k] -= step;
                let um = Configuration::from_coefficients(2, 3, cm).unwrap();
                let fd = (total_energy(&up, m, &quad).unwrap()
                    - total_energy(&um, m, &quad).unwrap())
                    / (2.0 * step);
                worst = worst.max((fd - analytic[k]).abs());
            }
            assert!(worst <= 1e-6 * scale, "worst {worst} vs scale {scale}");
        }
    }

    #[test]
    fn minimize_flat_is_exact_at_identity() {
        let m = NormalMetric::flat(2).unwrap();
        let opts = MinimizeOptions {
            quadrature_degree: 10,
            ..Default::default()
        };
        let out = minimize_energy(&m, 0.25, 3, &opts).unwrap();
        assert!(out.energy <= 1e-10);
        assert!(out.converged);
    }

    #[test]
    fn minimize_beats_identity_map_on_the_sphere() {
        let m = sphere();
        let h = 0.1;
        let quad = BallQuadrature::new(2, h, 20).unwrap();
        let iota = Configuration::identity(2, 5).unwrap();
        let e_id = total_energy(&iota, &m, &quad).unwrap();
        let out = minimize_energy(&m, h, 5, &MinimizeOptions::default()).unwrap();
        assert!(out.converged, "iterations {}", out.iterations);
        assert!(out.energy < e_id, "{} !< {e_id}", out.energy);
        // Within striking distance of the limit value ~ h⁴/192.
        let limit = h.powi(4) / 192.0;
        assert!(
            (out.energy - limit).abs() < 0.1 * limit,
            "{} vs {limit}",
            out.energy
        );
    }

    #[test]
    fn minimize_requires_cubic_ansatz() {
        let m = sphere();
        assert!(minimize_energy(&m, 0.1, 2, &MinimizeOptions::default()).is_err());
    }

    #[test]
    fn minimized_energy_monotone_in_ansatz_degree() {
        let m = sphere();
        let opts = MinimizeOptions {
            quadrature_degree: 14,
            ..Default::default()
        };
        let e3 = minimize_energy(&m, 0.1, 3, &opts).unwrap().energy;
        let e4 = minimize_energy(&m, 0.1, 4, &opts).unwrap().energy;
        let e5 = minimize_energy(&m, 0.1, 5, &opts).unwrap().energy;
        assert!(e4 <= e3 + 1e-12);
        assert!(e5 <= e4 + 1e-12);
    }

    #[test]
    fn minimized_energy_is_gauge_invariant() {
        let m = sphere();
        let h = 0.1;
        let quad = BallQuadrature::new(2, h, 14).unwrap();
        let opts = MinimizeOptions {
            quadrature_degree: 14,
            ..Default::default()
        };
        let base = minimize_energy(&m, h, 3, &opts).unwrap();
        let rotated_start = Configuration::identity(2, 3)
            .unwrap()
            .rigid_transformed(&rotation2(0.6), &[0.0, 0.0])
            .unwrap();
        let alt = minimize_energy_on(&m, &quad, h, 3, &opts, Some(&rotated_start)).unwrap();
        assert!(alt.converged);
        assert!((alt.energy - base.energy).abs() <= 1e-12 * (1.0 + base.energy));
    }

    #[test]
    fn minimize_on_tube_reports_rows() {
        let m = NormalMetric::flat(3).unwrap();
        let quad = TubeQuadrature::new(3, 0.05, 0.4, 8).unwrap();
        let opts = MinimizeOptions::default();
        let out = minimize_energy_on(&m, &quad, 0.05, 3, &opts, None).unwrap();
        assert!(out.energy <= 1e-10);
        assert!(out.converged);
    }

    #[test]
    fn align_recovers_rigid_motions() {
        let quad = BallQuadrature::new(2, 0.3, 8).unwrap();
        let iota = Configuration::identity(2, 3).unwrap();
        let a = align_rigid(&iota, &quad).unwrap();
        assert!(!a.degenerate);
        assert!(
            (a.rotation.clone() - DMatrix::<f64>::identity(2, 2))
                .abs()
                .max()
                < 1e-13
        );
        assert!(a.translation.abs().max() < 1e-14);
        assert!(a.residual < 1e-13);

        let q0 = rotation2(0.8);
        let c0 = [0.7, -0.4];
        let moved = iota.rigid_transformed(&q0, &c0).unwrap();
        let a = align_rigid(&moved, &quad).unwrap();
        // Returned rotation undoes q0: Q = q0ᵀ, translation = q0ᵀ c0.
        assert!(
            (a.rotation.clone() * &q0 - DMatrix::<f64>::identity(2, 2))
                .abs()
                .max()
                < 1e-12
        );
        let expected = q0.transpose() * DVector::from_column_slice(&c0);
        assert!((a.translation.clone() - expected).abs().max() < 1e-12);
        assert!(a.residual < 1e-12);
    }

    #[test]
    fn align_measures_cubic_perturbations() {
        let quad = BallQuadrature::new(2, 1.0, 12).unwrap();
        let eps = 1e-3;
        // P(x) = (x₁³, x₂³): diagonal gradient, no rigid component.
        let mut coeffs = Configuration::identity(2, 3)
            .unwrap()
            .coefficients()
            .to_vec();
        let monos = monomial_exponents(2, 0, 3);
        let i30 = monos.iter().position(|e| e == &vec![3, 0]).unwrap();
        let i03 = monos.iter().position(|e| e == &vec![0, 3]).unwrap();
        coeffs[i30 * 2] += eps;
        coeffs[i03 * 2 + 1] += eps;
        let u = Configuration::from_coefficients(2, 3, coeffs).unwrap();
        let a = align_rigid(&u, &quad).unwrap();
        // ‖P‖ in the same norm: ⨍|P|² + ⨍|dP|².
        let l2 = 2.0 * crate::poly::unit_ball_avg_moment(2, &[6, 0]);
        let h1 = 2.0 * 9.0 * crate::poly::unit_ball_avg_moment(2, &[4, 0]);
        let p_norm = (l2 + h1).sqrt();
        assert!(a.residual >= 0.5 * eps * p_norm);
        assert!(a.residual <= 1.5 * eps * p_norm);
    }

    #[test]
    fn align_flags_degenerate_gradient() {
        let quad = BallQuadrature::new(2, 0.3, 8).unwrap();
        // Constant map: zero average gradient.
        let count = Configuration::identity(2, 1).unwrap().coefficients().len();
        let u = Configuration::from_coefficients(2, 1, vec![0.0; count]).unwrap();
        let a = align_rigid(&u, &quad).unwrap();
        assert!(a.degenerate);
        assert!(
            (a.rotation.clone() - DMatrix::<f64>::identity(2, 2))
                .abs()
                .max()
                < 1e-15
        );
    }

    #[test]
    fn minimization_serializes_with_expected_keys() {
        let m = NormalMetric::flat(2).unwrap();
        let opts = MinimizeOptions {
            quadrature_degree: 8,
            ..Default::default()
        };
        let out = minimize_energy(&m, 0.2, 3, &opts).unwrap();
        let json = serde_json::to_value(&out).unwrap();
        for key in [
            "h",
            "energy",
            "energy_over_h4",
            "converged",
            "iterations",
            "ansatz_degree",
            "coefficients",
        ] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
    }

    #[test]
    fn configuration_json_round_trip_and_validation() {
        let u = Configuration::identity(3, 2).unwrap();
        let json = serde_json::to_string(&u).unwrap();
        let back: Configuration = serde_json::from_str(&json).unwrap();
        assert_eq!(u, back);
        let bad = r#"{"dim": 2, "ansatz_degree": 1, "coefficients": [1.0]}"#;
        assert!(serde_json::from_str::<Configuration>(bad).is_err());
    }
}
