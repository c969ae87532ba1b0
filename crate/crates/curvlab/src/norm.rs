//! The curvature norm: square root of the minimum of the limiting
//! quadratic functional
//!
//! ```text
//! ⨍_B | Sym df − (1/6) R_kijl x^k x^l |²
//! ```
//!
//! over vector fields `f` on the unit ball, discretized by polynomial
//! fields. Every integral in the normal equations is a monomial ball
//! moment with a closed form, so the assembly is exact up to roundoff and
//! the only approximation is the polynomial degree — which stabilizes at
//! degree 3 (verified by the degree-stabilization tests, not assumed).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::curvature::{saint_venant_recover, QuadraticStrain, RiemannTensor};
use crate::poly::{monomial_exponents, total_degree, unit_ball_avg_moment, Exponents};
use crate::{Error, Result};

/// Polynomial degree of the production basis. Raising it does not change
/// the minimum beyond roundoff; see the degree-stabilization tests.
pub const DEFAULT_DEGREE: u32 = 3;

/// Relative eigenvalue cutoff below which normal-equation directions are
/// treated as kernel (infinitesimal rotations).
const KERNEL_CUTOFF: f64 = 1e-10;

/// Symmetry-validation tolerance applied before norm computations.
pub const VALIDATION_TOL: f64 = 1e-12;

/// One element `x^α e_i` of the polynomial vector-field basis.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisElement {
    pub exponents: Exponents,
    pub direction: usize,
}

/// Polynomial vector fields `x^α e_i` with `1 ≤ |α| ≤ degree`. Degree-0
/// elements are excluded: constants have zero symmetric gradient.
#[derive(Debug, Clone)]
pub struct PolyVectorBasis {
    dim: usize,
    degree: u32,
    elements: Vec<BasisElement>,
}

impl PolyVectorBasis {
    pub fn new(dim: usize, degree: u32) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        if degree < 1 {
            return Err(Error::InvalidDegree { got: degree, min: 1 });
        }
        let mut elements = Vec::new();
        for exponents in monomial_exponents(dim, 1, degree) {
            for direction in 0..dim {
                elements.push(BasisElement {
                    exponents: exponents.clone(),
                    direction,
                });
            }
        }
        Ok(Self {
            dim,
            degree,
            elements,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[BasisElement] {
        &self.elements
    }
}

/// Minimizer data for the limiting functional.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormSolution {
    /// Minimum of the functional (the squared curvature norm).
    pub value: f64,
    /// `√value`.
    pub norm: f64,
    /// Basis degree of the solve.
    pub degree_used: u32,
    /// Minimizer coefficients over [`PolyVectorBasis`], normalized to have
    /// zero average rotation.
    pub coefficients: Vec<f64>,
    /// Saint-Venant recovery of the residual strain; reproduces the input
    /// tensor and serves as an assembly diagnostic.
    pub residual_tensor: RiemannTensor,
}

struct NormalSystem {
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    /// `⨍_B |e|²`, the functional value at zero coefficients.
    strain_sq: f64,
}

/// `⨍_B ∂_u(x^α) ∂_v(x^β)` via the closed-form moment.
fn avg_deriv_product(
    dim: usize,
    a: &[u32],
    u: usize,
    b: &[u32],
    v: usize,
    scratch: &mut Vec<u32>,
) -> f64 {
    if a[u] == 0 || b[v] == 0 {
        return 0.0;
    }
    scratch.clear();
    scratch.extend_from_slice(a);
    for (s, &e) in scratch.iter_mut().zip(b) {
        *s += e;
    }
    scratch[u] -= 1;
    scratch[v] -= 1;
    (a[u] * b[v]) as f64 * unit_ball_avg_moment(dim, scratch)
}

fn assemble(t: &RiemannTensor, basis: &PolyVectorBasis) -> Result<NormalSystem> {
    if t.dim() != basis.dim() {
        return Err(Error::DimensionMismatch(t.dim(), basis.dim()));
    }
    let n = basis.dim();
    let m = basis.len();
    let strain = t.strain_field();
    let mut scratch = Vec::with_capacity(2 * n);

    // Gram matrix of symmetric gradients:
    // ⟨Sym dφ_a, Sym dφ_b⟩ = (1/2)(δ_{i_a i_b} ⨍ ∇A·∇B + ⨍ ∂_{i_b}A ∂_{i_a}B).
    let mut gram = DMatrix::zeros(m, m);
    for a in 0..m {
        let ea = &basis.elements[a];
        for b in a..m {
            let eb = &basis.elements[b];
            let mut grad_dot = 0.0;
            if ea.direction == eb.direction {
                for j in 0..n {
                    grad_dot +=
                        avg_deriv_product(n, &ea.exponents, j, &eb.exponents, j, &mut scratch);
                }
            }
            let cross = avg_deriv_product(
                n,
                &ea.exponents,
                eb.direction,
                &eb.exponents,
                ea.direction,
                &mut scratch,
            );
            let entry = 0.5 * (grad_dot + cross);
            gram[(a, b)] = entry;
            gram[(b, a)] = entry;
        }
    }

    // Right-hand side: ⟨Sym dφ_a, e⟩ = ⨍ Σ_j ∂_j(x^α) e_{i_a j}.
    let mut rhs = DVector::zeros(m);
    for a in 0..m {
        let ea = &basis.elements[a];
        let i = ea.direction;
        let mut acc = 0.0;
        for j in 0..n {
            if ea.exponents[j] == 0 {
                continue;
            }
            let alpha_j = ea.exponents[j] as f64;
            for u in 0..n {
                for v in 0..n {
                    let c = strain.coeff(i, j, u, v);
                    if c == 0.0 {
                        continue;
                    }
                    scratch.clear();
                    scratch.extend_from_slice(&ea.exponents);
                    scratch[j] -= 1;
                    scratch[u] += 1;
                    scratch[v] += 1;
                    acc += c * alpha_j * unit_ball_avg_moment(n, &scratch);
                }
            }
        }
        rhs[a] = acc;
    }

    // ⨍ |e|².
    let mut strain_sq = 0.0;
    for i in 0..n {
        for j in 0..n {
            for u in 0..n {
                for v in 0..n {
                    let cuv = strain.coeff(i, j, u, v);
                    if cuv == 0.0 {
                        continue;
                    }
                    for s in 0..n {
                        for w in 0..n {
                            let csw = strain.coeff(i, j, s, w);
                            if csw == 0.0 {
                                continue;
                            }
                            scratch.clear();
                            scratch.resize(n, 0);
                            scratch[u] += 1;
                            scratch[v] += 1;
                            scratch[s] += 1;
                            scratch[w] += 1;
                            strain_sq += cuv * csw * unit_ball_avg_moment(n, &scratch);
                        }
                    }
                }
            }
        }
    }

    Ok(NormalSystem {
        gram,
        rhs,
        strain_sq,
    })
}

/// Value of the limiting functional at the given basis coefficients:
/// `cᵀ M c − 2 bᵀ c + ⨍|e|²`, assembled from closed-form ball moments.
pub fn misfit_energy(t: &RiemannTensor, basis: &PolyVectorBasis, coeffs: &[f64]) -> Result<f64> {
    if coeffs.len() != basis.len() {
        return Err(Error::ShapeMismatch {
            dim: basis.dim(),
            expected: basis.len(),
            got: coeffs.len(),
        });
    }
    let sys = assemble(t, basis)?;
    let c = DVector::from_column_slice(coeffs);
    let quad = (&sys.gram * &c).dot(&c);
    Ok(quad - 2.0 * sys.rhs.dot(&c) + sys.strain_sq)
}

/// Minimizes the limiting functional over the polynomial basis of the
/// given degree by solving the normal equations with a spectral
/// pseudo-inverse (infinitesimal rotations span the kernel; any
/// representative minimizer has the same value).
pub fn minimize_misfit(t: &RiemannTensor, degree: u32) -> Result<NormSolution> {
    let basis = PolyVectorBasis::new(t.dim(), degree)?;
    let sys = assemble(t, &basis)?;
    let m = basis.len();

    let eig = sys.gram.clone().symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |acc, &l| acc.max(l));
    if lambda_max <= 0.0 {
        return Err(Error::Assembly(
            "normal matrix has no positive eigenvalues".into(),
        ));
    }
    let cutoff = KERNEL_CUTOFF * lambda_max;
    let mut coeffs = DVector::zeros(m);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda <= cutoff {
            if lambda < -cutoff {
                return Err(Error::Assembly(format!(
                    "normal matrix is indefinite (eigenvalue {lambda:.3e})"
                )));
            }
            continue;
        }
        let q = eig.eigenvectors.column(k);
        let proj = q.dot(&sys.rhs) / lambda;
        coeffs.axpy(proj, &q, 1.0);
    }

    let mut value = sys.strain_sq - sys.rhs.dot(&coeffs);
    if value < 0.0 {
        if value < -1e-10 * (1.0 + sys.strain_sq) {
            return Err(Error::Assembly(format!(
                "negative minimum {value:.3e} exceeds roundoff budget"
            )));
        }
        value = 0.0;
    }

    let mut coefficients: Vec<f64> = coeffs.iter().copied().collect();
    remove_average_rotation(&basis, &mut coefficients);

    let residual_tensor =
        saint_venant_recover(&residual_quadratic_strain(t, &basis, &coefficients));

    Ok(NormSolution {
        value,
        norm: value.sqrt(),
        degree_used: degree,
        coefficients,
        residual_tensor,
    })
}

/// Subtracts the linear field `x ↦ Wx`, `W = ⨍ skew(df)`, from the
/// coefficients. The symmetric gradient — hence the functional value —
/// is unchanged; the reported minimizer becomes rotation-free.
fn remove_average_rotation(basis: &PolyVectorBasis, coeffs: &mut [f64]) {
    let n = basis.dim();
    let mut scratch = Vec::with_capacity(n);
    // Average gradient: (⨍ df)_{ij} = Σ_a c_a δ_{i, dir_a} ⨍ ∂_j x^{α_a}.
    let mut avg = vec![0.0; n * n];
    for (a, el) in basis.elements().iter().enumerate() {
        if coeffs[a] == 0.0 {
            continue;
        }
        for j in 0..n {
            if el.exponents[j] == 0 {
                continue;
            }
            scratch.clear();
            scratch.extend_from_slice(&el.exponents);
            scratch[j] -= 1;
            let m = unit_ball_avg_moment(n, &scratch);
            if m != 0.0 {
                avg[el.direction * n + j] += coeffs[a] * el.exponents[j] as f64 * m;
            }
        }
    }
    // The linear element x^{e_k} e_i sits at index k·n + i (degree-1
    // monomials lead the basis in coordinate order).
    for i in 0..n {
        for k in 0..n {
            let w = 0.5 * (avg[i * n + k] - avg[k * n + i]);
            coeffs[k * n + i] -= w;
        }
    }
}

/// Quadratic-in-`x` part of the residual strain `e − Sym df`. Only cubic
/// basis elements contribute a quadratic symmetric gradient; their
/// coefficients are subtracted from the strain of the input tensor.
fn residual_quadratic_strain(
    t: &RiemannTensor,
    basis: &PolyVectorBasis,
    coeffs: &[f64],
) -> QuadraticStrain {
    let n = basis.dim();
    let mut res = t.strain_field();
    let c = res.coeffs_mut();
    let idx = |p: usize, q: usize, r: usize, s: usize| ((p * n + q) * n + r) * n + s;
    for (a, el) in basis.elements().iter().enumerate() {
        if coeffs[a] == 0.0 || total_degree(&el.exponents) != 3 {
            continue;
        }
        let i = el.direction;
        for j in 0..n {
            if el.exponents[j] == 0 {
                continue;
            }
            let weight = coeffs[a] * el.exponents[j] as f64;
            // x^{α − e_j} = x_u x_v; distribute onto the symmetric
            // quadratic coefficient slots.
            let mut reduced = el.exponents.clone();
            reduced[j] -= 1;
            let mut pair = Vec::with_capacity(2);
            for (k, &e) in reduced.iter().enumerate() {
                for _ in 0..e {
                    pair.push(k);
                }
            }
            let (u, v) = (pair[0], pair[1]);
            let mut place = |p: usize, q: usize, w: f64| {
                if u == v {
                    c[idx(p, q, u, u)] -= w;
                } else {
                    c[idx(p, q, u, v)] -= 0.5 * w;
                    c[idx(p, q, v, u)] -= 0.5 * w;
                }
            };
            // Sym dφ entries (j, i) and (i, j) each receive ∂_j(x^α)/2.
            place(j, i, 0.5 * weight);
            place(i, j, 0.5 * weight);
        }
    }
    res
}

fn validated(t: &RiemannTensor) -> Result<()> {
    if !t.validate_symmetries(VALIDATION_TOL)? {
        return Err(Error::Assembly(format!(
            "tensor violates curvature symmetries (max violation {:.3e})",
            t.max_symmetry_violation()
        )));
    }
    Ok(())
}

/// The curvature norm `√(min misfit)` at the production degree. Zero if
/// and only if the tensor vanishes; absolutely homogeneous.
pub fn curvature_norm(t: &RiemannTensor) -> Result<f64> {
    validated(t)?;
    Ok(minimize_misfit(t, DEFAULT_DEGREE)?.norm)
}

/// The inner product that induces the curvature norm, by polarization:
/// `(N(t1+t2)² − N(t1−t2)²) / 4`.
pub fn curvature_inner(t1: &RiemannTensor, t2: &RiemannTensor) -> Result<f64> {
    if t1.dim() != t2.dim() {
        return Err(Error::DimensionMismatch(t1.dim(), t2.dim()));
    }
    let plus = minimize_misfit(&t1.add(t2)?, DEFAULT_DEGREE)?.value;
    let minus = minimize_misfit(&t1.sub(t2)?, DEFAULT_DEGREE)?.value;
    Ok(0.25 * (plus - minus))
}
