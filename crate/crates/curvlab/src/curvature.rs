//! Riemann curvature tensors in an orthonormal frame, their symmetry
//! algebra, the induced quadratic strain field and the Saint-Venant
//! recovery identity.
//!
//! Components are stored dense over all `n⁴` entries; the symmetries are
//! enforced by validation and by the orthogonal symmetrizer, not by
//! compressed storage. Sign convention: the constant-curvature model is
//! `R_ijkl = κ (δ_ik δ_jl − δ_il δ_jk)`, the choice under which the
//! normal-coordinate metric expansion of the geometry module holds with
//! a `+1/3` quadratic coefficient.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Rank-4 curvature component array `R_ijkl` at a point, in an orthonormal
/// frame. All indices run over `0..dim`; storage is row-major in `(i,j,k,l)`.
///
/// Valid tensors satisfy antisymmetry in the first and last index pairs,
/// symmetry under pair interchange, and the first Bianchi identity.
/// Construction does not force validity; see [`RiemannTensor::validate_symmetries`]
/// and [`RiemannTensor::symmetrize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RiemannTensorRepr", into = "RiemannTensorRepr")]
pub struct RiemannTensor {
    dim: usize,
    components: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RiemannTensorRepr {
    dim: usize,
    components: Vec<f64>,
}

impl TryFrom<RiemannTensorRepr> for RiemannTensor {
    type Error = Error;
    fn try_from(r: RiemannTensorRepr) -> Result<Self> {
        RiemannTensor::new(r.dim, r.components)
    }
}

impl From<RiemannTensor> for RiemannTensorRepr {
    fn from(t: RiemannTensor) -> Self {
        RiemannTensorRepr {
            dim: t.dim,
            components: t.components,
        }
    }
}

#[inline]
fn idx(n: usize, i: usize, j: usize, k: usize, l: usize) -> usize {
    ((i * n + j) * n + k) * n + l
}

impl RiemannTensor {
    /// Wraps a flat row-major `(i,j,k,l)` component array.
    pub fn new(dim: usize, components: Vec<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        let expected = dim * dim * dim * dim;
        if components.len() != expected {
            return Err(Error::ShapeMismatch {
                dim,
                expected,
                got: components.len(),
            });
        }
        Ok(Self { dim, components })
    }

    /// The zero tensor.
    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(dim, vec![0.0; dim * dim * dim * dim])
    }

    /// Constant-curvature model `R_ijkl = κ (δ_ik δ_jl − δ_il δ_jk)`;
    /// every sectional curvature equals `kappa`.
    pub fn constant_sectional(dim: usize, kappa: f64) -> Result<Self> {
        let mut t = Self::zeros(dim)?;
        for i in 0..dim {
            for j in 0..dim {
                for k in 0..dim {
                    for l in 0..dim {
                        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
                        t.components[idx(dim, i, j, k, l)] =
                            kappa * (d(i, k) * d(j, l) - d(i, l) * d(j, k));
                    }
                }
            }
        }
        Ok(t)
    }

    /// Orthogonal projection of a raw rank-4 array onto the subspace of
    /// algebraic curvature tensors.
    ///
    /// The projection is the group average over the index symmetries,
    /// applied in a fixed order — antisymmetrize the first pair, then the
    /// last pair, then symmetrize under pair interchange — followed by
    /// removal of the Bianchi cyclic part. Applying it twice reproduces
    /// the first application bit for bit.
    pub fn symmetrize(dim: usize, raw: &[f64]) -> Result<Self> {
        let expected = dim * dim * dim * dim;
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        if raw.len() != expected {
            return Err(Error::ShapeMismatch {
                dim,
                expected,
                got: raw.len(),
            });
        }
        let n = dim;
        let mut a = vec![0.0; expected];
        // Antisymmetry in (i,j).
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        a[idx(n, i, j, k, l)] =
                            0.5 * (raw[idx(n, i, j, k, l)] - raw[idx(n, j, i, k, l)]);
                    }
                }
            }
        }
        // Antisymmetry in (k,l).
        let mut b = vec![0.0; expected];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        b[idx(n, i, j, k, l)] =
                            0.5 * (a[idx(n, i, j, k, l)] - a[idx(n, i, j, l, k)]);
                    }
                }
            }
        }
        // Pair interchange.
        let mut c = vec![0.0; expected];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        c[idx(n, i, j, k, l)] =
                            0.5 * (b[idx(n, i, j, k, l)] + b[idx(n, k, l, i, j)]);
                    }
                }
            }
        }
        // Remove the totally cyclic (Bianchi-violating) part.
        let mut out = vec![0.0; expected];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let cyc = (c[idx(n, i, j, k, l)]
                            + c[idx(n, i, k, l, j)]
                            + c[idx(n, i, l, j, k)])
                            / 3.0;
                        out[idx(n, i, j, k, l)] = c[idx(n, i, j, k, l)] - cyc;
                    }
                }
            }
        }
        Self::new(dim, out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    /// Component `R_ijkl` (0-based indices).
    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.components[idx(self.dim, i, j, k, l)]
    }

    /// Largest absolute violation over the four symmetry families.
    pub fn max_symmetry_violation(&self) -> f64 {
        let n = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let r = self.get(i, j, k, l);
                        worst = worst.max((r + self.get(j, i, k, l)).abs());
                        worst = worst.max((r + self.get(i, j, l, k)).abs());
                        worst = worst.max((r - self.get(k, l, i, j)).abs());
                        let cyc = r + self.get(i, k, l, j) + self.get(i, l, j, k);
                        worst = worst.max(cyc.abs());
                    }
                }
            }
        }
        worst
    }

    /// Checks all four symmetry families against a relative tolerance:
    /// the largest violation must not exceed `tol · (1 + max |R_ijkl|)`.
    pub fn validate_symmetries(&self, tol: f64) -> Result<bool> {
        if !(tol > 0.0) {
            return Err(Error::InvalidTolerance(tol));
        }
        let scale = 1.0 + self.max_abs_component();
        Ok(self.max_symmetry_violation() <= tol * scale)
    }

    pub fn max_abs_component(&self) -> f64 {
        self.components.iter().fold(0.0f64, |m, c| m.max(c.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.components.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|&c| c == 0.0)
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            dim: self.dim,
            components: self.components.iter().map(|c| a * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(self.dim, other.dim));
        }
        Ok(Self {
            dim: self.dim,
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Ok(self.add(&other.scale(-1.0))?)
    }

    /// The quadratic strain field `e_ij(x) = (1/6) R_kijl x^k x^l` induced
    /// by this tensor.
    pub fn strain_field(&self) -> QuadraticStrain {
        let n = self.dim;
        let mut coeffs = vec![0.0; n * n * n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        // Coefficient of x^k x^l in e_ij, symmetrized over (k,l).
                        coeffs[idx(n, i, j, k, l)] =
                            (self.get(k, i, j, l) + self.get(l, i, j, k)) / 12.0;
                    }
                }
            }
        }
        QuadraticStrain::from_coeffs(n, coeffs)
    }
}

/// Symmetric-matrix-valued quadratic polynomial field
/// `e_ij(x) = c[i][j][k][l] x^k x^l`, with coefficients symmetric in
/// `(i,j)` and in `(k,l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticStrain {
    dim: usize,
    coeffs: Vec<f64>,
}

impl QuadraticStrain {
    /// Builds the field from a dense coefficient array, symmetrizing over
    /// both index pairs.
    pub fn from_coeffs(dim: usize, raw: Vec<f64>) -> Self {
        let n = dim;
        debug_assert_eq!(raw.len(), n * n * n * n);
        let mut coeffs = vec![0.0; raw.len()];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        coeffs[idx(n, i, j, k, l)] = 0.25
                            * (raw[idx(n, i, j, k, l)]
                                + raw[idx(n, j, i, k, l)]
                                + raw[idx(n, i, j, l, k)]
                                + raw[idx(n, j, i, l, k)]);
                    }
                }
            }
        }
        Self { dim, coeffs }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            coeffs: vec![0.0; dim * dim * dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Coefficient of `x^k x^l` in `e_ij`.
    #[inline]
    pub fn coeff(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.coeffs[idx(self.dim, i, j, k, l)]
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    /// Entry `e_ij(x)`.
    pub fn eval_entry(&self, i: usize, j: usize, x: &[f64]) -> f64 {
        let n = self.dim;
        let mut acc = 0.0;
        for k in 0..n {
            for l in 0..n {
                acc += self.coeff(i, j, k, l) * x[k] * x[l];
            }
        }
        acc
    }

    /// Full matrix `e(x)` as a flat row-major `n×n` array.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.eval_entry(i, j, x);
            }
        }
        out
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            dim: self.dim,
            coeffs: self.coeffs.iter().map(|c| a * c).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

/// Applies the Saint-Venant compatibility operator to a quadratic strain,
/// reindexed so that the round trip with [`RiemannTensor::strain_field`]
/// is the identity.
///
/// On a quadratic strain the second derivatives are constant
/// (`∂_a ∂_b e_pq = 2 c[p][q][a][b]`), so the operator
/// `∂_lj e_ik + ∂_ki e_jl − ∂_li e_jk − ∂_kj e_il` is purely algebraic in
/// the coefficients. Its natural output carries the first two slots in the
/// opposite order from the tensor that generated the strain; the result
/// below has those slots swapped back, so
/// `saint_venant_recover(R.strain_field()) == R`. The output vanishes
/// exactly when the strain is the symmetrized gradient of a vector field.
pub fn saint_venant_recover(e: &QuadraticStrain) -> RiemannTensor {
    let n = e.dim();
    let mut out = vec![0.0; n * n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    out[idx(n, i, j, k, l)] = 2.0
                        * (e.coeff(j, k, i, l) + e.coeff(i, l, j, k)
                            - e.coeff(i, k, j, l)
                            - e.coeff(j, l, i, k));
                }
            }
        }
    }
    RiemannTensor {
        dim: n,
        components: out,
    }
}
