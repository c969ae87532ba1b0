//! Gauss quadrature on balls and tubes in radial–spherical product form.
//!
//! The ball rule pairs a Gauss–Jacobi radial rule (the `r^{n−1}` factor is
//! absorbed into the weight) with a sphere rule built recursively: equally
//! spaced points on `S¹`, then one Gauss–Jacobi level per added dimension
//! for the `(1−t²)^{(m−2)/2}` latitude weight. All one-dimensional rules
//! come from the Golub–Welsch eigenvalue method, so rules of any degree
//! and dimension are available. A rule of declared degree `d` integrates
//! every polynomial of total degree `≤ d` exactly.

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Default exactness degree; keeps quadrature error far below the `h⁴`
/// energy signal.
pub const DEFAULT_DEGREE: u32 = 20;

/// Shared surface for ball and tube rules.
pub trait Quadrature {
    fn dim(&self) -> usize;
    fn nodes(&self) -> &[Vec<f64>];
    fn weights(&self) -> &[f64];

    fn len(&self) -> usize {
        self.weights().len()
    }

    fn is_empty(&self) -> bool {
        self.weights().is_empty()
    }

    fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> f64 {
        self.nodes()
            .iter()
            .zip(self.weights())
            .map(|(x, &w)| w * f(x))
            .sum()
    }
}

/// Nodes and weights of the Gauss–Jacobi rule for the weight
/// `(1−t)^α (1+t)^β` on `[−1, 1]`, exact for polynomials of degree
/// `≤ 2·points − 1`. `α` and `β` are half-integers here (a multiple of
/// one half, encoded as `two_alpha`/`two_beta`).
fn gauss_jacobi(points: usize, two_alpha: u32, two_beta: u32) -> (Vec<f64>, Vec<f64>) {
    assert!(points >= 1);
    let alpha = two_alpha as f64 / 2.0;
    let beta = two_beta as f64 / 2.0;
    let ab = alpha + beta;

    // Symmetric tridiagonal Jacobi matrix of the monic recurrence.
    let mut m = DMatrix::<f64>::zeros(points, points);
    for k in 0..points {
        let kf = k as f64;
        let diag = if k == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            (beta * beta - alpha * alpha) / ((2.0 * kf + ab) * (2.0 * kf + ab + 2.0))
        };
        m[(k, k)] = diag;
        if k >= 1 {
            let num = 4.0 * kf * (kf + alpha) * (kf + beta) * (kf + ab);
            let den = (2.0 * kf + ab).powi(2) * (2.0 * kf + ab + 1.0) * (2.0 * kf + ab - 1.0);
            let off = (num / den).sqrt();
            m[(k, k - 1)] = off;
            m[(k - 1, k)] = off;
        }
    }

    // μ₀ = ∫ (1−t)^α (1+t)^β dt = 2^{α+β+1} Γ(α+1)Γ(β+1)/Γ(α+β+2).
    let mu0 = 2f64.powf(ab + 1.0) * gamma_half(two_alpha + 2) * gamma_half(two_beta + 2)
        / gamma_half(two_alpha + two_beta + 4);

    let eig = m.symmetric_eigen();
    let mut rule: Vec<(f64, f64)> = (0..points)
        .map(|k| {
            let node = eig.eigenvalues[k];
            let first = eig.eigenvectors[(0, k)];
            (node, mu0 * first * first)
        })
        .collect();
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    rule.into_iter().unzip()
}

/// Γ(x) for `x = two_x / 2 > 0` a positive half-integer.
fn gamma_half(two_x: u32) -> f64 {
    debug_assert!(two_x >= 1);
    if two_x % 2 == 0 {
        let k = two_x / 2;
        (1..k).map(|i| i as f64).product()
    } else {
        // Γ(1/2) = √π, Γ(x+1) = x Γ(x).
        let mut acc = std::f64::consts::PI.sqrt();
        let mut x = 0.5;
        while x + 1.0 <= two_x as f64 / 2.0 {
            acc *= x;
            x += 1.0;
        }
        acc
    }
}

/// Quadrature on the unit sphere `S^{sphere_dim}` embedded in
/// `R^{sphere_dim+1}`, exact for polynomials of degree `≤ degree`.
fn sphere_rule(sphere_dim: usize, degree: u32) -> (Vec<Vec<f64>>, Vec<f64>) {
    if sphere_dim == 1 {
        let count = (degree + 1).max(4) as usize;
        let w = 2.0 * std::f64::consts::PI / count as f64;
        let nodes = (0..count)
            .map(|i| {
                let theta = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                vec![theta.cos(), theta.sin()]
            })
            .collect();
        return (nodes, vec![w; count]);
    }
    let points = (degree as usize + 2) / 2;
    // Latitude weight (1−t²)^{(m−2)/2}.
    let lam2 = (sphere_dim - 2) as u32;
    let (t_nodes, t_weights) = gauss_jacobi(points, lam2, lam2);
    let (sub_nodes, sub_weights) = sphere_rule(sphere_dim - 1, degree);

    let mut nodes = Vec::with_capacity(t_nodes.len() * sub_nodes.len());
    let mut weights = Vec::with_capacity(nodes.capacity());
    for (t, tw) in t_nodes.iter().zip(&t_weights) {
        let s = (1.0 - t * t).max(0.0).sqrt();
        for (omega, ow) in sub_nodes.iter().zip(&sub_weights) {
            let mut x: Vec<f64> = omega.iter().map(|v| s * v).collect();
            x.push(*t);
            nodes.push(x);
            weights.push(tw * ow);
        }
    }
    (nodes, weights)
}

fn radial_ball_rule(dim: usize, radius: f64, degree: u32) -> (Vec<f64>, Vec<f64>) {
    let points = (degree as usize + 2) / 2;
    // ∫₀^h f(r) r^{n−1} dr with r = h(1+t)/2 becomes a Jacobi(0, n−1) rule.
    let (t_nodes, t_weights) = gauss_jacobi(points, 0, 2 * (dim as u32 - 1));
    let scale = (radius / 2.0).powi(dim as i32);
    let radii = t_nodes.iter().map(|t| radius * (1.0 + t) / 2.0).collect();
    let weights = t_weights.iter().map(|w| w * scale).collect();
    (radii, weights)
}

/// Quadrature over the Euclidean ball of radius `radius` in normal
/// coordinates. Weights are positive and sum to the ball volume; all
/// nodes lie inside the ball.
#[derive(Debug, Clone)]
pub struct BallQuadrature {
    dim: usize,
    radius: f64,
    degree: u32,
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl BallQuadrature {
    pub fn new(dim: usize, radius: f64, degree: u32) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        if !(radius > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        if degree < 1 {
            return Err(Error::InvalidDegree { got: degree, min: 1 });
        }
        let (radii, radial_weights) = radial_ball_rule(dim, radius, degree);
        let (dirs, dir_weights) = sphere_rule(dim - 1, degree);
        let mut nodes = Vec::with_capacity(radii.len() * dirs.len());
        let mut weights = Vec::with_capacity(nodes.capacity());
        for (r, rw) in radii.iter().zip(&radial_weights) {
            for (omega, ow) in dirs.iter().zip(&dir_weights) {
                nodes.push(omega.iter().map(|v| r * v).collect());
                weights.push(rw * ow);
            }
        }
        Ok(Self {
            dim,
            radius,
            degree,
            nodes,
            weights,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }
}

impl Quadrature for BallQuadrature {
    fn dim(&self) -> usize {
        self.dim
    }
    fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }
    fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Quadrature over the tube `{ |x₁| ≤ length/2, x₂² + … + x_n² ≤ radius² }`
/// around the first coordinate axis: a Gauss–Legendre rule along the axis
/// times a ball rule in the cross-section.
#[derive(Debug, Clone)]
pub struct TubeQuadrature {
    dim: usize,
    radius: f64,
    length: f64,
    degree: u32,
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl TubeQuadrature {
    pub fn new(dim: usize, radius: f64, length: f64, degree: u32) -> Result<Self> {
        if dim < 3 {
            return Err(Error::InvalidDimension(dim));
        }
        if !(radius > 0.0 && length > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tube radius and length must be positive, got {radius} and {length}"
            )));
        }
        if degree < 1 {
            return Err(Error::InvalidDegree { got: degree, min: 1 });
        }
        let points = (degree as usize + 2) / 2;
        let (axis_nodes, axis_weights) = gauss_jacobi(points, 0, 0);
        let section = BallQuadrature::new(dim - 1, radius, degree)?;
        let mut nodes = Vec::with_capacity(axis_nodes.len() * section.len());
        let mut weights = Vec::with_capacity(nodes.capacity());
        for (t, tw) in axis_nodes.iter().zip(&axis_weights) {
            let x1 = t * length / 2.0;
            for (y, yw) in section.nodes().iter().zip(section.weights()) {
                let mut x = Vec::with_capacity(dim);
                x.push(x1);
                x.extend_from_slice(y);
                nodes.push(x);
                weights.push(tw * length / 2.0 * yw);
            }
        }
        Ok(Self {
            dim,
            radius,
            length,
            degree,
            nodes,
            weights,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }
}

impl Quadrature for TubeQuadrature {
    fn dim(&self) -> usize {
        self.dim
    }
    fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }
    fn weights(&self) -> &[f64] {
        &self.weights
    }
}
