//! Monomial multi-indices and closed-form moments over the unit ball.
//!
//! Everything downstream (the curvature norm assembly, quadrature honesty
//! checks, the identity-map coefficient) reduces to volume-normalized
//! integrals of monomials over a ball, which have an exact closed form:
//! for even exponents `α`,
//!
//! ```text
//! ⨍_{B_1} x^α dx = Π_i (α_i − 1)!!  /  Π_{j=1..|α|/2} (n + 2j)
//! ```
//!
//! and zero whenever any exponent is odd. The formula is exact integer
//! arithmetic in f64 for the small degrees used here.

/// Multi-index exponent vector of a monomial `x^α = Π x_i^{α_i}`.
pub type Exponents = Vec<u32>;

/// All exponent vectors with `min_degree ≤ |α| ≤ max_degree`, listed by
/// total degree and, within a degree, by descending leading exponent.
/// The order is deterministic and is the basis order used everywhere.
pub fn monomial_exponents(dim: usize, min_degree: u32, max_degree: u32) -> Vec<Exponents> {
    let mut out = Vec::new();
    for degree in min_degree..=max_degree {
        push_degree(dim, degree, &mut Vec::with_capacity(dim), &mut out);
    }
    out
}

fn push_degree(dim: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<Exponents>) {
    if prefix.len() == dim - 1 {
        prefix.push(remaining);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for a in (0..=remaining).rev() {
        prefix.push(a);
        push_degree(dim, remaining - a, prefix, out);
        prefix.pop();
    }
}

/// Number of monomials of total degree `min_degree..=max_degree` in `dim` variables.
pub fn monomial_count(dim: usize, min_degree: u32, max_degree: u32) -> usize {
    (min_degree..=max_degree)
        .map(|d| binomial(d as usize + dim - 1, dim - 1))
        .sum()
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut acc = 1usize;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Evaluates `x^α`.
pub fn eval_monomial(exps: &[u32], x: &[f64]) -> f64 {
    exps.iter()
        .zip(x)
        .map(|(&e, &xi)| xi.powi(e as i32))
        .product()
}

/// Evaluates `∂_j x^α = α_j x^{α − e_j}` (zero when `α_j = 0`).
pub fn eval_monomial_derivative(exps: &[u32], x: &[f64], j: usize) -> f64 {
    if exps[j] == 0 {
        return 0.0;
    }
    let mut acc = exps[j] as f64;
    for (i, (&e, &xi)) in exps.iter().zip(x).enumerate() {
        let p = if i == j { e - 1 } else { e };
        acc *= xi.powi(p as i32);
    }
    acc
}

/// Total degree `|α|`.
pub fn total_degree(exps: &[u32]) -> u32 {
    exps.iter().sum()
}

fn odd_double_factorial(m: u32) -> f64 {
    // (m − 1)!! for even m; (−1)!! = 1 by convention.
    let mut acc = 1.0;
    let mut k = 1;
    while k < m {
        acc *= k as f64;
        k += 2;
    }
    acc
}

/// Volume-normalized monomial moment `⨍_{B_1(0)} x^α dx` in `dim` dimensions.
pub fn unit_ball_avg_moment(dim: usize, exps: &[u32]) -> f64 {
    debug_assert_eq!(exps.len(), dim);
    if exps.iter().any(|e| e % 2 == 1) {
        return 0.0;
    }
    let half: u32 = exps.iter().sum::<u32>() / 2;
    let mut num = 1.0;
    for &e in exps {
        num *= odd_double_factorial(e);
    }
    let mut den = 1.0;
    for j in 1..=half {
        den *= (dim as u32 + 2 * j) as f64;
    }
    num / den
}

/// Euclidean volume of the ball of radius `h` in `dim` dimensions.
pub fn ball_volume(dim: usize, h: f64) -> f64 {
    // V_n = (2π h² / n) V_{n−2}, seeded with V_0 = 1, V_1 = 2h.
    let mut v = if dim % 2 == 0 { 1.0 } else { 2.0 * h };
    let mut n = if dim % 2 == 0 { 2 } else { 3 };
    while n <= dim {
        v *= 2.0 * std::f64::consts::PI * h * h / n as f64;
        n += 2;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_enumeration_counts() {
        assert_eq!(monomial_exponents(2, 1, 3).len(), 2 + 3 + 4);
        assert_eq!(monomial_exponents(3, 0, 2).len(), 1 + 3 + 6);
        assert_eq!(
            monomial_exponents(4, 1, 5).len(),
            monomial_count(4, 1, 5)
        );
    }

    #[test]
    fn monomial_order_is_degree_then_leading_exponent() {
        let m = monomial_exponents(2, 1, 2);
        assert_eq!(m, vec![vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let exps = vec![3, 1, 2];
        let x = [0.7, -0.4, 1.3];
        let eps = 1e-6;
        for j in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += eps;
            xm[j] -= eps;
            let fd = (eval_monomial(&exps, &xp) - eval_monomial(&exps, &xm)) / (2.0 * eps);
            let an = eval_monomial_derivative(&exps, &x, j);
            assert!((fd - an).abs() < 1e-7 * (1.0 + an.abs()), "j={j}: {fd} vs {an}");
        }
    }

    #[test]
    fn known_disk_moments() {
        // ⨍ x² over the unit disk = 1/4, ⨍ x⁴ = 1/8, ⨍ x²y² = 1/24.
        assert!((unit_ball_avg_moment(2, &[2, 0]) - 0.25).abs() < 1e-15);
        assert!((unit_ball_avg_moment(2, &[4, 0]) - 0.125).abs() < 1e-15);
        assert!((unit_ball_avg_moment(2, &[2, 2]) - 1.0 / 24.0).abs() < 1e-15);
        assert_eq!(unit_ball_avg_moment(2, &[1, 2]), 0.0);
    }

    #[test]
    fn radial_moments_any_dimension() {
        // ⨍ r^{2m} = n / (n + 2m), expanded over monomials by the multinomial theorem.
        for n in 2..=4usize {
            for m in 1..=3u32 {
                let mut acc = 0.0;
                // Σ over monomials of (x·x)^m: multinomial coefficients.
                let exps = monomial_exponents(n, m, m);
                for e in &exps {
                    let coeff = multinomial(m, e);
                    let doubled: Vec<u32> = e.iter().map(|&a| 2 * a).collect();
                    acc += coeff * unit_ball_avg_moment(n, &doubled);
                }
                let expected = n as f64 / (n as f64 + 2.0 * m as f64);
                assert!((acc - expected).abs() < 1e-13, "n={n} m={m}: {acc} vs {expected}");
            }
        }
    }

    fn multinomial(m: u32, parts: &[u32]) -> f64 {
        let mut acc = 1.0;
        let mut rem = m;
        for &p in parts {
            for i in 0..p {
                acc *= (rem - i) as f64;
                acc /= (i + 1) as f64;
            }
            rem -= p;
        }
        acc
    }

    #[test]
    fn ball_volumes() {
        use std::f64::consts::PI;
        assert!((ball_volume(2, 1.0) - PI).abs() < 1e-14);
        assert!((ball_volume(3, 1.0) - 4.0 * PI / 3.0).abs() < 1e-14);
        assert!((ball_volume(4, 1.0) - PI * PI / 2.0).abs() < 1e-14);
        assert!((ball_volume(3, 0.5) - 4.0 * PI / 3.0 * 0.125).abs() < 1e-14);
    }
}
