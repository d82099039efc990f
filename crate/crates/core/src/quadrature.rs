//! Gauss–Hermite quadrature (physicists' convention, weight `exp(-x^2)`) and
//! the Gaussian expectation operators built on top of it.
//!
//! Nodes come from the eigenvalues of the symmetric tridiagonal Jacobi matrix
//! (Golub–Welsch), then get polished by Newton iterations on the orthonormal
//! Hermite recurrence. Weights use the Christoffel formula
//! `w_i = 1 / sum_k p_k(x_i)^2`, which keeps tiny tail weights accurate up to
//! order 100 where eigenvector components would lose relative precision.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 100;
pub const DEFAULT_ORDER: usize = 20;

const SQRT_PI: f64 = 1.772_453_850_905_516;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Nodes `z_q`, strictly increasing.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Raw weights `w_q`, summing to `sqrt(pi)`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weights divided by `sqrt(pi)`, i.e. the probability weights of the
    /// standard-normal reparameterisation.
    pub fn normalized_weights(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w / SQRT_PI).collect()
    }

    /// `∫ f(x) e^{-x²} dx ≈ Σ w_q f(z_q)`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * f(z))
            .sum()
    }
}

/// Orthonormal Hermite values `p_0..p_{n-1}` at `x` plus `p_n` and its derivative.
fn hermite_orthonormal(n: usize, x: f64) -> (f64, f64, f64) {
    // p_0 = pi^{-1/4}; p_{k+1} = sqrt(2/(k+1)) x p_k - sqrt(k/(k+1)) p_{k-1}
    let mut p_prev = 0.0;
    let mut p = PI.powf(-0.25);
    let mut sum_sq = p * p;
    for k in 0..n {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * x * p - (kf / (kf + 1.0)).sqrt() * p_prev;
        p_prev = p;
        p = next;
        if k + 1 < n {
            sum_sq += p * p;
        }
    }
    // d/dx p_n = sqrt(2n) p_{n-1}
    let deriv = (2.0 * n as f64).sqrt() * p_prev;
    (p, deriv, sum_sq)
}

/// Builds the order-`order` Gauss–Hermite rule.
pub fn gauss_hermite(order: usize) -> Result<QuadratureRule> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::InvalidArgument(format!(
            "quadrature order must be in 1..={MAX_ORDER}, got {order}"
        )));
    }
    if order == 1 {
        return Ok(QuadratureRule {
            order,
            nodes: vec![0.0],
            weights: vec![SQRT_PI],
        });
    }

    let mut jacobi = DMatrix::<f64>::zeros(order, order);
    for k in 1..order {
        let off = (k as f64 / 2.0).sqrt();
        jacobi[(k, k - 1)] = off;
        jacobi[(k - 1, k)] = off;
    }
    let mut nodes: Vec<f64> = jacobi.symmetric_eigen().eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));

    for x in nodes.iter_mut() {
        for _ in 0..8 {
            let (p, dp, _) = hermite_orthonormal(order, *x);
            let step = p / dp;
            *x -= step;
            if step.abs() <= 1e-15 * x.abs().max(1.0) {
                break;
            }
        }
    }

    // The rule is symmetric; average mirrored pairs so it is exactly so.
    for i in 0..order / 2 {
        let j = order - 1 - i;
        let m = 0.5 * (nodes[j] - nodes[i]);
        nodes[i] = -m;
        nodes[j] = m;
    }
    if order % 2 == 1 {
        nodes[order / 2] = 0.0;
    }

    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&x| 1.0 / hermite_orthonormal(order, x).2)
        .collect();
    for i in 0..order / 2 {
        let j = order - 1 - i;
        let m = 0.5 * (weights[i] + weights[j]);
        weights[i] = m;
        weights[j] = m;
    }

    Ok(QuadratureRule {
        order,
        nodes,
        weights,
    })
}

/// `E[f(U)]` for `U ~ N(0, sigma²)`: `Σ (w_q/√π) f(√2 σ z_q)`.
pub fn expect_gaussian_1d<F: Fn(f64) -> f64>(f: F, sigma: f64, rule: &QuadratureRule) -> f64 {
    debug_assert!(sigma >= 0.0);
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&z, &w)| (w / SQRT_PI) * f(SQRT_2 * sigma * z))
        .sum()
}

/// `E[f(A, B)]` for independent `A ~ N(0, sigma_a²)`, `B ~ N(0, sigma_b²)`.
pub fn expect_gaussian_2d<F: Fn(f64, f64) -> f64>(
    f: F,
    sigma_a: f64,
    sigma_b: f64,
    rule: &QuadratureRule,
) -> f64 {
    debug_assert!(sigma_a >= 0.0 && sigma_b >= 0.0);
    let mut total = 0.0;
    for (&zq, &wq) in rule.nodes.iter().zip(&rule.weights) {
        let a = SQRT_2 * sigma_a * zq;
        let mut inner = 0.0;
        for (&zr, &wr) in rule.nodes.iter().zip(&rule.weights) {
            inner += wr * f(a, SQRT_2 * sigma_b * zr);
        }
        total += wq * inner;
    }
    total / PI
}

#[cfg(test)]
mod tests {
    use super::*;

    /// ∫ x^k e^{-x²} dx = Γ((k+1)/2) for even k, 0 for odd k.
    fn hermite_moment(k: u32) -> f64 {
        if k % 2 == 1 {
            return 0.0;
        }
        // Γ(m + 1/2) = (2m)! / (4^m m!) √π
        let m = k / 2;
        let mut v = SQRT_PI;
        for i in 0..m {
            v *= (2 * i + 1) as f64 / 2.0;
        }
        v
    }

    #[test]
    fn order_one_is_point_mass() {
        let r = gauss_hermite(1).unwrap();
        assert_eq!(r.nodes(), &[0.0]);
        assert!((r.weights()[0] - SQRT_PI).abs() < 1e-15);
    }

    #[test]
    fn order_two_matches_closed_form() {
        let r = gauss_hermite(2).unwrap();
        let h = 1.0 / SQRT_2;
        assert!((r.nodes()[0] + h).abs() < 1e-14);
        assert!((r.nodes()[1] - h).abs() < 1e-14);
        for w in r.weights() {
            assert!((w - SQRT_PI / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn fourth_moment_q20() {
        let r = gauss_hermite(20).unwrap();
        let v = r.integrate(|x| x.powi(4));
        assert!((v - 0.75 * SQRT_PI).abs() < 1e-10);
    }

    #[test]
    fn out_of_range_orders_rejected() {
        assert!(matches!(gauss_hermite(0), Err(Error::InvalidArgument(_))));
        assert!(matches!(gauss_hermite(101), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rule_invariants_up_to_100() {
        for q in 1..=MAX_ORDER {
            let r = gauss_hermite(q).unwrap();
            let s: f64 = r.weights().iter().sum();
            assert!((s - SQRT_PI).abs() < 1e-10, "Q={q} weight sum {s}");
            for i in 0..q {
                assert!((r.nodes()[i] + r.nodes()[q - 1 - i]).abs() < 1e-12);
                assert!(r.weights()[i] > 0.0);
            }
            assert!(r.nodes().windows(2).all(|w| w[0] < w[1]), "Q={q} not increasing");
        }
    }

    #[test]
    fn monomial_exactness_up_to_q40() {
        for q in 1..=40usize {
            let r = gauss_hermite(q).unwrap();
            for k in 0..(2 * q as u32) {
                let exact = hermite_moment(k);
                let got = r.integrate(|x| x.powi(k as i32));
                if exact == 0.0 {
                    let scale = hermite_moment(k + 1).max(1.0);
                    assert!(got.abs() <= 1e-9 * scale, "Q={q} k={k} got {got}");
                } else {
                    let rel = ((got - exact) / exact).abs();
                    assert!(rel <= 1e-9, "Q={q} k={k} rel {rel}");
                }
            }
        }
    }

    #[test]
    fn expectations_1d() {
        let r = gauss_hermite(20).unwrap();
        assert!((expect_gaussian_1d(|_| 1.0, 1.7, &r) - 1.0).abs() < 1e-12);
        assert!((expect_gaussian_1d(|u| u * u, 1.0, &r) - 1.0).abs() < 1e-12);
        let r2 = gauss_hermite(2).unwrap();
        assert!((expect_gaussian_1d(|u| u * u, 1.0, &r2) - 1.0).abs() < 1e-12);
        let logistic = |x: f64| 1.0 / (1.0 + (-x).exp());
        assert_eq!(expect_gaussian_1d(|u| logistic(0.5 + u), 0.0, &r), logistic(0.5));
    }

    #[test]
    fn expectations_2d() {
        let r = gauss_hermite(20).unwrap();
        assert!((expect_gaussian_2d(|_, _| 1.0, 0.3, 1.1, &r) - 1.0).abs() < 1e-12);
        assert!(expect_gaussian_2d(|a, b| a * b, 0.7, 1.3, &r).abs() < 1e-12);
        let v = expect_gaussian_2d(|a, b| a * a + b * b, 0.5, 2.0, &r);
        assert!((v - 4.25).abs() < 1e-10);
    }
}
