//! Dense math substrate: matrices, seeded randomness, losses, k-means and a
//! finite-difference gradient checker.
//!
//! Everything here is `f64` and deterministic for a given [`RngState`] seed.

mod kmeans;
mod loss;
mod matrix;
mod rng;

pub use kmeans::{
    assign_nearest, kmeans, kmeans_plus_plus_init, kmeans_traced, lloyd, ClusterResult,
    KMEANS_MAX_ITERS, KMEANS_RESTARTS,
};
pub use loss::{kl_divergence, log_softmax, softmax, softmax_cross_entropy};
pub use matrix::Matrix;
pub use rng::RngState;

use thiserror::Error;

/// Norm below which a vector is treated as having no direction.
pub const DEGENERATE_EPS: f64 = 1e-8;

/// Default step for [`finite_difference_gradient`].
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("vector norm below {DEGENERATE_EPS:e}")]
    DegenerateVector,
    #[error("empty input")]
    EmptyInput,
    #[error("k = {k} out of range for {n} points")]
    BadK { k: usize, n: usize },
    #[error("label {label} out of range for {len} logits")]
    BadLabel { label: usize, len: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("non-finite value in matrix data")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, NumericsError>;

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

pub fn squared_distance(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn distance(u: &[f64], v: &[f64]) -> f64 {
    squared_distance(u, v).sqrt()
}

fn check_dims(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(NumericsError::DimMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    Ok(())
}

/// `u·v / (|u| |v|)`. Either norm below [`DEGENERATE_EPS`] is an error so the
/// caller can decide whether to skip the term.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims(u, v)?;
    let (nu, nv) = (norm(u), norm(v));
    if nu < DEGENERATE_EPS || nv < DEGENERATE_EPS {
        return Err(NumericsError::DegenerateVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Cosine similarity together with its gradient with respect to `u`:
/// `v / (|u||v|) - cos * u / |u|^2`.
pub fn cosine_similarity_grad(u: &[f64], v: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dims(u, v)?;
    let (nu, nv) = (norm(u), norm(v));
    if nu < DEGENERATE_EPS || nv < DEGENERATE_EPS {
        return Err(NumericsError::DegenerateVector);
    }
    let cos = dot(u, v) / (nu * nv);
    let grad = u
        .iter()
        .zip(v)
        .map(|(a, b)| b / (nu * nv) - cos * a / (nu * nu))
        .collect();
    Ok((cos, grad))
}

/// Central differences `(f(θ + h e_i) - f(θ - h e_i)) / 2h` for every coordinate.
pub fn finite_difference_gradient<F>(mut f: F, theta: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            probe[i] = theta[i] + h;
            let plus = f(&probe);
            probe[i] = theta[i] - h;
            let minus = f(&probe);
            probe[i] = theta[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
        let c = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn cosine_degenerate_and_mismatch() {
        assert_eq!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(NumericsError::DegenerateVector)
        );
        assert_eq!(
            cosine_similarity(&[1.0, 0.0], &[1e-9, 0.0]),
            Err(NumericsError::DegenerateVector)
        );
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(NumericsError::DimMismatch { .. })
        ));
    }

    #[test]
    fn cosine_grad_matches_fd() {
        let u = [0.3, -1.2, 0.7];
        let v = [1.0, 0.5, -0.25];
        let (_, g) = cosine_similarity_grad(&u, &v).unwrap();
        let fd = finite_difference_gradient(|x| cosine_similarity(x, &v).unwrap(), &u, FD_STEP);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn fd_examples() {
        let g = finite_difference_gradient(|t| t[0] * t[0], &[3.0], FD_STEP);
        assert!((g[0] - 6.0).abs() < 1e-6);
        let g = finite_difference_gradient(|_| 4.2, &[1.0, -2.0, 0.5], FD_STEP);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    proptest! {
        #[test]
        fn cosine_positive_scale_invariance(
            u in prop::collection::vec(-10.0f64..10.0, 5),
            v in prop::collection::vec(-10.0f64..10.0, 5),
            a in 0.01f64..100.0,
            b in 0.01f64..100.0,
        ) {
            prop_assume!(norm(&u) > 1e-3 && norm(&v) > 1e-3);
            let su: Vec<f64> = u.iter().map(|x| x * a).collect();
            let sv: Vec<f64> = v.iter().map(|x| x * b).collect();
            let c1 = cosine_similarity(&u, &v).unwrap();
            let c2 = cosine_similarity(&su, &sv).unwrap();
            prop_assert!((c1 - c2).abs() < 1e-12);
        }
    }
}
