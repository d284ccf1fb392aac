use super::{NumericsError, Result};

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[label]` and its gradient `softmax - one_hot(label)`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(NumericsError::BadLabel {
            label,
            len: logits.len(),
        });
    }
    let loss = -log_softmax(logits)[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// `KL(softmax(p) ‖ softmax(q))` at temperature 1, with the gradient taken
/// with respect to the student logits `q` only: `softmax(q) - softmax(p)`.
pub fn kl_divergence(p_logits: &[f64], q_logits: &[f64]) -> Result<(f64, Vec<f64>)> {
    if p_logits.len() != q_logits.len() {
        return Err(NumericsError::DimMismatch {
            expected: p_logits.len(),
            got: q_logits.len(),
        });
    }
    let lp = log_softmax(p_logits);
    let lq = log_softmax(q_logits);
    let loss = lp
        .iter()
        .zip(&lq)
        .map(|(a, b)| a.exp() * (a - b))
        .sum::<f64>();
    let grad = lq.iter().zip(&lp).map(|(b, a)| b.exp() - a.exp()).collect();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_gradient, RngState, FD_STEP};

    #[test]
    fn cross_entropy_examples() {
        let (l, g) = softmax_cross_entropy(&[0.0, 0.0], 0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
        // ln(1 + e^-10)
        let (l, _) = softmax_cross_entropy(&[10.0, 0.0], 0).unwrap();
        assert!((l - 4.5398899e-5).abs() < 1e-11);
        assert!(matches!(
            softmax_cross_entropy(&[1.0], 1),
            Err(NumericsError::BadLabel { .. })
        ));
    }

    #[test]
    fn cross_entropy_is_stable_for_large_logits() {
        let (l, g) = softmax_cross_entropy(&[1000.0, -1000.0, 0.0], 1).unwrap();
        assert!((l - 2000.0).abs() < 1e-9);
        assert!(g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn cross_entropy_grad_matches_fd_on_random_logits() {
        let mut rng = RngState::new(11);
        for trial in 0..20 {
            let logits = rng.gaussian_vec(10, 2.0);
            let label = trial % 10;
            let (_, g) = softmax_cross_entropy(&logits, label).unwrap();
            let fd = finite_difference_gradient(
                |z| softmax_cross_entropy(z, label).unwrap().0,
                &logits,
                FD_STEP,
            );
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-6);
            }
            assert!(g.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn kl_examples() {
        let (l, g) = kl_divergence(&[0.3, -1.0, 2.0], &[0.3, -1.0, 2.0]).unwrap();
        assert!(l.abs() < 1e-15);
        assert!(g.iter().all(|x| x.abs() < 1e-15));
        // p = (e/(1+e), 1/(1+e)), q mirrored: KL = (2p1 - 1) * 1
        let (l, _) = kl_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((l - 0.46211716).abs() < 1e-8);
        assert!(kl_divergence(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn kl_nonnegative_and_grad_matches_fd() {
        let mut rng = RngState::new(5);
        for _ in 0..50 {
            let p = rng.gaussian_vec(6, 3.0);
            let q = rng.gaussian_vec(6, 3.0);
            let (l, g) = kl_divergence(&p, &q).unwrap();
            assert!(l >= -1e-12);
            let fd = finite_difference_gradient(|z| kl_divergence(&p, z).unwrap().0, &q, FD_STEP);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
