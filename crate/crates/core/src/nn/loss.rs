//! Pinball (quantile) loss and the combined position/orientation objective.

use super::model::{PoseLabel, QuantilePrediction};

/// `α·(y − ŷ)` when `ŷ ≤ y`, else `(1 − α)·(ŷ − y)`.
pub fn pinball(y: f64, y_hat: f64, alpha: f64) -> f64 {
    if y_hat <= y {
        alpha * (y - y_hat)
    } else {
        (1.0 - alpha) * (y_hat - y)
    }
}

/// Subgradient of [`pinball`] with respect to `ŷ` (the `ŷ ≤ y` branch at the kink).
pub fn pinball_grad(y: f64, y_hat: f64, alpha: f64) -> f64 {
    if y_hat <= y {
        -alpha
    } else {
        1.0 - alpha
    }
}

/// Pinball loss summed over elements.
pub fn quantile_loss(y: &[f64], y_hat: &[f64], alpha: f64) -> f64 {
    y.iter()
        .zip(y_hat)
        .map(|(&y, &p)| pinball(y, p, alpha))
        .sum()
}

/// Position pinball loss summed over axes and quantile levels.
pub fn position_loss(label: &PoseLabel, pred: &QuantilePrediction, quantiles: &[f64; 3]) -> f64 {
    (0..3)
        .flat_map(|a| (0..3).map(move |q| (a, q)))
        .map(|(a, q)| pinball(label.position[a], pred.position[a][q], quantiles[q]))
        .sum()
}

pub fn orientation_loss(label: &PoseLabel, pred: &QuantilePrediction, quantiles: &[f64; 3]) -> f64 {
    (0..3)
        .flat_map(|a| (0..3).map(move |q| (a, q)))
        .map(|(a, q)| pinball(label.orientation[a], pred.orientation[a][q], quantiles[q]))
        .sum()
}

/// Position loss plus `λ` times orientation loss.
pub fn total_loss(
    label: &PoseLabel,
    pred: &QuantilePrediction,
    quantiles: &[f64; 3],
    lambda: f64,
) -> f64 {
    position_loss(label, pred, quantiles) + lambda * orientation_loss(label, pred, quantiles)
}

/// [`total_loss`] and its gradient with respect to the flattened prediction
/// (`position[axis][q]` then `orientation[axis][q]`).
pub fn total_loss_with_grad(
    label: &PoseLabel,
    pred: &QuantilePrediction,
    quantiles: &[f64; 3],
    lambda: f64,
) -> (f64, [f64; 18]) {
    let mut g = [0.0; 18];
    let mut loss = 0.0;
    for a in 0..3 {
        for q in 0..3 {
            let (y, p) = (label.position[a], pred.position[a][q]);
            loss += pinball(y, p, quantiles[q]);
            g[a * 3 + q] = pinball_grad(y, p, quantiles[q]);
            let (y, p) = (label.orientation[a], pred.orientation[a][q]);
            loss += lambda * pinball(y, p, quantiles[q]);
            g[9 + a * 3 + q] = lambda * pinball_grad(y, p, quantiles[q]);
        }
    }
    (loss, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const Q: [f64; 3] = [0.02, 0.5, 0.98];

    #[test]
    fn hand_computed_values() {
        assert_eq!(pinball(1.5, 1.5, 0.98), 0.0);
        assert_eq!(pinball(2.0, 1.0, 0.98), 0.98);
        assert!((pinball(1.0, 2.0, 0.98) - 0.02).abs() < 1e-15);
        assert_eq!(quantile_loss(&[2.0, 1.0], &[1.0, 1.0], 0.98), 0.98);
    }

    fn random_pred(rng: &mut ChaCha8Rng) -> (PoseLabel, QuantilePrediction) {
        let mut r = || rng.random_range(-5.0..5.0);
        let label = PoseLabel {
            position: [r(), r(), r()],
            orientation: [r(), r(), r()],
        };
        let mut pred = QuantilePrediction {
            position: [[0.0; 3]; 3],
            orientation: [[0.0; 3]; 3],
        };
        for a in 0..3 {
            for q in 0..3 {
                pred.position[a][q] = r();
                pred.orientation[a][q] = r();
            }
        }
        (label, pred)
    }

    #[test]
    fn total_is_position_plus_lambda_orientation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (label, pred) = random_pred(&mut rng);
            // componentwise oracle: loop over the 18 outputs directly
            let mut pos = 0.0;
            let mut ori = 0.0;
            for a in 0..3 {
                for (q, alpha) in Q.iter().enumerate() {
                    let d = label.position[a] - pred.position[a][q];
                    pos += if d >= 0.0 {
                        alpha * d
                    } else {
                        (alpha - 1.0) * d
                    };
                    let d = label.orientation[a] - pred.orientation[a][q];
                    ori += if d >= 0.0 {
                        alpha * d
                    } else {
                        (alpha - 1.0) * d
                    };
                }
            }
            let total = total_loss(&label, &pred, &Q, 10.0);
            assert!((total - (pos + 10.0 * ori)).abs() < 1e-12);
            assert!((total_loss_with_grad(&label, &pred, &Q, 10.0).0 - total).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_away_from_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let eps = 1e-6;
        for _ in 0..50 {
            let (label, pred) = random_pred(&mut rng);
            let (_, g) = total_loss_with_grad(&label, &pred, &Q, 10.0);
            for i in 0..18 {
                let (a, q) = ((i % 9) / 3, i % 3);
                let get = |p: &QuantilePrediction| {
                    if i < 9 {
                        p.position[a][q]
                    } else {
                        p.orientation[a][q]
                    }
                };
                let y = if i < 9 {
                    label.position[a]
                } else {
                    label.orientation[a]
                };
                if (get(&pred) - y).abs() <= 1e-3 {
                    continue;
                }
                let mut plus = pred;
                let mut minus = pred;
                if i < 9 {
                    plus.position[a][q] += eps;
                    minus.position[a][q] -= eps;
                } else {
                    plus.orientation[a][q] += eps;
                    minus.orientation[a][q] -= eps;
                }
                let fd = (total_loss(&label, &plus, &Q, 10.0)
                    - total_loss(&label, &minus, &Q, 10.0))
                    / (2.0 * eps);
                assert!(
                    (g[i] - fd).abs() <= 1e-4 * fd.abs().max(1e-12),
                    "{i}: {} vs {fd}",
                    g[i]
                );
            }
        }
    }

    #[test]
    fn minimizer_is_the_quantile() {
        // the α-quantile of 1..=100 minimizes the summed pinball loss
        let ys: alloc::vec::Vec<f64> = (1..=100).map(f64::from).collect();
        let loss = |c: f64| ys.iter().map(|&y| pinball(y, c, 0.9)).sum::<f64>();
        let best = (0..=1000)
            .map(|i| f64::from(i) / 10.0)
            .min_by(|a, b| loss(*a).total_cmp(&loss(*b)))
            .unwrap();
        assert!((90.0..=91.0).contains(&best), "{best}");
    }
}
