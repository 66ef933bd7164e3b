use crate::error::{Error, Result};
use crate::nn::{Matrix, Real};

/// Probabilities are clamped to this value before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean negative log-likelihood of `labels` under row-stochastic `probs`.
pub fn cross_entropy<T: Real>(probs: &Matrix<T>, labels: &[usize]) -> Result<f64> {
    if probs.rows() == 0 {
        return Err(Error::Empty("batch"));
    }
    if labels.len() != probs.rows() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), probs.rows())));
    }
    let mut sum = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= probs.cols() {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: probs.cols(),
            });
        }
        sum -= probs[(r, y)].as_f64().max(PROB_FLOOR).ln();
    }
    Ok(sum / probs.rows() as f64)
}

/// Gradient of the mean cross-entropy with respect to the pre-softmax logits:
/// `(P − onehot(y)) / N`.
pub fn softmax_cross_entropy_grad<T: Real>(probs: &Matrix<T>, labels: &[usize]) -> Matrix<T> {
    let inv_n = T::lit(1.0 / probs.rows() as f64);
    let mut g = probs.scale(inv_n);
    for (r, &y) in labels.iter().enumerate() {
        g[(r, y)] -= inv_n;
    }
    g
}

/// Joint objective: cross-entropy minus the weighted correlation reward.
pub fn total_loss(ce: f64, cca: f64, lambda: f64) -> f64 {
    ce - lambda * cca
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_prediction_costs_log_c() {
        let p = Matrix::<f64>::from_fn(4, 5, |_, _| 0.2);
        let ce = cross_entropy(&p, &[0, 1, 2, 3]).unwrap();
        assert!((ce - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let p = Matrix::<f64>::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let ce = cross_entropy(&p, &[1]).unwrap();
        assert!((ce - (-PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn label_out_of_range() {
        let p = Matrix::<f64>::from_fn(1, 2, |_, _| 0.5);
        assert!(matches!(cross_entropy(&p, &[2]), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn logit_gradient_rows_sum_to_zero() {
        let p = Matrix::<f64>::from_rows(&[vec![0.7, 0.2, 0.1], vec![0.1, 0.1, 0.8]]).unwrap();
        let g = softmax_cross_entropy_grad(&p, &[0, 1]);
        for r in 0..2 {
            assert!(g.row(r).iter().sum::<f64>().abs() < 1e-15);
        }
        assert!((g[(1, 1)] - (0.1 - 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn joint_objective() {
        assert_eq!(total_loss(1.5, 2.0, 0.3), 1.5 - 0.6);
        assert_eq!(total_loss(1.5, 2.0, 0.0), 1.5);
    }
}
