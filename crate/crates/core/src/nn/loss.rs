use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax of a `[batch, classes]` tensor.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for b in 0..out.rows() {
        let row = out.row_mut(b);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean softmax cross-entropy over the batch and its gradient with respect to the logits,
/// `(softmax - one_hot) / batch`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (batch, classes) = (logits.rows(), logits.row_len());
    if labels.len() != batch {
        return Err(Error::Input(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Input(format!("label {bad} outside [0, {classes})")));
    }
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        let row = logits.row(b);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        grad.row_mut(b)[label] -= 1.0;
    }
    let n = batch as f64;
    grad.scale(1.0 / n);
    Ok((loss / n, grad))
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_log_class_count() {
        let logits = Tensor::new(vec![2, 10], vec![0.3; 20]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 7]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((loss - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn saturated_correct_logit_has_zero_loss() {
        let logits = Tensor::new(vec![1, 3], vec![0.0, 1000.0, 0.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.is_finite());
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let logits = Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap();
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let logits = Tensor::new(vec![3, 4], data).unwrap();
        let labels = [2, 0, 3];
        let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        let h = 1e-5;
        for i in 0..logits.len() {
            let mut plus = logits.clone();
            plus.data_mut()[i] += h;
            let mut minus = logits.clone();
            minus.data_mut()[i] -= h;
            let fd = (softmax_cross_entropy(&plus, &labels).unwrap().0
                - softmax_cross_entropy(&minus, &labels).unwrap().0)
                / (2.0 * h);
            let a = grad.data()[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs());
            assert!(rel < 1e-6, "index {i}: analytic {a} vs numeric {fd}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..50).map(|_| rng.random_range(-30.0..30.0)).collect();
        let p = softmax(&Tensor::new(vec![10, 5], data).unwrap());
        for b in 0..10 {
            assert!((p.row(b).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.1, 0.9, 0.0]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }
}
