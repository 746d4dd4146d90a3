use crate::tensor::{Real, Tensor, TensorError};

/// Added to the true-class probability before the log.
pub const LOSS_EPS: f64 = 1e-12;

/// Sparse categorical cross-entropy on softmax outputs.
///
/// Returns the mean loss and its gradient with respect to the pre-softmax
/// logits, `(probs − onehot) / N`.
pub fn sparse_ce_loss<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>), TensorError> {
    let (n, k) = probs.dims2("sparse_ce_loss")?;
    if labels.len() != n {
        return Err(TensorError::ShapeMismatch {
            op: "sparse_ce_loss",
            left: probs.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(TensorError::InvalidArgument {
            op: "sparse_ce_loss",
            msg: format!("label {bad} out of range for {k} classes"),
        });
    }
    if n == 0 {
        return Ok((0.0, probs.clone()));
    }
    let p = probs.data();
    let loss = -labels
        .iter()
        .enumerate()
        .map(|(i, &l)| (p[i * k + l].as_f64() + LOSS_EPS).ln())
        .sum::<f64>()
        / n as f64;
    let inv_n = T::of(1.0 / n as f64);
    let mut grad = probs.clone();
    for (i, &l) in labels.iter().enumerate() {
        let row = &mut grad.data_mut()[i * k..(i + 1) * k];
        row[l] = row[l] - T::one();
        row.iter_mut().for_each(|g| *g = *g * inv_n);
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let probs = Tensor::from_rows(&[&[1.0f64, 0.0, 0.0], &[0.0, 0.0, 1.0]]).unwrap();
        let (loss, _) = sparse_ce_loss(&probs, &[0, 2]).unwrap();
        assert!(loss.abs() < 1e-11);
    }

    #[test]
    fn uniform_eight_classes() {
        let probs = Tensor::<f64>::full(vec![3, 8], 0.125);
        let (loss, grad) = sparse_ce_loss(&probs, &[0, 3, 7]).unwrap();
        assert!((loss - 8f64.ln()).abs() < 1e-10);
        assert!((loss - 2.0794).abs() < 1e-4);
        assert!((grad.data()[0] - (0.125 - 1.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn label_out_of_range() {
        let probs = Tensor::<f32>::full(vec![1, 2], 0.5);
        assert!(sparse_ce_loss(&probs, &[2]).is_err());
        assert!(sparse_ce_loss(&probs, &[0, 1]).is_err());
    }
}
