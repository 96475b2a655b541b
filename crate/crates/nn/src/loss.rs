use crate::{NnError, Result, Tensor};

/// Squared L2 error summed over the target dimensions and averaged over the
/// batch. Returns the loss and its gradient with respect to `pred`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f32, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(NnError::ShapeMismatch {
            expected: target.shape().to_vec(),
            actual: pred.shape().to_vec(),
        });
    }
    let n = pred.batch().max(1) as f32;
    let mut loss = 0.0f64;
    let grad: Vec<f32> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            loss += (d as f64) * (d as f64);
            2.0 * d / n
        })
        .collect();
    Ok(((loss / n as f64) as f32, Tensor::new(pred.shape().to_vec(), grad)?))
}
