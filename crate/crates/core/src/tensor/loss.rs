use super::Tensor;
use crate::error::{Error, Result};

/// Mean squared error and its gradient `2 (prediction - target) / N`.
pub fn mse_loss(prediction: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if prediction.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            prediction.shape(),
            target.shape()
        )));
    }
    let n = prediction.len() as f64;
    let mut sum = 0f64;
    let grad = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p as f64 - t as f64;
            sum += d * d;
            (2.0 * d / n) as f32
        })
        .collect();
    Ok((sum / n, Tensor::from_parts(prediction.shape().to_vec(), grad)?))
}
