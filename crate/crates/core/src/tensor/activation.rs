use super::Tensor;
use crate::error::{Error, Result};

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Passes `upstream` where `x > 0`; the subgradient at exactly zero is 0.
pub fn relu_backward(x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if x.shape() != upstream.shape() {
        return Err(Error::Shape(format!(
            "relu input {:?} vs upstream {:?}",
            x.shape(),
            upstream.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_negatives() {
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let up = Tensor::filled(&[3], 5.0);
        assert_eq!(relu_backward(&x, &up).unwrap().data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn identity_on_positive() {
        let x = Tensor::new(vec![2, 2], vec![0.1, 3.0, 7.5, 1e-3]).unwrap();
        assert_eq!(relu_forward(&x), x);
        let up = Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, -4.0]).unwrap();
        assert_eq!(relu_backward(&x, &up).unwrap(), up);
    }

    #[test]
    fn finite_differences_away_from_kink() {
        let xs = [-2.0f64, -0.5, -0.02, 0.02, 0.3, 1.7];
        let eps = 1e-3;
        for &x in &xs {
            let f = |v: f64| v.max(0.0);
            let fd = (f(x + eps) - f(x - eps)) / (2.0 * eps);
            let t = Tensor::new(vec![1], vec![x as f32]).unwrap();
            let g = relu_backward(&t, &Tensor::filled(&[1], 1.0)).unwrap().data()[0] as f64;
            assert!((fd - g).abs() <= 1e-3 * fd.abs().max(g.abs()).max(1e-12));
        }
    }
}
