use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy on logits in the overflow-free form
/// `max(z,0) - z*y + ln(1 + e^-|z|)`, with its gradient `(sigmoid(z) - y)/N`.
pub fn bce_with_logits<T: Element>(logits: &Tensor<T>, labels: &[f64]) -> Result<(f64, Tensor<T>)> {
    if logits.ndim() != 1 {
        return Err(Error::shape("bce_with_logits", "logit rank", 1, logits.ndim()));
    }
    if labels.len() != logits.len() {
        return Err(Error::shape("bce_with_logits", "label count", logits.len(), labels.len()));
    }
    if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::invalid("bce_with_logits", format!("label {bad} is not 0 or 1")));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(labels.len());
    for (&z, &y) in logits.data().iter().zip(labels) {
        let z = z.to_f64();
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        grad.push(T::from_f64((sigmoid(z) - y) / n));
    }
    Ok((loss / n, Tensor::new(vec![labels.len()], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss(z: f64, y: f64) -> f64 {
        bce_with_logits(&Tensor::<f64>::new(vec![1], vec![z]).unwrap(), &[y]).unwrap().0
    }

    #[test]
    fn closed_form_values() {
        assert!((loss(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(loss(50.0, 1.0) < 1e-20);
        let far = loss(-1000.0, 0.0);
        assert!(far.is_finite() && far.abs() < 1e-300);
    }

    #[test]
    fn gradient_is_sigmoid_minus_label_over_n() {
        let z = Tensor::<f64>::new(vec![2], vec![0.0, 2.0]).unwrap();
        let (_, g) = bce_with_logits(&z, &[1.0, 0.0]).unwrap();
        assert!((g.data()[0] - (-0.25)).abs() < 1e-15);
        assert!((g.data()[1] - sigmoid(2.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn non_binary_labels_are_rejected() {
        let z = Tensor::<f32>::zeros(&[2]);
        assert!(bce_with_logits(&z, &[1.0, 0.5]).is_err());
        assert!(bce_with_logits(&z, &[1.0]).is_err());
    }
}
