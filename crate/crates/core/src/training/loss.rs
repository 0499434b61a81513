use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Mean absolute error over every element, as a scalar variable.
/// The subgradient at exact ties is 0.
pub fn mae_loss(tape: &mut Tape, pred: Var, truth: Var) -> Result<Var> {
    if tape.shape(pred) != tape.shape(truth) {
        return Err(Error::Shape(format!(
            "mae: prediction {:?} vs truth {:?}",
            tape.shape(pred),
            tape.shape(truth)
        )));
    }
    let diff = tape.sub(pred, truth)?;
    let abs = tape.abs(diff);
    let axes: Vec<usize> = (0..tape.shape(abs).len()).collect();
    if axes.is_empty() {
        return Ok(abs);
    }
    tape.mean(abs, &axes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check_many, Tensor};

    fn loss_of(pred: &[f64], truth: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let p = tape.constant(vec![pred.len()], pred.to_vec()).unwrap();
        let t = tape.constant(vec![truth.len()], truth.to_vec()).unwrap();
        let l = mae_loss(&mut tape, p, t).unwrap();
        tape.value(l)[0]
    }

    #[test]
    fn examples() {
        assert_eq!(loss_of(&[1.0, -2.0, 3.5], &[1.0, -2.0, 3.5]), 0.0);
        assert_eq!(loss_of(&[0.0, 2.0], &[1.0, 1.0]), 1.0);
    }

    #[test]
    fn shape_mismatch() {
        let mut tape = Tape::new();
        let p = tape.constant(vec![2], vec![0.0; 2]).unwrap();
        let t = tape.constant(vec![3], vec![0.0; 3]).unwrap();
        assert!(mae_loss(&mut tape, p, t).is_err());
    }

    #[test]
    fn gradient_is_scaled_sign() {
        let pred = Tensor::new(vec![2, 3, 2], (0..12).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let truth = Tensor::new(vec![2, 3, 2], (0..12).map(|i| (i as f64).sin()).collect()).unwrap();
        let r = grad_check_many(
            |tape, v| {
                let t = tape.constant(truth.shape().to_vec(), truth.data().to_vec())?;
                mae_loss(tape, v[0], t)
            },
            std::slice::from_ref(&pred),
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.passed(), "{}", r.max_rel_error);
        for ((g, p), t) in r.analytic[0].iter().zip(pred.data()).zip(truth.data()) {
            assert_eq!(*g, (p - t).signum() / 12.0);
        }
    }
}
