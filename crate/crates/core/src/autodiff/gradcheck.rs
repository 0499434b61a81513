use crate::error::{Error, Result};

use super::{Tape, Tensor, Var};

/// Outcome of comparing tape gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max |analytic − numeric| / max(|analytic|, |numeric|, 1e-8)
    pub max_rel_error: f64,
    /// (input index, element index) of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

const FLOOR: f64 = 1e-8;

fn evaluate<F>(f: &F, xs: &[Tensor]) -> Result<(f64, Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = xs
        .iter()
        .map(|x| tape.leaf(&x.clone().with_grad()))
        .collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::Shape(format!(
            "grad_check needs a scalar function, got {:?}",
            tape.shape(out)
        )));
    }
    if !v[0].is_finite() {
        return Err(Error::NonFinite(format!("function value {}", v[0])));
    }
    Ok((v[0], tape, vars, out))
}

/// Central-difference check of a scalar function of several tensors.
pub fn grad_check_many<F>(f: F, xs: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (_, tape, vars, out) = evaluate(&f, xs)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(xs)
        .map(|(&v, x)| {
            grads
                .get(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; x.len()])
        })
        .collect();

    let mut numeric = Vec::with_capacity(xs.len());
    let mut probe = xs.to_vec();
    for xi in 0..xs.len() {
        let mut col = Vec::with_capacity(xs[xi].len());
        for e in 0..xs[xi].len() {
            let orig = xs[xi].data()[e];
            probe[xi].data_mut()[e] = orig + h;
            let (fp, ..) = evaluate(&f, &probe)?;
            probe[xi].data_mut()[e] = orig - h;
            let (fm, ..) = evaluate(&f, &probe)?;
            probe[xi].data_mut()[e] = orig;
            col.push((fp - fm) / (2.0 * h));
        }
        numeric.push(col);
    }

    let mut max_rel_error = 0.0;
    let mut worst = (0, 0);
    for (xi, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for (e, (&a, &n)) in a.iter().zip(n).enumerate() {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(FLOOR);
            if rel > max_rel_error {
                max_rel_error = rel;
                worst = (xi, e);
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst,
        analytic,
        numeric,
        tol,
    })
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, v| f(tape, v[0]), std::slice::from_ref(x), h, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let r = grad_check(
            |t, v| {
                let sq = t.square(v);
                Ok(t.sum(sq))
            },
            &x,
            1e-5,
            1e-9,
        )
        .unwrap();
        assert_eq!(r.analytic[0], vec![2.0, 4.0]);
        for (n, want) in r.numeric[0].iter().zip([2.0, 4.0]) {
            assert!((n - want).abs() < 1e-9);
        }
        assert!(r.passed());
    }

    #[test]
    fn constant_function() {
        let x = Tensor::new(vec![3], vec![1.0, -1.0, 0.5]).unwrap();
        let r = grad_check(
            |t, v| {
                let z = t.scale(v, 0.0);
                Ok(t.sum(z))
            },
            &x,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.analytic[0].iter().all(|&g| g == 0.0));
        assert!(r.numeric[0].iter().all(|&g| g == 0.0));
        assert!(r.passed());
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let x = Tensor::zeros(vec![4]);
        let r = grad_check(
            |t, v| {
                let s = t.sigmoid(v);
                Ok(t.sum(s))
            },
            &x,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.analytic[0].iter().all(|&g| g == 0.25));
        assert!(r.passed());
    }

    #[test]
    fn non_finite_is_error() {
        let x = Tensor::new(vec![1], vec![-1.0]).unwrap();
        let r = grad_check(
            |t, v| {
                let s = t.rsqrt(v, 0.0);
                Ok(t.sum(s))
            },
            &x,
            1e-5,
            1e-6,
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
