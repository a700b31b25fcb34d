use super::{Tape, Tensor, TensorError, Var};

type Result<T> = std::result::Result<T, TensorError>;

/// Compares the tape gradient of a scalar function against central
/// differences at `point`.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
pub fn grad_check<F>(f: F, point: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    grad_check_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(point),
        eps,
    )
}

/// Multi-input form of [`grad_check`]: every tensor in `points` is bound as
/// a parameter and checked coordinate by coordinate.
pub fn grad_check_many<F>(f: F, points: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(TensorError::InvalidArgument(format!(
            "grad_check eps {eps} outside [1e-7, 1e-3]"
        )));
    }

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let shape = out.shape();
        if shape != [1, 1] {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let v = out.value().item();
        Ok(v)
    };

    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::new();
        let vars: Vec<_> = points.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter().map(|&v| grads.wrt(v)).collect()
    };

    let mut worst = 0.0f64;
    let mut probe = points.to_vec();
    for (p, grad) in analytic.iter().enumerate() {
        for i in 0..points[p].len() {
            let orig = points[p].data()[i];
            probe[p].data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe[p].data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe[p].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
