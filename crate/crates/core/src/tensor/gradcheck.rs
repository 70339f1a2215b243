use super::{Element, Tape, Tensor, TensorError, Var};

/// Largest `|a - n| / (|a| + 1e-8)` over paired components.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + 1e-8))
        .fold(0.0, f64::max)
}

/// Compares the tape gradient of a scalar function at `x` against central
/// differences with step `eps`, returning the max relative error.
pub fn finite_difference_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<f64, TensorError>
where
    T: Element,
    F: Fn(&mut Tape<T>, Var) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let y = f(&mut tape, xv)?;
    tape.backward(y)?;
    let analytic: Vec<f64> = match tape.grad(xv) {
        Some(g) => g.data().iter().map(|v| v.as_f64()).collect(),
        None => vec![0.0; x.len()],
    };

    let eval = |probe: Tensor<T>| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let v = tape.constant(probe);
        let out = f(&mut tape, v)?;
        Ok(tape.value(out).item().as_f64())
    };
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        let xi = x.data()[i].as_f64();
        plus.data_mut()[i] = T::from_f64(xi + eps);
        minus.data_mut()[i] = T::from_f64(xi - eps);
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * eps));
    }
    Ok(max_relative_error(&analytic, &numeric))
}
