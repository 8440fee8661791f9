use crate::numcore::{NumError, Tape, Tensor, Var};
use crate::scalar::Scalar;

fn eval_at<T, E, F>(f: &F, x: &Tensor<T>) -> Result<T, E>
where
    T: Scalar,
    E: From<NumError>,
    F: Fn(&mut Tape<T>, Var) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv)?;
    let v = tape.value(out);
    if !v.is_scalar() {
        return Err(NumError::NonScalarLoss { shape: v.shape().to_vec() }.into());
    }
    Ok(v.item())
}

/// Central-difference gradient of the scalar function `f` at `x`.
pub fn numeric_gradient<T, E, F>(f: F, x: &Tensor<T>, h: T) -> Result<Tensor<T>, E>
where
    T: Scalar,
    E: From<NumError>,
    F: Fn(&mut Tape<T>, Var) -> Result<Var, E>,
{
    let two_h = h + h;
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval_at(&f, &probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval_at(&f, &probe)?;
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / two_h;
    }
    Ok(out)
}

/// Compares the tape gradient of `f` at `x` against central differences
/// with step `h`.
///
/// Returns the largest per-coordinate `|analytic - numeric| / max(1, |numeric|)`.
pub fn finite_diff_check<T, E, F>(f: F, x: &Tensor<T>, h: T) -> Result<T, E>
where
    T: Scalar,
    E: From<NumError>,
    F: Fn(&mut Tape<T>, Var) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv)?;
    let analytic = tape.backward(out)?.wrt(xv);
    let numeric = numeric_gradient(&f, x, h)?;
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / n.abs().max(T::one()))
        .fold(T::zero(), T::max))
}
