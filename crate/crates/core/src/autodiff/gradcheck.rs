use super::{AutodiffError, Tape, Tensor, Var};

/// Compares the reverse-mode gradient of a scalar function against central
/// differences and returns the worst relative error.
///
/// The relative error of each coordinate uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`. Any error, NaN or infinity along the
/// way is reported as `f64::INFINITY`.
pub fn finite_difference_check<F>(f: F, x: &Tensor, h: f64) -> f64
where
    F: Fn(&mut Tape, Var) -> Result<Var, AutodiffError>,
{
    let analytic = match analytic_gradient(&f, x) {
        Ok(g) => g,
        Err(_) => return f64::INFINITY,
    };
    let mut worst = 0.0_f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.values()[i];
        probe.values_mut()[i] = orig + h;
        let plus = evaluate(&f, &probe);
        probe.values_mut()[i] = orig - h;
        let minus = evaluate(&f, &probe);
        probe.values_mut()[i] = orig;
        let (Ok(plus), Ok(minus)) = (plus, minus) else {
            return f64::INFINITY;
        };
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        if !numeric.is_finite() || !a.is_finite() {
            return f64::INFINITY;
        }
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}

/// Reverse-mode gradient of `f` at `x`.
pub fn analytic_gradient<F>(f: &F, x: &Tensor) -> Result<Vec<f64>, AutodiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let leaf = tape.param(x);
    let root = f(&mut tape, leaf)?;
    if !tape.scalar(root).is_finite() {
        return Err(AutodiffError::Contract("non-finite function value".into()));
    }
    let grads = tape.backward(root)?;
    Ok(grads.get(leaf).map_or_else(|| vec![0.0; x.len()], <[f64]>::to_vec))
}

fn evaluate<F>(f: &F, x: &Tensor) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(x);
    let root = f(&mut tape, leaf)?;
    Ok(tape.scalar(root))
}
