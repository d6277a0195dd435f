use crate::scalar::{real, Scalar};

use super::{AutodiffError, Graph, Tensor, Var};

/// Relative-error denominator floor. Below this gradient magnitude the
/// comparison degrades to an absolute check at the floor scale, which keeps
/// roundoff in the central difference from inflating the ratio when the true
/// gradient is near zero.
pub const REL_ERR_FLOOR: f64 = 1e-4;

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport<F: Scalar> {
    pub analytic: Vec<F>,
    pub numeric: Vec<F>,
    /// `|analytic - numeric| / max(|analytic|, |numeric|, floor)` per coordinate.
    pub rel_errors: Vec<F>,
    pub max_rel_error: F,
    pub pass: bool,
}

/// Checks the recorded backward rules of `build` against central finite
/// differences at `point`.
///
/// `build` must produce a scalar from the single tracked input it is given.
/// The analytic gradient comes from one reverse sweep; the numeric gradient
/// re-evaluates the forward pass at `point[i] +/- step` for every coordinate.
pub fn grad_check<F, B>(
    build: B,
    point: &Tensor<F>,
    step: F,
    tol: F,
) -> Result<GradCheckReport<F>, AutodiffError>
where
    F: Scalar,
    B: Fn(&mut Graph<F>, Var) -> Result<Var, AutodiffError>,
{
    if step <= F::zero() {
        return Err(AutodiffError::shape("grad_check", "step must be positive"));
    }

    let mut graph = Graph::new();
    let x = graph.param_from(point);
    let loss = build(&mut graph, x)?;
    if graph.value(loss).numel() != 1 {
        return Err(AutodiffError::NonScalarLoss {
            shape: graph.value(loss).shape().to_vec(),
        });
    }
    graph.backward(loss)?;
    let analytic = graph.grad(x).expect("tracked input has a gradient").to_vec();

    let eval = |data: Vec<F>| -> Result<F, AutodiffError> {
        let mut g = Graph::new();
        let t = Tensor::from_vec(point.shape().to_vec(), data)?;
        let x = g.constant(t);
        let loss = build(&mut g, x)?;
        Ok(g.value(loss).item())
    };

    let base = point.data();
    let two_step = step + step;
    let mut numeric = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut plus = base.to_vec();
        plus[i] = plus[i] + step;
        let mut minus = base.to_vec();
        minus[i] = minus[i] - step;
        numeric.push((eval(plus)? - eval(minus)?) / two_step);
    }

    let floor = real::<F>(REL_ERR_FLOOR);
    let rel_errors: Vec<F> = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| {
            if a == n {
                F::zero()
            } else {
                (a - n).abs() / a.abs().max(n.abs()).max(floor)
            }
        })
        .collect();
    let max_rel_error = rel_errors.iter().copied().fold(F::zero(), F::max);
    Ok(GradCheckReport {
        analytic,
        numeric,
        rel_errors,
        max_rel_error,
        pass: max_rel_error < tol,
    })
}
