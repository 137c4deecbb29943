//! Central finite-difference oracle for analytic gradients.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{ParameterSet, Scalar, Tensor};

/// Default perturbation size.
pub const GRADCHECK_EPS: f64 = 1e-4;

/// Relative discrepancy `|a − n| / max(|a|, |n|, floor)`.
///
/// The floor keeps near-zero gradients from turning rounding noise into
/// huge relative errors; below it the measure degrades to an absolute one.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

/// Magnitude below which gradient discrepancies are measured absolutely.
///
/// For `f32` the loss itself carries ~1e-7 relative rounding noise, so a
/// central difference cannot resolve gradients much smaller than this.
pub fn default_floor<F: Scalar>() -> f64 {
    if F::DTYPE == "f64" {
        1e-6
    } else {
        1e-1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst scalar.
    pub worst: Option<(String, usize)>,
    pub worst_pair: (f64, f64),
    pub checked: usize,
}

/// Perturbs `x` by ±eps in the element type and returns `(x+, x−, actual step)`.
fn perturb<F: Scalar>(x: F, eps: f64) -> (F, F, f64) {
    let plus = x + F::of(eps);
    let minus = x - F::of(eps);
    (plus, minus, plus.f64() - minus.f64())
}

/// Compares every trainable scalar's stored gradient with a central difference
/// of `loss`. Gradients must already be populated (run a backward pass first).
pub fn finite_diff_check<F, M, L>(model: &mut M, eps: f64, loss: L) -> Result<GradCheckReport>
where
    F: Scalar,
    M: ParameterSet<F>,
    L: FnMut(&M) -> Result<F>,
{
    finite_diff_check_with_floor(model, eps, default_floor::<F>(), loss)
}

pub fn finite_diff_check_with_floor<F, M, L>(
    model: &mut M,
    eps: f64,
    floor: f64,
    mut loss: L,
) -> Result<GradCheckReport>
where
    F: Scalar,
    M: ParameterSet<F>,
    L: FnMut(&M) -> Result<F>,
{
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("finite-difference eps must be > 0, got {eps}")));
    }
    let targets: Vec<(usize, String, Vec<F>)> = model
        .parameters()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_trainable())
        .map(|(i, p)| {
            let g = p
                .grad()
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![F::zero(); p.tensor().numel()]);
            (i, p.name.clone(), g)
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        worst_pair: (0.0, 0.0),
        checked: 0,
    };
    for (pi, name, analytic) in targets {
        for (j, a) in analytic.iter().enumerate() {
            let orig = model.parameters()[pi].data()[j];
            let (plus, minus, step) = perturb(orig, eps);
            model.parameters_mut()[pi].data_mut()?[j] = plus;
            let fp = loss(model)?;
            model.parameters_mut()[pi].data_mut()?[j] = minus;
            let fm = loss(model)?;
            model.parameters_mut()[pi].data_mut()?[j] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss while perturbing `{name}`[{j}]"
                )));
            }
            let numeric = (fp.f64() - fm.f64()) / step;
            let err = relative_error(a.f64(), numeric, floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((name.clone(), j));
                report.worst_pair = (a.f64(), numeric);
            }
        }
    }
    Ok(report)
}

/// Gradient check of a graph-built scalar function of free inputs.
///
/// Returns the worst relative error over all input elements.
pub fn check_graph_fn<F, B>(inputs: &[Tensor<F>], eps: f64, build: B) -> Result<f64>
where
    F: Scalar,
    B: Fn(&mut Graph<'_, F>, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor<F>], want_grad: bool| -> Result<(F, Vec<Vec<F>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals
            .iter()
            .map(|t| g.input(t.clone().with_requires_grad(want_grad)))
            .collect();
        let out = build(&mut g, &vars);
        let v = g.value(out)[0];
        let grads = if want_grad {
            g.backward(out)?;
            vars.iter()
                .map(|&x| {
                    g.grad(x)
                        .map(|s| s.to_vec())
                        .unwrap_or_else(|| vec![F::zero(); g.value(x).len()])
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok((v, grads))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut work: Vec<Tensor<F>> = inputs.to_vec();
    let mut worst = 0.0f64;
    for (ti, ga) in analytic.iter().enumerate() {
        for (j, a) in ga.iter().enumerate() {
            let orig = work[ti].data()[j];
            let (plus, minus, step) = perturb(orig, eps);
            work[ti].data_mut()[j] = plus;
            let (fp, _) = eval(&work, false)?;
            work[ti].data_mut()[j] = minus;
            let (fm, _) = eval(&work, false)?;
            work[ti].data_mut()[j] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::Numeric("non-finite evaluation in gradient check".into()));
            }
            let numeric = (fp.f64() - fm.f64()) / step;
            worst = worst.max(relative_error(a.f64(), numeric, default_floor::<F>()));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Parameter;

    fn single(w: f64) -> Vec<Parameter<f64>> {
        vec![Parameter::trainable("w", Tensor::scalar(w))]
    }

    #[test]
    fn quadratic_is_exact() {
        let mut params = single(2.0);
        params[0].accumulate_grad(&[4.0]).unwrap();
        let r = finite_diff_check(&mut params, 1e-4, |p: &Vec<Parameter<f64>>| {
            let w = p[0].data()[0];
            Ok(w * w)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-8, "{r:?}");
        assert_eq!(r.checked, 1);
        assert_eq!(params[0].data()[0], 2.0);
    }

    #[test]
    fn linear_is_exact() {
        let mut params = single(0.7);
        params[0].accumulate_grad(&[3.0]).unwrap();
        let r = finite_diff_check(&mut params, 1e-4, |p: &Vec<Parameter<f64>>| Ok(3.0 * p[0].data()[0])).unwrap();
        assert!(r.max_rel_err < 1e-10, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut params = single(1.0);
        params[0].accumulate_grad(&[1.0]).unwrap();
        let r = finite_diff_check(&mut params, 1e-4, |p: &Vec<Parameter<f64>>| {
            let w = p[0].data()[0];
            Ok(w * w)
        })
        .unwrap();
        assert!(r.max_rel_err > 0.4);
    }

    #[test]
    fn rejects_bad_eps_and_non_finite() {
        let mut params = single(1.0);
        assert!(finite_diff_check(&mut params, 0.0, |_: &Vec<Parameter<f64>>| Ok(0.0)).is_err());
        assert!(matches!(
            finite_diff_check(&mut params, 1e-4, |_: &Vec<Parameter<f64>>| Ok(f64::NAN)),
            Err(Error::Numeric(_))
        ));
    }
}
