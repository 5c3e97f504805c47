//! Central-difference gradient checking.

use super::graph::{Graph, Var};
use super::param::HasParams;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over checked coordinates of |analytic − numeric| / max(1, |analytic|)
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±h probes straddle a nondifferentiable point.
    pub excluded: Vec<usize>,
}

fn evaluate<F>(f: &F, x: &Tensor) -> Result<(f64, Vec<i8>)>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::with_branch_recording();
    let xv = g.constant(x.clone());
    let y = f(&mut g, xv)?;
    Ok((g.value(y).item(), g.branch_signature().to_vec()))
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Compares the reverse-mode gradient of scalar `f` at `x` with central
/// differences of step `h`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::contract(format!("step h must be positive, got {h}")));
    }
    let mut g = Graph::with_branch_recording();
    let xv = g.leaf(x.clone());
    let root = f(&mut g, xv)?;
    if g.value(root).len() != 1 {
        return Err(Error::contract("grad_check needs a scalar-valued function"));
    }
    if !g.value(root).item().is_finite() {
        return Err(Error::NonFinite {
            what: "f at the base point".into(),
        });
    }
    g.backward(root)?;
    let analytic = g.grad(xv).unwrap_or_else(|| Tensor::zeros(x.shape()));
    let base_sig = g.branch_signature().to_vec();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        excluded: vec![],
    };
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let (fp, sp) = evaluate(&f, &xp)?;
        let (fm, sm) = evaluate(&f, &xm)?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite {
                what: format!("f near coordinate {i}"),
            });
        }
        if sp != base_sig || sm != base_sig {
            report.excluded.push(i);
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.data()[i];
        if !a.is_finite() {
            return Err(Error::NonFinite {
                what: format!("analytic gradient at coordinate {i}"),
            });
        }
        report.max_rel_error = report.max_rel_error.max(rel_err(a, numeric));
        report.checked += 1;
    }
    Ok(report)
}

fn evaluate_model<M, F>(model: &M, f: &F) -> Result<(f64, Vec<i8>)>
where
    F: Fn(&M, &mut Graph) -> Result<Var>,
{
    let mut g = Graph::with_branch_recording();
    let y = f(model, &mut g)?;
    Ok((g.value(y).item(), g.branch_signature().to_vec()))
}

/// Same check as [`grad_check`], over every parameter of `model`.
/// Coordinates are numbered through the concatenated parameter vector.
pub fn check_param_gradients<M, F>(model: &mut M, f: F, h: f64) -> Result<GradCheckReport>
where
    M: HasParams,
    F: Fn(&M, &mut Graph) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::contract(format!("step h must be positive, got {h}")));
    }
    let (analytic, base_sig) = {
        let mut g = Graph::with_branch_recording();
        let root = f(model, &mut g)?;
        if g.value(root).len() != 1 {
            return Err(Error::contract("gradient check needs a scalar loss"));
        }
        g.backward(root)?;
        let grads: Vec<f64> = g
            .grads_for(&model.params())
            .into_iter()
            .flat_map(|t| t.into_data())
            .collect();
        (grads, g.branch_signature().to_vec())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        excluded: vec![],
    };
    let sizes: Vec<usize> = model.params().iter().map(|p| p.value.len()).collect();
    let mut flat = 0;
    for (pi, &size) in sizes.iter().enumerate() {
        for j in 0..size {
            let orig = model.params()[pi].value.data()[j];
            model.params_mut()[pi].value.data_mut()[j] = orig + h;
            let plus = evaluate_model(model, &f);
            model.params_mut()[pi].value.data_mut()[j] = orig - h;
            let minus = evaluate_model(model, &f);
            model.params_mut()[pi].value.data_mut()[j] = orig;
            let ((fp, sp), (fm, sm)) = (plus?, minus?);
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("loss near parameter coordinate {flat}"),
                });
            }
            if sp != base_sig || sm != base_sig {
                report.excluded.push(flat);
            } else {
                let numeric = (fp - fm) / (2.0 * h);
                report.max_rel_error = report.max_rel_error.max(rel_err(analytic[flat], numeric));
                report.checked += 1;
            }
            flat += 1;
        }
    }
    Ok(report)
}
