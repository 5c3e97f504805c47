use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Largest input width the finite-difference penalty accepts by default.
pub const DEFAULT_PENALTY_DIM_CAP: usize = 64;

/// Rows `ε·x + (1 − ε)·x̃`, one mixing weight per row.
pub fn interpolate(real: &Tensor, fake: &Tensor, eps: &[f64]) -> Result<Tensor> {
    if real.shape() != fake.shape() || real.shape().len() != 2 {
        return Err(Error::Shape {
            op: "interpolate",
            lhs: real.shape().to_vec(),
            rhs: fake.shape().to_vec(),
        });
    }
    if eps.len() != real.rows() {
        return Err(Error::contract(format!(
            "need one mixing weight per row: {} rows, {} weights",
            real.rows(),
            eps.len()
        )));
    }
    if let Some(bad) = eps.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return Err(Error::contract(format!("mixing weight {bad} outside [0, 1]")));
    }
    let d = real.cols();
    let data = real
        .data()
        .iter()
        .zip(fake.data())
        .enumerate()
        .map(|(k, (x, xt))| {
            let e = eps[k / d];
            e * x + (1.0 - e) * xt
        })
        .collect();
    Tensor::new(real.shape().to_vec(), data)
}

/// Stacks `x̂ + h·eᵢ` and `x̂ − h·eᵢ` for every coordinate `i`.
///
/// The result has `2·d·B` rows: for coordinate `i`, rows `2iB..(2i+1)B` hold
/// the forward probes and the next `B` rows the backward probes.
pub fn probe_points(x_hat: &Tensor, h: f64, dim_cap: usize) -> Result<Tensor> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::contract(format!("finite-difference step must be positive, got {h}")));
    }
    let (b, d) = (x_hat.rows(), x_hat.cols());
    if d > dim_cap {
        return Err(Error::contract(format!(
            "gradient penalty by finite differences needs 2·{d} critic passes per row; \
             input width {d} exceeds the cap of {dim_cap}, and exact input gradients are \
             not available at this scale"
        )));
    }
    let mut data = Vec::with_capacity(2 * d * b * d);
    for i in 0..d {
        for sign in [1.0, -1.0] {
            for r in 0..b {
                let row = x_hat.row(r);
                data.extend(row.iter().enumerate().map(|(j, &v)| if j == i { v + sign * h } else { v }));
            }
        }
    }
    Tensor::new(vec![2 * d * b, d], data)
}

/// Mean of `(‖g‖ − 1)²` where `g` is the central-difference gradient read
/// off critic outputs on [`probe_points`].
pub fn penalty_from_probes(g: &mut Graph, outputs: Var, batch: usize, dim: usize, h: f64) -> Result<Var> {
    let shape = g.value(outputs).shape().to_vec();
    if shape != [2 * dim * batch, 1] {
        return Err(Error::Shape {
            op: "gradient_penalty",
            lhs: shape,
            rhs: vec![2 * dim * batch, 1],
        });
    }
    let mut cols = Vec::with_capacity(dim);
    for i in 0..dim {
        let plus = g.slice_rows(outputs, 2 * i * batch, batch)?;
        let minus = g.slice_rows(outputs, (2 * i + 1) * batch, batch)?;
        cols.push(g.sub(plus, minus)?);
    }
    let diffs = g.concat_cols(&cols)?;
    let grad = g.scale(diffs, 1.0 / (2.0 * h));
    let norm = g.row_norm(grad)?;
    let gap = g.add_scalar(norm, -1.0);
    let sq = g.square(gap);
    Ok(g.mean(sq))
}

/// Gradient penalty of `critic` at points interpolated between `real` and
/// `fake`, with input gradients estimated by central differences.
///
/// Real and fake rows enter as constants; the result is differentiable with
/// respect to whatever parameters `critic` binds.
pub fn gradient_penalty<F>(
    g: &mut Graph,
    mut critic: F,
    real: &Tensor,
    fake: &Tensor,
    eps: &[f64],
    h: f64,
    dim_cap: usize,
) -> Result<Var>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
{
    let x_hat = interpolate(real, fake, eps)?;
    let probes = probe_points(&x_hat, h, dim_cap)?;
    let pv = g.constant(probes);
    let out = critic(g, pv)?;
    penalty_from_probes(g, out, real.rows(), real.cols(), h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_critic(w: Vec<f64>, b: f64) -> impl FnMut(&mut Graph, Var) -> Result<Var> {
        move |g, x| {
            let d = w.len();
            let wv = g.constant(Tensor::new(vec![d, 1], w.clone())?);
            let y = g.matmul(x, wv)?;
            Ok(g.add_scalar(y, b))
        }
    }

    #[test]
    fn slope_two_in_one_dimension() {
        let real = Tensor::new(vec![3, 1], vec![0.1, -0.4, 2.0]).unwrap();
        let fake = Tensor::new(vec![3, 1], vec![1.0, 0.5, -1.0]).unwrap();
        let mut g = Graph::new();
        let p = gradient_penalty(&mut g, linear_critic(vec![2.0], 0.0), &real, &fake, &[0.2, 0.5, 0.9], 1e-3, 64)
            .unwrap();
        assert!((g.value(p).item() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_step_and_wide_inputs() {
        let x = Tensor::zeros(&[2, 3]);
        assert!(probe_points(&x, 0.0, 64).is_err());
        assert!(probe_points(&x, -1e-3, 64).is_err());
        assert!(probe_points(&x, 1e-3, 2).is_err());
        assert!(interpolate(&x, &x, &[0.5, 1.5]).is_err());
    }

    #[test]
    fn probe_layout() {
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let p = probe_points(&x, 0.5, 64).unwrap();
        assert_eq!(p.to_rows(), vec![vec![1.5, 2.0], vec![0.5, 2.0], vec![1.0, 2.5], vec![1.0, 1.5]]);
    }
}
