use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Which observed variables measure which latent factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CfaStructure {
    pub factors: Vec<FactorSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub name: String,
    pub indicators: Vec<String>,
}

impl CfaStructure {
    /// Reality measured by realism, illuminance and object; fakeness by
    /// weirdness and texture.
    pub fn reality_fakeness() -> Self {
        let f = |name: &str, ind: &[&str]| FactorSpec {
            name: name.into(),
            indicators: ind.iter().map(|s| s.to_string()).collect(),
        };
        CfaStructure {
            factors: vec![
                f("reality", &["realism", "illuminance", "object"]),
                f("fakeness", &["weirdness", "texture"]),
            ],
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Observed variables in order of first mention.
    pub fn variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for f in &self.factors {
            for v in &f.indicators {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CfaOptions {
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop when one step lowers the discrepancy by less than this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for CfaOptions {
    fn default() -> Self {
        CfaOptions {
            restarts: 5,
            max_iter: 20_000,
            tol: 1e-10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CfaFit {
    pub variables: Vec<String>,
    pub factor_names: Vec<String>,
    /// Variables by factors; zero where the structure fixes a loading.
    pub loadings: Vec<Vec<f64>>,
    pub factor_correlations: Vec<Vec<f64>>,
    pub unique_variances: Vec<f64>,
    pub discrepancy: f64,
    pub chi_square: f64,
    pub df: usize,
    pub n: usize,
    pub baseline_chi_square: f64,
    pub baseline_df: usize,
    pub cfi: f64,
    /// The baseline left no room for improvement, so CFI was set to 1.
    pub cfi_guarded: bool,
    pub rmsea: f64,
    pub iterations: usize,
}

impl fmt::Display for CfaFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CFI = {:.2}, RMSEA = {:.3}", self.cfi, self.rmsea)
    }
}

/// Parameter layout: free loadings, then factor correlations (through tanh),
/// then log unique variances.
struct Model {
    p: usize,
    k: usize,
    loading_slots: Vec<(usize, usize)>,
    phi_pairs: Vec<(usize, usize)>,
    s: Tensor,
    ln_det_s: f64,
}

impl Model {
    fn n_params(&self) -> usize {
        self.loading_slots.len() + self.phi_pairs.len() + self.p
    }

    /// Constant `(n_params, width)` matrix copying parameter `offset + j` to
    /// column `target(j)`.
    fn selector(&self, offset: usize, count: usize, width: usize, target: impl Fn(usize) -> Vec<usize>) -> Tensor {
        let m = self.n_params();
        let mut t = Tensor::zeros(&[m, width]);
        for j in 0..count {
            for c in target(j) {
                t.data_mut()[(offset + j) * width + c] = 1.0;
            }
        }
        t
    }

    fn sigma(&self, g: &mut Graph, theta: Var) -> Result<Var> {
        let (p, k) = (self.p, self.k);
        let nl = self.loading_slots.len();
        let nf = self.phi_pairs.len();
        let sel = self.selector(0, nl, p * k, |j| {
            let (i, f) = self.loading_slots[j];
            vec![i * k + f]
        });
        let sel = g.constant(sel);
        let flat = g.matmul(theta, sel)?;
        let lambda = g.reshape(flat, vec![p, k])?;

        let mut phi = g.constant(Tensor::identity(k));
        if nf > 0 {
            let pick = g.constant(self.selector(nl, nf, nf, |j| vec![j]));
            let raw = g.matmul(theta, pick)?;
            let r = g.tanh(raw);
            let mut scatter = Tensor::zeros(&[nf, k * k]);
            for (j, &(a, b)) in self.phi_pairs.iter().enumerate() {
                scatter.data_mut()[j * k * k + a * k + b] = 1.0;
                scatter.data_mut()[j * k * k + b * k + a] = 1.0;
            }
            let scatter = g.constant(scatter);
            let off = g.matmul(r, scatter)?;
            let off = g.reshape(off, vec![k, k])?;
            phi = g.add(phi, off)?;
        }

        let pick = g.constant(self.selector(nl + nf, p, p, |j| vec![j]));
        let logpsi = g.matmul(theta, pick)?;
        let psi_row = g.exp(logpsi);
        let eye = g.constant(Tensor::identity(p));
        let psi = g.mul(eye, psi_row)?;

        let lt = g.transpose(lambda)?;
        let lp = g.matmul(lambda, phi)?;
        let common = g.matmul(lp, lt)?;
        g.add(common, psi)
    }

    /// F = ln|Σ| + tr(SΣ⁻¹) − ln|S| − p.
    fn discrepancy(&self, g: &mut Graph, theta: Var) -> Result<Var> {
        let sigma = self.sigma(g, theta)?;
        let ld = g.logdet(sigma)?;
        let inv = g.inverse(sigma)?;
        let s = g.constant(self.s.clone());
        // S and Σ⁻¹ are symmetric, so the elementwise sum is the trace
        let prod = g.mul(s, inv)?;
        let tr = g.sum(prod);
        let f = g.add(ld, tr)?;
        Ok(g.add_scalar(f, -self.ln_det_s - self.p as f64))
    }

    fn value(&self, theta: &Tensor) -> f64 {
        let mut g = Graph::new();
        let t = g.constant(theta.clone());
        match self.discrepancy(&mut g, t) {
            Ok(f) if g.value(f).item().is_finite() => g.value(f).item(),
            _ => f64::INFINITY,
        }
    }

    fn value_and_grad(&self, theta: &Tensor) -> Result<(f64, Tensor)> {
        let mut g = Graph::new();
        let t = g.leaf(theta.clone());
        let f = self.discrepancy(&mut g, t)?;
        g.backward(f)?;
        let grad = g.grad(t).unwrap_or_else(|| Tensor::zeros(theta.shape()));
        Ok((g.value(f).item(), grad))
    }
}

/// Maximum-likelihood confirmatory factor analysis.
///
/// `observed` names the rows and columns of `s`; variables the structure does
/// not mention are dropped before fitting.
pub fn cfa_fit(
    structure: &CfaStructure,
    observed: &[String],
    s: &[Vec<f64>],
    n: usize,
    opts: &CfaOptions,
) -> Result<CfaFit> {
    let variables = structure.variables();
    let k = structure.factors.len();
    if k == 0 || structure.factors.iter().any(|f| f.indicators.is_empty()) {
        return Err(Error::contract("every factor needs at least one indicator"));
    }
    if s.len() != observed.len() || s.iter().any(|r| r.len() != observed.len()) {
        return Err(Error::contract("covariance shape does not match the variable list"));
    }
    let index: Vec<usize> = variables
        .iter()
        .map(|v| {
            observed
                .iter()
                .position(|o| o == v)
                .ok_or_else(|| Error::config("structure", format!("unknown variable `{v}`")))
        })
        .collect::<Result<_>>()?;
    let p = variables.len();
    if n <= p {
        return Err(Error::contract(format!("sample size {n} must exceed {p} variables")));
    }
    let sub = DMatrix::from_fn(p, p, |i, j| s[index[i]][index[j]]);
    if (0..p).any(|i| (0..p).any(|j| (sub[(i, j)] - sub[(j, i)]).abs() > 1e-9 * (1.0 + sub[(i, j)].abs()))) {
        return Err(Error::contract("covariance matrix is not symmetric"));
    }
    let min_eig = SymmetricEigen::new(sub.clone()).eigenvalues.min();
    if !(min_eig > 0.0) {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: min_eig,
        });
    }
    let ln_det_s = sub.clone().cholesky().map(|c| 2.0 * c.l().diagonal().map(f64::ln).sum()).ok_or(
        Error::NotPositiveDefinite {
            min_eigenvalue: min_eig,
        },
    )?;

    let mut loading_slots = Vec::new();
    for (f, spec) in structure.factors.iter().enumerate() {
        for v in &spec.indicators {
            let i = variables.iter().position(|x| x == v).expect("listed variable");
            if !loading_slots.contains(&(i, f)) {
                loading_slots.push((i, f));
            }
        }
    }
    let phi_pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|a| ((a + 1)..k).map(move |b| (a, b)))
        .collect();
    let free = loading_slots.len() + phi_pairs.len() + p;
    let moments = p * (p + 1) / 2;
    if free >= moments {
        return Err(Error::contract(format!(
            "model has {free} free parameters but only {moments} moments; degrees of freedom must be positive"
        )));
    }
    let df = moments - free;
    let model = Model {
        p,
        k,
        loading_slots,
        phi_pairs,
        s: Tensor::new(vec![p, p], sub.iter().copied().collect::<Vec<_>>())?,
        ln_det_s,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(f64, Tensor, usize)> = None;
    let mut last = Vec::new();
    for restart in 0..opts.restarts.max(1) {
        let start = initial_theta(&model, &sub, restart, &mut rng);
        match descend(&model, start, opts) {
            Ok((f, theta, iters)) => {
                if best.as_ref().is_none_or(|(bf, _, _)| f < *bf) {
                    best = Some((f, theta, iters));
                }
            }
            Err(Error::NonConvergence { last_iterate, .. }) => last = last_iterate,
            Err(e) => return Err(e),
        }
    }
    let (f, theta, iterations) = best.ok_or(Error::NonConvergence {
        what: "confirmatory factor fit",
        iterations: opts.max_iter,
        last_iterate: last,
    })?;
    Ok(summarize(&model, structure, variables, &theta, f, df, n, &sub, iterations))
}

fn initial_theta(model: &Model, s: &DMatrix<f64>, restart: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut theta = Vec::with_capacity(model.n_params());
    for &(i, _) in &model.loading_slots {
        let u = if restart == 0 { 0.7 } else { rng.random_range(0.2..1.0) };
        theta.push(u * s[(i, i)].sqrt());
    }
    for _ in &model.phi_pairs {
        theta.push(if restart == 0 { 0.0 } else { rng.random_range(-0.5..0.5) });
    }
    for i in 0..model.p {
        let u: f64 = if restart == 0 { 0.5 } else { rng.random_range(0.2..0.8) };
        theta.push((u * s[(i, i)]).ln());
    }
    let m = theta.len();
    Tensor::new(vec![1, m], theta).expect("parameter row")
}

/// Gradient descent with backtracking line search.
fn descend(model: &Model, mut theta: Tensor, opts: &CfaOptions) -> Result<(f64, Tensor, usize)> {
    let mut step = 0.1;
    let (mut f, mut grad) = model.value_and_grad(&theta)?;
    for iter in 1..=opts.max_iter {
        let gnorm2: f64 = grad.data().iter().map(|v| v * v).sum();
        if gnorm2 == 0.0 {
            return Ok((f, theta, iter));
        }
        let mut accepted = None;
        while step > 1e-16 {
            let trial = Tensor::new(
                theta.shape().to_vec(),
                theta.data().iter().zip(grad.data()).map(|(t, g)| t - step * g).collect(),
            )?;
            let ft = model.value(&trial);
            if ft <= f - 1e-4 * step * gnorm2 {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((next, fnext)) = accepted else {
            // no descent possible along the gradient: a stationary point
            return Ok((f, theta, iter));
        };
        let delta = f - fnext;
        theta = next;
        (f, grad) = model.value_and_grad(&theta)?;
        if delta.abs() < opts.tol {
            return Ok((f, theta, iter));
        }
        step = (step * 2.0).min(1e3);
    }
    Err(Error::NonConvergence {
        what: "confirmatory factor fit",
        iterations: opts.max_iter,
        last_iterate: theta.into_data(),
    })
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    model: &Model,
    structure: &CfaStructure,
    variables: Vec<String>,
    theta: &Tensor,
    f: f64,
    df: usize,
    n: usize,
    s: &DMatrix<f64>,
    iterations: usize,
) -> CfaFit {
    let (p, k) = (model.p, model.k);
    let th = theta.data();
    let mut loadings = vec![vec![0.0; k]; p];
    for (j, &(i, fi)) in model.loading_slots.iter().enumerate() {
        loadings[i][fi] = th[j];
    }
    let nl = model.loading_slots.len();
    let mut phi = vec![vec![0.0; k]; k];
    for (a, row) in phi.iter_mut().enumerate() {
        row[a] = 1.0;
    }
    for (j, &(a, b)) in model.phi_pairs.iter().enumerate() {
        let r = th[nl + j].tanh();
        phi[a][b] = r;
        phi[b][a] = r;
    }
    let nf = model.phi_pairs.len();
    let unique_variances: Vec<f64> = (0..p).map(|i| th[nl + nf + i].exp()).collect();

    let scale = (n - 1) as f64;
    let chi_square = scale * f.max(0.0);
    let ln_diag: f64 = (0..p).map(|i| s[(i, i)].ln()).sum();
    let baseline_chi_square = scale * (ln_diag - model.ln_det_s).max(0.0);
    let baseline_df = p * (p - 1) / 2;
    let target = chi_square - df as f64;
    let denom = (baseline_chi_square - baseline_df as f64).max(target).max(0.0);
    let (cfi, cfi_guarded) = if denom > 0.0 {
        (1.0 - target.max(0.0) / denom, false)
    } else {
        (1.0, true)
    };
    let rmsea = (target.max(0.0) / (df as f64 * scale)).sqrt();
    CfaFit {
        variables,
        factor_names: structure.factors.iter().map(|f| f.name.clone()).collect(),
        loadings,
        factor_correlations: phi,
        unique_variances,
        discrepancy: f,
        chi_square,
        df,
        n,
        baseline_chi_square,
        baseline_df,
        cfi,
        cfi_guarded,
        rmsea,
        iterations,
    }
}

/// Σ = ΛΦΛᵀ + diag(ψ).
pub fn implied_covariance(loadings: &[Vec<f64>], phi: &[Vec<f64>], psi: &[f64]) -> Vec<Vec<f64>> {
    let p = loadings.len();
    let k = phi.len();
    (0..p)
        .map(|i| {
            (0..p)
                .map(|j| {
                    let mut v = if i == j { psi[i] } else { 0.0 };
                    for a in 0..k {
                        for b in 0..k {
                            v += loadings[i][a] * phi[a][b] * loadings[j][b];
                        }
                    }
                    v
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("v{i}")).collect()
    }

    fn two_factor() -> (CfaStructure, Vec<Vec<f64>>) {
        let spec = CfaStructure {
            factors: vec![
                FactorSpec { name: "a".into(), indicators: names(6)[..3].to_vec() },
                FactorSpec { name: "b".into(), indicators: names(6)[3..].to_vec() },
            ],
        };
        let l = vec![
            vec![0.8, 0.0],
            vec![0.7, 0.0],
            vec![0.6, 0.0],
            vec![0.0, 0.9],
            vec![0.0, 0.5],
            vec![0.0, 0.7],
        ];
        let phi = vec![vec![1.0, 0.3], vec![0.3, 1.0]];
        let psi: Vec<f64> = l.iter().map(|r| 1.0 - r.iter().map(|v| v * v).sum::<f64>()).collect();
        (spec, implied_covariance(&l, &phi, &psi))
    }

    #[test]
    fn exact_model_fits_perfectly() {
        let (spec, s) = two_factor();
        let fit = cfa_fit(&spec, &names(6), &s, 1000, &CfaOptions::default()).unwrap();
        assert!(fit.chi_square < 1e-2, "{fit:?}");
        assert!((fit.cfi - 1.0).abs() < 1e-3);
        assert!(fit.rmsea < 1e-3);
        assert!((fit.factor_correlations[0][1] - 0.3).abs() < 1e-2);
        assert_eq!(fit.df, 8);
        assert_eq!(format!("{fit}"), "CFI = 1.00, RMSEA = 0.000");
    }

    #[test]
    fn non_positive_definite_rejected() {
        let s = vec![vec![1.0, 2.0, 0.0], vec![2.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let spec = CfaStructure {
            factors: vec![FactorSpec { name: "f".into(), indicators: names(3) }],
        };
        match cfa_fit(&spec, &names(3), &s, 100, &CfaOptions::default()) {
            Err(Error::NotPositiveDefinite { min_eigenvalue }) => assert!((min_eigenvalue + 1.0).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn saturated_model_has_no_degrees_of_freedom() {
        let s = vec![vec![1.0, 0.5, 0.4], vec![0.5, 1.0, 0.3], vec![0.4, 0.3, 1.0]];
        let spec = CfaStructure {
            factors: vec![FactorSpec { name: "f".into(), indicators: names(3) }],
        };
        assert!(matches!(
            cfa_fit(&spec, &names(3), &s, 100, &CfaOptions::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn discrepancy_gradient_matches_differences() {
        let (spec, s) = two_factor();
        let _ = spec;
        let sub = DMatrix::from_fn(6, 6, |i, j| s[i][j]);
        let model = Model {
            p: 6,
            k: 2,
            loading_slots: vec![(0, 0), (1, 0), (2, 0), (3, 1), (4, 1), (5, 1)],
            phi_pairs: vec![(0, 1)],
            s: Tensor::new(vec![6, 6], sub.iter().copied().collect()).unwrap(),
            ln_det_s: sub.determinant().ln(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = initial_theta(&model, &sub, 1, &mut rng);
        let report = crate::autodiff::grad_check(|g, t| model.discrepancy(g, t), &theta, 1e-6).unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }
}
