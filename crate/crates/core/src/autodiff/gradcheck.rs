//! Central finite-difference verification of analytic gradients.
//!
//! Everything runs in `f64`. An element whose perturbed evaluations take a
//! different branch (ReLU sign, max winner, hinge side, clamp) than the base
//! point sits on a kink, where the central difference is not a derivative; such
//! elements are counted as skipped rather than compared.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::graph::{Graph, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub param_name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub passed: bool,
    /// Largest analytic gradient magnitude over the checked elements.
    pub max_abs_grad: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// An element passes when its relative error is within `tol_rel` or its
    /// absolute error within `tol_abs`; the latter covers gradients so small
    /// that round-off in the central difference dominates.
    pub tol_rel: f64,
    pub tol_abs: f64,
    /// Check at most this many elements per parameter (sampled without replacement).
    pub max_elems: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            tol_rel: 1e-4,
            tol_abs: 1e-8,
            max_elems: None,
            seed: 0,
        }
    }
}

/// Named parameter values fed to a loss closure as graph leaves, in order.
pub type NamedParams = [(String, Tensor<f64>)];

/// Builds the graph for `params`, returning the loss and the branch signature.
fn evaluate<F>(params: &NamedParams, loss_fn: &F, prepare: &dyn Fn(&mut Graph<f64>)) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::<f64>::new().with_branch_tracking();
    prepare(&mut g);
    let leaves: Vec<Var> = params.iter().map(|(_, t)| g.leaf(t.clone())).collect();
    let loss = loss_fn(&mut g, &leaves)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {value} during gradient check")));
    }
    Ok((g, leaves, loss))
}

pub fn finite_diff_check<F>(params: &NamedParams, loss_fn: F, opts: &GradCheckOptions) -> Result<Vec<GradReport>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    finite_diff_check_with(params, loss_fn, opts, &|_| {})
}

/// As [`finite_diff_check`], with a hook that configures each graph before the
/// forward pass (used to inject backward faults in tests).
pub fn finite_diff_check_with<F>(
    params: &NamedParams,
    loss_fn: F,
    opts: &GradCheckOptions,
    prepare: &dyn Fn(&mut Graph<f64>),
) -> Result<Vec<GradReport>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(1e-4..=1e-2).contains(&opts.eps) {
        return Err(Error::Precondition(format!(
            "finite-difference step {} outside [1e-4, 1e-2]",
            opts.eps
        )));
    }
    let (mut base, leaves, loss) = evaluate(params, &loss_fn, prepare)?;
    let signature = base.branch_signature();
    base.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = leaves.iter().map(|&v| base.grad_or_zeros(v)).collect();
    drop(base);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<(String, Tensor<f64>)> = params.to_vec();
    let mut reports = Vec::with_capacity(params.len());
    for (p, grad) in analytic.iter().enumerate() {
        let numel = grad.numel();
        let elems: Vec<usize> = match opts.max_elems {
            Some(k) if k < numel => {
                let mut picked = index::sample(&mut rng, numel, k).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..numel).collect(),
        };
        let mut report = GradReport {
            param_name: params[p].0.clone(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            passed: true,
            max_abs_grad: 0.0,
            checked: 0,
            skipped: 0,
        };
        for e in elems {
            let original = work[p].1.data()[e];
            let mut probe = |delta: f64| -> Result<(f64, u64)> {
                work[p].1.data_mut()[e] = original + delta;
                let (g, _, l) = evaluate(&work, &loss_fn, prepare)?;
                Ok((g.value(l).item(), g.branch_signature()))
            };
            let (plus, sig_plus) = probe(opts.eps)?;
            let (minus, sig_minus) = probe(-opts.eps)?;
            work[p].1.data_mut()[e] = original;
            if sig_plus != signature || sig_minus != signature {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = grad.data()[e];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-8);
            report.max_abs_err = report.max_abs_err.max(abs);
            report.max_rel_err = report.max_rel_err.max(rel);
            report.max_abs_grad = report.max_abs_grad.max(a.abs());
            report.checked += 1;
            report.passed &= rel <= opts.tol_rel || abs <= opts.tol_abs;
        }
        reports.push(report);
    }
    Ok(reports)
}
