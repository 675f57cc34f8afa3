//! Central finite-difference comparison for graph gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Gradients smaller than this are compared in absolute terms.
    pub floor: f64,
    /// Coordinates checked per tensor; `None` checks all of them.
    pub coords_per_tensor: Option<usize>,
    pub seed: u64,
    /// Skip coordinates whose `x +/- step` evaluations leave the smooth piece
    /// of the base point (a ReLU or clamp switches side), where a central
    /// difference does not estimate the derivative.
    pub skip_kinks: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            floor: 1e-4,
            coords_per_tensor: None,
            seed: 0,
            skip_kinks: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
    /// Coordinates left out because a kink lies within the step.
    pub skipped: usize,
}

/// Compares reverse-mode gradients of the scalar `f(graph, inputs)` with
/// central differences for every input tensor and every parameter.
pub fn check_gradients<F>(
    store: &ParamStore,
    inputs: &[Tensor],
    f: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |store: &ParamStore, inputs: &[Tensor]| -> Result<(f64, Vec<u8>)> {
        let mut g = Graph::with_params(store);
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let pattern = if opts.skip_kinks { g.branch_pattern() } else { Vec::new() };
        Ok((g.value(out).item(), pattern))
    };
    let mut g = Graph::with_params(store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let base = if opts.skip_kinks { g.branch_pattern() } else { Vec::new() };
    let grads = g.backward(out)?;
    let param_grads = grads.params(store);
    let input_grads: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut pick = |n: usize| -> Vec<usize> {
        match opts.coords_per_tensor {
            Some(k) if k < n => {
                let mut v = sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        }
    };
    let h = opts.step;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
        skipped: 0,
    };
    let mut record = |name: String, analytic: f64, up: (f64, Vec<u8>), down: (f64, Vec<u8>)| {
        if up.1 != base || down.1 != base {
            report.skipped += 1;
            return;
        }
        let numeric = (up.0 - down.0) / (2.0 * h);
        let denom = analytic.abs().max(numeric.abs()).max(opts.floor);
        let err = (analytic - numeric).abs() / denom;
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = err;
            report.worst = format!("{name}: analytic {analytic:e}, numeric {numeric:e}");
        }
    };

    let mut work = inputs.to_vec();
    for t in 0..inputs.len() {
        for i in pick(inputs[t].len()) {
            let x = inputs[t].data()[i];
            work[t].data_mut()[i] = x + h;
            let up = eval(store, &work)?;
            work[t].data_mut()[i] = x - h;
            let down = eval(store, &work)?;
            work[t].data_mut()[i] = x;
            record(format!("input{t}[{i}]"), input_grads[t].data()[i], up, down);
        }
    }
    let mut perturbed = store.clone();
    for id in store.ids() {
        for i in pick(store.get(id).len()) {
            let x = store.get(id).data()[i];
            perturbed.get_mut(id).data_mut()[i] = x + h;
            let up = eval(&perturbed, inputs)?;
            perturbed.get_mut(id).data_mut()[i] = x - h;
            let down = eval(&perturbed, inputs)?;
            perturbed.get_mut(id).data_mut()[i] = x;
            record(
                format!("{}[{i}]", store.name(id)),
                param_grads[id.index()].data()[i],
                up,
                down,
            );
        }
    }
    Ok(report)
}
