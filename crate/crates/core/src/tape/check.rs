//! Central finite-difference gradient checking.
//!
//! Runs in f64 regardless of the training precision: the graph code is
//! generic over the element type, so checking instantiates the exact same
//! code path with a wider accumulator. Sampled coordinates keep end-to-end
//! checks affordable; the sampling is seeded and reproducible.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::CoreResult;
use crate::rng::Rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckResult {
    /// max over checked coordinates of |analytic - numeric| /
    /// max(|analytic|, |numeric|, 1e-8)
    pub max_rel_error: f64,
    /// (input name, flat coordinate) of the worst deviation
    pub worst: Option<(String, usize)>,
    /// (analytic, numeric) at the worst coordinate
    pub worst_values: (f64, f64),
    /// set when either side evaluated to NaN, with its location
    pub nan_failure: Option<(String, usize)>,
    pub coords_checked: usize,
}

impl GradCheckResult {
    pub fn passes(&self, tol: f64) -> bool {
        self.nan_failure.is_none() && self.max_rel_error < tol
    }
}

/// Check the analytic gradient of `build` against central differences.
///
/// `build` receives a fresh tape plus one node per entry of `inputs`
/// (registered as named parameters, in order) and must return a scalar
/// loss node. `samples_per_tensor` of `None` checks every coordinate.
///
/// Each coordinate is probed over a small ladder of step sizes, keeping
/// the best agreement: a kinked activation (ReLU) inside one finite
/// window spoils that window only, while a genuine backward error
/// disagrees at every step size.
pub fn finite_diff_check<F>(
    inputs: &[(&str, Tensor<f64>)],
    step: f64,
    samples_per_tensor: Option<usize>,
    seed: u64,
    build: F,
) -> CoreResult<GradCheckResult>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> CoreResult<NodeId>,
{
    let eval = |tensors: &[Tensor<f64>]| -> CoreResult<f64> {
        let mut tape = Tape::new();
        let ids = register(&mut tape, inputs, tensors)?;
        let loss = build(&mut tape, &ids)?;
        Ok(tape.value(loss).data()[0])
    };

    // analytic gradients
    let base: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut tape = Tape::new();
    let ids = register(&mut tape, inputs, &base)?;
    let loss = build(&mut tape, &ids)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|id| tape.grad(*id).expect("param grad populated").to_vec())
        .collect();

    let mut rng = Rng::new(seed);
    let mut result = GradCheckResult {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        nan_failure: None,
        coords_checked: 0,
    };

    for (ti, (name, tensor)) in inputs.iter().enumerate() {
        let numel = tensor.numel();
        let coords: Vec<usize> = match samples_per_tensor {
            Some(s) if s < numel => {
                let mut picked = alloc::collections::BTreeSet::new();
                while picked.len() < s {
                    picked.insert(rng.below(numel));
                }
                picked.into_iter().collect()
            }
            _ => (0..numel).collect(),
        };
        for coord in coords {
            let a = analytic[ti][coord];
            if a.is_nan() {
                result.nan_failure.get_or_insert((name.to_string(), coord));
                continue;
            }
            let mut best: Option<(f64, f64)> = None; // (rel, numeric)
            let mut saw_number = false;
            for &h in &[step, step / 8.0, step * 8.0, step / 64.0] {
                let mut plus = base.clone();
                plus[ti].data_mut()[coord] += h;
                let mut minus = base.clone();
                minus[ti].data_mut()[coord] -= h;
                let (lp, lm) = (eval(&plus)?, eval(&minus)?);
                let numeric = (lp - lm) / (2.0 * h);
                if numeric.is_nan() {
                    continue;
                }
                saw_number = true;
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                if best.map(|(b, _)| rel < b).unwrap_or(true) {
                    best = Some((rel, numeric));
                }
            }
            if !saw_number {
                result.nan_failure.get_or_insert((name.to_string(), coord));
                continue;
            }
            let (rel, numeric) = best.expect("at least one step produced a number");
            result.coords_checked += 1;
            if rel > result.max_rel_error {
                result.max_rel_error = rel;
                result.worst = Some((name.to_string(), coord));
                result.worst_values = (a, numeric);
            }
        }
    }
    Ok(result)
}

fn register(
    tape: &mut Tape<f64>,
    inputs: &[(&str, Tensor<f64>)],
    tensors: &[Tensor<f64>],
) -> CoreResult<Vec<NodeId>> {
    inputs
        .iter()
        .zip(tensors)
        .map(|((name, _), t)| tape.param(name, t))
        .collect()
}
