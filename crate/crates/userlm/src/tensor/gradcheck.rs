//! Finite-difference verification of the reverse-mode gradients.
//!
//! The checker rebuilds the graph once per perturbed coordinate and compares
//! central differences against the analytic sweep. It is O(parameter count)
//! forward passes, so it is only ever pointed at deliberately tiny models.

use super::graph::{Graph, NodeId};
use super::{Tensor, TensorError};

/// Builds a scalar loss from freshly inserted parameter nodes. Called many
/// times with perturbed inputs, so it must be a pure function of them.
pub type LossBuilder<'a> = dyn FnMut(&mut Graph, &[NodeId]) -> Result<NodeId, TensorError> + 'a;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradReport {
    /// Relative error per named input, in input order.
    pub per_input: Vec<(String, f64)>,
    /// Worst relative error across all inputs.
    pub max_rel_err: f64,
}

impl GradReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

impl std::fmt::Display for GradReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (name, err) in &self.per_input {
            writeln!(f, "  {name:<24} rel err {err:.3e}")?;
        }
        write!(f, "  max rel err {:.3e}", self.max_rel_err)
    }
}

fn forward_value(
    build: &mut LossBuilder<'_>,
    inputs: &[(String, Tensor)],
) -> Result<f64, TensorError> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|(_, t)| g.param(t.clone())).collect();
    let root = build(&mut g, &ids)?;
    g.value(root).item()
}

/// Compare analytic gradients of `build`'s scalar output against central
/// finite differences for every coordinate of every named input.
///
/// The reported relative error for an input with analytic gradient `a` and
/// finite-difference gradient `d` is
/// `max|a - d| / (max|a| + max|d| + 1e-12)`.
pub fn grad_check(
    build: &mut LossBuilder<'_>,
    inputs: &[(String, Tensor)],
    epsilon: f64,
) -> Result<GradReport, TensorError> {
    // Analytic pass.
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|(_, t)| g.param(t.clone())).collect();
    let root = build(&mut g, &ids)?;
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, (_, t))| {
            g.grad_data(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    // Numeric pass: one coordinate at a time, central difference.
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut max_rel_err: f64 = 0.0;
    for (i, (name, tensor)) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; tensor.numel()];
        for coord in 0..tensor.numel() {
            let mut plus = inputs.to_vec();
            plus[i].1.data_mut()[coord] += epsilon;
            let mut minus = inputs.to_vec();
            minus[i].1.data_mut()[coord] -= epsilon;
            let f_plus = forward_value(build, &plus)?;
            let f_minus = forward_value(build, &minus)?;
            numeric[coord] = (f_plus - f_minus) / (2.0 * epsilon);
        }
        let max_a = analytic[i].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let max_n = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let max_diff = analytic[i]
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        let rel = max_diff / (max_a + max_n + 1e-12);
        max_rel_err = max_rel_err.max(rel);
        per_input.push((name.clone(), rel));
    }
    Ok(GradReport { per_input, max_rel_err })
}
