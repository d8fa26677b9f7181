//! Central finite-difference verification of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::exec;

/// Outcome of a finite-difference sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over probes of `|analytic − numeric| / max(1e-12, |analytic| + |numeric|)`.
    pub max_rel_error: f64,
    pub probes: usize,
    /// Probes whose ± perturbation switched a relu sign or an argmax.
    pub branch_changes: usize,
    /// (input index, element index) of the worst probe.
    pub worst: Option<(usize, usize)>,
    /// (analytic, numeric) at the worst probe.
    pub worst_values: Option<(f64, f64)>,
}

/// Relative error used throughout the gradient checks.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Checks every element of every input. `graph` must return a scalar.
pub fn grad_check<F>(graph: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync,
{
    Ok(grad_check_report(graph, inputs, eps, |_, _| true)?.max_rel_error)
}

/// Checks the (input, element) pairs accepted by `select`.
pub fn grad_check_report<F, S>(graph: F, inputs: &[Tensor], eps: f64, select: S) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync,
    S: Fn(usize, usize) -> bool,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidArgument(format!(
            "grad_check eps must be in (0, 1e-2], got {eps}"
        )));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = graph(&mut tape, &vars)?;
    tape.backward(loss)?;
    let base_sig = tape.branch_signature();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    drop(tape);

    let probes: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| select(i, j))
        .collect();

    let eval = |i: usize, j: usize, delta: f64| -> Result<(f64, u64)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let mut t = t.clone();
                if k == i {
                    t.data_mut()[j] += delta;
                }
                tape.leaf(t)
            })
            .collect();
        let out = graph(&mut tape, &vars)?;
        let v = tape
            .value(out)
            .item()
            .ok_or_else(|| Error::InvalidArgument("grad_check graph must produce a scalar".into()))?;
        Ok((v, tape.branch_signature()))
    };

    let results = exec::map(&probes, |&(i, j)| -> Result<(f64, bool)> {
        let (plus, sp) = eval(i, j, eps)?;
        let (minus, sm) = eval(i, j, -eps)?;
        Ok(((plus - minus) / (2.0 * eps), sp != base_sig || sm != base_sig))
    });

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        probes: probes.len(),
        branch_changes: 0,
        worst: None,
        worst_values: None,
    };
    for (&(i, j), r) in probes.iter().zip(results) {
        let (numeric, changed) = r?;
        let err = relative_error(analytic[i][j], numeric);
        report.branch_changes += usize::from(changed);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((i, j));
            report.worst_values = Some((analytic[i][j], numeric));
        }
    }
    Ok(report)
}
