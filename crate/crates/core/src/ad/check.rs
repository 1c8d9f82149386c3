// SPDX-License-Identifier: Apache-2.0
use num_complex::Complex64;

use super::graph::{Graph, Var};
use super::tensor::{Data, ParamSet};
use crate::Result;

/// Worst relative discrepancy, per parameter tensor, between the reverse-mode
/// gradient of `loss` and central finite differences with step `h`.
///
/// The relative error of a tensor is `|g - fd| / max(|fd|, |g|, 1e-12)`
/// measured in the Euclidean norm over all of its real scalars.
pub fn gradient_check<F>(params: &ParamSet, h: f64, loss: F) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, &ParamSet) -> Result<Var>,
{
    let mut g = Graph::new();
    let l = loss(&mut g, params)?;
    let analytic = g.backward(l)?.for_params(params);
    let eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let l = loss(&mut g, p)?;
        g.value(l)?.item()
    };
    let mut errs = Vec::with_capacity(params.len());
    let mut probe = params.clone();
    for (i, a) in analytic.iter().enumerate() {
        let a = a.to_reals();
        let mut numeric = vec![0.0; a.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let base = probe.tensor(i).data().clone();
            nudge(probe.tensor_mut(i).data_mut(), j, h);
            let up = eval(&probe)?;
            nudge(probe.tensor_mut(i).data_mut(), j, -2.0 * h);
            let down = eval(&probe)?;
            *probe.tensor_mut(i).data_mut() = base;
            *slot = (up - down) / (2.0 * h);
        }
        let diff = a
            .iter()
            .zip(&numeric)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        errs.push(diff / na.max(nn).max(1e-12));
    }
    Ok(errs)
}

fn nudge(d: &mut Data, j: usize, by: f64) {
    match d {
        Data::Real(v) => v[j] += by,
        Data::Complex(v) => {
            let delta = if j.is_multiple_of(2) {
                Complex64::new(by, 0.0)
            } else {
                Complex64::new(0.0, by)
            };
            v[j / 2] += delta;
        }
    }
}
