//! Central finite-difference gradient checking.
//!
//! The check only ever calls [`DenseNet::forward`], so it is independent of
//! the reverse pass it validates.

use super::net::DenseNet;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error across all parameters and inputs.
    pub max_rel_error: f64,
    pub checked: usize,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / scale
}

/// Scalar probe L(θ, x) = output_grad · f_θ(x).
fn probe(net: &DenseNet, input: &[f64], output_grad: &[f64]) -> Result<f64> {
    Ok(net.forward(input)?.iter().zip(output_grad).map(|(y, g)| y * g).sum())
}

pub fn check_gradients(net: &DenseNet, input: &[f64], output_grad: &[f64], h: f64) -> Result<GradCheckReport> {
    let analytic = net.backward(input, output_grad)?;
    let mut worst: f64 = 0.0;
    let mut work = net.clone();
    for i in 0..net.num_params() {
        let orig = work.params()[i];
        work.params_mut()[i] = orig + h;
        let up = probe(&work, input, output_grad)?;
        work.params_mut()[i] = orig - h;
        let down = probe(&work, input, output_grad)?;
        work.params_mut()[i] = orig;
        worst = worst.max(rel_error(analytic.params[i], (up - down) / (2.0 * h)));
    }
    let mut x = input.to_vec();
    for j in 0..x.len() {
        let orig = x[j];
        x[j] = orig + h;
        let up = probe(net, &x, output_grad)?;
        x[j] = orig - h;
        let down = probe(net, &x, output_grad)?;
        x[j] = orig;
        worst = worst.max(rel_error(analytic.input[j], (up - down) / (2.0 * h)));
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        checked: net.num_params() + input.len(),
    })
}
