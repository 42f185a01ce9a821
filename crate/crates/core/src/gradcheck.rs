//! Central finite-difference gradient checking in `f64`.
//!
//! Only the forward pass of a graph is used to form the numerical estimate, so
//! the check stays independent of the backward rules it validates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Mode, NodeId, Tensor};
use crate::error::Result;

/// Default central-difference step.
pub const STEP: f64 = 1e-5;

/// Outcome of checking one input.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub input: usize,
    pub max_abs_error: f64,
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`.
    pub relative_error: f64,
}

/// Compares backward gradients with central differences for every input.
///
/// `build` receives fresh leaves for `inputs` and returns any-shaped output.
/// The output is reduced to a scalar through a fixed random projection so that
/// every output element contributes. Graphs are rebuilt from `seed` on every
/// evaluation, which pins dropout masks.
pub fn check<F>(inputs: &[Tensor<f64>], mode: Mode, seed: u64, step: f64, build: F) -> Result<Vec<GradReport>>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Tensor<f64>], with_grad: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut g = Graph::new(mode, seed);
        let leaves: Vec<NodeId> = values.iter().map(|v| g.leaf(v.clone(), with_grad)).collect();
        let out = build(&mut g, &leaves)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let proj = Tensor::from_fn(g.shape(out).to_vec(), |_| rng.gen_range(-1.0..1.0));
        let proj = g.constant(proj);
        let weighted = g.mul(out, proj)?;
        let loss = g.sum(weighted);
        let value = g.value(loss)[0];
        if !with_grad {
            return Ok((value, Vec::new()));
        }
        let grads = g.backward(loss)?;
        let analytic = leaves
            .iter()
            .zip(values)
            .map(|(id, v)| grads.get(*id).cloned().unwrap_or_else(|| Tensor::zeros(v.shape().to_vec())))
            .collect();
        Ok((value, analytic))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut reports = Vec::with_capacity(inputs.len());
    for (i, a) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; inputs[i].numel()];
        let mut probe = inputs.to_vec();
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = inputs[i][j];
            probe[i].data_mut()[j] = orig + step;
            let (plus, _) = eval(&probe, false)?;
            probe[i].data_mut()[j] = orig - step;
            let (minus, _) = eval(&probe, false)?;
            probe[i].data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * step);
        }
        let diff: f64 = a.data().iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let max_abs_error = a.data().iter().zip(&numeric).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let denom = na.max(nn);
        reports.push(GradReport {
            input: i,
            max_abs_error,
            relative_error: if denom == 0.0 { 0.0 } else { diff / denom },
        });
    }
    Ok(reports)
}

/// Largest relative error over all inputs.
pub fn worst(reports: &[GradReport]) -> f64 {
    reports.iter().map(|r| r.relative_error).fold(0.0, f64::max)
}

/// Uniform random tensor in `[lo, hi)`.
pub fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

/// Random values bounded away from zero by `gap`, for kinked ops such as ReLU.
pub fn random_away_from_zero(shape: &[usize], gap: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let mag = rng.gen_range(gap..1.0);
        if rng.gen::<bool>() {
            mag
        } else {
            -mag
        }
    })
}

/// Distinct values with pairwise gaps of at least `1/numel`, shuffled; safe for max pooling.
pub fn random_distinct(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64 - 0.5).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    Tensor::new(shape.to_vec(), vals).expect("shape matches")
}
