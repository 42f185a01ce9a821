use std::f64::consts::TAU;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Element, Graph, NodeId, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FourierConfig {
    pub n_coeffs: usize,
    pub scaling: f64,
    /// Root seed for the frequency locations; each target derives its own.
    pub seed: u64,
}

impl Default for FourierConfig {
    fn default() -> Self {
        Self {
            n_coeffs: 1000,
            scaling: 100.0,
            seed: 0,
        }
    }
}

/// `k` distinct `(row, col)` frequencies drawn uniformly from an `m×n` grid.
pub fn sample_locations(m: usize, n: usize, k: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample(&mut rng, m * n, k.min(m * n))
        .into_iter()
        .map(|idx| (idx / n, idx % n))
        .collect()
}

/// `[len, K]` cosine and sine tables of `2π·f_k·a/len`.
fn bases<T: Element>(len: usize, freqs: impl Iterator<Item = usize> + Clone) -> (Tensor<T>, Tensor<T>) {
    let k = freqs.clone().count();
    let mut cos = Vec::with_capacity(len * k);
    let mut sin = Vec::with_capacity(len * k);
    for a in 0..len {
        for f in freqs.clone() {
            // Reduce mod len first so the angle stays small for large grids.
            let theta = TAU * ((f * a) % len) as f64 / len as f64;
            cos.push(T::lit(theta.cos()));
            sin.push(T::lit(theta.sin()));
        }
    }
    (
        Tensor::new([len, k], cos).expect("table length matches shape"),
        Tensor::new([len, k], sin).expect("table length matches shape"),
    )
}

/// Differentiable `ΔW = s/(mn) · Re(Σ_k c_k e^{2πi(u_k a/m + v_k b/n)})` as an `[m, n]` node.
pub(crate) fn delta_node<T: Element>(
    g: &mut Graph<T>,
    c: NodeId,
    locations: &[(usize, usize)],
    m: usize,
    n: usize,
    scaling: f64,
) -> Result<NodeId> {
    if g.shape(c) != [locations.len()] {
        return Err(Error::shape(
            "fourierft",
            format!("coefficients {:?} for {} locations", g.shape(c), locations.len()),
        ));
    }
    let (cu, su) = bases::<T>(m, locations.iter().map(|l| l.0));
    let (cv, sv) = bases::<T>(n, locations.iter().map(|l| l.1));
    let cu = g.constant(cu);
    let su = g.constant(su);
    let cv = g.constant(cv);
    let sv = g.constant(sv);
    let cvt = g.transpose(cv, 0, 1)?;
    let svt = g.transpose(sv, 0, 1)?;
    let cc = g.mul(cu, c)?;
    let real = g.matmul(cc, cvt)?;
    let sc = g.mul(su, c)?;
    let imag = g.matmul(sc, svt)?;
    let d = g.sub(real, imag)?;
    Ok(g.scale(d, T::lit(scaling / (m * n) as f64)))
}

/// Direct evaluation of the same delta, one entry at a time.
pub fn delta_weight<T: Element>(
    c: &Tensor<T>,
    locations: &[(usize, usize)],
    m: usize,
    n: usize,
    scaling: f64,
) -> Result<Tensor<T>> {
    if c.numel() != locations.len() {
        return Err(Error::shape(
            "fourierft",
            format!("{} coefficients for {} locations", c.numel(), locations.len()),
        ));
    }
    let norm = scaling / (m * n) as f64;
    Ok(Tensor::from_fn([m, n], |idx| {
        let (a, b) = (idx / n, idx % n);
        let v: f64 = locations
            .iter()
            .zip(c.data())
            .map(|(&(u, w), ck)| {
                let phase = ((u * a) % m) as f64 / m as f64 + ((w * b) % n) as f64 / n as f64;
                ck.to_f64().unwrap_or(f64::NAN) * (TAU * phase).cos()
            })
            .sum();
        T::lit(v * norm)
    }))
}
