//! Minimal reverse-mode automatic differentiation over dense arrays.
//!
//! A [`Graph`] records each op as it runs; [`Graph::backward`] returns the
//! gradient of a scalar with respect to every leaf that requires one. The op
//! set is the one the CNN and transformer need, plus a few helpers used by the
//! adapters (batched inverse, packed skew matrices).

mod adam;
mod graph;
mod kernels;
mod ops;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{Gradients, Graph, Mode, NodeId};
pub use tensor::{Element, Tensor};

/// Attention probabilities `softmax(q·kᵀ/√d)` for `[B, H, S, D]` inputs, shaped `[B, H, S, S]`.
pub fn attention_weights<T: Element>(q: &Tensor<T>, k: &Tensor<T>) -> Tensor<T> {
    let s = q.shape();
    let (heads, seq, d) = (s[0] * s[1], s[2], s[3]);
    let scale = T::one() / T::lit(d as f64).sqrt();
    let mut out = Vec::with_capacity(heads * seq * seq);
    for h in 0..heads {
        let r = h * seq * d..(h + 1) * seq * d;
        out.extend(kernels::attention_probs(seq, d, &q.data()[r.clone()], &k.data()[r], scale));
    }
    Tensor::new(vec![s[0], s[1], seq, seq], out).expect("attention shape")
}
