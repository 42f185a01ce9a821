use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::init::{kaiming_uniform, truncated_normal};
use super::ParamTree;
use crate::autodiff::{attention_weights, Element, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::peft::{self, Adapter, RankBudget, Role};

/// Patch-embedding transformer with two special tokens, pre-norm blocks and a LayerNorm + Linear head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AstConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub intermediate: usize,
    pub patch: usize,
    pub stride: usize,
    pub in_mels: usize,
    pub in_frames: usize,
    pub n_classes: usize,
    pub dropout_p: f64,
    pub ln_eps: f64,
}

impl Default for AstConfig {
    fn default() -> Self {
        Self {
            hidden: 768,
            layers: 12,
            heads: 12,
            intermediate: 3072,
            patch: 16,
            stride: 10,
            in_mels: 128,
            in_frames: 1024,
            n_classes: 9,
            dropout_p: 0.1,
            ln_eps: 1e-12,
        }
    }
}

impl AstConfig {
    /// Hidden 64, 2 layers, 4 heads, 128×128 input.
    pub fn toy() -> Self {
        Self {
            hidden: 64,
            layers: 2,
            heads: 4,
            intermediate: 256,
            in_frames: 128,
            ..Self::default()
        }
    }

    pub fn patch_grid(&self) -> (usize, usize) {
        (
            (self.in_mels - self.patch) / self.stride + 1,
            (self.in_frames - self.patch) / self.stride + 1,
        )
    }

    pub fn n_patches(&self) -> usize {
        let (f, t) = self.patch_grid();
        f * t
    }

    /// Patches plus the cls and distillation tokens.
    pub fn seq_len(&self) -> usize {
        self.n_patches() + 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            )));
        }
        if self.patch == 0 || self.stride == 0 || self.in_mels < self.patch || self.in_frames < self.patch {
            return Err(Error::Config(format!(
                "{}×{} input cannot hold a {} patch",
                self.in_mels, self.in_frames, self.patch
            )));
        }
        if self.layers == 0 || self.intermediate == 0 || self.n_classes < 2 {
            return Err(Error::Config("layers and intermediate must be positive, n_classes ≥ 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} not in [0, 1)", self.dropout_p)));
        }
        Ok(())
    }

    pub fn embedding_params(&self) -> usize {
        let d = self.hidden;
        d * self.patch * self.patch + d + 2 * d + self.seq_len() * d
    }

    pub fn block_params(&self) -> usize {
        let (d, i) = (self.hidden, self.intermediate);
        4 * (d * d + d) + (d * i + i) + (i * d + d) + 4 * d
    }

    pub fn head_params(&self) -> usize {
        2 * self.hidden + self.hidden * self.n_classes + self.n_classes
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        self.embedding_params() + self.layers * self.block_params() + 2 * self.hidden + self.head_params()
    }
}

pub const AST_HEAD: &str = "classifier.";

/// Dot-path of the linear layer playing `role` in block `layer`.
pub fn role_path(layer: usize, role: Role) -> String {
    let leaf = match role {
        Role::Query => "attention.attention.query",
        Role::Key => "attention.attention.key",
        Role::Value => "attention.attention.value",
        Role::AttnOutput => "attention.output.dense",
        Role::Intermediate => "intermediate.dense",
        Role::MlpOutput => "output.dense",
    };
    format!("encoder.layer.{layer}.{leaf}")
}

#[derive(Clone, Debug)]
pub struct Ast<T = f32> {
    pub config: AstConfig,
    pub params: ParamTree<T>,
    /// Adapters keyed by the dot-path of the linear layer they wrap.
    pub adapters: BTreeMap<String, Adapter>,
    /// Rank-allocation state when AdaLoRA adapters are present.
    pub budget: Option<RankBudget>,
}

impl<T: Element> Ast<T> {
    pub fn new(config: AstConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, inter) = (config.hidden, config.intermediate);
        let mut p = ParamTree::new();
        let pp = config.patch * config.patch;
        p.insert("embeddings.cls_token", truncated_normal(&[1, 1, d], 0.02, &mut rng), true)?;
        p.insert("embeddings.distillation_token", truncated_normal(&[1, 1, d], 0.02, &mut rng), true)?;
        p.insert(
            "embeddings.position_embeddings",
            truncated_normal(&[1, config.seq_len(), d], 0.02, &mut rng),
            true,
        )?;
        let proj = "embeddings.patch_embeddings.projection";
        p.insert(
            format!("{proj}.weight"),
            kaiming_uniform(&[d, 1, config.patch, config.patch], pp, &mut rng),
            true,
        )?;
        p.insert(format!("{proj}.bias"), kaiming_uniform(&[d], pp, &mut rng), true)?;
        let mut linear = |p: &mut ParamTree<T>, path: String, d_out: usize, d_in: usize| -> Result<()> {
            p.insert(format!("{path}.weight"), kaiming_uniform(&[d_out, d_in], d_in, &mut rng), true)?;
            p.insert(format!("{path}.bias"), kaiming_uniform(&[d_out], d_in, &mut rng), true)
        };
        let layer_norm = |p: &mut ParamTree<T>, path: String, d: usize| -> Result<()> {
            p.insert(format!("{path}.weight"), Tensor::ones([d]), true)?;
            p.insert(format!("{path}.bias"), Tensor::zeros([d]), true)
        };
        for l in 0..config.layers {
            for role in Role::ALL {
                let (o, i) = role.shape(d, inter);
                linear(&mut p, role_path(l, role), o, i)?;
            }
            layer_norm(&mut p, format!("encoder.layer.{l}.layernorm_before"), d)?;
            layer_norm(&mut p, format!("encoder.layer.{l}.layernorm_after"), d)?;
        }
        layer_norm(&mut p, "layernorm".into(), d)?;
        layer_norm(&mut p, "classifier.layernorm".into(), d)?;
        linear(&mut p, "classifier.dense".into(), config.n_classes, d)?;
        Ok(Self {
            config,
            params: p,
            adapters: BTreeMap::new(),
            budget: None,
        })
    }

    fn layer_norm(&self, g: &mut Graph<T>, path: &str, x: NodeId) -> Result<NodeId> {
        let w = self.params.bind(g, &format!("{path}.weight"))?;
        let b = self.params.bind(g, &format!("{path}.bias"))?;
        g.layernorm(x, w, b, T::lit(self.config.ln_eps))
    }

    fn linear(&self, g: &mut Graph<T>, path: &str, x: NodeId) -> Result<NodeId> {
        peft::linear(g, &self.params, path, self.adapters.get(path), x)
    }

    fn split_heads(&self, g: &mut Graph<T>, x: NodeId, batch: usize) -> Result<NodeId> {
        let (s, h) = (self.config.seq_len(), self.config.heads);
        let x = g.reshape(x, &[batch, s, h, self.config.hidden / h])?;
        g.permute(x, &[0, 2, 1, 3])
    }

    fn encode(&self, g: &mut Graph<T>, x: NodeId, mut probe: Option<&mut Vec<Tensor<T>>>) -> Result<NodeId> {
        let c = &self.config;
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[1] != c.in_mels || s[2] != c.in_frames {
            return Err(Error::shape(
                "ast",
                format!("input {s:?}, expected [B, {}, {}]", c.in_mels, c.in_frames),
            ));
        }
        let (batch, d, seq) = (s[0], c.hidden, c.seq_len());
        let p = &self.params;

        let img = g.reshape(x, &[batch, 1, c.in_mels, c.in_frames])?;
        let w = p.bind(g, "embeddings.patch_embeddings.projection.weight")?;
        let b = p.bind(g, "embeddings.patch_embeddings.projection.bias")?;
        let patches = g.conv2d(img, w, Some(b), (c.stride, c.stride), (0, 0))?;
        let patches = g.reshape(patches, &[batch, d, c.n_patches()])?;
        let patches = g.transpose(patches, 1, 2)?;
        let cls = p.bind(g, "embeddings.cls_token")?;
        let cls = g.expand(cls, batch)?;
        let dist = p.bind(g, "embeddings.distillation_token")?;
        let dist = g.expand(dist, batch)?;
        let mut h = g.concat(&[cls, dist, patches], 1)?;
        let pos = p.bind(g, "embeddings.position_embeddings")?;
        let pos = g.reshape(pos, &[seq, d])?;
        h = g.add(h, pos)?;
        h = g.dropout(h, c.dropout_p)?;

        for l in 0..c.layers {
            let pre = format!("encoder.layer.{l}");
            let n = self.layer_norm(g, &format!("{pre}.layernorm_before"), h)?;
            let q = self.linear(g, &role_path(l, Role::Query), n)?;
            let k = self.linear(g, &role_path(l, Role::Key), n)?;
            let v = self.linear(g, &role_path(l, Role::Value), n)?;
            let (q, k, v) = (
                self.split_heads(g, q, batch)?,
                self.split_heads(g, k, batch)?,
                self.split_heads(g, v, batch)?,
            );
            if let Some(out) = probe.as_deref_mut() {
                out.push(attention_weights(g.value(q), g.value(k)));
            }
            let a = g.scaled_dot_product_attention(q, k, v)?;
            let a = g.permute(a, &[0, 2, 1, 3])?;
            let a = g.reshape(a, &[batch, seq, d])?;
            let a = self.linear(g, &role_path(l, Role::AttnOutput), a)?;
            let a = g.dropout(a, c.dropout_p)?;
            h = g.add(h, a)?;

            let n = self.layer_norm(g, &format!("{pre}.layernorm_after"), h)?;
            let m = self.linear(g, &role_path(l, Role::Intermediate), n)?;
            let m = g.gelu(m);
            let m = self.linear(g, &role_path(l, Role::MlpOutput), m)?;
            let m = g.dropout(m, c.dropout_p)?;
            h = g.add(h, m)?;
        }
        self.layer_norm(g, "layernorm", h)
    }

    /// `[B, mels, frames]` features to `[B, n_classes]` logits.
    pub fn forward(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let h = self.encode(g, x, None)?;
        let batch = g.shape(h)[0];
        let cls = g.slice(h, 1, 0, 1)?;
        let dist = g.slice(h, 1, 1, 1)?;
        let pooled = g.add(cls, dist)?;
        let pooled = g.scale(pooled, T::lit(0.5));
        let pooled = g.reshape(pooled, &[batch, self.config.hidden])?;
        let pooled = self.layer_norm(g, "classifier.layernorm", pooled)?;
        let w = self.params.bind(g, "classifier.dense.weight")?;
        let b = self.params.bind(g, "classifier.dense.bias")?;
        g.linear(pooled, w, Some(b))
    }

    /// Attention probabilities `[B, heads, S, S]` of every block for an eval-mode pass.
    pub fn attention_maps(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::new(crate::autodiff::Mode::Eval, 0);
        let x = g.constant(x.clone());
        let mut maps = Vec::new();
        self.encode(&mut g, x, Some(&mut maps))?;
        Ok(maps)
    }

    /// Paths of every linear layer with the given role.
    pub fn role_paths(&self, role: Role) -> Vec<String> {
        (0..self.config.layers).map(|l| role_path(l, role)).collect()
    }
}
