use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::init::kaiming_uniform;
use super::ParamTree;
use crate::autodiff::{Element, Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Three conv blocks (Conv → ReLU → MaxPool → BatchNorm) and two linear layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    pub in_mels: usize,
    pub in_frames: usize,
    pub channels: [usize; 3],
    /// Input width of `fc1`; must equal the size the conv stack produces.
    pub flatten_dim: usize,
    pub fc_hidden: usize,
    pub dropout_p: f64,
    pub n_classes: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            in_mels: 128,
            in_frames: 157,
            channels: [16, 32, 64],
            flatten_dim: 19_456,
            fc_hidden: 256,
            dropout_p: 0.5,
            n_classes: 9,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl CnnConfig {
    /// `channels[2] × (in_mels ≫ 3) × ⌊⌊⌊in_frames/2⌋/2⌋/2⌋`.
    pub fn derived_flatten_dim(&self) -> usize {
        self.channels[2] * (self.in_mels >> 3) * (self.in_frames / 2 / 2 / 2)
    }

    /// Config with `flatten_dim` recomputed from the input size.
    pub fn with_input(mut self, in_mels: usize, in_frames: usize) -> Self {
        self.in_mels = in_mels;
        self.in_frames = in_frames;
        self.flatten_dim = self.derived_flatten_dim();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_mels < 8 || self.in_frames < 8 {
            return Err(Error::Config(format!(
                "CNN input {}×{} is too small for three 2×2 pools",
                self.in_mels, self.in_frames
            )));
        }
        if self.channels.contains(&0) || self.fc_hidden == 0 || self.n_classes < 2 {
            return Err(Error::Config("CNN widths must be positive and n_classes ≥ 2".into()));
        }
        let derived = self.derived_flatten_dim();
        if derived != self.flatten_dim {
            return Err(Error::Config(format!(
                "flatten_dim {} does not match the conv stack output {derived} for {}×{} input",
                self.flatten_dim, self.in_mels, self.in_frames
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} not in [0, 1)", self.dropout_p)));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let c = self.channels;
        let conv = |i: usize, o: usize| o * i * 9 + o;
        conv(1, c[0])
            + conv(c[0], c[1])
            + conv(c[1], c[2])
            + 2 * (c[0] + c[1] + c[2])
            + self.flatten_dim * self.fc_hidden
            + self.fc_hidden
            + self.fc_hidden * self.n_classes
            + self.n_classes
    }
}

pub const CNN_HEAD: &str = "fc2.";

#[derive(Clone, Debug)]
pub struct Cnn<T = f32> {
    pub config: CnnConfig,
    pub params: ParamTree<T>,
}

impl<T: Element> Cnn<T> {
    pub fn new(config: CnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamTree::new();
        let mut c_in = 1;
        for (i, &c_out) in config.channels.iter().enumerate() {
            let fan_in = c_in * 9;
            p.insert(format!("conv{}.weight", i + 1), kaiming_uniform(&[c_out, c_in, 3, 3], fan_in, &mut rng), true)?;
            p.insert(format!("conv{}.bias", i + 1), kaiming_uniform(&[c_out], fan_in, &mut rng), true)?;
            p.insert(format!("bn{}.weight", i + 1), Tensor::ones([c_out]), true)?;
            p.insert(format!("bn{}.bias", i + 1), Tensor::zeros([c_out]), true)?;
            p.insert_buffer(format!("bn{}.running_mean", i + 1), Tensor::zeros([c_out]))?;
            p.insert_buffer(format!("bn{}.running_var", i + 1), Tensor::ones([c_out]))?;
            c_in = c_out;
        }
        let (f, h, k) = (config.flatten_dim, config.fc_hidden, config.n_classes);
        p.insert("fc1.weight", kaiming_uniform(&[h, f], f, &mut rng), true)?;
        p.insert("fc1.bias", kaiming_uniform(&[h], f, &mut rng), true)?;
        p.insert("fc2.weight", kaiming_uniform(&[k, h], h, &mut rng), true)?;
        p.insert("fc2.bias", kaiming_uniform(&[k], h, &mut rng), true)?;
        Ok(Self { config, params: p })
    }

    /// `[B, mels, frames]` features to `[B, n_classes]` logits.
    pub fn forward(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let c = &self.config;
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[1] != c.in_mels || s[2] != c.in_frames {
            return Err(Error::shape(
                "cnn",
                format!("input {s:?}, expected [B, {}, {}]", c.in_mels, c.in_frames),
            ));
        }
        let batch = s[0];
        let p = &self.params;
        let mut h = g.reshape(x, &[batch, 1, c.in_mels, c.in_frames])?;
        for i in 1..=3 {
            let w = p.bind(g, &format!("conv{i}.weight"))?;
            let b = p.bind(g, &format!("conv{i}.bias"))?;
            h = g.conv2d(h, w, Some(b), (1, 1), (1, 1))?;
            h = g.relu(h);
            h = g.maxpool2d(h)?;
            let gamma = p.bind(g, &format!("bn{i}.weight"))?;
            let beta = p.bind(g, &format!("bn{i}.bias"))?;
            let (mean_name, var_name) = (format!("bn{i}.running_mean"), format!("bn{i}.running_var"));
            let missing = |n: &str| Error::Weights(format!("no buffer named {n}"));
            let rm = p.buffer(&mean_name).ok_or_else(|| missing(&mean_name))?;
            let rv = p.buffer(&var_name).ok_or_else(|| missing(&var_name))?;
            let (out, updated) = g.batchnorm2d(h, gamma, beta, rm, rv, T::lit(c.bn_momentum), T::lit(c.bn_eps))?;
            if let Some((m, v)) = updated {
                g.push_buffer_update(mean_name, m);
                g.push_buffer_update(var_name, v);
            }
            h = out;
        }
        h = g.reshape(h, &[batch, c.flatten_dim])?;
        let (w1, b1) = (p.bind(g, "fc1.weight")?, p.bind(g, "fc1.bias")?);
        h = g.linear(h, w1, Some(b1))?;
        h = g.relu(h);
        h = g.dropout(h, c.dropout_p)?;
        let (w2, b2) = (p.bind(g, "fc2.weight")?, p.bind(g, "fc2.bias")?);
        g.linear(h, w2, Some(b2))
    }
}
