//! The convolutional classifier and the spectrogram transformer.
//!
//! Both models keep their weights in a [`ParamTree`] and build a fresh
//! [`Graph`] per forward pass. Parameter names follow the dot-paths of the
//! reference implementations so trees can be printed and counted per subtree.

mod ast;
mod cnn;
pub(crate) mod init;
mod params;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use ast::{role_path, Ast, AstConfig, AST_HEAD};
pub use cnn::{Cnn, CnnConfig, CNN_HEAD};
pub use params::{group_thousands, Param, ParamTree};

use crate::autodiff::{Element, Graph, Mode, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::features::FrontEnd;

/// Which architecture to build.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Cnn(CnnConfig),
    Ast(AstConfig),
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Cnn(c) => c.validate(),
            ModelConfig::Ast(c) => c.validate(),
        }
    }

    pub fn front_end(&self) -> FrontEnd {
        match self {
            ModelConfig::Cnn(_) => FrontEnd::Cnn,
            ModelConfig::Ast(c) => FrontEnd::Ast { frames: c.in_frames },
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            ModelConfig::Cnn(c) => c.param_count(),
            ModelConfig::Ast(c) => c.param_count(),
        }
    }
}

pub fn build_cnn(config: CnnConfig) -> Result<Model> {
    Ok(Model::Cnn(Cnn::new(config, 0)?))
}

pub fn build_ast(config: AstConfig) -> Result<Model> {
    Ok(Model::Ast(Ast::new(config, 0)?))
}

pub fn count_params<T: Element>(tree: &ParamTree<T>, trainable_only: bool) -> usize {
    tree.count_params(trainable_only)
}

#[derive(Clone, Debug)]
pub enum Model<T = f32> {
    Cnn(Cnn<T>),
    Ast(Ast<T>),
}

impl<T: Element> Model<T> {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(match config {
            ModelConfig::Cnn(c) => Model::Cnn(Cnn::new(c.clone(), seed)?),
            ModelConfig::Ast(c) => Model::Ast(Ast::new(c.clone(), seed)?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Cnn(m) => ModelConfig::Cnn(m.config.clone()),
            Model::Ast(m) => ModelConfig::Ast(m.config.clone()),
        }
    }

    pub fn params(&self) -> &ParamTree<T> {
        match self {
            Model::Cnn(m) => &m.params,
            Model::Ast(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamTree<T> {
        match self {
            Model::Cnn(m) => &mut m.params,
            Model::Ast(m) => &mut m.params,
        }
    }

    /// Dot-path prefix of the classification head.
    pub fn head_prefix(&self) -> &'static str {
        match self {
            Model::Cnn(_) => CNN_HEAD,
            Model::Ast(_) => AST_HEAD,
        }
    }

    pub fn front_end(&self) -> FrontEnd {
        self.config().front_end()
    }

    pub fn input_shape(&self) -> (usize, usize) {
        match self {
            Model::Cnn(m) => (m.config.in_mels, m.config.in_frames),
            Model::Ast(m) => (m.config.in_mels, m.config.in_frames),
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Model::Cnn(m) => m.config.n_classes,
            Model::Ast(m) => m.config.n_classes,
        }
    }

    /// `[B, mels, frames]` to `[B, n_classes]` logits.
    pub fn forward(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        match self {
            Model::Cnn(m) => m.forward(g, x),
            Model::Ast(m) => m.forward(g, x),
        }
    }

    /// Extra loss terms contributed by adapters, if any.
    pub fn regularizer(&self, g: &mut Graph<T>) -> Result<Option<NodeId>> {
        match self {
            Model::Cnn(_) => Ok(None),
            Model::Ast(m) => crate::peft::regularizer(g, m),
        }
    }

    /// Writes running statistics recorded during a training forward.
    pub fn apply_buffer_updates(&mut self, updates: Vec<(String, Tensor<T>)>) -> Result<()> {
        let p = self.params_mut();
        for (name, value) in updates {
            p.set_buffer(&name, value)?;
        }
        Ok(())
    }

    /// Eval-mode logits for a `[B, mels, frames]` batch.
    pub fn predict(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(Mode::Eval, 0);
        let x = g.constant(x);
        let y = self.forward(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        match self {
            Model::Cnn(m) => Model::Cnn(Cnn {
                config: m.config.clone(),
                params: m.params.cast(),
            }),
            Model::Ast(m) => Model::Ast(Ast {
                config: m.config.clone(),
                params: m.params.cast(),
                adapters: m.adapters.clone(),
                budget: m.budget.clone(),
            }),
        }
    }

    /// Hook run after each optimizer step with the step's gradients.
    pub fn after_step(&mut self, grads: &HashMap<String, Tensor<T>>, step: usize) -> Result<()> {
        match self {
            Model::Cnn(_) => Ok(()),
            Model::Ast(m) => crate::peft::after_step(m, grads, step),
        }
    }

    pub fn as_ast_mut(&mut self) -> Result<&mut Ast<T>> {
        match self {
            Model::Ast(m) => Ok(m),
            Model::Cnn(_) => Err(Error::Injection(
                "adapter methods wrap transformer linear layers; the CNN has none".into(),
            )),
        }
    }

    pub fn summary(&self) -> String {
        let title = match self {
            Model::Cnn(_) => "CNN",
            Model::Ast(_) => "AST",
        };
        format!("{title}\n{}", self.params().summary())
    }
}
