use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use indexmap::IndexMap;

use crate::autodiff::{Adam, Element, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::features::container::{self, NamedArray, VERSION_TENSOR};

/// A named leaf with its trainable flag.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Arc<Tensor<T>>,
    pub trainable: bool,
}

/// Parameters and non-trainable buffers keyed by dot-path, in insertion order.
#[derive(Clone, Debug)]
pub struct ParamTree<T = f32> {
    params: IndexMap<String, Param<T>>,
    buffers: IndexMap<String, Arc<Tensor<T>>>,
}

impl<T> Default for ParamTree<T> {
    fn default() -> Self {
        Self {
            params: IndexMap::new(),
            buffers: IndexMap::new(),
        }
    }
}

impl<T: Element> ParamTree<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::Weights(format!("duplicate leaf {name}")));
        }
        self.params.insert(
            name,
            Param {
                value: Arc::new(value),
                trainable,
            },
        );
        Ok(())
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::Weights(format!("duplicate leaf {name}")));
        }
        self.buffers.insert(name, Arc::new(value));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name).map(|p| p.value.as_ref())
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor<T>> {
        self.buffers.get(name).map(|b| b.as_ref())
    }

    fn missing(name: &str) -> Error {
        Error::Weights(format!("no leaf named {name}"))
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let p = self.params.get_mut(name).ok_or_else(|| Self::missing(name))?;
        if p.value.shape() != value.shape() {
            return Err(Error::Weights(format!(
                "{name}: shape {:?} cannot replace {:?}",
                value.shape(),
                p.value.shape()
            )));
        }
        p.value = Arc::new(value);
        Ok(())
    }

    pub fn set_buffer(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let b = self.buffers.get_mut(name).ok_or_else(|| Self::missing(name))?;
        if b.shape() != value.shape() {
            return Err(Error::Weights(format!(
                "{name}: shape {:?} cannot replace {:?}",
                value.shape(),
                b.shape()
            )));
        }
        *b = Arc::new(value);
        Ok(())
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.params.get_mut(name).ok_or_else(|| Self::missing(name))?.trainable = trainable;
        Ok(())
    }

    /// Sets every flag to `pred(name)`.
    pub fn set_trainable_where(&mut self, pred: impl Fn(&str) -> bool) {
        for (name, p) in self.params.iter_mut() {
            p.trainable = pred(name);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Exact element count over all (or only trainable) parameters. Buffers never count.
    pub fn count_params(&self, trainable_only: bool) -> usize {
        self.params
            .values()
            .filter(|p| !trainable_only || p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    /// Sum of element counts under a dot-path prefix.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, p)| p.value.numel())
            .sum()
    }

    /// Adds the named parameter to `g` as a leaf sharing this tree's storage.
    pub fn bind(&self, g: &mut Graph<T>, name: &str) -> Result<NodeId> {
        let p = self.params.get(name).ok_or_else(|| Self::missing(name))?;
        Ok(g.param(name, p.value.clone(), p.trainable))
    }

    /// A buffer as a graph constant.
    pub fn bind_buffer(&self, g: &mut Graph<T>, name: &str) -> Result<NodeId> {
        let b = self.buffers.get(name).ok_or_else(|| Self::missing(name))?;
        Ok(g.constant((**b).clone()))
    }

    /// One optimizer step over trainable parameters that received a gradient.
    pub fn apply_adam(&mut self, opt: &mut Adam<T>, grads: &HashMap<String, Tensor<T>>) {
        let params = self
            .params
            .iter_mut()
            .filter(|(_, p)| p.trainable)
            .map(|(k, p)| (k.as_str(), Arc::make_mut(&mut p.value)));
        opt.step(params, grads);
    }

    pub fn cast<U: Element>(&self) -> ParamTree<U> {
        ParamTree {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: Arc::new(p.value.cast()),
                            trainable: p.trainable,
                        },
                    )
                })
                .collect(),
            buffers: self.buffers.iter().map(|(k, b)| (k.clone(), Arc::new(b.cast()))).collect(),
        }
    }

    fn arrays(&self) -> Result<Vec<NamedArray>> {
        self.params
            .iter()
            .map(|(k, p)| (k, &p.value))
            .chain(self.buffers.iter())
            .map(|(k, v)| {
                let data = v.data().iter().map(|x| x.to_f32().unwrap_or(f32::NAN)).collect();
                NamedArray::new(k.clone(), v.shape().to_vec(), data)
            })
            .collect()
    }

    /// Writes every parameter and buffer in the named-tensor container.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        container::write(path, VERSION_TENSOR, &self.arrays()?)
    }

    /// Reads values saved from a tree with the same leaves.
    ///
    /// Leaves are matched in order; the first divergence in name, shape, or
    /// count is reported.
    pub fn load(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let (version, arrays) = container::read(path)?;
        if version != VERSION_TENSOR {
            return Err(Error::Weights(format!("container version {version} holds 2-D grids, not weights")));
        }
        self.load_arrays(arrays)
    }

    pub fn load_arrays(&mut self, arrays: Vec<NamedArray>) -> Result<()> {
        let expected: Vec<(String, Vec<usize>)> = self
            .params
            .iter()
            .map(|(k, p)| (k.clone(), p.value.shape().to_vec()))
            .chain(self.buffers.iter().map(|(k, b)| (k.clone(), b.shape().to_vec())))
            .collect();
        for (i, (name, shape)) in expected.iter().enumerate() {
            let Some(a) = arrays.get(i) else {
                return Err(Error::Weights(format!("file ends before leaf {name}")));
            };
            if &a.name != name {
                return Err(Error::Weights(format!("leaf {i}: expected {name}, file has {}", a.name)));
            }
            if &a.shape != shape {
                return Err(Error::Weights(format!(
                    "{name}: expected shape {shape:?}, file has {:?}",
                    a.shape
                )));
            }
        }
        if let Some(extra) = arrays.get(expected.len()) {
            return Err(Error::Weights(format!("unexpected extra leaf {}", extra.name)));
        }
        for (a, (name, _)) in arrays.into_iter().zip(&expected) {
            let t = Tensor::new(a.shape, a.data.into_iter().map(|v| T::lit(v as f64)).collect())?;
            if self.params.contains_key(name) {
                self.set(name, t)?;
            } else {
                self.set_buffer(name, t)?;
            }
        }
        Ok(())
    }

    /// Indented listing with per-leaf counts and the total.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let mut last: Vec<&str> = Vec::new();
        for (name, p) in &self.params {
            let parts: Vec<&str> = name.split('.').collect();
            let (dirs, leaf) = parts.split_at(parts.len() - 1);
            let common = last.iter().zip(dirs).take_while(|(a, b)| a == b).count();
            for (depth, d) in dirs.iter().enumerate().skip(common) {
                out.push_str(&format!("{}({d})\n", "  ".repeat(depth)));
            }
            let flag = if p.trainable { "" } else { "  [frozen]" };
            out.push_str(&format!(
                "{}{}: {:?} = {}{flag}\n",
                "  ".repeat(dirs.len()),
                leaf[0],
                p.value.shape(),
                p.value.numel()
            ));
            last = dirs.to_vec();
        }
        out.push_str(&format!(
            "Total params: {}\nTrainable params: {}\n",
            group_thousands(self.count_params(false)),
            group_thousands(self.count_params(true))
        ));
        out
    }
}

/// `5006825` → `"5,006,825"`.
pub fn group_thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_tree_counts_zero() {
        assert_eq!(ParamTree::<f32>::new().count_params(false), 0);
    }

    #[test]
    fn duplicates_rejected() {
        let mut t = ParamTree::<f32>::new();
        t.insert("a", Tensor::zeros([2]), true).unwrap();
        assert!(t.insert("a", Tensor::zeros([2]), true).is_err());
        assert!(t.insert_buffer("a", Tensor::zeros([2])).is_err());
    }

    #[test]
    fn thousands() {
        assert_eq!(group_thousands(5_006_825), "5,006,825");
        assert_eq!(group_thousands(999), "999");
        assert_eq!(group_thousands(1000), "1,000");
    }
}
