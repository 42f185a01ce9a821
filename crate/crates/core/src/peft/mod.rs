//! Fine-tuning modes and adapter injection for the spectrogram transformer.
//!
//! `full` and `classifier` only flip trainable flags. The five adapter methods
//! freeze the backbone, keep the head trainable, and add new leaves next to the
//! wrapped linear layer (`<path>.lora_A`, `<path>.oft_S`, ...). Every adapter
//! starts as an exact identity, so an injected model reproduces the base logits.

mod adalora;
mod fourier;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adalora::{reallocate, unmasked_count, AdaLoraConfig, RankBudget};
pub use fourier::{delta_weight, sample_locations, FourierConfig};

use crate::autodiff::{Element, Graph, NodeId, Tensor};
use crate::dsp::derive_seed;
use crate::error::{Error, Result};
use crate::models::init::{kaiming_uniform, normal};
use crate::models::{Ast, Model, ParamTree};

/// Linear layers of a transformer block that adapters can wrap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Query,
    Key,
    Value,
    AttnOutput,
    Intermediate,
    MlpOutput,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Query,
        Role::Key,
        Role::Value,
        Role::AttnOutput,
        Role::Intermediate,
        Role::MlpOutput,
    ];

    /// `(d_out, d_in)` for hidden size `d` and MLP width `inter`.
    pub fn shape(self, d: usize, inter: usize) -> (usize, usize) {
        match self {
            Role::Intermediate => (inter, d),
            Role::MlpOutput => (d, inter),
            _ => (d, d),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Query => "query",
            Role::Key => "key",
            Role::Value => "value",
            Role::AttnOutput => "attn_output",
            Role::Intermediate => "intermediate",
            Role::MlpOutput => "mlp_output",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Full,
    Classifier,
    Lora,
    Adalora,
    Ia3,
    Oft,
    Fourierft,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::Classifier => "classifier",
            Method::Lora => "lora",
            Method::Adalora => "adalora",
            Method::Ia3 => "ia3",
            Method::Oft => "oft",
            Method::Fourierft => "fourierft",
        }
    }

    pub fn is_adapter(self) -> bool {
        !matches!(self, Method::Full | Method::Classifier)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OftConfig {
    pub n_blocks: usize,
    /// Store only the `b(b−1)/2` free entries of each skew block instead of a full `b×b` matrix.
    pub packed: bool,
}

impl Default for OftConfig {
    fn default() -> Self {
        Self {
            n_blocks: 16,
            packed: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub method: Method,
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<Role>,
    pub adalora: AdaLoraConfig,
    pub fourierft: FourierConfig,
    pub oft: OftConfig,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            method: Method::Full,
            rank: 8,
            alpha: 16.0,
            targets: vec![Role::Query, Role::Value],
            adalora: AdaLoraConfig::default(),
            fourierft: FourierConfig::default(),
            oft: OftConfig::default(),
        }
    }
}

impl AdapterConfig {
    pub fn new(method: Method, targets: &[Role]) -> Self {
        Self {
            method,
            targets: targets.to_vec(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.method.is_adapter() {
            return Ok(());
        }
        if self.targets.is_empty() {
            return Err(Error::Config(format!("{} needs at least one target role", self.method.name())));
        }
        match self.method {
            Method::Lora if self.rank == 0 => Err(Error::Config("LoRA rank must be at least 1".into())),
            Method::Adalora => self.adalora.validate(),
            Method::Oft if self.oft.n_blocks == 0 => Err(Error::Config("OFT needs at least one block".into())),
            Method::Fourierft if self.fourierft.n_coeffs == 0 => {
                Err(Error::Config("FourierFT needs at least one coefficient".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Per-layer adapter state held by the model.
#[derive(Clone, Debug, PartialEq)]
pub enum Adapter {
    Lora {
        rank: usize,
        scaling: f64,
    },
    AdaLora {
        rank: usize,
        scaling: f64,
    },
    Ia3,
    Oft {
        n_blocks: usize,
        block: usize,
        packed: bool,
    },
    FourierFt {
        /// `(row, col)` frequency of each coefficient.
        locations: Vec<(usize, usize)>,
        scaling: f64,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetBreakdown {
    pub path: String,
    pub role: Role,
    pub added: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionReport {
    pub method: Method,
    pub trainable_count: usize,
    pub frozen_count: usize,
    pub added_leaves: Vec<String>,
    pub per_target: Vec<TargetBreakdown>,
    /// Root seed of FourierFT frequency draws.
    pub location_seed: Option<u64>,
}

impl InjectionReport {
    fn from_tree<T: Element>(method: Method, tree: &ParamTree<T>) -> Self {
        let trainable = tree.count_params(true);
        Self {
            method,
            trainable_count: trainable,
            frozen_count: tree.count_params(false) - trainable,
            added_leaves: Vec::new(),
            per_target: Vec::new(),
            location_seed: None,
        }
    }

    pub fn added_total(&self) -> usize {
        self.per_target.iter().map(|t| t.added).sum()
    }
}

/// `full` makes every leaf trainable; `classifier` only the head.
pub fn apply_freeze_mode<T: Element>(model: &mut Model<T>, method: Method) -> Result<InjectionReport> {
    let head = model.head_prefix();
    match method {
        Method::Full => model.params_mut().set_trainable_where(|_| true),
        Method::Classifier => model.params_mut().set_trainable_where(|n| n.starts_with(head)),
        other => {
            return Err(Error::Config(format!("{} is an adapter method, not a freeze mode", other.name())));
        }
    }
    Ok(InjectionReport::from_tree(method, model.params()))
}

/// Dispatches on `cfg.method`.
pub fn inject<T: Element>(model: &mut Model<T>, cfg: &AdapterConfig, seed: u64) -> Result<InjectionReport> {
    match cfg.method {
        Method::Full | Method::Classifier => apply_freeze_mode(model, cfg.method),
        Method::Lora => apply_lora(model, cfg, seed),
        Method::Adalora => apply_adalora(model, cfg, seed),
        Method::Ia3 => apply_ia3(model, cfg),
        Method::Oft => apply_oft(model, cfg),
        Method::Fourierft => apply_fourierft(model, cfg),
    }
}

/// Freezes the backbone and returns `(role, path, d_out, d_in)` for every target.
fn prepare<T: Element>(
    model: &mut Model<T>,
    cfg: &AdapterConfig,
    expected: Method,
) -> Result<Vec<(Role, String, usize, usize)>> {
    if cfg.method != expected {
        return Err(Error::Config(format!(
            "config method {} passed to the {} injector",
            cfg.method.name(),
            expected.name()
        )));
    }
    cfg.validate()?;
    let ast = model.as_ast_mut()?;
    if !ast.adapters.is_empty() {
        return Err(Error::Injection("model already carries adapters".into()));
    }
    let (d, inter) = (ast.config.hidden, ast.config.intermediate);
    let mut roles = cfg.targets.clone();
    roles.sort();
    roles.dedup();
    let mut targets = Vec::new();
    for l in 0..ast.config.layers {
        for &role in &roles {
            let (o, i) = role.shape(d, inter);
            let path = crate::models::role_path(l, role);
            match ast.params.get(&format!("{path}.weight")) {
                Some(w) if w.shape() == [o, i] => targets.push((role, path, o, i)),
                _ => return Err(Error::Injection(format!("{path} is not a {o}×{i} linear layer"))),
            }
        }
    }
    let head = crate::models::AST_HEAD;
    ast.params.set_trainable_where(|n| n.starts_with(head));
    Ok(targets)
}

struct Injector<'a, T> {
    ast: &'a mut Ast<T>,
    report: InjectionReport,
}

impl<'a, T: Element> Injector<'a, T> {
    fn new(model: &'a mut Model<T>, method: Method) -> Result<Self> {
        let ast = model.as_ast_mut()?;
        Ok(Self {
            ast,
            report: InjectionReport::from_tree(method, &ParamTree::<T>::new()),
        })
    }

    fn add(&mut self, path: &str, role: Role, adapter: Adapter, leaves: Vec<(&str, Tensor<T>)>) -> Result<()> {
        let mut added = 0;
        for (suffix, value) in leaves {
            let name = format!("{path}.{suffix}");
            added += value.numel();
            self.ast.params.insert(name.clone(), value, true)?;
            self.report.added_leaves.push(name);
        }
        self.report.per_target.push(TargetBreakdown {
            path: path.to_string(),
            role,
            added,
        });
        self.ast.adapters.insert(path.to_string(), adapter);
        Ok(())
    }

    fn finish(self) -> InjectionReport {
        let mut r = self.report;
        let tree = &self.ast.params;
        r.trainable_count = tree.count_params(true);
        r.frozen_count = tree.count_params(false) - r.trainable_count;
        r
    }
}

/// `W x + (α/r)·B(A x)` with `A ~ Kaiming-uniform` and `B = 0`.
pub fn apply_lora<T: Element>(model: &mut Model<T>, cfg: &AdapterConfig, seed: u64) -> Result<InjectionReport> {
    let targets = prepare(model, cfg, Method::Lora)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = cfg.rank;
    let mut inj = Injector::new(model, Method::Lora)?;
    for (role, path, o, i) in targets {
        let a = kaiming_uniform(&[r, i], i, &mut rng);
        let b = Tensor::zeros([o, r]);
        let adapter = Adapter::Lora {
            rank: r,
            scaling: cfg.alpha / r as f64,
        };
        inj.add(&path, role, adapter, vec![("lora_A", a), ("lora_B", b)])?;
    }
    Ok(inj.finish())
}

/// `W x + (α/r)·P diag(Λ ⊙ mask) Q x` with `Λ = 0`, `P, Q ~ N(0, 0.02²)`.
pub fn apply_adalora<T: Element>(model: &mut Model<T>, cfg: &AdapterConfig, seed: u64) -> Result<InjectionReport> {
    let targets = prepare(model, cfg, Method::Adalora)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = cfg.adalora.init_rank;
    let n_targets = targets.len();
    let mut inj = Injector::new(model, Method::Adalora)?;
    for (role, path, o, i) in targets {
        let p = normal(&[o, r], 0.02, &mut rng);
        let q = normal(&[r, i], 0.02, &mut rng);
        let adapter = Adapter::AdaLora {
            rank: r,
            scaling: cfg.alpha / r as f64,
        };
        inj.add(
            &path,
            role,
            adapter,
            vec![("adalora_P", p), ("adalora_E", Tensor::zeros([r])), ("adalora_Q", q)],
        )?;
        inj.ast.params.insert_buffer(format!("{path}.adalora_mask"), Tensor::ones([r]))?;
    }
    inj.ast.budget = Some(RankBudget::new(&cfg.adalora, n_targets));
    Ok(inj.finish())
}

/// `l ⊙ (W x + b)` with `l = 1`.
pub fn apply_ia3<T: Element>(model: &mut Model<T>, cfg: &AdapterConfig) -> Result<InjectionReport> {
    let targets = prepare(model, cfg, Method::Ia3)?;
    let mut inj = Injector::new(model, Method::Ia3)?;
    for (role, path, o, _) in targets {
        inj.add(&path, role, Adapter::Ia3, vec![("ia3_l", Tensor::ones([o]))])?;
    }
    Ok(inj.finish())
}

/// `R (W x) + b` with block-diagonal `R_i = (I + S_i)(I − S_i)⁻¹` and `S = 0`.
pub fn apply_oft<T: Element>(model: &mut Model<T>, cfg: &AdapterConfig) -> Result<InjectionReport> {
    let targets = prepare(model, cfg, Method::Oft)?;
    let nb = cfg.oft.n_blocks;
    if let Some((_, path, o, _)) = targets.iter().find(|(_, _, o, _)| o % nb != 0) {
        return Err(Error::Config(format!("{path}: {o} outputs not divisible into {nb} blocks")));
    }
    let mut inj = Injector::new(model, Method::Oft)?;
    for (role, path, o, _) in targets {
        let b = o / nb;
        let s = if cfg.oft.packed {
            Tensor::zeros([nb, b * (b - 1) / 2])
        } else {
            Tensor::zeros([nb, b, b])
        };
        let adapter = Adapter::Oft {
            n_blocks: nb,
            block: b,
            packed: cfg.oft.packed,
        };
        inj.add(&path, role, adapter, vec![("oft_S", s)])?;
    }
    Ok(inj.finish())
}

/// `(W + ΔW) x + b` with `ΔW = scaling · Re(IDFT₂(sparse spectrum))` and zero coefficients.
pub fn apply_fourierft<T: Element>(model: &mut Model<T>, cfg: &AdapterConfig) -> Result<InjectionReport> {
    let targets = prepare(model, cfg, Method::Fourierft)?;
    let fc = cfg.fourierft;
    if let Some((_, path, o, i)) = targets.iter().find(|(_, _, o, i)| fc.n_coeffs > o * i) {
        return Err(Error::Config(format!(
            "{path}: {} coefficients exceed the {o}×{i} matrix",
            fc.n_coeffs
        )));
    }
    let mut inj = Injector::new(model, Method::Fourierft)?;
    inj.report.location_seed = Some(fc.seed);
    for (k, (role, path, o, i)) in targets.into_iter().enumerate() {
        let seed = derive_seed(fc.seed, k as u64);
        let adapter = Adapter::FourierFt {
            locations: sample_locations(o, i, fc.n_coeffs, seed),
            scaling: fc.scaling,
            seed,
        };
        inj.add(&path, role, adapter, vec![("fourierft_c", Tensor::zeros([fc.n_coeffs]))])?;
    }
    Ok(inj.finish())
}

fn eye<T: Element>(g: &mut Graph<T>, n: usize) -> NodeId {
    g.constant(Tensor::eye(n))
}

/// Block-diagonal Cayley rotation `[n_blocks, b, b]` from the stored skew parameter.
pub(crate) fn cayley<T: Element>(g: &mut Graph<T>, s: NodeId, block: usize, packed: bool) -> Result<NodeId> {
    let skew = if packed {
        g.skew_from_packed(s, block)?
    } else {
        let st = g.transpose(s, 1, 2)?;
        let d = g.sub(s, st)?;
        g.scale(d, T::lit(0.5))
    };
    let i = eye(g, block);
    let plus = g.add(skew, i)?;
    let neg = g.scale(skew, -T::one());
    let minus = g.add(neg, i)?;
    let inv = g.inverse(minus)?;
    g.matmul(plus, inv)
}

/// Evaluates the rotation blocks for a stored skew parameter.
pub fn oft_rotation<T: Element>(s: &Tensor<T>, packed: bool, block: usize) -> Result<Tensor<T>> {
    let mut g = Graph::new(crate::autodiff::Mode::Eval, 0);
    let s = g.constant(s.clone());
    let r = cayley(&mut g, s, block, packed)?;
    Ok(g.value(r).clone())
}

/// Forward of a possibly adapted linear layer at `path`.
pub(crate) fn linear<T: Element>(
    g: &mut Graph<T>,
    p: &ParamTree<T>,
    path: &str,
    adapter: Option<&Adapter>,
    x: NodeId,
) -> Result<NodeId> {
    let leaf = |suffix: &str| format!("{path}.{suffix}");
    let w = p.bind(g, &leaf("weight"))?;
    let b = p.bind(g, &leaf("bias"))?;
    match adapter {
        None => g.linear(x, w, Some(b)),
        Some(Adapter::Lora { scaling, .. }) => {
            let y = g.linear(x, w, Some(b))?;
            let a = p.bind(g, &leaf("lora_A"))?;
            let bb = p.bind(g, &leaf("lora_B"))?;
            let h = g.linear(x, a, None)?;
            let d = g.linear(h, bb, None)?;
            let d = g.scale(d, T::lit(*scaling));
            g.add(y, d)
        }
        Some(Adapter::AdaLora { scaling, .. }) => {
            let y = g.linear(x, w, Some(b))?;
            let pm = p.bind(g, &leaf("adalora_P"))?;
            let e = p.bind(g, &leaf("adalora_E"))?;
            let q = p.bind(g, &leaf("adalora_Q"))?;
            let mask = p.bind_buffer(g, &leaf("adalora_mask"))?;
            let e = g.mul(e, mask)?;
            let h = g.linear(x, q, None)?;
            let h = g.mul(h, e)?;
            let d = g.linear(h, pm, None)?;
            let d = g.scale(d, T::lit(*scaling));
            g.add(y, d)
        }
        Some(Adapter::Ia3) => {
            let y = g.linear(x, w, Some(b))?;
            let l = p.bind(g, &leaf("ia3_l"))?;
            g.mul(y, l)
        }
        Some(Adapter::Oft { n_blocks, block, packed }) => {
            let s = p.bind(g, &leaf("oft_S"))?;
            let r = cayley(g, s, *block, *packed)?;
            let shape = g.shape(w).to_vec();
            let wb = g.reshape(w, &[*n_blocks, *block, shape[1]])?;
            let rw = g.matmul(r, wb)?;
            let rw = g.reshape(rw, &shape)?;
            g.linear(x, rw, Some(b))
        }
        Some(Adapter::FourierFt { locations, scaling, .. }) => {
            let c = p.bind(g, &leaf("fourierft_c"))?;
            let shape = g.shape(w).to_vec();
            let dw = fourier::delta_node(g, c, locations, shape[0], shape[1], *scaling)?;
            let w = g.add(w, dw)?;
            g.linear(x, w, Some(b))
        }
    }
}

/// AdaLoRA orthogonality penalty `weight · Σ (‖PᵀP − I‖² + ‖QQᵀ − I‖²)`; `None` for other methods.
pub(crate) fn regularizer<T: Element>(g: &mut Graph<T>, ast: &Ast<T>) -> Result<Option<NodeId>> {
    let Some(weight) = ast.budget.as_ref().map(|b| b.orth_reg_weight) else {
        return Ok(None);
    };
    let (p, adapters) = (&ast.params, &ast.adapters);
    let mut total: Option<NodeId> = None;
    for (path, adapter) in adapters {
        let Adapter::AdaLora { rank, .. } = adapter else { continue };
        let pm = p.bind(g, &format!("{path}.adalora_P"))?;
        let q = p.bind(g, &format!("{path}.adalora_Q"))?;
        let pt = g.transpose(pm, 0, 1)?;
        let ptp = g.matmul(pt, pm)?;
        let qt = g.transpose(q, 0, 1)?;
        let qqt = g.matmul(q, qt)?;
        for gram in [ptp, qqt] {
            let i = eye(g, *rank);
            let d = g.sub(gram, i)?;
            let sq = g.mul(d, d)?;
            let s = g.sum(sq);
            total = Some(match total {
                Some(t) => g.add(t, s)?,
                None => s,
            });
        }
    }
    Ok(total.map(|t| g.scale(t, T::lit(weight))))
}

/// Per-step adapter bookkeeping (AdaLoRA importance and rank reallocation).
pub(crate) fn after_step<T: Element>(ast: &mut Ast<T>, grads: &HashMap<String, Tensor<T>>, step: usize) -> Result<()> {
    adalora::update(ast, grads, step)
}
