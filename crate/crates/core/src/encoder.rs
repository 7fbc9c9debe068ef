//! Transformer encoder whose self-attention scores receive an additive,
//! learned bias selected by the structure matrix.
//!
//! For head `h` of layer `l` with query/key rows `q_i`, `k_j` of width `d`:
//!
//! ```text
//! score[i][j] = (q_i · k_j + bias(q_i, k_j, S[i][j])) / sqrt(d)
//! biaffine:    bias = q_i A_s k_jᵀ + b_s
//! decomposed:  bias = q_i · K_s + Q_s · k_j + b_s
//! ```
//!
//! `NA` cells receive no bias and own no parameters. Each (layer, head,
//! dependency) triple owns its own `A`, `Q`, `K`, `b`, all zero-initialized,
//! so an untrained structured encoder computes exactly what the plain
//! encoder computes.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::structure::{DependencyType, StructureMatrix};
use crate::tensor::{dot, matmul_raw, softmax_in_place, Graph, ParamId, ParamStore, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransformKind {
    None,
    Biaffine,
    Decomp,
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransformKind::None => "none",
            TransformKind::Biaffine => "biaffine",
            TransformKind::Decomp => "decomp",
        })
    }
}

impl std::str::FromStr for TransformKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "biaffine" => Ok(Self::Biaffine),
            "decomp" => Ok(Self::Decomp),
            other => Err(Error::Config(format!("unknown transformation mode `{other}`"))),
        }
    }
}

/// Which bias terms contribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct BiasTerms {
    /// `q_i · K_s`
    pub query_conditioned: bool,
    /// `Q_s · k_j`
    pub key_conditioned: bool,
    /// `b_s`
    pub prior: bool,
    /// `q_i A_s k_jᵀ`
    pub biaffine_core: bool,
}

impl BiasTerms {
    pub fn any(&self) -> bool {
        self.query_conditioned || self.key_conditioned || self.prior || self.biaffine_core
    }

    pub fn to_list(&self) -> String {
        let mut v = Vec::new();
        if self.query_conditioned {
            v.push("query");
        }
        if self.key_conditioned {
            v.push("key");
        }
        if self.prior {
            v.push("prior");
        }
        if self.biaffine_core {
            v.push("core");
        }
        v.join(",")
    }

    pub fn parse_list(s: &str) -> Result<Self> {
        let mut t = BiasTerms::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "query" => t.query_conditioned = true,
                "key" => t.key_conditioned = true,
                "prior" => t.prior = true,
                "core" => t.biaffine_core = true,
                other => return Err(Error::Config(format!("unknown bias term `{other}`"))),
            }
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transformation {
    kind: TransformKind,
    terms: BiasTerms,
}

impl Transformation {
    pub fn new(kind: TransformKind, terms: BiasTerms) -> Result<Self> {
        let ok = match kind {
            TransformKind::None => !terms.any(),
            TransformKind::Biaffine => !terms.query_conditioned && !terms.key_conditioned,
            TransformKind::Decomp => !terms.biaffine_core,
        };
        if !ok {
            return Err(Error::Config(format!(
                "bias terms `{}` are not available in mode {kind}",
                terms.to_list()
            )));
        }
        Ok(Self { kind, terms })
    }

    pub fn none() -> Self {
        Self {
            kind: TransformKind::None,
            terms: BiasTerms::default(),
        }
    }

    pub fn biaffine() -> Self {
        Self {
            kind: TransformKind::Biaffine,
            terms: BiasTerms {
                biaffine_core: true,
                prior: true,
                ..BiasTerms::default()
            },
        }
    }

    pub fn decomp() -> Self {
        Self {
            kind: TransformKind::Decomp,
            terms: BiasTerms {
                query_conditioned: true,
                key_conditioned: true,
                prior: true,
                ..BiasTerms::default()
            },
        }
    }

    /// Full term set for the kind.
    pub fn full(kind: TransformKind) -> Self {
        match kind {
            TransformKind::None => Self::none(),
            TransformKind::Biaffine => Self::biaffine(),
            TransformKind::Decomp => Self::decomp(),
        }
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn terms(&self) -> BiasTerms {
        self.terms
    }

    pub fn is_active(&self) -> bool {
        self.kind != TransformKind::None && self.terms.any()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ffn_mult: usize,
    pub transformation: Transformation,
    /// Attention blocks that receive structural bias; others run unbiased.
    pub structured_layers: Range<usize>,
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.structured_layers.start > self.structured_layers.end
            || self.structured_layers.end > self.layers
        {
            return Err(Error::Config(format!(
                "structured layers {:?} outside 0..{}",
                self.structured_layers, self.layers
            )));
        }
        Ok(())
    }

    pub fn is_structured(&self, layer: usize) -> bool {
        self.transformation.is_active() && self.structured_layers.contains(&layer)
    }
}

/// Transformation parameters of one dependency type in one head.
#[derive(Debug, Clone, Copy)]
pub struct DepParams {
    pub a: Option<ParamId>,
    pub query_vec: Option<ParamId>,
    pub key_vec: Option<ParamId>,
    pub prior: ParamId,
}

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    /// Indexed like [`DependencyType::STRUCTURED`]; empty for unstructured layers.
    pub deps: Vec<DepParams>,
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub heads: Vec<HeadParams>,
    pub w_o: ParamId,
    pub b_o: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

/// Mean transformation output for one (layer, head, dependency).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasRecord {
    pub layer: usize,
    pub head: usize,
    pub dependency: DependencyType,
    pub mean_bias: f64,
    pub count: usize,
}

/// Running sums of biases, keyed by (layer, head, dependency).
#[derive(Debug, Clone, Default)]
pub struct BiasRecorder {
    sums: BTreeMap<(usize, usize, DependencyType), (f64, usize)>,
}

impl BiasRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    fn add(&mut self, layer: usize, head: usize, dep: DependencyType, value: f64) {
        let e = self.sums.entry((layer, head, dep)).or_insert((0.0, 0));
        e.0 += value;
        e.1 += 1;
    }

    pub fn merge(&mut self, other: &BiasRecorder) {
        for (k, (s, c)) in &other.sums {
            let e = self.sums.entry(*k).or_insert((0.0, 0));
            e.0 += s;
            e.1 += c;
        }
    }

    pub fn records(&self) -> Vec<BiasRecord> {
        self.sums
            .iter()
            .filter(|(_, &(_, c))| c > 0)
            .map(|(&(layer, head, dependency), &(s, c))| BiasRecord {
                layer,
                head,
                dependency,
                mean_bias: s / c as f64,
                count: c,
            })
            .collect()
    }
}

fn dep_slug(d: DependencyType) -> &'static str {
    match d {
        DependencyType::IntraCoref => "intra_coref",
        DependencyType::InterCoref => "inter_coref",
        DependencyType::IntraRelate => "intra_relate",
        DependencyType::InterRelate => "inter_relate",
        DependencyType::IntraNe => "intra_ne",
        DependencyType::Na => "na",
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    layers: Vec<LayerParams>,
}

impl Encoder {
    /// Registers all encoder parameters. Projections use Xavier-uniform
    /// draws from `rng`; transformation parameters start at zero and draw
    /// nothing, so the random stream does not depend on the mode. Parameters
    /// of disabled bias terms are registered frozen.
    pub fn new<R: Rng>(config: EncoderConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let dh = config.head_dim();
        let inner = d * config.ffn_mult;
        let terms = config.transformation.terms();
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let mut heads = Vec::with_capacity(config.heads);
            for h in 0..config.heads {
                let p = format!("enc.l{l}.h{h}");
                let w_q = store.register(format!("{p}.wq"), Tensor::xavier_uniform(d, dh, rng))?;
                let w_k = store.register(format!("{p}.wk"), Tensor::xavier_uniform(d, dh, rng))?;
                let w_v = store.register(format!("{p}.wv"), Tensor::xavier_uniform(d, dh, rng))?;
                let mut deps = Vec::new();
                if config.is_structured(l) {
                    for dep in DependencyType::STRUCTURED {
                        let q = format!("{p}.{}", dep_slug(dep));
                        let mut reg = |name: String, shape: &[usize], on: bool| -> Result<ParamId> {
                            let id = store.register(name, Tensor::zeros(shape))?;
                            store.set_trainable(id, on);
                            Ok(id)
                        };
                        let (a, query_vec, key_vec) = match config.transformation.kind() {
                            TransformKind::Biaffine => {
                                (Some(reg(format!("{q}.A"), &[dh, dh], terms.biaffine_core)?), None, None)
                            }
                            TransformKind::Decomp => (
                                None,
                                Some(reg(format!("{q}.Q"), &[dh, 1], terms.key_conditioned)?),
                                Some(reg(format!("{q}.K"), &[dh, 1], terms.query_conditioned)?),
                            ),
                            TransformKind::None => unreachable!("inactive mode has no structured layers"),
                        };
                        let prior = reg(format!("{q}.b"), &[1, 1], terms.prior)?;
                        deps.push(DepParams {
                            a,
                            query_vec,
                            key_vec,
                            prior,
                        });
                    }
                }
                heads.push(HeadParams { w_q, w_k, w_v, deps });
            }
            let p = format!("enc.l{l}");
            layers.push(LayerParams {
                heads,
                w_o: store.register(format!("{p}.wo"), Tensor::xavier_uniform(d, d, rng))?,
                b_o: store.register(format!("{p}.bo"), Tensor::zeros(&[1, d]))?,
                ln1_gain: store.register(format!("{p}.ln1.g"), Tensor::full(&[1, d], 1.0))?,
                ln1_bias: store.register(format!("{p}.ln1.b"), Tensor::zeros(&[1, d]))?,
                ffn_w1: store.register(format!("{p}.ffn.w1"), Tensor::xavier_uniform(d, inner, rng))?,
                ffn_b1: store.register(format!("{p}.ffn.b1"), Tensor::zeros(&[1, inner]))?,
                ffn_w2: store.register(format!("{p}.ffn.w2"), Tensor::xavier_uniform(inner, d, rng))?,
                ffn_b2: store.register(format!("{p}.ffn.b2"), Tensor::zeros(&[1, d]))?,
                ln2_gain: store.register(format!("{p}.ln2.g"), Tensor::full(&[1, d], 1.0))?,
                ln2_bias: store.register(format!("{p}.ln2.b"), Tensor::zeros(&[1, d]))?,
            });
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layer_params(&self) -> &[LayerParams] {
        &self.layers
    }

    fn head(&self, layer: usize, head: usize) -> Result<&HeadParams> {
        self.layers
            .get(layer)
            .and_then(|l| l.heads.get(head))
            .ok_or_else(|| Error::Config(format!("no head {head} in layer {layer}")))
    }

    fn dep_params(&self, layer: usize, head: usize, s: DependencyType) -> Result<&DepParams> {
        let idx = s.structured_index().ok_or(Error::InvalidDependency(s))?;
        self.head(layer, head)?
            .deps
            .get(idx)
            .ok_or_else(|| Error::Config(format!("layer {layer} carries no transformation")))
    }

    /// `(x W_Q, x W_K, x W_V)` for one head.
    pub fn project_qkv(&self, store: &ParamStore, x: &Tensor, layer: usize, head: usize) -> Result<(Tensor, Tensor, Tensor)> {
        let hp = self.head(layer, head)?;
        let (n, d) = x.dims2();
        if d != self.config.d_model {
            return Err(Error::Shape {
                op: "project_qkv",
                left: x.shape().to_vec(),
                right: vec![n, self.config.d_model],
            });
        }
        let dh = self.config.head_dim();
        let proj = |id: ParamId| {
            Tensor::new(vec![n, dh], matmul_raw(x.data(), store.get(id).tensor.data(), n, d, dh))
        };
        Ok((proj(hp.w_q)?, proj(hp.w_k)?, proj(hp.w_v)?))
    }

    /// `q_i A_s k_jᵀ + b_s`, honoring the enabled terms.
    pub fn biaffine_bias(&self, store: &ParamStore, q: &[f64], k: &[f64], s: DependencyType, layer: usize, head: usize) -> Result<f64> {
        let dp = self.dep_params(layer, head, s)?;
        let terms = self.config.transformation.terms();
        let a = dp
            .a
            .ok_or_else(|| Error::Config("encoder is not in biaffine mode".into()))?;
        let mut bias = 0.0;
        if terms.biaffine_core {
            let dh = q.len();
            let qa = matmul_raw(q, store.get(a).tensor.data(), 1, dh, dh);
            bias += dot(&qa, k);
        }
        if terms.prior {
            bias += store.get(dp.prior).tensor.data()[0];
        }
        Ok(bias)
    }

    /// `q_i · K_s + Q_s · k_j + b_s`, honoring the enabled terms.
    pub fn decomp_bias(&self, store: &ParamStore, q: &[f64], k: &[f64], s: DependencyType, layer: usize, head: usize) -> Result<f64> {
        let dp = self.dep_params(layer, head, s)?;
        let terms = self.config.transformation.terms();
        let (qv, kv) = match (dp.query_vec, dp.key_vec) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::Config("encoder is not in decomposed mode".into())),
        };
        let mut bias = 0.0;
        if terms.query_conditioned {
            bias += dot(q, store.get(kv).tensor.data());
        }
        if terms.key_conditioned {
            bias += dot(store.get(qv).tensor.data(), k);
        }
        if terms.prior {
            bias += store.get(dp.prior).tensor.data()[0];
        }
        Ok(bias)
    }

    /// The unscaled bias added to `q kᵀ`, or `None` when nothing is added.
    pub fn bias_matrix(&self, store: &ParamStore, q: &Tensor, k: &Tensor, s: &StructureMatrix, layer: usize, head: usize) -> Result<Option<Tensor>> {
        let mut g = Graph::new();
        let (qv, kv) = (g.constant(q.clone()), g.constant(k.clone()));
        Ok(self
            .bias(&mut g, store, qv, kv, s, layer, head)?
            .map(|b| g.value(b).clone()))
    }

    /// Scaled, structure-biased scores for given `q`, `k` values.
    pub fn structured_scores(&self, store: &ParamStore, q: &Tensor, k: &Tensor, s: &StructureMatrix, layer: usize, head: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let (qv, kv) = (g.constant(q.clone()), g.constant(k.clone()));
        let e = self.scores(&mut g, store, qv, kv, s, None, layer, head, None)?;
        Ok(g.value(e).clone())
    }

    /// Structure-biased, scaled scores on the graph. Padded keys get `-inf`.
    #[allow(clippy::too_many_arguments)]
    fn scores(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q: Var,
        k: Var,
        s: &StructureMatrix,
        key_mask: Option<&[bool]>,
        layer: usize,
        head: usize,
        recorder: Option<&mut BiasRecorder>,
    ) -> Result<Var> {
        let n = g.value(q).dims2().0;
        if s.n() != n || g.value(k).dims2().0 != n {
            return Err(Error::Shape {
                op: "structured_scores",
                left: vec![s.n(), s.n()],
                right: vec![n, n],
            });
        }
        let dh = self.config.head_dim();
        let qk = g.matmul_t(q, k)?;
        let numerator = match self.bias(g, store, q, k, s, layer, head)? {
            Some(bias) => {
                if let Some(rec) = recorder {
                    let values = g.value(bias).data();
                    for i in 0..n {
                        for j in 0..n {
                            let real = key_mask.is_none_or(|m| m[i] && m[j]);
                            let dep = s.get(i, j);
                            if real && dep != DependencyType::Na {
                                rec.add(layer, head, dep, values[i * n + j]);
                            }
                        }
                    }
                }
                g.add(qk, bias)?
            }
            None => qk,
        };
        let mut scores = g.scale(numerator, 1.0 / (dh as f64).sqrt());
        if let Some(mask) = key_mask {
            if mask.iter().any(|m| !m) {
                let cells: Vec<bool> = (0..n * n).map(|c| !mask[c % n]).collect();
                scores = g.masked_fill(scores, &cells, f64::NEG_INFINITY)?;
            }
        }
        Ok(scores)
    }

    /// The bias matrix on the graph, or `None` when the layer is
    /// unstructured or no cell carries a dependency type.
    #[allow(clippy::too_many_arguments)]
    pub fn bias(&self, g: &mut Graph, store: &ParamStore, q: Var, k: Var, s: &StructureMatrix, layer: usize, head: usize) -> Result<Option<Var>> {
        if !self.config.is_structured(layer) {
            return Ok(None);
        }
        let n = s.n();
        let terms = self.config.transformation.terms();
        let hp = self.head(layer, head)?;
        let mut total: Option<Var> = None;
        for (idx, dep) in DependencyType::STRUCTURED.into_iter().enumerate() {
            let cells: Vec<f64> = s.cells().iter().map(|&c| (c == dep) as u8 as f64).collect();
            if !cells.contains(&1.0) {
                continue;
            }
            let dp = hp.deps[idx];
            let mask = g.constant(Tensor::from_raw(vec![n, n], cells));
            let mut contextual: Option<Var> = None;
            let mut push = |g: &mut Graph, v: Var| -> Result<()> {
                contextual = Some(match contextual {
                    None => v,
                    Some(acc) => g.add(acc, v)?,
                });
                Ok(())
            };
            if let (true, Some(a)) = (terms.biaffine_core, dp.a) {
                let a = g.param(store, a);
                let qa = g.matmul(q, a)?;
                let m = g.matmul_t(qa, k)?;
                push(g, m)?;
            }
            if let (true, Some(kv)) = (terms.query_conditioned, dp.key_vec) {
                let kv = g.param(store, kv);
                let col = g.matmul(q, kv)?;
                let ones = g.constant(Tensor::full(&[1, n], 1.0));
                let m = g.matmul(col, ones)?;
                push(g, m)?;
            }
            if let (true, Some(qv)) = (terms.key_conditioned, dp.query_vec) {
                let qv = g.param(store, qv);
                let col = g.matmul(k, qv)?;
                let ones = g.constant(Tensor::full(&[n, 1], 1.0));
                let m = g.matmul_t(ones, col)?;
                push(g, m)?;
            }
            let mut term = match contextual {
                Some(c) => Some(g.mul(c, mask)?),
                None => None,
            };
            if terms.prior {
                let b = g.param(store, dp.prior);
                let p = g.mul_scalar(mask, b)?;
                term = Some(match term {
                    None => p,
                    Some(t) => g.add(t, p)?,
                });
            }
            if let Some(t) = term {
                total = Some(match total {
                    None => t,
                    Some(acc) => g.add(acc, t)?,
                });
            }
        }
        Ok(total)
    }

    /// Runs every block. `x` is `(n, d_model)`; `key_mask[j]` is false for
    /// padded positions.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        s: &StructureMatrix,
        key_mask: Option<&[bool]>,
        mut recorder: Option<&mut BiasRecorder>,
    ) -> Result<Var> {
        let dh = self.config.head_dim();
        let mut x = x;
        for (l, lp) in self.layers.iter().enumerate() {
            let mut outs = Vec::with_capacity(lp.heads.len());
            for (h, hp) in lp.heads.iter().enumerate() {
                let (wq, wk, wv) = (g.param(store, hp.w_q), g.param(store, hp.w_k), g.param(store, hp.w_v));
                let q = g.matmul(x, wq)?;
                let k = g.matmul(x, wk)?;
                let v = g.matmul(x, wv)?;
                debug_assert_eq!(g.value(q).dims2().1, dh);
                let e = self.scores(g, store, q, k, s, key_mask, l, h, recorder.as_deref_mut())?;
                let attn = g.softmax_rows(e);
                outs.push(g.matmul(attn, v)?);
            }
            let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
            let wo = g.param(store, lp.w_o);
            let bo = g.param(store, lp.b_o);
            let proj = g.matmul(cat, wo)?;
            let proj = g.add_row(proj, bo)?;
            let res = g.add(x, proj)?;
            let (g1, b1) = (g.param(store, lp.ln1_gain), g.param(store, lp.ln1_bias));
            let h1 = g.layer_norm(res, g1, b1, LAYER_NORM_EPS)?;

            let (w1, fb1) = (g.param(store, lp.ffn_w1), g.param(store, lp.ffn_b1));
            let (w2, fb2) = (g.param(store, lp.ffn_w2), g.param(store, lp.ffn_b2));
            let f = g.matmul(h1, w1)?;
            let f = g.add_row(f, fb1)?;
            let f = g.relu(f);
            let f = g.matmul(f, w2)?;
            let f = g.add_row(f, fb2)?;
            let res2 = g.add(h1, f)?;
            let (g2, b2) = (g.param(store, lp.ln2_gain), g.param(store, lp.ln2_bias));
            x = g.layer_norm(res2, g2, b2, LAYER_NORM_EPS)?;
        }
        Ok(x)
    }

    /// Inserts every trainable encoder parameter so each receives a
    /// gradient, even when the current input does not reach it.
    pub fn touch(&self, g: &mut Graph, store: &ParamStore) {
        for lp in &self.layers {
            for hp in &lp.heads {
                for dp in &hp.deps {
                    for id in [dp.a, dp.query_vec, dp.key_vec, Some(dp.prior)].into_iter().flatten() {
                        g.param(store, id);
                    }
                }
            }
        }
    }
}

/// `q_i · k_j / sqrt(d)` for all pairs.
pub fn raw_scores(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    let (n, d) = q.dims2();
    let (m, d2) = k.dims2();
    if d != d2 {
        return Err(Error::Shape {
            op: "raw_scores",
            left: q.shape().to_vec(),
            right: k.shape().to_vec(),
        });
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[i * m + j] = dot(q.row(i), k.row(j)) * scale;
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Row-softmax of `scores` applied to `v`.
pub fn attend(scores: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (n, m) = scores.dims2();
    let (m2, d) = v.dims2();
    if m != m2 {
        return Err(Error::Shape {
            op: "attend",
            left: scores.shape().to_vec(),
            right: v.shape().to_vec(),
        });
    }
    let mut weights = scores.data().to_vec();
    for row in weights.chunks_mut(m.max(1)) {
        softmax_in_place(row);
    }
    Tensor::new(vec![n, d], matmul_raw(&weights, v.data(), n, m, d))
}

/// Mean bias per (layer, dependency), weighting every recorded cell
/// equally across heads and instances. Returns one row per layer and per
/// dependency type (including `NA`, which is always 0 with count 0).
pub fn export_bias_heatmap(records: &[BiasRecord], layers: usize) -> Result<Vec<HeatmapCell>> {
    if records.is_empty() {
        return Err(Error::Config("no bias records to export".into()));
    }
    let mut acc: BTreeMap<(usize, DependencyType), (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = acc.entry((r.layer, r.dependency)).or_insert((0.0, 0));
        e.0 += r.mean_bias * r.count as f64;
        e.1 += r.count;
    }
    let layers = layers.max(records.iter().map(|r| r.layer + 1).max().unwrap_or(0));
    let mut out = Vec::with_capacity(layers * 6);
    for layer in 0..layers {
        for dependency in DependencyType::ALL {
            let (sum, count) = acc.get(&(layer, dependency)).copied().unwrap_or((0.0, 0));
            out.push(HeatmapCell {
                layer,
                dependency,
                mean_bias: if count > 0 { sum / count as f64 } else { 0.0 },
                count,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatmapCell {
    pub layer: usize,
    pub dependency: DependencyType,
    pub mean_bias: f64,
    pub count: usize,
}

/// Tab-separated heatmap: `layer`, `dependency`, `mean_bias`, `count`.
pub fn heatmap_to_tsv(cells: &[HeatmapCell]) -> String {
    let mut s = String::from("layer\tdependency\tmean_bias\tcount\n");
    for c in cells {
        s.push_str(&format!("{}\t{}\t{:.9e}\t{}\n", c.layer, c.dependency, c.mean_bias, c.count));
    }
    s
}

#[cfg(test)]
mod tests;
