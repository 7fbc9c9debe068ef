//! Input embeddings, entity pooling, distance features and the bilinear
//! multi-label relation classifier.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, Document, PreparedDoc, RelationFact};
use crate::encoder::{BiasRecorder, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::structure::{apply_ablation, DependencyType};
use crate::tensor::{dot, matmul_raw, sigmoid, Graph, ParamId, ParamStore, Tensor, Var, BCE_CLIP};

/// Upper edges of the distance buckets; `|d|` in `[b_k, b_{k+1})` falls in
/// bucket `k + 1`.
pub const DISTANCE_BOUNDARIES: [i64; 9] = [1, 2, 4, 8, 16, 32, 64, 128, 256];
/// Number of signed buckets: `-9..=9`.
pub const DISTANCE_BUCKETS: usize = 2 * DISTANCE_BOUNDARIES.len() + 1;

/// Ordered, unique relation names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationSchema {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl RelationSchema {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("relation schema is empty".into()));
        }
        let mut index = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::Config(format!("relation `{n}` listed twice in schema")));
            }
        }
        Ok(Self { names, index })
    }

    /// Sorted relation names occurring in `docs`.
    pub fn from_docs(docs: &[Document]) -> Result<Self> {
        let names: BTreeSet<&str> = docs
            .iter()
            .flat_map(|d| d.facts.iter().map(|f| f.relation.as_str()))
            .collect();
        Self::new(names.into_iter().map(String::from).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.names).expect("schema serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::new(serde_json::from_str(s)?)
    }
}

/// Per-relation probabilities for one ordered entity pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScore {
    pub subject: usize,
    pub object: usize,
    pub probs: Vec<f64>,
}

/// One predicted fact, as written to prediction files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub doc_id: String,
    pub h: usize,
    pub t: usize,
    pub r: String,
    pub prob: f64,
}

/// Signed, log-spaced bucket of a token distance, in `-9..=9`.
pub fn distance_bucket(d: i64) -> i64 {
    let k = DISTANCE_BOUNDARIES.iter().filter(|&&b| d.abs() >= b).count() as i64;
    d.signum() * k
}

/// Row of the distance table used for the subject and for the object of
/// the pair `(s, o)`.
pub fn pair_distance_rows(doc: &Document, s: usize, o: usize) -> (usize, usize) {
    let d = doc.first_mention_start(s) as i64 - doc.first_mention_start(o) as i64;
    let half = DISTANCE_BOUNDARIES.len() as i64;
    ((distance_bucket(d) + half) as usize, (distance_bucket(-d) + half) as usize)
}

/// Ordered pairs `s != o`, subject-major.
pub fn entity_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|s| (0..n).filter(move |&o| o != s).map(move |o| (s, o)))
        .collect()
}

/// Mean of the rows of `h` over all mention tokens of each entity.
pub fn pool_entities(h: &Tensor, doc: &Document) -> Result<Vec<Vec<f64>>> {
    let (n, d) = h.dims2();
    (0..doc.entities.len())
        .map(|e| {
            let tokens = doc.entity_tokens(e);
            if tokens.is_empty() {
                return Err(Error::doc(&doc.doc_id, format!("entity {e} has no mentions")));
            }
            let mut v = vec![0.0; d];
            for &t in &tokens {
                if t >= n {
                    return Err(Error::doc(&doc.doc_id, format!("token {t} beyond encoder output")));
                }
                v.iter_mut().zip(h.row(t)).for_each(|(a, b)| *a += b);
            }
            v.iter_mut().for_each(|a| *a /= tokens.len() as f64);
            Ok(v)
        })
        .collect()
}

/// `sigmoid(e_s W_r e_oᵀ)` for every ordered pair and relation.
pub fn score_relations(entities: &[Vec<f64>], w: &[Tensor]) -> Vec<PairScore> {
    entity_pairs(entities.len())
        .into_iter()
        .map(|(s, o)| {
            let de = entities[s].len();
            let probs = w
                .iter()
                .map(|wr| sigmoid(dot(&matmul_raw(&entities[s], wr.data(), 1, de, de), &entities[o])))
                .collect();
            PairScore {
                subject: s,
                object: o,
                probs,
            }
        })
        .collect()
}

/// 0/1 targets aligned with `scores`, pair-major then relation.
pub fn targets(pairs: &[(usize, usize)], gold: &BTreeSet<RelationFact>, schema: &RelationSchema) -> Result<Vec<f64>> {
    let m = schema.len();
    let mut index = HashMap::new();
    for (p, &pair) in pairs.iter().enumerate() {
        index.insert(pair, p);
    }
    let mut y = vec![0.0; pairs.len() * m];
    for f in gold {
        let r = schema
            .index(&f.relation)
            .ok_or_else(|| Error::Config(format!("relation `{}` not in schema", f.relation)))?;
        let p = index.get(&(f.head, f.tail)).ok_or_else(|| {
            Error::Config(format!("fact ({}, {}) does not name an entity pair", f.head, f.tail))
        })?;
        y[p * m + r] = 1.0;
    }
    Ok(y)
}

/// Summed binary cross-entropy over every pair and relation, with
/// probabilities clipped to `[1e-7, 1 - 1e-7]`.
pub fn compute_loss(scores: &[PairScore], gold: &BTreeSet<RelationFact>, schema: &RelationSchema) -> Result<f64> {
    let pairs: Vec<_> = scores.iter().map(|s| (s.subject, s.object)).collect();
    let y = targets(&pairs, gold, schema)?;
    Ok(scores
        .iter()
        .flat_map(|s| s.probs.iter())
        .zip(&y)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum())
}

/// Every (pair, relation) whose probability is at least `threshold`.
pub fn predict(scores: &[PairScore], schema: &RelationSchema, threshold: f64) -> BTreeSet<RelationFact> {
    scores
        .iter()
        .flat_map(|s| {
            s.probs.iter().enumerate().filter(|(_, &p)| p >= threshold).map(|(r, _)| RelationFact {
                head: s.subject,
                tail: s.object,
                relation: schema.name(r).to_string(),
            })
        })
        .collect()
}

/// Prediction records sorted by (h, t, relation index).
pub fn prediction_records(doc_id: &str, scores: &[PairScore], schema: &RelationSchema, threshold: f64) -> Vec<PredictionRecord> {
    let mut out = Vec::new();
    for s in scores {
        for (r, &p) in s.probs.iter().enumerate() {
            if p >= threshold {
                out.push(PredictionRecord {
                    doc_id: doc_id.to_string(),
                    h: s.subject,
                    t: s.object,
                    r: schema.name(r).to_string(),
                    prob: p,
                });
            }
        }
    }
    out
}

/// Architecture of a full model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub encoder: EncoderConfig,
    pub max_len: usize,
    pub vocab_size: usize,
    pub type_count: usize,
    /// Capacity of the coreference-ordinal table (entity ordinals `0..cap`).
    pub coref_table: usize,
    pub dist_dim: usize,
    pub relations: usize,
    /// Dependency types removed from every structure matrix.
    pub excluded: BTreeSet<DependencyType>,
}

impl ModelSpec {
    pub fn entity_dim(&self) -> usize {
        self.encoder.d_model + self.dist_dim
    }
}

#[derive(Debug, Clone)]
pub struct SsanModel {
    spec: ModelSpec,
    word: ParamId,
    position: ParamId,
    entity_type: ParamId,
    coref: ParamId,
    distance: ParamId,
    encoder: Encoder,
    w_r: Vec<ParamId>,
}

/// Graph nodes of one document's scores.
pub struct DocScores {
    pub pairs: Vec<(usize, usize)>,
    /// `(pairs, M)` probabilities; `None` with fewer than two entities.
    pub probs: Option<Var>,
}

impl SsanModel {
    /// Registers every parameter in a fixed order: embeddings, encoder, then
    /// one bilinear matrix per relation.
    pub fn new<R: Rng>(spec: ModelSpec, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        if spec.relations == 0 {
            return Err(Error::Config("model needs at least one relation".into()));
        }
        for &d in &spec.excluded {
            if d == DependencyType::Na {
                return Err(Error::InvalidDependency(d));
            }
        }
        let d = spec.encoder.d_model;
        let word = store.register("emb.word", Tensor::xavier_uniform(spec.vocab_size, d, rng))?;
        let position = store.register("emb.position", Tensor::xavier_uniform(spec.max_len, d, rng))?;
        let entity_type = store.register("emb.type", Tensor::xavier_uniform(spec.type_count, d, rng))?;
        let coref = store.register("emb.coref", Tensor::xavier_uniform(spec.coref_table + 1, d, rng))?;
        let distance = store.register(
            "emb.distance",
            Tensor::xavier_uniform(DISTANCE_BUCKETS, spec.dist_dim, rng),
        )?;
        let encoder = Encoder::new(spec.encoder.clone(), store, rng)?;
        let de = spec.entity_dim();
        let w_r = (0..spec.relations)
            .map(|r| store.register(format!("head.w{r}"), Tensor::xavier_uniform(de, de, rng)))
            .collect::<Result<_>>()?;
        Ok(Self {
            spec,
            word,
            position,
            entity_type,
            coref,
            distance,
            encoder,
            w_r,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn relation_matrices(&self) -> &[ParamId] {
        &self.w_r
    }

    pub fn embedding_tables(&self) -> [ParamId; 5] {
        [self.word, self.position, self.entity_type, self.coref, self.distance]
    }

    /// word + position + entity type + coreference ordinal, one row per token.
    pub fn embed_inputs(&self, g: &mut Graph, store: &ParamStore, word_ids: &[usize], type_ids: &[usize], entity_ids: &[Option<usize>]) -> Result<Var> {
        let n = word_ids.len();
        if n > self.spec.max_len {
            return Err(Error::Config(format!(
                "sequence of {n} tokens exceeds max_len {}",
                self.spec.max_len
            )));
        }
        let coref_ids = entity_ids
            .iter()
            .map(|e| match e {
                None => Ok(0),
                Some(e) if *e < self.spec.coref_table => Ok(e + 1),
                Some(e) => Err(Error::Config(format!(
                    "entity ordinal {e} exceeds coreference table capacity {}",
                    self.spec.coref_table
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        let word = g.param(store, self.word);
        let pos = g.param(store, self.position);
        let ty = g.param(store, self.entity_type);
        let co = g.param(store, self.coref);
        let w = g.gather(word, word_ids)?;
        let p = g.gather(pos, &(0..n).collect::<Vec<_>>())?;
        let t = g.gather(ty, type_ids)?;
        let c = g.gather(co, &coref_ids)?;
        let x = g.add(w, p)?;
        let x = g.add(x, t)?;
        g.add(x, c)
    }

    /// Scores one batch item on `g`. Padding positions are masked.
    pub fn forward_item(&self, g: &mut Graph, store: &ParamStore, batch: &Batch, i: usize, recorder: Option<&mut BiasRecorder>) -> Result<DocScores> {
        let item = batch.items[i];
        let len = batch.len;
        let mut type_ids = item.type_ids.clone();
        type_ids.resize(len, crate::data::NO_TYPE);
        let mut entity_ids = item.entity_ids.clone();
        entity_ids.resize(len, None);
        self.forward_tokens(
            g,
            store,
            &item.doc,
            &batch.token_ids[i],
            &type_ids,
            &entity_ids,
            &batch.structures[i],
            Some(&batch.mask[i]),
            recorder,
        )
    }

    /// Scores one prepared document without padding.
    pub fn forward_doc(&self, g: &mut Graph, store: &ParamStore, p: &PreparedDoc, recorder: Option<&mut BiasRecorder>) -> Result<DocScores> {
        self.forward_tokens(
            g,
            store,
            &p.doc,
            &p.word_ids,
            &p.type_ids,
            &p.entity_ids,
            &p.structure,
            None,
            recorder,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn forward_tokens(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        doc: &Document,
        word_ids: &[usize],
        type_ids: &[usize],
        entity_ids: &[Option<usize>],
        structure: &crate::structure::StructureMatrix,
        mask: Option<&[bool]>,
        recorder: Option<&mut BiasRecorder>,
    ) -> Result<DocScores> {
        let n = word_ids.len();
        let x = self.embed_inputs(g, store, word_ids, type_ids, entity_ids)?;
        let ablated;
        let structure = if self.spec.excluded.is_empty() {
            structure
        } else {
            ablated = apply_ablation(structure, &self.spec.excluded)?;
            &ablated
        };
        let h = self.encoder.forward(g, store, x, structure, mask, recorder)?;
        self.encoder.touch(g, store);

        let n_ent = doc.entities.len();
        let pairs = entity_pairs(n_ent);
        if pairs.is_empty() {
            return Ok(DocScores { pairs, probs: None });
        }
        let mut pool = vec![0.0; n_ent * n];
        for e in 0..n_ent {
            let tokens = doc.entity_tokens(e);
            if tokens.is_empty() {
                return Err(Error::doc(&doc.doc_id, format!("entity {e} has no mentions")));
            }
            for &t in &tokens {
                pool[e * n + t] = 1.0 / tokens.len() as f64;
            }
        }
        let pool = g.constant(Tensor::from_raw(vec![n_ent, n], pool));
        let ents = g.matmul(pool, h)?;

        let subj: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let obj: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let (sd, od): (Vec<usize>, Vec<usize>) = pairs.iter().map(|&(s, o)| pair_distance_rows(doc, s, o)).unzip();
        let dist = g.param(store, self.distance);
        let s_ent = g.gather(ents, &subj)?;
        let o_ent = g.gather(ents, &obj)?;
        let s_dist = g.gather(dist, &sd)?;
        let o_dist = g.gather(dist, &od)?;
        let s_aug = g.concat_cols(&[s_ent, s_dist])?;
        let o_aug = g.concat_cols(&[o_ent, o_dist])?;

        let ones = g.constant(Tensor::full(&[self.spec.entity_dim(), 1], 1.0));
        let mut logits = Vec::with_capacity(self.w_r.len());
        for &w in &self.w_r {
            let w = g.param(store, w);
            let sw = g.matmul(s_aug, w)?;
            let prod = g.mul(sw, o_aug)?;
            logits.push(g.matmul(prod, ones)?);
        }
        let logits = if logits.len() == 1 { logits[0] } else { g.concat_cols(&logits)? };
        Ok(DocScores {
            pairs,
            probs: Some(g.sigmoid(logits)),
        })
    }

    /// Summed loss over a batch, as a graph node. `None` if no item has a pair.
    pub fn batch_loss(&self, g: &mut Graph, store: &ParamStore, batch: &Batch, schema: &RelationSchema) -> Result<Option<Var>> {
        let mut total: Option<Var> = None;
        for i in 0..batch.size() {
            let out = self.forward_item(g, store, batch, i, None)?;
            let Some(probs) = out.probs else { continue };
            let y = targets(&out.pairs, &batch.gold[i], schema)?;
            let l = g.bce(probs, &y)?;
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l)?,
            });
        }
        self.touch_all(g, store);
        Ok(total)
    }

    /// Inserts every parameter into `g`, so parameters the input cannot
    /// reach still receive a (zero) gradient.
    pub fn touch_all(&self, g: &mut Graph, store: &ParamStore) {
        for id in [self.word, self.position, self.entity_type, self.coref, self.distance]
            .into_iter()
            .chain(self.w_r.iter().copied())
        {
            g.param(store, id);
        }
        self.encoder.touch(g, store);
    }

    /// Pair scores for one document under frozen parameters.
    pub fn score_doc(&self, store: &ParamStore, p: &PreparedDoc, recorder: Option<&mut BiasRecorder>) -> Result<Vec<PairScore>> {
        let mut g = Graph::new();
        let out = self.forward_doc(&mut g, store, p, recorder)?;
        let Some(probs) = out.probs else { return Ok(Vec::new()) };
        let v = g.value(probs);
        let m = self.w_r.len();
        Ok(out
            .pairs
            .iter()
            .enumerate()
            .map(|(k, &(s, o))| PairScore {
                subject: s,
                object: o,
                probs: v.data()[k * m..(k + 1) * m].to_vec(),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests;
