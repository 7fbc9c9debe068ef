use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::ModelConfig;
use super::metrics::{best_threshold, evaluate_predictions, EvalReport, TrainFactIndex};
use crate::data::{build_vocab, make_batches, prepare, Document, PreparedDoc, RelationFact, Vocab};
use crate::encoder::BiasRecorder;
use crate::error::{Error, Result};
use crate::rehead::{predict, targets, PairScore, RelationSchema, SsanModel};
use crate::tensor::{checkpoint, Adam, Graph, ParamStore};

/// A model with everything needed to score new documents.
#[derive(Debug, Clone)]
pub struct Trained {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub schema: RelationSchema,
    pub model: SsanModel,
    pub store: ParamStore,
    /// Threshold chosen during training (the configured one unless tuned).
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub dev: EvalReport,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best dev F1.
    pub best: Trained,
    /// Optimizer state at the best epoch.
    pub optimizer: Adam,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn log_tsv(&self) -> String {
        let mut s = String::from("epoch\tloss\tdev_precision\tdev_recall\tdev_f1\tdev_ign_f1\tthreshold\n");
        for e in &self.log {
            writeln!(
                s,
                "{}\t{:.9e}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                e.epoch, e.loss, e.dev.precision, e.dev.recall, e.dev.f1, e.dev.ign_f1, e.threshold
            )
            .unwrap();
        }
        s
    }
}

fn load_schema(cfg: &ModelConfig, train: &[Document]) -> Result<RelationSchema> {
    match &cfg.schema {
        Some(p) => RelationSchema::from_json(&fs::read_to_string(p)?),
        None => RelationSchema::from_docs(train),
    }
}

impl Trained {
    /// Fresh, untrained model for `train`.
    pub fn init(cfg: &ModelConfig, train: &[Document]) -> Result<Self> {
        cfg.validate()?;
        let schema = load_schema(cfg, train)?;
        let vocab = build_vocab(train, cfg.min_count);
        Self::with_vocab(cfg, vocab, schema)
    }

    fn with_vocab(cfg: &ModelConfig, vocab: Vocab, schema: RelationSchema) -> Result<Self> {
        let spec = cfg.model_spec(vocab.len(), vocab.type_count(), schema.len())?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = SsanModel::new(spec, &mut store, &mut rng)?;
        Ok(Self {
            config: cfg.clone(),
            vocab,
            schema,
            model,
            store,
            threshold: cfg.threshold,
        })
    }

    pub fn prepare(&self, docs: &[Document]) -> Result<Vec<PreparedDoc>> {
        for d in docs {
            for f in &d.facts {
                if self.schema.index(&f.relation).is_none() {
                    return Err(Error::doc(&d.doc_id, format!("relation `{}` is not in the schema", f.relation)));
                }
            }
        }
        prepare(docs, &self.vocab, self.config.max_len)
    }

    /// Pair scores for every document, in input order.
    pub fn score(&self, docs: &[PreparedDoc]) -> Result<Vec<Vec<PairScore>>> {
        docs.par_iter()
            .map(|p| self.model.score_doc(&self.store, p, None))
            .collect()
    }

    /// Bias statistics gathered while scoring `docs`.
    pub fn record_biases(&self, docs: &[PreparedDoc]) -> Result<BiasRecorder> {
        let parts: Vec<BiasRecorder> = docs
            .par_iter()
            .map(|p| {
                let mut rec = BiasRecorder::new();
                self.model.score_doc(&self.store, p, Some(&mut rec))?;
                Ok(rec)
            })
            .collect::<Result<_>>()?;
        let mut all = BiasRecorder::new();
        parts.iter().for_each(|r| all.merge(r));
        Ok(all)
    }

    pub fn evaluate(&self, docs: &[PreparedDoc], train: &TrainFactIndex, threshold: f64) -> Result<EvalReport> {
        let scores = self.score(docs)?;
        Ok(evaluate_scores(docs, &scores, &self.schema, train, threshold))
    }

    /// Writes config, vocabulary, schema and checkpoint into `dir`.
    pub fn save(&self, dir: &Path, optimizer: Option<&Adam>) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut cfg = self.config.clone();
        cfg.threshold = self.threshold;
        fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;
        fs::write(dir.join(VOCAB_FILE), self.vocab.to_json())?;
        fs::write(dir.join(SCHEMA_FILE), self.schema.to_json())?;
        checkpoint::save(&dir.join(CHECKPOINT_FILE), &self.store, optimizer)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg = ModelConfig::parse(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
        let vocab = Vocab::from_json(&fs::read_to_string(dir.join(VOCAB_FILE))?)?;
        let schema = RelationSchema::from_json(&fs::read_to_string(dir.join(SCHEMA_FILE))?)?;
        let mut t = Self::with_vocab(&cfg, vocab, schema)?;
        let (stored, _) = checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
        if stored.len() != t.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, config implies {}",
                stored.len(),
                t.store.len()
            )));
        }
        t.store.load_values(&stored)?;
        Ok(t)
    }
}

pub const CONFIG_FILE: &str = "config.txt";
pub const VOCAB_FILE: &str = "vocab.json";
pub const SCHEMA_FILE: &str = "schema.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "log.tsv";

pub fn evaluate_scores(docs: &[PreparedDoc], scores: &[Vec<PairScore>], schema: &RelationSchema, train: &TrainFactIndex, threshold: f64) -> EvalReport {
    let preds: Vec<BTreeSet<RelationFact>> = scores.iter().map(|s| predict(s, schema, threshold)).collect();
    let refs: Vec<&Document> = docs.iter().map(|p| &p.doc).collect();
    evaluate_predictions(&refs, &preds, train)
}

/// Threshold maximizing F1 over already computed scores.
pub fn tune_from_scores(docs: &[PreparedDoc], scores: &[Vec<PairScore>], schema: &RelationSchema) -> Result<(f64, f64)> {
    let mut candidates = Vec::new();
    let mut gold_total = 0;
    for (p, s) in docs.iter().zip(scores) {
        let gold: BTreeSet<RelationFact> = p.doc.facts.iter().cloned().collect();
        gold_total += gold.len();
        let pairs: Vec<_> = s.iter().map(|x| (x.subject, x.object)).collect();
        let y = targets(&pairs, &gold, schema)?;
        candidates.extend(s.iter().flat_map(|x| x.probs.iter().copied()).zip(y.iter().map(|&v| v == 1.0)));
    }
    Ok(best_threshold(&candidates, gold_total))
}

/// Dev-set threshold with the best F1; returns `(θ, F1)`.
pub fn tune_threshold(trained: &Trained, dev: &[PreparedDoc]) -> Result<(f64, f64)> {
    let scores = trained.score(dev)?;
    tune_from_scores(dev, &scores, &trained.schema)
}

/// Trains on `train`, keeping the parameters of the epoch with the best dev
/// F1 (ties keep the earlier epoch). With zero epochs the initial model is
/// returned.
pub fn train(cfg: &ModelConfig, train_docs: &[Document], dev_docs: &[Document]) -> Result<TrainOutcome> {
    let mut current = Trained::init(cfg, train_docs)?;
    let train_set = current.prepare(train_docs)?;
    let dev_set = current.prepare(dev_docs)?;
    let no_train = TrainFactIndex::default();
    let mut optimizer = Adam::new(cfg.adam(), &current.store);

    let mut best = current.clone();
    let mut best_optimizer = optimizer.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let batches = make_batches(&train_set, cfg.batch_size, cfg.seed.wrapping_add(epoch as u64));
        let mut epoch_loss = 0.0;
        for batch in &batches {
            step += 1;
            let graphs: Vec<(Graph, f64)> = (0..batch.size())
                .into_par_iter()
                .map(|i| -> Result<Option<(Graph, f64)>> {
                    let mut g = Graph::new();
                    let out = current.model.forward_item(&mut g, &current.store, batch, i, None)?;
                    let Some(probs) = out.probs else { return Ok(None) };
                    let y = targets(&out.pairs, &batch.gold[i], &current.schema)?;
                    let loss = g.bce(probs, &y)?;
                    current.model.touch_all(&mut g, &current.store);
                    let value = g.value(loss).data()[0];
                    if value.is_finite() {
                        g.backward(loss)?;
                    }
                    Ok(Some((g, value)))
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect();
            if graphs.is_empty() {
                continue;
            }
            let loss: f64 = graphs.iter().map(|(_, l)| l).sum();
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            epoch_loss += loss;
            current.store.zero_grads();
            for (g, _) in &graphs {
                g.write_grads(&mut current.store);
            }
            optimizer.step(&mut current.store)?;
        }

        let scores = current.score(&dev_set)?;
        let threshold = if cfg.auto_threshold {
            tune_from_scores(&dev_set, &scores, &current.schema)?.0
        } else {
            cfg.threshold
        };
        let dev = evaluate_scores(&dev_set, &scores, &current.schema, &no_train, threshold);
        log::info!(
            "epoch {epoch}: loss {epoch_loss:.6} dev P {:.4} R {:.4} F1 {:.4}",
            dev.precision,
            dev.recall,
            dev.f1
        );
        let f1 = dev.f1;
        log.push(EpochLog {
            epoch,
            loss: epoch_loss,
            dev,
            threshold,
        });
        if f1 > best_f1 {
            best_f1 = f1;
            best_epoch = epoch;
            best = current.clone();
            best.threshold = threshold;
            best_optimizer = optimizer.clone();
        }
        if cfg.early_stop_f1 > 0.0 && f1 >= cfg.early_stop_f1 {
            break;
        }
    }
    Ok(TrainOutcome {
        best,
        optimizer: best_optimizer,
        best_epoch,
        log,
    })
}

/// Writes the best model and the log into `dir`.
pub fn save_outcome(outcome: &TrainOutcome, dir: &Path) -> Result<()> {
    outcome.best.save(dir, Some(&outcome.optimizer))?;
    fs::write(dir.join(LOG_FILE), outcome.log_tsv())?;
    Ok(())
}
