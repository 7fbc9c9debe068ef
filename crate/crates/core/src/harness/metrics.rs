use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use crate::data::{Document, RelationFact};

/// A fact located in a document.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FactKey {
    pub doc_id: String,
    pub head: usize,
    pub tail: usize,
    pub relation: String,
}

impl FactKey {
    pub fn new(doc_id: &str, f: &RelationFact) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            head: f.head,
            tail: f.tail,
            relation: f.relation.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelationBreakdown {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ign_precision: f64,
    pub ign_recall: f64,
    pub ign_f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
    pub correct_in_train: usize,
    /// Set when there were no gold facts, so recall is reported as 0.
    pub empty_gold: bool,
    pub per_relation: BTreeMap<String, RelationBreakdown>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Harmonic mean; 0 when both inputs are 0.
pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Scores `predicted` against `gold`. `in_train` decides whether a correct
/// prediction is a fact already seen in training: those are removed from
/// both sides of the Ign precision while Ign recall stays the plain recall.
pub fn score_facts<F>(predicted: &BTreeSet<FactKey>, gold: &BTreeSet<FactKey>, in_train: F) -> EvalReport
where
    F: Fn(&FactKey) -> bool,
{
    let correct: Vec<&FactKey> = predicted.intersection(gold).collect();
    let c_in = correct.iter().filter(|k| in_train(k)).count();
    let precision = ratio(correct.len(), predicted.len());
    let recall = ratio(correct.len(), gold.len());
    let ign_precision = ratio(correct.len() - c_in, predicted.len() - c_in);
    let ign_recall = recall;

    let mut per_relation: BTreeMap<String, RelationBreakdown> = BTreeMap::new();
    for k in gold {
        per_relation.entry(k.relation.clone()).or_default().gold += 1;
    }
    for k in predicted {
        per_relation.entry(k.relation.clone()).or_default().predicted += 1;
    }
    for k in &correct {
        per_relation.entry(k.relation.clone()).or_default().correct += 1;
    }
    for b in per_relation.values_mut() {
        b.precision = ratio(b.correct, b.predicted);
        b.recall = ratio(b.correct, b.gold);
        b.f1 = f1_score(b.precision, b.recall);
    }

    EvalReport {
        precision,
        recall,
        f1: f1_score(precision, recall),
        ign_precision,
        ign_recall,
        ign_f1: f1_score(ign_precision, ign_recall),
        gold: gold.len(),
        predicted: predicted.len(),
        correct: correct.len(),
        correct_in_train: c_in,
        empty_gold: gold.is_empty(),
        per_relation,
    }
}

/// Facts of a training corpus keyed by mention surface strings, so a fact
/// is "seen" if any mention-name pair of its entities carried the same
/// relation in training.
#[derive(Debug, Clone, Default)]
pub struct TrainFactIndex {
    facts: HashSet<(String, String, String)>,
}

impl TrainFactIndex {
    pub fn new(train: &[Document]) -> Self {
        let mut facts = HashSet::new();
        for d in train {
            for f in &d.facts {
                for mh in &d.entities[f.head].mentions {
                    for mt in &d.entities[f.tail].mentions {
                        facts.insert((mh.name.clone(), mt.name.clone(), f.relation.clone()));
                    }
                }
            }
        }
        Self { facts }
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn contains(&self, doc: &Document, f: &RelationFact) -> bool {
        if self.facts.is_empty() {
            return false;
        }
        let (Some(h), Some(t)) = (doc.entities.get(f.head), doc.entities.get(f.tail)) else {
            return false;
        };
        h.mentions.iter().any(|mh| {
            t.mentions
                .iter()
                .any(|mt| self.facts.contains(&(mh.name.clone(), mt.name.clone(), f.relation.clone())))
        })
    }
}

/// Scores per-document predictions against each document's gold facts.
pub fn evaluate_predictions(docs: &[&Document], predictions: &[BTreeSet<RelationFact>], train: &TrainFactIndex) -> EvalReport {
    let mut pred = BTreeSet::new();
    let mut gold = BTreeSet::new();
    let mut seen = HashSet::new();
    for (d, p) in docs.iter().zip(predictions) {
        for f in p {
            let k = FactKey::new(&d.doc_id, f);
            if train.contains(d, f) {
                seen.insert(k.clone());
            }
            pred.insert(k);
        }
        gold.extend(d.facts.iter().map(|f| FactKey::new(&d.doc_id, f)));
    }
    score_facts(&pred, &gold, |k| seen.contains(k))
}

impl EvalReport {
    /// Two-line summary followed by a per-relation table.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from(
            "precision\trecall\tf1\tign_precision\tign_recall\tign_f1\tgold\tpredicted\tcorrect\tcorrect_in_train\tempty_gold\n",
        );
        writeln!(
            s,
            "{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}\t{}",
            self.precision,
            self.recall,
            self.f1,
            self.ign_precision,
            self.ign_recall,
            self.ign_f1,
            self.gold,
            self.predicted,
            self.correct,
            self.correct_in_train,
            self.empty_gold
        )
        .unwrap();
        s.push_str("\nrelation\tgold\tpredicted\tcorrect\tprecision\trecall\tf1\n");
        for (r, b) in &self.per_relation {
            writeln!(
                s,
                "{r}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
                b.gold, b.predicted, b.correct, b.precision, b.recall, b.f1
            )
            .unwrap();
        }
        s
    }

    pub fn relation_recall(&self, relation: &str) -> f64 {
        self.per_relation.get(relation).map_or(0.0, |b| b.recall)
    }
}

/// Threshold maximizing F1 over `(probability, is_gold)` candidates, with
/// `gold_total` gold facts overall. Candidate thresholds are the distinct
/// probabilities; ties go to the larger threshold. Returns `(θ, F1)`.
pub fn best_threshold(candidates: &[(f64, bool)], gold_total: usize) -> (f64, f64) {
    let mut sorted: Vec<(f64, bool)> = candidates.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = (0.5, f64::NEG_INFINITY);
    let (mut predicted, mut correct) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let theta = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == theta {
            predicted += 1;
            correct += sorted[i].1 as usize;
            i += 1;
        }
        let f1 = f1_score(ratio(correct, predicted), ratio(correct, gold_total));
        if f1 > best.1 {
            best = (theta, f1);
        }
    }
    if best.1 == f64::NEG_INFINITY {
        (0.5, 0.0)
    } else {
        best
    }
}
