use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::document::fixtures::{mention, words};
use crate::data::{build_vocab, prepare, Entity};
use crate::encoder::{TransformKind, Transformation};
use crate::tensor::grad_check;

fn schema(names: &[&str]) -> RelationSchema {
    RelationSchema::new(names.iter().map(|s| s.to_string()).collect()).unwrap()
}

fn two_entity_doc() -> Document {
    Document {
        doc_id: "pair".into(),
        sentences: vec![words("Ann met Bob ."), words("She left .")],
        entities: vec![
            Entity {
                index: 0,
                entity_type: "PER".into(),
                mentions: vec![mention("Ann", 0, 0, 1), mention("She", 1, 0, 1)],
            },
            Entity {
                index: 1,
                entity_type: "PER".into(),
                mentions: vec![mention("Bob", 0, 2, 3)],
            },
        ],
        facts: vec![RelationFact {
            head: 0,
            tail: 1,
            relation: "met".into(),
        }],
    }
}

fn spec(kind: TransformKind, d: usize, vocab: usize, types: usize, relations: usize) -> ModelSpec {
    ModelSpec {
        encoder: EncoderConfig {
            layers: 2,
            heads: 2,
            d_model: d,
            ffn_mult: 2,
            transformation: Transformation::full(kind),
            structured_layers: 0..2,
        },
        max_len: 16,
        vocab_size: vocab,
        type_count: types,
        coref_table: 4,
        dist_dim: 3,
        relations,
        excluded: BTreeSet::new(),
    }
}

#[test]
fn schema_rules() {
    assert!(RelationSchema::new(vec![]).is_err());
    assert!(RelationSchema::new(vec!["a".into(), "a".into()]).is_err());
    let s = schema(&["x", "y"]);
    assert_eq!(s.index("y"), Some(1));
    assert_eq!(RelationSchema::from_json(&s.to_json()).unwrap(), s);
}

#[test]
fn bucket_examples() {
    assert_eq!(distance_bucket(0), 0);
    assert_eq!(distance_bucket(5), 3);
    assert_eq!(distance_bucket(-5), -3);
    assert_eq!(distance_bucket(1000), 9);
}

#[test]
fn bucket_matches_boundary_scan() {
    for d in -300i64..=300 {
        let mut k = 0;
        for (i, &b) in DISTANCE_BOUNDARIES.iter().enumerate() {
            if d.abs() >= b {
                k = i as i64 + 1;
            }
        }
        assert_eq!(distance_bucket(d), if d < 0 { -k } else { k }, "d = {d}");
    }
}

#[test]
fn same_start_gets_same_distance_row() {
    let doc = two_entity_doc();
    let (s, o) = pair_distance_rows(&doc, 0, 0);
    assert_eq!((s, o), (9, 9));
    let (s, o) = pair_distance_rows(&doc, 0, 1);
    // Ann starts at 0, Bob at 2: d = -2.
    assert_eq!((s, o), (9 - 2, 9 + 2));
}

#[test]
fn pooling_is_mean_of_mention_tokens() {
    let doc = Document {
        doc_id: "p".into(),
        sentences: vec![words("a b c d")],
        entities: vec![Entity {
            index: 0,
            entity_type: "T".into(),
            mentions: vec![mention("b", 0, 1, 2), mention("d", 0, 3, 4)],
        }],
        facts: vec![],
    };
    let h = Tensor::new(vec![4, 2], vec![0.0, 0.0, 1.0, 1.0, 9.0, 9.0, 3.0, 3.0]).unwrap();
    assert_eq!(pool_entities(&h, &doc).unwrap(), vec![vec![2.0, 2.0]]);
}

#[test]
fn zero_weights_give_half() {
    let e = vec![vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.5]];
    let scores = score_relations(&e, &[Tensor::zeros(&[2, 2]), Tensor::zeros(&[2, 2])]);
    assert_eq!(scores.len(), 3 * 2);
    assert!(scores.iter().flat_map(|s| &s.probs).all(|&p| p == 0.5));
    let s = schema(&["a", "b"]);
    let loss = compute_loss(&scores, &BTreeSet::new(), &s).unwrap();
    assert!((loss - 12.0 * std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn bilinear_hand_example() {
    let e = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let w = Tensor::new(vec![2, 2], vec![0.0, 2.0, 0.0, 0.0]).unwrap();
    let scores = score_relations(&e, &[w]);
    assert_eq!((scores[0].subject, scores[0].object), (0, 1));
    assert!((scores[0].probs[0] - 0.880_797_077_977_882_3).abs() < 1e-15);
}

#[test]
fn confident_predictions_have_tiny_loss() {
    let s = schema(&["r"]);
    let scores = vec![
        PairScore {
            subject: 0,
            object: 1,
            probs: vec![1.0],
        },
        PairScore {
            subject: 1,
            object: 0,
            probs: vec![0.0],
        },
    ];
    let gold = BTreeSet::from([RelationFact {
        head: 0,
        tail: 1,
        relation: "r".into(),
    }]);
    let loss = compute_loss(&scores, &gold, &s).unwrap();
    assert!(loss > 0.0 && loss < 1e-6, "{loss}");
    let unknown = BTreeSet::from([RelationFact {
        head: 0,
        tail: 1,
        relation: "q".into(),
    }]);
    assert!(compute_loss(&scores, &unknown, &s).is_err());
}

#[test]
fn threshold_is_inclusive_and_monotone() {
    let s = schema(&["r", "q"]);
    let scores = score_relations(&[vec![1.0], vec![2.0]], &[Tensor::zeros(&[1, 1]), Tensor::zeros(&[1, 1])]);
    assert_eq!(predict(&scores, &s, 0.5).len(), 4);
    assert!(predict(&scores, &s, 1.0 - 1e-12).is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let scores: Vec<PairScore> = entity_pairs(4)
        .into_iter()
        .map(|(a, b)| PairScore {
            subject: a,
            object: b,
            probs: vec![rng.gen(), rng.gen()],
        })
        .collect();
    let mut prev = predict(&scores, &s, 0.01);
    for k in 2..100 {
        let cur = predict(&scores, &s, k as f64 / 100.0);
        assert!(cur.is_subset(&prev));
        prev = cur;
    }
    let recs = prediction_records("d", &scores, &s, 0.5);
    assert_eq!(recs.len(), predict(&scores, &s, 0.5).len());
}

fn model_for(doc: &Document, kind: TransformKind, d: usize, seed: u64) -> (SsanModel, ParamStore, PreparedDoc, RelationSchema) {
    let vocab = build_vocab(std::slice::from_ref(doc), 1);
    let schema = RelationSchema::from_docs(std::slice::from_ref(doc)).unwrap();
    let mut store = ParamStore::new();
    let model = SsanModel::new(
        spec(kind, d, vocab.len(), vocab.type_count(), schema.len()),
        &mut store,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap();
    let p = prepare(std::slice::from_ref(doc), &vocab, 16).unwrap().remove(0);
    (model, store, p, schema)
}

#[test]
fn embedding_sums_four_tables() {
    let doc = two_entity_doc();
    let (model, store, p, _) = model_for(&doc, TransformKind::Biaffine, 4, 0);
    let mut g = Graph::new();
    let x = model
        .embed_inputs(&mut g, &store, &p.word_ids, &p.type_ids, &p.entity_ids)
        .unwrap();
    let x = g.value(x).clone();
    let row = |name: &str, i: usize| store.by_name(name).unwrap().tensor.row(i).to_vec();
    // Token 3 is "." (no entity): none-type and none-ordinal rows.
    let want: Vec<f64> = (0..4)
        .map(|c| row("emb.word", p.word_ids[3])[c] + row("emb.position", 3)[c] + row("emb.type", 0)[c] + row("emb.coref", 0)[c])
        .collect();
    assert_eq!(x.row(3), &want[..]);
    // "Ann" and "She" share the coreference component.
    assert_eq!(p.entity_ids[0], p.entity_ids[4]);

    let mut zero = store.clone();
    for id in model.embedding_tables() {
        zero.get_mut(id).tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut g = Graph::new();
    let x = model
        .embed_inputs(&mut g, &zero, &p.word_ids, &p.type_ids, &p.entity_ids)
        .unwrap();
    assert!(g.value(x).data().iter().all(|&v| v == 0.0));

    let mut g = Graph::new();
    let far = vec![Some(9); p.word_ids.len()];
    assert!(model.embed_inputs(&mut g, &store, &p.word_ids, &p.type_ids, &far).is_err());
}

#[test]
fn model_scores_match_value_route() {
    let doc = two_entity_doc();
    let (model, store, p, _) = model_for(&doc, TransformKind::Decomp, 8, 3);
    let scores = model.score_doc(&store, &p, None).unwrap();
    assert_eq!(scores.len(), 2);

    let mut g = Graph::new();
    let x = model
        .embed_inputs(&mut g, &store, &p.word_ids, &p.type_ids, &p.entity_ids)
        .unwrap();
    let h = model.encoder().forward(&mut g, &store, x, &p.structure, None, None).unwrap();
    let pooled = pool_entities(g.value(h), &p.doc).unwrap();
    let dist = &store.by_name("emb.distance").unwrap().tensor;
    let w: Vec<Tensor> = model
        .relation_matrices()
        .iter()
        .map(|&id| store.get(id).tensor.clone())
        .collect();
    for s in &scores {
        let (rs, ro) = pair_distance_rows(&p.doc, s.subject, s.object);
        let mut es = pooled[s.subject].clone();
        es.extend_from_slice(dist.row(rs));
        let mut eo = pooled[s.object].clone();
        eo.extend_from_slice(dist.row(ro));
        let oracle = score_relations(&[es, eo], &w);
        assert!((oracle[0].probs[0] - s.probs[0]).abs() < 1e-12);
    }
}

#[test]
fn full_model_gradient_check() {
    let doc = two_entity_doc();
    for kind in [TransformKind::Biaffine, TransformKind::Decomp] {
        let (model, mut store, p, schema) = model_for(&doc, kind, 8, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ids: Vec<ParamId> = store.ids().collect();
        for &id in &ids {
            if store.get(id).name.contains('.') && store.get(id).tensor.data().iter().all(|&v| v == 0.0) {
                for v in store.get_mut(id).tensor.data_mut() {
                    *v = rng.gen_range(-0.5..0.5);
                }
            }
        }
        let gold: BTreeSet<RelationFact> = p.doc.facts.iter().cloned().collect();
        let report = grad_check(&mut store, &ids, |g, store| {
            let out = model.forward_doc(g, store, &p, None)?;
            model.touch_all(g, store);
            let y = targets(&out.pairs, &gold, &schema)?;
            g.bce(out.probs.expect("two entities"), &y)
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{kind}: {report:?}");
    }
}
