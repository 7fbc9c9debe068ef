use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::grad_check;

const TYPES: [DependencyType; 6] = DependencyType::ALL;

fn config(transformation: Transformation, layers: usize) -> EncoderConfig {
    EncoderConfig {
        layers,
        heads: 2,
        d_model: 8,
        ffn_mult: 2,
        transformation,
        structured_layers: 0..layers,
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Symmetric grid with every type present.
fn random_structure(rng: &mut ChaCha8Rng, n: usize) -> StructureMatrix {
    let mut cells = vec![DependencyType::Na; n * n];
    for i in 0..n {
        for j in i..n {
            let d = TYPES[rng.gen_range(0..TYPES.len())];
            cells[i * n + j] = d;
            cells[j * n + i] = d;
        }
    }
    StructureMatrix::from_cells("r", n, cells).unwrap()
}

fn randomize_transform(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let ids: Vec<ParamId> = store
        .iter()
        .filter(|(_, p)| p.name.contains("coref") || p.name.contains("relate") || p.name.contains("intra_ne"))
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        for v in store.get_mut(id).tensor.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
}

fn build(t: Transformation, layers: usize, seed: u64) -> (Encoder, ParamStore) {
    let mut store = ParamStore::new();
    let enc = Encoder::new(config(t, layers), &mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (enc, store)
}

#[test]
fn transformation_rejects_foreign_terms() {
    let core = BiasTerms {
        biaffine_core: true,
        ..BiasTerms::default()
    };
    assert!(Transformation::new(TransformKind::Decomp, core).is_err());
    assert!(Transformation::new(TransformKind::None, core).is_err());
    let q = BiasTerms {
        query_conditioned: true,
        ..BiasTerms::default()
    };
    assert!(Transformation::new(TransformKind::Biaffine, q).is_err());
    assert!(Transformation::new(TransformKind::Decomp, q).is_ok());
    assert_eq!(BiasTerms::parse_list(&Transformation::decomp().terms().to_list()).unwrap(), Transformation::decomp().terms());
}

#[test]
fn config_validation() {
    let mut c = config(Transformation::biaffine(), 2);
    c.heads = 3;
    assert!(c.validate().is_err());
    let mut c = config(Transformation::biaffine(), 2);
    c.structured_layers = 1..3;
    assert!(c.validate().is_err());
}

#[test]
fn zero_parameters_leave_scores_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for t in [Transformation::biaffine(), Transformation::decomp()] {
        let (enc, store) = build(t, 1, 2);
        let q = random_tensor(&mut rng, 6, 4);
        let k = random_tensor(&mut rng, 6, 4);
        let s = random_structure(&mut rng, 6);
        let got = enc.structured_scores(&store, &q, &k, &s, 0, 1).unwrap();
        let want = raw_scores(&q, &k).unwrap();
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }
}

fn scalar_scores(enc: &Encoder, store: &ParamStore, q: &Tensor, k: &Tensor, s: &StructureMatrix, biaffine: bool) -> Vec<f64> {
    let n = s.n();
    let d = q.dims2().1 as f64;
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let mut e: f64 = q.row(i).iter().zip(k.row(j)).map(|(a, b)| a * b).sum();
            let dep = s.get(i, j);
            if dep != DependencyType::Na {
                e += if biaffine {
                    enc.biaffine_bias(store, q.row(i), k.row(j), dep, 0, 0).unwrap()
                } else {
                    enc.decomp_bias(store, q.row(i), k.row(j), dep, 0, 0).unwrap()
                };
            }
            out.push(e / d.sqrt());
        }
    }
    out
}

#[test]
fn structured_scores_match_scalar_route() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (t, biaffine) in [(Transformation::biaffine(), true), (Transformation::decomp(), false)] {
        let (enc, mut store) = build(t, 1, 4);
        randomize_transform(&mut store, &mut rng);
        for _ in 0..5 {
            let q = random_tensor(&mut rng, 7, 4);
            let k = random_tensor(&mut rng, 7, 4);
            let s = random_structure(&mut rng, 7);
            let got = enc.structured_scores(&store, &q, &k, &s, 0, 0).unwrap();
            let want = scalar_scores(&enc, &store, &q, &k, &s, biaffine);
            for (a, b) in got.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn biaffine_bias_hand_example() {
    let (enc, mut store) = build(Transformation::biaffine(), 1, 0);
    let a = store.id("enc.l0.h0.intra_coref.A").unwrap();
    let b = store.id("enc.l0.h0.intra_coref.b").unwrap();
    // A = identity on a 4-dim head, b = 0.25.
    store.get_mut(a).tensor = Tensor::identity(4);
    store.get_mut(b).tensor.data_mut()[0] = 0.25;
    let q = [1.0, 2.0, 0.0, 0.0];
    let k = [3.0, 0.5, 0.0, 1.0];
    let v = enc.biaffine_bias(&store, &q, &k, DependencyType::IntraCoref, 0, 0).unwrap();
    assert_eq!(v, 1.0 * 3.0 + 2.0 * 0.5 + 0.25);
    assert!(enc.biaffine_bias(&store, &q, &k, DependencyType::Na, 0, 0).is_err());
    assert!(enc.decomp_bias(&store, &q, &k, DependencyType::IntraCoref, 0, 0).is_err());
}

#[test]
fn decomposed_bias_is_sum_of_its_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (full, mut store) = build(Transformation::decomp(), 1, 6);
    randomize_transform(&mut store, &mut rng);
    let single = |q, k, p| {
        let t = Transformation::new(
            TransformKind::Decomp,
            BiasTerms {
                query_conditioned: q,
                key_conditioned: k,
                prior: p,
                biaffine_core: false,
            },
        )
        .unwrap();
        build(t, 1, 6).0
    };
    let parts = [single(true, false, false), single(false, true, false), single(false, false, true)];
    for _ in 0..5 {
        let q = random_tensor(&mut rng, 6, 4);
        let k = random_tensor(&mut rng, 6, 4);
        let s = random_structure(&mut rng, 6);
        let whole = full.bias_matrix(&store, &q, &k, &s, 0, 1).unwrap().unwrap();
        let pieces: Vec<Tensor> = parts
            .iter()
            .map(|e| e.bias_matrix(&store, &q, &k, &s, 0, 1).unwrap().unwrap())
            .collect();
        for c in 0..whole.numel() {
            let sum = pieces[0].data()[c] + pieces[1].data()[c] + pieces[2].data()[c];
            assert_eq!(whole.data()[c], sum);
        }
    }
}

#[test]
fn na_only_structure_adds_nothing() {
    let (enc, store) = build(Transformation::biaffine(), 1, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let q = random_tensor(&mut rng, 3, 4);
    let s = StructureMatrix::all_na("x", 3);
    assert!(enc.bias_matrix(&store, &q, &q, &s, 0, 0).unwrap().is_none());
}

fn forward_value(enc: &Encoder, store: &ParamStore, x: &Tensor, s: &StructureMatrix, mask: Option<&[bool]>) -> Tensor {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let out = enc.forward(&mut g, store, xv, s, mask, None).unwrap();
    g.value(out).clone()
}

#[test]
fn degenerate_settings_match_plain_encoder_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (plain, store_plain) = build(Transformation::none(), 2, 9);
    let (structured, store_structured) = build(Transformation::biaffine(), 2, 9);
    for _ in 0..5 {
        let x = random_tensor(&mut rng, 5, 8);
        let s = random_structure(&mut rng, 5);
        let base = forward_value(&plain, &store_plain, &x, &s, None);
        let zero_init = forward_value(&structured, &store_structured, &x, &s, None);
        let na = forward_value(&structured, &store_structured, &x, &StructureMatrix::all_na("x", 5), None);
        assert_eq!(base.data(), zero_init.data());
        assert_eq!(base.data(), na.data());
    }
}

#[test]
fn padded_rows_do_not_leak_into_real_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (enc, mut store) = build(Transformation::decomp(), 2, 11);
    randomize_transform(&mut store, &mut rng);
    let s = random_structure(&mut rng, 4);
    let x = random_tensor(&mut rng, 4, 8);
    let alone = forward_value(&enc, &store, &x, &s, None);
    let mut xp = x.data().to_vec();
    xp.extend((0..16).map(|_| rng.gen_range(-5.0..5.0)));
    let xp = Tensor::new(vec![6, 8], xp).unwrap();
    let mask = [true, true, true, true, false, false];
    let padded = forward_value(&enc, &store, &xp, &s.padded(6), Some(&mask));
    assert_eq!(alone.data(), &padded.data()[..32]);
}

#[test]
fn attention_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let scores = random_tensor(&mut rng, 4, 5);
    let v = Tensor::full(&[5, 3], 1.0);
    let out = attend(&scores, &v).unwrap();
    assert!(out.data().iter().all(|x| (x - 1.0).abs() < 1e-12));
}

#[test]
fn isolated_bias_terms_pass_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for t in [Transformation::biaffine(), Transformation::decomp()] {
        let (enc, mut store) = build(t, 1, 14);
        randomize_transform(&mut store, &mut rng);
        let q = random_tensor(&mut rng, 5, 4);
        let k = random_tensor(&mut rng, 5, 4);
        let s = random_structure(&mut rng, 5);
        let weights = random_tensor(&mut rng, 5, 5);
        let ids: Vec<ParamId> = store
            .iter()
            .filter(|(_, p)| p.name.starts_with("enc.l0.h1.") && !p.name.ends_with(".wq") && !p.name.ends_with(".wk") && !p.name.ends_with(".wv"))
            .map(|(id, _)| id)
            .collect();
        assert!(!ids.is_empty());
        let report = grad_check(&mut store, &ids, |g, store| {
            let (qv, kv) = (g.constant(q.clone()), g.constant(k.clone()));
            let b = enc.bias(g, store, qv, kv, &s, 0, 1)?.expect("structure has active types");
            enc.touch(g, store);
            let w = g.constant(weights.clone());
            let m = g.mul(b, w)?;
            Ok(g.sum(m))
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-5, "{report:?}");
    }
}

#[test]
fn encoder_gradients_pass_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (enc, mut store) = build(Transformation::biaffine(), 2, 16);
    randomize_transform(&mut store, &mut rng);
    let x = random_tensor(&mut rng, 4, 8);
    let s = random_structure(&mut rng, 4);
    let weights = random_tensor(&mut rng, 4, 8);
    let ids: Vec<ParamId> = store.ids().collect();
    let report = grad_check(&mut store, &ids, |g, store| {
        let xv = g.constant(x.clone());
        let h = enc.forward(g, store, xv, &s, None, None)?;
        enc.touch(g, store);
        let w = g.constant(weights.clone());
        let m = g.mul(h, w)?;
        Ok(g.sum(m))
    })
    .unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn recorder_means_and_heatmap() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (enc, mut store) = build(Transformation::biaffine(), 2, 18);
    let s = random_structure(&mut rng, 5);
    let x = random_tensor(&mut rng, 5, 8);
    let mut rec = BiasRecorder::new();
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    enc.forward(&mut g, &store, xv, &s, None, Some(&mut rec)).unwrap();
    let cells = export_bias_heatmap(&rec.records(), 2).unwrap();
    assert_eq!(cells.len(), 12);
    assert!(cells.iter().all(|c| c.mean_bias == 0.0));
    let na: Vec<_> = cells.iter().filter(|c| c.dependency == DependencyType::Na).collect();
    assert!(na.iter().all(|c| c.count == 0));

    randomize_transform(&mut store, &mut rng);
    let mut rec = BiasRecorder::new();
    let mut g = Graph::new();
    let xv = g.constant(x);
    enc.forward(&mut g, &store, xv, &s, None, Some(&mut rec)).unwrap();
    let records = rec.records();
    let cells = export_bias_heatmap(&records, 2).unwrap();
    // Count-weighted mean over heads.
    for c in cells.iter().filter(|c| c.count > 0) {
        let mine: Vec<_> = records
            .iter()
            .filter(|r| r.layer == c.layer && r.dependency == c.dependency)
            .collect();
        let n: usize = mine.iter().map(|r| r.count).sum();
        let mean = mine.iter().map(|r| r.mean_bias * r.count as f64).sum::<f64>() / n as f64;
        assert_eq!(n, c.count);
        assert!((mean - c.mean_bias).abs() < 1e-12);
    }
    assert!(cells.iter().any(|c| c.mean_bias != 0.0));
    assert!(heatmap_to_tsv(&cells).starts_with("layer\tdependency\tmean_bias\tcount\n"));
    assert!(export_bias_heatmap(&[], 2).is_err());
}

#[test]
fn recorder_merge_adds_counts() {
    let mut a = BiasRecorder::new();
    a.add(0, 0, DependencyType::IntraNe, 1.0);
    let mut b = BiasRecorder::new();
    b.add(0, 0, DependencyType::IntraNe, 3.0);
    a.merge(&b);
    let r = a.records();
    assert_eq!((r[0].mean_bias, r[0].count), (2.0, 2));
}

#[test]
fn unstructured_layers_own_no_transform() {
    let mut c = config(Transformation::biaffine(), 3);
    c.structured_layers = 2..3;
    let mut store = ParamStore::new();
    Encoder::new(c, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(store.by_name("enc.l2.h0.inter_coref.A").is_some());
    assert!(store.by_name("enc.l1.h0.inter_coref.A").is_none());
}

#[test]
fn disabled_terms_are_frozen() {
    let t = Transformation::new(
        TransformKind::Decomp,
        BiasTerms {
            prior: true,
            ..BiasTerms::default()
        },
    )
    .unwrap();
    let (_, store) = build(t, 1, 0);
    assert!(store.by_name("enc.l0.h0.intra_ne.b").unwrap().trainable);
    assert!(!store.by_name("enc.l0.h0.intra_ne.K").unwrap().trainable);
    assert!(!store.by_name("enc.l0.h0.intra_ne.Q").unwrap().trainable);
}
