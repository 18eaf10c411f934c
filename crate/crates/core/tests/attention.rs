mod common;

use common::{head_locality_case, parameter_count_case, random_tensor, randomize};
use lal_parser::attention::{
    compute_keys_values, context_vector, lal_attention_weights, CombineMode, LabelAttention, LabelAttentionConfig,
    QueryMode, SelfAttention, SelfAttentionConfig, LAYER_NORM_EPS,
};
use lal_parser::tensor::{check_gradients, Graph, ParamSet, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn build(config: &LabelAttentionConfig, seed: u64) -> (ParamSet, LabelAttention) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let layer = LabelAttention::new(&mut params, "lal", config, &mut rng).unwrap();
    randomize(&mut params, &mut rng, 1.0);
    (params, layer)
}

fn forward(params: &ParamSet, layer: &LabelAttention, x: &Tensor) -> (Tensor, Vec<Tensor>, Vec<Tensor>) {
    let mut g = Graph::new(params);
    let xv = g.constant(x.clone());
    let out = layer.forward(&mut g, xv, None).unwrap();
    let values = |vs: &[lal_parser::tensor::Var]| vs.iter().map(|&v| g.value(v).clone()).collect::<Vec<_>>();
    (g.value(out.word_reps).clone(), values(&out.head_attention), values(&out.per_head_outputs))
}

#[test]
fn zero_query_attends_uniformly() {
    let keys = Tensor::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.0, 4.0]]).unwrap();
    let a = lal_attention_weights(&[0.0, 0.0], &keys, 2).unwrap();
    assert_eq!(a.data(), &[1.0 / 3.0; 3]);
    let one = lal_attention_weights(&[0.3, -2.0], &Tensor::from_rows(&[vec![5.0, 1.0]]).unwrap(), 2).unwrap();
    assert_eq!(one.data(), &[1.0]);
}

#[test]
fn two_key_attention_matches_scalar_softmax() {
    let keys = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let a = lal_attention_weights(&[1.0, 0.0], &keys, 2).unwrap();
    let s = 1.0 / 2f64.sqrt();
    let z = s.exp() + 1.0;
    assert!((a.data()[0] - s.exp() / z).abs() < 1e-15);
    assert!((a.data()[1] - 1.0 / z).abs() < 1e-15);
    assert!(lal_attention_weights(&[1.0, 0.0], &keys, 3).is_err());
}

#[test]
fn keys_and_values_against_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_tensor(&mut rng, &[4, 5], 1.0);
    let wk = random_tensor(&mut rng, &[5, 3], 1.0);
    let wv = random_tensor(&mut rng, &[5, 2], 1.0);
    let (k, v) = compute_keys_values(&x, &wk, &wv).unwrap();
    for (out, w) in [(&k, &wk), (&v, &wv)] {
        for i in 0..4 {
            for c in 0..w.cols() {
                let mut acc = 0.0;
                for t in 0..5 {
                    acc += x.at(i, t) * w.at(t, c);
                }
                assert!((out.at(i, c) - acc).abs() < 1e-12);
            }
        }
    }
    // identity projection and repeated rows
    let (k, _) = compute_keys_values(&Tensor::identity(5).matmul(&x.transpose().unwrap()).unwrap().transpose().unwrap(), &Tensor::identity(5), &wv).unwrap();
    assert_eq!(k, x);
    let rep = Tensor::from_rows(&[x.row(0).to_vec(), x.row(2).to_vec(), x.row(0).to_vec()]).unwrap();
    let (k, _) = compute_keys_values(&rep, &wk, &wv).unwrap();
    assert_eq!(k.row(0), k.row(2));
}

#[test]
fn context_vector_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v = random_tensor(&mut rng, &[3, 4], 1.0);
    assert_eq!(context_vector(&[0.0, 1.0, 0.0], &v).unwrap(), v.row(1));
    let same = Tensor::from_rows(&vec![vec![1.5, -2.0]; 3]).unwrap();
    let c = context_vector(&[0.2, 0.5, 0.3], &same).unwrap();
    for (a, b) in c.iter().zip([1.5, -2.0]) {
        assert!((a - b).abs() < 1e-15);
    }
    let w = [0.1, 0.6, 0.3];
    let c = context_vector(&w, &v).unwrap();
    for col in 0..4 {
        let expected: f64 = (0..3).map(|r| w[r] * v.at(r, col)).sum();
        assert!((c[col] - expected).abs() < 1e-12);
    }
    assert!(context_vector(&[1.0], &v).is_err());
}

#[test]
fn head_outputs_have_documented_shapes() {
    let mut config = LabelAttentionConfig::new(3, 6, 4, 5, 4);
    config.use_pfl = false;
    let (params, layer) = build(&config, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_tensor(&mut rng, &[5, 6], 1.0);
    let (reps, attn, heads) = forward(&params, &layer, &x);
    assert_eq!(reps.shape(), &[5, 12]);
    for (a, h) in attn.iter().zip(&heads) {
        assert_eq!(a.shape(), &[1, 5]);
        assert!((a.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(h.shape(), &[5, 4]);
    }
}

#[test]
fn identical_words_get_identical_outputs() {
    let config = LabelAttentionConfig::new(2, 4, 3, 3, 2);
    let (params, layer) = build(&config, 5);
    let x = Tensor::from_rows(&[vec![0.1, 0.2, 0.3, 0.4], vec![-1.0, 0.5, 0.0, 2.0], vec![0.1, 0.2, 0.3, 0.4]]).unwrap();
    let (reps, _, _) = forward(&params, &layer, &x);
    assert_eq!(reps.row(0), reps.row(2));
}

#[test]
fn single_head_output_is_the_layer_output() {
    let mut config = LabelAttentionConfig::new(1, 5, 3, 4, 6);
    config.use_pfl = false;
    let (params, layer) = build(&config, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_tensor(&mut rng, &[3, 5], 1.0);
    let (reps, _, heads) = forward(&params, &layer, &x);
    assert_eq!(reps, heads[0]);
}

#[test]
fn head_locality_over_random_configurations() {
    for seed in 0..20 {
        head_locality_case(seed).unwrap();
    }
}

#[test]
fn parameter_count_law() {
    for seed in 0..10 {
        let (diff, expected) = parameter_count_case(seed);
        assert_eq!(diff, expected, "seed {seed}");
    }
}

#[test]
fn ablation_lattice_widths() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_tensor(&mut rng, &[4, 6], 1.0);
    for query_mode in [QueryMode::Vector, QueryMode::Matrix] {
        for combine_mode in [CombineMode::Concat, CombineMode::Project] {
            for use_pfl in [true, false] {
                let config = LabelAttentionConfig {
                    query_mode,
                    combine_mode,
                    use_pfl,
                    ..LabelAttentionConfig::new(3, 6, 4, 4, 2)
                };
                let (params, layer) = build(&config, 9);
                let (reps, attn, heads) = forward(&params, &layer, &x);
                assert_eq!(reps.shape(), &[4, 6]);
                assert_eq!(heads.len(), 3);
                let rows = if query_mode == QueryMode::Vector { 1 } else { 4 };
                for a in &attn {
                    assert_eq!(a.shape(), &[rows, 4]);
                    for r in 0..rows {
                        assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    }
                }
            }
        }
    }
}

/// Plain multi-head self-attention written with loops: per head
/// R = V + softmax(Q Kᵀ/√d) V, then LN(concat(R) W) with gain and bias.
#[allow(clippy::too_many_arguments)]
fn reference_self_attention(
    x: &Tensor,
    wq: &[Tensor],
    wk: &[Tensor],
    wv: &[Tensor],
    wp: &Tensor,
    gain: &[f64],
    bias: &[f64],
) -> Vec<Vec<f64>> {
    let n = x.rows();
    let mul = |a: &Tensor, w: &Tensor| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..w.cols()).map(|c| (0..a.cols()).map(|t| a.at(i, t) * w.at(t, c)).sum()).collect())
            .collect()
    };
    let mut cat: Vec<Vec<f64>> = vec![Vec::new(); n];
    for h in 0..wq.len() {
        let (q, k, v) = (mul(x, &wq[h]), mul(x, &wk[h]), mul(x, &wv[h]));
        let d = q[0].len() as f64;
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..v[0].len() {
                let ctx: f64 = (0..n).map(|j| e[j] / z * v[j][c]).sum();
                cat[i].push(v[i][c] + ctx);
            }
        }
    }
    cat.iter()
        .map(|row| {
            let y: Vec<f64> = (0..wp.cols())
                .map(|c| row.iter().enumerate().map(|(t, r)| r * wp.at(t, c)).sum())
                .collect();
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
            y.iter()
                .enumerate()
                .map(|(c, v)| (v - mean) / (var + LAYER_NORM_EPS).sqrt() * gain[c] + bias[c])
                .collect()
        })
        .collect()
}

#[test]
fn matrix_queries_with_projection_match_self_attention_reference() {
    let config = LabelAttentionConfig {
        query_mode: QueryMode::Matrix,
        combine_mode: CombineMode::Project,
        use_pfl: false,
        ..LabelAttentionConfig::new(2, 5, 3, 4, 2)
    };
    let (params, layer) = build(&config, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_tensor(&mut rng, &[3, 5], 1.0);
    let (reps, _, _) = forward(&params, &layer, &x);
    let get = |id| params.get(id).clone();
    let (wp, norm) = layer.projection.as_ref().unwrap();
    let expected = reference_self_attention(
        &x,
        &layer.heads.iter().map(|h| get(h.query)).collect::<Vec<_>>(),
        &layer.heads.iter().map(|h| get(h.key)).collect::<Vec<_>>(),
        &layer.heads.iter().map(|h| get(h.value)).collect::<Vec<_>>(),
        &get(*wp),
        params.get(norm.gain).data(),
        params.get(norm.bias).data(),
    );
    for i in 0..3 {
        for c in 0..4 {
            assert!((reps.at(i, c) - expected[i][c]).abs() < 1e-12, "({i}, {c})");
        }
    }
}

fn self_attention(seed: u64) -> (ParamSet, SelfAttention) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let cfg = SelfAttentionConfig {
        d_model: 6,
        num_heads: 2,
        d_ff: 8,
    };
    let layer = SelfAttention::new(&mut params, "sa", &cfg, &mut rng).unwrap();
    randomize(&mut params, &mut rng, 0.8);
    (params, layer)
}

#[test]
fn self_attention_single_word_attends_to_itself() {
    let (params, layer) = self_attention(12);
    let mut g = Graph::new(&params);
    let x = g.constant(Tensor::from_rows(&[vec![0.5, -1.0, 0.2, 0.0, 1.0, 0.3]]).unwrap());
    let out = layer.forward(&mut g, x).unwrap();
    for a in &out.head_attention {
        assert_eq!(g.value(*a).data(), &[1.0]);
    }
}

#[test]
fn self_attention_is_permutation_equivariant() {
    let (params, layer) = self_attention(13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random_tensor(&mut rng, &[4, 6], 1.0);
    let perm = [2, 0, 3, 1];
    let px = Tensor::from_rows(&perm.iter().map(|&p| x.row(p).to_vec()).collect::<Vec<_>>()).unwrap();
    let run = |t: &Tensor| {
        let mut g = Graph::new(&params);
        let v = g.constant(t.clone());
        let out = layer.forward(&mut g, v).unwrap();
        g.value(out.word_reps).clone()
    };
    let (y, py) = (run(&x), run(&px));
    for (k, &p) in perm.iter().enumerate() {
        for (a, b) in py.row(k).iter().zip(y.row(p)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn self_attention_gradients() {
    let (params, layer) = self_attention(15);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = random_tensor(&mut rng, &[3, 6], 1.0);
    let r = random_tensor(&mut rng, &[3, 6], 1.0);
    let report = check_gradients(&params, &[], 1e-5, |g| {
        let xv = g.constant(x.clone());
        let out = layer.forward(g, xv)?;
        let rv = g.constant(r.clone());
        let p = g.mul(out.word_reps, rv)?;
        Ok(g.sum(p))
    })
    .unwrap();
    assert!(report.passes(1e-5), "{report:?}");
}

#[test]
fn label_attention_gradients_all_variants() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = random_tensor(&mut rng, &[4, 5], 1.0);
    for query_mode in [QueryMode::Vector, QueryMode::Matrix] {
        for combine_mode in [CombineMode::Concat, CombineMode::Project] {
            let config = LabelAttentionConfig {
                query_mode,
                combine_mode,
                d_ff: 6,
                ..LabelAttentionConfig::new(3, 5, 3, 3, 2)
            };
            let (params, layer) = build(&config, 18);
            let r = random_tensor(&mut rng, &[4, 6], 1.0);
            let report = check_gradients(&params, &[], 1e-5, |g| {
                let xv = g.constant(x.clone());
                let out = layer.forward(g, xv, None)?;
                let rv = g.constant(r.clone());
                let p = g.mul(out.word_reps, rv)?;
                Ok(g.sum(p))
            })
            .unwrap();
            assert!(report.passes(1e-4), "{query_mode:?}/{combine_mode:?}: {report:?}");
        }
    }
}

#[test]
fn residual_dropout_only_acts_in_training() {
    let config = LabelAttentionConfig {
        residual_dropout: 0.5,
        ..LabelAttentionConfig::new(2, 4, 3, 3, 2)
    };
    let (params, layer) = build(&config, 19);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let x = random_tensor(&mut rng, &[3, 4], 1.0);
    let run = |dropout: Option<u64>| {
        let mut g = Graph::new(&params);
        let xv = g.constant(x.clone());
        let mut r = dropout.map(ChaCha8Rng::seed_from_u64);
        let out = layer.forward(&mut g, xv, r.as_mut()).unwrap();
        g.value(out.word_reps).clone()
    };
    assert_eq!(run(None), run(None));
    assert_eq!(run(Some(1)), run(Some(1)));
    assert_ne!(run(None), run(Some(1)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn attention_rows_are_distributions(seed in 0u64..10_000, n in 1usize..6) {
        let config = LabelAttentionConfig::new(2, 4, 3, 3, 2);
        let (params, layer) = build(&config, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let x = random_tensor(&mut rng, &[n, 4], 3.0);
        let (_, attn, _) = forward(&params, &layer, &x);
        for a in attn {
            prop_assert!((a.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(a.data().iter().all(|&v| v >= 0.0));
        }
    }
}
