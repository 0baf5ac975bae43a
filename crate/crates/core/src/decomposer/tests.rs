use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::OptimizerKind;

fn traj(rows: &[[f64; 3]], ret: f64) -> Trajectory {
    let states = rows.iter().map(|r| vec![r[0], r[1]]).collect();
    let actions = rows.iter().map(|r| vec![r[2]]).collect();
    Trajectory::new(states, actions, ret).unwrap()
}

fn random_traj(len: usize, rng: &mut ChaCha8Rng) -> Trajectory {
    let rows: Vec<[f64; 3]> = (0..len)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    traj(&rows, rng.random_range(-2.0..2.0))
}

fn model(arch: Architecture, widths: Widths, seed: u64) -> Decomposer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Decomposer::new(DecomposerConfig::with_widths(arch, widths), 3, &mut rng).unwrap()
}

fn zero_all(m: &mut Decomposer) {
    let p = m.params_mut();
    for i in 0..p.len() {
        let shape = p.get(i).shape().to_vec();
        p.set(i, Tensor::zeros(&shape)).unwrap();
    }
}

fn no_positions() -> Widths {
    Widths {
        positional: false,
        ..Widths::tiny()
    }
}

// ---- plain-arithmetic oracle of the attention predictor ----

type Mat = Vec<Vec<f64>>;

fn to_mat(t: &Tensor) -> Mat {
    (0..t.dims2().0).map(|i| t.row_slice(i).to_vec()).collect()
}

fn mm(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

fn add_row(a: &Mat, b: &[f64]) -> Mat {
    a.iter().map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect()).collect()
}

fn norm_rows(a: &Mat) -> Mat {
    a.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            r.iter().map(|x| (x - mean) / (var + LAYER_NORM_EPS).sqrt()).collect()
        })
        .collect()
}

struct OracleOut {
    embed: Mat,
    attn: Vec<Mat>,
    hidden: Mat,
    gate: Vec<f64>,
    out: Vec<f64>,
}

fn oracle_attention(m: &Decomposer, tr: &Trajectory) -> OracleOut {
    let p = m.params();
    let w = |n: &str| to_mat(p.by_name(n).unwrap());
    let b = |n: &str| p.by_name(n).unwrap().data().to_vec();
    let heads = m.config().widths.heads;
    let dk = m.config().widths.key_size / heads;
    let x: Mat = (0..tr.len()).map(|t| tr.input_row(t)).collect();
    let mut v = add_row(&mm(&x, &w("embed.weight")), &b("embed.bias"));
    let d = v[0].len();
    if m.config().widths.positional {
        for (t, row) in v.iter_mut().enumerate() {
            for (x, pe) in row.iter_mut().zip(position_signal(t, d)) {
                *x += pe;
            }
        }
    }
    let mut attn = Vec::new();
    let mut joined: Mat = vec![Vec::new(); tr.len()];
    for h in 0..heads {
        let q = mm(&v, &w(&format!("attn.{h}.query")));
        let k = mm(&v, &w(&format!("attn.{h}.key")));
        let val = mm(&v, &w(&format!("attn.{h}.value")));
        let mut probs = vec![vec![0.0; tr.len()]; tr.len()];
        for i in 0..tr.len() {
            let s: Vec<f64> = (0..=i)
                .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|x| (x - mx).exp()).sum();
            for j in 0..=i {
                probs[i][j] = (s[j] - mx).exp() / z;
            }
        }
        let o = mm(&probs, &val);
        for (row, extra) in joined.iter_mut().zip(o) {
            row.extend(extra);
        }
        attn.push(probs);
    }
    let mixed = add_row(&mm(&joined, &w("attn.mix.weight")), &b("attn.mix.bias"));
    let h1 = norm_rows(&v.iter().zip(&mixed).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect());
    let gelu = |x: f64| 0.5 * x * (1.0 + (0.7978845608028654 * (x + 0.044715 * x * x * x)).tanh());
    let f = add_row(&mm(&h1, &w("ffn.in.weight")), &b("ffn.in.bias"));
    let f: Mat = f.iter().map(|r| r.iter().map(|&x| gelu(x)).collect()).collect();
    let f = add_row(&mm(&f, &w("ffn.out.weight")), &b("ffn.out.bias"));
    let hidden = norm_rows(&h1.iter().zip(&f).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect());
    let s: Mat = mm(&hidden, &w("pool.in")).iter().map(|r| r.iter().map(|x| x.tanh()).collect()).collect();
    let gate: Vec<f64> = mm(&s, &w("pool.out")).iter().map(|r| 1.0 / (1.0 + (-r[0]).exp())).collect();
    let wr = w("out.weight");
    let br = b("out.bias")[0];
    let out = hidden
        .iter()
        .zip(&gate)
        .map(|(h, z)| h.iter().zip(&wr).map(|(x, wrow)| z * x * wrow[0]).sum::<f64>() + br)
        .collect();
    OracleOut {
        embed: v,
        attn,
        hidden,
        gate,
        out,
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

fn flat(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

// ---- embed ----

#[test]
fn shared_embedding_across_time() {
    let rows = [[0.3, -0.2, 1.0], [0.1, 0.5, 0.0], [0.9, 0.9, 1.0], [0.0, 0.0, 0.0], [0.7, 0.1, 0.0], [0.3, -0.2, 1.0]];
    let tr = traj(&rows, 1.0);
    for arch in Architecture::ALL {
        let m = model(arch, no_positions(), 1);
        let v = m.embed(&tr).unwrap();
        assert_eq!(v.row_slice(0), v.row_slice(5), "{arch:?}");
    }
}

#[test]
fn zero_weights_embed_to_zero() {
    let tr = traj(&[[0.3, -0.2, 1.0], [0.1, 0.5, 0.0]], 1.0);
    for arch in Architecture::ALL {
        let mut m = model(arch, no_positions(), 2);
        zero_all(&mut m);
        assert!(m.embed(&tr).unwrap().data().iter().all(|&x| x == 0.0), "{arch:?}");
    }
}

#[test]
fn attention_embedding_matches_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..5 {
        let m = model(Architecture::Attention, Widths::tiny(), seed);
        let tr = random_traj(4, &mut rng);
        let oracle = oracle_attention(&m, &tr);
        assert!(close(m.embed(&tr).unwrap().data(), &flat(&oracle.embed), 1e-12));
    }
}

// ---- causal encoding ----

#[test]
fn future_perturbations_leave_past_encodings_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for arch in [Architecture::Recurrent, Architecture::Attention] {
        let m = model(arch, Widths::tiny(), 5);
        let base = random_traj(5, &mut rng);
        let mut perturbed = base.clone();
        perturbed.states[3] = vec![5.0, -5.0];
        perturbed.actions[4] = vec![-3.0];
        let h0 = m.encode_causal(&base).unwrap();
        let h1 = m.encode_causal(&perturbed).unwrap();
        let d = h0.dims2().1;
        assert_eq!(h0.data()[..3 * d], h1.data()[..3 * d], "{arch:?}");
        assert_ne!(h0.data()[3 * d..], h1.data()[3 * d..]);
    }
}

#[test]
fn single_step_encoding_is_prefix_of_longer_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for arch in [Architecture::Recurrent, Architecture::Attention] {
        let m = model(arch, Widths::tiny(), 7);
        let long = random_traj(3, &mut rng);
        let short = Trajectory::new(vec![long.states[0].clone()], vec![long.actions[0].clone()], 0.0).unwrap();
        let hl = m.encode_causal(&long).unwrap();
        let hs = m.encode_causal(&short).unwrap();
        assert_eq!(hs.data(), hl.row_slice(0));
    }
}

#[test]
fn feed_forward_has_no_causal_encoder() {
    let m = model(Architecture::FeedForward, Widths::tiny(), 0);
    assert!(m.encode_causal(&traj(&[[0.0, 0.0, 1.0]], 0.0)).is_err());
}

#[test]
fn two_token_attention_matches_hand_computation() {
    // one head, identity-like projections chosen by hand
    let widths = Widths {
        ff_channels: vec![2],
        lstm_hidden: 2,
        layer_size: 2,
        ffn_hidden: 2,
        heads: 1,
        key_size: 2,
        positional: false,
    };
    let mut m = model(Architecture::Attention, widths, 8);
    let p = m.params_mut();
    p.set_by_name("embed.weight", Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 0.5, -0.5]).unwrap())
        .unwrap();
    p.set_by_name("embed.bias", Tensor::zeros(&[1, 2])).unwrap();
    p.set_by_name("attn.0.query", Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 2.0]).unwrap()).unwrap();
    p.set_by_name("attn.0.key", Tensor::new(vec![2, 2], vec![0.5, 0.0, 0.0, 1.0]).unwrap()).unwrap();
    let tr = traj(&[[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]], 0.0);
    // v_0 = (1, 0), v_1 = (0.5, 0.5); q_1 = (0.5, 1.0); k_0 = (0.5, 0), k_1 = (0.25, 0.5)
    let s0 = (0.5 * 0.5) / 2f64.sqrt();
    let s1 = (0.5 * 0.25 + 1.0 * 0.5) / 2f64.sqrt();
    let p1 = s1.exp() / (s0.exp() + s1.exp());
    let export = m.export_attention(&tr).unwrap();
    assert_eq!(export.heads[0][0], vec![1.0, 0.0]);
    assert!((export.heads[0][1][1] - p1).abs() < 1e-15);
    assert!((export.heads[0][1][0] - (1.0 - p1)).abs() < 1e-15);
}

// ---- attention pooling ----

#[test]
fn zero_pool_output_weights_give_half_gates() {
    let mut m = model(Architecture::Attention, Widths::tiny(), 9);
    let shape = m.params().by_name("pool.out").unwrap().shape().to_vec();
    m.params_mut().set_by_name("pool.out", Tensor::zeros(&shape)).unwrap();
    let (z, _) = m.attention_pool(&random_traj(4, &mut ChaCha8Rng::seed_from_u64(1))).unwrap();
    assert!(z.data().iter().all(|&g| g == 0.5));
}

#[test]
fn gates_and_pooled_states_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for seed in 0..5 {
        let m = model(Architecture::Attention, Widths::tiny(), 100 + seed);
        let tr = random_traj(5, &mut rng);
        let oracle = oracle_attention(&m, &tr);
        let (z, hstar) = m.attention_pool(&tr).unwrap();
        assert!(z.data().iter().all(|&g| g > 0.0 && g < 1.0));
        assert!(close(z.data(), &oracle.gate, 1e-10));
        let expected: Vec<f64> = oracle
            .hidden
            .iter()
            .zip(&oracle.gate)
            .flat_map(|(h, g)| h.iter().map(move |x| g * x))
            .collect();
        assert!(close(hstar.data(), &expected, 1e-10));
        for (mine, theirs) in m.export_attention(&tr).unwrap().heads.iter().zip(&oracle.attn) {
            assert!(close(&mine.concat(), &flat(theirs), 1e-10));
        }
    }
}

#[test]
fn output_is_gated_readout_plus_bias() {
    // r̂_t = z_t (h_t · w_r) + b_r, so a vanishing gate leaves only the bias.
    let m = model(Architecture::Attention, Widths::tiny(), 11);
    let tr = random_traj(3, &mut ChaCha8Rng::seed_from_u64(2));
    let h = m.encode_causal(&tr).unwrap();
    let (z, _) = m.attention_pool(&tr).unwrap();
    let wr = m.params().by_name("out.weight").unwrap().data().to_vec();
    let br = m.params().by_name("out.bias").unwrap().item();
    let out = m.raw_outputs(&[&tr]).unwrap().remove(0);
    for t in 0..3 {
        let dot: f64 = h.row_slice(t).iter().zip(&wr).map(|(a, b)| a * b).sum();
        assert!((out[t] - (z.data()[t] * dot + br)).abs() < 1e-12);
    }
}

// ---- predict ----

#[test]
fn bias_only_model_predicts_constant() {
    let tr = random_traj(4, &mut ChaCha8Rng::seed_from_u64(12));
    for arch in Architecture::ALL {
        let mut m = model(arch, Widths::tiny(), 13);
        zero_all(&mut m);
        let name = if arch == Architecture::FeedForward { "ff.2.bias" } else { "out.bias" };
        m.params_mut().set_by_name(name, Tensor::new(vec![1, 1], vec![0.75]).unwrap()).unwrap();
        let set = IntervalSet::new(m.intervals(), tr.len());
        let d = m.predict(&tr, &set).unwrap();
        assert_eq!(d.per_interval, vec![0.75; 4], "{arch:?}");
        assert_eq!(d.composite, 3.0);
        assert_eq!(d.residual, tr.episodic_return - 3.0);
    }
}

#[test]
fn feed_forward_is_markov() {
    let m = model(Architecture::FeedForward, Widths::tiny(), 14);
    let tr = traj(&[[0.2, 0.4, 1.0], [0.9, -0.3, 0.0], [0.2, 0.4, 1.0]], 2.0);
    let d = m.predict(&tr, &IntervalSet::new(IntervalKind::Singletons, 3)).unwrap();
    assert_eq!(d.per_interval[0], d.per_interval[2]);
}

#[test]
fn composite_equals_sum_of_independent_forward_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for seed in 0..5 {
        let m = model(Architecture::Attention, Widths::tiny(), 200 + seed);
        let tr = random_traj(3, &mut rng);
        let oracle = oracle_attention(&m, &tr);
        let d = m.predict(&tr, &IntervalSet::new(IntervalKind::Prefixes, 3)).unwrap();
        assert!(close(&d.per_interval, &oracle.out, 1e-10));
        assert_eq!(d.composite, d.per_interval[0] + d.per_interval[1] + d.per_interval[2]);
        assert!((d.composite - oracle.out.iter().sum::<f64>()).abs() < 1e-10);
    }
}

#[test]
fn feed_forward_rejects_prefix_intervals() {
    let mut cfg = DecomposerConfig::with_widths(Architecture::FeedForward, Widths::tiny());
    cfg.intervals = IntervalKind::Prefixes;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(Decomposer::new(cfg, 3, &mut rng), Err(Error::Config(_))));
    let m = model(Architecture::FeedForward, Widths::tiny(), 0);
    let tr = traj(&[[0.0, 0.0, 1.0]], 0.0);
    assert!(m.predict(&tr, &IntervalSet::new(IntervalKind::Prefixes, 1)).is_err());
}

#[test]
fn batched_and_single_predictions_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let batch: Vec<Trajectory> = (0..40).map(|i| random_traj(1 + i % 7, &mut rng)).collect();
    let refs: Vec<&Trajectory> = batch.iter().collect();
    for arch in Architecture::ALL {
        let m = model(arch, Widths::tiny(), 17);
        let together = m.raw_outputs(&refs).unwrap();
        for (tr, joint) in batch.iter().zip(&together) {
            let alone = m.raw_outputs(&[tr]).unwrap().remove(0);
            assert!(close(&alone, joint, 1e-12), "{arch:?}");
        }
    }
}

// ---- regression ----

#[test]
fn exact_model_has_zero_loss_and_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let batch: Vec<Trajectory> = (0..3)
        .map(|_| {
            let mut t = random_traj(4, &mut rng);
            t.episodic_return = 2.0;
            t
        })
        .collect();
    let refs: Vec<&Trajectory> = batch.iter().collect();
    for arch in Architecture::ALL {
        let mut m = model(arch, Widths::tiny(), 19);
        zero_all(&mut m);
        let name = if arch == Architecture::FeedForward { "ff.2.bias" } else { "out.bias" };
        m.params_mut().set_by_name(name, Tensor::new(vec![1, 1], vec![0.5]).unwrap()).unwrap();
        let (loss, grad) = m.loss_and_grad(&refs).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0), "{arch:?}");
    }
}

#[test]
fn bias_descent_reaches_return_over_length() {
    let tr = random_traj(4, &mut ChaCha8Rng::seed_from_u64(20));
    let mut m = model(Architecture::Attention, Widths::tiny(), 21);
    zero_all(&mut m);
    let idx = m.params().names().iter().position(|n| n == "out.bias").unwrap();
    let offset: usize = (0..idx).map(|i| m.params().get(i).numel()).sum();
    for _ in 0..500 {
        let (_, grad) = m.loss_and_grad(&[&tr]).unwrap();
        let b = m.params().get(idx).item() - 0.05 * grad[offset];
        m.params_mut().set(idx, Tensor::new(vec![1, 1], vec![b]).unwrap()).unwrap();
    }
    let b = m.params().get(idx).item();
    assert!((b - tr.episodic_return / 4.0).abs() < 1e-12, "{b}");
}

#[test]
fn non_finite_loss_aborts_without_update() {
    let mut m = model(Architecture::Recurrent, Widths::tiny(), 22);
    let mut tr = random_traj(3, &mut ChaCha8Rng::seed_from_u64(23));
    tr.episodic_return = 1e200;
    let before = m.params().flat();
    assert!(matches!(m.regression_step(&[&tr]), Err(Error::NonFinite(_))));
    assert_eq!(m.params().flat(), before);
}

#[test]
fn small_step_gradient_descent_never_increases_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let batch: Vec<Trajectory> = (0..8).map(|i| random_traj(2 + i % 4, &mut rng)).collect();
    let refs: Vec<&Trajectory> = batch.iter().collect();
    for arch in Architecture::ALL {
        let mut cfg = DecomposerConfig::with_widths(arch, Widths::tiny());
        cfg.optimizer = OptimizerKind::Sgd;
        cfg.lr = 1e-5;
        let mut m = Decomposer::new(cfg, 3, &mut ChaCha8Rng::seed_from_u64(25)).unwrap();
        let mut prev = f64::INFINITY;
        for _ in 0..100 {
            let loss = m.regression_step(&refs).unwrap();
            assert!(loss <= prev, "{arch:?}: {loss} > {prev}");
            prev = loss;
        }
    }
}

#[test]
fn normalizer_round_trip_and_mean_on_first_interval() {
    let n = Normalizer::fit(&[1.0, 3.0, 5.0]);
    assert_eq!(n.mean, 3.0);
    assert!((n.std - (8.0f64 / 3.0).sqrt()).abs() < 1e-15);
    let target = n.encode(4.0);
    let decoded = n.decode(&[target / 2.0, target / 2.0]);
    assert!((decoded.iter().sum::<f64>() - 4.0).abs() < 1e-12);
    assert_eq!(Normalizer::fit(&[2.0, 2.0]).std, 1.0);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("decomposer.json");
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let tr = random_traj(4, &mut rng);
    for arch in Architecture::ALL {
        let mut m = model(arch, Widths::tiny(), 27);
        m.set_normalizer(Normalizer { mean: 0.5, std: 2.0 });
        m.save(&path).unwrap();
        let back = Decomposer::load(&path).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.normalizer(), m.normalizer());
        let a = m.raw_outputs(&[&tr]).unwrap().remove(0);
        let b = back.raw_outputs(&[&tr]).unwrap().remove(0);
        assert!(close(&a, &b, 1e-5), "{arch:?}");
    }
}

#[test]
fn config_json_rejects_unknown_fields() {
    let mut v = serde_json::to_value(DecomposerConfig::desk(Architecture::Attention)).unwrap();
    v["surprise"] = serde_json::json!(1);
    assert!(serde_json::from_value::<DecomposerConfig>(v).is_err());
    let v = serde_json::json!("lstm");
    assert_eq!(serde_json::from_value::<Architecture>(v).unwrap(), Architecture::Recurrent);
}
