use super::*;
use crate::feature_store::{FeatureTensor, EOS};
use crate::org::{OrgMode, TopK};
use rand::Rng;

fn config() -> ModelConfig {
    ModelConfig {
        appearance_dim: 3,
        motion_dim: 2,
        object_dim: 4,
        vocab_size: 9,
        org: OrgConfig {
            mode: OrgMode::Complete,
            top_k: TopK::Count(3),
            dim: 5,
        },
        hidden: 6,
        word_dim: 4,
        attn_dim: 3,
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> FeatureTensor {
    let n = shape.iter().product();
    FeatureTensor::new(
        shape,
        (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
    )
    .unwrap()
}

fn video(seed: u64, l: usize, n: usize) -> VideoRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    VideoRecord::new(
        format!("v{seed}"),
        random_tensor(&mut rng, vec![l, 3]),
        random_tensor(&mut rng, vec![l, 2]),
        random_tensor(&mut rng, vec![l, n, 4]),
        vec!["a cat".into()],
    )
    .unwrap()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gate-by-gate LSTM step over plain vectors.
fn lstm_oracle(
    store: &ParameterStore<f64>,
    cell: &LstmCell,
    x: &[f64],
    h: &[f64],
    c: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let wx = &store.get(cell.input_weight).value;
    let wh = &store.get(cell.hidden_weight).value;
    let b = &store.get(cell.bias).value;
    let hs = cell.hidden_size;
    let pre = |col: usize| {
        let mut s = b.get(0, col);
        for (k, xv) in x.iter().enumerate() {
            s += xv * wx.get(k, col);
        }
        for (k, hv) in h.iter().enumerate() {
            s += hv * wh.get(k, col);
        }
        s
    };
    let mut hn = vec![0.0; hs];
    let mut cn = vec![0.0; hs];
    for j in 0..hs {
        let i = sig(pre(j));
        let f = sig(pre(hs + j));
        let o = sig(pre(2 * hs + j));
        let g = pre(3 * hs + j).tanh();
        cn[j] = f * c[j] + i * g;
        hn[j] = o * cn[j].tanh();
    }
    (hn, cn)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn zero_all(model: &mut CaptionModel<f64>) {
    for p in model.store.iter_mut() {
        p.value = Mat::zeros(p.value.rows(), p.value.cols());
    }
}

#[test]
fn attention_lstm_matches_gate_oracle() {
    let model = CaptionModel::<f64>::new(config(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut t = Tape::new();
    let mean: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lang_h: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let h0: Vec<f64> = (0..6).map(|_| rng.random_range(-0.5..0.5)).collect();
    let c0: Vec<f64> = (0..6).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mv = t.constant(Mat::row_vector(mean.clone()));
    let lv = t.constant(Mat::row_vector(lang_h.clone()));
    let state = LstmState {
        hidden: t.constant(Mat::row_vector(h0.clone())),
        cell: t.constant(Mat::row_vector(c0.clone())),
    };
    let out = model.attention_lstm_step(&mut t, mv, 5, lv, state).unwrap();
    let emb = model
        .store
        .get(model.params.embedding)
        .value
        .row(5)
        .to_vec();
    let x: Vec<f64> = mean.iter().chain(&emb).chain(&lang_h).copied().collect();
    let (h, c) = lstm_oracle(&model.store, &model.params.attn_lstm, &x, &h0, &c0);
    assert!(close(t.value(out.hidden).data(), &h, 1e-12));
    assert!(close(t.value(out.cell).data(), &c, 1e-12));

    let again = model.attention_lstm_step(&mut t, mv, 5, lv, state).unwrap();
    assert_eq!(t.value(again.hidden), t.value(out.hidden));

    assert!(matches!(
        model.attention_lstm_step(&mut t, mv, 9, lv, state),
        Err(Error::Index { index: 9, size: 9 })
    ));
}

#[test]
fn lstm_steps_with_zero_weights_give_zero_hidden() {
    let mut model = CaptionModel::<f64>::new(config(), 3).unwrap();
    zero_all(&mut model);
    let mut t = Tape::new();
    let s = model.initial_state(&mut t);
    let mean = t.constant(Mat::filled(1, 6, 0.7));
    let a = model
        .attention_lstm_step(&mut t, mean, 4, s.lang.hidden, s.attn)
        .unwrap();
    assert!(t.value(a.hidden).data().iter().all(|&v| v == 0.0));
    let cg = t.constant(Mat::filled(1, 6, 0.3));
    let cl = t.constant(Mat::filled(1, 5, -0.3));
    let l = model
        .language_lstm_step(&mut t, cg, cl, a.hidden, s.lang)
        .unwrap();
    assert!(t.value(l.hidden).data().iter().all(|&v| v == 0.0));
}

#[test]
fn language_lstm_matches_gate_oracle() {
    let model = CaptionModel::<f64>::new(config(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut vecs: Vec<Vec<f64>> = [6, 5, 6, 6, 6]
        .iter()
        .map(|&n| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let c0 = vecs.pop().unwrap();
    let h0 = vecs.pop().unwrap();
    let mut t = Tape::new();
    let ins: Vec<Var> = vecs
        .iter()
        .map(|v| t.constant(Mat::row_vector(v.clone())))
        .collect();
    let state = LstmState {
        hidden: t.constant(Mat::row_vector(h0.clone())),
        cell: t.constant(Mat::row_vector(c0.clone())),
    };
    let out = model
        .language_lstm_step(&mut t, ins[0], ins[1], ins[2], state)
        .unwrap();
    let x: Vec<f64> = vecs.concat();
    let (h, c) = lstm_oracle(&model.store, &model.params.lang_lstm, &x, &h0, &c0);
    assert!(close(t.value(out.hidden).data(), &h, 1e-12));
    assert!(close(t.value(out.cell).data(), &c, 1e-12));
    let again = model
        .language_lstm_step(&mut t, ins[0], ins[1], ins[2], state)
        .unwrap();
    assert_eq!(t.value(again.cell), t.value(out.cell));
    assert!(model
        .language_lstm_step(&mut t, ins[1], ins[1], ins[2], state)
        .is_err());
}

#[test]
fn vocab_distribution_cases() {
    let mut model = CaptionModel::<f64>::new(config(), 5).unwrap();
    let mut t = Tape::new();
    let h = t.constant(Mat::row_vector(vec![0.3, -0.2, 0.9, 0.1, 0.0, -0.5]));
    let p = model.vocab_distribution(&mut t, h).unwrap();
    assert!((t.value(p).data().iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let w = model.params.output.weight;
    let b = model.params.output.bias.unwrap();
    model.store.get_mut(w).value = Mat::zeros(6, 9);
    let mut t = Tape::new();
    let h = t.constant(Mat::filled(1, 6, 0.4));
    let p = model.vocab_distribution(&mut t, h).unwrap();
    assert!(t
        .value(p)
        .data()
        .iter()
        .all(|v| (v - 1.0 / 9.0).abs() < 1e-15));

    model.store.get_mut(b).value.set(0, 6, 20.0);
    let mut t = Tape::new();
    let h = t.constant(Mat::filled(1, 6, 0.4));
    let p = model.vocab_distribution(&mut t, h).unwrap();
    assert!(t.value(p).get(0, 6) > 0.99);

    let bad = t.constant(Mat::zeros(1, 4));
    assert!(matches!(
        model.vocab_distribution(&mut t, bad),
        Err(Error::Shape(_))
    ));
}

#[test]
fn decode_step_equals_hand_chained_components() {
    let model = CaptionModel::<f64>::new(config(), 6).unwrap();
    let v = video(1, 3, 2);
    let mut t = Tape::new();
    let ctx = model.encode_video(&mut t, &v).unwrap();
    let s0 = model.initial_state(&mut t);
    let step1 = model.decode_step(&mut t, &ctx, BOS, s0).unwrap();
    let out = model.decode_step(&mut t, &ctx, 5, step1.state).unwrap();

    let s = step1.state;
    let attn = model
        .attention_lstm_step(&mut t, ctx.global.mean, 5, s.lang.hidden, s.attn)
        .unwrap();
    let (alpha, cg) = temporal_attention(
        &mut t,
        &model.store,
        &model.params.temporal,
        ctx.global.frames,
        attn.hidden,
        None,
    )
    .unwrap();
    let merged = merge_aligned(&mut t, ctx.objects.enhanced, &ctx.alignment, alpha).unwrap();
    let (beta, cl) = spatial_attention(
        &mut t,
        &model.store,
        &model.params.spatial,
        merged,
        attn.hidden,
    )
    .unwrap();
    let lang = model
        .language_lstm_step(&mut t, cg, cl, attn.hidden, s.lang)
        .unwrap();
    let p = model.vocab_distribution(&mut t, lang.hidden).unwrap();

    let p_step = t.softmax_rows(out.logits, None).unwrap();
    assert_eq!(t.value(p_step), t.value(p));
    assert_eq!(t.value(out.state.alpha.unwrap()), t.value(alpha));
    assert_eq!(t.value(out.state.beta.unwrap()), t.value(beta));
    for w in [out.state.alpha.unwrap(), out.state.beta.unwrap(), p_step] {
        let vals = t.value(w).data();
        assert!(vals.iter().all(|&x| x >= 0.0));
        assert!((vals.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    let again = model.decode_step(&mut t, &ctx, 5, step1.state).unwrap();
    assert_eq!(t.value(again.logits), t.value(out.logits));
}

#[test]
fn teacher_forcing_stacks_step_logits() {
    let model = CaptionModel::<f64>::new(config(), 7).unwrap();
    let v = video(2, 2, 3);
    let tokens = [BOS, 4, 6, EOS];
    let mut t = Tape::new();
    let ctx = model.encode_video(&mut t, &v).unwrap();
    let all = model.teacher_forced_logits(&mut t, &ctx, &tokens).unwrap();
    assert_eq!(t.shape(all), (3, 9));
    let mut state = model.initial_state(&mut t);
    for (row, &prev) in tokens[..3].iter().enumerate() {
        let out = model.decode_step(&mut t, &ctx, prev, state).unwrap();
        assert_eq!(t.value(out.logits).row(0), t.value(all).row(row));
        state = out.state;
    }
    assert!(model.teacher_forced_logits(&mut t, &ctx, &[BOS]).is_err());
}

#[test]
fn encode_rejects_mismatched_widths() {
    let model = CaptionModel::<f64>::new(config(), 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v = VideoRecord::new(
        "odd".to_string(),
        random_tensor(&mut rng, vec![2, 4]),
        random_tensor(&mut rng, vec![2, 2]),
        random_tensor(&mut rng, vec![2, 2, 4]),
        vec!["x".into()],
    )
    .unwrap();
    let mut t = Tape::new();
    assert!(matches!(
        model.encode_video(&mut t, &v),
        Err(Error::Shape(_))
    ));
}

#[test]
fn model_beam_one_matches_greedy_and_skips_reserved() {
    for seed in 0..10 {
        let model = CaptionModel::<f64>::new(config(), seed).unwrap();
        let v = video(seed + 100, 3, 2);
        let mut tape = Tape::new();
        let ctx = model.encode_video(&mut tape, &v).unwrap();
        let cfg = SearchConfig::for_model(1, 8);
        let mut stepper = ModelStepper {
            model: &model,
            tape: &mut tape,
            ctx: &ctx,
        };
        let g = greedy_decode(&mut stepper, &cfg).unwrap();
        let b = beam_search(&mut stepper, &cfg).unwrap();
        assert_eq!(g.tokens, b.tokens);
        assert!(g
            .tokens
            .iter()
            .all(|&t| t != PAD && t != BOS && t != UNK && t != EOS));
        let gen = model.generate(&v, 3, 7).unwrap();
        assert!(gen.len() <= 8);
        assert_eq!(gen, model.generate(&v, 3, 7).unwrap());
    }
}

#[test]
fn cast_preserves_values() {
    let model = CaptionModel::<f32>::new(config(), 2).unwrap();
    let wide: CaptionModel<f64> = model.cast();
    let back: CaptionModel<f32> = wide.cast();
    for (a, b) in model.store.iter().zip(back.store.iter()) {
        assert_eq!(a.value, b.value);
    }
    let mut bad = config();
    bad.hidden = 0;
    assert!(matches!(
        CaptionModel::<f32>::new(bad, 1),
        Err(Error::Config(_))
    ));
}
