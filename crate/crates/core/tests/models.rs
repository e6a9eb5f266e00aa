use adat_core::data::{EOS_ID, SOS_ID};
use adat_core::models::{
    checkpoint_bytes, collapse_decode, parse_checkpoint, temporal_conv, AdatBlock, Ctx, Example, Mode, Model,
    ModelConfig, Variant,
};
use adat_core::params::Bound;
use adat_core::{grad_check, Graph, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn toy(variant: Variant, mode: Mode) -> ModelConfig {
    ModelConfig {
        num_encoders: 1,
        num_decoders: 1,
        d_model: 8,
        heads: 2,
        ff_size: 12,
        dropout: 0.0,
        stack_depth: 2,
        gloss_vocab: 7,
        text_vocab: 9,
        max_video_len: 16,
        max_gloss_len: 6,
        max_text_len: 6,
        frame_channels: 1,
        frame_height: 6,
        frame_width: 6,
        mode,
        variant,
        ..ModelConfig::desk_small()
    }
}

/// Mean cross-entropy of rows of `logits` against `targets`.
fn cross_entropy(g: &mut Graph<f64>, logits: Var, targets: &[usize]) -> adat_core::Result<Var> {
    let (rows, cols) = (g.shape(logits)[0], g.shape(logits)[1]);
    let mut onehot = vec![0.0; rows * cols];
    for (r, &t) in targets.iter().enumerate() {
        onehot[r * cols + t] = -1.0 / rows as f64;
    }
    let lp = g.log_softmax(logits)?;
    let w = g.constant(Tensor::new(vec![rows, cols], onehot)?);
    let prod = g.mul(lp, w)?;
    Ok(g.sum(prod))
}

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn encode_shapes_and_split() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for variant in [Variant::Adat, Variant::EncoderDecoder, Variant::EncoderOnly] {
        let model = Model::<f64>::build(toy(variant, Mode::S2T), 3).unwrap();
        for m in [2usize, 3, 10, 11] {
            let mut g = Graph::new();
            let p = model.params().bind_frozen(&mut g);
            let frames = g.constant(rand_tensor(&mut rng, &[m, 1, 6, 6], 0.0, 1.0));
            let enc = model.encode(&mut g, &p, frames, &mut Ctx::eval()).unwrap();
            assert_eq!(g.shape(enc.memory), [m, 8]);
            if variant == Variant::Adat {
                let t = enc.adat_trace[0];
                let m1 = m.div_ceil(2);
                assert_eq!(g.shape(t.conv_out), [m1, 8]);
                assert_eq!(g.shape(t.gated_out), [m - m1, 8]);
            }
        }
    }
    let model = Model::<f64>::build(toy(Variant::Adat, Mode::S2T), 3).unwrap();
    let mut g = Graph::new();
    let p = model.params().bind_frozen(&mut g);
    let one = g.constant(rand_tensor(&mut rng, &[1, 1, 6, 6], 0.0, 1.0));
    assert!(model.encode(&mut g, &p, one, &mut Ctx::eval()).is_err());
    assert_eq!((AdatBlock::split_point(10), AdatBlock::split_point(11)), (5, 6));
}

#[test]
fn permuting_gated_half_leaves_conv_half_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Model::<f64>::build(toy(Variant::Adat, Mode::S2T), 4).unwrap();
    let m = 9;
    let x = rand_tensor(&mut rng, &[m, 8], -1.0, 1.0);
    let mut rows: Vec<Vec<f64>> = (0..m).map(|r| x.row(r).to_vec()).collect();
    rows[5..].reverse();
    let xp = Tensor::new(vec![m, 8], rows.concat()).unwrap();

    let mut g = Graph::new();
    let p = model.params().bind_frozen(&mut g);
    let (a, b) = (g.constant(x), g.constant(xp));
    let ea = model.encode_projected(&mut g, &p, a, &mut Ctx::eval()).unwrap();
    let eb = model.encode_projected(&mut g, &p, b, &mut Ctx::eval()).unwrap();
    for r in 0..5 {
        assert_eq!(g.value(ea.memory).row(r), g.value(eb.memory).row(r));
    }
    assert_ne!(g.value(ea.memory).row(6), g.value(eb.memory).row(6));
}

#[test]
fn adat_encoder_has_no_positional_encoding() {
    let adat = Model::<f64>::build(toy(Variant::Adat, Mode::S2T), 0).unwrap();
    let canon = Model::<f64>::build(toy(Variant::EncoderDecoder, Mode::S2T), 0).unwrap();
    assert!(!adat.encoder_uses_positional_encoding());
    assert!(canon.encoder_uses_positional_encoding());

    // Identical rows stay identical through a conv-free stretch of the
    // ADAT encoder but not through a position-encoded one.
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[6, 8], 0.3));
    let p = adat.params().bind_frozen(&mut g);
    let e = adat.encode_projected(&mut g, &p, x, &mut Ctx::eval()).unwrap();
    let v = g.value(e.memory);
    assert!(max_abs_diff(&Tensor::new(vec![8], v.row(4).to_vec()).unwrap(), &Tensor::new(vec![8], v.row(5).to_vec()).unwrap()) < 1e-12);
    let p = canon.params().bind_frozen(&mut g);
    let e = canon.encode_projected(&mut g, &p, x, &mut Ctx::eval()).unwrap();
    let v = g.value(e.memory);
    assert_ne!(v.row(4), v.row(5));
}

#[test]
fn temporal_conv_examples() {
    let d = 3;
    let mut g = Graph::<f64>::new();
    let zero = g.constant(Tensor::zeros(&[4, d]));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = g.constant(rand_tensor(&mut rng, &[3 * d, d], -1.0, 1.0));
    let b = g.constant(Tensor::zeros(&[d]));
    let y = temporal_conv(&mut g, zero, w, b).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));

    let mut center = vec![0.0; 3 * d * d];
    let mut mean = vec![0.0; 3 * d * d];
    for c in 0..d {
        center[(d + c) * d + c] = 1.0;
        for tap in 0..3 {
            mean[(tap * d + c) * d + c] = 1.0 / 3.0;
        }
    }
    let x = rand_tensor(&mut rng, &[5, d], -1.0, 1.0);
    let xv = g.constant(x.clone());
    let wc = g.constant(Tensor::new(vec![3 * d, d], center).unwrap());
    let y = temporal_conv(&mut g, xv, wc, b).unwrap();
    let relu: Vec<f64> = x.data().iter().map(|v| v.max(0.0)).collect();
    assert_eq!(g.value(y).data(), relu.as_slice());

    let c = g.constant(Tensor::full(&[5, d], 0.6));
    let wm = g.constant(Tensor::new(vec![3 * d, d], mean).unwrap());
    let y = temporal_conv(&mut g, c, wm, b).unwrap();
    for r in 0..5 {
        let expect = if r == 0 || r == 4 { 0.4 } else { 0.6 };
        for &v in g.value(y).row(r) {
            assert!((v - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn gloss_head_contract() {
    let mut model = Model::<f64>::build(toy(Variant::Adat, Mode::S2G2T), 1).unwrap();
    for name in ["gloss.head.w", "gloss.head.b"] {
        let id = model.params().find(name).unwrap();
        model.params_mut().get_mut(id).data_mut().fill(0.0);
    }
    let mut g = Graph::new();
    let p = model.params().bind_frozen(&mut g);
    let mem = g.constant(Tensor::full(&[5, 8], 0.2));
    let logits = model.gloss_head(&mut g, &p, mem).unwrap();
    assert_eq!(g.shape(logits), [5, 8]);
    let probs = g.softmax(logits, 1).unwrap();
    assert!(g.value(probs).data().iter().all(|&q| (q - 1.0 / 8.0).abs() < 1e-15));

    let s2t = Model::<f64>::build(toy(Variant::Adat, Mode::S2T), 1).unwrap();
    let p = s2t.params().bind_frozen(&mut g);
    assert!(s2t.gloss_head(&mut g, &p, mem).is_err());
    let blank = 7;
    assert_eq!(collapse_decode(&[4, 4, blank, 5, 5], blank), [4, 5]);
}

#[test]
fn eos_biased_model_translates_to_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for variant in [Variant::Adat, Variant::EncoderDecoder, Variant::DecoderOnly] {
        let mut model = Model::<f64>::build(toy(variant, Mode::S2T), 2).unwrap();
        let prefix = if variant == Variant::DecoderOnly { "stream.out" } else { "decoder.out" };
        let w = model.params().find(&format!("{prefix}.w")).unwrap();
        let b = model.params().find(&format!("{prefix}.b")).unwrap();
        model.params_mut().get_mut(w).data_mut().fill(0.0);
        model.params_mut().get_mut(b).data_mut()[EOS_ID] = 10.0;
        let frames = rand_tensor(&mut rng, &[4, 1, 6, 6], 0.0, 1.0);
        assert!(model.translate(&frames).unwrap().text.is_empty());
    }
}

#[test]
fn decoder_is_causal() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = Model::<f64>::build(toy(Variant::Adat, Mode::S2T), 6).unwrap();
    let mut g = Graph::new();
    let p = model.params().bind_frozen(&mut g);
    let mem = g.constant(rand_tensor(&mut rng, &[5, 8], -1.0, 1.0));
    let a = model.decoder_logits(&mut g, &p, mem, &[SOS_ID, 4, 5, 6], &mut Ctx::eval()).unwrap();
    let b = model.decoder_logits(&mut g, &p, mem, &[SOS_ID, 4, 8, 7], &mut Ctx::eval()).unwrap();
    for r in 0..2 {
        assert_eq!(g.value(a).row(r), g.value(b).row(r));
    }
    assert_ne!(g.value(a).row(2), g.value(b).row(2));

    let dm = Model::<f64>::build(toy(Variant::DecoderOnly, Mode::S2T), 6).unwrap();
    let p = dm.params().bind_frozen(&mut g);
    let a = dm.stream_logits(&mut g, &p, mem, &[SOS_ID, 4, 5], &mut Ctx::eval()).unwrap();
    let b = dm.stream_logits(&mut g, &p, mem, &[SOS_ID, 4, 8], &mut Ctx::eval()).unwrap();
    for r in 0..2 {
        assert_eq!(g.value(a).row(r), g.value(b).row(r));
    }
    assert_ne!(g.value(a).row(2), g.value(b).row(2));

    let empty = g.constant(Tensor::zeros(&[0, 8]));
    let p = model.params().bind_frozen(&mut g);
    assert!(model.decode_greedy(&mut g, &p, empty).is_err());
}

#[test]
fn build_is_deterministic_and_presets_hold() {
    for variant in Variant::ALL {
        let a = Model::<f64>::build(toy(variant, Mode::S2T), 11).unwrap();
        let b = Model::<f64>::build(toy(variant, Mode::S2T), 11).unwrap();
        assert_eq!(a.param_count(), b.param_count());
        assert_eq!(a.params(), b.params());
    }
    let s2t = ModelConfig::preset("table3-s2t").unwrap();
    assert_eq!((s2t.num_encoders, s2t.num_decoders, s2t.d_model, s2t.heads), (1, 1, 512, 8));
    let s2g2t = ModelConfig::preset("table3-s2g2t").unwrap();
    assert_eq!((s2g2t.num_encoders, s2g2t.d_model, s2g2t.heads, s2g2t.learning_rate), (12, 1024, 16, 5e-5));
    assert!(ModelConfig::preset("nope").is_err());
    let mut bad = toy(Variant::EncoderOnly, Mode::S2G2T);
    assert!(Model::<f64>::build(bad.clone(), 0).is_err());
    bad.mode = Mode::S2T;
    bad.heads = 3;
    assert!(Model::<f64>::build(bad, 0).is_err());
}

#[test]
fn forward_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let frames = rand_tensor(&mut rng, &[5, 1, 6, 6], 0.0, 1.0);
    let model = Model::<f64>::build(toy(Variant::Adat, Mode::S2G2T), 3).unwrap();
    let ex = Example {
        frames: &frames,
        gloss: &[4, 5],
        alignment: &[4, 4, 7, 5, 5],
        text: &[6, 4, 7],
    };
    let run = || {
        let mut g = Graph::new();
        let p = model.params().bind(&mut g);
        let out = model.forward(&mut g, &p, &ex, &mut Ctx::eval()).unwrap();
        let gl = out.gloss.unwrap();
        let mut l = cross_entropy(&mut g, out.text.logits, &out.text.targets).unwrap();
        let lg = cross_entropy(&mut g, gl.logits, &gl.targets).unwrap();
        l = g.add(l, lg).unwrap();
        g.backward(l).unwrap();
        let grads: Vec<Tensor<f64>> = p.vars().iter().map(|&v| g.grad(v).unwrap().clone()).collect();
        (g.value(l).clone(), grads)
    };
    assert_eq!(run(), run());
}

/// Brightness plus horizontal ramp plus noise per frame, so feature rows
/// differ enough for the attention logits to carry gradient.
fn ramp_frames(rng: &mut ChaCha8Rng, count: usize) -> Tensor<f64> {
    let mut data = Vec::with_capacity(count * 36);
    for _ in 0..count {
        let level = rng.random_range(-3.0..3.0);
        let slope = rng.random_range(-3.0..3.0);
        for k in 0..36 {
            let ramp = (k % 6) as f64 / 5.0 - 0.5;
            data.push(level + 2.0 * slope * ramp + rng.random_range(-0.5..0.5));
        }
    }
    Tensor::new(vec![count, 1, 6, 6], data).unwrap()
}

fn end_to_end_check(variant: Variant, mode: Mode, seed: u64, tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = ramp_frames(&mut rng, 4);
    let model = Model::<f64>::build(toy(variant, mode), seed).unwrap();
    let inputs = model.params().tensors().to_vec();
    let text = [4usize, 6, 5];
    let report = grad_check(
        |g, vars| {
            let p = Bound::from_vars(vars.to_vec());
            let ex = Example {
                frames: &frames,
                gloss: &[5, 4],
                alignment: &[5, 5, 7, 4],
                text: &text,
            };
            let out = model.forward(g, &p, &ex, &mut Ctx::eval())?;
            let mut loss = cross_entropy(g, out.text.logits, &out.text.targets)?;
            if let Some(h) = out.gloss {
                let gl = cross_entropy(g, h.logits, &h.targets)?;
                loss = g.add(loss, gl)?;
            }
            Ok(loss)
        },
        &inputs,
        tol,
    );
    assert!(report.passed, "{variant} {mode} seed {seed}: worst {} {:?}", report.worst(), report.failure);
}

#[test]
fn end_to_end_s2t_gradient() {
    for seed in 0..2 {
        end_to_end_check(Variant::Adat, Mode::S2T, seed, 1e-3);
    }
}

#[test]
fn end_to_end_gradients_other_variants() {
    end_to_end_check(Variant::Adat, Mode::S2G2T, 3, 1e-3);
    end_to_end_check(Variant::EncoderDecoder, Mode::S2T, 4, 1e-3);
    end_to_end_check(Variant::EncoderOnly, Mode::S2T, 5, 1e-3);
    end_to_end_check(Variant::DecoderOnly, Mode::S2T, 6, 1e-3);
}

#[test]
fn checkpoint_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let frames = rand_tensor(&mut rng, &[6, 1, 6, 6], 0.0, 1.0).cast::<f32>();
    for variant in Variant::ALL {
        let model = Model::<f32>::build(toy(variant, Mode::S2T), 21).unwrap();
        let bytes = checkpoint_bytes(&model);
        let back = parse_checkpoint::<f32>(&bytes).unwrap();
        assert_eq!(back.config(), model.config());
        assert_eq!(back.params(), model.params());
        assert_eq!(back.translate(&frames).unwrap(), model.translate(&frames).unwrap());
        assert_eq!(checkpoint_bytes(&back), bytes);
        assert!(parse_checkpoint::<f32>(&bytes[..bytes.len() - 3]).is_err());
    }
    assert!(parse_checkpoint::<f32>(b"NOTACKPT x=1\n").is_err());
}

proptest! {
    #[test]
    fn collapse_is_idempotent(seq in prop::collection::vec(0usize..6, 0..30)) {
        let blank = 5;
        let once = collapse_decode(&seq, blank);
        prop_assert!(!once.contains(&blank));
        let has_repeat = once.windows(2).any(|w| w[0] == w[1]);
        if !has_repeat {
            prop_assert_eq!(collapse_decode(&once, blank), once.clone());
        }
    }
}
