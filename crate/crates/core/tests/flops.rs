use adat_core::attention::{lssa_indices, lssa_pair_total};
use adat_core::flops::{
    attended_pairs, decoder_flops, default_probe_lengths, encoder_flops, lssa_pairs_closed_form, matmul_flops,
    model_flops, scaling_probe, table5_report, Stage,
};
use adat_core::models::{Mode, ModelConfig, Variant};
use proptest::prelude::*;

fn table5(variant: Variant, mode: Mode) -> ModelConfig {
    ModelConfig {
        variant,
        mode,
        ..ModelConfig::table5()
    }
}

#[test]
fn matmul_examples() {
    assert_eq!(matmul_flops(1, 1, 1).unwrap(), 2);
    assert_eq!(matmul_flops(2, 3, 4).unwrap(), 48);
    assert_eq!(matmul_flops(14, 3, 4).unwrap(), 2 * matmul_flops(7, 3, 4).unwrap());
    assert!(matmul_flops(0, 3, 4).is_err());
    assert!(matmul_flops(3, 0, 4).is_err());
}

#[test]
fn canonical_logits_term_at_371() {
    let r = encoder_flops(&table5(Variant::EncoderDecoder, Mode::S2T), 371).unwrap();
    let logits = r.components.iter().find(|c| c.name == "self-attention logits").unwrap();
    assert_eq!(logits.flops, 140_944_384);
    assert_eq!(logits.stage, Stage::Encoding);
}

#[test]
fn lssa_pair_bound_at_371() {
    let pairs = lssa_pair_total(371);
    assert!(pairs as f64 <= 371.0 * (371f64.log2() + 2.0));
    assert_eq!(pairs, lssa_pairs_closed_form(371));
}

#[test]
fn closed_form_matches_enumeration() {
    let mut running = 0u64;
    for len in 1..=4096usize {
        running += lssa_indices(len - 1, len).unwrap().attended.len() as u64;
        assert_eq!(lssa_pairs_closed_form(len), running, "len {len}");
    }
    assert_eq!(lssa_pairs_closed_form(0), 0);
}

#[test]
fn adat_encoder_is_cheaper_from_length_eight() {
    for mode in [Mode::S2T, Mode::S2G2T] {
        for len in (8..=600).step_by(7).chain([8, 9, 16, 371, 4096]) {
            let a = encoder_flops(&table5(Variant::Adat, mode), len).unwrap();
            let c = encoder_flops(&table5(Variant::EncoderDecoder, mode), len).unwrap();
            assert!(a.total() < c.total(), "len {len}");
        }
    }
}

#[test]
fn decoders_match_across_variants() {
    for (lm, lt) in [(27, 52), (371, 52), (1, 1)] {
        let a = decoder_flops(&table5(Variant::Adat, Mode::S2T), lm, lt).unwrap();
        let c = decoder_flops(&table5(Variant::EncoderDecoder, Mode::S2T), lm, lt).unwrap();
        assert_eq!(a.components, c.components);
        assert_eq!(a.total(), a.decoding());
    }
    assert!(decoder_flops(&table5(Variant::Adat, Mode::S2T), 0, 3).is_err());
    assert!(encoder_flops(&table5(Variant::EncoderOnly, Mode::S2T), 10).is_err());
    assert!(encoder_flops(&table5(Variant::Adat, Mode::S2T), 1).is_err());
}

#[test]
fn table5_report_orderings_and_lengths() {
    let t = table5_report(&ModelConfig::table5()).unwrap();
    assert!(t.ordering_holds());
    let lens: Vec<(usize, usize)> = t.columns.iter().map(|c| (c.memory_len, c.target_len)).collect();
    assert_eq!(lens, vec![(27, 52), (27, 52), (371, 52), (371, 52)]);
    let text = t.to_text();
    assert!(text.contains("Gloss: 27 Text: 52") && text.contains("Video: 371 Text: 52"));
    assert!(text.contains("2.08") && text.contains("2.28"));
    assert_eq!(t.to_csv().lines().count(), 5);
    for r in &t.ratios {
        assert!(r.measured > 0.0 && r.reference > 0.0);
    }
}

#[test]
fn model_flops_uses_gloss_memory_in_s2g2t() {
    let r = model_flops(&table5(Variant::Adat, Mode::S2G2T), 100, 9, 12).unwrap();
    assert_eq!((r.encoder_len, r.memory_len, r.target_len), (100, 9, 12));
    let r = model_flops(&table5(Variant::Adat, Mode::S2T), 100, 9, 12).unwrap();
    assert_eq!(r.memory_len, 100);
    assert_eq!(r.total(), r.encoding() + r.decoding());
    assert!(r.components.iter().any(|c| c.name == "gap") && r.components.iter().any(|c| c.name == "temporal conv"));
    assert!(r.to_csv().lines().count() > r.components.len());
}

#[test]
fn canonical_probe_is_quadratic() {
    assert_eq!(
        attended_pairs(Variant::EncoderDecoder, 200).unwrap() * 4,
        attended_pairs(Variant::EncoderDecoder, 400).unwrap()
    );
    let fit = scaling_probe(Variant::EncoderDecoder, &default_probe_lengths()).unwrap();
    assert!((1.95..=2.05).contains(&fit.exponent), "{}", fit.exponent);
    assert!(fit.residual < 1e-9);
}

#[test]
fn lssa_probe_is_sub_quadratic() {
    assert!((lssa_pair_total(1024) as f64) / (lssa_pair_total(512) as f64) < 2.4);
    let fit = scaling_probe(Variant::Adat, &default_probe_lengths()).unwrap();
    assert!(fit.step_ratios().iter().all(|&r| r < 2.4));
    let ratios = fit.log_squared_ratios();
    let (lo, hi) = ratios.iter().fold((f64::MAX, 0f64), |(a, b), &r| (a.min(r), b.max(r)));
    assert!(lo >= 1.0 / 16.0 && hi <= 1.0 && hi / lo <= 4.0, "{ratios:?}");
    assert!(fit.exponent < 1.5);
}

#[test]
fn probe_rejects_bad_lengths() {
    assert!(scaling_probe(Variant::Adat, &[64, 128, 256]).is_err());
    assert!(scaling_probe(Variant::Adat, &[64, 128, 128, 4096]).is_err());
    assert!(scaling_probe(Variant::Adat, &[64, 128, 256, 512]).is_err());
    assert!(scaling_probe(Variant::DecoderOnly, &default_probe_lengths()).is_err());
}

proptest! {
    #[test]
    fn decoder_grows_with_both_lengths(lm in 1usize..500, lt in 1usize..100) {
        let cfg = table5(Variant::Adat, Mode::S2T);
        let base = decoder_flops(&cfg, lm, lt).unwrap().total();
        prop_assert!(decoder_flops(&cfg, lm + 1, lt).unwrap().total() > base);
        prop_assert!(decoder_flops(&cfg, lm, lt + 1).unwrap().total() > base);
    }

    #[test]
    fn totals_are_component_sums(len in 2usize..800, variant in prop::sample::select(vec![Variant::Adat, Variant::EncoderDecoder])) {
        let r = model_flops(&table5(variant, Mode::S2G2T), len, 5, 7).unwrap();
        let sum: u64 = r.components.iter().map(|c| c.flops).sum();
        prop_assert_eq!(r.total(), sum);
        prop_assert_eq!(r.encoding() + r.decoding(), sum);
    }
}

