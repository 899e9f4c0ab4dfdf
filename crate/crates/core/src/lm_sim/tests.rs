use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::textcore::{contains_run, max_token_overlap, TokenSeq};
use crate::watermark::score_text;

fn lm(seed: u64) -> ToyLm {
    ToyLm::new(LmParams::new(seed), Vocabulary::default()).unwrap()
}

fn random_seq(len: usize, vocab: Vocabulary, seed: u64) -> TokenSeq {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(0..vocab.size())).collect()
}

/// A fluent-ish document: free generation from the toy LM.
fn lm_doc(model: &ToyLm, len: usize, seed: u64) -> TokenSeq {
    generate::<TokenSeq>(
        &[],
        &[],
        len,
        model,
        &CopyModel::none(),
        None,
        &DecodeConstraint::default(),
        seed,
    )
    .unwrap()
}

fn green_ratio(seq: &[Token], wm: &WatermarkParams) -> f64 {
    score_text(seq, wm, Vocabulary::default(), None).green_ratio().unwrap()
}

// Mean green ratio of 100 paraphrased 600-token documents at the default
// scheme and fidelity 0.85, measured once and frozen.
const PARAPHRASE_GREEN_RATIO: f64 = 0.6700501672240804;

#[test]
fn base_logits_are_deterministic_and_full_width() {
    let m = lm(7);
    let a = m.base_logits(&[1, 2, 3]);
    assert_eq!(a, m.base_logits(&[1, 2, 3]));
    assert_eq!(a.len(), 32_768);
    // Only the trailing window matters.
    assert_eq!(a, m.base_logits(&[99, 1, 2, 3]));
    assert_ne!(a, m.base_logits(&[1, 2, 4]));
}

#[test]
fn model_seeds_give_distinct_logits() {
    let reference = lm(0).base_logits(&[5, 6]);
    for seed in 1..=100 {
        assert_ne!(lm(seed).base_logits(&[5, 6]), reference, "seed {seed}");
    }
}

#[test]
fn log_prob_matches_softmax_of_base_logits() {
    let m = lm(3);
    let ctx = [10, 20, 30];
    let logits = m.base_logits(&ctx);
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    for t in m.preferences(&ctx).into_iter().chain([0, 1, 32_767]) {
        let want = logits[t as usize] - z.ln();
        assert!((m.log_prob(&ctx, t) - want).abs() < 1e-9);
    }
}

#[test]
fn sampler_matches_exact_distribution() {
    // Small vocabulary so the empirical histogram can be compared with the
    // exact biased softmax.
    let vocab = Vocabulary::new(16).unwrap();
    let params = LmParams {
        preferred: 3,
        ..LmParams::new(11)
    };
    let m = ToyLm::new(params, vocab).unwrap();
    let wm = WatermarkParams::new(0.25, 2.0, 2, 5);
    let ctx: [Token; 3] = [1, 2, 3];
    let forbidden = [4, 9];
    let bias = StepBias {
        watermark: Some((&wm, &ctx[1..])),
        anchor: Some((7, 5.0)),
        forbidden: &forbidden,
    };

    let mut logits = m.base_logits(&ctx);
    logits[7] = (logits[7].exp() + 5.0).ln();
    let green = crate::watermark::green_mask(&ctx[1..], &wm, vocab).unwrap();
    for g in green {
        logits[g as usize] += wm.delta;
    }
    for f in forbidden {
        logits[f as usize] = f64::NEG_INFINITY;
    }
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    let want: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();

    let n = 200_000;
    let mut counts = [0usize; 16];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..n {
        counts[m.sample(&ctx, bias, &mut rng) as usize] += 1;
    }
    for (t, &c) in counts.iter().enumerate() {
        let p = want[t];
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!(
            ((c as f64 / n as f64) - p).abs() <= 5.0 * se + 1e-9,
            "token {t}: {c} vs p={p}"
        );
    }
    assert_eq!(counts[4] + counts[9], 0);
}

#[test]
fn exhaustive_fallback_returns_argmax_when_everything_is_masked() {
    let vocab = Vocabulary::new(8).unwrap();
    let m = ToyLm::new(LmParams::new(2), vocab).unwrap();
    let all: Vec<Token> = (0..8).collect();
    let bias = StepBias {
        forbidden: &all,
        ..StepBias::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(m.sample(&[1], bias, &mut rng), m.greedy(&[1]));
}

#[test]
fn invalid_parameters_are_rejected() {
    assert!(LmParams {
        temperature: 0.0,
        ..LmParams::new(0)
    }
    .validate()
    .is_err());
    assert!(CopyModel {
        copy_rate: 1.5,
        ..CopyModel::naive()
    }
    .validate()
    .is_err());
    assert!(DecodeConstraint::memfree(1).validate().is_err());
    assert!(DecodeConstraint::memfree(2).validate().is_ok());
    let m = lm(0);
    assert!(generate::<TokenSeq>(
        &[],
        &[],
        0,
        &m,
        &CopyModel::none(),
        None,
        &DecodeConstraint::default(),
        0
    )
    .is_err());
}

#[test]
fn profiles_have_expected_constants() {
    assert_eq!(
        Profile::Naive.copy_model(),
        CopyModel {
            copy_rate: 0.35,
            mean_span: 12.0,
            source_bias: 0.8
        }
    );
    assert_eq!(
        Profile::Def.copy_model(),
        CopyModel {
            copy_rate: 0.15,
            mean_span: 5.0,
            source_bias: 0.8
        }
    );
    assert_eq!("def".parse::<Profile>().unwrap(), Profile::Def);
    assert_eq!(serde_json::to_string(&Profile::Naive).unwrap(), "\"NAIVE\"");
}

#[test]
fn generation_without_copying_ignores_the_copy_profile() {
    let m = lm(1);
    let prompt = [3, 4, 5];
    let c = DecodeConstraint::default();
    let a = generate::<TokenSeq>(
        &prompt,
        &[],
        50,
        &m,
        &CopyModel {
            copy_rate: 0.0,
            ..CopyModel::naive()
        },
        None,
        &c,
        9,
    )
    .unwrap();
    let b = generate::<TokenSeq>(&prompt, &[], 50, &m, &CopyModel::def(), None, &c, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 50);
    // Retrieved context is unused when nothing is copied.
    let doc = random_seq(300, m.vocab(), 4);
    let d = generate(&prompt, &[doc], 50, &m, &CopyModel::none(), None, &c, 9).unwrap();
    assert_eq!(a, d);
}

#[test]
fn forced_copy_emits_a_contiguous_substring() {
    let m = lm(1);
    let c = DecodeConstraint::default();
    for seed in 0..20 {
        let mut doc = random_seq(500, m.vocab(), seed);
        // A unique anchor token at the head of the document.
        let anchor = 32_767;
        doc.retain(|&t| t != anchor);
        doc.insert(0, anchor);
        let copy = CopyModel {
            copy_rate: 1.0,
            mean_span: 100.0,
            source_bias: 1.0,
        };
        let out = generate(&[anchor], &[doc.clone()], 100, &m, &copy, None, &c, seed).unwrap();
        assert_eq!(out, doc[1..101]);
        assert!(contains_run(&doc, &out));
    }
}

#[test]
fn generation_is_reproducible() {
    let m = lm(5);
    let docs = vec![random_seq(400, m.vocab(), 1), random_seq(400, m.vocab(), 2)];
    let wm = WatermarkParams::with_salt(3);
    let c = DecodeConstraint::memfree(10);
    let a = generate(&[1, 2], &docs, 200, &m, &CopyModel::naive(), Some(&wm), &c, 77).unwrap();
    assert_eq!(
        a,
        generate(&[1, 2], &docs, 200, &m, &CopyModel::naive(), Some(&wm), &c, 77).unwrap()
    );
    assert_ne!(
        a,
        generate(&[1, 2], &docs, 200, &m, &CopyModel::naive(), Some(&wm), &c, 78).unwrap()
    );
}

#[test]
fn memfree_caps_overlap_below_the_blocked_width() {
    let m = lm(2);
    let aggressive = CopyModel {
        copy_rate: 0.9,
        mean_span: 40.0,
        source_bias: 0.5,
    };
    for trial in 0..200u64 {
        let docs: Vec<TokenSeq> = (0..3).map(|i| lm_doc(&m, 300, trial * 10 + i)).collect();
        let prompt = docs[0][..12].to_vec();
        let out = generate(
            &prompt,
            &docs,
            400,
            &m,
            &aggressive,
            None,
            &DecodeConstraint::memfree(10),
            trial,
        )
        .unwrap();
        for d in &docs {
            assert!(max_token_overlap(&out, d) <= 9, "trial {trial}");
        }
    }
}

#[test]
fn unconstrained_copying_exceeds_the_memfree_cap() {
    let m = lm(2);
    let docs = vec![lm_doc(&m, 300, 1)];
    let out = generate(
        &docs[0][..12],
        &docs,
        400,
        &m,
        &CopyModel::naive(),
        None,
        &DecodeConstraint::default(),
        3,
    )
    .unwrap();
    assert!(max_token_overlap(&out, &docs[0]) >= 10);
}

#[test]
fn def_profile_copies_less_than_naive() {
    let m = lm(4);
    let c = DecodeConstraint::default();
    let (mut naive, mut def) = (0usize, 0usize);
    for trial in 0..200u64 {
        let doc = lm_doc(&m, 600, trial);
        let prompt = doc[100..112].to_vec();
        let docs = [doc];
        naive += max_token_overlap(
            &generate(&prompt, &docs, 400, &m, &CopyModel::naive(), None, &c, trial).unwrap(),
            &docs[0],
        );
        def += max_token_overlap(
            &generate(&prompt, &docs, 400, &m, &CopyModel::def(), None, &c, trial).unwrap(),
            &docs[0],
        );
    }
    assert!(def < naive, "DEF {def} vs NAIVE {naive}");
}

#[test]
fn paraphrase_preserves_length_and_rejects_short_docs() {
    let m = lm(6);
    let wm = WatermarkParams::with_salt(1);
    let doc = lm_doc(&m, 100, 0);
    assert_eq!(watermark_paraphrase(&doc, &m, &wm, 0.85, 0).unwrap().len(), 100);
    assert!(watermark_paraphrase(&doc[..2], &m, &wm, 0.85, 0).is_err());
    assert!(watermark_paraphrase(&doc, &m, &wm, 1.5, 0).is_err());
    assert!(watermark_paraphrase_locked(&doc, &m, &wm, 0.85, &[true; 3], 0).is_err());
}

#[test]
fn full_fidelity_without_bias_reproduces_the_document() {
    let m = lm(6);
    let wm = WatermarkParams::new(0.25, 0.0, 2, 1);
    let (mut same, mut total) = (0usize, 0usize);
    for trial in 0..100 {
        let doc = lm_doc(&m, 200, trial);
        let out = watermark_paraphrase(&doc, &m, &wm, 1.0, trial).unwrap();
        same += doc.iter().zip(&out).filter(|(a, b)| a == b).count();
        total += doc.len();
    }
    assert!(same as f64 / total as f64 >= 0.95);
}

#[test]
fn fidelity_lower_bounds_agreement_without_bias() {
    let m = lm(6);
    let wm = WatermarkParams::new(0.25, 0.0, 2, 1);
    let (mut same, mut total) = (0usize, 0usize);
    for trial in 0..50 {
        let doc = lm_doc(&m, 200, trial);
        let out = watermark_paraphrase(&doc, &m, &wm, 0.85, trial).unwrap();
        same += doc.iter().zip(&out).filter(|(a, b)| a == b).count();
        total += doc.len();
    }
    assert!(same as f64 / total as f64 >= 0.85 - 0.01);
}

#[test]
fn locked_positions_are_copied_verbatim() {
    let m = lm(6);
    let wm = WatermarkParams::with_salt(9);
    let doc = lm_doc(&m, 120, 3);
    let lock: Vec<bool> = (0..doc.len()).map(|i| (40..60).contains(&i)).collect();
    let out = watermark_paraphrase_locked(&doc, &m, &wm, 0.5, &lock, 1).unwrap();
    assert_eq!(out[40..60], doc[40..60]);
    assert_ne!(out, doc);
}

#[test]
fn paraphrase_green_ratio_meets_calibration() {
    let m = lm(6);
    let wm = WatermarkParams::with_salt(0x5eed);
    let mut sum = 0.0;
    for trial in 0..100 {
        let doc = lm_doc(&m, 600, 1000 + trial);
        sum += green_ratio(&watermark_paraphrase(&doc, &m, &wm, 0.85, trial).unwrap(), &wm);
    }
    let mean = sum / 100.0;
    println!("paraphrase green ratio {mean}");
    assert!(mean >= 0.40);
    assert!((mean - PARAPHRASE_GREEN_RATIO).abs() < 1e-12);
}

#[test]
fn unbiased_paraphrase_has_null_green_ratio() {
    let m = lm(6);
    let wm = WatermarkParams::new(0.25, 0.0, 2, 0x5eed);
    let mut ratios = Vec::new();
    for trial in 0..50 {
        let doc = lm_doc(&m, 600, trial);
        ratios.push(green_ratio(
            &watermark_paraphrase(&doc, &m, &wm, 0.85, trial).unwrap(),
            &wm,
        ));
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (ratios.len() - 1) as f64;
    let se = (var / ratios.len() as f64).sqrt();
    assert!((mean - 0.25).abs() <= 3.0 * se.max(0.25 * 0.75 / (600.0 * 50.0f64).sqrt()));
}

#[test]
fn copying_a_watermarked_document_propagates_a_diluted_signal() {
    let m = lm(8);
    let owner = lm(6);
    let wm = WatermarkParams::with_salt(0xabc);
    let c = DecodeConstraint::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut doc_ratio, mut resp_ratio) = (0.0, 0.0);
    for trial in 0..200u64 {
        let wdoc = watermark_paraphrase(&lm_doc(&owner, 600, trial), &owner, &wm, 0.85, trial).unwrap();
        let filler: Vec<TokenSeq> = (0..2).map(|i| lm_doc(&m, 600, 10_000 + trial * 2 + i)).collect();
        let prompt: TokenSeq = (0..12).map(|_| wdoc[rng.random_range(0..wdoc.len())]).collect();
        let retrieved = [wdoc.clone(), filler[0].clone(), filler[1].clone()];
        let resp = generate(&prompt, &retrieved, 400, &m, &CopyModel::naive(), None, &c, trial).unwrap();
        doc_ratio += green_ratio(&wdoc, &wm);
        resp_ratio += green_ratio(&resp, &wm);
    }
    let (doc_ratio, resp_ratio) = (doc_ratio / 200.0, resp_ratio / 200.0);
    println!("doc {doc_ratio} response {resp_ratio}");
    assert!(doc_ratio >= 0.40);
    assert!(resp_ratio > 0.25 + 0.01 && resp_ratio < doc_ratio);
}

#[test]
fn uniform_model_has_vocabulary_perplexity() {
    let m = ToyLm::new(LmParams::uniform(0), Vocabulary::default()).unwrap();
    let seq = random_seq(50, m.vocab(), 1);
    assert!((perplexity(&seq, &m).unwrap() - 32_768.0).abs() < 1e-6);
    assert!(perplexity(&seq[..1], &m).is_err());
}

#[test]
fn greedy_text_is_less_perplexing_than_noise() {
    let m = lm(12);
    for trial in 0..100 {
        let mut greedy = vec![trial as Token];
        for _ in 0..40 {
            greedy.push(m.greedy(&greedy));
        }
        let noise = random_seq(greedy.len(), m.vocab(), trial);
        assert!(perplexity(&greedy, &m).unwrap() < perplexity(&noise, &m).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn perplexity_is_at_least_one(seq in proptest::collection::vec(0u32..32_768, 2..40), seed in 0u64..50) {
        let p = perplexity(&seq, &lm(seed)).unwrap();
        prop_assert!(p >= 1.0 && p.is_finite());
    }

    #[test]
    fn memfree_blocks_every_ngram(n in 2usize..6, seed in 0u64..1000) {
        let vocab = Vocabulary::new(64).unwrap();
        let m = ToyLm::new(LmParams::new(seed), vocab).unwrap();
        let docs: Vec<TokenSeq> = (0..2).map(|i| random_seq(40, vocab, seed * 3 + i)).collect();
        let copy = CopyModel { copy_rate: 0.8, mean_span: 10.0, source_bias: 0.5 };
        let out = generate(&docs[0][..4], &docs, 60, &m, &copy, None, &DecodeConstraint::memfree(n), seed).unwrap();
        for d in &docs {
            prop_assert!(max_token_overlap(&out, d) < n);
        }
    }
}
