//! Property tests for the data-level invariants: scheme conversions
//! round-trip, serializers round-trip, perturbations keep their norm and
//! direction, clipping respects its bound, and the accuracy metrics obey
//! their dominance and partition laws.

use advtag::adversarial::{fgm_perturbation, ZERO_GRADIENT_NORM};
use advtag::autodiff::logsumexp_slice;
use advtag::data::{
    parse_conll_columns, parse_conllu, to_iob2, to_iobes, write_conll_columns, write_conllu,
    Corpus, Sentence, Token, Vocab,
};
use advtag::eval::{frequency_buckets, sentence_accuracy, token_accuracy};
use advtag::model::GradientSet;
use advtag::trainer::clip_gradients;
use advtag::Tensor;
use proptest::prelude::*;

/// One sentence's chunk structure: `None` is an outside token, `Some(n)`
/// opens a chunk of length n.
fn span_structure() -> impl Strategy<Value = Vec<(String, usize)>> {
    let segment = prop_oneof![
        Just(("O".to_string(), 1usize)),
        ("[A-C]{1,2}".prop_map(|t| t), 1usize..4).prop_map(|(t, n)| (t, n)),
    ];
    proptest::collection::vec(segment, 1..8)
}

fn render_iobes(segments: &[(String, usize)]) -> Vec<String> {
    let mut tags = Vec::new();
    for (ty, len) in segments {
        if ty == "O" {
            tags.push("O".to_string());
        } else if *len == 1 {
            tags.push(format!("S-{}", ty));
        } else {
            tags.push(format!("B-{}", ty));
            for _ in 1..len - 1 {
                tags.push(format!("I-{}", ty));
            }
            tags.push(format!("E-{}", ty));
        }
    }
    tags
}

fn small_corpus() -> impl Strategy<Value = Corpus> {
    let token = ("[a-z]{1,6}", "[A-Z]{1,3}")
        .prop_map(|(form, tag)| Token { form, tag });
    let sentence = proptest::collection::vec(token, 1..6).prop_map(|tokens| Sentence { tokens });
    proptest::collection::vec(sentence, 1..5).prop_map(|sentences| Corpus { sentences })
}

/// A prediction corpus aligned with `gold`: same forms, tags flipped at the
/// given positions.
fn flip_tags(gold: &Corpus, flips: &[bool]) -> Corpus {
    let mut out = gold.clone();
    let mut cursor = 0;
    for sentence in &mut out.sentences {
        for token in &mut sentence.tokens {
            if flips.get(cursor).copied().unwrap_or(false) {
                token.tag = format!("{}_WRONG", token.tag);
            }
            cursor += 1;
        }
    }
    out
}

proptest! {
    #[test]
    fn iobes_round_trip_is_identity(segments in span_structure()) {
        let iobes = render_iobes(&segments);
        let iob2 = to_iob2(&iobes).unwrap();
        prop_assert_eq!(to_iobes(&iob2).unwrap(), iobes);
    }

    #[test]
    fn iobes_output_is_always_consistent(segments in span_structure()) {
        // no I-/E- without a preceding B-/I- of the same type
        let iobes = render_iobes(&segments);
        let mut open: Option<String> = None;
        for tag in &iobes {
            match tag.split_once('-') {
                Some(("B", ty)) => open = Some(ty.to_string()),
                Some(("I", ty)) | Some(("E", ty)) => {
                    prop_assert_eq!(open.as_deref(), Some(ty));
                    if tag.starts_with('E') {
                        open = None;
                    }
                }
                _ => open = None,
            }
        }
    }

    #[test]
    fn corpus_serializers_round_trip(corpus in small_corpus()) {
        let conllu = write_conllu(&corpus);
        prop_assert_eq!(parse_conllu(&conllu, "mem").unwrap(), corpus.clone());
        let columns = write_conll_columns(&corpus, 0, 2);
        prop_assert_eq!(parse_conll_columns(&columns, "mem", 0, 2).unwrap(), corpus);
    }

    #[test]
    fn logsumexp_shift_invariance(
        xs in proptest::collection::vec(-50.0f64..50.0, 1..10),
        shift in -100.0f64..100.0,
    ) {
        let shifted: Vec<f64> = xs.iter().map(|x| x - shift).collect();
        let lhs = logsumexp_slice(&xs);
        let rhs = logsumexp_slice(&shifted) + shift;
        prop_assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn fgm_keeps_norm_and_direction(
        g in proptest::collection::vec(-3.0f64..3.0, 1..40),
        alpha in 0.0001f64..0.5,
    ) {
        let dim = g.len();
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(gnorm >= ZERO_GRADIENT_NORM);
        let p = fgm_perturbation(&g, alpha, dim);
        let enorm = p.eta.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((enorm - alpha * (dim as f64).sqrt()).abs() < 1e-9);
        let dot: f64 = p.eta.iter().zip(&g).map(|(a, b)| a * b).sum();
        prop_assert!((dot / (enorm * gnorm) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn clipped_norm_never_exceeds_threshold(
        values in proptest::collection::vec(-30.0f64..30.0, 1..20),
        threshold in 0.5f64..10.0,
    ) {
        let mut grads = GradientSet { tensors: vec![Tensor::vector(values)] };
        clip_gradients(&mut grads, threshold);
        prop_assert!(grads.global_norm() <= threshold + 1e-12);
    }

    #[test]
    fn sentence_accuracy_dominated_per_sentence(
        corpus in small_corpus(),
        flips in proptest::collection::vec(any::<bool>(), 0..30),
    ) {
        // a perfect sentence has per-sentence token accuracy 1, so sentence
        // accuracy never exceeds the mean per-sentence token accuracy
        let predicted = flip_tags(&corpus, &flips);
        let sentence = sentence_accuracy(&corpus, &predicted).unwrap();
        let mut macro_token = 0.0;
        for (g, p) in corpus.sentences.iter().zip(&predicted.sentences) {
            let correct =
                g.tokens.iter().zip(&p.tokens).filter(|(a, b)| a.tag == b.tag).count();
            macro_token += correct as f64 / g.len() as f64;
        }
        macro_token /= corpus.len() as f64;
        prop_assert!(sentence <= macro_token + 1e-12);
        // on uniform-length corpora the micro average coincides with the macro
        if corpus.sentences.iter().all(|s| s.len() == corpus.sentences[0].len()) {
            let token = token_accuracy(&corpus, &predicted).unwrap();
            prop_assert!(sentence <= token + 1e-12);
        }
    }

    #[test]
    fn buckets_partition_every_token(
        corpus in small_corpus(),
        flips in proptest::collection::vec(any::<bool>(), 0..30),
    ) {
        let vocab = Vocab::build(&corpus, 1).unwrap();
        let predicted = flip_tags(&corpus, &flips);
        let report = frequency_buckets(&vocab, &corpus, &predicted).unwrap();
        prop_assert_eq!(report.counts.iter().sum::<usize>(), corpus.token_count());
        prop_assert_eq!(report.total, corpus.token_count());
    }
}
