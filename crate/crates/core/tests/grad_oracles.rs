//! Finite-difference oracles: every tape primitive's vector-Jacobian
//! product, and the end-to-end sentence NLL gradient with respect to every
//! parameter coordinate (including raw embedding rows) and every input
//! embedding coordinate.

use advtag::adversarial::extract_input_gradient;
use advtag::autodiff::{grad_check, AutodiffError, Tape};
use advtag::data::{Corpus, Sentence, Token, Vocab};
use advtag::embeddings::{init_char_table, init_word_table};
use advtag::model::TaggerModel;
use advtag::network::{DropoutMasks, TaggerArchitecture};
use advtag::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
}

/// Checks one scalar-valued tape computation over a flattened input vector.
fn check<F>(name: &str, point: &[f64], build: F)
where
    F: Fn(&mut Tape, &[f64]) -> Result<(usize, Vec<usize>), AutodiffError>,
{
    let err = grad_check(
        |p| {
            let mut tape = Tape::new();
            let (root, leaves) = build(&mut tape, p)?;
            let grads = tape.backward(root)?;
            let mut flat = Vec::new();
            for leaf in leaves {
                flat.extend_from_slice(grads.leaf(leaf).data());
            }
            Ok((tape.value(root).item(), flat))
        },
        point,
        STEP,
    )
    .unwrap_or_else(|e| panic!("{}: {}", name, e));
    assert!(err < TOLERANCE, "{}: max relative error {}", name, err);
}

#[test]
fn primitive_vjps_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    // matmul, matrix x matrix: f = sum(tanh(A @ B))
    let point = random_vec(&mut rng, 3 * 4 + 4 * 2);
    check("matmul_mm", &point, |tape, p| {
        let a = tape.input(Tensor::matrix(3, 4, p[..12].to_vec()));
        let b = tape.input(Tensor::matrix(4, 2, p[12..].to_vec()));
        let prod = tape.matmul(a, b)?;
        let act = tape.tanh(prod);
        Ok((tape.sum(act), vec![a, b]))
    });

    // matmul, matrix x vector
    let point = random_vec(&mut rng, 3 * 4 + 4);
    check("matmul_mv", &point, |tape, p| {
        let a = tape.input(Tensor::matrix(3, 4, p[..12].to_vec()));
        let x = tape.input(Tensor::vector(p[12..].to_vec()));
        let prod = tape.matmul(a, x)?;
        let act = tape.sigmoid(prod);
        Ok((tape.sum(act), vec![a, x]))
    });

    // add, same shape and row broadcast
    let point = random_vec(&mut rng, 6 + 6);
    check("add_same", &point, |tape, p| {
        let a = tape.input(Tensor::vector(p[..6].to_vec()));
        let b = tape.input(Tensor::vector(p[6..].to_vec()));
        let s = tape.add(a, b)?;
        let act = tape.tanh(s);
        Ok((tape.sum(act), vec![a, b]))
    });
    let point = random_vec(&mut rng, 6 + 3);
    check("add_row_broadcast", &point, |tape, p| {
        let a = tape.input(Tensor::matrix(2, 3, p[..6].to_vec()));
        let b = tape.input(Tensor::vector(p[6..].to_vec()));
        let s = tape.add(a, b)?;
        let act = tape.tanh(s);
        Ok((tape.sum(act), vec![a, b]))
    });

    // sub and mul
    let point = random_vec(&mut rng, 10);
    check("sub_mul", &point, |tape, p| {
        let a = tape.input(Tensor::vector(p[..5].to_vec()));
        let b = tape.input(Tensor::vector(p[5..].to_vec()));
        let d = tape.sub(a, b)?;
        let m = tape.mul(d, a)?;
        Ok((tape.sum(m), vec![a, b]))
    });

    // scale
    let point = random_vec(&mut rng, 4);
    check("scale", &point, |tape, p| {
        let a = tape.input(Tensor::vector(p.to_vec()));
        let s = tape.scale(a, -2.5);
        let act = tape.tanh(s);
        Ok((tape.sum(act), vec![a]))
    });

    // concat and slice
    let point = random_vec(&mut rng, 7);
    check("concat_slice", &point, |tape, p| {
        let a = tape.input(Tensor::vector(p[..3].to_vec()));
        let b = tape.input(Tensor::vector(p[3..].to_vec()));
        let joined = tape.concat(&[a, b])?;
        let mid = tape.slice(joined, 1, 5)?;
        let act = tape.sigmoid(mid);
        Ok((tape.sum(act), vec![a, b]))
    });

    // reshape and transpose
    let point = random_vec(&mut rng, 6);
    check("reshape_transpose", &point, |tape, p| {
        let a = tape.input(Tensor::vector(p.to_vec()));
        let m = tape.reshape(a, vec![2, 3])?;
        let t = tape.transpose(m)?;
        let sq = tape.mul(t, t)?;
        Ok((tape.sum(sq), vec![a]))
    });

    // activations
    for name in ["sigmoid", "tanh", "softplus"] {
        let point = random_vec(&mut rng, 5);
        check(name, &point, move |tape, p| {
            let a = tape.input(Tensor::vector(p.to_vec()));
            let out = match name {
                "sigmoid" => tape.sigmoid(a),
                "tanh" => tape.tanh(a),
                _ => tape.softplus(a),
            };
            Ok((tape.sum(out), vec![a]))
        });
    }

    // logsumexp over each supported axis
    let point = random_vec(&mut rng, 5);
    check("logsumexp_vector", &point, |tape, p| {
        let a = tape.input(Tensor::vector(p.to_vec()));
        Ok((tape.logsumexp(a, 0)?, vec![a]))
    });
    for axis in [0usize, 1] {
        let point = random_vec(&mut rng, 12);
        check(&format!("logsumexp_axis{}", axis), &point, move |tape, p| {
            let a = tape.input(Tensor::matrix(3, 4, p.to_vec()));
            let reduced = tape.logsumexp(a, axis)?;
            Ok((tape.sum(reduced), vec![a]))
        });
    }

    // max over each supported axis (ties have measure zero in random data)
    let point = random_vec(&mut rng, 5);
    check("max_vector", &point, |tape, p| {
        let a = tape.input(Tensor::vector(p.to_vec()));
        Ok((tape.max_over_axis(a, 0)?, vec![a]))
    });
    for axis in [0usize, 1] {
        let point = random_vec(&mut rng, 12);
        check(&format!("max_axis{}", axis), &point, move |tape, p| {
            let a = tape.input(Tensor::matrix(3, 4, p.to_vec()));
            let reduced = tape.max_over_axis(a, axis)?;
            Ok((tape.sum(reduced), vec![a]))
        });
    }

    // dropout with a fixed mask
    let mask = Tensor::vector(vec![2.0, 0.0, 2.0, 0.0, 2.0]);
    let point = random_vec(&mut rng, 5);
    check("dropout", &point, move |tape, p| {
        let a = tape.input(Tensor::vector(p.to_vec()));
        let dropped = tape.dropout(a, &mask)?;
        let act = tape.tanh(dropped);
        Ok((tape.sum(act), vec![a]))
    });

    // gather_row
    let point = random_vec(&mut rng, 8);
    check("gather_row", &point, |tape, p| {
        let table = tape.input(Tensor::matrix(4, 2, p.to_vec()));
        let row = tape.gather_row(table, 2)?;
        let act = tape.sigmoid(row);
        Ok((tape.sum(act), vec![table]))
    });
}

fn fixture() -> (TaggerModel, Sentence) {
    let corpus = Corpus {
        sentences: vec![
            Sentence {
                tokens: vec![
                    Token { form: "ab".into(), tag: "X".into() },
                    Token { form: "ca".into(), tag: "Y".into() },
                    Token { form: "b".into(), tag: "X".into() },
                ],
            },
        ],
    };
    let vocab = Vocab::build(&corpus, 1).unwrap();
    let arch = TaggerArchitecture {
        word_dim: 4,
        char_dim: 3,
        char_hidden: 2,
        word_hidden: 3,
        tag_count: vocab.tag_count(),
        dropout: 0.5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let word_table = init_word_table(&vocab, arch.word_dim, &mut rng);
    let char_table = init_char_table(&vocab, arch.char_dim, false, &mut rng);
    let model = TaggerModel::new(arch, vocab, word_table, char_table, &mut rng).unwrap();
    let sentence = corpus.sentences[0].clone();
    (model, sentence)
}

/// End-to-end check on a 3-token, 2-tag instance: the NLL gradient with
/// respect to every trainable coordinate (network, CRF, raw embedding rows
/// with stats frozen) and every input-embedding coordinate matches central
/// finite differences.
#[test]
fn sentence_nll_gradient_matches_finite_differences() {
    let (model, sentence) = fixture();
    let stats = model.stats(); // frozen for the whole check
    let masks = DropoutMasks::ones(&model.arch, sentence.len());

    let param_len: usize = model.named_tensors().iter().map(|(_, t)| t.numel()).sum();
    let probe = model.forward_loss(&sentence, &masks, &stats, None).unwrap();
    let input_dim = probe.encode.input_dim;

    let mut point = Vec::with_capacity(param_len + input_dim);
    for (_, tensor) in model.named_tensors() {
        point.extend_from_slice(tensor.data());
    }
    point.extend(std::iter::repeat_n(0.0, input_dim));

    let err = grad_check(
        |p| {
            let mut candidate = model.clone();
            let mut offset = 0;
            for (_, tensor) in candidate.named_tensors_mut() {
                let n = tensor.numel();
                tensor.data_mut().copy_from_slice(&p[offset..offset + n]);
                offset += n;
            }
            let eta = &p[offset..];
            let fwd = candidate.forward_loss(&sentence, &masks, &stats, Some(eta)).unwrap();
            let grads = fwd.tape.backward(fwd.loss)?;
            let set = candidate.gradient_set(&grads, &fwd.binding, &[&fwd.encode], &stats);
            let mut flat = Vec::with_capacity(p.len());
            for tensor in &set.tensors {
                flat.extend_from_slice(tensor.data());
            }
            flat.extend(extract_input_gradient(&grads, &fwd.encode));
            Ok((fwd.loss_value(), flat))
        },
        &point,
        STEP,
    )
    .unwrap();
    assert!(err < TOLERANCE, "end-to-end gradient error {}", err);
}
