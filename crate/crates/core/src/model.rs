//! The assembled tagger: encoder, CRF, embedding tables and vocabulary,
//! plus per-sentence loss construction, Viterbi decoding, and a versioned
//! JSON checkpoint format (text, so endianness never enters the picture).

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Gradients, NodeId, Tape};
use crate::crf::{self, CrfError, CrfNodes, CrfParams};
use crate::data::{Corpus, DataError, Sentence, Vocab};
use crate::embeddings::{
    accumulate_row_gradient, compute_stats, EmbedError, EmbeddingTable, NormalizationStats,
};
use crate::network::{
    encode_sentence, DropoutMasks, EmbeddingBundle, EncodeOutput, EncoderNodes, EncoderParams,
    NetworkError, TaggerArchitecture,
};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

/// Names of all trainable tensors, in the canonical order used by
/// [`TaggerModel::named_tensors`] and [`GradientSet`]. The two embedding
/// tables come last.
pub const PARAM_NAMES: [&str; 19] = [
    "char_fwd.w_input",
    "char_fwd.w_hidden",
    "char_fwd.bias",
    "char_bwd.w_input",
    "char_bwd.w_hidden",
    "char_bwd.bias",
    "word_fwd.w_input",
    "word_fwd.w_hidden",
    "word_fwd.bias",
    "word_bwd.w_input",
    "word_bwd.w_hidden",
    "word_bwd.bias",
    "proj.weight",
    "proj.bias",
    "crf.transitions",
    "crf.start",
    "crf.stop",
    "word_embeddings",
    "char_embeddings",
];

/// Fresh normalization stats for both tables.
pub struct ModelStats {
    pub word: NormalizationStats,
    pub char: NormalizationStats,
}

/// Tape leaves for one binding of the model parameters.
pub struct ModelBinding {
    pub encoder: EncoderNodes,
    pub crf: CrfNodes,
}

impl ModelBinding {
    /// Parameter leaf nodes in canonical order (embedding tables are not
    /// tape leaves; their gradients arrive through the input leaves).
    fn nodes(&self) -> [NodeId; 17] {
        let e = &self.encoder;
        [
            e.char_fwd.w_input,
            e.char_fwd.w_hidden,
            e.char_fwd.bias,
            e.char_bwd.w_input,
            e.char_bwd.w_hidden,
            e.char_bwd.bias,
            e.word_fwd.w_input,
            e.word_fwd.w_hidden,
            e.word_fwd.bias,
            e.word_bwd.w_input,
            e.word_bwd.w_hidden,
            e.word_bwd.bias,
            e.proj_weight,
            e.proj_bias,
            self.crf.transitions,
            self.crf.start,
            self.crf.stop,
        ]
    }
}

/// Gradients for every trainable tensor, aligned with [`PARAM_NAMES`].
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub tensors: Vec<Tensor>,
}

impl GradientSet {
    pub fn zeros_like(model: &TaggerModel) -> Self {
        GradientSet {
            tensors: model
                .named_tensors()
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        assert_eq!(self.tensors.len(), other.tensors.len());
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    /// Global L2 norm across every tensor.
    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for t in &mut self.tensors {
            t.scale_assign(c);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

/// A sentence's forward pass: the tape, the parameter binding, the encoded
/// leaves and the scalar loss node. The tape can keep growing (the
/// adversarial pass appends a second forward pass to it).
pub struct ForwardPass {
    pub tape: Tape,
    pub binding: ModelBinding,
    pub encode: EncodeOutput,
    pub loss: NodeId,
}

impl ForwardPass {
    pub fn loss_value(&self) -> f64 {
        self.tape.value(self.loss).item()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaggerModel {
    pub arch: TaggerArchitecture,
    pub vocab: Vocab,
    pub encoder: EncoderParams,
    pub crf: CrfParams,
    pub word_table: EmbeddingTable,
    pub char_table: EmbeddingTable,
}

impl TaggerModel {
    /// Assembles a model from a vocabulary and pre-built embedding tables;
    /// encoder and CRF parameters are randomly initialized from `rng`.
    pub fn new(
        arch: TaggerArchitecture,
        vocab: Vocab,
        word_table: EmbeddingTable,
        char_table: EmbeddingTable,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        let encoder = EncoderParams::random(&arch, rng);
        let k = arch.tag_count;
        let uniform = |rng: &mut dyn rand::RngCore, n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-0.1..0.1)).collect()
        };
        let crf = CrfParams {
            transitions: Tensor::matrix(k, k, uniform(rng, k * k)),
            start: Tensor::vector(uniform(rng, k)),
            stop: Tensor::vector(uniform(rng, k)),
        };
        let model = TaggerModel { arch, vocab, encoder, crf, word_table, char_table };
        model.validate()?;
        Ok(model)
    }

    /// Shape and vocabulary consistency check; used after deserialization.
    pub fn validate(&self) -> Result<(), ModelError> {
        let a = &self.arch;
        let checks = [
            (self.vocab.tag_count() == a.tag_count, "tag count"),
            (self.word_table.rows() == self.vocab.word_count(), "word table rows"),
            (self.word_table.dim() == a.word_dim, "word table dim"),
            (self.char_table.rows() == self.vocab.char_count(), "char table rows"),
            (self.char_table.dim() == a.char_dim, "char table dim"),
            (
                self.encoder.word_fwd.w_input.shape()
                    == [4 * a.word_hidden, a.token_input_dim()],
                "word lstm input weights",
            ),
            (
                self.encoder.char_fwd.w_input.shape() == [4 * a.char_hidden, a.char_dim],
                "char lstm input weights",
            ),
            (
                self.encoder.proj_weight.shape() == [a.tag_count, 2 * a.word_hidden],
                "projection",
            ),
            (self.crf.tag_count() == a.tag_count, "crf tag count"),
        ];
        for (ok, what) in checks {
            if !ok {
                return Err(ModelError::Checkpoint(format!(
                    "{} inconsistent with architecture",
                    what
                )));
            }
        }
        for (name, tensor) in self.named_tensors() {
            if !tensor.all_finite() {
                return Err(ModelError::Checkpoint(format!("{} contains non-finite values", name)));
            }
        }
        Ok(())
    }

    /// Trainable tensors in canonical order, embedding tables last.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let e = &self.encoder;
        let tensors = [
            &e.char_fwd.w_input,
            &e.char_fwd.w_hidden,
            &e.char_fwd.bias,
            &e.char_bwd.w_input,
            &e.char_bwd.w_hidden,
            &e.char_bwd.bias,
            &e.word_fwd.w_input,
            &e.word_fwd.w_hidden,
            &e.word_fwd.bias,
            &e.word_bwd.w_input,
            &e.word_bwd.w_hidden,
            &e.word_bwd.bias,
            &e.proj_weight,
            &e.proj_bias,
            &self.crf.transitions,
            &self.crf.start,
            &self.crf.stop,
            self.word_table.matrix(),
            self.char_table.matrix(),
        ];
        PARAM_NAMES.iter().copied().zip(tensors).collect()
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let e = &mut self.encoder;
        let tensors: [&mut Tensor; 19] = [
            &mut e.char_fwd.w_input,
            &mut e.char_fwd.w_hidden,
            &mut e.char_fwd.bias,
            &mut e.char_bwd.w_input,
            &mut e.char_bwd.w_hidden,
            &mut e.char_bwd.bias,
            &mut e.word_fwd.w_input,
            &mut e.word_fwd.w_hidden,
            &mut e.word_fwd.bias,
            &mut e.word_bwd.w_input,
            &mut e.word_bwd.w_hidden,
            &mut e.word_bwd.bias,
            &mut e.proj_weight,
            &mut e.proj_bias,
            &mut self.crf.transitions,
            &mut self.crf.start,
            &mut self.crf.stop,
            self.word_table.matrix_mut(),
            self.char_table.matrix_mut(),
        ];
        PARAM_NAMES.iter().copied().zip(tensors).collect()
    }

    /// Recomputes normalization stats from the current tables.
    pub fn stats(&self) -> ModelStats {
        ModelStats { word: compute_stats(&self.word_table), char: compute_stats(&self.char_table) }
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelBinding {
        ModelBinding { encoder: self.encoder.bind(tape), crf: self.crf.bind(tape) }
    }

    pub fn tag_ids(&self, sentence: &Sentence) -> Result<Vec<usize>, ModelError> {
        sentence
            .tags()
            .map(|t| self.vocab.tag_id(t).map_err(ModelError::from))
            .collect()
    }

    /// Builds the NLL of one sentence on a fresh tape.
    pub fn forward_loss(
        &self,
        sentence: &Sentence,
        masks: &DropoutMasks,
        stats: &ModelStats,
        perturbation: Option<&[f64]>,
    ) -> Result<ForwardPass, ModelError> {
        let mut tape = Tape::new();
        let binding = self.bind(&mut tape);
        let (encode, loss) =
            self.forward_loss_on(&mut tape, &binding, sentence, masks, stats, perturbation)?;
        Ok(ForwardPass { tape, binding, encode, loss })
    }

    /// Appends a forward pass to an existing tape, reusing its parameter
    /// leaves. This is how the adversarial pass shares one tape with the
    /// clean pass.
    pub fn forward_loss_on(
        &self,
        tape: &mut Tape,
        binding: &ModelBinding,
        sentence: &Sentence,
        masks: &DropoutMasks,
        stats: &ModelStats,
        perturbation: Option<&[f64]>,
    ) -> Result<(EncodeOutput, NodeId), ModelError> {
        let tags = self.tag_ids(sentence)?;
        let bundle = EmbeddingBundle {
            word_table: &self.word_table,
            word_stats: &stats.word,
            char_table: &self.char_table,
            char_stats: &stats.char,
        };
        let encode = encode_sentence(
            tape,
            sentence,
            &self.vocab,
            &bundle,
            &binding.encoder,
            &self.arch,
            masks,
            perturbation,
        )?;
        let loss = crf::nll(tape, encode.emissions, &binding.crf, &tags)?;
        Ok((encode, loss))
    }

    /// Collects a full [`GradientSet`] from a backward sweep: network and
    /// CRF gradients come straight off their leaves; embedding-table
    /// gradients are chained through the normalization from every input
    /// leaf of every listed encode output.
    pub fn gradient_set(
        &self,
        grads: &Gradients,
        binding: &ModelBinding,
        encodes: &[&EncodeOutput],
        stats: &ModelStats,
    ) -> GradientSet {
        let mut out = GradientSet::zeros_like(self);
        for (slot, node) in binding.nodes().iter().enumerate() {
            out.tensors[slot] = grads.leaf(*node).clone();
        }
        let word_slot = PARAM_NAMES.len() - 2;
        let char_slot = PARAM_NAMES.len() - 1;
        for encode in encodes {
            for leaf in &encode.word_leaves {
                if self.word_table.trainable {
                    if let Some(g) = grads.get(leaf.node) {
                        accumulate_row_gradient(
                            &stats.word,
                            leaf.row,
                            g.data(),
                            &mut out.tensors[word_slot],
                        );
                    }
                }
            }
            for leaf in &encode.char_leaves {
                if self.char_table.trainable {
                    if let Some(g) = grads.get(leaf.node) {
                        accumulate_row_gradient(
                            &stats.char,
                            leaf.row,
                            g.data(),
                            &mut out.tensors[char_slot],
                        );
                    }
                }
            }
        }
        out
    }

    /// Loss and gradients of one sentence (the baseline training path).
    pub fn sentence_loss(
        &self,
        sentence: &Sentence,
        masks: &DropoutMasks,
        stats: &ModelStats,
    ) -> Result<(f64, GradientSet), ModelError> {
        let fwd = self.forward_loss(sentence, masks, stats, None)?;
        let grads = fwd.tape.backward(fwd.loss)?;
        let set = self.gradient_set(&grads, &fwd.binding, &[&fwd.encode], stats);
        Ok((fwd.loss_value(), set))
    }

    /// Evaluation-mode NLL (no dropout).
    pub fn sentence_nll(&self, sentence: &Sentence, stats: &ModelStats) -> Result<f64, ModelError> {
        let masks = DropoutMasks::ones(&self.arch, sentence.len());
        let fwd = self.forward_loss(sentence, &masks, stats, None)?;
        Ok(fwd.loss_value())
    }

    /// Viterbi tag ids for one sentence (no dropout).
    pub fn decode(&self, sentence: &Sentence, stats: &ModelStats) -> Result<Vec<usize>, ModelError> {
        let mut tape = Tape::new();
        let binding = self.bind(&mut tape);
        let masks = DropoutMasks::ones(&self.arch, sentence.len());
        let bundle = EmbeddingBundle {
            word_table: &self.word_table,
            word_stats: &stats.word,
            char_table: &self.char_table,
            char_stats: &stats.char,
        };
        let encode = encode_sentence(
            &mut tape,
            sentence,
            &self.vocab,
            &bundle,
            &binding.encoder,
            &self.arch,
            &masks,
            None,
        )?;
        let emissions = tape.value(encode.emissions).clone();
        let (path, _) = crf::viterbi(&emissions, &self.crf)?;
        Ok(path)
    }

    /// Tags a whole corpus, returning a copy with predicted tags. Stats are
    /// computed once from the current tables.
    pub fn tag_corpus(&self, corpus: &Corpus) -> Result<Corpus, ModelError> {
        let stats = self.stats();
        let mut out = corpus.clone();
        for sentence in &mut out.sentences {
            let path = self.decode(sentence, &stats)?;
            for (token, tag_id) in sentence.tokens.iter_mut().zip(path) {
                token.tag = self.vocab.tag_form(tag_id).to_string();
            }
        }
        Ok(out)
    }

    // ---- checkpointing ----

    pub fn to_checkpoint_json(&self) -> String {
        let ckpt = Checkpoint { version: CHECKPOINT_VERSION, model: self.clone() };
        serde_json::to_string(&ckpt).expect("checkpoint serialization cannot fail")
    }

    pub fn from_checkpoint_json(json: &str) -> Result<Self, ModelError> {
        let ckpt: Checkpoint =
            serde_json::from_str(json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "version {} unsupported (expected {})",
                ckpt.version, CHECKPOINT_VERSION
            )));
        }
        ckpt.model.validate()?;
        Ok(ckpt.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint_json()).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let json = fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_checkpoint_json(&json)
    }
}

/// On-disk container: a version stamp around the model. JSON text keeps the
/// format platform-independent; floats round-trip exactly.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    model: TaggerModel,
}
