//! The tagging encoder: a character-level BiLSTM feeding a word-level
//! BiLSTM, projected to per-token emission scores.
//!
//! Each word is represented by its normalized word embedding concatenated
//! with the final states of a BiLSTM over its normalized character
//! embeddings. Dropout applies to those per-token input vectors and to the
//! word-BiLSTM outputs, with externally supplied masks so runs are exactly
//! reproducible. `encode_sentence` also hands back the tape leaves for every
//! normalized embedding it consumed: their concatenation is the perturbation
//! space for adversarial training, laid out `[words..., chars...]`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, NodeId, Tape};
use crate::data::{Sentence, Vocab};
use crate::embeddings::{normalized_lookup, EmbedError, EmbeddingTable, NormalizationStats};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("sentence must contain at least one token")]
    EmptySentence,
    #[error("token {token_index} has an empty surface form")]
    EmptyWord { token_index: usize },
    #[error("expected {expected} dropout masks, found {found}")]
    MaskCount { expected: usize, found: usize },
    #[error("perturbation has dimension {found}, sentence input dimension is {expected}")]
    PerturbationDim { expected: usize, found: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Combined-gate LSTM parameters. The `4h` axis is laid out
/// `[input, forget, candidate, output]`; the forget-gate quarter of the bias
/// is initialized to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_input: Tensor,
    pub w_hidden: Tensor,
    pub bias: Tensor,
    pub hidden: usize,
}

impl LstmParams {
    pub fn random(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w_input = glorot(4 * hidden, input_dim, rng);
        let w_hidden = glorot(4 * hidden, hidden, rng);
        let mut bias = Tensor::zeros(vec![4 * hidden]);
        for v in &mut bias.data_mut()[hidden..2 * hidden] {
            *v = 1.0;
        }
        LstmParams { w_input, w_hidden, bias, hidden }
    }

    pub fn bind(&self, tape: &mut Tape) -> LstmNodes {
        LstmNodes {
            w_input: tape.param(self.w_input.clone()),
            w_hidden: tape.param(self.w_hidden.clone()),
            bias: tape.param(self.bias.clone()),
            hidden: self.hidden,
        }
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect())
}

/// Tape handles for one binding of [`LstmParams`].
#[derive(Debug, Clone, Copy)]
pub struct LstmNodes {
    pub w_input: NodeId,
    pub w_hidden: NodeId,
    pub bias: NodeId,
    pub hidden: usize,
}

/// One LSTM step: gates from affine maps of `(x, h_prev)`, then
/// `c = f*c_prev + i*g` and `h = o*tanh(c)`.
pub fn lstm_cell(
    tape: &mut Tape,
    params: &LstmNodes,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId), NetworkError> {
    let h = params.hidden;
    let wx = tape.matmul(params.w_input, x)?;
    let wh = tape.matmul(params.w_hidden, h_prev)?;
    let affine = tape.add(wx, wh)?;
    let pre = tape.add(affine, params.bias)?;
    let i_pre = tape.slice(pre, 0, h)?;
    let f_pre = tape.slice(pre, h, h)?;
    let g_pre = tape.slice(pre, 2 * h, h)?;
    let o_pre = tape.slice(pre, 3 * h, h)?;
    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let g = tape.tanh(g_pre);
    let o = tape.sigmoid(o_pre);
    let fc = tape.mul(f, c_prev)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let c_act = tape.tanh(c);
    let h_out = tape.mul(o, c_act)?;
    Ok((h_out, c))
}

/// Runs an LSTM over `inputs` left to right, returning the hidden state at
/// every step. State starts at zero.
fn run_lstm(
    tape: &mut Tape,
    params: &LstmNodes,
    inputs: &[NodeId],
) -> Result<Vec<NodeId>, NetworkError> {
    let mut h = tape.constant(Tensor::zeros(vec![params.hidden]));
    let mut c = tape.constant(Tensor::zeros(vec![params.hidden]));
    let mut states = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let (nh, nc) = lstm_cell(tape, params, x, h, c)?;
        h = nh;
        c = nc;
        states.push(h);
    }
    Ok(states)
}

/// Concatenated final states of a forward and a backward LSTM over a
/// sequence of embedded steps: `[h_fwd at last, h_bwd at first]`.
fn bilstm_final(
    tape: &mut Tape,
    fwd: &LstmNodes,
    bwd: &LstmNodes,
    inputs: &[NodeId],
) -> Result<NodeId, NetworkError> {
    let fwd_states = run_lstm(tape, fwd, inputs)?;
    let reversed: Vec<NodeId> = inputs.iter().rev().copied().collect();
    let bwd_states = run_lstm(tape, bwd, &reversed)?;
    let last_fwd = *fwd_states.last().expect("non-empty input");
    let last_bwd = *bwd_states.last().expect("non-empty input");
    Ok(tape.concat(&[last_fwd, last_bwd])?)
}

/// Architecture extents for the tagger. Hidden sizes are per direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerArchitecture {
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_hidden: usize,
    pub word_hidden: usize,
    pub tag_count: usize,
    pub dropout: f64,
}

impl TaggerArchitecture {
    /// 100-dim word embeddings with 50/200 BiLSTM states.
    pub fn english(tag_count: usize) -> Self {
        TaggerArchitecture {
            word_dim: 100,
            char_dim: 30,
            char_hidden: 50,
            word_hidden: 200,
            tag_count,
            dropout: 0.5,
        }
    }

    /// 64-dim word embeddings with 50/150 BiLSTM states.
    pub fn multilingual(tag_count: usize) -> Self {
        TaggerArchitecture { word_hidden: 150, ..Self::low_resource(tag_count) }
    }

    /// 64-dim word embeddings with 50/100 BiLSTM states.
    pub fn low_resource(tag_count: usize) -> Self {
        TaggerArchitecture {
            word_dim: 64,
            char_dim: 30,
            char_hidden: 50,
            word_hidden: 100,
            tag_count,
            dropout: 0.5,
        }
    }

    /// Per-token input to the word-level BiLSTM: word embedding plus both
    /// final char-LSTM states.
    pub fn token_input_dim(&self) -> usize {
        self.word_dim + 2 * self.char_hidden
    }
}

/// The encoder's trainable tensors (everything except embeddings and CRF).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub char_fwd: LstmParams,
    pub char_bwd: LstmParams,
    pub word_fwd: LstmParams,
    pub word_bwd: LstmParams,
    pub proj_weight: Tensor,
    pub proj_bias: Tensor,
}

impl EncoderParams {
    pub fn random(arch: &TaggerArchitecture, rng: &mut impl Rng) -> Self {
        EncoderParams {
            char_fwd: LstmParams::random(arch.char_dim, arch.char_hidden, rng),
            char_bwd: LstmParams::random(arch.char_dim, arch.char_hidden, rng),
            word_fwd: LstmParams::random(arch.token_input_dim(), arch.word_hidden, rng),
            word_bwd: LstmParams::random(arch.token_input_dim(), arch.word_hidden, rng),
            proj_weight: glorot(arch.tag_count, 2 * arch.word_hidden, rng),
            proj_bias: Tensor::zeros(vec![arch.tag_count]),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> EncoderNodes {
        EncoderNodes {
            char_fwd: self.char_fwd.bind(tape),
            char_bwd: self.char_bwd.bind(tape),
            word_fwd: self.word_fwd.bind(tape),
            word_bwd: self.word_bwd.bind(tape),
            proj_weight: tape.param(self.proj_weight.clone()),
            proj_bias: tape.param(self.proj_bias.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderNodes {
    pub char_fwd: LstmNodes,
    pub char_bwd: LstmNodes,
    pub word_fwd: LstmNodes,
    pub word_bwd: LstmNodes,
    pub proj_weight: NodeId,
    pub proj_bias: NodeId,
}

/// Embedding tables with the normalization stats in effect for this tape.
#[derive(Clone, Copy)]
pub struct EmbeddingBundle<'a> {
    pub word_table: &'a EmbeddingTable,
    pub word_stats: &'a NormalizationStats,
    pub char_table: &'a EmbeddingTable,
    pub char_stats: &'a NormalizationStats,
}

/// Dropout masks for one sentence, sampled outside the tape. Entries are
/// `0` or `1/(1-rate)` (inverted dropout), so all-ones disables dropout.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    pub input: Vec<Tensor>,
    pub output: Vec<Tensor>,
}

impl DropoutMasks {
    /// Identity masks: evaluation mode.
    pub fn ones(arch: &TaggerArchitecture, n: usize) -> Self {
        DropoutMasks {
            input: (0..n).map(|_| ones(arch.token_input_dim())).collect(),
            output: (0..n).map(|_| ones(2 * arch.word_hidden)).collect(),
        }
    }

    /// Per-element Bernoulli masks at the architecture's dropout rate.
    pub fn sample(arch: &TaggerArchitecture, n: usize, rng: &mut impl Rng) -> Self {
        let rate = arch.dropout;
        let keep = 1.0 - rate;
        let mut draw = |dim: usize| {
            Tensor::vector(
                (0..dim)
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect(),
            )
        };
        DropoutMasks {
            input: (0..n).map(|_| draw(arch.token_input_dim())).collect(),
            output: (0..n).map(|_| draw(2 * arch.word_hidden)).collect(),
        }
    }
}

fn ones(dim: usize) -> Tensor {
    Tensor::new(vec![dim], vec![1.0; dim])
}

/// A normalized-embedding input leaf and the raw table row it came from.
#[derive(Debug, Clone, Copy)]
pub struct InputLeaf {
    pub node: NodeId,
    pub row: usize,
    pub dim: usize,
}

/// Result of encoding one sentence on a tape.
#[derive(Debug)]
pub struct EncodeOutput {
    /// `[n, tag_count]` emission matrix node.
    pub emissions: NodeId,
    /// One leaf per token, in token order.
    pub word_leaves: Vec<InputLeaf>,
    /// One leaf per character, in (token, character) order.
    pub char_leaves: Vec<InputLeaf>,
    /// Total dimension of the concatenated input embeddings.
    pub input_dim: usize,
}

impl EncodeOutput {
    /// Leaves in the fixed `[words..., chars...]` layout.
    pub fn leaves(&self) -> impl Iterator<Item = &InputLeaf> {
        self.word_leaves.iter().chain(self.char_leaves.iter())
    }
}

/// Character-level BiLSTM representation of a single word: the concatenated
/// final states, dimension `2 * char_hidden`. Returns the repr node and the
/// per-character embedding leaves.
pub fn char_representation(
    tape: &mut Tape,
    word: &str,
    vocab: &Vocab,
    char_table: &EmbeddingTable,
    char_stats: &NormalizationStats,
    char_fwd: &LstmNodes,
    char_bwd: &LstmNodes,
) -> Result<(NodeId, Vec<InputLeaf>), NetworkError> {
    if word.is_empty() {
        return Err(NetworkError::EmptyWord { token_index: 0 });
    }
    let mut leaves = Vec::new();
    for ch in word.chars() {
        let row = vocab.char_id(ch);
        let value = normalized_lookup(char_table, char_stats, row)?;
        let dim = value.len();
        let node = tape.input(Tensor::vector(value));
        leaves.push(InputLeaf { node, row, dim });
    }
    let inputs: Vec<NodeId> = leaves.iter().map(|l| l.node).collect();
    let repr = bilstm_final(tape, char_fwd, char_bwd, &inputs)?;
    Ok((repr, leaves))
}

/// Encodes a sentence into per-token emission scores, registering every
/// normalized word/char embedding as an input leaf.
///
/// `perturbation`, when present, is added to the normalized embedding values
/// before they enter the tape; its layout matches [`EncodeOutput::leaves`]
/// and its length must equal the sentence's input dimension.
#[allow(clippy::too_many_arguments)]
pub fn encode_sentence(
    tape: &mut Tape,
    sentence: &Sentence,
    vocab: &Vocab,
    embeddings: &EmbeddingBundle,
    params: &EncoderNodes,
    arch: &TaggerArchitecture,
    masks: &DropoutMasks,
    perturbation: Option<&[f64]>,
) -> Result<EncodeOutput, NetworkError> {
    let n = sentence.len();
    if n == 0 {
        return Err(NetworkError::EmptySentence);
    }
    if masks.input.len() != n || masks.output.len() != n {
        return Err(NetworkError::MaskCount { expected: n, found: masks.input.len() });
    }
    let total_chars: usize = sentence.tokens.iter().map(|t| t.form.chars().count()).sum();
    let input_dim = n * arch.word_dim + total_chars * arch.char_dim;
    if let Some(p) = perturbation {
        if p.len() != input_dim {
            return Err(NetworkError::PerturbationDim { expected: input_dim, found: p.len() });
        }
    }

    // Word leaves first, then char leaves, matching the perturbation layout.
    let mut word_leaves = Vec::with_capacity(n);
    for (t, token) in sentence.tokens.iter().enumerate() {
        if token.form.is_empty() {
            return Err(NetworkError::EmptyWord { token_index: t });
        }
        let row = vocab.word_id(&token.form);
        let mut value = normalized_lookup(embeddings.word_table, embeddings.word_stats, row)?;
        if let Some(p) = perturbation {
            let offset = t * arch.word_dim;
            for (v, d) in value.iter_mut().zip(&p[offset..offset + arch.word_dim]) {
                *v += d;
            }
        }
        let dim = value.len();
        let node = tape.input(Tensor::vector(value));
        word_leaves.push(InputLeaf { node, row, dim });
    }

    let mut char_leaves = Vec::with_capacity(total_chars);
    let mut char_cursor = n * arch.word_dim;
    let mut token_inputs = Vec::with_capacity(n);
    for (t, token) in sentence.tokens.iter().enumerate() {
        let mut leaves_here = Vec::new();
        for ch in token.form.chars() {
            let row = vocab.char_id(ch);
            let mut value =
                normalized_lookup(embeddings.char_table, embeddings.char_stats, row)?;
            if let Some(p) = perturbation {
                for (v, d) in value.iter_mut().zip(&p[char_cursor..char_cursor + arch.char_dim]) {
                    *v += d;
                }
            }
            char_cursor += arch.char_dim;
            let dim = value.len();
            let node = tape.input(Tensor::vector(value));
            leaves_here.push(InputLeaf { node, row, dim });
        }
        let char_inputs: Vec<NodeId> = leaves_here.iter().map(|l| l.node).collect();
        let char_repr = bilstm_final(tape, &params.char_fwd, &params.char_bwd, &char_inputs)?;
        char_leaves.extend(leaves_here);

        let token_vec = tape.concat(&[word_leaves[t].node, char_repr])?;
        let dropped = tape.dropout(token_vec, &masks.input[t])?;
        token_inputs.push(dropped);
    }

    // Word-level BiLSTM over the sentence.
    let fwd_states = run_lstm(tape, &params.word_fwd, &token_inputs)?;
    let rev_inputs: Vec<NodeId> = token_inputs.iter().rev().copied().collect();
    let mut bwd_states = run_lstm(tape, &params.word_bwd, &rev_inputs)?;
    bwd_states.reverse();

    let mut emission_rows = Vec::with_capacity(n);
    for t in 0..n {
        let ctx = tape.concat(&[fwd_states[t], bwd_states[t]])?;
        let dropped = tape.dropout(ctx, &masks.output[t])?;
        let projected = tape.matmul(params.proj_weight, dropped)?;
        let scores = tape.add(projected, params.proj_bias)?;
        emission_rows.push(scores);
    }
    let flat = tape.concat(&emission_rows)?;
    let emissions = tape.reshape(flat, vec![n, arch.tag_count])?;

    Ok(EncodeOutput { emissions, word_leaves, char_leaves, input_dim })
}
