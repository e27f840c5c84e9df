//! First-order linear-chain CRF with explicit start/stop scores.
//!
//! Scoring and the log-partition run on the autodiff tape so the negative
//! log-likelihood is differentiable end to end; Viterbi decoding is a plain
//! value-space dynamic program (no gradients needed). Everything stays in
//! log space.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{max_slice, AutodiffError, NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum CrfError {
    #[error("tag id {tag} at position {position} out of range for {count} tags")]
    TagOutOfRange { position: usize, tag: usize, count: usize },
    #[error("{tags} tags supplied for {rows} emission rows")]
    LengthMismatch { rows: usize, tags: usize },
    #[error("emissions have {found} columns but the CRF has {expected} tags")]
    TagCountMismatch { expected: usize, found: usize },
    #[error("sequence must contain at least one token")]
    EmptySequence,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Transition matrix (indexed `[from][to]`) plus start and stop scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfParams {
    pub transitions: Tensor,
    pub start: Tensor,
    pub stop: Tensor,
}

impl CrfParams {
    pub fn zeros(tag_count: usize) -> Self {
        CrfParams {
            transitions: Tensor::zeros(vec![tag_count, tag_count]),
            start: Tensor::zeros(vec![tag_count]),
            stop: Tensor::zeros(vec![tag_count]),
        }
    }

    pub fn tag_count(&self) -> usize {
        self.start.numel()
    }

    /// Registers the CRF tensors as parameter leaves on a tape.
    pub fn bind(&self, tape: &mut Tape) -> CrfNodes {
        CrfNodes {
            transitions: tape.param(self.transitions.clone()),
            start: tape.param(self.start.clone()),
            stop: tape.param(self.stop.clone()),
        }
    }

    /// Registers the CRF tensors as constants (no gradients tracked).
    pub fn bind_const(&self, tape: &mut Tape) -> CrfNodes {
        CrfNodes {
            transitions: tape.constant(self.transitions.clone()),
            start: tape.constant(self.start.clone()),
            stop: tape.constant(self.stop.clone()),
        }
    }
}

/// Tape handles for one binding of [`CrfParams`].
#[derive(Debug, Clone, Copy)]
pub struct CrfNodes {
    pub transitions: NodeId,
    pub start: NodeId,
    pub stop: NodeId,
}

fn check_instance(
    tape: &Tape,
    emissions: NodeId,
    crf: &CrfNodes,
    tags: Option<&[usize]>,
) -> Result<(usize, usize), CrfError> {
    let shape = tape.value(emissions).shape().to_vec();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(CrfError::EmptySequence);
    }
    let (n, k) = (shape[0], shape[1]);
    let crf_k = tape.value(crf.start).numel();
    if crf_k != k {
        return Err(CrfError::TagCountMismatch { expected: crf_k, found: k });
    }
    if let Some(tags) = tags {
        if tags.len() != n {
            return Err(CrfError::LengthMismatch { rows: n, tags: tags.len() });
        }
        for (position, &tag) in tags.iter().enumerate() {
            if tag >= k {
                return Err(CrfError::TagOutOfRange { position, tag, count: k });
            }
        }
    }
    Ok((n, k))
}

/// Path score of a tag sequence:
/// `start[y_1] + sum_t emissions[t][y_t] + sum_t T[y_{t-1}][y_t] + stop[y_n]`.
pub fn sequence_score(
    tape: &mut Tape,
    emissions: NodeId,
    crf: &CrfNodes,
    tags: &[usize],
) -> Result<NodeId, CrfError> {
    let (n, k) = check_instance(tape, emissions, crf, Some(tags))?;
    let mut picks = Vec::with_capacity(2 * n + 1);
    picks.push(tape.slice(crf.start, tags[0], 1)?);
    for (t, &tag) in tags.iter().enumerate() {
        picks.push(tape.slice(emissions, t * k + tag, 1)?);
        if t > 0 {
            picks.push(tape.slice(crf.transitions, tags[t - 1] * k + tag, 1)?);
        }
    }
    picks.push(tape.slice(crf.stop, tags[n - 1], 1)?);
    let stacked = tape.concat(&picks)?;
    Ok(tape.sum(stacked))
}

/// Log of the sum over all `k^n` tag sequences of `exp(sequence_score)`,
/// computed by the forward recursion in log space.
pub fn log_partition(
    tape: &mut Tape,
    emissions: NodeId,
    crf: &CrfNodes,
) -> Result<NodeId, CrfError> {
    let (n, _) = check_instance(tape, emissions, crf, None)?;
    let e0 = tape.gather_row(emissions, 0)?;
    let mut alpha = tape.add(crf.start, e0)?;
    // trans_t[to][from] lets the recursion use the row-broadcast add
    let trans_t = tape.transpose(crf.transitions)?;
    for t in 1..n {
        let scores = tape.add(trans_t, alpha)?; // [to][from] + alpha[from]
        let reduced = tape.logsumexp(scores, 1)?;
        let et = tape.gather_row(emissions, t)?;
        alpha = tape.add(reduced, et)?;
    }
    let final_scores = tape.add(alpha, crf.stop)?;
    Ok(tape.logsumexp(final_scores, 0)?)
}

/// Negative log-likelihood: `log_partition - sequence_score`.
pub fn nll(
    tape: &mut Tape,
    emissions: NodeId,
    crf: &CrfNodes,
    tags: &[usize],
) -> Result<NodeId, CrfError> {
    let log_z = log_partition(tape, emissions, crf)?;
    let score = sequence_score(tape, emissions, crf, tags)?;
    Ok(tape.sub(log_z, score)?)
}

/// Highest-scoring tag sequence and its score. Ties break toward the lowest
/// tag id at every backtrack step.
pub fn viterbi(emissions: &Tensor, crf: &CrfParams) -> Result<(Vec<usize>, f64), CrfError> {
    if !emissions.is_matrix() || emissions.dims2().0 == 0 {
        return Err(CrfError::EmptySequence);
    }
    let (n, k) = emissions.dims2();
    if k != crf.tag_count() {
        return Err(CrfError::TagCountMismatch { expected: crf.tag_count(), found: k });
    }
    let mut delta: Vec<f64> = (0..k).map(|j| crf.start.data()[j] + emissions.at(0, j)).collect();
    let mut backptr: Vec<Vec<usize>> = Vec::with_capacity(n);
    for t in 1..n {
        let mut next = vec![f64::NEG_INFINITY; k];
        let mut ptr = vec![0usize; k];
        for j in 0..k {
            let mut best = (0usize, delta[0] + crf.transitions.at(0, j));
            for (i, &d) in delta.iter().enumerate().skip(1) {
                let cand = d + crf.transitions.at(i, j);
                if cand > best.1 {
                    best = (i, cand);
                }
            }
            ptr[j] = best.0;
            next[j] = best.1 + emissions.at(t, j);
        }
        delta = next;
        backptr.push(ptr);
    }
    let finals: Vec<f64> = (0..k).map(|j| delta[j] + crf.stop.data()[j]).collect();
    let (mut tag, score) = max_slice(&finals);
    let mut path = vec![0usize; n];
    path[n - 1] = tag;
    for t in (1..n).rev() {
        tag = backptr[t - 1][tag];
        path[t - 1] = tag;
    }
    Ok((path, score))
}

// Value-space conveniences: build a throwaway tape over constants.

pub fn sequence_score_value(
    emissions: &Tensor,
    crf: &CrfParams,
    tags: &[usize],
) -> Result<f64, CrfError> {
    let mut tape = Tape::new();
    let e = tape.constant(emissions.clone());
    let nodes = crf.bind_const(&mut tape);
    let s = sequence_score(&mut tape, e, &nodes, tags)?;
    Ok(tape.value(s).item())
}

pub fn log_partition_value(emissions: &Tensor, crf: &CrfParams) -> Result<f64, CrfError> {
    let mut tape = Tape::new();
    let e = tape.constant(emissions.clone());
    let nodes = crf.bind_const(&mut tape);
    let z = log_partition(&mut tape, e, &nodes)?;
    Ok(tape.value(z).item())
}

pub fn nll_value(emissions: &Tensor, crf: &CrfParams, tags: &[usize]) -> Result<f64, CrfError> {
    let mut tape = Tape::new();
    let e = tape.constant(emissions.clone());
    let nodes = crf.bind_const(&mut tape);
    let l = nll(&mut tape, e, &nodes, tags)?;
    Ok(tape.value(l).item())
}
