//! Word and character embedding tables: pretrained loading, seeded random
//! initialization, and the frequency-weighted normalization applied every
//! time embeddings feed the network.
//!
//! Normalization keeps each dimension at weighted mean 0 / variance 1 so
//! that perturbation norms stay comparable to embedding norms. Stats are
//! recomputed between optimizer steps and treated as constants inside a
//! single example's tape: the map `row -> (row - mean) / std` is then
//! elementwise linear, and gradients flow back to the raw rows through it.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Vocab;
use crate::tensor::Tensor;

/// Lower bound applied to per-dimension standard deviations.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("row {id} out of range for table of {rows} rows")]
    RowOutOfRange { id: usize, rows: usize },
    #[error("frequency weights must be nonnegative with positive sum")]
    BadWeights,
}

/// An embedding matrix with per-row frequency weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingTable {
    matrix: Tensor,
    dim: usize,
    freq: Vec<f64>,
    pub trainable: bool,
}

/// Per-dimension weighted moments of a table.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(matrix: Tensor, freq: Vec<f64>, trainable: bool) -> Result<Self, EmbedError> {
        let (rows, dim) = matrix.dims2();
        assert_eq!(rows, freq.len(), "one frequency weight per row");
        if freq.iter().any(|&f| f < 0.0) || freq.iter().sum::<f64>() <= 0.0 {
            return Err(EmbedError::BadWeights);
        }
        Ok(EmbeddingTable { matrix, dim, freq, trainable })
    }

    /// Seeded uniform initialization in `[-sqrt(3/d), +sqrt(3/d)]`.
    pub fn random(rows: usize, dim: usize, freq: Vec<f64>, rng: &mut impl Rng) -> Result<Self, EmbedError> {
        let bound = (3.0 / dim as f64).sqrt();
        let data = (0..rows * dim).map(|_| rng.random_range(-bound..=bound)).collect();
        EmbeddingTable::new(Tensor::matrix(rows, dim, data), freq, true)
    }

    pub fn rows(&self) -> usize {
        self.matrix.dims2().0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut Tensor {
        &mut self.matrix
    }

    pub fn freq(&self) -> &[f64] {
        &self.freq
    }

    pub fn row(&self, id: usize) -> Result<&[f64], EmbedError> {
        if id >= self.rows() {
            return Err(EmbedError::RowOutOfRange { id, rows: self.rows() });
        }
        Ok(self.matrix.row(id))
    }
}

/// Random word table sized to the vocabulary, weighted by train frequency.
pub fn init_word_table(vocab: &Vocab, dim: usize, rng: &mut impl Rng) -> EmbeddingTable {
    EmbeddingTable::random(vocab.word_count(), dim, vocab.word_freq_weights(), rng)
        .expect("training corpus is non-empty, so word weights have positive sum")
}

/// Random character table. Uniform weights by default; per-character train
/// frequencies when `freq_weighted` is set.
pub fn init_char_table(
    vocab: &Vocab,
    dim: usize,
    freq_weighted: bool,
    rng: &mut impl Rng,
) -> EmbeddingTable {
    let freq = if freq_weighted {
        vocab.char_freq_weights()
    } else {
        vec![1.0; vocab.char_count()]
    };
    EmbeddingTable::random(vocab.char_count(), dim, freq, rng)
        .expect("uniform or corpus-derived char weights have positive sum")
}

/// Loads a pretrained text table ("word v1 .. vd" per line) into a table
/// sized to the vocabulary. Matching lowercases the vocabulary form when no
/// exact match exists; unmatched rows are initialized uniformly at random.
pub fn load_pretrained(
    path: impl AsRef<Path>,
    vocab: &Vocab,
    dim: usize,
    rng: &mut impl Rng,
) -> Result<EmbeddingTable, EmbedError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| EmbedError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_pretrained_str(&text, &path.display().to_string(), vocab, dim, rng)
}

pub fn load_pretrained_str(
    text: &str,
    path: &str,
    vocab: &Vocab,
    dim: usize,
    rng: &mut impl Rng,
) -> Result<EmbeddingTable, EmbedError> {
    let mut file_rows: HashMap<&str, Vec<f64>> = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().expect("non-empty line has a first field");
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| EmbedError::Parse {
                    path: path.to_string(),
                    line: lineno,
                    message: format!("bad float {:?}", f),
                })
            })
            .collect::<Result<_, _>>()?;
        if values.len() != dim {
            return Err(EmbedError::Parse {
                path: path.to_string(),
                line: lineno,
                message: format!("expected {} values, found {}", dim, values.len()),
            });
        }
        file_rows.entry(token).or_insert(values);
    }

    let mut table = init_word_table(vocab, dim, rng);
    for id in 0..vocab.word_count() {
        let form = vocab.word_form(id);
        let hit = file_rows
            .get(form)
            .or_else(|| file_rows.get(form.to_lowercase().as_str()));
        if let Some(values) = hit {
            table.matrix.row_mut(id).copy_from_slice(values);
        }
    }
    Ok(table)
}

/// Frequency-weighted per-dimension mean and (floored) standard deviation.
pub fn compute_stats(table: &EmbeddingTable) -> NormalizationStats {
    let (rows, dim) = table.matrix.dims2();
    let total: f64 = table.freq.iter().sum();
    let mut mean = vec![0.0; dim];
    for r in 0..rows {
        let w = table.freq[r];
        if w == 0.0 {
            continue;
        }
        for (j, m) in mean.iter_mut().enumerate() {
            *m += w * table.matrix.at(r, j);
        }
    }
    for m in mean.iter_mut() {
        *m /= total;
    }
    let mut var = vec![0.0; dim];
    for r in 0..rows {
        let w = table.freq[r];
        if w == 0.0 {
            continue;
        }
        for (j, v) in var.iter_mut().enumerate() {
            let d = table.matrix.at(r, j) - mean[j];
            *v += w * d * d;
        }
    }
    let std = var.iter().map(|v| (v / total).sqrt().max(STD_FLOOR)).collect();
    NormalizationStats { mean, std }
}

/// Normalized view of one row: `(row - mean) / std` per dimension.
pub fn normalized_lookup(
    table: &EmbeddingTable,
    stats: &NormalizationStats,
    id: usize,
) -> Result<Vec<f64>, EmbedError> {
    let row = table.row(id)?;
    Ok(row
        .iter()
        .zip(stats.mean.iter().zip(&stats.std))
        .map(|(x, (m, s))| (x - m) / s)
        .collect())
}

/// Chain rule through the normalization: adds `d_normalized / std` into the
/// raw row's slot of a table-shaped gradient. Stats are the constants that
/// were in effect when the example's tape was built.
pub fn accumulate_row_gradient(
    stats: &NormalizationStats,
    id: usize,
    d_normalized: &[f64],
    table_grad: &mut Tensor,
) {
    let row = table_grad.row_mut(id);
    for (slot, (g, s)) in row.iter_mut().zip(d_normalized.iter().zip(&stats.std)) {
        *slot += g / s;
    }
}
