//! Measurement procedures: token and sentence accuracy, chunk F1 over
//! IOBES/IOB2 spans, accuracy bucketed by training frequency, the same
//! buckets applied to the neighbors of each word, and embedding cluster
//! tightness. Reports serialize as structured records and render as
//! aligned-column text tables.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Corpus, TagScheme, Vocab};
use crate::embeddings::{normalized_lookup, EmbeddingTable, NormalizationStats};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("corpora are not aligned: {0}")]
    Alignment(String),
    #[error("no tokens to evaluate")]
    Empty,
    #[error("invalid {scheme:?} sequence at position {position}: {message}")]
    Scheme { scheme: TagScheme, position: usize, message: String },
    #[error(transparent)]
    Embed(#[from] crate::embeddings::EmbedError),
}

fn check_aligned(gold: &Corpus, predicted: &Corpus) -> Result<(), EvalError> {
    if gold.len() != predicted.len() {
        return Err(EvalError::Alignment(format!(
            "{} gold sentences vs {} predicted",
            gold.len(),
            predicted.len()
        )));
    }
    for (i, (g, p)) in gold.sentences.iter().zip(&predicted.sentences).enumerate() {
        if g.len() != p.len() {
            return Err(EvalError::Alignment(format!(
                "sentence {}: {} gold tokens vs {} predicted",
                i,
                g.len(),
                p.len()
            )));
        }
        for (j, (gt, pt)) in g.tokens.iter().zip(&p.tokens).enumerate() {
            if gt.form != pt.form {
                return Err(EvalError::Alignment(format!(
                    "sentence {} token {}: form {:?} vs {:?}",
                    i, j, gt.form, pt.form
                )));
            }
        }
    }
    if gold.token_count() == 0 {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Fraction of tokens with the correct tag.
pub fn token_accuracy(gold: &Corpus, predicted: &Corpus) -> Result<f64, EvalError> {
    check_aligned(gold, predicted)?;
    let mut correct = 0usize;
    let mut total = 0usize;
    for (g, p) in gold.sentences.iter().zip(&predicted.sentences) {
        for (gt, pt) in g.tokens.iter().zip(&p.tokens) {
            if gt.tag == pt.tag {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

/// Fraction of sentences whose every token is tagged correctly.
pub fn sentence_accuracy(gold: &Corpus, predicted: &Corpus) -> Result<f64, EvalError> {
    check_aligned(gold, predicted)?;
    let perfect = gold
        .sentences
        .iter()
        .zip(&predicted.sentences)
        .filter(|(g, p)| g.tokens.iter().zip(&p.tokens).all(|(gt, pt)| gt.tag == pt.tag))
        .count();
    Ok(perfect as f64 / gold.len() as f64)
}

/// A typed chunk: inclusive token range within one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub ty: String,
    pub start: usize,
    pub end: usize,
}

enum Mode {
    /// Invalid sequences are errors (gold side).
    Strict,
    /// Stray I-/E- opens a new chunk (predicted side).
    Forgiving,
}

fn split_tag(
    tag: &str,
    scheme: TagScheme,
    position: usize,
) -> Result<(char, Option<String>), EvalError> {
    if tag == "O" {
        return Ok(('O', None));
    }
    let valid: &[char] = match scheme {
        TagScheme::Iob2 => &['B', 'I'],
        TagScheme::Iobes => &['B', 'I', 'E', 'S'],
    };
    match tag.split_once('-') {
        Some((p, ty)) if p.len() == 1 && !ty.is_empty() => {
            let prefix = p.chars().next().expect("single-char prefix");
            if valid.contains(&prefix) {
                Ok((prefix, Some(ty.to_string())))
            } else {
                Err(EvalError::Scheme {
                    scheme,
                    position,
                    message: format!("prefix {:?} not in scheme", p),
                })
            }
        }
        _ => Err(EvalError::Scheme {
            scheme,
            position,
            message: format!("malformed tag {:?}", tag),
        }),
    }
}

fn extract_spans(
    tags: &[String],
    scheme: TagScheme,
    mode: Mode,
) -> Result<Vec<Span>, EvalError> {
    let strict = matches!(mode, Mode::Strict);
    let mut spans = Vec::new();
    let mut open: Option<(String, usize)> = None;

    let fail = |position: usize, message: &str| -> Result<Vec<Span>, EvalError> {
        Err(EvalError::Scheme { scheme, position, message: message.to_string() })
    };

    for (i, tag) in tags.iter().enumerate() {
        let (prefix, ty) = split_tag(tag, scheme, i)?;
        match (scheme, prefix) {
            (_, 'O') => {
                if let Some((t, s)) = open.take() {
                    if strict && scheme == TagScheme::Iobes {
                        return fail(i, "chunk not closed with E- before O");
                    }
                    spans.push(Span { ty: t, start: s, end: i - 1 });
                }
            }
            (_, 'B') => {
                let ty = ty.expect("typed prefix");
                if let Some((t, s)) = open.take() {
                    if strict && scheme == TagScheme::Iobes {
                        return fail(i, "chunk not closed with E- before B-");
                    }
                    spans.push(Span { ty: t, start: s, end: i - 1 });
                }
                open = Some((ty, i));
            }
            (_, 'I') => {
                let ty = ty.expect("typed prefix");
                match &open {
                    Some((t, _)) if *t == ty => {}
                    _ => {
                        if strict {
                            return fail(i, "I- without an open chunk of the same type");
                        }
                        // repair: stray I- opens a new chunk
                        if let Some((t, s)) = open.take() {
                            spans.push(Span { ty: t, start: s, end: i - 1 });
                        }
                        open = Some((ty, i));
                    }
                }
            }
            (TagScheme::Iobes, 'E') => {
                let ty = ty.expect("typed prefix");
                match open.take() {
                    Some((t, s)) if t == ty => spans.push(Span { ty: t, start: s, end: i }),
                    other => {
                        if strict {
                            return fail(i, "E- without an open chunk of the same type");
                        }
                        // repair: stray E- opens (and immediately closes) a chunk
                        if let Some((t, s)) = other {
                            spans.push(Span { ty: t, start: s, end: i - 1 });
                        }
                        spans.push(Span { ty, start: i, end: i });
                    }
                }
            }
            (TagScheme::Iobes, 'S') => {
                let ty = ty.expect("typed prefix");
                if let Some((t, s)) = open.take() {
                    if strict {
                        return fail(i, "chunk not closed with E- before S-");
                    }
                    spans.push(Span { ty: t, start: s, end: i - 1 });
                }
                spans.push(Span { ty, start: i, end: i });
            }
            _ => unreachable!("split_tag validated the prefix"),
        }
    }
    if let Some((t, s)) = open {
        if strict && scheme == TagScheme::Iobes {
            return fail(tags.len() - 1, "chunk still open at end of sequence");
        }
        spans.push(Span { ty: t, start: s, end: tags.len() - 1 });
    }
    Ok(spans)
}

/// Typed spans of a gold sequence; invalid sequences are errors.
pub fn gold_spans(tags: &[String], scheme: TagScheme) -> Result<Vec<Span>, EvalError> {
    extract_spans(tags, scheme, Mode::Strict)
}

/// Typed spans of a predicted sequence, repaired by the stray-I/E rule.
pub fn predicted_spans(tags: &[String], scheme: TagScheme) -> Result<Vec<Span>, EvalError> {
    extract_spans(tags, scheme, Mode::Forgiving)
}

/// Precision, recall and F1 over exact span-and-type matches. Per-sentence
/// tag sequences are passed as parallel slices.
pub fn chunk_f1(
    gold: &[Vec<String>],
    predicted: &[Vec<String>],
    scheme: TagScheme,
) -> Result<(f64, f64, f64), EvalError> {
    if gold.len() != predicted.len() {
        return Err(EvalError::Alignment(format!(
            "{} gold sequences vs {} predicted",
            gold.len(),
            predicted.len()
        )));
    }
    let mut gold_total = 0usize;
    let mut pred_total = 0usize;
    let mut matched = 0usize;
    for (g, p) in gold.iter().zip(predicted) {
        let gset: BTreeSet<Span> = gold_spans(g, scheme)?.into_iter().collect();
        let pset: BTreeSet<Span> = predicted_spans(p, scheme)?.into_iter().collect();
        gold_total += gset.len();
        pred_total += pset.len();
        matched += gset.intersection(&pset).count();
    }
    let precision = if pred_total == 0 { 0.0 } else { matched as f64 / pred_total as f64 };
    let recall = if gold_total == 0 { 0.0 } else { matched as f64 / gold_total as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, recall, f1))
}

/// Token/sentence accuracy, optional chunk scores, per-tag confusion counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub token_accuracy: f64,
    pub sentence_accuracy: f64,
    pub chunk_precision: Option<f64>,
    pub chunk_recall: Option<f64>,
    pub chunk_f1: Option<f64>,
    pub confusion: Vec<ConfusionEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfusionEntry {
    pub gold: String,
    pub predicted: String,
    pub count: usize,
}

/// Runs the core metrics over aligned corpora. `chunk_scheme` adds span
/// P/R/F1 (for chunking and NER tag sets).
pub fn evaluate(
    gold: &Corpus,
    predicted: &Corpus,
    chunk_scheme: Option<TagScheme>,
) -> Result<EvalReport, EvalError> {
    let token_acc = token_accuracy(gold, predicted)?;
    let sentence_acc = sentence_accuracy(gold, predicted)?;
    let mut confusion: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (g, p) in gold.sentences.iter().zip(&predicted.sentences) {
        for (gt, pt) in g.tokens.iter().zip(&p.tokens) {
            *confusion.entry((gt.tag.clone(), pt.tag.clone())).or_insert(0) += 1;
        }
    }
    let (cp, cr, cf) = match chunk_scheme {
        Some(scheme) => {
            let gold_tags: Vec<Vec<String>> = gold
                .sentences
                .iter()
                .map(|s| s.tags().map(str::to_string).collect())
                .collect();
            let pred_tags: Vec<Vec<String>> = predicted
                .sentences
                .iter()
                .map(|s| s.tags().map(str::to_string).collect())
                .collect();
            let (p, r, f) = chunk_f1(&gold_tags, &pred_tags, scheme)?;
            (Some(p), Some(r), Some(f))
        }
        None => (None, None, None),
    };
    Ok(EvalReport {
        token_accuracy: token_acc,
        sentence_accuracy: sentence_acc,
        chunk_precision: cp,
        chunk_recall: cr,
        chunk_f1: cf,
        confusion: confusion
            .into_iter()
            .map(|((gold, predicted), count)| ConfusionEntry { gold, predicted, count })
            .collect(),
    })
}

// ---- frequency buckets ----

pub const BUCKET_LABELS: [&str; 4] = ["0", "1-10", "10-100", "100-"];

/// Half-open buckets over training frequency: {0}, [1,10), [10,100),
/// [100,inf). A frequency of exactly 10 falls in "10-100".
pub fn bucket_index(freq: u64) -> usize {
    match freq {
        0 => 0,
        1..=9 => 1,
        10..=99 => 2,
        _ => 3,
    }
}

/// Token counts and accuracy per training-frequency bucket.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketReport {
    pub labels: Vec<String>,
    pub counts: Vec<usize>,
    pub correct: Vec<usize>,
    pub total: usize,
}

impl BucketReport {
    fn new() -> Self {
        BucketReport {
            labels: BUCKET_LABELS.iter().map(|s| s.to_string()).collect(),
            counts: vec![0; 4],
            correct: vec![0; 4],
            total: 0,
        }
    }

    fn record(&mut self, bucket: usize, correct: bool) {
        self.counts[bucket] += 1;
        if correct {
            self.correct[bucket] += 1;
        }
        self.total += 1;
    }

    /// Accuracy of one bucket; `None` when the bucket is empty.
    pub fn accuracy(&self, bucket: usize) -> Option<f64> {
        if self.counts[bucket] == 0 {
            None
        } else {
            Some(self.correct[bucket] as f64 / self.counts[bucket] as f64)
        }
    }

    pub fn overall_accuracy(&self) -> Option<f64> {
        if self.total == 0 {
            None
        } else {
            Some(self.correct.iter().sum::<usize>() as f64 / self.total as f64)
        }
    }
}

/// Buckets every test token by the training frequency of its surface form
/// and reports per-bucket accuracy.
pub fn frequency_buckets(
    train_vocab: &Vocab,
    gold: &Corpus,
    predicted: &Corpus,
) -> Result<BucketReport, EvalError> {
    check_aligned(gold, predicted)?;
    let mut report = BucketReport::new();
    for (g, p) in gold.sentences.iter().zip(&predicted.sentences) {
        for (gt, pt) in g.tokens.iter().zip(&p.tokens) {
            let bucket = bucket_index(train_vocab.train_frequency(&gt.form));
            report.record(bucket, gt.tag == pt.tag);
        }
    }
    Ok(report)
}

/// Buckets each token by its training frequency and evaluates its in-sentence
/// neighbors: the left and right neighbor of every center token contribute
/// one evaluation each to the center's bucket. Sentence-boundary neighbors
/// are skipped; a token may be counted once per neighboring center.
pub fn neighbor_accuracy(
    train_vocab: &Vocab,
    gold: &Corpus,
    predicted: &Corpus,
) -> Result<BucketReport, EvalError> {
    check_aligned(gold, predicted)?;
    let mut report = BucketReport::new();
    for (g, p) in gold.sentences.iter().zip(&predicted.sentences) {
        let n = g.len();
        for center in 0..n {
            let bucket = bucket_index(train_vocab.train_frequency(&g.tokens[center].form));
            for neighbor in [center.wrapping_sub(1), center + 1] {
                if neighbor < n && neighbor != center {
                    let correct = g.tokens[neighbor].tag == p.tokens[neighbor].tag;
                    report.record(bucket, correct);
                }
            }
        }
    }
    Ok(report)
}

// ---- cluster tightness ----

/// Which vectors the tightness metric reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSpace {
    /// The normalized form the model consumes.
    Normalized,
    /// Raw table rows.
    Raw,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TightnessCluster {
    pub tag: String,
    pub members: usize,
    /// Average pairwise cosine; `None` for clusters of fewer than 2 words.
    pub avg_cosine: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TightnessReport {
    pub clusters: Vec<TightnessCluster>,
    /// Unweighted mean over clusters with at least 2 members.
    pub overall: Option<f64>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Clusters test-vocabulary word types by their unique gold tag and scores
/// each cluster by the average cosine over all unordered pairs of member
/// vectors. Words observed with two or more distinct tags, and words without
/// their own vocabulary row, are excluded.
pub fn cluster_tightness(
    table: &EmbeddingTable,
    stats: &NormalizationStats,
    vocab: &Vocab,
    test_corpus: &Corpus,
    space: EmbeddingSpace,
) -> Result<TightnessReport, EvalError> {
    let mut tags_seen: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for sentence in &test_corpus.sentences {
        for token in &sentence.tokens {
            tags_seen.entry(&token.form).or_default().insert(&token.tag);
        }
    }

    let mut members: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    for (form, tags) in &tags_seen {
        if tags.len() != 1 || !vocab.has_word(form) {
            continue;
        }
        let id = vocab.word_id(form);
        let vector = match space {
            EmbeddingSpace::Normalized => normalized_lookup(table, stats, id)?,
            EmbeddingSpace::Raw => table.row(id)?.to_vec(),
        };
        let tag = tags.iter().next().expect("single tag");
        members.entry(tag).or_default().push(vector);
    }

    let mut clusters = Vec::new();
    let mut scored = Vec::new();
    for (tag, vectors) in &members {
        let avg = if vectors.len() >= 2 {
            let mut total = 0.0;
            let mut pairs = 0usize;
            for i in 0..vectors.len() {
                for j in i + 1..vectors.len() {
                    total += cosine(&vectors[i], &vectors[j]);
                    pairs += 1;
                }
            }
            let avg = total / pairs as f64;
            scored.push(avg);
            Some(avg)
        } else {
            None
        };
        clusters.push(TightnessCluster {
            tag: tag.to_string(),
            members: vectors.len(),
            avg_cosine: avg,
        });
    }
    let overall = if scored.is_empty() {
        None
    } else {
        Some(scored.iter().sum::<f64>() / scored.len() as f64)
    };
    Ok(TightnessReport { clusters, overall })
}

// ---- rendering ----

fn fmt_pct(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.2}", 100.0 * v),
        None => "-".to_string(),
    }
}

fn render_rows(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0usize; cols];
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, cell)| format!("{:>width$}", cell, width = widths[i]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Aligned table of per-bucket token counts and accuracies.
pub fn render_bucket_table(title: &str, report: &BucketReport) -> String {
    let mut rows = Vec::new();
    let mut header = vec!["Word Frequency".to_string()];
    header.extend(report.labels.iter().cloned());
    header.push("Total".to_string());
    rows.push(header);
    let mut counts = vec!["# Tokens".to_string()];
    counts.extend(report.counts.iter().map(|c| c.to_string()));
    counts.push(report.total.to_string());
    rows.push(counts);
    let mut acc = vec![title.to_string()];
    acc.extend((0..report.labels.len()).map(|i| fmt_pct(report.accuracy(i))));
    acc.push(fmt_pct(report.overall_accuracy()));
    rows.push(acc);
    render_rows(&rows)
}

/// Aligned table of per-cluster tightness with the cross-cluster average.
pub fn render_tightness_table(report: &TightnessReport) -> String {
    let mut rows = Vec::new();
    let mut header = vec!["POS Cluster".to_string()];
    header.extend(report.clusters.iter().map(|c| c.tag.clone()));
    header.push("Avg.".to_string());
    rows.push(header);
    let fmt = |v: Option<f64>| v.map(|x| format!("{:.3}", x)).unwrap_or_else(|| "-".to_string());
    let mut line = vec!["Tightness".to_string()];
    line.extend(report.clusters.iter().map(|c| fmt(c.avg_cosine)));
    line.push(fmt(report.overall));
    rows.push(line);
    let mut counts = vec!["# Words".to_string()];
    counts.extend(report.clusters.iter().map(|c| c.members.to_string()));
    counts.push(String::new());
    rows.push(counts);
    render_rows(&rows)
}

/// Two-decimal percentage summary of the core metrics.
pub fn render_eval_summary(report: &EvalReport) -> String {
    let mut out = format!(
        "Token accuracy:    {}\nSentence accuracy: {}\n",
        fmt_pct(Some(report.token_accuracy)),
        fmt_pct(Some(report.sentence_accuracy)),
    );
    if let (Some(p), Some(r), Some(f)) = (report.chunk_precision, report.chunk_recall, report.chunk_f1)
    {
        out.push_str(&format!(
            "Chunk P/R/F1:      {} / {} / {}\n",
            fmt_pct(Some(p)),
            fmt_pct(Some(r)),
            fmt_pct(Some(f)),
        ));
    }
    out
}
