//! Labeled corpora: CoNLL-style readers and writers, vocabularies with
//! training frequencies, and tagging-scheme conversion (IOB/IOBES).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("invalid tag sequence at position {position}: {message}")]
    Scheme { position: usize, message: String },
    #[error("unknown tag {0:?} (closed tag set)")]
    UnknownTag(String),
    #[error("corpus is empty")]
    EmptyCorpus,
}

/// One labeled token: surface form plus tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub form: String,
    pub tag: String,
}

/// A non-empty token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn forms(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.form.as_str())
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.tag.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }
}

/// Reads the UPOS layer of a CoNLL-U file: ten tab-separated columns,
/// `#` comments, blank lines between sentences. Multiword-token ranges
/// (`3-4`) and empty nodes (`5.1`) are skipped.
pub fn read_conllu(path: impl AsRef<Path>) -> Result<Corpus, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_conllu(&text, &path.display().to_string())
}

pub fn parse_conllu(text: &str, path: &str) -> Result<Corpus, DataError> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            if !tokens.is_empty() {
                sentences.push(Sentence { tokens: std::mem::take(&mut tokens) });
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(DataError::Parse {
                path: path.to_string(),
                line: lineno,
                message: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            // multiword-token range or empty node
            continue;
        }
        if cols[1].is_empty() {
            return Err(DataError::Parse {
                path: path.to_string(),
                line: lineno,
                message: "empty surface form".to_string(),
            });
        }
        tokens.push(Token { form: cols[1].to_string(), tag: cols[3].to_string() });
    }
    if !tokens.is_empty() {
        sentences.push(Sentence { tokens });
    }
    Ok(Corpus { sentences })
}

/// Reads a whitespace-separated columnar file (CoNLL-2000/2003 style).
/// Blank lines separate sentences and `-DOCSTART-` lines are skipped.
pub fn read_conll_columns(
    path: impl AsRef<Path>,
    token_col: usize,
    tag_col: usize,
) -> Result<Corpus, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_conll_columns(&text, &path.display().to_string(), token_col, tag_col)
}

pub fn parse_conll_columns(
    text: &str,
    path: &str,
    token_col: usize,
    tag_col: usize,
) -> Result<Corpus, DataError> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            if !tokens.is_empty() {
                sentences.push(Sentence { tokens: std::mem::take(&mut tokens) });
            }
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols[0] == "-DOCSTART-" {
            continue;
        }
        let needed = token_col.max(tag_col);
        if cols.len() <= needed {
            return Err(DataError::Parse {
                path: path.to_string(),
                line: lineno,
                message: format!("requested column {} but line has only {}", needed, cols.len()),
            });
        }
        tokens.push(Token { form: cols[token_col].to_string(), tag: cols[tag_col].to_string() });
    }
    if !tokens.is_empty() {
        sentences.push(Sentence { tokens });
    }
    Ok(Corpus { sentences })
}

/// Serializes a corpus as CoNLL-U: surface in column 2, tag in column 4,
/// underscores elsewhere.
pub fn write_conllu(corpus: &Corpus) -> String {
    let mut out = String::new();
    for sentence in &corpus.sentences {
        for (i, token) in sentence.tokens.iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t_\t{}\t_\t_\t_\t_\t_\t_\n",
                i + 1,
                token.form,
                token.tag
            ));
        }
        out.push('\n');
    }
    out
}

/// Serializes a corpus in columnar form, placing the surface and tag in the
/// requested columns and `_` in any column between them.
pub fn write_conll_columns(corpus: &Corpus, token_col: usize, tag_col: usize) -> String {
    let width = token_col.max(tag_col) + 1;
    let mut out = String::new();
    for sentence in &corpus.sentences {
        for token in &sentence.tokens {
            let mut cols = vec!["_"; width];
            cols[token_col] = &token.form;
            cols[tag_col] = &token.tag;
            out.push_str(&cols.join(" "));
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

// ---- tagging schemes ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagScheme {
    Iob2,
    Iobes,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum IobTag {
    Outside,
    Begin(String),
    Inside(String),
}

fn parse_iob(tag: &str, position: usize) -> Result<IobTag, DataError> {
    if tag == "O" {
        return Ok(IobTag::Outside);
    }
    match tag.split_once('-') {
        Some(("B", ty)) if !ty.is_empty() => Ok(IobTag::Begin(ty.to_string())),
        Some(("I", ty)) if !ty.is_empty() => Ok(IobTag::Inside(ty.to_string())),
        _ => Err(DataError::Scheme {
            position,
            message: format!("expected O, B-<type> or I-<type>, got {:?}", tag),
        }),
    }
}

/// Converts IOB1/IOB2 tags to IOBES: singleton chunks become `S-`, chunk
/// ends become `E-`, interiors stay `I-`, multi-token chunk starts stay `B-`.
/// An `I-` opening a chunk (legal IOB1) is accepted as a chunk start.
pub fn to_iobes(tags: &[String]) -> Result<Vec<String>, DataError> {
    let parsed: Vec<IobTag> = tags
        .iter()
        .enumerate()
        .map(|(i, t)| parse_iob(t, i))
        .collect::<Result<_, _>>()?;

    // chunk spans as (start, end inclusive, type)
    let mut chunks: Vec<(usize, usize, String)> = Vec::new();
    let mut open: Option<(usize, String)> = None;
    for (i, tag) in parsed.iter().enumerate() {
        match tag {
            IobTag::Outside => {
                if let Some((s, ty)) = open.take() {
                    chunks.push((s, i - 1, ty));
                }
            }
            IobTag::Begin(ty) => {
                if let Some((s, prev)) = open.take() {
                    chunks.push((s, i - 1, prev));
                }
                open = Some((i, ty.clone()));
            }
            IobTag::Inside(ty) => match &open {
                Some((_, prev)) if prev == ty => {}
                _ => {
                    if let Some((s, prev)) = open.take() {
                        chunks.push((s, i - 1, prev));
                    }
                    open = Some((i, ty.clone()));
                }
            },
        }
    }
    if let Some((s, ty)) = open {
        chunks.push((s, tags.len() - 1, ty));
    }

    let mut out = vec!["O".to_string(); tags.len()];
    for (s, e, ty) in chunks {
        if s == e {
            out[s] = format!("S-{}", ty);
        } else {
            out[s] = format!("B-{}", ty);
            out[e] = format!("E-{}", ty);
            for slot in out.iter_mut().take(e).skip(s + 1) {
                *slot = format!("I-{}", ty);
            }
        }
    }
    Ok(out)
}

/// Converts a valid IOBES sequence back to IOB2. Inverse of [`to_iobes`] on
/// IOB2 input.
pub fn to_iob2(tags: &[String]) -> Result<Vec<String>, DataError> {
    // validate strictness while converting
    let mut out = Vec::with_capacity(tags.len());
    let mut open: Option<String> = None;
    for (i, tag) in tags.iter().enumerate() {
        let (prefix, ty) = match tag.split_once('-') {
            Some((p, t)) if !t.is_empty() => (p, Some(t.to_string())),
            None if tag == "O" => ("O", None),
            _ => {
                return Err(DataError::Scheme {
                    position: i,
                    message: format!("malformed IOBES tag {:?}", tag),
                })
            }
        };
        match (prefix, ty) {
            ("O", None) => {
                if open.is_some() {
                    return Err(DataError::Scheme {
                        position: i,
                        message: "chunk not closed before O".to_string(),
                    });
                }
                out.push("O".to_string());
            }
            ("S", Some(ty)) => {
                if open.is_some() {
                    return Err(DataError::Scheme {
                        position: i,
                        message: "chunk not closed before S-".to_string(),
                    });
                }
                out.push(format!("B-{}", ty));
            }
            ("B", Some(ty)) => {
                if open.is_some() {
                    return Err(DataError::Scheme {
                        position: i,
                        message: "chunk not closed before B-".to_string(),
                    });
                }
                out.push(format!("B-{}", ty));
                open = Some(ty);
            }
            ("I", Some(ty)) => match &open {
                Some(prev) if *prev == ty => out.push(format!("I-{}", ty)),
                _ => {
                    return Err(DataError::Scheme {
                        position: i,
                        message: format!("I-{} without open chunk of same type", ty),
                    })
                }
            },
            ("E", Some(ty)) => match open.take() {
                Some(prev) if prev == ty => out.push(format!("I-{}", ty)),
                _ => {
                    return Err(DataError::Scheme {
                        position: i,
                        message: format!("E-{} without open chunk of same type", ty),
                    })
                }
            },
            (p, _) => {
                return Err(DataError::Scheme {
                    position: i,
                    message: format!("unknown prefix {:?}", p),
                })
            }
        }
    }
    if open.is_some() {
        return Err(DataError::Scheme {
            position: tags.len() - 1,
            message: "chunk still open at end of sequence".to_string(),
        });
    }
    Ok(out)
}

// ---- vocabulary ----

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Word/char/tag inventories built from the training split, with per-word
/// training frequencies. Ids are dense and 0-based; id 0 is PAD (batching
/// bookkeeping only) and id 1 is UNK for words and characters. The tag set
/// is closed: looking up an unseen tag is an error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    word_forms: Vec<String>,
    word_index: BTreeMap<String, usize>,
    /// Training counts aligned with `word_forms`; the UNK slot carries the
    /// summed count of all below-threshold training tokens.
    word_counts: Vec<u64>,
    char_forms: Vec<char>,
    char_index: BTreeMap<char, usize>,
    char_counts: Vec<u64>,
    tag_forms: Vec<String>,
    tag_index: BTreeMap<String, usize>,
    /// Raw training counts per surface form, kept for frequency-bucket
    /// analyses even when a form fell below `min_count`.
    train_counts: BTreeMap<String, u64>,
}

impl Vocab {
    /// Builds the vocabulary from a training corpus. Words with fewer than
    /// `min_count` occurrences map to UNK at lookup time; characters and
    /// tags are always kept.
    pub fn build(train: &Corpus, min_count: u64) -> Result<Vocab, DataError> {
        if train.is_empty() {
            return Err(DataError::EmptyCorpus);
        }
        let mut train_counts: BTreeMap<String, u64> = BTreeMap::new();
        let mut word_order: Vec<String> = Vec::new();
        let mut char_forms: Vec<char> = vec!['\u{0}', '\u{1}']; // PAD, UNK placeholders
        let mut char_index: BTreeMap<char, usize> = BTreeMap::new();
        let mut char_counts: Vec<u64> = vec![0, 0];
        let mut tag_forms: Vec<String> = Vec::new();
        let mut tag_index: BTreeMap<String, usize> = BTreeMap::new();

        for sentence in &train.sentences {
            for token in &sentence.tokens {
                let count = train_counts.entry(token.form.clone()).or_insert(0);
                if *count == 0 {
                    word_order.push(token.form.clone());
                }
                *count += 1;
                for ch in token.form.chars() {
                    match char_index.get(&ch) {
                        Some(&id) => char_counts[id] += 1,
                        None => {
                            char_index.insert(ch, char_forms.len());
                            char_counts.push(1);
                            char_forms.push(ch);
                        }
                    }
                }
                if !tag_index.contains_key(&token.tag) {
                    tag_index.insert(token.tag.clone(), tag_forms.len());
                    tag_forms.push(token.tag.clone());
                }
            }
        }

        let mut word_forms = vec!["<PAD>".to_string(), "<UNK>".to_string()];
        let mut word_counts: Vec<u64> = vec![0, 0];
        let mut word_index = BTreeMap::new();
        for form in word_order {
            let count = train_counts[&form];
            if count >= min_count {
                word_index.insert(form.clone(), word_forms.len());
                word_forms.push(form);
                word_counts.push(count);
            } else {
                word_counts[UNK_ID] += count;
            }
        }

        Ok(Vocab {
            word_forms,
            word_index,
            word_counts,
            char_forms,
            char_index,
            char_counts,
            tag_forms,
            tag_index,
            train_counts,
        })
    }

    pub fn word_count(&self) -> usize {
        self.word_forms.len()
    }

    pub fn char_count(&self) -> usize {
        self.char_forms.len()
    }

    pub fn tag_count(&self) -> usize {
        self.tag_forms.len()
    }

    /// Id for a surface form; unseen or below-threshold words map to UNK.
    pub fn word_id(&self, form: &str) -> usize {
        self.word_index.get(form).copied().unwrap_or(UNK_ID)
    }

    /// True when the form has its own row (is not folded into UNK).
    pub fn has_word(&self, form: &str) -> bool {
        self.word_index.contains_key(form)
    }

    pub fn word_form(&self, id: usize) -> &str {
        &self.word_forms[id]
    }

    pub fn char_id(&self, ch: char) -> usize {
        self.char_index.get(&ch).copied().unwrap_or(UNK_ID)
    }

    pub fn tag_id(&self, tag: &str) -> Result<usize, DataError> {
        self.tag_index
            .get(tag)
            .copied()
            .ok_or_else(|| DataError::UnknownTag(tag.to_string()))
    }

    pub fn tag_form(&self, id: usize) -> &str {
        &self.tag_forms[id]
    }

    pub fn tag_forms(&self) -> &[String] {
        &self.tag_forms
    }

    /// Training count of a surface form (0 when unseen in training). This is
    /// the raw count, independent of the `min_count` threshold.
    pub fn train_frequency(&self, form: &str) -> u64 {
        self.train_counts.get(form).copied().unwrap_or(0)
    }

    /// Frequency weights aligned with word rows, for embedding normalization.
    pub fn word_freq_weights(&self) -> Vec<f64> {
        self.word_counts.iter().map(|&c| c as f64).collect()
    }

    /// Frequency weights aligned with char rows.
    pub fn char_freq_weights(&self) -> Vec<f64> {
        self.char_counts.iter().map(|&c| c as f64).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn conllu_block_of_three() {
        let text = "1\tThe\t_\tDET\t_\t_\t_\t_\t_\t_\n2\tcat\t_\tNOUN\t_\t_\t_\t_\t_\t_\n3\tsat\t_\tVERB\t_\t_\t_\t_\t_\t_\n";
        let corpus = parse_conllu(text, "test").unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.sentences[0].len(), 3);
        assert_eq!(corpus.sentences[0].tokens[1].tag, "NOUN");
    }

    #[test]
    fn conllu_skips_ranges_and_empty_nodes() {
        let text = concat!(
            "1\tau\t_\tADP\t_\t_\t_\t_\t_\t_\n",
            "3-4\tdu\t_\t_\t_\t_\t_\t_\t_\t_\n",
            "3\tde\t_\tADP\t_\t_\t_\t_\t_\t_\n",
            "4\tle\t_\tDET\t_\t_\t_\t_\t_\t_\n",
            "5.1\tnul\t_\tX\t_\t_\t_\t_\t_\t_\n",
        );
        let corpus = parse_conllu(text, "test").unwrap();
        assert_eq!(corpus.sentences[0].len(), 3);
        let forms: Vec<&str> = corpus.sentences[0].forms().collect();
        assert_eq!(forms, vec!["au", "de", "le"]);
    }

    #[test]
    fn conllu_two_blocks() {
        let text = "1\ta\t_\tX\t_\t_\t_\t_\t_\t_\n\n1\tb\t_\tY\t_\t_\t_\t_\t_\t_\n";
        let corpus = parse_conllu(text, "test").unwrap();
        assert_eq!(corpus.len(), 2);
    }

    #[test]
    fn conllu_bad_column_count_reports_line() {
        let text = "1\ta\t_\tX\t_\t_\t_\t_\t_\t_\n1\tb\tY\n";
        let err = parse_conllu(text, "test").unwrap_err();
        match err {
            DataError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {:?}", other),
        }
    }

    #[test]
    fn conll_columns_basic() {
        let corpus = parse_conll_columns("the DT B-NP\n", "test", 0, 2).unwrap();
        assert_eq!(corpus.sentences[0].tokens[0].form, "the");
        assert_eq!(corpus.sentences[0].tokens[0].tag, "B-NP");
    }

    #[test]
    fn conll_columns_skips_docstart() {
        let text = "-DOCSTART- -X- O O\n\nEU NNP I-NP I-ORG\n";
        let corpus = parse_conll_columns(text, "test", 0, 3).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.sentences[0].tokens[0].form, "EU");
    }

    #[test]
    fn conll_columns_empty_file() {
        let corpus = parse_conll_columns("", "test", 0, 1).unwrap();
        assert!(corpus.is_empty());
    }

    #[test]
    fn conll_columns_missing_column_reports_line() {
        let err = parse_conll_columns("tok TAG\nshort\n", "test", 0, 1).unwrap_err();
        match err {
            DataError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {:?}", other),
        }
    }

    #[test]
    fn iobes_two_token_chunk() {
        let out = to_iobes(&strs(&["B-NP", "I-NP", "O"])).unwrap();
        assert_eq!(out, strs(&["B-NP", "E-NP", "O"]));
    }

    #[test]
    fn iobes_singleton() {
        let out = to_iobes(&strs(&["B-NP", "O"])).unwrap();
        assert_eq!(out, strs(&["S-NP", "O"]));
    }

    #[test]
    fn iobes_accepts_iob1_chunk_start() {
        // IOB1 allows a chunk to open with I-
        let out = to_iobes(&strs(&["I-NP", "I-NP", "B-NP"])).unwrap();
        assert_eq!(out, strs(&["B-NP", "E-NP", "S-NP"]));
    }

    #[test]
    fn iobes_rejects_malformed_tag() {
        let err = to_iobes(&strs(&["B-NP", "Q-NP"])).unwrap_err();
        match err {
            DataError::Scheme { position, .. } => assert_eq!(position, 1),
            other => panic!("unexpected error {:?}", other),
        }
    }

    #[test]
    fn iob2_round_trip() {
        let iobes = strs(&["S-A", "B-B", "I-B", "E-B", "O", "S-A"]);
        let iob2 = to_iob2(&iobes).unwrap();
        assert_eq!(iob2, strs(&["B-A", "B-B", "I-B", "I-B", "O", "B-A"]));
        assert_eq!(to_iobes(&iob2).unwrap(), iobes);
    }

    #[test]
    fn iob2_rejects_unclosed_chunk() {
        let err = to_iob2(&strs(&["B-A", "I-A"])).unwrap_err();
        assert!(matches!(err, DataError::Scheme { .. }));
    }

    #[test]
    fn vocab_min_count_threshold() {
        let corpus = Corpus {
            sentences: vec![Sentence {
                tokens: vec![
                    Token { form: "a".into(), tag: "X".into() },
                    Token { form: "a".into(), tag: "X".into() },
                    Token { form: "b".into(), tag: "Y".into() },
                ],
            }],
        };
        let vocab = Vocab::build(&corpus, 2).unwrap();
        assert!(vocab.has_word("a"));
        assert_eq!(vocab.word_id("b"), UNK_ID);
        assert_eq!(vocab.train_frequency("a"), 2);
        // UNK inherits the out-of-vocab mass
        assert_eq!(vocab.word_freq_weights()[UNK_ID], 1.0);

        let all = Vocab::build(&corpus, 1).unwrap();
        assert!(all.has_word("a") && all.has_word("b"));
    }

    #[test]
    fn vocab_unseen_word_is_unk_and_unseen_tag_errors() {
        let corpus = Corpus {
            sentences: vec![Sentence {
                tokens: vec![Token { form: "a".into(), tag: "X".into() }],
            }],
        };
        let vocab = Vocab::build(&corpus, 1).unwrap();
        assert_eq!(vocab.word_id("zzz"), UNK_ID);
        assert_eq!(vocab.char_id('ø'), UNK_ID);
        assert!(vocab.tag_id("NOPE").is_err());
        assert_eq!(vocab.tag_id("X").unwrap(), 0);
    }

    #[test]
    fn serialize_round_trip_preserves_content() {
        let corpus = Corpus {
            sentences: vec![
                Sentence {
                    tokens: vec![
                        Token { form: "Une".into(), tag: "DET".into() },
                        Token { form: "idée".into(), tag: "NOUN".into() },
                    ],
                },
                Sentence { tokens: vec![Token { form: "Oui".into(), tag: "INTJ".into() }] },
            ],
        };
        let text = write_conllu(&corpus);
        let back = parse_conllu(&text, "mem").unwrap();
        assert_eq!(back, corpus);

        let cols = write_conll_columns(&corpus, 0, 2);
        let back2 = parse_conll_columns(&cols, "mem", 0, 2).unwrap();
        assert_eq!(back2, corpus);
    }
}
