//! Seeded synthetic corpora from a hidden Markov model, for desk-scale
//! experiments with known ground truth.
//!
//! The stock [`HmmSpec::zipfian`] builder gives each tag its own disjoint
//! lexicon with Zipf-weighted word probabilities, so corpora exercise the
//! whole frequency-bucket range (frequent words, rare words, and test words
//! never seen in training), and every word of a tag shares a two-letter
//! suffix, giving the character encoder a morphological cue for unseen
//! words.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{Corpus, Sentence, Token};

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid HMM spec: {0}")]
    Spec(String),
}

/// A tagged-corpus generator: tag transition matrix plus per-tag word
/// emission distributions over a finite lexicon. The initial tag is drawn
/// uniformly.
#[derive(Debug, Clone)]
pub struct HmmSpec {
    pub tags: Vec<String>,
    /// Row-stochastic `k x k` matrix, `transition[from][to]`.
    pub transition: Vec<Vec<f64>>,
    /// Per-tag `(word, probability)` lists, each summing to 1.
    pub emission: Vec<Vec<(String, f64)>>,
    pub seed: u64,
}

impl HmmSpec {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        let k = self.tags.len();
        if k == 0 {
            return Err(SyntheticError::Spec("no tags".to_string()));
        }
        if self.transition.len() != k || self.emission.len() != k {
            return Err(SyntheticError::Spec(format!(
                "expected {} transition rows and emission lists",
                k
            )));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.len() != k {
                return Err(SyntheticError::Spec(format!("transition row {} has wrong arity", i)));
            }
            if row.iter().any(|&p| p < 0.0) {
                return Err(SyntheticError::Spec(format!("negative probability in row {}", i)));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(SyntheticError::Spec(format!(
                    "transition row {} sums to {}",
                    i, total
                )));
            }
        }
        for (i, dist) in self.emission.iter().enumerate() {
            if dist.is_empty() {
                return Err(SyntheticError::Spec(format!("tag {} has an empty lexicon", i)));
            }
            let total: f64 = dist.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(SyntheticError::Spec(format!("emission {} sums to {}", i, total)));
            }
        }
        Ok(())
    }

    /// A spec with disjoint per-tag lexicons: `lexicon_size` pronounceable
    /// words split across `n_tags` tags, Zipf-weighted within each tag, and
    /// a tag-identifying suffix on every word.
    pub fn zipfian(n_tags: usize, lexicon_size: usize, seed: u64) -> HmmSpec {
        assert!(n_tags >= 1, "need at least one tag");
        assert!(lexicon_size >= n_tags, "need at least one word per tag");
        const SUFFIXES: [&str; 16] = [
            "an", "el", "ir", "os", "um", "yx", "eq", "ot", "iv", "ul", "ab", "en", "ik", "or",
            "us", "yd",
        ];
        const CONSONANTS: [char; 12] = ['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't'];
        const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let tags: Vec<String> = (0..n_tags).map(|t| format!("T{}", t)).collect();
        let mut used = std::collections::BTreeSet::new();
        let mut emission = Vec::with_capacity(n_tags);
        for t in 0..n_tags {
            let share = lexicon_size / n_tags + usize::from(t < lexicon_size % n_tags);
            let suffix = if t < SUFFIXES.len() {
                SUFFIXES[t].to_string()
            } else {
                format!("z{}", t)
            };
            let mut words = Vec::with_capacity(share);
            while words.len() < share {
                let syllables = rng.random_range(1..=3);
                let mut stem = String::new();
                for _ in 0..syllables {
                    stem.push(CONSONANTS[rng.random_range(0..CONSONANTS.len())]);
                    stem.push(VOWELS[rng.random_range(0..VOWELS.len())]);
                }
                let word = format!("{}{}", stem, suffix);
                if used.insert(word.clone()) {
                    words.push(word);
                }
            }
            // Zipf weights over the tag's lexicon
            let weights: Vec<f64> =
                (1..=share).map(|rank| 1.0 / (rank as f64).powf(1.3)).collect();
            let total: f64 = weights.iter().sum();
            emission.push(
                words.into_iter().zip(weights).map(|(w, z)| (w, z / total)).collect::<Vec<_>>(),
            );
        }

        let transition: Vec<Vec<f64>> = (0..n_tags)
            .map(|_| {
                let raw: Vec<f64> = (0..n_tags).map(|_| rng.random_range(0.2..1.0)).collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|w| w / total).collect()
            })
            .collect();

        HmmSpec { tags, transition, emission, seed }
    }

    /// Samples a corpus: `n_sentences` sentences of length uniform in
    /// `[1, max_len]`. Deterministic given the spec's seed.
    pub fn generate(&self, n_sentences: usize, max_len: usize) -> Result<Corpus, SyntheticError> {
        self.validate()?;
        assert!(max_len >= 1, "max_len must be at least 1");
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let k = self.tags.len();
        let mut sentences = Vec::with_capacity(n_sentences);
        for _ in 0..n_sentences {
            let len = rng.random_range(1..=max_len);
            let mut tokens = Vec::with_capacity(len);
            let mut tag = rng.random_range(0..k);
            for position in 0..len {
                if position > 0 {
                    tag = sample_categorical(&mut rng, &self.transition[tag]);
                }
                let word = {
                    let dist = &self.emission[tag];
                    let idx = sample_categorical_pairs(&mut rng, dist);
                    dist[idx].0.clone()
                };
                tokens.push(Token { form: word, tag: self.tags[tag].clone() });
            }
            sentences.push(Sentence { tokens });
        }
        Ok(Corpus { sentences })
    }
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let draw: f64 = rng.random();
    let mut cumulative = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cumulative += p;
        if draw < cumulative {
            return i;
        }
    }
    probs.len() - 1
}

fn sample_categorical_pairs(rng: &mut ChaCha8Rng, dist: &[(String, f64)]) -> usize {
    let draw: f64 = rng.random();
    let mut cumulative = 0.0;
    for (i, (_, p)) in dist.iter().enumerate() {
        cumulative += p;
        if draw < cumulative {
            return i;
        }
    }
    dist.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, BTreeSet};

    #[test]
    fn same_seed_generates_identical_corpora() {
        let spec = HmmSpec::zipfian(4, 40, 7);
        let a = spec.generate(50, 8).unwrap();
        let b = spec.generate(50, 8).unwrap();
        assert_eq!(a, b);
        let other = HmmSpec { seed: 8, ..spec };
        assert_ne!(other.generate(50, 8).unwrap(), a);
    }

    #[test]
    fn disjoint_lexicons_make_tagging_solvable() {
        let spec = HmmSpec::zipfian(5, 60, 3);
        let corpus = spec.generate(200, 10).unwrap();
        let mut word_tags: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for s in &corpus.sentences {
            for t in &s.tokens {
                word_tags.entry(&t.form).or_default().insert(&t.tag);
            }
        }
        for (word, tags) in word_tags {
            assert_eq!(tags.len(), 1, "word {:?} carries several tags", word);
        }
    }

    #[test]
    fn deterministic_single_word_emissions() {
        let spec = HmmSpec {
            tags: vec!["A".into(), "B".into()],
            transition: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            emission: vec![vec![("x".into(), 1.0)], vec![("y".into(), 1.0)]],
            seed: 1,
        };
        let corpus = spec.generate(30, 6).unwrap();
        for s in &corpus.sentences {
            for t in &s.tokens {
                let expected = if t.form == "x" { "A" } else { "B" };
                assert_eq!(t.tag, expected);
            }
        }
    }

    #[test]
    fn empirical_transitions_approach_spec() {
        let spec = HmmSpec::zipfian(3, 30, 11);
        let corpus = spec.generate(10_000, 10).unwrap();
        let k = spec.tags.len();
        let tag_id =
            |name: &str| spec.tags.iter().position(|t| t == name).expect("known tag");
        let mut pair_counts = vec![vec![0usize; k]; k];
        for s in &corpus.sentences {
            for pair in s.tokens.windows(2) {
                pair_counts[tag_id(&pair[0].tag)][tag_id(&pair[1].tag)] += 1;
            }
        }
        for from in 0..k {
            let row_total: usize = pair_counts[from].iter().sum();
            assert!(row_total > 1000, "too few transitions from {}", from);
            for to in 0..k {
                let empirical = pair_counts[from][to] as f64 / row_total as f64;
                assert!(
                    (empirical - spec.transition[from][to]).abs() < 0.02,
                    "transition {}->{}: empirical {} vs spec {}",
                    from,
                    to,
                    empirical,
                    spec.transition[from][to]
                );
            }
        }
    }

    #[test]
    fn generated_corpus_round_trips_through_conllu() {
        let spec = HmmSpec::zipfian(4, 40, 19);
        let corpus = spec.generate(25, 7).unwrap();
        let text = crate::data::write_conllu(&corpus);
        let back = crate::data::parse_conllu(&text, "mem").unwrap();
        assert_eq!(back, corpus);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = HmmSpec::zipfian(2, 10, 1);
        spec.transition[0][0] += 0.5;
        assert!(matches!(spec.generate(1, 1), Err(SyntheticError::Spec(_))));
        let mut spec = HmmSpec::zipfian(2, 10, 1);
        spec.emission[1].clear();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn rare_words_exist_in_large_samples() {
        // Zipf weighting should leave some words seen at most a handful of
        // times even in a 2000-sentence corpus
        let spec = HmmSpec::zipfian(8, 500, 42);
        let corpus = spec.generate(2000, 12).unwrap();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for s in &corpus.sentences {
            for t in &s.tokens {
                *counts.entry(&t.form).or_default() += 1;
            }
        }
        let rare = counts.values().filter(|&&c| c < 10).count();
        assert!(rare > 50, "only {} rare words", rare);
    }
}
