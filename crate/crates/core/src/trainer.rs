//! Mini-batch SGD with classical momentum, `lr0 / (1 + decay * epoch)`
//! scheduling, global-norm gradient clipping and dev-accuracy early
//! stopping. Orchestrates baseline vs. adversarial training.
//!
//! Per-example gradients are summed (not averaged) over each batch of
//! sentences; embedding tables are updated by the same optimizer as the
//! network and CRF parameters. All randomness (shuffling, dropout masks)
//! flows from the one RNG handed to [`train`], so fixed seeds give
//! bit-identical runs. The optional multi-threaded mode fans per-example
//! gradient computation out over worker threads but folds results back in
//! input order, which keeps it deterministic too.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversarial::{adversarial_loss, AdvConfig};
use crate::data::Corpus;
use crate::model::{GradientSet, ModelError, ModelStats, TaggerModel};
use crate::network::DropoutMasks;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, sentence {sentence_index}")]
    NonFiniteLoss { epoch: usize, sentence_index: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0} corpus is empty")]
    EmptyCorpus(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// When normalization stats are recomputed from the embedding tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsRefresh {
    Batch,
    Epoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub clip_threshold: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Divide the batch gradient sum by the batch length before stepping.
    pub average_batch: bool,
    pub stats_refresh: StatsRefresh,
    /// Worker threads for per-example gradient computation.
    pub threads: usize,
    /// Weight character normalization by corpus character frequency instead
    /// of uniformly.
    pub char_freq_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 10,
            momentum: 0.9,
            learning_rate: 0.01,
            decay_rate: 0.05,
            clip_threshold: 5.0,
            dropout: 0.5,
            max_epochs: 50,
            patience: 5,
            seed: 42,
            average_batch: false,
            stats_refresh: StatsRefresh::Batch,
            threads: 1,
            char_freq_weighting: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let checks = [
            (self.batch_size >= 1, "batch_size must be at least 1"),
            (self.learning_rate > 0.0, "learning_rate must be positive"),
            ((0.0..1.0).contains(&self.momentum), "momentum must lie in [0, 1)"),
            (self.decay_rate >= 0.0, "decay_rate must be nonnegative"),
            (self.clip_threshold > 0.0, "clip_threshold must be positive"),
            ((0.0..1.0).contains(&self.dropout), "dropout must lie in [0, 1)"),
            (self.max_epochs >= 1, "max_epochs must be at least 1"),
            (self.patience >= 1, "patience must be at least 1"),
            (self.threads >= 1, "threads must be at least 1"),
        ];
        for (ok, message) in checks {
            if !ok {
                return Err(TrainError::Config(message.to_string()));
            }
        }
        Ok(())
    }
}

/// Optimizer state carried across epochs.
pub struct TrainState {
    pub epoch: usize,
    pub velocity: Vec<Tensor>,
    pub best_dev_accuracy: f64,
    pub best_dev_nll: f64,
    pub epochs_since_improvement: usize,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(model: &TaggerModel, rng: ChaCha8Rng) -> Self {
        TrainState {
            epoch: 0,
            velocity: model
                .named_tensors()
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
                .collect(),
            best_dev_accuracy: f64::NEG_INFINITY,
            best_dev_nll: f64::INFINITY,
            epochs_since_improvement: 0,
            rng,
        }
    }
}

/// One line of the per-epoch training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_accuracy: f64,
}

/// What [`train`] hands back: the best-dev checkpoint and the full log.
pub struct TrainOutcome {
    pub best_model: TaggerModel,
    pub log: Vec<EpochRecord>,
    pub best_dev_accuracy: f64,
    /// Lowest mean dev NLL observed across epochs.
    pub best_dev_nll: f64,
    pub epochs_run: usize,
}

/// `lr0 / (1 + decay * epoch)`, epoch 0-based.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.learning_rate / (1.0 + cfg.decay_rate * epoch as f64)
}

/// Scales the whole gradient set so its global L2 norm does not exceed
/// `threshold`. Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut GradientSet, threshold: f64) -> f64 {
    assert!(threshold > 0.0, "clip threshold must be positive");
    let norm = grads.global_norm();
    if norm > threshold {
        grads.scale(threshold / norm);
    }
    norm
}

/// Classical momentum on one flat parameter buffer:
/// `v = momentum * v - lr * g; p += v`.
pub fn sgd_momentum_step(
    param: &mut [f64],
    grad: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
) {
    for ((p, v), g) in param.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
}

/// Applies one optimizer step to every trainable tensor of the model.
pub fn apply_update(
    model: &mut TaggerModel,
    grads: &GradientSet,
    velocity: &mut [Tensor],
    lr: f64,
    momentum: f64,
) {
    for (((_, param), vel), grad) in model
        .named_tensors_mut()
        .into_iter()
        .zip(velocity.iter_mut())
        .zip(&grads.tensors)
    {
        sgd_momentum_step(param.data_mut(), grad.data(), vel.data_mut(), lr, momentum);
    }
}

fn sentence_gradients(
    model: &TaggerModel,
    sentence: &crate::data::Sentence,
    masks: &DropoutMasks,
    stats: &ModelStats,
    adv: &AdvConfig,
) -> Result<(f64, GradientSet), ModelError> {
    if adv.enabled {
        let outcome = adversarial_loss(model, sentence, masks, stats, adv)?;
        Ok((outcome.mixed_loss, outcome.gradients))
    } else {
        model.sentence_loss(sentence, masks, stats)
    }
}

/// Computes per-sentence losses and gradients for one batch, in input
/// order. With `threads > 1` the work fans out over scoped threads, but
/// results come back position-indexed, so the fold order (and therefore the
/// result) is identical to the single-threaded mode.
fn batch_gradients(
    model: &TaggerModel,
    corpus: &Corpus,
    jobs: &[(usize, DropoutMasks)],
    stats: &ModelStats,
    adv: &AdvConfig,
    threads: usize,
) -> Vec<Result<(f64, GradientSet), ModelError>> {
    if threads <= 1 || jobs.len() <= 1 {
        return jobs
            .iter()
            .map(|(idx, masks)| {
                sentence_gradients(model, &corpus.sentences[*idx], masks, stats, adv)
            })
            .collect();
    }
    let chunk = jobs.len().div_ceil(threads);
    let mut results: Vec<Result<(f64, GradientSet), ModelError>> = Vec::with_capacity(jobs.len());
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|slice| {
                scope.spawn(move || {
                    slice
                        .iter()
                        .map(|(idx, masks)| {
                            sentence_gradients(model, &corpus.sentences[*idx], masks, stats, adv)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for handle in handles {
            results.extend(handle.join().expect("worker thread panicked"));
        }
    });
    results
}

/// Dev-set token accuracy and mean NLL under the current parameters.
fn dev_metrics(model: &TaggerModel, dev: &Corpus) -> Result<(f64, f64), TrainError> {
    let stats = model.stats();
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut nll_sum = 0.0;
    for sentence in &dev.sentences {
        let path = model.decode(sentence, &stats)?;
        for (token, tag_id) in sentence.tokens.iter().zip(&path) {
            if model.vocab.tag_form(*tag_id) == token.tag {
                correct += 1;
            }
            total += 1;
        }
        nll_sum += model.sentence_nll(sentence, &stats)?;
    }
    Ok((correct as f64 / total as f64, nll_sum / dev.len() as f64))
}

/// Trains the model in place, returning the best-dev-accuracy checkpoint
/// and the per-epoch log. Stops early after `patience` epochs without a
/// dev-accuracy improvement.
pub fn train(
    model: &mut TaggerModel,
    train_corpus: &Corpus,
    dev_corpus: &Corpus,
    cfg: &TrainConfig,
    adv: &AdvConfig,
    rng: ChaCha8Rng,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    adv.validate().map_err(TrainError::Config)?;
    if train_corpus.is_empty() {
        return Err(TrainError::EmptyCorpus("train"));
    }
    if dev_corpus.is_empty() {
        return Err(TrainError::EmptyCorpus("dev"));
    }
    // the trainer owns the dropout rate
    model.arch.dropout = cfg.dropout;

    let mut state = TrainState::new(model, rng);
    let mut order: Vec<usize> = (0..train_corpus.len()).collect();
    let mut log = Vec::new();
    let mut best_json = model.to_checkpoint_json();

    for epoch in 0..cfg.max_epochs {
        state.epoch = epoch;
        let lr = lr_schedule(epoch, cfg);
        order.shuffle(&mut state.rng);

        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        let mut stats = model.stats();
        for batch in order.chunks(cfg.batch_size) {
            if cfg.stats_refresh == StatsRefresh::Batch {
                stats = model.stats();
            }
            // masks are drawn serially so the RNG stream is identical in
            // every threading mode
            let jobs: Vec<(usize, DropoutMasks)> = batch
                .iter()
                .map(|&idx| {
                    let n = train_corpus.sentences[idx].len();
                    (idx, DropoutMasks::sample(&model.arch, n, &mut state.rng))
                })
                .collect();
            let results = batch_gradients(model, train_corpus, &jobs, &stats, adv, cfg.threads);

            let mut batch_grads = GradientSet::zeros_like(model);
            for ((idx, _), result) in jobs.iter().zip(results) {
                let (loss, grads) = result?;
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss { epoch, sentence_index: *idx });
                }
                loss_sum += loss;
                loss_count += 1;
                batch_grads.add_assign(&grads);
            }
            if cfg.average_batch {
                batch_grads.scale(1.0 / batch.len() as f64);
            }
            clip_gradients(&mut batch_grads, cfg.clip_threshold);
            apply_update(model, &batch_grads, &mut state.velocity, lr, cfg.momentum);
        }

        let (dev_accuracy, dev_loss) = dev_metrics(model, dev_corpus)?;
        log.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / loss_count as f64,
            dev_loss,
            dev_accuracy,
        });
        log::info!(
            "epoch {}: lr {:.6} train_loss {:.4} dev_loss {:.4} dev_acc {:.4}",
            epoch,
            lr,
            loss_sum / loss_count as f64,
            dev_loss,
            dev_accuracy
        );

        state.best_dev_nll = state.best_dev_nll.min(dev_loss);
        if dev_accuracy > state.best_dev_accuracy {
            state.best_dev_accuracy = dev_accuracy;
            state.epochs_since_improvement = 0;
            best_json = model.to_checkpoint_json();
        } else {
            state.epochs_since_improvement += 1;
            if state.epochs_since_improvement >= cfg.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        best_model: TaggerModel::from_checkpoint_json(&best_json)?,
        best_dev_accuracy: state.best_dev_accuracy,
        best_dev_nll: state.best_dev_nll,
        epochs_run: log.len(),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Sentence, Token, Vocab};
    use crate::embeddings::{init_char_table, init_word_table};
    use crate::network::TaggerArchitecture;
    use rand::SeedableRng;

    fn corpus(rows: &[&[(&str, &str)]]) -> Corpus {
        Corpus {
            sentences: rows
                .iter()
                .map(|words| Sentence {
                    tokens: words
                        .iter()
                        .map(|(w, t)| Token { form: w.to_string(), tag: t.to_string() })
                        .collect(),
                })
                .collect(),
        }
    }

    fn tiny_model(train: &Corpus, seed: u64) -> TaggerModel {
        let vocab = Vocab::build(train, 1).unwrap();
        let arch = TaggerArchitecture {
            word_dim: 6,
            char_dim: 4,
            char_hidden: 3,
            word_hidden: 4,
            tag_count: vocab.tag_count(),
            dropout: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let word_table = init_word_table(&vocab, arch.word_dim, &mut rng);
        let char_table = init_char_table(&vocab, arch.char_dim, false, &mut rng);
        TaggerModel::new(arch, vocab, word_table, char_table, &mut rng).unwrap()
    }

    #[test]
    fn lr_schedule_follows_decay_form() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg), 0.01);
        assert!((lr_schedule(1, &cfg) - 0.01 / 1.05).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for epoch in 0..100 {
            let lr = lr_schedule(epoch, &cfg);
            assert!(lr < prev && lr > 0.0);
            prev = lr;
        }
    }

    #[test]
    fn clip_leaves_boundary_norm_alone() {
        let mut grads = GradientSet { tensors: vec![Tensor::vector(vec![3.0, 4.0])] };
        let norm = clip_gradients(&mut grads, 5.0);
        assert_eq!(norm, 5.0);
        assert_eq!(grads.tensors[0].data(), &[3.0, 4.0]);
    }

    #[test]
    fn clip_scales_down_to_threshold() {
        let mut grads = GradientSet { tensors: vec![Tensor::vector(vec![6.0, 8.0])] };
        clip_gradients(&mut grads, 5.0);
        assert_eq!(grads.tensors[0].data(), &[3.0, 4.0]);
    }

    #[test]
    fn clip_never_exceeds_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        use rand::Rng;
        for _ in 0..50 {
            let data: Vec<f64> = (0..10).map(|_| rng.random_range(-20.0..20.0)).collect();
            let mut grads = GradientSet { tensors: vec![Tensor::vector(data)] };
            clip_gradients(&mut grads, 5.0);
            assert!(grads.global_norm() <= 5.0 + 1e-12);
        }
    }

    #[test]
    fn momentum_first_step_is_plain_descent() {
        let mut p = [1.0];
        let mut v = [0.0];
        sgd_momentum_step(&mut p, &[2.0], &mut v, 0.1, 0.9);
        assert!((p[0] - 0.8).abs() < 1e-15);
        assert!((v[0] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn momentum_velocity_decays_geometrically() {
        let mut p = [0.0];
        let mut v = [1.0];
        for step in 1..=5 {
            sgd_momentum_step(&mut p, &[0.0], &mut v, 0.1, 0.9);
            assert!((v[0] - 0.9_f64.powi(step)).abs() < 1e-12);
        }
    }

    #[test]
    fn momentum_two_steps_on_quadratic() {
        // f(x) = x^2 / 2, grad = x, from x = 1 with lr 0.1, momentum 0.9
        let mut x = [1.0];
        let mut v = [0.0];
        sgd_momentum_step(&mut x, &[1.0], &mut v, 0.1, 0.9);
        assert!((x[0] - 0.9).abs() < 1e-12);
        let grad = x[0];
        sgd_momentum_step(&mut x, &[grad], &mut v, 0.1, 0.9);
        assert!((x[0] - 0.72).abs() < 1e-12, "x after two steps = {}", x[0]);
    }

    fn small_corpus() -> Corpus {
        corpus(&[
            &[("aa", "X"), ("bb", "Y")],
            &[("bb", "Y"), ("aa", "X")],
            &[("aa", "X"), ("aa", "X"), ("bb", "Y")],
            &[("bb", "Y")],
        ])
    }

    fn quick_cfg(max_epochs: usize) -> TrainConfig {
        TrainConfig { max_epochs, patience: max_epochs, dropout: 0.1, ..TrainConfig::default() }
    }

    #[test]
    fn overfits_a_single_sentence() {
        let data = corpus(&[&[("aa", "X"), ("bb", "Y"), ("aa", "X")]]);
        let mut model = tiny_model(&data, 11);
        let cfg = quick_cfg(50);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let out = train(&mut model, &data, &data, &cfg, &AdvConfig::default(), rng).unwrap();
        assert_eq!(out.best_dev_accuracy, 1.0, "log: {:?}", out.log.last());
    }

    #[test]
    fn loss_decreases_over_first_epochs() {
        let data = small_corpus();
        let mut model = tiny_model(&data, 12);
        let cfg = quick_cfg(5);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let out = train(&mut model, &data, &data, &cfg, &AdvConfig::default(), rng).unwrap();
        assert!(out.log.len() == 5);
        assert!(
            out.log[4].train_loss < out.log[0].train_loss,
            "first {} last {}",
            out.log[0].train_loss,
            out.log[4].train_loss
        );
    }

    #[test]
    fn fixed_seed_runs_are_bit_identical() {
        let data = small_corpus();
        let cfg = quick_cfg(3);
        let mut a = tiny_model(&data, 13);
        let mut b = tiny_model(&data, 13);
        let out_a = train(
            &mut a,
            &data,
            &data,
            &cfg,
            &AdvConfig::default(),
            ChaCha8Rng::seed_from_u64(cfg.seed),
        )
        .unwrap();
        let out_b = train(
            &mut b,
            &data,
            &data,
            &cfg,
            &AdvConfig::default(),
            ChaCha8Rng::seed_from_u64(cfg.seed),
        )
        .unwrap();
        assert_eq!(a.to_checkpoint_json(), b.to_checkpoint_json());
        assert_eq!(out_a.log, out_b.log);
    }

    #[test]
    fn alpha_zero_adversarial_matches_baseline_exactly() {
        let data = small_corpus();
        let cfg = quick_cfg(3);
        let mut baseline = tiny_model(&data, 14);
        let mut adversarial = tiny_model(&data, 14);
        train(
            &mut baseline,
            &data,
            &data,
            &cfg,
            &AdvConfig { enabled: false, ..AdvConfig::default() },
            ChaCha8Rng::seed_from_u64(cfg.seed),
        )
        .unwrap();
        train(
            &mut adversarial,
            &data,
            &data,
            &cfg,
            &AdvConfig { alpha: 0.0, gamma: 0.5, enabled: true },
            ChaCha8Rng::seed_from_u64(cfg.seed),
        )
        .unwrap();
        assert_eq!(baseline.to_checkpoint_json(), adversarial.to_checkpoint_json());
    }

    #[test]
    fn parallel_mode_matches_single_threaded() {
        let data = small_corpus();
        let cfg = quick_cfg(2);
        let parallel_cfg = TrainConfig { threads: 3, ..cfg.clone() };
        let mut a = tiny_model(&data, 15);
        let mut b = tiny_model(&data, 15);
        let out_a = train(
            &mut a,
            &data,
            &data,
            &cfg,
            &AdvConfig::default(),
            ChaCha8Rng::seed_from_u64(cfg.seed),
        )
        .unwrap();
        let out_b = train(
            &mut b,
            &data,
            &data,
            &parallel_cfg,
            &AdvConfig::default(),
            ChaCha8Rng::seed_from_u64(cfg.seed),
        )
        .unwrap();
        assert_eq!(a.to_checkpoint_json(), b.to_checkpoint_json());
        assert_eq!(out_a.log, out_b.log);
    }

    #[test]
    fn log_schema_is_complete() {
        let data = small_corpus();
        let mut model = tiny_model(&data, 16);
        let cfg = quick_cfg(1);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let out = train(&mut model, &data, &data, &cfg, &AdvConfig::default(), rng).unwrap();
        let json = serde_json::to_value(&out.log[0]).unwrap();
        for key in ["epoch", "lr", "train_loss", "dev_loss", "dev_accuracy"] {
            assert!(json.get(key).is_some(), "missing {}", key);
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let bad = TrainConfig { patience: 0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { dropout: 1.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }
}
