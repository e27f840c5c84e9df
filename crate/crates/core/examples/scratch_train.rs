// Scratch harness for tuning the desk-scale synthetic run.

use advtag::adversarial::AdvConfig;
use advtag::data::Vocab;
use advtag::embeddings::{init_char_table, init_word_table};
use advtag::eval::token_accuracy;
use advtag::model::TaggerModel;
use advtag::network::TaggerArchitecture;
use advtag::synthetic::HmmSpec;
use advtag::trainer::{train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let train_n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let adv_enabled: bool = args.get(3).map(|s| s == "adv").unwrap_or(false);
    let seed: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(42);

    let spec = HmmSpec::zipfian(8, 500, 12345);
    let full = spec.generate(train_n + 400, 12).unwrap();
    let mut sentences = full.sentences;
    let test = advtag::data::Corpus { sentences: sentences.split_off(train_n + 200) };
    let dev = advtag::data::Corpus { sentences: sentences.split_off(train_n) };
    let train_corpus = advtag::data::Corpus { sentences };

    let vocab = Vocab::build(&train_corpus, 1).unwrap();
    println!(
        "train {} dev {} test {} | vocab {} words {} chars {} tags",
        train_corpus.len(),
        dev.len(),
        test.len(),
        vocab.word_count(),
        vocab.char_count(),
        vocab.tag_count()
    );

    let arch = TaggerArchitecture {
        word_dim: 32,
        char_dim: 16,
        char_hidden: 16,
        word_hidden: 32,
        tag_count: vocab.tag_count(),
        dropout: 0.5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let word_table = init_word_table(&vocab, arch.word_dim, &mut rng);
    let char_table = init_char_table(&vocab, arch.char_dim, false, &mut rng);
    let mut model = TaggerModel::new(arch, vocab, word_table, char_table, &mut rng).unwrap();

    let cfg = TrainConfig { max_epochs: epochs, patience: epochs, ..TrainConfig::default() };
    let adv = AdvConfig { enabled: adv_enabled, ..AdvConfig::default() };
    let started = Instant::now();
    let out = train(&mut model, &train_corpus, &dev, &cfg, &adv, rng).unwrap();
    let elapsed = started.elapsed();
    for rec in &out.log {
        println!(
            "epoch {:2} lr {:.5} train {:.4} dev {:.4} acc {:.4}",
            rec.epoch, rec.lr, rec.train_loss, rec.dev_loss, rec.dev_accuracy
        );
    }
    let predicted = out.best_model.tag_corpus(&test).unwrap();
    let acc = token_accuracy(&test, &predicted).unwrap();
    println!(
        "best dev acc {:.4} | best dev nll {:.4} | TEST acc {:.4} | {:.1}s ({:.2}s/epoch)",
        out.best_dev_accuracy,
        out.best_dev_nll,
        acc,
        elapsed.as_secs_f64(),
        elapsed.as_secs_f64() / out.epochs_run as f64
    );
}
