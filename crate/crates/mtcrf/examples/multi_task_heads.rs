//! One shared feature function, one chain CRF head per task: train a
//! multi-head model briefly on the synthetic two-task corpus, tag a test
//! sentence, and report per-task metrics.

use mtcrf::eval::evaluate;
use mtcrf::model::{Tagger, Variant};
use mtcrf::synth::{two_task_corpus, TwoTaskConfig};
use mtcrf::train::{train_model, Grid, TrainConfig};
use mtcrf::{BpConfig, FeatureConfig};

fn main() {
    let corpus = two_task_corpus(&TwoTaskConfig::default(), 200, 40, 60);
    let config = TrainConfig {
        learning_rate: 0.02,
        batch_size: 8,
        max_epochs: 12,
        patience: 4,
        clip_norm: 5.0,
        seeds: vec![1],
        variant: Variant::Mh,
        grid: Grid {
            hidden_dims: vec![16],
            batch_sizes: vec![8],
            num_layers: vec![1],
        },
        feature: FeatureConfig {
            embedding_dim: 10,
            char_ngram_orders: vec![2],
            hash_buckets: 128,
            window: 1,
            hidden_dim: 16,
            num_layers: 1,
            seed: 1,
        },
    };
    let mut tagger = Tagger::from_corpus(
        Variant::Mh,
        &config.feature,
        &corpus.schema,
        &corpus.train,
        BpConfig::default(),
    );
    let record = train_model(&mut tagger, &corpus, &config, 1).unwrap();
    println!(
        "trained {} epochs, best dev loss {:.4} at epoch {}",
        record.epochs.len(),
        record.best_dev_loss,
        record.best_epoch
    );

    // The featurizer runs once per sentence; every head decodes its own
    // label sequence from the same feature matrix.
    let sentence = &corpus.test[0];
    let predicted = tagger.predict(&sentence.tokens);
    println!("\n{:<8} {:<8} {:<8} {:<8} {:<8}", "token", "state", "gold", "mwe", "gold");
    for (t, token) in sentence.tokens.iter().enumerate() {
        println!(
            "{:<8} {:<8} {:<8} {:<8} {:<8}",
            token,
            corpus.schema.tasks[0].decode(predicted[0][t]),
            corpus.schema.tasks[0].decode(sentence.gold[0][t]),
            corpus.schema.tasks[1].decode(predicted[1][t]),
            corpus.schema.tasks[1].decode(sentence.gold[1][t]),
        );
    }

    let predictions: Vec<_> = corpus
        .test
        .iter()
        .map(|s| tagger.predict(&s.tokens))
        .collect();
    let report = evaluate(&corpus.schema, &corpus.test, &predictions).unwrap();
    println!("\ntest metrics:");
    for task in &report.tasks {
        println!(
            "  {}: precision {:.4} recall {:.4} f1 {:.4} token accuracy {:.4}",
            task.task, task.precision, task.recall, task.f1, task.token_accuracy
        );
    }
}
