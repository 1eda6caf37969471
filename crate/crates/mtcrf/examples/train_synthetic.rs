//! Anatomy of one training run: linear warmup over the first epoch, global
//! gradient-norm clipping at 5.0, dev-loss early stopping with checkpoint
//! restore, and the final span scores of the restored model.

use mtcrf::model::{Tagger, Variant};
use mtcrf::synth::{two_task_corpus, TwoTaskConfig};
use mtcrf::train::{clip_global_norm, scheduled_lr, train_model, Grid, TrainConfig};
use mtcrf::{BpConfig, FeatureConfig};

fn main() {
    let corpus = two_task_corpus(&TwoTaskConfig::default(), 120, 40, 60);
    let config = TrainConfig {
        learning_rate: 0.02,
        batch_size: 8,
        max_epochs: 40,
        patience: 5,
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

    // The schedule (1-indexed positions) ramps linearly across the first
    // epoch and holds at base afterwards.
    let steps = corpus.train.len().div_ceil(config.batch_size);
    println!("learning-rate schedule (base {}, {steps} steps/epoch):", config.learning_rate);
    for (epoch, step) in [(1, 1), (1, steps / 2), (1, steps), (2, 1), (6, 4)] {
        let lr = scheduled_lr(config.learning_rate, epoch, step, steps);
        println!("  epoch {epoch} step {step:>2}: lr = {lr:.6}");
    }

    // Clipping rescales to norm 5.0 only when the norm exceeds it.
    let mut big = vec![3.0, 4.0, 12.0];
    let norm = clip_global_norm(&mut big, 5.0);
    println!("\nclipping [3, 4, 12]: pre-norm {norm:.4}, post {big:?}");
    let mut small = vec![0.3, 0.4];
    let norm = clip_global_norm(&mut small, 5.0);
    println!("clipping [0.3, 0.4]: pre-norm {norm:.4}, post {small:?} (unchanged)");

    let mut tagger = Tagger::from_corpus(
        config.variant,
        &config.feature,
        &corpus.schema,
        &corpus.train,
        BpConfig::default(),
    );
    let record = train_model(&mut tagger, &corpus, &config, 1).unwrap();

    println!("\nepoch  train loss  dev loss");
    for e in &record.epochs {
        let marker = if e.epoch == record.best_epoch { "  <- restored" } else { "" };
        println!("{:>5}  {:>10.4}  {:>8.4}{marker}", e.epoch, e.train_loss, e.dev_loss);
    }
    println!(
        "\nstopped after epoch {} (patience {}), restored epoch {} checkpoint",
        record.epochs.last().unwrap().epoch,
        config.patience,
        record.best_epoch,
    );

    println!("\ntest scores of the restored model:");
    for task in &record.test.tasks {
        println!(
            "  {:<6} {:?}: precision {:.4}  recall {:.4}  f1 {:.4}  token accuracy {:.4}",
            task.task, task.scheme, task.precision, task.recall, task.f1, task.token_accuracy,
        );
    }
}
