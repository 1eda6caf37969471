//! Nested low-resource subsets and the multi-seed comparison protocol:
//! smaller training splits are prefixes of larger ones under a single seeded
//! shuffle, and the protocol reports mean and spread of the test metric per
//! variant, split, and task.

use mtcrf::corpus::{sample_low_resource, SplitSize, SplitSpec};
use mtcrf::eval::ComparisonReport;
use mtcrf::model::Variant;
use mtcrf::synth::{two_task_corpus, TwoTaskConfig};
use mtcrf::train::{multi_seed_protocol, Grid, ProtocolOptions, TrainConfig};
use mtcrf::{BpConfig, FeatureConfig};

fn main() {
    let generator = TwoTaskConfig {
        seed: 42,
        ..TwoTaskConfig::default()
    };
    let corpus = two_task_corpus(&generator, 300, 60, 120);

    let spec = SplitSpec {
        sizes: vec![SplitSize::N(50), SplitSize::N(150), SplitSize::Full],
        seed: 13,
    };
    let subsets = sample_low_resource(&corpus.train, &spec).unwrap();
    println!("nested subsets from one shuffle of {} sentences:", corpus.train.len());
    for (size, subset) in spec.sizes.iter().zip(&subsets) {
        println!("  {size}: {} sentences, first tokens {:?}", subset.len(), subset[0].tokens[..3].to_vec());
    }
    // Prefix nesting: the 50-sentence split is the head of the 150-sentence
    // split. A full-size split keeps the original corpus order instead.
    assert_eq!(subsets[0][..], subsets[1][..50]);
    assert_eq!(subsets[2], corpus.train);

    let base = TrainConfig {
        learning_rate: 0.02,
        batch_size: 8,
        max_epochs: 60,
        patience: 10,
        clip_norm: 5.0,
        seeds: vec![1, 2],
        variant: Variant::Mh,
        grid: Grid {
            hidden_dims: vec![24],
            batch_sizes: vec![8],
            num_layers: vec![1],
        },
        feature: FeatureConfig {
            embedding_dim: 12,
            char_ngram_orders: vec![2],
            hash_buckets: 128,
            window: 1,
            hidden_dim: 24,
            num_layers: 1,
            seed: 0,
        },
    };
    let options = ProtocolOptions {
        variants: vec![Variant::Mh, Variant::Wfac],
        splits: vec![SplitSize::N(100), SplitSize::Full],
        split_seed: 7,
        num_settings: 1,
        setting_seed: 1,
        bp: BpConfig::default(),
    };
    println!("\nrunning {} variants x {} splits x {} seeds...", options.variants.len(), options.splits.len(), base.seeds.len());
    let outcome = multi_seed_protocol(&corpus, &options, &base).unwrap();
    let report = ComparisonReport::from_points(&outcome.points).unwrap();
    println!("\n{}", report.to_text());
}
