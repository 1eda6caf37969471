//! Merging a pre-computed auxiliary label column into a gold corpus. The
//! silver labels arrive as one-column files in the same tab-separated
//! format; merging appends them as an extra task, after which any coupled
//! variant can train on the pair.

use mtcrf::corpus::{
    merge_silver_labels, read_conll, write_conll, Corpus, SchemaSource, SilverColumn,
};
use mtcrf::eval::evaluate;
use mtcrf::model::{Tagger, Variant};
use mtcrf::synth::{two_task_corpus, TwoTaskConfig};
use mtcrf::train::{train_model, Grid, TrainConfig};
use mtcrf::{BpConfig, FeatureConfig, MultiTaskSentence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn train_quick(corpus: &Corpus, variant: Variant) -> f64 {
    let config = TrainConfig {
        learning_rate: 0.02,
        batch_size: 8,
        max_epochs: 20,
        patience: 6,
        clip_norm: 5.0,
        seeds: vec![1],
        variant,
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
            seed: 1,
        },
    };
    let mut tagger = Tagger::from_corpus(
        variant,
        &config.feature,
        &corpus.schema,
        &corpus.train,
        BpConfig::default(),
    );
    train_model(&mut tagger, corpus, &config, 1).unwrap();
    let predictions: Vec<_> = corpus
        .test
        .iter()
        .map(|s| tagger.predict(&s.tokens))
        .collect();
    let report = evaluate(&corpus.schema, &corpus.test, &predictions).unwrap();
    report.task("mwe").unwrap().f1
}

fn main() {
    // The gold corpus carries only the target task; the auxiliary labels
    // exist in a separate one-column file, as if an external tagger wrote
    // them. Here that file is simulated by degrading the generator's state
    // column with 8% uniform noise.
    let full = two_task_corpus(&TwoTaskConfig::default(), 100, 30, 60);
    let base = full.project_task(1);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let num_states = full.schema.tasks[0].size();
    let degrade = |sentences: &[MultiTaskSentence], rng: &mut ChaCha8Rng| {
        sentences
            .iter()
            .map(|s| MultiTaskSentence {
                tokens: s.tokens.clone(),
                gold: vec![s
                    .gold[0]
                    .iter()
                    .map(|&y| {
                        if rng.gen::<f64>() < 0.08 {
                            rng.gen_range(0..num_states)
                        } else {
                            y
                        }
                    })
                    .collect()],
            })
            .collect::<Vec<_>>()
    };
    let silver_schema = full.schema.tasks[0].clone();
    let silver_only =
        mtcrf::tagset::MultiTaskSchema::new(vec![silver_schema.clone()]).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut silver = SilverColumn::default();
    for (name, part, slot) in [
        ("train", &full.train, &mut silver.train),
        ("dev", &full.dev, &mut silver.dev),
        ("test", &full.test, &mut silver.test),
    ] {
        let path = dir.path().join(format!("silver.{name}.conll"));
        write_conll(&silver_only, &degrade(part, &mut rng), &path).unwrap();
        let read = read_conll(&path, SchemaSource::Fixed(&silver_only)).unwrap();
        *slot = read.sentences.into_iter().map(|s| s.gold.into_iter().next().unwrap()).collect();
    }

    let merged = merge_silver_labels(&base, &silver, silver_schema).unwrap();
    println!(
        "base tasks: {:?}",
        base.schema.tasks.iter().map(|t| t.name.as_str()).collect::<Vec<_>>()
    );
    println!(
        "merged tasks: {:?}",
        merged.schema.tasks.iter().map(|t| t.name.as_str()).collect::<Vec<_>>()
    );

    let alone = train_quick(&base, Variant::St);
    let coupled = train_quick(&merged, Variant::Wfac);
    println!("\ntarget-task span F1 with 100 training sentences:");
    println!("  single task, gold only:        {alone:.4}");
    println!("  coupled to silver auxiliary:   {coupled:.4}");
}
