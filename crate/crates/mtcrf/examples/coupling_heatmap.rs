//! Exporting learned coupling strengths as a pair of heatmap tables. The
//! positive file keeps attractive (score-raising) pairs, the negative file
//! repulsive ones; cell sums across the two files equal the stored matrix.

use mtcrf::eval::export_coupling_heatmap;
use mtcrf::model::{Tagger, Variant};
use mtcrf::synth::{two_task_corpus, TwoTaskConfig};
use mtcrf::train::{train_model, Grid, TrainConfig};
use mtcrf::{BpConfig, FeatureConfig};

fn main() {
    let corpus = two_task_corpus(&TwoTaskConfig::default(), 200, 40, 40);
    let config = TrainConfig {
        learning_rate: 0.02,
        batch_size: 8,
        max_epochs: 15,
        patience: 6,
        clip_norm: 5.0,
        seeds: vec![1],
        variant: Variant::Wfac,
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
        config.variant,
        &config.feature,
        &corpus.schema,
        &corpus.train,
        BpConfig::default(),
    );
    let record = train_model(&mut tagger, &corpus, &config, 1).unwrap();
    println!(
        "trained {} for {} epochs, best dev loss {:.4}",
        config.variant.as_str(),
        record.epochs.len(),
        record.best_dev_loss,
    );

    let model = match &tagger {
        Tagger::Factorial(m) => m,
        Tagger::MultiHead(_) => unreachable!("wfac builds a factorial model"),
    };
    let dir = tempfile::tempdir().unwrap();
    let (pos, neg) =
        export_coupling_heatmap(model, &corpus.schema, "state", "mwe", dir.path()).unwrap();

    for path in [&pos, &neg] {
        println!("\n{}:", path.file_name().unwrap().to_string_lossy());
        print!("{}", std::fs::read_to_string(path).unwrap());
    }

    // Couplings are identified only up to a per-column offset, so the
    // readable signal is the contrast within each state column: how much
    // the column favors entity labels over O. The generator puts entity
    // spans exactly on states S2 and S3, so only those margins should come
    // out positive.
    let state = &corpus.schema.tasks[0];
    let mwe = &corpus.schema.tasks[1];
    let o = mwe.encode("O").unwrap();
    let b_ent = mwe.encode("B-ENT").unwrap();
    let i_ent = mwe.encode("I-ENT").unwrap();
    println!("\nentity-over-O margin per state column:");
    for s in 0..state.size() {
        let ent = model
            .coupling_value(0, 1, b_ent, s)
            .max(model.coupling_value(0, 1, i_ent, s));
        let margin = ent - model.coupling_value(0, 1, o, s);
        println!("  {}: {margin:+.4}", state.decode(s));
    }
}
