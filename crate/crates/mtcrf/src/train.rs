//! Mini-batch gradient training and the multi-seed evaluation protocol.
//!
//! One run: Adam over the model's flattened parameters, global-norm gradient
//! clipping, a linear learning-rate ramp across the first epoch, and dev-loss
//! early stopping with best-checkpoint restore. The protocol layer samples
//! hyperparameter settings from a grid, trains every (setting, seed) pair,
//! selects the setting with the best seed-averaged dev metric, and reports
//! that setting's test metrics as mean ± standard deviation over seeds.
//! Every stage is deterministic in its explicit seeds.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    sample_low_resource, Corpus, CorpusError, MultiTaskSentence, SplitSize, SplitSpec,
};
use crate::eval::{self, EvalError, F1Report, SummaryPoint};
use crate::factorial::BpConfig;
use crate::features::FeatureConfig;
use crate::math::FlatParams;
use crate::model::{Tagger, Variant};
use crate::multihead::ModelError;
use crate::tagset::LabelId;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("the {0} partition is empty")]
    EmptyPartition(&'static str),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("grid axis {0} has no values")]
    EmptyGrid(&'static str),
    #[error("non-finite loss {loss} at optimizer step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Adam over one flat parameter vector, with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: usize,
}

impl Adam {
    pub fn new(dim: usize) -> Adam {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            steps: 0,
        }
    }

    /// One descent step at learning rate `lr`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Scales `grad` in place so its global L2 norm is at most `clip`, returning
/// the pre-clip norm. The post-clip norm is min(norm, clip).
pub fn clip_global_norm(grad: &mut [f64], clip: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > clip {
        let scale = clip / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// Learning rate at a 1-indexed (epoch, step) position: a linear ramp from
/// base/steps to base across the first epoch, constant base afterwards.
pub fn scheduled_lr(base: f64, epoch: usize, step_in_epoch: usize, steps_per_epoch: usize) -> f64 {
    if epoch == 1 {
        base * step_in_epoch as f64 / steps_per_epoch as f64
    } else {
        base
    }
}

/// Allowed values per tuned hyperparameter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub hidden_dims: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub num_layers: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            hidden_dims: vec![256, 512],
            batch_sizes: vec![8, 16, 32],
            num_layers: vec![1, 2, 3],
        }
    }
}

/// One concrete cell of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridChoice {
    pub hidden_dim: usize,
    pub batch_size: usize,
    pub num_layers: usize,
}

/// Uniform independent choice per axis, deterministic in the seed.
pub fn sample_grid(grid: &Grid, seed: u64) -> Result<GridChoice, TrainError> {
    if grid.hidden_dims.is_empty() {
        return Err(TrainError::EmptyGrid("hidden_dims"));
    }
    if grid.batch_sizes.is_empty() {
        return Err(TrainError::EmptyGrid("batch_sizes"));
    }
    if grid.num_layers.is_empty() {
        return Err(TrainError::EmptyGrid("num_layers"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(GridChoice {
        hidden_dim: grid.hidden_dims[rng.gen_range(0..grid.hidden_dims.len())],
        batch_size: grid.batch_sizes[rng.gen_range(0..grid.batch_sizes.len())],
        num_layers: grid.num_layers[rng.gen_range(0..grid.num_layers.len())],
    })
}

/// Full training configuration. The warmup window is fixed at one epoch; the
/// grid's layer axis selects the featurizer's projection depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub seeds: Vec<u64>,
    pub variant: Variant,
    pub grid: Grid,
    pub feature: FeatureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            max_epochs: 100,
            patience: 5,
            clip_norm: 5.0,
            seeds: vec![1, 2, 3, 4, 5],
            variant: Variant::Mh,
            grid: Grid::default(),
            feature: FeatureConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(TrainError::InvalidConfig(
                "batch_size, max_epochs, and patience must be at least 1".to_string(),
            ));
        }
        if !(self.clip_norm > 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "clip_norm {} must be positive",
                self.clip_norm
            )));
        }
        if self.seeds.is_empty() {
            return Err(TrainError::InvalidConfig("no seeds listed".to_string()));
        }
        if !self.grid.batch_sizes.contains(&self.batch_size) {
            return Err(TrainError::InvalidConfig(format!(
                "batch_size {} is not in the grid {:?}",
                self.batch_size, self.grid.batch_sizes
            )));
        }
        Ok(())
    }

    /// The configuration with one sampled grid cell applied.
    pub fn with_choice(&self, choice: GridChoice) -> TrainConfig {
        let mut out = self.clone();
        out.batch_size = choice.batch_size;
        out.feature.hidden_dim = choice.hidden_dim;
        out.feature.num_layers = choice.num_layers;
        if !out.grid.batch_sizes.contains(&choice.batch_size) {
            out.grid.batch_sizes.push(choice.batch_size);
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
}

/// Everything one run produced: the resolved config, the loss trajectory,
/// the restored checkpoint's position, and final metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub seed: u64,
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    pub dev: F1Report,
    pub test: F1Report,
}

fn predict_all(tagger: &Tagger, sentences: &[MultiTaskSentence]) -> Vec<Vec<Vec<LabelId>>> {
    sentences.iter().map(|s| tagger.predict(&s.tokens)).collect()
}

fn mean_loss(tagger: &Tagger, sentences: &[MultiTaskSentence]) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for s in sentences {
        total += tagger.loss(s)?;
    }
    Ok(total / sentences.len() as f64)
}

/// Trains `tagger` in place on `corpus.train`, monitoring `corpus.dev`.
/// Stops when the dev loss has not improved for `patience` epochs (or at
/// `max_epochs`), restores the best-dev checkpoint, and scores the restored
/// model on dev and test. Deterministic in (corpus, config, seed).
pub fn train_model(
    tagger: &mut Tagger,
    corpus: &Corpus,
    config: &TrainConfig,
    seed: u64,
) -> Result<RunRecord, TrainError> {
    config.validate()?;
    if corpus.train.is_empty() {
        return Err(TrainError::EmptyPartition("train"));
    }
    if corpus.dev.is_empty() {
        return Err(TrainError::EmptyPartition("dev"));
    }

    let mut flat = tagger.to_flat();
    let dim = flat.len();
    let mut adam = Adam::new(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = corpus.train.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);

    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::new();
    let mut best_dev = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_flat = flat.clone();
    let mut bad_epochs = 0;
    let mut global_step = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            global_step += 1;
            let mut grad = vec![0.0; dim];
            let mut loss_sum = 0.0;
            for &i in batch {
                let (loss, g) = tagger.loss_and_grad_flat(&corpus.train[i])?;
                loss_sum += loss;
                for (acc, x) in grad.iter_mut().zip(&g) {
                    *acc += x;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let batch_loss = loss_sum * scale;
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    step: global_step,
                    loss: batch_loss,
                });
            }
            for g in grad.iter_mut() {
                *g *= scale;
            }
            clip_global_norm(&mut grad, config.clip_norm);
            let lr = scheduled_lr(config.learning_rate, epoch, b + 1, steps_per_epoch);
            adam.step(&mut flat, &grad, lr);
            tagger.assign_flat(&flat);
            epoch_loss += loss_sum;
        }

        let dev_loss = mean_loss(tagger, &corpus.dev)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / n as f64,
            dev_loss,
        });
        if dev_loss < best_dev {
            best_dev = dev_loss;
            best_epoch = epoch;
            best_flat.copy_from_slice(&flat);
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= config.patience {
                break;
            }
        }
    }

    tagger.assign_flat(&best_flat);
    let dev = eval::evaluate(
        &corpus.schema,
        &corpus.dev,
        &predict_all(tagger, &corpus.dev),
    )?;
    let test = eval::evaluate(
        &corpus.schema,
        &corpus.test,
        &predict_all(tagger, &corpus.test),
    )?;
    Ok(RunRecord {
        variant: config.variant,
        seed,
        config: config.clone(),
        epochs,
        best_epoch,
        best_dev_loss: best_dev,
        dev,
        test,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    assert!(!values.is_empty());
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// What the protocol sweeps: which variants, which training-set sizes, and
/// how many grid cells to sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolOptions {
    pub variants: Vec<Variant>,
    pub splits: Vec<SplitSize>,
    /// Seed of the shared permutation behind the nested subsets.
    pub split_seed: u64,
    pub num_settings: usize,
    /// Base seed for grid sampling; cell i uses `setting_seed + i`.
    pub setting_seed: u64,
    pub bp: BpConfig,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        ProtocolOptions {
            variants: Variant::ALL.to_vec(),
            splits: vec![
                SplitSize::N(100),
                SplitSize::N(500),
                SplitSize::N(1000),
                SplitSize::Full,
            ],
            split_seed: 13,
            num_settings: 2,
            setting_seed: 17,
            bp: BpConfig::default(),
        }
    }
}

/// One raw run inside the protocol, tagged with where it sits in the sweep
/// and whether its setting won selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolRecord {
    pub variant: Variant,
    pub split: String,
    pub setting: GridChoice,
    /// For single-task runs, the task the model was restricted to.
    pub task: Option<String>,
    pub seed: u64,
    pub selected: bool,
    pub record: RunRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolOutcome {
    /// Selected settings' test metrics per (variant, split, task).
    pub points: Vec<SummaryPoint>,
    /// Every run, for recomputing the points from raw data.
    pub records: Vec<ProtocolRecord>,
}

struct SettingRuns {
    setting_index: usize,
    dev_mean: f64,
    record_indices: Vec<usize>,
}

/// Runs every (variant, split, sampled setting, seed) combination, selects
/// per variant and split the setting with the highest seed-averaged dev
/// metric, and reports its test metrics averaged over seeds. Joint variants
/// select one setting on the dev metric averaged over tasks; the single-task
/// baseline selects per task.
pub fn multi_seed_protocol(
    corpus: &Corpus,
    options: &ProtocolOptions,
    base: &TrainConfig,
) -> Result<ProtocolOutcome, TrainError> {
    if base.seeds.is_empty() {
        return Err(TrainError::InvalidConfig("no seeds listed".to_string()));
    }
    if options.num_settings == 0 {
        return Err(TrainError::InvalidConfig(
            "num_settings must be at least 1".to_string(),
        ));
    }
    let settings: Vec<GridChoice> = (0..options.num_settings)
        .map(|i| sample_grid(&base.grid, options.setting_seed + i as u64))
        .collect::<Result<_, _>>()?;
    let subsets = sample_low_resource(
        &corpus.train,
        &SplitSpec {
            sizes: options.splits.clone(),
            seed: options.split_seed,
        },
    )?;

    let mut points = Vec::new();
    let mut records: Vec<ProtocolRecord> = Vec::new();

    for (split_size, subset) in options.splits.iter().zip(&subsets) {
        let split_name = split_size.to_string();
        let split_corpus = Corpus {
            schema: corpus.schema.clone(),
            train: subset.clone(),
            dev: corpus.dev.clone(),
            test: corpus.test.clone(),
        };
        for &variant in &options.variants {
            let scopes: Vec<Option<usize>> = if variant.is_single_task() {
                (0..corpus.schema.num_tasks()).map(Some).collect()
            } else {
                vec![None]
            };
            for scope in scopes {
                let (run_corpus, task_name) = match scope {
                    Some(j) => (
                        split_corpus.project_task(j),
                        Some(corpus.schema.tasks[j].name.clone()),
                    ),
                    None => (split_corpus.clone(), None),
                };
                let mut per_setting: Vec<SettingRuns> = Vec::new();
                for (si, &setting) in settings.iter().enumerate() {
                    let mut config = base.with_choice(setting);
                    config.variant = variant;
                    let mut dev_metrics = Vec::new();
                    let mut record_indices = Vec::new();
                    for &seed in &base.seeds {
                        config.feature.seed = seed;
                        let mut tagger = Tagger::from_corpus(
                            variant,
                            &config.feature,
                            &run_corpus.schema,
                            &run_corpus.train,
                            options.bp,
                        );
                        let record = train_model(&mut tagger, &run_corpus, &config, seed)?;
                        let dev_metric = mean_std(
                            &record
                                .dev
                                .tasks
                                .iter()
                                .map(|t| t.primary_metric())
                                .collect::<Vec<_>>(),
                        )
                        .0;
                        dev_metrics.push(dev_metric);
                        record_indices.push(records.len());
                        records.push(ProtocolRecord {
                            variant,
                            split: split_name.clone(),
                            setting,
                            task: task_name.clone(),
                            seed,
                            selected: false,
                            record,
                        });
                    }
                    per_setting.push(SettingRuns {
                        setting_index: si,
                        dev_mean: mean_std(&dev_metrics).0,
                        record_indices,
                    });
                }
                let best = per_setting
                    .iter()
                    .max_by(|a, b| {
                        a.dev_mean
                            .partial_cmp(&b.dev_mean)
                            .expect("dev metrics are finite")
                            .then(b.setting_index.cmp(&a.setting_index))
                    })
                    .expect("at least one setting");
                for &ri in &best.record_indices {
                    records[ri].selected = true;
                }
                // One summary point per task this model covers.
                let tasks: Vec<String> = records[best.record_indices[0]]
                    .record
                    .test
                    .tasks
                    .iter()
                    .map(|t| t.task.clone())
                    .collect();
                for task in tasks {
                    let metrics: Vec<f64> = best
                        .record_indices
                        .iter()
                        .map(|&ri| {
                            records[ri]
                                .record
                                .test
                                .task(&task)
                                .expect("task present in report")
                                .primary_metric()
                        })
                        .collect();
                    let (mean, std) = mean_std(&metrics);
                    points.push(SummaryPoint {
                        variant: variant.to_string(),
                        split: split_name.clone(),
                        task,
                        mean,
                        std,
                    });
                }
            }
        }
    }
    Ok(ProtocolOutcome { points, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::smoke_corpus;

    fn tiny_feature(seed: u64) -> FeatureConfig {
        FeatureConfig {
            embedding_dim: 6,
            char_ngram_orders: vec![2],
            hash_buckets: 64,
            window: 1,
            hidden_dim: 12,
            num_layers: 1,
            seed,
        }
    }

    fn smoke_config() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.02,
            batch_size: 8,
            max_epochs: 12,
            patience: 12,
            clip_norm: 5.0,
            seeds: vec![1],
            variant: Variant::Mh,
            grid: Grid {
                hidden_dims: vec![12],
                batch_sizes: vec![8],
                num_layers: vec![1],
            },
            feature: tiny_feature(1),
        }
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut adam = Adam::new(3);
        let mut params = vec![0.5, -1.0, 2.0];
        let before = params.clone();
        adam.step(&mut params, &[0.0, 0.0, 0.0], 0.1);
        assert_eq!(params, before);
    }

    #[test]
    fn adam_first_step_matches_hand_formula() {
        let mut adam = Adam::new(1);
        let mut params = vec![1.0];
        let g: f64 = 3.0;
        let lr = 0.1;
        adam.step(&mut params, &[g], lr);
        let m_hat = (1.0 - 0.9) * g / (1.0 - 0.9);
        let v_hat = (1.0 - 0.999) * g * g / (1.0 - 0.999);
        let expect = 1.0 - lr * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((params[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut g = vec![30.0, 40.0];
        let pre = clip_global_norm(&mut g, 5.0);
        assert_eq!(pre, 50.0);
        let post = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((post - 5.0).abs() < 1e-9);
        assert!((g[0] - 3.0).abs() < 1e-12 && (g[1] - 4.0).abs() < 1e-12);

        let mut small = vec![1.0, 2.0];
        let pre = clip_global_norm(&mut small, 5.0);
        assert!((pre - 5f64.sqrt()).abs() < 1e-12);
        assert_eq!(small, vec![1.0, 2.0]);
    }

    #[test]
    fn warmup_ramps_over_the_first_epoch_only() {
        let base = 1e-3;
        assert!((scheduled_lr(base, 1, 5, 10) - 0.5 * base).abs() < 1e-12);
        assert!((scheduled_lr(base, 1, 10, 10) - base).abs() < 1e-18);
        assert!((scheduled_lr(base, 1, 1, 4) - 0.25 * base).abs() < 1e-18);
        assert_eq!(scheduled_lr(base, 2, 1, 10), base);
        assert_eq!(scheduled_lr(base, 7, 3, 10), base);
    }

    #[test]
    fn grid_sampling_is_deterministic_and_in_range() {
        let grid = Grid::default();
        let a = sample_grid(&grid, 42).unwrap();
        let b = sample_grid(&grid, 42).unwrap();
        assert_eq!(a, b);
        assert!(grid.hidden_dims.contains(&a.hidden_dim));
        assert!(grid.batch_sizes.contains(&a.batch_size));
        assert!(grid.num_layers.contains(&a.num_layers));

        let single = Grid {
            hidden_dims: vec![8],
            batch_sizes: vec![4],
            num_layers: vec![2],
        };
        let c = sample_grid(&single, 7).unwrap();
        assert_eq!(
            c,
            GridChoice {
                hidden_dim: 8,
                batch_size: 4,
                num_layers: 2
            }
        );

        let empty = Grid {
            hidden_dims: vec![],
            ..Grid::default()
        };
        assert!(matches!(
            sample_grid(&empty, 0),
            Err(TrainError::EmptyGrid("hidden_dims"))
        ));

        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..40 {
            let choice = sample_grid(&grid, seed).unwrap();
            seen.insert((choice.hidden_dim, choice.batch_size, choice.num_layers));
        }
        assert!(seen.len() > 6, "sampling barely varies: {}", seen.len());
    }

    #[test]
    fn mean_std_is_population_based() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-15);
        assert!((s - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let (m, s) = mean_std(&[0.5]);
        assert_eq!((m, s), (0.5, 0.0));
    }

    #[test]
    fn training_reduces_dev_loss_and_restores_the_best_epoch() {
        let corpus = smoke_corpus(5, 40, 12, 12);
        let config = smoke_config();
        let mut tagger = Tagger::from_corpus(
            Variant::Mh,
            &config.feature,
            &corpus.schema,
            &corpus.train,
            BpConfig::default(),
        );
        let init_dev = mean_loss(&tagger, &corpus.dev).unwrap();
        let record = train_model(&mut tagger, &corpus, &config, 1).unwrap();

        assert!(record.best_dev_loss < init_dev);
        let min_dev = record
            .epochs
            .iter()
            .map(|e| e.dev_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(record.best_dev_loss, min_dev);
        assert_eq!(
            record.epochs[record.best_epoch - 1].dev_loss,
            record.best_dev_loss
        );
        // The restored parameters reproduce the recorded best dev loss.
        let restored_dev = mean_loss(&tagger, &corpus.dev).unwrap();
        assert!((restored_dev - record.best_dev_loss).abs() < 1e-9);
        // The separable corpus is learned nearly perfectly.
        assert!(
            record.test.tasks[0].f1 > 0.9,
            "test F1 {}",
            record.test.tasks[0].f1
        );
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = smoke_corpus(6, 24, 8, 8);
        let mut config = smoke_config();
        config.max_epochs = 4;
        let run = |corpus: &Corpus| {
            let mut tagger = Tagger::from_corpus(
                Variant::Mh,
                &config.feature,
                &corpus.schema,
                &corpus.train,
                BpConfig::default(),
            );
            let record = train_model(&mut tagger, corpus, &config, 9).unwrap();
            (serde_json::to_string(&record).unwrap(), tagger.to_flat())
        };
        let (rec_a, flat_a) = run(&corpus);
        let (rec_b, flat_b) = run(&corpus);
        assert_eq!(rec_a, rec_b);
        assert_eq!(flat_a, flat_b);
    }

    #[test]
    fn non_finite_loss_aborts_with_the_step() {
        let corpus = smoke_corpus(7, 10, 4, 4);
        let config = smoke_config();
        let mut tagger = Tagger::from_corpus(
            Variant::Mh,
            &config.feature,
            &corpus.schema,
            &corpus.train,
            BpConfig::default(),
        );
        let mut flat = tagger.to_flat();
        flat[0] = f64::NAN;
        tagger.assign_flat(&flat);
        match train_model(&mut tagger, &corpus, &config, 1) {
            Err(TrainError::NonFiniteLoss { step: 1, loss }) => assert!(loss.is_nan()),
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn empty_partitions_are_rejected() {
        let mut corpus = smoke_corpus(8, 6, 2, 2);
        let config = smoke_config();
        let mut tagger = Tagger::from_corpus(
            Variant::Mh,
            &config.feature,
            &corpus.schema,
            &corpus.train,
            BpConfig::default(),
        );
        corpus.dev.clear();
        assert!(matches!(
            train_model(&mut tagger, &corpus, &config, 1),
            Err(TrainError::EmptyPartition("dev"))
        ));
        let mut bad = config.clone();
        bad.learning_rate = 0.0;
        assert!(matches!(
            train_model(&mut tagger, &smoke_corpus(8, 6, 2, 2), &bad, 1),
            Err(TrainError::InvalidConfig(_))
        ));
    }

    #[test]
    fn protocol_reports_selected_test_metrics() {
        let corpus = smoke_corpus(9, 24, 8, 8);
        let mut base = smoke_config();
        base.max_epochs = 3;
        base.seeds = vec![1, 2];
        let options = ProtocolOptions {
            variants: vec![Variant::St, Variant::Mh],
            splits: vec![SplitSize::N(12), SplitSize::Full],
            split_seed: 3,
            num_settings: 1,
            setting_seed: 11,
            bp: BpConfig::default(),
        };
        let outcome = multi_seed_protocol(&corpus, &options, &base).unwrap();

        // 2 variants x 2 splits x 1 task.
        assert_eq!(outcome.points.len(), 4);
        // 2 variants x 2 splits x 1 setting x 2 seeds.
        assert_eq!(outcome.records.len(), 8);
        assert!(outcome.records.iter().all(|r| r.selected));

        for point in &outcome.points {
            let raw: Vec<f64> = outcome
                .records
                .iter()
                .filter(|r| {
                    r.selected
                        && r.variant.to_string() == point.variant
                        && r.split == point.split
                        && r.record.test.task(&point.task).is_some()
                })
                .map(|r| r.record.test.task(&point.task).unwrap().primary_metric())
                .collect();
            assert_eq!(raw.len(), 2);
            let (mean, std) = mean_std(&raw);
            assert_eq!(point.mean, mean);
            assert_eq!(point.std, std);
        }

        let again = multi_seed_protocol(&corpus, &options, &base).unwrap();
        assert_eq!(
            serde_json::to_string(&outcome.points).unwrap(),
            serde_json::to_string(&again.points).unwrap()
        );
    }
}
