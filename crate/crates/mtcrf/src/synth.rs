//! Seeded synthetic corpora for experiments and end-to-end tests.
//!
//! Two generators live here. [`smoke_corpus`] emits a single-task corpus
//! whose tokens spell out their own labels, so any working trainer drives it
//! to near-perfect F1 within a few epochs. [`two_task_corpus`] emits the
//! coupled two-task corpus used by the low-resource direction experiment.
//! The auxiliary FLAT task walks a near-deterministic state cycle whose
//! sequence structure makes every position recoverable from the nearest
//! state-revealing tokens, while the target BIO task marks the positions of
//! a state subset, plus noise. A three-label chain cannot count its way
//! through the outside stretches, so the target task is hard from the
//! surface alone exactly where the auxiliary task is still easy; models that
//! read the auxiliary labels through a coupling inherit that structure,
//! while independent heads must relearn it from a handful of sentences.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, MultiTaskSentence};
use crate::tagset::{MultiTaskSchema, Scheme, TaskSchema};

/// Shape of the coupled two-task corpus.
#[derive(Debug, Clone)]
pub struct TwoTaskConfig {
    /// Number of hidden Markov states, which is also the auxiliary tagset size.
    pub num_states: usize,
    /// State-specific token inventory size per state.
    pub tokens_per_state: usize,
    /// Size of the shared pool of state-uninformative tokens.
    pub ambiguous_tokens: usize,
    /// Stationary probability a position emits from the shared pool instead
    /// of its state's inventory.
    pub ambiguous_prob: f64,
    /// Probability an ambiguous position is followed by another one, making
    /// uninformative stretches bursty rather than independent. Must leave
    /// the anchor-to-ambiguous rate in [0, 1]; the stationary rate stays at
    /// `ambiguous_prob`.
    pub ambiguous_persistence: f64,
    /// Probability the hidden chain repeats its state at the next position;
    /// otherwise it advances to the cyclic successor.
    pub stay_prob: f64,
    /// States whose positions lie inside a target-task span.
    pub span_states: Vec<usize>,
    /// Per-position probability of flipping span membership before the BIO
    /// rendering, keeping the target sequence scheme-valid.
    pub label_noise: f64,
    /// Inclusive sentence length range.
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for TwoTaskConfig {
    fn default() -> Self {
        TwoTaskConfig {
            num_states: 6,
            tokens_per_state: 10,
            ambiguous_tokens: 12,
            ambiguous_prob: 0.45,
            ambiguous_persistence: 0.7,
            stay_prob: 0.05,
            span_states: vec![2, 3],
            label_noise: 0.03,
            min_len: 6,
            max_len: 12,
            seed: 0,
        }
    }
}

/// Renders a span-membership indicator as BIO labels over
/// `{O, B-ENT, I-ENT}` encoded against the usual ordering (O=0, B=1, I=2).
fn render_bio(inside: &[bool]) -> Vec<usize> {
    let mut labels = Vec::with_capacity(inside.len());
    for (t, &inb) in inside.iter().enumerate() {
        if !inb {
            labels.push(0);
        } else if t > 0 && inside[t - 1] {
            labels.push(2);
        } else {
            labels.push(1);
        }
    }
    labels
}

/// Generates the coupled two-task corpus. Task `state` is FLAT over
/// `S0..S{H-1}`; task `mwe` is BIO over a single `ENT` span type. The same
/// config and seed always produce the same corpus.
pub fn two_task_corpus(
    config: &TwoTaskConfig,
    train: usize,
    dev: usize,
    test: usize,
) -> Corpus {
    assert!(config.num_states >= 2);
    assert!(config.min_len >= 1 && config.min_len <= config.max_len);
    assert!(config.span_states.iter().all(|&s| s < config.num_states));
    // Anchor-to-ambiguous rate that keeps the indicator chain stationary at
    // ambiguous_prob.
    let anchor_to_ambiguous = if config.ambiguous_prob >= 1.0 {
        1.0
    } else {
        config.ambiguous_prob * (1.0 - config.ambiguous_persistence) / (1.0 - config.ambiguous_prob)
    };
    assert!(
        (0.0..=1.0).contains(&anchor_to_ambiguous),
        "ambiguous_persistence {} is unreachable from stationary rate {}",
        config.ambiguous_persistence,
        config.ambiguous_prob
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let state_surfaces: Vec<String> = (0..config.num_states).map(|s| format!("S{s}")).collect();
    let state_task = TaskSchema::build("state", state_surfaces.iter().cloned(), Scheme::Flat)
        .expect("state surfaces are valid");
    let mwe_task = TaskSchema::build(
        "mwe",
        ["O", "B-ENT", "I-ENT"].map(str::to_string),
        Scheme::Bio,
    )
    .expect("target surfaces are valid");
    // Label ids must match render_bio's encoding.
    assert_eq!(mwe_task.encode("O").unwrap(), 0);
    assert_eq!(mwe_task.encode("B-ENT").unwrap(), 1);
    assert_eq!(mwe_task.encode("I-ENT").unwrap(), 2);
    let schema = MultiTaskSchema::new(vec![state_task, mwe_task]).expect("two distinct tasks");
    let state_ids: Vec<usize> = state_surfaces
        .iter()
        .map(|s| schema.tasks[0].encode(s).unwrap())
        .collect();

    let mut sample = |n: usize| -> Vec<MultiTaskSentence> {
        (0..n)
            .map(|_| {
                let t_len = rng.gen_range(config.min_len..=config.max_len);
                let mut states = Vec::with_capacity(t_len);
                let mut state = rng.gen_range(0..config.num_states);
                for _ in 0..t_len {
                    states.push(state);
                    if rng.gen::<f64>() >= config.stay_prob {
                        state = (state + 1) % config.num_states;
                    }
                }
                let mut tokens = Vec::with_capacity(t_len);
                let mut ambiguous = rng.gen::<f64>() < config.ambiguous_prob;
                for &s in &states {
                    if ambiguous {
                        tokens.push(format!("zz{}", rng.gen_range(0..config.ambiguous_tokens)));
                    } else {
                        tokens.push(format!("s{s}w{}", rng.gen_range(0..config.tokens_per_state)));
                    }
                    let next_prob = if ambiguous {
                        config.ambiguous_persistence
                    } else {
                        anchor_to_ambiguous
                    };
                    ambiguous = rng.gen::<f64>() < next_prob;
                }
                let inside: Vec<bool> = states
                    .iter()
                    .map(|s| {
                        let mut inb = config.span_states.contains(s);
                        if rng.gen::<f64>() < config.label_noise {
                            inb = !inb;
                        }
                        inb
                    })
                    .collect();
                let gold_state: Vec<usize> = states.iter().map(|&s| state_ids[s]).collect();
                MultiTaskSentence {
                    tokens,
                    gold: vec![gold_state, render_bio(&inside)],
                }
            })
            .collect()
    };

    let train = sample(train);
    let dev = sample(dev);
    let test = sample(test);
    Corpus::new(schema, train, dev, test).expect("generated sentences fit the schema")
}

/// Generates a single-task corpus whose tokens determine their labels
/// exactly: `O` positions draw from a small function-word list, while span
/// tokens spell their position in the span. Useful as an overfit target and
/// for CLI smoke tests.
pub fn smoke_corpus(seed: u64, train: usize, dev: usize, test: usize) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let task = TaskSchema::build(
        "mwe",
        ["O", "B-X", "I-X"].map(str::to_string),
        Scheme::Bio,
    )
    .expect("surfaces are valid");
    assert_eq!(task.encode("O").unwrap(), 0);
    let schema = MultiTaskSchema::new(vec![task]).expect("one task");
    const FILLER: [&str; 6] = ["the", "a", "of", "to", "and", "or"];

    let mut sample = |n: usize| -> Vec<MultiTaskSentence> {
        (0..n)
            .map(|_| {
                let t_len = rng.gen_range(4..=9);
                let mut tokens = Vec::with_capacity(t_len);
                let mut labels = Vec::with_capacity(t_len);
                let mut t = 0;
                while t < t_len {
                    if rng.gen::<f64>() < 0.35 && t + 1 < t_len {
                        let span_len = rng.gen_range(2..=3).min(t_len - t);
                        let variant = rng.gen_range(0..3);
                        tokens.push(format!("beg{variant}"));
                        labels.push(1);
                        for _ in 1..span_len {
                            tokens.push(format!("mid{variant}"));
                            labels.push(2);
                        }
                        t += span_len;
                    } else {
                        tokens.push(FILLER.choose(&mut rng).unwrap().to_string());
                        labels.push(0);
                        t += 1;
                    }
                }
                MultiTaskSentence {
                    tokens,
                    gold: vec![labels],
                }
            })
            .collect()
    };

    let train = sample(train);
    let dev = sample(dev);
    let test = sample(test);
    Corpus::new(schema, train, dev, test).expect("generated sentences fit the schema")
}
