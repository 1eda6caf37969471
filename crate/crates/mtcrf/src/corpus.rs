//! Multi-column token corpora: tab-separated reading and writing,
//! low-resource subsampling, and silver auxiliary-label merging.
//!
//! File format: one token per line, `token<TAB>label_1<TAB>...<TAB>label_J`,
//! sentences separated by a blank line, every sentence (including the last)
//! followed by one. Reading is tolerant of repeated blank lines; writing
//! always produces the normalized form, so write∘read is byte-identity on
//! normalized files.

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tagset::{infer_scheme, LabelId, MultiTaskSchema, TagsetError, TaskSchema};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: expected {expected} tab-separated columns, found {found}")]
    ColumnCountMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: unknown label {surface:?} for task {task:?}")]
    UnknownLabel {
        line: usize,
        task: String,
        surface: String,
    },
    #[error("line {line}: empty field")]
    EmptyField { line: usize },
    #[error("cannot infer a schema from a file with no token lines")]
    NothingToInfer,
    #[error("requested sample of {requested} sentences but only {available} are available")]
    SizeExceedsCorpus { requested: usize, available: usize },
    #[error("sentence {sentence}: silver column has {found} labels for {expected} tokens")]
    AlignmentMismatch {
        sentence: usize,
        expected: usize,
        found: usize,
    },
    #[error("sentence {sentence}: {reason}")]
    InvalidSentence { sentence: usize, reason: String },
    #[error(transparent)]
    Tagset(#[from] TagsetError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One sentence with its gold label-id sequence for every task.
/// `gold[j][t]` is the label of task j at position t.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiTaskSentence {
    pub tokens: Vec<String>,
    pub gold: Vec<Vec<LabelId>>,
}

impl MultiTaskSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn check(&self, schema: &MultiTaskSchema, index: usize) -> Result<(), CorpusError> {
        let t = self.tokens.len();
        if t == 0 {
            return Err(CorpusError::InvalidSentence {
                sentence: index,
                reason: "no tokens".to_string(),
            });
        }
        if self.gold.len() != schema.num_tasks() {
            return Err(CorpusError::InvalidSentence {
                sentence: index,
                reason: format!(
                    "{} gold sequences for {} tasks",
                    self.gold.len(),
                    schema.num_tasks()
                ),
            });
        }
        for (task, seq) in schema.tasks.iter().zip(&self.gold) {
            if seq.len() != t {
                return Err(CorpusError::InvalidSentence {
                    sentence: index,
                    reason: format!(
                        "task {:?} has {} labels for {} tokens",
                        task.name,
                        seq.len(),
                        t
                    ),
                });
            }
            if let Some(&bad) = seq.iter().find(|&&id| id >= task.size()) {
                return Err(CorpusError::InvalidSentence {
                    sentence: index,
                    reason: format!("label id {} out of range for task {:?}", bad, task.name),
                });
            }
        }
        Ok(())
    }
}

/// A full dataset: schema plus train/dev/test partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub schema: MultiTaskSchema,
    pub train: Vec<MultiTaskSentence>,
    pub dev: Vec<MultiTaskSentence>,
    pub test: Vec<MultiTaskSentence>,
}

impl Corpus {
    pub fn new(
        schema: MultiTaskSchema,
        train: Vec<MultiTaskSentence>,
        dev: Vec<MultiTaskSentence>,
        test: Vec<MultiTaskSentence>,
    ) -> Result<Self, CorpusError> {
        for part in [&train, &dev, &test] {
            for (i, s) in part.iter().enumerate() {
                s.check(&schema, i)?;
            }
        }
        Ok(Corpus {
            schema,
            train,
            dev,
            test,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.schema.num_tasks()
    }

    /// Restricts the corpus to a single task, for training independent
    /// single-task baselines.
    pub fn project_task(&self, j: usize) -> Corpus {
        let schema = MultiTaskSchema::new(vec![self.schema.tasks[j].clone()])
            .expect("single task is a valid schema");
        let project = |part: &[MultiTaskSentence]| {
            part.iter()
                .map(|s| MultiTaskSentence {
                    tokens: s.tokens.clone(),
                    gold: vec![s.gold[j].clone()],
                })
                .collect()
        };
        Corpus {
            schema,
            train: project(&self.train),
            dev: project(&self.dev),
            test: project(&self.test),
        }
    }
}

/// Where the label inventory for a read comes from.
pub enum SchemaSource<'a> {
    /// Encode against a known schema; unseen surfaces are errors.
    Fixed(&'a MultiTaskSchema),
    /// Build the schema from the observed surfaces. Provided names cover the
    /// leading tasks; the rest default to `task1..taskJ`. Schemes are
    /// inferred per task: BIO iff every non-O surface has a B-/I- prefix.
    Infer(Vec<String>),
}

/// A read partition together with the schema that encodes it.
#[derive(Debug)]
pub struct ReadOutcome {
    pub schema: MultiTaskSchema,
    pub sentences: Vec<MultiTaskSentence>,
}

/// Reads one partition from a tab-separated file.
pub fn read_conll(path: &Path, source: SchemaSource) -> Result<ReadOutcome, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_conll_str(&text, source)
}

/// Raw sentences: token texts plus label surfaces per task, with the line
/// number of each token for error reporting.
struct RawSentence {
    tokens: Vec<String>,
    surfaces: Vec<Vec<String>>,
    lines: Vec<usize>,
}

fn parse_raw(text: &str) -> Result<Vec<RawSentence>, CorpusError> {
    let mut sentences = Vec::new();
    let mut current: Option<RawSentence> = None;
    let mut num_tasks: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.is_empty() {
            if let Some(s) = current.take() {
                sentences.push(s);
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.iter().any(|f| f.is_empty()) {
            return Err(CorpusError::EmptyField { line: line_no });
        }
        let j = *num_tasks.get_or_insert(fields.len() - 1);
        if fields.len() != 1 + j {
            return Err(CorpusError::ColumnCountMismatch {
                line: line_no,
                expected: 1 + j,
                found: fields.len(),
            });
        }
        let sent = current.get_or_insert_with(|| RawSentence {
            tokens: Vec::new(),
            surfaces: vec![Vec::new(); j],
            lines: Vec::new(),
        });
        sent.tokens.push(fields[0].to_string());
        for (task, &surface) in sent.surfaces.iter_mut().zip(&fields[1..]) {
            task.push(surface.to_string());
        }
        sent.lines.push(line_no);
    }
    if let Some(s) = current.take() {
        sentences.push(s);
    }
    Ok(sentences)
}

/// Like [`read_conll`] but over in-memory text.
pub fn read_conll_str(text: &str, source: SchemaSource) -> Result<ReadOutcome, CorpusError> {
    let raw = parse_raw(text)?;
    let schema = match source {
        SchemaSource::Fixed(schema) => {
            if let Some(first) = raw.first() {
                if first.surfaces.len() != schema.num_tasks() {
                    return Err(CorpusError::ColumnCountMismatch {
                        line: first.lines[0],
                        expected: 1 + schema.num_tasks(),
                        found: 1 + first.surfaces.len(),
                    });
                }
            }
            schema.clone()
        }
        SchemaSource::Infer(names) => {
            let j = raw.first().map(|s| s.surfaces.len()).unwrap_or(0);
            if j == 0 {
                return Err(CorpusError::NothingToInfer);
            }
            let mut per_task: Vec<(String, BTreeSet<String>)> = (0..j)
                .map(|i| {
                    let name = names
                        .get(i)
                        .cloned()
                        .unwrap_or_else(|| format!("task{}", i + 1));
                    (name, BTreeSet::new())
                })
                .collect();
            for sent in &raw {
                for (task, surfaces) in per_task.iter_mut().zip(&sent.surfaces) {
                    task.1.extend(surfaces.iter().cloned());
                }
            }
            let schemes: Vec<_> = per_task
                .iter()
                .map(|(_, surfaces)| infer_scheme(surfaces.iter().map(|s| s.as_str())))
                .collect();
            MultiTaskSchema::build(&per_task, &schemes)?
        }
    };
    let mut sentences = Vec::with_capacity(raw.len());
    for sent in raw {
        let mut gold = Vec::with_capacity(schema.num_tasks());
        for (task, surfaces) in schema.tasks.iter().zip(&sent.surfaces) {
            let mut seq = Vec::with_capacity(surfaces.len());
            for (surface, &line) in surfaces.iter().zip(&sent.lines) {
                let id = task
                    .encode(surface)
                    .map_err(|_| CorpusError::UnknownLabel {
                        line,
                        task: task.name.clone(),
                        surface: surface.clone(),
                    })?;
                seq.push(id);
            }
            gold.push(seq);
        }
        sentences.push(MultiTaskSentence {
            tokens: sent.tokens,
            gold,
        });
    }
    Ok(ReadOutcome { schema, sentences })
}

/// Renders one partition in normalized form.
pub fn render_conll(schema: &MultiTaskSchema, sentences: &[MultiTaskSentence]) -> String {
    let mut out = String::new();
    for sent in sentences {
        for (t, token) in sent.tokens.iter().enumerate() {
            out.push_str(token);
            for (task, seq) in schema.tasks.iter().zip(&sent.gold) {
                out.push('\t');
                out.push_str(task.decode(seq[t]));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Writes one partition to a file in normalized form.
pub fn write_conll(
    schema: &MultiTaskSchema,
    sentences: &[MultiTaskSentence],
    path: &Path,
) -> Result<(), CorpusError> {
    std::fs::write(path, render_conll(schema, sentences)).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// One requested training-subset size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitSize {
    N(usize),
    Full,
}

impl std::fmt::Display for SplitSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitSize::N(n) => write!(f, "{n}"),
            SplitSize::Full => write!(f, "full"),
        }
    }
}

impl FromStr for SplitSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(SplitSize::Full);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(SplitSize::N(n)),
            _ => Err(format!("invalid split size {s:?}: expected a positive integer or \"full\"")),
        }
    }
}

/// Sizes and seed for nested low-resource subsampling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub sizes: Vec<SplitSize>,
    pub seed: u64,
}

/// Draws one training subset per requested size. A single seeded permutation
/// of the training set is sliced to prefixes, so smaller subsets are nested
/// inside larger ones. `Full` returns the whole set in its original order.
pub fn sample_low_resource(
    train: &[MultiTaskSentence],
    spec: &SplitSpec,
) -> Result<Vec<Vec<MultiTaskSentence>>, CorpusError> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let mut out = Vec::with_capacity(spec.sizes.len());
    for &size in &spec.sizes {
        match size {
            SplitSize::Full => out.push(train.to_vec()),
            SplitSize::N(n) => {
                if n > train.len() {
                    return Err(CorpusError::SizeExceedsCorpus {
                        requested: n,
                        available: train.len(),
                    });
                }
                out.push(order[..n].iter().map(|&i| train[i].clone()).collect());
            }
        }
    }
    Ok(out)
}

/// Silver label-id sequences for every partition of a corpus, already encoded
/// against the auxiliary task's schema.
#[derive(Debug, Clone, Default)]
pub struct SilverColumn {
    pub train: Vec<Vec<LabelId>>,
    pub dev: Vec<Vec<LabelId>>,
    pub test: Vec<Vec<LabelId>>,
}

/// Appends an auxiliary task populated from silver labels. The new task goes
/// last in the schema, which places it last in the cascade order.
pub fn merge_silver_labels(
    base: &Corpus,
    silver: &SilverColumn,
    task: TaskSchema,
) -> Result<Corpus, CorpusError> {
    let merge_part = |sentences: &[MultiTaskSentence],
                      column: &[Vec<LabelId>]|
     -> Result<Vec<MultiTaskSentence>, CorpusError> {
        if sentences.len() != column.len() {
            return Err(CorpusError::AlignmentMismatch {
                sentence: sentences.len().min(column.len()),
                expected: sentences.len(),
                found: column.len(),
            });
        }
        sentences
            .iter()
            .zip(column)
            .enumerate()
            .map(|(i, (sent, labels))| {
                if labels.len() != sent.len() {
                    return Err(CorpusError::AlignmentMismatch {
                        sentence: i,
                        expected: sent.len(),
                        found: labels.len(),
                    });
                }
                let mut gold = sent.gold.clone();
                gold.push(labels.clone());
                Ok(MultiTaskSentence {
                    tokens: sent.tokens.clone(),
                    gold,
                })
            })
            .collect()
    };
    let train = merge_part(&base.train, &silver.train)?;
    let dev = merge_part(&base.dev, &silver.dev)?;
    let test = merge_part(&base.test, &silver.test)?;
    let mut tasks = base.schema.tasks.clone();
    tasks.push(task);
    let schema = MultiTaskSchema::new(tasks)?;
    Corpus::new(schema, train, dev, test)
}
