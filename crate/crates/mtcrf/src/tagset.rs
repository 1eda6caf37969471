//! Task label inventories, the BIO span scheme, and the ordered multi-task
//! schema.
//!
//! A [`TaskSchema`] assigns dense ids to the label surfaces of one task; a
//! [`MultiTaskSchema`] is the ordered list of all tasks in a corpus. The task
//! order matters: it fixes the round-robin order of coupled decoding and the
//! hierarchy direction of the cascaded variant. Schemas are immutable after
//! construction and safe to share across threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense label index within one task inventory.
pub type LabelId = usize;

#[derive(Debug, Error)]
pub enum TagsetError {
    #[error("task {0:?} has no observed label surfaces")]
    EmptyTask(String),
    #[error("task {task:?} requests the BIO scheme but {surface:?} violates it: {reason}")]
    SchemeViolation {
        task: String,
        surface: String,
        reason: String,
    },
    #[error("unknown label {surface:?} for task {task:?}")]
    UnknownLabel { task: String, surface: String },
    #[error("duplicate task name {0:?}")]
    DuplicateTask(String),
    #[error("schema has no tasks")]
    NoTasks,
    #[error("invalid label surface {0:?}: must be non-empty and whitespace-free")]
    InvalidSurface(String),
    #[error("failed to read schema file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse schema file {path}: {message}")]
    Parse { path: String, message: String },
}

/// Tagging scheme of one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// Span labels: `O` outside, `B-X` begins a span of type X, `I-X` continues it.
    Bio,
    /// Plain per-token classes with no span structure (e.g. part-of-speech tags).
    Flat,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Bio => write!(f, "BIO"),
            Scheme::Flat => write!(f, "FLAT"),
        }
    }
}

/// One label of a task inventory: a dense id plus its text surface.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub id: LabelId,
    pub surface: String,
}

/// The label inventory of a single task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSchema {
    pub name: String,
    pub labels: Vec<Label>,
    pub scheme: Scheme,
}

impl TaskSchema {
    /// Builds a task inventory from observed surfaces. Surfaces are sorted
    /// lexicographically with `"O"` forced to id 0 when present, so id
    /// assignment is deterministic.
    pub fn build(
        name: &str,
        surfaces: impl IntoIterator<Item = String>,
        scheme: Scheme,
    ) -> Result<Self, TagsetError> {
        let set: BTreeSet<String> = surfaces.into_iter().collect();
        if set.is_empty() {
            return Err(TagsetError::EmptyTask(name.to_string()));
        }
        for s in &set {
            if s.is_empty() || s.chars().any(|c| c.is_whitespace()) {
                return Err(TagsetError::InvalidSurface(s.clone()));
            }
        }
        let mut ordered: Vec<String> = Vec::with_capacity(set.len());
        if set.contains("O") {
            ordered.push("O".to_string());
        }
        ordered.extend(set.iter().filter(|s| s.as_str() != "O").cloned());
        let labels: Vec<Label> = ordered
            .into_iter()
            .enumerate()
            .map(|(id, surface)| Label { id, surface })
            .collect();
        let schema = TaskSchema {
            name: name.to_string(),
            labels,
            scheme,
        };
        schema.check_scheme()?;
        Ok(schema)
    }

    fn check_scheme(&self) -> Result<(), TagsetError> {
        if self.scheme != Scheme::Bio {
            return Ok(());
        }
        let surfaces: BTreeSet<&str> = self.labels.iter().map(|l| l.surface.as_str()).collect();
        for label in &self.labels {
            let s = label.surface.as_str();
            if s == "O" {
                continue;
            }
            if let Some(kind) = s.strip_prefix("I-") {
                if !surfaces.contains(format!("B-{kind}").as_str()) {
                    return Err(TagsetError::SchemeViolation {
                        task: self.name.clone(),
                        surface: s.to_string(),
                        reason: format!("no matching B-{kind} in the inventory"),
                    });
                }
            } else if !s.starts_with("B-") {
                return Err(TagsetError::SchemeViolation {
                    task: self.name.clone(),
                    surface: s.to_string(),
                    reason: "non-O surfaces must start with B- or I-".to_string(),
                });
            }
        }
        Ok(())
    }

    /// Number of labels K.
    pub fn size(&self) -> usize {
        self.labels.len()
    }

    /// Maps a surface to its dense id.
    pub fn encode(&self, surface: &str) -> Result<LabelId, TagsetError> {
        self.labels
            .iter()
            .find(|l| l.surface == surface)
            .map(|l| l.id)
            .ok_or_else(|| TagsetError::UnknownLabel {
                task: self.name.clone(),
                surface: surface.to_string(),
            })
    }

    /// Maps a dense id back to its surface. Panics on an out-of-range id,
    /// which indicates a sequence that does not belong to this schema.
    pub fn decode(&self, id: LabelId) -> &str {
        &self.labels[id].surface
    }

    /// Splits a BIO surface into its prefix and span type, if it has one.
    /// `"B-MWE"` yields `('B', "MWE")`; `"O"` and flat labels yield `None`.
    pub fn bio_parts(surface: &str) -> Option<(char, &str)> {
        surface
            .strip_prefix("B-")
            .map(|kind| ('B', kind))
            .or_else(|| surface.strip_prefix("I-").map(|kind| ('I', kind)))
    }

    /// Returns every position whose `I-X` label follows neither `B-X` nor
    /// `I-X`. An empty result means the sequence is BIO-valid. Violations are
    /// data, not errors: decoding imperfect models produces them routinely.
    pub fn validate_bio(&self, sequence: &[LabelId]) -> Vec<usize> {
        let mut violations = Vec::new();
        let mut open_kind: Option<&str> = None;
        for (pos, &id) in sequence.iter().enumerate() {
            let surface = self.decode(id);
            match Self::bio_parts(surface) {
                Some(('B', kind)) => open_kind = Some(kind),
                Some(('I', kind)) => {
                    if open_kind != Some(kind) {
                        violations.push(pos);
                    }
                    open_kind = Some(kind);
                }
                _ => open_kind = None,
            }
        }
        violations
    }
}

/// Ordered list of task schemas. The position of a task in `tasks` is its
/// hierarchy index for cascaded coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiTaskSchema {
    pub tasks: Vec<TaskSchema>,
}

impl MultiTaskSchema {
    pub fn new(tasks: Vec<TaskSchema>) -> Result<Self, TagsetError> {
        if tasks.is_empty() {
            return Err(TagsetError::NoTasks);
        }
        let mut seen = BTreeSet::new();
        for t in &tasks {
            if !seen.insert(t.name.clone()) {
                return Err(TagsetError::DuplicateTask(t.name.clone()));
            }
        }
        Ok(MultiTaskSchema { tasks })
    }

    /// Builds a schema from per-task observed surfaces, one scheme per task.
    /// Tasks keep the order of `corpus_labels`.
    pub fn build(
        corpus_labels: &[(String, BTreeSet<String>)],
        scheme_per_task: &[Scheme],
    ) -> Result<Self, TagsetError> {
        if corpus_labels.is_empty() {
            return Err(TagsetError::NoTasks);
        }
        assert_eq!(corpus_labels.len(), scheme_per_task.len());
        let tasks = corpus_labels
            .iter()
            .zip(scheme_per_task)
            .map(|((name, surfaces), &scheme)| {
                TaskSchema::build(name, surfaces.iter().cloned(), scheme)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(tasks)
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn task_index(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.name == name)
    }

    /// Writes the schema as a structured text file, one `[[task]]` section per
    /// task with its name, scheme, and ordered label surfaces.
    pub fn write_file(&self, path: &Path) -> Result<(), TagsetError> {
        let doc = SchemaFile::from(self);
        let text = toml::to_string_pretty(&doc).expect("schema serializes");
        std::fs::write(path, text).map_err(|source| TagsetError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Reads a schema file written by [`MultiTaskSchema::write_file`].
    pub fn read_file(path: &Path) -> Result<Self, TagsetError> {
        let text = std::fs::read_to_string(path).map_err(|source| TagsetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let doc: SchemaFile = toml::from_str(&text).map_err(|e| TagsetError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        doc.try_into().map_err(|message| TagsetError::Parse {
            path: path.display().to_string(),
            message,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    task: Vec<SchemaFileTask>,
}

#[derive(Serialize, Deserialize)]
struct SchemaFileTask {
    name: String,
    scheme: String,
    labels: Vec<String>,
}

impl From<&MultiTaskSchema> for SchemaFile {
    fn from(schema: &MultiTaskSchema) -> Self {
        SchemaFile {
            task: schema
                .tasks
                .iter()
                .map(|t| SchemaFileTask {
                    name: t.name.clone(),
                    scheme: t.scheme.to_string(),
                    labels: t.labels.iter().map(|l| l.surface.clone()).collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<SchemaFile> for MultiTaskSchema {
    type Error = String;

    fn try_from(doc: SchemaFile) -> Result<Self, String> {
        let tasks = doc
            .task
            .into_iter()
            .map(|t| {
                let scheme = match t.scheme.as_str() {
                    "BIO" => Scheme::Bio,
                    "FLAT" => Scheme::Flat,
                    other => return Err(format!("unknown scheme {other:?}")),
                };
                let labels = t
                    .labels
                    .into_iter()
                    .enumerate()
                    .map(|(id, surface)| Label { id, surface })
                    .collect();
                let schema = TaskSchema {
                    name: t.name,
                    labels,
                    scheme,
                };
                schema.check_scheme().map_err(|e| e.to_string())?;
                Ok(schema)
            })
            .collect::<Result<Vec<_>, String>>()?;
        MultiTaskSchema::new(tasks).map_err(|e| e.to_string())
    }
}

/// Convenience used by schema inference: groups observed surfaces per task.
pub fn collect_surfaces(columns: &[Vec<String>], names: &[String]) -> Vec<(String, BTreeSet<String>)> {
    let mut out: Vec<(String, BTreeSet<String>)> = names
        .iter()
        .map(|n| (n.clone(), BTreeSet::new()))
        .collect();
    for (task, surfaces) in out.iter_mut().zip(columns) {
        task.1.extend(surfaces.iter().cloned());
    }
    out
}

/// Infers a scheme by prefix inspection: BIO iff every non-`"O"` surface
/// starts with `B-` or `I-`.
pub fn infer_scheme<'a>(surfaces: impl IntoIterator<Item = &'a str>) -> Scheme {
    let mut saw_any = false;
    for s in surfaces {
        if s == "O" {
            continue;
        }
        saw_any = true;
        if !(s.starts_with("B-") || s.starts_with("I-")) {
            return Scheme::Flat;
        }
    }
    if saw_any {
        Scheme::Bio
    } else {
        // An inventory of only "O" carries no span structure either way.
        Scheme::Flat
    }
}

// Unused here but handy for callers building schemas by hand.
pub type SurfaceMap = BTreeMap<String, LabelId>;

#[cfg(test)]
mod tests {
    use super::*;

    fn mwe_task() -> TaskSchema {
        TaskSchema::build(
            "MWE",
            ["O", "B-MWE", "I-MWE"].map(String::from),
            Scheme::Bio,
        )
        .unwrap()
    }

    #[test]
    fn o_is_pinned_to_zero_and_rest_sorted() {
        let t = mwe_task();
        assert_eq!(t.size(), 3);
        assert_eq!(t.encode("O").unwrap(), 0);
        assert_eq!(t.decode(0), "O");
        // Remaining labels lexicographic: B-MWE before I-MWE.
        assert_eq!(t.decode(1), "B-MWE");
        assert_eq!(t.decode(2), "I-MWE");
    }

    #[test]
    fn flat_task_is_lexicographic() {
        let t = TaskSchema::build("POS", ["NOUN", "VERB"].map(String::from), Scheme::Flat).unwrap();
        assert_eq!(t.size(), 2);
        assert_eq!(t.encode("NOUN").unwrap(), 0);
        assert_eq!(t.encode("VERB").unwrap(), 1);
    }

    #[test]
    fn orphan_inside_tag_is_a_scheme_violation() {
        let err = TaskSchema::build("T", ["I-X", "O"].map(String::from), Scheme::Bio).unwrap_err();
        assert!(matches!(err, TagsetError::SchemeViolation { .. }));
    }

    #[test]
    fn encode_decode_round_trip() {
        let t = mwe_task();
        for label in &t.labels {
            assert_eq!(t.decode(t.encode(&label.surface).unwrap()), label.surface);
        }
        assert!(matches!(
            t.encode("B-XYZ"),
            Err(TagsetError::UnknownLabel { .. })
        ));
    }

    #[test]
    fn build_is_deterministic() {
        let a = TaskSchema::build("T", ["B-A", "O", "I-A", "B-B"].map(String::from), Scheme::Bio)
            .unwrap();
        let b = TaskSchema::build("T", ["I-A", "B-B", "B-A", "O"].map(String::from), Scheme::Bio)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn validate_bio_flags_inside_without_begin() {
        let t = mwe_task();
        let enc = |s: &[&str]| -> Vec<usize> { s.iter().map(|x| t.encode(x).unwrap()).collect() };
        assert!(t.validate_bio(&enc(&["O", "B-MWE", "I-MWE"])).is_empty());
        assert_eq!(t.validate_bio(&enc(&["O", "I-MWE", "O"])), vec![1]);
        assert!(t.validate_bio(&enc(&["B-MWE", "I-MWE", "I-MWE"])).is_empty());
        // I-MWE at the start is also orphaned.
        assert_eq!(t.validate_bio(&enc(&["I-MWE"])), vec![0]);
    }

    #[test]
    fn validate_bio_accepts_exactly_the_span_language() {
        // (O | B-X I-X*)* over a two-type inventory, checked by enumeration.
        let t = TaskSchema::build(
            "T",
            ["O", "B-A", "I-A", "B-B", "I-B"].map(String::from),
            Scheme::Bio,
        )
        .unwrap();
        let k = t.size();
        for len in 1..=4usize {
            for mut code in 0..k.pow(len as u32) {
                let seq: Vec<usize> = (0..len)
                    .map(|_| {
                        let id = code % k;
                        code /= k;
                        id
                    })
                    .collect();
                let accepted = {
                    let mut open: Option<&str> = None;
                    let mut ok = true;
                    for &id in &seq {
                        match TaskSchema::bio_parts(t.decode(id)) {
                            Some(('B', kind)) => open = Some(kind),
                            Some(('I', kind)) => {
                                if open != Some(kind) {
                                    ok = false;
                                    break;
                                }
                            }
                            _ => open = None,
                        }
                    }
                    ok
                };
                assert_eq!(t.validate_bio(&seq).is_empty(), accepted, "seq {seq:?}");
            }
        }
    }

    #[test]
    fn schema_requires_unique_task_names() {
        let t = mwe_task();
        let err = MultiTaskSchema::new(vec![t.clone(), t]).unwrap_err();
        assert!(matches!(err, TagsetError::DuplicateTask(_)));
    }

    #[test]
    fn schema_file_round_trips() {
        let schema = MultiTaskSchema::new(vec![
            mwe_task(),
            TaskSchema::build("POS", ["DET", "NOUN"].map(String::from), Scheme::Flat).unwrap(),
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schema.toml");
        schema.write_file(&path).unwrap();
        let loaded = MultiTaskSchema::read_file(&path).unwrap();
        assert_eq!(schema, loaded);
    }

    #[test]
    fn scheme_inference_uses_prefixes() {
        assert_eq!(infer_scheme(["O", "B-X", "I-X"]), Scheme::Bio);
        assert_eq!(infer_scheme(["NOUN", "VERB"]), Scheme::Flat);
        assert_eq!(infer_scheme(["O"]), Scheme::Flat);
    }
}
