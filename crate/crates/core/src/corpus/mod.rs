//! Dataset records, prompt rendering and gold-answer materialization.
//!
//! Datasets are JSON Lines files. Field names follow the public DBLP-QuAD
//! release (`question.string`, `query.sparql`, `query_type`, `template_id`,
//! `temporal`, `held_out`); hint lists carry labels and schema context.

mod materialize;
mod prompt;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::sparql::AnswerSet;

pub use materialize::{materialize_gold_answers, MaterializeError};
pub use prompt::{render_prompt, Prompt, SYSTEM_PROMPT_COT, SYSTEM_PROMPT_DIRECT, USER_PROMPT_TEMPLATE};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// The ten DBLP-QuAD question categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QueryType {
    SingleFact,
    MultipleFacts,
    Boolean,
    Negation,
    DoubleNegation,
    DoubleIntent,
    Union,
    Count,
    SuperlativeComparative,
    Disambiguation,
}

impl QueryType {
    pub const ALL: [QueryType; 10] = [
        QueryType::SingleFact,
        QueryType::MultipleFacts,
        QueryType::Boolean,
        QueryType::Negation,
        QueryType::DoubleNegation,
        QueryType::DoubleIntent,
        QueryType::Union,
        QueryType::Count,
        QueryType::SuperlativeComparative,
        QueryType::Disambiguation,
    ];

    /// Column order of the category table (alphabetical by abbreviation).
    pub const TABLE_ORDER: [QueryType; 10] = [
        QueryType::Boolean,
        QueryType::Count,
        QueryType::Disambiguation,
        QueryType::DoubleIntent,
        QueryType::DoubleNegation,
        QueryType::MultipleFacts,
        QueryType::Negation,
        QueryType::SingleFact,
        QueryType::SuperlativeComparative,
        QueryType::Union,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QueryType::SingleFact => "Single Fact",
            QueryType::MultipleFacts => "Multiple Facts",
            QueryType::Boolean => "Boolean",
            QueryType::Negation => "Negation",
            QueryType::DoubleNegation => "Double Negation",
            QueryType::DoubleIntent => "Double Intent",
            QueryType::Union => "Union",
            QueryType::Count => "Count",
            QueryType::SuperlativeComparative => "Superlative/Comparative",
            QueryType::Disambiguation => "Disambiguation",
        }
    }

    pub fn abbreviation(self) -> &'static str {
        match self {
            QueryType::SingleFact => "SF",
            QueryType::MultipleFacts => "Multi",
            QueryType::Boolean => "Bool",
            QueryType::Negation => "Neg",
            QueryType::DoubleNegation => "D-Neg",
            QueryType::DoubleIntent => "D-Int",
            QueryType::Union => "Un",
            QueryType::Count => "Cnt",
            QueryType::SuperlativeComparative => "Sup+Comp",
            QueryType::Disambiguation => "Disamb",
        }
    }
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown query_type {0:?}")]
pub struct UnknownQueryType(pub String);

impl FromStr for QueryType {
    type Err = UnknownQueryType;

    /// Case, spacing and punctuation are ignored, so `"Single Fact"`,
    /// `"SINGLE_FACT"` and `"SingleFact"` all parse.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        let t = match key.as_str() {
            "singlefact" => QueryType::SingleFact,
            "multiplefacts" | "multiplefact" => QueryType::MultipleFacts,
            "boolean" => QueryType::Boolean,
            "negation" => QueryType::Negation,
            "doublenegation" => QueryType::DoubleNegation,
            "doubleintent" => QueryType::DoubleIntent,
            "union" => QueryType::Union,
            "count" => QueryType::Count,
            "superlativecomparative" | "comparativesuperlative" => QueryType::SuperlativeComparative,
            "disambiguation" => QueryType::Disambiguation,
            _ => return Err(UnknownQueryType(s.to_string())),
        };
        Ok(t)
    }
}

impl Serialize for QueryType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for QueryType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityHint {
    pub uri: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationHint {
    pub uri: String,
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub domain: String,
    #[serde(default)]
    pub range: String,
    #[serde(default)]
    pub comment: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct QuestionField {
    string: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct QueryField {
    sparql: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    question: QuestionField,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    query: Option<QueryField>,
    query_type: QueryType,
    template_id: String,
    #[serde(default)]
    entities: Vec<EntityHint>,
    #[serde(default)]
    relations: Vec<RelationHint>,
    #[serde(default)]
    temporal: bool,
    #[serde(default)]
    held_out: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_answers: Option<AnswerSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    materialize_error: Option<String>,
}

/// One benchmark item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QAInstance {
    pub id: String,
    pub question: String,
    pub entities: Vec<EntityHint>,
    pub relations: Vec<RelationHint>,
    pub gold_query: Option<String>,
    pub query_type: QueryType,
    pub template_id: String,
    pub is_temporal: bool,
    pub is_heldout: bool,
    pub gold_answers: Option<AnswerSet>,
    /// Why materialization failed; such an instance is unusable for rewards.
    pub materialize_error: Option<String>,
}

impl QAInstance {
    pub fn is_usable(&self) -> bool {
        self.gold_answers.is_some()
    }

    /// Copy without the gold query (the no-gold training setting).
    pub fn without_gold_query(&self) -> Self {
        Self {
            gold_query: None,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<(), String> {
        let bad_uri = |u: &str| u.is_empty() || u.contains(char::is_whitespace);
        for e in &self.entities {
            if bad_uri(&e.uri) {
                return Err(format!("entity uri {:?} is empty or contains whitespace", e.uri));
            }
            if e.label.trim().is_empty() {
                return Err(format!("entity {} has an empty label", e.uri));
            }
        }
        for r in &self.relations {
            if bad_uri(&r.uri) {
                return Err(format!("relation uri {:?} is empty or contains whitespace", r.uri));
            }
        }
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        Ok(())
    }

    fn from_record(r: Record) -> Self {
        Self {
            id: r.id,
            question: r.question.string,
            entities: r.entities,
            relations: r.relations,
            gold_query: r.query.map(|q| q.sparql),
            query_type: r.query_type,
            template_id: r.template_id,
            is_temporal: r.temporal,
            is_heldout: r.held_out,
            gold_answers: r.gold_answers,
            materialize_error: r.materialize_error,
        }
    }

    fn to_record(&self) -> Record {
        Record {
            id: self.id.clone(),
            question: QuestionField {
                string: self.question.clone(),
            },
            query: self.gold_query.clone().map(|sparql| QueryField { sparql }),
            query_type: self.query_type,
            template_id: self.template_id.clone(),
            entities: self.entities.clone(),
            relations: self.relations.clone(),
            temporal: self.is_temporal,
            held_out: self.is_heldout,
            gold_answers: self.gold_answers.clone(),
            materialize_error: self.materialize_error.clone(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("record serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn file_stem(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "valid" | "validation" | "dev" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// Resolve the file for a split: a directory holds `<split>.jsonl`, a file
/// path is used as-is.
pub fn split_path(path: impl AsRef<Path>, split: Split) -> PathBuf {
    let path = path.as_ref();
    if path.is_dir() {
        path.join(format!("{}.jsonl", split.file_stem()))
    } else {
        path.to_path_buf()
    }
}

pub fn parse_dataset(text: &str, origin: &Path) -> Result<Vec<QAInstance>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record_err = |message: String| DatasetError::Record {
            path: origin.to_path_buf(),
            line: i + 1,
            message,
        };
        let record: Record = serde_json::from_str(line).map_err(|e| record_err(e.to_string()))?;
        let inst = QAInstance::from_record(record);
        inst.validate().map_err(record_err)?;
        out.push(inst);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>, split: Split) -> Result<Vec<QAInstance>, DatasetError> {
    let file = split_path(path, split);
    let text = std::fs::read_to_string(&file).map_err(|source| DatasetError::Io {
        path: file.clone(),
        source,
    })?;
    parse_dataset(&text, &file)
}

pub fn dataset_to_string(instances: &[QAInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&inst.to_json_line());
        out.push('\n');
    }
    out
}

pub fn save_dataset(path: impl AsRef<Path>, instances: &[QAInstance]) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let io = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(dataset_to_string(instances).as_bytes()).map_err(io)?;
    Ok(())
}
