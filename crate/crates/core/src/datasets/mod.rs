//! Dataset ingestion, the canonical instance format, and subset sampling.

mod bbq;
mod sampling;
mod stereoset;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BiasInstance, Dataset, ValidationError};

pub use bbq::{load_bbq, parse_bbq_record, BBQ_CATEGORIES};
pub use sampling::{sample_subset, shuffle_options};
pub use stereoset::{
    adapt_stereoset, adapt_stereoset_str, counterpart_group, unknown_text_for, SENTENCE_QUESTION,
    STEREOSET_CATEGORIES, UNKNOWN_POOL, WORD_QUESTION,
};

/// Version of the canonical JSONL layout written by [`write_instances`].
pub const SCHEMA_VERSION: u32 = 1;
const SCHEMA_NAME: &str = "mpt-instances";

/// Bumped whenever the adaptation rules change the produced instances.
pub const ADAPTATION_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unsupported instance schema version {found} (expected {SCHEMA_VERSION})")]
    SchemaVersion { found: u32 },
    #[error("no dataset files found under {0}")]
    NoFiles(PathBuf),
    #[error("record {id}: {reason}")]
    RoleDerivation { id: String, reason: String },
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error("{dataset} {category}: expected {expected} instances, found {found}")]
    CountMismatch {
        dataset: Dataset,
        category: String,
        expected: u64,
        found: u64,
    },
    #[error("{dataset} {category}: needs {needed} instances, has {available}")]
    InsufficientCategory {
        dataset: Dataset,
        category: String,
        needed: usize,
        available: usize,
    },
}

pub(crate) fn io_error(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Lists the files under `path` with the given extension, sorted by name.
/// A plain file is returned as is.
pub(crate) fn collect_files(path: &Path, extension: &str) -> Result<Vec<PathBuf>, DatasetError> {
    let meta = std::fs::metadata(path).map_err(io_error(path))?;
    if meta.is_file() {
        return Ok(vec![path.to_owned()]);
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(path).map_err(io_error(path))? {
        let entry = entry.map_err(io_error(path))?;
        let p = entry.path();
        if p.is_file() && p.extension().is_some_and(|e| e == extension) {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(DatasetError::NoFiles(path.to_owned()));
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub dataset: Dataset,
    pub category: String,
    pub expected: u64,
}

/// What a loaded dataset should contain and where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub categories: Vec<CategoryCount>,
    #[serde(default)]
    pub sources: Vec<PathBuf>,
    pub adaptation_version: String,
    #[serde(default)]
    pub sampling_seed: Option<u64>,
}

impl DatasetManifest {
    /// Per-category sizes of the full BBQ release.
    pub fn bbq_official() -> Self {
        Self::from_table("bbq", Dataset::Bbq, BBQ_CATEGORIES)
    }

    /// Per-category sizes of the adapted StereoSet release, both task levels.
    pub fn stereoset_official() -> Self {
        let mut manifest =
            Self::from_table("stereoset", Dataset::StereoSetWord, STEREOSET_CATEGORIES);
        manifest.categories.extend(
            Self::from_table("stereoset", Dataset::StereoSetSentence, stereoset::SENTENCE_COUNTS)
                .categories,
        );
        manifest
    }

    fn from_table(name: &str, dataset: Dataset, table: &[(&str, u64)]) -> Self {
        Self {
            name: name.to_owned(),
            categories: table
                .iter()
                .map(|(category, expected)| CategoryCount {
                    dataset,
                    category: (*category).to_owned(),
                    expected: *expected,
                })
                .collect(),
            sources: Vec::new(),
            adaptation_version: ADAPTATION_VERSION.to_owned(),
            sampling_seed: None,
        }
    }

    pub fn total(&self) -> u64 {
        self.categories.iter().map(|c| c.expected).sum()
    }

    /// Fails on the first category whose count differs, including categories
    /// present in the data but absent from the manifest.
    pub fn check(&self, instances: &[BiasInstance]) -> Result<(), DatasetError> {
        let found = count_by_category(instances);
        for c in &self.categories {
            let n = found
                .get(&(c.dataset, c.category.clone()))
                .copied()
                .unwrap_or(0);
            if n != c.expected {
                return Err(DatasetError::CountMismatch {
                    dataset: c.dataset,
                    category: c.category.clone(),
                    expected: c.expected,
                    found: n,
                });
            }
        }
        for ((dataset, category), n) in found {
            if !self
                .categories
                .iter()
                .any(|c| c.dataset == dataset && c.category == category)
            {
                return Err(DatasetError::CountMismatch {
                    dataset,
                    category,
                    expected: 0,
                    found: n,
                });
            }
        }
        Ok(())
    }
}

pub fn count_by_category(instances: &[BiasInstance]) -> BTreeMap<(Dataset, String), u64> {
    let mut counts = BTreeMap::new();
    for i in instances {
        *counts
            .entry((i.dataset(), i.category().to_owned()))
            .or_insert(0) += 1;
    }
    counts
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    schema_version: u32,
}

/// Writes a header line followed by one instance per line.
pub fn write_instances<W: Write>(mut out: W, instances: &[BiasInstance]) -> io::Result<()> {
    let header = Header {
        schema: SCHEMA_NAME.to_owned(),
        schema_version: SCHEMA_VERSION,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for instance in instances {
        serde_json::to_writer(&mut out, instance)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Reads the canonical format. `path` is used only in error messages.
pub fn read_instances<R: BufRead>(input: R, path: &Path) -> Result<Vec<BiasInstance>, DatasetError> {
    let schema_error = |line: usize, message: String| DatasetError::Schema {
        path: path.to_owned(),
        line,
        message,
    };
    let mut lines = input.lines().enumerate();
    let header: Header = loop {
        match lines.next() {
            None => return Err(schema_error(1, "missing schema header".into())),
            Some((_, line)) => {
                let line = line.map_err(io_error(path))?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line)
                    .map_err(|e| schema_error(1, format!("bad schema header: {e}")))?;
            }
        }
    };
    if header.schema != SCHEMA_NAME {
        return Err(schema_error(1, format!("unknown schema {:?}", header.schema)));
    }
    if header.schema_version != SCHEMA_VERSION {
        return Err(DatasetError::SchemaVersion {
            found: header.schema_version,
        });
    }
    let mut instances = Vec::new();
    for (index, line) in lines {
        let line = line.map_err(io_error(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let instance = serde_json::from_str(&line).map_err(|e| schema_error(index + 1, e.to_string()))?;
        instances.push(instance);
    }
    Ok(instances)
}

pub fn save_instances(path: &Path, instances: &[BiasInstance]) -> Result<(), DatasetError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_error(parent))?;
    }
    let file = File::create(path).map_err(io_error(path))?;
    write_instances(BufWriter::new(file), instances).map_err(io_error(path))
}

pub fn load_instances(path: &Path) -> Result<Vec<BiasInstance>, DatasetError> {
    let file = File::open(path).map_err(io_error(path))?;
    read_instances(BufReader::new(file), path)
}
