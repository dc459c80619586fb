//! Line-delimited profile records.
//!
//! One JSON object per line:
//!
//! ```text
//! {"schema_version":1,"layer_type":"CNN","config":{"in_height":24,...},"time_ms":10.27,"reps":20,"source":"measured"}
//! ```
//!
//! `config` holds only the fields legal for `layer_type`. `schema_version`
//! defaults to 1, `reps` to 1 and `source` to `measured`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{LayerKind, StructureConfig};
use crate::timetree::{Dataset, Sample, Source};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSample {
    pub config: StructureConfig,
    pub time_ms: f64,
    pub reps: u32,
    pub source: Source,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    #[serde(default = "default_schema")]
    schema_version: u32,
    layer_type: LayerKind,
    config: serde_json::Value,
    time_ms: f64,
    #[serde(default = "default_reps")]
    reps: u32,
    #[serde(default)]
    source: Source,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_reps() -> u32 {
    1
}

impl From<&ProfileSample> for Record {
    fn from(s: &ProfileSample) -> Self {
        Record {
            schema_version: SCHEMA_VERSION,
            layer_type: s.config.kind(),
            config: s.config.fields(),
            time_ms: s.time_ms,
            reps: s.reps,
            source: s.source,
        }
    }
}

/// Per-kind datasets built from a profile file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProfileSet {
    pub datasets: BTreeMap<LayerKind, Dataset>,
}

impl ProfileSet {
    pub fn from_samples(samples: &[ProfileSample]) -> Result<Self> {
        let mut set = ProfileSet::default();
        for s in samples {
            let kind = s.config.kind();
            set.datasets
                .entry(kind)
                .or_insert_with(|| Dataset::new(kind))
                .push_sample(Sample::with_meta(s.config, s.time_ms, s.reps, s.source)?)?;
        }
        Ok(set)
    }

    pub fn get(&self, kind: LayerKind) -> Option<&Dataset> {
        self.datasets.get(&kind)
    }

    pub fn total_len(&self) -> usize {
        self.datasets.values().map(Dataset::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_len() == 0
    }
}

pub fn read_profile(input: impl BufRead) -> Result<Vec<ProfileSample>> {
    let mut out = Vec::new();
    let mut schema: Option<u32> = None;
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: line_no, message };
        let record: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        match schema {
            None => schema = Some(record.schema_version),
            Some(v) if v != record.schema_version => {
                return Err(parse_err(format!("mixed schema versions {v} and {}", record.schema_version)))
            }
            _ => {}
        }
        if record.schema_version != SCHEMA_VERSION {
            return Err(parse_err(format!("unsupported schema version {}", record.schema_version)));
        }
        if !(record.time_ms.is_finite() && record.time_ms > 0.0) {
            return Err(parse_err(format!("time_ms must be > 0, got {}", record.time_ms)));
        }
        if record.reps == 0 {
            return Err(parse_err("reps must be >= 1".into()));
        }
        let config =
            StructureConfig::from_fields(record.layer_type, record.config).map_err(|e| parse_err(e.to_string()))?;
        out.push(ProfileSample { config, time_ms: record.time_ms, reps: record.reps, source: record.source });
    }
    Ok(out)
}

pub fn write_profile(mut out: impl Write, samples: &[ProfileSample]) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, &Record::from(s))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_dataset(out: impl Write, dataset: &Dataset) -> Result<()> {
    let samples: Vec<ProfileSample> = dataset
        .samples()
        .iter()
        .map(|s| ProfileSample { config: s.config, time_ms: s.time_ms, reps: s.reps, source: s.source })
        .collect();
    write_profile(out, &samples)
}

/// Reads a profile file and groups its records by layer kind.
pub fn ingest_profile(path: impl AsRef<Path>) -> Result<ProfileSet> {
    let file = File::open(path)?;
    ProfileSet::from_samples(&read_profile(BufReader::new(file))?)
}
