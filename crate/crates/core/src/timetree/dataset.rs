use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{derive_features, explanatory_from_features, ExplanatoryVector, FeatureVector, LayerKind, StructureConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Measured,
    Synthetic,
}

/// One profiled layer with its derived vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub config: StructureConfig,
    pub features: FeatureVector,
    pub explanatory: ExplanatoryVector,
    pub time_ms: f64,
    pub reps: u32,
    pub source: Source,
}

impl Sample {
    pub fn new(config: StructureConfig, time_ms: f64) -> Result<Self> {
        Self::with_meta(config, time_ms, 1, Source::Measured)
    }

    pub fn with_meta(config: StructureConfig, time_ms: f64, reps: u32, source: Source) -> Result<Self> {
        if !(time_ms.is_finite() && time_ms > 0.0) {
            return Err(Error::invalid(format!("time_ms must be > 0, got {time_ms}")));
        }
        if reps == 0 {
            return Err(Error::invalid("reps must be >= 1"));
        }
        let features = derive_features(&config)?;
        let explanatory = explanatory_from_features(&config, &features);
        Ok(Sample { config, features, explanatory, time_ms, reps, source })
    }
}

/// Profiling records of a single layer kind, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    kind: LayerKind,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(kind: LayerKind) -> Self {
        Dataset { kind, samples: Vec::new() }
    }

    pub fn from_samples(kind: LayerKind, samples: Vec<Sample>) -> Result<Self> {
        let mut ds = Dataset::new(kind);
        for s in samples {
            ds.push_sample(s)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, config: StructureConfig, time_ms: f64) -> Result<()> {
        self.push_sample(Sample::new(config, time_ms)?)
    }

    pub fn push_sample(&mut self, sample: Sample) -> Result<()> {
        if sample.config.kind() != self.kind {
            return Err(Error::KindMismatch { expected: self.kind, found: sample.config.kind() });
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.time_ms).collect()
    }

    pub fn explanatory_rows(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.explanatory.to_vec()).collect()
    }

    pub(crate) fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset { kind: self.kind, samples: indices.iter().map(|&i| self.samples[i].clone()).collect() }
    }
}
