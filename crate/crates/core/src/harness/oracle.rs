use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::profile::ProfileSample;
use crate::error::{Error, Result};
use crate::layer::{LayerKind, StructureConfig};
use crate::timetree::{check_version, format_version, Condition, LinearFit, ModelDocument, Source, TimeModel};

/// Repetitions recorded on synthetic samples, matching a typical profiling run.
pub const SYNTH_REPS: u32 = 20;

/// Ground-truth latency laws standing in for an on-device profiler.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOracle {
    /// Relative standard deviation of the multiplicative noise.
    pub noise: f64,
    pub seed: u64,
    pub trees: BTreeMap<LayerKind, TimeModel>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleDocument {
    format_version: String,
    noise: f64,
    seed: u64,
    models: Vec<ModelDocument>,
}

fn law(w: &[f64], b: f64) -> LinearFit {
    LinearFit { w: w.to_vec(), b, n: 0, mape: 0.0, mse: 0.0 }
}

impl SyntheticOracle {
    pub fn new(noise: f64, seed: u64, trees: impl IntoIterator<Item = TimeModel>) -> Result<Self> {
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(Error::invalid(format!("noise must be >= 0, got {noise}")));
        }
        let mut map = BTreeMap::new();
        for tree in trees {
            tree.validate()?;
            if map.insert(tree.kind, tree).is_some() {
                return Err(Error::invalid("oracle lists a layer kind twice"));
            }
        }
        Ok(SyntheticOracle { noise, seed, trees: map })
    }

    /// A phone-class CPU: CNN channel counts divisible by 4 run markedly
    /// faster, and recurrent layers pay a fixed cost per step.
    pub fn reference_device(noise: f64, seed: u64) -> Self {
        let mut cnn = TimeModel::single_leaf(LayerKind::Cnn, vec![3.2e-8, 6.0e-6, 0.0], 10.0);
        let (aligned, _) = cnn
            .split_leaf(
                0,
                Condition::multiple(4, 4),
                law(&[3.3e-8, 5.0e-6, 0.0], 9.0),
                law(&[3.11e-8, 8.03e-6, 0.0], 12.82),
            )
            .expect("planted CNN split");
        cnn.split_leaf(
            aligned,
            Condition::multiple(5, 4),
            law(&[3.41e-8, 4.03e-6, 0.0], 8.11),
            law(&[3.30e-8, 6.0e-6, 0.0], 10.2),
        )
        .expect("planted CNN split");

        let fc = TimeModel::single_leaf(LayerKind::Fc, vec![2.5e-8, 1.5e-5, 0.0], 0.08);
        let gru = TimeModel::single_leaf(LayerKind::Gru, vec![4.0e-8, 2.0e-5, 0.0, 0.666], 0.5);
        let lstm = TimeModel::single_leaf(LayerKind::Lstm, vec![4.5e-8, 2.2e-5, 0.0, 0.8], 0.6);
        SyntheticOracle::new(noise, seed, [cnn, fc, gru, lstm]).expect("planted oracle is valid")
    }

    pub fn tree(&self, kind: LayerKind) -> Result<&TimeModel> {
        self.trees.get(&kind).ok_or(Error::MissingModel(kind))
    }

    pub fn noiseless(&self, config: &StructureConfig) -> Result<f64> {
        self.tree(config.kind())?.predict_raw(config)
    }

    /// Planted latency of `config` with multiplicative noise; the noise draw
    /// depends only on the oracle seed and the configuration.
    pub fn synth_time(&self, config: &StructureConfig) -> Result<ProfileSample> {
        let clean = self.noiseless(config)?;
        let mut time_ms = clean;
        if self.noise > 0.0 {
            let normal = Normal::new(0.0, self.noise).map_err(|e| Error::Numeric(e.to_string()))?;
            let mut rng = ChaCha8Rng::from_seed(self.config_seed(config));
            // resample the rare draws that would make the time non-positive
            time_ms = (0..64)
                .map(|_| clean * (1.0 + normal.sample(&mut rng)))
                .find(|t| *t > 0.0)
                .unwrap_or(clean);
        }
        if !(time_ms.is_finite() && time_ms > 0.0) {
            return Err(Error::Numeric(format!("oracle produced non-positive time {time_ms} for {config}")));
        }
        Ok(ProfileSample { config: *config, time_ms, reps: SYNTH_REPS, source: Source::Synthetic })
    }

    fn config_seed(&self, config: &StructureConfig) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(serde_json::to_vec(config).expect("configs serialize"));
        hasher.finalize().into()
    }

    pub fn to_json(&self) -> Vec<u8> {
        let doc = OracleDocument {
            format_version: format_version(),
            noise: self.noise,
            seed: self.seed,
            models: self.trees.values().map(ModelDocument::from).collect(),
        };
        let mut bytes = serde_json::to_vec_pretty(&doc).expect("oracle documents serialize");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let doc: OracleDocument = serde_json::from_slice(bytes)?;
        check_version(&doc.format_version)?;
        let trees = doc.models.into_iter().map(TimeModel::try_from).collect::<Result<Vec<_>>>()?;
        SyntheticOracle::new(doc.noise, doc.seed, trees)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::Padding;

    #[test]
    fn noiseless_single_leaf_value() {
        let tree = TimeModel::single_leaf(LayerKind::Fc, vec![1.0, 0.0, 0.0], 2.0);
        let oracle = SyntheticOracle::new(0.0, 1, [tree]).unwrap();
        // FC(1,1): flops = 2 + 1 = 3
        assert_eq!(oracle.synth_time(&StructureConfig::fc(1, 1)).unwrap().time_ms, 5.0);
        assert!(matches!(oracle.synth_time(&StructureConfig::gru(1, 1, 8)), Err(Error::MissingModel(_))));
    }

    #[test]
    fn planted_cnn_laws() {
        let oracle = SyntheticOracle::reference_device(0.0, 0);
        let slow = StructureConfig::cnn(24, 24, 3, 3, 1, Padding::Same, 43, 64);
        let fast = StructureConfig::cnn(24, 24, 3, 3, 1, Padding::Same, 44, 64);
        let t_slow = oracle.noiseless(&slow).unwrap();
        let t_fast = oracle.noiseless(&fast).unwrap();
        assert!((t_slow - 16.0).abs() < 0.1, "{t_slow}");
        assert!((t_fast - 10.27).abs() < 0.05, "{t_fast}");
    }

    #[test]
    fn noise_is_deterministic_and_sized() {
        let oracle = SyntheticOracle::reference_device(0.01, 42);
        let cfg = StructureConfig::fc(100, 200);
        assert_eq!(oracle.synth_time(&cfg).unwrap(), oracle.synth_time(&cfg).unwrap());
        let mut ape = 0.0;
        for i in 1..=1000 {
            let c = StructureConfig::fc(i, 64);
            ape += (oracle.synth_time(&c).unwrap().time_ms / oracle.noiseless(&c).unwrap() - 1.0).abs();
        }
        let mape = ape / 1000.0;
        // E|e| for e ~ N(0, 0.01^2) is 0.01 * sqrt(2/pi)
        let expected = 0.01 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((mape - expected).abs() < 0.1 * expected, "{mape} vs {expected}");
    }

    #[test]
    fn oracle_file_round_trip() {
        let oracle = SyntheticOracle::reference_device(0.02, 5);
        assert_eq!(SyntheticOracle::from_json(&oracle.to_json()).unwrap(), oracle);
        assert!(SyntheticOracle::new(-0.1, 0, []).is_err());
    }
}
