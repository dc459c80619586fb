use std::io::{BufRead, Write};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{LayerKind, Padding, StructureConfig};

/// Sampling ranges for randomly generated profiling networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scope {
    pub name: String,
    pub kinds: Vec<LayerKind>,
    pub fc_dim: (u32, u32),
    pub cnn_extent: (u32, u32),
    pub kernels: Vec<(u32, u32)>,
    pub cnn_channels: (u32, u32),
    pub paddings: Vec<Padding>,
    pub strides: Vec<u32>,
    pub rnn_dim: (u32, u32),
    pub steps: Vec<u32>,
    /// Components per generated network, inclusive.
    pub layers_per_network: (usize, usize),
}

impl Default for Scope {
    fn default() -> Self {
        Scope {
            name: "default".into(),
            kinds: LayerKind::ALL.to_vec(),
            fc_dim: (1, 4096),
            cnn_extent: (24, 225),
            kernels: vec![(2, 2), (3, 3), (4, 4), (5, 5), (2, 3)],
            cnn_channels: (1, 256),
            paddings: vec![Padding::Valid, Padding::Same],
            strides: vec![1, 2],
            rnn_dim: (1, 512),
            steps: vec![8, 10, 15, 20],
            layers_per_network: (6, 16),
        }
    }
}

impl Scope {
    /// `default` covers every kind; `fc`, `cnn` and `rnn` restrict the kinds.
    pub fn named(name: &str) -> Result<Self> {
        let kinds = match name {
            "default" => LayerKind::ALL.to_vec(),
            "fc" => vec![LayerKind::Fc],
            "cnn" => vec![LayerKind::Cnn],
            "rnn" => vec![LayerKind::Gru, LayerKind::Lstm],
            other => return Err(Error::invalid(format!("unknown scope `{other}` (expected default, fc, cnn, rnn)"))),
        };
        Ok(Scope { name: name.to_string(), kinds, ..Scope::default() })
    }

    pub fn sample(&self, kind: LayerKind, rng: &mut impl Rng) -> StructureConfig {
        match kind {
            LayerKind::Fc => StructureConfig::fc(
                rng.random_range(self.fc_dim.0..=self.fc_dim.1),
                rng.random_range(self.fc_dim.0..=self.fc_dim.1),
            ),
            LayerKind::Cnn => {
                let &(kh, kw) = self.kernels.choose(rng).expect("scope lists kernels");
                StructureConfig::cnn(
                    rng.random_range(self.cnn_extent.0..=self.cnn_extent.1),
                    rng.random_range(self.cnn_extent.0..=self.cnn_extent.1),
                    kh,
                    kw,
                    *self.strides.choose(rng).expect("scope lists strides"),
                    *self.paddings.choose(rng).expect("scope lists paddings"),
                    rng.random_range(self.cnn_channels.0..=self.cnn_channels.1),
                    rng.random_range(self.cnn_channels.0..=self.cnn_channels.1),
                )
            }
            LayerKind::Gru | LayerKind::Lstm => {
                let in_dim = rng.random_range(self.rnn_dim.0..=self.rnn_dim.1);
                let out_dim = rng.random_range(self.rnn_dim.0..=self.rnn_dim.1);
                let step = *self.steps.choose(rng).expect("scope lists steps");
                if kind == LayerKind::Gru {
                    StructureConfig::gru(in_dim, out_dim, step)
                } else {
                    StructureConfig::lstm(in_dim, out_dim, step)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub network: usize,
    pub config: StructureConfig,
}

/// Random profiling networks drawn uniformly from `scope`, reproducible from `seed`.
pub fn generate_plan(scope: &Scope, n_networks: usize, seed: u64) -> Result<Vec<PlanEntry>> {
    if n_networks == 0 {
        return Err(Error::invalid("n_networks must be >= 1"));
    }
    if scope.kinds.is_empty() || scope.layers_per_network.0 == 0 || scope.layers_per_network.0 > scope.layers_per_network.1 {
        return Err(Error::invalid(format!("scope `{}` is empty", scope.name)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = Vec::new();
    for network in 0..n_networks {
        let layers = rng.random_range(scope.layers_per_network.0..=scope.layers_per_network.1);
        for _ in 0..layers {
            let kind = *scope.kinds.choose(&mut rng).expect("non-empty kinds");
            plan.push(PlanEntry { network, config: scope.sample(kind, &mut rng) });
        }
    }
    Ok(plan)
}

pub fn write_plan(mut out: impl Write, plan: &[PlanEntry]) -> Result<()> {
    for entry in plan {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_plan(input: impl BufRead) -> Result<Vec<PlanEntry>> {
    let mut plan = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: PlanEntry =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        entry.config.validate().map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        plan.push(entry);
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_size_matches_profiling_campaign() {
        let plan = generate_plan(&Scope::default(), 120, 3).unwrap();
        assert!((1100..=1550).contains(&plan.len()), "{}", plan.len());
        assert_eq!(plan.last().unwrap().network, 119);
    }

    #[test]
    fn cnn_draws_stay_in_scope() {
        let plan = generate_plan(&Scope::default(), 200, 11).unwrap();
        let kernels = Scope::default().kernels;
        for e in plan {
            if let StructureConfig::Cnn(c) = e.config {
                assert!((1..=256).contains(&c.in_channel) && (1..=256).contains(&c.out_channel));
                assert!((24..=225).contains(&c.in_height) && (24..=225).contains(&c.in_width));
                assert!(kernels.contains(&(c.kernel_height, c.kernel_width)));
            }
            e.config.validate().unwrap();
        }
    }

    #[test]
    fn seeded_and_guarded() {
        let s = Scope::default();
        assert_eq!(generate_plan(&s, 5, 9).unwrap(), generate_plan(&s, 5, 9).unwrap());
        assert_ne!(generate_plan(&s, 5, 9).unwrap(), generate_plan(&s, 5, 10).unwrap());
        assert!(generate_plan(&s, 0, 9).is_err());
        assert!(Scope::named("tpu").is_err());
    }

    #[test]
    fn plan_file_round_trip() {
        let plan = generate_plan(&Scope::named("rnn").unwrap(), 3, 1).unwrap();
        let mut buf = Vec::new();
        write_plan(&mut buf, &plan).unwrap();
        assert_eq!(read_plan(buf.as_slice()).unwrap(), plan);
    }
}
