//! Run configuration: one TOML file with a section per command. Command-line
//! flags are applied on top and win over the file.

use std::path::{Path, PathBuf};

use cobe::apps::{ClusterConfig, MatchMethod};
use cobe::bench::{LinkedBssConfig, ProjectionBenchConfig};
use cobe::cifa::CnfeMode;
use cobe::multiblock::scenarios::{ClassScenario, ClusterScenario};
use cobe::multiblock::SyntheticSpec;
use cobe::preprocess::RankChoice;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Format of matrix artifacts; reports are always written as both.
    pub format: Format,
    /// Multi-block or sample directory read by the analysis commands.
    pub input: Option<PathBuf>,
    pub generate: GenerateConfig,
    pub cobe: CobeSection,
    pub cnfe: CnfeSection,
    pub bench: BenchSection,
    pub cluster: ClusterSection,
    pub classify: ClassifySection,
}

/// Equal-sized synthetic blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub rows: usize,
    pub blocks: usize,
    pub cols: usize,
    pub common: usize,
    pub rank: usize,
    pub snr_db: Option<f64>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            rows: 200,
            blocks: 5,
            cols: 30,
            common: 3,
            rank: 8,
            snr_db: None,
        }
    }
}

impl GenerateConfig {
    pub fn spec(&self, seed: u64) -> SyntheticSpec {
        let mut spec = SyntheticSpec::uniform(self.rows, self.blocks, self.cols, self.common, self.rank, seed);
        spec.snr_db = self.snr_db;
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CobeSection {
    pub epsilon: f64,
    /// Choose the count from the gap in the residual curve.
    pub auto: bool,
    pub max_components: Option<usize>,
    pub rank: RankChoice,
    /// Known common count; selects the fixed-count solver.
    pub c: Option<usize>,
    /// Projected row count `I_P`; selects the projected path.
    pub project: Option<usize>,
    /// Verification tolerance of the projected path; defaults to `epsilon`.
    pub verify_tol: Option<f64>,
    pub cobec_max_iter: usize,
}

impl Default for CobeSection {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            auto: false,
            max_components: None,
            rank: RankChoice::Revealing,
            c: None,
            project: None,
            verify_tol: None,
            cobec_max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnfeSection {
    /// Number of nonnegative features; defaults to the common count.
    pub r: Option<usize>,
    pub max_iter: usize,
    pub tol: f64,
    pub mode: CnfeMode,
}

impl Default for CnfeSection {
    fn default() -> Self {
        Self {
            r: None,
            max_iter: 2000,
            tol: 1e-9,
            mode: CnfeMode::Semi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub linked: LinkedBssConfig,
    pub runs: usize,
    /// Extra SNR levels (dB) for the gap sweep; empty skips it.
    pub snr_sweep: Vec<f64>,
    pub projection: ProjectionBenchConfig,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            linked: LinkedBssConfig::default(),
            runs: 50,
            snr_sweep: Vec::new(),
            projection: ProjectionBenchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub scenario: ClusterScenario,
    /// Defaults to the scenario's cluster count.
    pub k: Option<usize>,
    /// Defaults to `k`.
    pub n_groups: Option<usize>,
    pub c: usize,
    pub embed_dim: usize,
    pub kmeans_replicates: usize,
    pub runs: usize,
}

impl Default for ClusterSection {
    fn default() -> Self {
        let base = ClusterConfig::default();
        Self {
            scenario: ClusterScenario::default(),
            k: None,
            n_groups: None,
            c: base.c,
            embed_dim: base.embed_dim,
            kmeans_replicates: base.kmeans_replicates,
            runs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifySection {
    pub scenario: ClassScenario,
    /// Share of each class used for training.
    pub train_fraction: f64,
    pub c_fraction: f64,
    pub method: MatchMethod,
    pub runs: usize,
}

impl Default for ClassifySection {
    fn default() -> Self {
        Self {
            scenario: ClassScenario::default(),
            train_fraction: 0.5,
            c_fraction: 0.8,
            method: MatchMethod::Correlation,
            runs: 20,
        }
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub format: Option<Format>,
    pub input: Option<PathBuf>,
    pub epsilon: Option<f64>,
    pub c: Option<usize>,
    pub project: Option<usize>,
    pub runs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(f) = o.format {
            self.format = f;
        }
        if let Some(p) = &o.input {
            self.input = Some(p.clone());
        }
        if let Some(e) = o.epsilon {
            self.cobe.epsilon = e;
        }
        if let Some(c) = o.c {
            self.cobe.c = Some(c);
            self.cluster.c = c;
        }
        if let Some(p) = o.project {
            self.cobe.project = Some(p);
        }
        if let Some(r) = o.runs {
            self.bench.runs = r;
            self.cluster.runs = r;
            self.classify.runs = r;
        }
    }

    pub fn cluster_config(&self) -> ClusterConfig {
        let k = self.cluster.k.unwrap_or(self.cluster.scenario.clusters);
        ClusterConfig {
            n_groups: self.cluster.n_groups.unwrap_or(k),
            k,
            c: self.cluster.c,
            embed_dim: self.cluster.embed_dim,
            kmeans_replicates: self.cluster.kmeans_replicates,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let mut cfg: RunConfig = toml::from_str(
            "seed = 3\n[cobe]\nepsilon = 0.5\nc = 2\n[cluster]\nruns = 4\n",
        )
        .unwrap();
        assert_eq!((cfg.seed, cfg.cobe.epsilon, cfg.cobe.c, cfg.cluster.runs), (3, 0.5, Some(2), 4));
        cfg.apply(&Overrides {
            seed: Some(9),
            epsilon: Some(1e-3),
            runs: Some(2),
            ..Overrides::default()
        });
        assert_eq!((cfg.seed, cfg.cobe.epsilon, cfg.cobe.c, cfg.cluster.runs), (9, 1e-3, Some(2), 2));
    }

    #[test]
    fn unknown_keys_and_rank_choices() {
        assert!(toml::from_str::<RunConfig>("[cobe]\nepsilonn = 1\n").is_err());
        let cfg: RunConfig = toml::from_str("[cobe]\nrank = { kind = \"fixed\", value = 8 }\n").unwrap();
        assert_eq!(cfg.cobe.rank, RankChoice::Fixed(8));
    }

    #[test]
    fn cluster_groups_default_to_cluster_count() {
        let cfg = RunConfig::default();
        let c = cfg.cluster_config();
        assert_eq!((c.k, c.n_groups, c.c), (4, 4, 2));
    }
}
