//! Versioned JSON run configuration shared by every CLI subcommand.
//!
//! Every section and field has a default, so `{}` is a complete config.
//! Unknown keys are rejected; parse errors carry the JSON pointer of the
//! offending key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{self, generate_grid_positions, load_idx, Dataset, GridSpec};
use crate::error::{Error, Result};
use crate::experiment::{Approach, ExperimentContext, GridChoice, Grids, MatrixSettings};
use crate::neuralcore::NetworkSpec;
use crate::seeds;
use crate::splits::{LevelLabel, SplitSizes};
use crate::training::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub config_version: u32,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            config_version: CONFIG_VERSION,
            data: DataConfig::default(),
            split: SplitConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

/// IDX digit source for MNIST-Positions style data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSource {
    pub images: PathBuf,
    pub labels: PathBuf,
    /// Smallest class ids kept; defaults to the grid's category count.
    #[serde(default)]
    pub classes_kept: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dataset_id: String,
    pub seed: u64,
    pub grid: GridSpec,
    /// Load a stored dataset instead of generating one.
    pub dir: Option<PathBuf>,
    /// Build the dataset from IDX digits placed on `grid`.
    pub idx: Option<IdxSource>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dataset_id: "grid_positions".into(),
            seed: 0,
            grid: GridSpec::default(),
            dir: None,
            idx: None,
        }
    }
}

impl DataConfig {
    /// Dataset of the measurement trials.
    pub fn load(&self) -> Result<Dataset> {
        if let Some(dir) = &self.dir {
            return datagen::load_dataset(dir);
        }
        if let Some(idx) = &self.idx {
            let base = load_idx(&idx.images, &idx.labels)?;
            return datagen::build_positions_dataset(
                &base,
                self.grid.cell_grid,
                self.grid.glyph_size,
                self.grid.canvas_size,
                idx.classes_kept.unwrap_or(self.grid.num_categories),
            );
        }
        generate_grid_positions(&self.grid, self.seed)
    }

    /// Dataset of the reserved tuning trial: procedural data is regenerated
    /// from an independent seed, stored or ingested data is reused.
    pub fn load_reserved(&self) -> Result<Dataset> {
        if self.dir.is_some() || self.idx.is_some() {
            return self.load();
        }
        generate_grid_positions(&self.grid, seeds::hash64("reserved-data", &[self.seed]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub degrees: Vec<usize>,
    pub sizes: SplitSizes,
    pub level: LevelLabel,
    pub seed: u64,
    /// Load a stored split instead of sampling one.
    pub dir: Option<PathBuf>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            degrees: vec![2, 4, 8],
            sizes: SplitSizes::default(),
            level: LevelLabel::Low,
            seed: 0,
            dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    #[default]
    MiniResnet,
    Mlp,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub arch: Arch,
    pub channels: usize,
    pub hidden: usize,
    pub bn_epsilon: f64,
    /// Full layer list, used when `arch` is `custom`.
    pub custom: Option<NetworkSpec>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            arch: Arch::MiniResnet,
            channels: 16,
            hidden: 64,
            bn_epsilon: 1e-3,
            custom: None,
        }
    }
}

impl NetworkConfig {
    /// Network for single-channel `height x width` inputs. Batch-norm momentum
    /// comes from `bn_momentum` (the trainer overrides it again per run).
    pub fn build(&self, height: usize, width: usize, num_classes: usize, bn_momentum: f64) -> Result<NetworkSpec> {
        let input = (1, height, width);
        let spec = match self.arch {
            Arch::MiniResnet => NetworkSpec::mini_resnet(
                input,
                num_classes,
                self.channels,
                self.hidden,
                bn_momentum,
                self.bn_epsilon,
            ),
            Arch::Mlp => NetworkSpec::mlp(input, num_classes, self.hidden, bn_momentum, self.bn_epsilon),
            Arch::Custom => {
                let spec = self.custom.clone().ok_or_else(|| Error::Config {
                    pointer: "/network/custom".into(),
                    msg: "arch \"custom\" requires a layer list".into(),
                })?;
                if spec.input != input || spec.num_classes != num_classes {
                    return Err(Error::Config {
                        pointer: "/network/custom".into(),
                        msg: format!(
                            "custom network expects input {:?} and {} classes, data has {input:?} and {num_classes}",
                            spec.input, spec.num_classes
                        ),
                    });
                }
                spec.with_bn_momentum(bn_momentum)
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_trials: usize,
    pub grid: GridChoice,
    /// Explicit grids; override `grid` when present.
    pub grids: Option<Grids>,
    pub master_seed: u64,
    pub approaches: Vec<Approach>,
    pub levels: Vec<LevelLabel>,
    pub workers: usize,
    /// Use the training section's values instead of searching.
    pub skip_search: bool,
    /// Additional datasets of a matrix run; `data` is always the first.
    pub extra_datasets: Vec<DataConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_trials: 5,
            grid: GridChoice::Full,
            grids: None,
            master_seed: 0,
            approaches: vec![
                Approach::Baseline,
                Approach::LateStopping,
                Approach::TunedBn,
                Approach::InvarianceLoss,
            ],
            levels: LevelLabel::ALL.to_vec(),
            workers: 1,
            skip_search: false,
            extra_datasets: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn resolved_grids(&self) -> Grids {
        self.grids.clone().unwrap_or_else(|| Grids::for_choice(self.grid))
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    /// Sets every seed: data, split, initialization and master.
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub grid: Option<GridChoice>,
    pub approach: Option<Approach>,
    pub bn_momentum: Option<f64>,
    pub level: Option<LevelLabel>,
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        pointer: pointer_of(e.path()),
        msg: e.inner().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads `path` (or defaults when `None`), applies overrides, validates.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config {
                pointer: "/".into(),
                msg: format!("cannot read {}: {e}", p.display()),
            })?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    cfg.apply(overrides);
    cfg.validate()?;
    Ok(cfg)
}

fn config_err(pointer: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        pointer: pointer.into(),
        msg: msg.into(),
    }
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.data.seed = s;
            self.split.seed = s;
            self.train.seed = s;
            self.experiment.master_seed = s;
        }
        if let Some(w) = o.workers {
            self.experiment.workers = w;
        }
        if let Some(g) = o.grid {
            self.experiment.grid = g;
            self.experiment.grids = None;
        }
        if let Some(a) = o.approach {
            self.experiment.approaches = if a == Approach::Baseline {
                vec![Approach::Baseline]
            } else {
                vec![Approach::Baseline, a]
            };
        }
        if let Some(m) = o.bn_momentum {
            self.train.bn_momentum = m;
        }
        if let Some(l) = o.level {
            self.split.level = l;
            self.experiment.levels = vec![l];
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.config_version != CONFIG_VERSION {
            return Err(config_err(
                "/config_version",
                format!("unsupported version {} (expected {CONFIG_VERSION})", self.config_version),
            ));
        }
        let wrap = |pointer: &str, r: Result<()>| {
            r.map_err(|e| match e {
                Error::InvalidArgument(m) => config_err(pointer, m),
                other => other,
            })
        };
        wrap("/data/grid", self.data.grid.validate())?;
        for (i, d) in self.experiment.extra_datasets.iter().enumerate() {
            wrap(&format!("/experiment/extra_datasets/{i}/grid"), d.grid.validate())?;
        }
        wrap("/train", self.train.validate())?;
        if self.split.degrees.is_empty() || self.split.degrees.len() > 3 {
            return Err(config_err("/split/degrees", "one to three degrees are required"));
        }
        if self.split.degrees.len() <= self.split.level.index() {
            return Err(config_err(
                "/split/level",
                format!("level {} needs {} degrees", self.split.level, self.split.level.index() + 1),
            ));
        }
        if self.network.bn_epsilon <= 0.0 || !self.network.bn_epsilon.is_finite() {
            return Err(config_err("/network/bn_epsilon", "must be positive"));
        }
        if self.experiment.n_trials == 0 {
            return Err(config_err("/experiment/n_trials", "must be >= 1"));
        }
        if self.experiment.workers == 0 {
            return Err(config_err("/experiment/workers", "must be >= 1"));
        }
        let mut ids = vec![&self.data.dataset_id];
        for d in &self.experiment.extra_datasets {
            if ids.contains(&&d.dataset_id) {
                return Err(config_err("/experiment/extra_datasets", format!("duplicate dataset id {}", d.dataset_id)));
            }
            ids.push(&d.dataset_id);
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Writes `effective_config.json` into `dir`.
    pub fn write_effective(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("effective_config.json"), self.to_json())?;
        Ok(())
    }

    pub fn network_for(&self, dataset: &Dataset) -> Result<NetworkSpec> {
        self.network
            .build(dataset.height, dataset.width, dataset.num_categories, self.train.bn_momentum)
    }

    /// Experiment context of one dataset section.
    pub fn context(&self, data: &DataConfig) -> Result<ExperimentContext> {
        let dataset = data.load()?;
        let reserved_dataset = data.load_reserved()?;
        let network = self.network_for(&dataset)?;
        Ok(ExperimentContext {
            dataset_id: data.dataset_id.clone(),
            dataset,
            reserved_dataset,
            degrees: self.split.degrees.clone(),
            sizes: self.split.sizes,
            network,
            base: self.train.clone(),
        })
    }

    pub fn contexts(&self) -> Result<Vec<ExperimentContext>> {
        std::iter::once(&self.data)
            .chain(&self.experiment.extra_datasets)
            .map(|d| self.context(d))
            .collect()
    }

    pub fn matrix_settings(&self) -> MatrixSettings {
        MatrixSettings {
            levels: self.experiment.levels.clone(),
            approaches: self.experiment.approaches.clone(),
            grids: self.experiment.resolved_grids(),
            n_trials: self.experiment.n_trials,
            master_seed: self.experiment.master_seed,
            workers: self.experiment.workers,
            skip_search: self.experiment.skip_search,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = parse_config("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.train.bn_momentum, 0.99);
        assert_eq!(c.train.epochs, 100);
        assert_eq!(c.train.lambda, 0.0);
        assert_eq!(c.experiment.n_trials, 5);
        assert_eq!(c.experiment.resolved_grids(), Grids::full());
    }

    #[test]
    fn type_error_pointer() {
        match parse_config(r#"{"train": {"epochs": "many"}}"#) {
            Err(Error::Config { pointer, .. }) => assert_eq!(pointer, "/train/epochs"),
            other => panic!("{other:?}"),
        }
        match parse_config(r#"{"split": {"degrees": [2, "x"]}}"#) {
            Err(Error::Config { pointer, .. }) => assert_eq!(pointer, "/split/degrees/1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        match parse_config(r#"{"train": {"epoch": 3}}"#) {
            Err(Error::Config { pointer, msg }) => {
                assert!(pointer.starts_with("/train"), "{pointer}");
                assert!(msg.contains("epoch"));
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_config(r#"{"extra": 1}"#).is_err());
    }

    #[test]
    fn semantic_errors_are_config_errors() {
        for (doc, ptr) in [
            (r#"{"config_version": 2}"#, "/config_version"),
            (r#"{"train": {"bn_momentum": 1.5}}"#, "/train"),
            (r#"{"split": {"degrees": []}}"#, "/split/degrees"),
            (r#"{"split": {"degrees": [2], "level": "high"}}"#, "/split/level"),
            (r#"{"data": {"grid": {"num_conditions": 20}}}"#, "/data/grid"),
        ] {
            match parse_config(doc) {
                Err(Error::Config { pointer, .. }) => assert_eq!(pointer, ptr, "{doc}"),
                other => panic!("{doc}: {other:?}"),
            }
        }
    }

    #[test]
    fn overrides() {
        let mut c = RunConfig::default();
        c.apply(&Overrides {
            bn_momentum: Some(0.5),
            seed: Some(7),
            approach: Some(Approach::InvarianceLoss),
            grid: Some(GridChoice::Fast),
            level: Some(LevelLabel::Medium),
            ..Default::default()
        });
        assert_eq!(c.train.bn_momentum, 0.5);
        assert_eq!(
            (c.data.seed, c.split.seed, c.train.seed, c.experiment.master_seed),
            (7, 7, 7, 7)
        );
        assert_eq!(c.experiment.approaches, vec![Approach::Baseline, Approach::InvarianceLoss]);
        assert_eq!(c.matrix_settings().grids, Grids::fast());
        assert_eq!(c.experiment.levels, vec![LevelLabel::Medium]);
    }

    #[test]
    fn effective_config_round_trips() {
        let mut c = RunConfig::default();
        c.network.arch = Arch::Mlp;
        c.train.epochs = 3;
        c.experiment.extra_datasets.push(DataConfig {
            dataset_id: "second".into(),
            ..DataConfig::default()
        });
        assert_eq!(parse_config(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn builds_networks() {
        let c = RunConfig::default();
        let s = c.network.build(42, 42, 9, 0.9).unwrap();
        assert_eq!(s.probe_index, 8);
        assert_eq!(s.num_classes, 9);
        let custom = NetworkConfig {
            arch: Arch::Custom,
            custom: Some(NetworkSpec::mlp((1, 10, 10), 3, 4, 0.9, 1e-3)),
            ..NetworkConfig::default()
        };
        assert!(custom.build(10, 10, 3, 0.5).is_ok());
        assert!(matches!(custom.build(12, 12, 3, 0.5), Err(Error::Config { .. })));
    }
}
