//! Output directory layout and stamped artifact I/O.

use crate::config::RunConfig;
use crate::CliError;
use ras_core::artifact::Stamp;
use ras_core::ddpg::{ActorCritic, ActorCriticDocument};
use ras_core::grid::{GridSpec, ValueGrid};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const META_FORMAT: &str = "ras-meta";
pub const META_FILE: &str = "meta.json";

pub const H: &str = "h.csv";
pub const HG: &str = "hg.csv";
pub const V: &str = "v.csv";
pub const V_RA: &str = "v_ra.csv";
pub const H_QLEARN: &str = "h_qlearn.csv";
pub const POLICY_H: &str = "policy_h.csv";
pub const POLICY_V: &str = "policy_v.csv";
pub const POLICY_RA: &str = "policy_ra.csv";
pub const DDPG_H: &str = "ddpg_h.json";
pub const DDPG_V: &str = "ddpg_v.json";
pub const DDPG_LOG: &str = "ddpg_log.csv";
pub const DDPG_REPORT: &str = "ddpg.json";
pub const QLEARN_REPORT: &str = "qlearn.json";
pub const REPORT: &str = "report.json";
pub const AREAS: &str = "areas.json";
pub const TRAJ_DIR: &str = "traj";
pub const FIG_DIR: &str = "fig";
pub const EXPORT_DIR: &str = "export";

/// Run metadata: the config that produced the directory plus one summary per
/// subcommand that has written into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub master_seed: u64,
    pub benchmark: String,
    pub config: String,
    pub runs: BTreeMap<String, Value>,
}

pub struct Store {
    root: PathBuf,
    stamp: Stamp,
    spec: GridSpec,
}

impl Store {
    pub fn new(config: &RunConfig) -> Result<Self, CliError> {
        let root = config.output_dir.clone();
        std::fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
        Ok(Self {
            root,
            stamp: config.stamp(),
            spec: config.grid_spec()?,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stamp(&self) -> &Stamp {
        &self.stamp
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn read(&self, name: &str) -> Result<String, CliError> {
        let path = self.path(name);
        if !path.is_file() {
            return Err(CliError::MissingArtifact(path));
        }
        std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))
    }

    /// Pretty JSON with the stamp merged into the top-level object.
    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
        let mut v = serde_json::to_value(value).expect("artifact serializes");
        if let Value::Object(map) = &mut v {
            map.insert("config_hash".into(), self.stamp.config_hash.clone().into());
            map.insert("master_seed".into(), self.stamp.master_seed.into());
        }
        self.write(name, to_pretty(&v))
    }

    pub fn read_json<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<T, CliError> {
        let text = self.read(name)?;
        serde_json::from_str(&text).map_err(|e| CliError::artifact(&self.path(name), e))
    }

    pub fn write_grid(&self, name: &str, grid: &ValueGrid) -> Result<PathBuf, CliError> {
        self.write(name, grid.to_csv(Some(&self.stamp)))
    }

    /// Reads a grid and checks it lives on the configured grid.
    pub fn read_grid(&self, name: &str) -> Result<ValueGrid, CliError> {
        let text = self.read(name)?;
        let path = self.path(name);
        let (grid, _) = ValueGrid::from_csv(&text).map_err(|e| CliError::artifact(&path, e))?;
        if grid.spec() != &self.spec {
            return Err(CliError::artifact(
                &path,
                "grid does not match the configured grid",
            ));
        }
        Ok(grid)
    }

    pub fn read_grid_if_present(&self, name: &str) -> Result<Option<ValueGrid>, CliError> {
        if self.exists(name) {
            self.read_grid(name).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn write_nets(&self, name: &str, nets: &ActorCritic) -> Result<PathBuf, CliError> {
        self.write_json(name, &nets.to_document())
    }

    pub fn read_nets(&self, name: &str) -> Result<ActorCritic, CliError> {
        let text = self.read(name)?;
        let path = self.path(name);
        let mut v: Value = serde_json::from_str(&text).map_err(|e| CliError::artifact(&path, e))?;
        if let Value::Object(map) = &mut v {
            map.remove("config_hash");
            map.remove("master_seed");
        }
        let doc: ActorCriticDocument =
            serde_json::from_value(v).map_err(|e| CliError::artifact(&path, e))?;
        ActorCritic::from_document(&doc).map_err(|e| CliError::artifact(&path, e))
    }

    /// Records a subcommand summary in `meta.json`. Summaries from a run with
    /// a different config are discarded.
    pub fn record(
        &self,
        config: &RunConfig,
        command: &str,
        summary: Value,
    ) -> Result<(), CliError> {
        let fresh = || Meta {
            format: META_FORMAT.into(),
            version: 1,
            config_hash: self.stamp.config_hash.clone(),
            master_seed: self.stamp.master_seed,
            benchmark: config.benchmark.to_string(),
            config: {
                let mut c = config.clone();
                c.output_dir = PathBuf::new();
                c.to_toml()
            },
            runs: BTreeMap::new(),
        };
        let mut meta = std::fs::read_to_string(self.path(META_FILE))
            .ok()
            .and_then(|t| serde_json::from_str::<Meta>(&t).ok())
            .filter(|m| m.config_hash == self.stamp.config_hash)
            .unwrap_or_else(fresh);
        meta.runs.insert(command.to_string(), summary);
        self.write(META_FILE, to_pretty(&meta))?;
        Ok(())
    }
}

pub fn to_pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("artifact serializes");
    s.push('\n');
    s
}
