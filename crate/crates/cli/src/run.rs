//! Config loading, exit-code mapping, model artifacts and the run manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use evprofile::dataset::{load_sessions, WeatherTable};
use evprofile::gmm::{GmmModel, HourlySocModels};
use evprofile::pipeline::{prepare, train_models, PreparedData, RunConfig, TrainedModels};
use evprofile::refiner::HistoryMatrix;
use evprofile::rf::{RfModel, MODEL_FORMAT_VERSION};
use evprofile::Error;

/// A failed command. Each variant carries its own exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
    Model(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Model(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config: {m}"),
            Failure::Data(m) => write!(f, "data: {m}"),
            Failure::Model(m) => write!(f, "model: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Parameter(_) => Failure::Config(msg),
            Error::Schema(_)
            | Error::Row { .. }
            | Error::EmptyDataset(_)
            | Error::DegenerateSession(_)
            | Error::WeatherJoin { .. }
            | Error::Io(_)
            | Error::Csv(_) => Failure::Data(msg),
            Error::InsufficientData { .. }
            | Error::Selection(_)
            | Error::EmptyMatrix
            | Error::LengthMismatch { .. }
            | Error::Model(_)
            | Error::Json(_) => Failure::Model(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

pub struct Context {
    pub cfg: RunConfig,
    /// sha256 of the effective config, after overrides and path resolution.
    pub config_hash: String,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Context {
    /// Reads the config, resolving its relative paths against the config
    /// file's directory. `--seed` and `--out` win over the file.
    pub fn load(config: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>) -> CmdResult<Self> {
        let mut cfg = match config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
                let mut cfg: RunConfig =
                    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
                let base = path.parent().unwrap_or(Path::new(""));
                cfg.sessions_path = cfg.sessions_path.map(|p| resolve(base, &p));
                cfg.weather_path = cfg.weather_path.map(|p| resolve(base, &p));
                cfg.out_dir = resolve(base, &cfg.out_dir);
                cfg
            }
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(o) = out {
            cfg.out_dir = o;
        }
        cfg.validate()?;
        let config_hash = hex::encode(Sha256::digest(serde_json::to_vec(&cfg).expect("config serializes")));
        Ok(Context { cfg, config_hash })
    }

    pub fn out_dir(&self) -> CmdResult<&Path> {
        fs::create_dir_all(&self.cfg.out_dir)?;
        Ok(&self.cfg.out_dir)
    }

    pub fn out_path(&self, name: &str) -> CmdResult<PathBuf> {
        Ok(self.out_dir()?.join(name))
    }

    pub fn sessions_path(&self) -> CmdResult<&Path> {
        self.cfg
            .sessions_path
            .as_deref()
            .ok_or_else(|| Failure::Config("sessions_path is not set".into()))
    }

    pub fn weather(&self) -> CmdResult<WeatherTable> {
        let path = self
            .cfg
            .weather_path
            .as_deref()
            .ok_or_else(|| Failure::Config("weather_path is not set".into()))?;
        Ok(WeatherTable::load(path)?)
    }

    /// Loads, joins, resamples and splits the sessions.
    pub fn prepared(&self) -> CmdResult<PreparedData> {
        let report = load_sessions(self.sessions_path()?, &self.cfg.schema)?;
        let weather = self.weather()?;
        let data = prepare(report.sessions, &weather, &self.cfg.split)?;
        for (id, why) in &data.skipped {
            log::warn!("skipped session {id}: {why}");
        }
        Ok(data)
    }

    pub fn models_dir(&self) -> CmdResult<PathBuf> {
        let dir = self.out_dir()?.join("models");
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    /// Trained models for this config: reused from `out/models` when they
    /// were trained under the same config hash, trained and saved otherwise.
    /// Unreadable models with a matching hash are an error, not a retrain.
    pub fn models(&self, data: &PreparedData) -> CmdResult<TrainedModels> {
        let dir = self.models_dir()?;
        if let Some(m) = read_models(&dir, &self.config_hash)? {
            log::info!("reusing models in {}", dir.display());
            return Ok(m);
        }
        let m = train_models(&data.split.train, &self.cfg)?;
        write_models(&dir, &m, &self.config_hash)?;
        Ok(m)
    }

    /// Records one command in `manifest.json`, keeping other commands'
    /// entries.
    pub fn record(&self, command: &str, outputs: &[&Path]) -> CmdResult {
        let path = self.out_path("manifest.json")?;
        let mut manifest: Manifest = match fs::read_to_string(&path) {
            Ok(s) => serde_json::from_str(&s).unwrap_or_default(),
            Err(_) => Manifest::default(),
        };
        manifest.crate_version = env!("CARGO_PKG_VERSION").to_string();
        manifest.model_format_version = MODEL_FORMAT_VERSION;
        let out_dir = &self.cfg.out_dir;
        manifest.commands.insert(
            command.to_string(),
            CommandEntry {
                config_sha256: self.config_hash.clone(),
                config: self.cfg.clone(),
                outputs: outputs
                    .iter()
                    .map(|p| p.strip_prefix(out_dir).unwrap_or(p).display().to_string())
                    .collect(),
            },
        );
        write_json(&path, &manifest)
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_version: String,
    pub model_format_version: u32,
    pub commands: BTreeMap<String, CommandEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CommandEntry {
    pub config_sha256: String,
    pub config: RunConfig,
    pub outputs: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelsMeta {
    config_sha256: String,
    model_format_version: u32,
}

pub const MODEL_FILES: [&str; 4] = ["rf.json", "capacity_gmm.json", "soc_gmms.json", "history_matrix.json"];

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::Model(e.to_string()))?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CmdResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Model(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Model(format!("{}: {e}", path.display())))
}

fn write_models(dir: &Path, m: &TrainedModels, hash: &str) -> CmdResult {
    write_json(&dir.join(MODEL_FILES[0]), &m.rf)?;
    write_json(&dir.join(MODEL_FILES[1]), &m.capacity)?;
    write_json(&dir.join(MODEL_FILES[2]), &m.soc)?;
    write_json(&dir.join(MODEL_FILES[3]), &m.matrix)?;
    write_json(
        &dir.join("meta.json"),
        &ModelsMeta {
            config_sha256: hash.to_string(),
            model_format_version: MODEL_FORMAT_VERSION,
        },
    )
}

fn read_models(dir: &Path, hash: &str) -> CmdResult<Option<TrainedModels>> {
    let meta_path = dir.join("meta.json");
    if !meta_path.exists() {
        return Ok(None);
    }
    let meta: ModelsMeta = read_json(&meta_path)?;
    if meta.config_sha256 != hash || meta.model_format_version != MODEL_FORMAT_VERSION {
        return Ok(None);
    }
    let rf: RfModel = read_json(&dir.join(MODEL_FILES[0]))?;
    rf.validate()?;
    let capacity: GmmModel = read_json(&dir.join(MODEL_FILES[1]))?;
    capacity.validate()?;
    let soc: HourlySocModels = read_json(&dir.join(MODEL_FILES[2]))?;
    let matrix: HistoryMatrix = read_json(&dir.join(MODEL_FILES[3]))?;
    Ok(Some(TrainedModels {
        rf,
        capacity,
        soc,
        matrix,
    }))
}

/// Trains unconditionally and writes the model files.
pub fn train_and_save(ctx: &Context, data: &PreparedData) -> CmdResult<(TrainedModels, Vec<PathBuf>)> {
    let dir = ctx.models_dir()?;
    let m = train_models(&data.split.train, &ctx.cfg)?;
    write_models(&dir, &m, &ctx.config_hash)?;
    let mut paths: Vec<PathBuf> = MODEL_FILES.iter().map(|f| dir.join(f)).collect();
    paths.push(dir.join("meta.json"));
    Ok((m, paths))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_kinds_map_to_exit_codes() {
        assert_eq!(Failure::from(Error::Parameter("x".into())).exit_code(), 2);
        assert_eq!(Failure::from(Error::Schema("x".into())).exit_code(), 3);
        assert_eq!(Failure::from(Error::EmptyDataset("x".into())).exit_code(), 3);
        assert_eq!(Failure::from(Error::EmptyMatrix).exit_code(), 4);
        assert_eq!(Failure::from(Error::Model("x".into())).exit_code(), 4);
    }

    #[test]
    fn config_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(
            &p,
            r#"{"sessions_path": "s.csv", "weather_path": "/abs/w.csv", "out_dir": "o"}"#,
        )
        .unwrap();
        let ctx = Context::load(Some(&p), Some(7), None).unwrap();
        assert_eq!(ctx.cfg.sessions_path.unwrap(), dir.path().join("s.csv"));
        assert_eq!(ctx.cfg.weather_path.unwrap(), PathBuf::from("/abs/w.csv"));
        assert_eq!(ctx.cfg.out_dir, dir.path().join("o"));
        assert_eq!(ctx.cfg.seed, 7);
    }

    #[test]
    fn bad_config_is_a_config_failure() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"split": {"ratio": 1.5}}"#).unwrap();
        assert_eq!(Context::load(Some(&p), None, None).err().unwrap().exit_code(), 2);
        fs::write(&p, "{not json").unwrap();
        assert_eq!(Context::load(Some(&p), None, None).err().unwrap().exit_code(), 2);
    }
}
