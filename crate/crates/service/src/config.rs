//! Operator configuration shared by the service and the CLI.
//!
//! One TOML file with four optional tables:
//!
//! ```toml
//! [service]
//! bind = "127.0.0.1:8787"
//!
//! [session]            # SessionConfig defaults
//! final_scan = true
//!
//! [adapter]
//! kind = "gazetteer"
//! path = "gazetteer.json"
//!
//! [device]
//! kind = "simulated"
//! script = "device.json"
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anonproxy_core::detect::{GazetteerAdapter, NullAdapter, SubprocessAdapter, TcpAdapter};
use anonproxy_core::proxy::{DetachedExecutor, DeviceExecutor, DeviceScript, SimulatedDevice};
use anonproxy_core::{NerAdapter, SessionConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_BIND: &str = "ANONPROXY_BIND";
pub const ENV_CONFIG: &str = "ANONPROXY_CONFIG";
pub const ENV_NER_ADDR: &str = "ANONPROXY_NER_ADDR";

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("adapter: {0}")]
    Adapter(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub bind: SocketAddr,
    /// Accept a non-loopback bind address. This moves the trust boundary onto
    /// the network.
    pub allow_remote: bool,
    /// JSON-lines request log; `None` writes to stderr.
    pub log: Option<PathBuf>,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self { bind: SocketAddr::from(([127, 0, 0, 1], 8787)), allow_remote: false, log: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdapterSpec {
    /// Regex rules only.
    #[default]
    None,
    Gazetteer { path: PathBuf },
    Subprocess {
        program: String,
        #[serde(default)]
        args: Vec<String>,
    },
    Tcp { addr: SocketAddr },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeviceSpec {
    /// No device; every action fails with `executor-failure`.
    #[default]
    Detached,
    /// A fresh simulated device per session.
    Simulated { script: PathBuf },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub service: ServiceSection,
    pub session: SessionConfig,
    pub adapter: AdapterSpec,
    pub device: DeviceSpec,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl AppConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigFileError> {
        let mut cfg: AppConfig =
            toml::from_str(text).map_err(|e| ConfigFileError::Parse { path: origin.to_path_buf(), message: e.to_string() })?;
        let base = origin.parent().unwrap_or(Path::new("."));
        match &mut cfg.adapter {
            AdapterSpec::Gazetteer { path } => *path = resolve(base, path),
            AdapterSpec::Subprocess { program, .. } if program.contains('/') => {
                *program = resolve(base, Path::new(program.as_str())).to_string_lossy().into_owned()
            }
            _ => {}
        }
        if let DeviceSpec::Simulated { script } = &mut cfg.device {
            *script = resolve(base, script);
        }
        if let Some(log) = &mut cfg.service.log {
            *log = resolve(base, log);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text, path)
    }

    /// Applies the `ANONPROXY_*` environment overrides.
    pub fn with_env(mut self) -> Result<Self, ConfigFileError> {
        if let Ok(bind) = std::env::var(ENV_BIND) {
            self.service.bind = bind.parse().map_err(|_| ConfigFileError::Invalid(format!("{ENV_BIND}={bind:?}")))?;
        }
        if let Ok(addr) = std::env::var(ENV_NER_ADDR) {
            let addr = addr.parse().map_err(|_| ConfigFileError::Invalid(format!("{ENV_NER_ADDR}={addr:?}")))?;
            self.adapter = AdapterSpec::Tcp { addr };
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ConfigFileError> {
        self.session.validate().map_err(|e| ConfigFileError::Invalid(e.to_string()))?;
        if !self.service.allow_remote && !self.service.bind.ip().is_loopback() {
            return Err(ConfigFileError::Invalid(format!(
                "bind address {} is not loopback; set service.allow_remote to expose the proxy",
                self.service.bind
            )));
        }
        Ok(())
    }

    pub fn build_adapter(&self) -> Result<Arc<dyn NerAdapter>, ConfigFileError> {
        Ok(match &self.adapter {
            AdapterSpec::None => Arc::new(NullAdapter),
            AdapterSpec::Gazetteer { path } => {
                Arc::new(GazetteerAdapter::from_json_file(path).map_err(|e| ConfigFileError::Adapter(e.to_string()))?)
            }
            AdapterSpec::Subprocess { program, args } => {
                Arc::new(SubprocessAdapter::spawn(program, args).map_err(|e| ConfigFileError::Adapter(e.to_string()))?)
            }
            AdapterSpec::Tcp { addr } => Arc::new(TcpAdapter::new(*addr)),
        })
    }

    pub fn build_device_factory(&self) -> Result<DeviceFactory, ConfigFileError> {
        Ok(match &self.device {
            DeviceSpec::Detached => Arc::new(|| Box::new(DetachedExecutor) as Box<dyn DeviceExecutor>),
            DeviceSpec::Simulated { script } => {
                let text = std::fs::read_to_string(script)
                    .map_err(|source| ConfigFileError::Io { path: script.clone(), source })?;
                let script: DeviceScript = serde_json::from_str(&text)
                    .map_err(|e| ConfigFileError::Parse { path: script.clone(), message: e.to_string() })?;
                SimulatedDevice::new(script.clone()).map_err(|e| ConfigFileError::Invalid(e.to_string()))?;
                Arc::new(move || Box::new(SimulatedDevice::new(script.clone()).expect("checked")) as Box<dyn DeviceExecutor>)
            }
        })
    }
}

/// Creates the device a new session drives.
pub type DeviceFactory = Arc<dyn Fn() -> Box<dyn DeviceExecutor> + Send + Sync>;
