//! The audit configuration file and endpoint construction.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use recall_audit::clock::Clock;
use recall_audit::domains::DomainRegistry;
use recall_audit::enroll::EnrollOptions;
use recall_audit::oracle::{
    load_cassette, CassetteRecorder, EndpointConfig, HttpEndpoint, MixedRoutingPolicy, OracleBuilder, OracleHandle,
    ResponseStyle, RetryPolicy, ScriptedWorld, RECALL_SYSTEM_PROMPT,
};
use recall_audit::stats::CalibrationConfig;
use serde::Deserialize;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CassetteMode {
    #[default]
    Off,
    Record,
    Replay,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CassetteSection {
    #[serde(default)]
    pub mode: CassetteMode,
    #[serde(default = "default_cassette_dir")]
    pub dir: PathBuf,
}

fn default_cassette_dir() -> PathBuf {
    PathBuf::from("cassettes")
}

impl Default for CassetteSection {
    fn default() -> Self {
        Self {
            mode: CassetteMode::Off,
            dir: default_cassette_dir(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSection {
    #[serde(default = "default_system_prompt")]
    pub system_prompt: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
}

fn default_system_prompt() -> String {
    RECALL_SYSTEM_PROMPT.to_string()
}

fn default_max_tokens() -> u32 {
    1024
}

impl Default for RequestSection {
    fn default() -> Self {
        Self {
            system_prompt: default_system_prompt(),
            temperature: 0.0,
            max_output_tokens: default_max_tokens(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    Http,
    Scripted,
    Replay,
    Mixed,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointDecl {
    pub name: String,
    pub kind: EndpointKind,
    /// Identity recorded in transcripts and fingerprints; defaults to `name`.
    pub identity: Option<String>,
    // http
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
    pub timeout_secs: Option<u64>,
    // scripted
    pub world: Option<PathBuf>,
    #[serde(default)]
    pub noise_rate: f64,
    pub seed: Option<u64>,
    #[serde(default)]
    pub transport_failure_rate: f64,
    #[serde(default)]
    pub echo: bool,
    // replay
    pub cassette: Option<PathBuf>,
    // mixed
    pub reference: Option<String>,
    pub substitute: Option<String>,
    pub pi: Option<f64>,
}

impl EndpointDecl {
    pub fn identity(&self) -> &str {
        self.identity.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfigFile {
    pub schema_version: u32,
    pub registry: Option<PathBuf>,
    #[serde(default)]
    pub calibration: Option<CalibrationConfig>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub retry: Option<RetryPolicy>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub cassette: CassetteSection,
    #[serde(default)]
    pub seed: u64,
    /// `system` or an RFC 3339 timestamp used for every artifact.
    pub clock: Option<String>,
    pub token_limit: Option<u64>,
    #[serde(default)]
    pub request: RequestSection,
    #[serde(default)]
    pub enroll: Option<EnrollOptions>,
    #[serde(default, rename = "endpoint")]
    pub endpoints: Vec<EndpointDecl>,
}

fn default_batch_size() -> usize {
    recall_audit::batch::DEFAULT_BATCH_SIZE
}

fn default_concurrency() -> usize {
    4
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub batch_size: Option<usize>,
    pub concurrency: Option<usize>,
    pub cassette_mode: Option<CassetteMode>,
    pub cassette_dir: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub clock: Option<String>,
}

/// Loaded configuration with paths resolved against the file's directory.
#[derive(Debug, Clone)]
pub struct Config {
    pub file: AuditConfigFile,
    pub base_dir: PathBuf,
    pub calibration: CalibrationConfig,
    pub retry: RetryPolicy,
    pub clock: Clock,
    pub enroll: EnrollOptions,
}

impl Config {
    pub fn empty() -> Self {
        Self::from_file(
            AuditConfigFile {
                schema_version: CONFIG_SCHEMA_VERSION,
                registry: None,
                calibration: None,
                batch_size: default_batch_size(),
                retry: None,
                concurrency: default_concurrency(),
                cassette: CassetteSection::default(),
                seed: 0,
                clock: None,
                token_limit: None,
                request: RequestSection::default(),
                enroll: None,
                endpoints: Vec::new(),
            },
            PathBuf::from("."),
            &Overrides::default(),
        )
        .expect("default configuration is valid")
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let file: AuditConfigFile = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        Self::from_file(file, base, overrides)
    }

    fn from_file(mut file: AuditConfigFile, base_dir: PathBuf, o: &Overrides) -> Result<Self> {
        if file.schema_version != CONFIG_SCHEMA_VERSION {
            bail!("unsupported config schema_version {} (expected {CONFIG_SCHEMA_VERSION})", file.schema_version);
        }
        if let Some(v) = o.seed {
            file.seed = v;
        }
        if let Some(v) = o.batch_size {
            file.batch_size = v;
        }
        if let Some(v) = o.concurrency {
            file.concurrency = v;
        }
        if let Some(v) = o.cassette_mode {
            file.cassette.mode = v;
        }
        if let Some(v) = &o.cassette_dir {
            file.cassette.dir = v.clone();
        }
        if let Some(v) = &o.clock {
            file.clock = Some(v.clone());
        }
        let mut calibration = file.calibration.unwrap_or_default();
        if let Some(a) = o.alpha {
            calibration.alpha = a;
        }
        if let Some(g) = o.gamma {
            calibration.gamma = g;
        }
        calibration.validate()?;
        if file.batch_size == 0 {
            bail!("batch_size must be at least 1");
        }
        if file.concurrency == 0 {
            bail!("concurrency must be at least 1");
        }
        let clock = match &file.clock {
            Some(c) => c.parse().map_err(|e| anyhow!("invalid clock {c:?}: {e}"))?,
            None => Clock::System,
        };
        let mut names = std::collections::HashSet::new();
        for e in &file.endpoints {
            if !names.insert(e.name.as_str()) {
                bail!("endpoint {:?} is declared twice", e.name);
            }
        }
        let mut enroll = file.enroll.clone().unwrap_or_default();
        enroll.batch_size = file.batch_size;
        Ok(Self {
            retry: file.retry.unwrap_or_default(),
            file,
            base_dir,
            calibration,
            clock,
            enroll,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn registry(&self) -> Result<DomainRegistry> {
        match &self.file.registry {
            Some(p) => Ok(DomainRegistry::load(self.resolve(p))?),
            None => Ok(DomainRegistry::builtin()),
        }
    }

    pub fn audit_config(&self) -> EndpointConfig {
        EndpointConfig {
            system_prompt: self.file.request.system_prompt.clone(),
            temperature: self.file.request.temperature,
            max_output_tokens: self.file.request.max_output_tokens,
            extra: BTreeMap::new(),
        }
    }

    pub fn endpoint(&self, name: &str) -> Result<&EndpointDecl> {
        self.file
            .endpoints
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| anyhow!("no endpoint named {name:?} in the config"))
    }

    pub fn endpoint_by_identity(&self, identity: &str) -> Option<&EndpointDecl> {
        self.file.endpoints.iter().find(|e| e.identity() == identity)
    }

    pub fn cassette_path(&self, name: &str, purpose: &str) -> PathBuf {
        self.resolve(&self.file.cassette.dir).join(format!("{name}.{purpose}.jsonl"))
    }

    fn finish(&self, b: OracleBuilder) -> OracleBuilder {
        b.concurrency(self.file.concurrency)
            .clock(self.clock)
            .token_limit(self.file.token_limit)
    }

    /// Handle for endpoint `name`, used for one `purpose` of a command. In
    /// record mode its transcripts go to `<dir>/<name>.<purpose>.jsonl`; in
    /// replay mode they are read back from there.
    pub fn handle(&self, name: &str, purpose: &str) -> Result<OracleHandle> {
        let decl = self.endpoint(name)?;
        match self.file.cassette.mode {
            CassetteMode::Replay if decl.kind != EndpointKind::Replay => {
                let path = self.cassette_path(name, purpose);
                if !path.exists() {
                    bail!("replay mode: cassette {} does not exist", path.display());
                }
                let transcripts = load_cassette(&path)?;
                let identity = transcripts
                    .first()
                    .map_or(decl.identity(), |t| t.request.identity.as_str())
                    .to_string();
                Ok(self.finish(OracleHandle::replay(identity, &transcripts)).build())
            }
            CassetteMode::Record => {
                let path = self.cassette_path(name, purpose);
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                }
                let recorder = Arc::new(CassetteRecorder::create(&path)?);
                Ok(self.builder(decl, 0)?.record_to(recorder).build())
            }
            _ => Ok(self.builder(decl, 0)?.build()),
        }
    }

    fn builder(&self, decl: &EndpointDecl, depth: usize) -> Result<OracleBuilder> {
        if depth > 4 {
            bail!("mixed endpoints nest too deeply at {:?}", decl.name);
        }
        let need = |v: &Option<String>, field: &str| {
            v.clone()
                .ok_or_else(|| anyhow!("endpoint {:?} ({:?}) needs `{field}`", decl.name, decl.kind))
        };
        let b = match decl.kind {
            EndpointKind::Http => {
                let ep = HttpEndpoint {
                    identity: decl.identity().to_string(),
                    base_url: need(&decl.base_url, "base_url")?,
                    model: need(&decl.model, "model")?,
                    api_key_env: decl.api_key_env.clone(),
                    extra: decl.extra.clone(),
                    timeout_secs: decl.timeout_secs.unwrap_or(120),
                };
                OracleHandle::http(ep)?.retry(self.retry)
            }
            EndpointKind::Scripted => {
                if !(0.0..=1.0).contains(&decl.noise_rate) || !(0.0..=1.0).contains(&decl.transport_failure_rate) {
                    bail!("endpoint {:?}: rates must lie in [0, 1]", decl.name);
                }
                let world_path = decl
                    .world
                    .as_ref()
                    .ok_or_else(|| anyhow!("endpoint {:?} (scripted) needs `world`", decl.name))?;
                let world = ScriptedWorld::load(self.resolve(world_path))?;
                let seed = decl.seed.unwrap_or(self.file.seed);
                let ep = world
                    .endpoint(decl.identity(), &self.registry()?, decl.noise_rate, seed)?
                    .with_transport_failures(decl.transport_failure_rate)
                    .with_style(if decl.echo { ResponseStyle::Echo } else { ResponseStyle::Bare });
                OracleHandle::scripted(ep).retry(RetryPolicy {
                    initial_backoff_ms: 0,
                    ..self.retry
                })
            }
            EndpointKind::Replay => {
                let path = decl
                    .cassette
                    .as_ref()
                    .ok_or_else(|| anyhow!("endpoint {:?} (replay) needs `cassette`", decl.name))?;
                let path = self.resolve(path);
                if !path.exists() {
                    bail!("cassette {} does not exist", path.display());
                }
                let transcripts = load_cassette(&path)?;
                let identity = match &decl.identity {
                    Some(i) => i.clone(),
                    None => transcripts
                        .first()
                        .map(|t| t.request.identity.clone())
                        .unwrap_or_else(|| decl.name.clone()),
                };
                OracleHandle::replay(identity, &transcripts).retry(RetryPolicy::single_attempt())
            }
            EndpointKind::Mixed => {
                let pi = decl
                    .pi
                    .ok_or_else(|| anyhow!("endpoint {:?} (mixed) needs `pi`", decl.name))?;
                let inner = |field: &Option<String>, what: &str| -> Result<OracleHandle> {
                    let n = need(field, what)?;
                    Ok(self.finish(self.builder(self.endpoint(&n)?, depth + 1)?).build())
                };
                let policy = MixedRoutingPolicy {
                    pi,
                    reference: inner(&decl.reference, "reference")?,
                    substitute: inner(&decl.substitute, "substitute")?,
                    seed: decl.seed.unwrap_or(self.file.seed),
                };
                OracleHandle::mixed(policy)?
            }
        };
        Ok(self.finish(b))
    }
}
