//! File format for scripted endpoints: a list of facts per domain, from
//! which both audit answers and generation pages are derived.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scripted::ScriptedEndpoint;
use super::OracleError;
use crate::domains::DomainRegistry;

fn default_page_size() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldFact {
    pub domain: String,
    pub subject: String,
    pub value: f64,
    /// Answered inconsistently at non-zero temperature.
    #[serde(default)]
    pub flaky: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedWorld {
    /// Records per generation page.
    #[serde(default = "default_page_size")]
    pub page_size: usize,
    #[serde(rename = "fact", default)]
    pub facts: Vec<WorldFact>,
}

impl ScriptedWorld {
    pub fn from_toml_str(text: &str) -> Result<Self, OracleError> {
        let w: ScriptedWorld = toml::from_str(text).map_err(|e| OracleError::InvalidConfig(format!("world file: {e}")))?;
        if w.page_size == 0 {
            return Err(OracleError::InvalidConfig("world page_size must be positive".into()));
        }
        Ok(w)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OracleError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| OracleError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Generation pages per domain: facts in file order, `page_size` per page,
    /// each as `subject | value` lines.
    pub fn pages(&self) -> HashMap<String, Vec<String>> {
        let mut per_domain: Vec<(&str, Vec<&WorldFact>)> = Vec::new();
        for f in &self.facts {
            match per_domain.iter_mut().find(|(d, _)| *d == f.domain) {
                Some((_, v)) => v.push(f),
                None => per_domain.push((&f.domain, vec![f])),
            }
        }
        per_domain
            .into_iter()
            .map(|(d, facts)| {
                let pages = facts
                    .chunks(self.page_size)
                    .map(|c| c.iter().map(|f| format!("{} | {}", f.subject, f.value)).collect::<Vec<_>>().join("\n"))
                    .collect();
                (d.to_string(), pages)
            })
            .collect()
    }

    pub fn endpoint(
        &self,
        identity: impl Into<String>,
        registry: &DomainRegistry,
        noise_rate: f64,
        seed: u64,
    ) -> Result<ScriptedEndpoint, OracleError> {
        let rows = self.facts.iter().map(|f| (f.domain.as_str(), f.subject.as_str(), f.value, f.flaky));
        Ok(ScriptedEndpoint::from_subjects(identity, registry, rows, noise_rate, seed)
            .map_err(|e| OracleError::InvalidConfig(e.to_string()))?
            .with_pages(self.pages()))
    }
}
