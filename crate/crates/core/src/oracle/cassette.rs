//! Line-delimited JSON cassettes: one [`Transcript`] per line.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{AttemptError, ChatBackend, EndpointConfig, OracleError, OracleResponse, RequestContext, Transcript};

pub const CASSETTE_SCHEMA_VERSION: u32 = 1;

/// Append-only cassette writer shared by any number of handles.
pub struct CassetteRecorder {
    path: PathBuf,
    out: Mutex<BufWriter<File>>,
}

impl CassetteRecorder {
    /// Start a fresh cassette, truncating any existing file.
    pub fn create(path: impl AsRef<Path>) -> Result<Self, OracleError> {
        Self::open(path, false)
    }

    /// Append to an existing cassette (or create it).
    pub fn append_to(path: impl AsRef<Path>) -> Result<Self, OracleError> {
        Self::open(path, true)
    }

    fn open(path: impl AsRef<Path>, append: bool) -> Result<Self, OracleError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| OracleError::Cassette(format!("{}: {e}", dir.display())))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(&path)
            .map_err(|e| OracleError::Cassette(format!("{}: {e}", path.display())))?;
        Ok(Self {
            path,
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, t: &Transcript) -> Result<(), OracleError> {
        let line = serde_json::to_string(t).map_err(|e| OracleError::Cassette(e.to_string()))?;
        let mut out = self.out.lock().unwrap();
        writeln!(out, "{line}")
            .and_then(|_| out.flush())
            .map_err(|e| OracleError::Cassette(format!("{}: {e}", self.path.display())))
    }
}

pub fn load_cassette(path: impl AsRef<Path>) -> Result<Vec<Transcript>, OracleError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| OracleError::Cassette(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| OracleError::Cassette(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Transcript = serde_json::from_str(&line)
            .map_err(|e| OracleError::Cassette(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if t.schema_version != CASSETTE_SCHEMA_VERSION {
            return Err(OracleError::Cassette(format!(
                "{}:{}: unsupported schema_version {}",
                path.display(),
                n + 1,
                t.schema_version
            )));
        }
        out.push(t);
    }
    Ok(out)
}

/// Serves recorded attempts by content hash. Never performs I/O.
pub struct ReplayBackend {
    entries: HashMap<String, Transcript>,
}

impl ReplayBackend {
    pub fn new(identity: &str, transcripts: &[Transcript]) -> Self {
        let entries = transcripts
            .iter()
            .filter(|t| t.request.identity == identity)
            .map(|t| (t.key.clone(), t.clone()))
            .collect();
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(
        &self,
        _prompt: &str,
        _config: &EndpointConfig,
        ctx: &RequestContext,
    ) -> Result<OracleResponse, AttemptError> {
        let Some(t) = self.entries.get(&ctx.key) else {
            return Err(AttemptError::ReplayMiss { key: ctx.key.clone() });
        };
        match (&t.response, &t.error) {
            (Some(r), _) => Ok(r.clone()),
            (None, Some(e)) => Err(e.clone()),
            (None, None) => Err(AttemptError::Transport {
                message: "recorded attempt has neither response nor error".into(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let rec = Arc::new(CassetteRecorder::create(&path).unwrap());
        let ep = ScriptedEndpoint::from_prompts("ref", [("What is x?", 4.0)], 0.0, 1);
        let live = OracleHandle::scripted(ep).record_to(rec).build();
        let cfg = EndpointConfig::audit();
        let prompts = ["(1) What is x?", "(1) What is y?", "(1) What is x?"];
        let recorded: Vec<_> = prompts.iter().map(|p| live.query_full(p, &cfg).unwrap()).collect();

        let tape = load_cassette(&path).unwrap();
        assert_eq!(tape.len(), 3);
        let usage: u64 = tape.iter().map(|t| t.response.as_ref().unwrap().usage.total()).sum();
        assert_eq!(usage, live.usage().total());

        let before = network_request_count();
        let replay = OracleHandle::replay("ref", &tape).build();
        for (p, want) in prompts.iter().zip(&recorded) {
            assert_eq!(&replay.query_full(p, &cfg).unwrap(), want);
        }
        assert!(matches!(
            replay.query("(1) What is x ?", &cfg),
            Err(OracleError::ReplayMiss { .. })
        ));
        assert_eq!(network_request_count(), before);
        assert_eq!(replay.kind(), OracleKind::Replay);
    }

    #[test]
    fn rejects_unknown_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, "{\"schema_version\":9}\n").unwrap();
        assert!(load_cassette(&path).is_err());
    }
}
