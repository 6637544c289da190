//! OpenAI-compatible chat-completions client.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    note_network_request, AttemptError, ChatBackend, EndpointConfig, FinishStatus, OracleError,
    OracleResponse, RequestContext, TokenUsage,
};

/// A live endpoint declaration. The API key is read from `api_key_env` when
/// the backend is built and is never written anywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpEndpoint {
    pub identity: String,
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Extra top-level request fields (provider pinning, routing flags).
    #[serde(default)]
    pub extra: BTreeMap<String, Value>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

pub struct HttpBackend {
    endpoint: HttpEndpoint,
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(endpoint: HttpEndpoint) -> Result<Self, OracleError> {
        let api_key = match &endpoint.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                OracleError::InvalidConfig(format!(
                    "environment variable {var} for endpoint {} is not set",
                    endpoint.identity
                ))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(endpoint.timeout_secs))
            .build()
            .map_err(|e| OracleError::InvalidConfig(e.to_string()))?;
        let url = format!("{}/v1/chat/completions", endpoint.base_url.trim_end_matches('/'));
        Ok(Self {
            endpoint,
            url,
            api_key,
            client,
        })
    }
}

/// Request body for one chat-completions call.
pub(crate) fn request_body(model: &str, prompt: &str, config: &EndpointConfig, extra: &BTreeMap<String, Value>) -> Value {
    let mut body = json!({
        "model": model,
        "messages": [
            {"role": "system", "content": config.system_prompt},
            {"role": "user", "content": prompt},
        ],
        "temperature": config.temperature,
        "max_tokens": config.max_output_tokens,
    });
    let obj = body.as_object_mut().expect("object");
    for (k, v) in extra.iter().chain(config.extra.iter()) {
        obj.insert(k.clone(), v.clone());
    }
    body
}

pub(crate) fn parse_completion(body: &Value) -> Result<OracleResponse, AttemptError> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| AttemptError::Transport {
            message: "response has no choices".into(),
        })?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let finish = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("stop") | None => FinishStatus::Stop,
        Some("length") => FinishStatus::Length,
        Some(other) => FinishStatus::Other(other.to_string()),
    };
    let field = |name: &str| body.pointer(&format!("/usage/{name}")).and_then(Value::as_u64).unwrap_or(0);
    Ok(OracleResponse {
        text,
        finish,
        usage: TokenUsage {
            prompt_tokens: field("prompt_tokens"),
            completion_tokens: field("completion_tokens"),
        },
    })
}

impl ChatBackend for HttpBackend {
    fn complete(
        &self,
        prompt: &str,
        config: &EndpointConfig,
        _ctx: &RequestContext,
    ) -> Result<OracleResponse, AttemptError> {
        let body = request_body(&self.endpoint.model, prompt, config, &self.endpoint.extra);
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        note_network_request();
        let resp = req.send().map_err(|e| AttemptError::Transport { message: e.to_string() })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| AttemptError::Transport { message: e.to_string() })?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Transport {
                message: format!("HTTP {status}: {}", truncate(&text)),
            });
        }
        if !status.is_success() {
            return Err(AttemptError::Refused {
                status: status.as_u16(),
                message: truncate(&text),
            });
        }
        let json: Value = serde_json::from_str(&text).map_err(|e| AttemptError::Transport {
            message: format!("malformed response body: {e}"),
        })?;
        parse_completion(&json)
    }

    fn sleeps_between_retries(&self) -> bool {
        true
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(300).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_shape() {
        let mut cfg = EndpointConfig::audit();
        cfg.extra.insert("provider".into(), json!({"only": ["x"], "allow_fallbacks": false}));
        let b = request_body("m", "hello", &cfg, &BTreeMap::new());
        assert_eq!(b["model"], "m");
        assert_eq!(b["messages"][1]["content"], "hello");
        assert_eq!(b["messages"][0]["role"], "system");
        assert_eq!(b["temperature"], 0.0);
        assert_eq!(b["provider"]["allow_fallbacks"], false);
    }

    #[test]
    fn completion_parsing() {
        let body = json!({
            "choices": [{"message": {"content": "(1) 106"}, "finish_reason": "length"}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 3}
        });
        let r = parse_completion(&body).unwrap();
        assert_eq!(r.text, "(1) 106");
        assert_eq!(r.finish, FinishStatus::Length);
        assert_eq!(r.usage.total(), 15);
        assert!(parse_completion(&json!({"error": "x"})).is_err());
        let null_content = json!({"choices": [{"message": {"content": null}}]});
        assert_eq!(parse_completion(&null_content).unwrap().text, "");
    }

    #[test]
    fn missing_key_variable_is_a_config_error() {
        let ep = HttpEndpoint {
            identity: "live".into(),
            base_url: "http://127.0.0.1:9".into(),
            model: "m".into(),
            api_key_env: Some("RECALL_AUDIT_TEST_UNSET_VARIABLE".into()),
            extra: BTreeMap::new(),
            timeout_secs: 1,
        };
        assert!(matches!(HttpBackend::new(ep), Err(OracleError::InvalidConfig(_))));
    }
}
