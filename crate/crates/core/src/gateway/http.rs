use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{CompletionRequest, CompletionResponse, GatewayError, Provider, ProviderConfig};

/// Shape of a chat/completions-style JSON exchange.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpFormat {
    pub path: String,
    pub model_field: String,
    pub messages_field: String,
    pub temperature_field: String,
    pub max_tokens_field: String,
    pub stop_field: String,
    pub user_role: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system_prompt: Option<String>,
    /// JSON pointer to the completion text in the response body.
    pub response_pointer: String,
    pub auth_header: String,
    pub auth_scheme: String,
}

impl Default for HttpFormat {
    fn default() -> Self {
        HttpFormat {
            path: "/v1/chat/completions".into(),
            model_field: "model".into(),
            messages_field: "messages".into(),
            temperature_field: "temperature".into(),
            max_tokens_field: "max_tokens".into(),
            stop_field: "stop".into(),
            user_role: "user".into(),
            system_prompt: None,
            response_pointer: "/choices/0/message/content".into(),
            auth_header: "Authorization".into(),
            auth_scheme: "Bearer".into(),
        }
    }
}

impl HttpFormat {
    pub fn payload(&self, req: &CompletionRequest) -> Value {
        let mut messages = Vec::new();
        if let Some(system) = &self.system_prompt {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": self.user_role, "content": req.prompt}));
        let mut body = Map::new();
        body.insert(self.model_field.clone(), json!(req.model_id));
        body.insert(self.messages_field.clone(), Value::Array(messages));
        body.insert(self.temperature_field.clone(), json!(req.temperature));
        body.insert(self.max_tokens_field.clone(), json!(req.max_tokens));
        if let Some(stop) = &req.stop {
            body.insert(self.stop_field.clone(), json!(stop));
        }
        Value::Object(body)
    }

    pub fn extract_text(&self, body: &Value) -> Result<String, GatewayError> {
        body.pointer(&self.response_pointer)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                GatewayError::MalformedResponse(format!(
                    "no string at {} in response",
                    self.response_pointer
                ))
            })
    }
}

pub struct HttpProvider {
    agent: ureq::Agent,
    url: String,
    credential: String,
    format: HttpFormat,
}

impl HttpProvider {
    /// Reads the credential from the configured environment variable.
    /// Fails before any network activity when it is unset.
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self, GatewayError> {
        let var = cfg
            .credential_env
            .as_deref()
            .ok_or_else(|| GatewayError::InvalidConfig("http_api requires credential_env".into()))?;
        let credential = std::env::var(var)
            .ok()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| GatewayError::MissingCredential(var.to_string()))?;
        let endpoint = cfg
            .endpoint
            .as_deref()
            .ok_or_else(|| GatewayError::InvalidConfig("http_api requires endpoint".into()))?;
        let url = format!(
            "{}/{}",
            endpoint.trim_end_matches('/'),
            cfg.http.path.trim_start_matches('/')
        );
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpProvider {
            agent,
            url,
            credential,
            format: cfg.http.clone(),
        })
    }
}

impl Provider for HttpProvider {
    fn name(&self) -> &str {
        "http_api"
    }

    fn invoke(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let started = Instant::now();
        let auth = if self.format.auth_scheme.is_empty() {
            self.credential.clone()
        } else {
            format!("{} {}", self.format.auth_scheme, self.credential)
        };
        let mut resp = self
            .agent
            .post(&self.url)
            .header(&self.format.auth_header, &auth)
            .send_json(self.format.payload(req))
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(GatewayError::HttpStatus {
                status,
                body: body.chars().take(500).collect(),
            });
        }
        let value: Value = serde_json::from_str(&body)
            .map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
        let text = self.format.extract_text(&value)?;

        let mut out = CompletionResponse::new(text);
        out.provider_meta.insert("provider".into(), json!("http_api"));
        out.provider_meta
            .insert("latency_ms".into(), json!(started.elapsed().as_millis() as u64));
        if let Some(usage) = value.get("usage") {
            out.provider_meta.insert("usage".into(), usage.clone());
        }
        Ok(out)
    }
}
