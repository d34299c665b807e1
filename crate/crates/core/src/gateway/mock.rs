use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{CompletionRequest, CompletionResponse, GatewayError, Provider};

/// Canned response for prompts containing every `contains` fragment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    pub contains: Vec<String>,
    pub response: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub one_shot: bool,
}

impl MockRule {
    pub fn new(contains: &[&str], response: impl Into<String>) -> Self {
        MockRule {
            contains: contains.iter().map(|s| s.to_string()).collect(),
            response: response.into(),
            one_shot: false,
        }
    }

    pub fn once(contains: &[&str], response: impl Into<String>) -> Self {
        MockRule {
            one_shot: true,
            ..MockRule::new(contains, response)
        }
    }

    pub fn matches(&self, prompt: &str) -> bool {
        self.contains.iter().all(|frag| prompt.contains(frag.as_str()))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    rules: Vec<MockRule>,
}

pub(super) fn load_script_file(path: &Path) -> Result<Vec<MockRule>, GatewayError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        GatewayError::InvalidConfig(format!("cannot read script file {}: {e}", path.display()))
    })?;
    let parsed: Result<ScriptFile, String> = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).map_err(|e| e.to_string()),
        _ => toml::from_str(&text).map_err(|e| e.to_string()),
    };
    parsed
        .map(|f| f.rules)
        .map_err(|e| GatewayError::InvalidConfig(format!("script file {}: {e}", path.display())))
}

/// Deterministic offline provider. Rules are tried in order; the first
/// unconsumed match wins and one-shot rules are retired after use.
pub struct ScriptedProvider {
    rules: Vec<MockRule>,
    consumed: Mutex<Vec<bool>>,
}

impl ScriptedProvider {
    pub fn new(rules: Vec<MockRule>) -> Self {
        let consumed = Mutex::new(vec![false; rules.len()]);
        ScriptedProvider { rules, consumed }
    }
}

impl Provider for ScriptedProvider {
    fn name(&self) -> &str {
        "scripted_mock"
    }

    fn invoke(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let mut consumed = self.consumed.lock().unwrap();
        for (i, rule) in self.rules.iter().enumerate() {
            if consumed[i] || !rule.matches(&req.prompt) {
                continue;
            }
            if rule.one_shot {
                consumed[i] = true;
            }
            let mut resp = CompletionResponse::new(rule.response.clone());
            resp.provider_meta.insert("provider".into(), json!("scripted_mock"));
            resp.provider_meta.insert("rule".into(), json!(i));
            return Ok(resp);
        }
        Err(GatewayError::NoRuleMatched {
            excerpt: req.prompt.chars().take(80).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Gateway, ProviderConfig};
    use super::*;

    fn req(prompt: &str) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.into(),
            model_id: "mock".into(),
            temperature: 0.0,
            max_tokens: 64,
            stop: None,
        }
    }

    #[test]
    fn passthrough() {
        let gw = Gateway::new(&ProviderConfig::scripted(vec![MockRule::new(
            &["analyze the emotion"],
            "The sentence conveys weariness.",
        )]))
        .unwrap();
        let resp = gw
            .complete(&req("Please analyze the emotion of the following sentence."))
            .unwrap();
        assert_eq!(resp.text, "The sentence conveys weariness.");
        assert!(!resp.cached);
    }

    #[test]
    fn one_shot_then_fallback() {
        let gw = Gateway::new(&ProviderConfig::scripted(vec![
            MockRule::once(&["q"], "first"),
            MockRule::new(&["q"], "fallback"),
        ]))
        .unwrap();
        assert_eq!(gw.complete(&req("q")).unwrap().text, "first");
        assert_eq!(gw.complete(&req("q")).unwrap().text, "fallback");
        assert_eq!(gw.complete(&req("q")).unwrap().text, "fallback");
    }

    #[test]
    fn unmatched_prompt_is_an_error() {
        let gw = Gateway::new(&ProviderConfig::scripted(vec![MockRule::new(&["a", "b"], "x")]))
            .unwrap();
        assert!(matches!(gw.complete(&req("only a")), Err(GatewayError::NoRuleMatched { .. })));
    }

    #[test]
    fn script_file_formats() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("s.toml");
        std::fs::write(
            &toml_path,
            "[[rules]]\ncontains = [\"x\"]\nresponse = \"from toml\"\none_shot = true\n",
        )
        .unwrap();
        let json_path = dir.path().join("s.json");
        std::fs::write(&json_path, r#"{"rules":[{"contains":["y"],"response":"from json"}]}"#).unwrap();
        let a = load_script_file(&toml_path).unwrap();
        assert_eq!(a, vec![MockRule::once(&["x"], "from toml")]);
        let b = load_script_file(&json_path).unwrap();
        assert_eq!(b, vec![MockRule::new(&["y"], "from json")]);
    }
}
