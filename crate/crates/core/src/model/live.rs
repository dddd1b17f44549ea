//! Live adapter for OpenAI-compatible chat-completion endpoints.
//!
//! Scene payloads are not sent separately; the prompt templates already
//! inline the scene-graph text.

use std::time::Duration;

use serde_json::{json, Value};

use super::{ConversationModel, Message, ModelError, TurnKind};

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";

#[derive(Debug, Clone)]
pub struct ChatCompletionsModel {
    endpoint: String,
    api_key: String,
    model: String,
    temperature: f64,
    client: reqwest::blocking::Client,
}

impl ChatCompletionsModel {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, model: impl Into<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("building HTTP client");
        Self {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            model: model.into(),
            temperature: 0.0,
            client,
        }
    }

    /// Reads `OPENAI_API_KEY`, and optionally `OPENAI_BASE_URL` / `OPENAI_MODEL`.
    pub fn from_env() -> Result<Self, ModelError> {
        let key = std::env::var("OPENAI_API_KEY")
            .map_err(|_| ModelError::Transport("OPENAI_API_KEY is not set".into()))?;
        let endpoint = std::env::var("OPENAI_BASE_URL")
            .map(|b| format!("{}/chat/completions", b.trim_end_matches('/')))
            .unwrap_or_else(|_| DEFAULT_ENDPOINT.to_string());
        let model = std::env::var("OPENAI_MODEL").unwrap_or_else(|_| "gpt-4o".to_string());
        Ok(Self::new(endpoint, key, model))
    }

    pub fn request_body(&self, conversation: &[Message]) -> Value {
        let messages: Vec<Value> = conversation
            .iter()
            .map(|m| json!({ "role": m.role().as_str(), "content": m.text() }))
            .collect();
        json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": messages,
        })
    }
}

impl ConversationModel for ChatCompletionsModel {
    fn tag(&self) -> &str {
        &self.model
    }

    fn reply(&mut self, _turn: TurnKind, conversation: &[Message]) -> Result<String, ModelError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&self.request_body(conversation))
            .send()
            .map_err(|e| ModelError::Transport(e.to_string()))?;
        let status = resp.status();
        let body: Value = resp
            .json()
            .map_err(|e| ModelError::BadResponse(e.to_string()))?;
        if !status.is_success() {
            return Err(ModelError::Transport(format!("HTTP {status}: {body}")));
        }
        body["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ModelError::BadResponse("missing choices[0].message.content".into()))
    }
}
