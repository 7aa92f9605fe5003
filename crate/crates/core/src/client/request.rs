//! Chat-completions request body and the message layout for each setting.

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{InstructionMode, RunConfig, ANSWER_IN_IMAGE_PROMPT};
use super::ClientError;
use crate::conditioner::{encode_png, ConditionedImage};
use crate::corpus::{EvalItem, DESCRIBE_PROMPT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MessageContent {
    Text(String),
    Parts(Vec<ContentPart>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: MessageContent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    /// Text parts of the user turn, joined by newlines; `None` when the turn
    /// carries only the image.
    pub fn user_text(&self) -> Option<String> {
        let user = self.messages.iter().find(|m| m.role == "user")?;
        let texts: Vec<&str> = match &user.content {
            MessageContent::Text(t) => vec![t.as_str()],
            MessageContent::Parts(parts) => parts
                .iter()
                .filter_map(|p| match p {
                    ContentPart::Text { text } => Some(text.as_str()),
                    ContentPart::ImageUrl { .. } => None,
                })
                .collect(),
        };
        (!texts.is_empty()).then(|| texts.join("\n"))
    }

    /// Number of image parts in the user turn.
    pub fn image_count(&self) -> usize {
        self.messages
            .iter()
            .filter(|m| m.role == "user")
            .map(|m| match &m.content {
                MessageContent::Parts(p) => p.iter().filter(|c| matches!(c, ContentPart::ImageUrl { .. })).count(),
                MessageContent::Text(_) => 0,
            })
            .sum()
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("request serializes")
    }

    /// SHA-256 of the serialized body.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json_bytes()))
    }
}

/// Build the request for `item` under `cfg`. Pure: the same inputs always
/// produce the same bytes.
///
/// Layout: optional system message, then one user turn holding the PNG
/// image as a base64 data URL followed by the instruction text (if any).
pub fn build_request(item: &EvalItem, img: &ConditionedImage, cfg: &RunConfig) -> Result<ChatRequest, ClientError> {
    cfg.validate()?;
    if img.condition != cfg.condition {
        return Err(ClientError::ConfigConflict(format!(
            "image rendered for {} but run is configured for {}",
            img.condition, cfg.condition
        )));
    }
    let user_text = match cfg.instruction_mode {
        InstructionMode::None => None,
        InstructionMode::AnswerInImage => Some(ANSWER_IN_IMAGE_PROMPT.to_string()),
        InstructionMode::DescribeImage => Some(DESCRIBE_PROMPT.to_string()),
        InstructionMode::PlainQuestion => Some(item.question.clone().ok_or_else(|| {
            ClientError::ConfigConflict(format!("item {} has no question for plain_question mode", item.item_id))
        })?),
    };

    let png = encode_png(&img.pixels).map_err(|e| ClientError::Render(e.to_string()))?;
    let url = format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(png)
    );
    let mut parts = vec![ContentPart::ImageUrl { image_url: ImageUrl { url } }];
    if let Some(text) = user_text {
        parts.push(ContentPart::Text { text });
    }

    let mut messages = Vec::with_capacity(2);
    if let Some(sys) = &cfg.system_message {
        messages.push(ChatMessage {
            role: "system".into(),
            content: MessageContent::Text(sys.clone()),
        });
    }
    messages.push(ChatMessage {
        role: "user".into(),
        content: MessageContent::Parts(parts),
    });

    Ok(ChatRequest {
        model: cfg.model_name.clone(),
        messages,
        temperature: cfg.temperature,
        max_tokens: cfg.max_tokens,
        seed: cfg.seed,
    })
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<serde_json::Value>,
}

/// Assistant text from a chat-completions response body.
pub fn parse_response_text(body: &str) -> Result<String, String> {
    let resp: ChatResponse = serde_json::from_str(body).map_err(|e| format!("unparsable response: {e}"))?;
    let choice = resp.choices.into_iter().next().ok_or("response has no choices")?;
    match choice.message.content {
        None | Some(serde_json::Value::Null) => Ok(String::new()),
        Some(serde_json::Value::String(s)) => Ok(s),
        Some(serde_json::Value::Array(parts)) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(|t| t.as_str()))
            .collect::<Vec<_>>()
            .join("")),
        Some(other) => Err(format!("unexpected content shape: {other}")),
    }
}
