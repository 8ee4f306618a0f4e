//! Backend selection: the real HTTP backend or a deterministic offline
//! fixture for dry runs and tests.

use fudd_core::gateway::{BackendError, ChatBackend, GenerationParams, HttpChatBackend, TokenUsage};
use fudd_core::prompt::PromptMessages;

use crate::config::{Backend, ConfigError, API_KEY_ENV};

/// Offline stand-in that fabricates parseable responses from the class
/// names found in the prompt. Deterministic, no network.
pub struct SyntheticBackend;

fn tagged_line<'a>(prompt: &'a str, tag: &str) -> Option<&'a str> {
    prompt.lines().find_map(|l| l.strip_prefix(tag)).map(str::trim)
}

impl ChatBackend for SyntheticBackend {
    fn complete(
        &self,
        messages: &PromptMessages,
        _params: &GenerationParams,
    ) -> Result<(String, TokenUsage), BackendError> {
        let prompt = messages.final_user_message();
        let text = match (tagged_line(prompt, "Object 1:"), tagged_line(prompt, "Object 2:")) {
            (Some(a), Some(b)) => {
                // attribute names carry a per-pair tag so pools stay
                // nonempty under strict attribute similarity
                let mut tag = 0xcbf29ce484222325u64;
                for byte in a.bytes().chain(b.bytes()) {
                    tag = (tag ^ u64::from(byte)).wrapping_mul(0x100000001b3);
                }
                let tag = tag % 10000;
                format!(
                    "Visual characteristic: silhouette{tag}\n\
                     Caption 1: A photo of a {a}, with a silhouette unlike a {b}.\n\
                     Caption 2: A photo of a {b}, with a silhouette unlike a {a}.\n\
                     \n\
                     Visual characteristic: texture{tag}\n\
                     Caption 1: A photo of a {a}, with a texture unlike a {b}.\n\
                     Caption 2: A photo of a {b}, with a texture unlike a {a}.\n"
                )
            }
            _ => {
                // naive description prompt: answer with feature bullets
                "- overall shape\n- dominant color\n- typical surroundings\n".to_string()
            }
        };
        Ok((text, TokenUsage { input_tokens: 380, output_tokens: 199 }))
    }
}

pub enum AnyBackend {
    Synthetic(SyntheticBackend),
    Http(HttpChatBackend),
}

impl ChatBackend for AnyBackend {
    fn complete(
        &self,
        messages: &PromptMessages,
        params: &GenerationParams,
    ) -> Result<(String, TokenUsage), BackendError> {
        match self {
            AnyBackend::Synthetic(b) => b.complete(messages, params),
            AnyBackend::Http(b) => b.complete(messages, params),
        }
    }
}

pub fn build_backend(config: &Backend, api_key_flag: Option<&str>) -> Result<AnyBackend, ConfigError> {
    match config.kind.as_str() {
        "synthetic" => Ok(AnyBackend::Synthetic(SyntheticBackend)),
        "openai" => {
            let endpoint = config
                .endpoint
                .as_deref()
                .ok_or_else(|| ConfigError::MissingBackendField(config.kind.clone(), "endpoint"))?;
            let key = match api_key_flag {
                Some(k) => k.to_string(),
                None => std::env::var(API_KEY_ENV).map_err(|_| ConfigError::MissingApiKey)?,
            };
            Ok(AnyBackend::Http(HttpChatBackend::new(endpoint, key)))
        }
        other => Err(ConfigError::UnknownBackend(other.to_string())),
    }
}
