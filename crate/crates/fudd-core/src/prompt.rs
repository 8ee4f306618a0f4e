//! Chat prompt structures shared by the description builders and backends.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// One in-context example: a user query paired with the assistant reply shown
/// to the model before the real query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub user: String,
    pub assistant: String,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt must end with a user message")]
    MissingFinalUser,
    #[error("in-context roles must alternate user/assistant")]
    RolesNotAlternating,
}

/// An ordered chat transcript ending in the query message.
///
/// In-context examples alternate user/assistant; the final message is always
/// the user query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMessages {
    messages: Vec<Message>,
}

impl PromptMessages {
    /// Builds a prompt from example exchanges followed by the final query.
    pub fn with_examples(examples: &[ChatExchange], query: impl Into<String>) -> Self {
        let mut messages = Vec::with_capacity(examples.len() * 2 + 1);
        for ex in examples {
            messages.push(Message::user(ex.user.clone()));
            messages.push(Message::assistant(ex.assistant.clone()));
        }
        messages.push(Message::user(query));
        Self { messages }
    }

    pub fn from_messages(messages: Vec<Message>) -> Result<Self, PromptError> {
        match messages.last() {
            Some(m) if m.role == Role::User => {}
            _ => return Err(PromptError::MissingFinalUser),
        }
        let body = &messages[..messages.len() - 1];
        let start = usize::from(body.first().is_some_and(|m| m.role == Role::System));
        for (i, m) in body[start..].iter().enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if m.role != expected {
                return Err(PromptError::RolesNotAlternating);
            }
        }
        Ok(Self { messages })
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn final_user_message(&self) -> &str {
        // invariant: last message is the user query
        &self.messages.last().expect("non-empty prompt").content
    }
}
