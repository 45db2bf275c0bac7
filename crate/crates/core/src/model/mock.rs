//! Offline backends: a scripted mock and trajectory replay.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{estimate_messages, estimate_tokens, ChatModel, Message, ModelError, ModelReply, Usage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedResponse {
    Text(String),
    Priced {
        text: String,
        tokens_in: Option<u64>,
        tokens_out: Option<u64>,
    },
}

impl ScriptedResponse {
    pub fn text(&self) -> &str {
        match self {
            ScriptedResponse::Text(t) | ScriptedResponse::Priced { text: t, .. } => t,
        }
    }
}

/// Mock script file: `{"cycle": bool, "responses": [...]}`. Each response
/// is a string or `{text, tokens_in?, tokens_out?}`; missing token counts
/// are estimated from the text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub cycle: bool,
    pub responses: Vec<ScriptedResponse>,
}

pub struct MockModel {
    script: MockScript,
    next: usize,
}

impl MockModel {
    pub fn new(script: MockScript) -> Self {
        MockModel { script, next: 0 }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let script: MockScript = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(MockModel::new(script))
    }
}

impl ChatModel for MockModel {
    fn query(&mut self, messages: &[Message]) -> Result<ModelReply, ModelError> {
        let n = self.script.responses.len();
        if n == 0 || (!self.script.cycle && self.next >= n) {
            return Err(ModelError::Exhausted(self.next));
        }
        let r = &self.script.responses[self.next % n];
        self.next += 1;
        let (tin, tout) = match r {
            ScriptedResponse::Text(_) => (None, None),
            ScriptedResponse::Priced {
                tokens_in,
                tokens_out,
                ..
            } => (*tokens_in, *tokens_out),
        };
        let text = r.text().to_string();
        Ok(ModelReply {
            usage: Usage {
                tokens_in: tin.unwrap_or_else(|| estimate_messages(messages)),
                tokens_out: tout.unwrap_or_else(|| estimate_tokens(&text)),
            },
            text,
            exchange: None,
        })
    }
}

/// Replays the raw responses and usage recorded in a trajectory file, by
/// turn index.
pub struct ReplayModel {
    turns: Vec<(String, Usage)>,
    next: usize,
}

impl ReplayModel {
    pub fn new(turns: Vec<(String, Usage)>) -> Self {
        ReplayModel { turns, next: 0 }
    }

    pub fn from_trajectory(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut turns = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let v: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            if v["record"] != "step" {
                continue;
            }
            let raw = v["raw_response"].as_str().unwrap_or_default().to_string();
            let usage: Usage = serde_json::from_value(v["usage"].clone()).unwrap_or_default();
            turns.push((raw, usage));
        }
        Ok(ReplayModel::new(turns))
    }
}

impl ChatModel for ReplayModel {
    fn query(&mut self, _messages: &[Message]) -> Result<ModelReply, ModelError> {
        let (text, usage) = self
            .turns
            .get(self.next)
            .cloned()
            .ok_or(ModelError::Exhausted(self.next))?;
        self.next += 1;
        Ok(ModelReply {
            text,
            usage,
            exchange: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Role;

    #[test]
    fn script_parses_both_shapes() {
        let s: MockScript = serde_json::from_str(
            r#"{"responses": ["a", {"text": "b", "tokens_in": 7, "tokens_out": 3}]}"#,
        )
        .unwrap();
        let mut m = MockModel::new(s);
        let msgs = [Message::new(Role::User, "12345678")];
        let r = m.query(&msgs).unwrap();
        assert_eq!((r.text.as_str(), r.usage), ("a", Usage { tokens_in: 2, tokens_out: 1 }));
        let r = m.query(&msgs).unwrap();
        assert_eq!(r.usage, Usage { tokens_in: 7, tokens_out: 3 });
        assert_eq!(m.query(&msgs), Err(ModelError::Exhausted(2)));
    }

    #[test]
    fn cycling_script_never_ends() {
        let mut m = MockModel::new(MockScript {
            cycle: true,
            responses: vec![ScriptedResponse::Text("x".into())],
        });
        for _ in 0..10 {
            assert_eq!(m.query(&[]).unwrap().text, "x");
        }
    }
}
