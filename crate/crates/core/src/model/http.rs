//! OpenAI-compatible chat completions over HTTP.

use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatModel, Message, ModelConfig, ModelError, ModelReply, RateLimiter, Usage};

pub fn request_body(cfg: &ModelConfig, messages: &[Message]) -> Value {
    let mut body = json!({
        "model": cfg.model_name,
        "messages": messages,
        "temperature": cfg.temperature,
        "top_p": cfg.top_p,
    });
    if let Some(max) = cfg.max_tokens {
        body["max_tokens"] = json!(max);
    }
    body
}

pub struct HttpModel {
    cfg: ModelConfig,
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
    limiter: Option<RateLimiter>,
}

impl HttpModel {
    pub fn new(cfg: ModelConfig, limiter: Option<RateLimiter>) -> Result<Self, ModelError> {
        let endpoint = cfg
            .endpoint
            .clone()
            .ok_or_else(|| ModelError::Config("http_api needs `endpoint`".into()))?;
        let url = format!("{}/chat/completions", endpoint.trim_end_matches('/'));
        let api_key = std::env::var(&cfg.api_key_env).ok();
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(cfg.request_timeout_secs))
            .build();
        let limiter = limiter.or_else(|| {
            cfg.rate_limit
                .as_ref()
                .map(|r| RateLimiter::new(r.burst, r.per_second))
        });
        Ok(HttpModel {
            cfg,
            agent,
            url,
            api_key,
            limiter,
        })
    }

    fn attempt(&self, body: &Value) -> Result<Value, (bool, String)> {
        if let Some(l) = &self.limiter {
            l.acquire();
        }
        let mut req = self.agent.post(&self.url).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(body.clone()) {
            Ok(resp) => resp
                .into_json::<Value>()
                .map_err(|e| (false, format!("invalid JSON body: {e}"))),
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                let retry = code == 429 || code >= 500;
                Err((retry, format!("HTTP {code}: {text}")))
            }
            Err(e) => Err((true, e.to_string())),
        }
    }
}

fn parse_reply(v: &Value) -> Result<(String, Usage), ModelError> {
    let text = v["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| ModelError::BadResponse("missing choices[0].message.content".into()))?
        .to_string();
    let usage = Usage {
        tokens_in: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
        tokens_out: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
    };
    Ok((text, usage))
}

impl ChatModel for HttpModel {
    fn query(&mut self, messages: &[Message]) -> Result<ModelReply, ModelError> {
        let body = request_body(&self.cfg, messages);
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(
                    self.cfg.retry_backoff_ms << (attempt - 1).min(6),
                ));
            }
            match self.attempt(&body) {
                Ok(resp) => {
                    let (text, usage) = parse_reply(&resp)?;
                    let exchange = json!({
                        "url": self.url,
                        "request": body,
                        "response": resp,
                    });
                    return Ok(ModelReply {
                        text,
                        usage,
                        exchange: Some(exchange),
                    });
                }
                Err((retry, msg)) => {
                    tracing::warn!(attempt, "model request failed: {msg}");
                    last = msg;
                    if !retry {
                        break;
                    }
                }
            }
        }
        Err(ModelError::Transport(last))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Role;

    #[test]
    fn body_forwards_sampling_parameters() {
        let cfg = ModelConfig {
            model_name: "m".into(),
            max_tokens: Some(10),
            ..Default::default()
        };
        let b = request_body(&cfg, &[Message::new(Role::System, "s")]);
        assert_eq!(b["temperature"], json!(0.0));
        assert_eq!(b["top_p"], json!(0.95));
        assert_eq!(b["max_tokens"], json!(10));
        assert_eq!(b["messages"][0]["role"], "system");
    }

    #[test]
    fn parses_completion() {
        let v = json!({"choices": [{"message": {"content": "hi"}}], "usage": {"prompt_tokens": 3, "completion_tokens": 1}});
        assert_eq!(parse_reply(&v).unwrap(), ("hi".to_string(), Usage { tokens_in: 3, tokens_out: 1 }));
        assert!(parse_reply(&json!({})).is_err());
    }
}
