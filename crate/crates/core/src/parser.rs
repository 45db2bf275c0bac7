//! Model response parsing: one discussion plus one fenced command.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const FENCE: &str = "```";

/// Substrings that only appear in environment feedback. A response that
/// echoes several of them is inventing its own observations.
pub const ENV_MARKERS: [&str; 5] = [
    "(Open file:",
    "(Current directory:",
    "(Interactive session:",
    "[File:",
    "bash-$",
];

/// Minimum marker count for a multi-block response to be a soliloquy.
pub const SOLILOQUY_MARKER_THRESHOLD: usize = 4;

pub const FORMAT_ERROR_OBSERVATION: &str = "Your output was not formatted correctly. \
You must always include one discussion and one command as part of your response. \
Make sure you do not have multiple discussion/command tags.
Please make sure your output precisely matches the following format:
DISCUSSION
Discuss here with yourself about what your planning and what you're going to do in this step.

```
command(s) that you're going to run
```";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAction {
    pub thought: String,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("response has no fenced command block")]
pub struct FormatError {
    /// Observation fed back to the model so it can retry.
    pub observation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerCounting {
    /// Every occurrence of every marker counts.
    #[default]
    Total,
    /// Each marker counts at most once.
    Distinct,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SoliloquyReport {
    pub is_soliloquy: bool,
    pub code_block_count: usize,
    pub marker_count: usize,
    pub markers_found: Vec<String>,
}

/// A fenced block: byte range of the whole block (fences included) and of
/// its body.
#[derive(Debug, Clone, Copy)]
struct Block {
    start: usize,
    end: usize,
    body_start: usize,
    body_end: usize,
}

fn blocks(text: &str) -> Vec<Block> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(open) = text[pos..].find(FENCE).map(|i| i + pos) {
        let after_open = open + FENCE.len();
        // the rest of the opening line is an info string such as `bash`
        let body_start = text[after_open..]
            .find('\n')
            .map_or(text.len(), |i| after_open + i + 1);
        let Some(close) = text[body_start.min(text.len())..]
            .find(FENCE)
            .map(|i| i + body_start)
        else {
            break;
        };
        out.push(Block {
            start: open,
            end: close + FENCE.len(),
            body_start,
            body_end: close,
        });
        pos = close + FENCE.len();
    }
    out
}

pub fn code_block_count(text: &str) -> usize {
    blocks(text).len()
}

pub fn parse_response(text: &str) -> Result<ParsedAction, FormatError> {
    let Some(first) = blocks(text).into_iter().next() else {
        return Err(FormatError {
            observation: FORMAT_ERROR_OBSERVATION.to_string(),
        });
    };
    let action = text[first.body_start..first.body_end]
        .trim_end_matches(['\n', '\r'])
        .to_string();
    let mut thought = String::with_capacity(text.len());
    thought.push_str(text[..first.start].trim_end());
    let after = text[first.end..].trim();
    if !after.is_empty() {
        if !thought.is_empty() {
            thought.push('\n');
        }
        thought.push_str(after);
    }
    Ok(ParsedAction {
        thought: thought.trim().to_string(),
        action,
    })
}

pub fn detect_soliloquy(text: &str) -> SoliloquyReport {
    detect_soliloquy_with(text, MarkerCounting::Total)
}

pub fn detect_soliloquy_with(text: &str, counting: MarkerCounting) -> SoliloquyReport {
    let code_block_count = code_block_count(text);
    let mut markers_found = Vec::new();
    let mut marker_count = 0;
    for marker in ENV_MARKERS {
        let n = text.matches(marker).count();
        if n > 0 {
            markers_found.push(marker.to_string());
        }
        marker_count += match counting {
            MarkerCounting::Total => n,
            MarkerCounting::Distinct => n.min(1),
        };
    }
    SoliloquyReport {
        is_soliloquy: code_block_count > 1 && marker_count >= SOLILOQUY_MARKER_THRESHOLD,
        code_block_count,
        marker_count,
        markers_found,
    }
}

/// Cuts the response right after the closing fence of its first block.
pub fn truncate_after_first_action(text: &str) -> &str {
    match blocks(text).first() {
        Some(b) => &text[..b.end],
        None => text,
    }
}
