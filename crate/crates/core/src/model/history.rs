use serde::{Deserialize, Serialize};

use super::{Message, Role};
use crate::agent::Step;
use crate::templates::{render_next_step, Prompts, Templates};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistoryPolicy {
    /// Observations kept verbatim, counting back from the latest step.
    pub full_observation_window: usize,
}

impl Default for HistoryPolicy {
    fn default() -> Self {
        HistoryPolicy {
            full_observation_window: 5,
        }
    }
}

pub fn elision_stub(observation: &str) -> String {
    format!("Old environment output omitted ({} lines)", observation.lines().count())
}

/// `[system, demonstration?, instance]` followed by one assistant/user pair
/// per step. Observations older than the window are replaced by a stub; the
/// state lines are added here, never stored in the observation.
pub fn assemble_context(
    t: &Templates,
    prompts: &Prompts,
    steps: &[Step],
    policy: &HistoryPolicy,
) -> Vec<Message> {
    let mut msgs = Vec::with_capacity(3 + 2 * steps.len());
    msgs.push(Message::new(Role::System, prompts.system.clone()));
    if let Some(demo) = &prompts.demonstration {
        msgs.push(Message::new(Role::User, demo.clone()));
    }
    msgs.push(Message::new(Role::User, prompts.instance.clone()));
    let first_full = steps.len().saturating_sub(policy.full_observation_window);
    for (i, step) in steps.iter().enumerate() {
        msgs.push(Message::new(Role::Assistant, step.response.clone()));
        let observation = if i < first_full {
            elision_stub(&step.observation)
        } else {
            step.observation.clone()
        };
        msgs.push(Message::new(
            Role::User,
            render_next_step(t, &observation, &step.state),
        ));
    }
    msgs
}
