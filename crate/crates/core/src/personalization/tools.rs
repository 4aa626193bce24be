use std::sync::Arc;

use super::human::{HumanError, HumanMode, HUMAN_DISABLED_OBSERVATION};
use super::memory::{MemoryStore, DEFAULT_RETRIEVAL_K};
use super::profile::{fill_template, UserProfiler};
use crate::agent::{Tool, ToolContext, ToolError};
use crate::llm::{Completer, LlmError};

pub const NO_PREFERENCE_INFO: &str = "no preference information available";

pub const PREFERENCE_TEMPLATE: &str = "You answer questions about a smart home user's preferences.
Use only the user profile and the memories of past interactions below. If they do not answer the question, say that the preference is unknown.

User profile:
{profile}

Relevant memories:
{memories}

Question: {question}
Answer:";

/// Retrieves memories, combines them with the profile and asks the LLM.
pub fn answer_preference(
    store: &MemoryStore,
    profiler: &UserProfiler,
    user_id: &str,
    question: &str,
    k: usize,
    template: Option<&str>,
    llm: &dyn Completer,
) -> Result<String, LlmError> {
    let profile = profiler.profile(user_id);
    let memories = store.retrieve(user_id, question, k.max(1)).unwrap_or_default();
    if memories.is_empty() && profile.global_summary.trim().is_empty() {
        return Ok(NO_PREFERENCE_INFO.to_string());
    }
    let memory_lines = if memories.is_empty() {
        "(none)".to_string()
    } else {
        memories
            .iter()
            .map(|m| format!("- [{}] {}", m.entry.timestamp.format("%Y-%m-%d"), m.entry.text))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let profile_text = if profile.global_summary.trim().is_empty() {
        "(none)"
    } else {
        profile.global_summary.as_str()
    };
    let prompt = fill_template(
        template.unwrap_or(PREFERENCE_TEMPLATE),
        &[
            ("profile", profile_text),
            ("memories", &memory_lines),
            ("question", question),
        ],
    );
    Ok(llm.complete(&prompt)?.text.trim().to_string())
}

pub struct PersonalizationTool {
    pub store: Arc<MemoryStore>,
    pub profiler: Arc<UserProfiler>,
    pub k: usize,
    pub template: Option<String>,
}

impl PersonalizationTool {
    pub fn new(store: Arc<MemoryStore>, profiler: Arc<UserProfiler>) -> Self {
        Self {
            store,
            profiler,
            k: DEFAULT_RETRIEVAL_K,
            template: None,
        }
    }
}

impl Tool for PersonalizationTool {
    fn call(&self, input: &str, ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let question = input.trim();
        if question.is_empty() {
            return Err(ToolError::failed("error: the question must not be empty"));
        }
        Ok(answer_preference(
            &self.store,
            &self.profiler,
            ctx.user_id,
            question,
            self.k,
            self.template.as_deref(),
            ctx,
        )?)
    }
}

/// Asks the user a clarifying question and waits for the reply.
pub struct HumanInteractionTool {
    pub store: Arc<MemoryStore>,
}

impl HumanInteractionTool {
    fn remember(&self, user_id: &str, question: &str, answer: &str) {
        let _ = self
            .store
            .add(user_id, &format!("Question: {question} Answer: {answer}"));
    }
}

impl Tool for HumanInteractionTool {
    fn call(&self, input: &str, ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let question = input.trim();
        if question.is_empty() {
            return Err(ToolError::failed("error: the question must not be empty"));
        }
        let answer = match ctx.human {
            HumanMode::Disabled => return Ok(HUMAN_DISABLED_OBSERVATION.to_string()),
            HumanMode::Scripted(answers) => match answers.next() {
                Some(a) => a,
                None => {
                    return Ok("the user gave no answer; proceed with available information".into())
                }
            },
            HumanMode::Interactive { channel, timeout } => {
                match channel.ask(ctx.session_id, question, *timeout) {
                    Ok(a) => a,
                    Err(HumanError::Timeout(secs)) => {
                        return Ok(format!(
                            "the user did not answer within {secs} seconds; proceed with available information"
                        ))
                    }
                    Err(e) => return Err(ToolError::failed(format!("error: {e}"))),
                }
            }
        };
        self.remember(ctx.user_id, question, &answer);
        Ok(answer)
    }
}
