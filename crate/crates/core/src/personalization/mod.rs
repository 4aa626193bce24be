//! Long-term memory, user profiles and the human-in-the-loop channel.

mod human;
mod memory;
mod profile;
mod tools;

pub use human::{
    HumanChannel, HumanError, HumanMode, PendingQuestion, ScriptedAnswers, DEFAULT_HUMAN_TIMEOUT,
    HUMAN_DISABLED_OBSERVATION,
};
pub use memory::{
    rank_order, MemoryEntry, MemoryError, MemorySeed, MemorySeedFile, MemoryStore, ScoredMemory,
    DEFAULT_RETRIEVAL_K,
};
pub use profile::{fill_template, ProfileBuild, UserProfile, UserProfiler, DAILY_SUMMARY_TEMPLATE, GLOBAL_SUMMARY_TEMPLATE};
pub use tools::{answer_preference, HumanInteractionTool, PersonalizationTool, NO_PREFERENCE_INFO, PREFERENCE_TEMPLATE};
