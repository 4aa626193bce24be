use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::memory::{MemoryEntry, MemoryStore};
use crate::fixtures::{read_json, FixtureError};
use crate::llm::Completer;

pub const DAILY_SUMMARY_TEMPLATE: &str = "You maintain a profile of a smart home user's preferences.
Summarize the preferences, habits and facts about the user revealed by their interactions on {date}.
Only state what the interactions support. Be concise.

Interactions:
{interactions}

Daily summary:";

pub const GLOBAL_SUMMARY_TEMPLATE: &str = "You maintain a profile of a smart home user's preferences.
Combine the daily summaries below into one holistic user profile. Prefer recent information when summaries disagree. Be concise.

Daily summaries:
{summaries}

User profile:";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub daily_summaries: BTreeMap<NaiveDate, String>,
    pub global_summary: String,
    pub built_at: Option<DateTime<Utc>>,
    /// Days whose last summarization attempt failed.
    #[serde(default)]
    pub stale_days: BTreeSet<NaiveDate>,
}

impl UserProfile {
    pub fn is_empty(&self) -> bool {
        self.global_summary.trim().is_empty() && self.daily_summaries.is_empty()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct CachedProfile {
    profile: UserProfile,
    /// Entry ids summarized for each day.
    day_entries: BTreeMap<NaiveDate, Vec<u64>>,
}

/// Result of one rebuild, with the number of LLM calls it issued.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileBuild {
    pub profile: UserProfile,
    pub llm_calls: usize,
    pub changed_days: Vec<NaiveDate>,
}

pub fn fill_template(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

fn group_by_day(entries: &[MemoryEntry]) -> BTreeMap<NaiveDate, Vec<&MemoryEntry>> {
    let mut days: BTreeMap<NaiveDate, Vec<&MemoryEntry>> = BTreeMap::new();
    for e in entries {
        days.entry(e.timestamp.date_naive()).or_default().push(e);
    }
    days
}

/// Hierarchical profiler: one summary per UTC day (map), then one global
/// summary over the daily summaries (reduce). Rebuilds are incremental.
#[derive(Debug, Default)]
pub struct UserProfiler {
    cache: Mutex<HashMap<String, CachedProfile>>,
    persist_path: Option<PathBuf>,
    daily_template: Option<String>,
    global_template: Option<String>,
}

impl UserProfiler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads (if present) and persists the cache at `path`.
    pub fn with_cache_file(path: impl Into<PathBuf>) -> Result<Self, FixtureError> {
        let path = path.into();
        let cache = if path.exists() {
            read_json::<HashMap<String, CachedProfile>>(&path)?
        } else {
            HashMap::new()
        };
        Ok(Self {
            cache: Mutex::new(cache),
            persist_path: Some(path),
            ..Self::default()
        })
    }

    pub fn with_templates(mut self, daily: Option<String>, global: Option<String>) -> Self {
        self.daily_template = daily;
        self.global_template = global;
        self
    }

    /// Forgets every cached profile.
    pub fn clear(&self) {
        let mut cache = self.cache.lock();
        cache.clear();
        if let Some(path) = &self.persist_path {
            if let Err(e) = persist(path, &cache) {
                warn!(path = %path.display(), error = %e, "failed to persist profile cache");
            }
        }
    }

    pub fn profile(&self, user_id: &str) -> UserProfile {
        self.cache
            .lock()
            .get(user_id)
            .map(|c| c.profile.clone())
            .unwrap_or_else(|| UserProfile {
                user_id: user_id.into(),
                ..UserProfile::default()
            })
    }

    pub fn build_profile(
        &self,
        store: &MemoryStore,
        user_id: &str,
        llm: &dyn Completer,
    ) -> ProfileBuild {
        let entries = store.entries_for(user_id);
        let days = group_by_day(&entries);
        let mut cached = self.cache.lock().get(user_id).cloned().unwrap_or_else(|| CachedProfile {
            profile: UserProfile {
                user_id: user_id.into(),
                ..UserProfile::default()
            },
            day_entries: BTreeMap::new(),
        });
        let mut calls = 0;
        let mut changed = Vec::new();
        let mut any_updated = false;
        let daily_template = self.daily_template.as_deref().unwrap_or(DAILY_SUMMARY_TEMPLATE);
        for (day, day_entries) in &days {
            let ids: Vec<u64> = day_entries.iter().map(|e| e.entry_id).collect();
            if cached.day_entries.get(day) == Some(&ids) && !cached.profile.stale_days.contains(day) {
                continue;
            }
            changed.push(*day);
            let interactions = day_entries
                .iter()
                .map(|e| format!("- {}", e.text))
                .collect::<Vec<_>>()
                .join("\n");
            let prompt = fill_template(
                daily_template,
                &[("date", &day.to_string()), ("interactions", &interactions)],
            );
            calls += 1;
            match llm.complete(&prompt) {
                Ok(resp) => {
                    cached.profile.daily_summaries.insert(*day, resp.text.trim().to_string());
                    cached.profile.stale_days.remove(day);
                    cached.day_entries.insert(*day, ids);
                    any_updated = true;
                }
                Err(e) => {
                    warn!(user_id, %day, error = %e, "daily summary failed; keeping prior value");
                    cached.profile.stale_days.insert(*day);
                }
            }
        }
        let global_missing = cached.profile.global_summary.is_empty() && !cached.profile.daily_summaries.is_empty();
        if any_updated || global_missing {
            let summaries = cached
                .profile
                .daily_summaries
                .iter()
                .map(|(d, s)| format!("{d}: {s}"))
                .collect::<Vec<_>>()
                .join("\n");
            let prompt = fill_template(
                self.global_template.as_deref().unwrap_or(GLOBAL_SUMMARY_TEMPLATE),
                &[("summaries", &summaries)],
            );
            calls += 1;
            match llm.complete(&prompt) {
                Ok(resp) => cached.profile.global_summary = resp.text.trim().to_string(),
                Err(e) => {
                    warn!(user_id, error = %e, "global summary failed; keeping prior value");
                }
            }
        }
        cached.profile.built_at = Some(Utc::now());
        let profile = cached.profile.clone();
        {
            let mut cache = self.cache.lock();
            cache.insert(user_id.to_string(), cached);
            if let Some(path) = &self.persist_path {
                if let Err(e) = persist(path, &cache) {
                    warn!(path = %path.display(), error = %e, "failed to persist profile cache");
                }
            }
        }
        ProfileBuild {
            profile,
            llm_calls: calls,
            changed_days: changed,
        }
    }
}

fn persist(path: &Path, cache: &HashMap<String, CachedProfile>) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(cache).map_err(std::io::Error::other)?;
    std::fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use chrono::TimeZone;

    use super::*;
    use crate::embedding::HashingEmbedder;
    use crate::llm::{LlmGateway, ReplayRule, ScriptedBackend};

    fn gateway(rules: Vec<ReplayRule>) -> (Arc<ScriptedBackend>, LlmGateway) {
        let backend = Arc::new(ScriptedBackend::new(rules));
        (backend.clone(), LlmGateway::new(backend))
    }

    fn rules() -> Vec<ReplayRule> {
        vec![
            ReplayRule::patterns(["daily summary:", "2024-03-01"], "likes basketball"),
            ReplayRule::patterns(["daily summary:", "2024-03-02"], "wakes early"),
            ReplayRule::patterns(["user profile:"], "basketball fan who wakes early"),
        ]
    }

    fn day(d: u32, h: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, d, h, 0, 0).unwrap()
    }

    #[test]
    fn map_then_reduce_and_incremental_rebuild() {
        let store = MemoryStore::new(Arc::new(HashingEmbedder::default()));
        store.add_at("u", "I'm a Raptors fan", day(1, 9)).unwrap();
        store.add_at("u", "watch the game", day(1, 20)).unwrap();
        store.add_at("u", "alarm at 6", day(2, 22)).unwrap();
        let (backend, llm) = gateway(rules());
        let profiler = UserProfiler::new();

        let build = profiler.build_profile(&store, "u", &llm);
        assert_eq!(build.llm_calls, 3);
        assert_eq!(backend.call_count(), 3);
        assert_eq!(build.profile.daily_summaries.len(), 2);
        assert_eq!(build.profile.global_summary, "basketball fan who wakes early");
        // The reduce prompt only sees daily summaries.
        let reduce_prompt = backend.prompts().last().unwrap().clone();
        assert!(reduce_prompt.contains("likes basketball"));
        assert!(!reduce_prompt.contains("Raptors"));

        assert_eq!(profiler.build_profile(&store, "u", &llm).llm_calls, 0);

        store.add_at("u", "dim the lights at night", day(2, 23)).unwrap();
        let build = profiler.build_profile(&store, "u", &llm);
        assert_eq!(build.llm_calls, 2);
        assert_eq!(build.changed_days, vec![NaiveDate::from_ymd_opt(2024, 3, 2).unwrap()]);
    }

    #[test]
    fn empty_user_needs_no_calls() {
        let store = MemoryStore::new(Arc::new(HashingEmbedder::default()));
        let (backend, llm) = gateway(vec![]);
        let build = UserProfiler::new().build_profile(&store, "nobody", &llm);
        assert_eq!(build.llm_calls, 0);
        assert_eq!(backend.call_count(), 0);
        assert!(build.profile.is_empty());
    }

    #[test]
    fn failed_day_is_marked_stale_and_retried() {
        let store = MemoryStore::new(Arc::new(HashingEmbedder::default()));
        store.add_at("u", "I'm a Raptors fan", day(1, 9)).unwrap();
        store.add_at("u", "alarm at 6", day(2, 22)).unwrap();
        let only_day_one = vec![rules()[0].clone(), rules()[2].clone()];
        let (_, llm) = gateway(only_day_one);
        let profiler = UserProfiler::new();
        let build = profiler.build_profile(&store, "u", &llm);
        assert_eq!(build.profile.stale_days.len(), 1);
        assert_eq!(build.profile.daily_summaries.len(), 1);
        assert!(!build.profile.global_summary.is_empty());

        let (_, llm) = gateway(rules());
        let build = profiler.build_profile(&store, "u", &llm);
        assert!(build.profile.stale_days.is_empty());
        assert_eq!(build.llm_calls, 2);
    }

    #[test]
    fn cache_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profiles.json");
        let store = MemoryStore::new(Arc::new(HashingEmbedder::default()));
        store.add_at("u", "I'm a Raptors fan", day(1, 9)).unwrap();
        let (_, llm) = gateway(rules());
        let profiler = UserProfiler::with_cache_file(&path).unwrap();
        profiler.build_profile(&store, "u", &llm);
        let reloaded = UserProfiler::with_cache_file(&path).unwrap();
        assert_eq!(reloaded.profile("u").global_summary, "basketball fan who wakes early");
    }
}
