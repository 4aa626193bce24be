//! Fixture-backed external-information tools.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::agent::{Tool, ToolContext, ToolError};
use crate::embedding::tokenize;
use crate::fixtures::{read_json, FixtureError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TvListing {
    pub program: String,
    pub channel: String,
    pub start_time: DateTime<Utc>,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TvSchedule {
    pub listings: Vec<TvListing>,
}

impl TvSchedule {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        let s: TvSchedule = read_json(path)?;
        if let Some(bad) = s.listings.iter().find(|l| l.channel.trim().is_empty()) {
            return Err(FixtureError::Invalid(format!("listing '{}' has an empty channel", bad.program)));
        }
        Ok(s)
    }

    /// Listings sharing at least one keyword with the query, best matches
    /// first, then by start time.
    pub fn search(&self, query: &str) -> Vec<&TvListing> {
        let keywords: BTreeSet<String> = tokenize(query).into_iter().collect();
        let mut hits: Vec<(usize, &TvListing)> = self
            .listings
            .iter()
            .filter_map(|l| {
                let words: BTreeSet<String> = tokenize(&format!("{} {}", l.program, l.description))
                    .into_iter()
                    .collect();
                let n = keywords.intersection(&words).count();
                (n > 0).then_some((n, l))
            })
            .collect();
        hits.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.start_time.cmp(&b.1.start_time)));
        hits.into_iter().map(|(_, l)| l).collect()
    }
}

pub fn render_listings(listings: &[&TvListing]) -> String {
    if listings.is_empty() {
        return "no listings found".into();
    }
    listings
        .iter()
        .map(|l| {
            format!(
                "{} on channel {} at {}: {}",
                l.program,
                l.channel,
                l.start_time.format("%Y-%m-%d %H:%M UTC"),
                l.description
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub struct TvScheduleTool {
    pub schedule: TvSchedule,
}

impl Tool for TvScheduleTool {
    fn call(&self, input: &str, _ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        Ok(render_listings(&self.schedule.search(input)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Temperature {
    pub value: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherReport {
    pub location: String,
    pub condition: String,
    pub temperature: Temperature,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct WeatherData {
    /// Location used when the query is empty.
    #[serde(default)]
    pub default_location: Option<String>,
    pub reports: BTreeMap<String, WeatherReport>,
}

impl WeatherData {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        read_json(path)
    }

    pub fn lookup(&self, location: &str) -> Result<&WeatherReport, String> {
        let loc = location.trim();
        let key = if loc.is_empty() {
            self.default_location.as_deref().unwrap_or("")
        } else {
            loc
        };
        self.reports
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(key))
            .map(|(_, r)| r)
            .ok_or_else(|| format!("no data for {}", if loc.is_empty() { "the default location" } else { loc }))
    }
}

pub struct WeatherTool {
    pub data: WeatherData,
}

impl Tool for WeatherTool {
    fn call(&self, input: &str, _ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        match self.data.lookup(input) {
            Ok(r) => Ok(format!(
                "{}: {}, {} {}",
                r.location, r.condition, r.temperature.value, r.temperature.unit
            )),
            Err(e) => Ok(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn schedule() -> TvSchedule {
        let at = |h| Utc.with_ymd_and_hms(2024, 3, 1, h, 0, 0).unwrap();
        TvSchedule {
            listings: vec![
                TvListing {
                    program: "Raptors vs. Celtics".into(),
                    channel: "7".into(),
                    start_time: at(19),
                    description: "NBA basketball game".into(),
                },
                TvListing {
                    program: "Evening News".into(),
                    channel: "4".into(),
                    start_time: at(18),
                    description: "Local news and weather".into(),
                },
            ],
        }
    }

    #[test]
    fn finds_the_game() {
        let s = schedule();
        let hits = s.search("Raptors game");
        assert_eq!(hits[0].channel, "7");
        assert_eq!(hits.len(), 1);
        assert_eq!(render_listings(&s.search("cooking show")), "no listings found");
    }

    #[test]
    fn weather_lookup() {
        let mut reports = BTreeMap::new();
        reports.insert(
            "home".to_string(),
            WeatherReport {
                location: "home".into(),
                condition: "sunny".into(),
                temperature: Temperature {
                    value: 21.0,
                    unit: "C".into(),
                },
            },
        );
        let w = WeatherData {
            default_location: Some("home".into()),
            reports,
        };
        assert_eq!(w.lookup("HOME").unwrap().condition, "sunny");
        assert_eq!(w.lookup("").unwrap().location, "home");
        assert_eq!(w.lookup("Paris").unwrap_err(), "no data for Paris");
    }
}
