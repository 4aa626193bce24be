//! Device-interaction sub-tools.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::{Tool, ToolContext, ToolError};
use crate::embedding::{cosine_similarity, Embedder, EmbeddingVector};
use crate::fixtures::{read_json, FixtureError};
use crate::hub::{DeviceHub, DeviceSummary};
use crate::personalization::fill_template;

pub const PLANNER_TEMPLATE: &str = "You plan how to carry out a smart home command using the devices below.
Each device lists its components and the capabilities of each component.

Devices:
{devices}

Command: {command}

Break the command into steps. Reply with only a JSON array. Each element must have the form
{\"device_ids\": [\"<device id>\", ...], \"capabilities\": [\"<capability id>\", ...], \"description\": \"<what to do in this step>\"}
If you cannot tell which device the command refers to, list every candidate device id and make the first step a disambiguation step.

Plan:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub device_ids: Vec<String>,
    pub capabilities: Vec<String>,
    pub description: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PlanShape {
    Steps(Vec<PlanStep>),
    Wrapped { steps: Vec<PlanStep> },
}

/// Extracts the JSON plan from a planner completion.
pub fn parse_plan(text: &str) -> Result<Vec<PlanStep>, String> {
    let start = text.find(['[', '{']).ok_or("no JSON plan found in the planner output")?;
    let end = text.rfind([']', '}']).filter(|e| *e >= start).ok_or("unterminated JSON plan")?;
    let shape: PlanShape = serde_json::from_str(&text[start..=end])
        .map_err(|e| format!("the plan is not a JSON list of steps: {e}"))?;
    let steps = match shape {
        PlanShape::Steps(s) | PlanShape::Wrapped { steps: s } => s,
    };
    if steps.is_empty() {
        return Err("the plan has no steps".into());
    }
    for (i, s) in steps.iter().enumerate() {
        if s.device_ids.iter().all(|d| d.trim().is_empty()) || s.capabilities.iter().all(|c| c.trim().is_empty()) {
            return Err(format!("step {} must name at least one device id and one capability", i + 1));
        }
    }
    Ok(steps)
}

pub fn render_plan(steps: &[PlanStep]) -> String {
    steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            format!(
                "{}. devices: {}; capabilities: {}; {}",
                i + 1,
                s.device_ids.join(", "),
                s.capabilities.join(", "),
                s.description
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_device_summaries(devices: &[DeviceSummary]) -> String {
    devices
        .iter()
        .map(|d| {
            let comps = d
                .components
                .iter()
                .map(|c| {
                    let caps = c
                        .capabilities
                        .iter()
                        .map(|cap| format!("{} ({})", cap.id, cap.short_description))
                        .collect::<Vec<_>>()
                        .join(", ");
                    format!("  {}: {}", c.id, caps)
                })
                .collect::<Vec<_>>()
                .join("\n");
            format!("- {} \"{}\" in {}\n{}", d.device_id, d.label, d.room, comps)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub struct PlannerTool {
    pub hub: Arc<DeviceHub>,
    pub template: Option<String>,
}

impl Tool for PlannerTool {
    fn call(&self, input: &str, ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let summaries = self.hub.list_devices();
        if summaries.is_empty() {
            return Err(ToolError::failed("error: no devices are available to plan with"));
        }
        if input.trim().is_empty() {
            return Err(ToolError::failed("error: the command to plan must not be empty"));
        }
        let prompt = fill_template(
            self.template.as_deref().unwrap_or(PLANNER_TEMPLATE),
            &[("devices", &render_device_summaries(&summaries)), ("command", input.trim())],
        );
        let response = ctx.complete(&prompt)?;
        match parse_plan(&response.text) {
            Ok(steps) => Ok(format!("Plan:\n{}", render_plan(&steps))),
            Err(e) => Err(ToolError::failed(format!("planning failed: {e}"))),
        }
    }
}

/// Documentation for each requested capability, one JSON document per line
/// group; unknown ids are reported inline.
pub fn retrieve_docs(hub: &DeviceHub, capability_ids: &[String]) -> String {
    capability_ids
        .iter()
        .map(|id| match hub.capability_doc(id.trim()) {
            Ok(doc) => doc.to_json(),
            Err(e) => e.message,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub struct DocsTool {
    pub hub: Arc<DeviceHub>,
}

impl Tool for DocsTool {
    fn call(&self, input: &str, _ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let ids: Vec<String> = serde_json::from_str(input.trim()).map_err(|e| {
            ToolError::failed(format!(
                "error: invalid input ({e}); expected a JSON list of capability ids such as [\"switch\", \"tvChannel\"]"
            ))
        })?;
        Ok(retrieve_docs(&self.hub, &ids))
    }
}

fn default_component() -> String {
    "main".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributeRequest {
    device_id: String,
    #[serde(default = "default_component")]
    component: String,
    capability: String,
    attribute: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CommandRequest {
    device_id: String,
    #[serde(default = "default_component")]
    component: String,
    capability: String,
    command: String,
    #[serde(default)]
    arguments: Vec<Value>,
}

fn parse_request<T: serde::de::DeserializeOwned>(input: &str, expected: &str) -> Result<T, ToolError> {
    serde_json::from_str(input.trim())
        .map_err(|e| ToolError::failed(format!("error: invalid input ({e}); expected {expected}")))
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub struct AttributeTool {
    pub hub: Arc<DeviceHub>,
}

impl Tool for AttributeTool {
    fn call(&self, input: &str, _ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let req: AttributeRequest = parse_request(
            input,
            "{\"device_id\", \"component\", \"capability\", \"attribute\"}",
        )?;
        self.hub
            .read_attribute(&req.device_id, &req.component, &req.capability, &req.attribute)
            .map(|v| value_text(&v))
            .map_err(|e| ToolError::Failed(e.message))
    }
}

pub struct CommandTool {
    pub hub: Arc<DeviceHub>,
}

impl Tool for CommandTool {
    fn call(&self, input: &str, _ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let req: CommandRequest = parse_request(
            input,
            "{\"device_id\", \"component\", \"capability\", \"command\", \"arguments\": [...]}",
        )?;
        self.hub
            .execute_command(&req.device_id, &req.component, &req.capability, &req.command, &req.arguments)
            .map_err(|e| ToolError::Failed(e.message))?;
        let args = req.arguments.iter().map(Value::to_string).collect::<Vec<_>>().join(", ");
        Ok(format!(
            "ok: executed {}({args}) on {}/{}/{}",
            req.command, req.device_id, req.component, req.capability
        ))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageEntry {
    Vector { vector: EmbeddingVector },
    Caption { caption: String },
}

/// Per-device embeddings standing in for device photos.
#[derive(Debug, Clone, Default)]
pub struct DeviceImageIndex {
    vectors: BTreeMap<String, EmbeddingVector>,
    captions: BTreeMap<String, String>,
}

impl DeviceImageIndex {
    pub fn from_entries(entries: BTreeMap<String, ImageEntry>, embedder: &dyn Embedder) -> Result<Self, FixtureError> {
        let mut index = Self::default();
        for (id, e) in entries {
            let v = match e {
                ImageEntry::Vector { vector } => vector,
                ImageEntry::Caption { caption } => {
                    let v = embedder.embed(&caption);
                    index.captions.insert(id.clone(), caption);
                    v
                }
            };
            if v.dimension() != embedder.dimension() {
                return Err(FixtureError::Invalid(format!(
                    "image embedding for '{id}' has dimension {}, expected {}",
                    v.dimension(),
                    embedder.dimension()
                )));
            }
            index.vectors.insert(id, v);
        }
        Ok(index)
    }

    pub fn load(path: impl AsRef<Path>, embedder: &dyn Embedder) -> Result<Self, FixtureError> {
        let entries: BTreeMap<String, ImageEntry> = read_json(path)?;
        Self::from_entries(entries, embedder)
    }

    /// Fails unless every device with an `image_ref` has an embedding.
    pub fn check_covers(&self, hub: &DeviceHub) -> Result<(), FixtureError> {
        for d in hub.devices() {
            if d.image_ref.is_some() && !self.vectors.contains_key(&d.device_id) {
                return Err(FixtureError::Invalid(format!(
                    "device '{}' has an image but no entry in the image index",
                    d.device_id
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, device_id: &str) -> Option<&EmbeddingVector> {
        self.vectors.get(device_id)
    }

    pub fn insert(&mut self, device_id: impl Into<String>, v: EmbeddingVector) {
        self.vectors.insert(device_id.into(), v);
    }

    pub fn caption(&self, device_id: &str) -> Option<&str> {
        self.captions.get(device_id).map(String::as_str)
    }

    pub fn device_ids(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disambiguation {
    pub best: String,
    pub scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub skipped: Vec<String>,
}

/// Picks the candidate whose image embedding is most similar to the
/// description. Ties go to the lexicographically smallest device id.
pub fn disambiguate(
    index: &DeviceImageIndex,
    query: &EmbeddingVector,
    candidates: &[String],
) -> Result<Disambiguation, String> {
    if candidates.is_empty() {
        return Err("no candidate devices given".into());
    }
    let mut scores = BTreeMap::new();
    let mut skipped = Vec::new();
    for id in candidates {
        match index.get(id) {
            Some(v) => {
                scores.insert(id.clone(), cosine_similarity(query, v));
            }
            None => skipped.push(id.clone()),
        }
    }
    // BTreeMap iterates in id order, so strict > keeps the smallest id on ties.
    let mut best: Option<(&String, f64)> = None;
    for (id, s) in &scores {
        if best.is_none_or(|(_, b)| *s > b) {
            best = Some((id, *s));
        }
    }
    let best = best
        .map(|(id, _)| id.clone())
        .ok_or_else(|| format!("none of the candidates have an image embedding: {}", skipped.join(", ")))?;
    Ok(Disambiguation { best, scores, skipped })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DisambiguationRequest {
    description: String,
    #[serde(default)]
    candidate_ids: Option<Vec<String>>,
}

pub struct DisambiguationTool {
    pub hub: Arc<DeviceHub>,
    pub index: Arc<DeviceImageIndex>,
    pub embedder: Arc<dyn Embedder>,
}

impl Tool for DisambiguationTool {
    fn call(&self, input: &str, _ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let trimmed = input.trim();
        let req = if trimmed.starts_with('{') {
            parse_request::<DisambiguationRequest>(trimmed, "{\"description\", \"candidate_ids\": [optional list]}")?
        } else {
            DisambiguationRequest {
                description: trimmed.to_string(),
                candidate_ids: None,
            }
        };
        if req.description.trim().is_empty() {
            return Err(ToolError::failed("error: the description must not be empty"));
        }
        let candidates = req
            .candidate_ids
            .unwrap_or_else(|| self.hub.devices().iter().map(|d| d.device_id.clone()).collect());
        let unknown: Vec<&String> = candidates.iter().filter(|c| self.hub.device(c).is_none()).collect();
        if let Some(u) = unknown.first() {
            return Err(ToolError::Failed(format!("unknown device '{u}'")));
        }
        let query = self.embedder.embed(&req.description);
        let result = disambiguate(&self.index, &query, &candidates)
            .map_err(|e| ToolError::failed(format!("error: {e}")))?;
        Ok(serde_json::to_string(&result).expect("disambiguation result serializes"))
    }
}
