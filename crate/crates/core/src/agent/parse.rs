//! ReAct-style output parsing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ParsedStep {
    Continue {
        tool: String,
        input: String,
        thought: String,
    },
    Terminate {
        output: String,
        thought: String,
    },
}

impl ParsedStep {
    pub fn thought(&self) -> &str {
        match self {
            ParsedStep::Continue { thought, .. } | ParsedStep::Terminate { thought, .. } => thought,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
#[error("{reason}")]
pub struct FormatError {
    pub reason: String,
}

impl FormatError {
    pub fn new(reason: impl Into<String>) -> Self {
        Self {
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Key {
    Thought,
    Action,
    ActionInput,
    FinalAnswer,
    Observation,
}

// Longer keys first so "action input:" wins over "action:".
const KEYS: &[(&str, Key)] = &[
    ("action input:", Key::ActionInput),
    ("final answer:", Key::FinalAnswer),
    ("observation:", Key::Observation),
    ("thought:", Key::Thought),
    ("action:", Key::Action),
];

/// Spellings of the terminate action accepted in an `Action:` line.
const TERMINATE_ACTIONS: &[&str] = &["τ", "tau", "final answer", "finish"];

struct Section {
    key: Key,
    /// Byte offset where the content after the key begins.
    content_start: usize,
    /// Byte offset where the content ends (next key line or end of text).
    content_end: usize,
}

fn key_at_line_start(line: &str) -> Option<(Key, usize)> {
    let trimmed = line.trim_start();
    let indent = line.len() - trimmed.len();
    for (prefix, key) in KEYS {
        let n = prefix.len();
        if trimmed.len() >= n
            && trimmed.is_char_boundary(n)
            && trimmed[..n].eq_ignore_ascii_case(prefix)
        {
            return Some((*key, indent + n));
        }
    }
    None
}

fn sections(text: &str) -> Vec<Section> {
    let mut out: Vec<Section> = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if let Some((key, len)) = key_at_line_start(line) {
            if let Some(prev) = out.last_mut() {
                prev.content_end = offset;
            }
            out.push(Section {
                key,
                content_start: offset + len,
                content_end: text.len(),
            });
        }
        offset += line.len();
    }
    out
}

/// Parses one LLM completion into a decision.
///
/// Keys are matched case-insensitively at line starts; each section runs to
/// the next key line. `Final Answer:` takes the rest of the text. When both
/// an action and a final answer are present, whichever appears first wins.
pub fn parse_llm_output(text: &str) -> Result<ParsedStep, FormatError> {
    let secs = sections(text);
    let content = |s: &Section| text[s.content_start..s.content_end].trim().to_string();
    let thought = secs
        .iter()
        .find(|s| s.key == Key::Thought)
        .map(content)
        .unwrap_or_default();
    let action_idx = secs.iter().position(|s| s.key == Key::Action);
    let final_idx = secs.iter().position(|s| s.key == Key::FinalAnswer);

    let terminate = |idx: usize| ParsedStep::Terminate {
        output: text[secs[idx].content_start..].trim().to_string(),
        thought: thought.clone(),
    };

    match (action_idx, final_idx) {
        (None, None) => Err(FormatError::new(
            "expected 'Action:' followed by 'Action Input:', or 'Final Answer:'",
        )),
        (None, Some(f)) => Ok(terminate(f)),
        (Some(a), f) if f.is_some_and(|f| f < a) => Ok(terminate(f.unwrap())),
        (Some(a), f) => {
            let raw = content(&secs[a]);
            let tool = raw.lines().next().unwrap_or("").trim().to_string();
            let input = secs[a + 1..]
                .iter()
                .find(|s| s.key == Key::ActionInput)
                .map(content);
            if tool.is_empty() {
                return Err(FormatError::new("'Action:' does not name a tool"));
            }
            match input {
                Some(input) if TERMINATE_ACTIONS.iter().any(|t| tool.eq_ignore_ascii_case(t)) => {
                    Ok(ParsedStep::Terminate { output: input, thought })
                }
                Some(input) => Ok(ParsedStep::Continue { tool, input, thought }),
                None => match f {
                    Some(f) => Ok(terminate(f)),
                    None => Err(FormatError::new(format!(
                        "'Action: {tool}' is not followed by 'Action Input:'"
                    ))),
                },
            }
        }
    }
}

/// Renders a step back into the template the parser accepts.
pub fn render_step(step: &ParsedStep) -> String {
    let mut out = String::new();
    if !step.thought().is_empty() {
        out.push_str("Thought: ");
        out.push_str(step.thought());
        out.push('\n');
    }
    match step {
        ParsedStep::Continue { tool, input, .. } => {
            out.push_str("Action: ");
            out.push_str(tool);
            out.push_str("\nAction Input: ");
            out.push_str(input);
        }
        ParsedStep::Terminate { output, .. } => {
            out.push_str("Final Answer: ");
            out.push_str(output);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_the_worked_example_answer() {
        let text = "Thought: I now know the UUID of fancy light. Now I need to use light on tool to turn it on.\n\
                    Action: turn on tool\n\
                    Action input: 12e4df...bc4\n";
        assert_eq!(
            parse_llm_output(text).unwrap(),
            ParsedStep::Continue {
                tool: "turn on tool".into(),
                input: "12e4df...bc4".into(),
                thought: "I now know the UUID of fancy light. Now I need to use light on tool to turn it on.".into(),
            }
        );
    }

    #[test]
    fn parses_tool_call_with_lowercase_input_key() {
        let step = parse_llm_output("Thought: need uuid\nAction: light ID tool\nAction input: fancy light").unwrap();
        assert_eq!(
            step,
            ParsedStep::Continue {
                tool: "light ID tool".into(),
                input: "fancy light".into(),
                thought: "need uuid".into()
            }
        );
    }

    #[test]
    fn final_answer_only() {
        assert_eq!(
            parse_llm_output("Final Answer: done").unwrap(),
            ParsedStep::Terminate {
                output: "done".into(),
                thought: String::new()
            }
        );
    }

    #[test]
    fn prose_without_keys_is_a_format_error() {
        assert!(parse_llm_output("I think we should chat about lights").is_err());
        assert!(parse_llm_output("").is_err());
    }

    #[test]
    fn first_of_action_and_final_answer_wins() {
        let t = parse_llm_output("Final Answer: stop\nAction: x\nAction Input: y").unwrap();
        assert!(matches!(t, ParsedStep::Terminate { ref output, .. } if output.starts_with("stop")));
        let c = parse_llm_output("Action: x\nAction Input: y\nFinal Answer: stop").unwrap();
        assert_eq!(
            c,
            ParsedStep::Continue {
                tool: "x".into(),
                input: "y".into(),
                thought: String::new()
            }
        );
    }

    #[test]
    fn action_input_spans_lines_until_next_key() {
        let step = parse_llm_output(
            "Thought: t\nAction: device command execution\nAction Input: {\n  \"device_id\": \"tv-1\"\n}\nObservation: made up",
        )
        .unwrap();
        match step {
            ParsedStep::Continue { input, .. } => assert_eq!(input, "{\n  \"device_id\": \"tv-1\"\n}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tau_action_terminates_with_the_input_as_output() {
        assert_eq!(
            parse_llm_output("Thought: done\nAction: τ\nAction input: The light is on.").unwrap(),
            ParsedStep::Terminate {
                output: "The light is on.".into(),
                thought: "done".into()
            }
        );
    }

    #[test]
    fn action_without_input_is_rejected() {
        let e = parse_llm_output("Thought: hmm\nAction: weather").unwrap_err();
        assert!(e.reason.contains("weather"));
        assert!(parse_llm_output("Action:\nAction Input: x").is_err());
    }

    #[test]
    fn keys_are_case_insensitive_and_may_be_indented() {
        let step = parse_llm_output("  THOUGHT: a\n  ACTION: b\n  action INPUT: c").unwrap();
        assert_eq!(
            step,
            ParsedStep::Continue {
                tool: "b".into(),
                input: "c".into(),
                thought: "a".into()
            }
        );
    }

    fn field() -> impl Strategy<Value = String> {
        "[A-Za-z0-9 ,.'\"{}:_-]{0,40}".prop_map(|s| s.trim().to_string())
    }

    fn tool_name() -> impl Strategy<Value = String> {
        "[A-Za-z][A-Za-z0-9 _-]{0,20}"
            .prop_map(|s| s.trim().to_string())
            .prop_filter("not a terminate spelling", |s| {
                !TERMINATE_ACTIONS.iter().any(|t| s.eq_ignore_ascii_case(t))
            })
    }

    proptest! {
        #[test]
        fn parser_never_panics(s in "\\PC{0,200}") {
            let _ = parse_llm_output(&s);
        }

        #[test]
        fn parser_never_panics_on_key_soup(parts in proptest::collection::vec(
            prop_oneof![
                Just("Thought:".to_string()), Just("Action:".to_string()),
                Just("Action Input:".to_string()), Just("Final Answer:".to_string()),
                Just("\n".to_string()), Just("é".to_string()), "\\PC{0,8}"
            ], 0..20)
        ) {
            let _ = parse_llm_output(&parts.concat());
        }

        #[test]
        fn render_then_parse_round_trips(
            thought in field(), tool in tool_name(), input in field(), terminal in any::<bool>()
        ) {
            let step = if terminal {
                ParsedStep::Terminate { output: input, thought }
            } else {
                ParsedStep::Continue { tool, input, thought }
            };
            prop_assert_eq!(parse_llm_output(&render_step(&step)).unwrap(), step);
        }
    }
}
