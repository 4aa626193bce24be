//! Persistent commands: condition language, registered conditions and
//! edge-triggered polling.

mod dsl;
mod tools;
mod triggers;

pub use dsl::{
    eval_condition, parse_condition, AttrSource, CmpOp, Condition, EvalError, Literal, Operand, ParseError,
};
pub use tools::{CodeExecuteTool, ConditionPollingTool};
pub use triggers::{
    FiredTrigger, Monitor, MonitorError, RegisteredCondition, TickReport, TriState, TriggerRegistration,
};
