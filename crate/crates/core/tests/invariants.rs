use std::sync::Arc;

use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use sage_core::agent::{parse_llm_output, render_step, ParsedStep};
use sage_core::embedding::{EmbeddingVector, HashingEmbedder};
use sage_core::hub::{AttrPath, DeviceState};
use sage_core::monitoring::{eval_condition, parse_condition, CmpOp, Condition, Literal, Monitor, Operand};
use sage_core::personalization::MemoryStore;
use serde_json::json;

fn level() -> AttrPath {
    "light-1/main/switchLevel/level".parse().unwrap()
}

fn compare() -> impl Strategy<Value = Condition> {
    (0usize..6, 0.0f64..100.0, any::<bool>()).prop_map(|(op, n, attr_left)| {
        let n = n.round();
        let (lhs, rhs) = (Operand::Attr(level()), Operand::Literal(Literal::Num(n)));
        let (lhs, rhs) = if attr_left { (lhs, rhs) } else { (rhs, lhs) };
        Condition::Compare {
            lhs,
            op: CmpOp::ALL[op],
            rhs,
        }
    })
}

fn condition() -> impl Strategy<Value = Condition> {
    compare().prop_recursive(4, 32, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 2..4).prop_map(Condition::Or),
            prop::collection::vec(inner.clone(), 2..4).prop_map(Condition::And),
            inner.prop_map(|c| Condition::Not(Box::new(c))),
        ]
    })
}

fn state(v: f64) -> DeviceState {
    let mut s = DeviceState::new();
    s.insert(level(), json!(v));
    s
}

proptest! {
    #[test]
    fn printed_conditions_parse_back(c in condition()) {
        prop_assert_eq!(parse_condition(&c.to_string()).unwrap(), c);
    }

    #[test]
    fn negation_flips_the_value(c in condition(), v in 0.0f64..100.0) {
        let s = state(v.round());
        let not = Condition::Not(Box::new(c.clone()));
        prop_assert_eq!(eval_condition(&not, &s).unwrap(), !eval_condition(&c, &s).unwrap());
    }

    #[test]
    fn or_and_follow_de_morgan(a in condition(), b in condition(), v in 0.0f64..100.0) {
        let s = state(v.round());
        let neg = |c: &Condition| Condition::Not(Box::new(c.clone()));
        let lhs = neg(&Condition::Or(vec![a.clone(), b.clone()]));
        let rhs = Condition::And(vec![neg(&a), neg(&b)]);
        prop_assert_eq!(eval_condition(&lhs, &s).unwrap(), eval_condition(&rhs, &s).unwrap());
    }

    #[test]
    fn rendered_steps_parse_back(tool in "[a-z][a-z ]{0,15}[a-z]", input in "[a-z0-9{}\":, ]{1,30}", thought in "[a-z ,.]{0,40}") {
        let input = input.trim().to_string();
        let thought = thought.trim().to_string();
        prop_assume!(!input.is_empty());
        prop_assume!(!["tau", "final answer", "finish"].contains(&tool.as_str()));
        let step = ParsedStep::Continue { tool, input, thought };
        prop_assert_eq!(parse_llm_output(&render_step(&step)).unwrap(), step);
    }

    #[test]
    fn smaller_k_is_a_prefix(vectors in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..60),
                             query in prop::collection::vec(-1.0f64..1.0, 4), k in 1usize..20) {
        let store = MemoryStore::new(Arc::new(HashingEmbedder::new(4, 0)));
        for (i, v) in vectors.iter().enumerate() {
            let Ok(e) = EmbeddingVector::new(v.clone()) else { continue };
            store.add_embedded("u", "m", Utc.timestamp_opt(i as i64, 0).unwrap(), e);
        }
        let Ok(q) = EmbeddingVector::new(query) else { return Ok(()) };
        let small = store.retrieve_by_vector("u", &q, k).unwrap();
        let large = store.retrieve_by_vector("u", &q, k + 1).unwrap();
        prop_assert_eq!(small.len(), k.min(store.len()));
        prop_assert!(small.windows(2).all(|w| w[0].score >= w[1].score));
        prop_assert_eq!(&large[..small.len()], &small[..]);
    }

    #[test]
    fn fires_never_exceed_true_ticks(values in prop::collection::vec(any::<bool>(), 0..200)) {
        let m = Monitor::new(None);
        m.register_condition("flag", "device(s-1, main, contactSensor, open) == true").unwrap();
        let t = m.register_trigger("flag", "act", "u").unwrap();
        let path: AttrPath = "s-1/main/contactSensor/open".parse().unwrap();
        let mut s = DeviceState::new();
        for v in &values {
            s.insert(path.clone(), json!(v));
            let fired = m.poll_tick(&s).fired.len();
            prop_assert!(fired <= usize::from(*v));
        }
        let trues = values.iter().filter(|v| **v).count() as u64;
        let fires = m.trigger(&t.trigger_id).unwrap().fire_count;
        prop_assert!(fires <= trues);
        prop_assert_eq!(fires == 0, trues == 0);
    }
}
