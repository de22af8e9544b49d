//! Append-only event log and replay.
//!
//! Line 1 is `{"genesis": ...}`; each later line is one applied command
//! `{"seq", "tick", "op", "args", "result"}` in canonical JSON. Replaying
//! re-applies every command to the genesis state and requires each result to
//! match the recorded one exactly.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::{Command, Effect, Engine, ProtocolConfig, ProtocolError};
use crate::canonical::to_canonical_json;
use crate::offchain::FaultModel;
use crate::structure::TokenizedDataStructure;
use crate::units::Tick;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Genesis {
    pub structure: TokenizedDataStructure,
    pub config: ProtocolConfig,
    pub fault: FaultModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub tick: Tick,
    pub command: Command,
    /// `{"ok": effect}` or `{"error": message}`.
    pub result: Value,
}

impl Record {
    pub(crate) fn new(
        tick: Tick,
        command: Command,
        result: &Result<Effect, ProtocolError>,
    ) -> Self {
        Self {
            tick,
            command,
            result: result_value(result),
        }
    }
}

fn result_value(result: &Result<Effect, ProtocolError>) -> Value {
    let mut m = Map::new();
    match result {
        Ok(effect) => m.insert(
            "ok".into(),
            serde_json::to_value(effect).expect("effects serialize"),
        ),
        Err(e) => m.insert("error".into(), Value::String(e.to_string())),
    };
    Value::Object(m)
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("event log is empty")]
    Empty,
    #[error("genesis state rejected: {0}")]
    Genesis(ProtocolError),
    #[error("record {seq}: expected sequence number {expected}")]
    Sequence { seq: u64, expected: u64 },
    #[error("record {seq}: recorded tick {recorded}, engine at {actual}")]
    Tick {
        seq: u64,
        recorded: Tick,
        actual: Tick,
    },
    #[error("record {seq}: result diverged\n  recorded: {recorded}\n  replayed: {replayed}")]
    Divergence {
        seq: u64,
        recorded: String,
        replayed: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub genesis: Genesis,
    pub records: Vec<Record>,
}

impl EventLog {
    pub fn new(genesis: Genesis) -> Self {
        Self {
            genesis,
            records: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, record: Record) {
        self.records.push(record);
    }

    /// One canonical JSON document per line, newline terminated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut head = Map::new();
        head.insert(
            "genesis".into(),
            serde_json::to_value(&self.genesis).expect("genesis serializes"),
        );
        out.push_str(&to_canonical_json(&Value::Object(head)).expect("json"));
        out.push('\n');
        for (seq, r) in self.records.iter().enumerate() {
            let mut line = match serde_json::to_value(&r.command).expect("commands serialize") {
                Value::Object(m) => m,
                _ => unreachable!("commands serialize as objects"),
            };
            line.insert("seq".into(), Value::from(seq as u64));
            line.insert("tick".into(), Value::from(r.tick));
            line.insert("result".into(), r.result.clone());
            out.push_str(&to_canonical_json(&Value::Object(line)).expect("json"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ReplayError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(ReplayError::Empty)?;
        let parse_err = |line: usize, e: &dyn std::fmt::Display| ReplayError::Parse {
            line: line + 1,
            message: e.to_string(),
        };
        let mut head: Map<String, Value> =
            serde_json::from_str(first).map_err(|e| parse_err(0, &e))?;
        let genesis = head
            .remove("genesis")
            .ok_or_else(|| parse_err(0, &"missing genesis"))?;
        let genesis: Genesis = serde_json::from_value(genesis).map_err(|e| parse_err(0, &e))?;
        let mut records = Vec::new();
        for (i, line) in lines {
            let mut m: Map<String, Value> =
                serde_json::from_str(line).map_err(|e| parse_err(i, &e))?;
            let mut take_u64 = |key: &str| {
                m.remove(key)
                    .and_then(|v| v.as_u64())
                    .ok_or_else(|| parse_err(i, &format!("missing or invalid {key}")))
            };
            let seq = take_u64("seq")?;
            let tick = take_u64("tick")?;
            if seq != records.len() as u64 {
                return Err(ReplayError::Sequence {
                    seq,
                    expected: records.len() as u64,
                });
            }
            let result = m
                .remove("result")
                .ok_or_else(|| parse_err(i, &"missing result"))?;
            let command: Command =
                serde_json::from_value(Value::Object(m)).map_err(|e| parse_err(i, &e))?;
            records.push(Record {
                tick,
                command,
                result,
            });
        }
        Ok(Self { genesis, records })
    }

    /// Rebuilds the engine, checking every recorded tick and result.
    pub fn replay(&self) -> Result<Engine, ReplayError> {
        let g = &self.genesis;
        let mut engine = Engine::recording(g.structure.clone(), g.config.clone(), g.fault)
            .map_err(ReplayError::Genesis)?;
        for (seq, r) in self.records.iter().enumerate() {
            let seq = seq as u64;
            if r.tick != engine.now() {
                return Err(ReplayError::Tick {
                    seq,
                    recorded: r.tick,
                    actual: engine.now(),
                });
            }
            let replayed = result_value(&engine.apply(r.command.clone()));
            if replayed != r.result {
                return Err(ReplayError::Divergence {
                    seq,
                    recorded: to_canonical_json(&r.result).expect("json"),
                    replayed: to_canonical_json(&replayed).expect("json"),
                });
            }
        }
        Ok(engine)
    }
}
