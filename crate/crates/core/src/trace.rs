//! Run traces and their JSON-lines form.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Digest, PlayerId, Value};
use crate::strategies::Exposure;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("trace is missing its {0} record")]
    Missing(&'static str),
    #[error("line {0}: record out of order")]
    OutOfOrder(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub scenario_digest: Digest,
    pub seed: u64,
    pub n: usize,
    pub delta: u64,
    pub fairness_window: u64,
    pub horizon: u64,
    /// The scenario that produced the run, as JSON.
    pub scenario: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub digest: Digest,
    pub sent_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub step: u64,
    pub chosen: PlayerId,
    /// Live players before the move.
    pub live: Vec<PlayerId>,
    pub delivered: Vec<Delivery>,
    pub emitted: Vec<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEnd {
    pub steps: u64,
    /// Decision of every player, by index.
    pub decisions: Vec<Option<Value>>,
    pub crashed: BTreeSet<PlayerId>,
    pub deviating: BTreeSet<PlayerId>,
    pub exposures: Vec<Exposure>,
    /// Written as `[[holder, [accused, ...]], ...]`.
    #[serde(with = "pairs")]
    pub blacklists: BTreeMap<PlayerId, BTreeSet<PlayerId>>,
    /// Messages to live players left undelivered past their deadline.
    pub overdue: usize,
}

mod pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<K: Serialize, V: Serialize, S: Serializer>(m: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter())
    }

    pub fn deserialize<'de, K, V, D>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        Vec::<(K, V)>::deserialize(d).map(|v| v.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
    pub end: TraceEnd,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header(TraceHeader),
    Move(TraceEvent),
    End(TraceEnd),
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum RecordRef<'a> {
    Header(&'a TraceHeader),
    Move(&'a TraceEvent),
    End(&'a TraceEnd),
}

/// Where two traces first differ.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Divergence {
    /// Step of the first differing move; `None` for header or end mismatches.
    pub step: Option<u64>,
    pub what: String,
}

impl RunTrace {
    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut line = |r: RecordRef<'_>| -> std::io::Result<()> {
            serde_json::to_writer(&mut w, &r)?;
            w.write_all(b"\n")
        };
        line(RecordRef::Header(&self.header))?;
        for e in &self.events {
            line(RecordRef::Move(e))?;
        }
        line(RecordRef::End(&self.end))
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self, TraceError> {
        let mut header = None;
        let mut events = Vec::new();
        let mut end = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record =
                serde_json::from_str(&line).map_err(|source| TraceError::Parse { line: i + 1, source })?;
            match rec {
                Record::Header(h) if header.is_none() => header = Some(h),
                Record::Move(e) if header.is_some() && end.is_none() => events.push(e),
                Record::End(e) if header.is_some() && end.is_none() => end = Some(e),
                _ => return Err(TraceError::OutOfOrder(i + 1)),
            }
        }
        Ok(RunTrace {
            header: header.ok_or(TraceError::Missing("header"))?,
            events,
            end: end.ok_or(TraceError::Missing("end"))?,
        })
    }

    pub fn from_jsonl(s: &str) -> Result<Self, TraceError> {
        Self::read_jsonl(s.as_bytes())
    }

    /// Digest of the whole trace, used as a witness id.
    /// Digest of the JSON-lines form with state digests removed, so a run
    /// hashes the same whether or not it recorded states.
    pub fn digest(&self) -> Digest {
        let mut bare = self.clone();
        for e in &mut bare.events {
            e.state = None;
        }
        Digest::of(bare.to_jsonl().as_bytes())
    }
}

/// First point at which `actual` departs from `expected`.
pub fn first_divergence(expected: &RunTrace, actual: &RunTrace) -> Option<Divergence> {
    if expected.header != actual.header {
        return Some(Divergence {
            step: Some(0),
            what: "header differs".into(),
        });
    }
    for (i, (e, a)) in expected.events.iter().zip(&actual.events).enumerate() {
        if e != a {
            let what = if e.chosen != a.chosen {
                format!("chosen {} vs {}", e.chosen, a.chosen)
            } else if e.delivered != a.delivered {
                "delivered messages differ".to_string()
            } else if e.emitted != a.emitted {
                "emitted messages differ".to_string()
            } else if e.state != a.state {
                "state digest differs".to_string()
            } else {
                "move record differs".to_string()
            };
            return Some(Divergence {
                step: Some(i as u64),
                what,
            });
        }
    }
    if expected.events.len() != actual.events.len() {
        let step = expected.events.len().min(actual.events.len()) as u64;
        return Some(Divergence {
            step: Some(step),
            what: format!("{} moves vs {}", expected.events.len(), actual.events.len()),
        });
    }
    if expected.end != actual.end {
        return Some(Divergence {
            step: None,
            what: "end record differs".into(),
        });
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunTrace {
        RunTrace {
            header: TraceHeader {
                scenario_digest: Digest::of(b"s"),
                seed: 1,
                n: 2,
                delta: 8,
                fairness_window: 4,
                horizon: 10,
                scenario: serde_json::json!({"n": 2}),
            },
            events: vec![TraceEvent {
                step: 0,
                chosen: PlayerId(0),
                live: vec![PlayerId(0), PlayerId(1)],
                delivered: vec![],
                emitted: vec![Digest::of(b"m")],
                state: Some(Digest::of(b"st")),
            }],
            end: TraceEnd {
                steps: 1,
                decisions: vec![None, Some(3)],
                crashed: BTreeSet::new(),
                deviating: BTreeSet::new(),
                exposures: vec![],
                blacklists: BTreeMap::from([(PlayerId(1), BTreeSet::from([PlayerId(0)]))]),
                overdue: 0,
            },
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let t = sample();
        let s = t.to_jsonl();
        assert_eq!(s.lines().count(), 3);
        assert!(s.lines().next().unwrap().contains(r#""record":"header""#));
        assert_eq!(RunTrace::from_jsonl(&s).unwrap(), t);
    }

    #[test]
    fn digest_ignores_states() {
        let t = sample();
        let mut bare = t.clone();
        bare.events[0].state = None;
        assert_ne!(t.to_jsonl(), bare.to_jsonl());
        assert_eq!(t.digest(), bare.digest());
        bare.events[0].chosen = PlayerId(1);
        assert_ne!(t.digest(), bare.digest());
    }

    #[test]
    fn missing_end_is_an_error() {
        let s = sample().to_jsonl();
        let cut: String = s.lines().take(2).map(|l| format!("{l}\n")).collect();
        assert!(matches!(RunTrace::from_jsonl(&cut), Err(TraceError::Missing("end"))));
    }

    #[test]
    fn divergence_names_step() {
        let a = sample();
        let mut b = a.clone();
        assert_eq!(first_divergence(&a, &b), None);
        b.events[0].state = Some(Digest::of(b"other"));
        assert_eq!(first_divergence(&a, &b).unwrap().step, Some(0));
    }
}
