//! JSONL trace persistence.
//!
//! A trace file is a sequence of single-line JSON records of two kinds:
//! per-step `action` records and per-round `round_eval` records. One episode
//! occupies one contiguous run of lines sharing a task_id; the writer emits
//! all action records in step order followed by all round_eval records in
//! round order. Loading re-derives rounds from the actions and cross-checks
//! them against the embedded round_eval records.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{
    segment_rounds, ActionKind, ActionRecord, ActorId, PerformanceSeries, SatisfactionSeries,
    Trace, TraceError,
};

/// One line of a trace file. Field names and order are part of the on-disk
/// contract; do not reorder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceRecord {
    Action {
        task_id: String,
        step: u64,
        actor: ActorId,
        kind: ActionKind,
        content: String,
        tokens_generated: u64,
        context_tokens: u64,
        output_updated: bool,
    },
    RoundEval {
        task_id: String,
        round: usize,
        performance: f64,
        rating: u8,
        progress: bool,
    },
}

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("episode {task_id}: {source}")]
    Invalid {
        task_id: String,
        #[source]
        source: TraceError,
    },
}

/// Writes episodes as JSONL, one record per line, episodes in input order.
pub fn write_traces<W: Write>(mut w: W, traces: &[Trace]) -> Result<(), JsonlError> {
    for t in traces {
        for a in &t.actions {
            let rec = TraceRecord::Action {
                task_id: t.task_id.clone(),
                step: a.step,
                actor: a.actor,
                kind: a.kind,
                content: a.content.clone(),
                tokens_generated: a.tokens_generated,
                context_tokens: a.context_tokens,
                output_updated: a.output_updated,
            };
            serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        for (i, round) in t.rounds.iter().enumerate() {
            let rec = TraceRecord::RoundEval {
                task_id: t.task_id.clone(),
                round: round.index,
                performance: t.performance[i],
                rating: t.satisfaction[i],
                progress: t.progress[i],
            };
            serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Serializes episodes to an in-memory JSONL buffer.
pub fn traces_to_string(traces: &[Trace]) -> Result<String, JsonlError> {
    let mut buf = Vec::new();
    write_traces(&mut buf, traces)?;
    Ok(String::from_utf8(buf).expect("serde_json emits utf-8"))
}

/// Reads every episode from a JSONL stream, validating each rebuilt trace.
/// Episode boundaries are task_id changes between consecutive records.
pub fn read_traces<R: BufRead>(r: R) -> Result<Vec<Trace>, JsonlError> {
    struct Partial {
        task_id: String,
        first_line: usize,
        actions: Vec<ActionRecord>,
        evals: Vec<(usize, f64, u8, bool)>,
    }

    fn finish(p: Partial) -> Result<Trace, JsonlError> {
        let schema = |message: String| JsonlError::Schema {
            line: p.first_line,
            message,
        };
        let invalid = |source: TraceError| JsonlError::Invalid {
            task_id: p.task_id.clone(),
            source,
        };
        let rounds = segment_rounds(&p.actions).map_err(invalid)?;
        if p.evals.len() != rounds.len() {
            return Err(schema(format!(
                "episode {}: {} round_eval records for {} segmented rounds",
                p.task_id,
                p.evals.len(),
                rounds.len()
            )));
        }
        for (i, &(round, ..)) in p.evals.iter().enumerate() {
            if round != i + 1 {
                return Err(schema(format!(
                    "episode {}: round_eval {} out of order (expected round {})",
                    p.task_id,
                    round,
                    i + 1
                )));
            }
        }
        let performance =
            PerformanceSeries::new(p.evals.iter().map(|e| e.1).collect()).map_err(invalid)?;
        let satisfaction =
            SatisfactionSeries::new(p.evals.iter().map(|e| e.2).collect()).map_err(invalid)?;
        let progress = p.evals.iter().map(|e| e.3).collect();
        let trace = Trace {
            task_id: p.task_id.clone(),
            actions: p.actions,
            rounds,
            performance,
            satisfaction,
            progress,
            final_plan_snapshot: String::new(),
        };
        trace.validate().map_err(invalid)?;
        Ok(trace)
    }

    let mut out = Vec::new();
    let mut current: Option<Partial> = None;
    for (idx, line) in r.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(&line).map_err(|source| JsonlError::Parse {
            line: line_no,
            source,
        })?;
        let task_id = match &rec {
            TraceRecord::Action { task_id, .. } | TraceRecord::RoundEval { task_id, .. } => {
                task_id.clone()
            }
        };
        let boundary = current.as_ref().is_none_or(|p| p.task_id != task_id);
        if boundary {
            if let Some(done) = current.take() {
                out.push(finish(done)?);
            }
            current = Some(Partial {
                task_id,
                first_line: line_no,
                actions: Vec::new(),
                evals: Vec::new(),
            });
        }
        let p = current.as_mut().expect("episode in progress");
        match rec {
            TraceRecord::Action {
                step,
                actor,
                kind,
                content,
                tokens_generated,
                context_tokens,
                output_updated,
                ..
            } => p.actions.push(ActionRecord {
                step,
                actor,
                kind,
                content,
                tokens_generated,
                context_tokens,
                output_updated,
            }),
            TraceRecord::RoundEval {
                round,
                performance,
                rating,
                progress,
                ..
            } => p.evals.push((round, performance, rating, progress)),
        }
    }
    if let Some(done) = current.take() {
        out.push(finish(done)?);
    }
    Ok(out)
}

/// Loads every episode from a trace file on disk.
pub fn read_traces_from_path(path: &std::path::Path) -> Result<Vec<Trace>, JsonlError> {
    let file = std::fs::File::open(path)?;
    read_traces(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::prefill_performance;

    fn sample_trace(task_id: &str) -> Trace {
        let actions = vec![
            ActionRecord::scripted(1, ActorId::Agent, ActionKind::TaskAction, "edit", 12, true),
            ActionRecord::scripted(2, ActorId::Human, ActionKind::Message, "looks good", 20, false),
            ActionRecord::scripted(3, ActorId::Agent, ActionKind::Finish, "", 25, false),
        ];
        let rounds = segment_rounds(&actions).unwrap();
        Trace {
            task_id: task_id.into(),
            actions,
            rounds,
            performance: prefill_performance(&[Some(0.75), None]).unwrap(),
            satisfaction: SatisfactionSeries::new(vec![4, 3]).unwrap(),
            progress: vec![true, false],
            final_plan_snapshot: "PLAN: (empty)".into(),
        }
    }

    #[test]
    fn record_field_names_are_stable() {
        let text = traces_to_string(&[sample_trace("t1")]).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(
            first,
            "{\"type\":\"action\",\"task_id\":\"t1\",\"step\":1,\"actor\":\"agent\",\
             \"kind\":\"task_action\",\"content\":\"edit\",\"tokens_generated\":1,\
             \"context_tokens\":12,\"output_updated\":true}"
        );
        let eval_line = text.lines().nth(3).unwrap();
        assert_eq!(
            eval_line,
            "{\"type\":\"round_eval\",\"task_id\":\"t1\",\"round\":1,\
             \"performance\":0.75,\"rating\":4,\"progress\":true}"
        );
    }

    #[test]
    fn round_trip_preserves_everything_but_snapshot() {
        let original = vec![sample_trace("t1"), sample_trace("t2")];
        let text = traces_to_string(&original).unwrap();
        let loaded = read_traces(text.as_bytes()).unwrap();
        assert_eq!(loaded.len(), 2);
        for (orig, back) in original.iter().zip(&loaded) {
            let mut orig = orig.clone();
            orig.final_plan_snapshot.clear();
            assert_eq!(&orig, back);
        }
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let text = "{\"type\":\"action\",\"task_id\":\"t\"}";
        let err = read_traces(text.as_bytes()).unwrap_err();
        assert!(matches!(err, JsonlError::Parse { line: 1, .. }));
    }

    #[test]
    fn eval_count_mismatch_is_a_schema_error() {
        let mut trace = sample_trace("t1");
        trace.progress.pop();
        trace.satisfaction = SatisfactionSeries::new(vec![4]).unwrap();
        trace.performance = prefill_performance(&[Some(0.75)]).unwrap();
        trace.rounds.pop();
        // Serialize by hand: two rounds of actions but one round_eval.
        let mut text = String::new();
        for a in &trace.actions {
            let rec = TraceRecord::Action {
                task_id: trace.task_id.clone(),
                step: a.step,
                actor: a.actor,
                kind: a.kind,
                content: a.content.clone(),
                tokens_generated: a.tokens_generated,
                context_tokens: a.context_tokens,
                output_updated: a.output_updated,
            };
            text.push_str(&serde_json::to_string(&rec).unwrap());
            text.push('\n');
        }
        text.push_str(
            "{\"type\":\"round_eval\",\"task_id\":\"t1\",\"round\":1,\
             \"performance\":0.75,\"rating\":4,\"progress\":true}\n",
        );
        let err = read_traces(text.as_bytes()).unwrap_err();
        assert!(matches!(err, JsonlError::Schema { .. }));
    }
}
