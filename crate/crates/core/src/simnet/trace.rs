use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Pid, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraceKind {
    Send,
    Deliver,
    Drop,
    Duplicate,
    Crash,
    TimerFire,
    Decide,
    StateNote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detail {
    Envelope {
        id: u64,
        src: Pid,
        dst: Pid,
        sent_at: Tick,
        deliver_at: Tick,
        payload: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    Timer(String),
    Text(String),
}

impl Detail {
    pub fn envelope_id(&self) -> Option<u64> {
        match self {
            Detail::Envelope { id, .. } => Some(*id),
            _ => None,
        }
    }

    pub fn text(&self) -> Option<&str> {
        match self {
            Detail::Text(t) | Detail::Timer(t) => Some(t),
            Detail::Envelope { .. } => None,
        }
    }
}

/// One simulator event. Field order is the serialized order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: Tick,
    pub kind: TraceKind,
    pub actor: Pid,
    pub detail: Detail,
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace records always serialize")
    }
}

pub fn write_trace<W: Write>(mut out: W, trace: &[TraceRecord]) -> io::Result<()> {
    for rec in trace {
        writeln!(out, "{}", rec.to_line())?;
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(input: R) -> io::Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_field_order() {
        let rec = TraceRecord {
            time: 3,
            kind: TraceKind::Deliver,
            actor: 1,
            detail: Detail::Envelope {
                id: 7,
                src: 0,
                dst: 1,
                sent_at: 2,
                deliver_at: 3,
                payload: "Ping".into(),
                reason: None,
            },
        };
        let line = rec.to_line();
        assert_eq!(
            line,
            r#"{"time":3,"kind":"Deliver","actor":1,"detail":{"envelope":{"id":7,"src":0,"dst":1,"sent_at":2,"deliver_at":3,"payload":"Ping"}}}"#
        );
        let back = read_trace(line.as_bytes()).unwrap();
        assert_eq!(back, vec![rec]);
    }
}
