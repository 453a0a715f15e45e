use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Detail, Pid, TraceKind, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Metrics {
    /// Number of `Send` records, retransmissions included.
    pub message_count: u64,
    /// Length of the longest causal chain of send→deliver links.
    pub communication_steps: u64,
}

/// Message and time complexity of a trace.
///
/// A message sent by `p` is one link longer than the longest chain that had
/// reached `p` (through deliveries) when it was sent.
pub fn metrics(trace: &[TraceRecord]) -> Metrics {
    let mut reached: HashMap<Pid, u64> = HashMap::new();
    let mut depth: HashMap<u64, u64> = HashMap::new();
    let mut out = Metrics::default();
    for rec in trace {
        let Detail::Envelope { id, src, dst, .. } = &rec.detail else {
            continue;
        };
        match rec.kind {
            TraceKind::Send => {
                out.message_count += 1;
                let d = reached.get(src).copied().unwrap_or(0) + 1;
                // A retransmission never shortens the chain of the original.
                let entry = depth.entry(*id).or_insert(d);
                *entry = (*entry).min(d);
            }
            TraceKind::Deliver => {
                if let Some(d) = depth.get(id).copied() {
                    let r = reached.entry(*dst).or_insert(0);
                    *r = (*r).max(d);
                    out.communication_steps = out.communication_steps.max(d);
                }
            }
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(kind: TraceKind, time: u64, id: u64, src: Pid, dst: Pid) -> TraceRecord {
        TraceRecord {
            time,
            kind,
            actor: if kind == TraceKind::Send { src } else { dst },
            detail: Detail::Envelope {
                id,
                src,
                dst,
                sent_at: 0,
                deliver_at: 0,
                payload: String::new(),
                reason: None,
            },
        }
    }

    #[test]
    fn empty_trace() {
        assert_eq!(metrics(&[]), Metrics::default());
    }

    #[test]
    fn one_link() {
        let t = [env(TraceKind::Send, 0, 0, 0, 1), env(TraceKind::Deliver, 1, 0, 0, 1)];
        assert_eq!(
            metrics(&t),
            Metrics {
                message_count: 1,
                communication_steps: 1
            }
        );
    }

    #[test]
    fn chain_and_undelivered() {
        let t = [
            env(TraceKind::Send, 0, 0, 0, 1),
            env(TraceKind::Send, 0, 1, 0, 2),
            env(TraceKind::Deliver, 1, 0, 0, 1),
            env(TraceKind::Send, 1, 2, 1, 2),
            env(TraceKind::Drop, 2, 1, 0, 2),
            env(TraceKind::Deliver, 2, 2, 1, 2),
            env(TraceKind::Send, 2, 3, 2, 0),
        ];
        assert_eq!(
            metrics(&t),
            Metrics {
                message_count: 4,
                communication_steps: 2
            }
        );
    }
}
