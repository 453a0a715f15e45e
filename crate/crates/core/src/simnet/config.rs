use serde::{Deserialize, Serialize};

use super::{Pid, Tick};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    /// Drops and duplicates with the configured probabilities.
    FairLoss,
    /// Each attempt may be dropped; the link retransmits until one copy lands.
    Stubborn,
    /// Exactly-once, per-pair FIFO delivery.
    Perfect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub kind: ChannelKind,
    #[serde(default)]
    pub drop_probability: f64,
    #[serde(default = "default_max_delay")]
    pub max_delay: Tick,
    #[serde(default)]
    pub duplicate_probability: f64,
    #[serde(default = "default_retransmit")]
    pub retransmit_interval: Tick,
}

fn default_max_delay() -> Tick {
    1
}

fn default_retransmit() -> Tick {
    4
}

impl ChannelSpec {
    pub fn perfect(max_delay: Tick) -> Self {
        Self {
            kind: ChannelKind::Perfect,
            drop_probability: 0.0,
            max_delay,
            duplicate_probability: 0.0,
            retransmit_interval: default_retransmit(),
        }
    }

    pub fn fair_loss(drop_probability: f64, duplicate_probability: f64, max_delay: Tick) -> Self {
        Self {
            kind: ChannelKind::FairLoss,
            drop_probability,
            max_delay,
            duplicate_probability,
            retransmit_interval: default_retransmit(),
        }
    }

    pub fn stubborn(drop_probability: f64, max_delay: Tick, retransmit_interval: Tick) -> Self {
        Self {
            kind: ChannelKind::Stubborn,
            drop_probability,
            max_delay,
            duplicate_probability: 0.0,
            retransmit_interval,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.drop_probability) {
            return Err(Error::Config(format!(
                "drop_probability {} not in [0,1]",
                self.drop_probability
            )));
        }
        if !unit.contains(&self.duplicate_probability) {
            return Err(Error::Config(format!(
                "duplicate_probability {} not in [0,1]",
                self.duplicate_probability
            )));
        }
        if self.max_delay < 1 {
            return Err(Error::Config("max_delay must be at least 1".into()));
        }
        match self.kind {
            ChannelKind::Perfect if self.drop_probability != 0.0 || self.duplicate_probability != 0.0 => {
                Err(Error::Config(
                    "perfect channel requires zero drop and duplicate probability".into(),
                ))
            }
            ChannelKind::Stubborn if self.retransmit_interval < 1 => Err(Error::Config(
                "stubborn channel requires retransmit_interval >= 1".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrashAt {
    pub pid: Pid,
    pub at: Tick,
}

/// Cross-group traffic is dropped during `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionWindow {
    pub start: Tick,
    pub end: Tick,
    pub groups: Vec<Vec<Pid>>,
}

/// Messages sent during `[start, end)` take `extra` additional ticks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelaySpike {
    pub start: Tick,
    pub end: Tick,
    pub extra: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_processes: usize,
    #[serde(default)]
    pub seed: u64,
    pub channel: ChannelSpec,
    #[serde(default)]
    pub crash_schedule: Vec<CrashAt>,
    #[serde(default)]
    pub partition_schedule: Vec<PartitionWindow>,
    #[serde(default)]
    pub delay_spikes: Vec<DelaySpike>,
}

impl SimConfig {
    pub fn new(n_processes: usize, seed: u64, channel: ChannelSpec) -> Self {
        Self {
            n_processes,
            seed,
            channel,
            crash_schedule: Vec::new(),
            partition_schedule: Vec::new(),
            delay_spikes: Vec::new(),
        }
    }

    pub fn with_crash(mut self, pid: Pid, at: Tick) -> Self {
        self.crash_schedule.push(CrashAt { pid, at });
        self
    }

    pub fn with_partition(mut self, start: Tick, end: Tick, groups: Vec<Vec<Pid>>) -> Self {
        self.partition_schedule.push(PartitionWindow { start, end, groups });
        self
    }

    pub fn with_delay_spike(mut self, start: Tick, end: Tick, extra: Tick) -> Self {
        self.delay_spikes.push(DelaySpike { start, end, extra });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_processes < 1 {
            return Err(Error::Config("n_processes must be at least 1".into()));
        }
        self.channel.validate()?;
        for c in &self.crash_schedule {
            if c.pid >= self.n_processes {
                return Err(Error::PidOutOfRange {
                    pid: c.pid,
                    n: self.n_processes,
                });
            }
        }
        for w in &self.partition_schedule {
            if w.end < w.start {
                return Err(Error::Config(format!(
                    "partition window ends ({}) before it starts ({})",
                    w.end, w.start
                )));
            }
            validate_groups(&w.groups, self.n_processes)?;
        }
        for s in &self.delay_spikes {
            if s.end < s.start {
                return Err(Error::Config("delay spike ends before it starts".into()));
            }
        }
        Ok(())
    }
}

/// Groups must be disjoint and together cover `0..n`.
pub fn validate_groups(groups: &[Vec<Pid>], n: usize) -> Result<Vec<usize>> {
    let mut group_of = vec![usize::MAX; n];
    for (g, members) in groups.iter().enumerate() {
        for &p in members {
            if p >= n {
                return Err(Error::PidOutOfRange { pid: p, n });
            }
            if group_of[p] != usize::MAX {
                return Err(Error::Config(format!("process {p} appears in more than one group")));
            }
            group_of[p] = g;
        }
    }
    if let Some(p) = group_of.iter().position(|g| *g == usize::MAX) {
        return Err(Error::Config(format!("process {p} is not in any group")));
    }
    Ok(group_of)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_invariants() {
        assert!(ChannelSpec::perfect(3).validate().is_ok());
        let mut bad = ChannelSpec::perfect(3);
        bad.drop_probability = 0.1;
        assert!(bad.validate().is_err());
        assert!(ChannelSpec::stubborn(0.5, 2, 0).validate().is_err());
        assert!(ChannelSpec::fair_loss(1.5, 0.0, 2).validate().is_err());
        assert!(ChannelSpec::perfect(0).validate().is_err());
    }

    #[test]
    fn groups_must_partition() {
        assert_eq!(validate_groups(&[vec![0], vec![1, 2]], 3).unwrap(), vec![0, 1, 1]);
        assert!(validate_groups(&[vec![0, 1], vec![1, 2]], 3).is_err());
        assert!(validate_groups(&[vec![0], vec![1]], 3).is_err());
        assert!(validate_groups(&[vec![0, 5]], 3).is_err());
    }
}
