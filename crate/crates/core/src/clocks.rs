//! Lamport and vector logical clocks.
//!
//! Both clocks are plain values: every operation consumes a timestamp and
//! returns the next one, so they can be copied into messages and trace
//! records freely.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simnet::Pid;

/// How a Lamport clock folds in a timestamp carried by a received message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeRule {
    /// `max(local + 1, received)`.
    /// Causally related events may share a value.
    #[serde(rename = "tick-or-max")]
    TickOrMax,
    /// `max(local, received) + 1`: strictly increasing along every causal edge.
    #[default]
    Standard,
}

/// A Lamport timestamp. Ordering is lexicographic on `(value, owner)`, which
/// gives a total order that is consistent with causality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LogicalTimestamp {
    pub value: u64,
    pub owner: Pid,
}

impl LogicalTimestamp {
    pub fn new(owner: Pid) -> Self {
        Self { value: 0, owner }
    }

    pub fn at(value: u64, owner: Pid) -> Self {
        Self { value, owner }
    }

    /// Local event or send.
    #[must_use]
    pub fn tick(self) -> Self {
        Self {
            value: self.value + 1,
            owner: self.owner,
        }
    }

    /// Receive event carrying `received`.
    #[must_use]
    pub fn receive(self, received: u64, rule: MergeRule) -> Self {
        let value = match rule {
            MergeRule::TickOrMax => (self.value + 1).max(received),
            MergeRule::Standard => self.value.max(received) + 1,
        };
        Self {
            value,
            owner: self.owner,
        }
    }
}

impl fmt::Display for LogicalTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.value, self.owner)
    }
}

/// Result of comparing two vector timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CausalOrder {
    Before,
    After,
    Equal,
    Concurrent,
}

impl CausalOrder {
    pub fn reverse(self) -> Self {
        match self {
            CausalOrder::Before => CausalOrder::After,
            CausalOrder::After => CausalOrder::Before,
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VectorTimestamp {
    components: Vec<u64>,
    owner_index: usize,
}

impl VectorTimestamp {
    /// A zero vector for a cluster of `n` processes owned by `owner_index`.
    pub fn new(n: usize, owner_index: usize) -> Result<Self> {
        if owner_index >= n {
            return Err(Error::PidOutOfRange { pid: owner_index, n });
        }
        Ok(Self {
            components: vec![0; n],
            owner_index,
        })
    }

    pub fn from_components(components: Vec<u64>, owner_index: usize) -> Result<Self> {
        if owner_index >= components.len() {
            return Err(Error::PidOutOfRange {
                pid: owner_index,
                n: components.len(),
            });
        }
        Ok(Self {
            components,
            owner_index,
        })
    }

    pub fn components(&self) -> &[u64] {
        &self.components
    }

    pub fn owner_index(&self) -> usize {
        self.owner_index
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    #[must_use]
    pub fn local_event(mut self) -> Self {
        self.components[self.owner_index] += 1;
        self
    }

    /// Element-wise maximum with `received`, then one increment of the owner slot.
    pub fn receive(mut self, received: &VectorTimestamp) -> Result<Self> {
        self.check_len(received)?;
        for (mine, theirs) in self.components.iter_mut().zip(&received.components) {
            *mine = (*mine).max(*theirs);
        }
        self.components[self.owner_index] += 1;
        Ok(self)
    }

    pub fn compare(&self, other: &VectorTimestamp) -> Result<CausalOrder> {
        self.check_len(other)?;
        let mut less = false;
        let mut greater = false;
        for (a, b) in self.components.iter().zip(&other.components) {
            match a.cmp(b) {
                Ordering::Less => less = true,
                Ordering::Greater => greater = true,
                Ordering::Equal => {}
            }
        }
        Ok(match (less, greater) {
            (false, false) => CausalOrder::Equal,
            (true, false) => CausalOrder::Before,
            (false, true) => CausalOrder::After,
            (true, true) => CausalOrder::Concurrent,
        })
    }

    fn check_len(&self, other: &VectorTimestamp) -> Result<()> {
        if self.components.len() != other.components.len() {
            return Err(Error::ClusterSizeMismatch {
                expected: self.components.len(),
                got: other.components.len(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for VectorTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.components)
    }
}

pub fn vc_compare(a: &VectorTimestamp, b: &VectorTimestamp) -> Result<CausalOrder> {
    a.compare(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vc(c: &[u64], owner: usize) -> VectorTimestamp {
        VectorTimestamp::from_components(c.to_vec(), owner).unwrap()
    }

    #[test]
    fn lamport_tick() {
        let c = LogicalTimestamp::new(0);
        assert_eq!(c.tick().value, 1);
        assert_eq!(LogicalTimestamp::at(2, 0).tick().value, 3);
        let seven = (0..7).fold(c, |c, _| c.tick());
        assert_eq!(seven.value, 7);
        assert_eq!(seven.owner, 0);
    }

    #[test]
    fn lamport_receive_rules() {
        assert_eq!(LogicalTimestamp::at(0, 1).receive(3, MergeRule::TickOrMax).value, 3);
        assert_eq!(LogicalTimestamp::at(1, 2).receive(5, MergeRule::TickOrMax).value, 5);
        assert_eq!(LogicalTimestamp::at(5, 0).receive(3, MergeRule::Standard).value, 6);
        assert_eq!(MergeRule::default(), MergeRule::Standard);
    }

    #[test]
    fn lamport_three_process_walkthrough_tick_or_max() {
        // P1: A, B, send(m), C.
        let p1 = LogicalTimestamp::new(0).tick().tick().tick();
        assert_eq!(p1.value, 3);
        // P2: recv(m)=3, B=4, send(n)=5, C=6.
        let p2 = LogicalTimestamp::new(1).receive(p1.value, MergeRule::TickOrMax);
        assert_eq!(p2.value, 3);
        let p2_send = p2.tick().tick();
        assert_eq!(p2_send.value, 5);
        assert_eq!(p2_send.tick().value, 6);
        // P3: A=1, recv(n)=5, B=6, C=7.
        let p3 = LogicalTimestamp::new(2).tick().receive(p2_send.value, MergeRule::TickOrMax);
        assert_eq!(p3.value, 5);
        assert_eq!(p3.tick().tick().value, 7);
    }

    #[test]
    fn lamport_total_order_breaks_ties_on_owner() {
        assert!(LogicalTimestamp::at(5, 0) < LogicalTimestamp::at(5, 2));
        assert!(LogicalTimestamp::at(4, 9) < LogicalTimestamp::at(5, 0));
    }

    #[test]
    fn vector_local_events() {
        assert_eq!(vc(&[0, 0, 0], 0).local_event().components(), &[1, 0, 0]);
        assert_eq!(vc(&[4, 0, 0], 1).local_event().components(), &[4, 1, 0]);
        assert_eq!(vc(&[4, 2, 1], 2).local_event().components(), &[4, 2, 2]);
    }

    #[test]
    fn vector_receive() {
        let r = vc(&[0, 0, 0], 1).receive(&vc(&[3, 0, 0], 0)).unwrap();
        assert_eq!(r.components(), &[3, 1, 0]);
        let r = vc(&[0, 0, 1], 2).receive(&vc(&[4, 2, 0], 1)).unwrap();
        assert_eq!(r.components(), &[4, 2, 2]);
        let r = vc(&[0, 0, 0], 0).receive(&vc(&[0, 0, 0], 1)).unwrap();
        assert_eq!(r.components(), &[1, 0, 0]);
    }

    #[test]
    fn vector_length_mismatch() {
        let err = vc(&[0, 0, 0], 0).receive(&vc(&[1, 1], 0)).unwrap_err();
        assert_eq!(err, Error::ClusterSizeMismatch { expected: 3, got: 2 });
        assert!(vc_compare(&vc(&[0], 0), &vc(&[0, 0], 0)).is_err());
        assert!(VectorTimestamp::new(3, 3).is_err());
    }

    #[test]
    fn compare_examples() {
        assert_eq!(vc_compare(&vc(&[0, 0, 0], 0), &vc(&[0, 0, 0], 1)).unwrap(), CausalOrder::Equal);
        assert_eq!(vc_compare(&vc(&[3, 0, 0], 0), &vc(&[4, 2, 0], 1)).unwrap(), CausalOrder::Before);
        assert_eq!(vc_compare(&vc(&[4, 2, 0], 1), &vc(&[3, 0, 0], 0)).unwrap(), CausalOrder::After);
        assert_eq!(
            vc_compare(&vc(&[4, 0, 0], 0), &vc(&[0, 0, 1], 2)).unwrap(),
            CausalOrder::Concurrent
        );
    }
}
