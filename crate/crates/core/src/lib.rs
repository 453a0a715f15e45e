pub mod antientropy;
pub mod causality;
pub mod clocks;
pub mod commit;
pub mod election;
pub mod fdetect;
pub mod paxos;
pub mod seqlog;
pub mod error;
pub mod explore;
pub mod scenario;
pub mod simnet;

pub use error::{Error, Result};
