use std::cell::RefCell;
use std::collections::BTreeSet;
use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::demo::{clock_condition, ClockDemoNode};
use super::{Params, Protocol, Scenario};
use crate::antientropy::{GossipNode, ReplicaNode, SyncMode};
use crate::commit::{CommitNode, PartPhase, Variant};
use crate::election::{ElectionConfig, ElectionNode};
use crate::error::{Error, Result};
use crate::fdetect::HeartbeatNode;
use crate::paxos::PaxosNode;
use crate::seqlog::{prefix_check, RaftNode};
use crate::simnet::{metrics, write_trace, HaltReason, Process, RunOutcome, SimConfig, Simulator, TraceKind, TraceRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantResult {
    pub name: String,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultInfo {
    /// Index of the violating record in the trace.
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub halted_by: String,
    pub steps: u64,
    pub message_count: u64,
    pub communication_steps: u64,
    pub decisions: Vec<String>,
    pub invariant_results: Vec<InvariantResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<FaultInfo>,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub trace: Vec<TraceRecord>,
}

type Checks = Vec<(&'static str, std::result::Result<(), String>)>;

struct Finished {
    outcome: RunOutcome,
    trace: Vec<TraceRecord>,
    fault: Option<FaultInfo>,
    checks: Checks,
}

fn drive<P: Process>(
    config: SimConfig,
    procs: Vec<P>,
    budget: u64,
    done: impl FnMut(&Simulator<P>) -> bool,
    observe: impl FnMut(&Simulator<P>),
    finish: impl FnOnce(&Simulator<P>) -> Checks,
) -> Result<Finished> {
    let mut sim = Simulator::new(config, procs)?;
    let outcome = sim.run_observed(done, observe, budget);
    let checks = finish(&sim);
    let fault = sim.fault().map(|f| FaultInfo {
        index: f.index,
        message: f.message.clone(),
    });
    Ok(Finished {
        outcome,
        trace: sim.into_trace(),
        fault,
        checks,
    })
}

fn ok_if(cond: bool, why: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(why())
    }
}

fn simulate(sc: &Scenario, config: SimConfig) -> Result<Finished> {
    let n = config.n_processes;
    let max_delay = config.channel.max_delay;
    let budget = sc.step_budget;
    match (&sc.params, sc.protocol) {
        (Params::Clock(p), proto) => drive(
            config,
            ClockDemoNode::cluster(n, proto == Protocol::VectorDemo, p),
            budget,
            |_| false,
            |_| {},
            |sim| vec![("clock-condition", clock_condition(sim.processes()))],
        ),
        (Params::Fdetect(p), _) => {
            let d = p.detector();
            drive(
                config,
                (0..n).map(|i| HeartbeatNode::new(i, n, &d)).collect(),
                budget,
                |_| false,
                |_| {},
                |sim| {
                    let correct: Vec<_> = sim.correct().collect();
                    let crashed: Vec<_> = (0..n).filter(|p| !sim.is_correct(*p)).collect();
                    let missed: Vec<_> = correct
                        .iter()
                        .flat_map(|&c| crashed.iter().map(move |&x| (c, x)))
                        .filter(|&(c, x)| !sim.process(c).detector.is_suspected(x))
                        .collect();
                    let wrong: Vec<_> = correct
                        .iter()
                        .flat_map(|&c| correct.iter().map(move |&x| (c, x)))
                        .filter(|&(c, x)| sim.process(c).detector.is_suspected(x))
                        .collect();
                    vec![
                        ("completeness", ok_if(missed.is_empty(), || format!("(observer, crashed) pairs not suspected: {missed:?}"))),
                        ("accuracy", ok_if(wrong.is_empty(), || format!("(observer, correct) pairs suspected: {wrong:?}"))),
                    ]
                },
            )
        }
        (Params::Election(p), _) => {
            let d = p.detector.detector();
            let mut ec = ElectionConfig::for_channel(&d, max_delay);
            ec.initial_candidates = p.initial_candidates.clone();
            let leaders = |sim: &Simulator<ElectionNode>| -> Vec<Option<crate::simnet::Pid>> {
                sim.correct().map(|c| sim.process(c).elector.settled().map(|(l, _)| l)).collect()
            };
            drive(
                config,
                (0..n).map(|i| ElectionNode::new(i, n, &d, ec.clone())).collect(),
                budget,
                |sim| {
                    let ls = leaders(sim);
                    ls.iter().all(|l| l.is_some_and(|l| sim.is_correct(l))) && ls.windows(2).all(|w| w[0] == w[1])
                },
                |_| {},
                |sim| {
                    let ls = leaders(sim);
                    let distinct: BTreeSet<_> = ls.iter().flatten().collect();
                    vec![
                        ("agreement", ok_if(distinct.len() <= 1, || format!("settled leaders {distinct:?}"))),
                        ("termination", ok_if(ls.iter().all(Option::is_some), || "a correct process has not settled".into())),
                    ]
                },
            )
        }
        (Params::Paxos(p), _) => {
            let cfg = p.config();
            let proposed: BTreeSet<String> = cfg.proposers.values().cloned().collect();
            drive(
                config,
                PaxosNode::cluster(n, &cfg),
                budget,
                |sim| sim.correct().all(|c| sim.process(c).decided().is_some()),
                |_| {},
                |sim| {
                    let decided: BTreeSet<&String> = sim.processes().iter().filter_map(|p| p.decided()).collect();
                    let invalid: Vec<_> = decided.iter().filter(|v| !proposed.contains(**v)).collect();
                    let undecided: Vec<_> = sim.correct().filter(|c| sim.process(*c).decided().is_none()).collect();
                    vec![
                        ("agreement", ok_if(decided.len() <= 1, || format!("decided {decided:?}"))),
                        ("validity", ok_if(invalid.is_empty(), || format!("never proposed: {invalid:?}"))),
                        ("termination", ok_if(undecided.is_empty(), || format!("undecided: {undecided:?}"))),
                    ]
                },
            )
        }
        (Params::Seq(p), proto) => {
            let cfg = p.config(proto == Protocol::Raft);
            let total = cfg.values.len();
            let prefix_fail: RefCell<Option<String>> = RefCell::new(None);
            drive(
                config,
                RaftNode::cluster(n, &cfg, max_delay),
                budget,
                |sim| sim.correct().all(|c| sim.process(c).log().decided_upto() >= total),
                |sim| {
                    let mut fail = prefix_fail.borrow_mut();
                    if fail.is_none() && !prefix_check(sim.processes().iter().map(RaftNode::log)) {
                        *fail = Some(format!("logs diverge at t={}", sim.now()));
                    }
                },
                |sim| {
                    let logs: Vec<_> = sim.correct().map(|c| sim.process(c).log().entries().to_vec()).collect();
                    let short: Vec<_> = sim.correct().filter(|c| sim.process(*c).log().decided_upto() < total).collect();
                    vec![
                        ("prefix", prefix_fail.take().map_or(Ok(()), Err)),
                        ("agreement", ok_if(logs.windows(2).all(|w| w[0] == w[1]), || "correct replicas hold different logs".into())),
                        ("termination", ok_if(short.is_empty(), || format!("incomplete logs at {short:?}"))),
                    ]
                },
            )
        }
        (Params::Commit(p), proto) => {
            let variant = if proto == Protocol::TwoPc { Variant::TwoPhase } else { Variant::ThreePhase };
            let cfg = p.config(variant);
            drive(
                config,
                CommitNode::cluster(n, &cfg, max_delay)?,
                budget,
                |sim| sim.correct().filter_map(|c| sim.process(c).participant_phase()).all(PartPhase::is_terminal),
                |_| {},
                |sim| {
                    let ends: BTreeSet<PartPhase> = sim
                        .processes()
                        .iter()
                        .filter_map(CommitNode::participant_phase)
                        .filter(|p| p.is_terminal())
                        .collect();
                    let open: Vec<_> = sim
                        .correct()
                        .filter(|c| sim.process(*c).participant_phase().is_some_and(|p| !p.is_terminal()))
                        .collect();
                    vec![
                        ("atomicity", ok_if(ends.len() <= 1, || "participants both committed and aborted".into())),
                        ("termination", ok_if(open.is_empty(), || format!("blocked participants: {open:?}"))),
                    ]
                },
            )
        }
        (Params::Sync(p), proto) => {
            let mode = if proto == Protocol::MerkleDiff { SyncMode::Merkle } else { SyncMode::Full };
            drive(
                config,
                ReplicaNode::cluster(n, &p.config(mode)),
                budget,
                |_| false,
                |_| {},
                |sim| {
                    let maps: Vec<_> = sim.correct().map(|c| &sim.process(c).map).collect();
                    vec![("convergence", ok_if(maps.windows(2).all(|w| w[0] == w[1]), || "replica maps differ".into()))]
                },
            )
        }
        (Params::Gossip(p), _) => drive(
            config,
            GossipNode::cluster(n, p, max_delay),
            budget,
            |sim| sim.correct().all(|c| sim.process(c).state.infected),
            |_| {},
            |sim| {
                let missing: Vec<_> = sim.correct().filter(|c| !sim.process(*c).state.infected).collect();
                vec![("convergence", ok_if(missing.is_empty(), || format!("never infected: {missing:?}")))]
            },
        ),
    }
}

/// Runs the scenario once in memory. The report depends only on the scenario
/// and the seed.
pub fn execute(sc: &Scenario, seed: Option<u64>) -> Result<RunOutput> {
    let mut config = sc.sim.clone();
    if let Some(s) = seed {
        config.seed = s;
    }
    let seed = config.seed;
    let fin = simulate(sc, config)?;
    let m = metrics(&fin.trace);
    let decisions = fin
        .trace
        .iter()
        .filter(|r| r.kind == TraceKind::Decide)
        .map(|r| format!("t={} p{} {}", r.time, r.actor, r.detail.text().unwrap_or_default()))
        .collect();
    let invariant_results: Vec<InvariantResult> = sc
        .expectations
        .iter()
        .map(|name| {
            let res = fin
                .checks
                .iter()
                .find(|(k, _)| k == name)
                .map(|(_, r)| r.clone())
                .unwrap_or_else(|| Err("not evaluated".into()));
            InvariantResult {
                name: name.clone(),
                passed: res.is_ok(),
                detail: res.err(),
            }
        })
        .collect();
    let passed = fin.fault.is_none() && invariant_results.iter().all(|r| r.passed);
    let halted_by = match fin.outcome.halted_by {
        HaltReason::Predicate => "predicate",
        HaltReason::Exhausted => "exhausted",
        HaltReason::Budget => "budget",
        HaltReason::Fault => "fault",
    };
    Ok(RunOutput {
        report: RunReport {
            scenario: sc.name.clone(),
            seed,
            halted_by: halted_by.into(),
            steps: fin.outcome.steps,
            message_count: m.message_count,
            communication_steps: m.communication_steps,
            decisions,
            invariant_results,
            fault: fin.fault,
            passed,
        },
        trace: fin.trace,
    })
}

pub fn trace_path(dir: &Path, scenario: &str, seed: u64) -> PathBuf {
    dir.join(format!("{scenario}-{seed}.trace"))
}

/// Runs the scenario and writes `<name>-<seed>.trace` into `trace_dir`. An
/// existing trace file is only replaced when `force` is set.
pub fn run(sc: &Scenario, seed: Option<u64>, trace_dir: &Path, force: bool) -> Result<(RunReport, PathBuf)> {
    let path = trace_path(trace_dir, &sc.name, seed.unwrap_or(sc.sim.seed));
    if path.exists() && !force {
        return Err(Error::Io(format!("{} exists; pass --force to overwrite", path.display())));
    }
    let out = execute(sc, seed)?;
    let io = |e: std::io::Error| Error::Io(format!("{}: {e}", path.display()));
    std::fs::create_dir_all(trace_dir).map_err(io)?;
    let file = OpenOptions::new().write(true).create(true).truncate(true).open(&path).map_err(io)?;
    let mut w = BufWriter::new(file);
    write_trace(&mut w, &out.trace).map_err(io)?;
    w.flush().map_err(io)?;
    Ok((out.report, path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub scenario: String,
    pub runs: usize,
    pub pass_rate: f64,
    pub mean_message_count: f64,
    pub mean_communication_steps: f64,
    pub failing_seeds: Vec<u64>,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.failing_seeds.is_empty()
    }
}

pub fn sweep(sc: &Scenario, seeds: Range<u64>) -> Result<SweepReport> {
    sweep_with(sc, seeds, |sc, seed| execute(sc, Some(seed)).map(|o| o.report))
}

/// Sweep with a caller-supplied runner, executed in parallel across seeds.
pub fn sweep_with<F>(sc: &Scenario, seeds: Range<u64>, runner: F) -> Result<SweepReport>
where
    F: Fn(&Scenario, u64) -> Result<RunReport> + Sync,
{
    if seeds.is_empty() {
        return Err(Error::Config(format!("empty seed range {}..{}", seeds.start, seeds.end)));
    }
    let reports: Vec<RunReport> = seeds.into_par_iter().map(|s| runner(sc, s)).collect::<Result<_>>()?;
    let runs = reports.len();
    let mean = |f: fn(&RunReport) -> u64| reports.iter().map(f).sum::<u64>() as f64 / runs as f64;
    let failing_seeds: Vec<u64> = reports.iter().filter(|r| !r.passed).map(|r| r.seed).collect();
    Ok(SweepReport {
        scenario: sc.name.clone(),
        runs,
        pass_rate: (runs - failing_seeds.len()) as f64 / runs as f64,
        mean_message_count: mean(|r| r.message_count),
        mean_communication_steps: mean(|r| r.communication_steps),
        failing_seeds,
    })
}
