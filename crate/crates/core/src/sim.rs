//! The run engine: scheduler and players alternate until the horizon.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::model::{players, KeyRing, MessageBody, ModelError, PlayerId, SignedMessage};
use crate::scalar::Scalar;
use crate::scheduler::{Pool, Scheduler, SchedulerError};
use crate::strategies::{bait_evidence, Agent, Exposure, StrategyError, StrategyKind};
use crate::trace::{Delivery, RunTrace, TraceEnd, TraceEvent, TraceHeader};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Record the chosen player's state digest after every move.
    pub record_states: bool,
}

/// A finished run: the trace plus the final players.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: RunTrace,
    pub agents: Vec<Agent>,
    /// Players that sent two different values for the same slot to live
    /// players, judged from the emitted messages themselves.
    pub equivocators: BTreeSet<PlayerId>,
}

fn build_agents<S: Scalar>(cfg: &ScenarioConfig<S>, ring: &KeyRing) -> Result<Vec<Agent>, SimError> {
    let disagreeing: Vec<PlayerId> = players(cfg.n)
        .filter(|p| matches!(cfg.role(*p).strategy, StrategyKind::RationalDisagree { .. }))
        .collect();
    players(cfg.n)
        .map(|p| {
            let role = cfg.role(p);
            let evidence = match &role.strategy {
                StrategyKind::RationalBait { plan, .. } => {
                    let ds: Vec<PlayerId> = disagreeing
                        .iter()
                        .copied()
                        .filter(|d| plan.members.contains(d))
                        .collect();
                    Some(bait_evidence(ring, plan, &ds)?)
                }
                _ => None,
            };
            Ok(Agent::new(role, p, cfg.input_of(p), cfg.protocol, evidence)?)
        })
        .collect()
}

/// Run `cfg` to completion.
pub fn simulate<S: Scalar>(cfg: &ScenarioConfig<S>, opts: RunOptions) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    let n = cfg.n;
    let ring = KeyRing::new(n, cfg.seed);
    let params = cfg.protocol_params();
    let mut agents = build_agents(cfg, &ring)?;
    let deviating = cfg.deviating();
    let mut scheduler = Scheduler::new(cfg.policy.clone(), n, cfg.seed).with_fairness_window(cfg.fairness_window);
    let mut pool = Pool::new(n);
    let mut live: BTreeSet<PlayerId> = players(n).collect();
    let mut crashed = BTreeSet::new();
    let mut exposures = Vec::new();
    let mut slots = BTreeMap::new();
    let mut equivocators = BTreeSet::new();
    let mut events = Vec::new();

    let mut step = 0u64;
    while step < cfg.horizon {
        let settled = live
            .iter()
            .all(|p| deviating.contains(p) || agents[p.index()].decided().is_some())
            && live.iter().all(|p| pool.pending_for(*p).is_empty());
        if settled {
            break;
        }
        let live_before: Vec<PlayerId> = live.iter().copied().collect();
        let mv = scheduler.next(&mut pool, &live, step)?;
        let chosen = mv.chosen;
        let msgs: Vec<SignedMessage> = mv.delivered.iter().map(|m| (*m.msg).clone()).collect();
        let act = agents[chosen.index()].step(&msgs, &params, &ring.signer(chosen));

        let mut emitted = Vec::with_capacity(act.out.len());
        for o in act.out {
            if let MessageBody::Expose { proof } = &o.msg.body {
                if proof.verify(&ring) {
                    exposures.push(Exposure {
                        exposer: chosen,
                        proof: proof.clone(),
                    });
                }
            }
            let digest = o.msg.digest();
            emitted.push(digest);
            if let Some((kind, round, value)) = o.msg.body.slot() {
                if o.to.iter().any(|r| *r != chosen && live.contains(r)) {
                    let first = *slots.entry((o.msg.sender, kind, round)).or_insert(value);
                    if first != value {
                        equivocators.insert(o.msg.sender);
                    }
                }
            }
            let msg = Arc::new(o.msg);
            for r in o.to {
                if r != chosen && live.contains(&r) {
                    pool.send(msg.clone(), digest, r, step, cfg.delta);
                }
            }
        }
        if act.crashed {
            live.remove(&chosen);
            crashed.insert(chosen);
            pool.clear_for(chosen);
        }
        events.push(TraceEvent {
            step,
            chosen,
            live: live_before,
            delivered: mv
                .delivered
                .iter()
                .map(|m| Delivery {
                    digest: m.digest,
                    sent_at: m.sent_at,
                })
                .collect(),
            emitted,
            state: opts.record_states.then(|| agents[chosen.index()].digest()),
        });
        step += 1;
    }

    let blacklists: BTreeMap<PlayerId, BTreeSet<PlayerId>> = agents
        .iter()
        .map(|a| (a.me(), a.node.blacklist()))
        .filter(|(_, b)| !b.is_empty())
        .collect();
    let trace = RunTrace {
        header: TraceHeader {
            scenario_digest: cfg.digest(),
            seed: cfg.seed,
            n,
            delta: cfg.delta,
            fairness_window: cfg.fairness_window,
            horizon: cfg.horizon,
            scenario: serde_json::to_value(cfg).expect("scenario serializes"),
        },
        events,
        end: TraceEnd {
            steps: step,
            decisions: agents.iter().map(Agent::decided).collect(),
            crashed,
            deviating,
            exposures,
            blacklists,
            overdue: pool.overdue(&live, step),
        },
    };
    Ok(RunOutput {
        trace,
        agents,
        equivocators,
    })
}

/// Convenience: run and keep only the trace.
pub fn run_trace<S: Scalar>(cfg: &ScenarioConfig<S>, opts: RunOptions) -> Result<RunTrace, SimError> {
    simulate(cfg, opts).map(|o| o.trace)
}
