//! Adversarial partial-synchrony scheduler.
//!
//! Every move picks one live player and the in-transit messages it receives.
//! Two constraints hold for every policy: a message sent at step `s` reaches a
//! live recipient no later than step `s + delta`, and every live player is
//! chosen at least once in every window of `fairness_window` moves.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Digest, PlayerId, SignedMessage};
use crate::trace::RunTrace;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchedulerPolicy {
    #[default]
    RoundRobin,
    /// A fresh random order of the live players for every cycle.
    SeededRandom { seed: u64 },
    /// Round-robin order, but messages between the two groups are held as
    /// long as the delivery bound allows, until step `heal_at`.
    PartitionAdversary {
        group_a: BTreeSet<PlayerId>,
        group_b: BTreeSet<PlayerId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        heal_at: Option<u64>,
    },
}

impl SchedulerPolicy {
    pub fn label(&self) -> String {
        match self {
            SchedulerPolicy::RoundRobin => "round-robin".into(),
            SchedulerPolicy::SeededRandom { seed } => format!("seeded-random({seed})"),
            SchedulerPolicy::PartitionAdversary {
                group_a,
                group_b,
                heal_at,
            } => {
                let fmt = |g: &BTreeSet<PlayerId>| g.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(",");
                match heal_at {
                    Some(h) => format!("partition({}|{};heal={h})", fmt(group_a), fmt(group_b)),
                    None => format!("partition({}|{})", fmt(group_a), fmt(group_b)),
                }
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchedulerError {
    #[error("no live players left to schedule")]
    NoLivePlayers,
    #[error("step {step}: {a} and {b} both have messages due")]
    ConstraintUnsatisfiable { step: u64, a: PlayerId, b: PlayerId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingMessage {
    pub msg: Arc<SignedMessage>,
    pub digest: Digest,
    pub recipient: PlayerId,
    pub sent_at: u64,
    pub deadline: u64,
    /// Global send order, for deterministic delivery order.
    pub seq: u64,
}

/// In-transit messages, indexed by recipient.
#[derive(Debug, Clone, Default)]
pub struct Pool {
    queues: Vec<Vec<PendingMessage>>,
    next_seq: u64,
}

impl Pool {
    pub fn new(n: usize) -> Self {
        Pool {
            queues: vec![Vec::new(); n],
            next_seq: 0,
        }
    }

    pub fn send(&mut self, msg: Arc<SignedMessage>, digest: Digest, recipient: PlayerId, step: u64, delta: u64) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queues[recipient.index()].push(PendingMessage {
            msg,
            digest,
            recipient,
            sent_at: step,
            deadline: step + delta,
            seq,
        });
    }

    pub fn pending_for(&self, p: PlayerId) -> &[PendingMessage] {
        &self.queues[p.index()]
    }

    /// Remove and return `p`'s messages accepted by `keep`, in send order.
    pub fn take_for(&mut self, p: PlayerId, mut take: impl FnMut(&PendingMessage) -> bool) -> Vec<PendingMessage> {
        let q = std::mem::take(&mut self.queues[p.index()]);
        let (taken, rest): (Vec<_>, Vec<_>) = q.into_iter().partition(|m| take(m));
        self.queues[p.index()] = rest;
        taken
    }

    pub fn clear_for(&mut self, p: PlayerId) {
        self.queues[p.index()].clear();
    }

    pub fn len(&self) -> usize {
        self.queues.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.queues.iter().all(Vec::is_empty)
    }

    /// Messages to live players that can no longer meet their deadline.
    pub fn overdue(&self, live: &BTreeSet<PlayerId>, step: u64) -> usize {
        live.iter()
            .map(|p| self.pending_for(*p).iter().filter(|m| m.deadline < step).count())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchedulerMove {
    pub chosen: PlayerId,
    pub delivered: Vec<PendingMessage>,
}

/// Stateful scheduler for one run.
#[derive(Debug, Clone)]
pub struct Scheduler {
    policy: SchedulerPolicy,
    n: usize,
    cursor: usize,
    order: Vec<PlayerId>,
    rng: ChaCha8Rng,
    last: Vec<i64>,
    window: u64,
}

impl Scheduler {
    /// `run_seed` is mixed into the random policy's own seed.
    pub fn new(policy: SchedulerPolicy, n: usize, run_seed: u64) -> Self {
        let seed = match &policy {
            SchedulerPolicy::SeededRandom { seed } => seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ run_seed,
            _ => 0,
        };
        Scheduler {
            policy,
            n,
            cursor: 0,
            order: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            last: vec![-1; n],
            window: 2 * n as u64,
        }
    }

    /// Every live player is chosen at least once per `window` moves.
    pub fn with_fairness_window(mut self, window: u64) -> Self {
        self.window = window.max(1);
        self
    }

    pub fn policy(&self) -> &SchedulerPolicy {
        &self.policy
    }

    fn round_robin(&mut self, live: &BTreeSet<PlayerId>) -> PlayerId {
        loop {
            let p = PlayerId((self.cursor % self.n) as u32);
            self.cursor += 1;
            if live.contains(&p) {
                return p;
            }
        }
    }

    fn random(&mut self, live: &BTreeSet<PlayerId>) -> PlayerId {
        loop {
            if self.order.is_empty() {
                let mut perm: Vec<PlayerId> = live.iter().copied().collect();
                perm.shuffle(&mut self.rng);
                perm.reverse();
                self.order = perm;
            }
            let p = self.order.pop().expect("nonempty order");
            if live.contains(&p) {
                return p;
            }
        }
    }

    fn held(&self, m: &PendingMessage, step: u64, live_count: usize) -> bool {
        let SchedulerPolicy::PartitionAdversary {
            group_a,
            group_b,
            heal_at,
        } = &self.policy
        else {
            return false;
        };
        if heal_at.is_some_and(|h| step >= h) {
            return false;
        }
        let s = m.msg.sender;
        let r = m.recipient;
        let crosses = (group_a.contains(&s) && group_b.contains(&r)) || (group_b.contains(&s) && group_a.contains(&r));
        crosses && m.deadline >= step + live_count as u64
    }

    /// Choose the next player and its deliveries, removing them from `pool`.
    pub fn next(
        &mut self,
        pool: &mut Pool,
        live: &BTreeSet<PlayerId>,
        step: u64,
    ) -> Result<SchedulerMove, SchedulerError> {
        if live.is_empty() {
            return Err(SchedulerError::NoLivePlayers);
        }
        let live_count = live.len();
        let mut forced: Option<PlayerId> = None;
        for p in live {
            if pool.pending_for(*p).iter().any(|m| m.deadline <= step) {
                match forced {
                    None => forced = Some(*p),
                    Some(a) => return Err(SchedulerError::ConstraintUnsatisfiable { step, a, b: *p }),
                }
            }
        }
        let starving = || {
            live.iter()
                .map(|p| (step as i64 - self.last[p.index()], *p))
                .filter(|(gap, _)| *gap >= self.window as i64 - 1)
                .max_by_key(|(gap, p)| (*gap, std::cmp::Reverse(*p)))
                .map(|(_, p)| p)
        };
        let urgent = || {
            live.iter()
                .filter_map(|p| {
                    pool.pending_for(*p)
                        .iter()
                        .filter(|m| m.deadline < step + live_count as u64)
                        .map(|m| m.deadline)
                        .min()
                        .map(|d| (d, *p))
                })
                .min()
                .map(|(_, p)| p)
        };
        let chosen = match forced.or_else(starving).or_else(urgent) {
            Some(p) => p,
            None => match self.policy {
                SchedulerPolicy::SeededRandom { .. } => self.random(live),
                _ => self.round_robin(live),
            },
        };
        self.last[chosen.index()] = step as i64;
        let mut delivered = pool.take_for(chosen, |m| !self.held(m, step, live_count));
        delivered.sort_by_key(|m| (m.sent_at, m.seq));
        Ok(SchedulerMove { chosen, delivered })
    }
}

/// True iff every recorded delivery happened within `delta` steps of its
/// send, nothing due to a live player was left undelivered, and every live
/// player was chosen within every window of `fairness_window` moves.
pub fn validate_schedule(trace: &RunTrace, delta: u64, fairness_window: u64) -> bool {
    let n = trace.header.n;
    let mut last: Vec<i64> = vec![-1; n];
    for (j, ev) in trace.events.iter().enumerate() {
        if ev.step != j as u64 {
            return false;
        }
        let chosen = ev.chosen.index();
        if chosen >= n || !ev.live.contains(&ev.chosen) {
            return false;
        }
        last[chosen] = j as i64;
        if ev
            .delivered
            .iter()
            .any(|d| d.sent_at > ev.step || ev.step - d.sent_at > delta)
        {
            return false;
        }
        for p in &ev.live {
            if p.index() >= n || j as i64 - last[p.index()] >= fairness_window as i64 {
                return false;
            }
        }
    }
    trace.end.overdue == 0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{KeyRing, MessageBody};

    fn live(v: &[u32]) -> BTreeSet<PlayerId> {
        v.iter().map(|&i| PlayerId(i)).collect()
    }

    fn msg(ring: &KeyRing, from: u32) -> (Arc<SignedMessage>, Digest) {
        let m = ring.sign(PlayerId(from), MessageBody::Vote { round: 0, value: 1 });
        let d = m.digest();
        (Arc::new(m), d)
    }

    #[test]
    fn round_robin_starts_at_p0() {
        let mut s = Scheduler::new(SchedulerPolicy::RoundRobin, 2, 0);
        let mut pool = Pool::new(2);
        let mv = s.next(&mut pool, &live(&[0, 1]), 0).unwrap();
        assert_eq!(mv.chosen, PlayerId(0));
        assert!(mv.delivered.is_empty());
    }

    #[test]
    fn due_message_forces_recipient() {
        let ring = KeyRing::new(3, 0);
        let mut s = Scheduler::new(SchedulerPolicy::RoundRobin, 3, 0);
        let mut pool = Pool::new(3);
        let (m, d) = msg(&ring, 0);
        pool.send(m, d, PlayerId(1), 0, 2);
        let mv = s.next(&mut pool, &live(&[0, 1, 2]), 2).unwrap();
        assert_eq!(mv.chosen, PlayerId(1));
        assert_eq!(mv.delivered.len(), 1);
        assert!(pool.is_empty());
    }

    #[test]
    fn two_due_recipients_is_an_error() {
        let ring = KeyRing::new(3, 0);
        let mut s = Scheduler::new(SchedulerPolicy::RoundRobin, 3, 0);
        let mut pool = Pool::new(3);
        let (m, d) = msg(&ring, 0);
        pool.send(m.clone(), d, PlayerId(1), 0, 1);
        pool.send(m, d, PlayerId(2), 0, 1);
        assert!(matches!(
            s.next(&mut pool, &live(&[0, 1, 2]), 1),
            Err(SchedulerError::ConstraintUnsatisfiable { .. })
        ));
    }

    #[test]
    fn partition_holds_cross_traffic() {
        let ring = KeyRing::new(4, 0);
        let policy = SchedulerPolicy::PartitionAdversary {
            group_a: live(&[0, 1]),
            group_b: live(&[2, 3]),
            heal_at: None,
        };
        let mut s = Scheduler::new(policy, 4, 0);
        let mut pool = Pool::new(4);
        let (m, d) = msg(&ring, 0);
        pool.send(m.clone(), d, PlayerId(2), 0, 10);
        pool.send(m, d, PlayerId(1), 0, 10);
        let all = live(&[0, 1, 2, 3]);
        let mut got = Vec::new();
        for step in 0..12 {
            let mv = s.next(&mut pool, &all, step).unwrap();
            for dm in mv.delivered {
                got.push((step, dm.recipient));
            }
        }
        assert_eq!(got[0], (1, PlayerId(1)));
        let (at, who) = got[1];
        assert_eq!(who, PlayerId(2));
        assert!(at > 6 && at <= 10, "held message delivered at {at}");
    }

    #[test]
    fn random_cycles_cover_everyone() {
        let mut s = Scheduler::new(SchedulerPolicy::SeededRandom { seed: 5 }, 5, 0);
        let mut pool = Pool::new(5);
        let all = live(&[0, 1, 2, 3, 4]);
        let picks: BTreeSet<PlayerId> = (0..5).map(|st| s.next(&mut pool, &all, st).unwrap().chosen).collect();
        assert_eq!(picks, all);
    }

    #[test]
    fn policy_json() {
        let p = SchedulerPolicy::SeededRandom { seed: 3 };
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"policy":"seeded_random","seed":3}"#);
        assert_eq!(serde_json::from_str::<SchedulerPolicy>(&s).unwrap(), p);
    }
}
