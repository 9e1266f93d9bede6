//! Rotating-leader, single-vote-phase quorum consensus.
//!
//! Round `ρ` is led by `p(ρ mod n)`, which proposes its input. Every player
//! votes for the first valid proposal of its current round. `quorum_r`
//! matching votes from distinct senders decide; the decider broadcasts a
//! `Decide` carrying those votes, which others re-verify before adopting.
//! A player that has not decided after `round_timeout` own activations moves
//! to the next round.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Digest, EquivocationProof, KeyRing, MessageBody, PlayerId, SignedMessage, Signer, Value};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("fault budget t = {t} must be below n/2 for n = {n}")]
    InvalidBudget { n: usize, t: usize },
    #[error("no quorum r with (n+s)/2 < r <= n-s for n = {n}, s = {s}")]
    NoImmuneQuorum { n: usize, s: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub n: usize,
    pub quorum_r: usize,
    pub max_rounds: u32,
    pub round_timeout: u32,
    /// React to `Expose` messages by discarding the culprit's statements for
    /// the exposed round.
    pub baiting: bool,
}

impl ProtocolParams {
    pub fn new(n: usize, quorum_r: usize) -> Self {
        ProtocolParams {
            n,
            quorum_r,
            max_rounds: n as u32,
            round_timeout: crate::config::default_round_timeout(n),
            baiting: false,
        }
    }
}

/// Crash-tolerant configuration: `r = n - t`.
pub fn cft_params(n: usize, t: usize) -> Result<ProtocolParams, ProtocolError> {
    if 2 * t >= n {
        return Err(ProtocolError::InvalidBudget { n, t });
    }
    Ok(ProtocolParams::new(n, n - t))
}

/// Smallest `r` with `r > (n+s)/2` and `r <= n - s`.
pub fn immune_params(n: usize, s: usize) -> Result<ProtocolParams, ProtocolError> {
    let r = (n + s) / 2 + 1;
    if s >= n || r > n - s {
        return Err(ProtocolError::NoImmuneQuorum { n, s });
    }
    Ok(ProtocolParams::new(n, r))
}

pub fn leader_of(round: u32, n: usize) -> PlayerId {
    PlayerId(round % n as u32)
}

/// A message together with its explicit recipient list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub msg: SignedMessage,
    pub to: Vec<PlayerId>,
}

impl Outgoing {
    /// Send to everybody except `me`.
    pub fn broadcast(msg: SignedMessage, n: usize) -> Self {
        let me = msg.sender;
        Outgoing {
            to: crate::model::players(n).filter(|p| *p != me).collect(),
            msg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub value: Value,
    pub round: u32,
    pub justification: Vec<SignedMessage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayerState {
    pub me: PlayerId,
    pub round: u32,
    pub my_value: Value,
    pub seen_proposals: BTreeMap<u32, SignedMessage>,
    /// round -> sender -> vote
    pub vote_log: BTreeMap<u32, BTreeMap<PlayerId, SignedMessage>>,
    pub decided: Option<Decision>,
    pub delivered_log: BTreeSet<Digest>,
    /// Own activations spent in the current round.
    pub ticks: u32,
    pub voted: BTreeSet<u32>,
    pub proposed: BTreeSet<u32>,
    /// Round and value of the latest own vote.
    pub lock: Option<(u32, Value)>,
    /// Status reports received as leader: round -> sender -> report.
    pub statuses: BTreeMap<u32, BTreeMap<PlayerId, SignedMessage>>,
    pub status_sent: BTreeSet<u32>,
    /// Second conflicting statements seen for an already logged slot.
    pub conflicts: Vec<EquivocationProof>,
    /// (culprit, round) pairs removed by an accepted exposure.
    pub exposed: BTreeSet<(PlayerId, u32)>,
    /// Senders whose statements are no longer counted.
    pub ignored: BTreeSet<PlayerId>,
}

impl PlayerState {
    pub fn new(me: PlayerId, my_value: Value) -> Self {
        PlayerState {
            me,
            round: 0,
            my_value,
            seen_proposals: BTreeMap::new(),
            vote_log: BTreeMap::new(),
            decided: None,
            delivered_log: BTreeSet::new(),
            ticks: 0,
            voted: BTreeSet::new(),
            proposed: BTreeSet::new(),
            lock: None,
            statuses: BTreeMap::new(),
            status_sent: BTreeSet::new(),
            conflicts: Vec::new(),
            exposed: BTreeSet::new(),
            ignored: BTreeSet::new(),
        }
    }

    pub fn decided_value(&self) -> Option<Value> {
        self.decided.as_ref().map(|d| d.value)
    }

    pub fn digest(&self) -> Digest {
        Digest::of_json(self)
    }

    /// Stop counting anything `culprit` said, past or future.
    pub fn purge_sender(&mut self, culprit: PlayerId) {
        self.ignored.insert(culprit);
        for votes in self.vote_log.values_mut() {
            votes.remove(&culprit);
        }
        self.seen_proposals.retain(|_, m| m.sender != culprit);
    }

    /// Discard `culprit`'s statements for one round.
    pub fn apply_exposure(&mut self, culprit: PlayerId, round: u32) {
        self.exposed.insert((culprit, round));
        if let Some(votes) = self.vote_log.get_mut(&round) {
            votes.remove(&culprit);
        }
        if self.seen_proposals.get(&round).is_some_and(|m| m.sender == culprit) {
            self.seen_proposals.remove(&round);
        }
    }

    fn counts(&self, sender: PlayerId, round: u32) -> bool {
        !self.ignored.contains(&sender) && !self.exposed.contains(&(sender, round))
    }

    fn record_vote(&mut self, ring: &KeyRing, msg: &SignedMessage, round: u32, value: Value) {
        let votes = self.vote_log.entry(round).or_default();
        match votes.get(&msg.sender) {
            None => {
                votes.insert(msg.sender, msg.clone());
            }
            Some(prev) => {
                if prev.body.slot().map(|s| s.2) != Some(value) {
                    if let Some(p) = crate::model::detect_equivocation(ring, prev, msg) {
                        self.conflicts.push(p);
                    }
                }
            }
        }
    }

    fn record_proposal(&mut self, ring: &KeyRing, msg: &SignedMessage, round: u32) {
        match self.seen_proposals.get(&round) {
            None => {
                self.seen_proposals.insert(round, msg.clone());
            }
            Some(prev) => {
                if prev != msg {
                    if let Some(p) = crate::model::detect_equivocation(ring, prev, msg) {
                        self.conflicts.push(p);
                    }
                }
            }
        }
    }

    /// Votes for `(round, value)` that currently count.
    fn quorum_for(&self, round: u32, value: Value, r: usize) -> Option<Vec<SignedMessage>> {
        let votes = self.vote_log.get(&round)?;
        let matching: Vec<SignedMessage> = votes
            .values()
            .filter(|m| m.body.slot().map(|s| s.2) == Some(value) && self.counts(m.sender, round))
            .cloned()
            .collect();
        (matching.len() >= r).then_some(matching)
    }
}

/// The value a round-`round` proposal must carry given its status reports:
/// `Some(Some(v))` when some report is locked (highest lock wins),
/// `Some(None)` when the proposer is free, `None` when the reports do not
/// justify anything.
pub fn justified_value(ring: &KeyRing, round: u32, reports: &[SignedMessage], r: usize) -> Option<Option<Value>> {
    let mut senders = BTreeSet::new();
    let mut best: Option<(u32, Value)> = None;
    for m in reports {
        let MessageBody::Status { round: sr, lock } = &m.body else {
            return None;
        };
        if *sr != round || !ring.verify(m) {
            return None;
        }
        if let Some(l) = lock {
            if l.0 >= round {
                return None;
            }
        }
        senders.insert(m.sender);
        best = best.max(*lock);
    }
    (senders.len() >= r).then_some(best.map(|b| b.1))
}

/// Whether a proposal may be voted for.
pub fn proposal_is_justified(ring: &KeyRing, msg: &SignedMessage, r: usize) -> bool {
    let MessageBody::Propose {
        round,
        value,
        justification,
    } = &msg.body
    else {
        return false;
    };
    if *round == 0 {
        return true;
    }
    match justified_value(ring, *round, justification, r) {
        Some(Some(v)) => v == *value,
        Some(None) => true,
        None => false,
    }
}

/// `Some(value)` iff at least `r` verified votes for the same `(round,
/// value)` come from distinct senders.
pub fn check_decision(ring: &KeyRing, votes: &[SignedMessage], r: usize) -> Option<Value> {
    check_decision_round(ring, votes, r).map(|(_, v)| v)
}

/// As [`check_decision`], also returning the round.
pub fn check_decision_round(ring: &KeyRing, votes: &[SignedMessage], r: usize) -> Option<(u32, Value)> {
    let mut senders: BTreeMap<(u32, Value), BTreeSet<PlayerId>> = BTreeMap::new();
    for m in votes {
        if let MessageBody::Vote { round, value } = m.body {
            if ring.verify(m) {
                senders.entry((round, value)).or_default().insert(m.sender);
            }
        }
    }
    senders.into_iter().find(|(_, s)| s.len() >= r).map(|(k, _)| k)
}

/// One activation of a player running the protocol.
pub fn step(
    mut st: PlayerState,
    delivered: &[SignedMessage],
    params: &ProtocolParams,
    signer: &Signer<'_>,
) -> (PlayerState, Vec<Outgoing>) {
    let mut out = Vec::new();
    if st.decided.is_some() {
        return (st, out);
    }
    let ring = signer.ring();
    let n = params.n;
    let r = params.quorum_r;

    if params.baiting {
        for m in delivered {
            if let MessageBody::Expose { proof } = &m.body {
                if ring.verify(m) && proof.verify(ring) {
                    st.apply_exposure(proof.culprit, proof.round());
                }
            }
        }
    }

    let mut fresh_decision = false;
    for m in delivered {
        if !ring.verify(m) || !st.delivered_log.insert(m.digest()) {
            continue;
        }
        match &m.body {
            MessageBody::Propose { round, .. } => {
                if m.sender == leader_of(*round, n) && st.counts(m.sender, *round) && proposal_is_justified(ring, m, r)
                {
                    st.record_proposal(ring, m, *round);
                }
            }
            MessageBody::Vote { round, value } => {
                if st.counts(m.sender, *round) {
                    st.record_vote(ring, m, *round, *value);
                    if let Some(j) = st.quorum_for(*round, *value, r) {
                        st.decided = Some(Decision {
                            value: *value,
                            round: *round,
                            justification: j,
                        });
                        fresh_decision = true;
                    }
                }
            }
            MessageBody::Status { round, .. } => {
                if leader_of(*round, n) == st.me {
                    st.statuses
                        .entry(*round)
                        .or_default()
                        .entry(m.sender)
                        .or_insert_with(|| m.clone());
                }
            }
            MessageBody::Decide {
                round,
                value,
                justification,
            } if check_decision_round(ring, justification, r) == Some((*round, *value))
                && justification.iter().all(|v| ring.verify(v)) =>
            {
                st.decided = Some(Decision {
                    value: *value,
                    round: *round,
                    justification: justification.clone(),
                });
                fresh_decision = true;
            }
            _ => {}
        }
        if st.decided.is_some() {
            break;
        }
    }

    if st.decided.is_none() {
        let round = st.round;
        let leader = leader_of(round, n);
        if round > 0 && st.status_sent.insert(round) {
            let msg = signer.sign(MessageBody::Status { round, lock: st.lock });
            if leader == st.me {
                st.statuses.entry(round).or_default().insert(st.me, msg);
            } else {
                out.push(Outgoing { msg, to: vec![leader] });
            }
        }
        if leader == st.me && !st.proposed.contains(&round) {
            let reports: Vec<SignedMessage> = st
                .statuses
                .get(&round)
                .map(|m| m.values().cloned().collect())
                .unwrap_or_default();
            let value = if round == 0 {
                Some(st.my_value)
            } else {
                justified_value(ring, round, &reports, r).map(|v| v.unwrap_or(st.my_value))
            };
            if let Some(value) = value {
                st.proposed.insert(round);
                let msg = signer.sign(MessageBody::Propose {
                    round,
                    value,
                    justification: reports,
                });
                st.seen_proposals.insert(round, msg.clone());
                out.push(Outgoing::broadcast(msg, n));
            }
        }
        if !st.voted.contains(&round) {
            if let Some(value) = st.seen_proposals.get(&round).and_then(|p| p.body.slot()).map(|s| s.2) {
                st.voted.insert(round);
                st.lock = Some((round, value));
                let msg = signer.sign(MessageBody::Vote { round, value });
                st.vote_log.entry(round).or_default().insert(st.me, msg.clone());
                out.push(Outgoing::broadcast(msg, n));
                if let Some(j) = st.quorum_for(round, value, r) {
                    st.decided = Some(Decision {
                        value,
                        round,
                        justification: j,
                    });
                    fresh_decision = true;
                }
            }
        }
    }

    match &st.decided {
        Some(d) if fresh_decision => {
            let msg = signer.sign(MessageBody::Decide {
                round: d.round,
                value: d.value,
                justification: d.justification.clone(),
            });
            out.push(Outgoing::broadcast(msg, n));
        }
        Some(_) => {}
        None => {
            st.ticks += 1;
            if st.ticks >= params.round_timeout {
                st.round += 1;
                st.ticks = 0;
            }
        }
    }
    (st, out)
}
