//! Byzantine hardening of the base protocol.
//!
//! The wrapper drops unverifiable or malformed input, re-broadcasts every
//! newly seen signed statement once, and blacklists any player caught signing
//! two conflicting statements for the same round. Blacklisted players lose
//! their influence on the inner protocol; the evidence against them is kept.
//! Rounds without a decision are repeated by the inner protocol's timeout.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{detect_equivocation, Digest, EquivocationProof, MessageBody, PlayerId, SignedMessage, Signer};
use crate::protocol::{self, Outgoing, PlayerState, ProtocolParams};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtensionState {
    pub inner: PlayerState,
    pub blacklist: BTreeSet<PlayerId>,
    /// Digests of original statements already seen (and relayed).
    pub relayed: BTreeSet<Digest>,
    pub collected_proofs: Vec<EquivocationProof>,
    /// First Propose/Vote seen from each sender, kept as evidence.
    evidence: BTreeMap<PlayerId, Vec<SignedMessage>>,
}

impl ExtensionState {
    pub fn new(inner: PlayerState) -> Self {
        ExtensionState {
            inner,
            blacklist: BTreeSet::new(),
            relayed: BTreeSet::new(),
            collected_proofs: Vec::new(),
            evidence: BTreeMap::new(),
        }
    }

    pub fn digest(&self) -> Digest {
        Digest::of_json(self)
    }

    fn note_evidence(&mut self, signer: &Signer<'_>, msg: &SignedMessage) {
        let Some((kind, round, _)) = msg.body.slot() else {
            return;
        };
        let seen = self.evidence.entry(msg.sender).or_default();
        let prior = seen
            .iter()
            .find(|m| m.body.slot().is_some_and(|(k, r, _)| k == kind && r == round))
            .cloned();
        match prior {
            None => seen.push(msg.clone()),
            Some(prior) => {
                if self.blacklist.contains(&msg.sender) {
                    return;
                }
                if let Some(proof) = detect_equivocation(signer.ring(), &prior, msg) {
                    self.blacklist.insert(proof.culprit);
                    self.inner.purge_sender(proof.culprit);
                    self.collected_proofs.push(proof);
                }
            }
        }
    }
}

pub fn blacklist_of(state: &ExtensionState) -> BTreeSet<PlayerId> {
    state.blacklist.clone()
}

/// One activation of a player running the hardened protocol.
pub fn wrap_step(
    mut st: ExtensionState,
    delivered: &[SignedMessage],
    params: &ProtocolParams,
    signer: &Signer<'_>,
) -> (ExtensionState, Vec<Outgoing>) {
    let ring = signer.ring();
    let me = signer.me();

    // (original statement, arrived directly)
    let mut fresh: Vec<(SignedMessage, bool)> = Vec::new();
    for m in delivered {
        if !ring.verify(m) {
            continue;
        }
        let (candidate, direct) = match &m.body {
            MessageBody::Malformed { .. } | MessageBody::DefaultMove => continue,
            MessageBody::Relay { inner } => match inner.body {
                MessageBody::Relay { .. } | MessageBody::Malformed { .. } | MessageBody::DefaultMove => continue,
                _ if !ring.verify(inner) => continue,
                _ => ((**inner).clone(), false),
            },
            _ => (m.clone(), true),
        };
        if direct && st.blacklist.contains(&candidate.sender) {
            continue;
        }
        if !st.relayed.insert(candidate.digest()) {
            continue;
        }
        fresh.push((candidate, direct));
    }

    for (msg, _) in &fresh {
        st.note_evidence(signer, msg);
        if let MessageBody::Decide { justification, .. } = &msg.body {
            for v in justification {
                if ring.verify(v) {
                    st.note_evidence(signer, v);
                }
            }
        }
    }

    let mut out: Vec<Outgoing> = fresh
        .iter()
        .filter(|(m, _)| m.sender != me)
        .map(|(m, _)| {
            let relay = signer.sign(MessageBody::Relay {
                inner: Box::new(m.clone()),
            });
            Outgoing::broadcast(relay, params.n)
        })
        .collect();

    let feed: Vec<SignedMessage> = fresh
        .into_iter()
        .filter(|(m, _)| !st.blacklist.contains(&m.sender))
        .map(|(m, _)| m)
        .collect();
    let (inner, inner_out) = protocol::step(st.inner, &feed, params, signer);
    st.inner = inner;
    for o in &inner_out {
        st.relayed.insert(o.msg.digest());
        st.note_evidence(signer, &o.msg);
    }
    out.extend(inner_out);
    (st, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::KeyRing;

    fn setup() -> (KeyRing, ProtocolParams) {
        (KeyRing::new(4, 3), ProtocolParams::new(4, 3))
    }

    #[test]
    fn fresh_state_has_empty_blacklist() {
        let st = ExtensionState::new(PlayerState::new(PlayerId(0), 100));
        assert!(blacklist_of(&st).is_empty());
    }

    #[test]
    fn malformed_is_dropped() {
        let (k, params) = setup();
        let st = ExtensionState::new(PlayerState::new(PlayerId(1), 101));
        let junk = k.sign(PlayerId(3), MessageBody::Malformed { bytes: vec![1, 2, 3] });
        let (after, out) = wrap_step(st.clone(), &[junk], &params, &k.signer(PlayerId(1)));
        assert!(out.is_empty());
        assert_eq!(after.inner.delivered_log, st.inner.delivered_log);
        assert!(after.relayed.is_empty());
    }

    #[test]
    fn relays_each_statement_once() {
        let (k, params) = setup();
        let st = ExtensionState::new(PlayerState::new(PlayerId(1), 101));
        let v = k.sign(PlayerId(2), MessageBody::Vote { round: 0, value: 100 });
        let (st, out) = wrap_step(st, std::slice::from_ref(&v), &params, &k.signer(PlayerId(1)));
        assert_eq!(
            out.iter()
                .filter(|o| matches!(o.msg.body, MessageBody::Relay { .. }))
                .count(),
            1
        );
        let relayed_by_other = k.sign(PlayerId(3), MessageBody::Relay { inner: Box::new(v) });
        let (_, out) = wrap_step(st, &[relayed_by_other], &params, &k.signer(PlayerId(1)));
        assert!(out.iter().all(|o| !matches!(o.msg.body, MessageBody::Relay { .. })));
    }

    #[test]
    fn relayed_conflict_blacklists() {
        let (k, params) = setup();
        let st = ExtensionState::new(PlayerState::new(PlayerId(0), 100));
        let a = k.sign(PlayerId(3), MessageBody::Vote { round: 1, value: 10 });
        let b = k.sign(PlayerId(3), MessageBody::Vote { round: 1, value: 11 });
        let relay_b = k.sign(PlayerId(2), MessageBody::Relay { inner: Box::new(b) });
        let (st, _) = wrap_step(st, &[a], &params, &k.signer(PlayerId(0)));
        let (st, _) = wrap_step(st, &[relay_b], &params, &k.signer(PlayerId(0)));
        assert_eq!(blacklist_of(&st), BTreeSet::from([PlayerId(3)]));
        assert_eq!(st.collected_proofs.len(), 1);
        assert!(st.collected_proofs[0].verify(&k));
        assert!(st.inner.ignored.contains(&PlayerId(3)));

        // later direct statements from p3 are ignored
        let later = k.sign(PlayerId(3), MessageBody::Vote { round: 2, value: 12 });
        let (st, out) = wrap_step(st, &[later], &params, &k.signer(PlayerId(0)));
        assert!(out.iter().all(|o| !matches!(o.msg.body, MessageBody::Relay { .. })));
        assert!(!st.inner.vote_log.contains_key(&2));
    }

    #[test]
    fn two_culprits() {
        let (k, params) = setup();
        let mut st = ExtensionState::new(PlayerState::new(PlayerId(0), 100));
        for p in [3, 1] {
            let a = k.sign(PlayerId(p), MessageBody::Vote { round: 0, value: 1 });
            let b = k.sign(PlayerId(p), MessageBody::Vote { round: 0, value: 2 });
            st = wrap_step(st, &[a, b], &params, &k.signer(PlayerId(0))).0;
        }
        assert_eq!(blacklist_of(&st), BTreeSet::from([PlayerId(1), PlayerId(3)]));
    }

    #[test]
    fn bad_signature_is_dropped() {
        let (k, params) = setup();
        let st = ExtensionState::new(PlayerState::new(PlayerId(1), 101));
        let mut v = k.sign(PlayerId(2), MessageBody::Vote { round: 0, value: 100 });
        v.body = MessageBody::Vote { round: 0, value: 5 };
        let (st, out) = wrap_step(st, &[v], &params, &k.signer(PlayerId(1)));
        assert!(out.is_empty());
        assert!(st.relayed.is_empty());
    }
}
