//! Player behaviors: correct play, crashes, rational coalitions (disagree,
//! follow, bait), punishment and the Byzantine deviations D1 to D6.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bft_extension::{self, ExtensionState};
use crate::config::ProtocolVariant;
use crate::model::UtilityParams;
use crate::model::{
    detect_equivocation, Digest, EquivocationProof, KeyRing, MessageBody, PlayerId, Role, RoleKind, SignedMessage,
    Signer, Value,
};
use crate::protocol::{self, leader_of, Outgoing, PlayerState, ProtocolParams};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StrategyError {
    #[error("baiter has no conflicting pre-signed votes to expose")]
    NoEvidence,
}

/// A declared coalition attack: members send `value_a` to `partition_a` and
/// `value_b` to `partition_b` in `round`. Allies are faulty players that help
/// the `partition_a` side by crashing after sending only there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisagreePlan {
    pub members: BTreeSet<PlayerId>,
    #[serde(default)]
    pub allies: BTreeSet<PlayerId>,
    pub partition_a: BTreeSet<PlayerId>,
    pub partition_b: BTreeSet<PlayerId>,
    pub value_a: Value,
    pub value_b: Value,
    #[serde(default)]
    pub round: u32,
}

impl DisagreePlan {
    pub fn validate(&self) -> Result<(), String> {
        if self.members.is_empty() {
            return Err("coalition plan without members".into());
        }
        if self.partition_a.is_empty() || self.partition_b.is_empty() {
            return Err("coalition partitions must be nonempty".into());
        }
        if !self.partition_a.is_disjoint(&self.partition_b) {
            return Err("coalition partitions overlap".into());
        }
        let insiders: BTreeSet<PlayerId> = self.members.union(&self.allies).copied().collect();
        if insiders.len() != self.members.len() + self.allies.len() {
            return Err("a player is both member and ally".into());
        }
        if !insiders.is_disjoint(&self.partition_a) || !insiders.is_disjoint(&self.partition_b) {
            return Err("partitions must contain only non-coalition players".into());
        }
        if self.value_a == self.value_b {
            return Err("coalition values must differ".into());
        }
        Ok(())
    }

    /// Recipients of the `value_a` statements, excluding `me`.
    pub fn side_a(&self, me: PlayerId) -> Vec<PlayerId> {
        let mut s: BTreeSet<PlayerId> = self.partition_a.clone();
        s.extend(&self.members);
        s.extend(&self.allies);
        s.remove(&me);
        s.into_iter().collect()
    }

    /// Recipients of the `value_b` statements, excluding `me`.
    pub fn side_b(&self, me: PlayerId) -> Vec<PlayerId> {
        let mut s: BTreeSet<PlayerId> = self.partition_b.clone();
        s.extend(&self.members);
        s.remove(&me);
        s.into_iter().collect()
    }

    fn players(&self) -> impl Iterator<Item = PlayerId> + '_ {
        self.members
            .iter()
            .chain(&self.allies)
            .chain(&self.partition_a)
            .chain(&self.partition_b)
            .copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "deviation", rename_all = "snake_case", deny_unknown_fields)]
pub enum ByzantineKind {
    /// Equivocate along the plan's partition in every round.
    D1 { plan: DisagreePlan },
    /// Never send anything.
    D2,
    /// Correct, but only ever send to `subset`.
    D3 { subset: BTreeSet<PlayerId> },
    /// Send signed garbage instead of protocol messages.
    D4,
    /// Split every proposal and vote across two halves, every round.
    D5,
    /// Split proposals and votes in round 0 only.
    D6,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategyKind {
    Correct,
    /// Correct play plus exposing every equivocation seen.
    Punish,
    /// Correct until the first activation in round `round` (never when
    /// absent) that sends anything; those sends go to `final_recipients`
    /// only, then the player is crashed.
    CrashAt {
        round: Option<u32>,
        #[serde(default)]
        final_recipients: BTreeSet<PlayerId>,
    },
    RationalFollow,
    RationalDisagree {
        plan: DisagreePlan,
    },
    RationalBait {
        plan: DisagreePlan,
        reveal_round: u32,
    },
    Byzantine(ByzantineKind),
}

impl StrategyKind {
    /// Crash before sending anything.
    pub fn crash_silent() -> Self {
        StrategyKind::CrashAt {
            round: Some(0),
            final_recipients: BTreeSet::new(),
        }
    }

    pub fn plan(&self) -> Option<&DisagreePlan> {
        match self {
            StrategyKind::RationalDisagree { plan } | StrategyKind::RationalBait { plan, .. } => Some(plan),
            _ => None,
        }
    }

    pub fn compatible_with(&self, kind: RoleKind) -> bool {
        match self {
            StrategyKind::Correct => kind == RoleKind::Correct,
            StrategyKind::Punish => matches!(kind, RoleKind::Correct | RoleKind::Rational),
            StrategyKind::CrashAt { .. } => kind == RoleKind::Crash,
            StrategyKind::RationalFollow
            | StrategyKind::RationalDisagree { .. }
            | StrategyKind::RationalBait { .. } => kind == RoleKind::Rational,
            StrategyKind::Byzantine(_) => kind == RoleKind::Byzantine,
        }
    }

    pub fn referenced_players(&self) -> Vec<PlayerId> {
        match self {
            StrategyKind::CrashAt { final_recipients, .. } => final_recipients.iter().copied().collect(),
            StrategyKind::RationalDisagree { plan } | StrategyKind::RationalBait { plan, .. } => {
                plan.players().collect()
            }
            StrategyKind::Byzantine(ByzantineKind::D1 { plan }) => plan.players().collect(),
            StrategyKind::Byzantine(ByzantineKind::D3 { subset }) => subset.iter().copied().collect(),
            _ => Vec::new(),
        }
    }
}

/// Split `pool` (in index order) into `(A, B)` with `|A| >= need_a` and
/// `|B| >= need_b`, as balanced as possible, lower indices and ties to A.
pub fn split_for_quorum(
    pool: &BTreeSet<PlayerId>,
    need_a: usize,
    need_b: usize,
) -> Option<(BTreeSet<PlayerId>, BTreeSet<PlayerId>)> {
    let c = pool.len();
    if need_a.max(1) + need_b.max(1) > c {
        return None;
    }
    let size_a = c.div_ceil(2).clamp(need_a.max(1), c.saturating_sub(need_b.max(1)));
    if size_a < need_a.max(1) || c - size_a < need_b.max(1) {
        return None;
    }
    let a: BTreeSet<PlayerId> = pool.iter().take(size_a).copied().collect();
    let b: BTreeSet<PlayerId> = pool.iter().skip(size_a).copied().collect();
    Some((a, b))
}

/// Partition of the non-coalition players such that the `k` coalition votes
/// plus either side reach `n - t`.
pub fn disagree_partition(
    n: usize,
    k: usize,
    t: usize,
    correct: &BTreeSet<PlayerId>,
) -> Option<(BTreeSet<PlayerId>, BTreeSet<PlayerId>)> {
    let need = n.saturating_sub(t).saturating_sub(k);
    split_for_quorum(correct, need, need)
}

/// Conflicting votes each disagreeing member signs during planning and
/// shares inside the coalition. Baiters can later expose them.
pub fn bait_evidence(
    ring: &KeyRing,
    plan: &DisagreePlan,
    disagreeing: &[PlayerId],
) -> Result<Vec<EquivocationProof>, StrategyError> {
    let proofs: Vec<EquivocationProof> = disagreeing
        .iter()
        .filter_map(|&p| {
            let a = ring.sign(
                p,
                MessageBody::Vote {
                    round: plan.round,
                    value: plan.value_a,
                },
            );
            let b = ring.sign(
                p,
                MessageBody::Vote {
                    round: plan.round,
                    value: plan.value_b,
                },
            );
            detect_equivocation(ring, &a, &b)
        })
        .collect();
    if proofs.is_empty() {
        Err(StrategyError::NoEvidence)
    } else {
        Ok(proofs)
    }
}

/// One exposure: who published which proof, in order of publication.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exposure {
    pub exposer: PlayerId,
    pub proof: EquivocationProof,
}

/// Utility adjustments from exposures: `slash` once per distinct culprit and
/// `bait_reward` once per player that was first to expose some culprit.
pub fn punish_effect<S: Scalar>(exposures: &[Exposure], utility: &UtilityParams<S>) -> BTreeMap<PlayerId, S> {
    let mut culprits = BTreeSet::new();
    let mut rewarded = BTreeSet::new();
    for e in exposures {
        if culprits.insert(e.proof.culprit) {
            rewarded.insert(e.exposer);
        }
    }
    let mut out: BTreeMap<PlayerId, S> = BTreeMap::new();
    for c in culprits {
        let v = out.entry(c).or_insert_with(S::zero);
        *v = *v + utility.slash;
    }
    for r in rewarded {
        let v = out.entry(r).or_insert_with(S::zero);
        *v = *v + utility.bait_reward;
    }
    out
}

/// The protocol a player runs underneath its strategy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Base(PlayerState),
    Extended(ExtensionState),
}

impl Node {
    pub fn new(variant: ProtocolVariant, me: PlayerId, input: Value) -> Self {
        let st = PlayerState::new(me, input);
        match variant {
            ProtocolVariant::Base => Node::Base(st),
            ProtocolVariant::Extended => Node::Extended(ExtensionState::new(st)),
        }
    }

    pub fn inner(&self) -> &PlayerState {
        match self {
            Node::Base(s) => s,
            Node::Extended(e) => &e.inner,
        }
    }

    pub fn inner_mut(&mut self) -> &mut PlayerState {
        match self {
            Node::Base(s) => s,
            Node::Extended(e) => &mut e.inner,
        }
    }

    pub fn blacklist(&self) -> BTreeSet<PlayerId> {
        match self {
            Node::Base(_) => BTreeSet::new(),
            Node::Extended(e) => bft_extension::blacklist_of(e),
        }
    }

    pub fn digest(&self) -> Digest {
        match self {
            Node::Base(s) => s.digest(),
            Node::Extended(e) => e.digest(),
        }
    }

    pub fn step(&mut self, delivered: &[SignedMessage], params: &ProtocolParams, signer: &Signer<'_>) -> Vec<Outgoing> {
        let me = self.inner().me;
        match self {
            Node::Base(s) => {
                let st = std::mem::replace(s, PlayerState::new(me, 0));
                let (st, out) = protocol::step(st, delivered, params, signer);
                *s = st;
                out
            }
            Node::Extended(e) => {
                let st = std::mem::replace(e, ExtensionState::new(PlayerState::new(me, 0)));
                let (st, out) = bft_extension::wrap_step(st, delivered, params, signer);
                *e = st;
                out
            }
        }
    }

    fn known_conflicts(&self) -> Vec<EquivocationProof> {
        let mut all = self.inner().conflicts.clone();
        if let Node::Extended(e) = self {
            all.extend(e.collected_proofs.iter().cloned());
        }
        all
    }
}

/// Result of one activation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Activation {
    pub out: Vec<Outgoing>,
    /// The player crashed at the end of this activation.
    pub crashed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Behavior {
    Honest,
    Punish {
        exposed: BTreeSet<PlayerId>,
    },
    Crash {
        at: Option<u32>,
        recipients: BTreeSet<PlayerId>,
        crashed: bool,
    },
    Disagree {
        plan: DisagreePlan,
        attacked: bool,
        aborted: bool,
    },
    Bait {
        plan: DisagreePlan,
        reveal_round: u32,
        evidence: Vec<EquivocationProof>,
        revealed: bool,
        attacked: bool,
    },
    Byzantine {
        kind: ByzantineKind,
        attacked: BTreeSet<u32>,
    },
}

/// A player: its protocol node plus the strategy driving it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Agent {
    pub node: Node,
    pub behavior: Behavior,
}

fn restrict(out: Vec<Outgoing>, keep: &BTreeSet<PlayerId>) -> Vec<Outgoing> {
    out.into_iter()
        .filter_map(|mut o| {
            o.to.retain(|p| keep.contains(p));
            (!o.to.is_empty()).then_some(o)
        })
        .collect()
}

fn others(n: usize, me: PlayerId) -> Vec<PlayerId> {
    crate::model::players(n).filter(|p| *p != me).collect()
}

fn alt_value(v: Value) -> Value {
    v ^ (1 << 40)
}

/// Pre-mark round `round` as handled and emit the split statements.
fn equivocate(
    node: &mut Node,
    round: u32,
    values: (Value, Value),
    sides: (Vec<PlayerId>, Vec<PlayerId>),
    params: &ProtocolParams,
    signer: &Signer<'_>,
) -> Vec<Outgoing> {
    let st = node.inner_mut();
    st.voted.insert(round);
    let lead = leader_of(round, params.n) == st.me && st.proposed.insert(round);
    let reports: Vec<SignedMessage> = st
        .statuses
        .get(&round)
        .map(|m| m.values().cloned().collect())
        .unwrap_or_default();
    let mut out = Vec::new();
    let mut emit = |body: MessageBody, to: &Vec<PlayerId>| {
        if !to.is_empty() {
            out.push(Outgoing {
                msg: signer.sign(body),
                to: to.clone(),
            });
        }
    };
    if lead {
        for (value, side) in [(values.0, &sides.0), (values.1, &sides.1)] {
            let justification = reports.clone();
            emit(
                MessageBody::Propose {
                    round,
                    value,
                    justification,
                },
                side,
            );
        }
    }
    emit(MessageBody::Vote { round, value: values.0 }, &sides.0);
    emit(MessageBody::Vote { round, value: values.1 }, &sides.1);
    out
}

fn own_slot_in(o: &Outgoing, me: PlayerId, round: u32) -> bool {
    o.msg.sender == me && o.msg.body.slot().is_some_and(|(_, r, _)| r == round)
}

fn names_member(ring: &KeyRing, delivered: &[SignedMessage], plan: &DisagreePlan) -> bool {
    delivered.iter().any(|m| {
        let body = match &m.body {
            MessageBody::Relay { inner } => &inner.body,
            b => b,
        };
        matches!(body, MessageBody::Expose { proof } if plan.members.contains(&proof.culprit) && proof.verify(ring))
    })
}

impl Agent {
    /// Build the agent for `role`. Baiters need `evidence`.
    pub fn new(
        role: &Role,
        me: PlayerId,
        input: Value,
        variant: ProtocolVariant,
        evidence: Option<Vec<EquivocationProof>>,
    ) -> Result<Self, StrategyError> {
        let behavior = match &role.strategy {
            StrategyKind::Correct | StrategyKind::RationalFollow => Behavior::Honest,
            StrategyKind::Punish => Behavior::Punish {
                exposed: BTreeSet::new(),
            },
            StrategyKind::CrashAt {
                round,
                final_recipients,
            } => Behavior::Crash {
                at: *round,
                recipients: final_recipients.clone(),
                crashed: false,
            },
            StrategyKind::RationalDisagree { plan } => Behavior::Disagree {
                plan: plan.clone(),
                attacked: false,
                aborted: false,
            },
            StrategyKind::RationalBait { plan, reveal_round } => Behavior::Bait {
                plan: plan.clone(),
                reveal_round: *reveal_round,
                evidence: evidence.filter(|e| !e.is_empty()).ok_or(StrategyError::NoEvidence)?,
                revealed: false,
                attacked: false,
            },
            StrategyKind::Byzantine(kind) => Behavior::Byzantine {
                kind: kind.clone(),
                attacked: BTreeSet::new(),
            },
        };
        Ok(Agent {
            node: Node::new(variant, me, input),
            behavior,
        })
    }

    pub fn me(&self) -> PlayerId {
        self.node.inner().me
    }

    pub fn decided(&self) -> Option<Value> {
        self.node.inner().decided_value()
    }

    pub fn digest(&self) -> Digest {
        self.node.digest()
    }

    pub fn is_crashed(&self) -> bool {
        matches!(self.behavior, Behavior::Crash { crashed: true, .. })
    }

    pub fn step(&mut self, delivered: &[SignedMessage], params: &ProtocolParams, signer: &Signer<'_>) -> Activation {
        let me = signer.me();
        let ring = signer.ring();
        let n = params.n;
        let node = &mut self.node;
        match &mut self.behavior {
            Behavior::Honest => Activation {
                out: node.step(delivered, params, signer),
                crashed: false,
            },
            Behavior::Punish { exposed } => {
                let mut out = node.step(delivered, params, signer);
                for proof in node.known_conflicts() {
                    if exposed.insert(proof.culprit) {
                        out.push(Outgoing::broadcast(signer.sign(MessageBody::Expose { proof }), n));
                    }
                }
                Activation { out, crashed: false }
            }
            Behavior::Crash {
                at,
                recipients,
                crashed,
            } => {
                if *crashed {
                    return Activation::default();
                }
                let round = node.inner().round;
                let out = node.step(delivered, params, signer);
                match at {
                    Some(m) if round >= *m && !out.is_empty() => {
                        *crashed = true;
                        Activation {
                            out: restrict(out, recipients),
                            crashed: true,
                        }
                    }
                    _ => Activation { out, crashed: false },
                }
            }
            Behavior::Disagree {
                plan,
                attacked,
                aborted,
            } => {
                if !*aborted && names_member(ring, delivered, plan) {
                    *aborted = true;
                }
                let round = node.inner().round;
                let attacking = !*aborted && round == plan.round && node.inner().decided.is_none();
                let mut out = Vec::new();
                if attacking && !*attacked {
                    *attacked = true;
                    out = equivocate(
                        node,
                        plan.round,
                        (plan.value_a, plan.value_b),
                        (plan.side_a(me), plan.side_b(me)),
                        params,
                        signer,
                    );
                }
                let inner = node.step(delivered, params, signer);
                let restrained = !*aborted && round <= plan.round;
                out.extend(inner.into_iter().filter(|o| {
                    !(restrained
                        && (matches!(o.msg.body, MessageBody::Decide { .. }) || own_slot_in(o, me, plan.round)))
                }));
                Activation { out, crashed: false }
            }
            Behavior::Bait {
                plan,
                reveal_round,
                evidence,
                revealed,
                attacked,
            } => {
                let round = node.inner().round;
                let mut out = Vec::new();
                if !*revealed && round >= *reveal_round {
                    *revealed = true;
                    for proof in evidence.iter() {
                        node.inner_mut().apply_exposure(proof.culprit, proof.round());
                        out.push(Outgoing::broadcast(
                            signer.sign(MessageBody::Expose { proof: proof.clone() }),
                            n,
                        ));
                    }
                }
                if *revealed {
                    out.extend(node.step(delivered, params, signer));
                    return Activation { out, crashed: false };
                }
                if round == plan.round && !*attacked && node.inner().decided.is_none() {
                    *attacked = true;
                    out = equivocate(
                        node,
                        plan.round,
                        (plan.value_a, plan.value_b),
                        (plan.side_a(me), plan.side_b(me)),
                        params,
                        signer,
                    );
                }
                let inner = node.step(delivered, params, signer);
                out.extend(
                    inner.into_iter().filter(|o| {
                        !(matches!(o.msg.body, MessageBody::Decide { .. }) || own_slot_in(o, me, plan.round))
                    }),
                );
                Activation { out, crashed: false }
            }
            Behavior::Byzantine { kind, attacked } => {
                let round = node.inner().round;
                match kind {
                    ByzantineKind::D2 => Activation::default(),
                    ByzantineKind::D3 { subset } => {
                        let out = node.step(delivered, params, signer);
                        Activation {
                            out: restrict(out, subset),
                            crashed: false,
                        }
                    }
                    ByzantineKind::D4 => {
                        let out = node
                            .step(delivered, params, signer)
                            .into_iter()
                            .map(|o| {
                                let bytes = serde_json::to_vec(&o.msg.body).expect("serializable body");
                                Outgoing {
                                    msg: signer.sign(MessageBody::Malformed { bytes }),
                                    to: o.to,
                                }
                            })
                            .collect();
                        Activation { out, crashed: false }
                    }
                    ByzantineKind::D1 { plan } => {
                        let mut out = Vec::new();
                        if attacked.insert(round) {
                            out = equivocate(
                                node,
                                round,
                                (plan.value_a, plan.value_b),
                                (plan.side_a(me), plan.side_b(me)),
                                params,
                                signer,
                            );
                        }
                        let inner = node.step(delivered, params, signer);
                        out.extend(inner.into_iter().filter(|o| {
                            !(matches!(o.msg.body, MessageBody::Decide { .. }) || o.msg.body.slot().is_some())
                        }));
                        Activation { out, crashed: false }
                    }
                    ByzantineKind::D5 | ByzantineKind::D6 => {
                        let split_all = matches!(kind, ByzantineKind::D5);
                        let out = node.step(delivered, params, signer);
                        let mut peers = others(n, me);
                        let half = peers.len() / 2;
                        let mut lo: Vec<PlayerId> = peers.drain(..half).collect();
                        let mut hi = peers;
                        let mut split = Vec::new();
                        for o in out {
                            match o.msg.body.slot() {
                                Some((kind, r, v)) if split_all || r == 0 => {
                                    if r % 2 == 1 {
                                        std::mem::swap(&mut lo, &mut hi);
                                    }
                                    let alt = match (&o.msg.body, kind) {
                                        (MessageBody::Propose { justification, .. }, _) => MessageBody::Propose {
                                            round: r,
                                            value: alt_value(v),
                                            justification: justification.clone(),
                                        },
                                        _ => MessageBody::Vote {
                                            round: r,
                                            value: alt_value(v),
                                        },
                                    };
                                    if !lo.is_empty() {
                                        split.push(Outgoing {
                                            msg: o.msg.clone(),
                                            to: lo.clone(),
                                        });
                                    }
                                    if !hi.is_empty() {
                                        split.push(Outgoing {
                                            msg: signer.sign(alt),
                                            to: hi.clone(),
                                        });
                                    }
                                    if r % 2 == 1 {
                                        std::mem::swap(&mut lo, &mut hi);
                                    }
                                }
                                _ => split.push(o),
                            }
                        }
                        Activation {
                            out: split,
                            crashed: false,
                        }
                    }
                }
            }
        }
    }
}
