//! Core domain types: players, roles, signed messages, equivocation evidence
//! and utility parameters.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::strategies::StrategyKind;

/// Proposal / decision value.
pub type Value = u64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("utility ordering violated: {0}")]
    UtilityOrder(&'static str),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct PlayerId(pub u32);

impl PlayerId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PlayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// All ids `p0..p(n-1)`.
pub fn players(n: usize) -> impl Iterator<Item = PlayerId> {
    (0..n as u32).map(PlayerId)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleKind {
    Correct,
    Rational,
    Crash,
    Byzantine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Role {
    pub kind: RoleKind,
    pub strategy: StrategyKind,
}

impl Role {
    pub fn correct() -> Self {
        Role {
            kind: RoleKind::Correct,
            strategy: StrategyKind::Correct,
        }
    }

    pub fn rational(strategy: StrategyKind) -> Self {
        Role {
            kind: RoleKind::Rational,
            strategy,
        }
    }

    pub fn crash(strategy: StrategyKind) -> Self {
        Role {
            kind: RoleKind::Crash,
            strategy,
        }
    }

    pub fn byzantine(strategy: StrategyKind) -> Self {
        Role {
            kind: RoleKind::Byzantine,
            strategy,
        }
    }

    /// Faulty players (crash or Byzantine) carry no utility.
    pub fn is_faulty(&self) -> bool {
        matches!(self.kind, RoleKind::Crash | RoleKind::Byzantine)
    }
}

/// SHA-256 digest, rendered as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn of_json<T: Serialize + ?Sized>(value: &T) -> Self {
        let bytes = serde_json::to_vec(value).expect("serializable value");
        Self::of(&bytes)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..6])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))?;
        Ok(Digest(arr))
    }
}

/// Opaque token binding (sender, body).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Signature(pub Digest);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MessageBody {
    Propose {
        round: u32,
        value: Value,
        /// Status reports backing the value; empty in round 0.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        justification: Vec<SignedMessage>,
    },
    /// A player's latest vote, sent to the leader when entering a round.
    Status {
        round: u32,
        lock: Option<(u32, Value)>,
    },
    Vote {
        round: u32,
        value: Value,
    },
    Decide {
        round: u32,
        value: Value,
        justification: Vec<SignedMessage>,
    },
    Expose {
        proof: EquivocationProof,
    },
    Relay {
        inner: Box<SignedMessage>,
    },
    DefaultMove,
    Malformed {
        bytes: Vec<u8>,
    },
}

/// Which kind of round-scoped statement a message makes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SlotKind {
    Propose,
    Vote,
}

impl MessageBody {
    /// `(kind, round, value)` for Propose and Vote bodies.
    pub fn slot(&self) -> Option<(SlotKind, u32, Value)> {
        match self {
            MessageBody::Propose { round, value, .. } => Some((SlotKind::Propose, *round, *value)),
            MessageBody::Vote { round, value } => Some((SlotKind::Vote, *round, *value)),
            _ => None,
        }
    }

    fn signing_bytes(&self, sender: PlayerId) -> Vec<u8> {
        let mut bytes = sender.0.to_le_bytes().to_vec();
        bytes.extend(serde_json::to_vec(self).expect("serializable body"));
        bytes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignedMessage {
    pub sender: PlayerId,
    pub body: MessageBody,
    pub signature: Signature,
}

impl SignedMessage {
    pub fn digest(&self) -> Digest {
        Digest::of_json(self)
    }
}

/// Idealized signature scheme: one secret per player, derived from the
/// scenario seed. Tokens are keyed hashes, so nobody without the owner's
/// secret can produce a token that verifies.
#[derive(Clone)]
pub struct KeyRing {
    secrets: Vec<[u8; 32]>,
}

impl fmt::Debug for KeyRing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyRing").field("players", &self.secrets.len()).finish()
    }
}

impl KeyRing {
    pub fn new(n: usize, seed: u64) -> Self {
        let secrets = (0..n as u32)
            .map(|i| {
                let mut h = Sha256::new();
                h.update(b"rcl-signing-key");
                h.update(seed.to_le_bytes());
                h.update(i.to_le_bytes());
                h.finalize().into()
            })
            .collect();
        KeyRing { secrets }
    }

    pub fn len(&self) -> usize {
        self.secrets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.secrets.is_empty()
    }

    fn token(&self, player: PlayerId, body: &MessageBody) -> Option<Signature> {
        let secret = self.secrets.get(player.index())?;
        let mut h = Sha256::new();
        h.update(secret);
        h.update(body.signing_bytes(player));
        Some(Signature(Digest(h.finalize().into())))
    }

    /// Sign `body` as `player`. Deterministic for a fixed seed.
    pub fn sign(&self, player: PlayerId, body: MessageBody) -> SignedMessage {
        let signature = self
            .token(player, &body)
            .expect("signing player must belong to the key ring");
        SignedMessage {
            sender: player,
            body,
            signature,
        }
    }

    /// True iff `msg` was produced by `sign` for `msg.sender` and `msg.body`.
    pub fn verify(&self, msg: &SignedMessage) -> bool {
        self.token(msg.sender, &msg.body) == Some(msg.signature)
    }

    /// Signing capability restricted to one player.
    pub fn signer(&self, me: PlayerId) -> Signer<'_> {
        Signer { ring: self, me }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Signer<'a> {
    ring: &'a KeyRing,
    me: PlayerId,
}

impl<'a> Signer<'a> {
    pub fn me(&self) -> PlayerId {
        self.me
    }

    pub fn sign(&self, body: MessageBody) -> SignedMessage {
        self.ring.sign(self.me, body)
    }

    pub fn verify(&self, msg: &SignedMessage) -> bool {
        self.ring.verify(msg)
    }

    pub fn ring(&self) -> &'a KeyRing {
        self.ring
    }
}

/// Two conflicting signed statements by the same player for the same round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivocationProof {
    pub culprit: PlayerId,
    pub first: Box<SignedMessage>,
    pub second: Box<SignedMessage>,
}

impl EquivocationProof {
    /// Round the conflicting statements refer to.
    pub fn round(&self) -> u32 {
        self.first.body.slot().map(|(_, r, _)| r).unwrap_or(0)
    }

    /// Re-check the proof from scratch.
    pub fn verify(&self, ring: &KeyRing) -> bool {
        match detect_equivocation(ring, &self.first, &self.second) {
            Some(p) => p.culprit == self.culprit,
            None => false,
        }
    }
}

/// `Some(proof)` iff both messages verify, share a sender, are the same kind
/// of statement (Vote or Propose) for the same round, and carry different
/// values.
pub fn detect_equivocation(ring: &KeyRing, m1: &SignedMessage, m2: &SignedMessage) -> Option<EquivocationProof> {
    if m1.sender != m2.sender {
        return None;
    }
    let (k1, r1, v1) = m1.body.slot()?;
    let (k2, r2, v2) = m2.body.slot()?;
    if k1 != k2 || r1 != r2 || v1 == v2 {
        return None;
    }
    if !ring.verify(m1) || !ring.verify(m2) {
        return None;
    }
    Some(EquivocationProof {
        culprit: m1.sender,
        first: Box::new(m1.clone()),
        second: Box::new(m2.clone()),
    })
}

/// Payoff parameters. Only the order relations matter to the checkers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityParams<S> {
    /// Payoff for agreement.
    pub u_agree: S,
    /// Payoff to coalition members for a successful disagreement.
    pub g: S,
    pub p_nonterm: S,
    /// Payoff for suffering a disagreement caused by someone else.
    pub p_victim: S,
    pub u_correct: S,
    /// Reward for a baiter exposing its coalition.
    pub bait_reward: S,
    pub slash: S,
}

impl<S: Scalar> UtilityParams<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        u_agree: S,
        g: S,
        p_nonterm: S,
        p_victim: S,
        u_correct: S,
        bait_reward: S,
        slash: S,
    ) -> Result<Self, ModelError> {
        let p = UtilityParams {
            u_agree,
            g,
            p_nonterm,
            p_victim,
            u_correct,
            bait_reward,
            slash,
        };
        p.validate()?;
        Ok(p)
    }

    /// Build without checking the order relations. Used to explore
    /// pathological valuations (e.g. a slash too small to deter).
    #[allow(clippy::too_many_arguments)]
    pub fn new_unvalidated(
        u_agree: S,
        g: S,
        p_nonterm: S,
        p_victim: S,
        u_correct: S,
        bait_reward: S,
        slash: S,
    ) -> Self {
        UtilityParams {
            u_agree,
            g,
            p_nonterm,
            p_victim,
            u_correct,
            bait_reward,
            slash,
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ModelError> {
        let zero = S::zero();
        if !(self.u_agree > zero) {
            return Err(ModelError::UtilityOrder("u_agree > 0"));
        }
        if !(self.g > self.u_agree) {
            return Err(ModelError::UtilityOrder("g > u_agree"));
        }
        if !(self.bait_reward > self.g) {
            return Err(ModelError::UtilityOrder("bait_reward > g"));
        }
        if !(self.p_nonterm < zero) {
            return Err(ModelError::UtilityOrder("p_nonterm < 0"));
        }
        if !(self.p_victim < zero) {
            return Err(ModelError::UtilityOrder("p_victim < 0"));
        }
        if !(self.u_correct > zero) {
            return Err(ModelError::UtilityOrder("u_correct > 0"));
        }
        if !(self.slash < self.p_victim) {
            return Err(ModelError::UtilityOrder("slash < p_victim"));
        }
        Ok(())
    }

    /// u_agree = 1, g = 10, p_nonterm = -1, p_victim = -5, u_correct = 1,
    /// b = 12, slash = -20.
    pub fn defaults() -> Self {
        Self::new_unvalidated(
            S::lit(1),
            S::lit(10),
            S::lit(-1),
            S::lit(-5),
            S::lit(1),
            S::lit(12),
            S::lit(-20),
        )
    }

    /// Second valuation with the same order relations, used to show verdicts
    /// do not depend on concrete numbers.
    pub fn alternate() -> Self {
        Self::new_unvalidated(
            S::lit(2),
            S::lit(50),
            S::lit(-3),
            S::lit(-10),
            S::lit(2),
            S::lit(55),
            S::lit(-100),
        )
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T) -> UtilityParams<T> {
        UtilityParams {
            u_agree: f(self.u_agree),
            g: f(self.g),
            p_nonterm: f(self.p_nonterm),
            p_victim: f(self.p_victim),
            u_correct: f(self.u_correct),
            bait_reward: f(self.bait_reward),
            slash: f(self.slash),
        }
    }
}

impl<S: Scalar> Default for UtilityParams<S> {
    fn default() -> Self {
        Self::defaults()
    }
}
