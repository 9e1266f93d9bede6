//! Scenario configuration: one fully specified game instance.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::{Digest, ModelError, PlayerId, Role, RoleKind, UtilityParams, Value};
use crate::protocol::ProtocolParams;
use crate::scalar::Scalar;
use crate::scheduler::SchedulerPolicy;
use crate::strategies::{DisagreePlan, StrategyKind};

/// Which protocol correct players run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolVariant {
    /// Plain rotating-leader quorum protocol.
    #[default]
    Base,
    /// Base protocol wrapped with filtering, relaying and blacklisting.
    Extended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "S: Scalar"))]
pub struct ScenarioConfig<S> {
    pub n: usize,
    /// Rational budget.
    pub k: usize,
    /// Fault budget (crash + Byzantine).
    pub t: usize,
    pub roles: Vec<Role>,
    pub quorum_r: usize,
    /// Scheduler-private delivery bound, in scheduler moves.
    pub delta: u64,
    pub fairness_window: u64,
    pub max_rounds: u32,
    pub horizon: u64,
    /// Own activations a player waits in a round before moving on.
    pub round_timeout: u32,
    pub utility: UtilityParams<S>,
    pub seed: u64,
    #[serde(default)]
    pub policy: SchedulerPolicy,
    #[serde(default)]
    pub protocol: ProtocolVariant,
    /// Correct players act on `Expose` messages and payoffs include
    /// punishment adjustments.
    #[serde(default)]
    pub baiting: bool,
    /// Allows crash and Byzantine players in the same scenario.
    #[serde(default)]
    pub mixed_faults: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<Value>>,
}

/// Default round timeout: `6n` own activations.
pub fn default_round_timeout(n: usize) -> u32 {
    6 * n as u32
}

/// Default delivery bound: `4n` scheduler moves.
pub fn default_delta(n: usize) -> u64 {
    4 * n as u64
}

/// Steps in one round when every live player moves once per cycle.
pub fn round_length(n: usize, round_timeout: u32) -> u64 {
    round_timeout as u64 * n as u64
}

/// Enough scheduler moves for `max_rounds` rounds after all messages held
/// for `delta` have arrived.
pub fn default_horizon(n: usize, max_rounds: u32, round_timeout: u32, delta: u64) -> u64 {
    delta + (max_rounds as u64 + 2) * round_length(n, round_timeout)
}

impl<S: Scalar> ScenarioConfig<S> {
    /// All-correct scenario with default timing.
    pub fn new(n: usize, quorum_r: usize) -> Self {
        let round_timeout = default_round_timeout(n);
        let delta = default_delta(n);
        let max_rounds = n as u32;
        ScenarioConfig {
            n,
            k: 0,
            t: 0,
            roles: vec![Role::correct(); n],
            quorum_r,
            delta,
            fairness_window: 2 * n as u64,
            max_rounds,
            horizon: default_horizon(n, max_rounds, round_timeout, delta),
            round_timeout,
            utility: UtilityParams::defaults(),
            seed: 0,
            policy: SchedulerPolicy::RoundRobin,
            protocol: ProtocolVariant::Base,
            baiting: false,
            mixed_faults: false,
            inputs: None,
        }
    }

    pub fn with_budgets(mut self, k: usize, t: usize) -> Self {
        self.k = k;
        self.t = t;
        self
    }

    pub fn with_role(mut self, p: PlayerId, role: Role) -> Self {
        self.roles[p.index()] = role;
        self
    }

    pub fn with_policy(mut self, policy: SchedulerPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_protocol(mut self, protocol: ProtocolVariant) -> Self {
        self.protocol = protocol;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Change the delivery bound and stretch the horizon to match.
    pub fn with_delta(mut self, delta: u64) -> Self {
        self.delta = delta;
        self.horizon = default_horizon(self.n, self.max_rounds, self.round_timeout, delta);
        self
    }

    pub fn input_of(&self, p: PlayerId) -> Value {
        match &self.inputs {
            Some(v) => v[p.index()],
            None => 100 + p.0 as Value,
        }
    }

    pub fn protocol_params(&self) -> ProtocolParams {
        ProtocolParams {
            n: self.n,
            quorum_r: self.quorum_r,
            max_rounds: self.max_rounds,
            round_timeout: self.round_timeout,
            baiting: self.baiting,
        }
    }

    pub fn role(&self, p: PlayerId) -> &Role {
        &self.roles[p.index()]
    }

    pub fn count(&self, kind: RoleKind) -> usize {
        self.roles.iter().filter(|r| r.kind == kind).count()
    }

    /// The single coalition plan declared by rational deviators, if any.
    pub fn coalition_plan(&self) -> Option<&DisagreePlan> {
        self.roles.iter().find_map(|r| r.strategy.plan())
    }

    /// Players that deviate from the protocol: coalition members and allies
    /// and Byzantine players.
    pub fn deviating(&self) -> BTreeSet<PlayerId> {
        let mut out: BTreeSet<PlayerId> = crate::model::players(self.n)
            .filter(|p| {
                let role = self.role(*p);
                role.kind == RoleKind::Byzantine
                    || matches!(
                        role.strategy,
                        StrategyKind::RationalDisagree { .. } | StrategyKind::RationalBait { .. }
                    )
            })
            .collect();
        if let Some(plan) = self.coalition_plan() {
            out.extend(plan.members.iter().copied());
            out.extend(plan.allies.iter().copied());
        }
        out
    }

    pub fn digest(&self) -> Digest {
        Digest::of_json(self)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidScenario(m));
        if self.n == 0 || self.n > 64 {
            return bad(format!("n = {} outside 1..=64", self.n));
        }
        if self.quorum_r == 0 || self.quorum_r > self.n {
            return bad(format!("quorum_r = {} outside 1..={}", self.quorum_r, self.n));
        }
        if self.delta < 1 {
            return bad("delta must be at least 1".into());
        }
        if self.round_timeout < 1 {
            return bad("round_timeout must be at least 1".into());
        }
        if self.fairness_window < 1 {
            return bad("fairness_window must be at least 1".into());
        }
        if self.horizon < self.max_rounds as u64 * self.n as u64 {
            return bad("horizon must be at least max_rounds * n".into());
        }
        if self.roles.len() != self.n {
            return bad(format!("{} roles for {} players", self.roles.len(), self.n));
        }
        if let Some(inputs) = &self.inputs {
            if inputs.len() != self.n {
                return bad("inputs must list one value per player".into());
            }
        }
        let rational = self.count(RoleKind::Rational);
        let crash = self.count(RoleKind::Crash);
        let byz = self.count(RoleKind::Byzantine);
        if rational > self.k {
            return bad(format!("{rational} rational players exceed k = {}", self.k));
        }
        if crash + byz > self.t {
            return bad(format!("{} faulty players exceed t = {}", crash + byz, self.t));
        }
        if crash > 0 && byz > 0 && !self.mixed_faults {
            return bad("crash and Byzantine players mixed without mixed_faults".into());
        }
        for (i, role) in self.roles.iter().enumerate() {
            if !role.strategy.compatible_with(role.kind) {
                return bad(format!(
                    "p{i}: strategy {:?} not valid for {:?}",
                    role.strategy, role.kind
                ));
            }
            for p in role.strategy.referenced_players() {
                if p.index() >= self.n {
                    return bad(format!("p{i}: strategy references {p} outside the scenario"));
                }
            }
        }
        let plans: Vec<&DisagreePlan> = self.roles.iter().filter_map(|r| r.strategy.plan()).collect();
        if let Some(first) = plans.first() {
            if plans.iter().any(|p| p != first) {
                return bad("more than one coalition declared".into());
            }
            first.validate().map_err(ModelError::InvalidScenario)?;
        }
        if let SchedulerPolicy::PartitionAdversary { group_a, group_b, .. } = &self.policy {
            if !group_a.is_disjoint(group_b) {
                return bad("partition groups overlap".into());
            }
        }
        self.utility.validate()
    }
}
