"""Strategy archetypes mapping per-round observations to bids.

Agents see exactly what a live participant sees: their own urgency, karma,
round position, and the history of their own past outcomes. Nothing about
the opponent's urgency or karma ever enters an Observation. Agents carry
their own RNG, seeded independently of the engine, so engine traces stay
reproducible when the agent mix changes.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .core import ConfigError, GameConfig, Scheme, allowed_bids, max_allowed_bid
from .equilibrium import Policy


@dataclass(frozen=True, slots=True)
class RoundOutcome:
    """One past round from a single participant's point of view."""

    won: bool
    own_bid: int
    opponent_bid: int
    payment: int        # own bid when won, else 0
    received: int       # redistribution grant


@dataclass(slots=True)
class Observation:
    """Everything an agent may condition on in one round."""

    urgency: int
    karma: int
    round_index: int    # 1-based within the current phase
    is_test: bool
    scheme: Scheme
    history: Sequence[RoundOutcome] = field(default_factory=tuple)


def agent_rng(base_seed: int, seat: int) -> random.Random:
    """The canonical per-seat agent stream, shared by simulator and server."""
    return random.Random(f"{base_seed}:agent:{seat}")


class Agent:
    """Base strategy. Subclasses implement decide and must stay total."""

    kind = "agent"

    def __init__(self, rng: Optional[random.Random] = None):
        self.rng = rng or random.Random(0)

    def decide(self, obs: Observation) -> int:
        raise NotImplementedError


class ZeroBidder(Agent):
    """Always bids zero: the non-adopter archetype."""

    kind = "zero"

    def decide(self, obs: Observation) -> int:
        return 0


class UniformRandom(Agent):
    """Uniform draw over the allowed bid set."""

    kind = "uniform"

    def decide(self, obs: Observation) -> int:
        if obs.scheme is Scheme.FULL_RANGE:
            return self.rng.randint(0, obs.karma)
        return self.rng.choice(allowed_bids(obs.scheme, obs.karma))


class UrgencyThreshold(Agent):
    """Bid the maximum allowed when urgent, nothing otherwise."""

    kind = "threshold"

    def __init__(self, urgency_high: int, rng: Optional[random.Random] = None):
        super().__init__(rng)
        self.urgency_high = urgency_high

    def decide(self, obs: Observation) -> int:
        if obs.urgency == self.urgency_high:
            return max_allowed_bid(obs.scheme, obs.karma)
        return 0


class PolicyAgent(Agent):
    """Samples bids from an equilibrium policy table."""

    kind = "policy"

    def __init__(self, policy: Policy, rng: Optional[random.Random] = None):
        super().__init__(rng)
        self.policy = policy

    def decide(self, obs: Observation) -> int:
        return self.policy.sample(obs.urgency, obs.karma, self.rng)


class Scripted(Agent):
    """Replays a fixed bid sequence; infeasible entries fall back to zero."""

    kind = "scripted"

    def __init__(self, bids: Sequence[int], rng: Optional[random.Random] = None):
        super().__init__(rng)
        self.bids = list(bids)
        self._cursor = 0

    def decide(self, obs: Observation) -> int:
        if self._cursor < len(self.bids):
            bid = self.bids[self._cursor]
            self._cursor += 1
        else:
            bid = 0
        if bid in allowed_bids(obs.scheme, obs.karma):
            return bid
        return 0


@dataclass(frozen=True)
class AgentSpec:
    """Population entry: how many seats run which strategy."""

    kind: str
    count: int
    params: dict = field(default_factory=dict)


AGENT_KINDS = ("zero", "uniform", "threshold", "policy", "scripted")


def parse_population(text: str) -> list[AgentSpec]:
    """Parse 'policy:18,zero:2' style population strings."""
    specs = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            kind, count = part.split(":")
            specs.append(AgentSpec(kind.strip(), int(count)))
        except ValueError as exc:
            raise ConfigError(f"bad population entry {part!r}: expected kind:count") from exc
    return specs


def build_agents(
    specs: Sequence[AgentSpec],
    config: GameConfig,
    base_seed: int,
    policy: Optional[Policy] = None,
) -> list[Agent]:
    """Instantiate one agent per seat, seeded by seat index.

    ``policy`` supplies the table for PolicyAgent seats unless a spec
    carries its own under params['policy'].
    """
    agents: list[Agent] = []
    for spec in specs:
        if spec.kind not in AGENT_KINDS:
            raise ConfigError(f"unknown agent kind {spec.kind!r}; expected {AGENT_KINDS}")
        if spec.count < 0:
            raise ConfigError("agent count must be nonnegative")
        for _ in range(spec.count):
            seat = len(agents)
            rng = agent_rng(base_seed, seat)
            if spec.kind == "zero":
                agents.append(ZeroBidder(rng))
            elif spec.kind == "uniform":
                agents.append(UniformRandom(rng))
            elif spec.kind == "threshold":
                agents.append(UrgencyThreshold(config.urgency_high, rng))
            elif spec.kind == "policy":
                table = spec.params.get("policy", policy)
                if table is None:
                    raise ConfigError("policy agents need a policy table")
                agents.append(PolicyAgent(table, rng))
            else:
                agents.append(Scripted(spec.params.get("bids", ()), rng))
    if len(agents) != config.n_participants:
        raise ConfigError(
            f"population fills {len(agents)} of {config.n_participants} seats"
        )
    return agents
