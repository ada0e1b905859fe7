"""Deterministic engine for the karma bidding game.

One game runs a fixed number of unscored practice rounds followed by the
scored main rounds. Every round: private urgencies are drawn, participants
are matched in random pairs, each pair is resolved by a sealed-bid contest,
the winner pays its bid, and the total payment is redistributed uniformly
in an integer-preserving, cap-respecting way. Total karma is conserved
exactly (N * karma_init) after every completed round.

Randomness is split into two named streams derived from the game seed:

* an environment stream per round (urgencies in participant-index order,
  then the matching shuffle), derived from ``(seed, round)`` so that
  counterfactual baselines run against identical urgency/matching traces;
* a resolution stream per game (tie-breaks in pair order, then the
  redistribution remainder subset, then cap-reissue draws).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional


class ConfigError(ValueError):
    """Raised when a game configuration violates its invariants."""


class EngineError(RuntimeError):
    """Raised when engine operations are used out of order or break state."""


class InvalidBidError(EngineError):
    """Raised for a bid outside the bidder's allowed set."""

    def __init__(self, participant: int, bid: int, allowed: list[int]):
        self.participant = participant
        self.bid = bid
        self.allowed = allowed
        super().__init__(
            f"participant {participant}: bid {bid} not in allowed set {allowed}"
        )


class Scheme(str, Enum):
    """Richness of the bidding scheme."""

    BINARY = "binary"          # bids restricted to {0, karma // 2}
    FULL_RANGE = "full-range"  # any integer bid from 0 up to current karma


@dataclass(frozen=True)
class FeeParams:
    """Monetary payoff parameters: fees are computed, never transacted."""

    target_score: float        # score earning the target bonus
    random_score: float        # score anchored to the random-bidding bonus
    target_fee: float          # bonus at the target score, in dollars
    random_fee: float          # bonus at the random score
    fixed_fee: float           # show-up fee, forfeited when dropped
    inactive_limit: int = 6    # consecutive zero-default rounds before dropping
    decision_seconds: float = 10.0  # per-round decision window

    def validate(self) -> None:
        if not self.target_score > self.random_score:
            raise ConfigError("target_score must exceed random_score")
        if not (self.target_fee > self.random_fee >= 0):
            raise ConfigError("need target_fee > random_fee >= 0")
        if self.inactive_limit < 0 or self.decision_seconds <= 0:
            raise ConfigError("inactive_limit >= 0 and decision_seconds > 0 required")


@dataclass(frozen=True)
class GameConfig:
    """All mechanism and treatment parameters for one game."""

    n_participants: int
    n_rounds: int
    karma_init: int
    karma_max: int
    urgency_low: int
    urgency_high: int
    p_high: float
    scheme: Scheme
    fee: FeeParams
    seed: int = 0
    n_test_rounds: int = 0
    label: str = ""

    def validate(self) -> None:
        problems = []
        if self.n_participants <= 0 or self.n_participants % 2:
            problems.append(f"n_participants must be positive and even, got {self.n_participants}")
        if self.n_rounds <= 0:
            problems.append("n_rounds must be positive")
        if self.n_test_rounds < 0:
            problems.append("n_test_rounds must be nonnegative")
        if self.karma_init < 0:
            problems.append("karma_init must be nonnegative")
        if self.karma_max <= 0:
            problems.append("karma_max must be positive")
        if self.karma_init > self.karma_max:
            problems.append(f"karma_init {self.karma_init} exceeds karma_max {self.karma_max}")
        if not (self.urgency_high > self.urgency_low > 0):
            problems.append("need urgency_high > urgency_low > 0")
        if not 0.0 <= self.p_high <= 1.0:
            problems.append(f"p_high must be in [0, 1], got {self.p_high}")
        if problems:
            raise ConfigError("; ".join(problems))
        self.fee.validate()

    @property
    def total_rounds(self) -> int:
        return self.n_test_rounds + self.n_rounds


def allowed_bids(scheme: Scheme, karma: int) -> list[int]:
    """The feasible bid set for the given scheme and karma balance."""
    if karma < 0:
        raise ValueError(f"negative karma {karma}")
    if scheme is Scheme.BINARY:
        half = karma // 2
        return [0] if half == 0 else [0, half]
    return list(range(karma + 1))


def is_allowed_bid(scheme: Scheme, karma: int, bid: int) -> bool:
    if scheme is Scheme.BINARY:
        return bid == 0 or bid == karma // 2
    return 0 <= bid <= karma


def max_allowed_bid(scheme: Scheme, karma: int) -> int:
    return karma // 2 if scheme is Scheme.BINARY else karma


def resolve_pair(bid_a: int, bid_b: int, rng: random.Random) -> tuple[int, bool]:
    """Resolve one contest. Returns (winner slot 0 or 1, tied?).

    The strictly higher bid wins; equal bids are settled by a fair coin.
    """
    if bid_a > bid_b:
        return 0, False
    if bid_b > bid_a:
        return 1, False
    return (0 if rng.random() < 0.5 else 1), True


def redistribute(karma: list[int], p_tot: int, karma_max: int, rng: random.Random) -> list[int]:
    """Integer-preserving uniform redistribution of ``p_tot`` over participants.

    ``karma`` is the balance vector after this round's payments were deducted.
    Everyone receives ``p_tot // n``; the remainder goes as +1 to a random
    subset of below-cap participants. Grants that would push a participant
    over ``karma_max`` are withheld and reissued one unit at a time to
    uniformly random below-cap participants. The grants always sum to
    ``p_tot`` exactly.
    """
    n = len(karma)
    if p_tot == 0:
        return [0] * n
    base, rem = divmod(p_tot, n)

    # Fast path: no participant can hit the cap this round.
    if max(karma) + base + (1 if rem else 0) <= karma_max:
        grants = [base] * n
        if rem:
            for i in rng.sample(range(n), rem):
                grants[i] += 1
        return grants

    grants = [0] * n
    pool = 0
    for i in range(n):
        room = karma_max - karma[i]
        g = base if base <= room else room
        grants[i] = g
        pool += base - g
    if rem:
        open_seats = [i for i in range(n) if karma[i] + grants[i] < karma_max]
        if len(open_seats) >= rem:
            for i in rng.sample(open_seats, rem):
                grants[i] += 1
        else:
            for i in open_seats:
                grants[i] += 1
            pool += rem - len(open_seats)
    while pool:
        below = [i for i in range(n) if karma[i] + grants[i] < karma_max]
        if not below:
            raise ConfigError(
                "cannot redistribute: all participants at karma_max with "
                f"{pool} karma left over (total karma exceeds capacity)"
            )
        grants[rng.choice(below)] += 1
        pool -= 1
    return grants


@dataclass
class RoundRecord:
    """Full trace of one completed round."""

    round_index: int           # 1-based within its phase
    is_test: bool
    urgencies: list[int]
    pairing: list[tuple[int, int]]
    bids: list[int]            # every submitted bid, losers included
    winners: list[int]         # winning participant index, one per pair
    ties: list[bool]           # one per pair, True when settled by coin
    payments_total: int
    redistribution: list[int]
    karma_after: list[int]
    score_after: list[int]


@dataclass
class PlayerState:
    karma: int
    score: int = 0
    consecutive_inactive: int = 0
    dropped: bool = False


def _round_rng(seed: int, round_no: int) -> random.Random:
    # String seeding is stable across platforms and Python versions.
    return random.Random(f"{seed}:round:{round_no}")


def _flow_rng(seed: int) -> random.Random:
    return random.Random(f"{seed}:flow")


def draw_round_urgencies(rng: random.Random, config: GameConfig) -> list[int]:
    """Independent urgency draws in participant-index order."""
    p, uh, ul = config.p_high, config.urgency_high, config.urgency_low
    return [uh if rng.random() < p else ul for _ in range(config.n_participants)]


def draw_round_matching(rng: random.Random, n: int) -> list[tuple[int, int]]:
    """Uniform perfect matching: shuffle indices, pair consecutive entries."""
    if n % 2:
        raise EngineError(f"cannot match an odd population of {n}")
    idx = list(range(n))
    rng.shuffle(idx)
    return [(idx[i], idx[i + 1]) for i in range(0, n, 2)]


class GameState:
    """Mutable state of one running game. Strictly sequential, never shared."""

    def __init__(self, config: GameConfig, record_trace: bool = True):
        config.validate()
        self.config = config
        self.n = config.n_participants
        self.karma = [config.karma_init] * self.n
        self.score = [0] * self.n
        self.records: list[RoundRecord] = []
        self.record_trace = record_trace
        self.rounds_played = 0
        self._flow = _flow_rng(config.seed)
        self._urgencies: Optional[list[int]] = None
        self._pairing: Optional[list[tuple[int, int]]] = None
        self._env: Optional[random.Random] = None

    # -- round phase bookkeeping ------------------------------------------

    @property
    def finished(self) -> bool:
        return self.rounds_played >= self.config.total_rounds

    @property
    def current_round(self) -> int:
        """Global 1-based index of the round being played or about to start."""
        return self.rounds_played + 1

    @property
    def in_test_phase(self) -> bool:
        return self.current_round <= self.config.n_test_rounds

    @property
    def round_in_phase(self) -> int:
        """1-based index within the test phase or the main phase."""
        r = self.current_round
        return r if self.in_test_phase else r - self.config.n_test_rounds

    @property
    def staged_urgencies(self) -> Optional[list[int]]:
        return self._urgencies

    @property
    def staged_pairing(self) -> Optional[list[tuple[int, int]]]:
        return self._pairing

    # -- the round lifecycle ----------------------------------------------

    def draw_urgencies(self) -> list[int]:
        if self.finished:
            raise EngineError("game already finished")
        if self._urgencies is not None:
            raise EngineError("urgencies already drawn for this round")
        self._env = _round_rng(self.config.seed, self.current_round)
        self._urgencies = draw_round_urgencies(self._env, self.config)
        return list(self._urgencies)

    def random_matching(self) -> list[tuple[int, int]]:
        if self._urgencies is None:
            raise EngineError("draw urgencies before matching (fixed draw order)")
        if self._pairing is not None:
            raise EngineError("matching already drawn for this round")
        self._pairing = draw_round_matching(self._env, self.n)
        return list(self._pairing)

    def step_round(self, bids: list[int]) -> RoundRecord:
        """Resolve all pairs, move karma, update scores, append the record."""
        if self._urgencies is None or self._pairing is None:
            raise EngineError("round not staged: draw urgencies and matching first")
        if len(bids) != self.n:
            raise EngineError(f"expected {self.n} bids, got {len(bids)}")
        scheme = self.config.scheme
        karma = self.karma
        for i, b in enumerate(bids):
            if not is_allowed_bid(scheme, karma[i], b):
                raise InvalidBidError(i, b, allowed_bids(scheme, karma[i]))

        urgencies = self._urgencies
        pairing = self._pairing
        flow = self._flow
        winners: list[int] = []
        ties: list[bool] = []
        p_tot = 0
        for a, b in pairing:
            slot, tied = resolve_pair(bids[a], bids[b], flow)
            w = a if slot == 0 else b
            winners.append(w)
            ties.append(tied)
            karma[w] -= bids[w]
            p_tot += bids[w]

        grants = redistribute(karma, p_tot, self.config.karma_max, flow)
        for i, g in enumerate(grants):
            karma[i] += g

        total = self.n * self.config.karma_init
        if sum(karma) != total:
            raise EngineError(
                f"karma conservation broken: {sum(karma)} != {total}"
            )

        is_test = self.in_test_phase
        if not is_test:
            for w in winners:
                self.score[w] += urgencies[w]

        record = RoundRecord(
            round_index=self.round_in_phase,
            is_test=is_test,
            urgencies=urgencies,
            pairing=pairing,
            bids=list(bids),
            winners=winners,
            ties=ties,
            payments_total=p_tot,
            redistribution=grants,
            karma_after=list(karma),
            score_after=list(self.score),
        )
        if self.record_trace:
            self.records.append(record)

        self.rounds_played += 1
        self._urgencies = None
        self._pairing = None
        self._env = None
        # Practice rounds run live karma but cannot carry an advantage into
        # the scored game: balances reset when the main phase starts.
        if is_test and self.rounds_played == self.config.n_test_rounds:
            for i in range(self.n):
                karma[i] = self.config.karma_init
        return record


def new_game(config: GameConfig, record_trace: bool = True) -> GameState:
    return GameState(config, record_trace=record_trace)


# -- treatment presets -----------------------------------------------------

PRESET_NAMES = ("low-binary", "low-full", "high-binary", "high-full")


def preset(name: str, seed: int = 0) -> GameConfig:
    """Built-in treatment configurations of the 2x2 experimental design."""
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {name!r}; expected one of {PRESET_NAMES}")
    stake, scheme_part = name.split("-")
    high_stake = stake == "high"
    fee = FeeParams(
        target_score=101.25 if high_stake else 90.0,
        random_score=37.5,
        target_fee=10.0,
        random_fee=1.0,
        fixed_fee=1.5,
        inactive_limit=6,
        decision_seconds=10.0,
    )
    return GameConfig(
        n_participants=20,
        n_rounds=50,
        n_test_rounds=5,
        karma_init=9,
        karma_max=18,
        urgency_low=1,
        urgency_high=9 if high_stake else 5,
        p_high=0.25 if high_stake else 0.5,
        scheme=Scheme.BINARY if scheme_part == "binary" else Scheme.FULL_RANGE,
        fee=fee,
        seed=seed,
        label=name,
    )


def resolve_config(name_or_config, seed: Optional[int] = None) -> GameConfig:
    """Accept a preset name or a GameConfig; optionally override the seed."""
    cfg = preset(name_or_config) if isinstance(name_or_config, str) else name_or_config
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


# -- serialization ---------------------------------------------------------

def config_to_dict(config: GameConfig) -> dict:
    d = {
        "n_participants": config.n_participants,
        "n_rounds": config.n_rounds,
        "n_test_rounds": config.n_test_rounds,
        "karma_init": config.karma_init,
        "karma_max": config.karma_max,
        "urgency_low": config.urgency_low,
        "urgency_high": config.urgency_high,
        "p_high": config.p_high,
        "scheme": config.scheme.value,
        "seed": config.seed,
        "label": config.label,
        "fee": {
            "target_score": config.fee.target_score,
            "random_score": config.fee.random_score,
            "target_fee": config.fee.target_fee,
            "random_fee": config.fee.random_fee,
            "fixed_fee": config.fee.fixed_fee,
            "inactive_limit": config.fee.inactive_limit,
            "decision_seconds": config.fee.decision_seconds,
        },
    }
    return d


def config_from_dict(d: dict) -> GameConfig:
    try:
        fee = FeeParams(**d["fee"])
        cfg = GameConfig(
            n_participants=d["n_participants"],
            n_rounds=d["n_rounds"],
            n_test_rounds=d.get("n_test_rounds", 0),
            karma_init=d["karma_init"],
            karma_max=d["karma_max"],
            urgency_low=d["urgency_low"],
            urgency_high=d["urgency_high"],
            p_high=d["p_high"],
            scheme=Scheme(d["scheme"]),
            fee=fee,
            seed=d.get("seed", 0),
            label=d.get("label", ""),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad config document: {exc}") from exc
    cfg.validate()
    return cfg


def record_to_dict(rec: RoundRecord) -> dict:
    return {
        "round_index": rec.round_index,
        "is_test": rec.is_test,
        "urgencies": rec.urgencies,
        "pairing": [list(p) for p in rec.pairing],
        "bids": rec.bids,
        "winners": rec.winners,
        "ties": rec.ties,
        "payments_total": rec.payments_total,
        "redistribution": rec.redistribution,
        "karma_after": rec.karma_after,
        "score_after": rec.score_after,
    }


def record_from_dict(d: dict) -> RoundRecord:
    return RoundRecord(
        round_index=d["round_index"],
        is_test=d["is_test"],
        urgencies=d["urgencies"],
        pairing=[tuple(p) for p in d["pairing"]],
        bids=d["bids"],
        winners=d["winners"],
        ties=d["ties"],
        payments_total=d["payments_total"],
        redistribution=d["redistribution"],
        karma_after=d["karma_after"],
        score_after=d["score_after"],
    )


def write_trace(path, config: GameConfig, records: Iterable[RoundRecord]) -> None:
    """One JSON-lines file per game: a config header, then one row per round."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"record": "config", "config": config_to_dict(config)}) + "\n")
        for rec in records:
            fh.write(json.dumps({"record": "round", **record_to_dict(rec)}) + "\n")


def read_trace(path) -> tuple[GameConfig, list[RoundRecord]]:
    config = None
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            if d.get("record") == "config":
                config = config_from_dict(d["config"])
            elif d.get("record") == "round":
                records.append(record_from_dict(d))
    if config is None:
        raise ValueError(f"trace {path} has no config header")
    return config, records
