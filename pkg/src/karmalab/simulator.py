"""Batch game execution, counterfactual baselines, and dataset plumbing.

``RoundDriver`` is the single implementation of one round's lifecycle
(stage urgencies and matching, collect bids, resolve, hand each seat its
private feedback). Both the batch simulator and the live experiment server
drive games exclusively through it, which is what makes a headless server
session reproduce ``run_game`` traces bit for bit.

Baselines share the engine's per-round randomness streams, so a karma run
and a baseline run at the same seed face identical urgency and matching
sequences and differ only in the allocation rule.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from .agents import Agent, AgentSpec, Observation, RoundOutcome, build_agents
from .core import (
    ConfigError,
    GameConfig,
    GameState,
    RoundRecord,
    allowed_bids,
    config_from_dict,
    config_to_dict,
    draw_round_matching,
    draw_round_urgencies,
    new_game,
    _flow_rng,
    _round_rng,
)
from .equilibrium import Policy


@dataclass
class SeatRound:
    """What one seat is told at the start of a round."""

    seat: int
    urgency: int
    karma: int
    allowed: list[int]
    round_index: int    # 1-based within phase
    is_test: bool


@dataclass
class SeatFeedback:
    """What one seat is told after a round resolves."""

    seat: int
    won: bool
    own_bid: int
    opponent_bid: int
    payment: int
    received: int
    karma_after: int
    score_after: int
    tie: bool


class RoundDriver:
    """Runs one game round by round against the shared engine state."""

    def __init__(self, game: GameState):
        self.game = game
        self.config = game.config

    @property
    def finished(self) -> bool:
        return self.game.finished

    def start_round(self) -> list[SeatRound]:
        game = self.game
        urgencies = game.draw_urgencies()
        game.random_matching()
        return [
            SeatRound(
                seat=i,
                urgency=urgencies[i],
                karma=game.karma[i],
                allowed=allowed_bids(self.config.scheme, game.karma[i]),
                round_index=game.round_in_phase,
                is_test=game.in_test_phase,
            )
            for i in range(game.n)
        ]

    def resolve(self, bids: list[int]) -> tuple[RoundRecord, list[SeatFeedback]]:
        rec = self.game.step_round(bids)
        partner = {}
        for a, b in rec.pairing:
            partner[a] = b
            partner[b] = a
        winners = set(rec.winners)
        tied_pairs = {
            frozenset(pair) for pair, tie in zip(rec.pairing, rec.ties) if tie
        }
        feedback = []
        for i in range(self.game.n):
            j = partner[i]
            won = i in winners
            feedback.append(
                SeatFeedback(
                    seat=i,
                    won=won,
                    own_bid=rec.bids[i],
                    opponent_bid=rec.bids[j],
                    payment=rec.bids[i] if won else 0,
                    received=rec.redistribution[i],
                    karma_after=rec.karma_after[i],
                    score_after=rec.score_after[i],
                    tie=frozenset((i, j)) in tied_pairs,
                )
            )
        return rec, feedback


def observe(seat_round: SeatRound, scheme, history: Sequence[RoundOutcome]) -> Observation:
    return Observation(
        urgency=seat_round.urgency,
        karma=seat_round.karma,
        round_index=seat_round.round_index,
        is_test=seat_round.is_test,
        scheme=scheme,
        history=history,
    )


def outcome_from_feedback(fb: SeatFeedback) -> RoundOutcome:
    return RoundOutcome(
        won=fb.won,
        own_bid=fb.own_bid,
        opponent_bid=fb.opponent_bid,
        payment=fb.payment,
        received=fb.received,
    )


# -- single game -----------------------------------------------------------

@dataclass
class GameResult:
    config: GameConfig
    seed: int
    agent_kinds: list[str]
    scores: list[int]
    s_rand: list[float]              # half the realized main-phase urgency sum
    urgency_traces: list[list[int]]  # main-phase urgencies per participant
    records: list[RoundRecord] = field(default_factory=list)

    def gains(self) -> list[float]:
        return [
            (s - sr) / sr for s, sr in zip(self.scores, self.s_rand)
        ]


def run_game(
    config: GameConfig,
    agents: Sequence[Agent],
    keep_trace: bool = True,
) -> GameResult:
    """Play one full game (test phase included) with the given agents."""
    if len(agents) != config.n_participants:
        raise ConfigError(
            f"{len(agents)} agents for {config.n_participants} seats"
        )
    game = new_game(config, record_trace=keep_trace)
    driver = RoundDriver(game)
    n = config.n_participants
    histories: list[list[RoundOutcome]] = [[] for _ in range(n)]
    urgency_traces: list[list[int]] = [[] for _ in range(n)]
    while not driver.finished:
        seat_rounds = driver.start_round()
        if not seat_rounds[0].is_test:
            for i in range(n):
                urgency_traces[i].append(seat_rounds[i].urgency)
        bids = [
            agents[i].decide(observe(seat_rounds[i], config.scheme, histories[i]))
            for i in range(n)
        ]
        _, feedback = driver.resolve(bids)
        for i in range(n):
            histories[i].append(outcome_from_feedback(feedback[i]))
    s_rand = [0.5 * sum(t) for t in urgency_traces]
    return GameResult(
        config=config,
        seed=config.seed,
        agent_kinds=[a.kind for a in agents],
        scores=list(game.score),
        s_rand=s_rand,
        urgency_traces=urgency_traces,
        records=game.records,
    )


# -- datasets --------------------------------------------------------------

@dataclass
class ParticipantRow:
    game: int
    participant: int
    agent_kind: str
    score: float
    s_rand: float
    gain: float
    dropped: bool = False    # live sessions only; simulated seats never drop


@dataclass
class Dataset:
    """Flat per-participant table plus the provenance needed to reuse it."""

    rows: list[ParticipantRow]
    config: GameConfig
    source: str                      # karma | random | turn-taking
    base_seed: int
    n_games: int

    def gains(self) -> list[float]:
        return [r.gain for r in self.rows]

    def write_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["game", "participant", "agent_kind", "S", "S_rand", "gain", "dropped"]
            )
            for r in self.rows:
                writer.writerow(
                    [r.game, r.participant, r.agent_kind,
                     f"{r.score:g}", f"{r.s_rand:g}", repr(r.gain),
                     "true" if r.dropped else "false"]
                )
        meta = {
            "source": self.source,
            "base_seed": self.base_seed,
            "n_games": self.n_games,
            "config": config_to_dict(self.config),
        }
        path.with_suffix(".meta.json").write_text(
            json.dumps(meta, indent=2), encoding="utf-8"
        )

    @classmethod
    def read_csv(cls, path) -> "Dataset":
        path = Path(path)
        meta_path = path.with_suffix(".meta.json")
        if not meta_path.exists():
            raise ConfigError(f"dataset {path} has no sidecar {meta_path.name}")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        rows = []
        with path.open(newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                rows.append(
                    ParticipantRow(
                        game=int(rec["game"]),
                        participant=int(rec["participant"]),
                        agent_kind=rec["agent_kind"],
                        score=float(rec["S"]),
                        s_rand=float(rec["S_rand"]),
                        gain=float(rec["gain"]),
                        dropped=rec.get("dropped", "false") == "true",
                    )
                )
        return cls(
            rows=rows,
            config=config_from_dict(meta["config"]),
            source=meta["source"],
            base_seed=meta["base_seed"],
            n_games=meta["n_games"],
        )


@dataclass
class BatchSpec:
    config: GameConfig
    population: list[AgentSpec]
    n_games: int
    base_seed: int = 0
    policy: Optional[Policy] = None

    def validate(self) -> None:
        self.config.validate()
        if self.n_games < 1:
            raise ConfigError("n_games must be at least 1")
        seats = sum(s.count for s in self.population)
        if seats != self.config.n_participants:
            raise ConfigError(
                f"population counts sum to {seats}, need {self.config.n_participants}"
            )


def run_batch(spec: BatchSpec, keep_traces: bool = False) -> Dataset:
    """Independent games at seeds base_seed + i, flattened per participant."""
    spec.validate()
    rows: list[ParticipantRow] = []
    for g in range(spec.n_games):
        seed = spec.base_seed + g
        cfg = replace(spec.config, seed=seed)
        agents = build_agents(spec.population, cfg, seed, policy=spec.policy)
        result = run_game(cfg, agents, keep_trace=keep_traces)
        for i in range(cfg.n_participants):
            sr = result.s_rand[i]
            rows.append(
                ParticipantRow(
                    game=g,
                    participant=i,
                    agent_kind=result.agent_kinds[i],
                    score=result.scores[i],
                    s_rand=sr,
                    gain=(result.scores[i] - sr) / sr,
                )
            )
    return Dataset(
        rows=rows,
        config=spec.config,
        source="karma",
        base_seed=spec.base_seed,
        n_games=spec.n_games,
    )


# -- counterfactual baselines ---------------------------------------------

def _baseline_rows(config: GameConfig, game_index: int, seed: int, win_rule) -> list[ParticipantRow]:
    """Common loop for urgency-blind baselines.

    ``win_rule(pair, flow_rng, state) -> winner seat`` decides each pair;
    urgencies and matchings replay the engine's per-round streams.
    """
    n = config.n_participants
    score = [0] * n
    usum = [0] * n
    flow = _flow_rng(seed)
    state: dict = {"tokens": [config.karma_init] * n}
    for rnd in range(1, config.total_rounds + 1):
        env = _round_rng(seed, rnd)
        urgencies = draw_round_urgencies(env, config)
        pairing = draw_round_matching(env, n)
        is_test = rnd <= config.n_test_rounds
        for pair in pairing:
            w = win_rule(pair, flow, state)
            if not is_test:
                score[w] += urgencies[w]
        if not is_test:
            for i in range(n):
                usum[i] += urgencies[i]
        # Token state resets with the main phase, like karma in the engine.
        if rnd == config.n_test_rounds:
            state["tokens"] = [config.karma_init] * n
    rows = []
    for i in range(n):
        sr = 0.5 * usum[i]
        rows.append(
            ParticipantRow(
                game=game_index,
                participant=i,
                agent_kind="baseline",
                score=score[i],
                s_rand=sr,
                gain=(score[i] - sr) / sr,
            )
        )
    return rows


def simulate_random_allocation(config: GameConfig, n_games: int, seed: int = 0) -> Dataset:
    """Coin-flip allocation: no bids, no karma, same urgency/matching draws."""
    config.validate()

    def coin(pair, flow, state):
        return pair[0] if flow.random() < 0.5 else pair[1]

    rows = []
    for g in range(n_games):
        rows.extend(_baseline_rows(config, g, seed + g, coin))
    return Dataset(rows, config, "random", seed, n_games)


def simulate_turn_taking(config: GameConfig, n_games: int, seed: int = 0) -> Dataset:
    """Fixed-token scheme: more tokens wins, winner hands one token over.

    Equivalent to granting whoever was allocated less often so far;
    urgency-blind like the random baseline.
    """
    config.validate()

    def tokens_rule(pair, flow, state):
        tokens = state["tokens"]
        a, b = pair
        if tokens[a] > tokens[b]:
            w = a
        elif tokens[b] > tokens[a]:
            w = b
        else:
            w = a if flow.random() < 0.5 else b
        loser = b if w == a else a
        tokens[w] -= 1
        tokens[loser] += 1
        return w

    rows = []
    for g in range(n_games):
        rows.extend(_baseline_rows(config, g, seed + g, tokens_rule))
    return Dataset(rows, config, "turn-taking", seed, n_games)
