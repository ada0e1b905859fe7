"""Live session service: real-time karma games with humans and bots.

The synchronous ``Session`` object is the entire game state machine: it
stages rounds through the simulator's ``RoundDriver``, validates bids,
defaults silent seats to zero, tracks inactivity, and computes fees.
The asyncio layer (``SessionRunner`` plus the FastAPI app) only adds
clocks and sockets on top, so a headless all-bot session reproduces
``run_game`` traces exactly.

Wire format: JSON messages over a persistent WebSocket, one message per
frame, each carrying a ``type`` tag and ``protocol_version``. Admin
endpoints are plain JSON request/response. Timestamps are milliseconds
since the Unix epoch, UTC.
"""

from __future__ import annotations

import asyncio
import secrets
import time
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Optional, Sequence

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect

from .agents import Agent, AgentSpec, build_agents, parse_population
from .core import (
    ConfigError,
    FeeParams,
    GameConfig,
    RoundRecord,
    config_from_dict,
    config_to_dict,
    new_game,
    preset,
)
from .equilibrium import Policy, solve_cached
from .simulator import (
    Dataset,
    GameResult,
    ParticipantRow,
    RoundDriver,
    observe,
    outcome_from_feedback,
)

PROTOCOL_VERSION = 1


class SessionError(RuntimeError):
    """Raised when a session operation violates its lifecycle."""


class Phase(str, Enum):
    LOBBY = "lobby"
    TEST_ROUNDS = "test"
    MAIN = "main"
    FINISHED = "finished"


def now_ms() -> int:
    return int(time.time() * 1000)


def _message(kind: str, **fields) -> dict:
    msg: dict[str, Any] = {
        "type": kind,
        "protocol_version": PROTOCOL_VERSION,
        "ts": now_ms(),
    }
    msg.update(fields)
    return msg


def compute_bonus(final_score: float, fee: FeeParams, dropped: bool) -> float:
    """Bonus fee from the affine score interpolation, clamped below at zero.

    The target score pays the target fee and the random-allocation score
    pays the random fee; everything else interpolates linearly between
    those anchors. Dropped participants earn nothing.
    """
    if dropped:
        return 0.0
    span = fee.target_score - fee.random_score
    raw = (fee.target_fee - fee.random_fee) * (final_score - fee.random_score) / span
    return max(raw + fee.random_fee, 0.0)


@dataclass
class Seat:
    index: int
    kind: str                  # "human" or the bot agent kind
    agent: Optional[Agent]     # None for human seats
    token: str = ""            # opaque join credential, human seats only
    inactive_streak: int = 0
    dropped: bool = False

    @property
    def is_human(self) -> bool:
        return self.agent is None


@dataclass
class RoundResolution:
    record: RoundRecord
    results: list[dict]                    # round_result message per seat
    game_end: Optional[list[dict]] = None  # set when this round ended the game


class Session:
    """One live game: roster, lifecycle, bid intake, fees.

    Methods are synchronous and never block; deadlines are enforced by
    whoever drives the session (``SessionRunner`` in live play, the test
    harness otherwise).
    """

    def __init__(self, session_id: str, config: GameConfig, seats: list[Seat],
                 label: str = ""):
        config.validate()
        if len(seats) != config.n_participants:
            raise ConfigError(
                f"{len(seats)} seats for {config.n_participants} participants"
            )
        self.id = session_id
        self.config = config
        self.label = label
        self.created_ms = now_ms()
        self.seats = seats
        self.game = new_game(config)
        self.driver = RoundDriver(self.game)
        self.phase = Phase.LOBBY
        self.deadline_ms: Optional[int] = None
        n = config.n_participants
        self._histories: list[list] = [[] for _ in range(n)]
        self._urgency_traces: list[list[int]] = [[] for _ in range(n)]
        self._seat_rounds = None
        self._bids: dict[int, int] = {}
        self._last_start: dict[int, dict] = {}
        self._game_end_msgs: Optional[list[dict]] = None

    # -- roster ------------------------------------------------------------

    @property
    def n(self) -> int:
        return self.config.n_participants

    def human_seats(self) -> list[Seat]:
        return [s for s in self.seats if s.is_human]

    def seat_by_token(self, token: str) -> Seat:
        for seat in self.seats:
            if seat.is_human and seat.token == token:
                return seat
        raise SessionError("unknown seat token")

    # -- round lifecycle ---------------------------------------------------

    @property
    def round_open(self) -> bool:
        return self._seat_rounds is not None

    @property
    def current_round(self) -> int:
        """Global 1-based index of the open round (or the next one)."""
        return self.game.current_round

    @property
    def all_bids_in(self) -> bool:
        return self.round_open and len(self._bids) == self.n

    def begin_round(self, at_ms: Optional[int] = None) -> list[dict]:
        """Stage the next round; returns round_start messages for humans.

        Bot seats bid immediately, so an all-bot round is ready to
        resolve as soon as it opens.
        """
        if self.phase is Phase.FINISHED:
            raise SessionError("session already finished")
        if self.round_open:
            raise SessionError("round already in progress")
        at_ms = now_ms() if at_ms is None else at_ms
        seat_rounds = self.driver.start_round()
        self._seat_rounds = seat_rounds
        self._bids = {}
        is_test = seat_rounds[0].is_test
        self.phase = Phase.TEST_ROUNDS if is_test else Phase.MAIN
        if not is_test:
            for i in range(self.n):
                self._urgency_traces[i].append(seat_rounds[i].urgency)
        self.deadline_ms = at_ms + int(self.config.fee.decision_seconds * 1000)
        starts = []
        for seat in self.seats:
            sr = seat_rounds[seat.index]
            if seat.agent is not None:
                self._bids[seat.index] = seat.agent.decide(
                    observe(sr, self.config.scheme, self._histories[seat.index])
                )
                continue
            msg = _message(
                "round_start",
                session=self.id,
                seat=seat.index,
                round=self.current_round,
                phase=self.phase.value,
                round_in_phase=sr.round_index,
                urgency=sr.urgency,
                karma=sr.karma,
                allowed_bids=list(sr.allowed),
                score=self.game.score[seat.index],
                deadline_ms=self.deadline_ms,
                server_now_ms=at_ms,
            )
            self._last_start[seat.index] = msg
            starts.append(msg)
        return starts

    def submit_bid(self, token: str, round_no, bid) -> dict:
        """Validate and record one human bid; first valid submission binds."""
        seat = self.seat_by_token(token)
        if not self.round_open:
            return _message("bid_reject", round=round_no, reason="no open round")
        rnd = self.current_round
        if round_no != rnd:
            return _message(
                "bid_reject", round=round_no,
                reason=f"round {round_no} is not accepting bids",
            )
        if seat.index in self._bids:
            return _message("bid_reject", round=rnd, reason="bid already recorded")
        allowed = self._seat_rounds[seat.index].allowed
        if isinstance(bid, bool) or not isinstance(bid, int) or bid not in allowed:
            return _message(
                "bid_reject", round=rnd, reason="bid not allowed",
                allowed_bids=list(allowed),
            )
        self._bids[seat.index] = bid
        return _message("bid_ack", round=rnd, bid=bid)

    def resolve_round(self) -> RoundResolution:
        """Close the open round: default silent seats to zero, step the engine.

        Runs at the decision deadline, or as soon as every seat has bid.
        A silent round bumps the seat's inactivity streak; past the limit
        the seat is dropped for payoff purposes but keeps playing zeros
        so the pairing stays well formed.
        """
        if not self.round_open:
            raise SessionError("no round to resolve")
        defaulted = [False] * self.n
        for seat in self.seats:
            if seat.index in self._bids:
                if seat.is_human:
                    seat.inactive_streak = 0
                continue
            self._bids[seat.index] = 0
            defaulted[seat.index] = True
            seat.inactive_streak += 1
            if seat.inactive_streak > self.config.fee.inactive_limit:
                seat.dropped = True
        rnd = self.current_round
        record, feedback = self.driver.resolve([self._bids[i] for i in range(self.n)])
        results = []
        for seat in self.seats:
            fb = feedback[seat.index]
            self._histories[seat.index].append(outcome_from_feedback(fb))
            results.append(_message(
                "round_result",
                session=self.id,
                seat=seat.index,
                round=rnd,
                won=fb.won,
                own_bid=fb.own_bid,
                opponent_bid=fb.opponent_bid,
                payment=fb.payment,
                received=fb.received,
                karma_after=fb.karma_after,
                score_after=fb.score_after,
                tie=fb.tie,
                inactive=defaulted[seat.index],
                dropped=seat.dropped,
            ))
        self._seat_rounds = None
        self._bids = {}
        self.deadline_ms = None
        game_end = None
        if self.driver.finished:
            self.phase = Phase.FINISHED
            game_end = [self._end_message(seat) for seat in self.seats]
            self._game_end_msgs = game_end
        return RoundResolution(record=record, results=results, game_end=game_end)

    def _end_message(self, seat: Seat) -> dict:
        score = self.game.score[seat.index]
        bonus = compute_bonus(score, self.config.fee, seat.dropped)
        fixed = 0.0 if seat.dropped else self.config.fee.fixed_fee
        return _message(
            "game_end",
            session=self.id,
            seat=seat.index,
            final_score=score,
            bonus_fee=round(bonus, 2),
            fixed_fee=round(fixed, 2),
            total_fee=round(bonus + fixed, 2),
            dropped=seat.dropped,
        )


# -- export ----------------------------------------------------------------

@dataclass
class SessionExport:
    result: GameResult
    dropped: list[bool]
    bonus_fees: list[float]
    fixed_fees: list[float]

    def to_dataset(self) -> Dataset:
        rows = []
        for i in range(len(self.result.scores)):
            sr = self.result.s_rand[i]
            score = self.result.scores[i]
            rows.append(ParticipantRow(
                game=0,
                participant=i,
                agent_kind=self.result.agent_kinds[i],
                score=score,
                s_rand=sr,
                gain=(score - sr) / sr,
                dropped=self.dropped[i],
            ))
        return Dataset(
            rows=rows,
            config=self.result.config,
            source="live",
            base_seed=self.result.seed,
            n_games=1,
        )


def export_session(session: Session) -> SessionExport:
    """Finished session as the simulator's result/dataset shapes."""
    if session.phase is not Phase.FINISHED:
        raise SessionError("session not finished")
    cfg = session.config
    result = GameResult(
        config=cfg,
        seed=cfg.seed,
        agent_kinds=[s.kind for s in session.seats],
        scores=list(session.game.score),
        s_rand=[0.5 * sum(t) for t in session._urgency_traces],
        urgency_traces=[list(t) for t in session._urgency_traces],
        records=session.game.records,
    )
    dropped = [s.dropped for s in session.seats]
    bonuses = [
        compute_bonus(sc, cfg.fee, dr) for sc, dr in zip(result.scores, dropped)
    ]
    fixed = [0.0 if dr else cfg.fee.fixed_fee for dr in dropped]
    return SessionExport(
        result=result, dropped=dropped, bonus_fees=bonuses, fixed_fees=fixed,
    )


def run_headless(session: Session) -> SessionExport:
    """Drive an all-bot session to completion synchronously."""
    if session.human_seats():
        raise SessionError("session has human seats; serve it instead")
    while session.phase is not Phase.FINISHED:
        session.begin_round()
        session.resolve_round()
    return export_session(session)


# -- registry --------------------------------------------------------------

def _seat_roster(config: GameConfig, bot_specs: Sequence[AgentSpec],
                 policy: Optional[Policy]) -> list[Seat]:
    n_bots = sum(s.count for s in bot_specs)
    if n_bots > config.n_participants:
        raise ConfigError(
            f"{n_bots} bots for {config.n_participants} seats"
        )
    n_humans = config.n_participants - n_bots
    specs = list(bot_specs)
    if n_humans:
        # Placeholders keep bot seat indices (and rng streams) aligned;
        # the human seats discard theirs.
        specs = [AgentSpec("zero", n_humans)] + specs
    agents = build_agents(specs, config, base_seed=config.seed, policy=policy)
    seats = []
    for i in range(config.n_participants):
        if i < n_humans:
            seats.append(Seat(index=i, kind="human", agent=None,
                              token=secrets.token_urlsafe(8)))
        else:
            seats.append(Seat(index=i, kind=agents[i].kind, agent=agents[i]))
    return seats


class SessionStore:
    """In-memory session registry."""

    def __init__(self):
        self.sessions: dict[str, Session] = {}

    def create_session(self, config: GameConfig,
                       bots: "str | Sequence[AgentSpec]" = "",
                       policy: Optional[Policy] = None,
                       label: str = "") -> Session:
        bot_specs = parse_population(bots) if isinstance(bots, str) else list(bots)
        seats = _seat_roster(config, bot_specs, policy)
        sid = secrets.token_hex(4)
        while sid in self.sessions:
            sid = secrets.token_hex(4)
        session = Session(sid, config, seats, label=label)
        self.sessions[sid] = session
        return session

    def get(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise SessionError(f"no session {session_id!r}") from None

    def list_info(self) -> list[dict]:
        return [session_info(s) for s in self.sessions.values()]


def session_info(session: Session) -> dict:
    return {
        "id": session.id,
        "label": session.label,
        "phase": session.phase.value,
        "rounds_played": session.game.rounds_played,
        "total_rounds": session.config.total_rounds,
        "n_participants": session.n,
        "n_humans": len(session.human_seats()),
        "created_ms": session.created_ms,
    }


def _config_summary(config: GameConfig) -> dict:
    return {
        "scheme": config.scheme.value,
        "n_participants": config.n_participants,
        "n_rounds": config.n_rounds,
        "n_test_rounds": config.n_test_rounds,
        "karma_init": config.karma_init,
        "karma_max": config.karma_max,
        "urgency_low": config.urgency_low,
        "urgency_high": config.urgency_high,
        "decision_seconds": config.fee.decision_seconds,
        "label": config.label,
    }


# -- live play -------------------------------------------------------------

class SessionRunner:
    """Asyncio shell around one Session: clock, sockets, early resolution.

    Every state change happens under one lock, so bid handling and
    deadline expiry never interleave within a session.
    """

    def __init__(self, session: Session, round_gap: float = 0.0):
        self.session = session
        self.round_gap = round_gap
        self.lock = asyncio.Lock()
        self.connections: dict[int, Any] = {}
        self.started = False
        self._timer: Optional[asyncio.Task] = None

    async def attach(self, token: str, ws) -> Seat:
        """Register a connection, replay current state, maybe start play."""
        seat = self.session.seat_by_token(token)
        async with self.lock:
            self.connections[seat.index] = ws
            s = self.session
            await self._send(seat.index, _message(
                "welcome",
                session=s.id,
                seat=seat.index,
                phase=s.phase.value,
                config=_config_summary(s.config),
            ))
            if s.round_open and seat.index not in s._bids:
                last = s._last_start.get(seat.index)
                if last is not None:
                    await self._send(seat.index, last)
            elif s.phase is Phase.FINISHED and s._game_end_msgs:
                await self._send(seat.index, s._game_end_msgs[seat.index])
            if not self.started:
                humans = {h.index for h in s.human_seats()}
                if humans <= set(self.connections):
                    self.started = True
                    await self._step()
        return seat

    async def detach(self, seat_index: int) -> None:
        async with self.lock:
            self.connections.pop(seat_index, None)

    async def start(self) -> None:
        """Begin play without waiting for connections (headless or forced)."""
        async with self.lock:
            if not self.started:
                self.started = True
                await self._step()

    async def handle(self, seat: Seat, payload: dict) -> None:
        """Process one incoming client frame."""
        if payload.get("type") != "bid_submit":
            await self._send(seat.index, _message(
                "error", reason=f"unsupported message type {payload.get('type')!r}"
            ))
            return
        async with self.lock:
            reply = self.session.submit_bid(
                seat.token, payload.get("round"), payload.get("bid")
            )
            await self._send(seat.index, reply)
            if self.session.all_bids_in:
                await self._step()

    # -- internals (lock held) -----------------------------------------

    async def _step(self) -> None:
        """Advance until waiting on human bids or the game is over."""
        s = self.session
        self._cancel_timer()
        while s.phase is not Phase.FINISHED:
            if not s.round_open:
                if self.round_gap > 0 and s.game.rounds_played:
                    await asyncio.sleep(self.round_gap)
                for msg in s.begin_round():
                    await self._send(msg["seat"], msg)
            if not s.all_bids_in:
                self._arm_deadline(s.deadline_ms, s.current_round)
                return
            await self._finish_round()

    async def _finish_round(self) -> None:
        s = self.session
        res = s.resolve_round()
        for msg in res.results + (res.game_end or []):
            if s.seats[msg["seat"]].is_human:
                await self._send(msg["seat"], msg)

    def _arm_deadline(self, deadline_ms: int, round_no: int) -> None:
        delay = max(0.0, (deadline_ms - now_ms()) / 1000.0)
        self._timer = asyncio.create_task(self._expire_later(delay, round_no))

    async def _expire_later(self, delay: float, round_no: int) -> None:
        try:
            await asyncio.sleep(delay)
        except asyncio.CancelledError:
            return
        self._timer = None
        async with self.lock:
            s = self.session
            if s.round_open and s.current_round == round_no:
                await self._finish_round()
                await self._step()

    def _cancel_timer(self) -> None:
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None

    async def _send(self, seat_index: int, msg: dict) -> None:
        ws = self.connections.get(seat_index)
        if ws is None:
            return
        try:
            await ws.send_json(msg)
        except Exception:
            self.connections.pop(seat_index, None)


# -- HTTP / WebSocket surface ----------------------------------------------

def create_session_from_request(store: SessionStore, body: dict) -> Session:
    if "preset" in body:
        config = preset(body["preset"], seed=int(body.get("seed", 0)))
    elif "config" in body:
        config = config_from_dict(body["config"])
    else:
        raise ConfigError("request needs a 'preset' name or a 'config' object")
    policy = None
    if "policy" in body:
        policy = Policy.from_dict(body["policy"])
    elif "alpha" in body:
        policy = solve_cached(config, float(body["alpha"])).policy
    return store.create_session(
        config, bots=body.get("bots", ""), policy=policy,
        label=str(body.get("label", "")),
    )


def export_payload(export: SessionExport) -> dict:
    dataset = export.to_dataset()
    return {
        "source": dataset.source,
        "config": config_to_dict(dataset.config),
        "rows": [asdict(r) for r in dataset.rows],
        "bonus_fees": [round(b, 2) for b in export.bonus_fees],
        "fixed_fees": [round(f, 2) for f in export.fixed_fees],
        "protocol_version": PROTOCOL_VERSION,
    }


def create_app(store: Optional[SessionStore] = None, round_gap: float = 0.0) -> FastAPI:
    """FastAPI app: admin endpoints plus the per-seat play WebSocket."""
    store = store if store is not None else SessionStore()
    app = FastAPI(title="karma session server")
    app.state.store = store
    app.state.runners = {}

    def runner_for(session_id: str) -> SessionRunner:
        if session_id not in app.state.runners:
            app.state.runners[session_id] = SessionRunner(
                store.get(session_id), round_gap=round_gap
            )
        return app.state.runners[session_id]

    @app.post("/sessions")
    async def create(body: dict):
        try:
            session = create_session_from_request(store, body)
        except (ConfigError, SessionError, ValueError, KeyError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        if not session.human_seats():
            run_headless(session)
        return {
            "session_id": session.id,
            "tokens": {s.index: s.token for s in session.human_seats()},
            "phase": session.phase.value,
            "config": config_to_dict(session.config),
            "protocol_version": PROTOCOL_VERSION,
        }

    @app.get("/sessions")
    async def list_sessions():
        return {"sessions": store.list_info()}

    @app.get("/sessions/{session_id}/export")
    async def export(session_id: str):
        try:
            session = store.get(session_id)
        except SessionError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        try:
            exported = export_session(session)
        except SessionError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return export_payload(exported)

    @app.websocket("/play/{session_id}/{token}")
    async def play(ws: WebSocket, session_id: str, token: str):
        try:
            store.get(session_id).seat_by_token(token)
        except SessionError:
            await ws.close(code=4404)
            return
        await ws.accept()
        runner = runner_for(session_id)
        seat = await runner.attach(token, ws)
        try:
            while True:
                payload = await ws.receive_json()
                await runner.handle(seat, payload)
        except WebSocketDisconnect:
            pass
        finally:
            await runner.detach(seat.index)

    return app
