/**
 * Test doubles: a scriptable socket and a protocol-conformant session
 * server for one human seat. The double does not re-implement the game
 * engine; tests tell it what each round should contain and it keeps the
 * arithmetic consistent, which is all the client can observe.
 */

import type { SocketLike } from "../../src/client.js";
import { PROTOCOL_VERSION, SessionConfig } from "../../src/protocol.js";

type Handler = (event: { data: unknown }) => void;

export class FakeSocket implements SocketLike {
  sent: string[] = [];
  private handlers = new Map<string, Handler[]>();

  constructor(private readonly onSend?: (data: string) => void) {}

  addEventListener(type: "open" | "close" | "error", handler: () => void): void;
  addEventListener(type: "message", handler: (event: { data: unknown }) => void): void;
  addEventListener(type: string, handler: Handler): void {
    const list = this.handlers.get(type) ?? [];
    list.push(handler);
    this.handlers.set(type, list);
  }

  send(data: string): void {
    this.sent.push(data);
    this.onSend?.(data);
  }

  close(): void {
    this.fire("close");
  }

  open(): void {
    this.fire("open");
  }

  message(msg: Record<string, unknown>): void {
    this.fire("message", { data: JSON.stringify(msg) });
  }

  dropConnection(): void {
    this.fire("close");
  }

  private fire(type: string, event?: { data: unknown }): void {
    for (const handler of this.handlers.get(type) ?? []) {
      (handler as (e?: { data: unknown }) => void)(event);
    }
  }
}

export const BINARY_CONFIG: SessionConfig = {
  scheme: "binary",
  n_participants: 20,
  n_rounds: 50,
  n_test_rounds: 5,
  karma_init: 9,
  karma_max: 18,
  urgency_low: 1,
  urgency_high: 5,
  decision_seconds: 10,
  label: "low-binary",
};

export const FULL_CONFIG: SessionConfig = {
  ...BINARY_CONFIG,
  scheme: "full-range",
  label: "low-full",
};

function allowedBids(config: SessionConfig, karma: number): number[] {
  if (config.scheme === "binary") {
    const half = Math.floor(karma / 2);
    return half > 0 ? [0, half] : [0];
  }
  return Array.from({ length: karma + 1 }, (_, i) => i);
}

export interface ResolveSpec {
  won?: boolean;
  opponentBid?: number;
  received?: number;
  tie?: boolean;
  inactive?: boolean;
  dropped?: boolean;
}

/** One-seat session server speaking the wire format over FakeSockets. */
export class ServerDouble {
  readonly session = "fake0001";
  socket: FakeSocket | null = null;
  bids: Array<{ round: number; bid: number }> = [];
  rejectNext: string | null = null;

  private round = 0;
  private roundOpen = false;
  private karma: number;
  private score = 0;
  private currentBid: number | null = null;
  private ts = 1_700_000_000_000;
  private nowMs: () => number;

  constructor(readonly config: SessionConfig, nowMs?: () => number) {
    this.karma = config.karma_init;
    this.nowMs = nowMs ?? (() => (this.ts += 10));
  }

  /** Socket factory for SessionClient; opens and welcomes immediately. */
  factory = (_url: string): SocketLike => {
    const socket = new FakeSocket((data) => this.onFrame(data));
    this.socket = socket;
    queueMicrotask(() => {
      socket.open();
      this.emit({
        type: "welcome",
        session: this.session,
        seat: 0,
        phase: this.phase(),
        config: this.config,
      });
      if (this.roundOpen && this.currentBid === null) this.emitStart();
    });
    return socket;
  };

  get lastBid(): { round: number; bid: number } | undefined {
    return this.bids[this.bids.length - 1];
  }

  startRound(urgency: number): void {
    this.round += 1;
    this.roundOpen = true;
    this.currentBid = null;
    this.emitStart(urgency);
  }

  resolve(spec: ResolveSpec = {}): void {
    this.roundOpen = false;
    const bid = spec.inactive ? 0 : (this.currentBid ?? 0);
    const won = spec.won ?? true;
    const payment = won ? bid : 0;
    const received = spec.received ?? payment;
    this.karma = this.karma - payment + received;
    if (won && this.phase() === "main") this.score += this.urgency;
    this.currentBid = null;
    this.emit({
      type: "round_result",
      session: this.session,
      seat: 0,
      round: this.round,
      won,
      own_bid: bid,
      opponent_bid: spec.opponentBid ?? 0,
      payment,
      received,
      karma_after: this.karma,
      score_after: this.score,
      tie: spec.tie ?? false,
      inactive: spec.inactive ?? false,
      dropped: spec.dropped ?? false,
    });
  }

  finish(fees: { bonus: number; fixed: number; dropped?: boolean }): void {
    this.emit({
      type: "game_end",
      session: this.session,
      seat: 0,
      final_score: this.score,
      bonus_fee: fees.bonus,
      fixed_fee: fees.fixed,
      total_fee: Number((fees.bonus + fees.fixed).toFixed(2)),
      dropped: fees.dropped ?? false,
    });
  }

  emit(fields: Record<string, unknown>): void {
    this.socket?.message({
      protocol_version: PROTOCOL_VERSION,
      ts: this.nowMs(),
      ...fields,
    });
  }

  private urgency = 1;

  private phase(): string {
    if (this.round === 0) return "lobby";
    return this.round <= this.config.n_test_rounds ? "test" : "main";
  }

  private emitStart(urgency?: number): void {
    if (urgency !== undefined) this.urgency = urgency;
    const now = this.nowMs();
    this.emit({
      type: "round_start",
      session: this.session,
      seat: 0,
      round: this.round,
      phase: this.phase(),
      round_in_phase: this.phase() === "test"
        ? this.round
        : this.round - this.config.n_test_rounds,
      urgency: this.urgency,
      karma: this.karma,
      allowed_bids: allowedBids(this.config, this.karma),
      score: this.score,
      deadline_ms: now + this.config.decision_seconds * 1000,
      server_now_ms: now,
    });
  }

  private onFrame(data: string): void {
    const frame = JSON.parse(data) as { type: string; round: number; bid: number };
    if (frame.type !== "bid_submit") {
      this.emit({ type: "error", reason: `unsupported message type '${frame.type}'` });
      return;
    }
    if (this.rejectNext) {
      const reason = this.rejectNext;
      this.rejectNext = null;
      this.emit({ type: "bid_reject", round: frame.round, reason });
      return;
    }
    this.bids.push({ round: frame.round, bid: frame.bid });
    this.currentBid = frame.bid;
    this.emit({ type: "bid_ack", round: frame.round, bid: frame.bid });
  }
}
