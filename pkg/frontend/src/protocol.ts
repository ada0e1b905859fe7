/**
 * Wire format of the live session service.
 *
 * Every frame is one JSON object tagged with `type`, `protocol_version`,
 * and a millisecond UTC timestamp `ts`. Field names mirror the server
 * exactly, snake_case included, so a parsed frame is the message.
 */

export const PROTOCOL_VERSION = 1;

export type Phase = "lobby" | "test" | "main" | "finished";
export type Scheme = "binary" | "full-range";

export interface SessionConfig {
  scheme: Scheme;
  n_participants: number;
  n_rounds: number;
  n_test_rounds: number;
  karma_init: number;
  karma_max: number;
  urgency_low: number;
  urgency_high: number;
  decision_seconds: number;
  label: string;
}

interface MessageBase {
  type: string;
  protocol_version: number;
  ts: number;
}

export interface Welcome extends MessageBase {
  type: "welcome";
  session: string;
  seat: number;
  phase: Phase;
  config: SessionConfig;
}

export interface RoundStart extends MessageBase {
  type: "round_start";
  session: string;
  seat: number;
  round: number;
  phase: Phase;
  round_in_phase: number;
  urgency: number;
  karma: number;
  allowed_bids: number[];
  score: number;
  deadline_ms: number;
  server_now_ms: number;
}

export interface BidAck extends MessageBase {
  type: "bid_ack";
  round: number;
  bid: number;
}

export interface BidReject extends MessageBase {
  type: "bid_reject";
  round: number;
  reason: string;
  allowed_bids?: number[];
}

export interface RoundResult extends MessageBase {
  type: "round_result";
  session: string;
  seat: number;
  round: number;
  won: boolean;
  own_bid: number;
  opponent_bid: number;
  payment: number;
  received: number;
  karma_after: number;
  score_after: number;
  tie: boolean;
  inactive: boolean;
  dropped: boolean;
}

export interface GameEnd extends MessageBase {
  type: "game_end";
  session: string;
  seat: number;
  final_score: number;
  bonus_fee: number;
  fixed_fee: number;
  total_fee: number;
  dropped: boolean;
}

export interface ServerNotice extends MessageBase {
  type: "error";
  reason: string;
}

export type ServerMessage =
  | Welcome
  | RoundStart
  | BidAck
  | BidReject
  | RoundResult
  | GameEnd
  | ServerNotice;

export interface BidSubmit {
  type: "bid_submit";
  protocol_version: number;
  round: number;
  bid: number;
}

export function bidSubmit(round: number, bid: number): BidSubmit {
  return { type: "bid_submit", protocol_version: PROTOCOL_VERSION, round, bid };
}

export class ProtocolError extends Error {}

const SERVER_TYPES = new Set([
  "welcome",
  "round_start",
  "bid_ack",
  "bid_reject",
  "round_result",
  "game_end",
  "error",
]);

// Per-type fields that must be finite numbers for rendering to make sense.
const NUMERIC_FIELDS: Record<string, string[]> = {
  welcome: ["seat"],
  round_start: [
    "seat", "round", "round_in_phase", "urgency", "karma",
    "score", "deadline_ms", "server_now_ms",
  ],
  bid_ack: ["round", "bid"],
  bid_reject: ["round"],
  round_result: [
    "seat", "round", "own_bid", "opponent_bid", "payment",
    "received", "karma_after", "score_after",
  ],
  game_end: ["seat", "final_score", "bonus_fee", "fixed_fee", "total_fee"],
  error: [],
};

function requireNumber(obj: Record<string, unknown>, field: string): void {
  const value = obj[field];
  if (typeof value !== "number" || !Number.isFinite(value)) {
    throw new ProtocolError(`field ${field} is not a number`);
  }
}

/** Parse one incoming frame, rejecting anything this client cannot render. */
export function parseServerMessage(raw: string): ServerMessage {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    throw new ProtocolError("frame is not valid JSON");
  }
  if (typeof data !== "object" || data === null || Array.isArray(data)) {
    throw new ProtocolError("frame is not an object");
  }
  const obj = data as Record<string, unknown>;
  const type = obj["type"];
  if (typeof type !== "string" || !SERVER_TYPES.has(type)) {
    throw new ProtocolError(`unknown message type ${JSON.stringify(type)}`);
  }
  if (obj["protocol_version"] !== PROTOCOL_VERSION) {
    throw new ProtocolError(
      `protocol version ${String(obj["protocol_version"])}, expected ${PROTOCOL_VERSION}`,
    );
  }
  for (const field of NUMERIC_FIELDS[type] ?? []) {
    requireNumber(obj, field);
  }
  if (type === "round_start" && !Array.isArray(obj["allowed_bids"])) {
    throw new ProtocolError("round_start without allowed_bids");
  }
  return obj as unknown as ServerMessage;
}
