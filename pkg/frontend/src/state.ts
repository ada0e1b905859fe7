/**
 * Client-side view state, folded from server messages.
 *
 * The server is authoritative: every number shown comes from the last
 * message that carried it. The only state invented locally is the
 * submitted-but-unacked bid and the connection status.
 */

import { Deadline, deadlineFrom } from "./countdown.js";
import type {
  BidReject,
  GameEnd,
  Phase,
  RoundResult,
  ServerMessage,
  SessionConfig,
} from "./protocol.js";

export type Connection = "connecting" | "open" | "reconnecting" | "closed";

export interface OpenRound {
  round: number;
  phase: Phase;
  roundInPhase: number;
  urgency: number;
  karma: number;
  allowedBids: number[];
  score: number;
  deadline: Deadline;
  /** Bid chosen locally; non-null disables further input. */
  submitted: number | null;
  acked: boolean;
}

export interface ClientView {
  connection: Connection;
  session: string | null;
  seat: number | null;
  phase: Phase;
  config: SessionConfig | null;
  round: OpenRound | null;
  lastResult: RoundResult | null;
  lastReject: BidReject | null;
  end: GameEnd | null;
  score: number;
  karma: number;
  /** Consecutive rounds that timed out with no bid from this seat. */
  inactiveStreak: number;
  dropped: boolean;
  notice: string | null;
}

export function initialView(): ClientView {
  return {
    connection: "connecting",
    session: null,
    seat: null,
    phase: "lobby",
    config: null,
    round: null,
    lastResult: null,
    lastReject: null,
    end: null,
    score: 0,
    karma: 0,
    inactiveStreak: 0,
    dropped: false,
    notice: null,
  };
}

export function applyConnection(view: ClientView, connection: Connection): ClientView {
  return { ...view, connection };
}

/** Record a locally chosen bid for the open round. */
export function applySubmission(view: ClientView, bid: number): ClientView {
  if (!view.round || view.round.submitted !== null) return view;
  if (!view.round.allowedBids.includes(bid)) return view;
  return {
    ...view,
    lastReject: null,
    round: { ...view.round, submitted: bid, acked: false },
  };
}

export function applyServerMessage(
  view: ClientView,
  msg: ServerMessage,
  receivedAtMs: number,
): ClientView {
  switch (msg.type) {
    case "welcome":
      return {
        ...view,
        session: msg.session,
        seat: msg.seat,
        phase: msg.phase,
        config: msg.config,
        karma: view.config ? view.karma : msg.config.karma_init,
        notice: null,
      };
    case "round_start":
      return {
        ...view,
        phase: msg.phase,
        score: msg.score,
        karma: msg.karma,
        lastReject: null,
        round: {
          round: msg.round,
          phase: msg.phase,
          roundInPhase: msg.round_in_phase,
          urgency: msg.urgency,
          karma: msg.karma,
          allowedBids: msg.allowed_bids,
          score: msg.score,
          deadline: deadlineFrom(msg, receivedAtMs),
          submitted: null,
          acked: false,
        },
      };
    case "bid_ack": {
      if (!view.round || view.round.round !== msg.round) return view;
      return { ...view, round: { ...view.round, acked: true } };
    }
    case "bid_reject": {
      const next = { ...view, lastReject: msg };
      // A rejected submission unlocks the controls for another try.
      if (view.round && view.round.round === msg.round && !view.round.acked) {
        next.round = { ...view.round, submitted: null };
      }
      return next;
    }
    case "round_result":
      return {
        ...view,
        round: null,
        lastResult: msg,
        score: msg.score_after,
        karma: msg.karma_after,
        inactiveStreak: msg.inactive ? view.inactiveStreak + 1 : 0,
        dropped: msg.dropped,
      };
    case "game_end":
      return {
        ...view,
        round: null,
        end: msg,
        phase: "finished",
        score: msg.final_score,
        dropped: msg.dropped,
      };
    case "error":
      return { ...view, notice: msg.reason };
  }
}
