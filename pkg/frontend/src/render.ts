/**
 * Pure view models for the three pages: decision, result, game end.
 *
 * Everything user-visible is decided here, from ClientView fields alone,
 * so the whole surface is testable without a DOM. The DOM layer only
 * turns these models into elements.
 */

import { remainingSeconds } from "./countdown.js";
import type { ClientView } from "./state.js";

export type BidControls =
  | { style: "buttons"; options: number[] }
  | { style: "range"; min: number; max: number };

export interface DecisionModel {
  kind: "decision";
  practice: boolean;
  roundLabel: string;
  urgency: number;
  urgent: boolean;
  karma: number;
  score: number;
  controls: BidControls;
  secondsLeft: number;
  submitted: number | null;
  acked: boolean;
  locked: boolean;
  inactivityWarning: string | null;
  rejectReason: string | null;
}

export interface ResultModel {
  kind: "result";
  practice: boolean;
  headline: string;
  won: boolean;
  tie: boolean;
  ownBid: number;
  opponentBid: number;
  payment: number;
  received: number;
  karma: number;
  score: number;
  inactiveNotice: string | null;
  droppedNotice: string | null;
}

export interface EndModel {
  kind: "end";
  finalScore: number;
  bonusFee: string;
  fixedFee: string;
  totalFee: string;
  dropped: boolean;
  message: string;
}

export interface WaitingModel {
  kind: "waiting";
  message: string;
}

export type PageModel = DecisionModel | ResultModel | EndModel | WaitingModel;

export interface Screen {
  banner: string | null;
  page: PageModel;
}

const fee = (amount: number): string => `$${amount.toFixed(2)}`;

function controlsFor(view: ClientView): BidControls {
  const round = view.round!;
  if (view.config?.scheme === "full-range") {
    return { style: "range", min: 0, max: Math.max(...round.allowedBids, 0) };
  }
  // Binary scheme: one button per allowed bid, 0 and floor(karma / 2).
  return { style: "buttons", options: [...round.allowedBids] };
}

function decisionModel(view: ClientView, nowMs: number): DecisionModel {
  const round = view.round!;
  const practice = round.phase === "test";
  const totalRounds = practice
    ? view.config?.n_test_rounds
    : view.config?.n_rounds;
  const label = practice ? "Practice round" : "Round";
  const warning =
    view.inactiveStreak > 0
      ? `No bid arrived in time for ${view.inactiveStreak} round(s); a zero bid was recorded each time.`
      : null;
  return {
    kind: "decision",
    practice,
    roundLabel: totalRounds
      ? `${label} ${round.roundInPhase} of ${totalRounds}`
      : `${label} ${round.roundInPhase}`,
    urgency: round.urgency,
    urgent: view.config !== null && round.urgency === view.config.urgency_high,
    karma: round.karma,
    score: round.score,
    controls: controlsFor(view),
    secondsLeft: remainingSeconds(round.deadline, nowMs),
    submitted: round.submitted,
    acked: round.acked,
    locked: round.submitted !== null,
    inactivityWarning: warning,
    rejectReason: view.lastReject?.reason ?? null,
  };
}

function resultModel(view: ClientView): ResultModel {
  const r = view.lastResult!;
  const headline = r.won
    ? r.tie
      ? "Priority granted (tie, coin flip)"
      : "Priority granted"
    : r.tie
      ? "Priority denied (tie, coin flip)"
      : "Priority denied";
  return {
    kind: "result",
    practice: view.phase === "test",
    headline,
    won: r.won,
    tie: r.tie,
    ownBid: r.own_bid,
    opponentBid: r.opponent_bid,
    payment: r.payment,
    received: r.received,
    karma: r.karma_after,
    score: r.score_after,
    inactiveNotice: r.inactive
      ? "No bid was received in time, so a zero bid was recorded."
      : null,
    droppedNotice: r.dropped
      ? "Too many missed rounds: this seat is marked inactive and earns no payment."
      : null,
  };
}

function endModel(view: ClientView): EndModel {
  const end = view.end!;
  return {
    kind: "end",
    finalScore: end.final_score,
    bonusFee: fee(end.bonus_fee),
    fixedFee: fee(end.fixed_fee),
    totalFee: fee(end.total_fee),
    dropped: end.dropped,
    message: end.dropped
      ? "The session ended. This seat was dropped for inactivity and earns no payment."
      : "The session ended. Thank you for participating.",
  };
}

export function renderView(view: ClientView, nowMs: number): Screen {
  const banner =
    view.connection === "reconnecting"
      ? "Connection lost. Reconnecting..."
      : view.notice;
  let page: PageModel;
  if (view.round) {
    page = decisionModel(view, nowMs);
  } else if (view.end) {
    page = endModel(view);
  } else if (view.lastResult) {
    page = resultModel(view);
  } else {
    page = {
      kind: "waiting",
      message:
        view.connection === "open"
          ? "Waiting for the next round..."
          : "Connecting to the session...",
    };
  }
  return { banner, page };
}
