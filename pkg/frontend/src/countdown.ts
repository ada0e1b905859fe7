/**
 * Bid countdown driven by the server's deadline, not a local timer.
 *
 * The server stamps each round_start with its own clock (server_now_ms)
 * next to the deadline. Remaining time is the server-granted window minus
 * the locally elapsed time since the frame arrived, so a skewed local
 * clock changes nothing: only local *deltas* are used.
 */

export interface Deadline {
  deadlineMs: number;
  serverNowMs: number;
  receivedAtMs: number;
}

export function deadlineFrom(
  msg: { deadline_ms: number; server_now_ms: number },
  receivedAtMs: number,
): Deadline {
  return {
    deadlineMs: msg.deadline_ms,
    serverNowMs: msg.server_now_ms,
    receivedAtMs,
  };
}

export function remainingMs(deadline: Deadline, nowMs: number): number {
  const granted = deadline.deadlineMs - deadline.serverNowMs;
  const elapsed = nowMs - deadline.receivedAtMs;
  return Math.max(0, granted - elapsed);
}

/** Whole seconds left, rounded up so the display never shows 0 early. */
export function remainingSeconds(deadline: Deadline, nowMs: number): number {
  return Math.ceil(remainingMs(deadline, nowMs) / 1000);
}
