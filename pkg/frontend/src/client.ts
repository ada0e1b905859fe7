/**
 * Session connection: one WebSocket per seat, events folded into the view.
 *
 * Reconnects with doubling backoff after an unexpected close; the server
 * replays the welcome and the still-open round on re-attach, so the view
 * rebuilds itself from messages alone. At most one bid is in flight: once
 * a bid is chosen the controls lock until the server answers.
 */

import { bidSubmit, parseServerMessage, ProtocolError } from "./protocol.js";
import {
  applyConnection,
  applyServerMessage,
  applySubmission,
  ClientView,
  initialView,
} from "./state.js";

export interface SocketLike {
  send(data: string): void;
  close(code?: number): void;
  addEventListener(type: "open" | "close" | "error", handler: () => void): void;
  addEventListener(
    type: "message",
    handler: (event: { data: unknown }) => void,
  ): void;
}

export interface SessionClientOptions {
  socketFactory?: (url: string) => SocketLike;
  now?: () => number;
  reconnectDelayMs?: number;
  maxReconnectDelayMs?: number;
  schedule?: (fn: () => void, ms: number) => unknown;
  cancel?: (handle: unknown) => void;
}

export type ViewListener = (view: ClientView) => void;

export class SessionClient {
  readonly url: string;
  private readonly opts: Required<SessionClientOptions>;
  private socket: SocketLike | null = null;
  private listeners = new Set<ViewListener>();
  private reconnectDelay: number;
  private pendingReconnect: unknown = null;
  private closedByUser = false;
  private current: ClientView = initialView();

  constructor(serverUrl: string, sessionId: string, token: string,
              options: SessionClientOptions = {}) {
    const base = serverUrl.replace(/\/+$/, "");
    this.url = `${base}/play/${sessionId}/${token}`;
    this.opts = {
      socketFactory: options.socketFactory
        ?? ((url: string) => new WebSocket(url) as unknown as SocketLike),
      now: options.now ?? Date.now,
      reconnectDelayMs: options.reconnectDelayMs ?? 500,
      maxReconnectDelayMs: options.maxReconnectDelayMs ?? 10_000,
      schedule: options.schedule ?? ((fn, ms) => setTimeout(fn, ms)),
      cancel: options.cancel ?? ((handle) => clearTimeout(handle as never)),
    };
    this.reconnectDelay = this.opts.reconnectDelayMs;
  }

  get view(): ClientView {
    return this.current;
  }

  subscribe(listener: ViewListener): () => void {
    this.listeners.add(listener);
    listener(this.current);
    return () => this.listeners.delete(listener);
  }

  connect(): void {
    if (this.closedByUser) return;
    const socket = this.opts.socketFactory(this.url);
    this.socket = socket;
    socket.addEventListener("open", () => {
      this.reconnectDelay = this.opts.reconnectDelayMs;
      this.update(applyConnection(this.current, "open"));
    });
    socket.addEventListener("message", (event) => this.onFrame(event.data));
    socket.addEventListener("close", () => this.onClose(socket));
    socket.addEventListener("error", () => {
      // A close event follows; reconnect logic lives there.
    });
  }

  /** Choose a bid for the open round. Ignored when no round accepts one. */
  submitBid(bid: number): void {
    const round = this.current.round;
    if (!round || round.submitted !== null) return;
    if (!round.allowedBids.includes(bid)) return;
    const next = applySubmission(this.current, bid);
    if (next === this.current) return;
    this.update(next);
    this.socket?.send(JSON.stringify(bidSubmit(round.round, bid)));
  }

  close(): void {
    this.closedByUser = true;
    if (this.pendingReconnect !== null) {
      this.opts.cancel(this.pendingReconnect);
      this.pendingReconnect = null;
    }
    this.socket?.close();
    this.update(applyConnection(this.current, "closed"));
  }

  private onFrame(data: unknown): void {
    if (typeof data !== "string") return;
    let view: ClientView;
    try {
      view = applyServerMessage(
        this.current, parseServerMessage(data), this.opts.now(),
      );
    } catch (err) {
      if (err instanceof ProtocolError) {
        view = { ...this.current, notice: err.message };
      } else {
        throw err;
      }
    }
    this.update(view);
  }

  private onClose(socket: SocketLike): void {
    if (this.socket !== socket || this.closedByUser) return;
    this.socket = null;
    this.update(applyConnection(this.current, "reconnecting"));
    this.pendingReconnect = this.opts.schedule(() => {
      this.pendingReconnect = null;
      this.connect();
    }, this.reconnectDelay);
    this.reconnectDelay = Math.min(
      this.reconnectDelay * 2, this.opts.maxReconnectDelayMs,
    );
  }

  private update(view: ClientView): void {
    this.current = view;
    for (const listener of this.listeners) listener(view);
  }
}
