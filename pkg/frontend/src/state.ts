/** The single source of truth for the console.
 *
 * ViewState is a pure fold over two input streams: the daemon event
 * subscription and explicit user actions. Nothing renders optimistically;
 * a chat message appears only after the daemon confirms the send, a call
 * panel changes only on a call-state event.
 */

import type { DaemonEvent, JournalRow, RosterEntry } from "./types.js";
import { messageFor } from "./errors.js";

export type Screen = "login" | "signup" | "home" | "admin";

export interface ChatMessage {
  direction: "in" | "out";
  peer: string;
  body: string;
  at_ms: number;
}

export type CallPhase = "idle" | "ringing-in" | "ringing-out" | "active";

export interface CallPanel {
  phase: CallPhase;
  callId: number | null;
  peer: string | null;
  stats: Record<string, unknown> | null;
}

export type TransferStatus = "offered" | "running" | "done" | "failed";

export interface TransferRow {
  transferId: number;
  peer: string;
  direction: "in" | "out";
  filename: string | null;
  size: number | null;
  transferred: number;
  status: TransferStatus;
}

export interface Toast {
  code: string;
  text: string;
}

export interface MonitorState {
  denied: boolean;
  rows: JournalRow[];
}

export interface ViewState {
  screen: Screen;
  connected: boolean;
  username: string | null;
  roster: RosterEntry[];
  chats: Record<string, ChatMessage[]>;
  call: CallPanel;
  transfers: TransferRow[];
  toasts: Toast[];
  monitor: MonitorState;
}

export type UserAction =
  | { action: "navigate"; screen: Screen }
  | { action: "logged-in"; username: string }
  | { action: "logged-out" }
  | { action: "chat-confirmed"; peer: string; body: string; at_ms: number }
  | { action: "offer-confirmed"; peer: string; transferId: number; filename: string; size: number }
  | { action: "dismiss-toast"; index: number }
  | { action: "monitor-rows"; rows: JournalRow[] }
  | { action: "monitor-denied" };

export type Input =
  | { kind: "daemon"; event: DaemonEvent }
  | { kind: "user"; action: UserAction };

const IDLE_CALL: CallPanel = { phase: "idle", callId: null, peer: null, stats: null };

export function initialView(): ViewState {
  return {
    screen: "login",
    connected: false,
    username: null,
    roster: [],
    chats: {},
    call: { ...IDLE_CALL },
    transfers: [],
    toasts: [],
    monitor: { denied: false, rows: [] },
  };
}

function appendChat(view: ViewState, peer: string, msg: ChatMessage): ViewState {
  const pane = view.chats[peer] ?? [];
  return { ...view, chats: { ...view.chats, [peer]: [...pane, msg] } };
}

function upsertTransfer(
  view: ViewState,
  transferId: number,
  update: (row: TransferRow) => TransferRow,
  fresh?: () => TransferRow,
): ViewState {
  const idx = view.transfers.findIndex((t) => t.transferId === transferId);
  if (idx < 0) {
    if (!fresh) return view;
    return { ...view, transfers: [...view.transfers, update(fresh())] };
  }
  const transfers = view.transfers.slice();
  transfers[idx] = update(transfers[idx]);
  return { ...view, transfers };
}

function applyDaemon(view: ViewState, ev: DaemonEvent): ViewState {
  switch (ev.event) {
    case "snapshot": {
      const p = ev.payload;
      return {
        ...view,
        connected: p.connected,
        username: p.username,
        screen: p.username ? (view.screen === "admin" ? "admin" : "home") : view.screen,
        roster: p.roster,
        call: p.call
          ? { phase: "active", callId: p.call.call_id, peer: p.call.peer, stats: null }
          : { ...IDLE_CALL },
        transfers: p.pending_offers.map((o) => ({
          transferId: o.transfer_id,
          peer: o.from,
          direction: "in" as const,
          filename: o.filename,
          size: o.size,
          transferred: 0,
          status: "offered" as const,
        })),
      };
    }
    case "presence-changed": {
      const { username, state } = ev.payload;
      const known = view.roster.some((r) => r.username === username);
      const roster = known
        ? view.roster.map((r) => (r.username === username ? { ...r, state } : r))
        : [...view.roster, { username, state }];
      return { ...view, roster };
    }
    case "message-received":
      return appendChat(view, ev.payload.from, {
        direction: "in",
        peer: ev.payload.from,
        body: ev.payload.body,
        at_ms: ev.payload.received_at_ms,
      });
    case "call-incoming":
      return {
        ...view,
        call: { phase: "ringing-in", callId: ev.payload.call_id, peer: ev.payload.caller, stats: null },
      };
    case "call-state": {
      const p = ev.payload;
      switch (p.state) {
        case "INVITED":
          return { ...view, call: { phase: "ringing-out", callId: p.call_id, peer: p.peer ?? null, stats: null } };
        case "RINGING":
          // callee side; call-incoming already set the panel, keep its peer
          return view.call.callId === p.call_id ? view : { ...view, call: { phase: "ringing-in", callId: p.call_id, peer: p.peer ?? view.call.peer, stats: null } };
        case "ACTIVE":
          return { ...view, call: { ...view.call, phase: "active", callId: p.call_id } };
        case "REJECTED":
        case "ENDED":
          return view.call.callId === p.call_id ? { ...view, call: { ...IDLE_CALL } } : view;
      }
      return view;
    }
    case "call-stats":
      if (view.call.callId !== ev.payload.call_id) return view;
      return { ...view, call: { ...view.call, stats: { ...ev.payload } } };
    case "file-offer":
      return upsertTransfer(
        view,
        ev.payload.transfer_id,
        (row) => row,
        () => ({
          transferId: ev.payload.transfer_id,
          peer: ev.payload.from,
          direction: "in",
          filename: ev.payload.filename,
          size: ev.payload.size,
          transferred: 0,
          status: "offered",
        }),
      );
    case "file-progress": {
      const p = ev.payload;
      return upsertTransfer(view, p.transfer_id, (row) => {
        if (p.done !== undefined) {
          return { ...row, status: p.ok ? "done" : "failed", transferred: p.ok ? (row.size ?? row.transferred) : row.transferred };
        }
        return { ...row, status: "running", transferred: p.received ?? row.transferred, size: p.total ?? row.size };
      });
    }
    case "error": {
      const p = ev.payload;
      const next = p.code === "Disconnected" ? { ...view, connected: false } : view;
      return { ...next, toasts: [...next.toasts, { code: p.code, text: messageFor(p.code, p.message) }] };
    }
  }
}

function applyUser(view: ViewState, action: UserAction): ViewState {
  switch (action.action) {
    case "navigate":
      return { ...view, screen: action.screen };
    case "logged-in":
      return { ...view, username: action.username, connected: true, screen: "home" };
    case "logged-out":
      return { ...initialView(), connected: view.connected };
    case "chat-confirmed":
      return appendChat(view, action.peer, {
        direction: "out",
        peer: action.peer,
        body: action.body,
        at_ms: action.at_ms,
      });
    case "offer-confirmed":
      return {
        ...view,
        transfers: [
          ...view.transfers,
          {
            transferId: action.transferId,
            peer: action.peer,
            direction: "out",
            filename: action.filename,
            size: action.size,
            transferred: 0,
            status: "offered",
          },
        ],
      };
    case "dismiss-toast":
      return { ...view, toasts: view.toasts.filter((_, i) => i !== action.index) };
    case "monitor-rows":
      return { ...view, monitor: { denied: false, rows: action.rows } };
    case "monitor-denied":
      return { ...view, monitor: { denied: true, rows: [] } };
  }
}

export function reduce(view: ViewState, input: Input): ViewState {
  return input.kind === "daemon" ? applyDaemon(view, input.event) : applyUser(view, input.action);
}

export function replay(inputs: Input[], start: ViewState = initialView()): ViewState {
  return inputs.reduce(reduce, start);
}

/** Detects dropped subscription events; a gap means the stream must be
 * re-established and the view rebuilt from the next snapshot. */
export class SeqTracker {
  private last: number | null = null;

  observe(seq: number): boolean {
    const ok = this.last === null || seq === this.last + 1;
    this.last = seq;
    return ok;
  }

  reset(): void {
    this.last = null;
  }
}
