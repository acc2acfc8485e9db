/** A recorded 50-event daemon session: login snapshot, presence churn,
 * an accepted call with live stats, two inbound transfers, a rejected
 * call, an outgoing call, and a final disconnect. Sequence numbers are
 * contiguous from 1 the way a live subscription delivers them. */

import type { DaemonEvent } from "../../src/types.js";

type Bare = { event: DaemonEvent["event"]; payload: unknown };

const bare: Bare[] = [
  /* 1 */ {
    event: "snapshot",
    payload: {
      username: "alice",
      connected: true,
      roster: [
        { username: "alice", state: "ONLINE" },
        { username: "bob", state: "OFFLINE" },
        { username: "carol", state: "ONLINE" },
      ],
      call: null,
      pending_offers: [],
    },
  },
  /* 2 */ { event: "presence-changed", payload: { username: "bob", state: "ONLINE" } },
  /* 3 */ {
    event: "message-received",
    payload: { from: "bob", body: "hi alice", message_id: "m1", sent_at_ms: 990, received_at_ms: 1000 },
  },
  /* 4 */ {
    event: "message-received",
    payload: { from: "bob", body: "you there?", message_id: "m2", sent_at_ms: 1990, received_at_ms: 2000 },
  },
  /* 5 */ { event: "call-incoming", payload: { call_id: 77, caller: "bob" } },
  /* 6 */ { event: "call-state", payload: { call_id: 77, state: "RINGING" } },
  /* 7 */ { event: "call-state", payload: { call_id: 77, state: "ACTIVE" } },
  /* 8-17 */
  ...Array.from({ length: 10 }, (_, i) => ({
    event: "call-stats" as const,
    payload: {
      call_id: 77,
      frames_received: (i + 1) * 50,
      lost: 0,
      median_delay_ms: 40,
      jitter_ms: 0.2,
    },
  })),
  /* 18 */ { event: "call-state", payload: { call_id: 77, state: "ENDED", reason: "peer-hangup" } },
  /* 19 */ {
    event: "file-offer",
    payload: { transfer_id: 500, from: "carol", filename: "notes.txt", size: 2048 },
  },
  /* 20 */ { event: "file-progress", payload: { transfer_id: 500, received: 1024, total: 2048 } },
  /* 21 */ { event: "file-progress", payload: { transfer_id: 500, received: 2048, total: 2048 } },
  /* 22 */ { event: "file-progress", payload: { transfer_id: 500, done: true, ok: true } },
  /* 23 */ { event: "presence-changed", payload: { username: "carol", state: "OFFLINE" } },
  /* 24 */ { event: "error", payload: { code: "RecipientOffline" } },
  /* 25 */ {
    event: "message-received",
    payload: { from: "bob", body: "call later", message_id: "m3", sent_at_ms: 2990, received_at_ms: 3000 },
  },
  /* 26 */ { event: "call-incoming", payload: { call_id: 78, caller: "bob" } },
  /* 27 */ { event: "call-state", payload: { call_id: 78, state: "RINGING" } },
  /* 28 */ { event: "call-state", payload: { call_id: 78, state: "REJECTED" } },
  /* 29 */ { event: "presence-changed", payload: { username: "dave", state: "ONLINE" } },
  /* 30 */ {
    event: "file-offer",
    payload: { transfer_id: 501, from: "bob", filename: "report.pdf", size: 4096 },
  },
  /* 31 */ { event: "file-progress", payload: { transfer_id: 501, received: 4096, total: 4096 } },
  /* 32 */ { event: "file-progress", payload: { transfer_id: 501, done: true, ok: true } },
  /* 33 */ { event: "error", payload: { code: "ExchangeTimeout" } },
  /* 34 */ { event: "presence-changed", payload: { username: "carol", state: "ONLINE" } },
  /* 35 */ {
    event: "message-received",
    payload: { from: "bob", body: "back", message_id: "m4", sent_at_ms: 3990, received_at_ms: 4000 },
  },
  /* 36 */ { event: "presence-changed", payload: { username: "carol", state: "OFFLINE" } },
  /* 37: stats for a call that already ended must be ignored */
  { event: "call-stats", payload: { call_id: 77, frames_received: 9999 } },
  /* 38: end of a call we no longer track must be ignored */
  { event: "call-state", payload: { call_id: 78, state: "ENDED", reason: "late" } },
  /* 39 */ {
    event: "message-received",
    payload: { from: "dave", body: "hey", message_id: "m5", sent_at_ms: 4990, received_at_ms: 5000 },
  },
  /* 40 */ { event: "presence-changed", payload: { username: "bob", state: "OFFLINE" } },
  /* 41 */ { event: "presence-changed", payload: { username: "bob", state: "ONLINE" } },
  /* 42: progress for an unknown transfer must be ignored */
  { event: "file-progress", payload: { transfer_id: 999, received: 1, total: 2 } },
  /* 43 */ {
    event: "message-received",
    payload: { from: "bob", body: "almost done", message_id: "m6", sent_at_ms: 5990, received_at_ms: 6000 },
  },
  /* 44 */ { event: "call-state", payload: { call_id: 79, state: "INVITED", peer: "dave" } },
  /* 45 */ { event: "call-state", payload: { call_id: 79, state: "ACTIVE" } },
  /* 46 */ {
    event: "call-stats",
    payload: { call_id: 79, frames_received: 100, lost: 1, median_delay_ms: 42, jitter_ms: 0.5 },
  },
  /* 47 */ { event: "call-state", payload: { call_id: 79, state: "ENDED", reason: "hangup" } },
  /* 48 */ { event: "presence-changed", payload: { username: "bob", state: "OFFLINE" } },
  /* 49 */ {
    event: "message-received",
    payload: { from: "dave", body: "good call", message_id: "m7", sent_at_ms: 8990, received_at_ms: 9000 },
  },
  /* 50 */ { event: "error", payload: { code: "Disconnected" } },
];

export const SESSION: DaemonEvent[] = bare.map(
  (e, i) => ({ ...e, seq: i + 1 }) as DaemonEvent,
);
