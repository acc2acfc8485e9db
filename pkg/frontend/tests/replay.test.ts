/** Replaying a recorded session must land on exactly the expected
 * ViewState: the view is a pure fold over the event stream. */

import { describe, expect, it } from "vitest";
import { initialView, replay, type ViewState } from "../src/state.js";
import { SESSION } from "./fixtures/session.js";

const GOLDEN: ViewState = {
  screen: "home",
  connected: false, // the session ends on a Disconnected error
  username: "alice",
  roster: [
    { username: "alice", state: "ONLINE" },
    { username: "bob", state: "OFFLINE" },
    { username: "carol", state: "OFFLINE" },
    { username: "dave", state: "ONLINE" },
  ],
  chats: {
    bob: [
      { direction: "in", peer: "bob", body: "hi alice", at_ms: 1000 },
      { direction: "in", peer: "bob", body: "you there?", at_ms: 2000 },
      { direction: "in", peer: "bob", body: "call later", at_ms: 3000 },
      { direction: "in", peer: "bob", body: "back", at_ms: 4000 },
      { direction: "in", peer: "bob", body: "almost done", at_ms: 6000 },
    ],
    dave: [
      { direction: "in", peer: "dave", body: "hey", at_ms: 5000 },
      { direction: "in", peer: "dave", body: "good call", at_ms: 9000 },
    ],
  },
  call: { phase: "idle", callId: null, peer: null, stats: null },
  transfers: [
    {
      transferId: 500,
      peer: "carol",
      direction: "in",
      filename: "notes.txt",
      size: 2048,
      transferred: 2048,
      status: "done",
    },
    {
      transferId: 501,
      peer: "bob",
      direction: "in",
      filename: "report.pdf",
      size: 4096,
      transferred: 4096,
      status: "done",
    },
  ],
  toasts: [
    { code: "RecipientOffline", text: "That user is offline; message not delivered." },
    { code: "ExchangeTimeout", text: "The other side did not answer in time." },
    { code: "Disconnected", text: "Connection to the server lost; reconnecting..." },
  ],
  monitor: { denied: false, rows: [] },
};

describe("event replay", () => {
  it("is a 50-event session", () => {
    expect(SESSION).toHaveLength(50);
    SESSION.forEach((e, i) => expect(e.seq).toBe(i + 1));
  });

  it("folds to the golden ViewState", () => {
    const final = replay(SESSION.map((event) => ({ kind: "daemon" as const, event })));
    expect(final).toEqual(GOLDEN);
  });

  it("is insensitive to where the replay is split", () => {
    const inputs = SESSION.map((event) => ({ kind: "daemon" as const, event }));
    for (const cut of [1, 7, 25, 49]) {
      const mid = replay(inputs.slice(0, cut), initialView());
      const final = replay(inputs.slice(cut), mid);
      expect(final).toEqual(GOLDEN);
    }
  });

  it("mid-call prefix shows the active call with live stats", () => {
    // through event 17: call 77 active, ten stats events applied
    const inputs = SESSION.slice(0, 17).map((event) => ({ kind: "daemon" as const, event }));
    const mid = replay(inputs);
    expect(mid.call.phase).toBe("active");
    expect(mid.call.callId).toBe(77);
    expect(mid.call.peer).toBe("bob");
    expect(mid.call.stats).toMatchObject({ frames_received: 500, lost: 0 });
  });
});
