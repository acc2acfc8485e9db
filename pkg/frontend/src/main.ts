/** Browser bootstrap: one event subscription, one RpcClient, one render
 * loop. State changes only through reduce(); DOM handlers translate
 * clicks into RPCs and fold the confirmations back in. */

import type { DaemonEvent, JournalFilter } from "./types.js";
import { initialView, replay, SeqTracker, type Input, type ViewState } from "./state.js";
import { renderApp } from "./render.js";
import { RpcClient, ControlError } from "./rpc.js";
import { MonitorClient } from "./monitor.js";

const rpc = new RpcClient("");
let view: ViewState = initialView();
let monitor: MonitorClient | null = null;
let monitorFilter: JournalFilter = {};
const seqs = new SeqTracker();
const root = document.getElementById("app")!;

function apply(...inputs: Input[]): void {
  view = replay(inputs, view);
  root.innerHTML = renderApp(view);
}

function toast(err: unknown): void {
  const code = err instanceof ControlError ? err.code : "Error";
  const message = err instanceof Error ? err.message : String(err);
  apply({
    kind: "daemon",
    event: { event: "error", seq: -1, payload: { code, message } },
  });
}

function subscribe(): void {
  const source = new EventSource("/api/events");
  source.onmessage = (msg) => {
    const event = JSON.parse(msg.data) as DaemonEvent;
    if (!seqs.observe(event.seq)) {
      // dropped event: start over from a fresh snapshot
      source.close();
      seqs.reset();
      subscribe();
      return;
    }
    apply({ kind: "daemon", event });
  };
  source.onerror = () => {
    apply({
      kind: "daemon",
      event: { event: "error", seq: -1, payload: { code: "Disconnected" } },
    });
  };
}

async function refreshMonitor(): Promise<void> {
  if (!monitor) {
    const base = window.prompt("admin endpoint (http://127.0.0.1:PORT)") ?? "";
    const token = window.prompt("admin session token") ?? "";
    monitor = new MonitorClient(base, token);
  }
  const result = await monitor.fetchJournal(monitorFilter);
  apply({
    kind: "user",
    action: result.ok ? { action: "monitor-rows", rows: result.rows } : { action: "monitor-denied" },
  });
}

async function onAction(el: HTMLElement): Promise<void> {
  const action = el.dataset.action!;
  const peer = el.dataset.peer ?? "";
  const callId = Number(el.dataset.callId ?? 0);
  switch (action) {
    case "navigate": {
      const screen = el.dataset.screen as ViewState["screen"];
      apply({ kind: "user", action: { action: "navigate", screen } });
      if (screen === "admin") await refreshMonitor();
      break;
    }
    case "logout":
      await rpc.call("logout");
      apply({ kind: "user", action: { action: "logged-out" } });
      break;
    case "open-chat":
      apply({ kind: "user", action: { action: "chat-confirmed", peer, body: "", at_ms: Date.now() } });
      break;
    case "start-call":
      await rpc.call("start_call", { callee: peer });
      break;
    case "accept-call":
      await rpc.call("accept_call", { call_id: callId });
      break;
    case "reject-call":
      await rpc.call("reject_call", { call_id: callId });
      break;
    case "end-call":
      await rpc.call("end_call", { call_id: callId });
      break;
    case "accept-file":
      // acceptance is always explicit: this runs only from the button
      await rpc.call("accept_file", { transfer_id: Number(el.dataset.transferId) });
      break;
    case "send-file": {
      const input = document.createElement("input");
      input.type = "file";
      input.onchange = async () => {
        const file = input.files?.[0];
        if (!file) return;
        const bytes = new Uint8Array(await file.arrayBuffer());
        let binary = "";
        bytes.forEach((b) => (binary += String.fromCharCode(b)));
        const result = await rpc.call<{ transfer_id: number }>("offer_file", {
          to: peer,
          filename: file.name,
          data: btoa(binary),
        });
        apply({
          kind: "user",
          action: {
            action: "offer-confirmed",
            peer,
            transferId: result.transfer_id,
            filename: file.name,
            size: file.size,
          },
        });
      };
      input.click();
      break;
    }
    case "set-picture": {
      const input = document.createElement("input");
      input.type = "file";
      input.accept = "image/png,image/jpeg";
      input.onchange = async () => {
        const file = input.files?.[0];
        if (!file) return;
        const bytes = new Uint8Array(await file.arrayBuffer());
        let binary = "";
        bytes.forEach((b) => (binary += String.fromCharCode(b)));
        await rpc.call("set_picture", { picture: btoa(binary) });
      };
      input.click();
      break;
    }
    case "dismiss-toast":
      apply({ kind: "user", action: { action: "dismiss-toast", index: Number(el.dataset.index) } });
      break;
  }
}

async function onSubmit(form: HTMLFormElement): Promise<void> {
  const data = new FormData(form);
  if (form.id === "auth") {
    const username = String(data.get("username") ?? "");
    const password = String(data.get("password") ?? "");
    if (form.dataset.mode === "signup") {
      await rpc.call("signup", { username, password });
      apply({ kind: "user", action: { action: "navigate", screen: "login" } });
    } else {
      await rpc.call("login", { username, password });
      apply({ kind: "user", action: { action: "logged-in", username } });
      await rpc.call("roster");
    }
    return;
  }
  if (form.id === "monitor-filter") {
    monitorFilter = {
      user: String(data.get("user") ?? "") || undefined,
      substring: String(data.get("substring") ?? "") || undefined,
    };
    await refreshMonitor();
    return;
  }
  if (form.classList.contains("chat-send")) {
    const peer = form.dataset.peer!;
    const body = String(data.get("body") ?? "");
    if (!body) return;
    await rpc.call("send_chat", { to: peer, body });
    // render only after the daemon confirmed delivery to the server
    apply({ kind: "user", action: { action: "chat-confirmed", peer, body, at_ms: Date.now() } });
    form.reset();
  }
}

document.addEventListener("click", (ev) => {
  const el = (ev.target as HTMLElement).closest<HTMLElement>("[data-action]");
  if (!el) return;
  ev.preventDefault();
  onAction(el).catch(toast);
});

document.addEventListener("submit", (ev) => {
  const form = ev.target as HTMLFormElement;
  ev.preventDefault();
  onSubmit(form).catch(toast);
});

root.innerHTML = renderApp(view);
subscribe();
