/** Pure ViewState -> HTML string rendering. No DOM access here so the
 * whole view layer is testable in node; main.ts owns the document. */

import type { ViewState, TransferRow } from "./state.js";
import { escapeHtml, formatBytes, formatLocalDateTime, formatLocalTime } from "./format.js";

function renderToasts(view: ViewState): string {
  if (view.toasts.length === 0) return "";
  const items = view.toasts
    .map(
      (t, i) =>
        `<li class="toast toast-${escapeHtml(t.code)}">${escapeHtml(t.text)}` +
        `<button data-action="dismiss-toast" data-index="${i}">x</button></li>`,
    )
    .join("");
  return `<ul class="toasts">${items}</ul>`;
}

function renderBanner(view: ViewState): string {
  if (view.connected) return "";
  return `<div class="banner offline">Connection lost - reconnecting...</div>`;
}

function renderAuth(view: ViewState): string {
  const signup = view.screen === "signup";
  return `
    <form id="auth" data-mode="${signup ? "signup" : "login"}">
      <h1>peervoip</h1>
      <input name="username" placeholder="username" autocomplete="username">
      <input name="password" type="password" placeholder="password">
      <button type="submit">${signup ? "Create account" : "Sign in"}</button>
      <a href="#" data-action="navigate" data-screen="${signup ? "login" : "signup"}">
        ${signup ? "Have an account? Sign in" : "New here? Sign up"}
      </a>
    </form>`;
}

function renderRoster(view: ViewState): string {
  const rows = view.roster
    .filter((r) => r.username !== view.username)
    .map((r) => {
      const badge = r.state === "ONLINE" ? "online" : "offline";
      return (
        `<li class="peer">` +
        `<span class="badge ${badge}"></span>${escapeHtml(r.username)}` +
        `<button data-action="open-chat" data-peer="${escapeHtml(r.username)}">chat</button>` +
        `<button data-action="start-call" data-peer="${escapeHtml(r.username)}"` +
        `${r.state === "ONLINE" ? "" : " disabled"}>call</button>` +
        `<button data-action="send-file" data-peer="${escapeHtml(r.username)}">file</button>` +
        `</li>`
      );
    })
    .join("");
  return `<section class="roster"><h2>Users</h2><ul>${rows}</ul></section>`;
}

function renderChats(view: ViewState): string {
  const panes = Object.entries(view.chats)
    .map(([peer, msgs]) => {
      const lines = msgs
        .map(
          (m) =>
            `<li class="msg ${m.direction}">` +
            `<span class="who">${escapeHtml(m.direction === "in" ? m.peer : view.username ?? "me")}</span>` +
            `<span class="when">${formatLocalTime(m.at_ms)}</span>` +
            `<span class="body">${escapeHtml(m.body)}</span></li>`,
        )
        .join("");
      return (
        `<div class="chat-pane" data-peer="${escapeHtml(peer)}">` +
        `<h3>${escapeHtml(peer)}</h3><ul>${lines}</ul>` +
        `<form class="chat-send" data-peer="${escapeHtml(peer)}">` +
        `<input name="body" placeholder="message"><button type="submit">send</button></form></div>`
      );
    })
    .join("");
  return `<section class="chats">${panes}</section>`;
}

function renderCall(view: ViewState): string {
  const c = view.call;
  switch (c.phase) {
    case "idle":
      return `<section class="call idle">No active call</section>`;
    case "ringing-out":
      return (
        `<section class="call ringing-out">Calling ${escapeHtml(c.peer ?? "")}...` +
        `<button data-action="end-call" data-call-id="${c.callId}">cancel</button></section>`
      );
    case "ringing-in":
      return (
        `<section class="call ringing-in">Incoming call from ${escapeHtml(c.peer ?? "")}` +
        `<button data-action="accept-call" data-call-id="${c.callId}">accept</button>` +
        `<button data-action="reject-call" data-call-id="${c.callId}">reject</button></section>`
      );
    case "active": {
      const s = c.stats ?? {};
      const stat = (k: string) => (s[k] === undefined || s[k] === null ? "-" : String(s[k]));
      return (
        `<section class="call active">In call with ${escapeHtml(c.peer ?? "")}` +
        `<dl class="stats">` +
        `<dt>received</dt><dd>${stat("frames_received")}</dd>` +
        `<dt>lost</dt><dd>${stat("lost")}</dd>` +
        `<dt>delay</dt><dd>${stat("median_delay_ms")} ms</dd>` +
        `<dt>jitter</dt><dd>${stat("jitter_ms")} ms</dd></dl>` +
        `<button data-action="end-call" data-call-id="${c.callId}">hang up</button></section>`
      );
    }
  }
}

function renderTransfer(t: TransferRow): string {
  const pct = t.size ? Math.min(100, Math.round((100 * t.transferred) / t.size)) : 0;
  const controls =
    t.status === "offered" && t.direction === "in"
      ? `<button data-action="accept-file" data-transfer-id="${t.transferId}">accept</button>`
      : "";
  return (
    `<li class="transfer ${t.status}">` +
    `${t.direction === "in" ? "from" : "to"} ${escapeHtml(t.peer)}: ` +
    `${escapeHtml(t.filename ?? "?")} (${t.size === null ? "?" : formatBytes(t.size)}) ` +
    `<progress max="100" value="${pct}"></progress> ${escapeHtml(t.status)}${controls}</li>`
  );
}

function renderTransfers(view: ViewState): string {
  if (view.transfers.length === 0) return "";
  return `<section class="transfers"><h2>Files</h2><ul>${view.transfers
    .map(renderTransfer)
    .join("")}</ul></section>`;
}

function renderHome(view: ViewState): string {
  return (
    `<header>Signed in as <strong>${escapeHtml(view.username ?? "")}</strong>` +
    `<button data-action="set-picture">picture</button>` +
    `<button data-action="navigate" data-screen="admin">monitor</button>` +
    `<button data-action="logout">sign out</button></header>` +
    renderRoster(view) +
    renderCall(view) +
    renderChats(view) +
    renderTransfers(view)
  );
}

export function renderMonitor(view: ViewState): string {
  if (view.monitor.denied) {
    return (
      `<section class="monitor denied"><h2>Access denied</h2>` +
      `<p>The journal is readable by administrators only.</p>` +
      `<button data-action="navigate" data-screen="home">back</button></section>`
    );
  }
  const rows = view.monitor.rows
    .map(
      (r) =>
        `<tr><td>${r.seq}</td><td>${formatLocalDateTime(r.received_at_ms)}</td>` +
        `<td>${escapeHtml(r.from)}</td><td>${escapeHtml(r.to)}</td>` +
        `<td>${escapeHtml(r.body)}</td></tr>`,
    )
    .join("");
  return (
    `<section class="monitor"><h2>Chat journal</h2>` +
    `<form id="monitor-filter">` +
    `<input name="user" placeholder="user">` +
    `<input name="substring" placeholder="contains">` +
    `<button type="submit">filter</button></form>` +
    `<table><thead><tr><th>#</th><th>time</th><th>from</th><th>to</th><th>message</th></tr></thead>` +
    `<tbody>${rows}</tbody></table>` +
    `<button data-action="navigate" data-screen="home">back</button></section>`
  );
}

export function renderApp(view: ViewState): string {
  let body: string;
  if (view.screen === "login" || view.screen === "signup") {
    body = renderAuth(view);
  } else if (view.screen === "admin") {
    body = renderMonitor(view);
  } else {
    body = renderHome(view);
  }
  return renderBanner(view) + body + renderToasts(view);
}
