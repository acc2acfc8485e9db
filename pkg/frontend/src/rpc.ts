/** Thin client for the daemon's HTTP control bridge: POST /api/rpc with
 * {method, params}, answered by {result} or {error: {code, message}}. */

import { messageFor } from "./errors.js";

export class ControlError extends Error {
  constructor(
    public code: string,
    public detail: string,
  ) {
    super(messageFor(code, detail));
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class RpcClient {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  async call<T = Record<string, unknown>>(method: string, params: Record<string, unknown> = {}): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}/api/rpc`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ method, params }),
    });
    const reply = (await response.json()) as {
      result?: T;
      error?: { code: string; message?: string };
    };
    if (reply.error) {
      throw new ControlError(reply.error.code, reply.error.message ?? "");
    }
    if (!response.ok) {
      throw new ControlError("Error", `HTTP ${response.status}`);
    }
    return reply.result as T;
  }
}
