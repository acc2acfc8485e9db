/** Admin journal view backed by the server's GET /journal endpoint.
 *
 * Filtering is delegated entirely to the server: the client builds the
 * query string and renders exactly the rows it gets back, in the order
 * it gets them (journal-seq order). A 403 maps to the access-denied
 * screen rather than an empty table.
 */

import type { JournalFilter, JournalRow } from "./types.js";

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export type MonitorResult = { ok: true; rows: JournalRow[] } | { ok: false; denied: true };

export function journalUrl(baseUrl: string, filter: JournalFilter): string {
  const qs = new URLSearchParams();
  if (filter.user) qs.set("user", filter.user);
  if (filter.substring) qs.set("substring", filter.substring);
  if (filter.since_ms !== undefined) qs.set("since_ms", String(filter.since_ms));
  if (filter.until_ms !== undefined) qs.set("until_ms", String(filter.until_ms));
  const query = qs.toString();
  return `${baseUrl}/journal${query ? `?${query}` : ""}`;
}

export class MonitorClient {
  constructor(
    private baseUrl: string,
    private token: string,
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  async fetchJournal(filter: JournalFilter = {}): Promise<MonitorResult> {
    const response = await this.fetchImpl(journalUrl(this.baseUrl, filter), {
      headers: { Authorization: `Bearer ${this.token}` },
    });
    if (response.status === 403) {
      return { ok: false, denied: true };
    }
    const payload = (await response.json()) as { entries: JournalRow[] };
    return { ok: true, rows: payload.entries };
  }
}
