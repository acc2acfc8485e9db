/** Shapes shared with the daemon's control protocol and the server's
 * admin endpoint. Field names mirror the wire JSON exactly. */

export type PresenceState = "ONLINE" | "OFFLINE";

export interface RosterEntry {
  username: string;
  state: PresenceState;
  picture?: string | null;
}

export interface SnapshotPayload {
  username: string | null;
  connected: boolean;
  roster: RosterEntry[];
  call: { call_id: number; peer: string; state: string } | null;
  pending_offers: Array<{
    transfer_id: number;
    from: string;
    filename: string;
    size: number;
  }>;
}

export interface MessagePayload {
  from: string;
  body: string;
  message_id?: string | null;
  sent_at_ms: number;
  received_at_ms: number;
}

export interface CallStatePayload {
  call_id: number;
  state: "INVITED" | "RINGING" | "ACTIVE" | "REJECTED" | "ENDED";
  peer?: string;
  reason?: string;
  route?: string[] | null;
}

export interface CallStatsPayload {
  call_id: number;
  frames_sent?: number;
  frames_received?: number;
  lost?: number;
  late?: number;
  duplicates?: number;
  loss_ratio?: number;
  median_delay_ms?: number | null;
  jitter_ms?: number;
}

export interface FileOfferPayload {
  transfer_id: number;
  from: string;
  filename: string;
  size: number;
}

export interface FileProgressPayload {
  transfer_id: number;
  received?: number;
  total?: number;
  done?: boolean;
  ok?: boolean;
  code?: string;
}

export interface ErrorPayload {
  code: string;
  message?: string;
  call_id?: number;
}

export type DaemonEvent =
  | { event: "snapshot"; seq: number; payload: SnapshotPayload }
  | { event: "presence-changed"; seq: number; payload: { username: string; state: PresenceState } }
  | { event: "message-received"; seq: number; payload: MessagePayload }
  | { event: "call-incoming"; seq: number; payload: { call_id: number; caller: string } }
  | { event: "call-state"; seq: number; payload: CallStatePayload }
  | { event: "call-stats"; seq: number; payload: CallStatsPayload }
  | { event: "file-offer"; seq: number; payload: FileOfferPayload }
  | { event: "file-progress"; seq: number; payload: FileProgressPayload }
  | { event: "error"; seq: number; payload: ErrorPayload };

export interface RpcError {
  code: string;
  message: string;
}

export interface JournalRow {
  seq: number;
  received_at_ms: number;
  from: string;
  to: string;
  body: string;
}

export interface JournalFilter {
  user?: string;
  substring?: string;
  since_ms?: number;
  until_ms?: number;
}
