/** User-facing text for every error kind the daemon can report.
 * An unmapped code falls back to the raw code so nothing is silent. */

export const ERROR_MESSAGES: Record<string, string> = {
  Error: "Something went wrong.",
  Malformed: "The daemon rejected a malformed request.",
  BodyTooLarge: "That message is too large to send.",
  FrameTooLarge: "A media frame exceeded the datagram limit.",
  UsernameTaken: "That username is already taken.",
  WeakPassword: "Password is too weak; use at least 8 characters.",
  BadCredentials: "Wrong username or password.",
  Unauthorized: "You are not authorized to do that.",
  PictureTooLarge: "Profile picture is too large.",
  UnsupportedFormat: "Unsupported image format.",
  RecipientOffline: "That user is offline; message not delivered.",
  CalleeOffline: "That user is offline and cannot take calls.",
  CalleeBusy: "That user is already in a call.",
  UnknownCall: "That call no longer exists.",
  Unreachable: "No route to that peer right now.",
  IllegalTransition: "The call is not in a state that allows that.",
  ExchangeTimeout: "The other side did not answer in time.",
  ExchangeTampered: "Secure session setup failed integrity checks.",
  AuthenticationFailure: "Received data failed authentication and was discarded.",
  NonceReuse: "Replayed media detected and discarded.",
  NoActiveCall: "There is no active call.",
  BlockedExtension: "That file type is blocked.",
  FileTooLarge: "That file exceeds the size limit.",
  DigestMismatch: "File arrived corrupted; transfer abandoned.",
  PeerDisconnected: "The other side disconnected.",
  NotLoggedIn: "Sign in first.",
  CallSetupFailed: "Could not set up the call.",
  TransferFailed: "File transfer failed.",
  Disconnected: "Connection to the server lost; reconnecting...",
};

export function messageFor(code: string, detail?: string): string {
  const base = ERROR_MESSAGES[code] ?? code;
  return detail ? `${base} (${detail})` : base;
}
