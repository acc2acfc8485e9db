"""Error taxonomy shared by every layer.

Each error carries a stable ``code`` string that is what actually crosses
the wire in ERROR envelopes; the Python class is the in-process view.
"""

from __future__ import annotations


class PeerVoipError(Exception):
    code = "Error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code


# wire-protocol
class BodyTooLarge(PeerVoipError):
    code = "BodyTooLarge"


class FrameTooLarge(PeerVoipError):
    code = "FrameTooLarge"


class Malformed(PeerVoipError):
    code = "Malformed"


# auth-directory
class UsernameTaken(PeerVoipError):
    code = "UsernameTaken"


class WeakPassword(PeerVoipError):
    code = "WeakPassword"


class BadCredentials(PeerVoipError):
    code = "BadCredentials"


class Unauthorized(PeerVoipError):
    code = "Unauthorized"


class PictureTooLarge(PeerVoipError):
    code = "PictureTooLarge"


class UnsupportedFormat(PeerVoipError):
    code = "UnsupportedFormat"


# signaling-routing
class RecipientOffline(PeerVoipError):
    code = "RecipientOffline"


class CalleeOffline(PeerVoipError):
    code = "CalleeOffline"


class CalleeBusy(PeerVoipError):
    code = "CalleeBusy"


class UnknownCall(PeerVoipError):
    code = "UnknownCall"


class Unreachable(PeerVoipError):
    code = "Unreachable"


class IllegalTransition(PeerVoipError):
    code = "IllegalTransition"


# secure-transport
class ExchangeTimeout(PeerVoipError):
    code = "ExchangeTimeout"


class ExchangeTampered(PeerVoipError):
    code = "ExchangeTampered"


class AuthenticationFailure(PeerVoipError):
    code = "AuthenticationFailure"


class NonceReuse(PeerVoipError):
    code = "NonceReuse"


# media-engine
class NoActiveCall(PeerVoipError):
    code = "NoActiveCall"


# file-transfer
class BlockedExtension(PeerVoipError):
    code = "BlockedExtension"


class FileTooLarge(PeerVoipError):
    code = "FileTooLarge"


class DigestMismatch(PeerVoipError):
    code = "DigestMismatch"


class PeerDisconnected(PeerVoipError):
    code = "PeerDisconnected"


# node-daemon
class NotLoggedIn(PeerVoipError):
    code = "NotLoggedIn"


class CallSetupFailed(PeerVoipError):
    code = "CallSetupFailed"


class TransferFailed(PeerVoipError):
    code = "TransferFailed"


_BY_CODE = {
    cls.code: cls
    for cls in list(globals().values())
    if isinstance(cls, type) and issubclass(cls, PeerVoipError)
}


def error_for_code(code: str, message: str = "") -> PeerVoipError:
    """Rehydrate an exception from a wire-level error code."""
    cls = _BY_CODE.get(code, PeerVoipError)
    err = cls(message)
    if cls is PeerVoipError:
        err.code = code or "Error"
    return err
