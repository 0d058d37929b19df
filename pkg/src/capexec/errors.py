"""Error types shared across the supervisor, brokers, channels and client.

Two error codes travel on the wire and in traces:

* 94 -- an operation named a global namespace (a path, an address, a
  process id, a sysctl key) while the process was in capability mode.
* 93 -- a brokered request fell outside the broker's frozen whitelist.

Codes below 1000 that are neither 93 nor 94 are forwarded native errno
values (a whitelisted file that fails to open, a connect that is refused).
Codes at 1000 and above are protocol-level conditions that have no errno
equivalent.
"""

from __future__ import annotations

import os


class CapexecError(Exception):
    """Base class for every error raised by this package."""


# Capability error code space.
ERR_RIGHTS_EXCEEDED = 93
ERR_CAPABILITY_MODE = 94
ERR_PROTOCOL = 1000
ERR_RESOLUTION = 1001
ERR_KEY_UNAVAILABLE = 1002

_ERROR_LABELS = {
    ERR_RIGHTS_EXCEEDED: "Capability rights exceeded",
    ERR_CAPABILITY_MODE: "Not permitted in capability mode",
    ERR_PROTOCOL: "Protocol violation",
    ERR_RESOLUTION: "Name or address does not resolve",
    ERR_KEY_UNAVAILABLE: "Key unavailable from provider",
}


def error_label(code: int) -> str:
    """Human-readable label for an on-wire error code."""
    label = _ERROR_LABELS.get(code)
    if label is not None:
        return label
    try:
        return os.strerror(code)
    except (ValueError, OverflowError):
        return "Unknown error"


class CapabilityError(CapexecError):
    """A request was denied by capability-mode rules or broker limits."""

    def __init__(self, code: int, label: str | None = None):
        self.code = code
        self.label = label if label is not None else error_label(code)
        super().__init__(self.label)


def capability_mode_error() -> CapabilityError:
    return CapabilityError(ERR_CAPABILITY_MODE)


def rights_exceeded_error() -> CapabilityError:
    return CapabilityError(ERR_RIGHTS_EXCEEDED)


# --- declaration ------------------------------------------------------------

class DeclarationError(CapexecError):
    """Base class for declaration parse/schema failures."""


class DeclarationSyntaxError(DeclarationError):
    """Malformed declaration text; carries the 1-based line and column."""

    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"{message} (line {line}, column {column})")


class UnknownServiceError(DeclarationError):
    """A top-level block name is not one of the known services."""

    def __init__(self, name: str, line: int | None = None):
        self.service = name
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"unknown service block {name!r}{where}")


class SchemaError(DeclarationError):
    """A declaration field has the wrong type or an out-of-range value."""


class LimitExceededError(DeclarationError):
    """Declaration size or entry-count cap exceeded."""


# --- channel ----------------------------------------------------------------

class ChannelError(CapexecError):
    """Base class for wire-protocol and transport failures."""


class MessageTooLarge(ChannelError):
    pass


class InvalidAttrName(ChannelError):
    pass


class DecodeError(ChannelError):
    """Base class for frame decoding failures."""


class TruncatedFrame(DecodeError):
    pass


class UnknownValueTag(DecodeError):
    pass


class LengthMismatch(DecodeError):
    pass


class ChannelClosed(ChannelError):
    """The peer endpoint is gone."""


class ChannelTimeout(ChannelError):
    pass


class ProtocolError(ChannelError):
    """Sequence/ordering discipline violated, or a command sent to the
    wrong service."""


class MalformedChannelSpec(ChannelError):
    """CAPEXEC_CHANNELS could not be parsed."""


# --- brokers / supervisor ---------------------------------------------------

class SpawnFailed(CapexecError):
    pass


class PreopenFailed(SpawnFailed):
    """A whitelisted file could not be pre-opened at broker spawn."""

    def __init__(self, filename: str, reason: str):
        self.filename = filename
        super().__init__(f"cannot pre-open {filename!r}: {reason}")


class WorkloadExecFailed(CapexecError):
    pass


class AlreadyEntered(CapexecError):
    """Capability mode entry is irreversible and cannot be repeated."""


class ResolutionFailed(CapexecError):
    """DNS lookup failed for a request that was inside the grant."""


class KeyUnavailable(CapexecError):
    """The sysctl provider has no value for a whitelisted key."""


class ConnectFailed(CapexecError):
    """Network-level failure for a request that was inside the grant."""

    def __init__(self, code: int, label: str | None = None):
        self.code = code
        self.label = label if label is not None else error_label(code)
        super().__init__(f"[{code}] {self.label}")


# --- capcheck ---------------------------------------------------------------

class NotAnObjectFile(CapexecError):
    pass


class MalformedSymbolTable(CapexecError):
    pass


class AnalysisInputError(CapexecError):
    """Malformed edge-list or policy file; carries location in message."""
