"""Exception types shared across the toolkit.

Errors that can arise from several distinct causes carry a short ``kind``
string (e.g. ``CrawlError("transient")``) so callers can branch without
parsing messages.
"""

from __future__ import annotations


class HubCohortError(Exception):
    """Base class for all toolkit errors."""


class UsageError(HubCohortError):
    """The caller violated a documented precondition."""


class DegenerateInput(HubCohortError):
    """Statistically valid call on input the method cannot handle
    (constant series, |r| = 1, no analyzable stratum)."""


class NotFound(HubCohortError):
    """A referenced model, snapshot, or resource does not exist."""


class _KindError(HubCohortError):
    """Error with a machine-readable failure kind."""

    def __init__(self, kind: str, message: str = ""):
        self.kind = kind
        super().__init__(f"{kind}: {message}" if message else kind)


class CrawlError(_KindError):
    """Hub crawl failure. Kinds: transient, auth, decode, throttled."""


class ParseError(_KindError):
    """Raw document could not be turned into a record.
    Kinds: required-field, range, type."""


class StoreError(_KindError):
    """Snapshot store failure. Kinds: conflict, io, decode."""


class CommitImportError(HubCohortError):
    """A commit-files CSV row is malformed; carries the 1-based row number."""

    def __init__(self, row: int, message: str):
        self.row = row
        super().__init__(f"row {row}: {message}")


class PluginError(_KindError):
    """External classifier plugin failure. Kinds: timeout, protocol, spawn."""
