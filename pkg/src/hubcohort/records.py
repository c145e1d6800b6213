"""Canonical data model and parsing of raw hub documents.

A raw document is whatever the hub API returned (a JSON object); a
:class:`ModelRecord` is the validated, normalized form every later stage
works with. Records serialize to one JSON object per line with sorted keys
so stored snapshots are byte-deterministic.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from typing import Any, Optional

from .errors import ParseError

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)

DOMAINS = (
    "NLP",
    "ComputerVision",
    "Multimodal",
    "Audio",
    "ReinforcementLearning",
    "Unknown",
)

_METRIC_NAMES = ("accuracy", "f1", "rouge1")
_METRIC_RE = re.compile(
    r"\b(%s)\b[ \t]*[:=]?[ \t]*([0-9]+(?:\.[0-9]+)?)[ \t]*(%%?)" % "|".join(_METRIC_NAMES),
    re.IGNORECASE,
)

_CO2_RE = re.compile(
    r"co2[_ ]?(?:eq)?[^0-9]{0,60}?([0-9]+(?:\.[0-9]+)?)\s*(g|kg|t)?\b",
    re.IGNORECASE,
)
_HARDWARE_RE = re.compile(r"hardware[^:=\n]*[:=][ \t]*([^\n,;]+)", re.IGNORECASE)
_REGION_RE = re.compile(r"(?:region|location)[^:=\n]*[:=][ \t]*([^\n,;]+)", re.IGNORECASE)

_UNIT_TO_GRAMS = {"g": 1.0, "kg": 1000.0, "t": 1_000_000.0}


def _iso(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(value: str) -> datetime:
    """Parse an ISO-8601 timestamp into an aware UTC datetime."""
    ts = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


@dataclass
class ModelRecord:
    """One hub model: identity, popularity signals, tags, extracted context."""

    model_id: str
    created_at: datetime = EPOCH
    size_bytes: Optional[int] = None
    downloads: int = 0
    likes: int = 0
    tags: list[str] = field(default_factory=list)
    domain: str = "Unknown"
    metrics: dict[str, float] = field(default_factory=dict)
    co2e_grams: Optional[float] = None
    hardware: Optional[str] = None
    region: Optional[str] = None
    card_text: str = ""
    commit_count: int = 0
    discussion_count: int = 0
    library: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, datetime):
                value = _iso(value)
            out[f.name] = value
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelRecord":
        known = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in data.items() if k in known}
        if "created_at" in kwargs and isinstance(kwargs["created_at"], str):
            kwargs["created_at"] = parse_timestamp(kwargs["created_at"])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, line: str) -> "ModelRecord":
        return cls.from_dict(json.loads(line))


@dataclass
class CommitRecord:
    """One commit in a model's history."""

    model_id: str
    sha: str
    message: str
    timestamp: datetime = EPOCH
    files_edited: Optional[list[str]] = None
    category: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["timestamp"] = _iso(self.timestamp)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CommitRecord":
        known = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in data.items() if k in known}
        if isinstance(kwargs.get("timestamp"), str):
            kwargs["timestamp"] = parse_timestamp(kwargs["timestamp"])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, line: str) -> "CommitRecord":
        return cls.from_dict(json.loads(line))


@dataclass
class CarbonInfo:
    """Extracted emissions context plus provenance warnings."""

    co2e_grams: Optional[float] = None
    hardware: Optional[str] = None
    region: Optional[str] = None
    warnings: list[str] = field(default_factory=list)


def extract_metrics(card_text: str) -> dict[str, float]:
    """Pull evaluation metrics (accuracy, f1, rouge1) out of free card text.

    Values above 1 are treated as percentages and divided by 100; the first
    occurrence of each metric name wins. Values that are still outside [0,1]
    after the percent rule are dropped as unparseable.
    """
    found: dict[str, float] = {}
    for match in _METRIC_RE.finditer(card_text):
        name = match.group(1).lower()
        if name in found:
            continue
        value = float(match.group(2))
        if match.group(3) == "%" or value > 1:
            value /= 100.0
        if 0.0 <= value <= 1.0:
            found[name] = value
    return found


def _co2_to_grams(value: float, unit: Optional[str], warnings: list[str]) -> float:
    if unit:
        return value * _UNIT_TO_GRAMS[unit.lower()]
    # No unit written anywhere: assume grams for large values, kilograms
    # for small ones, and flag the guess either way.
    if value >= 100:
        warnings.append(f"co2 value {value} had no unit; assumed grams")
        return value
    warnings.append(f"co2 value {value} had no unit; assumed kilograms")
    return value * 1000.0


def _structured_co2(raw: dict[str, Any], warnings: list[str]) -> Optional[float]:
    for key in ("co2_eq_emissions", "co2_emissions", "co2e_grams", "co2"):
        value = raw.get(key)
        if value is None:
            continue
        if isinstance(value, dict):
            inner = value.get("emissions")
            if inner is None:
                continue
            unit = value.get("unit") or value.get("emissions_unit")
            unit = unit.split("/")[0].strip() if isinstance(unit, str) else None
            if unit not in _UNIT_TO_GRAMS:
                unit = None
            return _co2_to_grams(float(inner), unit, warnings)
        if isinstance(value, str):
            match = re.match(r"\s*([0-9]+(?:\.[0-9]+)?)\s*(g|kg|t)?\s*$", value, re.IGNORECASE)
            if not match:
                continue
            return _co2_to_grams(float(match.group(1)), match.group(2), warnings)
        return _co2_to_grams(float(value), None, warnings)
    return None


def extract_carbon(raw: dict[str, Any], card_text: str) -> CarbonInfo:
    """Extract reported emissions, hardware, and region.

    Structured metadata fields are preferred; the model card text is the
    fallback. When both disagree the structured value is kept and a
    provenance warning recorded.
    """
    info = CarbonInfo()
    info.co2e_grams = _structured_co2(raw, info.warnings)
    info.hardware = raw.get("hardware") or raw.get("hardware_used")
    info.region = raw.get("region") or raw.get("geographical_location")

    card_co2 = None
    match = _CO2_RE.search(card_text)
    if match:
        card_co2 = _co2_to_grams(float(match.group(1)), match.group(2), info.warnings)
    if info.co2e_grams is None:
        info.co2e_grams = card_co2
    elif card_co2 is not None and abs(card_co2 - info.co2e_grams) > 1e-9:
        info.warnings.append(
            f"structured co2 {info.co2e_grams}g conflicts with card value {card_co2}g;"
            " kept structured"
        )
    if info.hardware is None:
        m = _HARDWARE_RE.search(card_text)
        if m:
            info.hardware = m.group(1).strip()
    if info.region is None:
        m = _REGION_RE.search(card_text)
        if m:
            info.region = m.group(1).strip()
    return info


def _require_non_negative(raw: dict[str, Any], key: str, default: int = 0) -> int:
    value = raw.get(key, default)
    if value is None:
        return default
    try:
        value = int(value)
    except (TypeError, ValueError):
        raise ParseError("type", f"field {key!r} is not an integer: {value!r}")
    if value < 0:
        raise ParseError("range", f"field {key!r} is negative: {value}")
    return value


def parse_model_record(raw: dict[str, Any]) -> ModelRecord:
    """Turn a raw hub document into a validated ModelRecord.

    Missing optional fields stay absent (None), unknown extra fields are
    ignored. Domain mapping happens later, in preprocessing.
    """
    model_id = raw.get("id") or raw.get("model_id") or raw.get("modelId")
    if not model_id:
        raise ParseError("required-field", "document has no model id")

    created_raw = raw.get("createdAt") or raw.get("created_at") or raw.get("lastModified")
    created_at = parse_timestamp(created_raw) if isinstance(created_raw, str) else EPOCH

    size_bytes = raw.get("size_bytes")
    if size_bytes is None and isinstance(raw.get("siblings"), list):
        sizes = [s.get("size") for s in raw["siblings"] if isinstance(s, dict)]
        sizes = [s for s in sizes if isinstance(s, (int, float))]
        size_bytes = int(sum(sizes)) if sizes else None
    if size_bytes is not None:
        size_bytes = int(size_bytes)
        if size_bytes < 0:
            raise ParseError("range", f"size_bytes is negative: {size_bytes}")

    tags = [str(t) for t in raw.get("tags") or []]
    card_text = raw.get("card_text") or raw.get("cardText") or ""

    commits = raw.get("commits")
    commit_count = len(commits) if isinstance(commits, list) else _require_non_negative(raw, "commit_count")
    discussions = raw.get("discussions")
    if isinstance(discussions, dict):
        discussion_count = int(discussions.get("count", 0))
    elif isinstance(discussions, list):
        discussion_count = len(discussions)
    else:
        discussion_count = _require_non_negative(raw, "discussion_count")

    carbon = extract_carbon(raw, card_text)

    return ModelRecord(
        model_id=str(model_id),
        created_at=created_at,
        size_bytes=size_bytes,
        downloads=_require_non_negative(raw, "downloads"),
        likes=_require_non_negative(raw, "likes"),
        tags=tags,
        metrics=extract_metrics(card_text),
        co2e_grams=carbon.co2e_grams,
        hardware=carbon.hardware,
        region=carbon.region,
        card_text=card_text,
        commit_count=commit_count,
        discussion_count=discussion_count,
        library=raw.get("library_name") or raw.get("library"),
    )


def parse_commits(model_id: str, raw: dict[str, Any]) -> list[CommitRecord]:
    """Extract the commit list from a raw detail document."""
    out = []
    for doc in raw.get("commits") or []:
        sha = doc.get("sha")
        if not sha:
            raise ParseError("required-field", f"commit without sha for {model_id}")
        ts = doc.get("timestamp") or doc.get("date")
        out.append(
            CommitRecord(
                model_id=model_id,
                sha=str(sha),
                message=str(doc.get("message", "")),
                timestamp=parse_timestamp(ts) if isinstance(ts, str) else EPOCH,
            )
        )
    return out
