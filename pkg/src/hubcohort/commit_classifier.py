"""Swanson maintenance-category labeling of commit messages.

The reference implementation is a deterministic keyword-stem rule table.
A learned classifier can be swapped in through the plugin boundary:
newline-delimited messages in, one label per line out, over a subprocess
pipe or an HTTP endpoint.
"""

from __future__ import annotations

import re
import subprocess
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import requests

from .errors import PluginError
from .records import CommitRecord

CATEGORIES = ("Corrective", "Adaptive", "Perfective", "Unclassified")

# Priority order: Corrective > Adaptive > Perfective. Single-word entries
# match as word-stem prefixes ("deprecat" hits "deprecated"); multi-word
# entries match as substrings of the whole message.
RULE_TABLE: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("Corrective", ("fix", "bug", "error", "fail", "crash", "patch", "defect", "repair")),
    ("Adaptive", ("upgrade", "update dependency", "migrate", "bump", "compatib", "deprecat", "port")),
    ("Perfective", ("improve", "refactor", "clean", "optimi", "perf", "enhance", "document", "readme", "add")),
)

_WORD_RE = re.compile(r"[a-z0-9]+")


def classify_commit(message: str) -> str:
    """Label one commit message; Unclassified when no keyword matches."""
    lowered = message.lower()
    words = _WORD_RE.findall(lowered)
    for category, keywords in RULE_TABLE:
        for keyword in keywords:
            if " " in keyword:
                if keyword in lowered:
                    return category
            elif any(word.startswith(keyword) for word in words):
                return category
    return "Unclassified"


def classify_corpus(
    commits: Iterable[CommitRecord],
) -> tuple[Counter, dict[str, str]]:
    """Label a whole commit corpus.

    Returns (per-category counts, per-model majority category). Majority
    ties break by rule-table priority order.
    """
    counts: Counter = Counter({c: 0 for c in CATEGORIES})
    per_model: dict[str, Counter] = {}
    for commit in commits:
        label = commit.category or classify_commit(commit.message)
        commit.category = label
        counts[label] += 1
        per_model.setdefault(commit.model_id, Counter())[label] += 1

    priority = {c: i for i, c in enumerate(CATEGORIES)}
    majority = {}
    for model_id, model_counts in per_model.items():
        best = max(model_counts, key=lambda c: (model_counts[c], -priority[c]))
        majority[model_id] = best
    return counts, majority


@dataclass
class ClassifierPlugin:
    """External classifier endpoint: executable path or http(s) URL."""

    target: str
    batch_size: int = 64
    timeout_s: float = 30.0


def _validate_labels(lines: Sequence[str], expected: int) -> list[str]:
    if len(lines) != expected:
        raise PluginError("protocol", f"plugin returned {len(lines)} labels for {expected} messages")
    for label in lines:
        if label not in CATEGORIES:
            raise PluginError("protocol", f"unknown label {label!r}")
    return list(lines)


def classify_via_plugin(plugin: ClassifierPlugin, messages: Sequence[str]) -> list[str]:
    """Send messages to an external classifier in batches.

    Messages must be single-line; newlines are flattened to spaces before
    crossing the wire.
    """
    labels: list[str] = []
    for start in range(0, len(messages), plugin.batch_size):
        batch = [m.replace("\n", " ") for m in messages[start : start + plugin.batch_size]]
        payload = "\n".join(batch) + "\n"
        if plugin.target.startswith(("http://", "https://")):
            try:
                resp = requests.post(plugin.target, data=payload.encode(), timeout=plugin.timeout_s)
            except requests.Timeout:
                raise PluginError("timeout", f"plugin {plugin.target} timed out")
            except requests.RequestException as exc:
                raise PluginError("spawn", f"plugin {plugin.target} unreachable: {exc}")
            if resp.status_code != 200:
                raise PluginError("protocol", f"plugin returned HTTP {resp.status_code}")
            out = resp.text
        else:
            try:
                proc = subprocess.run(
                    [plugin.target],
                    input=payload,
                    capture_output=True,
                    text=True,
                    timeout=plugin.timeout_s,
                )
            except subprocess.TimeoutExpired:
                raise PluginError("timeout", f"plugin {plugin.target} timed out")
            except OSError as exc:
                raise PluginError("spawn", f"cannot run plugin {plugin.target}: {exc}")
            if proc.returncode != 0:
                raise PluginError("protocol", f"plugin exited {proc.returncode}: {proc.stderr.strip()}")
            out = proc.stdout
        labels.extend(_validate_labels(out.splitlines(), len(batch)))
    return labels
