"""Append-only snapshot store for longitudinal analysis.

Layout on disk::

    store/<snapshot_id>/models.jsonl
    store/<snapshot_id>/commits.jsonl
    store/index.txt

Snapshot ids are ISO-8601 UTC timestamps and must strictly increase in
index order. Snapshot contents never change after the write; deltas
between snapshots are computed on read.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Optional

from filelock import FileLock

from .errors import CommitImportError, NotFound, StoreError, UsageError
from .records import CommitRecord, ModelRecord

_NUMERIC_DELTA_FIELDS = ("downloads", "likes", "commit_count")


@dataclass
class Snapshot:
    snapshot_id: str
    records: dict[str, ModelRecord]
    commit_log: list[CommitRecord]


@dataclass
class SnapshotDelta:
    added: set[str] = field(default_factory=set)
    removed: set[str] = field(default_factory=set)
    changed: dict[str, dict[str, Any]] = field(default_factory=dict)


def snapshot_id_for(at: datetime) -> str:
    return at.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def import_commit_files(path: str | Path, commits: Iterable[CommitRecord]) -> tuple[int, list[int]]:
    """Attach files-edited lists from a headerless CSV export.

    Rows are ``sha,model_id,file_path``. Returns (number of commit records
    enriched, row numbers that matched no known commit). Must run before
    the commits are written into a snapshot; snapshots are immutable.
    """
    by_key = {(c.sha, c.model_id): c for c in commits}
    touched: set[tuple[str, str]] = set()
    unmatched: list[int] = []
    with open(path, newline="", encoding="utf-8") as fp:
        for row_no, row in enumerate(csv.reader(fp), start=1):
            if not row:
                continue
            if len(row) != 3:
                raise CommitImportError(row_no, f"expected 3 columns, got {len(row)}")
            sha, model_id, file_path = row
            commit = by_key.get((sha, model_id))
            if commit is None:
                unmatched.append(row_no)
                continue
            if commit.files_edited is None:
                commit.files_edited = []
            commit.files_edited.append(file_path)
            touched.add((sha, model_id))
    return len(touched), unmatched


class SnapshotStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._index = self.root / "index.txt"
        self._lock = FileLock(str(self.root / ".lock"))

    def list_snapshots(self) -> list[str]:
        if not self._index.exists():
            return []
        return [line for line in self._index.read_text(encoding="utf-8").splitlines() if line]

    def write_snapshot(
        self,
        records: Iterable[ModelRecord],
        commits: Iterable[CommitRecord],
        at: datetime,
    ) -> str:
        snapshot_id = snapshot_id_for(at)
        records = list(records)
        ids = [r.model_id for r in records]
        if len(ids) != len(set(ids)):
            raise UsageError("duplicate model ids in snapshot input")

        with self._lock:
            existing = self.list_snapshots()
            if snapshot_id in existing:
                raise StoreError("conflict", f"snapshot {snapshot_id} already exists")
            if existing and snapshot_id <= existing[-1]:
                raise UsageError(
                    f"snapshot id {snapshot_id} not after latest {existing[-1]}"
                )
            directory = self.root / snapshot_id
            try:
                directory.mkdir()
                with (directory / "models.jsonl").open("w", encoding="utf-8") as fp:
                    for record in sorted(records, key=lambda r: r.model_id):
                        fp.write(record.to_json() + "\n")
                with (directory / "commits.jsonl").open("w", encoding="utf-8") as fp:
                    for commit in sorted(commits, key=lambda c: (c.model_id, c.sha)):
                        fp.write(commit.to_json() + "\n")
                with self._index.open("a", encoding="utf-8") as fp:
                    fp.write(snapshot_id + "\n")
            except OSError as exc:
                raise StoreError("io", str(exc))
        return snapshot_id

    def read_snapshot(self, snapshot_id: str) -> Snapshot:
        directory = self.root / snapshot_id
        if snapshot_id not in self.list_snapshots() or not directory.is_dir():
            raise NotFound(f"snapshot {snapshot_id}")
        records: dict[str, ModelRecord] = {}
        for line_no, line in enumerate(self._lines(directory / "models.jsonl"), start=1):
            try:
                record = ModelRecord.from_json(line)
            except (ValueError, TypeError) as exc:
                raise StoreError("decode", f"models.jsonl line {line_no}: {exc}")
            records[record.model_id] = record
        commit_log = []
        for line_no, line in enumerate(self._lines(directory / "commits.jsonl"), start=1):
            try:
                commit_log.append(CommitRecord.from_json(line))
            except (ValueError, TypeError) as exc:
                raise StoreError("decode", f"commits.jsonl line {line_no}: {exc}")
        return Snapshot(snapshot_id=snapshot_id, records=records, commit_log=commit_log)

    @staticmethod
    def _lines(path: Path) -> Iterable[str]:
        if not path.exists():
            return []
        return [l for l in path.read_text(encoding="utf-8").splitlines() if l.strip()]

    def diff_snapshots(self, a: str, b: str) -> SnapshotDelta:
        """Field-level diff from snapshot ``a`` to later snapshot ``b``.

        Numeric engagement fields report ``b - a`` deltas; every other
        changed field reports before/after values.
        """
        if a >= b:
            raise UsageError(f"snapshot {a!r} is not earlier than {b!r}")
        snap_a = self.read_snapshot(a)
        snap_b = self.read_snapshot(b)
        delta = SnapshotDelta()
        ids_a, ids_b = set(snap_a.records), set(snap_b.records)
        delta.added = ids_b - ids_a
        delta.removed = ids_a - ids_b
        for model_id in ids_a & ids_b:
            before = snap_a.records[model_id].to_dict()
            after = snap_b.records[model_id].to_dict()
            diffs: dict[str, Any] = {}
            for key in before:
                if before[key] == after.get(key):
                    continue
                if key in _NUMERIC_DELTA_FIELDS:
                    diffs[key] = {"delta": after[key] - before[key]}
                else:
                    diffs[key] = {"before": before[key], "after": after[key]}
            if diffs:
                delta.changed[model_id] = diffs
        return delta


def store_raw_sink(bucket: dict[str, dict[str, Any]]):
    """Sink for crawl_all that collects raw documents idempotently by id."""

    def sink(doc: dict[str, Any]) -> None:
        bucket[doc["id"]] = json.loads(json.dumps(doc, sort_keys=True))

    return sink
