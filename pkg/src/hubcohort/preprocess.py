"""Turns parsed records into analysis-ready enriched records.

Population-level statistics (min-max ranges, quartile cuts, the commit
median) are computed in one pass over the whole input, then applied per
record. Everything here is deterministic for a given input ordering by
model id.
"""

from __future__ import annotations

import fnmatch
import statistics
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import UsageError
from .records import ModelRecord

QUARTILE_LABELS = ("Q1", "Q2", "Q3", "Q4")
CARBON_LABELS = ("A", "B", "C", "D", "E")


@dataclass
class DomainMap:
    """Ordered tag-pattern rules plus a deny-list of auxiliary tags."""

    rules: list[tuple[str, str]]
    deny: list[str]

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "DomainMap":
        rules: list[tuple[str, str]] = []
        deny: list[str] = []
        for raw in lines:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                pattern, domain = line.split("\t")
            except ValueError:
                raise UsageError(f"bad domain-map line (need pattern<TAB>domain): {line!r}")
            pattern = pattern.strip().casefold()
            domain = domain.strip()
            if domain == "deny":
                deny.append(pattern)
            else:
                rules.append((pattern, domain))
        return cls(rules=rules, deny=deny)

    @classmethod
    def from_file(cls, path: str | Path) -> "DomainMap":
        return cls.from_lines(Path(path).read_text(encoding="utf-8").splitlines())

    @classmethod
    def default(cls) -> "DomainMap":
        text = resources.files("hubcohort").joinpath("data/domain_map.txt").read_text("utf-8")
        return cls.from_lines(text.splitlines())


@dataclass
class EnrichedRecord(ModelRecord):
    popularity: float = 0.0
    size_bin: str = "Missing"
    popularity_bin: str = "Missing"
    carbon_label: Optional[str] = None
    maintenance_label: Optional[str] = None
    tag_vector: list[int] = field(default_factory=list)


@dataclass
class EnrichReport:
    vocabulary: list[str] = field(default_factory=list)
    out_of_vocabulary: int = 0
    warnings: list[str] = field(default_factory=list)


def filter_tags(tags: Sequence[str], domain_map: Optional[DomainMap] = None) -> list[str]:
    """Drop deny-listed tags, casefold, and collapse duplicates (order kept)."""
    dm = domain_map or DomainMap.default()
    out: list[str] = []
    seen: set[str] = set()
    for tag in tags:
        folded = tag.casefold()
        if folded in seen:
            continue
        if any(fnmatch.fnmatchcase(folded, pattern) for pattern in dm.deny):
            continue
        seen.add(folded)
        out.append(folded)
    return out


def map_domain(tags: Sequence[str], domain_map: Optional[DomainMap] = None) -> str:
    """First matching rule (in rule order) wins; Unknown when none match."""
    dm = domain_map or DomainMap.default()
    folded = [t.casefold() for t in tags]
    for pattern, domain in dm.rules:
        for tag in folded:
            if fnmatch.fnmatchcase(tag, pattern):
                return domain
    return "Unknown"


def one_hot(tags: Sequence[str], vocabulary: Sequence[str]) -> list[int]:
    """Binary presence vector over a fixed sorted vocabulary.

    Out-of-vocabulary tags are silently ignored here; enrich() counts them.
    """
    present = set(tags)
    return [1 if term in present else 0 for term in vocabulary]


def popularity(
    downloads: Sequence[int], likes: Sequence[int]
) -> list[float]:
    """Sum of separately min-max normalized downloads and likes, in [0, 2].

    A degenerate range (all values equal) contributes 0 for that term.
    """
    if not downloads or len(downloads) != len(likes):
        raise UsageError("popularity needs one downloads and likes value per record")

    def norm(values: Sequence[int]) -> list[float]:
        lo, hi = min(values), max(values)
        if hi == lo:
            return [0.0] * len(values)
        return [(v - lo) / (hi - lo) for v in values]

    return [d + l for d, l in zip(norm(downloads), norm(likes))]


def _quantile(sorted_values: Sequence[float], q: float) -> float:
    # Linear interpolation on order statistics: h = (n - 1) * q.
    n = len(sorted_values)
    h = (n - 1) * q
    lo = int(h)
    if lo + 1 >= n:
        return float(sorted_values[-1])
    return sorted_values[lo] + (h - lo) * (sorted_values[lo + 1] - sorted_values[lo])


def quartile_bins(values: Sequence[Optional[float]]) -> list[str]:
    """Assign Q1..Q4 by quartile cut points; missing values get "Missing"."""
    present = sorted(v for v in values if v is not None)
    if len(present) < 4:
        raise UsageError("quartile binning needs at least 4 non-missing values")
    cuts = [_quantile(present, q) for q in (0.25, 0.5, 0.75)]
    labels = []
    for v in values:
        if v is None:
            labels.append("Missing")
            continue
        for cut, label in zip(cuts, QUARTILE_LABELS):
            if v <= cut:
                labels.append(label)
                break
        else:
            labels.append("Q4")
    return labels


def carbon_label(records: Sequence[ModelRecord]) -> list[Optional[str]]:
    """Quintile rank of reported emissions, A (lowest) to E (highest).

    Records that report no emissions get no label.
    """
    reporters = [
        (r.co2e_grams, r.model_id, i)
        for i, r in enumerate(records)
        if r.co2e_grams is not None
    ]
    labels: list[Optional[str]] = [None] * len(records)
    n = len(reporters)
    for rank, (_, _, idx) in enumerate(sorted(reporters)):
        labels[idx] = CARBON_LABELS[min(4, rank * 5 // n)]
    return labels


def maintenance_label(records: Sequence[ModelRecord]) -> list[str]:
    """High iff commit_count strictly above the population median."""
    if not records:
        return []
    median = statistics.median(r.commit_count for r in records)
    return ["High" if r.commit_count > median else "Low" for r in records]


def build_vocabulary(records: Sequence[ModelRecord], domain_map: Optional[DomainMap] = None) -> list[str]:
    dm = domain_map or DomainMap.default()
    vocab: set[str] = set()
    for record in records:
        vocab.update(filter_tags(record.tags, dm))
    return sorted(vocab)


def enrich(
    records: Sequence[ModelRecord],
    domain_map: Optional[DomainMap] = None,
    vocabulary: Optional[Sequence[str]] = None,
    per_domain_popularity: bool = False,
) -> tuple[list[EnrichedRecord], EnrichReport]:
    """Run the full preprocessing pass over one snapshot's records.

    Output is sorted by model id so identical inputs give byte-identical
    serialized output.
    """
    if not records:
        raise UsageError("cannot enrich an empty population")
    dm = domain_map or DomainMap.default()
    records = sorted(records, key=lambda r: r.model_id)
    report = EnrichReport()

    filtered = [filter_tags(r.tags, dm) for r in records]
    domains = [map_domain(tags, dm) for tags in filtered]
    if vocabulary is None:
        vocabulary = sorted({t for tags in filtered for t in tags})
    report.vocabulary = list(vocabulary)
    vocab_set = set(vocabulary)
    report.out_of_vocabulary = sum(
        1 for tags in filtered for t in tags if t not in vocab_set
    )

    if per_domain_popularity:
        pop = [0.0] * len(records)
        for dom in set(domains):
            idxs = [i for i, d in enumerate(domains) if d == dom]
            values = popularity(
                [records[i].downloads for i in idxs], [records[i].likes for i in idxs]
            )
            for i, v in zip(idxs, values):
                pop[i] = v
    else:
        pop = popularity([r.downloads for r in records], [r.likes for r in records])

    def safe_bins(values: list[Optional[float]], name: str) -> list[str]:
        try:
            return quartile_bins(values)
        except UsageError:
            report.warnings.append(f"too few non-missing {name} values to bin; all Missing")
            return ["Missing"] * len(values)

    size_bins = safe_bins([float(r.size_bytes) if r.size_bytes is not None else None for r in records], "size")
    pop_bins = safe_bins([p for p in pop], "popularity")
    carbon = carbon_label(records)
    maintenance = maintenance_label(records)

    enriched = []
    for i, record in enumerate(records):
        enriched.append(
            EnrichedRecord(
                **{k: v for k, v in record.to_dict().items() if k not in ("created_at", "tags", "domain")},
                created_at=record.created_at,
                tags=filtered[i],
                domain=domains[i],
                popularity=pop[i],
                size_bin=size_bins[i],
                popularity_bin=pop_bins[i],
                carbon_label=carbon[i],
                maintenance_label=maintenance[i],
                tag_vector=one_hot(filtered[i], vocabulary),
            )
        )
    return enriched, report
