"""Cohort statistics: rank correlation, rank-sum tests, pooling, tracking.

All statistics are pure functions returning a :class:`StatResult`. The
Mann-Whitney implementation is exact (full enumeration of rank
assignments) for small samples and switches to the tie-corrected normal
approximation with continuity correction above a combined size of 16.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Optional, Sequence

from .commit_classifier import CATEGORIES, classify_commit
from .errors import DegenerateInput, NotFound, UsageError
from .records import ModelRecord
from .store import SnapshotStore
from .stratify import Stratum

EXACT_MWU_LIMIT = 16


@dataclass
class StatResult:
    method: str
    statistic: float
    p_value: Optional[float]
    n: tuple[int, ...]
    notes: str = ""


@dataclass
class CohortDefinition:
    """Closed cohort: membership fixed at the entry snapshot."""

    name: str
    predicate: dict[str, Any]
    entry_snapshot: str

    def matches(self, record: ModelRecord) -> bool:
        return all(str(getattr(record, attr, None)) == str(value) for attr, value in self.predicate.items())


@dataclass
class CohortSeries:
    name: str
    snapshot_ids: list[str]
    member_counts: list[int]
    median_download_deltas: list[float]
    commit_mixes: list[dict[str, int]]
    metric_means: list[dict[str, float]]
    attrition: int


def average_ranks(values: Sequence[float]) -> list[float]:
    """Ranks 1..n with ties sharing their average rank."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def _pearson(x: Sequence[float], y: Sequence[float]) -> float:
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def spearman(x: Sequence[float], y: Sequence[float]) -> StatResult:
    """Spearman rank correlation with average ranks for ties."""
    if len(x) != len(y):
        raise UsageError("spearman inputs must have equal length")
    if len(x) < 3:
        raise UsageError("spearman needs at least 3 observations")
    if len(set(x)) == 1 or len(set(y)) == 1:
        raise DegenerateInput("spearman is undefined for a constant input")
    rx, ry = average_ranks(x), average_ranks(y)
    rho = max(-1.0, min(1.0, _pearson(rx, ry)))
    ties = (len(x) - len(set(x))) + (len(y) - len(set(y)))
    # t-approximation for the two-sided p-value; |rho| = 1 is a zero-variance
    # perfect monotone relation.
    n = len(x)
    if abs(rho) == 1.0:
        p = 0.0
    else:
        t = rho * math.sqrt((n - 2) / (1 - rho * rho))
        p = _student_t_sf(abs(t), n - 2) * 2
    return StatResult(
        method="Spearman",
        statistic=rho,
        p_value=min(1.0, p),
        n=(n,),
        notes=f"average-rank, ties={ties}",
    )


def _student_t_sf(t: float, df: int) -> float:
    """Survival function of Student's t via the incomplete beta function."""
    x = df / (df + t * t)
    return 0.5 * _reg_inc_beta(df / 2.0, 0.5, x)


def _reg_inc_beta(a: float, b: float, x: float) -> float:
    # Continued-fraction evaluation (Lentz), standard normalization.
    if x <= 0:
        return 0.0
    if x >= 1:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log(1 - x)
    )
    front = math.exp(ln_front)
    if x < (a + 1) / (a + b + 2):
        return front * _beta_cf(a, b, x) / a
    return 1 - (math.exp(ln_front) * _beta_cf(b, a, 1 - x) / b)


def _beta_cf(a: float, b: float, x: float) -> float:
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1, a - 1
    c = 1.0
    d = 1 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1 / d
        delta = d * c
        h *= delta
        if abs(delta - 1) < 1e-14:
            break
    return h


def _u_doubled(a: Sequence[float], b: Sequence[float]) -> int:
    """2*U for side a, exact in integers (ties contribute 1 per pair)."""
    total = 0
    for x in a:
        for y in b:
            if x > y:
                total += 2
            elif x == y:
                total += 1
    return total


def mann_whitney(a: Sequence[float], b: Sequence[float]) -> StatResult:
    """Two-sided Mann-Whitney U test.

    Exact p by full enumeration of rank assignments when the combined
    sample size is at most 16, otherwise a tie-corrected normal
    approximation with continuity correction.
    """
    if not a or not b:
        raise UsageError("mann_whitney needs at least one observation per side")
    n1, n2 = len(a), len(b)
    u2_obs = _u_doubled(a, b)
    mean2 = n1 * n2  # 2 * n1*n2/2
    u = u2_obs / 2.0

    if n1 + n2 <= EXACT_MWU_LIMIT:
        pooled = list(a) + list(b)
        dev_obs = abs(u2_obs - mean2)
        hits = 0
        total = 0
        indices = range(len(pooled))
        for combo in combinations(indices, n1):
            chosen = set(combo)
            group_a = [pooled[i] for i in combo]
            group_b = [pooled[i] for i in indices if i not in chosen]
            if abs(_u_doubled(group_a, group_b) - mean2) >= dev_obs:
                hits += 1
            total += 1
        p = hits / total
        notes = "exact enumeration"
    else:
        n = n1 + n2
        tie_groups = _tie_counts(list(a) + list(b))
        tie_term = sum(t**3 - t for t in tie_groups) / (n * (n - 1))
        sigma2 = n1 * n2 / 12.0 * ((n + 1) - tie_term)
        if sigma2 <= 0:
            p = 1.0
            notes = "normal approximation (degenerate variance)"
        else:
            dev = max(0.0, abs(u - n1 * n2 / 2.0) - 0.5)
            z = dev / math.sqrt(sigma2)
            p = math.erfc(z / math.sqrt(2.0))
            notes = f"normal approximation, tie groups={sum(1 for t in tie_groups if t > 1)}"
    return StatResult(
        method="MannWhitneyU",
        statistic=u,
        p_value=min(1.0, p),
        n=(n1, n2),
        notes=notes,
    )


def _tie_counts(values: Sequence[float]) -> list[int]:
    counts: dict[float, int] = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    return list(counts.values())


def pooled_correlation(per_stratum: Sequence[tuple[float, int]]) -> StatResult:
    """Pool per-stratum correlations via the weighted Fisher z-transform.

    Weights are n_i - 3, the inverse variance of the transformed
    correlation.
    """
    if not per_stratum:
        raise UsageError("pooled_correlation needs at least one stratum")
    for r, n in per_stratum:
        if n < 4:
            raise UsageError(f"stratum n={n} too small (need n >= 4)")
        if abs(r) >= 1:
            raise DegenerateInput(f"|r|={abs(r)} has an infinite Fisher transform")
    weights = [n - 3 for _, n in per_stratum]
    z = sum(w * math.atanh(r) for w, (r, _) in zip(weights, per_stratum)) / sum(weights)
    if len({r for r, _ in per_stratum}) == 1:
        # Identical inputs pool to themselves; skip the transform round trip
        # so the result is exact, not within float epsilon.
        pooled = per_stratum[0][0]
    else:
        pooled = math.tanh(z)
    # Under H0 (no correlation) z * sqrt(sum of weights) is standard normal.
    p = math.erfc(abs(z) * math.sqrt(sum(weights)) / math.sqrt(2.0))
    return StatResult(
        method="PooledCorrelation",
        statistic=pooled,
        p_value=min(1.0, p),
        n=tuple(n for _, n in per_stratum),
        notes=f"Fisher-z weights n-3, strata={len(per_stratum)}",
    )


def _fisher_combined_p(p_values: Sequence[float]) -> tuple[float, float]:
    """Fisher's method: returns (chi-square statistic, combined p).

    With 2k degrees of freedom the chi-square survival function has the
    closed Poisson-sum form used here.
    """
    k = len(p_values)
    x = -2.0 * sum(math.log(max(p, 1e-300)) for p in p_values)
    half = x / 2.0
    term = 1.0
    total = 1.0
    for j in range(1, k):
        term *= half / j
        total += term
    return x, min(1.0, math.exp(-half) * total)


def stratified_compare(
    records: Sequence[ModelRecord],
    outcome_attr: str,
    group_attr: str,
    strata: Sequence[Stratum],
) -> tuple[StatResult, list[dict[str, Any]]]:
    """Per-stratum Mann-Whitney tests combined with Fisher's method.

    Strata where the grouping attribute is not binary (one group absent,
    or more than two values) are skipped and reported in the table.
    """
    by_id = {r.model_id: r for r in records}
    table: list[dict[str, Any]] = []
    p_values: list[float] = []
    total_a = total_b = 0
    for stratum in sorted(strata, key=lambda s: s.key):
        members = [by_id[i] for i in stratum.member_ids if i in by_id]
        groups: dict[str, list[float]] = {}
        for record in members:
            group = getattr(record, group_attr, None)
            outcome = getattr(record, outcome_attr, None)
            if group is None or outcome is None:
                continue
            groups.setdefault(str(group), []).append(float(outcome))
        if len(groups) != 2:
            table.append({"stratum": stratum.key, "skipped": f"{len(groups)} group(s) present"})
            continue
        (g1, a), (g2, b) = sorted(groups.items())
        result = mann_whitney(a, b)
        total_a += len(a)
        total_b += len(b)
        p_values.append(result.p_value)
        table.append(
            {
                "stratum": stratum.key,
                "groups": (g1, g2),
                "U": result.statistic,
                "p": result.p_value,
                "n": (len(a), len(b)),
                "notes": result.notes,
            }
        )
    if not p_values:
        raise DegenerateInput("no stratum had both groups present")
    x, combined = _fisher_combined_p(p_values)
    result = StatResult(
        method="StratifiedCompare",
        statistic=x,
        p_value=combined,
        n=(total_a, total_b),
        notes=f"Fisher's method over {len(p_values)} strata, {len(table) - len(p_values)} skipped",
    )
    return result, table


def track_cohort(
    store: SnapshotStore,
    definition: CohortDefinition,
    snapshot_ids: Sequence[str],
) -> CohortSeries:
    """Follow a closed cohort across snapshots.

    Membership is fixed at the entry snapshot; later snapshots only shrink
    the surviving set. Download deltas are medians over members present in
    consecutive tracked snapshots.
    """
    if not snapshot_ids:
        raise UsageError("no snapshots to track")
    ordered = sorted(snapshot_ids)
    if definition.entry_snapshot > ordered[0]:
        raise UsageError("entry snapshot must precede all tracked snapshots")

    entry = store.read_snapshot(definition.entry_snapshot)
    members = {i for i, r in entry.records.items() if definition.matches(r)}

    member_counts: list[int] = []
    deltas: list[float] = []
    mixes: list[dict[str, int]] = []
    metric_means: list[dict[str, float]] = []
    previous: Optional[dict[str, ModelRecord]] = None
    survivors = members
    for snapshot_id in ordered:
        snap = store.read_snapshot(snapshot_id)
        present = {i: snap.records[i] for i in members if i in snap.records}
        survivors = set(present)

        mix = {c: 0 for c in CATEGORIES}
        for commit in snap.commit_log:
            if commit.model_id in present:
                mix[commit.category or classify_commit(commit.message)] += 1
        mixes.append(mix)

        sums: dict[str, list[float]] = {}
        for record in present.values():
            for name, value in record.metrics.items():
                sums.setdefault(name, []).append(value)
        metric_means.append({name: sum(v) / len(v) for name, v in sorted(sums.items())})

        member_counts.append(len(present))
        if previous is not None:
            common = [
                present[i].downloads - previous[i].downloads
                for i in present
                if i in previous
            ]
            deltas.append(float(statistics.median(common)) if common else 0.0)
        previous = present

    return CohortSeries(
        name=definition.name,
        snapshot_ids=list(ordered),
        member_counts=member_counts,
        median_download_deltas=deltas,
        commit_mixes=mixes,
        metric_means=metric_means,
        attrition=len(members) - len(survivors),
    )
