"""Cross-product stratification, sample sizing, and seeded draws.

Strata are the cross product of the selected record attributes; the total
sample size follows Cochran's formula with finite-population correction;
allocation is proportional via largest-remainder (Hamilton) apportionment;
draws are uniform without replacement from per-stratum seeded substreams.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import UsageError
from .records import ModelRecord

VALID_SELECTORS = (
    "domain",
    "size_bin",
    "popularity_bin",
    "carbon_label",
    "maintenance_label",
    "library",
)


@dataclass
class Stratum:
    key: tuple[str, ...]
    member_ids: list[str]
    proportion: float


@dataclass(frozen=True)
class SampleSizeSpec:
    population_N: int
    confidence_z: float = 1.96
    expected_proportion_p: float = 0.5
    margin_e: float = 0.05

    def __post_init__(self):
        if self.population_N < 1:
            raise UsageError("population_N must be positive")
        if self.confidence_z <= 0:
            raise UsageError("confidence_z must be positive")
        if not 0 < self.expected_proportion_p < 1:
            raise UsageError("expected_proportion_p must be in (0, 1)")
        if not 0 < self.margin_e < 1:
            raise UsageError("margin_e must be in (0, 1)")


@dataclass
class SamplePlan:
    total_n: int
    allocation: dict[tuple[str, ...], int]
    seed: int


def _attribute(record: ModelRecord, selector: str) -> str:
    value = getattr(record, selector, None)
    return "Missing" if value is None else str(value)


def form_strata(records: Sequence[ModelRecord], criteria: Sequence[str]) -> list[Stratum]:
    """Partition records into disjoint cross-product cells.

    Missing attribute values form their own cells; empty cells are simply
    absent. Result is sorted by key for determinism.
    """
    if not records:
        raise UsageError("cannot stratify an empty population")
    if not criteria:
        raise UsageError("at least one stratification criterion required")
    if len(set(criteria)) != len(criteria):
        raise UsageError("stratification criteria must be distinct")
    for selector in criteria:
        if selector not in VALID_SELECTORS:
            raise UsageError(f"unknown stratification attribute {selector!r}")

    cells: dict[tuple[str, ...], list[str]] = {}
    for record in records:
        key = tuple(_attribute(record, s) for s in criteria)
        cells.setdefault(key, []).append(record.model_id)
    total = len(records)
    return [
        Stratum(key=key, member_ids=sorted(ids), proportion=len(ids) / total)
        for key, ids in sorted(cells.items())
    ]


def sample_size(spec: SampleSizeSpec) -> int:
    """Cochran's sample size with finite-population correction, rounded up."""
    z, p, e = spec.confidence_z, spec.expected_proportion_p, spec.margin_e
    n0 = (z * z) * p * (1 - p) / (e * e)
    n = n0 / (1 + (n0 - 1) / spec.population_N)
    return min(spec.population_N, math.ceil(n - 1e-9))


def allocate(strata: Sequence[Stratum], total_n: int) -> dict[tuple[str, ...], int]:
    """Largest-remainder proportional allocation, capped at stratum sizes.

    Remainder ties go to the lexicographically smallest stratum key. When a
    stratum cannot absorb its quota the deficit is redistributed among the
    uncapped strata by the same rule.
    """
    sizes = {s.key: len(s.member_ids) for s in strata}
    population = sum(sizes.values())
    if total_n > population:
        raise UsageError(f"total_n {total_n} exceeds population {population}")

    allocation: dict[tuple[str, ...], int] = {}
    active = sorted(sizes)
    remaining = total_n
    while True:
        active_population = sum(sizes[k] for k in active)
        quotas = {k: remaining * sizes[k] / active_population for k in active}
        base = {k: math.floor(quotas[k]) for k in active}
        seats_left = remaining - sum(base.values())
        by_remainder = sorted(active, key=lambda k: (-(quotas[k] - base[k]), k))
        tentative = dict(base)
        for k in by_remainder[:seats_left]:
            tentative[k] += 1

        overfull = [k for k in active if tentative[k] > sizes[k]]
        if not overfull:
            allocation.update(tentative)
            break
        for k in overfull:
            allocation[k] = sizes[k]
            remaining -= sizes[k]
            active.remove(k)
        if not active:
            break
    return allocation


def substream_seed(master_seed: int, key: tuple[str, ...]) -> int:
    """Independent per-stratum seed derived from the master seed and key."""
    digest = hashlib.sha256(f"{master_seed}:{'|'.join(key)}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def draw_sample(strata: Sequence[Stratum], plan: SamplePlan) -> list[tuple[str, tuple[str, ...]]]:
    """Uniform without-replacement draw per stratum, seeded and reproducible.

    Returns (model_id, stratum_key) pairs ordered by stratum key then draw
    order.
    """
    by_key = {s.key: s for s in strata}
    for key in plan.allocation:
        if key not in by_key:
            raise UsageError(f"allocation references unknown stratum {key}")
        if plan.allocation[key] > len(by_key[key].member_ids):
            raise UsageError(f"allocation for {key} exceeds stratum size")

    sample: list[tuple[str, tuple[str, ...]]] = []
    for key in sorted(plan.allocation):
        count = plan.allocation[key]
        if count == 0:
            continue
        rng = random.Random(substream_seed(plan.seed, key))
        for model_id in rng.sample(sorted(by_key[key].member_ids), count):
            sample.append((model_id, key))
    return sample


def plan_sample(
    strata: Sequence[Stratum],
    total_n: int,
    seed: Optional[int] = None,
) -> SamplePlan:
    """Convenience: allocate then wrap in a SamplePlan.

    When no seed is given one is drawn from OS entropy; callers should log
    it for reproducibility.
    """
    if seed is None:
        seed = random.SystemRandom().getrandbits(63)
    return SamplePlan(total_n=total_n, allocation=allocate(strata, total_n), seed=seed)
