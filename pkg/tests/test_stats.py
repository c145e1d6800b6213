import math
import random
import statistics
from datetime import datetime, timedelta, timezone
from fractions import Fraction
from itertools import combinations

import pytest

from hubcohort.errors import DegenerateInput, NotFound, UsageError
from hubcohort.stats import (
    CohortDefinition,
    average_ranks,
    mann_whitney,
    pooled_correlation,
    spearman,
    stratified_compare,
    track_cohort,
)
from hubcohort.store import SnapshotStore
from hubcohort.stratify import form_strata

from conftest import make_commit, make_enriched, make_model


# -- independent oracles -------------------------------------------------


def oracle_ranks(values):
    """Rank via pairwise counting: 1 + #smaller + (#equal - 1)/2."""
    return [
        1 + sum(1 for w in values if w < v) + (sum(1 for w in values if w == v) - 1) / 2
        for v in values
    ]


def oracle_spearman(x, y):
    return statistics.correlation(oracle_ranks(x), oracle_ranks(y))


def oracle_mwu_exact_p(a, b):
    """Two-sided exact p by full enumeration, in exact rational arithmetic."""

    def u2(aa, bb):
        return sum(2 if x > y else (1 if x == y else 0) for x in aa for y in bb)

    pooled = list(a) + list(b)
    n1 = len(a)
    mean2 = n1 * len(b)
    observed = abs(u2(a, b) - mean2)
    hits = total = 0
    for combo in combinations(range(len(pooled)), n1):
        chosen = set(combo)
        aa = [pooled[i] for i in combo]
        bb = [pooled[i] for i in range(len(pooled)) if i not in chosen]
        if abs(u2(aa, bb) - mean2) >= observed:
            hits += 1
        total += 1
    return Fraction(hits, total)


# -- spearman ------------------------------------------------------------


class TestSpearman:
    def test_identity(self):
        assert spearman([1, 2, 3, 4, 5], [1, 2, 3, 4, 5]).statistic == 1.0

    def test_perfect_reversal(self):
        assert spearman([1, 2, 3], [3, 2, 1]).statistic == -1.0

    def test_tied_input_average_ranks(self):
        # ranks (1, 2.5, 2.5, 4) vs (1, 2, 3, 4)
        result = spearman([1, 2, 2, 4], [10, 20, 30, 40])
        assert result.statistic == pytest.approx(0.9486832980505138, abs=1e-12)

    def test_matches_oracle_on_random_inputs(self):
        rng = random.Random(13)
        for _ in range(200):
            n = rng.randint(3, 40)
            x = [rng.randint(0, n) for _ in range(n)]
            y = [rng.randint(0, n) for _ in range(n)]
            if len(set(x)) == 1 or len(set(y)) == 1:
                continue
            assert spearman(x, y).statistic == pytest.approx(oracle_spearman(x, y), abs=1e-12)

    def test_rank_invariance_under_monotone_transform(self):
        rng = random.Random(3)
        x = [rng.uniform(0, 10) for _ in range(30)]
        y = [rng.uniform(0, 10) for _ in range(30)]
        base = spearman(x, y).statistic
        assert spearman([math.exp(v) for v in x], y).statistic == pytest.approx(base, abs=1e-12)
        assert spearman(x, [v**3 + 5 for v in y]).statistic == pytest.approx(base, abs=1e-12)

    def test_symmetry(self):
        x, y = [1, 5, 2, 8, 3], [2, 1, 9, 4, 4]
        assert spearman(x, y).statistic == pytest.approx(spearman(y, x).statistic, abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(UsageError):
            spearman([1, 2, 3], [1, 2])

    def test_constant_input(self):
        with pytest.raises(DegenerateInput):
            spearman([1, 1, 1], [1, 2, 3])

    def test_average_ranks_on_ties(self):
        assert average_ranks([10, 20, 20, 40]) == [1, 2.5, 2.5, 4]


# -- mann-whitney --------------------------------------------------------


class TestMannWhitney:
    def test_separated_samples(self):
        result = mann_whitney([1, 2], [3, 4])
        assert result.statistic == 0.0
        assert result.p_value == pytest.approx(1 / 3)
        assert "exact" in result.notes

    def test_identical_samples(self):
        result = mann_whitney([1, 2, 3], [1, 2, 3])
        assert result.statistic == 4.5
        assert result.p_value == 1.0

    def test_u_sides_sum_to_product(self):
        rng = random.Random(5)
        for _ in range(50):
            a = [rng.randint(0, 8) for _ in range(rng.randint(1, 10))]
            b = [rng.randint(0, 8) for _ in range(rng.randint(1, 10))]
            ua = mann_whitney(a, b).statistic
            ub = mann_whitney(b, a).statistic
            assert ua + ub == pytest.approx(len(a) * len(b))

    def test_exact_matches_enumeration_oracle(self):
        rng = random.Random(17)
        for _ in range(60):
            n1 = rng.randint(1, 7)
            n2 = rng.randint(1, 8 - min(n1, 7))
            a = [rng.randint(0, 6) for _ in range(n1)]
            b = [rng.randint(0, 6) for _ in range(n2)]
            result = mann_whitney(a, b)
            assert "exact" in result.notes
            assert result.p_value == float(oracle_mwu_exact_p(a, b))

    def test_approximation_close_to_exact_at_boundary(self):
        # 9+8 = 17 runs the normal approximation; the enumeration oracle is
        # still cheap enough to compare against here.
        rng = random.Random(23)
        a = [rng.randint(0, 50) for _ in range(9)]
        b = [rng.randint(0, 50) for _ in range(8)]
        result = mann_whitney(a, b)
        assert "approximation" in result.notes
        assert result.p_value == pytest.approx(float(oracle_mwu_exact_p(a, b)), abs=0.02)

    def test_empty_side_rejected(self):
        with pytest.raises(UsageError):
            mann_whitney([], [1])


# -- pooled correlation --------------------------------------------------


class TestPooledCorrelation:
    def test_equal_inputs_pool_to_themselves(self):
        assert pooled_correlation([(0.5, 30), (0.5, 30)]).statistic == 0.5
        assert pooled_correlation([(0.7, 10), (0.7, 200), (0.7, 4)]).statistic == 0.7

    def test_zeros(self):
        assert pooled_correlation([(0.0, 20), (0.0, 50)]).statistic == 0.0

    def test_weighted_fisher_z_oracle(self):
        # hand evaluation: z = (17*atanh(0.3) + 7*atanh(0.7)) / 24
        z = (17 * math.atanh(0.3) + 7 * math.atanh(0.7)) / 24
        result = pooled_correlation([(0.3, 20), (0.7, 10)])
        assert result.statistic == pytest.approx(math.tanh(z), abs=1e-12)
        assert result.statistic == pytest.approx(0.4399, abs=1e-4)

    def test_perfect_correlation_rejected(self):
        with pytest.raises(DegenerateInput):
            pooled_correlation([(1.0, 30)])

    def test_small_stratum_rejected(self):
        with pytest.raises(UsageError):
            pooled_correlation([(0.2, 3)])


# -- stratified compare --------------------------------------------------


def _two_group_records(stratum_values, prefix, outcomes_high, outcomes_low):
    records = []
    for i, v in enumerate(outcomes_high):
        records.append(
            make_enriched(f"{prefix}h{i}", size_bin=stratum_values, maintenance_label="High", downloads=v)
        )
    for i, v in enumerate(outcomes_low):
        records.append(
            make_enriched(f"{prefix}l{i}", size_bin=stratum_values, maintenance_label="Low", downloads=v)
        )
    return records


class TestStratifiedCompare:
    def test_single_stratum_reduces_to_plain_test(self):
        records = _two_group_records("Q1", "s", [5, 9, 12], [1, 2, 3])
        strata = form_strata(records, ["size_bin"])
        combined, table = stratified_compare(records, "downloads", "maintenance_label", strata)
        plain = mann_whitney([5, 9, 12], [1, 2, 3])
        assert len(table) == 1
        assert table[0]["U"] == plain.statistic
        assert table[0]["p"] == plain.p_value
        assert combined.p_value == pytest.approx(plain.p_value, abs=1e-12)

    def test_null_strata_combine_to_one(self):
        records = _two_group_records("Q1", "a", [1, 2, 3], [1, 2, 3])
        records += _two_group_records("Q2", "b", [4, 5, 6], [4, 5, 6])
        strata = form_strata(records, ["size_bin"])
        combined, _ = stratified_compare(records, "downloads", "maintenance_label", strata)
        assert combined.p_value == pytest.approx(1.0)

    def test_simpson_style_masking(self):
        # Within each stratum High is shifted +2 above Low, but High is rare
        # in the high-baseline stratum and common in the low-baseline one,
        # so the pooled comparison hides the within-stratum shift.
        rng = random.Random(11)
        low_a = [rng.uniform(100, 101) for _ in range(12)]
        high_a = [rng.uniform(100, 101) + 2 for _ in range(4)]
        low_b = [rng.uniform(0, 1) for _ in range(4)]
        high_b = [rng.uniform(0, 1) + 2 for _ in range(12)]
        records = []
        records += [
            make_enriched(f"a h{i}", size_bin="Q1", maintenance_label="High", downloads=v)
            for i, v in enumerate(high_a)
        ]
        records += [
            make_enriched(f"a l{i}", size_bin="Q1", maintenance_label="Low", downloads=v)
            for i, v in enumerate(low_a)
        ]
        records += [
            make_enriched(f"b h{i}", size_bin="Q2", maintenance_label="High", downloads=v)
            for i, v in enumerate(high_b)
        ]
        records += [
            make_enriched(f"b l{i}", size_bin="Q2", maintenance_label="Low", downloads=v)
            for i, v in enumerate(low_b)
        ]
        strata = form_strata(records, ["size_bin"])
        combined, table = stratified_compare(records, "downloads", "maintenance_label", strata)
        pooled = mann_whitney(high_a + high_b, low_a + low_b)
        assert all(entry["p"] < 0.01 for entry in table)
        assert combined.p_value < 0.01
        assert pooled.p_value > 0.2

    def test_one_sided_strata_skipped_and_reported(self):
        records = _two_group_records("Q1", "s", [5, 9, 12], [1, 2, 3])
        records.append(make_enriched("only-high", size_bin="Q2", maintenance_label="High", downloads=7))
        strata = form_strata(records, ["size_bin"])
        combined, table = stratified_compare(records, "downloads", "maintenance_label", strata)
        skipped = [e for e in table if "skipped" in e]
        assert len(skipped) == 1
        assert "1 skipped" in combined.notes

    def test_no_analyzable_stratum(self):
        records = [make_enriched("m0", maintenance_label="High", downloads=1)]
        strata = form_strata(records, ["size_bin"])
        with pytest.raises(DegenerateInput):
            stratified_compare(records, "downloads", "maintenance_label", strata)


# -- cohort tracking -----------------------------------------------------

T0 = datetime(2024, 1, 1, tzinfo=timezone.utc)


def _cohort_store(tmp_path):
    store = SnapshotStore(tmp_path / "store")
    cohort = [make_model(f"c{i}", domain="NLP", downloads=100) for i in range(10)]
    others = [make_model(f"o{i}", domain="Audio", downloads=50) for i in range(5)]
    commits = [make_commit(f"c{i}", f"{i:040x}", "fix crash") for i in range(10)]
    entry = store.write_snapshot(cohort + others, commits, T0)

    def advance(records, deleted, step):
        kept = [
            make_model(r.model_id, domain=r.domain, downloads=r.downloads + 10 * step)
            for r in records
            if r.model_id not in deleted
        ]
        return kept

    snap1 = store.write_snapshot(advance(cohort, set(), 1) + others, commits, T0 + timedelta(days=1))
    snap2 = store.write_snapshot(advance(cohort, {"c0", "c1"}, 2) + others, commits, T0 + timedelta(days=2))
    snap3 = store.write_snapshot(advance(cohort, {"c0", "c1"}, 3) + others, commits, T0 + timedelta(days=3))
    return store, entry, [snap1, snap2, snap3]


class TestTrackCohort:
    def test_member_counts_attrition_and_deltas(self, tmp_path):
        store, entry, snaps = _cohort_store(tmp_path)
        definition = CohortDefinition(name="nlp", predicate={"domain": "NLP"}, entry_snapshot=entry)
        series = track_cohort(store, definition, snaps)
        assert series.member_counts == [10, 8, 8]
        assert series.attrition == 2
        assert series.median_download_deltas == [10.0, 10.0]

    def test_flat_cohort(self, tmp_path):
        store = SnapshotStore(tmp_path / "store")
        records = [make_model(f"c{i}", domain="NLP") for i in range(10)]
        entry = store.write_snapshot(records, [], T0)
        snaps = [
            store.write_snapshot(records, [], T0 + timedelta(days=d)) for d in (1, 2, 3)
        ]
        definition = CohortDefinition(name="nlp", predicate={"domain": "NLP"}, entry_snapshot=entry)
        series = track_cohort(store, definition, snaps)
        assert series.member_counts == [10, 10, 10]
        assert series.attrition == 0
        assert series.median_download_deltas == [0.0, 0.0]

    def test_membership_is_closed(self, tmp_path):
        store, entry, snaps = _cohort_store(tmp_path)
        # a late joiner matching the predicate must never enter the cohort
        snap = store.read_snapshot(snaps[-1])
        records = list(snap.records.values()) + [make_model("late", domain="NLP")]
        extra = store.write_snapshot(records, [], T0 + timedelta(days=4))
        definition = CohortDefinition(name="nlp", predicate={"domain": "NLP"}, entry_snapshot=entry)
        series = track_cohort(store, definition, snaps + [extra])
        assert series.member_counts[-1] == 8

    def test_entry_must_precede_tracked(self, tmp_path):
        store, entry, snaps = _cohort_store(tmp_path)
        definition = CohortDefinition(name="nlp", predicate={"domain": "NLP"}, entry_snapshot=snaps[1])
        with pytest.raises(UsageError):
            track_cohort(store, definition, [snaps[0]])

    def test_unknown_snapshot(self, tmp_path):
        store, entry, snaps = _cohort_store(tmp_path)
        definition = CohortDefinition(name="nlp", predicate={"domain": "NLP"}, entry_snapshot=entry)
        with pytest.raises(NotFound):
            track_cohort(store, definition, ["2030-01-01T00:00:00Z"])

    def test_commit_mix_counted_for_members_only(self, tmp_path):
        store, entry, snaps = _cohort_store(tmp_path)
        definition = CohortDefinition(name="nlp", predicate={"domain": "NLP"}, entry_snapshot=entry)
        series = track_cohort(store, definition, snaps)
        assert series.commit_mixes[0]["Corrective"] == 10
        # two deleted members drop their commits from later mixes
        assert series.commit_mixes[1]["Corrective"] == 8
