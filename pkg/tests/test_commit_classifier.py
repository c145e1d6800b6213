import os
import stat
import sys
import textwrap

import pytest

from hubcohort.commit_classifier import (
    CATEGORIES,
    RULE_TABLE,
    ClassifierPlugin,
    classify_commit,
    classify_corpus,
    classify_via_plugin,
)
from hubcohort.errors import PluginError

from conftest import make_commit

# Hand-labeled corpus: 10 messages per category.
LABELED_MESSAGES = [
    ("fix tokenizer crash", "Corrective"),
    ("bugfix in data collator", "Corrective"),
    ("repair broken link in config", "Corrective"),
    ("patch security issue", "Corrective"),
    ("handle failing tests", "Corrective"),
    ("resolve error in preprocessing", "Corrective"),
    ("fix typo in vocab file", "Corrective"),
    ("crash on empty batch resolved", "Corrective"),
    ("defect in attention mask corrected", "Corrective"),
    ("fixes generation loop", "Corrective"),
    ("upgrade transformers to 4.2", "Adaptive"),
    ("update dependency pins", "Adaptive"),
    ("migrate to safetensors format", "Adaptive"),
    ("bump tokenizers version", "Adaptive"),
    ("ensure compatibility with python 3.11", "Adaptive"),
    ("remove deprecated api usage", "Adaptive"),
    ("port model to jax", "Adaptive"),
    ("upgrade cuda runtime", "Adaptive"),
    ("bump minimum torch version", "Adaptive"),
    ("migrate config schema", "Adaptive"),
    ("improve readme wording", "Perfective"),
    ("refactor training loop", "Perfective"),
    ("clean up imports", "Perfective"),
    ("optimize inference speed", "Perfective"),
    ("performance tuning for batching", "Perfective"),
    ("enhance logging output", "Perfective"),
    ("document hyperparameters", "Perfective"),
    ("readme formatting", "Perfective"),
    ("add usage example", "Perfective"),
    ("added citation section", "Perfective"),
    ("initial commit", "Unclassified"),
    ("first version", "Unclassified"),
    ("weights release", "Unclassified"),
    ("retrain with more data", "Unclassified"),
    ("new checkpoint", "Unclassified"),
    ("merge branch main", "Unclassified"),
    ("v2 release", "Unclassified"),
    ("upload model", "Unclassified"),
    ("license year changed", "Unclassified"),
    ("train on squad", "Unclassified"),
]


class TestClassifyCommit:
    @pytest.mark.parametrize("message,expected", LABELED_MESSAGES)
    def test_hand_labeled_corpus(self, message, expected):
        assert classify_commit(message) == expected

    def test_case_insensitive(self):
        assert classify_commit("FIX Tokenizer CRASH") == "Corrective"

    def test_priority_across_all_keyword_pairs(self):
        # A message containing keywords from two categories must get the
        # higher-priority label, for every cross-category pair.
        for hi_idx, (hi_cat, hi_keywords) in enumerate(RULE_TABLE):
            for lo_cat, lo_keywords in RULE_TABLE[hi_idx + 1 :]:
                for hi_kw in hi_keywords:
                    for lo_kw in lo_keywords:
                        message = f"{lo_kw} and {hi_kw}"
                        assert classify_commit(message) == hi_cat, (message, hi_cat, lo_cat)

    def test_determinism(self):
        for message, _ in LABELED_MESSAGES:
            assert classify_commit(message) == classify_commit(message)


class TestClassifyCorpus:
    def test_empty_corpus(self):
        counts, majority = classify_corpus([])
        assert sum(counts.values()) == 0
        assert majority == {}

    def test_counts_match_hand_labels(self):
        commits = [make_commit("m0", f"{i:040x}", msg) for i, (msg, _) in enumerate(LABELED_MESSAGES)]
        counts, _ = classify_corpus(commits)
        assert sum(counts.values()) == 40
        for category in CATEGORIES:
            expected = sum(1 for _, label in LABELED_MESSAGES if label == category)
            assert counts[category] == expected

    def test_majority_tie_breaks_by_priority(self):
        commits = [
            make_commit("m0", "a" * 40, "fix crash"),
            make_commit("m0", "b" * 40, "upgrade deps"),
        ]
        _, majority = classify_corpus(commits)
        assert majority["m0"] == "Corrective"

    def test_counts_permutation_invariant(self):
        commits = [make_commit("m0", f"{i:040x}", msg) for i, (msg, _) in enumerate(LABELED_MESSAGES)]
        forward, _ = classify_corpus(list(commits))
        backward, _ = classify_corpus(list(reversed(commits)))
        assert forward == backward


def _make_plugin_script(tmp_path, body: str) -> str:
    path = tmp_path / "plugin.py"
    path.write_text(f"#!{sys.executable}\n" + textwrap.dedent(body))
    path.chmod(path.stat().st_mode | stat.S_IEXEC)
    return str(path)


class TestClassifyViaPlugin:
    def test_echo_plugin(self, tmp_path):
        script = _make_plugin_script(
            tmp_path,
            """
            import sys
            for line in sys.stdin:
                print("Corrective")
            """,
        )
        labels = classify_via_plugin(ClassifierPlugin(script), ["a", "b", "c"])
        assert labels == ["Corrective"] * 3

    def test_invalid_label_is_protocol_error(self, tmp_path):
        script = _make_plugin_script(
            tmp_path,
            """
            import sys
            for line in sys.stdin:
                print("Banana")
            """,
        )
        with pytest.raises(PluginError) as exc:
            classify_via_plugin(ClassifierPlugin(script), ["a"])
        assert exc.value.kind == "protocol"

    def test_miscounted_output_is_protocol_error(self, tmp_path):
        script = _make_plugin_script(
            tmp_path,
            """
            print("Corrective")
            """,
        )
        with pytest.raises(PluginError) as exc:
            classify_via_plugin(ClassifierPlugin(script), ["a", "b"])
        assert exc.value.kind == "protocol"

    def test_slow_plugin_times_out(self, tmp_path):
        script = _make_plugin_script(
            tmp_path,
            """
            import time
            time.sleep(5)
            """,
        )
        with pytest.raises(PluginError) as exc:
            classify_via_plugin(ClassifierPlugin(script, timeout_s=0.3), ["a"])
        assert exc.value.kind == "timeout"

    def test_batching_splits_input(self, tmp_path):
        script = _make_plugin_script(
            tmp_path,
            """
            import sys
            lines = sys.stdin.read().splitlines()
            assert len(lines) <= 2, lines
            for line in lines:
                print("Perfective")
            """,
        )
        labels = classify_via_plugin(ClassifierPlugin(script, batch_size=2), ["a", "b", "c", "d", "e"])
        assert labels == ["Perfective"] * 5
