"""Declarative pipeline configuration (TOML).

One config file drives every subcommand. String values may interpolate
environment variables with ``${NAME}`` (used for the hub token); unknown
keys are rejected so typos fail loudly instead of silently using defaults.
"""

from __future__ import annotations

import hashlib
import os
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .commit_classifier import ClassifierPlugin
from .errors import UsageError
from .hub_client import CrawlConfig
from .records import parse_timestamp

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")

_TOP_KEYS = {
    "store_path",
    "seed",
    "report_path",
    "domain_map_path",
    "total_n",
    "per_domain_popularity",
    "crawl",
    "classifier",
    "stratification",
    "sizing",
    "analysis",
}
_CRAWL_KEYS = {
    "base_url",
    "auth_token",
    "max_requests_per_second",
    "max_concurrent_requests",
    "max_retries",
    "backoff_base_ms",
    "page_size",
    "since",
}
_CLASSIFIER_KEYS = {"mode", "target", "batch_size", "timeout_s"}
_SIZING_KEYS = {"confidence_z", "expected_proportion_p", "margin_e"}
_ANALYSIS_KEYS = {"spearman", "compare"}


def _interpolate(value: Any) -> Any:
    if isinstance(value, str):

        def repl(match: re.Match) -> str:
            return os.environ.get(match.group(1), "")

        return _ENV_RE.sub(repl, value)
    return value


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise UsageError(f"unknown config key(s) in {where}: {', '.join(sorted(unknown))}")


@dataclass
class PipelineConfig:
    store_path: Path
    report_path: Path
    crawl: Optional[CrawlConfig] = None
    classifier_mode: str = "rule"
    classifier_plugin: Optional[ClassifierPlugin] = None
    criteria: list[str] = field(default_factory=lambda: ["domain", "size_bin", "popularity_bin"])
    sizing_overrides: dict[str, float] = field(default_factory=dict)
    total_n: Optional[int] = None
    seed: Optional[int] = None
    domain_map_path: Optional[Path] = None
    per_domain_popularity: bool = False
    spearman_pairs: list[tuple[str, str]] = field(default_factory=list)
    compare_specs: list[dict[str, str]] = field(default_factory=list)
    config_hash: str = ""

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        try:
            raw_bytes = path.read_bytes()
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}")
        try:
            data = tomllib.loads(raw_bytes.decode("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"invalid TOML in {path}: {exc}")
        _check_keys(data, _TOP_KEYS, "top level")

        crawl = None
        if "crawl" in data:
            section = data["crawl"]
            _check_keys(section, _CRAWL_KEYS, "[crawl]")
            kwargs = {k: _interpolate(v) for k, v in section.items()}
            if not kwargs.get("auth_token"):
                kwargs.pop("auth_token", None)
            if "since" in kwargs:
                kwargs["since"] = parse_timestamp(kwargs["since"])
            if "base_url" not in kwargs:
                raise UsageError("[crawl] requires base_url")
            crawl = CrawlConfig(**kwargs)

        classifier_mode = "rule"
        plugin = None
        if "classifier" in data:
            section = data["classifier"]
            _check_keys(section, _CLASSIFIER_KEYS, "[classifier]")
            classifier_mode = section.get("mode", "rule")
            if classifier_mode not in ("rule", "plugin"):
                raise UsageError(f"unknown classifier mode {classifier_mode!r}")
            if classifier_mode == "plugin":
                if "target" not in section:
                    raise UsageError("[classifier] plugin mode requires target")
                plugin = ClassifierPlugin(
                    target=_interpolate(section["target"]),
                    batch_size=int(section.get("batch_size", 64)),
                    timeout_s=float(section.get("timeout_s", 30.0)),
                )

        criteria = ["domain", "size_bin", "popularity_bin"]
        if "stratification" in data:
            _check_keys(data["stratification"], {"criteria"}, "[stratification]")
            criteria = list(data["stratification"].get("criteria", criteria))

        sizing: dict[str, float] = {}
        if "sizing" in data:
            _check_keys(data["sizing"], _SIZING_KEYS, "[sizing]")
            sizing = {k: float(v) for k, v in data["sizing"].items()}

        spearman_pairs: list[tuple[str, str]] = []
        compare_specs: list[dict[str, str]] = []
        if "analysis" in data:
            _check_keys(data["analysis"], _ANALYSIS_KEYS, "[analysis]")
            for pair in data["analysis"].get("spearman", []):
                if len(pair) != 2:
                    raise UsageError(f"spearman analysis needs [x, y] pairs, got {pair!r}")
                spearman_pairs.append((pair[0], pair[1]))
            for spec in data["analysis"].get("compare", []):
                _check_keys(spec, {"outcome", "group"}, "[analysis] compare entry")
                if "outcome" not in spec or "group" not in spec:
                    raise UsageError("compare analysis needs outcome and group")
                compare_specs.append(dict(spec))

        domain_map_path = data.get("domain_map_path")
        if domain_map_path:
            domain_map_path = Path(_interpolate(domain_map_path))
            if not domain_map_path.exists():
                raise UsageError(f"domain_map_path does not exist: {domain_map_path}")

        return cls(
            store_path=Path(_interpolate(data.get("store_path", "store"))),
            report_path=Path(_interpolate(data.get("report_path", "report.txt"))),
            crawl=crawl,
            classifier_mode=classifier_mode,
            classifier_plugin=plugin,
            criteria=criteria,
            sizing_overrides=sizing,
            total_n=data.get("total_n"),
            seed=data.get("seed"),
            domain_map_path=domain_map_path or None,
            per_domain_popularity=bool(data.get("per_domain_popularity", False)),
            spearman_pairs=spearman_pairs,
            compare_specs=compare_specs,
            config_hash=hashlib.sha256(raw_bytes).hexdigest()[:16],
        )
