"""Command-line pipeline: crawl -> store -> preprocess -> classify ->
stratify -> sample -> analyze -> report.

Each stage reads the snapshot store and writes derived artifacts under
``store/derived/<snapshot_id>/``; ``pipeline`` runs every stage in order.
Every invocation appends a provenance line to ``store/run_log.txt`` so a
run can be reproduced from (config, seed, snapshot ids) alone.
"""

from __future__ import annotations

import argparse
import csv
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from . import commit_classifier, preprocess, stats, stratify
from .config import PipelineConfig
from .errors import HubCohortError, UsageError
from .hub_client import HubClient
from .preprocess import DomainMap, EnrichedRecord
from .records import parse_commits, parse_model_record, parse_timestamp
from .store import SnapshotStore, store_raw_sink

STAGES = ("crawl", "preprocess", "classify", "stratify", "sample", "analyze", "report")


def _derived_dir(cfg: PipelineConfig, snapshot_id: str) -> Path:
    path = cfg.store_path / "derived" / snapshot_id
    path.mkdir(parents=True, exist_ok=True)
    return path


def _pick_snapshot(store: SnapshotStore, requested: Optional[str]) -> str:
    snapshots = store.list_snapshots()
    if not snapshots:
        raise UsageError("store has no snapshots; run crawl first")
    if requested is None:
        return snapshots[-1]
    if requested not in snapshots:
        raise UsageError(f"unknown snapshot {requested}")
    return requested


def _log_run(cfg: PipelineConfig, stage: str, snapshot_ids: Sequence[str]) -> None:
    cfg.store_path.mkdir(parents=True, exist_ok=True)
    line = "\t".join(
        [
            datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
            stage,
            f"config={cfg.config_hash}",
            f"seed={cfg.seed}",
            "snapshots=" + ",".join(snapshot_ids),
        ]
    )
    with (cfg.store_path / "run_log.txt").open("a", encoding="utf-8") as fp:
        fp.write(line + "\n")


def _domain_map(cfg: PipelineConfig) -> DomainMap:
    if cfg.domain_map_path:
        return DomainMap.from_file(cfg.domain_map_path)
    return DomainMap.default()


def _load_enriched(cfg: PipelineConfig, snapshot_id: str) -> list[EnrichedRecord]:
    path = _derived_dir(cfg, snapshot_id) / "enriched.jsonl"
    if not path.exists():
        raise UsageError(f"no enriched records for {snapshot_id}; run preprocess first")
    return [
        EnrichedRecord.from_json(line)
        for line in path.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]


def _key_str(key: tuple[str, ...]) -> str:
    return "|".join(key)


# -- stages --------------------------------------------------------------


def stage_crawl(cfg: PipelineConfig, at: Optional[str] = None) -> str:
    if cfg.crawl is None:
        raise UsageError("config has no [crawl] section")
    bucket: dict = {}
    with HubClient(cfg.crawl) as client:
        report = client.crawl_all(store_raw_sink(bucket))
    if report.failures:
        failed = ", ".join(f"{mid} ({err})" for mid, err in report.failures[:5])
        print(f"crawl: {len(report.failures)} model(s) failed: {failed}", file=sys.stderr)
    records, commits = [], []
    for doc in bucket.values():
        record = parse_model_record(doc)
        records.append(record)
        commits.extend(parse_commits(record.model_id, doc))
    store = SnapshotStore(cfg.store_path)
    timestamp = parse_timestamp(at) if at else datetime.now(timezone.utc)
    snapshot_id = store.write_snapshot(records, commits, timestamp)
    print(
        f"crawl: {report.models_fetched} models, {report.requests_made} requests,"
        f" {report.retries} retries -> snapshot {snapshot_id}"
    )
    return snapshot_id


def stage_preprocess(cfg: PipelineConfig, snapshot_id: str) -> Path:
    store = SnapshotStore(cfg.store_path)
    snap = store.read_snapshot(snapshot_id)
    enriched, enrich_report = preprocess.enrich(
        list(snap.records.values()),
        domain_map=_domain_map(cfg),
        per_domain_popularity=cfg.per_domain_popularity,
    )
    out = _derived_dir(cfg, snapshot_id) / "enriched.jsonl"
    with out.open("w", encoding="utf-8") as fp:
        for record in enriched:
            fp.write(record.to_json() + "\n")
    for warning in enrich_report.warnings:
        print(f"preprocess: {warning}", file=sys.stderr)
    print(f"preprocess: {len(enriched)} records -> {out}")
    return out


def stage_classify(cfg: PipelineConfig, snapshot_id: str) -> Path:
    store = SnapshotStore(cfg.store_path)
    snap = store.read_snapshot(snapshot_id)
    commits = snap.commit_log
    if cfg.classifier_mode == "plugin":
        labels = commit_classifier.classify_via_plugin(
            cfg.classifier_plugin, [c.message for c in commits]
        )
        for commit, label in zip(commits, labels):
            commit.category = label
    counts, majority = commit_classifier.classify_corpus(commits)
    out = _derived_dir(cfg, snapshot_id) / "commit_labels.csv"
    with out.open("w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(["model_id", "sha", "category"])
        for commit in commits:
            writer.writerow([commit.model_id, commit.sha, commit.category])
    summary = ", ".join(f"{c}={counts[c]}" for c in commit_classifier.CATEGORIES)
    print(f"classify: {summary}; {len(majority)} models labeled")
    return out


def stage_stratify(cfg: PipelineConfig, snapshot_id: str, criteria: Optional[list[str]] = None) -> Path:
    enriched = _load_enriched(cfg, snapshot_id)
    strata = stratify.form_strata(enriched, criteria or cfg.criteria)
    out = _derived_dir(cfg, snapshot_id) / "strata.csv"
    with out.open("w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(["stratum_key", "size", "proportion"])
        for stratum in strata:
            writer.writerow(
                [_key_str(stratum.key), len(stratum.member_ids), f"{stratum.proportion:.6f}"]
            )
    print(f"stratify: {len(strata)} strata over {len(enriched)} records -> {out}")
    return out


def _resolve_total_n(cfg: PipelineConfig, population: int) -> int:
    if cfg.total_n is not None:
        return cfg.total_n
    spec = stratify.SampleSizeSpec(population_N=population, **cfg.sizing_overrides)
    return stratify.sample_size(spec)


def stage_sample(
    cfg: PipelineConfig,
    snapshot_id: str,
    seed: Optional[int] = None,
    total_n: Optional[int] = None,
    criteria: Optional[list[str]] = None,
) -> Path:
    enriched = _load_enriched(cfg, snapshot_id)
    strata = stratify.form_strata(enriched, criteria or cfg.criteria)
    n = total_n if total_n is not None else _resolve_total_n(cfg, len(enriched))
    effective_seed = seed if seed is not None else cfg.seed
    plan = stratify.plan_sample(strata, n, effective_seed)
    if effective_seed is None:
        print(f"sample: no seed configured, using OS entropy seed {plan.seed}", file=sys.stderr)
    sample = stratify.draw_sample(strata, plan)
    out = _derived_dir(cfg, snapshot_id) / "sample.csv"
    with out.open("w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(["model_id", "stratum_key"])
        for model_id, key in sample:
            writer.writerow([model_id, _key_str(key)])
    print(f"sample: {len(sample)} of {len(enriched)} drawn (seed={plan.seed}) -> {out}")
    return out


def stage_analyze(cfg: PipelineConfig, snapshot_id: str) -> Path:
    enriched = _load_enriched(cfg, snapshot_id)
    strata = stratify.form_strata(enriched, cfg.criteria)
    rows: list[list] = []

    spearman_pairs = cfg.spearman_pairs or [("downloads", "likes")]
    for x_attr, y_attr in spearman_pairs:
        x = [float(getattr(r, x_attr)) for r in enriched]
        y = [float(getattr(r, y_attr)) for r in enriched]
        result = stats.spearman(x, y)
        rows.append(
            [result.method, f"{x_attr}~{y_attr}", f"{result.statistic:.6f}",
             f"{result.p_value:.6g}", result.n[0], "", result.notes]
        )

    compare_specs = cfg.compare_specs or [{"outcome": "downloads", "group": "maintenance_label"}]
    for spec in compare_specs:
        combined, table = stats.stratified_compare(
            enriched, spec["outcome"], spec["group"], strata
        )
        label = f"{spec['outcome']} by {spec['group']}"
        for entry in table:
            if "skipped" in entry:
                rows.append(["MannWhitneyU", _key_str(entry["stratum"]), "", "", "", "", f"{label}: skipped, {entry['skipped']}"])
            else:
                rows.append(
                    ["MannWhitneyU", _key_str(entry["stratum"]), f"{entry['U']:.1f}",
                     f"{entry['p']:.6g}", entry["n"][0], entry["n"][1], f"{label}: {entry['notes']}"]
                )
        rows.append(
            [combined.method, "(combined)", f"{combined.statistic:.6f}",
             f"{combined.p_value:.6g}", combined.n[0], combined.n[1], f"{label}: {combined.notes}"]
        )

    out = _derived_dir(cfg, snapshot_id) / "analysis.csv"
    with out.open("w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(["method", "stratum", "statistic", "p_value", "n1", "n2", "notes"])
        writer.writerows(rows)
    print(f"analyze: {len(rows)} result rows -> {out}")
    return out


def emit_report(cfg: PipelineConfig, snapshot_id: str) -> Path:
    """Assemble the plain-text report from the derived artifacts.

    The body is deterministic for a given (config, seed, snapshot); the
    only varying line is generated_at inside the provenance block.
    """
    store = SnapshotStore(cfg.store_path)
    snap = store.read_snapshot(snapshot_id)
    derived = _derived_dir(cfg, snapshot_id)

    lines: list[str] = []
    lines.append("hubcohort analysis report")
    lines.append("=========================")
    lines.append("Scope: stratified association and longitudinal description;")
    lines.append("no causal estimators are computed.")
    lines.append("")
    lines.append("Population summary")
    lines.append("------------------")
    lines.append(f"snapshot: {snapshot_id}")
    lines.append(f"models: {len(snap.records)}")
    lines.append(f"commits: {len(snap.commit_log)}")
    enriched_path = derived / "enriched.jsonl"
    if enriched_path.exists():
        enriched = _load_enriched(cfg, snapshot_id)
        domains: dict[str, int] = {}
        for record in enriched:
            domains[record.domain] = domains.get(record.domain, 0) + 1
        for domain in sorted(domains):
            lines.append(f"  domain {domain}: {domains[domain]}")
    lines.append("")

    for title, name in (
        ("Strata", "strata.csv"),
        ("Sample manifest", "sample.csv"),
        ("Statistics", "analysis.csv"),
    ):
        lines.append(title)
        lines.append("-" * len(title))
        path = derived / name
        if not path.exists():
            lines.append("(not produced)")
        elif name == "sample.csv":
            with path.open(newline="", encoding="utf-8") as fp:
                sample_rows = list(csv.DictReader(fp))
            per_stratum: dict[str, int] = {}
            for row in sample_rows:
                per_stratum[row["stratum_key"]] = per_stratum.get(row["stratum_key"], 0) + 1
            lines.append(f"total sampled: {len(sample_rows)}")
            for key in sorted(per_stratum):
                lines.append(f"  {key}: {per_stratum[key]}")
        else:
            lines.extend(path.read_text(encoding="utf-8").rstrip("\n").splitlines())
        lines.append("")

    lines.append("Provenance")
    lines.append("----------")
    lines.append(f"config_hash: {cfg.config_hash}")
    lines.append(f"seed: {cfg.seed}")
    lines.append(f"snapshots: {','.join(store.list_snapshots())}")
    lines.append(f"generated_at: {datetime.now(timezone.utc).strftime('%Y-%m-%dT%H:%M:%SZ')}")
    lines.append("")

    cfg.report_path.parent.mkdir(parents=True, exist_ok=True)
    cfg.report_path.write_text("\n".join(lines), encoding="utf-8")
    print(f"report: written to {cfg.report_path}")
    return cfg.report_path


# -- argument parsing ----------------------------------------------------


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise SystemExit(2)


def _build_parser() -> _ArgumentParser:
    parser = _ArgumentParser(prog="hubcohort")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="pipeline TOML config")
        p.add_argument("--snapshot", help="snapshot id (default: latest)")

    p = sub.add_parser("crawl", help="crawl the hub into a new snapshot")
    p.add_argument("--config", required=True)
    p.add_argument("--at", help="snapshot timestamp override (ISO-8601)")
    for name in ("preprocess", "classify", "analyze", "report"):
        common(sub.add_parser(name))
    p = sub.add_parser("stratify")
    common(p)
    p.add_argument("--criteria", help="comma-separated attribute list")
    p = sub.add_parser("sample")
    common(p)
    p.add_argument("--criteria", help="comma-separated attribute list")
    p.add_argument("--seed", type=int)
    p.add_argument("--total-n", type=int, dest="total_n")
    p = sub.add_parser("pipeline", help="run all stages in order")
    p.add_argument("--config", required=True)
    p.add_argument("--at", help="snapshot timestamp override (ISO-8601)")
    p.add_argument("--seed", type=int)
    return parser


def run(argv: Sequence[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    try:
        cfg = PipelineConfig.load(args.config)
        criteria = None
        if getattr(args, "criteria", None):
            criteria = [c.strip() for c in args.criteria.split(",") if c.strip()]

        if args.command == "crawl":
            snapshot_id = stage_crawl(cfg, args.at)
            _log_run(cfg, "crawl", [snapshot_id])
            return 0

        if args.command == "pipeline":
            snapshot_id = stage_crawl(cfg, args.at)
            stage_preprocess(cfg, snapshot_id)
            stage_classify(cfg, snapshot_id)
            stage_stratify(cfg, snapshot_id)
            stage_sample(cfg, snapshot_id, seed=args.seed)
            stage_analyze(cfg, snapshot_id)
            emit_report(cfg, snapshot_id)
            _log_run(cfg, "pipeline", [snapshot_id])
            return 0

        store = SnapshotStore(cfg.store_path)
        snapshot_id = _pick_snapshot(store, args.snapshot)
        if args.command == "preprocess":
            stage_preprocess(cfg, snapshot_id)
        elif args.command == "classify":
            stage_classify(cfg, snapshot_id)
        elif args.command == "stratify":
            stage_stratify(cfg, snapshot_id, criteria)
        elif args.command == "sample":
            stage_sample(cfg, snapshot_id, seed=args.seed, total_n=args.total_n, criteria=criteria)
        elif args.command == "analyze":
            stage_analyze(cfg, snapshot_id)
        elif args.command == "report":
            emit_report(cfg, snapshot_id)
        _log_run(cfg, args.command, [snapshot_id])
        return 0
    except HubCohortError as exc:
        print(f"{args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
