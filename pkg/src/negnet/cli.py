"""Command-line entry point: ingest, topics, annotate, evaluate, audit-rules,
export, stats, prepare-finetune.

Every run that writes an output also writes ``<output>.manifest.json`` with
the config hash, package and topic-space versions, and the replay
fingerprints it touched, so runs are reproducible from manifest + inputs.
All file outputs are written atomically (temp file + rename). API keys are
read only from the ``NEGNET_API_KEY`` environment variable, never flags.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from pathlib import Path

from . import __version__
from .codebook import Subtask, assemble_prompt, load_codebook, triplets_to_json
from .corpus import corpus_stats, filter_corpus, ingest_dir
from .dataset import (
    activity_degrees,
    build_dataset,
    export_csv,
    export_jsonl,
    load_jsonl,
    relation_frequencies,
    topic_distribution,
    yearly_distribution,
)
from .gateway import (
    DEFAULT_EMBED_MODEL,
    Gateway,
    GenerationConfig,
    HttpBackend,
    ReplayBackend,
    ReplayStore,
)
from .metrics import evaluate_records
from .model import RelationType
from .pipeline import Mode, annotate_corpus, records_to_interactions, run_to_records
from .rules import ALL_RULES, Rule, RuleConfig, audit_compliance
from .topics import TopicSpace, advance_stage, build_base_space, extract_topic_words, revise_topic


class UsageError(ValueError):
    pass


_NON_SEMANTIC_KEYS = frozenset({"output", "record", "workers", "concurrency"})


def _write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    handle = tempfile.NamedTemporaryFile(
        "w", encoding="utf-8", dir=path.parent or ".", delete=False, suffix=".tmp"
    )
    try:
        handle.write(text)
        handle.close()
        os.replace(handle.name, path)
    except BaseException:
        handle.close()
        os.unlink(handle.name)
        raise


def _config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()


def _write_manifest(
    output: str | Path,
    command: str,
    config: dict,
    gateway: Gateway | None = None,
    topic_space_version: int | None = None,
    extra: dict | None = None,
) -> None:
    manifest = {
        "command": command,
        "config": config,
        "config_hash": _config_hash(config),
        "package_version": __version__,
        "topic_space_version": topic_space_version,
        "replay_fingerprints": sorted(gateway.seen_fingerprints) if gateway else [],
    }
    if extra:
        manifest.update(extra)
    _write_atomic(
        f"{output}.manifest.json",
        json.dumps(manifest, sort_keys=True, indent=2, default=str) + "\n",
    )


def _require_file(path: str, what: str) -> Path:
    resolved = Path(path)
    if not resolved.exists():
        raise UsageError(f"{what} not found: {path}")
    return resolved


def _gateway_args(parser: argparse.ArgumentParser, need_model: bool = True) -> None:
    group = parser.add_argument_group("model access")
    group.add_argument("--replay", help="replay file with recorded responses (offline)")
    group.add_argument("--endpoint", help="base URL of a live chat-completion endpoint")
    group.add_argument("--model", required=need_model, help="model id sent with every request")
    group.add_argument("--embed-model", default=DEFAULT_EMBED_MODEL, help="embedding model id")
    group.add_argument("--temperature", type=float, default=0.0)
    group.add_argument("--max-length", type=int, default=4096)
    group.add_argument("--timeout", type=float, default=60.0)
    group.add_argument("--max-retries", type=int, default=3)
    group.add_argument("--concurrency", type=int, default=4, help="max in-flight requests")
    group.add_argument("--record", help="append live request/response pairs to this replay file")


def _build_gateway(args: argparse.Namespace) -> Gateway:
    config = GenerationConfig(
        model_id=args.model,
        temperature=args.temperature,
        max_length=args.max_length,
        timeout=args.timeout,
        max_retries=args.max_retries,
    )
    if args.replay:
        if args.record:
            raise UsageError("--record requires a live --endpoint backend")
        backend = ReplayBackend(ReplayStore.load(_require_file(args.replay, "replay file")))
    elif args.endpoint:
        backend = HttpBackend(args.endpoint, api_key=os.environ.get("NEGNET_API_KEY"))
    else:
        raise UsageError("one of --replay or --endpoint is required")
    return Gateway(
        backend,
        config,
        embed_model_id=args.embed_model,
        max_in_flight=args.concurrency,
        record_path=args.record,
    )


def _load_corpus(args: argparse.Namespace) -> list:
    reports = ingest_dir(
        _require_file(args.input, "input directory"), boilerplate=args.boilerplate or ()
    )
    if args.framework:
        reports = filter_corpus(reports, args.framework)
    return reports


def _corpus_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input", required=True, help="directory of report files")
    parser.add_argument(
        "--framework",
        action="append",
        help="framework allow-list (repeatable); default keeps all frameworks",
    )
    parser.add_argument(
        "--boilerplate",
        action="append",
        help="regex for boilerplate paragraphs to drop (repeatable)",
    )


def _load_topic_space(args: argparse.Namespace) -> TopicSpace | None:
    if getattr(args, "topics", None):
        return TopicSpace.load(_require_file(args.topics, "topic space file"))
    return None


def _cmd_ingest(args: argparse.Namespace) -> int:
    reports = _load_corpus(args)
    stats = corpus_stats(reports)
    print(f"reports: {stats.report_count}")
    print(f"mean paragraphs/report: {stats.mean_paragraphs:.2f}")
    print(f"mean words/paragraph: {stats.mean_words_per_paragraph:.2f}")
    for year, count in stats.per_year.items():
        print(f"  {year}: {count}")
    if args.output:
        lines = [
            json.dumps(
                {
                    "report_id": r.report_id,
                    "date": r.date.isoformat(),
                    "meeting": r.meeting,
                    "kind": r.kind.value,
                    "framework": r.framework,
                    "paragraphs": [p.text for p in r.paragraphs],
                },
                sort_keys=True,
                ensure_ascii=False,
            )
            for r in reports
        ]
        _write_atomic(args.output, "\n".join(lines) + ("\n" if lines else ""))
        _write_manifest(args.output, "ingest", _public_config(args))
    return 0


def _cmd_topics_build(args: argparse.Namespace) -> int:
    if args.k <= 0:
        raise UsageError("--k must be > 0")
    gateway = _build_gateway(args)
    reports = [r for r in _load_corpus(args) if r.kind.value == "summary"]
    words = extract_topic_words(reports, gateway)
    space = build_base_space(words, k=args.k, seed=args.seed, gateway=gateway)
    _write_atomic(args.output, space.to_json())
    _write_manifest(args.output, "topics build", _public_config(args), gateway, space.version)
    print(f"built topic space v{space.version}: {len(space.topics)} topics from {len(words)} words")
    return 0


def _cmd_topics_advance(args: argparse.Namespace) -> int:
    space = TopicSpace.load(_require_file(args.space, "topic space file"))
    if args.stage is not None and args.stage != space.version + 1:
        raise UsageError(f"--stage {args.stage} does not follow current version {space.version}")
    gateway = _build_gateway(args)
    reports = [r for r in _load_corpus(args) if r.kind.value == "summary"]
    staged = advance_stage(space, reports, gateway)
    _write_atomic(args.output, staged.to_json())
    _write_manifest(args.output, "topics advance", _public_config(args), gateway, staged.version)
    added = len(staged.topics) - len(space.topics)
    print(f"advanced to v{staged.version}: {added} topics added, {len(staged.topics)} total")
    return 0


def _cmd_topics_revise(args: argparse.Namespace) -> int:
    if args.name is None and args.description is None:
        raise UsageError("nothing to revise: pass --name and/or --description")
    space = TopicSpace.load(_require_file(args.space, "topic space file"))
    revised = revise_topic(space, args.topic_id, name=args.name, description=args.description)
    output = args.output or args.space
    _write_atomic(output, revised.to_json())
    _write_manifest(output, "topics revise", _public_config(args), None, revised.version)
    print(f"revised topic {args.topic_id}")
    return 0


def _cmd_annotate(args: argparse.Namespace) -> int:
    mode = Mode(args.mode.replace("-", "_"))
    example_ids = [e for e in (args.examples.split(",") if args.examples else []) if e]
    if mode is Mode.DATA_SCARCE and not example_ids:
        raise UsageError("data-scarce mode requires --examples with at least one example id")
    rules = frozenset(Rule(r) for r in args.rules.split(",")) if args.rules else ALL_RULES
    topic_space = _load_topic_space(args)
    codebook = load_codebook(_require_file(args.codebook, "codebook"), topic_space)
    gateway = _build_gateway(args)
    reports = _load_corpus(args)

    config = _public_config(args)
    # The default run id identifies the annotation semantics, not the output
    # location or parallelism, so reruns produce byte-identical files.
    semantic = {k: v for k, v in config.items() if k not in _NON_SEMANTIC_KEYS}
    run_id = args.run_id or _config_hash(semantic)[:12]
    examples_by_subtask = {
        subtask: codebook.examples_for(subtask, example_ids) for subtask in Subtask
    }
    run = annotate_corpus(
        reports,
        codebook,
        gateway,
        mode,
        RuleConfig(enabled=rules),
        run_id=run_id,
        examples_by_subtask=examples_by_subtask,
        fuzzy_threshold=args.fuzzy_threshold,
        workers=args.workers,
    )
    rows = run_to_records(run, codebook)
    lines = [json.dumps(row, sort_keys=True, ensure_ascii=False) for row in rows]
    _write_atomic(args.output, "\n".join(lines) + ("\n" if lines else ""))
    run.dataset_path = str(args.output)

    audit_lines = [
        json.dumps(
            {
                "report_id": record.paragraph_ref[0],
                "paragraph_index": record.paragraph_ref[1],
                "presence": record.presence,
                "raw_responses": record.raw_responses,
                "triplets": [[h, t, r.label] for h, t, r in record.triplets],
                "errors": list(record.errors),
                "warnings": list(record.warnings),
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        for record in run.records
    ]
    _write_atomic(f"{args.output}.audit.jsonl", "\n".join(audit_lines) + ("\n" if audit_lines else ""))
    _write_manifest(
        args.output,
        "annotate",
        config,
        gateway,
        topic_space.version if topic_space else None,
        extra={
            "run_id": run_id,
            "paragraphs": len(run.records),
            "presence_true": sum(1 for r in run.records if r.presence),
            "interactions": len(rows),
            "errors": run.errors(),
            "warnings": run.warnings(),
        },
    )
    print(f"run {run_id}: {len(rows)} interactions from {len(run.records)} paragraphs")
    if run.errors():
        print(f"{len(run.errors())} paragraph errors (see manifest)", file=sys.stderr)
    return 0


def _read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _cmd_evaluate(args: argparse.Namespace) -> int:
    pred = _read_jsonl(_require_file(args.pred, "predictions file"))
    gold = _read_jsonl(_require_file(args.gold, "gold file"))
    report = evaluate_records(pred, gold)
    print(report.to_text())
    if args.output:
        _write_atomic(args.output, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        _write_manifest(args.output, "evaluate", _public_config(args))
    return 0


def _cmd_audit_rules(args: argparse.Namespace) -> int:
    rows = _read_jsonl(_require_file(args.annotations, "annotation file"))
    report = audit_compliance(records_to_interactions(rows))
    fractions = report.fractions()
    for rule in (Rule.BIDIRECTIONALITY, Rule.TRANSITIVITY, Rule.DERIVATION):
        print(f"{rule.value}: {fractions[rule] * 100:.2f}")
    print(
        " / ".join(
            f"{fractions[r] * 100:.2f}"
            for r in (Rule.BIDIRECTIONALITY, Rule.TRANSITIVITY, Rule.DERIVATION)
        )
    )
    return 0


def _cmd_export(args: argparse.Namespace) -> int:
    rows = _read_jsonl(_require_file(args.annotations, "annotation file"))
    reports = _load_corpus(args)
    topic_space = _load_topic_space(args)
    dataset = build_dataset(
        rows,
        reports,
        topic_space_version=topic_space.version if topic_space else None,
        include_out_of_space=args.include_out_of_space,
    )
    if args.format == "csv":
        # build then rename for atomicity
        tmp = f"{args.output}.tmp"
        export_csv(dataset, tmp)
        os.replace(tmp, args.output)
    else:
        tmp = f"{args.output}.tmp"
        export_jsonl(dataset, tmp)
        os.replace(tmp, args.output)
    _write_manifest(
        args.output,
        "export",
        _public_config(args),
        None,
        dataset.topic_space_version,
        extra={"rows": len(dataset)},
    )
    print(f"exported {len(dataset)} interactions to {args.output}")
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    dataset = load_jsonl(_require_file(args.dataset, "dataset file"))
    if args.stated_only:
        dataset = dataset.stated_only()
    print(f"interactions: {len(dataset)}")

    print("\nrelation frequencies:")
    frequencies = relation_frequencies(dataset)
    for label, series in frequencies.items():
        total = sum(series.values())
        if args.by_year:
            per_year = " ".join(f"{y}:{n}" for y, n in sorted(series.items()))
            print(f"  {label}: {total}  [{per_year}]")
        else:
            print(f"  {label}: {total}")

    print("\ntopic distribution:")
    for topic, count in sorted(
        topic_distribution(dataset).items(), key=lambda item: (-item[1], str(item[0]))
    ):
        print(f"  {topic if topic is not None else '(none)'}: {count}")

    print("\nactivity degrees (out/in):")
    for entity, out_degree, in_degree in activity_degrees(dataset):
        print(f"  {entity}: {out_degree}/{in_degree}")

    if args.input:
        reports = _load_corpus(args)
        distribution = yearly_distribution(dataset, reports)
        print("\nyearly distribution (reports / interactions):")
        for year, n_reports, n_interactions in zip(
            distribution.years, distribution.report_counts, distribution.interaction_counts
        ):
            print(f"  {year}: {n_reports} / {n_interactions}")
        correlation = (
            "undefined" if distribution.correlation is None else f"{distribution.correlation:.3f}"
        )
        print(f"correlation: {correlation}")
    return 0


def _cmd_prepare_finetune(args: argparse.Namespace) -> int:
    subtasks = [Subtask(s) for s in args.subtasks.split(",")] if args.subtasks else [
        Subtask.PRESENCE,
        Subtask.RELATION,
    ]
    gold_rows = _read_jsonl(_require_file(args.train, "gold annotation file"))
    topic_space = _load_topic_space(args)
    codebook = load_codebook(_require_file(args.codebook, "codebook"), topic_space)
    reports = _load_corpus(args)

    by_paragraph: dict[tuple[str, int], list[dict]] = {}
    for row in gold_rows:
        by_paragraph.setdefault((row["report_id"], int(row["paragraph_index"])), []).append(row)

    pairs = []
    for report in reports:
        if report.kind.value != "daily":
            continue
        for paragraph in report.paragraphs:
            gold = by_paragraph.get((report.report_id, paragraph.index), [])
            triplet_set = set()
            for row in gold:
                relation = RelationType.parse(row["relation"])
                if relation is None:
                    raise UsageError(f"gold file has unknown relation {row['relation']!r}")
                triplet_set.add((row["party1"], row["party2"], relation))
            if Subtask.PRESENCE in subtasks:
                bundle = assemble_prompt(Subtask.PRESENCE, codebook, [], paragraph)
                pairs.append(
                    {
                        "subtask": "presence",
                        "instruction": bundle.rendered,
                        "output": "Yes" if triplet_set else "No",
                    }
                )
            if Subtask.RELATION in subtasks and triplet_set:
                bundle = assemble_prompt(Subtask.RELATION, codebook, [], paragraph)
                pairs.append(
                    {
                        "subtask": "relation",
                        "instruction": bundle.rendered,
                        "output": triplets_to_json(triplet_set),
                    }
                )
    lines = [json.dumps(pair, sort_keys=True, ensure_ascii=False) for pair in pairs]
    _write_atomic(args.output, "\n".join(lines) + ("\n" if lines else ""))
    _write_manifest(args.output, "prepare-finetune", _public_config(args), extra={"pairs": len(pairs)})
    print(f"wrote {len(pairs)} instruction pairs to {args.output}")
    return 0


def _public_config(args: argparse.Namespace) -> dict:
    config = {k: v for k, v in vars(args).items() if k != "func" and v is not None}
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="negnet",
        description="Annotate negotiation reports into a longitudinal interaction network.",
    )
    parser.add_argument("--version", action="version", version=f"negnet {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    p = subparsers.add_parser("ingest", help="parse and validate a report directory")
    _corpus_args(p)
    p.add_argument("--output", help="write the normalized corpus as JSONL")
    p.set_defaults(func=_cmd_ingest)

    p = subparsers.add_parser("topics", help="build and evolve the topic space")
    topic_sub = p.add_subparsers(dest="topics_command", required=True)

    pb = topic_sub.add_parser("build", help="cluster topic words into the base space")
    _corpus_args(pb)
    _gateway_args(pb)
    pb.add_argument("--k", type=int, default=30, help="number of base clusters")
    pb.add_argument("--seed", type=int, default=0)
    pb.add_argument("--output", required=True)
    pb.set_defaults(func=_cmd_topics_build)

    pa = topic_sub.add_parser("advance", help="absorb a new stage of topic words")
    _corpus_args(pa)
    _gateway_args(pa)
    pa.add_argument("--space", required=True, help="current topic space file")
    pa.add_argument("--stage", type=int, help="expected new stage index (validation only)")
    pa.add_argument("--output", required=True)
    pa.set_defaults(func=_cmd_topics_advance)

    pr = topic_sub.add_parser("revise", help="apply a human revision to one topic")
    pr.add_argument("topic_id", help="topic id to revise")
    pr.add_argument("--space", required=True)
    pr.add_argument("--name")
    pr.add_argument("--description")
    pr.add_argument("--output", help="defaults to rewriting --space in place")
    pr.set_defaults(func=_cmd_topics_revise)

    p = subparsers.add_parser("annotate", help="run the annotation pipeline")
    _corpus_args(p)
    _gateway_args(p)
    p.add_argument("--codebook", required=True)
    p.add_argument("--mode", choices=["data-rich", "data-scarce"], required=True)
    p.add_argument("--topics", help="active topic space file")
    p.add_argument("--examples", help="comma-separated example ids for data-scarce prompts")
    p.add_argument("--rules", help="comma-separated closure rules (default: all)")
    p.add_argument("--fuzzy-threshold", type=float, default=0.9)
    p.add_argument("--workers", type=int, default=1, help="parallel paragraphs")
    p.add_argument("--run-id", help="defaults to a hash of the run config")
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_annotate)

    p = subparsers.add_parser("evaluate", help="score predictions against gold")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--output", help="write the machine-readable report here")
    p.set_defaults(func=_cmd_evaluate)

    p = subparsers.add_parser("audit-rules", help="rule-compliance percentages for a run")
    p.add_argument("annotations", help="annotation JSONL file")
    p.set_defaults(func=_cmd_audit_rules)

    p = subparsers.add_parser("export", help="compile and export the dataset")
    _corpus_args(p)
    p.add_argument("--annotations", required=True)
    p.add_argument("--topics", help="topic space file (records its version)")
    p.add_argument("--format", choices=["csv", "jsonl"], default="csv")
    p.add_argument("--include-out-of-space", action="store_true")
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_export)

    p = subparsers.add_parser("stats", help="descriptive statistics of a dataset")
    p.add_argument("--dataset", required=True, help="dataset JSONL from export")
    p.add_argument("--input", help="report directory for yearly report counts")
    p.add_argument("--framework", action="append")
    p.add_argument("--boilerplate", action="append")
    p.add_argument("--by-year", action="store_true")
    p.add_argument("--stated-only", action="store_true")
    p.set_defaults(func=_cmd_stats)

    p = subparsers.add_parser(
        "prepare-finetune", help="emit instruction pairs for supervised tuning"
    )
    _corpus_args(p)
    p.add_argument("--train", required=True, help="gold annotation JSONL")
    p.add_argument("--codebook", required=True)
    p.add_argument("--topics", help="active topic space file")
    p.add_argument("--subtasks", help="comma-separated subset of presence,relation")
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_prepare_finetune)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
